#include "adhdnet/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "adhdnet/augment.hpp"
#include "adhdnet/diagnostics.hpp"
#include "adhdnet/errors.hpp"
#include "adhdnet/learner.hpp"
#include "adhdnet/optimize.hpp"
#include "adhdnet/progress.hpp"
#include "adhdnet/serialize.hpp"

namespace adhdnet {

using json = nlohmann::json;
namespace fs = std::filesystem;

json RunConfig::to_json() const {
    return {{"command", command},   {"data", data},
            {"seed", seed},         {"workers", workers},
            {"out", out},           {"model", model},
            {"mode", mode},         {"protocol", protocol.to_json()},
            {"combos", combos},     {"explain", explain.to_json()},
            {"weights", weights},   {"synth", {{"subjects", subjects}, {"seconds", seconds}, {"separation", separation}}}};
}

RunConfig RunConfig::from_json(const json& j) {
    if (!j.is_object()) throw ArgumentError("run config must be a JSON object");
    RunConfig c;
    c.command = j.value("command", c.command);
    c.data = j.value("data", c.data);
    c.seed = j.value("seed", c.seed);
    c.workers = j.value("workers", c.workers);
    c.out = j.value("out", c.out);
    if (j.contains("model")) c.model = j.at("model");
    c.mode = j.value("mode", c.mode);
    if (j.contains("protocol")) c.protocol = ProtocolSettings::from_json(j.at("protocol"));
    if (j.contains("combos")) c.combos = j.at("combos");
    if (j.contains("explain")) c.explain = ExplainSettings::from_json(j.at("explain"));
    c.weights = j.value("weights", c.weights);
    if (j.contains("synth")) {
        const auto& s = j.at("synth");
        c.subjects = s.value("subjects", c.subjects);
        c.seconds = s.value("seconds", c.seconds);
        c.separation = s.value("separation", c.separation);
    }
    return c;
}

ModelConfig resolve_model(const json& spec) {
    auto preset = [](const std::string& name) {
        if (name == "full") return ModelConfig{};
        if (name == "desk") return ModelConfig::desk();
        throw ArgumentError("unknown model preset '" + name + "' (expected full or desk)");
    };
    if (spec.is_null()) return ModelConfig{};
    if (spec.is_string()) return preset(spec.get<std::string>());
    if (!spec.is_object()) throw ArgumentError("model must be a preset name or an object");
    json merged = preset(spec.value("preset", std::string("full"))).to_json();
    json overrides = spec;
    overrides.erase("preset");
    merged.merge_patch(overrides);
    ModelConfig c = ModelConfig::from_json(merged);
    c.validate();
    return c;
}

SyntheticSpec parse_synth_spec(const std::string& spec, std::uint64_t seed) {
    constexpr std::string_view prefix = "synth:";
    if (spec.rfind(prefix, 0) != 0) throw ArgumentError("synthetic source must start with 'synth:'");
    SyntheticSpec s;
    s.seed = seed;
    std::size_t total = 2 * s.subjects_per_class;
    std::stringstream in(spec.substr(prefix.size()));
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item.empty()) continue;
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw ArgumentError("synth spec item '" + item + "' is not key=value");
        const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
        try {
            if (key == "subjects") total = std::stoul(value);
            else if (key == "seconds") s.seconds_per_subject = std::stod(value);
            else if (key == "separation") s.separation = std::stod(value);
            else throw ArgumentError("unknown synth spec key '" + key + "'");
        } catch (const std::logic_error& e) {
            if (dynamic_cast<const ArgumentError*>(&e)) throw;
            throw ArgumentError("bad value for synth spec key '" + key + "': " + value);
        }
    }
    if (total < 2 || total % 2) throw ArgumentError("synth subjects must be a positive even number");
    s.subjects_per_class = total / 2;
    return s;
}

Dataset resolve_data(const std::string& source, std::uint64_t seed) {
    if (source.empty()) throw ArgumentError("no data source given (--data)");
    if (source.rfind("synth:", 0) == 0) return generate_synthetic(parse_synth_spec(source, seed));
    fs::path p(source);
    if (fs::is_directory(p)) p /= "manifest.json";
    if (!fs::exists(p)) throw ArgumentError("data source not found: " + source);
    return load_dataset(p);
}

namespace {

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

fs::path require_out(const RunConfig& c) {
    if (c.out.empty()) throw ArgumentError("--out is required");
    fs::create_directories(c.out);
    return c.out;
}

std::vector<const Trial*> pointers(const std::vector<Trial>& trials) {
    std::vector<const Trial*> p;
    for (const auto& t : trials) p.push_back(&t);
    return p;
}

json model_description(const ModelConfig& config) {
    const auto model = build_model(config);
    AblationFlags flags{config.use_inxception, config.use_se};
    return {{"variant", flags.label()}, {"config", config.to_json()}, {"parameter_count", model->parameter_count()}};
}

ProtocolSettings protocol_for(const RunConfig& c) {
    ProtocolSettings p = c.protocol;
    p.seed = c.seed;
    p.workers = c.workers;
    p.out_dir = fs::path(c.out);
    return p;
}

void run_synth(const RunConfig& c) {
    const fs::path out = require_out(c);
    SyntheticSpec s;
    if (c.subjects < 2 || c.subjects % 2) throw ArgumentError("--subjects must be a positive even number");
    s.subjects_per_class = c.subjects / 2;
    s.seconds_per_subject = c.seconds;
    s.separation = c.separation;
    s.seed = c.seed;
    const auto manifest = write_dataset(generate_synthetic(s), out);
    emit_progress({{"event", "synth_written"}, {"manifest", manifest.string()}});
}

void run_train(const RunConfig& c) {
    const fs::path out = require_out(c);
    const Dataset data = resolve_data(c.data, c.seed);
    const auto trials = data.trials();
    const auto ptrs = pointers(trials);
    const ModelConfig config = resolve_model(c.model);
    const std::uint64_t fit_seed = derive_seed(c.seed, 0x7a1);
    NetworkLearner learner(config);
    auto predictor = learner.fit(ptrs, c.protocol.fixed, c.protocol.final_fit, fit_seed);
    auto& net = dynamic_cast<NetworkPredictor&>(*predictor);
    TrainingMeta meta{-1, c.protocol.fixed.to_json(), fit_seed, net.report().epochs_run};
    save_trained(out / "model.adnw", TrainedModel::capture(net.model(), meta));
    write_json(out / "train_report.json", {{"epochs", net.report().epochs_run},
                                           {"best_epoch", net.report().best_epoch},
                                           {"train_loss", net.report().train_loss},
                                           {"validation_loss", net.report().validation_loss},
                                           {"parameter_count", net.model().parameter_count()},
                                           {"trials", ptrs.size()}});
}

void run_tune(const RunConfig& c) {
    const fs::path out = require_out(c);
    const Dataset data = resolve_data(c.data, c.seed);
    const auto trials = data.trials();
    const auto ptrs = pointers(trials);
    NetworkLearner learner(resolve_model(c.model));
    const auto space = SearchSpace::hyperparameter_default();
    TuneSettings ts = c.protocol.tuning;
    ts.seed = c.seed;
    ts.log_path = out / "bo_log.jsonl";
    const auto r = tune_hyperparams(learner, ptrs, space, ts, c.protocol.inner);
    json history = json::array();
    for (const auto& o : r.search.history.observations)
        history.push_back({{"point", space.describe_point(o.point)}, {"g", o.g}, {"failed", o.failed}});
    write_json(out / "tune.json", {{"best", r.best.to_json()},
                                   {"best_g", r.search.best_g},
                                   {"best_trace", r.search.best_trace},
                                   {"history", history},
                                   {"half1", r.half1},
                                   {"half2", r.half2}});
}

void run_evaluate(const RunConfig& c, const std::string& mode) {
    const fs::path out = require_out(c);
    const Dataset data = resolve_data(c.data, c.seed);
    const ModelConfig config = resolve_model(c.model);
    const auto space = SearchSpace::hyperparameter_default();
    const ProtocolSettings p = protocol_for(c);
    json report;
    std::string text;
    if (mode == "no-da") {
        NetworkLearner learner(config);
        const auto r = evaluate_no_da(data, learner, space, p, model_description(config));
        report = r.to_json();
        text = r.to_text();
    } else if (mode == "da") {
        NetworkLearner learner(config);
        const auto combos = select_combos(c.combos);
        const auto r = evaluate_with_da(data, learner, space, combos, p, model_description(config));
        report = r.to_json();
        report["mode"] = "da";
        text = r.to_text();
    } else if (mode == "ablation") {
        json variants = json::array();
        std::ostringstream t;
        for (const auto& flags : ablation_variants()) {
            const auto r = ablation_run(data, config, flags, space, p);
            variants.push_back(r.to_json());
            t << r.to_text() << '\n';
        }
        report = {{"mode", "ablation"}, {"variants", variants}};
        text = t.str();
    } else {
        throw ArgumentError("--mode must be no-da, da or ablation");
    }
    write_json(out / "report.json", report);
    write_file_atomic(out / "report.txt", text);
    fs::remove(out / "report.partial.json");
}

void run_explain_cmd(const RunConfig& c) {
    const fs::path out = require_out(c);
    if (c.weights.empty()) throw ArgumentError("--weights is required");
    if (!fs::exists(c.weights)) throw ArgumentError("weights file not found: " + c.weights);
    auto model = load_trained(c.weights).instantiate();
    const Dataset data = resolve_data(c.data, c.seed);
    const auto trials = data.trials();
    const auto ptrs = pointers(trials);
    ExplainSettings s = c.explain;
    s.seed = c.seed;
    write_json(out / "explain.json", run_explain(*model, ptrs, s, out));
}

/// Tees progress events to stderr and out/log.jsonl.
class EventLog {
public:
    EventLog(bool quiet) : quiet_(quiet) {}
    void open(const fs::path& path) {
        std::lock_guard lock(mutex_);
        file_.open(path, std::ios::app);
    }
    void operator()(const json& event) {
        const std::string line = event.dump();
        std::lock_guard lock(mutex_);
        if (!quiet_) std::cerr << line << '\n';
        if (file_) file_ << line << '\n' << std::flush;
    }

private:
    bool quiet_;
    std::mutex mutex_;
    std::ofstream file_;
};

}  // namespace

void execute(const RunConfig& c) {
    if (c.workers == 0) throw ArgumentError("--workers must be at least 1");
    if (!c.out.empty()) {
        fs::create_directories(c.out);
        write_json(fs::path(c.out) / "run_config.json", c.to_json());
    }
    if (c.command == "synth") run_synth(c);
    else if (c.command == "train") run_train(c);
    else if (c.command == "tune") run_tune(c);
    else if (c.command == "evaluate") run_evaluate(c, c.mode);
    else if (c.command == "ablate") run_evaluate(c, "ablation");
    else if (c.command == "explain") run_explain_cmd(c);
    else throw ArgumentError("unknown command '" + c.command + "'");
}

namespace {

struct Flags {
    std::optional<std::string> config, data, out, model, mode, weights, combos, optimizer;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers, subjects, folds, iterations, initial, epochs, patience, batch, max_trials,
        tsne_iterations;
    std::optional<double> seconds, separation, lr, dropout, norm_rate, perplexity;
    bool no_tune = false, quiet = false;
};

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ArgumentError("cannot read " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ArgumentError("malformed JSON in " + path + ": " + e.what());
    }
}

RunConfig build_config(const std::string& command, const Flags& f) {
    RunConfig c;
    if (f.config) c = RunConfig::from_json(load_json_file(*f.config));
    c.command = command;
    if (f.seed) {
        c.seed = *f.seed;
    } else if (!f.config) {
        if (const char* env = std::getenv("ADHDNET_SEED")) {
            try {
                c.seed = std::stoull(env);
            } catch (const std::exception&) {
                throw ArgumentError(std::string("ADHDNET_SEED is not an integer: ") + env);
            }
        }
    }
    if (f.data) c.data = *f.data;
    if (f.out) c.out = *f.out;
    if (f.workers) c.workers = *f.workers;
    if (f.model) {
        if (*f.model == "full" || *f.model == "desk") c.model = *f.model;
        else c.model = load_json_file(*f.model);
    }
    if (f.mode) c.mode = *f.mode;
    if (f.weights) c.weights = *f.weights;
    if (f.combos) {
        const std::string& s = *f.combos;
        if (s == "all") {
            c.combos = nullptr;
        } else if (fs::exists(s)) {
            c.combos = load_json_file(s);
        } else {
            json ids = json::array();
            std::stringstream in(s);
            std::string item;
            while (std::getline(in, item, ',')) {
                try {
                    ids.push_back(std::stoi(item));
                } catch (const std::exception&) {
                    throw ArgumentError("--combos expects ids like 1,4,10, 'all', or a JSON file");
                }
            }
            c.combos = ids;
        }
    }
    if (f.subjects) c.subjects = *f.subjects;
    if (f.seconds) c.seconds = *f.seconds;
    if (f.separation) c.separation = *f.separation;
    if (f.folds) c.protocol.folds = *f.folds;
    if (f.no_tune) c.protocol.tune = false;
    if (f.iterations) c.protocol.tuning.iterations = *f.iterations;
    if (f.initial) c.protocol.tuning.initial_points = *f.initial;
    if (f.epochs) c.protocol.final_fit.max_epochs = *f.epochs;
    if (f.patience) c.protocol.final_fit.patience = *f.patience;
    json hp = c.protocol.fixed.to_json();
    if (f.lr) hp["learning_rate"] = *f.lr;
    if (f.dropout) hp["dropout_rate"] = *f.dropout;
    if (f.norm_rate) hp["norm_rate"] = *f.norm_rate;
    if (f.batch) hp["batch_size"] = *f.batch;
    if (f.optimizer) hp["optimizer"] = *f.optimizer;
    c.protocol.fixed = HyperParams::from_json(hp);
    if (f.max_trials) c.explain.max_trials = *f.max_trials;
    if (f.perplexity) c.explain.tsne.perplexity = *f.perplexity;
    if (f.tsne_iterations) c.explain.tsne.iterations = *f.tsne_iterations;
    return c;
}

bool is_user_error(const std::exception& e) {
    return dynamic_cast<const ArgumentError*>(&e) || dynamic_cast<const IngestionError*>(&e) ||
           dynamic_cast<const FormatError*>(&e) || dynamic_cast<const ConstructionError*>(&e) ||
           dynamic_cast<const PlanningError*>(&e) || dynamic_cast<const DimensionError*>(&e);
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"ADHD EEG classification workbench"};
    app.require_subcommand(1);
    Flags f;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", f.config, "JSON run config; flags override its values");
        sub->add_option("--seed", f.seed, "Root seed (falls back to ADHDNET_SEED)");
        sub->add_option("--out", f.out, "Output directory");
        sub->add_flag("--quiet", f.quiet, "Suppress progress events on stderr");
    };
    auto data_opts = [&](CLI::App* sub) {
        sub->add_option("--data", f.data, "Manifest path, dataset directory, or synth:subjects=N,seconds=S,separation=X");
        sub->add_option("--model", f.model, "Model preset (full, desk) or JSON file with overrides");
    };
    auto hp_opts = [&](CLI::App* sub) {
        sub->add_option("--lr", f.lr, "Learning rate");
        sub->add_option("--dropout", f.dropout, "Dropout rate");
        sub->add_option("--norm-rate", f.norm_rate, "Max-norm bound on classifier rows");
        sub->add_option("--batch", f.batch, "Batch size");
        sub->add_option("--optimizer", f.optimizer, "Adam, SGDMomentum or RMSProp");
        sub->add_option("--epochs", f.epochs, "Maximum epochs for final fits");
        sub->add_option("--patience", f.patience, "Early-stopping patience");
    };
    auto bo_opts = [&](CLI::App* sub) {
        sub->add_option("--iterations", f.iterations, "BO iterations");
        sub->add_option("--initial", f.initial, "Initial design size");
    };

    auto* synth = app.add_subcommand("synth", "Generate a synthetic EEG dataset");
    common(synth);
    synth->add_option("--subjects", f.subjects, "Total subjects, split evenly between classes");
    synth->add_option("--seconds", f.seconds, "Recording length per subject");
    synth->add_option("--separation", f.separation, "Class separation in [0,1]");

    auto* train = app.add_subcommand("train", "Train one model on the whole dataset");
    common(train);
    data_opts(train);
    hp_opts(train);

    auto* tune_cmd = app.add_subcommand("tune", "Bayesian hyperparameter search on the whole dataset");
    common(tune_cmd);
    data_opts(tune_cmd);
    bo_opts(tune_cmd);
    tune_cmd->add_option("--workers", f.workers, "Worker threads");

    auto* evaluate = app.add_subcommand("evaluate", "Cross-subject evaluation");
    auto* ablate = app.add_subcommand("ablate", "Evaluate the four block-ablation variants");
    for (auto* sub : {evaluate, ablate}) {
        common(sub);
        data_opts(sub);
        hp_opts(sub);
        bo_opts(sub);
        sub->add_option("--workers", f.workers, "Fold-level worker threads");
        sub->add_option("--folds", f.folds, "Number of outer folds");
        sub->add_flag("--no-tune", f.no_tune, "Use the fixed hyperparameters instead of BO");
    }
    evaluate->add_option("--mode", f.mode, "no-da, da or ablation")
        ->check(CLI::IsMember({"no-da", "da", "ablation"}));
    evaluate->add_option("--combos", f.combos, "Augmentation combos: 'all', ids like 1,4,10, or a JSON file");

    auto* explain = app.add_subcommand("explain", "Filter spectra, spatial maps and t-SNE of a trained model");
    common(explain);
    data_opts(explain);
    explain->add_option("--weights", f.weights, "Weight file written by train or evaluate");
    explain->add_option("--max-trials", f.max_trials, "Trials fed to t-SNE");
    explain->add_option("--perplexity", f.perplexity, "t-SNE perplexity");
    explain->add_option("--tsne-iterations", f.tsne_iterations, "t-SNE iterations");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    EventLog log(f.quiet);
    try {
        const std::string command = app.get_subcommands().front()->get_name();
        const RunConfig config = build_config(command, f);
        if (!config.out.empty()) {
            fs::create_directories(config.out);
            log.open(fs::path(config.out) / "log.jsonl");
        }
        set_progress_sink([&log](const json& e) { log(e); });
        execute(config);
        for (auto& w : take_warnings()) log({{"event", "warning"}, {"message", w}});
        set_progress_sink(nullptr);
        return 0;
    } catch (const std::exception& e) {
        for (auto& w : take_warnings()) log({{"event", "warning"}, {"message", w}});
        set_progress_sink(nullptr);
        const bool user = is_user_error(e) || dynamic_cast<const fs::filesystem_error*>(&e);
        std::cerr << "error: " << e.what() << '\n';
        return user ? 1 : 2;
    }
}

}  // namespace adhdnet
