#include "adhdnet/evaluate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "adhdnet/progress.hpp"
#include "adhdnet/serialize.hpp"

namespace adhdnet {
namespace {

using json = nlohmann::json;

json nan_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json counts_json(const ConfusionCounts& c) { return {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}}; }

json metrics_json(const Metrics& m) {
    return {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall}, {"f2", m.f2}};
}

json mean_std_json(const MeanStd& m) { return {{"mean", nan_null(m.mean)}, {"std", nan_null(m.std)}}; }

std::string fold_tag(std::size_t fold) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "fold_%02zu", fold);
    return buf;
}

/// Runs fn(i) for i in [0,n) on up to `workers` threads; the first exception
/// is rethrown after all threads join. Completed indices are marked in done.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn,
                  std::vector<char>& done) {
    done.assign(n, 0);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (;;) {
            {
                std::lock_guard lock(failure_mutex);
                if (failure) return;
            }
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
                done[i] = 1;
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);
}

struct FoldData {
    std::vector<const Trial*> train, test;
    std::vector<std::string> test_subjects;
};

FoldData fold_data(const std::vector<Trial>& trials, const FoldPlan& plan, std::size_t fold) {
    FoldData d;
    d.test_subjects = plan.test_subjects(fold);
    const std::set<std::string> test_ids(d.test_subjects.begin(), d.test_subjects.end());
    for (const auto& t : trials) (test_ids.count(t.subject_id) ? d.test : d.train).push_back(&t);
    for (const Trial* t : d.train)
        if (test_ids.count(t->subject_id)) throw StateError("fold " + std::to_string(fold + 1) + " leaks subject " + t->subject_id);
    if (d.test.empty() || d.train.empty()) throw PlanningError("fold " + std::to_string(fold + 1) + " is empty");
    return d;
}

void assert_disjoint(std::span<const Trial* const> train, const std::vector<std::string>& test_subjects,
                     std::size_t fold) {
    const std::set<std::string> test_ids(test_subjects.begin(), test_subjects.end());
    for (const Trial* t : train)
        if (test_ids.count(t->subject_id))
            throw StateError("fold " + std::to_string(fold + 1) + ": training input contains test subject " +
                             t->subject_id + (t->augmented ? " (augmented copy)" : ""));
}

/// Scores one fitted predictor on the fold's test trials.
void score(Predictor& predictor, std::span<const Trial* const> test, FoldResult& r) {
    const auto probs = predictor.predict(test);
    std::vector<Label> actual, predicted;
    std::vector<double> scores;
    std::map<std::string, std::vector<std::array<double, 2>>> by_subject;
    std::map<std::string, Label> subject_label;
    for (std::size_t i = 0; i < test.size(); ++i) {
        actual.push_back(test[i]->label);
        predicted.push_back(decide(probs[i]));
        scores.push_back(probs[i][0]);
        by_subject[test[i]->subject_id].push_back(probs[i]);
        subject_label[test[i]->subject_id] = test[i]->label;
    }
    r.sample_counts = confusion(predicted, actual);
    r.sample = compute_metrics(r.sample_counts);
    r.sample_auc = roc_auc(scores, actual);
    std::vector<Label> s_actual, s_pred;
    std::vector<double> s_scores;
    for (const auto& [id, p] : by_subject) {
        s_actual.push_back(subject_label.at(id));
        s_pred.push_back(aggregate_subject(p));
        double sum = 0;
        for (const auto& x : p) sum += x[0];
        s_scores.push_back(sum / double(p.size()));
    }
    r.subject_counts = confusion(s_pred, s_actual);
    r.subject = compute_metrics(r.subject_counts);
    r.subject_auc = roc_auc(s_scores, s_actual);
    r.test_trials = test.size();
}

void save_fold_weights(Predictor& predictor, const FoldResult& r, std::uint64_t seed,
                       const std::filesystem::path& path) {
    auto* net = dynamic_cast<NetworkPredictor*>(&predictor);
    if (!net) return;
    TrainingMeta meta{int(r.fold), r.hyperparams.to_json(), seed, net->report().epochs_run};
    save_trained(path, TrainedModel::capture(net->model(), meta));
}

std::size_t epochs_of(const Predictor& p) {
    const auto* net = dynamic_cast<const NetworkPredictor*>(&p);
    return net ? net->report().epochs_run : 0;
}

struct Tuned {
    HyperParams hp;
    std::optional<double> g;
};

Tuned tune_fold(const Learner& learner, std::span<const Trial* const> train, const SearchSpace& space,
                const ProtocolSettings& settings, std::size_t fold) {
    if (!settings.tune) return {settings.fixed, std::nullopt};
    TuneSettings ts = settings.tuning;
    ts.seed = derive_seed(settings.seed, 0x700 + fold);
    if (settings.out_dir) ts.log_path = *settings.out_dir / "bo" / (fold_tag(fold + 1) + ".jsonl");
    const auto r = tune_hyperparams(learner, train, space, ts, settings.inner);
    return {r.best, r.search.best_g};
}

void write_partial(const ProtocolSettings& settings, const json& partial) {
    if (!settings.out_dir) return;
    write_file_atomic(*settings.out_dir / "report.partial.json", partial.dump(2) + "\n");
}

EvalReport make_report(std::string mode, std::string variant, const ProtocolSettings& settings,
                       const json& description) {
    EvalReport r;
    r.mode = std::move(mode);
    r.variant = std::move(variant);
    r.seed = settings.seed;
    r.config_hash = config_hash({{"mode", r.mode}, {"model", description}, {"protocol", settings.to_json()}});
    return r;
}

}  // namespace

// --- settings and report serialisation ----------------------------------------

json ProtocolSettings::to_json() const {
    return {{"folds", folds},       {"seed", seed},           {"tune", tune},
            {"fixed", fixed.to_json()}, {"tuning", tuning.to_json()}, {"inner", inner.to_json()},
            {"final_fit", final_fit.to_json()}};
}

ProtocolSettings ProtocolSettings::from_json(const json& j) {
    ProtocolSettings s;
    s.folds = j.value("folds", s.folds);
    s.seed = j.value("seed", s.seed);
    s.tune = j.value("tune", s.tune);
    if (j.contains("fixed")) s.fixed = HyperParams::from_json(j.at("fixed"));
    if (j.contains("tuning")) s.tuning = TuneSettings::from_json(j.at("tuning"));
    if (j.contains("inner")) s.inner = TrainSettings::from_json(j.at("inner"));
    if (j.contains("final_fit")) s.final_fit = TrainSettings::from_json(j.at("final_fit"));
    return s;
}

json FoldResult::to_json() const {
    return {{"fold", fold},
            {"test_subjects", test_subjects},
            {"train_trials", train_trials},
            {"test_trials", test_trials},
            {"hyperparams", hyperparams.to_json()},
            {"tuned_g", tuned_g ? json(*tuned_g) : json(nullptr)},
            {"epochs", epochs},
            {"sample", {{"counts", counts_json(sample_counts)}, {"metrics", metrics_json(sample)}, {"auc", nan_null(sample_auc)}}},
            {"subject", {{"counts", counts_json(subject_counts)}, {"metrics", metrics_json(subject)}, {"auc", nan_null(subject_auc)}}}};
}

MeanStd mean_std(std::span<const double> values) {
    MeanStd m;
    std::vector<double> finite;
    for (double v : values)
        if (std::isfinite(v)) finite.push_back(v);
    if (finite.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    m.mean = std::accumulate(finite.begin(), finite.end(), 0.0) / double(finite.size());
    if (finite.size() > 1) {
        double ss = 0;
        for (double v : finite) ss += (v - m.mean) * (v - m.mean);
        m.std = std::sqrt(ss / double(finite.size() - 1));
    }
    return m;
}

namespace {
template <typename F>
MeanStd over_folds(const std::vector<FoldResult>& folds, F f) {
    std::vector<double> v;
    for (const auto& r : folds) v.push_back(f(r));
    return mean_std(v);
}
}  // namespace

MeanStd EvalReport::sample_accuracy() const { return over_folds(folds, [](auto& r) { return r.sample.accuracy; }); }
MeanStd EvalReport::subject_accuracy() const { return over_folds(folds, [](auto& r) { return r.subject.accuracy; }); }
MeanStd EvalReport::sample_f2() const { return over_folds(folds, [](auto& r) { return r.sample.f2; }); }
MeanStd EvalReport::subject_f2() const { return over_folds(folds, [](auto& r) { return r.subject.f2; }); }
MeanStd EvalReport::sample_auc() const { return over_folds(folds, [](auto& r) { return r.sample_auc; }); }

json EvalReport::to_json() const {
    json f = json::array();
    for (const auto& r : folds) f.push_back(r.to_json());
    return {{"mode", mode},
            {"variant", variant},
            {"combo_id", combo_id},
            {"combo", combo_label},
            {"seed", seed},
            {"config_hash", config_hash},
            {"parameter_count", parameter_count},
            {"folds", f},
            {"average",
             {{"sample_accuracy", mean_std_json(sample_accuracy())},
              {"subject_accuracy", mean_std_json(subject_accuracy())},
              {"sample_f2", mean_std_json(sample_f2())},
              {"subject_f2", mean_std_json(subject_f2())},
              {"sample_auc", mean_std_json(sample_auc())}}}};
}

std::string EvalReport::to_text() const {
    std::ostringstream out;
    out << std::fixed << std::setprecision(4);
    out << variant << " | mode " << mode;
    if (combo_id) out << " | " << combo_label;
    out << " | seed " << seed << " | config " << config_hash << '\n';
    out << std::left << std::setw(6) << "fold" << std::right << std::setw(10) << "smp acc" << std::setw(10)
        << "smp F2" << std::setw(10) << "sub acc" << std::setw(10) << "sub F2" << "  test subjects\n";
    for (const auto& r : folds) {
        out << std::left << std::setw(6) << r.fold << std::right << std::setw(10) << r.sample.accuracy << std::setw(10)
            << r.sample.f2 << std::setw(10) << r.subject.accuracy << std::setw(10) << r.subject.f2 << "  ";
        for (std::size_t i = 0; i < r.test_subjects.size(); ++i) out << (i ? "," : "") << r.test_subjects[i];
        out << '\n';
    }
    auto ms = [&](const MeanStd& m) {
        std::ostringstream s;
        s << std::fixed << std::setprecision(4) << m.mean << " +/- " << m.std;
        return s.str();
    };
    out << "sample accuracy  " << ms(sample_accuracy()) << '\n'
        << "sample F2        " << ms(sample_f2()) << '\n'
        << "subject accuracy " << ms(subject_accuracy()) << '\n'
        << "subject F2       " << ms(subject_f2()) << '\n';
    return out.str();
}

json DaReport::to_json() const {
    json c = json::array();
    for (const auto& r : combos) c.push_back(r.to_json());
    return {{"combos", c}, {"best_combo", best_combo}, {"worst_combo", worst_combo}};
}

std::string DaReport::to_text() const {
    std::ostringstream out;
    out << std::fixed << std::setprecision(4);
    out << std::left << std::setw(34) << "combo" << std::right << std::setw(18) << "sample acc" << std::setw(18)
        << "subject acc" << std::setw(18) << "subject F2" << '\n';
    for (const auto& r : combos) {
        const auto sa = r.sample_accuracy(), ja = r.subject_accuracy(), jf = r.subject_f2();
        std::ostringstream a, b, c;
        a << std::fixed << std::setprecision(4) << sa.mean << "+/-" << sa.std;
        b << std::fixed << std::setprecision(4) << ja.mean << "+/-" << ja.std;
        c << std::fixed << std::setprecision(4) << jf.mean << "+/-" << jf.std;
        out << std::left << std::setw(34) << r.combo_label << std::right << std::setw(18) << a.str() << std::setw(18)
            << b.str() << std::setw(18) << c.str() << '\n';
    }
    out << "best combo C" << best_combo << ", worst combo C" << worst_combo << '\n';
    return out.str();
}

std::string config_hash(const json& config) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(stable_hash(config.dump())));
    return buf;
}

// --- protocols --------------------------------------------------------------

namespace {

// A missing description is filled in from the learner when it is a network.
json describe(const Learner& learner, const json& given) {
    if (given.is_object()) return given;
    if (const auto* net = dynamic_cast<const NetworkLearner*>(&learner))
        return {{"variant", "model"},
                {"config", net->config().to_json()},
                {"parameter_count", build_model(net->config())->parameter_count()}};
    return json::object();
}

}  // namespace

EvalReport evaluate_no_da(const Dataset& dataset, const Learner& learner, const SearchSpace& space,
                          const ProtocolSettings& settings, const json& description) {
    const json model_description = describe(learner, description);
    const auto trials = dataset.trials();
    const auto plan = plan_folds(dataset, settings.folds, derive_seed(settings.seed, 0xf01d));
    EvalReport report = make_report("no-da", model_description.value("variant", "model"), settings, model_description);
    report.parameter_count = model_description.value("parameter_count", std::size_t{0});
    report.folds.resize(settings.folds);
    std::vector<char> done;
    try {
        parallel_for(settings.folds, settings.workers, [&](std::size_t fold) {
            emit_progress({{"event", "fold_start"}, {"fold", fold + 1}, {"mode", "no-da"}});
            const FoldData d = fold_data(trials, plan, fold);
            const Tuned tuned = tune_fold(learner, d.train, space, settings, fold);
            FoldResult& r = report.folds[fold];
            r.fold = fold + 1;
            r.test_subjects = d.test_subjects;
            r.train_trials = d.train.size();
            r.hyperparams = tuned.hp;
            r.tuned_g = tuned.g;
            assert_disjoint(d.train, d.test_subjects, fold);
            const std::uint64_t fit_seed = derive_seed(settings.seed, 0x100 + fold);
            auto predictor = learner.fit(d.train, tuned.hp, settings.final_fit, fit_seed);
            r.epochs = epochs_of(*predictor);
            score(*predictor, d.test, r);
            if (settings.out_dir)
                save_fold_weights(*predictor, r, fit_seed, *settings.out_dir / "weights" / (fold_tag(fold + 1) + ".adnw"));
            emit_progress({{"event", "fold_end"},
                           {"fold", fold + 1},
                           {"sample_accuracy", r.sample.accuracy},
                           {"subject_accuracy", r.subject.accuracy}});
        }, done);
    } catch (...) {
        json partial = json::array();
        for (std::size_t i = 0; i < done.size(); ++i)
            if (done[i]) partial.push_back(report.folds[i].to_json());
        write_partial(settings, {{"mode", "no-da"}, {"completed_folds", partial}});
        throw;
    }
    return report;
}

DaReport evaluate_with_da(const Dataset& dataset, const Learner& learner, const SearchSpace& space,
                          std::span<const AugCombo> combos, const ProtocolSettings& settings,
                          const json& description) {
    if (combos.empty()) throw ArgumentError("evaluate_with_da needs at least one combo");
    const auto trials = dataset.trials();
    const auto plan = plan_folds(dataset, settings.folds, derive_seed(settings.seed, 0xf01d));
    const json model_description = describe(learner, description);
    DaReport out;
    for (const auto& c : combos) {
        EvalReport r = make_report("da", model_description.value("variant", "model"), settings,
                                   {{"model", model_description}, {"combo", c.to_json()}});
        r.combo_id = c.id;
        r.combo_label = c.label();
        r.parameter_count = model_description.value("parameter_count", std::size_t{0});
        r.folds.resize(settings.folds);
        out.combos.push_back(std::move(r));
    }
    std::vector<char> done;
    try {
        parallel_for(settings.folds, settings.workers, [&](std::size_t fold) {
            emit_progress({{"event", "fold_start"}, {"fold", fold + 1}, {"mode", "da"}});
            const FoldData d = fold_data(trials, plan, fold);
            const Tuned tuned = tune_fold(learner, d.train, space, settings, fold);
            const std::set<std::string> train_ids = [&] {
                std::set<std::string> s;
                for (const Trial* t : d.train) s.insert(t->subject_id);
                return s;
            }();
            for (std::size_t ci = 0; ci < combos.size(); ++ci) {
                const auto& combo = combos[ci];
                const std::uint64_t aug_seed = derive_seed(derive_seed(settings.seed, 0x200 + fold), std::uint64_t(combo.id));
                const auto expanded = augment_training_set(d.train, combo, aug_seed);
                std::vector<const Trial*> train;
                for (const auto& t : expanded) {
                    if (t.augmented && !train_ids.count(t.subject_id))
                        throw StateError("augmented trial from non-training subject " + t.subject_id);
                    train.push_back(&t);
                }
                assert_disjoint(train, d.test_subjects, fold);
                FoldResult& r = out.combos[ci].folds[fold];
                r.fold = fold + 1;
                r.test_subjects = d.test_subjects;
                r.train_trials = train.size();
                r.hyperparams = tuned.hp;
                r.tuned_g = tuned.g;
                const std::uint64_t fit_seed = derive_seed(aug_seed, 0x100);
                auto predictor = learner.fit(train, tuned.hp, settings.final_fit, fit_seed);
                r.epochs = epochs_of(*predictor);
                score(*predictor, d.test, r);
                if (settings.out_dir) {
                    char name[32];
                    std::snprintf(name, sizeof name, "_c%02d.adnw", combo.id);
                    save_fold_weights(*predictor, r, fit_seed, *settings.out_dir / "weights" / (fold_tag(fold + 1) + name));
                }
                emit_progress({{"event", "combo_end"},
                               {"fold", fold + 1},
                               {"combo", combo.id},
                               {"subject_accuracy", r.subject.accuracy}});
            }
            emit_progress({{"event", "fold_end"}, {"fold", fold + 1}});
        }, done);
    } catch (...) {
        json partial = json::array();
        for (std::size_t i = 0; i < done.size(); ++i) {
            if (!done[i]) continue;
            for (const auto& c : out.combos) partial.push_back({{"combo", c.combo_id}, {"fold", c.folds[i].to_json()}});
        }
        write_partial(settings, {{"mode", "da"}, {"completed", partial}});
        throw;
    }
    auto key = [](const EvalReport& r) { return std::make_pair(r.subject_accuracy().mean, r.sample_accuracy().mean); };
    std::size_t best = 0, worst = 0;
    for (std::size_t i = 1; i < out.combos.size(); ++i) {
        if (key(out.combos[i]) > key(out.combos[best])) best = i;
        if (key(out.combos[i]) < key(out.combos[worst])) worst = i;
    }
    out.best_combo = out.combos[best].combo_id;
    out.worst_combo = out.combos[worst].combo_id;
    return out;
}

std::string AblationFlags::label() const {
    if (use_inxception && use_se) return "ADHDeepNet";
    if (use_inxception) return "ADHDeepNet-noSE";
    if (use_se) return "ADHDeepNet-noInXception";
    return "EEGNet";
}

std::vector<AblationFlags> ablation_variants() { return {{true, true}, {true, false}, {false, true}, {false, false}}; }

EvalReport ablation_run(const Dataset& dataset, const ModelConfig& base, AblationFlags flags, const SearchSpace& space,
                        const ProtocolSettings& settings) {
    ModelConfig config = base;
    config.use_inxception = flags.use_inxception;
    config.use_se = flags.use_se;
    NetworkLearner learner(config);
    const json description{{"variant", flags.label()},
                           {"config", config.to_json()},
                           {"parameter_count", build_model(config)->parameter_count()}};
    ProtocolSettings s = settings;
    if (s.out_dir) s.out_dir = *s.out_dir / flags.label();
    EvalReport r = evaluate_no_da(dataset, learner, space, s, description);
    r.mode = "ablation";
    return r;
}

}  // namespace adhdnet
