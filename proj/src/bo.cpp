#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "adhdnet/diagnostics.hpp"
#include "adhdnet/metrics.hpp"
#include "adhdnet/optimize.hpp"
#include "adhdnet/progress.hpp"

namespace adhdnet {
namespace {

using json = nlohmann::json;

constexpr std::size_t kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71};
constexpr std::size_t kMaxCategoricalCombos = 256;

double radical_inverse(std::size_t index, std::size_t base) {
    double result = 0.0, f = 1.0 / double(base);
    while (index > 0) {
        result += f * double(index % base);
        index /= base;
        f /= double(base);
    }
    return result;
}

// Every assignment of choice indices to the categorical dimensions, capped by
// random sampling when the product is too large.
std::vector<std::vector<std::size_t>> categorical_combos(const SearchSpace& space, Rng& rng) {
    std::vector<std::size_t> widths;
    for (const auto& d : space.dims())
        if (d.kind == Dimension::Kind::Categorical) widths.push_back(d.choices.size());
    std::size_t total = 1;
    for (auto w : widths) total = total > kMaxCategoricalCombos ? total : total * w;
    std::vector<std::vector<std::size_t>> out;
    if (total <= kMaxCategoricalCombos) {
        std::vector<std::size_t> idx(widths.size(), 0);
        for (std::size_t c = 0; c < total; ++c) {
            out.push_back(idx);
            for (std::size_t k = 0; k < idx.size(); ++k) {
                if (++idx[k] < widths[k]) break;
                idx[k] = 0;
            }
        }
    } else {
        for (std::size_t c = 0; c < kMaxCategoricalCombos; ++c) {
            std::vector<std::size_t> idx;
            for (auto w : widths) idx.push_back(std::uniform_int_distribution<std::size_t>(0, w - 1)(rng));
            out.push_back(std::move(idx));
        }
    }
    return out;
}

std::vector<std::size_t> continuous_dims(const SearchSpace& space) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < space.dims().size(); ++i)
        if (space.dims()[i].kind == Dimension::Kind::Continuous) out.push_back(i);
    return out;
}

Eigen::VectorXd assemble(const SearchSpace& space, std::span<const double> unit, std::span<const std::size_t> combo) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(Eigen::Index(space.encoded_size()));
    std::size_t ci = 0, ki = 0;
    for (std::size_t i = 0; i < space.dims().size(); ++i) {
        const auto at = Eigen::Index(space.offset(i));
        if (space.dims()[i].kind == Dimension::Kind::Continuous) x[at] = std::clamp(unit[ci++], 0.0, 1.0);
        else x[at + Eigen::Index(combo[ki++])] = 1.0;
    }
    return x;
}

json vector_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

}  // namespace

// --- history ----------------------------------------------------------------

std::size_t BoHistory::best_index() const {
    if (observations.empty()) throw StateError("empty BO history");
    std::size_t best = observations.size();
    for (std::size_t i = 0; i < observations.size(); ++i) {
        if (observations[i].failed) continue;
        if (best == observations.size() || observations[i].g < observations[best].g) best = i;
    }
    if (best == observations.size()) throw TuningError("every objective evaluation failed");
    return best;
}

double BoHistory::best_g() const { return observations[best_index()].g; }

std::vector<double> BoHistory::best_so_far() const {
    std::vector<double> out;
    double running = std::numeric_limits<double>::infinity();
    for (const auto& o : observations) {
        running = std::min(running, o.g);
        out.push_back(running);
    }
    return out;
}

json BoSettings::to_json() const {
    return {{"kappa", kappa},
            {"kappa_sign", kappa_sign == KappaSign::Penalize ? "penalize" : "bonus"},
            {"candidates", candidates},
            {"refine", refine},
            {"refine_evaluations", refine_evaluations},
            {"gp_restarts", gp.restarts},
            {"gp_evaluations_per_restart", gp.evaluations_per_restart}};
}

BoSettings BoSettings::from_json(const json& j) {
    BoSettings s;
    s.kappa = j.value("kappa", s.kappa);
    if (s.kappa < 0) throw ArgumentError("kappa must be non-negative");
    if (j.contains("kappa_sign")) {
        const auto v = j.at("kappa_sign").get<std::string>();
        if (v == "penalize") s.kappa_sign = KappaSign::Penalize;
        else if (v == "bonus") s.kappa_sign = KappaSign::Bonus;
        else throw ArgumentError("kappa_sign must be \"penalize\" or \"bonus\"");
    }
    s.candidates = j.value("candidates", s.candidates);
    s.refine = j.value("refine", s.refine);
    s.refine_evaluations = j.value("refine_evaluations", s.refine_evaluations);
    s.gp.restarts = j.value("gp_restarts", s.gp.restarts);
    s.gp.evaluations_per_restart = j.value("gp_evaluations_per_restart", s.gp.evaluations_per_restart);
    return s;
}

json TuneSettings::to_json() const {
    return {{"iterations", iterations},
            {"initial_points", initial_points},
            {"failure_value", failure_value},
            {"bo", bo.to_json()}};
}

TuneSettings TuneSettings::from_json(const json& j) {
    TuneSettings s;
    s.iterations = j.value("iterations", s.iterations);
    s.initial_points = j.value("initial_points", s.initial_points);
    s.failure_value = j.value("failure_value", s.failure_value);
    if (j.contains("bo")) s.bo = BoSettings::from_json(j.at("bo"));
    return s;
}

// --- design and proposal ----------------------------------------------------

std::vector<std::vector<double>> shifted_halton(std::size_t n, std::size_t dims, Rng& rng) {
    if (dims > std::size(kPrimes)) throw ArgumentError("Halton design supports at most 20 dimensions");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> shift(dims);
    for (auto& s : shift) s = unit(rng);
    std::vector<std::vector<double>> out(n, std::vector<double>(dims));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t d = 0; d < dims; ++d) {
            const double v = radical_inverse(i + 1, kPrimes[d]) + shift[d];
            out[i][d] = v - std::floor(v);
        }
    }
    return out;
}

std::vector<Point> initial_design(const SearchSpace& space, std::size_t n, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    std::vector<Point> out;
    for (const auto& u : shifted_halton(n, space.dims().size(), rng)) out.push_back(space.from_unit(u));
    return out;
}

Point propose_next(const BoHistory& history, const SearchSpace& space, const BoSettings& settings, Rng& rng) {
    if (history.empty()) throw ArgumentError("propose_next needs at least one observation");
    const auto n = Eigen::Index(history.observations.size());
    Eigen::MatrixXd x(n, Eigen::Index(space.encoded_size()));
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        x.row(i) = history.observations[std::size_t(i)].encoded.transpose();
        y[i] = history.observations[std::size_t(i)].g;
    }
    const KernelLayout layout = KernelLayout::of(space);
    const GaussianProcess gp = n >= 2 ? GaussianProcess::fit(layout, x, y, rng, settings.gp)
                                      : GaussianProcess(layout, x, y, GpHyper::defaults(layout));
    const double best = y.minCoeff();
    auto acq = [&](const Eigen::VectorXd& v) { return acquisition(gp, v, best, settings.kappa, settings.kappa_sign); };

    const auto cont = continuous_dims(space);
    const auto combos = categorical_combos(space, rng);
    const auto units = shifted_halton(std::max<std::size_t>(settings.candidates, 1), std::max<std::size_t>(cont.size(), 1), rng);

    struct Candidate {
        double value;
        std::vector<double> unit;
        std::size_t combo;
    };
    std::vector<Candidate> top;
    const std::size_t keep = std::max<std::size_t>(settings.refine, 1);
    auto worse = [](const Candidate& a, const Candidate& b) { return a.value > b.value; };
    for (std::size_t c = 0; c < combos.size(); ++c) {
        for (const auto& u : units) {
            std::vector<double> unit(u.begin(), u.begin() + std::ptrdiff_t(cont.size()));
            const double v = acq(assemble(space, unit, combos[c]));
            if (top.size() < keep) {
                top.push_back({v, std::move(unit), c});
                std::push_heap(top.begin(), top.end(), worse);
            } else if (v > top.front().value) {
                std::pop_heap(top.begin(), top.end(), worse);
                top.back() = {v, std::move(unit), c};
                std::push_heap(top.begin(), top.end(), worse);
            }
        }
    }
    std::sort(top.begin(), top.end(), [](const Candidate& a, const Candidate& b) { return a.value > b.value; });

    Candidate winner = top.front();
    if (!cont.empty()) {
        for (const auto& cand : top) {
            auto negated = [&](const Eigen::VectorXd& z) {
                std::vector<double> unit(z.data(), z.data() + z.size());
                return -acq(assemble(space, unit, combos[cand.combo]));
            };
            const Eigen::VectorXd z0 = Eigen::Map<const Eigen::VectorXd>(cand.unit.data(), Eigen::Index(cand.unit.size()));
            const auto r = nelder_mead(negated, z0, 0.05, settings.refine_evaluations);
            if (-r.value > winner.value) {
                std::vector<double> unit(r.x.data(), r.x.data() + r.x.size());
                for (auto& v : unit) v = std::clamp(v, 0.0, 1.0);
                winner = {-r.value, std::move(unit), cand.combo};
            }
        }
    }
    Point p = space.decode(assemble(space, winner.unit, combos[winner.combo]));
    if (!space.contains(p)) throw StateError("proposal left the search space");
    return p;
}

// --- tuning loop ------------------------------------------------------------

TuneResult tune(const Objective& objective, const SearchSpace& space, const TuneSettings& settings) {
    if (settings.iterations == 0) throw ArgumentError("tune needs at least one iteration");
    TuneResult result;
    auto& history = result.history;

    if (settings.log_path && std::filesystem::exists(*settings.log_path)) {
        std::ifstream in(*settings.log_path);
        std::string line;
        while (std::getline(in, line) && history.observations.size() < settings.iterations) {
            if (line.empty()) continue;
            try {
                const auto j = json::parse(line);
                Observation o;
                o.point = j.at("point_raw").get<std::vector<double>>();
                if (!space.contains(o.point)) throw TuningError("logged point outside the search space");
                o.encoded = space.encode(o.point);
                o.g = j.at("g").get<double>();
                o.failed = j.value("failed", false);
                history.observations.push_back(std::move(o));
            } catch (const json::exception& e) {
                throw TuningError("unreadable BO log " + settings.log_path->string() + ": " + e.what());
            }
        }
    }
    std::ofstream log;
    if (settings.log_path) {
        if (settings.log_path->has_parent_path()) std::filesystem::create_directories(settings.log_path->parent_path());
        log.open(*settings.log_path, std::ios::app);
        if (!log) throw TuningError("cannot open BO log " + settings.log_path->string());
    }

    const auto design = initial_design(space, std::min(settings.initial_points, settings.iterations),
                                       derive_seed(settings.seed, 0x5eed));
    for (std::size_t t = history.observations.size(); t < settings.iterations; ++t) {
        const auto start = std::chrono::steady_clock::now();
        Point point;
        if (t < design.size()) {
            point = design[t];
        } else {
            Rng rng = make_rng(derive_seed(settings.seed, 1000 + t));
            point = propose_next(history, space, settings.bo, rng);
        }
        Observation o;
        o.point = point;
        o.encoded = space.encode(point);
        try {
            o.g = objective(point);
            if (!std::isfinite(o.g)) throw ObjectiveError("objective returned a non-finite value");
        } catch (const ObjectiveError& e) {
            o.failed = true;
            record_warning(std::string("BO evaluation failed: ") + e.what());
        } catch (const TrainingError& e) {
            o.failed = true;
            record_warning(std::string("BO evaluation failed: ") + e.what());
        } catch (const PlanningError& e) {
            o.failed = true;
            record_warning(std::string("BO evaluation failed: ") + e.what());
        }
        if (o.failed) o.g = settings.failure_value;
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (log.is_open()) {
            log << json{{"iteration", t + 1},
                        {"encoded", vector_json(o.encoded)},
                        {"point", space.describe_point(o.point)},
                        {"point_raw", o.point},
                        {"g", o.g},
                        {"failed", o.failed},
                        {"wall_time_s", wall}}
                       .dump()
                << '\n';
            log.flush();
        }
        emit_progress({{"event", "bo_iteration"},
                       {"iteration", t + 1},
                       {"g", o.g},
                       {"failed", o.failed},
                       {"point", space.describe_point(o.point)}});
        history.observations.push_back(std::move(o));
    }
    const auto best = history.best_index();
    result.best = history.observations[best].point;
    result.best_g = history.observations[best].g;
    result.best_trace = history.best_so_far();
    return result;
}

// --- inner cross-fit objective ---------------------------------------------

double objective_g(const Learner& learner, const HyperParams& hp, std::span<const Trial* const> half1,
                   std::span<const Trial* const> half2, const TrainSettings& settings, std::uint64_t seed) {
    auto classes = [](std::span<const Trial* const> s) {
        bool adhd = false, hc = false;
        std::set<std::string> ids;
        for (const Trial* t : s) {
            (t->label == Label::ADHD ? adhd : hc) = true;
            ids.insert(t->subject_id);
        }
        return std::make_pair(adhd && hc, ids);
    };
    const auto [ok1, ids1] = classes(half1);
    const auto [ok2, ids2] = classes(half2);
    if (!ok1 || !ok2) throw ObjectiveError("inner split is degenerate: a class is missing from one half");
    for (const auto& id : ids1)
        if (ids2.count(id)) throw StateError("inner split halves share subject " + id);

    std::size_t correct = 0;
    auto score = [&](std::span<const Trial* const> fit_on, std::span<const Trial* const> test_on, std::uint64_t s) {
        auto predictor = learner.fit(fit_on, hp, settings, s);
        const auto p = predictor->predict(test_on);
        for (std::size_t i = 0; i < test_on.size(); ++i)
            if (decide(p[i]) == test_on[i]->label) ++correct;
    };
    score(half1, half2, derive_seed(seed, 1));
    score(half2, half1, derive_seed(seed, 2));
    return -double(correct) / double(half1.size() + half2.size());
}

HyperTuneResult tune_hyperparams(const Learner& learner, std::span<const Trial* const> train,
                                 const SearchSpace& space, const TuneSettings& settings, const TrainSettings& inner) {
    std::map<std::string, SubjectSummary> subjects;
    for (const Trial* t : train) {
        if (t->augmented) throw ArgumentError("hyperparameter tuning runs on unaugmented trials");
        auto& s = subjects[t->subject_id];
        s.subject_id = t->subject_id;
        s.label = t->label;
        ++s.trials;
    }
    std::vector<SubjectSummary> summary;
    for (auto& [id, s] : subjects) summary.push_back(s);
    HyperTuneResult out;
    std::tie(out.half1, out.half2) = split_in_two(summary, derive_seed(settings.seed, 3));
    const std::set<std::string> first(out.half1.begin(), out.half1.end());
    std::vector<const Trial*> h1, h2;
    for (const Trial* t : train) (first.count(t->subject_id) ? h1 : h2).push_back(t);
    const std::uint64_t eval_seed = derive_seed(settings.seed, 5);
    auto objective = [&](const Point& p) {
        return objective_g(learner, space.to_hyperparams(p), h1, h2, inner, eval_seed);
    };
    out.search = tune(objective, space, settings);
    out.best = space.to_hyperparams(out.search.best);
    return out;
}

}  // namespace adhdnet
