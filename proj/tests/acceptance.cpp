// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset. Exit status is non-zero if any selected
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "adhdnet/augment.hpp"
#include "adhdnet/evaluate.hpp"
#include "adhdnet/explain.hpp"
#include "adhdnet/metrics.hpp"
#include "adhdnet/model.hpp"
#include "adhdnet/optimize.hpp"
#include "mocks.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace adhdnet;
using namespace adhdnet::testing;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradTolerance = 1e-4;
constexpr double kGradBudgetSeconds = 120;
constexpr double kSeTolerance = 1e-6;
constexpr std::size_t kReferenceParameterCount = 228642;
constexpr double kBoDomainFraction = 0.02;
constexpr int kBoSeedsRequired = 9;
constexpr double kBoBudgetSeconds = 60;
constexpr double kEndToEndSubjectAccuracy = 0.90;
constexpr double kEndToEndSampleAccuracy = 0.80;
constexpr double kNoiseStdTolerance = 0.02;
constexpr double kDtftTolerance = 1e-6;
constexpr double kClusterAgreement = 0.95;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path scratch_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("adhdnet_acceptance_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// --- 1 ----------------------------------------------------------------------

Outcome gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    std::map<std::string, double> worst;
    auto record = [&](const std::string& name, double err) { worst[name] = std::max(worst[name], err); };
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng = make_rng(derive_seed(0xacce, seed));
        const std::size_t n = pick(rng, 1, 4), c = pick(rng, 1, 4), h = pick(rng, 1, 8), w = pick(rng, 1, 8);
        const Shape xs{n, c, h, w};
        const std::uint64_t ps = seed * 31;

        for (Padding pad : {Padding::Same, Padding::Valid}) {
            auto x = random_tensor(xs, rng), k = random_tensor({pick(rng, 1, 4), c, pick(rng, 1, h), pick(rng, 1, w)}, rng);
            record("conv2d", gradient_error([&](auto& in) { return probe(conv2d(in[0], in[1], pad), ps); }, {x, k}));
        }
        {
            auto x = random_tensor(xs, rng), k = random_tensor({c, pick(rng, 1, 2), pick(rng, 1, h), 1}, rng);
            record("depthwise", gradient_error([&](auto& in) { return probe(depthwise_conv2d(in[0], in[1]), ps); }, {x, k}));
        }
        {
            const std::size_t d = pick(rng, 1, 2);
            auto x = random_tensor(xs, rng), dk = random_tensor({c, d, 1, pick(rng, 1, w)}, rng),
                 pk = random_tensor({pick(rng, 1, 4), c * d, 1, 1}, rng);
            record("separable", gradient_error(
                                    [&](auto& in) { return probe(separable_conv2d(in[0], in[1], in[2]), ps); }, {x, dk, pk}));
        }
        {
            // two samples at least so the batch variance is not identically zero
            auto x = random_tensor({std::max<std::size_t>(n, 2), c, h, w}, rng), g = random_tensor({c}, rng, 0.5, 1.5),
                 b = random_tensor({c}, rng);
            BatchNormState<double> state(c);
            record("batch_norm", gradient_error(
                                     [&](auto& in) { return probe(batch_norm(in[0], in[1], in[2], state, true), ps); },
                                     {x, g, b}));
        }
        {
            auto x = random_off_zero(xs, rng);
            record("elu", gradient_error([&](auto& in) { return probe(elu(in[0]), ps); }, {x}));
            record("relu", gradient_error([&](auto& in) { return probe(relu(in[0]), ps); }, {x}));
            record("sigmoid", gradient_error([&](auto& in) { return probe(sigmoid(in[0]), ps); }, {x}));
        }
        {
            const std::size_t window = pick(rng, 1, w);
            auto x = random_tensor({n, c, h, window * std::max<std::size_t>(1, w / window)}, rng);
            record("avg_pool", gradient_error([&](auto& in) { return probe(avg_pool(in[0], window), ps); }, {x}));
            auto y = random_tensor(xs, rng);
            const std::size_t same = 2 * pick(rng, 0, 3) + 1;
            record("avg_pool_same", gradient_error([&](auto& in) { return probe(avg_pool_same(in[0], same), ps); }, {y}));
            record("global_avg_pool", gradient_error([&](auto& in) { return probe(global_avg_pool(in[0]), ps); }, {y}));
        }
        {
            const std::size_t in_f = pick(rng, 1, 8), out_f = pick(rng, 1, 4);
            auto x = random_tensor({n, in_f}, rng), wt = random_tensor({out_f, in_f}, rng), b = random_tensor({out_f}, rng);
            record("dense", gradient_error([&](auto& in) { return probe(linear(in[0], in[1], in[2]), ps); }, {x, wt, b}));
        }
        {
            const std::size_t ch = 2 * pick(rng, 1, 2), r = ch / 2;
            auto x = random_tensor({n, ch, h, w}, rng), w1 = random_tensor({r, ch}, rng), w2 = random_tensor({ch, r}, rng);
            record("se_block", gradient_error([&](auto& in) { return probe(se_block(in[0], in[1], in[2]), ps); },
                                              {x, w1, w2}));
        }
        {
            auto logits = random_tensor({n, 2}, rng, -2, 2);
            std::vector<double> onehot(n * 2, 0.0);
            for (std::size_t i = 0; i < n; ++i) onehot[i * 2 + pick(rng, 0, 1)] = 1.0;
            const TensorD labels(Shape{n, 2}, onehot);
            record("cross_entropy", gradient_error([&](auto& in) { return cross_entropy(in[0], labels); }, {logits}));
            auto k = random_tensor({n, pick(rng, 2, 4)}, rng);
            record("softmax", gradient_error([&](auto& in) { return probe(softmax(in[0], 1), ps); }, {k}));
        }
    }
    const double elapsed = seconds_since(t0);
    std::string worst_name;
    double worst_err = 0;
    for (const auto& [name, err] : worst)
        if (err >= worst_err) worst_err = err, worst_name = name;
    const bool pass = worst_err < kGradTolerance && elapsed < kGradBudgetSeconds;
    return {pass, fmt("%zu ops x 5 seeds, worst %.2e (%s) < %.0e, %.1fs", worst.size(), worst_err, worst_name.c_str(),
                      kGradTolerance, elapsed)};
}

// --- 2 ----------------------------------------------------------------------

Outcome se_oracle() {
    Rng rng = make_rng(0x5e);
    double worst = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = pick(rng, 1, 4), c = std::size_t(1) << pick(rng, 1, 5), h = pick(rng, 1, 8),
                          w = pick(rng, 1, 32);
        const std::size_t r = std::max<std::size_t>(1, c >> pick(rng, 0, 3));
        const auto x = random_tensor({n, c, h, w}, rng, -2, 2, false);
        const auto w1 = random_tensor({r, c}, rng, -1, 1, false), w2 = random_tensor({c, r}, rng, -1, 1, false);
        const auto y = se_block(x, w1, w2);
        const auto X = x.data(), W1 = w1.data(), W2 = w2.data();
        for (std::size_t b = 0; b < n; ++b) {
            std::vector<double> s(c, 0.0), z(r, 0.0);
            for (std::size_t ch = 0; ch < c; ++ch) {
                for (std::size_t i = 0; i < h * w; ++i) s[ch] += X[(b * c + ch) * h * w + i];
                s[ch] /= double(h * w);
            }
            for (std::size_t j = 0; j < r; ++j) {
                for (std::size_t ch = 0; ch < c; ++ch) z[j] += W1[j * c + ch] * s[ch];
                z[j] = std::max(z[j], 0.0);
            }
            for (std::size_t ch = 0; ch < c; ++ch) {
                double e = 0;
                for (std::size_t j = 0; j < r; ++j) e += W2[ch * r + j] * z[j];
                const double gate = 1.0 / (1.0 + std::exp(-e));
                for (std::size_t i = 0; i < h * w; ++i) {
                    const std::size_t idx = (b * c + ch) * h * w + i;
                    worst = std::max(worst, std::abs(y.data()[idx] - X[idx] * gate));
                }
            }
        }
    }
    return {worst < kSeTolerance, fmt("50 cases, max abs deviation %.2e < %.0e", worst, kSeTolerance)};
}

// --- 3 ----------------------------------------------------------------------

Outcome structure() {
    auto model = build_model(ModelConfig{});
    Tensor x(Shape{1, 1, 19, 512}, 0.1f);
    Shape out;
    {
        NoGradGuard ng;
        out = model->forward(x, false).shape();
    }
    const auto golden = fs::path(ADHDNET_GOLDEN_DIR) / "adhdeepnet_describe.txt";
    const bool describe_ok = fs::exists(golden) && slurp(golden) == model->describe();
    const std::size_t count = model->parameter_count();
    const bool deterministic = build_model(ModelConfig{})->parameter_count() == count;
    std::vector<std::size_t> counts;
    for (const auto& v : ablation_variants()) {
        ModelConfig c;
        c.use_inxception = v.use_inxception;
        c.use_se = v.use_se;
        counts.push_back(build_model(c)->parameter_count());
    }
    const bool ordered = counts[0] > counts[1] && counts[1] > counts[2] && counts[2] > counts[3];
    const long gap = long(count) - long(kReferenceParameterCount);
    const bool pass = out == Shape{1, 2} && describe_ok && deterministic && ordered;
    return {pass, fmt("out %s, golden %s, %zu params (reference %zu, gap %+ld), ablations %zu>%zu>%zu>%zu",
                      shape_str(out).c_str(), describe_ok ? "match" : "MISMATCH", count, kReferenceParameterCount, gap,
                      counts[0], counts[1], counts[2], counts[3])};
}

// --- 4 ----------------------------------------------------------------------

// Tallies each (predicted, actual) cell by scanning the pairs once per cell,
// then forms each ratio from integers with one division.
Metrics brute_force_metrics(const std::vector<Label>& pred, const std::vector<Label>& act) {
    auto cell = [&](Label p, Label a) {
        std::size_t k = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) k += pred[i] == p && act[i] == a;
        return k;
    };
    const std::size_t tp = cell(Label::ADHD, Label::ADHD), fp = cell(Label::ADHD, Label::HC),
                      fn = cell(Label::HC, Label::ADHD), tn = cell(Label::HC, Label::HC);
    Metrics m;
    m.accuracy = double(tp + tn) / double(pred.size());
    m.precision = tp + fp ? double(tp) / double(tp + fp) : 0.0;
    m.recall = tp + fn ? double(tp) / double(tp + fn) : (fp ? 0.0 : 1.0);
    // (1 + 4) P R / (4 P + R) with P = tp/(tp+fp), R = tp/(tp+fn), cleared of fractions
    m.f2 = tp ? double(5 * tp) / double(5 * tp + 4 * fn + fp) : 0.0;
    return m;
}

Outcome metric_oracle() {
    Rng rng = make_rng(0x4e7);
    std::size_t mismatches = 0;
    for (int set = 0; set < 1000; ++set) {
        const std::size_t n = pick(rng, 1, 60);
        const double bias = std::uniform_real_distribution<double>(0, 1)(rng);
        std::vector<Label> pred(n), act(n);
        for (std::size_t i = 0; i < n; ++i) {
            pred[i] = std::bernoulli_distribution(bias)(rng) ? Label::ADHD : Label::HC;
            act[i] = std::bernoulli_distribution(0.5)(rng) ? Label::ADHD : Label::HC;
        }
        const Metrics a = compute_metrics(confusion(pred, act)), b = brute_force_metrics(pred, act);
        mismatches += a.accuracy != b.accuracy || a.precision != b.precision || a.recall != b.recall || a.f2 != b.f2;
    }
    ConfusionCounts hand;
    hand.tp = 3;
    hand.fp = 1;
    hand.fn = 2;
    hand.tn = 4;
    const Metrics h = compute_metrics(hand);
    const bool hand_ok = h.f2 == 0.625 && h.accuracy == 0.7;
    return {mismatches == 0 && hand_ok,
            fmt("%zu/1000 mismatches, hand case F2 %.4f acc %.4f", mismatches, h.f2, h.accuracy)};
}

// --- 5 ----------------------------------------------------------------------

Outcome leakage() {
    const auto data = tiny_dataset(15, 12, 0x1ea4);
    ProtocolSettings p;
    p.folds = 10;
    p.seed = 5;
    p.tuning.iterations = 4;
    p.tuning.initial_points = 3;
    p.tuning.bo.candidates = 128;
    p.tuning.bo.gp.restarts = 4;
    const auto space = SearchSpace::hyperparameter_default();
    const nlohmann::json description{{"variant", "audit"}};

    Audit audit;
    AuditingLearner learner(&audit);
    const auto report = evaluate_no_da(data, learner, space, p, description);
    std::set<std::string> tested;
    bool tested_once = true;
    for (const auto& f : report.folds)
        for (const auto& s : f.test_subjects) tested_once &= tested.insert(s).second;

    Audit da_audit;
    AuditingLearner da_learner(&da_audit);
    const auto combos = select_combos(nlohmann::json::array({1, 10}));
    evaluate_with_da(data, da_learner, space, combos, p, description);

    const bool pass = tested_once && tested.size() == 30 && audit.overlaps == 0 && da_audit.overlaps == 0 &&
                      da_audit.augmented_seen > 0 && da_audit.augmented_leaks == 0;
    return {pass, fmt("30 subjects, %zu+%zu scored fits, %zu overlapping trials; %zu augmented trials, %zu from scored "
                      "subjects",
                      audit.scored_pairs, da_audit.scored_pairs, audit.overlaps + da_audit.overlaps,
                      da_audit.augmented_seen, da_audit.augmented_leaks)};
}

// --- 6 ----------------------------------------------------------------------

Outcome bo_sanity() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto space = SearchSpace::hyperparameter_default();
    const std::size_t ilr = space.index_of("learning_rate"), idr = space.index_of("dropout_rate");
    const auto& lr_dim = space.dims()[ilr];
    const auto& dr_dim = space.dims()[idr];
    const double lr_width = std::log10(lr_dim.hi) - std::log10(lr_dim.lo), dr_width = dr_dim.hi - dr_dim.lo;
    auto g = [&](const Point& x) { return std::pow(std::log10(x[ilr]) + 3, 2) + std::pow(x[idr] - 0.3, 2); };
    int hits = 0;
    bool monotone = true;
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        TuneSettings ts;
        ts.iterations = 40;
        ts.seed = seed;
        const auto r = tune(g, space, ts);
        const double e = std::max(std::abs(std::log10(r.best[ilr]) + 3) / lr_width, std::abs(r.best[idr] - 0.3) / dr_width);
        worst = std::max(worst, e);
        hits += e <= kBoDomainFraction;
        for (std::size_t i = 1; i < r.best_trace.size(); ++i) monotone &= r.best_trace[i] <= r.best_trace[i - 1];
    }
    const double elapsed = seconds_since(t0);
    return {hits >= kBoSeedsRequired && monotone && elapsed < kBoBudgetSeconds,
            fmt("%d/10 seeds within %.0f%% of width (worst %.3f), trace %s, %.1fs", hits, kBoDomainFraction * 100, worst,
                monotone ? "non-increasing" : "INCREASES", elapsed)};
}

// --- 7 ----------------------------------------------------------------------

Outcome end_to_end() {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<double> subject, sample;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        SyntheticSpec spec;
        spec.subjects_per_class = 20;
        spec.seconds_per_subject = 120;
        spec.separation = 0.8;
        spec.seed = seed;
        const auto data = generate_synthetic(spec);
        ProtocolSettings p;
        p.folds = 10;
        p.seed = seed;
        p.tune = false;  // HyperParams defaults: Adam 1e-3, dropout 0.25, batch 32
        p.final_fit = {8, 3, 0.1};
        p.workers = std::max(1u, std::thread::hardware_concurrency());
        const auto r = evaluate_no_da(data, NetworkLearner(ModelConfig::desk()), SearchSpace::hyperparameter_default(), p);
        subject.push_back(r.subject_accuracy().mean);
        sample.push_back(r.sample_accuracy().mean);
    }
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    };
    const double ms = median(subject), mt = median(sample);
    return {ms >= kEndToEndSubjectAccuracy && mt >= kEndToEndSampleAccuracy,
            fmt("desk model, median subject acc %.3f >= %.2f, sample acc %.3f >= %.2f, %.0fs", ms,
                kEndToEndSubjectAccuracy, mt, kEndToEndSampleAccuracy, seconds_since(t0))};
}

// --- 8 ----------------------------------------------------------------------

Outcome augmentation() {
    Rng rng = make_rng(0xa06);
    double worst = 0;
    const auto combos = enumerate_combos();
    std::set<std::pair<int, double>> grid;
    for (const auto& c : combos)
        for (const auto& e : c.entries) grid.insert({e.m, e.sigma});
    for (const auto& [m, sigma] : grid) {
        // 11 windows of 19x512 = 106,986 draws
        double sum = 0, sq = 0;
        std::size_t n = 0;
        for (int w = 0; w < 11; ++w) {
            Trial t;
            t.subject_id = "s";
            t.segment = std::size_t(w + 1);
            t.window = Signal::Zero(kChannelCount, kSegmentLength);
            const Trial a = augment_trial(t, m, sigma, rng);
            for (Eigen::Index i = 0; i < a.window.size(); ++i) {
                const double v = double(a.window.data()[i]) / m;
                sum += v;
                sq += v * v;
                ++n;
            }
        }
        const double mean = sum / double(n), sd = std::sqrt((sq - double(n) * mean * mean) / double(n - 1));
        worst = std::max(worst, std::abs(sd / sigma - 1));
    }
    const auto data = tiny_dataset(2, 12, 3);
    const auto trials = data.trials();
    const auto ptrs = pointers(trials);
    const bool singles = augment_training_set(ptrs, combos[0], 1).size() == 2 * ptrs.size();
    const bool doubles = augment_training_set(ptrs, combos[9], 1).size() == 5 * ptrs.size();
    const bool pass = worst <= kNoiseStdTolerance && singles && doubles && combos.size() == 18 && grid.size() == 9;
    return {pass, fmt("%zu (m,sigma) pairs, worst std error %.2f%% <= %.0f%%; sizes x2 %s, x5 %s; %zu combos",
                      grid.size(), worst * 100, kNoiseStdTolerance * 100, singles ? "ok" : "WRONG",
                      doubles ? "ok" : "WRONG", combos.size())};
}

// --- 9 ----------------------------------------------------------------------

Outcome explainability() {
    Rng rng = make_rng(0xe9);
    std::uniform_real_distribution<double> u(-1, 1);
    double dtft_err = 0;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> b(pick(rng, 1, 64));
        for (auto& x : b) x = u(rng);
        const auto s = frequency_response(b, 513);
        const auto fft = fft_magnitude(b, 1024);
        for (std::size_t k = 0; k < 513; ++k) dtft_err = std::max(dtft_err, std::abs(s.amplitude[k] - fft[k]));
    }

    auto model = build_model(ModelConfig::desk());
    model->initialize(3);
    const std::size_t filters = model->temporal_layer()->weight().dim(0);
    for (std::size_t f = 0; f < filters; ++f) set_temporal(*model, f, bandpass(14 + double(f), 30, 32));
    const std::size_t planted = 5;
    set_temporal(*model, planted, bandpass(4, 8, 32));
    const bool ranked = band_summary(*model).ranking.front() == planted;

    std::normal_distribution<double> nd(0, 1);
    const int n = 200;
    Eigen::MatrixXd x(n, 10);
    std::vector<int> truth(n);
    for (int i = 0; i < n; ++i) {
        truth[std::size_t(i)] = i % 2;
        for (int j = 0; j < 10; ++j) x(i, j) = nd(rng) + (i % 2 ? 6.0 : 0.0);
    }
    const auto e = tsne(x);
    const double agreement = kmeans_agreement(e.points, truth);
    const bool pass = dtft_err < kDtftTolerance && ranked && agreement >= kClusterAgreement && e.final_kl < e.initial_kl;
    return {pass, fmt("DTFT vs FFT %.1e < %.0e, planted theta filter %s, t-SNE 2-means %.3f >= %.2f, KL %.3f -> %.3f",
                      dtft_err, kDtftTolerance, ranked ? "first" : "NOT first", agreement, kClusterAgreement,
                      e.initial_kl, e.final_kl)};
}

// --- 10 ---------------------------------------------------------------------

Outcome determinism() {
    const auto dir = scratch_dir("determinism");
    const std::string cli = ADHDNET_CLI_PATH;
    auto run = [&](const std::string& args) {
        const std::string cmd = "\"" + cli + "\" " + args + " --quiet > /dev/null 2>&1";
        return std::system(cmd.c_str()) == 0;
    };
    const std::string a = (dir / "a").string(), b = (dir / "b").string();
    const bool ran = run("evaluate --data synth:subjects=10,seconds=12 --model desk --folds 5 --iterations 3 --initial 2 "
                         "--epochs 2 --workers 1 --seed 11 --out \"" + a + "\"") &&
                     run("evaluate --config \"" + a + "/run_config.json\" --out \"" + b + "\"");
    const std::string ra = slurp(dir / "a" / "report.json"), rb = slurp(dir / "b" / "report.json");
    const bool same = ran && !ra.empty() && ra == rb;
    fs::remove_all(dir);
    return {same, fmt("two runs of one RunConfig: report.json %s (%zu bytes)", same ? "byte-identical" : "DIFFERS",
                      ra.size())};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"gradient correctness", gradients},   {"SE oracle equivalence", se_oracle},
        {"architecture structure", structure}, {"metric oracle", metric_oracle},
        {"protocol leakage", leakage},         {"BO sanity", bo_sanity},
        {"end-to-end synthetic", end_to_end},  {"augmentation statistics", augmentation},
        {"explainability oracles", explainability}, {"determinism", determinism},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = int(i + 1);
        if (!selected.empty() && !selected.count(id)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failures += !o.pass;
        std::printf("%s %2d %-24s %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
        std::fflush(stdout);
    }
    return failures ? 1 : 0;
}
