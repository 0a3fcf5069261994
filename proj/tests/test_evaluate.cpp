#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "adhdnet/errors.hpp"
#include "adhdnet/evaluate.hpp"
#include "adhdnet/metrics.hpp"
#include "mocks.hpp"
#include "support.hpp"

using namespace adhdnet;
using namespace adhdnet::testing;
namespace fs = std::filesystem;

namespace {

ProtocolSettings quick_protocol(std::size_t folds, bool tune) {
    ProtocolSettings p;
    p.folds = folds;
    p.seed = 3;
    p.tune = tune;
    p.tuning.iterations = 4;
    p.tuning.initial_points = 3;
    p.tuning.bo.gp.restarts = 4;
    p.tuning.bo.candidates = 128;
    return p;
}

const nlohmann::json kMockDescription{{"variant", "mock"}, {"parameter_count", 0}};

}  // namespace

TEST_CASE("metric hand case") {
    const ConfusionCounts c{3, 1, 4, 2};
    const auto m = compute_metrics(c);
    CHECK(m.accuracy == doctest::Approx(0.7));
    CHECK(m.precision == doctest::Approx(0.75));
    CHECK(m.recall == doctest::Approx(0.6));
    CHECK(m.f2 == doctest::Approx(0.625));
}

TEST_CASE("metric zero-denominator conventions") {
    CHECK_THROWS_AS(compute_metrics({}), ArgumentError);
    const auto none_predicted = compute_metrics({0, 0, 5, 3});
    CHECK(none_predicted.precision == 0.0);
    CHECK(none_predicted.recall == 0.0);
    CHECK(none_predicted.f2 == 0.0);
    const auto all_negative = compute_metrics({0, 0, 5, 0});
    CHECK(all_negative.recall == 1.0);
    CHECK(all_negative.accuracy == 1.0);
}

TEST_CASE("confusion counts and decision rule") {
    const std::vector<Label> pred{Label::ADHD, Label::HC, Label::ADHD, Label::HC};
    const std::vector<Label> act{Label::ADHD, Label::ADHD, Label::HC, Label::HC};
    CHECK(confusion(pred, act) == ConfusionCounts{1, 1, 1, 1});
    CHECK(decide({0.5, 0.5}) == Label::ADHD);
    CHECK(decide({0.49, 0.51}) == Label::HC);
}

TEST_CASE("AUC equals the pairwise win rate") {
    Rng rng = make_rng(5);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> s;
        std::vector<Label> y;
        for (int i = 0; i < 30; ++i) {
            s.push_back(std::round(u(rng) * 10) / 10);  // force ties
            y.push_back(u(rng) < 0.5 ? Label::ADHD : Label::HC);
        }
        double wins = 0, pairs = 0;
        for (std::size_t i = 0; i < s.size(); ++i)
            for (std::size_t j = 0; j < s.size(); ++j)
                if (y[i] == Label::ADHD && y[j] == Label::HC) {
                    wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
                    pairs += 1;
                }
        if (pairs == 0) continue;
        CHECK(roc_auc(s, y) == doctest::Approx(wins / pairs).epsilon(1e-12));
    }
    const std::vector<double> s{0.1, 0.2};
    const std::vector<Label> one{Label::HC, Label::HC};
    CHECK(std::isnan(roc_auc(s, one)));
}

TEST_CASE("mean and sample standard deviation") {
    const std::vector<double> v{1, 2, 3, 4};
    const auto m = mean_std(v);
    CHECK(m.mean == doctest::Approx(2.5));
    CHECK(m.std == doctest::Approx(std::sqrt(5.0 / 3.0)));
    const std::vector<double> one{7};
    CHECK(mean_std(one).std == 0.0);
}

TEST_CASE("config hash is stable and sensitive") {
    const nlohmann::json a{{"x", 1}, {"y", "z"}};
    CHECK(config_hash(a) == config_hash(nlohmann::json::parse(a.dump())));
    CHECK(config_hash(a).size() == 16);
    CHECK(config_hash(a) != config_hash({{"x", 2}, {"y", "z"}}));
}

TEST_CASE("no-DA protocol keeps subjects disjoint and tests everyone once") {
    const auto data = tiny_dataset(6, 12, 4);
    Audit audit;
    AuditingLearner learner(&audit);
    const auto space = SearchSpace::hyperparameter_default();
    const auto report = evaluate_no_da(data, learner, space, quick_protocol(3, true), kMockDescription);
    REQUIRE(report.folds.size() == 3);
    std::set<std::string> tested;
    for (const auto& f : report.folds) {
        for (const auto& s : f.test_subjects) CHECK(tested.insert(s).second);
        CHECK(f.tuned_g.has_value());
        CHECK(f.test_trials > 0);
    }
    CHECK(tested.size() == 12);
    CHECK(audit.overlaps == 0);
    CHECK(audit.scored_pairs > 3);
    CHECK(report.subject_accuracy().mean > 0.5);
}

TEST_CASE("reports are deterministic and parallel folds agree with serial ones") {
    const auto data = tiny_dataset(5, 12, 8);
    AuditingLearner learner;
    const auto space = SearchSpace::hyperparameter_default();
    auto p = quick_protocol(5, false);
    const auto a = evaluate_no_da(data, learner, space, p, kMockDescription).to_json().dump();
    const auto b = evaluate_no_da(data, learner, space, p, kMockDescription).to_json().dump();
    CHECK(a == b);
    p.workers = 3;
    CHECK(evaluate_no_da(data, learner, space, p, kMockDescription).to_json().dump() == a);
}

TEST_CASE("a failing fold persists completed folds before rethrowing") {
    const auto dir = fs::temp_directory_path() / "adhdnet_partial";
    fs::remove_all(dir);
    const auto data = tiny_dataset(4, 8, 2);
    AuditingLearner learner(nullptr, 2);
    auto p = quick_protocol(4, false);
    p.out_dir = dir;
    CHECK_THROWS_AS(evaluate_no_da(data, learner, SearchSpace::hyperparameter_default(), p, kMockDescription),
                    TrainingError);
    REQUIRE(fs::exists(dir / "report.partial.json"));
    std::ifstream in(dir / "report.partial.json");
    const auto partial = nlohmann::json::parse(in);
    CHECK(partial["completed_folds"].size() == 2);
    fs::remove_all(dir);
}

TEST_CASE("DA sweep tunes once per fold and never augments test subjects") {
    const auto data = tiny_dataset(4, 12, 6);
    Audit audit;
    AuditingLearner learner(&audit);
    const auto combos = select_combos(nlohmann::json::array({1, 10}));
    const auto report =
        evaluate_with_da(data, learner, SearchSpace::hyperparameter_default(), combos, quick_protocol(2, false),
                         kMockDescription);
    REQUIRE(report.combos.size() == 2);
    CHECK(report.combos[1].combo_id == 10);
    CHECK(audit.augmented_seen > 0);
    CHECK(audit.augmented_leaks == 0);
    CHECK(audit.overlaps == 0);
    for (std::size_t f = 0; f < 2; ++f) {
        // single combo doubles the fold's training set, double combo quintuples it
        CHECK(report.combos[1].folds[f].train_trials == report.combos[0].folds[f].train_trials / 2 * 5);
        CHECK(report.combos[0].folds[f].hyperparams == report.combos[1].folds[f].hyperparams);
    }
    CHECK((report.best_combo == 1 || report.best_combo == 10));
}

TEST_CASE("ablation variants are labelled and ordered") {
    const auto v = ablation_variants();
    REQUIRE(v.size() == 4);
    CHECK(v[0].label() == "ADHDeepNet");
    CHECK(v[3].label() == "EEGNet");
}

TEST_CASE("ablation run trains the real network end to end") {
    const auto data = tiny_dataset(3, 12, 1);
    auto p = quick_protocol(3, false);
    p.final_fit.max_epochs = 1;
    p.final_fit.patience = 1;
    const auto r = ablation_run(data, ModelConfig::desk(), {true, false}, SearchSpace::hyperparameter_default(), p);
    CHECK(r.mode == "ablation");
    CHECK(r.variant == "ADHDeepNet-noSE");
    CHECK(r.folds.size() == 3);
    CHECK(r.parameter_count > 0);
    CHECK(r.folds[0].epochs == 1);
    const auto text = r.to_text();
    CHECK(text.find("subject accuracy") != std::string::npos);
}
