#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "adhdnet/errors.hpp"
#include "adhdnet/data.hpp"
#include "adhdnet/diagnostics.hpp"
#include "support.hpp"

using namespace adhdnet;
namespace fs = std::filesystem;

namespace {

EegRecording ramp_recording(const std::string& id, Label label, std::size_t samples) {
    EegRecording r{id, label, kSampleRate, Signal(kChannelCount, Eigen::Index(samples))};
    for (Eigen::Index c = 0; c < r.samples.rows(); ++c)
        for (Eigen::Index t = 0; t < r.samples.cols(); ++t) r.samples(c, t) = float(c * 10000 + t);
    return r;
}

std::vector<SubjectSummary> roster(std::size_t adhd, std::size_t hc, std::size_t trials = 4) {
    std::vector<SubjectSummary> s;
    for (std::size_t i = 0; i < adhd; ++i) s.push_back({"a" + std::to_string(i), Label::ADHD, trials});
    for (std::size_t i = 0; i < hc; ++i) s.push_back({"h" + std::to_string(i), Label::HC, trials});
    return s;
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("adhdnet_test_data_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("electrode table and labels") {
    CHECK(kChannelCount == 19);
    CHECK(electrode_index("Fz") == 0);
    CHECK(electrode_index("O2") == 18);
    CHECK_THROWS_AS(electrode_index("Oz"), ArgumentError);
    CHECK(label_from_string(to_string(Label::ADHD)) == Label::ADHD);
    CHECK(label_vector(Label::HC)[1] == 1.0f);
}

TEST_CASE("segmentation is non-overlapping and drops the remainder") {
    const auto r = ramp_recording("s", Label::ADHD, 3 * 512 + 100);
    const auto trials = segment(r);
    REQUIRE(trials.size() == 3);
    for (std::size_t s = 0; s < 3; ++s) {
        CHECK(trials[s].segment == s + 1);
        CHECK(trials[s].window.cols() == 512);
        CHECK(trials[s].window(0, 0) == float(s * 512));
        CHECK(trials[s].window(4, 511) == float(40000 + s * 512 + 511));
        CHECK_FALSE(trials[s].augmented);
    }
    CHECK_THROWS(segment(ramp_recording("short", Label::HC, 511)));
}

TEST_CASE("stacking preserves electrode rows and one-hot labels") {
    const auto trials = segment(ramp_recording("s", Label::HC, 1024));
    const auto ptrs = testing::pointers(trials);
    const Tensor x = stack_windows(ptrs), y = stack_labels(ptrs);
    CHECK(x.shape() == Shape{2, 1, 19, 512});
    CHECK(x.data()[512 * 19 + 3 * 512 + 7] == float(30000 + 512 + 7));
    CHECK(y.data()[1] == 1.0f);
}

TEST_CASE("fold plans partition subjects, one test fold each") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto subjects = roster(24, 20);
        const auto plan = plan_folds(subjects, 10, seed);
        CHECK(plan.fold_of.size() == subjects.size());
        std::set<std::string> seen;
        for (std::size_t f = 0; f < 10; ++f) {
            const auto test = plan.test_subjects(f), train = plan.train_subjects(f);
            CHECK(test.size() + train.size() == subjects.size());
            for (const auto& t : test) {
                CHECK(seen.insert(t).second);
                CHECK(std::find(train.begin(), train.end(), t) == train.end());
            }
        }
        CHECK(seen.size() == subjects.size());
        CHECK(plan.balance_enforced);
        CHECK(plan.max_deviation <= kFoldBalanceTolerance + 1e-12);
    }
}

TEST_CASE("small rosters plan without enforcing balance") {
    const auto plan = plan_folds(roster(3, 3), 3, 5);
    CHECK_FALSE(plan.balance_enforced);
    CHECK(plan.fold_of.size() == 6);
    CHECK_THROWS_AS(plan_folds(roster(1, 1), 3, 5), PlanningError);
}

TEST_CASE("fold plans are seed-deterministic") {
    const auto a = plan_folds(roster(10, 10), 5, 9), b = plan_folds(roster(10, 10), 5, 9);
    CHECK(a.fold_of == b.fold_of);
}

TEST_CASE("split_in_two gives disjoint halves containing both classes") {
    const auto subjects = roster(7, 5);
    const auto [h1, h2] = split_in_two(subjects, 4);
    CHECK(h1.size() + h2.size() == 12);
    std::set<std::string> all(h1.begin(), h1.end());
    for (const auto& s : h2) CHECK(all.insert(s).second);
    auto has = [](const std::vector<std::string>& half, char prefix) {
        return std::any_of(half.begin(), half.end(), [&](const auto& s) { return s[0] == prefix; });
    };
    CHECK((has(h1, 'a') && has(h1, 'h') && has(h2, 'a') && has(h2, 'h')));
    CHECK_THROWS(split_in_two(roster(1, 4), 4));
}

TEST_CASE("hold_out takes at least one subject per class") {
    const auto [kept, held] = hold_out(roster(9, 9), 0.1, 3);
    CHECK(kept.size() + held.size() == 18);
    CHECK(held.size() >= 2);
}

TEST_CASE("subject aggregation sums probabilities, ties to ADHD") {
    const std::vector<std::array<double, 2>> majority{{0.9, 0.1}, {0.4, 0.6}, {0.45, 0.55}};
    CHECK(aggregate_subject(majority) == Label::ADHD);  // 1.75 vs 1.25
    const std::vector<std::array<double, 2>> tie{{0.5, 0.5}};
    CHECK(aggregate_subject(tie) == Label::ADHD);
    const std::vector<std::array<double, 2>> hc{{0.2, 0.8}};
    CHECK(aggregate_subject(hc) == Label::HC);
}

TEST_CASE("synthetic data is deterministic and carries the frontal theta/beta signal") {
    const auto a = testing::tiny_dataset(3, 16, 5), b = testing::tiny_dataset(3, 16, 5);
    REQUIRE(a.recordings.size() == 6);
    CHECK(a.recordings[0].samples == b.recordings[0].samples);
    CHECK(a.recordings[0].samples.cols() == 16 * 128);
    // crude band power by DFT on Fz
    auto band = [](const EegRecording& r, double lo, double hi) {
        const Eigen::Index n = r.samples.cols();
        double power = 0;
        for (int k = int(lo * n / 128); k < int(hi * n / 128); ++k) {
            double re = 0, im = 0;
            for (Eigen::Index t = 0; t < n; ++t) {
                const double w = 2 * M_PI * k * double(t) / double(n);
                re += r.samples(0, t) * std::cos(w);
                im -= r.samples(0, t) * std::sin(w);
            }
            power += re * re + im * im;
        }
        return power;
    };
    const auto strong = testing::tiny_dataset(4, 8, 2, 1.0);
    double adhd = 0, hc = 0;
    for (const auto& r : strong.recordings) {
        const double ratio = band(r, 4, 8) / band(r, 13, 30);
        (r.label == Label::ADHD ? adhd : hc) += ratio;
    }
    CHECK(adhd > hc);
}

TEST_CASE("datasets round-trip through manifest and f32 files") {
    const auto dir = scratch("roundtrip");
    const auto original = testing::tiny_dataset(2, 8, 1);
    const auto manifest = write_dataset(original, dir);
    const auto loaded = load_dataset(manifest);
    REQUIRE(loaded.recordings.size() == original.recordings.size());
    for (std::size_t i = 0; i < loaded.recordings.size(); ++i) {
        CHECK(loaded.recordings[i].subject_id == original.recordings[i].subject_id);
        CHECK(loaded.recordings[i].label == original.recordings[i].label);
        CHECK(loaded.recordings[i].samples == original.recordings[i].samples);
    }
    fs::remove_all(dir);
}

TEST_CASE("CSV recordings load with optional electrode names") {
    const auto dir = scratch("csv");
    {
        std::ofstream out(dir / "s1.csv");
        for (std::size_t c = 0; c < kChannelCount; ++c) {
            out << kElectrodes[c];
            for (int t = 0; t < 600; ++t) out << ',' << (c + t * 0.5);
            out << '\n';
        }
        std::ofstream(dir / "manifest.json")
            << R"({"subjects":[{"subject_id":"s1","path":"s1.csv","label":"ADHD","fs":128}]})";
    }
    const auto d = load_dataset(dir / "manifest.json");
    REQUIRE(d.recordings.size() == 1);
    CHECK(d.recordings[0].samples(3, 2) == doctest::Approx(4.0));
    CHECK(d.trials().size() == 1);
    fs::remove_all(dir);
}

TEST_CASE("ingestion collects every problem") {
    const auto dir = scratch("bad");
    const auto good = testing::tiny_dataset(1, 8, 1);
    write_dataset(good, dir);
    std::ofstream(dir / "manifest.json") << R"({"subjects":[
        {"subject_id":"x1","path":"adhd001.f32","label":"ADHD","fs":256},
        {"subject_id":"x2","path":"missing.f32","label":"HC","fs":128},
        {"subject_id":"x1","path":"hc001.f32","label":"HC","fs":128}]})";
    try {
        load_dataset(dir / "manifest.json");
        FAIL("expected IngestionError");
    } catch (const IngestionError& e) {
        const std::string what = e.what();
        CHECK(what.find("256") != std::string::npos);
        CHECK(what.find("missing.f32") != std::string::npos);
        CHECK(what.find("x1") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("non-finite samples are rejected") {
    const auto dir = scratch("nan");
    auto d = testing::tiny_dataset(1, 8, 1);
    d.recordings[0].samples(2, 5) = std::nanf("");
    write_dataset(d, dir);
    CHECK_THROWS_AS(load_dataset(dir / "manifest.json"), IngestionError);
    fs::remove_all(dir);
}
