#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "adhdnet/augment.hpp"
#include "adhdnet/data.hpp"
#include "adhdnet/learner.hpp"
#include "adhdnet/metrics.hpp"
#include "adhdnet/optimize.hpp"

namespace adhdnet {

struct ProtocolSettings {
    std::size_t folds = 10;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    /// When false every fold trains with `fixed` instead of running the
    /// inner search.
    bool tune = true;
    HyperParams fixed;
    TuneSettings tuning;
    TrainSettings inner{30, 6, 0.1};
    TrainSettings final_fit{100, 10, 0.1};
    /// Per-fold weights and BO logs go here when set.
    std::optional<std::filesystem::path> out_dir;

    /// Everything that affects results; excludes workers and out_dir.
    nlohmann::json to_json() const;
    static ProtocolSettings from_json(const nlohmann::json& j);
};

struct FoldResult {
    std::size_t fold = 0;  // 1-based
    std::vector<std::string> test_subjects;
    std::size_t train_trials = 0, test_trials = 0;
    HyperParams hyperparams;
    std::optional<double> tuned_g;
    std::size_t epochs = 0;
    ConfusionCounts sample_counts, subject_counts;
    Metrics sample, subject;
    double sample_auc = 0.0, subject_auc = 0.0;

    nlohmann::json to_json() const;
};

struct MeanStd {
    double mean = 0.0, std = 0.0;  // std with n-1 denominator, 0 for one value
};
MeanStd mean_std(std::span<const double> values);

struct EvalReport {
    std::string mode;     // no-da, da, ablation
    std::string variant;  // model variant label
    int combo_id = 0;     // augmentation combo, 0 for none
    std::string combo_label;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::size_t parameter_count = 0;
    std::vector<FoldResult> folds;

    MeanStd sample_accuracy() const;
    MeanStd subject_accuracy() const;
    MeanStd sample_f2() const;
    MeanStd subject_f2() const;
    MeanStd sample_auc() const;

    nlohmann::json to_json() const;
    std::string to_text() const;
};

struct DaReport {
    std::vector<EvalReport> combos;
    int best_combo = 0;  // by mean subject accuracy, then sample accuracy
    int worst_combo = 0;

    nlohmann::json to_json() const;
    std::string to_text() const;
};

/// 16 hex digits of FNV-1a over the compact JSON dump.
std::string config_hash(const nlohmann::json& config);

/// Outer k-fold cross-subject loop: per fold, tune on the training subjects
/// (or use the fixed point), refit on all of them, score the held-out fold
/// per trial and per subject.
EvalReport evaluate_no_da(const Dataset& dataset, const Learner& learner, const SearchSpace& space,
                          const ProtocolSettings& settings, const nlohmann::json& model_description = {});

/// Tunes once per fold, then for every combo augments only the training
/// trials, refits and scores the fold.
DaReport evaluate_with_da(const Dataset& dataset, const Learner& learner, const SearchSpace& space,
                          std::span<const AugCombo> combos, const ProtocolSettings& settings,
                          const nlohmann::json& model_description = {});

struct AblationFlags {
    bool use_inxception = true;
    bool use_se = true;

    std::string label() const;
};

/// The four variants: full, no SE, no InXception, neither (baseline).
std::vector<AblationFlags> ablation_variants();

EvalReport ablation_run(const Dataset& dataset, const ModelConfig& base, AblationFlags flags,
                        const SearchSpace& space, const ProtocolSettings& settings);

}  // namespace adhdnet
