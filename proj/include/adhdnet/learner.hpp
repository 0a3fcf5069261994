#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "adhdnet/data.hpp"
#include "adhdnet/hyperparams.hpp"
#include "adhdnet/model.hpp"

namespace adhdnet {

struct TrainSettings {
    std::size_t max_epochs = 100;
    std::size_t patience = 10;
    double holdout_fraction = 0.1;  // subject-held-out early-stopping slice

    nlohmann::json to_json() const;
    static TrainSettings from_json(const nlohmann::json& j);
};

struct FitReport {
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;  // 1-based; 0 when no validation slice existed
    double best_validation_loss = 0.0;
    std::vector<double> train_loss;  // mean per-trial loss per epoch
    std::vector<double> validation_loss;
};

class Predictor {
public:
    virtual ~Predictor() = default;
    /// (p_ADHD, p_HC) per trial.
    virtual std::vector<std::array<double, 2>> predict(std::span<const Trial* const> trials) = 0;
};

/// Fits a predictor on a training set. fit() is const so one learner can
/// serve concurrent folds.
class Learner {
public:
    virtual ~Learner() = default;
    virtual std::unique_ptr<Predictor> fit(std::span<const Trial* const> train, const HyperParams& hp,
                                           const TrainSettings& settings, std::uint64_t seed) const = 0;
};

class NetworkPredictor final : public Predictor {
public:
    NetworkPredictor(std::unique_ptr<Model> model, FitReport report)
        : model_(std::move(model)), report_(std::move(report)) {}
    std::vector<std::array<double, 2>> predict(std::span<const Trial* const> trials) override;
    Model& model() noexcept { return *model_; }
    const FitReport& report() const noexcept { return report_; }

private:
    std::unique_ptr<Model> model_;
    FitReport report_;
};

class NetworkLearner final : public Learner {
public:
    explicit NetworkLearner(ModelConfig config) : config_(std::move(config)) { config_.validate(); }
    std::unique_ptr<Predictor> fit(std::span<const Trial* const> train, const HyperParams& hp,
                                   const TrainSettings& settings, std::uint64_t seed) const override;
    const ModelConfig& config() const noexcept { return config_; }

private:
    ModelConfig config_;
};

/// Mini-batch training with per-epoch shuffling, mean batch loss, max-norm on
/// the classifier rows after each step, and early stopping on `validation`
/// (restoring the best weights) when it is non-empty.
FitReport train_network(Model& model, std::span<const Trial* const> train, std::span<const Trial* const> validation,
                        const HyperParams& hp, const TrainSettings& settings, std::uint64_t seed);

/// Mean per-trial cross-entropy in inference mode.
double evaluation_loss(Model& model, std::span<const Trial* const> trials);

}  // namespace adhdnet
