#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "adhdnet/diagnostics.hpp"
#include "adhdnet/learner.hpp"
#include "adhdnet/progress.hpp"

namespace adhdnet {
namespace {

constexpr std::size_t kInferenceBatch = 64;

std::vector<const Trial*> gather(std::span<const Trial* const> trials, std::span<const std::size_t> idx) {
    std::vector<const Trial*> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(trials[i]);
    return out;
}

}  // namespace

nlohmann::json TrainSettings::to_json() const {
    return {{"max_epochs", max_epochs}, {"patience", patience}, {"holdout_fraction", holdout_fraction}};
}

TrainSettings TrainSettings::from_json(const nlohmann::json& j) {
    TrainSettings s;
    s.max_epochs = j.value("max_epochs", s.max_epochs);
    s.patience = j.value("patience", s.patience);
    s.holdout_fraction = j.value("holdout_fraction", s.holdout_fraction);
    return s;
}

double evaluation_loss(Model& model, std::span<const Trial* const> trials) {
    if (trials.empty()) throw ArgumentError("evaluation_loss: no trials");
    NoGradGuard guard;
    double total = 0;
    for (std::size_t start = 0; start < trials.size(); start += kInferenceBatch) {
        const auto chunk = trials.subspan(start, std::min(kInferenceBatch, trials.size() - start));
        const Tensor loss = cross_entropy(model.forward(stack_windows(chunk), false), stack_labels(chunk));
        total += double(loss.item());
    }
    return total / double(trials.size());
}

FitReport train_network(Model& model, std::span<const Trial* const> train, std::span<const Trial* const> validation,
                        const HyperParams& hp, const TrainSettings& settings, std::uint64_t seed) {
    if (train.empty()) throw TrainingError("training set is empty");
    if (hp.batch_size == 0) throw ArgumentError("batch size must be positive");
    model.set_dropout_rate(hp.dropout_rate);
    Optimizer optimizer(hp.optimizer, hp.learning_rate);
    auto params = model.parameter_tensors();
    Tensor& dense_weight = model.classifier().weight();
    Rng rng = make_rng(seed);

    FitReport report;
    report.best_validation_loss = std::numeric_limits<double>::infinity();
    std::vector<NamedTensor> best_state;
    std::size_t since_best = 0;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 1; epoch <= settings.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0;
        for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
            const std::size_t n = std::min(hp.batch_size, order.size() - start);
            const auto batch = gather(train, std::span(order).subspan(start, n));
            ForwardContext ctx{true, &rng, nullptr};
            const Tensor logits = model.forward(stack_windows(batch), ctx);
            const Tensor summed = cross_entropy(logits, stack_labels(batch));
            const double value = double(summed.item());
            if (!std::isfinite(value))
                throw TrainingError("loss became non-finite at epoch " + std::to_string(epoch));
            epoch_loss += value;
            backward(scale(summed, 1.0f / float(n)));
            optimizer.step(params);
            apply_max_norm(dense_weight, hp.norm_rate);
            model.clear_grads();
        }
        report.epochs_run = epoch;
        report.train_loss.push_back(epoch_loss / double(train.size()));
        double val = std::numeric_limits<double>::quiet_NaN();
        if (!validation.empty()) {
            val = evaluation_loss(model, validation);
            report.validation_loss.push_back(val);
            if (!std::isfinite(val)) throw TrainingError("validation loss became non-finite");
            if (val < report.best_validation_loss) {
                report.best_validation_loss = val;
                report.best_epoch = epoch;
                best_state.clear();
                for (const auto& t : model.state()) best_state.push_back({t.name, t.tensor.detach()});
                since_best = 0;
            } else {
                ++since_best;
            }
        }
        emit_progress({{"event", "epoch"},
                       {"epoch", epoch},
                       {"train_loss", report.train_loss.back()},
                       {"validation_loss", std::isfinite(val) ? nlohmann::json(val) : nlohmann::json(nullptr)}});
        if (!validation.empty() && since_best >= settings.patience) break;
    }
    if (!best_state.empty()) model.load_state(best_state);
    return report;
}

std::vector<std::array<double, 2>> NetworkPredictor::predict(std::span<const Trial* const> trials) {
    std::vector<std::array<double, 2>> out;
    out.reserve(trials.size());
    for (std::size_t start = 0; start < trials.size(); start += kInferenceBatch) {
        const auto chunk = trials.subspan(start, std::min(kInferenceBatch, trials.size() - start));
        auto p = predict_batch(*model_, stack_windows(chunk));
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

std::unique_ptr<Predictor> NetworkLearner::fit(std::span<const Trial* const> train, const HyperParams& hp,
                                               const TrainSettings& settings, std::uint64_t seed) const {
    // Early-stopping slice: whole subjects, unaugmented trials only.
    std::map<std::string, SubjectSummary> subjects;
    for (const Trial* t : train) {
        auto& s = subjects[t->subject_id];
        s.subject_id = t->subject_id;
        s.label = t->label;
        if (!t->augmented) ++s.trials;
    }
    std::vector<SubjectSummary> summary;
    for (auto& [id, s] : subjects) summary.push_back(s);
    std::set<std::string> held;
    if (settings.holdout_fraction > 0) {
        auto [kept, out] = hold_out(summary, settings.holdout_fraction, derive_seed(seed, 11));
        held.insert(out.begin(), out.end());
    }
    std::vector<const Trial*> fit_set, validation;
    for (const Trial* t : train) {
        if (!held.count(t->subject_id)) fit_set.push_back(t);
        else if (!t->augmented) validation.push_back(t);
    }
    auto model = build_model(config_);
    model->initialize(derive_seed(seed, 12));
    auto report = train_network(*model, fit_set, validation, hp, settings, derive_seed(seed, 13));
    return std::make_unique<NetworkPredictor>(std::move(model), std::move(report));
}

}  // namespace adhdnet
