#include "adhdnet/nn.hpp"

#include <cmath>

namespace adhdnet {

void apply_max_norm(Tensor& weight, double norm_rate) {
    if (!(norm_rate > 0)) throw ArgumentError("apply_max_norm: norm_rate must be positive");
    if (weight.rank() != 2) throw DimensionError("apply_max_norm: expected a [out,in] weight, got " + shape_str(weight.shape()));
    const std::size_t rows = weight.dim(0), cols = weight.dim(1);
    auto w = weight.mutable_data();
    for (std::size_t r = 0; r < rows; ++r) {
        double sq = 0;
        for (std::size_t c = 0; c < cols; ++c) sq += double(w[r * cols + c]) * w[r * cols + c];
        const double norm = std::sqrt(sq);
        if (norm <= norm_rate) continue;
        const double factor = norm_rate / norm;
        for (std::size_t c = 0; c < cols; ++c) w[r * cols + c] = static_cast<float>(w[r * cols + c] * factor);
    }
}

std::string_view to_string(OptimizerKind kind) {
    switch (kind) {
        case OptimizerKind::Adam: return "Adam";
        case OptimizerKind::SGDMomentum: return "SGDMomentum";
        case OptimizerKind::RMSProp: return "RMSProp";
    }
    return "?";
}

OptimizerKind optimizer_kind_from_string(std::string_view name) {
    if (name == "Adam") return OptimizerKind::Adam;
    if (name == "SGDMomentum") return OptimizerKind::SGDMomentum;
    if (name == "RMSProp") return OptimizerKind::RMSProp;
    throw ArgumentError("unknown optimizer '" + std::string(name) + "'");
}

Optimizer::Optimizer(OptimizerSettings settings) : settings_(settings) {
    if (!(settings_.learning_rate > 0)) throw ArgumentError("optimizer: learning rate must be positive");
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate)
    : Optimizer(OptimizerSettings{.kind = kind, .learning_rate = learning_rate}) {}

void Optimizer::step(std::span<Tensor> params) {
    if (slots_.empty()) {
        slots_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            slots_[i].first.assign(params[i].numel(), 0.0);
            if (settings_.kind != OptimizerKind::SGDMomentum) slots_[i].second.assign(params[i].numel(), 0.0);
        }
    }
    if (slots_.size() != params.size()) throw StateError("optimizer: parameter list changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].has_grad()) throw StateError("optimizer: parameter " + std::to_string(i) + " has no gradient");
        if (slots_[i].first.size() != params[i].numel())
            throw StateError("optimizer: parameter " + std::to_string(i) + " changed shape");
    }

    ++steps_;
    const double lr = settings_.learning_rate;
    const double bias1 = 1.0 - std::pow(settings_.beta1, double(steps_));
    const double bias2 = 1.0 - std::pow(settings_.beta2, double(steps_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto w = params[i].mutable_data();
        auto g = params[i].grad();
        auto& m = slots_[i].first;
        auto& v = slots_[i].second;
        switch (settings_.kind) {
            case OptimizerKind::Adam:
                for (std::size_t j = 0; j < w.size(); ++j) {
                    m[j] = settings_.beta1 * m[j] + (1 - settings_.beta1) * g[j];
                    v[j] = settings_.beta2 * v[j] + (1 - settings_.beta2) * double(g[j]) * g[j];
                    const double mhat = m[j] / bias1;
                    const double vhat = v[j] / bias2;
                    w[j] = static_cast<float>(w[j] - lr * mhat / (std::sqrt(vhat) + settings_.epsilon));
                }
                break;
            case OptimizerKind::SGDMomentum:
                for (std::size_t j = 0; j < w.size(); ++j) {
                    m[j] = settings_.momentum * m[j] + g[j];
                    w[j] = static_cast<float>(w[j] - lr * m[j]);
                }
                break;
            case OptimizerKind::RMSProp:
                for (std::size_t j = 0; j < w.size(); ++j) {
                    v[j] = settings_.rho * v[j] + (1 - settings_.rho) * double(g[j]) * g[j];
                    w[j] = static_cast<float>(w[j] - lr * g[j] / (std::sqrt(v[j]) + settings_.epsilon));
                }
                break;
        }
    }
}

}  // namespace adhdnet
