#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adhdnet/ops.hpp"

namespace adhdnet {

// Squeeze-and-excitation pieces. Each is a plain composition of tensor ops so
// it differentiates for free and can be checked in double precision.

/// [N,C,H,W] -> [N,C], channel means.
template <typename S>
BasicTensor<S> se_squeeze(const BasicTensor<S>& feature_map) {
    const auto n = feature_map.dim(0), c = feature_map.dim(1);
    return reshape(global_avg_pool(feature_map), Shape{n, c});
}

/// sigmoid(W2 relu(W1 s)), with W1[C/r,C] and W2[C,C/r].
template <typename S>
BasicTensor<S> se_excite(const BasicTensor<S>& s, const BasicTensor<S>& w1, const BasicTensor<S>& w2) {
    if (s.rank() != 2 || w1.rank() != 2 || w2.rank() != 2 || w1.dim(1) != s.dim(1) || w2.dim(0) != s.dim(1) ||
        w2.dim(1) != w1.dim(0)) {
        throw DimensionError("se_excite: descriptor " + shape_str(s.shape()) + " with W1 " + shape_str(w1.shape()) +
                             " and W2 " + shape_str(w2.shape()));
    }
    return sigmoid(linear(relu(linear(s, w1)), w2));
}

template <typename S>
BasicTensor<S> se_reweight(const BasicTensor<S>& feature_map, const BasicTensor<S>& gates) {
    return channel_scale(feature_map, gates);
}

template <typename S>
BasicTensor<S> se_block(const BasicTensor<S>& feature_map, const BasicTensor<S>& w1, const BasicTensor<S>& w2) {
    return se_reweight(feature_map, se_excite(se_squeeze(feature_map), w1, w2));
}

/// Summed cross-entropy of softmax(logits) against one-hot labels.
template <typename S>
BasicTensor<S> cross_entropy_loss(const BasicTensor<S>& logits, const BasicTensor<S>& labels) {
    return cross_entropy(logits, labels);
}

/// Rescales every row of weight[out,in] whose L2 norm exceeds norm_rate to
/// exactly norm_rate.
void apply_max_norm(Tensor& weight, double norm_rate);

enum class OptimizerKind { Adam, SGDMomentum, RMSProp };

std::string_view to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(std::string_view name);

struct OptimizerSettings {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double momentum = 0.9;  // SGDMomentum
    double rho = 0.9;       // RMSProp
};

/// First-order optimiser over a fixed, ordered parameter list.
class Optimizer {
public:
    explicit Optimizer(OptimizerSettings settings);
    Optimizer(OptimizerKind kind, double learning_rate);

    /// Updates every parameter in place from its gradient. The same list (same
    /// order and shapes) must be passed on every call.
    void step(std::span<Tensor> params);

    const OptimizerSettings& settings() const noexcept { return settings_; }
    std::size_t steps_taken() const noexcept { return steps_; }

private:
    struct Slot {
        std::vector<double> first;
        std::vector<double> second;
    };
    OptimizerSettings settings_;
    std::vector<Slot> slots_;
    std::size_t steps_ = 0;
};

}  // namespace adhdnet
