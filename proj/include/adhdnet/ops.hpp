#pragma once

#include <span>

#include "adhdnet/random.hpp"
#include "adhdnet/tensor.hpp"

// Differentiable operations over BasicTensor. All are instantiated for float
// (training) and double (gradient checking). Feature maps are NCHW.

namespace adhdnet {

enum class Padding {
    Same,   // zero pad, output keeps H and W; odd remainder goes right/bottom
    Valid,  // no padding
};

template <typename S>
BasicTensor<S> matmul(const BasicTensor<S>& a, const BasicTensor<S>& b);

/// x[N,in] * weight[out,in]^T + bias[out]; bias may be undefined.
template <typename S>
BasicTensor<S> linear(const BasicTensor<S>& x, const BasicTensor<S>& weight,
                      const BasicTensor<S>& bias = {});

template <typename S>
BasicTensor<S> add(const BasicTensor<S>& a, const BasicTensor<S>& b);
template <typename S>
BasicTensor<S> mul(const BasicTensor<S>& a, const BasicTensor<S>& b);
template <typename S>
BasicTensor<S> scale(const BasicTensor<S>& a, S factor);
template <typename S>
BasicTensor<S> sum(const BasicTensor<S>& a);
template <typename S>
BasicTensor<S> reshape(const BasicTensor<S>& a, Shape shape);

/// input[N,C,H,W] (*) kernel[F,C,kh,kw] -> [N,F,H',W'], stride 1, no bias.
template <typename S>
BasicTensor<S> conv2d(const BasicTensor<S>& input, const BasicTensor<S>& kernel, Padding padding);

/// input[N,C,H,W] (*) kernel[C,D,kh,kw] -> [N,C*D,H',W']; output channel c*D+d
/// sees only input channel c.
template <typename S>
BasicTensor<S> depthwise_conv2d(const BasicTensor<S>& input, const BasicTensor<S>& kernel,
                                Padding padding = Padding::Valid);

/// depthwise_conv2d followed by a 1x1 conv2d with point_kernel[F,C*D,1,1].
template <typename S>
BasicTensor<S> separable_conv2d(const BasicTensor<S>& input, const BasicTensor<S>& depth_kernel,
                                const BasicTensor<S>& point_kernel, Padding padding = Padding::Same);

template <typename S>
struct BatchNormState {
    BasicTensor<S> running_mean;
    BasicTensor<S> running_var;
    double momentum = 0.1;
    double epsilon = 1e-5;

    explicit BatchNormState(std::size_t channels = 0)
        : running_mean(Shape{channels}, S(0)), running_var(Shape{channels}, S(1)) {}
};

/// Per-channel normalisation over (N,H,W). Training mode uses batch
/// statistics and updates the running averages in `state`.
template <typename S>
BasicTensor<S> batch_norm(const BasicTensor<S>& input, const BasicTensor<S>& gamma,
                          const BasicTensor<S>& beta, BatchNormState<S>& state, bool training);

template <typename S>
BasicTensor<S> elu(const BasicTensor<S>& x, S alpha = S(1));
template <typename S>
BasicTensor<S> relu(const BasicTensor<S>& x);
template <typename S>
BasicTensor<S> sigmoid(const BasicTensor<S>& x);
template <typename S>
BasicTensor<S> softmax(const BasicTensor<S>& x, std::size_t axis);

/// Non-overlapping 1 x window average along W. A width that is not a
/// multiple of the window drops the trailing columns and records a warning.
template <typename S>
BasicTensor<S> avg_pool(const BasicTensor<S>& input, std::size_t window);

/// Stride-1 1 x window average along W with "same" padding; padded cells
/// are excluded from the divisor.
template <typename S>
BasicTensor<S> avg_pool_same(const BasicTensor<S>& input, std::size_t window);

/// [N,C,H,W] -> [N,C,1,1]
template <typename S>
BasicTensor<S> global_avg_pool(const BasicTensor<S>& input);

/// Inverted dropout; identity when !training or rate == 0.
template <typename S>
BasicTensor<S> dropout(const BasicTensor<S>& input, double rate, bool training, Rng& rng);

template <typename S>
BasicTensor<S> concat_channels(std::span<const BasicTensor<S>> parts);

/// x[N,C,H,W] * gates[N,C] broadcast over H,W.
template <typename S>
BasicTensor<S> channel_scale(const BasicTensor<S>& x, const BasicTensor<S>& gates);

/// Summed softmax cross-entropy; labels[N,K] must be one-hot rows.
template <typename S>
BasicTensor<S> cross_entropy(const BasicTensor<S>& logits, const BasicTensor<S>& labels);

}  // namespace adhdnet
