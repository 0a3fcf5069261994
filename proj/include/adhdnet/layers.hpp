#pragma once

#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "adhdnet/nn.hpp"
#include "adhdnet/serialize.hpp"

namespace adhdnet {

enum class LayerKind {
    TemporalConv,
    DepthwiseConv,
    SeparableConv,
    PointwiseConv,
    BatchNorm,
    Activation,
    AvgPool,
    GlobalAvgPool,
    Dropout,
    Dense,
    SEBlock,
    InXception,
};

std::string_view to_string(LayerKind kind);

struct ForwardContext {
    bool training = false;
    Rng* rng = nullptr;  // dropout draws from here while training
    /// When set, every layer stores its output under its own name.
    std::map<std::string, Tensor>* captures = nullptr;
};

/// A named stage with fixed-shape parameters.
class Layer {
public:
    explicit Layer(std::string name) : name_(std::move(name)) {}
    virtual ~Layer() = default;
    Layer(const Layer&) = delete;
    Layer& operator=(const Layer&) = delete;

    const std::string& name() const noexcept { return name_; }
    virtual LayerKind kind() const = 0;
    virtual Tensor forward(const Tensor& x, ForwardContext& ctx) = 0;
    /// Shape propagation for topology checks; throws ConstructionError when
    /// the input cannot feed this layer. Batch dimension is passed through.
    virtual Shape output_shape(const Shape& input) const = 0;
    virtual std::vector<NamedTensor> parameters() const { return {}; }
    /// Non-trainable state that must be persisted (BN running statistics).
    virtual std::vector<NamedTensor> buffers() const { return {}; }
    virtual void initialize(Rng&) {}

    std::size_t parameter_count() const;

protected:
    std::string qualified(std::string_view leaf) const { return name_ + "." + std::string(leaf); }

private:
    std::string name_;
};

class Conv2dLayer final : public Layer {
public:
    Conv2dLayer(std::string name, LayerKind kind, std::size_t in_channels, std::size_t filters, std::size_t kernel_h,
                std::size_t kernel_w, Padding padding);
    LayerKind kind() const override { return kind_; }
    Tensor forward(const Tensor& x, ForwardContext& ctx) override;
    Shape output_shape(const Shape& input) const override;
    std::vector<NamedTensor> parameters() const override { return {{qualified("weight"), weight_}}; }
    void initialize(Rng& rng) override;
    const Tensor& weight() const noexcept { return weight_; }

private:
    LayerKind kind_;
    Padding padding_;
    Tensor weight_;  // [F,C,kh,kw]
};

class DepthwiseConvLayer final : public Layer {
public:
    DepthwiseConvLayer(std::string name, std::size_t channels, std::size_t depth, std::size_t kernel_h,
                       std::size_t kernel_w, Padding padding);
    LayerKind kind() const override { return LayerKind::DepthwiseConv; }
    Tensor forward(const Tensor& x, ForwardContext& ctx) override;
    Shape output_shape(const Shape& input) const override;
    std::vector<NamedTensor> parameters() const override { return {{qualified("weight"), weight_}}; }
    void initialize(Rng& rng) override;
    const Tensor& weight() const noexcept { return weight_; }

private:
    Padding padding_;
    Tensor weight_;  // [C,D,kh,kw]
};

class SeparableConvLayer final : public Layer {
public:
    SeparableConvLayer(std::string name, std::size_t in_channels, std::size_t filters, std::size_t kernel_w);
    LayerKind kind() const override { return LayerKind::SeparableConv; }
    Tensor forward(const Tensor& x, ForwardContext& ctx) override;
    Shape output_shape(const Shape& input) const override;
    std::vector<NamedTensor> parameters() const override {
        return {{qualified("depthwise"), depthwise_}, {qualified("pointwise"), pointwise_}};
    }
    void initialize(Rng& rng) override;

private:
    Tensor depthwise_;  // [C,1,1,kw]
    Tensor pointwise_;  // [F,C,1,1]
};

class BatchNormLayer final : public Layer {
public:
    BatchNormLayer(std::string name, std::size_t channels);
    LayerKind kind() const override { return LayerKind::BatchNorm; }
    Tensor forward(const Tensor& x, ForwardContext& ctx) override;
    Shape output_shape(const Shape& input) const override;
    std::vector<NamedTensor> parameters() const override {
        return {{qualified("gamma"), gamma_}, {qualified("beta"), beta_}};
    }
    std::vector<NamedTensor> buffers() const override {
        return {{qualified("running_mean"), state_.running_mean}, {qualified("running_var"), state_.running_var}};
    }

private:
    Tensor gamma_;
    Tensor beta_;
    BatchNormState<float> state_;
};

enum class ActivationKind { Elu, Relu, Sigmoid, Softmax };

class ActivationLayer final : public Layer {
public:
    ActivationLayer(std::string name, ActivationKind activation) : Layer(std::move(name)), activation_(activation) {}
    LayerKind kind() const override { return LayerKind::Activation; }
    Tensor forward(const Tensor& x, ForwardContext& ctx) override;
    Shape output_shape(const Shape& input) const override { return input; }
    ActivationKind activation() const noexcept { return activation_; }

private:
    ActivationKind activation_;
};

class AvgPoolLayer final : public Layer {
public:
    /// same_padding: stride-1 smoothing; otherwise non-overlapping windows.
    AvgPoolLayer(std::string name, std::size_t window, bool same_padding)
        : Layer(std::move(name)), window_(window), same_(same_padding) {}
    LayerKind kind() const override { return LayerKind::AvgPool; }
    Tensor forward(const Tensor& x, ForwardContext& ctx) override;
    Shape output_shape(const Shape& input) const override;

private:
    std::size_t window_;
    bool same_;
};

/// Global average pool flattened to [N,C].
class GlobalAvgPoolLayer final : public Layer {
public:
    explicit GlobalAvgPoolLayer(std::string name) : Layer(std::move(name)) {}
    LayerKind kind() const override { return LayerKind::GlobalAvgPool; }
    Tensor forward(const Tensor& x, ForwardContext& ctx) override;
    Shape output_shape(const Shape& input) const override;
};

class DropoutLayer final : public Layer {
public:
    DropoutLayer(std::string name, double rate);
    LayerKind kind() const override { return LayerKind::Dropout; }
    Tensor forward(const Tensor& x, ForwardContext& ctx) override;
    Shape output_shape(const Shape& input) const override { return input; }
    void set_rate(double rate);
    double rate() const noexcept { return rate_; }

private:
    double rate_;
};

/// Fully connected layer; inputs of rank > 2 are flattened per sample.
class DenseLayer final : public Layer {
public:
    DenseLayer(std::string name, std::size_t in_features, std::size_t out_features);
    LayerKind kind() const override { return LayerKind::Dense; }
    Tensor forward(const Tensor& x, ForwardContext& ctx) override;
    Shape output_shape(const Shape& input) const override;
    std::vector<NamedTensor> parameters() const override {
        return {{qualified("weight"), weight_}, {qualified("bias"), bias_}};
    }
    void initialize(Rng& rng) override;
    Tensor& weight() noexcept { return weight_; }

private:
    Tensor weight_;  // [out,in]
    Tensor bias_;
};

struct SEBlockConfig {
    std::size_t channels = 64;
    std::size_t reduction_ratio = 8;

    /// Empty when valid, otherwise a description of the violated invariant.
    std::string violation() const;
};

class SEBlockLayer final : public Layer {
public:
    SEBlockLayer(std::string name, SEBlockConfig config);
    LayerKind kind() const override { return LayerKind::SEBlock; }
    Tensor forward(const Tensor& x, ForwardContext& ctx) override;
    Shape output_shape(const Shape& input) const override;
    std::vector<NamedTensor> parameters() const override { return {{qualified("w1"), w1_}, {qualified("w2"), w2_}}; }
    void initialize(Rng& rng) override;

private:
    SEBlockConfig config_;
    Tensor w1_;  // [C/r, C]
    Tensor w2_;  // [C, C/r]
};

struct InXceptionConfig {
    std::size_t bottleneck = 308;   // pointwise width feeding the two separable streams
    std::size_t branch_width = 16;  // output channels of each of the four streams
    std::size_t short_kernel = 128;
    std::size_t long_kernel = 256;
    std::size_t pool_window = 3;
};

/// Four parallel streams concatenated along channels:
///   1. pointwise -> separable 1 x short_kernel
///   2. pointwise -> separable 1 x long_kernel
///   3. avg-pool 1 x pool_window (same) -> pointwise
///   4. pointwise
class InXceptionLayer final : public Layer {
public:
    InXceptionLayer(std::string name, std::size_t in_channels, InXceptionConfig config);
    LayerKind kind() const override { return LayerKind::InXception; }
    Tensor forward(const Tensor& x, ForwardContext& ctx) override;
    Shape output_shape(const Shape& input) const override;
    std::vector<NamedTensor> parameters() const override;
    void initialize(Rng& rng) override;
    std::size_t out_channels() const noexcept { return 4 * config_.branch_width; }

private:
    std::size_t in_channels_;
    InXceptionConfig config_;
    Conv2dLayer short_reduce_;
    SeparableConvLayer short_separable_;
    Conv2dLayer long_reduce_;
    SeparableConvLayer long_separable_;
    AvgPoolLayer pool_;
    Conv2dLayer pool_project_;
    Conv2dLayer direct_;
};

}  // namespace adhdnet
