#include "adhdnet/layers.hpp"

#include <cmath>

namespace adhdnet {
namespace {

void glorot_uniform(Tensor& t, double fan_in, double fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& v : t.mutable_data()) v = static_cast<float>(dist(rng));
}

Tensor make_param(Shape shape) {
    Tensor t(std::move(shape), 0.0f);
    t.set_requires_grad(true);
    return t;
}

void require_rank4(const Shape& input, const std::string& layer) {
    if (input.size() != 4)
        throw ConstructionError(layer + ": expects a [N,C,H,W] input, got " + shape_str(input));
}

void require_channels(const Shape& input, std::size_t channels, const std::string& layer) {
    require_rank4(input, layer);
    if (input[1] != channels) {
        throw ConstructionError(layer + ": built for " + std::to_string(channels) + " channels, input is " +
                                shape_str(input));
    }
}

}  // namespace

std::string_view to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::TemporalConv: return "TemporalConv";
        case LayerKind::DepthwiseConv: return "DepthwiseConv";
        case LayerKind::SeparableConv: return "SeparableConv";
        case LayerKind::PointwiseConv: return "PointwiseConv";
        case LayerKind::BatchNorm: return "BatchNorm";
        case LayerKind::Activation: return "Activation";
        case LayerKind::AvgPool: return "AvgPool";
        case LayerKind::GlobalAvgPool: return "GlobalAvgPool";
        case LayerKind::Dropout: return "Dropout";
        case LayerKind::Dense: return "Dense";
        case LayerKind::SEBlock: return "SEBlock";
        case LayerKind::InXception: return "InXception";
    }
    return "?";
}

std::size_t Layer::parameter_count() const {
    std::size_t total = 0;
    for (const auto& p : parameters()) total += p.tensor.numel();
    return total;
}

// --- Conv2dLayer ------------------------------------------------------------

Conv2dLayer::Conv2dLayer(std::string name, LayerKind kind, std::size_t in_channels, std::size_t filters,
                         std::size_t kernel_h, std::size_t kernel_w, Padding padding)
    : Layer(std::move(name)), kind_(kind), padding_(padding),
      weight_(make_param({filters, in_channels, kernel_h, kernel_w})) {}

Tensor Conv2dLayer::forward(const Tensor& x, ForwardContext&) { return conv2d(x, weight_, padding_); }

Shape Conv2dLayer::output_shape(const Shape& input) const {
    require_channels(input, weight_.dim(1), name());
    const std::size_t kh = weight_.dim(2), kw = weight_.dim(3);
    if (padding_ == Padding::Same) return {input[0], weight_.dim(0), input[2], input[3]};
    if (kh > input[2] || kw > input[3])
        throw ConstructionError(name() + ": kernel " + shape_str(weight_.shape()) + " larger than input " + shape_str(input));
    return {input[0], weight_.dim(0), input[2] - kh + 1, input[3] - kw + 1};
}

void Conv2dLayer::initialize(Rng& rng) {
    const double field = double(weight_.dim(2) * weight_.dim(3));
    glorot_uniform(weight_, field * weight_.dim(1), field * weight_.dim(0), rng);
}

// --- DepthwiseConvLayer -----------------------------------------------------

DepthwiseConvLayer::DepthwiseConvLayer(std::string name, std::size_t channels, std::size_t depth,
                                       std::size_t kernel_h, std::size_t kernel_w, Padding padding)
    : Layer(std::move(name)), padding_(padding), weight_(make_param({channels, depth, kernel_h, kernel_w})) {}

Tensor DepthwiseConvLayer::forward(const Tensor& x, ForwardContext&) { return depthwise_conv2d(x, weight_, padding_); }

Shape DepthwiseConvLayer::output_shape(const Shape& input) const {
    require_channels(input, weight_.dim(0), name());
    const std::size_t out_c = weight_.dim(0) * weight_.dim(1);
    const std::size_t kh = weight_.dim(2), kw = weight_.dim(3);
    if (padding_ == Padding::Same) return {input[0], out_c, input[2], input[3]};
    if (kh > input[2] || kw > input[3])
        throw ConstructionError(name() + ": kernel " + shape_str(weight_.shape()) + " larger than input " + shape_str(input));
    return {input[0], out_c, input[2] - kh + 1, input[3] - kw + 1};
}

void DepthwiseConvLayer::initialize(Rng& rng) {
    // Fans are counted per channel group.
    const double field = double(weight_.dim(2) * weight_.dim(3));
    glorot_uniform(weight_, field, field * weight_.dim(1), rng);
}

// --- SeparableConvLayer -----------------------------------------------------

SeparableConvLayer::SeparableConvLayer(std::string name, std::size_t in_channels, std::size_t filters,
                                       std::size_t kernel_w)
    : Layer(std::move(name)), depthwise_(make_param({in_channels, 1, 1, kernel_w})),
      pointwise_(make_param({filters, in_channels, 1, 1})) {}

Tensor SeparableConvLayer::forward(const Tensor& x, ForwardContext&) {
    return separable_conv2d(x, depthwise_, pointwise_, Padding::Same);
}

Shape SeparableConvLayer::output_shape(const Shape& input) const {
    require_channels(input, depthwise_.dim(0), name());
    return {input[0], pointwise_.dim(0), input[2], input[3]};
}

void SeparableConvLayer::initialize(Rng& rng) {
    const double field = double(depthwise_.dim(3));
    glorot_uniform(depthwise_, field, field, rng);
    glorot_uniform(pointwise_, double(pointwise_.dim(1)), double(pointwise_.dim(0)), rng);
}

// --- BatchNormLayer ---------------------------------------------------------

BatchNormLayer::BatchNormLayer(std::string name, std::size_t channels)
    : Layer(std::move(name)), gamma_(make_param({channels})), beta_(make_param({channels})), state_(channels) {
    for (auto& g : gamma_.mutable_data()) g = 1.0f;
}

Tensor BatchNormLayer::forward(const Tensor& x, ForwardContext& ctx) {
    return batch_norm(x, gamma_, beta_, state_, ctx.training);
}

Shape BatchNormLayer::output_shape(const Shape& input) const {
    require_channels(input, gamma_.numel(), name());
    return input;
}

// --- ActivationLayer --------------------------------------------------------

Tensor ActivationLayer::forward(const Tensor& x, ForwardContext&) {
    switch (activation_) {
        case ActivationKind::Elu: return elu(x);
        case ActivationKind::Relu: return relu(x);
        case ActivationKind::Sigmoid: return sigmoid(x);
        case ActivationKind::Softmax: return softmax(x, x.rank() - 1);
    }
    return x;
}

// --- Pooling ----------------------------------------------------------------

Tensor AvgPoolLayer::forward(const Tensor& x, ForwardContext&) {
    return same_ ? avg_pool_same(x, window_) : avg_pool(x, window_);
}

Shape AvgPoolLayer::output_shape(const Shape& input) const {
    require_rank4(input, name());
    if (same_) return input;
    if (input[3] < window_) throw ConstructionError(name() + ": window wider than input " + shape_str(input));
    return {input[0], input[1], input[2], input[3] / window_};
}

Tensor GlobalAvgPoolLayer::forward(const Tensor& x, ForwardContext&) {
    return reshape(global_avg_pool(x), Shape{x.dim(0), x.dim(1)});
}

Shape GlobalAvgPoolLayer::output_shape(const Shape& input) const {
    require_rank4(input, name());
    return {input[0], input[1]};
}

// --- DropoutLayer -----------------------------------------------------------

DropoutLayer::DropoutLayer(std::string name, double rate) : Layer(std::move(name)), rate_(0) { set_rate(rate); }

void DropoutLayer::set_rate(double rate) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ArgumentError(name() + ": dropout rate must lie in [0, 1)");
    rate_ = rate;
}

Tensor DropoutLayer::forward(const Tensor& x, ForwardContext& ctx) {
    if (!ctx.training || rate_ == 0.0) return x;
    if (!ctx.rng) throw StateError(name() + ": training forward needs an rng");
    return dropout(x, rate_, true, *ctx.rng);
}

// --- DenseLayer -------------------------------------------------------------

DenseLayer::DenseLayer(std::string name, std::size_t in_features, std::size_t out_features)
    : Layer(std::move(name)), weight_(make_param({out_features, in_features})), bias_(make_param({out_features})) {}

Tensor DenseLayer::forward(const Tensor& x, ForwardContext&) {
    const Tensor flat = x.rank() == 2 ? x : reshape(x, Shape{x.dim(0), x.numel() / x.dim(0)});
    return linear(flat, weight_, bias_);
}

Shape DenseLayer::output_shape(const Shape& input) const {
    if (input.empty()) throw ConstructionError(name() + ": empty input shape");
    std::size_t features = 1;
    for (std::size_t i = 1; i < input.size(); ++i) features *= input[i];
    if (features != weight_.dim(1)) {
        throw ConstructionError(name() + ": expects " + std::to_string(weight_.dim(1)) + " features, input " +
                                shape_str(input) + " has " + std::to_string(features));
    }
    return {input[0], weight_.dim(0)};
}

void DenseLayer::initialize(Rng& rng) {
    glorot_uniform(weight_, double(weight_.dim(1)), double(weight_.dim(0)), rng);
    for (auto& b : bias_.mutable_data()) b = 0.0f;
}

// --- SEBlockLayer -----------------------------------------------------------

std::string SEBlockConfig::violation() const {
    if (channels == 0 || reduction_ratio == 0) return "SE block needs positive channels and reduction ratio";
    if (channels % reduction_ratio != 0) {
        return "SE block channels " + std::to_string(channels) + " not divisible by reduction ratio " +
               std::to_string(reduction_ratio);
    }
    return {};
}

SEBlockLayer::SEBlockLayer(std::string name, SEBlockConfig config) : Layer(std::move(name)), config_(config) {
    if (auto v = config_.violation(); !v.empty()) throw ConstructionError(this->name() + ": " + v);
    const std::size_t hidden = config_.channels / config_.reduction_ratio;
    w1_ = make_param({hidden, config_.channels});
    w2_ = make_param({config_.channels, hidden});
}

Tensor SEBlockLayer::forward(const Tensor& x, ForwardContext&) { return se_block(x, w1_, w2_); }

Shape SEBlockLayer::output_shape(const Shape& input) const {
    require_channels(input, config_.channels, name());
    return input;
}

void SEBlockLayer::initialize(Rng& rng) {
    glorot_uniform(w1_, double(w1_.dim(1)), double(w1_.dim(0)), rng);
    glorot_uniform(w2_, double(w2_.dim(1)), double(w2_.dim(0)), rng);
}

// --- InXceptionLayer --------------------------------------------------------

InXceptionLayer::InXceptionLayer(std::string name, std::size_t in_channels, InXceptionConfig config)
    : Layer(name), in_channels_(in_channels), config_(config),
      short_reduce_(name + ".short.reduce", LayerKind::PointwiseConv, in_channels, config.bottleneck, 1, 1, Padding::Valid),
      short_separable_(name + ".short.separable", config.bottleneck, config.branch_width, config.short_kernel),
      long_reduce_(name + ".long.reduce", LayerKind::PointwiseConv, in_channels, config.bottleneck, 1, 1, Padding::Valid),
      long_separable_(name + ".long.separable", config.bottleneck, config.branch_width, config.long_kernel),
      pool_(name + ".pool.avg", config.pool_window, true),
      pool_project_(name + ".pool.project", LayerKind::PointwiseConv, in_channels, config.branch_width, 1, 1,
                    Padding::Valid),
      direct_(name + ".direct", LayerKind::PointwiseConv, in_channels, config.branch_width, 1, 1, Padding::Valid) {
    if (config.bottleneck == 0 || config.branch_width == 0 || config.short_kernel == 0 || config.long_kernel == 0 ||
        config.pool_window == 0) {
        throw ConstructionError(this->name() + ": all InXception widths and kernels must be positive");
    }
}

Tensor InXceptionLayer::forward(const Tensor& x, ForwardContext& ctx) {
    const Tensor streams[4] = {
        short_separable_.forward(short_reduce_.forward(x, ctx), ctx),
        long_separable_.forward(long_reduce_.forward(x, ctx), ctx),
        pool_project_.forward(pool_.forward(x, ctx), ctx),
        direct_.forward(x, ctx),
    };
    return concat_channels<float>(streams);
}

Shape InXceptionLayer::output_shape(const Shape& input) const {
    require_channels(input, in_channels_, name());
    return {input[0], out_channels(), input[2], input[3]};
}

std::vector<NamedTensor> InXceptionLayer::parameters() const {
    std::vector<NamedTensor> all;
    for (const Layer* l : std::initializer_list<const Layer*>{&short_reduce_, &short_separable_, &long_reduce_,
                                                              &long_separable_, &pool_project_, &direct_}) {
        auto p = l->parameters();
        all.insert(all.end(), p.begin(), p.end());
    }
    return all;
}

void InXceptionLayer::initialize(Rng& rng) {
    short_reduce_.initialize(rng);
    short_separable_.initialize(rng);
    long_reduce_.initialize(rng);
    long_separable_.initialize(rng);
    pool_project_.initialize(rng);
    direct_.initialize(rng);
}

}  // namespace adhdnet
