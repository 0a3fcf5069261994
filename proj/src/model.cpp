#include "adhdnet/model.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace adhdnet {
namespace {

using json = nlohmann::json;

template <typename T, typename... Args>
void push(std::vector<std::unique_ptr<Layer>>& layers, Args&&... args) {
    layers.push_back(std::make_unique<T>(std::forward<Args>(args)...));
}

std::size_t inxception_width(const ModelConfig& c) { return 4 * c.inxception.branch_width; }

std::filesystem::path sidecar_path(const std::filesystem::path& weights) {
    auto p = weights;
    p.replace_extension(".json");
    return p;
}

}  // namespace

std::string_view to_string(Architecture arch) {
    return arch == Architecture::ADHDeepNet ? "ADHDeepNet" : "EEGNet";
}

Architecture architecture_from_string(std::string_view name) {
    if (name == "ADHDeepNet") return Architecture::ADHDeepNet;
    if (name == "EEGNet") return Architecture::EEGNet;
    throw ArgumentError("unknown architecture '" + std::string(name) + "'");
}

// --- ModelConfig ------------------------------------------------------------

std::vector<std::string> ModelConfig::violations() const {
    std::vector<std::string> out;
    auto need = [&](bool ok, std::string what) {
        if (!ok) out.push_back(std::move(what));
    };
    need(channels > 0, "channels must be positive");
    need(time_steps > 0, "time_steps must be positive");
    need(temporal_filters > 0 && temporal_kernel > 0, "temporal filters and kernel must be positive");
    need(depth_multiplier > 0, "depth_multiplier must be positive");
    need(separable_filters > 0 && separable_kernel > 0, "separable filters and kernel must be positive");
    need(classes >= 2, "classes must be at least 2");
    need(dropout_rate >= 0.0 && dropout_rate < 1.0, "dropout_rate must lie in [0, 1)");
    const Architecture arch = effective_architecture();
    if (arch == Architecture::ADHDeepNet) {
        need(pool_window > 0 && time_steps / pool_window > 0, "pool_window must leave at least one time step");
        need(inxception.bottleneck > 0 && inxception.branch_width > 0 && inxception.short_kernel > 0 &&
                 inxception.long_kernel > 0 && inxception.pool_window > 0,
             "InXception widths and kernels must be positive");
        need(se_ratio > 0, "se_ratio must be positive");
        if (use_se && se_ratio > 0) {
            const std::size_t first = use_inxception ? inxception_width(*this) : temporal_filters * depth_multiplier;
            need(first % se_ratio == 0, "first SE block width " + std::to_string(first) +
                                            " not divisible by se_ratio " + std::to_string(se_ratio));
            need(separable_filters % se_ratio == 0, "separable_filters " + std::to_string(separable_filters) +
                                                        " not divisible by se_ratio " + std::to_string(se_ratio));
        }
    } else {
        need(eegnet_pool1 > 0 && eegnet_pool2 > 0 && eegnet_separable_kernel > 0,
             "baseline pooling and kernel sizes must be positive");
        need(eegnet_pool1 > 0 && eegnet_pool2 > 0 && time_steps / eegnet_pool1 / eegnet_pool2 > 0,
             "baseline pooling consumes all time steps");
    }
    return out;
}

void ModelConfig::validate() const {
    const auto v = violations();
    if (v.empty()) return;
    std::string msg = "invalid model config:";
    for (const auto& s : v) msg += "\n  - " + s;
    throw ConstructionError(msg);
}

Architecture ModelConfig::effective_architecture() const {
    if (architecture == Architecture::ADHDeepNet && !use_inxception && !use_se) return Architecture::EEGNet;
    return architecture;
}

ModelConfig ModelConfig::desk() {
    ModelConfig c;
    c.temporal_filters = 8;
    c.temporal_kernel = 32;
    c.depth_multiplier = 2;
    c.inxception.bottleneck = 8;
    c.inxception.branch_width = 4;
    c.inxception.short_kernel = 32;
    c.inxception.long_kernel = 64;
    c.separable_filters = 16;
    c.separable_kernel = 16;
    c.se_ratio = 4;
    return c;
}

json ModelConfig::to_json() const {
    return json{
        {"architecture", std::string(to_string(architecture))},
        {"channels", channels},
        {"time_steps", time_steps},
        {"temporal_filters", temporal_filters},
        {"temporal_kernel", temporal_kernel},
        {"depth_multiplier", depth_multiplier},
        {"pool_window", pool_window},
        {"inxception",
         {{"bottleneck", inxception.bottleneck},
          {"branch_width", inxception.branch_width},
          {"short_kernel", inxception.short_kernel},
          {"long_kernel", inxception.long_kernel},
          {"pool_window", inxception.pool_window}}},
        {"separable_filters", separable_filters},
        {"separable_kernel", separable_kernel},
        {"se_ratio", se_ratio},
        {"dropout_rate", dropout_rate},
        {"classes", classes},
        {"use_inxception", use_inxception},
        {"use_se", use_se},
        {"eegnet_pool1", eegnet_pool1},
        {"eegnet_separable_kernel", eegnet_separable_kernel},
        {"eegnet_pool2", eegnet_pool2},
    };
}

ModelConfig ModelConfig::from_json(const json& j) {
    ModelConfig c;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    if (j.contains("architecture")) c.architecture = architecture_from_string(j.at("architecture").get<std::string>());
    get("channels", c.channels);
    get("time_steps", c.time_steps);
    get("temporal_filters", c.temporal_filters);
    get("temporal_kernel", c.temporal_kernel);
    get("depth_multiplier", c.depth_multiplier);
    get("pool_window", c.pool_window);
    if (j.contains("inxception")) {
        const auto& x = j.at("inxception");
        auto getx = [&](const char* key, std::size_t& field) {
            if (x.contains(key)) x.at(key).get_to(field);
        };
        getx("bottleneck", c.inxception.bottleneck);
        getx("branch_width", c.inxception.branch_width);
        getx("short_kernel", c.inxception.short_kernel);
        getx("long_kernel", c.inxception.long_kernel);
        getx("pool_window", c.inxception.pool_window);
    }
    get("separable_filters", c.separable_filters);
    get("separable_kernel", c.separable_kernel);
    get("se_ratio", c.se_ratio);
    get("dropout_rate", c.dropout_rate);
    get("classes", c.classes);
    get("use_inxception", c.use_inxception);
    get("use_se", c.use_se);
    get("eegnet_pool1", c.eegnet_pool1);
    get("eegnet_separable_kernel", c.eegnet_separable_kernel);
    get("eegnet_pool2", c.eegnet_pool2);
    return c;
}

// --- Model ------------------------------------------------------------------

Model::Model(ModelConfig config, std::vector<std::unique_ptr<Layer>> layers)
    : config_(std::move(config)), layers_(std::move(layers)) {
    // Propagate shapes once so a width mismatch fails here, not in forward.
    Shape shape{1, 1, config_.channels, config_.time_steps};
    for (const auto& layer : layers_) shape = layer->output_shape(shape);
    if (shape != Shape{1, config_.classes})
        throw ConstructionError("model output shape " + shape_str(shape) + " is not [1," +
                                std::to_string(config_.classes) + "]");
}

void Model::check_input(const Tensor& input) const {
    if (input.rank() != 4 || input.dim(0) == 0 || input.dim(1) != 1 || input.dim(2) != config_.channels ||
        input.dim(3) != config_.time_steps) {
        throw DimensionError("model input must be [N,1," + std::to_string(config_.channels) + "," +
                             std::to_string(config_.time_steps) + "], got " + shape_str(input.shape()));
    }
}

Tensor Model::forward(const Tensor& input, ForwardContext& ctx) {
    check_input(input);
    Tensor x = input;
    for (const auto& layer : layers_) {
        x = layer->forward(x, ctx);
        if (ctx.captures) (*ctx.captures)[layer->name()] = x;
    }
    return x;
}

Tensor Model::forward(const Tensor& input, bool training, Rng* rng) {
    ForwardContext ctx{training, rng, nullptr};
    return forward(input, ctx);
}

std::vector<NamedTensor> Model::parameters() const {
    std::vector<NamedTensor> out;
    for (const auto& layer : layers_) {
        auto p = layer->parameters();
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

std::vector<NamedTensor> Model::buffers() const {
    std::vector<NamedTensor> out;
    for (const auto& layer : layers_) {
        auto b = layer->buffers();
        out.insert(out.end(), b.begin(), b.end());
    }
    return out;
}

std::vector<NamedTensor> Model::state() const {
    auto out = parameters();
    auto b = buffers();
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

std::vector<Tensor> Model::parameter_tensors() const {
    std::vector<Tensor> out;
    for (auto& p : parameters()) out.push_back(p.tensor);
    return out;
}

std::size_t Model::parameter_count() const {
    std::size_t total = 0;
    for (const auto& layer : layers_) total += layer->parameter_count();
    return total;
}

void Model::load_state(std::span<const NamedTensor> tensors) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& t : tensors) {
        if (!by_name.emplace(t.name, &t.tensor).second) throw FormatError("duplicate tensor '" + t.name + "'");
    }
    auto own = state();
    if (own.size() != by_name.size())
        throw FormatError("weight set holds " + std::to_string(by_name.size()) + " tensors, model expects " +
                          std::to_string(own.size()));
    for (auto& target : own) {
        auto it = by_name.find(target.name);
        if (it == by_name.end()) throw FormatError("weight set lacks '" + target.name + "'");
        if (it->second->shape() != target.tensor.shape())
            throw FormatError("tensor '" + target.name + "' has shape " + shape_str(it->second->shape()) +
                              ", model expects " + shape_str(target.tensor.shape()));
    }
    for (auto& target : own) {
        const auto src = by_name.at(target.name)->data();
        std::copy(src.begin(), src.end(), target.tensor.mutable_data().begin());
    }
}

void Model::initialize(std::uint64_t seed) {
    Rng rng = make_rng(seed);
    for (const auto& layer : layers_) layer->initialize(rng);
}

void Model::set_dropout_rate(double rate) {
    for (const auto& layer : layers_)
        if (auto* d = dynamic_cast<DropoutLayer*>(layer.get())) d->set_rate(rate);
    config_.dropout_rate = rate;
}

void Model::clear_grads() {
    for (auto& p : parameters()) p.tensor.clear_grad();
}

std::string Model::describe() const {
    std::ostringstream out;
    out << to_string(config_.effective_architecture()) << " (inxception=" << (config_.use_inxception ? "on" : "off")
        << ", se=" << (config_.use_se ? "on" : "off") << ")\n";
    out << std::left << std::setw(16) << "layer" << std::setw(15) << "kind" << std::setw(18) << "output"
        << std::right << std::setw(10) << "params" << '\n';
    Shape shape{1, 1, config_.channels, config_.time_steps};
    out << std::left << std::setw(16) << "input" << std::setw(15) << "-" << std::setw(18) << shape_str(shape)
        << std::right << std::setw(10) << 0 << '\n';
    for (const auto& layer : layers_) {
        shape = layer->output_shape(shape);
        out << std::left << std::setw(16) << layer->name() << std::setw(15) << to_string(layer->kind())
            << std::setw(18) << shape_str(shape) << std::right << std::setw(10) << layer->parameter_count() << '\n';
    }
    out << "total parameters: " << parameter_count() << '\n';
    return out.str();
}

Layer* Model::find(std::string_view name) const {
    for (const auto& layer : layers_)
        if (layer->name() == name) return layer.get();
    return nullptr;
}

DenseLayer& Model::classifier() const {
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
        if (auto* d = dynamic_cast<DenseLayer*>(it->get())) return *d;
    throw StateError("model has no dense classifier");
}

Conv2dLayer* Model::temporal_layer() const {
    for (const auto& layer : layers_)
        if (layer->kind() == LayerKind::TemporalConv) return static_cast<Conv2dLayer*>(layer.get());
    return nullptr;
}

DepthwiseConvLayer* Model::depthwise_layer() const {
    for (const auto& layer : layers_)
        if (layer->kind() == LayerKind::DepthwiseConv) return static_cast<DepthwiseConvLayer*>(layer.get());
    return nullptr;
}

// --- builders ---------------------------------------------------------------

std::unique_ptr<Model> build_adhdeepnet(const ModelConfig& config) {
    ModelConfig c = config;
    c.architecture = Architecture::ADHDeepNet;
    if (!c.use_inxception && !c.use_se)
        throw ConstructionError("ADHDeepNet with both blocks disabled is the EEGNet baseline; use build_model");
    c.validate();
    const std::size_t f1d = c.temporal_filters * c.depth_multiplier;
    std::vector<std::unique_ptr<Layer>> l;
    push<Conv2dLayer>(l, "temporal_conv", LayerKind::TemporalConv, 1, c.temporal_filters, 1, c.temporal_kernel,
                      Padding::Same);
    push<BatchNormLayer>(l, "bn1", c.temporal_filters);
    push<DepthwiseConvLayer>(l, "depthwise", c.temporal_filters, c.depth_multiplier, c.channels, 1, Padding::Valid);
    push<BatchNormLayer>(l, "bn2", f1d);
    push<ActivationLayer>(l, "elu1", ActivationKind::Elu);
    push<AvgPoolLayer>(l, "pool1", c.pool_window, false);
    push<DropoutLayer>(l, "dropout1", c.dropout_rate);
    std::size_t width = f1d;
    if (c.use_inxception) {
        auto block = std::make_unique<InXceptionLayer>("inxception", width, c.inxception);
        width = block->out_channels();
        l.push_back(std::move(block));
    }
    if (c.use_se) push<SEBlockLayer>(l, "se1", SEBlockConfig{width, c.se_ratio});
    push<SeparableConvLayer>(l, "separable", width, c.separable_filters, c.separable_kernel);
    push<BatchNormLayer>(l, "bn3", c.separable_filters);
    push<ActivationLayer>(l, "elu2", ActivationKind::Elu);
    if (c.use_se) push<SEBlockLayer>(l, "se2", SEBlockConfig{c.separable_filters, c.se_ratio});
    push<DropoutLayer>(l, "dropout2", c.dropout_rate);
    push<GlobalAvgPoolLayer>(l, "gap");
    push<DenseLayer>(l, "dense", c.separable_filters, c.classes);
    auto model = std::make_unique<Model>(c, std::move(l));
    model->initialize(0);
    return model;
}

std::unique_ptr<Model> build_eegnet_baseline(const ModelConfig& config) {
    ModelConfig c = config;
    c.architecture = Architecture::EEGNet;
    c.validate();
    const std::size_t f1d = c.temporal_filters * c.depth_multiplier;
    const std::size_t pooled = c.time_steps / c.eegnet_pool1 / c.eegnet_pool2;
    std::vector<std::unique_ptr<Layer>> l;
    push<Conv2dLayer>(l, "temporal_conv", LayerKind::TemporalConv, 1, c.temporal_filters, 1, c.temporal_kernel,
                      Padding::Same);
    push<BatchNormLayer>(l, "bn1", c.temporal_filters);
    push<DepthwiseConvLayer>(l, "depthwise", c.temporal_filters, c.depth_multiplier, c.channels, 1, Padding::Valid);
    push<BatchNormLayer>(l, "bn2", f1d);
    push<ActivationLayer>(l, "elu1", ActivationKind::Elu);
    push<AvgPoolLayer>(l, "pool1", c.eegnet_pool1, false);
    push<DropoutLayer>(l, "dropout1", c.dropout_rate);
    push<SeparableConvLayer>(l, "separable", f1d, c.separable_filters, c.eegnet_separable_kernel);
    push<BatchNormLayer>(l, "bn3", c.separable_filters);
    push<ActivationLayer>(l, "elu2", ActivationKind::Elu);
    push<AvgPoolLayer>(l, "pool2", c.eegnet_pool2, false);
    push<DropoutLayer>(l, "dropout2", c.dropout_rate);
    push<DenseLayer>(l, "dense", c.separable_filters * pooled, c.classes);
    auto model = std::make_unique<Model>(c, std::move(l));
    model->initialize(0);
    return model;
}

std::unique_ptr<Model> build_model(const ModelConfig& config) {
    return config.effective_architecture() == Architecture::EEGNet ? build_eegnet_baseline(config)
                                                                    : build_adhdeepnet(config);
}

std::vector<std::array<double, 2>> predict_batch(Model& model, const Tensor& batch) {
    NoGradGuard guard;
    const Tensor probs = softmax(model.forward(batch, false), 1);
    const std::size_t n = probs.dim(0), k = probs.dim(1);
    if (k != 2) throw StateError("predict_batch: model has " + std::to_string(k) + " classes, expected 2");
    std::vector<std::array<double, 2>> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = {double(probs.data()[i * k]), double(probs.data()[i * k + 1])};
    return out;
}

std::array<double, 2> predict_segment(Model& model, const Tensor& trial) {
    if (trial.rank() != 4 || trial.dim(0) != 1)
        throw DimensionError("predict_segment expects one trial [1,1,E,T], got " + shape_str(trial.shape()));
    return predict_batch(model, trial).front();
}

// --- TrainedModel -----------------------------------------------------------

TrainedModel TrainedModel::capture(const Model& model, TrainingMeta meta) {
    TrainedModel t;
    t.config = model.config();
    for (const auto& nt : model.state()) t.weights.push_back({nt.name, nt.tensor.detach()});
    t.meta = std::move(meta);
    return t;
}

std::unique_ptr<Model> TrainedModel::instantiate() const {
    auto model = build_model(config);
    model->load_state(weights);
    return model;
}

void save_trained(const std::filesystem::path& path, const TrainedModel& trained) {
    save_weights(path, trained.weights);
    json side{{"config", trained.config.to_json()},
              {"meta",
               {{"fold", trained.meta.fold},
                {"hyperparams", trained.meta.hyperparams},
                {"seed", trained.meta.seed},
                {"epochs", trained.meta.epochs}}}};
    write_file_atomic(sidecar_path(path), side.dump(2) + "\n");
}

TrainedModel load_trained(const std::filesystem::path& path) {
    TrainedModel t;
    const auto side_path = sidecar_path(path);
    std::ifstream in(side_path);
    if (!in) throw FormatError("cannot open model sidecar " + side_path.string());
    json side;
    try {
        side = json::parse(in);
        t.config = ModelConfig::from_json(side.at("config"));
        if (side.contains("meta")) {
            const auto& m = side.at("meta");
            t.meta.fold = m.value("fold", -1);
            t.meta.hyperparams = m.value("hyperparams", json::object());
            t.meta.seed = m.value("seed", std::uint64_t{0});
            t.meta.epochs = m.value("epochs", std::size_t{0});
        }
    } catch (const json::exception& e) {
        throw FormatError("malformed model sidecar " + side_path.string() + ": " + e.what());
    }
    t.weights = load_weights(path);
    return t;
}

}  // namespace adhdnet
