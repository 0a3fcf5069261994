#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "adhdnet/layers.hpp"
#include "json.hpp"

namespace adhdnet {

enum class Architecture { ADHDeepNet, EEGNet };

std::string_view to_string(Architecture arch);
Architecture architecture_from_string(std::string_view name);

struct ModelConfig {
    Architecture architecture = Architecture::ADHDeepNet;
    std::size_t channels = 19;          // E
    std::size_t time_steps = 512;       // T
    std::size_t temporal_filters = 64;  // F1
    std::size_t temporal_kernel = 64;
    std::size_t depth_multiplier = 2;  // D
    std::size_t pool_window = 2;
    InXceptionConfig inxception;
    std::size_t separable_filters = 64;  // F2
    std::size_t separable_kernel = 64;
    std::size_t se_ratio = 8;
    double dropout_rate = 0.25;
    std::size_t classes = 2;
    bool use_inxception = true;
    bool use_se = true;
    // Baseline-only stage geometry.
    std::size_t eegnet_pool1 = 4;
    std::size_t eegnet_separable_kernel = 16;
    std::size_t eegnet_pool2 = 8;

    /// Every violated invariant, empty when buildable.
    std::vector<std::string> violations() const;
    /// Throws ConstructionError listing all violations.
    void validate() const;

    /// Resolves the ablation flags: with both disabled the baseline topology
    /// is built regardless of `architecture`.
    Architecture effective_architecture() const;

    /// Same topology at widths that train in seconds per fold on one core.
    static ModelConfig desk();

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

class Model {
public:
    Model(ModelConfig config, std::vector<std::unique_ptr<Layer>> layers);

    const ModelConfig& config() const noexcept { return config_; }

    /// Logits [N,K] for input [N,1,E,T].
    Tensor forward(const Tensor& input, ForwardContext& ctx);
    Tensor forward(const Tensor& input, bool training, Rng* rng = nullptr);

    std::vector<NamedTensor> parameters() const;
    std::vector<NamedTensor> buffers() const;
    /// parameters() followed by buffers(); what a weight file holds.
    std::vector<NamedTensor> state() const;
    std::vector<Tensor> parameter_tensors() const;
    std::size_t parameter_count() const;

    /// Copies values from `tensors` into this model. Names and shapes must
    /// cover state() exactly.
    void load_state(std::span<const NamedTensor> tensors);

    void initialize(std::uint64_t seed);
    void set_dropout_rate(double rate);
    void clear_grads();

    /// Plain-text table: layer, kind, output shape, parameter count.
    std::string describe() const;

    const std::vector<std::unique_ptr<Layer>>& layers() const noexcept { return layers_; }
    Layer* find(std::string_view name) const;
    DenseLayer& classifier() const;
    Conv2dLayer* temporal_layer() const;
    DepthwiseConvLayer* depthwise_layer() const;

private:
    void check_input(const Tensor& input) const;

    ModelConfig config_;
    std::vector<std::unique_ptr<Layer>> layers_;
};

std::unique_ptr<Model> build_adhdeepnet(const ModelConfig& config);
std::unique_ptr<Model> build_eegnet_baseline(const ModelConfig& config);
/// Dispatches on config.effective_architecture().
std::unique_ptr<Model> build_model(const ModelConfig& config);

/// (p_ADHD, p_HC) for one trial [1,1,E,T] in inference mode.
std::array<double, 2> predict_segment(Model& model, const Tensor& trial);
/// Row-wise class probabilities for a batch [N,1,E,T] in inference mode.
std::vector<std::array<double, 2>> predict_batch(Model& model, const Tensor& batch);

struct TrainingMeta {
    int fold = -1;
    nlohmann::json hyperparams = nlohmann::json::object();
    std::uint64_t seed = 0;
    std::size_t epochs = 0;
};

struct TrainedModel {
    ModelConfig config;
    std::vector<NamedTensor> weights;
    TrainingMeta meta;

    static TrainedModel capture(const Model& model, TrainingMeta meta);
    /// Builds the topology from config and loads the weights into it.
    std::unique_ptr<Model> instantiate() const;
};

/// Writes `path` (weight container) and a sidecar `path` with extension
/// .json holding config and metadata.
void save_trained(const std::filesystem::path& path, const TrainedModel& trained);
TrainedModel load_trained(const std::filesystem::path& path);

}  // namespace adhdnet
