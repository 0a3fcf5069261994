#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "adhdnet/data.hpp"
#include "adhdnet/model.hpp"
#include "json.hpp"

namespace adhdnet {

/// Half-open frequency interval [low, high) in Hz.
struct Band {
    std::string name;
    double low = 0;
    double high = 0;
};

/// delta, theta, alpha, beta.
std::vector<Band> default_bands();

struct FilterSpectrum {
    std::size_t filter_index = 0;
    std::vector<double> frequencies;  // Hz, uniform over [0, fs/2]
    std::vector<double> amplitude;    // |H(f)|
    std::map<std::string, double> band_means;

    double band_mean(const std::string& band) const;
    /// theta/beta band-mean ratio; 0 when both are 0, +inf when only beta is.
    double theta_beta_ratio() const;
};

inline constexpr std::size_t kDefaultGridSize = 513;

FilterSpectrum frequency_response(std::span<const double> coefficients, std::size_t grid_size = kDefaultGridSize,
                                  double fs = kSampleRate, const std::vector<Band>& bands = default_bands());

struct BandSummary {
    std::vector<FilterSpectrum> spectra;  // by filter index
    std::vector<std::size_t> ranking;     // filter indices, highest theta/beta first
};

BandSummary band_summary(const Model& model, std::size_t grid_size = kDefaultGridSize,
                         const std::vector<Band>& bands = default_bands());

struct SpatialMap {
    std::size_t filter_index = 0;
    std::size_t depth_index = 0;
    std::array<double, kChannelCount> values{};  // canonical electrode order, max |value| = 1 or all 0
};

/// Divides by max |w|; the zero vector stays zero.
std::vector<double> normalize_symmetric(std::span<const double> weights);

/// One map per (temporal filter, depth multiplier) pair.
std::vector<SpatialMap> spatial_maps(const Model& model);

struct TsneSettings {
    double perplexity = 30;
    std::size_t iterations = 1000;
    double early_exaggeration = 12;
    std::size_t exaggeration_iterations = 250;
    double learning_rate = 0;  // 0 selects max(N/12, 50)
    std::uint64_t seed = 0;
    std::size_t kl_every = 50;

    nlohmann::json to_json() const;
    static TsneSettings from_json(const nlohmann::json& j);
};

struct Embedding2D {
    Eigen::MatrixXd points;  // N x 2
    std::vector<Label> labels;
    std::string layer_tag;
    double initial_kl = 0;
    double final_kl = 0;
    std::vector<std::pair<std::size_t, double>> kl_trace;  // (iteration, KL)
};

/// Exact t-SNE on the rows of `data`.
Embedding2D tsne(const Eigen::MatrixXd& data, const TsneSettings& settings = {});

/// Conditional probabilities for one row of squared distances with sigma
/// tuned so that the entropy equals log(perplexity) within tolerance.
/// Returns the achieved perplexity.
double calibrate_row(std::span<const double> squared_distances, std::size_t self, double perplexity,
                     std::span<double> out, double tolerance = 1e-5);

inline const std::vector<std::string>& default_activation_tags() {
    static const std::vector<std::string> tags{"pool1", "inxception", "se2"};
    return tags;
}

/// Flattened inference-mode activations (one row per trial) at each tagged
/// layer. Throws ArgumentError for a tag missing from the topology.
std::map<std::string, Eigen::MatrixXd> layer_activations(Model& model, std::span<const Trial* const> trials,
                                                         const std::vector<std::string>& tags,
                                                         std::size_t batch_size = 64);

// --- artefacts ---------------------------------------------------------------

std::string spectra_csv(const BandSummary& summary);
std::string bands_csv(const BandSummary& summary);
std::string maps_csv(const std::vector<SpatialMap>& maps);
std::string maps_svg(const std::vector<SpatialMap>& maps);
std::string embedding_csv(const Embedding2D& embedding);
std::string embedding_svg(const Embedding2D& embedding);

struct ExplainSettings {
    std::size_t grid_size = kDefaultGridSize;
    std::vector<Band> bands = default_bands();
    std::vector<std::string> tags = default_activation_tags();
    TsneSettings tsne;
    std::size_t max_trials = 600;  // t-SNE is quadratic; larger inputs are subsampled
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
    static ExplainSettings from_json(const nlohmann::json& j);
};

/// Writes spectra.csv, bands.csv, maps.csv, maps.svg and tsne_<tag>.{csv,svg}
/// under out_dir. Tags absent from the topology are skipped with a warning.
/// Returns a JSON summary (ranking, KL values, files written).
nlohmann::json run_explain(Model& model, std::span<const Trial* const> trials, const ExplainSettings& settings,
                           const std::filesystem::path& out_dir);

}  // namespace adhdnet
