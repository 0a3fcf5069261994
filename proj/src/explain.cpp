#include "adhdnet/explain.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "adhdnet/diagnostics.hpp"
#include "adhdnet/errors.hpp"
#include "adhdnet/progress.hpp"
#include "adhdnet/serialize.hpp"

namespace adhdnet {

using json = nlohmann::json;

std::vector<Band> default_bands() {
    return {{"delta", 0.5, 4}, {"theta", 4, 8}, {"alpha", 8, 13}, {"beta", 13, 30}};
}

double FilterSpectrum::band_mean(const std::string& band) const {
    const auto it = band_means.find(band);
    if (it == band_means.end()) throw ArgumentError("no band named " + band);
    return it->second;
}

double FilterSpectrum::theta_beta_ratio() const {
    const double theta = band_mean("theta"), beta = band_mean("beta");
    if (beta > 0) return theta / beta;
    return theta > 0 ? std::numeric_limits<double>::infinity() : 0.0;
}

FilterSpectrum frequency_response(std::span<const double> coefficients, std::size_t grid_size, double fs,
                                  const std::vector<Band>& bands) {
    if (coefficients.empty()) throw ArgumentError("frequency_response: empty coefficients");
    if (grid_size < 129) throw ArgumentError("frequency_response: grid_size must be at least 129");
    if (!(fs > 0)) throw ArgumentError("frequency_response: fs must be positive");
    FilterSpectrum s;
    s.frequencies.resize(grid_size);
    s.amplitude.resize(grid_size);
    for (std::size_t k = 0; k < grid_size; ++k) {
        const double f = 0.5 * fs * double(k) / double(grid_size - 1);
        const double w = -2.0 * std::numbers::pi * f / fs;
        std::complex<double> h = 0;
        for (std::size_t n = 0; n < coefficients.size(); ++n)
            h += coefficients[n] * std::polar(1.0, w * double(n));
        s.frequencies[k] = f;
        s.amplitude[k] = std::abs(h);
    }
    for (const auto& b : bands) {
        double sum = 0;
        std::size_t count = 0;
        for (std::size_t k = 0; k < grid_size; ++k) {
            if (s.frequencies[k] >= b.low && s.frequencies[k] < b.high) {
                sum += s.amplitude[k];
                ++count;
            }
        }
        s.band_means[b.name] = count ? sum / double(count) : 0.0;
    }
    return s;
}

BandSummary band_summary(const Model& model, std::size_t grid_size, const std::vector<Band>& bands) {
    const Conv2dLayer* temporal = model.temporal_layer();
    if (!temporal) throw AnalysisError("band_summary: model has no temporal convolution");
    const Tensor& w = temporal->weight();  // [F,1,1,K]
    if (w.rank() != 4 || w.dim(1) != 1 || w.dim(2) != 1)
        throw AnalysisError("band_summary: unexpected temporal weight shape " + shape_str(w.shape()));
    const std::size_t filters = w.dim(0), taps = w.dim(3);
    BandSummary out;
    const auto data = w.data();
    for (std::size_t f = 0; f < filters; ++f) {
        std::vector<double> b(data.begin() + std::ptrdiff_t(f * taps), data.begin() + std::ptrdiff_t((f + 1) * taps));
        auto s = frequency_response(b, grid_size, kSampleRate, bands);
        s.filter_index = f;
        out.spectra.push_back(std::move(s));
    }
    out.ranking.resize(filters);
    std::iota(out.ranking.begin(), out.ranking.end(), std::size_t{0});
    std::stable_sort(out.ranking.begin(), out.ranking.end(), [&](std::size_t a, std::size_t b) {
        return out.spectra[a].theta_beta_ratio() > out.spectra[b].theta_beta_ratio();
    });
    return out;
}

std::vector<double> normalize_symmetric(std::span<const double> weights) {
    double peak = 0;
    for (double v : weights) peak = std::max(peak, std::abs(v));
    std::vector<double> out(weights.size(), 0.0);
    if (peak == 0) return out;
    for (std::size_t i = 0; i < weights.size(); ++i) out[i] = weights[i] / peak;
    return out;
}

std::vector<SpatialMap> spatial_maps(const Model& model) {
    const DepthwiseConvLayer* depthwise = model.depthwise_layer();
    if (!depthwise) throw AnalysisError("spatial_maps: model has no depthwise layer");
    const Tensor& w = depthwise->weight();  // [C,D,E,1]
    if (w.rank() != 4 || w.dim(2) != kChannelCount || w.dim(3) != 1)
        throw AnalysisError("spatial_maps: unexpected depthwise weight shape " + shape_str(w.shape()));
    const auto data = w.data();
    std::vector<SpatialMap> maps;
    for (std::size_t c = 0; c < w.dim(0); ++c) {
        for (std::size_t d = 0; d < w.dim(1); ++d) {
            const std::size_t base = (c * w.dim(1) + d) * kChannelCount;
            std::vector<double> raw(data.begin() + std::ptrdiff_t(base),
                                    data.begin() + std::ptrdiff_t(base + kChannelCount));
            const auto norm = normalize_symmetric(raw);
            SpatialMap m{c, d, {}};
            std::copy(norm.begin(), norm.end(), m.values.begin());
            maps.push_back(m);
        }
    }
    return maps;
}

// --- t-SNE -----------------------------------------------------------------

json TsneSettings::to_json() const {
    return {{"perplexity", perplexity},
            {"iterations", iterations},
            {"early_exaggeration", early_exaggeration},
            {"exaggeration_iterations", exaggeration_iterations},
            {"learning_rate", learning_rate},
            {"seed", seed},
            {"kl_every", kl_every}};
}

TsneSettings TsneSettings::from_json(const json& j) {
    TsneSettings s;
    s.perplexity = j.value("perplexity", s.perplexity);
    s.iterations = j.value("iterations", s.iterations);
    s.early_exaggeration = j.value("early_exaggeration", s.early_exaggeration);
    s.exaggeration_iterations = j.value("exaggeration_iterations", s.exaggeration_iterations);
    s.learning_rate = j.value("learning_rate", s.learning_rate);
    s.seed = j.value("seed", s.seed);
    s.kl_every = j.value("kl_every", s.kl_every);
    return s;
}

double calibrate_row(std::span<const double> d2, std::size_t self, double perplexity, std::span<double> out,
                     double tolerance) {
    const std::size_t n = d2.size();
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
        if (j != self) dmin = std::min(dmin, d2[j]);
    const double target = std::log(perplexity);
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double achieved = 0;
    for (int it = 0; it < 200; ++it) {
        double sum = 0, weighted = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == self) {
                out[j] = 0;
                continue;
            }
            const double shifted = d2[j] - dmin;
            out[j] = std::exp(-beta * shifted);
            sum += out[j];
            weighted += shifted * out[j];
        }
        // H = log(sum) + beta * E[shifted]; the dmin shift cancels.
        const double entropy = std::log(sum) + beta * weighted / sum;
        for (std::size_t j = 0; j < n; ++j) out[j] /= sum;
        achieved = std::exp(entropy);
        if (std::abs(achieved - perplexity) < tolerance) break;
        if (entropy > target) {
            lo = beta;
            beta = std::isinf(hi) ? beta * 2 : 0.5 * (beta + hi);
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
    return achieved;
}

namespace {

// Pairwise loops rather than Gram-matrix products: every row is computed
// with the same operation order, so identical inputs stay bitwise identical.

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x) {
    const Eigen::Index n = x.rows(), d = x.cols();
    Eigen::MatrixXd out(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        out(i, i) = 0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            double acc = 0;
            for (Eigen::Index k = 0; k < d; ++k) {
                const double diff = x(i, k) - x(j, k);
                acc += diff * diff;
            }
            out(i, j) = out(j, i) = acc;
        }
    }
    return out;
}

/// Top-2 principal component scores. Axes come from whichever Gram matrix is
/// smaller; signs are fixed so each axis has a positive largest component.
Eigen::MatrixXd pca2(const Eigen::MatrixXd& data) {
    const Eigen::RowVectorXd mean = data.colwise().mean();
    const Eigen::MatrixXd centered = data.rowwise() - mean;
    const Eigen::Index n = centered.rows(), d = centered.cols();
    Eigen::MatrixXd axes(d, 2);
    if (d > n) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(centered * centered.transpose());
        for (int k = 0; k < 2; ++k) {
            axes.col(k) = centered.transpose() * es.eigenvectors().col(n - 1 - k);
            const double norm = axes.col(k).norm();
            if (norm > 0) axes.col(k) /= norm;
        }
    } else {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(centered.transpose() * centered);
        for (int k = 0; k < 2; ++k) axes.col(k) = es.eigenvectors().col(d - 1 - k);
    }
    for (int k = 0; k < 2; ++k) {
        Eigen::Index arg;
        axes.col(k).cwiseAbs().maxCoeff(&arg);
        if (axes(arg, k) < 0) axes.col(k) *= -1;
    }
    Eigen::MatrixXd scores(n, 2);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int k = 0; k < 2; ++k) {
            double acc = 0;
            for (Eigen::Index j = 0; j < d; ++j) acc += centered(i, j) * axes(j, k);
            scores(i, k) = acc;
        }
    return scores;
}

/// Student-t affinities 1/(1+|yi-yj|^2) with a zero diagonal, and their sum.
double student_kernel(const Eigen::MatrixXd& y, Eigen::MatrixXd& num) {
    const Eigen::Index n = y.rows();
    num.resize(n, n);
    double z = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        num(i, i) = 0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double dx = y(i, 0) - y(j, 0), dy = y(i, 1) - y(j, 1);
            const double v = 1.0 / (1.0 + dx * dx + dy * dy);
            num(i, j) = num(j, i) = v;
            z += 2 * v;
        }
    }
    return z;
}

double kl_divergence(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y) {
    Eigen::MatrixXd num;
    const double z = student_kernel(y, num);
    double kl = 0;
    for (Eigen::Index i = 0; i < y.rows(); ++i)
        for (Eigen::Index j = 0; j < y.rows(); ++j)
            if (i != j && p(i, j) > 0) kl += p(i, j) * std::log(p(i, j) / std::max(num(i, j) / z, 1e-300));
    return kl;
}

}  // namespace

Embedding2D tsne(const Eigen::MatrixXd& data, const TsneSettings& settings) {
    const Eigen::Index n = data.rows();
    if (data.cols() < 2) throw ArgumentError("tsne: need at least 2 features");
    if (!(settings.perplexity > 0) || double(n) < 3 * settings.perplexity)
        throw ArgumentError("tsne: need at least 3*perplexity points (have " + std::to_string(n) + ")");
    if (!data.allFinite()) throw ArgumentError("tsne: non-finite input");

    const Eigen::MatrixXd d2 = squared_distances(data);
    Eigen::MatrixXd p(n, n);
    std::vector<double> row(static_cast<std::size_t>(n)), di(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) di[std::size_t(j)] = d2(i, j);
        calibrate_row(di, std::size_t(i), settings.perplexity, row);
        for (Eigen::Index j = 0; j < n; ++j) p(i, j) = row[std::size_t(j)];
    }
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i; j < n; ++j) {
            const double v = i == j ? 0.0 : std::max((p(i, j) + p(j, i)) / (2.0 * double(n)), 1e-12);
            p(i, j) = p(j, i) = v;
        }

    Eigen::MatrixXd y = pca2(data);
    const double spread = std::sqrt((y.col(0).array() - y.col(0).mean()).square().mean());
    if (spread > 0 && std::isfinite(spread)) {
        y *= 1e-4 / spread;
    } else {
        Rng rng = make_rng(settings.seed);
        std::normal_distribution<double> normal(0.0, 1e-4);
        for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = normal(rng);
    }

    Embedding2D out;
    out.initial_kl = kl_divergence(p, y);
    out.kl_trace.emplace_back(0, out.initial_kl);
    const double lr = settings.learning_rate > 0 ? settings.learning_rate : std::max(double(n) / 12.0, 50.0);
    Eigen::MatrixXd update = Eigen::MatrixXd::Zero(n, 2), gains = Eigen::MatrixXd::Ones(n, 2), grad(n, 2), num;
    for (std::size_t it = 1; it <= settings.iterations; ++it) {
        const bool early = it <= settings.exaggeration_iterations;
        const double exaggeration = early ? settings.early_exaggeration : 1.0;
        const double momentum = early ? 0.5 : 0.8;
        const double z = student_kernel(y, num);
        // grad_i = 4 * sum_j (exaggeration*p_ij - q_ij) * num_ij * (y_i - y_j)
        for (Eigen::Index i = 0; i < n; ++i) {
            double gx = 0, gy = 0;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (i == j) continue;
                const double w = (exaggeration * p(i, j) - num(i, j) / z) * num(i, j);
                gx += w * (y(i, 0) - y(j, 0));
                gy += w * (y(i, 1) - y(j, 1));
            }
            grad(i, 0) = 4 * gx;
            grad(i, 1) = 4 * gy;
        }
        for (Eigen::Index k = 0; k < grad.size(); ++k) {
            double& g = gains.data()[k];
            g = (grad.data()[k] > 0) != (update.data()[k] > 0) ? g + 0.2 : g * 0.8;
            g = std::max(g, 0.01);
        }
        update = momentum * update - lr * gains.cwiseProduct(grad);
        y += update;
        y.rowwise() -= y.colwise().mean();
        if (settings.kl_every && (it % settings.kl_every == 0 || it == settings.iterations))
            out.kl_trace.emplace_back(it, kl_divergence(p, y));
    }
    out.final_kl = out.kl_trace.back().first == 0 ? kl_divergence(p, y) : out.kl_trace.back().second;
    if (!y.allFinite()) throw AnalysisError("tsne: embedding diverged");
    out.points = std::move(y);
    return out;
}

std::map<std::string, Eigen::MatrixXd> layer_activations(Model& model, std::span<const Trial* const> trials,
                                                         const std::vector<std::string>& tags,
                                                         std::size_t batch_size) {
    for (const auto& tag : tags)
        if (!model.find(tag)) throw ArgumentError("layer_activations: no layer tagged '" + tag + "'");
    if (batch_size == 0) throw ArgumentError("layer_activations: batch_size must be positive");
    std::map<std::string, Eigen::MatrixXd> out;
    NoGradGuard no_grad;
    for (std::size_t start = 0; start < trials.size(); start += batch_size) {
        const auto chunk = trials.subspan(start, std::min(batch_size, trials.size() - start));
        std::map<std::string, Tensor> captures;
        ForwardContext ctx;
        ctx.captures = &captures;
        model.forward(stack_windows(chunk), ctx);
        for (const auto& tag : tags) {
            const Tensor& a = captures.at(tag);
            const std::size_t width = a.numel() / chunk.size();
            auto& m = out[tag];
            if (m.size() == 0) m.resize(Eigen::Index(trials.size()), Eigen::Index(width));
            const auto data = a.data();
            for (std::size_t r = 0; r < chunk.size(); ++r)
                for (std::size_t c = 0; c < width; ++c)
                    m(Eigen::Index(start + r), Eigen::Index(c)) = double(data[r * width + c]);
        }
    }
    return out;
}

// --- artefacts ---------------------------------------------------------------

namespace {

struct Position {
    double x, y;
};

// Approximate 10-20 layout on the unit disc, nose at +y, canonical order.
constexpr std::array<Position, kChannelCount> kLayout = {{
    {0.0, 0.5},    // Fz
    {0.0, 0.0},    // Cz
    {0.0, -0.5},   // Pz
    {-0.5, 0.0},   // C3
    {-0.95, 0.0},  // T3
    {0.5, 0.0},    // C4
    {0.95, 0.0},   // T4
    {-0.3, 0.9},   // Fp1
    {0.3, 0.9},    // Fp2
    {-0.4, 0.5},   // F3
    {0.4, 0.5},    // F4
    {-0.75, 0.55}, // F7
    {0.75, 0.55},  // F8
    {-0.4, -0.5},  // P3
    {0.4, -0.5},   // P4
    {-0.75, -0.55},// T5
    {0.75, -0.55}, // T6
    {-0.3, -0.9},  // O1
    {0.3, -0.9},   // O2
}};

/// Diverging blue-white-red for v in [-1,1].
std::string colour(double v) {
    v = std::clamp(v, -1.0, 1.0);
    const int fade = int(std::lround(255 * (1 - std::abs(v))));
    char buf[8];
    if (v >= 0)
        std::snprintf(buf, sizeof buf, "#ff%02x%02x", fade, fade);
    else
        std::snprintf(buf, sizeof buf, "#%02x%02xff", fade, fade);
    return buf;
}

std::string num(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream s;
    s << std::setprecision(10) << v;
    return s.str();
}

}  // namespace

std::string spectra_csv(const BandSummary& summary) {
    std::ostringstream out;
    out << "filter,f,amplitude\n";
    for (const auto& s : summary.spectra)
        for (std::size_t k = 0; k < s.frequencies.size(); ++k)
            out << s.filter_index << ',' << num(s.frequencies[k]) << ',' << num(s.amplitude[k]) << '\n';
    return out.str();
}

std::string bands_csv(const BandSummary& summary) {
    std::ostringstream out;
    out << "filter";
    std::vector<std::string> names;
    if (!summary.spectra.empty())
        for (const auto& [name, _] : summary.spectra.front().band_means) names.push_back(name);
    for (const auto& n : names) out << ',' << n;
    out << ",theta_beta_ratio,rank\n";
    std::vector<std::size_t> rank_of(summary.spectra.size());
    for (std::size_t r = 0; r < summary.ranking.size(); ++r) rank_of[summary.ranking[r]] = r + 1;
    for (const auto& s : summary.spectra) {
        out << s.filter_index;
        for (const auto& n : names) out << ',' << num(s.band_means.at(n));
        out << ',' << num(s.theta_beta_ratio()) << ',' << rank_of[s.filter_index] << '\n';
    }
    return out.str();
}

std::string maps_csv(const std::vector<SpatialMap>& maps) {
    std::ostringstream out;
    out << "filter,depth";
    for (auto e : kElectrodes) out << ',' << e;
    out << '\n';
    for (const auto& m : maps) {
        out << m.filter_index << ',' << m.depth_index;
        for (double v : m.values) out << ',' << num(v);
        out << '\n';
    }
    return out.str();
}

std::string maps_svg(const std::vector<SpatialMap>& maps) {
    constexpr int cell = 120, per_row = 8, radius = 50;
    const int rows = int((maps.size() + per_row - 1) / per_row);
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << cell * per_row << "\" height=\""
        << cell * std::max(rows, 1) << "\" font-family=\"sans-serif\" font-size=\"8\">\n";
    for (std::size_t i = 0; i < maps.size(); ++i) {
        const double cx = cell * double(i % per_row) + cell / 2.0;
        const double cy = cell * double(i / per_row) + cell / 2.0 + 6;
        out << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"" << radius
            << "\" fill=\"none\" stroke=\"#444\"/>\n";
        out << "<text x=\"" << cx << "\" y=\"" << cy - radius - 4 << "\" text-anchor=\"middle\">filter "
            << maps[i].filter_index << " d" << maps[i].depth_index << "</text>\n";
        for (std::size_t e = 0; e < kChannelCount; ++e) {
            out << "<circle cx=\"" << cx + kLayout[e].x * (radius - 6) << "\" cy=\"" << cy - kLayout[e].y * (radius - 6)
                << "\" r=\"5\" fill=\"" << colour(maps[i].values[e]) << "\" stroke=\"#888\"><title>"
                << kElectrodes[e] << ' ' << num(maps[i].values[e]) << "</title></circle>\n";
        }
    }
    out << "</svg>\n";
    return out.str();
}

std::string embedding_csv(const Embedding2D& e) {
    std::ostringstream out;
    out << "x,y,label\n";
    for (Eigen::Index i = 0; i < e.points.rows(); ++i) {
        out << num(e.points(i, 0)) << ',' << num(e.points(i, 1)) << ',';
        out << (std::size_t(i) < e.labels.size() ? std::string(to_string(e.labels[std::size_t(i)])) : "") << '\n';
    }
    return out.str();
}

std::string embedding_svg(const Embedding2D& e) {
    constexpr double size = 480, margin = 20;
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
        << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
    out << "<text x=\"" << margin << "\" y=\"14\">" << e.layer_tag << " (KL " << num(e.final_kl) << ")</text>\n";
    if (e.points.rows() > 0) {
        const Eigen::Vector2d lo = e.points.colwise().minCoeff(), hi = e.points.colwise().maxCoeff();
        const Eigen::Vector2d span = (hi - lo).cwiseMax(1e-12);
        for (Eigen::Index i = 0; i < e.points.rows(); ++i) {
            const double x = margin + (e.points(i, 0) - lo(0)) / span(0) * (size - 2 * margin);
            const double y = size - margin - (e.points(i, 1) - lo(1)) / span(1) * (size - 2 * margin);
            const bool adhd = std::size_t(i) < e.labels.size() && e.labels[std::size_t(i)] == Label::ADHD;
            out << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"2.5\" fill=\"" << (adhd ? "#d62728" : "#1f77b4")
                << "\"/>\n";
        }
    }
    out << "</svg>\n";
    return out.str();
}

json ExplainSettings::to_json() const {
    json b = json::array();
    for (const auto& band : bands) b.push_back({{"name", band.name}, {"low", band.low}, {"high", band.high}});
    return {{"grid_size", grid_size}, {"bands", b},         {"tags", tags},
            {"tsne", tsne.to_json()}, {"max_trials", max_trials}, {"seed", seed}};
}

ExplainSettings ExplainSettings::from_json(const json& j) {
    ExplainSettings s;
    s.grid_size = j.value("grid_size", s.grid_size);
    if (j.contains("bands")) {
        s.bands.clear();
        for (const auto& b : j.at("bands"))
            s.bands.push_back({b.at("name").get<std::string>(), b.at("low").get<double>(), b.at("high").get<double>()});
    }
    if (j.contains("tags")) s.tags = j.at("tags").get<std::vector<std::string>>();
    if (j.contains("tsne")) s.tsne = TsneSettings::from_json(j.at("tsne"));
    s.max_trials = j.value("max_trials", s.max_trials);
    s.seed = j.value("seed", s.seed);
    return s;
}

json run_explain(Model& model, std::span<const Trial* const> trials, const ExplainSettings& settings,
                 const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    json summary;
    std::vector<std::string> files;
    auto write = [&](const std::string& name, const std::string& contents) {
        write_file_atomic(out_dir / name, contents);
        files.push_back(name);
    };

    const auto bands = band_summary(model, settings.grid_size, settings.bands);
    write("spectra.csv", spectra_csv(bands));
    write("bands.csv", bands_csv(bands));
    summary["theta_beta_ranking"] = bands.ranking;

    const auto maps = spatial_maps(model);
    write("maps.csv", maps_csv(maps));
    write("maps.svg", maps_svg(maps));

    std::vector<const Trial*> chosen(trials.begin(), trials.end());
    if (chosen.size() > settings.max_trials) {
        Rng rng = make_rng(derive_seed(settings.seed, 0x75e));
        std::vector<std::size_t> idx(chosen.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(settings.max_trials);
        std::sort(idx.begin(), idx.end());
        std::vector<const Trial*> sub;
        for (auto i : idx) sub.push_back(chosen[i]);
        chosen = std::move(sub);
    }
    std::vector<std::string> tags;
    for (const auto& t : settings.tags) {
        if (model.find(t))
            tags.push_back(t);
        else
            record_warning("explain: layer '" + t + "' not present in this topology; skipped");
    }
    json embeddings = json::object();
    if (!chosen.empty() && !tags.empty()) {
        const auto acts = layer_activations(model, chosen, tags);
        std::vector<Label> labels;
        for (const Trial* t : chosen) labels.push_back(t->label);
        for (const auto& tag : tags) {
            TsneSettings ts = settings.tsne;
            ts.seed = derive_seed(settings.seed, stable_hash(tag));
            if (double(chosen.size()) < 3 * ts.perplexity) {
                ts.perplexity = std::max(1.0, std::floor(double(chosen.size()) / 3.0));
                record_warning("explain: perplexity lowered to " + num(ts.perplexity) + " for " +
                               std::to_string(chosen.size()) + " trials");
            }
            emit_progress({{"event", "tsne_start"}, {"layer", tag}, {"points", chosen.size()}});
            Embedding2D e = tsne(acts.at(tag), ts);
            e.labels = labels;
            e.layer_tag = tag;
            write("tsne_" + tag + ".csv", embedding_csv(e));
            write("tsne_" + tag + ".svg", embedding_svg(e));
            // Unstructured activations can end above the collapsed-start KL; report rather than fail.
            const bool decreased = e.final_kl < e.initial_kl;
            if (!decreased) record_warning("explain: t-SNE KL did not decrease for " + tag);
            embeddings[tag] = {{"initial_kl", e.initial_kl}, {"final_kl", e.final_kl}, {"kl_decreased", decreased},
                               {"points", chosen.size()}, {"features", acts.at(tag).cols()}};
        }
    }
    summary["tsne"] = embeddings;
    summary["files"] = files;
    return summary;
}

}  // namespace adhdnet
