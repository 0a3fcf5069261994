#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Cholesky>

#include "adhdnet/hyperparams.hpp"
#include "adhdnet/learner.hpp"
#include "adhdnet/random.hpp"

namespace adhdnet {

// --- derivative-free minimisation ---------------------------------------------

struct NelderMeadResult {
    Eigen::VectorXd x;
    double value = 0.0;
    std::size_t evaluations = 0;
};

/// Standard simplex search (reflection 1, expansion 2, contraction 0.5,
/// shrink 0.5) with an axis-aligned initial simplex of edge `step`.
NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x0,
                             double step, std::size_t max_evaluations, double tolerance = 1e-10);

// --- Gaussian process surrogate ---------------------------------------------

/// Which encoded coordinates are continuous and which one-hot blocks form
/// categorical variables.
struct KernelLayout {
    std::vector<std::size_t> continuous;
    std::vector<std::pair<std::size_t, std::size_t>> categorical;  // {offset, width}

    static KernelLayout of(const SearchSpace& space);
    static KernelLayout all_continuous(std::size_t dims);
};

struct GpHyper {
    Eigen::VectorXd lengthscales;  // one per continuous coordinate
    double signal_variance = 1.0;  // in standardised target units
    double noise_variance = 1e-6;
    double category_decay = 1.0;   // lambda in exp(-lambda * mismatch fraction)

    static GpHyper defaults(const KernelLayout& layout);
};

/// Matern-5/2 ARD over continuous coordinates times exp(-lambda * fraction of
/// mismatched categorical variables), scaled by signal_variance.
double gp_kernel(const KernelLayout& layout, const GpHyper& hyper, const Eigen::VectorXd& a,
                 const Eigen::VectorXd& b);

struct GpFitSettings {
    std::size_t restarts = 64;
    std::size_t evaluations_per_restart = 60;
};

class GaussianProcess {
public:
    /// Conditions on rows of `x` with targets `y` under fixed hyperparameters.
    GaussianProcess(KernelLayout layout, Eigen::MatrixXd x, Eigen::VectorXd y, GpHyper hyper);

    /// Fits hyperparameters by maximising the marginal likelihood from
    /// multiple Nelder-Mead starts. Fewer than two observations fall back
    /// to GpHyper::defaults.
    static GaussianProcess fit(KernelLayout layout, Eigen::MatrixXd x, Eigen::VectorXd y, Rng& rng,
                               const GpFitSettings& settings = {});

    struct Prediction {
        double mean = 0.0;
        double variance = 0.0;  // latent function, excludes observation noise
    };
    Prediction predict(const Eigen::VectorXd& x) const;

    const GpHyper& hyper() const noexcept { return hyper_; }
    double log_marginal_likelihood() const noexcept { return lml_; }
    /// Prior variance and observation noise variance in target units.
    double prior_variance() const noexcept { return hyper_.signal_variance * y_scale_ * y_scale_; }
    double noise_variance() const noexcept { return hyper_.noise_variance * y_scale_ * y_scale_; }
    double jitter() const noexcept { return jitter_; }
    std::size_t size() const noexcept { return std::size_t(x_.rows()); }

    /// Negative log marginal likelihood of standardised targets, +inf when
    /// the covariance cannot be factorised.
    static double negative_lml(const KernelLayout& layout, const GpHyper& hyper, const Eigen::MatrixXd& x,
                               const Eigen::VectorXd& y_std);

private:
    KernelLayout layout_;
    Eigen::MatrixXd x_;
    GpHyper hyper_;
    double y_mean_ = 0.0, y_scale_ = 1.0;
    double jitter_ = 0.0;
    double lml_ = 0.0;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    Eigen::VectorXd alpha_;
};

// --- acquisition ------------------------------------------------------------

/// Closed-form EI for minimisation.
double expected_improvement(double mean, double sd, double best);

/// Penalize: EI - kappa*sd. Bonus: EI + kappa*sd.
enum class KappaSign { Penalize, Bonus };

double acquisition(double mean, double sd, double best, double kappa, KappaSign sign = KappaSign::Penalize);
double acquisition(const GaussianProcess& gp, const Eigen::VectorXd& x, double best, double kappa,
                   KappaSign sign = KappaSign::Penalize);

// --- Bayesian optimisation loop ---------------------------------------------

struct Observation {
    Point point;
    Eigen::VectorXd encoded;
    double g = 0.0;
    bool failed = false;
};

struct BoHistory {
    std::vector<Observation> observations;

    bool empty() const noexcept { return observations.empty(); }
    std::size_t best_index() const;
    double best_g() const;
    /// Running minimum of g, one entry per observation.
    std::vector<double> best_so_far() const;
};

struct BoSettings {
    double kappa = 0.1;
    KappaSign kappa_sign = KappaSign::Penalize;
    std::size_t candidates = 2048;
    std::size_t refine = 8;
    std::size_t refine_evaluations = 120;
    GpFitSettings gp;

    nlohmann::json to_json() const;
    static BoSettings from_json(const nlohmann::json& j);
};

/// Halton sequence (bases 2,3,5,...) with a random Cranley-Patterson shift;
/// returns n points in the unit cube of dimension `dims`.
std::vector<std::vector<double>> shifted_halton(std::size_t n, std::size_t dims, Rng& rng);

/// First `n` quasi-random points of the search space for a seed.
std::vector<Point> initial_design(const SearchSpace& space, std::size_t n, std::uint64_t seed);

/// Maximises the acquisition over quasi-random candidates crossed with every
/// categorical combination, then refines the best few by Nelder-Mead over
/// the continuous coordinates (clamped to the space).
Point propose_next(const BoHistory& history, const SearchSpace& space, const BoSettings& settings, Rng& rng);

struct TuneSettings {
    std::size_t iterations = 100;
    std::size_t initial_points = 10;
    double failure_value = 0.0;  // g recorded for failed evaluations
    std::uint64_t seed = 0;
    BoSettings bo;
    /// Line-delimited JSON log; existing entries are replayed on start.
    std::optional<std::filesystem::path> log_path;

    nlohmann::json to_json() const;
    static TuneSettings from_json(const nlohmann::json& j);
};

struct TuneResult {
    Point best;
    double best_g = 0.0;
    BoHistory history;
    std::vector<double> best_trace;
};

using Objective = std::function<double(const Point&)>;

/// Minimises `objective` over `space`. Objective exceptions and non-finite
/// values are recorded as settings.failure_value; throws TuningError when
/// every evaluation failed.
TuneResult tune(const Objective& objective, const SearchSpace& space, const TuneSettings& settings);

/// Negative pooled accuracy of the two-way cross fit: train on one half,
/// score the other, and vice versa. Throws ObjectiveError when a class is
/// missing from either half.
double objective_g(const Learner& learner, const HyperParams& hp, std::span<const Trial* const> half1,
                   std::span<const Trial* const> half2, const TrainSettings& settings, std::uint64_t seed);

struct HyperTuneResult {
    HyperParams best;
    TuneResult search;
    std::vector<std::string> half1, half2;  // inner subject bipartition
};

/// Splits `train` into two subject-disjoint halves with both classes and
/// runs tune() on objective_g.
HyperTuneResult tune_hyperparams(const Learner& learner, std::span<const Trial* const> train,
                                 const SearchSpace& space, const TuneSettings& settings,
                                 const TrainSettings& inner);

}  // namespace adhdnet
