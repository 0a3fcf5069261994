#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "adhdnet/errors.hpp"
#include "adhdnet/optimize.hpp"

namespace adhdnet {
namespace {

constexpr double kMinLength = 0.02, kMaxLength = 2.0;
constexpr double kMinSignal = 0.05, kMaxSignal = 20.0;
constexpr double kMinNoise = 1e-8, kMaxNoise = 1.0;
constexpr double kMinDecay = 0.01, kMaxDecay = 20.0;
constexpr double kJitterStart = 1e-6, kJitterMax = 1e-2;

// Log-space parameter vector: lengthscales, signal, noise, [decay].
Eigen::VectorXd pack(const KernelLayout& layout, const GpHyper& h) {
    const auto c = Eigen::Index(layout.continuous.size());
    const bool cat = !layout.categorical.empty();
    Eigen::VectorXd th(c + 2 + (cat ? 1 : 0));
    for (Eigen::Index i = 0; i < c; ++i) th[i] = std::log(h.lengthscales[i]);
    th[c] = std::log(h.signal_variance);
    th[c + 1] = std::log(h.noise_variance);
    if (cat) th[c + 2] = std::log(h.category_decay);
    return th;
}

GpHyper unpack(const KernelLayout& layout, const Eigen::VectorXd& th) {
    const auto c = Eigen::Index(layout.continuous.size());
    auto bounded = [](double log_v, double lo, double hi) { return std::clamp(std::exp(log_v), lo, hi); };
    GpHyper h;
    h.lengthscales.resize(c);
    for (Eigen::Index i = 0; i < c; ++i) h.lengthscales[i] = bounded(th[i], kMinLength, kMaxLength);
    h.signal_variance = bounded(th[c], kMinSignal, kMaxSignal);
    h.noise_variance = bounded(th[c + 1], kMinNoise, kMaxNoise);
    h.category_decay = layout.categorical.empty() ? 1.0 : bounded(th[c + 2], kMinDecay, kMaxDecay);
    return h;
}

Eigen::MatrixXd covariance(const KernelLayout& layout, const GpHyper& h, const Eigen::MatrixXd& x, double diag) {
    const auto n = x.rows();
    Eigen::MatrixXd k(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::VectorXd xi = x.row(i).transpose();
        for (Eigen::Index j = 0; j <= i; ++j) {
            const double v = gp_kernel(layout, h, xi, x.row(j).transpose());
            k(i, j) = v;
            k(j, i) = v;
        }
        k(i, i) += diag;
    }
    return k;
}

struct Standardised {
    Eigen::VectorXd y;
    double mean = 0.0, scale = 1.0;
};

Standardised standardise(const Eigen::VectorXd& y) {
    Standardised s;
    s.mean = y.size() ? y.mean() : 0.0;
    const double var = y.size() ? (y.array() - s.mean).square().mean() : 0.0;
    s.scale = var > 1e-24 ? std::sqrt(var) : 1.0;
    s.y = (y.array() - s.mean) / s.scale;
    return s;
}

}  // namespace

KernelLayout KernelLayout::of(const SearchSpace& space) {
    KernelLayout l;
    for (std::size_t i = 0; i < space.dims().size(); ++i) {
        const auto& d = space.dims()[i];
        if (d.kind == Dimension::Kind::Continuous) l.continuous.push_back(space.offset(i));
        else l.categorical.emplace_back(space.offset(i), d.choices.size());
    }
    return l;
}

KernelLayout KernelLayout::all_continuous(std::size_t dims) {
    KernelLayout l;
    for (std::size_t i = 0; i < dims; ++i) l.continuous.push_back(i);
    return l;
}

GpHyper GpHyper::defaults(const KernelLayout& layout) {
    GpHyper h;
    h.lengthscales = Eigen::VectorXd::Constant(Eigen::Index(layout.continuous.size()), 0.3);
    h.signal_variance = 1.0;
    h.noise_variance = 1e-6;
    h.category_decay = 1.0;
    return h;
}

double gp_kernel(const KernelLayout& layout, const GpHyper& h, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    double r2 = 0.0;
    for (std::size_t i = 0; i < layout.continuous.size(); ++i) {
        const auto at = Eigen::Index(layout.continuous[i]);
        const double d = (a[at] - b[at]) / h.lengthscales[Eigen::Index(i)];
        r2 += d * d;
    }
    const double r = std::sqrt(5.0 * r2);
    double k = (1.0 + r + r * r / 3.0) * std::exp(-r);
    if (!layout.categorical.empty()) {
        std::size_t mismatched = 0;
        for (const auto& [offset, width] : layout.categorical) {
            Eigen::Index ia = 0, ib = 0;
            a.segment(Eigen::Index(offset), Eigen::Index(width)).maxCoeff(&ia);
            b.segment(Eigen::Index(offset), Eigen::Index(width)).maxCoeff(&ib);
            if (ia != ib) ++mismatched;
        }
        k *= std::exp(-h.category_decay * double(mismatched) / double(layout.categorical.size()));
    }
    return h.signal_variance * k;
}

double GaussianProcess::negative_lml(const KernelLayout& layout, const GpHyper& hyper, const Eigen::MatrixXd& x,
                                     const Eigen::VectorXd& y_std) {
    Eigen::LLT<Eigen::MatrixXd> llt(covariance(layout, hyper, x, hyper.noise_variance));
    if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
    const Eigen::VectorXd alpha = llt.solve(y_std);
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    const double v = 0.5 * y_std.dot(alpha) + 0.5 * log_det + 0.5 * double(x.rows()) * std::log(2 * std::numbers::pi);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
}

GaussianProcess::GaussianProcess(KernelLayout layout, Eigen::MatrixXd x, Eigen::VectorXd y, GpHyper hyper)
    : layout_(std::move(layout)), x_(std::move(x)), hyper_(std::move(hyper)) {
    if (x_.rows() == 0 || x_.rows() != y.size()) throw ArgumentError("GP needs matching, non-empty inputs and targets");
    if (!y.allFinite()) throw ArgumentError("GP targets must be finite");
    if (hyper_.lengthscales.size() != Eigen::Index(layout_.continuous.size()))
        throw DimensionError("GP lengthscale count does not match the continuous coordinates");
    const auto s = standardise(y);
    y_mean_ = s.mean;
    y_scale_ = s.scale;
    for (double jitter = 0.0;;) {
        llt_.compute(covariance(layout_, hyper_, x_, hyper_.noise_variance + jitter));
        if (llt_.info() == Eigen::Success) {
            jitter_ = jitter;
            break;
        }
        jitter = jitter == 0.0 ? kJitterStart : 2.0 * jitter;
        if (jitter > kJitterMax) throw TuningError("GP covariance is not positive definite even with jitter");
    }
    alpha_ = llt_.solve(s.y);
    const double log_det = 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
    lml_ = -(0.5 * s.y.dot(alpha_) + 0.5 * log_det + 0.5 * double(x_.rows()) * std::log(2 * std::numbers::pi));
}

GaussianProcess GaussianProcess::fit(KernelLayout layout, Eigen::MatrixXd x, Eigen::VectorXd y, Rng& rng,
                                     const GpFitSettings& settings) {
    GpHyper best = GpHyper::defaults(layout);
    if (x.rows() >= 2) {
        const auto s = standardise(y);
        auto objective = [&](const Eigen::VectorXd& th) { return negative_lml(layout, unpack(layout, th), x, s.y); };
        Eigen::VectorXd best_th = pack(layout, best);
        double best_value = objective(best_th);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        auto log_uniform = [&](double lo, double hi) { return std::log(lo) + unit(rng) * (std::log(hi) - std::log(lo)); };
        for (std::size_t r = 0; r < std::max<std::size_t>(settings.restarts, 1); ++r) {
            Eigen::VectorXd start = pack(layout, GpHyper::defaults(layout));
            if (r > 0) {
                const auto c = Eigen::Index(layout.continuous.size());
                for (Eigen::Index i = 0; i < c; ++i) start[i] = log_uniform(0.05, 5.0);
                start[c] = log_uniform(0.2, 5.0);
                start[c + 1] = log_uniform(1e-6, 1e-1);
                if (!layout.categorical.empty()) start[c + 2] = log_uniform(0.1, 5.0);
            }
            auto result = nelder_mead(objective, start, 0.5, settings.evaluations_per_restart);
            if (result.value < best_value) {
                best_value = result.value;
                best_th = result.x;
            }
        }
        best = unpack(layout, best_th);
    }
    return GaussianProcess(std::move(layout), std::move(x), std::move(y), best);
}

GaussianProcess::Prediction GaussianProcess::predict(const Eigen::VectorXd& x) const {
    Eigen::VectorXd k(x_.rows());
    for (Eigen::Index i = 0; i < x_.rows(); ++i) k[i] = gp_kernel(layout_, hyper_, x, x_.row(i).transpose());
    const double mean = k.dot(alpha_);
    const Eigen::VectorXd v = llt_.matrixL().solve(k);
    const double var = std::max(0.0, hyper_.signal_variance - v.squaredNorm());
    return {y_mean_ + y_scale_ * mean, var * y_scale_ * y_scale_};
}

// --- acquisition ------------------------------------------------------------

double expected_improvement(double mean, double sd, double best) {
    const double gain = best - mean;
    if (!(sd > 0.0)) return std::max(gain, 0.0);
    const double z = gain / sd;
    const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
    const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
    return std::max(0.0, gain * cdf + sd * pdf);
}

double acquisition(double mean, double sd, double best, double kappa, KappaSign sign) {
    if (kappa < 0) throw ArgumentError("kappa must be non-negative");
    const double ei = expected_improvement(mean, sd, best);
    return sign == KappaSign::Penalize ? ei - kappa * sd : ei + kappa * sd;
}

double acquisition(const GaussianProcess& gp, const Eigen::VectorXd& x, double best, double kappa, KappaSign sign) {
    const auto p = gp.predict(x);
    return acquisition(p.mean, std::sqrt(p.variance), best, kappa, sign);
}

// --- Nelder-Mead ------------------------------------------------------------

NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x0,
                             double step, std::size_t max_evaluations, double tolerance) {
    const auto n = x0.size();
    std::vector<Eigen::VectorXd> simplex{x0};
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd v = x0;
        v[i] += step;
        simplex.push_back(v);
    }
    std::size_t evals = 0;
    auto eval = [&](const Eigen::VectorXd& v) {
        ++evals;
        const double r = f(v);
        return std::isnan(r) ? std::numeric_limits<double>::infinity() : r;
    };
    std::vector<double> values;
    for (const auto& v : simplex) values.push_back(eval(v));
    std::vector<std::size_t> order(simplex.size());
    while (evals < max_evaluations) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
        const auto best = order.front(), worst = order.back(), second = order[order.size() - 2];
        if (std::abs(values[worst] - values[best]) <= tolerance * (1.0 + std::abs(values[best]))) break;
        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
        for (std::size_t i = 0; i < simplex.size(); ++i)
            if (i != worst) centroid += simplex[i];
        centroid /= double(n);
        const Eigen::VectorXd reflected = centroid + (centroid - simplex[worst]);
        const double fr = eval(reflected);
        if (fr < values[best]) {
            const Eigen::VectorXd expanded = centroid + 2.0 * (centroid - simplex[worst]);
            const double fe = eval(expanded);
            if (fe < fr) {
                simplex[worst] = expanded;
                values[worst] = fe;
            } else {
                simplex[worst] = reflected;
                values[worst] = fr;
            }
        } else if (fr < values[second]) {
            simplex[worst] = reflected;
            values[worst] = fr;
        } else {
            const bool outside = fr < values[worst];
            const Eigen::VectorXd contracted =
                outside ? Eigen::VectorXd(centroid + 0.5 * (reflected - centroid))
                        : Eigen::VectorXd(centroid + 0.5 * (simplex[worst] - centroid));
            const double fc = eval(contracted);
            if (fc < std::min(fr, values[worst])) {
                simplex[worst] = contracted;
                values[worst] = fc;
            } else {
                for (std::size_t i = 0; i < simplex.size(); ++i) {
                    if (i == best) continue;
                    simplex[i] = simplex[best] + 0.5 * (simplex[i] - simplex[best]);
                    values[i] = eval(simplex[i]);
                }
            }
        }
    }
    const auto it = std::min_element(values.begin(), values.end());
    return {simplex[std::size_t(it - values.begin())], *it, evals};
}

}  // namespace adhdnet
