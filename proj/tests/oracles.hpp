#pragma once

// Independent reference computations shared by the explain tests and the
// acceptance binary.

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "adhdnet/data.hpp"
#include "adhdnet/model.hpp"

namespace adhdnet::testing {

/// Magnitudes of a zero-padded radix-2 FFT of length n (power of two).
inline std::vector<double> fft_magnitude(std::vector<double> b, std::size_t n) {
    std::vector<std::complex<double>> a(n);
    for (std::size_t i = 0; i < b.size(); ++i) a[i] = b[i];
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const auto w = std::polar(1.0, -2 * std::numbers::pi / double(len));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> wk = 1;
            for (std::size_t k = 0; k < len / 2; ++k, wk *= w) {
                const auto u = a[i + k], v = a[i + k + len / 2] * wk;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
            }
        }
    }
    std::vector<double> m(n);
    for (std::size_t i = 0; i < n; ++i) m[i] = std::abs(a[i]);
    return m;
}

/// Windowed-sinc bandpass centred in [lo, hi) Hz.
inline std::vector<double> bandpass(double lo, double hi, std::size_t taps) {
    std::vector<double> b(taps);
    const double c = (double(taps) - 1) / 2;
    for (std::size_t n = 0; n < taps; ++n) {
        const double t = double(n) - c;
        auto sinc = [&](double f) {
            const double x = 2 * f / kSampleRate;
            return t == 0 ? x : std::sin(std::numbers::pi * x * t) / (std::numbers::pi * t);
        };
        const double hann = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * double(n) / double(taps - 1));
        b[n] = (sinc(hi) - sinc(lo)) * hann;
    }
    return b;
}

inline void set_temporal(Model& m, std::size_t filter, const std::vector<double>& taps) {
    auto data = const_cast<Tensor&>(m.temporal_layer()->weight()).mutable_data();
    const std::size_t k = m.temporal_layer()->weight().dim(3);
    for (std::size_t i = 0; i < k; ++i) data[filter * k + i] = float(i < taps.size() ? taps[i] : 0.0);
}

inline double kmeans_agreement(const Eigen::MatrixXd& pts, const std::vector<int>& truth) {
    Eigen::RowVector2d c0 = pts.row(0), c1 = pts.row(0);
    Eigen::Index far = 0;
    (pts.rowwise() - c0).rowwise().squaredNorm().maxCoeff(&far);
    c1 = pts.row(far);
    std::vector<int> assign(std::size_t(pts.rows()));
    for (int it = 0; it < 50; ++it) {
        Eigen::RowVector2d s0 = Eigen::RowVector2d::Zero(), s1 = s0;
        int n0 = 0, n1 = 0;
        for (Eigen::Index i = 0; i < pts.rows(); ++i) {
            assign[std::size_t(i)] = (pts.row(i) - c0).squaredNorm() <= (pts.row(i) - c1).squaredNorm() ? 0 : 1;
            (assign[std::size_t(i)] ? s1 : s0) += pts.row(i);
            (assign[std::size_t(i)] ? n1 : n0)++;
        }
        if (n0) c0 = s0 / n0;
        if (n1) c1 = s1 / n1;
    }
    std::size_t same = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) same += assign[i] == truth[i];
    return double(std::max(same, truth.size() - same)) / double(truth.size());
}


}  // namespace adhdnet::testing
