#pragma once

// Shared fixtures for the unit tests and the acceptance binary.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "adhdnet/data.hpp"
#include "adhdnet/nn.hpp"
#include "adhdnet/random.hpp"

namespace adhdnet::testing {

inline TensorD random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = u(rng);
    TensorD t(std::move(shape), std::move(v));
    if (grad) t.set_requires_grad(true);
    return t;
}

/// Values bounded away from 0 so kinks (ReLU, ELU) stay outside the
/// finite-difference stencil.
inline TensorD random_off_zero(Shape shape, Rng& rng, double margin = 0.05) {
    TensorD t = random_tensor(std::move(shape), rng);
    for (auto& x : t.mutable_data())
        if (std::abs(x) < margin) x = x < 0 ? x - margin : x + margin;
    return t;
}

/// ||a - n|| / (||a|| + ||n||) between the analytic gradient of `f` with
/// respect to each input and a central difference, maximised over inputs.
/// f must build a scalar from the inputs afresh on every call.
inline double gradient_error(const std::function<TensorD(std::vector<TensorD>&)>& f, std::vector<TensorD> inputs,
                             double h = 1e-6) {
    for (auto& t : inputs) t.clear_grad();
    backward(f(inputs));
    double worst = 0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        if (!inputs[k].requires_grad()) continue;
        std::vector<double> analytic(inputs[k].numel(), 0.0);
        if (inputs[k].has_grad()) {
            auto g = inputs[k].grad();
            analytic.assign(g.begin(), g.end());
        }
        double diff = 0, na = 0, nn = 0;
        auto data = inputs[k].mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double keep = data[i];
            double plus, minus;
            {
                NoGradGuard ng;
                data[i] = keep + h;
                plus = f(inputs).item();
                data[i] = keep - h;
                minus = f(inputs).item();
            }
            data[i] = keep;
            const double numeric = (plus - minus) / (2 * h);
            diff += (analytic[i] - numeric) * (analytic[i] - numeric);
            na += analytic[i] * analytic[i];
            nn += numeric * numeric;
        }
        const double denom = std::sqrt(na) + std::sqrt(nn);
        worst = std::max(worst, denom > 1e-12 ? std::sqrt(diff) / denom : std::sqrt(diff));
    }
    return worst;
}

/// Weighted sum with fixed random weights so every output element matters
/// differently.
inline TensorD probe(const TensorD& out, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    TensorD w = random_tensor(out.shape(), rng, -1, 1, false);
    return sum(mul(out, w));
}

/// Two-class synthetic dataset of a few short recordings.
inline Dataset tiny_dataset(std::size_t per_class, double seconds, std::uint64_t seed, double separation = 0.8) {
    SyntheticSpec s;
    s.subjects_per_class = per_class;
    s.seconds_per_subject = seconds;
    s.separation = separation;
    s.seed = seed;
    return generate_synthetic(s);
}

inline std::vector<const Trial*> pointers(const std::vector<Trial>& trials) {
    std::vector<const Trial*> p;
    for (const auto& t : trials) p.push_back(&t);
    return p;
}

}  // namespace adhdnet::testing
