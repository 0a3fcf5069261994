#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adhdnet/data.hpp"
#include "adhdnet/random.hpp"
#include "json.hpp"

namespace adhdnet {

struct AugEntry {
    int m = 1;            // magnification
    double sigma = 0.01;  // noise standard deviation
};

struct AugCombo {
    int id = 0;  // 1-based position in the sweep
    std::vector<AugEntry> entries;  // one (single) or two (double)

    bool is_double() const noexcept { return entries.size() == 2; }
    /// Empty when valid, otherwise the violated constraint.
    std::string violation() const;
    std::string label() const;
    nlohmann::json to_json() const;
};

/// X + m * noise with noise ~ N(0, sigma^2) per element. The source is not
/// modified; the copy is tagged as augmented.
Trial augment_trial(const Trial& trial, int m, double sigma, Rng& rng);

inline constexpr int kDefaultMagnifications[] = {1, 2, 3};
inline constexpr double kDefaultSigmas[] = {0.1, 0.01, 0.001};

/// |M|*|S| singles, m-major, followed by the canonical doubles: entry (i,j)
/// pairs (M[i], S[j]) with (M[i+1 mod |M|], S[j+1 mod |S|]).
std::vector<AugCombo> enumerate_combos(std::span<const int> magnifications = kDefaultMagnifications,
                                       std::span<const double> sigmas = kDefaultSigmas);

/// Resolves a sweep selection: an array whose items are either combo ids
/// from the default sweep or objects {"entries":[{"m":..,"sigma":..}, ...]}.
/// A null selection yields the full default sweep.
std::vector<AugCombo> select_combos(const nlohmann::json& selection);

/// Source trials followed by their augmented copies: one per trial for a
/// single combo, four per trial ({m1,m2} x {noise1,noise2}) for a double.
/// Noise for each trial comes from a stream derived from (seed, subject,
/// segment), so the output does not depend on trial order.
std::vector<Trial> augment_training_set(std::span<const Trial* const> train, const AugCombo& combo,
                                        std::uint64_t seed);

std::uint64_t trial_stream(std::uint64_t seed, const Trial& trial);

}  // namespace adhdnet
