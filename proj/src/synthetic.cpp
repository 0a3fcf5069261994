#include <cmath>
#include <numbers>

#include "adhdnet/data.hpp"
#include "adhdnet/random.hpp"

namespace adhdnet {
namespace {

// Amplitudes in microvolts RMS.
constexpr double kPinkRms = 10.0;
constexpr double kCommonShare = 0.3;  // fraction of background shared by all channels
constexpr double kThetaRms = 4.0;
constexpr double kBetaRms = 3.0;
constexpr double kAlphaRms = 5.0;
constexpr double kSubjectJitter = 0.2;  // log-normal sd of per-subject band gains
constexpr int kTonesPerBand = 5;

// Kellet's three-pole approximation of a 1/f spectrum, scaled to unit RMS.
std::vector<double> pink_noise(std::size_t n, Rng& rng) {
    std::normal_distribution<double> white(0.0, 1.0);
    double b0 = 0, b1 = 0, b2 = 0;
    constexpr std::size_t burn_in = 512;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n + burn_in; ++i) {
        const double w = white(rng);
        b0 = 0.99765 * b0 + w * 0.0990460;
        b1 = 0.96300 * b1 + w * 0.2965164;
        b2 = 0.57000 * b2 + w * 1.0526913;
        if (i >= burn_in) out[i - burn_in] = b0 + b1 + b2 + w * 0.1848;
    }
    double mean = 0;
    for (double v : out) mean += v;
    mean /= double(n);
    double ss = 0;
    for (double& v : out) {
        v -= mean;
        ss += v * v;
    }
    const double rms = std::sqrt(ss / double(n));
    if (rms > 0)
        for (double& v : out) v /= rms;
    return out;
}

// Sum of random tones inside [lo, hi) Hz with unit RMS.
std::vector<double> band_source(std::size_t n, double lo, double hi, Rng& rng) {
    std::uniform_real_distribution<double> freq(lo, hi), phase(0.0, 2.0 * std::numbers::pi);
    std::vector<double> out(n, 0.0);
    const double amp = std::sqrt(2.0 / kTonesPerBand);
    for (int t = 0; t < kTonesPerBand; ++t) {
        const double w = 2.0 * std::numbers::pi * freq(rng) / kSampleRate, ph = phase(rng);
        for (std::size_t i = 0; i < n; ++i) out[i] += amp * std::sin(w * double(i) + ph);
    }
    return out;
}

bool is_frontal(std::size_t channel) {
    for (auto name : kFrontalElectrodes)
        if (kElectrodes[channel] == name) return true;
    return false;
}

bool is_posterior(std::size_t channel) {
    const auto n = kElectrodes[channel];
    return n == "O1" || n == "O2" || n == "P3" || n == "P4" || n == "Pz" || n == "T5" || n == "T6";
}

EegRecording synth_subject(std::string id, Label label, std::size_t samples, double separation, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    std::normal_distribution<double> jitter(0.0, kSubjectJitter);
    std::uniform_real_distribution<double> gain(0.8, 1.2);

    const double theta_subject = std::exp(jitter(rng)), beta_subject = std::exp(jitter(rng));
    const double theta_shift = label == Label::ADHD ? 1.0 + separation : 1.0 - 0.5 * separation;
    const double beta_shift = label == Label::ADHD ? 1.0 - 0.5 * separation : 1.0 + separation;

    const auto common = pink_noise(samples, rng);
    const auto theta = band_source(samples, 4.0, 8.0, rng);
    const auto beta = band_source(samples, 13.0, 30.0, rng);
    const auto alpha = band_source(samples, 8.0, 13.0, rng);

    EegRecording r;
    r.subject_id = std::move(id);
    r.label = label;
    r.fs = kSampleRate;
    r.samples.resize(Eigen::Index(kChannelCount), Eigen::Index(samples));
    const double own_share = std::sqrt(1.0 - kCommonShare * kCommonShare);
    for (std::size_t c = 0; c < kChannelCount; ++c) {
        const auto own = pink_noise(samples, rng);
        double theta_amp = kThetaRms * theta_subject * gain(rng);
        double beta_amp = kBetaRms * beta_subject * gain(rng);
        const double alpha_amp = kAlphaRms * gain(rng) * (is_posterior(c) ? 1.0 : 0.4);
        if (is_frontal(c)) {
            theta_amp *= theta_shift;
            beta_amp *= beta_shift;
        }
        float* row = r.samples.row(Eigen::Index(c)).data();
        for (std::size_t i = 0; i < samples; ++i) {
            const double background = kPinkRms * (kCommonShare * common[i] + own_share * own[i]);
            row[i] = float(background + theta_amp * theta[i] + beta_amp * beta[i] + alpha_amp * alpha[i]);
        }
    }
    return r;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
    if (!(spec.separation >= 0.0 && spec.separation <= 1.0))
        throw ArgumentError("synthetic separation must lie in [0, 1]");
    if (spec.subjects_per_class == 0) throw ArgumentError("synthetic data needs at least one subject per class");
    const auto samples = std::size_t(std::llround(spec.seconds_per_subject * kSampleRate));
    if (samples < kSegmentLength) throw ArgumentError("synthetic recordings need at least 4 seconds");
    Dataset ds;
    for (Label label : {Label::ADHD, Label::HC}) {
        for (std::size_t i = 0; i < spec.subjects_per_class; ++i) {
            char id[32];
            std::snprintf(id, sizeof id, "%s%03zu", label == Label::ADHD ? "adhd" : "hc", i + 1);
            ds.recordings.push_back(
                synth_subject(id, label, samples, spec.separation, derive_seed(spec.seed, stable_hash(id))));
        }
    }
    return ds;
}

}  // namespace adhdnet
