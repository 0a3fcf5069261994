#pragma once

// Cheap learners for protocol tests: no network, deterministic, and able to
// audit what they were trained and scored on.

#include <atomic>
#include <cstdint>
#include <mutex>
#include <set>

#include "adhdnet/learner.hpp"

namespace adhdnet::testing {

/// Share of first-difference energy in the frontal channels; lower when slow
/// rhythms dominate.
inline double roughness(const Trial& t) {
    double acc = 0;
    for (auto name : kFrontalElectrodes) {
        const auto row = t.window.row(Eigen::Index(electrode_index(name))).cast<double>();
        const double mean = row.mean();
        const double var = (row.array() - mean).square().sum();
        const double dvar = (row.tail(row.size() - 1) - row.head(row.size() - 1)).squaredNorm();
        acc += var > 0 ? dvar / var : 0.0;
    }
    return acc / double(kFrontalElectrodes.size());
}

struct Audit {
    std::mutex mutex;
    std::size_t fits = 0;
    std::size_t scored_pairs = 0;      // predictor calls checked against their training set
    std::size_t overlaps = 0;          // test subject also present in training input
    std::size_t augmented_leaks = 0;   // augmented training trial derived from a scored subject
    std::size_t augmented_seen = 0;
    std::vector<std::set<std::string>> training_sets;
};

/// Nearest class centroid on roughness(); records every fit/predict pairing
/// into `audit`.
class AuditingLearner final : public Learner {
public:
    /// Fits after the first `fail_after` throw TrainingError.
    explicit AuditingLearner(Audit* audit = nullptr, std::size_t fail_after = SIZE_MAX)
        : audit_(audit), fail_after_(fail_after) {}

    std::unique_ptr<Predictor> fit(std::span<const Trial* const> train, const HyperParams&, const TrainSettings&,
                                   std::uint64_t) const override {
        if (calls_.fetch_add(1) >= fail_after_) throw TrainingError("scripted failure");
        double sum[2] = {0, 0};
        std::size_t n[2] = {0, 0};
        std::set<std::string> subjects, augmented_from;
        for (const Trial* t : train) {
            const int c = t->label == Label::ADHD ? 0 : 1;
            sum[c] += roughness(*t);
            ++n[c];
            subjects.insert(t->subject_id);
            if (t->augmented) augmented_from.insert(t->subject_id);
        }
        if (!n[0] || !n[1]) throw TrainingError("both classes required");
        if (audit_) {
            std::lock_guard lock(audit_->mutex);
            ++audit_->fits;
            audit_->training_sets.push_back(subjects);
            for (const Trial* t : train) audit_->augmented_seen += t->augmented;
        }
        return std::make_unique<Model>(sum[0] / double(n[0]), sum[1] / double(n[1]), std::move(subjects),
                                       std::move(augmented_from), audit_);
    }

private:
    class Model final : public Predictor {
    public:
        Model(double adhd, double hc, std::set<std::string> trained, std::set<std::string> augmented, Audit* audit)
            : adhd_(adhd), hc_(hc), trained_(std::move(trained)), augmented_(std::move(augmented)), audit_(audit) {}

        std::vector<std::array<double, 2>> predict(std::span<const Trial* const> trials) override {
            std::vector<std::array<double, 2>> out;
            std::size_t overlaps = 0, leaks = 0;
            for (const Trial* t : trials) {
                overlaps += trained_.count(t->subject_id);
                leaks += augmented_.count(t->subject_id);
                const double r = roughness(*t);
                const double da = std::abs(r - adhd_), dh = std::abs(r - hc_);
                const double p = dh + da > 0 ? dh / (da + dh) : 0.5;
                out.push_back({p, 1 - p});
            }
            if (audit_) {
                std::lock_guard lock(audit_->mutex);
                ++audit_->scored_pairs;
                audit_->overlaps += overlaps;
                audit_->augmented_leaks += leaks;
            }
            return out;
        }

    private:
        double adhd_, hc_;
        std::set<std::string> trained_, augmented_;
        Audit* audit_;
    };

    Audit* audit_;
    std::size_t fail_after_;
    mutable std::atomic<std::size_t> calls_{0};
};

}  // namespace adhdnet::testing
