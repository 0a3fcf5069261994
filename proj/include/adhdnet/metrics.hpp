#pragma once

#include <array>
#include <cstddef>
#include <span>

#include "adhdnet/data.hpp"

namespace adhdnet {

/// ADHD is the positive class.
struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::size_t total() const noexcept { return tp + fp + tn + fn; }
    void add(Label predicted, Label actual);
    ConfusionCounts& operator+=(const ConfusionCounts& o);
    bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts confusion(std::span<const Label> predicted, std::span<const Label> actual);

struct Metrics {
    double accuracy = 0, precision = 0, recall = 0, f2 = 0;
};

/// Zero denominators: precision 0 when nothing is predicted positive; recall
/// 1 when there are no positives and none predicted, else 0; F2 0 when both
/// precision and recall are 0. Throws ArgumentError on an empty count.
Metrics compute_metrics(const ConfusionCounts& counts);

double f_beta(double precision, double recall, double beta);

/// Sample-level decision for a probability pair; ties go to ADHD.
Label decide(const std::array<double, 2>& probabilities);

/// Area under the ROC curve from the Mann-Whitney rank statistic, ties
/// averaged. NaN when either class is absent.
double roc_auc(std::span<const double> adhd_scores, std::span<const Label> actual);

}  // namespace adhdnet
