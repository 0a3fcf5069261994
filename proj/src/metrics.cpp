#include "adhdnet/metrics.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

namespace adhdnet {

void ConfusionCounts::add(Label predicted, Label actual) {
    if (actual == Label::ADHD) (predicted == Label::ADHD ? tp : fn) += 1;
    else (predicted == Label::ADHD ? fp : tn) += 1;
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
}

ConfusionCounts confusion(std::span<const Label> predicted, std::span<const Label> actual) {
    if (predicted.size() != actual.size()) throw DimensionError("confusion: prediction and label counts differ");
    ConfusionCounts c;
    for (std::size_t i = 0; i < predicted.size(); ++i) c.add(predicted[i], actual[i]);
    return c;
}

double f_beta(double precision, double recall, double beta) {
    const double b2 = beta * beta;
    const double denom = b2 * precision + recall;
    return denom > 0 ? (1 + b2) * precision * recall / denom : 0.0;
}

Metrics compute_metrics(const ConfusionCounts& c) {
    const std::size_t total = c.total();
    if (total == 0) throw ArgumentError("metrics of an empty confusion matrix");
    Metrics m;
    m.accuracy = double(c.tp + c.tn) / double(total);
    m.precision = c.tp + c.fp ? double(c.tp) / double(c.tp + c.fp) : 0.0;
    if (c.tp + c.fn) m.recall = double(c.tp) / double(c.tp + c.fn);
    else m.recall = c.fp == 0 ? 1.0 : 0.0;
    // Same value as f_beta(precision, recall, 2) under the conventions above,
    // but a single rounding.
    const std::size_t f2_denom = 5 * c.tp + 4 * c.fn + c.fp;
    m.f2 = f2_denom ? double(5 * c.tp) / double(f2_denom) : 0.0;
    return m;
}

Label decide(const std::array<double, 2>& p) { return p[0] >= p[1] ? Label::ADHD : Label::HC; }

double roc_auc(std::span<const double> scores, std::span<const Label> actual) {
    if (scores.size() != actual.size()) throw DimensionError("roc_auc: score and label counts differ");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double r = 0.5 * double(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
        i = j + 1;
    }
    double rank_sum = 0;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (actual[i] == Label::ADHD) {
            rank_sum += rank[i];
            ++pos;
        }
    }
    const std::size_t neg = n - pos;
    if (pos == 0 || neg == 0) return std::numeric_limits<double>::quiet_NaN();
    return (rank_sum - double(pos) * double(pos + 1) / 2.0) / (double(pos) * double(neg));
}

}  // namespace adhdnet
