#include "adhdnet/hyperparams.hpp"

#include <algorithm>
#include <cmath>

#include "adhdnet/errors.hpp"

namespace adhdnet {

nlohmann::json HyperParams::to_json() const {
    return {{"norm_rate", norm_rate},
            {"learning_rate", learning_rate},
            {"optimizer", std::string(to_string(optimizer))},
            {"dropout_rate", dropout_rate},
            {"batch_size", batch_size}};
}

HyperParams HyperParams::from_json(const nlohmann::json& j) {
    HyperParams h;
    h.norm_rate = j.value("norm_rate", h.norm_rate);
    h.learning_rate = j.value("learning_rate", h.learning_rate);
    if (j.contains("optimizer")) h.optimizer = optimizer_kind_from_string(j.at("optimizer").get<std::string>());
    h.dropout_rate = j.value("dropout_rate", h.dropout_rate);
    h.batch_size = j.value("batch_size", h.batch_size);
    if (!(h.norm_rate > 0) || !(h.learning_rate > 0) || !(h.dropout_rate >= 0 && h.dropout_rate < 1) ||
        h.batch_size == 0)
        throw ArgumentError("hyperparameters out of domain: " + j.dump());
    return h;
}

Dimension Dimension::continuous(std::string name, double lo, double hi, bool log_scale) {
    if (!(lo < hi)) throw ArgumentError("dimension " + name + ": lower bound must be below upper bound");
    if (log_scale && lo <= 0) throw ArgumentError("dimension " + name + ": log scale needs positive bounds");
    Dimension d;
    d.name = std::move(name);
    d.kind = Kind::Continuous;
    d.lo = lo;
    d.hi = hi;
    d.log_scale = log_scale;
    return d;
}

Dimension Dimension::categorical(std::string name, std::vector<std::string> choices) {
    if (choices.empty()) throw ArgumentError("dimension " + name + ": no choices");
    Dimension d;
    d.name = std::move(name);
    d.kind = Kind::Categorical;
    d.choices = std::move(choices);
    return d;
}

SearchSpace::SearchSpace(std::vector<Dimension> dims) : dims_(std::move(dims)) {
    if (dims_.empty()) throw ArgumentError("search space has no dimensions");
    for (const auto& d : dims_) {
        offsets_.push_back(encoded_size_);
        encoded_size_ += d.encoded_width();
    }
}

SearchSpace SearchSpace::hyperparameter_default() {
    return SearchSpace({
        Dimension::continuous("learning_rate", 1e-4, 1e-2, true),
        Dimension::continuous("dropout_rate", 0.1, 0.6),
        Dimension::continuous("norm_rate", 0.25, 2.0),
        Dimension::categorical("batch_size", {"16", "32", "64", "128"}),
        Dimension::categorical("optimizer", {"Adam", "SGDMomentum", "RMSProp"}),
    });
}

std::size_t SearchSpace::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < dims_.size(); ++i)
        if (dims_[i].name == name) return i;
    throw ArgumentError("search space has no dimension '" + std::string(name) + "'");
}

Eigen::VectorXd SearchSpace::encode(const Point& point) const {
    if (point.size() != dims_.size()) throw DimensionError("point has wrong number of dimensions");
    Eigen::VectorXd out = Eigen::VectorXd::Zero(Eigen::Index(encoded_size_));
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        const auto& d = dims_[i];
        const auto at = Eigen::Index(offsets_[i]);
        if (d.kind == Dimension::Kind::Continuous) {
            out[at] = d.log_scale ? (std::log10(point[i]) - std::log10(d.lo)) / (std::log10(d.hi) - std::log10(d.lo))
                                  : (point[i] - d.lo) / (d.hi - d.lo);
        } else {
            const auto k = std::size_t(point[i]);
            if (point[i] < 0 || k >= d.choices.size() || double(k) != point[i])
                throw ArgumentError("dimension " + d.name + ": invalid choice index");
            out[at + Eigen::Index(k)] = 1.0;
        }
    }
    return out;
}

Point SearchSpace::decode(const Eigen::VectorXd& encoded) const {
    if (std::size_t(encoded.size()) != encoded_size_) throw DimensionError("encoded vector has wrong length");
    Point out(dims_.size());
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        const auto& d = dims_[i];
        const auto at = Eigen::Index(offsets_[i]);
        if (d.kind == Dimension::Kind::Continuous) {
            const double u = std::clamp(encoded[at], 0.0, 1.0);
            out[i] = d.log_scale ? std::pow(10.0, std::log10(d.lo) + u * (std::log10(d.hi) - std::log10(d.lo)))
                                 : d.lo + u * (d.hi - d.lo);
            out[i] = std::clamp(out[i], d.lo, d.hi);
        } else {
            Eigen::Index best = 0;
            encoded.segment(at, Eigen::Index(d.choices.size())).maxCoeff(&best);
            out[i] = double(best);
        }
    }
    return out;
}

bool SearchSpace::contains(const Point& point) const {
    if (point.size() != dims_.size()) return false;
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        const auto& d = dims_[i];
        if (d.kind == Dimension::Kind::Continuous) {
            if (!(point[i] >= d.lo && point[i] <= d.hi)) return false;
        } else if (!(point[i] >= 0 && point[i] < double(d.choices.size()) && point[i] == std::floor(point[i]))) {
            return false;
        }
    }
    return true;
}

Point SearchSpace::from_unit(std::span<const double> u) const {
    if (u.size() != dims_.size()) throw DimensionError("unit coordinates have wrong length");
    Point out(dims_.size());
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        const auto& d = dims_[i];
        const double x = std::clamp(u[i], 0.0, 1.0);
        if (d.kind == Dimension::Kind::Continuous) {
            out[i] = d.log_scale ? std::pow(10.0, std::log10(d.lo) + x * (std::log10(d.hi) - std::log10(d.lo)))
                                 : d.lo + x * (d.hi - d.lo);
            out[i] = std::clamp(out[i], d.lo, d.hi);
        } else {
            out[i] = double(std::min(d.choices.size() - 1, std::size_t(x * double(d.choices.size()))));
        }
    }
    return out;
}

HyperParams SearchSpace::to_hyperparams(const Point& point) const {
    if (!contains(point)) throw ArgumentError("point lies outside the search space");
    HyperParams h;
    h.learning_rate = point[index_of("learning_rate")];
    h.dropout_rate = point[index_of("dropout_rate")];
    h.norm_rate = point[index_of("norm_rate")];
    const auto b = index_of("batch_size");
    h.batch_size = std::stoul(dims_[b].choices[std::size_t(point[b])]);
    const auto o = index_of("optimizer");
    h.optimizer = optimizer_kind_from_string(dims_[o].choices[std::size_t(point[o])]);
    return h;
}

Point SearchSpace::from_hyperparams(const HyperParams& hp) const {
    Point p(dims_.size(), 0.0);
    p[index_of("learning_rate")] = hp.learning_rate;
    p[index_of("dropout_rate")] = hp.dropout_rate;
    p[index_of("norm_rate")] = hp.norm_rate;
    auto pick = [&](std::string_view dim, const std::string& label) {
        const auto i = index_of(dim);
        const auto& c = dims_[i].choices;
        const auto it = std::find(c.begin(), c.end(), label);
        if (it == c.end()) throw ArgumentError("value " + label + " is not a choice of " + std::string(dim));
        p[i] = double(it - c.begin());
    };
    pick("batch_size", std::to_string(hp.batch_size));
    pick("optimizer", std::string(to_string(hp.optimizer)));
    return p;
}

nlohmann::json SearchSpace::describe_point(const Point& point) const {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        const auto& d = dims_[i];
        if (d.kind == Dimension::Kind::Continuous) j[d.name] = point[i];
        else j[d.name] = d.choices.at(std::size_t(point[i]));
    }
    return j;
}

}  // namespace adhdnet
