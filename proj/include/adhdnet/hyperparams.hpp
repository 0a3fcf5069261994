#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "adhdnet/nn.hpp"
#include "json.hpp"

namespace adhdnet {

struct HyperParams {
    double norm_rate = 1.0;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double dropout_rate = 0.25;
    std::size_t batch_size = 32;

    nlohmann::json to_json() const;
    static HyperParams from_json(const nlohmann::json& j);
    bool operator==(const HyperParams&) const = default;
};

struct Dimension {
    enum class Kind { Continuous, Categorical };

    std::string name;
    Kind kind = Kind::Continuous;
    double lo = 0.0;  // continuous bounds, natural units
    double hi = 1.0;
    bool log_scale = false;
    std::vector<std::string> choices;  // categorical labels

    static Dimension continuous(std::string name, double lo, double hi, bool log_scale = false);
    static Dimension categorical(std::string name, std::vector<std::string> choices);
    /// Width of this dimension in the encoded vector.
    std::size_t encoded_width() const { return kind == Kind::Continuous ? 1 : choices.size(); }
};

/// A point holds one value per dimension: the natural value for continuous
/// dimensions and the choice index for categorical ones.
using Point = std::vector<double>;

/// Encoded layout: continuous dimensions min-max scaled to [0,1] (after log10
/// where flagged), categorical dimensions one-hot.
class SearchSpace {
public:
    explicit SearchSpace(std::vector<Dimension> dims);

    /// learning_rate [1e-4,1e-2] log, dropout_rate [0.1,0.6], norm_rate
    /// [0.25,2], batch_size {16,32,64,128}, optimizer {Adam,SGDMomentum,RMSProp}.
    static SearchSpace hyperparameter_default();

    const std::vector<Dimension>& dims() const noexcept { return dims_; }
    std::size_t encoded_size() const noexcept { return encoded_size_; }
    std::size_t offset(std::size_t dim) const { return offsets_.at(dim); }
    std::size_t index_of(std::string_view name) const;

    Eigen::VectorXd encode(const Point& point) const;
    /// Continuous coordinates are clamped to [0,1]; a categorical block
    /// decodes to its argmax.
    Point decode(const Eigen::VectorXd& encoded) const;
    bool contains(const Point& point) const;
    /// Maps unit-cube coordinates (one per dimension) to a point.
    Point from_unit(std::span<const double> u) const;

    /// Requires the hyperparameter dimension names.
    HyperParams to_hyperparams(const Point& point) const;
    Point from_hyperparams(const HyperParams& hp) const;

    nlohmann::json describe_point(const Point& point) const;

private:
    std::vector<Dimension> dims_;
    std::vector<std::size_t> offsets_;
    std::size_t encoded_size_ = 0;
};

}  // namespace adhdnet
