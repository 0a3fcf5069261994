#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adhdnet/errors.hpp"

namespace adhdnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

namespace detail {

template <typename Scalar>
struct Node {
    Shape shape;
    std::vector<Scalar> data;
    std::vector<Scalar> grad;  // empty == no gradient
    bool requires_grad = false;
    bool consumed = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads this->grad and accumulates into the inputs' grads.
    std::function<void(Node&)> backward;

    std::vector<Scalar>& grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), Scalar(0));
        return grad;
    }
};

}  // namespace detail

/// Thread-local switch for graph recording. Training threads enable it,
/// inference and evaluation run inside a NoGradGuard.
class GradMode {
public:
    static bool enabled() noexcept { return flag(); }
    static void set_enabled(bool on) noexcept { flag() = on; }

private:
    static bool& flag() noexcept {
        thread_local bool on = true;
        return on;
    }
};

class NoGradGuard {
public:
    NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(previous_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Dense row-major n-d array with optional reverse-mode gradient.
///
/// A BasicTensor is a cheap shared handle: copies alias the same storage and
/// graph node. Operations build the graph on the fly (define-by-run); the
/// graph below a loss is released by backward().
template <typename Scalar>
class BasicTensor {
public:
    using scalar_type = Scalar;
    using node_type = detail::Node<Scalar>;

    BasicTensor() = default;

    explicit BasicTensor(Shape shape, Scalar fill = Scalar(0)) : node_(std::make_shared<node_type>()) {
        node_->data.assign(shape_numel(shape), fill);
        node_->shape = std::move(shape);
    }

    BasicTensor(Shape shape, std::vector<Scalar> values) : node_(std::make_shared<node_type>()) {
        if (shape_numel(shape) != values.size()) {
            throw DimensionError("tensor: shape " + shape_str(shape) + " holds " +
                                 std::to_string(shape_numel(shape)) + " values, got " +
                                 std::to_string(values.size()));
        }
        node_->shape = std::move(shape);
        node_->data = std::move(values);
    }

    static BasicTensor scalar(Scalar value) { return BasicTensor(Shape{}, std::vector<Scalar>{value}); }

    static BasicTensor parameter(Shape shape, std::vector<Scalar> values) {
        BasicTensor t(std::move(shape), std::move(values));
        t.set_requires_grad(true);
        return t;
    }

    static BasicTensor from_node(std::shared_ptr<node_type> node) {
        BasicTensor t;
        t.node_ = std::move(node);
        return t;
    }

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const Scalar> data() const { return node_->data; }
    /// In-place access; only parameters and buffers are mutated this way.
    std::span<Scalar> mutable_data() { return node_->data; }
    Scalar item() const {
        if (numel() != 1) throw DimensionError("item(): tensor " + shape_str(shape()) + " is not a scalar");
        return node_->data[0];
    }

    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    BasicTensor& set_requires_grad(bool on) {
        node_->requires_grad = on;
        return *this;
    }

    bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
    std::span<const Scalar> grad() const { return node_->grad; }
    std::span<Scalar> mutable_grad() { return node_->grad_buffer(); }
    void clear_grad() { node_->grad.clear(); }

    bool is_leaf() const noexcept { return !node_->backward; }

    /// Fresh leaf holding a copy of the values.
    BasicTensor detach() const { return BasicTensor(shape(), node_->data); }

    const std::shared_ptr<node_type>& node() const noexcept { return node_; }

private:
    std::shared_ptr<node_type> node_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Reverse-mode sweep from a scalar loss. Every requires_grad tensor reachable
/// from the loss receives (accumulates) its gradient; the graph is released
/// afterwards, so a second call on the same loss throws StateError.
template <typename Scalar>
void backward(const BasicTensor<Scalar>& loss);

}  // namespace adhdnet
