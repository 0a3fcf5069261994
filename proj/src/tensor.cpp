#include "adhdnet/tensor.hpp"

#include <mutex>
#include <unordered_set>

#include "adhdnet/diagnostics.hpp"

namespace adhdnet {

std::size_t shape_numel(const Shape& shape) noexcept {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

template <typename Scalar>
void backward(const BasicTensor<Scalar>& loss) {
    using NodePtr = std::shared_ptr<detail::Node<Scalar>>;
    if (!loss.defined()) throw ArgumentError("backward: undefined tensor");
    if (loss.numel() != 1) throw ArgumentError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    const NodePtr& root = loss.node();
    if (root->consumed) throw StateError("backward: graph already consumed by a previous backward()");
    if (!root->requires_grad) throw StateError("backward: loss is not connected to any tensor requiring grad");

    // Iterative post-order DFS gives a topological order (inputs first).
    std::vector<NodePtr> order;
    std::unordered_set<const detail::Node<Scalar>*> seen;
    std::vector<std::pair<NodePtr, std::size_t>> stack{{root, 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            NodePtr child = node->inputs[next++];
            if (child->requires_grad && seen.insert(child.get()).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad_buffer().assign(root->data.size(), Scalar(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        auto& node = **it;
        if (node.backward && !node.grad.empty()) node.backward(node);
    }
    for (auto& node : order) {
        if (node->backward) {
            node->backward = nullptr;
            node->inputs.clear();
            node->consumed = true;
        }
    }
    root->consumed = true;
}

template void backward<float>(const BasicTensor<float>&);
template void backward<double>(const BasicTensor<double>&);

namespace {
std::mutex& warning_mutex() {
    static std::mutex m;
    return m;
}
std::vector<std::string>& warning_store() {
    static std::vector<std::string> store;
    return store;
}
}  // namespace

void record_warning(std::string message) {
    std::lock_guard lock(warning_mutex());
    auto& store = warning_store();
    if (store.size() < 1000) store.push_back(std::move(message));
}

std::vector<std::string> take_warnings() {
    std::lock_guard lock(warning_mutex());
    return std::exchange(warning_store(), {});
}

}  // namespace adhdnet
