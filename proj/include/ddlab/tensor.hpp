#pragma once

// Reverse-mode automatic differentiation over dense row-major tensors.
//
// A Tensor is a cheap handle to a shared node. Every op that touches a
// tensor with requires_grad() records its inputs and a backward rule on the
// output node; backward() walks that graph in reverse topological order.
// Graphs are confined to one thread. Parameters may be read concurrently by
// graphs that do not require gradients.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ddlab/errors.hpp"

namespace ddlab {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

namespace detail {
inline thread_local bool grad_recording = true;
}

// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
   public:
    NoGradGuard() : previous_(detail::grad_recording) { detail::grad_recording = false; }
    ~NoGradGuard() { detail::grad_recording = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until the first gradient reaches this node
    bool requires_grad = false;
    bool backward_done = false;
    std::vector<std::shared_ptr<TensorNode>> inputs;
    // Reads self.grad and accumulates into the grads of self.inputs.
    std::function<void(TensorNode&)> backward_fn;

    std::vector<T>& ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

template <typename T>
class Tensor {
   public:
    using value_type = T;
    using Node = TensorNode<T>;

    Tensor() = default;

    explicit Tensor(Shape shape, bool requires_grad = false) : node_(std::make_shared<Node>()) {
        for (auto e : shape)
            if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
        node_->data.assign(numel(shape), T(0));
        node_->shape = std::move(shape);
        node_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false) : node_(std::make_shared<Node>()) {
        if (numel(shape) != values.size())
            throw DimensionError("shape " + shape_str(shape) + " holds " + std::to_string(numel(shape)) +
                                 " values, got " + std::to_string(values.size()));
        node_->shape = std::move(shape);
        node_->data = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor scalar(T value, bool requires_grad = false) { return Tensor({1}, {value}, requires_grad); }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t size() const { return node_->data.size(); }

    std::span<T> data() { return node_->data; }
    std::span<const T> data() const { return node_->data; }
    T item() const {
        if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }
    T operator[](std::size_t i) const { return node_->data[i]; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<T> grad() { return node_->grad; }
    std::span<const T> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    // A copy of the values with no tape history.
    Tensor detach() const { return Tensor(shape(), node_->data, false); }

    Node& node() const { return *node_; }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

    // Builds the output of an op. Inputs are only recorded when one of them
    // requires a gradient, so inference graphs hold no history.
    static Tensor from_op(Shape shape, std::vector<T> values, std::initializer_list<Tensor> inputs,
                          std::function<void(Node&)> backward) {
        Tensor out(std::move(shape), std::move(values));
        bool needs = false;
        for (const auto& in : inputs) needs = needs || in.requires_grad();
        needs = needs && detail::grad_recording;
        if (needs) {
            out.node_->requires_grad = true;
            for (const auto& in : inputs) out.node_->inputs.push_back(in.node_);
            out.node_->backward_fn = std::move(backward);
        }
        return out;
    }

    static Tensor from_op(Shape shape, std::vector<T> values, const std::vector<Tensor>& inputs,
                          std::function<void(Node&)> backward) {
        Tensor out(std::move(shape), std::move(values));
        bool needs = detail::grad_recording &&
                     std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
        if (needs) {
            out.node_->requires_grad = true;
            for (const auto& in : inputs) out.node_->inputs.push_back(in.node_);
            out.node_->backward_fn = std::move(backward);
        }
        return out;
    }

   private:
    std::shared_ptr<Node> node_;
};

// Accumulates d(loss)/d(x) into every requires-grad tensor reachable from
// loss. Gradients add up across shared subexpressions and across calls on
// different losses; a given loss may only be back-propagated once.
template <typename T>
void backward(Tensor<T>& loss) {
    using Node = TensorNode<T>;
    if (loss.size() != 1) throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad()) throw ContractError("backward() on a tensor that is not on the tape");
    Node& root = loss.node();
    if (root.backward_done) throw ContractError("backward() called twice on the same loss");

    // Iterative post-order DFS gives a topological order (inputs first).
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{&root, 0}};
    seen.insert(&root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.ensure_grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
    root.backward_done = true;
}

}  // namespace ddlab
