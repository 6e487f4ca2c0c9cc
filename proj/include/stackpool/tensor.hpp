#pragma once

// Dense tensor with a dynamic reverse-mode tape.
//
// A Tensor is a cheap handle (shared ownership) onto a node holding shape,
// data, an optional gradient buffer and, for tensors produced by recorded
// operations, the parents and backward closure of that operation.  Recording
// only happens when grad mode is enabled and at least one input requires a
// gradient, so inference code pays nothing for the tape.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace stackpool {

using Shape = std::vector<std::size_t>;

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct GraphError : std::logic_error {
    using std::logic_error::logic_error;
};

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ')';
    return os.str();
}

inline void check_extents(const Shape& shape) {
    for (auto e : shape)
        if (e == 0) throw ShapeError("tensor extents must be >= 1, got " + to_string(shape));
}

namespace detail {

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until something accumulates into it
    bool requires_grad = false;
    std::uint64_t version = 0;

    // Recorded operation (empty for leaves and constants).
    const char* op = nullptr;
    std::vector<std::shared_ptr<Node>> parents;
    std::vector<std::uint64_t> parent_versions;
    std::function<void(Node&)> backward_fn;
    bool consumed = false;

    bool is_leaf() const { return op == nullptr; }

    std::vector<T>& grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), T{0});
        return grad;
    }
};

}  // namespace detail

/// Disables recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

template <typename T>
class Tensor {
public:
    using value_type = T;
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    Tensor() = default;

    static Tensor from(Shape shape, std::vector<T> values) {
        check_extents(shape);
        if (numel(shape) != values.size())
            throw ShapeError("shape " + to_string(shape) + " needs " + std::to_string(numel(shape)) +
                             " values, got " + std::to_string(values.size()));
        auto node = std::make_shared<detail::Node<T>>();
        node->shape = std::move(shape);
        node->data = std::move(values);
        return Tensor(std::move(node));
    }

    static Tensor full(Shape shape, T value) {
        check_extents(shape);
        auto n = numel(shape);
        return from(std::move(shape), std::vector<T>(n, value));
    }

    static Tensor zeros(Shape shape) { return full(std::move(shape), T{0}); }
    static Tensor ones(Shape shape) { return full(std::move(shape), T{1}); }
    static Tensor scalar(T value) { return from({}, {value}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node().shape; }
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t i) const { return shape().at(i); }
    std::size_t size() const { return node().data.size(); }

    std::span<const T> data() const { return node().data; }
    const T& operator[](std::size_t i) const { return node().data[i]; }

    /// Writable view.  Bumps the version so a recorded op that saved this
    /// tensor refuses to run its backward on stale values.
    std::span<T> mutable_data() {
        ++node().version;
        return node().data;
    }

    T item() const {
        if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
        return node().data[0];
    }

    bool requires_grad() const { return node().requires_grad; }
    Tensor& set_requires_grad(bool on = true) {
        if (!node().is_leaf() && !on) throw GraphError("cannot clear requires_grad on a non-leaf tensor");
        node().requires_grad = on;
        return *this;
    }
    bool is_leaf() const { return node().is_leaf(); }

    /// Accumulated gradient; empty span if nothing has been accumulated.
    std::span<const T> grad() const { return node().grad; }
    bool has_grad() const { return !node().grad.empty(); }
    void zero_grad() { std::fill(node().grad.begin(), node().grad.end(), T{0}); }
    void clear_grad() { node().grad.clear(); }

    /// Deep copy of the values, detached from any graph.
    Tensor clone() const { return from(shape(), node().data); }

    Tensor reshaped(Shape shape) const {
        if (numel(shape) != size())
            throw ShapeError("cannot reshape " + to_string(this->shape()) + " to " + to_string(shape));
        return from(std::move(shape), node().data);
    }

    std::uint64_t version() const { return node().version; }
    const NodePtr& node_ptr() const { return node_; }
    static Tensor wrap(NodePtr node) { return Tensor(std::move(node)); }

    /// Builds the result of an operation.  When grad mode is on and any
    /// parent requires a gradient, the op is recorded on the tape.
    static Tensor make_result(Shape shape, std::vector<T> values, const char* op,
                              std::vector<Tensor> parents, std::function<void(detail::Node<T>&)> backward) {
        auto out = from(std::move(shape), std::move(values));
        bool needs = grad_enabled() &&
                     std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return p.requires_grad(); });
        if (!needs) return out;
        auto& n = out.node();
        n.op = op;
        n.requires_grad = true;
        for (auto& p : parents) {
            n.parents.push_back(p.node_);
            n.parent_versions.push_back(p.version());
        }
        n.backward_fn = std::move(backward);
        return out;
    }

private:
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    detail::Node<T>& node() const {
        if (!node_) throw GraphError("use of an undefined tensor");
        return *node_;
    }

    NodePtr node_;
};

/// Runs reverse-mode accumulation from a scalar root.  Every leaf that
/// requires a gradient receives its total derivative in grad(); the leaves
/// reached are returned in discovery order.  The recorded graph is released
/// afterwards, so a second call on the same root is an error.
template <typename T>
std::vector<Tensor<T>> backward(const Tensor<T>& loss) {
    using NodeT = detail::Node<T>;
    if (loss.size() != 1)
        throw GraphError("backward() needs a scalar root, got shape " + to_string(loss.shape()));
    NodeT* root = loss.node_ptr().get();
    if (root->consumed) throw GraphError("backward() called twice on the same graph; re-run the forward pass");
    if (!root->requires_grad) throw GraphError("backward() root does not require grad");

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> seen;
    std::vector<std::pair<NodeT*, std::size_t>> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            auto* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.push_back({parent, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad_buffer()[0] += T{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT* node = *it;
        if (node->is_leaf()) continue;
        for (std::size_t i = 0; i < node->parents.size(); ++i) {
            if (node->parents[i]->version != node->parent_versions[i])
                throw GraphError(std::string("an input of '") + node->op +
                                 "' was modified after being recorded");
        }
        if (!node->grad.empty()) node->backward_fn(*node);
    }

    std::vector<Tensor<T>> out;
    std::unordered_set<NodeT*> emitted;
    for (NodeT* node : order) {
        if (node->is_leaf()) continue;
        for (auto& p : node->parents)
            if (p->is_leaf() && p->requires_grad && emitted.insert(p.get()).second)
                out.push_back(Tensor<T>::wrap(p));
        node->parents.clear();
        node->parent_versions.clear();
        node->backward_fn = nullptr;
        node->consumed = true;
        if (node != root) node->grad.clear();
    }
    root->consumed = true;
    return out;
}

}  // namespace stackpool
