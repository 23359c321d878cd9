#pragma once

// Tape-free reverse-mode autodiff over tensors.  Every op result keeps
// shared pointers to its parents; backward() walks the resulting DAG in
// reverse topological order.

#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ratgan/tensor.hpp"

namespace ratgan {

template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor<T>& ensure_grad() {
        if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
        return grad;
    }
    bool has_grad() const { return grad.size() == value.size() && !value.empty(); }
};

namespace detail {
inline bool& grad_enabled() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

/// Disables graph recording in its scope (pure inference).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_enabled()) { detail::grad_enabled() = false; }
    ~NoGradGuard() { detail::grad_enabled() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Re-enables graph recording in its scope, e.g. for input gradients inside an inference region.
class EnableGradGuard {
public:
    EnableGradGuard() : prev_(detail::grad_enabled()) { detail::grad_enabled() = true; }
    ~EnableGradGuard() { detail::grad_enabled() = prev_; }
    EnableGradGuard(const EnableGradGuard&) = delete;
    EnableGradGuard& operator=(const EnableGradGuard&) = delete;

private:
    bool prev_;
};

/// Records the sign pattern of every piecewise-linear unit evaluated while
/// active.  Finite-difference checks use it to skip coordinates whose
/// perturbation crosses a kink.
class KinkMonitor {
public:
    static KinkMonitor*& current() {
        thread_local KinkMonitor* m = nullptr;
        return m;
    }
    KinkMonitor() : prev_(current()) { current() = this; }
    ~KinkMonitor() { current() = prev_; }
    KinkMonitor(const KinkMonitor&) = delete;
    KinkMonitor& operator=(const KinkMonitor&) = delete;

    void record(bool positive) {
        hash_ = (hash_ ^ (positive ? 0x9e3779b97f4a7c15ULL : 0x7f4a7c159e3779b9ULL)) * 0x100000001b3ULL;
        hash_ ^= ++count_;
    }
    std::uint64_t signature() const { return hash_; }

private:
    KinkMonitor* prev_;
    std::uint64_t hash_ = 0xcbf29ce484222325ULL;
    std::uint64_t count_ = 0;
};

template <class T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Var constant(Tensor<T> v) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(v);
        return Var(std::move(n));
    }
    static Var leaf(Tensor<T> v, bool requires_grad = true) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(v);
        n->requires_grad = requires_grad;
        return Var(std::move(n));
    }

    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
    std::size_t size() const { return node_->value.size(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool valid() const { return static_cast<bool>(node_); }

    /// Accumulated gradient; zeros when nothing flowed here.
    Tensor<T> grad() const { return node_->has_grad() ? node_->grad : Tensor<T>(node_->value.shape()); }
    void zero_grad() {
        if (node_->has_grad()) node_->grad.fill(T(0));
    }

    Node<T>& node() const { return *node_; }
    const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Builds an op result.  The backward closure receives the result node and
/// must add into parents' grads (parents[i]->ensure_grad()).
template <class T, class Fn>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, Fn&& backward) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any && detail::grad_enabled()) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node_ptr());
        n->backward_fn = std::forward<Fn>(backward);
    }
    return Var<T>(std::move(n));
}

/// Propagates seed (same shape as root) back through the graph.  Interior
/// gradients are reset first so a graph may be back-propagated more than
/// once; leaf gradients accumulate.
template <class T>
void backward(const Var<T>& root, const Tensor<T>& seed) {
    root.value().check_same(seed, "backward seed");
    if (!root.requires_grad()) return;
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(&root.node(), 0);
    seen.insert(&root.node());
    while (!stack.empty()) {
        Node<T>* node = stack.back().first;
        const std::size_t next = stack.back().second;
        if (next < node->parents.size()) {
            ++stack.back().second;
            Node<T>* p = node->parents[next].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node<T>* n : order)
        if (n->backward_fn) n->ensure_grad().fill(T(0));
    root.node().ensure_grad() += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn && n->has_grad()) {
            n->backward_fn(*n);
            n->grad = Tensor<T>();
        }
    }
}

template <class T>
void backward(const Var<T>& root) {
    backward(root, Tensor<T>(root.shape(), T(1)));
}

}  // namespace ratgan
