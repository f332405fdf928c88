#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "treeseg/nn/tensor.hpp"

namespace treeseg::nn {

struct Node;
using Var = std::shared_ptr<Node>;

// Reverse-mode tape node. `backward_fn` reads this node's grad and
// accumulates into the parents' grads.
struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily, same shape as value
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& ensure_grad() {
        if (grad.numel() != value.numel() || grad.shape() != value.shape())
            grad = Tensor::zeros(value.shape());
        return grad;
    }
};

inline Var make_var(Tensor value, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

inline Var make_leaf(Tensor value) { return make_var(std::move(value), false); }

// Detached view of a var's value (no graph edge).
inline Var detach(const Var& v) { return make_var(v->value, false); }

// Grad mode: when disabled, ops build leaf nodes only (no tape, no parents).
struct GradMode {
    static bool& enabled() {
        thread_local bool on = true;
        return on;
    }
};

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(GradMode::enabled()) { GradMode::enabled() = false; }
    ~NoGradGuard() { GradMode::enabled() = prev; }
};

inline bool tape_active(std::initializer_list<const Var*> inputs) {
    if (!GradMode::enabled()) return false;
    for (const Var* v : inputs)
        if ((*v)->requires_grad) return true;
    return false;
}

// Wire a result node into the tape if any input needs gradients.
inline Var make_op(Tensor value, std::vector<Var> parents,
                   std::function<void(Node&)> backward_fn) {
    bool need = GradMode::enabled();
    if (need) {
        need = false;
        for (const auto& p : parents)
            if (p->requires_grad) { need = true; break; }
    }
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = need;
    if (need) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return n;
}

// Backpropagate from a scalar root. Topological order via iterative DFS;
// node identity ties are resolved by pointer-stable visitation order, so a
// fixed graph always replays identically.
inline void backward(const Var& root) {
    TS_CHECK(root->value.numel() == 1, "backward: root must be scalar");
    if (!root->requires_grad) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // order is parents-first; run backward fns in reverse
    root->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

inline void zero_grad(const std::vector<Var>& params) {
    for (const auto& p : params) {
        if (p->grad.numel() == p->value.numel() && p->grad.shape() == p->value.shape()) {
            std::fill(p->grad.data(), p->grad.data() + p->grad.numel(), 0.0);
        }
    }
}

}  // namespace treeseg::nn
