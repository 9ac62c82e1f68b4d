#include "difforge/autograd.hpp"

#include <unordered_set>
#include <utility>

namespace difforge {

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Grid& Node::grad_buffer() {
    if (grad.shape() != value.shape()) grad = Grid::zeros(value.shape());
    return grad;
}

void Var::zero_grad() {
    if (!node_) return;
    if (node_->grad.shape() == node_->value.shape())
        std::fill(node_->grad.values().begin(), node_->grad.values().end(), 0.0);
    else
        node_->grad = Grid::zeros(node_->value.shape());
}

Var parameter(Grid value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(std::move(node));
}

Var constant(Grid value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

Var make_result(Grid value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    bool any = false;
    if (g_grad_enabled)
        for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.ptr());
        node->backward = std::move(backward_fn);
    }
    return Var(std::move(node));
}

void backward(const Var& root) {
    if (!root) throw ShapeError("backward: empty root");
    if (root.value().size() != 1) throw ShapeError("backward: root must be scalar, got " + root.shape().str());
    if (!root.requires_grad()) return;

    // Iterative post-order DFS gives a topological order without recursion
    // depth limits.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    visited.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward) {
            node->grad_buffer();
            node->backward(*node);
        }
    }
}

}  // namespace difforge
