#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "difforge/grid.hpp"

namespace difforge {

/// One vertex of the tape. Parents are owned so a graph stays alive as long
/// as its root does.
struct Node {
    Grid value;
    Grid grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    /// Propagates this node's grad into its parents' grads.
    std::function<void(Node&)> backward;

    /// Grad buffer, allocated on first use.
    Grid& grad_buffer();
};

/// Handle to a differentiable value. Cheap to copy (shared ownership).
class Var {
   public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Grid& value() const { return node_->value; }
    Grid& mutable_value() { return node_->value; }
    const Grid& grad() const { return node_->grad; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    /// Zero the accumulated gradient in place (keeps the buffer).
    void zero_grad();

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& ptr() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

   private:
    std::shared_ptr<Node> node_;
};

/// Leaf that accumulates gradients.
Var parameter(Grid value);
/// Leaf without gradient tracking.
Var constant(Grid value);

/// Builds an interior node. `backward` is only kept when some parent needs
/// a gradient; otherwise the result is a constant.
Var make_result(Grid value, std::vector<Var> parents, std::function<void(Node&)> backward);

/// Disables graph construction on the current thread while alive; results
/// of ops become constants. Used for sampling and evaluation.
class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

bool grad_enabled();

/// Reverse sweep from a scalar root. Every reachable node that requires a
/// gradient receives d(root)/d(node), accumulated into its grad buffer.
/// Throws ShapeError if the root holds more than one element.
void backward(const Var& root);

}  // namespace difforge
