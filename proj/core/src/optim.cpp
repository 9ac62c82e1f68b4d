#include "difforge/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace difforge::optim {

double cyclic_lr(const CyclicLr& s) {
    if (s.step_size < 1) throw std::invalid_argument("cyclic lr step_size must be at least 1");
    const double it = static_cast<double>(s.iteration);
    const double half = static_cast<double>(s.step_size);
    const double cycle = std::floor(1.0 + it / (2.0 * half));
    const double x = std::abs(it / half - 2.0 * cycle + 1.0);
    return s.base_lr + (s.max_lr - s.base_lr) * std::max(0.0, 1.0 - x) * std::pow(s.gamma, it);
}

void sgd_update(Grid& param, const Grid& grad, Grid& velocity, double lr, double momentum) {
    require_same_shape(param.shape(), grad.shape(), "sgd_update");
    if (velocity.shape() != param.shape()) velocity = Grid::zeros(param.shape());
    for (std::size_t i = 0; i < param.size(); ++i) {
        velocity[i] = momentum * velocity[i] + grad[i];
        param[i] -= lr * velocity[i];
    }
}

double clip_grad_norm(ParameterSet& params, double max_norm) {
    double sq = 0.0;
    for (auto& [_, v] : params.entries())
        if (v.grad().shape() == v.shape())
            for (double g : v.grad().values()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double k = max_norm / norm;
        for (auto& [_, v] : params.entries()) {
            Var var = v;
            if (var.grad().shape() == var.shape()) var.node()->grad *= k;
        }
    }
    return norm;
}

void Sgd::step(ParameterSet& params, double lr) {
    const auto& entries = params.entries();
    if (velocity_.size() != entries.size()) velocity_.assign(entries.size(), Grid{});
    for (std::size_t i = 0; i < entries.size(); ++i) {
        Var v = entries[i].second;
        Node* node = v.node();
        if (node->grad.shape() != node->value.shape()) continue;  // untouched this step
        sgd_update(node->value, node->grad, velocity_[i], lr, momentum_);
    }
}

Lookahead::Lookahead(std::size_t k, double alpha) : k_(k), alpha_(alpha) {
    if (k == 0) throw std::invalid_argument("lookahead k must be at least 1");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("lookahead alpha must lie in (0, 1]");
}

void Lookahead::attach(const ParameterSet& params) {
    slow_.clear();
    for (const auto& [_, v] : params.entries()) slow_.push_back(v.value());
}

void Lookahead::after_step(ParameterSet& params) {
    const auto& entries = params.entries();
    if (slow_.size() != entries.size()) attach(params);
    if (++step_count_ % k_ != 0) return;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        Var v = entries[i].second;
        Grid& fast = v.mutable_value();
        Grid& slow = slow_[i];
        for (std::size_t j = 0; j < fast.size(); ++j) {
            slow[j] += alpha_ * (fast[j] - slow[j]);
            fast[j] = slow[j];
        }
    }
}

Optimizer::Optimizer(const OptimizerConfig& config)
    : config_(config), sgd_(config.momentum), lookahead_(config.lookahead_k, config.lookahead_alpha) {}

double Optimizer::current_lr() const {
    if (!config_.use_cyclic_lr) return config_.lr;
    CyclicLr s = config_.cyclic;
    s.iteration = iteration_;
    return cyclic_lr(s);
}

void Optimizer::step(ParameterSet& params) {
    if (config_.use_lookahead && lookahead_.slow().size() != params.size()) lookahead_.attach(params);
    if (config_.clip_norm > 0.0) clip_grad_norm(params, config_.clip_norm);
    sgd_.step(params, current_lr());
    if (config_.use_lookahead) lookahead_.after_step(params);
    params.zero_grad();
    ++iteration_;
}

}  // namespace difforge::optim
