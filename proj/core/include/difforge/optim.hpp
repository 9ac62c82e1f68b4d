#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "difforge/grid.hpp"
#include "difforge/nets.hpp"

namespace difforge::optim {

/// Triangular cyclic learning rate whose amplitude decays as gamma^iteration
/// ("exp_range").
struct CyclicLr {
    double base_lr = 1e-3;
    double max_lr = 1e-2;
    std::size_t step_size = 100;
    double gamma = 0.9999;
    std::size_t iteration = 0;
};

double cyclic_lr(const CyclicLr& state);

/// v <- momentum v + g;  p <- p - lr v
void sgd_update(Grid& param, const Grid& grad, Grid& velocity, double lr, double momentum);

/// Rescales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(ParameterSet& params, double max_norm);

class Sgd {
   public:
    explicit Sgd(double momentum = 0.9) : momentum_(momentum) {}
    void step(ParameterSet& params, double lr);

    double momentum() const { return momentum_; }
    std::vector<Grid>& velocity() { return velocity_; }
    const std::vector<Grid>& velocity() const { return velocity_; }

   private:
    double momentum_;
    std::vector<Grid> velocity_;
};

/// Keeps slow weights; every k base steps moves them toward the fast weights
/// by alpha and resets the fast weights to them.
class Lookahead {
   public:
    Lookahead(std::size_t k = 5, double alpha = 0.5);
    /// Snapshot the current weights as the slow weights.
    void attach(const ParameterSet& params);
    /// Call after every base-optimizer step. Attaches on first use.
    void after_step(ParameterSet& params);

    std::size_t k() const { return k_; }
    double alpha() const { return alpha_; }
    std::size_t step_count() const { return step_count_; }
    void set_step_count(std::size_t n) { step_count_ = n; }
    std::vector<Grid>& slow() { return slow_; }
    const std::vector<Grid>& slow() const { return slow_; }

   private:
    std::size_t k_;
    double alpha_;
    std::size_t step_count_ = 0;
    std::vector<Grid> slow_;
};

struct OptimizerConfig {
    double lr = 0.01;
    double momentum = 0.9;
    /// <= 0 disables clipping.
    double clip_norm = 1.0;
    bool use_cyclic_lr = false;
    CyclicLr cyclic{};
    bool use_lookahead = false;
    std::size_t lookahead_k = 5;
    double lookahead_alpha = 0.5;
};

/// Clip, then SGD at the scheduled rate, then the optional Lookahead sync.
class Optimizer {
   public:
    explicit Optimizer(const OptimizerConfig& config);

    /// Consumes the current gradients, updates parameters, and zeroes grads.
    void step(ParameterSet& params);
    double current_lr() const;

    const OptimizerConfig& config() const { return config_; }
    std::size_t iteration() const { return iteration_; }
    void set_iteration(std::size_t it) { iteration_ = it; }
    Sgd& sgd() { return sgd_; }
    const Sgd& sgd() const { return sgd_; }
    Lookahead& lookahead() { return lookahead_; }
    const Lookahead& lookahead() const { return lookahead_; }

   private:
    OptimizerConfig config_;
    Sgd sgd_;
    Lookahead lookahead_;
    std::size_t iteration_ = 0;
};

}  // namespace difforge::optim
