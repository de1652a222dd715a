#pragma once

#include <cmath>

#include "sfusnet/tensor.hpp"

namespace sfus {

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-4;
  double epsilon = 1e-8;

  void validate() const {
    SFUS_CHECK(learning_rate > 0, "learning_rate must be positive, got " << learning_rate);
    SFUS_CHECK(beta1 > 0 && beta1 < beta2 && beta2 < 1,
               "betas must satisfy 0 < beta1 < beta2 < 1, got " << beta1 << ", " << beta2);
    SFUS_CHECK(weight_decay >= 0, "weight_decay must be nonnegative, got " << weight_decay);
    SFUS_CHECK(epsilon > 0, "epsilon must be positive, got " << epsilon);
  }
};

template <typename S>
struct AdamState {
  ArrayX<S> m;
  ArrayX<S> v;
  index_t t = 0;

  static AdamState fresh(index_t n) {
    AdamState s;
    s.m = ArrayX<S>::Zero(n);
    s.v = ArrayX<S>::Zero(n);
    return s;
  }
};

// Classic Adam with bias correction. Weight decay is coupled L2: it folds
// into the gradient before the moment updates.
template <typename S>
void adam_step(Tensor<S>& param, const ArrayX<S>& grad, AdamState<S>& state,
               const OptimizerConfig& cfg) {
  SFUS_CHECK_SHAPE(grad.size() == param.numel(), "adam_step gradient size mismatch");
  SFUS_CHECK_SHAPE(state.m.size() == param.numel() && state.v.size() == param.numel(),
                   "adam_step state size mismatch");
  state.t += 1;
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  ArrayX<S> g = grad;
  if (cfg.weight_decay != 0) g += static_cast<S>(cfg.weight_decay) * param.array();
  state.m = b1 * state.m + (S(1) - b1) * g;
  state.v = b2 * state.v + (S(1) - b2) * g.square();
  const S bc1 = static_cast<S>(1.0 - std::pow(cfg.beta1, static_cast<double>(state.t)));
  const S bc2 = static_cast<S>(1.0 - std::pow(cfg.beta2, static_cast<double>(state.t)));
  param.array() -= static_cast<S>(cfg.learning_rate) * (state.m / bc1) /
                   ((state.v / bc2).sqrt() + static_cast<S>(cfg.epsilon));
}

}  // namespace sfus
