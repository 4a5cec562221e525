#pragma once

#include <cmath>

#include "selfrobust/network.hpp"

namespace selfrobust {

// SGD with Nesterov momentum. Velocities mirror the parameter shapes.
template <typename S>
struct OptimizerState {
  ParameterSet<S> velocity;
  S momentum = S(0.9);
  S weight_decay = S(5e-4);
  std::int64_t total_steps = 0;
  S base_lr = S(0.1);

  static OptimizerState make(const ParameterSet<S>& params, S momentum, S weight_decay,
                             std::int64_t total_steps, S base_lr) {
    if (momentum < S(0) || momentum >= S(1))
      throw std::invalid_argument("OptimizerState: momentum must be in [0,1)");
    if (weight_decay < S(0))
      throw std::invalid_argument("OptimizerState: weight decay must be >= 0");
    OptimizerState st;
    st.velocity = params.zeros_like();
    st.momentum = momentum;
    st.weight_decay = weight_decay;
    st.total_steps = total_steps;
    st.base_lr = base_lr;
    return st;
  }
};

// Half-cosine decay from base to 0 over [0, total].
template <typename S>
S cosine_lr(std::int64_t step, std::int64_t total, S base) {
  if (total <= 0) throw std::invalid_argument("cosine_lr: total must be positive");
  if (step < 0 || step > total)
    throw std::out_of_range(detail::strcat("cosine_lr: step ", step,
                                           " outside [0,", total, "]"));
  return static_cast<S>(base * (1.0 + std::cos(M_PI * static_cast<double>(step) /
                                               static_cast<double>(total))) /
                        2.0);
}

// In-place Nesterov update. L2 weight decay is folded into the gradient
// before the momentum step:
//   g  <- g + decay * p
//   v' <- mu * v - lr * g
//   p' <- p + mu * v' - lr * g
template <typename S>
void sgd_update(ParameterSet<S>& params, const ParameterSet<S>& grads,
                OptimizerState<S>& state, S lr) {
  if (lr < S(0)) throw std::invalid_argument("sgd_update: lr must be >= 0");
  params.require_compatible(grads, "sgd_update");
  params.require_compatible(state.velocity, "sgd_update");
  const S mu = state.momentum;
  const S decay = state.weight_decay;
  auto git = grads.tensors.begin();
  auto vit = state.velocity.tensors.begin();
  for (auto pit = params.tensors.begin(); pit != params.tensors.end();
       ++pit, ++git, ++vit) {
    Tensor<S>& p = pit->second;
    const Tensor<S>& g0 = git->second;
    Tensor<S>& v = vit->second;
    for (std::int64_t i = 0; i < p.size(); ++i) {
      const S g = g0[i] + decay * p[i];
      const S vnew = mu * v[i] - lr * g;
      p[i] = p[i] + mu * vnew - lr * g;
      v[i] = vnew;
    }
  }
}

namespace detail {

// Shared SGD loop: shuffles, gathers batch indices, applies the step
// function's gradients with the cosine schedule.
template <typename S, typename StepFn>
void sgd_epochs(ParameterSet<S>& params, int n, int epochs, int batch_size, S base_lr,
                S momentum, S weight_decay, Rng& rng, StepFn&& step_fn) {
  const int per_epoch = (n + batch_size - 1) / batch_size;
  const int total_steps = epochs * per_epoch;
  auto opt = OptimizerState<S>::make(params, momentum, weight_decay, total_steps, base_lr);
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  int step = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(perm);
    for (int b = 0; b < per_epoch; ++b) {
      const int lo = b * batch_size;
      const int count = std::min(batch_size, n - lo);
      std::vector<int> idx(perm.begin() + lo, perm.begin() + lo + count);
      ParameterSet<S> grads = step_fn(idx);
      sgd_update(params, grads, opt, cosine_lr(step, total_steps, base_lr));
      ++step;
    }
  }
}

}  // namespace detail

}  // namespace selfrobust
