#pragma once

#include "selfrobust/optimizer.hpp"
#include "selfrobust/rng.hpp"
#include "selfrobust/selfsup.hpp"

namespace selfrobust {

enum class AttackLoss { CeOnly, CePlusSs };

// Linf PGD. `epsilon` and `alpha` are in the [0,1] pixel scale.
template <typename S>
struct AttackConfig {
  S epsilon = S(8) / S(255);
  S alpha = S(2) / S(255);
  int steps = 10;
  bool random_start = true;
  AttackLoss loss = AttackLoss::CeOnly;
  std::vector<std::string> ss_heads = {"rotation"};  // read when loss == CePlusSs
  ViewMode view_mode = ViewMode::AllRotations;
  int translation = 0;

  void validate() const {
    if (!(epsilon >= S(0)) || !std::isfinite(static_cast<double>(epsilon)))
      throw std::invalid_argument("AttackConfig: epsilon must be finite and >= 0");
    if (steps < 0) throw std::invalid_argument("AttackConfig: steps must be >= 0");
    if (steps > 0 && (!(alpha > S(0)) || !std::isfinite(static_cast<double>(alpha))))
      throw std::invalid_argument("AttackConfig: alpha must be finite and > 0");
    if (loss == AttackLoss::CePlusSs && ss_heads.empty())
      throw std::invalid_argument("AttackConfig: CePlusSs needs at least one head");
  }
};

namespace detail {

template <typename S>
void require_unit_range(const Tensor<S>& images, const char* who) {
  for (std::int64_t i = 0; i < images.size(); ++i)
    if (!(images[i] >= S(0) && images[i] <= S(1)))
      throw std::invalid_argument(strcat(who, ": pixel ", i, " = ", images[i],
                                         " outside [0,1]"));
}

// Gradient of the attack objective w.r.t. the current iterate.
template <typename S>
Tensor<S> attack_input_grad(const NetworkSpec& spec, const ParameterSet<S>& params,
                            const Tensor<S>& x, const std::vector<int>& labels,
                            const AttackConfig<S>& cfg) {
  EvalOptions opt;
  opt.input_grad = true;
  if (cfg.loss == AttackLoss::CeOnly) {
    LossTerm<S> term;
    term.head = "class";
    term.labels = labels;
    auto result = evaluate(spec, params, x, std::vector<LossTerm<S>>{term}, opt);
    return std::move(result.input_grad);
  }
  // Unweighted CE + SS: the adversary climbs both objectives equally.
  LossSpec<S> ls;
  ls.lambda = S(1);
  ls.enabled_heads = cfg.ss_heads;
  ls.include_supervised = true;
  ls.view_mode = cfg.view_mode;
  ls.translation = cfg.translation;
  auto assembled = assemble_total_loss(spec, x, labels, ls);
  auto result = evaluate(spec, params, assembled.images, assembled.terms, opt);
  return pull_back_view_grads(assembled.in_views, result.input_grad, x.shape());
}

}  // namespace detail

// Projected gradient descent inside the epsilon ball around `images`,
// clamped to [0,1] after the start and after every step. epsilon = 0
// returns the input unchanged.
template <typename S>
Tensor<S> pgd_attack(const NetworkSpec& spec, const ParameterSet<S>& params,
                     const Tensor<S>& images, const std::vector<int>& labels,
                     const AttackConfig<S>& cfg, Rng& rng) {
  cfg.validate();
  detail::require_unit_range(images, "pgd_attack");
  if (cfg.epsilon == S(0)) return images;

  Tensor<S> adv = images;
  if (cfg.random_start) {
    for (std::int64_t i = 0; i < adv.size(); ++i) {
      adv[i] += static_cast<S>(rng.uniform(-static_cast<double>(cfg.epsilon),
                                           static_cast<double>(cfg.epsilon)));
      adv[i] = std::clamp(adv[i], S(0), S(1));
    }
  }
  for (int step = 0; step < cfg.steps; ++step) {
    Tensor<S> g = detail::attack_input_grad(spec, params, adv, labels, cfg);
    for (std::int64_t i = 0; i < adv.size(); ++i) {
      const S s = (g[i] > S(0)) ? S(1) : (g[i] < S(0)) ? S(-1) : S(0);
      S v = adv[i] + cfg.alpha * s;
      v = std::clamp(v, images[i] - cfg.epsilon, images[i] + cfg.epsilon);
      adv[i] = std::clamp(v, S(0), S(1));
    }
  }
  return adv;
}

template <typename S>
struct AdvTrainConfig {
  int epochs = 5;
  int batch_size = 32;
  AttackConfig<S> attack;
  LossSpec<S> loss;
  S base_lr = S(0.1);
  S momentum = S(0.9);
  S weight_decay = S(5e-4);

  AdvTrainConfig() { attack.loss = AttackLoss::CePlusSs; }

  void validate() const {
    if (epochs <= 0 || batch_size <= 0)
      throw std::invalid_argument("AdvTrainConfig: epochs and batch_size must be > 0");
    attack.validate();
    loss.validate();
  }
};

template <typename S>
struct TrainEpoch {
  int epoch = 0;
  S mean_total = S(0);
  S mean_supervised = S(0);
  S mean_selfsup = S(0);
};

template <typename S>
struct TrainResult {
  std::vector<TrainEpoch<S>> history;
  int steps_completed = 0;
  bool aborted = false;
  std::string abort_reason;
};

// PGD adversarial training: craft the batch with the inner attack, then take
// one SGD step on the combined loss at the adversarial points. A non-finite
// loss or parameter aborts the run with the last finite parameters restored.
template <typename S>
TrainResult<S> adv_train(const NetworkSpec& spec, ParameterSet<S>& params,
                         const Tensor<S>& images, const std::vector<int>& labels,
                         const AdvTrainConfig<S>& cfg, Rng& rng) {
  cfg.validate();
  const int n = images.dim(0);
  if (static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("adv_train: one label per image required");
  const int per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const int total_steps = cfg.epochs * per_epoch;
  auto opt = OptimizerState<S>::make(params, cfg.momentum, cfg.weight_decay, total_steps,
                                     cfg.base_lr);

  TrainResult<S> result;
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(perm);
    TrainEpoch<S> log;
    log.epoch = epoch;
    for (int b = 0; b < per_epoch; ++b) {
      const int lo = b * cfg.batch_size;
      const int count = std::min(cfg.batch_size, n - lo);
      std::vector<int> idx(perm.begin() + lo, perm.begin() + lo + count);
      Tensor<S> bx = take_rows(images, idx);
      std::vector<int> bl(static_cast<std::size_t>(count));
      for (int i = 0; i < count; ++i) bl[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];

      ParameterSet<S> snapshot = params;
      TotalLossBreakdown<S> bd;
      try {
        Tensor<S> adv = pgd_attack(spec, params, bx, bl, cfg.attack, rng);
        ParameterSet<S> grads;
        std::tie(bd, grads) = total_loss_grads(spec, params, adv, bl, cfg.loss);
        sgd_update(params, grads, opt, cosine_lr(step, total_steps, cfg.base_lr));
      } catch (const NumericError& e) {
        params = std::move(snapshot);
        result.aborted = true;
        result.abort_reason = e.what();
        return result;
      }
      bool finite = true;
      for (const auto& [name, t] : params.tensors) {
        for (std::int64_t i = 0; i < t.size() && finite; ++i)
          finite = std::isfinite(static_cast<double>(t[i]));
        if (!finite) break;
      }
      if (!finite) {
        params = std::move(snapshot);
        result.aborted = true;
        result.abort_reason = "non-finite parameter after update";
        return result;
      }
      ++step;
      ++result.steps_completed;
      const S w = S(count) / S(n);
      log.mean_total += w * bd.total;
      log.mean_supervised += w * bd.supervised;
      log.mean_selfsup += w * bd.selfsup;
    }
    result.history.push_back(log);
  }
  return result;
}

// Argmax of the named head, first index on ties; evaluated in chunks.
template <typename S>
std::vector<int> predict(const NetworkSpec& spec, const ParameterSet<S>& params,
                         const Tensor<S>& images, const std::string& head = "class",
                         int chunk = 256) {
  const int n = images.dim(0);
  const int k = spec.head_classes(head);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int lo = 0; lo < n; lo += chunk) {
    const int count = std::min(chunk, n - lo);
    Tensor<S> part = take_rows(images, lo, count);
    Tensor<S> logits = forward_logits(spec, params, part, head);
    for (int r = 0; r < count; ++r) {
      int best = 0;
      for (int c = 1; c < k; ++c)
        if (logits(r, c) > logits(r, best)) best = c;
      out[static_cast<std::size_t>(lo + r)] = best;
    }
  }
  return out;
}

template <typename S>
double eval_accuracy(const NetworkSpec& spec, const ParameterSet<S>& params,
                     const Tensor<S>& images, const std::vector<int>& labels,
                     int chunk = 256) {
  if (static_cast<int>(labels.size()) != images.dim(0))
    throw std::invalid_argument("eval_accuracy: one label per image required");
  auto pred = predict(spec, params, images, "class", chunk);
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

template <typename S>
double eval_adversarial_accuracy(const NetworkSpec& spec, const ParameterSet<S>& params,
                                 const Tensor<S>& images, const std::vector<int>& labels,
                                 const AttackConfig<S>& cfg, Rng& rng, int chunk = 128) {
  if (static_cast<int>(labels.size()) != images.dim(0))
    throw std::invalid_argument("eval_adversarial_accuracy: one label per image required");
  const int n = images.dim(0);
  std::int64_t correct = 0;
  for (int lo = 0; lo < n; lo += chunk) {
    const int count = std::min(chunk, n - lo);
    Tensor<S> part = take_rows(images, lo, count);
    std::vector<int> lab(labels.begin() + lo, labels.begin() + lo + count);
    Tensor<S> adv = pgd_attack(spec, params, part, lab, cfg, rng);
    auto pred = predict(spec, params, adv, "class", chunk);
    for (int i = 0; i < count; ++i)
      if (pred[static_cast<std::size_t>(i)] == lab[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

template <typename S>
struct SweepPoint {
  S epsilon = S(0);
  double accuracy = 0;
};

// Robust accuracy at each epsilon, each with its own derived noise stream so
// points are reproducible independently of sweep order.
template <typename S>
std::vector<SweepPoint<S>> eval_eps_sweep(const NetworkSpec& spec,
                                          const ParameterSet<S>& params,
                                          const Tensor<S>& images,
                                          const std::vector<int>& labels,
                                          AttackConfig<S> cfg,
                                          const std::vector<S>& epsilons,
                                          std::uint64_t seed, int chunk = 128) {
  std::vector<SweepPoint<S>> out;
  for (std::size_t i = 0; i < epsilons.size(); ++i) {
    cfg.epsilon = epsilons[i];
    Rng rng(derive_seed(seed, detail::strcat("eps-sweep-", i)));
    SweepPoint<S> p;
    p.epsilon = epsilons[i];
    p.accuracy = eval_adversarial_accuracy(spec, params, images, labels, cfg, rng, chunk);
    out.push_back(p);
  }
  return out;
}

}  // namespace selfrobust
