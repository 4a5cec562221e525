#pragma once

#include <algorithm>

#include "selfrobust/advrobust.hpp"

namespace selfrobust {

// One named way of scoring a network's transformation predictions.
struct ScoreConfig {
  std::string name = "rotnet";
  std::vector<std::string> heads = {"rotation"};
  ViewMode view_mode = ViewMode::AllRotations;
  int translation = 0;  // pixels; 0 selects the H/4 default
  bool log_prob = false;

  void validate(const NetworkSpec& spec) const {
    if (heads.empty()) throw std::invalid_argument("ScoreConfig: no heads enabled");
    detail::check_ss_heads(spec, heads);
  }
};

// Anomaly scores, most anomalous highest: the negated sum over views and
// enabled heads of the probability (or log-probability) assigned to the view's
// true transformation class. Probability scores lie in [-(views x heads), 0].
template <typename S>
std::vector<double> anomaly_scores(const NetworkSpec& spec, const ParameterSet<S>& params,
                                   const Tensor<S>& images, const ScoreConfig& cfg,
                                   int chunk = 128) {
  cfg.validate(spec);
  const int n = images.dim(0);
  std::vector<double> scores(static_cast<std::size_t>(n), 0.0);
  ViewConfig vcfg;
  vcfg.heads = cfg.heads;
  vcfg.mode = cfg.view_mode;
  vcfg.t = cfg.translation;
  for (int lo = 0; lo < n; lo += chunk) {
    const int count = std::min(chunk, n - lo);
    Tensor<S> part = take_rows(images, lo, count);
    ViewBatch<S> views = build_ss_views(part, vcfg);
    TrunkCache<S> cache;
    const Tensor<S>& penult = forward_trunk(spec, params, views.images, cache);
    const int rows = views.images.dim(0);
    for (const auto& head : detail::canonical_heads(cfg.heads)) {
      Tensor<S> probs = softmax(head_logits(spec, params, head, penult));
      for (int r = 0; r < rows; ++r) {
        const int truth = detail::label_for_head(views.labels[static_cast<std::size_t>(r)], head);
        const double p = static_cast<double>(probs(r, truth));
        const int src = lo + views.source_index[static_cast<std::size_t>(r)];
        scores[static_cast<std::size_t>(src)] -= cfg.log_prob ? std::log(p) : p;
      }
    }
  }
  return scores;
}

template <typename S>
double anomaly_score(const NetworkSpec& spec, const ParameterSet<S>& params,
                     const Tensor<S>& image, const ScoreConfig& cfg) {
  if (image.rank() != 3)
    throw std::invalid_argument("anomaly_score: image must be [C,H,W]");
  Tensor<S> batch = image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
  return anomaly_scores(spec, params, batch, cfg)[0];
}

// Mann-Whitney AUROC: fraction of (out, in) pairs with out > in, ties 1/2.
// The result is rounded once onto the 2^-52 grid with half-to-even, which
// makes auroc(a,b) + auroc(b,a) == 1.0 hold exactly.
inline double auroc(const std::vector<double>& in_scores,
                    const std::vector<double>& out_scores) {
  if (in_scores.empty() || out_scores.empty())
    throw std::invalid_argument("auroc: empty score vector");
  for (double v : in_scores)
    if (!std::isfinite(v)) throw std::invalid_argument("auroc: non-finite in-score");
  for (double v : out_scores)
    if (!std::isfinite(v)) throw std::invalid_argument("auroc: non-finite out-score");

  std::vector<double> sorted_in = in_scores;
  std::sort(sorted_in.begin(), sorted_in.end());
  unsigned __int128 twice_wins = 0;  // 2 per strict win, 1 per tie
  for (double o : out_scores) {
    const auto lo = std::lower_bound(sorted_in.begin(), sorted_in.end(), o);
    const auto hi = std::upper_bound(lo, sorted_in.end(), o);
    twice_wins += 2 * static_cast<unsigned __int128>(lo - sorted_in.begin());
    twice_wins += static_cast<unsigned __int128>(hi - lo);
  }
  const unsigned __int128 denom = 2 * static_cast<unsigned __int128>(in_scores.size()) *
                                  static_cast<unsigned __int128>(out_scores.size());
  unsigned __int128 q = (twice_wins << 52) / denom;
  const unsigned __int128 r = (twice_wins << 52) % denom;
  if (2 * r > denom)
    ++q;
  else if (2 * r == denom)
    q += q & 1;  // round half to even
  return std::ldexp(static_cast<double>(static_cast<std::uint64_t>(q)), -52);
}

template <typename S>
struct OneClassConfig {
  std::vector<std::string> train_heads = {"rotation", "vtrans", "htrans"};
  ViewMode view_mode = ViewMode::ComposedSubset;
  int translation = 0;
  int epochs = 10;
  int batch_size = 32;
  S base_lr = S(0.05);
  S momentum = S(0.9);
  S weight_decay = S(5e-4);
  S oe_weight = S(0);  // uniformity pressure on outlier views; 0 disables
  std::vector<ScoreConfig> scorers;
  int score_chunk = 128;

  void validate() const {
    if (train_heads.empty())
      throw std::invalid_argument("OneClassConfig: no training heads");
    if (epochs <= 0 || batch_size <= 0)
      throw std::invalid_argument("OneClassConfig: epochs and batch_size must be > 0");
    if (oe_weight < S(0))
      throw std::invalid_argument("OneClassConfig: oe_weight must be >= 0");
    if (scorers.empty())
      throw std::invalid_argument("OneClassConfig: no scorers configured");
  }
};

struct DetectionReport {
  std::vector<int> classes;          // held-in class per row
  std::vector<std::string> methods;  // scorer name per column
  std::vector<std::vector<double>> auroc_table;  // [class][method]
  std::vector<double> mean_auroc;                // per method, over classes
};

// Trains a transformation-prediction network on one class's images.
// No class labels are used anywhere in this loop.
template <typename S>
ParameterSet<S> one_class_train(const NetworkSpec& spec, const Tensor<S>& images,
                                const OneClassConfig<S>& cfg, std::uint64_t seed,
                                const Tensor<S>* outliers = nullptr) {
  cfg.validate();
  detail::check_ss_heads(spec, cfg.train_heads);
  Rng init_rng(derive_seed(seed, "init"));
  ParameterSet<S> params = init_parameters<S>(spec, init_rng);

  LossSpec<S> ls;
  ls.lambda = S(1);
  ls.include_supervised = false;
  ls.enabled_heads = cfg.train_heads;
  ls.view_mode = cfg.view_mode;
  ls.translation = cfg.translation;
  ls.oe_weight = cfg.oe_weight;
  const bool with_oe = cfg.oe_weight > S(0) && outliers != nullptr && outliers->dim(0) > 0;

  const int n = images.dim(0);
  const int per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const int total_steps = cfg.epochs * per_epoch;
  auto opt = OptimizerState<S>::make(params, cfg.momentum, cfg.weight_decay, total_steps,
                                     cfg.base_lr);
  Rng rng(derive_seed(seed, "train"));
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> dummy;
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(perm);
    for (int b = 0; b < per_epoch; ++b) {
      const int lo = b * cfg.batch_size;
      const int count = std::min(cfg.batch_size, n - lo);
      std::vector<int> idx(perm.begin() + lo, perm.begin() + lo + count);
      Tensor<S> bx = take_rows(images, idx);
      Tensor<S> ox;
      if (with_oe) {
        std::vector<int> oidx(static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i)
          oidx[static_cast<std::size_t>(i)] =
              static_cast<int>(rng.uniform_int(outliers->dim(0)));
        ox = take_rows(*outliers, oidx);
      }
      auto [bd, grads] =
          total_loss_grads(spec, params, bx, dummy, ls, with_oe ? &ox : nullptr);
      sgd_update(params, grads, opt, cosine_lr(step, total_steps, cfg.base_lr));
      ++step;
    }
  }
  return params;
}

// Leave-one-in evaluation: per held-in class, train on that class only, then
// score its held-out test examples against every other class's test examples.
// Each scorer contributes one AUROC column.
template <typename S>
DetectionReport one_class_protocol(const NetworkSpec& spec, const Tensor<S>& train_images,
                                   const std::vector<int>& train_labels,
                                   const Tensor<S>& test_images,
                                   const std::vector<int>& test_labels, int num_classes,
                                   const OneClassConfig<S>& cfg, std::uint64_t seed,
                                   const Tensor<S>* outliers = nullptr) {
  cfg.validate();
  if (num_classes < 2)
    throw std::invalid_argument("one_class_protocol: need at least 2 classes");
  for (const auto& sc : cfg.scorers) sc.validate(spec);

  DetectionReport report;
  for (const auto& sc : cfg.scorers) report.methods.push_back(sc.name);
  std::vector<double> mean_acc(cfg.scorers.size(), 0.0);

  for (int c = 0; c < num_classes; ++c) {
    std::vector<int> train_rows, in_rows, out_rows;
    for (std::size_t i = 0; i < train_labels.size(); ++i)
      if (train_labels[i] == c) train_rows.push_back(static_cast<int>(i));
    for (std::size_t i = 0; i < test_labels.size(); ++i)
      (test_labels[i] == c ? in_rows : out_rows).push_back(static_cast<int>(i));
    if (train_rows.empty())
      throw std::invalid_argument(detail::strcat("one_class_protocol: no training examples for class ", c));
    if (in_rows.empty() || out_rows.empty())
      throw std::invalid_argument(detail::strcat("one_class_protocol: no test examples for class ", c));

    Tensor<S> class_train = take_rows(train_images, train_rows);
    ParameterSet<S> params = one_class_train(
        spec, class_train, cfg, derive_seed(seed, detail::strcat("class-", c)), outliers);

    Tensor<S> in_x = take_rows(test_images, in_rows);
    Tensor<S> out_x = take_rows(test_images, out_rows);
    report.classes.push_back(c);
    report.auroc_table.emplace_back();
    for (std::size_t m = 0; m < cfg.scorers.size(); ++m) {
      auto in_scores = anomaly_scores(spec, params, in_x, cfg.scorers[m], cfg.score_chunk);
      auto out_scores =
          anomaly_scores(spec, params, out_x, cfg.scorers[m], cfg.score_chunk);
      const double a = auroc(in_scores, out_scores);
      report.auroc_table.back().push_back(a);
      mean_acc[m] += a;
    }
  }
  for (double v : mean_acc)
    report.mean_auroc.push_back(v / static_cast<double>(num_classes));
  return report;
}

}  // namespace selfrobust
