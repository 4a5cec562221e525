#pragma once

#include <cmath>

#include "selfrobust/advrobust.hpp"

namespace selfrobust {

// Row-stochastic K x K label transition matrix: entry (i, j) is the
// probability that clean class i is observed as class j.
template <typename S>
struct CorruptionMatrix {
  enum class Role { TrueMatrix, Estimated };

  MatX<S> entries;
  Role role = Role::TrueMatrix;

  int classes() const { return static_cast<int>(entries.rows()); }

  // Sums in S so rows built to be exact in S-precision validate strictly.
  void validate(double tol = 1e-6) const {
    if (entries.rows() < 2 || entries.rows() != entries.cols())
      throw std::invalid_argument("CorruptionMatrix: need a square matrix, K >= 2");
    for (int i = 0; i < entries.rows(); ++i) {
      S sum = S(0);
      for (int j = 0; j < entries.cols(); ++j) {
        if (entries(i, j) < S(0))
          throw std::invalid_argument("CorruptionMatrix: negative entry");
        sum += entries(i, j);
      }
      if (std::abs(static_cast<double>(sum) - 1.0) > tol)
        throw std::invalid_argument(detail::strcat("CorruptionMatrix: row ", i,
                                                   " sums to ", sum));
    }
  }
};

// C = (1-s) I + s 11^T / K: diagonal (1-s) + s/K, off-diagonal s/K.
template <typename S>
CorruptionMatrix<S> corruption_matrix(int k, S s) {
  if (k < 2) throw std::invalid_argument("corruption_matrix: K must be >= 2");
  if (!(s >= S(0) && s <= S(1)))
    throw std::invalid_argument("corruption_matrix: strength outside [0,1]");
  CorruptionMatrix<S> c;
  c.entries = MatX<S>::Constant(k, k, s / static_cast<S>(k));
  for (int i = 0; i < k; ++i) {
    c.entries(i, i) += S(1) - s;
    const auto row_sum = [&] {
      S sum = S(0);
      for (int j = 0; j < k; ++j) sum += c.entries(i, j);
      return sum;
    };
    // Nudge the last entry until the left-to-right row sum is exactly 1.
    // Nothing rounds after the final addition, so each one-ulp step moves
    // the sum by at most one grid notch and the walk cannot skip 1.
    S sum = row_sum();
    if (sum != S(1)) {
      c.entries(i, k - 1) += S(1) - sum;
      for (int pass = 0; pass < 64 && (sum = row_sum()) != S(1); ++pass)
        c.entries(i, k - 1) = std::nextafter(c.entries(i, k - 1), sum > S(1) ? S(0) : S(2));
      if (sum != S(1))
        throw std::logic_error("corruption_matrix: row normalization failed");
    }
  }
  return c;
}

// Resamples each label independently from its row of C by inverse-CDF walk.
template <typename S>
std::vector<int> corrupt_labels(const std::vector<int>& labels,
                                const CorruptionMatrix<S>& c, std::uint64_t seed) {
  c.validate();
  const int k = c.classes();
  Rng rng(seed);
  std::vector<int> out(labels.size());
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const int y = labels[n];
    if (y < 0 || y >= k)
      throw std::out_of_range(detail::strcat("corrupt_labels: label ", y,
                                             " outside 0..", k - 1));
    const double u = rng.uniform();
    double cum = 0.0;
    int pick = k - 1;
    for (int j = 0; j < k; ++j) {
      cum += static_cast<double>(c.entries(y, j));
      if (u < cum) {
        pick = j;
        break;
      }
    }
    out[n] = pick;
  }
  return out;
}

template <typename S>
struct NoisyLabeledDataset {
  Tensor<S> images;
  std::vector<int> clean_labels;  // held out for evaluation and trusted rows
  std::vector<int> noisy_labels;
  std::vector<std::uint8_t> trusted;

  void validate() const {
    const std::size_t n = static_cast<std::size_t>(images.dim(0));
    if (clean_labels.size() != n || noisy_labels.size() != n || trusted.size() != n)
      throw std::invalid_argument("NoisyLabeledDataset: per-example arrays disagree");
  }

  // Label visible to training: clean when trusted, noisy otherwise.
  int train_label(std::size_t i) const {
    return trusted[i] ? clean_labels[i] : noisy_labels[i];
  }
};

// Builds the noisy dataset for one strength: trusted rows keep clean labels,
// the rest are resampled through C.
template <typename S>
NoisyLabeledDataset<S> make_noisy_dataset(const Tensor<S>& images,
                                          const std::vector<int>& clean_labels,
                                          const CorruptionMatrix<S>& c,
                                          double trusted_fraction, std::uint64_t seed) {
  if (!(trusted_fraction >= 0.0 && trusted_fraction < 1.0))
    throw std::invalid_argument("make_noisy_dataset: trusted_fraction outside [0,1)");
  NoisyLabeledDataset<S> out;
  out.images = images;
  out.clean_labels = clean_labels;
  out.noisy_labels = corrupt_labels(clean_labels, c, derive_seed(seed, "corrupt-labels"));
  const int n = images.dim(0);
  out.trusted.assign(static_cast<std::size_t>(n), 0);
  const int n_trusted = static_cast<int>(trusted_fraction * n);
  if (n_trusted > 0) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(seed, "trusted-subset"));
    rng.shuffle(idx);
    for (int i = 0; i < n_trusted; ++i) {
      out.trusted[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = 1;
      out.noisy_labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] =
          clean_labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
    }
  }
  return out;
}

template <typename S>
struct GlcEstimate {
  CorruptionMatrix<S> matrix;
  std::vector<int> fallback_classes;  // clean classes absent from the trusted set
};

// Row i of C-hat = mean softmax of the noisy-label classifier over trusted
// examples with clean label i, renormalized; missing classes fall back to
// the identity row.
template <typename S>
GlcEstimate<S> glc_estimate(const NetworkSpec& spec, const ParameterSet<S>& params,
                            const NoisyLabeledDataset<S>& data, int chunk = 256) {
  data.validate();
  const int k = spec.head_classes("class");
  std::vector<int> rows;
  for (std::size_t i = 0; i < data.trusted.size(); ++i)
    if (data.trusted[i]) rows.push_back(static_cast<int>(i));
  if (rows.empty()) throw std::invalid_argument("glc_estimate: trusted set is empty");

  MatX<double> acc = MatX<double>::Zero(k, k);
  std::vector<std::int64_t> counts(static_cast<std::size_t>(k), 0);
  for (std::size_t lo = 0; lo < rows.size(); lo += static_cast<std::size_t>(chunk)) {
    const std::size_t hi = std::min(rows.size(), lo + static_cast<std::size_t>(chunk));
    std::vector<int> part(rows.begin() + static_cast<std::ptrdiff_t>(lo),
                          rows.begin() + static_cast<std::ptrdiff_t>(hi));
    Tensor<S> x = take_rows(data.images, part);
    Tensor<S> probs = softmax(forward_logits(spec, params, x, "class"));
    for (std::size_t r = 0; r < part.size(); ++r) {
      const int y = data.clean_labels[static_cast<std::size_t>(part[r])];
      if (y < 0 || y >= k)
        throw std::out_of_range("glc_estimate: clean label out of range");
      for (int j = 0; j < k; ++j)
        acc(y, j) += static_cast<double>(probs(static_cast<int>(r), j));
      ++counts[static_cast<std::size_t>(y)];
    }
  }

  GlcEstimate<S> out;
  out.matrix.role = CorruptionMatrix<S>::Role::Estimated;
  out.matrix.entries = MatX<S>::Zero(k, k);
  for (int i = 0; i < k; ++i) {
    if (counts[static_cast<std::size_t>(i)] == 0) {
      out.matrix.entries(i, i) = S(1);
      out.fallback_classes.push_back(i);
      continue;
    }
    double sum = 0.0;
    for (int j = 0; j < k; ++j) sum += acc(i, j);
    for (int j = 0; j < k; ++j)
      out.matrix.entries(i, j) = static_cast<S>(acc(i, j) / sum);
  }
  out.matrix.validate(1e-5);
  return out;
}

// Mean over rows of -log q(noisy label), q = C-hat^T softmax(logits).
// Identity C-hat reduces to plain cross-entropy through the same kernel.
template <typename S>
S glc_corrected_loss(const Tensor<S>& logits, const std::vector<int>& noisy_labels,
                     const CorruptionMatrix<S>& chat, int* floored_rows = nullptr) {
  chat.validate(1e-6);
  if (logits.rank() != 2)
    throw std::invalid_argument("glc_corrected_loss: logits must be [N,K]");
  const int n = logits.dim(0), k = logits.dim(1);
  if (chat.classes() != k)
    throw std::invalid_argument("glc_corrected_loss: matrix and logits disagree on K");
  if (static_cast<int>(noisy_labels.size()) != n)
    throw std::invalid_argument("glc_corrected_loss: one label per row required");
  std::vector<S> p(static_cast<std::size_t>(k));
  S acc = S(0);
  int floored = 0;
  for (int r = 0; r < n; ++r) {
    const int y = noisy_labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= k)
      throw std::out_of_range("glc_corrected_loss: label out of range");
    detail::softmax_row(logits.data() + static_cast<std::int64_t>(r) * k, k, p.data());
    S q = S(0);
    for (int i = 0; i < k; ++i) q += chat.entries(i, y) * p[static_cast<std::size_t>(i)];
    if (q < S(kGlcFloor)) {
      q = S(kGlcFloor);
      ++floored;
    }
    acc += -std::log(q);
  }
  if (floored_rows) *floored_rows = floored;
  return acc / static_cast<S>(n);
}

enum class LabelNoiseMethod { None, Glc };

template <typename S>
struct LabelNoiseConfig {
  LabelNoiseMethod method = LabelNoiseMethod::None;
  bool use_rotations = false;
  bool rotation_head_trainable = true;  // during fine-tuning
  S trusted_fraction = S(0.05);
  std::vector<S> strengths;  // empty = 0.0, 0.1, ..., 1.0
  int epochs_normal = 20;    // plain training; pretrain/finetune keep 100:40
  int epochs_pretrain = 20;
  int epochs_finetune = 8;
  int batch_size = 32;
  S base_lr = S(0.1);
  S momentum = S(0.9);
  S weight_decay = S(5e-4);
  S lambda = S(0.5);

  std::vector<S> strength_list() const {
    if (!strengths.empty()) return strengths;
    std::vector<S> out;
    for (int i = 0; i <= 10; ++i) out.push_back(static_cast<S>(i) / S(10));
    return out;
  }

  void validate() const {
    if (!(trusted_fraction >= S(0) && trusted_fraction < S(1)))
      throw std::invalid_argument("LabelNoiseConfig: trusted_fraction outside [0,1)");
    if (epochs_normal <= 0 || epochs_pretrain <= 0 || epochs_finetune <= 0 ||
        batch_size <= 0)
      throw std::invalid_argument("LabelNoiseConfig: epoch and batch counts must be > 0");
    for (S s : strength_list())
      if (!(s >= S(0) && s <= S(1)))
        throw std::invalid_argument("LabelNoiseConfig: strength outside [0,1]");
  }
};

namespace detail {

template <typename S>
void zero_head_grads(ParameterSet<S>& grads, const std::string& head) {
  for (const char* part : {".weight", ".bias"}) {
    auto it = grads.tensors.find("head." + head + part);
    if (it != grads.tensors.end())
      std::fill(it->second.raw().begin(), it->second.raw().end(), S(0));
  }
}

// Loss terms for one label-noise training batch: supervised CE or GLC-corrected
// CE on the identity rows, plus the rotation term when enabled.
template <typename S>
ParameterSet<S> labelnoise_step(const NetworkSpec& spec, const ParameterSet<S>& params,
                                const NoisyLabeledDataset<S>& data,
                                const std::vector<int>& idx,
                                const CorruptionMatrix<S>* chat, bool with_rotation,
                                S lambda, bool rotation_trainable) {
  Tensor<S> bx = take_rows(data.images, idx);
  const int count = static_cast<int>(idx.size());

  Tensor<S> batch_images;
  std::vector<int> identity_row(static_cast<std::size_t>(count));
  std::vector<LossTerm<S>> terms;
  ViewBatch<S> views;
  if (with_rotation) {
    ViewConfig vcfg;
    vcfg.heads = {"rotation"};
    vcfg.mode = ViewMode::AllRotations;
    views = build_ss_views(bx, vcfg);
    batch_images = std::move(views.images);
    for (int r = 0; r < batch_images.dim(0); ++r)
      if (views.labels[static_cast<std::size_t>(r)].rotation_class == 0)
        identity_row[static_cast<std::size_t>(views.source_index[static_cast<std::size_t>(r)])] = r;
    auto ss = ss_view_terms(views, {"rotation"}, lambda, 0, batch_images.dim(0));
    for (auto& t : ss) terms.push_back(std::move(t));
  } else {
    batch_images = std::move(bx);
    std::iota(identity_row.begin(), identity_row.end(), 0);
  }

  const int total_rows = batch_images.dim(0);
  LossTerm<S> sup;
  sup.head = "class";
  sup.weight = S(1);
  sup.labels.assign(static_cast<std::size_t>(total_rows), -1);
  if (chat) {
    sup.kind = LossKind::GlcCE;
    sup.correction = chat->entries;
    sup.trusted.assign(static_cast<std::size_t>(total_rows), 0);
  }
  for (int i = 0; i < count; ++i) {
    const std::size_t src = static_cast<std::size_t>(idx[static_cast<std::size_t>(i)]);
    const std::size_t row = static_cast<std::size_t>(identity_row[static_cast<std::size_t>(i)]);
    sup.labels[row] = chat && data.trusted[src] ? data.clean_labels[src]
                                                : data.noisy_labels[src];
    if (chat) sup.trusted[row] = data.trusted[src];
  }
  terms.insert(terms.begin(), std::move(sup));

  EvalOptions opt;
  opt.param_grads = true;
  auto result = evaluate(spec, params, batch_images, terms, opt);
  if (with_rotation && !rotation_trainable)
    zero_head_grads(result.param_grads, "rotation");
  return std::move(result.param_grads);
}

// Rotation-only pre-training on unlabeled images.
template <typename S>
void rotation_pretrain(const NetworkSpec& spec, ParameterSet<S>& params,
                       const Tensor<S>& images, int epochs, int batch_size, S base_lr,
                       S momentum, S weight_decay, Rng& rng) {
  LossSpec<S> ls;
  ls.lambda = S(1);
  ls.include_supervised = false;
  ls.enabled_heads = {"rotation"};
  ls.view_mode = ViewMode::AllRotations;
  sgd_epochs(params, images.dim(0), epochs, batch_size, base_lr, momentum,
             weight_decay, rng, [&](const std::vector<int>& idx) {
               Tensor<S> bx = take_rows(images, idx);
               std::vector<int> dummy;
               auto [bd, grads] = total_loss_grads(spec, params, bx, dummy, ls);
               return grads;
             });
}

}  // namespace detail

// Plain supervised training on clean labels, optionally with the joint
// rotation auxiliary. Used by the corruption-robustness experiment, where no
// label noise is involved.
template <typename S>
void train_supervised(const NetworkSpec& spec, ParameterSet<S>& params,
                      const Tensor<S>& images, const std::vector<int>& labels,
                      bool with_rotation, S lambda, int epochs, int batch_size, S base_lr,
                      S momentum, S weight_decay, std::uint64_t seed) {
  NoisyLabeledDataset<S> data;
  data.images = images;
  data.clean_labels = labels;
  data.noisy_labels = labels;
  data.trusted.assign(labels.size(), 0);
  data.validate();
  Rng rng(derive_seed(seed, "train"));
  detail::sgd_epochs(params, images.dim(0), epochs, batch_size, base_lr, momentum,
                     weight_decay, rng, [&](const std::vector<int>& idx) {
                       return detail::labelnoise_step(
                           spec, params, data, idx,
                           static_cast<const CorruptionMatrix<S>*>(nullptr), with_rotation,
                           lambda, true);
                     });
}

template <typename S>
struct StrengthResult {
  S strength = S(0);
  double test_error = 0;
  std::vector<int> glc_fallback_classes;
};

template <typename S>
struct LabelNoiseReport {
  std::vector<StrengthResult<S>> per_strength;
  double mean_error = 0;  // arithmetic mean over the strength list
};

// Trains one model for a single corruption strength and returns its clean-test
// error. Exposed separately so strength cells can run on parallel workers.
template <typename S>
StrengthResult<S> label_noise_run(const NetworkSpec& spec, const Tensor<S>& train_images,
                                  const std::vector<int>& train_labels,
                                  const Tensor<S>& test_images,
                                  const std::vector<int>& test_labels, S strength,
                                  const LabelNoiseConfig<S>& cfg, std::uint64_t seed,
                                  ParameterSet<S>* out_params = nullptr) {
  cfg.validate();
  const int k = spec.head_classes("class");
  auto c = corruption_matrix(k, strength);
  const double trusted_fraction =
      cfg.method == LabelNoiseMethod::Glc ? static_cast<double>(cfg.trusted_fraction) : 0.0;
  auto data = make_noisy_dataset(train_images, train_labels, c, trusted_fraction,
                                 derive_seed(seed, "dataset"));

  const int n = train_images.dim(0);
  ParameterSet<S> params;
  {
    Rng init_rng(derive_seed(seed, "init"));
    params = init_parameters<S>(spec, init_rng);
  }
  // With rotations: one self-supervised pre-train, then every supervised stage
  // fine-tunes from that trunk with the combined loss.
  if (cfg.use_rotations) {
    Rng rng(derive_seed(seed, "pretrain"));
    detail::rotation_pretrain(spec, params, train_images, cfg.epochs_pretrain,
                              cfg.batch_size, cfg.base_lr, cfg.momentum, cfg.weight_decay,
                              rng);
  }
  const ParameterSet<S> start = params;
  const int sup_epochs = cfg.use_rotations ? cfg.epochs_finetune : cfg.epochs_normal;

  auto run_stage = [&](const CorruptionMatrix<S>* chat, const char* tag) {
    Rng rng(derive_seed(seed, tag));
    detail::sgd_epochs(params, n, sup_epochs, cfg.batch_size, cfg.base_lr,
                       cfg.momentum, cfg.weight_decay, rng,
                       [&](const std::vector<int>& idx) {
                         return detail::labelnoise_step(spec, params, data, idx, chat,
                                                        cfg.use_rotations, cfg.lambda,
                                                        cfg.rotation_head_trainable);
                       });
  };

  StrengthResult<S> result;
  result.strength = strength;
  if (cfg.method == LabelNoiseMethod::None) {
    run_stage(nullptr, "train");
  } else {
    run_stage(nullptr, "stage1");
    auto est = glc_estimate(spec, params, data);
    result.glc_fallback_classes = est.fallback_classes;
    params = start;  // stage 2 restarts from the shared initialization
    run_stage(&est.matrix, "stage2");
  }
  result.test_error = 1.0 - eval_accuracy(spec, params, test_images, test_labels);
  if (out_params) *out_params = std::move(params);
  return result;
}

// Full sweep over the strength list; per-strength seeds are derived, so cells
// are reproducible independently of execution order.
template <typename S>
LabelNoiseReport<S> label_noise_protocol(const NetworkSpec& spec,
                                         const Tensor<S>& train_images,
                                         const std::vector<int>& train_labels,
                                         const Tensor<S>& test_images,
                                         const std::vector<int>& test_labels,
                                         const LabelNoiseConfig<S>& cfg,
                                         std::uint64_t seed) {
  cfg.validate();
  LabelNoiseReport<S> report;
  const auto strengths = cfg.strength_list();
  double sum = 0.0;
  for (std::size_t i = 0; i < strengths.size(); ++i) {
    auto r = label_noise_run(spec, train_images, train_labels, test_images, test_labels,
                             strengths[i], cfg, derive_seed(seed, detail::strcat("strength-", i)));
    sum += r.test_error;
    report.per_strength.push_back(std::move(r));
  }
  report.mean_error = sum / static_cast<double>(strengths.size());
  return report;
}

}  // namespace selfrobust
