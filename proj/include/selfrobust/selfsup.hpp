#pragma once

#include <optional>

#include "selfrobust/autodiff.hpp"
#include "selfrobust/transforms.hpp"

namespace selfrobust {

// Combined-objective configuration. The supervised term reads the "class"
// head; self-supervision reads the transformation heads. At least one of the
// two must be enabled.
template <typename S>
struct LossSpec {
  S lambda = S(0.5);
  std::vector<std::string> enabled_heads = {"rotation"};
  bool include_supervised = true;
  S oe_weight = S(0);
  ViewMode view_mode = ViewMode::AllRotations;
  int translation = 0;  // pixels; 0 selects the H/4 default

  void validate() const {
    if (!std::isfinite(static_cast<double>(lambda)) || lambda < S(0))
      throw std::invalid_argument("LossSpec: lambda must be finite and >= 0");
    if (oe_weight < S(0))
      throw std::invalid_argument("LossSpec: oe_weight must be >= 0");
    if (!include_supervised && enabled_heads.empty())
      throw std::invalid_argument("LossSpec: no loss term enabled");
  }
};

namespace detail {

inline int required_head_classes(const std::string& head) {
  if (head == "rotation") return 4;
  if (head == "vtrans" || head == "htrans") return 3;
  if (head == "resize") return 2;
  return -1;
}

inline void check_ss_heads(const NetworkSpec& spec, const std::vector<std::string>& heads) {
  for (const auto& h : heads) {
    const int want = required_head_classes(h);
    if (want < 0)
      throw std::invalid_argument("self-supervised loss: unknown head '" + h + "'");
    if (!spec.has_head(h))
      throw std::invalid_argument("self-supervised loss: network lacks head '" + h + "'");
    if (spec.head_classes(h) != want)
      throw std::invalid_argument(detail::strcat("self-supervised loss: head '", h,
                                                 "' must have ", want, " classes, has ",
                                                 spec.head_classes(h)));
  }
}

// Canonical head order keeps term construction (and therefore summation
// order) identical between the component ops and total_loss.
inline std::vector<std::string> canonical_heads(const std::vector<std::string>& heads) {
  std::vector<std::string> out;
  for (const char* name : {"rotation", "vtrans", "htrans", "resize"})
    if (has_head(heads, name)) out.emplace_back(name);
  return out;
}

inline int label_for_head(const TransformLabel& l, const std::string& head) {
  if (head == "rotation") return l.rotation_class;
  if (head == "vtrans") return l.vtrans_class;
  if (head == "htrans") return l.htrans_class;
  return l.resized_class;
}

}  // namespace detail

// One cross-entropy term per enabled head, targets taken from the view labels.
// `row_offset`/`total_rows` place the view rows inside a larger concatenated
// batch; rows outside the view block are excluded.
template <typename S>
std::vector<LossTerm<S>> ss_view_terms(const ViewBatch<S>& views,
                                       const std::vector<std::string>& heads, S weight,
                                       int row_offset = 0, int total_rows = -1) {
  // Row count comes from the labels so callers may pass a ViewBatch whose
  // images were already moved into a concatenated batch.
  const int m = static_cast<int>(views.labels.size());
  if (total_rows < 0) total_rows = m;
  std::vector<LossTerm<S>> terms;
  for (const auto& head : detail::canonical_heads(heads)) {
    LossTerm<S> term;
    term.head = head;
    term.kind = LossKind::CrossEntropy;
    term.weight = weight;
    term.labels.assign(static_cast<std::size_t>(total_rows), -1);
    for (int r = 0; r < m; ++r)
      term.labels[static_cast<std::size_t>(row_offset + r)] =
          detail::label_for_head(views.labels[static_cast<std::size_t>(r)], head);
    terms.push_back(std::move(term));
  }
  return terms;
}

// Sum over enabled heads of the mean cross-entropy of that head's prediction
// against the view's transformation label.
template <typename S>
S multihead_ss_loss(const NetworkSpec& spec, const ParameterSet<S>& params,
                    const ViewBatch<S>& views, const std::vector<std::string>& heads) {
  if (heads.empty())
    throw std::invalid_argument("multihead_ss_loss: no heads enabled");
  detail::check_ss_heads(spec, heads);
  auto terms = ss_view_terms(views, heads, S(1));
  auto result = evaluate(spec, params, views.images, terms);
  S sum = S(0);
  for (S v : result.term_values) sum += v;
  return sum;
}

// Mean over the four rotations of the rotation head's cross-entropy.
// Never reads class labels.
template <typename S>
S rotation_ss_loss(const NetworkSpec& spec, const ParameterSet<S>& params,
                   const Tensor<S>& batch) {
  ViewConfig cfg;
  cfg.heads = {"rotation"};
  cfg.mode = ViewMode::AllRotations;
  auto views = build_ss_views(batch, cfg);
  return multihead_ss_loss(spec, params, views, cfg.heads);
}

template <typename S>
struct TotalLossBreakdown {
  S total = S(0);
  S supervised = S(0);
  S selfsup = S(0);  // sum of per-head means, before the lambda weight
  S oe = S(0);       // sum of per-head uniformity means, before oe_weight
};

// Assembled objective over (possibly) views of the batch plus outlier views.
// Kept as a struct so training and the PGD adversary can reuse one forward
// batch for value, parameter gradients, and pulled-back input gradients.
template <typename S>
struct AssembledLoss {
  Tensor<S> images;
  std::vector<LossTerm<S>> terms;
  ViewBatch<S> in_views;   // images member emptied; metadata retained
  ViewBatch<S> out_views;  // ditto, when outliers are present
  bool plain = false;
  int n_in_rows = 0;
  int supervised_term = -1;
  std::vector<int> ss_terms;
  std::vector<int> oe_terms;

  TotalLossBreakdown<S> breakdown(const std::vector<S>& term_values, S lambda,
                                  S oe_weight) const {
    TotalLossBreakdown<S> b;
    if (supervised_term >= 0)
      b.supervised = term_values[static_cast<std::size_t>(supervised_term)];
    for (int i : ss_terms) b.selfsup += term_values[static_cast<std::size_t>(i)];
    for (int i : oe_terms) b.oe += term_values[static_cast<std::size_t>(i)];
    b.total = b.supervised;
    if (!ss_terms.empty()) b.total += lambda * b.selfsup;
    if (!oe_terms.empty()) b.total += oe_weight * b.oe;
    return b;
  }
};

template <typename S>
AssembledLoss<S> assemble_total_loss(const NetworkSpec& spec, const Tensor<S>& images,
                                     const std::vector<int>& labels,
                                     const LossSpec<S>& lspec,
                                     const Tensor<S>* outliers = nullptr) {
  lspec.validate();
  if (lspec.include_supervised) {
    if (!spec.has_head("class"))
      throw std::invalid_argument("total_loss: supervised term needs a 'class' head");
    if (static_cast<int>(labels.size()) != images.dim(0))
      throw std::invalid_argument("total_loss: class labels required per image");
  }
  const bool want_ss = !lspec.enabled_heads.empty() && lspec.lambda != S(0);
  const bool want_oe = lspec.oe_weight > S(0) && outliers != nullptr && outliers->dim(0) > 0;
  if (want_ss || want_oe) detail::check_ss_heads(spec, lspec.enabled_heads);

  AssembledLoss<S> out;
  // Supervised-only fast path evaluates the raw batch, so lambda = 0 falls
  // back to plain cross-entropy bit for bit.
  if (!want_ss && !want_oe) {
    out.plain = true;
    out.images = images;
    out.n_in_rows = images.dim(0);
    LossTerm<S> sup;
    sup.head = "class";
    sup.labels = labels;
    sup.weight = S(1);
    out.supervised_term = 0;
    out.terms.push_back(std::move(sup));
    return out;
  }

  ViewConfig vcfg;
  vcfg.heads = lspec.enabled_heads;
  vcfg.mode = lspec.view_mode;
  vcfg.t = lspec.translation;
  out.in_views = build_ss_views(images, vcfg);
  const int m_in = out.in_views.images.dim(0);
  int m_out = 0;
  if (want_oe) {
    out.out_views = build_ss_views(*outliers, vcfg);
    m_out = out.out_views.images.dim(0);
  }
  const int total_rows = m_in + m_out;

  if (m_out == 0) {
    out.images = std::move(out.in_views.images);
  } else {
    out.images = Tensor<S>({total_rows, images.dim(1), images.dim(2), images.dim(3)});
    const std::int64_t img_sz = out.images.size() / total_rows;
    std::copy(out.in_views.images.data(), out.in_views.images.data() + m_in * img_sz,
              out.images.data());
    std::copy(out.out_views.images.data(), out.out_views.images.data() + m_out * img_sz,
              out.images.data() + m_in * img_sz);
    out.out_views.images = Tensor<S>();
  }
  out.in_views.images = Tensor<S>();
  out.n_in_rows = m_in;

  if (lspec.include_supervised) {
    // The supervised term sees only the untransformed views.
    LossTerm<S> sup;
    sup.head = "class";
    sup.weight = S(1);
    sup.labels.assign(static_cast<std::size_t>(total_rows), -1);
    for (int r = 0; r < m_in; ++r) {
      const TransformLabel& l = out.in_views.labels[static_cast<std::size_t>(r)];
      if (l.rotation_class == 0 && l.vtrans_class == 1 && l.htrans_class == 1 &&
          l.resized_class == 0)
        sup.labels[static_cast<std::size_t>(r)] =
            labels[static_cast<std::size_t>(out.in_views.source_index[r])];
    }
    out.supervised_term = static_cast<int>(out.terms.size());
    out.terms.push_back(std::move(sup));
  }

  if (want_ss) {
    auto ss = ss_view_terms(out.in_views, lspec.enabled_heads, lspec.lambda, 0, total_rows);
    for (auto& t : ss) {
      out.ss_terms.push_back(static_cast<int>(out.terms.size()));
      out.terms.push_back(std::move(t));
    }
  }

  if (want_oe) {
    for (const auto& head : detail::canonical_heads(lspec.enabled_heads)) {
      LossTerm<S> term;
      term.head = head;
      term.kind = LossKind::UniformCE;
      term.weight = lspec.oe_weight;
      term.rows.assign(static_cast<std::size_t>(total_rows), 0);
      for (int r = m_in; r < total_rows; ++r) term.rows[static_cast<std::size_t>(r)] = 1;
      out.oe_terms.push_back(static_cast<int>(out.terms.size()));
      out.terms.push_back(std::move(term));
    }
  }
  return out;
}

// L_CE(x, y) + lambda * L_SS(x) (+ oe_weight * uniformity on outlier views).
template <typename S>
TotalLossBreakdown<S> total_loss(const NetworkSpec& spec, const ParameterSet<S>& params,
                                 const Tensor<S>& images, const std::vector<int>& labels,
                                 const LossSpec<S>& lspec,
                                 const Tensor<S>* outliers = nullptr) {
  auto assembled = assemble_total_loss(spec, images, labels, lspec, outliers);
  auto result = evaluate(spec, params, assembled.images, assembled.terms);
  return assembled.breakdown(result.term_values, lspec.lambda, lspec.oe_weight);
}

// Same objective with parameter gradients, for the training loops.
template <typename S>
std::pair<TotalLossBreakdown<S>, ParameterSet<S>> total_loss_grads(
    const NetworkSpec& spec, const ParameterSet<S>& params, const Tensor<S>& images,
    const std::vector<int>& labels, const LossSpec<S>& lspec,
    const Tensor<S>* outliers = nullptr) {
  auto assembled = assemble_total_loss(spec, images, labels, lspec, outliers);
  EvalOptions opt;
  opt.param_grads = true;
  auto result = evaluate(spec, params, assembled.images, assembled.terms, opt);
  return {assembled.breakdown(result.term_values, lspec.lambda, lspec.oe_weight),
          std::move(result.param_grads)};
}

}  // namespace selfrobust
