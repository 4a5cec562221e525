#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "selfrobust/network.hpp"
#include "selfrobust/tensor.hpp"

namespace selfrobust {

namespace detail {

inline const char* layer_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Dense: return "dense";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "max_pool";
    case LayerKind::GlobalAvgPool: return "global_avg_pool";
    case LayerKind::Flatten: return "flatten";
  }
  return "?";
}

// Stable softmax of one logit row (max subtraction), written into p.
template <typename S>
void softmax_row(const S* z, int k, S* p) {
  S m = z[0];
  for (int j = 1; j < k; ++j) m = std::max(m, z[j]);
  S sum = S(0);
  for (int j = 0; j < k; ++j) {
    p[j] = std::exp(z[j] - m);
    sum += p[j];
  }
  for (int j = 0; j < k; ++j) p[j] /= sum;
}

template <typename S>
void conv_forward(const LayerDesc& d, const Tensor<S>& w, const Tensor<S>& b,
                  const Tensor<S>& x, Tensor<S>& y, MatX<S>& cols) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), iw = x.dim(3);
  const int f = d.filters, k = d.kernel, s = d.stride, p = d.pad;
  const int oh = y.dim(2), ow = y.dim(3);
  const std::int64_t ckk = static_cast<std::int64_t>(c) * k * k;
  const std::int64_t ohow = static_cast<std::int64_t>(oh) * ow;
  cols.setZero(n * ohow, ckk);
  for (int ni = 0; ni < n; ++ni) {
    const S* img = x.data() + static_cast<std::int64_t>(ni) * c * h * iw;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        S* row = cols.data() + (ni * ohow + oy * ow + ox) * ckk;
        for (int ci = 0; ci < c; ++ci) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * s - p + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * s - p + kx;
              if (ix < 0 || ix >= iw) continue;
              row[(static_cast<std::int64_t>(ci) * k + ky) * k + kx] =
                  img[(static_cast<std::int64_t>(ci) * h + iy) * iw + ix];
            }
          }
        }
      }
    }
  }
  ConstMatMap<S> wmat(w.data(), f, ckk);
  ConstVecMap<S> bvec(b.data(), f);
  MatX<S> out = cols * wmat.transpose();  // [n*ohow, f]
  for (int ni = 0; ni < n; ++ni) {
    MatMap<S> yimg(y.data() + static_cast<std::int64_t>(ni) * f * ohow, f, ohow);
    yimg = out.middleRows(ni * ohow, ohow).transpose();
    yimg.colwise() += bvec;
  }
}

template <typename S>
void conv_backward(const LayerDesc& d, const Tensor<S>& w, const Tensor<S>& x,
                   const Tensor<S>& dy, const MatX<S>& cols, Tensor<S>* dw,
                   Tensor<S>* db, Tensor<S>* dx) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), iw = x.dim(3);
  const int f = d.filters, k = d.kernel, s = d.stride, p = d.pad;
  const int oh = dy.dim(2), ow = dy.dim(3);
  const std::int64_t ckk = static_cast<std::int64_t>(c) * k * k;
  const std::int64_t ohow = static_cast<std::int64_t>(oh) * ow;
  MatX<S> dout(n * ohow, f);
  for (int ni = 0; ni < n; ++ni) {
    ConstMatMap<S> dyimg(dy.data() + static_cast<std::int64_t>(ni) * f * ohow, f, ohow);
    dout.middleRows(ni * ohow, ohow) = dyimg.transpose();
  }
  if (dw) {
    MatMap<S> dwmat(dw->data(), f, ckk);
    dwmat.noalias() += dout.transpose() * cols;
  }
  if (db) {
    VecMap<S> dbvec(db->data(), f);
    dbvec += dout.colwise().sum().transpose();
  }
  if (dx) {
    ConstMatMap<S> wmat(w.data(), f, ckk);
    MatX<S> dcols = dout * wmat;  // [n*ohow, ckk]
    for (int ni = 0; ni < n; ++ni) {
      S* dimg = dx->data() + static_cast<std::int64_t>(ni) * c * h * iw;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          const S* row = dcols.data() + (ni * ohow + oy * ow + ox) * ckk;
          for (int ci = 0; ci < c; ++ci) {
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy * s - p + ky;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = ox * s - p + kx;
                if (ix < 0 || ix >= iw) continue;
                dimg[(static_cast<std::int64_t>(ci) * h + iy) * iw + ix] +=
                    row[(static_cast<std::int64_t>(ci) * k + ky) * k + kx];
              }
            }
          }
        }
      }
    }
  }
}

template <typename S>
void maxpool_forward(const LayerDesc& d, const Tensor<S>& x, Tensor<S>& y,
                     std::vector<std::int32_t>& argmax) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int win = d.window, oh = y.dim(2), ow = y.dim(3);
  argmax.resize(static_cast<std::size_t>(y.size()));
  std::int64_t oi = 0;
  for (int ni = 0; ni < n; ++ni) {
    const S* img = x.data() + static_cast<std::int64_t>(ni) * c * h * w;
    for (int ci = 0; ci < c; ++ci) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          std::int32_t best = (static_cast<std::int32_t>(ci) * h + oy * win) * w + ox * win;
          S bv = img[best];
          for (int ky = 0; ky < win; ++ky) {
            for (int kx = 0; kx < win; ++kx) {
              const std::int32_t idx =
                  (static_cast<std::int32_t>(ci) * h + oy * win + ky) * w + ox * win + kx;
              if (img[idx] > bv) {  // first max wins ties
                bv = img[idx];
                best = idx;
              }
            }
          }
          y[oi] = bv;
          argmax[static_cast<std::size_t>(oi)] = best;
          ++oi;
        }
      }
    }
  }
}

}  // namespace detail

// Per-batch forward state kept for the reverse pass.
template <typename S>
struct TrunkCache {
  std::vector<Tensor<S>> acts;  // acts[0] = input, acts[i+1] = trunk layer i output
  std::vector<MatX<S>> conv_cols;
  std::vector<std::vector<std::int32_t>> pool_argmax;
};

// Runs the trunk on images [N,C,H,W]; returns the penultimate matrix [N,D].
template <typename S>
const Tensor<S>& forward_trunk(const NetworkSpec& spec, const ParameterSet<S>& params,
                               const Tensor<S>& images, TrunkCache<S>& cache) {
  const auto& in = spec.input_shape();
  if (images.rank() != 4 || images.dim(1) != in[0] || images.dim(2) != in[1] ||
      images.dim(3) != in[2])
    throw std::invalid_argument(detail::strcat(
        "forward_trunk: images ", detail::shape_string(images.shape()),
        " do not match spec input ", detail::shape_string(in)));
  const int n = images.dim(0);
  const std::size_t nlayers = spec.trunk().size();
  cache.acts.clear();
  cache.acts.reserve(nlayers + 1);
  cache.conv_cols.assign(nlayers, MatX<S>());
  cache.pool_argmax.assign(nlayers, {});
  cache.acts.push_back(images);
  for (std::size_t i = 0; i < nlayers; ++i) {
    const LayerDesc& d = spec.trunk()[i];
    const Tensor<S>& x = cache.acts.back();
    std::vector<int> out_shape = spec.layer_out_shape(static_cast<int>(i));
    out_shape.insert(out_shape.begin(), n);
    Tensor<S> y(out_shape);
    const std::string base = "trunk." + std::to_string(i);
    switch (d.kind) {
      case LayerKind::Conv2d:
        detail::conv_forward(d, params.at(base + ".weight"), params.at(base + ".bias"), x,
                             y, cache.conv_cols[i]);
        break;
      case LayerKind::Dense: {
        const Tensor<S>& w = params.at(base + ".weight");
        const Tensor<S>& b = params.at(base + ".bias");
        auto xm = x.as_matrix(n, x.size() / n);
        auto ym = y.as_matrix(n, d.units);
        ym.noalias() = xm * w.as_matrix(w.dim(0), w.dim(1));
        ym.rowwise() += ConstVecMap<S>(b.data(), d.units).transpose();
        break;
      }
      case LayerKind::Relu:
        for (std::int64_t j = 0; j < x.size(); ++j) y[j] = x[j] > S(0) ? x[j] : S(0);
        break;
      case LayerKind::MaxPool:
        detail::maxpool_forward(d, x, y, cache.pool_argmax[i]);
        break;
      case LayerKind::GlobalAvgPool: {
        const int c = x.dim(1);
        const std::int64_t hw = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
        for (int ni = 0; ni < n; ++ni)
          for (int ci = 0; ci < c; ++ci) {
            const S* plane = x.data() + (static_cast<std::int64_t>(ni) * c + ci) * hw;
            S acc = S(0);
            for (std::int64_t j = 0; j < hw; ++j) acc += plane[j];
            y(ni, ci) = acc / static_cast<S>(hw);
          }
        break;
      }
      case LayerKind::Flatten:
        std::copy(x.data(), x.data() + x.size(), y.data());
        break;
    }
    cache.acts.push_back(std::move(y));
  }
  return cache.acts.back();
}

// Logits of one head given the penultimate matrix.
template <typename S>
Tensor<S> head_logits(const NetworkSpec& spec, const ParameterSet<S>& params,
                      const std::string& head, const Tensor<S>& penult) {
  const int classes = spec.head_classes(head);
  const int n = penult.dim(0);
  const Tensor<S>& w = params.at("head." + head + ".weight");
  const Tensor<S>& b = params.at("head." + head + ".bias");
  Tensor<S> logits({n, classes});
  auto lm = logits.as_matrix(n, classes);
  lm.noalias() = penult.as_matrix(n, penult.dim(1)) * w.as_matrix(w.dim(0), w.dim(1));
  lm.rowwise() += ConstVecMap<S>(b.data(), classes).transpose();
  return logits;
}

template <typename S>
Tensor<S> forward_logits(const NetworkSpec& spec, const ParameterSet<S>& params,
                         const Tensor<S>& images, const std::string& head) {
  TrunkCache<S> cache;
  const Tensor<S>& penult = forward_trunk(spec, params, images, cache);
  return head_logits(spec, params, head, penult);
}

enum class LossKind {
  CrossEntropy,  // mean of -log softmax[label] over included rows
  UniformCE,     // mean cross-entropy of softmax against the uniform distribution
  GlcCE,         // forward-corrected CE through a row-stochastic matrix
};

// One additive piece of the training objective, attached to a single head.
// Row selection: CrossEntropy/GlcCE rows with label -1 are excluded; UniformCE
// uses `rows` as an include mask (empty = every row).
template <typename S>
struct LossTerm {
  std::string head;
  LossKind kind = LossKind::CrossEntropy;
  std::vector<int> labels;
  std::vector<std::uint8_t> rows;
  S weight = S(1);
  MatX<S> correction;              // GlcCE only
  std::vector<std::uint8_t> trusted;  // GlcCE: rows trained with clean CE
};

template <typename S>
struct EvalResult {
  S loss = S(0);
  std::vector<S> term_values;  // unweighted per-term means, in term order
  ParameterSet<S> param_grads;
  Tensor<S> input_grad;
  int glc_floor_count = 0;
};

struct EvalOptions {
  bool param_grads = false;
  bool input_grad = false;
};

// q(noisy label) floor for the corrected loss; floored rows are counted in
// EvalResult::glc_floor_count.
inline constexpr double kGlcFloor = 1e-12;

// Evaluates sum_t weight_t * mean-loss_t and, on request, exact reverse-mode
// gradients with respect to parameters and/or input images.
template <typename S>
EvalResult<S> evaluate(const NetworkSpec& spec, const ParameterSet<S>& params,
                       const Tensor<S>& images, const std::vector<LossTerm<S>>& terms,
                       const EvalOptions& opt = {}) {
  TrunkCache<S> cache;
  const Tensor<S>& penult = forward_trunk(spec, params, images, cache);
  const int n = penult.dim(0);
  const int pdim = penult.dim(1);

  EvalResult<S> result;
  std::map<std::string, Tensor<S>> logits_by_head;
  std::map<std::string, MatX<S>> dlogits_by_head;
  const bool want_grads = opt.param_grads || opt.input_grad;

  for (const auto& term : terms) {
    const int classes = spec.head_classes(term.head);
    auto it = logits_by_head.find(term.head);
    if (it == logits_by_head.end())
      it = logits_by_head.emplace(term.head, head_logits(spec, params, term.head, penult))
               .first;
    const Tensor<S>& logits = it->second;

    if (term.kind != LossKind::UniformCE) {
      if (static_cast<int>(term.labels.size()) != n)
        throw std::invalid_argument("evaluate: term labels must have one entry per row");
      for (int l : term.labels)
        if (l < -1 || l >= classes)
          throw std::out_of_range(detail::strcat("evaluate: label ", l,
                                                 " out of range for head '", term.head,
                                                 "' with ", classes, " classes"));
    }
    if (term.kind == LossKind::GlcCE) {
      if (term.correction.rows() != classes || term.correction.cols() != classes)
        throw std::invalid_argument("evaluate: GLC correction matrix shape mismatch");
    }

    int included = 0;
    if (term.kind == LossKind::UniformCE) {
      for (int r = 0; r < n; ++r)
        if (term.rows.empty() || term.rows[static_cast<std::size_t>(r)]) ++included;
    } else {
      for (int l : term.labels)
        if (l >= 0) ++included;
    }
    if (included == 0)
      throw std::invalid_argument("evaluate: loss term selects no rows");

    MatX<S>* dz = nullptr;
    if (want_grads) {
      auto dit = dlogits_by_head.find(term.head);
      if (dit == dlogits_by_head.end())
        dit = dlogits_by_head.emplace(term.head, MatX<S>::Zero(n, classes)).first;
      dz = &dit->second;
    }

    const S scale = term.weight / static_cast<S>(included);
    std::vector<S> p(static_cast<std::size_t>(classes));
    S acc = S(0);
    for (int r = 0; r < n; ++r) {
      const S* z = logits.data() + static_cast<std::int64_t>(r) * classes;
      switch (term.kind) {
        case LossKind::CrossEntropy: {
          const int y = term.labels[static_cast<std::size_t>(r)];
          if (y < 0) continue;
          detail::softmax_row(z, classes, p.data());
          acc += -std::log(p[static_cast<std::size_t>(y)]);
          if (dz)
            for (int j = 0; j < classes; ++j)
              (*dz)(r, j) += scale * (p[static_cast<std::size_t>(j)] - S(j == y ? 1 : 0));
          break;
        }
        case LossKind::UniformCE: {
          if (!term.rows.empty() && !term.rows[static_cast<std::size_t>(r)]) continue;
          detail::softmax_row(z, classes, p.data());
          S row_loss = S(0);
          for (int j = 0; j < classes; ++j)
            row_loss += -std::log(p[static_cast<std::size_t>(j)]);
          acc += row_loss / static_cast<S>(classes);
          if (dz)
            for (int j = 0; j < classes; ++j)
              (*dz)(r, j) += scale * (p[static_cast<std::size_t>(j)] - S(1) / static_cast<S>(classes));
          break;
        }
        case LossKind::GlcCE: {
          const int y = term.labels[static_cast<std::size_t>(r)];
          if (y < 0) continue;
          const bool clean = !term.trusted.empty() && term.trusted[static_cast<std::size_t>(r)];
          detail::softmax_row(z, classes, p.data());
          if (clean) {
            acc += -std::log(p[static_cast<std::size_t>(y)]);
            if (dz)
              for (int j = 0; j < classes; ++j)
                (*dz)(r, j) += scale * (p[static_cast<std::size_t>(j)] - S(j == y ? 1 : 0));
          } else {
            S q = S(0);
            for (int i2 = 0; i2 < classes; ++i2)
              q += term.correction(i2, y) * p[static_cast<std::size_t>(i2)];
            if (q < S(kGlcFloor)) {
              q = S(kGlcFloor);
              ++result.glc_floor_count;
            }
            acc += -std::log(q);
            if (dz) {
              // dL/dp_i = -C(i,y)/q, then through softmax.
              S dot = S(0);
              std::vector<S> g(static_cast<std::size_t>(classes));
              for (int i2 = 0; i2 < classes; ++i2) {
                g[static_cast<std::size_t>(i2)] = -term.correction(i2, y) / q;
                dot += p[static_cast<std::size_t>(i2)] * g[static_cast<std::size_t>(i2)];
              }
              for (int j = 0; j < classes; ++j)
                (*dz)(r, j) += scale * p[static_cast<std::size_t>(j)] *
                               (g[static_cast<std::size_t>(j)] - dot);
            }
          }
          break;
        }
      }
    }
    const S mean = acc / static_cast<S>(included);
    result.term_values.push_back(mean);
    result.loss += term.weight * mean;
  }

  if (!std::isfinite(static_cast<double>(result.loss))) {
    for (std::size_t i = 0; i < spec.trunk().size(); ++i) {
      const Tensor<S>& a = cache.acts[i + 1];
      for (std::int64_t j = 0; j < a.size(); ++j)
        if (!std::isfinite(static_cast<double>(a[j])))
          throw NumericError(
              detail::strcat("trunk.", i, " (", detail::layer_name(spec.trunk()[i].kind), ")"),
              "non-finite activation");
    }
    for (const auto& [name, logits] : logits_by_head)
      for (std::int64_t j = 0; j < logits.size(); ++j)
        if (!std::isfinite(static_cast<double>(logits[j])))
          throw NumericError("head." + name, "non-finite logits");
    throw NumericError("loss", "non-finite loss value");
  }

  if (!want_grads) return result;

  if (opt.param_grads) result.param_grads = params.zeros_like();
  MatX<S> dpenult = MatX<S>::Zero(n, pdim);
  for (auto& [head, dz] : dlogits_by_head) {
    const Tensor<S>& w = params.at("head." + head + ".weight");
    if (opt.param_grads) {
      Tensor<S>& dw = result.param_grads.at("head." + head + ".weight");
      Tensor<S>& db = result.param_grads.at("head." + head + ".bias");
      dw.as_matrix(w.dim(0), w.dim(1)).noalias() +=
          penult.as_matrix(n, pdim).transpose() * dz;
      VecMap<S>(db.data(), db.size()) += dz.colwise().sum().transpose();
    }
    dpenult.noalias() += dz * w.as_matrix(w.dim(0), w.dim(1)).transpose();
  }

  // Reverse pass through the trunk.
  const std::size_t nlayers = spec.trunk().size();
  Tensor<S> grad(cache.acts.back().shape());
  std::copy(dpenult.data(), dpenult.data() + dpenult.size(), grad.data());
  for (int i = static_cast<int>(nlayers) - 1; i >= 0; --i) {
    const LayerDesc& d = spec.trunk()[static_cast<std::size_t>(i)];
    const Tensor<S>& x = cache.acts[static_cast<std::size_t>(i)];
    const bool need_dx = i > 0 || opt.input_grad;
    Tensor<S> dx(x.shape());
    const std::string base = "trunk." + std::to_string(i);
    switch (d.kind) {
      case LayerKind::Conv2d: {
        Tensor<S>* dw = opt.param_grads ? &result.param_grads.at(base + ".weight") : nullptr;
        Tensor<S>* db = opt.param_grads ? &result.param_grads.at(base + ".bias") : nullptr;
        detail::conv_backward(d, params.at(base + ".weight"), x, grad,
                              cache.conv_cols[static_cast<std::size_t>(i)], dw, db,
                              need_dx ? &dx : nullptr);
        break;
      }
      case LayerKind::Dense: {
        const Tensor<S>& w = params.at(base + ".weight");
        auto gm = grad.as_matrix(n, d.units);
        if (opt.param_grads) {
          Tensor<S>& dw = result.param_grads.at(base + ".weight");
          Tensor<S>& db = result.param_grads.at(base + ".bias");
          dw.as_matrix(w.dim(0), w.dim(1)).noalias() +=
              x.as_matrix(n, x.size() / n).transpose() * gm;
          VecMap<S>(db.data(), db.size()) += gm.colwise().sum().transpose();
        }
        if (need_dx)
          dx.as_matrix(n, x.size() / n).noalias() =
              gm * w.as_matrix(w.dim(0), w.dim(1)).transpose();
        break;
      }
      case LayerKind::Relu:
        if (need_dx)
          for (std::int64_t j = 0; j < x.size(); ++j)
            dx[j] = x[j] > S(0) ? grad[j] : S(0);
        break;
      case LayerKind::MaxPool:
        if (need_dx) {
          const auto& argmax = cache.pool_argmax[static_cast<std::size_t>(i)];
          const int c = x.dim(1);
          const std::int64_t plane = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
          const std::int64_t per_img_out = grad.size() / n;
          for (int ni = 0; ni < n; ++ni) {
            S* dimg = dx.data() + static_cast<std::int64_t>(ni) * c * plane;
            const S* gimg = grad.data() + static_cast<std::int64_t>(ni) * per_img_out;
            const std::int32_t* am = argmax.data() + static_cast<std::int64_t>(ni) * per_img_out;
            for (std::int64_t j = 0; j < per_img_out; ++j) dimg[am[j]] += gimg[j];
          }
        }
        break;
      case LayerKind::GlobalAvgPool:
        if (need_dx) {
          const int c = x.dim(1);
          const std::int64_t hw = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
          for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < c; ++ci) {
              const S g = grad(ni, ci) / static_cast<S>(hw);
              S* plane = dx.data() + (static_cast<std::int64_t>(ni) * c + ci) * hw;
              for (std::int64_t j = 0; j < hw; ++j) plane[j] = g;
            }
        }
        break;
      case LayerKind::Flatten:
        if (need_dx) std::copy(grad.data(), grad.data() + grad.size(), dx.data());
        break;
    }
    grad = std::move(dx);
  }
  if (opt.input_grad) result.input_grad = std::move(grad);
  return result;
}

// (loss, parameter gradients) of the stated objective.
template <typename S>
std::pair<S, ParameterSet<S>> loss_and_param_grads(const NetworkSpec& spec,
                                                   const ParameterSet<S>& params,
                                                   const Tensor<S>& images,
                                                   const std::vector<LossTerm<S>>& terms) {
  EvalOptions opt;
  opt.param_grads = true;
  auto r = evaluate(spec, params, images, terms, opt);
  return {r.loss, std::move(r.param_grads)};
}

// Gradient of the objective with respect to the input images; parameters are
// treated as constants.
template <typename S>
Tensor<S> input_gradient(const NetworkSpec& spec, const ParameterSet<S>& params,
                         const Tensor<S>& images, const std::vector<LossTerm<S>>& terms) {
  EvalOptions opt;
  opt.input_grad = true;
  auto r = evaluate(spec, params, images, terms, opt);
  return std::move(r.input_grad);
}

// Mean over the batch of -log softmax(logits)[label], max-subtracted.
template <typename S>
S cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2)
    throw std::invalid_argument("cross_entropy: logits must be [N,K]");
  const int n = logits.dim(0), k = logits.dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("cross_entropy: one label per row required");
  std::vector<S> p(static_cast<std::size_t>(k));
  S acc = S(0);
  for (int r = 0; r < n; ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= k)
      throw std::out_of_range(detail::strcat("cross_entropy: label ", y,
                                             " out of range [0,", k, ")"));
    detail::softmax_row(logits.data() + static_cast<std::int64_t>(r) * k, k, p.data());
    acc += -std::log(p[static_cast<std::size_t>(y)]);
  }
  return acc / static_cast<S>(n);
}

// Mean cross-entropy of softmax(logits) against the uniform distribution;
// minimized exactly at uniform output, where it equals ln K.
template <typename S>
S kl_to_uniform(const Tensor<S>& logits) {
  if (logits.rank() != 2 || logits.dim(1) < 2)
    throw std::invalid_argument("kl_to_uniform: logits must be [N,K] with K >= 2");
  const int n = logits.dim(0), k = logits.dim(1);
  std::vector<S> p(static_cast<std::size_t>(k));
  S acc = S(0);
  for (int r = 0; r < n; ++r) {
    detail::softmax_row(logits.data() + static_cast<std::int64_t>(r) * k, k, p.data());
    S row = S(0);
    for (int j = 0; j < k; ++j) row += -std::log(p[static_cast<std::size_t>(j)]);
    acc += row / static_cast<S>(k);
  }
  return acc / static_cast<S>(n);
}

// Softmax probabilities of a logits matrix, row-stable.
template <typename S>
Tensor<S> softmax(const Tensor<S>& logits) {
  if (logits.rank() != 2)
    throw std::invalid_argument("softmax: logits must be [N,K]");
  const int n = logits.dim(0), k = logits.dim(1);
  Tensor<S> p({n, k});
  for (int r = 0; r < n; ++r)
    detail::softmax_row(logits.data() + static_cast<std::int64_t>(r) * k, k,
                        p.data() + static_cast<std::int64_t>(r) * k);
  return p;
}

}  // namespace selfrobust
