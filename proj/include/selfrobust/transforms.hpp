#pragma once

#include <string>
#include <vector>

#include "selfrobust/tensor.hpp"

namespace selfrobust {

// Class-to-parameter mapping, fixed across the project:
//   rotation_class r in {0,1,2,3}  ->  counter-clockwise rotation by r*90 deg
//   vtrans_class   in {0,1,2}      ->  vertical shift dy in {-t, 0, +t}
//   htrans_class   in {0,1,2}      ->  horizontal shift dx in {-t, 0, +t}
//   resized_class  in {0,1}        ->  resize probe applied (1) or not (0)
struct TransformLabel {
  int rotation_class = 0;
  int vtrans_class = 1;
  int htrans_class = 1;
  int resized_class = 0;
};

inline int trans_class_to_shift(int cls, int t) {
  switch (cls) {
    case 0: return -t;
    case 1: return 0;
    case 2: return t;
  }
  throw std::out_of_range("translation class must be in {0,1,2}");
}

// Exact 90-degree-multiple pixel permutation, counter-clockwise positive.
template <typename S>
Tensor<S> rotate(const Tensor<S>& image, int r) {
  if (image.rank() != 3)
    throw std::invalid_argument("rotate: image must be [C,H,W]");
  if (image.dim(1) != image.dim(2))
    throw std::invalid_argument("rotate: image must be square");
  if (r < 0 || r > 3)
    throw std::out_of_range("rotate: rotation class must be in {0,1,2,3}");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (r == 0) return image;
  Tensor<S> out(image.shape());
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        S v;
        switch (r) {
          case 1: v = image(ci, x, w - 1 - y); break;
          case 2: v = image(ci, h - 1 - y, w - 1 - x); break;
          default: v = image(ci, w - 1 - x, y); break;
        }
        out(ci, y, x) = v;
      }
  return out;
}

// Cyclic shift: content moves by +dx to the right and +dy downward, with
// wrap-around, so the pixel multiset is preserved and the map is invertible.
template <typename S>
Tensor<S> translate(const Tensor<S>& image, int dx, int dy) {
  if (image.rank() != 3)
    throw std::invalid_argument("translate: image must be [C,H,W]");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (dx <= -w || dx >= w || dy <= -h || dy >= h)
    throw std::out_of_range(detail::strcat("translate: shift (", dx, ",", dy,
                                           ") out of range for ", h, "x", w));
  if (dx == 0 && dy == 0) return image;
  Tensor<S> out(image.shape());
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y) {
      const int sy = (y - dy + h) % h;
      for (int x = 0; x < w; ++x) {
        const int sx = (x - dx + w) % w;
        out(ci, y, x) = image(ci, sy, sx);
      }
    }
  return out;
}

// Downsample by 2 (2x2 average pooling) then upsample by 2 (nearest
// neighbor); shape-preserving. Self-adjoint as a linear map, which the
// attack gradient pull-back relies on.
template <typename S>
Tensor<S> resize_probe(const Tensor<S>& image, bool apply) {
  if (image.rank() != 3)
    throw std::invalid_argument("resize_probe: image must be [C,H,W]");
  if (image.dim(1) % 2 != 0 || image.dim(2) % 2 != 0)
    throw std::invalid_argument("resize_probe: H and W must be even");
  if (!apply) return image;
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor<S> out(image.shape());
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; y += 2)
      for (int x = 0; x < w; x += 2) {
        const S mean = (image(ci, y, x) + image(ci, y, x + 1) + image(ci, y + 1, x) +
                        image(ci, y + 1, x + 1)) /
                       S(4);
        out(ci, y, x) = mean;
        out(ci, y, x + 1) = mean;
        out(ci, y + 1, x) = mean;
        out(ci, y + 1, x + 1) = mean;
      }
  return out;
}

enum class ViewMode {
  AllRotations,    // 4 views per original: the rotations only
  ComposedSubset,  // 8 views: 4 rotations + 4 single-axis translations
  FullProduct,     // 36 views: every rotation x vtrans x htrans combination
};

struct ViewConfig {
  int t = 0;  // translation magnitude in pixels; 0 picks the H/4 default
  std::vector<std::string> heads = {"rotation"};
  ViewMode mode = ViewMode::AllRotations;
};

// Self-supervised training views with the labels to predict. Every view is
// reconstructible from (source_index, label, t), which the gradient pull-back
// and the label-recoverability property both use.
template <typename S>
struct ViewBatch {
  Tensor<S> images;  // [M,C,H,W]
  std::vector<TransformLabel> labels;
  std::vector<int> source_index;
  int n_originals = 0;
  int views_per_original = 0;
  int t = 0;
};

namespace detail {

inline void validate_heads(const std::vector<std::string>& heads) {
  for (const auto& h : heads)
    if (h != "rotation" && h != "vtrans" && h != "htrans" && h != "resize")
      throw std::invalid_argument("build_ss_views: unknown head name '" + h + "'");
}

inline bool has_head(const std::vector<std::string>& heads, const std::string& name) {
  for (const auto& h : heads)
    if (h == name) return true;
  return false;
}

}  // namespace detail

template <typename S>
Tensor<S> apply_view_transform(const Tensor<S>& image, const TransformLabel& label, int t) {
  Tensor<S> v = rotate(image, label.rotation_class);
  const int dx = trans_class_to_shift(label.htrans_class, t);
  const int dy = trans_class_to_shift(label.vtrans_class, t);
  if (dx != 0 || dy != 0) v = translate(v, dx, dy);
  if (label.resized_class == 1) v = resize_probe(v, true);
  return v;
}

template <typename S>
ViewBatch<S> build_ss_views(const Tensor<S>& batch, const ViewConfig& config) {
  if (batch.rank() != 4)
    throw std::invalid_argument("build_ss_views: batch must be [N,C,H,W]");
  detail::validate_heads(config.heads);
  if (config.heads.empty())
    throw std::invalid_argument("build_ss_views: at least one head required");
  const int n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const int t = config.t > 0 ? config.t : h / 4;
  const bool wants_translation = detail::has_head(config.heads, "vtrans") ||
                                 detail::has_head(config.heads, "htrans");
  if (config.mode != ViewMode::AllRotations) {
    if (t >= (h + 1) / 2 || t >= (w + 1) / 2)
      throw std::invalid_argument(detail::strcat(
          "build_ss_views: translation t=", t, " must be < half the image size"));
    if (wants_translation && t < 1)
      throw std::invalid_argument("build_ss_views: translation heads need t >= 1");
  }
  const bool with_resize = detail::has_head(config.heads, "resize");

  std::vector<TransformLabel> plan;
  switch (config.mode) {
    case ViewMode::AllRotations:
      for (int r = 0; r < 4; ++r) plan.push_back({r, 1, 1, 0});
      break;
    case ViewMode::ComposedSubset:
      for (int r = 0; r < 4; ++r) plan.push_back({r, 1, 1, 0});
      plan.push_back({0, 1, 0, 0});  // dx = -t
      plan.push_back({0, 1, 2, 0});  // dx = +t
      plan.push_back({0, 0, 1, 0});  // dy = -t
      plan.push_back({0, 2, 1, 0});  // dy = +t
      if (with_resize) plan.push_back({0, 1, 1, 1});
      break;
    case ViewMode::FullProduct:
      for (int r = 0; r < 4; ++r)
        for (int vc = 0; vc < 3; ++vc)
          for (int hc = 0; hc < 3; ++hc) {
            plan.push_back({r, vc, hc, 0});
            if (with_resize) plan.push_back({r, vc, hc, 1});
          }
      break;
  }

  ViewBatch<S> out;
  out.n_originals = n;
  out.views_per_original = static_cast<int>(plan.size());
  out.t = t;
  out.images = Tensor<S>({n * out.views_per_original, c, h, w});
  out.labels.reserve(static_cast<std::size_t>(n) * plan.size());
  out.source_index.reserve(static_cast<std::size_t>(n) * plan.size());
  const std::int64_t img_sz = static_cast<std::int64_t>(c) * h * w;
  for (int i = 0; i < n; ++i) {
    Tensor<S> src({c, h, w});
    std::copy(batch.data() + i * img_sz, batch.data() + (i + 1) * img_sz, src.data());
    for (const TransformLabel& label : plan) {
      Tensor<S> view = apply_view_transform(src, label, t);
      const std::int64_t m = static_cast<std::int64_t>(out.labels.size());
      std::copy(view.data(), view.data() + img_sz, out.images.data() + m * img_sz);
      out.labels.push_back(label);
      out.source_index.push_back(i);
    }
  }
  return out;
}

// Adjoint of build_ss_views for gradients: maps per-view input gradients back
// onto the originals. Rotation and translation are permutations (adjoint =
// inverse); the resize probe is self-adjoint.
template <typename S>
Tensor<S> pull_back_view_grads(const ViewBatch<S>& views, const Tensor<S>& view_grads,
                               const std::vector<int>& original_shape) {
  // Checked against the label metadata: the images member may have been
  // moved into a concatenated evaluation batch.
  if (view_grads.rank() != 4 ||
      view_grads.dim(0) != static_cast<int>(views.labels.size()))
    throw std::invalid_argument("pull_back_view_grads: gradient shape mismatch");
  const int c = view_grads.dim(1), h = view_grads.dim(2), w = view_grads.dim(3);
  Tensor<S> out(original_shape);
  const std::int64_t img_sz = static_cast<std::int64_t>(c) * h * w;
  Tensor<S> g({c, h, w});
  for (std::size_t m = 0; m < views.labels.size(); ++m) {
    std::copy(view_grads.data() + static_cast<std::int64_t>(m) * img_sz,
              view_grads.data() + static_cast<std::int64_t>(m + 1) * img_sz, g.data());
    const TransformLabel& label = views.labels[m];
    Tensor<S> back = label.resized_class == 1 ? resize_probe(g, true) : g;
    const int dx = trans_class_to_shift(label.htrans_class, views.t);
    const int dy = trans_class_to_shift(label.vtrans_class, views.t);
    if (dx != 0 || dy != 0) back = translate(back, -dx, -dy);
    back = rotate(back, (4 - label.rotation_class) % 4);
    S* dst = out.data() + static_cast<std::int64_t>(views.source_index[m]) * img_sz;
    for (std::int64_t j = 0; j < img_sz; ++j) dst[j] += back[j];
  }
  return out;
}

}  // namespace selfrobust
