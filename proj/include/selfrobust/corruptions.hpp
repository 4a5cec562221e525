#pragma once

#include <array>
#include <map>

#include "selfrobust/advrobust.hpp"

namespace selfrobust {

// Six corruption families covering the noise / blur / digital / weather
// categories. Parameters are fixed per severity 1..5; severity 0 is accepted
// everywhere as the identity limit.
enum class CorruptionKind {
  GaussianNoise,
  ShotNoise,
  GaussianBlur,
  Contrast,
  JpegLikeQuantization,
  FogLikeHaze,
};

inline const char* corruption_name(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::GaussianNoise: return "gaussian_noise";
    case CorruptionKind::ShotNoise: return "shot_noise";
    case CorruptionKind::GaussianBlur: return "gaussian_blur";
    case CorruptionKind::Contrast: return "contrast";
    case CorruptionKind::JpegLikeQuantization: return "jpeg_like_quantization";
    case CorruptionKind::FogLikeHaze: return "fog_like_haze";
  }
  throw std::invalid_argument("corruption_name: bad kind");
}

inline CorruptionKind corruption_from_name(const std::string& name) {
  for (CorruptionKind k :
       {CorruptionKind::GaussianNoise, CorruptionKind::ShotNoise,
        CorruptionKind::GaussianBlur, CorruptionKind::Contrast,
        CorruptionKind::JpegLikeQuantization, CorruptionKind::FogLikeHaze})
    if (name == corruption_name(k)) return k;
  throw std::invalid_argument("unknown corruption kind '" + name + "'");
}

inline std::vector<CorruptionKind> all_corruptions() {
  return {CorruptionKind::GaussianNoise,        CorruptionKind::ShotNoise,
          CorruptionKind::GaussianBlur,         CorruptionKind::Contrast,
          CorruptionKind::JpegLikeQuantization, CorruptionKind::FogLikeHaze};
}

// Severity tables, index 0 = severity 1. Noise strength rises with severity;
// for shot noise the photon count falls, which raises the variance x/lambda.
namespace corruption_tables {
inline constexpr std::array<double, 5> kGaussianSigma = {0.04, 0.08, 0.12, 0.16, 0.20};
inline constexpr std::array<double, 5> kShotPhotons = {500, 250, 100, 75, 50};
inline constexpr std::array<double, 5> kBlurSigma = {0.4, 0.6, 0.8, 1.0, 1.2};
inline constexpr std::array<double, 5> kContrastFactor = {0.75, 0.5, 0.4, 0.3, 0.15};
inline constexpr std::array<double, 5> kJpegStep = {0.05, 0.10, 0.20, 0.30, 0.50};
inline constexpr std::array<double, 5> kFogBlend = {0.15, 0.25, 0.35, 0.45, 0.60};
}  // namespace corruption_tables

namespace detail {

inline double severity_param(const std::array<double, 5>& table, int severity) {
  return table[static_cast<std::size_t>(severity - 1)];
}

// Mirror index across the border, edge pixel repeated once. Valid for
// radius < n, which the blur table guarantees on any image of 8+ pixels.
inline int reflect_index(int i, int n) {
  if (i < 0) return -i - 1;
  if (i >= n) return 2 * n - 1 - i;
  return i;
}

template <typename S>
Tensor<S> separable_blur(const Tensor<S>& image, double sigma) {
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  if (radius >= h || radius >= w)
    throw std::invalid_argument("gaussian_blur: kernel radius exceeds image size");
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : kernel) v /= sum;

  Tensor<S> mid(image.shape()), out(image.shape());
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[static_cast<std::size_t>(i + radius)] *
                 static_cast<double>(image(ch, y, reflect_index(x + i, w)));
        mid(ch, y, x) = static_cast<S>(acc);
      }
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[static_cast<std::size_t>(i + radius)] *
                 static_cast<double>(mid(ch, reflect_index(y + i, h), x));
        out(ch, y, x) = static_cast<S>(std::clamp(acc, 0.0, 1.0));
      }
  return out;
}

// Orthonormal 8x8 DCT-II basis, row r = basis function r sampled at 8 points.
inline const Eigen::Matrix<double, 8, 8>& dct8_basis() {
  static const Eigen::Matrix<double, 8, 8> basis = [] {
    Eigen::Matrix<double, 8, 8> d;
    const double pi = std::acos(-1.0);
    for (int r = 0; r < 8; ++r) {
      const double scale = (r == 0) ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int c = 0; c < 8; ++c)
        d(r, c) = scale * std::cos((2.0 * c + 1.0) * r * pi / 16.0);
    }
    return d;
  }();
  return basis;
}

template <typename S>
Tensor<S> jpeg_quantize(const Tensor<S>& image, double step) {
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const int ph = (h + 7) / 8 * 8, pw = (w + 7) / 8 * 8;
  const auto& d = dct8_basis();
  Tensor<S> out(image.shape());
  Eigen::Matrix<double, 8, 8> block, coef;
  for (int ch = 0; ch < c; ++ch)
    for (int by = 0; by < ph; by += 8)
      for (int bx = 0; bx < pw; bx += 8) {
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x)
            block(y, x) = static_cast<double>(
                image(ch, std::min(by + y, h - 1), std::min(bx + x, w - 1)));
        coef = d * block * d.transpose();
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x)
            coef(y, x) = std::round(coef(y, x) / step) * step;
        block = d.transpose() * coef * d;
        for (int y = 0; y < 8 && by + y < h; ++y)
          for (int x = 0; x < 8 && bx + x < w; ++x)
            out(ch, by + y, bx + x) = static_cast<S>(std::clamp(block(y, x), 0.0, 1.0));
      }
  return out;
}

template <typename S>
Tensor<S> fog_blend(const Tensor<S>& image, double weight, Rng& rng) {
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const int g = std::max(2, std::min(h, w) / 8);
  std::vector<double> grid(static_cast<std::size_t>(g) * g);
  for (double& v : grid) v = rng.uniform(0.7, 1.0);

  // Bilinear upsample of the bright field, corners aligned; one field shared
  // by every channel so the haze is grey.
  Tensor<S> out(image.shape());
  for (int y = 0; y < h; ++y) {
    const double gy = (h > 1) ? static_cast<double>(y) * (g - 1) / (h - 1) : 0.0;
    const int y0 = std::min(static_cast<int>(gy), g - 2);
    const double fy = gy - y0;
    for (int x = 0; x < w; ++x) {
      const double gx = (w > 1) ? static_cast<double>(x) * (g - 1) / (w - 1) : 0.0;
      const int x0 = std::min(static_cast<int>(gx), g - 2);
      const double fx = gx - x0;
      const double field =
          (1 - fy) * ((1 - fx) * grid[static_cast<std::size_t>(y0) * g + x0] +
                      fx * grid[static_cast<std::size_t>(y0) * g + x0 + 1]) +
          fy * ((1 - fx) * grid[static_cast<std::size_t>(y0 + 1) * g + x0] +
                fx * grid[static_cast<std::size_t>(y0 + 1) * g + x0 + 1]);
      for (int ch = 0; ch < c; ++ch)
        out(ch, y, x) = static_cast<S>((1.0 - weight) * static_cast<double>(image(ch, y, x)) +
                                       weight * field);
    }
  }
  return out;
}

}  // namespace detail

// Applies one corruption at the given severity. Pure given the seed;
// severity 0 returns the input unchanged for every kind.
template <typename S>
Tensor<S> corrupt(const Tensor<S>& image, CorruptionKind kind, int severity,
                  std::uint64_t seed) {
  if (image.rank() != 3)
    throw std::invalid_argument("corrupt: image must be [C,H,W]");
  if (severity < 0 || severity > 5)
    throw std::out_of_range(detail::strcat("corrupt: severity ", severity,
                                           " outside 0..5"));
  if (severity == 0) return image;
  detail::require_unit_range(image, "corrupt");
  Rng rng(seed);
  using namespace corruption_tables;
  switch (kind) {
    case CorruptionKind::GaussianNoise: {
      const double sigma = detail::severity_param(kGaussianSigma, severity);
      Tensor<S> out = image;
      for (std::int64_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<S>(
            std::clamp(static_cast<double>(out[i]) + sigma * rng.normal(), 0.0, 1.0));
      return out;
    }
    case CorruptionKind::ShotNoise: {
      const double lambda = detail::severity_param(kShotPhotons, severity);
      Tensor<S> out = image;
      for (std::int64_t i = 0; i < out.size(); ++i) {
        const double counts =
            static_cast<double>(rng.poisson(static_cast<double>(out[i]) * lambda));
        out[i] = static_cast<S>(std::clamp(counts / lambda, 0.0, 1.0));
      }
      return out;
    }
    case CorruptionKind::GaussianBlur:
      return detail::separable_blur(image, detail::severity_param(kBlurSigma, severity));
    case CorruptionKind::Contrast: {
      const double c = detail::severity_param(kContrastFactor, severity);
      double m = 0.0;
      for (std::int64_t i = 0; i < image.size(); ++i) m += static_cast<double>(image[i]);
      m /= static_cast<double>(image.size());
      Tensor<S> out = image;
      for (std::int64_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<S>(
            std::clamp(m + (static_cast<double>(out[i]) - m) * c, 0.0, 1.0));
      return out;
    }
    case CorruptionKind::JpegLikeQuantization:
      return detail::jpeg_quantize(image, detail::severity_param(kJpegStep, severity));
    case CorruptionKind::FogLikeHaze:
      return detail::fog_blend(image, detail::severity_param(kFogBlend, severity), rng);
  }
  throw std::invalid_argument("corrupt: bad kind");
}

struct CorruptionCell {
  std::string kind;
  int severity = 0;
  double accuracy = 0;
};

struct CorruptionGrid {
  double clean_accuracy = 0;
  std::vector<CorruptionCell> cells;  // kind-major, severities ascending
  std::map<std::string, double> kind_means;
  double grand_mean = 0;  // mean of the per-kind means, in kind order
};

// Accuracy on one (kind, severity) cell. Per-image noise seeds are derived
// from (master seed, kind, severity, image index), so cells can be computed
// independently and in any order.
template <typename S>
double corruption_cell_accuracy(const NetworkSpec& spec, const ParameterSet<S>& params,
                                const Tensor<S>& images, const std::vector<int>& labels,
                                CorruptionKind kind, int severity, std::uint64_t seed,
                                int chunk = 256) {
  if (static_cast<int>(labels.size()) != images.dim(0))
    throw std::invalid_argument("corruption_cell_accuracy: one label per image required");
  const int n = images.dim(0);
  const std::vector<int> img_shape = {images.dim(1), images.dim(2), images.dim(3)};
  const std::int64_t img_sz = images.size() / n;
  Tensor<S> batch(images.shape());
  for (int i = 0; i < n; ++i) {
    Tensor<S> one(img_shape);
    std::copy(images.data() + i * img_sz, images.data() + (i + 1) * img_sz, one.data());
    const std::uint64_t s =
        derive_seed(seed, detail::strcat(corruption_name(kind), "-s", severity, "-i", i));
    Tensor<S> corrupted = corrupt(one, kind, severity, s);
    std::copy(corrupted.data(), corrupted.data() + img_sz, batch.data() + i * img_sz);
  }
  return eval_accuracy(spec, params, batch, labels, chunk);
}

// Aggregates kind-major cell accuracies; the serial and worker-pool grid
// paths both go through this, so their reports agree bit for bit.
inline CorruptionGrid aggregate_corruption_grid(double clean_accuracy,
                                                const std::vector<CorruptionKind>& kinds,
                                                const std::vector<int>& severities,
                                                const std::vector<double>& accuracies) {
  if (accuracies.size() != kinds.size() * severities.size())
    throw std::invalid_argument("aggregate_corruption_grid: cell count mismatch");
  CorruptionGrid grid;
  grid.clean_accuracy = clean_accuracy;
  double kind_sum_total = 0.0;
  std::size_t cell = 0;
  for (CorruptionKind kind : kinds) {
    double sev_sum = 0.0;
    for (int severity : severities) {
      CorruptionCell c;
      c.kind = corruption_name(kind);
      c.severity = severity;
      c.accuracy = accuracies[cell++];
      sev_sum += c.accuracy;
      grid.cells.push_back(std::move(c));
    }
    const double kind_mean = sev_sum / static_cast<double>(severities.size());
    grid.kind_means[corruption_name(kind)] = kind_mean;
    kind_sum_total += kind_mean;
  }
  grid.grand_mean = kinds.empty() ? 0.0 : kind_sum_total / static_cast<double>(kinds.size());
  return grid;
}

template <typename S>
CorruptionGrid eval_corruption_grid(const NetworkSpec& spec, const ParameterSet<S>& params,
                                    const Tensor<S>& images, const std::vector<int>& labels,
                                    const std::vector<CorruptionKind>& kinds,
                                    const std::vector<int>& severities, std::uint64_t seed,
                                    int chunk = 256) {
  std::vector<double> accuracies;
  for (CorruptionKind kind : kinds)
    for (int severity : severities)
      accuracies.push_back(
          corruption_cell_accuracy(spec, params, images, labels, kind, severity, seed, chunk));
  return aggregate_corruption_grid(eval_accuracy(spec, params, images, labels, chunk),
                                   kinds, severities, accuracies);
}

}  // namespace selfrobust
