#pragma once

#include <cstdio>
#include <fstream>

#include "selfrobust/rng.hpp"
#include "selfrobust/tensor.hpp"

namespace selfrobust {

template <typename S>
struct Dataset {
  Tensor<S> train_images;  // [N,C,H,W] in [0,1]
  std::vector<int> train_labels;
  Tensor<S> test_images;
  std::vector<int> test_labels;
  int classes = 0;
  std::string provenance;

  void validate() const {
    if (classes < 1) throw std::invalid_argument("Dataset: class count missing");
    auto check = [&](const Tensor<S>& x, const std::vector<int>& y, const char* part) {
      if (x.size() == 0) return;
      if (x.rank() != 4 || x.dim(0) != static_cast<int>(y.size()))
        throw std::invalid_argument(detail::strcat("Dataset: ", part,
                                                   " images/labels mismatch"));
      for (int l : y)
        if (l < 0 || l >= classes)
          throw std::invalid_argument(detail::strcat("Dataset: ", part, " label ", l,
                                                     " outside 0..", classes - 1));
      for (std::int64_t i = 0; i < x.size(); ++i)
        if (!(x[i] >= S(0) && x[i] <= S(1)))
          throw std::invalid_argument(detail::strcat("Dataset: ", part,
                                                     " pixel outside [0,1]"));
    };
    check(train_images, train_labels, "train");
    check(test_images, test_labels, "test");
  }
};

class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline std::vector<unsigned char> read_all_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>());
}

inline std::uint32_t read_be32(const unsigned char* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

// One CIFAR-10 binary file: 3073-byte records, 1 label byte then 3072 pixel
// bytes as R, G, B planes of a 32x32 row-major image.
inline constexpr int kCifarRecord = 3073;
inline constexpr int kCifarClasses = 10;

template <typename S>
std::pair<Tensor<S>, std::vector<int>> load_cifar_file(const std::string& path) {
  const auto bytes = detail::read_all_bytes(path);
  if (bytes.empty() || bytes.size() % kCifarRecord != 0)
    throw FormatError(detail::strcat("'", path, "': size ", bytes.size(),
                                     " is not a positive multiple of ", kCifarRecord,
                                     " (truncated at byte offset ",
                                     bytes.size() - bytes.size() % kCifarRecord, ")"));
  const int n = static_cast<int>(bytes.size() / kCifarRecord);
  Tensor<S> images({n, 3, 32, 32});
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + static_cast<std::size_t>(i) * kCifarRecord;
    if (rec[0] >= kCifarClasses)
      throw FormatError(detail::strcat("'", path, "': label byte ", int(rec[0]),
                                       " >= ", kCifarClasses, " at byte offset ",
                                       static_cast<std::size_t>(i) * kCifarRecord));
    labels[static_cast<std::size_t>(i)] = rec[0];
    for (int j = 0; j < 3072; ++j)
      images[static_cast<std::int64_t>(i) * 3072 + j] =
          static_cast<S>(rec[1 + j]) / S(255);
  }
  return {std::move(images), std::move(labels)};
}

template <typename S>
void write_cifar_file(const std::string& path, const Tensor<S>& images,
                      const std::vector<int>& labels) {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != 32 || images.dim(3) != 32)
    throw std::invalid_argument("write_cifar_file: images must be [N,3,32,32]");
  if (static_cast<int>(labels.size()) != images.dim(0))
    throw std::invalid_argument("write_cifar_file: one label per image required");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path + "'");
  for (int i = 0; i < images.dim(0); ++i) {
    const int l = labels[static_cast<std::size_t>(i)];
    if (l < 0 || l >= kCifarClasses)
      throw std::invalid_argument("write_cifar_file: label outside 0..9");
    out.put(static_cast<char>(l));
    for (int j = 0; j < 3072; ++j) {
      const double v = static_cast<double>(images[static_cast<std::int64_t>(i) * 3072 + j]);
      out.put(static_cast<char>(static_cast<unsigned char>(std::llround(
          std::clamp(v, 0.0, 1.0) * 255.0))));
    }
  }
  if (!out) throw FormatError("short write to '" + path + "'");
}

template <typename S>
Dataset<S> load_cifar_binary(const std::vector<std::string>& train_paths,
                             const std::string& test_path) {
  Dataset<S> out;
  out.classes = kCifarClasses;
  out.provenance = "cifar-binary";
  std::vector<Tensor<S>> parts;
  std::int64_t total = 0;
  for (const auto& p : train_paths) {
    auto [imgs, labs] = load_cifar_file<S>(p);
    total += imgs.dim(0);
    out.train_labels.insert(out.train_labels.end(), labs.begin(), labs.end());
    parts.push_back(std::move(imgs));
  }
  if (!parts.empty()) {
    out.train_images = Tensor<S>({static_cast<int>(total), 3, 32, 32});
    std::int64_t off = 0;
    for (const auto& p : parts) {
      std::copy(p.data(), p.data() + p.size(), out.train_images.data() + off);
      off += p.size();
    }
  }
  if (!test_path.empty()) {
    auto [imgs, labs] = load_cifar_file<S>(test_path);
    out.test_images = std::move(imgs);
    out.test_labels = std::move(labs);
  }
  out.validate();
  return out;
}

// IDX (MNIST-style) loaders: big-endian magic + dimension sizes, then bytes.
inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

template <typename S>
Tensor<S> load_idx_images(const std::string& path) {
  const auto bytes = detail::read_all_bytes(path);
  if (bytes.size() < 16)
    throw FormatError(detail::strcat("'", path, "': IDX header truncated at byte ",
                                     bytes.size()));
  const std::uint32_t magic = detail::read_be32(bytes.data());
  if (magic != kIdxImagesMagic)
    throw FormatError(detail::strcat("'", path, "': IDX image magic 0x", std::hex, magic,
                                     " expected 0x803"));
  const int n = static_cast<int>(detail::read_be32(bytes.data() + 4));
  const int h = static_cast<int>(detail::read_be32(bytes.data() + 8));
  const int w = static_cast<int>(detail::read_be32(bytes.data() + 12));
  const std::size_t want = 16 + static_cast<std::size_t>(n) * h * w;
  if (n <= 0 || h <= 0 || w <= 0 || bytes.size() != want)
    throw FormatError(detail::strcat("'", path, "': IDX payload is ", bytes.size() - 16,
                                     " bytes for dims [", n, ",", h, ",", w, "]"));
  Tensor<S> images({n, 1, h, w});
  for (std::int64_t i = 0; i < images.size(); ++i)
    images[i] = static_cast<S>(bytes[16 + static_cast<std::size_t>(i)]) / S(255);
  return images;
}

inline std::vector<int> load_idx_labels(const std::string& path) {
  const auto bytes = detail::read_all_bytes(path);
  if (bytes.size() < 8)
    throw FormatError(detail::strcat("'", path, "': IDX header truncated at byte ",
                                     bytes.size()));
  const std::uint32_t magic = detail::read_be32(bytes.data());
  if (magic != kIdxLabelsMagic)
    throw FormatError(detail::strcat("'", path, "': IDX label magic 0x", std::hex, magic,
                                     " expected 0x801"));
  const int n = static_cast<int>(detail::read_be32(bytes.data() + 4));
  if (n <= 0 || bytes.size() != 8 + static_cast<std::size_t>(n))
    throw FormatError(detail::strcat("'", path, "': IDX payload is ", bytes.size() - 8,
                                     " bytes for ", n, " labels"));
  return std::vector<int>(bytes.begin() + 8, bytes.end());
}

template <typename S>
void write_idx_images(const std::string& path, const Tensor<S>& images) {
  if (images.rank() != 4 || images.dim(1) != 1)
    throw std::invalid_argument("write_idx_images: images must be [N,1,H,W]");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path + "'");
  detail::write_be32(out, kIdxImagesMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(images.dim(0)));
  detail::write_be32(out, static_cast<std::uint32_t>(images.dim(2)));
  detail::write_be32(out, static_cast<std::uint32_t>(images.dim(3)));
  for (std::int64_t i = 0; i < images.size(); ++i)
    out.put(static_cast<char>(static_cast<unsigned char>(
        std::llround(std::clamp(static_cast<double>(images[i]), 0.0, 1.0) * 255.0))));
  if (!out) throw FormatError("short write to '" + path + "'");
}

inline void write_idx_labels(const std::string& path, const std::vector<int>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path + "'");
  detail::write_be32(out, kIdxLabelsMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) {
    if (l < 0 || l > 255) throw std::invalid_argument("write_idx_labels: label outside 0..255");
    out.put(static_cast<char>(static_cast<unsigned char>(l)));
  }
  if (!out) throw FormatError("short write to '" + path + "'");
}

template <typename S>
Dataset<S> load_idx(const std::string& train_images_path, const std::string& train_labels_path,
                    const std::string& test_images_path, const std::string& test_labels_path,
                    int classes) {
  Dataset<S> out;
  out.classes = classes;
  out.provenance = "idx";
  out.train_images = load_idx_images<S>(train_images_path);
  out.train_labels = load_idx_labels(train_labels_path);
  if (!test_images_path.empty()) {
    out.test_images = load_idx_images<S>(test_images_path);
    out.test_labels = load_idx_labels(test_labels_path);
  }
  out.validate();
  return out;
}

// Synthetic grayscale glyph classes. Every glyph is rotation-asymmetric so
// the four rotation classes stay distinguishable, and jitter keeps absolute
// position informative without destroying translation prediction.
struct ShapesConfig {
  int classes = 4;  // at most kShapeGlyphs
  int size = 16;    // H = W, at least 12
  int n_per_class = 100;
  int test_per_class = 0;  // 0 selects max(1, n_per_class / 5)
  double noise = 0.05;     // Gaussian pixel noise sigma
  int jitter = 2;          // uniform offset in [-jitter, jitter] per axis
};

inline constexpr int kShapeGlyphs = 8;

namespace detail {

template <typename S>
void fill_rect(Tensor<S>& img, int y0, int y1, int x0, int x1, int dy, int dx, S v) {
  const int h = img.dim(1), w = img.dim(2);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      const int yy = y + dy, xx = x + dx;
      if (yy >= 0 && yy < h && xx >= 0 && xx < w) img(0, yy, xx) = v;
    }
}

// Paints glyph `g` at intensity v, offset by (dx, dy), into a zero image.
template <typename S>
void paint_glyph(Tensor<S>& img, int g, S v, int dy, int dx) {
  const int s = img.dim(1);
  const int m = s / 4;          // outer margin of the design box
  const int t = std::max(2, s / 8);  // stroke thickness
  const int lo = m, hi = s - m;
  switch (g) {
    case 0:  // L-bar: left vertical + bottom horizontal
      fill_rect(img, lo, hi, lo, lo + t, dy, dx, v);
      fill_rect(img, hi - t, hi, lo, hi, dy, dx, v);
      break;
    case 1:  // wedge: staircase triangle anchored top-left
      for (int r = 0; r < hi - lo; ++r)
        fill_rect(img, lo + r, lo + r + 1, lo, lo + 1 + r, dy, dx, v);
      break;
    case 2:  // T: top horizontal + center vertical
      fill_rect(img, lo, lo + t, lo, hi, dy, dx, v);
      fill_rect(img, lo, hi, (s - t) / 2, (s - t) / 2 + t, dy, dx, v);
      break;
    case 3:  // hook: right vertical + bottom horizontal + short left tip
      fill_rect(img, lo, hi, hi - t, hi, dy, dx, v);
      fill_rect(img, hi - t, hi, lo, hi, dy, dx, v);
      fill_rect(img, hi - 2 * t, hi - t, lo, lo + t, dy, dx, v);
      break;
    case 4:  // F: left vertical + top and middle horizontals
      fill_rect(img, lo, hi, lo, lo + t, dy, dx, v);
      fill_rect(img, lo, lo + t, lo, hi, dy, dx, v);
      fill_rect(img, (s - t) / 2, (s - t) / 2 + t, lo, hi - t, dy, dx, v);
      break;
    case 5:  // P: left vertical + top horizontal + right stub down to middle
      fill_rect(img, lo, hi, lo, lo + t, dy, dx, v);
      fill_rect(img, lo, lo + t, lo, hi, dy, dx, v);
      fill_rect(img, lo, (s + t) / 2, hi - t, hi, dy, dx, v);
      fill_rect(img, (s - t) / 2, (s + t) / 2, lo, hi, dy, dx, v);
      break;
    case 6:  // step: two offset squares, lower-left and upper-right
      fill_rect(img, (s) / 2, hi, lo, s / 2, dy, dx, v);
      fill_rect(img, lo, s / 2, s / 2, hi, dy, dx, v);
      fill_rect(img, lo, lo + t, lo, lo + t, dy, dx, v);
      break;
    case 7:  // slash-dot: thick diagonal + dot in the upper-right corner
      for (int r = 0; r < hi - lo; ++r)
        fill_rect(img, lo + r, lo + r + 1, lo + r, std::min(hi, lo + r + t), dy, dx, v);
      fill_rect(img, lo, lo + t, hi - t, hi, dy, dx, v);
      break;
    default:
      throw std::invalid_argument("paint_glyph: glyph index out of range");
  }
}

template <typename S>
void gen_shape_split(Tensor<S>& images, std::vector<int>& labels, const ShapesConfig& cfg,
                     int per_class, Rng& rng) {
  const int s = cfg.size;
  int row = 0;
  for (int c = 0; c < cfg.classes; ++c)
    for (int i = 0; i < per_class; ++i, ++row) {
      const S intensity = static_cast<S>(rng.uniform(0.6, 1.0));
      const int dy = cfg.jitter > 0
                         ? static_cast<int>(rng.uniform_int(2 * cfg.jitter + 1)) - cfg.jitter
                         : 0;
      const int dx = cfg.jitter > 0
                         ? static_cast<int>(rng.uniform_int(2 * cfg.jitter + 1)) - cfg.jitter
                         : 0;
      Tensor<S> img({1, s, s});
      paint_glyph(img, c, intensity, dy, dx);
      if (cfg.noise > 0)
        for (std::int64_t p = 0; p < img.size(); ++p)
          img[p] = static_cast<S>(std::clamp(
              static_cast<double>(img[p]) + cfg.noise * rng.normal(), 0.0, 1.0));
      std::copy(img.data(), img.data() + img.size(),
                images.data() + static_cast<std::int64_t>(row) * img.size());
      labels[static_cast<std::size_t>(row)] = c;
    }
}

}  // namespace detail

template <typename S>
Dataset<S> gen_synthetic_shapes(const ShapesConfig& cfg, std::uint64_t seed) {
  if (cfg.classes < 1 || cfg.classes > kShapeGlyphs)
    throw std::invalid_argument(detail::strcat("gen_synthetic_shapes: classes must be 1..",
                                               kShapeGlyphs));
  if (cfg.size < 12)
    throw std::invalid_argument("gen_synthetic_shapes: size must be >= 12");
  if (cfg.n_per_class < 1)
    throw std::invalid_argument("gen_synthetic_shapes: n_per_class must be >= 1");
  if (cfg.noise < 0 || cfg.jitter < 0)
    throw std::invalid_argument("gen_synthetic_shapes: noise and jitter must be >= 0");

  const int test_per_class =
      cfg.test_per_class > 0 ? cfg.test_per_class : std::max(1, cfg.n_per_class / 5);
  Dataset<S> out;
  out.classes = cfg.classes;
  out.provenance = "synthetic-shapes";
  out.train_images = Tensor<S>({cfg.classes * cfg.n_per_class, 1, cfg.size, cfg.size});
  out.train_labels.resize(static_cast<std::size_t>(cfg.classes) * cfg.n_per_class);
  out.test_images = Tensor<S>({cfg.classes * test_per_class, 1, cfg.size, cfg.size});
  out.test_labels.resize(static_cast<std::size_t>(cfg.classes) * test_per_class);
  Rng train_rng(derive_seed(seed, "shapes-train"));
  Rng test_rng(derive_seed(seed, "shapes-test"));
  detail::gen_shape_split(out.train_images, out.train_labels, cfg, cfg.n_per_class,
                          train_rng);
  detail::gen_shape_split(out.test_images, out.test_labels, cfg, test_per_class, test_rng);
  out.validate();
  return out;
}

}  // namespace selfrobust
