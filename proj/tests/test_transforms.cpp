#include <algorithm>
#include <map>
#include <set>

#include "doctest.h"
#include "selfrobust/rng.hpp"
#include "selfrobust/transforms.hpp"

using namespace selfrobust;

namespace {

Tensor<float> random_image(Rng& rng, int c, int h, int w) {
  Tensor<float> img({c, h, w});
  for (std::int64_t i = 0; i < img.size(); ++i)
    img[i] = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST_SUITE_BEGIN("transforms");

TEST_CASE("rotate: identity, 4-cycle, and the 2x2 hand case") {
  Rng rng(40);
  auto img = random_image(rng, 2, 8, 8);
  CHECK(bitwise_equal(rotate(img, 0), img));

  auto cycled = rotate(rotate(rotate(rotate(img, 1), 1), 1), 1);
  CHECK(bitwise_equal(cycled, img));

  // [[a,b],[c,d]] rotated 90 degrees counter-clockwise -> [[b,d],[a,c]]
  Tensor<float> abcd({1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  auto r1 = rotate(abcd, 1);
  CHECK(r1(0, 0, 0) == 2.0f);
  CHECK(r1(0, 0, 1) == 4.0f);
  CHECK(r1(0, 1, 0) == 1.0f);
  CHECK(r1(0, 1, 1) == 3.0f);

  CHECK(bitwise_equal(rotate(rotate(img, 1), 1), rotate(img, 2)));
  CHECK(bitwise_equal(rotate(rotate(img, 2), 2), img));

  CHECK_THROWS_AS((void)rotate(Tensor<float>({1, 2, 3}), 1), std::invalid_argument);
  CHECK_THROWS_AS((void)rotate(img, 4), std::out_of_range);
}

TEST_CASE("rotate preserves the pixel multiset") {
  Rng rng(41);
  auto img = random_image(rng, 1, 6, 6);
  for (int r = 1; r < 4; ++r) {
    auto rot = rotate(img, r);
    std::multiset<float> a(img.data(), img.data() + img.size());
    std::multiset<float> b(rot.data(), rot.data() + rot.size());
    CHECK(a == b);
  }
}

TEST_CASE("translate: identity, inverse, and the 1x4 hand case") {
  Rng rng(42);
  auto img = random_image(rng, 3, 5, 7);
  CHECK(bitwise_equal(translate(img, 0, 0), img));
  CHECK(bitwise_equal(translate(translate(img, 3, 0), -3, 0), img));
  CHECK(bitwise_equal(translate(translate(img, 2, -1), -2, 1), img));

  Tensor<float> row({1, 1, 4}, {1.0f, 2.0f, 3.0f, 4.0f});
  auto shifted = translate(row, 1, 0);
  CHECK(shifted(0, 0, 0) == 4.0f);
  CHECK(shifted(0, 0, 1) == 1.0f);
  CHECK(shifted(0, 0, 2) == 2.0f);
  CHECK(shifted(0, 0, 3) == 3.0f);

  CHECK_THROWS_AS((void)translate(row, 4, 0), std::out_of_range);
  CHECK_THROWS_AS((void)translate(row, 0, 1), std::out_of_range);
}

TEST_CASE("resize_probe: identity, constants, and the checkerboard block") {
  Tensor<float> img({1, 2, 2}, {0.0f, 1.0f, 1.0f, 0.0f});
  CHECK(bitwise_equal(resize_probe(img, false), img));

  auto blurred = resize_probe(img, true);
  for (std::int64_t i = 0; i < blurred.size(); ++i) CHECK(blurred[i] == 0.5f);

  auto constant = Tensor<float>::full({2, 4, 4}, 0.25f);
  CHECK(bitwise_equal(resize_probe(constant, true), constant));

  CHECK_THROWS_AS((void)resize_probe(Tensor<float>({1, 3, 4}), true),
                  std::invalid_argument);
}

TEST_CASE("all-rotations views: 4 per original with balanced labels") {
  Rng rng(43);
  const int n = 5;
  Tensor<float> batch({n, 1, 8, 8});
  for (std::int64_t i = 0; i < batch.size(); ++i)
    batch[i] = static_cast<float>(rng.uniform());

  ViewConfig cfg;
  cfg.heads = {"rotation"};
  cfg.mode = ViewMode::AllRotations;
  auto views = build_ss_views(batch, cfg);
  CHECK(views.images.dim(0) == 4 * n);
  CHECK(views.views_per_original == 4);
  std::map<int, int> rot_counts;
  for (const auto& l : views.labels) ++rot_counts[l.rotation_class];
  for (int r = 0; r < 4; ++r) CHECK(rot_counts[r] == n);
}

TEST_CASE("composed-subset views: 8 per original with the pinned label multiset") {
  Rng rng(44);
  Tensor<float> batch({1, 1, 8, 8});
  for (std::int64_t i = 0; i < batch.size(); ++i)
    batch[i] = static_cast<float>(rng.uniform());

  ViewConfig cfg;
  cfg.heads = {"rotation", "vtrans", "htrans"};
  cfg.mode = ViewMode::ComposedSubset;
  cfg.t = 2;
  auto views = build_ss_views(batch, cfg);
  REQUIRE(views.images.dim(0) == 8);
  CHECK(views.t == 2);

  // 4 pure rotations at zero shift, then one view per single-axis shift.
  std::map<int, int> rot_counts, v_counts, h_counts;
  for (const auto& l : views.labels) {
    ++rot_counts[l.rotation_class];
    ++v_counts[l.vtrans_class];
    ++h_counts[l.htrans_class];
  }
  CHECK(rot_counts[0] == 5);
  CHECK(rot_counts[1] == 1);
  CHECK(rot_counts[2] == 1);
  CHECK(rot_counts[3] == 1);
  CHECK(v_counts[0] == 1);
  CHECK(v_counts[2] == 1);
  CHECK(v_counts[1] == 6);
  CHECK(h_counts[0] == 1);
  CHECK(h_counts[2] == 1);
  CHECK(h_counts[1] == 6);
}

TEST_CASE("every view equals its transform recomputed from the source") {
  Rng rng(45);
  const int n = 3;
  Tensor<float> batch({n, 2, 8, 8});
  for (std::int64_t i = 0; i < batch.size(); ++i)
    batch[i] = static_cast<float>(rng.uniform());

  for (auto mode : {ViewMode::AllRotations, ViewMode::ComposedSubset, ViewMode::FullProduct}) {
    ViewConfig cfg;
    cfg.heads = {"rotation", "vtrans", "htrans"};
    cfg.mode = mode;
    cfg.t = 2;
    auto views = build_ss_views(batch, cfg);
    const std::int64_t img_sz = 2 * 8 * 8;
    for (std::size_t m = 0; m < views.labels.size(); ++m) {
      auto src = take_rows(batch, views.source_index[m], 1).reshaped({2, 8, 8});
      auto expect = apply_view_transform(src, views.labels[m], views.t);
      Tensor<float> got({2, 8, 8});
      std::copy(views.images.data() + static_cast<std::int64_t>(m) * img_sz,
                views.images.data() + static_cast<std::int64_t>(m + 1) * img_sz,
                got.data());
      CHECK(bitwise_equal(got, expect));
    }
  }
}

TEST_CASE("labels are recoverable: inverse transform restores the source") {
  Rng rng(46);
  Tensor<float> batch({2, 1, 8, 8});
  for (std::int64_t i = 0; i < batch.size(); ++i)
    batch[i] = static_cast<float>(rng.uniform());

  ViewConfig cfg;
  cfg.heads = {"rotation", "vtrans", "htrans"};
  cfg.mode = ViewMode::ComposedSubset;
  cfg.t = 3;
  auto views = build_ss_views(batch, cfg);
  const std::int64_t img_sz = 8 * 8;
  for (std::size_t m = 0; m < views.labels.size(); ++m) {
    const auto& l = views.labels[m];
    Tensor<float> view({1, 8, 8});
    std::copy(views.images.data() + static_cast<std::int64_t>(m) * img_sz,
              views.images.data() + static_cast<std::int64_t>(m + 1) * img_sz,
              view.data());
    auto undone = translate(view, -trans_class_to_shift(l.htrans_class, views.t),
                            -trans_class_to_shift(l.vtrans_class, views.t));
    undone = rotate(undone, (4 - l.rotation_class) % 4);
    auto src = take_rows(batch, views.source_index[m], 1).reshaped({1, 8, 8});
    CHECK(bitwise_equal(undone, src));
  }
}

TEST_CASE("default translation magnitude is a quarter of the height") {
  Tensor<float> batch({1, 1, 16, 16});
  ViewConfig cfg;
  cfg.heads = {"rotation", "vtrans", "htrans"};
  cfg.mode = ViewMode::ComposedSubset;
  auto views = build_ss_views(batch, cfg);
  CHECK(views.t == 4);
}

TEST_CASE("view construction validates heads and translation range") {
  Tensor<float> batch({1, 1, 8, 8});
  ViewConfig bad;
  bad.heads = {"rotation", "zoom"};
  CHECK_THROWS_AS((void)build_ss_views(batch, bad), std::invalid_argument);

  ViewConfig toofar;
  toofar.heads = {"rotation", "htrans"};
  toofar.mode = ViewMode::ComposedSubset;
  toofar.t = 4;  // must stay under half the image size
  CHECK_THROWS_AS((void)build_ss_views(batch, toofar), std::invalid_argument);
}

TEST_SUITE_END();
