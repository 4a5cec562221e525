#include <cmath>
#include <limits>

#include "doctest.h"
#include "selfrobust/tensor.hpp"

using namespace selfrobust;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("construction zero-fills and tracks shape") {
  Tensor<float> t({2, 3, 4});
  CHECK(t.rank() == 3);
  CHECK(t.dim(0) == 2);
  CHECK(t.dim(2) == 4);
  CHECK(t.size() == 24);
  for (std::int64_t i = 0; i < t.size(); ++i) CHECK(t[i] == 0.0f);
}

TEST_CASE("non-positive dimensions are rejected") {
  CHECK_THROWS_AS(Tensor<float>({2, 0}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor<float>({-1, 3}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor<float>({2, 2}, {1.0f, 2.0f}), std::invalid_argument);
}

TEST_CASE("row-major indexing matches flat layout") {
  Tensor<double> t({2, 3});
  t(1, 2) = 7.0;
  CHECK(t[5] == 7.0);
  Tensor<double> u({2, 2, 2, 2});
  u(1, 0, 1, 1) = 3.0;
  CHECK(u[11] == 3.0);
}

TEST_CASE("reshaped preserves data and rejects size changes") {
  Tensor<float> t({2, 6}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
  auto u = t.reshaped({3, 4});
  CHECK(u(2, 3) == 11.0f);
  CHECK_THROWS_AS(t.reshaped({5}), std::invalid_argument);
}

TEST_CASE("require_finite flags NaN and Inf with the location") {
  Tensor<float> t({4});
  t[2] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(t.require_finite("ingest"), NumericError);
  t[2] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(t.require_finite("ingest"), NumericError);
  t[2] = 1.0f;
  CHECK_NOTHROW(t.require_finite("ingest"));
}

TEST_CASE("bitwise_equal distinguishes shape and value differences") {
  Tensor<float> a({2, 2}, {1, 2, 3, 4});
  Tensor<float> b = a;
  CHECK(bitwise_equal(a, b));
  b[3] = std::nextafter(4.0f, 5.0f);
  CHECK_FALSE(bitwise_equal(a, b));
  CHECK_FALSE(bitwise_equal(a, Tensor<float>({4}, {1, 2, 3, 4})));
}

TEST_CASE("take_rows slices and gathers along the leading axis") {
  Tensor<float> t({3, 2}, {0, 1, 10, 11, 20, 21});
  auto mid = take_rows(t, 1, 2);
  CHECK(mid.shape() == std::vector<int>{2, 2});
  CHECK(mid(0, 0) == 10.0f);
  CHECK(mid(1, 1) == 21.0f);

  auto picked = take_rows(t, std::vector<int>{2, 0, 2});
  CHECK(picked.dim(0) == 3);
  CHECK(picked(0, 1) == 21.0f);
  CHECK(picked(1, 0) == 0.0f);
  CHECK(picked(2, 0) == 20.0f);

  CHECK_THROWS_AS(take_rows(t, 2, 2), std::out_of_range);
  CHECK_THROWS_AS(take_rows(t, std::vector<int>{3}), std::out_of_range);
  CHECK_THROWS_AS(take_rows(t, std::vector<int>{}), std::invalid_argument);
}

TEST_CASE("matrix view shares the buffer") {
  Tensor<float> t({2, 3}, {1, 2, 3, 4, 5, 6});
  auto m = t.as_matrix(2, 3);
  CHECK(m(1, 2) == 6.0f);
  m(0, 0) = 9.0f;
  CHECK(t[0] == 9.0f);
  CHECK_THROWS_AS((void)t.as_matrix(4, 2), std::invalid_argument);
}

TEST_CASE("cast converts precision elementwise") {
  Tensor<double> t({3}, {0.5, 1.25, -2.0});
  auto f = t.cast<float>();
  CHECK(f[1] == 1.25f);
  auto back = f.cast<double>();
  CHECK(back[2] == -2.0);
}

TEST_SUITE_END();
