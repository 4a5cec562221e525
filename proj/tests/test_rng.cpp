#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "selfrobust/rng.hpp"

using namespace selfrobust;

TEST_SUITE_BEGIN("rng");

TEST_CASE("identical seeds give identical streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds diverge") {
  Rng a(1), b(2);
  int same = 0;
  for (int i = 0; i < 64; ++i)
    if (a.next_u64() == b.next_u64()) ++same;
  CHECK(same == 0);
}

TEST_CASE("derive_seed separates streams by tag and index") {
  const std::uint64_t master = 7;
  CHECK(derive_seed(master, "alpha") == derive_seed(master, "alpha"));
  CHECK(derive_seed(master, "alpha") != derive_seed(master, "beta"));
  CHECK(derive_seed(master, std::uint64_t{0}) != derive_seed(master, std::uint64_t{1}));
  CHECK(derive_seed(1, "x") != derive_seed(2, "x"));
}

TEST_CASE("uniform stays in [0,1) and matches its moments") {
  Rng rng(3);
  const int n = 50000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
    sq += u * u;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  // SE of the mean is sqrt(1/12/n) ~ 0.0013
  CHECK(std::abs(mean - 0.5) < 4.0 * std::sqrt(1.0 / 12.0 / n));
  CHECK(var == doctest::Approx(1.0 / 12.0).epsilon(0.05));
}

TEST_CASE("uniform(a,b) respects the interval") {
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform(-2.5, 1.5);
    CHECK(u >= -2.5);
    CHECK(u < 1.5);
  }
}

TEST_CASE("uniform_int is in range and roughly uniform") {
  Rng rng(5);
  std::vector<int> counts(10, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto v = rng.uniform_int(10);
    REQUIRE(v >= 0);
    REQUIRE(v < 10);
    ++counts[static_cast<std::size_t>(v)];
  }
  // 4 SE for a multinomial cell with p = 0.1
  const double se = std::sqrt(0.1 * 0.9 * n);
  for (int c : counts) CHECK(std::abs(c - n / 10.0) < 4.0 * se);
  CHECK_THROWS_AS((void)rng.uniform_int(0), std::invalid_argument);
}

TEST_CASE("normal has the right first two moments") {
  Rng rng(6);
  const int n = 50000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 4.0 / std::sqrt(static_cast<double>(n)));
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("poisson matches its mean at small and large rates") {
  Rng rng(7);
  for (const double lambda : {3.5, 100.0}) {
    const int n = 20000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += static_cast<double>(rng.poisson(lambda));
    const double se = std::sqrt(lambda / n);
    CHECK(std::abs(sum / n - lambda) < 4.0 * se);
  }
  CHECK(rng.poisson(0.0) == 0);
}

TEST_CASE("shuffle permutes, preserves the multiset, and is seed-deterministic") {
  std::vector<int> v(100);
  std::iota(v.begin(), v.end(), 0);
  auto w = v;
  Rng a(8);
  a.shuffle(v);
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == w);
  CHECK(v != w);  // 100! permutations; identity would indicate a broken shuffle

  auto u = w;
  Rng b(8);
  b.shuffle(u);
  CHECK(u == v);
}

TEST_SUITE_END();
