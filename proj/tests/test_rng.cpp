#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <choicekit/math.hpp>
#include <choicekit/rng.hpp>

using namespace choicekit;

TEST_CASE("same seed reproduces the exact sequence") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds diverge") {
  Rng a(1), b(2);
  int same = 0;
  for (int i = 0; i < 64; ++i) same += (a.next_u64() == b.next_u64());
  CHECK(same == 0);
}

TEST_CASE("substreams are deterministic and mutually distinct") {
  Rng a = Rng::substream(7, 3);
  Rng b = Rng::substream(7, 3);
  Rng c = Rng::substream(7, 4);
  bool differs = false;
  for (int i = 0; i < 64; ++i) {
    const std::uint64_t x = a.next_u64();
    CHECK(x == b.next_u64());
    if (x != c.next_u64()) differs = true;
  }
  CHECK(differs);
}

TEST_CASE("uniform01 stays in [0,1) and fills the range") {
  Rng r(5);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform01();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo < 0.001);
  CHECK(hi > 0.999);
}

TEST_CASE("uniform_int covers both endpoints and nothing else") {
  Rng r(11);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 50000; ++i) {
    const int v = r.uniform_int(2, 6);
    REQUIRE(v >= 2);
    REQUIRE(v <= 6);
    counts[v - 2] += 1;
  }
  for (int c : counts) CHECK(c > 9000);  // each of the 5 values near 10000
  CHECK_THROWS_AS(r.uniform_int(3, 2), Error);
}

TEST_CASE("below rejects bias and respects the bound") {
  Rng r(13);
  for (int i = 0; i < 10000; ++i) CHECK(r.below(3) < 3);
  CHECK_THROWS_AS(r.below(0), Error);
}

TEST_CASE("bernoulli at the extremes") {
  Rng r(17);
  for (int i = 0; i < 100; ++i) {
    CHECK_FALSE(r.bernoulli(0.0));
    CHECK(r.bernoulli(1.0));
  }
}

TEST_CASE("normal moments match the standard normal") {
  Rng r(23);
  const int n = 200000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("gumbel moments match Euler-Mascheroni and pi^2/6") {
  Rng r(29);
  const int n = 200000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = r.gumbel();
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean - 0.5772156649) < 0.01);
  CHECK(std::abs(var - 1.6449340668) < 0.05);
}

TEST_CASE("truncated normal respects its bounds") {
  Rng r(31);
  for (int i = 0; i < 20000; ++i) {
    const double x = r.truncated_normal(5.0, 2.0, 4.0, 7.0);
    CHECK(x >= 4.0);
    CHECK(x <= 7.0);
  }
  CHECK_THROWS_AS(r.truncated_normal(0, 1, 2, 1), Error);
  CHECK_THROWS_AS(r.truncated_normal(0, -1, 0, 1), Error);
}

TEST_CASE("categorical matches its probability vector") {
  Rng r(37);
  const std::vector<double> p{0.5, 0.3, 0.2};
  std::vector<int> counts(3, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) counts[r.categorical(p)] += 1;
  for (int k = 0; k < 3; ++k) CHECK(std::abs(counts[k] / double(n) - p[k]) < 0.01);
  CHECK(r.categorical({1.0}) == 0);
}

TEST_CASE("shuffle permutes and is reproducible") {
  std::vector<int> v(100);
  std::iota(v.begin(), v.end(), 0);
  std::vector<int> w = v;
  Rng a(41), b(41);
  a.shuffle(v);
  b.shuffle(w);
  CHECK(v == w);
  std::sort(v.begin(), v.end());
  for (int i = 0; i < 100; ++i) CHECK(v[i] == i);
}

TEST_CASE("gumbel-max argmax draws from the softmax distribution") {
  Eigen::Vector3d v(0.8, -0.3, 0.1);
  const Eigen::VectorXd target = math::softmax(v);
  Rng r(43);
  const int n = 200000;
  Eigen::Vector3d counts = Eigen::Vector3d::Zero();
  for (int i = 0; i < n; ++i) {
    Eigen::Vector3d u = v;
    for (int j = 0; j < 3; ++j) u[j] += r.gumbel();
    counts[math::argmax(u)] += 1.0;
  }
  counts /= n;
  for (int j = 0; j < 3; ++j) CHECK(std::abs(counts[j] - target[j]) < 5e-3);
}
