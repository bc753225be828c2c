#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "choicekit/math.hpp"

using namespace choicekit;

TEST_CASE("log_sum_exp matches the naive form on small inputs") {
  Eigen::Vector3d v(1.0, 0.0, -1.0);
  const double naive = std::log(std::exp(1.0) + 1.0 + std::exp(-1.0));
  CHECK(math::log_sum_exp(v) == doctest::Approx(naive).epsilon(1e-15));
}

TEST_CASE("log_sum_exp survives magnitudes that overflow exp") {
  Eigen::Vector2d v(1000.0, 999.0);
  const double expected = 1000.0 + std::log(1.0 + std::exp(-1.0));
  CHECK(math::log_sum_exp(v) == doctest::Approx(expected).epsilon(1e-15));
  Eigen::Vector2d w(-1000.0, -1001.0);
  CHECK(std::isfinite(math::log_sum_exp(w)));
}

TEST_CASE("softmax oracle at (1, 0, -1)") {
  Eigen::Vector3d v(1.0, 0.0, -1.0);
  const Eigen::VectorXd p = math::softmax(v);
  CHECK(p[0] == doctest::Approx(0.6652409557748219).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(0.24472847105479767).epsilon(1e-15));
  CHECK(p[2] == doctest::Approx(0.09003057317038046).epsilon(1e-15));
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("softmax is shift invariant") {
  Eigen::Vector3d v(3.0, -2.0, 0.5);
  Eigen::Vector3d shifted = v.array() + 123.0;
  const Eigen::VectorXd a = math::softmax(v);
  const Eigen::VectorXd b = math::softmax(shifted);
  for (int i = 0; i < 3; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("log_softmax equals log of softmax") {
  Eigen::Vector4d v(0.3, -1.2, 2.0, 0.0);
  const Eigen::VectorXd ls = math::log_softmax(v);
  const Eigen::VectorXd p = math::softmax(v);
  for (int i = 0; i < 4; ++i) CHECK(ls[i] == doctest::Approx(std::log(p[i])).epsilon(1e-13));
}

TEST_CASE("softmax_rows_inplace normalizes each row") {
  Eigen::MatrixXd m(2, 3);
  m << 1.0, 0.0, -1.0, 500.0, 499.0, -500.0;
  math::softmax_rows_inplace(m);
  CHECK(m.row(0).sum() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(m.row(1).sum() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(m(0, 0) == doctest::Approx(0.6652409557748219).epsilon(1e-14));
  CHECK(m(1, 2) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("pairwise_sum agrees with long double accumulation") {
  std::vector<double> xs;
  long double acc = 0.0L;
  for (int i = 0; i < 10001; ++i) {
    const double v = std::sin(i) * 1e-3 + (i % 7) * 0.1;
    xs.push_back(v);
    acc += v;
  }
  const double got = math::pairwise_sum(std::span<const double>(xs.data(), xs.size()));
  CHECK(got == doctest::Approx(static_cast<double>(acc)).epsilon(1e-13));
}

TEST_CASE("pairwise_sum handles empty and single spans") {
  std::vector<double> none;
  CHECK(math::pairwise_sum(std::span<const double>(none.data(), 0)) == 0.0);
  std::vector<double> one{4.25};
  CHECK(math::pairwise_sum(std::span<const double>(one.data(), 1)) == 4.25);
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  Eigen::Vector4d v(0.5, 2.0, 2.0, -1.0);
  CHECK(math::argmax(v) == 1);
  Eigen::Vector3d all_equal(7.0, 7.0, 7.0);
  CHECK(math::argmax(all_equal) == 0);
}

TEST_CASE("normal pdf and cdf reference values") {
  CHECK(math::normal_pdf(0.0) == doctest::Approx(0.3989422804014327).epsilon(1e-15));
  CHECK(math::normal_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(math::normal_cdf(1.959963984540054) == doctest::Approx(0.975).epsilon(1e-12));
  CHECK(math::normal_cdf(-8.0) == doctest::Approx(6.22096057427178e-16).epsilon(1e-6));
}

TEST_CASE("chi squared quantile matches published values") {
  // 0.95 quantiles for 1..3 dof: 3.841459, 5.991465, 7.814728.
  CHECK(math::chi_squared_quantile(0.95, 1) == doctest::Approx(3.841458820694124).epsilon(1e-12));
  CHECK(math::chi_squared_quantile(0.95, 2) == doctest::Approx(5.991464547107979).epsilon(1e-12));
  CHECK(math::chi_squared_quantile(0.95, 3) == doctest::Approx(7.814727903251179).epsilon(1e-12));
}

TEST_CASE("close compares with absolute tolerance") {
  CHECK(math::close(1.0, 1.0 + 1e-10, 1e-9));
  CHECK_FALSE(math::close(1.0, 1.1, 1e-9));
}
