#include "choicekit/math.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include "choicekit/common.hpp"

namespace choicekit::math {

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() == 0) return -std::numeric_limits<double>::infinity();
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;  // all -inf, or a stray +/-inf dominates
  return m + std::log((v.array() - m).exp().sum());
}

Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& v) {
  Eigen::VectorXd out = (v.array() - v.maxCoeff()).exp();
  out /= out.sum();
  return out;
}

Eigen::VectorXd log_softmax(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double m = v.maxCoeff();
  Eigen::ArrayXd shifted = v.array() - m;
  return (shifted - std::log(shifted.exp().sum())).matrix();
}

void softmax_rows_inplace(Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

Eigen::VectorXd log_sum_exp_rows(const Eigen::MatrixXd& m) {
  Eigen::VectorXd out(m.rows());
  for (Eigen::Index r = 0; r < m.rows(); ++r) out[r] = log_sum_exp(m.row(r).transpose());
  return out;
}

double pairwise_sum(std::span<const double> xs) {
  // Base case small enough to stay cheap, large enough to amortize recursion.
  if (xs.size() <= 32) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  const std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

int argmax(const Eigen::Ref<const Eigen::VectorXd>& v) {
  require(v.size() > 0, "argmax: empty vector");
  int best = 0;
  for (int i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

double normal_pdf(double x) {
  static const double inv_sqrt_2pi = 0.3989422804014326779;
  return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double chi_squared_quantile(double p, int dof) {
  require(p > 0.0 && p < 1.0, "chi_squared_quantile: p must be in (0,1)");
  require(dof >= 1, "chi_squared_quantile: dof must be >= 1");
  boost::math::chi_squared dist(static_cast<double>(dof));
  return boost::math::quantile(dist, p);
}

}  // namespace choicekit::math
