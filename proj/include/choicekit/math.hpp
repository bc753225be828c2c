#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace choicekit::math {

/// log(sum_i exp(v_i)) with the max shifted out, so it never overflows and
/// underflows only to the exact answer.  Returns -inf for an empty input.
double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v);

/// Softmax with max-subtraction.  Output sums to 1 exactly up to rounding.
Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& v);

/// log softmax(v), computed as v - max - log(sum exp(v - max)).
Eigen::VectorXd log_softmax(const Eigen::Ref<const Eigen::VectorXd>& v);

/// Row-wise in-place softmax of a utility matrix (rows = observations).
void softmax_rows_inplace(Eigen::MatrixXd& m);

/// Row-wise log-sum-exp of a matrix; result has one entry per row.
Eigen::VectorXd log_sum_exp_rows(const Eigen::MatrixXd& m);

/// Pairwise (cascade) summation.  O(log n) error growth instead of O(n),
/// and a fixed association order so reductions are reproducible regardless
/// of how callers might batch their inputs.
double pairwise_sum(std::span<const double> xs);

/// Index of the maximum entry; ties resolve to the lowest index.
int argmax(const Eigen::Ref<const Eigen::VectorXd>& v);

double normal_pdf(double x);
double normal_cdf(double x);

/// Quantile of the chi-squared distribution with `dof` degrees of freedom.
double chi_squared_quantile(double p, int dof);

inline bool close(double a, double b, double tol) { return std::abs(a - b) <= tol; }

}  // namespace choicekit::math
