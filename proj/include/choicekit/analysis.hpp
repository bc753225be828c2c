#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "choicekit/estimation.hpp"

namespace choicekit {

enum class ElasticityMethod { Analytic, FiniteDifference };

/// Own-price elasticity of alternative `alt`: dP_alt/dp_alt * p_alt / P_alt.
///
/// Analytic formulas: MNL beta_p * p * (1 - P); mixtures (MoE, LCM) the
/// weighted sum over components, (p/P_i) * sum_k w_k beta_kp P_ki (1 - P_ki).
/// Mixed logit has no closed form here and requires FiniteDifference.
/// The FD path perturbs the price by a relative step of 1e-4 (central
/// difference) and works for every family.
double own_price_elasticity(const ChoiceObservation& obs, const ModelParams& params, int alt,
                            ElasticityMethod method = ElasticityMethod::Analytic,
                            int price_attr = 0);

/// Cross-price elasticity of alternative `alt_i` with respect to the price of
/// `alt_j` (i != j): dP_i/dp_j * p_j / P_i.  Analytic MNL: -beta_p p_j P_j,
/// identical for every i (the IIA property); mixtures sum
/// -(p_j/P_i) sum_k w_k beta_kp P_ki P_kj.
double cross_price_elasticity(const ChoiceObservation& obs, const ModelParams& params, int alt_i,
                              int alt_j, ElasticityMethod method = ElasticityMethod::Analytic,
                              int price_attr = 0);

struct SegmentElasticityReport {
  struct Row {
    int segment = 0;
    int n_obs = 0;
    double share_pct = 0.0;       // hard share: % of rows assigned by argmax responsibility
    double soft_share_pct = 0.0;  // mean responsibility * 100
    double mean_own_price_elasticity = 0.0;
    bool has_elasticity = false;  // false when the segment received no rows
  };
  std::vector<Row> rows;
};

/// Hard-assigns every observation to its argmax-responsibility expert and
/// reports, per segment, the share of observations and the mean
/// expert-conditional own-price elasticity across all alternatives at
/// observed prices.
SegmentElasticityReport segment_elasticity_report(const ChoiceDataset& ds,
                                                  const MoeParams& params);

/// Exact Shapley values for `d` players by full coalition enumeration
/// (2^d evaluations of `value`, d <= 12).  `value` receives a membership
/// mask of length d.
Eigen::VectorXd shapley_exact(int d, const std::function<double(const std::vector<bool>&)>& value);

struct ShapleyAttribution {
  Eigen::VectorXd phi;          // one value per attribute
  double baseline_value = 0.0;  // P(target) with every attribute at baseline
  double full_value = 0.0;      // P(target) at the observed features
};

/// Shapley attribution of P(choose target_alt) across the d_x alternative
/// attributes.  A coalition "observes" an attribute by keeping its real
/// values on every alternative; excluded attributes are replaced by the
/// corresponding `baseline` column (J x d_x, typically training-set means).
/// phi sums to full_value - baseline_value (efficiency).
ShapleyAttribution shapley_attribution(const ChoiceObservation& obs, const ModelParams& params,
                                       int target_alt, const Eigen::MatrixXd& baseline);

/// Per-alternative-attribute training means, shaped J x d_x, the default
/// Shapley baseline.
Eigen::MatrixXd feature_means(const ChoiceDataset& ds);

struct DiscountCurve {
  std::vector<double> grid;           // discount fractions
  Eigen::MatrixXd share_pct;          // K x grid.size(): P_k(alt) * 100 per expert
  Eigen::VectorXd baseline_share_pct; // K: share at zero discount
  Eigen::MatrixXd delta_pct;          // share_pct minus the zero-discount baseline
};

/// Choice share of `alt` under each expert as the discount on `alt` sweeps
/// the grid, other features held at the base observation; deltas are
/// reported against the zero-discount share.  If a threshold is supplied,
/// its segment receives the boost at grid points strictly above the knee,
/// which is what produces a visible kink in that segment's curve.
DiscountCurve discount_response_curve(const MoeParams& params, const ChoiceObservation& base,
                                      const std::vector<double>& grid, int alt, int discount_attr,
                                      const std::optional<DiscountThreshold>& threshold = {});

}  // namespace choicekit
