#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "choicekit/data.hpp"

namespace choicekit {

/// Probability vector over the J alternatives of one observation.
/// Entries are positive and sum to 1 up to rounding.
using ChoiceProbabilities = Eigen::VectorXd;

/// Multinomial logit: V_j = x_j . beta + asc_j with asc of length J-1
/// (the last alternative's constant is normalized to zero).
struct MnlParams {
  Eigen::VectorXd beta;  // d_x
  Eigen::VectorXd asc;   // J-1

  int n_alternatives() const { return static_cast<int>(asc.size()) + 1; }
};

/// Mixed logit with independent normal coefficients: beta_r = mean + std ⊙ η_r
/// where std = exp(log_std).  The R draws η are common across observations
/// for a given (seed, n_draws), so simulated likelihoods are smooth in the
/// parameters and reproducible.  If `lognormal_price >= 0`, that coefficient
/// is -exp(mean + std·η) instead (strictly negative price coefficient).
struct MxlParams {
  Eigen::VectorXd mean;     // d_x
  Eigen::VectorXd log_std;  // d_x
  Eigen::VectorXd asc;      // J-1
  int n_draws = 100;
  std::uint64_t draw_seed = 1;
  int lognormal_price = -1;  // attribute index, or -1 for all-normal

  int n_alternatives() const { return static_cast<int>(asc.size()) + 1; }
};

/// Latent class model: covariate-free mixture of K MNL experts.  Class
/// weights are softmax([logits; 0]) (last class normalized to zero).
struct LcmParams {
  Eigen::VectorXd class_logits;    // K-1
  std::vector<MnlParams> classes;  // K

  int n_classes() const { return static_cast<int>(classes.size()); }
};

/// Mixture of experts: softmax gate over consumer covariates selecting
/// among K MNL experts.  Gate row k holds [intercept, slopes...] for
/// expert k; expert K-1 is the reference with all-zero gate utility.
struct MoeParams {
  Eigen::MatrixXd gate;            // (K-1) x (d_z + 1)
  std::vector<MnlParams> experts;  // K

  int n_experts() const { return static_cast<int>(experts.size()); }
  int n_gate_covariates() const { return static_cast<int>(gate.cols()) - 1; }
};

using ModelParams = std::variant<MnlParams, MxlParams, LcmParams, MoeParams>;

/// Utility kink for promotion-driven behavior: when an alternative's discount
/// fraction strictly exceeds `knee`, members of `segment` receive `boost`
/// extra utility for that alternative.  Strictly-above matters: responses at
/// the knee itself follow the linear discount coefficient only.
struct DiscountThreshold {
  double knee = 0.2;
  double boost = 0.0;
  int segment = 0;
};

ChoiceProbabilities mnl_probs(const ChoiceObservation& obs, const MnlParams& p);
ChoiceProbabilities mxl_probs(const ChoiceObservation& obs, const MxlParams& p);
ChoiceProbabilities lcm_probs(const ChoiceObservation& obs, const LcmParams& p);
ChoiceProbabilities moe_probs(const ChoiceObservation& obs, const MoeParams& p);

/// Dispatch on the stored family.
ChoiceProbabilities choice_probs(const ChoiceObservation& obs, const ModelParams& p);

/// Gate weights g(z) for each expert; positive, sum to 1.
Eigen::VectorXd gate_weights(const Eigen::Ref<const Eigen::VectorXd>& covariates,
                             const MoeParams& p);

/// N x J matrix of choice probabilities for every observation.  For mixed
/// logit the simulation draws are generated once and shared across rows.
Eigen::MatrixXd choice_prob_matrix(const ChoiceDataset& ds, const ModelParams& p);

/// N x K gate weights for every observation.
Eigen::MatrixXd gate_weight_matrix(const ChoiceDataset& ds, const MoeParams& p);

/// The R x d_x standard-normal draw matrix used by mixed logit simulation
/// for a given seed.  Exposed so tests can pin the common-draws property.
Eigen::MatrixXd mxl_draws(std::uint64_t seed, int n_draws, int d_x);

/// Free parameter count: MNL d_x + (J-1); MXL 2 d_x + (J-1);
/// LCM K(d_x + J - 1) + (K-1); MoE K(d_x + J - 1) + (K-1)(d_z + 1).
int n_parameters(const ModelParams& p);

/// "mnl", "mxl", "lcm", or "moe".
std::string family_name(const ModelParams& p);

/// Throws if the parameter shapes are internally inconsistent or do not
/// match the dataset's dimensions.
void check_compatible(const ChoiceDataset& ds, const ModelParams& p);

}  // namespace choicekit
