#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "choicekit/models.hpp"

namespace choicekit {

/// Budget for one inner maximization (an M-step partial fit).  The M-step is
/// generalized: it improves rather than solves, so `max_iters` stays small.
struct InnerOptConfig {
  int max_iters = 25;
  double grad_tol = 1e-6;  // on the infinity norm of the per-observation-scaled gradient
};

struct FitConfig {
  // Mixture (EM) controls.
  int k_experts = 2;
  int max_em_iters = 500;
  double rel_ll_tol = 1e-6;  // stop when (ll' - ll) / |ll| < tol
  int n_restarts = 5;
  InnerOptConfig inner;

  // Expert counts scanned by model selection (CV and the benchmark).
  std::vector<int> k_candidates{1, 2, 3, 4};

  // Single-likelihood fits (MNL, MXL) iterate the same line-search ascent
  // to convergence rather than a capped partial fit.
  int max_opt_iters = 500;

  std::uint64_t seed = 0;

  // Mixed logit simulation controls.
  int mxl_draws = 100;
  double mxl_init_std = 0.1;
  bool mxl_freeze_std = false;  // pin std at its init; useful for collapse checks
  int mxl_lognormal_price = -1;

  // Optional warm start for fit_moe (bypasses random restarts).
  std::optional<MoeParams> moe_init;

  // EM is the estimator of record; Direct maximizes the same mixture
  // likelihood by joint gradient ascent as a cross-check.
  enum class MoeMethod { Em, Direct };
  MoeMethod moe_method = MoeMethod::Em;
};

struct FitResult {
  ModelParams params;
  double final_ll = 0.0;          // equals ll_trace.back()
  std::vector<double> ll_trace;   // ll_trace[0] is the initial point
  int iterations = 0;
  bool converged = false;
  int n_params = 0;
  std::vector<std::string> warnings;
};

/// Posterior responsibilities: rows are observations, columns experts;
/// each row is non-negative and sums to 1.
using PosteriorMatrix = Eigen::MatrixXd;

/// Total log-likelihood of the dataset under any fitted family.
double log_likelihood(const ChoiceDataset& ds, const ModelParams& params);

FitResult fit_mnl(const ChoiceDataset& ds, const FitConfig& cfg);
FitResult fit_mxl(const ChoiceDataset& ds, const FitConfig& cfg);
FitResult fit_lcm(const ChoiceDataset& ds, const FitConfig& cfg);
FitResult fit_moe(const ChoiceDataset& ds, const FitConfig& cfg);

/// Posterior probability that each observation was generated by each expert:
/// resp(n,k) ∝ g_k(z_n) · P_k(y_n | x_n), rows normalized.
PosteriorMatrix e_step(const ChoiceDataset& ds, const MoeParams& params);

/// One generalized M-step: responsibility-weighted partial refit of every
/// expert plus a weighted multinomial-logistic refit of the gate, warm
/// started at `params`.  An expert whose responsibility mass falls below
/// 1e-6 * N is frozen for the step.
MoeParams m_step(const ChoiceDataset& ds, const PosteriorMatrix& resp, const MoeParams& params,
                 const FitConfig& cfg);

/// Expected complete-data objective Q(params; resp) =
/// sum_n sum_k resp(n,k) [log g_k(z_n) + log P_k(y_n|x_n)].
/// The M-step never decreases this for fixed resp.
double complete_data_objective(const ChoiceDataset& ds, const PosteriorMatrix& resp,
                               const MoeParams& params);

struct CvSelection {
  int chosen_k = 1;
  struct Row {
    int k;
    double mean_heldout_ll;         // mean over folds of per-observation held-out LL
    std::vector<double> fold_ll;
  };
  std::vector<Row> table;
};

/// Picks the expert count by stratified k-fold cross-validation on held-out
/// log-likelihood; ties go to the smaller K.
CvSelection select_k_by_cv(const ChoiceDataset& ds, const std::vector<int>& k_candidates,
                           int n_folds, const FitConfig& cfg);

/// Stratified fold labels in [0, n_folds), balanced within each chosen class.
std::vector<int> stratified_fold_ids(const ChoiceDataset& ds, int n_folds, std::uint64_t seed);

// Likelihood/gradient surfaces on raw (unstandardized) scale, used by the
// direct MoE mode and by finite-difference gradient verification.
// Packing: MNL [beta; asc]; MoE [expert_0 beta, asc; ...; gate rows 0..K-2].

Eigen::VectorXd pack_mnl(const MnlParams& p);
MnlParams unpack_mnl(const Eigen::VectorXd& theta, int d_x, int n_alts);
Eigen::VectorXd pack_moe(const MoeParams& p);
MoeParams unpack_moe(const Eigen::VectorXd& theta, int d_x, int n_alts, int d_z, int k);

std::pair<double, Eigen::VectorXd> mnl_loglik_grad(const ChoiceDataset& ds, const MnlParams& p);
std::pair<double, Eigen::VectorXd> moe_loglik_grad(const ChoiceDataset& ds, const MoeParams& p);

}  // namespace choicekit
