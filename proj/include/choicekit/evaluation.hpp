#pragma once

#include <span>
#include <string>
#include <vector>

#include "choicekit/estimation.hpp"

namespace choicekit {

enum class Family { Mnl, Mxl, Lcm, Moe };

Family family_from_string(const std::string& name);
std::string family_display_name(Family f);

/// {AIC, BIC}: AIC = 2p - 2LL, BIC = p ln(n) - 2LL.
std::pair<double, double> information_criteria(double log_likelihood, int n_params, int n_obs);

/// Percentage of observations whose highest-probability alternative is the
/// chosen one.  Probability ties resolve to the lowest alternative index.
double predictive_accuracy(const ChoiceDataset& ds, const ModelParams& params);

/// Area under the ROC curve for binary labels, computed by midranks so tied
/// scores contribute 1/2.  Requires at least one positive and one negative.
double auc_binary(std::span<const double> scores, std::span<const int> labels);

/// Macro-averaged one-vs-rest AUC over alternatives: for each alternative j,
/// score = P(choose j), label = (chosen == j); alternatives never chosen (or
/// always chosen) in the dataset are skipped.
double auc_macro_ovr(const ChoiceDataset& ds, const ModelParams& params);

struct KFoldResult {
  struct Fold {
    double heldout_ll_per_obs;
    double accuracy_pct;
  };
  std::vector<Fold> folds;
  double mean_ll = 0.0;
  double std_ll = 0.0;       // sample standard deviation over folds
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
};

/// Stratified k-fold cross-validation of one model family.  Reports per-fold
/// held-out per-observation log-likelihood and accuracy, with means and
/// sample standard deviations across folds.
KFoldResult k_fold_cv(const ChoiceDataset& ds, int n_folds, Family family, const FitConfig& cfg);

struct BenchmarkRow {
  std::string model;
  bool ok = true;
  std::string error;
  double log_likelihood = 0.0;  // on the test set
  int n_params = 0;
  double aic = 0.0;
  double bic = 0.0;
  double accuracy_pct = 0.0;
  double auc = 0.0;
  int selected_k = 0;  // LCM / MoE only
};

struct BenchmarkReport {
  std::vector<BenchmarkRow> rows;
  int n_train = 0;
  int n_validation = 0;
  int n_test = 0;

  /// CSV with header
  /// Model,Log-Likelihood,AIC,BIC,Predictive Accuracy (%),auc
  std::string to_csv() const;
};

/// Fits MNL, MXL, LCM and MoE on the training rows, selects K for the two
/// mixture families on the validation rows (from cfg.k_candidates; falls back
/// to cfg.k_experts when the validation part is empty) and evaluates all
/// metrics on the test rows.  A family that fails to fit gets an error row
/// instead of aborting the run.
BenchmarkReport run_benchmark(const ChoiceDataset& ds, const SplitIndices& split,
                              const FitConfig& cfg);

}  // namespace choicekit
