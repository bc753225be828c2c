#include "choicekit/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "choicekit/math.hpp"

namespace choicekit {

namespace {

std::string format_double_csv(double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

Family family_from_string(const std::string& name) {
  if (name == "mnl") return Family::Mnl;
  if (name == "mxl") return Family::Mxl;
  if (name == "lcm") return Family::Lcm;
  if (name == "moe") return Family::Moe;
  fail("unknown model family '" + name + "' (expected mnl, mxl, lcm, or moe)");
}

std::string family_display_name(Family f) {
  switch (f) {
    case Family::Mnl: return "Multinomial Logit (MNL)";
    case Family::Mxl: return "Mixed Logit (MXL)";
    case Family::Lcm: return "Latent Class Model (LCM)";
    case Family::Moe: return "Mixture of Experts (MoE)";
  }
  fail("unreachable family");
}

std::pair<double, double> information_criteria(double log_likelihood, int n_params, int n_obs) {
  require(std::isfinite(log_likelihood), "information_criteria: log-likelihood must be finite");
  require(n_params >= 0, "information_criteria: n_params must be non-negative");
  require(n_obs >= 1, "information_criteria: n_obs must be at least 1");
  const double aic = 2.0 * n_params - 2.0 * log_likelihood;
  const double bic = n_params * std::log(static_cast<double>(n_obs)) - 2.0 * log_likelihood;
  return {aic, bic};
}

double predictive_accuracy(const ChoiceDataset& ds, const ModelParams& params) {
  ds.validate_for_fit();
  const Eigen::MatrixXd probs = choice_prob_matrix(ds, params);
  int correct = 0;
  for (int n = 0; n < ds.n_obs(); ++n)
    if (math::argmax(probs.row(n).transpose()) == ds.chosen[n]) ++correct;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(ds.n_obs());
}

double auc_binary(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), "auc_binary: scores/labels length mismatch");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int l : labels) {
    require(l == 0 || l == 1, "auc_binary: labels must be 0 or 1");
    n_pos += static_cast<std::size_t>(l);
  }
  const std::size_t n_neg = n - n_pos;
  require(n_pos > 0 && n_neg > 0, "auc_binary: need at least one positive and one negative");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Midranks: tied scores share the average of their rank range.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (std::size_t t = i; t <= j; ++t)
      if (labels[order[t]] == 1) rank_sum_pos += midrank;
    i = j + 1;
  }
  const double u =
      rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double auc_macro_ovr(const ChoiceDataset& ds, const ModelParams& params) {
  ds.validate_for_fit();
  const Eigen::MatrixXd probs = choice_prob_matrix(ds, params);
  const int N = ds.n_obs();
  std::vector<double> scores(N);
  std::vector<int> labels(N);
  double total = 0.0;
  int used = 0;
  for (int j = 0; j < ds.n_alts; ++j) {
    int pos = 0;
    for (int n = 0; n < N; ++n) {
      scores[n] = probs(n, j);
      labels[n] = ds.chosen[n] == j ? 1 : 0;
      pos += labels[n];
    }
    if (pos == 0 || pos == N) continue;  // degenerate one-vs-rest problem
    total += auc_binary(scores, labels);
    ++used;
  }
  require(used > 0, "auc_macro_ovr: no alternative has both positives and negatives");
  return total / static_cast<double>(used);
}

namespace {

FitResult fit_family(const ChoiceDataset& ds, Family family, const FitConfig& cfg) {
  switch (family) {
    case Family::Mnl: return fit_mnl(ds, cfg);
    case Family::Mxl: return fit_mxl(ds, cfg);
    case Family::Lcm: return fit_lcm(ds, cfg);
    case Family::Moe: return fit_moe(ds, cfg);
  }
  fail("unreachable family");
}

}  // namespace

KFoldResult k_fold_cv(const ChoiceDataset& ds, int n_folds, Family family, const FitConfig& cfg) {
  const std::vector<int> fold = stratified_fold_ids(ds, n_folds, cfg.seed);
  KFoldResult res;
  for (int f = 0; f < n_folds; ++f) {
    std::vector<int> train, held;
    for (int n = 0; n < ds.n_obs(); ++n) (fold[n] == f ? held : train).push_back(n);
    const ChoiceDataset train_ds = ds.subset(train);
    const ChoiceDataset held_ds = ds.subset(held);
    const FitResult fit = fit_family(train_ds, family, cfg);
    KFoldResult::Fold out;
    out.heldout_ll_per_obs = log_likelihood(held_ds, fit.params) / held_ds.n_obs();
    out.accuracy_pct = predictive_accuracy(held_ds, fit.params);
    res.folds.push_back(out);
  }
  const double F = static_cast<double>(n_folds);
  for (const auto& f : res.folds) {
    res.mean_ll += f.heldout_ll_per_obs;
    res.mean_accuracy += f.accuracy_pct;
  }
  res.mean_ll /= F;
  res.mean_accuracy /= F;
  double v_ll = 0.0, v_acc = 0.0;
  for (const auto& f : res.folds) {
    v_ll += (f.heldout_ll_per_obs - res.mean_ll) * (f.heldout_ll_per_obs - res.mean_ll);
    v_acc += (f.accuracy_pct - res.mean_accuracy) * (f.accuracy_pct - res.mean_accuracy);
  }
  res.std_ll = std::sqrt(v_ll / (F - 1.0));
  res.std_accuracy = std::sqrt(v_acc / (F - 1.0));
  return res;
}

BenchmarkReport run_benchmark(const ChoiceDataset& ds, const SplitIndices& split,
                              const FitConfig& cfg) {
  require(!split.train.empty(), "run_benchmark: empty training split");
  require(!split.test.empty(), "run_benchmark: empty test split");
  const ChoiceDataset train = ds.subset(split.train);
  const ChoiceDataset val =
      split.validation.empty() ? ChoiceDataset{} : ds.subset(split.validation);
  const ChoiceDataset test = ds.subset(split.test);

  BenchmarkReport report;
  report.n_train = train.n_obs();
  report.n_validation = static_cast<int>(split.validation.size());
  report.n_test = test.n_obs();

  // Mixture families pick K on the validation part: fit each candidate on
  // train, keep the candidate with the best validation log-likelihood
  // (ties to the smaller K).  Without a validation part, cfg.k_experts is
  // used as-is.
  auto fit_with_selection = [&](Family family, int* selected_k) -> FitResult {
    if (split.validation.empty() || cfg.k_candidates.size() <= 1) {
      *selected_k = cfg.k_experts;
      return fit_family(train, family, cfg);
    }
    std::vector<int> candidates = cfg.k_candidates;
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    std::optional<FitResult> best;
    double best_ll = -std::numeric_limits<double>::infinity();
    for (const int k : candidates) {
      FitConfig kcfg = cfg;
      kcfg.k_experts = k;
      FitResult fit = fit_family(train, family, kcfg);
      const double vll = log_likelihood(val, fit.params);
      if (!best || vll > best_ll) {
        best = std::move(fit);
        best_ll = vll;
        *selected_k = k;
      }
    }
    return std::move(*best);
  };

  for (const Family family : {Family::Mnl, Family::Mxl, Family::Lcm, Family::Moe}) {
    BenchmarkRow row;
    row.model = family_display_name(family);
    try {
      int selected_k = 0;
      FitResult fit;
      if (family == Family::Lcm || family == Family::Moe) {
        fit = fit_with_selection(family, &selected_k);
      } else {
        fit = fit_family(train, family, cfg);
      }
      row.selected_k = selected_k;
      row.n_params = fit.n_params;
      row.log_likelihood = log_likelihood(test, fit.params);
      const auto [aic, bic] = information_criteria(row.log_likelihood, row.n_params, test.n_obs());
      row.aic = aic;
      row.bic = bic;
      row.accuracy_pct = predictive_accuracy(test, fit.params);
      row.auc = auc_macro_ovr(test, fit.params);
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string BenchmarkReport::to_csv() const {
  std::string out = "Model,Log-Likelihood,AIC,BIC,Predictive Accuracy (%),auc\n";
  for (const auto& r : rows) {
    out += "\"" + r.model + "\",";
    if (r.ok) {
      out += format_double_csv(r.log_likelihood) + "," + format_double_csv(r.aic) + "," +
             format_double_csv(r.bic) + "," + format_double_csv(r.accuracy_pct) + "," +
             format_double_csv(r.auc);
    } else {
      out += ",,,,";
    }
    out += "\n";
  }
  return out;
}

}  // namespace choicekit
