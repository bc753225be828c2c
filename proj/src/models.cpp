#include "choicekit/models.hpp"

#include <cmath>

#include "choicekit/math.hpp"
#include "choicekit/rng.hpp"

namespace choicekit {

namespace {

void check_mnl_shapes(const MnlParams& p, int J, int d_x, const char* who) {
  require(p.asc.size() == J - 1,
          std::string(who) + ": asc must have length J-1 = " + std::to_string(J - 1));
  require(p.beta.size() == d_x,
          std::string(who) + ": beta length " + std::to_string(p.beta.size()) +
              " does not match feature count " + std::to_string(d_x));
}

Eigen::VectorXd utilities(const ChoiceObservation& obs, const Eigen::VectorXd& beta,
                          const Eigen::VectorXd& asc) {
  const int J = obs.n_alternatives();
  Eigen::VectorXd v = obs.alt_features * beta;
  v.head(J - 1) += asc;
  return v;
}

// Per-draw coefficient vector for mixed logit.
Eigen::VectorXd mxl_coef(const MxlParams& p, const Eigen::RowVectorXd& eta) {
  Eigen::VectorXd beta =
      p.mean.array() + p.log_std.array().exp() * eta.transpose().array();
  if (p.lognormal_price >= 0) {
    const int a = p.lognormal_price;
    beta[a] = -std::exp(p.mean[a] + std::exp(p.log_std[a]) * eta[a]);
  }
  return beta;
}

// Utility matrix for a whole dataset under one MNL coefficient set:
// V(n, j) = sum_a beta_a * x(n, a, j) + asc_j.
Eigen::MatrixXd batch_utilities(const ChoiceDataset& ds, const Eigen::VectorXd& beta,
                                const Eigen::VectorXd& asc) {
  const int N = ds.n_obs();
  const int J = ds.n_alts;
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(N, J);
  for (int a = 0; a < ds.n_alt_attrs(); ++a)
    for (int j = 0; j < J; ++j)
      v.col(j) += beta[a] * ds.alt_features.col(ds.feature_col(a, j));
  for (int j = 0; j < J - 1; ++j) v.col(j).array() += asc[j];
  return v;
}

}  // namespace

ChoiceProbabilities mnl_probs(const ChoiceObservation& obs, const MnlParams& p) {
  check_mnl_shapes(p, obs.n_alternatives(), obs.n_alt_attrs(), "mnl_probs");
  return math::softmax(utilities(obs, p.beta, p.asc));
}

ChoiceProbabilities mxl_probs(const ChoiceObservation& obs, const MxlParams& p) {
  const int J = obs.n_alternatives();
  const int d_x = obs.n_alt_attrs();
  require(p.mean.size() == d_x && p.log_std.size() == d_x,
          "mxl_probs: mean/log_std length must match feature count");
  require(p.asc.size() == J - 1, "mxl_probs: asc must have length J-1");
  require(p.n_draws >= 1, "mxl_probs: n_draws must be >= 1");
  const Eigen::MatrixXd eta = mxl_draws(p.draw_seed, p.n_draws, d_x);
  Eigen::VectorXd probs = Eigen::VectorXd::Zero(J);
  for (int r = 0; r < p.n_draws; ++r)
    probs += math::softmax(utilities(obs, mxl_coef(p, eta.row(r)), p.asc));
  return probs / static_cast<double>(p.n_draws);
}

ChoiceProbabilities lcm_probs(const ChoiceObservation& obs, const LcmParams& p) {
  const int K = p.n_classes();
  require(K >= 1, "lcm_probs: need at least one class");
  require(p.class_logits.size() == K - 1, "lcm_probs: class_logits must have length K-1");
  Eigen::VectorXd logits(K);
  logits << p.class_logits, 0.0;
  const Eigen::VectorXd w = math::softmax(logits);
  Eigen::VectorXd probs = Eigen::VectorXd::Zero(obs.n_alternatives());
  for (int k = 0; k < K; ++k) probs += w[k] * mnl_probs(obs, p.classes[k]);
  return probs;
}

Eigen::VectorXd gate_weights(const Eigen::Ref<const Eigen::VectorXd>& covariates,
                             const MoeParams& p) {
  const int K = p.n_experts();
  require(K >= 1, "gate_weights: need at least one expert");
  require(p.gate.rows() == K - 1, "gate_weights: gate must have K-1 rows");
  require(p.gate.cols() == covariates.size() + 1,
          "gate_weights: gate expects " + std::to_string(p.gate.cols() - 1) +
              " covariates, observation has " + std::to_string(covariates.size()));
  Eigen::VectorXd logits(K);
  if (K > 1) {
    Eigen::VectorXd zt(covariates.size() + 1);
    zt << 1.0, covariates;
    logits.head(K - 1) = p.gate * zt;
  }
  logits[K - 1] = 0.0;
  return math::softmax(logits);
}

ChoiceProbabilities moe_probs(const ChoiceObservation& obs, const MoeParams& p) {
  const Eigen::VectorXd g = gate_weights(obs.covariates, p);
  Eigen::VectorXd probs = Eigen::VectorXd::Zero(obs.n_alternatives());
  for (int k = 0; k < p.n_experts(); ++k) probs += g[k] * mnl_probs(obs, p.experts[k]);
  return probs;
}

ChoiceProbabilities choice_probs(const ChoiceObservation& obs, const ModelParams& p) {
  return std::visit(
      [&](const auto& q) -> ChoiceProbabilities {
        using T = std::decay_t<decltype(q)>;
        if constexpr (std::is_same_v<T, MnlParams>) return mnl_probs(obs, q);
        else if constexpr (std::is_same_v<T, MxlParams>) return mxl_probs(obs, q);
        else if constexpr (std::is_same_v<T, LcmParams>) return lcm_probs(obs, q);
        else return moe_probs(obs, q);
      },
      p);
}

Eigen::MatrixXd mxl_draws(std::uint64_t seed, int n_draws, int d_x) {
  require(n_draws >= 1 && d_x >= 1, "mxl_draws: dimensions must be positive");
  // Fixed substream index reserved for simulation draws; rows are draws.
  Rng rng = Rng::substream(seed, 0x6d786c);
  Eigen::MatrixXd eta(n_draws, d_x);
  for (int r = 0; r < n_draws; ++r)
    for (int a = 0; a < d_x; ++a) eta(r, a) = rng.normal();
  return eta;
}

Eigen::MatrixXd gate_weight_matrix(const ChoiceDataset& ds, const MoeParams& p) {
  const int N = ds.n_obs();
  const int K = p.n_experts();
  require(p.gate.rows() == K - 1, "gate_weight_matrix: gate must have K-1 rows");
  Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(N, K);
  if (K > 1) {
    require(p.gate.cols() == ds.n_covariates() + 1,
            "gate_weight_matrix: gate covariate count does not match dataset");
    Eigen::MatrixXd zt(N, ds.n_covariates() + 1);
    zt.col(0).setOnes();
    zt.rightCols(ds.n_covariates()) = ds.covariates;
    logits.leftCols(K - 1) = zt * p.gate.transpose();
  }
  math::softmax_rows_inplace(logits);
  return logits;
}

Eigen::MatrixXd choice_prob_matrix(const ChoiceDataset& ds, const ModelParams& params) {
  check_compatible(ds, params);
  const int N = ds.n_obs();
  const int J = ds.n_alts;
  return std::visit(
      [&](const auto& p) -> Eigen::MatrixXd {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, MnlParams>) {
          Eigen::MatrixXd v = batch_utilities(ds, p.beta, p.asc);
          math::softmax_rows_inplace(v);
          return v;
        } else if constexpr (std::is_same_v<T, MxlParams>) {
          const Eigen::MatrixXd eta = mxl_draws(p.draw_seed, p.n_draws, ds.n_alt_attrs());
          Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(N, J);
          for (int r = 0; r < p.n_draws; ++r) {
            Eigen::MatrixXd v = batch_utilities(ds, mxl_coef(p, eta.row(r)), p.asc);
            math::softmax_rows_inplace(v);
            probs += v;
          }
          return probs / static_cast<double>(p.n_draws);
        } else if constexpr (std::is_same_v<T, LcmParams>) {
          Eigen::VectorXd logits(p.n_classes());
          logits << p.class_logits, 0.0;
          const Eigen::VectorXd w = math::softmax(logits);
          Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(N, J);
          for (int k = 0; k < p.n_classes(); ++k) {
            Eigen::MatrixXd v = batch_utilities(ds, p.classes[k].beta, p.classes[k].asc);
            math::softmax_rows_inplace(v);
            probs += w[k] * v;
          }
          return probs;
        } else {
          const Eigen::MatrixXd g = gate_weight_matrix(ds, p);
          Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(N, J);
          for (int k = 0; k < p.n_experts(); ++k) {
            Eigen::MatrixXd v = batch_utilities(ds, p.experts[k].beta, p.experts[k].asc);
            math::softmax_rows_inplace(v);
            probs.array() += g.col(k).replicate(1, J).array() * v.array();
          }
          return probs;
        }
      },
      params);
}

int n_parameters(const ModelParams& params) {
  return std::visit(
      [](const auto& p) -> int {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, MnlParams>) {
          return static_cast<int>(p.beta.size() + p.asc.size());
        } else if constexpr (std::is_same_v<T, MxlParams>) {
          return static_cast<int>(p.mean.size() + p.log_std.size() + p.asc.size());
        } else if constexpr (std::is_same_v<T, LcmParams>) {
          int total = static_cast<int>(p.class_logits.size());
          for (const auto& c : p.classes) total += static_cast<int>(c.beta.size() + c.asc.size());
          return total;
        } else {
          int total = static_cast<int>(p.gate.size());
          for (const auto& e : p.experts) total += static_cast<int>(e.beta.size() + e.asc.size());
          return total;
        }
      },
      params);
}

std::string family_name(const ModelParams& params) {
  return std::visit(
      [](const auto& p) -> std::string {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, MnlParams>) return "mnl";
        else if constexpr (std::is_same_v<T, MxlParams>) return "mxl";
        else if constexpr (std::is_same_v<T, LcmParams>) return "lcm";
        else return "moe";
      },
      params);
}

void check_compatible(const ChoiceDataset& ds, const ModelParams& params) {
  const int J = ds.n_alts;
  const int d_x = ds.n_alt_attrs();
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, MnlParams>) {
          check_mnl_shapes(p, J, d_x, "check_compatible");
        } else if constexpr (std::is_same_v<T, MxlParams>) {
          require(p.mean.size() == d_x && p.log_std.size() == d_x && p.asc.size() == J - 1,
                  "check_compatible: mixed-logit shape mismatch");
          require(p.lognormal_price < d_x, "check_compatible: lognormal_price out of range");
        } else if constexpr (std::is_same_v<T, LcmParams>) {
          require(p.n_classes() >= 1 && p.class_logits.size() == p.n_classes() - 1,
                  "check_compatible: class_logits must have length K-1");
          for (const auto& c : p.classes) check_mnl_shapes(c, J, d_x, "check_compatible");
        } else {
          require(p.n_experts() >= 1 && p.gate.rows() == p.n_experts() - 1,
                  "check_compatible: gate must have K-1 rows");
          if (p.n_experts() > 1)
            require(p.gate.cols() == ds.n_covariates() + 1,
                    "check_compatible: gate covariate count does not match dataset");
          for (const auto& e : p.experts) check_mnl_shapes(e, J, d_x, "check_compatible");
        }
      },
      params);
}

}  // namespace choicekit
