#include "choicekit/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "choicekit/math.hpp"
#include "choicekit/rng.hpp"

namespace choicekit {

namespace {

constexpr double kSeparationNorm = 1e3;   // |theta|_inf beyond this (standardized) => separation
constexpr double kStarvedFraction = 1e-6; // expert responsibility mass below this * N => frozen

// Flattened, optionally standardized view of a dataset.  Standardization is
// an internal conditioning device: coefficients are mapped back to raw scale
// on exit and probabilities/log-likelihoods are unchanged by construction
// (within-row contrasts are preserved exactly).
struct Design {
  int N = 0, J = 0, A = 0, C = 0;
  Eigen::MatrixXd x;    // N x (A*J), attribute-major like ChoiceDataset
  Eigen::MatrixXd zt;   // N x (C+1), leading column of ones
  std::vector<int> chosen;
  Eigen::VectorXd x_scale;          // per-attribute divisor (1 when raw)
  Eigen::VectorXd z_mean, z_scale;  // per-covariate shift/divisor

  int col(int a, int j) const { return a * J + j; }
  int n_expert_params() const { return A + J - 1; }
};

Design build_design(const ChoiceDataset& ds, bool standardize) {
  ds.validate_for_fit();
  Design d;
  d.N = ds.n_obs();
  d.J = ds.n_alts;
  d.A = ds.n_alt_attrs();
  d.C = ds.n_covariates();
  d.chosen = ds.chosen;
  d.x = ds.alt_features;
  d.x_scale = Eigen::VectorXd::Ones(d.A);
  d.z_mean = Eigen::VectorXd::Zero(d.C);
  d.z_scale = Eigen::VectorXd::Ones(d.C);

  Eigen::MatrixXd z = ds.covariates;
  if (standardize) {
    const double cells = static_cast<double>(d.N) * d.J;
    for (int a = 0; a < d.A; ++a) {
      auto block = d.x.middleCols(static_cast<Eigen::Index>(a) * d.J, d.J);
      const double mean = block.sum() / cells;
      const double sd = std::sqrt((block.array() - mean).square().sum() / cells);
      if (sd > 0.0) {
        block = (block.array() - mean) / sd;
        d.x_scale[a] = sd;
      }
    }
    for (int c = 0; c < d.C; ++c) {
      const double mean = z.col(c).mean();
      const double sd = std::sqrt((z.col(c).array() - mean).square().sum() / d.N);
      if (sd > 0.0) {
        z.col(c) = (z.col(c).array() - mean) / sd;
        d.z_mean[c] = mean;
        d.z_scale[c] = sd;
      }
    }
  }
  d.zt.resize(d.N, d.C + 1);
  d.zt.col(0).setOnes();
  if (d.C > 0) d.zt.rightCols(d.C) = z;
  return d;
}

// The expert design is identified only through within-row contrasts, so the
// rank check runs on differences against the last alternative plus the
// alternative dummies that carry the ASCs.
void check_expert_rank(const Design& d) {
  const int p = d.A + d.J - 1;
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
  for (int j = 0; j < d.J - 1; ++j) {
    Eigen::MatrixXd diff(d.N, d.A);
    for (int a = 0; a < d.A; ++a)
      diff.col(a) = d.x.col(d.col(a, j)) - d.x.col(d.col(a, d.J - 1));
    gram.topLeftCorner(d.A, d.A) += diff.transpose() * diff;
    gram.block(0, d.A + j, d.A, 1) += diff.colwise().sum().transpose();
    gram.block(d.A + j, 0, 1, d.A) += diff.colwise().sum();
    gram(d.A + j, d.A + j) += static_cast<double>(d.N);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const double mx = eig.eigenvalues().maxCoeff();
  if (eig.eigenvalues().minCoeff() <= 1e-10 * std::max(1.0, mx))
    fail("fit: collinear or constant alternative-feature design; "
         "remove redundant attributes (an attribute identical across all "
         "alternatives cannot be identified)");
}

void check_gate_rank(const Design& d) {
  const Eigen::MatrixXd gram = d.zt.transpose() * d.zt;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const double mx = eig.eigenvalues().maxCoeff();
  if (eig.eigenvalues().minCoeff() <= 1e-10 * std::max(1.0, mx))
    fail("fit: collinear gate covariates (including the intercept); "
         "remove constant or linearly dependent covariate columns");
}

// ---- raw <-> standardized coefficient maps -------------------------------

Eigen::VectorXd expert_to_std(const MnlParams& p, const Design& d) {
  Eigen::VectorXd theta(d.n_expert_params());
  theta.head(d.A) = p.beta.cwiseProduct(d.x_scale);
  theta.tail(d.J - 1) = p.asc;
  return theta;
}

MnlParams expert_to_raw(const Eigen::VectorXd& theta, const Design& d) {
  MnlParams p;
  p.beta = theta.head(d.A).cwiseQuotient(d.x_scale);
  p.asc = theta.tail(d.J - 1);
  return p;
}

Eigen::MatrixXd gate_to_std(const Eigen::MatrixXd& gate, const Design& d) {
  Eigen::MatrixXd g = gate;
  for (Eigen::Index k = 0; k < g.rows(); ++k) {
    for (int c = 0; c < d.C; ++c) {
      g(k, 0) += gate(k, c + 1) * d.z_mean[c];
      g(k, c + 1) = gate(k, c + 1) * d.z_scale[c];
    }
  }
  return g;
}

Eigen::MatrixXd gate_to_raw(const Eigen::MatrixXd& gate_std, const Design& d) {
  Eigen::MatrixXd g = gate_std;
  for (Eigen::Index k = 0; k < g.rows(); ++k) {
    for (int c = 0; c < d.C; ++c) {
      g(k, c + 1) = gate_std(k, c + 1) / d.z_scale[c];
      g(k, 0) -= g(k, c + 1) * d.z_mean[c];
    }
  }
  return g;
}

// ---- batch likelihood pieces ---------------------------------------------

// Utility matrix V(n,j) for one packed expert [beta; asc].
Eigen::MatrixXd expert_utilities(const Design& d, const Eigen::VectorXd& theta) {
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(d.N, d.J);
  for (int a = 0; a < d.A; ++a)
    for (int j = 0; j < d.J; ++j) v.col(j) += theta[a] * d.x.col(d.col(a, j));
  for (int j = 0; j < d.J - 1; ++j) v.col(j).array() += theta[d.A + j];
  return v;
}

void log_softmax_rows_inplace(Eigen::MatrixXd& v) {
  for (Eigen::Index n = 0; n < v.rows(); ++n) {
    const double mx = v.row(n).maxCoeff();
    const double lse = mx + std::log((v.row(n).array() - mx).exp().sum());
    v.row(n).array() -= lse;
  }
}

double weighted_pairwise(const Eigen::VectorXd& terms) {
  return math::pairwise_sum(std::span<const double>(terms.data(), terms.size()));
}

// Weighted MNL log-likelihood sum_n w_n log P_n(chosen) and its gradient
// with respect to the packed parameters.
double wmnl_value_grad(const Design& d, const Eigen::VectorXd& w, const Eigen::VectorXd& theta,
                       Eigen::VectorXd* grad) {
  Eigen::MatrixXd lp = expert_utilities(d, theta);
  log_softmax_rows_inplace(lp);
  Eigen::VectorXd terms(d.N);
  for (int n = 0; n < d.N; ++n) terms[n] = w[n] * lp(n, d.chosen[n]);
  const double value = weighted_pairwise(terms);
  if (grad) {
    Eigen::MatrixXd resid = -lp.array().exp();  // -P
    for (int n = 0; n < d.N; ++n) resid(n, d.chosen[n]) += 1.0;
    resid.array().colwise() *= w.array();
    grad->resize(theta.size());
    for (int a = 0; a < d.A; ++a) {
      double g = 0.0;
      for (int j = 0; j < d.J; ++j) g += resid.col(j).dot(d.x.col(d.col(a, j)));
      (*grad)[a] = g;
    }
    for (int j = 0; j < d.J - 1; ++j) (*grad)[d.A + j] = resid.col(j).sum();
  }
  return value;
}

// Gate log-weights (N x K) for gate rows Gamma ((K-1) x q) against the
// leading q columns of zt; the last expert's logit is normalized to zero.
Eigen::MatrixXd gate_log_weights(const Design& d, const Eigen::MatrixXd& gamma, int q) {
  const int K = static_cast<int>(gamma.rows()) + 1;
  Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(d.N, K);
  if (K > 1) logits.leftCols(K - 1) = d.zt.leftCols(q) * gamma.transpose();
  log_softmax_rows_inplace(logits);
  return logits;
}

// Weighted multinomial-logistic objective for the gate:
// sum_n sum_k resp(n,k) log g_k(z_n), gradient over row-major packed gamma.
double gate_value_grad(const Design& d, const Eigen::MatrixXd& resp, int q,
                       const Eigen::VectorXd& packed, Eigen::VectorXd* grad) {
  const int K = static_cast<int>(resp.cols());
  Eigen::MatrixXd gamma(K - 1, q);
  for (int k = 0; k < K - 1; ++k) gamma.row(k) = packed.segment(k * q, q).transpose();
  Eigen::MatrixXd lg = gate_log_weights(d, gamma, q);
  Eigen::VectorXd terms(d.N);
  for (int n = 0; n < d.N; ++n) terms[n] = resp.row(n).dot(lg.row(n));
  const double value = weighted_pairwise(terms);
  if (grad) {
    const Eigen::MatrixXd diff = resp - lg.array().exp().matrix();
    grad->resize((K - 1) * q);
    for (int k = 0; k < K - 1; ++k)
      grad->segment(k * q, q) = d.zt.leftCols(q).transpose() * diff.col(k);
  }
  return value;
}

// ---- generic backtracking line-search ascent ------------------------------

struct OptOut {
  Eigen::VectorXd theta;
  double value = 0.0;
  int iters = 0;
  bool converged = false;
  std::vector<double> trace;
};

// Maximizes f by steepest ascent with Armijo backtracking.  Monotone: every
// accepted step improves the objective, so the trace is non-decreasing.
template <class F>
OptOut maximize(F&& f, Eigen::VectorXd theta, int max_iters, double grad_tol, double alpha0,
                bool want_trace) {
  OptOut out;
  Eigen::VectorXd g;
  double v = f(theta, &g);
  if (want_trace) out.trace.push_back(v);
  double alpha = alpha0;
  for (int it = 0; it < max_iters; ++it) {
    if (g.lpNorm<Eigen::Infinity>() <= grad_tol) {
      out.converged = true;
      break;
    }
    const double sq = g.squaredNorm();
    double step = alpha * 2.0;  // try growing first; backtrack from there
    bool accepted = false;
    for (int h = 0; h < 60; ++h) {
      const Eigen::VectorXd cand = theta + step * g;
      Eigen::VectorXd gcand;
      const double vcand = f(cand, &gcand);
      if (std::isfinite(vcand) && vcand >= v + 1e-4 * step * sq) {
        theta = cand;
        v = vcand;
        g = std::move(gcand);
        alpha = step;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    ++out.iters;
    if (!accepted) {
      // No representable step improves the objective: we are at the optimum
      // to machine precision.
      out.converged = true;
      break;
    }
    if (want_trace) out.trace.push_back(v);
  }
  if (g.lpNorm<Eigen::Infinity>() <= grad_tol) out.converged = true;
  out.theta = std::move(theta);
  out.value = v;
  return out;
}

// ---- mixture machinery shared by MoE and LCM ------------------------------

struct MixtureState {
  std::vector<Eigen::VectorXd> experts;  // packed, standardized space
  Eigen::MatrixXd gate;                  // (K-1) x q, standardized space
};

// Responsibilities and the observed-data mixture log-likelihood in one pass.
double mixture_eval(const Design& d, const MixtureState& s, int q, Eigen::MatrixXd* resp) {
  const int K = static_cast<int>(s.experts.size());
  Eigen::MatrixXd m = gate_log_weights(d, s.gate, q);  // starts as log gate
  for (int k = 0; k < K; ++k) {
    Eigen::MatrixXd lp = expert_utilities(d, s.experts[k]);
    log_softmax_rows_inplace(lp);
    for (int n = 0; n < d.N; ++n) m(n, k) += lp(n, d.chosen[n]);
  }
  Eigen::VectorXd row_lse(d.N);
  for (int n = 0; n < d.N; ++n) row_lse[n] = math::log_sum_exp(m.row(n).transpose());
  if (resp) *resp = (m.colwise() - row_lse).array().exp();
  return weighted_pairwise(row_lse);
}

// One generalized M-step; freezes starved experts, caps inner iterations.
void m_step_impl(const Design& d, const Eigen::MatrixXd& resp, int q, const InnerOptConfig& inner,
                 MixtureState& s, std::vector<std::string>* warnings) {
  const int K = static_cast<int>(s.experts.size());
  for (int k = 0; k < K; ++k) {
    const Eigen::VectorXd w = resp.col(k);
    const double mass = w.sum();
    if (mass < kStarvedFraction * d.N) {
      if (warnings)
        warnings->push_back("expert " + std::to_string(k) +
                            " starved (responsibility mass " + std::to_string(mass) +
                            "); parameters frozen for this step");
      continue;
    }
    auto f = [&](const Eigen::VectorXd& th, Eigen::VectorXd* grad) {
      return wmnl_value_grad(d, w, th, grad);
    };
    OptOut o = maximize(f, s.experts[k], inner.max_iters, inner.grad_tol * std::max(1.0, mass),
                        1.0 / std::max(1.0, mass), false);
    s.experts[k] = std::move(o.theta);
  }
  if (K > 1) {
    if (q == 1) {
      // Intercept-only gate (latent classes): the weighted fit has the exact
      // closed form logit_k = log(wbar_k / wbar_K).
      Eigen::VectorXd wbar = resp.colwise().mean().transpose().cwiseMax(1e-12);
      for (int k = 0; k < K - 1; ++k) s.gate(k, 0) = std::log(wbar[k]) - std::log(wbar[K - 1]);
    } else {
      Eigen::VectorXd packed((K - 1) * q);
      for (int k = 0; k < K - 1; ++k) packed.segment(k * q, q) = s.gate.row(k).transpose();
      auto f = [&](const Eigen::VectorXd& th, Eigen::VectorXd* grad) {
        return gate_value_grad(d, resp, q, th, grad);
      };
      OptOut o = maximize(f, packed, inner.max_iters, inner.grad_tol * d.N,
                          1.0 / std::max(1.0, static_cast<double>(d.N)), false);
      for (int k = 0; k < K - 1; ++k) s.gate.row(k) = o.theta.segment(k * q, q).transpose();
    }
  }
}

struct EmRun {
  MixtureState state;
  std::vector<double> trace;
  int iterations = 0;
  bool converged = false;
  std::vector<std::string> warnings;
};

EmRun run_em(const Design& d, MixtureState init, int q, const FitConfig& cfg) {
  EmRun run;
  run.state = std::move(init);
  Eigen::MatrixXd resp;
  double ll = mixture_eval(d, run.state, q, &resp);
  run.trace.push_back(ll);
  for (int t = 0; t < cfg.max_em_iters; ++t) {
    m_step_impl(d, resp, q, cfg.inner, run.state, &run.warnings);
    const double next = mixture_eval(d, run.state, q, &resp);
    run.trace.push_back(next);
    ++run.iterations;
    // Signed relative improvement; EM makes it non-negative up to rounding.
    const double rel = (next - ll) / std::max(std::abs(ll), 1e-12);
    ll = next;
    if (rel < cfg.rel_ll_tol) {
      run.converged = true;
      break;
    }
  }
  return run;
}

// Canonical expert order: ascending coefficient on the price attribute (or
// attribute 0 when the dataset has no price), with the gate re-referenced so
// the mixture is unchanged.
void canonicalize(std::vector<Eigen::VectorXd>& experts, Eigen::MatrixXd& gate, int price_attr) {
  const int K = static_cast<int>(experts.size());
  if (K <= 1) return;
  std::vector<int> order(K);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return experts[a][price_attr] < experts[b][price_attr];
  });
  const int q = static_cast<int>(gate.cols());
  Eigen::MatrixXd full(K, q);
  full.topRows(K - 1) = gate;
  full.row(K - 1).setZero();
  std::vector<Eigen::VectorXd> new_experts(K);
  Eigen::MatrixXd new_gate(K - 1, q);
  for (int k = 0; k < K; ++k) new_experts[k] = experts[order[k]];
  for (int k = 0; k < K - 1; ++k) new_gate.row(k) = full.row(order[k]) - full.row(order[K - 1]);
  experts = std::move(new_experts);
  gate = std::move(new_gate);
}

MixtureState random_init(const Design& d, int K, int q, Rng& rng) {
  MixtureState s;
  s.experts.resize(K);
  for (int k = 0; k < K; ++k) {
    s.experts[k].resize(d.n_expert_params());
    for (Eigen::Index i = 0; i < s.experts[k].size(); ++i)
      s.experts[k][i] = rng.uniform(-0.1, 0.1);
  }
  s.gate.resize(K - 1, q);
  for (Eigen::Index i = 0; i < s.gate.size(); ++i)
    s.gate.data()[i] = rng.uniform(-0.1, 0.1);
  return s;
}

void append_separation_warning(const MixtureState& s, std::vector<std::string>* warnings) {
  double mx = 0.0;
  for (const auto& e : s.experts) mx = std::max(mx, e.lpNorm<Eigen::Infinity>());
  if (s.gate.size() > 0) mx = std::max(mx, s.gate.lpNorm<Eigen::Infinity>());
  if (mx > kSeparationNorm && warnings)
    warnings->push_back("possible separation: a standardized coefficient exceeded " +
                        std::to_string(kSeparationNorm) +
                        " in magnitude; estimates may be unbounded");
}

// Packed standardized MoE objective for the direct (non-EM) method.
double moe_value_grad_std(const Design& d, int K, int q, const Eigen::VectorXd& theta,
                          Eigen::VectorXd* grad) {
  const int pe = d.n_expert_params();
  MixtureState s;
  s.experts.resize(K);
  for (int k = 0; k < K; ++k) s.experts[k] = theta.segment(k * pe, pe);
  s.gate.resize(K - 1, q);
  for (int k = 0; k < K - 1; ++k)
    s.gate.row(k) = theta.segment(K * pe + k * q, q).transpose();

  const Eigen::MatrixXd lg = gate_log_weights(d, s.gate, q);
  std::vector<Eigen::MatrixXd> lps(K);
  Eigen::MatrixXd m = lg;
  for (int k = 0; k < K; ++k) {
    lps[k] = expert_utilities(d, s.experts[k]);
    log_softmax_rows_inplace(lps[k]);
    for (int n = 0; n < d.N; ++n) m(n, k) += lps[k](n, d.chosen[n]);
  }
  Eigen::VectorXd row_lse(d.N);
  for (int n = 0; n < d.N; ++n) row_lse[n] = math::log_sum_exp(m.row(n).transpose());
  const double value = weighted_pairwise(row_lse);
  if (grad) {
    const Eigen::MatrixXd resp = (m.colwise() - row_lse).array().exp();
    grad->setZero(theta.size());
    for (int k = 0; k < K; ++k) {
      Eigen::MatrixXd resid = -lps[k].array().exp();
      for (int n = 0; n < d.N; ++n) resid(n, d.chosen[n]) += 1.0;
      resid.array().colwise() *= resp.col(k).array();
      for (int a = 0; a < d.A; ++a) {
        double ga = 0.0;
        for (int j = 0; j < d.J; ++j) ga += resid.col(j).dot(d.x.col(d.col(a, j)));
        (*grad)[k * pe + a] = ga;
      }
      for (int j = 0; j < d.J - 1; ++j) (*grad)[k * pe + d.A + j] = resid.col(j).sum();
    }
    const Eigen::MatrixXd diff = resp - lg.array().exp().matrix();
    for (int k = 0; k < K - 1; ++k)
      grad->segment(K * pe + k * q, q) = d.zt.leftCols(q).transpose() * diff.col(k);
  }
  return value;
}

// Shared mixture fit driver.  q = C+1 for a covariate gate (MoE), 1 for
// intercept-only classes (LCM).
EmRun fit_mixture(const ChoiceDataset& ds, const Design& d, int q, const FitConfig& cfg,
                  std::optional<MixtureState> warm) {
  const int K = cfg.k_experts;
  require(K >= 1, "fit: k_experts must be >= 1");
  require(K <= d.N, "fit: more experts than observations");
  check_expert_rank(d);
  if (q > 1 && K > 1) check_gate_rank(d);

  // Base MNL solution: seeds the embedded restart that pins the mixture's
  // log-likelihood at or above the MNL optimum.
  Eigen::VectorXd base_theta;
  if (!warm) {
    auto base_f = [&](const Eigen::VectorXd& th, Eigen::VectorXd* g) {
      return wmnl_value_grad(d, Eigen::VectorXd::Ones(d.N), th, g);
    };
    base_theta = maximize(base_f, Eigen::VectorXd::Zero(d.n_expert_params()), cfg.max_opt_iters,
                          cfg.inner.grad_tol * d.N, 1.0 / std::max(1.0, static_cast<double>(d.N)),
                          false)
                     .theta;
  }

  int restarts = std::max(1, cfg.n_restarts);
  if (warm || K == 1) restarts = 1;

  std::optional<EmRun> best;
  for (int r = 0; r < restarts; ++r) {
    MixtureState init;
    if (warm) {
      init = *warm;
    } else if (r == 0) {
      init.experts.assign(K, base_theta);
      init.gate = Eigen::MatrixXd::Zero(K - 1, q);
    } else {
      Rng rng = Rng::substream(cfg.seed, 100 + static_cast<std::uint64_t>(r));
      init = random_init(d, K, q, rng);
    }
    EmRun run = run_em(d, std::move(init), q, cfg);
    if (!best || run.trace.back() > best->trace.back()) best = std::move(run);
  }
  append_separation_warning(best->state, &best->warnings);
  const int price = ds.attr_index("price") >= 0 ? ds.attr_index("price") : 0;
  canonicalize(best->state.experts, best->state.gate, price);
  return std::move(*best);
}

FitResult finish_fit(ModelParams params, const EmRun& run) {
  FitResult res;
  res.params = std::move(params);
  res.final_ll = run.trace.back();
  res.ll_trace = run.trace;
  res.iterations = run.iterations;
  res.converged = run.converged;
  res.n_params = n_parameters(res.params);
  res.warnings = run.warnings;
  return res;
}

}  // namespace

// ---- public API ------------------------------------------------------------

Eigen::VectorXd pack_mnl(const MnlParams& p) {
  Eigen::VectorXd theta(p.beta.size() + p.asc.size());
  theta << p.beta, p.asc;
  return theta;
}

MnlParams unpack_mnl(const Eigen::VectorXd& theta, int d_x, int n_alts) {
  require(theta.size() == d_x + n_alts - 1, "unpack_mnl: wrong length");
  MnlParams p;
  p.beta = theta.head(d_x);
  p.asc = theta.tail(n_alts - 1);
  return p;
}

Eigen::VectorXd pack_moe(const MoeParams& p) {
  const int K = p.n_experts();
  const int pe = static_cast<int>(p.experts[0].beta.size() + p.experts[0].asc.size());
  const int q = static_cast<int>(p.gate.cols());
  Eigen::VectorXd theta(K * pe + (K - 1) * q);
  for (int k = 0; k < K; ++k) theta.segment(k * pe, pe) = pack_mnl(p.experts[k]);
  for (int k = 0; k < K - 1; ++k)
    theta.segment(K * pe + k * q, q) = p.gate.row(k).transpose();
  return theta;
}

MoeParams unpack_moe(const Eigen::VectorXd& theta, int d_x, int n_alts, int d_z, int k) {
  const int pe = d_x + n_alts - 1;
  const int q = d_z + 1;
  require(theta.size() == k * pe + (k - 1) * q, "unpack_moe: wrong length");
  MoeParams p;
  p.experts.resize(k);
  for (int i = 0; i < k; ++i) p.experts[i] = unpack_mnl(theta.segment(i * pe, pe), d_x, n_alts);
  p.gate.resize(k - 1, q);
  for (int i = 0; i < k - 1; ++i)
    p.gate.row(i) = theta.segment(k * pe + i * q, q).transpose();
  return p;
}

double log_likelihood(const ChoiceDataset& ds, const ModelParams& params) {
  ds.validate_for_fit();
  const Eigen::MatrixXd probs = choice_prob_matrix(ds, params);
  Eigen::VectorXd terms(ds.n_obs());
  for (int n = 0; n < ds.n_obs(); ++n) terms[n] = std::log(probs(n, ds.chosen[n]));
  return weighted_pairwise(terms);
}

std::pair<double, Eigen::VectorXd> mnl_loglik_grad(const ChoiceDataset& ds, const MnlParams& p) {
  check_compatible(ds, ModelParams(p));
  const Design d = build_design(ds, false);
  Eigen::VectorXd grad;
  const double ll = wmnl_value_grad(d, Eigen::VectorXd::Ones(d.N), pack_mnl(p), &grad);
  return {ll, grad};
}

std::pair<double, Eigen::VectorXd> moe_loglik_grad(const ChoiceDataset& ds, const MoeParams& p) {
  check_compatible(ds, ModelParams(p));
  const Design d = build_design(ds, false);
  Eigen::VectorXd grad;
  const double ll =
      moe_value_grad_std(d, p.n_experts(), d.C + 1, pack_moe(p), &grad);
  return {ll, grad};
}

PosteriorMatrix e_step(const ChoiceDataset& ds, const MoeParams& params) {
  check_compatible(ds, ModelParams(params));
  ds.validate_for_fit();
  const Design d = build_design(ds, false);
  MixtureState s;
  s.experts.resize(params.n_experts());
  for (int k = 0; k < params.n_experts(); ++k) s.experts[k] = pack_mnl(params.experts[k]);
  s.gate = params.gate;
  Eigen::MatrixXd resp;
  mixture_eval(d, s, d.C + 1, &resp);
  return resp;
}

MoeParams m_step(const ChoiceDataset& ds, const PosteriorMatrix& resp, const MoeParams& params,
                 const FitConfig& cfg) {
  check_compatible(ds, ModelParams(params));
  ds.validate_for_fit();
  const int K = params.n_experts();
  require(resp.rows() == ds.n_obs() && resp.cols() == K,
          "m_step: responsibility matrix must be N x K");
  for (Eigen::Index n = 0; n < resp.rows(); ++n) {
    require(resp.row(n).minCoeff() >= -1e-12, "m_step: negative responsibility");
    require(std::abs(resp.row(n).sum() - 1.0) <= 1e-6,
            "m_step: responsibility row " + std::to_string(n) + " does not sum to 1");
  }
  const Design d = build_design(ds, true);
  MixtureState s;
  s.experts.resize(K);
  for (int k = 0; k < K; ++k) s.experts[k] = expert_to_std(params.experts[k], d);
  s.gate = gate_to_std(params.gate, d);
  m_step_impl(d, resp, d.C + 1, cfg.inner, s, nullptr);
  MoeParams out;
  out.experts.resize(K);
  for (int k = 0; k < K; ++k) out.experts[k] = expert_to_raw(s.experts[k], d);
  out.gate = gate_to_raw(s.gate, d);
  return out;
}

double complete_data_objective(const ChoiceDataset& ds, const PosteriorMatrix& resp,
                               const MoeParams& params) {
  check_compatible(ds, ModelParams(params));
  const Design d = build_design(ds, false);
  const int K = params.n_experts();
  require(resp.rows() == d.N && resp.cols() == K, "complete_data_objective: resp must be N x K");
  Eigen::MatrixXd m = gate_log_weights(d, params.gate, d.C + 1);
  for (int k = 0; k < K; ++k) {
    Eigen::MatrixXd lp = expert_utilities(d, pack_mnl(params.experts[k]));
    log_softmax_rows_inplace(lp);
    for (int n = 0; n < d.N; ++n) m(n, k) += lp(n, d.chosen[n]);
  }
  Eigen::VectorXd terms(d.N);
  for (int n = 0; n < d.N; ++n) terms[n] = resp.row(n).dot(m.row(n));
  return weighted_pairwise(terms);
}

FitResult fit_mnl(const ChoiceDataset& ds, const FitConfig& cfg) {
  const Design d = build_design(ds, true);
  check_expert_rank(d);
  auto f = [&](const Eigen::VectorXd& th, Eigen::VectorXd* g) {
    return wmnl_value_grad(d, Eigen::VectorXd::Ones(d.N), th, g);
  };
  OptOut o = maximize(f, Eigen::VectorXd::Zero(d.n_expert_params()), cfg.max_opt_iters,
                      cfg.inner.grad_tol * d.N, 1.0 / std::max(1.0, static_cast<double>(d.N)),
                      true);
  FitResult res;
  res.params = ModelParams(expert_to_raw(o.theta, d));
  res.final_ll = o.trace.back();
  res.ll_trace = std::move(o.trace);
  res.iterations = o.iters;
  res.converged = o.converged;
  res.n_params = n_parameters(res.params);
  if (o.theta.lpNorm<Eigen::Infinity>() > kSeparationNorm)
    res.warnings.push_back("possible separation: a standardized coefficient exceeded " +
                           std::to_string(kSeparationNorm) + " in magnitude");
  if (!res.converged)
    res.warnings.push_back("maximum iterations reached before the gradient tolerance");
  return res;
}

FitResult fit_mxl(const ChoiceDataset& ds, const FitConfig& cfg) {
  const Design d = build_design(ds, true);
  check_expert_rank(d);
  require(cfg.mxl_draws >= 1, "fit_mxl: mxl_draws must be >= 1");
  require(cfg.mxl_init_std > 0.0, "fit_mxl: mxl_init_std must be positive");
  require(cfg.mxl_lognormal_price < d.A, "fit_mxl: lognormal price index out of range");
  const int A = d.A;
  const int R = cfg.mxl_draws;
  const Eigen::MatrixXd eta = mxl_draws(cfg.seed, R, A);
  const bool frozen = cfg.mxl_freeze_std;
  const Eigen::VectorXd frozen_log_std =
      Eigen::VectorXd::Constant(A, std::log(cfg.mxl_init_std));
  const int lnp = cfg.mxl_lognormal_price;

  // theta = [mean; log_std; asc] (log_std omitted when frozen).
  const int n_theta = frozen ? A + d.J - 1 : 2 * A + d.J - 1;
  auto split = [&](const Eigen::VectorXd& th) {
    struct Parts {
      Eigen::VectorXd mean, log_std, asc;
    } p;
    p.mean = th.head(A);
    p.log_std = frozen ? frozen_log_std : th.segment(A, A);
    p.asc = th.tail(d.J - 1);
    return p;
  };

  auto f = [&](const Eigen::VectorXd& th, Eigen::VectorXd* grad) {
    const auto parts = split(th);
    const Eigen::VectorXd sd = parts.log_std.array().exp();
    // Pass 1: chosen log-prob per draw, mixed by log-sum-exp over draws.
    Eigen::MatrixXd clp(d.N, R);
    for (int r = 0; r < R; ++r) {
      Eigen::VectorXd beta = parts.mean + sd.cwiseProduct(eta.row(r).transpose());
      if (lnp >= 0) beta[lnp] = -std::exp(parts.mean[lnp] + sd[lnp] * eta(r, lnp));
      Eigen::VectorXd packed(A + d.J - 1);
      packed << beta, parts.asc;
      Eigen::MatrixXd lp = expert_utilities(d, packed);
      log_softmax_rows_inplace(lp);
      for (int n = 0; n < d.N; ++n) clp(n, r) = lp(n, d.chosen[n]);
    }
    Eigen::VectorXd row_lse(d.N);
    for (int n = 0; n < d.N; ++n) row_lse[n] = math::log_sum_exp(clp.row(n).transpose());
    const double value = weighted_pairwise(row_lse) - d.N * std::log(static_cast<double>(R));
    if (grad) {
      const Eigen::MatrixXd w = (clp.colwise() - row_lse).array().exp();
      grad->setZero(n_theta);
      Eigen::VectorXd gmean = Eigen::VectorXd::Zero(A);
      Eigen::VectorXd glogsd = Eigen::VectorXd::Zero(A);
      Eigen::VectorXd gasc = Eigen::VectorXd::Zero(d.J - 1);
      for (int r = 0; r < R; ++r) {
        Eigen::VectorXd beta = parts.mean + sd.cwiseProduct(eta.row(r).transpose());
        if (lnp >= 0) beta[lnp] = -std::exp(parts.mean[lnp] + sd[lnp] * eta(r, lnp));
        Eigen::VectorXd packed(A + d.J - 1);
        packed << beta, parts.asc;
        Eigen::MatrixXd lp = expert_utilities(d, packed);
        log_softmax_rows_inplace(lp);
        Eigen::MatrixXd resid = -lp.array().exp();
        for (int n = 0; n < d.N; ++n) resid(n, d.chosen[n]) += 1.0;
        resid.array().colwise() *= w.col(r).array();
        Eigen::VectorXd gbeta(A);
        for (int a = 0; a < A; ++a) {
          double ga = 0.0;
          for (int j = 0; j < d.J; ++j) ga += resid.col(j).dot(d.x.col(d.col(a, j)));
          gbeta[a] = ga;
        }
        for (int a = 0; a < A; ++a) {
          const bool is_ln = a == lnp;
          const double chain_mean = is_ln ? beta[a] : 1.0;
          gmean[a] += gbeta[a] * chain_mean;
          glogsd[a] += gbeta[a] * chain_mean * sd[a] * eta(r, a);
        }
        for (int j = 0; j < d.J - 1; ++j) gasc[j] += resid.col(j).sum();
      }
      grad->head(A) = gmean;
      if (!frozen) grad->segment(A, A) = glogsd;
      grad->tail(d.J - 1) = gasc;
    }
    return value;
  };

  Eigen::VectorXd theta0 = Eigen::VectorXd::Zero(n_theta);
  if (!frozen) theta0.segment(A, A).setConstant(std::log(cfg.mxl_init_std));
  OptOut o = maximize(f, theta0, cfg.max_opt_iters, cfg.inner.grad_tol * d.N,
                      1.0 / std::max(1.0, static_cast<double>(d.N)), true);

  const auto parts = split(o.theta);
  MxlParams p;
  p.mean = parts.mean.cwiseQuotient(d.x_scale);
  p.log_std = (parts.log_std.array() - d.x_scale.array().log()).matrix();
  if (lnp >= 0) {
    p.mean[lnp] = parts.mean[lnp] - std::log(d.x_scale[lnp]);
    p.log_std[lnp] = parts.log_std[lnp];
  }
  p.asc = parts.asc;
  p.n_draws = R;
  p.draw_seed = cfg.seed;
  p.lognormal_price = lnp;

  FitResult res;
  res.params = ModelParams(p);
  res.final_ll = o.trace.back();
  res.ll_trace = std::move(o.trace);
  res.iterations = o.iters;
  res.converged = o.converged;
  res.n_params = n_parameters(res.params);
  if (frozen) res.n_params -= A;  // pinned spreads are not free parameters
  if (o.theta.lpNorm<Eigen::Infinity>() > kSeparationNorm)
    res.warnings.push_back("possible separation: a standardized coefficient exceeded " +
                           std::to_string(kSeparationNorm) + " in magnitude");
  if (!res.converged)
    res.warnings.push_back("maximum iterations reached before the gradient tolerance");
  return res;
}

FitResult fit_moe(const ChoiceDataset& ds, const FitConfig& cfg) {
  const Design d = build_design(ds, true);
  const int K = cfg.k_experts;
  std::optional<MixtureState> warm;
  if (cfg.moe_init) {
    check_compatible(ds, ModelParams(*cfg.moe_init));
    require(cfg.moe_init->n_experts() == K, "fit_moe: moe_init expert count != k_experts");
    MixtureState s;
    s.experts.resize(K);
    for (int k = 0; k < K; ++k) s.experts[k] = expert_to_std(cfg.moe_init->experts[k], d);
    s.gate = gate_to_std(cfg.moe_init->gate, d);
    warm = std::move(s);
  }

  if (cfg.moe_method == FitConfig::MoeMethod::Direct) {
    check_expert_rank(d);
    if (K > 1) check_gate_rank(d);
    const int q = d.C + 1;
    const int pe = d.n_expert_params();
    const int n_theta = K * pe + (K - 1) * q;
    auto f = [&](const Eigen::VectorXd& th, Eigen::VectorXd* g) {
      return moe_value_grad_std(d, K, q, th, g);
    };
    auto base_f = [&](const Eigen::VectorXd& th, Eigen::VectorXd* g) {
      return wmnl_value_grad(d, Eigen::VectorXd::Ones(d.N), th, g);
    };
    const OptOut base = maximize(base_f, Eigen::VectorXd::Zero(pe), cfg.max_opt_iters,
                                 cfg.inner.grad_tol * d.N,
                                 1.0 / std::max(1.0, static_cast<double>(d.N)), false);
    std::optional<OptOut> best;
    const int restarts = warm ? 1 : std::max(1, cfg.n_restarts);
    for (int r = 0; r < restarts; ++r) {
      Eigen::VectorXd theta0(n_theta);
      if (warm) {
        for (int k = 0; k < K; ++k) theta0.segment(k * pe, pe) = warm->experts[k];
        for (int k = 0; k < K - 1; ++k)
          theta0.segment(K * pe + k * q, q) = warm->gate.row(k).transpose();
      } else {
        Rng rng = Rng::substream(cfg.seed, 500 + static_cast<std::uint64_t>(r));
        if (r == 0) {
          // Symmetric inits are saddle points of the joint objective, so the
          // embedded-MNL start gets a small symmetry-breaking perturbation.
          for (int k = 0; k < K; ++k)
            theta0.segment(k * pe, pe) = base.theta;
          theta0.tail((K - 1) * q).setZero();
          for (Eigen::Index i = 0; i < n_theta; ++i) theta0[i] += rng.uniform(-0.01, 0.01);
        } else {
          for (Eigen::Index i = 0; i < n_theta; ++i) theta0[i] = rng.uniform(-0.1, 0.1);
        }
      }
      OptOut o = maximize(f, theta0, cfg.max_opt_iters, cfg.inner.grad_tol * d.N,
                          1.0 / std::max(1.0, static_cast<double>(d.N)), true);
      if (!best || o.value > best->value) best = std::move(o);
    }
    MixtureState s;
    s.experts.resize(K);
    for (int k = 0; k < K; ++k) s.experts[k] = best->theta.segment(k * pe, pe);
    s.gate.resize(K - 1, q);
    for (int k = 0; k < K - 1; ++k)
      s.gate.row(k) = best->theta.segment(K * pe + k * q, q).transpose();
    const int price = ds.attr_index("price") >= 0 ? ds.attr_index("price") : 0;
    canonicalize(s.experts, s.gate, price);
    MoeParams p;
    p.experts.resize(K);
    for (int k = 0; k < K; ++k) p.experts[k] = expert_to_raw(s.experts[k], d);
    p.gate = gate_to_raw(s.gate, d);
    FitResult res;
    res.params = ModelParams(std::move(p));
    res.final_ll = best->trace.back();
    res.ll_trace = std::move(best->trace);
    res.iterations = best->iters;
    res.converged = best->converged;
    res.n_params = n_parameters(res.params);
    return res;
  }

  EmRun run = fit_mixture(ds, d, d.C + 1, cfg, std::move(warm));
  MoeParams p;
  p.experts.resize(K);
  for (int k = 0; k < K; ++k) p.experts[k] = expert_to_raw(run.state.experts[k], d);
  p.gate = gate_to_raw(run.state.gate, d);
  return finish_fit(ModelParams(std::move(p)), run);
}

FitResult fit_lcm(const ChoiceDataset& ds, const FitConfig& cfg) {
  const Design d = build_design(ds, true);
  std::optional<MixtureState> warm;  // latent classes take no warm start
  EmRun run = fit_mixture(ds, d, 1, cfg, std::move(warm));
  LcmParams p;
  const int K = cfg.k_experts;
  p.classes.resize(K);
  for (int k = 0; k < K; ++k) p.classes[k] = expert_to_raw(run.state.experts[k], d);
  p.class_logits = run.state.gate.col(0);
  return finish_fit(ModelParams(std::move(p)), run);
}

std::vector<int> stratified_fold_ids(const ChoiceDataset& ds, int n_folds, std::uint64_t seed) {
  require(n_folds >= 2, "stratified_fold_ids: need at least 2 folds");
  require(ds.n_obs() >= n_folds, "stratified_fold_ids: fewer observations than folds");
  std::vector<int> fold(ds.n_obs(), 0);
  for (int cls = 0; cls < ds.n_alts; ++cls) {
    std::vector<int> rows;
    for (int n = 0; n < ds.n_obs(); ++n)
      if (ds.chosen[n] == cls) rows.push_back(n);
    Rng rng = Rng::substream(seed, 9000 + static_cast<std::uint64_t>(cls));
    rng.shuffle(rows);
    for (std::size_t i = 0; i < rows.size(); ++i) fold[rows[i]] = static_cast<int>(i % n_folds);
  }
  return fold;
}

CvSelection select_k_by_cv(const ChoiceDataset& ds, const std::vector<int>& k_candidates,
                           int n_folds, const FitConfig& cfg) {
  require(!k_candidates.empty(), "select_k_by_cv: no candidates");
  std::vector<int> candidates = k_candidates;
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  const std::vector<int> fold = stratified_fold_ids(ds, n_folds, cfg.seed);

  CvSelection sel;
  double best = -std::numeric_limits<double>::infinity();
  for (const int k : candidates) {
    require(k >= 1, "select_k_by_cv: candidate K must be >= 1");
    CvSelection::Row row;
    row.k = k;
    for (int f = 0; f < n_folds; ++f) {
      std::vector<int> train, held;
      for (int n = 0; n < ds.n_obs(); ++n) (fold[n] == f ? held : train).push_back(n);
      FitConfig fold_cfg = cfg;
      fold_cfg.k_experts = k;
      const FitResult fit = fit_moe(ds.subset(train), fold_cfg);
      const ChoiceDataset held_ds = ds.subset(held);
      row.fold_ll.push_back(log_likelihood(held_ds, fit.params) / held_ds.n_obs());
    }
    row.mean_heldout_ll =
        math::pairwise_sum(std::span<const double>(row.fold_ll.data(), row.fold_ll.size())) /
        static_cast<double>(n_folds);
    // Candidates ascend, so a strict improvement requirement breaks ties
    // toward the smaller K.
    if (row.mean_heldout_ll > best) {
      best = row.mean_heldout_ll;
      sel.chosen_k = k;
    }
    sel.table.push_back(std::move(row));
  }
  return sel;
}

}  // namespace choicekit
