#include "choicekit/analysis.hpp"

#include <bit>
#include <cmath>

#include "choicekit/math.hpp"

namespace choicekit {

namespace {

constexpr double kFdRelStep = 1e-4;

void check_alt(const ChoiceObservation& obs, int alt, const char* who) {
  require(alt >= 0 && alt < obs.n_alternatives(),
          std::string(who) + ": alternative index out of range");
}

void check_price(const ChoiceObservation& obs, int price_attr, const char* who) {
  require(price_attr >= 0 && price_attr < obs.n_alt_attrs(),
          std::string(who) + ": price attribute index out of range");
  for (int j = 0; j < obs.n_alternatives(); ++j)
    require(obs.alt_features(j, price_attr) > 0.0,
            std::string(who) + ": price must be positive for a point elasticity");
}

// d P_i / d p_j computed by a central difference with a relative step.
double fd_derivative(const ChoiceObservation& obs, const ModelParams& params, int i, int j,
                     int price_attr) {
  const double p = obs.alt_features(j, price_attr);
  const double h = kFdRelStep * p;
  ChoiceObservation up = obs;
  ChoiceObservation dn = obs;
  up.alt_features(j, price_attr) = p + h;
  dn.alt_features(j, price_attr) = p - h;
  return (choice_probs(up, params)[i] - choice_probs(dn, params)[i]) / (2.0 * h);
}

// Mixture components as (weight, expert) pairs; MNL is a 1-component mixture.
struct Components {
  Eigen::VectorXd weights;
  const std::vector<MnlParams>* experts = nullptr;
  MnlParams single;
  bool is_single = false;

  int count() const { return is_single ? 1 : static_cast<int>(experts->size()); }
  const MnlParams& expert(int k) const { return is_single ? single : (*experts)[k]; }
  double weight(int k) const { return is_single ? 1.0 : weights[k]; }
};

Components mixture_components(const ChoiceObservation& obs, const ModelParams& params,
                              const char* who) {
  Components c;
  if (const auto* mnl = std::get_if<MnlParams>(&params)) {
    c.single = *mnl;
    c.is_single = true;
  } else if (const auto* moe = std::get_if<MoeParams>(&params)) {
    c.weights = gate_weights(obs.covariates, *moe);
    c.experts = &moe->experts;
  } else if (const auto* lcm = std::get_if<LcmParams>(&params)) {
    Eigen::VectorXd logits(lcm->n_classes());
    logits << lcm->class_logits, 0.0;
    c.weights = math::softmax(logits);
    c.experts = &lcm->classes;
  } else {
    fail(std::string(who) +
         ": no analytic elasticity for mixed logit; use ElasticityMethod::FiniteDifference");
  }
  return c;
}

}  // namespace

double own_price_elasticity(const ChoiceObservation& obs, const ModelParams& params, int alt,
                            ElasticityMethod method, int price_attr) {
  check_alt(obs, alt, "own_price_elasticity");
  check_price(obs, price_attr, "own_price_elasticity");
  const double p = obs.alt_features(alt, price_attr);
  const double prob = choice_probs(obs, params)[alt];
  require(prob > 0.0, "own_price_elasticity: choice probability is zero at this point");
  if (method == ElasticityMethod::FiniteDifference)
    return fd_derivative(obs, params, alt, alt, price_attr) * p / prob;

  const Components c = mixture_components(obs, params, "own_price_elasticity");
  double dpdp = 0.0;
  for (int k = 0; k < c.count(); ++k) {
    const double beta_p = c.expert(k).beta[price_attr];
    const double pk = mnl_probs(obs, c.expert(k))[alt];
    dpdp += c.weight(k) * beta_p * pk * (1.0 - pk);
  }
  return dpdp * p / prob;
}

double cross_price_elasticity(const ChoiceObservation& obs, const ModelParams& params, int alt_i,
                              int alt_j, ElasticityMethod method, int price_attr) {
  check_alt(obs, alt_i, "cross_price_elasticity");
  check_alt(obs, alt_j, "cross_price_elasticity");
  require(alt_i != alt_j, "cross_price_elasticity: use own_price_elasticity for i == j");
  check_price(obs, price_attr, "cross_price_elasticity");
  const double pj = obs.alt_features(alt_j, price_attr);
  const double prob_i = choice_probs(obs, params)[alt_i];
  require(prob_i > 0.0, "cross_price_elasticity: choice probability is zero at this point");
  if (method == ElasticityMethod::FiniteDifference)
    return fd_derivative(obs, params, alt_i, alt_j, price_attr) * pj / prob_i;

  const Components c = mixture_components(obs, params, "cross_price_elasticity");
  double dpdp = 0.0;
  for (int k = 0; k < c.count(); ++k) {
    const double beta_p = c.expert(k).beta[price_attr];
    const Eigen::VectorXd pk = mnl_probs(obs, c.expert(k));
    dpdp += c.weight(k) * (-beta_p) * pk[alt_i] * pk[alt_j];
  }
  return dpdp * pj / prob_i;
}

SegmentElasticityReport segment_elasticity_report(const ChoiceDataset& ds,
                                                  const MoeParams& params) {
  ds.validate_for_fit();
  const int price = ds.price_attr();
  const PosteriorMatrix resp = e_step(ds, params);
  const int K = params.n_experts();
  const int N = ds.n_obs();

  SegmentElasticityReport rep;
  rep.rows.resize(K);
  std::vector<double> sums(K, 0.0);
  for (int k = 0; k < K; ++k) {
    rep.rows[k].segment = k;
    rep.rows[k].soft_share_pct = 100.0 * resp.col(k).mean();
  }
  const int J = ds.n_alts;
  for (int n = 0; n < N; ++n) {
    const int k = math::argmax(resp.row(n).transpose());
    const ChoiceObservation obs = ds.observation(n);
    // Expert-conditional elasticity: the segment's own price response, not
    // the mixture-blended one, is what the per-segment table reports.  The
    // mean runs over every alternative, not just the chosen one; the
    // chosen-only average saturates once an expert is price-decisive and
    // cannot represent strongly elastic segments.
    const ModelParams expert(params.experts[k]);
    double e = 0.0;
    for (int j = 0; j < J; ++j) {
      e += own_price_elasticity(obs, expert, j, ElasticityMethod::Analytic, price);
    }
    sums[k] += e / J;
    rep.rows[k].n_obs += 1;
  }
  for (int k = 0; k < K; ++k) {
    rep.rows[k].share_pct = 100.0 * static_cast<double>(rep.rows[k].n_obs) / N;
    if (rep.rows[k].n_obs > 0) {
      rep.rows[k].mean_own_price_elasticity = sums[k] / rep.rows[k].n_obs;
      rep.rows[k].has_elasticity = true;
    }
  }
  return rep;
}

Eigen::VectorXd shapley_exact(int d,
                              const std::function<double(const std::vector<bool>&)>& value) {
  require(d >= 1, "shapley_exact: need at least one player");
  require(d <= 12, "shapley_exact: exact enumeration is limited to 12 players (2^d coalitions)");
  const unsigned full = 1u << d;

  // Evaluate each coalition once.
  std::vector<double> v(full);
  std::vector<bool> mask(d);
  for (unsigned m = 0; m < full; ++m) {
    for (int i = 0; i < d; ++i) mask[i] = (m >> i) & 1u;
    v[m] = value(mask);
  }

  std::vector<double> fact(d + 1, 1.0);
  for (int i = 1; i <= d; ++i) fact[i] = fact[i - 1] * i;

  Eigen::VectorXd phi = Eigen::VectorXd::Zero(d);
  for (unsigned m = 0; m < full; ++m) {
    const int s = std::popcount(m);
    for (int i = 0; i < d; ++i) {
      if ((m >> i) & 1u) continue;
      const double w = fact[s] * fact[d - s - 1] / fact[d];
      phi[i] += w * (v[m | (1u << i)] - v[m]);
    }
  }
  return phi;
}

ShapleyAttribution shapley_attribution(const ChoiceObservation& obs, const ModelParams& params,
                                       int target_alt, const Eigen::MatrixXd& baseline) {
  check_alt(obs, target_alt, "shapley_attribution");
  const int d = obs.n_alt_attrs();
  require(baseline.rows() == obs.alt_features.rows() && baseline.cols() == d,
          "shapley_attribution: baseline must be J x d_x");
  auto value = [&](const std::vector<bool>& present) {
    ChoiceObservation probe = obs;
    for (int a = 0; a < d; ++a)
      if (!present[a]) probe.alt_features.col(a) = baseline.col(a);
    return choice_probs(probe, params)[target_alt];
  };
  ShapleyAttribution out;
  out.phi = shapley_exact(d, value);
  out.baseline_value = value(std::vector<bool>(d, false));
  out.full_value = value(std::vector<bool>(d, true));
  return out;
}

Eigen::MatrixXd feature_means(const ChoiceDataset& ds) {
  ds.validate_for_fit();
  Eigen::MatrixXd base(ds.n_alts, ds.n_alt_attrs());
  for (int a = 0; a < ds.n_alt_attrs(); ++a)
    for (int j = 0; j < ds.n_alts; ++j)
      base(j, a) = ds.alt_features.col(ds.feature_col(a, j)).mean();
  return base;
}

DiscountCurve discount_response_curve(const MoeParams& params, const ChoiceObservation& base,
                                      const std::vector<double>& grid, int alt, int discount_attr,
                                      const std::optional<DiscountThreshold>& threshold) {
  check_alt(base, alt, "discount_response_curve");
  require(discount_attr >= 0 && discount_attr < base.n_alt_attrs(),
          "discount_response_curve: discount attribute index out of range");
  require(!grid.empty(), "discount_response_curve: empty grid");
  for (double g : grid)
    require(g >= 0.0 && g <= 1.0,
            "discount_response_curve: discounts are fractions in [0,1]");
  if (threshold)
    require(threshold->segment >= 0 && threshold->segment < params.n_experts(),
            "discount_response_curve: threshold segment out of range");

  const int K = params.n_experts();
  const auto share_at = [&](int k, double discount) {
    ChoiceObservation probe = base;
    probe.alt_features(alt, discount_attr) = discount;
    Eigen::VectorXd v = probe.alt_features * params.experts[k].beta;
    v.head(probe.n_alternatives() - 1) += params.experts[k].asc;
    if (threshold && k == threshold->segment && discount > threshold->knee)
      v[alt] += threshold->boost;
    return 100.0 * math::softmax(v)[alt];
  };

  DiscountCurve curve;
  curve.grid = grid;
  curve.share_pct.resize(K, static_cast<Eigen::Index>(grid.size()));
  curve.baseline_share_pct.resize(K);
  for (int k = 0; k < K; ++k) curve.baseline_share_pct[k] = share_at(k, 0.0);
  for (std::size_t g = 0; g < grid.size(); ++g)
    for (int k = 0; k < K; ++k)
      curve.share_pct(k, static_cast<Eigen::Index>(g)) = share_at(k, grid[g]);
  curve.delta_pct = curve.share_pct.colwise() - curve.baseline_share_pct;
  return curve;
}

}  // namespace choicekit
