#include "choicekit/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "choicekit/math.hpp"
#include "choicekit/rng.hpp"

namespace choicekit {

namespace {

// Internal seed for calibration sampling; independent of the user's
// generation seed so calibrated constants do not drift with it.
constexpr std::uint64_t kCalibrationSeed = 0xCA11B7A7EULL;

struct Sampler {
  Dist dist;
  double mu = 0.0, sigma = 1.0;  // pre-truncation parameters (TruncNormal)

  double draw(Rng& rng) const {
    switch (dist.family) {
      case Dist::Family::TruncNormal:
        return rng.truncated_normal(mu, sigma, dist.lo, dist.hi);
      case Dist::Family::Bernoulli:
        return rng.bernoulli(dist.p) ? 1.0 : 0.0;
      case Dist::Family::Uniform:
        return rng.uniform(dist.lo, dist.hi);
    }
    fail("unreachable distribution family");
  }
};

Sampler make_sampler(const Dist& d) {
  Sampler s;
  s.dist = d;
  if (d.family == Dist::Family::TruncNormal) {
    const auto [mu, sigma] = truncnorm_match_moments(d.mean, d.sd, d.lo, d.hi);
    s.mu = mu;
    s.sigma = sigma;
  }
  return s;
}

// Interval mass Phi(b) - Phi(a) without upper-tail cancellation: when both
// standardized bounds sit in the upper tail, the reflected complement pair
// keeps full relative precision.
double truncnorm_mass(double a, double b) {
  if (a > 0.0) return math::normal_cdf(-a) - math::normal_cdf(-b);
  return math::normal_cdf(b) - math::normal_cdf(a);
}

Dist truncnorm(double mean, double sd, double lo, double hi) {
  Dist d;
  d.family = Dist::Family::TruncNormal;
  d.mean = mean;
  d.sd = sd;
  d.lo = lo;
  d.hi = hi;
  return d;
}

Dist bernoulli(double p) {
  Dist d;
  d.family = Dist::Family::Bernoulli;
  d.p = p;
  return d;
}

// Gate built from coefficients expressed per standard deviation of each
// covariate (easier to reason about); converts to raw slopes and seeds the
// intercept so the logit is centered before calibration.
Eigen::MatrixXd gate_from_std_coefs(const std::vector<CovariateSpec>& covs,
                                    const std::vector<std::vector<double>>& std_coefs) {
  const int K1 = static_cast<int>(std_coefs.size());
  const int C = static_cast<int>(covs.size());
  Eigen::MatrixXd gate = Eigen::MatrixXd::Zero(K1, C + 1);
  for (int k = 0; k < K1; ++k) {
    require(static_cast<int>(std_coefs[k].size()) == C, "gate coefficient count mismatch");
    for (int c = 0; c < C; ++c) {
      const Dist& d = covs[c].dist;
      double mean = d.mean, sd = d.sd;
      if (d.family == Dist::Family::Bernoulli) {
        mean = d.p;
        sd = std::sqrt(d.p * (1.0 - d.p));
      } else if (d.family == Dist::Family::Uniform) {
        mean = 0.5 * (d.lo + d.hi);
        sd = (d.hi - d.lo) / std::sqrt(12.0);
      }
      const double slope = std_coefs[k][c] / sd;
      gate(k, c + 1) = slope;
      gate(k, 0) -= slope * mean;
    }
  }
  return gate;
}

}  // namespace

std::pair<double, double> truncnorm_realized_moments(double mu, double sigma, double lo,
                                                     double hi) {
  require(sigma > 0.0, "truncnorm_realized_moments: sigma must be positive");
  require(lo < hi, "truncnorm_realized_moments: lo must be < hi");
  const double a = (lo - mu) / sigma;
  const double b = (hi - mu) / sigma;
  // Once the standardized width shrinks toward rounding scale the closed form
  // cancels catastrophically (the distribution is uniform-limit there anyway).
  require(b - a > 1e-4, "truncnorm_realized_moments: sigma too large relative to the support");
  const double z = truncnorm_mass(a, b);
  require(z > 1e-300, "truncnorm_realized_moments: truncation removes all mass");
  const double pa = math::normal_pdf(a);
  const double pb = math::normal_pdf(b);
  const double mean = mu + sigma * (pa - pb) / z;
  const double var_factor =
      1.0 + (a * pa - b * pb) / z - ((pa - pb) / z) * ((pa - pb) / z);
  // The closed form loses all precision once truncation is extreme enough to
  // drive the variance factor to the rounding floor; treat that as a domain
  // error rather than returning a garbage sd.
  require(var_factor > 1e-12, "truncnorm_realized_moments: truncation too extreme");
  return {mean, sigma * std::sqrt(var_factor)};
}

std::pair<double, double> truncnorm_match_moments(double target_mean, double target_sd,
                                                  double lo, double hi) {
  require(lo < hi, "truncnorm_match_moments: lo must be < hi");
  require(target_mean > lo && target_mean < hi,
          "truncnorm_match_moments: target mean must lie inside (lo, hi)");
  require(target_sd > 0.0, "truncnorm_match_moments: target sd must be positive");
  // A truncated distribution on [lo,hi] cannot have sd exceeding the
  // half-width; anything close is unreachable for a truncated normal.
  require(target_sd < 0.5 * (hi - lo),
          "truncnorm_match_moments: target sd is too large for the support");

  // Non-throwing probe: realized (mean, sd) at (mu, sigma), or nullopt when
  // the point is outside the numerically trustworthy region (interval mass
  // underflow, or variance factor at the rounding floor).
  const auto moments_at =
      [&](double mu, double sigma) -> std::optional<std::pair<double, double>> {
    if (!(sigma > 0.0)) return std::nullopt;
    const double a = (lo - mu) / sigma;
    const double b = (hi - mu) / sigma;
    if (!(b - a > 1e-4)) return std::nullopt;
    const double z = truncnorm_mass(a, b);
    if (!(z > 1e-280)) return std::nullopt;
    const double pa = math::normal_pdf(a);
    const double pb = math::normal_pdf(b);
    const double mean = mu + sigma * (pa - pb) / z;
    const double vf = 1.0 + (a * pa - b * pb) / z - ((pa - pb) / z) * ((pa - pb) / z);
    if (!(vf > 1e-12)) return std::nullopt;
    return std::make_pair(mean, sigma * std::sqrt(vf));
  };

  // The truncated mean is strictly increasing in mu for fixed sigma, so mu
  // can be solved by bisection; nesting that inside a bisection on sigma
  // (realized sd increases with sigma once the mean is re-pinned) is slower
  // than Newton but has no divergence modes.
  const auto solve_mu = [&](double sigma) -> std::optional<double> {
    double mu_lo = target_mean, mu_hi = target_mean;
    double step = sigma;
    for (int it = 0;; ++it) {
      const auto m = moments_at(mu_lo, sigma);
      if (!m) return std::nullopt;
      if (m->first <= target_mean) break;
      if (it >= 200) return std::nullopt;
      mu_lo -= step;
      step *= 2.0;
    }
    step = sigma;
    for (int it = 0;; ++it) {
      const auto m = moments_at(mu_hi, sigma);
      if (!m) return std::nullopt;
      if (m->first >= target_mean) break;
      if (it >= 200) return std::nullopt;
      mu_hi += step;
      step *= 2.0;
    }
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (mu_lo + mu_hi);
      const auto m = moments_at(mid, sigma);
      if (!m) return std::nullopt;
      (m->first < target_mean ? mu_lo : mu_hi) = mid;
    }
    return 0.5 * (mu_lo + mu_hi);
  };
  const auto sd_gap = [&](double sigma) -> std::optional<double> {
    const auto mu = solve_mu(sigma);
    if (!mu) return std::nullopt;
    const auto m = moments_at(*mu, sigma);
    if (!m) return std::nullopt;
    return m->second - target_sd;
  };

  double sg_lo = target_sd, sg_hi = target_sd;
  for (int it = 0;; ++it) {
    const auto gap = sd_gap(sg_lo);
    if (gap && *gap <= 0.0) break;
    sg_lo *= 0.5;
    require(it < 60, "truncnorm_match_moments: no lower sigma bracket; targets unreachable");
  }
  for (int it = 0;; ++it) {
    const auto gap = sd_gap(sg_hi);
    if (gap && *gap >= 0.0) break;
    sg_hi *= 2.0;
    require(it < 60, "truncnorm_match_moments: no upper sigma bracket; targets unreachable");
  }
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (sg_lo + sg_hi);
    const auto gap = sd_gap(mid);
    require(gap.has_value(), "truncnorm_match_moments: left the valid region mid-search");
    (*gap < 0.0 ? sg_lo : sg_hi) = mid;
  }
  const double sigma = 0.5 * (sg_lo + sg_hi);
  const auto mu = solve_mu(sigma);
  require(mu.has_value(), "truncnorm_match_moments: did not converge");
  return {*mu, sigma};
}

void MarketSpec::validate() const {
  require(n_consumers >= 1, "market: n_consumers must be >= 1");
  require(occasions_per_consumer >= 1, "market: occasions_per_consumer must be >= 1");
  require(n_alts >= 2, "market: need at least 2 alternatives");
  require(attr_names.size() == attr_dists.size(), "market: attribute name/dist count mismatch");
  require(!attr_names.empty(), "market: need at least one attribute");

  int price = -1;
  for (std::size_t a = 0; a < attr_names.size(); ++a)
    if (attr_names[a] == "price") price = static_cast<int>(a);
  require(price >= 0, "market: an attribute named 'price' is required");
  const Dist& pd = attr_dists[static_cast<std::size_t>(price)];
  require(pd.family != Dist::Family::Bernoulli, "market: price cannot be Bernoulli");
  require(pd.lo >= 5.99 && pd.hi <= 499.99,
          "market: price support must lie within [5.99, 499.99]");

  for (std::size_t a = 0; a < attr_names.size(); ++a) {
    if (attr_names[a] != "discount") continue;
    const Dist& dd = attr_dists[a];
    if (dd.family != Dist::Family::Bernoulli)
      require(dd.lo >= 0.0 && dd.hi <= 1.0,
              "market: discount is a fraction; support must lie within [0, 1]");
  }

  const int K = n_segments();
  require(K >= 1, "market: need at least one segment");
  require(target_shares.size() == K, "market: target_shares must have K entries");
  require(target_shares.minCoeff() > 0.0, "market: segment shares must be positive");
  require(std::abs(target_shares.sum() - 1.0) <= 1e-9, "market: segment shares must sum to 1");
  for (const auto& p : segment_params) {
    require(p.beta.size() == static_cast<Eigen::Index>(attr_names.size()),
            "market: segment beta length must equal the attribute count");
    require(p.asc.size() == n_alts - 1, "market: segment asc must have J-1 entries");
  }
  require(gate.rows() == K - 1 && (K == 1 || gate.cols() == static_cast<Eigen::Index>(covariates.size()) + 1),
          "market: gate must be (K-1) x (d_z + 1)");
  if (segment_elasticity.size() > 0)
    require(segment_elasticity.size() == K,
            "market: segment_elasticity must have K entries when present");
  if (threshold) {
    require(threshold->segment >= 0 && threshold->segment < K,
            "market: threshold segment out of range");
    require(threshold->knee >= 0.0 && threshold->knee < 1.0, "market: knee must be in [0,1)");
  }
}

void calibrate_gate_intercepts(MarketSpec& spec, int sample_size) {
  spec.validate();
  const int K = spec.n_segments();
  if (K == 1) return;
  require(sample_size >= 1000, "calibrate_gate_intercepts: sample too small");

  std::vector<Sampler> cov_samplers;
  for (const auto& c : spec.covariates) cov_samplers.push_back(make_sampler(c.dist));
  const int C = static_cast<int>(cov_samplers.size());

  Rng rng(kCalibrationSeed);
  Eigen::MatrixXd zt(sample_size, C + 1);
  zt.col(0).setOnes();
  for (int n = 0; n < sample_size; ++n)
    for (int c = 0; c < C; ++c) zt(n, c + 1) = cov_samplers[c].draw(rng);

  for (int it = 0; it < 200; ++it) {
    Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(sample_size, K);
    logits.leftCols(K - 1) = zt * spec.gate.transpose();
    math::softmax_rows_inplace(logits);
    const Eigen::VectorXd shares = logits.colwise().mean().transpose();
    double worst = 0.0;
    for (int k = 0; k < K; ++k)
      worst = std::max(worst, std::abs(shares[k] - spec.target_shares[k]));
    if (worst < 1e-7) break;
    // Multiplicative update on the odds, re-referenced to the last segment.
    const double ref = std::log(spec.target_shares[K - 1] / shares[K - 1]);
    for (int k = 0; k < K - 1; ++k)
      spec.gate(k, 0) += std::log(spec.target_shares[k] / shares[k]) - ref;
  }
}

SynthResult generate(const MarketSpec& spec) {
  spec.validate();
  const int K = spec.n_segments();
  const int J = spec.n_alts;
  const int A = static_cast<int>(spec.attr_names.size());
  const int C = static_cast<int>(spec.covariates.size());
  const int N = spec.n_consumers * spec.occasions_per_consumer;
  const int disc = [&] {
    for (int a = 0; a < A; ++a)
      if (spec.attr_names[a] == "discount") return a;
    return -1;
  }();

  std::vector<Sampler> attr_samplers, cov_samplers;
  for (const auto& d : spec.attr_dists) attr_samplers.push_back(make_sampler(d));
  for (const auto& c : spec.covariates) cov_samplers.push_back(make_sampler(c.dist));

  SynthResult res;
  ChoiceDataset& ds = res.data;
  ds.n_alts = J;
  ds.alt_attr_names = spec.attr_names;
  for (const auto& c : spec.covariates) ds.covariate_names.push_back(c.name);
  ds.has_timestamps = true;
  ds.consumer_ids.resize(N);
  ds.chosen.resize(N);
  ds.timestamps.resize(N);
  ds.alt_features.resize(N, A * J);
  ds.covariates.resize(N, C);
  res.obs_segment.resize(N);
  if (spec.emit_elasticity_feature) {
    require(spec.segment_elasticity.size() == K,
            "generate: emit_elasticity_feature requires segment_elasticity targets");
    res.elasticity_feature.resize(N);
  }

  int digits = 1;
  for (int v = spec.n_consumers; v >= 10; v /= 10) ++digits;

  for (int c = 0; c < spec.n_consumers; ++c) {
    // One substream per consumer: the output is identical regardless of the
    // order (or parallelism) in which consumers are generated.  The offset
    // keeps these streams disjoint from the estimation substreams even when
    // a test reuses one seed for both.
    Rng rng = Rng::substream(spec.seed, 1'000'000 + static_cast<std::uint64_t>(c));

    Eigen::VectorXd z(C);
    for (int i = 0; i < C; ++i) z[i] = cov_samplers[i].draw(rng);

    // Segment from the gate softmax.
    Eigen::VectorXd logits = Eigen::VectorXd::Zero(K);
    if (K > 1) {
      Eigen::VectorXd zt(C + 1);
      zt << 1.0, z;
      logits.head(K - 1) = spec.gate * zt;
    }
    const Eigen::VectorXd gw = math::softmax(logits);
    const int seg = rng.categorical(std::vector<double>(gw.data(), gw.data() + K));

    std::string id = std::to_string(c);
    id = "c" + std::string(static_cast<std::size_t>(digits) - std::min<std::size_t>(digits, id.size()), '0') + id;

    std::int64_t day = rng.uniform_int(0, 999);
    for (int o = 0; o < spec.occasions_per_consumer; ++o) {
      const int n = c * spec.occasions_per_consumer + o;
      ds.consumer_ids[n] = id;
      ds.covariates.row(n) = z.transpose();
      res.obs_segment[n] = seg;

      Eigen::MatrixXd x(J, A);
      for (int a = 0; a < A; ++a)
        for (int j = 0; j < J; ++j) x(j, a) = attr_samplers[a].draw(rng);

      // Gumbel-max: argmax of V + Gumbel noise draws exactly from the
      // softmax choice distribution.
      Eigen::VectorXd v = x * spec.segment_params[seg].beta;
      v.head(J - 1) += spec.segment_params[seg].asc;
      if (spec.threshold && seg == spec.threshold->segment && disc >= 0)
        for (int j = 0; j < J; ++j)
          if (x(j, disc) > spec.threshold->knee) v[j] += spec.threshold->boost;
      int best = 0;
      double best_u = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < J; ++j) {
        const double u = v[j] + rng.gumbel();
        if (u > best_u) {
          best_u = u;
          best = j;
        }
      }
      ds.chosen[n] = best;
      for (int a = 0; a < A; ++a)
        for (int j = 0; j < J; ++j) ds.alt_features(n, ds.feature_col(a, j)) = x(j, a);

      ds.timestamps[n] = day;
      day += rng.uniform_int(3, 45);

      if (spec.emit_elasticity_feature)
        res.elasticity_feature[n] = spec.segment_elasticity[seg] + 0.25 * rng.normal();
    }
  }

  res.true_params.experts = spec.segment_params;
  res.true_params.gate = spec.gate;
  res.threshold = spec.threshold;
  ds.validate();
  return res;
}

MarketSpec default_market(std::uint64_t seed) {
  MarketSpec m;
  m.seed = seed;
  m.n_consumers = 20000;
  m.occasions_per_consumer = 1;
  m.n_alts = 3;

  m.attr_names = {"price", "discount", "brand", "quality"};
  m.attr_dists = {truncnorm(120.5, 45.2, 5.99, 499.99), truncnorm(0.1075, 0.054, 0.0, 0.50),
                  bernoulli(0.35), bernoulli(0.40)};

  m.covariates = {{"age", truncnorm(35.6, 12.5, 18.0, 70.0)},
                  {"income", truncnorm(55.0, 15.0, 15.0, 120.0)},
                  {"household_size", truncnorm(2.8, 1.3, 1.0, 8.0)},
                  // A loyalty score on [1, 10] with mean 7.8 cannot have sd
                  // 2.1 under any truncated normal (the sd supremum at that
                  // mean is about 1.95), so the generator plants the closest
                  // feasible spread while keeping the mean exact.
                  {"loyalty", truncnorm(7.8, 1.9, 1.0, 10.0)},
                  {"frequency", truncnorm(4.3, 2.7, 1.0, 15.0)}};

  // Segments: 0 price-sensitive, 1 brand-loyal, 2 promotion-driven,
  // 3 feature-oriented.  Price coefficients are calibrated so the simulated
  // mean own-price elasticity per segment hits m.segment_elasticity.
  m.target_shares = Eigen::Vector4d(0.352, 0.254, 0.201, 0.193);
  m.segment_elasticity = Eigen::Vector4d(-2.35, -0.75, -1.9, -1.1);

  auto seg = [](double bp, double bd, double bb, double bq, double a0, double a1) {
    MnlParams p;
    p.beta = Eigen::Vector4d(bp, bd, bb, bq);
    p.asc = Eigen::Vector2d(a0, a1);
    return p;
  };
  // Price coefficients frozen from a bisection on the simulated per-segment
  // mean own-price elasticity (targets above, 30k-consumer evaluation).
  m.segment_params = {seg(-0.026397, 4.0, 0.2, 0.3, 0.10, 0.05),
                      seg(-0.008992, 1.0, 2.0, 0.5, 0.30, -0.10),
                      seg(-0.021704, 7.0, 0.3, 0.3, 0.00, 0.00),
                      seg(-0.012995, 1.0, 0.5, 2.2, -0.10, 0.10)};

  // Gate coefficients per covariate standard deviation
  // (order: age, income, household_size, loyalty, frequency).
  m.gate = gate_from_std_coefs(m.covariates, {{0.0, -1.8, 0.0, -1.0, 0.4},
                                              {0.5, 0.0, 0.0, 2.4, 0.0},
                                              {-1.8, -0.5, 0.0, 0.0, 0.7}});

  m.threshold = DiscountThreshold{0.20, 0.5, 2};
  m.emit_elasticity_feature = true;

  static const Eigen::MatrixXd calibrated = [&m] {
    MarketSpec tmp = m;
    calibrate_gate_intercepts(tmp);
    return tmp.gate;
  }();
  m.gate = calibrated;
  return m;
}

MarketSpec k2_market(std::uint64_t seed) {
  MarketSpec m;
  m.seed = seed;
  m.n_consumers = 20000;
  m.occasions_per_consumer = 1;
  m.n_alts = 3;
  m.attr_names = {"price"};
  // A tighter price spread than the reference market: beta_price -2 with a
  // wide spread saturates the choice probabilities and starves the Fisher
  // information, leaving the coefficient unrecoverable at N = 20,000.
  m.attr_dists = {truncnorm(8.5, 0.9, 5.99, 12.0)};
  m.covariates = {{"age", truncnorm(35.6, 12.5, 18.0, 70.0)}};
  m.target_shares = Eigen::Vector2d(0.5, 0.5);

  MnlParams s0, s1;
  s0.beta = Eigen::VectorXd::Constant(1, -2.0);
  s0.asc = Eigen::Vector2d(0.25, -0.15);
  s1.beta = Eigen::VectorXd::Constant(1, -0.4);
  s1.asc = Eigen::Vector2d(-0.10, 0.10);
  m.segment_params = {s0, s1};

  m.gate = gate_from_std_coefs(m.covariates, {{-1.6}});

  static const Eigen::MatrixXd calibrated = [&m] {
    MarketSpec tmp = m;
    calibrate_gate_intercepts(tmp);
    return tmp.gate;
  }();
  m.gate = calibrated;
  return m;
}

MarketSpec mnl_market(std::uint64_t seed) {
  MarketSpec m;
  m.seed = seed;
  m.n_consumers = 20000;
  m.occasions_per_consumer = 1;
  m.n_alts = 3;
  m.attr_names = {"price", "quality"};
  m.attr_dists = {truncnorm(8.5, 1.2, 5.99, 12.0), bernoulli(0.5)};
  m.covariates = {{"age", truncnorm(35.6, 12.5, 18.0, 70.0)}};
  m.target_shares = Eigen::VectorXd::Constant(1, 1.0);

  MnlParams s;
  s.beta = Eigen::Vector2d(-1.0, 0.5);
  s.asc = Eigen::Vector2d(0.20, -0.10);
  m.segment_params = {s};
  m.gate = Eigen::MatrixXd::Zero(0, 2);
  return m;
}

}  // namespace choicekit
