#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "choicekit/models.hpp"

namespace choicekit {

/// Sampling distribution for one attribute or covariate.  For TruncNormal,
/// `mean`/`sd` are the *realized* (post-truncation) targets on [lo, hi]; the
/// sampler moment-matches the pre-truncation parameters so simulated columns
/// reproduce these moments.
struct Dist {
  enum class Family { TruncNormal, Bernoulli, Uniform };
  Family family = Family::TruncNormal;
  double mean = 0.0, sd = 1.0;  // TruncNormal targets
  double lo = 0.0, hi = 1.0;    // TruncNormal / Uniform support
  double p = 0.5;               // Bernoulli
};

struct CovariateSpec {
  std::string name;
  Dist dist;
};

/// Ground-truth market: per-segment MNL utilities, a softmax gate on consumer
/// covariates, and sampling distributions for features.  The gate intercepts
/// of the bundled markets are calibrated so marginal segment shares hit
/// `target_shares`.
struct MarketSpec {
  int n_consumers = 1000;
  int occasions_per_consumer = 1;
  int n_alts = 3;

  std::vector<std::string> attr_names;  // must include "price"
  std::vector<Dist> attr_dists;         // drawn independently per alternative

  std::vector<CovariateSpec> covariates;

  Eigen::VectorXd target_shares;            // K, positive, sums to 1
  std::vector<MnlParams> segment_params;    // K experts (raw scale)
  Eigen::MatrixXd gate;                     // (K-1) x (d_z + 1), raw scale
  Eigen::VectorXd segment_elasticity;       // K target own-price elasticities

  std::optional<DiscountThreshold> threshold;
  bool emit_elasticity_feature = false;

  std::uint64_t seed = 1;

  int n_segments() const { return static_cast<int>(segment_params.size()); }
  void validate() const;
};

struct SynthResult {
  ChoiceDataset data;
  std::vector<int> obs_segment;            // planted segment per observation
  MoeParams true_params;                   // gate + segment utilities
  std::optional<DiscountThreshold> threshold;
  std::vector<double> elasticity_feature;  // per observation; empty unless emitted
};

/// Simulates the market: covariates per consumer, segment via the gate
/// softmax, alternatives per occasion, and the choice by Gumbel-max (adding
/// i.i.d. Gumbel noise to utilities and taking the argmax draws exactly from
/// the softmax choice distribution).  Deterministic per seed; each consumer
/// uses an independent substream so generation order cannot matter.
SynthResult generate(const MarketSpec& spec);

/// Pre-truncation (mu, sigma) whose truncated-normal moments on [lo, hi]
/// equal the targets.  Nested bisection on the closed-form moment equations
/// (mu re-solved for each sigma); throws when no truncated normal attains
/// the targets.
std::pair<double, double> truncnorm_match_moments(double target_mean, double target_sd,
                                                  double lo, double hi);

/// Closed-form realized mean/sd of a normal(mu, sigma) truncated to [lo, hi].
std::pair<double, double> truncnorm_realized_moments(double mu, double sigma, double lo,
                                                     double hi);

/// Solves the (K-1) gate intercepts by fixed-point iteration on a large
/// internal covariate sample (own fixed seed) until marginal softmax shares
/// match spec.target_shares.  Slopes are left untouched.
void calibrate_gate_intercepts(MarketSpec& spec, int sample_size = 200000);

/// Four-segment market calibrated to the reference descriptive statistics:
/// covariate and attribute moments, segment shares 35.2/25.4/20.1/19.3 (%),
/// per-segment mean own-price elasticities -2.35/-0.75/-1.9/-1.1, and a
/// promotion-segment utility boost above a 20% discount knee.
MarketSpec default_market(std::uint64_t seed = 1);

/// Two-segment recovery benchmark: price-only utilities with beta_price
/// -2.0 vs -0.4 on a narrow price scale, gate driven by age, equal shares.
MarketSpec k2_market(std::uint64_t seed = 1);

/// Homogeneous single-segment control market (no gate heterogeneity).
MarketSpec mnl_market(std::uint64_t seed = 1);

}  // namespace choicekit
