#include <doctest.h>

#include <cmath>
#include <numeric>

#include <choicekit/synthgen.hpp>

using namespace choicekit;

namespace {

Dist tn(double mean, double sd, double lo, double hi) {
  Dist d;
  d.family = Dist::Family::TruncNormal;
  d.mean = mean;
  d.sd = sd;
  d.lo = lo;
  d.hi = hi;
  return d;
}

bool bitwise_equal(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a - b).cwiseAbs().maxCoeff() == 0.0;
}

}  // namespace

TEST_CASE("realized moments match the closed form") {
  // Symmetric truncation keeps the mean and shrinks the sd.
  auto [m1, s1] = truncnorm_realized_moments(0.0, 1.0, -1.0, 1.0);
  CHECK(m1 == 0.0);
  CHECK(s1 == doctest::Approx(0.539560093754896973).epsilon(1e-14));

  auto [m2, s2] = truncnorm_realized_moments(1.5, 2.0, 0.0, 3.0);
  CHECK(m2 == doctest::Approx(1.5).epsilon(1e-14));
  CHECK(s2 == doctest::Approx(0.83385153633996099).epsilon(1e-14));

  auto [m3, s3] = truncnorm_realized_moments(1.0, 2.0, 0.0, 3.0);
  CHECK(m3 == doctest::Approx(1.41326243612306601).epsilon(1e-14));
  CHECK(s3 == doctest::Approx(0.831320056504095785).epsilon(1e-14));

  // Deep one-sided truncation: four sigmas of the mass cut away.
  auto [m4, s4] = truncnorm_realized_moments(-4.0, 1.0, 0.0, 8.0);
  CHECK(m4 == doctest::Approx(0.225607144489471073).epsilon(1e-12));
  CHECK(s4 == doctest::Approx(0.216038974255625069).epsilon(1e-12));

  // Wide bounds reduce to the untruncated normal.
  auto [m5, s5] = truncnorm_realized_moments(3.0, 2.0, -1e6, 1e6);
  CHECK(m5 == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(s5 == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("realized moments reject degenerate inputs") {
  CHECK_THROWS_AS(truncnorm_realized_moments(0.0, -1.0, 0.0, 1.0), Error);
  CHECK_THROWS_AS(truncnorm_realized_moments(0.0, 1.0, 2.0, 1.0), Error);
  // Standardized width below the trust floor: sd enormous vs support.
  CHECK_THROWS_AS(truncnorm_realized_moments(0.5, 1e9, 0.0, 1.0), Error);
}

TEST_CASE("moment matching recovers every feasible fixture") {
  struct Fixture {
    double mean, sd, lo, hi;
  };
  const Fixture fixtures[] = {
      {35.6, 12.5, 18.0, 70.0},   {0.1075, 0.054, 0.0, 0.50}, {8.5, 1.2, 5.99, 12.0},
      {120.5, 45.2, 5.99, 499.99}, {7.8, 1.9, 1.0, 10.0},      {0.5, 0.2, 0.0, 1.0},
  };
  for (const auto& f : fixtures) {
    const auto [mu, sigma] = truncnorm_match_moments(f.mean, f.sd, f.lo, f.hi);
    const auto [m, s] = truncnorm_realized_moments(mu, sigma, f.lo, f.hi);
    CHECK(std::abs(m - f.mean) < 1e-9 * std::max(1.0, std::abs(f.mean)));
    CHECK(std::abs(s - f.sd) < 1e-9 * f.sd);
  }

  // Untruncated limit: wide bounds return the targets themselves.
  const auto [mu, sigma] = truncnorm_match_moments(3.0, 2.0, -1e6, 1e6);
  CHECK(mu == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(sigma == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("moment matching rejects unreachable targets") {
  using doctest::Contains;
  CHECK_THROWS_AS(truncnorm_match_moments(7.8, 2.1, 1.0, 10.0), Error);
  CHECK_THROWS_WITH(truncnorm_match_moments(7.8, 2.1, 1.0, 10.0), Contains("unreachable"));
  // No truncated normal on [0,1] spreads wider than the uniform limit.
  CHECK_THROWS_AS(truncnorm_match_moments(0.5, 0.4, 0.0, 1.0), Error);
  // sd at or past the half-width fails the eligibility check outright.
  CHECK_THROWS_WITH(truncnorm_match_moments(0.5, 0.6, 0.0, 1.0), Contains("too large"));
  CHECK_THROWS_WITH(truncnorm_match_moments(1.2, 0.1, 0.0, 1.0), Contains("inside"));
  CHECK_THROWS_AS(truncnorm_match_moments(0.5, 0.0, 0.0, 1.0), Error);
  CHECK_THROWS_AS(truncnorm_match_moments(0.5, 0.1, 1.0, 0.0), Error);
}

TEST_CASE("generate produces a consistent dataset") {
  MarketSpec spec = k2_market(3);
  spec.n_consumers = 50;
  const SynthResult res = generate(spec);
  const ChoiceDataset& ds = res.data;

  CHECK(ds.n_obs() == 50);
  CHECK(ds.n_alts == 3);
  CHECK(ds.alt_attr_names == std::vector<std::string>{"price"});
  CHECK(ds.covariate_names == std::vector<std::string>{"age"});
  CHECK(ds.has_timestamps);
  CHECK(res.obs_segment.size() == 50);
  CHECK(res.true_params.n_experts() == 2);
  CHECK(bitwise_equal(res.true_params.gate, spec.gate));
  CHECK_FALSE(res.threshold.has_value());
  CHECK(res.elasticity_feature.empty());

  for (int n = 0; n < 50; ++n) {
    CHECK(res.obs_segment[n] >= 0);
    CHECK(res.obs_segment[n] < 2);
    CHECK(ds.chosen[n] >= 0);
    CHECK(ds.chosen[n] < 3);
    CHECK(ds.covariates(n, 0) >= 18.0);
    CHECK(ds.covariates(n, 0) <= 70.0);
    for (int j = 0; j < 3; ++j) {
      CHECK(ds.alt_features(n, ds.feature_col(0, j)) >= 5.99);
      CHECK(ds.alt_features(n, ds.feature_col(0, j)) <= 12.0);
    }
  }
}

TEST_CASE("generation is deterministic per seed and per consumer") {
  MarketSpec spec = k2_market(9);
  spec.n_consumers = 40;

  const SynthResult a = generate(spec);
  const SynthResult b = generate(spec);
  CHECK(bitwise_equal(a.data.alt_features, b.data.alt_features));
  CHECK(bitwise_equal(a.data.covariates, b.data.covariates));
  CHECK(a.data.chosen == b.data.chosen);
  CHECK(a.obs_segment == b.obs_segment);

  MarketSpec other = spec;
  other.seed = 10;
  const SynthResult c = generate(other);
  CHECK_FALSE(bitwise_equal(a.data.alt_features, c.data.alt_features));

  // Consumer substreams: growing the population leaves earlier consumers
  // untouched.
  MarketSpec bigger = spec;
  bigger.n_consumers = 80;
  const SynthResult d = generate(bigger);
  CHECK(bitwise_equal(a.data.alt_features, d.data.alt_features.topRows(40)));
  CHECK(bitwise_equal(a.data.covariates, d.data.covariates.topRows(40)));
  for (int n = 0; n < 40; ++n) {
    CHECK(a.data.chosen[n] == d.data.chosen[n]);
    CHECK(a.obs_segment[n] == d.obs_segment[n]);
  }
}

TEST_CASE("occasions share the consumer and advance in time") {
  MarketSpec spec = k2_market(5);
  spec.n_consumers = 6;
  spec.occasions_per_consumer = 4;
  const SynthResult res = generate(spec);
  const ChoiceDataset& ds = res.data;
  CHECK(ds.n_obs() == 24);
  for (int c = 0; c < 6; ++c) {
    for (int o = 1; o < 4; ++o) {
      const int n = c * 4 + o;
      CHECK(ds.consumer_ids[n] == ds.consumer_ids[n - 1]);
      CHECK((ds.covariates.row(n) - ds.covariates.row(n - 1)).cwiseAbs().maxCoeff() == 0.0);
      CHECK(res.obs_segment[n] == res.obs_segment[n - 1]);
      CHECK(ds.timestamps[n] > ds.timestamps[n - 1]);
    }
  }
}

TEST_CASE("market validation rejects inconsistent specs") {
  using doctest::Contains;
  const auto broken = [](auto&& tweak) {
    MarketSpec m = k2_market(1);
    tweak(m);
    return m;
  };

  CHECK_THROWS_WITH(broken([](MarketSpec& m) { m.n_consumers = 0; }).validate(),
                    Contains("n_consumers"));
  CHECK_THROWS_WITH(broken([](MarketSpec& m) { m.n_alts = 1; }).validate(),
                    Contains("alternatives"));
  CHECK_THROWS_WITH(broken([](MarketSpec& m) { m.attr_names[0] = "cost"; }).validate(),
                    Contains("price"));
  CHECK_THROWS_WITH(
      broken([](MarketSpec& m) { m.attr_dists[0].family = Dist::Family::Bernoulli; }).validate(),
      Contains("Bernoulli"));
  CHECK_THROWS_WITH(broken([](MarketSpec& m) { m.attr_dists[0].lo = 3.0; }).validate(),
                    Contains("support"));
  CHECK_THROWS_WITH(broken([](MarketSpec& m) {
                      m.attr_names.push_back("discount");
                      m.attr_dists.push_back(tn(0.5, 0.2, 0.0, 1.5));
                      for (auto& s : m.segment_params) s.beta.conservativeResize(2);
                    }).validate(),
                    Contains("fraction"));
  CHECK_THROWS_WITH(
      broken([](MarketSpec& m) { m.target_shares = Eigen::Vector2d(0.6, 0.6); }).validate(),
      Contains("sum to 1"));
  CHECK_THROWS_WITH(
      broken([](MarketSpec& m) { m.target_shares = Eigen::Vector2d(1.2, -0.2); }).validate(),
      Contains("positive"));
  CHECK_THROWS_WITH(
      broken([](MarketSpec& m) { m.target_shares = Eigen::Vector3d(0.4, 0.3, 0.3); }).validate(),
      Contains("K entries"));
  CHECK_THROWS_WITH(
      broken([](MarketSpec& m) { m.segment_params[0].beta.conservativeResize(2); }).validate(),
      Contains("beta length"));
  CHECK_THROWS_WITH(
      broken([](MarketSpec& m) { m.segment_params[1].asc.conservativeResize(1); }).validate(),
      Contains("J-1"));
  CHECK_THROWS_WITH(broken([](MarketSpec& m) { m.gate.conservativeResize(1, 3); }).validate(),
                    Contains("gate"));
  CHECK_THROWS_WITH(
      broken([](MarketSpec& m) { m.segment_elasticity = Eigen::Vector3d(-1, -1, -1); }).validate(),
      Contains("segment_elasticity"));
  CHECK_THROWS_WITH(
      broken([](MarketSpec& m) { m.threshold = DiscountThreshold{0.2, 0.5, 5}; }).validate(),
      Contains("segment out of range"));
  CHECK_THROWS_WITH(
      broken([](MarketSpec& m) { m.threshold = DiscountThreshold{1.0, 0.5, 0}; }).validate(),
      Contains("knee"));
}

TEST_CASE("bundled markets validate and carry their design") {
  const MarketSpec def = default_market(1);
  def.validate();
  CHECK(def.n_segments() == 4);
  CHECK(def.target_shares.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(def.threshold.has_value());
  CHECK(def.emit_elasticity_feature);
  CHECK(def.segment_elasticity.size() == 4);

  const MarketSpec k2 = k2_market(1);
  k2.validate();
  CHECK(k2.n_segments() == 2);
  CHECK(k2.segment_params[0].beta[0] == doctest::Approx(-2.0));
  CHECK(k2.segment_params[1].beta[0] == doctest::Approx(-0.4));

  const MarketSpec mnl = mnl_market(1);
  mnl.validate();
  CHECK(mnl.n_segments() == 1);
  CHECK(mnl.gate.rows() == 0);
}

TEST_CASE("gate calibration hits the target shares") {
  MarketSpec spec = k2_market(21);
  spec.n_consumers = 20000;

  // Knock the calibrated intercept off target, recalibrate, and confirm the
  // planted shares come back.
  spec.gate(0, 0) += 1.3;
  calibrate_gate_intercepts(spec);
  const SynthResult res = generate(spec);
  const double share0 =
      std::accumulate(res.obs_segment.begin(), res.obs_segment.end(), 0.0,
                      [](double acc, int s) { return acc + (s == 0 ? 1.0 : 0.0); }) /
      res.obs_segment.size();
  CHECK(std::abs(share0 - 0.5) < 0.02);

  CHECK_THROWS_AS(calibrate_gate_intercepts(spec, 500), Error);
}

TEST_CASE("planted segment shares track the market targets") {
  MarketSpec spec = default_market(31);
  spec.n_consumers = 20000;
  const SynthResult res = generate(spec);
  Eigen::Vector4d counts = Eigen::Vector4d::Zero();
  for (int s : res.obs_segment) counts[s] += 1.0;
  counts /= res.obs_segment.size();
  for (int k = 0; k < 4; ++k) CHECK(std::abs(counts[k] - spec.target_shares[k]) < 0.02);
}

TEST_CASE("elasticity feature centers on the planted segment targets") {
  MarketSpec spec = default_market(41);
  spec.n_consumers = 4000;
  const SynthResult res = generate(spec);
  REQUIRE(res.elasticity_feature.size() == 4000);

  Eigen::Vector4d sums = Eigen::Vector4d::Zero();
  Eigen::Vector4d counts = Eigen::Vector4d::Zero();
  for (std::size_t n = 0; n < res.elasticity_feature.size(); ++n) {
    sums[res.obs_segment[n]] += res.elasticity_feature[n];
    counts[res.obs_segment[n]] += 1.0;
  }
  for (int k = 0; k < 4; ++k) {
    REQUIRE(counts[k] > 100);
    CHECK(std::abs(sums[k] / counts[k] - spec.segment_elasticity[k]) < 0.05);
  }

  // The feature requires per-segment targets.
  MarketSpec bare = k2_market(1);
  bare.n_consumers = 10;
  bare.emit_elasticity_feature = true;
  CHECK_THROWS_AS(generate(bare), Error);
}
