#include <doctest.h>

#include <cmath>

#include <choicekit/analysis.hpp>
#include <choicekit/rng.hpp>
#include <choicekit/synthgen.hpp>

using namespace choicekit;

namespace {

// J=2, single attribute "price", prices (10, 12).
ChoiceObservation price_pair() {
  ChoiceObservation obs;
  obs.consumer_id = "c";
  obs.alt_features.resize(2, 1);
  obs.alt_features << 10.0, 12.0;
  obs.covariates.resize(1);
  obs.covariates << 0.5;
  obs.chosen = 0;
  return obs;
}

MnlParams price_mnl(double beta) {
  MnlParams p;
  p.beta = Eigen::VectorXd::Constant(1, beta);
  p.asc = Eigen::VectorXd::Zero(1);
  return p;
}

MoeParams two_expert_fixture() {
  MoeParams moe;
  moe.gate.resize(1, 2);
  moe.gate << 0.4, 1.2;  // non-constant gate on the single covariate
  moe.experts = {price_mnl(-0.65), price_mnl(-0.1)};
  moe.experts[0].asc[0] = 0.3;
  moe.experts[1].asc[0] = -0.2;
  return moe;
}

ChoiceObservation random_obs(Rng& rng, int J, int d_x, int d_z) {
  ChoiceObservation obs;
  obs.alt_features.resize(J, d_x);
  for (int j = 0; j < J; ++j) {
    obs.alt_features(j, 0) = rng.uniform(5.0, 20.0);  // price stays positive
    for (int a = 1; a < d_x; ++a) obs.alt_features(j, a) = rng.uniform(-1.0, 1.0);
  }
  obs.covariates.resize(d_z);
  for (int c = 0; c < d_z; ++c) obs.covariates[c] = rng.uniform(-1.0, 1.0);
  obs.chosen = 0;
  return obs;
}

}  // namespace

TEST_CASE("mnl elasticities match the closed form") {
  const ChoiceObservation obs = price_pair();
  const ModelParams params(price_mnl(-0.3));
  CHECK(own_price_elasticity(obs, params, 0) ==
        doctest::Approx(-1.0630310813226138).epsilon(1e-12));
  CHECK(own_price_elasticity(obs, params, 1) ==
        doctest::Approx(-2.3243627024128637).epsilon(1e-12));
  CHECK(cross_price_elasticity(obs, params, 1, 0) ==
        doctest::Approx(1.9369689186773862).epsilon(1e-12));
}

TEST_CASE("analytic elasticities agree with finite differences") {
  Rng rng(101);
  for (int rep = 0; rep < 10; ++rep) {
    const ChoiceObservation obs = random_obs(rng, 3, 2, 1);

    MnlParams mnl = price_mnl(rng.uniform(-1.0, -0.05));
    mnl.beta.conservativeResize(2);
    mnl.beta[1] = rng.uniform(-0.5, 0.5);
    mnl.asc = Eigen::VectorXd::Zero(2);
    const ModelParams pm(mnl);

    MoeParams moe = two_expert_fixture();
    for (auto& e : moe.experts) {
      e.beta.conservativeResize(2);
      e.beta[1] = rng.uniform(-0.5, 0.5);
      e.asc = Eigen::VectorXd::Zero(2);
    }
    const ModelParams pq(moe);

    for (const auto& params : {pm, pq}) {
      for (int alt = 0; alt < 3; ++alt) {
        const double a = own_price_elasticity(obs, params, alt, ElasticityMethod::Analytic);
        const double f = own_price_elasticity(obs, params, alt, ElasticityMethod::FiniteDifference);
        CHECK(std::abs(a - f) / std::max(1e-8, std::abs(a)) < 1e-4);
      }
      const double a = cross_price_elasticity(obs, params, 1, 0, ElasticityMethod::Analytic);
      const double f = cross_price_elasticity(obs, params, 1, 0,
                                              ElasticityMethod::FiniteDifference);
      CHECK(std::abs(a - f) / std::max(1e-8, std::abs(a)) < 1e-4);
    }
  }
}

TEST_CASE("elasticity signs follow negative price coefficients") {
  Rng rng(103);
  for (int rep = 0; rep < 5; ++rep) {
    const ChoiceObservation obs = random_obs(rng, 3, 1, 1);
    MoeParams moe = two_expert_fixture();
    moe.experts[0].asc = Eigen::VectorXd::Zero(2);
    moe.experts[1].asc = Eigen::VectorXd::Zero(2);
    const ModelParams params(moe);
    for (int alt = 0; alt < 3; ++alt) CHECK(own_price_elasticity(obs, params, alt) < 0.0);
    CHECK(cross_price_elasticity(obs, params, 1, 0) > 0.0);
    CHECK(cross_price_elasticity(obs, params, 2, 0) > 0.0);
  }
}

TEST_CASE("single-expert moe elasticity equals mnl") {
  const ChoiceObservation obs = price_pair();
  MoeParams one;
  one.gate.resize(0, 2);
  one.experts = {price_mnl(-0.3)};
  const double moe_e = own_price_elasticity(obs, ModelParams(one), 0);
  const double mnl_e = own_price_elasticity(obs, ModelParams(price_mnl(-0.3)), 0);
  CHECK(std::abs(moe_e - mnl_e) < 1e-10);
}

TEST_CASE("mnl substitutes proportionally; moe does not") {
  ChoiceObservation obs = price_pair();
  obs.alt_features.conservativeResize(3, 1);
  obs.alt_features << 10.0, 12.0, 11.0;

  MnlParams mnl = price_mnl(-0.3);
  mnl.asc = Eigen::VectorXd::Zero(2);
  const double c1 = cross_price_elasticity(obs, ModelParams(mnl), 1, 0);
  const double c2 = cross_price_elasticity(obs, ModelParams(mnl), 2, 0);
  CHECK(std::abs(c1 - c2) < 1e-8);  // IIA

  MoeParams moe = two_expert_fixture();
  moe.experts[0].asc = Eigen::Vector2d(0.3, -0.1);
  moe.experts[1].asc = Eigen::Vector2d(-0.2, 0.4);
  const double m1 = cross_price_elasticity(obs, ModelParams(moe), 1, 0);
  const double m2 = cross_price_elasticity(obs, ModelParams(moe), 2, 0);
  CHECK(std::abs(m1 - m2) > 0.05);  // mixing breaks proportional substitution
}

TEST_CASE("segment report shares and empties") {
  MarketSpec spec = k2_market(5);
  spec.n_consumers = 400;
  const SynthResult res = generate(spec);
  const SegmentElasticityReport rep = segment_elasticity_report(res.data, res.true_params);
  REQUIRE(rep.rows.size() == 2);
  double hard = 0.0, soft = 0.0;
  int n_total = 0;
  for (const auto& row : rep.rows) {
    hard += row.share_pct;
    soft += row.soft_share_pct;
    n_total += row.n_obs;
    CHECK(row.has_elasticity);
    CHECK(row.mean_own_price_elasticity < 0.0);
  }
  CHECK(hard == doctest::Approx(100.0).epsilon(1e-9));
  CHECK(soft == doctest::Approx(100.0).epsilon(1e-9));
  CHECK(n_total == res.data.n_obs());

  // A gate intercept of -50 starves expert 0 of every hard assignment.
  MoeParams starved = res.true_params;
  starved.gate(0, 0) = -50.0;
  starved.gate(0, 1) = 0.0;
  const SegmentElasticityReport rep2 = segment_elasticity_report(res.data, starved);
  CHECK(rep2.rows[0].n_obs == 0);
  CHECK_FALSE(rep2.rows[0].has_elasticity);
  CHECK(rep2.rows[1].n_obs == res.data.n_obs());
}

TEST_CASE("shapley axioms hold on enumeration fixtures") {
  Rng rng(107);
  for (int d : {3, 5, 6}) {
    // Random supermodular-ish game built from weights; only the axioms matter.
    std::vector<double> w(d);
    for (auto& x : w) x = rng.uniform(-2.0, 2.0);
    const auto value = [&](const std::vector<bool>& in) {
      double v = 0.0;
      for (int i = 0; i < d; ++i)
        if (in[i]) v += w[i];
      // Interaction between the first two players when both present.
      if (d >= 2 && in[0] && in[1]) v += 0.7;
      return std::tanh(v);
    };
    const Eigen::VectorXd phi = shapley_exact(d, value);

    std::vector<bool> all(d, true), none(d, false);
    CHECK(std::abs(phi.sum() - (value(all) - value(none))) < 1e-8);  // efficiency
  }

  // Dummy: a player that never changes the value gets exactly zero.
  const auto dummy_game = [](const std::vector<bool>& in) {
    return (in[0] ? 1.25 : 0.0) + (in[2] ? -0.5 : 0.0);
  };
  const Eigen::VectorXd phi = shapley_exact(3, dummy_game);
  CHECK(phi[1] == 0.0);

  // Symmetry: interchangeable players receive equal shares.
  const auto symmetric_game = [](const std::vector<bool>& in) {
    const int count = int(in[0]) + int(in[1]);
    return count * count * 0.31 + (in[2] ? 0.4 : 0.0);
  };
  const Eigen::VectorXd phi_sym = shapley_exact(3, symmetric_game);
  CHECK(std::abs(phi_sym[0] - phi_sym[1]) < 1e-10);
}

TEST_CASE("linear games have the closed-form attribution") {
  Rng rng(109);
  const int d = 5;
  Eigen::VectorXd beta(d), x(d), xbar(d);
  for (int i = 0; i < d; ++i) {
    beta[i] = rng.uniform(-1.0, 1.0);
    x[i] = rng.uniform(-2.0, 2.0);
    xbar[i] = rng.uniform(-2.0, 2.0);
  }
  const auto linear = [&](const std::vector<bool>& in) {
    double v = 0.0;
    for (int i = 0; i < d; ++i) v += beta[i] * (in[i] ? x[i] : xbar[i]);
    return v;
  };
  const Eigen::VectorXd phi = shapley_exact(d, linear);
  for (int i = 0; i < d; ++i) CHECK(std::abs(phi[i] - beta[i] * (x[i] - xbar[i])) < 1e-8);
}

TEST_CASE("shapley guards its enumeration limit") {
  const auto zero = [](const std::vector<bool>&) { return 0.0; };
  CHECK_THROWS_AS(shapley_exact(13, zero), Error);
  CHECK_THROWS_AS(shapley_exact(0, zero), Error);
}

TEST_CASE("attribution is efficient and ignores baseline-equal attributes") {
  MarketSpec spec = default_market(7);
  spec.n_consumers = 200;
  const SynthResult res = generate(spec);
  REQUIRE(res.data.n_alt_attrs() == 4);
  const ChoiceObservation obs = res.data.observation(3);
  const Eigen::MatrixXd baseline = feature_means(res.data);
  REQUIRE(baseline.rows() == res.data.n_alts);
  REQUIRE(baseline.cols() == 4);

  const ShapleyAttribution att =
      shapley_attribution(obs, ModelParams(res.true_params), 0, baseline);
  CHECK(att.phi.size() == 4);
  CHECK(std::abs(att.phi.sum() - (att.full_value - att.baseline_value)) < 1e-10);
  CHECK(att.full_value >= 0.0);
  CHECK(att.full_value <= 1.0);

  // Discount pinned to its baseline contributes exactly nothing.
  ChoiceObservation pinned = obs;
  pinned.alt_features.col(1) = baseline.col(1);
  const ShapleyAttribution att2 =
      shapley_attribution(pinned, ModelParams(res.true_params), 0, baseline);
  CHECK(att2.phi[1] == 0.0);
}

TEST_CASE("discount curve kinks strictly above the knee") {
  // Two experts over price and discount; expert 0 carries the threshold.
  MoeParams moe;
  moe.gate.resize(1, 2);
  moe.gate << 0.0, 0.8;
  MnlParams a, b;
  a.beta = Eigen::Vector2d(-0.4, 2.0);  // price, discount
  a.asc = Eigen::VectorXd::Zero(1);
  b.beta = Eigen::Vector2d(-0.1, 0.5);
  b.asc = Eigen::VectorXd::Zero(1);
  moe.experts = {a, b};

  ChoiceObservation base;
  base.alt_features.resize(2, 2);
  base.alt_features << 10.0, 0.0, 11.0, 0.0;
  base.covariates.resize(1);
  base.covariates << 0.2;
  base.chosen = 0;

  const std::vector<double> grid{0.0, 0.1, 0.2, 0.3};
  const DiscountThreshold thr{0.2, 1.5, 0};
  const DiscountCurve curve = discount_response_curve(moe, base, grid, 0, 1, thr);

  REQUIRE(curve.grid == grid);
  REQUIRE(curve.share_pct.rows() == 2);
  REQUIRE(curve.share_pct.cols() == 4);
  // Baseline is the zero-discount column; deltas are relative to it.
  CHECK(curve.baseline_share_pct[0] == doctest::Approx(curve.share_pct(0, 0)));
  CHECK(curve.delta_pct(0, 0) == doctest::Approx(0.0));
  CHECK(curve.delta_pct(1, 2) ==
        doctest::Approx(curve.share_pct(1, 2) - curve.baseline_share_pct[1]));

  // Shares rise with the discount for positive discount coefficients.
  for (int k = 0; k < 2; ++k)
    for (int g = 1; g < 4; ++g) CHECK(curve.share_pct(k, g) > curve.share_pct(k, g - 1));

  // The boost applies to expert 0 strictly above the knee: the jump from
  // 0.2 to 0.3 dwarfs the one from 0.1 to 0.2.  Expert 1 stays smooth.
  const double jump_below = curve.share_pct(0, 2) - curve.share_pct(0, 1);
  const double jump_above = curve.share_pct(0, 3) - curve.share_pct(0, 2);
  CHECK(jump_above > jump_below + 10.0);
  const double smooth_below = curve.share_pct(1, 2) - curve.share_pct(1, 1);
  const double smooth_above = curve.share_pct(1, 3) - curve.share_pct(1, 2);
  CHECK(std::abs(smooth_above - smooth_below) < 5.0);

  // At the knee itself the boost must not fire: recompute without the
  // threshold and compare the 0.2 column.
  const DiscountCurve plain = discount_response_curve(moe, base, grid, 0, 1);
  CHECK(curve.share_pct(0, 2) == doctest::Approx(plain.share_pct(0, 2)).epsilon(1e-12));
  CHECK(curve.share_pct(0, 3) > plain.share_pct(0, 3) + 5.0);
}
