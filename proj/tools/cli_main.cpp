// choicekit command-line front end: simulate -> preprocess -> fit ->
// benchmark -> analyze.  Every command writes a manifest.json echoing the
// fully resolved configuration, so any run can be reproduced from its
// manifest alone.  Exit codes: 0 success, 2 usage/input error,
// 3 non-convergence (fit) or no successful row (benchmark).
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "choicekit/analysis.hpp"
#include "choicekit/estimation.hpp"
#include "choicekit/evaluation.hpp"
#include "choicekit/serialize.hpp"
#include "choicekit/synthgen.hpp"

namespace ck = choicekit;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNotConverged = 3;

// The config file must be readable before CLI11 parses (flags override its
// values), so it is pre-scanned from argv.
json preload_config(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return json::parse(ck::read_text_file(argv[i + 1]));
    if (a.rfind("--config=", 0) == 0) return json::parse(ck::read_text_file(a.substr(9)));
  }
  return json::object();
}

// Config files may be flat or keyed by command name.
json command_config(const json& root, const std::string& cmd) {
  if (root.contains(cmd) && root.at(cmd).is_object()) return root.at(cmd);
  return root;
}

struct Cfg {
  json j;
  bool has(const char* key) const { return j.contains(key); }
  template <class T>
  void get(const char* key, T& var) const {
    if (j.contains(key)) var = j.at(key).get<T>();
  }
};

std::string default_out() {
  if (const char* env = std::getenv("CHOICEKIT_OUT")) return env;
  return ".";
}

std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

void write_manifest(const std::string& out, const std::string& cmd, json config) {
  json manifest = {
      {"tool", "choicekit"}, {"version", ck::kVersion}, {"command", cmd}, {"config", config}};
  ck::write_text_file(join(out, "manifest.json"), manifest.dump(2) + "\n");
}

void ensure_out_dir(const std::string& out) {
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  ck::require(!ec, "cannot create output directory '" + out + "'");
}

ck::ChoiceDataset load_dataset(const std::string& data_path, const std::string& schema_path) {
  ck::require(!data_path.empty(), "--data is required");
  ck::require(!schema_path.empty(), "--schema is required");
  const ck::CsvSchema schema = ck::CsvSchema::load(schema_path);
  ck::ChoiceDataset ds = ck::ingest_csv(data_path, schema);
  ck::require(ds.n_obs() > 0, "dataset '" + data_path + "' has no rows");
  return ds;
}

std::string segment_label(int k) { return "segment_" + std::to_string(k); }

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::string preset = "retail";
  std::string market_file;
  int n = -1;          // -1: keep the preset's size
  int occasions = -1;  // -1: keep the preset's value
  std::uint64_t seed = 1;
  bool seed_given = false;
  std::string out = default_out();
};

int cmd_simulate(const SimulateArgs& a) {
  ck::MarketSpec spec;
  if (!a.market_file.empty()) {
    spec = ck::market_from_json(json::parse(ck::read_text_file(a.market_file)));
  } else if (a.preset == "retail") {
    spec = ck::default_market();
  } else if (a.preset == "k2") {
    spec = ck::k2_market();
  } else if (a.preset == "mnl") {
    spec = ck::mnl_market();
  } else {
    ck::fail("unknown preset '" + a.preset + "' (expected retail, k2, or mnl)");
  }
  if (a.n != -1) {
    ck::require(a.n >= 1, "--n must be >= 1");
    spec.n_consumers = a.n;
  }
  if (a.occasions != -1) {
    ck::require(a.occasions >= 1, "--occasions must be >= 1");
    spec.occasions_per_consumer = a.occasions;
  }
  if (a.seed_given || a.market_file.empty()) spec.seed = a.seed;

  ensure_out_dir(a.out);
  const ck::SynthResult res = ck::generate(spec);

  ck::ExtraColumns extra;
  std::vector<std::string> ignore;
  if (!res.elasticity_feature.empty()) {
    extra.emplace_back("est_price_elasticity", res.elasticity_feature);
    ignore.push_back("est_price_elasticity");
  }
  ck::write_dataset_csv(res.data, join(a.out, "data.csv"), extra);
  ck::schema_for(res.data, ignore).save(join(a.out, "schema.json"));

  json truth = {{"market", ck::market_to_json(spec)},
                {"true_params", ck::params_to_json(ck::ModelParams{res.true_params})},
                {"obs_segment", res.obs_segment}};
  truth["threshold"] = res.threshold ? json{{"knee", res.threshold->knee},
                                            {"boost", res.threshold->boost},
                                            {"segment", res.threshold->segment}}
                                     : json(nullptr);
  truth["elasticity_feature_column"] =
      res.elasticity_feature.empty() ? json(nullptr) : json("est_price_elasticity");
  ck::write_text_file(join(a.out, "truth.json"), truth.dump(2) + "\n");

  write_manifest(a.out, "simulate",
                 {{"preset", a.market_file.empty() ? a.preset : "file"},
                  {"market", a.market_file},
                  {"n", spec.n_consumers},
                  {"occasions", spec.occasions_per_consumer},
                  {"seed", spec.seed},
                  {"out", a.out}});
  std::cout << "wrote " << res.data.n_obs() << " observations to " << join(a.out, "data.csv")
            << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// preprocess

struct PreprocessArgs {
  std::string data, schema;
  bool impute = true;
  double max_missing = 0.2;
  std::string outliers = "flag";  // flag | drop | none
  double iqr_k = 1.5;
  double mahal_p = 0.999;
  std::vector<std::string> log_cols, std_cols, onehot_cols, ma_cols;
  int ma_window = 3;
  std::vector<double> split;  // empty or 3 ratios
  std::string strat_col = "chosen";
  std::uint64_t seed = 0;
  std::string out = default_out();
  json config_transforms;  // used when no transform flags are given
};

int cmd_preprocess(const PreprocessArgs& a) {
  ck::ChoiceDataset ds = load_dataset(a.data, a.schema);
  json report;

  if (a.impute) {
    ck::ImputeResult imp = ck::impute_missing(ds, a.max_missing);
    ds = std::move(imp.data);
    report["impute"] = {{"dropped_columns", imp.dropped_columns},
                        {"fill_counts", imp.fill_counts},
                        {"warnings", imp.warnings}};
  }

  ck::require(a.outliers == "flag" || a.outliers == "drop" || a.outliers == "none",
              "--outliers must be flag, drop, or none");
  if (a.outliers != "none") {
    const ck::OutlierReport rep = ck::flag_outliers(ds, a.iqr_k, a.mahal_p);
    report["outliers"] = {{"indices", rep.indices},
                          {"mahalanobis_used", rep.mahalanobis_used},
                          {"skipped_columns", rep.skipped_columns},
                          {"warnings", rep.warnings},
                          {"action", a.outliers}};
    if (a.outliers == "drop" && !rep.indices.empty()) {
      std::vector<int> keep;
      std::size_t next = 0;
      for (int n = 0; n < ds.n_obs(); ++n) {
        if (next < rep.indices.size() && rep.indices[next] == n)
          ++next;
        else
          keep.push_back(n);
      }
      ds = ds.subset(keep);
    }
  }

  ck::TransformSpec transforms;
  const bool flag_transforms = !a.log_cols.empty() || !a.std_cols.empty() ||
                               !a.onehot_cols.empty() || !a.ma_cols.empty();
  if (flag_transforms) {
    for (const auto& c : a.log_cols)
      transforms.push_back({ck::Transform::Kind::Log, c, a.ma_window});
    for (const auto& c : a.onehot_cols)
      transforms.push_back({ck::Transform::Kind::OneHot, c, a.ma_window});
    for (const auto& c : a.ma_cols)
      transforms.push_back({ck::Transform::Kind::MovingAverage, c, a.ma_window});
    for (const auto& c : a.std_cols)
      transforms.push_back({ck::Transform::Kind::Standardize, c, a.ma_window});
  } else if (a.config_transforms.is_array()) {
    for (const auto& t : a.config_transforms) {
      const std::string kind = t.at("kind").get<std::string>();
      ck::Transform tr;
      if (kind == "log")
        tr.kind = ck::Transform::Kind::Log;
      else if (kind == "standardize")
        tr.kind = ck::Transform::Kind::Standardize;
      else if (kind == "onehot")
        tr.kind = ck::Transform::Kind::OneHot;
      else if (kind == "moving_average")
        tr.kind = ck::Transform::Kind::MovingAverage;
      else
        ck::fail("unknown transform kind '" + kind + "'");
      tr.column = t.at("column").get<std::string>();
      tr.window = t.value("window", a.ma_window);
      transforms.push_back(tr);
    }
  }
  if (!transforms.empty()) ds = ck::transform_features(ds, transforms);

  ensure_out_dir(a.out);
  ck::write_dataset_csv(ds, join(a.out, "clean.csv"));
  ck::schema_for(ds).save(join(a.out, "clean_schema.json"));

  if (!a.split.empty()) {
    ck::require(a.split.size() == 3, "--split needs exactly 3 ratios");
    const ck::SplitIndices idx =
        ck::stratified_split(ds, {a.split[0], a.split[1], a.split[2]}, a.strat_col, a.seed);
    json split_json = {{"train", idx.train},
                       {"validation", idx.validation},
                       {"test", idx.test},
                       {"warnings", idx.warnings}};
    ck::write_text_file(join(a.out, "split.json"), split_json.dump() + "\n");
    report["split"] = {{"n_train", idx.train.size()},
                       {"n_validation", idx.validation.size()},
                       {"n_test", idx.test.size()},
                       {"warnings", idx.warnings}};
  }

  report["n_obs"] = ds.n_obs();
  ck::write_text_file(join(a.out, "report.json"), report.dump(2) + "\n");

  json tj = json::array();
  for (const auto& t : transforms) {
    const char* kind = t.kind == ck::Transform::Kind::Log            ? "log"
                       : t.kind == ck::Transform::Kind::Standardize  ? "standardize"
                       : t.kind == ck::Transform::Kind::OneHot       ? "onehot"
                                                                     : "moving_average";
    tj.push_back({{"kind", kind}, {"column", t.column}, {"window", t.window}});
  }
  write_manifest(a.out, "preprocess",
                 {{"data", a.data},
                  {"schema", a.schema},
                  {"impute", a.impute},
                  {"max_missing", a.max_missing},
                  {"outliers", a.outliers},
                  {"iqr_k", a.iqr_k},
                  {"mahal_p", a.mahal_p},
                  {"transforms", tj},
                  {"split", a.split},
                  {"strat_col", a.strat_col},
                  {"seed", a.seed},
                  {"out", a.out}});
  std::cout << "wrote " << ds.n_obs() << " observations to " << join(a.out, "clean.csv") << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
  std::string data, schema;
  std::string family = "mnl";
  std::string k;  // "", integer, or "select"
  std::vector<int> k_candidates{1, 2, 3, 4};
  int folds = 5;
  double tol = 1e-6;
  int max_iters = 500;
  int inner_iters = 25;
  int restarts = 5;
  std::uint64_t seed = 0;
  int draws = 100;
  bool freeze_std = false;
  bool lognormal_price = false;
  std::string method = "em";
  std::string out = default_out();
  bool draws_given = false, freeze_given = false, lognormal_given = false, method_given = false,
       k_given = false;
};

int cmd_fit(const FitArgs& a) {
  const ck::Family family = ck::family_from_string(a.family);
  const bool mixture = family == ck::Family::Lcm || family == ck::Family::Moe;
  ck::require(!a.k_given || mixture, "--k only applies to the lcm and moe families");
  ck::require(!a.method_given || family == ck::Family::Moe,
              "--method only applies to the moe family");
  ck::require(!(a.draws_given || a.freeze_given || a.lognormal_given) || family == ck::Family::Mxl,
              "--draws, --freeze-std and --lognormal-price only apply to the mxl family");

  ck::ChoiceDataset ds = load_dataset(a.data, a.schema);
  ds.validate_for_fit();

  ck::FitConfig cfg;
  cfg.max_em_iters = a.max_iters;
  cfg.max_opt_iters = a.max_iters;
  cfg.rel_ll_tol = a.tol;
  cfg.inner.max_iters = a.inner_iters;
  cfg.n_restarts = a.restarts;
  cfg.seed = a.seed;
  cfg.mxl_draws = a.draws;
  cfg.mxl_freeze_std = a.freeze_std;
  if (a.lognormal_price) cfg.mxl_lognormal_price = ds.price_attr();
  if (a.method == "em")
    cfg.moe_method = ck::FitConfig::MoeMethod::Em;
  else if (a.method == "direct")
    cfg.moe_method = ck::FitConfig::MoeMethod::Direct;
  else
    ck::fail("--method must be em or direct");
  cfg.k_candidates = a.k_candidates;

  ensure_out_dir(a.out);
  std::optional<ck::CvSelection> cv;
  if (a.k == "select") {
    ck::require(family == ck::Family::Moe, "--k select is only wired for the moe family");
    cv = ck::select_k_by_cv(ds, a.k_candidates, a.folds, cfg);
    cfg.k_experts = cv->chosen_k;
  } else if (!a.k.empty()) {
    std::size_t pos = 0;
    const int k = std::stoi(a.k, &pos);
    ck::require(pos == a.k.size() && k >= 1, "--k must be a positive integer or 'select'");
    cfg.k_experts = k;
  }

  ck::FitResult fit;
  switch (family) {
    case ck::Family::Mnl: fit = ck::fit_mnl(ds, cfg); break;
    case ck::Family::Mxl: fit = ck::fit_mxl(ds, cfg); break;
    case ck::Family::Lcm: fit = ck::fit_lcm(ds, cfg); break;
    case ck::Family::Moe: fit = ck::fit_moe(ds, cfg); break;
  }

  json model = ck::fit_result_to_json(fit);
  model["family"] = a.family;
  ck::write_text_file(join(a.out, "model.json"), model.dump(2) + "\n");
  if (cv) ck::write_text_file(join(a.out, "cv_table.json"), ck::cv_to_json(*cv).dump(2) + "\n");

  write_manifest(a.out, "fit",
                 {{"data", a.data},
                  {"schema", a.schema},
                  {"family", a.family},
                  {"k", cfg.k_experts},
                  {"k_selected_by_cv", cv.has_value()},
                  {"k_candidates", a.k_candidates},
                  {"folds", a.folds},
                  {"tol", a.tol},
                  {"max_iters", a.max_iters},
                  {"inner_iters", a.inner_iters},
                  {"restarts", a.restarts},
                  {"seed", a.seed},
                  {"draws", a.draws},
                  {"freeze_std", a.freeze_std},
                  {"lognormal_price", a.lognormal_price},
                  {"method", a.method},
                  {"out", a.out}});

  std::cout << ck::family_display_name(family) << ": ll=" << ck::format_double(fit.final_ll)
            << " iterations=" << fit.iterations << (fit.converged ? "" : " (not converged)")
            << "\n";
  for (const auto& w : fit.warnings) std::cerr << "warning: " << w << "\n";
  return fit.converged ? kExitOk : kExitNotConverged;
}

// ---------------------------------------------------------------------------
// benchmark

struct BenchmarkArgs {
  std::string data, schema;
  std::vector<double> ratios{0.7, 0.15, 0.15};
  std::string strat_col = "chosen";
  std::uint64_t seed = 0;
  std::vector<int> k_candidates{1, 2, 3, 4};
  int k = 2;
  double tol = 1e-6;
  int max_iters = 500;
  int restarts = 5;
  int draws = 100;
  std::string out = default_out();
};

int cmd_benchmark(const BenchmarkArgs& a) {
  ck::ChoiceDataset ds = load_dataset(a.data, a.schema);
  ds.validate_for_fit();
  ck::require(a.ratios.size() == 3, "--ratios needs exactly 3 values");

  ck::FitConfig cfg;
  cfg.k_experts = a.k;
  cfg.k_candidates = a.k_candidates;
  cfg.rel_ll_tol = a.tol;
  cfg.max_em_iters = a.max_iters;
  cfg.max_opt_iters = a.max_iters;
  cfg.n_restarts = a.restarts;
  cfg.mxl_draws = a.draws;
  cfg.seed = a.seed;

  const ck::SplitIndices split =
      ck::stratified_split(ds, {a.ratios[0], a.ratios[1], a.ratios[2]}, a.strat_col, a.seed);
  const ck::BenchmarkReport report = ck::run_benchmark(ds, split, cfg);

  ensure_out_dir(a.out);
  ck::write_text_file(join(a.out, "metrics.csv"), report.to_csv());
  ck::write_text_file(join(a.out, "metrics.json"), ck::benchmark_to_json(report).dump(2) + "\n");
  write_manifest(a.out, "benchmark",
                 {{"data", a.data},
                  {"schema", a.schema},
                  {"ratios", a.ratios},
                  {"strat_col", a.strat_col},
                  {"seed", a.seed},
                  {"k", a.k},
                  {"k_candidates", a.k_candidates},
                  {"tol", a.tol},
                  {"max_iters", a.max_iters},
                  {"restarts", a.restarts},
                  {"draws", a.draws},
                  {"out", a.out}});

  bool any_ok = false;
  for (const auto& r : report.rows) {
    if (r.ok)
      any_ok = true;
    else
      std::cerr << "warning: " << r.model << " failed: " << r.error << "\n";
  }
  std::cout << report.to_csv();
  return any_ok ? kExitOk : kExitNotConverged;
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeArgs {
  std::string model, data, schema;
  std::string price_attr = "price";
  std::string discount_attr = "discount";
  bool discount_given = false;
  int alt = 0;
  int obs = 0;
  std::vector<double> grid{0.0, 0.05, 0.10, 0.15, 0.20, 0.25};
  double knee = 0.2;
  double boost = 0.0;
  int segment = 0;
  bool threshold_given = false;
  std::string out = default_out();
};

int cmd_analyze(const AnalyzeArgs& a) {
  ck::require(!a.model.empty(), "--model is required");
  const json mj = json::parse(ck::read_text_file(a.model));
  const json& pj = mj.contains("params")        ? mj.at("params")
                   : mj.contains("true_params") ? mj.at("true_params")
                                                : mj;
  const ck::ModelParams params = ck::params_from_json(pj);

  ck::ChoiceDataset ds = load_dataset(a.data, a.schema);
  ds.validate_for_fit();

  ck::MoeParams moe;
  if (const auto* p = std::get_if<ck::MoeParams>(&params)) {
    moe = *p;
  } else if (const auto* p = std::get_if<ck::MnlParams>(&params)) {
    moe.experts = {*p};
    moe.gate = Eigen::MatrixXd::Zero(0, ds.covariates.cols() + 1);
  } else {
    ck::fail("the segment elasticity report requires an MoE or MNL model");
  }
  const int K = moe.n_experts();

  // A planted threshold travels with truth.json; flags override it.
  std::optional<ck::DiscountThreshold> threshold;
  if (a.threshold_given) {
    threshold = ck::DiscountThreshold{a.knee, a.boost, a.segment};
  } else if (mj.contains("threshold") && !mj.at("threshold").is_null()) {
    const json& t = mj.at("threshold");
    threshold = ck::DiscountThreshold{t.at("knee").get<double>(), t.at("boost").get<double>(),
                                      t.at("segment").get<int>()};
  }

  ensure_out_dir(a.out);

  // Segment shares and per-segment mean own-price elasticity.
  const ck::SegmentElasticityReport seg = ck::segment_elasticity_report(ds, moe);
  {
    std::string csv = "Segment,Percentage (%),Soft Percentage (%),Price Elasticity,N\n";
    for (const auto& r : seg.rows) {
      csv += segment_label(r.segment) + "," + ck::format_double(r.share_pct) + "," +
             ck::format_double(r.soft_share_pct) + ",";
      if (r.has_elasticity) csv += ck::format_double(r.mean_own_price_elasticity);
      csv += "," + std::to_string(r.n_obs) + "\n";
    }
    ck::write_text_file(join(a.out, "segments.csv"), csv);
  }

  // Discount response curve at the mean feature point; the headline increase
  // column averages the per-segment deltas with the dataset's mean gate
  // weights.  Skipped when the dataset has no discount attribute, unless one
  // was named explicitly.
  const int disc = ds.attr_index(a.discount_attr);
  ck::require(disc >= 0 || !a.discount_given,
              "analyze: attribute '" + a.discount_attr + "' not in the dataset");
  if (disc >= 0) {
    ck::require(a.alt >= 0 && a.alt < ds.n_alts, "analyze: --alt out of range");
    ck::ChoiceObservation base = ds.observation(0);
    base.alt_features = ck::feature_means(ds);
    base.covariates = ds.covariates.colwise().mean().transpose();

    const ck::DiscountCurve curve =
        ck::discount_response_curve(moe, base, a.grid, a.alt, disc, threshold);

    Eigen::VectorXd wbar = Eigen::VectorXd::Zero(K);
    for (int n = 0; n < ds.n_obs(); ++n)
      wbar += ck::gate_weights(ds.covariates.row(n).transpose(), moe);
    wbar /= static_cast<double>(ds.n_obs());

    std::string csv = "Discount Level (%),Purchase Probability Increase (%),Most Affected Segment";
    for (int k = 0; k < K; ++k) csv += "," + segment_label(k) + " (%)";
    csv += "\n";
    for (std::size_t g = 0; g < curve.grid.size(); ++g) {
      const Eigen::VectorXd delta = curve.delta_pct.col(static_cast<Eigen::Index>(g));
      int most = 0;
      delta.maxCoeff(&most);
      csv += ck::format_double(100.0 * curve.grid[g]) + "," +
             ck::format_double(wbar.dot(delta)) + "," +
             (delta.maxCoeff() > 1e-12 ? segment_label(most) : std::string("-"));
      for (int k = 0; k < K; ++k) csv += "," + ck::format_double(delta[k]);
      csv += "\n";
    }
    ck::write_text_file(join(a.out, "discount_curve.csv"), csv);
  }

  // Shapley attribution of one observation's target-alternative probability.
  {
    ck::require(a.obs >= 0 && a.obs < ds.n_obs(), "analyze: --obs out of range");
    const ck::ChoiceObservation obs = ds.observation(a.obs);
    const ck::ShapleyAttribution attr =
        ck::shapley_attribution(obs, params, a.alt, ck::feature_means(ds));
    json phi = json::object();
    for (std::size_t i = 0; i < ds.alt_attr_names.size(); ++i)
      phi[ds.alt_attr_names[i]] = attr.phi[static_cast<Eigen::Index>(i)];
    const double residual =
        attr.phi.sum() - (attr.full_value - attr.baseline_value);
    json out = {{"obs", a.obs},
                {"alt", a.alt},
                {"phi", phi},
                {"baseline_value", attr.baseline_value},
                {"full_value", attr.full_value},
                {"efficiency_residual", residual}};
    ck::write_text_file(join(a.out, "attribution.json"), out.dump(2) + "\n");
  }

  json threshold_json(nullptr);
  if (threshold)
    threshold_json = {
        {"knee", threshold->knee}, {"boost", threshold->boost}, {"segment", threshold->segment}};
  write_manifest(a.out, "analyze",
                 {{"model", a.model},
                  {"data", a.data},
                  {"schema", a.schema},
                  {"price_attr", a.price_attr},
                  {"discount_attr", a.discount_attr},
                  {"alt", a.alt},
                  {"obs", a.obs},
                  {"grid", a.grid},
                  {"threshold", threshold_json},
                  {"out", a.out}});
  std::cout << "wrote segments.csv, " << (disc >= 0 ? "discount_curve.csv, " : "")
            << "attribution.json to " << a.out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"choicekit: consumer choice modeling toolkit"};
  app.require_subcommand(1);
  std::string config_path;

  json root_cfg;
  try {
    root_cfg = preload_config(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: bad config file: " << e.what() << "\n";
    return kExitUsage;
  }

  // simulate
  SimulateArgs sim;
  {
    const Cfg c{command_config(root_cfg, "simulate")};
    c.get("preset", sim.preset);
    c.get("market", sim.market_file);
    c.get("n", sim.n);
    c.get("occasions", sim.occasions);
    if (c.has("seed")) {
      c.get("seed", sim.seed);
      sim.seed_given = true;
    }
    c.get("out", sim.out);
  }
  CLI::App* s = app.add_subcommand("simulate", "Generate a synthetic market dataset");
  s->add_option("--config", config_path, "JSON config file (flags override it)");
  s->add_option("--preset", sim.preset, "Market preset: retail, k2, or mnl");
  s->add_option("--market", sim.market_file, "Market spec JSON (overrides --preset)");
  s->add_option("--n", sim.n, "Number of consumers");
  s->add_option("--occasions", sim.occasions, "Purchase occasions per consumer");
  CLI::Option* sim_seed_opt = s->add_option("--seed", sim.seed, "Generation seed");
  s->add_option("--out", sim.out, "Output directory");

  // preprocess
  PreprocessArgs pre;
  {
    const Cfg c{command_config(root_cfg, "preprocess")};
    c.get("data", pre.data);
    c.get("schema", pre.schema);
    c.get("impute", pre.impute);
    c.get("max_missing", pre.max_missing);
    c.get("outliers", pre.outliers);
    c.get("iqr_k", pre.iqr_k);
    c.get("mahal_p", pre.mahal_p);
    c.get("split", pre.split);
    c.get("strat_col", pre.strat_col);
    c.get("seed", pre.seed);
    c.get("out", pre.out);
    if (c.has("transforms")) pre.config_transforms = c.j.at("transforms");
  }
  CLI::App* p = app.add_subcommand("preprocess", "Impute, flag outliers, transform, and split");
  p->add_option("--config", config_path, "JSON config file (flags override it)");
  p->add_option("--data", pre.data, "Input CSV");
  p->add_option("--schema", pre.schema, "Column-role schema JSON");
  p->add_flag("--impute,!--no-impute", pre.impute, "Impute missing cells (default on)");
  p->add_option("--max-missing", pre.max_missing, "Drop columns above this missing fraction");
  p->add_option("--outliers", pre.outliers, "Outlier handling: flag, drop, or none");
  p->add_option("--iqr-k", pre.iqr_k, "IQR fence multiplier");
  p->add_option("--mahal-p", pre.mahal_p, "Mahalanobis chi-squared quantile");
  p->add_option("--log", pre.log_cols, "Log-transform column (repeatable)");
  p->add_option("--standardize", pre.std_cols, "Standardize column (repeatable)");
  p->add_option("--onehot", pre.onehot_cols, "One-hot encode categorical (repeatable)");
  p->add_option("--ma", pre.ma_cols, "Moving-average column or 'spend' (repeatable)");
  p->add_option("--ma-window", pre.ma_window, "Moving-average window");
  p->add_option("--split", pre.split, "Train,validation,test ratios")->delimiter(',');
  p->add_option("--strat-col", pre.strat_col, "Stratification column");
  p->add_option("--seed", pre.seed, "Split shuffle seed");
  p->add_option("--out", pre.out, "Output directory");

  // fit
  FitArgs fit;
  {
    const Cfg c{command_config(root_cfg, "fit")};
    c.get("data", fit.data);
    c.get("schema", fit.schema);
    c.get("family", fit.family);
    if (c.has("k")) {
      if (c.j.at("k").is_number_integer())
        fit.k = std::to_string(c.j.at("k").get<int>());
      else
        c.get("k", fit.k);
      fit.k_given = true;
    }
    c.get("k_candidates", fit.k_candidates);
    c.get("folds", fit.folds);
    c.get("tol", fit.tol);
    c.get("max_iters", fit.max_iters);
    c.get("inner_iters", fit.inner_iters);
    c.get("restarts", fit.restarts);
    c.get("seed", fit.seed);
    if (c.has("draws")) {
      c.get("draws", fit.draws);
      fit.draws_given = true;
    }
    if (c.has("freeze_std")) {
      c.get("freeze_std", fit.freeze_std);
      fit.freeze_given = true;
    }
    if (c.has("lognormal_price")) {
      c.get("lognormal_price", fit.lognormal_price);
      fit.lognormal_given = true;
    }
    if (c.has("method")) {
      c.get("method", fit.method);
      fit.method_given = true;
    }
    c.get("out", fit.out);
  }
  CLI::App* f = app.add_subcommand("fit", "Fit one model family");
  f->add_option("--config", config_path, "JSON config file (flags override it)");
  f->add_option("--data", fit.data, "Input CSV");
  f->add_option("--schema", fit.schema, "Column-role schema JSON");
  f->add_option("--family", fit.family, "Model family: mnl, mxl, lcm, or moe");
  CLI::Option* k_opt = f->add_option("--k", fit.k, "Expert count, or 'select' for CV selection");
  f->add_option("--k-candidates", fit.k_candidates, "Candidate K values for selection")
      ->delimiter(',');
  f->add_option("--folds", fit.folds, "CV folds for --k select");
  f->add_option("--tol", fit.tol, "Relative log-likelihood stopping tolerance");
  f->add_option("--max-iters", fit.max_iters, "Maximum EM / optimizer iterations");
  f->add_option("--inner-iters", fit.inner_iters, "M-step inner iteration cap");
  f->add_option("--restarts", fit.restarts, "Random restarts beyond the deterministic one");
  f->add_option("--seed", fit.seed, "Estimation seed");
  CLI::Option* draws_opt = f->add_option("--draws", fit.draws, "Simulation draws (mxl)");
  CLI::Option* freeze_opt = f->add_flag("--freeze-std", fit.freeze_std, "Pin mxl std at init");
  CLI::Option* logn_opt =
      f->add_flag("--lognormal-price", fit.lognormal_price, "Lognormal price coefficient (mxl)");
  CLI::Option* method_opt = f->add_option("--method", fit.method, "moe estimator: em or direct");
  f->add_option("--out", fit.out, "Output directory");

  // benchmark
  BenchmarkArgs bm;
  {
    const Cfg c{command_config(root_cfg, "benchmark")};
    c.get("data", bm.data);
    c.get("schema", bm.schema);
    c.get("ratios", bm.ratios);
    c.get("strat_col", bm.strat_col);
    c.get("seed", bm.seed);
    c.get("k_candidates", bm.k_candidates);
    c.get("k", bm.k);
    c.get("tol", bm.tol);
    c.get("max_iters", bm.max_iters);
    c.get("restarts", bm.restarts);
    c.get("draws", bm.draws);
    c.get("out", bm.out);
  }
  CLI::App* b = app.add_subcommand("benchmark", "Fit all four families and compare metrics");
  b->add_option("--config", config_path, "JSON config file (flags override it)");
  b->add_option("--data", bm.data, "Input CSV");
  b->add_option("--schema", bm.schema, "Column-role schema JSON");
  b->add_option("--ratios", bm.ratios, "Train,validation,test ratios")->delimiter(',');
  b->add_option("--strat-col", bm.strat_col, "Stratification column");
  b->add_option("--seed", bm.seed, "Split and estimation seed");
  b->add_option("--k-candidates", bm.k_candidates, "Candidate K values for lcm/moe")
      ->delimiter(',');
  b->add_option("--k", bm.k, "Fallback expert count when there is no validation part");
  b->add_option("--tol", bm.tol, "Relative log-likelihood stopping tolerance");
  b->add_option("--max-iters", bm.max_iters, "Maximum EM / optimizer iterations");
  b->add_option("--restarts", bm.restarts, "Random restarts");
  b->add_option("--draws", bm.draws, "Simulation draws (mxl)");
  b->add_option("--out", bm.out, "Output directory");

  // analyze
  AnalyzeArgs an;
  {
    const Cfg c{command_config(root_cfg, "analyze")};
    c.get("model", an.model);
    c.get("data", an.data);
    c.get("schema", an.schema);
    c.get("price_attr", an.price_attr);
    if (c.has("discount_attr")) {
      c.get("discount_attr", an.discount_attr);
      an.discount_given = true;
    }
    c.get("alt", an.alt);
    c.get("obs", an.obs);
    c.get("grid", an.grid);
    if (c.has("knee") || c.has("boost")) {
      c.get("knee", an.knee);
      c.get("boost", an.boost);
      c.get("segment", an.segment);
      an.threshold_given = true;
    }
    c.get("out", an.out);
  }
  CLI::App* z = app.add_subcommand("analyze", "Segment elasticities, discount curve, Shapley");
  z->add_option("--config", config_path, "JSON config file (flags override it)");
  z->add_option("--model", an.model, "Fitted model JSON (or truth.json)");
  z->add_option("--data", an.data, "Input CSV");
  z->add_option("--schema", an.schema, "Column-role schema JSON");
  z->add_option("--price-attr", an.price_attr, "Price attribute name");
  CLI::Option* disc_opt =
      z->add_option("--discount-attr", an.discount_attr, "Discount attribute name");
  z->add_option("--alt", an.alt, "Target alternative");
  z->add_option("--obs", an.obs, "Observation index for the Shapley report");
  z->add_option("--grid", an.grid, "Discount grid (fractions)")->delimiter(',');
  CLI::Option* knee_opt = z->add_option("--knee", an.knee, "Discount threshold knee");
  CLI::Option* boost_opt = z->add_option("--boost", an.boost, "Utility boost above the knee");
  z->add_option("--segment", an.segment, "Segment receiving the boost");
  z->add_option("--out", an.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  if (sim_seed_opt->count() > 0) sim.seed_given = true;
  if (k_opt->count() > 0) fit.k_given = true;
  if (draws_opt->count() > 0) fit.draws_given = true;
  if (freeze_opt->count() > 0) fit.freeze_given = true;
  if (logn_opt->count() > 0) fit.lognormal_given = true;
  if (method_opt->count() > 0) fit.method_given = true;
  if (knee_opt->count() > 0 || boost_opt->count() > 0) an.threshold_given = true;
  if (disc_opt->count() > 0) an.discount_given = true;

  try {
    if (s->parsed()) return cmd_simulate(sim);
    if (p->parsed()) return cmd_preprocess(pre);
    if (f->parsed()) return cmd_fit(fit);
    if (b->parsed()) return cmd_benchmark(bm);
    if (z->parsed()) return cmd_analyze(an);
  } catch (const ck::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
