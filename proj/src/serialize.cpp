#include "choicekit/serialize.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace choicekit {

namespace {

nlohmann::json vec_to_json(const Eigen::VectorXd& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd json_to_vec(const nlohmann::json& j) {
  require(j.is_array(), "expected a JSON array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

nlohmann::json mat_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_to_json(m.row(r).transpose()));
  return rows;
}

Eigen::MatrixXd json_to_mat(const nlohmann::json& j, Eigen::Index cols_if_empty) {
  require(j.is_array(), "expected a JSON array of rows");
  if (j.empty()) return Eigen::MatrixXd::Zero(0, cols_if_empty);
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    require(static_cast<Eigen::Index>(j[r].size()) == cols, "ragged JSON matrix");
    m.row(r) = json_to_vec(j[r]).transpose();
  }
  return m;
}

nlohmann::json mnl_fields(const MnlParams& p) {
  return {{"beta", vec_to_json(p.beta)}, {"asc", vec_to_json(p.asc)}};
}

MnlParams mnl_from_fields(const nlohmann::json& j) {
  MnlParams p;
  p.beta = json_to_vec(j.at("beta"));
  p.asc = json_to_vec(j.at("asc"));
  return p;
}

nlohmann::json dist_to_json(const Dist& d) {
  switch (d.family) {
    case Dist::Family::TruncNormal:
      return {{"family", "truncnormal"}, {"mean", d.mean}, {"sd", d.sd}, {"lo", d.lo}, {"hi", d.hi}};
    case Dist::Family::Bernoulli:
      return {{"family", "bernoulli"}, {"p", d.p}};
    case Dist::Family::Uniform:
      return {{"family", "uniform"}, {"lo", d.lo}, {"hi", d.hi}};
  }
  fail("unreachable distribution family");
}

Dist dist_from_json(const nlohmann::json& j) {
  const std::string fam = j.at("family").get<std::string>();
  Dist d;
  if (fam == "truncnormal") {
    d.family = Dist::Family::TruncNormal;
    d.mean = j.at("mean").get<double>();
    d.sd = j.at("sd").get<double>();
    d.lo = j.at("lo").get<double>();
    d.hi = j.at("hi").get<double>();
  } else if (fam == "bernoulli") {
    d.family = Dist::Family::Bernoulli;
    d.p = j.at("p").get<double>();
  } else if (fam == "uniform") {
    d.family = Dist::Family::Uniform;
    d.lo = j.at("lo").get<double>();
    d.hi = j.at("hi").get<double>();
  } else {
    fail("unknown distribution family '" + fam + "'");
  }
  return d;
}

}  // namespace

nlohmann::json params_to_json(const ModelParams& params) {
  return std::visit(
      [](const auto& p) -> nlohmann::json {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, MnlParams>) {
          nlohmann::json j = mnl_fields(p);
          j["family"] = "mnl";
          return j;
        } else if constexpr (std::is_same_v<T, MxlParams>) {
          return {{"family", "mxl"},
                  {"mean", vec_to_json(p.mean)},
                  {"log_std", vec_to_json(p.log_std)},
                  {"asc", vec_to_json(p.asc)},
                  {"n_draws", p.n_draws},
                  {"draw_seed", p.draw_seed},
                  {"lognormal_price", p.lognormal_price}};
        } else if constexpr (std::is_same_v<T, LcmParams>) {
          nlohmann::json classes = nlohmann::json::array();
          for (const auto& c : p.classes) classes.push_back(mnl_fields(c));
          return {{"family", "lcm"},
                  {"class_logits", vec_to_json(p.class_logits)},
                  {"classes", classes}};
        } else {
          nlohmann::json experts = nlohmann::json::array();
          for (const auto& e : p.experts) experts.push_back(mnl_fields(e));
          return {{"family", "moe"},
                  {"gate", mat_to_json(p.gate)},
                  {"gate_cols", p.gate.cols()},
                  {"experts", experts}};
        }
      },
      params);
}

ModelParams params_from_json(const nlohmann::json& j) {
  const std::string fam = j.at("family").get<std::string>();
  if (fam == "mnl") return mnl_from_fields(j);
  if (fam == "mxl") {
    MxlParams p;
    p.mean = json_to_vec(j.at("mean"));
    p.log_std = json_to_vec(j.at("log_std"));
    p.asc = json_to_vec(j.at("asc"));
    p.n_draws = j.at("n_draws").get<int>();
    p.draw_seed = j.at("draw_seed").get<std::uint64_t>();
    p.lognormal_price = j.at("lognormal_price").get<int>();
    return p;
  }
  if (fam == "lcm") {
    LcmParams p;
    p.class_logits = json_to_vec(j.at("class_logits"));
    for (const auto& c : j.at("classes")) p.classes.push_back(mnl_from_fields(c));
    return p;
  }
  if (fam == "moe") {
    MoeParams p;
    for (const auto& e : j.at("experts")) p.experts.push_back(mnl_from_fields(e));
    const Eigen::Index cols = j.contains("gate_cols") ? j.at("gate_cols").get<Eigen::Index>() : 0;
    p.gate = json_to_mat(j.at("gate"), cols);
    return p;
  }
  fail("unknown model family '" + fam + "'");
}

nlohmann::json fit_result_to_json(const FitResult& fit) {
  return {{"params", params_to_json(fit.params)},
          {"final_ll", fit.final_ll},
          {"ll_trace", fit.ll_trace},
          {"iterations", fit.iterations},
          {"converged", fit.converged},
          {"n_params", fit.n_params},
          {"warnings", fit.warnings}};
}

nlohmann::json cv_to_json(const CvSelection& cv) {
  nlohmann::json table = nlohmann::json::array();
  for (const auto& r : cv.table)
    table.push_back(
        {{"k", r.k}, {"mean_heldout_ll", r.mean_heldout_ll}, {"fold_ll", r.fold_ll}});
  return {{"chosen_k", cv.chosen_k}, {"table", table}};
}

nlohmann::json benchmark_to_json(const BenchmarkReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    nlohmann::json row = {{"model", r.model}, {"ok", r.ok}};
    if (r.ok) {
      row["log_likelihood"] = r.log_likelihood;
      row["n_params"] = r.n_params;
      row["aic"] = r.aic;
      row["bic"] = r.bic;
      row["accuracy_pct"] = r.accuracy_pct;
      row["auc"] = r.auc;
      if (r.selected_k > 0) row["selected_k"] = r.selected_k;
    } else {
      row["error"] = r.error;
    }
    rows.push_back(row);
  }
  return {{"rows", rows},
          {"n_train", report.n_train},
          {"n_validation", report.n_validation},
          {"n_test", report.n_test}};
}

nlohmann::json market_to_json(const MarketSpec& spec) {
  nlohmann::json attrs = nlohmann::json::array();
  for (std::size_t a = 0; a < spec.attr_names.size(); ++a) {
    nlohmann::json d = dist_to_json(spec.attr_dists[a]);
    d["name"] = spec.attr_names[a];
    attrs.push_back(d);
  }
  nlohmann::json covs = nlohmann::json::array();
  for (const auto& c : spec.covariates) {
    nlohmann::json d = dist_to_json(c.dist);
    d["name"] = c.name;
    covs.push_back(d);
  }
  nlohmann::json segments = nlohmann::json::array();
  for (const auto& s : spec.segment_params) segments.push_back(mnl_fields(s));

  nlohmann::json j = {{"n_consumers", spec.n_consumers},
                      {"occasions_per_consumer", spec.occasions_per_consumer},
                      {"n_alts", spec.n_alts},
                      {"attributes", attrs},
                      {"covariates", covs},
                      {"target_shares", vec_to_json(spec.target_shares)},
                      {"segments", segments},
                      {"gate", mat_to_json(spec.gate)},
                      {"gate_cols", spec.gate.cols()},
                      {"segment_elasticity", vec_to_json(spec.segment_elasticity)},
                      {"emit_elasticity_feature", spec.emit_elasticity_feature},
                      {"seed", spec.seed}};
  if (spec.threshold)
    j["threshold"] = {{"knee", spec.threshold->knee},
                      {"boost", spec.threshold->boost},
                      {"segment", spec.threshold->segment}};
  else
    j["threshold"] = nullptr;
  return j;
}

MarketSpec market_from_json(const nlohmann::json& j) {
  MarketSpec spec;
  spec.n_consumers = j.at("n_consumers").get<int>();
  spec.occasions_per_consumer = j.value("occasions_per_consumer", 1);
  spec.n_alts = j.at("n_alts").get<int>();
  for (const auto& a : j.at("attributes")) {
    spec.attr_names.push_back(a.at("name").get<std::string>());
    spec.attr_dists.push_back(dist_from_json(a));
  }
  for (const auto& c : j.at("covariates"))
    spec.covariates.push_back({c.at("name").get<std::string>(), dist_from_json(c)});
  spec.target_shares = json_to_vec(j.at("target_shares"));
  for (const auto& s : j.at("segments")) spec.segment_params.push_back(mnl_from_fields(s));
  const Eigen::Index cols = j.contains("gate_cols")
                                ? j.at("gate_cols").get<Eigen::Index>()
                                : static_cast<Eigen::Index>(spec.covariates.size()) + 1;
  spec.gate = json_to_mat(j.at("gate"), cols);
  if (j.contains("segment_elasticity"))
    spec.segment_elasticity = json_to_vec(j.at("segment_elasticity"));
  spec.emit_elasticity_feature = j.value("emit_elasticity_feature", false);
  spec.seed = j.value("seed", std::uint64_t{1});
  if (j.contains("threshold") && !j.at("threshold").is_null()) {
    const auto& t = j.at("threshold");
    spec.threshold = DiscountThreshold{t.at("knee").get<double>(), t.at("boost").get<double>(),
                                       t.at("segment").get<int>()};
  }
  spec.validate();
  return spec;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_dataset_csv(const ChoiceDataset& ds, const std::string& path,
                       const ExtraColumns& extra) {
  const int N = ds.n_obs();
  const int J = ds.n_alts;
  for (const auto& [name, col] : extra)
    require(static_cast<int>(col.size()) == N,
            "extra column '" + name + "' length does not match the dataset");

  std::ostringstream out;
  out << "consumer_id";
  for (std::size_t a = 0; a < ds.alt_attr_names.size(); ++a)
    for (int j = 0; j < J; ++j) out << ",alt" << j << "_" << ds.alt_attr_names[a];
  for (const auto& c : ds.covariate_names) out << "," << c;
  for (const auto& c : ds.categorical_names) out << "," << c;
  out << ",chosen";
  if (ds.has_timestamps) out << ",timestamp";
  for (const auto& [name, col] : extra) out << "," << name;
  out << "\n";

  for (int n = 0; n < N; ++n) {
    out << ds.consumer_ids[static_cast<std::size_t>(n)];
    for (std::size_t a = 0; a < ds.alt_attr_names.size(); ++a)
      for (int j = 0; j < J; ++j)
        out << "," << format_double(ds.alt_features(n, ds.feature_col(static_cast<int>(a), j)));
    for (Eigen::Index c = 0; c < ds.covariates.cols(); ++c)
      out << "," << format_double(ds.covariates(n, c));
    for (const auto& col : ds.categorical_values) out << "," << col[static_cast<std::size_t>(n)];
    out << "," << ds.chosen[static_cast<std::size_t>(n)];
    if (ds.has_timestamps) out << "," << ds.timestamps[static_cast<std::size_t>(n)];
    for (const auto& [name, col] : extra) out << "," << format_double(col[static_cast<std::size_t>(n)]);
    out << "\n";
  }
  write_text_file(path, out.str());
}

CsvSchema schema_for(const ChoiceDataset& ds, std::vector<std::string> ignore) {
  CsvSchema schema;
  schema.consumer_id_col = "consumer_id";
  schema.chosen_col = "chosen";
  if (ds.has_timestamps) schema.timestamp_col = "timestamp";
  for (const auto& attr : ds.alt_attr_names) {
    std::vector<std::string> cols;
    for (int j = 0; j < ds.n_alts; ++j) cols.push_back("alt" + std::to_string(j) + "_" + attr);
    schema.alt_features.emplace_back(attr, std::move(cols));
  }
  schema.covariate_cols = ds.covariate_names;
  schema.categorical_cols = ds.categorical_names;
  schema.ignore_cols = std::move(ignore);
  schema.validate();
  return schema;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open '" + path + "' for writing");
  out << text;
  require(out.good(), "failed writing '" + path + "'");
}

}  // namespace choicekit
