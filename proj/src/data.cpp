#include "choicekit/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "choicekit/math.hpp"
#include "choicekit/rng.hpp"

namespace choicekit {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool is_missing(double x) { return std::isnan(x); }

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// One CSV record; handles quoted fields, embedded commas, doubled quotes.
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  out.push_back(field);
  return out;
}

double parse_double_cell(const std::string& raw, int row, const std::string& col) {
  const std::string s = trim(raw);
  if (s.empty()) return kNaN;
  double v = 0.0;
  const char* begin = s.data();
  const char* end = begin + s.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end)
    fail("ingest_csv: unparseable numeric cell '" + s + "' at data row " + std::to_string(row) +
         ", column '" + col + "'");
  return v;
}

long parse_int_cell(const std::string& raw, int row, const std::string& col) {
  const std::string s = trim(raw);
  long v = 0;
  const char* begin = s.data();
  const char* end = begin + s.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (s.empty() || ec != std::errc() || ptr != end)
    fail("ingest_csv: expected an integer at data row " + std::to_string(row) + ", column '" +
         col + "', got '" + s + "'");
  return v;
}

// Quartile by linear interpolation between order statistics (the common
// "type 7" definition: quantile p sits at sorted index (n-1)*p).
double quantile_linear(std::vector<double> sorted, double p) {
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double pos = p * static_cast<double>(n - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, n - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

int ChoiceDataset::attr_index(const std::string& name) const {
  for (std::size_t a = 0; a < alt_attr_names.size(); ++a)
    if (alt_attr_names[a] == name) return static_cast<int>(a);
  return -1;
}

int ChoiceDataset::covariate_index(const std::string& name) const {
  for (std::size_t c = 0; c < covariate_names.size(); ++c)
    if (covariate_names[c] == name) return static_cast<int>(c);
  return -1;
}

int ChoiceDataset::price_attr() const {
  const int a = attr_index("price");
  require(a >= 0, "dataset has no alternative attribute named 'price'");
  return a;
}

ChoiceObservation ChoiceDataset::observation(int n) const {
  require(n >= 0 && n < n_obs(), "observation index out of range");
  ChoiceObservation obs;
  obs.consumer_id = consumer_ids[n];
  obs.chosen = chosen[n];
  const int A = n_alt_attrs();
  obs.alt_features.resize(n_alts, A);
  for (int a = 0; a < A; ++a)
    for (int j = 0; j < n_alts; ++j) obs.alt_features(j, a) = alt_features(n, feature_col(a, j));
  obs.covariates = covariates.row(n).transpose();
  if (has_timestamps) obs.timestamp = timestamps[n];
  return obs;
}

void ChoiceDataset::validate() const {
  const int N = n_obs();
  const int A = n_alt_attrs();
  require(n_alts >= 2, "dataset must offer at least 2 alternatives");
  require(static_cast<int>(consumer_ids.size()) == N, "consumer_ids length mismatch");
  require(alt_features.rows() == N && alt_features.cols() == static_cast<Eigen::Index>(A) * n_alts,
          "alt_features must be N x (A*J)");
  require(covariates.rows() == N &&
              covariates.cols() == static_cast<Eigen::Index>(covariate_names.size()),
          "covariates must be N x C");
  require(categorical_values.size() == categorical_names.size(),
          "categorical column count mismatch");
  for (const auto& col : categorical_values)
    require(static_cast<int>(col.size()) == N, "categorical column length mismatch");
  if (has_timestamps)
    require(static_cast<int>(timestamps.size()) == N, "timestamps length mismatch");
  else
    require(timestamps.empty(), "timestamps present but has_timestamps is false");

  for (int n = 0; n < N; ++n) {
    require(!consumer_ids[n].empty(), "empty consumer_id at row " + std::to_string(n));
    require(chosen[n] >= 0 && chosen[n] < n_alts,
            "chosen index " + std::to_string(chosen[n]) + " out of [0," +
                std::to_string(n_alts) + ") at row " + std::to_string(n));
  }

  const int price = attr_index("price");
  if (price >= 0 && !scaling_stats.count("price")) {
    for (int j = 0; j < n_alts; ++j) {
      const auto col = alt_features.col(feature_col(price, j));
      for (int n = 0; n < N; ++n)
        if (!is_missing(col[n]))
          require(col[n] > 0.0, "non-positive price at row " + std::to_string(n) +
                                    ", alternative " + std::to_string(j));
    }
  }
  const int disc = attr_index("discount");
  if (disc >= 0 && !scaling_stats.count("discount")) {
    for (int j = 0; j < n_alts; ++j) {
      const auto col = alt_features.col(feature_col(disc, j));
      for (int n = 0; n < N; ++n)
        if (!is_missing(col[n]))
          require(col[n] >= 0.0 && col[n] <= 1.0,
                  "discount fraction outside [0,1] at row " + std::to_string(n) +
                      ", alternative " + std::to_string(j));
    }
  }
}

void ChoiceDataset::validate_for_fit() const {
  validate();
  require(n_obs() > 0, "cannot fit on an empty dataset");
  require(categorical_names.empty(),
          "categorical column '" + (categorical_names.empty() ? "" : categorical_names[0]) +
              "' must be one-hot encoded before fitting");
  for (Eigen::Index c = 0; c < alt_features.cols(); ++c)
    for (Eigen::Index n = 0; n < alt_features.rows(); ++n)
      if (is_missing(alt_features(n, c)))
        fail("missing alternative-feature value at row " + std::to_string(n) +
             "; run imputation first");
  for (Eigen::Index c = 0; c < covariates.cols(); ++c)
    for (Eigen::Index n = 0; n < covariates.rows(); ++n)
      if (is_missing(covariates(n, c)))
        fail("missing covariate '" + covariate_names[static_cast<std::size_t>(c)] +
             "' at row " + std::to_string(n) + "; run imputation first");
}

ChoiceDataset ChoiceDataset::subset(const std::vector<int>& indices) const {
  ChoiceDataset out;
  out.n_alts = n_alts;
  out.alt_attr_names = alt_attr_names;
  out.covariate_names = covariate_names;
  out.categorical_names = categorical_names;
  out.scaling_stats = scaling_stats;
  out.has_timestamps = has_timestamps;
  const int M = static_cast<int>(indices.size());
  out.consumer_ids.reserve(M);
  out.chosen.reserve(M);
  out.alt_features.resize(M, alt_features.cols());
  out.covariates.resize(M, covariates.cols());
  out.categorical_values.assign(categorical_names.size(), {});
  for (auto& col : out.categorical_values) col.reserve(M);
  if (has_timestamps) out.timestamps.reserve(M);
  for (int r = 0; r < M; ++r) {
    const int n = indices[r];
    require(n >= 0 && n < n_obs(), "subset: row index out of range");
    out.consumer_ids.push_back(consumer_ids[n]);
    out.chosen.push_back(chosen[n]);
    out.alt_features.row(r) = alt_features.row(n);
    out.covariates.row(r) = covariates.row(n);
    for (std::size_t d = 0; d < categorical_values.size(); ++d)
      out.categorical_values[d].push_back(categorical_values[d][n]);
    if (has_timestamps) out.timestamps.push_back(timestamps[n]);
  }
  return out;
}

int CsvSchema::n_alternatives() const {
  return alt_features.empty() ? 0 : static_cast<int>(alt_features.front().second.size());
}

void CsvSchema::validate() const {
  require(!consumer_id_col.empty(), "schema: consumer_id column required");
  require(!chosen_col.empty(), "schema: chosen column required");
  require(!alt_features.empty(), "schema: at least one alternative attribute required");
  const int J = n_alternatives();
  require(J >= 2, "schema: need at least 2 alternatives");
  std::set<std::string> seen;
  for (const auto& [attr, cols] : alt_features) {
    require(static_cast<int>(cols.size()) == J,
            "schema: attribute '" + attr + "' lists " + std::to_string(cols.size()) +
                " columns, expected " + std::to_string(J));
    require(seen.insert(attr).second, "schema: duplicate attribute '" + attr + "'");
  }
  for (const auto& c : covariate_cols)
    require(seen.insert(c).second, "schema: duplicate column role for '" + c + "'");
  for (const auto& c : categorical_cols)
    require(seen.insert(c).second, "schema: duplicate column role for '" + c + "'");
}

CsvSchema CsvSchema::from_json_text(const std::string& text) {
  // ordered_json preserves attribute order; attribute order defines the
  // feature index every downstream consumer (price index!) relies on.
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const std::exception& e) {
    fail(std::string("schema: invalid JSON: ") + e.what());
  }
  CsvSchema s;
  s.consumer_id_col = j.value("consumer_id", "consumer_id");
  s.chosen_col = j.value("chosen", "chosen");
  if (j.contains("timestamp") && !j["timestamp"].is_null())
    s.timestamp_col = j["timestamp"].get<std::string>();
  require(j.contains("alt_features"), "schema: missing 'alt_features'");
  for (const auto& [attr, cols] : j["alt_features"].items())
    s.alt_features.emplace_back(attr, cols.get<std::vector<std::string>>());
  if (j.contains("covariates")) s.covariate_cols = j["covariates"].get<std::vector<std::string>>();
  if (j.contains("categoricals"))
    s.categorical_cols = j["categoricals"].get<std::vector<std::string>>();
  if (j.contains("ignore")) s.ignore_cols = j["ignore"].get<std::vector<std::string>>();
  s.validate();
  return s;
}

CsvSchema CsvSchema::load(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "schema: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

std::string CsvSchema::to_json_text() const {
  nlohmann::ordered_json j;
  j["consumer_id"] = consumer_id_col;
  j["chosen"] = chosen_col;
  if (timestamp_col) j["timestamp"] = *timestamp_col;
  nlohmann::ordered_json feats;
  for (const auto& [attr, cols] : alt_features) feats[attr] = cols;
  j["alt_features"] = feats;
  j["covariates"] = covariate_cols;
  j["categoricals"] = categorical_cols;
  j["ignore"] = ignore_cols;
  return j.dump(2);
}

void CsvSchema::save(const std::string& path) const {
  std::ofstream out(path);
  require(out.good(), "schema: cannot write '" + path + "'");
  out << to_json_text() << "\n";
}

ChoiceDataset ingest_csv_text(const std::string& text, const CsvSchema& schema) {
  schema.validate();
  std::vector<std::string> lines;
  {
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(line);
    }
  }
  require(!lines.empty(), "ingest_csv: empty file");
  const std::vector<std::string> header = split_csv_line(lines[0]);
  std::map<std::string, int> col_of;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string name = trim(header[i]);
    require(!col_of.count(name), "ingest_csv: duplicate header column '" + name + "'");
    col_of[name] = static_cast<int>(i);
  }
  auto need = [&](const std::string& name) {
    auto it = col_of.find(name);
    if (it == col_of.end()) fail("ingest_csv: schema column '" + name + "' not found in header");
    return it->second;
  };

  const int J = schema.n_alternatives();
  const int A = static_cast<int>(schema.alt_features.size());
  const int C = static_cast<int>(schema.covariate_cols.size());
  const int id_col = need(schema.consumer_id_col);
  const int chosen_col = need(schema.chosen_col);
  const int ts_col = schema.timestamp_col ? need(*schema.timestamp_col) : -1;
  std::vector<std::vector<int>> attr_cols(A);
  for (int a = 0; a < A; ++a)
    for (const auto& cname : schema.alt_features[a].second) attr_cols[a].push_back(need(cname));
  std::vector<int> cov_cols, cat_cols;
  for (const auto& c : schema.covariate_cols) cov_cols.push_back(need(c));
  for (const auto& c : schema.categorical_cols) cat_cols.push_back(need(c));

  ChoiceDataset ds;
  ds.n_alts = J;
  for (const auto& [attr, cols] : schema.alt_features) ds.alt_attr_names.push_back(attr);
  ds.covariate_names = schema.covariate_cols;
  ds.categorical_names = schema.categorical_cols;
  ds.has_timestamps = ts_col >= 0;

  const int N = static_cast<int>(lines.size()) - 1;
  require(N > 0, "ingest_csv: no data rows");
  ds.alt_features.resize(N, A * J);
  ds.covariates.resize(N, C);
  ds.categorical_values.assign(cat_cols.size(), std::vector<std::string>(N));
  ds.consumer_ids.resize(N);
  ds.chosen.resize(N);
  if (ds.has_timestamps) ds.timestamps.resize(N);

  for (int n = 0; n < N; ++n) {
    const std::vector<std::string> cells = split_csv_line(lines[n + 1]);
    if (cells.size() != header.size())
      fail("ingest_csv: data row " + std::to_string(n) + " has " + std::to_string(cells.size()) +
           " cells, header has " + std::to_string(header.size()));
    ds.consumer_ids[n] = trim(cells[id_col]);
    require(!ds.consumer_ids[n].empty(),
            "ingest_csv: empty consumer id at data row " + std::to_string(n));
    const long ch = parse_int_cell(cells[chosen_col], n, schema.chosen_col);
    if (ch < 0 || ch >= J)
      fail("ingest_csv: chosen index " + std::to_string(ch) + " outside [0," + std::to_string(J) +
           ") at data row " + std::to_string(n));
    ds.chosen[n] = static_cast<int>(ch);
    if (ts_col >= 0) ds.timestamps[n] = parse_int_cell(cells[ts_col], n, *schema.timestamp_col);
    for (int a = 0; a < A; ++a)
      for (int j = 0; j < J; ++j)
        ds.alt_features(n, ds.feature_col(a, j)) =
            parse_double_cell(cells[attr_cols[a][j]], n, schema.alt_features[a].second[j]);
    for (int c = 0; c < C; ++c)
      ds.covariates(n, c) = parse_double_cell(cells[cov_cols[c]], n, schema.covariate_cols[c]);
    for (std::size_t d = 0; d < cat_cols.size(); ++d)
      ds.categorical_values[d][n] = trim(cells[cat_cols[d]]);
  }
  ds.validate();
  return ds;
}

ChoiceDataset ingest_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  require(in.good(), "ingest_csv: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return ingest_csv_text(buf.str(), schema);
}

ImputeResult impute_missing(const ChoiceDataset& ds, double max_missing_fraction) {
  require(max_missing_fraction >= 0.0 && max_missing_fraction <= 1.0,
          "impute_missing: threshold must be in [0,1]");
  ds.validate();
  const int N = ds.n_obs();
  const int J = ds.n_alts;
  ImputeResult res;

  // Pass 1: decide survivors.  Alt attributes drop as a unit (all J columns).
  std::vector<int> keep_attrs, keep_covs, keep_cats;
  for (int a = 0; a < ds.n_alt_attrs(); ++a) {
    int miss = 0;
    for (int j = 0; j < J; ++j)
      miss += static_cast<int>(ds.alt_features.col(ds.feature_col(a, j)).array().isNaN().count());
    if (static_cast<double>(miss) / (static_cast<double>(N) * J) > max_missing_fraction)
      res.dropped_columns.push_back(ds.alt_attr_names[a]);
    else
      keep_attrs.push_back(a);
  }
  require(!keep_attrs.empty(), "impute_missing: every alternative attribute would be dropped");
  for (int c = 0; c < ds.n_covariates(); ++c) {
    const auto miss = ds.covariates.col(c).array().isNaN().count();
    if (static_cast<double>(miss) / N > max_missing_fraction)
      res.dropped_columns.push_back(ds.covariate_names[c]);
    else
      keep_covs.push_back(c);
  }
  for (std::size_t d = 0; d < ds.categorical_names.size(); ++d) {
    int miss = 0;
    for (const auto& v : ds.categorical_values[d]) miss += v.empty() ? 1 : 0;
    if (static_cast<double>(miss) / N > max_missing_fraction)
      res.dropped_columns.push_back(ds.categorical_names[d]);
    else
      keep_cats.push_back(static_cast<int>(d));
  }

  // Pass 2: rebuild with survivors, filling as we go.
  ChoiceDataset out;
  out.consumer_ids = ds.consumer_ids;
  out.chosen = ds.chosen;
  out.timestamps = ds.timestamps;
  out.has_timestamps = ds.has_timestamps;
  out.n_alts = J;
  out.alt_features.resize(N, static_cast<Eigen::Index>(keep_attrs.size()) * J);
  for (std::size_t ka = 0; ka < keep_attrs.size(); ++ka) {
    const int a = keep_attrs[ka];
    out.alt_attr_names.push_back(ds.alt_attr_names[a]);
    if (auto it = ds.scaling_stats.find(ds.alt_attr_names[a]); it != ds.scaling_stats.end())
      out.scaling_stats.insert(*it);
    int filled = 0;
    for (int j = 0; j < J; ++j) {
      Eigen::VectorXd col = ds.alt_features.col(ds.feature_col(a, j));
      double sum = 0.0;
      int cnt = 0;
      for (int n = 0; n < N; ++n)
        if (!is_missing(col[n])) {
          sum += col[n];
          ++cnt;
        }
      if (cnt == 0)
        fail("impute_missing: column for attribute '" + ds.alt_attr_names[a] +
             "', alternative " + std::to_string(j) +
             " is entirely missing but survived the drop threshold; lower the threshold");
      const double mean = sum / cnt;
      for (int n = 0; n < N; ++n)
        if (is_missing(col[n])) {
          col[n] = mean;
          ++filled;
        }
      out.alt_features.col(static_cast<Eigen::Index>(ka) * J + j) = col;
    }
    if (filled > 0) res.fill_counts[ds.alt_attr_names[a]] = filled;
  }
  out.covariates.resize(N, static_cast<Eigen::Index>(keep_covs.size()));
  for (std::size_t kc = 0; kc < keep_covs.size(); ++kc) {
    const int c = keep_covs[kc];
    out.covariate_names.push_back(ds.covariate_names[c]);
    if (auto it = ds.scaling_stats.find(ds.covariate_names[c]); it != ds.scaling_stats.end())
      out.scaling_stats.insert(*it);
    Eigen::VectorXd col = ds.covariates.col(c);
    double sum = 0.0;
    int cnt = 0;
    for (int n = 0; n < N; ++n)
      if (!is_missing(col[n])) {
        sum += col[n];
        ++cnt;
      }
    if (cnt == 0)
      fail("impute_missing: covariate '" + ds.covariate_names[c] +
           "' is entirely missing but survived the drop threshold; lower the threshold");
    const double mean = sum / cnt;
    int filled = 0;
    for (int n = 0; n < N; ++n)
      if (is_missing(col[n])) {
        col[n] = mean;
        ++filled;
      }
    if (filled > 0) res.fill_counts[ds.covariate_names[c]] = filled;
    out.covariates.col(static_cast<Eigen::Index>(kc)) = col;
  }
  for (const int d : keep_cats) {
    out.categorical_names.push_back(ds.categorical_names[d]);
    std::vector<std::string> col = ds.categorical_values[d];
    std::map<std::string, int> freq;
    for (const auto& v : col)
      if (!v.empty()) ++freq[v];
    require(!freq.empty(), "impute_missing: categorical '" + ds.categorical_names[d] +
                               "' is entirely missing but survived the drop threshold");
    // Mode; ties break to the lexicographically smallest level (map order).
    std::string mode = freq.begin()->first;
    for (const auto& [lvl, cnt] : freq)
      if (cnt > freq[mode]) mode = lvl;
    int filled = 0;
    for (auto& v : col)
      if (v.empty()) {
        v = mode;
        ++filled;
      }
    if (filled > 0) res.fill_counts[ds.categorical_names[d]] = filled;
    out.categorical_values.push_back(std::move(col));
  }
  if (!res.dropped_columns.empty())
    res.warnings.push_back("dropped " + std::to_string(res.dropped_columns.size()) +
                           " column(s) exceeding missing fraction " +
                           std::to_string(max_missing_fraction));
  out.validate();
  res.data = std::move(out);
  return res;
}

OutlierReport flag_outliers(const ChoiceDataset& ds, double iqr_k, double mahalanobis_p) {
  require(iqr_k > 0.0, "flag_outliers: iqr_k must be positive");
  require(mahalanobis_p > 0.0 && mahalanobis_p < 1.0, "flag_outliers: p must be in (0,1)");
  ds.validate_for_fit();
  const int N = ds.n_obs();
  OutlierReport rep;
  std::set<int> flagged;

  // Assemble the numeric matrix: every alt-feature column plus covariates.
  std::vector<std::pair<std::string, Eigen::VectorXd>> cols;
  for (int a = 0; a < ds.n_alt_attrs(); ++a)
    for (int j = 0; j < ds.n_alts; ++j)
      cols.emplace_back(ds.alt_attr_names[a] + "[alt " + std::to_string(j) + "]",
                        ds.alt_features.col(ds.feature_col(a, j)));
  for (int c = 0; c < ds.n_covariates(); ++c)
    cols.emplace_back(ds.covariate_names[c], ds.covariates.col(c));

  // Univariate IQR fences.
  for (const auto& [name, col] : cols) {
    std::vector<double> sorted(col.data(), col.data() + N);
    std::sort(sorted.begin(), sorted.end());
    const double q1 = quantile_linear(sorted, 0.25);
    const double q3 = quantile_linear(sorted, 0.75);
    const double iqr = q3 - q1;
    const double lo = q1 - iqr_k * iqr;
    const double hi = q3 + iqr_k * iqr;
    for (int n = 0; n < N; ++n)
      if (col[n] < lo || col[n] > hi) flagged.insert(n);
  }

  // Multivariate Mahalanobis on non-constant columns.
  std::vector<int> varying;
  for (std::size_t c = 0; c < cols.size(); ++c) {
    const auto& col = cols[c].second;
    if ((col.array() - col[0]).abs().maxCoeff() <= 0.0) {
      rep.skipped_columns.push_back(cols[c].first);
      rep.warnings.push_back("constant column '" + cols[c].first +
                             "' skipped for Mahalanobis distance");
    } else {
      varying.push_back(static_cast<int>(c));
    }
  }
  const int d = static_cast<int>(varying.size());
  if (d >= 1 && N > d) {
    Eigen::MatrixXd M(N, d);
    for (int c = 0; c < d; ++c) M.col(c) = cols[varying[c]].second;
    const Eigen::RowVectorXd mean = M.colwise().mean();
    const Eigen::MatrixXd centered = M.rowwise() - mean;
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(N - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    const double max_eig = eig.eigenvalues().maxCoeff();
    if (eig.eigenvalues().minCoeff() > 1e-12 * std::max(1.0, max_eig)) {
      const double cutoff = math::chi_squared_quantile(mahalanobis_p, d);
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(cov);
      for (int n = 0; n < N; ++n) {
        const Eigen::VectorXd x = centered.row(n).transpose();
        const double d2 = x.dot(ldlt.solve(x));
        if (d2 > cutoff) flagged.insert(n);
      }
      rep.mahalanobis_used = true;
    } else {
      rep.warnings.push_back(
          "covariance matrix is singular; Mahalanobis screen skipped, IQR fences only");
    }
  } else if (d == 0) {
    rep.warnings.push_back("no varying numeric columns; IQR fences only");
  } else {
    rep.warnings.push_back("fewer rows than numeric columns; Mahalanobis screen skipped");
  }

  rep.indices.assign(flagged.begin(), flagged.end());
  return rep;
}

namespace {

void apply_log(ChoiceDataset& ds, const std::string& column) {
  auto& rec = ds.scaling_stats[column];
  require(!rec.log_applied, "transform_features: log already applied to '" + column + "'");
  require(!rec.standardized,
          "transform_features: cannot log '" + column + "' after standardization");
  const int a = ds.attr_index(column);
  if (a >= 0) {
    for (int j = 0; j < ds.n_alts; ++j) {
      auto col = ds.alt_features.col(ds.feature_col(a, j));
      for (Eigen::Index n = 0; n < col.size(); ++n) {
        if (is_missing(col[n])) continue;
        require(col[n] > 0.0, "transform_features: log of non-positive value in '" + column +
                                  "' at row " + std::to_string(n));
        col[n] = std::log(col[n]);
      }
    }
  } else {
    const int c = ds.covariate_index(column);
    require(c >= 0, "transform_features: unknown column '" + column + "' for log");
    auto col = ds.covariates.col(c);
    for (Eigen::Index n = 0; n < col.size(); ++n) {
      if (is_missing(col[n])) continue;
      require(col[n] > 0.0, "transform_features: log of non-positive value in '" + column +
                                "' at row " + std::to_string(n));
      col[n] = std::log(col[n]);
    }
  }
  rec.log_applied = true;
}

void apply_standardize(ChoiceDataset& ds, const std::string& column) {
  auto& rec = ds.scaling_stats[column];
  require(!rec.standardized, "transform_features: '" + column + "' already standardized");
  const int a = ds.attr_index(column);
  double mean = 0.0, var = 0.0;
  long cnt = 0;
  auto accumulate = [&](const Eigen::Ref<const Eigen::VectorXd>& col) {
    for (Eigen::Index n = 0; n < col.size(); ++n)
      if (!is_missing(col[n])) {
        mean += col[n];
        ++cnt;
      }
  };
  auto accumulate_var = [&](const Eigen::Ref<const Eigen::VectorXd>& col) {
    for (Eigen::Index n = 0; n < col.size(); ++n)
      if (!is_missing(col[n])) var += (col[n] - mean) * (col[n] - mean);
  };
  if (a >= 0) {
    // Pooled over all J columns so within-row contrasts (and therefore choice
    // probabilities under any fitted model) are preserved exactly.
    for (int j = 0; j < ds.n_alts; ++j) accumulate(ds.alt_features.col(ds.feature_col(a, j)));
    require(cnt > 0, "transform_features: '" + column + "' has no observed values");
    mean /= static_cast<double>(cnt);
    for (int j = 0; j < ds.n_alts; ++j) accumulate_var(ds.alt_features.col(ds.feature_col(a, j)));
    const double sd = std::sqrt(var / static_cast<double>(cnt));
    require(sd > 0.0, "transform_features: cannot standardize constant column '" + column + "'");
    for (int j = 0; j < ds.n_alts; ++j) {
      auto col = ds.alt_features.col(ds.feature_col(a, j));
      col = (col.array() - mean) / sd;
    }
    rec.mean = mean;
    rec.std = sd;
  } else {
    const int c = ds.covariate_index(column);
    require(c >= 0, "transform_features: unknown column '" + column + "' for standardize");
    accumulate(ds.covariates.col(c));
    require(cnt > 0, "transform_features: '" + column + "' has no observed values");
    mean /= static_cast<double>(cnt);
    accumulate_var(ds.covariates.col(c));
    const double sd = std::sqrt(var / static_cast<double>(cnt));
    require(sd > 0.0, "transform_features: cannot standardize constant column '" + column + "'");
    auto col = ds.covariates.col(c);
    col = (col.array() - mean) / sd;
    rec.mean = mean;
    rec.std = sd;
  }
  rec.standardized = true;
}

void apply_one_hot(ChoiceDataset& ds, const std::string& column) {
  int d = -1;
  for (std::size_t i = 0; i < ds.categorical_names.size(); ++i)
    if (ds.categorical_names[i] == column) d = static_cast<int>(i);
  require(d >= 0, "transform_features: unknown categorical column '" + column + "'");
  const auto& col = ds.categorical_values[d];
  std::set<std::string> levels;
  for (const auto& v : col) {
    require(!v.empty(), "transform_features: categorical '" + column +
                            "' has missing values; impute before one-hot encoding");
    levels.insert(v);
  }
  // Reference level = lexicographically first; c levels yield c-1 indicators.
  const int N = ds.n_obs();
  std::vector<std::string> ordered(levels.begin(), levels.end());
  Eigen::MatrixXd extra(N, static_cast<Eigen::Index>(ordered.size()) - 1);
  for (std::size_t l = 1; l < ordered.size(); ++l) {
    for (int n = 0; n < N; ++n)
      extra(n, static_cast<Eigen::Index>(l) - 1) = col[n] == ordered[l] ? 1.0 : 0.0;
    ds.covariate_names.push_back(column + "=" + ordered[l]);
  }
  Eigen::MatrixXd merged(N, ds.covariates.cols() + extra.cols());
  merged << ds.covariates, extra;
  ds.covariates = std::move(merged);
  ds.categorical_names.erase(ds.categorical_names.begin() + d);
  ds.categorical_values.erase(ds.categorical_values.begin() + d);
}

void apply_moving_average(ChoiceDataset& ds, const std::string& column, int window) {
  require(window >= 1, "transform_features: moving-average window must be >= 1");
  require(ds.has_timestamps,
          "transform_features: moving averages require timestamps in the dataset");
  const int N = ds.n_obs();

  // Source series: the derived per-purchase spend, or any existing covariate.
  Eigen::VectorXd series(N);
  if (column == "spend") {
    const int price = ds.price_attr();
    const int disc = ds.attr_index("discount");
    for (int n = 0; n < N; ++n) {
      const int j = ds.chosen[n];
      const double p = ds.alt_features(n, ds.feature_col(price, j));
      const double frac = disc >= 0 ? ds.alt_features(n, ds.feature_col(disc, j)) : 0.0;
      require(!is_missing(p) && !is_missing(frac),
              "transform_features: missing price/discount at row " + std::to_string(n) +
                  "; impute before computing spend");
      series[n] = p * (1.0 - frac);
    }
  } else {
    const int c = ds.covariate_index(column);
    require(c >= 0, "transform_features: unknown column '" + column + "' for moving average");
    series = ds.covariates.col(c);
    for (int n = 0; n < N; ++n)
      require(!is_missing(series[n]), "transform_features: missing '" + column + "' at row " +
                                          std::to_string(n) + "; impute before moving average");
  }

  // Group rows per consumer, order by (timestamp, row) and take the trailing
  // mean over the last `window` purchases including the current one.
  std::map<std::string, std::vector<int>> rows_of;
  for (int n = 0; n < N; ++n) rows_of[ds.consumer_ids[n]].push_back(n);
  Eigen::VectorXd ma(N);
  for (auto& [id, rows] : rows_of) {
    std::stable_sort(rows.begin(), rows.end(), [&](int a, int b) {
      return ds.timestamps[a] < ds.timestamps[b];
    });
    for (std::size_t t = 0; t < rows.size(); ++t) {
      const std::size_t first = t + 1 >= static_cast<std::size_t>(window) ? t + 1 - window : 0;
      double sum = 0.0;
      for (std::size_t s = first; s <= t; ++s) sum += series[rows[s]];
      ma[rows[t]] = sum / static_cast<double>(t - first + 1);
    }
  }

  const std::string name = "ma_" + column;
  require(ds.covariate_index(name) < 0,
          "transform_features: covariate '" + name + "' already exists");
  Eigen::MatrixXd merged(N, ds.covariates.cols() + 1);
  merged << ds.covariates, ma;
  ds.covariates = std::move(merged);
  ds.covariate_names.push_back(name);
}

}  // namespace

ChoiceDataset transform_features(const ChoiceDataset& input, const TransformSpec& spec) {
  input.validate();
  ChoiceDataset ds = input;
  for (const auto& t : spec) {
    switch (t.kind) {
      case Transform::Kind::Log: apply_log(ds, t.column); break;
      case Transform::Kind::Standardize: apply_standardize(ds, t.column); break;
      case Transform::Kind::OneHot: apply_one_hot(ds, t.column); break;
      case Transform::Kind::MovingAverage: apply_moving_average(ds, t.column, t.window); break;
    }
  }
  ds.validate();
  return ds;
}

SplitIndices stratified_split(const ChoiceDataset& ds, const std::array<double, 3>& ratios,
                              const std::string& strat_column, std::uint64_t seed) {
  ds.validate();
  double total = 0.0;
  for (double r : ratios) {
    require(r >= 0.0, "stratified_split: ratios must be non-negative");
    total += r;
  }
  require(total > 0.0, "stratified_split: ratios sum to zero");
  std::array<double, 3> w{};
  for (int p = 0; p < 3; ++p) w[p] = ratios[p] / total;
  const int N = ds.n_obs();

  // Stratum key per row: chosen class, covariate quartile bin, or level.
  std::vector<std::string> key(N);
  if (strat_column == "chosen") {
    for (int n = 0; n < N; ++n) key[n] = std::to_string(ds.chosen[n]);
  } else if (const int c = ds.covariate_index(strat_column); c >= 0) {
    std::vector<double> sorted(ds.covariates.col(c).data(), ds.covariates.col(c).data() + N);
    for (double v : sorted)
      require(!is_missing(v), "stratified_split: missing values in stratification column '" +
                                  strat_column + "'");
    std::sort(sorted.begin(), sorted.end());
    const double q1 = quantile_linear(sorted, 0.25);
    const double q2 = quantile_linear(sorted, 0.50);
    const double q3 = quantile_linear(sorted, 0.75);
    for (int n = 0; n < N; ++n) {
      const double v = ds.covariates(n, c);
      key[n] = v <= q1 ? "q1" : v <= q2 ? "q2" : v <= q3 ? "q3" : "q4";
    }
  } else {
    int d = -1;
    for (std::size_t i = 0; i < ds.categorical_names.size(); ++i)
      if (ds.categorical_names[i] == strat_column) d = static_cast<int>(i);
    require(d >= 0, "stratified_split: unknown stratification column '" + strat_column + "'");
    for (int n = 0; n < N; ++n) key[n] = ds.categorical_values[d][n];
  }

  std::map<std::string, std::vector<int>> strata;
  for (int n = 0; n < N; ++n) strata[key[n]].push_back(n);

  int parts = 0;
  for (double r : w)
    if (r > 0.0) ++parts;

  SplitIndices out;
  Rng rng(seed);
  // Largest remainder per stratum, corrected by the running global deviation
  // so overall totals also stay within one observation of the targets.
  std::array<double, 3> deviation{0.0, 0.0, 0.0};
  for (auto& [k, rows] : strata) {
    const int m = static_cast<int>(rows.size());
    if (m < parts) {
      out.warnings.push_back("stratum '" + k + "' has only " + std::to_string(m) +
                             " row(s); assigned entirely to train");
      rng.shuffle(rows);
      out.train.insert(out.train.end(), rows.begin(), rows.end());
      for (int p = 0; p < 3; ++p) deviation[p] += (p == 0 ? m : 0) - w[p] * m;
      continue;
    }
    std::array<double, 3> exact{};
    std::array<int, 3> count{};
    int assigned = 0;
    for (int p = 0; p < 3; ++p) {
      exact[p] = w[p] * m;
      count[p] = static_cast<int>(std::floor(exact[p]));
      assigned += count[p];
    }
    std::array<double, 3> score{};
    for (int p = 0; p < 3; ++p) score[p] = (exact[p] - count[p]) - deviation[p];
    for (int left = m - assigned; left > 0; --left) {
      int best = -1;
      for (int p = 0; p < 3; ++p) {
        if (w[p] <= 0.0) continue;  // a zero-ratio part never receives leftovers
        if (best < 0 || score[p] > score[best]) best = p;
      }
      count[best] += 1;
      score[best] -= 1.0;
    }
    for (int p = 0; p < 3; ++p) deviation[p] += count[p] - exact[p];

    rng.shuffle(rows);
    auto it = rows.begin();
    out.train.insert(out.train.end(), it, it + count[0]);
    it += count[0];
    out.validation.insert(out.validation.end(), it, it + count[1]);
    it += count[1];
    out.test.insert(out.test.end(), it, it + count[2]);
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.validation.begin(), out.validation.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

}  // namespace choicekit
