#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "choicekit/common.hpp"

namespace choicekit {

/// How a column was rescaled, kept so the original values can be
/// reconstructed (and so fitted coefficients can be reported on raw scale).
/// Transform order is: log first (if any), then standardize.
struct ScalingRecord {
  bool log_applied = false;
  bool standardized = false;
  double mean = 0.0;
  double std = 1.0;
};

using ScalingStats = std::map<std::string, ScalingRecord>;

/// One choice occasion materialized as a row view: J alternatives with
/// shared attribute columns, plus the consumer's covariates.
struct ChoiceObservation {
  std::string consumer_id;
  Eigen::MatrixXd alt_features;  // J x d_x, row j = alternative j
  Eigen::VectorXd covariates;    // d_z
  int chosen = 0;
  std::optional<std::int64_t> timestamp;  // epoch days

  int n_alternatives() const { return static_cast<int>(alt_features.rows()); }
  int n_alt_attrs() const { return static_cast<int>(alt_features.cols()); }
};

/// Columnar choice dataset.  Alternative attributes are stored attribute-major:
/// column a * J + j of `alt_features` holds attribute a of alternative j.
/// Missing numeric cells are NaN; missing categorical cells are "".
struct ChoiceDataset {
  std::vector<std::string> consumer_ids;            // N
  std::vector<int> chosen;                          // N, in [0, J)
  std::vector<std::int64_t> timestamps;             // N if has_timestamps, else empty
  bool has_timestamps = false;

  int n_alts = 0;                                   // J >= 2
  std::vector<std::string> alt_attr_names;          // A
  Eigen::MatrixXd alt_features;                     // N x (A*J)

  std::vector<std::string> covariate_names;         // C
  Eigen::MatrixXd covariates;                       // N x C

  std::vector<std::string> categorical_names;       // D (not yet encoded)
  std::vector<std::vector<std::string>> categorical_values;  // D columns of length N

  ScalingStats scaling_stats;

  int n_obs() const { return static_cast<int>(chosen.size()); }
  int n_alt_attrs() const { return static_cast<int>(alt_attr_names.size()); }
  int n_covariates() const { return static_cast<int>(covariate_names.size()); }

  /// Column of `alt_features` holding attribute `a` of alternative `j`.
  int feature_col(int a, int j) const { return a * n_alts + j; }

  int attr_index(const std::string& name) const;       // -1 if absent
  int covariate_index(const std::string& name) const;  // -1 if absent

  /// Index of the attribute named "price"; throws if the dataset has none.
  int price_attr() const;

  ChoiceObservation observation(int n) const;

  /// Structural invariants: consistent shapes, chosen in range, positive
  /// prices, discount fractions in [0,1].  Throws Error naming the violation.
  void validate() const;

  /// Additional requirements for model fitting: nonempty, no missing numeric
  /// cells, no unencoded categorical columns.
  void validate_for_fit() const;

  /// Rows picked by index, in the given order.  Metadata and scaling stats
  /// are shared by copy.
  ChoiceDataset subset(const std::vector<int>& indices) const;
};

/// Maps CSV columns onto dataset roles.  Attribute order is preserved from
/// the schema, and each attribute lists exactly J column names (alternative
/// order).  Parsed from / serialized to JSON.
struct CsvSchema {
  std::string consumer_id_col = "consumer_id";
  std::string chosen_col = "chosen";
  std::optional<std::string> timestamp_col;
  std::vector<std::pair<std::string, std::vector<std::string>>> alt_features;
  std::vector<std::string> covariate_cols;
  std::vector<std::string> categorical_cols;
  std::vector<std::string> ignore_cols;

  int n_alternatives() const;
  void validate() const;

  static CsvSchema from_json_text(const std::string& text);
  static CsvSchema load(const std::string& path);
  std::string to_json_text() const;
  void save(const std::string& path) const;
};

/// Parse a CSV file into a dataset under the given schema.  Blank numeric
/// cells become NaN (missing); anything unparseable is an error naming the
/// row and column.  `chosen` must be an integer in [0, J).
ChoiceDataset ingest_csv(const std::string& path, const CsvSchema& schema);

/// ingest_csv on already-loaded text (used by tests and the CLI).
ChoiceDataset ingest_csv_text(const std::string& text, const CsvSchema& schema);

struct ImputeResult {
  ChoiceDataset data;
  std::vector<std::string> dropped_columns;   // attribute / covariate / categorical names
  std::map<std::string, int> fill_counts;     // cells filled per surviving column
  std::vector<std::string> warnings;
};

/// Deterministic imputation: columns whose missing fraction exceeds
/// `max_missing_fraction` are dropped (alternative attributes are dropped as
/// a whole, with the fraction computed over all J columns); surviving numeric
/// cells are filled with their column mean and categorical cells with the
/// column mode (ties break to the lexicographically smallest level).
ImputeResult impute_missing(const ChoiceDataset& ds, double max_missing_fraction = 0.2);

struct OutlierReport {
  std::vector<int> indices;                  // ascending, deduplicated
  bool mahalanobis_used = false;
  std::vector<std::string> skipped_columns;  // constant columns excluded from Mahalanobis
  std::vector<std::string> warnings;
};

/// Flags rows that are univariate IQR outliers (outside [Q1 - k*IQR,
/// Q3 + k*IQR] in any numeric column, quartiles by linear interpolation) or
/// multivariate Mahalanobis outliers (squared distance beyond the
/// chi-squared quantile at `mahalanobis_p`).  Requires imputed data.
/// A singular covariance matrix degrades to IQR-only with a warning.
OutlierReport flag_outliers(const ChoiceDataset& ds, double iqr_k = 1.5,
                            double mahalanobis_p = 0.999);

struct Transform {
  enum class Kind { Log, Standardize, OneHot, MovingAverage };
  Kind kind;
  std::string column;  // attribute, covariate, categorical, or "spend" for MA
  int window = 3;      // MovingAverage only
};

using TransformSpec = std::vector<Transform>;

/// Applies transforms in order.  Log and Standardize target an alternative
/// attribute (all J columns, pooled moments) or a covariate; OneHot expands a
/// categorical into c-1 indicator covariates "<col>=<level>" (reference =
/// lexicographically first level); MovingAverage appends covariate
/// "ma_<column>" with the per-consumer trailing mean over the last `window`
/// purchases (partial windows at the start), ordered by timestamp.
/// "spend" is the derived series chosen-price * (1 - chosen-discount).
ChoiceDataset transform_features(const ChoiceDataset& ds, const TransformSpec& spec);

struct SplitIndices {
  std::vector<int> train;
  std::vector<int> validation;
  std::vector<int> test;
  std::vector<std::string> warnings;
};

/// Stratified train/validation/test split. `strat_column` is "chosen"
/// (default), a covariate (binned into quartiles), or a categorical column.
/// Within each stratum rows are shuffled by `seed` and apportioned by
/// largest remainder with a cross-stratum correction that keeps both the
/// per-stratum counts and the overall totals within one observation of the
/// requested ratios.  A stratum with fewer rows than nonzero parts goes
/// entirely to train with a warning.
SplitIndices stratified_split(const ChoiceDataset& ds,
                              const std::array<double, 3>& ratios,
                              const std::string& strat_column, std::uint64_t seed);

}  // namespace choicekit
