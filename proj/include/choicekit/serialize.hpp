#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "choicekit/estimation.hpp"
#include "choicekit/evaluation.hpp"
#include "choicekit/synthgen.hpp"

namespace choicekit {

/// Family-tagged parameter JSON ({"family": "mnl" | "mxl" | "lcm" | "moe", ...}).
/// Round-trips exactly: doubles are emitted with shortest-round-trip formatting.
nlohmann::json params_to_json(const ModelParams& params);
ModelParams params_from_json(const nlohmann::json& j);

nlohmann::json fit_result_to_json(const FitResult& fit);
nlohmann::json cv_to_json(const CvSelection& cv);
nlohmann::json benchmark_to_json(const BenchmarkReport& report);

nlohmann::json market_to_json(const MarketSpec& spec);
MarketSpec market_from_json(const nlohmann::json& j);

/// Extra per-observation columns appended after the dataset's own columns.
using ExtraColumns = std::vector<std::pair<std::string, std::vector<double>>>;

/// Writes the dataset as a flat CSV: consumer_id, alt<j>_<attr> blocks
/// (attribute-major), covariates, categoricals, chosen, timestamp (when
/// present), then any extra columns.  NaN cells are written blank.
void write_dataset_csv(const ChoiceDataset& ds, const std::string& path,
                       const ExtraColumns& extra = {});

/// Schema matching write_dataset_csv's layout, so the file can be ingested
/// back.  Extra columns are not known to the dataset; list them in `ignore`.
CsvSchema schema_for(const ChoiceDataset& ds, std::vector<std::string> ignore = {});

/// Shortest representation that parses back to the identical double.
std::string format_double(double v);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace choicekit
