#pragma once

#include <string>
#include <vector>

#include "fabcor/types.hpp"

#include <json.hpp>

namespace fabcor {

struct IngestReport {
  int rows_read = 0;          // data rows present in the file
  int rows_dropped = 0;       // incomplete or non-numeric rows
  std::vector<std::string> dropped_columns;  // zero-variance columns
};

struct IngestResult {
  DataMatrix data;
  IngestReport report;
};

// CSV with a header row of labels and numeric data rows. Rows with any
// missing or non-numeric cell are dropped (listwise deletion), then
// zero-variance columns are dropped by name. Fewer than 4 surviving rows
// or 2 surviving columns is an error.
IngestResult ingest_csv(const std::string& path);

// Canonical CSV form of a cleaned dataset; ingesting it again reproduces
// the matrix exactly.
void write_csv(const DataMatrix& data, const std::string& path);

// Tab-separated results, ascending flat pair index, header
// pair_w pair_v z_hat p_umpu p_fab offset_b m_j v_j group_id rejected,
// floats at 17 significant digits for lossless round-trips.
void write_results(const std::vector<TestResult>& results,
                   const DecisionSet& decisions, const std::string& path);

// Run-metadata sidecar written next to a results file at
// results_path + ".meta.json".
void write_metadata(const nlohmann::json& metadata,
                    const std::string& results_path);

// Shortest-exact rendering used by every writer ("%.17g").
std::string format_double(double value);

}  // namespace fabcor
