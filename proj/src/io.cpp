#include "fabcor/io.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <utility>

namespace fabcor {

namespace {

std::string trim(const std::string& s) {
  std::size_t begin = 0, end = s.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(s[begin])))
    ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1])))
    --end;
  return s.substr(begin, end - begin);
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream stream(line);
  while (std::getline(stream, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

// Strict numeric cell: the full token must parse, so "NA", "", "1.2x"
// all mark the row incomplete.
bool parse_cell(const std::string& cell, double& out) {
  if (cell.empty()) return false;
  const char* begin = cell.c_str();
  char* end = nullptr;
  out = std::strtod(begin, &end);
  if (end != begin + cell.size()) return false;
  return std::isfinite(out);
}

}  // namespace

std::string format_double(double value) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
}

IngestResult ingest_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("ingest: cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line))
    throw DataError("ingest: '" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header = split_line(line);
  if (header.empty())
    throw DataError("ingest: '" + path + "' has a malformed header");
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i].empty())
      throw DataError("ingest: header column " + std::to_string(i) +
                      " is empty");
    for (std::size_t k = 0; k < i; ++k)
      if (header[k] == header[i])
        throw DataError("ingest: duplicate header label '" + header[i] + "'");
  }

  const std::size_t width = header.size();
  std::vector<std::vector<double>> rows;
  IngestResult result;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    ++result.report.rows_read;
    std::vector<std::string> cells = split_line(line);
    if (cells.size() != width) {
      ++result.report.rows_dropped;
      continue;
    }
    std::vector<double> row(width);
    bool complete = true;
    for (std::size_t i = 0; i < width && complete; ++i)
      complete = parse_cell(cells[i], row[i]);
    if (complete)
      rows.push_back(std::move(row));
    else
      ++result.report.rows_dropped;
  }
  if (rows.size() < 4)
    throw DataError("ingest: only " + std::to_string(rows.size()) +
                    " complete rows in '" + path + "'; need at least 4");

  // Zero-variance columns are removed here so the math core can require
  // nonzero variance unconditionally.
  std::vector<int> keep;
  for (std::size_t c = 0; c < width; ++c) {
    const double first = rows.front()[c];
    bool constant = true;
    for (const auto& row : rows)
      if (row[c] != first) {
        constant = false;
        break;
      }
    if (constant)
      result.report.dropped_columns.push_back(header[c]);
    else
      keep.push_back(static_cast<int>(c));
  }
  if (keep.size() < 2)
    throw DataError("ingest: fewer than 2 columns with nonzero variance in '" +
                    path + "'");

  result.data.values.resize(static_cast<long>(rows.size()),
                            static_cast<long>(keep.size()));
  result.data.labels.reserve(keep.size());
  for (int c : keep) result.data.labels.push_back(header[c]);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < keep.size(); ++c)
      result.data.values(static_cast<long>(r), static_cast<long>(c)) =
          rows[r][keep[c]];
  validate_data_matrix(result.data);
  return result;
}

void write_csv(const DataMatrix& data, const std::string& path) {
  validate_data_matrix(data);
  std::ofstream out(path);
  if (!out) throw DataError("write_csv: cannot open '" + path + "'");
  for (std::size_t c = 0; c < data.labels.size(); ++c) {
    if (c) out << ',';
    out << data.labels[c];
  }
  out << '\n';
  for (long r = 0; r < data.values.rows(); ++r) {
    for (long c = 0; c < data.values.cols(); ++c) {
      if (c) out << ',';
      out << format_double(data.values(r, c));
    }
    out << '\n';
  }
  if (!out) throw DataError("write_csv: failed writing '" + path + "'");
}

void write_results(const std::vector<TestResult>& results,
                   const DecisionSet& decisions, const std::string& path) {
  if (results.empty()) throw ConfigError("write_results: no results");
  if (decisions.rejected.size() != results.size())
    throw ConfigError("write_results: decision length mismatch");
  std::ofstream out(path);
  if (!out) throw DataError("write_results: cannot open '" + path + "'");
  out << "pair_w\tpair_v\tz_hat\tp_umpu\tp_fab\toffset_b\tm_j\tv_j\t"
         "group_id\trejected\n";
  for (std::size_t j = 0; j < results.size(); ++j) {
    const TestResult& r = results[j];
    out << r.pair.w << '\t' << r.pair.v << '\t' << format_double(r.z_hat)
        << '\t' << format_double(r.p_umpu) << '\t' << format_double(r.p_fab)
        << '\t' << format_double(r.offset_b) << '\t' << format_double(r.m_j)
        << '\t' << format_double(r.v_j) << '\t' << r.group_id << '\t'
        << (decisions.rejected[j] ? 1 : 0) << '\n';
  }
  if (!out) throw DataError("write_results: failed writing '" + path + "'");
}

void write_metadata(const nlohmann::json& metadata,
                    const std::string& results_path) {
  const std::string path = results_path + ".meta.json";
  std::ofstream out(path);
  if (!out) throw DataError("write_metadata: cannot open '" + path + "'");
  out << metadata.dump(2) << '\n';
  if (!out) throw DataError("write_metadata: failed writing '" + path + "'");
}

}  // namespace fabcor
