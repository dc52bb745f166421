#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "triglab/patching.hpp"
#include "triglab/sweeps.hpp"

namespace triglab {

inline constexpr int kReportFormatVersion = 1;

struct Report {
  std::string experiment;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json records = nlohmann::json::array();
  nlohmann::json aggregates = nlohmann::json::object();
  double wall_clock_seconds = 0.0;
  std::string csv;
  std::string svg;
};

/// {"format", "format_version", "tool_version", "experiment", "config",
///  "records", "aggregates", "wall_clock_seconds"}
nlohmann::json report_to_json(const Report& r);

struct ReportPaths {
  std::filesystem::path json, csv, svg;
};
/// Writes <experiment>.json/.csv/.svg into `dir` (created if needed).
ReportPaths write_report(const Report& r, const std::filesystem::path& dir);

/// Shortest round-trip decimal form, so CSV bytes are stable.
std::string csv_number(double v);

/// Builds a CSV table row by row.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);
  CsvTable& row(const std::vector<std::string>& cells);
  std::string str() const { return out_; }

 private:
  std::size_t width_;
  std::string out_;
};

/// Per-(entry, prompt, seed) LD triples.
nlohmann::json sweep_records(const SweepTable& t);
/// Per-entry aggregates keyed by label, plus the table order.
nlohmann::json sweep_aggregates(const SweepTable& t);
/// One row per entry.
std::string sweep_csv(const SweepTable& t);
/// Several tables in one CSV, keyed by the leading table column.
std::string sweeps_csv(const std::vector<const SweepTable*>& tables);
/// Fill a PatchResult back from its records (used to check self-containment).
std::vector<PatchResult> patch_results_from_records(const nlohmann::json& records, std::size_t n_entries);

}  // namespace triglab
