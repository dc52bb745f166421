#include "triglab/report.hpp"

#include <charconv>
#include <cmath>

#include "triglab/error.hpp"
#include "triglab/model_io.hpp"

namespace triglab {

nlohmann::json report_to_json(const Report& r) {
  return {{"format", "triglab-report"},
          {"format_version", kReportFormatVersion},
          {"tool_version", TRIGLAB_VERSION},
          {"experiment", r.experiment},
          {"config", r.config},
          {"records", r.records},
          {"aggregates", r.aggregates},
          {"wall_clock_seconds", r.wall_clock_seconds}};
}

ReportPaths write_report(const Report& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  ReportPaths p{dir / (r.experiment + ".json"), dir / (r.experiment + ".csv"), dir / (r.experiment + ".svg")};
  write_file_atomic(p.json, report_to_json(r).dump(1) + "\n");
  write_file_atomic(p.csv, r.csv);
  write_file_atomic(p.svg, r.svg);
  return p;
}

std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

CsvTable::CsvTable(std::vector<std::string> header) : width_(header.size()) { row(header); }

CsvTable& CsvTable::row(const std::vector<std::string>& cells) {
  require(cells.size() == width_, "csv: row width does not match the header");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out_ += ',';
    const bool quote = cells[i].find_first_of(",\"\n") != std::string::npos;
    if (!quote) {
      out_ += cells[i];
      continue;
    }
    out_ += '"';
    for (char c : cells[i]) {
      if (c == '"') out_ += '"';
      out_ += c;
    }
    out_ += '"';
  }
  out_ += '\n';
  return *this;
}

nlohmann::json sweep_records(const SweepTable& t) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t k = 0; k < t.entries.size(); ++k) {
    const auto& e = t.entries[k];
    for (const auto& p : e.result.prompts)
      for (std::size_t s = 0; s < p.per_seed.size(); ++s) {
        const auto& tr = p.per_seed[s];
        out.push_back({{"entry", k},
                       {"label", e.label},
                       {"prompt", p.prompt},
                       {"seed", s},
                       {"ld_clean", tr.clean},
                       {"ld_corrupt", tr.corrupt},
                       {"ld_patched", tr.patched}});
      }
  }
  return out;
}

namespace {
nlohmann::json result_json(const PatchResult& r) {
  return {{"recovery", r.recovery},
          {"mitigation", r.mitigation},
          {"recovery_std", r.recovery_std},
          {"n_valid", r.n_valid},
          {"n_degenerate", r.n_degenerate},
          {"absolute_units", r.absolute_units},
          {"mean_ld_clean", r.mean_ld.clean},
          {"mean_ld_corrupt", r.mean_ld.corrupt},
          {"mean_ld_patched", r.mean_ld.patched}};
}
}  // namespace

nlohmann::json sweep_aggregates(const SweepTable& t) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : t.entries) {
    nlohmann::json j = result_json(e.result);
    j["label"] = e.label;
    j["layer"] = e.layer;
    j["head"] = e.head;
    j["position"] = e.position;
    entries.push_back(j);
  }
  return {{"table", t.name},
          {"mode", t.mode == PatchMode::restore ? "restore" : "ablate"},
          {"aggregation", "seed-mean LD per prompt, recovery per prompt, mean over prompts"},
          {"entries", entries}};
}

std::string sweep_csv(const SweepTable& t) { return sweeps_csv({&t}); }

std::string sweeps_csv(const std::vector<const SweepTable*>& tables) {
  CsvTable csv({"table", "label", "layer", "head", "position", "recovery", "mitigation", "recovery_std", "n_valid",
                "n_degenerate", "absolute_units", "mean_ld_clean", "mean_ld_corrupt", "mean_ld_patched"});
  for (const SweepTable* t : tables)
    for (const auto& e : t->entries) {
      const auto& r = e.result;
      csv.row({t->name, e.label, std::to_string(e.layer), std::to_string(e.head), std::to_string(e.position),
               csv_number(r.recovery), csv_number(r.mitigation), csv_number(r.recovery_std), std::to_string(r.n_valid),
               std::to_string(r.n_degenerate), r.absolute_units ? "1" : "0", csv_number(r.mean_ld.clean),
               csv_number(r.mean_ld.corrupt), csv_number(r.mean_ld.patched)});
    }
  return csv.str();
}

std::vector<PatchResult> patch_results_from_records(const nlohmann::json& records, std::size_t n_entries) {
  std::vector<PatchResult> out(n_entries);
  for (const auto& rec : records) {
    const std::size_t k = rec.at("entry").get<std::size_t>();
    const std::size_t p = rec.at("prompt").get<std::size_t>();
    const std::size_t s = rec.at("seed").get<std::size_t>();
    require(k < n_entries, "records: entry index out of range");
    auto& prompts = out[k].prompts;
    if (prompts.size() <= p) prompts.resize(p + 1);
    prompts[p].prompt = p;
    if (prompts[p].per_seed.size() <= s) prompts[p].per_seed.resize(s + 1);
    prompts[p].per_seed[s] = {rec.at("ld_clean").get<double>(), rec.at("ld_corrupt").get<double>(),
                              rec.at("ld_patched").get<double>()};
  }
  for (auto& r : out) aggregate(r);
  return out;
}

}  // namespace triglab
