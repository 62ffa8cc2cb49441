#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "synthctl/align.hpp"
#include "synthctl/csv.hpp"
#include "synthctl/errors.hpp"
#include "synthctl/impact.hpp"
#include "synthctl/panel.hpp"
#include "synthctl/rsc.hpp"
#include "synthctl/synthint.hpp"
#include "synthctl/trendcluster.hpp"
#include "synthctl/version.hpp"

namespace synthctl::io {

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");
  return out;
}

/// Every emitted CSV starts with a provenance comment; the reader side skips
/// '#' lines, so outputs re-ingest cleanly.
inline void write_header_comment(std::ostream& out, const std::string& subcommand) {
  out << "# " << kToolName << " " << kVersion << " " << subcommand << "\n";
}

inline std::string field(double v) {
  return is_missing(v) ? std::string() : csv::format_double(v);
}

inline void write_panel_csv(const std::string& path, const Panel& p,
                            const std::string& subcommand) {
  auto out = open_out(path);
  write_header_comment(out, subcommand);
  out << "unit";
  for (int d = 0; d < p.day_count(); ++d) out << "," << p.date(d).iso();
  out << "\n";
  for (int u = 0; u < p.unit_count(); ++u) {
    out << p.units()[u];
    for (int d = 0; d < p.day_count(); ++d) out << "," << field(p.values()(u, d));
    out << "\n";
  }
}

inline void write_labels_csv(const std::string& path,
                             const std::vector<std::string>& units,
                             const std::vector<std::string>& labels,
                             const std::string& subcommand) {
  auto out = open_out(path);
  write_header_comment(out, subcommand);
  out << "unit,regime\n";
  for (size_t i = 0; i < units.size(); ++i)
    out << units[i] << "," << labels[i] << "\n";
}

inline void write_meta_csv(const std::string& path,
                           const std::map<std::string, UnitMeta>& meta,
                           const std::string& subcommand) {
  auto out = open_out(path);
  write_header_comment(out, subcommand);
  out << "unit,population,region,intervention_date\n";
  for (const auto& [unit, m] : meta) {
    out << unit << "," << (m.population > 0 ? std::to_string(m.population) : "")
        << "," << m.region << ",";
    for (size_t i = 0; i < m.intervention_dates.size(); ++i)
      out << (i ? ";" : "") << m.intervention_dates[i].iso();
    out << "\n";
  }
}

inline void write_offsets_csv(const std::string& path, const AlignedPanel& a,
                              const std::string& subcommand) {
  auto out = open_out(path);
  write_header_comment(out, subcommand);
  out << "unit,t0_date,rel_days_available\n";
  for (int u = 0; u < a.unit_count(); ++u)
    out << a.units()[u] << "," << a.t0_date(a.units()[u]).iso() << ","
        << a.rel_days_available(u) << "\n";
}

inline void write_trajectory_csv(const std::string& path, const Trajectory& t,
                                 const std::string& subcommand) {
  auto out = open_out(path);
  write_header_comment(out, subcommand);
  out << "rel_day,actual,counterfactual,gap\n";
  for (int i = 0; i < t.size(); ++i)
    out << t.rel_day(i) << "," << field(t.actual[i]) << ","
        << field(t.counterfactual[i]) << "," << field(t.gap[i]) << "\n";
}

inline void write_assignment_csv(const std::string& path, const ClusterResult& c,
                                 const std::string& subcommand) {
  auto out = open_out(path);
  write_header_comment(out, subcommand);
  out << "unit,cluster\n";
  for (const auto& [unit, cl] : c.assignment) out << unit << "," << cl << "\n";
}

inline void write_cluster_means_csv(const std::string& path,
                                    const std::vector<GroupAggregate>& groups,
                                    const std::string& subcommand) {
  auto out = open_out(path);
  write_header_comment(out, subcommand);
  out << "cluster,day,mean_value\n";
  for (const auto& g : groups)
    for (size_t d = 0; d < g.mean_series.size(); ++d)
      out << g.label << "," << d << "," << field(g.mean_series[d]) << "\n";
}

inline void write_bins_csv(const std::string& path, const RegionComparison& rc,
                           const std::string& subcommand) {
  auto out = open_out(path);
  write_header_comment(out, subcommand);
  out << "bin_low,bin_high,mean_nmse_in,mean_nmse_out,count_in,count_out\n";
  for (const auto& b : rc.bins)
    out << csv::format_double(b.bin_low) << "," << csv::format_double(b.bin_high)
        << "," << field(b.mean_nmse_in) << "," << field(b.mean_nmse_out) << ","
        << b.count_in << "," << b.count_out << "\n";
}

inline void write_per_target_csv(const std::string& path, const RegionComparison& rc,
                                 const std::string& subcommand) {
  auto out = open_out(path);
  write_header_comment(out, subcommand);
  out << "target,in_region,stage_cpm,bin,donor_count,nmse\n";
  for (const auto& c : rc.per_target)
    out << c.target_id << "," << (c.in_region ? 1 : 0) << ","
        << csv::format_double(c.cpm) << "," << c.bin << "," << c.donor_count << ","
        << csv::format_double(c.nmse) << "\n";
}

inline void write_peaks_csv(const std::string& path, const PeakReport& rep,
                            const std::string& subcommand) {
  auto out = open_out(path);
  write_header_comment(out, subcommand);
  out << "unit,peak_value,days_to_peak,value_at_intervention\n";
  for (const auto& s : rep.stats)
    out << s.unit << "," << csv::format_double(s.peak_value) << "," << s.days_to_peak
        << "," << field(s.value_at_intervention) << "\n";
}

inline void write_gap_csv(const std::string& path, const GapSummary& g,
                          const std::string& subcommand) {
  auto out = open_out(path);
  write_header_comment(out, subcommand);
  out << "cumulative_actual,cumulative_counterfactual,percent_reduction\n";
  out << csv::format_double(g.cumulative_actual) << ","
      << csv::format_double(g.cumulative_counterfactual) << ","
      << csv::format_double(g.percent_reduction) << "\n";
}

inline void write_shift_summary_csv(const std::string& path,
                                    const ShiftedCounterfactual& s, int shift_days,
                                    const std::string& subcommand) {
  auto out = open_out(path);
  write_header_comment(out, subcommand);
  out << "shift_days,cumulative_actual,cumulative_counterfactual,percent_reduction\n";
  out << shift_days << "," << csv::format_double(s.cumulative_actual) << ","
      << csv::format_double(s.cumulative_shifted) << ","
      << csv::format_double(s.percent_reduction) << "\n";
}

/// Reads the unit -> t0_date map back from an offsets CSV.
inline std::map<std::string, Date> read_offsets_csv(const std::string& path) {
  auto rows = csv::read_file(path);
  if (rows.size() < 2) throw EmptyInputError("no offset rows in " + path);
  if (rows.front().fields.size() < 2)
    throw ParseError("offsets header needs (unit,t0_date,...)");
  std::map<std::string, Date> out;
  for (size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.fields.size() < 2)
      throw ParseError("offsets row width mismatch at line " + std::to_string(row.line));
    if (!out.emplace(row.fields[0], Date::parse(row.fields[1])).second)
      throw DuplicateError("duplicate offsets row '" + row.fields[0] + "' at line " +
                           std::to_string(row.line));
  }
  return out;
}

inline Trajectory read_trajectory_csv(const std::string& path) {
  auto rows = csv::read_file(path);
  if (rows.size() < 2) throw EmptyInputError("no trajectory rows in " + path);
  if (rows.front().fields.size() < 4)
    throw ParseError("trajectory header needs (rel_day,actual,counterfactual,gap)");
  Trajectory t;
  bool first = true;
  int prev_rel = 0;
  for (size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.fields.size() < 4)
      throw ParseError("trajectory row width mismatch at line " +
                       std::to_string(row.line));
    int rel = csv::parse_int(row.fields[0], row.line);
    if (first) {
      t.start_rel = rel;
      first = false;
    } else if (rel != prev_rel + 1) {
      throw ParseError("trajectory days not consecutive at line " +
                       std::to_string(row.line));
    }
    prev_rel = rel;
    auto cf = csv::parse_value(row.fields[2], row.line);
    if (!cf)
      throw ParseError("missing counterfactual value at line " +
                       std::to_string(row.line));
    t.actual.push_back(csv::parse_value(row.fields[1], row.line).value_or(kMissing));
    t.counterfactual.push_back(*cf);
    t.gap.push_back(csv::parse_value(row.fields[3], row.line).value_or(kMissing));
  }
  return t;
}

inline nlohmann::json model_to_json(const RscModel& m, const std::string& target_id) {
  nlohmann::json j;
  j["donor_ids"] = m.donor_ids;
  j["weights"] = std::vector<double>(m.weights.begin(), m.weights.end());
  j["kept_rank"] = m.kept_rank;
  j["singular_values"] =
      std::vector<double>(m.singular_values.begin(), m.singular_values.end());
  j["t0"] = m.t0;
  j["p_hat"] = m.p_hat;
  j["target_id"] = target_id;
  return j;
}

inline void write_model_json(const std::string& path, const RscModel& m,
                             const std::string& target_id) {
  auto out = open_out(path);
  out << model_to_json(m, target_id).dump(2) << "\n";
}

/// Reads back the serialized weight vector and bookkeeping. The denoised
/// donor matrix is not persisted; projection needs a refit against data.
struct StoredModel {
  std::vector<std::string> donor_ids;
  Eigen::VectorXd weights;
  int kept_rank = 0;
  Eigen::VectorXd singular_values;
  int t0 = 0;
  double p_hat = 1.0;
  std::string target_id;
};

inline StoredModel read_model_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad model file '" + path + "': " + e.what());
  }
  StoredModel m;
  try {
    m.donor_ids = j.at("donor_ids").get<std::vector<std::string>>();
    auto w = j.at("weights").get<std::vector<double>>();
    m.weights = Eigen::Map<Eigen::VectorXd>(w.data(), w.size());
    m.kept_rank = j.at("kept_rank").get<int>();
    auto s = j.at("singular_values").get<std::vector<double>>();
    m.singular_values = Eigen::Map<Eigen::VectorXd>(s.data(), s.size());
    m.t0 = j.at("t0").get<int>();
    m.p_hat = j.at("p_hat").get<double>();
    m.target_id = j.value("target_id", "");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad model file '" + path + "': " + e.what());
  }
  if (m.donor_ids.size() != size_t(m.weights.size()))
    throw ParseError("model file '" + path + "': weight/donor count mismatch");
  return m;
}

/// FNV-1a 64-bit digest of a file's bytes, as fixed-width hex.
inline std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0)
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= std::uint8_t(buf[i]);
      h *= 0x100000001b3ull;
    }
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0') << h;
  return hex.str();
}

/// Run record: resolved configuration, input digests, outputs, tool version.
/// Contains nothing volatile, so identical runs write identical manifests.
inline void write_manifest(const std::string& path, const std::string& subcommand,
                           const nlohmann::json& resolved_config,
                           const std::vector<std::string>& inputs,
                           const std::vector<std::string>& outputs) {
  nlohmann::json j;
  j["tool"] = std::string(kToolName);
  j["version"] = std::string(kVersion);
  j["subcommand"] = subcommand;
  j["config"] = resolved_config;
  nlohmann::json digests = nlohmann::json::object();
  for (const auto& in : inputs) digests[in] = file_digest(in);
  j["inputs"] = digests;
  j["outputs"] = outputs;
  auto out = open_out(path);
  out << j.dump(2) << "\n";
}

}  // namespace synthctl::io
