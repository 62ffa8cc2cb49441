// Command-line front end: binds the library into reproducible analysis
// pipelines. Every subcommand resolves its parameters from flags, an optional
// JSON config (flags win), and for seeds the SYNTHCTL_SEED variable; each run
// writes its outputs plus a manifest.json recording the resolved setup.

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <synthctl/synthctl.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace synthctl;

namespace {

// Post-parse usage problems (bad flag combinations, malformed values) that
// should exit 2 like any other usage error.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void warn(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config '" + path + "'");
  try {
    json j;
    in >> j;
    if (!j.is_object()) throw ParseError("config '" + path + "' must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw ParseError("bad config '" + path + "': " + e.what());
  }
}

// Fills a parameter from the config file unless the flag was given on the
// command line.
template <class T>
void overlay(const CLI::App& cmd, const json& cfg, const std::string& key, T& var) {
  const auto* opt = cmd.get_option_no_throw("--" + key);
  if (opt && opt->count() > 0) return;
  if (!cfg.contains(key)) return;
  try {
    var = cfg.at(key).get<T>();
  } catch (const json::exception&) {
    throw UsageError("config key '" + key + "' has the wrong type");
  }
}

std::uint64_t resolve_seed(const CLI::App& cmd, const json& cfg, std::uint64_t flag_value) {
  const auto* opt = cmd.get_option_no_throw("--seed");
  if (opt && opt->count() > 0) return flag_value;
  if (cfg.contains("seed")) {
    try {
      return cfg.at("seed").get<std::uint64_t>();
    } catch (const json::exception&) {
      throw UsageError("config key 'seed' has the wrong type");
    }
  }
  if (const char* env = std::getenv("SYNTHCTL_SEED")) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(env, env + std::strlen(env), v);
    if (ec != std::errc() || *p != '\0')
      throw UsageError("SYNTHCTL_SEED is not an unsigned integer");
    return v;
  }
  return flag_value;
}

std::pair<int, int> parse_window(const std::string& s) {
  auto pos = s.find(':');
  if (pos == std::string::npos || pos == 0 || pos + 1 >= s.size())
    throw UsageError("window must look like a:b, got '" + s + "'");
  auto num = [&](const std::string& part) {
    int v = 0;
    auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc() || p != part.data() + part.size())
      throw UsageError("bad window bound '" + part + "'");
    return v;
  };
  int a = num(s.substr(0, pos)), b = num(s.substr(pos + 1));
  if (a > b) throw UsageError("window start exceeds end in '" + s + "'");
  return {a, b};
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  size_t pos = 0;
  while (pos <= s.size() && !s.empty()) {
    size_t sep = s.find(',', pos);
    std::string tok =
        csv::trim(s.substr(pos, sep == std::string::npos ? std::string::npos : sep - pos));
    if (!tok.empty()) out.push_back(tok);
    if (sep == std::string::npos) break;
    pos = sep + 1;
  }
  return out;
}

// Shared panel-loading flags.
struct PanelArgs {
  std::string input, schema = "wide", metric, meta;
};

void add_panel_flags(CLI::App* cmd, PanelArgs& a, const std::string& default_metric) {
  a.metric = default_metric;
  cmd->add_option("--input", a.input, "panel CSV to read")->required();
  cmd->add_option("--schema", a.schema, "input layout: wide or long")
      ->check(CLI::IsMember({"wide", "long"}));
  cmd->add_option("--metric", a.metric, "metric name of the panel values");
  cmd->add_option("--meta", a.meta,
                  "unit metadata CSV (unit,population,region,intervention_date)");
}

void overlay_panel(const CLI::App& cmd, const json& cfg, PanelArgs& a) {
  overlay(cmd, cfg, "input", a.input);
  overlay(cmd, cfg, "schema", a.schema);
  overlay(cmd, cfg, "metric", a.metric);
  overlay(cmd, cfg, "meta", a.meta);
  if (a.input.empty()) throw UsageError("--input is required");
  if (a.schema != "wide" && a.schema != "long")
    throw UsageError("--schema must be wide or long");
}

Panel load_panel(const PanelArgs& a) {
  Panel p = ingest_csv(a.input, a.schema == "long" ? CsvSchema::Long : CsvSchema::Wide,
                       a.metric);
  if (!a.meta.empty()) p.attach_meta(load_meta(a.meta));
  return p;
}

json panel_config(const PanelArgs& a) {
  return {{"input", a.input}, {"schema", a.schema}, {"metric", a.metric}, {"meta", a.meta}};
}

std::vector<std::string> panel_inputs(const PanelArgs& a, const std::string& config) {
  std::vector<std::string> in{a.input};
  if (!a.meta.empty()) in.push_back(a.meta);
  if (!config.empty()) in.push_back(config);
  return in;
}

std::string out_path(const std::string& out_dir, const std::string& name) {
  return (fs::path(out_dir) / name).string();
}

void write_manifest(const std::string& out_dir, const std::string& sub, json cfg,
                    const std::vector<std::string>& inputs,
                    std::vector<std::string> outputs) {
  cfg["out-dir"] = out_dir;
  io::write_manifest(out_path(out_dir, "manifest.json"), sub, cfg, inputs,
                     std::move(outputs));
}

// ---------------------------------------------------------------- subcommands

struct IngestArgs {
  PanelArgs panel;
  std::string config, out_dir = ".", out = "panel.csv";
  int smooth = 0;
  bool per_million_flag = false, to_daily_flag = false;
};

int run_ingest(const CLI::App& cmd, IngestArgs& a) {
  json cfg = load_config(a.config);
  overlay_panel(cmd, cfg, a.panel);
  overlay(cmd, cfg, "out-dir", a.out_dir);
  overlay(cmd, cfg, "out", a.out);
  overlay(cmd, cfg, "smooth", a.smooth);
  overlay(cmd, cfg, "per-million", a.per_million_flag);
  overlay(cmd, cfg, "to-daily", a.to_daily_flag);

  Panel p = load_panel(a.panel);
  if (p.metric_cumulative()) {
    auto bad = p.cumulative_violations();
    for (size_t i = 0; i < std::min<size_t>(bad.size(), 5); ++i)
      warn("cumulative series decreases: " + bad[i].unit + " on " + bad[i].date.iso());
    if (bad.size() > 5)
      warn(std::to_string(bad.size() - 5) + " further cumulative violations");
  }
  if (a.to_daily_flag) {
    std::vector<CellFlag> negatives;
    p = to_daily(p, &negatives);
    for (size_t i = 0; i < std::min<size_t>(negatives.size(), 5); ++i)
      warn("negative daily difference: " + negatives[i].unit + " on " +
           negatives[i].date.iso());
    if (negatives.size() > 5)
      warn(std::to_string(negatives.size() - 5) + " further negative differences");
  }
  if (a.smooth > 1) p = moving_average(p, a.smooth);
  if (a.per_million_flag) p = per_million(p);

  fs::create_directories(a.out_dir);
  std::string out = out_path(a.out_dir, a.out);
  io::write_panel_csv(out, p, "ingest");
  json resolved = panel_config(a.panel);
  resolved.update({{"smooth", a.smooth},
                   {"per-million", a.per_million_flag},
                   {"to-daily", a.to_daily_flag},
                   {"out", a.out}});
  write_manifest(a.out_dir, "ingest", resolved, panel_inputs(a.panel, a.config), {out});
  return 0;
}

struct AlignArgs {
  PanelArgs panel;
  std::string config, out_dir = ".", out = "offsets.csv", split_out = "split.csv";
  std::string rule;
  double threshold = 100.0, drop_pct = 25.0;
  bool per_capita = false;
  int sustain = 7, smooth = -1, train_days = 15, test_up_to = 30;
};

int run_align(const CLI::App& cmd, AlignArgs& a) {
  json cfg = load_config(a.config);
  overlay_panel(cmd, cfg, a.panel);
  overlay(cmd, cfg, "out-dir", a.out_dir);
  overlay(cmd, cfg, "out", a.out);
  overlay(cmd, cfg, "split-out", a.split_out);
  overlay(cmd, cfg, "rule", a.rule);
  overlay(cmd, cfg, "threshold", a.threshold);
  overlay(cmd, cfg, "per-capita", a.per_capita);
  overlay(cmd, cfg, "drop-pct", a.drop_pct);
  overlay(cmd, cfg, "sustain", a.sustain);
  overlay(cmd, cfg, "smooth", a.smooth);
  overlay(cmd, cfg, "train-days", a.train_days);
  overlay(cmd, cfg, "test-up-to", a.test_up_to);
  if (a.rule != "threshold" && a.rule != "intervention" && a.rule != "mobility")
    throw UsageError("--rule must be threshold, intervention or mobility");
  // By default the mobility scan runs on the 7-day moving average; the other
  // rules use the series as ingested.
  if (a.smooth < 0) a.smooth = a.rule == "mobility" ? 7 : 0;

  Panel p = load_panel(a.panel);
  if (a.smooth > 1) p = moving_average(p, a.smooth);
  AlignedPanel aligned = [&] {
    if (a.rule == "threshold") return align_by_threshold(p, a.threshold, a.per_capita);
    if (a.rule == "intervention") return align_by_intervention(p);
    auto dates = infer_lockdown_from_mobility(p, a.drop_pct, a.sustain);
    return align_by_dates(p, dates, "no sustained mobility drop");
  }();
  for (const auto& e : aligned.excluded()) warn("excluded " + e.unit + ": " + e.reason);

  fs::create_directories(a.out_dir);
  std::string out = out_path(a.out_dir, a.out);
  io::write_offsets_csv(out, aligned, "align");
  TrainTestSplit split = train_test_split(aligned, a.train_days, a.test_up_to);
  std::string split_path = out_path(a.out_dir, a.split_out);
  {
    auto f = io::open_out(split_path);
    io::write_header_comment(f, "align");
    f << "unit,role\n";
    for (const auto& u : split.donors) f << u << ",donor\n";
    for (const auto& u : split.targets) f << u << ",target\n";
  }
  json resolved = panel_config(a.panel);
  resolved.update({{"rule", a.rule},
                   {"threshold", a.threshold},
                   {"per-capita", a.per_capita},
                   {"drop-pct", a.drop_pct},
                   {"sustain", a.sustain},
                   {"smooth", a.smooth},
                   {"train-days", a.train_days},
                   {"test-up-to", a.test_up_to},
                   {"out", a.out},
                   {"split-out", a.split_out}});
  write_manifest(a.out_dir, "align", resolved, panel_inputs(a.panel, a.config),
                 {out, split_path});
  return 0;
}

// Donor matrix + target series assembly shared by fit and predict. In
// calendar mode columns are panel days and t0 is a calendar index; in aligned
// mode (offsets file) columns are relative days from each unit's t0 onward
// and the model's t0 is the train/test split index.
struct FitData {
  Eigen::MatrixXd donors;
  std::vector<std::string> donor_ids;
  Eigen::VectorXd target;
};

FitData assemble(const Panel& p, const std::vector<std::string>& donor_ids,
                 const std::string& target, const std::string& offsets_path) {
  for (const auto& d : donor_ids)
    if (!p.unit_index(d)) throw InvalidParameter("donor '" + d + "' not in the panel");
  if (!p.unit_index(target))
    throw InvalidParameter("target '" + target + "' not in the panel");
  FitData fd;
  fd.donor_ids = donor_ids;
  if (offsets_path.empty()) {
    fd.donors.resize(donor_ids.size(), p.day_count());
    for (size_t i = 0; i < donor_ids.size(); ++i)
      fd.donors.row(i) = p.values().row(*p.unit_index(donor_ids[i]));
    fd.target = p.values().row(*p.unit_index(target));
    return fd;
  }
  auto dates = io::read_offsets_csv(offsets_path);
  AlignedPanel aligned = align_by_dates(p, dates, "not in the offsets file");
  if (!aligned.unit_index(target))
    throw InvalidParameter("target '" + target + "' has no offset");
  const int width = aligned.max_rel() + 1;  // rel days [0, max_rel]
  fd.donors.resize(donor_ids.size(), width);
  for (size_t i = 0; i < donor_ids.size(); ++i) {
    auto idx = aligned.unit_index(donor_ids[i]);
    if (!idx) throw InvalidParameter("donor '" + donor_ids[i] + "' has no offset");
    fd.donors.row(i) = aligned.rel_series(*idx, 0, aligned.max_rel());
  }
  fd.target = aligned.rel_series(*aligned.unit_index(target), 0, aligned.max_rel());
  return fd;
}

struct FitArgs {
  PanelArgs panel;
  std::string config, out_dir = ".", out = "model.json";
  std::string target, donors_list, t0_date, offsets;
  int train_days = 15, rank = 0;
  double energy = 0.99, ridge = 0.0;
};

int run_fit(const CLI::App& cmd, FitArgs& a) {
  json cfg = load_config(a.config);
  overlay_panel(cmd, cfg, a.panel);
  overlay(cmd, cfg, "out-dir", a.out_dir);
  overlay(cmd, cfg, "out", a.out);
  overlay(cmd, cfg, "target", a.target);
  overlay(cmd, cfg, "donors", a.donors_list);
  overlay(cmd, cfg, "t0-date", a.t0_date);
  overlay(cmd, cfg, "offsets", a.offsets);
  overlay(cmd, cfg, "train-days", a.train_days);
  overlay(cmd, cfg, "rank", a.rank);
  overlay(cmd, cfg, "energy", a.energy);
  overlay(cmd, cfg, "ridge", a.ridge);
  if (a.target.empty()) throw UsageError("--target is required");
  if (a.t0_date.empty() == a.offsets.empty())
    throw UsageError("give exactly one of --t0-date and --offsets");

  Panel p = load_panel(a.panel);
  std::vector<std::string> donors = split_list(a.donors_list);
  if (donors.empty()) {
    for (const auto& u : p.units())
      if (u != a.target) donors.push_back(u);
  }
  if (!a.offsets.empty()) {
    // keep only donors present in the offsets file
    auto dates = io::read_offsets_csv(a.offsets);
    std::vector<std::string> kept;
    for (const auto& d : donors)
      if (dates.count(d)) kept.push_back(d);
      else warn("donor " + d + " has no offset, dropped");
    donors = std::move(kept);
  }

  FitData fd = assemble(p, donors, a.target, a.offsets);
  int t0 = a.offsets.empty()
               ? [&] {
                   auto d = p.day_of(Date::parse(a.t0_date));
                   if (!d) throw RangeError("t0 date outside the panel calendar");
                   return *d;
                 }()
               : a.train_days;
  RankPolicy policy = a.rank > 0 ? RankPolicy::fixed(a.rank) : RankPolicy::by_energy(a.energy);
  RscModel model = fit_rsc(fd.donors, fd.donor_ids, fd.target, t0, policy, a.ridge);

  fs::create_directories(a.out_dir);
  std::string out = out_path(a.out_dir, a.out);
  io::write_model_json(out, model, a.target);
  json resolved = panel_config(a.panel);
  resolved.update({{"target", a.target},
                   {"donors", a.donors_list},
                   {"t0-date", a.t0_date},
                   {"offsets", a.offsets},
                   {"train-days", a.train_days},
                   {"rank", a.rank},
                   {"energy", a.energy},
                   {"ridge", a.ridge},
                   {"out", a.out}});
  auto inputs = panel_inputs(a.panel, a.config);
  if (!a.offsets.empty()) inputs.push_back(a.offsets);
  write_manifest(a.out_dir, "fit", resolved, inputs, {out});
  return 0;
}

struct PredictArgs {
  PanelArgs panel;
  std::string config, out_dir = ".", out = "trajectory.csv";
  std::string model_path, offsets;
};

int run_predict(const CLI::App& cmd, PredictArgs& a) {
  json cfg = load_config(a.config);
  overlay_panel(cmd, cfg, a.panel);
  overlay(cmd, cfg, "out-dir", a.out_dir);
  overlay(cmd, cfg, "out", a.out);
  overlay(cmd, cfg, "model", a.model_path);
  overlay(cmd, cfg, "offsets", a.offsets);
  if (a.model_path.empty()) throw UsageError("--model is required");

  io::StoredModel stored = io::read_model_json(a.model_path);
  Panel p = load_panel(a.panel);
  FitData fd = assemble(p, stored.donor_ids, stored.target_id, a.offsets);
  if (stored.t0 < 1 || stored.t0 >= int(fd.donors.cols()))
    throw RangeError("stored t0 outside the panel horizon");

  // Apply the stored weights to a freshly denoised donor block.
  DenoiseResult den = denoise(fd.donors, stored.kept_rank);
  Trajectory traj;
  traj.target_id = stored.target_id;
  traj.start_rel = -stored.t0;
  for (int d = 0; d < fd.donors.cols(); ++d) {
    double cf = stored.weights.dot(den.mhat.col(d));
    double act = fd.target(d);
    traj.counterfactual.push_back(cf);
    traj.actual.push_back(act);
    traj.gap.push_back(is_missing(act) ? kMissing : cf - act);
  }

  fs::create_directories(a.out_dir);
  std::string out = out_path(a.out_dir, a.out);
  io::write_trajectory_csv(out, traj, "predict");
  json resolved = panel_config(a.panel);
  resolved.update({{"model", a.model_path}, {"offsets", a.offsets}, {"out", a.out}});
  auto inputs = panel_inputs(a.panel, a.config);
  inputs.push_back(a.model_path);
  if (!a.offsets.empty()) inputs.push_back(a.offsets);
  write_manifest(a.out_dir, "predict", resolved, inputs, {out});
  return 0;
}

struct CounterfactualArgs {
  PanelArgs panel;
  std::string config, out_dir = ".", out = "trajectory.csv", summary_out = "summary.csv";
  std::string target, window = "-40:90";
  int shift = 0, rank = 3;
  double ridge = 0.0;
};

int run_counterfactual(const CLI::App& cmd, CounterfactualArgs& a) {
  json cfg = load_config(a.config);
  overlay_panel(cmd, cfg, a.panel);
  overlay(cmd, cfg, "out-dir", a.out_dir);
  overlay(cmd, cfg, "out", a.out);
  overlay(cmd, cfg, "summary-out", a.summary_out);
  overlay(cmd, cfg, "target", a.target);
  overlay(cmd, cfg, "window", a.window);
  overlay(cmd, cfg, "shift", a.shift);
  overlay(cmd, cfg, "rank", a.rank);
  overlay(cmd, cfg, "ridge", a.ridge);
  if (a.target.empty()) throw UsageError("--target is required");
  if (a.panel.meta.empty()) throw UsageError("--meta with intervention dates is required");
  auto [win_lo, win_hi] = parse_window(a.window);

  Panel p = load_panel(a.panel);
  auto tgt_row = p.unit_index(a.target);
  if (!tgt_row) throw InvalidParameter("target '" + a.target + "' not in the panel");
  const UnitMeta* tm = p.meta_for(a.target);
  if (!tm || !tm->strictest_intervention())
    throw MetadataError("no intervention date for target '" + a.target + "'");
  auto t0_day = p.day_of(*tm->strictest_intervention());
  if (!t0_day) throw RangeError("target intervention date outside the panel calendar");

  AlignedPanel aligned = align_by_intervention(p);
  for (const auto& e : aligned.excluded()) warn("excluded " + e.unit + ": " + e.reason);
  int lo = std::max(win_lo, aligned.min_rel()), hi = std::min(win_hi, aligned.max_rel());
  std::vector<std::string> donor_ids;
  std::vector<int> donor_rows;
  for (int u = 0; u < aligned.unit_count(); ++u)
    if (aligned.units()[u] != a.target) {
      donor_ids.push_back(aligned.units()[u]);
      donor_rows.push_back(u);
    }
  if (donor_ids.empty()) throw EmptyDonorError("no donor has an intervention date");
  Eigen::MatrixXd donors(donor_ids.size(), hi - lo + 1);
  for (size_t i = 0; i < donor_rows.size(); ++i)
    donors.row(i) = aligned.rel_series(donor_rows[i], lo, hi);

  ShiftedCounterfactual sc = counterfactual_shifted(
      donors, lo, donor_ids, p.values().row(*tgt_row), *t0_day, a.shift,
      RankPolicy::fixed(a.rank), a.target, a.ridge);

  fs::create_directories(a.out_dir);
  std::string out = out_path(a.out_dir, a.out);
  std::string sum = out_path(a.out_dir, a.summary_out);
  io::write_trajectory_csv(out, sc.trajectory, "counterfactual");
  io::write_shift_summary_csv(sum, sc, a.shift, "counterfactual");
  json resolved = panel_config(a.panel);
  resolved.update({{"target", a.target},
                   {"shift", a.shift},
                   {"window", a.window},
                   {"rank", a.rank},
                   {"ridge", a.ridge},
                   {"out", a.out},
                   {"summary-out", a.summary_out}});
  write_manifest(a.out_dir, "counterfactual", resolved, panel_inputs(a.panel, a.config),
                 {out, sum});
  return 0;
}

struct SiArgs {
  PanelArgs panel;
  std::string config, out_dir = ".", out = "si_compare.csv",
              per_target_out = "per_target.csv";
  std::string donor_region, reference_date, bins_list = "6000,8000,10000,12000", targets_list;
  double tolerance = 0.5;
  int rank = 3, post_end = 0, jobs = 1;
};

int run_si_compare(const CLI::App& cmd, SiArgs& a) {
  json cfg = load_config(a.config);
  overlay_panel(cmd, cfg, a.panel);
  overlay(cmd, cfg, "out-dir", a.out_dir);
  overlay(cmd, cfg, "out", a.out);
  overlay(cmd, cfg, "per-target-out", a.per_target_out);
  overlay(cmd, cfg, "donor-region", a.donor_region);
  overlay(cmd, cfg, "reference-date", a.reference_date);
  overlay(cmd, cfg, "bins", a.bins_list);
  overlay(cmd, cfg, "targets", a.targets_list);
  overlay(cmd, cfg, "tolerance", a.tolerance);
  overlay(cmd, cfg, "rank", a.rank);
  overlay(cmd, cfg, "post-end", a.post_end);
  overlay(cmd, cfg, "jobs", a.jobs);
  if (a.donor_region.empty()) throw UsageError("--donor-region is required");
  if (a.reference_date.empty()) throw UsageError("--reference-date is required");
  if (a.panel.meta.empty()) throw UsageError("--meta with regions is required");

  Panel p = load_panel(a.panel);
  std::vector<std::string> region;
  for (const auto& u : p.units()) {
    const UnitMeta* m = p.meta_for(u);
    if (m && m->region == a.donor_region) region.push_back(u);
  }
  if (region.empty())
    throw EmptyDonorError("no unit belongs to region '" + a.donor_region + "'");
  std::vector<std::string> targets = split_list(a.targets_list);
  if (targets.empty()) targets = p.units();

  BinSpec bins;
  for (const auto& e : split_list(a.bins_list)) bins.edges.push_back(std::stod(e));
  StageFilter filter{Date::parse(a.reference_date), a.tolerance};
  RegionComparison rc =
      compare_regions(targets, region, p, filter, bins, a.rank, a.post_end, a.jobs);
  for (const auto& [unit, cpm] : rc.out_of_range)
    warn("outside bin range: " + unit + " at " + csv::format_double(cpm) +
         " cases per million");
  for (const auto& e : rc.skipped) warn("skipped " + e.unit + ": " + e.reason);

  fs::create_directories(a.out_dir);
  std::string out = out_path(a.out_dir, a.out);
  std::string per_target = out_path(a.out_dir, a.per_target_out);
  io::write_bins_csv(out, rc, "si-compare");
  io::write_per_target_csv(per_target, rc, "si-compare");
  json resolved = panel_config(a.panel);
  resolved.update({{"donor-region", a.donor_region},
                   {"reference-date", a.reference_date},
                   {"tolerance", a.tolerance},
                   {"rank", a.rank},
                   {"bins", a.bins_list},
                   {"targets", a.targets_list},
                   {"post-end", a.post_end},
                   {"jobs", a.jobs},
                   {"out", a.out},
                   {"per-target-out", a.per_target_out}});
  write_manifest(a.out_dir, "si-compare", resolved, panel_inputs(a.panel, a.config),
                 {out, per_target});
  return 0;
}

struct ClusterArgs {
  PanelArgs panel;
  std::string config, out_dir = ".", out = "assignment.csv",
              means_out = "cluster_means.csv";
  std::string window;
  int k = 4, restarts = 1;
  std::uint64_t seed = 0;
  bool normalize = false;
};

int run_cluster(const CLI::App& cmd, ClusterArgs& a) {
  json cfg = load_config(a.config);
  overlay_panel(cmd, cfg, a.panel);
  overlay(cmd, cfg, "out-dir", a.out_dir);
  overlay(cmd, cfg, "out", a.out);
  overlay(cmd, cfg, "means-out", a.means_out);
  overlay(cmd, cfg, "window", a.window);
  overlay(cmd, cfg, "k", a.k);
  overlay(cmd, cfg, "restarts", a.restarts);
  overlay(cmd, cfg, "normalize", a.normalize);
  a.seed = resolve_seed(cmd, cfg, a.seed);

  Panel p = load_panel(a.panel);
  int lo = 0, hi = p.day_count() - 1;
  if (!a.window.empty()) std::tie(lo, hi) = parse_window(a.window);
  ClusterResult res = kmeans_trends(p, lo, hi, a.k, a.seed, a.normalize, a.restarts);
  for (const auto& e : res.excluded) warn("excluded " + e.unit + ": " + e.reason);
  auto groups = cluster_aggregates(p, res, lo, hi);

  fs::create_directories(a.out_dir);
  std::string out = out_path(a.out_dir, a.out);
  std::string means = out_path(a.out_dir, a.means_out);
  io::write_assignment_csv(out, res, "cluster");
  io::write_cluster_means_csv(means, groups, "cluster");
  json resolved = panel_config(a.panel);
  resolved.update({{"window", a.window},
                   {"k", a.k},
                   {"seed", a.seed},
                   {"restarts", a.restarts},
                   {"normalize", a.normalize},
                   {"out", a.out},
                   {"means-out", a.means_out}});
  write_manifest(a.out_dir, "cluster", resolved, panel_inputs(a.panel, a.config),
                 {out, means});
  return 0;
}

struct ImpactArgs {
  PanelArgs panel;
  std::string config, out_dir = ".", out = "impact.csv";
  int smooth = 7;
};

int run_impact(const CLI::App& cmd, ImpactArgs& a) {
  json cfg = load_config(a.config);
  overlay_panel(cmd, cfg, a.panel);
  overlay(cmd, cfg, "out-dir", a.out_dir);
  overlay(cmd, cfg, "out", a.out);
  overlay(cmd, cfg, "smooth", a.smooth);
  if (a.panel.meta.empty()) throw UsageError("--meta with intervention dates is required");

  Panel p = load_panel(a.panel);
  AlignedPanel aligned = align_by_intervention(p);
  for (const auto& e : aligned.excluded()) warn("excluded " + e.unit + ": " + e.reason);
  PeakReport rep = peak_analysis(aligned, a.smooth);
  for (const auto& e : rep.excluded) warn("excluded " + e.unit + ": " + e.reason);
  for (const auto& s : rep.stats)
    if (s.right_censored)
      warn("peak of " + s.unit + " sits on its last observed day (right-censored)");

  fs::create_directories(a.out_dir);
  std::string out = out_path(a.out_dir, a.out);
  io::write_peaks_csv(out, rep, "impact");
  json resolved = panel_config(a.panel);
  resolved.update({{"smooth", a.smooth}, {"out", a.out}});
  write_manifest(a.out_dir, "impact", resolved, panel_inputs(a.panel, a.config), {out});
  return 0;
}

struct GapArgs {
  std::string config, out_dir = ".", out = "gap.csv";
  std::string trajectory_path, window;
};

int run_gap(const CLI::App& cmd, GapArgs& a) {
  json cfg = load_config(a.config);
  overlay(cmd, cfg, "out-dir", a.out_dir);
  overlay(cmd, cfg, "out", a.out);
  overlay(cmd, cfg, "trajectory", a.trajectory_path);
  overlay(cmd, cfg, "window", a.window);
  if (a.trajectory_path.empty()) throw UsageError("--trajectory is required");
  if (a.window.empty()) throw UsageError("--window is required");
  auto [lo, hi] = parse_window(a.window);

  Trajectory t = io::read_trajectory_csv(a.trajectory_path);
  GapSummary g = gap_summary(t, lo, hi);

  fs::create_directories(a.out_dir);
  std::string out = out_path(a.out_dir, a.out);
  io::write_gap_csv(out, g, "gap");
  json resolved = {{"trajectory", a.trajectory_path}, {"window", a.window}, {"out", a.out}};
  std::vector<std::string> inputs{a.trajectory_path};
  if (!a.config.empty()) inputs.push_back(a.config);
  write_manifest(a.out_dir, "gap", resolved, inputs, {out});
  return 0;
}

struct SynthGenArgs {
  std::string config, out_dir = ".", out = "panel.csv", labels_out = "labels.csv",
              meta_out = "meta.csv";
  std::string regimes_list = "strict,loose", start = "2020-03-01";
  int units = 50, days = 180;
  double jitter = 0.1;
  std::uint64_t seed = 0;
};

SirConfig regime_preset(const std::string& name) {
  SirConfig cfg;  // defaults describe the strict regime
  if (name == "strict") return cfg;
  if (name == "loose") {
    cfg.beta_lockdown = 0.065;
    return cfg;
  }
  throw UsageError("unknown regime preset '" + name + "' (have: strict, loose)");
}

SirConfig config_regime(const json& j, SirConfig base) {
  if (j.contains("population")) base.population = j.at("population").get<std::int64_t>();
  if (j.contains("beta0")) base.beta0 = j.at("beta0").get<double>();
  if (j.contains("beta-lockdown")) base.beta_lockdown = j.at("beta-lockdown").get<double>();
  if (j.contains("gamma")) base.gamma = j.at("gamma").get<double>();
  if (j.contains("ifr")) base.ifr = j.at("ifr").get<double>();
  if (j.contains("seed-infected")) base.seed_infected = j.at("seed-infected").get<int>();
  if (j.contains("t0")) base.t0 = j.at("t0").get<int>();
  if (j.contains("noise-sigma")) base.noise_sigma = j.at("noise-sigma").get<double>();
  if (j.contains("report-lag")) base.report_lag = j.at("report-lag").get<int>();
  return base;
}

int run_synth_gen(const CLI::App& cmd, SynthGenArgs& a) {
  json cfg = load_config(a.config);
  overlay(cmd, cfg, "out-dir", a.out_dir);
  overlay(cmd, cfg, "out", a.out);
  overlay(cmd, cfg, "labels-out", a.labels_out);
  overlay(cmd, cfg, "meta-out", a.meta_out);
  overlay(cmd, cfg, "regimes", a.regimes_list);
  overlay(cmd, cfg, "start", a.start);
  overlay(cmd, cfg, "units", a.units);
  overlay(cmd, cfg, "days", a.days);
  overlay(cmd, cfg, "jitter", a.jitter);
  a.seed = resolve_seed(cmd, cfg, a.seed);

  std::vector<Regime> regimes;
  if (cfg.contains("regime-params")) {
    // full per-regime parameter control through the config file
    const json& arr = cfg.at("regime-params");
    if (!arr.is_array()) throw UsageError("config key 'regime-params' must be an array");
    for (const auto& j : arr) {
      std::string label = j.at("label").get<std::string>();
      SirConfig base = (label == "strict" || label == "loose") ? regime_preset(label)
                                                               : SirConfig{};
      regimes.push_back({label, config_regime(j, base), j.at("count").get<int>()});
    }
  } else {
    auto names = split_list(a.regimes_list);
    if (names.empty()) throw UsageError("--regimes must name at least one preset");
    int base = a.units / int(names.size()), extra = a.units % int(names.size());
    for (size_t i = 0; i < names.size(); ++i)
      regimes.push_back(
          {names[i], regime_preset(names[i]), base + (int(i) < extra ? 1 : 0)});
  }

  GeneratedPanel gen =
      generate_panel(regimes, a.jitter, a.days, a.seed, Date::parse(a.start));

  fs::create_directories(a.out_dir);
  std::string out = out_path(a.out_dir, a.out);
  std::string labels = out_path(a.out_dir, a.labels_out);
  std::string meta = out_path(a.out_dir, a.meta_out);
  io::write_panel_csv(out, gen.panel, "synth-gen");
  io::write_labels_csv(labels, gen.panel.units(), gen.labels, "synth-gen");
  io::write_meta_csv(meta, gen.panel.meta(), "synth-gen");
  json resolved = {{"regimes", a.regimes_list}, {"start", a.start},
                   {"units", a.units},          {"days", a.days},
                   {"jitter", a.jitter},        {"seed", a.seed},
                   {"out", a.out},              {"labels-out", a.labels_out},
                   {"meta-out", a.meta_out}};
  std::vector<std::string> inputs;
  if (!a.config.empty()) inputs.push_back(a.config);
  write_manifest(a.out_dir, "synth-gen", resolved, inputs,
                 {out, labels, meta});
  return 0;
}

void add_common(CLI::App* cmd, std::string& config, std::string& out_dir) {
  cmd->add_option("--config", config, "JSON file mirroring the flags (flags win)");
  cmd->add_option("--out-dir", out_dir, "directory for outputs and manifest.json");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"panel counterfactuals via robust synthetic control"};
  app.set_version_flag("--version", std::string(kToolName) + " " + std::string(kVersion));
  app.require_subcommand(1);

  IngestArgs ingest_args;
  auto* ingest_cmd = app.add_subcommand("ingest", "read, clean and transform a panel");
  add_common(ingest_cmd, ingest_args.config, ingest_args.out_dir);
  add_panel_flags(ingest_cmd, ingest_args.panel, "value");
  ingest_cmd->add_option("--smooth", ingest_args.smooth, "trailing moving-average window");
  ingest_cmd->add_flag("--per-million", ingest_args.per_million_flag,
                       "rescale to per-million persons");
  ingest_cmd->add_flag("--to-daily", ingest_args.to_daily_flag,
                       "first-difference a cumulative panel");
  ingest_cmd->add_option("--out", ingest_args.out, "output panel file name");

  AlignArgs align_args;
  auto* align_cmd = app.add_subcommand("align", "re-index units to relative time");
  add_common(align_cmd, align_args.config, align_args.out_dir);
  add_panel_flags(align_cmd, align_args.panel, "cumulative-deaths");
  align_cmd->add_option("--rule", align_args.rule,
                        "alignment event: threshold, intervention or mobility")
      ->required()
      ->check(CLI::IsMember({"threshold", "intervention", "mobility"}));
  align_cmd->add_option("--threshold", align_args.threshold, "crossing level");
  align_cmd->add_flag("--per-capita", align_args.per_capita,
                      "compare the threshold on per-million values");
  align_cmd->add_option("--drop-pct", align_args.drop_pct, "mobility drop depth, percent");
  align_cmd->add_option("--sustain", align_args.sustain, "days the drop must persist");
  align_cmd->add_option("--smooth", align_args.smooth,
                        "moving-average window before the scan (-1 = rule default)");
  align_cmd->add_option("--train-days", align_args.train_days, "donor/target split: training days");
  align_cmd->add_option("--test-up-to", align_args.test_up_to, "donor/target split: test horizon");
  align_cmd->add_option("--out", align_args.out, "offsets file name");
  align_cmd->add_option("--split-out", align_args.split_out, "donor/target roles file name");

  FitArgs fit_args;
  auto* fit_cmd = app.add_subcommand("fit", "fit synthetic-control weights for a target");
  add_common(fit_cmd, fit_args.config, fit_args.out_dir);
  add_panel_flags(fit_cmd, fit_args.panel, "cumulative-deaths");
  fit_cmd->add_option("--target", fit_args.target, "unit to explain")->required();
  fit_cmd->add_option("--donors", fit_args.donors_list,
                      "comma-separated donor ids (default: all other units)");
  fit_cmd->add_option("--t0-date", fit_args.t0_date,
                      "intervention date (calendar-mode fit)");
  fit_cmd->add_option("--offsets", fit_args.offsets,
                      "offsets CSV from align (aligned-mode fit)");
  fit_cmd->add_option("--train-days", fit_args.train_days,
                      "training days from relative day 0 (aligned mode)");
  fit_cmd->add_option("--rank", fit_args.rank, "kept singular values (0 = energy rule)");
  fit_cmd->add_option("--energy", fit_args.energy, "retained energy fraction");
  fit_cmd->add_option("--ridge", fit_args.ridge, "ridge penalty for the regression");
  fit_cmd->add_option("--out", fit_args.out, "model file name");

  PredictArgs predict_args;
  auto* predict_cmd =
      app.add_subcommand("predict", "project a stored model over the panel horizon");
  add_common(predict_cmd, predict_args.config, predict_args.out_dir);
  add_panel_flags(predict_cmd, predict_args.panel, "cumulative-deaths");
  predict_cmd->add_option("--model", predict_args.model_path, "model JSON from fit")
      ->required();
  predict_cmd->add_option("--offsets", predict_args.offsets,
                          "offsets CSV (must match the fit)");
  predict_cmd->add_option("--out", predict_args.out, "trajectory file name");

  CounterfactualArgs cf_args;
  auto* cf_cmd = app.add_subcommand(
      "counterfactual", "project the target as if its intervention moved by --shift");
  add_common(cf_cmd, cf_args.config, cf_args.out_dir);
  add_panel_flags(cf_cmd, cf_args.panel, "daily-deaths");
  cf_cmd->add_option("--target", cf_args.target, "unit to analyze")->required();
  cf_cmd->add_option("--shift", cf_args.shift, "days to move the intervention (<0 = earlier)")
      ->required();
  cf_cmd->add_option("--window", cf_args.window, "relative-day window a:b for donors");
  cf_cmd->add_option("--rank", cf_args.rank, "kept singular values");
  cf_cmd->add_option("--ridge", cf_args.ridge, "ridge penalty");
  cf_cmd->add_option("--out", cf_args.out, "trajectory file name");
  cf_cmd->add_option("--summary-out", cf_args.summary_out, "summary file name");

  SiArgs si_args;
  auto* si_cmd = app.add_subcommand(
      "si-compare", "stage-matched counterfactuals under a donor region's regime");
  add_common(si_cmd, si_args.config, si_args.out_dir);
  add_panel_flags(si_cmd, si_args.panel, "cumulative-cases");
  si_cmd->add_option("--donor-region", si_args.donor_region, "region tag of the donors")
      ->required();
  si_cmd->add_option("--reference-date", si_args.reference_date,
                     "stage-matching date (trajectory day 0)")
      ->required();
  si_cmd->add_option("--tolerance", si_args.tolerance, "stage band as a fraction");
  si_cmd->add_option("--rank", si_args.rank, "kept singular values (0 = pool-size rule)");
  si_cmd->add_option("--bins", si_args.bins_list, "case-density bin edges, per million");
  si_cmd->add_option("--targets", si_args.targets_list,
                     "comma-separated targets (default: every unit)");
  si_cmd->add_option("--post-end", si_args.post_end,
                     "exclusive end day of the error window (0 = horizon)");
  si_cmd->add_option("--jobs", si_args.jobs, "concurrent per-target fits");
  si_cmd->add_option("--out", si_args.out, "bin table file name");
  si_cmd->add_option("--per-target-out", si_args.per_target_out, "per-target file name");

  ClusterArgs cluster_args;
  auto* cluster_cmd = app.add_subcommand("cluster", "k-means over unit trend windows");
  add_common(cluster_cmd, cluster_args.config, cluster_args.out_dir);
  add_panel_flags(cluster_cmd, cluster_args.panel, "value");
  cluster_cmd->add_option("--window", cluster_args.window,
                          "day window a:b (default: whole calendar)");
  cluster_cmd->add_option("--k", cluster_args.k, "cluster count");
  cluster_cmd->add_option("--seed", cluster_args.seed,
                          "RNG seed (fallback: SYNTHCTL_SEED)");
  cluster_cmd->add_option("--restarts", cluster_args.restarts, "best-of-n restarts");
  cluster_cmd->add_flag("--normalize", cluster_args.normalize,
                        "z-score each unit's window");
  cluster_cmd->add_option("--out", cluster_args.out, "assignment file name");
  cluster_cmd->add_option("--means-out", cluster_args.means_out,
                          "per-cluster mean series file name");

  ImpactArgs impact_args;
  auto* impact_cmd =
      app.add_subcommand("impact", "per-unit peak timing around the intervention");
  add_common(impact_cmd, impact_args.config, impact_args.out_dir);
  add_panel_flags(impact_cmd, impact_args.panel, "daily-deaths");
  impact_cmd->add_option("--smooth", impact_args.smooth,
                         "moving-average window for the peak scan");
  impact_cmd->add_option("--out", impact_args.out, "peaks file name");

  GapArgs gap_args;
  auto* gap_cmd = app.add_subcommand("gap", "summarize a trajectory over a window");
  add_common(gap_cmd, gap_args.config, gap_args.out_dir);
  gap_cmd->add_option("--trajectory", gap_args.trajectory_path, "trajectory CSV")
      ->required();
  gap_cmd->add_option("--window", gap_args.window, "relative-day window a:b")->required();
  gap_cmd->add_option("--out", gap_args.out, "summary file name");

  SynthGenArgs gen_args;
  auto* gen_cmd = app.add_subcommand("synth-gen", "generate a ground-truth epidemic panel");
  add_common(gen_cmd, gen_args.config, gen_args.out_dir);
  gen_cmd->add_option("--units", gen_args.units, "number of units");
  gen_cmd->add_option("--days", gen_args.days, "calendar length");
  gen_cmd->add_option("--regimes", gen_args.regimes_list,
                      "comma-separated regime presets (strict, loose)");
  gen_cmd->add_option("--jitter", gen_args.jitter, "per-unit parameter jitter fraction");
  gen_cmd->add_option("--seed", gen_args.seed, "RNG seed (fallback: SYNTHCTL_SEED)");
  gen_cmd->add_option("--start", gen_args.start, "calendar start date");
  gen_cmd->add_option("--out", gen_args.out, "panel file name");
  gen_cmd->add_option("--labels-out", gen_args.labels_out, "regime labels file name");
  gen_cmd->add_option("--meta-out", gen_args.meta_out, "metadata file name");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (app.got_subcommand(ingest_cmd)) return run_ingest(*ingest_cmd, ingest_args);
    if (app.got_subcommand(align_cmd)) return run_align(*align_cmd, align_args);
    if (app.got_subcommand(fit_cmd)) return run_fit(*fit_cmd, fit_args);
    if (app.got_subcommand(predict_cmd)) return run_predict(*predict_cmd, predict_args);
    if (app.got_subcommand(cf_cmd)) return run_counterfactual(*cf_cmd, cf_args);
    if (app.got_subcommand(si_cmd)) return run_si_compare(*si_cmd, si_args);
    if (app.got_subcommand(cluster_cmd)) return run_cluster(*cluster_cmd, cluster_args);
    if (app.got_subcommand(impact_cmd)) return run_impact(*impact_cmd, impact_args);
    if (app.got_subcommand(gap_cmd)) return run_gap(*gap_cmd, gap_args);
    if (app.got_subcommand(gen_cmd)) return run_synth_gen(*gen_cmd, gen_args);
    std::cerr << "error kind=Usage msg=\"no subcommand\"\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error kind=Usage msg=\"" << e.what() << "\"\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error kind=" << e.kind() << " msg=\"" << e.what() << "\"\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error kind=Internal msg=\"" << e.what() << "\"\n";
    return 1;
  }
}
