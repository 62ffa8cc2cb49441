// End-to-end checks of the synthctl binary: exit codes, determinism,
// config/env resolution, manifests, and a few golden pipelines. Each test
// shells out to the real executable and inspects its files.

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <catch2/catch_amalgamated.hpp>
#include <json.hpp>
#include <synthctl/synthctl.hpp>

#include "testutil.hpp"

using namespace synthctl;
using nlohmann::json;
using oracle::fixture;
using oracle::read_file;
using oracle::temp_dir;
using oracle::write_file;

namespace {

struct RunResult {
  int code;
  std::string out, err;
};

// Runs the CLI through the shell so env-var prefixes work; stdout/stderr are
// captured via redirect files inside `dir`.
RunResult run(const std::string& args, const std::string& dir) {
  std::string out_file = dir + "/stdout.txt", err_file = dir + "/stderr.txt";
  std::string cmd = args + " > " + out_file + " 2> " + err_file;
  int raw = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = read_file(out_file);
  r.err = read_file(err_file);
  return r;
}

std::string bin() { return std::string(SYNTHCTL_BIN); }

std::string slurp(const std::string& path) { return read_file(path); }

json load_json(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  json j;
  in >> j;
  return j;
}

// Parses a writer-produced CSV into rows of fields, skipping '#' comments.
std::vector<std::vector<std::string>> parse_csv(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    rows.push_back(csv::split_line(line));
  }
  return rows;
}

}  // namespace

TEST_CASE("help and version exit cleanly", "[cli]") {
  std::string dir = temp_dir("cli_help");
  auto version = run(bin() + " --version", dir);
  CHECK(version.code == 0);
  CHECK(version.out.find("synthctl 0.1.0") != std::string::npos);

  auto help = run(bin() + " --help", dir);
  CHECK(help.code == 0);
  for (const char* sub : {"ingest", "align", "fit", "predict", "counterfactual",
                          "si-compare", "cluster", "impact", "gap", "synth-gen"})
    CHECK(help.out.find(sub) != std::string::npos);

  auto sub_help = run(bin() + " fit --help", dir);
  CHECK(sub_help.code == 0);
  CHECK(sub_help.out.find("--t0-date") != std::string::npos);
}

TEST_CASE("usage problems exit 2", "[cli]") {
  std::string dir = temp_dir("cli_usage");

  CHECK(run(bin(), dir).code == 2);                     // no subcommand
  CHECK(run(bin() + " frobnicate", dir).code == 2);     // unknown subcommand
  CHECK(run(bin() + " align --input x.csv --rule threshold --no-such-flag", dir).code ==
        2);
  CHECK(run(bin() + " align --input x.csv", dir).code == 2);  // --rule missing
  CHECK(run(bin() + " align --input x.csv --rule sideways", dir).code == 2);

  // fit wants exactly one of --t0-date / --offsets; both and neither fail
  // before any file is touched.
  auto both = run(bin() + " fit --input nope.csv --target a --t0-date 2020-03-01" +
                      " --offsets off.csv",
                  dir);
  CHECK(both.code == 2);
  CHECK(both.err.find("error kind=Usage") != std::string::npos);
  CHECK(run(bin() + " fit --input nope.csv --target a", dir).code == 2);

  auto window = run(bin() + " gap --trajectory t.csv --window 5:2", dir);
  CHECK(window.code == 2);
  CHECK(window.err.find("window start exceeds end") != std::string::npos);
}

TEST_CASE("data problems exit 1 with a kind-tagged line", "[cli]") {
  std::string dir = temp_dir("cli_data_err");

  auto missing = run(bin() + " ingest --input " + dir + "/absent.csv", dir);
  CHECK(missing.code == 1);
  CHECK(missing.err.find("error kind=ParseError") != std::string::npos);

  write_file(dir + "/dup.csv",
             "unit,2020-01-01,2020-01-02\na,1,2\na,3,4\n");
  auto dup = run(bin() + " ingest --input " + dir + "/dup.csv", dir);
  CHECK(dup.code == 1);
  CHECK(dup.err.find("error kind=DuplicateError") != std::string::npos);

  write_file(dir + "/tiny.csv", "unit,2020-01-01,2020-01-02\na,1,2\nb,3,4\n");
  auto bad_target = run(bin() + " fit --input " + dir +
                            "/tiny.csv --target nope --t0-date 2020-01-02 --out-dir " +
                            dir,
                        dir);
  CHECK(bad_target.code == 1);
  CHECK(bad_target.err.find("error kind=InvalidParameter") != std::string::npos);

  auto bad_gap = run(bin() + " gap --trajectory " + dir +
                         "/absent.csv --window 0:10 --out-dir " + dir,
                     dir);
  CHECK(bad_gap.code == 1);
  CHECK(bad_gap.err.find("error kind=ParseError") != std::string::npos);
}

TEST_CASE("synth-gen is deterministic and writes a manifest", "[cli]") {
  std::string a = temp_dir("cli_gen_a"), b = temp_dir("cli_gen_b"),
              c = temp_dir("cli_gen_c");
  std::string flags = " synth-gen --units 10 --days 60 --seed 41 --out-dir ";
  REQUIRE(run(bin() + flags + a, a).code == 0);
  REQUIRE(run(bin() + flags + b, b).code == 0);
  CHECK(slurp(a + "/panel.csv") == slurp(b + "/panel.csv"));
  CHECK(slurp(a + "/labels.csv") == slurp(b + "/labels.csv"));
  CHECK(slurp(a + "/meta.csv") == slurp(b + "/meta.csv"));

  REQUIRE(run(bin() + " synth-gen --units 10 --days 60 --seed 42 --out-dir " + c, c)
              .code == 0);
  CHECK(slurp(a + "/panel.csv") != slurp(c + "/panel.csv"));

  json man = load_json(a + "/manifest.json");
  CHECK(man.at("tool") == "synthctl");
  CHECK(man.at("version") == "0.1.0");
  CHECK(man.at("subcommand") == "synth-gen");
  CHECK(man.at("config").at("seed") == 41);
  CHECK(man.at("config").at("units") == 10);
  CHECK(man.at("inputs").empty());
  REQUIRE(man.at("outputs").size() == 3);
  bool saw_panel = false;
  for (const auto& o : man.at("outputs"))
    if (o.get<std::string>() == a + "/panel.csv") saw_panel = true;
  CHECK(saw_panel);

  // regime labels: half strict, half loose, unit names carry the label
  auto labels = parse_csv(a + "/labels.csv");
  REQUIRE(labels.size() == 11);  // header + 10 units
  CHECK(labels[0] == std::vector<std::string>{"unit", "regime"});
  CHECK(labels[1][0] == "strict-01");
  CHECK(labels[1][1] == "strict");
  CHECK(labels[10][0] == "loose-05");
  CHECK(labels[10][1] == "loose");
}

TEST_CASE("seed resolution: flag beats config beats environment", "[cli]") {
  std::string d_env = temp_dir("cli_seed_env"), d_flag = temp_dir("cli_seed_flag"),
              d_win = temp_dir("cli_seed_win"), d_cfg = temp_dir("cli_seed_cfg");
  std::string gen = " synth-gen --units 6 --days 40 --out-dir ";

  // SYNTHCTL_SEED=9 is equivalent to --seed 9
  REQUIRE(run("SYNTHCTL_SEED=9 " + bin() + gen + d_env, d_env).code == 0);
  REQUIRE(run(bin() + gen + d_flag + " --seed 9", d_flag).code == 0);
  CHECK(slurp(d_env + "/panel.csv") == slurp(d_flag + "/panel.csv"));
  CHECK(load_json(d_env + "/manifest.json").at("config").at("seed") == 9);

  // an explicit flag wins over the environment
  REQUIRE(run("SYNTHCTL_SEED=9 " + bin() + gen + d_win + " --seed 41", d_win).code == 0);
  CHECK(load_json(d_win + "/manifest.json").at("config").at("seed") == 41);

  // a config seed wins over the environment too
  write_file(d_cfg + "/cfg.json", "{\"seed\": 9}\n");
  REQUIRE(run("SYNTHCTL_SEED=5 " + bin() + gen + d_cfg + " --config " + d_cfg +
                  "/cfg.json",
              d_cfg)
              .code == 0);
  CHECK(slurp(d_cfg + "/panel.csv") == slurp(d_env + "/panel.csv"));

  // garbage in the environment is a usage error
  CHECK(run("SYNTHCTL_SEED=abc " + bin() + gen + d_env, d_env).code == 2);
}

TEST_CASE("config file fills parameters and flags win", "[cli]") {
  std::string dir = temp_dir("cli_config");
  write_file(dir + "/cfg.json", "{\"units\": 8, \"days\": 30, \"seed\": 3}\n");

  REQUIRE(run(bin() + " synth-gen --config " + dir + "/cfg.json --out-dir " + dir, dir)
              .code == 0);
  json man = load_json(dir + "/manifest.json");
  CHECK(man.at("config").at("units") == 8);
  CHECK(man.at("config").at("days") == 30);
  CHECK(man.at("config").at("seed") == 3);
  // the config file itself is recorded as an input, with its digest
  REQUIRE(man.at("inputs").contains(dir + "/cfg.json"));
  CHECK(man.at("inputs").at(dir + "/cfg.json") ==
        io::file_digest(dir + "/cfg.json"));

  std::string dir2 = temp_dir("cli_config_win");
  REQUIRE(run(bin() + " synth-gen --config " + dir + "/cfg.json --units 12 --out-dir " +
                  dir2,
              dir2)
              .code == 0);
  CHECK(load_json(dir2 + "/manifest.json").at("config").at("units") == 12);
  Panel p = ingest_csv(dir2 + "/panel.csv", CsvSchema::Wide, "cumulative-cases");
  CHECK(p.unit_count() == 12);

  auto bad = run(bin() + " synth-gen --config " + dir + "/nope.json --out-dir " + dir,
                 dir);
  CHECK(bad.code == 1);
  CHECK(bad.err.find("error kind=ParseError") != std::string::npos);

  write_file(dir + "/bad_type.json", "{\"units\": \"many\"}\n");
  CHECK(run(bin() + " synth-gen --config " + dir + "/bad_type.json --out-dir " + dir,
            dir)
            .code == 2);
}

TEST_CASE("align writes the known offsets for the mortality fixture", "[cli]") {
  std::string dir = temp_dir("cli_align");
  auto r = run(bin() + " align --input " + fixture("eu_deaths.csv") + " --meta " +
                   fixture("eu_meta.csv") +
                   " --rule threshold --threshold 100 --out-dir " + dir,
               dir);
  REQUIRE(r.code == 0);

  auto rows = parse_csv(dir + "/offsets.csv");
  REQUIRE(rows.size() == 11);  // header + 10 units
  CHECK(rows[0] == std::vector<std::string>{"unit", "t0_date", "rel_days_available"});
  std::map<std::string, std::string> t0;
  for (size_t i = 1; i < rows.size(); ++i) t0[rows[i][0]] = rows[i][1];
  CHECK(t0.at("Italy") == "2020-02-22");
  CHECK(t0.at("Spain") == "2020-02-27");
  CHECK(t0.at("Germany") == "2020-03-06");
  CHECK(t0.at("Switzerland") == "2020-03-18");
  CHECK(t0.at("Portugal") == "2020-03-22");
  CHECK(t0.at("Sweden") == "2020-03-06");

  auto split = parse_csv(dir + "/split.csv");
  REQUIRE(split.size() >= 2);
  CHECK(split[0] == std::vector<std::string>{"unit", "role"});
  for (size_t i = 1; i < split.size(); ++i)
    CHECK((split[i][1] == "donor" || split[i][1] == "target"));

  // offsets round-trip through the library reader
  auto dates = io::read_offsets_csv(dir + "/offsets.csv");
  CHECK(dates.size() == 10);
  CHECK(dates.at("Italy") == Date::parse("2020-02-22"));
}

TEST_CASE("fit and predict recover an exact low-rank target", "[cli]") {
  std::string dir = temp_dir("cli_fit_predict");

  // four donors spanning an exact rank-2 space; the target is an exact
  // donor combination, so a rank-2 fit must reproduce it everywhere
  std::ostringstream csv_text;
  csv_text << "unit";
  Date d0 = Date::parse("2020-01-01");
  for (int t = 0; t < 12; ++t) csv_text << "," << (d0 + t).iso();
  csv_text << "\n";
  auto write_unit = [&](const std::string& name, double b, double m) {
    csv_text << name;
    for (int t = 0; t < 12; ++t) csv_text << "," << csv::format_double(b + m * t);
    csv_text << "\n";
  };
  write_unit("d1", 10.0, 2.0);
  write_unit("d2", 5.0, 3.0);
  write_unit("d3", 1.0, 1.0);
  write_unit("d4", 7.0, 0.5);
  write_unit("tgt", 7.5, 2.5);  // (d1 + d2) / 2
  write_file(dir + "/panel.csv", csv_text.str());

  auto fit = run(bin() + " fit --input " + dir + "/panel.csv --target tgt" +
                     " --donors d1,d2,d3,d4 --t0-date 2020-01-07 --rank 2 --out-dir " +
                     dir,
                 dir);
  REQUIRE(fit.code == 0);
  io::StoredModel stored = io::read_model_json(dir + "/model.json");
  CHECK(stored.target_id == "tgt");
  CHECK(stored.t0 == 6);
  CHECK(stored.kept_rank == 2);
  REQUIRE(stored.donor_ids ==
          std::vector<std::string>{"d1", "d2", "d3", "d4"});

  auto predict = run(bin() + " predict --input " + dir + "/panel.csv --model " + dir +
                         "/model.json --out-dir " + dir,
                     dir);
  REQUIRE(predict.code == 0);
  Trajectory traj = io::read_trajectory_csv(dir + "/trajectory.csv");
  CHECK(traj.target_id.empty());  // trajectory files don't carry the id
  REQUIRE(traj.actual.size() == 12);
  CHECK(traj.start_rel == -6);
  for (size_t i = 0; i < traj.actual.size(); ++i) {
    CHECK_THAT(traj.counterfactual[i],
               Catch::Matchers::WithinAbs(traj.actual[i], 1e-8));
    CHECK_THAT(traj.gap[i], Catch::Matchers::WithinAbs(0.0, 1e-8));
  }

  // the gap summary over the post window reports ~0% reduction
  auto gap = run(bin() + " gap --trajectory " + dir + "/trajectory.csv" +
                     " --window 0:5 --out-dir " + dir,
                 dir);
  REQUIRE(gap.code == 0);
  auto rows = parse_csv(dir + "/gap.csv");
  REQUIRE(rows.size() == 2);
  auto pct = csv::parse_value(rows[1][2], 0);
  REQUIRE(pct.has_value());
  CHECK_THAT(*pct, Catch::Matchers::WithinAbs(0.0, 1e-8));
}

TEST_CASE("ingest golden pipeline: smooth then per-million", "[cli]") {
  std::string dir = temp_dir("cli_ingest");
  auto r = run(bin() + " ingest --input " + fixture("eu_deaths.csv") + " --meta " +
                   fixture("eu_meta.csv") +
                   " --metric cumulative-deaths --smooth 7 --per-million --out-dir " +
                   dir,
               dir);
  REQUIRE(r.code == 0);

  std::string text = slurp(dir + "/panel.csv");
  CHECK(text.rfind("# synthctl 0.1.0 ingest\n", 0) == 0);

  Panel out = ingest_csv(dir + "/panel.csv", CsvSchema::Wide, "x");
  REQUIRE(out.unit_count() == 10);
  REQUIRE(out.day_count() == 120);

  // the same pipeline composed from the library must give the same cells
  Panel expect = ingest_csv(fixture("eu_deaths.csv"), CsvSchema::Wide,
                            "cumulative-deaths");
  expect.attach_meta(load_meta(fixture("eu_meta.csv")));
  expect = per_million(moving_average(expect, 7));
  for (int u = 0; u < expect.unit_count(); ++u) {
    auto row = out.unit_index(expect.units()[u]);
    REQUIRE(row.has_value());
    for (int d = 0; d < expect.day_count(); ++d)
      CHECK_THAT(out.values()(*row, d),
                 Catch::Matchers::WithinRel(expect.values()(u, d), 1e-12));
  }
}

TEST_CASE("ingest to-daily golden value survives the round trip", "[cli]") {
  std::string dir = temp_dir("cli_ingest_daily");
  auto r = run(bin() + " ingest --input " + fixture("eu_deaths.csv") +
                   " --metric cumulative-deaths --to-daily --out-dir " + dir,
               dir);
  REQUIRE(r.code == 0);
  Panel daily = ingest_csv(dir + "/panel.csv", CsvSchema::Wide, "daily-deaths");
  Panel raw = ingest_csv(fixture("eu_deaths.csv"), CsvSchema::Wide, "cumulative-deaths");
  auto italy = raw.unit_index("Italy");
  REQUIRE(italy.has_value());
  // daily values must sum back to the final cumulative level
  double total = 0;
  for (int d = 0; d < daily.day_count(); ++d) total += daily.values()(*italy, d);
  CHECK_THAT(total, Catch::Matchers::WithinRel(raw.values()(*italy, 119), 1e-9));
}

TEST_CASE("cluster reruns are byte-identical", "[cli]") {
  std::string gen_dir = temp_dir("cli_cluster_gen");
  REQUIRE(run(bin() + " synth-gen --units 12 --days 60 --seed 5 --out-dir " + gen_dir,
              gen_dir)
              .code == 0);

  std::string a = temp_dir("cli_cluster_a"), b = temp_dir("cli_cluster_b");
  std::string flags = " cluster --input " + gen_dir +
                      "/panel.csv --k 2 --seed 3 --restarts 4 --out-dir ";
  REQUIRE(run(bin() + flags + a, a).code == 0);
  REQUIRE(run(bin() + flags + b, b).code == 0);
  CHECK(slurp(a + "/assignment.csv") == slurp(b + "/assignment.csv"));
  CHECK(slurp(a + "/cluster_means.csv") == slurp(b + "/cluster_means.csv"));

  auto rows = parse_csv(a + "/assignment.csv");
  REQUIRE(rows.size() == 13);  // header + 12 units
  CHECK(rows[0] == std::vector<std::string>{"unit", "cluster"});
  for (size_t i = 1; i < rows.size(); ++i) {
    long cl = csv::parse_int(rows[i][1], 0);
    CHECK((cl == 0 || cl == 1));
  }
  CHECK(slurp(a + "/assignment.csv").rfind("# synthctl 0.1.0 cluster\n", 0) == 0);
}

TEST_CASE("si-compare smoke test with parallel jobs", "[cli]") {
  std::string gen_dir = temp_dir("cli_si_gen");
  REQUIRE(run(bin() + " synth-gen --units 20 --days 120 --seed 11 --out-dir " + gen_dir,
              gen_dir)
              .code == 0);

  std::string a = temp_dir("cli_si_a"), b = temp_dir("cli_si_b");
  std::string flags = " si-compare --input " + gen_dir + "/panel.csv --meta " + gen_dir +
                      "/meta.csv --donor-region strict --reference-date 2020-04-25" +
                      " --tolerance 0.9 --rank 2 --bins 0,1000000";
  REQUIRE(run(bin() + flags + " --jobs 1 --out-dir " + a, a).code == 0);
  REQUIRE(run(bin() + flags + " --jobs 4 --out-dir " + b, b).code == 0);
  // the thread count must not change the numbers
  CHECK(slurp(a + "/si_compare.csv") == slurp(b + "/si_compare.csv"));
  CHECK(slurp(a + "/per_target.csv") == slurp(b + "/per_target.csv"));

  auto bins = parse_csv(a + "/si_compare.csv");
  REQUIRE(bins.size() == 2);  // header + one wide bin
  CHECK(bins[0][0] == "bin_low");
  auto per_target = parse_csv(a + "/per_target.csv");
  CHECK(per_target.size() > 1);

  // unknown region is a data error
  auto bad = run(bin() + flags + " --out-dir " + a, a);  // reuse dir, fine
  REQUIRE(bad.code == 0);
  auto none = run(bin() + " si-compare --input " + gen_dir + "/panel.csv --meta " +
                      gen_dir + "/meta.csv --donor-region mars" +
                      " --reference-date 2020-04-25 --out-dir " + a,
                  a);
  CHECK(none.code == 1);
  CHECK(none.err.find("error kind=EmptyDonorError") != std::string::npos);
}

TEST_CASE("counterfactual and impact run end to end on generated data", "[cli]") {
  std::string gen_dir = temp_dir("cli_cf_gen");
  REQUIRE(run(bin() + " synth-gen --units 12 --days 150 --seed 7 --out-dir " + gen_dir,
              gen_dir)
              .code == 0);

  // cumulative cases -> daily cases
  std::string daily_dir = temp_dir("cli_cf_daily");
  REQUIRE(run(bin() + " ingest --input " + gen_dir +
                  "/panel.csv --metric cumulative-cases --to-daily --out-dir " +
                  daily_dir,
              daily_dir)
              .code == 0);

  std::string cf_dir = temp_dir("cli_cf_out");
  auto cf = run(bin() + " counterfactual --input " + daily_dir +
                    "/panel.csv --metric daily-cases --meta " + gen_dir +
                    "/meta.csv --target strict-01 --shift -5 --rank 2 --out-dir " +
                    cf_dir,
                cf_dir);
  REQUIRE(cf.code == 0);
  Trajectory traj = io::read_trajectory_csv(cf_dir + "/trajectory.csv");
  CHECK(traj.actual.size() > 0);
  auto summary = parse_csv(cf_dir + "/summary.csv");
  REQUIRE(summary.size() == 2);
  CHECK(summary[0][0] == "shift_days");
  CHECK(summary[1][0] == "-5");
  json man = load_json(cf_dir + "/manifest.json");
  CHECK(man.at("subcommand") == "counterfactual");
  CHECK(man.at("config").at("shift") == -5);

  std::string imp_dir = temp_dir("cli_impact_out");
  auto imp = run(bin() + " impact --input " + daily_dir +
                     "/panel.csv --metric daily-cases --meta " + gen_dir +
                     "/meta.csv --smooth 7 --out-dir " + imp_dir,
                 imp_dir);
  REQUIRE(imp.code == 0);
  auto peaks = parse_csv(imp_dir + "/impact.csv");
  REQUIRE(peaks.size() == 13);  // header + 12 units
  CHECK(peaks[0] ==
        std::vector<std::string>{"unit", "peak_value", "days_to_peak",
                                 "value_at_intervention"});

  // missing --meta is a usage error for both subcommands
  CHECK(run(bin() + " impact --input " + daily_dir + "/panel.csv --out-dir " + imp_dir,
            imp_dir)
            .code == 2);
  CHECK(run(bin() + " counterfactual --input " + daily_dir +
                "/panel.csv --target strict-01 --shift -5 --out-dir " + cf_dir,
            cf_dir)
            .code == 2);
}
