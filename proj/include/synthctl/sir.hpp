#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "synthctl/calendar.hpp"
#include "synthctl/errors.hpp"
#include "synthctl/panel.hpp"

namespace synthctl {

/// Susceptible-infected-recovered generator with a transmission-rate switch
/// on the intervention day. Serves as the ground-truth data source for
/// estimator validation.
struct SirConfig {
  std::int64_t population = 1'000'000;
  double beta0 = 0.125;          // transmission rate per day before t0
  double beta_lockdown = 0.04;   // transmission rate per day from t0 on
  double gamma = 0.05;           // recovery rate per day
  double ifr = 0.01;             // infection fatality ratio
  int seed_infected = 100;
  int t0 = 45;                   // intervention day
  double noise_sigma = 0.08;     // multiplicative log-normal observation noise
  int report_lag = 21;           // days from infection to reported death

  void validate() const {
    if (population < 1) throw InvalidParameter("population must be >= 1");
    if (gamma <= 0.0) throw InvalidParameter("gamma must be > 0");
    if (beta_lockdown < 0.0 || beta_lockdown > beta0)
      throw InvalidParameter("need 0 <= beta_lockdown <= beta0");
    if (ifr <= 0.0 || ifr >= 1.0) throw InvalidParameter("ifr must be in (0, 1)");
    if (seed_infected < 0 || seed_infected > population)
      throw InvalidParameter("seed infected must be in [0, population]");
    if (t0 < 0) throw InvalidParameter("intervention day must be >= 0");
    if (noise_sigma < 0.0) throw InvalidParameter("noise sigma must be >= 0");
    if (report_lag < 0) throw InvalidParameter("report lag must be >= 0");
    if (beta0 > 5.0) throw StabilityError("beta0 too large for day-sized steps");
    if (gamma > 1.0) throw StabilityError("gamma too large for day-sized steps");
  }
};

struct SirRun {
  std::vector<double> cases;        // observed daily new cases (noisy)
  std::vector<double> deaths;       // observed daily deaths (noisy)
  std::vector<double> true_cases;   // noise-free daily new infections
  std::vector<double> s, i, r;      // compartments after each day's step
};

/// Day-stepped Euler integration; the removed compartment is the population
/// remainder so conservation is exact. Observed series carry independent
/// log-normal noise; deaths are the fatality share of true cases, delayed by
/// the report lag.
inline SirRun simulate(const SirConfig& cfg, int days, std::uint64_t seed) {
  cfg.validate();
  if (days < 1) throw InvalidParameter("days must be >= 1");
  const double N = double(cfg.population);
  double S = N - cfg.seed_infected, I = double(cfg.seed_infected);
  SirRun run;
  run.true_cases.resize(days);
  run.s.resize(days);
  run.i.resize(days);
  run.r.resize(days);
  for (int t = 0; t < days; ++t) {
    double beta = t < cfg.t0 ? cfg.beta0 : cfg.beta_lockdown;
    double fresh = std::min(beta * S * I / N, S);
    S -= fresh;
    I += fresh - cfg.gamma * I;
    run.true_cases[t] = fresh;
    run.s[t] = S;
    run.i[t] = I;
    run.r[t] = N - S - I;
  }
  run.cases = run.true_cases;
  run.deaths.assign(days, 0.0);
  for (int t = cfg.report_lag; t < days; ++t)
    run.deaths[t] = cfg.ifr * run.true_cases[t - cfg.report_lag];
  if (cfg.noise_sigma > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    for (double& v : run.cases) v *= std::exp(cfg.noise_sigma * z(rng));
    for (double& v : run.deaths) v *= std::exp(cfg.noise_sigma * z(rng));
  }
  return run;
}

struct Regime {
  std::string label;
  SirConfig cfg;
  int count = 0;
};

struct GeneratedPanel {
  Panel panel;                       // cumulative observed cases, one row per unit
  std::vector<std::string> labels;   // generating regime per unit, row order
};

/// Builds a cumulative-cases panel of simulated units. Per-unit transmission
/// and recovery rates are jittered multiplicatively within +-jitter of the
/// regime template; each unit then runs with its own derived noise seed.
/// Units are named <label>-NN and carry population, region and intervention
/// date metadata.
inline GeneratedPanel generate_panel(const std::vector<Regime>& regimes, double jitter,
                                     int days, std::uint64_t seed,
                                     Date start = Date::parse("2020-03-01")) {
  if (regimes.empty()) throw InvalidParameter("need at least one regime");
  if (jitter < 0.0 || jitter >= 1.0) throw InvalidParameter("jitter must be in [0, 1)");
  int total = 0;
  for (const auto& reg : regimes) {
    if (reg.count < 1) throw InvalidParameter("regime count must be >= 1");
    reg.cfg.validate();
    total += reg.count;
  }
  if (total < 2) throw InvalidParameter("need at least 2 units");

  std::mt19937_64 master(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<std::uint64_t> sub_seed;

  std::vector<std::string> units, labels;
  std::map<std::string, UnitMeta> meta;
  Eigen::MatrixXd vals(total, days);
  int row = 0;
  for (const auto& reg : regimes) {
    for (int j = 0; j < reg.count; ++j, ++row) {
      SirConfig c = reg.cfg;
      c.gamma *= 1.0 + jitter * u(master);
      c.beta0 *= 1.0 + jitter * u(master);
      c.beta_lockdown *= 1.0 + jitter * u(master);
      c.beta_lockdown = std::min(c.beta_lockdown, c.beta0);
      SirRun r = simulate(c, days, sub_seed(master));
      double acc = 0.0;
      for (int d = 0; d < days; ++d) {
        acc += r.cases[d];
        vals(row, d) = acc;
      }
      char name[64];
      std::snprintf(name, sizeof name, "%s-%02d", reg.label.c_str(), j + 1);
      units.push_back(name);
      labels.push_back(reg.label);
      UnitMeta m;
      m.population = reg.cfg.population;
      m.region = reg.label;
      m.intervention_dates.push_back(start + reg.cfg.t0);
      meta[name] = std::move(m);
    }
  }
  Panel p(std::move(units), start, std::move(vals), "cumulative-cases");
  p.attach_meta(std::move(meta));
  return {std::move(p), std::move(labels)};
}

}  // namespace synthctl
