#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "synthctl/align.hpp"
#include "synthctl/errors.hpp"
#include "synthctl/panel.hpp"
#include "synthctl/rsc.hpp"

namespace synthctl {

struct PeakStats {
  std::string unit;
  double peak_value = 0.0;           // max smoothed value over the horizon
  int days_to_peak = 0;              // relative to t=0; negative = peak before
  double value_at_intervention = kMissing;  // smoothed level on day 0
  bool right_censored = false;       // peak sits on the unit's last observed day
};

struct PeakReport {
  std::vector<PeakStats> stats;
  std::vector<Exclusion> excluded;   // all-missing units
};

/// Per-unit peak of the aligned series, smoothed with a trailing moving
/// average (smooth_window <= 1 leaves the series raw). Ties take the earliest
/// day. A peak on the unit's last observed day may be censored by the data
/// edge and is flagged.
inline PeakReport peak_analysis(const AlignedPanel& a, int smooth_window = 7) {
  if (smooth_window < 1) throw InvalidParameter("smooth window must be >= 1");
  PeakReport rep;
  for (int u = 0; u < a.unit_count(); ++u) {
    std::vector<double> sm(a.max_rel() - a.min_rel() + 1, kMissing);
    for (int r = a.min_rel(); r <= a.max_rel(); ++r) {
      if (is_missing(a.rel_at(u, r))) continue;
      double sum = 0.0;
      int n = 0;
      for (int j = std::max(a.min_rel(), r - smooth_window + 1); j <= r; ++j) {
        double v = a.rel_at(u, j);
        if (is_missing(v)) continue;
        sum += v;
        ++n;
      }
      sm[r - a.min_rel()] = sum / n;
    }
    int peak_rel = 0, last_rel = 0;
    double peak = kMissing;
    bool any = false;
    for (int r = a.min_rel(); r <= a.max_rel(); ++r) {
      double v = sm[r - a.min_rel()];
      if (is_missing(v)) continue;
      last_rel = r;
      if (!any || v > peak) {
        any = true;
        peak = v;
        peak_rel = r;
      }
    }
    if (!any) {
      rep.excluded.push_back({a.units()[u], "no observed values"});
      continue;
    }
    PeakStats s;
    s.unit = a.units()[u];
    s.peak_value = peak;
    s.days_to_peak = peak_rel;
    s.value_at_intervention = sm[-a.min_rel()];  // day 0 is always inside the horizon
    s.right_censored = peak_rel == last_rel;
    rep.stats.push_back(s);
  }
  return rep;
}

struct GapSummary {
  double cumulative_actual = 0.0;
  double cumulative_counterfactual = 0.0;
  double percent_reduction = 0.0;  // (counterfactual - actual) / counterfactual * 100
};

/// Totals of both trajectory series over the relative-day window [lo, hi] and
/// the percent by which the actual world undercuts the counterfactual one.
inline GapSummary gap_summary(const Trajectory& t, int lo, int hi) {
  if (lo > hi) throw InvalidParameter("summary window is empty");
  if (!t.index_of_rel(lo) || !t.index_of_rel(hi))
    throw RangeError("summary window outside the trajectory horizon");
  GapSummary g;
  for (int r = lo; r <= hi; ++r) {
    int i = *t.index_of_rel(r);
    if (is_missing(t.actual[i]))
      throw InvalidParameter("actual series has gaps inside the summary window");
    g.cumulative_actual += t.actual[i];
    g.cumulative_counterfactual += t.counterfactual[i];
  }
  if (g.cumulative_counterfactual <= 0.0)
    throw UndefinedReductionError("counterfactual total is not positive");
  g.percent_reduction = (g.cumulative_counterfactual - g.cumulative_actual) /
                        g.cumulative_counterfactual * 100.0;
  return g;
}

}  // namespace synthctl
