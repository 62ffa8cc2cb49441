#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "synthctl/calendar.hpp"
#include "synthctl/errors.hpp"
#include "synthctl/panel.hpp"
#include "synthctl/rsc.hpp"

namespace synthctl {

/// Donor gate: only units at a similar epidemic stage as the target on the
/// reference date — cumulative cases per million within the tolerance
/// fraction — may act as donors.
struct StageFilter {
  Date reference_date;
  double tolerance = 0.5;

  void validate() const {
    if (tolerance <= 0.0 || tolerance >= 1.0)
      throw InvalidParameter("stage tolerance must be in (0, 1)");
  }
};

struct BinSpec {
  std::vector<double> edges;  // cases per million, strictly increasing

  void validate() const {
    if (edges.size() < 2) throw InvalidParameter("need at least 2 bin edges");
    for (size_t i = 1; i < edges.size(); ++i)
      if (edges[i] <= edges[i - 1])
        throw InvalidParameter("bin edges must be strictly increasing");
  }
  int bin_count() const { return int(edges.size()) - 1; }

  /// Half-open bins [e_i, e_{i+1}), except the last which is closed. -1 =
  /// outside the covered range.
  int bin_of(double v) const {
    if (v < edges.front() || v > edges.back()) return -1;
    for (size_t i = 1; i + 1 < edges.size(); ++i)
      if (v < edges[i]) return int(i) - 1;
    return bin_count() - 1;
  }
};

/// Cumulative cases per million for one unit on a given day; uses the values
/// as-is when the panel is already per-million, otherwise scales by the
/// unit's population.
inline double cases_per_million_on(const Panel& p, const std::string& unit, int day) {
  if (!p.metric_cumulative())
    throw MetricError("stage matching needs a cumulative metric, got '" + p.metric() + "'");
  auto idx = p.unit_index(unit);
  if (!idx) throw InvalidParameter("unit '" + unit + "' not found in the panel");
  double v = p.values()(*idx, day);
  if (is_missing(v))
    throw MetricError("unit '" + unit + "' has no value on the reference date");
  if (p.metric_per_million()) return v;
  const UnitMeta* m = p.meta_for(unit);
  if (!m || !m->has_population())
    throw MetadataError("missing population for unit '" + unit + "'");
  return v * 1e6 / double(m->population);
}

/// Keeps the donors whose stage is within the tolerance band of the target's
/// (boundary inclusive); the target never donates to itself. Input order is
/// preserved.
inline std::vector<std::string> filter_donors(const std::vector<std::string>& donors,
                                              const std::string& target,
                                              const Panel& p, const StageFilter& f) {
  f.validate();
  auto ref = p.day_of(f.reference_date);
  if (!ref) throw RangeError("reference date outside the panel calendar");
  double t_cpm = cases_per_million_on(p, target, *ref);
  std::vector<std::string> kept;
  double best_miss = std::numeric_limits<double>::infinity();
  std::string best_unit;
  for (const auto& d : donors) {
    if (d == target) continue;
    double gap = std::abs(cases_per_million_on(p, d, *ref) - t_cpm);
    if (gap <= f.tolerance * t_cpm) {
      kept.push_back(d);
    } else if (gap < best_miss) {
      best_miss = gap;
      best_unit = d;
    }
  }
  if (kept.empty()) {
    std::string diag = best_unit.empty()
                           ? "no candidate donors"
                           : "nearest miss '" + best_unit + "' off by " +
                                 csv::format_double(best_miss) + " cases per million";
    throw EmptyDonorError("no donor within the stage band of '" + target + "' (" +
                          diag + ")");
  }
  return kept;
}

/// Default kept rank for the stage-matched counterfactual: 3 once the donor
/// pool is comfortably larger than that, otherwise a tenth of the pool.
inline int default_si_rank(int donor_count) {
  return donor_count >= 30 ? 3 : std::max(1, donor_count / 10);
}

namespace detail {

inline Trajectory si_project(const std::string& target,
                             std::vector<std::string> donors, const Panel& p,
                             int ref_day, int rank) {
  if (rank <= 0) rank = default_si_rank(int(donors.size()));
  Eigen::MatrixXd D(donors.size(), p.day_count());
  for (size_t i = 0; i < donors.size(); ++i)
    D.row(i) = p.values().row(*p.unit_index(donors[i]));
  Eigen::VectorXd y = p.values().row(*p.unit_index(target));
  RscModel m = fit_rsc(D, std::move(donors), y, ref_day, RankPolicy::fixed(rank));
  return project(m, y, 0, p.day_count() - 1, target);
}

}  // namespace detail

/// Counterfactual for one target under the donor region's regime: filter the
/// donors by stage, denoise at the given rank, regress the target on them up
/// to the reference date, and project forward. The returned trajectory's day
/// 0 is the reference date.
inline Trajectory synthetic_intervention(const std::string& target,
                                         const std::vector<std::string>& donor_region,
                                         const Panel& p, const StageFilter& f,
                                         int rank = 0) {
  auto ref = p.day_of(f.reference_date);
  if (!ref) throw RangeError("reference date outside the panel calendar");
  return detail::si_project(target, filter_donors(donor_region, target, p, f), p,
                            *ref, rank);
}

struct SiComparison {
  std::string target_id;
  bool in_region = false;
  double nmse = 0.0;
  int bin = -1;          // -1 = outside the bin range
  int donor_count = 0;
  double cpm = 0.0;      // stage on the reference date
};

struct BinRow {
  double bin_low = 0.0, bin_high = 0.0;
  double mean_nmse_in = kMissing, mean_nmse_out = kMissing;
  int count_in = 0, count_out = 0;
};

struct RegionComparison {
  std::vector<BinRow> bins;
  std::vector<SiComparison> per_target;              // sorted by target id
  std::vector<std::pair<std::string, double>> out_of_range;  // unit, stage
  std::vector<Exclusion> skipped;                    // no stage-matched donors
};

/// Prediction error inside the donor region vs counterfactual gap outside,
/// averaged per case-density bin. NMSE for a target = mean squared
/// counterfactual-vs-actual error over [reference date, post_end), divided by
/// the squared stage. Targets whose stage misses every bin are reported, as
/// are targets with no stage-matched donor. jobs > 1 spreads the per-target
/// fits over threads; aggregation order is by sorted target id either way.
inline RegionComparison compare_regions(std::vector<std::string> targets,
                                        const std::vector<std::string>& donor_region,
                                        const Panel& p, const StageFilter& f,
                                        const BinSpec& bins, int rank = 0,
                                        int post_end = 0, int jobs = 1) {
  f.validate();
  bins.validate();
  auto ref = p.day_of(f.reference_date);
  if (!ref) throw RangeError("reference date outside the panel calendar");
  if (post_end <= 0) post_end = p.day_count();
  if (post_end <= *ref || post_end > p.day_count())
    throw RangeError("post window must lie between the reference date and the horizon");
  if (jobs < 1) throw InvalidParameter("jobs must be >= 1");

  std::sort(targets.begin(), targets.end());
  enum class Kind { Ok, OutOfRange, Skipped };
  struct Slot {
    Kind kind = Kind::Ok;
    SiComparison cmp;
    std::string note;
  };
  std::vector<Slot> slots(targets.size());

  auto work = [&](size_t i) {
    const std::string& tgt = targets[i];
    Slot& slot = slots[i];
    double cpm = cases_per_million_on(p, tgt, *ref);
    SiComparison c;
    c.target_id = tgt;
    c.in_region =
        std::find(donor_region.begin(), donor_region.end(), tgt) != donor_region.end();
    c.cpm = cpm;
    c.bin = bins.bin_of(cpm);
    if (c.bin < 0) {
      slot.kind = Kind::OutOfRange;
      slot.cmp = std::move(c);
      return;
    }
    std::vector<std::string> donors;
    try {
      donors = filter_donors(donor_region, tgt, p, f);
    } catch (const EmptyDonorError& e) {
      slot.kind = Kind::Skipped;
      slot.cmp = std::move(c);
      slot.note = e.what();
      return;
    }
    c.donor_count = int(donors.size());
    Trajectory traj = detail::si_project(tgt, std::move(donors), p, *ref, rank);
    double se = 0.0;
    int n = 0;
    for (int r = 0; r < post_end - *ref; ++r) {
      int idx = *traj.index_of_rel(r);
      if (is_missing(traj.actual[idx])) continue;
      double d = traj.counterfactual[idx] - traj.actual[idx];
      se += d * d;
      ++n;
    }
    if (n == 0) {
      slot.kind = Kind::Skipped;
      slot.note = "no observed post-period days";
      slot.cmp = std::move(c);
      return;
    }
    c.nmse = se / n / (cpm * cpm);
    slot.cmp = std::move(c);
  };

  if (jobs == 1 || targets.size() < 2) {
    for (size_t i = 0; i < targets.size(); ++i) work(i);
  } else {
    std::atomic<size_t> next{0};
    std::exception_ptr first_error;
    std::mutex err_mu;
    auto worker = [&] {
      for (size_t i = next.fetch_add(1); i < targets.size(); i = next.fetch_add(1)) {
        try {
          work(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    int nthreads = std::min<int>(jobs, int(targets.size()));
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  RegionComparison out;
  std::vector<std::vector<double>> acc_in(bins.bin_count()), acc_out(bins.bin_count());
  for (auto& slot : slots) {
    switch (slot.kind) {
      case Kind::OutOfRange:
        out.out_of_range.emplace_back(slot.cmp.target_id, slot.cmp.cpm);
        break;
      case Kind::Skipped:
        out.skipped.push_back({slot.cmp.target_id, slot.note});
        break;
      case Kind::Ok:
        (slot.cmp.in_region ? acc_in : acc_out)[slot.cmp.bin].push_back(slot.cmp.nmse);
        out.per_target.push_back(std::move(slot.cmp));
        break;
    }
  }
  for (int b = 0; b < bins.bin_count(); ++b) {
    BinRow row;
    row.bin_low = bins.edges[b];
    row.bin_high = bins.edges[b + 1];
    row.count_in = int(acc_in[b].size());
    row.count_out = int(acc_out[b].size());
    auto mean = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      return s / double(v.size());
    };
    if (row.count_in > 0) row.mean_nmse_in = mean(acc_in[b]);
    if (row.count_out > 0) row.mean_nmse_out = mean(acc_out[b]);
    out.bins.push_back(row);
  }
  return out;
}

}  // namespace synthctl
