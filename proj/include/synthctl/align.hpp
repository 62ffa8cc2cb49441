#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "synthctl/errors.hpp"
#include "synthctl/panel.hpp"

namespace synthctl {

/// Panel re-indexed to per-unit relative time: each included unit has a t=0
/// anchor (its alignment event) and rows share one relative-day axis covering
/// [min_rel, max_rel]. Cells outside a unit's own calendar are missing.
class AlignedPanel {
public:
  AlignedPanel(const Panel& base, std::map<std::string, int> offsets,
               std::vector<Exclusion> excluded)
      : base_(base), offsets_(std::move(offsets)), excluded_(std::move(excluded)) {
    if (offsets_.empty()) throw EmptyAlignmentError("no unit has an alignment event");
    for (const auto& u : base_.units())
      if (offsets_.count(u)) units_.push_back(u);
    min_rel_ = 0;
    max_rel_ = 0;
    for (const auto& u : units_) {
      int o = offsets_.at(u);
      min_rel_ = std::min(min_rel_, -o);
      max_rel_ = std::max(max_rel_, base_.day_count() - 1 - o);
    }
    rel_ = Eigen::MatrixXd::Constant(Eigen::Index(units_.size()),
                                     max_rel_ - min_rel_ + 1, kMissing);
    for (size_t i = 0; i < units_.size(); ++i) {
      int o = offsets_.at(units_[i]);
      for (int r = min_rel_; r <= max_rel_; ++r) {
        int d = o + r;
        if (d >= 0 && d < base_.day_count())
          rel_(Eigen::Index(i), r - min_rel_) = base_.values()(*base_.unit_index(units_[i]), d);
      }
    }
  }

  const Panel& base() const { return base_; }
  const std::vector<std::string>& units() const { return units_; }
  int unit_count() const { return int(units_.size()); }
  const std::map<std::string, int>& offsets() const { return offsets_; }
  int offset(const std::string& u) const { return offsets_.at(u); }
  Date t0_date(const std::string& u) const { return base_.start_date() + offset(u); }
  int min_rel() const { return min_rel_; }
  int max_rel() const { return max_rel_; }
  const Eigen::MatrixXd& rel_values() const { return rel_; }
  const std::vector<Exclusion>& excluded() const { return excluded_; }

  std::optional<int> unit_index(const std::string& u) const {
    for (size_t i = 0; i < units_.size(); ++i)
      if (units_[i] == u) return int(i);
    return std::nullopt;
  }

  double rel_at(int u, int r) const { return rel_(u, r - min_rel_); }

  /// Row over [lo, hi] relative days (missing cells stay NaN).
  Eigen::VectorXd rel_series(int u, int lo, int hi) const {
    Eigen::VectorXd v = Eigen::VectorXd::Constant(hi - lo + 1, kMissing);
    for (int r = lo; r <= hi; ++r)
      if (r >= min_rel_ && r <= max_rel_) v(r - lo) = rel_at(u, r);
    return v;
  }

  /// Days of data a unit has from its t=0 onward (present cells at rel >= 0).
  int rel_days_available(int u) const {
    int n = 0;
    for (int r = 0; r <= max_rel_; ++r)
      if (!is_missing(rel_at(u, r))) ++n;
    return n;
  }

private:
  Panel base_;
  std::map<std::string, int> offsets_;
  std::vector<std::string> units_;
  std::vector<Exclusion> excluded_;
  int min_rel_ = 0, max_rel_ = 0;
  Eigen::MatrixXd rel_;
};

/// t=0 is the first day the (optionally per-million) value reaches the
/// threshold; a value landing exactly on it counts. Units never reaching it
/// are excluded and listed.
inline AlignedPanel align_by_threshold(const Panel& p, double threshold,
                                       bool per_capita = false) {
  if (threshold <= 0.0) throw InvalidParameter("threshold must be > 0");
  std::map<std::string, int> offsets;
  std::vector<Exclusion> excluded;
  for (int u = 0; u < p.unit_count(); ++u) {
    double scale = 1.0;
    if (per_capita) {
      const UnitMeta* m = p.meta_for(p.units()[u]);
      if (!m || !m->has_population())
        throw MetadataError("missing population for unit '" + p.units()[u] + "'");
      scale = 1e6 / double(m->population);
    }
    bool found = false;
    for (int d = 0; d < p.day_count(); ++d) {
      double v = p.values()(u, d);
      if (!is_missing(v) && v * scale >= threshold) {
        offsets[p.units()[u]] = d;
        found = true;
        break;
      }
    }
    if (!found) excluded.push_back({p.units()[u], "never reaches threshold"});
  }
  if (offsets.empty()) throw EmptyAlignmentError("no unit reaches the threshold");
  return AlignedPanel(p, std::move(offsets), std::move(excluded));
}

/// Aligns each unit on an explicitly supplied calendar date; units absent
/// from the map are excluded. A date outside the panel calendar is an error.
inline AlignedPanel align_by_dates(const Panel& p, const std::map<std::string, Date>& dates,
                                   const std::string& missing_reason) {
  std::map<std::string, int> offsets;
  std::vector<Exclusion> excluded;
  for (const auto& u : p.units()) {
    auto it = dates.find(u);
    if (it == dates.end()) {
      excluded.push_back({u, missing_reason});
      continue;
    }
    auto day = p.day_of(it->second);
    if (!day)
      throw RangeError("alignment date " + it->second.iso() + " for unit '" + u +
                       "' is outside the panel calendar");
    offsets[u] = *day;
  }
  if (offsets.empty()) throw EmptyAlignmentError(missing_reason + " for every unit");
  return AlignedPanel(p, std::move(offsets), std::move(excluded));
}

/// t=0 is the unit's intervention date; with several announced measure dates
/// the latest ("strictest") wins. Units without a date are excluded.
inline AlignedPanel align_by_intervention(const Panel& p) {
  std::map<std::string, Date> dates;
  for (const auto& u : p.units()) {
    const UnitMeta* m = p.meta_for(u);
    if (!m) continue;
    if (auto d = m->strictest_intervention()) dates[u] = *d;
  }
  return align_by_dates(p, dates, "no intervention date");
}

/// Finds, per unit, the first day the series sits at or below -drop_pct and
/// stays there for sustain_days consecutive days; the series is scanned as
/// given (smooth beforehand if desired). Units never qualifying are omitted.
inline std::map<std::string, Date> infer_lockdown_from_mobility(const Panel& mobility,
                                                                double drop_pct,
                                                                int sustain_days) {
  if (sustain_days < 1) throw InvalidParameter("sustain days must be >= 1");
  if (sustain_days > mobility.day_count())
    throw InvalidParameter("sustain days exceed the series length");
  std::map<std::string, Date> out;
  for (int u = 0; u < mobility.unit_count(); ++u) {
    int run = 0;
    for (int d = 0; d < mobility.day_count(); ++d) {
      double v = mobility.values()(u, d);
      run = (!is_missing(v) && v <= -drop_pct) ? run + 1 : 0;
      if (run >= sustain_days) {
        out[mobility.units()[u]] = mobility.date(d - sustain_days + 1);
        break;
      }
    }
  }
  return out;
}

struct TrainTestSplit {
  std::vector<std::string> donors;
  std::vector<std::string> targets;
  int split_index = 0;
};

/// Units with at least test_up_to days of aligned data act as donors; units
/// with at least train_days but fewer than test_up_to become targets; the
/// rest are dropped.
inline TrainTestSplit train_test_split(const AlignedPanel& a, int train_days,
                                       int test_up_to) {
  if (train_days < 1 || test_up_to < 1)
    throw InvalidParameter("split day counts must be >= 1");
  if (train_days >= test_up_to)
    throw InvalidParameter("train days must be < test-up-to days");
  TrainTestSplit s;
  s.split_index = train_days;
  for (int u = 0; u < a.unit_count(); ++u) {
    int avail = a.rel_days_available(u);
    if (avail >= test_up_to)
      s.donors.push_back(a.units()[u]);
    else if (avail >= train_days)
      s.targets.push_back(a.units()[u]);
  }
  if (s.donors.empty()) throw EmptyDonorError("no unit qualifies as a donor");
  return s;
}

}  // namespace synthctl
