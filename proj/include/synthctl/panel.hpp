#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "synthctl/calendar.hpp"
#include "synthctl/csv.hpp"
#include "synthctl/errors.hpp"

namespace synthctl {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline bool is_missing(double v) { return std::isnan(v); }

/// Per-unit metadata. A unit may list several announced measure dates; the
/// latest one is taken as the effective ("strictest") intervention date.
struct UnitMeta {
  std::int64_t population = 0;  // persons; 0 = unknown
  std::string region;           // empty = untagged
  std::vector<Date> intervention_dates;

  bool has_population() const { return population >= 1; }
  std::optional<Date> strictest_intervention() const {
    if (intervention_dates.empty()) return std::nullopt;
    return *std::max_element(intervention_dates.begin(), intervention_dates.end());
  }
};

struct MissingMask {
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> observed;
  double observed_fraction = 0.0;
};

struct CellFlag {
  std::string unit;
  Date date;
  double value = 0.0;
};

/// A unit dropped from some computation, with the reason kept for reporting.
struct Exclusion {
  std::string unit;
  std::string reason;
};

/// Unit x day observation matrix on one contiguous daily calendar.
/// NaN cells are missing observations. Immutable after construction apart
/// from metadata attachment during loading.
class Panel {
public:
  Panel(std::vector<std::string> units, Date start, Eigen::MatrixXd values,
        std::string metric)
      : units_(std::move(units)),
        start_(start),
        values_(std::move(values)),
        metric_(std::move(metric)) {
    if (values_.rows() != Eigen::Index(units_.size()))
      throw InvalidParameter("panel row count does not match unit count");
    if (values_.cols() < 1) throw InvalidParameter("panel needs at least one day");
    for (size_t i = 0; i < units_.size(); ++i)
      unit_index_[units_[i]] = int(i);
    if (unit_index_.size() != units_.size())
      throw DuplicateError("duplicate unit id in panel");
  }

  const std::vector<std::string>& units() const { return units_; }
  int unit_count() const { return int(units_.size()); }
  int day_count() const { return int(values_.cols()); }
  Date start_date() const { return start_; }
  Date date(int day) const { return start_ + day; }
  const std::string& metric() const { return metric_; }
  const Eigen::MatrixXd& values() const { return values_; }

  std::optional<int> day_of(Date d) const {
    int i = d - start_;
    if (i < 0 || i >= day_count()) return std::nullopt;
    return i;
  }

  std::optional<int> unit_index(const std::string& u) const {
    auto it = unit_index_.find(u);
    if (it == unit_index_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<double> cell(int u, int d) const {
    double v = values_(u, d);
    if (is_missing(v)) return std::nullopt;
    return v;
  }

  bool metric_cumulative() const { return metric_.rfind("cumulative", 0) == 0; }
  bool metric_per_million() const {
    static const std::string suf = "-per-million";
    return metric_.size() >= suf.size() &&
           metric_.compare(metric_.size() - suf.size(), suf.size(), suf) == 0;
  }

  void attach_meta(std::map<std::string, UnitMeta> meta) { meta_ = std::move(meta); }
  const std::map<std::string, UnitMeta>& meta() const { return meta_; }
  const UnitMeta* meta_for(const std::string& unit) const {
    auto it = meta_.find(unit);
    return it == meta_.end() ? nullptr : &it->second;
  }

  MissingMask mask() const {
    MissingMask m;
    m.observed = values_.unaryExpr([](double v) { return !is_missing(v); })
                     .cast<bool>();
    m.observed_fraction =
        double(m.observed.cast<int>().sum()) / double(values_.size());
    return m;
  }

  /// Cumulative-metric sanity: present values must be non-negative and
  /// non-decreasing along each row. Violations are reported, never repaired.
  std::vector<CellFlag> cumulative_violations() const {
    std::vector<CellFlag> out;
    for (int u = 0; u < unit_count(); ++u) {
      double prev = -std::numeric_limits<double>::infinity();
      bool have_prev = false;
      for (int d = 0; d < day_count(); ++d) {
        double v = values_(u, d);
        if (is_missing(v)) continue;
        if (v < 0.0 || (have_prev && v < prev))
          out.push_back({units_[u], date(d), v});
        prev = v;
        have_prev = true;
      }
    }
    return out;
  }

private:
  std::vector<std::string> units_;
  Date start_;
  Eigen::MatrixXd values_;
  std::string metric_;
  std::map<std::string, int> unit_index_;
  std::map<std::string, UnitMeta> meta_;
};

enum class CsvSchema { Wide, Long };

namespace detail {

inline Panel ingest_wide(const std::vector<csv::Row>& rows, const std::string& metric) {
  const auto& header = rows.front();
  if (header.fields.size() < 2)
    throw ParseError("wide header needs a unit column and at least one date");
  std::vector<Date> dates;
  for (size_t c = 1; c < header.fields.size(); ++c) {
    Date d = Date::parse(header.fields[c]);
    if (!dates.empty()) {
      if (d == dates.back())
        throw DuplicateError("duplicate date column " + d.iso());
      if (d < dates.back())
        throw ParseError("header dates not increasing at " + d.iso());
    }
    dates.push_back(d);
  }
  Date start = dates.front();
  int ndays = dates.back() - start + 1;

  std::vector<std::string> units;
  std::map<std::string, int> seen;
  Eigen::MatrixXd vals =
      Eigen::MatrixXd::Constant(Eigen::Index(rows.size() - 1), ndays, kMissing);
  for (size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.fields.size() != header.fields.size())
      throw ParseError("row width mismatch at line " + std::to_string(row.line));
    const std::string& unit = row.fields[0];
    if (unit.empty())
      throw ParseError("empty unit id at line " + std::to_string(row.line));
    if (!seen.emplace(unit, int(r)).second)
      throw DuplicateError("duplicate unit row '" + unit + "' at line " +
                           std::to_string(row.line));
    units.push_back(unit);
    for (size_t c = 1; c < row.fields.size(); ++c) {
      auto v = csv::parse_value(row.fields[c], row.line);
      if (v) vals(Eigen::Index(r - 1), dates[c - 1] - start) = *v;
    }
  }
  return Panel(std::move(units), start, std::move(vals), metric);
}

inline Panel ingest_long(const std::vector<csv::Row>& rows, const std::string& metric) {
  const auto& header = rows.front();
  if (header.fields.size() < 3)
    throw ParseError("long header needs columns (unit,date,value)");
  struct Obs {
    int unit;
    Date date;
    double value;
    bool present;
    int line;
  };
  std::vector<Obs> obs;
  std::vector<std::string> units;
  std::map<std::string, int> uidx;  // first-appearance order
  std::optional<Date> lo, hi;
  for (size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.fields.size() < 3)
      throw ParseError("row width mismatch at line " + std::to_string(row.line));
    const std::string& unit = row.fields[0];
    if (unit.empty())
      throw ParseError("empty unit id at line " + std::to_string(row.line));
    auto it = uidx.find(unit);
    if (it == uidx.end()) {
      it = uidx.emplace(unit, int(units.size())).first;
      units.push_back(unit);
    }
    Date d = Date::parse(row.fields[1]);
    auto v = csv::parse_value(row.fields[2], row.line);
    obs.push_back({it->second, d, v.value_or(0.0), v.has_value(), row.line});
    lo = lo ? std::min(*lo, d) : d;
    hi = hi ? std::max(*hi, d) : d;
  }
  if (obs.empty()) throw EmptyInputError("no data rows");
  int ndays = *hi - *lo + 1;
  Eigen::MatrixXd vals =
      Eigen::MatrixXd::Constant(Eigen::Index(units.size()), ndays, kMissing);
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> filled =
      Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(
          Eigen::Index(units.size()), ndays, false);
  for (const auto& o : obs) {
    int c = o.date - *lo;
    if (filled(o.unit, c))
      throw DuplicateError("duplicate cell (" + units[o.unit] + "," + o.date.iso() +
                           ") at line " + std::to_string(o.line));
    filled(o.unit, c) = true;
    if (o.present) vals(o.unit, c) = o.value;
  }
  return Panel(std::move(units), *lo, std::move(vals), metric);
}

}  // namespace detail

/// Loads a panel from CSV. Wide: header `unit,YYYY-MM-DD,...`. Long: header
/// `unit,date,value`. Empty value field = missing; calendar gaps become
/// missing cells for every unit.
inline Panel ingest_csv(const std::string& path, CsvSchema schema,
                        const std::string& metric) {
  auto rows = csv::read_file(path);
  if (rows.size() < 2) throw EmptyInputError("no data rows in " + path);
  return schema == CsvSchema::Wide ? detail::ingest_wide(rows, metric)
                                   : detail::ingest_long(rows, metric);
}

/// Loads unit metadata from `unit,population,region,intervention_date`.
/// A unit may carry several measure dates separated by ';'. Empty fields are
/// allowed everywhere but the unit id.
inline std::map<std::string, UnitMeta> load_meta(const std::string& path) {
  auto rows = csv::read_file(path);
  if (rows.size() < 2) throw EmptyInputError("no metadata rows in " + path);
  if (rows.front().fields.size() < 4)
    throw ParseError("metadata header needs (unit,population,region,intervention_date)");
  std::map<std::string, UnitMeta> out;
  for (size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.fields.size() < 4)
      throw ParseError("metadata row width mismatch at line " + std::to_string(row.line));
    const std::string& unit = row.fields[0];
    if (unit.empty())
      throw ParseError("empty unit id at line " + std::to_string(row.line));
    UnitMeta m;
    if (!row.fields[1].empty()) {
      m.population = csv::parse_int(row.fields[1], row.line);
      if (m.population < 0)
        throw MetadataError("negative population for unit '" + unit + "'");
    }
    m.region = row.fields[2];
    const std::string& dates = row.fields[3];
    size_t pos = 0;
    while (pos <= dates.size() && !dates.empty()) {
      size_t sep = dates.find(';', pos);
      std::string tok = csv::trim(
          dates.substr(pos, sep == std::string::npos ? std::string::npos : sep - pos));
      if (!tok.empty()) m.intervention_dates.push_back(Date::parse(tok));
      if (sep == std::string::npos) break;
      pos = sep + 1;
    }
    if (!out.emplace(unit, std::move(m)).second)
      throw DuplicateError("duplicate metadata row '" + unit + "' at line " +
                           std::to_string(row.line));
  }
  return out;
}

/// Trailing moving average over the last `window` days; missing cells inside
/// the span are skipped, output stays missing wherever the input is missing.
/// The prefix uses however many days exist.
inline Panel moving_average(const Panel& p, int window) {
  if (window < 1) throw InvalidParameter("moving average window must be >= 1");
  Eigen::MatrixXd out = p.values();
  for (int u = 0; u < p.unit_count(); ++u) {
    for (int d = 0; d < p.day_count(); ++d) {
      if (is_missing(p.values()(u, d))) continue;
      double sum = 0.0;
      int n = 0;
      for (int j = std::max(0, d - window + 1); j <= d; ++j) {
        double v = p.values()(u, j);
        if (is_missing(v)) continue;
        sum += v;
        ++n;
      }
      out(u, d) = sum / n;
    }
  }
  Panel q(p.units(), p.start_date(), std::move(out), p.metric());
  q.attach_meta(p.meta());
  return q;
}

/// Rescales every cell to a per-million-persons basis.
inline Panel per_million(const Panel& p) {
  Eigen::MatrixXd out = p.values();
  for (int u = 0; u < p.unit_count(); ++u) {
    const UnitMeta* m = p.meta_for(p.units()[u]);
    if (!m || !m->has_population())
      throw MetadataError("missing population for unit '" + p.units()[u] + "'");
    out.row(u) *= 1e6 / double(m->population);
  }
  Panel q(p.units(), p.start_date(), std::move(out), p.metric() + "-per-million");
  q.attach_meta(p.meta());
  return q;
}

/// First-differences a cumulative panel into a daily one. The first column is
/// carried over unchanged; a difference is only formed when both neighbours
/// are present. Negative differences (reporting corrections) are kept and
/// reported through `flags` when given.
inline Panel to_daily(const Panel& p, std::vector<CellFlag>* flags = nullptr) {
  if (!p.metric_cumulative())
    throw MetricError("to_daily requires a cumulative metric, got '" + p.metric() + "'");
  Eigen::MatrixXd out =
      Eigen::MatrixXd::Constant(p.unit_count(), p.day_count(), kMissing);
  for (int u = 0; u < p.unit_count(); ++u) {
    out(u, 0) = p.values()(u, 0);
    for (int d = 1; d < p.day_count(); ++d) {
      double a = p.values()(u, d - 1), b = p.values()(u, d);
      if (is_missing(a) || is_missing(b)) continue;
      out(u, d) = b - a;
      if (flags && out(u, d) < 0.0)
        flags->push_back({p.units()[u], p.date(d), out(u, d)});
    }
  }
  std::string metric = "daily" + p.metric().substr(std::string("cumulative").size());
  Panel q(p.units(), p.start_date(), std::move(out), metric);
  q.attach_meta(p.meta());
  return q;
}

/// Running sum along each row; inverse of to_daily on fully observed rows.
inline Panel cumulative_sum(const Panel& p) {
  Eigen::MatrixXd out = p.values();
  for (int u = 0; u < p.unit_count(); ++u) {
    double acc = 0.0;
    for (int d = 0; d < p.day_count(); ++d) {
      double v = out(u, d);
      if (is_missing(v)) continue;
      acc += v;
      out(u, d) = acc;
    }
  }
  std::string metric = p.metric();
  if (metric.rfind("daily", 0) == 0)
    metric = "cumulative" + metric.substr(std::string("daily").size());
  Panel q(p.units(), p.start_date(), std::move(out), metric);
  q.attach_meta(p.meta());
  return q;
}

}  // namespace synthctl
