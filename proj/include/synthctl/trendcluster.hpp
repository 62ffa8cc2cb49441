#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "synthctl/errors.hpp"
#include "synthctl/panel.hpp"

namespace synthctl {

struct ClusterResult {
  int k = 0;
  std::map<std::string, int> assignment;   // unit -> cluster in [0, k)
  Eigen::MatrixXd centroids;               // k x window width
  double inertia = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> inertia_trace;       // one entry per Lloyd iteration
  std::vector<Exclusion> excluded;         // units with gaps on the window
};

namespace detail {

inline double sqdist(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).squaredNorm();
}

/// Squared-distance-weighted seeding; ties and the first pick are resolved by
/// the seeded generator, never by address or iteration order.
inline Eigen::MatrixXd kmeanspp_init(const Eigen::MatrixXd& X, int k,
                                     std::mt19937_64& rng) {
  const int n = int(X.rows());
  Eigen::MatrixXd centers(k, X.cols());
  std::uniform_int_distribution<int> first(0, n - 1);
  centers.row(0) = X.row(first(rng));
  Eigen::VectorXd d2(n);
  for (int i = 0; i < n; ++i)
    d2(i) = sqdist(X.row(i), centers.row(0));
  for (int c = 1; c < k; ++c) {
    double total = d2.sum();
    int pick = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng), acc = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += d2(i);
        if (r < acc) {
          pick = i;
          break;
        }
      }
    } else {
      pick = first(rng);  // all points coincide with chosen centers
    }
    centers.row(c) = X.row(pick);
    for (int i = 0; i < n; ++i)
      d2(i) = std::min(d2(i), sqdist(X.row(i), centers.row(c)));
  }
  return centers;
}

struct LloydOutcome {
  std::vector<int> assignment;
  Eigen::MatrixXd centroids;
  double inertia = 0.0;
  std::vector<double> trace;
};

inline LloydOutcome lloyd(const Eigen::MatrixXd& X, Eigen::MatrixXd centers,
                          int max_iters) {
  const int n = int(X.rows()), k = int(centers.rows());
  std::vector<int> assign(n, -1);
  LloydOutcome out;
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double bestd = sqdist(X.row(i), centers.row(0));
      for (int c = 1; c < k; ++c) {
        double d = sqdist(X.row(i), centers.row(c));
        if (d < bestd) {  // strict: ties keep the lowest index
          bestd = d;
          best = c;
        }
      }
      inertia += bestd;
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    out.trace.push_back(inertia);
    if (!changed) break;
    std::vector<int> count(k, 0);
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, X.cols());
    for (int i = 0; i < n; ++i) {
      sums.row(assign[i]) += X.row(i);
      ++count[assign[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (count[c] > 0) {
        centers.row(c) = sums.row(c) / count[c];
      } else {
        // Re-seed an emptied centroid at the point farthest from its own one.
        int far = 0;
        double fard = -1.0;
        for (int i = 0; i < n; ++i) {
          double d = sqdist(X.row(i), centers.row(assign[i]));
          if (d > fard) {
            fard = d;
            far = i;
          }
        }
        centers.row(c) = X.row(far);
      }
    }
  }
  out.assignment = std::move(assign);
  out.centroids = std::move(centers);
  out.inertia = out.trace.back();
  return out;
}

}  // namespace detail

/// Clusters units by their raw series over the day window [win_lo, win_hi].
/// Units with any gap on the window are excluded and reported. Deterministic
/// for a given seed; restarts > 1 keeps the lowest-inertia run (seeds
/// seed, seed+1, ...). normalize z-scores each unit's window first.
inline ClusterResult kmeans_trends(const Panel& p, int win_lo, int win_hi, int k,
                                   std::uint64_t seed, bool normalize = false,
                                   int restarts = 1, int max_iters = 300) {
  if (k < 1) throw InvalidParameter("k must be >= 1");
  if (restarts < 1) throw InvalidParameter("restarts must be >= 1");
  if (win_lo < 0 || win_hi >= p.day_count() || win_lo > win_hi)
    throw RangeError("cluster window outside the panel calendar");

  std::vector<int> rows;
  std::vector<Exclusion> excluded;
  for (int u = 0; u < p.unit_count(); ++u) {
    bool full = true;
    for (int d = win_lo; d <= win_hi && full; ++d)
      if (is_missing(p.values()(u, d))) full = false;
    if (full)
      rows.push_back(u);
    else
      excluded.push_back({p.units()[u], "gaps inside the cluster window"});
  }
  if (k > int(rows.size()))
    throw InvalidParameter("k exceeds the number of fully observed units");

  const int w = win_hi - win_lo + 1;
  Eigen::MatrixXd X(rows.size(), w);
  for (size_t i = 0; i < rows.size(); ++i)
    X.row(i) = p.values().row(rows[i]).segment(win_lo, w);
  if (normalize) {
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      double mean = X.row(i).mean();
      double sd = std::sqrt((X.row(i).array() - mean).square().mean());
      X.row(i).array() -= mean;
      if (sd > 0.0) X.row(i) /= sd;
    }
  }

  detail::LloydOutcome best;
  bool have = false;
  for (int r = 0; r < restarts; ++r) {
    std::mt19937_64 rng(seed + std::uint64_t(r));
    auto run = detail::lloyd(X, detail::kmeanspp_init(X, k, rng), max_iters);
    if (!have || run.inertia < best.inertia) {
      best = std::move(run);
      have = true;
    }
  }

  ClusterResult res;
  res.k = k;
  res.centroids = std::move(best.centroids);
  res.inertia = best.inertia;
  res.seed = seed;
  res.inertia_trace = std::move(best.trace);
  res.excluded = std::move(excluded);
  for (size_t i = 0; i < rows.size(); ++i)
    res.assignment[p.units()[rows[i]]] = best.assignment[i];
  return res;
}

struct GroupAggregate {
  std::string label;
  int member_count = 0;
  std::vector<double> mean_series;             // per day, missing skipped per-day
  std::map<std::string, double> scalar_stats;  // keyed by panel metric
};

namespace detail {

inline GroupAggregate aggregate_rows(const Panel& p, const std::string& label,
                                     const std::vector<int>& rows, int stat_lo,
                                     int stat_hi) {
  GroupAggregate g;
  g.label = label;
  g.member_count = int(rows.size());
  g.mean_series.resize(p.day_count(), kMissing);
  for (int d = 0; d < p.day_count(); ++d) {
    double sum = 0.0;
    int n = 0;
    for (int u : rows) {
      double v = p.values()(u, d);
      if (is_missing(v)) continue;
      sum += v;
      ++n;
    }
    if (n > 0) g.mean_series[d] = sum / n;
  }
  double sum = 0.0;
  int n = 0;
  for (int u : rows)
    for (int d = stat_lo; d <= stat_hi; ++d) {
      double v = p.values()(u, d);
      if (is_missing(v)) continue;
      sum += v;
      ++n;
    }
  g.scalar_stats[p.metric()] = n > 0 ? sum / n : kMissing;
  return g;
}

}  // namespace detail

/// Per-group unweighted means: the day-by-day mean series over members plus
/// one scalar (the all-cells mean over the stat window), keyed by the panel
/// metric. Groups must be disjoint and every member must exist.
inline std::vector<GroupAggregate> group_by_policy(
    const Panel& p, const std::vector<std::pair<std::string, std::vector<std::string>>>& groups,
    int stat_lo, int stat_hi) {
  if (stat_lo < 0 || stat_hi >= p.day_count() || stat_lo > stat_hi)
    throw RangeError("stat window outside the panel calendar");
  std::set<std::string> seen;
  std::vector<GroupAggregate> out;
  for (const auto& [label, members] : groups) {
    if (members.empty()) throw GroupingError("group '" + label + "' is empty");
    std::vector<int> rows;
    for (const auto& m : members) {
      if (!seen.insert(m).second)
        throw GroupingError("unit '" + m + "' appears in more than one group");
      auto idx = p.unit_index(m);
      if (!idx) throw GroupingError("unit '" + m + "' not found in the panel");
      rows.push_back(*idx);
    }
    out.push_back(detail::aggregate_rows(p, label, rows, stat_lo, stat_hi));
  }
  return out;
}

/// Aggregates a clustering the same way, one group per cluster index. The
/// panel supplying the statistic may differ from the one clustered, as long
/// as it contains the assigned units.
inline std::vector<GroupAggregate> cluster_aggregates(const Panel& p,
                                                      const ClusterResult& c,
                                                      int stat_lo, int stat_hi) {
  if (stat_lo < 0 || stat_hi >= p.day_count() || stat_lo > stat_hi)
    throw RangeError("stat window outside the panel calendar");
  std::vector<std::vector<int>> rows(c.k);
  for (const auto& [unit, cl] : c.assignment) {
    auto idx = p.unit_index(unit);
    if (!idx) throw GroupingError("unit '" + unit + "' not found in the panel");
    rows[cl].push_back(*idx);
  }
  std::vector<GroupAggregate> out;
  for (int cl = 0; cl < c.k; ++cl)
    out.push_back(detail::aggregate_rows(p, std::to_string(cl), rows[cl], stat_lo, stat_hi));
  return out;
}

}  // namespace synthctl
