#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "synthctl/errors.hpp"
#include "synthctl/panel.hpp"

namespace synthctl {

/// How many singular values to keep when denoising. Either a fixed count or
/// the smallest count whose retained squared-singular-value energy reaches
/// the given fraction.
struct RankPolicy {
  int fixed_rank = 0;     // > 0 selects a fixed count
  double energy = 0.99;   // used when fixed_rank == 0

  static RankPolicy fixed(int k) {
    if (k < 1) throw InvalidParameter("kept rank must be >= 1");
    RankPolicy p;
    p.fixed_rank = k;
    return p;
  }
  static RankPolicy by_energy(double frac = 0.99) {
    if (frac <= 0.0 || frac > 1.0)
      throw InvalidParameter("energy fraction must be in (0, 1]");
    RankPolicy p;
    p.energy = frac;
    return p;
  }
};

inline int choose_rank(const Eigen::VectorXd& spectrum, const RankPolicy& policy) {
  if (policy.fixed_rank > 0)
    return std::min<int>(policy.fixed_rank, int(spectrum.size()));
  double total = spectrum.squaredNorm();
  if (total <= 0.0) throw DegenerateInputError("all singular values are zero");
  double acc = 0.0;
  for (int i = 0; i < spectrum.size(); ++i) {
    acc += spectrum(i) * spectrum(i);
    if (acc >= policy.energy * total) return i + 1;
  }
  return int(spectrum.size());
}

struct DenoiseResult {
  Eigen::MatrixXd mhat;        // rank-truncated reconstruction
  Eigen::VectorXd spectrum;    // full spectrum of the filled/rescaled input
  double p_hat = 1.0;          // observed fraction
  int kept_rank = 0;
};

namespace detail {

struct FilledSvd {
  Eigen::BDCSVD<Eigen::MatrixXd> svd;
  double p_hat = 1.0;
};

inline FilledSvd fill_and_svd(const Eigen::MatrixXd& X) {
  if (X.size() == 0) throw DegenerateInputError("empty matrix");
  Eigen::Index observed = 0;
  Eigen::MatrixXd filled = X;
  for (Eigen::Index j = 0; j < X.cols(); ++j)
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      if (is_missing(X(i, j)))
        filled(i, j) = 0.0;
      else
        ++observed;
    }
  if (observed == 0) throw DegenerateInputError("all entries missing");
  FilledSvd f;
  f.p_hat = double(observed) / double(X.size());
  filled /= f.p_hat;
  f.svd.compute(filled, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return f;
}

inline Eigen::MatrixXd truncate(const Eigen::BDCSVD<Eigen::MatrixXd>& svd, int k) {
  return svd.matrixU().leftCols(k) *
         svd.singularValues().head(k).asDiagonal() *
         svd.matrixV().leftCols(k).transpose();
}

}  // namespace detail

/// Low-rank denoising: missing (NaN) entries are zero-filled, the matrix is
/// rescaled by the observed fraction, and all but the top kept_rank singular
/// values are dropped.
inline DenoiseResult denoise(const Eigen::MatrixXd& X, int kept_rank) {
  if (kept_rank < 1) throw InvalidParameter("kept rank must be >= 1");
  detail::FilledSvd f = detail::fill_and_svd(X);
  DenoiseResult r;
  r.p_hat = f.p_hat;
  r.spectrum = f.svd.singularValues();
  r.kept_rank = std::min<int>(kept_rank, int(r.spectrum.size()));
  if (r.spectrum(r.kept_rank - 1) <= 0.0)
    throw DegenerateInputError("fewer nonzero singular values than the kept rank");
  r.mhat = detail::truncate(f.svd, r.kept_rank);
  return r;
}

/// Synthetic-control model: donor weights regressed on the denoised donor
/// block over the pre-intervention window [0, t0).
struct RscModel {
  std::vector<std::string> donor_ids;
  Eigen::VectorXd weights;         // unconstrained sign
  int kept_rank = 0;
  Eigen::VectorXd singular_values; // full spectrum of the denoising input
  int t0 = 0;                      // train window is columns [0, t0)
  double p_hat = 1.0;
  Eigen::MatrixXd denoised;        // donors x full horizon
};

/// Fits donor weights by minimum-norm least squares of the target's observed
/// pre-intervention values on the denoised donor columns. A positive ridge
/// penalty switches to the regularized normal equations.
inline RscModel fit_rsc(const Eigen::MatrixXd& donors,
                        std::vector<std::string> donor_ids,
                        const Eigen::VectorXd& target, int t0, RankPolicy policy,
                        double ridge = 0.0) {
  const int n = int(donors.rows()), horizon = int(donors.cols());
  if (n < 1) throw EmptyDonorError("no donors");
  if (int(donor_ids.size()) != n)
    throw InvalidParameter("donor id count does not match donor rows");
  if (target.size() < horizon)
    throw InvalidParameter("target series shorter than the donor horizon");
  if (t0 <= 1) throw InsufficientPretreatmentError("need at least 2 pre-treatment days");
  if (t0 > horizon) throw RangeError("t0 beyond the donor horizon");
  if (ridge < 0.0) throw InvalidParameter("ridge penalty must be >= 0");

  // Spectrum of the filled/rescaled full block decides the energy rank; the
  // kept rank is then capped by the pre-window width and by the number of
  // strictly positive singular values.
  detail::FilledSvd f = detail::fill_and_svd(donors);
  const Eigen::VectorXd& spectrum = f.svd.singularValues();
  int positive = 0;
  while (positive < spectrum.size() && spectrum(positive) > 0.0) ++positive;
  if (positive == 0) throw DegenerateInputError("all singular values are zero");
  int k = std::min({choose_rank(spectrum, policy), std::min(n, t0), positive});
  Eigen::MatrixXd mhat = detail::truncate(f.svd, k);

  std::vector<int> pre_days;
  for (int d = 0; d < t0; ++d)
    if (!is_missing(target(d))) pre_days.push_back(d);
  if (pre_days.size() < 2)
    throw InsufficientPretreatmentError("fewer than 2 observed pre-treatment days");

  Eigen::MatrixXd A(pre_days.size(), n);
  Eigen::VectorXd y(pre_days.size());
  for (size_t r = 0; r < pre_days.size(); ++r) {
    A.row(r) = mhat.col(pre_days[r]).transpose();
    y(r) = target(pre_days[r]);
  }

  RscModel m;
  if (ridge > 0.0) {
    Eigen::MatrixXd G = A.transpose() * A;
    G.diagonal().array() += ridge;
    m.weights = G.ldlt().solve(A.transpose() * y);
  } else {
    m.weights = A.completeOrthogonalDecomposition().solve(y);
  }
  m.donor_ids = std::move(donor_ids);
  m.kept_rank = k;
  m.singular_values = spectrum;
  m.t0 = t0;
  m.p_hat = f.p_hat;
  m.denoised = std::move(mhat);
  return m;
}

/// Counterfactual path with the actual series and their gap, on a relative
/// axis where day 0 is the intervention.
struct Trajectory {
  std::string target_id;
  int start_rel = 0;  // relative day of entry 0
  std::vector<double> actual;          // NaN = unobserved
  std::vector<double> counterfactual;
  std::vector<double> gap;             // counterfactual - actual where observed

  int size() const { return int(counterfactual.size()); }
  int rel_day(int i) const { return start_rel + i; }
  std::optional<int> index_of_rel(int r) const {
    int i = r - start_rel;
    if (i < 0 || i >= size()) return std::nullopt;
    return i;
  }
};

/// Projects the fitted combination of denoised donors over columns [lo, hi],
/// pairing it with the target's actual values on the same axis.
inline Trajectory project(const RscModel& m, const Eigen::VectorXd& actual, int lo,
                          int hi, std::string target_id = {}) {
  if (lo < 0 || hi >= m.denoised.cols() || lo > hi)
    throw RangeError("projection horizon outside the fitted donor horizon");
  Trajectory t;
  t.target_id = std::move(target_id);
  t.start_rel = lo - m.t0;
  for (int d = lo; d <= hi; ++d) {
    double cf = m.weights.dot(m.denoised.col(d));
    double act = d < actual.size() ? actual(d) : kMissing;
    t.counterfactual.push_back(cf);
    t.actual.push_back(act);
    t.gap.push_back(is_missing(act) ? kMissing : cf - act);
  }
  return t;
}

inline Trajectory fit_and_project(const Eigen::MatrixXd& donors,
                                  std::vector<std::string> donor_ids,
                                  const Eigen::VectorXd& target, int t0,
                                  RankPolicy policy, std::string target_id = {},
                                  double ridge = 0.0) {
  RscModel m = fit_rsc(donors, std::move(donor_ids), target, t0, policy, ridge);
  return project(m, target, 0, int(donors.cols()) - 1, std::move(target_id));
}

/// Weights rescaled to unit L1 mass, signs kept.
inline Eigen::VectorXd normalized_weights(const RscModel& m) {
  double l1 = m.weights.cwiseAbs().sum();
  if (l1 <= 0.0) throw DegenerateModelError("all weights are zero");
  return m.weights / l1;
}

/// Top donors by absolute normalized weight, largest first; ties broken by
/// donor order.
inline std::vector<std::pair<std::string, double>> top_weights(const RscModel& m,
                                                               int k) {
  Eigen::VectorXd w = normalized_weights(m);
  std::vector<int> idx(m.donor_ids.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return std::abs(w(a)) > std::abs(w(b));
  });
  std::vector<std::pair<std::string, double>> out;
  for (int i = 0; i < std::min<int>(k, int(idx.size())); ++i)
    out.emplace_back(m.donor_ids[idx[i]], w(idx[i]));
  return out;
}

/// Trajectory under a hypothetical intervention moved by shift_days, with
/// post-period totals of both worlds. Positive percent_reduction means the
/// shifted intervention lowers the post-period total below what was observed.
struct ShiftedCounterfactual {
  Trajectory trajectory;
  double cumulative_actual = 0.0;   // observed world over the post window
  double cumulative_shifted = 0.0;  // shifted world over the post window
  double percent_reduction = 0.0;   // (actual - shifted) / actual * 100
};

/// Donors must be pre-aligned on their own intervention dates (column 0 =
/// relative day rel_lo). The target's calendar series is re-indexed as if its
/// intervention had happened at target_t0 + shift_days, fitted on the shifted
/// pre-window, and projected. Donors not fully observed on the training
/// window are dropped.
inline ShiftedCounterfactual counterfactual_shifted(
    const Eigen::MatrixXd& donors_rel, int rel_lo,
    const std::vector<std::string>& donor_ids, const Eigen::VectorXd& target_cal,
    int target_t0, int shift_days, RankPolicy policy, std::string target_id = {},
    double ridge = 0.0) {
  const int rel_hi = rel_lo + int(donors_rel.cols()) - 1;
  if (rel_lo > 0 || rel_hi < 0)
    throw RangeError("donor window must straddle relative day 0");
  const int t0_shifted = target_t0 + shift_days;
  if (t0_shifted < 2 || t0_shifted >= int(target_cal.size()))
    throw InsufficientPretreatmentError(
        "shifted intervention leaves no usable pre-treatment window");

  const int lo = std::max(rel_lo, -t0_shifted);
  std::vector<int> kept;
  for (int i = 0; i < donors_rel.rows(); ++i) {
    bool ok = true;
    for (int r = lo; r <= rel_hi && ok; ++r)
      if (is_missing(donors_rel(i, r - rel_lo))) ok = false;
    if (ok) kept.push_back(i);
  }
  if (kept.empty()) throw EmptyDonorError("no donor fully observed on the window");

  const int ncols = rel_hi - lo + 1;
  Eigen::MatrixXd D(kept.size(), ncols);
  std::vector<std::string> ids;
  for (size_t i = 0; i < kept.size(); ++i) {
    D.row(i) = donors_rel.row(kept[i]).segment(lo - rel_lo, ncols);
    ids.push_back(donor_ids[kept[i]]);
  }
  Eigen::VectorXd y = Eigen::VectorXd::Constant(ncols, kMissing);
  for (int r = lo; r <= rel_hi; ++r) {
    int c = t0_shifted + r;
    if (c >= 0 && c < target_cal.size()) y(r - lo) = target_cal(c);
  }

  ShiftedCounterfactual out;
  RscModel m = fit_rsc(D, std::move(ids), y, -lo, policy, ridge);
  out.trajectory = project(m, y, 0, ncols - 1, std::move(target_id));
  for (int i = 0; i < out.trajectory.size(); ++i) {
    if (out.trajectory.rel_day(i) < 0) continue;
    double act = out.trajectory.actual[i];
    if (is_missing(act)) continue;
    out.cumulative_actual += act;
    out.cumulative_shifted += out.trajectory.counterfactual[i];
  }
  if (out.cumulative_actual <= 0.0)
    throw UndefinedReductionError("observed post-period total is not positive");
  out.percent_reduction =
      (out.cumulative_actual - out.cumulative_shifted) / out.cumulative_actual * 100.0;
  return out;
}

/// Pre/post split of a donor block and target series at t0.
struct BlockMatrix {
  Eigen::MatrixXd donor_pre, donor_post;
  Eigen::VectorXd target_pre, target_post;

  static BlockMatrix split(const Eigen::MatrixXd& donors,
                           const Eigen::VectorXd& target, int t0) {
    if (t0 < 1 || t0 > donors.cols())
      throw RangeError("split index outside the horizon");
    if (target.size() != donors.cols())
      throw InvalidParameter("target length does not match donor horizon");
    BlockMatrix b;
    b.donor_pre = donors.leftCols(t0);
    b.donor_post = donors.rightCols(donors.cols() - t0);
    b.target_pre = target.head(t0);
    b.target_post = target.tail(target.size() - t0);
    return b;
  }
};

}  // namespace synthctl
