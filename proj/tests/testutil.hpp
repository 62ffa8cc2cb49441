#pragma once

// Reference implementations used to cross-check the library. These are kept
// deliberately naive and share no algorithmic code with the headers under
// test: SVD by power iteration with deflation, least squares by Gaussian
// elimination on the normal equations, alignment by exhaustive scans, and a
// fine-step integrator for the epidemic generator.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Dominant singular triple of A via power iteration on A^T A.
inline void top_singular(const MatrixXd& A, VectorXd& u, VectorXd& v, double& s,
                         int iters = 2000) {
  v = VectorXd::LinSpaced(A.cols(), 1.0, 2.0).normalized();  // deterministic start
  for (int it = 0; it < iters; ++it) {
    VectorXd w = A.transpose() * (A * v);
    double n = w.norm();
    if (n == 0.0) break;
    v = w / n;
  }
  VectorXd Av = A * v;
  s = Av.norm();
  u = s > 0.0 ? VectorXd(Av / s) : VectorXd::Zero(A.rows());
}

// Rank-k reconstruction by repeated extraction and deflation.
inline MatrixXd truncated_svd(const MatrixXd& A, int k) {
  MatrixXd rest = A, out = MatrixXd::Zero(A.rows(), A.cols());
  for (int i = 0; i < k; ++i) {
    VectorXd u, v;
    double s = 0.0;
    top_singular(rest, u, v, s);
    if (s == 0.0) break;
    out += s * u * v.transpose();
    rest -= s * u * v.transpose();
  }
  return out;
}

// Solves A^T A x = A^T y by Gaussian elimination with partial pivoting.
// A must have full column rank.
inline VectorXd lstsq_normal_equations(const MatrixXd& A, const VectorXd& y) {
  const int n = int(A.cols());
  MatrixXd G = A.transpose() * A;
  VectorXd b = A.transpose() * y;
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(G(r, col)) > std::abs(G(piv, col))) piv = r;
    G.row(col).swap(G.row(piv));
    std::swap(b(col), b(piv));
    for (int r = col + 1; r < n; ++r) {
      double f = G(r, col) / G(col, col);
      G.row(r) -= f * G.row(col);
      b(r) -= f * b(col);
    }
  }
  VectorXd x(n);
  for (int r = n - 1; r >= 0; --r) {
    double acc = b(r);
    for (int c = r + 1; c < n; ++c) acc -= G(r, c) * x(c);
    x(r) = acc / G(r, r);
  }
  return x;
}

// First index with value >= threshold, by linear scan. NaN never qualifies.
inline std::optional<int> first_crossing(const std::vector<double>& series,
                                         double threshold) {
  for (size_t i = 0; i < series.size(); ++i)
    if (!std::isnan(series[i]) && series[i] >= threshold) return int(i);
  return std::nullopt;
}

// First day d such that every value in [d, d+sustain) sits at or below
// -drop, by checking each candidate window exhaustively.
inline std::optional<int> first_sustained_drop(const std::vector<double>& series,
                                               double drop, int sustain) {
  for (int d = 0; d + sustain <= int(series.size()); ++d) {
    bool all = true;
    for (int j = d; j < d + sustain && all; ++j)
      if (std::isnan(series[j]) || series[j] > -drop) all = false;
    if (all) return d;
  }
  return std::nullopt;
}

// Earliest argmax by scan, ignoring NaN.
inline std::optional<int> argmax(const std::vector<double>& series) {
  std::optional<int> best;
  for (size_t i = 0; i < series.size(); ++i) {
    if (std::isnan(series[i])) continue;
    if (!best || series[i] > series[*best]) best = int(i);
  }
  return best;
}

// Trailing moving average with NaN skipped, recomputed from scratch per day.
inline std::vector<double> trailing_ma(const std::vector<double>& series, int window) {
  std::vector<double> out(series.size(), std::nan(""));
  for (size_t d = 0; d < series.size(); ++d) {
    if (std::isnan(series[d])) continue;
    double sum = 0.0;
    int n = 0;
    for (int j = std::max(0, int(d) - window + 1); j <= int(d); ++j) {
      if (std::isnan(series[j])) continue;
      sum += series[j];
      ++n;
    }
    out[d] = sum / n;
  }
  return out;
}

struct SirParams {
  double population = 1e6;
  double beta0 = 0.0625, beta_lockdown = 0.02, gamma = 0.025;
  int t0 = 30;
  double seed_infected = 2000.0;
};

// Fine-step Euler integration aggregated into calendar-day bins; the
// reference for validating the day-stepped generator.
inline std::vector<double> sir_daily_cases(const SirParams& p, int days, double dt) {
  const int steps = int(std::llround(days / dt));
  double S = p.population - p.seed_infected, I = p.seed_infected;
  std::vector<double> daily(days, 0.0);
  double t = 0.0;
  for (int s = 0; s < steps; ++s) {
    double beta = t < p.t0 ? p.beta0 : p.beta_lockdown;
    double fresh = std::min(beta * S * I / p.population * dt, S);
    S -= fresh;
    I += fresh - p.gamma * I * dt;
    int day = int(t + 1e-9);
    if (day < days) daily[day] += fresh;
    t += dt;
  }
  return daily;
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

inline double rmse(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / double(a.size()));
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Shared-trend low-rank test panel: r smooth latent factors mixed with
// positive unit loadings. Row count = units, column count = days.
inline MatrixXd factor_panel(int units, int days, int rank, std::mt19937_64& rng) {
  MatrixXd F(rank, days);
  for (int d = 0; d < days; ++d) {
    double x = double(d) / days;
    if (rank > 0) F(0, d) = 50.0;
    if (rank > 1) F(1, d) = 20.0 * std::sin(2.0 * M_PI * x);
    if (rank > 2) F(2, d) = 30.0 * x;
  }
  std::uniform_real_distribution<double> load(0.5, 2.0);
  MatrixXd L(units, rank);
  for (int u = 0; u < units; ++u)
    for (int r = 0; r < rank; ++r) L(u, r) = load(rng);
  return L * F;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return s;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

// Fresh scratch directory under the test working directory.
inline std::string temp_dir(const std::string& name) {
  auto p = std::filesystem::path("test_tmp") / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

inline std::string fixture(const std::string& name) {
  return std::string(SYNTHCTL_FIXTURES) + "/" + name;
}

}  // namespace oracle
