#include "dsgd/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include <fmt/format.h>

#include "dsgd/errors.hpp"

namespace dsgd::oracle {

OracleReport OracleReport::equality(std::string quantity, double oracle_value, double main_value,
                                    double tolerance, double scale_floor) {
  OracleReport r;
  r.quantity = std::move(quantity);
  r.oracle_value = oracle_value;
  r.main_value = main_value;
  r.tolerance = tolerance;
  const double diff = std::abs(main_value - oracle_value);
  const double scale = std::max(std::abs(oracle_value), scale_floor);
  r.relative_error = scale == 0.0 ? diff : diff / scale;
  r.pass = r.relative_error <= tolerance;
  return r;
}

OracleReport OracleReport::upper_bound(std::string quantity, double bound, double main_value,
                                       double tolerance) {
  OracleReport r;
  r.kind = Kind::UpperBound;
  r.quantity = std::move(quantity);
  r.oracle_value = bound;
  r.main_value = main_value;
  r.tolerance = tolerance;
  r.relative_error = std::max(0.0, main_value - bound) / std::max(std::abs(bound), 1.0);
  r.pass = r.relative_error <= tolerance;
  return r;
}

OracleReport OracleReport::check(std::string quantity, bool ok) {
  OracleReport r;
  r.quantity = std::move(quantity);
  r.oracle_value = 1.0;
  r.main_value = ok ? 1.0 : 0.0;
  r.relative_error = ok ? 0.0 : 1.0;
  r.pass = ok;
  return r;
}

std::string OracleReport::line() const {
  return fmt::format("{} {} {} oracle={:.10g} main={:.10g} rel_err={:.3g} tol={:.3g}",
                     pass ? "PASS" : "FAIL", quantity,
                     kind == Kind::UpperBound ? "(<=)" : "(==)", oracle_value, main_value,
                     relative_error, tolerance);
}

Dense to_dense(const MixingMatrix& w) {
  Dense out(w.n(), std::vector<double>(w.n()));
  for (std::size_t i = 0; i < w.n(); ++i)
    for (std::size_t j = 0; j < w.n(); ++j) out[i][j] = w(i, j);
  return out;
}

std::vector<double> eig_symmetric(const Dense& input, double tol) {
  const std::size_t n = input.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (input[i].size() != n) throw DimensionError("eig_symmetric: matrix is not square");
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(input[i][j] - input[j][i]) > 1e-12)
        throw UnsupportedMatrixError("eig_symmetric: matrix is not symmetric");
  }
  Dense a = input;
  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += a[i][j] * a[i][j];
    return std::sqrt(s);
  };
  // Classical Jacobi: always annihilate the largest off-diagonal entry.
  const std::size_t max_rotations = 200 * n * n + 100;
  for (std::size_t rot = 0; rot < max_rotations && off_norm() > tol; ++rot) {
    std::size_t p = 0, q = 1;
    double biggest = -1.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (std::abs(a[i][j]) > biggest) {
          biggest = std::abs(a[i][j]);
          p = i;
          q = j;
        }
    const double phi = 0.5 * std::atan2(2.0 * a[p][q], a[q][q] - a[p][p]);
    const double c = std::cos(phi);
    const double s = std::sin(phi);
    const double app = a[p][p], aqq = a[q][q], apq = a[p][q];
    for (std::size_t k = 0; k < n; ++k) {
      if (k == p || k == q) continue;
      const double akp = a[k][p];
      const double akq = a[k][q];
      a[k][p] = a[p][k] = c * akp - s * akq;
      a[k][q] = a[q][k] = s * akp + c * akq;
    }
    a[p][p] = c * c * app - 2.0 * c * s * apq + s * s * aqq;
    a[q][q] = s * s * app + 2.0 * c * s * apq + c * c * aqq;
    a[p][q] = a[q][p] = 0.0;
  }
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = a[i][i];
  std::sort(values.begin(), values.end(), std::greater<>());
  return values;
}

Contraction mc_contraction(const DenseSampler& sample, std::size_t n, int trials, Rng& rng,
                           int directions) {
  if (trials < 100) throw ConfigError("mc_contraction needs at least 100 trials");
  constexpr std::size_t kCols = 4;
  // Random X, centred column by column.
  std::vector<Dense> xs;
  std::vector<double> norms;
  for (int k = 0; k < directions; ++k) {
    Dense x(n, std::vector<double>(kCols));
    for (auto& row : x)
      for (double& v : row) v = rng.normal();
    for (std::size_t c = 0; c < kCols; ++c) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += x[i][c];
      mean /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) x[i][c] -= mean;
    }
    double norm = 0.0;
    for (const auto& row : x)
      for (double v : row) norm += v * v;
    xs.push_back(std::move(x));
    norms.push_back(norm);
  }
  std::vector<double> sum(static_cast<std::size_t>(directions), 0.0);
  std::vector<double> sum_sq(static_cast<std::size_t>(directions), 0.0);
  for (int t = 0; t < trials; ++t) {
    const Dense w = sample(rng);
    for (std::size_t k = 0; k < xs.size(); ++k) {
      // X is centred and W preserves the mean, so W X is centred too.
      double after = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < kCols; ++c) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += w[i][j] * xs[k][j][c];
          after += s * s;
        }
      const double ratio = after / norms[k];
      sum[k] += ratio;
      sum_sq[k] += ratio * ratio;
    }
  }
  Contraction worst{-1.0, 0.0};
  const double count = static_cast<double>(trials);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const double mean = sum[k] / count;
    if (mean <= worst.ratio) continue;
    const double var = std::max(0.0, sum_sq[k] / count - mean * mean) * count / (count - 1.0);
    worst = {mean, std::sqrt(var / count)};
  }
  return worst;
}

Contraction mc_contraction(const TopologySpec& spec, int trials, Rng& rng, int directions) {
  std::int64_t round = 0;
  const DenseSampler sampler = [&](Rng& r) { return to_dense(build_mixing(spec, round++, r)); };
  return mc_contraction(sampler, static_cast<std::size_t>(spec.n), trials, rng, directions);
}

Vector fd_gradient(const Problem& problem, int node, const Vector& x, double step) {
  if (!(step > 0.0)) throw ConfigError("finite-difference step must be positive");
  Vector g(x.size());
  Vector probe = x;
  for (std::size_t k = 0; k < x.size(); ++k) {
    probe[k] = x[k] + step;
    const double up = problem.local_loss(node, probe);
    probe[k] = x[k] - step;
    const double down = problem.local_loss(node, probe);
    probe[k] = x[k];
    g[k] = (up - down) / (2.0 * step);
  }
  return g;
}

Vector fd_full_gradient(const Problem& problem, const Vector& x, double step) {
  Vector g(x.size(), 0.0);
  for (int i = 0; i < problem.nodes(); ++i) {
    const Vector gi = fd_gradient(problem, i, x, step);
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += gi[k] / problem.nodes();
  }
  return g;
}

Dense reference_dsgd_step(const Dense& states, const Dense& w, const Dense& grads, double lr) {
  const std::size_t n = states.size();
  const std::size_t d = n == 0 ? 0 : states[0].size();
  Dense out(n, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < d; ++c) out[i][c] += w[i][j] * (states[j][c] - lr * grads[j][c]);
  return out;
}

double reference_consensus_distance_sq(const Dense& states) {
  const std::size_t n = states.size();
  if (n == 0) return 0.0;
  const std::size_t d = states[0].size();
  double total = 0.0;
  for (std::size_t c = 0; c < d; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += states[i][c];
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) total += (states[i][c] - mean) * (states[i][c] - mean);
  }
  return total / static_cast<double>(n);
}

double reference_logistic_loss(const Matrix& features, const Vector& labels, double l2,
                               const Vector& x) {
  double total = 0.0;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    double margin = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) margin += features(j, k) * x[k];
    total += std::log(1.0 + std::exp(-labels[j] * margin));
  }
  double ridge = 0.0;
  for (double v : x) ridge += v * v;
  return total / static_cast<double>(labels.size()) + 0.5 * l2 * ridge;
}

OracleReport doubly_stochastic_report(const std::string& name, const Dense& w, double tol) {
  double worst = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    double row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      row += w[i][j];
      col += w[j][i];
    }
    worst = std::max({worst, std::abs(row - 1.0), std::abs(col - 1.0)});
  }
  return OracleReport::upper_bound("doubly stochastic: " + name, 0.0, worst, tol);
}

}  // namespace dsgd::oracle
