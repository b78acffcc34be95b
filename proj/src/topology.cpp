#include "dsgd/topology.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <fmt/format.h>

#include "dsgd/errors.hpp"

namespace dsgd {

std::string_view to_string(TopologyKind kind) {
  switch (kind) {
    case TopologyKind::Complete: return "complete";
    case TopologyKind::FixedRing: return "ring";
    case TopologyKind::ExponentialOnePeer: return "exponential";
    case TopologyKind::BipartiteExponential: return "bipartite-exponential";
    case TopologyKind::RandomMatching: return "random-matching";
  }
  return "unknown";
}

TopologyKind parse_topology_kind(std::string_view name) {
  if (name == "complete") return TopologyKind::Complete;
  if (name == "ring" || name == "fixed-ring") return TopologyKind::FixedRing;
  if (name == "exponential" || name == "exponential-one-peer") return TopologyKind::ExponentialOnePeer;
  if (name == "bipartite-exponential" || name == "bipartite") return TopologyKind::BipartiteExponential;
  if (name == "random-matching" || name == "matching") return TopologyKind::RandomMatching;
  throw ConfigError(fmt::format("unknown topology kind '{}'", name));
}

void TopologySpec::validate() const {
  if (n < 2) throw ConfigError(fmt::format("topology needs n >= 2, got {}", n));
}

bool TopologySpec::time_varying() const noexcept {
  return kind == TopologyKind::ExponentialOnePeer || kind == TopologyKind::BipartiteExponential ||
         kind == TopologyKind::RandomMatching;
}

int TopologySpec::period() const noexcept {
  if (kind != TopologyKind::ExponentialOnePeer && kind != TopologyKind::BipartiteExponential)
    return 1;
  return static_cast<int>(std::floor(std::log2(static_cast<double>(n - 1)))) + 1;
}

MixingMatrix::MixingMatrix(Matrix weights, std::optional<MixingParameter> p)
    : weights_(std::move(weights)), p_(p) {
  if (weights_.rows() != weights_.cols())
    throw DimensionError("mixing matrix must be square");
}

MixingMatrix MixingMatrix::with_parameter(MixingParameter p) const { return MixingMatrix(weights_, p); }

double MixingMatrix::stochasticity_error() const {
  const std::size_t m = n();
  double worst = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double row = 0.0;
    double col = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      row += weights_(i, j);
      col += weights_(j, i);
    }
    worst = std::max({worst, std::abs(row - 1.0), std::abs(col - 1.0)});
  }
  return worst;
}

Matrix MixingMatrix::apply(const Matrix& x) const {
  if (x.rows() != n()) throw DimensionError("gossip: state rows differ from matrix size");
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < n(); ++i) {
    auto dst = out.row(i);
    for (std::size_t j = 0; j < n(); ++j) {
      const double w = weights_(i, j);
      if (w == 0.0) continue;
      auto src = x.row(j);
      for (std::size_t c = 0; c < x.cols(); ++c) dst[c] += w * src[c];
    }
  }
  return out;
}

int MixingMatrix::degree(std::size_t i) const {
  int peers = 0;
  for (std::size_t j = 0; j < n(); ++j)
    if (j != i && (weights_(i, j) != 0.0 || weights_(j, i) != 0.0)) ++peers;
  return peers == static_cast<int>(n()) - 1 && n() > 2 ? static_cast<int>(n()) : peers;
}

namespace {

void pair_nodes(Matrix& w, std::size_t a, std::size_t b) {
  w(a, a) = 0.5;
  w(b, b) = 0.5;
  w(a, b) = 0.5;
  w(b, a) = 0.5;
}

Matrix complete_weights(std::size_t n) { return Matrix(n, n, 1.0 / static_cast<double>(n)); }

Matrix ring_weights(std::size_t n) {
  Matrix w(n, n);
  if (n == 2) {
    // Both neighbours coincide; the self + neighbour weights merge.
    w(0, 0) = w(1, 1) = 1.0 / 3.0;
    w(0, 1) = w(1, 0) = 2.0 / 3.0;
    return w;
  }
  for (std::size_t i = 0; i < n; ++i) {
    w(i, i) = 1.0 / 3.0;
    w(i, (i + 1) % n) = 1.0 / 3.0;
    w(i, (i + n - 1) % n) = 1.0 / 3.0;
  }
  return w;
}

Matrix exponential_weights(std::size_t n, int slot) {
  const std::size_t offset = std::size_t{1} << slot;
  Matrix w(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    w(i, i) += 0.5;
    w(i, (i + offset) % n) += 0.5;
  }
  return w;
}

Matrix bipartite_weights(std::size_t n, int slot) {
  // Odd ranks initiate; even ranks answer. Offsets are odd (2^(k+1) - 1) so
  // an odd initiator always lands on an even rank unless the index wraps
  // past an odd n.
  const std::size_t offset = (std::size_t{1} << (slot + 1)) - 1;
  Matrix w = Matrix::identity(n);
  std::vector<bool> paired(n, false);
  for (std::size_t i = 1; i < n; i += 2) {
    const std::size_t j = (i + offset) % n;
    if (j % 2 != 0 || paired[j]) continue;
    paired[i] = paired[j] = true;
    pair_nodes(w, i, j);
  }
  return w;
}

Matrix matching_weights(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.index(i + 1)]);
  Matrix w = Matrix::identity(n);
  for (std::size_t k = 0; k + 1 < n; k += 2) pair_nodes(w, order[k], order[k + 1]);
  return w;
}

Matrix centering_projector(std::size_t n) {
  Matrix p = Matrix::identity(n);
  const double inv = 1.0 / static_cast<double>(n);
  for (double& v : p.data()) v -= inv;
  return p;
}

/// P (W^T W) P, the second moment restricted to the disagreement subspace.
Matrix projected_second_moment(const Matrix& sum_wtw, std::size_t draws) {
  const std::size_t n = sum_wtw.rows();
  Matrix m = sum_wtw;
  for (double& v : m.data()) v /= static_cast<double>(draws);
  const Matrix p = centering_projector(n);
  Matrix out = multiply(multiply(p, m), p);
  // Symmetrize away rounding so the Jacobi precondition holds.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) out(i, j) = out(j, i) = 0.5 * (out(i, j) + out(j, i));
  return out;
}

void accumulate_wtw(const Matrix& w, Matrix& sum) {
  const std::size_t n = w.rows();
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i) {
      const double wki = w(k, i);
      if (wki == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) sum(i, j) += wki * w(k, j);
    }
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

MixingMatrix build_mixing(const TopologySpec& spec, std::int64_t round, Rng& rng) {
  spec.validate();
  const auto n = static_cast<std::size_t>(spec.n);
  const int slot = static_cast<int>(((round % spec.period()) + spec.period()) % spec.period());
  switch (spec.kind) {
    case TopologyKind::Complete:
      return MixingMatrix(complete_weights(n), MixingParameter::exact_value(1.0));
    case TopologyKind::FixedRing: {
      // Circulant: eigenvalues (1 + 2 cos(2 pi k / n)) / 3.
      double second = 0.0;
      for (std::size_t k = 1; k < n; ++k)
        second = std::max(second, std::abs((1.0 + 2.0 * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) /
                                                                  static_cast<double>(n))) / 3.0));
      return MixingMatrix(ring_weights(n), MixingParameter::exact_value(1.0 - second * second));
    }
    case TopologyKind::ExponentialOnePeer:
      return MixingMatrix(exponential_weights(n, slot));
    case TopologyKind::BipartiteExponential:
      return MixingMatrix(bipartite_weights(n, slot));
    case TopologyKind::RandomMatching:
      return MixingMatrix(matching_weights(n, rng));
  }
  throw ConfigError("unhandled topology kind");
}

double spectral_gap(const MixingMatrix& w) {
  if (!w.symmetric())
    throw UnsupportedMatrixError(
        "spectral_gap needs a fixed symmetric matrix; use estimate_mixing_parameter");
  const Vector values = symmetric_eigenvalues(w.weights());
  double second = 0.0;
  for (std::size_t i = 1; i < values.size(); ++i) second = std::max(second, std::abs(values[i]));
  return 1.0 - std::min(second, 1.0);
}

double exact_mixing_parameter(const MixingMatrix& w) {
  Matrix sum(w.n(), w.n());
  accumulate_wtw(w.weights(), sum);
  const Vector values = symmetric_eigenvalues(projected_second_moment(sum, 1));
  return clamp01(1.0 - values.front());
}

double contraction_ratio(const MixingMatrix& w, const Matrix& x) {
  const Vector mean = row_mean(x);
  const Matrix mixed = w.apply(x);
  double before = 0.0;
  double after = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t c = 0; c < x.cols(); ++c) {
      const double d0 = x(i, c) - mean[c];
      const double d1 = mixed(i, c) - mean[c];
      before += d0 * d0;
      after += d1 * d1;
    }
  return before == 0.0 ? 0.0 : after / before;
}

MixingEstimate estimate_mixing_parameter(const MixingSampler& sample, std::size_t n, int trials,
                                         Rng& rng) {
  if (trials < 100) throw ConfigError("estimate_mixing_parameter needs at least 100 trials");
  if (n < 2) throw ConfigError("estimate_mixing_parameter needs n >= 2");

  Matrix sum(n, n);
  for (int t = 0; t < trials; ++t) accumulate_wtw(sample(rng, t).weights(), sum);
  const SymmetricEigen moment = symmetric_eigen(projected_second_moment(sum, trials));

  std::vector<Vector> candidates;
  auto add_candidate = [&](Vector v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
    for (double& x : v) x -= mean;
    const double norm = std::sqrt(squared_norm(v));
    if (norm < 1e-8) return;
    for (double& x : v) x /= norm;
    candidates.push_back(std::move(v));
  };
  const std::size_t top = std::min<std::size_t>(3, n - 1);
  for (std::size_t k = 0; k < top; ++k) {
    Vector v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = moment.vectors(i, k);
    add_candidate(std::move(v));
  }
  for (int g = 0; g < 8; ++g) {
    Vector v(n);
    for (double& x : v) x = rng.normal();
    add_candidate(std::move(v));
  }

  const std::size_t m = candidates.size();
  std::vector<double> sum_r(m, 0.0), sum_r2(m, 0.0);
  for (int t = 0; t < trials; ++t) {
    const MixingMatrix w = sample(rng, trials + t);
    for (std::size_t c = 0; c < m; ++c) {
      double r = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += w(i, j) * candidates[c][j];
        r += s * s;
      }
      sum_r[c] += r;
      sum_r2[c] += r * r;
    }
  }

  MixingEstimate best{1.0, 1.0, 1.0, 0.0};
  double worst_ratio = -1.0;
  const double count = static_cast<double>(trials);
  for (std::size_t c = 0; c < m; ++c) {
    const double mean = sum_r[c] / count;
    if (mean <= worst_ratio) continue;
    worst_ratio = mean;
    const double var = std::max(0.0, (sum_r2[c] - count * mean * mean) / (count - 1.0));
    const double se = std::sqrt(var / count);
    best = {clamp01(1.0 - mean), clamp01(1.0 - mean - 3.0 * se), clamp01(1.0 - mean + 3.0 * se), se};
  }
  return best;
}

MixingEstimate estimate_mixing_parameter(const TopologySpec& spec, int trials, Rng& rng) {
  spec.validate();
  if (!spec.time_varying()) {
    Rng unused(0);
    const MixingMatrix w = build_mixing(spec, 0, unused);
    const MixingSampler fixed = [&w](Rng&, std::int64_t) { return w; };
    return estimate_mixing_parameter(fixed, static_cast<std::size_t>(spec.n), trials, rng);
  }
  const MixingSampler sampler = [&spec](Rng& r, std::int64_t draw) {
    return build_mixing(spec, draw, r);
  };
  return estimate_mixing_parameter(sampler, static_cast<std::size_t>(spec.n), trials, rng);
}

MixingMatrix compose_gossip(std::span<const MixingMatrix> matrices) {
  if (matrices.empty()) throw ConfigError("compose_gossip needs at least one matrix");
  const std::size_t n = matrices.front().n();
  double p = 1.0;
  bool have_all = true;
  bool exact = true;
  Matrix product = Matrix::identity(n);
  for (const MixingMatrix& w : matrices) {
    if (w.n() != n) throw DimensionError("compose_gossip: matrices differ in size");
    product = multiply(w.weights(), product);
    if (!w.parameter()) {
      have_all = false;
      continue;
    }
    p = std::min(p, w.parameter()->lower);
    exact = exact && w.parameter()->exact;
  }
  if (!have_all) return MixingMatrix(std::move(product));
  const double bound = 1.0 - std::pow(1.0 - p, static_cast<double>(matrices.size()));
  MixingParameter param{bound, bound, bound, exact};
  return MixingMatrix(std::move(product), param);
}

double eigenvalue_floor(const MixingMatrix& w) {
  if (!w.symmetric()) throw UnsupportedMatrixError("eigenvalue floor needs a symmetric matrix");
  const std::size_t n = w.n();
  Matrix b = w.weights();
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) b(i, j) -= inv + (i == j ? 1.0 : 0.0);
  const Vector values = symmetric_eigenvalues(b);
  double floor = std::abs(values.front());
  for (double v : values) floor = std::min(floor, std::abs(v));
  return floor;
}

bool eigenvalue_floor_check(const MixingMatrix& w) {
  if (!w.parameter()) throw ConfigError("eigenvalue floor check needs a known mixing parameter");
  return eigenvalue_floor(w) >= w.parameter()->value / 2.0 - 1e-12;
}

std::string to_csv(const MixingMatrix& w) {
  std::string out;
  for (std::size_t i = 0; i < w.n(); ++i) {
    for (std::size_t j = 0; j < w.n(); ++j) {
      if (j > 0) out += ',';
      out += fmt::format("{:.17g}", w(i, j));
    }
    out += '\n';
  }
  return out;
}

MixingSchedule::MixingSchedule(TopologySpec spec, std::uint64_t seed) : spec_(spec), seed_(seed) {
  spec_.validate();
  if (!spec_.time_varying()) {
    Rng unused(0);
    fixed_ = build_mixing(spec_, 0, unused);
  }
}

MixingMatrix MixingSchedule::at(std::int64_t t, int k) const {
  if (fixed_) return *fixed_;
  Rng rng = Rng::stream(seed_, StreamTag::Mixing, spec_.seed, static_cast<std::uint64_t>(t),
                        static_cast<std::uint64_t>(k));
  return build_mixing(spec_, t + k, rng);
}

}  // namespace dsgd
