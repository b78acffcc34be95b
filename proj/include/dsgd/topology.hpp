#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dsgd/linalg.hpp"
#include "dsgd/rng.hpp"

namespace dsgd {

enum class TopologyKind {
  Complete,
  FixedRing,
  ExponentialOnePeer,
  BipartiteExponential,
  RandomMatching,
};

std::string_view to_string(TopologyKind kind);
/// Accepts the canonical names ("complete", "ring", "exponential",
/// "bipartite-exponential", "random-matching").
TopologyKind parse_topology_kind(std::string_view name);

struct TopologySpec {
  TopologyKind kind = TopologyKind::FixedRing;
  int n = 2;
  std::uint64_t seed = 0;

  void validate() const;
  /// True when the matrix changes from round to round.
  bool time_varying() const noexcept;
  /// Length of the peer schedule: floor(log2(n-1)) + 1 for the exponential
  /// kinds, 1 otherwise.
  int period() const noexcept;
};

/// Assumption-1 parameter. `lower` is the value downstream bound checks use;
/// it equals `value` when the parameter is exact.
struct MixingParameter {
  double value = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  bool exact = false;

  static MixingParameter exact_value(double p) { return {p, p, p, true}; }
};

/// Doubly stochastic weights for one gossip round. Node i's update is
/// x_i <- sum_j w_ij x_j, i.e. X <- W X with one row per node.
class MixingMatrix {
 public:
  explicit MixingMatrix(Matrix weights, std::optional<MixingParameter> p = std::nullopt);

  std::size_t n() const noexcept { return weights_.rows(); }
  const Matrix& weights() const noexcept { return weights_; }
  double operator()(std::size_t i, std::size_t j) const { return weights_(i, j); }

  const std::optional<MixingParameter>& parameter() const noexcept { return p_; }
  MixingMatrix with_parameter(MixingParameter p) const;

  bool symmetric(double tol = 1e-12) const { return is_symmetric(weights_, tol); }
  /// Largest absolute deviation of any row or column sum from 1.
  double stochasticity_error() const;
  bool doubly_stochastic(double tol = 1e-12) const { return stochasticity_error() <= tol; }

  /// W X, accumulating over j in ascending node order.
  Matrix apply(const Matrix& x) const;

  /// Distinct peers of node i in this round (edges in either direction).
  /// A dense round counts the full all-reduce group, i.e. n.
  int degree(std::size_t i) const;

 private:
  Matrix weights_;
  std::optional<MixingParameter> p_;
};

/// Mixing matrix of round `round`. Randomized kinds draw from `rng`; fixed
/// kinds attach their exact parameter.
MixingMatrix build_mixing(const TopologySpec& spec, std::int64_t round, Rng& rng);

/// rho = 1 - max_{i>=2} |lambda_i(W)|. Fixed symmetric W only.
double spectral_gap(const MixingMatrix& w);
inline double parameter_from_gap(double rho) { return 1.0 - (1.0 - rho) * (1.0 - rho); }

/// Exact p of one fixed (not necessarily symmetric) doubly stochastic W:
/// 1 - lambda_max(W^T W) on the subspace orthogonal to the all-ones vector.
double exact_mixing_parameter(const MixingMatrix& w);

/// ||W X - Xbar||_F^2 / ||X - Xbar||_F^2 (0 when X is already at consensus).
double contraction_ratio(const MixingMatrix& w, const Matrix& x);

struct MixingEstimate {
  double p_hat = 0.0;
  double lower = 0.0;  // p_hat - 3 standard errors, clamped to [0, 1]
  double upper = 0.0;
  double standard_error = 0.0;
  MixingParameter as_parameter() const { return {p_hat, lower, upper, standard_error == 0.0}; }
};

using MixingSampler = std::function<MixingMatrix(Rng&, std::int64_t draw)>;

/// Monte-Carlo estimate of p for a (possibly randomized) family. The
/// worst-case direction is taken from the sampled second moment of W; its
/// ratio is then measured on an independent batch, together with random
/// Gaussian directions, and the largest mean ratio defines p_hat.
MixingEstimate estimate_mixing_parameter(const TopologySpec& spec, int trials, Rng& rng);
MixingEstimate estimate_mixing_parameter(const MixingSampler& sample, std::size_t n, int trials,
                                         Rng& rng);

/// Product W_k ... W_1 of `matrices` (matrices[0] is applied first). The
/// attached parameter is the repeated-gossip bound 1 - (1 - p)^k, p being the
/// smallest lower parameter among the inputs.
MixingMatrix compose_gossip(std::span<const MixingMatrix> matrices);

/// lambda_min(W - 11^T/n - I) >= p/2, where lambda_min is the smallest
/// eigenvalue in absolute value. Requires a symmetric W with a parameter.
bool eigenvalue_floor_check(const MixingMatrix& w);
double eigenvalue_floor(const MixingMatrix& w);

/// Row-major CSV with 17 significant digits.
std::string to_csv(const MixingMatrix& w);

/// Deterministic per-round matrices for a training run. Fixed kinds are built
/// once; randomized kinds draw round (t, k) from a stream keyed on
/// (seed, spec.seed, t, k).
class MixingSchedule {
 public:
  MixingSchedule(TopologySpec spec, std::uint64_t seed);

  const TopologySpec& spec() const noexcept { return spec_; }
  /// k = 0 is the D-SGD round of iteration t; k >= 1 are extra control rounds.
  MixingMatrix at(std::int64_t t, int k) const;

 private:
  TopologySpec spec_;
  std::uint64_t seed_;
  std::optional<MixingMatrix> fixed_;
};

}  // namespace dsgd
