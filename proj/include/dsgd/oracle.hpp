#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dsgd/linalg.hpp"
#include "dsgd/problems.hpp"
#include "dsgd/rng.hpp"
#include "dsgd/topology.hpp"

// Brute-force reference implementations. Nothing here calls the numerical
// routines of the main modules: matrices are read entry by entry and every
// product, norm and eigenvalue is recomputed with plain loops.
namespace dsgd::oracle {

struct OracleReport {
  enum class Kind { Equality, UpperBound };

  std::string quantity;
  double oracle_value = 0.0;  // reference value, or the bound for UpperBound
  double main_value = 0.0;
  double relative_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  Kind kind = Kind::Equality;

  /// |main - oracle| / max(|oracle|, scale_floor) <= tolerance. A floor of 1
  /// turns the check absolute for quantities of order one or smaller.
  static OracleReport equality(std::string quantity, double oracle_value, double main_value,
                               double tolerance, double scale_floor = 0.0);
  /// main <= bound, relative excess measured against max(|bound|, 1).
  static OracleReport upper_bound(std::string quantity, double bound, double main_value,
                                  double tolerance);
  /// A named boolean check.
  static OracleReport check(std::string quantity, bool ok);

  std::string line() const;
};

using Dense = std::vector<std::vector<double>>;

Dense to_dense(const MixingMatrix& w);

/// Threshold Jacobi sweeps on a copy, descending eigenvalues.
std::vector<double> eig_symmetric(const Dense& a, double tol = 1e-12);

struct Contraction {
  double ratio = 0.0;           // worst mean ratio over the random X tried
  double standard_error = 0.0;  // of that mean
};

using DenseSampler = std::function<Dense(Rng&)>;

/// Worst case over `directions` random Gaussian X (d = 4 columns) of the mean
/// of ||W X - Xbar||^2 / ||X - Xbar||^2 over `trials` sampled W.
Contraction mc_contraction(const DenseSampler& sample, std::size_t n, int trials, Rng& rng,
                           int directions = 32);
Contraction mc_contraction(const TopologySpec& spec, int trials, Rng& rng, int directions = 32);

/// Central differences of node `node`'s loss.
Vector fd_gradient(const Problem& problem, int node, const Vector& x, double step);

/// Central differences of the whole objective f.
Vector fd_full_gradient(const Problem& problem, const Vector& x, double step);

/// x_i <- sum_j w_ij (x_j - lr g_j), triple nested loop.
Dense reference_dsgd_step(const Dense& states, const Dense& w, const Dense& grads, double lr);

/// Xi^2 with scalar loops.
double reference_consensus_distance_sq(const Dense& states);

/// Logistic loss of one shard evaluated sample by sample.
double reference_logistic_loss(const Matrix& features, const Vector& labels, double l2,
                               const Vector& x);

/// Loose-tolerance row / column sum check.
OracleReport doubly_stochastic_report(const std::string& name, const Dense& w, double tol = 1e-12);

}  // namespace dsgd::oracle
