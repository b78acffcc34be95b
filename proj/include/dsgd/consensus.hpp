#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dsgd/linalg.hpp"
#include "dsgd/problems.hpp"
#include "dsgd/topology.hpp"

namespace dsgd {

// ------------------------------------------------------------ measurements

/// Xi^2 = (1/n) sum_i ||xbar - x_i||^2.
double consensus_distance_sq(const Matrix& x);

struct LocalEstimate {
  double theta_sq = 0.0;        // (1/n) sum_i theta_i
  std::vector<double> per_node; // theta_i = ||sum_j w_ij x_j - x_i||^2
};

/// Neighbourhood disagreement; node i only reads rows j with w_ij != 0.
LocalEstimate local_estimator(const Matrix& x, const MixingMatrix& w);

struct ConsensusStats {
  double xi_sq = 0.0;
  double theta_sq = 0.0;
  double gamma_sq = 0.0;
  double phi_sq = 0.0;
  double phi_bar = 0.0;
};

/// Critical consensus distance Gamma^2 = lr sigma^2 / (L n) + ||grad f(xbar)||^2 / (8 L^2).
double critical_distance_sq(double grad_norm_sq, double lr, const ProblemConstants& constants, int n);

/// 12 (1-p) gamma^2 (phi^2 / p^2 + sigma^2 / p).
double typical_distance_bound(double prev_phi_sq, double gamma, double p, double sigma2);

/// One-step recursion (1 - p/2) Xi_t^2 + 3 (1-p) gamma^2 / p (phi_t^2 + p sigma^2).
double distance_recursion_rhs(double xi_sq, double phi_sq, double gamma, double p, double sigma2);

struct SufficientConditions {
  double C = 2.0;
  double max_stepsize = 0.0;   // p / (4 n L C)
  bool stepsize_ok = false;    // gamma <= max_stepsize
  double max_one_minus_p = 0.0;// 1 / (5 C (1 + gamma L n))
  bool mixing_ok = false;      // 1 - p <= max_one_minus_p
  int gossip_rounds = 1;       // ceil(ln(1 + gamma L n) / p), at least 1
};

SufficientConditions sufficient_conditions(const ProblemConstants& constants, int n, double gamma,
                                           double p, double C = 2.0);

// ----------------------------------------------------------------- control

enum class ControlMode { AllReduce, Uncontrolled, ConstantTarget, AdaptiveTarget, EfficientTheta };

std::string_view to_string(ControlMode mode);
ControlMode parse_control_mode(std::string_view name);

struct ControlPolicy {
  ControlMode mode = ControlMode::Uncontrolled;
  double factor = 1.0;  // ConstantTarget: target Xi = factor * xi_max
  double xi_max = 0.0;  // ConstantTarget: from an uncontrolled pass
  double scale = 1.0;   // AdaptiveTarget: target Xi = scale * EMA(phi_bar)
  double q = 1.0;       // EfficientTheta: gossip until Theta < q * EMA(phi_bar)
  int max_gossip = 1000;

  static ControlPolicy all_reduce() { return {ControlMode::AllReduce}; }
  static ControlPolicy uncontrolled() { return {ControlMode::Uncontrolled}; }
  static ControlPolicy constant_target(double factor, double xi_max = 0.0) {
    ControlPolicy p{ControlMode::ConstantTarget};
    p.factor = factor;
    p.xi_max = xi_max;
    return p;
  }
  static ControlPolicy adaptive_target(double scale) {
    ControlPolicy p{ControlMode::AdaptiveTarget};
    p.scale = scale;
    return p;
  }
  static ControlPolicy efficient_theta(double q) {
    ControlPolicy p{ControlMode::EfficientTheta};
    p.q = q;
    return p;
  }

  void validate() const;
  bool decentralized() const noexcept { return mode != ControlMode::AllReduce; }
  bool uses_ema() const noexcept {
    return mode == ControlMode::AdaptiveTarget || mode == ControlMode::EfficientTheta;
  }
  std::string label() const;
};

/// Running EMA of the average local gradient norm, reset per phase.
class EmaTracker {
 public:
  explicit EmaTracker(double beta = 0.9) : beta_(beta) {}
  double update(double sample);
  void reset() { value_.reset(); }
  std::optional<double> value() const noexcept { return value_; }
  double beta() const noexcept { return beta_; }

 private:
  double beta_;
  std::optional<double> value_;
};

struct ControlContext {
  std::int64_t iteration = 0;
  double phi_ema = 0.0;  // EMA(phi_bar) for adaptive / efficient modes
  double p = 1.0;        // mixing parameter of the control matrix (EfficientTheta)
};

struct ControlOutcome {
  int gossip_steps = 0;
  double target = 0.0;  // distance target (Xi for targets, Theta for EfficientTheta); NaN if none
  double xi_sq = 0.0;   // exact Xi^2 of the returned states
};

/// Communication for one iteration: the D-SGD round plus any repeated gossip
/// the policy needs. Gossip round k of the iteration uses schedule.at(t, k).
/// Throws UnreachableTargetError once policy.max_gossip rounds are spent.
ControlOutcome control_gossip(Matrix& x, const MixingSchedule& schedule, const ControlPolicy& policy,
                              const ControlContext& context);

/// Replace every row with the exact average (all-reduce).
void exact_average(Matrix& x);

// ---------------------------------------------------------- Xi_max sidecar

/// "phase_index xi_max" per line, 17 significant digits, phases 1-based.
void write_xi_max(const std::filesystem::path& path, const std::vector<double>& xi_max);
std::vector<double> read_xi_max(const std::filesystem::path& path);

}  // namespace dsgd
