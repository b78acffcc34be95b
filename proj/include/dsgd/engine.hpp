#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "dsgd/consensus.hpp"
#include "dsgd/linalg.hpp"
#include "dsgd/problems.hpp"
#include "dsgd/topology.hpp"
#include "dsgd/trace.hpp"

namespace dsgd {

enum class LrScheduleKind { StepDecay, HalfCosine, Constant };

std::string_view to_string(LrScheduleKind kind);
LrScheduleKind parse_lr_schedule_kind(std::string_view name);

/// Linear warmup from base_lr to base_lr * warmup_scale, then step decay
/// (divide by 10 at each decay point), half cosine, or constant. Decay points
/// are fractions of total_iters and also delimit the training phases.
struct LrSchedule {
  LrScheduleKind kind = LrScheduleKind::StepDecay;
  double base_lr = 0.1;
  double warmup_scale = 1.0;
  std::int64_t warmup_iters = 0;
  std::vector<double> decay_points;
  std::int64_t total_iters = 1000;

  void validate() const;
  double peak() const noexcept { return base_lr * warmup_scale; }
  /// Iteration index at which each phase after the first starts.
  std::vector<std::int64_t> boundaries() const;
  int phases() const noexcept { return static_cast<int>(decay_points.size()) + 1; }
  /// 1-based phase of iteration t.
  int phase_at(std::int64_t t) const;
};

double lr_at(const LrSchedule& schedule, std::int64_t t);

/// Stacked node parameters, one row per node, plus optional per-node
/// Nesterov buffers (never communicated).
struct NodeStates {
  Matrix x;
  Matrix momentum;

  static NodeStates identical(int nodes, std::span<const double> x0);
  int nodes() const noexcept { return static_cast<int>(x.rows()); }
  int dim() const noexcept { return static_cast<int>(x.cols()); }
  Vector mean() const { return row_mean(x); }
};

struct StepOptions {
  std::uint64_t seed = 1;
  std::int64_t iteration = 0;
  double momentum = 0.0;  // Nesterov coefficient, 0 disables
};

/// grad F_i(x_i, xi_i) for every node; node i draws from the stream keyed on
/// (seed, i, iteration), so results do not depend on evaluation order.
Matrix stochastic_gradients(const Problem& problem, const Matrix& x, std::uint64_t seed,
                            std::int64_t iteration);

/// x_i <- x_i - lr * d_i with d_i the (Nesterov) update direction.
void local_update(NodeStates& states, const Matrix& grads, double lr, double momentum);

/// Throws DivergenceError if any parameter is non-finite or exceeds 1e12.
void check_divergence(const Matrix& x, std::int64_t iteration);

/// x_i <- sum_j w_ij (x_j - lr grad F_j(x_j, xi_j)).
NodeStates dsgd_step(NodeStates states, const Problem& problem, const MixingMatrix& w, double lr,
                     const StepOptions& options);

/// x <- x - lr (1/n) sum_i grad F_i(x, xi_i). Nodes must be identical.
NodeStates csgd_step(NodeStates states, const Problem& problem, double lr, const StepOptions& options);

struct RunConfig {
  ProblemSpec problem;
  TopologySpec topology;
  LrSchedule schedule;
  /// One policy per phase; a single entry applies to every phase.
  std::vector<ControlPolicy> phase_policies{ControlPolicy::uncontrolled()};
  double momentum = 0.0;
  int local_steps = 1;  // gossip every `local_steps` iterations
  std::uint64_t seed = 1;
  double init_scale = 1.0;
  int log_every = 1;
  double ema_beta = 0.9;
  int estimate_trials = 1000;  // p estimate for randomized topologies
  std::optional<Vector> x0;    // identical start for every node

  void validate() const;
  const ControlPolicy& policy_for_phase(int phase) const;
};

/// Policies for a "dec-phase-k" run: phase k uses `policy`, others all-reduce.
std::vector<ControlPolicy> dec_phase_policies(int phases, int k, const ControlPolicy& policy);

/// Parameter p used by control and theory checks: exact for fixed
/// topologies, the conservative Monte-Carlo bound otherwise.
double control_mixing_parameter(const TopologySpec& topology, std::uint64_t seed, int trials);

MetricsTrace run(const RunConfig& config);
MetricsTrace run(const RunConfig& config, const Problem& problem);

}  // namespace dsgd
