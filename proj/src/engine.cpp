#include "dsgd/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <fmt/format.h>

#include "dsgd/errors.hpp"

namespace dsgd {

std::string_view to_string(LrScheduleKind kind) {
  switch (kind) {
    case LrScheduleKind::StepDecay: return "step";
    case LrScheduleKind::HalfCosine: return "half-cosine";
    case LrScheduleKind::Constant: return "constant";
  }
  return "unknown";
}

LrScheduleKind parse_lr_schedule_kind(std::string_view name) {
  if (name == "step" || name == "step-decay") return LrScheduleKind::StepDecay;
  if (name == "half-cosine" || name == "cosine") return LrScheduleKind::HalfCosine;
  if (name == "constant") return LrScheduleKind::Constant;
  throw ConfigError(fmt::format("unknown learning-rate schedule '{}'", name));
}

void LrSchedule::validate() const {
  if (total_iters < 1) throw ConfigError("total_iters must be >= 1");
  if (!(base_lr >= 0.0)) throw ConfigError("base_lr must be non-negative");
  if (!(warmup_scale > 0.0)) throw ConfigError("warmup_scale must be positive");
  if (warmup_iters < 0 || warmup_iters >= total_iters)
    throw ConfigError("warmup_iters must lie in [0, total_iters)");
  double prev = 0.0;
  for (double d : decay_points) {
    if (!(d > prev) || !(d < 1.0))
      throw ConfigError("decay points must be strictly increasing inside (0, 1)");
    prev = d;
  }
}

std::vector<std::int64_t> LrSchedule::boundaries() const {
  std::vector<std::int64_t> out;
  for (double d : decay_points)
    out.push_back(static_cast<std::int64_t>(std::llround(d * static_cast<double>(total_iters))));
  return out;
}

int LrSchedule::phase_at(std::int64_t t) const {
  int phase = 1;
  for (std::int64_t b : boundaries())
    if (t >= b) ++phase;
  return phase;
}

double lr_at(const LrSchedule& schedule, std::int64_t t) {
  const double peak = schedule.peak();
  if (t < schedule.warmup_iters) {
    const double frac = static_cast<double>(t) / static_cast<double>(schedule.warmup_iters);
    return schedule.base_lr + (peak - schedule.base_lr) * frac;
  }
  switch (schedule.kind) {
    case LrScheduleKind::StepDecay: return peak * std::pow(10.0, -(schedule.phase_at(t) - 1));
    case LrScheduleKind::HalfCosine: {
      const double span = static_cast<double>(schedule.total_iters - schedule.warmup_iters);
      const double progress =
          std::clamp(static_cast<double>(t - schedule.warmup_iters) / span, 0.0, 1.0);
      return peak * (1.0 + std::cos(std::numbers::pi * progress)) / 2.0;
    }
    case LrScheduleKind::Constant: return peak;
  }
  return peak;
}

NodeStates NodeStates::identical(int nodes, std::span<const double> x0) {
  NodeStates s{Matrix(static_cast<std::size_t>(nodes), x0.size()), Matrix()};
  for (int i = 0; i < nodes; ++i) std::copy(x0.begin(), x0.end(), s.x.row(static_cast<std::size_t>(i)).begin());
  return s;
}

Matrix stochastic_gradients(const Problem& problem, const Matrix& x, std::uint64_t seed,
                            std::int64_t iteration) {
  Matrix g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    Rng rng = Rng::stream(seed, StreamTag::Gradient, i, static_cast<std::uint64_t>(iteration));
    problem.stochastic_grad(static_cast<int>(i), x.row(i), rng, g.row(i));
  }
  return g;
}

void local_update(NodeStates& states, const Matrix& grads, double lr, double momentum) {
  if (grads.rows() != states.x.rows() || grads.cols() != states.x.cols())
    throw DimensionError("gradient matrix does not match node states");
  if (momentum == 0.0) {
    auto x = states.x.data();
    auto g = grads.data();
    for (std::size_t k = 0; k < x.size(); ++k) x[k] -= lr * g[k];
    return;
  }
  if (states.momentum.rows() != states.x.rows() || states.momentum.cols() != states.x.cols())
    states.momentum = Matrix(states.x.rows(), states.x.cols());
  auto x = states.x.data();
  auto g = grads.data();
  auto buf = states.momentum.data();
  for (std::size_t k = 0; k < x.size(); ++k) {
    buf[k] = momentum * buf[k] + g[k];
    x[k] -= lr * (g[k] + momentum * buf[k]);
  }
}

void check_divergence(const Matrix& x, std::int64_t iteration) {
  constexpr double kLimit = 1e12;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t c = 0; c < x.cols(); ++c) {
      const double v = x(i, c);
      if (!std::isfinite(v) || std::abs(v) > kLimit)
        throw DivergenceError(iteration, fmt::format("iteration {}: node {} coordinate {} diverged ({})",
                                                     iteration, i, c, v));
    }
}

NodeStates dsgd_step(NodeStates states, const Problem& problem, const MixingMatrix& w, double lr,
                     const StepOptions& options) {
  const Matrix grads = stochastic_gradients(problem, states.x, options.seed, options.iteration);
  local_update(states, grads, lr, options.momentum);
  states.x = w.apply(states.x);
  check_divergence(states.x, options.iteration);
  return states;
}

NodeStates csgd_step(NodeStates states, const Problem& problem, double lr, const StepOptions& options) {
  for (std::size_t i = 1; i < states.x.rows(); ++i)
    if (!std::equal(states.x.row(i).begin(), states.x.row(i).end(), states.x.row(0).begin()))
      throw ConfigError("csgd_step requires identical node states");
  const Matrix grads = stochastic_gradients(problem, states.x, options.seed, options.iteration);
  Matrix averaged(grads.rows(), grads.cols());
  const Vector mean = row_mean(grads);
  for (std::size_t i = 0; i < averaged.rows(); ++i)
    std::copy(mean.begin(), mean.end(), averaged.row(i).begin());
  local_update(states, averaged, lr, options.momentum);
  check_divergence(states.x, options.iteration);
  return states;
}

void RunConfig::validate() const {
  problem.validate();
  topology.validate();
  schedule.validate();
  if (problem.nodes != topology.n)
    throw ConfigError(fmt::format("problem has {} nodes but topology has {}", problem.nodes, topology.n));
  if (phase_policies.empty()) throw ConfigError("at least one phase policy is required");
  if (phase_policies.size() != 1 && static_cast<int>(phase_policies.size()) != schedule.phases())
    throw ConfigError(fmt::format("{} phase policies given for {} phases", phase_policies.size(),
                                  schedule.phases()));
  for (const ControlPolicy& p : phase_policies) p.validate();
  if (local_steps < 1) throw ConfigError("local_steps must be >= 1");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (!(ema_beta >= 0.0 && ema_beta < 1.0)) throw ConfigError("ema_beta must lie in [0, 1)");
}

const ControlPolicy& RunConfig::policy_for_phase(int phase) const {
  if (phase_policies.size() == 1) return phase_policies.front();
  return phase_policies.at(static_cast<std::size_t>(phase - 1));
}

std::vector<ControlPolicy> dec_phase_policies(int phases, int k, const ControlPolicy& policy) {
  if (k < 1 || k > phases) throw ConfigError(fmt::format("dec-phase-{} outside 1..{}", k, phases));
  std::vector<ControlPolicy> out(static_cast<std::size_t>(phases), ControlPolicy::all_reduce());
  out[static_cast<std::size_t>(k - 1)] = policy;
  return out;
}

double control_mixing_parameter(const TopologySpec& topology, std::uint64_t seed, int trials) {
  topology.validate();
  if (!topology.time_varying()) {
    Rng unused(0);
    return build_mixing(topology, 0, unused).parameter()->value;
  }
  Rng rng = Rng::stream(seed, StreamTag::Estimate, topology.seed);
  return estimate_mixing_parameter(topology, trials, rng).lower;
}

MetricsTrace run(const RunConfig& config) {
  config.validate();
  const auto problem = make_problem(config.problem);
  return run(config, *problem);
}

MetricsTrace run(const RunConfig& config, const Problem& problem) {
  config.validate();
  if (problem.nodes() != config.topology.n)
    throw ConfigError("problem node count differs from topology size");
  const int n = problem.nodes();
  const auto d = static_cast<std::size_t>(problem.dim());

  Vector x0;
  if (config.x0) {
    if (config.x0->size() != d) throw DimensionError("x0 has the wrong dimension");
    x0 = *config.x0;
  } else {
    Rng init = Rng::stream(config.seed, StreamTag::Init);
    if (problem.kind() == ProblemKind::TinyMlp) {
      x0 = TinyMlpProblem::initial_parameters(init);
    } else {
      x0.resize(d);
      for (double& v : x0) v = config.init_scale * init.normal();
    }
  }

  Rng probe_rng = Rng::stream(config.seed, StreamTag::Probe);
  const std::vector<Vector> probes = default_probe_points(problem, probe_rng, x0);
  const ProblemConstants problem_constants = constants(problem, probes);

  const MixingSchedule mixing(config.topology, config.seed);
  bool needs_p = false;
  for (const ControlPolicy& p : config.phase_policies)
    needs_p = needs_p || p.mode == ControlMode::EfficientTheta;
  const double p = needs_p ? control_mixing_parameter(config.topology, config.seed, config.estimate_trials)
                           : 1.0;

  NodeStates states = NodeStates::identical(n, x0);
  EmaTracker ema(config.ema_beta);
  const int phases = config.schedule.phases();
  MetricsTrace trace;
  trace.seed = config.seed;
  trace.ema_beta = config.ema_beta;
  trace.phase_xi_max.assign(static_cast<std::size_t>(phases), 0.0);

  Vector local(d);
  int current_phase = 0;
  const std::int64_t total = config.schedule.total_iters;
  for (std::int64_t t = 0; t < total; ++t) {
    const double lr = lr_at(config.schedule, t);
    const int phase = config.schedule.phase_at(t);
    if (phase != current_phase) {
      ema.reset();
      current_phase = phase;
    }
    const ControlPolicy& policy = config.policy_for_phase(phase);

    const Matrix grads = stochastic_gradients(problem, states.x, config.seed, t);
    double phi_bar = 0.0;
    double phi_sq = 0.0;
    for (int i = 0; i < n; ++i) {
      phi_bar += std::sqrt(squared_norm(grads.row(static_cast<std::size_t>(i))));
      problem.local_grad(i, states.x.row(static_cast<std::size_t>(i)), local);
      phi_sq += squared_norm(local);
    }
    phi_bar /= n;
    phi_sq /= n;
    const double phi_ema = policy.uses_ema() ? ema.update(phi_bar) : ema.value().value_or(phi_bar);

    local_update(states, grads, lr, config.momentum);

    ControlOutcome outcome{0, std::numeric_limits<double>::quiet_NaN(), 0.0};
    if ((t + 1) % config.local_steps == 0) {
      outcome = control_gossip(states.x, mixing, policy, ControlContext{t, phi_ema, p});
    } else {
      outcome.xi_sq = consensus_distance_sq(states.x);
    }
    check_divergence(states.x, t);
    trace.total_gossip_steps += outcome.gossip_steps;
    trace.iterations = t + 1;

    double& phase_max = trace.phase_xi_max[static_cast<std::size_t>(phase - 1)];
    phase_max = std::max(phase_max, std::sqrt(outcome.xi_sq));

    if (t % config.log_every != 0 && t + 1 != total) continue;
    const Vector mean = states.mean();
    const Vector g = problem.grad(mean);
    MetricsRecord r;
    r.iter = t;
    r.phase = phase;
    r.lr = lr;
    r.loss_mean = problem.loss(mean);
    r.grad_norm_mean_sq = squared_norm(g);
    r.xi_sq = outcome.xi_sq;
    r.theta_sq = local_estimator(states.x, mixing.at(t, 0)).theta_sq;
    r.phi_bar = phi_bar;
    r.phi_sq = phi_sq;
    r.gamma_sq = problem_constants.L > 0.0
                     ? critical_distance_sq(r.grad_norm_mean_sq, lr, problem_constants, n)
                     : 0.0;
    r.gossip_steps = outcome.gossip_steps;
    r.seed = config.seed;
    r.control_target = outcome.target;
    r.phi_ema = phi_ema;
    trace.records.push_back(r);
  }
  return trace;
}

}  // namespace dsgd
