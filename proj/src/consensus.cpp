#include "dsgd/consensus.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>

#include "dsgd/errors.hpp"

namespace dsgd {

double consensus_distance_sq(const Matrix& x) {
  if (x.rows() == 0) return 0.0;
  const Vector mean = row_mean(x);
  double sum = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    for (std::size_t c = 0; c < x.cols(); ++c) sum += (r[c] - mean[c]) * (r[c] - mean[c]);
  }
  return sum / static_cast<double>(x.rows());
}

LocalEstimate local_estimator(const Matrix& x, const MixingMatrix& w) {
  if (x.rows() != w.n()) throw DimensionError("local_estimator: state rows differ from matrix size");
  LocalEstimate out;
  out.per_node.resize(x.rows());
  Vector neighbourhood(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    std::fill(neighbourhood.begin(), neighbourhood.end(), 0.0);
    for (std::size_t j = 0; j < x.rows(); ++j) {
      const double wij = w(i, j);
      if (wij == 0.0) continue;
      auto r = x.row(j);
      for (std::size_t c = 0; c < x.cols(); ++c) neighbourhood[c] += wij * r[c];
    }
    double theta = 0.0;
    auto own = x.row(i);
    for (std::size_t c = 0; c < x.cols(); ++c)
      theta += (neighbourhood[c] - own[c]) * (neighbourhood[c] - own[c]);
    out.per_node[i] = theta;
    out.theta_sq += theta;
  }
  out.theta_sq /= static_cast<double>(x.rows());
  return out;
}

double critical_distance_sq(double grad_norm_sq, double lr, const ProblemConstants& constants, int n) {
  if (!(constants.L > 0.0)) throw ConfigError("critical distance needs L > 0");
  if (n < 1) throw ConfigError("critical distance needs n >= 1");
  const double L = constants.L;
  return lr * constants.sigma2 / (L * n) + grad_norm_sq / (8.0 * L * L);
}

double typical_distance_bound(double prev_phi_sq, double gamma, double p, double sigma2) {
  if (!(p > 0.0) || p > 1.0) throw ConfigError("typical distance bound needs p in (0, 1]");
  return 12.0 * (1.0 - p) * gamma * gamma * (prev_phi_sq / (p * p) + sigma2 / p);
}

double distance_recursion_rhs(double xi_sq, double phi_sq, double gamma, double p, double sigma2) {
  if (!(p > 0.0) || p > 1.0) throw ConfigError("distance recursion needs p in (0, 1]");
  return (1.0 - p / 2.0) * xi_sq + 3.0 * (1.0 - p) * gamma * gamma / p * (phi_sq + p * sigma2);
}

SufficientConditions sufficient_conditions(const ProblemConstants& constants, int n, double gamma,
                                           double p, double C) {
  if (!(constants.L > 0.0)) throw ConfigError("sufficient conditions need L > 0");
  if (!(p > 0.0) || p > 1.0) throw ConfigError("sufficient conditions need p in (0, 1]");
  const double L = constants.L;
  SufficientConditions out;
  out.C = C;
  out.max_stepsize = p / (4.0 * n * L * C);
  out.stepsize_ok = gamma <= out.max_stepsize;
  out.max_one_minus_p = 1.0 / (5.0 * C * (1.0 + gamma * L * n));
  out.mixing_ok = (1.0 - p) <= out.max_one_minus_p;
  out.gossip_rounds = std::max(1, static_cast<int>(std::ceil(std::log1p(gamma * L * n) / p)));
  return out;
}

// ----------------------------------------------------------------- control

std::string_view to_string(ControlMode mode) {
  switch (mode) {
    case ControlMode::AllReduce: return "all-reduce";
    case ControlMode::Uncontrolled: return "uncontrolled";
    case ControlMode::ConstantTarget: return "constant";
    case ControlMode::AdaptiveTarget: return "adaptive";
    case ControlMode::EfficientTheta: return "efficient";
  }
  return "unknown";
}

ControlMode parse_control_mode(std::string_view name) {
  if (name == "all-reduce" || name == "allreduce") return ControlMode::AllReduce;
  if (name == "uncontrolled" || name == "gossip") return ControlMode::Uncontrolled;
  if (name == "constant") return ControlMode::ConstantTarget;
  if (name == "adaptive") return ControlMode::AdaptiveTarget;
  if (name == "efficient" || name == "efficient-theta") return ControlMode::EfficientTheta;
  throw ConfigError(fmt::format("unknown control mode '{}'", name));
}

void ControlPolicy::validate() const {
  if (max_gossip < 1) throw ConfigError("max_gossip must be >= 1");
  switch (mode) {
    case ControlMode::ConstantTarget:
      if (factor < 0.0 || factor > 1.0) throw ConfigError("constant-target factor must lie in [0, 1]");
      if (xi_max < 0.0) throw ConfigError("xi_max must be non-negative");
      break;
    case ControlMode::AdaptiveTarget:
      if (!(scale > 0.0)) throw ConfigError("adaptive-target scale must be > 0");
      break;
    case ControlMode::EfficientTheta:
      if (!(q > 0.0)) throw ConfigError("efficient-theta q must be > 0");
      break;
    default: break;
  }
}

std::string ControlPolicy::label() const {
  switch (mode) {
    case ControlMode::ConstantTarget: return fmt::format("constant-{:g}", factor);
    case ControlMode::AdaptiveTarget: return fmt::format("adaptive-{:g}", scale);
    case ControlMode::EfficientTheta: return fmt::format("efficient-{:g}", q);
    default: return std::string(to_string(mode));
  }
}

double EmaTracker::update(double sample) {
  value_ = value_ ? beta_ * *value_ + (1.0 - beta_) * sample : sample;
  return *value_;
}

void exact_average(Matrix& x) {
  const Vector mean = row_mean(x);
  for (std::size_t i = 0; i < x.rows(); ++i) std::copy(mean.begin(), mean.end(), x.row(i).begin());
}

namespace {

ControlOutcome gossip_until(Matrix& x, const MixingSchedule& schedule, const ControlPolicy& policy,
                            const ControlContext& context, double target) {
  if (target <= 0.0) {
    // A zero target can only be met by exact averaging.
    exact_average(x);
    return {1, target, consensus_distance_sq(x)};
  }
  int steps = 0;
  double xi_sq = 0.0;
  for (;;) {
    x = schedule.at(context.iteration, steps).apply(x);
    ++steps;
    xi_sq = consensus_distance_sq(x);
    if (std::sqrt(xi_sq) <= target) break;
    if (steps >= policy.max_gossip)
      throw UnreachableTargetError(
          context.iteration, std::sqrt(xi_sq), target,
          fmt::format("iteration {}: consensus target {:.6g} not reached after {} gossip steps "
                      "(Xi = {:.6g})",
                      context.iteration, target, steps, std::sqrt(xi_sq)));
  }
  return {steps, target, xi_sq};
}

ControlOutcome gossip_until_theta(Matrix& x, const MixingSchedule& schedule,
                                  const ControlPolicy& policy, const ControlContext& context) {
  const double target = policy.q * context.phi_ema;
  x = schedule.at(context.iteration, 0).apply(x);
  int steps = 1;
  for (;;) {
    // Theta uses the neighbourhood averages the next round would produce;
    // Xi itself is never consulted here.
    const MixingMatrix w = schedule.at(context.iteration, steps);
    const LocalEstimate estimate = local_estimator(x, w);
    if (std::sqrt(estimate.theta_sq) < target) break;
    if (steps >= policy.max_gossip) {
      const double xi = std::sqrt(consensus_distance_sq(x));
      throw UnreachableTargetError(
          context.iteration, xi, target,
          fmt::format("iteration {}: Theta target {:.6g} not reached after {} gossip steps "
                      "(Xi = {:.6g})",
                      context.iteration, target, steps, xi));
    }
    x = w.apply(x);
    ++steps;
  }
  return {steps, target, consensus_distance_sq(x)};
}

}  // namespace

ControlOutcome control_gossip(Matrix& x, const MixingSchedule& schedule, const ControlPolicy& policy,
                              const ControlContext& context) {
  policy.validate();
  constexpr double kNone = std::numeric_limits<double>::quiet_NaN();
  switch (policy.mode) {
    case ControlMode::AllReduce:
      exact_average(x);
      return {1, kNone, consensus_distance_sq(x)};
    case ControlMode::Uncontrolled:
      x = schedule.at(context.iteration, 0).apply(x);
      return {1, kNone, consensus_distance_sq(x)};
    case ControlMode::ConstantTarget:
      return gossip_until(x, schedule, policy, context, policy.factor * policy.xi_max);
    case ControlMode::AdaptiveTarget:
      return gossip_until(x, schedule, policy, context, policy.scale * context.phi_ema);
    case ControlMode::EfficientTheta:
      return gossip_until_theta(x, schedule, policy, context);
  }
  throw ConfigError("unhandled control mode");
}

// ---------------------------------------------------------- Xi_max sidecar

void write_xi_max(const std::filesystem::path& path, const std::vector<double>& xi_max) {
  std::ofstream out(path);
  if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
  for (std::size_t k = 0; k < xi_max.size(); ++k) out << fmt::format("{} {:.17g}\n", k + 1, xi_max[k]);
}

std::vector<double> read_xi_max(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read Xi_max sidecar '{}'", path.string()));
  std::vector<double> values;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::size_t phase = 0;
    double value = 0.0;
    if (!(fields >> phase >> value) || phase != values.size() + 1)
      throw ConfigError(fmt::format("malformed Xi_max line '{}' in '{}'", line, path.string()));
    values.push_back(value);
  }
  return values;
}

}  // namespace dsgd
