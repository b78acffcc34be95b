#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace dsgd {

/// One logged iteration. Row t describes step t: `lr` and the gradient
/// statistics (phi) belong to the iterate entering the step, the loss,
/// gradient norm and consensus quantities to the iterate leaving it.
struct MetricsRecord {
  std::int64_t iter = 0;
  int phase = 1;
  double lr = 0.0;
  double loss_mean = 0.0;          // f(xbar)
  double grad_norm_mean_sq = 0.0;  // ||grad f(xbar)||^2
  double xi_sq = 0.0;
  double theta_sq = 0.0;
  double phi_bar = 0.0;  // (1/n) sum_i ||grad F_i(x_i, xi_i)||
  double phi_sq = 0.0;   // (1/n) sum_i ||grad f_i(x_i)||^2
  double gamma_sq = 0.0;
  int gossip_steps = 0;
  std::uint64_t seed = 0;

  // In-memory only: the control target (NaN if none) and EMA(phi_bar).
  double control_target = 0.0;
  double phi_ema = 0.0;
};

struct MetricsTrace {
  std::vector<MetricsRecord> records;
  std::uint64_t seed = 0;
  double ema_beta = 0.9;
  std::string config_hash;
  /// Largest Xi (distance, not squared) per phase over every iteration,
  /// logged or not.
  std::vector<double> phase_xi_max;
  /// Gossip rounds summed over every iteration.
  std::int64_t total_gossip_steps = 0;
  std::int64_t iterations = 0;
};

inline constexpr const char* kTraceHeader =
    "iter,phase,lr,loss_mean,grad_norm_mean_sq,xi_sq,theta_sq,phi_bar,phi_sq,gamma_sq,"
    "gossip_steps,seed";

/// Fixed header, 17 significant digits per real.
void write_trace_csv(std::ostream& out, const MetricsTrace& trace);
std::string trace_csv(const MetricsTrace& trace);

}  // namespace dsgd
