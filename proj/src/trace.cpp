#include "dsgd/trace.hpp"

#include <ostream>

#include <fmt/format.h>

namespace dsgd {

std::string trace_csv(const MetricsTrace& trace) {
  std::string out = kTraceHeader;
  out += '\n';
  for (const MetricsRecord& r : trace.records) {
    out += fmt::format("{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{},{}\n",
                       r.iter, r.phase, r.lr, r.loss_mean, r.grad_norm_mean_sq, r.xi_sq, r.theta_sq,
                       r.phi_bar, r.phi_sq, r.gamma_sq, r.gossip_steps, r.seed);
  }
  return out;
}

void write_trace_csv(std::ostream& out, const MetricsTrace& trace) { out << trace_csv(trace); }

}  // namespace dsgd
