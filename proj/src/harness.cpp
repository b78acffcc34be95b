#include "dsgd/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "dsgd/errors.hpp"

namespace dsgd {

namespace fs = std::filesystem;

namespace {

std::ofstream open_output(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Sample standard deviation; 0 for a single run.
double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

void write_manifest(const ExperimentConfig& config, const fs::path& dir) {
  nlohmann::json doc;
  doc["experiment"] = std::string(to_string(config.kind));
  doc["config_hash"] = config.hash();
  doc["config"] = nlohmann::json::parse(config.canonical.empty() ? "{}" : config.canonical);
  auto out = open_output(dir / "manifest.json");
  out << doc.dump(2) << '\n';
}

// ------------------------------------------------------ consensus averaging

std::optional<std::int64_t> ConsensusCurve::steps_to(double threshold) const {
  const double target = threshold * threshold;
  for (std::size_t s = 0; s < xi_sq.size(); ++s)
    if (xi_sq[s] <= target) return static_cast<std::int64_t>(s);
  return std::nullopt;
}

ConsensusCurve consensus_averaging_run(TopologyKind topology, int n, std::uint64_t seed,
                                       const ConsensusAvgSettings& settings) {
  const TopologySpec spec{topology, n, seed};
  spec.validate();
  Rng init = Rng::stream(seed, StreamTag::Init, static_cast<std::uint64_t>(topology),
                         static_cast<std::uint64_t>(n));
  Matrix x(static_cast<std::size_t>(n), 1);
  for (int i = 0; i < n; ++i) x(static_cast<std::size_t>(i), 0) = init.uniform(settings.init_low, settings.init_high);

  const MixingSchedule schedule(spec, seed);
  ConsensusCurve curve{topology, n, seed, {consensus_distance_sq(x)}};
  const double stop = settings.stop_threshold * settings.stop_threshold;
  for (std::int64_t s = 0; s < settings.max_steps && curve.xi_sq.back() > stop; ++s) {
    x = schedule.at(s, 0).apply(x);
    curve.xi_sq.push_back(consensus_distance_sq(x));
  }
  return curve;
}

std::vector<ConsensusCurve> consensus_averaging_experiment(const ExperimentConfig& config) {
  config.validate();
  std::vector<ConsensusCurve> curves;
  for (std::uint64_t seed : config.seeds)
    for (TopologyKind kind : config.consensus_avg.topologies)
      for (int n : config.consensus_avg.sizes)
        curves.push_back(consensus_averaging_run(kind, n, seed, config.consensus_avg));
  return curves;
}

void write_consensus_averaging(const std::vector<ConsensusCurve>& curves, const ExperimentConfig& config,
                               const fs::path& dir) {
  write_manifest(config, dir);
  auto out = open_output(dir / "consensus_avg_curves.csv");
  out << "topology,n,seed,step,xi_sq\n";
  for (const auto& c : curves)
    for (std::size_t s = 0; s < c.xi_sq.size(); ++s)
      out << fmt::format("{},{},{},{},{:.17g}\n", to_string(c.topology), c.n, c.seed, s, c.xi_sq[s]);

  auto steps = open_output(dir / "consensus_avg_steps.csv");
  steps << "topology,n,seed,threshold,steps\n";
  for (const auto& c : curves)
    for (double th : config.consensus_avg.report_thresholds) {
      const auto k = c.steps_to(th);
      steps << fmt::format("{},{},{},{:.17g},{}\n", to_string(c.topology), c.n, c.seed, th,
                           k ? std::to_string(*k) : std::string("NA"));
    }
}

// ------------------------------------------------------------ D-SGD phases

double PhaseRun::final_loss() const {
  return trace.records.empty() ? std::nan("") : trace.records.back().loss_mean;
}

double PhaseRun::final_grad_norm_sq() const {
  return trace.records.empty() ? std::nan("") : trace.records.back().grad_norm_mean_sq;
}

double PhaseRun::mean_gossip() const {
  return trace.iterations == 0 ? 0.0
                               : static_cast<double>(trace.total_gossip_steps) /
                                     static_cast<double>(trace.iterations);
}

std::vector<PhaseSummary> summarize(const std::vector<PhaseRun>& runs) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const PhaseRun*>> groups;
  for (const auto& r : runs) {
    if (!groups.contains(r.label)) order.push_back(r.label);
    groups[r.label].push_back(&r);
  }
  std::vector<PhaseSummary> out;
  for (const auto& label : order) {
    std::vector<double> loss, grad, gossip;
    for (const PhaseRun* r : groups[label]) {
      loss.push_back(r->final_loss());
      grad.push_back(r->final_grad_norm_sq());
      gossip.push_back(r->mean_gossip());
    }
    out.push_back({label, static_cast<int>(loss.size()), mean_of(loss), std_of(loss), mean_of(grad),
                   std_of(grad), mean_of(gossip), std_of(gossip)});
  }
  return out;
}

namespace {

ControlPolicy pass2_policy(const PhaseSettings& settings, double value, double xi_max) {
  ControlPolicy p;
  switch (settings.control) {
    case ControlMode::ConstantTarget: p = ControlPolicy::constant_target(value, xi_max); break;
    case ControlMode::AdaptiveTarget: p = ControlPolicy::adaptive_target(value); break;
    case ControlMode::EfficientTheta: p = ControlPolicy::efficient_theta(value); break;
    default: throw ConfigError("pass 2 needs a controlled mode");
  }
  p.max_gossip = settings.max_gossip;
  return p;
}

std::string seed_file(std::uint64_t seed, std::string_view ext) {
  return fmt::format("trace_seed{}{}", seed, ext);
}

}  // namespace

PhaseExperiment dsgd_phase_experiment(const ExperimentConfig& config, const fs::path& dir) {
  config.validate();
  const bool write = !dir.empty();
  if (write) write_manifest(config, dir);
  const int phases = config.run.schedule.phases();
  const auto problem = make_problem(config.run.problem);

  PhaseExperiment result;
  auto execute = [&](std::string label, int dec_phase, std::vector<ControlPolicy> policies,
                     std::uint64_t seed) -> PhaseRun& {
    RunConfig rc = config.run;
    rc.seed = seed;
    rc.phase_policies = std::move(policies);
    const auto start = std::chrono::steady_clock::now();
    PhaseRun r{std::move(label), dec_phase, rc.phase_policies[dec_phase == 0 ? 0 : dec_phase - 1], seed,
               run(rc, *problem), 0.0};
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    r.trace.config_hash = config.hash();
    if (write) {
      const fs::path base = dir / r.label;
      auto csv = open_output(base / seed_file(seed, ".csv"));
      write_trace_csv(csv, r.trace);
      // Wall-clock lives outside the CSV so traces stay byte-reproducible.
      nlohmann::json meta{{"config_hash", r.trace.config_hash},
                          {"seed", seed},
                          {"label", r.label},
                          {"ema_beta", r.trace.ema_beta},
                          {"iterations", r.trace.iterations},
                          {"total_gossip_steps", r.trace.total_gossip_steps},
                          {"wall_seconds", r.wall_seconds}};
      auto m = open_output(base / seed_file(seed, ".meta.json"));
      m << meta.dump(2) << '\n';
    }
    result.runs.push_back(std::move(r));
    return result.runs.back();
  };

  for (std::uint64_t seed : config.seeds) {
    execute("all-reduce", 0, {ControlPolicy::all_reduce()}, seed);
    for (int k : config.phases.dec_phases) {
      const std::string prefix = fmt::format("dec-phase-{}", k);
      // Pass 1: Xi_max comes from normal (uncontrolled) decentralized training.
      const PhaseRun& pass1 = execute(prefix + "/uncontrolled", k,
                                      dec_phase_policies(phases, k, ControlPolicy::uncontrolled()), seed);
      std::vector<double> xi_max = pass1.trace.phase_xi_max;
      if (write) {
        const fs::path sidecar = dir / prefix / fmt::format("xi_max_seed{}.txt", seed);
        write_xi_max(sidecar, xi_max);
        xi_max = read_xi_max(sidecar);
      }
      for (double value : config.phases.values) {
        const ControlPolicy policy =
            pass2_policy(config.phases, value, xi_max.at(static_cast<std::size_t>(k - 1)));
        execute(prefix + "/" + policy.label(), k, dec_phase_policies(phases, k, policy), seed);
      }
    }
  }
  result.summary = summarize(result.runs);

  if (write) {
    auto runs = open_output(dir / "summary_runs.csv");
    runs << "label,dec_phase,seed,final_loss,final_grad_norm_sq,mean_gossip\n";
    for (const auto& r : result.runs)
      runs << fmt::format("{},{},{},{:.17g},{:.17g},{:.17g}\n", r.label, r.dec_phase, r.seed,
                          r.final_loss(), r.final_grad_norm_sq(), r.mean_gossip());
    auto agg = open_output(dir / "summary.csv");
    agg << "label,runs,loss_mean,loss_std,grad_norm_sq_mean,grad_norm_sq_std,gossip_mean,gossip_std\n";
    for (const auto& s : result.summary)
      agg << fmt::format("{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", s.label, s.runs,
                         s.loss_mean, s.loss_std, s.grad_norm_sq_mean, s.grad_norm_sq_std, s.gossip_mean,
                         s.gossip_std);
  }
  return result;
}

// ---------------------------------------------------------- spectral table

std::vector<SpectralRow> spectral_table(const ExperimentConfig& config) {
  config.validate();
  const std::uint64_t seed = config.seeds.front();
  std::vector<SpectralRow> rows;
  for (TopologyKind kind : config.spectral.topologies)
    for (int n : config.spectral.sizes) {
      const TopologySpec spec{kind, n, seed};
      spec.validate();
      Rng round_rng = Rng::stream(seed, StreamTag::Mixing, static_cast<std::uint64_t>(kind),
                                  static_cast<std::uint64_t>(n));
      const MixingMatrix w0 = build_mixing(spec, 0, round_rng);
      SpectralRow row{kind, n, "", 0.0, 0.0, 0.0, 0.0, 0};
      for (std::size_t i = 0; i < w0.n(); ++i) row.degree = std::max(row.degree, w0.degree(i));
      if (!spec.time_varying()) {
        row.quantity = "rho";
        row.value = spectral_gap(w0);
        row.p = row.p_lower = row.p_upper = parameter_from_gap(row.value);
      } else {
        Rng est = Rng::stream(seed, StreamTag::Estimate, static_cast<std::uint64_t>(kind),
                              static_cast<std::uint64_t>(n));
        const MixingEstimate e = estimate_mixing_parameter(spec, config.spectral.trials, est);
        row.quantity = "p_hat";
        row.value = row.p = e.p_hat;
        row.p_lower = e.lower;
        row.p_upper = e.upper;
      }
      rows.push_back(row);
    }
  return rows;
}

void write_spectral_table(const std::vector<SpectralRow>& rows, const ExperimentConfig& config,
                          const fs::path& dir) {
  write_manifest(config, dir);
  auto out = open_output(dir / "spectral_table.csv");
  out << "topology,n,quantity,value,p,p_lower,p_upper,degree\n";
  for (const auto& r : rows)
    out << fmt::format("{},{},{},{:.17g},{:.17g},{:.17g},{:.17g},{}\n", to_string(r.topology), r.n,
                       r.quantity, r.value, r.p, r.p_lower, r.p_upper, r.degree);
}

void write_verify_report(const std::vector<oracle::OracleReport>& reports, const ExperimentConfig& config,
                         const fs::path& dir) {
  write_manifest(config, dir);
  auto out = open_output(dir / "verify_report.csv");
  out << "quantity,kind,oracle_value,main_value,relative_error,tolerance,pass\n";
  for (const auto& r : reports) {
    std::string name = r.quantity;
    std::replace(name.begin(), name.end(), ',', ';');
    out << fmt::format("{},{},{:.17g},{:.17g},{:.17g},{:.17g},{}\n", name,
                       r.kind == oracle::OracleReport::Kind::UpperBound ? "upper_bound" : "equality",
                       r.oracle_value, r.main_value, r.relative_error, r.tolerance, r.pass ? 1 : 0);
  }
}

}  // namespace dsgd
