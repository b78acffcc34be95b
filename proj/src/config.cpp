#include "dsgd/config.hpp"

#include <fstream>
#include <initializer_list>

#include <fmt/format.h>

#include "dsgd/errors.hpp"

namespace dsgd {

using nlohmann::json;

std::string_view to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::ConsensusAveraging: return "consensus-avg";
    case ExperimentKind::DsgdPhases: return "dsgd-phases";
    case ExperimentKind::SpectralTable: return "spectral-table";
    case ExperimentKind::Verify: return "verify";
  }
  return "unknown";
}

ExperimentKind parse_experiment_kind(std::string_view name) {
  if (name == "consensus-avg") return ExperimentKind::ConsensusAveraging;
  if (name == "dsgd-phases") return ExperimentKind::DsgdPhases;
  if (name == "spectral-table") return ExperimentKind::SpectralTable;
  if (name == "verify") return ExperimentKind::Verify;
  throw ConfigError(fmt::format("unknown experiment '{}'", name));
}

namespace {

// Every object is closed: a misspelt key is an error, not a silent default.
void require_keys(const json& obj, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ConfigError(fmt::format("'{}' must be an object", where));
  for (const auto& [key, _] : obj.items()) {
    bool known = false;
    for (std::string_view a : allowed) known = known || key == a;
    if (!known) throw ConfigError(fmt::format("unknown key '{}' in '{}'", key, where));
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("bad value for '{}': {}", key, e.what()));
  }
}

std::vector<TopologyKind> read_topologies(const json& obj, const char* key,
                                          std::vector<TopologyKind> fallback) {
  if (!obj.contains(key)) return fallback;
  std::vector<std::string> names;
  read(obj, key, names);
  std::vector<TopologyKind> out;
  for (const auto& name : names) out.push_back(parse_topology_kind(name));
  return out;
}

ProblemSpec parse_problem(const json& obj) {
  require_keys(obj, "problem", {"kind", "dim", "nodes", "samples_per_node", "noise_scale",
                                "heterogeneity", "batch_size", "l2", "data_seed"});
  ProblemSpec s;
  std::string kind = std::string(to_string(s.kind));
  read(obj, "kind", kind);
  s.kind = parse_problem_kind(kind);
  read(obj, "dim", s.dim);
  read(obj, "nodes", s.nodes);
  read(obj, "samples_per_node", s.samples_per_node);
  read(obj, "noise_scale", s.noise_scale);
  read(obj, "heterogeneity", s.heterogeneity);
  read(obj, "batch_size", s.batch_size);
  read(obj, "l2", s.l2);
  read(obj, "data_seed", s.data_seed);
  return s;
}

TopologySpec parse_topology(const json& obj, int nodes) {
  require_keys(obj, "topology", {"kind", "n", "seed"});
  TopologySpec s;
  s.n = nodes;
  std::string kind = std::string(to_string(s.kind));
  read(obj, "kind", kind);
  s.kind = parse_topology_kind(kind);
  read(obj, "n", s.n);
  read(obj, "seed", s.seed);
  return s;
}

LrSchedule parse_schedule(const json& obj) {
  require_keys(obj, "schedule",
               {"kind", "base_lr", "warmup_scale", "warmup_iters", "decay_points", "total_iters"});
  LrSchedule s;
  std::string kind = std::string(to_string(s.kind));
  read(obj, "kind", kind);
  s.kind = parse_lr_schedule_kind(kind);
  read(obj, "base_lr", s.base_lr);
  read(obj, "warmup_scale", s.warmup_scale);
  read(obj, "warmup_iters", s.warmup_iters);
  read(obj, "decay_points", s.decay_points);
  read(obj, "total_iters", s.total_iters);
  return s;
}

void parse_training(const json& obj, RunConfig& run) {
  require_keys(obj, "training", {"momentum", "local_steps", "init_scale", "log_every", "ema_beta",
                                 "estimate_trials", "policy"});
  read(obj, "momentum", run.momentum);
  read(obj, "local_steps", run.local_steps);
  read(obj, "init_scale", run.init_scale);
  read(obj, "log_every", run.log_every);
  read(obj, "ema_beta", run.ema_beta);
  read(obj, "estimate_trials", run.estimate_trials);
  if (obj.contains("policy")) {
    std::string mode;
    read(obj, "policy", mode);
    run.phase_policies = {ControlPolicy{parse_control_mode(mode)}};
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  switch (kind) {
    case ExperimentKind::DsgdPhases: {
      run.validate();
      if (phases.dec_phases.empty()) throw ConfigError("phases.dec_phases is empty");
      for (int k : phases.dec_phases)
        if (k < 1 || k > run.schedule.phases())
          throw ConfigError(fmt::format("dec phase {} outside 1..{}", k, run.schedule.phases()));
      if (phases.control == ControlMode::AllReduce || phases.control == ControlMode::Uncontrolled)
        throw ConfigError("phases.control must be constant, adaptive or efficient");
      if (phases.values.empty()) throw ConfigError("phases.values is empty");
      for (double v : phases.values) {
        // A zero factor means exact averaging; scales and q must be positive.
        const bool ok = phases.control == ControlMode::ConstantTarget ? v >= 0.0 && v <= 1.0 : v > 0.0;
        if (!ok) throw ConfigError(fmt::format("phases.values entry {} is out of range", v));
      }
      if (phases.max_gossip < 1) throw ConfigError("phases.max_gossip must be >= 1");
      break;
    }
    case ExperimentKind::ConsensusAveraging: {
      const auto& c = consensus_avg;
      if (c.topologies.empty() || c.sizes.empty()) throw ConfigError("consensus_avg needs topologies and sizes");
      for (int n : c.sizes)
        if (n < 2) throw ConfigError("consensus_avg sizes must be >= 2");
      if (!(c.init_high > c.init_low)) throw ConfigError("consensus_avg init range is empty");
      if (!(c.stop_threshold > 0.0)) throw ConfigError("consensus_avg stop_threshold must be positive");
      for (double t : c.report_thresholds)
        if (!(t > 0.0)) throw ConfigError("report thresholds must be positive");
      if (c.max_steps < 1) throw ConfigError("consensus_avg max_steps must be >= 1");
      break;
    }
    case ExperimentKind::SpectralTable: {
      if (spectral.topologies.empty() || spectral.sizes.empty())
        throw ConfigError("spectral needs topologies and sizes");
      for (int n : spectral.sizes)
        if (n < 2) throw ConfigError("spectral sizes must be >= 2");
      if (spectral.trials < 100) throw ConfigError("spectral trials must be >= 100");
      break;
    }
    case ExperimentKind::Verify: {
      if (verify.lemma_configs < 1) throw ConfigError("verify.lemma_configs must be >= 1");
      if (!verify.inject_fault.empty() && verify.inject_fault != "row-sum")
        throw ConfigError(fmt::format("unknown fault '{}'", verify.inject_fault));
      break;
    }
  }
}

std::string ExperimentConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

ExperimentConfig parse_config(const json& doc) {
  require_keys(doc, "config", {"experiment", "output_dir", "seeds", "problem", "topology", "schedule",
                               "training", "phases", "consensus_avg", "spectral", "verify"});
  ExperimentConfig cfg;
  if (doc.contains("experiment")) {
    std::string kind;
    read(doc, "experiment", kind);
    cfg.kind = parse_experiment_kind(kind);
  }
  std::string out;
  read(doc, "output_dir", out);
  cfg.output_dir = out;
  read(doc, "seeds", cfg.seeds);

  const json empty = json::object();
  cfg.run.problem = parse_problem(doc.value("problem", empty));
  cfg.run.topology = parse_topology(doc.value("topology", empty), cfg.run.problem.nodes);
  cfg.run.schedule = parse_schedule(doc.value("schedule", empty));
  parse_training(doc.value("training", empty), cfg.run);

  const json& ph = doc.value("phases", empty);
  require_keys(ph, "phases", {"dec_phases", "control", "values", "max_gossip"});
  read(ph, "dec_phases", cfg.phases.dec_phases);
  if (ph.contains("control")) {
    std::string mode;
    read(ph, "control", mode);
    cfg.phases.control = parse_control_mode(mode);
  }
  read(ph, "values", cfg.phases.values);
  read(ph, "max_gossip", cfg.phases.max_gossip);

  const json& ca = doc.value("consensus_avg", empty);
  require_keys(ca, "consensus_avg", {"topologies", "sizes", "init_low", "init_high", "stop_threshold",
                                     "report_thresholds", "max_steps"});
  auto& c = cfg.consensus_avg;
  c.topologies = read_topologies(ca, "topologies", c.topologies);
  read(ca, "sizes", c.sizes);
  read(ca, "init_low", c.init_low);
  read(ca, "init_high", c.init_high);
  read(ca, "stop_threshold", c.stop_threshold);
  read(ca, "report_thresholds", c.report_thresholds);
  read(ca, "max_steps", c.max_steps);

  const json& sp = doc.value("spectral", empty);
  require_keys(sp, "spectral", {"topologies", "sizes", "trials"});
  cfg.spectral.topologies = read_topologies(sp, "topologies", cfg.spectral.topologies);
  read(sp, "sizes", cfg.spectral.sizes);
  read(sp, "trials", cfg.spectral.trials);

  const json& ve = doc.value("verify", empty);
  require_keys(ve, "verify", {"lemma_configs", "inject_fault"});
  read(ve, "lemma_configs", cfg.verify.lemma_configs);
  read(ve, "inject_fault", cfg.verify.inject_fault);

  cfg.canonical = doc.dump();
  return cfg;
}

json read_config_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config '{}'", path.string()));
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return doc;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_config_json(path));
}

}  // namespace dsgd
