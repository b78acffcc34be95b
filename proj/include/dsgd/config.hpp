#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsgd/engine.hpp"
#include "dsgd/topology.hpp"

namespace dsgd {

enum class ExperimentKind { ConsensusAveraging, DsgdPhases, SpectralTable, Verify };

std::string_view to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(std::string_view name);

struct ConsensusAvgSettings {
  std::vector<TopologyKind> topologies{TopologyKind::Complete, TopologyKind::FixedRing,
                                       TopologyKind::ExponentialOnePeer,
                                       TopologyKind::BipartiteExponential,
                                       TopologyKind::RandomMatching};
  std::vector<int> sizes{16, 32, 64};
  double init_low = 0.0;
  double init_high = 10.0;
  double stop_threshold = 1e-8;             // on Xi (distance)
  std::vector<double> report_thresholds{1e-6, 1e-8};
  std::int64_t max_steps = 100000;
};

struct PhaseSettings {
  std::vector<int> dec_phases{1};
  ControlMode control = ControlMode::ConstantTarget;
  /// factors (constant), scales (adaptive) or q values (efficient)
  std::vector<double> values{1.0, 0.5, 0.25, 0.125};
  int max_gossip = 1000;
};

struct SpectralSettings {
  std::vector<TopologyKind> topologies{TopologyKind::Complete, TopologyKind::FixedRing,
                                       TopologyKind::ExponentialOnePeer,
                                       TopologyKind::BipartiteExponential,
                                       TopologyKind::RandomMatching};
  std::vector<int> sizes{16, 32, 64};
  int trials = 1000;
};

struct VerifySettings {
  int lemma_configs = 1000;
  /// "" or "row-sum": corrupts one mixing matrix to exercise the failure path.
  std::string inject_fault;
};

/// One config file = one experiment = one output directory. The JSON schema
/// is documented in docs/config.md.
struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::DsgdPhases;
  RunConfig run;
  std::vector<std::uint64_t> seeds{1};
  std::filesystem::path output_dir;
  ConsensusAvgSettings consensus_avg;
  PhaseSettings phases;
  SpectralSettings spectral;
  VerifySettings verify;
  /// Canonical JSON of the input (after command-line overrides).
  std::string canonical;

  void validate() const;
  /// 16 hex digits of FNV-1a over `canonical`.
  std::string hash() const;
};

ExperimentConfig parse_config(const nlohmann::json& doc);
/// Parsed JSON document; parse errors surface as ConfigError.
nlohmann::json read_config_json(const std::filesystem::path& path);
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace dsgd
