#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dsgd/config.hpp"
#include "dsgd/oracle.hpp"
#include "dsgd/trace.hpp"

namespace dsgd {

// ------------------------------------------------------ consensus averaging

struct ConsensusCurve {
  TopologyKind topology = TopologyKind::Complete;
  int n = 0;
  std::uint64_t seed = 0;
  std::vector<double> xi_sq;  // xi_sq[s] after s gossip steps; xi_sq[0] is the start

  /// First step with Xi <= threshold, if reached.
  std::optional<std::int64_t> steps_to(double threshold) const;
};

/// Pure averaging of scalars drawn uniformly from the init range until
/// Xi <= stop_threshold or max_steps gossip rounds.
ConsensusCurve consensus_averaging_run(TopologyKind topology, int n, std::uint64_t seed,
                                       const ConsensusAvgSettings& settings);

std::vector<ConsensusCurve> consensus_averaging_experiment(const ExperimentConfig& config);

/// consensus_avg_curves.csv and consensus_avg_steps.csv.
void write_consensus_averaging(const std::vector<ConsensusCurve>& curves,
                               const ExperimentConfig& config, const std::filesystem::path& dir);

// ------------------------------------------------------------ D-SGD phases

struct PhaseRun {
  std::string label;  // "all-reduce", "dec-phase-1/uncontrolled", "dec-phase-1/constant-0.25"
  int dec_phase = 0;  // 0 for the all-reduce baseline
  ControlPolicy policy;
  std::uint64_t seed = 0;
  MetricsTrace trace;
  double wall_seconds = 0.0;

  double final_loss() const;
  double final_grad_norm_sq() const;
  double mean_gossip() const;
};

struct PhaseSummary {
  std::string label;
  int runs = 0;
  double loss_mean = 0.0, loss_std = 0.0;
  double grad_norm_sq_mean = 0.0, grad_norm_sq_std = 0.0;
  double gossip_mean = 0.0, gossip_std = 0.0;
};

struct PhaseExperiment {
  std::vector<PhaseRun> runs;
  std::vector<PhaseSummary> summary;  // one row per label, in first-seen order
};

/// Per seed: the all-reduce baseline, then for every dec phase k an
/// uncontrolled pass 1 that records Xi_max per phase, then one pass-2 run
/// per configured value. With a non-empty `dir` every trace, the Xi_max
/// sidecars and the summaries are written there and pass 2 reads Xi_max back
/// from the sidecar.
PhaseExperiment dsgd_phase_experiment(const ExperimentConfig& config,
                                      const std::filesystem::path& dir = {});

std::vector<PhaseSummary> summarize(const std::vector<PhaseRun>& runs);

// ---------------------------------------------------------- spectral table

struct SpectralRow {
  TopologyKind topology = TopologyKind::Complete;
  int n = 0;
  std::string quantity;  // "rho" (fixed, eigendecomposition) or "p_hat" (Monte Carlo)
  double value = 0.0;
  double p = 0.0;
  double p_lower = 0.0;
  double p_upper = 0.0;
  int degree = 0;  // max over nodes in round 0
};

std::vector<SpectralRow> spectral_table(const ExperimentConfig& config);
void write_spectral_table(const std::vector<SpectralRow>& rows, const ExperimentConfig& config,
                          const std::filesystem::path& dir);

// ------------------------------------------------------------------ verify

/// Property and oracle battery over every module.
std::vector<oracle::OracleReport> verify(const ExperimentConfig& config);
void write_verify_report(const std::vector<oracle::OracleReport>& reports,
                         const ExperimentConfig& config, const std::filesystem::path& dir);

/// manifest.json: experiment kind, config hash and the canonical config.
void write_manifest(const ExperimentConfig& config, const std::filesystem::path& dir);

}  // namespace dsgd
