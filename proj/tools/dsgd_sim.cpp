// Command-line front end: one subcommand per experiment kind.
//
// Exit codes: 0 success, 1 failed check or failed run, 2 configuration error.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "dsgd/config.hpp"
#include "dsgd/errors.hpp"
#include "dsgd/harness.hpp"

namespace {

namespace fs = std::filesystem;
using dsgd::ExperimentConfig;
using dsgd::ExperimentKind;

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kConfigError = 2;

struct Options {
  std::string config;
  std::string out;
  std::vector<std::uint64_t> seeds;
};

ExperimentConfig resolve(ExperimentKind kind, const Options& opts, fs::path& out_dir) {
  nlohmann::json doc = opts.config.empty() ? nlohmann::json::object() : dsgd::read_config_json(opts.config);
  if (!doc.is_object()) throw dsgd::ConfigError("config root must be an object");
  const std::string name(dsgd::to_string(kind));
  if (doc.contains("experiment") && doc["experiment"] != name)
    throw dsgd::ConfigError(fmt::format("config is for '{}', not '{}'", doc["experiment"].dump(), name));
  doc["experiment"] = name;
  if (!opts.seeds.empty()) doc["seeds"] = opts.seeds;
  ExperimentConfig cfg = dsgd::parse_config(doc);
  cfg.validate();

  if (!opts.out.empty()) {
    out_dir = opts.out;
  } else if (!cfg.output_dir.empty()) {
    out_dir = cfg.output_dir;
  } else {
    const char* env = std::getenv("DSGD_OUT_DIR");
    out_dir = fs::path(env && *env ? env : "runs") / name;
  }
  return cfg;
}

int consensus_avg(const ExperimentConfig& cfg, const fs::path& dir) {
  const auto curves = dsgd::consensus_averaging_experiment(cfg);
  dsgd::write_consensus_averaging(curves, cfg, dir);
  for (const auto& c : curves) {
    std::string steps;
    for (double th : cfg.consensus_avg.report_thresholds) {
      const auto k = c.steps_to(th);
      steps += fmt::format(" Xi<={:g}:{}", th, k ? std::to_string(*k) : std::string("NA"));
    }
    fmt::print("{:<22} n={:<3} seed={}{}\n", dsgd::to_string(c.topology), c.n, c.seed, steps);
  }
  return kOk;
}

int dsgd_phases(const ExperimentConfig& cfg, const fs::path& dir) {
  const auto result = dsgd::dsgd_phase_experiment(cfg, dir);
  fmt::print("{:<32} {:>5} {:>24} {:>24} {:>12}\n", "label", "runs", "final loss", "final |grad f|^2",
             "gossip/iter");
  for (const auto& s : result.summary)
    fmt::print("{:<32} {:>5} {:>11.6g} +- {:<9.3g} {:>11.6g} +- {:<9.3g} {:>12.4g}\n", s.label, s.runs,
               s.loss_mean, s.loss_std, s.grad_norm_sq_mean, s.grad_norm_sq_std, s.gossip_mean);
  return kOk;
}

int spectral_table(const ExperimentConfig& cfg, const fs::path& dir) {
  const auto rows = dsgd::spectral_table(cfg);
  dsgd::write_spectral_table(rows, cfg, dir);
  for (const auto& r : rows)
    fmt::print("{:<22} n={:<3} {}={:.6g} p in [{:.6g}, {:.6g}] degree={}\n", dsgd::to_string(r.topology), r.n,
               r.quantity, r.value, r.p_lower, r.p_upper, r.degree);
  return kOk;
}

int verify(const ExperimentConfig& cfg, const fs::path& dir) {
  const auto reports = dsgd::verify(cfg);
  dsgd::write_verify_report(reports, cfg, dir);
  int failed = 0;
  for (const auto& r : reports) {
    fmt::print("{}\n", r.line());
    if (!r.pass) ++failed;
  }
  fmt::print("{} checks, {} failed\n", reports.size(), failed);
  return failed == 0 ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized SGD consensus-control simulator"};
  app.require_subcommand(1);

  Options opts;
  struct Entry {
    const char* name;
    const char* help;
    ExperimentKind kind;
    int (*body)(const ExperimentConfig&, const fs::path&);
  };
  const Entry entries[] = {
      {"consensus-avg", "Gossip-only averaging curves per topology", ExperimentKind::ConsensusAveraging,
       consensus_avg},
      {"dsgd-phases", "Phase-wise consensus-control runs (two-pass Xi_max protocol)", ExperimentKind::DsgdPhases,
       dsgd_phases},
      {"spectral-table", "Spectral gap / mixing parameter and degree per topology", ExperimentKind::SpectralTable,
       spectral_table},
      {"verify", "Property and oracle battery", ExperimentKind::Verify, verify},
  };
  std::vector<std::pair<CLI::App*, const Entry*>> subs;
  for (const Entry& e : entries) {
    CLI::App* sub = app.add_subcommand(e.name, e.help);
    sub->add_option("--config", opts.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--out", opts.out, "Output directory (default: $DSGD_OUT_DIR/<subcommand> or runs/<subcommand>)");
    sub->add_option("--seed", opts.seeds, "Seed; repeat for several seeds");
    subs.emplace_back(sub, &e);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  for (const auto& [sub, entry] : subs) {
    if (!sub->parsed()) continue;
    try {
      fs::path dir;
      const ExperimentConfig cfg = resolve(entry->kind, opts, dir);
      const int code = entry->body(cfg, dir);
      std::cerr << fmt::format("{}: outputs in {} (config hash {})\n", entry->name, dir.string(), cfg.hash());
      return code;
    } catch (const dsgd::ConfigError& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return kConfigError;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kCheckFailed;
    }
  }
  return kConfigError;
}
