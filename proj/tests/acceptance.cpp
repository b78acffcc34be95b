// Acceptance gate: one PASS/FAIL line per criterion, each with its runtime
// against the budget. Bounds come from the oracle module or from closed
// forms recomputed here; no criterion compares against a hand-typed number
// except the stated tolerances.
//
// Usage: acceptance [criterion ids...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "dsgd/config.hpp"
#include "dsgd/consensus.hpp"
#include "dsgd/engine.hpp"
#include "dsgd/harness.hpp"
#include "dsgd/oracle.hpp"
#include "dsgd/topology.hpp"

namespace fs = std::filesystem;
using namespace dsgd;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Outcome()> body;
};

oracle::Dense dense_of(const Matrix& m) {
  oracle::Dense d(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) d[i][j] = m(i, j);
  return d;
}

Matrix gaussian(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

// Second largest |eigenvalue| of a symmetric W from the oracle solver.
double oracle_second_eigenvalue(const MixingMatrix& w) {
  const auto ev = oracle::eig_symmetric(oracle::to_dense(w));
  double second = 0.0;
  for (std::size_t i = 1; i < ev.size(); ++i) second = std::max(second, std::abs(ev[i]));
  return second;
}

MixingMatrix fixed(TopologyKind kind, int n) {
  Rng unused(0);
  return build_mixing({kind, n, 0}, 0, unused);
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double standard_error(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

// ------------------------------------------------------------------ 1 - 5

Outcome mixing_validity() {
  constexpr TopologyKind kinds[] = {TopologyKind::Complete, TopologyKind::FixedRing,
                                    TopologyKind::ExponentialOnePeer, TopologyKind::BipartiteExponential,
                                    TopologyKind::RandomMatching};
  Rng rng(101);
  double worst = 0.0;
  int matrices = 0;
  for (TopologyKind kind : kinds)
    for (int n = 2; n <= 64; ++n) {
      const TopologySpec spec{kind, n, 0};
      for (std::int64_t round = 0; round < 100; ++round, ++matrices) {
        const auto report = oracle::doubly_stochastic_report("", oracle::to_dense(build_mixing(spec, round, rng)));
        worst = std::max(worst, report.main_value);
      }
    }
  return {worst <= 1e-12, fmt::format("{} matrices, worst row/col sum error {:.3g} (tol 1e-12)", matrices, worst)};
}

Outcome contraction() {
  Rng rng(202);
  double worst_excess = -1.0;
  for (TopologyKind kind : {TopologyKind::FixedRing, TopologyKind::Complete})
    for (int n : {4, 8, 16, 32}) {
      const MixingMatrix w = fixed(kind, n);
      const double lambda2 = oracle_second_eigenvalue(w);
      const double bound = lambda2 * lambda2;  // 1 - p for symmetric W
      for (int k = 0; k < 1000; ++k) {
        const Matrix x = gaussian(static_cast<std::size_t>(n), 4, rng);
        worst_excess = std::max(worst_excess, contraction_ratio(w, x) - bound);
      }
    }
  return {worst_excess <= 1e-10,
          fmt::format("max(ratio - (1-p)) = {:.3g} over 8000 X (tol 1e-10)", worst_excess)};
}

Outcome repeated_gossip() {
  Rng rng(303);
  bool ok = true;
  std::string detail;
  for (int n : {8, 32}) {
    const TopologySpec spec{TopologyKind::RandomMatching, n, 9};
    Rng est = Rng::stream(303, StreamTag::Estimate, static_cast<std::uint64_t>(n));
    const MixingEstimate e = estimate_mixing_parameter(spec, 1000, est);
    for (int k : {1, 2, 3, 5}) {
      const oracle::DenseSampler product = [&](Rng& r) {
        std::vector<MixingMatrix> ws;
        for (int i = 0; i < k; ++i) ws.push_back(build_mixing(spec, i, r));
        return oracle::to_dense(compose_gossip(ws));
      };
      const oracle::Contraction c = oracle::mc_contraction(product, static_cast<std::size_t>(n), 1000, rng, 8);
      // (1 - p_hat)^k widened by both Monte-Carlo intervals.
      const double bound = std::pow(1.0 - e.lower, k) + 3.0 * c.standard_error;
      ok = ok && c.ratio <= bound;
      detail += fmt::format(" n={} k={}: {:.4f}<={:.4f};", n, k, c.ratio, bound);
    }
  }
  return {ok, detail};
}

Outcome estimator_lemma() {
  Rng rng(404);
  int violations = 0;
  int checked = 0;
  double tightest = 0.0;
  for (int n : {4, 16, 64}) {
    const MixingMatrix ws[] = {fixed(TopologyKind::FixedRing, n), fixed(TopologyKind::Complete, n),
                               fixed(TopologyKind::ExponentialOnePeer, n)};
    for (const MixingMatrix& w : ws) {
      const double p = exact_mixing_parameter(w);
      for (int k = 0; k < 1000; ++k, ++checked) {
        const Matrix x = gaussian(static_cast<std::size_t>(n), 1 + rng.index(4), rng);
        const double xi = std::sqrt(oracle::reference_consensus_distance_sq(dense_of(x)));
        const double theta = std::sqrt(local_estimator(x, w).theta_sq);
        tightest = std::max(tightest, xi / ((2.0 / p) * theta));
        if (xi > (2.0 / p) * theta) ++violations;
      }
    }
  }
  return {violations == 0, fmt::format("{} violations in {} states; max Xi / ((2/p) Theta) = {:.3f}", violations,
                                       checked, tightest)};
}

Outcome eigenvalue_floor_lemma() {
  int failures = 0;
  int mismatches = 0;
  double slack = 1e300;
  for (TopologyKind kind : {TopologyKind::FixedRing, TopologyKind::Complete})
    for (int n = 4; n <= 64; ++n) {
      const MixingMatrix w = fixed(kind, n);
      // Oracle: eigenvalues of W - 11^T/n - I, smallest in absolute value.
      oracle::Dense m = oracle::to_dense(w);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) m[i][j] -= 1.0 / n + (i == j ? 1.0 : 0.0);
      double floor = 1e300;
      for (double v : oracle::eig_symmetric(m)) floor = std::min(floor, std::abs(v));
      const double lambda2 = oracle_second_eigenvalue(w);
      const double p = 1.0 - lambda2 * lambda2;
      slack = std::min(slack, floor - p / 2.0);
      if (floor < p / 2.0 - 1e-12) ++failures;
      if (eigenvalue_floor_check(w) != (floor >= p / 2.0 - 1e-12)) ++mismatches;
    }
  return {failures == 0 && mismatches == 0,
          fmt::format("{} failures, {} main/oracle disagreements, min slack {:.3g}", failures, mismatches, slack)};
}

// ---------------------------------------------------------------- 6 and 7

struct RecursionRuns {
  std::vector<MetricsTrace> traces;
  double p = 0.0;
  double sigma2 = 0.0;
  std::int64_t boundary = 0;
  std::int64_t total = 0;
};

const RecursionRuns& recursion_runs() {
  static std::optional<RecursionRuns> cache;
  if (cache) return *cache;
  RunConfig rc;
  rc.problem.dim = 8;
  rc.problem.nodes = 16;
  rc.problem.noise_scale = 1.0;  // sigma^2 = 1
  rc.problem.heterogeneity = 1.0;
  rc.topology = {TopologyKind::FixedRing, 16, 0};
  rc.schedule.kind = LrScheduleKind::StepDecay;
  rc.schedule.base_lr = 0.01;
  rc.schedule.total_iters = 4000;
  rc.schedule.decay_points = {0.5};
  rc.phase_policies = {ControlPolicy::uncontrolled()};
  const auto problem = make_problem(rc.problem);
  RecursionRuns out;
  out.p = fixed(TopologyKind::FixedRing, 16).parameter()->value;
  out.sigma2 = problem->noise_variance(0, Vector(8, 0.0));
  out.boundary = rc.schedule.boundaries().front();
  out.total = rc.schedule.total_iters;
  for (std::uint64_t seed = 1; seed <= 32; ++seed) {
    rc.seed = seed;
    out.traces.push_back(run(rc, *problem));
  }
  cache = std::move(out);
  return *cache;
}

Outcome consensus_recursion() {
  const RecursionRuns& r = recursion_runs();
  int violations = 0;
  double worst_z = -1e300;
  const std::size_t iters = r.traces.front().records.size();
  for (std::size_t t = 1; t < iters; ++t) {
    std::vector<double> gap;
    for (const MetricsTrace& tr : r.traces) {
      const MetricsRecord& now = tr.records[t];
      const MetricsRecord& prev = tr.records[t - 1];
      gap.push_back(now.xi_sq - distance_recursion_rhs(prev.xi_sq, now.phi_sq, now.lr, r.p, r.sigma2));
    }
    const double se = standard_error(gap);
    const double m = mean(gap);
    worst_z = std::max(worst_z, se > 0.0 ? m / se : (m > 0.0 ? 1e300 : -1e300));
    if (m > 3.0 * se) ++violations;
  }
  return {violations == 0 && iters >= 2000,
          fmt::format("{} iterations x 32 seeds, {} violations; max (LHS-RHS)/SE = {:.2f} (limit 3)", iters,
                      violations, worst_z)};
}

Outcome distance_scaling() {
  const RecursionRuns& r = recursion_runs();
  // Steady-state windows: the second half of each phase.
  const std::int64_t b = r.boundary;
  auto window_mean = [&](std::int64_t lo, std::int64_t hi) {
    std::vector<double> v;
    for (const MetricsTrace& tr : r.traces)
      for (std::int64_t t = lo; t < hi; ++t) v.push_back(tr.records[static_cast<std::size_t>(t)].xi_sq);
    return mean(v);
  };
  const double before = window_mean(b / 2, b);
  const double after = window_mean(b + (r.total - b) / 2, r.total);
  const double ratio = before / after;
  return {ratio >= 80.0 && ratio <= 120.0,
          fmt::format("mean Xi^2 {:.4g} -> {:.4g}, ratio {:.1f} (accept 100 +- 20%)", before, after, ratio)};
}

// ---------------------------------------------------------------------- 8

Outcome ccd_recovery() {
  RunConfig rc;
  rc.problem.dim = 8;
  rc.problem.nodes = 16;
  rc.problem.samples_per_node = 8;
  rc.problem.noise_scale = 0.1;
  rc.problem.heterogeneity = 2.0;
  rc.topology = {TopologyKind::FixedRing, 16, 0};
  rc.schedule.kind = LrScheduleKind::Constant;
  // Far start: the transient, where curvature heterogeneity slows the
  // decentralized mean, dominates the loss rather than f*.
  rc.init_scale = 100.0;
  rc.seed = 8;
  const auto problem = make_problem(rc.problem);

  const double p = fixed(TopologyKind::FixedRing, 16).parameter()->value;
  Rng probe_rng = Rng::stream(rc.seed, StreamTag::Probe);
  const ProblemConstants pc = constants(*problem, default_probe_points(*problem, probe_rng));
  const double gamma = sufficient_conditions(pc, 16, 1.0, p, 2.0).max_stepsize;

  auto max_gap = [&](double lr, std::int64_t iters, int& longest_run) {
    RunConfig dec = rc;
    dec.schedule.base_lr = lr;
    dec.schedule.total_iters = iters;
    dec.phase_policies = {ControlPolicy::uncontrolled()};
    RunConfig cen = dec;
    cen.phase_policies = {ControlPolicy::all_reduce()};
    const MetricsTrace a = run(dec, *problem);
    const MetricsTrace c = run(cen, *problem);
    double worst = 0.0;
    int current = 0;
    longest_run = 0;
    for (std::size_t t = 0; t < a.records.size(); ++t) {
      const double rel = std::abs(a.records[t].loss_mean - c.records[t].loss_mean) / std::abs(c.records[t].loss_mean);
      worst = std::max(worst, rel);
      current = rel > 0.05 ? current + 1 : 0;
      longest_run = std::max(longest_run, current);
    }
    return worst;
  };
  int run_small = 0, run_large = 0;
  const double small = max_gap(gamma, 20000, run_small);
  const double large = max_gap(50.0 * gamma, 2000, run_large);
  const bool ok = sufficient_conditions(pc, 16, gamma, p).stepsize_ok && small <= 0.05 && run_large >= 100;
  return {ok, fmt::format("gamma={:.3g}: max rel gap {:.4f} (<= 0.05); 50 gamma: max gap {:.3f}, longest "
                          "stretch > 5% = {} iterations (>= 100)",
                          gamma, small, large, run_large)};
}

// -------------------------------------------------------------- 9 and 11

ExperimentConfig table2_config() {
  nlohmann::json doc = {
      {"experiment", "dsgd-phases"},
      {"seeds", {1, 2, 3, 4, 5}},
      {"problem",
       {{"kind", "quadratic"}, {"dim", 8}, {"nodes", 16}, {"samples_per_node", 8}, {"noise_scale", 0.1},
        {"heterogeneity", 0.5}}},
      {"topology", {{"kind", "ring"}}},
      {"schedule", {{"kind", "step"}, {"base_lr", 0.9}, {"decay_points", {0.9, 0.95}}, {"total_iters", 2000}}},
      {"training", {{"log_every", 1}}},
      {"phases", {{"dec_phases", {1}}, {"control", "constant"}, {"values", {1.0, 0.5, 0.25}}}}};
  return parse_config(doc);
}

const PhaseExperiment& table2_runs() {
  static std::optional<PhaseExperiment> cache;
  if (!cache) cache = dsgd_phase_experiment(table2_config());
  return *cache;
}

Outcome control_postcondition() {
  int checked = 0;
  int violations = 0;
  auto check_targets = [&](const PhaseExperiment& ex) {
    for (const PhaseRun& r : ex.runs)
      for (const MetricsRecord& rec : r.trace.records)
        if (std::isfinite(rec.control_target)) {
          ++checked;
          if (std::sqrt(rec.xi_sq) > rec.control_target) ++violations;
        }
  };
  check_targets(table2_runs());

  ExperimentConfig adaptive = table2_config();
  adaptive.phases.control = ControlMode::AdaptiveTarget;
  adaptive.phases.values = {0.5, 0.1};
  adaptive.seeds = {1, 2};
  check_targets(dsgd_phase_experiment(adaptive));

  ExperimentConfig efficient = table2_config();
  efficient.phases.control = ControlMode::EfficientTheta;
  efficient.phases.values = {0.5, 0.1};
  efficient.seeds = {1, 2};
  const PhaseExperiment ex = dsgd_phase_experiment(efficient);
  const double p = fixed(TopologyKind::FixedRing, 16).parameter()->value;
  int efficient_checked = 0;
  for (const PhaseRun& r : ex.runs) {
    if (r.policy.mode != ControlMode::EfficientTheta) continue;
    for (const MetricsRecord& rec : r.trace.records) {
      if (!std::isfinite(rec.control_target)) continue;
      ++efficient_checked;
      const double bound = (2.0 / p) * r.policy.q * rec.phi_ema;
      if (std::sqrt(rec.xi_sq) > bound) ++violations;
    }
  }
  return {violations == 0 && checked > 0 && efficient_checked > 0,
          fmt::format("{} target exits + {} efficient exits, {} violations", checked, efficient_checked, violations)};
}

Outcome table2_trend() {
  const PhaseExperiment& ex = table2_runs();
  auto loss = [&](const std::string& label) {
    for (const PhaseSummary& s : ex.summary)
      if (s.label == label) return s.loss_mean;
    throw std::runtime_error("missing summary row " + label);
  };
  const double all = loss("all-reduce");
  const double f1 = loss("dec-phase-1/constant-1");
  const double f2 = loss("dec-phase-1/constant-0.5");
  const double f4 = loss("dec-phase-1/constant-0.25");
  const double rel = std::abs(f4 - all) / std::abs(all);
  const bool ok = f1 >= f2 && f2 >= f4 && rel <= 0.05;
  return {ok, fmt::format("final loss (5 seeds): factor 1 {:.6f} >= 1/2 {:.6f} >= 1/4 {:.6f}; all-reduce {:.6f}, "
                          "1/4 gap {:.4f}% (<= 5%)",
                          f1, f2, f4, all, 100.0 * rel)};
}

// --------------------------------------------------------------------- 10

Outcome figure5() {
  ConsensusAvgSettings s;
  auto steps = [&](TopologyKind kind, int n) {
    const auto k = consensus_averaging_run(kind, n, 1, s).steps_to(1e-6);
    return k ? static_cast<double>(*k) : 1e300;
  };
  const double complete = steps(TopologyKind::Complete, 32);
  const double expo = steps(TopologyKind::ExponentialOnePeer, 32);
  const double matching = steps(TopologyKind::RandomMatching, 32);
  const double ring32 = steps(TopologyKind::FixedRing, 32);
  const double ring64 = steps(TopologyKind::FixedRing, 64);
  const bool ok = complete == 1.0 && complete < expo && expo <= matching && matching < ring32 &&
                  ring32 >= 5.0 * expo && ring64 / ring32 >= 3.0 && ring64 / ring32 <= 5.0;
  return {ok, fmt::format("n=32 steps to Xi<=1e-6: complete {} < exponential {} <= matching {} < ring {}; "
                          "ring n=64/n=32 = {:.2f}",
                          complete, expo, matching, ring32, ring64 / ring32)};
}

// --------------------------------------------------------------------- 12

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / fmt::format("dsgd_acceptance_{}", ::getpid());
  fs::remove_all(root);
  auto produce = [&](const fs::path& dir) {
    ExperimentConfig phases = table2_config();
    phases.seeds = {3};
    dsgd_phase_experiment(phases, dir / "phases");
    ExperimentConfig avg = parse_config({{"experiment", "consensus-avg"}});
    write_consensus_averaging(consensus_averaging_experiment(avg), avg, dir / "avg");
    ExperimentConfig spec = parse_config({{"experiment", "spectral-table"}});
    write_spectral_table(spectral_table(spec), spec, dir / "spectral");
  };
  produce(root / "a");
  produce(root / "b");
  int files = 0;
  int differing = 0;
  for (const auto& entry : fs::recursive_directory_iterator(root / "a")) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext != ".csv" && ext != ".txt") continue;
    ++files;
    const fs::path twin = root / "b" / fs::relative(entry.path(), root / "a");
    if (slurp(entry.path()) != slurp(twin)) ++differing;
  }
  fs::remove_all(root);
  return {files > 0 && differing == 0, fmt::format("{} CSV/sidecar files compared, {} differ", files, differing)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "mixing validity", 10, mixing_validity},
      {2, "Assumption-1 contraction", 30, contraction},
      {3, "repeated gossip (random matchings)", 60, repeated_gossip},
      {4, "estimator bound Xi <= (2/p) Theta", 30, estimator_lemma},
      {5, "eigenvalue floor", 30, eigenvalue_floor_lemma},
      {6, "consensus distance recursion", 120, consensus_recursion},
      {7, "typical distance scales with lr^2", 120, distance_scaling},
      {8, "critical consensus distance recovers C-SGD", 120, ccd_recovery},
      {9, "control postcondition", 300, control_postcondition},
      {10, "consensus averaging ordering", 60, figure5},
      {11, "dec-phase-1 control trend", 300, table2_trend},
      {12, "determinism", 300, determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  int ran = 0;
  for (const Criterion& c : criteria) {
    if (!selected.empty() && !selected.contains(c.id)) continue;
    ++ran;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.body();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool pass = o.pass && secs <= c.budget_seconds;
    if (!pass) ++failed;
    std::printf("[%s] #%d %s | %s | %.2fs (budget %.0fs)\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                secs, c.budget_seconds);
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
