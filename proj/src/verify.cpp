#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "dsgd/errors.hpp"
#include "dsgd/harness.hpp"

namespace dsgd {

using oracle::Dense;
using oracle::OracleReport;

namespace {

constexpr TopologyKind kAllKinds[] = {TopologyKind::Complete, TopologyKind::FixedRing,
                                      TopologyKind::ExponentialOnePeer,
                                      TopologyKind::BipartiteExponential, TopologyKind::RandomMatching};

Matrix gaussian(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = scale * rng.normal();
  return m;
}

Dense dense_of(const Matrix& m) {
  Dense d(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) d[i][j] = m(i, j);
  return d;
}

// 1 - lambda_max of P W^T W P, P = I - 11^T/n, from the oracle eigensolver.
double oracle_mixing_parameter(const Dense& w) {
  const std::size_t n = w.size();
  Dense wtw(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k) wtw[i][j] += w[k][i] * w[k][j];
  Dense proj(n, std::vector<double>(n, 0.0));
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) {
          const double pia = (i == a ? 1.0 : 0.0) - inv;
          const double pbj = (b == j ? 1.0 : 0.0) - inv;
          s += pia * wtw[a][b] * pbj;
        }
      proj[i][j] = s;
    }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) proj[i][j] = proj[j][i] = 0.5 * (proj[i][j] + proj[j][i]);
  return std::clamp(1.0 - oracle::eig_symmetric(proj).front(), 0.0, 1.0);
}

void check_mixing(std::vector<OracleReport>& out, const VerifySettings& settings, Rng& rng) {
  for (TopologyKind kind : kAllKinds)
    for (int n : {2, 3, 7, 16, 33}) {
      const TopologySpec spec{kind, n, 7};
      double worst = 0.0;
      for (std::int64_t round = 0; round < 20; ++round) {
        const MixingMatrix w = build_mixing(spec, round, rng);
        worst = std::max(worst, oracle::doubly_stochastic_report("", oracle::to_dense(w)).main_value);
      }
      out.push_back(OracleReport::upper_bound(
          fmt::format("doubly stochastic: {} n={} (20 rounds)", to_string(kind), n), 0.0, worst, 1e-12));
    }
  if (settings.inject_fault == "row-sum") {
    Rng unused(0);
    Dense w = oracle::to_dense(build_mixing({TopologyKind::FixedRing, 8, 0}, 0, unused));
    w[0][0] += 0.01;  // row 0 now sums to 1.01
    out.push_back(oracle::doubly_stochastic_report("ring n=8 with injected row-sum fault", w));
  }
}

void check_spectra(std::vector<OracleReport>& out) {
  Rng unused(0);
  for (int n : {4, 8, 16, 32}) {
    for (TopologyKind kind : {TopologyKind::Complete, TopologyKind::FixedRing}) {
      const MixingMatrix w = build_mixing({kind, n, 0}, 0, unused);
      const std::vector<double> ev = oracle::eig_symmetric(oracle::to_dense(w));
      double second = 0.0;
      for (std::size_t i = 1; i < ev.size(); ++i) second = std::max(second, std::abs(ev[i]));
      const double rho = 1.0 - second;
      out.push_back(OracleReport::equality(fmt::format("spectral gap: {} n={}", to_string(kind), n), rho,
                                           spectral_gap(w), 1e-9, 1.0));
      out.push_back(OracleReport::equality(fmt::format("mixing parameter: {} n={}", to_string(kind), n),
                                           1.0 - second * second, w.parameter()->value, 1e-9, 1.0));
    }
    const TopologySpec expo{TopologyKind::ExponentialOnePeer, n, 0};
    for (int slot = 0; slot < expo.period(); ++slot) {
      const MixingMatrix w = build_mixing(expo, slot, unused);
      out.push_back(OracleReport::equality(fmt::format("exact p: exponential n={} slot {}", n, slot),
                                           oracle_mixing_parameter(oracle::to_dense(w)),
                                           exact_mixing_parameter(w), 1e-9, 1.0));
    }
  }
}

void check_contraction(std::vector<OracleReport>& out, Rng& rng) {
  Rng unused(0);
  for (TopologyKind kind : {TopologyKind::Complete, TopologyKind::FixedRing})
    for (int n : {4, 16}) {
      const MixingMatrix w = build_mixing({kind, n, 0}, 0, unused);
      const double bound = 1.0 - w.parameter()->value;
      double worst = 0.0;
      for (int k = 0; k < 200; ++k) {
        const Matrix x = gaussian(static_cast<std::size_t>(n), 3, rng);
        worst = std::max(worst, contraction_ratio(w, x));
      }
      out.push_back(OracleReport::upper_bound(
          fmt::format("contraction <= 1-p: {} n={}", to_string(kind), n), bound, worst, 1e-10));
    }
}

void check_estimates(std::vector<OracleReport>& out, Rng& rng) {
  for (int n : {8, 16}) {
    const TopologySpec spec{TopologyKind::RandomMatching, n, 3};
    Rng est_rng = Rng::stream(1, StreamTag::Estimate, static_cast<std::uint64_t>(n));
    const MixingEstimate e = estimate_mixing_parameter(spec, 1000, est_rng);
    // E[W^T W] for a uniform perfect matching contracts by (n-2)/(2(n-1)).
    const double closed_form = 1.0 - static_cast<double>(n - 2) / (2.0 * (n - 1));
    out.push_back(OracleReport::equality(fmt::format("p_hat: random matching n={}", n), closed_form,
                                         e.p_hat, 0.05));
    const oracle::Contraction c = oracle::mc_contraction(spec, 1000, rng, 8);
    out.push_back(OracleReport::upper_bound(fmt::format("MC contraction <= 1 - p_lower: random matching n={}", n),
                                            1.0 - e.lower + 3.0 * c.standard_error, c.ratio, 0.0));
  }
}

void check_repeated_gossip(std::vector<OracleReport>& out, Rng& rng) {
  Rng unused(0);
  const MixingMatrix ring = build_mixing({TopologyKind::FixedRing, 8, 0}, 0, unused);
  const double p = ring.parameter()->value;
  for (int k : {1, 2, 3, 5}) {
    const std::vector<MixingMatrix> copies(static_cast<std::size_t>(k), ring);
    const MixingMatrix product = compose_gossip(copies);
    out.push_back(OracleReport::upper_bound(fmt::format("repeated gossip contraction: ring n=8 k={}", k),
                                            std::pow(1.0 - p, k),
                                            1.0 - oracle_mixing_parameter(oracle::to_dense(product)), 1e-9));
  }
  // Matchings: compose k fresh draws per sample.
  const TopologySpec spec{TopologyKind::RandomMatching, 8, 5};
  Rng est = Rng::stream(2, StreamTag::Estimate);
  const MixingEstimate e = estimate_mixing_parameter(spec, 1000, est);
  for (int k : {2, 3}) {
    const oracle::DenseSampler product = [&](Rng& r) {
      std::vector<MixingMatrix> ws;
      for (int i = 0; i < k; ++i) ws.push_back(build_mixing(spec, i, r));
      return oracle::to_dense(compose_gossip(ws));
    };
    const oracle::Contraction c = oracle::mc_contraction(product, 8, 1000, rng, 8);
    out.push_back(OracleReport::upper_bound(
        fmt::format("repeated gossip contraction: random matching n=8 k={}", k),
        std::pow(1.0 - e.lower, k) + 3.0 * c.standard_error, c.ratio, 0.0));
  }
}

void check_estimator_lemma(std::vector<OracleReport>& out, const VerifySettings& settings, Rng& rng) {
  Rng unused(0);
  for (TopologyKind kind : {TopologyKind::FixedRing, TopologyKind::Complete, TopologyKind::ExponentialOnePeer}) {
    int violations = 0;
    for (int c = 0; c < settings.lemma_configs; ++c) {
      const int n = 2 + static_cast<int>(rng.index(31));
      const MixingMatrix w = build_mixing({kind, n, 0}, 0, unused);
      const double p = exact_mixing_parameter(w);
      if (p <= 0.0) continue;
      const Matrix x = gaussian(static_cast<std::size_t>(n), 1 + rng.index(4), rng, std::exp(rng.normal()));
      const double xi = std::sqrt(oracle::reference_consensus_distance_sq(dense_of(x)));
      const double theta = std::sqrt(local_estimator(x, w).theta_sq);
      if (xi > (2.0 / p) * theta * (1.0 + 1e-10) + 1e-300) ++violations;
    }
    out.push_back(OracleReport::upper_bound(
        fmt::format("Xi <= (2/p) Theta violations: {} ({} configs)", to_string(kind), settings.lemma_configs), 0.0,
        violations, 0.0));
  }
  for (int n : {4, 8, 16}) {
    const MixingMatrix w = build_mixing({TopologyKind::FixedRing, n, 0}, 0, unused);
    out.push_back(OracleReport::check(fmt::format("eigenvalue floor >= p/2: ring n={}", n),
                                      eigenvalue_floor_check(w)));
  }
}

void check_problems(std::vector<OracleReport>& out, Rng& rng) {
  for (ProblemKind kind : {ProblemKind::Quadratic, ProblemKind::Logistic, ProblemKind::TinyMlp}) {
    ProblemSpec spec;
    spec.kind = kind;
    spec.nodes = 4;
    spec.dim = 6;
    spec.heterogeneity = 0.5;
    spec.noise_scale = 0.3;
    const auto problem = make_problem(spec);
    const auto d = static_cast<std::size_t>(problem->dim());
    Vector x(d);
    for (double& v : x) v = 0.5 * rng.normal();
    for (int node = 0; node < problem->nodes(); ++node) {
      const Vector g = problem->local_grad(node, x);
      const Vector fd = oracle::fd_gradient(*problem, node, x, 1e-5);
      double diff = 0.0;
      for (std::size_t k = 0; k < d; ++k) diff += (g[k] - fd[k]) * (g[k] - fd[k]);
      out.push_back(OracleReport::upper_bound(
          fmt::format("gradient vs finite differences: {} node {}", to_string(kind), node), 0.0,
          std::sqrt(diff / std::max(squared_norm(fd), 1e-30)), 1e-6));
    }
    // Unbiasedness and exact variance of the stochastic gradient at node 0.
    constexpr int kDraws = 20000;
    const Vector g = problem->local_grad(0, x);
    Vector sum(d, 0.0), sum_sq(d, 0.0), draw(d);
    double dev = 0.0;
    for (int s = 0; s < kDraws; ++s) {
      problem->stochastic_grad(0, x, rng, draw);
      for (std::size_t k = 0; k < d; ++k) {
        sum[k] += draw[k];
        sum_sq[k] += draw[k] * draw[k];
        dev += (draw[k] - g[k]) * (draw[k] - g[k]);
      }
    }
    double worst_z = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double mean = sum[k] / kDraws;
      const double var = std::max(sum_sq[k] / kDraws - mean * mean, 1e-300);
      worst_z = std::max(worst_z, std::abs(mean - g[k]) / std::sqrt(var / kDraws));
    }
    out.push_back(OracleReport::upper_bound(fmt::format("stochastic gradient bias z-score: {}", to_string(kind)),
                                            4.5, worst_z, 0.0));
    out.push_back(OracleReport::equality(fmt::format("noise variance: {}", to_string(kind)),
                                         dev / kDraws, problem->noise_variance(0, x), 0.05));
  }

  ProblemSpec spec;
  spec.kind = ProblemKind::Logistic;
  const auto logistic = LogisticProblem::generate(spec);
  Vector x(static_cast<std::size_t>(spec.dim));
  for (double& v : x) v = rng.normal();
  const auto& shard = logistic.shard(1);
  out.push_back(OracleReport::equality("logistic loss vs per-sample reference",
                                       oracle::reference_logistic_loss(shard.features, shard.labels,
                                                                       logistic.l2(), x),
                                       logistic.local_loss(1, x), 1e-12));
}

void check_engine(std::vector<OracleReport>& out, Rng& rng) {
  ProblemSpec ps;
  ps.nodes = 8;
  ps.heterogeneity = 1.0;
  ps.noise_scale = 0.5;
  const QuadraticProblem problem = QuadraticProblem::generate(ps);
  const TopologySpec ring{TopologyKind::FixedRing, 8, 0};
  Rng unused(0);
  const MixingMatrix w = build_mixing(ring, 0, unused);

  NodeStates states{gaussian(8, static_cast<std::size_t>(ps.dim), rng), Matrix()};
  const StepOptions opts{11, 4, 0.0};
  const double lr = 0.05;
  const Matrix grads = stochastic_gradients(problem, states.x, opts.seed, opts.iteration);
  const Dense expected = oracle::reference_dsgd_step(dense_of(states.x), oracle::to_dense(w), dense_of(grads), lr);
  const NodeStates next = dsgd_step(states, problem, w, lr, opts);
  double worst = 0.0;
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t c = 0; c < next.x.cols(); ++c) worst = std::max(worst, std::abs(next.x(i, c) - expected[i][c]));
  out.push_back(OracleReport::upper_bound("D-SGD step vs triple-loop reference", 0.0, worst, 1e-12));

  out.push_back(OracleReport::equality("consensus distance vs scalar loops",
                                       oracle::reference_consensus_distance_sq(dense_of(states.x)),
                                       consensus_distance_sq(states.x), 1e-12));

  const Vector before = states.mean();
  const Vector after = row_mean(w.apply(states.x));
  double shift = 0.0;
  for (std::size_t c = 0; c < before.size(); ++c) shift = std::max(shift, std::abs(after[c] - before[c]));
  out.push_back(OracleReport::upper_bound("gossip preserves the mean", 0.0, shift, 1e-12));

  // Complete graph D-SGD equals C-SGD on identical starts.
  NodeStates dec = NodeStates::identical(8, states.x.row(0));
  NodeStates cen = dec;
  const MixingMatrix complete = build_mixing({TopologyKind::Complete, 8, 0}, 0, unused);
  double gap = 0.0;
  for (std::int64_t t = 0; t < 50; ++t) {
    const StepOptions o{3, t, 0.0};
    dec = dsgd_step(std::move(dec), problem, complete, 0.1, o);
    cen = csgd_step(std::move(cen), problem, 0.1, o);
    gap = std::max(gap, std::abs(problem.loss(dec.mean()) - problem.loss(cen.mean())) /
                            std::max(std::abs(problem.loss(cen.mean())), 1e-300));
  }
  out.push_back(OracleReport::upper_bound("complete-graph D-SGD vs C-SGD loss (50 steps)", 0.0, gap, 1e-10));

  NodeStates frozen = NodeStates::identical(8, states.x.row(0));
  const NodeStates stepped = dsgd_step(frozen, problem, w, 0.0, opts);
  double moved = 0.0;
  for (std::size_t k = 0; k < frozen.x.data().size(); ++k)
    moved = std::max(moved, std::abs(stepped.x.data()[k] - frozen.x.data()[k]) /
                                std::max(std::abs(frozen.x.data()[k]), 1.0));
  // Gossip of identical rows is exact up to rounding of the weights.
  out.push_back(OracleReport::upper_bound("lr = 0 on identical nodes leaves states unchanged", 0.0, moved, 1e-14));

  // Smoothness along an update never exceeds the per-node bound.
  const Vector g = problem.grad(before);
  out.push_back(OracleReport::upper_bound("estimated smoothness <= L", problem.smoothness_bound(),
                                          estimate_smoothness(problem, before, g, 0.1), 1e-9));
}

void check_runs(std::vector<OracleReport>& out) {
  RunConfig rc;
  rc.problem.nodes = 8;
  rc.problem.heterogeneity = 1.0;
  rc.problem.noise_scale = 0.5;
  rc.topology = {TopologyKind::RandomMatching, 8, 1};
  rc.schedule.base_lr = 0.05;
  rc.schedule.total_iters = 200;
  rc.schedule.decay_points = {0.5};
  rc.phase_policies = {ControlPolicy::constant_target(0.5, 0.05), ControlPolicy::adaptive_target(0.5)};
  rc.estimate_trials = 200;
  const MetricsTrace a = run(rc);
  const MetricsTrace b = run(rc);
  out.push_back(OracleReport::check("same seed reproduces the trace CSV", trace_csv(a) == trace_csv(b)));

  int violations = 0;
  for (const MetricsRecord& r : a.records)
    if (std::isfinite(r.control_target) && std::sqrt(r.xi_sq) > r.control_target) ++violations;
  out.push_back(OracleReport::upper_bound("control exits with Xi <= target", 0.0, violations, 0.0));

  RunConfig all = rc;
  all.phase_policies = {ControlPolicy::all_reduce()};
  RunConfig zero = rc;
  zero.phase_policies = {ControlPolicy::constant_target(0.0, 1.0)};
  out.push_back(OracleReport::check("factor 0 reproduces the all-reduce trace", trace_csv(run(all)) == trace_csv(run(zero))));
}

}  // namespace

std::vector<OracleReport> verify(const ExperimentConfig& config) {
  config.validate();
  Rng rng = Rng::stream(config.seeds.front(), StreamTag::Probe, 0x7665726966ULL);
  std::vector<OracleReport> out;
  check_mixing(out, config.verify, rng);
  check_spectra(out);
  check_contraction(out, rng);
  check_estimates(out, rng);
  check_repeated_gossip(out, rng);
  check_estimator_lemma(out, config.verify, rng);
  check_problems(out, rng);
  check_engine(out, rng);
  check_runs(out);
  return out;
}

}  // namespace dsgd
