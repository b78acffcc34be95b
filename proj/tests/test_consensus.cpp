#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

#include <doctest.h>

#include "dsgd/consensus.hpp"
#include "dsgd/errors.hpp"

using namespace dsgd;

namespace {

Matrix column(const std::vector<double>& v) {
  Matrix x(v.size(), 1);
  for (std::size_t i = 0; i < v.size(); ++i) x(i, 0) = v[i];
  return x;
}

MixingMatrix fixed(TopologyKind kind, int n) {
  Rng rng(1);
  return build_mixing({kind, n, 0}, 0, rng);
}

ProblemConstants unit_constants(double sigma2 = 0.0) {
  ProblemConstants c;
  c.L = 1.0;
  c.L_global = 1.0;
  c.sigma2 = sigma2;
  return c;
}

std::filesystem::path scratch(const char* name) {
  const auto dir = std::filesystem::temp_directory_path() / "dsgd_unit";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("consensus distance") {
  CHECK(consensus_distance_sq(column({0, 1, 2})) == doctest::Approx(2.0 / 3.0));
  CHECK(consensus_distance_sq(column({0, 0, 0, 4})) == doctest::Approx(3.0));
  CHECK(consensus_distance_sq(column({5, 5, 5})) == 0.0);
}

TEST_CASE("local estimator on a ring of four") {
  const LocalEstimate e = local_estimator(column({0, 0, 0, 4}), fixed(TopologyKind::FixedRing, 4));
  REQUIRE(e.per_node.size() == 4);
  CHECK(e.per_node[0] == doctest::Approx(16.0 / 9.0));
  CHECK(e.per_node[1] == doctest::Approx(0.0));
  CHECK(e.per_node[2] == doctest::Approx(16.0 / 9.0));
  CHECK(e.per_node[3] == doctest::Approx(64.0 / 9.0));
  CHECK(e.theta_sq == doctest::Approx(8.0 / 3.0));
  // Xi <= (2/p) Theta with p = 8/9.
  CHECK(std::sqrt(3.0) <= 9.0 / 4.0 * std::sqrt(e.theta_sq));
}

TEST_CASE("local estimator degenerate and complete cases") {
  const Matrix x = column({1, -2, 0.5, 7});
  CHECK(local_estimator(x, MixingMatrix(Matrix::identity(4))).theta_sq == 0.0);
  CHECK(local_estimator(x, fixed(TopologyKind::Complete, 4)).theta_sq ==
        doctest::Approx(consensus_distance_sq(x)));
}

TEST_CASE("estimator bound holds on random states") {
  Rng rng(2);
  for (int n : {4, 9, 16}) {
    const MixingMatrix w = fixed(TopologyKind::FixedRing, n);
    const double p = w.parameter()->value;
    for (int trial = 0; trial < 200; ++trial) {
      Matrix x(static_cast<std::size_t>(n), 3);
      for (double& v : x.data()) v = rng.normal();
      const double xi = std::sqrt(consensus_distance_sq(x));
      const double theta = std::sqrt(local_estimator(x, w).theta_sq);
      CHECK(xi <= (2.0 / p) * theta * (1.0 + 1e-10));
    }
  }
}

TEST_CASE("critical consensus distance") {
  CHECK(critical_distance_sq(0.0, 0.1, unit_constants(), 4) == 0.0);
  CHECK(critical_distance_sq(8.0, 0.1, unit_constants(1.0), 1) == doctest::Approx(1.1));
  ProblemConstants twice = unit_constants();
  twice.L = 2.0;
  CHECK(critical_distance_sq(3.0, 0.1, twice, 4) ==
        doctest::Approx(critical_distance_sq(3.0, 0.1, unit_constants(), 4) / 4.0));
  ProblemConstants zero = unit_constants();
  zero.L = 0.0;
  CHECK_THROWS_AS(critical_distance_sq(1.0, 0.1, zero, 4), ConfigError);
}

TEST_CASE("critical distance is monotone in its inputs") {
  double prev = -1.0;
  for (double lr : {0.0, 0.01, 0.1, 1.0}) {
    const double g = critical_distance_sq(1.0, lr, unit_constants(2.0), 4);
    CHECK(g >= prev);
    prev = g;
  }
  prev = 1e300;
  for (double L : {0.5, 1.0, 2.0, 4.0}) {
    ProblemConstants c = unit_constants(2.0);
    c.L = L;
    const double g = critical_distance_sq(1.0, 0.1, c, 4);
    CHECK(g <= prev);
    prev = g;
  }
}

TEST_CASE("typical consensus distance bound") {
  CHECK(typical_distance_bound(4.0, 0.1, 0.5, 0.0) == doctest::Approx(0.96));
  CHECK(typical_distance_bound(4.0, 0.1, 1.0, 2.0) == 0.0);
  CHECK(typical_distance_bound(4.0, 0.0, 0.5, 2.0) == 0.0);
  CHECK_THROWS_AS(typical_distance_bound(4.0, 0.1, 0.0, 0.0), ConfigError);
  CHECK_THROWS_AS(distance_recursion_rhs(1.0, 4.0, 0.1, -0.5, 0.0), ConfigError);
  CHECK(distance_recursion_rhs(2.0, 4.0, 0.1, 0.5, 0.0) ==
        doctest::Approx(0.75 * 2.0 + 3.0 * 0.5 * 0.01 / 0.5 * 4.0));
}

TEST_CASE("sufficient conditions") {
  const SufficientConditions s = sufficient_conditions(unit_constants(), 16, 0.1, 0.1);
  CHECK(s.max_stepsize == doctest::Approx(1.0 / 1280.0));
  CHECK_FALSE(s.stepsize_ok);
  CHECK(s.gossip_rounds == 10);

  const SufficientConditions full = sufficient_conditions(unit_constants(), 16, 0.25, 1.0);
  CHECK(full.mixing_ok);
  CHECK(full.gossip_rounds == 2);  // ceil(ln 5)
}

TEST_CASE("all-reduce and uncontrolled use one round") {
  const MixingSchedule ring({TopologyKind::FixedRing, 6, 0}, 1);
  Matrix x = column({0, 1, 2, 3, 4, 5});
  ControlOutcome o = control_gossip(x, ring, ControlPolicy::all_reduce(), {});
  CHECK(o.gossip_steps == 1);
  CHECK(o.xi_sq == doctest::Approx(0.0));
  CHECK(x(3, 0) == doctest::Approx(2.5));

  x = column({0, 1, 2, 3, 4, 5});
  o = control_gossip(x, ring, ControlPolicy::uncontrolled(), {});
  CHECK(o.gossip_steps == 1);
  CHECK(x(0, 0) == doctest::Approx(2.0));  // (5 + 0 + 1) / 3
}

TEST_CASE("complete graph reaches any target in one round") {
  const MixingSchedule complete({TopologyKind::Complete, 5, 0}, 1);
  Matrix x = column({3, -1, 4, 1, -5});
  const double xi = std::sqrt(consensus_distance_sq(x));
  const ControlOutcome o = control_gossip(x, complete, ControlPolicy::constant_target(0.01, xi), {});
  CHECK(o.gossip_steps == 1);
  CHECK(o.xi_sq <= 1e-28);
}

TEST_CASE("target equal to the one-round distance needs one round") {
  const MixingSchedule ring({TopologyKind::FixedRing, 8, 0}, 1);
  Matrix x = column({1, 0, 0, 3, 0, -2, 0, 0});
  const double xi_after = std::sqrt(consensus_distance_sq(ring.at(0, 0).apply(x)));
  const ControlOutcome o = control_gossip(x, ring, ControlPolicy::constant_target(1.0, xi_after), {});
  CHECK(o.gossip_steps == 1);
}

TEST_CASE("ring of eight: count follows the contraction rate") {
  const MixingSchedule ring({TopologyKind::FixedRing, 8, 0}, 1);
  std::vector<double> v;
  for (int i = 0; i < 8; ++i) v.push_back(std::cos(2.0 * std::numbers::pi * i / 8.0));
  Matrix x = column(v);  // slowest eigenvector
  const double xi0 = std::sqrt(consensus_distance_sq(x));
  const double p = ring.at(0, 0).parameter()->value;
  const int predicted = static_cast<int>(std::ceil(std::log(0.25) / std::log(std::sqrt(1.0 - p))));
  const ControlOutcome o = control_gossip(x, ring, ControlPolicy::constant_target(0.25, xi0), {});
  CHECK(std::abs(o.gossip_steps - predicted) <= 1);
  CHECK(std::sqrt(o.xi_sq) <= 0.25 * xi0);
}

TEST_CASE("zero factor averages exactly") {
  const MixingSchedule ring({TopologyKind::FixedRing, 4, 0}, 1);
  Matrix x = column({1, 2, 3, 10});
  const ControlOutcome o = control_gossip(x, ring, ControlPolicy::constant_target(0.0, 1.0), {});
  CHECK(o.gossip_steps == 1);
  CHECK(o.xi_sq == doctest::Approx(0.0));
}

TEST_CASE("adaptive and efficient targets") {
  const MixingSchedule ring({TopologyKind::FixedRing, 10, 0}, 1);
  Rng rng(6);
  Matrix start(10, 2);
  for (double& v : start.data()) v = rng.normal();
  const double p = ring.at(0, 0).parameter()->value;

  Matrix x = start;
  ControlContext ctx{3, 0.2, p};
  ControlOutcome o = control_gossip(x, ring, ControlPolicy::adaptive_target(0.5), ctx);
  CHECK(std::sqrt(o.xi_sq) <= 0.1);

  x = start;
  o = control_gossip(x, ring, ControlPolicy::efficient_theta(0.5), ctx);
  CHECK(std::sqrt(o.xi_sq) <= (2.0 / p) * 0.5 * 0.2);
}

TEST_CASE("gossip cap raises an unreachable-target error") {
  const MixingSchedule ring({TopologyKind::FixedRing, 16, 0}, 1);
  Matrix x = column({0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 16});
  ControlPolicy policy = ControlPolicy::constant_target(1e-6, 1.0);
  policy.max_gossip = 5;
  try {
    control_gossip(x, ring, policy, {42, 0.0, 1.0});
    FAIL("expected UnreachableTargetError");
  } catch (const UnreachableTargetError& e) {
    CHECK(e.iteration() == 42);
    CHECK(e.achieved_xi() > e.target());
  }
}

TEST_CASE("policy validation") {
  CHECK_THROWS_AS(ControlPolicy::constant_target(1.5, 1.0).validate(), ConfigError);
  CHECK_THROWS_AS(ControlPolicy::adaptive_target(0.0).validate(), ConfigError);
  CHECK_THROWS_AS(ControlPolicy::efficient_theta(-1.0).validate(), ConfigError);
  CHECK(parse_control_mode(to_string(ControlMode::EfficientTheta)) == ControlMode::EfficientTheta);
  CHECK(ControlPolicy::constant_target(0.25).label() == "constant-0.25");
}

TEST_CASE("EMA tracker") {
  EmaTracker ema(0.9);
  CHECK_FALSE(ema.value());
  CHECK(ema.update(2.0) == doctest::Approx(2.0));
  CHECK(ema.update(4.0) == doctest::Approx(0.9 * 2.0 + 0.1 * 4.0));
  ema.reset();
  CHECK_FALSE(ema.value());
  CHECK(ema.update(1.0) == doctest::Approx(1.0));
}

TEST_CASE("Xi_max sidecar round trip") {
  const auto path = scratch("xi_max_roundtrip.txt");
  const std::vector<double> values{0.1234567890123456789, 2.0, 1e-300};
  write_xi_max(path, values);
  const auto back = read_xi_max(path);
  REQUIRE(back.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) CHECK(back[k] == values[k]);

  const auto bad = scratch("xi_max_bad.txt");
  std::ofstream(bad) << "1 0.5\n3 0.25\n";
  CHECK_THROWS_AS(read_xi_max(bad), ConfigError);
  CHECK_THROWS_AS(read_xi_max(scratch("missing_sidecar.txt")), ConfigError);
}
