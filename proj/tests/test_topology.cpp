#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <doctest.h>

#include "dsgd/errors.hpp"
#include "dsgd/topology.hpp"

using namespace dsgd;

namespace {

MixingMatrix build(TopologyKind kind, int n, std::int64_t round = 0, std::uint64_t seed = 7) {
  Rng rng = Rng::stream(seed, StreamTag::Mixing, static_cast<std::uint64_t>(round));
  return build_mixing({kind, n, seed}, round, rng);
}

}  // namespace

TEST_CASE("complete graph is uniform averaging with p = 1") {
  const MixingMatrix w = build(TopologyKind::Complete, 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(w(i, j) == doctest::Approx(0.25));
  CHECK(w.parameter()->value == doctest::Approx(1.0));
  CHECK(w.degree(0) == 4);
}

TEST_CASE("random matching on two nodes always pairs them") {
  for (std::int64_t t = 0; t < 5; ++t) {
    const MixingMatrix w = build(TopologyKind::RandomMatching, 2, t);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) CHECK(w(i, j) == doctest::Approx(0.5));
    CHECK(exact_mixing_parameter(w) == doctest::Approx(1.0));
  }
}

TEST_CASE("ring of four: eigenvalues 1, 1/3, 1/3, -1/3 give p = 8/9") {
  const MixingMatrix w = build(TopologyKind::FixedRing, 4);
  CHECK(spectral_gap(w) == doctest::Approx(2.0 / 3.0));
  CHECK(w.parameter()->value == doctest::Approx(8.0 / 9.0));
  CHECK(w.parameter()->exact);
  CHECK(w.degree(0) == 2);
}

TEST_CASE("closed-form ring parameter matches the eigendecomposition") {
  for (int n : {3, 5, 8, 16, 33}) {
    const MixingMatrix w = build(TopologyKind::FixedRing, n);
    CHECK(w.parameter()->value == doctest::Approx(parameter_from_gap(spectral_gap(w))).epsilon(1e-10));
  }
}

TEST_CASE("identity has zero spectral gap") {
  CHECK(spectral_gap(MixingMatrix(Matrix::identity(5))) == doctest::Approx(0.0));
}

TEST_CASE("ring gap shrinks like 1/n^2") {
  const double r32 = spectral_gap(build(TopologyKind::FixedRing, 32));
  const double r64 = spectral_gap(build(TopologyKind::FixedRing, 64));
  CHECK(r64 / r32 == doctest::Approx(0.25).epsilon(0.02));
}

TEST_CASE("every kind is doubly stochastic with non-negative weights") {
  for (auto kind : {TopologyKind::Complete, TopologyKind::FixedRing, TopologyKind::ExponentialOnePeer,
                    TopologyKind::BipartiteExponential, TopologyKind::RandomMatching}) {
    for (int n : {2, 3, 7, 16, 33}) {
      for (std::int64_t t = 0; t < 6; ++t) {
        const MixingMatrix w = build(kind, n, t);
        CHECK(w.doubly_stochastic(1e-12));
        for (double v : w.weights().data()) CHECK(v >= 0.0);
      }
    }
  }
}

TEST_CASE("degrees per round") {
  CHECK(build(TopologyKind::ExponentialOnePeer, 16).degree(3) == 2);
  CHECK(build(TopologyKind::BipartiteExponential, 16).degree(3) == 1);
  CHECK(build(TopologyKind::RandomMatching, 16).degree(3) == 1);
}

TEST_CASE("fewer than two nodes is a configuration error") {
  CHECK_THROWS_AS(TopologySpec({TopologyKind::FixedRing, 1, 0}).validate(), ConfigError);
  Rng rng(1);
  CHECK_THROWS_AS(build_mixing({TopologyKind::Complete, 1, 0}, 0, rng), ConfigError);
}

TEST_CASE("spectral gap rejects non-symmetric matrices") {
  Matrix m(3, 3, 0.0);
  m(0, 1) = m(1, 2) = m(2, 0) = 1.0;  // doubly stochastic permutation, not symmetric
  CHECK_THROWS_AS(spectral_gap(MixingMatrix(m)), UnsupportedMatrixError);
}

TEST_CASE("exponential schedule period is floor(log2(n-1)) + 1") {
  CHECK(TopologySpec{TopologyKind::ExponentialOnePeer, 16, 0}.period() == 4);
  CHECK(TopologySpec{TopologyKind::ExponentialOnePeer, 17, 0}.period() == 5);
  CHECK(TopologySpec{TopologyKind::BipartiteExponential, 2, 0}.period() == 1);
  CHECK(TopologySpec{TopologyKind::FixedRing, 16, 0}.period() == 1);
  CHECK(TopologySpec{TopologyKind::RandomMatching, 16, 0}.time_varying());
  CHECK_FALSE(TopologySpec{TopologyKind::FixedRing, 16, 0}.time_varying());
}

TEST_CASE("compose_gossip carries the repeated-gossip bound") {
  const MixingMatrix w(Matrix::identity(3), MixingParameter::exact_value(0.75));
  const std::vector<MixingMatrix> two{w, w};
  CHECK(compose_gossip(two).parameter()->value == doctest::Approx(0.9375));
  const std::vector<MixingMatrix> one{w};
  CHECK(compose_gossip(one).parameter()->value == doctest::Approx(0.75));
}

TEST_CASE("repeated ring gossip satisfies the product bound") {
  const MixingMatrix w = build(TopologyKind::FixedRing, 8);
  std::vector<MixingMatrix> ws;
  for (int k = 1; k <= 4; ++k) {
    ws.push_back(w);
    const MixingMatrix prod = compose_gossip(ws);
    CHECK(exact_mixing_parameter(prod) >= prod.parameter()->value - 1e-12);
  }
}

TEST_CASE("eigenvalue floor") {
  CHECK(eigenvalue_floor_check(build(TopologyKind::Complete, 4)));
  CHECK_FALSE(eigenvalue_floor_check(MixingMatrix(Matrix::identity(4), MixingParameter::exact_value(0.5))));
}

TEST_CASE("Monte-Carlo estimate of p") {
  Rng rng(11);
  const MixingEstimate complete = estimate_mixing_parameter({TopologyKind::Complete, 8, 0}, 200, rng);
  CHECK(complete.p_hat == doctest::Approx(1.0));
  const MixingEstimate ring = estimate_mixing_parameter({TopologyKind::FixedRing, 4, 0}, 500, rng);
  CHECK(ring.p_hat >= 8.0 / 9.0 - 1e-9);

  const MixingEstimate m16 = estimate_mixing_parameter({TopologyKind::RandomMatching, 16, 3}, 1000, rng);
  const MixingEstimate m32 = estimate_mixing_parameter({TopologyKind::RandomMatching, 32, 3}, 1000, rng);
  CHECK(m32.p_hat / m16.p_hat >= 0.5);
  CHECK(m16.lower <= m16.p_hat);
  CHECK(m16.p_hat <= m16.upper);

  CHECK_THROWS_AS(estimate_mixing_parameter({TopologyKind::RandomMatching, 8, 0}, 99, rng), ConfigError);
}

TEST_CASE("contraction never exceeds 1 - p on a fixed ring") {
  const MixingMatrix w = build(TopologyKind::FixedRing, 10);
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix x(10, 3);
    for (double& v : x.data()) v = rng.normal();
    CHECK(contraction_ratio(w, x) <= 1.0 - w.parameter()->value + 1e-12);
  }
}

TEST_CASE("schedule is deterministic in (seed, t, k)") {
  const MixingSchedule a({TopologyKind::RandomMatching, 12, 4}, 9);
  const MixingSchedule b({TopologyKind::RandomMatching, 12, 4}, 9);
  CHECK(a.at(17, 2).weights() == b.at(17, 2).weights());
  CHECK(a.at(17, 0).weights() != a.at(18, 0).weights());
}

TEST_CASE("csv dump has one row per node") {
  const std::string csv = to_csv(build(TopologyKind::Complete, 3));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(csv.find("0.25") == std::string::npos);
  CHECK(csv.find("0.33333333333333331") != std::string::npos);
}
