#include <doctest.h>

#include <random>

#include "gradcheck.hpp"
#include "grca/objective.hpp"

using namespace grca;

namespace {

/// A single-member group whose partition is all background; only the
/// advantage array and trace matter for the surrogate.
GroupRollout one_member(std::vector<double> logp_new, std::vector<double> logp_old) {
  RolloutMember m;
  m.partition.roles.assign(logp_new.size(), TokenRole::kBackground);
  m.trace.logp_new = std::move(logp_new);
  m.trace.logp_old = std::move(logp_old);
  GroupRollout g;
  g.members.push_back(std::move(m));
  return g;
}

RoutedAdvantages advs(std::vector<std::vector<double>> a) {
  RoutedAdvantages r;
  r.per_token = std::move(a);
  return r;
}

}  // namespace

TEST_CASE("policy ratio") {
  LogProbTrace t{{std::log(2.0), 0.0}, {0.0, 0.0}, std::nullopt};
  const auto r = policy_ratio(t);
  CHECK(r[0] == doctest::Approx(2.0));
  CHECK(r[1] == 1.0);
  t.logp_new.pop_back();
  CHECK_THROWS_AS(policy_ratio(t), Error);
  LogProbTrace bad{{NAN}, {0.0}, std::nullopt};
  CHECK_THROWS_AS(policy_ratio(bad), Error);
}

TEST_CASE("clipped surrogate hand examples") {
  const double l15 = std::log(1.5), l05 = std::log(0.5);
  SUBCASE("positive advantage above the clip is capped") {
    const std::vector<GroupRollout> g{one_member({l15}, {0.0})};
    const std::vector<RoutedAdvantages> a{advs({{1.0}})};
    const auto e = evaluate_surrogate(g, a);
    CHECK(e.value == doctest::Approx(1.2));
    CHECK(e.dlogp[0][0] == 0.0);
    CHECK(e.clipped_tokens == 1);
  }
  SUBCASE("negative advantage above the clip keeps the pessimistic term") {
    const std::vector<GroupRollout> g{one_member({l15}, {0.0})};
    const std::vector<RoutedAdvantages> a{advs({{-1.0}})};
    const auto e = evaluate_surrogate(g, a);
    CHECK(e.value == doctest::Approx(-1.5));
    CHECK(e.dlogp[0][0] == doctest::Approx(-1.5));
  }
  SUBCASE("negative advantage below the clip is capped") {
    const std::vector<GroupRollout> g{one_member({l05}, {0.0})};
    const std::vector<RoutedAdvantages> a{advs({{-1.0}})};
    CHECK(clipped_surrogate(g, a) == doctest::Approx(-0.8));
  }
  SUBCASE("token mean then member mean") {
    const std::vector<GroupRollout> g{one_member({0.0, 0.0}, {0.0, 0.0}), one_member({0.0}, {0.0})};
    const std::vector<RoutedAdvantages> a{advs({{1.0, 3.0}}), advs({{-1.0}})};
    const auto e = evaluate_surrogate(g, a);
    CHECK(e.value == doctest::Approx((2.0 - 1.0) / 2.0));
    CHECK(e.dlogp[0][1] == doctest::Approx(3.0 / 4.0));
    CHECK(e.total_tokens == 3);
  }
  SUBCASE("shape mismatch") {
    const std::vector<GroupRollout> g{one_member({0.0, 0.0}, {0.0, 0.0})};
    const std::vector<RoutedAdvantages> a{advs({{1.0}})};
    CHECK_THROWS_AS(evaluate_surrogate(g, a), Error);
  }
}

TEST_CASE("surrogate gradient matches finite differences") {
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto r = testing::surrogate_gradcheck(seed);
    if (!r.unclipped) continue;
    ++checked;
    CHECK(r.rel_error < 1e-5);
    CHECK(r.analytic != 0.0);
  }
  CHECK(checked >= 8);
}

TEST_CASE("sparse vector algebra") {
  SparseVector a, b;
  a.add(0, Eigen::Vector2d(1, 2));
  a.add(10, Eigen::Vector3d(1, 1, 1));
  b.add(10, Eigen::Vector3d(2, 0, 1), 2.0);
  CHECK(a.dot(b) == doctest::Approx(6.0));
  CHECK(a.squared_norm() == doctest::Approx(8.0));
  CHECK(a.max_abs_diff(b) == doctest::Approx(3.0));
  CHECK_THROWS_AS(a.add(0, Eigen::Vector3d(1, 1, 1)), Error);
}

TEST_CASE("restricted score sums the selected tokens") {
  LogProbTrace t;
  t.scores = std::vector<ScoreBlock>{{0, Eigen::Vector2d(1, 2)}, {0, Eigen::Vector2d(3, 4)}, {5, {}}};
  const std::vector<std::size_t> both{0, 1, 2};
  const SparseVector s = restricted_score(t, both);
  CHECK(s.blocks().at(0)[1] == 6.0);
  CHECK(s.blocks().size() == 1);
  LogProbTrace none;
  CHECK_THROWS_AS(restricted_score(none, both), Error);
}

TEST_CASE("variance identity on synthetic samples") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n01;
  std::vector<AnalysisSample> samples;
  for (int i = 0; i < 2000; ++i) {
    AnalysisSample s;
    Eigen::VectorXd v(5);
    for (int k = 0; k < 5; ++k) v[k] = n01(rng);
    s.score.add(3, v);
    s.routed_adv = n01(rng);
    s.broadcast_adv = 0.5 * s.routed_adv + n01(rng);
    CHECK(decomposition_error(s) <= 1e-12);
    samples.push_back(std::move(s));
  }
  const VarianceReport r = variance_analysis(samples);
  CHECK(r.identity_residual <= 1e-12);
  CHECK(r.n_samples == 2000);
  CHECK(r.var_broadcast > 0);

  // Two-sample case against a direct computation with 1/(n-1).
  std::vector<AnalysisSample> two(2);
  two[0].score.add(0, Eigen::Vector2d(1, 0));
  two[1].score.add(0, Eigen::Vector2d(0, 1));
  two[0].broadcast_adv = 2;
  two[1].broadcast_adv = 4;
  two[0].routed_adv = 1;
  two[1].routed_adv = 1;
  const VarianceReport t = variance_analysis(two);
  // broadcast terms (2,0) and (0,4): mean (1,2), deviations (1,-2),(-1,2).
  CHECK(t.var_broadcast == doctest::Approx(10.0));
  CHECK(t.var_routed == doctest::Approx(1.0));
  CHECK_THROWS_AS(variance_analysis(std::span<const AnalysisSample>(two.data(), 1)), Error);
}
