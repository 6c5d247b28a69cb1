#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dhs/closed_loop.hpp"
#include "dhs/nmpc.hpp"
#include "fd_oracle.hpp"
#include "plant_fixture.hpp"

using namespace dhs;
using Eigen::Index;

namespace {

const PiRnnModel& model() {
  static const PiRnnModel m = fixture::trained_pi_gru(30, 20);
  return m;
}

NmpcConfig small_config() {
  NmpcConfig c;
  c.N = 12;
  c.N_b = 2;
  c.max_iterations = 40;
  return c;
}

NmpcProblem problem(const NmpcConfig& c, Index k_s = 100) {
  NmpcProblem p;
  p.model = &model();
  const Eigen::MatrixXd warm = periodic_extend(default_demand_profile({5e5, 4e5, 4.5e5, 3.5e5, 3e5}), 48);
  Eigen::MatrixXd U(48, 6);
  U.col(0).setConstant(75.0);
  U.rightCols(5) = warm;
  p.x0 = rollout(model(), model().zero_state(), U).states.row(48).transpose();
  p.demands = periodic_extend(default_demand_profile({5e5, 4e5, 4.5e5, 3.5e5, 3e5}), k_s + c.N).bottomRows(c.N);
  p.prices = periodic_extend(default_price_profile(), k_s + c.N).col(0).tail(c.N);
  p.u_prev = 75.0;
  p.k_s = k_s;
  return p;
}

// Bounds wide enough that no soft constraint can be active.
NmpcConfig loose(NmpcConfig c) {
  c.T0r_min = -1e3;
  c.T0r_max = 1e3;
  c.P0_min = -1e15;
  c.P0_max = 1e15;
  c.Ts_max = 1e3;
  c.Ts_min_day = c.Ts_min_night = -1e3;
  c.dT_max = 1e3;
  return c;
}

}  // namespace

TEST_CASE("input blocking") {
  const Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(12, 66, 77);
  const Eigen::VectorXd full = blocking_expand(b, 72, 6);
  REQUIRE(full.size() == 72);
  for (Index k = 0; k < 72; ++k) CHECK(full(k) == b(k / 6));
  const Eigen::VectorXd id = Eigen::VectorXd::LinSpaced(5, 1, 5);
  CHECK(blocking_expand(id, 5, 1) == id);
  CHECK(blocking_expand(Eigen::VectorXd::Constant(1, 70.0), 3, 3) == Eigen::VectorXd::Constant(3, 70.0));
  // The last block is truncated at the horizon end.
  CHECK(blocking_expand(Eigen::Vector2d(1, 2), 5, 3) == (Eigen::VectorXd(5) << 1, 1, 1, 2, 2).finished());
  CHECK_THROWS(blocking_expand(Eigen::VectorXd::Zero(3), 72, 6));
  CHECK(NmpcConfig{}.blocks() == 12);
}

TEST_CASE("load bound schedule") {
  const NmpcConfig c;
  CHECK(c.Ts_lower(0) == 65.0);
  CHECK(c.Ts_lower(83) == 65.0);
  CHECK(c.Ts_lower(84) == 70.0);
  CHECK(c.Ts_lower(228) == 70.0);
  CHECK(c.Ts_lower(229) == 65.0);
  CHECK(c.Ts_lower(288 + 100) == 70.0);
}

TEST_CASE("objective terms") {
  NmpcConfig c = loose(small_config());
  NmpcProblem p = problem(c);
  const Eigen::VectorXd u = Eigen::VectorXd::Constant(c.blocks(), 74.0);

  SUBCASE("zero prices and terminal weight give zero objective") {
    p.prices.setZero();
    c.c_t = 0.0;
    const Objective o = objective_and_constraints(p, u, c);
    CHECK(o.value == 0.0);
    CHECK(o.gradient.isZero(0.0));
    CHECK(o.violation.isZero(0.0));
  }
  SUBCASE("doubling eta halves the energy cost") {
    const Objective a = objective_and_constraints(p, u, c);
    c.eta *= 2.0;
    const Objective b = objective_and_constraints(p, u, c);
    CHECK(a.energy_cost > 0.0);
    CHECK(b.energy_cost == doctest::Approx(a.energy_cost / 2.0).epsilon(1e-15));
    CHECK(b.terminal == a.terminal);
  }
  SUBCASE("energy cost matches the predicted station power") {
    const Objective o = objective_and_constraints(p, u, c);
    double want = 0.0;
    for (Index k = 0; k < c.N; ++k) {
      const double P0 = c.c_w * o.predicted(k, 1) * (74.0 - o.predicted(k, 0));
      want += p.prices(k) * P0 * c.tau_s / 3600.0 / 1000.0 / c.eta;
    }
    CHECK(o.energy_cost == doctest::Approx(want).epsilon(1e-12));
    double term = 0.0;
    for (Index l = 0; l < 5; ++l) term += std::pow(o.predicted(c.N - 1, channel_Ts(static_cast<std::size_t>(l))) - c.T_star, 2);
    CHECK(o.terminal == doctest::Approx(c.c_t * term).epsilon(1e-12));
  }
}

TEST_CASE("objective gradient matches finite differences") {
  const NmpcConfig c = small_config();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> T(66, 84);
  double worst = 0.0;
  int checked = 0;
  for (Index k_s : {20, 100, 200}) {
    NmpcProblem p = problem(c, k_s);
    for (int trial = 0; trial < 12; ++trial) {
      // Rate-feasible points; huge rate penalties would swamp the difference quotient in round-off.
      std::uniform_real_distribution<double> step(-4.0, 4.0);
      p.u_prev = T(rng);
      Eigen::VectorXd u(c.blocks());
      for (Index i = 0; i < u.size(); ++i) u(i) = std::clamp((i ? u(i - 1) : p.u_prev) + step(rng), 65.5, 84.5);
      const Objective o = objective_and_constraints(p, u, c);
      auto f = [&](const Eigen::VectorXd& v) { return objective_and_constraints(p, v, c, false).value; };
      const auto r = fd::check(f, u, o.gradient, 100, static_cast<std::uint64_t>(trial), 1e-5);
      worst = std::max(worst, r.worst);
      checked += r.checked;
    }
  }
  CHECK(checked >= 200);
  CHECK(worst < 1e-4);
}

TEST_CASE("solver") {
  const NmpcConfig c = small_config();
  const NmpcProblem p = problem(c);

  SUBCASE("box, blocking and monotone trace") {
    const NmpcSolution s = solve(p, c);
    CHECK(s.trajectory.size() == c.N);
    for (Index k = 0; k < c.N; ++k) {
      CHECK(s.trajectory(k) >= c.T0s_min);
      CHECK(s.trajectory(k) <= c.T0s_max);
      if (k % c.N_b != 0) CHECK(s.trajectory(k) == s.trajectory(k - 1));
    }
    CHECK(std::abs(s.trajectory(0) - p.u_prev) <= c.dT_max);
    for (std::size_t i = 1; i < s.objective_trace.size(); ++i) {
      CHECK(s.objective_trace[i] <= s.objective_trace[i - 1]);
    }
    CHECK(s.objective <= objective_and_constraints(p, Eigen::VectorXd::Constant(c.blocks(), 75.0), c, false).value);
    CHECK((s.slack.array() >= 0.0).all());

    // Re-solving from a converged answer stays put.
    NmpcConfig patient = c;
    patient.max_iterations = 1000;
    const NmpcSolution full = solve(p, patient);
    REQUIRE(full.converged);
    CHECK(full.objective <= s.objective);
    const NmpcSolution again = solve(p, patient, full.blocked);
    CHECK(again.objective <= full.objective);
    CHECK(full.objective - again.objective <= 1e-6 * std::max(1.0, std::abs(full.objective)));

    const NmpcSolution twice = solve(p, c);
    CHECK(twice.blocked == s.blocked);
  }
  SUBCASE("degenerate box pins the input") {
    NmpcConfig d = c;
    d.T0s_min = d.T0s_max = 75.0;
    const NmpcSolution s = solve(p, d);
    CHECK(s.trajectory == Eigen::VectorXd::Constant(c.N, 75.0));
  }
  SUBCASE("first block respects the rate limit against the previous input") {
    NmpcProblem q = p;
    q.u_prev = 66.0;
    const auto [lo, hi] = nmpc_bounds(q, c);
    CHECK(lo(0) == 65.0);
    CHECK(hi(0) == 71.0);
    CHECK(lo(1) == 65.0);
    CHECK(hi(1) == 85.0);
  }
  SUBCASE("warm start shifts by one step") {
    NmpcSolution s;
    s.blocked = Eigen::VectorXd::LinSpaced(c.blocks(), 70, 81);
    s.trajectory = blocking_expand(s.blocked, c.N, c.N_b);
    const Eigen::VectorXd w = shift_warm_start(s, c);
    REQUIRE(w.size() == c.blocks());
    for (Index i = 0; i + 1 < w.size(); ++i) CHECK(w(i) == s.trajectory(i * c.N_b + 1));
    CHECK(w(w.size() - 1) == s.trajectory(c.N - 1));
  }
  CHECK_THROWS(solve(p, c, Eigen::VectorXd::Zero(3)));
}

TEST_CASE("observer and rule-based controller") {
  const Dataset d = fixture::plant_dataset(80, 3);
  const Eigen::MatrixXd U = d.model_inputs();
  const Rollout r = rollout(model(), model().zero_state(), U);
  ObserverState o{model().zero_state(), {}};
  ObserverState o2 = o;
  for (Index k = 0; k < U.rows(); ++k) {
    o = observer_update(model(), o, U(k, 0), U.row(k).tail(5).transpose());
    o2 = observer_update(model(), o2, U(k, 0), U.row(k).tail(5).transpose());
  }
  CHECK(o.x == r.states.row(U.rows()).transpose());
  CHECK(o.x == o2.x);
  CHECK(o.x.size() == 30);

  CHECK(RuleBasedController(75.0, 65.0, 85.0).decide() == 75.0);
  CHECK_THROWS(RuleBasedController(90.0, 65.0, 85.0));
}

TEST_CASE("performance indexes") {
  std::vector<StepRecord> recs(288);
  for (auto& s : recs) {
    s.price = 0.2;
    s.P0 = 1e6;
    s.P_loads = 1e6;
  }
  PerformanceIndexes p = performance_indexes(recs, 300.0, 2.5);
  CHECK(p.C_p == doctest::Approx(0.2 * 1000.0 * 24.0 / 2.5).epsilon(1e-13));
  CHECK(p.P_loss_sum == 0.0);
  CHECK(p.t_avg == 0.0);
  for (std::size_t k = 0; k < recs.size(); ++k) {
    recs[k].P_loads = 9e5;
    recs[k].solve_time = k % 2 ? 0.0 : 2.0;
    recs[k].iterations = k % 2 ? 0 : 5;
  }
  p = performance_indexes(recs, 300.0, 2.5);
  CHECK(p.P_loss_sum == doctest::Approx(288 * 1e5));
  CHECK(p.P_loss_mean == doctest::Approx(1e5));
  CHECK(p.t_avg == 2.0);
}

TEST_CASE("profiles") {
  const Eigen::MatrixXd dem = default_demand_profile({5e5, 4e5});
  CHECK(dem.rows() == 288);
  CHECK(dem.cols() == 2);
  CHECK(dem.col(0).maxCoeff() == doctest::Approx(5e5));
  CHECK(dem.minCoeff() > 0.0);
  const Eigen::VectorXd price = default_price_profile();
  CHECK(price.size() == 288);
  CHECK(price.minCoeff() > 0.0);
  const Eigen::MatrixXd ext = periodic_extend(dem, 300);
  CHECK(ext.row(290) == dem.row(2));

  const std::string csv = format_profile_csv(dem, {"P1", "P2"}, "fp");
  const Eigen::MatrixXd back = parse_profile_csv(csv);
  CHECK(back == dem);
  CHECK(parse_profile_csv("k,value\n0,1.5\n1,2.5\n") == Eigen::Vector2d(1.5, 2.5));
  CHECK_THROWS(parse_profile_csv("k,value\n0,1\n2,3\n"));
  CHECK_THROWS(parse_profile_csv("k,value\n0,abc\n"));
}

TEST_CASE("short closed loops") {
  const PlantLayout layout(aroma_topology(), SimConfig{});
  ClosedLoopConfig cfg;
  cfg.steps = 6;
  cfg.warm_start_hours = 6.0;
  cfg.nmpc = small_config();
  cfg.nmpc.max_iterations = 10;
  const Eigen::MatrixXd dem = periodic_extend(default_demand_profile({5e5, 4e5, 4.5e5, 3.5e5, 3e5}), 40);
  const Eigen::VectorXd price = periodic_extend(default_price_profile(), 40).col(0);

  ControllerSpec rule;
  rule.label = "rule";
  const ClosedLoopResult r = closed_loop(layout, rule, dem, price, cfg);
  REQUIRE(r.records.size() == 6);
  for (const auto& s : r.records) {
    CHECK(s.T0s == 75.0);
    CHECK(s.solve_time == 0.0);
  }
  CHECK(r.indexes.t_avg == 0.0);

  ControllerSpec mpc;
  mpc.kind = ControllerKind::nmpc;
  mpc.model = &model();
  mpc.label = "mpc";
  const ClosedLoopResult n = closed_loop(layout, mpc, dem, price, cfg);
  REQUIRE(n.records.size() == 6);
  double prev = cfg.T_initial;
  for (const auto& s : n.records) {
    CHECK(s.T0s >= 65.0);
    CHECK(s.T0s <= 85.0);
    CHECK(std::abs(s.T0s - prev) <= cfg.nmpc.dT_max + 1e-6);
    prev = s.T0s;
  }
  CHECK(n.max_rate <= cfg.nmpc.dT_max + 1e-6);
  CHECK(n.indexes.t_avg > 0.0);
  const std::string csv = format_closed_loop_csv(n, "fp");
  CHECK(csv == format_closed_loop_csv(closed_loop(layout, mpc, dem, price, cfg), "fp"));

  ClosedLoopConfig too_long = cfg;
  too_long.steps = 39;
  CHECK_THROWS(closed_loop(layout, mpc, dem, price, too_long));
}
