#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "dhs/dataset.hpp"
#include "dhs/simulator.hpp"

using namespace dhs;
using Eigen::Index;

namespace {

NetworkGraph loads_graph(int n_loads, const std::vector<std::pair<int, int>>& edges) {
  NetworkGraph g;
  g.name = "t";
  g.nodes.push_back({NodeId{0}, NodeKind::station, {}});
  for (int i = 1; i <= n_loads; ++i) g.nodes.push_back({NodeId{i}, NodeKind::load, {}});
  for (auto [a, b] : edges) {
    PipeEdge e;
    e.from = NodeId{a};
    e.to = NodeId{b};
    e.length = 200.0;
    e.diameter = 0.1;
    g.edges.push_back(e);
  }
  return g;
}

// Inflow minus outflow minus load draw, per node, from signed link flows.
std::vector<double> node_residuals(const PlantLayout& L, const FlowField& f) {
  std::vector<double> r(L.node_slots(), 0.0);
  for (std::size_t i = 0; i < L.links().size(); ++i) {
    const auto& l = L.links()[i];
    r[static_cast<std::size_t>(l.to)] += f.link_flow[i];
    r[static_cast<std::size_t>(l.from)] -= f.link_flow[i];
  }
  r[0] += f.q0;
  for (std::size_t k = 0; k < L.load_count(); ++k) r[static_cast<std::size_t>(L.loads()[k].index)] -= f.load_flow[k];
  return r;
}

}  // namespace

TEST_CASE("load and station algebra") {
  PhysConstants c;
  CHECK(load_output_temp(80, 0, 1, c) == 80.0);
  CHECK(load_output_temp(80, 41860, 1, c) == doctest::Approx(70.0).epsilon(1e-14));
  CHECK(load_output_temp(70, 20930, 0.5, c) == doctest::Approx(60.0).epsilon(1e-14));
  CHECK_THROWS_AS(load_output_temp(70, 1000, 0.0, c), SimulationError);

  LoadParams lp;
  CHECK(load_flow(80, 146510, lp, c) == doctest::Approx(1.0).epsilon(1e-14));
  LoadParams tight{45.0, 0.1, 5.0};
  CHECK(load_flow(46, 500000, tight, c) == 5.0);
  CHECK(load_flow(80, 0, lp, c) == lp.q_min);
  // Unsaturated flow returns exactly at the reference.
  const double q = load_flow(72, 300e3, lp, c);
  CHECK(load_output_temp(72, 300e3, q, c) == doctest::Approx(45.0).epsilon(1e-13));

  CHECK(station_power(1, 80, 70, c) == doctest::Approx(41860.0));
  CHECK(station_power(0, 80, 70, c) == 0.0);
  CHECK(station_power(2, 75, 75, c) == 0.0);
}

TEST_CASE("network flow balances") {
  SUBCASE("bundled network, unit load flows") {
    PlantLayout L(aroma_topology(), SimConfig{});
    std::vector<double> ones(5, 1.0);
    const FlowField f = L.network_flows(ones);
    CHECK(f.q0 == doctest::Approx(5.0).epsilon(1e-15));
    for (double r : node_residuals(L, f)) CHECK(std::abs(r) < 1e-12);
  }
  SUBCASE("weighted inlet split") {
    SimConfig cfg;
    cfg.split_weights[{1, 3}] = 1.0;
    cfg.split_weights[{2, 3}] = 2.0;
    PlantLayout L(loads_graph(4, {{0, 1}, {0, 2}, {1, 3}, {2, 3}, {3, 4}}), cfg);
    const FlowField f = L.network_flows(std::vector<double>{0.2, 0.3, 0.5, 2.5});
    CHECK(f.supply_flow[3] == doctest::Approx(2.5).epsilon(1e-14));
    for (std::size_t i = 0; i < L.links().size(); ++i) {
      const auto& l = L.links()[i];
      if (l.from == 1 && l.to == 3) CHECK(f.link_flow[i] == doctest::Approx(1.0).epsilon(1e-14));
      if (l.from == 2 && l.to == 3) CHECK(f.link_flow[i] == doctest::Approx(2.0).epsilon(1e-14));
    }
  }
  SUBCASE("equal split") {
    PlantLayout L(loads_graph(3, {{0, 1}, {0, 2}, {1, 3}, {2, 3}}), SimConfig{});
    const FlowField f = L.network_flows(std::vector<double>{0.0, 0.0, 2.0});
    for (std::size_t i = 0; i < L.links().size(); ++i) {
      if (L.links()[i].to == 3) CHECK(f.link_flow[i] == doctest::Approx(1.0).epsilon(1e-14));
    }
  }
}

TEST_CASE("mass balance holds every step under random inputs") {
  PlantLayout L(aroma_topology(), SimConfig{});
  Simulator sim(L);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> T(65, 85), P(100e3, 800e3);
  for (int k = 0; k < 200; ++k) {
    std::vector<double> d(5);
    for (double& v : d) v = P(rng);
    const Eigen::VectorXd y = sim.step(T(rng), d);
    double sum = 0.0;
    for (std::size_t l = 0; l < 5; ++l) sum += y(static_cast<Index>(channel_qc(l)));
    REQUIRE(std::abs(y(1) - sum) <= 1e-12 * sum);
    for (double r : node_residuals(L, sim.state().flows)) REQUIRE(std::abs(r) <= 1e-12 * sum);
  }
}

TEST_CASE("pipe transport") {
  PhysConstants c;
  PipeEdge e;
  e.length = 1000.0;
  e.diameter = 0.2;
  e.heat_loss_coeff = 0.0;

  SUBCASE("no flow, no loss leaves the pipe unchanged") {
    PipeState p = make_pipe_state(e, 100.0, 60.0);
    p.cells[3] = 70.0;
    auto r = pipe_step(p, 0.0, 90.0, 300.0, e, c);
    CHECK(r.state.cells == p.cells);
    CHECK(r.T_out == p.cells.back());
  }
  SUBCASE("ground temperature is a fixed point") {
    PipeEdge lossy = e;
    lossy.heat_loss_coeff = 0.8;
    PipeState p = make_pipe_state(lossy, 100.0, c.T_ext);
    auto r = pipe_step(p, 7.3, c.T_ext, 300.0, lossy, c);
    for (double t : r.state.cells) CHECK(t == doctest::Approx(c.T_ext).epsilon(1e-14));
  }
  SUBCASE("zero-loss pipe delays a step by length over velocity") {
    const double area = std::numbers::pi * e.diameter * e.diameter / 4.0;
    const double q = c.rho * area * 1.0;  // 1 m/s
    PipeState p = make_pipe_state(e, 100.0, 50.0);
    const double dt = 10.0;
    double prev = 50.0, crossing = -1.0;
    for (int k = 1; k <= 300 && crossing < 0; ++k) {
      auto r = pipe_step(p, q, 70.0, dt, e, c);
      p = r.state;
      if (r.T_out >= 60.0) crossing = dt * (k - 1) + dt * (60.0 - prev) / (r.T_out - prev);
      prev = r.T_out;
    }
    const double residence = 100.0;  // one cell at 1 m/s
    CHECK(std::abs(crossing - 1000.0) <= residence);
  }
}

TEST_CASE("steady-state energy closure") {
  PlantLayout L(aroma_topology(), SimConfig{});
  Simulator sim(L);
  const std::vector<double> d{500e3, 400e3, 450e3, 350e3, 300e3};
  sim.warm_start(75.0, d, 96.0);
  const Eigen::VectorXd y = sim.step(75.0, d);
  const double P0 = station_power(y(1), 75.0, y(0), L.config().constants);
  double Pc = 0.0;
  for (std::size_t l = 0; l < 5; ++l) {
    Pc += L.config().constants.c_w * y(static_cast<Index>(channel_qc(l))) *
          (y(static_cast<Index>(channel_Ts(l))) - y(static_cast<Index>(channel_Tc(l))));
  }
  const double losses = pipe_heat_loss(L, sim.state());
  CHECK(losses > 0.0);
  CHECK(std::abs(P0 - Pc - losses) / losses < 1e-6);
}

TEST_CASE("global equilibrium at ground temperature") {
  PlantLayout L(aroma_topology(), SimConfig{});
  const double Te = L.config().constants.T_ext;
  Simulator sim(L, L.initial_state(Te, Te));
  const std::vector<double> zero(5, 0.0);
  for (int k = 0; k < 20; ++k) {
    const Eigen::VectorXd y = sim.step(Te, zero);
    CHECK(y(0) == doctest::Approx(Te).epsilon(1e-14));
    CHECK(y(1) == doctest::Approx(0.5).epsilon(1e-14));
    for (std::size_t l = 0; l < 5; ++l) CHECK(y(static_cast<Index>(channel_Ts(l))) == doctest::Approx(Te).epsilon(1e-14));
  }
}

TEST_CASE("maximum principle") {
  PlantLayout L(aroma_topology(), SimConfig{});
  Simulator sim(L);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> T(65, 85), P(100e3, 800e3);
  double hi = 75.0;
  const double lo = L.config().constants.T_ext;
  for (int k = 0; k < 300; ++k) {
    std::vector<double> d(5);
    for (double& v : d) v = P(rng);
    const double t = T(rng);
    hi = std::max(hi, t);
    sim.step(t, d);
    // Loads only remove heat, so the return side is bounded above only.
    for (const auto& p : sim.state().supply) {
      for (double c : p.cells) REQUIRE((c >= lo - 1e-9 && c <= hi + 1e-9));
    }
    for (const auto& p : sim.state().ret) {
      for (double c : p.cells) REQUIRE(c <= hi + 1e-9);
    }
  }
}

TEST_CASE("supply step reaches loads downstream after upstream") {
  PlantLayout L(aroma_topology(), SimConfig{});
  Simulator sim(L);
  const std::vector<double> d{500e3, 400e3, 450e3, 350e3, 300e3};
  sim.warm_start(70.0, d, 48.0);
  const Eigen::VectorXd y0 = sim.step(70.0, d);
  sim.warm_start(80.0, d, 48.0);
  const Eigen::VectorXd y1 = sim.step(80.0, d);
  Simulator s2(L);
  s2.warm_start(70.0, d, 48.0);
  std::vector<double> arrival(5, -1.0);
  for (int k = 0; k < 200; ++k) {
    const Eigen::VectorXd y = s2.step(80.0, d);
    for (std::size_t l = 0; l < 5; ++l) {
      const auto ch = static_cast<Index>(channel_Ts(l));
      if (arrival[l] < 0 && y(ch) >= 0.5 * (y0(ch) + y1(ch))) arrival[l] = k;
    }
  }
  for (double a : arrival) REQUIRE(a >= 0);
  // Reduced-graph predecessors: 1 <- 0, 2 <- 0, 3 <- 1, 4 <- {2,3}, 5 <- {2,3}.
  CHECK(arrival[2] >= arrival[0]);
  CHECK(arrival[3] >= std::min(arrival[1], arrival[2]));
  CHECK(arrival[4] >= std::min(arrival[1], arrival[2]));
}

TEST_CASE("MPRBS excitation") {
  std::vector<ExcitationChannel> ch{{65, 85, 12, 72}, {100e3, 800e3, 12, 72}};
  const Eigen::MatrixXd a = generate_mprbs(ch, 5000, 42);
  const Eigen::MatrixXd b = generate_mprbs(ch, 5000, 42);
  CHECK(a == b);
  CHECK(a != generate_mprbs(ch, 5000, 43));
  CHECK(a.col(0).minCoeff() >= 65.0);
  CHECK(a.col(0).maxCoeff() <= 85.0);
  for (Index c = 0; c < a.cols(); ++c) {
    Index run = 1;
    for (Index k = 1; k < a.rows(); ++k) {
      if (a(k, c) == a(k - 1, c)) {
        ++run;
      } else {
        REQUIRE(run >= 12);
        REQUIRE(run <= 72);
        run = 1;
      }
    }
    CHECK(run <= 72);
  }
  CHECK_THROWS(generate_mprbs({{1, 1, 12, 72}}, 10, 1));
  CHECK_THROWS(generate_mprbs({{0, 1, 0, 72}}, 10, 1));
}

TEST_CASE("dataset generation, splits and CSV round trip") {
  PlantLayout L(aroma_topology(), SimConfig{});
  std::vector<ExcitationChannel> ch{{65, 85, 12, 72}};
  for (int i = 0; i < 5; ++i) ch.push_back({100e3, 800e3, 12, 72});
  const Eigen::MatrixXd X = generate_mprbs(ch, 1000, 3);
  DatasetOptions o;
  o.fingerprint = "abc";
  const Dataset d = run_dataset(L, X.leftCols(1), X.rightCols(5), o);
  CHECK(d.rows() == 1000);
  CHECK(d.train().size() == 700);
  CHECK(d.val().size() == 150);
  CHECK(d.test().size() == 150);
  CHECK(d.val().begin == d.train().end);
  CHECK(d.outputs.cols() == 17);

  const Dataset again = run_dataset(L, X.leftCols(1), X.rightCols(5), o);
  CHECK(again.outputs == d.outputs);

  const std::string csv = format_dataset_csv(d);
  const Dataset back = parse_dataset_csv(csv);
  CHECK(back.outputs == d.outputs);
  CHECK(back.inputs == d.inputs);
  CHECK(back.disturbances == d.disturbances);
  CHECK(back.n_train == d.n_train);
  CHECK(back.fingerprint == "abc");
  CHECK(format_dataset_csv(back) == csv);

  const Dataset half = d.shrink_training(350);
  CHECK(half.train().size() == 350);
  CHECK(half.outputs_of(half.test()) == d.outputs_of(d.test()));
}

TEST_CASE("paper-sized datasets") {
  PlantLayout L(aroma_topology(), SimConfig{});
  std::vector<ExcitationChannel> ch{{65, 85, 12, 72}};
  for (int i = 0; i < 5; ++i) ch.push_back({100e3, 800e3, 12, 72});
  for (std::size_t n : {15690u, 7845u}) {
    const Eigen::MatrixXd X = generate_mprbs(ch, n, 7);
    CHECK(run_dataset(L, X.leftCols(1), X.rightCols(5), {}).rows() == n);
  }
}
