#pragma once

// Thermo-hydraulic plant: static loads with local flow control, demand-driven
// network flows and upwind finite-volume pipes with heat loss to the ground.

#include <Eigen/Dense>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dhs/topology.hpp"

namespace dhs {

struct PhysConstants {
  double c_w = 4186.0;  // J/(kg K)
  double rho = 1000.0;  // kg/m^3
  double T_ext = 10.0;  // ground temperature, degC
};

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Return temperature of a load extracting `P` watts from flow `q`.
double load_output_temp(double T_s, double P, double q, const PhysConstants& c);

// Flow set by the load's local controller: the static inversion of the load
// balance at the reference temperature, clamped to the flow limits.
double load_flow(double T_s, double P, const LoadParams& limits, const PhysConstants& c);

double station_power(double q0, double T0s, double T0r, const PhysConstants& c);

// Cell temperatures of one pipe, ordered along the edge's from -> to direction.
struct PipeState {
  std::vector<double> cells;
  double cell_length = 0.0;

  double outlet() const { return cells.back(); }
};

PipeState make_pipe_state(const PipeEdge& edge, double max_cell_length, double T_init);

struct PipeStepResult {
  PipeState state;
  double T_out = 0.0;
};

// Advances one pipe by `dt` with flow q >= 0 entering at the `from` end,
// sub-stepping so that each sub-step satisfies the CFL bound.
PipeStepResult pipe_step(PipeState p, double q, double T_in, double dt, const PipeEdge& edge,
                         const PhysConstants& c);

struct SimConfig {
  PhysConstants constants;
  double tau_s = 300.0;
  double cell_length = 100.0;
  double load_filter_tau = 0.0;  // s; 0 disables the first-order flow filter
  // Relative share of a node group's throughflow drawn through an inlet edge,
  // keyed by (from, to). Missing entries weigh 1.
  std::map<std::pair<int, int>, double> split_weights;
};

// One physical pipe. A reversible edge pair maps onto a single link.
struct Link {
  int from = 0;
  int to = 0;
  bool reversible = false;
  double length = 0.0;
  double diameter = 0.0;
  double heat_loss_coeff = 0.0;
  std::size_t cells = 1;
  double cell_mass = 0.0;  // kg
  double cell_loss = 0.0;  // W/K
};

struct FlowField {
  std::vector<double> link_flow;   // signed: positive runs from -> to on the supply side
  std::vector<double> supply_flow; // q_i^s per node id: supply outflow after the load draw
  std::vector<double> return_flow; // q_i^r per node id: return outflow towards the station
  std::vector<double> load_flow;   // q_i^c in load order
  double q0 = 0.0;
};

struct SimState {
  std::vector<PipeState> supply;  // per link
  std::vector<PipeState> ret;     // per link, same cell orientation as `supply`
  FlowField flows;                // flows applied during the previous step
  long step = 0;
};

struct StepInputs {
  double T0s = 75.0;
  std::vector<double> demands;  // W, load order
};

class PlantLayout {
 public:
  PlantLayout(NetworkGraph graph, SimConfig config);

  const NetworkGraph& graph() const { return graph_; }
  const SimConfig& config() const { return config_; }
  const std::vector<Link>& links() const { return links_; }
  const std::vector<NodeId>& loads() const { return loads_; }
  std::size_t load_count() const { return loads_.size(); }
  std::size_t node_slots() const { return node_slots_; }
  std::size_t output_size() const { return 2 + 3 * loads_.size(); }
  std::vector<std::string> output_names() const;
  std::vector<std::string> disturbance_names() const;

  FlowField network_flows(std::span<const double> load_flows) const;

  SimState initial_state(double T_supply, double T_return) const;

 private:
  struct Group {
    std::vector<int> members;                // node ids
    std::vector<std::size_t> inlets;         // fixed links entering the group
    std::vector<std::size_t> outlets;        // fixed links leaving the group
    std::vector<std::size_t> internal;       // reversible links inside the group
  };

  NetworkGraph graph_;
  SimConfig config_;
  std::vector<Link> links_;
  std::vector<NodeId> loads_;
  std::vector<int> load_slot_;  // node id -> load index or -1
  std::size_t node_slots_ = 0;
  std::vector<Group> groups_;
  std::vector<std::size_t> group_order_;  // upstream first
  std::vector<std::size_t> group_of_;     // node id -> group
};

FlowField network_flows(const NetworkGraph& g, std::span<const double> load_flows);

// One sampling period of the plant. Outputs follow the channel order
// [T0r, q0, {T_is, T_ic, q_ic}] and describe the state at the start of the
// step under the current inputs.
std::pair<SimState, Eigen::VectorXd> sim_step(const PlantLayout& layout, const SimState& state,
                                              const StepInputs& in);

// Ground losses of all supply and return cells, W.
double pipe_heat_loss(const PlantLayout& layout, const SimState& state);

class Simulator {
 public:
  explicit Simulator(PlantLayout layout);
  Simulator(PlantLayout layout, SimState state);

  Eigen::VectorXd step(double T0s, std::span<const double> demands);
  // Runs at constant inputs for the given duration and discards the outputs.
  void warm_start(double T0s, std::span<const double> demands, double hours);

  const PlantLayout& layout() const { return layout_; }
  const SimState& state() const { return state_; }

 private:
  PlantLayout layout_;
  SimState state_;
};

// Output channel indices.
inline std::size_t channel_T0r() { return 0; }
inline std::size_t channel_q0() { return 1; }
inline std::size_t channel_Ts(std::size_t load) { return 2 + 3 * load; }
inline std::size_t channel_Tc(std::size_t load) { return 3 + 3 * load; }
inline std::size_t channel_qc(std::size_t load) { return 4 + 3 * load; }

}  // namespace dhs
