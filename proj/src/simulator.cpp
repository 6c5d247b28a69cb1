#include "dhs/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <queue>

namespace dhs {

double load_output_temp(double T_s, double P, double q, const PhysConstants& c) {
  if (!(q > 0.0)) throw SimulationError("degenerate load flow: q must be positive");
  return T_s - P / (q * c.c_w);
}

double load_flow(double T_s, double P, const LoadParams& limits, const PhysConstants& c) {
  if (P <= 0.0) return limits.q_min;
  const double lift = T_s - limits.T_ref;
  if (!(lift > 0.0)) return limits.q_max;
  return std::clamp(P / (c.c_w * lift), limits.q_min, limits.q_max);
}

double station_power(double q0, double T0s, double T0r, const PhysConstants& c) {
  return c.c_w * q0 * (T0s - T0r);
}

namespace {

std::size_t cell_count(double length, double max_cell_length) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(length / max_cell_length - 1e-12)));
}

double pipe_area(double diameter) { return std::numbers::pi * diameter * diameter / 4.0; }

// One explicit upwind sub-step. `forward` means the flow enters at cells[0].
// Updating against the flow direction keeps every read on old values.
void advance(std::vector<double>& cells, bool forward, double T_in, double a, double b,
             double T_ext) {
  const std::size_t n = cells.size();
  if (forward) {
    for (std::size_t k = n; k-- > 0;) {
      const double up = k == 0 ? T_in : cells[k - 1];
      cells[k] += a * (up - cells[k]) - b * (cells[k] - T_ext);
    }
  } else {
    for (std::size_t k = 0; k < n; ++k) {
      const double up = k + 1 == n ? T_in : cells[k + 1];
      cells[k] += a * (up - cells[k]) - b * (cells[k] - T_ext);
    }
  }
}

}  // namespace

PipeState make_pipe_state(const PipeEdge& edge, double max_cell_length, double T_init) {
  if (!(max_cell_length > 0.0)) throw SimulationError("cell length must be positive");
  const std::size_t n = cell_count(edge.length, max_cell_length);
  return PipeState{std::vector<double>(n, T_init), edge.length / static_cast<double>(n)};
}

PipeStepResult pipe_step(PipeState p, double q, double T_in, double dt, const PipeEdge& edge,
                         const PhysConstants& c) {
  if (!std::isfinite(T_in)) throw SimulationError("non-finite pipe inlet temperature");
  if (q < 0.0) throw SimulationError("pipe_step expects a non-negative flow");
  if (!(dt > 0.0)) throw SimulationError("pipe_step expects dt > 0");
  if (p.cells.empty()) throw SimulationError("pipe state has no cells");
  const double m_cell = c.rho * pipe_area(edge.diameter) * p.cell_length;
  const double h_cell = edge.heat_loss_coeff * p.cell_length;
  const double courant = q * dt / m_cell + dt * h_cell / (m_cell * c.c_w);
  const int substeps = std::max(1, static_cast<int>(std::ceil(courant)));
  const double dt_sub = dt / substeps;
  const double a = q * dt_sub / m_cell;
  const double b = dt_sub * h_cell / (m_cell * c.c_w);
  for (int s = 0; s < substeps; ++s) advance(p.cells, true, T_in, a, b, c.T_ext);
  const double out = p.cells.back();
  return {std::move(p), out};
}

PlantLayout::PlantLayout(NetworkGraph graph, SimConfig config)
    : graph_(std::move(graph)), config_(std::move(config)) {
  auto report = validate_graph(graph_);
  if (!report.valid()) throw GraphError("invalid graph: " + report.summary());
  const auto& c = config_.constants;
  if (!(c.c_w > 0.0) || !(c.rho > 0.0)) throw SimulationError("physical constants must be positive");
  if (!(config_.tau_s > 0.0)) throw SimulationError("tau_s must be positive");

  int max_id = 0;
  for (const auto& n : graph_.nodes) max_id = std::max(max_id, n.id.index);
  node_slots_ = static_cast<std::size_t>(max_id) + 1;
  loads_ = graph_.load_ids();
  load_slot_.assign(node_slots_, -1);
  for (std::size_t k = 0; k < loads_.size(); ++k) load_slot_[static_cast<std::size_t>(loads_[k].index)] = static_cast<int>(k);

  for (const auto& e : graph_.edges) {
    if (e.return_dir != ReturnDirection::counter) {
      throw SimulationError("the simulator supports counter-flow return networks only");
    }
    if (e.reversible && e.from > e.to) continue;
    Link l;
    l.from = e.from.index;
    l.to = e.to.index;
    l.reversible = e.reversible;
    l.length = e.length;
    l.diameter = e.diameter;
    l.heat_loss_coeff = e.heat_loss_coeff;
    l.cells = cell_count(e.length, config_.cell_length);
    const double dx = e.length / static_cast<double>(l.cells);
    l.cell_mass = c.rho * pipe_area(e.diameter) * dx;
    l.cell_loss = e.heat_loss_coeff * dx;
    links_.push_back(l);
  }

  // Nodes joined by reversible links form one group; fixed links between
  // groups must form a DAG.
  std::vector<std::size_t> parent(node_slots_);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  for (const auto& l : links_) {
    if (l.reversible) parent[find(static_cast<std::size_t>(l.from))] = find(static_cast<std::size_t>(l.to));
  }
  std::map<std::size_t, std::size_t> root_to_group;
  group_of_.assign(node_slots_, 0);
  for (const auto& n : graph_.nodes) {
    const auto root = find(static_cast<std::size_t>(n.id.index));
    auto [it, inserted] = root_to_group.try_emplace(root, groups_.size());
    if (inserted) groups_.emplace_back();
    groups_[it->second].members.push_back(n.id.index);
    group_of_[static_cast<std::size_t>(n.id.index)] = it->second;
  }
  for (std::size_t li = 0; li < links_.size(); ++li) {
    const auto& l = links_[li];
    const auto gf = group_of_[static_cast<std::size_t>(l.from)];
    const auto gt = group_of_[static_cast<std::size_t>(l.to)];
    if (l.reversible) {
      groups_[gf].internal.push_back(li);
    } else if (gf == gt) {
      throw SimulationError("fixed-direction edge inside a reversible loop is not supported");
    } else {
      groups_[gf].outlets.push_back(li);
      groups_[gt].inlets.push_back(li);
    }
  }
  for (const auto& grp : groups_) {
    if (grp.internal.size() + 1 != grp.members.size()) {
      throw SimulationError("reversible edges must not form a cycle");
    }
  }

  std::vector<std::size_t> indegree(groups_.size(), 0);
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) indegree[gi] = groups_[gi].inlets.size();
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    if (indegree[gi] == 0) ready.push(gi);
  }
  while (!ready.empty()) {
    auto gi = ready.top();
    ready.pop();
    group_order_.push_back(gi);
    for (auto li : groups_[gi].outlets) {
      auto gt = group_of_[static_cast<std::size_t>(links_[li].to)];
      if (--indegree[gt] == 0) ready.push(gt);
    }
  }
  if (group_order_.size() != groups_.size()) {
    throw SimulationError("supply network has a directed cycle outside reversible pairs");
  }
}

std::vector<std::string> PlantLayout::output_names() const {
  std::vector<std::string> names{"T0r", "q0"};
  for (auto id : loads_) {
    const auto i = std::to_string(id.index);
    names.push_back("T" + i + "s");
    names.push_back("T" + i + "c");
    names.push_back("q" + i + "c");
  }
  return names;
}

std::vector<std::string> PlantLayout::disturbance_names() const {
  std::vector<std::string> names;
  for (auto id : loads_) names.push_back("P" + std::to_string(id.index) + "c");
  return names;
}

FlowField PlantLayout::network_flows(std::span<const double> load_flows) const {
  if (load_flows.size() != loads_.size()) throw SimulationError("load flow count mismatch");
  for (double q : load_flows) {
    if (!(q >= 0.0) || !std::isfinite(q)) throw SimulationError("load flows must be finite and >= 0");
  }
  auto load_at = [&](int node) {
    const int slot = load_slot_[static_cast<std::size_t>(node)];
    return slot < 0 ? 0.0 : load_flows[static_cast<std::size_t>(slot)];
  };

  FlowField f;
  f.link_flow.assign(links_.size(), 0.0);
  f.load_flow.assign(load_flows.begin(), load_flows.end());
  double injection = 0.0;

  for (auto it = group_order_.rbegin(); it != group_order_.rend(); ++it) {
    const auto& grp = groups_[*it];
    double required = 0.0;
    for (int m : grp.members) required += load_at(m);
    for (auto li : grp.outlets) required += f.link_flow[li];

    const bool has_station =
        std::find(grp.members.begin(), grp.members.end(), 0) != grp.members.end();
    if (grp.inlets.empty()) {
      if (has_station) {
        injection = required;
      } else if (required > 0.0) {
        throw SimulationError("flow system unsolvable: demand at node " +
                              std::to_string(grp.members.front()) + " has no supply path");
      }
    } else {
      double total_weight = 0.0;
      for (auto li : grp.inlets) {
        auto w = config_.split_weights.find({links_[li].from, links_[li].to});
        total_weight += w == config_.split_weights.end() ? 1.0 : w->second;
      }
      for (auto li : grp.inlets) {
        auto w = config_.split_weights.find({links_[li].from, links_[li].to});
        const double weight = w == config_.split_weights.end() ? 1.0 : w->second;
        f.link_flow[li] = required * weight / total_weight;
      }
    }
    if (grp.internal.empty()) continue;

    // Internal reversible links form a tree: each link carries the net
    // surplus of the subtree hanging below it.
    std::map<int, double> net;
    for (int m : grp.members) net[m] = -load_at(m) + (m == 0 ? injection : 0.0);
    for (auto li : grp.inlets) net[links_[li].to] += f.link_flow[li];
    for (auto li : grp.outlets) net[links_[li].from] -= f.link_flow[li];

    const int root = grp.members.front();
    std::vector<int> order{root};
    std::map<int, std::pair<int, std::size_t>> up;  // node -> (parent, link)
    for (std::size_t k = 0; k < order.size(); ++k) {
      const int v = order[k];
      for (auto li : grp.internal) {
        const auto& l = links_[li];
        int w = l.from == v ? l.to : (l.to == v ? l.from : -1);
        if (w < 0 || w == root || up.count(w)) continue;
        up[w] = {v, li};
        order.push_back(w);
      }
    }
    for (std::size_t k = order.size(); k-- > 1;) {
      const int v = order[k];
      const auto [p, li] = up[v];
      const double surplus = net[v];  // flows from v towards p
      f.link_flow[li] = links_[li].from == v ? surplus : -surplus;
      net[p] += surplus;
    }
  }

  std::vector<double> inflow(node_slots_, 0.0);
  for (std::size_t li = 0; li < links_.size(); ++li) {
    const double q = f.link_flow[li];
    if (q > 0.0) inflow[static_cast<std::size_t>(links_[li].to)] += q;
    if (q < 0.0) inflow[static_cast<std::size_t>(links_[li].from)] -= q;
  }
  f.supply_flow.assign(node_slots_, 0.0);
  f.return_flow.assign(node_slots_, 0.0);
  for (const auto& n : graph_.nodes) {
    const auto i = static_cast<std::size_t>(n.id.index);
    if (n.id.index == 0) {
      f.supply_flow[i] = injection;
      f.return_flow[i] = injection;
    } else {
      f.supply_flow[i] = inflow[i] - load_at(n.id.index);
      f.return_flow[i] = inflow[i];
    }
  }
  f.q0 = std::accumulate(load_flows.begin(), load_flows.end(), 0.0);
  return f;
}

SimState PlantLayout::initial_state(double T_supply, double T_return) const {
  SimState s;
  for (const auto& l : links_) {
    const double dx = l.length / static_cast<double>(l.cells);
    s.supply.push_back(PipeState{std::vector<double>(l.cells, T_supply), dx});
    s.ret.push_back(PipeState{std::vector<double>(l.cells, T_return), dx});
  }
  s.flows.link_flow.assign(links_.size(), 0.0);
  return s;
}

FlowField network_flows(const NetworkGraph& g, std::span<const double> load_flows) {
  return PlantLayout(g, SimConfig{}).network_flows(load_flows);
}

namespace {

// Supply-side node temperatures from pipe outlet cells, mixed by inflow.
std::vector<double> supply_node_temps(const PlantLayout& layout, const std::vector<PipeState>& pipes,
                                      const std::vector<double>& link_flow, double T0s) {
  const auto& links = layout.links();
  const std::size_t slots = layout.node_slots();
  std::vector<double> qsum(slots, 0.0), qT(slots, 0.0), endsum(slots, 0.0);
  std::vector<int> ends(slots, 0);
  for (std::size_t li = 0; li < links.size(); ++li) {
    const auto& l = links[li];
    const double q = li < link_flow.size() ? link_flow[li] : 0.0;
    const auto to = static_cast<std::size_t>(l.to);
    const auto from = static_cast<std::size_t>(l.from);
    if (q > 0.0) {
      qsum[to] += q;
      qT[to] += q * pipes[li].cells.back();
    } else if (q < 0.0) {
      qsum[from] -= q;
      qT[from] -= q * pipes[li].cells.front();
    }
    endsum[to] += pipes[li].cells.back();
    ends[to] += 1;
    if (l.reversible) {
      endsum[from] += pipes[li].cells.front();
      ends[from] += 1;
    }
  }
  std::vector<double> T(slots, layout.config().constants.T_ext);
  for (std::size_t i = 0; i < slots; ++i) {
    if (qsum[i] > 0.0) {
      T[i] = qT[i] / qsum[i];
    } else if (ends[i] > 0) {
      T[i] = endsum[i] / ends[i];
    }
  }
  T[0] = T0s;
  return T;
}

// Return-side node temperatures: return pipe outlets plus load injections.
std::vector<double> return_node_temps(const PlantLayout& layout, const std::vector<PipeState>& pipes,
                                      const std::vector<double>& link_flow,
                                      const std::vector<double>& load_q,
                                      const std::vector<double>& load_T) {
  const auto& links = layout.links();
  const std::size_t slots = layout.node_slots();
  std::vector<double> qsum(slots, 0.0), qT(slots, 0.0), endsum(slots, 0.0);
  std::vector<int> ends(slots, 0);
  for (std::size_t li = 0; li < links.size(); ++li) {
    const auto& l = links[li];
    const double q = link_flow[li];
    const auto to = static_cast<std::size_t>(l.to);
    const auto from = static_cast<std::size_t>(l.from);
    // Return water runs against the supply direction.
    if (q > 0.0) {
      qsum[from] += q;
      qT[from] += q * pipes[li].cells.front();
    } else if (q < 0.0) {
      qsum[to] -= q;
      qT[to] -= q * pipes[li].cells.back();
    }
    endsum[from] += pipes[li].cells.front();
    ends[from] += 1;
    if (l.reversible) {
      endsum[to] += pipes[li].cells.back();
      ends[to] += 1;
    }
  }
  const auto& loads = layout.loads();
  for (std::size_t k = 0; k < loads.size(); ++k) {
    const auto i = static_cast<std::size_t>(loads[k].index);
    if (load_q[k] > 0.0) {
      qsum[i] += load_q[k];
      qT[i] += load_q[k] * load_T[k];
    }
  }
  std::vector<double> T(slots, layout.config().constants.T_ext);
  for (std::size_t i = 0; i < slots; ++i) {
    if (qsum[i] > 0.0) {
      T[i] = qT[i] / qsum[i];
    } else if (ends[i] > 0) {
      T[i] = endsum[i] / ends[i];
    }
  }
  return T;
}

}  // namespace

std::pair<SimState, Eigen::VectorXd> sim_step(const PlantLayout& layout, const SimState& state,
                                              const StepInputs& in) {
  const auto& cfg = layout.config();
  const auto& c = cfg.constants;
  const auto& loads = layout.loads();
  const std::size_t nc = loads.size();
  if (in.demands.size() != nc) throw SimulationError("demand count mismatch");
  if (!std::isfinite(in.T0s)) throw SimulationError("non-finite supply temperature");
  for (double P : in.demands) {
    if (!std::isfinite(P)) throw SimulationError("non-finite demand");
  }
  const double dt = cfg.tau_s;

  // (i) load supply temperatures at the start of the step
  auto Ts_node = supply_node_temps(layout, state.supply, state.flows.link_flow, in.T0s);
  std::vector<double> Ts(nc), q(nc), Tc(nc);
  for (std::size_t k = 0; k < nc; ++k) Ts[k] = Ts_node[static_cast<std::size_t>(loads[k].index)];

  // (ii) local flow control and load return temperatures
  for (std::size_t k = 0; k < nc; ++k) {
    const auto& params = layout.graph().node(loads[k]).load;
    double target = load_flow(Ts[k], in.demands[k], params, c);
    if (cfg.load_filter_tau > 0.0 && state.flows.load_flow.size() == nc) {
      const double alpha = dt / (cfg.load_filter_tau + dt);
      target = state.flows.load_flow[k] + alpha * (target - state.flows.load_flow[k]);
    }
    q[k] = target;
  }
  // (iii) network flows
  SimState next = state;
  next.flows = layout.network_flows(q);
  const auto& flow = next.flows.link_flow;
  for (std::size_t k = 0; k < nc; ++k) {
    Tc[k] = q[k] > 0.0 ? load_output_temp(Ts[k], in.demands[k], q[k], c) : Ts[k];
  }

  // (v) outputs describe the start of the step
  Eigen::VectorXd y(static_cast<Eigen::Index>(layout.output_size()));
  {
    auto Tr_node = return_node_temps(layout, state.ret, flow, q, Tc);
    y(channel_T0r()) = Tr_node[0];
    y(channel_q0()) = next.flows.q0;
    for (std::size_t k = 0; k < nc; ++k) {
      y(static_cast<Eigen::Index>(channel_Ts(k))) = Ts[k];
      y(static_cast<Eigen::Index>(channel_Tc(k))) = Tc[k];
      y(static_cast<Eigen::Index>(channel_qc(k))) = q[k];
    }
  }

  // (iv) pipe transport over the period, sub-stepped for the CFL bound
  const auto& links = layout.links();
  double courant = 0.0;
  for (std::size_t li = 0; li < links.size(); ++li) {
    const auto& l = links[li];
    courant = std::max(courant, std::abs(flow[li]) * dt / l.cell_mass +
                                    dt * l.cell_loss / (l.cell_mass * c.c_w));
  }
  const int substeps = std::max(1, static_cast<int>(std::ceil(courant)));
  const double dt_sub = dt / substeps;
  std::vector<double> Tc_sub(nc);
  for (int s = 0; s < substeps; ++s) {
    auto Ts_sub = supply_node_temps(layout, next.supply, flow, in.T0s);
    for (std::size_t k = 0; k < nc; ++k) {
      const double T = Ts_sub[static_cast<std::size_t>(loads[k].index)];
      Tc_sub[k] = q[k] > 0.0 ? T - in.demands[k] / (q[k] * c.c_w) : T;
    }
    auto Tr_sub = return_node_temps(layout, next.ret, flow, q, Tc_sub);
    for (std::size_t li = 0; li < links.size(); ++li) {
      const auto& l = links[li];
      const double a = std::abs(flow[li]) * dt_sub / l.cell_mass;
      const double b = dt_sub * l.cell_loss / (l.cell_mass * c.c_w);
      const bool forward = flow[li] >= 0.0;
      const double sup_in = forward ? Ts_sub[static_cast<std::size_t>(l.from)] : Ts_sub[static_cast<std::size_t>(l.to)];
      const double ret_in = forward ? Tr_sub[static_cast<std::size_t>(l.to)] : Tr_sub[static_cast<std::size_t>(l.from)];
      advance(next.supply[li].cells, forward, sup_in, a, b, c.T_ext);
      advance(next.ret[li].cells, !forward, ret_in, a, b, c.T_ext);
    }
  }
  next.step = state.step + 1;
  return {std::move(next), std::move(y)};
}

double pipe_heat_loss(const PlantLayout& layout, const SimState& state) {
  const double T_ext = layout.config().constants.T_ext;
  double total = 0.0;
  for (std::size_t li = 0; li < layout.links().size(); ++li) {
    const double h = layout.links()[li].cell_loss;
    for (double T : state.supply[li].cells) total += h * (T - T_ext);
    for (double T : state.ret[li].cells) total += h * (T - T_ext);
  }
  return total;
}

Simulator::Simulator(PlantLayout layout)
    : layout_(std::move(layout)),
      state_(layout_.initial_state(layout_.config().constants.T_ext, layout_.config().constants.T_ext)) {}

Simulator::Simulator(PlantLayout layout, SimState state)
    : layout_(std::move(layout)), state_(std::move(state)) {}

Eigen::VectorXd Simulator::step(double T0s, std::span<const double> demands) {
  auto [next, y] = sim_step(layout_, state_, StepInputs{T0s, {demands.begin(), demands.end()}});
  state_ = std::move(next);
  return y;
}

void Simulator::warm_start(double T0s, std::span<const double> demands, double hours) {
  const long steps = std::lround(hours * 3600.0 / layout_.config().tau_s);
  for (long k = 0; k < steps; ++k) step(T0s, demands);
}

}  // namespace dhs
