#include "dhs/topology.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <map>
#include <queue>
#include <set>
#include <tuple>

#include "dhs/text_format.hpp"

namespace dhs {

std::string to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::station: return "station";
    case NodeKind::load: return "load";
    case NodeKind::junction: return "junction";
  }
  return "?";
}

const Node& NetworkGraph::node(NodeId id) const {
  auto it = std::lower_bound(nodes.begin(), nodes.end(), id,
                             [](const Node& n, NodeId v) { return n.id < v; });
  if (it == nodes.end() || it->id != id) {
    throw GraphError("unknown node id " + std::to_string(id.index));
  }
  return *it;
}

bool NetworkGraph::has_node(NodeId id) const {
  return std::any_of(nodes.begin(), nodes.end(), [&](const Node& n) { return n.id == id; });
}

std::vector<NodeId> NetworkGraph::load_ids() const {
  std::vector<NodeId> out;
  for (const auto& n : nodes) {
    if (n.kind == NodeKind::load) out.push_back(n.id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t NetworkGraph::load_count() const { return load_ids().size(); }

double NetworkGraph::supply_length() const {
  double total = 0.0;
  for (const auto& e : edges) {
    // The reversed twin of a reversible pair is skipped.
    if (e.reversible && e.from > e.to) continue;
    total += e.length;
  }
  return total;
}

bool ValidationReport::valid() const {
  return std::none_of(issues.begin(), issues.end(),
                      [](const Issue& i) { return i.severity == Severity::error; });
}

bool ValidationReport::mentions(const std::string& fragment) const {
  return std::any_of(issues.begin(), issues.end(), [&](const Issue& i) {
    return i.message.find(fragment) != std::string::npos;
  });
}

std::string ValidationReport::summary() const {
  std::string out;
  for (const auto& i : issues) {
    if (!out.empty()) out += "; ";
    out += (i.severity == Severity::error ? "error: " : "warning: ") + i.message;
  }
  return out;
}

ValidationReport validate_graph(const NetworkGraph& g) {
  ValidationReport report;
  auto error = [&](std::string msg) { report.issues.push_back({Severity::error, std::move(msg)}); };
  auto warn = [&](std::string msg) { report.issues.push_back({Severity::warning, std::move(msg)}); };

  std::set<int> ids;
  int stations = 0;
  for (const auto& n : g.nodes) {
    if (n.id.index < 0) error("negative node id " + std::to_string(n.id.index));
    if (!ids.insert(n.id.index).second) error("duplicate node id " + std::to_string(n.id.index));
    if (n.kind == NodeKind::station) {
      ++stations;
      if (n.id.index != 0) error("station must have id 0, found " + std::to_string(n.id.index));
    } else if (n.id.index == 0) {
      error("node 0 is reserved for the station");
    }
    if (n.kind == NodeKind::load) {
      if (!(n.load.q_min >= 0.0) || !(n.load.q_max > n.load.q_min)) {
        error("load " + std::to_string(n.id.index) + " has invalid flow limits");
      }
    }
  }
  if (stations == 0) error("no station");
  if (stations > 1) error("multiple stations");

  std::set<std::pair<int, int>> seen;
  for (const auto& e : g.edges) {
    const std::string tag = std::to_string(e.from.index) + "->" + std::to_string(e.to.index);
    if (e.from == e.to) error("self-loop at node " + std::to_string(e.from.index));
    if (!ids.count(e.from.index) || !ids.count(e.to.index)) error("edge " + tag + " references an unknown node");
    if (!seen.insert({e.from.index, e.to.index}).second) error("duplicate edge " + tag);
    if (!(e.length > 0.0)) error("edge " + tag + " has non-positive length");
    if (!(e.diameter > 0.0)) error("edge " + tag + " has non-positive diameter");
    if (!(e.heat_loss_coeff >= 0.0)) error("edge " + tag + " has negative heat-loss coefficient");
  }
  for (const auto& e : g.edges) {
    if (!e.reversible) continue;
    auto twin = std::find_if(g.edges.begin(), g.edges.end(), [&](const PipeEdge& o) {
      return o.from == e.to && o.to == e.from;
    });
    const std::string tag = std::to_string(e.from.index) + "->" + std::to_string(e.to.index);
    if (twin == g.edges.end() || !twin->reversible) {
      error("reversible edge " + tag + " lacks a reversible opposite edge");
    } else if (twin->length != e.length || twin->diameter != e.diameter ||
               twin->heat_loss_coeff != e.heat_loss_coeff) {
      error("reversible pair " + tag + " has mismatched pipe data");
    }
  }
  if (!report.valid()) return report;

  // Connectivity: weak connectivity and supply reachability from the station.
  std::map<int, std::vector<int>> out_adj, undirected;
  for (const auto& e : g.edges) {
    out_adj[e.from.index].push_back(e.to.index);
    undirected[e.from.index].push_back(e.to.index);
    undirected[e.to.index].push_back(e.from.index);
  }
  auto reach = [&](const std::map<int, std::vector<int>>& adj) {
    std::set<int> visited{0};
    std::queue<int> q;
    q.push(0);
    while (!q.empty()) {
      int v = q.front();
      q.pop();
      auto it = adj.find(v);
      if (it == adj.end()) continue;
      for (int w : it->second) {
        if (visited.insert(w).second) q.push(w);
      }
    }
    return visited;
  };
  if (stations == 1) {
    auto weak = reach(undirected);
    if (weak.size() != ids.size()) error("graph is not weakly connected");
    auto directed = reach(out_adj);
    for (const auto& n : g.nodes) {
      if (n.kind == NodeKind::load && !directed.count(n.id.index)) {
        error("load " + std::to_string(n.id.index) + " is unreachable from the station");
      }
    }
  }

  // Numbering convention: loads 1..n_c, junctions above every load.
  auto loads = g.load_ids();
  for (std::size_t k = 0; k < loads.size(); ++k) {
    if (loads[k].index != static_cast<int>(k) + 1) {
      warn("load ids are not 1..n_c");
      break;
    }
  }
  int max_load = loads.empty() ? 0 : loads.back().index;
  for (const auto& n : g.nodes) {
    if (n.kind == NodeKind::junction && n.id.index < max_load) {
      warn("junction " + std::to_string(n.id.index) + " numbered below a load");
    }
  }
  return report;
}

std::vector<NodeId> inlet_set(const NetworkGraph& g, NodeId i, NetworkSide side) {
  if (!g.has_node(i)) throw GraphError("unknown node id " + std::to_string(i.index));
  std::set<NodeId> out;
  for (const auto& e : g.edges) {
    const bool counter = e.return_dir == ReturnDirection::counter;
    if (side == NetworkSide::supply || !counter) {
      if (e.to == i) out.insert(e.from);
    } else {
      if (e.from == i) out.insert(e.to);
    }
  }
  return {out.begin(), out.end()};
}

bool ReducedGraph::has_edge(int from, int to) const {
  return std::binary_search(edges.begin(), edges.end(), std::make_pair(from, to));
}

std::vector<int> ReducedGraph::predecessors(int node) const {
  std::vector<int> out;
  for (const auto& [a, b] : edges) {
    if (b == node) out.push_back(a);
  }
  return out;
}

std::string ReducedGraph::fingerprint() const {
  std::string canon = "nodes";
  for (auto n : nodes) canon += " " + std::to_string(n.index);
  canon += ";edges";
  for (const auto& [a, b] : edges) canon += " " + std::to_string(a) + ">" + std::to_string(b);
  return text::hex64(text::fnv1a(canon));
}

std::vector<std::pair<int, int>> reduced_edges(std::size_t node_count,
                                               const std::vector<bool>& significant,
                                               const std::vector<std::pair<int, int>>& edges) {
  std::vector<std::vector<int>> adj(node_count);
  for (const auto& [a, b] : edges) adj.at(static_cast<std::size_t>(a)).push_back(b);

  std::set<std::pair<int, int>> result;
  for (std::size_t s = 0; s < node_count; ++s) {
    if (!significant[s]) continue;
    // Walk only through non-significant nodes; stop at the first significant one.
    std::vector<bool> visited(node_count, false);
    std::vector<int> stack(adj[s].begin(), adj[s].end());
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      const auto vi = static_cast<std::size_t>(v);
      if (significant[vi]) {
        if (vi != s) result.insert({static_cast<int>(s), v});
        continue;
      }
      if (visited[vi]) continue;
      visited[vi] = true;
      for (int w : adj[vi]) stack.push_back(w);
    }
  }
  return {result.begin(), result.end()};
}

ReducedGraph reduce_graph(const NetworkGraph& g) {
  auto report = validate_graph(g);
  if (!report.valid()) throw GraphError("invalid graph: " + report.summary());

  int max_id = 0;
  for (const auto& n : g.nodes) max_id = std::max(max_id, n.id.index);
  const auto count = static_cast<std::size_t>(max_id) + 1;
  std::vector<bool> significant(count, false);
  ReducedGraph rg;
  for (const auto& n : g.nodes) {
    if (n.kind != NodeKind::junction) {
      significant[static_cast<std::size_t>(n.id.index)] = true;
      rg.nodes.push_back(n.id);
    }
  }
  std::vector<std::pair<int, int>> edges;
  for (const auto& e : g.edges) edges.emplace_back(e.from.index, e.to.index);
  rg.edges = reduced_edges(count, significant, edges);
  return rg;
}

std::vector<double> load_distances(const NetworkGraph& g) {
  std::map<int, double> dist;
  for (const auto& n : g.nodes) dist[n.id.index] = std::numeric_limits<double>::infinity();
  dist[0] = 0.0;
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  pq.push({0.0, 0});
  while (!pq.empty()) {
    auto [d, v] = pq.top();
    pq.pop();
    if (d > dist[v]) continue;
    for (const auto& e : g.edges) {
      if (e.from.index != v) continue;
      double nd = d + e.length;
      if (nd < dist[e.to.index]) {
        dist[e.to.index] = nd;
        pq.push({nd, e.to.index});
      }
    }
  }
  std::vector<double> out;
  for (auto id : g.load_ids()) out.push_back(dist[id.index]);
  return out;
}

namespace {

NodeKind parse_kind(const std::string& s, int line) {
  if (s == "station") return NodeKind::station;
  if (s == "load") return NodeKind::load;
  if (s == "junction") return NodeKind::junction;
  throw ParseError(line, "unknown node kind '" + s + "'");
}

bool parse_flag(const std::string& s, int line) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw ParseError(line, "expected 0/1 flag, got '" + s + "'");
}

}  // namespace

NetworkGraph parse_topology(const std::string& content) {
  NetworkGraph g;
  std::set<int> ids;
  for (const auto& line : text::tokenize(content)) {
    if (line.section == "meta") {
      auto eq = line.body.find('=');
      if (eq == std::string::npos) throw ParseError(line.number, "expected 'key = value'");
      auto key = text::trim(std::string_view(line.body).substr(0, eq));
      auto value = text::trim(std::string_view(line.body).substr(eq + 1));
      if (key == "name") {
        g.name = value;
      } else if (key == "reconstructed") {
        g.reconstructed = parse_flag(value, line.number);
      } else {
        throw ParseError(line.number, "unknown meta key '" + key + "'");
      }
    } else if (line.section == "nodes") {
      auto tok = text::split_ws(line.body);
      if (tok.size() < 2) throw ParseError(line.number, "node row needs 'id kind'");
      Node n;
      n.id.index = static_cast<int>(text::parse_int(tok[0], line.number));
      n.kind = parse_kind(tok[1], line.number);
      if (n.kind == NodeKind::load) {
        if (tok.size() != 2 && tok.size() != 5) {
          throw ParseError(line.number, "load row is 'id load [T_ref q_min q_max]'");
        }
        if (tok.size() == 5) {
          n.load.T_ref = text::parse_double(tok[2], line.number);
          n.load.q_min = text::parse_double(tok[3], line.number);
          n.load.q_max = text::parse_double(tok[4], line.number);
        }
      } else if (tok.size() != 2) {
        throw ParseError(line.number, "unexpected fields after node kind");
      }
      if (!ids.insert(n.id.index).second) {
        throw ParseError(line.number, "duplicate node id " + tok[0]);
      }
      g.nodes.push_back(n);
    } else if (line.section == "edges") {
      auto tok = text::split_ws(line.body);
      if (tok.size() != 6 && tok.size() != 7) {
        throw ParseError(line.number, "edge row is 'from to length_m diameter_m loss_W_per_mK reversible [return=...]'");
      }
      PipeEdge e;
      e.from.index = static_cast<int>(text::parse_int(tok[0], line.number));
      e.to.index = static_cast<int>(text::parse_int(tok[1], line.number));
      e.length = text::parse_double(tok[2], line.number);
      e.diameter = text::parse_double(tok[3], line.number);
      e.heat_loss_coeff = text::parse_double(tok[4], line.number);
      e.reversible = parse_flag(tok[5], line.number);
      if (tok.size() == 7) {
        if (tok[6] == "return=counter") {
          e.return_dir = ReturnDirection::counter;
        } else if (tok[6] == "return=parallel") {
          e.return_dir = ReturnDirection::parallel;
        } else {
          throw ParseError(line.number, "unknown edge option '" + tok[6] + "'");
        }
      }
      g.edges.push_back(e);
    } else {
      throw ParseError(line.number, "row outside of a known section");
    }
  }
  std::sort(g.nodes.begin(), g.nodes.end(), [](const Node& a, const Node& b) { return a.id < b.id; });
  std::sort(g.edges.begin(), g.edges.end(), [](const PipeEdge& a, const PipeEdge& b) {
    return std::tie(a.from, a.to) < std::tie(b.from, b.to);
  });
  return g;
}

NetworkGraph load_topology(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw std::runtime_error("topology file not found: '" + path.string() + "'");
  }
  NetworkGraph g = parse_topology(text::read_file(path));
  auto report = validate_graph(g);
  if (!report.valid()) throw GraphError(path.string() + ": " + report.summary());
  return g;
}

std::string format_topology(const NetworkGraph& g) {
  using text::format_double;
  std::string out = "# district heating topology\n[meta]\n";
  out += "name = " + g.name + "\n";
  out += std::string("reconstructed = ") + (g.reconstructed ? "true" : "false") + "\n";
  out += "\n[nodes]\n# id kind [T_ref q_min q_max]\n";
  for (const auto& n : g.nodes) {
    out += std::to_string(n.id.index) + " " + to_string(n.kind);
    if (n.kind == NodeKind::load) {
      out += " " + format_double(n.load.T_ref) + " " + format_double(n.load.q_min) + " " +
             format_double(n.load.q_max);
    }
    out += "\n";
  }
  out += "\n[edges]\n# from to length_m diameter_m loss_W_per_mK reversible\n";
  for (const auto& e : g.edges) {
    out += std::to_string(e.from.index) + " " + std::to_string(e.to.index) + " " +
           format_double(e.length) + " " + format_double(e.diameter) + " " +
           format_double(e.heat_loss_coeff) + " " + (e.reversible ? "1" : "0");
    if (e.return_dir == ReturnDirection::parallel) out += " return=parallel";
    out += "\n";
  }
  return out;
}

void save_topology(const NetworkGraph& g, const std::filesystem::path& path) {
  text::write_file(path, format_topology(g));
}

std::filesystem::path aroma_topology_path() {
  return std::filesystem::path(DHS_DATA_DIR) / "aroma.topo";
}

NetworkGraph aroma_topology() { return load_topology(aroma_topology_path()); }

}  // namespace dhs
