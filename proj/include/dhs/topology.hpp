#pragma once

// District heating network graph: nodes, supply-oriented pipe edges, inlet sets
// and the reduced graph over the station and load nodes.

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dhs {

struct NodeId {
  int index = 0;

  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

enum class NodeKind { station, load, junction };

std::string to_string(NodeKind kind);

struct LoadParams {
  double T_ref = 45.0;  // controlled return-side reference, degC
  double q_min = 0.1;   // kg/s
  double q_max = 8.0;   // kg/s

  friend bool operator==(const LoadParams&, const LoadParams&) = default;
};

struct Node {
  NodeId id;
  NodeKind kind = NodeKind::junction;
  LoadParams load;  // meaningful only for loads

  friend bool operator==(const Node&, const Node&) = default;
};

// Return-flow orientation of an edge relative to the supply orientation.
enum class ReturnDirection { counter, parallel };

struct PipeEdge {
  NodeId from;
  NodeId to;
  double length = 0.0;           // m
  double diameter = 0.0;         // m
  double heat_loss_coeff = 0.5;  // W/(m K)
  bool reversible = false;       // member of a doubled opposite pair
  ReturnDirection return_dir = ReturnDirection::counter;

  friend bool operator==(const PipeEdge&, const PipeEdge&) = default;
};

struct NetworkGraph {
  std::string name;
  bool reconstructed = false;  // layout inferred rather than surveyed
  std::vector<Node> nodes;     // sorted by id
  std::vector<PipeEdge> edges; // sorted by (from, to)

  const Node& node(NodeId id) const;
  bool has_node(NodeId id) const;
  std::vector<NodeId> load_ids() const;  // ascending
  std::size_t load_count() const;
  // Each reversible pair is one physical pipe; lengths summed once per pipe.
  double supply_length() const;

  friend bool operator==(const NetworkGraph&, const NetworkGraph&) = default;
};

enum class Severity { warning, error };

struct Issue {
  Severity severity = Severity::error;
  std::string message;
};

struct ValidationReport {
  std::vector<Issue> issues;

  bool valid() const;
  bool empty() const { return issues.empty(); }
  bool mentions(const std::string& fragment) const;
  std::string summary() const;
};

ValidationReport validate_graph(const NetworkGraph& g);

enum class NetworkSide { supply, return_side };

// Supply side: predecessors along supply edges. Return side: the counter-flow
// successors, unless an edge overrides its return orientation.
std::vector<NodeId> inlet_set(const NetworkGraph& g, NodeId i, NetworkSide side);

struct ReducedGraph {
  std::vector<NodeId> nodes;                  // {0} plus loads, ascending
  std::vector<std::pair<int, int>> edges;     // sorted, unique

  bool has_edge(int from, int to) const;
  std::vector<int> predecessors(int node) const;
  // Stable fingerprint of nodes and edges.
  std::string fingerprint() const;

  friend bool operator==(const ReducedGraph&, const ReducedGraph&) = default;
};

// Edge (i, j) exists iff a directed path i -> ... -> j has all interior nodes
// non-significant. Works on any digraph; `significant[k]` flags node k.
std::vector<std::pair<int, int>> reduced_edges(std::size_t node_count,
                                               const std::vector<bool>& significant,
                                               const std::vector<std::pair<int, int>>& edges);

ReducedGraph reduce_graph(const NetworkGraph& g);

// Shortest supply-path length from the station to every load, in load order.
std::vector<double> load_distances(const NetworkGraph& g);

NetworkGraph parse_topology(const std::string& content);
NetworkGraph load_topology(const std::filesystem::path& path);
std::string format_topology(const NetworkGraph& g);
void save_topology(const NetworkGraph& g, const std::filesystem::path& path);

// The bundled AROMA reconstruction.
std::filesystem::path aroma_topology_path();
NetworkGraph aroma_topology();

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dhs
