#include "dhs/pi_rnn.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <queue>
#include <set>

namespace dhs {

namespace {

const std::vector<std::pair<int, int>>& aroma_reduced_edges() {
  static const std::vector<std::pair<int, int>> edges{{0, 1}, {0, 2}, {1, 3}, {2, 4}, {2, 5}, {3, 4}, {3, 5}};
  return edges;
}

std::vector<int> load_nodes(const ReducedGraph& rg) {
  std::vector<int> out;
  for (auto id : rg.nodes) {
    if (id.index != 0) out.push_back(id.index);
  }
  std::sort(out.begin(), out.end());
  return out;
}

void require_acyclic(const ReducedGraph& rg) {
  std::map<int, int> indegree;
  std::map<int, std::vector<int>> succ;
  for (auto id : rg.nodes) indegree[id.index] = 0;
  for (const auto& [a, b] : rg.edges) {
    succ[a].push_back(b);
    ++indegree[b];
  }
  std::queue<int> ready;
  for (const auto& [v, d] : indegree) {
    if (d == 0) ready.push(v);
  }
  std::size_t seen = 0;
  while (!ready.empty()) {
    int v = ready.front();
    ready.pop();
    ++seen;
    for (int w : succ[v]) {
      if (--indegree[w] == 0) ready.push(w);
    }
  }
  if (seen != indegree.size()) {
    throw WiringError("reduced graph has a cycle among significant nodes; wiring is undefined");
  }
}

}  // namespace

std::vector<Index> allocate_neurons(const ReducedGraph& rg, const std::vector<double>& distances, Index total) {
  const auto loads = load_nodes(rg);
  const std::size_t nc = loads.size();
  if (nc == 0) throw WiringError("reduced graph has no loads");
  if (distances.size() != nc) throw WiringError("one distance per load is required");
  const auto n = static_cast<Index>(nc + 1);
  if (total < n) throw WiringError("infeasible allocation: fewer states than subnetworks");

  if (nc == 5 && rg.edges == aroma_reduced_edges()) {
    static const std::map<Index, std::vector<Index>> tables{
        {30, {3, 3, 3, 4, 8, 9}}, {54, {6, 6, 6, 8, 12, 16}}, {90, {9, 9, 9, 16, 20, 27}}};
    if (auto it = tables.find(total); it != tables.end()) return it->second;
  }

  // Proportional to distance, the return subnet weighted above the farthest load.
  std::vector<double> w(distances.begin(), distances.end());
  const double far = *std::max_element(w.begin(), w.end());
  if (!(far > 0.0)) std::fill(w.begin(), w.end(), 1.0);
  w.push_back(1.5 * *std::max_element(w.begin(), w.end()));
  const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
  const Index spare = total - n;
  std::vector<Index> alloc(static_cast<std::size_t>(n), 1);
  std::vector<std::pair<double, std::size_t>> remainders;
  Index given = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double q = static_cast<double>(spare) * w[i] / wsum;
    const auto whole = static_cast<Index>(std::floor(q));
    alloc[i] += whole;
    given += whole;
    remainders.push_back({q - static_cast<double>(whole), i});
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (Index k = 0; k < spare - given; ++k) alloc[remainders[static_cast<std::size_t>(k)].second] += 1;

  // Nearest load gets the smallest block, the return subnet the largest.
  std::vector<Index> sorted = alloc;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> by_distance(nc);
  std::iota(by_distance.begin(), by_distance.end(), 0);
  std::stable_sort(by_distance.begin(), by_distance.end(),
                   [&](std::size_t a, std::size_t b) { return distances[a] < distances[b]; });
  std::vector<Index> out(static_cast<std::size_t>(n));
  for (std::size_t r = 0; r < nc; ++r) out[by_distance[r]] = sorted[r];
  out[nc] = sorted.back();
  return out;
}

std::vector<SubnetSpec> pi_rnn_wiring(const ReducedGraph& rg, const std::vector<Index>& allocation,
                                      bool cumulative_demand) {
  require_acyclic(rg);
  const auto loads = load_nodes(rg);
  const std::size_t nc = loads.size();
  if (allocation.size() != nc + 1) throw WiringError("allocation must cover every load plus the return subnet");
  std::map<int, int> subnet_of;
  for (std::size_t k = 0; k < nc; ++k) subnet_of[loads[k]] = static_cast<int>(k);

  std::vector<SubnetSpec> specs;
  for (std::size_t k = 0; k < nc; ++k) {
    SubnetSpec s;
    s.role = SubnetRole::load;
    s.node = loads[k];
    for (int j : rg.predecessors(loads[k])) {
      if (j == 0) {
        s.inputs.push_back({SourceKind::model_input, 0, 0});
      } else {
        s.inputs.push_back({SourceKind::subnet_output, subnet_of.at(j), 0});
      }
    }
    if (s.inputs.empty()) throw WiringError("load " + std::to_string(loads[k]) + " has no upstream significant node");
    s.inputs.push_back({SourceKind::model_input, static_cast<int>(k) + 1, 0});
    if (cumulative_demand) s.inputs.push_back({SourceKind::cumulative_demand, static_cast<int>(k), 0});
    const auto base = static_cast<Index>(2 + 3 * k);
    s.outputs = {base, base + 1, base + 2};
    s.states = allocation[k];
    specs.push_back(std::move(s));
  }
  SubnetSpec ret;
  ret.role = SubnetRole::ret;
  ret.node = 0;
  for (std::size_t k = 0; k < nc; ++k) {
    ret.inputs.push_back({SourceKind::subnet_output, static_cast<int>(k), 1});
    ret.inputs.push_back({SourceKind::subnet_output, static_cast<int>(k), 2});
  }
  ret.outputs = {0, 1};
  ret.states = allocation[nc];
  specs.push_back(std::move(ret));
  return specs;
}

PiRnnModel build_pi_rnn(const ReducedGraph& rg, const std::vector<Index>& allocation, bool cumulative_demand,
                        std::uint64_t seed) {
  auto specs = pi_rnn_wiring(rg, allocation, cumulative_demand);
  std::vector<RnnModel> subnets;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    RnnModel m(static_cast<Index>(specs[i].inputs.size()), {specs[i].states},
               static_cast<Index>(specs[i].outputs.size()));
    m.initialize(seed + 0x9E3779B97F4A7C15ULL * (i + 1));
    subnets.push_back(std::move(m));
  }
  return PiRnnModel(rg, std::move(specs), std::move(subnets));
}

PiRnnModel::PiRnnModel(ReducedGraph rg, std::vector<SubnetSpec> specs, std::vector<RnnModel> subnets)
    : rg_(std::move(rg)), specs_(std::move(specs)), subnets_(std::move(subnets)) {
  if (specs_.size() != subnets_.size() || specs_.empty()) throw WiringError("one model per subnet is required");
  n_c_ = static_cast<Index>(std::count_if(specs_.begin(), specs_.end(),
                                          [](const SubnetSpec& s) { return s.role == SubnetRole::load; }));
  if (static_cast<std::size_t>(n_c_) + 1 != specs_.size() || specs_.back().role != SubnetRole::ret) {
    throw WiringError("expected one subnet per load followed by the return subnet");
  }
  n_u_ = 1 + n_c_;
  n_y_ = 2 + 3 * n_c_;

  std::vector<int> channel_seen(static_cast<std::size_t>(n_y_), 0);
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const auto& s = specs_[i];
    const auto& m = subnets_[i];
    if (m.layers().size() != 1) throw WiringError("subnets have exactly one hidden layer");
    if (m.input_size() != static_cast<Index>(s.inputs.size()) ||
        m.output_size() != static_cast<Index>(s.outputs.size()) || m.state_size() != s.states) {
      throw WiringError("subnet " + std::to_string(i) + " does not match its wiring");
    }
    for (Index c : s.outputs) {
      if (c < 0 || c >= n_y_) throw WiringError("output channel out of range");
      ++channel_seen[static_cast<std::size_t>(c)];
    }
    for (const auto& src : s.inputs) {
      switch (src.kind) {
        case SourceKind::model_input:
          if (src.index < 0 || src.index >= n_u_) throw WiringError("input source column out of range");
          break;
        case SourceKind::cumulative_demand:
          if (src.index < 0 || src.index >= n_c_) throw WiringError("cumulative demand load out of range");
          break;
        case SourceKind::subnet_output:
          if (src.index < 0 || static_cast<std::size_t>(src.index) >= specs_.size() ||
              static_cast<std::size_t>(src.index) == i) {
            throw WiringError("subnet source out of range");
          }
          if (src.slot < 0 || static_cast<std::size_t>(src.slot) >= specs_[static_cast<std::size_t>(src.index)].outputs.size()) {
            throw WiringError("subnet source slot out of range");
          }
          break;
      }
    }
  }
  if (std::any_of(channel_seen.begin(), channel_seen.end(), [](int c) { return c != 1; })) {
    throw WiringError("every output channel must be produced by exactly one subnet");
  }

  // Topological order over subnet dependencies, lowest index first.
  const std::size_t n = specs_.size();
  std::vector<std::set<std::size_t>> deps(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& src : specs_[i].inputs) {
      if (src.kind == SourceKind::subnet_output) deps[i].insert(static_cast<std::size_t>(src.index));
    }
  }
  std::vector<bool> done(n, false);
  while (order_.size() < n) {
    bool progressed = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (done[i]) continue;
      if (std::all_of(deps[i].begin(), deps[i].end(), [&](std::size_t j) { return done[j]; })) {
        order_.push_back(i);
        done[i] = true;
        progressed = true;
        break;
      }
    }
    if (!progressed) throw WiringError("subnet wiring has a cycle");
  }

  for (const auto& m : subnets_) {
    theta_offset_.push_back(n_theta_);
    x_offset_.push_back(n_x_);
    n_theta_ += m.parameter_count();
    n_x_ += m.state_size();
  }
}

bool PiRnnModel::cumulative_demand() const {
  for (const auto& s : specs_) {
    for (const auto& src : s.inputs) {
      if (src.kind == SourceKind::cumulative_demand) return true;
    }
  }
  return false;
}

Eigen::VectorXd PiRnnModel::parameters() const {
  Eigen::VectorXd theta(n_theta_);
  for (std::size_t i = 0; i < subnets_.size(); ++i) {
    theta.segment(theta_offset_[i], subnets_[i].parameter_count()) = subnets_[i].parameters();
  }
  return theta;
}

void PiRnnModel::set_parameters(const Eigen::VectorXd& theta) {
  if (theta.size() != n_theta_) throw std::invalid_argument("parameter vector size mismatch");
  for (std::size_t i = 0; i < subnets_.size(); ++i) {
    subnets_[i].set_parameters(theta.segment(theta_offset_[i], subnets_[i].parameter_count()));
  }
}

Eigen::VectorXd PiRnnModel::output_scale() const {
  Eigen::VectorXd s(n_y_);
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const auto sd = subnets_[i].output_scale();
    for (std::size_t k = 0; k < specs_[i].outputs.size(); ++k) s(specs_[i].outputs[k]) = sd(static_cast<Index>(k));
  }
  return s;
}

Eigen::MatrixXd PiRnnModel::subnet_inputs(std::size_t i, const Eigen::MatrixXd& U,
                                          const std::vector<Eigen::MatrixXd>& outs) const {
  const auto& s = specs_[i];
  Eigen::MatrixXd Ui(U.rows(), static_cast<Index>(s.inputs.size()));
  for (std::size_t c = 0; c < s.inputs.size(); ++c) {
    const auto& src = s.inputs[c];
    const auto col = static_cast<Index>(c);
    switch (src.kind) {
      case SourceKind::model_input:
        Ui.col(col) = U.col(src.index);
        break;
      case SourceKind::cumulative_demand:
        Ui.col(col) = U.rightCols(n_c_).rowwise().sum() - U.col(1 + src.index);
        break;
      case SourceKind::subnet_output:
        Ui.col(col) = outs[static_cast<std::size_t>(src.index)].col(src.slot);
        break;
    }
  }
  return Ui;
}

void PiRnnModel::fit_normalization(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& outputs) {
  if (inputs.cols() != n_u_ || outputs.cols() != n_y_ || inputs.rows() != outputs.rows()) {
    throw std::invalid_argument("normalization data does not match the model");
  }
  // Measured channels stand in for upstream subnet outputs.
  std::vector<Eigen::MatrixXd> measured(specs_.size());
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    measured[i].resize(outputs.rows(), static_cast<Index>(specs_[i].outputs.size()));
    for (std::size_t k = 0; k < specs_[i].outputs.size(); ++k) {
      measured[i].col(static_cast<Index>(k)) = outputs.col(specs_[i].outputs[k]);
    }
  }
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    subnets_[i].fit_normalization(subnet_inputs(i, inputs, measured), measured[i]);
  }
}

namespace {

struct PiTape final : Tape {
  std::vector<std::unique_ptr<Tape>> subnets;
  Index T = 0;
};

}  // namespace

Eigen::MatrixXd PiRnnModel::forward(const Eigen::VectorXd& x0, const Eigen::MatrixXd& U, std::unique_ptr<Tape>* tape,
                                    Eigen::VectorXd* x_final) const {
  if (U.cols() != n_u_) throw std::invalid_argument("input dimension mismatch");
  if (x0.size() != n_x_) throw std::invalid_argument("state dimension mismatch");
  PiTape* pt = nullptr;
  if (tape) {
    auto owned = std::make_unique<PiTape>();
    pt = owned.get();
    pt->subnets.resize(specs_.size());
    pt->T = U.rows();
    *tape = std::move(owned);
  }
  if (x_final) x_final->resize(n_x_);
  std::vector<Eigen::MatrixXd> outs(specs_.size());
  for (std::size_t i : order_) {
    const auto& m = subnets_[i];
    Eigen::VectorXd xf;
    outs[i] = m.forward(x0.segment(x_offset_[i], m.state_size()), subnet_inputs(i, U, outs),
                        pt ? &pt->subnets[i] : nullptr, x_final ? &xf : nullptr);
    if (x_final) x_final->segment(x_offset_[i], m.state_size()) = xf;
  }
  Eigen::MatrixXd Y(U.rows(), n_y_);
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    for (std::size_t k = 0; k < specs_[i].outputs.size(); ++k) {
      Y.col(specs_[i].outputs[k]) = outs[i].col(static_cast<Index>(k));
    }
  }
  return Y;
}

void PiRnnModel::backward(const Tape& tape, const Eigen::MatrixXd& dY, Eigen::Ref<Eigen::VectorXd> dtheta,
                          Eigen::MatrixXd* dU) const {
  const auto* pt = dynamic_cast<const PiTape*>(&tape);
  if (!pt) throw std::invalid_argument("tape was not produced by this model type");
  if (dY.rows() != pt->T || dY.cols() != n_y_) throw std::invalid_argument("output gradient shape mismatch");
  if (dtheta.size() != n_theta_) throw std::invalid_argument("gradient vector size mismatch");
  const Index T = pt->T;
  if (dU) dU->setZero(T, n_u_);

  std::vector<Eigen::MatrixXd> dout(specs_.size());
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    dout[i].resize(T, static_cast<Index>(specs_[i].outputs.size()));
    for (std::size_t k = 0; k < specs_[i].outputs.size(); ++k) {
      dout[i].col(static_cast<Index>(k)) = dY.col(specs_[i].outputs[k]);
    }
  }
  Eigen::MatrixXd dUi;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    const std::size_t i = *it;
    const auto& m = subnets_[i];
    m.backward(*pt->subnets[i], dout[i], dtheta.segment(theta_offset_[i], m.parameter_count()), &dUi);
    for (std::size_t c = 0; c < specs_[i].inputs.size(); ++c) {
      const auto& src = specs_[i].inputs[c];
      const auto g = dUi.col(static_cast<Index>(c));
      switch (src.kind) {
        case SourceKind::model_input:
          if (dU) dU->col(src.index) += g;
          break;
        case SourceKind::cumulative_demand:
          if (dU) {
            for (Index l = 0; l < n_c_; ++l) {
              if (l != src.index) dU->col(1 + l) += g;
            }
          }
          break;
        case SourceKind::subnet_output:
          dout[static_cast<std::size_t>(src.index)].col(src.slot) += g;
          break;
      }
    }
  }
}

}  // namespace dhs
