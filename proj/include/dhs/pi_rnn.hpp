#pragma once

// Topology-wired composition of single-layer GRU subnetworks: one per load
// plus one for the return network, evaluated in topological order with
// same-step pass-through of upstream outputs.

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dhs/rnn_model.hpp"
#include "dhs/topology.hpp"

namespace dhs {

class WiringError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SourceKind {
  model_input,        // column `index` of the composite input [T0s, P_1..P_nc]
  cumulative_demand,  // sum of all demands except load `index`
  subnet_output,      // output slot `slot` of subnet `index`
};

struct InputSource {
  SourceKind kind = SourceKind::model_input;
  int index = 0;
  int slot = 0;

  friend bool operator==(const InputSource&, const InputSource&) = default;
};

enum class SubnetRole { load, ret };

struct SubnetSpec {
  SubnetRole role = SubnetRole::load;
  int node = 0;                      // load node id; 0 for the return subnet
  std::vector<InputSource> inputs;
  std::vector<Index> outputs;        // composite output channels, slot order
  Index states = 1;

  friend bool operator==(const SubnetSpec&, const SubnetSpec&) = default;
};

// Per-subnet state sizes, loads in load order followed by the return subnet.
// The bundled AROMA network uses fixed tables for 30, 54 and 90 states.
std::vector<Index> allocate_neurons(const ReducedGraph& rg, const std::vector<double>& distances, Index total);

class PiRnnModel final : public SequenceModel {
 public:
  PiRnnModel(ReducedGraph rg, std::vector<SubnetSpec> specs, std::vector<RnnModel> subnets);

  std::unique_ptr<SequenceModel> clone() const override { return std::make_unique<PiRnnModel>(*this); }
  std::string kind() const override { return "pi-gru"; }
  Index state_size() const override { return n_x_; }
  Index input_size() const override { return n_u_; }
  Index output_size() const override { return n_y_; }
  Index parameter_count() const override { return n_theta_; }
  Eigen::VectorXd parameters() const override;
  void set_parameters(const Eigen::VectorXd& theta) override;
  Eigen::VectorXd output_scale() const override;
  void fit_normalization(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& outputs) override;

  Eigen::MatrixXd forward(const Eigen::VectorXd& x0, const Eigen::MatrixXd& U, std::unique_ptr<Tape>* tape = nullptr,
                          Eigen::VectorXd* x_final = nullptr) const override;
  void backward(const Tape& tape, const Eigen::MatrixXd& dY, Eigen::Ref<Eigen::VectorXd> dtheta,
                Eigen::MatrixXd* dU = nullptr) const override;

  const ReducedGraph& reduced_graph() const { return rg_; }
  const std::vector<SubnetSpec>& specs() const { return specs_; }
  const std::vector<RnnModel>& subnets() const { return subnets_; }
  const std::vector<std::size_t>& order() const { return order_; }
  Index load_count() const { return n_c_; }
  // Offsets of each subnet's block in the flat parameter and state vectors.
  Index parameter_offset(std::size_t i) const { return theta_offset_[i]; }
  Index state_offset(std::size_t i) const { return x_offset_[i]; }
  bool cumulative_demand() const;

 private:
  Eigen::MatrixXd subnet_inputs(std::size_t i, const Eigen::MatrixXd& U,
                                const std::vector<Eigen::MatrixXd>& outs) const;

  ReducedGraph rg_;
  std::vector<SubnetSpec> specs_;
  std::vector<RnnModel> subnets_;
  std::vector<std::size_t> order_;
  std::vector<Index> theta_offset_;
  std::vector<Index> x_offset_;
  Index n_c_ = 0;
  Index n_u_ = 0;
  Index n_y_ = 0;
  Index n_x_ = 0;
  Index n_theta_ = 0;
};

// Wiring: load i reads T_js of each reduced-graph predecessor j (T0s for the
// station), its own demand and optionally the sum of the other demands; the
// return subnet reads every load's (T_ic, q_ic).
std::vector<SubnetSpec> pi_rnn_wiring(const ReducedGraph& rg, const std::vector<Index>& allocation,
                                      bool cumulative_demand);

PiRnnModel build_pi_rnn(const ReducedGraph& rg, const std::vector<Index>& allocation, bool cumulative_demand,
                        std::uint64_t seed);

}  // namespace dhs
