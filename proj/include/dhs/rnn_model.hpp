#pragma once

// Common contract for recurrent sequence models and the stacked GRU.

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dhs/gru.hpp"

namespace dhs {

// Intermediate values of one forward pass, consumed by backward().
struct Tape {
  virtual ~Tape() = default;
};

// Models map raw (physical) inputs to raw outputs. Parameters are exposed as
// one flat vector; gradients use the same layout.
class SequenceModel {
 public:
  virtual ~SequenceModel() = default;

  virtual std::unique_ptr<SequenceModel> clone() const = 0;
  virtual std::string kind() const = 0;
  virtual Index state_size() const = 0;
  virtual Index input_size() const = 0;
  virtual Index output_size() const = 0;
  virtual Index parameter_count() const = 0;
  virtual Eigen::VectorXd parameters() const = 0;
  virtual void set_parameters(const Eigen::VectorXd& theta) = 0;

  // Per-output scale used to normalize errors in the training loss.
  virtual Eigen::VectorXd output_scale() const = 0;
  // Sets input/output standardization from training data (rows = time).
  virtual void fit_normalization(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& outputs) = 0;

  // Rolls the model over the rows of U from state x0. Returns T x n_y outputs.
  virtual Eigen::MatrixXd forward(const Eigen::VectorXd& x0, const Eigen::MatrixXd& U,
                                  std::unique_ptr<Tape>* tape = nullptr,
                                  Eigen::VectorXd* x_final = nullptr) const = 0;
  // Adds dL/dtheta to `dtheta` and, when `dU` is given, stores dL/dU (T x n_u).
  virtual void backward(const Tape& tape, const Eigen::MatrixXd& dY, Eigen::Ref<Eigen::VectorXd> dtheta,
                        Eigen::MatrixXd* dU = nullptr) const = 0;

  // One step: (x+, y).
  std::pair<Eigen::VectorXd, Eigen::VectorXd> step(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const;
  Eigen::VectorXd zero_state() const { return Eigen::VectorXd::Zero(state_size()); }
};

struct Rollout {
  Eigen::MatrixXd outputs;  // T x n_y
  Eigen::MatrixXd states;   // (T + 1) x n_x, row 0 is x0
};

// Folds step() over the rows of U, keeping every state.
Rollout rollout(const SequenceModel& m, const Eigen::VectorXd& x0, const Eigen::MatrixXd& U);

struct Normalization {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;

  static Normalization identity(Index n);
  // Per-column mean and standard deviation; tiny deviations are replaced by 1.
  static Normalization fit(const Eigen::MatrixXd& data);
};

// Stacked GRU with an affine readout from the last layer's new state.
// Layer l receives the new state of layer l-1; layer 1 receives the
// normalized input.
class RnnModel final : public SequenceModel {
 public:
  RnnModel(Index n_u, std::vector<Index> layers, Index n_y, bool feedthrough = false);

  // Uniform(+-1/sqrt(fan_in)) weights, zero biases except the update gate (+1).
  void initialize(std::uint64_t seed);

  std::unique_ptr<SequenceModel> clone() const override { return std::make_unique<RnnModel>(*this); }
  std::string kind() const override { return "gru"; }
  Index state_size() const override { return n_x_; }
  Index input_size() const override { return n_u_; }
  Index output_size() const override { return n_y_; }
  Index parameter_count() const override { return theta_.size(); }
  Eigen::VectorXd parameters() const override { return theta_; }
  void set_parameters(const Eigen::VectorXd& theta) override;
  Eigen::VectorXd output_scale() const override { return out_norm_.std; }
  void fit_normalization(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& outputs) override;

  Eigen::MatrixXd forward(const Eigen::VectorXd& x0, const Eigen::MatrixXd& U, std::unique_ptr<Tape>* tape = nullptr,
                          Eigen::VectorXd* x_final = nullptr) const override;
  void backward(const Tape& tape, const Eigen::MatrixXd& dY, Eigen::Ref<Eigen::VectorXd> dtheta,
                Eigen::MatrixXd* dU = nullptr) const override;

  const std::vector<Index>& layers() const { return layers_; }
  bool feedthrough() const { return feedthrough_; }
  const Normalization& input_normalization() const { return in_norm_; }
  const Normalization& output_normalization() const { return out_norm_; }
  void set_normalization(Normalization in, Normalization out);

  GruView layer(std::size_t l) const;
  Eigen::Map<const Eigen::MatrixXd> readout_weights() const;
  Eigen::Map<const Eigen::VectorXd> readout_bias() const;

 private:
  Index n_u_;
  Index n_y_;
  Index n_x_ = 0;
  std::vector<Index> layers_;
  bool feedthrough_;
  std::vector<Index> layer_offset_;
  Index readout_offset_ = 0;
  Index bias_offset_ = 0;
  Index direct_offset_ = 0;
  Eigen::VectorXd theta_;
  Normalization in_norm_;
  Normalization out_norm_;
};

// Layers {9,9,9,9,9,9} give the 54-state baseline.
RnnModel build_monolithic_gru(const std::vector<Index>& layers, Index n_u, Index n_y, std::uint64_t seed);

}  // namespace dhs
