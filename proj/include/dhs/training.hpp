#pragma once

// Truncated backpropagation through time with ADAM.

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dhs/dataset.hpp"
#include "dhs/rnn_model.hpp"

namespace dhs {

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossGradient {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

// Mean squared error of scaled outputs over rows t >= washout.
double sequence_loss(const SequenceModel& m, const Eigen::VectorXd& x0, const Eigen::MatrixXd& U,
                     const Eigen::MatrixXd& Y, Index washout);

// Loss and its exact parameter gradient through the unrolled sequence.
LossGradient bptt_gradients(const SequenceModel& m, const Eigen::VectorXd& x0, const Eigen::MatrixXd& U,
                            const Eigen::MatrixXd& Y, Index washout);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long t = 0;

  AdamState() = default;
  explicit AdamState(Index n) : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}
};

void adam_update(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& s, double lr,
                 const AdamConfig& cfg = {});

struct TrainConfig {
  int epochs = 300;
  double learning_rate = 0.003;
  Index subsequence = 200;
  Index washout = 50;
  Index batch = 16;
  Index eval_washout = 50;
  std::uint64_t seed = 1;
  AdamConfig adam;
  bool fit_normalization = true;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;  // mean minibatch loss; free-run loss on the training split at epoch 0
  double val_loss = 0.0;
  double val_fit = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_fit = 0.0;
  bool diverged = false;
};

// Trains in place; on return the model holds the best-validation snapshot.
TrainResult train_tbptt(SequenceModel& m, const Dataset& d, const TrainConfig& cfg);

std::string format_history_csv(const TrainResult& r, const std::string& fingerprint);

}  // namespace dhs
