#pragma once

// Fully gated GRU cell with hand-written backward pass.
//
// Gate blocks are stacked row-wise in the order update (z), reset (r),
// candidate (c): W is 3n x n_in, U is 3n x n, b has 3n entries.

#include <Eigen/Dense>

namespace dhs {

using Eigen::Index;

struct GruLayerParams {
  Eigen::MatrixXd W;
  Eigen::MatrixXd U;
  Eigen::VectorXd b;

  GruLayerParams() = default;
  GruLayerParams(Index n, Index n_in);
  Index n() const { return U.cols(); }
  Index n_in() const { return W.cols(); }
};

// Read-only and writable views onto a layer stored inside a flat vector.
struct GruView {
  Eigen::Map<const Eigen::MatrixXd> W;
  Eigen::Map<const Eigen::MatrixXd> U;
  Eigen::Map<const Eigen::VectorXd> b;

  Index n() const { return U.cols(); }
  Index n_in() const { return W.cols(); }
};

struct GruGradView {
  Eigen::Map<Eigen::MatrixXd> W;
  Eigen::Map<Eigen::MatrixXd> U;
  Eigen::Map<Eigen::VectorXd> b;
};

Index gru_param_count(Index n, Index n_in);
GruView gru_view(const double* data, Index n, Index n_in);
GruGradView gru_grad_view(double* data, Index n, Index n_in);
GruView gru_view(const GruLayerParams& p);

// Per-step intermediate values, one column per time step.
struct GruTape {
  Eigen::MatrixXd x;  // state entering the step
  Eigen::MatrixXd u;  // layer input
  Eigen::MatrixXd z, r, c;

  void resize(Index n, Index n_in, Index T);
};

Eigen::VectorXd gru_cell_step(const GruLayerParams& layer, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& u);

// Forward step; records intermediates in column `t` of `tape` when given.
Eigen::VectorXd gru_step(const GruView& layer, const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                         GruTape* tape = nullptr, Index t = 0);

// Given g = dL/dx+ at step t, accumulates parameter gradients into `grad` and
// returns dL/dx (into dx) and dL/du (into du).
void gru_step_backward(const GruView& layer, const GruTape& tape, Index t, const Eigen::VectorXd& g,
                       GruGradView& grad, Eigen::VectorXd& dx, Eigen::VectorXd& du);

}  // namespace dhs
