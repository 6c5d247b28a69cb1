#include "dhs/gru.hpp"

#include <cmath>
#include <stdexcept>

namespace dhs {

namespace {

double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

}  // namespace

GruLayerParams::GruLayerParams(Index n, Index n_in)
    : W(Eigen::MatrixXd::Zero(3 * n, n_in)), U(Eigen::MatrixXd::Zero(3 * n, n)), b(Eigen::VectorXd::Zero(3 * n)) {}

Index gru_param_count(Index n, Index n_in) { return 3 * n * n_in + 3 * n * n + 3 * n; }

GruView gru_view(const double* data, Index n, Index n_in) {
  return GruView{Eigen::Map<const Eigen::MatrixXd>(data, 3 * n, n_in),
                 Eigen::Map<const Eigen::MatrixXd>(data + 3 * n * n_in, 3 * n, n),
                 Eigen::Map<const Eigen::VectorXd>(data + 3 * n * n_in + 3 * n * n, 3 * n)};
}

GruGradView gru_grad_view(double* data, Index n, Index n_in) {
  return GruGradView{Eigen::Map<Eigen::MatrixXd>(data, 3 * n, n_in),
                     Eigen::Map<Eigen::MatrixXd>(data + 3 * n * n_in, 3 * n, n),
                     Eigen::Map<Eigen::VectorXd>(data + 3 * n * n_in + 3 * n * n, 3 * n)};
}

GruView gru_view(const GruLayerParams& p) {
  return GruView{Eigen::Map<const Eigen::MatrixXd>(p.W.data(), p.W.rows(), p.W.cols()),
                 Eigen::Map<const Eigen::MatrixXd>(p.U.data(), p.U.rows(), p.U.cols()),
                 Eigen::Map<const Eigen::VectorXd>(p.b.data(), p.b.size())};
}

void GruTape::resize(Index n, Index n_in, Index T) {
  x.resize(n, T);
  u.resize(n_in, T);
  z.resize(n, T);
  r.resize(n, T);
  c.resize(n, T);
}

Eigen::VectorXd gru_cell_step(const GruLayerParams& layer, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& u) {
  if (layer.W.rows() != 3 * layer.n() || layer.b.size() != 3 * layer.n() || layer.U.rows() != 3 * layer.n()) {
    throw std::invalid_argument("GRU layer parameters have inconsistent shapes");
  }
  if (x.size() != layer.n() || u.size() != layer.n_in()) throw std::invalid_argument("GRU state or input size mismatch");
  return gru_step(gru_view(layer), x, u);
}

Eigen::VectorXd gru_step(const GruView& L, const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                         GruTape* tape, Index t) {
  const Index n = L.n();
  if (x.size() != n || u.size() != L.n_in()) throw std::invalid_argument("GRU step dimension mismatch");
  Eigen::VectorXd a = L.W * u + L.b;
  a.head(2 * n).noalias() += L.U.topRows(2 * n) * x;
  Eigen::VectorXd z = a.head(n).unaryExpr(&sigmoid);
  Eigen::VectorXd r = a.segment(n, n).unaryExpr(&sigmoid);
  Eigen::VectorXd rx = r.cwiseProduct(x);
  Eigen::VectorXd c = (a.tail(n) + L.U.bottomRows(n) * rx).array().tanh().matrix();
  Eigen::VectorXd next = z.cwiseProduct(x) + (Eigen::VectorXd::Ones(n) - z).cwiseProduct(c);
  if (tape) {
    tape->x.col(t) = x;
    tape->u.col(t) = u;
    tape->z.col(t) = z;
    tape->r.col(t) = r;
    tape->c.col(t) = c;
  }
  return next;
}

void gru_step_backward(const GruView& L, const GruTape& tape, Index t, const Eigen::VectorXd& g,
                       GruGradView& grad, Eigen::VectorXd& dx, Eigen::VectorXd& du) {
  const Index n = L.n();
  const auto x = tape.x.col(t);
  const auto u = tape.u.col(t);
  const auto z = tape.z.col(t);
  const auto r = tape.r.col(t);
  const auto c = tape.c.col(t);

  Eigen::VectorXd da(3 * n);
  // x+ = z.x + (1-z).c
  da.head(n) = (g.array() * (x - c).array() * z.array() * (1.0 - z.array())).matrix();
  da.tail(n) = (g.array() * (1.0 - z.array()) * (1.0 - c.array().square())).matrix();
  Eigen::VectorXd rx = r.cwiseProduct(x);
  Eigen::VectorXd drx = L.U.bottomRows(n).transpose() * da.tail(n);
  da.segment(n, n) = (drx.array() * x.array() * r.array() * (1.0 - r.array())).matrix();

  grad.W.noalias() += da * u.transpose();
  grad.U.topRows(2 * n).noalias() += da.head(2 * n) * x.transpose();
  grad.U.bottomRows(n).noalias() += da.tail(n) * rx.transpose();
  grad.b += da;

  dx = g.cwiseProduct(z) + drx.cwiseProduct(r);
  dx.noalias() += L.U.topRows(2 * n).transpose() * da.head(2 * n);
  du.noalias() = L.W.transpose() * da;
}

}  // namespace dhs
