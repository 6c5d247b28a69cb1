#include "dhs/rnn_model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace dhs {

std::pair<Eigen::VectorXd, Eigen::VectorXd> SequenceModel::step(const Eigen::VectorXd& x,
                                                                const Eigen::VectorXd& u) const {
  if (u.size() != input_size()) throw std::invalid_argument("input dimension mismatch");
  Eigen::VectorXd next;
  Eigen::MatrixXd y = forward(x, u.transpose(), nullptr, &next);
  return {std::move(next), y.row(0).transpose()};
}

Rollout rollout(const SequenceModel& m, const Eigen::VectorXd& x0, const Eigen::MatrixXd& U) {
  if (U.rows() == 0) throw std::invalid_argument("rollout needs a non-empty sequence");
  Rollout r;
  r.outputs.resize(U.rows(), m.output_size());
  r.states.resize(U.rows() + 1, m.state_size());
  r.states.row(0) = x0.transpose();
  Eigen::VectorXd x = x0;
  for (Index t = 0; t < U.rows(); ++t) {
    auto [next, y] = m.step(x, U.row(t).transpose());
    r.outputs.row(t) = y.transpose();
    r.states.row(t + 1) = next.transpose();
    x = std::move(next);
  }
  return r;
}

Normalization Normalization::identity(Index n) {
  return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Ones(n)};
}

Normalization Normalization::fit(const Eigen::MatrixXd& data) {
  if (data.rows() < 2) throw std::invalid_argument("normalization needs at least two samples");
  Normalization n;
  n.mean = data.colwise().mean().transpose();
  n.std.resize(data.cols());
  for (Index j = 0; j < data.cols(); ++j) {
    const double var = (data.col(j).array() - n.mean(j)).square().mean();
    const double sd = std::sqrt(var);
    n.std(j) = sd > 1e-9 * std::max(1.0, std::abs(n.mean(j))) ? sd : 1.0;
  }
  return n;
}

RnnModel::RnnModel(Index n_u, std::vector<Index> layers, Index n_y, bool feedthrough)
    : n_u_(n_u), n_y_(n_y), layers_(std::move(layers)), feedthrough_(feedthrough) {
  if (n_u < 1 || n_y < 1 || layers_.empty()) throw std::invalid_argument("model sizes must be >= 1");
  Index offset = 0;
  Index n_in = n_u;
  for (Index n : layers_) {
    if (n < 1) throw std::invalid_argument("layer sizes must be >= 1");
    layer_offset_.push_back(offset);
    offset += gru_param_count(n, n_in);
    n_x_ += n;
    n_in = n;
  }
  readout_offset_ = offset;
  offset += n_y * layers_.back();
  bias_offset_ = offset;
  offset += n_y;
  direct_offset_ = offset;
  if (feedthrough_) offset += n_y * n_u;
  theta_ = Eigen::VectorXd::Zero(offset);
  in_norm_ = Normalization::identity(n_u);
  out_norm_ = Normalization::identity(n_y);
}

void RnnModel::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto fill = [&](double* p, Index count, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Index i = 0; i < count; ++i) p[i] = dist(rng);
  };
  theta_.setZero();
  Index n_in = n_u_;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Index n = layers_[l];
    double* p = theta_.data() + layer_offset_[l];
    fill(p, 3 * n * n_in, 1.0 / std::sqrt(static_cast<double>(n_in)));
    fill(p + 3 * n * n_in, 3 * n * n, 1.0 / std::sqrt(static_cast<double>(n)));
    double* b = p + 3 * n * n_in + 3 * n * n;
    for (Index i = 0; i < n; ++i) b[i] = 1.0;  // update gate
    n_in = n;
  }
  fill(theta_.data() + readout_offset_, n_y_ * layers_.back(),
       1.0 / std::sqrt(static_cast<double>(layers_.back())));
  if (feedthrough_) {
    fill(theta_.data() + direct_offset_, n_y_ * n_u_, 1.0 / std::sqrt(static_cast<double>(n_u_)));
  }
}

void RnnModel::set_parameters(const Eigen::VectorXd& theta) {
  if (theta.size() != theta_.size()) throw std::invalid_argument("parameter vector size mismatch");
  theta_ = theta;
}

void RnnModel::set_normalization(Normalization in, Normalization out) {
  if (in.mean.size() != n_u_ || in.std.size() != n_u_ || out.mean.size() != n_y_ || out.std.size() != n_y_) {
    throw std::invalid_argument("normalization size mismatch");
  }
  if ((in.std.array() <= 0.0).any() || (out.std.array() <= 0.0).any()) {
    throw std::invalid_argument("normalization deviations must be positive");
  }
  in_norm_ = std::move(in);
  out_norm_ = std::move(out);
}

void RnnModel::fit_normalization(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& outputs) {
  set_normalization(Normalization::fit(inputs), Normalization::fit(outputs));
}

GruView RnnModel::layer(std::size_t l) const {
  const Index n_in = l == 0 ? n_u_ : layers_[l - 1];
  return gru_view(theta_.data() + layer_offset_[l], layers_[l], n_in);
}

Eigen::Map<const Eigen::MatrixXd> RnnModel::readout_weights() const {
  return Eigen::Map<const Eigen::MatrixXd>(theta_.data() + readout_offset_, n_y_, layers_.back());
}

Eigen::Map<const Eigen::VectorXd> RnnModel::readout_bias() const {
  return Eigen::Map<const Eigen::VectorXd>(theta_.data() + bias_offset_, n_y_);
}

namespace {

struct RnnTape final : Tape {
  std::vector<GruTape> layers;
  Eigen::MatrixXd u_norm;  // n_u x T
  Eigen::MatrixXd x_last;  // n_last x T, readout argument
};

}  // namespace

Eigen::MatrixXd RnnModel::forward(const Eigen::VectorXd& x0, const Eigen::MatrixXd& U, std::unique_ptr<Tape>* tape,
                                  Eigen::VectorXd* x_final) const {
  if (U.cols() != n_u_) throw std::invalid_argument("input dimension mismatch");
  if (x0.size() != n_x_) throw std::invalid_argument("state dimension mismatch");
  const Index T = U.rows();
  const std::size_t L = layers_.size();

  RnnTape* rt = nullptr;
  if (tape) {
    auto owned = std::make_unique<RnnTape>();
    rt = owned.get();
    rt->layers.resize(L);
    Index n_in = n_u_;
    for (std::size_t l = 0; l < L; ++l) {
      rt->layers[l].resize(layers_[l], n_in, T);
      n_in = layers_[l];
    }
    rt->u_norm.resize(n_u_, T);
    rt->x_last.resize(layers_.back(), T);
    *tape = std::move(owned);
  }

  std::vector<Eigen::VectorXd> x(L);
  {
    Index off = 0;
    for (std::size_t l = 0; l < L; ++l) {
      x[l] = x0.segment(off, layers_[l]);
      off += layers_[l];
    }
  }
  std::vector<GruView> views;
  for (std::size_t l = 0; l < L; ++l) views.push_back(layer(l));
  const auto Wo = readout_weights();
  const auto bo = readout_bias();
  Eigen::Map<const Eigen::MatrixXd> D(theta_.data() + direct_offset_, feedthrough_ ? n_y_ : 0, n_u_);

  Eigen::MatrixXd Y(T, n_y_);
  for (Index t = 0; t < T; ++t) {
    Eigen::VectorXd un = (U.row(t).transpose() - in_norm_.mean).cwiseQuotient(in_norm_.std);
    if (!un.allFinite()) throw std::invalid_argument("non-finite model input");
    const Eigen::VectorXd* h = &un;
    for (std::size_t l = 0; l < L; ++l) {
      x[l] = gru_step(views[l], x[l], *h, rt ? &rt->layers[l] : nullptr, t);
      h = &x[l];
    }
    Eigen::VectorXd yn = Wo * (*h) + bo;
    if (feedthrough_) yn.noalias() += D * un;
    Y.row(t) = (yn.cwiseProduct(out_norm_.std) + out_norm_.mean).transpose();
    if (rt) {
      rt->u_norm.col(t) = un;
      rt->x_last.col(t) = *h;
    }
  }
  if (x_final) {
    x_final->resize(n_x_);
    Index off = 0;
    for (std::size_t l = 0; l < L; ++l) {
      x_final->segment(off, layers_[l]) = x[l];
      off += layers_[l];
    }
  }
  return Y;
}

void RnnModel::backward(const Tape& tape, const Eigen::MatrixXd& dY, Eigen::Ref<Eigen::VectorXd> dtheta,
                        Eigen::MatrixXd* dU) const {
  const auto* rt = dynamic_cast<const RnnTape*>(&tape);
  if (!rt) throw std::invalid_argument("tape was not produced by this model type");
  const Index T = rt->u_norm.cols();
  if (dY.rows() != T || dY.cols() != n_y_) throw std::invalid_argument("output gradient shape mismatch");
  if (dtheta.size() != theta_.size()) throw std::invalid_argument("gradient vector size mismatch");
  const std::size_t L = layers_.size();

  std::vector<GruView> views;
  std::vector<GruGradView> grads;
  Index n_in = n_u_;
  for (std::size_t l = 0; l < L; ++l) {
    views.push_back(layer(l));
    grads.push_back(gru_grad_view(dtheta.data() + layer_offset_[l], layers_[l], n_in));
    n_in = layers_[l];
  }
  const auto Wo = readout_weights();
  Eigen::Map<Eigen::MatrixXd> gWo(dtheta.data() + readout_offset_, n_y_, layers_.back());
  Eigen::Map<Eigen::VectorXd> gbo(dtheta.data() + bias_offset_, n_y_);
  Eigen::Map<const Eigen::MatrixXd> D(theta_.data() + direct_offset_, feedthrough_ ? n_y_ : 0, n_u_);
  Eigen::Map<Eigen::MatrixXd> gD(dtheta.data() + direct_offset_, feedthrough_ ? n_y_ : 0, n_u_);

  if (dU) dU->setZero(T, n_u_);
  std::vector<Eigen::VectorXd> carry(L);
  for (std::size_t l = 0; l < L; ++l) carry[l] = Eigen::VectorXd::Zero(layers_[l]);
  Eigen::VectorXd dx, dh, du_n(n_u_);

  for (Index t = T; t-- > 0;) {
    Eigen::VectorXd dyn = dY.row(t).transpose().cwiseProduct(out_norm_.std);
    gWo.noalias() += dyn * rt->x_last.col(t).transpose();
    gbo += dyn;
    du_n.setZero();
    if (feedthrough_) {
      gD.noalias() += dyn * rt->u_norm.col(t).transpose();
      du_n.noalias() += D.transpose() * dyn;
    }
    Eigen::VectorXd g = carry[L - 1] + Wo.transpose() * dyn;
    for (std::size_t l = L; l-- > 0;) {
      gru_step_backward(views[l], rt->layers[l], t, g, grads[l], dx, dh);
      carry[l] = dx;
      if (l > 0) {
        g = carry[l - 1] + dh;
      } else {
        du_n += dh;
      }
    }
    if (dU) dU->row(t) = du_n.cwiseQuotient(in_norm_.std).transpose();
  }
}

RnnModel build_monolithic_gru(const std::vector<Index>& layers, Index n_u, Index n_y, std::uint64_t seed) {
  RnnModel m(n_u, layers, n_y);
  m.initialize(seed);
  return m;
}

}  // namespace dhs
