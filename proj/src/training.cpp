#include "dhs/training.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "dhs/metrics.hpp"
#include "dhs/text_format.hpp"

namespace dhs {

namespace {

void check_sequence(const SequenceModel& m, const Eigen::MatrixXd& U, const Eigen::MatrixXd& Y, Index washout) {
  if (U.rows() != Y.rows()) throw std::invalid_argument("inputs and targets are not aligned");
  if (U.cols() != m.input_size() || Y.cols() != m.output_size()) {
    throw std::invalid_argument("sequence channels do not match the model");
  }
  if (washout < 0 || washout >= U.rows()) throw std::invalid_argument("washout must be shorter than the sequence");
}

Eigen::MatrixXd scaled_error(const SequenceModel& m, const Eigen::MatrixXd& P, const Eigen::MatrixXd& Y) {
  const Eigen::RowVectorXd inv = m.output_scale().cwiseInverse().transpose();
  return (P - Y).array().rowwise() * inv.array();
}

}  // namespace

double sequence_loss(const SequenceModel& m, const Eigen::VectorXd& x0, const Eigen::MatrixXd& U,
                     const Eigen::MatrixXd& Y, Index washout) {
  check_sequence(m, U, Y, washout);
  const Eigen::MatrixXd P = m.forward(x0, U);
  const Index n = U.rows() - washout;
  const Eigen::MatrixXd E = scaled_error(m, P.bottomRows(n), Y.bottomRows(n));
  return E.squaredNorm() / static_cast<double>(E.size());
}

LossGradient bptt_gradients(const SequenceModel& m, const Eigen::VectorXd& x0, const Eigen::MatrixXd& U,
                            const Eigen::MatrixXd& Y, Index washout) {
  check_sequence(m, U, Y, washout);
  std::unique_ptr<Tape> tape;
  const Eigen::MatrixXd P = m.forward(x0, U, &tape);
  const Index n = U.rows() - washout;
  const Eigen::MatrixXd E = scaled_error(m, P.bottomRows(n), Y.bottomRows(n));
  const double count = static_cast<double>(E.size());
  LossGradient out;
  out.loss = E.squaredNorm() / count;
  if (!std::isfinite(out.loss)) throw TrainingDiverged("non-finite training loss");
  Eigen::MatrixXd dY = Eigen::MatrixXd::Zero(U.rows(), m.output_size());
  const Eigen::RowVectorXd inv = m.output_scale().cwiseInverse().transpose();
  dY.bottomRows(n) = (2.0 / count) * (E.array().rowwise() * inv.array()).matrix();
  out.grad = Eigen::VectorXd::Zero(m.parameter_count());
  m.backward(*tape, dY, out.grad);
  return out;
}

void adam_update(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& s, double lr,
                 const AdamConfig& cfg) {
  if (grad.size() != params.size() || s.m.size() != params.size() || s.v.size() != params.size()) {
    throw std::invalid_argument("ADAM shapes are inconsistent");
  }
  s.t += 1;
  s.m = cfg.beta1 * s.m + (1.0 - cfg.beta1) * grad;
  s.v = cfg.beta2 * s.v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.t));
  params.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + cfg.eps);
}

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning rate must be >= 0");
  if (subsequence < 2 || washout < 0 || washout >= subsequence) {
    throw std::invalid_argument("washout must be shorter than the subsequence");
  }
  if (batch < 1) throw std::invalid_argument("batch size must be >= 1");
  if (eval_washout < 0) throw std::invalid_argument("evaluation washout must be >= 0");
}

TrainResult train_tbptt(SequenceModel& m, const Dataset& d, const TrainConfig& cfg) {
  cfg.validate();
  if (d.n_train < static_cast<std::size_t>(cfg.subsequence)) {
    throw std::invalid_argument("training split shorter than one subsequence");
  }
  const Eigen::MatrixXd U_tr = d.model_inputs(d.train());
  const Eigen::MatrixXd Y_tr = d.outputs_of(d.train());
  const Eigen::MatrixXd U_val = d.model_inputs(d.val());
  const Eigen::MatrixXd Y_val = d.outputs_of(d.val());
  if (U_val.rows() <= cfg.eval_washout + 1) throw std::invalid_argument("validation split shorter than the washout");
  if (cfg.fit_normalization) m.fit_normalization(U_tr, Y_tr);

  const Index n_val = U_val.rows() - cfg.eval_washout;
  auto validate = [&](EpochRecord& rec) {
    const Eigen::MatrixXd P = m.forward(m.zero_state(), U_val);
    const Eigen::MatrixXd E = scaled_error(m, P.bottomRows(n_val), Y_val.bottomRows(n_val));
    rec.val_loss = E.squaredNorm() / static_cast<double>(E.size());
    rec.val_fit = std::isfinite(rec.val_loss) ? fit_index(Y_val.bottomRows(n_val), P.bottomRows(n_val))
                                              : -std::numeric_limits<double>::infinity();
  };

  TrainResult result;
  EpochRecord initial;
  initial.train_loss = sequence_loss(m, m.zero_state(), U_tr, Y_tr, cfg.eval_washout);
  validate(initial);
  result.history.push_back(initial);
  result.best_val_fit = initial.val_fit;
  Eigen::VectorXd best = m.parameters();

  const Index stride = cfg.subsequence - cfg.washout;
  const Index per_epoch = (U_tr.rows() + stride - 1) / stride;
  const Index last_start = U_tr.rows() - cfg.subsequence;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<Index> pick(0, last_start);
  AdamState adam(m.parameter_count());
  Eigen::VectorXd theta = m.parameters();
  const Eigen::VectorXd x0 = m.zero_state();

  for (int epoch = 1; epoch <= cfg.epochs && !result.diverged; ++epoch) {
    double loss_sum = 0.0;
    Index done = 0;
    while (done < per_epoch) {
      const Index count = std::min(cfg.batch, per_epoch - done);
      std::vector<Index> starts(static_cast<std::size_t>(count));
      for (auto& s : starts) s = pick(rng);
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(theta.size());
      double batch_loss = 0.0;
      try {
        for (Index s : starts) {
          auto lg = bptt_gradients(m, x0, U_tr.middleRows(s, cfg.subsequence), Y_tr.middleRows(s, cfg.subsequence),
                                   cfg.washout);
          batch_loss += lg.loss;
          grad += lg.grad;
        }
      } catch (const TrainingDiverged&) {
        result.diverged = true;
        break;
      }
      grad /= static_cast<double>(count);
      if (!grad.allFinite()) {
        result.diverged = true;
        break;
      }
      adam_update(theta, grad, adam, cfg.learning_rate, cfg.adam);
      m.set_parameters(theta);
      loss_sum += batch_loss;
      done += count;
    }
    if (result.diverged) break;
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(per_epoch);
    validate(rec);
    result.history.push_back(rec);
    if (!std::isfinite(rec.val_loss)) {
      result.diverged = true;
      break;
    }
    if (rec.val_fit > result.best_val_fit) {
      result.best_val_fit = rec.val_fit;
      result.best_epoch = epoch;
      best = theta;
    }
  }
  m.set_parameters(best);
  return result;
}

std::string format_history_csv(const TrainResult& r, const std::string& fingerprint) {
  using text::format_double;
  std::string out = "# config_fingerprint=" + fingerprint + "\n";
  out += "# best_epoch=" + std::to_string(r.best_epoch) + (r.diverged ? " diverged" : "") + "\n";
  out += "epoch,train_loss,val_loss,val_fit\n";
  for (const auto& h : r.history) {
    out += std::to_string(h.epoch) + "," + format_double(h.train_loss) + "," + format_double(h.val_loss) + "," +
           format_double(h.val_fit) + "\n";
  }
  return out;
}

}  // namespace dhs
