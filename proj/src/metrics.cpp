#include "dhs/metrics.hpp"

#include <cmath>
#include <limits>

#include <json.hpp>

namespace dhs {

namespace {

void check_shapes(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw MetricError("measured and predicted shapes differ");
  if (a.rows() < 2) throw MetricError("metrics need at least two samples");
}

// Deviation at round-off level (e.g. a temperature pinned by a local
// controller) counts as no variance.
bool has_variance(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  const Eigen::RowVectorXd avg = m.colwise().mean();
  const double rms = std::sqrt((m.rowwise() - avg).squaredNorm() / static_cast<double>(m.size()));
  return rms > 1e-9 * std::max(1.0, avg.cwiseAbs().maxCoeff());
}

}  // namespace

double fit_index(const Eigen::MatrixXd& y_meas, const Eigen::MatrixXd& y_pred) {
  check_shapes(y_meas, y_pred);
  const Eigen::RowVectorXd avg = y_meas.colwise().mean();
  const double den = (y_meas.rowwise() - avg).norm();
  if (!(den > 0.0) || !has_variance(y_meas)) throw MetricError("FIT undefined for a constant measured signal");
  return 100.0 * (1.0 - (y_meas - y_pred).norm() / den);
}

double r2_per_output(const Eigen::MatrixXd& y_meas, const Eigen::MatrixXd& y_pred, Index j) {
  check_shapes(y_meas, y_pred);
  if (j < 0 || j >= y_meas.cols()) throw MetricError("output index out of range");
  const auto m = y_meas.col(j);
  const double den = (m.array() - m.mean()).square().sum();
  if (!(den > 0.0) || !has_variance(m)) throw MetricError("R2 undefined for a channel without variance");
  return 100.0 * (1.0 - (m - y_pred.col(j)).squaredNorm() / den);
}

EvalReport make_report(const Eigen::MatrixXd& y_meas, const Eigen::MatrixXd& y_pred,
                       const std::vector<std::string>& names) {
  EvalReport r;
  r.fit = fit_index(y_meas, y_pred);
  r.names = names;
  const Index ny = y_meas.cols();
  r.r2.resize(ny);
  r.rmse.resize(ny);
  r.r2_min = std::numeric_limits<double>::infinity();
  r.r2_max = -std::numeric_limits<double>::infinity();
  for (Index j = 0; j < ny; ++j) {
    r.rmse(j) = std::sqrt((y_meas.col(j) - y_pred.col(j)).squaredNorm() / static_cast<double>(y_meas.rows()));
    const auto m = y_meas.col(j);
    if (has_variance(m)) {
      r.r2(j) = r2_per_output(y_meas, y_pred, j);
      r.r2_min = std::min(r.r2_min, r.r2(j));
      r.r2_max = std::max(r.r2_max, r.r2(j));
    } else {
      r.r2(j) = std::numeric_limits<double>::quiet_NaN();
    }
  }
  if (!std::isfinite(r.r2_min)) r.r2_min = r.r2_max = std::numeric_limits<double>::quiet_NaN();
  r.samples = static_cast<std::size_t>(y_meas.rows());
  return r;
}

EvalReport evaluate(const SequenceModel& m, const Dataset& d, Split s, Index washout,
                    const std::string& split_name) {
  if (m.input_size() != static_cast<Index>(d.input_names.size() + d.disturbance_names.size()) ||
      m.output_size() != static_cast<Index>(d.output_names.size())) {
    throw std::invalid_argument("model channels do not match the dataset");
  }
  if (static_cast<Index>(s.size()) <= washout + 1) throw MetricError("split shorter than the washout");
  const Eigen::MatrixXd U = d.model_inputs(s);
  const Eigen::MatrixXd Y = d.outputs_of(s);
  const Eigen::MatrixXd P = m.forward(m.zero_state(), U);
  const Index n = U.rows() - washout;
  EvalReport r = make_report(Y.bottomRows(n), P.bottomRows(n), d.output_names);
  r.split = split_name;
  r.washout = static_cast<std::size_t>(washout);
  return r;
}

std::string report_json(const EvalReport& r, const std::string& fingerprint) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::ordered_json j;
  j["config_fingerprint"] = fingerprint;
  j["split"] = r.split;
  j["channels"] = "physical";
  j["samples"] = r.samples;
  j["washout"] = r.washout;
  j["fit"] = num(r.fit);
  j["r2_min"] = num(r.r2_min);
  j["r2_max"] = num(r.r2_max);
  nlohmann::ordered_json per;
  for (std::size_t k = 0; k < r.names.size(); ++k) {
    const auto i = static_cast<Index>(k);
    per[r.names[k]] = {{"r2", num(r.r2(i))}, {"rmse", num(r.rmse(i))}};
  }
  j["outputs"] = per;
  return j.dump(2) + "\n";
}

SeedSummary summarize(const std::vector<double>& values) {
  SeedSummary s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

}  // namespace dhs
