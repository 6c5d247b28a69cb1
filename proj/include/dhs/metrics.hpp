#pragma once

// Identification accuracy: FIT over the stacked output sequence and per-output R^2.

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

#include "dhs/dataset.hpp"
#include "dhs/rnn_model.hpp"

namespace dhs {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Rows are time, columns are output channels. Percent.
double fit_index(const Eigen::MatrixXd& y_meas, const Eigen::MatrixXd& y_pred);
double r2_per_output(const Eigen::MatrixXd& y_meas, const Eigen::MatrixXd& y_pred, Index j);

struct EvalReport {
  std::string split;
  double fit = 0.0;
  std::vector<std::string> names;
  Eigen::VectorXd r2;    // NaN for channels without variance
  Eigen::VectorXd rmse;
  double r2_min = 0.0;   // over channels with variance
  double r2_max = 0.0;
  std::size_t samples = 0;
  std::size_t washout = 0;
};

EvalReport make_report(const Eigen::MatrixXd& y_meas, const Eigen::MatrixXd& y_pred,
                       const std::vector<std::string>& names);

// Free run from the zero state over the split; the first `washout` samples
// settle the state and are not scored.
EvalReport evaluate(const SequenceModel& m, const Dataset& d, Split s, Index washout = 50,
                    const std::string& split_name = "test");

std::string report_json(const EvalReport& r, const std::string& fingerprint);

struct SeedSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single run
};

SeedSummary summarize(const std::vector<double>& values);

}  // namespace dhs
