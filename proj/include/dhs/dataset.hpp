#pragma once

// Excitation sequences and recorded input/output datasets.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dhs/simulator.hpp"

namespace dhs {

struct ExcitationChannel {
  double lo = 0.0;
  double hi = 1.0;
  int hold_min = 12;  // samples
  int hold_max = 72;
};

// Piecewise-constant multilevel sequences, one column per channel. Each
// channel draws from its own generator seeded by (seed, channel index).
Eigen::MatrixXd generate_mprbs(const std::vector<ExcitationChannel>& channels, std::size_t n_samples,
                               std::uint64_t seed);

struct SplitFractions {
  double train = 0.70;
  double val = 0.15;  // test takes the remainder
};

struct Split {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

struct Dataset {
  double tau_s = 300.0;
  std::vector<std::string> input_names;        // manipulated inputs (T0s)
  std::vector<std::string> disturbance_names;  // load demands, W
  std::vector<std::string> output_names;
  Eigen::MatrixXd inputs;        // T x n_v
  Eigen::MatrixXd disturbances;  // T x n_d
  Eigen::MatrixXd outputs;       // T x n_y
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::string fingerprint;  // configuration that produced the data

  std::size_t rows() const { return static_cast<std::size_t>(outputs.rows()); }
  Split train() const { return {0, n_train}; }
  Split val() const { return {n_train, n_train + n_val}; }
  Split test() const { return {n_train + n_val, rows()}; }
  // Model input matrix [inputs, disturbances].
  Eigen::MatrixXd model_inputs() const;
  Eigen::MatrixXd model_inputs(Split s) const;
  Eigen::MatrixXd outputs_of(Split s) const;
  // Keeps the first `n` rows and re-splits with the same fractions.
  Dataset head(std::size_t n, const SplitFractions& fractions = {}) const;
  void set_split(const SplitFractions& fractions);
  // Keeps the last `n` rows of the training split; validation and test are unchanged.
  Dataset shrink_training(std::size_t n) const;
};

struct DatasetOptions {
  SplitFractions split;
  double warm_start_hours = 24.0;
  double nominal_supply = 75.0;
  std::vector<double> nominal_demands;  // W; empty -> column means of the demand sequence
  std::string fingerprint;
};

// Simulates the plant under the given supply temperatures (T x 1) and demands
// (T x n_c, W), after a warm start at nominal inputs.
Dataset run_dataset(const PlantLayout& layout, const Eigen::MatrixXd& supply,
                    const Eigen::MatrixXd& demands, const DatasetOptions& options);

std::string format_dataset_csv(const Dataset& d);
Dataset parse_dataset_csv(const std::string& content);
void save_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace dhs
