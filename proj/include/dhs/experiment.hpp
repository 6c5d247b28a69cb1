#pragma once

// Config-driven pipeline behind the command-line tool.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dhs/closed_loop.hpp"
#include "dhs/dataset.hpp"
#include "dhs/metrics.hpp"
#include "dhs/rnn_model.hpp"
#include "dhs/simulator.hpp"
#include "dhs/text_format.hpp"
#include "dhs/topology.hpp"
#include "dhs/training.hpp"

namespace dhs {

class Experiment {
 public:
  // Relative paths inside the config resolve against the config file's directory.
  Experiment(Config config, std::filesystem::path base_dir, std::filesystem::path out_dir);
  static Experiment load(const std::filesystem::path& config_path, const std::filesystem::path& out_dir,
                         std::optional<std::uint64_t> seed = std::nullopt);

  const Config& config() const { return config_; }
  const std::filesystem::path& out_dir() const { return out_; }
  std::string fingerprint() const { return config_.fingerprint(); }
  // Covers only what shapes the dataset, so training overrides can reuse it.
  std::string data_fingerprint() const { return config_.subset({"network", "simulator", "excitation"}).fingerprint(); }

  std::filesystem::path resolve(const std::string& path) const;
  NetworkGraph topology() const;
  SimConfig sim_config() const;
  PlantLayout plant() const;
  std::vector<std::uint64_t> seeds() const;
  TrainConfig training(std::uint64_t seed) const;
  NmpcConfig nmpc() const;
  ClosedLoopConfig closed_loop_config() const;
  std::vector<ExcitationChannel> excitation(std::size_t loads) const;
  Eigen::MatrixXd demand_profile(std::size_t loads) const;  // one day, W
  Eigen::VectorXd price_profile() const;                     // one day

 private:
  Config config_;
  std::filesystem::path base_;
  std::filesystem::path out_;
};

// Layer widths of a monolithic GRU with `states` total states.
std::vector<Index> gru_layer_sizes(Index states, Index layers);

std::unique_ptr<SequenceModel> build_model(const Experiment& e, const std::string& arch, Index states,
                                           std::uint64_t seed);

std::string model_tag(const std::string& arch, Index states, const std::string& variant);

struct SeedOutcome {
  std::uint64_t seed = 0;
  TrainResult training;
  EvalReport test;
  std::filesystem::path model_path;
};

struct TrainOutcome {
  std::string arch;
  Index states = 0;
  std::string variant;  // "full" or "half"
  std::vector<SeedOutcome> seeds;
  SeedSummary fit, r2_min, r2_max;
};

void cmd_simulate(const Experiment& e);
Dataset cmd_gen_data(const Experiment& e);
// `train_fraction` < 1 keeps only the latest part of the training split.
TrainOutcome cmd_train(const Experiment& e, const std::string& arch, Index states, double train_fraction = 1.0);
std::vector<EvalReport> cmd_eval(const Experiment& e, const std::filesystem::path& model,
                                 const std::filesystem::path& dataset);
// NMPC with the given model file, or the rule-based controller when `model` is empty.
ClosedLoopResult cmd_control(const Experiment& e, const std::optional<std::filesystem::path>& model,
                             const std::string& label);

struct ReproduceOutcome {
  std::vector<TrainOutcome> identification;
  std::vector<ClosedLoopResult> control;
};
ReproduceOutcome cmd_reproduce(const Experiment& e);

std::string format_train_table(const std::vector<TrainOutcome>& runs, const std::string& fingerprint);

}  // namespace dhs
