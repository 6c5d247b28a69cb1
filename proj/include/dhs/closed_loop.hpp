#pragma once

// Receding-horizon closed loop against the simulated plant, profiles and
// performance indexes.

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

#include "dhs/nmpc.hpp"
#include "dhs/simulator.hpp"

namespace dhs {

// Default daily profiles at 5 min resolution (288 rows).
// Demands in W, one column per load; prices in currency per kWh.
Eigen::MatrixXd default_demand_profile(const std::vector<double>& peak_W, Index steps_per_day = 288);
Eigen::VectorXd default_price_profile(Index steps_per_day = 288);

// Rows k = 0.. of a periodic profile, repeated as needed.
Eigen::MatrixXd periodic_extend(const Eigen::MatrixXd& profile, Index rows);

// "k,value[,value...]" CSV with a header line; '#' lines are comments.
std::string format_profile_csv(const Eigen::MatrixXd& profile, const std::vector<std::string>& names,
                               const std::string& fingerprint);
Eigen::MatrixXd parse_profile_csv(const std::string& content);
Eigen::MatrixXd load_profile(const std::filesystem::path& path);

enum class ControllerKind { nmpc, rule_based };

struct ControllerSpec {
  ControllerKind kind = ControllerKind::rule_based;
  const SequenceModel* model = nullptr;  // nmpc only
  double T_const = 75.0;                 // rule-based only
  std::string label;
};

struct ClosedLoopConfig {
  Index steps = 288;
  double warm_start_hours = 24.0;
  double T_initial = 75.0;  // supply temperature of the warm start and first u_prev
  NmpcConfig nmpc;
};

struct StepRecord {
  double T0s = 0.0;
  Eigen::VectorXd outputs;  // plant outputs, channel order
  Eigen::VectorXd demands;  // W
  double price = 0.0;
  double P0 = 0.0;          // W, plant-measured station power
  double P_loads = 0.0;     // W, sum of measured load powers
  double Ts_lower = 0.0;
  double Ts_violation = 0.0;  // degC, worst load below its lower bound (>= 0)
  double solve_time = 0.0;    // s
  int iterations = 0;
  bool converged = true;
  bool failed = false;
  double objective = 0.0;
};

struct PerformanceIndexes {
  double C_p = 0.0;          // currency over the run
  double t_avg = 0.0;        // s; 0 when nothing was solved
  double P_loss_sum = 0.0;   // W, summed over steps
  double P_loss_mean = 0.0;  // W
};

PerformanceIndexes performance_indexes(const std::vector<StepRecord>& r, double tau_s, double eta);

struct ClosedLoopResult {
  std::string label;
  std::vector<StepRecord> records;
  std::vector<std::string> output_names;
  PerformanceIndexes indexes;
  int failures = 0;
  double max_rate = 0.0;  // degC, largest applied change (including against T_initial)
  double violation_share = 0.0;  // fraction of steps with Ts_violation >= 0.5 degC
};

ClosedLoopResult closed_loop(const PlantLayout& layout, const ControllerSpec& controller,
                             const Eigen::MatrixXd& demands, const Eigen::VectorXd& prices,
                             const ClosedLoopConfig& cfg);

// Time series without wall-clock columns, so reruns are byte-identical.
std::string format_closed_loop_csv(const ClosedLoopResult& r, const std::string& fingerprint);
std::string closed_loop_summary_json(const std::vector<ClosedLoopResult>& runs, const std::string& fingerprint);

}  // namespace dhs
