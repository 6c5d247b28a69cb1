#pragma once

// Economic NMPC over a recurrent plant model: blocked supply temperature,
// soft output constraints as quadratic penalties, projected L-BFGS solver.

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dhs/rnn_model.hpp"
#include "dhs/simulator.hpp"
#include "dhs/text_format.hpp"

namespace dhs {

class ModelDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NmpcConfig {
  Index N = 72;    // horizon, steps
  Index N_b = 6;   // blocking length, steps
  double tau_s = 300.0;
  double eta = 2.5;
  double c_t = 10.0;
  double T_star = 75.0;
  double dT_max = 5.0;  // degC per step
  double T0s_min = 65.0, T0s_max = 85.0;
  double T0r_min = 40.0, T0r_max = 70.0;
  double P0_min = 0.1e6, P0_max = 10e6;  // W
  double Ts_max = 85.0;
  double Ts_min_day = 70.0, Ts_min_night = 65.0;
  Index day_begin = 84, day_end = 228, period = 288;  // day bound on [begin, end] of each period
  double Ts_backoff = 0.0;  // degC added to the lower load bound inside the optimizer
  double slack_weight = 1e4;  // per degC^2 or MW^2
  int max_iterations = 60;
  double tolerance = 1e-6;  // projected gradient, inf-norm
  int memory = 8;
  double trust_radius = 5.0;  // degC, largest step of one iteration
  double c_w = 4186.0;

  void validate() const;
  Index blocks() const { return (N + N_b - 1) / N_b; }
  // Lower bound on load supply temperatures at absolute step k.
  double Ts_lower(Index k) const;
  static NmpcConfig from_config(const Config& cfg);
};

Eigen::VectorXd blocking_expand(const Eigen::VectorXd& blocked, Index N, Index N_b);

struct Objective {
  double value = 0.0;
  double energy_cost = 0.0;
  double terminal = 0.0;
  double penalty = 0.0;
  Eigen::VectorXd gradient;    // w.r.t. blocked values
  Eigen::MatrixXd predicted;   // N x n_y
  // Largest violation of each softened constraint over the horizon:
  // [T0r (degC), P0 (MW), T_is (degC), rate (degC)].
  Eigen::Vector4d violation = Eigen::Vector4d::Zero();
};

// Problem data for one receding-horizon instant.
struct NmpcProblem {
  const SequenceModel* model = nullptr;
  Eigen::VectorXd x0;
  Eigen::MatrixXd demands;  // N x n_c, W
  Eigen::VectorXd prices;   // N, currency per kWh
  double u_prev = 75.0;     // last applied supply temperature
  Index k_s = 0;            // absolute step, selects the load bounds
};

Objective objective_and_constraints(const NmpcProblem& p, const Eigen::VectorXd& blocked, const NmpcConfig& cfg,
                                    bool with_gradient = true);

struct NmpcSolution {
  Eigen::VectorXd blocked;
  Eigen::VectorXd trajectory;
  Eigen::Vector4d slack = Eigen::Vector4d::Zero();
  Eigen::MatrixXd predicted;
  double objective = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  bool max_iterations_reached = false;
  double solve_time = 0.0;  // s, wall clock
  std::vector<double> objective_trace;  // accepted iterates
};

// Box for the blocked variables: station bounds, with block 0 also held
// within the rate limit of the previous input.
std::pair<Eigen::VectorXd, Eigen::VectorXd> nmpc_bounds(const NmpcProblem& p, const NmpcConfig& cfg);

NmpcSolution solve(const NmpcProblem& p, const NmpcConfig& cfg,
                   const std::optional<Eigen::VectorXd>& warm_start = std::nullopt);

// Warm start for the next instant: the trajectory advanced by one step and
// sampled at block starts.
Eigen::VectorXd shift_warm_start(const NmpcSolution& s, const NmpcConfig& cfg);

struct ObserverState {
  Eigen::VectorXd x;
  Eigen::VectorXd last_input;
};

ObserverState observer_update(const SequenceModel& m, const ObserverState& o, double applied_supply,
                              const Eigen::VectorXd& demands);

class RuleBasedController {
 public:
  RuleBasedController(double T_const, double lo, double hi);
  double decide() const { return T_; }

 private:
  double T_;
};

}  // namespace dhs
