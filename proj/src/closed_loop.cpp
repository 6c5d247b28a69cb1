#include "dhs/closed_loop.hpp"

#include <cmath>
#include <json.hpp>
#include <sstream>

#include "dhs/text_format.hpp"

namespace dhs {

namespace {

// Hourly anchors, linearly interpolated between hours.
constexpr double kDemandShape[24] = {0.55, 0.52, 0.50, 0.50, 0.52, 0.62, 0.85, 1.00, 1.00, 0.90, 0.80, 0.75,
                                     0.75, 0.72, 0.70, 0.72, 0.78, 0.88, 0.93, 0.95, 0.90, 0.80, 0.70, 0.60};

double demand_shape(double hour) {
  const double h = std::fmod(hour, 24.0);
  const int i = static_cast<int>(std::floor(h));
  const double f = h - i;
  return (1.0 - f) * kDemandShape[i] + f * kDemandShape[(i + 1) % 24];
}

double price_at(double hour) {
  if (hour < 6.0) return 0.10;
  if (hour < 10.0) return 0.28;
  if (hour < 17.0) return 0.18;
  if (hour < 21.0) return 0.32;
  return 0.15;
}

}  // namespace

Eigen::MatrixXd default_demand_profile(const std::vector<double>& peak_W, Index steps_per_day) {
  if (peak_W.empty() || steps_per_day < 1) throw std::invalid_argument("demand profile needs loads and steps");
  Eigen::MatrixXd d(steps_per_day, static_cast<Index>(peak_W.size()));
  for (Index k = 0; k < steps_per_day; ++k) {
    const double s = demand_shape(24.0 * static_cast<double>(k) / static_cast<double>(steps_per_day));
    for (std::size_t l = 0; l < peak_W.size(); ++l) d(k, static_cast<Index>(l)) = s * peak_W[l];
  }
  return d;
}

Eigen::VectorXd default_price_profile(Index steps_per_day) {
  if (steps_per_day < 1) throw std::invalid_argument("price profile needs steps");
  Eigen::VectorXd p(steps_per_day);
  for (Index k = 0; k < steps_per_day; ++k) p(k) = price_at(24.0 * static_cast<double>(k) / static_cast<double>(steps_per_day));
  return p;
}

Eigen::MatrixXd periodic_extend(const Eigen::MatrixXd& profile, Index rows) {
  if (profile.rows() == 0) throw std::invalid_argument("empty profile");
  Eigen::MatrixXd out(rows, profile.cols());
  for (Index k = 0; k < rows; ++k) out.row(k) = profile.row(k % profile.rows());
  return out;
}

std::string format_profile_csv(const Eigen::MatrixXd& profile, const std::vector<std::string>& names,
                               const std::string& fingerprint) {
  if (static_cast<Index>(names.size()) != profile.cols()) throw std::invalid_argument("profile names mismatch");
  std::string out = "# config_fingerprint=" + fingerprint + "\nk";
  for (const auto& n : names) out += "," + n;
  out += "\n";
  for (Index k = 0; k < profile.rows(); ++k) {
    out += std::to_string(k);
    for (Index c = 0; c < profile.cols(); ++c) out += "," + text::format_double(profile(k, c));
    out += "\n";
  }
  return out;
}

Eigen::MatrixXd parse_profile_csv(const std::string& content) {
  std::istringstream in(content);
  std::string line;
  int number = 0;
  bool header = false;
  std::size_t cols = 0;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++number;
    const std::string t = text::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto f = text::split(t, ',');
    if (!header) {
      if (f.size() < 2 || text::trim(f[0]) != "k") throw ParseError(number, "profile header must start with 'k'");
      cols = f.size() - 1;
      header = true;
      continue;
    }
    if (f.size() != cols + 1) throw ParseError(number, "wrong number of profile columns");
    if (text::parse_int(f[0], number) != static_cast<long long>(rows.size())) {
      throw ParseError(number, "profile rows must be numbered 0, 1, 2, ...");
    }
    std::vector<double> r(cols);
    for (std::size_t c = 0; c < cols; ++c) r[c] = text::parse_double(f[c + 1], number);
    rows.push_back(std::move(r));
  }
  if (!header || rows.empty()) throw ParseError(number, "profile has no rows");
  Eigen::MatrixXd m(static_cast<Index>(rows.size()), static_cast<Index>(cols));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    for (std::size_t c = 0; c < cols; ++c) m(static_cast<Index>(k), static_cast<Index>(c)) = rows[k][c];
  }
  return m;
}

Eigen::MatrixXd load_profile(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("profile file not found: '" + path.string() + "'");
  return parse_profile_csv(text::read_file(path));
}

PerformanceIndexes performance_indexes(const std::vector<StepRecord>& r, double tau_s, double eta) {
  PerformanceIndexes p;
  int solved = 0;
  for (const auto& s : r) {
    p.C_p += s.price * s.P0 / 1000.0 * tau_s / 3600.0 / eta;
    p.P_loss_sum += s.P0 - s.P_loads;
    if (s.iterations > 0 || s.solve_time > 0.0) {
      p.t_avg += s.solve_time;
      ++solved;
    }
  }
  if (solved) p.t_avg /= solved;
  if (!r.empty()) p.P_loss_mean = p.P_loss_sum / static_cast<double>(r.size());
  return p;
}

ClosedLoopResult closed_loop(const PlantLayout& layout, const ControllerSpec& controller,
                             const Eigen::MatrixXd& demands, const Eigen::VectorXd& prices,
                             const ClosedLoopConfig& cfg) {
  const NmpcConfig& mc = cfg.nmpc;
  mc.validate();
  const Index nc = static_cast<Index>(layout.load_count());
  const bool nmpc = controller.kind == ControllerKind::nmpc;
  const Index need = cfg.steps + (nmpc ? mc.N : 0);
  if (cfg.steps < 1) throw std::invalid_argument("closed loop needs at least one step");
  if (demands.cols() != nc) throw std::invalid_argument("demand profile does not match the load count");
  if (demands.rows() < need || prices.size() < need) {
    throw std::invalid_argument("profiles must cover the run plus the prediction horizon");
  }
  if (std::abs(layout.config().tau_s - mc.tau_s) > 1e-9) throw std::invalid_argument("plant and controller sampling differ");

  std::optional<RuleBasedController> rule;
  if (nmpc) {
    if (!controller.model) throw std::invalid_argument("NMPC controller needs a model");
    if (controller.model->input_size() != 1 + nc || controller.model->output_size() != static_cast<Index>(layout.output_size())) {
      throw std::invalid_argument("model dimensions do not match the plant");
    }
  } else {
    rule.emplace(controller.T_const, mc.T0s_min, mc.T0s_max);
  }

  const double c_w = layout.config().constants.c_w;
  Simulator plant(layout);
  const Eigen::VectorXd d0 = demands.row(0).transpose();
  const std::vector<double> d0v(d0.data(), d0.data() + d0.size());
  plant.warm_start(cfg.T_initial, d0v, cfg.warm_start_hours);

  ObserverState obs;
  if (nmpc) {
    const auto& m = *controller.model;
    obs.x = m.zero_state();
    const auto n_warm = static_cast<Index>(std::llround(cfg.warm_start_hours * 3600.0 / mc.tau_s));
    Eigen::VectorXd u(1 + nc);
    u << cfg.T_initial, d0;
    for (Index k = 0; k < n_warm; ++k) obs.x = m.step(obs.x, u).first;
  }

  ClosedLoopResult res;
  res.label = controller.label;
  res.output_names = layout.output_names();
  double u_prev = cfg.T_initial;
  std::optional<NmpcSolution> last;
  for (Index k = 0; k < cfg.steps; ++k) {
    StepRecord rec;
    rec.demands = demands.row(k).transpose();
    rec.price = prices(k);
    double u = u_prev;
    if (nmpc) {
      const auto& m = *controller.model;
      if (k > 0) obs = observer_update(m, obs, u_prev, demands.row(k - 1).transpose());
      NmpcProblem p{&m, obs.x, demands.middleRows(k, mc.N), prices.segment(k, mc.N), u_prev, k};
      try {
        std::optional<Eigen::VectorXd> warm;
        if (last) warm = shift_warm_start(*last, mc);
        NmpcSolution s = solve(p, mc, warm);
        u = s.trajectory(0);
        rec.solve_time = s.solve_time;
        rec.iterations = s.iterations;
        rec.converged = s.converged;
        rec.objective = s.objective;
        last = std::move(s);
      } catch (const std::exception&) {
        rec.failed = true;
        rec.converged = false;
        ++res.failures;
        last.reset();
        u = u_prev;
      }
    } else {
      u = rule->decide();
    }
    u = std::clamp(u, mc.T0s_min, mc.T0s_max);
    res.max_rate = std::max(res.max_rate, std::abs(u - u_prev));

    const std::vector<double> dk(rec.demands.data(), rec.demands.data() + nc);
    rec.T0s = u;
    rec.outputs = plant.step(u, dk);
    const auto& y = rec.outputs;
    rec.P0 = c_w * y(channel_q0()) * (u - y(channel_T0r()));
    rec.Ts_lower = mc.Ts_lower(k);
    for (Index l = 0; l < nc; ++l) {
      const auto ul = static_cast<std::size_t>(l);
      rec.P_loads += c_w * y(channel_qc(ul)) * (y(channel_Ts(ul)) - y(channel_Tc(ul)));
      rec.Ts_violation = std::max(rec.Ts_violation, rec.Ts_lower - y(channel_Ts(ul)));
    }
    res.records.push_back(std::move(rec));
    u_prev = u;
  }
  int violating = 0;
  for (const auto& r : res.records) violating += r.Ts_violation >= 0.5 ? 1 : 0;
  res.violation_share = static_cast<double>(violating) / static_cast<double>(res.records.size());
  res.indexes = performance_indexes(res.records, mc.tau_s, mc.eta);
  return res;
}

std::string format_closed_loop_csv(const ClosedLoopResult& r, const std::string& fingerprint) {
  std::string out = "# config_fingerprint=" + fingerprint + "\n# controller=" + r.label + "\nk,T0s";
  for (const auto& n : r.output_names) out += "," + n;
  if (!r.records.empty()) {
    for (Index l = 0; l < r.records.front().demands.size(); ++l) out += ",P" + std::to_string(l + 1) + "c";
  }
  out += ",price,P0,P_loads,P_loss,Ts_lower,Ts_violation,iterations,converged,failed\n";
  auto f = [](double v) { return text::format_double(v); };
  for (std::size_t k = 0; k < r.records.size(); ++k) {
    const auto& s = r.records[k];
    out += std::to_string(k) + "," + f(s.T0s);
    for (Index c = 0; c < s.outputs.size(); ++c) out += "," + f(s.outputs(c));
    for (Index c = 0; c < s.demands.size(); ++c) out += "," + f(s.demands(c));
    out += "," + f(s.price) + "," + f(s.P0) + "," + f(s.P_loads) + "," + f(s.P0 - s.P_loads) + "," + f(s.Ts_lower) +
           "," + f(s.Ts_violation) + "," + std::to_string(s.iterations) + "," + (s.converged ? "1" : "0") + "," +
           (s.failed ? "1" : "0") + "\n";
  }
  return out;
}

std::string closed_loop_summary_json(const std::vector<ClosedLoopResult>& runs, const std::string& fingerprint) {
  nlohmann::ordered_json j;
  j["config_fingerprint"] = fingerprint;
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : runs) {
    nlohmann::ordered_json e;
    e["controller"] = r.label;
    e["steps"] = r.records.size();
    e["C_p"] = r.indexes.C_p;
    e["t_avg_s"] = r.indexes.t_avg;
    e["P_loss_sum_W"] = r.indexes.P_loss_sum;
    e["P_loss_mean_W"] = r.indexes.P_loss_mean;
    e["max_rate_degC"] = r.max_rate;
    e["violation_share"] = r.violation_share;
    e["failures"] = r.failures;
    arr.push_back(std::move(e));
  }
  j["runs"] = std::move(arr);
  return j.dump(2) + "\n";
}

}  // namespace dhs
