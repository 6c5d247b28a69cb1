#include "dhs/nmpc.hpp"

#include <chrono>
#include <cmath>
#include <deque>

namespace dhs {

void NmpcConfig::validate() const {
  if (N < 1 || N_b < 1) throw std::invalid_argument("horizon and blocking length must be >= 1");
  if (!(tau_s > 0.0) || !(eta > 0.0)) throw std::invalid_argument("tau_s and eta must be positive");
  if (!(T0s_min <= T0s_max) || !(T0r_min < T0r_max) || !(P0_min < P0_max) ||
      !(Ts_min_day < Ts_max) || !(Ts_min_night < Ts_max)) {
    throw std::invalid_argument("NMPC lower bounds must lie below upper bounds");
  }
  if (!(dT_max > 0.0) || !(slack_weight > 0.0) || c_t < 0.0) throw std::invalid_argument("invalid NMPC weights");
  if (max_iterations < 0 || memory < 1 || !(trust_radius > 0.0) || period < 1) {
    throw std::invalid_argument("invalid NMPC solver settings");
  }
}

double NmpcConfig::Ts_lower(Index k) const {
  const Index m = ((k % period) + period) % period;
  return (m >= day_begin && m <= day_end) ? Ts_min_day : Ts_min_night;
}

NmpcConfig NmpcConfig::from_config(const Config& c) {
  NmpcConfig n;
  const std::string s = "nmpc";
  n.N = static_cast<Index>(c.get_int(s, "N", n.N));
  n.N_b = static_cast<Index>(c.get_int(s, "N_b", n.N_b));
  n.tau_s = c.get_double("simulator", "tau_s", n.tau_s);
  n.eta = c.get_double(s, "eta", n.eta);
  n.c_t = c.get_double(s, "c_t", n.c_t);
  n.T_star = c.get_double(s, "T_star", n.T_star);
  n.dT_max = c.get_double(s, "dT_max", n.dT_max);
  n.T0s_min = c.get_double(s, "T0s_min", n.T0s_min);
  n.T0s_max = c.get_double(s, "T0s_max", n.T0s_max);
  n.T0r_min = c.get_double(s, "T0r_min", n.T0r_min);
  n.T0r_max = c.get_double(s, "T0r_max", n.T0r_max);
  n.P0_min = 1e6 * c.get_double(s, "P0_min_MW", n.P0_min / 1e6);
  n.P0_max = 1e6 * c.get_double(s, "P0_max_MW", n.P0_max / 1e6);
  n.Ts_max = c.get_double(s, "Ts_max", n.Ts_max);
  n.Ts_min_day = c.get_double(s, "Ts_min_day", n.Ts_min_day);
  n.Ts_min_night = c.get_double(s, "Ts_min_night", n.Ts_min_night);
  n.day_begin = static_cast<Index>(c.get_int(s, "day_begin", n.day_begin));
  n.day_end = static_cast<Index>(c.get_int(s, "day_end", n.day_end));
  n.Ts_backoff = c.get_double(s, "Ts_backoff", n.Ts_backoff);
  n.slack_weight = c.get_double(s, "slack_weight", n.slack_weight);
  n.max_iterations = static_cast<int>(c.get_int(s, "max_iterations", n.max_iterations));
  n.tolerance = c.get_double(s, "tolerance", n.tolerance);
  n.memory = static_cast<int>(c.get_int(s, "memory", n.memory));
  n.trust_radius = c.get_double(s, "trust_radius", n.trust_radius);
  n.c_w = c.get_double("simulator", "c_w", n.c_w);
  n.validate();
  return n;
}

Eigen::VectorXd blocking_expand(const Eigen::VectorXd& blocked, Index N, Index N_b) {
  if (N < 1 || N_b < 1) throw std::invalid_argument("horizon and blocking length must be >= 1");
  if (blocked.size() != (N + N_b - 1) / N_b) throw std::invalid_argument("blocked vector length mismatch");
  Eigen::VectorXd out(N);
  for (Index k = 0; k < N; ++k) out(k) = blocked(k / N_b);
  return out;
}

namespace {

// w * max(0, v)^2 and its derivative w.r.t. v.
inline void hinge(double v, double w, double& value, double& dv) {
  if (v > 0.0) {
    value += w * v * v;
    dv = 2.0 * w * v;
  } else {
    dv = 0.0;
  }
}

}  // namespace

Objective objective_and_constraints(const NmpcProblem& p, const Eigen::VectorXd& blocked, const NmpcConfig& cfg,
                                    bool with_gradient) {
  if (!p.model) throw std::invalid_argument("NMPC problem has no model");
  const auto& m = *p.model;
  const Index N = cfg.N;
  const Index nc = m.input_size() - 1;
  if (p.demands.rows() < N || p.demands.cols() != nc) throw std::invalid_argument("demand forecast must cover N steps");
  if (p.prices.size() < N) throw std::invalid_argument("price forecast must cover N steps");
  if (m.output_size() != 2 + 3 * nc) throw std::invalid_argument("model outputs do not follow the plant layout");

  const Eigen::VectorXd T0s = blocking_expand(blocked, N, cfg.N_b);
  Eigen::MatrixXd U(N, 1 + nc);
  U.col(0) = T0s;
  U.rightCols(nc) = p.demands.topRows(N);
  std::unique_ptr<Tape> tape;
  Objective obj;
  obj.predicted = m.forward(p.x0, U, with_gradient ? &tape : nullptr);
  if (!obj.predicted.allFinite()) throw ModelDivergence("model rollout produced non-finite outputs");
  const auto& Y = obj.predicted;

  const double w = cfg.slack_weight;
  const double energy = cfg.tau_s / 3600.0 / 1000.0 / cfg.eta;  // W -> kWh per step, over eta
  Eigen::MatrixXd dY = Eigen::MatrixXd::Zero(N, m.output_size());
  Eigen::VectorXd dT_direct = Eigen::VectorXd::Zero(N);
  double d = 0.0;
  for (Index k = 0; k < N; ++k) {
    const double T0r = Y(k, 0), q0 = Y(k, 1);
    const double P0 = cfg.c_w * q0 * (T0s(k) - T0r);
    obj.energy_cost += p.prices(k) * P0 * energy;
    double dP0 = p.prices(k) * energy;

    hinge(cfg.T0r_min - T0r, w, obj.penalty, d);
    dY(k, 0) -= d;
    obj.violation(0) = std::max(obj.violation(0), cfg.T0r_min - T0r);
    hinge(T0r - cfg.T0r_max, w, obj.penalty, d);
    dY(k, 0) += d;
    obj.violation(0) = std::max(obj.violation(0), T0r - cfg.T0r_max);

    const double P_mw = P0 / 1e6;
    hinge(cfg.P0_min / 1e6 - P_mw, w, obj.penalty, d);
    dP0 -= d / 1e6;
    obj.violation(1) = std::max(obj.violation(1), cfg.P0_min / 1e6 - P_mw);
    hinge(P_mw - cfg.P0_max / 1e6, w, obj.penalty, d);
    dP0 += d / 1e6;
    obj.violation(1) = std::max(obj.violation(1), P_mw - cfg.P0_max / 1e6);

    dY(k, 1) += dP0 * cfg.c_w * (T0s(k) - T0r);
    dY(k, 0) -= dP0 * cfg.c_w * q0;
    dT_direct(k) += dP0 * cfg.c_w * q0;

    const double lb = cfg.Ts_lower(p.k_s + k) + cfg.Ts_backoff;
    for (Index l = 0; l < nc; ++l) {
      const auto ch = static_cast<Index>(channel_Ts(static_cast<std::size_t>(l)));
      const double Ts = Y(k, ch);
      hinge(lb - Ts, w, obj.penalty, d);
      dY(k, ch) -= d;
      hinge(Ts - cfg.Ts_max, w, obj.penalty, d);
      dY(k, ch) += d;
      obj.violation(2) = std::max({obj.violation(2), lb - Ts, Ts - cfg.Ts_max});
    }
  }
  for (Index l = 0; l < nc; ++l) {
    const auto ch = static_cast<Index>(channel_Ts(static_cast<std::size_t>(l)));
    const double e = Y(N - 1, ch) - cfg.T_star;
    obj.terminal += cfg.c_t * e * e;
    dY(N - 1, ch) += 2.0 * cfg.c_t * e;
  }

  Eigen::VectorXd g = Eigen::VectorXd::Zero(blocked.size());
  for (Index b = 0; b < blocked.size(); ++b) {
    const double prev = b == 0 ? p.u_prev : blocked(b - 1);
    const double delta = blocked(b) - prev;
    const double excess = std::abs(delta) - cfg.dT_max;
    hinge(excess, w, obj.penalty, d);
    obj.violation(3) = std::max(obj.violation(3), excess);
    const double gd = delta >= 0.0 ? d : -d;
    g(b) += gd;
    if (b > 0) g(b - 1) -= gd;
  }
  obj.violation = obj.violation.cwiseMax(0.0);
  obj.value = obj.energy_cost + obj.terminal + obj.penalty;

  if (with_gradient) {
    Eigen::VectorXd dtheta = Eigen::VectorXd::Zero(m.parameter_count());
    Eigen::MatrixXd dU;
    m.backward(*tape, dY, dtheta, &dU);
    const Eigen::VectorXd dT = dU.col(0) + dT_direct;
    for (Index k = 0; k < N; ++k) g(k / cfg.N_b) += dT(k);
    obj.gradient = std::move(g);
  }
  return obj;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> nmpc_bounds(const NmpcProblem& p, const NmpcConfig& cfg) {
  const Index nb = cfg.blocks();
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(nb, cfg.T0s_min);
  Eigen::VectorXd hi = Eigen::VectorXd::Constant(nb, cfg.T0s_max);
  lo(0) = std::max(lo(0), p.u_prev - cfg.dT_max);
  hi(0) = std::min(hi(0), p.u_prev + cfg.dT_max);
  if (lo(0) > hi(0)) {
    // Previous input outside the box: take the nearest feasible point.
    const double v = std::clamp(p.u_prev, cfg.T0s_min, cfg.T0s_max);
    lo(0) = hi(0) = v;
  }
  return {lo, hi};
}

NmpcSolution solve(const NmpcProblem& p, const NmpcConfig& cfg, const std::optional<Eigen::VectorXd>& warm_start) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const Index nb = cfg.blocks();
  const auto [lo, hi] = nmpc_bounds(p, cfg);
  auto project = [&](const Eigen::VectorXd& v) { return v.cwiseMax(lo).cwiseMin(hi); };

  Eigen::VectorXd b;
  if (warm_start) {
    if (warm_start->size() != nb) throw std::invalid_argument("warm start length mismatch");
    b = project(*warm_start);
  } else {
    b = project(Eigen::VectorXd::Constant(nb, p.u_prev));
  }

  NmpcSolution sol;
  Objective cur = objective_and_constraints(p, b, cfg);
  sol.evaluations = 1;
  sol.objective_trace.push_back(cur.value);
  std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> memory;

  for (int it = 0; it < cfg.max_iterations; ++it) {
    const Eigen::VectorXd& g = cur.gradient;
    const Eigen::VectorXd pg = b - project(b - g);
    if (pg.lpNorm<Eigen::Infinity>() <= cfg.tolerance) {
      sol.converged = true;
      break;
    }
    // Variables held at a bound by the gradient stay fixed this iteration.
    Eigen::VectorXd free = Eigen::VectorXd::Ones(nb);
    for (Index i = 0; i < nb; ++i) {
      if ((b(i) <= lo(i) && g(i) > 0.0) || (b(i) >= hi(i) && g(i) < 0.0)) free(i) = 0.0;
    }

    auto lbfgs_direction = [&]() {
      Eigen::VectorXd q = g.cwiseProduct(free);
      std::vector<double> alpha(memory.size()), rho(memory.size(), 0.0);
      for (std::size_t j = memory.size(); j-- > 0;) {
        const Eigen::VectorXd s = memory[j].first.cwiseProduct(free);
        const Eigen::VectorXd y = memory[j].second.cwiseProduct(free);
        const double sy = s.dot(y);
        if (sy <= 1e-12) continue;
        rho[j] = 1.0 / sy;
        alpha[j] = rho[j] * s.dot(q);
        q -= alpha[j] * y;
      }
      double gamma = 1.0;
      if (!memory.empty()) {
        const Eigen::VectorXd s = memory.back().first.cwiseProduct(free);
        const Eigen::VectorXd y = memory.back().second.cwiseProduct(free);
        if (s.dot(y) > 1e-12) gamma = s.dot(y) / y.squaredNorm();
      }
      Eigen::VectorXd r = gamma * q;
      for (std::size_t j = 0; j < memory.size(); ++j) {
        if (rho[j] == 0.0) continue;
        const Eigen::VectorXd s = memory[j].first.cwiseProduct(free);
        const Eigen::VectorXd y = memory[j].second.cwiseProduct(free);
        const double beta = rho[j] * y.dot(r);
        r += s * (alpha[j] - beta);
      }
      return Eigen::VectorXd(-r.cwiseProduct(free));
    };

    bool accepted = false;
    Eigen::VectorXd b_new;
    Objective next;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      Eigen::VectorXd dir = attempt == 0 && !memory.empty() ? lbfgs_direction() : Eigen::VectorXd(-g.cwiseProduct(free));
      if (dir.dot(g) >= 0.0) dir = -g.cwiseProduct(free);
      const double longest = dir.lpNorm<Eigen::Infinity>();
      if (!(longest > 0.0)) break;
      if (longest > cfg.trust_radius) dir *= cfg.trust_radius / longest;
      double step = 1.0;
      for (int ls = 0; ls < 30; ++ls, step *= 0.5) {
        b_new = project(b + step * dir);
        const Eigen::VectorXd db = b_new - b;
        if (db.lpNorm<Eigen::Infinity>() == 0.0) break;
        try {
          next = objective_and_constraints(p, b_new, cfg);
        } catch (const ModelDivergence&) {
          ++sol.evaluations;
          continue;
        }
        ++sol.evaluations;
        if (next.value <= cur.value + 1e-4 * g.dot(db)) {
          accepted = true;
          break;
        }
      }
      if (!accepted) memory.clear();
    }
    if (!accepted) break;

    memory.emplace_back(b_new - b, next.gradient - g);
    if (static_cast<int>(memory.size()) > cfg.memory) memory.pop_front();
    const double decrease = cur.value - next.value;
    b = b_new;
    cur = std::move(next);
    sol.iterations = it + 1;
    sol.objective_trace.push_back(cur.value);
    if (decrease <= 1e-12 * std::max(1.0, std::abs(cur.value))) {
      sol.converged = true;
      break;
    }
  }
  if (!sol.converged && sol.iterations >= cfg.max_iterations) sol.max_iterations_reached = true;

  sol.blocked = b;
  sol.trajectory = blocking_expand(b, cfg.N, cfg.N_b);
  sol.slack = cur.violation;
  sol.predicted = cur.predicted;
  sol.objective = cur.value;
  sol.solve_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return sol;
}

Eigen::VectorXd shift_warm_start(const NmpcSolution& s, const NmpcConfig& cfg) {
  const Index nb = cfg.blocks();
  Eigen::VectorXd out(nb);
  for (Index i = 0; i < nb; ++i) {
    const Index k = std::min<Index>(i * cfg.N_b + 1, cfg.N - 1);
    out(i) = s.trajectory(k);
  }
  return out;
}

ObserverState observer_update(const SequenceModel& m, const ObserverState& o, double applied_supply,
                              const Eigen::VectorXd& demands) {
  if (o.x.size() != m.state_size()) throw std::invalid_argument("observer state dimension mismatch");
  Eigen::VectorXd u(1 + demands.size());
  u << applied_supply, demands;
  ObserverState next;
  next.x = m.step(o.x, u).first;
  next.last_input = std::move(u);
  return next;
}

RuleBasedController::RuleBasedController(double T_const, double lo, double hi) : T_(T_const) {
  if (!(T_const >= lo && T_const <= hi)) {
    throw std::invalid_argument("rule-based supply temperature outside the station bounds");
  }
}

}  // namespace dhs
