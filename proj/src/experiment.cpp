#include "dhs/experiment.hpp"

#include <cmath>
#include <json.hpp>

#include "dhs/pi_rnn.hpp"
#include "dhs/serialization.hpp"

namespace dhs {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) { return text::format_double(v); }

std::pair<double, double> range(const Config& c, const std::string& s, const std::string& k,
                                std::pair<double, double> fallback) {
  auto v = c.get_doubles(s, k, {fallback.first, fallback.second});
  if (v.size() != 2 || !(v[0] < v[1])) throw std::invalid_argument("[" + s + "] " + k + " must be 'lo, hi' with lo < hi");
  return {v[0], v[1]};
}

fs::path dataset_path(const Experiment& e) { return e.out_dir() / "dataset.csv"; }

}  // namespace

Experiment::Experiment(Config config, fs::path base_dir, fs::path out_dir)
    : config_(std::move(config)), base_(std::move(base_dir)), out_(std::move(out_dir)) {}

Experiment Experiment::load(const fs::path& config_path, const fs::path& out_dir, std::optional<std::uint64_t> seed) {
  Config c = Config::load(config_path);
  if (seed) c.set("training", "seeds", std::to_string(*seed));
  return Experiment(std::move(c), config_path.parent_path(), out_dir);
}

fs::path Experiment::resolve(const std::string& path) const {
  fs::path p(path);
  return p.is_absolute() ? p : base_ / p;
}

NetworkGraph Experiment::topology() const {
  const std::string t = config_.get_string("network", "topology", "aroma");
  if (t == "aroma") return aroma_topology();
  return load_topology(resolve(t));
}

SimConfig Experiment::sim_config() const {
  SimConfig s;
  s.tau_s = config_.get_double("simulator", "tau_s", s.tau_s);
  s.cell_length = config_.get_double("simulator", "cell_length", s.cell_length);
  s.load_filter_tau = config_.get_double("simulator", "load_filter_tau", s.load_filter_tau);
  s.constants.c_w = config_.get_double("simulator", "c_w", s.constants.c_w);
  s.constants.rho = config_.get_double("simulator", "rho", s.constants.rho);
  s.constants.T_ext = config_.get_double("simulator", "T_ext", s.constants.T_ext);
  return s;
}

PlantLayout Experiment::plant() const { return PlantLayout(topology(), sim_config()); }

std::vector<std::uint64_t> Experiment::seeds() const {
  std::vector<std::uint64_t> out;
  for (double s : config_.get_doubles("training", "seeds", {1, 2, 3})) {
    if (s < 0 || s != std::floor(s)) throw std::invalid_argument("seeds must be non-negative integers");
    out.push_back(static_cast<std::uint64_t>(s));
  }
  if (out.empty()) throw std::invalid_argument("seed list is empty");
  return out;
}

TrainConfig Experiment::training(std::uint64_t seed) const {
  TrainConfig t;
  const std::string s = "training";
  t.epochs = static_cast<int>(config_.get_int(s, "epochs", t.epochs));
  t.learning_rate = config_.get_double(s, "learning_rate", t.learning_rate);
  t.subsequence = static_cast<Index>(config_.get_int(s, "subsequence", t.subsequence));
  t.washout = static_cast<Index>(config_.get_int(s, "washout", t.washout));
  t.batch = static_cast<Index>(config_.get_int(s, "batch", t.batch));
  t.eval_washout = static_cast<Index>(config_.get_int("evaluation", "washout", t.eval_washout));
  t.adam.beta1 = config_.get_double(s, "beta1", t.adam.beta1);
  t.adam.beta2 = config_.get_double(s, "beta2", t.adam.beta2);
  t.adam.eps = config_.get_double(s, "epsilon", t.adam.eps);
  t.seed = seed;
  t.validate();
  return t;
}

NmpcConfig Experiment::nmpc() const { return NmpcConfig::from_config(config_); }

ClosedLoopConfig Experiment::closed_loop_config() const {
  ClosedLoopConfig c;
  c.steps = static_cast<Index>(config_.get_int("control", "steps", c.steps));
  c.warm_start_hours = config_.get_double("control", "warm_start_hours", c.warm_start_hours);
  c.T_initial = config_.get_double("control", "T_initial", c.T_initial);
  c.nmpc = nmpc();
  return c;
}

std::vector<ExcitationChannel> Experiment::excitation(std::size_t loads) const {
  const std::string s = "excitation";
  const int hmin = static_cast<int>(config_.get_int(s, "hold_min", 12));
  const int hmax = static_cast<int>(config_.get_int(s, "hold_max", 72));
  const auto [t_lo, t_hi] = range(config_, s, "T0s_range", {65.0, 85.0});
  const auto [p_lo, p_hi] = range(config_, s, "demand_range_kW", {100.0, 800.0});
  std::vector<ExcitationChannel> ch{{t_lo, t_hi, hmin, hmax}};
  for (std::size_t i = 0; i < loads; ++i) ch.push_back({p_lo * 1e3, p_hi * 1e3, hmin, hmax});
  return ch;
}

Eigen::MatrixXd Experiment::demand_profile(std::size_t loads) const {
  if (config_.has("control", "demand_profile")) {
    Eigen::MatrixXd d = load_profile(resolve(config_.get_string("control", "demand_profile", "")));
    if (d.cols() != static_cast<Index>(loads)) throw std::invalid_argument("demand profile needs one column per load");
    return d;
  }
  auto peaks = config_.get_doubles("control", "demand_peak_kW", {500, 400, 450, 350, 300});
  if (peaks.size() != loads) throw std::invalid_argument("demand_peak_kW needs one value per load");
  for (double& p : peaks) p *= 1e3;
  return default_demand_profile(peaks, 288);
}

Eigen::VectorXd Experiment::price_profile() const {
  if (config_.has("control", "price_profile")) {
    Eigen::MatrixXd p = load_profile(resolve(config_.get_string("control", "price_profile", "")));
    if (p.cols() != 1) throw std::invalid_argument("price profile needs exactly one value column");
    if ((p.array() <= 0.0).any()) throw std::invalid_argument("prices must be positive");
    return p.col(0);
  }
  return default_price_profile(288);
}

std::vector<Index> gru_layer_sizes(Index states, Index layers) {
  if (layers < 1 || states < layers) throw std::invalid_argument("need at least one state per GRU layer");
  std::vector<Index> out(static_cast<std::size_t>(layers), states / layers);
  for (Index i = 0; i < states % layers; ++i) ++out[static_cast<std::size_t>(layers - 1 - i)];
  return out;
}

std::unique_ptr<SequenceModel> build_model(const Experiment& e, const std::string& arch, Index states,
                                           std::uint64_t seed) {
  const NetworkGraph g = e.topology();
  const auto nc = static_cast<Index>(g.load_count());
  if (arch == "gru") {
    const auto layers = static_cast<Index>(e.config().get_int("training", "gru_layers", 6));
    return std::make_unique<RnnModel>(build_monolithic_gru(gru_layer_sizes(states, layers), 1 + nc, 2 + 3 * nc, seed));
  }
  if (arch == "pi-gru") {
    const ReducedGraph rg = reduce_graph(g);
    const auto alloc = allocate_neurons(rg, load_distances(g), states);
    const bool cum = e.config().get_bool("training", "cumulative_demand", true);
    return std::make_unique<PiRnnModel>(build_pi_rnn(rg, alloc, cum, seed));
  }
  throw std::invalid_argument("unknown architecture '" + arch + "' (expected gru or pi-gru)");
}

std::string model_tag(const std::string& arch, Index states, const std::string& variant) {
  return arch + "-" + std::to_string(states) + (variant == "full" ? "" : "-" + variant);
}

void cmd_simulate(const Experiment& e) {
  const PlantLayout layout = e.plant();
  const auto nc = layout.load_count();
  const double hours = e.config().get_double("simulate", "hours", 24.0);
  const double T0s = e.config().get_double("simulate", "T0s", 75.0);
  const auto steps = static_cast<Index>(std::llround(hours * 3600.0 / layout.config().tau_s));
  if (steps < 1) throw std::invalid_argument("simulation shorter than one step");
  const Eigen::MatrixXd demands = periodic_extend(e.demand_profile(nc), steps);

  Simulator sim(layout);
  const Eigen::VectorXd d0 = demands.row(0).transpose();
  sim.warm_start(T0s, std::vector<double>(d0.data(), d0.data() + d0.size()),
                 e.config().get_double("simulate", "warm_start_hours", 24.0));
  std::string out = "# config_fingerprint=" + e.fingerprint() + "\nk,T0s";
  for (const auto& n : layout.disturbance_names()) out += "," + n;
  for (const auto& n : layout.output_names()) out += "," + n;
  out += "\n";
  for (Index k = 0; k < steps; ++k) {
    const Eigen::VectorXd d = demands.row(k).transpose();
    const Eigen::VectorXd y = sim.step(T0s, std::vector<double>(d.data(), d.data() + d.size()));
    out += std::to_string(k) + "," + fmt(T0s);
    for (Index j = 0; j < d.size(); ++j) out += "," + fmt(d(j));
    for (Index j = 0; j < y.size(); ++j) out += "," + fmt(y(j));
    out += "\n";
  }
  fs::create_directories(e.out_dir());
  text::write_file(e.out_dir() / "simulate.csv", out);
}

Dataset cmd_gen_data(const Experiment& e) {
  const PlantLayout layout = e.plant();
  const auto n = static_cast<std::size_t>(e.config().get_int("excitation", "samples", 15690));
  const auto seed = static_cast<std::uint64_t>(e.config().get_int("excitation", "seed", 7));
  const Eigen::MatrixXd X = generate_mprbs(e.excitation(layout.load_count()), n, seed);
  DatasetOptions o;
  const auto split = e.config().get_doubles("excitation", "split", {0.70, 0.15});
  if (split.size() != 2) throw std::invalid_argument("[excitation] split must be 'train, val'");
  o.split = {split[0], split[1]};
  o.warm_start_hours = e.config().get_double("excitation", "warm_start_hours", 24.0);
  o.nominal_supply = e.config().get_double("excitation", "nominal_T0s", 75.0);
  o.fingerprint = e.data_fingerprint();
  Dataset d = run_dataset(layout, X.leftCols(1), X.rightCols(X.cols() - 1), o);
  fs::create_directories(e.out_dir());
  save_dataset(d, dataset_path(e));
  return d;
}

TrainOutcome cmd_train(const Experiment& e, const std::string& arch, Index states, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw std::invalid_argument("train fraction must be in (0, 1]");
  if (!fs::exists(dataset_path(e))) {
    throw std::runtime_error("dataset not found at '" + dataset_path(e).string() + "'; run gen-data first");
  }
  Dataset d = load_dataset(dataset_path(e));
  if (d.fingerprint != e.data_fingerprint()) {
    throw std::runtime_error("dataset was produced by a different configuration; rerun gen-data");
  }
  TrainOutcome out;
  out.arch = arch;
  out.states = states;
  out.variant = train_fraction < 1.0 ? "half" : "full";
  // The reduced study trains on the leading rows of the same record (re-split)
  // and is scored on the full record's test rows, which it never sees.
  Dataset fit_set = d;
  if (train_fraction < 1.0) {
    const auto split = e.config().get_doubles("excitation", "split", {0.70, 0.15});
    const auto n = static_cast<std::size_t>(std::llround(static_cast<double>(d.rows()) * train_fraction));
    fit_set = d.head(n, SplitFractions{split.at(0), split.at(1)});
    if (fit_set.n_train + fit_set.n_val > d.n_train + d.n_val) throw std::invalid_argument("train fraction too large");
    if (train_fraction != 0.5) out.variant = "frac" + fmt(train_fraction);
  }
  const fs::path models = e.out_dir() / "models";
  const fs::path train_dir = e.out_dir() / "train";
  fs::create_directories(models);
  fs::create_directories(train_dir);
  const std::string tag = model_tag(arch, states, out.variant);
  const auto washout = static_cast<Index>(e.config().get_int("evaluation", "washout", 50));

  std::vector<double> fits, mins, maxs;
  for (auto seed : e.seeds()) {
    auto m = build_model(e, arch, states, seed);
    SeedOutcome s;
    s.seed = seed;
    s.training = train_tbptt(*m, fit_set, e.training(seed));
    s.test = evaluate(*m, d, d.test(), washout, "test");
    const std::string stem = tag + "-seed" + std::to_string(seed);
    s.model_path = models / (stem + ".model");
    save_model(*m, s.model_path, e.fingerprint());
    text::write_file(train_dir / (stem + "-history.csv"), format_history_csv(s.training, e.fingerprint()));
    text::write_file(train_dir / (stem + "-test.json"), report_json(s.test, e.fingerprint()));
    fits.push_back(s.test.fit);
    mins.push_back(s.test.r2_min);
    maxs.push_back(s.test.r2_max);
    out.seeds.push_back(std::move(s));
  }
  out.fit = summarize(fits);
  out.r2_min = summarize(mins);
  out.r2_max = summarize(maxs);

  std::string csv = "# config_fingerprint=" + e.fingerprint() + "\n# model=" + tag +
                    "\nseed,best_epoch,best_val_fit,test_fit,test_r2_min,test_r2_max,diverged\n";
  for (const auto& s : out.seeds) {
    csv += std::to_string(s.seed) + "," + std::to_string(s.training.best_epoch) + "," + fmt(s.training.best_val_fit) +
           "," + fmt(s.test.fit) + "," + fmt(s.test.r2_min) + "," + fmt(s.test.r2_max) + "," +
           (s.training.diverged ? "1" : "0") + "\n";
  }
  text::write_file(train_dir / (tag + "-seeds.csv"), csv);
  return out;
}

std::vector<EvalReport> cmd_eval(const Experiment& e, const fs::path& model, const fs::path& dataset) {
  const NetworkGraph g = e.topology();
  auto m = load_model(model, &g);
  const Dataset d = load_dataset(dataset);
  const auto washout = static_cast<Index>(e.config().get_int("evaluation", "washout", 50));
  std::vector<EvalReport> reports{evaluate(*m, d, d.train(), washout, "train"), evaluate(*m, d, d.val(), washout, "val"),
                                  evaluate(*m, d, d.test(), washout, "test")};
  const fs::path dir = e.out_dir() / "eval";
  fs::create_directories(dir);
  nlohmann::ordered_json j;
  j["config_fingerprint"] = e.fingerprint();
  j["model"] = model.filename().string();
  j["dataset_fingerprint"] = d.fingerprint;
  for (const auto& r : reports) j["reports"].push_back(nlohmann::ordered_json::parse(report_json(r, e.fingerprint())));
  text::write_file(dir / (model.stem().string() + "-eval.json"), j.dump(2) + "\n");
  return reports;
}

ClosedLoopResult cmd_control(const Experiment& e, const std::optional<fs::path>& model, const std::string& label) {
  const PlantLayout layout = e.plant();
  const ClosedLoopConfig cfg = e.closed_loop_config();
  const Index rows = cfg.steps + cfg.nmpc.N;
  const Eigen::MatrixXd demands = periodic_extend(e.demand_profile(layout.load_count()), rows);
  const Eigen::VectorXd prices = periodic_extend(e.price_profile(), rows).col(0);

  ControllerSpec spec;
  spec.label = label;
  std::unique_ptr<SequenceModel> m;
  if (model) {
    m = load_model(*model, &layout.graph());
    spec.kind = ControllerKind::nmpc;
    spec.model = m.get();
  } else {
    spec.kind = ControllerKind::rule_based;
    spec.T_const = e.config().get_double("control", "rule_T0s", 75.0);
  }
  ClosedLoopResult r = closed_loop(layout, spec, demands, prices, cfg);
  const fs::path dir = e.out_dir() / "control";
  fs::create_directories(dir);
  text::write_file(dir / ("closed-loop-" + label + ".csv"), format_closed_loop_csv(r, e.fingerprint()));
  text::write_file(dir / ("summary-" + label + ".json"), closed_loop_summary_json({r}, e.fingerprint()));
  return r;
}

std::string format_train_table(const std::vector<TrainOutcome>& runs, const std::string& fingerprint) {
  std::string out = "# config_fingerprint=" + fingerprint +
                    "\narch,states,data,seeds,fit_mean,fit_std,r2_min_mean,r2_min_std,r2_max_mean,r2_max_std\n";
  for (const auto& r : runs) {
    out += r.arch + "," + std::to_string(r.states) + "," + r.variant + "," + std::to_string(r.seeds.size()) + "," +
           fmt(r.fit.mean) + "," + fmt(r.fit.std) + "," + fmt(r.r2_min.mean) + "," + fmt(r.r2_min.std) + "," +
           fmt(r.r2_max.mean) + "," + fmt(r.r2_max.std) + "\n";
  }
  return out;
}

ReproduceOutcome cmd_reproduce(const Experiment& e) {
  ReproduceOutcome out;
  cmd_gen_data(e);
  cmd_simulate(e);
  const PlantLayout layout = e.plant();
  const Index rows = 288;
  text::write_file(e.out_dir() / "profile-demand.csv",
                   format_profile_csv(periodic_extend(e.demand_profile(layout.load_count()), rows),
                                      layout.disturbance_names(), e.fingerprint()));
  text::write_file(e.out_dir() / "profile-price.csv",
                   format_profile_csv(periodic_extend(e.price_profile(), rows), {"price"}, e.fingerprint()));

  const auto id_states = static_cast<Index>(e.config().get_int("reproduce", "identification_states", 54));
  const auto pi_ctrl = static_cast<Index>(e.config().get_int("reproduce", "control_pi_states", 30));
  const auto gru_ctrl = static_cast<Index>(e.config().get_int("reproduce", "control_gru_states", 54));
  for (const std::string arch : {"gru", "pi-gru"}) {
    out.identification.push_back(cmd_train(e, arch, id_states, 1.0));
    out.identification.push_back(cmd_train(e, arch, id_states, 0.5));
  }
  const TrainOutcome* pi_model = nullptr;
  const TrainOutcome* gru_model = nullptr;
  if (pi_ctrl != id_states) out.identification.push_back(cmd_train(e, "pi-gru", pi_ctrl, 1.0));
  if (gru_ctrl != id_states) out.identification.push_back(cmd_train(e, "gru", gru_ctrl, 1.0));
  for (const auto& r : out.identification) {
    if (r.variant != "full") continue;
    if (r.arch == "pi-gru" && r.states == pi_ctrl) pi_model = &r;
    if (r.arch == "gru" && r.states == gru_ctrl) gru_model = &r;
  }
  text::write_file(e.out_dir() / "table-identification.csv", format_train_table(out.identification, e.fingerprint()));
  for (const auto& r : out.identification) {
    for (const auto& s : r.seeds) cmd_eval(e, s.model_path, dataset_path(e));
  }

  // Closed loop with the first seed's models.
  out.control.push_back(cmd_control(e, pi_model->seeds.front().model_path, "nmpc-" + model_tag("pi-gru", pi_ctrl, "full")));
  out.control.push_back(cmd_control(e, gru_model->seeds.front().model_path, "nmpc-" + model_tag("gru", gru_ctrl, "full")));
  out.control.push_back(cmd_control(e, std::nullopt, "rule-based"));
  std::string table = "# config_fingerprint=" + e.fingerprint() +
                      "\ncontroller,C_p,P_loss_sum_W,P_loss_mean_W,max_rate_degC,violation_share,failures\n";
  for (const auto& r : out.control) {
    table += r.label + "," + fmt(r.indexes.C_p) + "," + fmt(r.indexes.P_loss_sum) + "," + fmt(r.indexes.P_loss_mean) +
             "," + fmt(r.max_rate) + "," + fmt(r.violation_share) + "," + std::to_string(r.failures) + "\n";
  }
  text::write_file(e.out_dir() / "table-control.csv", table);
  // Solve times vary between runs, so they live only in the JSON summary.
  text::write_file(e.out_dir() / "control-summary.json", closed_loop_summary_json(out.control, e.fingerprint()));
  return out;
}

}  // namespace dhs
