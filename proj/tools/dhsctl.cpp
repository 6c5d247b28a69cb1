#include <CLI11.hpp>
#include <cstdio>
#include <iostream>

#include "dhs/experiment.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"District heating network simulation, identification and control"};
  app.require_subcommand(1);

  std::string config_path = "configs/default.ini";
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::string arch = "pi-gru";
  int states = 54;
  std::string model, dataset, controller = "nmpc";
  double fraction = 1.0;

  auto common = [&](CLI::App* c) {
    c->add_option("--config", config_path, "Experiment config (INI)")->check(CLI::ExistingFile);
    c->add_option("--out", out_dir, "Output directory");
    c->add_option("--seed", seed, "Single seed; overrides the config seed list");
  };
  auto* sim = app.add_subcommand("simulate", "Open-loop plant run under the configured day profile");
  auto* gen = app.add_subcommand("gen-data", "Generate the identification dataset");
  auto* train = app.add_subcommand("train", "Train models for every seed");
  auto* eval = app.add_subcommand("eval", "Evaluate a model file on a dataset");
  auto* control = app.add_subcommand("control", "Closed-loop day with NMPC or the rule-based controller");
  auto* repro = app.add_subcommand("reproduce", "Full pipeline: data, training, evaluation, control");
  for (auto* c : {sim, gen, train, eval, control, repro}) common(c);
  for (auto* c : {train, control}) {
    c->add_option("--arch", arch, "gru or pi-gru")->check(CLI::IsMember({"gru", "pi-gru"}));
    c->add_option("--states", states, "Total state count")->check(CLI::PositiveNumber);
  }
  train->add_option("--fraction", fraction, "Leading share of the record to train on (scored on the full test rows)")->check(CLI::Range(0.0, 1.0));
  eval->add_option("--model", model, "Model file")->required()->check(CLI::ExistingFile);
  eval->add_option("--dataset", dataset, "Dataset CSV (default: <out>/dataset.csv)");
  control->add_option("--controller", controller, "nmpc or rule-based")->check(CLI::IsMember({"nmpc", "rule-based"}));
  control->add_option("--model", model,
                      "Model file (default: <out>/models/<arch>-<states>-seed<seed>.model); names the outputs");

  CLI11_PARSE(app, argc, argv);

  try {
    const dhs::Experiment e = dhs::Experiment::load(config_path, out_dir, seed);
    if (sim->parsed()) {
      dhs::cmd_simulate(e);
      std::cout << "wrote " << (e.out_dir() / "simulate.csv").string() << "\n";
    } else if (gen->parsed()) {
      const auto d = dhs::cmd_gen_data(e);
      std::cout << "wrote " << d.rows() << " rows to " << (e.out_dir() / "dataset.csv").string() << "\n";
    } else if (train->parsed()) {
      const auto r = dhs::cmd_train(e, arch, states, fraction);
      for (const auto& s : r.seeds) {
        std::cout << "seed " << s.seed << ": best epoch " << s.training.best_epoch << ", test FIT " << s.test.fit
                  << " %\n";
      }
      std::cout << "mean test FIT " << r.fit.mean << " +- " << r.fit.std << " %\n";
    } else if (eval->parsed()) {
      const fs::path ds = dataset.empty() ? e.out_dir() / "dataset.csv" : fs::path(dataset);
      for (const auto& r : dhs::cmd_eval(e, model, ds)) {
        std::cout << r.split << ": FIT " << r.fit << " %, R2 min " << r.r2_min << " %, R2 max " << r.r2_max << " %\n";
      }
    } else if (control->parsed()) {
      std::optional<fs::path> m;
      std::string label = "rule-based";
      if (controller == "nmpc") {
        const std::string tag = dhs::model_tag(arch, states, "full");
        m = model.empty() ? e.out_dir() / "models" / (tag + "-seed" + std::to_string(e.seeds().front()) + ".model")
                          : fs::path(model);
        label = "nmpc-" + (model.empty() ? tag : m->stem().string());
      }
      const auto r = dhs::cmd_control(e, m, label);
      std::cout << r.label << ": C_p " << r.indexes.C_p << ", P_loss mean " << r.indexes.P_loss_mean / 1e3
                << " kW, t_avg " << r.indexes.t_avg << " s, failed solves " << r.failures << "\n";
    } else if (repro->parsed()) {
      const auto r = dhs::cmd_reproduce(e);
      for (const auto& t : r.identification) {
        std::cout << t.arch << "-" << t.states << " (" << t.variant << "): FIT " << t.fit.mean << " +- " << t.fit.std
                  << " %\n";
      }
      for (const auto& c : r.control) {
        std::cout << c.label << ": C_p " << c.indexes.C_p << ", P_loss mean " << c.indexes.P_loss_mean / 1e3
                  << " kW, t_avg " << c.indexes.t_avg << " s\n";
      }
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
