#pragma once

// A short simulated record of the bundled network and a briefly trained PI-GRU on it.

#include "dhs/dataset.hpp"
#include "dhs/pi_rnn.hpp"
#include "dhs/training.hpp"

namespace fixture {

inline dhs::Dataset plant_dataset(std::size_t rows, std::uint64_t seed = 7) {
  const dhs::PlantLayout layout(dhs::aroma_topology(), dhs::SimConfig{});
  std::vector<dhs::ExcitationChannel> ch{{65, 85, 12, 72}};
  for (int i = 0; i < 5; ++i) ch.push_back({100e3, 800e3, 12, 72});
  const Eigen::MatrixXd X = dhs::generate_mprbs(ch, rows, seed);
  return dhs::run_dataset(layout, X.leftCols(1), X.rightCols(5), {});
}

inline dhs::PiRnnModel trained_pi_gru(Eigen::Index states, int epochs, std::uint64_t seed = 1) {
  const dhs::NetworkGraph g = dhs::aroma_topology();
  const dhs::ReducedGraph rg = dhs::reduce_graph(g);
  dhs::PiRnnModel m = dhs::build_pi_rnn(rg, dhs::allocate_neurons(rg, dhs::load_distances(g), states), true, seed);
  dhs::TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.seed = seed;
  dhs::train_tbptt(m, plant_dataset(1500), cfg);
  return m;
}

}  // namespace fixture
