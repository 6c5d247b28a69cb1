#pragma once

// Versioned text format for trained models ("dhs-model v1").
//
//   dhs-model v1
//   kind gru | pi-gru
//   ... metadata, normalization constants, parameters ...
//   end
//
// Values are written in shortest round-trip form, so load -> save -> load is
// the identity. PI-RNN files also carry the wiring table and the reduced
// graph with its fingerprint.

#include <filesystem>
#include <memory>
#include <string>

#include "dhs/pi_rnn.hpp"
#include "dhs/rnn_model.hpp"
#include "dhs/topology.hpp"

namespace dhs {

std::string format_model(const SequenceModel& m, const std::string& fingerprint = "");

// When `topology` is given, a PI-RNN file must match its reduced graph.
std::unique_ptr<SequenceModel> parse_model(const std::string& content, const NetworkGraph* topology = nullptr);

void save_model(const SequenceModel& m, const std::filesystem::path& path, const std::string& fingerprint = "");
std::unique_ptr<SequenceModel> load_model(const std::filesystem::path& path, const NetworkGraph* topology = nullptr);

}  // namespace dhs
