#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lappyr/network.hpp"

namespace lappyr {

// Versioned binary container: a JSON config blob plus named float32 tensors
// with shape headers, all little-endian. Shared by model checkpoints and
// feature-extractor weight files.
struct TensorContainer {
  nlohmann::json config;
  std::vector<NamedParam<float>> tensors;
};

void write_tensor_container(const std::string& path, const TensorContainer& c);
TensorContainer read_tensor_container(const std::string& path);

nlohmann::json net_config_to_json(const NetConfig& cfg);
NetConfig net_config_from_json(const nlohmann::json& j);

// A checkpoint holds the albedo and shading networks together.
void save_checkpoint(const std::string& path, const LapPyrNet<float>& albedo_net,
                     const LapPyrNet<float>& shading_net);
std::pair<LapPyrNet<float>, LapPyrNet<float>> load_checkpoint(const std::string& path);

}  // namespace lappyr
