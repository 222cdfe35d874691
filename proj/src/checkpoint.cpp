#include "lappyr/checkpoint.hpp"

#include <cstdint>
#include <fstream>

#include "lappyr/errors.hpp"

namespace lappyr {

namespace {

constexpr char kMagic[4] = {'L', 'P', 'Y', 'R'};
constexpr std::uint32_t kVersion = 1;

void require_little_endian() {
  const std::uint16_t probe = 1;
  if (*reinterpret_cast<const unsigned char*>(&probe) != 1)
    throw DataError("tensor container io requires a little-endian host");
}

template <typename T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError(path + ": truncated tensor container");
  return v;
}

}  // namespace

void write_tensor_container(const std::string& path, const TensorContainer& c) {
  require_little_endian();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write(kMagic, 4);
  write_pod<std::uint32_t>(out, kVersion);
  const std::string cfg = c.config.dump();
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    write_pod<std::uint8_t>(out, 0);  // dtype: float32
    const auto& shape = t.tensor.shape();
    write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(shape.size()));
    for (int d : shape) write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t.tensor.data().data()),
              static_cast<std::streamsize>(t.tensor.numel() * sizeof(float)));
  }
  if (!out) throw DataError("short write to " + path);
}

TensorContainer read_tensor_container(const std::string& path) {
  require_little_endian();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != std::string(kMagic, 4))
    throw DataError(path + ": not a lappyr tensor container");
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != kVersion)
    throw DataError(path + ": unsupported container version " + std::to_string(version));
  const auto cfg_len = read_pod<std::uint32_t>(in, path);
  std::string cfg(cfg_len, '\0');
  in.read(cfg.data(), cfg_len);
  if (!in) throw DataError(path + ": truncated tensor container");
  TensorContainer c;
  try {
    c.config = nlohmann::json::parse(cfg);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": corrupt config block: " + e.what());
  }
  const auto count = read_pod<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint16_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto dtype = read_pod<std::uint8_t>(in, path);
    if (dtype != 0) throw DataError(path + ": unsupported tensor dtype");
    const auto ndim = read_pod<std::uint8_t>(in, path);
    std::vector<int> shape;
    std::int64_t numel = 1;
    for (int d = 0; d < ndim; ++d) {
      const auto extent = read_pod<std::uint32_t>(in, path);
      if (extent == 0 || extent > (1u << 28)) throw DataError(path + ": corrupt tensor shape");
      shape.push_back(static_cast<int>(extent));
      numel *= extent;
    }
    std::vector<float> values(static_cast<std::size_t>(numel));
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!in) throw DataError(path + ": truncated tensor payload for " + name);
    c.tensors.push_back({std::move(name), Tensor<float>::from_data(std::move(shape),
                                                                   std::move(values))});
  }
  return c;
}

nlohmann::json net_config_to_json(const NetConfig& cfg) {
  return {{"levels", cfg.levels},
          {"hidden", cfg.hidden},
          {"substructures", cfg.substructures},
          {"variant", variant_name(cfg.variant)}};
}

NetConfig net_config_from_json(const nlohmann::json& j) {
  try {
    NetConfig cfg;
    cfg.levels = j.at("levels").get<int>();
    cfg.hidden = j.at("hidden").get<int>();
    cfg.substructures = j.at("substructures").get<int>();
    cfg.variant = variant_from_name(j.at("variant").get<std::string>());
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid net config: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const LapPyrNet<float>& albedo_net,
                     const LapPyrNet<float>& shading_net) {
  TensorContainer c;
  c.config = {{"type", "intrinsic_pair"},
              {"net", net_config_to_json(albedo_net.config())},
              {"seed_albedo", albedo_net.seed()},
              {"seed_shading", shading_net.seed()}};
  for (const auto& p : albedo_net.parameters()) c.tensors.push_back({"albedo." + p.name, p.tensor});
  for (const auto& p : shading_net.parameters())
    c.tensors.push_back({"shading." + p.name, p.tensor});
  write_tensor_container(path, c);
}

std::pair<LapPyrNet<float>, LapPyrNet<float>> load_checkpoint(const std::string& path) {
  TensorContainer c = read_tensor_container(path);
  if (!c.config.contains("type") || c.config["type"] != "intrinsic_pair")
    throw DataError(path + ": not an intrinsic-pair checkpoint");
  NetConfig cfg;
  std::uint64_t seed_a = 0, seed_s = 0;
  try {
    cfg = net_config_from_json(c.config.at("net"));
    seed_a = c.config.at("seed_albedo").get<std::uint64_t>();
    seed_s = c.config.at("seed_shading").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": corrupt checkpoint config: " + e.what());
  }
  auto albedo_net = LapPyrNet<float>::build(cfg, seed_a);
  auto shading_net = LapPyrNet<float>::build(cfg, seed_s);

  auto restore = [&](const LapPyrNet<float>& net, const std::string& prefix) {
    for (auto& p : net.parameters()) {
      const std::string full = prefix + "." + p.name;
      const NamedParam<float>* found = nullptr;
      for (const auto& t : c.tensors)
        if (t.name == full) {
          found = &t;
          break;
        }
      if (!found) throw DataError(path + ": checkpoint is missing tensor " + full);
      if (found->tensor.shape() != p.tensor.shape())
        throw DataError(path + ": shape mismatch for tensor " + full);
      Tensor<float> dst = p.tensor;
      std::copy(found->tensor.data().begin(), found->tensor.data().end(),
                dst.data().begin());
    }
  };
  restore(albedo_net, "albedo");
  restore(shading_net, "shading");
  return {std::move(albedo_net), std::move(shading_net)};
}

}  // namespace lappyr
