#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "ifmmin/layers.hpp"

// Binary parameter store:
//   8 bytes   magic "IFMMCKPT"
//   8 bytes   header length L, little-endian u64
//   L bytes   JSON header {format_version, fingerprint, metadata,
//             params: [{name, shape, offset, count}], payload_bytes}
//   payload   float64 values, little-endian, offsets relative to its start
namespace ifmmin::checkpoint {

inline constexpr int kFormatVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  int format_version = kFormatVersion;
  std::string fingerprint;
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<NamedTensor> params;

  const Tensor* find(const std::string& name) const;
};

std::string serialize(const Checkpoint& ckpt);
Checkpoint deserialize(std::string_view bytes, const std::string& origin = "checkpoint");

// Atomic write of the parameters in `params` order.
void save(const std::filesystem::path& path, const nn::ParamList& params,
          const std::string& fingerprint, const nlohmann::json& metadata);
Checkpoint load(const std::filesystem::path& path);

// Copies every stored tensor into the parameter of the same name. Missing,
// extra or reshaped parameters are errors.
void assign(const Checkpoint& ckpt, const nn::ParamList& params);

}  // namespace ifmmin::checkpoint
