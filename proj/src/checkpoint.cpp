#include "ifmmin/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <set>

#include "ifmmin/io.hpp"

namespace ifmmin::checkpoint {

namespace {

constexpr std::string_view kMagic = "IFMMCKPT";

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::string_view bytes, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
  }
  return v;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const NamedTensor& p : params) {
    if (p.name == name) return &p.value;
  }
  return nullptr;
}

std::string serialize(const Checkpoint& ckpt) {
  nlohmann::json entries = nlohmann::json::array();
  std::size_t offset = 0;
  for (const NamedTensor& p : ckpt.params) {
    entries.push_back({{"name", p.name},
                       {"shape", p.value.shape()},
                       {"offset", offset},
                       {"count", p.value.size()}});
    offset += p.value.size() * sizeof(double);
  }
  const nlohmann::json header = {{"format_version", ckpt.format_version},
                                 {"fingerprint", ckpt.fingerprint},
                                 {"metadata", ckpt.metadata},
                                 {"params", entries},
                                 {"payload_bytes", offset}};
  const std::string text = header.dump();

  std::string out(kMagic);
  put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const NamedTensor& p : ckpt.params) {
    for (double v : p.value.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint deserialize(std::string_view bytes, const std::string& origin) {
  const std::size_t prefix = kMagic.size() + 8;
  if (bytes.size() < prefix || bytes.substr(0, kMagic.size()) != kMagic) {
    throw ValidationError(origin + ": not a checkpoint (bad magic or truncated prefix)");
  }
  const std::uint64_t header_len = get_u64(bytes, kMagic.size());
  if (header_len > bytes.size() - prefix) {
    throw ValidationError(origin + ": truncated header");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(prefix, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(origin + ": corrupt header: " + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.format_version = header.at("format_version").get<int>();
    if (ckpt.format_version != kFormatVersion) {
      throw ValidationError(origin + ": format version " + std::to_string(ckpt.format_version) +
                            " is not supported (expected " + std::to_string(kFormatVersion) + ")");
    }
    ckpt.fingerprint = header.at("fingerprint").get<std::string>();
    ckpt.metadata = header.at("metadata");
    const std::string_view payload = bytes.substr(prefix + header_len);
    const auto payload_bytes = header.at("payload_bytes").get<std::size_t>();
    if (payload.size() != payload_bytes) {
      throw ValidationError(origin + ": payload is " + std::to_string(payload.size()) +
                            " bytes, header declares " + std::to_string(payload_bytes));
    }
    std::size_t expected_offset = 0;
    std::set<std::string> names;
    for (const auto& entry : header.at("params")) {
      NamedTensor p;
      p.name = entry.at("name").get<std::string>();
      if (!names.insert(p.name).second) {
        throw ValidationError(origin + ": duplicate parameter " + p.name);
      }
      const Shape shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto count = entry.at("count").get<std::size_t>();
      if (shape_size(shape) != count || offset != expected_offset ||
          offset + count * sizeof(double) > payload.size()) {
        throw ValidationError(origin + ": parameter " + p.name + " has inconsistent layout");
      }
      std::vector<double> values(count);
      for (std::size_t i = 0; i < count; ++i) {
        values[i] = std::bit_cast<double>(get_u64(payload, offset + i * sizeof(double)));
      }
      p.value = Tensor(shape, std::move(values));
      expected_offset = offset + count * sizeof(double);
      ckpt.params.push_back(std::move(p));
    }
    if (expected_offset != payload.size()) {
      throw ValidationError(origin + ": payload has trailing bytes");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(origin + ": corrupt header: " + e.what());
  }
  return ckpt;
}

void save(const std::filesystem::path& path, const nn::ParamList& params,
          const std::string& fingerprint, const nlohmann::json& metadata) {
  Checkpoint ckpt;
  ckpt.fingerprint = fingerprint;
  ckpt.metadata = metadata;
  for (const nn::ParamRef& p : params) ckpt.params.push_back({p.name, *p.tensor});
  io::atomic_write(path, serialize(ckpt));
}

Checkpoint load(const std::filesystem::path& path) {
  return deserialize(io::read_file(path), path.generic_string());
}

void assign(const Checkpoint& ckpt, const nn::ParamList& params) {
  if (ckpt.params.size() != params.size()) {
    throw ValidationError("checkpoint holds " + std::to_string(ckpt.params.size()) +
                          " parameters, model expects " + std::to_string(params.size()));
  }
  for (const nn::ParamRef& p : params) {
    const Tensor* stored = ckpt.find(p.name);
    if (stored == nullptr) throw ValidationError("checkpoint lacks parameter " + p.name);
    if (stored->shape() != p.tensor->shape()) {
      throw ValidationError("checkpoint parameter " + p.name + " has shape " +
                            to_string(stored->shape()) + ", model expects " +
                            to_string(p.tensor->shape()));
    }
    *p.tensor = *stored;
  }
}

}  // namespace ifmmin::checkpoint
