#pragma once

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "latentface/autodiff.hpp"
#include "latentface/tensor.hpp"

// Versioned named-tensor container. Layout: magic "LFCK", format version
// (u32), metadata length (u64), UTF-8 JSON metadata, tensor records
// (name length u32, name bytes, rank u32, dims u64 each, byte length u64,
// raw f32 data), trailing CRC32 of everything before it. All integers and
// floats little-endian regardless of host.
namespace lf::ckpt {

using json = nlohmann::json;

inline constexpr uint32_t kFormatVersion = 1;

struct Checkpoint {
  json meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const {
    for (auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

void save(const std::string& path, const Checkpoint& ck);
Checkpoint load(const std::string& path);

// CRC32 of a whole file, as a provenance fingerprint.
uint32_t file_crc32(const std::string& path);

// ParamStore bridging. load_params requires an exact name/shape match and
// the expected architecture id in metadata.
Checkpoint from_params(const ad::ParamStore<float>& ps, json meta);
void load_params(const Checkpoint& ck, ad::ParamStore<float>& ps,
                 const std::string& expected_arch);

}  // namespace lf::ckpt
