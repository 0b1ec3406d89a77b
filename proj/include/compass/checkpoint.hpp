#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace compass {

/// `.ckpt` container, all integers little-endian:
///
///   "CMPK" | version u32 | seed u64 | step u64
///   config length u32 | config text ("key=value" lines, sorted)
///   tensor count u32
///   per tensor: name length u32 | name | rank u32 | dims i64... | float32 data
inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  uint32_t version = kCheckpointVersion;
  uint64_t seed = 0;
  uint64_t step = 0;
  std::map<std::string, std::string> config;
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  /// Tensor by name; throws DataError when absent.
  const torch::Tensor& tensor(const std::string& name) const;
  bool has(const std::string& name) const;
};

std::vector<uint8_t> serialize(const Checkpoint& ckpt);
/// Throws DataError on a malformed or unsupported checkpoint.
Checkpoint deserialize(std::span<const uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Append every named parameter of `module` under `prefix`.
void add_module_tensors(Checkpoint& ckpt, const torch::nn::Module& module,
                        const std::string& prefix = "");
/// Copy tensors named `prefix + parameter name` into `module`. Every
/// parameter must be present with a matching shape, else DataError.
void load_module_tensors(const Checkpoint& ckpt, torch::nn::Module& module,
                         const std::string& prefix = "");

}  // namespace compass
