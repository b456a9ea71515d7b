#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "lithomt/config.hpp"
#include "lithomt/tensor/nn.hpp"
#include "lithomt/tensor/optim.hpp"

namespace lmt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Self-describing container: magic, format version, a JSON header (kind,
// step, config echo, tensor directory) and the little-endian float32 blobs.
struct Checkpoint {
  std::string kind;  // generator | detector | unified
  long step = 0;
  std::string corpus_hash;
  KeyValueConfig config;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const;
  bool has_prefix(const std::string& prefix) const;
};

std::string serialize_checkpoint(const Checkpoint& c);
Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");
// Writes through a temporary file and rename.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename T>
void store_parameters(Checkpoint& c, const ParamList<T>& ps);
// Copies every parameter from the checkpoint; missing names or shape
// differences throw ConfigError.
template <typename T>
void restore_parameters(const Checkpoint& c, const ParamList<T>& ps);

template <typename T>
void store_optimizer(Checkpoint& c, const ParamList<T>& ps, const Adam<T>& opt);
// Returns false when the checkpoint carries no optimizer state.
template <typename T>
bool restore_optimizer(const Checkpoint& c, const ParamList<T>& ps, Adam<T>& opt);

// Hex digest of every parameter name, shape and value.
template <typename T>
std::string weight_hash(const ParamList<T>& ps);

}  // namespace lmt
