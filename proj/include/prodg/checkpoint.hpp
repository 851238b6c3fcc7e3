#pragma once

#include "prodg/trainer.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace prodg {

using TensorMap = std::map<std::string, Matrix>;

/// Keyed float64 archive. Layout (little endian):
///   "PRODGTA1" | u64 count | count x { u32 name_len | name | u64 rows | u64 cols | rows*cols f64 row-major }
void write_tensor_archive(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap read_tensor_archive(const std::filesystem::path& path);

inline constexpr int kManifestVersion = 1;

struct Manifest {
  int version = kManifestVersion;
  std::int64_t step = 0;
  Index channels = 0;
  Index height = 0;
  Index width = 0;
  Index rank = 0;
  Index token_count = 0;
  Index embed_dim = 0;
  Index pooled_dim = 0;
  bool shared_logvar = false;
  std::vector<std::string> anchor_labels;
  std::vector<std::string> class_names;
  std::string config_hash;

  nlohmann::ordered_json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
  bool operator==(const Manifest&) const = default;
};

struct CheckpointMeta {
  Index height = 0;
  Index width = 0;
  std::vector<std::string> class_names;
  std::string config_hash;
};

TensorMap state_to_tensors(const TrainState& state);
TrainState state_from_tensors(const TensorMap& tensors, const Manifest& manifest);
Manifest manifest_for(const TrainState& state, const CheckpointMeta& meta);

/// Writes <dir>/manifest.json and <dir>/tensors.bin.
void save_checkpoint(const std::filesystem::path& dir, const TrainState& state, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  Manifest manifest;
  TrainState state;
};

/// Throws LoadError on missing files, unknown version, missing keys (named
/// in the message) or arrays whose shape disagrees with the manifest.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

/// Throws LoadError when the checkpoint was made for a different
/// architecture than the given backends and config hash.
void check_compatible(const Manifest& manifest, const Backends& backends, const std::string& config_hash);

/// Loads a checkpoint and continues training to config.iterations with the
/// saved optimizer moments.
TrainState resume(const std::filesystem::path& checkpoint_dir, const TrainConfig& config,
                  const Backends& backends, const std::string& config_hash, const TrainHooks& hooks = {});

}  // namespace prodg
