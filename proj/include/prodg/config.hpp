#pragma once

#include "prodg/backends.hpp"
#include "prodg/explainer.hpp"
#include "prodg/promptbank.hpp"
#include "prodg/toy_backends.hpp"
#include "prodg/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace prodg {

/// Fully resolved run configuration. Built from defaults, then an optional
/// JSON file, then PRODG_SEED, then command-line overrides.
struct RunConfig {
  std::uint64_t seed = 0;

  std::string extractor_kind = "toy_planted";
  std::string generator_kind = "toy_decoder";
  std::string encoder_kind = "toy_hash";
  std::string metric_kind = "toy_cosine";
  std::map<std::string, std::string> generator_options;
  toy::ToyConfig toy;

  TrainConfig train;
  BankInit bank;

  std::optional<std::string> class_file;
  std::vector<std::string> class_names;
  Index images_per_class = 4;

  ExplainOptions explain;

  std::filesystem::path workdir = "prodg-run";

  nlohmann::json resolved;  // merged tree, echoed into run outputs

  std::filesystem::path checkpoints_dir() const { return workdir / "checkpoints"; }
  std::filesystem::path reports_dir() const { return workdir / "reports"; }
};

/// Default tree; also the schema used to reject unknown keys.
nlohmann::json default_config_tree();

/// Parses "a.b.c=value" (value read as JSON, falling back to a string).
void apply_override(nlohmann::json& tree, const std::string& assignment);

/// Throws InvalidConfiguration on unknown keys, wrong types or invalid values.
RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                         const std::vector<std::string>& overrides, const char* env_seed);

RunConfig config_from_tree(const nlohmann::json& tree);

/// Class names from the class file (one UTF-8 name per line) or the inline
/// list. Throws InvalidConfiguration when none are available.
std::vector<std::string> load_class_names(const RunConfig& config);

/// Instantiates the configured backends. Adapter kinds throw BackendError.
Backends build_backends(const RunConfig& config, const std::vector<std::string>& class_names);

/// Hash of every setting that fixes tensor shapes or backend weights.
std::string architecture_hash(const RunConfig& config, const std::vector<std::string>& class_names);

}  // namespace prodg
