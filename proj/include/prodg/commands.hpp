#pragma once

#include "prodg/config.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace prodg {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;          // bad usage, configuration or input
inline constexpr int kExitNumerical = 3;      // non-finite loss during training
inline constexpr int kExitVerification = 4;   // verify found a violated invariant

inline constexpr const char* kToolVersion = "0.1.0";

/// Exclusive ownership of a workdir for the lifetime of the object.
class WorkdirLock {
 public:
  /// Throws InvalidState when another process holds the lock.
  explicit WorkdirLock(const std::filesystem::path& workdir);
  ~WorkdirLock();
  WorkdirLock(const WorkdirLock&) = delete;
  WorkdirLock& operator=(const WorkdirLock&) = delete;

 private:
  std::filesystem::path path_;
};

struct CommandIo {
  std::ostream& out;
  std::ostream& err;
};

/// Name of the directory holding the checkpoint written at `step`.
std::string checkpoint_dir_name(std::int64_t step);

/// Writes <workdir>/checkpoints/discovery and <workdir>/reports/discovery.json.
int cmd_discover(const RunConfig& config, CommandIo io);

struct TrainCommandOptions {
  bool skip_discovery = false;
  std::optional<std::filesystem::path> resume;
};

/// Writes <workdir>/config.json, <workdir>/metrics.jsonl and checkpoints
/// under <workdir>/checkpoints (step-NNNNNNN and final).
int cmd_train(const RunConfig& config, const TrainCommandOptions& options, CommandIo io);

/// One report directory per input under <workdir>/reports/explain/<stem>.
int cmd_explain(const RunConfig& config, const std::filesystem::path& checkpoint,
                const std::vector<std::filesystem::path>& images, CommandIo io);

/// Builds the JSON report for one image (no files written).
nlohmann::ordered_json explanation_json(const RunConfig& config, const std::string& input,
                                        const ExplanationReport& report,
                                        const std::vector<std::string>& class_names,
                                        const std::vector<std::vector<std::string>>& image_files,
                                        const std::vector<std::vector<std::string>>& heatmap_files);

struct DiversityCommandOptions {
  Index samples = 4;
  bool fixed_seed = false;
};

/// Writes <workdir>/reports/diversity.json.
int cmd_eval_diversity(const RunConfig& config, const std::filesystem::path& checkpoint,
                       const DiversityCommandOptions& options, CommandIo io);

struct VerifyResult {
  Index samples = 0;
  double max_logit_diff = 0.0;
  Index argmax_mismatches = 0;
  double orthogonality_residual = 0.0;
  bool passed = false;
};

inline constexpr double kVerifyLogitTolerance = 1e-4;
inline constexpr double kVerifyResidualTolerance = 1e-5;

/// Compares fused and original head logits on random inputs under the given
/// basis exactly as stored.
VerifyResult verify_basis(const OrthogonalBasis& basis, const FeatureExtractor& extractor, Index samples,
                          std::uint64_t seed);

int cmd_verify(const RunConfig& config, const std::filesystem::path& checkpoint, Index samples, CommandIo io);

}  // namespace prodg
