#pragma once

#include "prodg/adam.hpp"
#include "prodg/backends.hpp"
#include "prodg/objectives.hpp"
#include "prodg/orthobasis.hpp"
#include "prodg/promptbank.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace prodg {

struct TrainConfig {
  std::int64_t iterations = 15000;
  std::int64_t warmup = 1500;
  Index batch = 16;      // B
  Index variations = 2;  // K
  double lr_u = 1e-3;
  double lr_bank = 1e-2;
  std::uint64_t seed = 0;
  LossConfig loss;
  std::int64_t checkpoint_every = 1000;
  std::vector<Index> channels_to_train;  // empty means all channels

  void validate(Index channels) const;
  std::vector<Index> trainable_channels(Index channels) const;
};

enum class Phase { kBasis, kBank };
const char* phase_name(Phase p);
/// Warmup steps train U only; afterwards phases alternate one-for-one.
Phase phase_for_step(std::int64_t step, std::int64_t warmup);

struct StepMetrics {
  std::int64_t step = 0;
  Phase phase = Phase::kBasis;
  double mean_purity = 0.0;
  double loss_u = 0.0;
  double loss_reg = 0.0;
  double loss_div = 0.0;
  double combined = 0.0;
};

/// {"step":..,"phase":..,"mean_purity":..,...} on one line.
std::string to_json_line(const StepMetrics& m);

struct EntryMoments {
  AdamMoments lora_a, lora_b, delta_ppe, logvar_pe, logvar_ppe;
};

struct TrainState {
  std::int64_t step = 0;
  OrthogonalBasis basis{1};
  PromptBank bank;
  AdamMoments moments_a;
  std::vector<EntryMoments> moments_bank;
  std::vector<StepMetrics> history;
};

TrainState make_initial_state(PromptBank bank);

/// Channels and seeds for one batch of B = unique * K generated images.
struct BatchPlan {
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  std::vector<Index> channels;  // unique channels, sampling order
  Index variations = 2;
};

BatchPlan plan_batch(const TrainConfig& config, Index channels, std::int64_t step);

enum class GradTarget { kNone, kBasis, kBank };

struct BatchResult {
  std::vector<Index> image_channels;  // c_b for every generated image
  std::vector<double> purities;
  double loss_u = 0.0;
  double loss_reg = 0.0;
  double loss_div = 0.0;
  double combined = 0.0;
  double mean_purity = 0.0;

  Matrix grad_a;  // dL_U/dA, for GradTarget::kBasis
  // Per unique channel (plan order), each already scaled by its loss weight.
  std::vector<EntryParams> grad_bank_u;
  std::vector<EntryParams> grad_bank_reg;
  std::vector<EntryParams> grad_bank_div;

  /// Sum of the three per-term gradients for unique channel i.
  EntryParams grad_bank(std::size_t i) const;
};

/// Generates the planned images from the bank, evaluates all loss terms and,
/// on request, the gradient with respect to A (L_U only) or to the bank
/// parameters (combined objective).
BatchResult evaluate_batch(const OrthogonalBasis& basis, const PromptBank& bank,
                           const Backends& backends, const LossConfig& loss, const BatchPlan& plan,
                           GradTarget target);

/// One Adam update of A on L_U with the bank frozen.
StepMetrics phase_u_step(TrainState& state, const TrainConfig& config, const Backends& backends);
/// One Adam update of the bank parameters on the combined loss with U frozen.
StepMetrics phase_bank_step(TrainState& state, const TrainConfig& config, const Backends& backends);

struct TrainHooks {
  /// Writes a checkpoint and returns its location.
  std::function<std::string(const TrainState&)> checkpoint;
  std::function<void(const StepMetrics&)> metrics;
};

/// Runs from state.step up to config.iterations. Checkpoints every
/// checkpoint_every steps and once at the end. A non-finite loss throws
/// NumericalFailure carrying the last written checkpoint.
void train(TrainState& state, const TrainConfig& config, const Backends& backends,
           const TrainHooks& hooks = {});

}  // namespace prodg
