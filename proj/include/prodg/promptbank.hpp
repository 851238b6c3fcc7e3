#pragma once

#include "prodg/backends.hpp"
#include "prodg/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace prodg {

inline constexpr double kLogvarMin = -20.0;
inline constexpr double kLogvarMax = 4.0;
inline constexpr double kLogvarInit = -6.0;

/// Trainable part of one bank entry. Also used as the gradient container.
struct EntryParams {
  Matrix lora_a;      // token_count x r
  Matrix lora_b;      // r x embed_dim
  Vector delta_ppe;   // pooled_dim
  Matrix logvar_pe;   // token_count x embed_dim, or 1 x 1 when shared
  Vector logvar_ppe;  // pooled_dim, or size 1 when shared

  EntryParams zeros_like() const;
  EntryParams& operator+=(const EntryParams& other);
  EntryParams& operator*=(double s);
  double squared_norm() const;
  bool all_finite() const;
};

/// Per-channel prompt distribution: frozen anchors plus trainable offsets.
struct PromptBankEntry {
  Matrix pe_anchor;   // token_count x embed_dim
  Vector ppe_anchor;  // pooled_dim
  EntryParams theta;
  std::string anchor_label;

  bool shared_logvar() const { return theta.logvar_pe.size() == 1; }
  Index token_count() const { return pe_anchor.rows(); }
  Index embed_dim() const { return pe_anchor.cols(); }
  Index pooled_dim() const { return ppe_anchor.size(); }
};

struct BankDims {
  Index token_count = 0;
  Index embed_dim = 0;
  Index pooled_dim = 0;
};

struct PromptBank {
  std::vector<PromptBankEntry> entries;
  Index rank = 0;
  BankDims dims;

  Index channels() const { return static_cast<Index>(entries.size()); }
  PromptBankEntry& at(Index c);
  const PromptBankEntry& at(Index c) const;
};

struct BankInit {
  Index rank = 128;
  double init_scale = 0.01;
  double logvar = kLogvarInit;
  bool shared_logvar = false;
  std::uint64_t seed = 0;
};

PromptBank init_bank(Index channels, BankDims dims, const BankInit& init);

/// Standard normal noise for one reparameterized draw.
struct NoiseSample {
  Matrix eps_pe;
  Vector eps_ppe;
  std::uint64_t seed = 0;
};

NoiseSample draw_noise(const BankDims& dims, std::uint64_t seed);

/// Seed for the (global seed, channel, step, variation) draw.
std::uint64_t noise_seed(std::uint64_t global_seed, std::int64_t step, Index channel, Index variation);
std::uint64_t latent_seed(std::uint64_t global_seed, std::int64_t step, Index channel, Index variation);

Matrix compute_delta_pe(const PromptBankEntry& entry);

struct SampledEmbedding {
  Matrix pe;
  Vector ppe;
};

/// pe = anchor + A B + exp(logvar / 2) * eps, same for ppe with delta_ppe.
SampledEmbedding sample_embeddings(const PromptBankEntry& entry, const NoiseSample& noise);

/// Pulls dL/dpe, dL/dppe back to the trainable parameters (anchors and noise
/// receive no gradient).
EntryParams sample_embeddings_backward(const PromptBankEntry& entry, const NoiseSample& noise,
                                       const Matrix& grad_pe, const Vector& grad_ppe);

/// MSE(delta_pe) + MSE(delta_ppe).
double delta_penalty(const PromptBankEntry& entry);
EntryParams delta_penalty_grad(const PromptBankEntry& entry);

/// Projects log-variances back into [kLogvarMin, kLogvarMax].
void clamp_logvars(PromptBankEntry& entry);

struct DiscoveryOptions {
  Index images_per_class = 4;
  std::uint64_t seed = 0;
};

struct DiscoveryResult {
  std::vector<Index> assigned_class;        // per channel
  std::vector<double> best_mean_purity;     // per channel
  Matrix mean_purity;                       // classes x channels
};

/// Anchors every channel to the class name whose generated images have the
/// highest mean purity on it (U = I, ties to the lowest class index).
DiscoveryResult discover_anchors(PromptBank& bank, const std::vector<std::string>& class_names,
                                 const Backends& backends, const DiscoveryOptions& options);

/// Index-based argmax used by discovery, exposed for tie-break tests.
std::vector<Index> assign_channels(const Matrix& mean_purity);

}  // namespace prodg
