#pragma once

#include "prodg/backends.hpp"
#include "prodg/orthobasis.hpp"
#include "prodg/promptbank.hpp"

#include <cstdint>
#include <vector>

namespace prodg {

struct SampleOptions {
  Index samples_per_channel = 4;
  std::uint64_t seed = 0;
  /// Reuse the first sample's noise and latent for every sample.
  bool fixed_seed = false;
};

/// Prototype images for channel c drawn from the bank. Draw n uses the
/// (seed, channel, n) noise and latent streams.
std::vector<Image> sample_prototypes(const PromptBank& bank, const Backends& backends, Index channel,
                                     const SampleOptions& options);

/// Mean purity of each channel's own prototypes under the basis.
double evaluate_mean_purity(const OrthogonalBasis& basis, const PromptBank& bank,
                            const Backends& backends, const std::vector<Index>& channels,
                            const SampleOptions& options);

struct DiversityReport {
  std::vector<Index> channels;
  std::vector<double> per_channel;  // mean pairwise value per channel
  double global_mean = 0.0;
};

/// Mean pairwise cosine similarity of pooled backbone features between a
/// channel's prototypes.
DiversityReport evaluate_feature_cosine(const PromptBank& bank, const Backends& backends,
                                        const std::vector<Index>& channels,
                                        const SampleOptions& options);

/// Mean pairwise perceptual distance over all n(n-1)/2 prototype pairs.
DiversityReport evaluate_diversity(const PromptBank& bank, const Backends& backends,
                                   const std::vector<Index>& channels, const SampleOptions& options);

}  // namespace prodg
