#include "prodg/evaluation.hpp"

#include "prodg/objectives.hpp"

namespace prodg {
namespace {

// Evaluation draws never collide with training steps (which are >= 0).
constexpr std::int64_t kEvaluationStep = -1;

template <typename PairFn>
DiversityReport pairwise_report(const PromptBank& bank, const Backends& backends,
                                const std::vector<Index>& channels, const SampleOptions& options,
                                PairFn pair_value) {
  if (options.samples_per_channel < 2) throw InvalidArgument("diversity: need at least 2 samples per channel");
  if (channels.empty()) throw InvalidArgument("diversity: no channels");
  DiversityReport report;
  report.channels = channels;
  for (Index c : channels) {
    const auto images = sample_prototypes(bank, backends, c, options);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t a = 0; a < images.size(); ++a)
      for (std::size_t b = a + 1; b < images.size(); ++b) {
        total += pair_value(images[a], images[b]);
        ++count;
      }
    report.per_channel.push_back(total / static_cast<double>(count));
  }
  double sum = 0.0;
  for (double v : report.per_channel) sum += v;
  report.global_mean = sum / static_cast<double>(report.per_channel.size());
  return report;
}

}  // namespace

std::vector<Image> sample_prototypes(const PromptBank& bank, const Backends& backends, Index channel,
                                     const SampleOptions& options) {
  const auto& entry = bank.at(channel);
  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(options.samples_per_channel));
  for (Index n = 0; n < options.samples_per_channel; ++n) {
    const Index draw = options.fixed_seed ? 0 : n;
    const auto noise = draw_noise(bank.dims, noise_seed(options.seed, kEvaluationStep, channel, draw));
    const auto emb = sample_embeddings(entry, noise);
    out.push_back(generate(*backends.generator, emb.pe, emb.ppe,
                           latent_seed(options.seed, kEvaluationStep, channel, draw)));
  }
  return out;
}

double evaluate_mean_purity(const OrthogonalBasis& basis, const PromptBank& bank,
                            const Backends& backends, const std::vector<Index>& channels,
                            const SampleOptions& options) {
  if (channels.empty()) throw InvalidArgument("evaluate_mean_purity: no channels");
  double total = 0.0;
  Index count = 0;
  for (Index c : channels) {
    for (const auto& img : sample_prototypes(bank, backends, c, options)) {
      total += purity(extract_features(*backends.extractor, img), basis, c);
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

DiversityReport evaluate_feature_cosine(const PromptBank& bank, const Backends& backends,
                                        const std::vector<Index>& channels,
                                        const SampleOptions& options) {
  return pairwise_report(bank, backends, channels, options, [&](const Image& a, const Image& b) {
    return cosine_with_grad(global_average_pool(extract_features(*backends.extractor, a)),
                            global_average_pool(extract_features(*backends.extractor, b)))
        .value;
  });
}

DiversityReport evaluate_diversity(const PromptBank& bank, const Backends& backends,
                                   const std::vector<Index>& channels, const SampleOptions& options) {
  if (!backends.metric) throw InvalidArgument("diversity: no perceptual metric configured");
  return pairwise_report(bank, backends, channels, options, [&](const Image& a, const Image& b) {
    return perceptual_distance(*backends.metric, a, b);
  });
}

}  // namespace prodg
