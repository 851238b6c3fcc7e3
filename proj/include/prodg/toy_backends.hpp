#pragma once

// Small deterministic backends with analytic backward passes. They plant one
// visual concept per channel so discovery, training and explanation can be
// checked end to end without pretrained weights.
//
// Image model: the image is tiled into patch x patch blocks; each block is a
// vector in R^D (D = image_channels * patch^2). Concept j owns a disjoint set
// of block coordinates (template row T_j, unit norm, nonnegative).
//
//   extractor:  F[:, p] = M * relu(T x_p + bias)         M orthogonal mixing
//   generator:  x_p = a_p(z) * scale * T^T softmax(l)
//               l = (tau / Q) * K q + eta * Wz z,  q = [mean_tokens(pe); ppe]
//
// K holds the encoder's embeddings of the class names, so the class-i prompt
// draws concept i. M rotates disjoint channel pairs by a fixed angle, which
// entangles them; U = M^T undoes it.

#include "prodg/backends.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace prodg::toy {

struct ToyConfig {
  Index channels = 8;
  Index image_channels = 3;
  Index image_size = 16;
  Index patch = 4;
  double mixing = 0.7;                 // rotation angle (radians) per channel pair
  double bias = 0.05;
  Index token_count = 4;
  Index embed_dim = 8;
  Index pooled_dim = 8;
  Index latent_dim = 4;
  double temperature = 3.0;
  double amplitude_jitter = 0.25;
  double latent_logit_scale = 0.05;
  std::uint64_t seed = 7;
  std::vector<std::string> class_names;  // empty -> class_0 .. class_{C-1}
};

std::vector<std::string> default_class_names(Index count);

/// Fixed weights shared by the toy extractor and generator.
struct ToyWorld {
  ToyConfig config;
  std::vector<std::string> class_names;
  Matrix templates;  // C x D
  Matrix mixing;     // C x C, orthogonal
  double pixel_scale = 1.0;

  Index patch_dim() const { return config.image_channels * config.patch * config.patch; }
  Index grid() const { return config.image_size / config.patch; }
  ImageShape image_shape() const {
    return {config.image_channels, config.image_size, config.image_size};
  }

  /// Image whose every block is the pure concept-i pattern.
  Image concept_image(Index concept_index, double amplitude = 1.0) const;

  // Block <-> image layout helpers.
  Vector block(const Image& image, Index location) const;
  void add_block(Image& image, Index location, const Vector& values) const;
};

std::shared_ptr<const ToyWorld> make_world(const ToyConfig& config);

class HashEncoder final : public TextEncoder {
 public:
  HashEncoder(Index token_count, Index embed_dim, Index pooled_dim, std::uint64_t seed);
  std::string name() const override { return "toy_hash"; }
  Index token_count() const override { return token_count_; }
  Index embed_dim() const override { return embed_dim_; }
  Index pooled_dim() const override { return pooled_dim_; }
  TextEmbedding encode(const std::string& prompt) const override;

 private:
  Index token_count_, embed_dim_, pooled_dim_;
  std::uint64_t seed_;
};

class PlantedExtractor final : public FeatureExtractor {
 public:
  explicit PlantedExtractor(std::shared_ptr<const ToyWorld> world);
  std::string name() const override { return "toy_planted"; }
  ImageShape input_shape() const override { return world_->image_shape(); }
  Index channels() const override { return world_->config.channels; }
  Index feature_height() const override { return world_->grid(); }
  Index feature_width() const override { return world_->grid(); }
  const LinearHead& head() const override { return head_; }
  FeatureMap extract(const Image& image) const override;
  Image backward(const Image& image, const Matrix& grad_features) const override;

  const ToyWorld& world() const { return *world_; }

 private:
  std::shared_ptr<const ToyWorld> world_;
  LinearHead head_;
};

class Decoder final : public Generator {
 public:
  Decoder(std::shared_ptr<const ToyWorld> world, const TextEncoder& encoder);
  std::string name() const override { return "toy_decoder"; }
  ImageShape image_shape() const override { return world_->image_shape(); }
  Index latent_dim() const override { return world_->config.latent_dim; }
  Index token_count() const override { return world_->config.token_count; }
  Index embed_dim() const override { return world_->config.embed_dim; }
  Index pooled_dim() const override { return world_->config.pooled_dim; }

  Image generate(const Matrix& pe, const Vector& ppe, std::uint64_t latent_seed) const override;
  EmbeddingGrad backward(const Matrix& pe, const Vector& ppe, std::uint64_t latent_seed,
                         const Image& grad_image) const override;

  /// Concept mixture weights softmax(l) for the given conditioning.
  Vector concept_weights(const Matrix& pe, const Vector& ppe, std::uint64_t latent_seed) const;

 private:
  struct Forward {
    Vector latent;
    Vector weights;     // softmax output
    Vector amplitude;   // per block
  };
  Forward forward(const Matrix& pe, const Vector& ppe, std::uint64_t latent_seed) const;
  Vector query(const Matrix& pe, const Vector& ppe) const;

  std::shared_ptr<const ToyWorld> world_;
  Matrix keys_;            // C x Q
  Matrix latent_logits_;   // C x L
  Matrix latent_amplitude_;  // (grid^2) x L
};

/// 1 - cosine similarity of pooled toy-backbone features, computed as half
/// the squared distance of the normalized vectors.
class CosineMetric final : public PerceptualMetric {
 public:
  explicit CosineMetric(std::shared_ptr<const FeatureExtractor> extractor);
  std::string name() const override { return "toy_cosine"; }
  double distance(const Image& a, const Image& b) const override;

 private:
  std::shared_ptr<const FeatureExtractor> extractor_;
};

/// Wires encoder, generator, extractor and metric over one shared world.
Backends make_backends(const ToyConfig& config);

}  // namespace prodg::toy
