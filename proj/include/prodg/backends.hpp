#pragma once

#include "prodg/orthobasis.hpp"
#include "prodg/types.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace prodg {

struct ImageShape {
  Index channels = 0;
  Index height = 0;
  Index width = 0;

  Index size() const { return channels * height * width; }
  bool operator==(const ImageShape&) const = default;
};

/// Dense planar image, pixel (c, h, w) at index (c * height + h) * width + w.
struct Image {
  ImageShape shape;
  Vector pixels;

  Image() = default;
  Image(ImageShape s, Vector p);
  static Image zeros(ImageShape s) { return Image(s, Vector::Zero(s.size())); }

  Index index(Index c, Index h, Index w) const { return (c * shape.height + h) * shape.width + w; }
  double at(Index c, Index h, Index w) const { return pixels(index(c, h, w)); }
  double& at(Index c, Index h, Index w) { return pixels(index(c, h, w)); }
};

/// Frozen classifier backbone Phi plus its linear head.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string name() const = 0;
  virtual ImageShape input_shape() const = 0;
  virtual Index channels() const = 0;
  virtual Index feature_height() const = 0;
  virtual Index feature_width() const = 0;
  virtual const LinearHead& head() const = 0;
  Index num_classes() const { return head().weights.rows(); }

  virtual FeatureMap extract(const Image& image) const = 0;
  /// Vector-Jacobian product: dL/dimage given dL/dfeatures (C x H*W).
  virtual Image backward(const Image& image, const Matrix& grad_features) const = 0;
};

struct TextEmbedding {
  Matrix pe;   // token_count x embed_dim
  Vector ppe;  // pooled_dim
};

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::string name() const = 0;
  virtual Index token_count() const = 0;
  virtual Index embed_dim() const = 0;
  virtual Index pooled_dim() const = 0;
  virtual TextEmbedding encode(const std::string& prompt) const = 0;
};

struct EmbeddingGrad {
  Matrix pe;
  Vector ppe;
};

/// Frozen text-conditioned generator G(pe, ppe; latent).
class Generator {
 public:
  virtual ~Generator() = default;
  virtual std::string name() const = 0;
  virtual ImageShape image_shape() const = 0;
  virtual Index latent_dim() const = 0;
  virtual Index token_count() const = 0;
  virtual Index embed_dim() const = 0;
  virtual Index pooled_dim() const = 0;

  virtual Image generate(const Matrix& pe, const Vector& ppe, std::uint64_t latent_seed) const = 0;
  /// Vector-Jacobian product with respect to the conditioning embeddings.
  virtual EmbeddingGrad backward(const Matrix& pe, const Vector& ppe, std::uint64_t latent_seed,
                                 const Image& grad_image) const = 0;
};

class PerceptualMetric {
 public:
  virtual ~PerceptualMetric() = default;
  virtual std::string name() const = 0;
  virtual double distance(const Image& a, const Image& b) const = 0;
};

/// Everything a run needs from the outside world.
struct Backends {
  std::shared_ptr<const FeatureExtractor> extractor;
  std::shared_ptr<const TextEncoder> encoder;
  std::shared_ptr<const Generator> generator;
  std::shared_ptr<const PerceptualMetric> metric;
  std::vector<std::string> class_names;

  /// Throws InvalidArgument when encoder and generator disagree on dims.
  void check_compatible() const;
};

// Checked entry points used by the rest of the library.
FeatureMap extract_features(const FeatureExtractor& extractor, const Image& image);
Vector classify(const FeatureExtractor& extractor, const FeatureMap& feat);
TextEmbedding encode_text(const TextEncoder& encoder, const std::string& prompt);
Image generate(const Generator& generator, const Matrix& pe, const Vector& ppe,
               std::uint64_t latent_seed);
double perceptual_distance(const PerceptualMetric& metric, const Image& a, const Image& b);

/// Dimensions and pass-through options of the production adapters
/// (T5-XXL + CLIP text encoders, FLUX.1-schnell generator, LPIPS). These
/// backends need external model weights and are not linked into this build.
struct AdapterSpec {
  std::string kind;  // text after "adapter:"
  Index token_count = 512;
  Index embed_dim = 4096;
  Index pooled_dim = 768;
  std::map<std::string, std::string> options;  // e.g. denoising steps, guidance
};

/// Always throws BackendError naming the adapter; kept so configs that
/// select adapters fail with a clear message instead of a parse error.
[[noreturn]] void require_adapter(const AdapterSpec& spec);

}  // namespace prodg
