#include "prodg/backends.hpp"

namespace prodg {

Image::Image(ImageShape s, Vector p) : shape(s), pixels(std::move(p)) {
  if (pixels.size() != shape.size()) throw InvalidArgument("Image: pixel count does not match shape");
}

void Backends::check_compatible() const {
  if (!extractor || !encoder || !generator) throw InvalidArgument("backends: missing component");
  if (encoder->token_count() != generator->token_count() ||
      encoder->embed_dim() != generator->embed_dim() ||
      encoder->pooled_dim() != generator->pooled_dim())
    throw InvalidArgument("backends: encoder and generator embedding dims differ");
  if (!(generator->image_shape() == extractor->input_shape()))
    throw InvalidArgument("backends: generator image shape does not match extractor input");
}

FeatureMap extract_features(const FeatureExtractor& extractor, const Image& image) {
  if (!(image.shape == extractor.input_shape()))
    throw InvalidArgument("extract_features: image shape does not match extractor input");
  return extractor.extract(image);
}

Vector classify(const FeatureExtractor& extractor, const FeatureMap& feat) {
  if (feat.channels() != extractor.channels() || feat.height != extractor.feature_height() ||
      feat.width != extractor.feature_width())
    throw InvalidArgument("classify: feature map does not match extractor dims");
  const auto& head = extractor.head();
  return head_logits(head.weights, head.bias, feat);
}

TextEmbedding encode_text(const TextEncoder& encoder, const std::string& prompt) {
  if (prompt.empty()) throw InvalidArgument("encode_text: empty prompt");
  return encoder.encode(prompt);
}

Image generate(const Generator& generator, const Matrix& pe, const Vector& ppe,
               std::uint64_t latent_seed) {
  if (pe.rows() != generator.token_count() || pe.cols() != generator.embed_dim() ||
      ppe.size() != generator.pooled_dim())
    throw InvalidArgument("generate: embedding dims do not match generator");
  return generator.generate(pe, ppe, latent_seed);
}

double perceptual_distance(const PerceptualMetric& metric, const Image& a, const Image& b) {
  if (!(a.shape == b.shape)) throw InvalidArgument("perceptual_distance: image shapes differ");
  return metric.distance(a, b);
}

void require_adapter(const AdapterSpec& spec) {
  throw BackendError("backend 'adapter:" + spec.kind +
                     "' requires external model weights and is not available in this build");
}

}  // namespace prodg
