#pragma once

#include "prodg/backends.hpp"
#include "prodg/orthobasis.hpp"
#include "prodg/promptbank.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace prodg {

struct AttributionScore {
  Index channel = 0;
  double score = 0.0;
  Index predicted_class = 0;
};

struct Attribution {
  Index predicted_class = 0;
  Vector logits;   // fused-head logits
  Vector scores;   // S[yhat, c] for every channel
  std::vector<AttributionScore> top;  // descending score, ties to lower channel
  bool k_clamped = false;             // requested k exceeded C
};

/// S[yhat, c] = W_fused[yhat, c] * relu(GAP(Z)_c) with yhat the fused argmax.
Attribution attribute(const FeatureMap& feat, const OrthogonalBasis& basis, const FusedHead& head, Index k);

/// relu(Z_c) / max(||Z[:, h, w]||, eps) at every location, shape H x W.
Matrix spatial_purity_map(const FeatureMap& feat, const OrthogonalBasis& basis, Index c);

/// relu(Z_c) / max over locations of relu(Z_c); all zeros when that max is 0.
Matrix relative_magnitude_map(const FeatureMap& feat, const OrthogonalBasis& basis, Index c);

/// Bilinear resize with half-pixel centers; output values stay within the
/// input's range.
Matrix bilinear_resize(const Matrix& src, Index out_rows, Index out_cols);

struct ConceptHeatmap {
  Index channel = 0;
  Matrix values;     // feature resolution, entries in [0, 1]
  Matrix upsampled;  // image resolution
};

ConceptHeatmap concept_heatmap(const FeatureMap& feat, const OrthogonalBasis& basis, Index c,
                               const ImageShape& image_shape);

struct BoundingBox {
  Index row_min = 0, row_max = 0, col_min = 0, col_max = 0;
  bool empty = true;
  bool operator==(const BoundingBox&) const = default;
};

enum class Connectivity { kFour = 4, kEight = 8 };

/// Box of the largest connected block of pixels >= threshold_frac * max.
/// Equal-size blocks resolve to the one holding the row-major-first active
/// pixel. A heatmap with no positive value yields an empty box.
BoundingBox extract_bbox(const Matrix& heatmap, double threshold_frac = 0.8,
                         Connectivity connectivity = Connectivity::kFour);

struct ExplainOptions {
  Index k = 3;
  Index samples_per_channel = 1;
  std::uint64_t seed = 0;
  double threshold_frac = 0.8;
  Connectivity connectivity = Connectivity::kFour;
  bool input_heatmaps = false;  // also render heatmaps of the explained input
};

struct Prototype {
  Image image;
  std::uint64_t seed = 0;  // latent seed of the draw
  ConceptHeatmap heatmap;
  BoundingBox bbox;
};

struct ChannelExplanation {
  Index channel = 0;
  double score = 0.0;
  std::string anchor_label;
  std::vector<Prototype> prototypes;
  std::optional<ConceptHeatmap> input_heatmap;
  std::optional<BoundingBox> input_bbox;
};

struct ExplanationReport {
  Index predicted_class = 0;
  Vector logits;
  Index k = 0;
  bool k_clamped = false;
  std::vector<ChannelExplanation> channels;
};

/// Attributes the prediction for `image`, then for each of the top-k channels
/// samples prototypes from the bank and localizes the channel's concept on
/// them.
ExplanationReport explain(const Image& image, const OrthogonalBasis& basis, const PromptBank& bank,
                          const Backends& backends, const ExplainOptions& options);

}  // namespace prodg
