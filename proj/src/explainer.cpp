#include "prodg/explainer.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

namespace prodg {
namespace {

constexpr std::int64_t kExplainStep = -2;

void check_channel(const FeatureMap& feat, const OrthogonalBasis& basis, Index c) {
  if (feat.channels() != basis.channels()) throw InvalidArgument("explainer: channel count mismatch");
  if (c < 0 || c >= basis.channels()) throw InvalidArgument("explainer: channel index out of range");
}

Matrix to_grid(const Vector& flat, Index rows, Index cols) {
  Matrix out(rows, cols);
  for (Index h = 0; h < rows; ++h)
    for (Index w = 0; w < cols; ++w) out(h, w) = flat(h * cols + w);
  return out;
}

}  // namespace

Attribution attribute(const FeatureMap& feat, const OrthogonalBasis& basis, const FusedHead& head, Index k) {
  if (k < 1) throw InvalidArgument("attribute: k must be at least 1");
  if (feat.channels() != basis.channels() || head.weights.cols() != basis.channels())
    throw InvalidArgument("attribute: dims inconsistent");
  Attribution out;
  const Index channels = basis.channels();
  if (k > channels) {
    k = channels;
    out.k_clamped = true;
  }
  const Vector pooled = global_average_pool(apply_basis(basis, feat));
  out.logits = head.weights * pooled + head.bias;
  Eigen::Index yhat = 0;
  out.logits.maxCoeff(&yhat);  // first maximum
  out.predicted_class = yhat;
  out.scores = head.weights.row(yhat).transpose().cwiseProduct(pooled.cwiseMax(0.0));

  std::vector<Index> order(static_cast<std::size_t>(channels));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return out.scores(a) > out.scores(b); });
  for (Index i = 0; i < k; ++i) {
    const Index c = order[static_cast<std::size_t>(i)];
    out.top.push_back({c, out.scores(c), yhat});
  }
  return out;
}

Matrix spatial_purity_map(const FeatureMap& feat, const OrthogonalBasis& basis, Index c) {
  check_channel(feat, basis, c);
  const Matrix z = basis.u() * feat.values;
  Vector p(z.cols());
  for (Index k = 0; k < z.cols(); ++k)
    p(k) = std::max(z(c, k), 0.0) / std::max(z.col(k).norm(), kPurityEpsilon);
  return to_grid(p, feat.height, feat.width);
}

Matrix relative_magnitude_map(const FeatureMap& feat, const OrthogonalBasis& basis, Index c) {
  check_channel(feat, basis, c);
  const Vector pos = (basis.u().row(c) * feat.values).transpose().cwiseMax(0.0);
  const double peak = pos.maxCoeff();
  if (peak <= 0.0) return Matrix::Zero(feat.height, feat.width);
  return to_grid(pos / std::max(peak, kPurityEpsilon), feat.height, feat.width);
}

Matrix bilinear_resize(const Matrix& src, Index out_rows, Index out_cols) {
  if (src.size() == 0 || out_rows <= 0 || out_cols <= 0) throw InvalidArgument("bilinear_resize: empty input");
  Matrix out(out_rows, out_cols);
  auto coord = [](Index dst, Index in, Index out) {
    const double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };
  for (Index r = 0; r < out_rows; ++r) {
    const double y = coord(r, src.rows(), out_rows);
    const auto y0 = static_cast<Index>(std::floor(y));
    const Index y1 = std::min(y0 + 1, src.rows() - 1);
    const double fy = y - static_cast<double>(y0);
    for (Index c = 0; c < out_cols; ++c) {
      const double x = coord(c, src.cols(), out_cols);
      const auto x0 = static_cast<Index>(std::floor(x));
      const Index x1 = std::min(x0 + 1, src.cols() - 1);
      const double fx = x - static_cast<double>(x0);
      const double top = (1.0 - fx) * src(y0, x0) + fx * src(y0, x1);
      const double bottom = (1.0 - fx) * src(y1, x0) + fx * src(y1, x1);
      out(r, c) = (1.0 - fy) * top + fy * bottom;
    }
  }
  return out;
}

ConceptHeatmap concept_heatmap(const FeatureMap& feat, const OrthogonalBasis& basis, Index c,
                               const ImageShape& image_shape) {
  ConceptHeatmap h;
  h.channel = c;
  h.values = spatial_purity_map(feat, basis, c).cwiseProduct(relative_magnitude_map(feat, basis, c));
  h.upsampled = bilinear_resize(h.values, image_shape.height, image_shape.width);
  return h;
}

BoundingBox extract_bbox(const Matrix& heatmap, double threshold_frac, Connectivity connectivity) {
  if (heatmap.size() == 0) throw InvalidArgument("extract_bbox: empty heatmap");
  BoundingBox best;
  const double peak = heatmap.maxCoeff();
  if (!(peak > 0.0)) return best;
  const double cut = threshold_frac * peak;
  const Index rows = heatmap.rows(), cols = heatmap.cols();

  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> seen =
      Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(rows, cols, false);
  const bool diagonal = connectivity == Connectivity::kEight;
  Index best_size = 0;
  std::deque<std::pair<Index, Index>> queue;

  for (Index r0 = 0; r0 < rows; ++r0) {
    for (Index c0 = 0; c0 < cols; ++c0) {
      if (seen(r0, c0) || heatmap(r0, c0) < cut) continue;
      BoundingBox box{r0, r0, c0, c0, false};
      Index size = 0;
      seen(r0, c0) = true;
      queue.emplace_back(r0, c0);
      while (!queue.empty()) {
        const auto [r, c] = queue.front();
        queue.pop_front();
        ++size;
        box.row_min = std::min(box.row_min, r);
        box.row_max = std::max(box.row_max, r);
        box.col_min = std::min(box.col_min, c);
        box.col_max = std::max(box.col_max, c);
        for (Index dr = -1; dr <= 1; ++dr)
          for (Index dc = -1; dc <= 1; ++dc) {
            if ((dr == 0 && dc == 0) || (!diagonal && dr != 0 && dc != 0)) continue;
            const Index nr = r + dr, nc = c + dc;
            if (nr < 0 || nr >= rows || nc < 0 || nc >= cols) continue;
            if (seen(nr, nc) || heatmap(nr, nc) < cut) continue;
            seen(nr, nc) = true;
            queue.emplace_back(nr, nc);
          }
      }
      // Strictly larger only: earlier seeds win ties.
      if (size > best_size) {
        best_size = size;
        best = box;
      }
    }
  }
  return best;
}

ExplanationReport explain(const Image& image, const OrthogonalBasis& basis, const PromptBank& bank,
                          const Backends& backends, const ExplainOptions& options) {
  if (options.samples_per_channel < 1) throw InvalidArgument("explain: samples_per_channel must be >= 1");
  backends.check_compatible();
  if (bank.channels() != basis.channels()) throw InvalidArgument("explain: bank and basis sizes differ");

  const auto& extractor = *backends.extractor;
  const FeatureMap feat = extract_features(extractor, image);
  const FusedHead head = fuse_head(extractor.head().weights, extractor.head().bias, basis);
  const Attribution attr = attribute(feat, basis, head, options.k);

  ExplanationReport report;
  report.predicted_class = attr.predicted_class;
  report.logits = attr.logits;
  report.k = static_cast<Index>(attr.top.size());
  report.k_clamped = attr.k_clamped;

  for (const auto& score : attr.top) {
    ChannelExplanation ch;
    ch.channel = score.channel;
    ch.score = score.score;
    const auto& entry = bank.at(score.channel);
    ch.anchor_label = entry.anchor_label;
    for (Index n = 0; n < options.samples_per_channel; ++n) {
      const auto noise = draw_noise(bank.dims, noise_seed(options.seed, kExplainStep, score.channel, n));
      const auto emb = sample_embeddings(entry, noise);
      Prototype proto;
      proto.seed = latent_seed(options.seed, kExplainStep, score.channel, n);
      proto.image = generate(*backends.generator, emb.pe, emb.ppe, proto.seed);
      const FeatureMap proto_feat = extract_features(extractor, proto.image);
      proto.heatmap = concept_heatmap(proto_feat, basis, score.channel, proto.image.shape);
      proto.bbox = extract_bbox(proto.heatmap.upsampled, options.threshold_frac, options.connectivity);
      ch.prototypes.push_back(std::move(proto));
    }
    if (options.input_heatmaps) {
      ch.input_heatmap = concept_heatmap(feat, basis, score.channel, image.shape);
      ch.input_bbox = extract_bbox(ch.input_heatmap->upsampled, options.threshold_frac, options.connectivity);
    }
    report.channels.push_back(std::move(ch));
  }
  return report;
}

}  // namespace prodg
