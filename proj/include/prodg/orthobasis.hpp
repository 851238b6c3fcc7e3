#pragma once

#include "prodg/types.hpp"

#include <string>

namespace prodg {

/// Backbone activations of shape C x H x W, stored as a C x (H*W) matrix
/// with row-major spatial indexing (column = h * W + w).
struct FeatureMap {
  Matrix values;
  Index height = 0;
  Index width = 0;
  std::string source;

  FeatureMap() = default;
  FeatureMap(Matrix v, Index h, Index w, std::string src = {});

  Index channels() const { return values.rows(); }
  Index locations() const { return values.cols(); }
  double at(Index c, Index h, Index w) const { return values(c, h * width + w); }
};

/// Channel-wise spatial mean.
Vector global_average_pool(const FeatureMap& feat);

/// Orthogonal change of basis U = exp(A - A^T) with a lazily refreshed cache.
class OrthogonalBasis {
 public:
  explicit OrthogonalBasis(Index channels);
  /// Adopts explicit generator and cached U (checkpoint restore). U is taken
  /// as-is so a damaged checkpoint can be detected by verification.
  OrthogonalBasis(Matrix generator, Matrix cached_u);

  Index channels() const { return generator_.rows(); }
  const Matrix& generator() const { return generator_; }

  /// Replaces A and marks the cache stale.
  void set_generator(Matrix a);
  bool is_stale() const { return stale_; }

  /// Recomputes U from A. Throws InvalidState on non-finite A.
  void recompute();

  /// Cached U; throws InvalidState when stale.
  const Matrix& u() const;

  /// ||U U^T - I||_F.
  double orthogonality_residual() const;

  /// Pulls dL/dU back to dL/dA through U = exp(A - A^T).
  Matrix generator_gradient(const Matrix& grad_u) const;

 private:
  Matrix generator_;
  Matrix u_;
  bool stale_ = false;
};

OrthogonalBasis make_basis(Index channels);

/// Z = U * feat along the channel axis.
FeatureMap apply_basis(const OrthogonalBasis& basis, const FeatureMap& feat);

/// Linear head W (classes x C) with bias b.
struct LinearHead {
  Matrix weights;
  Vector bias;
};

struct FusedHead {
  Matrix weights;       // W * U^T
  Vector bias;
  Matrix original_weights;
  Matrix basis_u;       // U used for the fusion
};

FusedHead fuse_head(const Matrix& weights, const Vector& bias, const OrthogonalBasis& basis);

/// W * GAP(feat) + b.
Vector head_logits(const Matrix& weights, const Vector& bias, const FeatureMap& feat);

inline constexpr double kPurityEpsilon = 1e-8;

/// Location of the maximum of row c, first occurrence in row-major order.
Index argmax_location(const Matrix& z, Index c);

/// Purity of channel c: Z[c, h*, w*] / max(||Z[:, h*, w*]||, eps) where
/// (h*, w*) maximizes the transformed channel.
double purity(const FeatureMap& feat, const OrthogonalBasis& basis, Index c);

/// Purity evaluated on an already-transformed map Z.
double purity_transformed(const Matrix& z, Index c);

/// Gradients of purity for the frozen argmax location. grad_z has the
/// shape of Z and is nonzero only at the argmax column.
struct PurityGrad {
  double value = 0.0;
  Index location = 0;
  Matrix grad_z;
};

PurityGrad purity_with_grad(const Matrix& z, Index c);

}  // namespace prodg
