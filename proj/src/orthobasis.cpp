#include "prodg/orthobasis.hpp"

#include "prodg/expm.hpp"

#include <algorithm>
#include <cmath>

namespace prodg {

FeatureMap::FeatureMap(Matrix v, Index h, Index w, std::string src)
    : values(std::move(v)), height(h), width(w), source(std::move(src)) {
  if (h <= 0 || w <= 0 || values.cols() != h * w)
    throw InvalidArgument("FeatureMap: spatial dims do not match value layout");
  if (!values.allFinite()) throw InvalidArgument("FeatureMap: non-finite activations");
}

Vector global_average_pool(const FeatureMap& feat) { return feat.values.rowwise().mean(); }

OrthogonalBasis::OrthogonalBasis(Index channels) {
  if (channels <= 0) throw InvalidArgument("make_basis: channel count must be positive");
  generator_ = Matrix::Zero(channels, channels);
  u_ = Matrix::Identity(channels, channels);
}

OrthogonalBasis::OrthogonalBasis(Matrix generator, Matrix cached_u)
    : generator_(std::move(generator)), u_(std::move(cached_u)) {
  if (generator_.rows() == 0 || generator_.rows() != generator_.cols() ||
      u_.rows() != generator_.rows() || u_.cols() != generator_.cols())
    throw InvalidArgument("OrthogonalBasis: A and U must be square and equally sized");
}

void OrthogonalBasis::set_generator(Matrix a) {
  if (a.rows() != channels() || a.cols() != channels())
    throw InvalidArgument("OrthogonalBasis: generator shape mismatch");
  generator_ = std::move(a);
  stale_ = true;
}

void OrthogonalBasis::recompute() {
  if (!generator_.allFinite()) throw InvalidState("recompute_U: non-finite generator A");
  u_ = expm(generator_ - generator_.transpose());
  stale_ = false;
}

const Matrix& OrthogonalBasis::u() const {
  if (stale_) throw InvalidState("OrthogonalBasis: U is stale, call recompute()");
  return u_;
}

double OrthogonalBasis::orthogonality_residual() const {
  const Matrix& m = u();
  return (m * m.transpose() - Matrix::Identity(m.rows(), m.cols())).norm();
}

Matrix OrthogonalBasis::generator_gradient(const Matrix& grad_u) const {
  const Matrix skew = generator_ - generator_.transpose();
  const Matrix grad_skew = expm_backward(skew, grad_u);
  return grad_skew - grad_skew.transpose();
}

OrthogonalBasis make_basis(Index channels) { return OrthogonalBasis(channels); }

FeatureMap apply_basis(const OrthogonalBasis& basis, const FeatureMap& feat) {
  if (feat.channels() != basis.channels())
    throw InvalidArgument("apply_basis: feature channels do not match basis");
  FeatureMap out;
  out.values = basis.u() * feat.values;
  out.height = feat.height;
  out.width = feat.width;
  out.source = feat.source;
  return out;
}

FusedHead fuse_head(const Matrix& weights, const Vector& bias, const OrthogonalBasis& basis) {
  if (weights.cols() != basis.channels())
    throw InvalidArgument("fuse_head: head has " + std::to_string(weights.cols()) +
                          " columns, basis has " + std::to_string(basis.channels()));
  if (bias.size() != weights.rows()) throw InvalidArgument("fuse_head: bias length mismatch");
  return FusedHead{weights * basis.u().transpose(), bias, weights, basis.u()};
}

Vector head_logits(const Matrix& weights, const Vector& bias, const FeatureMap& feat) {
  if (weights.cols() != feat.channels() || bias.size() != weights.rows())
    throw InvalidArgument("head_logits: shape mismatch");
  return weights * global_average_pool(feat) + bias;
}

Index argmax_location(const Matrix& z, Index c) {
  Index best = 0;
  double best_value = z(c, 0);
  for (Index k = 1; k < z.cols(); ++k) {
    if (z(c, k) > best_value) {
      best_value = z(c, k);
      best = k;
    }
  }
  return best;
}

double purity_transformed(const Matrix& z, Index c) {
  if (c < 0 || c >= z.rows()) throw InvalidArgument("purity: channel index out of range");
  const Index k = argmax_location(z, c);
  return z(c, k) / std::max(z.col(k).norm(), kPurityEpsilon);
}

double purity(const FeatureMap& feat, const OrthogonalBasis& basis, Index c) {
  if (c < 0 || c >= basis.channels()) throw InvalidArgument("purity: channel index out of range");
  return purity_transformed(apply_basis(basis, feat).values, c);
}

PurityGrad purity_with_grad(const Matrix& z, Index c) {
  if (c < 0 || c >= z.rows()) throw InvalidArgument("purity: channel index out of range");
  PurityGrad out;
  out.location = argmax_location(z, c);
  out.grad_z = Matrix::Zero(z.rows(), z.cols());
  const auto col = z.col(out.location);
  const double norm = col.norm();
  if (norm <= kPurityEpsilon) {
    // Guarded denominator is constant here.
    out.value = col(c) / kPurityEpsilon;
    out.grad_z(c, out.location) = 1.0 / kPurityEpsilon;
    return out;
  }
  out.value = col(c) / norm;
  // d(z_c / |z|) = e_c / |z| - z_c z / |z|^3
  out.grad_z.col(out.location) = -col * (col(c) / (norm * norm * norm));
  out.grad_z(c, out.location) += 1.0 / norm;
  return out;
}

}  // namespace prodg
