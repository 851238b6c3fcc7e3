#pragma once

#include "prodg/types.hpp"

#include <cmath>
#include <cstdint>

namespace prodg {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moment estimates for one parameter tensor.
struct AdamMoments {
  Matrix m;
  Matrix v;
  std::int64_t t = 0;

  static AdamMoments like(const Matrix& p) {
    return {Matrix::Zero(p.rows(), p.cols()), Matrix::Zero(p.rows(), p.cols()), 0};
  }
};

template <typename Derived>
void adam_step(Eigen::MatrixBase<Derived>& param, const Matrix& grad, AdamMoments& state, double lr,
               const AdamOptions& opt = {}) {
  if (state.m.rows() != param.rows() || state.m.cols() != param.cols()) {
    state.m = Matrix::Zero(param.rows(), param.cols());
    state.v = Matrix::Zero(param.rows(), param.cols());
    state.t = 0;
  }
  ++state.t;
  state.m = opt.beta1 * state.m + (1.0 - opt.beta1) * grad;
  state.v = opt.beta2 * state.v + (1.0 - opt.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.t));
  param -= (lr * (state.m / c1).array() / ((state.v / c2).array().sqrt() + opt.eps)).matrix();
}

}  // namespace prodg
