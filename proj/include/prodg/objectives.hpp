#pragma once

#include "prodg/promptbank.hpp"
#include "prodg/types.hpp"

#include <span>
#include <utility>
#include <vector>

namespace prodg {

struct LossConfig {
  double lambda_reg = 0.5;
  double lambda_div = 0.1;
  bool enable_u = true;
  bool enable_reg = true;
  bool enable_div = true;

  /// Throws InvalidConfiguration when every term is disabled or a weight is negative.
  void validate() const;

  // Effective multipliers in the combined objective (0 when disabled).
  double weight_u() const { return enable_u ? 1.0 : 0.0; }
  double weight_reg() const { return enable_reg ? lambda_reg : 0.0; }
  double weight_div() const { return enable_div ? lambda_div : 0.0; }
};

/// -mean(purities).
double loss_u(std::span<const double> purities);

/// Mean delta penalty over the batch channel list (repeats included).
double loss_reg(const PromptBank& bank, std::span<const Index> channels);

/// Mean cosine similarity over (v1, v2) pairs, eps-guarded norms.
double loss_div(std::span<const std::pair<Vector, Vector>> pairs);

/// Cosine with eps-guarded norms and its gradient with respect to both inputs.
struct CosineGrad {
  double value = 0.0;
  Vector grad_a;
  Vector grad_b;
};
CosineGrad cosine_with_grad(const Vector& a, const Vector& b);

/// L_U + lambda_reg L_reg + lambda_div L_div, disabled terms contribute 0.
/// Minimizing this maximizes purity.
double combined_prompt_loss(double l_u, double l_reg, double l_div, const LossConfig& config);

}  // namespace prodg
