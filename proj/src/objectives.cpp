#include "prodg/objectives.hpp"

#include "prodg/orthobasis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace prodg {

void LossConfig::validate() const {
  if (!enable_u && !enable_reg && !enable_div)
    throw InvalidConfiguration("loss: all terms disabled, objective is empty");
  if (!(lambda_reg >= 0.0) || !(lambda_div >= 0.0))
    throw InvalidConfiguration("loss: lambda_reg and lambda_div must be nonnegative");
}

double loss_u(std::span<const double> purities) {
  if (purities.empty()) throw InvalidArgument("loss_U: empty batch");
  return -std::accumulate(purities.begin(), purities.end(), 0.0) /
         static_cast<double>(purities.size());
}

double loss_reg(const PromptBank& bank, std::span<const Index> channels) {
  if (channels.empty()) throw InvalidArgument("loss_reg: empty batch");
  double total = 0.0;
  for (Index c : channels) total += delta_penalty(bank.at(c));
  return total / static_cast<double>(channels.size());
}

CosineGrad cosine_with_grad(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw InvalidArgument("cosine: length mismatch");
  const double na = std::max(a.norm(), kPurityEpsilon);
  const double nb = std::max(b.norm(), kPurityEpsilon);
  CosineGrad g;
  g.value = a.dot(b) / (na * nb);
  // Inside the guard the norm is constant, so only the dot term contributes.
  g.grad_a = b / (na * nb);
  if (a.norm() > kPurityEpsilon) g.grad_a -= (g.value / (na * na)) * a;
  g.grad_b = a / (na * nb);
  if (b.norm() > kPurityEpsilon) g.grad_b -= (g.value / (nb * nb)) * b;
  return g;
}

double loss_div(std::span<const std::pair<Vector, Vector>> pairs) {
  if (pairs.empty()) throw InvalidArgument("loss_div: no pairs");
  double total = 0.0;
  for (const auto& [a, b] : pairs) total += cosine_with_grad(a, b).value;
  return total / static_cast<double>(pairs.size());
}

double combined_prompt_loss(double l_u, double l_reg, double l_div, const LossConfig& config) {
  config.validate();
  if (!std::isfinite(l_u) || !std::isfinite(l_reg) || !std::isfinite(l_div))
    throw InvalidArgument("combined loss: non-finite term");
  return config.weight_u() * l_u + config.weight_reg() * l_reg + config.weight_div() * l_div;
}

}  // namespace prodg
