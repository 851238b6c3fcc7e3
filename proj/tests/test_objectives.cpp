#include "prodg/objectives.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>

using namespace prodg;
using prodg::testing::central_difference;
using prodg::testing::random_matrix;
using prodg::testing::relative_error;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

}  // namespace

TEST_CASE("loss_U is the negative mean purity") {
  const std::vector<double> ones(5, 1.0), zeros(3, 0.0), mixed{0.8, 0.6};
  CHECK(loss_u(ones) == -1.0);
  CHECK(loss_u(zeros) == 0.0);
  CHECK(loss_u(mixed) == doctest::Approx(-0.7));
  CHECK_THROWS_AS(loss_u(std::vector<double>{}), InvalidArgument);
}

TEST_CASE("loss_U is permutation invariant and linear in each purity") {
  std::mt19937_64 rng(51);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> p(8);
    for (auto& x : p) x = u(rng);
    const double base = loss_u(p);
    auto q = p;
    std::shuffle(q.begin(), q.end(), rng);
    CHECK(loss_u(q) == doctest::Approx(base).epsilon(1e-12));
    q = p;
    q[3] += 0.4;
    CHECK(loss_u(q) - base == doctest::Approx(-0.4 / 8).epsilon(1e-9));
  }
}

TEST_CASE("loss_reg averages delta penalties over batch channels") {
  BankInit init;
  init.rank = 1;
  auto bank = init_bank(2, {2, 2, 2}, init);
  const std::vector<Index> both{0, 1};
  CHECK(loss_reg(bank, both) == 0.0);
  bank.at(0).theta.lora_a.setConstant(1.0);
  bank.at(0).theta.lora_b.setConstant(2.0);
  CHECK(loss_reg(bank, both) == doctest::Approx(2.0));
  CHECK(loss_reg(bank, std::vector<Index>{0, 0, 1, 1}) == doctest::Approx(2.0));
  CHECK(loss_reg(bank, std::vector<Index>{0}) >= 0.0);
  CHECK_THROWS_AS(loss_reg(bank, std::vector<Index>{}), InvalidArgument);
}

TEST_CASE("loss_div is the mean pairwise cosine") {
  std::vector<std::pair<Vector, Vector>> same{{vec({1, 2}), vec({1, 2})}};
  CHECK(loss_div(same) == doctest::Approx(1.0));
  std::vector<std::pair<Vector, Vector>> ortho{{vec({1, 0}), vec({0, 1})}};
  CHECK(loss_div(ortho) == 0.0);
  std::vector<std::pair<Vector, Vector>> diag{{vec({1, 0}), vec({1, 1})}};
  CHECK(loss_div(diag) == doctest::Approx(1.0 / std::sqrt(2.0)));
  std::vector<std::pair<Vector, Vector>> both{same[0], ortho[0]};
  CHECK(loss_div(both) == doctest::Approx(0.5));
  std::vector<std::pair<Vector, Vector>> zero{{vec({0, 0}), vec({1, 1})}};
  CHECK(loss_div(zero) == 0.0);
  CHECK_THROWS_AS(loss_div(std::vector<std::pair<Vector, Vector>>{}), InvalidArgument);
}

TEST_CASE("loss_div is scale invariant and bounded") {
  std::mt19937_64 rng(52);
  std::uniform_real_distribution<double> s(0.01, 100.0);
  for (int t = 0; t < 100; ++t) {
    const Vector a = random_matrix(6, 1, rng), b = random_matrix(6, 1, rng);
    std::vector<std::pair<Vector, Vector>> p{{a, b}}, q{{s(rng) * a, s(rng) * b}};
    CHECK(loss_div(q) == doctest::Approx(loss_div(p)).epsilon(1e-10));
    CHECK(std::abs(loss_div(p)) <= 1.0 + 1e-12);
  }
}

TEST_CASE("cosine gradient matches finite differences") {
  std::mt19937_64 rng(53);
  for (int t = 0; t < 10; ++t) {
    Vector a = random_matrix(5, 1, rng), b = random_matrix(5, 1, rng);
    const auto g = cosine_with_grad(a, b);
    auto f = [&] { return cosine_with_grad(a, b).value; };
    for (Index i = 0; i < 5; ++i) {
      CHECK(relative_error(central_difference(a(i), f, 1e-6), g.grad_a(i)) < 1e-5);
      CHECK(relative_error(central_difference(b(i), f, 1e-6), g.grad_b(i)) < 1e-5);
    }
  }
}

TEST_CASE("combined loss weights and switches") {
  const LossConfig defaults;
  CHECK(defaults.lambda_reg == 0.5);
  CHECK(defaults.lambda_div == 0.1);
  CHECK(combined_prompt_loss(-0.7, 2.0, 0.5, defaults) == doctest::Approx(0.35));

  LossConfig only_u;
  only_u.enable_reg = only_u.enable_div = false;
  CHECK(combined_prompt_loss(-0.7, 2.0, 0.5, only_u) == -0.7);

  LossConfig zero;
  zero.lambda_reg = zero.lambda_div = 0.0;
  CHECK(combined_prompt_loss(-0.7, 2.0, 0.5, zero) == -0.7);

  LossConfig none = only_u;
  none.enable_u = false;
  CHECK_THROWS_AS(combined_prompt_loss(-0.7, 2.0, 0.5, none), InvalidConfiguration);
  LossConfig negative;
  negative.lambda_div = -0.1;
  CHECK_THROWS_AS(negative.validate(), InvalidConfiguration);
  CHECK_THROWS_AS(combined_prompt_loss(std::nan(""), 0, 0, defaults), InvalidArgument);
}

TEST_CASE("every non-empty switch subset validates") {
  int valid = 0;
  for (int mask = 0; mask < 8; ++mask) {
    LossConfig c;
    c.enable_u = mask & 1;
    c.enable_reg = mask & 2;
    c.enable_div = mask & 4;
    if (mask == 0) {
      CHECK_THROWS_AS(c.validate(), InvalidConfiguration);
    } else {
      CHECK_NOTHROW(c.validate());
      ++valid;
    }
  }
  CHECK(valid == 7);
}
