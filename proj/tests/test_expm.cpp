#include "prodg/expm.hpp"

#include "test_support.hpp"

#include <doctest.h>
#include <unsupported/Eigen/MatrixFunctions>

#include <numbers>

using namespace prodg;
using prodg::testing::random_matrix;

TEST_CASE("expm of zero is identity") {
  for (Index n : {1, 3, 17}) CHECK((expm(Matrix::Zero(n, n)) - Matrix::Identity(n, n)).norm() == 0.0);
}

TEST_CASE("expm of a 2x2 skew matrix is a rotation") {
  for (double theta : {0.1, std::numbers::pi / 2, 2.5, -7.0, 40.0}) {
    Matrix x(2, 2);
    x << 0, theta, -theta, 0;
    Matrix rot(2, 2);
    rot << std::cos(theta), std::sin(theta), -std::sin(theta), std::cos(theta);
    CHECK((expm(x) - rot).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("expm agrees with Eigen's matrix exponential across norms") {
  std::mt19937_64 rng(11);
  // Scales chosen to exercise every Pade degree and the squaring path.
  for (double scale : {1e-4, 1e-2, 0.1, 0.5, 1.0, 3.0, 10.0}) {
    for (Index n : {2, 5, 12}) {
      const Matrix x = random_matrix(n, n, rng, scale);
      const Matrix ours = expm(x);
      const Matrix ref = x.exp();
      CHECK((ours - ref).norm() / ref.norm() < 1e-11);
    }
  }
}

TEST_CASE("expm of skew-symmetric input is orthogonal with unit determinant") {
  std::mt19937_64 rng(12);
  for (Index n : {2, 8, 32, 64}) {
    const Matrix a = random_matrix(n, n, rng, 1.0);
    const Matrix u = expm(a - a.transpose());
    CHECK((u * u.transpose() - Matrix::Identity(n, n)).norm() < 1e-10);
    CHECK(std::abs(u.determinant() - 1.0) < 1e-8);
  }
}

TEST_CASE("expm rejects bad input") {
  CHECK_THROWS_AS(expm(Matrix::Zero(2, 3)), InvalidArgument);
  Matrix bad = Matrix::Zero(2, 2);
  bad(0, 1) = std::nan("");
  CHECK_THROWS_AS(expm(bad), InvalidState);
}

TEST_CASE("Frechet derivative matches central differences") {
  std::mt19937_64 rng(13);
  for (double scale : {0.05, 0.7, 4.0}) {
    const Matrix x = random_matrix(5, 5, rng, scale);
    const Matrix e = random_matrix(5, 5, rng, 1.0);
    const double h = 1e-6;
    const Matrix fd = (Matrix((x + h * e).exp()) - Matrix((x - h * e).exp())) / (2 * h);
    const Matrix l = expm_frechet(x, e);
    CHECK((l - fd).norm() / fd.norm() < 1e-6);
  }
}

TEST_CASE("expm_frechet is linear in the direction and zero for zero direction") {
  std::mt19937_64 rng(14);
  const Matrix x = random_matrix(4, 4, rng, 0.5);
  const Matrix e = random_matrix(4, 4, rng, 1.0);
  CHECK(expm_frechet(x, Matrix::Zero(4, 4)).norm() == 0.0);
  CHECK((expm_frechet(x, 3.0 * e) - 3.0 * expm_frechet(x, e)).norm() < 1e-10);
}

TEST_CASE("expm_backward is the adjoint of the Frechet derivative") {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix x = random_matrix(6, 6, rng, 0.8);
    const Matrix e = random_matrix(6, 6, rng, 1.0);
    const Matrix g = random_matrix(6, 6, rng, 1.0);
    const double lhs = (g.array() * expm_frechet(x, e).array()).sum();
    const double rhs = (expm_backward(x, g).array() * e.array()).sum();
    CHECK(std::abs(lhs - rhs) < 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}
