#include "prodg/expm.hpp"

#include <array>
#include <cmath>
#include <span>

namespace prodg {
namespace {

constexpr std::array<double, 4> kPade3 = {120.0, 60.0, 12.0, 1.0};
constexpr std::array<double, 6> kPade5 = {30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0};
constexpr std::array<double, 8> kPade7 = {17297280.0, 8648640.0, 1995840.0, 277200.0,
                                          25200.0,    1512.0,    56.0,      1.0};
constexpr std::array<double, 10> kPade9 = {17643225600.0, 8821612800.0, 2075673600.0, 302702400.0,
                                           30270240.0,    2162160.0,    110880.0,     3960.0,
                                           90.0,          1.0};
constexpr std::array<double, 14> kPade13 = {
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
    129060195264000.0,   10559470521600.0,    670442572800.0,     33522128640.0,
    1323241920.0,        40840800.0,          960960.0,           16380.0,
    182.0,               1.0};

// Largest 1-norms for which each degree meets unit roundoff in double.
constexpr double kTheta3 = 1.495585217958292e-2;
constexpr double kTheta5 = 2.539398330063230e-1;
constexpr double kTheta7 = 9.504178996162932e-1;
constexpr double kTheta9 = 2.097847961257068e0;
constexpr double kTheta13 = 5.371920351148152e0;

double one_norm(const Matrix& m) { return m.cwiseAbs().colwise().sum().maxCoeff(); }

// Solves (V - U) R = (V + U) for the Padé approximant R.
Matrix pade_ratio(const Matrix& u, const Matrix& v) {
  return (v - u).partialPivLu().solve(v + u);
}

// Low-degree approximants: U odd part, V even part, built from powers of x^2.
Matrix pade_low(const Matrix& x, std::span<const double> b) {
  const Index n = x.rows();
  const Matrix ident = Matrix::Identity(n, n);
  const Matrix x2 = x * x;
  Matrix power = ident;
  Matrix u_even = Matrix::Zero(n, n);
  Matrix v = Matrix::Zero(n, n);
  for (std::size_t k = 0; k + 1 < b.size(); k += 2) {
    u_even += b[k + 1] * power;
    v += b[k] * power;
    power = power * x2;
  }
  return pade_ratio(x * u_even, v);
}

Matrix pade13(const Matrix& x) {
  const auto& b = kPade13;
  const Index n = x.rows();
  const Matrix ident = Matrix::Identity(n, n);
  const Matrix x2 = x * x;
  const Matrix x4 = x2 * x2;
  const Matrix x6 = x4 * x2;
  const Matrix u_inner = x6 * (b[13] * x6 + b[11] * x4 + b[9] * x2);
  const Matrix u = x * (u_inner + b[7] * x6 + b[5] * x4 + b[3] * x2 + b[1] * ident);
  const Matrix v_inner = x6 * (b[12] * x6 + b[10] * x4 + b[8] * x2);
  const Matrix v = v_inner + b[6] * x6 + b[4] * x4 + b[2] * x2 + b[0] * ident;
  return pade_ratio(u, v);
}

}  // namespace

Matrix expm(const Matrix& x) {
  if (x.rows() != x.cols()) throw InvalidArgument("expm: matrix must be square");
  if (!x.allFinite()) throw InvalidState("expm: non-finite entries");
  if (x.rows() == 0) return x;

  const double norm = one_norm(x);
  if (norm <= kTheta3) return pade_low(x, kPade3);
  if (norm <= kTheta5) return pade_low(x, kPade5);
  if (norm <= kTheta7) return pade_low(x, kPade7);
  if (norm <= kTheta9) return pade_low(x, kPade9);

  int squarings = 0;
  if (norm > kTheta13) squarings = static_cast<int>(std::ceil(std::log2(norm / kTheta13)));
  Matrix r = pade13(x / std::ldexp(1.0, squarings));
  for (int i = 0; i < squarings; ++i) r = r * r;
  return r;
}

Matrix expm_frechet(const Matrix& x, const Matrix& e) {
  if (x.rows() != x.cols() || e.rows() != x.rows() || e.cols() != x.cols())
    throw InvalidArgument("expm_frechet: shape mismatch");
  const Index n = x.rows();
  // L is linear in E; normalizing keeps E from inflating the scaling count.
  const double scale = e.norm();
  if (scale == 0.0) return Matrix::Zero(n, n);
  Matrix block = Matrix::Zero(2 * n, 2 * n);
  block.topLeftCorner(n, n) = x;
  block.bottomRightCorner(n, n) = x;
  block.topRightCorner(n, n) = e / scale;
  return scale * expm(block).topRightCorner(n, n);
}

Matrix expm_backward(const Matrix& x, const Matrix& grad_u) {
  return expm_frechet(x.transpose(), grad_u);
}

}  // namespace prodg
