#pragma once

#include "prodg/types.hpp"

namespace prodg {

/// Matrix exponential by scaling and squaring with a diagonal Padé
/// approximant (degree 3, 5, 7, 9 or 13 chosen from the 1-norm).
/// Throws InvalidArgument for non-square input and InvalidState for
/// non-finite entries.
Matrix expm(const Matrix& x);

/// Fréchet derivative L(X, E) of the exponential at X in direction E,
/// read off the upper-right block of exp([[X, E], [0, X]]).
Matrix expm_frechet(const Matrix& x, const Matrix& e);

/// Pullback through U = exp(X): given G = dL/dU returns dL/dX.
/// The adjoint of L(X, .) under the Frobenius inner product is L(X^T, .).
Matrix expm_backward(const Matrix& x, const Matrix& grad_u);

}  // namespace prodg
