#pragma once

#include "deepafl/matrix.hpp"

namespace deepafl::linalg {

// Eigenvalues below this magnitude coming out of a PSD decomposition are
// treated as exact zeros; sandwich denominators at or below kDenomZero get the
// minimum-norm (zero) fill.
inline constexpr double kPsdClamp = 1e-10;
inline constexpr double kDenomZero = 1e-12;
inline constexpr double kSymmetryTol = 1e-9;
inline constexpr double kResidualTol = 1e-8;
inline constexpr double kRankRatio = 1e-10;

/// Symmetric eigendecomposition, eigenvalues sorted descending.
struct SymEig {
    Matrix vectors; // orthonormal columns, d x d
    Vector values;  // length d, descending
};

/// Decompose a symmetric matrix. The input must be square and symmetric to
/// within kSymmetryTol (relative); it is symmetrized as (m + m^T)/2 before the
/// decomposition. Eigenvalues in [-kPsdClamp, 0) are clamped to 0 so PSD
/// inputs never report spurious negative spectrum.
SymEig sym_eig(const Matrix& m);

/// Ridge least squares: W = argmin |Y - Phi W|_F^2 + lambda |W|_F^2,
/// solved as the SPD system (Phi^T Phi + lambda I) W = Phi^T Y.
/// lambda == 0 requires Phi^T Phi numerically full rank
/// (smallest eigenvalue > kRankRatio * largest).
Matrix ridge_solve(const Matrix& phi, const Matrix& y, double lambda);

/// Same solve from precomputed normal-equation terms G = Phi^T Phi and
/// H = Phi^T Y (the server-side entry point: G and H arrive aggregated).
Matrix ridge_solve_normal(const Matrix& g, const Matrix& h, double lambda);

/// Sandwiched least squares:
/// Omega = argmin |R - F Omega W|_F^2 + gamma |Omega|_F^2
///       = V [ (V^T F^T R W^T U) ./ (gamma + lamF_i * lamW_j) ] U^T
/// with F^T F = V diag(lamF) V^T and W W^T = U diag(lamW) U^T.
/// Entries whose denominator is <= kDenomZero are set to 0 (minimum-norm
/// convention), which also makes the result independent of eigenbasis choice.
Matrix sandwich_solve(const Matrix& f, const Matrix& r, const Matrix& w, double gamma);

/// Sandwich solve from precomputed correlation terms Pi = F^T F and
/// Upsilon = F^T R (aggregated server-side inputs).
Matrix sandwich_solve_normal(const Matrix& pi, const Matrix& upsilon,
                             const Matrix& w, double gamma);

/// Assemble Omega from explicit spectral factors. Exposed so eigenbasis
/// invariance (column sign flips of V/U must not change the result) can be
/// exercised directly.
Matrix sandwich_assemble(const Matrix& v, const Vector& lam_f,
                         const Matrix& u, const Vector& lam_w,
                         const Matrix& numerator, double gamma);

/// Max-abs of the stationarity residual F^T F Omega W W^T + gamma Omega - F^T R W^T,
/// stated on the normal-equation terms.
double sandwich_residual(const Matrix& pi, const Matrix& upsilon, const Matrix& w,
                         double gamma, const Matrix& omega);

} // namespace deepafl::linalg
