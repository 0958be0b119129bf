#include "deepafl/linalg.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace deepafl::linalg {

SymEig sym_eig(const Matrix& m) {
    require_dims(m.rows() == m.cols(), "sym_eig: input must be square");
    if (m.rows() == 0) throw DimensionError("sym_eig: empty input");

    const double scale = std::max(1.0, max_abs(m));
    const double asym = max_abs(Matrix(m - m.transpose()));
    if (asym > kSymmetryTol * scale)
        throw NumericError("sym_eig: input is not symmetric (max |m - m^T| = " +
                           std::to_string(asym) + ")");

    // G^T G style accumulations drift from symmetry by rounding; symmetrize
    // so the decomposition sees one consistent matrix.
    Matrix sym = 0.5 * (m + Matrix(m.transpose()));

    Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
    if (solver.info() != Eigen::Success)
        throw NumericError("sym_eig: eigendecomposition did not converge");

    const Index d = m.rows();
    SymEig out;
    out.vectors.resize(d, d);
    out.values.resize(d);
    // Eigen returns ascending order; flip to descending.
    for (Index i = 0; i < d; ++i) {
        double v = solver.eigenvalues()(d - 1 - i);
        if (v < 0.0 && v >= -kPsdClamp) v = 0.0;
        out.values(i) = v;
        out.vectors.col(i) = solver.eigenvectors().col(d - 1 - i);
    }
    require_finite(out.vectors, "sym_eig eigenvectors");
    return out;
}

Matrix ridge_solve_normal(const Matrix& g, const Matrix& h, double lambda) {
    require_dims(g.rows() == g.cols(), "ridge_solve: G must be square");
    require_dims(h.rows() == g.rows(), "ridge_solve: G/H row mismatch");
    if (lambda < 0.0) throw ValidationError("ridge_solve: lambda must be >= 0");

    if (lambda == 0.0) {
        Eigen::SelfAdjointEigenSolver<Matrix> es(Matrix(0.5 * (g + Matrix(g.transpose()))),
                                                 Eigen::EigenvaluesOnly);
        if (es.info() != Eigen::Success)
            throw NumericError("ridge_solve: rank check failed to converge");
        const double largest = es.eigenvalues().maxCoeff();
        const double smallest = es.eigenvalues().minCoeff();
        if (largest <= 0.0 || smallest <= kRankRatio * largest)
            throw SingularityError("ridge_solve: lambda == 0 with rank-deficient Phi^T Phi");
    }

    Matrix lhs = g;
    lhs.diagonal().array() += lambda;
    Eigen::LLT<Matrix> llt(lhs);
    if (llt.info() != Eigen::Success)
        throw SingularityError("ridge_solve: normal matrix is not positive definite");

    Matrix w = llt.solve(h);
    require_finite(w, "ridge_solve solution");

    const double resid = max_abs(Matrix(lhs * w - h));
    if (resid > kResidualTol * (1.0 + max_abs(h)))
        throw NumericError("ridge_solve: normal-equation residual too large (" +
                           std::to_string(resid) + ")");
    return w;
}

Matrix ridge_solve(const Matrix& phi, const Matrix& y, double lambda) {
    require_dims(phi.rows() == y.rows(), "ridge_solve: Phi/Y row mismatch");
    Matrix g = phi.transpose() * phi;
    Matrix h = phi.transpose() * y;
    return ridge_solve_normal(g, h, lambda);
}

Matrix sandwich_assemble(const Matrix& v, const Vector& lam_f,
                         const Matrix& u, const Vector& lam_w,
                         const Matrix& numerator, double gamma) {
    require_dims(v.rows() == numerator.rows() && u.rows() == numerator.cols(),
                 "sandwich_assemble: factor/numerator dims mismatch");
    Matrix core = v.transpose() * numerator * u;
    for (Index i = 0; i < core.rows(); ++i) {
        for (Index j = 0; j < core.cols(); ++j) {
            const double denom = gamma + lam_f(i) * lam_w(j);
            core(i, j) = denom <= kDenomZero ? 0.0 : core(i, j) / denom;
        }
    }
    return v * core * u.transpose();
}

double sandwich_residual(const Matrix& pi, const Matrix& upsilon, const Matrix& w,
                         double gamma, const Matrix& omega) {
    Matrix numerator = upsilon * w.transpose();
    Matrix wwt = w * w.transpose();
    return max_abs(Matrix(pi * omega * wwt + gamma * omega - numerator));
}

Matrix sandwich_solve_normal(const Matrix& pi, const Matrix& upsilon,
                             const Matrix& w, double gamma) {
    require_dims(pi.rows() == pi.cols(), "sandwich_solve: Pi must be square");
    require_dims(upsilon.rows() == pi.rows(), "sandwich_solve: Pi/Upsilon row mismatch");
    require_dims(w.cols() == upsilon.cols(), "sandwich_solve: W/Upsilon column mismatch");
    if (gamma < 0.0) throw ValidationError("sandwich_solve: gamma must be >= 0");

    SymEig ef = sym_eig(pi);
    SymEig ew = sym_eig(Matrix(w * w.transpose()));

    Matrix numerator = upsilon * w.transpose();
    Matrix omega = sandwich_assemble(ef.vectors, ef.values, ew.vectors, ew.values,
                                     numerator, gamma);
    require_finite(omega, "sandwich_solve solution");

    const double resid = sandwich_residual(pi, upsilon, w, gamma, omega);
    if (resid > kResidualTol * (1.0 + max_abs(numerator)))
        throw NumericError("sandwich_solve: stationarity residual too large (" +
                           std::to_string(resid) + ")");
    return omega;
}

Matrix sandwich_solve(const Matrix& f, const Matrix& r, const Matrix& w, double gamma) {
    require_dims(f.rows() == r.rows(), "sandwich_solve: F/R row mismatch");
    require_dims(w.cols() == r.cols(), "sandwich_solve: W/R column mismatch");
    Matrix pi = f.transpose() * f;
    Matrix upsilon = f.transpose() * r;
    return sandwich_solve_normal(pi, upsilon, w, gamma);
}

} // namespace deepafl::linalg
