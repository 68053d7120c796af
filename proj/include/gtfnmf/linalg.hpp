// Dense linear-algebra primitives: matrix exponential, Lyapunov solve,
// symmetry/PSD maintenance, jittered factorizations.
#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "gtfnmf/common.hpp"

namespace gtfnmf {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline MatrixXd symmetrize(const MatrixXd& m) {
    return 0.5 * (m + m.transpose());
}

// Matrix exponential by scaling-and-squaring with a diagonal Pade(6)
// approximant (Moler & Van Loan, method 3). Accurate to round-off for the
// small (<= ~128) matrices used here.
inline MatrixXd expm(const MatrixXd& a) {
    const Eigen::Index n = a.rows();
    double norm = a.cwiseAbs().rowwise().sum().maxCoeff(); // inf-norm
    int squarings = 0;
    if (norm > 0.5) {
        squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
    }
    MatrixXd x = a / std::ldexp(1.0, squarings);

    const int q = 6;
    MatrixXd pow = x;
    MatrixXd num = MatrixXd::Identity(n, n);
    MatrixXd den = MatrixXd::Identity(n, n);
    double c = 0.5;
    num += c * pow;
    den -= c * pow;
    for (int k = 2; k <= q; ++k) {
        c *= static_cast<double>(q - k + 1) / (k * (2 * q - k + 1));
        pow = x * pow;
        num += c * pow;
        den += (k % 2 == 0 ? c : -c) * pow;
    }
    MatrixXd e = den.partialPivLu().solve(num);
    for (int k = 0; k < squarings; ++k) e = e * e;
    return e;
}

// Clip negative eigenvalues to zero. Used to absorb round-off in process
// noise covariances before Cholesky-style factorizations.
inline MatrixXd psd_clip(const MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(m));
    VectorXd lam = es.eigenvalues().cwiseMax(0.0);
    return symmetrize(es.eigenvectors() * lam.asDiagonal() *
                      es.eigenvectors().transpose());
}

// Square root factor B with m = B * B^T, tolerating semidefinite input.
inline MatrixXd psd_sqrt(const MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(m));
    VectorXd lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * lam.asDiagonal();
}

// Solve F*P + P*F^T + C = 0 for symmetric P via Kronecker vectorization.
// Block dimensions in this library are tiny, so the O(n^6) solve is fine.
// Throws NumericalError if F is not Hurwitz.
inline MatrixXd solve_lyapunov(const MatrixXd& f, const MatrixXd& c) {
    const Eigen::Index n = f.rows();
    Eigen::EigenSolver<MatrixXd> es(f);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (es.eigenvalues()(i).real() >= 0.0) {
            throw NumericalError(
                "solve_lyapunov: feedback matrix is not Hurwitz");
        }
    }
    MatrixXd k = MatrixXd::Zero(n * n, n * n);
    // vec(F P) = (I (x) F) vec(P); vec(P F^T) = (F (x) I) vec(P)
    for (Eigen::Index i = 0; i < n; ++i) {
        k.block(i * n, i * n, n, n) += f;
        for (Eigen::Index j = 0; j < n; ++j) {
            for (Eigen::Index r = 0; r < n; ++r) {
                k(j * n + r, i * n + r) += f(j, i);
            }
        }
    }
    VectorXd rhs = -Eigen::Map<const VectorXd>(c.data(), n * n);
    VectorXd vec = k.partialPivLu().solve(rhs);
    return symmetrize(Eigen::Map<MatrixXd>(vec.data(), n, n));
}

// LDLT solve of s * x = b with one diagonal-jitter retry
// (1e-10 * trace / dim), then failure.
inline MatrixXd jittered_solve(const MatrixXd& s, const MatrixXd& b) {
    Eigen::LDLT<MatrixXd> ldlt(symmetrize(s));
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
        return ldlt.solve(b);
    }
    const double jitter = 1e-10 * s.trace() / static_cast<double>(s.rows());
    MatrixXd sj =
        symmetrize(s) +
        std::max(jitter, 1e-300) * MatrixXd::Identity(s.rows(), s.cols());
    ldlt.compute(sj);
    if (ldlt.info() != Eigen::Success) {
        throw NumericalError("jittered_solve: factorization failed");
    }
    return ldlt.solve(b);
}

} // namespace gtfnmf
