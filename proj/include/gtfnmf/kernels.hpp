// State-space (LTI SDE) construction of the model's GP priors.
//
// Pure Matern kernels drive the amplitude modulators; cosine-modulated
// Matern kernels ("subbands") form the quasi-periodic carriers. Each prior
// maps to a small continuous-time block dx = F x dt + L dw with stationary
// covariance Pinf solving F Pinf + Pinf F^T + L Qc L^T = 0, then the full
// model is a block-diagonal stack discretized per time step.
//
// Rates (1/lengthscale) and cosine frequencies are expressed per unit of
// the discretization step; the CLI works in sample units (rad/sample,
// lengthscales in samples, dt = 1).
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "gtfnmf/common.hpp"
#include "gtfnmf/linalg.hpp"

namespace gtfnmf {

enum class MaternFamily { Matern12, Matern32, Matern52 };

constexpr double kNoCosine = -1.0;

// Symbolic description of one GP prior. cosine_freq >= 0 selects the
// subband (cosine x Matern) form; kNoCosine a plain Matern.
struct KernelSpec {
    MaternFamily family = MaternFamily::Matern12;
    double lengthscale = 1.0;      // > 0, in units of the step
    double variance = 1.0;         // > 0
    double cosine_freq = kNoCosine; // rad/step in [0, pi], or kNoCosine

    bool has_cosine() const { return cosine_freq >= 0.0; }

    void validate() const {
        if (!(lengthscale > 0.0))
            throw ParameterError("KernelSpec: lengthscale must be > 0");
        if (!(variance > 0.0))
            throw ParameterError("KernelSpec: variance must be > 0");
        if (has_cosine() && !(cosine_freq <= M_PI))
            throw ParameterError(
                "KernelSpec: cosine_freq must lie in [0, pi]");
    }
};

// Continuous-time blocks of one prior (or a stacked model).
struct LtiSde {
    MatrixXd F;    // feedback
    MatrixXd L;    // noise effect
    MatrixXd Qc;   // white-noise spectral density
    MatrixXd Pinf; // stationary state covariance
    Eigen::RowVectorXd h; // measurement row selecting the scalar process

    Eigen::Index dim() const { return F.rows(); }
};

// Index ranges of each latent inside the stacked state, plus the state
// coordinate its measurement row selects.
struct LatentSlot {
    Eigen::Index offset = 0;
    Eigen::Index dim = 0;
    Eigen::Index measured = 0; // absolute state coordinate
};

struct StateLayout {
    std::vector<LatentSlot> subbands;   // z_1..z_D
    std::vector<LatentSlot> modulators; // g_1..g_N
    Eigen::Index state_dim = 0;

    Eigen::Index num_subbands() const {
        return static_cast<Eigen::Index>(subbands.size());
    }
    Eigen::Index num_modulators() const {
        return static_cast<Eigen::Index>(modulators.size());
    }
    // One latent per row, subbands first: the H matrix of the smoothing
    // algorithms.
    MatrixXd selection_matrix() const {
        MatrixXd h = MatrixXd::Zero(num_subbands() + num_modulators(),
                                    state_dim);
        Eigen::Index r = 0;
        for (const auto& s : subbands) h(r++, s.measured) = 1.0;
        for (const auto& s : modulators) h(r++, s.measured) = 1.0;
        return h;
    }
};

// Discretized model: x_k ~ N(A x_{k-1}, Q), x_0 ~ N(0, P0 = Pinf).
struct DiscreteModel {
    MatrixXd A;
    MatrixXd Q;
    MatrixXd Pinf;
    StateLayout layout;
    double dt = 1.0;

    Eigen::Index dim() const { return A.rows(); }
};

// SDE form of a pure Matern kernel; state dim 1/2/3 for nu = 1/2, 3/2, 5/2.
// Companion-form F with rate lambda = sqrt(2 nu)/lengthscale, h = e_1.
inline LtiSde matern_sde(const KernelSpec& spec) {
    spec.validate();
    if (spec.has_cosine())
        throw ParameterError("matern_sde: spec must not carry a cosine factor");
    const double ell = spec.lengthscale;
    const double s2 = spec.variance;
    LtiSde sde;
    switch (spec.family) {
        case MaternFamily::Matern12: {
            const double lam = 1.0 / ell;
            sde.F = MatrixXd::Constant(1, 1, -lam);
            sde.L = MatrixXd::Constant(1, 1, 1.0);
            sde.Qc = MatrixXd::Constant(1, 1, 2.0 * s2 * lam);
            break;
        }
        case MaternFamily::Matern32: {
            const double lam = std::sqrt(3.0) / ell;
            sde.F = MatrixXd::Zero(2, 2);
            sde.F(0, 1) = 1.0;
            sde.F(1, 0) = -lam * lam;
            sde.F(1, 1) = -2.0 * lam;
            sde.L = MatrixXd::Zero(2, 1);
            sde.L(1, 0) = 1.0;
            sde.Qc = MatrixXd::Constant(1, 1, 4.0 * s2 * lam * lam * lam);
            break;
        }
        case MaternFamily::Matern52: {
            const double lam = std::sqrt(5.0) / ell;
            sde.F = MatrixXd::Zero(3, 3);
            sde.F(0, 1) = 1.0;
            sde.F(1, 2) = 1.0;
            sde.F(2, 0) = -lam * lam * lam;
            sde.F(2, 1) = -3.0 * lam * lam;
            sde.F(2, 2) = -3.0 * lam;
            sde.L = MatrixXd::Zero(3, 1);
            sde.L(2, 0) = 1.0;
            sde.Qc = MatrixXd::Constant(
                1, 1, s2 * 16.0 / 3.0 * std::pow(lam, 5));
            break;
        }
    }
    sde.Pinf = solve_lyapunov(sde.F, sde.L * sde.Qc * sde.L.transpose());
    sde.h = Eigen::RowVectorXd::Zero(sde.dim());
    sde.h(0) = 1.0;
    return sde;
}

// Undamped oscillator block: F = [[0,-w],[w,0]], unit stationary variance.
// F has purely imaginary eigenvalues, so Pinf = I is set in closed form
// rather than through the Lyapunov solver.
inline LtiSde cosine_sde(double omega) {
    if (!(omega >= 0.0 && omega <= M_PI))
        throw ParameterError("cosine_sde: omega must lie in [0, pi]");
    LtiSde sde;
    sde.F = MatrixXd::Zero(2, 2);
    sde.F(0, 1) = -omega;
    sde.F(1, 0) = omega;
    sde.L = MatrixXd::Identity(2, 2);
    sde.Qc = MatrixXd::Zero(2, 2);
    sde.Pinf = MatrixXd::Identity(2, 2);
    sde.h = Eigen::RowVectorXd::Zero(2);
    sde.h(0) = 1.0;
    return sde;
}

// Subband block realizing sigma^2 cos(w tau) kappa_mat(tau):
// F = F_cos (+) F_mat (Kronecker sum), L = I_2 (x) L_mat,
// Qc = I_2 (x) Qc_mat, Pinf = I_2 (x) Pinf_mat.
inline LtiSde subband_sde(double omega, const LtiSde& matern) {
    const LtiSde cos = cosine_sde(omega);
    const Eigen::Index m = matern.dim();
    LtiSde sde;
    sde.F = MatrixXd::Zero(2 * m, 2 * m);
    for (Eigen::Index i = 0; i < 2; ++i) {
        for (Eigen::Index j = 0; j < 2; ++j) {
            if (cos.F(i, j) != 0.0)
                sde.F.block(i * m, j * m, m, m) =
                    cos.F(i, j) * MatrixXd::Identity(m, m);
        }
        sde.F.block(i * m, i * m, m, m) += matern.F;
    }
    const Eigen::Index lc = matern.L.cols();
    sde.L = MatrixXd::Zero(2 * m, 2 * lc);
    sde.L.block(0, 0, m, lc) = matern.L;
    sde.L.block(m, lc, m, lc) = matern.L;
    sde.Qc = MatrixXd::Zero(2 * lc, 2 * lc);
    sde.Qc.block(0, 0, lc, lc) = matern.Qc;
    sde.Qc.block(lc, lc, lc, lc) = matern.Qc;
    sde.Pinf = MatrixXd::Zero(2 * m, 2 * m);
    sde.Pinf.block(0, 0, m, m) = matern.Pinf;
    sde.Pinf.block(m, m, m, m) = matern.Pinf;
    sde.h = Eigen::RowVectorXd::Zero(2 * m);
    sde.h(0) = 1.0; // cosine-phase x Matern product coordinate
    return sde;
}

// A = exp(F dt); Q = Pinf - A Pinf A^T, symmetrized and eigenvalue-clipped
// at zero so downstream factorizations stay PSD.
inline std::pair<MatrixXd, MatrixXd> discretize(const MatrixXd& f,
                                                const MatrixXd& pinf,
                                                double dt) {
    if (!(dt > 0.0)) throw ParameterError("discretize: dt must be > 0");
    MatrixXd a = expm(f * dt);
    MatrixXd q = psd_clip(pinf - a * pinf * a.transpose());
    return {a, q};
}

// Block-diagonal stack of D subbands followed by N modulators, discretized
// blockwise. Cross-block entries of A, Q, Pinf are exactly zero.
inline DiscreteModel stack_model(const std::vector<LtiSde>& subbands,
                                 const std::vector<LtiSde>& modulators,
                                 double dt) {
    if (subbands.empty() || modulators.empty())
        throw ConfigError("stack_model: need at least one subband and one "
                          "modulator");
    if (!(dt > 0.0)) throw ParameterError("stack_model: dt must be > 0");

    Eigen::Index m = 0;
    for (const auto& s : subbands) m += s.dim();
    for (const auto& s : modulators) m += s.dim();

    DiscreteModel model;
    model.dt = dt;
    model.A = MatrixXd::Zero(m, m);
    model.Q = MatrixXd::Zero(m, m);
    model.Pinf = MatrixXd::Zero(m, m);
    model.layout.state_dim = m;

    Eigen::Index off = 0;
    auto place = [&](const LtiSde& sde) {
        const Eigen::Index d = sde.dim();
        auto [a, q] = discretize(sde.F, sde.Pinf, dt);
        model.A.block(off, off, d, d) = a;
        model.Q.block(off, off, d, d) = q;
        model.Pinf.block(off, off, d, d) = sde.Pinf;
        Eigen::Index measured = off;
        for (Eigen::Index i = 0; i < d; ++i) {
            if (sde.h(i) != 0.0) {
                measured = off + i;
                break;
            }
        }
        LatentSlot slot{off, d, measured};
        off += d;
        return slot;
    };
    for (const auto& s : subbands) model.layout.subbands.push_back(place(s));
    for (const auto& s : modulators)
        model.layout.modulators.push_back(place(s));
    return model;
}

// Stationary covariance of the represented kernel at lag tau >= 0:
// kappa(tau) = h exp(F tau) Pinf h^T. Test oracle and spectral utility.
inline double kernel_covariance(const LtiSde& sde, double tau) {
    if (tau < 0.0) throw ParameterError("kernel_covariance: tau must be >= 0");
    return sde.h * expm(sde.F * tau) * sde.Pinf * sde.h.transpose();
}

// Convenience: full subband or modulator block from one spec.
inline LtiSde kernel_sde(const KernelSpec& spec) {
    if (!spec.has_cosine()) return matern_sde(spec);
    KernelSpec base = spec;
    base.cosine_freq = kNoCosine;
    return subband_sde(spec.cosine_freq, matern_sde(base));
}

} // namespace gtfnmf
