// Linear-Gaussian filtering/smoothing primitives shared by the EP, EKF and
// infinite-horizon backends.
#pragma once

#include <Eigen/Dense>
#include <vector>

#include "gtfnmf/common.hpp"
#include "gtfnmf/kernels.hpp"
#include "gtfnmf/linalg.hpp"

namespace gtfnmf {

struct GaussianState {
    VectorXd m;
    MatrixXd P;
};

// m <- A m; P <- A P A^T + Q, symmetrized.
inline GaussianState kf_predict(const GaussianState& state, const MatrixXd& a,
                                const MatrixXd& q) {
    return {a * state.m, symmetrize(a * state.P * a.transpose() + q)};
}

// Joint Gaussian conditioning on the pseudo-observations implied by site
// parameters (nu, tau): per included row i, an observation of H_i x with
// mean nu_i / tau_i and variance 1 / tau_i. Rows with tau = 0 carry no
// information and are skipped; tau < 0 is rejected. One solve of size S
// rather than S rank-1 updates.
inline GaussianState kf_update_sites(const GaussianState& state,
                                     const MatrixXd& h, const VectorXd& nu,
                                     const VectorXd& tau) {
    const Eigen::Index s_all = h.rows();
    if (nu.size() != s_all || tau.size() != s_all)
        throw ConfigError("kf_update_sites: site vectors must match H rows");
    std::vector<Eigen::Index> rows;
    rows.reserve(s_all);
    for (Eigen::Index i = 0; i < s_all; ++i) {
        if (tau(i) < 0.0)
            throw NumericalError("kf_update_sites: indefinite site (tau < 0)");
        if (tau(i) > 0.0) rows.push_back(i);
    }
    if (rows.empty()) return state;

    const Eigen::Index s = static_cast<Eigen::Index>(rows.size());
    MatrixXd hs(s, h.cols());
    VectorXd resid(s); // pseudo-innovation nu/tau - H m
    MatrixXd r = MatrixXd::Zero(s, s);
    for (Eigen::Index i = 0; i < s; ++i) {
        hs.row(i) = h.row(rows[i]);
        resid(i) = nu(rows[i]) / tau(rows[i]) - hs.row(i).dot(state.m);
        r(i, i) = 1.0 / tau(rows[i]);
    }
    const MatrixXd u = state.P * hs.transpose();          // M x S
    const MatrixXd sk = symmetrize(hs * u) + r;           // innovation cov
    const MatrixXd k = jittered_solve(sk, u.transpose()).transpose();
    GaussianState out;
    out.m = state.m + k * resid;
    out.P = symmetrize(state.P - k * sk * k.transpose());
    return out;
}

// One Rauch-Tung-Striebel backward step.
inline GaussianState rts_step(const GaussianState& filtered,
                              const GaussianState& predicted,
                              const GaussianState& smoothed_next,
                              const MatrixXd& a) {
    const MatrixXd g =
        jittered_solve(predicted.P, a * filtered.P).transpose(); // P A^T Ppred^-1
    GaussianState out;
    out.m = filtered.m + g * (smoothed_next.m - predicted.m);
    out.P = symmetrize(filtered.P +
                       g * (smoothed_next.P - predicted.P) * g.transpose());
    return out;
}

// Marginal of the scalar h x: (h m, h P h^T), variance clipped at zero.
inline std::pair<double, double> latent_marginal(const GaussianState& state,
                                                 const Eigen::RowVectorXd& h) {
    const double mu = h.dot(state.m);
    const double var = h * state.P * h.transpose();
    return {mu, std::max(var, 0.0)};
}

// Result of a plain linear-Gaussian smoothing pass with a single scalar
// observation row per step.
struct LinearSmootherResult {
    std::vector<GaussianState> smoothed; // per step
    double log_likelihood = 0.0;
};

// Kalman filter + RTS smoother for y_k = h x_k + eps, eps ~ N(0, noise_var),
// with an optional per-step observation mask. Exact; used by the linear
// time-frequency analysis stage and as the linear-regime reference.
inline LinearSmootherResult linear_smoother(const DiscreteModel& model,
                                            const Eigen::RowVectorXd& h,
                                            const VectorXd& y,
                                            double noise_var,
                                            const std::vector<bool>& observed = {}) {
    const Eigen::Index T = y.size();
    const Eigen::Index m = model.dim();
    if (!observed.empty() &&
        static_cast<Eigen::Index>(observed.size()) != T)
        throw ConfigError("linear_smoother: mask length mismatch");

    std::vector<GaussianState> filt(T), pred(T);
    LinearSmootherResult out;
    GaussianState state{VectorXd::Zero(m), model.Pinf};
    for (Eigen::Index k = 0; k < T; ++k) {
        if (k > 0) state = kf_predict(state, model.A, model.Q);
        pred[k] = state;
        const bool has = observed.empty() || observed[k];
        if (has) {
            const double mu = h.dot(state.m);
            const double s = h * state.P * h.transpose() + noise_var;
            if (!(s > 0.0))
                throw NumericalError("linear_smoother: nonpositive innovation");
            const double v = y(k) - mu;
            out.log_likelihood +=
                -0.5 * (std::log(2.0 * M_PI * s) + v * v / s);
            const VectorXd gain = (state.P * h.transpose()) / s;
            state.m += gain * v;
            state.P = symmetrize(state.P - gain * (s * gain.transpose()));
        }
        filt[k] = state;
    }
    out.smoothed.resize(T);
    out.smoothed[T - 1] = filt[T - 1];
    for (Eigen::Index k = T - 2; k >= 0; --k)
        out.smoothed[k] = rts_step(filt[k], pred[k + 1], out.smoothed[k + 1],
                                   model.A);
    return out;
}

} // namespace gtfnmf
