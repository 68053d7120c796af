// Globally iterated extended Kalman filter/smoother baseline. Each outer
// iteration re-filters from the prior with the measurement linearized
// around the previous iteration's smoothed trajectory (Laplace-style
// global relinearization); the first iteration linearizes at the filtered
// predictive mean.
#pragma once

#include <Eigen/Dense>
#include <vector>

#include "gtfnmf/common.hpp"
#include "gtfnmf/ep.hpp"
#include "gtfnmf/kalman.hpp"
#include "gtfnmf/model.hpp"

namespace gtfnmf {

inline PosteriorMarginals iekf_smoother(const ModelSpec& spec,
                                        const DiscreteModel& model,
                                        const VectorXd& y, int iterations,
                                        const std::vector<bool>& observed = {},
                                        const QuadratureRule* recon_rule = nullptr) {
    spec.validate();
    if (iterations < 1) throw ConfigError("iekf_smoother: iterations >= 1");
    const Eigen::Index T = y.size();
    const Eigen::Index m = model.dim();
    if (!observed.empty() && static_cast<Eigen::Index>(observed.size()) != T)
        throw ConfigError("iekf_smoother: mask length mismatch");
    auto has_obs = [&](Eigen::Index k) {
        return observed.empty() || observed[k];
    };

    std::vector<GaussianState> filt(T), pred(T), smoothed(T);
    MatrixXd lin_points; // M x T smoothed means of the previous iteration
    bool have_lin = false;
    double log_lik = 0.0;

    for (int iter = 0; iter < iterations; ++iter) {
        log_lik = 0.0;
        GaussianState state{VectorXd::Zero(m), model.Pinf};
        for (Eigen::Index k = 0; k < T; ++k) {
            if (k > 0) state = kf_predict(state, model.A, model.Q);
            pred[k] = state;
            if (has_obs(k)) {
                const VectorXd x_lin = have_lin ? lin_points.col(k) : state.m;
                const Eigen::RowVectorXd hx =
                    measurement_jacobian(x_lin, spec, model.layout);
                const double v = y(k) - measurement_mean(x_lin, spec, model.layout) -
                                 hx.dot(state.m - x_lin);
                const double s = hx * state.P * hx.transpose() + spec.sigma_y2;
                if (!(s > 0.0))
                    throw NumericalError(
                        "iekf_smoother: nonpositive innovation variance at step " +
                        std::to_string(k));
                log_lik += -0.5 * (std::log(2.0 * M_PI * s) + v * v / s);
                const VectorXd gain = (state.P * hx.transpose()) / s;
                state.m += gain * v;
                state.P = symmetrize(state.P - gain * (s * gain.transpose()));
            }
            if (!state.m.allFinite())
                throw DivergenceError("iekf_smoother: non-finite state at step " +
                                      std::to_string(k));
            filt[k] = state;
        }
        smoothed[T - 1] = filt[T - 1];
        for (Eigen::Index k = T - 2; k >= 0; --k)
            smoothed[k] =
                rts_step(filt[k], pred[k + 1], smoothed[k + 1], model.A);

        lin_points.resize(m, T);
        for (Eigen::Index k = 0; k < T; ++k) lin_points.col(k) = smoothed[k].m;
        have_lin = true;
    }

    PosteriorMarginals pm;
    pm.resize(T, spec.D, spec.N);
    pm.log_marginal = log_lik;

    QuadratureRule local_rule;
    if (recon_rule == nullptr) {
        local_rule = default_rule(spec.N);
        recon_rule = &local_rule;
    }
    detail::ReconAccumulator recon{&spec, recon_rule};
    const MatrixXd h = model.layout.selection_matrix();
    MatrixXd cross(spec.D, spec.N);
    for (Eigen::Index k = 0; k < T; ++k) {
        const GaussianState& st = smoothed[k];
        VectorXd mu(spec.D + spec.N), var(spec.D + spec.N);
        for (Eigen::Index i = 0; i < spec.D + spec.N; ++i) {
            auto [a, b] = latent_marginal(st, h.row(i));
            mu(i) = a;
            var(i) = b;
        }
        pm.z_mean.row(k) = mu.head(spec.D).transpose();
        pm.z_var.row(k) = var.head(spec.D).transpose();
        pm.g_mean.row(k) = mu.tail(spec.N).transpose();
        pm.g_var.row(k) = var.tail(spec.N).transpose();
        for (Eigen::Index d = 0; d < spec.D; ++d)
            for (Eigen::Index n = 0; n < spec.N; ++n)
                cross(d, n) = st.P(model.layout.subbands[d].measured,
                                   model.layout.modulators[n].measured);
        VectorXd amp(spec.D), channel(spec.D);
        double rm = 0.0, rv = 0.0;
        recon(mu.head(spec.D), var.head(spec.D), mu.tail(spec.N),
              var.tail(spec.N), cross, amp, channel, rm, rv);
        pm.amp_mean.row(k) = amp.transpose();
        pm.recon_channel.row(k) = channel.transpose();
        pm.reconstruction(k) = rm;
        pm.recon_var(k) = rv;
    }
    return pm;
}

} // namespace gtfnmf
