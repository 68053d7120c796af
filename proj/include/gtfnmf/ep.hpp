// Power expectation propagation over the nonlinear measurement, run through
// Kalman smoothing. Each observation contributes one factorized Gaussian
// site per latent (z_1..z_D, g_1..g_N); sites are refreshed from tilted
// moments during the backward pass and consumed as pseudo-observations by
// the forward filter.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <vector>

#include "gtfnmf/common.hpp"
#include "gtfnmf/cubature.hpp"
#include "gtfnmf/kalman.hpp"
#include "gtfnmf/model.hpp"

namespace gtfnmf {

// Two readings of the z-marginalized tilted variance. PowerScaled is the
// exact marginalization of the softplus-link likelihood raised to the power
// eta: v_y = sigma_y^2 / eta + sum_d a_d^2(g) zeta_d. AppendixLiteral keeps
// sigma_y^2 unscaled and uses sum_d sum_n W^2 psi^2 zeta_d; it survives only
// for comparison and fails a Monte-Carlo check of the normalizer whenever
// N > 1 or eta < 1 (see the acceptance suite).
enum class TiltedVariance { PowerScaled, AppendixLiteral };

struct EpConfig {
    double eta = 0.75;     // power, in (0, 1]
    double damping = 0.1;  // rho, in (0, 1]
    int iterations = 20;
    QuadratureRule rule;   // over the N modulator dimensions
    TiltedVariance variance_form = TiltedVariance::PowerScaled;
    double convergence_tol = 1e-6; // max site change for early exit

    void validate(Eigen::Index n_mod) const {
        if (!(eta > 0.0 && eta <= 1.0))
            throw ConfigError("EpConfig: eta must lie in (0, 1]");
        if (!(damping > 0.0 && damping <= 1.0))
            throw ConfigError("EpConfig: damping must lie in (0, 1]");
        if (iterations < 1) throw ConfigError("EpConfig: iterations >= 1");
        if (rule.dimension() != n_mod)
            throw ConfigError("EpConfig: rule dimension must equal N");
    }
};

// Default rule choice: tensor Gauss-Hermite is cheaper than the symmetric
// rule for one or two modulators; past the degree-9 dimension cap (stacked
// source-separation models) the degree-5 spherical-radial rule keeps the
// node budget quadratic.
inline QuadratureRule default_rule(Eigen::Index n_mod) {
    if (n_mod <= 2) return gauss_hermite_tensor(static_cast<int>(n_mod), 10);
    if (n_mod <= 6) return degree9_rule(static_cast<int>(n_mod));
    return degree5_rule(static_cast<int>(n_mod));
}

// Site parameters for every latent at every step; ordering per step is
// z_1..z_D then g_1..g_N. Initialized to zero (no information).
struct SiteArray {
    MatrixXd nu;  // T x (D+N) precision-adjusted means
    MatrixXd tau; // T x (D+N) precisions

    static SiteArray zeros(Eigen::Index t, Eigen::Index s) {
        return {MatrixXd::Zero(t, s), MatrixXd::Zero(t, s)};
    }
};

// Cavity distribution per latent: marginal with eta times the site removed.
struct Cavity {
    VectorXd mean;     // mu_-
    VectorXd variance; // zeta_-
    std::vector<bool> usable;
};

// Cavity for one latent: precision 1/sigma^2 - eta tau, precision-adjusted
// mean mu/sigma^2 - eta nu. A nonpositive cavity precision marks the entry
// unusable; the caller skips that site this pass.
inline Cavity cavity_from_marginal(const VectorXd& mu, const VectorXd& var,
                                   const VectorXd& nu, const VectorXd& tau,
                                   double eta) {
    const Eigen::Index s = mu.size();
    Cavity c{VectorXd::Zero(s), VectorXd::Zero(s),
             std::vector<bool>(static_cast<std::size_t>(s), false)};
    for (Eigen::Index i = 0; i < s; ++i) {
        if (!(var(i) > 0.0)) continue;
        const double prec = 1.0 / var(i) - eta * tau(i);
        if (!(prec > 0.0) || !std::isfinite(prec)) continue;
        const double nat_mean = mu(i) / var(i) - eta * nu(i);
        c.variance(i) = 1.0 / prec;
        c.mean(i) = nat_mean / prec;
        c.usable[static_cast<std::size_t>(i)] = std::isfinite(c.mean(i));
    }
    return c;
}

// log Z_k and its first/second partials with respect to every cavity mean.
struct TiltedMoments {
    double log_z = 0.0;
    VectorXd dz;   // d log Z / d mu_-, z entries then g entries
    VectorXd d2z;  // second partials, same ordering
    bool valid = false;
};

namespace detail {

struct TiltedInputs {
    double y = 0.0;
    double sigma_y2 = 0.0;
    double eta = 1.0;
    const MatrixXd* w = nullptr;
    const VectorXd* fixed_amplitudes = nullptr; // optional linear regime
    TiltedVariance form = TiltedVariance::PowerScaled;
};

inline double gauss_pdf(double x, double mean, double var) {
    const double r = x - mean;
    return std::exp(-0.5 * r * r / var) / std::sqrt(2.0 * M_PI * var);
}

} // namespace detail

// Evaluates Z_k = E_cavity[p(y_k | g, z)^eta] with the z block marginalized
// in closed form and the remaining N-dimensional integral over g handled by
// the quadrature rule. Increments of the integrand against the cavity
// density give the four derivative families in the same sweep.
inline TiltedMoments tilted_log_z(const Cavity& cav, double y,
                                  const ModelSpec& spec, double eta,
                                  const QuadratureRule& rule,
                                  TiltedVariance form) {
    const Eigen::Index d_count = spec.D;
    const Eigen::Index n_count = spec.N;
    TiltedMoments out;
    out.dz = VectorXd::Zero(d_count + n_count);
    out.d2z = VectorXd::Zero(d_count + n_count);

    for (Eigen::Index d = 0; d < d_count; ++d)
        if (!cav.usable[static_cast<std::size_t>(d)]) return out;
    for (Eigen::Index n = 0; n < n_count; ++n)
        if (!cav.usable[static_cast<std::size_t>(d_count + n)]) return out;

    const VectorXd mu_z = cav.mean.head(d_count);
    const VectorXd zeta_z = cav.variance.head(d_count);
    const VectorXd mu_g = cav.mean.tail(n_count);
    const VectorXd zeta_g = cav.variance.tail(n_count);
    const VectorXd sd_g = zeta_g.cwiseSqrt();

    const double noise = form == TiltedVariance::PowerScaled
                             ? spec.sigma_y2 / eta
                             : spec.sigma_y2;
    const double log_const =
        0.5 * (1.0 - eta) * std::log(2.0 * M_PI * spec.sigma_y2) -
        0.5 * std::log(eta);

    double z_acc = 0.0;
    VectorXd dz_acc = VectorXd::Zero(d_count + n_count);
    VectorXd d2z_acc = VectorXd::Zero(d_count + n_count);

    VectorXd psi(n_count), amp(d_count), amp2(d_count);
    for (Eigen::Index i = 0; i < rule.size(); ++i) {
        const VectorXd xi = rule.nodes.row(i).transpose();
        const VectorXd g = mu_g + sd_g.cwiseProduct(xi);
        for (Eigen::Index n = 0; n < n_count; ++n) psi(n) = softplus(g(n));

        double m_y = 0.0, v_y = noise;
        if (spec.fixed_amplitudes) {
            for (Eigen::Index d = 0; d < d_count; ++d) {
                amp(d) = (*spec.fixed_amplitudes)(d);
                amp2(d) = amp(d) * amp(d);
                m_y += amp(d) * mu_z(d);
                v_y += amp2(d) * zeta_z(d);
            }
        } else if (form == TiltedVariance::PowerScaled) {
            for (Eigen::Index d = 0; d < d_count; ++d) {
                amp2(d) = spec.W.row(d).dot(psi);
                amp(d) = std::sqrt(amp2(d));
                m_y += amp(d) * mu_z(d);
                v_y += amp2(d) * zeta_z(d);
            }
        } else { // AppendixLiteral
            for (Eigen::Index d = 0; d < d_count; ++d) {
                const double lin = spec.W.row(d).dot(psi);
                double sq = 0.0;
                for (Eigen::Index n = 0; n < n_count; ++n)
                    sq += spec.W(d, n) * spec.W(d, n) * psi(n) * psi(n);
                amp(d) = lin;
                amp2(d) = sq;
                m_y += lin * mu_z(d);
                v_y += sq * zeta_z(d);
            }
        }
        if (!(v_y > 0.0)) return out;

        const double lik = detail::gauss_pdf(y, m_y, v_y);
        const double base = rule.weights(i) * lik;
        const double resid = (y - m_y) / v_y;
        z_acc += base;
        for (Eigen::Index d = 0; d < d_count; ++d) {
            dz_acc(d) += base * amp(d) * resid;
            d2z_acc(d) += base * amp(d) * amp(d) * (resid * resid - 1.0 / v_y);
        }
        for (Eigen::Index n = 0; n < n_count; ++n) {
            const double u = xi(n) / sd_g(n); // (g_n - mu_n) / zeta_n
            dz_acc(d_count + n) += base * u;
            d2z_acc(d_count + n) += base * (u * u - 1.0 / zeta_g(n));
        }
    }

    if (!(z_acc > 0.0) || !std::isfinite(z_acc)) return out;
    out.log_z = std::log(z_acc) + log_const;
    out.dz = dz_acc / z_acc;
    for (Eigen::Index i = 0; i < d_count + n_count; ++i)
        out.d2z(i) = d2z_acc(i) / z_acc - out.dz(i) * out.dz(i);
    out.valid = out.dz.allFinite() && out.d2z.allFinite();
    return out;
}

enum class SiteUpdateOutcome { Updated, Deflected, Clipped };

// Damped natural-parameter site update for one latent. With b = dlogZ/dmu_-
// and c = d2logZ/dmu_-^2:
//   tau <- (1-rho) tau + (rho/eta) * (-c / (1 + zeta_- c)),
//   nu  <- (1-rho) nu  + (rho/eta) * ((b - mu_- c) / (1 + zeta_- c)).
// A deflected update (1 + zeta_- c <= 0) leaves the site untouched; a
// negative resulting precision clips the site to the vacuous (0, 0), the
// nearest value the downstream Kalman conditioning accepts.
inline SiteUpdateOutcome damped_site_update(double b, double c,
                                            double cav_mean, double cav_var,
                                            double rho, double eta,
                                            double& nu, double& tau) {
    // 1 + zeta c near zero means the matched posterior variance collapses
    // to a vanishing fraction of the cavity's; such updates are treated as
    // deflected before they mint near-infinite site precisions.
    const double denom = 1.0 + cav_var * c;
    if (!(denom > 1e-6) || !std::isfinite(denom))
        return SiteUpdateOutcome::Deflected;
    const double tau_target = -c / denom / eta;
    const double nu_target = (b - cav_mean * c) / denom / eta;
    const double tau_new = (1.0 - rho) * tau + rho * tau_target;
    const double nu_new = (1.0 - rho) * nu + rho * nu_target;
    if (!std::isfinite(tau_new) || !std::isfinite(nu_new))
        return SiteUpdateOutcome::Deflected;
    if (tau_new < 0.0) {
        nu = 0.0;
        tau = 0.0;
        return SiteUpdateOutcome::Clipped;
    }
    nu = nu_new;
    tau = tau_new;
    return SiteUpdateOutcome::Updated;
}

// Posterior summary of one smoothing run.
struct PosteriorMarginals {
    MatrixXd z_mean, z_var;   // T x D
    MatrixXd g_mean, g_var;   // T x N
    MatrixXd amp_mean;        // T x D, posterior mean of a_d
    MatrixXd recon_channel;   // T x D, posterior mean of a_d z_d per channel
    VectorXd reconstruction;  // T, posterior mean of sum_d a_d z_d
    VectorXd recon_var;       // T, posterior variance of the same
    double log_marginal = 0.0;
    std::int64_t skipped_updates = 0; // deflected updates and invalid tilts
    std::int64_t clipped_updates = 0; // sites reset to (0, 0)
    std::int64_t attempted_updates = 0;

    void resize(Eigen::Index t, Eigen::Index d, Eigen::Index n) {
        z_mean.setZero(t, d);
        z_var.setZero(t, d);
        g_mean.setZero(t, n);
        g_var.setZero(t, n);
        amp_mean.setZero(t, d);
        recon_channel.setZero(t, d);
        reconstruction.setZero(t);
        recon_var.setZero(t);
    }
};

namespace detail {

// Posterior mean/variance of f = sum_d a_d z_d at one step, integrating the
// modulator marginals with the quadrature rule. The z block enters through
// its conditional mean given g (linear regression on the state covariance),
// so z-g coupling is retained; g-g cross terms use the diagonal marginals.
struct ReconAccumulator {
    const ModelSpec* spec;
    const QuadratureRule* rule;

    void operator()(const VectorXd& mu_z, const VectorXd& var_z,
                    const VectorXd& mu_g, const VectorXd& var_g,
                    const MatrixXd& cross_zg, // D x N cov(z_d, g_n)
                    VectorXd& amp_mean, VectorXd& channel_mean,
                    double& recon_mean, double& recon_var) const {
        const Eigen::Index d_count = spec->D;
        const Eigen::Index n_count = spec->N;
        if (spec->fixed_amplitudes) {
            const VectorXd& a = *spec->fixed_amplitudes;
            amp_mean = a;
            channel_mean = a.cwiseProduct(mu_z);
            recon_mean = channel_mean.sum();
            recon_var = (a.array().square() * var_z.array()).sum();
            return;
        }
        const VectorXd sd_g = var_g.cwiseMax(1e-300).cwiseSqrt();
        amp_mean.setZero(d_count);
        channel_mean.setZero(d_count);
        double m2 = 0.0;
        VectorXd psi(n_count), amp(d_count);
        for (Eigen::Index i = 0; i < rule->size(); ++i) {
            const VectorXd xi = rule->nodes.row(i).transpose();
            const VectorXd g = mu_g + sd_g.cwiseProduct(xi);
            for (Eigen::Index n = 0; n < n_count; ++n) psi(n) = softplus(g(n));
            double mean_f = 0.0, var_f = 0.0;
            const double wgt = rule->weights(i);
            for (Eigen::Index d = 0; d < d_count; ++d) {
                const double a2 = spec->W.row(d).dot(psi);
                const double a = std::sqrt(a2);
                amp(d) = a;
                // conditional mean of z_d given g (diagonal g marginals)
                double zc = mu_z(d);
                for (Eigen::Index n = 0; n < n_count; ++n) {
                    if (var_g(n) > 0.0)
                        zc += cross_zg(d, n) / var_g(n) * (g(n) - mu_g(n));
                }
                mean_f += a * zc;
                var_f += a2 * var_z(d);
                channel_mean(d) += wgt * a * zc;
            }
            amp_mean += wgt * amp;
            m2 += wgt * (mean_f * mean_f + var_f);
        }
        recon_mean = channel_mean.sum();
        recon_var = std::max(m2 - recon_mean * recon_mean, 0.0);
    }
};

} // namespace detail

struct EpResult {
    PosteriorMarginals marginals;
    SiteArray sites;
    int iterations_run = 0;
};

// Power EP by Kalman smoothing. The first forward pass computes sites from
// the predictive marginals (ADF-style); every backward pass recomputes
// cavities from the smoothed marginals and refreshes the sites with damped
// natural-parameter updates. Steps without an observation propagate the
// prediction only. Iterates until the configured count or until the largest
// site change falls below the convergence tolerance.
inline EpResult ep_smoother(const ModelSpec& spec, const DiscreteModel& model,
                            const VectorXd& y, const EpConfig& cfg,
                            const std::vector<bool>& observed = {}) {
    spec.validate();
    cfg.validate(spec.N);
    const Eigen::Index T = y.size();
    const Eigen::Index m = model.dim();
    const Eigen::Index s_count = spec.D + spec.N;
    if (model.layout.num_subbands() != spec.D ||
        model.layout.num_modulators() != spec.N)
        throw ConfigError("ep_smoother: model layout does not match spec");
    if (!observed.empty() && static_cast<Eigen::Index>(observed.size()) != T)
        throw ConfigError("ep_smoother: mask length mismatch");
    auto has_obs = [&](Eigen::Index k) {
        return observed.empty() || observed[k];
    };

    const MatrixXd h = model.layout.selection_matrix();
    SiteArray sites = SiteArray::zeros(T, s_count);
    // Chain-rule accumulation: Z_k is evaluated against the forward
    // predictive marginal (the site at k is not yet applied there), so in
    // the linear-Gaussian regime sum(log Z_k) is the exact log marginal
    // likelihood at every iteration.
    double forward_log_z = 0.0;

    EpResult result;
    std::vector<GaussianState> filt(T), pred(T), smoothed(T);

    auto marginals_at = [&](const GaussianState& st) {
        VectorXd mu(s_count), var(s_count);
        for (Eigen::Index i = 0; i < s_count; ++i) {
            auto [a, b] = latent_marginal(st, h.row(i));
            mu(i) = a;
            var(i) = b;
        }
        return std::make_pair(mu, var);
    };

    // Damped refresh of the sites at step k against the given cavity.
    // Returns the largest site parameter change.
    auto refresh_sites = [&](Eigen::Index k, const Cavity& cav,
                             const TiltedMoments& tm) {
        result.marginals.attempted_updates += s_count;
        if (!tm.valid) {
            result.marginals.skipped_updates += s_count;
            return 0.0;
        }
        double max_delta = 0.0;
        for (Eigen::Index i = 0; i < s_count; ++i) {
            double nu_i = sites.nu(k, i);
            double tau_i = sites.tau(k, i);
            const SiteUpdateOutcome out = damped_site_update(
                tm.dz(i), tm.d2z(i), cav.mean(i), cav.variance(i), cfg.damping,
                cfg.eta, nu_i, tau_i);
            if (out == SiteUpdateOutcome::Deflected) {
                ++result.marginals.skipped_updates;
                continue;
            }
            if (out == SiteUpdateOutcome::Clipped)
                ++result.marginals.clipped_updates;
            max_delta = std::max({max_delta, std::abs(nu_i - sites.nu(k, i)),
                                  std::abs(tau_i - sites.tau(k, i))});
            sites.nu(k, i) = nu_i;
            sites.tau(k, i) = tau_i;
        }
        return max_delta;
    };

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        double max_delta = 0.0;
        forward_log_z = 0.0;
        GaussianState state{VectorXd::Zero(m), model.Pinf};
        for (Eigen::Index k = 0; k < T; ++k) {
            if (k > 0) state = kf_predict(state, model.A, model.Q);
            pred[k] = state;
            if (has_obs(k)) {
                auto [mu, var] = marginals_at(state);
                Cavity cav;
                cav.mean = mu;
                cav.variance = var;
                cav.usable.assign(static_cast<std::size_t>(s_count), true);
                for (Eigen::Index i = 0; i < s_count; ++i)
                    if (!(var(i) > 0.0))
                        cav.usable[static_cast<std::size_t>(i)] = false;
                const TiltedMoments tm = tilted_log_z(
                    cav, y(k), spec, cfg.eta, cfg.rule, cfg.variance_form);
                if (tm.valid) forward_log_z += tm.log_z;
                if (iter == 0)
                    max_delta = std::max(max_delta, refresh_sites(k, cav, tm));
                state = kf_update_sites(state, h, sites.nu.row(k).transpose(),
                                        sites.tau.row(k).transpose());
            }
            if (!state.m.allFinite())
                throw DivergenceError("ep_smoother: non-finite state at step " +
                                      std::to_string(k) + ", iteration " +
                                      std::to_string(iter + 1));
            filt[k] = state;
        }

        smoothed[T - 1] = filt[T - 1];
        for (Eigen::Index k = T - 2; k >= 0; --k) {
            smoothed[k] =
                rts_step(filt[k], pred[k + 1], smoothed[k + 1], model.A);
            if (!smoothed[k].m.allFinite())
                throw DivergenceError(
                    "ep_smoother: non-finite smoothed state at step " +
                    std::to_string(k) + ", iteration " + std::to_string(iter + 1));
            if (has_obs(k)) {
                auto [mu, var] = marginals_at(smoothed[k]);
                const Cavity cav = cavity_from_marginal(
                    mu, var, sites.nu.row(k).transpose(),
                    sites.tau.row(k).transpose(), cfg.eta);
                const TiltedMoments tm = tilted_log_z(
                    cav, y(k), spec, cfg.eta, cfg.rule, cfg.variance_form);
                max_delta = std::max(max_delta, refresh_sites(k, cav, tm));
            }
        }
        result.iterations_run = iter + 1;
        if (max_delta < cfg.convergence_tol) break;
    }

    // Final marginals and measurement-mean reconstruction.
    auto& pm = result.marginals;
    pm.resize(T, spec.D, spec.N);
    detail::ReconAccumulator recon{&spec, &cfg.rule};
    MatrixXd cross(spec.D, spec.N);
    for (Eigen::Index k = 0; k < T; ++k) {
        const GaussianState& st = smoothed[k];
        auto [mu, var] = marginals_at(st);
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
    pm.log_marginal = forward_log_z;
    result.sites = sites;
    return result;
}

} // namespace gtfnmf
