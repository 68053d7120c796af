// Infinite-horizon inference: per-latent steady-state filter/smoother
// covariances over a grid of effective observation noise variances, so the
// per-step state is the mean vector only. Time O(T M^2), memory O(T M).
//
// The latent blocks are independent under the prior, and the EP sites are
// factorized per latent, so the filter factorizes across blocks; coupling
// between latents enters through the site parameters, which are computed
// from the joint tilted distribution exactly as in the full EP smoother.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "gtfnmf/common.hpp"
#include "gtfnmf/ep.hpp"
#include "gtfnmf/kalman.hpp"
#include "gtfnmf/model.hpp"

namespace gtfnmf {

namespace detail {

// One grid entry of a latent block's steady bank.
struct SteadyEntry {
    double noise = 0.0;     // effective observation variance (inf for none)
    VectorXd gain;          // filter gain on the block state
    MatrixXd smoother_gain; // block RTS gain
    double pred_var = 0.0;  // h P_pred h^T
    double filt_var = 0.0;  // h P_filt h^T
    double smooth_var = 0.0;// h P_smooth h^T
};

// Solve P - G P G^T = C by Kronecker vectorization (block dims <= 6).
inline MatrixXd solve_discrete_lyapunov(const MatrixXd& g, const MatrixXd& c) {
    const Eigen::Index n = g.rows();
    MatrixXd kron = MatrixXd::Identity(n * n, n * n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            for (Eigen::Index r = 0; r < n; ++r)
                for (Eigen::Index s = 0; s < n; ++s)
                    kron(j * n + r, i * n + s) -= g(r, s) * g(j, i);
    VectorXd rhs = Eigen::Map<const VectorXd>(c.data(), n * n);
    VectorXd vec = kron.partialPivLu().solve(rhs);
    return symmetrize(Eigen::Map<MatrixXd>(vec.data(), n, n));
}

} // namespace detail

// Steady predictive covariance and gain of the scalar-observation filter:
// P = A (P - P h^T (h P h^T + r)^{-1} h P) A^T + Q, K = P h^T/(h P h^T + r).
// Solved by fixed-point iteration of the Riccati map, started at the
// no-information covariance: the map is matrix-monotone, so the iteration
// contracts from above and small steps mean proximity to the fixed point.
// (Starting from below stalls far from it on slow blocks whose per-step
// noise is tiny.)
inline std::pair<MatrixXd, VectorXd> dare_steady(const MatrixXd& a,
                                                 const MatrixXd& q,
                                                 const Eigen::RowVectorXd& h,
                                                 double noise_variance) {
    if (!(noise_variance > 0.0))
        throw ParameterError("dare_steady: noise variance must be > 0");
    MatrixXd p = detail::solve_discrete_lyapunov(a, q);
    if (!p.allFinite() || p.norm() == 0.0)
        p = MatrixXd::Identity(a.rows(), a.cols());
    auto riccati = [&](const MatrixXd& x) {
        const VectorXd u = x * h.transpose();
        const double s = h.dot(u) + noise_variance;
        return symmetrize(a * (x - u * u.transpose() / s) * a.transpose() + q);
    };
    for (int it = 0; it < 10000; ++it) {
        const MatrixXd next = riccati(p);
        const double resid = (next - p).norm();
        p = next;
        if (resid < 1e-10) {
            if ((riccati(p) - p).norm() < 1e-9) {
                const VectorXd u = p * h.transpose();
                return {p, u / (h.dot(u) + noise_variance)};
            }
        }
    }
    throw NumericalError("dare_steady: Riccati iteration did not converge");
}

// Per-latent grid of steady filter/smoother states over effective noise
// variances, log-spaced on [1e-6, 1e2] * sigma_y^2, plus a no-information
// entry used when a latent carries no site. Gains are interpolated linearly
// in log noise variance; lookups beyond the grid clamp to its ends.
class SteadyBank {
public:
    SteadyBank() = default;

    SteadyBank(const MatrixXd& a, const MatrixXd& q, const MatrixXd& pinf,
               const Eigen::RowVectorXd& h, double sigma_y2, int resolution) {
        if (resolution < 2) throw ConfigError("SteadyBank: resolution >= 2");
        // Grid bounds: strong sites scale with the observation noise,
        // weak ones (modulators especially) with the block's stationary
        // variance, so the top end must cover both.
        const double prior_var = h * pinf * h.transpose();
        log_lo_ = std::log(1e-6 * sigma_y2);
        log_hi_ = std::log(std::max(1e2 * sigma_y2, 1e3 * prior_var));
        step_ = (log_hi_ - log_lo_) / (resolution - 1);
        entries_.resize(static_cast<std::size_t>(resolution));
        for (int i = 0; i < resolution; ++i) {
            const double v = std::exp(log_lo_ + i * step_);
            auto [p_pred, gain] = dare_steady(a, q, h, v);
            entries_[static_cast<std::size_t>(i)] =
                make_entry(a, q, h, v, p_pred, gain);
        }
        // No-information limit: the Riccati map degenerates to the discrete
        // Lyapunov equation, whose solution is the stationary covariance.
        detail::SteadyEntry none;
        none.noise = std::numeric_limits<double>::infinity();
        none.gain = VectorXd::Zero(a.rows());
        none.pred_var = h * pinf * h.transpose();
        none.filt_var = none.pred_var;
        none.smooth_var = none.pred_var;
        const MatrixXd p_pred = symmetrize(a * pinf * a.transpose() + q);
        none.smoother_gain =
            jittered_solve(p_pred, a * pinf).transpose();
        no_info_ = none;
    }

    // Linear interpolation of the bank at effective variance v; v outside
    // the grid clamps and bumps the counter.
    detail::SteadyEntry lookup(double v, std::int64_t& clamped) const {
        if (!std::isfinite(v)) return no_info_;
        const double lv = std::log(v);
        if (lv <= log_lo_) {
            if (lv < log_lo_) ++clamped;
            return entries_.front();
        }
        if (lv >= log_hi_) {
            if (lv > log_hi_) ++clamped;
            return entries_.back();
        }
        const double pos = (lv - log_lo_) / step_;
        const std::size_t i0 = static_cast<std::size_t>(pos);
        const double w = pos - static_cast<double>(i0);
        const auto& e0 = entries_[i0];
        const auto& e1 = entries_[std::min(i0 + 1, entries_.size() - 1)];
        detail::SteadyEntry out;
        out.noise = v;
        out.gain = (1.0 - w) * e0.gain + w * e1.gain;
        out.smoother_gain =
            (1.0 - w) * e0.smoother_gain + w * e1.smoother_gain;
        out.pred_var = (1.0 - w) * e0.pred_var + w * e1.pred_var;
        out.filt_var = (1.0 - w) * e0.filt_var + w * e1.filt_var;
        out.smooth_var = (1.0 - w) * e0.smooth_var + w * e1.smooth_var;
        return out;
    }

    const std::vector<detail::SteadyEntry>& entries() const { return entries_; }
    const detail::SteadyEntry& no_info() const { return no_info_; }

private:
    static detail::SteadyEntry make_entry(const MatrixXd& a, const MatrixXd& q,
                                          const Eigen::RowVectorXd& h, double v,
                                          const MatrixXd& p_pred,
                                          const VectorXd& gain) {
        detail::SteadyEntry e;
        e.noise = v;
        e.gain = gain;
        e.pred_var = h * p_pred * h.transpose();
        const MatrixXd p_filt =
            symmetrize(p_pred - gain * (h * p_pred));
        e.filt_var = h * p_filt * h.transpose();
        e.smoother_gain = jittered_solve(p_pred, a * p_filt).transpose();
        const MatrixXd c = symmetrize(
            p_filt - e.smoother_gain * p_pred * e.smoother_gain.transpose());
        const MatrixXd p_smooth =
            detail::solve_discrete_lyapunov(e.smoother_gain, c);
        e.smooth_var = std::max(0.0, double(h * p_smooth * h.transpose()));
        return e;
    }

    std::vector<detail::SteadyEntry> entries_;
    detail::SteadyEntry no_info_;
    double log_lo_ = 0.0, log_hi_ = 0.0, step_ = 1.0;
};

struct IhgpResult {
    PosteriorMarginals marginals;
    SiteArray sites;
    int iterations_run = 0;
    std::int64_t clamped_lookups = 0;
    // Per-step stored data during smoothing: filtered mean (M), smoothed
    // mean (M) and one effective noise variance per latent (S).
    std::int64_t bytes_per_step = 0;
};

// Alg.-1 EP with covariance propagation replaced by steady-state lookups.
// Means are propagated exactly; the per-latent effective site variance
// selects filter/smoother gains and marginal variances from the bank.
inline IhgpResult ihgp_ep_smoother(const ModelSpec& spec,
                                   const DiscreteModel& model,
                                   const VectorXd& y, const EpConfig& cfg,
                                   int bank_resolution = 64,
                                   const std::vector<bool>& observed = {}) {
    spec.validate();
    cfg.validate(spec.N);
    const Eigen::Index T = y.size();
    const Eigen::Index s_count = spec.D + spec.N;
    if (!observed.empty() && static_cast<Eigen::Index>(observed.size()) != T)
        throw ConfigError("ihgp_ep_smoother: mask length mismatch");
    auto has_obs = [&](Eigen::Index k) {
        return observed.empty() || observed[k];
    };

    // Collect the latent blocks in site order (subbands then modulators).
    std::vector<LatentSlot> slots = model.layout.subbands;
    slots.insert(slots.end(), model.layout.modulators.begin(),
                 model.layout.modulators.end());
    const Eigen::Index m = model.dim();

    std::vector<SteadyBank> banks;
    banks.reserve(slots.size());
    std::vector<MatrixXd> a_blocks;
    std::vector<Eigen::RowVectorXd> h_blocks;
    for (const auto& slot : slots) {
        const MatrixXd a = model.A.block(slot.offset, slot.offset, slot.dim,
                                         slot.dim);
        const MatrixXd q = model.Q.block(slot.offset, slot.offset, slot.dim,
                                         slot.dim);
        const MatrixXd pinf = model.Pinf.block(slot.offset, slot.offset,
                                               slot.dim, slot.dim);
        Eigen::RowVectorXd h = Eigen::RowVectorXd::Zero(slot.dim);
        h(slot.measured - slot.offset) = 1.0;
        banks.emplace_back(a, q, pinf, h, spec.sigma_y2, bank_resolution);
        a_blocks.push_back(a);
        h_blocks.push_back(h);
    }

    IhgpResult result;
    SiteArray sites = SiteArray::zeros(T, s_count);
    MatrixXd filt_means(m, T);
    MatrixXd smooth_means(m, T);
    MatrixXd eff_var =
        MatrixXd::Constant(T, s_count, std::numeric_limits<double>::infinity());
    // Variance surfaces are evaluated at each latent's typical site
    // variance: the steady state extrapolates its noise level over an
    // infinite horizon, so feeding it transient per-step extremes badly
    // overstates the accumulated information (slow modulators especially).
    VectorXd typical_var =
        VectorXd::Constant(s_count, std::numeric_limits<double>::infinity());
    double forward_log_z = 0.0;

    // Sites whose precision is negligible against the block's stationary
    // variance carry no usable information; treating them as observations
    // would turn nu/tau into a wild pseudo-measurement.
    std::vector<double> prior_vars(static_cast<std::size_t>(s_count));
    for (Eigen::Index i = 0; i < s_count; ++i) {
        const auto& slot = slots[static_cast<std::size_t>(i)];
        prior_vars[static_cast<std::size_t>(i)] =
            model.Pinf(slot.measured, slot.measured);
    }
    auto site_variance = [&](Eigen::Index k, Eigen::Index i) {
        const double tau = sites.tau(k, i);
        if (!(tau * prior_vars[static_cast<std::size_t>(i)] > 1e-12))
            return std::numeric_limits<double>::infinity();
        return 1.0 / tau;
    };

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

    auto refresh_typical_var = [&]() {
        for (Eigen::Index i = 0; i < s_count; ++i) {
            std::vector<double> vs;
            vs.reserve(static_cast<std::size_t>(T));
            for (Eigen::Index k = 0; k < T; ++k) {
                const double v = site_variance(k, i);
                if (std::isfinite(v)) vs.push_back(v);
            }
            if (vs.empty()) {
                typical_var(i) = std::numeric_limits<double>::infinity();
            } else {
                std::nth_element(vs.begin(), vs.begin() + vs.size() / 2,
                                 vs.end());
                typical_var(i) = vs[vs.size() / 2];
            }
        }
    };

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        double max_delta = 0.0;
        forward_log_z = 0.0;
        VectorXd x = VectorXd::Zero(m);
        VectorXd running_var = typical_var; // per-latent variance anchor

        for (Eigen::Index k = 0; k < T; ++k) {
            for (std::size_t b = 0; b < slots.size(); ++b) {
                const auto& slot = slots[b];
                if (k > 0)
                    x.segment(slot.offset, slot.dim) =
                        a_blocks[b] * x.segment(slot.offset, slot.dim);
            }
            if (has_obs(k)) {
                // predictive marginals from the steady bank
                VectorXd mu(s_count), var(s_count);
                for (Eigen::Index i = 0; i < s_count; ++i) {
                    const auto& slot = slots[static_cast<std::size_t>(i)];
                    mu(i) = x(slot.measured);
                    var(i) = banks[static_cast<std::size_t>(i)]
                                 .lookup(running_var(i), result.clamped_lookups)
                                 .pred_var;
                }
                Cavity cav;
                cav.mean = mu;
                cav.variance = var;
                cav.usable.assign(static_cast<std::size_t>(s_count), true);
                const TiltedMoments tm = tilted_log_z(
                    cav, y(k), spec, cfg.eta, cfg.rule, cfg.variance_form);
                if (tm.valid) forward_log_z += tm.log_z;
                if (iter == 0)
                    max_delta = std::max(max_delta, refresh_sites(k, cav, tm));
                // condition each block mean on its site
                for (Eigen::Index i = 0; i < s_count; ++i) {
                    const double v = site_variance(k, i);
                    eff_var(k, i) = v;
                    if (!std::isfinite(v)) continue;
                    if (iter == 0) running_var(i) = v; // ADF-style warmup
                    const auto& slot = slots[static_cast<std::size_t>(i)];
                    const auto entry =
                        banks[static_cast<std::size_t>(i)].lookup(
                            v, result.clamped_lookups);
                    const double resid =
                        sites.nu(k, i) / sites.tau(k, i) - x(slot.measured);
                    x.segment(slot.offset, slot.dim) += entry.gain * resid;
                }
            } else {
                eff_var.row(k).setConstant(
                    std::numeric_limits<double>::infinity());
            }
            if (!x.allFinite())
                throw DivergenceError(
                    "ihgp_ep_smoother: non-finite state at step " +
                    std::to_string(k) + ", iteration " + std::to_string(iter + 1));
            filt_means.col(k) = x;
        }
        refresh_typical_var();

        // backward mean recursion with steady smoother gains; variances
        // for the EP cavities come from the typical-noise steady state
        std::vector<detail::SteadyEntry> typ_entries(slots.size());
        for (std::size_t b = 0; b < slots.size(); ++b)
            typ_entries[b] = banks[b].lookup(
                typical_var(static_cast<Eigen::Index>(b)),
                result.clamped_lookups);
        smooth_means.col(T - 1) = filt_means.col(T - 1);
        for (Eigen::Index k = T - 2; k >= 0; --k) {
            for (std::size_t b = 0; b < slots.size(); ++b) {
                const auto& slot = slots[b];
                const auto entry = banks[b].lookup(
                    eff_var(k, static_cast<Eigen::Index>(b)),
                    result.clamped_lookups);
                const VectorXd mf = filt_means.col(k).segment(slot.offset,
                                                              slot.dim);
                const VectorXd ms_next =
                    smooth_means.col(k + 1).segment(slot.offset, slot.dim);
                smooth_means.col(k).segment(slot.offset, slot.dim) =
                    mf + entry.smoother_gain * (ms_next - a_blocks[b] * mf);
            }
            if (has_obs(k)) {
                VectorXd mu(s_count), var(s_count);
                for (Eigen::Index i = 0; i < s_count; ++i) {
                    const auto& slot = slots[static_cast<std::size_t>(i)];
                    mu(i) = smooth_means(slot.measured, k);
                    var(i) =
                        typ_entries[static_cast<std::size_t>(i)].smooth_var;
                }
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

    auto& pm = result.marginals;
    pm.resize(T, spec.D, spec.N);
    detail::ReconAccumulator recon{&spec, &cfg.rule};
    const MatrixXd cross = MatrixXd::Zero(spec.D, spec.N);
    std::vector<detail::SteadyEntry> typ_entries(slots.size());
    for (std::size_t b = 0; b < slots.size(); ++b)
        typ_entries[b] = banks[b].lookup(
            typical_var(static_cast<Eigen::Index>(b)), result.clamped_lookups);
    for (Eigen::Index k = 0; k < T; ++k) {
        VectorXd mu(s_count), var(s_count);
        for (Eigen::Index i = 0; i < s_count; ++i) {
            const auto& slot = slots[static_cast<std::size_t>(i)];
            mu(i) = smooth_means(slot.measured, k);
            var(i) = typ_entries[static_cast<std::size_t>(i)].smooth_var;
        }
        pm.z_mean.row(k) = mu.head(spec.D).transpose();
        pm.z_var.row(k) = var.head(spec.D).transpose();
        pm.g_mean.row(k) = mu.tail(spec.N).transpose();
        pm.g_var.row(k) = var.tail(spec.N).transpose();
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
    result.bytes_per_step =
        static_cast<std::int64_t>(sizeof(double)) * (2 * m + s_count);
    return result;
}

} // namespace gtfnmf
