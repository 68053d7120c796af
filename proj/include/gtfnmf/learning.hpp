// Hyperparameter initialization and tuning: Welch-periodogram fitting of
// the subband filter bank, probabilistic spectrogram via the linear
// time-frequency model, multiplicative-update NMF, and marginal-likelihood
// refinement with a derivative-free simplex search over log-parameters.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <random>
#include <vector>

#include "gtfnmf/common.hpp"
#include "gtfnmf/ep.hpp"
#include "gtfnmf/kalman.hpp"
#include "gtfnmf/model.hpp"

namespace gtfnmf {

namespace detail {

// In-place iterative radix-2 FFT; n must be a power of two.
inline void fft_pow2(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * M_PI / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                const std::complex<double> u = a[i + j];
                const std::complex<double> v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

} // namespace detail

// Welch-averaged periodogram (Hann window, half-overlap). Bin j maps to
// angular frequency 2 pi j / nfft rad/sample; normalization makes white
// noise of variance s^2 average to a flat s^2.
inline VectorXd welch_periodogram(const VectorXd& y, int nfft = 1024) {
    if ((nfft & (nfft - 1)) != 0 || nfft < 8)
        throw ConfigError("welch_periodogram: nfft must be a power of two");
    if (y.size() < nfft)
        throw ConfigError("welch_periodogram: signal shorter than nfft");
    VectorXd window(nfft);
    double wsq = 0.0;
    for (int i = 0; i < nfft; ++i) {
        window(i) = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / (nfft - 1));
        wsq += window(i) * window(i);
    }
    const Eigen::Index hop = nfft / 2;
    VectorXd acc = VectorXd::Zero(nfft / 2 + 1);
    Eigen::Index segments = 0;
    std::vector<std::complex<double>> buf(static_cast<std::size_t>(nfft));
    for (Eigen::Index start = 0; start + nfft <= y.size(); start += hop) {
        for (int i = 0; i < nfft; ++i)
            buf[static_cast<std::size_t>(i)] = y(start + i) * window(i);
        detail::fft_pow2(buf);
        for (int j = 0; j <= nfft / 2; ++j)
            acc(j) += std::norm(buf[static_cast<std::size_t>(j)]) / wsq;
        ++segments;
    }
    return acc / static_cast<double>(segments);
}

namespace detail {

// Spectral density of one exponential-kernel subband at angular frequency
// w (rad/sample): a Lorentzian pair at +-w_d.
inline double subband_psd(double omega, double center, double rate,
                          double variance) {
    const double a = omega - center;
    const double b = omega + center;
    return variance * rate *
           (1.0 / (rate * rate + a * a) + 1.0 / (rate * rate + b * b));
}

inline double mel_from_hz(double f) {
    return 2595.0 * std::log10(1.0 + f / 700.0);
}

inline double hz_from_mel(double m) {
    return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0);
}

// Golden-section minimization on [lo, hi].
inline double golden_min(const std::function<double(double)>& f, double lo,
                         double hi, int iters = 40) {
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = lo, b = hi;
    double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    for (int i = 0; i < iters; ++i) {
        if (f1 < f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = f(x2);
        }
    }
    return f1 < f2 ? x1 : x2;
}

} // namespace detail

struct SubbandFit {
    std::vector<KernelSpec> kernels; // exponential subbands, omega ascending
    double noise_floor = 0.0;        // flat residual PSD, sigma_y^2 estimate
};

// Frequency-domain initialization of the subband filter bank: mel-spaced
// centers on [40 Hz, 0.9 Nyquist], bandwidths from neighbor spacing,
// variances from local periodogram mass, then bounded coordinate descent on
// the log-spectral L2 error of the Lorentzian-mixture fit.
inline SubbandFit init_subbands(const VectorXd& y, Eigen::Index d_count,
                                double sample_rate, int nfft = 1024,
                                int sweeps = 4) {
    if (d_count < 1) throw ConfigError("init_subbands: D must be >= 1");
    if (y.size() < 1024)
        throw ConfigError("init_subbands: need at least 1024 samples");
    if (y.cwiseAbs().maxCoeff() == 0.0)
        throw DegenerateInputError("init_subbands: silent input");

    const VectorXd pgram = welch_periodogram(y, nfft);
    const Eigen::Index bins = pgram.size();
    VectorXd omega_grid(bins);
    for (Eigen::Index j = 0; j < bins; ++j)
        omega_grid(j) = 2.0 * M_PI * static_cast<double>(j) / nfft;

    // mel-spaced centers
    const double f_lo = 40.0, f_hi = 0.9 * sample_rate / 2.0;
    const double m_lo = detail::mel_from_hz(f_lo);
    const double m_hi = detail::mel_from_hz(f_hi);
    VectorXd omega(d_count), rate(d_count), var(d_count);
    for (Eigen::Index d = 0; d < d_count; ++d) {
        const double m =
            d_count == 1 ? 0.5 * (m_lo + m_hi)
                         : m_lo + (m_hi - m_lo) * d / (d_count - 1.0);
        omega(d) = 2.0 * M_PI * detail::hz_from_mel(m) / sample_rate;
    }
    const double omega_min = 2.0 * M_PI * f_lo / sample_rate;
    const double omega_max = 2.0 * M_PI * f_hi / sample_rate;

    // Constant-bandwidth bank: the common rate bound comes from the
    // narrowest center gap, so channels stay resolvable. Per-channel
    // bandwidths tied to the uneven mel spans would make the fitted
    // variances track the span instead of the local spectrum level.
    double min_gap = omega_max - omega_min;
    for (Eigen::Index d = 1; d < d_count; ++d)
        min_gap = std::min(min_gap, omega(d) - omega(d - 1));
    // Cap the bandwidth well below the narrowest gap: the lowest channels
    // sit close to DC, where their negative-frequency images would double
    // the local level and drag the fitted variances apart.
    const double rate_res = 2.0 * M_PI / nfft;
    const double rate_hi = std::max(0.25 * min_gap, 2.0 * rate_res);
    const double rate_lo = rate_res;
    const double rate0 = 0.5 * rate_hi;
    const double dw = omega_grid(1) - omega_grid(0);
    for (Eigen::Index d = 0; d < d_count; ++d) {
        rate(d) = rate0;
        // local periodogram mass between midpoints to the neighbors
        const double left =
            d == 0 ? omega_min : 0.5 * (omega(d - 1) + omega(d));
        const double right =
            d == d_count - 1 ? omega_max : 0.5 * (omega(d) + omega(d + 1));
        double mass = 0.0;
        for (Eigen::Index j = 0; j < bins; ++j)
            if (omega_grid(j) >= left && omega_grid(j) < right)
                mass += pgram(j) * dw;
        var(d) = std::max(mass / M_PI, 1e-10);
    }
    // The fitted model is the bare Lorentzian mixture; a fitted flat floor
    // would make the band variances unidentifiable on broadband signals.
    // The minimum periodogram level is still reported as a noise estimate.
    auto model_at = [&](Eigen::Index j) {
        double s = 0.0;
        for (Eigen::Index d = 0; d < d_count; ++d)
            s += detail::subband_psd(omega_grid(j), omega(d), rate(d), var(d));
        return s;
    };
    // The fit is judged on the bank's designed coverage; bins near DC see
    // the merged negative-frequency images of the low channels and would
    // otherwise drag their variances down.
    Eigen::Index j_lo = 0, j_hi = bins;
    while (j_lo < bins && omega_grid(j_lo) < omega_min) ++j_lo;
    while (j_hi > 0 && omega_grid(j_hi - 1) > omega_max) --j_hi;
    auto loss = [&]() {
        double l = 0.0;
        for (Eigen::Index j = j_lo; j < j_hi; ++j) {
            const double r = std::log(model_at(j) + 1e-12) -
                             std::log(pgram(j) + 1e-12);
            l += r * r;
        }
        return l;
    };

    // Variance by level matching at the channel center: the pair factor
    // accounts for the merged negative-frequency image of near-DC channels.
    auto refit_variances = [&]() {
        for (Eigen::Index d = 0; d < d_count; ++d) {
            const double lam = rate(d);
            double level = 0.0;
            Eigen::Index n_local = 0;
            for (Eigen::Index j = j_lo; j < j_hi; ++j) {
                if (std::abs(omega_grid(j) - omega(d)) <= lam) {
                    level += pgram(j);
                    ++n_local;
                }
            }
            if (n_local == 0) continue;
            level /= static_cast<double>(n_local);
            const double pair_factor =
                1.0 + lam * lam / (lam * lam + 4.0 * omega(d) * omega(d));
            var(d) = std::max(level * lam / pair_factor, 1e-10);
        }
    };
    refit_variances();

    for (int sweep = 0; sweep < sweeps; ++sweep) {
        for (Eigen::Index d = 0; d < d_count; ++d) {
            // center frequency, bounded by neighbor midpoints
            const double lo =
                d == 0 ? omega_min : 0.5 * (omega(d - 1) + omega(d));
            const double hi = d == d_count - 1
                                  ? omega_max
                                  : 0.5 * (omega(d) + omega(d + 1));
            omega(d) = detail::golden_min(
                [&](double w) {
                    const double keep = omega(d);
                    omega(d) = w;
                    const double l = loss();
                    omega(d) = keep;
                    return l;
                },
                lo, hi);
        }
        // shared bandwidth: one coordinate for the whole bank, which keeps
        // channels from trading coverage on featureless spectra
        const double shared = std::exp(detail::golden_min(
            [&](double lr) {
                const VectorXd keep = rate;
                rate.setConstant(std::exp(lr));
                const double l = loss();
                rate = keep;
                return l;
            },
            std::log(rate_lo), std::log(rate_hi)));
        rate.setConstant(shared);
        refit_variances();
    }

    // assemble, sorted ascending in omega with a strictness nudge
    std::vector<Eigen::Index> order(static_cast<std::size_t>(d_count));
    for (Eigen::Index d = 0; d < d_count; ++d)
        order[static_cast<std::size_t>(d)] = d;
    std::sort(order.begin(), order.end(),
              [&](Eigen::Index a, Eigen::Index b) { return omega(a) < omega(b); });
    SubbandFit fit;
    fit.noise_floor = std::max(pgram.minCoeff(), 1e-12);
    double prev = 0.0;
    for (Eigen::Index d : order) {
        double w = std::max(omega(d), prev + 1e-9);
        prev = w;
        fit.kernels.push_back({MaternFamily::Matern12, 1.0 / rate(d), var(d),
                               std::min(w, M_PI)});
    }
    return fit;
}

// Probabilistic spectrogram: linear (unit-amplitude) Kalman smoother over
// the subband stack; entry (d, k) = posterior mean^2 + variance of z_d.
inline MatrixXd linear_tf_spectrogram(const VectorXd& y,
                                      const std::vector<KernelSpec>& subbands,
                                      double sigma_y2) {
    if (subbands.empty())
        throw ConfigError("linear_tf_spectrogram: no subbands");
    DiscreteModel model;
    model.dt = 1.0;
    Eigen::Index m = 0;
    std::vector<LtiSde> sdes;
    for (const auto& k : subbands) {
        sdes.push_back(kernel_sde(k));
        m += sdes.back().dim();
    }
    model.A = MatrixXd::Zero(m, m);
    model.Q = MatrixXd::Zero(m, m);
    model.Pinf = MatrixXd::Zero(m, m);
    model.layout.state_dim = m;
    Eigen::Index off = 0;
    for (const auto& sde : sdes) {
        const Eigen::Index dim = sde.dim();
        auto [a, q] = discretize(sde.F, sde.Pinf, 1.0);
        model.A.block(off, off, dim, dim) = a;
        model.Q.block(off, off, dim, dim) = q;
        model.Pinf.block(off, off, dim, dim) = sde.Pinf;
        model.layout.subbands.push_back({off, dim, off});
        off += dim;
    }
    Eigen::RowVectorXd h = Eigen::RowVectorXd::Zero(m);
    for (const auto& slot : model.layout.subbands) h(slot.measured) = 1.0;

    const LinearSmootherResult sm =
        linear_smoother(model, h, y, std::max(sigma_y2, 1e-12));
    const Eigen::Index d_count =
        static_cast<Eigen::Index>(subbands.size());
    MatrixXd spect(d_count, y.size());
    for (Eigen::Index k = 0; k < y.size(); ++k) {
        for (Eigen::Index d = 0; d < d_count; ++d) {
            const Eigen::Index c = model.layout.subbands[d].measured;
            const double mu = sm.smoothed[k].m(c);
            spect(d, k) = mu * mu + sm.smoothed[k].P(c, c);
        }
    }
    return spect;
}

struct NmfResult {
    MatrixXd W; // D x N
    MatrixXd G; // N x T
    std::vector<double> objective; // Euclidean divergence per iteration
};

// Euclidean-divergence NMF by multiplicative updates; the objective is
// non-increasing per iteration.
inline NmfResult nmf_multiplicative(const MatrixXd& a, Eigen::Index n_comp,
                                    int iterations, std::uint64_t seed = 1) {
    if ((a.array() < 0.0).any())
        throw ConfigError("nmf_multiplicative: input must be nonnegative");
    if (n_comp < 1 || n_comp > a.rows())
        throw ConfigError("nmf_multiplicative: need 1 <= N <= D");
    const Eigen::Index d_count = a.rows(), t_count = a.cols();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.2, 1.0);
    const double scale =
        std::sqrt(std::max(a.mean(), 1e-12) / static_cast<double>(n_comp));
    NmfResult r;
    r.W.resize(d_count, n_comp);
    r.G.resize(n_comp, t_count);
    for (Eigen::Index i = 0; i < d_count; ++i)
        for (Eigen::Index j = 0; j < n_comp; ++j) r.W(i, j) = scale * unif(rng);
    for (Eigen::Index i = 0; i < n_comp; ++i)
        for (Eigen::Index j = 0; j < t_count; ++j) r.G(i, j) = scale * unif(rng);

    const double eps = 1e-12;
    r.objective.reserve(static_cast<std::size_t>(iterations));
    for (int it = 0; it < iterations; ++it) {
        r.G.array() *= (r.W.transpose() * a).array() /
                       ((r.W.transpose() * r.W) * r.G).array().max(eps);
        r.W.array() *= (a * r.G.transpose()).array() /
                       (r.W * (r.G * r.G.transpose())).array().max(eps);
        r.objective.push_back((a - r.W * r.G).squaredNorm());
    }
    return r;
}

struct ModulatorInit {
    std::vector<KernelSpec> kernels; // Matern-5/2 modulators
    MatrixXd g0;                     // N x T softplus-inverse trajectories
};

// Map the NMF temporal basis to modulator hyperparameters: lengthscales
// from the autocorrelation decay of each row, softplus-inverse rows as
// starting trajectories.
inline ModulatorInit init_modulators(const MatrixXd& g_rows) {
    const Eigen::Index n_count = g_rows.rows();
    const Eigen::Index t_count = g_rows.cols();
    ModulatorInit out;
    out.g0.resize(n_count, t_count);
    for (Eigen::Index n = 0; n < n_count; ++n) {
        for (Eigen::Index k = 0; k < t_count; ++k)
            out.g0(n, k) = softplus_inverse(g_rows(n, k));

        const VectorXd row = out.g0.row(n).transpose();
        const double mean = row.mean();
        const VectorXd c = row.array() - mean;
        const double denom = std::max(c.squaredNorm(), 1e-12);
        Eigen::Index lag_e = t_count - 1;
        for (Eigen::Index lag = 1; lag < t_count - 1; ++lag) {
            double acc = 0.0;
            for (Eigen::Index k = 0; k + lag < t_count; ++k)
                acc += c(k) * c(k + lag);
            if (acc / denom < std::exp(-1.0)) {
                lag_e = lag;
                break;
            }
        }
        // Matern-5/2 correlation hits 1/e near sqrt(5) tau / ell = 2.92
        const double ell = std::max(2.0, std::sqrt(5.0) * lag_e / 2.92);
        const double variance =
            std::max(c.squaredNorm() / std::max<Eigen::Index>(t_count - 1, 1),
                     1e-4);
        out.kernels.push_back({MaternFamily::Matern52, ell, variance});
    }
    return out;
}

// Packed hyperparameters: positivity through logs, frequencies clamped to
// (0, pi). Layout: log sigma_y2, then per subband [log omega, log ell,
// log s2], per modulator [log ell, log s2], then log W row-major.
struct HyperParams {
    std::vector<KernelSpec> subbands;
    std::vector<KernelSpec> modulators;
    MatrixXd W;
    double sigma_y2 = 1e-4;

    Eigen::Index packed_size() const {
        return 1 + 3 * static_cast<Eigen::Index>(subbands.size()) +
               2 * static_cast<Eigen::Index>(modulators.size()) + W.size();
    }

    VectorXd pack() const {
        VectorXd p(packed_size());
        Eigen::Index i = 0;
        p(i++) = std::log(std::max(sigma_y2, 1e-12));
        for (const auto& k : subbands) {
            p(i++) = std::log(std::max(k.cosine_freq, 1e-9));
            p(i++) = std::log(k.lengthscale);
            p(i++) = std::log(k.variance);
        }
        for (const auto& k : modulators) {
            p(i++) = std::log(k.lengthscale);
            p(i++) = std::log(k.variance);
        }
        for (Eigen::Index r = 0; r < W.rows(); ++r)
            for (Eigen::Index c = 0; c < W.cols(); ++c)
                p(i++) = std::log(std::max(W(r, c), 1e-8));
        return p;
    }

    static HyperParams unpack(const VectorXd& p, const HyperParams& like) {
        HyperParams out = like;
        Eigen::Index i = 0;
        out.sigma_y2 = std::exp(p(i++));
        for (auto& k : out.subbands) {
            k.cosine_freq =
                std::clamp(std::exp(p(i++)), 1e-9, M_PI - 1e-9);
            k.lengthscale = std::exp(p(i++));
            k.variance = std::exp(p(i++));
        }
        for (auto& k : out.modulators) {
            k.lengthscale = std::exp(p(i++));
            k.variance = std::exp(p(i++));
        }
        for (Eigen::Index r = 0; r < out.W.rows(); ++r)
            for (Eigen::Index c = 0; c < out.W.cols(); ++c)
                out.W(r, c) = std::exp(p(i++));
        return out;
    }

    ModelSpec to_model_spec(double dt = 1.0) const {
        ModelSpec spec;
        spec.D = static_cast<Eigen::Index>(subbands.size());
        spec.N = static_cast<Eigen::Index>(modulators.size());
        spec.W = W;
        spec.subband_kernels = subbands;
        spec.modulator_kernels = modulators;
        spec.sigma_y2 = sigma_y2;
        spec.dt = dt;
        return spec;
    }
};

struct OptimizeOptions {
    int max_evaluations = 200;
    double initial_step = 0.3;   // simplex spread in log space
    double tolerance = 1e-4;     // simplex objective spread for early stop
    std::vector<bool> frozen;    // packed mask; true = hold at start value
};

struct OptimizeResult {
    HyperParams params;
    double objective = 0.0;      // best sum log Z_k (ADF approximation)
    int evaluations = 0;
};

// Maximize the single-sweep EP (ADF) approximation of log p(y | theta) with
// a Nelder-Mead simplex over the free packed coordinates.
inline OptimizeResult optimize_hypers(const HyperParams& start,
                                      const VectorXd& y, const EpConfig& base,
                                      const OptimizeOptions& opts = {}) {
    const VectorXd p0 = start.pack();
    const Eigen::Index full = p0.size();
    std::vector<Eigen::Index> free_idx;
    for (Eigen::Index i = 0; i < full; ++i) {
        const bool frozen = i < static_cast<Eigen::Index>(opts.frozen.size())
                                ? opts.frozen[static_cast<std::size_t>(i)]
                                : false;
        if (!frozen) free_idx.push_back(i);
    }
    if (free_idx.empty())
        throw ConfigError("optimize_hypers: all parameters frozen");
    const Eigen::Index n = static_cast<Eigen::Index>(free_idx.size());

    int evals = 0;
    auto objective = [&](const VectorXd& x) {
        ++evals;
        VectorXd p = p0;
        for (Eigen::Index i = 0; i < n; ++i) p(free_idx[i]) = x(i);
        try {
            const HyperParams hp = HyperParams::unpack(p, start);
            const ModelSpec spec = hp.to_model_spec();
            const DiscreteModel model = build_discrete(spec);
            EpConfig cfg = base;
            cfg.iterations = 1; // single-sweep EP
            const EpResult r = ep_smoother(spec, model, y, cfg);
            if (!std::isfinite(r.marginals.log_marginal))
                return std::numeric_limits<double>::infinity();
            return -r.marginals.log_marginal;
        } catch (const std::exception&) {
            return std::numeric_limits<double>::infinity();
        }
    };

    VectorXd x0(n);
    for (Eigen::Index i = 0; i < n; ++i) x0(i) = p0(free_idx[i]);
    const double f0 = objective(x0);
    if (!std::isfinite(f0))
        throw NumericalError("optimize_hypers: objective non-finite at start");

    // Nelder-Mead
    std::vector<VectorXd> xs(static_cast<std::size_t>(n + 1), x0);
    std::vector<double> fs(static_cast<std::size_t>(n + 1), f0);
    for (Eigen::Index i = 0; i < n; ++i) {
        xs[static_cast<std::size_t>(i + 1)](i) += opts.initial_step;
        fs[static_cast<std::size_t>(i + 1)] =
            objective(xs[static_cast<std::size_t>(i + 1)]);
    }
    auto order = [&]() {
        std::vector<std::size_t> idx(xs.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(),
                  [&](std::size_t a, std::size_t b) { return fs[a] < fs[b]; });
        std::vector<VectorXd> x2;
        std::vector<double> f2;
        for (std::size_t i : idx) {
            x2.push_back(xs[i]);
            f2.push_back(fs[i]);
        }
        xs = std::move(x2);
        fs = std::move(f2);
    };
    order();
    while (evals < opts.max_evaluations &&
           fs.back() - fs.front() > opts.tolerance) {
        VectorXd centroid = VectorXd::Zero(n);
        for (std::size_t i = 0; i + 1 < xs.size(); ++i) centroid += xs[i];
        centroid /= static_cast<double>(n);
        const VectorXd reflect = centroid + (centroid - xs.back());
        const double fr = objective(reflect);
        if (fr < fs.front()) {
            const VectorXd expand = centroid + 2.0 * (centroid - xs.back());
            const double fe = objective(expand);
            if (fe < fr) {
                xs.back() = expand;
                fs.back() = fe;
            } else {
                xs.back() = reflect;
                fs.back() = fr;
            }
        } else if (fr < fs[fs.size() - 2]) {
            xs.back() = reflect;
            fs.back() = fr;
        } else {
            const VectorXd contract =
                centroid + 0.5 * (xs.back() - centroid);
            const double fc = objective(contract);
            if (fc < fs.back()) {
                xs.back() = contract;
                fs.back() = fc;
            } else {
                for (std::size_t i = 1; i < xs.size(); ++i) {
                    xs[i] = xs.front() + 0.5 * (xs[i] - xs.front());
                    fs[i] = objective(xs[i]);
                }
            }
        }
        order();
    }

    VectorXd p_best = p0;
    for (Eigen::Index i = 0; i < n; ++i) p_best(free_idx[i]) = xs.front()(i);
    OptimizeResult out;
    out.params = HyperParams::unpack(p_best, start);
    // sorted ascending center frequencies
    std::sort(out.params.subbands.begin(), out.params.subbands.end(),
              [](const KernelSpec& a, const KernelSpec& b) {
                  return a.cosine_freq < b.cosine_freq;
              });
    out.objective = -fs.front();
    out.evaluations = evals;
    return out;
}

} // namespace gtfnmf
