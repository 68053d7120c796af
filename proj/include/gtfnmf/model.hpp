// The generative model: D quasi-periodic subbands z_d whose squared
// amplitudes are NMF-weighted softplus transforms of N slow modulators g_n,
//
//   y_k = sum_d a_d(t_k) z_d(t_k) + sigma_y eps_k,
//   a_d^2(t_k) = sum_n W_{d,n} softplus(g_n(t_k)).
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <random>

#include "gtfnmf/common.hpp"
#include "gtfnmf/kernels.hpp"

namespace gtfnmf {

// Floor applied to a_d inside divisions so Jacobians stay bounded when a
// channel's amplitude vanishes.
constexpr double kAmplitudeFloor = 1e-12;

struct ModelSpec {
    Eigen::Index D = 1;
    Eigen::Index N = 1;
    MatrixXd W;                          // D x N, entries >= 0
    std::vector<KernelSpec> subband_kernels;   // D, with cosine factor
    std::vector<KernelSpec> modulator_kernels; // N, pure Matern
    double sigma_y2 = 1e-4;
    double dt = 1.0;
    // When set, the measurement uses these constant channel amplitudes
    // instead of the modulator link; the model is then linear-Gaussian.
    std::optional<VectorXd> fixed_amplitudes;

    void validate() const {
        if (D < 1 || N < 1) throw ConfigError("ModelSpec: D and N must be >= 1");
        if (W.rows() != D || W.cols() != N)
            throw ConfigError("ModelSpec: W must be D x N");
        if ((W.array() < 0.0).any())
            throw ConfigError("ModelSpec: W entries must be >= 0");
        if (sigma_y2 < 0.0) throw ConfigError("ModelSpec: sigma_y2 must be >= 0");
        if (static_cast<Eigen::Index>(subband_kernels.size()) != D ||
            static_cast<Eigen::Index>(modulator_kernels.size()) != N)
            throw ConfigError("ModelSpec: kernel list sizes must match D, N");
        for (const auto& k : subband_kernels) {
            k.validate();
            if (!k.has_cosine())
                throw ConfigError("ModelSpec: subband kernels need a cosine factor");
        }
        for (const auto& k : modulator_kernels) {
            k.validate();
            if (k.has_cosine())
                throw ConfigError("ModelSpec: modulator kernels must be pure Matern");
        }
        if (fixed_amplitudes && fixed_amplitudes->size() != D)
            throw ConfigError("ModelSpec: fixed_amplitudes must have D entries");
    }

    bool linear() const { return fixed_amplitudes.has_value(); }
};

struct LatentSample {
    MatrixXd Z;   // D x T subband trajectories
    MatrixXd G;   // N x T modulator trajectories
    VectorXd y;   // length-T observations
    std::uint64_t seed = 0;
};

// softplus(g) = log(1 + e^g), overflow-safe.
inline double softplus(double g) {
    return std::max(g, 0.0) + std::log1p(std::exp(-std::abs(g)));
}

// d/dg softplus = logistic sigmoid, same overflow-safe style.
inline double softplus_deriv(double g) {
    if (g >= 0.0) return 1.0 / (1.0 + std::exp(-g));
    const double e = std::exp(g);
    return e / (1.0 + e);
}

// softplus^{-1}(v) = log(e^v - 1); input floored at 1e-6.
inline double softplus_inverse(double v) {
    v = std::max(v, 1e-6);
    if (v > 30.0) return v + std::log1p(-std::exp(-v));
    return std::log(std::expm1(v));
}

// a_d(g) = sqrt(sum_n W_{d,n} softplus(g_n)).
inline double amplitude(const VectorXd& g, const MatrixXd& w, Eigen::Index d) {
    double s = 0.0;
    for (Eigen::Index n = 0; n < w.cols(); ++n)
        s += w(d, n) * softplus(g(n));
    return std::sqrt(s);
}

inline DiscreteModel build_discrete(const ModelSpec& spec) {
    spec.validate();
    std::vector<LtiSde> subs, mods;
    subs.reserve(spec.D);
    mods.reserve(spec.N);
    for (const auto& k : spec.subband_kernels) subs.push_back(kernel_sde(k));
    for (const auto& k : spec.modulator_kernels) mods.push_back(kernel_sde(k));
    return stack_model(subs, mods, spec.dt);
}

namespace detail {

inline VectorXd read_subbands(const VectorXd& x, const StateLayout& layout) {
    VectorXd z(layout.num_subbands());
    for (Eigen::Index d = 0; d < z.size(); ++d)
        z(d) = x(layout.subbands[d].measured);
    return z;
}

inline VectorXd read_modulators(const VectorXd& x, const StateLayout& layout) {
    VectorXd g(layout.num_modulators());
    for (Eigen::Index n = 0; n < g.size(); ++n)
        g(n) = x(layout.modulators[n].measured);
    return g;
}

inline VectorXd amplitudes(const ModelSpec& spec, const VectorXd& g) {
    if (spec.fixed_amplitudes) return *spec.fixed_amplitudes;
    VectorXd a(spec.D);
    for (Eigen::Index d = 0; d < spec.D; ++d) a(d) = amplitude(g, spec.W, d);
    return a;
}

} // namespace detail

// h(x) = sum_d a_d(g(x)) z_d(x).
inline double measurement_mean(const VectorXd& x, const ModelSpec& spec,
                               const StateLayout& layout) {
    if (layout.num_subbands() != spec.D || layout.num_modulators() != spec.N)
        throw ConfigError("measurement_mean: layout does not match spec");
    const VectorXd z = detail::read_subbands(x, layout);
    const VectorXd g = detail::read_modulators(x, layout);
    return detail::amplitudes(spec, g).dot(z);
}

// Closed-form Jacobian of h over the state coordinates:
//   dh/dz_d = a_d,
//   dh/dg_n = sum_d z_d W_{d,n} sigmoid(g_n) / (2 a_d),
// zero elsewhere. a_d is floored so the g-partials stay finite; a W row of
// zeros contributes exactly zero.
inline Eigen::RowVectorXd measurement_jacobian(const VectorXd& x,
                                               const ModelSpec& spec,
                                               const StateLayout& layout) {
    if (layout.num_subbands() != spec.D || layout.num_modulators() != spec.N)
        throw ConfigError("measurement_jacobian: layout does not match spec");
    const VectorXd z = detail::read_subbands(x, layout);
    const VectorXd g = detail::read_modulators(x, layout);
    const VectorXd a = detail::amplitudes(spec, g);

    Eigen::RowVectorXd jac = Eigen::RowVectorXd::Zero(layout.state_dim);
    for (Eigen::Index d = 0; d < spec.D; ++d)
        jac(layout.subbands[d].measured) = a(d);
    if (spec.linear()) return jac;

    for (Eigen::Index n = 0; n < spec.N; ++n) {
        const double dpsi = softplus_deriv(g(n));
        double acc = 0.0;
        for (Eigen::Index d = 0; d < spec.D; ++d) {
            if (spec.W(d, n) == 0.0) continue;
            acc += z(d) * spec.W(d, n) * dpsi /
                   (2.0 * std::max(a(d), kAmplitudeFloor));
        }
        jac(layout.modulators[n].measured) = acc;
    }
    return jac;
}

// Exact ancestral sampling: x_0 ~ N(0, Pinf), x_k ~ N(A x_{k-1}, Q),
// y_k = h(x_k) + sigma_y eps_k. Deterministic given the seed.
inline LatentSample sample_generative(const ModelSpec& spec, Eigen::Index T,
                                      std::uint64_t seed) {
    if (T < 1) throw ConfigError("sample_generative: T must be >= 1");
    const DiscreteModel model = build_discrete(spec);
    const Eigen::Index m = model.dim();

    // Blockwise noise factors keep cross-block entries exactly zero.
    MatrixXd q_sqrt = MatrixXd::Zero(m, m);
    MatrixXd p0_sqrt = MatrixXd::Zero(m, m);
    auto fill_block = [&](const LatentSlot& slot) {
        const auto& o = slot.offset;
        const auto& d = slot.dim;
        q_sqrt.block(o, o, d, d) = psd_sqrt(model.Q.block(o, o, d, d));
        p0_sqrt.block(o, o, d, d) = psd_sqrt(model.Pinf.block(o, o, d, d));
    };
    for (const auto& s : model.layout.subbands) fill_block(s);
    for (const auto& s : model.layout.modulators) fill_block(s);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto draw = [&](Eigen::Index n) {
        VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v(i) = gauss(rng);
        return v;
    };

    LatentSample out;
    out.seed = seed;
    out.Z.resize(spec.D, T);
    out.G.resize(spec.N, T);
    out.y.resize(T);

    const double sigma_y = std::sqrt(spec.sigma_y2);
    VectorXd x = p0_sqrt * draw(m);
    for (Eigen::Index k = 0; k < T; ++k) {
        if (k > 0) x = model.A * x + q_sqrt * draw(m);
        out.Z.col(k) = detail::read_subbands(x, model.layout);
        out.G.col(k) = detail::read_modulators(x, model.layout);
        out.y(k) = measurement_mean(x, spec, model.layout) +
                   sigma_y * gauss(rng);
    }
    return out;
}

} // namespace gtfnmf
