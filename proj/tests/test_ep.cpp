#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gtfnmf/ep.hpp"
#include "oracles.hpp"

using namespace gtfnmf;

namespace {

ModelSpec make_spec(Eigen::Index d, Eigen::Index n, std::uint64_t seed = 1,
                    double sigma_y2 = 0.05) {
    ModelSpec spec;
    spec.D = d;
    spec.N = n;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.2, 1.5);
    spec.W.resize(d, n);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < n; ++j) spec.W(i, j) = unif(rng);
    for (Eigen::Index i = 0; i < d; ++i)
        spec.subband_kernels.push_back(
            {MaternFamily::Matern12, 20.0 + 5.0 * i, 1.0,
             0.2 + 0.5 * i / std::max<double>(1.0, d)});
    for (Eigen::Index i = 0; i < n; ++i)
        spec.modulator_kernels.push_back(
            {MaternFamily::Matern52, 150.0 + 40.0 * i, 1.0});
    spec.sigma_y2 = sigma_y2;
    return spec;
}

Cavity random_cavity(Eigen::Index d, Eigen::Index n, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> vdist(0.2, 1.5);
    Cavity cav;
    cav.mean.resize(d + n);
    cav.variance.resize(d + n);
    for (Eigen::Index i = 0; i < d + n; ++i) {
        cav.mean(i) = gauss(rng);
        cav.variance(i) = vdist(rng);
    }
    cav.usable.assign(static_cast<std::size_t>(d + n), true);
    return cav;
}

} // namespace

TEST(CavityFromMarginal, EmptySiteReturnsMarginal) {
    VectorXd mu = VectorXd::Constant(1, 0.4);
    VectorXd var = VectorXd::Constant(1, 1.7);
    const Cavity c = cavity_from_marginal(mu, var, VectorXd::Zero(1),
                                          VectorXd::Zero(1), 1.0);
    EXPECT_TRUE(c.usable[0]);
    EXPECT_NEAR(c.mean(0), 0.4, 1e-14);
    EXPECT_NEAR(c.variance(0), 1.7, 1e-14);
}

TEST(CavityFromMarginal, KnownValues) {
    VectorXd mu = VectorXd::Constant(1, 1.0);
    VectorXd var = VectorXd::Constant(1, 2.0);
    VectorXd nu = VectorXd::Constant(1, 0.5);
    VectorXd tau = VectorXd::Constant(1, 0.25);
    const Cavity c1 = cavity_from_marginal(mu, var, nu, tau, 1.0);
    EXPECT_NEAR(c1.variance(0), 4.0, 1e-12);
    EXPECT_NEAR(c1.mean(0), 0.0, 1e-12);

    const Cavity c2 = cavity_from_marginal(mu, var, nu, tau, 0.5);
    EXPECT_NEAR(c2.variance(0), 8.0 / 3.0, 1e-12);
    EXPECT_NEAR(c2.mean(0), 2.0 / 3.0, 1e-12);
}

TEST(CavityFromMarginal, NonpositivePrecisionFlagged) {
    VectorXd mu = VectorXd::Zero(1);
    VectorXd var = VectorXd::Constant(1, 2.0);
    VectorXd nu = VectorXd::Zero(1);
    VectorXd tau = VectorXd::Constant(1, 0.6); // 1/2 - 0.6 < 0
    const Cavity c = cavity_from_marginal(mu, var, nu, tau, 1.0);
    EXPECT_FALSE(c.usable[0]);
}

TEST(TiltedLogZ, ZeroWeightsGiveNoiseDensity) {
    ModelSpec spec = make_spec(2, 1);
    spec.W.setZero();
    std::mt19937_64 rng(5);
    Cavity cav = random_cavity(2, 1, rng);
    const double y = 0.7;
    const QuadratureRule rule = default_rule(1);
    const TiltedMoments tm =
        tilted_log_z(cav, y, spec, 1.0, rule, TiltedVariance::PowerScaled);
    ASSERT_TRUE(tm.valid);
    const double expected =
        -0.5 * (std::log(2.0 * M_PI * spec.sigma_y2) +
                y * y / spec.sigma_y2);
    EXPECT_NEAR(tm.log_z, expected, 1e-10);
    EXPECT_LT(tm.dz.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(TiltedLogZ, DerivativesMatchFiniteDifferences) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> ydist(-1.5, 1.5);
    for (int rep = 0; rep < 40; ++rep) {
        const Eigen::Index d = 1 + (rep % 3);
        const Eigen::Index n = 1 + (rep % 2);
        ModelSpec spec = make_spec(d, n, 100 + rep);
        const QuadratureRule rule =
            gauss_hermite_tensor(static_cast<int>(n), 20);
        Cavity cav = random_cavity(d, n, rng);
        const double y = ydist(rng);
        const double eta = (rep % 2) ? 1.0 : 0.75;

        const TiltedMoments tm =
            tilted_log_z(cav, y, spec, eta, rule, TiltedVariance::PowerScaled);
        ASSERT_TRUE(tm.valid);

        for (Eigen::Index i = 0; i < d + n; ++i) {
            auto logz_at = [&](double mu_i) {
                Cavity shifted = cav;
                shifted.mean(i) = mu_i;
                return tilted_log_z(shifted, y, spec, eta, rule,
                                    TiltedVariance::PowerScaled)
                    .log_z;
            };
            // second differences need a wider step to beat round-off
            const double fd1 =
                oracle::central_diff(logz_at, cav.mean(i), 1e-5);
            const double fd2 =
                oracle::central_diff2(logz_at, cav.mean(i), 1e-3);
            EXPECT_LT(std::abs(tm.dz(i) - fd1) /
                          std::max({std::abs(fd1), std::abs(tm.dz(i)), 1e-3}),
                      1e-4)
                << "rep=" << rep << " latent=" << i;
            EXPECT_LT(std::abs(tm.d2z(i) - fd2) /
                          std::max({std::abs(fd2), std::abs(tm.d2z(i)), 1e-3}),
                      1e-4)
                << "rep=" << rep << " latent=" << i;
        }
    }
}

// Agreement of the cheap rule with the order-20 reference on cavities of
// the size EP actually produces (modulator cavity variances well below the
// unit prior variance once data has been absorbed).
TEST(TiltedLogZ, Degree9MatchesTensorGaussHermite) {
    std::mt19937_64 rng(23);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> ydist(-1.0, 1.0);
    std::uniform_real_distribution<double> vdist(0.05, 0.35);
    const Eigen::Index d = 2, n = 2;
    ModelSpec spec = make_spec(d, n, 7);
    const QuadratureRule deg9 = degree9_rule(static_cast<int>(n));
    const QuadratureRule gh20 = gauss_hermite_tensor(static_cast<int>(n), 20);
    for (int rep = 0; rep < 50; ++rep) {
        Cavity cav;
        cav.mean.resize(d + n);
        cav.variance.resize(d + n);
        for (Eigen::Index i = 0; i < d + n; ++i) {
            cav.mean(i) = gauss(rng);
            cav.variance(i) = vdist(rng);
        }
        cav.usable.assign(static_cast<std::size_t>(d + n), true);
        const double y = ydist(rng);
        const double a = tilted_log_z(cav, y, spec, 0.75, deg9,
                                      TiltedVariance::PowerScaled)
                             .log_z;
        const double b = tilted_log_z(cav, y, spec, 0.75, gh20,
                                      TiltedVariance::PowerScaled)
                             .log_z;
        EXPECT_LT(std::abs(a - b) / std::max(1.0, std::abs(b)), 1e-4);
    }
}

TEST(TiltedLogZ, PowerScaledMatchesMonteCarlo) {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> ydist(-1.0, 1.0);
    for (int rep = 0; rep < 4; ++rep) {
        const Eigen::Index d = 1 + rep % 2, n = 1 + rep % 2;
        ModelSpec spec = make_spec(d, n, 50 + rep, 0.2);
        Cavity cav = random_cavity(d, n, rng);
        const double y = ydist(rng);
        const double eta = (rep % 2) ? 0.75 : 1.0;
        const QuadratureRule rule =
            gauss_hermite_tensor(static_cast<int>(n), 20);
        const double logz = tilted_log_z(cav, y, spec, eta, rule,
                                         TiltedVariance::PowerScaled)
                                .log_z;
        const auto mc = oracle::mc_tilted_z(
            cav.mean.head(d), cav.variance.head(d), cav.mean.tail(n),
            cav.variance.tail(n), y, spec.W, spec.sigma_y2, eta, 400000,
            900 + rep);
        EXPECT_NEAR(std::exp(logz), mc.value, 3.5 * mc.stderr_)
            << "rep=" << rep;
    }
}

TEST(SiteUpdate, TrivialCases) {
    double nu = 0.3, tau = 0.5;
    // uninformative tilt, full update
    EXPECT_EQ(damped_site_update(0.0, 0.0, 0.1, 1.0, 1.0, 1.0, nu, tau),
              SiteUpdateOutcome::Updated);
    EXPECT_NEAR(nu, 0.0, 1e-15);
    EXPECT_NEAR(tau, 0.0, 1e-15);

    // zero damping leaves the site unchanged
    nu = 0.3;
    tau = 0.5;
    EXPECT_EQ(damped_site_update(0.2, -0.4, 0.1, 1.0, 0.0, 1.0, nu, tau),
              SiteUpdateOutcome::Updated);
    EXPECT_NEAR(nu, 0.3, 1e-15);
    EXPECT_NEAR(tau, 0.5, 1e-15);
}

TEST(SiteUpdate, ConvexCombination) {
    // target term 2: c = -2/(1 + zeta*...) arrange zeta = 0 so tau_t = -c/eta
    double nu = 0.0, tau = 1.0;
    EXPECT_EQ(damped_site_update(0.0, -2.0, 0.0, 0.0, 0.1, 1.0, nu, tau),
              SiteUpdateOutcome::Updated);
    EXPECT_NEAR(tau, 0.9 * 1.0 + 0.1 * 2.0, 1e-14);
}

TEST(SiteUpdate, DeflectedUpdateSkipped) {
    double nu = 0.1, tau = 0.2;
    // 1 + zeta * c <= 0
    EXPECT_EQ(damped_site_update(0.0, -2.0, 0.0, 0.6, 1.0, 1.0, nu, tau),
              SiteUpdateOutcome::Deflected);
    EXPECT_NEAR(nu, 0.1, 1e-15);
    EXPECT_NEAR(tau, 0.2, 1e-15);
}

TEST(SiteUpdate, NegativePrecisionClipsToVacuous) {
    double nu = 0.2, tau = 0.01;
    // c > 0 makes the undamped target precision negative
    EXPECT_EQ(damped_site_update(0.0, 0.5, 0.0, 0.5, 1.0, 1.0, nu, tau),
              SiteUpdateOutcome::Clipped);
    EXPECT_EQ(nu, 0.0);
    EXPECT_EQ(tau, 0.0);
}

TEST(SiteUpdate, MonotoneInDamping) {
    const double b = 0.8, c = -0.6, mu = 0.2, zeta = 0.9, eta = 0.75;
    const double tau_target = -c / (1.0 + zeta * c) / eta;
    double prev_dist = std::numeric_limits<double>::infinity();
    for (double rho : {0.1, 0.3, 0.5, 0.8, 1.0}) {
        double nu = 0.05, tau = 0.4;
        ASSERT_EQ(damped_site_update(b, c, mu, zeta, rho, eta, nu, tau),
                  SiteUpdateOutcome::Updated);
        const double dist = std::abs(tau - tau_target);
        EXPECT_LT(dist, prev_dist);
        prev_dist = dist;
    }
}

// Linear regime with a single subband: the likelihood factorizes over the
// sites, the first iteration reproduces the exact Kalman smoother, and the
// sites are exact fixed points from pass 2 on.
TEST(EpSmoother, LinearRegimeMatchesExactSmoother) {
    ModelSpec spec = make_spec(1, 1, 3, 0.09);
    spec.fixed_amplitudes = VectorXd::Constant(1, 1.3);
    const DiscreteModel model = build_discrete(spec);

    std::mt19937_64 rng(4);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const Eigen::Index T = 120;
    VectorXd y(T);
    for (Eigen::Index k = 0; k < T; ++k) y(k) = gauss(rng);

    EpConfig cfg;
    cfg.eta = 1.0;
    cfg.damping = 1.0;
    cfg.iterations = 1;
    cfg.rule = default_rule(spec.N);
    const EpResult ep = ep_smoother(spec, model, y, cfg);

    Eigen::RowVectorXd h = Eigen::RowVectorXd::Zero(model.dim());
    h(model.layout.subbands[0].measured) = 1.3;
    const LinearSmootherResult exact =
        linear_smoother(model, h, y, spec.sigma_y2);

    for (Eigen::Index k = 0; k < T; ++k) {
        EXPECT_NEAR(ep.marginals.z_mean(k, 0),
                    exact.smoothed[k].m(model.layout.subbands[0].measured),
                    1e-8);
        EXPECT_NEAR(ep.marginals.z_var(k, 0),
                    exact.smoothed[k].P(model.layout.subbands[0].measured,
                                        model.layout.subbands[0].measured),
                    1e-8);
    }
    EXPECT_NEAR(ep.marginals.log_marginal, exact.log_likelihood, 1e-6);

    // pass 2: the exact Gaussian sites no longer move
    EpConfig cfg2 = cfg;
    cfg2.iterations = 2;
    cfg2.convergence_tol = 0.0;
    const EpResult ep2 = ep_smoother(spec, model, y, cfg2);
    EXPECT_LT((ep2.sites.nu - ep.sites.nu).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((ep2.sites.tau - ep.sites.tau).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(EpSmoother, PosteriorVariancesNonnegativeAndFiniteLogZ) {
    ModelSpec spec = make_spec(3, 2, 9, 0.05);
    const LatentSample data = sample_generative(spec, 400, 21);
    const DiscreteModel model = build_discrete(spec);
    EpConfig cfg;
    cfg.rule = default_rule(spec.N);
    cfg.iterations = 8;
    const EpResult ep = ep_smoother(spec, model, data.y, cfg);
    EXPECT_TRUE(std::isfinite(ep.marginals.log_marginal));
    EXPECT_GE(ep.marginals.z_var.minCoeff(), 0.0);
    EXPECT_GE(ep.marginals.g_var.minCoeff(), 0.0);
    EXPECT_GE(ep.marginals.recon_var.minCoeff(), 0.0);
    // robust-EP bookkeeping: skipped updates stay rare on clean data
    EXPECT_LT(static_cast<double>(ep.marginals.skipped_updates),
              0.01 * static_cast<double>(ep.marginals.attempted_updates));
}

TEST(EpSmoother, MissingStepsWidenPosterior) {
    ModelSpec spec = make_spec(2, 1, 13, 0.01);
    const LatentSample data = sample_generative(spec, 300, 8);
    const DiscreteModel model = build_discrete(spec);
    std::vector<bool> observed(300, true);
    for (int k = 140; k < 170; ++k) observed[k] = false;
    EpConfig cfg;
    cfg.rule = default_rule(spec.N);
    cfg.iterations = 6;
    const EpResult ep = ep_smoother(spec, model, data.y, cfg, observed);
    // variance at the gap center exceeds variance at observed neighbors
    EXPECT_GT(ep.marginals.z_var(155, 0), ep.marginals.z_var(130, 0));
    EXPECT_GT(ep.marginals.z_var(155, 0), ep.marginals.z_var(180, 0));
    // sites at missing steps stay empty
    for (int k = 140; k < 170; ++k) {
        EXPECT_EQ(ep.sites.tau.row(k).cwiseAbs().maxCoeff(), 0.0);
    }
}

TEST(EpSmoother, ReconstructionTracksObservationsWhenNoiseTiny) {
    ModelSpec spec = make_spec(2, 1, 29, 1e-5);
    const LatentSample data = sample_generative(spec, 250, 77);
    const DiscreteModel model = build_discrete(spec);
    EpConfig cfg;
    cfg.rule = default_rule(spec.N);
    cfg.iterations = 15;
    cfg.damping = 0.3;
    const EpResult ep = ep_smoother(spec, model, data.y, cfg);
    const double rmse = std::sqrt(
        (ep.marginals.reconstruction - data.y).squaredNorm() / data.y.size());
    EXPECT_LT(rmse, 0.05);
}
