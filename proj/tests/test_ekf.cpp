#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gtfnmf/ekf.hpp"
#include "oracles.hpp"

using namespace gtfnmf;

namespace {

ModelSpec nonlinear_spec(Eigen::Index d, Eigen::Index n, std::uint64_t seed,
                         double sigma_y2) {
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
            {MaternFamily::Matern12, 25.0 + 6.0 * i, 1.0,
             0.25 + 0.4 * i / std::max<double>(1.0, d)});
    for (Eigen::Index i = 0; i < n; ++i)
        spec.modulator_kernels.push_back(
            {MaternFamily::Matern52, 180.0 + 50.0 * i, 1.0});
    spec.sigma_y2 = sigma_y2;
    return spec;
}

} // namespace

// EKF = exact Kalman smoother when the measurement is linear.
TEST(IekfSmoother, LinearCaseEqualsKalmanSmoother) {
    ModelSpec spec = nonlinear_spec(3, 1, 2, 0.04);
    VectorXd amps(3);
    amps << 0.8, 1.1, 0.6;
    spec.fixed_amplitudes = amps;
    const DiscreteModel model = build_discrete(spec);

    std::mt19937_64 rng(14);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const Eigen::Index T = 180;
    VectorXd y(T);
    for (Eigen::Index k = 0; k < T; ++k) y(k) = gauss(rng);

    const PosteriorMarginals ekf = iekf_smoother(spec, model, y, 1);

    Eigen::RowVectorXd h = Eigen::RowVectorXd::Zero(model.dim());
    for (Eigen::Index d = 0; d < 3; ++d)
        h(model.layout.subbands[d].measured) = amps(d);
    const LinearSmootherResult exact =
        linear_smoother(model, h, y, spec.sigma_y2);

    EXPECT_NEAR(ekf.log_marginal, exact.log_likelihood, 1e-10);
    for (Eigen::Index k = 0; k < T; ++k) {
        for (Eigen::Index d = 0; d < 3; ++d) {
            const Eigen::Index c = model.layout.subbands[d].measured;
            EXPECT_NEAR(ekf.z_mean(k, d), exact.smoothed[k].m(c), 1e-10);
            EXPECT_NEAR(ekf.z_var(k, d), exact.smoothed[k].P(c, c), 1e-10);
        }
    }
}

// Relinearization around the smoothed trajectory is a fixed point on
// linear models.
TEST(IekfSmoother, IterationIsFixedPointOnLinearModels) {
    ModelSpec spec = nonlinear_spec(2, 1, 5, 0.1);
    spec.fixed_amplitudes = VectorXd::Ones(2);
    const DiscreteModel model = build_discrete(spec);
    std::mt19937_64 rng(8);
    std::normal_distribution<double> gauss(0.0, 1.0);
    VectorXd y(120);
    for (Eigen::Index k = 0; k < y.size(); ++k) y(k) = gauss(rng);

    const PosteriorMarginals one = iekf_smoother(spec, model, y, 1);
    const PosteriorMarginals ten = iekf_smoother(spec, model, y, 10);
    EXPECT_NEAR(one.log_marginal, ten.log_marginal, 1e-10);
    EXPECT_LT((one.z_mean - ten.z_mean).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((one.z_var - ten.z_var).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(IekfSmoother, MissingStepsWidenPosterior) {
    ModelSpec spec = nonlinear_spec(2, 1, 11, 0.01);
    const LatentSample data = sample_generative(spec, 300, 31);
    const DiscreteModel model = build_discrete(spec);
    std::vector<bool> observed(300, true);
    for (int k = 130; k < 160; ++k) observed[k] = false;
    const PosteriorMarginals pm =
        iekf_smoother(spec, model, data.y, 5, observed);
    EXPECT_GT(pm.z_var(145, 0), pm.z_var(110, 0));
    EXPECT_GT(pm.z_var(145, 0), pm.z_var(190, 0));
}

TEST(IekfSmoother, CovariancesFiniteAndNonnegative) {
    ModelSpec spec = nonlinear_spec(3, 2, 19, 0.02);
    const LatentSample data = sample_generative(spec, 250, 3);
    const DiscreteModel model = build_discrete(spec);
    const PosteriorMarginals pm = iekf_smoother(spec, model, data.y, 8);
    EXPECT_TRUE(std::isfinite(pm.log_marginal));
    EXPECT_GE(pm.z_var.minCoeff(), 0.0);
    EXPECT_GE(pm.g_var.minCoeff(), 0.0);
    EXPECT_TRUE(pm.reconstruction.allFinite());
}

TEST(IekfSmoother, RejectsBadIterationCount) {
    ModelSpec spec = nonlinear_spec(1, 1, 1, 0.1);
    const DiscreteModel model = build_discrete(spec);
    EXPECT_THROW(iekf_smoother(spec, model, VectorXd::Zero(10), 0),
                 ConfigError);
}
