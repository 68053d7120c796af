#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "gtfnmf/tasks.hpp"

using namespace gtfnmf;

namespace {

std::string temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::create_directories(dir);
    return dir.string();
}

HyperParams harmonic_params(Eigen::Index d, Eigen::Index n,
                            double base_omega, std::uint64_t seed) {
    HyperParams hp;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.4, 1.2);
    hp.W.resize(d, n);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < n; ++j) hp.W(i, j) = unif(rng);
    for (Eigen::Index i = 0; i < d; ++i)
        hp.subbands.push_back({MaternFamily::Matern12, 80.0, 1.0,
                               base_omega * (1.0 + static_cast<double>(i))});
    for (Eigen::Index i = 0; i < n; ++i)
        hp.modulators.push_back({MaternFamily::Matern52, 400.0, 1.0});
    hp.sigma_y2 = 1e-4;
    return hp;
}

EpConfig config_for(Eigen::Index n, int iterations = 10) {
    EpConfig cfg;
    cfg.rule = default_rule(n);
    cfg.iterations = iterations;
    return cfg;
}

} // namespace

TEST(ModelFile, SaveLoadRoundTrip) {
    const HyperParams hp = harmonic_params(3, 2, 0.3, 5);
    TrainedModel tm{hp, 16000.0};
    const std::string path =
        (std::filesystem::temp_directory_path() / "gtfnmf_model.txt").string();
    save_model(path, tm);
    const TrainedModel back = load_model(path);
    EXPECT_EQ(back.params.subbands.size(), 3u);
    EXPECT_EQ(back.params.modulators.size(), 2u);
    EXPECT_NEAR(back.params.sigma_y2, hp.sigma_y2, 1e-15);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_NEAR(back.params.subbands[i].cosine_freq,
                    hp.subbands[i].cosine_freq, 1e-15);
        EXPECT_NEAR(back.params.subbands[i].lengthscale,
                    hp.subbands[i].lengthscale, 1e-15);
    }
    EXPECT_LT((back.params.W - hp.W).cwiseAbs().maxCoeff(), 1e-15);
    std::remove(path.c_str());
}

TEST(TaskSimulate, DeterministicWithExpectedFiles) {
    const HyperParams hp = harmonic_params(5, 2, 0.2, 7);
    ModelSpec spec = hp.to_model_spec();
    spec.sigma_y2 = 1e-4;
    const std::string dir = temp_dir("gtfnmf_sim");

    const RunReport r1 = task_simulate(spec, 400, 11, dir);
    const MatrixXd csv1 = import_csv(join_path(dir, "latents.csv"));
    const RunReport r2 = task_simulate(spec, 400, 11, dir);
    const MatrixXd csv2 = import_csv(join_path(dir, "latents.csv"));

    EXPECT_EQ(csv1.rows(), 400);
    EXPECT_EQ(csv1.cols(), 1 + 5 + 2);
    EXPECT_EQ((csv1 - csv2).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_TRUE(std::filesystem::exists(join_path(dir, "simulated.wav")));
    std::filesystem::remove_all(dir);
}

TEST(TaskDenoise, NearInterpolationRegime) {
    const HyperParams hp = harmonic_params(3, 1, 0.35, 3);
    ModelSpec gen = hp.to_model_spec();
    gen.sigma_y2 = 0.0;
    const LatentSample clean = sample_generative(gen, 1500, 19);

    EpConfig cfg = config_for(1, 40);
    cfg.damping = 0.3;
    const DenoiseResult r =
        task_denoise(clean.y, 1e-6, Backend::Ep, hp, cfg, &clean.y);
    EXPECT_GT(r.report.values.at("snr_db"), 30.0);
}

TEST(TaskDenoise, RejectsZeroNoise) {
    const HyperParams hp = harmonic_params(2, 1, 0.4, 9);
    EXPECT_THROW(task_denoise(VectorXd::Ones(100), 0.0, Backend::Ep, hp,
                              config_for(1)),
                 ConfigError);
}

TEST(TaskInpaint, AllObservedEqualsDenoise) {
    const HyperParams hp = harmonic_params(2, 1, 0.5, 13);
    ModelSpec gen = hp.to_model_spec();
    gen.sigma_y2 = 1e-4;
    const LatentSample data = sample_generative(gen, 600, 23);

    HyperParams hp2 = hp;
    hp2.sigma_y2 = 1e-4;
    const InpaintResult inp =
        task_inpaint(data.y, full_mask(600), Backend::Ep, hp2,
                     config_for(1, 8), &data.y);
    const DenoiseResult den = task_denoise(data.y, 1e-4, Backend::Ep, hp2,
                                           config_for(1, 8), &data.y);
    EXPECT_LT((inp.filled - den.estimate).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(TaskInpaint, GapWidensIntervalsAndReports) {
    const HyperParams hp = harmonic_params(2, 1, 0.45, 17);
    ModelSpec gen = hp.to_model_spec();
    gen.sigma_y2 = 1e-4;
    const LatentSample data = sample_generative(gen, 900, 29);

    MissingMask mask = full_mask(900);
    for (int k = 400; k < 500; ++k) mask.observed[k] = false;
    HyperParams hp2 = hp;
    hp2.sigma_y2 = 1e-4;
    const InpaintResult r = task_inpaint(data.y, mask, Backend::Ep, hp2,
                                         config_for(1, 8), &data.y);
    EXPECT_TRUE(r.report.values.count("gap_snr_db"));
    // interval at gap center wider than at an interior observed point
    const double gap_width = r.upper(450) - r.lower(450);
    const double obs_width = r.upper(200) - r.lower(200);
    EXPECT_GT(gap_width, obs_width);

    MissingMask all_missing{std::vector<bool>(900, false)};
    EXPECT_THROW(task_inpaint(data.y, all_missing, Backend::Ep, hp2,
                              config_for(1)),
                 DegenerateInputError);
}

TEST(TaskSeparate, DisjointSourcesRecovered) {
    // two sources with disjoint frequency support
    HyperParams src_a = harmonic_params(2, 1, 0.25, 31);
    HyperParams src_b = harmonic_params(2, 1, 1.45, 37);

    ModelSpec gen_a = src_a.to_model_spec();
    gen_a.sigma_y2 = 0.0;
    ModelSpec gen_b = src_b.to_model_spec();
    gen_b.sigma_y2 = 0.0;
    const LatentSample sa = sample_generative(gen_a, 2000, 41);
    const LatentSample sb = sample_generative(gen_b, 2000, 43);
    const VectorXd mixture = sa.y + sb.y;

    std::vector<VectorXd> refs = {sa.y, sb.y};
    const SeparateResult r = task_separate(
        mixture, {src_a, src_b}, Backend::Ihgp, config_for(2, 12), 1e-4,
        &refs);
    EXPECT_GT(r.report.values.at("source0_snr_db"), 10.0);
    EXPECT_GT(r.report.values.at("source1_snr_db"), 10.0);

    // additivity: per-source reconstructions sum to the denoised mixture
    VectorXd total = VectorXd::Zero(2000);
    for (const auto& s : r.sources) total += s;
    EXPECT_LT((total - r.mixture_estimate).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(TaskSeparate, DenseBackendCapAdvisesIhgp) {
    // 7 sources x (16 subbands x 2 + 3 x 3) = 287 states, past the dense
    // covariance cap for the full EP backend
    std::vector<HyperParams> sources;
    for (int s = 0; s < 7; ++s) {
        HyperParams hp;
        hp.W = MatrixXd::Constant(16, 3, 0.4);
        for (int d = 0; d < 16; ++d)
            hp.subbands.push_back({MaternFamily::Matern12, 60.0, 1.0,
                                   0.05 + 0.18 * d + 0.002 * s});
        for (int n = 0; n < 3; ++n)
            hp.modulators.push_back({MaternFamily::Matern52, 500.0, 1.0});
        hp.sigma_y2 = 1e-4;
        sources.push_back(hp);
    }
    VectorXd y = VectorXd::Zero(64);
    y(0) = 0.5;
    try {
        task_separate(y, sources, Backend::Ep, config_for(2, 1), 1e-4);
        FAIL() << "expected ConfigError advising ihgp";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("ihgp"), std::string::npos);
    }
}

TEST(TaskSeparate, FullEpWarnsAboveEighty) {
    // M = 2 * (8*2 + 2*3) = 44 under the cap; inflate to exceed 80
    std::vector<HyperParams> sources;
    for (int s = 0; s < 2; ++s) {
        HyperParams hp;
        hp.W = MatrixXd::Constant(14, 2, 0.4);
        for (int d = 0; d < 14; ++d)
            hp.subbands.push_back({MaternFamily::Matern12, 60.0, 1.0,
                                   0.1 + 0.2 * d + 0.005 * s});
        for (int n = 0; n < 2; ++n)
            hp.modulators.push_back({MaternFamily::Matern52, 500.0, 1.0});
        hp.sigma_y2 = 1e-3;
        sources.push_back(hp);
    }
    // M = 2 * (14*2 + 2*3) = 68 ... add one more source to pass 80
    sources.push_back(sources.back());
    VectorXd y = VectorXd::Random(48);
    const SeparateResult r =
        task_separate(y, sources, Backend::Ep, config_for(6, 1), 1e-3);
    bool warned = false;
    for (const auto& n : r.report.notes)
        warned |= n.find("ihgp") != std::string::npos;
    EXPECT_TRUE(warned);
}

TEST(TaskTrain, InitializationPipelineProducesUsableModel) {
    // synthetic two-band signal
    const HyperParams truth = harmonic_params(2, 1, 0.4, 47);
    ModelSpec gen = truth.to_model_spec();
    gen.sigma_y2 = 1e-4;
    const LatentSample data = sample_generative(gen, 4000, 53);

    const TrainResult r =
        task_train(data.y, 4, 2, 16000.0, config_for(2), false);
    EXPECT_EQ(r.model.params.subbands.size(), 4u);
    EXPECT_EQ(r.model.params.modulators.size(), 2u);
    EXPECT_GT(r.model.params.sigma_y2, 0.0);
    for (std::size_t d = 1; d < 4; ++d)
        EXPECT_GT(r.model.params.subbands[d].cosine_freq,
                  r.model.params.subbands[d - 1].cosine_freq);
    // the trained model runs end to end
    const DenoiseResult den = task_denoise(data.y, 1e-3, Backend::Ep,
                                           r.model.params, config_for(2, 3));
    EXPECT_TRUE(den.estimate.allFinite());
}
