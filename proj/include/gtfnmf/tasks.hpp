// Task orchestration: simulate, analyze, denoise, inpaint, separate, train.
// Every task is deterministic given its inputs, seed and configuration, and
// emits a RunReport.
#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gtfnmf/audio.hpp"
#include "gtfnmf/ekf.hpp"
#include "gtfnmf/ep.hpp"
#include "gtfnmf/ihgp.hpp"
#include "gtfnmf/learning.hpp"
#include "gtfnmf/model.hpp"

namespace gtfnmf {

enum class Backend { Ep, Ekf, Ihgp };

inline Backend backend_from_string(const std::string& s) {
    if (s == "ep") return Backend::Ep;
    if (s == "ekf") return Backend::Ekf;
    if (s == "ihgp") return Backend::Ihgp;
    throw ConfigError("unknown backend '" + s + "' (expected ep|ekf|ihgp)");
}

inline std::string to_string(Backend b) {
    switch (b) {
        case Backend::Ep: return "ep";
        case Backend::Ekf: return "ekf";
        case Backend::Ihgp: return "ihgp";
    }
    return "?";
}

// Full EP/EKF propagate T dense covariances; beyond this state size the
// run is refused and IHGP suggested.
constexpr Eigen::Index kDenseStateCap = 256;
constexpr Eigen::Index kDenseStateWarn = 80;

struct RunReport {
    std::string task;
    std::string backend;
    std::map<std::string, double> values;   // metrics, timings, counters
    std::vector<std::string> outputs;       // file paths written
    std::vector<std::string> notes;

    std::string to_text() const {
        std::ostringstream os;
        os << "task: " << task << "\n";
        if (!backend.empty()) os << "backend: " << backend << "\n";
        char buf[64];
        for (const auto& [k, v] : values) {
            std::snprintf(buf, sizeof(buf), "%.10g", v);
            os << k << ": " << buf << "\n";
        }
        for (const auto& p : outputs) os << "output: " << p << "\n";
        for (const auto& n : notes) os << "note: " << n << "\n";
        return os.str();
    }

    void save(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw FormatError("RunReport: cannot open " + path);
        os << to_text();
    }
};

// ---------------------------------------------------------------------------
// Model parameter files: plain-text key=value, arrays space-separated.

struct TrainedModel {
    HyperParams params;
    double sample_rate = 16000.0;
};

inline void save_model(const std::string& path, const TrainedModel& tm) {
    std::ofstream os(path);
    if (!os) throw FormatError("save_model: cannot open " + path);
    const auto& hp = tm.params;
    os.precision(17);
    os << "# gtfnmf model parameters\n";
    os << "D = " << hp.subbands.size() << "\n";
    os << "N = " << hp.modulators.size() << "\n";
    os << "sample_rate = " << tm.sample_rate << "\n";
    os << "sigma_y2 = " << hp.sigma_y2 << "\n";
    auto family_name = [](MaternFamily f) {
        switch (f) {
            case MaternFamily::Matern12: return "matern12";
            case MaternFamily::Matern32: return "matern32";
            case MaternFamily::Matern52: return "matern52";
        }
        return "?";
    };
    for (std::size_t d = 0; d < hp.subbands.size(); ++d) {
        const auto& k = hp.subbands[d];
        os << "subband." << d << " = " << family_name(k.family) << " "
           << k.cosine_freq << " " << k.lengthscale << " " << k.variance
           << "\n";
    }
    for (std::size_t n = 0; n < hp.modulators.size(); ++n) {
        const auto& k = hp.modulators[n];
        os << "modulator." << n << " = " << family_name(k.family) << " "
           << k.lengthscale << " " << k.variance << "\n";
    }
    os << "W =";
    for (Eigen::Index r = 0; r < hp.W.rows(); ++r)
        for (Eigen::Index c = 0; c < hp.W.cols(); ++c) os << " " << hp.W(r, c);
    os << "\n";
}

inline TrainedModel load_model(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("load_model: cannot open " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError("load_model: bad line '" + line + "'");
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string()
                                          : s.substr(a, b - a + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    auto need = [&](const std::string& key) {
        const auto it = kv.find(key);
        if (it == kv.end())
            throw FormatError("load_model: missing key '" + key + "'");
        return it->second;
    };
    auto parse_family = [](const std::string& s) {
        if (s == "matern12") return MaternFamily::Matern12;
        if (s == "matern32") return MaternFamily::Matern32;
        if (s == "matern52") return MaternFamily::Matern52;
        throw FormatError("load_model: unknown kernel family '" + s + "'");
    };

    TrainedModel tm;
    const Eigen::Index d_count = std::stol(need("D"));
    const Eigen::Index n_count = std::stol(need("N"));
    tm.sample_rate = std::stod(need("sample_rate"));
    tm.params.sigma_y2 = std::stod(need("sigma_y2"));
    for (Eigen::Index d = 0; d < d_count; ++d) {
        std::istringstream ss(need("subband." + std::to_string(d)));
        std::string fam;
        KernelSpec k;
        ss >> fam >> k.cosine_freq >> k.lengthscale >> k.variance;
        k.family = parse_family(fam);
        tm.params.subbands.push_back(k);
    }
    for (Eigen::Index n = 0; n < n_count; ++n) {
        std::istringstream ss(need("modulator." + std::to_string(n)));
        std::string fam;
        KernelSpec k;
        ss >> fam >> k.lengthscale >> k.variance;
        k.family = parse_family(fam);
        k.cosine_freq = kNoCosine;
        tm.params.modulators.push_back(k);
    }
    tm.params.W.resize(d_count, n_count);
    std::istringstream ss(need("W"));
    for (Eigen::Index r = 0; r < d_count; ++r)
        for (Eigen::Index c = 0; c < n_count; ++c) ss >> tm.params.W(r, c);
    return tm;
}

// ---------------------------------------------------------------------------
// Backend dispatch.

struct InferenceOutput {
    PosteriorMarginals marginals;
    double seconds = 0.0;
};

inline InferenceOutput run_inference(const ModelSpec& spec,
                                     const DiscreteModel& model,
                                     const VectorXd& y, Backend backend,
                                     const EpConfig& cfg,
                                     const std::vector<bool>& observed = {},
                                     std::vector<std::string>* notes = nullptr) {
    if (backend != Backend::Ihgp && model.dim() > kDenseStateCap)
        throw ConfigError("state dimension " + std::to_string(model.dim()) +
                          " exceeds the dense-covariance cap " +
                          std::to_string(kDenseStateCap) +
                          "; use the ihgp backend");
    if (notes && backend == Backend::Ep && model.dim() > kDenseStateWarn)
        notes->push_back("state dimension " + std::to_string(model.dim()) +
                         " is large for full EP; ihgp is recommended");
    const auto t0 = std::chrono::steady_clock::now();
    InferenceOutput out;
    switch (backend) {
        case Backend::Ep:
            out.marginals =
                ep_smoother(spec, model, y, cfg, observed).marginals;
            break;
        case Backend::Ekf:
            out.marginals = iekf_smoother(spec, model, y, cfg.iterations,
                                          observed, &cfg.rule);
            break;
        case Backend::Ihgp:
            out.marginals =
                ihgp_ep_smoother(spec, model, y, cfg, 64, observed).marginals;
            break;
    }
    out.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    return out;
}

// ---------------------------------------------------------------------------
// Tasks.

// Peak normalization used at ingestion; the scale is recorded so outputs
// can be written back at the original level.
struct Normalization {
    double scale = 1.0;
};

inline Normalization normalize_peak(VectorXd& samples, double peak = 0.99) {
    const double m = samples.cwiseAbs().maxCoeff();
    Normalization n;
    if (m > 0.0) {
        n.scale = peak / m;
        samples *= n.scale;
    }
    return n;
}

inline std::string join_path(const std::string& dir,
                             const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

// Draw a sample from the generative model; write the observation as WAV
// (peak-normalized, scale recorded) and the latents as CSV.
inline RunReport task_simulate(const ModelSpec& spec, Eigen::Index t,
                               std::uint64_t seed, const std::string& out_dir,
                               double sample_rate = 16000.0) {
    std::filesystem::create_directories(out_dir);
    const LatentSample sample = sample_generative(spec, t, seed);

    RunReport report;
    report.task = "simulate";
    report.values["T"] = static_cast<double>(t);
    report.values["seed"] = static_cast<double>(seed);
    report.values["D"] = static_cast<double>(spec.D);
    report.values["N"] = static_cast<double>(spec.N);

    AudioBuffer buf;
    buf.sample_rate = sample_rate;
    buf.samples = sample.y;
    const Normalization norm = normalize_peak(buf.samples);
    report.values["wav_scale"] = norm.scale;

    const std::string wav = join_path(out_dir, "simulated.wav");
    write_wav(wav, buf);
    report.outputs.push_back(wav);

    // y plus latents, one step per row
    std::vector<std::string> cols = {"y"};
    for (Eigen::Index d = 0; d < spec.D; ++d)
        cols.push_back("z" + std::to_string(d));
    for (Eigen::Index n = 0; n < spec.N; ++n)
        cols.push_back("g" + std::to_string(n));
    MatrixXd rows(t, 1 + spec.D + spec.N);
    rows.col(0) = sample.y;
    rows.middleCols(1, spec.D) = sample.Z.transpose();
    rows.middleCols(1 + spec.D, spec.N) = sample.G.transpose();
    const std::string csv = join_path(out_dir, "latents.csv");
    export_csv(csv, cols, rows);
    report.outputs.push_back(csv);
    return report;
}

// Posterior measurement-mean reconstruction under the given noise level.
struct DenoiseResult {
    VectorXd estimate;
    RunReport report;
    PosteriorMarginals marginals;
};

inline DenoiseResult task_denoise(const VectorXd& noisy, double sigma_y2,
                                  Backend backend, const HyperParams& params,
                                  const EpConfig& cfg,
                                  const VectorXd* reference = nullptr) {
    if (!(sigma_y2 > 0.0))
        throw ConfigError("task_denoise: sigma_y2 must be > 0");
    HyperParams hp = params;
    hp.sigma_y2 = sigma_y2;
    const ModelSpec spec = hp.to_model_spec();
    const DiscreteModel model = build_discrete(spec);

    DenoiseResult out;
    out.report.task = "denoise";
    out.report.backend = to_string(backend);
    const InferenceOutput inf = run_inference(spec, model, noisy, backend,
                                              cfg, {}, &out.report.notes);
    out.marginals = inf.marginals;
    out.estimate = inf.marginals.reconstruction;
    out.report.values["seconds"] = inf.seconds;
    out.report.values["sigma_y2"] = sigma_y2;
    out.report.values["skipped_updates"] =
        static_cast<double>(inf.marginals.skipped_updates);
    out.report.values["clipped_updates"] =
        static_cast<double>(inf.marginals.clipped_updates);
    out.report.values["log_marginal"] = inf.marginals.log_marginal;
    if (reference) {
        const Metrics m = metrics(*reference, out.estimate);
        out.report.values["snr_db"] = m.snr_db;
        out.report.values["rmse"] = m.rmse;
        const Metrics before = metrics(*reference, noisy);
        out.report.values["input_snr_db"] = before.snr_db;
    }
    return out;
}

// Missing-data imputation: smoother predictions at masked steps, with a
// 95% interval on the measurement mean.
struct InpaintResult {
    VectorXd filled;
    VectorXd lower, upper;
    RunReport report;
    PosteriorMarginals marginals;
};

inline InpaintResult task_inpaint(const VectorXd& y, const MissingMask& mask,
                                  Backend backend, const HyperParams& params,
                                  const EpConfig& cfg,
                                  const VectorXd* reference = nullptr) {
    if (static_cast<Eigen::Index>(mask.observed.size()) != y.size())
        throw ConfigError("task_inpaint: mask length mismatch");
    if (mask.missing_count() == y.size())
        throw DegenerateInputError("task_inpaint: no observed samples");

    const ModelSpec spec = params.to_model_spec();
    const DiscreteModel model = build_discrete(spec);
    InpaintResult out;
    out.report.task = "inpaint";
    out.report.backend = to_string(backend);
    const InferenceOutput inf = run_inference(
        spec, model, y, backend, cfg, mask.observed, &out.report.notes);
    out.marginals = inf.marginals;
    out.filled = inf.marginals.reconstruction;
    const VectorXd sd = inf.marginals.recon_var.cwiseMax(0.0).cwiseSqrt();
    out.lower = out.filled - 1.96 * sd;
    out.upper = out.filled + 1.96 * sd;
    out.report.values["seconds"] = inf.seconds;
    out.report.values["missing_samples"] =
        static_cast<double>(mask.missing_count());
    if (reference) {
        std::vector<bool> gap(mask.observed.size());
        for (std::size_t i = 0; i < gap.size(); ++i) gap[i] = !mask.observed[i];
        if (mask.missing_count() > 0) {
            const Metrics m = metrics_where(*reference, out.filled, gap);
            out.report.values["gap_snr_db"] = m.snr_db;
            out.report.values["gap_rmse"] = m.rmse;
        }
        const Metrics all = metrics(*reference, out.filled);
        out.report.values["snr_db"] = all.snr_db;
        out.report.values["rmse"] = all.rmse;
    }
    return out;
}

// Source separation: stack the trained source models into one state space
// observed through the summed measurement, then split the posterior
// reconstruction per source.
struct SeparateResult {
    std::vector<VectorXd> sources;
    VectorXd mixture_estimate;
    RunReport report;
};

inline SeparateResult task_separate(const VectorXd& mixture,
                                    const std::vector<HyperParams>& sources,
                                    Backend backend, const EpConfig& base_cfg,
                                    double sigma_y2,
                                    const std::vector<VectorXd>* references =
                                        nullptr) {
    if (sources.size() < 2)
        throw ConfigError("task_separate: need at least two trained sources");

    // combined spec: subbands and modulators of all sources, block W
    ModelSpec spec;
    spec.sigma_y2 = sigma_y2;
    Eigen::Index d_total = 0, n_total = 0;
    for (const auto& s : sources) {
        d_total += static_cast<Eigen::Index>(s.subbands.size());
        n_total += static_cast<Eigen::Index>(s.modulators.size());
    }
    spec.D = d_total;
    spec.N = n_total;
    spec.W = MatrixXd::Zero(d_total, n_total);
    Eigen::Index d_off = 0, n_off = 0;
    std::vector<std::pair<Eigen::Index, Eigen::Index>> source_bands;
    for (const auto& s : sources) {
        const Eigen::Index ds = static_cast<Eigen::Index>(s.subbands.size());
        const Eigen::Index ns = static_cast<Eigen::Index>(s.modulators.size());
        spec.W.block(d_off, n_off, ds, ns) = s.W;
        for (const auto& k : s.subbands) spec.subband_kernels.push_back(k);
        for (const auto& k : s.modulators)
            spec.modulator_kernels.push_back(k);
        source_bands.push_back({d_off, ds});
        d_off += ds;
        n_off += ns;
    }
    const DiscreteModel model = build_discrete(spec);

    SeparateResult out;
    out.report.task = "separate";
    out.report.backend = to_string(backend);
    out.report.values["state_dim"] = static_cast<double>(model.dim());

    EpConfig cfg = base_cfg;
    if (cfg.rule.dimension() != spec.N) cfg.rule = default_rule(spec.N);
    const InferenceOutput inf = run_inference(spec, model, mixture, backend,
                                              cfg, {}, &out.report.notes);
    out.report.values["seconds"] = inf.seconds;

    // per-source reconstruction: partial sums of the per-channel posterior
    // means E[a_d z_d], so the sources add up to the denoised mixture
    // exactly
    const Eigen::Index t_count = mixture.size();
    out.mixture_estimate = inf.marginals.reconstruction;
    for (std::size_t j = 0; j < sources.size(); ++j) {
        VectorXd est = VectorXd::Zero(t_count);
        const auto [off, count] = source_bands[j];
        for (Eigen::Index k = 0; k < t_count; ++k)
            est(k) = inf.marginals.recon_channel.row(k)
                         .segment(off, count)
                         .sum();
        out.sources.push_back(std::move(est));
        if (references && j < references->size()) {
            const Metrics m = metrics((*references)[j], out.sources.back());
            out.report.values["source" + std::to_string(j) + "_snr_db"] =
                m.snr_db;
            out.report.values["source" + std::to_string(j) + "_rmse"] =
                m.rmse;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Presets.

// The simulated-data experiment: D = 5 exponential subbands, N = 2 slow
// Matern-5/2 modulators, sigma_y^2 = 1e-4, hand-fixed weights.
inline ModelSpec simulated_experiment_spec() {
    ModelSpec spec;
    spec.D = 5;
    spec.N = 2;
    spec.W.resize(5, 2);
    spec.W << 1.2, 0.1,
              0.8, 0.3,
              0.3, 0.9,
              0.1, 1.1,
              0.5, 0.6;
    const double omegas[5] = {0.12, 0.35, 0.71, 1.18, 1.9};
    for (int d = 0; d < 5; ++d)
        spec.subband_kernels.push_back(
            {MaternFamily::Matern12, 60.0 + 15.0 * d, 1.0, omegas[d]});
    spec.modulator_kernels.push_back({MaternFamily::Matern52, 120.0, 1.0});
    spec.modulator_kernels.push_back({MaternFamily::Matern52, 220.0, 1.0});
    spec.sigma_y2 = 1e-4;
    return spec;
}

// One source of the separation preset: 16 exponential subbands plus 3
// Matern-5/2 modulators (state dimension 41); three stacked give M = 123.
inline HyperParams separation_source_params(int index) {
    HyperParams hp;
    hp.W = MatrixXd::Zero(16, 3);
    std::mt19937_64 rng(100 + static_cast<std::uint64_t>(index));
    std::uniform_real_distribution<double> unif(0.2, 1.0);
    for (int d = 0; d < 16; ++d) hp.W(d, d % 3) = 0.5 + 0.5 * unif(rng);
    // harmonic stacks at distinct fundamentals
    const double base = 0.085 * (1.0 + 0.45 * index);
    for (int d = 0; d < 16; ++d) {
        const double omega = std::min(base * (1.0 + d), 3.1);
        hp.subbands.push_back({MaternFamily::Matern12, 70.0, 1.0, omega});
    }
    for (int n = 0; n < 3; ++n)
        hp.modulators.push_back(
            {MaternFamily::Matern52, 150.0 + 60.0 * n, 1.0});
    hp.sigma_y2 = 1e-4;
    return hp;
}

struct TrainResult {
    TrainedModel model;
    RunReport report;
};

// Initialization pipeline plus optional marginal-likelihood refinement:
// frequency-domain subband fit, probabilistic spectrogram, NMF, modulator
// mapping, then ADF-objective simplex tuning.
inline TrainResult task_train(const VectorXd& y, Eigen::Index d_count,
                              Eigen::Index n_count, double sample_rate,
                              const EpConfig& cfg, bool refine = true,
                              int max_evaluations = 120,
                              double sigma_y2_hint = 0.0) {
    TrainResult out;
    out.report.task = "train";
    const auto t0 = std::chrono::steady_clock::now();

    const SubbandFit fit = init_subbands(y, d_count, sample_rate);
    const MatrixXd spect = linear_tf_spectrogram(
        y, fit.kernels,
        sigma_y2_hint > 0.0 ? sigma_y2_hint : std::max(fit.noise_floor, 1e-6));
    const NmfResult nmf = nmf_multiplicative(spect, n_count, 300);
    const ModulatorInit mods = init_modulators(nmf.G);

    HyperParams hp;
    hp.subbands = fit.kernels;
    hp.modulators = mods.kernels;
    hp.W = nmf.W;
    hp.sigma_y2 =
        sigma_y2_hint > 0.0 ? sigma_y2_hint : std::max(fit.noise_floor, 1e-6);

    out.report.values["nmf_objective"] = nmf.objective.back();
    out.report.values["noise_floor"] = fit.noise_floor;

    if (refine) {
        EpConfig tune = cfg;
        if (tune.rule.dimension() != n_count)
            tune.rule = default_rule(n_count);
        OptimizeOptions opts;
        opts.max_evaluations = max_evaluations;
        const OptimizeResult opt = optimize_hypers(hp, y, tune, opts);
        hp = opt.params;
        out.report.values["objective"] = opt.objective;
        out.report.values["objective_evaluations"] =
            static_cast<double>(opt.evaluations);
    }
    out.model.params = hp;
    out.model.sample_rate = sample_rate;
    out.report.values["seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    return out;
}

} // namespace gtfnmf
