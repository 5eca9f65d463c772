// Acceptance suite: one PASS/FAIL line per criterion.
//
// Training runs are cached under FWRL_ACCEPTANCE_CACHE keyed by a hash of the
// resolved run config and seed; delete the directory to retrain.

#include "fwrl/analysis.hpp"
#include "fwrl/cli.hpp"
#include "fwrl/disturbances.hpp"
#include "fwrl/dynamics.hpp"
#include "fwrl/env.hpp"
#include "fwrl/nnet.hpp"
#include "fwrl/pid.hpp"
#include "fwrl/run_config.hpp"
#include "fwrl/sac.hpp"

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using namespace fwrl;

namespace {

const fs::path kConfigDir = FWRL_CONFIG_DIR;
const fs::path kCache = FWRL_ACCEPTANCE_CACHE;
constexpr const char* kCacheSalt = "fwrl-acceptance/1";
const std::vector<std::uint64_t> kSeeds = {1, 2, 3};
constexpr int kEvalEpisodes = 20;
constexpr std::uint64_t kHeldOut = 100000;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// --- training cache --------------------------------------------------------

RunConfig base_config() { return RunConfig::load(kConfigDir / "nominal.cfg"); }

RunConfig variant(RunConfig cfg, const std::string& v) {
    if (v == "fc") {
        cfg.model.input = nnet::InputLayer::kDense;
    } else if (v == "fch1") {
        cfg.model.input = nnet::InputLayer::kDense;
        cfg.model.history = 1;
    }
    cfg.env.history = cfg.model.history;
    return cfg;
}

// Trains through the CLI unless a finished run with the same config and seed exists.
fs::path trained(const RunConfig& cfg, std::uint64_t seed) {
    const std::string text = cfg.to_keyvalue().serialize();
    const std::string key = hex64(fnv1a(text + "\nseed=" + std::to_string(seed) + '\n' + kCacheSalt));
    const fs::path dir = kCache / key;
    const fs::path last = dir / ("policy_" + std::to_string(cfg.train.total_steps) + ".bin");
    if (fs::exists(dir / "manifest.txt") && fs::exists(last) &&
        cli::RunManifest::load(dir / "manifest.txt").status == "ok") {
        return dir;
    }
    fs::remove_all(dir);
    fs::create_directories(kCache);
    const fs::path cfg_path = kCache / (key + ".cfg");
    std::ofstream(cfg_path) << text;
    std::fprintf(stderr, "training %s seed %llu -> %s\n", cfg.model.input == nnet::InputLayer::kConv ? "conv" : "dense",
                 static_cast<unsigned long long>(seed), dir.c_str());
    const int code = cli::dispatch({"fwrl", "train", "--config", cfg_path.string(), "--seed", std::to_string(seed),
                                    "--out-dir", dir.string()});
    if (code != cli::kOk) throw Error("training failed with exit code " + std::to_string(code));
    return dir;
}

analysis::PolicyController controller(const RunConfig& cfg, const fs::path& dir, long steps) {
    auto ck = PolicyCheckpoint::load(dir / ("policy_" + std::to_string(steps) + ".bin"));
    return analysis::PolicyController(std::move(ck), cfg.env.action_scale);
}

struct HeldOut {
    double reward = 0;
    double random = 0;
    int terminations = 0;
};

HeldOut held_out(const RunConfig& cfg, const fs::path& dir, std::uint64_t seed) {
    auto pc = controller(cfg, dir, cfg.train.total_steps);
    HeldOut h;
    h.reward = sac::evaluate_episodes(&pc, cfg.env, cfg.uav, kEvalEpisodes, kHeldOut + seed, &h.terminations);
    h.random = sac::evaluate_episodes(nullptr, cfg.env, cfg.uav, kEvalEpisodes, kHeldOut + seed);
    return h;
}

double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / v.size();
}

// --- criteria --------------------------------------------------------------

Outcome pid_sensitivities() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto gains = pid::calibrate_gains(pid::reference_sensitivities()).gains;
    const analysis::PidController pid(gains);
    const auto anchor = analysis::level_flight_anchor(dynamics::UavParams::nominal(), 18.0);
    const auto g = analysis::tangent_gains(pid, anchor, analysis::default_channel_ranges());
    const std::array<double, 6> got = {g.aileron_e_phi, g.elevator_e_theta, g.aileron_p,
                                       g.elevator_q,    g.aileron_i_phi,    g.elevator_i_theta};
    const std::array<double, 6> want = {1.6299, -1.0813, -0.0243, 0.0312, 0.0521, -0.0521};
    double worst = 0;
    for (int i = 0; i < 6; ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
    const double t = seconds_since(t0);
    return {worst < 1e-3 && t < 1.0, fmt("max |err| %.2e, %.3f s", worst, t)};
}

Outcome reward_arithmetic() {
    const env::RewardConfig r;
    std::set<long> oracle;
    for (int a = 0; a <= 2; ++a)
        for (int b = 0; b <= 2; ++b) oracle.insert(500L * a + 167L * b);
    bool ok = r.max() == 1.334 && r.achievable_values().size() == 9;
    Rng rng(20);
    std::set<long> seen;
    double top = 0;
    for (int k = 0; k < 100000; ++k) {
        const double v = r(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.15, 0.15),
                           rng.uniform(-0.15, 0.15));
        const long milli = std::lround(v * 1000);
        ok = ok && std::abs(v - milli / 1000.0) < 1e-12 && oracle.count(milli);
        seen.insert(milli);
        top = std::max(top, v);
    }
    ok = ok && seen == oracle && std::abs(top - 1.334) < 1e-12;
    return {ok, fmt("max %.4f, %zu distinct values over 1e5 states", top, seen.size())};
}

double worst_param_error(nnet::Network& net, const std::function<double()>& loss,
                         const std::function<void()>& backward, double h = 1e-5) {
    net.zero_grad();
    backward();
    const nnet::Vector analytic = net.grads();
    double worst = 0;
    for (int k = 0; k < net.num_params(); ++k) {
        const double v = net.params()(k);
        net.params()(k) = v + h;
        const double fp = loss();
        net.params()(k) = v - h;
        const double fm = loss();
        net.params()(k) = v;
        const double num = (fp - fm) / (2 * h);
        worst = std::max(worst, std::abs(num - analytic(k)) / std::max({std::abs(num), std::abs(analytic(k)), 1e-7}));
    }
    return worst;
}

nnet::Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
    nnet::Matrix m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = rng.normal();
    return m;
}

Outcome gradient_check() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(30);
    double worst = 0;
    long params = 0;
    for (auto input : {nnet::InputLayer::kConv, nnet::InputLayer::kDense}) {
        nnet::PolicyConfig cfg;
        cfg.input = input;
        cfg.final_scale = 1.0;
        nnet::Policy pi(cfg, rng);
        const int B = 4;
        const auto obs = random_matrix(cfg.obs_size(), B, rng);
        const auto noise = random_matrix(2, B, rng);
        const auto wm = random_matrix(2, B, rng), ws = random_matrix(2, B, rng);
        worst = std::max(worst, worst_param_error(
                                    pi.net(),
                                    [&] {
                                        const auto out = pi.forward(obs, &noise);
                                        return (out.mu.array() * wm.array()).sum() +
                                               (out.log_std.array() * ws.array()).sum();
                                    },
                                    [&] {
                                        nnet::Network::Cache cache;
                                        const auto out = pi.forward(obs, &noise, &cache);
                                        pi.backward(cache, out, wm, ws);
                                    }));
        nnet::Critic q(cfg, rng);
        const auto sa = random_matrix(cfg.obs_size() + 2, B, rng);
        const auto wq = random_matrix(1, B, rng);
        worst = std::max(worst, worst_param_error(
                                    q.net(), [&] { return (q.forward(sa).array() * wq.array()).sum(); },
                                    [&] {
                                        nnet::Network::Cache cache;
                                        q.forward(sa, &cache);
                                        q.net().backward(cache, wq, true, false);
                                    }));
        params += pi.net().num_params() + q.net().num_params();
    }
    const double t = seconds_since(t0);
    return {worst < 1e-4 && t < 30.0, fmt("worst rel err %.2e over %ld params, %.1f s", worst, params, t)};
}

Outcome noise_statistics() {
    using namespace disturbances;
    const auto t0 = std::chrono::steady_clock::now();
    const int n = 1'000'000;
    const auto sigma = default_measurement_sigma();
    const double theta = 1.0;
    OuProcess ou(sigma, theta, Rng(40));
    ou.reset_stationary();
    std::vector<double> sum(sigma.size(), 0.0), sq(sigma.size(), 0.0);
    for (int k = 0; k < n; ++k) {
        const auto& v = ou.step(0.02);
        for (std::size_t c = 0; c < v.size(); ++c) {
            sum[c] += v[c];
            sq[c] += v[c] * v[c];
        }
    }
    double worst_ou = 0;
    for (std::size_t c = 0; c < sigma.size(); ++c) {
        if (sigma[c] == 0.0) continue;
        const double m = sum[c] / n;
        const double sd = std::sqrt(sq[c] / n - m * m);
        worst_ou = std::max(worst_ou, std::abs(sd / (sigma[c] / std::sqrt(2 * theta)) - 1.0));
    }
    Rng rng(41);
    const double kappa = 500.0;
    const TimingJitter jitter(0.02, kappa);
    double s = 0;
    for (int k = 0; k < n; ++k) s += jitter.next(rng) - 0.02;
    const double jitter_err = std::abs((s / n) * kappa - 1.0);
    const double t = seconds_since(t0);
    return {worst_ou < 0.02 && jitter_err < 0.01 && t < 30.0,
            fmt("OU std rel err %.4f, jitter mean rel err %.4f, %.1f s", worst_ou, jitter_err, t)};
}

Outcome training_progress() {
    const RunConfig cfg = base_config();
    env::EpisodeConfig moderate = cfg.env;
    moderate.randomization.enabled = false;
    moderate.ranges.phi_ref = {deg2rad(-30.0), deg2rad(30.0)};
    moderate.ranges.theta_ref = {deg2rad(-10.0), deg2rad(10.0)};
    bool ok = true;
    std::string detail;
    for (auto seed : kSeeds) {
        const fs::path dir = trained(cfg, seed);
        const HeldOut h = held_out(cfg, dir, seed);
        auto early = controller(cfg, dir, 10000);
        int term = 0;
        sac::evaluate_episodes(&early, moderate, cfg.uav, kEvalEpisodes, kHeldOut + 50 + seed, &term);
        const bool seed_ok = h.reward >= 5 * h.random && h.reward >= 0.35 && term == 0;
        ok = ok && seed_ok;
        detail += fmt("%sseed %llu: 40k %.3f (random %.4f), 10k terminations %d", detail.empty() ? "" : "; ",
                      static_cast<unsigned long long>(seed), h.reward, h.random, term);
    }
    return {ok, detail};
}

Outcome latency_study() {
    const RunConfig slow = base_config();
    RunConfig fast = slow;
    fast.env.disturbances.actuation_delay = 0.01;
    const std::vector<double> latencies = {0.01, 0.05, 0.10};
    const std::vector<std::uint64_t> eval_seeds = {1, 2, 3, 4, 5};
    // evaluated in the stochastic training environment, so eval seeds differ
    auto seq = analysis::pitch_step_sequence();
    seq.disturbances = analysis::DisturbanceToggles::all();

    auto fast_pc = controller(fast, trained(fast, 1), fast.train.total_steps);
    const auto fast_rows = analysis::latency_sweep(fast_pc, seq, fast.env, fast.uav, latencies, eval_seeds);
    std::vector<double> lat, sm;
    for (const auto& r : fast_rows) {
        lat.push_back(r.latency);
        sm.push_back(r.sm_pitch);
    }
    const double rho = analysis::spearman(lat, sm);

    auto slow_pc = controller(slow, trained(slow, 1), slow.train.total_steps);
    const auto slow_rows = analysis::latency_sweep(slow_pc, seq, slow.env, slow.uav, latencies, eval_seeds);
    int diverged = 0;
    for (const auto& r : slow_rows) diverged += r.diverged;

    std::string means;
    for (std::size_t i = 0; i < latencies.size(); ++i) {
        std::vector<double> v(sm.begin() + i * eval_seeds.size(), sm.begin() + (i + 1) * eval_seeds.size());
        means += fmt("%s%.4f", i ? "/" : "", mean(v));
    }
    return {rho > 0 && diverged == 0,
            fmt("10 ms policy: Sm %s, rank corr %.3f; 100 ms policy: %d of %zu runs diverged", means.c_str(), rho,
                diverged, slow_rows.size())};
}

Outcome ablation() {
    const RunConfig base = base_config();
    const RunConfig fc = variant(base, "fc");
    const RunConfig fch1 = variant(base, "fch1");
    std::vector<double> r_base, r_fch1, sm_conv, sm_fc;
    // step responses in the training environment, seeded like the held-out episodes
    auto seq = analysis::StepSequence::default_sequence();
    seq.disturbances = analysis::DisturbanceToggles::all();
    auto step_sm = [&](const RunConfig& cfg, const fs::path& dir, std::uint64_t seed) {
        auto pc = controller(cfg, dir, cfg.train.total_steps);
        const auto r = analysis::run_step_eval(pc, seq, cfg.env, cfg.uav, kHeldOut + seed);
        return 0.5 * (r.sm_right + r.sm_left);
    };
    for (auto seed : kSeeds) {
        const fs::path d_base = trained(base, seed), d_fc = trained(fc, seed), d_fch1 = trained(fch1, seed);
        r_base.push_back(held_out(base, d_base, seed).reward);
        r_fch1.push_back(held_out(fch1, d_fch1, seed).reward);
        sm_conv.push_back(step_sm(base, d_base, seed));
        sm_fc.push_back(step_sm(fc, d_fc, seed));
    }
    const double ratio = mean(sm_fc) / mean(sm_conv);
    std::string per_seed;
    for (std::size_t i = 0; i < sm_conv.size(); ++i) per_seed += fmt("%s%.2f", i ? "/" : "", sm_fc[i] / sm_conv[i]);
    return {mean(r_fch1) < 0.5 * mean(r_base) && ratio >= 1.1,
            fmt("reward conv %.3f, fch1 %.3f; Sm conv %.4f, fc %.4f (fc/conv %.2f, per seed %s)", mean(r_base),
                mean(r_fch1), mean(sm_conv), mean(sm_fc), ratio, per_seed.c_str())};
}

Outcome determinism() {
    const fs::path root = kCache / "replay";
    fs::remove_all(root);
    fs::create_directories(root);
    const fs::path tiny = root / "tiny.cfg";
    {
        RunConfig cfg = base_config();
        cfg.env.length = 150;
        cfg.env.resample_interval = 50;
        cfg.train.total_steps = 400;
        cfg.train.prefill = 200;
        cfg.train.batch_size = 32;
        cfg.train.checkpoint_steps = {200, 400};
        std::ofstream(tiny) << cfg.to_keyvalue().serialize();
    }
    const std::string nominal = (kConfigDir / "nominal.cfg").string();
    const std::vector<std::vector<std::string>> commands = {
        {"train", "--config", tiny.string(), "--seed", "4", "--baseline-episodes", "3"},
        {"eval", "--config", nominal, "--controller", "pid", "--seed", "5", "--disturbances", "all"},
        {"eval", "--config", nominal, "--controller", "pid", "--seed", "6", "--compensate"},
        {"sensitivity", "--config", nominal, "--controller", "pid", "--points", "51"},
        {"latency-sweep", "--config", nominal, "--controller", "pid", "--latencies", "0.01,0.1", "--eval-seeds", "1,2"},
    };
    int identical = 0, total = 0;
    bool ok = true;
    for (std::size_t i = 0; i < commands.size(); ++i) {
        const fs::path a = root / ("run" + std::to_string(i)), b = root / ("replay" + std::to_string(i));
        std::vector<std::string> argv = {"fwrl"};
        argv.insert(argv.end(), commands[i].begin(), commands[i].end());
        argv.insert(argv.end(), {"--out-dir", a.string()});
        if (cli::dispatch(argv) != cli::kOk) return {false, "command failed: " + commands[i][0]};
        ok = ok && cli::dispatch({"fwrl", "replay", "--manifest", (a / "manifest.txt").string(), "--out-dir",
                                  b.string()}) == cli::kOk;
        for (const auto& e : fs::recursive_directory_iterator(a)) {
            if (e.path().extension() != ".csv") continue;
            ++total;
            const fs::path other = b / fs::relative(e.path(), a);
            if (fs::exists(other) && slurp(e.path()) == slurp(other)) ++identical;
        }
    }
    return {ok && total > 0 && identical == total,
            fmt("%d of %d CSV outputs identical over %zu commands", identical, total, commands.size())};
}

Outcome trim_check() {
    const auto t = dynamics::trim(dynamics::UavParams::nominal(), 18.0);
    return {t.elevon >= 0.015 && t.elevon <= 0.075 && t.residual < 1e-6,
            fmt("elevon %.4f rad, residual %.1e", t.elevon, t.residual)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, Outcome (*)()>> criteria = {
        {"PID tangent gains", pid_sensitivities},   {"reward arithmetic", reward_arithmetic},
        {"gradient check", gradient_check},         {"noise statistics", noise_statistics},
        {"training progress", training_progress},   {"latency study", latency_study},
        {"input-layer ablation", ablation},         {"manifest replay", determinism},
        {"trim", trim_check},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && !only.count(id)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
        std::fflush(stdout);
        failed += !o.pass;
    }
    return failed == 0 ? 0 : 1;
}
