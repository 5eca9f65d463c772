#include "fwrl/cli.hpp"

#include "fwrl/analysis.hpp"
#include "fwrl/checkpoint.hpp"
#include "fwrl/pid.hpp"
#include "fwrl/run_config.hpp"
#include "fwrl/sac.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#ifndef FWRL_VERSION
#define FWRL_VERSION "unknown"
#endif

namespace fwrl::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public Error {
public:
    using Error::Error;
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Manifest

KeyValueFile RunManifest::to_keyvalue() const {
    KeyValueFile kv;
    kv.set("schema", kSchema);
    kv.set("command", command);
    kv.set("argc", static_cast<long>(argv.size()));
    for (std::size_t i = 0; i < argv.size(); ++i) kv.set("argv." + std::to_string(i), argv[i]);
    kv.set("seed", std::to_string(seed));
    kv.set("version", version);
    kv.set("config_hash", hex64(fnv1a(config.serialize())));
    for (const auto& [role, value] : inputs) kv.set("input." + role, value);
    for (const auto& [path, hash] : outputs) kv.set("output." + path, hash);
    kv.set("wall_clock_s", wall_clock);
    kv.set("status", status);
    if (!error.empty()) kv.set("error", error);
    for (const auto& e : config.entries()) kv.set("config." + e.key, e.value);
    return kv;
}

RunManifest RunManifest::from_keyvalue(const KeyValueFile& kv) {
    kv.require_schema(kSchema);
    RunManifest m;
    m.command = kv.get_string("command");
    const long argc = kv.get_int("argc");
    for (long i = 0; i < argc; ++i) m.argv.push_back(kv.get_string("argv." + std::to_string(i)));
    m.seed = std::stoull(kv.get_string("seed"));
    m.version = kv.get_string("version", "unknown");
    m.wall_clock = kv.get_double("wall_clock_s", 0.0);
    m.status = kv.get_string("status", "ok");
    m.error = kv.get_string("error", "");
    for (const auto& e : kv.entries()) {
        if (e.key.rfind("input.", 0) == 0) m.inputs.emplace_back(e.key.substr(6), e.value);
        if (e.key.rfind("output.", 0) == 0) m.outputs.emplace_back(e.key.substr(7), e.value);
        if (e.key.rfind("config.", 0) == 0) m.config.set(e.key.substr(7), e.value);
    }
    return m;
}

void RunManifest::save(const fs::path& path) const { to_keyvalue().save(path); }

RunManifest RunManifest::load(const fs::path& path) { return from_keyvalue(KeyValueFile::load(path)); }

std::string hash_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot read " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return hex64(fnv1a(ss.str()));
}

std::vector<std::pair<std::string, std::string>> hash_outputs(const fs::path& dir) {
    std::vector<std::pair<std::string, std::string>> out;
    if (!fs::exists(dir)) return out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const std::string rel = fs::relative(e.path(), dir).generic_string();
        if (rel == "manifest.txt") continue;
        out.emplace_back(rel, hash_file(e.path()));
    }
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

struct Common {
    std::string config;
    std::uint64_t seed = 1;
    std::string out_dir;
};

struct Context {
    RunConfig cfg;
    fs::path out;
    RunManifest manifest;

    void input(const std::string& role, const fs::path& path) {
        manifest.inputs.emplace_back(role, path.string() + " " + hash_file(path));
    }
};

struct ControllerArgs {
    std::string controller = "pid";
    std::string checkpoint;
    std::string gains;
    std::string turn = "as-written";
};

struct SequenceArgs {
    std::string sequence;
    double duration = -1;
    std::string disturbances;
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else if (c != ' ') {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

analysis::DisturbanceToggles parse_toggles(const std::string& s) {
    analysis::DisturbanceToggles t;
    if (s == "all") return analysis::DisturbanceToggles::all();
    if (s == "none" || s.empty()) return t;
    for (const auto& name : split_list(s)) {
        if (name == "noise") t.noise = true;
        else if (name == "turbulence") t.turbulence = true;
        else if (name == "wind") t.wind = true;
        else if (name == "jitter") t.jitter = true;
        else if (name == "randomization") t.randomization = true;
        else throw UsageError("unknown disturbance: " + name);
    }
    return t;
}

pid::PidGains load_gains(Context& ctx, const std::string& path) {
    std::string p = path.empty() ? ctx.cfg.pid_gains_file : path;
    if (p.empty()) return pid::calibrate_gains(pid::reference_sensitivities()).gains;
    ctx.input("gains", p);
    return pid::PidGains::load(p);
}

PolicyCheckpoint load_checkpoint(Context& ctx, const std::string& path) {
    if (path.empty()) throw UsageError("--checkpoint is required for the rl controller");
    ctx.input("checkpoint", path);
    return PolicyCheckpoint::load(path);
}

std::unique_ptr<analysis::Controller> make_controller(Context& ctx, const ControllerArgs& a, env::EpisodeConfig& env) {
    if (a.controller == "pid") {
        pid::TurnCompensation v;
        if (a.turn == "as-written") v = pid::TurnCompensation::kAsWritten;
        else if (a.turn == "level") v = pid::TurnCompensation::kLevelFlight;
        else throw UsageError("--turn must be as-written or level");
        return std::make_unique<analysis::PidController>(load_gains(ctx, a.gains), env.action_scale, v);
    }
    if (a.controller == "rl") {
        PolicyCheckpoint ck = load_checkpoint(ctx, a.checkpoint);
        env.history = ck.policy.config().history;
        return std::make_unique<analysis::PolicyController>(std::move(ck), env.action_scale);
    }
    throw UsageError("--controller must be pid or rl");
}

analysis::StepSequence make_sequence(Context& ctx, const SequenceArgs& a, bool disturbances_default_all = false) {
    analysis::StepSequence seq;
    if (a.sequence.empty()) {
        seq = analysis::StepSequence::default_sequence();
        if (a.duration > 0) seq.duration = a.duration;
    } else {
        ctx.input("sequence", a.sequence);
        seq = analysis::StepSequence::load_csv(a.sequence, a.duration);
    }
    if (!a.disturbances.empty()) seq.disturbances = parse_toggles(a.disturbances);
    else if (disturbances_default_all) seq.disturbances = analysis::DisturbanceToggles::all();
    seq.validate();
    return seq;
}

void add_controller_options(CLI::App* app, ControllerArgs& a) {
    app->add_option("--controller", a.controller, "pid or rl")->check(CLI::IsMember({"pid", "rl"}));
    app->add_option("--checkpoint", a.checkpoint, "policy checkpoint (rl)");
    app->add_option("--gains", a.gains, "PID gains file (default: calibrated gains)");
    app->add_option("--turn", a.turn, "coordinated-turn term: as-written or level");
}

void add_sequence_options(CLI::App* app, SequenceArgs& a) {
    app->add_option("--sequence", a.sequence, "reference CSV: time,phi_ref_deg,theta_ref_deg");
    app->add_option("--duration", a.duration, "sequence duration in s");
    app->add_option("--disturbances", a.disturbances, "none, all, or a list of noise,turbulence,wind,jitter,randomization");
}

// --- train ---------------------------------------------------------------

struct TrainArgs {
    long steps = -1;
    std::vector<std::uint64_t> seeds;
    int workers = 1;
    int baseline_episodes = 20;
};

std::vector<sac::EpisodeMetrics> train_one(const RunConfig& cfg, std::uint64_t seed, const fs::path& dir,
                                           int baseline_episodes) {
    sac::TrainOptions opts;
    opts.out_dir = dir;
    opts.seed = seed;
    opts.on_episode = [seed](const sac::EpisodeMetrics& m) {
        if (m.episode % 10 == 0) {
            std::fprintf(stderr, "seed %llu  step %ld  episode %ld  reward %.4f  alpha %.4f\n",
                         static_cast<unsigned long long>(seed), m.step, m.episode, m.normalized_reward,
                         m.loss.alpha);
        }
    };
    auto res = sac::train(cfg.env, cfg.uav, cfg.model, cfg.train, opts);
    env::EpisodeConfig env = cfg.env;
    env.history = cfg.model.history;
    const double baseline = sac::evaluate_episodes(nullptr, env, cfg.uav, baseline_episodes, seed + 7919);
    std::ofstream f(dir / "baseline.csv");
    f << "policy,episodes,normalized_reward\nuniform_random," << baseline_episodes << ',' << fmt(baseline) << '\n';
    return res.episodes;
}

void cmd_train(Context& ctx, const Common& c, const TrainArgs& a) {
    if (a.workers != 1) throw UsageError("--workers: only single-worker training is available");
    RunConfig cfg = ctx.cfg;
    if (a.steps >= 0) cfg.train.total_steps = a.steps;
    ctx.cfg = cfg;
    if (a.seeds.empty()) {
        train_one(cfg, c.seed, ctx.out, a.baseline_episodes);
        return;
    }
    std::vector<std::vector<sac::EpisodeMetrics>> runs;
    for (auto s : a.seeds) runs.push_back(train_one(cfg, s, ctx.out / ("seed_" + std::to_string(s)), a.baseline_episodes));
    sac::write_aggregate_csv(ctx.out / "aggregate.csv", sac::aggregate_seeds(runs, 1000));
}

// --- eval ----------------------------------------------------------------

struct EvalArgs {
    ControllerArgs controller;
    SequenceArgs sequence;
    double delay = -1;
    bool compensate = false;
};

void cmd_eval(Context& ctx, const Common& c, const EvalArgs& a) {
    env::EpisodeConfig env = ctx.cfg.env;
    auto controller = make_controller(ctx, a.controller, env);
    const auto seq = make_sequence(ctx, a.sequence);
    const auto r = analysis::run_step_eval(*controller, seq, env, ctx.cfg.uav, c.seed, a.delay);
    env::write_trace_csv(ctx.out / "trace.csv", r.trace);
    analysis::write_eval_metrics_csv(ctx.out / "metrics.csv", {controller->name()}, {r});
    std::printf("%s: mean reward %.4f, roll sse %.3f deg, pitch sse %.3f deg, Sm %.4f / %.4f%s\n",
                controller->name().c_str(), r.mean_reward, rad2deg(r.roll.steady_state_error),
                rad2deg(r.pitch.steady_state_error), r.sm_right, r.sm_left, r.diverged ? " (diverged)" : "");
    if (a.compensate) {
        env::EpisodeConfig ecfg = env;
        if (a.delay >= 0) ecfg.disturbances.actuation_delay = a.delay;
        const auto oc = analysis::offset_compensate(*controller, seq, ecfg, ctx.cfg.uav, c.seed);
        std::ofstream f(ctx.out / "offset.csv");
        f << "phi_adjust_deg,theta_adjust_deg,phi_error_before_deg,theta_error_before_deg,phi_error_after_deg,"
             "theta_error_after_deg\n";
        f << fmt(rad2deg(oc.phi_adjust)) << ',' << fmt(rad2deg(oc.theta_adjust)) << ','
          << fmt(rad2deg(oc.phi_error_before)) << ',' << fmt(rad2deg(oc.theta_error_before)) << ','
          << fmt(rad2deg(oc.phi_error_after)) << ',' << fmt(rad2deg(oc.theta_error_after)) << '\n';
        env::write_trace_csv(ctx.out / "trace_compensated.csv", oc.rerun.trace);
    }
}

// --- sensitivity -----------------------------------------------------------

struct SensitivityArgs {
    ControllerArgs controller;
    int points = 201;
};

void cmd_sensitivity(Context& ctx, const Common&, const SensitivityArgs& a) {
    env::EpisodeConfig env = ctx.cfg.env;
    auto controller = make_controller(ctx, a.controller, env);
    const auto anchor = analysis::level_flight_anchor(ctx.cfg.uav, env.trim_airspeed);
    const auto ranges = analysis::default_channel_ranges();
    std::vector<analysis::SensitivityCurve> curves;
    for (int ch = 0; ch < env::kChannels; ++ch) {
        curves.push_back(analysis::sensitivity_sweep(*controller, ch, anchor, ranges[ch], a.points));
    }
    analysis::write_curves_csv(ctx.out / "curves.csv", curves);
    const auto tangent = analysis::tangent_gains(*controller, anchor, ranges);
    const auto wide = analysis::wide_gains(*controller, anchor, ranges, a.points);
    analysis::write_gain_table_csv(ctx.out / "gains.csv", {controller->name()}, {tangent}, {wide});
    const auto g = tangent.as_array();
    for (std::size_t i = 0; i < g.size(); ++i) {
        std::printf("%-22s %+.4f\n", analysis::GainTable::kNames[i], g[i]);
    }
}

// --- latency-sweep ---------------------------------------------------------

struct LatencyArgs {
    ControllerArgs controller;
    SequenceArgs sequence;
    std::vector<double> latencies = {0.01, 0.05, 0.1};
    std::vector<std::uint64_t> eval_seeds = {1, 2, 3, 4, 5};
};

void cmd_latency(Context& ctx, const Common&, const LatencyArgs& a) {
    env::EpisodeConfig env = ctx.cfg.env;
    auto controller = make_controller(ctx, a.controller, env);
    analysis::StepSequence seq;
    if (a.sequence.sequence.empty()) {
        seq = analysis::pitch_step_sequence(a.sequence.duration > 0 ? a.sequence.duration : 10.0);
        seq.disturbances = parse_toggles(a.sequence.disturbances.empty() ? "noise,turbulence" : a.sequence.disturbances);
    } else {
        seq = make_sequence(ctx, a.sequence);
    }
    const auto rows = analysis::latency_sweep(*controller, seq, env, ctx.cfg.uav, a.latencies, a.eval_seeds);
    analysis::write_latency_csv(ctx.out / "latency.csv", rows);
    std::vector<double> lat, sm, sme;
    for (const auto& r : rows) {
        lat.push_back(r.latency);
        sm.push_back(r.sm_pitch);
        sme.push_back(r.sm_elevator);
    }
    std::ofstream f(ctx.out / "latency_summary.csv");
    f << "latency_s,mean_sm_pitch,mean_sm_elevator,diverged\n";
    for (double l : a.latencies) {
        double s = 0, se = 0;
        int n = 0, div = 0;
        for (const auto& r : rows) {
            if (r.latency != l) continue;
            s += r.sm_pitch;
            se += r.sm_elevator;
            div += r.diverged ? 1 : 0;
            ++n;
        }
        f << fmt(l) << ',' << fmt(n ? s / n : 0.0) << ',' << fmt(n ? se / n : 0.0) << ',' << div << '\n';
    }
    const double rho = analysis::spearman(lat, sm);
    const double rho_e = analysis::spearman(lat, sme);
    std::ofstream g(ctx.out / "spearman.csv");
    g << "metric,rho\nsm_pitch," << fmt(rho) << "\nsm_elevator," << fmt(rho_e) << '\n';
    std::printf("spearman(latency, Sm pitch) = %.4f\n", rho);
}

// --- compare ----------------------------------------------------------------

struct CompareArgs {
    std::string checkpoint;
    std::string gains;
    SequenceArgs sequence;
};

void cmd_compare(Context& ctx, const Common& c, const CompareArgs& a) {
    env::EpisodeConfig env_rl = ctx.cfg.env;
    env::EpisodeConfig env_pid = ctx.cfg.env;
    ControllerArgs rl_args, pid_args;
    rl_args.controller = "rl";
    rl_args.checkpoint = a.checkpoint;
    pid_args.gains = a.gains;
    auto rl = make_controller(ctx, rl_args, env_rl);
    auto pid = make_controller(ctx, pid_args, env_pid);
    const auto seq = make_sequence(ctx, a.sequence);
    const auto r_rl = analysis::run_step_eval(*rl, seq, env_rl, ctx.cfg.uav, c.seed);
    const auto r_pid = analysis::run_step_eval(*pid, seq, env_pid, ctx.cfg.uav, c.seed);
    env::write_trace_csv(ctx.out / "trace_rl.csv", r_rl.trace);
    env::write_trace_csv(ctx.out / "trace_pid.csv", r_pid.trace);
    analysis::write_eval_metrics_csv(ctx.out / "metrics.csv", {"rl", "pid"}, {r_rl, r_pid});
    const auto anchor = analysis::level_flight_anchor(ctx.cfg.uav, ctx.cfg.env.trim_airspeed);
    const auto ranges = analysis::default_channel_ranges();
    analysis::write_gain_table_csv(ctx.out / "gains.csv", {"rl", "pid"},
                                   {analysis::tangent_gains(*rl, anchor, ranges),
                                    analysis::tangent_gains(*pid, anchor, ranges)},
                                   {analysis::wide_gains(*rl, anchor, ranges), analysis::wide_gains(*pid, anchor, ranges)});
    std::printf("%-4s reward %.4f  Sm %.4f / %.4f\n%-4s reward %.4f  Sm %.4f / %.4f\n", "rl", r_rl.mean_reward,
                r_rl.sm_right, r_rl.sm_left, "pid", r_pid.mean_reward, r_pid.sm_right, r_pid.sm_left);
}

// --- ablate -----------------------------------------------------------------

struct AblateArgs {
    std::string variants = "conv,fc,fch1";
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    long steps = -1;
    int eval_episodes = 20;
};

RunConfig variant_config(RunConfig cfg, const std::string& v) {
    if (v == "conv") {
        cfg.model.input = nnet::InputLayer::kConv;
    } else if (v == "fc") {
        cfg.model.input = nnet::InputLayer::kDense;
    } else if (v == "fch1") {
        cfg.model.input = nnet::InputLayer::kDense;
        cfg.model.history = 1;
    } else {
        throw UsageError("unknown variant: " + v);
    }
    cfg.env.history = cfg.model.history;
    return cfg;
}

void cmd_ablate(Context& ctx, const Common&, const AblateArgs& a) {
    RunConfig base = ctx.cfg;
    if (a.steps >= 0) base.train.total_steps = a.steps;
    ctx.cfg = base;
    const auto variants = split_list(a.variants);
    for (const auto& v : variants) variant_config(base, v);
    std::ofstream f(ctx.out / "ablation.csv");
    f << "variant,seed,eval_reward,terminations,sm_right,sm_left,sm_roll,sm_pitch\n";
    for (const auto& v : variants) {
        const RunConfig cfg = variant_config(base, v);
        std::vector<std::vector<sac::EpisodeMetrics>> runs;
        for (auto s : a.seeds) {
            const fs::path dir = ctx.out / v / ("seed_" + std::to_string(s));
            runs.push_back(train_one(cfg, s, dir, a.eval_episodes));
            auto ck = PolicyCheckpoint::load(dir / ("policy_" + std::to_string(cfg.train.total_steps) + ".bin"));
            analysis::PolicyController pc(std::move(ck), cfg.env.action_scale, v);
            int term = 0;
            const double reward = sac::evaluate_episodes(&pc, cfg.env, cfg.uav, a.eval_episodes, 100000 + s, &term);
            const auto r = analysis::run_step_eval(pc, analysis::StepSequence::default_sequence(), cfg.env, cfg.uav, s);
            f << v << ',' << s << ',' << fmt(reward) << ',' << term << ',' << fmt(r.sm_right) << ',' << fmt(r.sm_left)
              << ',' << fmt(r.sm_roll) << ',' << fmt(r.sm_pitch) << '\n';
            f.flush();
        }
        sac::write_aggregate_csv(ctx.out / v / "aggregate.csv", sac::aggregate_seeds(runs, 1000));
    }
}

// ---------------------------------------------------------------------------

std::vector<std::string> strip_options(const std::vector<std::string>& argv, const std::vector<std::string>& names) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < argv.size(); ++i) {
        bool drop = false;
        for (const auto& n : names) {
            if (argv[i] == n) {
                drop = true;
                ++i;
                break;
            }
            if (argv[i].rfind(n + "=", 0) == 0) {
                drop = true;
                break;
            }
        }
        if (!drop) out.push_back(argv[i]);
    }
    return out;
}

int cmd_replay(const std::string& manifest_path, std::string out_dir) {
    const RunManifest m = RunManifest::load(manifest_path);
    if (m.argv.size() < 2) throw Error("manifest has no command line");
    if (out_dir.empty()) throw UsageError("replay needs --out-dir");
    for (const auto& [role, value] : m.inputs) {
        if (role == "config") continue;
        const auto space = value.rfind(' ');
        const std::string path = value.substr(0, space);
        const std::string hash = value.substr(space + 1);
        if (hash_file(path) != hash) throw Error("input " + role + " changed since the recorded run: " + path);
    }
    fs::create_directories(out_dir);
    const fs::path cfg_path = fs::path(out_dir) / "config.cfg";
    m.config.save(cfg_path);
    auto argv = strip_options(m.argv, {"--config", "--out-dir"});
    argv.push_back("--config");
    argv.push_back(cfg_path.string());
    argv.push_back("--out-dir");
    argv.push_back(out_dir);
    const int code = dispatch(argv);
    if (code != kOk) return code;
    const auto now = hash_outputs(out_dir);
    int mismatches = 0;
    for (const auto& [path, hash] : m.outputs) {
        auto it = std::find_if(now.begin(), now.end(), [&](const auto& p) { return p.first == path; });
        if (it == now.end() || it->second != hash) {
            std::printf("differs: %s\n", path.c_str());
            ++mismatches;
        }
    }
    std::printf("replay: %zu of %zu outputs identical\n", m.outputs.size() - mismatches, m.outputs.size());
    return mismatches == 0 ? kOk : kRuntimeFailure;
}

}  // namespace

int dispatch(const std::vector<std::string>& argv) {
    std::vector<const char*> ptrs;
    for (const auto& a : argv) ptrs.push_back(a.c_str());
    return dispatch(static_cast<int>(ptrs.size()), ptrs.data());
}

int dispatch(int argc, const char* const* argv) {
    CLI::App app{"Flying-wing attitude control lab: SAC training, PID baseline, evaluation and analysis", "fwrl"};
    app.require_subcommand(1);
    app.set_version_flag("--version", FWRL_VERSION);

    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config, "run config file");
        sub->add_option("--seed", common.seed, "random seed");
        sub->add_option("--out-dir", common.out_dir, "output directory (default $FWRL_OUT_DIR or fwrl_out)");
    };

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "train a SAC policy; writes checkpoints and metrics.csv");
    add_common(train);
    train->add_option("--steps", train_args.steps, "environment steps after the prefill");
    train->add_option("--seeds", train_args.seeds, "train several seeds into seed_<n> subdirectories")->delimiter(',');
    train->add_option("--workers", train_args.workers, "rollout workers (1 only)");
    train->add_option("--baseline-episodes", train_args.baseline_episodes, "episodes for the random-policy baseline");

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "closed-loop step evaluation; writes trace.csv and metrics.csv");
    add_common(eval);
    add_controller_options(eval, eval_args.controller);
    add_sequence_options(eval, eval_args.sequence);
    eval->add_option("--delay", eval_args.delay, "actuation delay override in s");
    eval->add_flag("--compensate", eval_args.compensate, "estimate and remove the steady reference offset");

    SensitivityArgs sens_args;
    auto* sens = app.add_subcommand("sensitivity", "open-loop sweeps; writes curves.csv and gains.csv");
    add_common(sens);
    add_controller_options(sens, sens_args.controller);
    sens->add_option("--points", sens_args.points, "grid points per channel (odd)");

    LatencyArgs lat_args;
    auto* lat = app.add_subcommand("latency-sweep", "pitch-step smoothness across actuation delays");
    add_common(lat);
    add_controller_options(lat, lat_args.controller);
    add_sequence_options(lat, lat_args.sequence);
    lat->add_option("--latencies", lat_args.latencies, "delays in s")->delimiter(',');
    lat->add_option("--eval-seeds", lat_args.eval_seeds, "evaluation seeds")->delimiter(',');

    CompareArgs cmp_args;
    auto* cmp = app.add_subcommand("compare", "RL policy against the PID on the same sequence");
    add_common(cmp);
    cmp->add_option("--checkpoint", cmp_args.checkpoint, "policy checkpoint")->required();
    cmp->add_option("--gains", cmp_args.gains, "PID gains file");
    add_sequence_options(cmp, cmp_args.sequence);

    AblateArgs abl_args;
    auto* abl = app.add_subcommand("ablate", "train and compare conv, fc and fch1 input layers");
    add_common(abl);
    abl->add_option("--variants", abl_args.variants, "comma list of conv, fc, fch1");
    abl->add_option("--seeds", abl_args.seeds, "training seeds")->delimiter(',');
    abl->add_option("--steps", abl_args.steps, "environment steps per run");
    abl->add_option("--eval-episodes", abl_args.eval_episodes, "held-out evaluation episodes");

    std::string manifest_path;
    auto* rep = app.add_subcommand("replay", "re-run a command from its manifest and compare outputs");
    add_common(rep);
    rep->add_option("--manifest", manifest_path, "manifest.txt of the original run")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    } catch (const CLI::CallForVersion& e) {
        app.exit(e);
        return kOk;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return kUsage;
    }

    CLI::App* sub = app.get_subcommands().front();
    if (sub == rep) {
        try {
            return cmd_replay(manifest_path, common.out_dir);
        } catch (const UsageError& e) {
            std::cerr << "error: " << e.what() << '\n';
            return kUsage;
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << '\n';
            return kRuntimeFailure;
        }
    }

    Context ctx;
    const auto t0 = std::chrono::steady_clock::now();
    if (!common.out_dir.empty()) {
        ctx.out = common.out_dir;
    } else if (const char* env_out = std::getenv(kOutDirEnv); env_out && *env_out) {
        ctx.out = env_out;
    } else {
        ctx.out = "fwrl_out";
    }
    ctx.manifest.command = sub->get_name();
    for (int i = 0; i < argc; ++i) ctx.manifest.argv.emplace_back(argv[i]);
    ctx.manifest.seed = common.seed;
    ctx.manifest.version = FWRL_VERSION;

    try {
        if (!common.config.empty()) {
            ctx.cfg = RunConfig::load(common.config);
            ctx.input("config", common.config);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    }

    int code = kOk;
    try {
        fs::create_directories(ctx.out);
        if (sub == train) cmd_train(ctx, common, train_args);
        else if (sub == eval) cmd_eval(ctx, common, eval_args);
        else if (sub == sens) cmd_sensitivity(ctx, common, sens_args);
        else if (sub == lat) cmd_latency(ctx, common, lat_args);
        else if (sub == cmp) cmd_compare(ctx, common, cmp_args);
        else if (sub == abl) cmd_ablate(ctx, common, abl_args);
        ctx.cfg.to_keyvalue().save(ctx.out / "config.cfg");
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        ctx.manifest.status = "failed";
        ctx.manifest.error = e.what();
        code = kRuntimeFailure;
    }
    ctx.manifest.config = ctx.cfg.to_keyvalue();
    ctx.manifest.wall_clock =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    try {
        ctx.manifest.outputs = hash_outputs(ctx.out);
        ctx.manifest.save(ctx.out / "manifest.txt");
    } catch (const std::exception& e) {
        std::cerr << "error: cannot write manifest: " << e.what() << '\n';
        code = kRuntimeFailure;
    }
    return code;
}

}  // namespace fwrl::cli
