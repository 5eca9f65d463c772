#include "fwrl/analysis.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <complex>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace fwrl::analysis {

using env::Measurement;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

env::Action offsets_to_action(const dynamics::Elevons& e, double scale) {
    return {std::clamp(e.right / scale, -1.0, 1.0), std::clamp(e.left / scale, -1.0, 1.0)};
}

}  // namespace

// ---------------------------------------------------------------------------

PolicyController::PolicyController(PolicyCheckpoint checkpoint, double action_scale, std::string name)
    : ck_(std::move(checkpoint)), action_scale_(action_scale), name_(std::move(name)) {
    ck_.normalizer.set_frozen(true);
}

env::Action PolicyController::evaluate(std::span<const double> raw_window) const {
    std::vector<double> norm(raw_window.size());
    ck_.normalizer.normalize(raw_window, norm);
    return ck_.policy.act(norm);
}

env::Action PolicyController::act(const env::AttitudeEnv& env) {
    const auto values = env.raw_window().values();
    const std::size_t need = static_cast<std::size_t>(ck_.policy.config().history) * env::kChannels;
    if (values.size() < need) throw ConfigError("environment history shorter than the policy window");
    return evaluate(values.first(need));
}

dynamics::Elevons PolicyController::respond(const Measurement& m) const {
    env::ObservationWindow w(ck_.policy.config().history);
    w.fill(m);
    const env::Action a = evaluate(w.values());
    return {a[0] * action_scale_, a[1] * action_scale_};
}

PidController::PidController(pid::PidGains gains, double action_scale, pid::TurnCompensation variant)
    : gains_(gains), action_scale_(action_scale), variant_(variant) {
    gains_.validate();
}

env::Action PidController::act(const env::AttitudeEnv& env) {
    const Measurement& m = env.measurement();
    pid::PidInput in;
    in.phi_ref = env.reference().phi;
    in.theta_ref = env.reference().theta;
    in.phi = m[env::kPhi];
    in.theta = m[env::kTheta];
    in.p = m[env::kP];
    in.q = m[env::kQ];
    in.airspeed = std::max(m[env::kAirspeed], 1.5);
    const auto out = pid::pid_step(in, gains_, env.config().base_period, state_, variant_);
    return offsets_to_action(out.elevons, action_scale_);
}

dynamics::Elevons PidController::respond(const Measurement& m) const {
    pid::PidInput in;
    in.phi = m[env::kPhi];
    in.theta = m[env::kTheta];
    in.phi_ref = m[env::kPhi] - m[env::kErrPhi];
    in.theta_ref = m[env::kTheta] - m[env::kErrTheta];
    in.p = m[env::kP];
    in.q = m[env::kQ];
    in.airspeed = m[env::kAirspeed];
    const double nu = gains_.v_ref / in.airspeed;
    pid::PidState st = state_;
    st.reset();
    st.clamp_enabled = false;
    // integral of (reference - state) is -I; only the outer-loop part of the rate error is seeded
    st.int_p = gains_.ki_p * nu * nu * gains_.k_phi * -m[env::kIntPhi];
    st.int_q = gains_.ki_q * nu * nu * gains_.k_theta * -m[env::kIntTheta];
    const auto out = pid::pid_step(in, gains_, 0.0, st, variant_);
    return out.unsaturated;
}

BiasedController::BiasedController(Controller& inner, double elevator_bias, double aileron_bias, double action_scale)
    : inner_(inner), elevator_bias_(elevator_bias), aileron_bias_(aileron_bias), action_scale_(action_scale) {}

env::Action BiasedController::act(const env::AttitudeEnv& env) {
    env::Action a = inner_.act(env);
    const auto bias = dynamics::elevon_map(elevator_bias_, aileron_bias_);
    a[0] = std::clamp(a[0] + bias.right / action_scale_, -1.0, 1.0);
    a[1] = std::clamp(a[1] + bias.left / action_scale_, -1.0, 1.0);
    return a;
}

dynamics::Elevons BiasedController::respond(const Measurement& m) const {
    auto e = inner_.respond(m);
    const auto bias = dynamics::elevon_map(elevator_bias_, aileron_bias_);
    return {e.right + bias.right, e.left + bias.left};
}

// ---------------------------------------------------------------------------

std::vector<double> amplitude_spectrum(std::span<const double> signal) {
    const std::vector<double> in(signal.begin(), signal.end());
    std::vector<std::complex<double>> out;
    Eigen::FFT<double> fft;
    fft.fwd(out, in);
    std::vector<double> mag(in.size() / 2 + 1);
    for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::abs(out[i]);
    return mag;
}

double smoothness(std::span<const double> signal, double sample_rate) {
    const std::size_t n = signal.size();
    if (n < 2) throw Error("smoothness: need at least two samples");
    if (!(sample_rate > 0.0)) throw Error("smoothness: sample rate must be positive");
    const auto mag = amplitude_spectrum(signal);
    double acc = 0.0;
    for (std::size_t i = 1; i < mag.size(); ++i) {
        const double f = static_cast<double>(i) * sample_rate / static_cast<double>(n);
        acc += mag[i] * f;
    }
    return 2.0 / (static_cast<double>(n) * sample_rate) * acc;
}

// ---------------------------------------------------------------------------

void DisturbanceToggles::apply(env::EpisodeConfig& cfg) const {
    cfg.disturbances.noise = noise;
    cfg.disturbances.turbulence = turbulence;
    cfg.disturbances.wind = wind;
    cfg.disturbances.jitter = jitter;
    cfg.randomization.enabled = randomization;
}

void StepSequence::validate() const {
    if (commands.empty()) throw ConfigError("step sequence has no commands");
    if (commands.front().time != 0.0) throw ConfigError("step sequence must start at time 0");
    for (std::size_t i = 1; i < commands.size(); ++i) {
        if (!(commands[i].time > commands[i - 1].time)) {
            throw ConfigError("step sequence times must be strictly increasing");
        }
    }
    if (!(duration > commands.back().time)) throw ConfigError("step sequence duration must exceed the last command");
}

StepCommand StepSequence::at(double time) const {
    StepCommand c = commands.front();
    for (const auto& cmd : commands) {
        if (cmd.time <= time + 1e-9) c = cmd;
    }
    return c;
}

StepSequence StepSequence::load_csv(const std::filesystem::path& path, double duration) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open step sequence: " + path.string());
    StepSequence seq;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        if (lineno == 1 && line.find("time") != std::string::npos) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream is(line);
        StepCommand c;
        double phi_deg = 0, theta_deg = 0;
        if (!(is >> c.time >> phi_deg >> theta_deg)) {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected time,phi_ref_deg,theta_ref_deg");
        }
        c.phi_ref = deg2rad(phi_deg);
        c.theta_ref = deg2rad(theta_deg);
        seq.commands.push_back(c);
    }
    if (seq.commands.empty()) throw ConfigError(path.string() + ": no commands");
    seq.duration = duration > 0 ? duration : seq.commands.back().time + 5.0;
    seq.validate();
    return seq;
}

StepSequence StepSequence::default_sequence() {
    StepSequence s;
    s.commands = {{0.0, 0.0, 0.0},
                  {3.0, deg2rad(20.0), 0.0},
                  {8.0, deg2rad(-20.0), 0.0},
                  {13.0, 0.0, 0.0},
                  {18.0, 0.0, deg2rad(10.0)},
                  {23.0, 0.0, deg2rad(-10.0)},
                  {28.0, 0.0, 0.0}};
    s.duration = 32.0;
    return s;
}

StepSequence StepSequence::constant(double phi_ref, double theta_ref, double duration) {
    StepSequence s;
    s.commands = {{0.0, phi_ref, theta_ref}};
    s.duration = duration;
    return s;
}

StepSequence pitch_step_sequence(double duration) {
    StepSequence s;
    s.commands = {{0.0, 0.0, 0.0}, {2.0, 0.0, deg2rad(10.0)}};
    s.duration = duration;
    return s;
}

namespace {

struct Segment {
    std::size_t begin;
    std::size_t end;  // exclusive
};

AxisMetrics axis_metrics(const std::vector<env::StepRecord>& trace, const std::vector<Segment>& segments,
                         bool roll) {
    auto value = [&](std::size_t i) { return roll ? trace[i].state.attitude.x() : trace[i].state.attitude.y(); };
    auto ref = [&](std::size_t i) { return roll ? trace[i].phi_ref : trace[i].theta_ref; };
    auto err = [&](std::size_t i) {
        const double e = ref(i) - value(i);
        return roll ? wrap_angle(e) : e;
    };

    AxisMetrics m;
    double rise_sum = 0, over_sum = 0, sse_sum = 0;
    int rise_n = 0, over_n = 0, sse_n = 0;
    for (std::size_t s = 0; s < segments.size(); ++s) {
        const auto [b, e] = segments[s];
        if (e <= b) continue;
        const std::size_t tail = b + 3 * (e - b) / 4;
        double acc = 0;
        for (std::size_t i = tail; i < e; ++i) acc += std::abs(err(i));
        sse_sum += acc / static_cast<double>(e - tail);
        ++sse_n;

        const double prev_ref = b == 0 ? ref(0) : ref(b - 1);
        const double step = roll ? wrap_angle(ref(b) - prev_ref) : ref(b) - prev_ref;
        if (s == 0 || std::abs(step) < 1e-9) continue;
        const double start = b == 0 ? value(0) : value(b - 1);
        const double sign = step > 0 ? 1.0 : -1.0;
        double t10 = kNaN, t90 = kNaN, peak = -std::numeric_limits<double>::infinity();
        const double t0 = b == 0 ? 0.0 : trace[b - 1].time;
        for (std::size_t i = b; i < e; ++i) {
            const double progress = sign * (value(i) - start) / std::abs(step);
            if (std::isnan(t10) && progress >= 0.1) t10 = trace[i].time - t0;
            if (std::isnan(t90) && progress >= 0.9) t90 = trace[i].time - t0;
            peak = std::max(peak, progress);
        }
        if (!std::isnan(t10) && !std::isnan(t90)) {
            rise_sum += t90 - t10;
            ++rise_n;
        }
        over_sum += std::max(0.0, peak - 1.0);
        ++over_n;
    }
    m.rise_time = rise_n ? rise_sum / rise_n : kNaN;
    m.overshoot = over_n ? over_sum / over_n : kNaN;
    m.steady_state_error = sse_n ? sse_sum / sse_n : kNaN;
    return m;
}

}  // namespace

EvalResult run_step_eval(Controller& controller, const StepSequence& sequence, env::EpisodeConfig cfg,
                         const dynamics::UavParams& nominal, std::uint64_t seed, double delay_override) {
    sequence.validate();
    sequence.disturbances.apply(cfg);
    if (delay_override >= 0.0) cfg.disturbances.actuation_delay = delay_override;
    cfg.length = std::max(1, static_cast<int>(std::lround(sequence.duration / cfg.base_period)));
    cfg.resample_interval = 0;

    env::AttitudeEnv env(cfg, nominal, seed);
    controller.reset();
    const StepCommand first = sequence.at(0.0);
    env.reset_at_trim({first.phi_ref, first.theta_ref});
    env.set_reference_schedule([&sequence](double t) {
        const StepCommand c = sequence.at(t);
        return env::Reference{c.phi_ref, c.theta_ref};
    });

    EvalResult r;
    r.sample_rate = 1.0 / cfg.base_period;
    r.trace.reserve(cfg.length);
    while (!env.done()) {
        const env::Action a = controller.act(env);
        env::StepResult s = env.step(a);
        r.trace.push_back(s.record);
        if (s.terminal) r.diverged = true;
    }
    r.mean_reward = env.normalized_return();

    std::vector<Segment> segments;
    std::size_t begin = 0;
    for (std::size_t i = 1; i <= r.trace.size(); ++i) {
        const bool boundary = i == r.trace.size() || r.trace[i].phi_ref != r.trace[i - 1].phi_ref ||
                              r.trace[i].theta_ref != r.trace[i - 1].theta_ref;
        if (boundary) {
            segments.push_back({begin, i});
            begin = i;
        }
    }
    r.roll = axis_metrics(r.trace, segments, true);
    r.pitch = axis_metrics(r.trace, segments, false);

    if (r.trace.size() >= 2) {
        std::vector<double> right, left, pitch, roll;
        for (const auto& rec : r.trace) {
            right.push_back(rec.action[0]);
            left.push_back(rec.action[1]);
            pitch.push_back(rad2deg(rec.state.attitude.y()));
            roll.push_back(rad2deg(rec.state.attitude.x()));
        }
        r.sm_right = smoothness(right, r.sample_rate);
        r.sm_left = smoothness(left, r.sample_rate);
        r.sm_pitch = smoothness(pitch, r.sample_rate);
        r.sm_roll = smoothness(roll, r.sample_rate);
    }
    return r;
}

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace

void write_eval_metrics_csv(const std::filesystem::path& path, const std::vector<std::string>& labels,
                            const std::vector<EvalResult>& results) {
    std::ofstream f(path);
    if (!f) throw Error("cannot write " + path.string());
    f << "label,steps,diverged,mean_reward,roll_rise_time,roll_overshoot,roll_sse_deg,pitch_rise_time,"
         "pitch_overshoot,pitch_sse_deg,sm_right,sm_left,sm_roll,sm_pitch\n";
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        f << labels.at(i) << ',' << r.trace.size() << ',' << (r.diverged ? 1 : 0) << ',' << fmt(r.mean_reward)
          << ',' << fmt(r.roll.rise_time) << ',' << fmt(r.roll.overshoot) << ','
          << fmt(rad2deg(r.roll.steady_state_error)) << ',' << fmt(r.pitch.rise_time) << ','
          << fmt(r.pitch.overshoot) << ',' << fmt(rad2deg(r.pitch.steady_state_error)) << ',' << fmt(r.sm_right)
          << ',' << fmt(r.sm_left) << ',' << fmt(r.sm_roll) << ',' << fmt(r.sm_pitch) << '\n';
    }
}

// ---------------------------------------------------------------------------

std::array<double, env::kChannels> default_channel_ranges() {
    std::array<double, env::kChannels> r{};
    r[env::kP] = r[env::kQ] = r[env::kR] = deg2rad(60.0);
    r[env::kAlpha] = deg2rad(8.0);
    r[env::kBeta] = deg2rad(10.0);
    r[env::kAirspeed] = 6.5;
    r[env::kPrevRight] = r[env::kPrevLeft] = deg2rad(30.0);
    r[env::kIntPhi] = r[env::kIntTheta] = 10.0;
    r[env::kPhi] = deg2rad(40.0);
    r[env::kTheta] = deg2rad(15.0);
    r[env::kErrPhi] = deg2rad(60.0);
    r[env::kErrTheta] = deg2rad(25.0);
    return r;
}

Measurement level_flight_anchor(const dynamics::UavParams& nominal, double airspeed) {
    const auto t = dynamics::trim(nominal, airspeed);
    Measurement m{};
    m[env::kAlpha] = t.alpha;
    m[env::kAirspeed] = airspeed;
    m[env::kTheta] = t.state.attitude.y();
    return m;
}

SensitivityCurve sensitivity_sweep(const Controller& controller, int channel, const Measurement& anchor,
                                   double half_range, int points) {
    if (channel < 0 || channel >= env::kChannels) throw Error("sensitivity_sweep: bad channel");
    if (points < 3 || points % 2 == 0) throw Error("sensitivity_sweep: points must be odd and >= 3");
    SensitivityCurve c;
    c.channel = channel;
    c.anchor_index = points / 2;
    for (int i = 0; i < points; ++i) {
        Measurement m = anchor;
        const double offset = i == c.anchor_index
                                  ? 0.0
                                  : half_range * static_cast<double>(i - c.anchor_index) / c.anchor_index;
        m[channel] = anchor[channel] + offset;
        const auto e = controller.respond(m);
        const auto v = dynamics::inverse_elevon_map(e.left, e.right);
        c.grid.push_back(m[channel]);
        c.aileron.push_back(v.aileron);
        c.elevator.push_back(v.elevator);
    }
    return c;
}

std::array<double, 6> GainTable::as_array() const {
    return {aileron_e_phi, elevator_e_theta, aileron_i_phi, elevator_i_theta, aileron_p, elevator_q};
}

GainTable tangent_gains(const Controller& controller, const Measurement& anchor,
                        const std::array<double, env::kChannels>& half_ranges, double rel_step) {
    auto slope = [&](int channel, bool aileron) {
        const double h = rel_step * 2.0 * half_ranges[channel];
        Measurement plus = anchor, minus = anchor;
        plus[channel] += h;
        minus[channel] -= h;
        const auto ep = controller.respond(plus);
        const auto em = controller.respond(minus);
        const auto vp = dynamics::inverse_elevon_map(ep.left, ep.right);
        const auto vm = dynamics::inverse_elevon_map(em.left, em.right);
        const double dp = aileron ? vp.aileron : vp.elevator;
        const double dm = aileron ? vm.aileron : vm.elevator;
        return (dp - dm) / (2.0 * h);
    };
    GainTable g;
    g.aileron_e_phi = -slope(env::kErrPhi, true);
    g.elevator_e_theta = -slope(env::kErrTheta, false);
    g.aileron_i_phi = -slope(env::kIntPhi, true);
    g.elevator_i_theta = -slope(env::kIntTheta, false);
    g.aileron_p = slope(env::kP, true);
    g.elevator_q = slope(env::kQ, false);
    return g;
}

GainTable wide_gains(const Controller& controller, const Measurement& anchor,
                     const std::array<double, env::kChannels>& half_ranges, int points) {
    auto slope = [&](int channel, bool aileron) {
        const auto c = sensitivity_sweep(controller, channel, anchor, half_ranges[channel], points);
        const auto& y = aileron ? c.aileron : c.elevator;
        double mx = 0, my = 0;
        for (int i = 0; i < points; ++i) {
            mx += c.grid[i];
            my += y[i];
        }
        mx /= points;
        my /= points;
        double sxy = 0, sxx = 0;
        for (int i = 0; i < points; ++i) {
            sxy += (c.grid[i] - mx) * (y[i] - my);
            sxx += (c.grid[i] - mx) * (c.grid[i] - mx);
        }
        return sxy / sxx;
    };
    GainTable g;
    g.aileron_e_phi = -slope(env::kErrPhi, true);
    g.elevator_e_theta = -slope(env::kErrTheta, false);
    g.aileron_i_phi = -slope(env::kIntPhi, true);
    g.elevator_i_theta = -slope(env::kIntTheta, false);
    g.aileron_p = slope(env::kP, true);
    g.elevator_q = slope(env::kQ, false);
    return g;
}

void write_curves_csv(const std::filesystem::path& path, const std::vector<SensitivityCurve>& curves) {
    std::ofstream f(path);
    if (!f) throw Error("cannot write " + path.string());
    f << "channel,index,value,aileron,elevator,is_anchor\n";
    for (const auto& c : curves) {
        for (std::size_t i = 0; i < c.grid.size(); ++i) {
            f << env::channel_name(c.channel) << ',' << i << ',' << fmt(c.grid[i]) << ',' << fmt(c.aileron[i]) << ','
              << fmt(c.elevator[i]) << ',' << (static_cast<int>(i) == c.anchor_index ? 1 : 0) << '\n';
        }
    }
}

void write_gain_table_csv(const std::filesystem::path& path, const std::vector<std::string>& labels,
                          const std::vector<GainTable>& tangent, const std::vector<GainTable>& wide) {
    std::ofstream f(path);
    if (!f) throw Error("cannot write " + path.string());
    f << "controller,window";
    for (const char* n : GainTable::kNames) f << ',' << n;
    f << '\n';
    auto row = [&](const std::string& label, const char* window, const GainTable& g) {
        f << label << ',' << window;
        for (double v : g.as_array()) f << ',' << fmt(v);
        f << '\n';
    };
    for (std::size_t i = 0; i < labels.size(); ++i) {
        row(labels[i], "tangent", tangent.at(i));
        if (i < wide.size()) row(labels[i], "wide", wide[i]);
    }
}

// ---------------------------------------------------------------------------

std::vector<LatencyRow> latency_sweep(Controller& controller, const StepSequence& sequence,
                                      const env::EpisodeConfig& cfg, const dynamics::UavParams& nominal,
                                      const std::vector<double>& latencies,
                                      const std::vector<std::uint64_t>& seeds) {
    std::vector<LatencyRow> rows;
    for (double latency : latencies) {
        if (latency < 0.0) throw ConfigError("latency must be >= 0");
        for (std::uint64_t seed : seeds) {
            const EvalResult r = run_step_eval(controller, sequence, cfg, nominal, seed, latency);
            LatencyRow row;
            row.latency = latency;
            row.seed = seed;
            row.sm_pitch = r.sm_pitch;
            row.sm_elevator = 0.5 * (r.sm_right + r.sm_left);
            row.pitch_sse = r.pitch.steady_state_error;
            row.diverged = r.diverged;
            rows.push_back(row);
        }
    }
    return rows;
}

void write_latency_csv(const std::filesystem::path& path, const std::vector<LatencyRow>& rows) {
    std::ofstream f(path);
    if (!f) throw Error("cannot write " + path.string());
    f << "latency_s,seed,sm_pitch,sm_elevator,pitch_sse_deg,diverged\n";
    for (const auto& r : rows) {
        f << fmt(r.latency) << ',' << r.seed << ',' << fmt(r.sm_pitch) << ',' << fmt(r.sm_elevator) << ','
          << fmt(rad2deg(r.pitch_sse)) << ',' << (r.diverged ? 1 : 0) << '\n';
    }
}

namespace {

std::vector<double> ranks(std::span<const double> x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw Error("spearman: need two equal-length samples");
    const auto rx = ranks(x);
    const auto ry = ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------

namespace {

struct SteadyStats {
    double phi_mean, theta_mean, phi_std, theta_std;
};

SteadyStats steady_error(const EvalResult& r, double window, double phi_ref, double theta_ref) {
    const std::size_t n = r.trace.size();
    const auto count = std::min<std::size_t>(n, static_cast<std::size_t>(std::lround(window * r.sample_rate)));
    if (count < 2) throw NonSteadyError("offset_compensate: trace shorter than the averaging window");
    double sp = 0, st = 0, sp2 = 0, st2 = 0;
    for (std::size_t i = n - count; i < n; ++i) {
        const double ep = wrap_angle(phi_ref - r.trace[i].state.attitude.x());
        const double et = theta_ref - r.trace[i].state.attitude.y();
        sp += ep;
        st += et;
        sp2 += ep * ep;
        st2 += et * et;
    }
    const double c = static_cast<double>(count);
    SteadyStats s;
    s.phi_mean = sp / c;
    s.theta_mean = st / c;
    s.phi_std = std::sqrt(std::max(0.0, sp2 / c - s.phi_mean * s.phi_mean));
    s.theta_std = std::sqrt(std::max(0.0, st2 / c - s.theta_mean * s.theta_mean));
    return s;
}

}  // namespace

OffsetCompensation offset_compensate(Controller& controller, const StepSequence& sequence,
                                     const env::EpisodeConfig& cfg, const dynamics::UavParams& nominal,
                                     std::uint64_t seed, double window, double max_std) {
    const StepCommand target = sequence.commands.back();
    const EvalResult before = run_step_eval(controller, sequence, cfg, nominal, seed);
    if (before.diverged) throw NonSteadyError("offset_compensate: closed loop diverged");
    const SteadyStats s = steady_error(before, window, target.phi_ref, target.theta_ref);
    if (s.phi_std > max_std || s.theta_std > max_std) {
        throw NonSteadyError("offset_compensate: error not steady in the averaging window (std " +
                             format_double(rad2deg(std::max(s.phi_std, s.theta_std))) + " deg)");
    }
    OffsetCompensation out;
    out.phi_adjust = s.phi_mean;
    out.theta_adjust = s.theta_mean;
    out.phi_error_before = s.phi_mean;
    out.theta_error_before = s.theta_mean;

    StepSequence adjusted = sequence;
    for (auto& c : adjusted.commands) {
        c.phi_ref += out.phi_adjust;
        c.theta_ref += out.theta_adjust;
    }
    out.rerun = run_step_eval(controller, adjusted, cfg, nominal, seed);
    if (out.rerun.diverged) throw NonSteadyError("offset_compensate: compensated run diverged");
    const SteadyStats after = steady_error(out.rerun, window, target.phi_ref, target.theta_ref);
    out.phi_error_after = after.phi_mean;
    out.theta_error_after = after.theta_mean;
    return out;
}

}  // namespace fwrl::analysis
