#include "fwrl/env.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace fwrl::env {

using dynamics::ActuatorCommand;
using dynamics::SimState;
using dynamics::UavParams;

const char* channel_name(int channel) {
    static constexpr const char* kNames[kChannels] = {
        "p", "q", "r", "alpha", "beta", "airspeed", "prev_right",
        "prev_left", "int_phi", "int_theta", "phi", "theta", "err_phi", "err_theta"};
    if (channel < 0 || channel >= kChannels) return "?";
    return kNames[channel];
}

// ---------------------------------------------------------------------------
// Normalizer

Normalizer::Normalizer(int channels) : mean_(channels, 0.0), m2_(channels, 0.0) {}

Normalizer Normalizer::fixed(std::vector<double> mean, std::vector<double> variance) {
    Normalizer n(static_cast<int>(mean.size()));
    n.set_stats(std::move(mean), std::move(variance), 2.0);
    n.frozen_ = true;
    return n;
}

void Normalizer::update(std::span<const double> sample) {
    if (frozen_) return;
    if (static_cast<int>(sample.size()) != channels()) {
        throw Error("Normalizer::update: channel count mismatch");
    }
    count_ += 1.0;
    for (std::size_t i = 0; i < mean_.size(); ++i) {
        const double delta = sample[i] - mean_[i];
        mean_[i] += delta / count_;
        m2_[i] += delta * (sample[i] - mean_[i]);
    }
}

void Normalizer::merge(const Normalizer& other) {
    if (other.channels() != channels()) throw Error("Normalizer::merge: channel count mismatch");
    if (other.count_ == 0.0) return;
    if (count_ == 0.0) {
        mean_ = other.mean_;
        m2_ = other.m2_;
        count_ = other.count_;
        return;
    }
    const double n = count_ + other.count_;
    for (std::size_t i = 0; i < mean_.size(); ++i) {
        const double delta = other.mean_[i] - mean_[i];
        mean_[i] += delta * other.count_ / n;
        m2_[i] += other.m2_[i] + delta * delta * count_ * other.count_ / n;
    }
    count_ = n;
}

double Normalizer::mean(int c) const { return count_ > 0.0 ? mean_[c] : 0.0; }

double Normalizer::variance(int c) const {
    if (count_ < 2.0) return 1.0;
    return std::max(m2_[c] / count_, kVarianceFloor);
}

void Normalizer::normalize(std::span<const double> in, std::span<double> out) const {
    const auto n = static_cast<std::size_t>(channels());
    if (in.size() % n != 0 || out.size() != in.size()) {
        throw Error("Normalizer::normalize: size mismatch");
    }
    std::vector<double> mu(n), inv(n);
    for (std::size_t c = 0; c < n; ++c) {
        mu[c] = mean(static_cast<int>(c));
        inv[c] = 1.0 / std::sqrt(variance(static_cast<int>(c)));
    }
    for (std::size_t i = 0; i < in.size(); ++i) {
        const std::size_t c = i % n;
        out[i] = (in[i] - mu[c]) * inv[c];
    }
}

std::vector<double> Normalizer::means() const {
    std::vector<double> out(mean_.size());
    for (int c = 0; c < channels(); ++c) out[c] = mean(c);
    return out;
}

std::vector<double> Normalizer::variances() const {
    std::vector<double> out(mean_.size());
    for (int c = 0; c < channels(); ++c) out[c] = variance(c);
    return out;
}

void Normalizer::set_stats(std::vector<double> mean, std::vector<double> variance, double count) {
    if (mean.size() != variance.size()) throw Error("Normalizer::set_stats: size mismatch");
    mean_ = std::move(mean);
    m2_.resize(mean_.size());
    count_ = count;
    for (std::size_t i = 0; i < m2_.size(); ++i) m2_[i] = variance[i] * count;
}

// ---------------------------------------------------------------------------

void ObservationWindow::fill(const Measurement& m) {
    for (int k = 0; k < history_; ++k) std::copy(m.begin(), m.end(), values_.begin() + k * kChannels);
}

void ObservationWindow::push(const Measurement& m) {
    std::copy_backward(values_.begin(), values_.end() - kChannels, values_.end());
    std::copy(m.begin(), m.end(), values_.begin());
}

double RewardConfig::operator()(double e_phi, double e_theta, double phi_rate,
                                double theta_rate) const {
    const double b1 = std::abs(e_phi) <= bound_phi ? 1.0 : 0.0;
    const double b2 = std::abs(e_theta) <= bound_theta ? 1.0 : 0.0;
    const double b3 = std::abs(phi_rate) <= bound_phi_rate ? 1.0 : 0.0;
    const double b4 = std::abs(theta_rate) <= bound_theta_rate ? 1.0 : 0.0;
    return weight_phi * b1 + weight_theta * b2 + weight_phi_rate * b3 + weight_theta_rate * b4;
}

double RewardConfig::max() const {
    return weight_phi + weight_theta + weight_phi_rate + weight_theta_rate;
}

std::vector<double> RewardConfig::achievable_values() const {
    std::vector<double> out;
    for (int mask = 0; mask < 16; ++mask) {
        const double v = weight_phi * ((mask >> 0) & 1) + weight_theta * ((mask >> 1) & 1) +
                         weight_phi_rate * ((mask >> 2) & 1) + weight_theta_rate * ((mask >> 3) & 1);
        out.push_back(v);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// EpisodeConfig

namespace {

std::string join(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ", ";
        out += format_double(v[i]);
    }
    return out;
}

std::vector<double> split_doubles(const std::string& s, const std::string& key) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(tok, &used));
        } catch (const std::exception&) {
            throw ConfigError("bad number list for '" + key + "': " + s);
        }
    }
    return out;
}

template <typename Cfg, typename F>
void for_each_field(Cfg& c, F&& f) {
    f("length", c.length);
    f("resample_interval", c.resample_interval);
    f("base_period", c.base_period);
    f("history", c.history);
    f("integrator_decay", c.integrator_decay);
    f("action_scale_deg", c.action_scale);
    f("trim_airspeed", c.trim_airspeed);
    f("airspeed_setpoint", c.airspeed_setpoint);
    f("throttle_kp", c.throttle_kp);
    f("throttle_ki", c.throttle_ki);
    f("initial_altitude", c.initial_altitude);
    f("altitude_floor", c.altitude_floor);
    f("discount", c.discount);
    auto& r = c.ranges;
    f("init.phi_deg.lo", r.phi.lo);
    f("init.phi_deg.hi", r.phi.hi);
    f("init.theta_deg.lo", r.theta.lo);
    f("init.theta_deg.hi", r.theta.hi);
    f("init.airspeed.lo", r.airspeed.lo);
    f("init.airspeed.hi", r.airspeed.hi);
    f("init.rate_dps.lo", r.rate.lo);
    f("init.rate_dps.hi", r.rate.hi);
    f("init.alpha_deg.lo", r.alpha.lo);
    f("init.alpha_deg.hi", r.alpha.hi);
    f("init.beta_deg.lo", r.beta.lo);
    f("init.beta_deg.hi", r.beta.hi);
    f("init.elevon_deg.lo", r.elevon.lo);
    f("init.elevon_deg.hi", r.elevon.hi);
    f("ref.phi_deg.lo", r.phi_ref.lo);
    f("ref.phi_deg.hi", r.phi_ref.hi);
    f("ref.theta_deg.lo", r.theta_ref.lo);
    f("ref.theta_deg.hi", r.theta_ref.hi);
    auto& z = c.randomization;
    f("randomize.enabled", z.enabled);
    f("randomize.static_rel", z.static_rel);
    f("randomize.rate_rel", z.rate_rel);
    f("randomize.mass_rel", z.mass_rel);
    f("randomize.min_factor", z.min_factor);
    auto& d = c.disturbances;
    f("noise.enabled", d.noise);
    f("noise.theta", d.noise_theta);
    f("turbulence.enabled", d.turbulence);
    f("turbulence.length_u", d.dryden.length_u);
    f("turbulence.length_v", d.dryden.length_v);
    f("turbulence.length_w", d.dryden.length_w);
    f("turbulence.sigma_u", d.dryden.sigma_u);
    f("turbulence.sigma_v", d.dryden.sigma_v);
    f("turbulence.sigma_w", d.dryden.sigma_w);
    f("turbulence.reference_wind", d.turbulence_reference_wind);
    f("wind.enabled", d.wind);
    f("wind.max", d.wind_max);
    f("wind.vertical_scale", d.wind_vertical_scale);
    f("jitter.enabled", d.jitter);
    f("jitter.rate_lo", d.jitter_rate_lo);
    f("jitter.rate_hi", d.jitter_rate_hi);
    f("actuation_delay", d.actuation_delay);
    f("max_elevon_rate_dps", c.max_elevon_rate);
    auto& w = c.reward;
    f("reward.bound_phi_deg", w.bound_phi);
    f("reward.bound_theta_deg", w.bound_theta);
    f("reward.bound_phi_rate_dps", w.bound_phi_rate);
    f("reward.bound_theta_rate_dps", w.bound_theta_rate);
    f("reward.weight_phi", w.weight_phi);
    f("reward.weight_theta", w.weight_theta);
    f("reward.weight_phi_rate", w.weight_phi_rate);
    f("reward.weight_theta_rate", w.weight_theta_rate);
}

bool is_degree_key(std::string_view key) {
    return key.find("_deg") != std::string_view::npos || key.find("_dps") != std::string_view::npos;
}

}  // namespace

void EpisodeConfig::validate() const {
    if (length <= 0) throw ConfigError("env.length must be positive");
    if (resample_interval < 0) throw ConfigError("env.resample_interval must be >= 0");
    if (resample_interval > 0 && length % resample_interval != 0) {
        throw ConfigError("env.length must be a multiple of env.resample_interval");
    }
    if (!(base_period > 0.0 && base_period <= 0.05)) throw ConfigError("env.base_period must be in (0, 0.05]");
    if (history <= 0) throw ConfigError("env.history must be positive");
    if (!(integrator_decay >= 0.0 && integrator_decay <= 1.0)) {
        throw ConfigError("env.integrator_decay must be in [0, 1]");
    }
    if (!(action_scale > 0.0)) throw ConfigError("env.action_scale_deg must be positive");
    if (disturbances.actuation_delay < 0.0) throw ConfigError("env.actuation_delay must be >= 0");
    if (disturbances.noise_sigma.size() != kChannels) {
        throw ConfigError("env.noise.sigma must have 14 entries");
    }
    if (!(disturbances.jitter_rate_lo > 0.0 && disturbances.jitter_rate_hi >= disturbances.jitter_rate_lo)) {
        throw ConfigError("env.jitter rates must satisfy 0 < lo <= hi");
    }
    if (!(randomization.min_factor > 0.0 && randomization.min_factor < 1.0)) {
        throw ConfigError("env.randomize.min_factor must be in (0, 1)");
    }
}

void EpisodeConfig::write_keys(KeyValueFile& kv, std::string_view prefix) const {
    const std::string p(prefix);
    for_each_field(*this, [&](std::string_view key, const auto& value) {
        using T = std::decay_t<decltype(value)>;
        const std::string k = p + std::string(key);
        if constexpr (std::is_same_v<T, bool>) {
            kv.set(k, value);
        } else if constexpr (std::is_same_v<T, int>) {
            kv.set(k, value);
        } else {
            kv.set(k, is_degree_key(key) ? rad2deg(value) : value);
        }
    });
    kv.set(p + "noise.sigma", join(disturbances.noise_sigma));
}

EpisodeConfig EpisodeConfig::from_keyvalue(const KeyValueFile& kv, std::string_view prefix) {
    EpisodeConfig c;
    const std::string p(prefix);
    for_each_field(c, [&](std::string_view key, auto& value) {
        using T = std::decay_t<decltype(value)>;
        const std::string k = p + std::string(key);
        if (!kv.has(k)) return;
        if constexpr (std::is_same_v<T, bool>) {
            value = kv.get_bool(k);
        } else if constexpr (std::is_same_v<T, int>) {
            value = static_cast<int>(kv.get_int(k));
        } else {
            const double v = kv.get_double(k);
            value = is_degree_key(key) ? deg2rad(v) : v;
        }
    });
    if (kv.has(p + "noise.sigma")) {
        c.disturbances.noise_sigma = split_doubles(kv.get_string(p + "noise.sigma"), p + "noise.sigma");
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------

UavParams randomize_params(const UavParams& nominal, const RandomizationConfig& cfg, Rng& rng) {
    UavParams p = nominal;
    if (!cfg.enabled) return p;
    const double lo = cfg.min_factor;
    const double hi = 2.0 - cfg.min_factor;
    auto scale = [&](double& v, double rel) {
        const double f = std::clamp(1.0 + rng.uniform(-rel, rel), lo, hi);
        v *= f;
    };
    auto& a = p.aero;
    for (double* v : {&a.CL0, &a.CL_alpha, &a.CL_de, &a.CD0, &a.CD_alpha, &a.CD_de, &a.CY0, &a.CY_beta,
                      &a.CY_da, &a.Cl0, &a.Cl_beta, &a.Cl_da, &a.Cm0, &a.Cm_alpha, &a.Cm_de, &a.Cn0,
                      &a.Cn_beta, &a.Cn_da, &p.thrust_lin, &p.thrust_quad, &p.k_torque}) {
        scale(*v, cfg.static_rel);
    }
    for (double* v : {&a.CL_q, &a.CY_p, &a.CY_r, &a.Cl_p, &a.Cl_r, &a.Cm_q, &a.Cn_p, &a.Cn_r}) {
        scale(*v, cfg.rate_rel);
    }
    scale(p.mass, cfg.mass_rel);
    scale(p.inertia(0, 0), cfg.mass_rel);
    scale(p.inertia(1, 1), cfg.mass_rel);
    scale(p.inertia(2, 2), cfg.mass_rel);
    scale(p.inertia(0, 2), cfg.mass_rel);
    p.inertia(2, 0) = p.inertia(0, 2);
    p.validate();
    return p;
}

Reference sample_reference(Rng& rng, const InitialRanges& r) {
    Reference ref;
    ref.phi = rng.uniform(r.phi_ref.lo, r.phi_ref.hi);
    ref.theta = rng.uniform(r.theta_ref.lo, r.theta_ref.hi);
    return ref;
}

// ---------------------------------------------------------------------------
// AttitudeEnv

AttitudeEnv::AttitudeEnv(EpisodeConfig cfg, UavParams nominal, std::uint64_t seed)
    : cfg_(std::move(cfg)),
      nominal_(std::move(nominal)),
      rng_(seed),
      params_(nominal_),
      noise_(disturbances::default_measurement_sigma(), 1.0, Rng(0)),
      turbulence_(disturbances::DrydenParams{}, Rng(0)),
      raw_window_(cfg_.history),
      window_(cfg_.history) {
    cfg_.validate();
    nominal_.validate();
    trim_ = dynamics::trim(nominal_, cfg_.trim_airspeed);
}

double AttitudeEnv::normalized_return() const {
    return reward_sum_ / (cfg_.reward.max() * cfg_.length);
}

const ObservationWindow& AttitudeEnv::reset() {
    params_ = randomize_params(nominal_, cfg_.randomization, rng_);

    const auto& r = cfg_.ranges;
    InitialConditions ic;
    ic.phi = rng_.uniform(r.phi.lo, r.phi.hi);
    ic.theta = rng_.uniform(r.theta.lo, r.theta.hi);
    ic.airspeed = rng_.uniform(r.airspeed.lo, r.airspeed.hi);
    ic.alpha = rng_.uniform(r.alpha.lo, r.alpha.hi);
    ic.beta = rng_.uniform(r.beta.lo, r.beta.hi);
    for (int i = 0; i < 3; ++i) ic.rates(i) = rng_.uniform(r.rate.lo, r.rate.hi);
    ic.elevon_right = rng_.uniform(r.elevon.lo, r.elevon.hi);
    ic.elevon_left = rng_.uniform(r.elevon.lo, r.elevon.hi);
    const Reference ref = sample_reference(rng_, r);
    ic.phi_ref = ref.phi;
    ic.theta_ref = ref.theta;
    const auto& d = cfg_.disturbances;
    ic.wind = d.wind ? disturbances::sample_episode_wind(rng_, d.wind_max, d.wind_vertical_scale) : Vec3::Zero();

    SimState s;
    s.position = Vec3(0.0, 0.0, -cfg_.initial_altitude);
    s.attitude = Vec3(ic.phi, ic.theta, 0.0);
    s.rates = ic.rates;
    const Vec3 rel(ic.airspeed * std::cos(ic.alpha) * std::cos(ic.beta), ic.airspeed * std::sin(ic.beta),
                   ic.airspeed * std::sin(ic.alpha) * std::cos(ic.beta));
    s.velocity = rel + dynamics::body_to_ned(s.attitude).transpose() * ic.wind;

    initial_ = ic;
    reference_ = ref;
    auto_resample_ = true;
    schedule_ = nullptr;
    start_episode(s, {.right = ic.elevon_right, .left = ic.elevon_left, .throttle = trim_.throttle});
    return window_;
}

const ObservationWindow& AttitudeEnv::reset_at_trim(Reference ref) {
    params_ = randomize_params(nominal_, cfg_.randomization, rng_);
    const auto& d = cfg_.disturbances;
    InitialConditions ic;
    ic.theta = trim_.alpha;
    ic.airspeed = cfg_.trim_airspeed;
    ic.alpha = trim_.alpha;
    ic.elevon_right = ic.elevon_left = trim_.elevon;
    ic.phi_ref = ref.phi;
    ic.theta_ref = ref.theta;
    ic.wind = d.wind ? disturbances::sample_episode_wind(rng_, d.wind_max, d.wind_vertical_scale) : Vec3::Zero();

    SimState s = dynamics::level_state(cfg_.trim_airspeed, trim_.alpha, cfg_.initial_altitude);
    s.velocity += dynamics::body_to_ned(s.attitude).transpose() * ic.wind;

    initial_ = ic;
    reference_ = ref;
    auto_resample_ = false;
    schedule_ = nullptr;
    start_episode(s, trim_.actuators);
    return window_;
}

void AttitudeEnv::start_episode(const SimState& start, const ActuatorCommand& act) {
    const auto& d = cfg_.disturbances;
    dynamics::ActuatorLimits limits;
    limits.delay = d.actuation_delay;
    limits.rate_limit = cfg_.max_elevon_rate;
    actuators_ = dynamics::ActuatorState(limits, act);
    state_ = start;
    state_.time = 0.0;

    const double kappa = disturbances::TimingJitter::sample_rate(rng_, d.jitter_rate_lo, d.jitter_rate_hi);
    initial_.jitter_rate = kappa;
    jitter_ = disturbances::TimingJitter(cfg_.base_period, kappa, d.jitter);

    const double factor = d.wind ? initial_.wind.norm() / d.turbulence_reference_wind : 1.0;
    turbulence_ = disturbances::DrydenTurbulence(d.dryden.scaled(factor), rng_.split());
    wind_ = dynamics::Wind{.steady_ned = initial_.wind, .gust_body = Vec3::Zero()};

    noise_ = disturbances::OuProcess(d.noise_sigma, d.noise_theta, rng_.split());
    if (d.noise) noise_.reset_stationary();

    int_phi_ = ErrorIntegrator{cfg_.integrator_decay, 0.0};
    int_theta_ = ErrorIntegrator{cfg_.integrator_decay, 0.0};
    throttle_integral_ = 0.0;
    prev_offsets_ = {act.right - trim_.elevon, act.left - trim_.elevon};

    step_count_ = 0;
    reward_sum_ = 0.0;
    done_ = false;

    raw_window_ = ObservationWindow(cfg_.history);
    window_ = ObservationWindow(cfg_.history);
    observe(0.0);
    raw_window_.fill(measurement_);
    normalizer_.normalize(raw_window_.values(), window_.values());
}

double AttitudeEnv::throttle_command(double airspeed, double dt) {
    const double err = cfg_.airspeed_setpoint - airspeed;
    const double base = trim_.throttle + cfg_.throttle_kp * err;
    const double trial = base + cfg_.throttle_ki * (throttle_integral_ + err * dt);
    if (trial > 0.0 && trial < 1.0) throttle_integral_ += err * dt;
    return std::clamp(base + cfg_.throttle_ki * throttle_integral_, 0.0, 1.0);
}

void AttitudeEnv::observe(double dt) {
    if (dt > 0.0 && cfg_.disturbances.noise) noise_.step(dt);
    const auto& n = noise_.value();
    const bool noisy = cfg_.disturbances.noise;
    auto nz = [&](int c) { return noisy ? n[c] : 0.0; };

    const auto ad = dynamics::air_data(state_, wind_);
    Measurement m{};
    m[kP] = state_.rates.x() + nz(kP);
    m[kQ] = state_.rates.y() + nz(kQ);
    m[kR] = state_.rates.z() + nz(kR);
    m[kAlpha] = ad.alpha + nz(kAlpha);
    m[kBeta] = ad.beta + nz(kBeta);
    m[kAirspeed] = ad.airspeed + nz(kAirspeed);
    m[kPrevRight] = prev_offsets_[0];
    m[kPrevLeft] = prev_offsets_[1];
    m[kPhi] = wrap_angle(state_.attitude.x() + nz(kPhi));
    m[kTheta] = state_.attitude.y() + nz(kTheta);
    m[kErrPhi] = wrap_angle(m[kPhi] - reference_.phi);
    m[kErrTheta] = m[kTheta] - reference_.theta;
    m[kIntPhi] = int_phi_.update(m[kErrPhi]);
    m[kIntTheta] = int_theta_.update(m[kErrTheta]);
    measurement_ = m;

    normalizer_.update(m);
    raw_window_.push(m);
    normalizer_.normalize(raw_window_.values(), window_.values());
}

StepResult AttitudeEnv::step(const Action& action) {
    if (done_) throw StepAfterDoneError("AttitudeEnv::step called after the episode ended; call reset()");

    Action a;
    for (int i = 0; i < 2; ++i) {
        if (!std::isfinite(action[i])) throw Error("AttitudeEnv::step: non-finite action");
        a[i] = std::clamp(action[i], -1.0, 1.0);
    }
    prev_offsets_ = {a[0] * cfg_.action_scale, a[1] * cfg_.action_scale};

    const double dt = jitter_.next(rng_);
    const double airspeed = dynamics::air_data(state_, wind_).airspeed;
    ActuatorCommand cmd;
    cmd.right = trim_.elevon + prev_offsets_[0];
    cmd.left = trim_.elevon + prev_offsets_[1];
    cmd.throttle = throttle_command(airspeed, dt);
    actuators_.command(state_.time, cmd);

    if (cfg_.disturbances.turbulence) wind_.gust_body = turbulence_.step(airspeed, dt);

    StepResult out;
    bool failed = false;
    try {
        // rare long jittered periods are split to respect the integrator bound
        const int substeps = static_cast<int>(std::ceil(dt / 0.05));
        SimState next = state_;
        for (int k = 0; k < substeps && !failed; ++k) {
            next = dynamics::step(next, params_, actuators_, wind_, dt / substeps);
            if (!next.finite()) failed = true;
        }
        if (!failed) state_ = next;
    } catch (const dynamics::EulerSingularityError&) {
        failed = true;
    } catch (const dynamics::DegenerateAirspeedError&) {
        failed = true;
    }
    if (failed) state_.time += dt;  // the last valid state is kept
    ++step_count_;

    const Vec3 rates = dynamics::euler_rates(state_.attitude, state_.rates);
    const double e_phi = wrap_angle(state_.attitude.x() - reference_.phi);
    const double e_theta = state_.attitude.y() - reference_.theta;
    double reward = failed ? 0.0 : cfg_.reward(e_phi, e_theta, rates.x(), rates.y());

    const double altitude = -state_.position.z();
    const bool terminal = failed || std::abs(state_.attitude.y()) >= dynamics::kMaxPitch ||
                          altitude < cfg_.altitude_floor;
    const bool truncated = step_count_ >= cfg_.length;
    done_ = terminal || truncated;
    reward_sum_ += reward;

    out.record.step = step_count_;
    out.record.time = state_.time;
    out.record.dt = dt;
    out.record.state = state_;
    out.record.action = a;
    out.record.applied = actuators_.applied();
    out.record.reward = reward;
    out.record.phi_ref = reference_.phi;
    out.record.theta_ref = reference_.theta;
    out.record.euler_rate = rates;
    out.record.terminal = terminal;
    out.record.failed = failed;

    if (!done_ && auto_resample_ && cfg_.resample_interval > 0 && step_count_ % cfg_.resample_interval == 0) {
        reference_ = sample_reference(rng_, cfg_.ranges);
    }
    if (schedule_) reference_ = schedule_(state_.time);

    observe(dt);
    out.record.measurement = measurement_;
    out.reward = reward;
    out.done = done_;
    out.terminal = terminal;
    return out;
}

// ---------------------------------------------------------------------------

void write_trace_csv(const std::filesystem::path& path, const std::vector<StepRecord>& records) {
    std::ofstream f(path);
    if (!f) throw Error("cannot write trace: " + path.string());
    f << "step,time,dt,north,east,down,phi,theta,psi,u,v,w,p,q,r";
    for (int c = 0; c < kChannels; ++c) f << ",m_" << channel_name(c);
    f << ",action_right,action_left,elevon_right,elevon_left,throttle,reward,phi_ref,theta_ref,"
         "phi_dot,theta_dot,terminal\n";
    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, ",%.17g", v);
        f << buf;
    };
    for (const auto& r : records) {
        f << r.step;
        put(r.time);
        put(r.dt);
        for (const Vec3* v : {&r.state.position, &r.state.attitude, &r.state.velocity, &r.state.rates}) {
            for (int i = 0; i < 3; ++i) put((*v)(i));
        }
        for (double m : r.measurement) put(m);
        put(r.action[0]);
        put(r.action[1]);
        put(r.applied.right);
        put(r.applied.left);
        put(r.applied.throttle);
        put(r.reward);
        put(r.phi_ref);
        put(r.theta_ref);
        put(r.euler_rate.x());
        put(r.euler_rate.y());
        f << ',' << (r.terminal ? 1 : 0) << '\n';
    }
}

}  // namespace fwrl::env
