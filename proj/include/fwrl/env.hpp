#pragma once

/**
 * @file env.hpp
 * @brief Episodic attitude-tracking MDP around the flying-wing model.
 *
 * One step: the 2-D action in [-1, 1] is scaled to elevon offsets, added to
 * the trim deflection and queued in the delayed actuator model; throttle is
 * set by an airspeed PI loop; the plant advances by a jittered period; the
 * sparse reward is computed from the true state; finally a noisy
 * 14-channel measurement is built, pushed into the history window and
 * normalized with running statistics.
 */

#include "fwrl/common.hpp"
#include "fwrl/disturbances.hpp"
#include "fwrl/dynamics.hpp"
#include "fwrl/keyvalue.hpp"

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fwrl::env {

inline constexpr int kChannels = 14;

/// Measurement channel order.
enum Channel : int {
    kP = 0,
    kQ,
    kR,
    kAlpha,
    kBeta,
    kAirspeed,
    kPrevRight,
    kPrevLeft,
    kIntPhi,
    kIntTheta,
    kPhi,
    kTheta,
    kErrPhi,
    kErrTheta,
};

const char* channel_name(int channel);

using Measurement = std::array<double, kChannels>;
using Action = std::array<double, 2>;  ///< (right, left) elevon offsets, normalized

/**
 * @brief Streaming per-channel mean/variance (Welford), mergeable.
 *
 * Before any sample arrives the statistics are (0, 1). Variance has a floor
 * of 1e-6. When frozen, update() is a no-op.
 */
class Normalizer {
public:
    explicit Normalizer(int channels = kChannels);

    static Normalizer fixed(std::vector<double> mean, std::vector<double> variance);

    void update(std::span<const double> sample);
    void merge(const Normalizer& other);

    /// Normalizes `in` (any multiple of the channel count) into `out`.
    void normalize(std::span<const double> in, std::span<double> out) const;

    double mean(int c) const;
    double variance(int c) const;
    double count() const { return count_; }
    int channels() const { return static_cast<int>(mean_.size()); }

    void set_frozen(bool frozen) { frozen_ = frozen; }
    bool frozen() const { return frozen_; }

    std::vector<double> means() const;
    std::vector<double> variances() const;
    void set_stats(std::vector<double> mean, std::vector<double> variance, double count);

    static constexpr double kVarianceFloor = 1e-6;

private:
    std::vector<double> mean_;
    std::vector<double> m2_;
    double count_ = 0.0;
    bool frozen_ = false;
};

/// Decaying error integrator I_t = decay * I_{t-1} + e_t.
struct ErrorIntegrator {
    double decay = 0.99;
    double value = 0.0;
    double update(double error) { return value = decay * value + error; }
};

/// Last `history` measurements, newest first, flattened slot-major.
class ObservationWindow {
public:
    explicit ObservationWindow(int history = 10) : history_(history), values_(history * kChannels, 0.0) {}

    void fill(const Measurement& m);
    void push(const Measurement& m);

    int history() const { return history_; }
    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }
    std::span<const double> slot(int k) const {
        return std::span<const double>(values_).subspan(k * kChannels, kChannels);
    }

private:
    int history_;
    std::vector<double> values_;
};

struct RewardConfig {
    double bound_phi = deg2rad(3.0);
    double bound_theta = deg2rad(3.0);
    double bound_phi_rate = deg2rad(4.3);
    double bound_theta_rate = deg2rad(4.3);
    double weight_phi = 0.5;
    double weight_theta = 0.5;
    double weight_phi_rate = 0.167;
    double weight_theta_rate = 0.167;

    double operator()(double e_phi, double e_theta, double phi_rate, double theta_rate) const;
    double max() const;
    /// Every value the reward can take, ascending.
    std::vector<double> achievable_values() const;
    bool operator==(const RewardConfig&) const = default;
};

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    bool contains(double x) const { return x >= lo && x <= hi; }
    bool operator==(const Interval&) const = default;
};

/// Uniform initial-condition ranges (radians, m/s).
struct InitialRanges {
    Interval phi{deg2rad(-40.0), deg2rad(40.0)};
    Interval theta{deg2rad(-15.0), deg2rad(15.0)};
    Interval airspeed{13.0, 26.0};
    Interval rate{deg2rad(-60.0), deg2rad(60.0)};
    Interval alpha{deg2rad(-8.0), deg2rad(8.0)};
    Interval beta{deg2rad(-10.0), deg2rad(10.0)};
    Interval elevon{deg2rad(-30.0), deg2rad(30.0)};
    Interval phi_ref{deg2rad(-60.0), deg2rad(60.0)};
    Interval theta_ref{deg2rad(-25.0), deg2rad(20.0)};
    bool operator==(const InitialRanges&) const = default;
};

struct RandomizationConfig {
    bool enabled = true;
    double static_rel = 0.2;   ///< static, alpha/beta and control derivatives
    double rate_rel = 0.5;     ///< rate-dependent derivatives
    double mass_rel = 0.1;     ///< mass and inertia
    double min_factor = 0.05;  ///< factors clipped to [min, 2 - min] (sign preserving)
    bool operator==(const RandomizationConfig&) const = default;
};

struct DisturbanceConfig {
    bool noise = true;
    std::vector<double> noise_sigma = disturbances::default_measurement_sigma();
    double noise_theta = 1.0;
    bool turbulence = true;
    disturbances::DrydenParams dryden;
    double turbulence_reference_wind = 7.5;  ///< m/s steady wind giving nominal intensity
    bool wind = true;
    double wind_max = 15.0;
    double wind_vertical_scale = 0.1;
    bool jitter = true;
    double jitter_rate_lo = 250.0;
    double jitter_rate_hi = 1000.0;
    double actuation_delay = 0.1;
    bool operator==(const DisturbanceConfig&) const = default;
};

struct EpisodeConfig {
    int length = 900;
    int resample_interval = 150;
    double base_period = 0.02;
    int history = 10;
    double integrator_decay = 0.99;
    double action_scale = deg2rad(30.0);
    double trim_airspeed = 18.0;
    double airspeed_setpoint = 18.0;
    double throttle_kp = 0.15;
    double throttle_ki = 0.05;
    double initial_altitude = 500.0;
    double altitude_floor = 0.0;
    double discount = 0.99;  ///< trainer-facing
    double max_elevon_rate = deg2rad(200.0);
    InitialRanges ranges;
    RandomizationConfig randomization;
    DisturbanceConfig disturbances;
    RewardConfig reward;

    void validate() const;
    void write_keys(KeyValueFile& kv, std::string_view prefix = "env.") const;
    static EpisodeConfig from_keyvalue(const KeyValueFile& kv, std::string_view prefix = "env.");
    bool operator==(const EpisodeConfig&) const = default;
};

/// Samples one model realization around `nominal`.
dynamics::UavParams randomize_params(const dynamics::UavParams& nominal,
                                     const RandomizationConfig& cfg, Rng& rng);

/// Everything sampled at reset, kept for inspection.
struct InitialConditions {
    double phi = 0, theta = 0, airspeed = 0, alpha = 0, beta = 0;
    Vec3 rates = Vec3::Zero();
    double elevon_right = 0, elevon_left = 0;
    double phi_ref = 0, theta_ref = 0;
    Vec3 wind = Vec3::Zero();
    double jitter_rate = 0;
};

/// One row of an episode trace.
struct StepRecord {
    int step = 0;
    double time = 0;
    double dt = 0;
    dynamics::SimState state;
    Measurement measurement{};  ///< raw, noisy
    Action action{};
    dynamics::ActuatorCommand applied;
    double reward = 0;
    double phi_ref = 0;
    double theta_ref = 0;
    Vec3 euler_rate = Vec3::Zero();  ///< true phi_dot, theta_dot, psi_dot
    bool terminal = false;
    bool failed = false;  ///< the integration itself failed (singularity, degenerate airspeed)
};

struct StepResult {
    double reward = 0;
    bool done = false;
    bool terminal = false;  ///< failure termination (bootstrap masked)
    StepRecord record;
};

class StepAfterDoneError : public Error {
public:
    using Error::Error;
};

struct Reference {
    double phi = 0;
    double theta = 0;
};

/// Uniform reference draw within the configured ranges.
Reference sample_reference(Rng& rng, const InitialRanges& ranges);

class AttitudeEnv {
public:
    AttitudeEnv(EpisodeConfig cfg, dynamics::UavParams nominal, std::uint64_t seed);

    /// Random episode start (model realization, initial state, disturbances).
    const ObservationWindow& reset();
    /// Deterministic start at the nominal trim point with fixed references;
    /// automatic reference resampling is disabled until the next reset().
    const ObservationWindow& reset_at_trim(Reference ref);

    StepResult step(const Action& action);

    /// Override the active references (used by scripted sequences).
    void set_reference(Reference ref) { reference_ = ref; }
    /// Time-indexed references applied after every step, before the new
    /// measurement is formed. Cleared by reset().
    void set_reference_schedule(std::function<Reference(double)> schedule) { schedule_ = std::move(schedule); }
    const Reference& reference() const { return reference_; }

    const ObservationWindow& window() const { return window_; }
    const ObservationWindow& raw_window() const { return raw_window_; }
    const Measurement& measurement() const { return measurement_; }

    Normalizer& normalizer() { return normalizer_; }
    const Normalizer& normalizer() const { return normalizer_; }

    const dynamics::SimState& state() const { return state_; }
    const dynamics::UavParams& params() const { return params_; }
    const dynamics::UavParams& nominal() const { return nominal_; }
    const dynamics::TrimResult& trim() const { return trim_; }
    const dynamics::ActuatorState& actuators() const { return actuators_; }
    const InitialConditions& initial_conditions() const { return initial_; }
    const EpisodeConfig& config() const { return cfg_; }
    EpisodeConfig& mutable_config() { return cfg_; }
    int step_count() const { return step_count_; }
    bool done() const { return done_; }
    Rng& rng() { return rng_; }

    /// Normalized episode return so far: sum of rewards / (max reward * length).
    double normalized_return() const;
    double reward_sum() const { return reward_sum_; }

private:
    void start_episode(const dynamics::SimState& start, const dynamics::ActuatorCommand& actuators);
    void observe(double dt);
    double throttle_command(double airspeed, double dt);

    EpisodeConfig cfg_;
    dynamics::UavParams nominal_;
    dynamics::TrimResult trim_;
    Rng rng_;

    dynamics::UavParams params_;
    dynamics::SimState state_;
    dynamics::ActuatorState actuators_;
    dynamics::Wind wind_;
    disturbances::OuProcess noise_;
    disturbances::DrydenTurbulence turbulence_;
    disturbances::TimingJitter jitter_;
    InitialConditions initial_;

    Reference reference_;
    bool auto_resample_ = true;
    std::function<Reference(double)> schedule_;
    ErrorIntegrator int_phi_;
    ErrorIntegrator int_theta_;
    double throttle_integral_ = 0.0;
    Action prev_offsets_{};

    Measurement measurement_{};
    ObservationWindow raw_window_;
    ObservationWindow window_;
    Normalizer normalizer_;

    int step_count_ = 0;
    bool done_ = true;
    double reward_sum_ = 0.0;
};

/// Writes one CSV row per step: time, full state, measurement, action, reward, reference.
void write_trace_csv(const std::filesystem::path& path, const std::vector<StepRecord>& records);

}  // namespace fwrl::env
