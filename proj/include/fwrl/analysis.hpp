#pragma once

/**
 * @file analysis.hpp
 * @brief Closed-loop step evaluation, smoothness metric, open-loop
 * sensitivity sweeps, tangent gains, latency sweeps and steady-state
 * reference-offset compensation.
 */

#include "fwrl/checkpoint.hpp"
#include "fwrl/dynamics.hpp"
#include "fwrl/env.hpp"
#include "fwrl/pid.hpp"

#include <array>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fwrl::analysis {

// ---------------------------------------------------------------------------
// Controllers

/**
 * Anything that maps the measurement stream to elevon offsets from trim.
 * act() is used in closed loop; respond() evaluates the controller open loop
 * on a window whose history slots all hold the same measurement.
 */
class Controller {
public:
    virtual ~Controller() = default;
    virtual std::string name() const = 0;
    virtual void reset() {}
    /// Normalized action for the current environment observation.
    virtual env::Action act(const env::AttitudeEnv& env) = 0;
    /// Elevon offsets (rad) for a time-constant raw measurement.
    virtual dynamics::Elevons respond(const env::Measurement& m) const = 0;
};

/// Deterministic policy with its frozen training normalizer.
class PolicyController : public Controller {
public:
    explicit PolicyController(PolicyCheckpoint checkpoint, double action_scale = deg2rad(30.0),
                              std::string name = "rl");
    std::string name() const override { return name_; }
    env::Action act(const env::AttitudeEnv& env) override;
    dynamics::Elevons respond(const env::Measurement& m) const override;
    const PolicyCheckpoint& checkpoint() const { return ck_; }

private:
    env::Action evaluate(std::span<const double> raw_window) const;

    PolicyCheckpoint ck_;
    double action_scale_;
    std::string name_;
};

/**
 * ArduPlane baseline. Closed loop it reads the noisy attitude and rates
 * from the measurement and the active references from the environment.
 * Open loop the references are reconstructed as state - e and the I channels
 * are read as integrals of (state - reference) over time, which seeds the
 * inner-loop integrators.
 */
class PidController : public Controller {
public:
    PidController(pid::PidGains gains, double action_scale = deg2rad(30.0),
                  pid::TurnCompensation variant = pid::TurnCompensation::kAsWritten);
    std::string name() const override { return "pid"; }
    void reset() override { state_.reset(); }
    env::Action act(const env::AttitudeEnv& env) override;
    dynamics::Elevons respond(const env::Measurement& m) const override;
    const pid::PidGains& gains() const { return gains_; }
    pid::PidState& state() { return state_; }

private:
    pid::PidGains gains_;
    double action_scale_;
    pid::TurnCompensation variant_;
    pid::PidState state_;
};

/// Adds a constant virtual-surface bias to another controller's output.
class BiasedController : public Controller {
public:
    BiasedController(Controller& inner, double elevator_bias, double aileron_bias, double action_scale = deg2rad(30.0));
    std::string name() const override { return inner_.name() + "+bias"; }
    void reset() override { inner_.reset(); }
    env::Action act(const env::AttitudeEnv& env) override;
    dynamics::Elevons respond(const env::Measurement& m) const override;

private:
    Controller& inner_;
    double elevator_bias_;
    double aileron_bias_;
    double action_scale_;
};

// ---------------------------------------------------------------------------
// Smoothness

/// Sm = 2 / (n f_s) * sum_{i=1}^{n/2} M_i f_i, with M_i = |X_i| the DFT
/// magnitude and f_i = i f_s / n. Throws for n < 2 or f_s <= 0.
double smoothness(std::span<const double> signal, double sample_rate);

/// One-sided DFT magnitudes |X_i|, i = 0..n/2.
std::vector<double> amplitude_spectrum(std::span<const double> signal);

// ---------------------------------------------------------------------------
// Step sequences

struct StepCommand {
    double time = 0;
    double phi_ref = 0;
    double theta_ref = 0;
};

/// Which disturbance sources are active during an evaluation.
struct DisturbanceToggles {
    bool noise = false;
    bool turbulence = false;
    bool wind = false;
    bool jitter = false;
    bool randomization = false;

    void apply(env::EpisodeConfig& cfg) const;
    static DisturbanceToggles all() { return {true, true, true, true, true}; }
};

struct StepSequence {
    std::vector<StepCommand> commands;  ///< times strictly increasing, first at 0
    double duration = 0;
    DisturbanceToggles disturbances;

    void validate() const;
    StepCommand at(double time) const;

    /// CSV with header `time,phi_ref_deg,theta_ref_deg`.
    static StepSequence load_csv(const std::filesystem::path& path, double duration = -1);
    /// Roll steps of +-20 deg followed by pitch steps of +-10 deg.
    static StepSequence default_sequence();
    static StepSequence constant(double phi_ref, double theta_ref, double duration);
};

struct AxisMetrics {
    double rise_time = 0;           ///< s, mean over non-zero steps (NaN if none)
    double overshoot = 0;           ///< fraction of step size, mean over non-zero steps (NaN if none)
    double steady_state_error = 0;  ///< rad, mean |ref - state| over the last quarter of each segment
};

struct EvalResult {
    std::vector<env::StepRecord> trace;
    AxisMetrics roll;
    AxisMetrics pitch;
    double sm_right = 0;   ///< smoothness of the commanded right elevon (normalized action)
    double sm_left = 0;
    double sm_pitch = 0;   ///< smoothness of the pitch response (deg)
    double sm_roll = 0;
    double mean_reward = 0;
    bool diverged = false;
    double sample_rate = 50;
};

/**
 * Closed-loop rollout from the nominal trim point. The environment config is
 * copied, disturbances set from the sequence toggles and, when
 * `delay_override` >= 0, the actuation delay replaced.
 */
EvalResult run_step_eval(Controller& controller, const StepSequence& sequence, env::EpisodeConfig cfg,
                         const dynamics::UavParams& nominal, std::uint64_t seed, double delay_override = -1);

void write_eval_metrics_csv(const std::filesystem::path& path, const std::vector<std::string>& labels,
                            const std::vector<EvalResult>& results);

// ---------------------------------------------------------------------------
// Sensitivity sweeps and tangent gains

/// Half-width of the sweep range of each measurement channel.
std::array<double, env::kChannels> default_channel_ranges();

/// Level flight at `airspeed`: trim alpha and pitch, zeros elsewhere.
env::Measurement level_flight_anchor(const dynamics::UavParams& nominal, double airspeed = 18.0);

struct SensitivityCurve {
    int channel = 0;
    std::vector<double> grid;  ///< channel values
    std::vector<double> aileron;
    std::vector<double> elevator;
    int anchor_index = 0;
};

/// `points` (odd) values spanning anchor +- range, anchor in the middle.
SensitivityCurve sensitivity_sweep(const Controller& controller, int channel, const env::Measurement& anchor,
                                   double half_range, int points = 201);

/// Gains in the autopilot convention: error and integrator entries are the
/// derivative with respect to (reference - state), i.e. the negated slope on
/// the e/I channels; rate entries are plain slopes.
struct GainTable {
    double aileron_e_phi = 0;
    double elevator_e_theta = 0;
    double aileron_i_phi = 0;
    double elevator_i_theta = 0;
    double aileron_p = 0;
    double elevator_q = 0;

    std::array<double, 6> as_array() const;
    static constexpr std::array<const char*, 6> kNames = {
        "d_aileron/d_e_phi", "d_elevator/d_e_theta", "d_aileron/d_I_phi",
        "d_elevator/d_I_theta", "d_aileron/d_p", "d_elevator/d_q"};
};

/// Central difference at anchor +- rel_step * (full channel range).
GainTable tangent_gains(const Controller& controller, const env::Measurement& anchor,
                        const std::array<double, env::kChannels>& half_ranges, double rel_step = 0.01);

/// Least-squares slope over the whole sweep range, same sign convention.
GainTable wide_gains(const Controller& controller, const env::Measurement& anchor,
                     const std::array<double, env::kChannels>& half_ranges, int points = 201);

void write_curves_csv(const std::filesystem::path& path, const std::vector<SensitivityCurve>& curves);
void write_gain_table_csv(const std::filesystem::path& path, const std::vector<std::string>& labels,
                          const std::vector<GainTable>& tangent, const std::vector<GainTable>& wide);

// ---------------------------------------------------------------------------
// Latency sweep

struct LatencyRow {
    double latency = 0;
    std::uint64_t seed = 0;
    double sm_pitch = 0;
    double sm_elevator = 0;  ///< mean of both elevon smoothness values
    double pitch_sse = 0;
    bool diverged = false;
};

std::vector<LatencyRow> latency_sweep(Controller& controller, const StepSequence& sequence,
                                      const env::EpisodeConfig& cfg, const dynamics::UavParams& nominal,
                                      const std::vector<double>& latencies,
                                      const std::vector<std::uint64_t>& seeds);

void write_latency_csv(const std::filesystem::path& path, const std::vector<LatencyRow>& rows);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

/// Pitch step (0 -> 10 deg) used by the latency study.
StepSequence pitch_step_sequence(double duration = 10.0);

// ---------------------------------------------------------------------------
// Reference offset compensation

class NonSteadyError : public Error {
public:
    using Error::Error;
};

struct OffsetCompensation {
    double phi_adjust = 0;    ///< rad added to the roll reference
    double theta_adjust = 0;  ///< rad added to the pitch reference
    double phi_error_before = 0;
    double theta_error_before = 0;
    double phi_error_after = 0;   ///< mean steady (ref - state) after the adjustment
    double theta_error_after = 0;
    EvalResult rerun;
};

/**
 * Runs the constant-reference sequence, averages (reference - state) over the
 * final `window` seconds, adds it to the references and re-runs. Throws
 * NonSteadyError when the error standard deviation in that window exceeds
 * `max_std`.
 */
OffsetCompensation offset_compensate(Controller& controller, const StepSequence& sequence,
                                     const env::EpisodeConfig& cfg, const dynamics::UavParams& nominal,
                                     std::uint64_t seed, double window = 2.0, double max_std = deg2rad(2.0));

}  // namespace fwrl::analysis
