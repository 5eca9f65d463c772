#pragma once

/**
 * @file pid.hpp
 * @brief ArduPlane-style cascaded attitude controller (baseline).
 *
 * Outer loop: p_r = k_phi (phi_r - phi), q_r = k_theta (theta_r - theta) + q_ct.
 * Inner loop, with nu = V* / V_a:
 *   delta_a =  k_pp nu^2 (p_r - p) + int k_ip nu^2 (p_r - p) + k_ffp nu p_r
 *   delta_e = -k_pq nu^2 (q_r - q) - int k_iq nu^2 (q_r - q) - k_ffq nu q_r
 * followed by the elevon map and +-30 deg saturation.
 */

#include "fwrl/common.hpp"
#include "fwrl/dynamics.hpp"
#include "fwrl/keyvalue.hpp"

#include <array>
#include <filesystem>

namespace fwrl::pid {

struct PidGains {
    double k_phi = 0, k_theta = 0;               ///< 1/s
    double kp_p = 0, ki_p = 0, kff_p = 0;        ///< roll-rate loop
    double kp_q = 0, ki_q = 0, kff_q = 0;        ///< pitch-rate loop
    double v_ref = 18.0;                         ///< m/s
    double gravity = 9.81;                       ///< m/s^2

    void validate() const;

    static constexpr const char* kSchema = "fwrl.pid_gains/1";
    KeyValueFile to_keyvalue() const;
    static PidGains from_keyvalue(const KeyValueFile& kv);
    static PidGains load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
    bool operator==(const PidGains&) const = default;
};

enum class TurnCompensation {
    kAsWritten,    ///< sin(phi) cos(theta) g / V_a tan(phi)
    kLevelFlight,  ///< sin(phi) g / V_a tan(phi), cos(theta) ~ 1
};

double coordinated_turn_offset(double phi, double theta, double airspeed, double gravity,
                               TurnCompensation variant = TurnCompensation::kAsWritten);

struct PidState {
    double int_p = 0.0;  ///< accumulated aileron integral term, rad
    double int_q = 0.0;  ///< accumulated elevator integral term (before the sign), rad
    double clamp = deg2rad(30.0);
    bool clamp_enabled = true;

    void reset() { int_p = int_q = 0.0; }
};

struct PidInput {
    double phi_ref = 0, theta_ref = 0;
    double phi = 0, theta = 0;
    double p = 0, q = 0;
    double airspeed = 0;
};

struct PidOutput {
    double aileron = 0;
    double elevator = 0;
    dynamics::Elevons unsaturated;
    dynamics::Elevons elevons;  ///< saturated at +-30 deg
    double p_ref = 0, q_ref = 0, q_ct = 0;
};

class DegenerateAirspeedError : public Error {
public:
    using Error::Error;
};

inline constexpr double kMaxDeflection = deg2rad(30.0);

/**
 * One controller update. Outputs use the integrator values held at entry;
 * the integrators are then advanced by dt and clamped.
 */
PidOutput pid_step(const PidInput& in, const PidGains& gains, double dt, PidState& state,
                   TurnCompensation variant = TurnCompensation::kAsWritten);

/// Level-flight partial derivatives of the virtual surfaces (autopilot error
/// convention e = reference - state, I = integral of e).
struct Sensitivities {
    double aileron_e_phi = 0;
    double elevator_e_theta = 0;
    double aileron_p = 0;
    double elevator_q = 0;
    double aileron_i_phi = 0;
    double elevator_i_theta = 0;

    std::array<double, 6> as_array() const;
};

/// The published level-flight sensitivities of the ArduPlane controller on the X8 at 18 m/s.
Sensitivities reference_sensitivities();

/// Closed-form level-flight partials of the control law at airspeed V_a.
Sensitivities analytic_sensitivities(const PidGains& gains, double airspeed);

class CalibrationError : public Error {
public:
    using Error::Error;
};

struct CalibrationResult {
    PidGains gains;
    std::array<double, 6> residual{};  ///< achieved - target, in Sensitivities order
};

/**
 * Canonical gain split: k_phi = k_theta = `outer_gain`, proportional gains
 * from the rate partials, integral gains from the integrator partials and
 * feed-forward gains carrying the remainder of the error partials. Negative
 * derived gains are a sign conflict.
 */
CalibrationResult calibrate_gains(const Sensitivities& targets, double v_ref = 18.0,
                                  double outer_gain = 3.0);

}  // namespace fwrl::pid
