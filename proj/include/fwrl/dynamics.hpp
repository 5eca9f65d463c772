#pragma once

/**
 * @file dynamics.hpp
 * @brief 6-DOF rigid-body model of a flying-wing UAV.
 *
 * Newton-Euler equations in the body frame with Euler-angle kinematics,
 * an aerodynamic model that is linear in its coefficients, a static
 * quadratic propeller map and a delayed, rate-limited elevon actuator.
 * Conventions follow the usual NED / body (x fwd, y right, z down) frames.
 * A positive virtual elevator deflection gives a nose-down moment
 * (C_m_delta_e < 0); a positive virtual aileron gives a positive roll
 * moment (C_l_delta_a > 0).
 */

#include "fwrl/common.hpp"
#include "fwrl/keyvalue.hpp"

#include <deque>

namespace fwrl::dynamics {

/// Rigid-body state. Attitude is (roll, pitch, yaw) in radians.
struct SimState {
    Vec3 position = Vec3::Zero();  ///< NED, m
    Vec3 attitude = Vec3::Zero();  ///< phi, theta, psi, rad
    Vec3 velocity = Vec3::Zero();  ///< body u, v, w (ground-relative), m/s
    Vec3 rates = Vec3::Zero();     ///< body p, q, r, rad/s
    double time = 0.0;             ///< s

    bool finite() const;
};

/// Time derivative of the 12 rigid-body states.
struct SimStateDot {
    Vec3 position = Vec3::Zero();
    Vec3 attitude = Vec3::Zero();
    Vec3 velocity = Vec3::Zero();
    Vec3 rates = Vec3::Zero();
};

/// Dimensionless aerodynamic derivatives of the linear model.
struct AeroDerivatives {
    double CL0 = 0, CL_alpha = 0, CL_q = 0, CL_de = 0;
    double CD0 = 0, CD_alpha = 0, CD_de = 0;
    double CY0 = 0, CY_beta = 0, CY_p = 0, CY_r = 0, CY_da = 0;
    double Cl0 = 0, Cl_beta = 0, Cl_p = 0, Cl_r = 0, Cl_da = 0;
    double Cm0 = 0, Cm_alpha = 0, Cm_q = 0, Cm_de = 0;
    double Cn0 = 0, Cn_beta = 0, Cn_p = 0, Cn_r = 0, Cn_da = 0;
};

/// One realization of the physical model.
struct UavParams {
    double mass = 0;        ///< kg
    Mat3 inertia = Mat3::Identity();  ///< kg m^2, body frame
    double gravity = 9.81;  ///< m/s^2
    double air_density = 1.225;  ///< kg/m^3
    double wing_area = 0;   ///< m^2
    double span = 0;        ///< m
    double chord = 0;       ///< m
    AeroDerivatives aero;
    double thrust_lin = 0;   ///< N per unit throttle
    double thrust_quad = 0;  ///< N per unit throttle^2
    double k_torque = 0;     ///< m, propeller reaction torque per newton of thrust

    /// Documented X8-like nominal set shipped with the project.
    static UavParams nominal();

    /// Throws ConfigError when mass <= 0 or the inertia is not SPD.
    void validate() const;

    static constexpr const char* kSchema = "fwrl.uav_params/1";
    KeyValueFile to_keyvalue() const;
    static UavParams from_keyvalue(const KeyValueFile& kv, std::string_view prefix = "");
    void write_keys(KeyValueFile& kv, std::string_view prefix) const;

    bool operator==(const UavParams&) const;
};

/// Visits every scalar field of UavParams as (key, reference, unit).
template <typename Params, typename F>
void for_each_param(Params& p, F&& f);

struct CoefficientSet {
    double CL = 0, CD = 0, CY = 0, Cl = 0, Cm = 0, Cn = 0;
};

/// Elevon pair; right/left order matches the controller output.
struct Elevons {
    double right = 0;
    double left = 0;
};

/// Virtual elevator/aileron pair.
struct VirtualSurfaces {
    double elevator = 0;
    double aileron = 0;
};

Elevons elevon_map(double elevator, double aileron);
VirtualSurfaces inverse_elevon_map(double left, double right);

struct ActuatorCommand {
    double right = 0;     ///< rad
    double left = 0;      ///< rad
    double throttle = 0;  ///< [0, 1]
};

struct ActuatorLimits {
    double max_deflection = deg2rad(30.0);  ///< rad, symmetric
    double rate_limit = deg2rad(200.0);     ///< rad/s
    double delay = 0.1;                     ///< s, pure transport delay
};

/**
 * @brief Delayed, rate- and position-limited actuators.
 *
 * Commands are queued with their issue time. At the start of a step at time
 * t every command issued at or before t - delay is released; the newest one
 * becomes the target that the applied deflection slews towards.
 */
class ActuatorState {
public:
    struct Timed {
        double time;
        ActuatorCommand command;
    };

    ActuatorState() = default;
    ActuatorState(const ActuatorLimits& limits, const ActuatorCommand& initial);

    /// Queue a command issued at `time`. Position limits are applied here.
    void command(double time, const ActuatorCommand& cmd);
    /// Release due commands and slew the applied state for a step of `dt`.
    void advance(double time, double dt);

    const ActuatorCommand& applied() const { return applied_; }
    const ActuatorCommand& commanded() const { return commanded_; }
    const ActuatorCommand& target() const { return target_; }
    const ActuatorLimits& limits() const { return limits_; }
    const std::deque<Timed>& delay_buffer() const { return buffer_; }
    void set_delay(double delay) { limits_.delay = delay; }

private:
    ActuatorCommand saturate(const ActuatorCommand& c) const;

    ActuatorLimits limits_;
    ActuatorCommand commanded_;
    ActuatorCommand target_;
    ActuatorCommand applied_;
    std::deque<Timed> buffer_;
};

/// Steady wind (NED) plus turbulent gust (body frame).
struct Wind {
    Vec3 steady_ned = Vec3::Zero();
    Vec3 gust_body = Vec3::Zero();
};

struct AirData {
    Vec3 relative_velocity = Vec3::Zero();  ///< body frame, m/s
    double airspeed = 0;
    double alpha = 0;
    double beta = 0;
};

/// Rotation taking body-frame vectors to NED.
Mat3 body_to_ned(const Vec3& attitude);

AirData air_data(const SimState& state, const Wind& wind);

/// Euler angle rates (phi_dot, theta_dot, psi_dot) from body rates.
Vec3 euler_rates(const Vec3& attitude, const Vec3& rates);

class DegenerateAirspeedError : public Error {
public:
    using Error::Error;
};
class EulerSingularityError : public Error {
public:
    using Error::Error;
};

inline constexpr double kMinAirspeed = 0.1;
inline constexpr double kMaxPitch = deg2rad(89.0);

CoefficientSet aero_coefficients(const SimState& state, const UavParams& params,
                                 const ActuatorCommand& applied, const Wind& wind);

double thrust(const UavParams& params, double throttle);

SimStateDot derivatives(const SimState& state, const UavParams& params,
                        const ActuatorCommand& applied, const Wind& wind);

/// One fixed-step RK4 advance. Releases due actuator commands first.
SimState step(const SimState& state, const UavParams& params, ActuatorState& actuators,
              const Wind& wind, double dt);

/// RK4 advance with actuators held at `applied`.
SimState integrate_rk4(const SimState& state, const UavParams& params,
                       const ActuatorCommand& applied, const Wind& wind, double dt);

struct TrimResult {
    double alpha = 0;
    double elevon = 0;    ///< equal deflection of both elevons, rad
    double throttle = 0;
    double residual = 0;  ///< norm of the longitudinal derivative residual
    double lateral_residual = 0;  ///< |p_dot| + |r_dot| + |v_dot| left untrimmed
    SimState state;
    ActuatorCommand actuators;
};

class TrimError : public Error {
public:
    TrimError(const std::string& what, double best_residual)
        : Error(what), best_residual(best_residual) {}
    double best_residual;
};

/// Wings-level, constant-altitude trim at the given airspeed (zero wind).
TrimResult trim(const UavParams& params, double airspeed);

/// Level state flying at `airspeed` with angle of attack `alpha` and zero wind.
SimState level_state(double airspeed, double alpha, double altitude = 0.0);

// ---------------------------------------------------------------------------

template <typename Params, typename F>
void for_each_param(Params& p, F&& f) {
    f("mass", p.mass, "kg");
    f("inertia_xx", p.inertia(0, 0), "kg m^2");
    f("inertia_yy", p.inertia(1, 1), "kg m^2");
    f("inertia_zz", p.inertia(2, 2), "kg m^2");
    f("inertia_xz", p.inertia(0, 2), "kg m^2, product of inertia");
    f("gravity", p.gravity, "m/s^2");
    f("air_density", p.air_density, "kg/m^3");
    f("wing_area", p.wing_area, "m^2");
    f("span", p.span, "m");
    f("chord", p.chord, "m");
    auto& a = p.aero;
    f("CL0", a.CL0, "-");
    f("CL_alpha", a.CL_alpha, "1/rad");
    f("CL_q", a.CL_q, "per nondimensional pitch rate");
    f("CL_de", a.CL_de, "1/rad");
    f("CD0", a.CD0, "-");
    f("CD_alpha", a.CD_alpha, "1/rad, multiplies |alpha|");
    f("CD_de", a.CD_de, "1/rad, multiplies |delta_e|");
    f("CY0", a.CY0, "-");
    f("CY_beta", a.CY_beta, "1/rad");
    f("CY_p", a.CY_p, "per nondimensional roll rate");
    f("CY_r", a.CY_r, "per nondimensional yaw rate");
    f("CY_da", a.CY_da, "1/rad");
    f("Cl0", a.Cl0, "-");
    f("Cl_beta", a.Cl_beta, "1/rad");
    f("Cl_p", a.Cl_p, "per nondimensional roll rate");
    f("Cl_r", a.Cl_r, "per nondimensional yaw rate");
    f("Cl_da", a.Cl_da, "1/rad");
    f("Cm0", a.Cm0, "-");
    f("Cm_alpha", a.Cm_alpha, "1/rad");
    f("Cm_q", a.Cm_q, "per nondimensional pitch rate");
    f("Cm_de", a.Cm_de, "1/rad");
    f("Cn0", a.Cn0, "-");
    f("Cn_beta", a.Cn_beta, "1/rad");
    f("Cn_p", a.Cn_p, "per nondimensional roll rate");
    f("Cn_r", a.Cn_r, "per nondimensional yaw rate");
    f("Cn_da", a.Cn_da, "1/rad");
    f("thrust_lin", p.thrust_lin, "N per unit throttle");
    f("thrust_quad", p.thrust_quad, "N per unit throttle^2");
    f("k_torque", p.k_torque, "m, reaction torque about body x per newton of thrust");
}

}  // namespace fwrl::dynamics
