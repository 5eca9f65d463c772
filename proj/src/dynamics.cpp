#include "fwrl/dynamics.hpp"

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

namespace fwrl::dynamics {

bool SimState::finite() const {
    return position.allFinite() && attitude.allFinite() && velocity.allFinite() &&
           rates.allFinite() && std::isfinite(time);
}

UavParams UavParams::nominal() {
    // Skywalker X8-like values. Mass and inertia follow published bifilar
    // pendulum estimates; the aerodynamic set is a rounded approximation of
    // the wind-tunnel derived model and is the project's reference model.
    UavParams p;
    p.mass = 3.8;
    p.inertia << 1.2290, 0.0, 0.9343,
                 0.0, 0.1702, 0.0,
                 0.9343, 0.0, 1.7523;
    p.gravity = 9.81;
    p.air_density = 1.225;
    p.wing_area = 0.75;
    p.span = 2.10;
    p.chord = 0.3571;

    auto& a = p.aero;
    a.CL0 = 0.0867;
    a.CL_alpha = 4.0203;
    a.CL_q = 3.8954;
    a.CL_de = 0.2781;
    a.CD0 = 0.0197;
    a.CD_alpha = 0.0791;
    a.CD_de = 0.0633;
    a.CY0 = 0.0;
    a.CY_beta = -0.2239;
    a.CY_p = -0.1374;
    a.CY_r = 0.0839;
    a.CY_da = 0.0433;
    a.Cl0 = 0.0;
    a.Cl_beta = -0.0849;
    a.Cl_p = -0.4042;
    a.Cl_r = 0.0555;
    a.Cl_da = 0.1202;
    a.Cm0 = 0.0224;
    a.Cm_alpha = -0.2617;
    a.Cm_q = -1.3990;
    a.Cm_de = -0.2792;
    a.Cn0 = 0.0;
    a.Cn_beta = 0.0283;
    a.Cn_p = 0.0044;
    a.Cn_r = -0.0720;
    a.Cn_da = -0.0034;

    p.thrust_lin = 0.0;
    p.thrust_quad = 30.0;
    p.k_torque = 0.0;
    return p;
}

void UavParams::validate() const {
    if (!(mass > 0.0)) throw ConfigError("UavParams: mass must be positive");
    if (!inertia.isApprox(inertia.transpose(), 1e-12)) {
        throw ConfigError("UavParams: inertia must be symmetric");
    }
    Eigen::LLT<Mat3> llt(inertia);
    if (llt.info() != Eigen::Success) {
        throw ConfigError("UavParams: inertia must be positive definite");
    }
    if (!(wing_area > 0.0 && span > 0.0 && chord > 0.0 && air_density > 0.0)) {
        throw ConfigError("UavParams: geometry and air density must be positive");
    }
}

KeyValueFile UavParams::to_keyvalue() const {
    KeyValueFile kv;
    kv.set("schema", kSchema, "flying-wing model parameters, SI units");
    write_keys(kv, "");
    return kv;
}

void UavParams::write_keys(KeyValueFile& kv, std::string_view prefix) const {
    for_each_param(*this, [&](const char* key, const double& value, const char* unit) {
        kv.set(std::string(prefix) + key, value, unit);
    });
}

UavParams UavParams::from_keyvalue(const KeyValueFile& kv, std::string_view prefix) {
    UavParams p;
    for_each_param(p, [&](const char* key, double& value, const char*) {
        value = kv.get_double(std::string(prefix) + key);
    });
    p.inertia(2, 0) = p.inertia(0, 2);
    p.validate();
    return p;
}

bool UavParams::operator==(const UavParams& other) const {
    std::vector<double> a, b;
    for_each_param(*this, [&](const char*, const double& v, const char*) { a.push_back(v); });
    for_each_param(other, [&](const char*, const double& v, const char*) { b.push_back(v); });
    return a == b && inertia == other.inertia;
}

Elevons elevon_map(double elevator, double aileron) {
    return {.right = elevator - aileron, .left = elevator + aileron};
}

VirtualSurfaces inverse_elevon_map(double left, double right) {
    return {.elevator = 0.5 * (left + right), .aileron = 0.5 * (left - right)};
}

ActuatorState::ActuatorState(const ActuatorLimits& limits, const ActuatorCommand& initial)
    : limits_(limits) {
    applied_ = saturate(initial);
    commanded_ = applied_;
    target_ = applied_;
}

ActuatorCommand ActuatorState::saturate(const ActuatorCommand& c) const {
    const double m = limits_.max_deflection;
    return {.right = std::clamp(c.right, -m, m),
            .left = std::clamp(c.left, -m, m),
            .throttle = std::clamp(c.throttle, 0.0, 1.0)};
}

void ActuatorState::command(double time, const ActuatorCommand& cmd) {
    commanded_ = saturate(cmd);
    buffer_.push_back({time, commanded_});
}

void ActuatorState::advance(double time, double dt) {
    // Tolerance absorbs accumulated rounding of the step clock.
    constexpr double kClockTol = 1e-9;
    while (!buffer_.empty() && buffer_.front().time + limits_.delay <= time + kClockTol) {
        target_ = buffer_.front().command;
        buffer_.pop_front();
    }
    const double max_move = limits_.rate_limit * dt;
    auto slew = [max_move](double from, double to) {
        return from + std::clamp(to - from, -max_move, max_move);
    };
    applied_.right = slew(applied_.right, target_.right);
    applied_.left = slew(applied_.left, target_.left);
    applied_.throttle = target_.throttle;
}

Mat3 body_to_ned(const Vec3& att) {
    const double cphi = std::cos(att.x()), sphi = std::sin(att.x());
    const double cth = std::cos(att.y()), sth = std::sin(att.y());
    const double cpsi = std::cos(att.z()), spsi = std::sin(att.z());
    Mat3 r;
    r << cth * cpsi, sphi * sth * cpsi - cphi * spsi, cphi * sth * cpsi + sphi * spsi,
         cth * spsi, sphi * sth * spsi + cphi * cpsi, cphi * sth * spsi - sphi * cpsi,
         -sth, sphi * cth, cphi * cth;
    return r;
}

AirData air_data(const SimState& state, const Wind& wind) {
    AirData ad;
    ad.relative_velocity =
        state.velocity - body_to_ned(state.attitude).transpose() * wind.steady_ned - wind.gust_body;
    const Vec3& vr = ad.relative_velocity;
    ad.airspeed = vr.norm();
    if (ad.airspeed > 0.0) {
        ad.alpha = std::atan2(vr.z(), vr.x());
        ad.beta = std::asin(std::clamp(vr.y() / ad.airspeed, -1.0, 1.0));
    }
    return ad;
}

Vec3 euler_rates(const Vec3& att, const Vec3& w) {
    const double cphi = std::cos(att.x()), sphi = std::sin(att.x());
    const double cth = std::cos(att.y()), tth = std::tan(att.y());
    return {w.x() + (w.y() * sphi + w.z() * cphi) * tth,
            w.y() * cphi - w.z() * sphi,
            (w.y() * sphi + w.z() * cphi) / cth};
}

namespace {

CoefficientSet coefficients(const AirData& ad, const Vec3& rates, const UavParams& params,
                            const ActuatorCommand& applied) {
    if (!(ad.airspeed > kMinAirspeed)) {
        throw DegenerateAirspeedError("airspeed below nondimensionalization limit");
    }
    const auto surf = inverse_elevon_map(applied.left, applied.right);
    const double de = surf.elevator;
    const double da = surf.aileron;
    const double k_lon = params.chord / (2.0 * ad.airspeed);
    const double k_lat = params.span / (2.0 * ad.airspeed);
    const double p_hat = k_lat * rates.x();
    const double q_hat = k_lon * rates.y();
    const double r_hat = k_lat * rates.z();
    const auto& a = params.aero;
    const double alpha = ad.alpha;
    const double beta = ad.beta;

    CoefficientSet c;
    c.CL = a.CL0 + a.CL_alpha * alpha + a.CL_q * q_hat + a.CL_de * de;
    c.CD = a.CD0 + a.CD_alpha * std::abs(alpha) + a.CD_de * std::abs(de);
    c.Cm = a.Cm0 + a.Cm_alpha * alpha + a.Cm_q * q_hat + a.Cm_de * de;
    c.CY = a.CY0 + a.CY_beta * beta + a.CY_p * p_hat + a.CY_r * r_hat + a.CY_da * da;
    c.Cl = a.Cl0 + a.Cl_beta * beta + a.Cl_p * p_hat + a.Cl_r * r_hat + a.Cl_da * da;
    c.Cn = a.Cn0 + a.Cn_beta * beta + a.Cn_p * p_hat + a.Cn_r * r_hat + a.Cn_da * da;
    return c;
}

}  // namespace

CoefficientSet aero_coefficients(const SimState& state, const UavParams& params,
                                 const ActuatorCommand& applied, const Wind& wind) {
    return coefficients(air_data(state, wind), state.rates, params, applied);
}

double thrust(const UavParams& params, double throttle) {
    return params.thrust_lin * throttle + params.thrust_quad * throttle * throttle;
}

SimStateDot derivatives(const SimState& state, const UavParams& params,
                        const ActuatorCommand& applied, const Wind& wind) {
    if (std::abs(state.attitude.y()) >= kMaxPitch) {
        throw EulerSingularityError("pitch angle at or beyond the Euler guard");
    }
    const AirData ad = air_data(state, wind);
    const CoefficientSet c = coefficients(ad, state.rates, params, applied);

    const double qbar_s = 0.5 * params.air_density * ad.airspeed * ad.airspeed * params.wing_area;
    const double ca = std::cos(ad.alpha), sa = std::sin(ad.alpha);
    const double lift = qbar_s * c.CL;
    const double drag = qbar_s * c.CD;
    const double t = thrust(params, applied.throttle);

    const Mat3 r_bn = body_to_ned(state.attitude);
    const Vec3 gravity_body = r_bn.transpose() * Vec3(0.0, 0.0, params.mass * params.gravity);
    const Vec3 force(-drag * ca + lift * sa + t, qbar_s * c.CY, -drag * sa - lift * ca);
    const Vec3 moment(qbar_s * params.span * c.Cl - params.k_torque * t,
                      qbar_s * params.chord * c.Cm,
                      qbar_s * params.span * c.Cn);

    const Vec3& v = state.velocity;
    const Vec3& w = state.rates;
    SimStateDot d;
    d.position = r_bn * v;
    d.attitude = euler_rates(state.attitude, w);
    d.velocity = (force + gravity_body) / params.mass - w.cross(v);
    d.rates = params.inertia.ldlt().solve(moment - w.cross(params.inertia * w));
    return d;
}

namespace {

SimState advance_by(const SimState& s, const SimStateDot& d, double h) {
    SimState out = s;
    out.position += h * d.position;
    out.attitude += h * d.attitude;
    out.velocity += h * d.velocity;
    out.rates += h * d.rates;
    return out;
}

}  // namespace

SimState integrate_rk4(const SimState& s, const UavParams& params, const ActuatorCommand& applied,
                       const Wind& wind, double dt) {
    const SimStateDot k1 = derivatives(s, params, applied, wind);
    const SimStateDot k2 = derivatives(advance_by(s, k1, 0.5 * dt), params, applied, wind);
    const SimStateDot k3 = derivatives(advance_by(s, k2, 0.5 * dt), params, applied, wind);
    const SimStateDot k4 = derivatives(advance_by(s, k3, dt), params, applied, wind);
    SimState out = s;
    const double w = dt / 6.0;
    out.position += w * (k1.position + 2.0 * k2.position + 2.0 * k3.position + k4.position);
    out.attitude += w * (k1.attitude + 2.0 * k2.attitude + 2.0 * k3.attitude + k4.attitude);
    out.velocity += w * (k1.velocity + 2.0 * k2.velocity + 2.0 * k3.velocity + k4.velocity);
    out.rates += w * (k1.rates + 2.0 * k2.rates + 2.0 * k3.rates + k4.rates);
    out.attitude.x() = wrap_angle(out.attitude.x());
    out.attitude.z() = wrap_angle(out.attitude.z());
    out.time = s.time + dt;
    return out;
}

SimState step(const SimState& state, const UavParams& params, ActuatorState& actuators,
              const Wind& wind, double dt) {
    if (!(dt > 0.0 && dt <= 0.05)) throw Error("step: dt must lie in (0, 0.05] s");
    actuators.advance(state.time, dt);
    return integrate_rk4(state, params, actuators.applied(), wind, dt);
}

SimState level_state(double airspeed, double alpha, double altitude) {
    SimState s;
    s.position = Vec3(0.0, 0.0, -altitude);
    s.attitude = Vec3(0.0, alpha, 0.0);
    s.velocity = Vec3(airspeed * std::cos(alpha), 0.0, airspeed * std::sin(alpha));
    return s;
}

TrimResult trim(const UavParams& params, double airspeed) {
    if (!(airspeed >= 13.0 && airspeed <= 26.0)) {
        throw TrimError("trim: airspeed outside the [13, 26] m/s envelope",
                        std::numeric_limits<double>::infinity());
    }
    auto residual = [&](const Eigen::Vector3d& x) {
        const SimState s = level_state(airspeed, x(0));
        const ActuatorCommand a{.right = x(1), .left = x(1), .throttle = x(2)};
        const SimStateDot d = derivatives(s, params, a, Wind{});
        return Eigen::Vector3d(d.velocity.x(), d.velocity.z(), d.rates.y());
    };

    Eigen::Vector3d x(0.05, 0.0, 0.5);
    Eigen::Vector3d r = residual(x);
    double best = r.norm();
    constexpr int kMaxIter = 100;
    for (int it = 0; it < kMaxIter && best > 1e-13; ++it) {
        Eigen::Matrix3d jac;
        for (int j = 0; j < 3; ++j) {
            constexpr double h = 1e-7;
            Eigen::Vector3d xp = x, xm = x;
            xp(j) += h;
            xm(j) -= h;
            jac.col(j) = (residual(xp) - residual(xm)) / (2.0 * h);
        }
        const Eigen::Vector3d dx = jac.fullPivLu().solve(-r);
        double step_len = 1.0;
        Eigen::Vector3d xn = x + dx;
        Eigen::Vector3d rn = residual(xn);
        while (rn.norm() > r.norm() && step_len > 1e-4) {
            step_len *= 0.5;
            xn = x + step_len * dx;
            rn = residual(xn);
        }
        if (rn.norm() >= r.norm()) break;
        x = xn;
        r = rn;
        best = r.norm();
    }

    TrimResult out;
    out.alpha = x(0);
    out.elevon = x(1);
    out.throttle = x(2);
    out.state = level_state(airspeed, out.alpha);
    out.actuators = {.right = out.elevon, .left = out.elevon, .throttle = out.throttle};
    const SimStateDot d = derivatives(out.state, params, out.actuators, Wind{});
    out.residual = Eigen::Vector4d(d.velocity.x(), d.velocity.z(), d.rates.y(), d.attitude.y()).norm();
    out.lateral_residual = Eigen::Vector4d(d.velocity.y(), d.rates.x(), d.rates.z(), d.attitude.x()).norm();
    if (!(out.residual < 1e-6)) {
        throw TrimError("trim: no convergence within the iteration budget", out.residual);
    }
    if (out.throttle < 0.0 || out.throttle > 1.0) {
        throw TrimError("trim: required throttle outside [0, 1]", out.residual);
    }
    return out;
}

}  // namespace fwrl::dynamics
