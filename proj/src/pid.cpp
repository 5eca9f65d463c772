#include "fwrl/pid.hpp"

#include <algorithm>

namespace fwrl::pid {

namespace {

template <typename G, typename F>
void for_each_gain(G& g, F&& f) {
    f("k_phi", g.k_phi, "1/s, roll angle to roll rate");
    f("k_theta", g.k_theta, "1/s, pitch angle to pitch rate");
    f("kp_p", g.kp_p, "roll-rate proportional");
    f("ki_p", g.ki_p, "roll-rate integral");
    f("kff_p", g.kff_p, "roll-rate feed-forward");
    f("kp_q", g.kp_q, "pitch-rate proportional");
    f("ki_q", g.ki_q, "pitch-rate integral");
    f("kff_q", g.kff_q, "pitch-rate feed-forward");
    f("v_ref", g.v_ref, "m/s, airspeed scaling reference");
    f("gravity", g.gravity, "m/s^2");
}

}  // namespace

void PidGains::validate() const {
    bool ok = true;
    for_each_gain(*this, [&](const char*, double v, const char*) { ok = ok && std::isfinite(v) && v >= 0.0; });
    if (!ok) throw ConfigError("PID gains must be finite and non-negative");
    if (!(v_ref > 0.0)) throw ConfigError("PID v_ref must be positive");
}

KeyValueFile PidGains::to_keyvalue() const {
    KeyValueFile kv;
    kv.set("schema", kSchema);
    for_each_gain(*this, [&](const char* key, double v, const char* unit) { kv.set(key, v, unit); });
    return kv;
}

PidGains PidGains::from_keyvalue(const KeyValueFile& kv) {
    kv.require_schema(kSchema);
    PidGains g;
    for_each_gain(g, [&](const char* key, double& v, const char*) { v = kv.get_double(key); });
    g.validate();
    return g;
}

PidGains PidGains::load(const std::filesystem::path& path) { return from_keyvalue(KeyValueFile::load(path)); }

void PidGains::save(const std::filesystem::path& path) const { to_keyvalue().save(path); }

double coordinated_turn_offset(double phi, double theta, double airspeed, double gravity,
                               TurnCompensation variant) {
    const double c = variant == TurnCompensation::kAsWritten ? std::cos(theta) : 1.0;
    return std::sin(phi) * c * gravity / airspeed * std::tan(phi);
}

PidOutput pid_step(const PidInput& in, const PidGains& g, double dt, PidState& st, TurnCompensation variant) {
    if (!(in.airspeed > 1.0)) throw DegenerateAirspeedError("pid_step: airspeed must exceed 1 m/s");
    const double nu = g.v_ref / in.airspeed;
    const double nu2 = nu * nu;

    PidOutput out;
    out.q_ct = coordinated_turn_offset(in.phi, in.theta, in.airspeed, g.gravity, variant);
    out.p_ref = g.k_phi * wrap_angle(in.phi_ref - in.phi);
    out.q_ref = g.k_theta * (in.theta_ref - in.theta) + out.q_ct;

    const double ep = out.p_ref - in.p;
    const double eq = out.q_ref - in.q;
    out.aileron = g.kp_p * nu2 * ep + st.int_p + g.kff_p * nu * out.p_ref;
    out.elevator = -g.kp_q * nu2 * eq - st.int_q - g.kff_q * nu * out.q_ref;

    st.int_p += g.ki_p * nu2 * ep * dt;
    st.int_q += g.ki_q * nu2 * eq * dt;
    if (st.clamp_enabled) {
        st.int_p = std::clamp(st.int_p, -st.clamp, st.clamp);
        st.int_q = std::clamp(st.int_q, -st.clamp, st.clamp);
    }

    out.unsaturated = dynamics::elevon_map(out.elevator, out.aileron);
    out.elevons.right = std::clamp(out.unsaturated.right, -kMaxDeflection, kMaxDeflection);
    out.elevons.left = std::clamp(out.unsaturated.left, -kMaxDeflection, kMaxDeflection);
    return out;
}

std::array<double, 6> Sensitivities::as_array() const {
    return {aileron_e_phi, elevator_e_theta, aileron_p, elevator_q, aileron_i_phi, elevator_i_theta};
}

Sensitivities reference_sensitivities() {
    Sensitivities s;
    s.aileron_e_phi = 1.6299;
    s.elevator_e_theta = -1.0813;
    s.aileron_p = -0.0243;
    s.elevator_q = 0.0312;
    s.aileron_i_phi = 0.0521;
    s.elevator_i_theta = -0.0521;
    return s;
}

Sensitivities analytic_sensitivities(const PidGains& g, double airspeed) {
    const double nu = g.v_ref / airspeed;
    const double nu2 = nu * nu;
    Sensitivities s;
    s.aileron_e_phi = g.k_phi * (g.kp_p * nu2 + g.kff_p * nu);
    s.elevator_e_theta = -g.k_theta * (g.kp_q * nu2 + g.kff_q * nu);
    s.aileron_p = -g.kp_p * nu2;
    s.elevator_q = g.kp_q * nu2;
    s.aileron_i_phi = g.ki_p * nu2 * g.k_phi;
    s.elevator_i_theta = -g.ki_q * nu2 * g.k_theta;
    return s;
}

CalibrationResult calibrate_gains(const Sensitivities& t, double v_ref, double outer_gain) {
    if (!(v_ref > 0.0)) throw CalibrationError("calibrate_gains: v_ref must be positive");
    CalibrationResult r;
    r.gains.v_ref = v_ref;
    const auto targets = t.as_array();
    if (std::all_of(targets.begin(), targets.end(), [](double v) { return v == 0.0; })) {
        r.gains.k_phi = r.gains.k_theta = 0.0;
        return r;
    }
    if (!(outer_gain > 0.0)) throw CalibrationError("calibrate_gains: outer gain must be positive");

    PidGains& g = r.gains;
    g.k_phi = g.k_theta = outer_gain;
    g.kp_p = -t.aileron_p;
    g.kp_q = t.elevator_q;
    g.ki_p = t.aileron_i_phi / outer_gain;
    g.ki_q = -t.elevator_i_theta / outer_gain;
    g.kff_p = t.aileron_e_phi / outer_gain - g.kp_p;
    g.kff_q = -t.elevator_e_theta / outer_gain - g.kp_q;

    const std::pair<const char*, double> derived[] = {
        {"kp_p (from d aileron / d p)", g.kp_p},     {"kp_q (from d elevator / d q)", g.kp_q},
        {"ki_p (from d aileron / d I_phi)", g.ki_p}, {"ki_q (from d elevator / d I_theta)", g.ki_q},
        {"kff_p (from d aileron / d e_phi)", g.kff_p}, {"kff_q (from d elevator / d e_theta)", g.kff_q},
    };
    for (const auto& [name, v] : derived) {
        if (v < 0.0) {
            throw CalibrationError(std::string("calibrate_gains: sign conflict, ") + name + " = " +
                                   format_double(v) + " < 0");
        }
    }

    const auto achieved = analytic_sensitivities(g, v_ref).as_array();
    for (std::size_t i = 0; i < 6; ++i) r.residual[i] = achieved[i] - targets[i];
    return r;
}

}  // namespace fwrl::pid
