#include "fwrl/pid.hpp"

#include <doctest.h>

#include <filesystem>

using namespace fwrl;
using namespace fwrl::pid;

namespace {

std::filesystem::path config_dir() { return FWRL_CONFIG_DIR; }

PidInput level(double airspeed = 18.0) {
    PidInput in;
    in.airspeed = airspeed;
    return in;
}

// Central-difference partial of an output with respect to one input field.
template <class Field, class Out>
double partial(const PidGains& g, Field field, Out out, double h = 1e-6) {
    PidInput a = level(), b = level();
    field(a) += h;
    field(b) -= h;
    PidState sa, sb;
    return (out(pid_step(a, g, 0.02, sa)) - out(pid_step(b, g, 0.02, sb))) / (2 * h);
}

// Integrator partial: hold a small constant error for a while and divide the
// output drift by the accumulated error integral.
double integrator_partial(const PidGains& g, bool roll) {
    const double e = 1e-4, dt = 0.02;
    const int n = 50;
    PidState st;
    PidInput in = level();
    (roll ? in.phi_ref : in.theta_ref) = e;
    const auto first = pid_step(in, g, dt, st);
    PidOutput last;
    for (int k = 1; k <= n; ++k) last = pid_step(in, g, dt, st);
    const double drift = roll ? last.aileron - first.aileron : last.elevator - first.elevator;
    return drift / (e * n * dt);
}

}  // namespace

TEST_CASE("zero error in level flight gives zero surfaces") {
    const auto g = PidGains::load(config_dir() / "pid_gains.cfg");
    PidState st;
    const auto out = pid_step(level(), g, 0.02, st);
    CHECK(out.aileron == 0.0);
    CHECK(out.elevator == 0.0);
    CHECK(out.q_ct == 0.0);
    CHECK(st.int_p == 0.0);
}

TEST_CASE("calibrated gains reproduce the published sensitivities") {
    const auto target = reference_sensitivities().as_array();
    const auto shipped = PidGains::load(config_dir() / "pid_gains.cfg");
    const auto cal = calibrate_gains(reference_sensitivities());
    for (double r : cal.residual) CHECK(std::abs(r) < 1e-12);
    CHECK(cal.gains.k_phi == 3.0);
    CHECK(cal.gains.kp_p == doctest::Approx(0.0243));
    CHECK(cal.gains.kp_q == doctest::Approx(0.0312));

    for (const auto& g : {shipped, cal.gains}) {
        // numerical partials, e = reference - state
        const std::array<double, 6> num = {
            partial(g, [](PidInput& i) -> double& { return i.phi_ref; }, [](const PidOutput& o) { return o.aileron; }),
            partial(g, [](PidInput& i) -> double& { return i.theta_ref; }, [](const PidOutput& o) { return o.elevator; }),
            partial(g, [](PidInput& i) -> double& { return i.p; }, [](const PidOutput& o) { return o.aileron; }),
            partial(g, [](PidInput& i) -> double& { return i.q; }, [](const PidOutput& o) { return o.elevator; }),
            integrator_partial(g, true),
            integrator_partial(g, false),
        };
        for (int i = 0; i < 6; ++i) CHECK(std::abs(num[i] - target[i]) < 1e-3);
        const auto ana = analytic_sensitivities(g, 18.0).as_array();
        for (int i = 0; i < 6; ++i) CHECK(ana[i] == doctest::Approx(num[i]).epsilon(1e-6));
    }
}

TEST_CASE("airspeed scaling") {
    SUBCASE("P path scales with nu squared") {
        PidGains g;
        g.k_phi = 1.0;
        g.kp_p = 0.1;
        PidInput in = level(18.0);
        in.phi_ref = 0.1;
        PidState s1, s2;
        const double fast = pid_step(in, g, 0.02, s1).aileron;
        in.airspeed = 9.0;
        const double slow = pid_step(in, g, 0.02, s2).aileron;
        CHECK(slow == doctest::Approx(4.0 * fast).epsilon(1e-14));
    }
    SUBCASE("feed-forward path scales with nu") {
        PidGains g;
        g.k_theta = 1.0;
        g.kff_q = 0.2;
        PidInput in = level(18.0);
        in.theta_ref = 0.1;
        PidState s1, s2;
        const double fast = pid_step(in, g, 0.02, s1).elevator;
        in.airspeed = 9.0;
        const double slow = pid_step(in, g, 0.02, s2).elevator;
        CHECK(slow == doctest::Approx(2.0 * fast).epsilon(1e-14));
    }
}

TEST_CASE("integrators grow linearly without clamping") {
    PidGains g;
    g.k_phi = g.k_theta = 2.0;
    g.ki_p = 0.3;
    g.ki_q = 0.2;
    PidState st;
    st.clamp_enabled = false;
    PidInput in = level(12.0);
    in.phi_ref = 0.4;
    in.theta_ref = -0.3;
    const double nu2 = (18.0 / 12.0) * (18.0 / 12.0);
    const double dt = 0.02;
    for (int k = 1; k <= 500; ++k) {
        pid_step(in, g, dt, st);
        const double t = k * dt;
        CHECK(st.int_p == doctest::Approx(g.ki_p * nu2 * (g.k_phi * 0.4) * t).epsilon(1e-12));
        CHECK(st.int_q == doctest::Approx(g.ki_q * nu2 * (g.k_theta * -0.3) * t).epsilon(1e-12));
    }
    PidState clamped;
    for (int k = 0; k < 5000; ++k) pid_step(in, g, dt, clamped);
    CHECK(std::abs(clamped.int_p) <= clamped.clamp);
    CHECK(std::abs(clamped.int_q) <= clamped.clamp);
}

TEST_CASE("elevon outputs are the elevon map of the virtual surfaces") {
    const auto g = PidGains::load(config_dir() / "pid_gains.cfg");
    Rng rng(3);
    PidState st;
    for (int k = 0; k < 1000; ++k) {
        PidInput in;
        in.phi = rng.uniform(-1, 1);
        in.theta = rng.uniform(-0.5, 0.5);
        in.phi_ref = rng.uniform(-1, 1);
        in.theta_ref = rng.uniform(-0.4, 0.4);
        in.p = rng.uniform(-2, 2);
        in.q = rng.uniform(-2, 2);
        in.airspeed = rng.uniform(8, 30);
        const auto out = pid_step(in, g, 0.02, st);
        CHECK(out.unsaturated.left == out.elevator + out.aileron);
        CHECK(out.unsaturated.right == out.elevator - out.aileron);
        CHECK(out.elevons.left == std::clamp(out.unsaturated.left, -kMaxDeflection, kMaxDeflection));
        CHECK(out.elevons.right == std::clamp(out.unsaturated.right, -kMaxDeflection, kMaxDeflection));
    }
}

TEST_CASE("coordinated-turn offset") {
    Rng rng(4);
    for (int k = 0; k < 1000; ++k) {
        const double theta = rng.uniform(-1.5, 1.5), va = rng.uniform(5, 30);
        CHECK(coordinated_turn_offset(0.0, theta, va, 9.81) == 0.0);
        CHECK(coordinated_turn_offset(0.0, theta, va, 9.81, TurnCompensation::kLevelFlight) == 0.0);
    }
    const double phi = 0.5, theta = 0.3, va = 18.0;
    CHECK(coordinated_turn_offset(phi, theta, va, 9.81) ==
          doctest::Approx(std::sin(phi) * std::cos(theta) * 9.81 / va * std::tan(phi)));
    CHECK(coordinated_turn_offset(phi, theta, va, 9.81, TurnCompensation::kLevelFlight) ==
          doctest::Approx(std::sin(phi) * 9.81 / va * std::tan(phi)));
}

TEST_CASE("calibration edge cases") {
    const auto zero = calibrate_gains(Sensitivities{});
    CHECK(zero.gains.k_phi == 0.0);
    CHECK(zero.gains.k_theta == 0.0);
    CHECK(zero.gains.kp_p == 0.0);
    CHECK(zero.gains.ki_q == 0.0);
    CHECK(zero.gains.kff_q == 0.0);

    auto flipped = reference_sensitivities();
    flipped.aileron_p = 0.0243;
    CHECK_THROWS_AS(calibrate_gains(flipped), CalibrationError);
}

TEST_CASE("degenerate airspeed and gain validation") {
    PidState st;
    CHECK_THROWS_AS(pid_step(level(1.0), PidGains{}, 0.02, st), DegenerateAirspeedError);
    CHECK_THROWS_AS(pid_step(level(-5.0), PidGains{}, 0.02, st), DegenerateAirspeedError);

    PidGains bad;
    bad.kp_p = -0.1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = PidGains{};
    bad.v_ref = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    const auto g = PidGains::load(config_dir() / "pid_gains.cfg");
    CHECK(PidGains::from_keyvalue(g.to_keyvalue()) == g);
}
