#include "fwrl/env.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

using namespace fwrl;
using namespace fwrl::env;

namespace {

EpisodeConfig quiet_config() {
    EpisodeConfig c;
    c.randomization.enabled = false;
    c.disturbances.noise = false;
    c.disturbances.turbulence = false;
    c.disturbances.wind = false;
    c.disturbances.jitter = false;
    return c;
}

bool close(double a, double b, double tol = 1e-12) { return std::abs(a - b) <= tol; }

}  // namespace

TEST_CASE("reward examples") {
    const RewardConfig r;
    CHECK(close(r(0, 0, 0, 0), 1.334));
    CHECK(close(r.max(), 1.334));
    CHECK(close(r(deg2rad(10.0), 0, 0, 0), 0.834));
    CHECK(r(1.0, 1.0, 1.0, 1.0) == 0.0);
    // bounds are inclusive
    CHECK(close(r(deg2rad(3.0), -deg2rad(3.0), deg2rad(4.3), -deg2rad(4.3)), 1.334));
}

TEST_CASE("reward takes exactly nine values") {
    // thousandths: subsets of {500, 500, 167, 167}
    std::set<int> oracle;
    for (int a = 0; a <= 2; ++a)
        for (int b = 0; b <= 2; ++b) oracle.insert(500 * a + 167 * b);
    REQUIRE(oracle.size() == 9);

    const RewardConfig r;
    const auto values = r.achievable_values();
    REQUIRE(values.size() == 9);
    std::size_t i = 0;
    for (int v : oracle) CHECK(close(values[i++], v / 1000.0));

    Rng rng(11);
    double top = 0;
    std::set<int> seen;
    for (int k = 0; k < 100000; ++k) {
        const double v = r(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.15, 0.15),
                           rng.uniform(-0.15, 0.15));
        const int milli = static_cast<int>(std::lround(v * 1000));
        CHECK(close(v, milli / 1000.0));
        CHECK(oracle.count(milli) == 1);
        seen.insert(milli);
        top = std::max(top, v);
    }
    CHECK(seen == oracle);
    CHECK(close(top, 1.334));
}

TEST_CASE("error integrator") {
    SUBCASE("constant error converges to the geometric limit") {
        ErrorIntegrator I;
        for (int k = 0; k < 1000; ++k) I.update(0.01);
        CHECK(I.value == doctest::Approx(1.0).epsilon(0.01));
    }
    SUBCASE("bound holds for random error sequences") {
        Rng rng(4);
        for (int trial = 0; trial < 100; ++trial) {
            ErrorIntegrator I;
            const double emax = rng.uniform(0.001, 1.0);
            for (int k = 0; k < 2000; ++k) {
                I.update(rng.uniform(-emax, emax));
                CHECK(std::abs(I.value) <= 100.0 * emax + 1e-12);
            }
        }
    }
}

TEST_CASE("normalizer") {
    Rng rng(8);
    std::vector<std::vector<double>> rows;
    Normalizer a(3), b(3), all(3);
    for (int k = 0; k < 500; ++k) {
        std::vector<double> x{rng.normal() * 2 + 1, rng.uniform(-5, 5), 0.25};
        rows.push_back(x);
        (k < 200 ? a : b).update(x);
        all.update(x);
    }
    // two-pass oracle
    for (int c = 0; c < 3; ++c) {
        double m = 0;
        for (const auto& x : rows) m += x[c];
        m /= rows.size();
        double v = 0;
        for (const auto& x : rows) v += (x[c] - m) * (x[c] - m);
        v /= rows.size();
        CHECK(all.mean(c) == doctest::Approx(m).epsilon(1e-12));
        CHECK(all.variance(c) == doctest::Approx(std::max(v, Normalizer::kVarianceFloor)).epsilon(1e-10));
    }
    CHECK(all.variance(2) == Normalizer::kVarianceFloor);

    Normalizer ab = a, ba = b;
    ab.merge(b);
    ba.merge(a);
    for (int c = 0; c < 3; ++c) {
        CHECK(ab.mean(c) == doctest::Approx(all.mean(c)).epsilon(1e-12));
        CHECK(ab.variance(c) == doctest::Approx(all.variance(c)).epsilon(1e-10));
        CHECK(ab.mean(c) == doctest::Approx(ba.mean(c)).epsilon(1e-12));
    }

    Normalizer fresh(2);
    std::vector<double> out(2);
    fresh.normalize(std::vector<double>{3.0, -4.0}, out);
    CHECK(out == std::vector<double>{3.0, -4.0});

    Normalizer frozen = all;
    frozen.set_frozen(true);
    frozen.update(std::vector<double>{1e6, 1e6, 1e6});
    CHECK(frozen.count() == all.count());
}

TEST_CASE("reset samples inside the initial-condition ranges") {
    EpisodeConfig cfg;
    AttitudeEnv env(cfg, dynamics::UavParams::nominal(), 21);
    const auto& r = cfg.ranges;
    for (int k = 0; k < 10000; ++k) {
        env.reset();
        const auto& ic = env.initial_conditions();
        CHECK(r.phi.contains(ic.phi));
        CHECK(r.theta.contains(ic.theta));
        CHECK(r.airspeed.contains(ic.airspeed));
        CHECK(r.alpha.contains(ic.alpha));
        CHECK(r.beta.contains(ic.beta));
        for (int i = 0; i < 3; ++i) CHECK(r.rate.contains(ic.rates(i)));
        CHECK(r.elevon.contains(ic.elevon_right));
        CHECK(r.elevon.contains(ic.elevon_left));
        CHECK(r.phi_ref.contains(ic.phi_ref));
        CHECK(r.theta_ref.contains(ic.theta_ref));
        CHECK(ic.wind.norm() <= cfg.disturbances.wind_max + 1e-12);
        CHECK(ic.jitter_rate >= cfg.disturbances.jitter_rate_lo);
        CHECK(ic.jitter_rate <= cfg.disturbances.jitter_rate_hi);
    }
}

TEST_CASE("randomization") {
    const auto nominal = dynamics::UavParams::nominal();
    Rng rng(2);
    RandomizationConfig off;
    off.enabled = false;
    CHECK(randomize_params(nominal, off, rng) == nominal);

    const RandomizationConfig on;
    for (int k = 0; k < 200; ++k) {
        const auto p = randomize_params(nominal, on, rng);
        CHECK(p.mass >= nominal.mass * (1 - on.mass_rel) - 1e-12);
        CHECK(p.mass <= nominal.mass * (1 + on.mass_rel) + 1e-12);
        CHECK(p.aero.Cm_q / nominal.aero.Cm_q > 0.0);
        CHECK(p.aero.Cm_q / nominal.aero.Cm_q <= 1 + on.rate_rel + 1e-12);
        CHECK(p.aero.Cm_alpha / nominal.aero.Cm_alpha >= 1 - on.static_rel - 1e-12);
        CHECK(p.aero.Cm_alpha / nominal.aero.Cm_alpha <= 1 + on.static_rel + 1e-12);
    }
}

TEST_CASE("reference sampling") {
    const InitialRanges r;
    Rng rng(3);
    double sp = 0, st = 0;
    const int n = 100000;
    for (int k = 0; k < n; ++k) {
        const auto ref = sample_reference(rng, r);
        CHECK(r.phi_ref.contains(ref.phi));
        CHECK(r.theta_ref.contains(ref.theta));
        sp += ref.phi;
        st += ref.theta;
    }
    CHECK(std::abs(rad2deg(sp / n) - 0.0) < 1.0);
    CHECK(std::abs(rad2deg(st / n) - (-2.5)) < 1.0);

    Rng a(5), b(5);
    for (int k = 0; k < 10; ++k) {
        const auto x = sample_reference(a, r), y = sample_reference(b, r);
        CHECK(x.phi == y.phi);
        CHECK(x.theta == y.theta);
    }
}

TEST_CASE("equal seeds give identical episodes") {
    const EpisodeConfig cfg;
    AttitudeEnv e1(cfg, dynamics::UavParams::nominal(), 99), e2(cfg, dynamics::UavParams::nominal(), 99);
    Rng act(1);
    e1.reset();
    e2.reset();
    while (!e1.done()) {
        const Action a{act.uniform(-1, 1), act.uniform(-1, 1)};
        const auto r1 = e1.step(a);
        const auto r2 = e2.step(a);
        CHECK(r1.reward == r2.reward);
        CHECK(r1.done == r2.done);
        CHECK(r1.record.measurement == r2.record.measurement);
        CHECK(std::equal(e1.window().values().begin(), e1.window().values().end(), e2.window().values().begin()));
    }
    CHECK(e2.done());
}

TEST_CASE("observation window") {
    auto cfg = quiet_config();
    AttitudeEnv env(cfg, dynamics::UavParams::nominal(), 6);
    env.normalizer().set_stats(std::vector<double>(kChannels, 0.0), std::vector<double>(kChannels, 1.0), 1.0);
    env.normalizer().set_frozen(true);
    env.reset();

    const auto& w = env.window();
    REQUIRE(w.values().size() == 140u);
    for (int k = 0; k < cfg.history; ++k) {
        for (int c = 0; c < kChannels; ++c) CHECK(w.slot(k)[c] == env.measurement()[c]);
    }

    Rng rng(7);
    Measurement before = env.measurement();
    for (int t = 0; t < 20; ++t) {
        const Action a{rng.uniform(-1, 1), rng.uniform(-1, 1)};
        env.step(a);
        const auto& m = env.measurement();
        // previous commanded offsets, noise free
        CHECK(m[kPrevRight] == a[0] * cfg.action_scale);
        CHECK(m[kPrevLeft] == a[1] * cfg.action_scale);
        // identity normalization: window equals raw values, newest first
        for (int c = 0; c < kChannels; ++c) {
            CHECK(env.window().slot(0)[c] == m[c]);
            CHECK(env.window().slot(1)[c] == before[c]);
        }
        // integrator recursion
        CHECK(m[kIntPhi] == doctest::Approx(0.99 * before[kIntPhi] + m[kErrPhi]).epsilon(1e-14));
        CHECK(m[kIntTheta] == doctest::Approx(0.99 * before[kIntTheta] + m[kErrTheta]).epsilon(1e-14));
        CHECK(m[kErrTheta] == doctest::Approx(m[kTheta] - env.reference().theta).epsilon(1e-14));
        before = m;
    }
}

TEST_CASE("zero policy at trim collects the maximum reward") {
    auto cfg = quiet_config();
    AttitudeEnv env(cfg, dynamics::UavParams::nominal(), 1);
    env.reset_at_trim({0.0, env.trim().alpha});
    int n = 0;
    while (!env.done()) {
        const auto r = env.step({0.0, 0.0});
        CHECK(close(r.reward, 1.334));
        ++n;
    }
    CHECK(n == cfg.length);
    CHECK(env.normalized_return() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(env.measurement()[kAirspeed] - 18.0) < 1e-3);
}

TEST_CASE("normalized return lies in [0, 1] and stepping after done throws") {
    EpisodeConfig cfg;
    AttitudeEnv env(cfg, dynamics::UavParams::nominal(), 12);
    Rng rng(13);
    for (int ep = 0; ep < 5; ++ep) {
        env.reset();
        while (!env.done()) env.step({rng.uniform(-1, 1), rng.uniform(-1, 1)});
        CHECK(env.normalized_return() >= 0.0);
        CHECK(env.normalized_return() <= 1.0);
    }
    CHECK_THROWS_AS(env.step({0.0, 0.0}), StepAfterDoneError);
}

TEST_CASE("references resample on the interval boundary") {
    auto cfg = quiet_config();
    AttitudeEnv env(cfg, dynamics::UavParams::nominal(), 31);
    env.reset();
    auto ref = env.reference();
    for (int t = 1; t <= 300 && !env.done(); ++t) {
        env.step({0.0, 0.0});
        if (t % cfg.resample_interval == 0) {
            CHECK(env.reference().phi != ref.phi);
            ref = env.reference();
        } else {
            CHECK(env.reference().phi == ref.phi);
        }
    }
}

TEST_CASE("config validation") {
    EpisodeConfig cfg;
    cfg.length = 901;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = EpisodeConfig{};
    KeyValueFile kv;
    cfg.write_keys(kv);
    CHECK(EpisodeConfig::from_keyvalue(kv) == cfg);
}
