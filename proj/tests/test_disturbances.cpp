#include "fwrl/disturbances.hpp"

#include <doctest.h>

#include <algorithm>

using namespace fwrl;
using namespace fwrl::disturbances;

namespace {

// Two-sided Kolmogorov-Smirnov statistic against U(lo, hi).
double ks_uniform(std::vector<double> x, double lo, double hi) {
    std::sort(x.begin(), x.end());
    const double n = static_cast<double>(x.size());
    double d = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double f = (x[i] - lo) / (hi - lo);
        d = std::max({d, (i + 1) / n - f, f - i / n});
    }
    return d;
}

}  // namespace

TEST_CASE("measurement noise leaves previous outputs, integrators and errors clean") {
    const auto sigma = default_measurement_sigma();
    REQUIRE(sigma.size() == 14);
    OuProcess ou(sigma, 1.0, Rng(1));
    ou.reset_stationary();
    for (int k = 0; k < 1000; ++k) {
        const auto& v = ou.step(0.02);
        for (int c : {6, 7, 8, 9, 12, 13}) CHECK(v[c] == 0.0);
    }
    CHECK(sigma[5] == doctest::Approx(0.075));
}

TEST_CASE("zero intensity OU process stays at zero") {
    OuProcess ou(std::vector<double>(14, 0.0), 1.0, Rng(2));
    ou.reset_stationary();
    for (int k = 0; k < 100; ++k) {
        for (double v : ou.step(0.02)) CHECK(v == 0.0);
    }
}

TEST_CASE("OU stationary standard deviation") {
    const auto sigma = default_measurement_sigma();
    const double theta = 1.0;
    OuProcess ou(sigma, theta, Rng(3));
    ou.reset_stationary();
    const int n = 1'000'000;
    std::vector<double> sum(14, 0.0), sq(14, 0.0);
    for (int k = 0; k < n; ++k) {
        const auto& v = ou.step(0.02);
        for (int c = 0; c < 14; ++c) {
            sum[c] += v[c];
            sq[c] += v[c] * v[c];
        }
    }
    for (int c = 0; c < 14; ++c) {
        if (sigma[c] == 0.0) continue;
        const double mean = sum[c] / n;
        const double sd = std::sqrt(sq[c] / n - mean * mean);
        CHECK(sd == doctest::Approx(sigma[c] / std::sqrt(2 * theta)).epsilon(0.02));
        CHECK(ou.stationary_std(c) == doctest::Approx(sigma[c] / std::sqrt(2 * theta)));
    }
}

TEST_CASE("exact OU step matches Euler-Maruyama moments for small dt") {
    // one-step conditional mean and variance from x0
    const double sigma = 0.3, theta = 2.0, dt = 1e-4, x0 = 1.0;
    const double exact_mean = x0 * std::exp(-theta * dt);
    const double exact_var = sigma * sigma * (1 - std::exp(-2 * theta * dt)) / (2 * theta);
    const double em_mean = x0 - theta * x0 * dt;
    const double em_var = sigma * sigma * dt;
    CHECK(std::abs(exact_mean - em_mean) / exact_mean < 1e-3);
    CHECK(std::abs(exact_var - em_var) / exact_var < 1e-3);

    Rng rng(17);
    double s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        OuProcess ou({sigma}, theta, Rng(rng.next_u64()), {0.0});
        ou.reset_to_mean();
        const double v = ou.step(dt)[0];
        s2 += v * v;
    }
    CHECK(s2 / n == doctest::Approx(exact_var).epsilon(0.02));
}

TEST_CASE("Dryden turbulence") {
    SUBCASE("zero intensity gives zero gust") {
        DrydenParams p;
        p.sigma_u = p.sigma_v = p.sigma_w = 0.0;
        DrydenTurbulence t(p, Rng(1));
        for (int k = 0; k < 1000; ++k) CHECK(t.step(18.0, 0.02).norm() == 0.0);
    }
    SUBCASE("zero mean and analytic u variance") {
        DrydenParams p;
        DrydenTurbulence t(p, Rng(2));
        const int n = 1'000'000;
        Vec3 sum = Vec3::Zero();
        double su2 = 0, sv2 = 0, sw2 = 0;
        for (int k = 0; k < 2000; ++k) t.step(18.0, 0.02);
        for (int k = 0; k < n; ++k) {
            const Vec3 g = t.step(18.0, 0.02);
            sum += g;
            su2 += g.x() * g.x();
            sv2 += g.y() * g.y();
            sw2 += g.z() * g.z();
        }
        // correlated samples: allow the effective-sample-size widened bound
        const double tau_u = p.length_u / 18.0, tau_w = p.length_w / 18.0;
        const double neff_u = n * 0.02 / (2 * tau_u);
        const double neff_w = n * 0.02 / (2 * tau_w);
        CHECK(std::abs(sum.x() / n) < 3 * p.sigma_u / std::sqrt(neff_u));
        CHECK(std::abs(sum.y() / n) < 3 * p.sigma_v / std::sqrt(neff_u));
        CHECK(std::abs(sum.z() / n) < 3 * p.sigma_w / std::sqrt(neff_w));
        // first-order u filter discretized exactly: stationary variance sigma_u^2
        CHECK(su2 / n == doctest::Approx(p.sigma_u * p.sigma_u).epsilon(0.05));
        CHECK(sv2 / n == doctest::Approx(p.sigma_v * p.sigma_v).epsilon(0.10));
        CHECK(sw2 / n == doctest::Approx(p.sigma_w * p.sigma_w).epsilon(0.10));
    }
    SUBCASE("intensity scaling") {
        const DrydenParams p;
        const auto s = p.scaled(2.0);
        CHECK(s.sigma_u == 2 * p.sigma_u);
        CHECK(s.length_u == p.length_u);
    }
}

TEST_CASE("steady wind sampling") {
    Rng rng(5);
    std::vector<double> mags;
    for (int i = 0; i < 100000; ++i) {
        const Vec3 w = sample_episode_wind(rng);
        const double m = w.norm();
        CHECK(m >= 0.0);
        CHECK(m <= 15.0 + 1e-12);
        mags.push_back(m);
    }
    // KS critical value at alpha = 0.01
    CHECK(ks_uniform(mags, 0.0, 15.0) < 1.628 / std::sqrt(static_cast<double>(mags.size())));

    Rng a(9), b(9);
    for (int i = 0; i < 10; ++i) CHECK(sample_episode_wind(a) == sample_episode_wind(b));
}

TEST_CASE("timing jitter") {
    SUBCASE("mean of the exponential term is 1/kappa") {
        Rng rng(6);
        const TimingJitter j(0.02, 500.0);
        const int n = 1'000'000;
        double s = 0;
        for (int i = 0; i < n; ++i) {
            const double dt = j.next(rng);
            CHECK_FALSE(dt < 0.02);
            s += dt - 0.02;
        }
        CHECK(s / n == doctest::Approx(0.002).epsilon(0.01));
    }
    SUBCASE("disabled jitter returns the base period") {
        Rng rng(7);
        const TimingJitter j(0.02, 500.0, false);
        for (int i = 0; i < 100; ++i) CHECK(j.next(rng) == 0.02);
    }
    SUBCASE("per-episode rate drawn in range") {
        Rng rng(8);
        for (int i = 0; i < 1000; ++i) {
            const double k = TimingJitter::sample_rate(rng);
            CHECK(k >= 250.0);
            CHECK(k <= 1000.0);
        }
    }
}
