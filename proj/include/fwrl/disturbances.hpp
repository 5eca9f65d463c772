#pragma once

#include "fwrl/common.hpp"

#include <vector>

namespace fwrl::disturbances {

/**
 * @brief Multi-channel Ornstein-Uhlenbeck measurement noise.
 *
 * Exact discretization:
 *   w <- mu + (w - mu) e^{-theta dt} + sigma sqrt((1 - e^{-2 theta dt}) / (2 theta)) xi
 * so channel i has stationary standard deviation sigma_i / sqrt(2 theta).
 * Channels with sigma_i == 0 stay exactly at mu_i.
 */
class OuProcess {
public:
    OuProcess(std::vector<double> sigma, double theta, Rng rng, std::vector<double> mean = {});

    /// Draws the initial value from the stationary distribution.
    void reset_stationary();
    void reset_to_mean();

    const std::vector<double>& step(double dt);
    const std::vector<double>& value() const { return value_; }
    double stationary_std(std::size_t channel) const;

    const std::vector<double>& sigma() const { return sigma_; }
    double theta() const { return theta_; }

private:
    std::vector<double> sigma_;
    std::vector<double> mean_;
    double theta_;
    std::vector<double> value_;
    Rng rng_;
};

/// Per-channel sigma of the attitude-measurement noise (14 channels).
std::vector<double> default_measurement_sigma();

/// Low-altitude Dryden turbulence parameters (MIL-F-8785C style).
struct DrydenParams {
    double length_u = 200.0;  ///< m
    double length_v = 200.0;
    double length_w = 50.0;
    double sigma_u = 1.06;  ///< m/s, light turbulence at low altitude
    double sigma_v = 1.06;
    double sigma_w = 0.7;

    DrydenParams scaled(double factor) const;
    bool operator==(const DrydenParams&) const = default;
};

/**
 * @brief Dryden gust generator driven by unit white noise.
 *
 * u channel: H_u(s) = sigma_u sqrt(2 V / L_u) / (s + V / L_u)
 * v, w:      H(s)   = sigma sqrt(3 V / L) (s + V / (sqrt(3) L)) / (s + V / L)^2
 * Each shaping filter is discretized exactly for the current (V, dt), so the
 * stationary output variance equals sigma^2 for any step size.
 */
class DrydenTurbulence {
public:
    DrydenTurbulence(const DrydenParams& params, Rng rng);

    /// Advance by dt at airspeed V (clamped to > 1 m/s). Returns body-frame gust.
    Vec3 step(double airspeed, double dt);
    Vec3 gust() const;
    void reset();

    const DrydenParams& params() const { return params_; }

private:
    DrydenParams params_;
    double x_u_ = 0.0;
    Eigen::Vector2d x_v_ = Eigen::Vector2d::Zero();
    Eigen::Vector2d x_w_ = Eigen::Vector2d::Zero();
    double last_v_ = 0.0;
    double last_w_ = 0.0;
    Rng rng_;
};

/// Steady wind: magnitude ~ U(0, max_speed), direction uniform on the sphere
/// with the vertical component scaled by `vertical_scale` before normalizing.
Vec3 sample_episode_wind(Rng& rng, double max_speed = 15.0, double vertical_scale = 0.1);

/**
 * @brief Control-period jitter: dt = base + z, z ~ Exp(rate kappa).
 *
 * kappa is drawn once per episode from U(250, 1000) 1/s, giving a mean extra
 * delay between 1 and 4 ms.
 */
class TimingJitter {
public:
    TimingJitter(double base_period = 0.02, double rate = 500.0, bool enabled = true)
        : base_(base_period), rate_(rate), enabled_(enabled) {}

    static double sample_rate(Rng& rng, double lo = 250.0, double hi = 1000.0) {
        return rng.uniform(lo, hi);
    }

    double next(Rng& rng) const { return enabled_ ? base_ + rng.exponential(rate_) : base_; }

    double base_period() const { return base_; }
    double rate() const { return rate_; }
    bool enabled() const { return enabled_; }

private:
    double base_;
    double rate_;
    bool enabled_;
};

}  // namespace fwrl::disturbances
