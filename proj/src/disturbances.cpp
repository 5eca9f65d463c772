#include "fwrl/disturbances.hpp"

#include <unsupported/Eigen/MatrixFunctions>

namespace fwrl::disturbances {

OuProcess::OuProcess(std::vector<double> sigma, double theta, Rng rng, std::vector<double> mean)
    : sigma_(std::move(sigma)), mean_(std::move(mean)), theta_(theta), rng_(rng) {
    if (!(theta_ > 0.0)) throw ConfigError("OuProcess: theta must be positive");
    if (mean_.empty()) mean_.assign(sigma_.size(), 0.0);
    if (mean_.size() != sigma_.size()) throw ConfigError("OuProcess: mean/sigma size mismatch");
    value_ = mean_;
}

void OuProcess::reset_stationary() {
    for (std::size_t i = 0; i < sigma_.size(); ++i) {
        value_[i] = mean_[i];
        if (sigma_[i] != 0.0) value_[i] += stationary_std(i) * rng_.normal();
    }
}

void OuProcess::reset_to_mean() { value_ = mean_; }

const std::vector<double>& OuProcess::step(double dt) {
    const double decay = std::exp(-theta_ * dt);
    const double diffusion = std::sqrt(-std::expm1(-2.0 * theta_ * dt) / (2.0 * theta_));
    for (std::size_t i = 0; i < sigma_.size(); ++i) {
        if (sigma_[i] == 0.0) continue;
        value_[i] = mean_[i] + (value_[i] - mean_[i]) * decay + sigma_[i] * diffusion * rng_.normal();
    }
    return value_;
}

double OuProcess::stationary_std(std::size_t channel) const {
    return sigma_[channel] / std::sqrt(2.0 * theta_);
}

std::vector<double> default_measurement_sigma() {
    const std::vector<double> base = {1.5, 1.5, 1.5, 1.0, 1.0, 15.0, 0.0,
                                      0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0};
    std::vector<double> out;
    out.reserve(base.size());
    for (double b : base) out.push_back(0.005 * b);
    return out;
}

DrydenParams DrydenParams::scaled(double factor) const {
    DrydenParams p = *this;
    p.sigma_u *= factor;
    p.sigma_v *= factor;
    p.sigma_w *= factor;
    return p;
}

DrydenTurbulence::DrydenTurbulence(const DrydenParams& params, Rng rng)
    : params_(params), rng_(rng) {}

void DrydenTurbulence::reset() {
    x_u_ = 0.0;
    x_v_.setZero();
    x_w_.setZero();
    last_v_ = last_w_ = 0.0;
}

namespace {

struct SecondOrderStep {
    Eigen::Matrix2d phi;
    Eigen::Matrix2d noise_chol;
};

// Exact discretization of x' = A x + B w (unit white noise) via Van Loan.
SecondOrderStep discretize_second_order(double a, double dt) {
    Eigen::Matrix2d A;
    A << 0.0, 1.0, -a * a, -2.0 * a;
    Eigen::Matrix2d BBt = Eigen::Matrix2d::Zero();
    BBt(1, 1) = 1.0;
    Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
    m.topLeftCorner<2, 2>() = -A * dt;
    m.topRightCorner<2, 2>() = BBt * dt;
    m.bottomRightCorner<2, 2>() = A.transpose() * dt;
    const Eigen::Matrix4d e = m.exp();
    SecondOrderStep out;
    out.phi = e.bottomRightCorner<2, 2>().transpose();
    Eigen::Matrix2d q = out.phi * e.topRightCorner<2, 2>();
    q = 0.5 * (q + q.transpose());
    Eigen::LLT<Eigen::Matrix2d> llt(q);
    if (llt.info() == Eigen::Success) {
        out.noise_chol = llt.matrixL();
    } else {
        out.noise_chol = q.diagonal().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    }
    return out;
}

double second_order_output(const Eigen::Vector2d& x, double a, double sigma) {
    const double gain = sigma * std::sqrt(3.0 * a);
    return gain * (a / std::sqrt(3.0) * x(0) + x(1));
}

}  // namespace

Vec3 DrydenTurbulence::step(double airspeed, double dt) {
    const double v = std::max(airspeed, 1.0);

    const double a_u = v / params_.length_u;
    const double decay = std::exp(-a_u * dt);
    x_u_ = x_u_ * decay + params_.sigma_u * std::sqrt(-std::expm1(-2.0 * a_u * dt)) * rng_.normal();

    const double a_v = v / params_.length_v;
    const auto sv = discretize_second_order(a_v, dt);
    x_v_ = sv.phi * x_v_ + sv.noise_chol * Eigen::Vector2d(rng_.normal(), rng_.normal());
    last_v_ = second_order_output(x_v_, a_v, params_.sigma_v);

    const double a_w = v / params_.length_w;
    const auto sw = discretize_second_order(a_w, dt);
    x_w_ = sw.phi * x_w_ + sw.noise_chol * Eigen::Vector2d(rng_.normal(), rng_.normal());
    last_w_ = second_order_output(x_w_, a_w, params_.sigma_w);

    return gust();
}

Vec3 DrydenTurbulence::gust() const { return {x_u_, last_v_, last_w_}; }

Vec3 sample_episode_wind(Rng& rng, double max_speed, double vertical_scale) {
    Vec3 dir;
    do {
        dir = Vec3(rng.normal(), rng.normal(), rng.normal());
    } while (dir.norm() < 1e-9);
    dir.normalize();
    dir.z() *= vertical_scale;
    dir.normalize();
    return rng.uniform(0.0, max_speed) * dir;
}

}  // namespace fwrl::disturbances
