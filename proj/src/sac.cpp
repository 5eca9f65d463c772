#include "fwrl/sac.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace fwrl::sac {

using nnet::Matrix;
using Eigen::VectorXd;

double recompute_reward(const Transition& t, const env::RewardConfig& cfg) {
    if (!t.valid) return 0.0;
    return cfg(wrap_angle(t.phi - t.phi_ref), t.theta - t.theta_ref, t.phi_rate, t.theta_rate);
}

// ---------------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::size_t capacity, int obs_size)
    : capacity_(capacity), obs_size_(obs_size), obs_(capacity * obs_size), next_(capacity * env::kChannels),
      meta_(capacity) {
    if (capacity == 0) throw ConfigError("replay buffer capacity must be positive");
}

void ReplayBuffer::add(const Transition& t) {
    if (static_cast<int>(t.obs.size()) != obs_size_) throw Error("ReplayBuffer::add: observation size mismatch");
    std::copy(t.obs.begin(), t.obs.end(), obs_.begin() + head_ * obs_size_);
    std::copy(t.next.begin(), t.next.end(), next_.begin() + head_ * env::kChannels);
    Transition& m = meta_[head_];
    m = t;
    m.obs.clear();
    m.obs.shrink_to_fit();
    head_ = (head_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
}

Transition ReplayBuffer::get(std::size_t i) const {
    if (i >= size_) throw Error("ReplayBuffer::get: index out of range");
    Transition t = meta_[i];
    t.obs.assign(obs_.begin() + i * obs_size_, obs_.begin() + (i + 1) * obs_size_);
    std::copy(next_.begin() + i * env::kChannels, next_.begin() + (i + 1) * env::kChannels, t.next.begin());
    return t;
}

std::size_t ReplayBuffer::sample_index(Rng& rng) const {
    if (size_ == 0) throw Error("ReplayBuffer: sampling from an empty buffer");
    return rng.index(size_);
}

void ReplayBuffer::gather(const std::vector<std::size_t>& idx, Matrix& obs, Matrix& next_obs, Matrix& actions,
                          VectorXd& rewards, VectorXd& not_terminal) const {
    const auto n = static_cast<Eigen::Index>(idx.size());
    obs.resize(obs_size_, n);
    next_obs.resize(obs_size_, n);
    actions.resize(2, n);
    rewards.resize(n);
    not_terminal.resize(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const std::size_t i = idx[j];
        const double* o = obs_.data() + i * obs_size_;
        std::copy(o, o + obs_size_, obs.col(j).data());
        const double* nx = next_.data() + i * env::kChannels;
        double* dst = next_obs.col(j).data();
        std::copy(nx, nx + env::kChannels, dst);
        std::copy(o, o + obs_size_ - env::kChannels, dst + env::kChannels);
        actions(0, j) = meta_[i].action[0];
        actions(1, j) = meta_[i].action[1];
        rewards(j) = meta_[i].reward;
        not_terminal(j) = meta_[i].terminal ? 0.0 : 1.0;
    }
}

// ---------------------------------------------------------------------------

void EpisodeLog::clear() {
    measurements.clear();
    measurement_refs.clear();
    transitions.clear();
}

std::vector<double> EpisodeLog::window(int i) const {
    std::vector<double> w(static_cast<std::size_t>(history) * env::kChannels);
    for (int k = 0; k < history; ++k) {
        const auto& m = measurements[std::max(i - k, 0)];
        std::copy(m.begin(), m.end(), w.begin() + k * env::kChannels);
    }
    return w;
}

std::vector<Transition> her_relabel(const EpisodeLog& ep, Rng& rng, double ratio,
                                    const env::RewardConfig& reward_cfg) {
    std::vector<Transition> out;
    const int n = static_cast<int>(ep.transitions.size());
    if (ratio <= 0.0 || n == 0) return out;
    if (ep.measurements.size() != static_cast<std::size_t>(n) + 1 || ep.measurement_refs.size() != ep.measurements.size()) {
        throw Error("her_relabel: inconsistent episode log");
    }
    auto same_ref = [](double phi_a, double theta_a, const env::Reference& b) {
        return phi_a == b.phi && theta_a == b.theta;
    };

    // segment bounds per transition (maximal runs of equal reward references)
    std::vector<int> seg_start(n), seg_end(n);
    for (int i = 0; i < n; ++i) {
        const auto& t = ep.transitions[i];
        const bool cont = i > 0 && ep.transitions[i - 1].phi_ref == t.phi_ref &&
                          ep.transitions[i - 1].theta_ref == t.theta_ref;
        seg_start[i] = cont ? seg_start[i - 1] : i;
    }
    for (int i = n - 1; i >= 0; --i) {
        const auto& t = ep.transitions[i];
        const bool cont = i + 1 < n && ep.transitions[i + 1].phi_ref == t.phi_ref &&
                          ep.transitions[i + 1].theta_ref == t.theta_ref;
        seg_end[i] = cont ? seg_end[i + 1] : i;
    }

    std::vector<env::Measurement> relabeled;
    for (int i = 0; i < n; ++i) {
        if (rng.uniform() >= ratio) continue;
        const int s = seg_start[i];
        const int k = s == seg_end[i] && i == s ? i : i + static_cast<int>(rng.index(seg_end[i] - i + 1));
        const Transition& orig = ep.transitions[i];
        const double goal_phi = ep.transitions[k].phi;
        const double goal_theta = ep.transitions[k].theta;

        relabeled.assign(ep.measurements.begin() + s, ep.measurements.begin() + i + 2);
        double int_phi = s > 0 ? ep.measurements[s - 1][env::kIntPhi] : 0.0;
        double int_theta = s > 0 ? ep.measurements[s - 1][env::kIntTheta] : 0.0;
        for (int j = s; j <= i + 1; ++j) {
            env::Measurement& m = relabeled[j - s];
            if (same_ref(orig.phi_ref, orig.theta_ref, ep.measurement_refs[j])) {
                m[env::kErrPhi] = wrap_angle(m[env::kPhi] - goal_phi);
                m[env::kErrTheta] = m[env::kTheta] - goal_theta;
            }
            int_phi = ep.integrator_decay * int_phi + m[env::kErrPhi];
            int_theta = ep.integrator_decay * int_theta + m[env::kErrTheta];
            m[env::kIntPhi] = int_phi;
            m[env::kIntTheta] = int_theta;
        }

        Transition t = orig;
        t.obs.assign(static_cast<std::size_t>(ep.history) * env::kChannels, 0.0);
        for (int slot = 0; slot < ep.history; ++slot) {
            const int idx = std::max(i - slot, 0);
            const auto& m = idx >= s ? relabeled[idx - s] : ep.measurements[idx];
            std::copy(m.begin(), m.end(), t.obs.begin() + slot * env::kChannels);
        }
        t.next = relabeled[i + 1 - s];
        t.phi_ref = goal_phi;
        t.theta_ref = goal_theta;
        t.reward = recompute_reward(t, reward_cfg);
        out.push_back(std::move(t));
    }
    return out;
}

// ---------------------------------------------------------------------------

void TrainerConfig::validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("train.gamma must be in [0, 1)");
    if (lambda_ts < 0 || lambda_ss < 0 || lambda_pa < 0) throw ConfigError("train.lambda_* must be >= 0");
    if (batch_size <= 0) throw ConfigError("train.batch_size must be positive");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("train.tau must be in (0, 1]");
    if (!(her_ratio >= 0.0 && her_ratio <= 1.0)) throw ConfigError("train.her_ratio must be in [0, 1]");
    if (grad_steps_per_env_step < 0) throw ConfigError("train.grad_steps_per_env_step must be >= 0");
    if (prefill < 0) throw ConfigError("train.prefill must be >= 0");
    if (buffer_capacity == 0) throw ConfigError("train.buffer_capacity must be positive");
    if (total_steps < 0) throw ConfigError("train.total_steps must be >= 0");
    if (!(initial_alpha > 0.0)) throw ConfigError("train.initial_alpha must be positive");
    if (!(lr_actor > 0 && lr_critic > 0 && lr_alpha > 0)) throw ConfigError("train learning rates must be positive");
    if (spatial_std < 0) throw ConfigError("train.spatial_std must be >= 0");
}

void TrainerConfig::write_keys(KeyValueFile& kv, std::string_view prefix) const {
    const std::string p(prefix);
    kv.set(p + "gamma", gamma);
    kv.set(p + "lr_actor", lr_actor);
    kv.set(p + "lr_critic", lr_critic);
    kv.set(p + "lr_alpha", lr_alpha);
    kv.set(p + "batch_size", batch_size);
    kv.set(p + "tau", tau);
    kv.set(p + "lambda_ts", lambda_ts);
    kv.set(p + "lambda_ss", lambda_ss);
    kv.set(p + "lambda_pa", lambda_pa);
    kv.set(p + "spatial_std", spatial_std);
    kv.set(p + "her_ratio", her_ratio);
    kv.set(p + "grad_steps_per_env_step", grad_steps_per_env_step);
    kv.set(p + "prefill", prefill);
    kv.set(p + "buffer_capacity", static_cast<long>(buffer_capacity));
    kv.set(p + "total_steps", total_steps);
    std::string cps;
    for (std::size_t i = 0; i < checkpoint_steps.size(); ++i) {
        if (i) cps += ", ";
        cps += std::to_string(checkpoint_steps[i]);
    }
    kv.set(p + "checkpoint_steps", cps);
    kv.set(p + "initial_alpha", initial_alpha);
    kv.set(p + "target_entropy", target_entropy);
    kv.set(p + "auto_alpha", auto_alpha);
    kv.set(p + "log_updates", log_updates);
    kv.set(p + "log_tangent_gains", log_tangent_gains);
}

TrainerConfig TrainerConfig::from_keyvalue(const KeyValueFile& kv, std::string_view prefix) {
    const std::string p(prefix);
    TrainerConfig c;
    c.gamma = kv.get_double(p + "gamma", c.gamma);
    c.lr_actor = kv.get_double(p + "lr_actor", c.lr_actor);
    c.lr_critic = kv.get_double(p + "lr_critic", c.lr_critic);
    c.lr_alpha = kv.get_double(p + "lr_alpha", c.lr_alpha);
    c.batch_size = static_cast<int>(kv.get_int(p + "batch_size", c.batch_size));
    c.tau = kv.get_double(p + "tau", c.tau);
    c.lambda_ts = kv.get_double(p + "lambda_ts", c.lambda_ts);
    c.lambda_ss = kv.get_double(p + "lambda_ss", c.lambda_ss);
    c.lambda_pa = kv.get_double(p + "lambda_pa", c.lambda_pa);
    c.spatial_std = kv.get_double(p + "spatial_std", c.spatial_std);
    c.her_ratio = kv.get_double(p + "her_ratio", c.her_ratio);
    c.grad_steps_per_env_step = static_cast<int>(kv.get_int(p + "grad_steps_per_env_step", c.grad_steps_per_env_step));
    c.prefill = static_cast<int>(kv.get_int(p + "prefill", c.prefill));
    c.buffer_capacity = static_cast<std::size_t>(kv.get_int(p + "buffer_capacity", static_cast<long>(c.buffer_capacity)));
    c.total_steps = kv.get_int(p + "total_steps", c.total_steps);
    if (kv.has(p + "checkpoint_steps")) {
        c.checkpoint_steps.clear();
        std::string s = kv.get_string(p + "checkpoint_steps");
        std::replace(s.begin(), s.end(), ',', ' ');
        std::istringstream is(s);
        std::string tok;
        while (is >> tok) {
            try {
                c.checkpoint_steps.push_back(std::stol(tok));
            } catch (const std::exception&) {
                throw ConfigError("bad value in " + p + "checkpoint_steps: " + tok);
            }
        }
    }
    c.initial_alpha = kv.get_double(p + "initial_alpha", c.initial_alpha);
    c.target_entropy = kv.get_double(p + "target_entropy", c.target_entropy);
    c.auto_alpha = kv.get_bool(p + "auto_alpha", c.auto_alpha);
    c.log_updates = kv.get_bool(p + "log_updates", c.log_updates);
    c.log_tangent_gains = kv.get_bool(p + "log_tangent_gains", c.log_tangent_gains);
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------

SacAgent::SacAgent(const nnet::PolicyConfig& model, const TrainerConfig& cfg, std::uint64_t seed)
    : model_(model), cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    policy_ = nnet::Policy(model_, rng);
    for (int i = 0; i < 2; ++i) {
        critics_[i] = nnet::Critic(model_, rng);
        targets_[i] = critics_[i];
        critic_opt_[i] = nnet::Adam(critics_[i].net().num_params(), {.lr = cfg_.lr_critic});
    }
    policy_opt_ = nnet::Adam(policy_.net().num_params(), {.lr = cfg_.lr_actor});
    alpha_opt_ = nnet::Adam(1, {.lr = cfg_.lr_alpha});
    log_alpha_ = std::log(cfg_.initial_alpha);
}

namespace {

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.normal();
    }
    return m;
}

Matrix stack_rows(const Matrix& top, const Matrix& bottom) {
    Matrix m(top.rows() + bottom.rows(), top.cols());
    m.topRows(top.rows()) = top;
    m.bottomRows(bottom.rows()) = bottom;
    return m;
}

void check_finite(double v, const char* what, long step) {
    if (!std::isfinite(v)) {
        throw NonFiniteLossError(std::string("non-finite ") + what + " loss at update " + std::to_string(step));
    }
}

}  // namespace

env::Action SacAgent::sample_action(std::span<const double> window, Rng& rng) const {
    Matrix obs = Eigen::Map<const Matrix>(window.data(), static_cast<Eigen::Index>(window.size()), 1);
    Matrix noise = normal_matrix(2, 1, rng);
    const auto out = policy_.forward(obs, &noise);
    return {out.action(0, 0), out.action(1, 0)};
}

VectorXd SacAgent::critic_targets(const Matrix& next_obs, const VectorXd& rewards, const VectorXd& not_terminal,
                                  Rng& rng) const {
    const Matrix noise = normal_matrix(2, next_obs.cols(), rng);
    const auto out = policy_.forward(next_obs, &noise);
    const Matrix x = stack_rows(next_obs, out.action);
    const Matrix q1 = targets_[0].forward(x);
    const Matrix q2 = targets_[1].forward(x);
    const double a = alpha();
    VectorXd y(rewards.size());
    for (Eigen::Index j = 0; j < y.size(); ++j) {
        const double v = std::min(q1(0, j), q2(0, j)) - a * out.log_prob(0, j);
        y(j) = rewards(j) + cfg_.gamma * not_terminal(j) * v;
    }
    return y;
}

double SacAgent::critic_step(const Matrix& obs, const Matrix& actions, const VectorXd& targets) {
    const Matrix x = stack_rows(obs, actions);
    const double n = static_cast<double>(obs.cols());
    double loss = 0.0;
    for (int i = 0; i < 2; ++i) {
        nnet::Network::Cache cache;
        const Matrix q = critics_[i].forward(x, &cache);
        const Matrix diff = q - targets.transpose();
        loss += diff.squaredNorm() / n;
        critics_[i].net().zero_grad();
        critics_[i].net().backward(cache, 2.0 * diff / n, true, false);
        critic_opt_[i].step(critics_[i].net().params(), critics_[i].net().grads());
    }
    return 0.5 * loss;
}

LossBreakdown SacAgent::actor_loss(const Matrix& obs, const Matrix& next_obs, const Matrix& perturbed,
                                   const Matrix& noise, double* mean_log_prob) {
    const Eigen::Index B = obs.cols();
    const double inv_b = 1.0 / static_cast<double>(B);
    Matrix x(obs.rows(), 3 * B);
    x.leftCols(B) = obs;
    x.middleCols(B, B) = next_obs;
    x.rightCols(B) = perturbed;
    Matrix noise3 = Matrix::Zero(2, 3 * B);
    noise3.leftCols(B) = noise;

    nnet::Network::Cache cache;
    const nnet::PolicyOutput out = policy_.forward(x, &noise3, &cache);
    const Matrix a = out.action.leftCols(B);

    // -min(Q1, Q2) through the sampled action
    const Matrix xq = stack_rows(obs, a);
    nnet::Network::Cache c1, c2;
    const Matrix q1 = critics_[0].forward(xq, &c1);
    const Matrix q2 = critics_[1].forward(xq, &c2);
    Matrix g1 = Matrix::Zero(1, B), g2 = Matrix::Zero(1, B);
    double min_q_sum = 0.0;
    for (Eigen::Index j = 0; j < B; ++j) {
        if (q1(0, j) <= q2(0, j)) {
            g1(0, j) = -inv_b;
            min_q_sum += q1(0, j);
        } else {
            g2(0, j) = -inv_b;
            min_q_sum += q2(0, j);
        }
    }
    const Matrix dx1 = critics_[0].net().backward(c1, g1, false, true);
    const Matrix dx2 = critics_[1].net().backward(c2, g2, false, true);
    const Matrix dq_da = dx1.bottomRows(2) + dx2.bottomRows(2);

    const double alpha_v = alpha();
    Matrix d_mu = Matrix::Zero(2, 3 * B);
    Matrix d_ls = Matrix::Zero(2, 3 * B);
    double log_prob_sum = 0.0;
    for (Eigen::Index j = 0; j < B; ++j) {
        log_prob_sum += out.log_prob(0, j);
        for (int i = 0; i < 2; ++i) {
            const double ai = out.action(i, j);
            const double sigma_xi = std::exp(out.log_std(i, j)) * out.noise(i, j);
            const double dtanh = 1.0 - ai * ai;
            d_mu(i, j) += dq_da(i, j) * dtanh + alpha_v * inv_b * 2.0 * ai;
            d_ls(i, j) += dq_da(i, j) * dtanh * sigma_xi + alpha_v * inv_b * (-1.0 + 2.0 * ai * sigma_xi);
        }
    }

    LossBreakdown L;
    L.sac = (alpha_v * log_prob_sum - min_q_sum) * inv_b;
    L.entropy = -log_prob_sum * inv_b;

    const Matrix det = out.mu.array().tanh().matrix();
    auto smooth_term = [&](Eigen::Index other_offset, double lambda, double& value) {
        double sum = 0.0;
        for (Eigen::Index j = 0; j < B; ++j) {
            const Eigen::Vector2d d = det.col(j) - det.col(other_offset + j);
            const double norm = d.norm();
            sum += norm;
            if (norm < 1e-12 || lambda == 0.0) continue;
            const Eigen::Vector2d g = lambda * inv_b * d / norm;
            for (int i = 0; i < 2; ++i) {
                d_mu(i, j) += g(i) * (1.0 - det(i, j) * det(i, j));
                const double o = det(i, other_offset + j);
                d_mu(i, other_offset + j) -= g(i) * (1.0 - o * o);
            }
        }
        value = sum * inv_b;
    };
    smooth_term(B, cfg_.lambda_ts, L.ts);
    smooth_term(2 * B, cfg_.lambda_ss, L.ss);

    double pa_sum = 0.0;
    for (Eigen::Index j = 0; j < B; ++j) {
        const Eigen::Vector2d mu = out.mu.col(j);
        const double norm = mu.norm();
        pa_sum += norm;
        if (norm < 1e-12 || cfg_.lambda_pa == 0.0) continue;
        d_mu.col(j) += cfg_.lambda_pa * inv_b * mu / norm;
    }
    L.pa = pa_sum * inv_b;

    policy_.backward(cache, out, d_mu, d_ls);
    if (mean_log_prob) *mean_log_prob = log_prob_sum * inv_b;
    return L;
}

LossBreakdown SacAgent::update(const Matrix& obs, const Matrix& next_obs, const Matrix& actions,
                               const VectorXd& rewards, const VectorXd& not_terminal, Rng& rng) {
    const long step = policy_opt_.steps();
    const VectorXd y = critic_targets(next_obs, rewards, not_terminal, rng);
    const double critic_loss = critic_step(obs, actions, y);
    check_finite(critic_loss, "critic", step);

    Matrix perturbed = obs;
    if (cfg_.spatial_std > 0.0) perturbed += cfg_.spatial_std * normal_matrix(obs.rows(), obs.cols(), rng);
    const Matrix noise = normal_matrix(2, obs.cols(), rng);
    policy_.net().zero_grad();
    double mean_log_prob = 0.0;
    LossBreakdown L = actor_loss(obs, next_obs, perturbed, noise, &mean_log_prob);
    L.critic = critic_loss;
    const double total = L.sac + cfg_.lambda_ts * L.ts + cfg_.lambda_ss * L.ss + cfg_.lambda_pa * L.pa;
    check_finite(total, "actor", step);
    policy_opt_.step(policy_.net().params(), policy_.net().grads());

    if (cfg_.auto_alpha) {
        VectorXd la(1), grad(1);
        la(0) = log_alpha_;
        grad(0) = -(mean_log_prob + cfg_.target_entropy);
        alpha_opt_.step(la, grad);
        log_alpha_ = la(0);
    }
    L.alpha = alpha();

    for (int i = 0; i < 2; ++i) {
        nnet::soft_update(targets_[i].net().params(), critics_[i].net().params(), cfg_.tau);
    }
    return L;
}

// ---------------------------------------------------------------------------

namespace {

Transition make_transition(const std::vector<double>& raw_obs, const env::AttitudeEnv& env,
                           const env::StepResult& r) {
    Transition t;
    t.obs = raw_obs;
    t.next = env.measurement();
    t.action = r.record.action;
    t.reward = r.reward;
    t.terminal = r.terminal;
    t.valid = !r.record.failed;
    t.phi = r.record.state.attitude.x();
    t.theta = r.record.state.attitude.y();
    t.phi_rate = r.record.euler_rate.x();
    t.theta_rate = r.record.euler_rate.y();
    t.phi_ref = r.record.phi_ref;
    t.theta_ref = r.record.theta_ref;
    return t;
}

std::vector<double> copy_window(const env::ObservationWindow& w) {
    return {w.values().begin(), w.values().end()};
}

}  // namespace

void prefill_buffer(env::AttitudeEnv& env, ReplayBuffer& buffer, int n, Rng& rng) {
    if (n <= 0) return;
    env.reset();
    for (int i = 0; i < n; ++i) {
        const env::Action a{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
        const auto raw = copy_window(env.raw_window());
        const auto r = env.step(a);
        buffer.add(make_transition(raw, env, r));
        if (r.done) env.reset();
    }
}

double evaluate_episodes(analysis::Controller* controller, const env::EpisodeConfig& cfg,
                         const dynamics::UavParams& nominal, int episodes, std::uint64_t seed, int* terminations) {
    env::AttitudeEnv env(cfg, nominal, seed);
    Rng rng(seed ^ 0x5eedULL);
    double sum = 0.0;
    int term = 0;
    for (int e = 0; e < episodes; ++e) {
        env.reset();
        if (controller) controller->reset();
        bool failed = false;
        while (!env.done()) {
            const env::Action a = controller ? controller->act(env)
                                             : env::Action{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
            const auto r = env.step(a);
            failed = failed || r.terminal;
        }
        if (failed) ++term;
        sum += env.normalized_return();
    }
    if (terminations) *terminations = term;
    return episodes > 0 ? sum / episodes : 0.0;
}

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

PolicyCheckpoint snapshot(const SacAgent& agent, const env::AttitudeEnv& env, long step, std::uint64_t seed) {
    PolicyCheckpoint ck;
    ck.policy = agent.policy();
    ck.normalizer = env.normalizer();
    ck.normalizer.set_frozen(true);
    ck.env_steps = step;
    ck.seed = seed;
    return ck;
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpisodeMetrics>& rows) {
    std::ofstream f(path);
    if (!f) throw Error("cannot write " + path.string());
    f << "step,episode,normalized_reward,length,critic_loss,j_sac,j_ts,j_ss,j_pa,alpha,entropy";
    for (const char* n : analysis::GainTable::kNames) f << ',' << n;
    f << '\n';
    for (const auto& r : rows) {
        f << r.step << ',' << r.episode << ',' << fmt(r.normalized_reward) << ',' << r.length << ','
          << fmt(r.loss.critic) << ',' << fmt(r.loss.sac) << ',' << fmt(r.loss.ts) << ',' << fmt(r.loss.ss) << ','
          << fmt(r.loss.pa) << ',' << fmt(r.loss.alpha) << ',' << fmt(r.loss.entropy);
        for (double g : r.gains.as_array()) f << ',' << fmt(g);
        f << '\n';
    }
}

TrainResult train(const env::EpisodeConfig& env_cfg_in, const dynamics::UavParams& nominal,
                  const nnet::PolicyConfig& model, const TrainerConfig& cfg, const TrainOptions& options) {
    cfg.validate();
    model.validate();
#if defined(__GLIBC__)
    // batch temporaries are reallocated every update; keep them off mmap
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
    env::EpisodeConfig env_cfg = env_cfg_in;
    env_cfg.history = model.history;
    env_cfg.discount = cfg.gamma;

    Rng root(options.seed);
    const std::uint64_t env_seed = root.next_u64();
    const std::uint64_t agent_seed = root.next_u64();
    Rng prefill_rng = root.split();
    Rng act_rng = root.split();
    Rng sample_rng = root.split();
    Rng update_rng = root.split();
    Rng her_rng = root.split();

    env::AttitudeEnv env(env_cfg, nominal, env_seed);
    SacAgent agent(model, cfg, agent_seed);
    ReplayBuffer buffer(cfg.buffer_capacity, model.obs_size());
    const bool write = !options.out_dir.empty();
    if (write) std::filesystem::create_directories(options.out_dir);

    TrainResult result;
    auto save_checkpoint = [&](long step) {
        if (!write) return;
        const auto path = options.out_dir / ("policy_" + std::to_string(step) + ".bin");
        snapshot(agent, env, step, options.seed).save(path);
        result.checkpoints.push_back(path);
    };

    prefill_buffer(env, buffer, cfg.prefill, prefill_rng);
    if (cfg.total_steps == 0) {
        save_checkpoint(0);
        if (write) write_metrics_csv(options.out_dir / "metrics.csv", result.episodes);
        return result;
    }

    const env::Measurement anchor = analysis::level_flight_anchor(nominal, env_cfg.trim_airspeed);
    const auto ranges = analysis::default_channel_ranges();

    std::ofstream updates;
    if (write && cfg.log_updates) {
        updates.open(options.out_dir / "updates.csv");
        updates << "update,step,critic_loss,j_sac,j_ts,j_ss,j_pa,alpha,entropy\n";
    }

    EpisodeLog log;
    log.history = model.history;
    log.integrator_decay = env_cfg.integrator_decay;
    auto begin_episode = [&]() {
        env.reset();
        log.clear();
        log.measurements.push_back(env.measurement());
        log.measurement_refs.push_back(env.reference());
    };
    begin_episode();

    LossBreakdown acc;
    int acc_n = 0;
    long episode = 0;
    long updates_done = 0;
    std::vector<std::size_t> idx(cfg.batch_size);
    Matrix obs, next_obs, actions, obs_n, next_n;
    VectorXd rewards, not_terminal;

    for (long step = 1; step <= cfg.total_steps; ++step) {
        const env::Action a = agent.sample_action(env.window().values(), act_rng);
        const auto raw = copy_window(env.raw_window());
        const auto r = env.step(a);
        Transition t = make_transition(raw, env, r);
        buffer.add(t);
        log.transitions.push_back(std::move(t));
        log.measurements.push_back(env.measurement());
        log.measurement_refs.push_back(env.reference());

        if (buffer.size() >= static_cast<std::size_t>(cfg.batch_size)) {
            for (int g = 0; g < cfg.grad_steps_per_env_step; ++g) {
                for (auto& i : idx) i = buffer.sample_index(sample_rng);
                buffer.gather(idx, obs, next_obs, actions, rewards, not_terminal);
                obs_n.resize(obs.rows(), obs.cols());
                next_n.resize(next_obs.rows(), next_obs.cols());
                const auto& norm = env.normalizer();
                norm.normalize({obs.data(), static_cast<std::size_t>(obs.size())},
                               {obs_n.data(), static_cast<std::size_t>(obs_n.size())});
                norm.normalize({next_obs.data(), static_cast<std::size_t>(next_obs.size())},
                               {next_n.data(), static_cast<std::size_t>(next_n.size())});
                const LossBreakdown L = agent.update(obs_n, next_n, actions, rewards, not_terminal, update_rng);
                ++updates_done;
                acc.critic += L.critic;
                acc.sac += L.sac;
                acc.ts += L.ts;
                acc.ss += L.ss;
                acc.pa += L.pa;
                acc.entropy += L.entropy;
                acc.alpha = L.alpha;
                ++acc_n;
                if (updates.is_open()) {
                    updates << updates_done << ',' << step << ',' << fmt(L.critic) << ',' << fmt(L.sac) << ','
                            << fmt(L.ts) << ',' << fmt(L.ss) << ',' << fmt(L.pa) << ',' << fmt(L.alpha) << ','
                            << fmt(L.entropy) << '\n';
                }
            }
        }

        if (r.done) {
            for (auto& h : her_relabel(log, her_rng, cfg.her_ratio, env_cfg.reward)) buffer.add(h);
            EpisodeMetrics m;
            m.step = step;
            m.episode = ++episode;
            m.normalized_reward = env.normalized_return();
            m.length = env.step_count();
            if (acc_n > 0) {
                m.loss = acc;
                m.loss.critic /= acc_n;
                m.loss.sac /= acc_n;
                m.loss.ts /= acc_n;
                m.loss.ss /= acc_n;
                m.loss.pa /= acc_n;
                m.loss.entropy /= acc_n;
            }
            m.loss.alpha = agent.alpha();
            if (cfg.log_tangent_gains) {
                const analysis::PolicyController probe(snapshot(agent, env, step, options.seed),
                                                      env_cfg.action_scale);
                m.gains = analysis::tangent_gains(probe, anchor, ranges);
            }
            result.episodes.push_back(m);
            if (options.on_episode) options.on_episode(m);
            acc = LossBreakdown{};
            acc_n = 0;
            begin_episode();
        }

        if (std::find(cfg.checkpoint_steps.begin(), cfg.checkpoint_steps.end(), step) != cfg.checkpoint_steps.end()) {
            save_checkpoint(step);
        }
    }
    if (write) {
        if (std::find(cfg.checkpoint_steps.begin(), cfg.checkpoint_steps.end(), cfg.total_steps) ==
            cfg.checkpoint_steps.end()) {
            save_checkpoint(cfg.total_steps);
        }
        write_metrics_csv(options.out_dir / "metrics.csv", result.episodes);
    }
    return result;
}

// ---------------------------------------------------------------------------

std::vector<AggregateRow> aggregate_seeds(const std::vector<std::vector<EpisodeMetrics>>& runs, long bin) {
    if (bin <= 0) throw Error("aggregate_seeds: bin must be positive");
    long max_step = 0;
    for (const auto& r : runs) {
        for (const auto& m : r) max_step = std::max(max_step, m.step);
    }
    std::vector<AggregateRow> rows;
    for (long edge = bin; edge < max_step + bin; edge += bin) {
        std::vector<double> values;
        for (const auto& run : runs) {
            double sum = 0.0;
            int n = 0;
            for (const auto& m : run) {
                if (m.step > edge - bin && m.step <= edge) {
                    sum += m.normalized_reward;
                    ++n;
                }
            }
            if (n > 0) values.push_back(sum / n);
        }
        AggregateRow row;
        row.step = edge;
        row.seeds = static_cast<int>(values.size());
        if (!values.empty()) {
            double mean = 0.0;
            for (double v : values) mean += v;
            mean /= static_cast<double>(values.size());
            double var = 0.0;
            for (double v : values) var += (v - mean) * (v - mean);
            row.mean = mean;
            row.std = std::sqrt(var / static_cast<double>(values.size()));
        }
        rows.push_back(row);
    }
    return rows;
}

void write_aggregate_csv(const std::filesystem::path& path, const std::vector<AggregateRow>& rows) {
    std::ofstream f(path);
    if (!f) throw Error("cannot write " + path.string());
    f << "step,mean_normalized_reward,std,seeds\n";
    for (const auto& r : rows) f << r.step << ',' << fmt(r.mean) << ',' << fmt(r.std) << ',' << r.seeds << '\n';
}

}  // namespace fwrl::sac
