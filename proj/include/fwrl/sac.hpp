#pragma once

/**
 * @file sac.hpp
 * @brief Soft actor-critic with twin critics, automatic entropy tuning,
 * hindsight relabeling and the smoothness-regularized actor objective
 *   J = J_sac + l_ts ||pi(s) - pi(s')|| + l_ss ||pi(s) - pi(s_hat)|| + l_pa ||pi_pa(s)||.
 */

#include "fwrl/analysis.hpp"
#include "fwrl/checkpoint.hpp"
#include "fwrl/env.hpp"
#include "fwrl/nnet.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace fwrl::sac {

/// One environment transition. Windows are stored raw (not normalized).
struct Transition {
    std::vector<double> obs;         ///< raw observation window, newest slot first
    env::Measurement next{};         ///< raw measurement after the step
    env::Action action{};
    double reward = 0;
    bool terminal = false;           ///< failure termination; no bootstrap
    bool valid = true;               ///< false when the step itself failed (reward forced to 0)
    double phi = 0, theta = 0;       ///< achieved attitude after the step (true state)
    double phi_rate = 0, theta_rate = 0;
    double phi_ref = 0, theta_ref = 0;
};

/// Reward recomputed from the stored achieved state and reference.
double recompute_reward(const Transition& t, const env::RewardConfig& cfg);

class ReplayBuffer {
public:
    ReplayBuffer(std::size_t capacity, int obs_size);

    void add(const Transition& t);
    std::size_t size() const { return size_; }
    std::size_t capacity() const { return capacity_; }
    int obs_size() const { return obs_size_; }
    Transition get(std::size_t i) const;
    std::size_t sample_index(Rng& rng) const;

    /// Raw windows for the sampled indices: obs and next obs (obs_size x B).
    void gather(const std::vector<std::size_t>& idx, nnet::Matrix& obs, nnet::Matrix& next_obs,
                nnet::Matrix& actions, Eigen::VectorXd& rewards, Eigen::VectorXd& not_terminal) const;

private:
    std::size_t capacity_;
    int obs_size_;
    std::size_t size_ = 0;
    std::size_t head_ = 0;
    std::vector<double> obs_;
    std::vector<double> next_;
    std::vector<Transition> meta_;  ///< per-slot scalars; obs kept in the flat arrays
};

/// Everything needed to relabel a finished episode.
struct EpisodeLog {
    std::vector<env::Measurement> measurements;  ///< m_0 .. m_n
    std::vector<env::Reference> measurement_refs;  ///< reference each measurement was formed with
    std::vector<Transition> transitions;          ///< n transitions
    int history = 10;
    double integrator_decay = 0.99;

    void clear();
    /// Raw window ending at measurement index i (older slots clamp to m_0).
    std::vector<double> window(int i) const;
};

/**
 * Hindsight relabeling, "future within segment": each transition is picked
 * with probability `ratio`; its goal becomes the achieved attitude of a
 * uniformly drawn step k >= i of the same reference segment. Error channels of
 * every window slot formed under that segment's reference are recomputed
 * from the stored noisy attitude, and the integrators are re-accumulated from
 * the segment start.
 */
std::vector<Transition> her_relabel(const EpisodeLog& episode, Rng& rng, double ratio,
                                    const env::RewardConfig& reward_cfg);

struct TrainerConfig {
    double gamma = 0.99;
    double lr_actor = 3e-4;
    double lr_critic = 3e-4;
    double lr_alpha = 3e-4;
    int batch_size = 256;
    double tau = 5e-3;
    double lambda_ts = 5e-2;
    double lambda_ss = 1e-1;
    double lambda_pa = 1e-4;
    double spatial_std = 0.1;
    double her_ratio = 0.4;
    int grad_steps_per_env_step = 1;
    int prefill = 5000;
    std::size_t buffer_capacity = 100000;
    long total_steps = 40000;
    std::vector<long> checkpoint_steps = {10000, 40000};
    double initial_alpha = 0.2;
    double target_entropy = -2.0;
    bool auto_alpha = true;
    bool log_updates = false;       ///< per-update loss CSV
    bool log_tangent_gains = true;  ///< probe tangent gains at every episode end

    void validate() const;
    void write_keys(KeyValueFile& kv, std::string_view prefix = "train.") const;
    static TrainerConfig from_keyvalue(const KeyValueFile& kv, std::string_view prefix = "train.");
    bool operator==(const TrainerConfig&) const = default;
};

struct LossBreakdown {
    double critic = 0;
    double sac = 0;
    double ts = 0;
    double ss = 0;
    double pa = 0;
    double alpha = 0;
    double entropy = 0;  ///< -mean log pi
};

class NonFiniteLossError : public Error {
public:
    using Error::Error;
};

/// Per-episode training metrics row.
struct EpisodeMetrics {
    long step = 0;  ///< env steps after prefill at episode end
    long episode = 0;
    double normalized_reward = 0;
    int length = 0;
    LossBreakdown loss;  ///< mean over the updates made during the episode
    analysis::GainTable gains;
};

class SacAgent {
public:
    SacAgent(const nnet::PolicyConfig& model, const TrainerConfig& cfg, std::uint64_t seed);

    nnet::Policy& policy() { return policy_; }
    const nnet::Policy& policy() const { return policy_; }
    nnet::Critic& critic(int i) { return critics_[i]; }
    nnet::Critic& target(int i) { return targets_[i]; }
    double alpha() const { return std::exp(log_alpha_); }
    void set_alpha(double a) { log_alpha_ = std::log(a); }
    TrainerConfig& config() { return cfg_; }

    /// Stochastic action for one normalized window.
    env::Action sample_action(std::span<const double> window, Rng& rng) const;

    /// Critic targets for a normalized batch (used by the update and by tests).
    Eigen::VectorXd critic_targets(const nnet::Matrix& next_obs, const Eigen::VectorXd& rewards,
                                   const Eigen::VectorXd& not_terminal, Rng& rng) const;

    /// One critic step toward fixed targets; returns the mean squared error before the step.
    double critic_step(const nnet::Matrix& obs, const nnet::Matrix& actions, const Eigen::VectorXd& targets);

    /**
     * Actor objective and its gradient (accumulated into the policy grads).
     * `noise` is the reparameterization noise for the B stochastic samples.
     */
    LossBreakdown actor_loss(const nnet::Matrix& obs, const nnet::Matrix& next_obs,
                             const nnet::Matrix& perturbed_obs, const nnet::Matrix& noise,
                             double* mean_log_prob = nullptr);

    /// One full update on a normalized batch.
    LossBreakdown update(const nnet::Matrix& obs, const nnet::Matrix& next_obs, const nnet::Matrix& actions,
                         const Eigen::VectorXd& rewards, const Eigen::VectorXd& not_terminal, Rng& rng);

private:
    nnet::PolicyConfig model_;
    TrainerConfig cfg_;
    nnet::Policy policy_;
    nnet::Critic critics_[2];
    nnet::Critic targets_[2];
    nnet::Adam policy_opt_;
    nnet::Adam critic_opt_[2];
    nnet::Adam alpha_opt_;
    double log_alpha_ = 0;
};

/// Fills the buffer with `n` uniform-random-action transitions (no relabeling).
void prefill_buffer(env::AttitudeEnv& env, ReplayBuffer& buffer, int n, Rng& rng);

struct TrainResult {
    std::vector<EpisodeMetrics> episodes;
    std::vector<std::filesystem::path> checkpoints;
    double random_baseline = 0;
};

struct TrainOptions {
    std::filesystem::path out_dir;  ///< empty: nothing written
    std::uint64_t seed = 1;
    std::function<void(const EpisodeMetrics&)> on_episode;
};

/**
 * Full training run: prefill, then one environment step followed by
 * `grad_steps_per_env_step` updates per step. Checkpoints
 * (`policy_<steps>.bin`), `metrics.csv` and optionally `updates.csv` are
 * written to out_dir.
 */
TrainResult train(const env::EpisodeConfig& env_cfg, const dynamics::UavParams& nominal,
                  const nnet::PolicyConfig& model, const TrainerConfig& cfg, const TrainOptions& options);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpisodeMetrics>& rows);

/// Mean normalized episode return of a policy over `episodes` random episodes.
/// A null controller means uniform-random actions.
double evaluate_episodes(analysis::Controller* controller, const env::EpisodeConfig& cfg,
                         const dynamics::UavParams& nominal, int episodes, std::uint64_t seed,
                         int* terminations = nullptr);

/// Normalized reward curves of several seeds binned on a common step grid.
struct AggregateRow {
    long step = 0;
    double mean = 0;
    double std = 0;
    int seeds = 0;
};
std::vector<AggregateRow> aggregate_seeds(const std::vector<std::vector<EpisodeMetrics>>& runs, long bin);
void write_aggregate_csv(const std::filesystem::path& path, const std::vector<AggregateRow>& rows);

}  // namespace fwrl::sac
