#pragma once

/**
 * @file nnet.hpp
 * @brief Small feed-forward networks with hand-written reverse mode.
 *
 * Activations are column-major matrices with one column per sample.
 * Parameters of a network live in one flat vector with a paired gradient
 * vector of identical layout, which is what the optimizer works on.
 */

#include "fwrl/common.hpp"
#include "fwrl/keyvalue.hpp"

#include <filesystem>
#include <array>
#include <iosfwd>
#include <span>
#include <vector>

namespace fwrl::nnet {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { kNone, kRelu, kTanh };
enum class LayerKind { kDense, kConvHistory };

/**
 * Dense: y = W x + b, W stored column-major then b.
 *
 * ConvHistory: input is a window of `history` slots of `channels` values
 * (slot-major). Each of `filters` kernels spans the whole window and is
 * shared across channels:
 *   y[f * channels + c] = sum_k w_f[k] x[k * channels + c] + b_f
 * W (filters x history, column-major) then b.
 */
struct LayerSpec {
    LayerKind kind = LayerKind::kDense;
    int in = 0;
    int out = 0;
    int history = 0;
    int channels = 0;
    int filters = 0;
    Activation activation = Activation::kNone;

    static LayerSpec dense(int in, int out, Activation act);
    static LayerSpec conv(int history, int channels, int filters, Activation act);
    int param_count() const;
    int fan_in() const { return kind == LayerKind::kDense ? in : history; }
    bool operator==(const LayerSpec&) const = default;
};

class Network {
public:
    struct Cache {
        std::vector<Matrix> pre;   ///< pre-activation of each layer
        std::vector<Matrix> post;  ///< post[0] is the input, post[i+1] the output of layer i
    };

    Network() = default;
    explicit Network(std::vector<LayerSpec> layers);

    int input_size() const;
    int output_size() const;
    int num_params() const { return static_cast<int>(params_.size()); }
    const std::vector<LayerSpec>& layers() const { return layers_; }
    int offset(int layer) const { return offsets_[layer]; }

    Vector& params() { return params_; }
    const Vector& params() const { return params_; }
    Vector& grads() { return grads_; }
    const Vector& grads() const { return grads_; }
    void zero_grad() { grads_.setZero(); }

    /// Uniform(+-1/sqrt(fan_in)) weights and biases; the last layer is
    /// additionally multiplied by `final_scale`.
    void init(Rng& rng, double final_scale = 1.0);

    Matrix forward(const Matrix& x, Cache* cache = nullptr) const;

    /// Back-propagates dL/d(output). Parameter gradients are accumulated into
    /// grads() when `param_grads` is set. Returns dL/d(input) (empty when
    /// `input_grad` is false).
    Matrix backward(const Cache& cache, const Matrix& grad_out, bool param_grads = true,
                    bool input_grad = true);

private:
    std::vector<LayerSpec> layers_;
    std::vector<int> offsets_;
    Vector params_;
    Vector grads_;
};

/// Reference loop implementation of the ConvHistory layer (no activation).
Vector conv_history_naive(const Vector& window, const Matrix& weights, const Vector& bias,
                          int history, int channels);

// ---------------------------------------------------------------------------
// Policy and critic

enum class InputLayer { kConv, kDense };

struct PolicyConfig {
    InputLayer input = InputLayer::kConv;
    int history = 10;
    int channels = 14;
    int filters = 8;
    int dense_input_width = 112;  ///< width of the dense replacement input layer
    int hidden = 64;
    int hidden_layers = 2;
    double log_std_min = -20.0;
    double log_std_max = 2.0;
    double final_scale = 0.01;
    int action_dim = 2;

    int obs_size() const { return history * channels; }
    void write_keys(KeyValueFile& kv, std::string_view prefix = "model.") const;
    static PolicyConfig from_keyvalue(const KeyValueFile& kv, std::string_view prefix = "model.");
    void validate() const;
    bool operator==(const PolicyConfig&) const = default;
};

std::vector<LayerSpec> policy_layers(const PolicyConfig& cfg);
std::vector<LayerSpec> critic_layers(const PolicyConfig& cfg);

/// One batched policy evaluation.
struct PolicyOutput {
    Matrix mu;        ///< pre-activation mean (action_dim x B)
    Matrix log_std;   ///< clamped
    Matrix raw_log_std;
    Matrix noise;     ///< xi; zero in deterministic mode
    Matrix pre;       ///< mu + sigma * xi
    Matrix action;    ///< tanh(pre)
    Matrix log_prob;  ///< 1 x B, includes the tanh correction
};

/// log(1 - tanh(u)^2) evaluated without cancellation.
double log1m_tanh2(double u);

/// Squashed-Gaussian density of action a (1-D) for mean mu and std sigma.
double squashed_gaussian_density(double a, double mu, double sigma);

class Policy {
public:
    Policy() = default;
    Policy(const PolicyConfig& cfg, Rng& rng);

    /// `noise` (action_dim x B) selects stochastic mode; nullptr gives tanh(mu).
    PolicyOutput forward(const Matrix& obs, const Matrix* noise, Network::Cache* cache = nullptr) const;

    /// Accumulates parameter gradients given dL/dmu and dL/d(clamped log std).
    void backward(const Network::Cache& cache, const PolicyOutput& out, const Matrix& d_mu,
                  const Matrix& d_log_std);

    /// Deterministic action for one normalized window.
    std::array<double, 2> act(std::span<const double> window) const;

    const PolicyConfig& config() const { return cfg_; }
    Network& net() { return net_; }
    const Network& net() const { return net_; }

private:
    PolicyConfig cfg_;
    Network net_;
};

/// Q(s, a) network on the flattened window concatenated with the action.
class Critic {
public:
    Critic() = default;
    Critic(const PolicyConfig& cfg, Rng& rng);

    Matrix forward(const Matrix& obs_action, Network::Cache* cache = nullptr) const;
    Network& net() { return net_; }
    const Network& net() const { return net_; }

private:
    Network net_;
};

// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam() = default;
    Adam(int n, AdamConfig cfg) : cfg_(cfg), m_(Vector::Zero(n)), v_(Vector::Zero(n)) {}
    void step(Vector& params, const Vector& grads);
    long steps() const { return t_; }

private:
    AdamConfig cfg_;
    Vector m_;
    Vector v_;
    long t_ = 0;
};

/// Polyak averaging: target <- (1 - tau) target + tau source.
void soft_update(Vector& target, const Vector& source, double tau);

// ---------------------------------------------------------------------------
// Weight files

class FormatError : public Error {
public:
    using Error::Error;
};

/**
 * Binary layout: 8-byte magic "FWRLNET\0", u32 format version, u64 header
 * length, key=value text header, u64 vector count, then for each vector a
 * u64 length followed by 64-bit little-endian doubles.
 */
struct WeightFile {
    static constexpr std::uint32_t kVersion = 1;
    KeyValueFile header;
    std::vector<Vector> vectors;

    void save(const std::filesystem::path& path) const;
    static WeightFile load(const std::filesystem::path& path);
};

}  // namespace fwrl::nnet
