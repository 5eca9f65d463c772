#include "fwrl/nnet.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace fwrl::nnet {

LayerSpec LayerSpec::dense(int in, int out, Activation act) {
    LayerSpec s;
    s.kind = LayerKind::kDense;
    s.in = in;
    s.out = out;
    s.activation = act;
    return s;
}

LayerSpec LayerSpec::conv(int history, int channels, int filters, Activation act) {
    LayerSpec s;
    s.kind = LayerKind::kConvHistory;
    s.in = history * channels;
    s.out = filters * channels;
    s.history = history;
    s.channels = channels;
    s.filters = filters;
    s.activation = act;
    return s;
}

int LayerSpec::param_count() const {
    if (kind == LayerKind::kDense) return out * in + out;
    return filters * (history + 1);
}

Network::Network(std::vector<LayerSpec> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw Error("Network: no layers");
    int total = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (i > 0 && layers_[i].in != layers_[i - 1].out) throw Error("Network: layer size mismatch");
        offsets_.push_back(total);
        total += layers_[i].param_count();
    }
    params_ = Vector::Zero(total);
    grads_ = Vector::Zero(total);
}

int Network::input_size() const { return layers_.front().in; }
int Network::output_size() const { return layers_.back().out; }

void Network::init(Rng& rng, double final_scale) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(layers_[i].fan_in()));
        const double scale = i + 1 == layers_.size() ? final_scale : 1.0;
        for (int k = 0; k < layers_[i].param_count(); ++k) {
            params_(offsets_[i] + k) = scale * rng.uniform(-bound, bound);
        }
    }
    grads_.setZero();
}

namespace {

void activate(Activation act, const Matrix& z, Matrix& a) {
    switch (act) {
        case Activation::kNone: a = z; break;
        case Activation::kRelu: a = z.cwiseMax(0.0); break;
        case Activation::kTanh: a = z.array().tanh().matrix(); break;
    }
}

// g <- g * act'(z), using the cached output a where convenient.
void activation_backward(Activation act, const Matrix& z, const Matrix& a, Matrix& g) {
    switch (act) {
        case Activation::kNone: break;
        case Activation::kRelu: g = (z.array() > 0.0).select(g, 0.0); break;
        case Activation::kTanh: g.array() *= 1.0 - a.array().square(); break;
    }
}

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;

}  // namespace

Matrix Network::forward(const Matrix& x, Cache* cache) const {
    if (x.rows() != input_size()) throw Error("Network::forward: input size mismatch");
    if (cache) {
        cache->pre.resize(layers_.size());
        cache->post.resize(layers_.size() + 1);
        cache->post[0] = x;
    }
    Matrix a = x;
    Matrix z;
    const double* p = params_.data();
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const LayerSpec& L = layers_[i];
        const double* lp = p + offsets_[i];
        if (L.kind == LayerKind::kDense) {
            ConstMap W(lp, L.out, L.in);
            Eigen::Map<const Vector> b(lp + L.out * L.in, L.out);
            z.noalias() = W * a;
            z.colwise() += b;
        } else {
            ConstMap W(lp, L.filters, L.history);
            Eigen::Map<const Vector> b(lp + L.filters * L.history, L.filters);
            z.resize(L.out, a.cols());
            for (Eigen::Index j = 0; j < a.cols(); ++j) {
                ConstMap X(a.col(j).data(), L.channels, L.history);
                MutMap Y(z.col(j).data(), L.channels, L.filters);
                Y.noalias() = X * W.transpose();
                Y.rowwise() += b.transpose();
            }
        }
        Matrix next;
        activate(L.activation, z, next);
        if (cache) {
            cache->pre[i] = z;
            cache->post[i + 1] = next;
        }
        a = std::move(next);
    }
    return a;
}

Matrix Network::backward(const Cache& cache, const Matrix& grad_out, bool param_grads, bool input_grad) {
    if (cache.post.size() != layers_.size() + 1) throw Error("Network::backward: cache mismatch");
    Matrix g = grad_out;
    const double* p = params_.data();
    for (std::size_t ii = layers_.size(); ii-- > 0;) {
        const LayerSpec& L = layers_[ii];
        activation_backward(L.activation, cache.pre[ii], cache.post[ii + 1], g);
        const Matrix& a = cache.post[ii];
        const double* lp = p + offsets_[ii];
        double* gp = grads_.data() + offsets_[ii];
        const bool need_input = ii > 0 || input_grad;
        Matrix g_prev;
        if (L.kind == LayerKind::kDense) {
            ConstMap W(lp, L.out, L.in);
            if (param_grads) {
                MutMap dW(gp, L.out, L.in);
                Eigen::Map<Vector> db(gp + L.out * L.in, L.out);
                dW.noalias() += g * a.transpose();
                db += g.rowwise().sum();
            }
            if (need_input) g_prev.noalias() = W.transpose() * g;
        } else {
            ConstMap W(lp, L.filters, L.history);
            if (need_input) g_prev.resize(L.in, g.cols());
            Eigen::MatrixXd dW = Eigen::MatrixXd::Zero(L.filters, L.history);
            Vector db = Vector::Zero(L.filters);
            for (Eigen::Index j = 0; j < g.cols(); ++j) {
                ConstMap dY(g.col(j).data(), L.channels, L.filters);
                ConstMap X(a.col(j).data(), L.channels, L.history);
                if (param_grads) {
                    dW.noalias() += dY.transpose() * X;
                    db += dY.colwise().sum().transpose();
                }
                if (need_input) {
                    MutMap dX(g_prev.col(j).data(), L.channels, L.history);
                    dX.noalias() = dY * W;
                }
            }
            if (param_grads) {
                MutMap(gp, L.filters, L.history) += dW;
                Eigen::Map<Vector>(gp + L.filters * L.history, L.filters) += db;
            }
        }
        if (!need_input) return Matrix();
        g = std::move(g_prev);
    }
    return g;
}

Vector conv_history_naive(const Vector& window, const Matrix& weights, const Vector& bias, int history,
                          int channels) {
    if (window.size() != history * channels) throw Error("conv_history_naive: window shape mismatch");
    if (weights.cols() != history || bias.size() != weights.rows()) {
        throw Error("conv_history_naive: filter shape mismatch");
    }
    const int filters = static_cast<int>(weights.rows());
    Vector out(filters * channels);
    for (int f = 0; f < filters; ++f) {
        for (int c = 0; c < channels; ++c) {
            double acc = bias(f);
            for (int k = 0; k < history; ++k) acc += weights(f, k) * window(k * channels + c);
            out(f * channels + c) = acc;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

void PolicyConfig::validate() const {
    if (history <= 0 || channels <= 0) throw ConfigError("model: history and channels must be positive");
    if (input == InputLayer::kConv && filters <= 0) throw ConfigError("model.filters must be positive");
    if (input == InputLayer::kDense && dense_input_width <= 0) {
        throw ConfigError("model.dense_input_width must be positive");
    }
    if (hidden <= 0 || hidden_layers < 0) throw ConfigError("model: bad hidden layer spec");
    if (!(log_std_min < log_std_max)) throw ConfigError("model: log_std_min must be < log_std_max");
    if (action_dim != 2) throw ConfigError("model.action_dim must be 2");
}

void PolicyConfig::write_keys(KeyValueFile& kv, std::string_view prefix) const {
    const std::string p(prefix);
    kv.set(p + "input", input == InputLayer::kConv ? "conv" : "dense");
    kv.set(p + "history", history);
    kv.set(p + "channels", channels);
    kv.set(p + "filters", filters);
    kv.set(p + "dense_input_width", dense_input_width);
    kv.set(p + "hidden", hidden);
    kv.set(p + "hidden_layers", hidden_layers);
    kv.set(p + "log_std_min", log_std_min);
    kv.set(p + "log_std_max", log_std_max);
    kv.set(p + "final_scale", final_scale);
}

PolicyConfig PolicyConfig::from_keyvalue(const KeyValueFile& kv, std::string_view prefix) {
    const std::string p(prefix);
    PolicyConfig c;
    const std::string input = kv.get_string(p + "input", "conv");
    if (input == "conv") {
        c.input = InputLayer::kConv;
    } else if (input == "dense") {
        c.input = InputLayer::kDense;
    } else {
        throw ConfigError("model.input must be 'conv' or 'dense', got '" + input + "'");
    }
    c.history = static_cast<int>(kv.get_int(p + "history", c.history));
    c.channels = static_cast<int>(kv.get_int(p + "channels", c.channels));
    c.filters = static_cast<int>(kv.get_int(p + "filters", c.filters));
    c.dense_input_width = static_cast<int>(kv.get_int(p + "dense_input_width", c.dense_input_width));
    c.hidden = static_cast<int>(kv.get_int(p + "hidden", c.hidden));
    c.hidden_layers = static_cast<int>(kv.get_int(p + "hidden_layers", c.hidden_layers));
    c.log_std_min = kv.get_double(p + "log_std_min", c.log_std_min);
    c.log_std_max = kv.get_double(p + "log_std_max", c.log_std_max);
    c.final_scale = kv.get_double(p + "final_scale", c.final_scale);
    c.validate();
    return c;
}

std::vector<LayerSpec> policy_layers(const PolicyConfig& cfg) {
    std::vector<LayerSpec> layers;
    if (cfg.input == InputLayer::kConv) {
        layers.push_back(LayerSpec::conv(cfg.history, cfg.channels, cfg.filters, Activation::kNone));
    } else {
        layers.push_back(LayerSpec::dense(cfg.obs_size(), cfg.dense_input_width, Activation::kNone));
    }
    int width = layers.back().out;
    for (int i = 0; i < cfg.hidden_layers; ++i) {
        layers.push_back(LayerSpec::dense(width, cfg.hidden, Activation::kRelu));
        width = cfg.hidden;
    }
    layers.push_back(LayerSpec::dense(width, 2 * cfg.action_dim, Activation::kNone));
    return layers;
}

std::vector<LayerSpec> critic_layers(const PolicyConfig& cfg) {
    std::vector<LayerSpec> layers;
    int width = cfg.obs_size() + cfg.action_dim;
    for (int i = 0; i < cfg.hidden_layers; ++i) {
        layers.push_back(LayerSpec::dense(width, cfg.hidden, Activation::kRelu));
        width = cfg.hidden;
    }
    layers.push_back(LayerSpec::dense(width, 1, Activation::kNone));
    return layers;
}

double log1m_tanh2(double u) {
    // log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u))
    const double x = -2.0 * u;
    const double softplus = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    return 2.0 * (std::log(2.0) - u - softplus);
}

double squashed_gaussian_density(double a, double mu, double sigma) {
    if (!(a > -1.0 && a < 1.0)) return 0.0;
    const double u = std::atanh(a);
    const double z = (u - mu) / sigma;
    const double gauss = std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * kPi));
    return gauss / (1.0 - a * a);
}

Policy::Policy(const PolicyConfig& cfg, Rng& rng) : cfg_(cfg), net_(policy_layers(cfg)) {
    cfg_.validate();
    net_.init(rng, cfg_.final_scale);
}

PolicyOutput Policy::forward(const Matrix& obs, const Matrix* noise, Network::Cache* cache) const {
    const Matrix head = net_.forward(obs, cache);
    const int d = cfg_.action_dim;
    const Eigen::Index n = obs.cols();
    PolicyOutput out;
    out.mu = head.topRows(d);
    out.raw_log_std = head.bottomRows(d);
    out.log_std = out.raw_log_std.cwiseMax(cfg_.log_std_min).cwiseMin(cfg_.log_std_max);
    if (noise) {
        if (noise->rows() != d || noise->cols() != n) throw Error("Policy::forward: noise shape mismatch");
        out.noise = *noise;
    } else {
        out.noise = Matrix::Zero(d, n);
    }
    out.pre = out.mu.array() + out.log_std.array().exp() * out.noise.array();
    // tanh rounds to +-1 for |pre| > ~19; keep the action strictly inside
    const double edge = std::nextafter(1.0, 0.0);
    out.action = out.pre.array().tanh().cwiseMin(edge).cwiseMax(-edge).matrix();
    out.log_prob.resize(1, n);
    const double half_log_2pi = 0.5 * std::log(2.0 * kPi);
    for (Eigen::Index j = 0; j < n; ++j) {
        double lp = 0.0;
        for (int i = 0; i < d; ++i) {
            const double xi = out.noise(i, j);
            lp += -0.5 * xi * xi - out.log_std(i, j) - half_log_2pi - log1m_tanh2(out.pre(i, j));
        }
        out.log_prob(0, j) = lp;
    }
    return out;
}

void Policy::backward(const Network::Cache& cache, const PolicyOutput& out, const Matrix& d_mu,
                      const Matrix& d_log_std) {
    const int d = cfg_.action_dim;
    Matrix g(2 * d, d_mu.cols());
    g.topRows(d) = d_mu;
    const auto inside = (out.raw_log_std.array() >= cfg_.log_std_min) &&
                        (out.raw_log_std.array() <= cfg_.log_std_max);
    g.bottomRows(d) = inside.select(d_log_std, 0.0);
    net_.backward(cache, g, true, false);
}

std::array<double, 2> Policy::act(std::span<const double> window) const {
    Matrix obs = Eigen::Map<const Matrix>(window.data(), static_cast<Eigen::Index>(window.size()), 1);
    const PolicyOutput out = forward(obs, nullptr);
    return {out.action(0, 0), out.action(1, 0)};
}

Critic::Critic(const PolicyConfig& cfg, Rng& rng) : net_(critic_layers(cfg)) { net_.init(rng, 1.0); }

Matrix Critic::forward(const Matrix& obs_action, Network::Cache* cache) const {
    return net_.forward(obs_action, cache);
}

// ---------------------------------------------------------------------------

void Adam::step(Vector& params, const Vector& grads) {
    ++t_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grads;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grads.cwiseProduct(grads);
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    params.array() -= cfg_.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.eps);
}

void soft_update(Vector& target, const Vector& source, double tau) {
    target = (1.0 - tau) * target + tau * source;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'F', 'W', 'R', 'L', 'N', 'E', 'T', '\0'};

template <typename T>
T byteswap(T v) {
    static_assert(sizeof(T) == 4 || sizeof(T) == 8);
    if constexpr (sizeof(T) == 4) return static_cast<T>(__builtin_bswap32(v));
    else return static_cast<T>(__builtin_bswap64(v));
}

template <typename T>
void write_le(std::ostream& os, T v) {
    if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_le(std::istream& is, const std::string& origin) {
    T v;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError(origin + ": truncated weight file");
    if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
    return v;
}

}  // namespace

void WeightFile::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write weights: " + path.string());
    os.write(kMagic, sizeof kMagic);
    write_le<std::uint32_t>(os, kVersion);
    const std::string text = header.serialize();
    write_le<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    write_le<std::uint64_t>(os, vectors.size());
    for (const Vector& v : vectors) {
        write_le<std::uint64_t>(os, static_cast<std::uint64_t>(v.size()));
        for (Eigen::Index i = 0; i < v.size(); ++i) write_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v(i)));
    }
    if (!os) throw Error("error writing weights: " + path.string());
}

WeightFile WeightFile::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    const std::string origin = path.string();
    if (!is) throw Error("cannot open weights: " + origin);
    char magic[8];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw FormatError(origin + ": not a weight file");
    }
    const auto version = read_le<std::uint32_t>(is, origin);
    if (version != kVersion) {
        throw FormatError(origin + ": unsupported weight file version " + std::to_string(version));
    }
    const auto header_len = read_le<std::uint64_t>(is, origin);
    if (header_len > (1u << 24)) throw FormatError(origin + ": header too large");
    std::string text(header_len, '\0');
    if (!is.read(text.data(), static_cast<std::streamsize>(header_len))) {
        throw FormatError(origin + ": truncated header");
    }
    WeightFile wf;
    wf.header = KeyValueFile::parse(text, origin);
    const auto count = read_le<std::uint64_t>(is, origin);
    if (count > 64) throw FormatError(origin + ": too many vectors");
    for (std::uint64_t k = 0; k < count; ++k) {
        const auto n = read_le<std::uint64_t>(is, origin);
        if (n > (1u << 26)) throw FormatError(origin + ": vector too large");
        Vector v(static_cast<Eigen::Index>(n));
        for (std::uint64_t i = 0; i < n; ++i) v(i) = std::bit_cast<double>(read_le<std::uint64_t>(is, origin));
        wf.vectors.push_back(std::move(v));
    }
    return wf;
}

}  // namespace fwrl::nnet
