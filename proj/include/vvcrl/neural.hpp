#pragma once

// Dense rectifier networks with hand-written reverse mode, Adam, and the
// tanh-squashed Gaussian policy head. Batches are column-major: one sample per
// column.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vvcrl/errors.hpp"
#include "vvcrl/rng.hpp"

namespace vvcrl::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

/// Gradient (or moment) buffers shaped like a network's layers.
using LayerBuffers = std::vector<DenseLayer>;

namespace detail {
inline std::uint64_t next_generation() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

/// Affine layers with ReLU between them and a linear output layer.
class DenseNet {
 public:
  DenseNet() = default;
  // A copy is a distinct parameter set; caches taken on the source do not apply.
  DenseNet(const DenseNet& o) : layers_(o.layers_) {}
  DenseNet& operator=(const DenseNet& o) {
    layers_ = o.layers_;
    generation_ = detail::next_generation();
    return *this;
  }
  DenseNet(DenseNet&&) noexcept = default;
  DenseNet& operator=(DenseNet&&) noexcept = default;

  explicit DenseNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw ContractViolation("a dense net needs at least one layer");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (layers_[l].bias.size() != layers_[l].weight.rows()) throw ContractViolation("bias length must equal layer width");
      if (l > 0 && layers_[l].weight.cols() != layers_[l - 1].weight.rows())
        throw ContractViolation("layer shapes do not chain");
    }
  }

  /// Uniform fan-in initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for
  /// weights and biases; the last layer is multiplied by `final_scale`.
  static DenseNet create(int inputs, std::span<const int> hidden, int outputs, Rng& rng, double final_scale = 1.0) {
    std::vector<DenseLayer> layers;
    int fan_in = inputs;
    auto make = [&](int out, double scale) {
      const double bound = fan_in > 0 ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : 0.0;
      DenseLayer layer{Matrix(out, fan_in), Vector(out)};
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) layer.weight(r, c) = scale * rng.uniform(-bound, bound);
      for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = scale * rng.uniform(-bound, bound);
      layers.push_back(std::move(layer));
      fan_in = out;
    };
    for (int h : hidden) make(h, 1.0);
    make(outputs, final_scale);
    return DenseNet(std::move(layers));
  }

  Eigen::Index input_size() const { return layers_.front().weight.cols(); }
  Eigen::Index output_size() const { return layers_.back().weight.rows(); }
  std::size_t layer_count() const { return layers_.size(); }
  std::vector<int> hidden_sizes() const {
    std::vector<int> h;
    for (std::size_t l = 0; l + 1 < layers_.size(); ++l) h.push_back(static_cast<int>(layers_[l].weight.rows()));
    return h;
  }

  const std::vector<DenseLayer>& layers() const { return layers_; }
  /// Mutable access invalidates any forward cache taken before it.
  std::vector<DenseLayer>& mutable_layers() {
    generation_ = detail::next_generation();
    return layers_;
  }
  std::uint64_t generation() const { return generation_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

 private:
  std::vector<DenseLayer> layers_;
  std::uint64_t generation_ = detail::next_generation();
};

struct ForwardCache {
  std::vector<Matrix> inputs;  // inputs[l] feeds layer l; inputs[0] is the network input
  std::uint64_t generation = 0;
};

/// Runs the network on a batch (input_size x batch). Fills `cache` when given.
inline Matrix forward(const DenseNet& net, const Matrix& input, ForwardCache* cache = nullptr) {
  if (input.rows() != net.input_size())
    throw ContractViolation("input has " + std::to_string(input.rows()) + " rows, network expects " +
                            std::to_string(net.input_size()));
  const auto& layers = net.layers();
  if (cache) {
    cache->inputs.clear();
    cache->inputs.reserve(layers.size());
    cache->generation = net.generation();
  }
  Matrix x = input;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix z = layers[l].weight * x;
    z.colwise() += layers[l].bias;
    if (l + 1 < layers.size()) z = z.cwiseMax(0.0);
    if (cache) cache->inputs.push_back(std::move(x));
    x = std::move(z);
  }
  return x;
}

struct Gradients {
  LayerBuffers layers;
  Matrix input;  // d objective / d input
};

/// Reverse-mode pass for the gradient `output_grad` (output_size x batch) of a
/// scalar objective with respect to the outputs of the cached forward pass.
inline Gradients backward(const DenseNet& net, const ForwardCache& cache, const Matrix& output_grad) {
  const auto& layers = net.layers();
  if (cache.generation != net.generation() || cache.inputs.size() != layers.size())
    throw ContractViolation("stale forward cache: parameters changed since the forward pass");
  if (output_grad.rows() != net.output_size() || output_grad.cols() != cache.inputs.front().cols())
    throw ContractViolation("output gradient shape does not match the forward pass");
  Gradients g;
  g.layers.resize(layers.size());
  Matrix delta = output_grad;
  for (std::size_t k = layers.size(); k-- > 0;) {
    const Matrix& in = cache.inputs[k];
    g.layers[k].weight = delta * in.transpose();
    g.layers[k].bias = delta.rowwise().sum();
    Matrix up = layers[k].weight.transpose() * delta;
    if (k > 0) up = up.cwiseProduct((in.array() > 0.0).cast<double>().matrix());
    delta = std::move(up);
  }
  g.input = std::move(delta);
  return g;
}

inline LayerBuffers zeros_like(const DenseNet& net) {
  LayerBuffers z;
  for (const auto& l : net.layers()) z.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  return z;
}

inline void accumulate(LayerBuffers& into, const LayerBuffers& g, double scale = 1.0) {
  for (std::size_t l = 0; l < into.size(); ++l) {
    into[l].weight += scale * g[l].weight;
    into[l].bias += scale * g[l].bias;
  }
}

inline bool all_finite(const LayerBuffers& buffers) {
  for (const auto& l : buffers)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

/// Parameters in layer order, weights column-major then bias.
inline Vector flatten(const LayerBuffers& layers) {
  Eigen::Index n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  Vector out(n);
  Eigen::Index k = 0;
  for (const auto& l : layers) {
    out.segment(k, l.weight.size()) = Eigen::Map<const Vector>(l.weight.data(), l.weight.size());
    k += l.weight.size();
    out.segment(k, l.bias.size()) = l.bias;
    k += l.bias.size();
  }
  return out;
}

inline Vector flatten(const DenseNet& net) { return flatten(net.layers()); }

inline void unflatten(DenseNet& net, const Vector& values) {
  if (values.size() != static_cast<Eigen::Index>(net.parameter_count())) throw ContractViolation("parameter count mismatch");
  Eigen::Index k = 0;
  for (auto& l : net.mutable_layers()) {
    Eigen::Map<Vector>(l.weight.data(), l.weight.size()) = values.segment(k, l.weight.size());
    k += l.weight.size();
    l.bias = values.segment(k, l.bias.size());
    k += l.bias.size();
  }
}

// ---------------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  LayerBuffers m;
  LayerBuffers v;
  std::int64_t step = 0;

  static AdamState for_net(const DenseNet& net, AdamConfig config = {}) {
    return AdamState{config, zeros_like(net), zeros_like(net), 0};
  }
};

/// One bias-corrected Adam descent step. A non-finite gradient is rejected
/// before anything is modified.
inline void adam_step(AdamState& state, DenseNet& net, const LayerBuffers& grads) {
  if (grads.size() != net.layer_count() || state.m.size() != net.layer_count())
    throw ContractViolation("Adam state, gradients and parameters must have the same layout");
  for (std::size_t l = 0; l < grads.size(); ++l)
    if (grads[l].weight.rows() != net.layers()[l].weight.rows() || grads[l].weight.cols() != net.layers()[l].weight.cols())
      throw ContractViolation("gradient shape mismatch in layer " + std::to_string(l));
  if (!all_finite(grads)) throw NumericalError("Adam step rejected: non-finite gradient");

  const auto& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  auto& layers = net.mutable_layers();
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    param.array() -= c.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.epsilon);
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weight, state.m[l].weight, state.v[l].weight, grads[l].weight);
    update(layers[l].bias, state.m[l].bias, state.v[l].bias, grads[l].bias);
  }
}

/// target <- (1 - tau) target + tau source.
inline void polyak_update(DenseNet& target, const DenseNet& source, double tau) {
  auto& t = target.mutable_layers();
  const auto& s = source.layers();
  for (std::size_t l = 0; l < t.size(); ++l) {
    t[l].weight = (1.0 - tau) * t[l].weight + tau * s[l].weight;
    t[l].bias = (1.0 - tau) * t[l].bias + tau * s[l].bias;
  }
}

// ---------------------------------------------------------------------------
// Squashed Gaussian policy: a = tanh(mu + sigma * xi). The network emits the
// mean in rows [0, d) and the raw log-std in rows [d, 2d).

struct PolicyConfig {
  double log_std_min = -20.0;
  double log_std_max = 2.0;
  double boundary_epsilon = 1e-6;
};

/// log(1 - tanh(u)^2) evaluated without cancellation.
inline double log_sech2(double u) {
  const double au = std::abs(u);
  return 2.0 * (std::numbers::ln2 - au - std::log1p(std::exp(-2.0 * au)));
}

struct HeadOutput {
  Matrix mean;         // d x B
  Matrix log_std;      // clamped
  Matrix clamp_mask;   // 1 where the raw log-std was inside the clamp interval
  ForwardCache cache;
};

struct SquashedSample {
  Matrix actions;     // d x B, tanh(pre_tanh) clipped to +-(1 - eps)
  RowVector log_prob;
  Matrix pre_tanh;    // mu + sigma xi
  Matrix noise;       // xi
  HeadOutput head;
};

class GaussianPolicy {
 public:
  GaussianPolicy() = default;
  GaussianPolicy(DenseNet net, int action_dim, PolicyConfig config = {})
      : net_(std::move(net)), action_dim_(action_dim), config_(config) {
    if (net_.output_size() != 2 * action_dim_) throw ContractViolation("policy network must output 2 x action_dim values");
  }

  static GaussianPolicy create(int state_dim, std::span<const int> hidden, int action_dim, Rng& rng,
                               double final_scale = 0.01, PolicyConfig config = {}) {
    return GaussianPolicy(DenseNet::create(state_dim, hidden, 2 * action_dim, rng, final_scale), action_dim, config);
  }

  int action_dim() const { return action_dim_; }
  Eigen::Index state_dim() const { return net_.input_size(); }
  const DenseNet& net() const { return net_; }
  DenseNet& mutable_net() { return net_; }
  const PolicyConfig& config() const { return config_; }

  HeadOutput head(const Matrix& states) const {
    HeadOutput h;
    const Matrix out = forward(net_, states, &h.cache);
    h.mean = out.topRows(action_dim_);
    const Matrix raw = out.bottomRows(action_dim_);
    h.log_std = raw.cwiseMax(config_.log_std_min).cwiseMin(config_.log_std_max);
    h.clamp_mask = ((raw.array() > config_.log_std_min) && (raw.array() < config_.log_std_max)).cast<double>().matrix();
    return h;
  }

  /// Reparameterised sample for a given noise matrix (d x B).
  SquashedSample sample(const Matrix& states, const Matrix& noise) const {
    if (noise.rows() != action_dim_ || noise.cols() != states.cols()) throw ContractViolation("noise must be action_dim x batch");
    SquashedSample s;
    s.head = head(states);
    s.noise = noise;
    const Matrix sigma = s.head.log_std.array().exp().matrix();
    s.pre_tanh = s.head.mean + sigma.cwiseProduct(noise);
    s.actions = squash(s.pre_tanh);
    s.log_prob = RowVector::Zero(states.cols());
    const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    for (Eigen::Index b = 0; b < states.cols(); ++b) {
      double lp = 0.0;
      for (Eigen::Index j = 0; j < action_dim_; ++j)
        lp += -0.5 * noise(j, b) * noise(j, b) - s.head.log_std(j, b) - half_log_2pi - log_sech2(s.pre_tanh(j, b));
      s.log_prob(b) = lp;
    }
    return s;
  }

  SquashedSample sample(const Matrix& states, Rng& rng) const {
    return sample(states, rng.normal_matrix(action_dim_, states.cols()));
  }

  /// tanh(mean): the evaluation-mode action.
  Matrix deterministic(const Matrix& states) const { return squash(head(states).mean); }

  /// tanh, kept at least boundary_epsilon away from +-1 so stored actions stay
  /// strictly inside the open box even when tanh rounds to 1.
  Matrix squash(const Matrix& u) const {
    const double lim = 1.0 - config_.boundary_epsilon;
    return u.array().tanh().cwiseMax(-lim).cwiseMin(lim).matrix();
  }

  /// Log density of given actions. Coordinates at or beyond +-(1 - eps) are
  /// pulled inside; `clamped` (if given) reports whether that happened.
  RowVector log_prob(const Matrix& states, const Matrix& actions, bool* clamped = nullptr) const {
    if (actions.rows() != action_dim_ || actions.cols() != states.cols()) throw ContractViolation("action shape mismatch");
    const auto h = head(states);
    const double lim = 1.0 - config_.boundary_epsilon;
    const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    bool any = false;
    RowVector out(states.cols());
    for (Eigen::Index b = 0; b < states.cols(); ++b) {
      double lp = 0.0;
      for (Eigen::Index j = 0; j < action_dim_; ++j) {
        double a = actions(j, b);
        if (std::abs(a) > lim) {
          a = std::copysign(lim, a);
          any = true;
        }
        const double u = std::atanh(a);
        const double xi = (u - h.mean(j, b)) * std::exp(-h.log_std(j, b));
        lp += -0.5 * xi * xi - h.log_std(j, b) - half_log_2pi - log_sech2(u);
      }
      out(b) = lp;
    }
    if (clamped) *clamped = any;
    return out;
  }

  /// Parameter gradient of sum_b [ d_action(:, b) . a_b + d_log_prob(b) * log pi(a_b) ]
  /// through the reparameterised sample (noise held fixed).
  LayerBuffers backward(const SquashedSample& s, const Matrix& d_action, const RowVector& d_log_prob) const {
    const Eigen::Index d = action_dim_;
    const Eigen::Index n = s.actions.cols();
    Matrix out_grad(2 * d, n);
    for (Eigen::Index b = 0; b < n; ++b) {
      for (Eigen::Index j = 0; j < d; ++j) {
        const double u = s.pre_tanh(j, b);
        const double a = std::tanh(u);
        const double sigma = std::exp(s.head.log_std(j, b));
        // d log pi / d u = 2 tanh(u); d a / d u = sech^2(u)
        const double du = d_action(j, b) * std::exp(log_sech2(u)) + d_log_prob(b) * 2.0 * a;
        out_grad(j, b) = du;
        out_grad(d + j, b) = (du * sigma * s.noise(j, b) - d_log_prob(b)) * s.head.clamp_mask(j, b);
      }
    }
    return nn::backward(net_, s.head.cache, out_grad).layers;
  }

 private:
  DenseNet net_;
  int action_dim_ = 0;
  PolicyConfig config_;
};

}  // namespace vvcrl::nn
