#pragma once

// Soft actor-critic: twin critics with frozen targets and a squashed Gaussian
// actor trained through the reparameterised sample.

#include <cmath>
#include <concepts>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vvcrl/errors.hpp"
#include "vvcrl/neural.hpp"
#include "vvcrl/replay.hpp"
#include "vvcrl/rng.hpp"

namespace vvcrl {

using nn::Matrix;
using nn::RowVector;
using nn::Vector;

/// Stacks blocks vertically; blocks with zero rows are skipped.
inline Matrix stack_rows(std::initializer_list<const Matrix*> blocks) {
  Eigen::Index rows = 0, cols = -1;
  for (const Matrix* b : blocks) {
    if (b->rows() == 0) continue;
    if (cols >= 0 && b->cols() != cols) throw ContractViolation("stacked blocks must share the batch size");
    cols = b->cols();
    rows += b->rows();
  }
  Matrix out(rows, cols < 0 ? 0 : cols);
  Eigen::Index r = 0;
  for (const Matrix* b : blocks) {
    if (b->rows() == 0) continue;
    out.middleRows(r, b->rows()) = *b;
    r += b->rows();
  }
  return out;
}

inline nn::LayerBuffers scaled(nn::LayerBuffers g, double k) {
  for (auto& l : g) {
    l.weight *= k;
    l.bias *= k;
  }
  return g;
}

struct TwinCritic {
  nn::DenseNet q1, q2;
  nn::DenseNet target1, target2;
  nn::AdamState adam1, adam2;

  static TwinCritic create(int input_dim, std::span<const int> hidden, Rng& rng, nn::AdamConfig adam = {}) {
    TwinCritic c;
    c.q1 = nn::DenseNet::create(input_dim, hidden, 1, rng);
    c.q2 = nn::DenseNet::create(input_dim, hidden, 1, rng);
    c.target1 = c.q1;
    c.target2 = c.q2;
    c.adam1 = nn::AdamState::for_net(c.q1, adam);
    c.adam2 = nn::AdamState::for_net(c.q2, adam);
    return c;
  }

  Eigen::Index input_dim() const { return q1.input_size(); }

  RowVector min_online(const Matrix& x) const { return nn::forward(q1, x).cwiseMin(nn::forward(q2, x)); }
  RowVector min_target(const Matrix& x) const { return nn::forward(target1, x).cwiseMin(nn::forward(target2, x)); }

  /// target <- (1 - tau) target + tau online
  void soft_update(double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw ContractViolation("polyak rate must lie in [0, 1]");
    nn::polyak_update(target1, q1, tau);
    nn::polyak_update(target2, q2, tau);
  }
};

struct MsbeResult {
  double loss = 0.0;
  nn::LayerBuffers grad;
};

/// mean_b (Q(x_b) - y_b)^2 and its parameter gradient.
inline MsbeResult msbe(const nn::DenseNet& q, const Matrix& x, const RowVector& y, bool want_grad = true) {
  if (q.output_size() != 1) throw ContractViolation("critic must have a scalar output");
  if (y.size() != x.cols()) throw ContractViolation("target count must equal batch size");
  nn::ForwardCache cache;
  const RowVector pred = nn::forward(q, x, want_grad ? &cache : nullptr);
  const RowVector resid = pred - y;
  const double n = static_cast<double>(x.cols());
  MsbeResult out;
  out.loss = resid.squaredNorm() / n;
  if (want_grad) out.grad = nn::backward(q, cache, (2.0 / n) * Matrix(resid)).layers;
  return out;
}

struct CriticLoss {
  double q1 = 0.0;
  double q2 = 0.0;
  double mean() const { return 0.5 * (q1 + q2); }
};

struct TwinGradients {
  CriticLoss loss;
  nn::LayerBuffers g1, g2;
};

/// Pre-step losses and gradients for both critics; throws before any update
/// when something is non-finite.
inline TwinGradients twin_msbe(const TwinCritic& c, const Matrix& x, const RowVector& y) {
  if (!y.allFinite()) throw NumericalError("critic update aborted: non-finite Bellman target");
  auto a = msbe(c.q1, x, y);
  auto b = msbe(c.q2, x, y);
  if (!std::isfinite(a.loss) || !std::isfinite(b.loss) || !nn::all_finite(a.grad) || !nn::all_finite(b.grad))
    throw NumericalError("critic update aborted: non-finite loss " + std::to_string(a.loss) + " / " +
                         std::to_string(b.loss));
  return {{a.loss, b.loss}, std::move(a.grad), std::move(b.grad)};
}

inline void apply_twin(TwinCritic& c, const TwinGradients& g) {
  nn::adam_step(c.adam1, c.q1, g.g1);
  nn::adam_step(c.adam2, c.q2, g.g2);
}

inline CriticLoss update_twin(TwinCritic& c, const Matrix& x, const RowVector& y) {
  const auto g = twin_msbe(c, x, y);
  apply_twin(c, g);
  return g.loss;
}

/// y_b = r_b for terminal samples, else r_b + gamma (next_q_b - alpha next_logp_b).
inline RowVector soft_bellman_target(const RowVector& r, const RowVector& done, const RowVector& next_q,
                                     const RowVector& next_logp, double alpha, double gamma) {
  RowVector y = r;
  for (Eigen::Index k = 0; k < y.size(); ++k)
    if (done(k) == 0.0) y(k) += gamma * (next_q(k) - alpha * next_logp(k));
  return y;
}

/// Anything with a frozen min-of-twins evaluation over stacked (s; a) columns.
template <class C>
concept TargetCritic = requires(const C& c, const Matrix& x) {
  { c.min_target(x) } -> std::convertible_to<RowVector>;
};

/// Anything that maps (states, noise) to actions with their log densities.
template <class P>
concept StochasticPolicy = requires(const P& p, const Matrix& s, const Matrix& xi) {
  { p.sample(s, xi).actions } -> std::convertible_to<Matrix>;
  { p.sample(s, xi).log_prob } -> std::convertible_to<RowVector>;
};

/// Entropy-regularised target with the next action drawn from `pi` for the
/// given noise, bootstrapping through the frozen critics.
template <TargetCritic C, StochasticPolicy P>
RowVector soft_critic_target(const C& critics, const P& pi, const Batch& b, const Matrix& noise, double alpha, double gamma) {
  const auto next = pi.sample(b.s_next, noise);
  const Matrix a = next.actions;
  const RowVector q = critics.min_target(stack_rows({&b.s_next, &a}));
  return soft_bellman_target(b.r, b.done, q, next.log_prob, alpha, gamma);
}

struct PolicyObjective {
  double value = 0.0;
  nn::LayerBuffers grad;  // d value / d policy parameters
  nn::SquashedSample sample;
};

/// value = mean_b [ min(Q1, Q2)(assemble(a_b)) - alpha log pi(a_b | s_b) ] with
/// a = tanh(mu + sigma xi) for the given noise. `assemble` maps the sampled
/// actions to the critic input; the actions occupy rows [action_row,
/// action_row + d) of that input.
template <class Assemble>
PolicyObjective soft_policy_objective(const nn::GaussianPolicy& pi, const nn::DenseNet& q1, const nn::DenseNet& q2,
                                      const Matrix& states, const Matrix& noise, double alpha, Eigen::Index action_row,
                                      Assemble&& assemble, bool want_grad = true) {
  PolicyObjective out;
  out.sample = pi.sample(states, noise);
  const Matrix x = assemble(out.sample.actions);
  nn::ForwardCache c1, c2;
  const RowVector v1 = nn::forward(q1, x, want_grad ? &c1 : nullptr);
  const RowVector v2 = nn::forward(q2, x, want_grad ? &c2 : nullptr);
  const Eigen::Index n = states.cols();
  const double inv = 1.0 / static_cast<double>(n);
  out.value = inv * (v1.cwiseMin(v2) - alpha * out.sample.log_prob).sum();
  if (!want_grad) return out;

  Matrix pick1 = Matrix::Zero(1, n), pick2 = Matrix::Zero(1, n);
  for (Eigen::Index b = 0; b < n; ++b) (v1(b) <= v2(b) ? pick1 : pick2)(0, b) = inv;
  const Matrix dx = nn::backward(q1, c1, pick1).input + nn::backward(q2, c2, pick2).input;
  const Matrix d_action = dx.middleRows(action_row, pi.action_dim());
  const RowVector d_logp = RowVector::Constant(n, -alpha * inv);
  out.grad = pi.backward(out.sample, d_action, d_logp);
  return out;
}

// ---------------------------------------------------------------------------

enum class TargetSchedule {
  per_step,     // target <- (1 - tau) target + tau online after every gradient step
  per_episode,  // target <- eta online + (1 - eta) target once per episode, eta = 1 - tau
};

struct SacConfig {
  double alpha = 0.07;
  double gamma = 0.99;
  double tau = 0.005;
  std::size_t batch_size = 256;
  std::vector<int> hidden{256, 256};
  nn::AdamConfig adam;
  nn::PolicyConfig policy;
  double policy_final_scale = 0.01;
  TargetSchedule target_schedule = TargetSchedule::per_step;

  void validate() const {
    if (!(alpha > 0.0)) throw ConfigError("entropy coefficient must be positive", "sac.alpha");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("discount must lie in [0, 1]", "sac.gamma");
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("polyak rate must lie in (0, 1)", "sac.tau");
    if (batch_size == 0) throw ConfigError("must be positive", "sac.batch_size");
    for (int h : hidden)
      if (h <= 0) throw ConfigError("layer widths must be positive", "sac.hidden");
    if (!(adam.learning_rate > 0.0)) throw ConfigError("must be positive", "sac.learning_rate");
  }
};

struct UpdateReport {
  CriticLoss critic;
  double policy_objective = 0.0;
};

class SacAgent {
 public:
  SacAgent(nn::GaussianPolicy policy, nn::AdamState policy_adam, TwinCritic critics, SacConfig config)
      : policy_(std::move(policy)), policy_adam_(std::move(policy_adam)), critics_(std::move(critics)), config_(std::move(config)) {
    config_.validate();
    if (critics_.input_dim() != policy_.state_dim() + policy_.action_dim())
      throw ContractViolation("critic input width must equal state_dim + action_dim");
  }

  static SacAgent create(int state_dim, int action_dim, const SacConfig& config, Rng& rng) {
    config.validate();
    auto policy = nn::GaussianPolicy::create(state_dim, config.hidden, action_dim, rng, config.policy_final_scale, config.policy);
    auto adam = nn::AdamState::for_net(policy.net(), config.adam);
    auto critics = TwinCritic::create(state_dim + action_dim, config.hidden, rng, config.adam);
    return SacAgent(std::move(policy), std::move(adam), std::move(critics), config);
  }

  int state_dim() const { return static_cast<int>(policy_.state_dim()); }
  int action_dim() const { return policy_.action_dim(); }
  const SacConfig& config() const { return config_; }
  const nn::GaussianPolicy& policy() const { return policy_; }
  nn::GaussianPolicy& mutable_policy() { return policy_; }
  const nn::AdamState& policy_adam() const { return policy_adam_; }
  nn::AdamState& mutable_policy_adam() { return policy_adam_; }
  const TwinCritic& critics() const { return critics_; }
  TwinCritic& mutable_critics() { return critics_; }

  /// y = r for terminal samples, else r + gamma (min target Q(s', a') - alpha log pi(a'|s'))
  /// with a' = tanh(mu(s') + sigma(s') xi) for the supplied noise.
  RowVector critic_target(const Batch& b, const Matrix& noise) const {
    return soft_critic_target(critics_, policy_, b, noise, config_.alpha, config_.gamma);
  }

  RowVector critic_target(const Batch& b, Rng& rng) const { return critic_target(b, rng.normal_matrix(action_dim(), b.size())); }

  /// One Adam step per critic on the MSBE; returns the pre-step losses.
  CriticLoss update_critics(const Batch& b, Rng& rng) {
    const RowVector y = critic_target(b, rng);
    return update_twin(critics_, stack_rows({&b.s, &b.a_p}), y);
  }

  PolicyObjective policy_objective(const Matrix& states, const Matrix& noise, bool want_grad = true) const {
    return soft_policy_objective(
        policy_, critics_.q1, critics_.q2, states, noise, config_.alpha, states.rows(),
        [&](const Matrix& a) { return stack_rows({&states, &a}); }, want_grad);
  }

  /// One Adam ascent step on the entropy-regularised policy objective; returns
  /// its pre-step value.
  double update_policy(const Batch& b, Rng& rng) {
    auto obj = policy_objective(b.s, rng.normal_matrix(action_dim(), b.size()));
    if (!std::isfinite(obj.value) || !nn::all_finite(obj.grad))
      throw NumericalError("policy update aborted: non-finite objective " + std::to_string(obj.value));
    nn::adam_step(policy_adam_, policy_.mutable_net(), scaled(std::move(obj.grad), -1.0));
    return obj.value;
  }

  void soft_update() { critics_.soft_update(config_.tau); }
  void soft_update(double tau) { critics_.soft_update(tau); }

  UpdateReport train_step(const Batch& b, Rng& rng) {
    UpdateReport rep;
    rep.critic = update_critics(b, rng);
    rep.policy_objective = update_policy(b, rng);
    if (config_.target_schedule == TargetSchedule::per_step) soft_update();
    return rep;
  }

  void end_episode() {
    if (config_.target_schedule == TargetSchedule::per_episode) critics_.soft_update(1.0 - config_.tau);
  }

  Vector act(const Vector& state, bool deterministic, Rng& rng) const {
    const Matrix s = state;
    if (deterministic) return policy_.deterministic(s).col(0);
    return policy_.sample(s, rng).actions.col(0);
  }

 private:
  nn::GaussianPolicy policy_;
  nn::AdamState policy_adam_;
  TwinCritic critics_;
  SacConfig config_;
};

}  // namespace vvcrl
