#pragma once

// Two-player soft actor-critic for the adversarial MDP. In joint mode one pair
// of twin critics over (s, a_p, a_o) serves both players; in separate mode each
// player bootstraps its own critic over its own action only.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "vvcrl/sac.hpp"

namespace vvcrl {

enum class CriticMode { joint, separate };

inline const char* to_string(CriticMode m) { return m == CriticMode::joint ? "joint" : "separate"; }

struct AdversarialConfig {
  SacConfig base;         // base.alpha is the protagonist coefficient alpha_p
  double alpha_o = 0.04;  // magnitude; the agent uses -alpha_o
  CriticMode mode = CriticMode::joint;
  int critic_updates = 1;
  int protagonist_updates = 1;
  int adversary_updates = 1;

  double alpha_p() const { return base.alpha; }

  void validate() const {
    base.validate();
    if (!(alpha_o > 0.0)) throw ConfigError("adversary entropy magnitude must be positive (the coefficient itself is negative)", "jasac.alpha_o");
    if (critic_updates < 0 || protagonist_updates < 0 || adversary_updates < 0)
      throw ConfigError("update counts must be non-negative", "jasac.updates");
  }
};

/// y = r for terminal samples, else
/// r + gamma [min target Q(s', a_p', a_o') - alpha_p log pi_p(a_p'|s') - alpha_o log pi_o(a_o'|s')].
/// `alpha_o` is the signed coefficient.
inline RowVector joint_soft_target(const TwinCritic& critics, const nn::GaussianPolicy& pro, const nn::GaussianPolicy& adv,
                                   const Batch& b, const Matrix& noise_p, const Matrix& noise_o, double alpha_p,
                                   double alpha_o, double gamma) {
  const auto np = pro.sample(b.s_next, noise_p);
  const auto no = adv.sample(b.s_next, noise_o);
  const RowVector q = critics.min_target(stack_rows({&b.s_next, &np.actions, &no.actions}));
  // alpha_p log pi_p + alpha_o log pi_o folded into one entropy term with unit weight
  const RowVector entropy = alpha_p * np.log_prob + alpha_o * no.log_prob;
  return soft_bellman_target(b.r, b.done, q, entropy, 1.0, gamma);
}

struct CycleReport {
  CriticLoss critic;            // joint critic, or the protagonist critic in separate mode
  CriticLoss adversary_critic;  // separate mode only
  double protagonist_objective = 0.0;
  double adversary_objective = 0.0;
};

class AdversarialAgent {
 public:
  static AdversarialAgent create(int state_dim, int protagonist_dim, int adversary_dim, const AdversarialConfig& config, Rng& rng) {
    config.validate();
    AdversarialAgent a;
    a.config_ = config;
    const auto& b = config.base;
    a.protagonist_ = nn::GaussianPolicy::create(state_dim, b.hidden, protagonist_dim, rng, b.policy_final_scale, b.policy);
    a.adversary_ = nn::GaussianPolicy::create(state_dim, b.hidden, adversary_dim, rng, b.policy_final_scale, b.policy);
    a.p_adam_ = nn::AdamState::for_net(a.protagonist_.net(), b.adam);
    a.o_adam_ = nn::AdamState::for_net(a.adversary_.net(), b.adam);
    if (config.mode == CriticMode::joint) {
      a.critic_ = TwinCritic::create(state_dim + protagonist_dim + adversary_dim, b.hidden, rng, b.adam);
    } else {
      a.critic_ = TwinCritic::create(state_dim + protagonist_dim, b.hidden, rng, b.adam);
      a.adversary_critic_ = TwinCritic::create(state_dim + adversary_dim, b.hidden, rng, b.adam);
    }
    return a;
  }

  /// Reassembles an agent from stored parts (checkpoint load).
  AdversarialAgent(AdversarialConfig config, nn::GaussianPolicy protagonist, nn::GaussianPolicy adversary,
                   nn::AdamState p_adam, nn::AdamState o_adam, TwinCritic critic, std::optional<TwinCritic> adversary_critic)
      : config_(std::move(config)),
        protagonist_(std::move(protagonist)),
        adversary_(std::move(adversary)),
        p_adam_(std::move(p_adam)),
        o_adam_(std::move(o_adam)),
        critic_(std::move(critic)),
        adversary_critic_(std::move(adversary_critic)) {
    config_.validate();
    check_shapes();
  }

  const AdversarialConfig& config() const { return config_; }
  CriticMode mode() const { return config_.mode; }
  double alpha_p() const { return config_.alpha_p(); }
  double alpha_o() const { return -config_.alpha_o; }
  double gamma() const { return config_.base.gamma; }

  int state_dim() const { return static_cast<int>(protagonist_.state_dim()); }
  int protagonist_dim() const { return protagonist_.action_dim(); }
  int adversary_dim() const { return adversary_.action_dim(); }

  const nn::GaussianPolicy& protagonist() const { return protagonist_; }
  const nn::GaussianPolicy& adversary() const { return adversary_; }
  nn::GaussianPolicy& mutable_protagonist() { return protagonist_; }
  nn::GaussianPolicy& mutable_adversary() { return adversary_; }
  const nn::AdamState& protagonist_adam() const { return p_adam_; }
  const nn::AdamState& adversary_adam() const { return o_adam_; }
  /// Joint critic, or the protagonist's own critic in separate mode.
  const TwinCritic& critic() const { return critic_; }
  TwinCritic& mutable_critic() { return critic_; }
  /// Present only in separate mode.
  const std::optional<TwinCritic>& adversary_critic() const { return adversary_critic_; }
  std::optional<TwinCritic>& mutable_adversary_critic() { return adversary_critic_; }

  // -- targets -------------------------------------------------------------

  RowVector joint_critic_target(const Batch& b, const Matrix& noise_p, const Matrix& noise_o) const {
    require_mode(CriticMode::joint);
    return joint_soft_target(critic_, protagonist_, adversary_, b, noise_p, noise_o, alpha_p(), alpha_o(), gamma());
  }
  RowVector protagonist_target(const Batch& b, const Matrix& noise_p) const {
    require_mode(CriticMode::separate);
    return soft_critic_target(critic_, protagonist_, b, noise_p, alpha_p(), gamma());
  }
  RowVector adversary_target(const Batch& b, const Matrix& noise_o) const {
    require_mode(CriticMode::separate);
    return soft_critic_target(*adversary_critic_, adversary_, b, noise_o, alpha_o(), gamma());
  }

  // -- objectives ------------------------------------------------------------

  /// mean[min Q(s, a_p(theta, xi_p), a_o(xi_o)) - alpha_p log pi_p]; ascent direction.
  PolicyObjective protagonist_objective(const Matrix& states, const Matrix& noise_p, const Matrix& noise_o,
                                        bool want_grad = true) const {
    return protagonist_objective_on(critic_.q1, critic_.q2, states, noise_p, noise_o, want_grad);
  }

  /// mean[min Q(s, a_p(xi_p), a_o(omega, xi_o)) - alpha_o log pi_o]; the
  /// adversary descends it.
  PolicyObjective adversary_objective(const Matrix& states, const Matrix& noise_p, const Matrix& noise_o,
                                      bool want_grad = true) const {
    const TwinCritic& c = config_.mode == CriticMode::joint ? critic_ : *adversary_critic_;
    return adversary_objective_on(c.q1, c.q2, states, noise_p, noise_o, want_grad);
  }

  // -- updates ---------------------------------------------------------------

  CycleReport update_critics(const Batch& b, Rng& rng) {
    check_batch(b);
    CycleReport rep;
    if (config_.mode == CriticMode::joint) {
      const Matrix np = rng.normal_matrix(protagonist_dim(), b.size());
      const Matrix no = rng.normal_matrix(adversary_dim(), b.size());
      rep.critic = update_twin(critic_, stack_rows({&b.s, &b.a_p, &b.a_o}), joint_critic_target(b, np, no));
    } else {
      const Matrix np = rng.normal_matrix(protagonist_dim(), b.size());
      const Matrix no = rng.normal_matrix(adversary_dim(), b.size());
      const RowVector yp = protagonist_target(b, np);
      const RowVector yo = adversary_target(b, no);
      rep.critic = update_twin(critic_, stack_rows({&b.s, &b.a_p}), yp);
      rep.adversary_critic = update_twin(*adversary_critic_, stack_rows({&b.s, &b.a_o}), yo);
    }
    return rep;
  }

  double update_protagonist(const Batch& b, Rng& rng) {
    return protagonist_step(critic_.q1, critic_.q2, b, rng);
  }

  double update_adversary(const Batch& b, Rng& rng) {
    const TwinCritic& c = config_.mode == CriticMode::joint ? critic_ : *adversary_critic_;
    return adversary_step(c.q1, c.q2, b, rng);
  }

  /// Critics, then protagonist, then adversary. Both policy phases see the
  /// critics as they were when the cycle started.
  CycleReport train_cycle(const Batch& b, Rng& rng) {
    check_batch(b);
    const TwinCritic snapshot = critic_;
    std::optional<TwinCritic> adv_snapshot = adversary_critic_;
    CycleReport rep;
    for (int k = 0; k < config_.critic_updates; ++k) {
      auto r = update_critics(b, rng);
      rep.critic = r.critic;
      rep.adversary_critic = r.adversary_critic;
    }
    for (int k = 0; k < config_.protagonist_updates; ++k)
      rep.protagonist_objective = protagonist_step(snapshot.q1, snapshot.q2, b, rng);
    const TwinCritic& oc = config_.mode == CriticMode::joint ? snapshot : *adv_snapshot;
    for (int k = 0; k < config_.adversary_updates; ++k) rep.adversary_objective = adversary_step(oc.q1, oc.q2, b, rng);
    if (config_.base.target_schedule == TargetSchedule::per_step) soft_update(config_.base.tau);
    return rep;
  }

  void soft_update(double tau) {
    critic_.soft_update(tau);
    if (adversary_critic_) adversary_critic_->soft_update(tau);
  }

  void end_episode() {
    if (config_.base.target_schedule == TargetSchedule::per_episode) soft_update(1.0 - config_.base.tau);
  }

  Vector act_protagonist(const Vector& s, bool deterministic, Rng& rng) const { return act(protagonist_, s, deterministic, rng); }
  Vector act_adversary(const Vector& s, bool deterministic, Rng& rng) const { return act(adversary_, s, deterministic, rng); }

  /// Q_marg(s, a_p) = mean_j min(Q1, Q2)(s, a_p, tanh(mu_o(s) + sigma_o(s) xi_j)) over the
  /// columns xi_j of `noise_bank` (adversary_dim x n). The same draws are used
  /// for every column of `states`. Separate mode returns the protagonist critic.
  RowVector marginalize_q(const Matrix& states, const Matrix& a_p, const Matrix& noise_bank) const {
    if (a_p.rows() != protagonist_dim() || a_p.cols() != states.cols()) throw ContractViolation("protagonist action shape mismatch");
    if (config_.mode == CriticMode::separate) return critic_.min_online(stack_rows({&states, &a_p}));
    if (noise_bank.rows() != adversary_dim() || noise_bank.cols() < 1)
      throw ContractViolation("noise bank must be adversary_dim x n with n >= 1");
    const Eigen::Index batch = states.cols();
    const Eigen::Index n = noise_bank.cols();
    const auto head = adversary_.head(states);
    const Matrix sigma = head.log_std.array().exp().matrix();
    RowVector acc = RowVector::Zero(batch);
    // Chunk over draws so that the stacked critic input stays bounded.
    const Eigen::Index per_chunk = std::max<Eigen::Index>(1, 65536 / std::max<Eigen::Index>(batch, 1));
    for (Eigen::Index j0 = 0; j0 < n; j0 += per_chunk) {
      const Eigen::Index m = std::min(per_chunk, n - j0);
      Matrix x(critic_.input_dim(), batch * m);
      for (Eigen::Index j = 0; j < m; ++j) {
        const Matrix a_o = (head.mean + sigma.cwiseProduct(noise_bank.col(j0 + j).replicate(1, batch))).array().tanh().matrix();
        x.middleCols(j * batch, batch) = stack_rows({&states, &a_p, &a_o});
      }
      const RowVector q = critic_.min_online(x);
      for (Eigen::Index j = 0; j < m; ++j) acc += q.segment(j * batch, batch);
    }
    return acc / static_cast<double>(n);
  }

 private:
  AdversarialAgent() = default;

  void require_mode(CriticMode m) const {
    if (config_.mode != m) throw ContractViolation(std::string("operation requires ") + to_string(m) + " critic mode");
  }

  void check_shapes() const {
    const auto s = protagonist_.state_dim();
    if (adversary_.state_dim() != s) throw ContractViolation("both players must observe the same state");
    if (config_.mode == CriticMode::joint) {
      if (critic_.input_dim() != s + protagonist_dim() + adversary_dim())
        throw ContractViolation("joint critic input width must be |s| + |A_p| + |A_o|");
      if (adversary_critic_) throw ContractViolation("joint mode keeps a single critic");
    } else {
      if (critic_.input_dim() != s + protagonist_dim()) throw ContractViolation("protagonist critic input width mismatch");
      if (!adversary_critic_ || adversary_critic_->input_dim() != s + adversary_dim())
        throw ContractViolation("adversary critic input width mismatch");
    }
  }

  void check_batch(const Batch& b) const {
    if (b.s.rows() != state_dim() || b.a_p.rows() != protagonist_dim() || b.a_o.rows() != adversary_dim())
      throw ContractViolation("batch does not match the agent's state/action widths");
  }

  PolicyObjective protagonist_objective_on(const nn::DenseNet& q1, const nn::DenseNet& q2, const Matrix& states,
                                           const Matrix& noise_p, const Matrix& noise_o, bool want_grad) const {
    if (config_.mode == CriticMode::separate)
      return soft_policy_objective(
          protagonist_, q1, q2, states, noise_p, alpha_p(), states.rows(),
          [&](const Matrix& a) { return stack_rows({&states, &a}); }, want_grad);
    const Matrix a_o = adversary_.sample(states, noise_o).actions;
    return soft_policy_objective(
        protagonist_, q1, q2, states, noise_p, alpha_p(), states.rows(),
        [&](const Matrix& a) { return stack_rows({&states, &a, &a_o}); }, want_grad);
  }

  PolicyObjective adversary_objective_on(const nn::DenseNet& q1, const nn::DenseNet& q2, const Matrix& states,
                                         const Matrix& noise_p, const Matrix& noise_o, bool want_grad) const {
    if (config_.mode == CriticMode::separate)
      return soft_policy_objective(
          adversary_, q1, q2, states, noise_o, alpha_o(), states.rows(),
          [&](const Matrix& a) { return stack_rows({&states, &a}); }, want_grad);
    const Matrix a_p = protagonist_.sample(states, noise_p).actions;
    return soft_policy_objective(
        adversary_, q1, q2, states, noise_o, alpha_o(), states.rows() + protagonist_dim(),
        [&](const Matrix& a) { return stack_rows({&states, &a_p, &a}); }, want_grad);
  }

  double protagonist_step(const nn::DenseNet& q1, const nn::DenseNet& q2, const Batch& b, Rng& rng) {
    const Matrix np = rng.normal_matrix(protagonist_dim(), b.size());
    const Matrix no = rng.normal_matrix(adversary_dim(), b.size());
    auto obj = protagonist_objective_on(q1, q2, b.s, np, no, true);
    if (!std::isfinite(obj.value) || !nn::all_finite(obj.grad))
      throw NumericalError("protagonist update aborted: non-finite objective " + std::to_string(obj.value));
    nn::adam_step(p_adam_, protagonist_.mutable_net(), scaled(std::move(obj.grad), -1.0));
    return obj.value;
  }

  double adversary_step(const nn::DenseNet& q1, const nn::DenseNet& q2, const Batch& b, Rng& rng) {
    if (adversary_dim() == 0) return 0.0;
    const Matrix np = rng.normal_matrix(protagonist_dim(), b.size());
    const Matrix no = rng.normal_matrix(adversary_dim(), b.size());
    auto obj = adversary_objective_on(q1, q2, b.s, np, no, true);
    if (!std::isfinite(obj.value) || !nn::all_finite(obj.grad))
      throw NumericalError("adversary update aborted: non-finite objective " + std::to_string(obj.value));
    nn::adam_step(o_adam_, adversary_.mutable_net(), obj.grad);
    return obj.value;
  }

  static Vector act(const nn::GaussianPolicy& pi, const Vector& state, bool deterministic, Rng& rng) {
    const Matrix s = state;
    if (deterministic) return pi.deterministic(s).col(0);
    return pi.sample(s, rng).actions.col(0);
  }

  AdversarialConfig config_;
  nn::GaussianPolicy protagonist_, adversary_;
  nn::AdamState p_adam_, o_adam_;
  TwinCritic critic_;
  std::optional<TwinCritic> adversary_critic_;
};

// ---------------------------------------------------------------------------
// Transfer of the protagonist to a plain SAC agent.

struct DistillConfig {
  std::size_t points = 20000;
  int max_epochs = 200;
  std::size_t batch_size = 256;
  std::size_t adversary_samples = 32;
  double rmse_fraction = 0.05;  // stop (and pass) once RMSE <= fraction * target std
  nn::AdamConfig adam;
};

struct DistillReport {
  std::string method;  // "distilled" or "copied"
  std::size_t points = 0;
  int epochs = 0;
  double target_std = 0.0;
  double rmse_q1 = 0.0;
  double rmse_q2 = 0.0;
  double threshold = 0.0;
  bool within_threshold = true;
  std::string warning;
};

struct TransferResult {
  SacAgent agent;
  DistillReport report;
};

/// Fits a (s, a_p) network to the marginalised joint critic by minibatch
/// regression. Returns the full-set RMSE after the last epoch run.
inline double fit_critic(nn::DenseNet& net, const Matrix& x, const RowVector& y, const DistillConfig& cfg, double threshold,
                         Rng& rng, int* epochs_run) {
  auto adam = nn::AdamState::for_net(net, cfg.adam);
  const Eigen::Index n = x.cols();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  auto rmse = [&] { return std::sqrt((nn::forward(net, x) - y).squaredNorm() / static_cast<double>(n)); };
  double err = rmse();
  int epoch = 0;
  const auto bs = static_cast<Eigen::Index>(std::max<std::size_t>(1, cfg.batch_size));
  while (epoch < cfg.max_epochs && err > threshold) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (Eigen::Index k0 = 0; k0 < n; k0 += bs) {
      const Eigen::Index m = std::min(bs, n - k0);
      Matrix xb(x.rows(), m);
      RowVector yb(m);
      for (Eigen::Index k = 0; k < m; ++k) {
        xb.col(k) = x.col(order[static_cast<std::size_t>(k0 + k)]);
        yb(k) = y(order[static_cast<std::size_t>(k0 + k)]);
      }
      auto g = msbe(net, xb, yb);
      nn::adam_step(adam, net, g.grad);
    }
    ++epoch;
    err = rmse();
  }
  if (epochs_run) *epochs_run = epoch;
  return err;
}

/// Builds the online SAC agent: the actor is a parameter copy of the
/// protagonist; the twin critics are regressed onto the marginalised joint
/// critic over states drawn from `state_pool` (columns) and uniform random
/// protagonist actions. Target critics start as hard copies.
inline TransferResult transfer_to_sac(const AdversarialAgent& agent, const Matrix& state_pool, const DistillConfig& cfg,
                                      Rng& rng) {
  SacConfig sc = agent.config().base;
  DistillReport rep;
  if (agent.mode() == CriticMode::separate) {
    rep.method = "copied";
    SacAgent sac(agent.protagonist(), agent.protagonist_adam(), agent.critic(), sc);
    return {std::move(sac), rep};
  }
  if (state_pool.cols() == 0 || state_pool.rows() != agent.state_dim())
    throw ContractViolation("transfer needs a non-empty pool of states with the agent's width");

  rep.method = "distilled";
  rep.points = cfg.points;
  const auto n = static_cast<Eigen::Index>(cfg.points);
  Matrix s(agent.state_dim(), n), a(agent.protagonist_dim(), n);
  for (Eigen::Index k = 0; k < n; ++k) {
    s.col(k) = state_pool.col(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(state_pool.cols()))));
    for (Eigen::Index j = 0; j < a.rows(); ++j) a(j, k) = rng.uniform(-1.0, 1.0);
  }
  const Matrix bank = rng.normal_matrix(agent.adversary_dim(), static_cast<Eigen::Index>(std::max<std::size_t>(1, cfg.adversary_samples)));
  RowVector y(n);
  const Eigen::Index chunk = 1024;
  for (Eigen::Index k0 = 0; k0 < n; k0 += chunk) {
    const Eigen::Index m = std::min(chunk, n - k0);
    y.segment(k0, m) = agent.marginalize_q(s.middleCols(k0, m), a.middleCols(k0, m), bank);
  }
  const Matrix x = stack_rows({&s, &a});
  const double mean = y.mean();
  rep.target_std = n > 1 ? std::sqrt((y.array() - mean).square().sum() / static_cast<double>(n - 1)) : 0.0;
  rep.threshold = cfg.rmse_fraction * rep.target_std;

  TwinCritic critics = TwinCritic::create(static_cast<int>(x.rows()), sc.hidden, rng, sc.adam);
  int e1 = 0, e2 = 0;
  rep.rmse_q1 = fit_critic(critics.q1, x, y, cfg, rep.threshold, rng, &e1);
  rep.rmse_q2 = fit_critic(critics.q2, x, y, cfg, rep.threshold, rng, &e2);
  rep.epochs = std::max(e1, e2);
  critics.target1 = critics.q1;
  critics.target2 = critics.q2;
  critics.adam1 = nn::AdamState::for_net(critics.q1, sc.adam);
  critics.adam2 = nn::AdamState::for_net(critics.q2, sc.adam);
  rep.within_threshold = rep.rmse_q1 <= rep.threshold && rep.rmse_q2 <= rep.threshold;
  if (!rep.within_threshold)
    rep.warning = "critic distillation RMSE " + std::to_string(std::max(rep.rmse_q1, rep.rmse_q2)) + " above threshold " +
                  std::to_string(rep.threshold);
  SacAgent sac(agent.protagonist(), agent.protagonist_adam(), std::move(critics), sc);
  return {std::move(sac), rep};
}

}  // namespace vvcrl
