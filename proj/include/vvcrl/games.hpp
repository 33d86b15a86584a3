#pragma once

// One-shot zero-sum games for checking the two-player updates in isolation.
// The state is the constant [1] and every episode lasts one step, so the
// critic regresses directly onto the payoff.

#include <cmath>
#include <functional>
#include <optional>

#include "vvcrl/jasac.hpp"

namespace vvcrl {

/// r(a_p, a_o); the protagonist maximises, the adversary minimises.
using Payoff = std::function<double(double a_p, double a_o)>;

/// -a_p^2 + a_p a_o + a_o^2, saddle point at the origin.
inline double saddle_payoff(double a_p, double a_o) { return -a_p * a_p + a_p * a_o + a_o * a_o; }

struct GameConfig {
  AdversarialConfig agent;
  int max_steps = 20000;
  int warmup = 256;
  int check_every = 50;
  int patience = 3;  // consecutive checks inside the tolerance
  double tolerance = 0.05;
  double protagonist_start = 0.6;  // initial squashed policy means
  double adversary_start = -0.6;

  static GameConfig defaults() {
    GameConfig g;
    g.agent.base.alpha = 0.01;
    g.agent.alpha_o = 0.01;
    g.agent.base.hidden = {32, 32};
    g.agent.base.batch_size = 64;
    g.agent.base.gamma = 0.99;
    g.agent.base.tau = 0.01;
    return g;
  }
};

struct GameResult {
  std::optional<int> converged_at;  // environment steps
  int steps = 0;
  double protagonist_mean = 0.0;  // tanh(mu) at the end
  double adversary_mean = 0.0;
};

inline double squashed_mean(const nn::GaussianPolicy& pi) {
  return std::tanh(pi.head(Matrix::Ones(1, 1)).mean(0, 0));
}

/// Plays the game with one training cycle per step until both squashed
/// means stay within `tolerance` of zero for `patience` consecutive checks.
inline GameResult play_saddle_game(const GameConfig& g, std::uint64_t seed, const Payoff& payoff = saddle_payoff) {
  Rng root(mix_seed(seed));
  Rng init = root.derive(1), act = root.derive(2), batch = root.derive(3);
  auto agent = AdversarialAgent::create(1, 1, 1, g.agent, init);
  agent.mutable_protagonist().mutable_net().mutable_layers().back().bias(0) = std::atanh(g.protagonist_start);
  agent.mutable_adversary().mutable_net().mutable_layers().back().bias(0) = std::atanh(g.adversary_start);

  ReplayBuffer<JointTransition> buffer(static_cast<std::size_t>(g.max_steps) + 1);
  const Vector s = Vector::Ones(1);
  GameResult res;
  int inside = 0;
  for (int step = 1; step <= g.max_steps; ++step) {
    JointTransition tr;
    tr.s = s;
    tr.a_p = agent.act_protagonist(s, false, act);
    tr.a_o = agent.act_adversary(s, false, act);
    tr.r = payoff(tr.a_p(0), tr.a_o(0));
    tr.s_next = s;
    tr.done = true;
    buffer.push(std::move(tr));
    if (step >= g.warmup) {
      agent.train_cycle(buffer.sample(g.agent.base.batch_size, batch), batch);
      if (g.agent.base.target_schedule == TargetSchedule::per_episode) agent.end_episode();
    }
    res.steps = step;
    if (step % g.check_every == 0) {
      res.protagonist_mean = squashed_mean(agent.protagonist());
      res.adversary_mean = squashed_mean(agent.adversary());
      const bool ok = std::abs(res.protagonist_mean) < g.tolerance && std::abs(res.adversary_mean) < g.tolerance;
      inside = ok ? inside + 1 : 0;
      if (inside >= g.patience) {
        res.converged_at = step - (g.patience - 1) * g.check_every;
        return res;
      }
    }
  }
  return res;
}

}  // namespace vvcrl
