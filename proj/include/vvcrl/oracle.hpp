#pragma once

// Black-box dispatch oracle on the exact simulator: cross-entropy search over
// the normalized setpoint box, polished by golden-section coordinate descent.
// It is a heuristic stand-in for the true optimum; `tolerance` reports how much
// the last polish pass still moved the objective.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "vvcrl/env.hpp"
#include "vvcrl/rng.hpp"

namespace vvcrl {

struct OracleConfig {
  int population = 64;
  int elite = 8;
  int generations = 30;
  int polish_passes = 3;
  double initial_std = 0.5;
  double min_std = 1e-3;
  double golden_tol = 1e-5;  // in normalized action units
  std::uint64_t seed = 0;

  void validate() const {
    if (population < 1 || elite < 1 || elite > population) throw ConfigError("need 1 <= elite <= population", "oracle");
    if (generations < 0 || polish_passes < 0) throw ConfigError("generation and pass counts must be non-negative", "oracle");
  }
};

/// Minimizes `f` over [-1, 1] by golden-section search.
template <class F>
double golden_section(F&& f, double lo, double hi, double tol, double* best_value = nullptr) {
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - invphi * (b - a), d = a + invphi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - invphi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + invphi * (b - a);
      fd = f(d);
    }
  }
  const double x = 0.5 * (a + b);
  if (best_value) *best_value = f(x);
  return x;
}

struct BoxSearchResult {
  Eigen::VectorXd x;
  double value = 0.0;  // minimized objective
  double tolerance = 0.0;
  std::size_t evaluations = 0;
};

/// Minimizes f over [-1, 1]^d. Infinite values mark rejected candidates.
template <class F>
BoxSearchResult box_minimize(F&& f, Eigen::Index d, const OracleConfig& cfg) {
  cfg.validate();
  BoxSearchResult best;
  best.x = Eigen::VectorXd::Zero(d);
  best.value = f(best.x);
  best.evaluations = 1;
  if (d == 0) return best;

  Rng rng(mix_seed(cfg.seed ^ 0x6f7261636c65ULL));
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd sd = Eigen::VectorXd::Constant(d, cfg.initial_std);
  std::vector<Eigen::VectorXd> pop(static_cast<std::size_t>(cfg.population));
  std::vector<double> val(pop.size());
  std::vector<std::size_t> order(pop.size());
  for (int g = 0; g < cfg.generations; ++g) {
    for (std::size_t k = 0; k < pop.size(); ++k) {
      pop[k].resize(d);
      for (Eigen::Index j = 0; j < d; ++j) pop[k](j) = std::clamp(mean(j) + sd(j) * rng.normal(), -1.0, 1.0);
      val[k] = f(pop[k]);
      ++best.evaluations;
      if (val[k] < best.value) {
        best.value = val[k];
        best.x = pop[k];
      }
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return val[a] < val[b]; });
    const auto n_elite = static_cast<std::size_t>(cfg.elite);
    std::size_t usable = 0;
    while (usable < n_elite && std::isfinite(val[order[usable]])) ++usable;
    if (usable == 0) continue;
    mean.setZero();
    for (std::size_t e = 0; e < usable; ++e) mean += pop[order[e]];
    mean /= static_cast<double>(usable);
    Eigen::VectorXd var = Eigen::VectorXd::Zero(d);
    for (std::size_t e = 0; e < usable; ++e) var += (pop[order[e]] - mean).cwiseAbs2();
    sd = (var / static_cast<double>(usable)).cwiseSqrt().cwiseMax(cfg.min_std);
  }

  double last_gain = 0.0;
  for (int pass = 0; pass < cfg.polish_passes; ++pass) {
    const double before = best.value;
    for (Eigen::Index j = 0; j < d; ++j) {
      Eigen::VectorXd trial = best.x;
      auto line = [&](double t) {
        trial(j) = t;
        ++best.evaluations;
        return f(trial);
      };
      double v = 0.0;
      const double t = golden_section(line, -1.0, 1.0, cfg.golden_tol, &v);
      if (v < best.value) {
        best.value = v;
        best.x(j) = t;
      }
    }
    last_gain = before - best.value;
  }
  best.tolerance = std::max(last_gain, 0.0);
  return best;
}

struct DispatchStep {
  int t = 0;
  std::vector<double> action;
  Setpoints setpoints;
  double loss_mw = 0.0;
  double vr = 0.0;
  double reward = 0.0;
  bool failed = false;
};

struct OracleResult {
  std::vector<DispatchStep> steps;  // one per episode step
  double loss_mw = 0.0;             // step averages
  double vr = 0.0;
  double reward = 0.0;
  double tolerance = 0.0;  // largest per-section last-pass improvement (reward units)
  std::size_t evaluations = 0;
};

/// Best setpoints for every step of an episode on the network `net`. Steps that
/// share a profile row share one search.
inline OracleResult oracle_dispatch(const VvcEnv& env, const NetworkModel& net, const OracleConfig& cfg = {}) {
  OracleResult out;
  std::map<std::size_t, DispatchStep> solved;  // keyed by profile row
  const auto rows = env.spec().episode.profile.size();
  const auto d = static_cast<Eigen::Index>(env.action_dim());
  for (int t = 0; t < env.horizon(); ++t) {
    const std::size_t key = rows == 0 ? 0 : static_cast<std::size_t>(t) % rows;
    auto it = solved.find(key);
    if (it == solved.end()) {
      auto objective = [&](const Eigen::VectorXd& a) {
        const auto res = env.evaluate_action(net, t, std::span<const double>(a.data(), static_cast<std::size_t>(a.size())));
        if (res.reward.failed) return std::numeric_limits<double>::infinity();
        return -res.reward.reward;
      };
      OracleConfig c = cfg;
      c.seed = mix_seed(cfg.seed + key);
      const auto best = box_minimize(objective, d, c);
      const auto res = env.evaluate_action(net, t, std::span<const double>(best.x.data(), static_cast<std::size_t>(d)));
      DispatchStep step;
      step.action.assign(best.x.data(), best.x.data() + d);
      step.setpoints = action_to_setpoints(step.action, env.devices_at(t));
      step.failed = res.reward.failed;
      step.reward = res.reward.reward;
      step.loss_mw = res.reward.loss_mw;
      step.vr = -res.reward.voltage_term;
      out.tolerance = std::max(out.tolerance, best.tolerance);
      out.evaluations += best.evaluations;
      it = solved.emplace(key, std::move(step)).first;
    }
    DispatchStep step = it->second;
    step.t = t;
    out.steps.push_back(std::move(step));
  }
  for (const auto& s : out.steps) {
    out.loss_mw += s.loss_mw;
    out.vr += s.vr;
    out.reward += s.reward;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, out.steps.size()));
  out.loss_mw /= n;
  out.vr /= n;
  out.reward /= n;
  return out;
}

}  // namespace vvcrl
