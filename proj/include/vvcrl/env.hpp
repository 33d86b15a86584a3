#pragma once

// Volt-VAR control environments: the single-agent MDP used online and the
// adversarial MDP used offline, where a second agent rescales branch
// impedances of the nominal model every step.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "vvcrl/errors.hpp"
#include "vvcrl/netcore.hpp"
#include "vvcrl/rng.hpp"

namespace vvcrl {

struct IberDevice {
  int bus = 0;
  double s_rated_mva = 0.0;
  double p_output_mw = 0.0;  // current active output (MPPT)
};

struct SvcDevice {
  int bus = 0;
  double q_min_mvar = 0.0;
  double q_max_mvar = 0.0;
};

struct DeviceSet {
  std::vector<IberDevice> iber;
  std::vector<SvcDevice> svc;

  std::size_t action_dim() const { return iber.size() + svc.size(); }

  void validate(const NetworkModel& net) const {
    std::unordered_set<int> used;
    auto claim = [&](int bus, const char* kind) {
      if (!net.has_bus(bus)) throw InvalidInput(std::string(kind) + " on unknown bus " + std::to_string(bus));
      if (bus == net.slack_id()) throw InvalidInput(std::string(kind) + " on the slack bus");
      if (!used.insert(bus).second)
        throw InvalidInput("bus " + std::to_string(bus) + " carries more than one controllable device");
    };
    for (const auto& d : iber) {
      claim(d.bus, "IB-ER");
      if (!(d.p_output_mw >= 0.0) || !(d.s_rated_mva >= d.p_output_mw))
        throw InvalidInput("IB-ER at bus " + std::to_string(d.bus) + " needs S >= P >= 0");
    }
    for (const auto& d : svc) {
      claim(d.bus, "SVC");
      if (!(d.q_min_mvar <= d.q_max_mvar)) throw InvalidInput("SVC at bus " + std::to_string(d.bus) + " has q_min > q_max");
    }
  }
};

/// Reactive capability of an inverter at its present active output.
inline double iber_q_limit(const IberDevice& d) {
  return std::sqrt(std::max(0.0, d.s_rated_mva * d.s_rated_mva - d.p_output_mw * d.p_output_mw));
}

struct Setpoints {
  std::vector<double> q_iber_mvar;
  std::vector<double> q_svc_mvar;
};

/// Affine map of each action coordinate in [-1, 1] onto the device's
/// current feasible reactive interval. Coordinates are IB-ERs first, then SVCs.
inline Setpoints action_to_setpoints(std::span<const double> action, const DeviceSet& devices) {
  if (action.size() != devices.action_dim()) throw ContractViolation("action dimension must be n_iber + n_svc");
  auto lerp = [](double a, double lo, double hi) {
    const double u = 0.5 * (std::clamp(a, -1.0, 1.0) + 1.0);
    return std::clamp(lo + u * (hi - lo), lo, hi);
  };
  Setpoints sp;
  sp.q_iber_mvar.reserve(devices.iber.size());
  sp.q_svc_mvar.reserve(devices.svc.size());
  std::size_t k = 0;
  for (const auto& d : devices.iber) {
    const double cap = iber_q_limit(d);
    sp.q_iber_mvar.push_back(lerp(action[k++], -cap, cap));
  }
  for (const auto& d : devices.svc) sp.q_svc_mvar.push_back(lerp(action[k++], d.q_min_mvar, d.q_max_mvar));
  return sp;
}

struct AdversaryBounds {
  double scale_lo = 0.5;
  double scale_hi = 2.0;

  void validate() const {
    if (!(scale_lo > 0.0 && scale_lo <= 1.0 && 1.0 <= scale_hi))
      throw InvalidInput("adversary bounds need 0 < scale_lo <= 1 <= scale_hi");
  }
};

/// Geometric map of an adversary coordinate a in [-1, 1] to a scale factor:
/// hi^a for a >= 0 and lo^-a otherwise, so a = 0 keeps the nominal value.
inline double adversary_scale(double a, const AdversaryBounds& bounds) {
  a = std::clamp(a, -1.0, 1.0);
  return a >= 0.0 ? std::pow(bounds.scale_hi, a) : std::pow(bounds.scale_lo, -a);
}

/// Adversary action layout: the first |E| coordinates act on r, the next |E| on x.
inline std::vector<BranchDelta> adversary_to_parameters(std::span<const double> a_o, const AdversaryBounds& bounds,
                                                        const NetworkModel& nominal) {
  const auto& br = nominal.branches();
  if (a_o.size() != 2 * br.size()) throw ContractViolation("adversary action dimension must be 2 x branch count");
  std::vector<BranchDelta> deltas(br.size());
  for (std::size_t k = 0; k < br.size(); ++k) {
    deltas[k].dr = (adversary_scale(a_o[k], bounds) - 1.0) * br[k].r;
    deltas[k].dx = (adversary_scale(a_o[br.size() + k], bounds) - 1.0) * br[k].x;
  }
  return deltas;
}

struct RewardWeights {
  double c_v = 100.0;
  double v_lo = 0.95;
  double v_hi = 1.05;
  double r_fail = -300.0;

  void validate() const {
    if (!(c_v > 0.0)) throw InvalidInput("c_v must be positive");
    if (!(v_lo < v_hi)) throw InvalidInput("v_lo must be below v_hi");
  }
};

/// R_V = -sum_i [relu(V_i - v_hi)^2 + relu(v_lo - V_i)^2]; zero iff all voltages are in band.
inline double voltage_penalty(std::span<const double> v_mag, double v_lo, double v_hi) {
  double sum = 0.0;
  for (double v : v_mag) {
    const double over = std::max(0.0, v - v_hi);
    const double under = std::max(0.0, v_lo - v);
    sum += over * over + under * under;
  }
  return -sum;
}

struct RewardBreakdown {
  double reward = 0.0;
  double loss_mw = 0.0;         // -R_P
  double voltage_term = 0.0;    // R_V (<= 0)
  bool failed = false;
};

/// r = R_P + c_v R_V with R_P = -sum_i P_i (MW); r_fail when the flow diverged.
inline RewardBreakdown compute_reward(const NetworkModel& net, const PowerFlowSolution& sol,
                                      std::span<const Injection> injections, const RewardWeights& w) {
  RewardBreakdown out;
  if (!sol.converged) {
    out.failed = true;
    out.reward = w.r_fail;
    return out;
  }
  out.loss_mw = total_loss(net, sol, injections);
  out.voltage_term = voltage_penalty(sol.v_mag, w.v_lo, w.v_hi);
  out.reward = -out.loss_mw + w.c_v * out.voltage_term;
  return out;
}

/// One operating point of a load/generation profile.
struct ProfileStep {
  double load_multiplier = 1.0;
  std::vector<double> iber_p_mw;  // one entry per IB-ER; empty keeps the device's own value
};

struct EpisodeConfig {
  int horizon = 96;
  /// Empty means a stationary section built from the case's base loads and
  /// IB-ER outputs. Otherwise row t is used for step t (rows are cycled).
  std::vector<ProfileStep> profile;
  double gamma = 0.99;
  std::uint64_t seed = 0;
  /// Hold the first adversary action of an episode for the whole episode.
  bool freeze_adversary = false;

  void validate(std::size_t n_iber) const {
    if (horizon < 1) throw InvalidInput("horizon must be >= 1");
    for (const auto& row : profile) {
      if (!(row.load_multiplier > 0.0)) throw InvalidInput("profile load multipliers must be positive");
      if (!row.iber_p_mw.empty() && row.iber_p_mw.size() != n_iber)
        throw InvalidInput("profile rows need one active output per IB-ER");
    }
  }
};

struct VvcState {
  std::vector<double> p_inj;  // p.u., every bus (slack from the solution)
  std::vector<double> q_inj;
  std::vector<double> v_mag;
  int t = 0;
};

/// Fixed affine feature map. Centres are the nominal no-control values;
/// injections share one scale per block (largest magnitude in that block),
/// voltages are scaled by half the voltage band and t is encoded as t / horizon.
struct StateNormalizer {
  Eigen::VectorXd center;
  Eigen::VectorXd scale;
  int horizon = 96;

  Eigen::VectorXd operator()(const VvcState& s) const {
    const auto n = static_cast<Eigen::Index>(s.v_mag.size());
    Eigen::VectorXd x(3 * n + 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      x(i) = s.p_inj[i];
      x(n + i) = s.q_inj[i];
      x(2 * n + i) = s.v_mag[i];
    }
    x.head(3 * n) = (x.head(3 * n) - center).cwiseQuotient(scale);
    x(3 * n) = static_cast<double>(s.t) / horizon;
    return x;
  }
};

enum class DoneReason { none, horizon, failure };

inline const char* to_string(DoneReason r) {
  switch (r) {
    case DoneReason::horizon: return "horizon";
    case DoneReason::failure: return "failure";
    default: return "none";
  }
}

struct StepResult {
  VvcState state;
  double reward = 0.0;
  bool done = false;
  DoneReason reason = DoneReason::none;
  double loss_mw = 0.0;  // 0 on failed steps
  double vr = 0.0;       // -R_V, 0 on failed steps
  bool failed = false;
  double adversary_reward() const { return -reward; }
};

struct EnvSpec {
  NetworkModel nominal;
  DeviceSet devices;
  RewardWeights weights;
  EpisodeConfig episode;
  AdversaryBounds bounds;
  PowerFlowOptions power_flow;
};

/// Outcome of applying one set of setpoints to one network at one profile row.
struct SectionOutcome {
  PowerFlowSolution solution;
  std::vector<Injection> injections;
  RewardBreakdown reward;
};

class VvcEnv {
 public:
  /// `plant` is the network the MDP steps on; it defaults to the nominal model.
  /// The online stage passes the hidden "real" network here.
  explicit VvcEnv(EnvSpec spec, std::optional<NetworkModel> plant = std::nullopt)
      : spec_(std::move(spec)), plant_(plant ? std::move(*plant) : spec_.nominal) {
    spec_.devices.validate(spec_.nominal);
    spec_.weights.validate();
    spec_.bounds.validate();
    spec_.episode.validate(spec_.devices.iber.size());
    if (plant_.bus_count() != spec_.nominal.bus_count() || plant_.branch_count() != spec_.nominal.branch_count())
      throw InvalidInput("plant network must share the nominal topology");
    build_normalizer();
  }

  const EnvSpec& spec() const { return spec_; }
  const NetworkModel& nominal() const { return spec_.nominal; }
  const NetworkModel& plant() const { return plant_; }
  const StateNormalizer& normalizer() const { return normalizer_; }
  int horizon() const { return spec_.episode.horizon; }
  int t() const { return t_; }
  bool done() const { return done_; }
  const VvcState& state() const { return state_; }

  std::size_t state_dim() const { return 3 * spec_.nominal.bus_count() + 1; }
  std::size_t action_dim() const { return spec_.devices.action_dim(); }
  std::size_t adversary_dim() const { return 2 * spec_.nominal.branch_count(); }

  Eigen::VectorXd observe(const VvcState& s) const { return normalizer_(s); }
  Eigen::VectorXd observe() const { return normalizer_(state_); }

  /// Starts an episode: t = 0, loads from the first profile row, devices at
  /// zero reactive output. A feeder that diverges at rest is a configuration error.
  VvcState reset(std::uint64_t seed) {
    seed_ = seed;
    t_ = 0;
    done_ = false;
    frozen_adversary_.reset();
    auto out = evaluate_at_rest(plant_, 0);
    if (!out.solution.converged)
      throw ConfigError("initial power flow diverged; the feeder is not solvable at rest");
    state_ = make_state(plant_, out, 0);
    return state_;
  }

  StepResult step_mdp(std::span<const double> action) { return step_on(plant_, action); }

  /// Adversary deltas are applied to the nominal model, then the step proceeds
  /// as in the MDP on the perturbed network.
  StepResult step_amdp(std::span<const double> a_p, std::span<const double> a_o) {
    if (a_o.size() != adversary_dim()) throw ContractViolation("adversary action dimension must be 2 x branch count");
    if (spec_.episode.freeze_adversary) {
      if (!frozen_adversary_) frozen_adversary_ = std::vector<double>(a_o.begin(), a_o.end());
      a_o = *frozen_adversary_;
    }
    const auto deltas = adversary_to_parameters(a_o, spec_.bounds, spec_.nominal);
    const auto scaled = apply_parameter_scaling(spec_.nominal, deltas, spec_.bounds.scale_lo, spec_.bounds.scale_hi);
    return step_on(scaled.network, a_p);
  }

  /// Profile row used for step t.
  ProfileStep profile_row(int t) const {
    if (spec_.episode.profile.empty()) return ProfileStep{};
    const auto& p = spec_.episode.profile;
    return p[static_cast<std::size_t>(t) % p.size()];
  }

  /// Devices with active outputs taken from the profile row for step t.
  DeviceSet devices_at(int t) const {
    DeviceSet d = spec_.devices;
    const auto row = profile_row(t);
    if (!row.iber_p_mw.empty())
      for (std::size_t i = 0; i < d.iber.size(); ++i) d.iber[i].p_output_mw = row.iber_p_mw[i];
    return d;
  }

  /// Nodal injections (p.u.) for step t under the given setpoints.
  std::vector<Injection> injections_at(const NetworkModel& net, int t, const Setpoints& sp) const {
    const auto row = profile_row(t);
    const auto devices = devices_at(t);
    auto inj = net.load_injections(row.load_multiplier);
    const double base = net.base_mva();
    for (std::size_t i = 0; i < devices.iber.size(); ++i) {
      auto& x = inj[net.index_of(devices.iber[i].bus)];
      x.p += devices.iber[i].p_output_mw / base;
      x.q += sp.q_iber_mvar[i] / base;
    }
    for (std::size_t i = 0; i < devices.svc.size(); ++i) inj[net.index_of(devices.svc[i].bus)].q += sp.q_svc_mvar[i] / base;
    return inj;
  }

  /// Solves one section for an arbitrary action on an arbitrary realization
  /// of the network without touching episode state. Used by the dispatch oracle.
  SectionOutcome evaluate_action(const NetworkModel& net, int t, std::span<const double> action) const {
    const auto sp = action_to_setpoints(action, devices_at(t));
    SectionOutcome out;
    out.injections = injections_at(net, t, sp);
    out.solution = solve_power_flow(net, out.injections, spec_.power_flow);
    out.reward = compute_reward(net, out.solution, out.injections, spec_.weights);
    return out;
  }

  SectionOutcome evaluate_at_rest(const NetworkModel& net, int t) const {
    Setpoints sp;
    sp.q_iber_mvar.assign(spec_.devices.iber.size(), 0.0);
    sp.q_svc_mvar.assign(spec_.devices.svc.size(), 0.0);
    SectionOutcome out;
    out.injections = injections_at(net, t, sp);
    out.solution = solve_power_flow(net, out.injections, spec_.power_flow);
    out.reward = compute_reward(net, out.solution, out.injections, spec_.weights);
    return out;
  }

 private:
  StepResult step_on(const NetworkModel& net, std::span<const double> action) {
    if (done_) throw ContractViolation("step called on a finished episode; call reset first");
    if (action.size() != action_dim()) throw ContractViolation("protagonist action dimension mismatch");
    auto out = evaluate_action(net, t_, action);
    StepResult res;
    ++t_;
    res.reward = out.reward.reward;
    if (out.reward.failed) {
      res.failed = true;
      res.done = true;
      res.reason = DoneReason::failure;
      res.state = state_;
      res.state.t = t_;
    } else {
      res.loss_mw = out.reward.loss_mw;
      res.vr = -out.reward.voltage_term;
      res.state = make_state(net, out, t_);
      if (t_ >= spec_.episode.horizon) {
        res.done = true;
        res.reason = DoneReason::horizon;
      }
    }
    state_ = res.state;
    done_ = res.done;
    return res;
  }

  VvcState make_state(const NetworkModel& net, const SectionOutcome& out, int t) const {
    VvcState s;
    const auto n = net.bus_count();
    s.p_inj.resize(n);
    s.q_inj.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      s.p_inj[i] = out.injections[i].p;
      s.q_inj[i] = out.injections[i].q;
    }
    const auto solved = solved_injections(net, out.solution);
    s.p_inj[net.slack_index()] = solved[net.slack_index()].p;
    s.q_inj[net.slack_index()] = solved[net.slack_index()].q;
    s.v_mag = out.solution.v_mag;
    s.t = t;
    return s;
  }

  void build_normalizer() {
    const auto out = evaluate_at_rest(spec_.nominal, 0);
    if (!out.solution.converged) throw ConfigError("nominal network diverges at rest");
    const auto s = make_state(spec_.nominal, out, 0);
    const auto n = static_cast<Eigen::Index>(s.v_mag.size());
    normalizer_.horizon = spec_.episode.horizon;
    normalizer_.center.resize(3 * n);
    normalizer_.scale.resize(3 * n);
    double p_scale = 0.0, q_scale = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      normalizer_.center(i) = s.p_inj[i];
      normalizer_.center(n + i) = s.q_inj[i];
      normalizer_.center(2 * n + i) = s.v_mag[i];
      p_scale = std::max(p_scale, std::abs(s.p_inj[i]));
      q_scale = std::max(q_scale, std::abs(s.q_inj[i]));
    }
    const double v_scale = 0.5 * (spec_.weights.v_hi - spec_.weights.v_lo);
    normalizer_.scale.head(n).setConstant(p_scale > 1e-9 ? p_scale : 1.0);
    normalizer_.scale.segment(n, n).setConstant(q_scale > 1e-9 ? q_scale : 1.0);
    normalizer_.scale.tail(n).setConstant(v_scale);
  }

  EnvSpec spec_;
  NetworkModel plant_;
  StateNormalizer normalizer_;
  VvcState state_;
  int t_ = 0;
  bool done_ = true;
  std::uint64_t seed_ = 0;
  std::optional<std::vector<double>> frozen_adversary_;
};

/// Hidden "real" network for the online stage: every branch r and x scaled
/// by an independent factor drawn uniformly from [scale_lo, scale_hi].
inline NetworkModel draw_hidden_model(const NetworkModel& nominal, const AdversaryBounds& bounds, std::uint64_t seed,
                                      std::vector<double>* factors = nullptr) {
  Rng rng(mix_seed(seed ^ 0x6869646465ULL));
  std::vector<Branch> br = nominal.branches();
  if (factors) factors->clear();
  for (auto& b : br) {
    const double kr = rng.uniform(bounds.scale_lo, bounds.scale_hi);
    const double kx = rng.uniform(bounds.scale_lo, bounds.scale_hi);
    b.r *= kr;
    b.x *= kx;
    if (factors) {
      factors->push_back(kr);
      factors->push_back(kx);
    }
  }
  return nominal.with_branches(std::move(br));
}

}  // namespace vvcrl
