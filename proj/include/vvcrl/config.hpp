#pragma once

// Experiment configuration files (JSON) and the JSON forms of every agent
// setting. Unknown keys are rejected so that typos surface as errors.

#include <cstdint>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "vvcrl/case_io.hpp"
#include "vvcrl/errors.hpp"
#include "vvcrl/jasac.hpp"
#include "vvcrl/oracle.hpp"

namespace vvcrl {

using detail::field;
using detail::field_or;

inline constexpr const char* kVersion = "vvcrl 0.1.0";

using ojson = nlohmann::ordered_json;

enum class Stage { offline, online };
enum class Algorithm { sac, asac, jasac, presac };

inline const char* to_string(Stage s) { return s == Stage::offline ? "offline" : "online"; }
inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::sac: return "sac";
    case Algorithm::asac: return "asac";
    case Algorithm::jasac: return "jasac";
    case Algorithm::presac: return "presac";
  }
  return "?";
}
inline const char* to_string(TargetSchedule s) { return s == TargetSchedule::per_step ? "per_step" : "per_episode"; }

inline Algorithm parse_algorithm(const std::string& s, const std::string& where = "algorithm") {
  if (s == "sac") return Algorithm::sac;
  if (s == "asac") return Algorithm::asac;
  if (s == "jasac") return Algorithm::jasac;
  if (s == "presac") return Algorithm::presac;
  throw ConfigError("unknown algorithm '" + s + "' (expected sac, asac, jasac or presac)", where);
}

inline Stage parse_stage(const std::string& s, const std::string& where = "stage") {
  if (s == "offline") return Stage::offline;
  if (s == "online") return Stage::online;
  throw ConfigError("unknown stage '" + s + "' (expected offline or online)", where);
}

inline TargetSchedule parse_schedule(const std::string& s, const std::string& where) {
  if (s == "per_step") return TargetSchedule::per_step;
  if (s == "per_episode") return TargetSchedule::per_episode;
  throw ConfigError("unknown target schedule '" + s + "'", where);
}

namespace detail {
inline void reject_unknown(const nlohmann::json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError("expected an object", where);
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : obj.items())
    if (!ok.count(k)) throw ConfigError("unknown field '" + k + "'", where);
}

template <class T>
void maybe(const nlohmann::json& obj, const char* key, T& out, const std::string& where) {
  if (obj.contains(key)) out = field<T>(obj, key, where);
}
}  // namespace detail

// ---------------------------------------------------------------------------

/// Everything an agent needs, in file units. eta is the target retain factor
/// (tau = 1 - eta).
struct AgentSettings {
  double alpha = 0.07;
  double alpha_o = 0.04;
  double gamma = 0.99;
  double eta = 0.995;
  std::size_t batch_size = 256;
  int hidden_width = 256;
  int hidden_layers = 2;
  double learning_rate = 1e-3;
  std::size_t buffer_capacity = 400'000;
  TargetSchedule target_schedule = TargetSchedule::per_step;
  int critic_updates = 1;
  int protagonist_updates = 1;
  int adversary_updates = 1;
  double policy_final_scale = 0.01;

  SacConfig sac() const {
    SacConfig c;
    c.alpha = alpha;
    c.gamma = gamma;
    c.tau = 1.0 - eta;
    c.batch_size = batch_size;
    c.hidden.assign(static_cast<std::size_t>(std::max(hidden_layers, 0)), hidden_width);
    c.adam.learning_rate = learning_rate;
    c.policy_final_scale = policy_final_scale;
    c.target_schedule = target_schedule;
    return c;
  }

  AdversarialConfig adversarial(CriticMode mode) const {
    AdversarialConfig c;
    c.base = sac();
    c.alpha_o = alpha_o;
    c.mode = mode;
    c.critic_updates = critic_updates;
    c.protagonist_updates = protagonist_updates;
    c.adversary_updates = adversary_updates;
    return c;
  }

  void validate() const {
    if (hidden_width <= 0 || hidden_layers < 1) throw ConfigError("need at least one hidden layer of positive width", "agent");
    if (!(eta > 0.0 && eta < 1.0)) throw ConfigError("eta must lie in (0, 1)", "agent.eta");
    if (buffer_capacity == 0) throw ConfigError("must be positive", "agent.buffer_capacity");
    sac().validate();
    adversarial(CriticMode::joint).validate();
  }
};

inline ojson to_json(const AgentSettings& a) {
  return ojson{{"alpha", a.alpha},
               {"alpha_o", a.alpha_o},
               {"gamma", a.gamma},
               {"eta", a.eta},
               {"batch_size", a.batch_size},
               {"hidden_width", a.hidden_width},
               {"hidden_layers", a.hidden_layers},
               {"learning_rate", a.learning_rate},
               {"buffer_capacity", a.buffer_capacity},
               {"target_schedule", to_string(a.target_schedule)},
               {"critic_updates", a.critic_updates},
               {"protagonist_updates", a.protagonist_updates},
               {"adversary_updates", a.adversary_updates},
               {"policy_final_scale", a.policy_final_scale}};
}

inline void overlay(AgentSettings& a, const nlohmann::json& j, const std::string& where) {
  using detail::maybe;
  detail::reject_unknown(j,
                         {"alpha", "alpha_o", "gamma", "eta", "batch_size", "hidden_width", "hidden_layers", "learning_rate",
                          "buffer_capacity", "target_schedule", "critic_updates", "protagonist_updates", "adversary_updates",
                          "policy_final_scale"},
                         where);
  maybe(j, "alpha", a.alpha, where);
  maybe(j, "alpha_o", a.alpha_o, where);
  maybe(j, "gamma", a.gamma, where);
  maybe(j, "eta", a.eta, where);
  maybe(j, "batch_size", a.batch_size, where);
  maybe(j, "hidden_width", a.hidden_width, where);
  maybe(j, "hidden_layers", a.hidden_layers, where);
  maybe(j, "learning_rate", a.learning_rate, where);
  maybe(j, "buffer_capacity", a.buffer_capacity, where);
  if (j.contains("target_schedule"))
    a.target_schedule = parse_schedule(field<std::string>(j, "target_schedule", where), where + ".target_schedule");
  maybe(j, "critic_updates", a.critic_updates, where);
  maybe(j, "protagonist_updates", a.protagonist_updates, where);
  maybe(j, "adversary_updates", a.adversary_updates, where);
  maybe(j, "policy_final_scale", a.policy_final_scale, where);
}

// -- SacConfig / AdversarialConfig, as stored in checkpoints ------------------

inline ojson to_json(const SacConfig& c) {
  return ojson{{"alpha", c.alpha},
               {"gamma", c.gamma},
               {"tau", c.tau},
               {"batch_size", c.batch_size},
               {"hidden", c.hidden},
               {"learning_rate", c.adam.learning_rate},
               {"beta1", c.adam.beta1},
               {"beta2", c.adam.beta2},
               {"adam_epsilon", c.adam.epsilon},
               {"log_std_min", c.policy.log_std_min},
               {"log_std_max", c.policy.log_std_max},
               {"boundary_epsilon", c.policy.boundary_epsilon},
               {"policy_final_scale", c.policy_final_scale},
               {"target_schedule", to_string(c.target_schedule)}};
}

inline SacConfig sac_config_from_json(const nlohmann::json& j, const std::string& where) {
  SacConfig c;
  c.alpha = field<double>(j, "alpha", where);
  c.gamma = field<double>(j, "gamma", where);
  c.tau = field<double>(j, "tau", where);
  c.batch_size = field<std::size_t>(j, "batch_size", where);
  c.hidden = field<std::vector<int>>(j, "hidden", where);
  c.adam.learning_rate = field<double>(j, "learning_rate", where);
  c.adam.beta1 = field<double>(j, "beta1", where);
  c.adam.beta2 = field<double>(j, "beta2", where);
  c.adam.epsilon = field<double>(j, "adam_epsilon", where);
  c.policy.log_std_min = field<double>(j, "log_std_min", where);
  c.policy.log_std_max = field<double>(j, "log_std_max", where);
  c.policy.boundary_epsilon = field<double>(j, "boundary_epsilon", where);
  c.policy_final_scale = field<double>(j, "policy_final_scale", where);
  c.target_schedule = parse_schedule(field<std::string>(j, "target_schedule", where), where);
  c.validate();
  return c;
}

inline ojson to_json(const AdversarialConfig& c) {
  return ojson{{"base", to_json(c.base)},
               {"alpha_o", c.alpha_o},
               {"mode", to_string(c.mode)},
               {"critic_updates", c.critic_updates},
               {"protagonist_updates", c.protagonist_updates},
               {"adversary_updates", c.adversary_updates}};
}

inline AdversarialConfig adversarial_config_from_json(const nlohmann::json& j, const std::string& where) {
  AdversarialConfig c;
  if (!j.contains("base")) throw ConfigError("missing field 'base'", where);
  c.base = sac_config_from_json(j.at("base"), where + ".base");
  c.alpha_o = field<double>(j, "alpha_o", where);
  const auto mode = field<std::string>(j, "mode", where);
  if (mode == "joint") c.mode = CriticMode::joint;
  else if (mode == "separate") c.mode = CriticMode::separate;
  else throw ConfigError("unknown critic mode '" + mode + "'", where);
  c.critic_updates = field<int>(j, "critic_updates", where);
  c.protagonist_updates = field<int>(j, "protagonist_updates", where);
  c.adversary_updates = field<int>(j, "adversary_updates", where);
  c.validate();  // re-checks the sign convention after every load
  return c;
}

inline ojson to_json(const DistillConfig& d) {
  return ojson{{"points", d.points},
               {"max_epochs", d.max_epochs},
               {"batch_size", d.batch_size},
               {"adversary_samples", d.adversary_samples},
               {"rmse_fraction", d.rmse_fraction}};
}

inline void overlay(DistillConfig& d, const nlohmann::json& j, const std::string& where) {
  using detail::maybe;
  detail::reject_unknown(j, {"points", "max_epochs", "batch_size", "adversary_samples", "rmse_fraction"}, where);
  maybe(j, "points", d.points, where);
  maybe(j, "max_epochs", d.max_epochs, where);
  maybe(j, "batch_size", d.batch_size, where);
  maybe(j, "adversary_samples", d.adversary_samples, where);
  maybe(j, "rmse_fraction", d.rmse_fraction, where);
  if (d.points == 0 || d.max_epochs < 0 || d.batch_size == 0 || d.adversary_samples == 0 || !(d.rmse_fraction > 0.0))
    throw ConfigError("distillation settings out of range", where);
}

inline ojson to_json(const DistillReport& r) {
  return ojson{{"method", r.method},       {"points", r.points},       {"epochs", r.epochs},
               {"target_std", r.target_std}, {"rmse_q1", r.rmse_q1},     {"rmse_q2", r.rmse_q2},
               {"threshold", r.threshold},  {"within_threshold", r.within_threshold}, {"warning", r.warning}};
}

inline DistillReport distill_report_from_json(const nlohmann::json& j, const std::string& where) {
  DistillReport r;
  r.method = field<std::string>(j, "method", where);
  r.points = field<std::size_t>(j, "points", where);
  r.epochs = field<int>(j, "epochs", where);
  r.target_std = field<double>(j, "target_std", where);
  r.rmse_q1 = field<double>(j, "rmse_q1", where);
  r.rmse_q2 = field<double>(j, "rmse_q2", where);
  r.threshold = field<double>(j, "threshold", where);
  r.within_threshold = field<bool>(j, "within_threshold", where);
  r.warning = field<std::string>(j, "warning", where);
  return r;
}

inline ojson to_json(const OracleConfig& o) {
  return ojson{{"population", o.population},       {"elite", o.elite},
               {"generations", o.generations},     {"polish_passes", o.polish_passes},
               {"initial_std", o.initial_std},     {"seed", o.seed}};
}

inline void overlay(OracleConfig& o, const nlohmann::json& j, const std::string& where) {
  using detail::maybe;
  detail::reject_unknown(j, {"population", "elite", "generations", "polish_passes", "initial_std", "seed"}, where);
  maybe(j, "population", o.population, where);
  maybe(j, "elite", o.elite, where);
  maybe(j, "generations", o.generations, where);
  maybe(j, "polish_passes", o.polish_passes, where);
  maybe(j, "initial_std", o.initial_std, where);
  maybe(j, "seed", o.seed, where);
  o.validate();
}

// ---------------------------------------------------------------------------

struct ExperimentConfig {
  std::string case_ref = "case33";
  Stage stage = Stage::offline;
  Algorithm algorithm = Algorithm::jasac;
  int episodes = 500;
  std::vector<std::uint64_t> seeds{0};
  int horizon = 96;
  std::string profile;                   // CSV path; empty = stationary section
  int gradient_steps_per_episode = -1;   // -1: one per environment step of the episode
  int eval_interval = 10;                // deterministic evaluation every k episodes (0 = never)
  RewardWeights reward;
  AdversaryBounds bounds;
  bool freeze_adversary = false;
  AgentSettings agent;
  DistillConfig distill;
  OracleConfig oracle;
  std::string from_checkpoint;  // online; "{seed}" is replaced by the run seed
  std::optional<std::uint64_t> hidden_model_seed;  // online; default: the run seed
  std::string output = "runs";

  int gradient_steps() const { return gradient_steps_per_episode < 0 ? horizon : gradient_steps_per_episode; }

  void validate() const {
    if (episodes < 0) throw ConfigError("must be non-negative", "episodes");
    if (horizon < 1) throw ConfigError("must be >= 1", "horizon");
    if (eval_interval < 0) throw ConfigError("must be non-negative", "eval_interval");
    reward.validate();
    bounds.validate();
    agent.validate();
    oracle.validate();
    if (stage == Stage::offline && algorithm == Algorithm::presac)
      throw ConfigError("presac is an online algorithm (offline SAC produces its checkpoint)", "algorithm");
    if (stage == Stage::online && algorithm != Algorithm::sac && from_checkpoint.empty())
      throw ConfigError("online " + std::string(to_string(algorithm)) + " needs from_checkpoint", "online.from_checkpoint");
  }
};

/// Paper defaults that differ between the two feeders. Anything else falls
/// back to the 33-bus values.
inline void apply_case_defaults(ExperimentConfig& c, const std::string& case_ref) {
  const bool big = case_ref.find("69") != std::string::npos;
  c.reward.c_v = big ? 1000.0 : 100.0;
  c.agent.alpha = big ? 0.03 : 0.07;
  c.agent.alpha_o = big ? 0.02 : 0.04;
  c.agent.hidden_layers = big ? 3 : 2;
}

inline ojson to_json(const ExperimentConfig& c) {
  ojson j;
  j["case"] = c.case_ref;
  j["stage"] = to_string(c.stage);
  j["algorithm"] = to_string(c.algorithm);
  j["episodes"] = c.episodes;
  j["seeds"] = c.seeds;
  j["horizon"] = c.horizon;
  j["profile"] = c.profile;
  j["gradient_steps_per_episode"] = c.gradient_steps();
  j["eval_interval"] = c.eval_interval;
  j["reward"] = ojson{{"c_v", c.reward.c_v}, {"v_lo", c.reward.v_lo}, {"v_hi", c.reward.v_hi}, {"r_fail", c.reward.r_fail}};
  j["adversary"] = ojson{{"scale_lo", c.bounds.scale_lo}, {"scale_hi", c.bounds.scale_hi}, {"freeze", c.freeze_adversary}};
  j["agent"] = to_json(c.agent);
  j["distill"] = to_json(c.distill);
  j["oracle"] = to_json(c.oracle);
  ojson online;
  online["from_checkpoint"] = c.from_checkpoint;
  online["hidden_model_seed"] = c.hidden_model_seed ? ojson(*c.hidden_model_seed) : ojson(nullptr);
  j["online"] = online;
  j["output"] = c.output;
  return j;
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& text, const std::string& where = "seeds");

inline ExperimentConfig parse_experiment(std::string_view text, const std::string& origin = "<config>") {
  using detail::maybe;
  const auto j = detail::parse_json(text, origin);
  detail::reject_unknown(j,
                         {"case", "stage", "algorithm", "episodes", "seeds", "horizon", "profile", "gradient_steps_per_episode",
                          "eval_interval", "reward", "adversary", "agent", "distill", "oracle", "online", "output"},
                         origin);
  ExperimentConfig c;
  c.case_ref = field_or<std::string>(j, "case", c.case_ref, origin);
  apply_case_defaults(c, c.case_ref);
  if (j.contains("stage")) c.stage = parse_stage(field<std::string>(j, "stage", origin), origin + " stage");
  if (j.contains("algorithm")) c.algorithm = parse_algorithm(field<std::string>(j, "algorithm", origin), origin + " algorithm");
  maybe(j, "episodes", c.episodes, origin);
  if (j.contains("seeds")) {
    if (j.at("seeds").is_string()) c.seeds = parse_seed_list(j.at("seeds").get<std::string>(), origin + " seeds");
    else c.seeds = field<std::vector<std::uint64_t>>(j, "seeds", origin);
  }
  maybe(j, "horizon", c.horizon, origin);
  maybe(j, "profile", c.profile, origin);
  maybe(j, "gradient_steps_per_episode", c.gradient_steps_per_episode, origin);
  maybe(j, "eval_interval", c.eval_interval, origin);
  if (j.contains("reward")) {
    const auto& r = j.at("reward");
    const auto w = origin + " reward";
    detail::reject_unknown(r, {"c_v", "v_lo", "v_hi", "r_fail"}, w);
    maybe(r, "c_v", c.reward.c_v, w);
    maybe(r, "v_lo", c.reward.v_lo, w);
    maybe(r, "v_hi", c.reward.v_hi, w);
    maybe(r, "r_fail", c.reward.r_fail, w);
  }
  if (j.contains("adversary")) {
    const auto& a = j.at("adversary");
    const auto w = origin + " adversary";
    detail::reject_unknown(a, {"scale_lo", "scale_hi", "freeze"}, w);
    maybe(a, "scale_lo", c.bounds.scale_lo, w);
    maybe(a, "scale_hi", c.bounds.scale_hi, w);
    maybe(a, "freeze", c.freeze_adversary, w);
  }
  if (j.contains("agent")) overlay(c.agent, j.at("agent"), origin + " agent");
  if (j.contains("distill")) overlay(c.distill, j.at("distill"), origin + " distill");
  if (j.contains("oracle")) overlay(c.oracle, j.at("oracle"), origin + " oracle");
  if (j.contains("online")) {
    const auto& o = j.at("online");
    const auto w = origin + " online";
    detail::reject_unknown(o, {"from_checkpoint", "hidden_model_seed"}, w);
    maybe(o, "from_checkpoint", c.from_checkpoint, w);
    if (o.contains("hidden_model_seed") && !o.at("hidden_model_seed").is_null())
      c.hidden_model_seed = field<std::uint64_t>(o, "hidden_model_seed", w);
  }
  maybe(j, "output", c.output, origin);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(e.what(), origin);
  }
  return c;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found", path.string());
  return parse_experiment(detail::read_text_file(path), path.string());
}

/// "3", "0,2,5" or "0..4" (inclusive range).
inline std::vector<std::uint64_t> parse_seed_list(const std::string& text, const std::string& where) {
  std::vector<std::uint64_t> out;
  auto number = [&](const std::string& s) -> std::uint64_t {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (s.empty() || used != s.size() || s[0] == '-') throw ConfigError("bad seed '" + s + "'", where);
    return v;
  };
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (const auto dots = part.find(".."); dots != std::string::npos) {
      const auto lo = number(part.substr(0, dots)), hi = number(part.substr(dots + 2));
      if (hi < lo) throw ConfigError("empty seed range '" + part + "'", where);
      for (auto s = lo; s <= hi; ++s) out.push_back(s);
    } else {
      out.push_back(number(part));
    }
  }
  if (out.empty()) throw ConfigError("no seeds given", where);
  return out;
}

}  // namespace vvcrl
