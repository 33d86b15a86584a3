#pragma once

// Two-stage orchestration: offline training on the nominal model (MDP for SAC,
// AMDP for ASAC/JASAC), transfer, online continued learning on a hidden
// perturbed plant, evaluation against the dispatch oracle, multi-seed suites.

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "vvcrl/checkpoint.hpp"
#include "vvcrl/metrics.hpp"
#include "vvcrl/oracle.hpp"
#include "vvcrl/replay.hpp"

namespace vvcrl {

struct Scenario {
  CaseFile case_file;
  std::filesystem::path case_path;
  EnvSpec spec;
};

inline Scenario build_scenario(const ExperimentConfig& cfg) {
  Scenario sc;
  sc.case_path = resolve_case_path(cfg.case_ref);
  sc.case_file = load_case_file(sc.case_path);
  auto net = to_network(sc.case_file);
  auto devices = to_devices(sc.case_file);
  EpisodeConfig ep;
  ep.horizon = cfg.horizon;
  ep.gamma = cfg.agent.gamma;
  ep.freeze_adversary = cfg.freeze_adversary;
  if (!cfg.profile.empty()) {
    ep.profile = load_profile_csv(cfg.profile, devices.iber.size(), static_cast<std::size_t>(cfg.horizon));
  } else if (sc.case_file.load_multiplier != 1.0) {
    ep.profile = {ProfileStep{sc.case_file.load_multiplier, {}}};
  }
  PowerFlowOptions pf;
  pf.v_slack = sc.case_file.slack_voltage_pu;
  sc.spec = EnvSpec{std::move(net), std::move(devices), cfg.reward, std::move(ep), cfg.bounds, pf};
  return sc;
}

inline std::string case_label(const Scenario& sc) {
  return sc.case_file.name.empty() ? sc.case_path.stem().string() : sc.case_file.name;
}

// ---------------------------------------------------------------------------
// Episode bookkeeping

struct EpisodeTally {
  int steps = 0;
  int ok_steps = 0;
  int failures = 0;
  double loss = 0.0;
  double vr = 0.0;
  double reward = 0.0;

  void add(const StepResult& r) {
    ++steps;
    reward += r.reward;
    if (r.failed) {
      ++failures;
    } else {
      ++ok_steps;
      loss += r.loss_mw;
      vr += r.vr;
    }
  }
  double mean_loss() const { return ok_steps ? loss / ok_steps : 0.0; }
  double mean_vr() const { return ok_steps ? vr / ok_steps : 0.0; }
  double mean_neg_reward() const { return steps ? -reward / steps : 0.0; }
};

/// Maps (normalized observation, step index) to a protagonist action.
using PolicyFn = std::function<Vector(const Vector& obs, int t)>;

/// Plays one episode without learning. The environment steps on its plant.
inline EpisodeTally play_episode(VvcEnv& env, const PolicyFn& policy, std::uint64_t seed) {
  env.reset(seed);
  EpisodeTally tally;
  while (!env.done()) {
    const Vector a = policy(env.observe(), env.t());
    tally.add(env.step_mdp(std::span<const double>(a.data(), static_cast<std::size_t>(a.size()))));
  }
  return tally;
}

struct EvalSummary {
  Stats loss;  // over episodes, of step-averaged loss
  Stats vr;
  Stats neg_reward;
  std::optional<double> baseline_loss;
  double inc_mean = 0.0;  // loss.mean - baseline (0 without a baseline)
  double start_loss = 0.0;  // first episode
  double start_vr = 0.0;
  int failures = 0;
};

inline EvalSummary summarize(const std::vector<EpisodeTally>& episodes, std::optional<double> baseline_loss) {
  std::vector<double> loss, vr, nr;
  EvalSummary s;
  for (const auto& e : episodes) {
    loss.push_back(e.mean_loss());
    vr.push_back(e.mean_vr());
    nr.push_back(e.mean_neg_reward());
    s.failures += e.failures;
  }
  s.loss = stats_of(loss);
  s.vr = stats_of(vr);
  s.neg_reward = stats_of(nr);
  s.baseline_loss = baseline_loss;
  if (baseline_loss) s.inc_mean = s.loss.mean - *baseline_loss;
  if (!episodes.empty()) {
    s.start_loss = episodes.front().mean_loss();
    s.start_vr = episodes.front().mean_vr();
  }
  return s;
}

/// Runs `policy` for `episodes` episodes without learning.
inline EvalSummary evaluate(VvcEnv& env, const PolicyFn& policy, int episodes, std::optional<double> baseline_loss = {},
                            std::uint64_t seed = 0) {
  std::vector<EpisodeTally> t;
  for (int e = 0; e < episodes; ++e) t.push_back(play_episode(env, policy, seed));
  return summarize(t, baseline_loss);
}

inline PolicyFn deterministic_policy(const nn::GaussianPolicy& pi) {
  return [&pi](const Vector& obs, int) -> Vector { return pi.deterministic(Matrix(obs)).col(0); };
}

/// Replays the oracle's per-step setpoints.
inline PolicyFn oracle_policy(const OracleResult& o) {
  return [&o](const Vector&, int t) -> Vector {
    const auto& a = o.steps.at(static_cast<std::size_t>(t)).action;
    return Eigen::Map<const Vector>(a.data(), static_cast<Eigen::Index>(a.size()));
  };
}

// ---------------------------------------------------------------------------

struct RunOutput {
  MetricsFile metrics;
  std::vector<double> wall_time_s;  // per episode; kept out of the metrics file
  std::optional<Checkpoint> checkpoint;
  bool aborted = false;
  std::string abort_reason;
  // online only
  std::optional<OracleResult> oracle;
  std::optional<EvalSummary> start_deterministic;
  std::vector<double> hidden_factors;
};

using EpisodeCallback = std::function<void(const MetricsRecord&)>;

namespace detail {

inline Matrix state_pool(const ReplayBuffer<JointTransition>& buf, std::size_t max_states, Rng& rng) {
  const std::size_t n = std::min(buf.size(), max_states);
  if (n == 0) return {};
  Matrix out(buf[0].s.size(), static_cast<Eigen::Index>(n));
  if (buf.size() <= max_states) {
    for (std::size_t i = 0; i < n; ++i) out.col(static_cast<Eigen::Index>(i)) = buf[i].s;
  } else {
    for (std::size_t i = 0; i < n; ++i) out.col(static_cast<Eigen::Index>(i)) = buf[rng.index(buf.size())].s;
  }
  return out;
}

struct Streams {
  Rng agent, act, batch, extra;
  explicit Streams(std::uint64_t seed) : agent(0), act(0), batch(0), extra(0) {
    Rng root(mix_seed(seed));
    agent = root.derive(1);
    act = root.derive(2);
    batch = root.derive(3);
    extra = root.derive(4);
  }
};

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline bool eval_due(const ExperimentConfig& cfg, int episode) {
  if (cfg.eval_interval <= 0) return false;
  return (episode + 1) % cfg.eval_interval == 0 || episode + 1 == cfg.episodes;
}

inline void fill_eval(MetricsRecord& rec, const EvalSummary& e) {
  rec.eval_loss_mw = e.loss.mean;
  rec.eval_vr = e.vr.mean;
  rec.eval_neg_reward = e.neg_reward.mean;
}

inline ojson run_meta(const ExperimentConfig& cfg, const Scenario& sc, std::uint64_t seed, const VvcEnv& env) {
  return ojson{{"case", case_label(sc)},
               {"algorithm", to_string(cfg.algorithm)},
               {"seed", seed},
               {"episodes", cfg.episodes},
               {"state_dim", env.state_dim()},
               {"action_dim", env.action_dim()},
               {"adversary_dim", env.adversary_dim()},
               {"version", kVersion}};
}

inline ojson config_with_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  ojson j = to_json(cfg);
  j["seed"] = seed;
  return j;
}

}  // namespace detail

/// Offline stage for one seed. SAC trains on the nominal MDP; ASAC and JASAC on
/// the AMDP, and their checkpoint also carries the transferred SAC agent.
inline RunOutput run_offline(const ExperimentConfig& cfg, std::uint64_t seed, const EpisodeCallback& on_episode = {}) {
  if (cfg.stage != Stage::offline) throw ConfigError("run_offline needs stage=offline", "stage");
  const auto sc = build_scenario(cfg);
  VvcEnv env(sc.spec);
  VvcEnv eval_env(sc.spec);
  detail::Streams rng(seed);
  const int sd = static_cast<int>(env.state_dim()), ad = static_cast<int>(env.action_dim()),
            od = static_cast<int>(env.adversary_dim());
  const bool adversarial = cfg.algorithm != Algorithm::sac;

  std::optional<SacAgent> sac;
  std::optional<AdversarialAgent> adv;
  if (adversarial)
    adv = AdversarialAgent::create(sd, ad, od, cfg.agent.adversarial(cfg.algorithm == Algorithm::jasac ? CriticMode::joint : CriticMode::separate),
                                   rng.agent);
  else
    sac = SacAgent::create(sd, ad, cfg.agent.sac(), rng.agent);

  ReplayBuffer<JointTransition> buffer(cfg.agent.buffer_capacity);
  const std::size_t bs = cfg.agent.batch_size;
  RunOutput out;
  out.metrics.config = detail::config_with_seed(cfg, seed);
  const nn::GaussianPolicy& actor = adversarial ? adv->protagonist() : sac->policy();

  for (int ep = 0; ep < cfg.episodes && !out.aborted; ++ep) {
    const auto t0 = std::chrono::steady_clock::now();
    env.reset(seed);
    EpisodeTally tally;
    Vector obs = env.observe();
    while (!env.done()) {
      JointTransition tr;
      tr.s = obs;
      StepResult res;
      if (adversarial) {
        tr.a_p = adv->act_protagonist(obs, false, rng.act);
        tr.a_o = adv->act_adversary(obs, false, rng.act);
        res = env.step_amdp(std::span<const double>(tr.a_p.data(), static_cast<std::size_t>(ad)),
                            std::span<const double>(tr.a_o.data(), static_cast<std::size_t>(od)));
      } else {
        tr.a_p = sac->act(obs, false, rng.act);
        tr.a_o.resize(0);
        res = env.step_mdp(std::span<const double>(tr.a_p.data(), static_cast<std::size_t>(ad)));
      }
      obs = env.observe(res.state);
      tr.r = res.reward;
      tr.s_next = obs;
      tr.done = res.done;
      tr.reason = res.reason;
      buffer.push(std::move(tr));
      tally.add(res);
    }
    const int grad_steps = cfg.gradient_steps_per_episode < 0 ? tally.steps : cfg.gradient_steps_per_episode;
    try {
      if (buffer.size() >= bs) {
        for (int g = 0; g < grad_steps; ++g) {
          const Batch b = buffer.sample(bs, rng.batch);
          if (adversarial) adv->train_cycle(b, rng.batch);
          else sac->train_step(b, rng.batch);
        }
      }
      if (adversarial) adv->end_episode();
      else sac->end_episode();
    } catch (const NumericalError& e) {
      out.aborted = true;
      out.abort_reason = "episode " + std::to_string(ep) + ": " + e.what();
    }

    MetricsRecord rec;
    rec.seed = seed;
    rec.episode = ep;
    rec.steps = tally.steps;
    rec.loss_mw = tally.mean_loss();
    rec.vr = tally.mean_vr();
    rec.neg_reward = tally.mean_neg_reward();
    rec.failures = tally.failures;
    if (!out.aborted && detail::eval_due(cfg, ep)) detail::fill_eval(rec, evaluate(eval_env, deterministic_policy(actor), 1, {}, seed));
    out.metrics.records.push_back(rec);
    out.wall_time_s.push_back(detail::seconds_since(t0));
    if (on_episode) on_episode(rec);
  }

  Checkpoint ck;
  ck.algorithm = to_string(cfg.algorithm);
  ck.meta = detail::run_meta(cfg, sc, seed, env);
  if (adversarial) {
    Matrix pool = detail::state_pool(buffer, 20000, rng.extra);
    if (pool.cols() == 0) pool = Matrix(env.observe(env.reset(seed)));
    auto tr = transfer_to_sac(*adv, pool, cfg.distill, rng.extra);
    ck.sac = std::move(tr.agent);
    ck.transfer = tr.report;
    ck.adversarial = std::move(*adv);
    out.metrics.footer["transfer"] = to_json(*ck.transfer);
  } else {
    ck.sac = std::move(*sac);
  }
  out.checkpoint = std::move(ck);
  if (out.aborted) out.metrics.footer["aborted"] = out.abort_reason;
  return out;
}

inline std::string substitute_seed(std::string path, std::uint64_t seed) {
  const std::string key = "{seed}";
  for (auto pos = path.find(key); pos != std::string::npos; pos = path.find(key)) path.replace(pos, key.size(), std::to_string(seed));
  return path;
}

/// Online stage for one seed on the hidden plant. `start` is the agent to
/// continue with (fresh SAC when empty). The replay buffer starts empty.
inline RunOutput run_online(const ExperimentConfig& cfg, std::uint64_t seed, const std::optional<Checkpoint>& start,
                            const EpisodeCallback& on_episode = {}) {
  if (cfg.stage != Stage::online) throw ConfigError("run_online needs stage=online", "stage");
  const auto sc = build_scenario(cfg);
  RunOutput out;
  const std::uint64_t hidden_seed = cfg.hidden_model_seed.value_or(seed);
  const NetworkModel plant = draw_hidden_model(sc.spec.nominal, cfg.bounds, hidden_seed, &out.hidden_factors);
  VvcEnv env(sc.spec, plant);
  VvcEnv eval_env(sc.spec, plant);
  detail::Streams rng(seed);
  const int sd = static_cast<int>(env.state_dim()), ad = static_cast<int>(env.action_dim());

  std::optional<SacAgent> agent;
  if (start) {
    const auto& a = start->online_agent();
    const std::string ck_case = start->meta.value("case", std::string());
    if (a.state_dim() != sd || a.action_dim() != ad)
      throw ConfigError("checkpoint dimensions (" + std::to_string(a.state_dim()) + ", " + std::to_string(a.action_dim()) +
                            ") do not match case '" + case_label(sc) + "' (" + std::to_string(sd) + ", " + std::to_string(ad) + ")",
                        "checkpoint");
    if (!ck_case.empty() && ck_case != case_label(sc))
      throw ConfigError("checkpoint was trained on case '" + ck_case + "', not '" + case_label(sc) + "'", "checkpoint");
    agent = a;
  } else {
    if (cfg.algorithm != Algorithm::sac) throw ConfigError("online " + std::string(to_string(cfg.algorithm)) + " needs a checkpoint", "online");
    agent = SacAgent::create(sd, ad, cfg.agent.sac(), rng.agent);
  }

  out.oracle = oracle_dispatch(env, plant, cfg.oracle);
  const double base = out.oracle->loss_mw;
  out.start_deterministic = evaluate(eval_env, deterministic_policy(agent->policy()), 1, base, seed);
  out.metrics.config = detail::config_with_seed(cfg, seed);

  ReplayBuffer<JointTransition> buffer(cfg.agent.buffer_capacity);
  const std::size_t bs = cfg.agent.batch_size;
  for (int ep = 0; ep < cfg.episodes && !out.aborted; ++ep) {
    const auto t0 = std::chrono::steady_clock::now();
    env.reset(seed);
    EpisodeTally tally;
    Vector obs = env.observe();
    while (!env.done()) {
      JointTransition tr;
      tr.s = obs;
      tr.a_p = agent->act(obs, false, rng.act);
      tr.a_o.resize(0);
      const auto res = env.step_mdp(std::span<const double>(tr.a_p.data(), static_cast<std::size_t>(ad)));
      obs = env.observe(res.state);
      tr.r = res.reward;
      tr.s_next = obs;
      tr.done = res.done;
      tr.reason = res.reason;
      buffer.push(std::move(tr));
      tally.add(res);
    }
    const int grad_steps = cfg.gradient_steps_per_episode < 0 ? tally.steps : cfg.gradient_steps_per_episode;
    try {
      if (buffer.size() >= bs)
        for (int g = 0; g < grad_steps; ++g) agent->train_step(buffer.sample(bs, rng.batch), rng.batch);
      agent->end_episode();
    } catch (const NumericalError& e) {
      out.aborted = true;
      out.abort_reason = "episode " + std::to_string(ep) + ": " + e.what();
    }
    MetricsRecord rec;
    rec.seed = seed;
    rec.episode = ep;
    rec.steps = tally.steps;
    rec.loss_mw = tally.mean_loss();
    rec.vr = tally.mean_vr();
    rec.neg_reward = tally.mean_neg_reward();
    rec.failures = tally.failures;
    rec.loss_inc_mw = rec.loss_mw - base;
    if (!out.aborted && detail::eval_due(cfg, ep))
      detail::fill_eval(rec, evaluate(eval_env, deterministic_policy(agent->policy()), 1, base, seed));
    out.metrics.records.push_back(rec);
    out.wall_time_s.push_back(detail::seconds_since(t0));
    if (on_episode) on_episode(rec);
  }

  auto& f = out.metrics.footer;
  f["hidden_model"] = ojson{{"seed", hidden_seed}, {"factors_r_x", out.hidden_factors}};
  f["oracle"] = ojson{{"loss_mw", out.oracle->loss_mw},
                      {"vr", out.oracle->vr},
                      {"reward", out.oracle->reward},
                      {"tolerance", out.oracle->tolerance}};
  f["start_deterministic"] = ojson{{"loss_mw", out.start_deterministic->loss.mean},
                                   {"vr", out.start_deterministic->vr.mean},
                                   {"loss_inc_mw", out.start_deterministic->inc_mean}};
  if (out.aborted) f["aborted"] = out.abort_reason;
  Checkpoint ck;
  ck.algorithm = "sac";
  ck.meta = detail::run_meta(cfg, sc, seed, env);
  ck.sac = std::move(*agent);
  out.checkpoint = std::move(ck);
  return out;
}

// ---------------------------------------------------------------------------
// Cells and suites

struct CellPaths {
  std::filesystem::path metrics, timing, checkpoint;
};

inline CellPaths cell_paths(const ExperimentConfig& cfg, std::uint64_t seed) {
  const std::string stem = std::string(to_string(cfg.algorithm)) + "_" + to_string(cfg.stage) + "_seed" + std::to_string(seed);
  const std::filesystem::path dir(cfg.output);
  return {dir / (stem + ".csv"), dir / (stem + ".timing.csv"), dir / (stem + ".ckpt")};
}

inline std::string render_timing(const std::vector<double>& wall) {
  std::string s = "episode,wall_time_s\n";
  for (std::size_t i = 0; i < wall.size(); ++i) s += std::to_string(i) + "," + format_number(wall[i]) + "\n";
  return s;
}

/// Runs one (config, seed) cell and writes its files.
inline RunOutput run_cell(const ExperimentConfig& cfg, std::uint64_t seed, const EpisodeCallback& on_episode = {}) {
  RunOutput out;
  if (cfg.stage == Stage::offline) {
    out = run_offline(cfg, seed, on_episode);
  } else {
    std::optional<Checkpoint> start;
    if (!cfg.from_checkpoint.empty()) start = load_checkpoint(substitute_seed(cfg.from_checkpoint, seed));
    out = run_online(cfg, seed, start, on_episode);
  }
  const auto paths = cell_paths(cfg, seed);
  write_text_file(paths.metrics, render_metrics(out.metrics));
  write_text_file(paths.timing, render_timing(out.wall_time_s));
  if (out.checkpoint) save_checkpoint(*out.checkpoint, paths.checkpoint);
  return out;
}

struct CellResult {
  std::string algorithm, stage, case_name;
  std::uint64_t seed = 0;
  std::vector<MetricsRecord> records;
  std::string error;  // empty when the cell completed
};

inline constexpr const char* kConsolidatedColumns = "algorithm,stage,case,seed,episode,steps,loss_mw,vr,neg_reward,failures,"
                                                    "loss_inc_mw,eval_loss_mw,eval_vr,eval_neg_reward";

inline std::string render_consolidated(const std::vector<CellResult>& cells) {
  std::string s = kConsolidatedColumns;
  s += "\n";
  for (const auto& c : cells) {
    for (const auto& r : c.records) {
      const std::string row = to_csv_row(r);
      s += c.algorithm + "," + c.stage + "," + c.case_name + "," + row + "\n";
    }
  }
  return s;
}

/// Per (algorithm, stage, case, episode): mean and sample std across seeds.
inline std::string render_summary(const std::vector<CellResult>& cells) {
  struct Key {
    std::string a, s, c;
    int e;
    bool operator<(const Key& o) const { return std::tie(a, s, c, e) < std::tie(o.a, o.s, o.c, o.e); }
  };
  std::map<Key, std::array<std::vector<double>, 3>> groups;
  std::vector<Key> order;
  for (const auto& c : cells)
    for (const auto& r : c.records) {
      Key k{c.algorithm, c.stage, c.case_name, r.episode};
      auto [it, fresh] = groups.try_emplace(k);
      if (fresh) order.push_back(k);
      it->second[0].push_back(r.loss_mw);
      it->second[1].push_back(r.vr);
      it->second[2].push_back(r.neg_reward);
    }
  std::string s = "algorithm,stage,case,episode,seeds,loss_mean,loss_std,vr_mean,vr_std,neg_reward_mean,neg_reward_std\n";
  std::sort(order.begin(), order.end());
  for (const auto& k : order) {
    const auto& g = groups.at(k);
    const auto l = stats_of(g[0]), v = stats_of(g[1]), n = stats_of(g[2]);
    s += k.a + "," + k.s + "," + k.c + "," + std::to_string(k.e) + "," + std::to_string(l.n) + "," + format_number(l.mean) + "," +
         format_number(l.std) + "," + format_number(v.mean) + "," + format_number(v.std) + "," + format_number(n.mean) + "," +
         format_number(n.std) + "\n";
  }
  return s;
}

/// Plot-ready long format: one row per (cell, episode, metric).
inline std::string render_long(const std::vector<CellResult>& cells) {
  std::string s = "algorithm,stage,case,seed,episode,metric,value\n";
  for (const auto& c : cells)
    for (const auto& r : c.records) {
      const std::string p = c.algorithm + "," + c.stage + "," + c.case_name + "," + std::to_string(c.seed) + "," + std::to_string(r.episode) + ",";
      s += p + "loss_mw," + format_number(r.loss_mw) + "\n";
      s += p + "vr," + format_number(r.vr) + "\n";
      s += p + "neg_reward," + format_number(r.neg_reward) + "\n";
      if (r.loss_inc_mw) s += p + "loss_inc_mw," + format_number(r.loss_inc_mw) + "\n";
    }
  return s;
}

struct SuiteReport {
  std::vector<CellResult> cells;
  std::string consolidated_csv;
  std::string summary_csv;
  std::size_t failed_cells() const {
    return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const CellResult& c) { return !c.error.empty(); }));
  }
};

/// Runs every (config, seed) cell. Cells are independent; with jobs > 1 they
/// run on worker threads, and results are always reported in config/seed
/// order. A failing cell is recorded and the suite continues.
inline SuiteReport run_suite(const std::vector<ExperimentConfig>& configs, unsigned jobs = 1,
                             const std::function<void(const CellResult&)>& on_cell = {}) {
  struct Job {
    const ExperimentConfig* cfg;
    std::uint64_t seed;
  };
  std::vector<Job> work;
  for (const auto& c : configs)
    for (auto s : c.seeds) work.push_back({&c, s});
  SuiteReport rep;
  rep.cells.resize(work.size());
  std::mutex mu;
  auto run_one = [&](std::size_t i) {
    const auto& j = work[i];
    CellResult cell;
    cell.algorithm = to_string(j.cfg->algorithm);
    cell.stage = to_string(j.cfg->stage);
    cell.case_name = j.cfg->case_ref;
    cell.seed = j.seed;
    try {
      auto out = run_cell(*j.cfg, j.seed);
      cell.records = std::move(out.metrics.records);
      if (out.aborted) cell.error = out.abort_reason;
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
    std::lock_guard lock(mu);
    rep.cells[i] = std::move(cell);
    if (on_cell) on_cell(rep.cells[i]);
  };
  if (jobs <= 1 || work.size() <= 1) {
    for (std::size_t i = 0; i < work.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < std::min<std::size_t>(jobs, work.size()); ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < work.size(); i = next++) run_one(i);
      });
    for (auto& t : pool) t.join();
  }
  rep.consolidated_csv = render_consolidated(rep.cells);
  rep.summary_csv = render_summary(rep.cells);
  return rep;
}

}  // namespace vvcrl
