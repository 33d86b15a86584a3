#pragma once

// Command-line front end: train, eval, oracle, report. Exit codes are 0 on
// success, 1 when a run aborts at runtime, 2 for usage and config errors.

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "vvcrl/pipeline.hpp"

namespace vvcrl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitAbort = 1;
inline constexpr int kExitUsage = 2;

struct TrainArgs {
  std::string stage;
  std::string config;
  std::string algo;
  std::string case_ref;
  std::string seeds;
  std::optional<int> episodes;
  std::string from_checkpoint;
  std::string out;
  unsigned jobs = 1;
  bool quiet = false;
};

struct EvalArgs {
  std::string checkpoint;
  std::string config;
  std::string case_ref;
  int episodes = 1;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> hidden_seed;
  bool stochastic = false;
};

struct OracleArgs {
  std::string config;
  std::string case_ref;
  std::optional<std::uint64_t> hidden_seed;
};

struct ReportArgs {
  std::vector<std::string> files;
  std::string out;
  std::string long_out;
  std::string summary_out;
};

/// Config from file (or defaults for the case), then command-line overrides.
inline ExperimentConfig resolve_config(const std::string& path, const std::string& case_ref) {
  ExperimentConfig c;
  if (!path.empty()) {
    c = load_experiment(path);
    if (!case_ref.empty() && case_ref != c.case_ref) {
      c.case_ref = case_ref;
      apply_case_defaults(c, case_ref);
    }
  } else {
    c.case_ref = case_ref.empty() ? c.case_ref : case_ref;
    apply_case_defaults(c, c.case_ref);
  }
  return c;
}

inline std::string episode_line(const std::string& label, const MetricsRecord& r) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << label << " seed " << r.seed << " ep " << r.episode << "  loss " << r.loss_mw
    << " MW  vr " << std::setprecision(6) << r.vr << "  -r " << std::setprecision(4) << r.neg_reward;
  if (r.failures) s << "  failures " << r.failures;
  if (r.loss_inc_mw) s << "  inc " << *r.loss_inc_mw;
  if (r.eval_loss_mw) s << "  | eval loss " << *r.eval_loss_mw << " vr " << std::setprecision(6) << *r.eval_vr;
  return s.str();
}

inline int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = resolve_config(a.config, a.case_ref);
  cfg.stage = parse_stage(a.stage, "train");
  if (!a.algo.empty()) cfg.algorithm = parse_algorithm(a.algo, "--algo");
  if (!a.seeds.empty()) cfg.seeds = parse_seed_list(a.seeds, "--seeds");
  if (a.episodes) cfg.episodes = *a.episodes;
  if (!a.from_checkpoint.empty()) cfg.from_checkpoint = a.from_checkpoint;
  if (!a.out.empty()) cfg.output = a.out;
  cfg.validate();
  // Fails here, before any training, if the case cannot be read.
  (void)build_scenario(cfg);

  const std::string label = std::string(to_string(cfg.algorithm)) + "/" + to_string(cfg.stage);
  int status = kExitOk;
  if (a.jobs > 1) {
    const auto rep = run_suite({cfg}, a.jobs, [&](const CellResult& c) {
      out << label << " seed " << c.seed << ": " << c.records.size() << " episodes"
          << (c.error.empty() ? "" : "  ABORTED: " + c.error) << "\n";
    });
    if (rep.failed_cells()) status = kExitAbort;
  } else {
    for (auto seed : cfg.seeds) {
      auto res = run_cell(cfg, seed, [&](const MetricsRecord& r) {
        if (!a.quiet) out << episode_line(label, r) << "\n";
      });
      const auto paths = cell_paths(cfg, seed);
      out << label << " seed " << seed << " -> " << paths.metrics.string() << "\n";
      if (res.aborted) {
        err << "run aborted (seed " << seed << "): " << res.abort_reason << "\n";
        status = kExitAbort;
      }
    }
  }
  return status;
}

inline void print_summary(std::ostream& out, const EvalSummary& s) {
  out << std::fixed << std::setprecision(6);
  out << "          Mean        Inc.        Std.\n";
  out << "Loss/MW   " << std::setw(10) << s.loss.mean << "  " << std::setw(10) << s.inc_mean << "  " << std::setw(10) << s.loss.std
      << "\n";
  out << "VR        " << std::setw(10) << s.vr.mean << "  " << std::setw(10) << "-" << "  " << std::setw(10) << s.vr.std << "\n";
  if (s.failures) out << "failed steps: " << s.failures << "\n";
}

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  std::string case_ref = a.case_ref;
  if (case_ref.empty() && a.config.empty()) case_ref = ck.meta.value("case", std::string("case33"));
  ExperimentConfig cfg = resolve_config(a.config, case_ref);
  const auto sc = build_scenario(cfg);
  const SacAgent& agent = ck.online_agent();
  VvcEnv probe(sc.spec);
  if (agent.state_dim() != static_cast<int>(probe.state_dim()) || agent.action_dim() != static_cast<int>(probe.action_dim()))
    throw ConfigError("checkpoint dimensions do not match case '" + case_label(sc) + "'", a.checkpoint);
  const std::string ck_case = ck.meta.value("case", std::string());
  if (!ck_case.empty() && ck_case != case_label(sc))
    throw ConfigError("checkpoint was trained on case '" + ck_case + "', not '" + case_label(sc) + "'", a.checkpoint);

  std::optional<NetworkModel> plant;
  if (a.hidden_seed) plant = draw_hidden_model(sc.spec.nominal, cfg.bounds, *a.hidden_seed);
  VvcEnv env(sc.spec, plant);
  const auto oracle = oracle_dispatch(env, env.plant(), cfg.oracle);
  Rng rng(mix_seed(a.seed));
  PolicyFn policy = a.stochastic ? PolicyFn([&](const Vector& o, int) { return agent.act(o, false, rng); })
                                 : deterministic_policy(agent.policy());
  const auto s = evaluate(env, policy, a.episodes, oracle.loss_mw, a.seed);
  out << "checkpoint " << a.checkpoint << " (" << ck.algorithm << ") on " << case_label(sc)
      << (plant ? " hidden model seed " + std::to_string(*a.hidden_seed) : std::string(" nominal model")) << "\n";
  out << "oracle loss " << std::setprecision(6) << oracle.loss_mw << " MW (tolerance " << oracle.tolerance << ")\n";
  print_summary(out, s);
  return kExitOk;
}

inline int cmd_oracle(const OracleArgs& a, std::ostream& out) {
  ExperimentConfig cfg = resolve_config(a.config, a.case_ref);
  const auto sc = build_scenario(cfg);
  std::optional<NetworkModel> plant;
  if (a.hidden_seed) plant = draw_hidden_model(sc.spec.nominal, cfg.bounds, *a.hidden_seed);
  VvcEnv env(sc.spec, plant);
  const auto o = oracle_dispatch(env, env.plant(), cfg.oracle);
  out << "case " << case_label(sc) << (plant ? " hidden model seed " + std::to_string(*a.hidden_seed) : std::string()) << "\n";
  out << std::setprecision(8);
  const auto& devices = sc.spec.devices;
  int last_printed = -1;
  for (const auto& step : o.steps) {
    if (last_printed >= 0 && step.action == o.steps[static_cast<std::size_t>(last_printed)].action) continue;
    last_printed = step.t;
    out << "t " << step.t << ":";
    for (std::size_t k = 0; k < devices.iber.size(); ++k)
      out << "  iber@" << devices.iber[k].bus << " " << step.setpoints.q_iber_mvar[k] << " MVAr";
    for (std::size_t k = 0; k < devices.svc.size(); ++k)
      out << "  svc@" << devices.svc[k].bus << " " << step.setpoints.q_svc_mvar[k] << " MVAr";
    out << "  loss " << step.loss_mw << " MW" << (step.failed ? "  FAILED" : "") << "\n";
  }
  out << "loss " << o.loss_mw << " MW  vr " << o.vr << "  reward " << o.reward << "  tolerance " << o.tolerance << "  evaluations "
      << o.evaluations << "\n";
  return kExitOk;
}

/// Reads one metrics file into a report cell; the algorithm, stage, case and
/// seed come from the embedded config.
inline CellResult cell_from_metrics(const std::string& path) {
  const auto m = load_metrics(path);
  CellResult c;
  c.algorithm = m.config.value("algorithm", std::string("?"));
  c.stage = m.config.value("stage", std::string("?"));
  c.case_name = m.config.value("case", std::string("?"));
  c.seed = m.config.value("seed", std::uint64_t{0});
  if (!m.records.empty() && !m.config.contains("seed")) c.seed = m.records.front().seed;
  c.records = m.records;
  return c;
}

inline int cmd_report(const ReportArgs& a, std::ostream& out) {
  std::vector<CellResult> cells;
  for (const auto& f : a.files) cells.push_back(cell_from_metrics(f));
  const std::string merged = render_consolidated(cells);
  if (a.out.empty()) out << merged;
  else write_text_file(a.out, merged);
  if (!a.long_out.empty()) write_text_file(a.long_out, render_long(cells));
  if (!a.summary_out.empty()) write_text_file(a.summary_out, render_summary(cells));
  if (!a.out.empty()) out << "merged " << cells.size() << " files into " << a.out << "\n";
  return kExitOk;
}

/// Parses and dispatches; never throws.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Volt-VAR control with (jointly adversarial) soft actor-critic", "vvcrl"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train agents offline (nominal model) or online (hidden plant)");
  t->add_option("stage", train.stage, "offline | online")->required()->check(CLI::IsMember({"offline", "online"}));
  t->add_option("--config", train.config, "experiment config (JSON)");
  t->add_option("--algo", train.algo, "sac | asac | jasac | presac")->check(CLI::IsMember({"sac", "asac", "jasac", "presac"}));
  t->add_option("--case", train.case_ref, "case name in the data directory, or a path");
  t->add_option("--seeds", train.seeds, "e.g. 3, 0,2,5 or 0..4");
  t->add_option("--episodes", train.episodes, "episodes per seed");
  t->add_option("--from-checkpoint", train.from_checkpoint, "online start agent; {seed} is replaced by the seed");
  t->add_option("--out", train.out, "output directory");
  t->add_option("--jobs", train.jobs, "seeds trained in parallel")->check(CLI::PositiveNumber);
  t->add_flag("--quiet", train.quiet, "no per-episode lines");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint against the dispatch oracle");
  e->add_option("checkpoint", ev.checkpoint, "checkpoint file")->required();
  e->add_option("--config", ev.config, "experiment config (JSON)");
  e->add_option("--case", ev.case_ref, "case (default: the one the checkpoint was trained on)");
  e->add_option("--episodes", ev.episodes, "evaluation episodes")->check(CLI::PositiveNumber);
  e->add_option("--seed", ev.seed, "evaluation seed");
  e->add_option("--hidden-seed", ev.hidden_seed, "evaluate on the perturbed model drawn from this seed");
  e->add_flag("--stochastic", ev.stochastic, "sample actions instead of tanh(mean)");

  OracleArgs orc;
  auto* o = app.add_subcommand("oracle", "brute-force optimal dispatch on the exact power flow");
  o->add_option("--config", orc.config, "experiment config (JSON)");
  o->add_option("--case", orc.case_ref, "case name or path");
  o->add_option("--hidden-seed", orc.hidden_seed, "solve on the perturbed model drawn from this seed");

  ReportArgs rep;
  auto* r = app.add_subcommand("report", "merge metrics CSV files");
  r->add_option("files", rep.files, "metrics files")->required();
  r->add_option("--out", rep.out, "consolidated CSV (default: stdout)");
  r->add_option("--long", rep.long_out, "plot-ready long-format CSV");
  r->add_option("--summary", rep.summary_out, "per-episode mean/std across seeds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& ex) {
    err << "usage error: " << ex.what() << "\n";
    for (auto* sub : app.get_subcommands()) err << sub->help();
    return kExitUsage;
  }

  try {
    if (*t) return cmd_train(train, out, err);
    if (*e) return cmd_eval(ev, out);
    if (*o) return cmd_oracle(orc, out);
    if (*r) return cmd_report(rep, out);
  } catch (const ConfigError& ex) {
    err << "config error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const InvalidInput& ex) {
    err << "invalid input: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitAbort;
  }
  return kExitUsage;
}

}  // namespace vvcrl::cli
