#include <filesystem>

#include <gtest/gtest.h>

#include "vvcrl/pipeline.hpp"

namespace vvcrl {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("vvcrl_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ExperimentConfig tiny(Algorithm algo, Stage stage = Stage::offline) {
  ExperimentConfig c;
  apply_case_defaults(c, c.case_ref);
  c.algorithm = algo;
  c.stage = stage;
  c.episodes = 3;
  c.horizon = 4;
  c.eval_interval = 1;
  c.agent.hidden_width = 16;
  c.agent.batch_size = 8;
  c.distill.points = 200;
  c.distill.max_epochs = 2;
  c.oracle.generations = 4;
  c.oracle.polish_passes = 1;
  return c;
}

TEST(Offline, DeterministicPerSeed) {
  for (auto algo : {Algorithm::sac, Algorithm::asac, Algorithm::jasac}) {
    const auto cfg = tiny(algo);
    const auto a = run_offline(cfg, 3), b = run_offline(cfg, 3);
    EXPECT_EQ(render_metrics(a.metrics), render_metrics(b.metrics)) << to_string(algo);
    EXPECT_EQ(a.metrics.records.size(), 3u);
    EXPECT_FALSE(a.aborted);
    const auto c = run_offline(cfg, 4);
    EXPECT_NE(render_metrics(a.metrics), render_metrics(c.metrics)) << to_string(algo);
  }
}

TEST(Offline, CheckpointCarriesTransferArtifacts) {
  const auto j = run_offline(tiny(Algorithm::jasac), 1);
  ASSERT_TRUE(j.checkpoint.has_value());
  EXPECT_TRUE(j.checkpoint->adversarial.has_value());
  ASSERT_TRUE(j.checkpoint->transfer.has_value());
  EXPECT_EQ(j.checkpoint->transfer->method, "distilled");
  EXPECT_EQ(j.checkpoint->online_agent().policy().deterministic(Matrix::Zero(100, 1)),
            j.checkpoint->adversarial->protagonist().deterministic(Matrix::Zero(100, 1)));

  const auto a = run_offline(tiny(Algorithm::asac), 1);
  EXPECT_EQ(a.checkpoint->transfer->method, "copied");
  const auto s = run_offline(tiny(Algorithm::sac), 1);
  EXPECT_FALSE(s.checkpoint->adversarial.has_value());
  EXPECT_NO_THROW(s.checkpoint->online_agent());
}

TEST(Offline, ZeroEpisodesGivesUntrainedCheckpoint) {
  auto cfg = tiny(Algorithm::jasac);
  cfg.episodes = 0;
  const auto out = run_offline(cfg, 0);
  EXPECT_TRUE(out.metrics.records.empty());
  EXPECT_TRUE(out.checkpoint.has_value());
}

TEST(Offline, RejectsOnlineOnlyAlgorithm) {
  auto cfg = tiny(Algorithm::presac);
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(run_offline(tiny(Algorithm::sac, Stage::online), 0), ConfigError);
}

TEST(Online, ContinuesFromCheckpointAndReportsIncrement) {
  const auto off = run_offline(tiny(Algorithm::jasac), 2);
  auto cfg = tiny(Algorithm::jasac, Stage::online);
  cfg.from_checkpoint = "unused";
  const auto on = run_online(cfg, 2, off.checkpoint);
  ASSERT_EQ(on.metrics.records.size(), 3u);
  for (const auto& r : on.metrics.records) {
    ASSERT_TRUE(r.loss_inc_mw.has_value());
    EXPECT_NEAR(*r.loss_inc_mw, r.loss_mw - on.oracle->loss_mw, 1e-12);
  }
  EXPECT_EQ(on.hidden_factors.size(), 64u);
  EXPECT_TRUE(on.metrics.footer.contains("oracle"));
}

TEST(Online, FreshSacNeedsNoCheckpoint) {
  const auto on = run_online(tiny(Algorithm::sac, Stage::online), 5, std::nullopt);
  EXPECT_EQ(on.metrics.records.size(), 3u);
  EXPECT_THROW(run_online(tiny(Algorithm::presac, Stage::online), 5, std::nullopt), ConfigError);
}

TEST(Online, RejectsCheckpointFromAnotherCase) {
  const auto off = run_offline(tiny(Algorithm::sac), 0);
  auto cfg = tiny(Algorithm::presac, Stage::online);
  cfg.case_ref = "case69";
  cfg.from_checkpoint = "unused";
  EXPECT_THROW(run_online(cfg, 0, off.checkpoint), ConfigError);
}

TEST(Evaluate, OracleFollowerHasZeroIncrement) {
  const auto cfg = tiny(Algorithm::sac, Stage::online);
  const auto sc = build_scenario(cfg);
  const auto plant = draw_hidden_model(sc.spec.nominal, cfg.bounds, 9);
  VvcEnv env(sc.spec, plant);
  const auto o = oracle_dispatch(env, plant, cfg.oracle);
  const auto e = evaluate(env, oracle_policy(o), 2, o.loss_mw);
  EXPECT_NEAR(e.inc_mean, 0.0, 1e-12);
  EXPECT_EQ(e.loss.n, 2u);
}

TEST(Evaluate, RepeatIsIdentical) {
  const auto cfg = tiny(Algorithm::sac);
  const auto sc = build_scenario(cfg);
  VvcEnv env(sc.spec);
  Rng rng(1);
  const auto agent = SacAgent::create(static_cast<int>(env.state_dim()), static_cast<int>(env.action_dim()), cfg.agent.sac(), rng);
  const auto a = evaluate(env, deterministic_policy(agent.policy()), 3);
  const auto b = evaluate(env, deterministic_policy(agent.policy()), 3);
  EXPECT_EQ(a.loss.mean, b.loss.mean);
  EXPECT_EQ(a.loss.std, 0.0);
}

TEST(Cells, WriteFilesAndReloadCheckpoint) {
  auto cfg = tiny(Algorithm::sac);
  cfg.output = scratch_dir("cells").string();
  run_cell(cfg, 7);
  const auto p = cell_paths(cfg, 7);
  EXPECT_EQ(p.metrics.filename(), "sac_offline_seed7.csv");
  ASSERT_TRUE(fs::exists(p.metrics));
  ASSERT_TRUE(fs::exists(p.timing));
  ASSERT_TRUE(fs::exists(p.checkpoint));
  const auto m = load_metrics(p.metrics);
  EXPECT_EQ(m.records.size(), 3u);
  EXPECT_EQ(m.config.at("seed"), 7);

  auto online = tiny(Algorithm::presac, Stage::online);
  online.output = cfg.output;
  online.from_checkpoint = (fs::path(cfg.output) / "sac_offline_seed{seed}.ckpt").string();
  EXPECT_NO_THROW(run_cell(online, 7));
  EXPECT_TRUE(fs::exists(cell_paths(online, 7).metrics));
}

TEST(Suite, EmptyAndFailingCells) {
  EXPECT_TRUE(run_suite({}).cells.empty());
  auto good = tiny(Algorithm::sac);
  good.episodes = 1;
  good.seeds = {0, 1};
  good.output = scratch_dir("suite").string();
  auto bad = good;
  bad.case_ref = "no_such_case";
  bad.seeds = {0};
  const auto rep = run_suite({good, bad});
  ASSERT_EQ(rep.cells.size(), 3u);
  EXPECT_EQ(rep.failed_cells(), 1u);
  EXPECT_EQ(rep.cells[1].seed, 1u);
  EXPECT_FALSE(rep.cells[2].error.empty());
  EXPECT_NE(rep.consolidated_csv.find("sac,offline,"), std::string::npos);
}

TEST(Suite, SummaryAggregatesSeeds) {
  const auto record = [](std::uint64_t seed, double loss, double vr, double neg_reward) {
    MetricsRecord r;
    r.seed = seed;
    r.steps = 4;
    r.loss_mw = loss;
    r.vr = vr;
    r.neg_reward = neg_reward;
    return r;
  };
  CellResult a{"sac", "online", "case33", 0, {record(0, 1.0, 0.1, 2.0)}, ""};
  CellResult b{"sac", "online", "case33", 1, {record(1, 3.0, 0.3, 4.0)}, ""};
  const auto s = render_summary({a, b});
  EXPECT_NE(s.find("sac,online,case33,0,2,2,1.414213562373095"), std::string::npos) << s;
}

// -- config ------------------------------------------------------------------

TEST(Config, ShippedConfigsLoad) {
  int n = 0;
  for (const auto& e : std::filesystem::directory_iterator(VVCRL_SOURCE_DIR "/configs")) {
    if (e.path().extension() != ".json") continue;
    EXPECT_NO_THROW(load_experiment(e.path())) << e.path();
    ++n;
  }
  EXPECT_GE(n, 3);
}

TEST(Config, CaseDefaults) {
  const auto big = parse_experiment(R"({"case": "case69"})");
  EXPECT_EQ(big.reward.c_v, 1000.0);
  EXPECT_EQ(big.agent.alpha, 0.03);
  EXPECT_EQ(big.agent.alpha_o, 0.02);
  EXPECT_EQ(big.agent.hidden_layers, 3);
  const auto small = parse_experiment("{}");
  EXPECT_EQ(small.reward.c_v, 100.0);
  EXPECT_EQ(small.agent.hidden_layers, 2);
  EXPECT_EQ(small.horizon, 96);
  EXPECT_EQ(small.agent.buffer_capacity, 400'000u);
  EXPECT_NEAR(small.agent.sac().tau, 0.005, 1e-15);
}

TEST(Config, RoundTrip) {
  auto c = parse_experiment(R"({"case": "case33", "algorithm": "asac", "seeds": "0..4", "agent": {"hidden_width": 64}})");
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{0, 1, 2, 3, 4}));
  const auto again = parse_experiment(to_json(c).dump());
  EXPECT_EQ(to_json(again).dump(), to_json(c).dump());
}

TEST(Config, ErrorsNameTheField) {
  try {
    parse_experiment(R"({"episodes": -1})", "x.json");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("episodes"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_experiment(R"({"bogus": 1})"), ConfigError);
  EXPECT_THROW(parse_experiment(R"({"algorithm": "ppo"})"), ConfigError);
  EXPECT_THROW(parse_experiment(R"({"agent": {"alpha_o": -0.1}})"), ConfigError);
  EXPECT_THROW(parse_experiment(R"({"stage": "online", "algorithm": "jasac"})"), ConfigError);
  EXPECT_THROW(parse_seed_list("3..1"), ConfigError);
  EXPECT_THROW(load_experiment("/nonexistent.json"), ConfigError);
}

// -- metrics -----------------------------------------------------------------

TEST(Metrics, RenderParseRoundTrip) {
  MetricsFile m;
  m.config = ojson{{"case", "case33"}, {"seed", 2}};
  const auto record = [](int episode, double loss, double vr, double neg_reward, int failures) {
    MetricsRecord r;
    r.seed = 2;
    r.episode = episode;
    r.steps = 96;
    r.loss_mw = loss;
    r.vr = vr;
    r.neg_reward = neg_reward;
    r.failures = failures;
    return r;
  };
  auto r = record(0, 0.123456789012345, 0.01, 0.5, 1);
  r.loss_inc_mw = -0.25;
  m.records = {r, record(1, 0.2, 0.0, 0.4, 0)};
  m.footer = ojson{{"note", "x"}};
  const auto text = render_metrics(m);
  const auto back = parse_metrics(text);
  EXPECT_EQ(back.records, m.records);
  EXPECT_EQ(render_metrics(back), text);
  EXPECT_THROW(parse_metrics("seed,episode\n1,2\n"), ConfigError);
}

TEST(Metrics, StatsAndMedian) {
  const auto s = stats_of({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.std, std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_DOUBLE_EQ(median_of({3.0, 1.0, 2.0}), 2.0);
  EXPECT_DOUBLE_EQ(median_of({4.0, 1.0, 2.0, 3.0}), 2.5);
}

// -- checkpoint --------------------------------------------------------------

TEST(CheckpointFile, RoundTripIsBitExact) {
  const auto off = run_offline(tiny(Algorithm::jasac), 6);
  const auto bytes = encode_checkpoint(*off.checkpoint);
  const auto back = decode_checkpoint(bytes);
  EXPECT_EQ(back.algorithm, "jasac");
  EXPECT_EQ(encode_checkpoint(back), bytes);
  const auto& a = off.checkpoint->adversarial->critic();
  const auto& b = back.adversarial->critic();
  EXPECT_EQ(nn::flatten(a.q1), nn::flatten(b.q1));
  EXPECT_EQ(nn::flatten(a.target2), nn::flatten(b.target2));
  EXPECT_LT(back.adversarial->alpha_o(), 0.0);
  EXPECT_EQ(back.transfer->points, off.checkpoint->transfer->points);
}

TEST(CheckpointFile, CorruptionIsReported) {
  const auto off = run_offline(tiny(Algorithm::sac), 6);
  auto bytes = encode_checkpoint(*off.checkpoint);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), ConfigError);
  bytes.resize(bytes.size() / 2);
  EXPECT_THROW(decode_checkpoint(bytes), ConfigError);
  EXPECT_THROW(load_checkpoint("/nonexistent.ckpt"), ConfigError);
}

}  // namespace
}  // namespace vvcrl
