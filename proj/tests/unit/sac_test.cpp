#include <chrono>
#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "tabular.hpp"
#include "vvcrl/sac.hpp"

namespace vvcrl {
namespace {

using nn::DenseLayer;
using nn::DenseNet;

Transition tr(double r, bool done = false) {
  return Transition{Vector::Constant(1, r), Vector::Constant(1, 0.0), r, Vector::Constant(1, r + 1), done, DoneReason::none};
}

DenseNet constant_net(int in, double value) { return DenseNet({DenseLayer{Matrix::Zero(1, in), Vector::Constant(1, value)}}); }

/// One state and one action dimension; critics and targets are constants, the
/// actor has fixed mean and log-std.
SacAgent contrived_agent(double q1, double q2, double mu, double log_std, double alpha = 0.2, double gamma = 0.9) {
  nn::GaussianPolicy pi(DenseNet({DenseLayer{Matrix::Zero(2, 1), Vector{{mu, log_std}}}}), 1);
  TwinCritic c;
  c.q1 = c.target1 = constant_net(2, q1);
  c.q2 = c.target2 = constant_net(2, q2);
  c.adam1 = nn::AdamState::for_net(c.q1);
  c.adam2 = nn::AdamState::for_net(c.q2);
  SacConfig cfg;
  cfg.alpha = alpha;
  cfg.gamma = gamma;
  auto adam = nn::AdamState::for_net(pi.net());
  return SacAgent(std::move(pi), std::move(adam), std::move(c), cfg);
}

SacAgent small_agent(std::uint64_t seed, SacConfig cfg = {}) {
  cfg.hidden = {16, 16};
  Rng rng(seed);
  return SacAgent::create(3, 2, cfg, rng);
}

Batch random_batch(Rng& rng, int n, int s = 3, int a = 2) {
  Batch b;
  b.s = rng.normal_matrix(s, n);
  b.a_p = (rng.normal_matrix(a, n).array().tanh()).matrix();
  b.a_o.resize(0, n);
  b.r = rng.normal_matrix(1, n);
  b.s_next = rng.normal_matrix(s, n);
  b.done = RowVector::Zero(n);
  return b;
}

TEST(Replay, RingEvictsOldest) {
  ReplayBuffer<Transition> buf(2);
  for (double r : {1.0, 2.0, 3.0}) buf.push(tr(r));
  EXPECT_EQ(buf.size(), 2u);
  EXPECT_EQ(buf[0].r, 3.0);
  EXPECT_EQ(buf[1].r, 2.0);
}

TEST(Replay, SampleIsReproducible) {
  ReplayBuffer<Transition> buf(100);
  for (int k = 0; k < 50; ++k) buf.push(tr(k));
  Rng a(5), b(5);
  EXPECT_EQ(buf.sample(16, a).r, buf.sample(16, b).r);
}

TEST(Replay, SamplingIsUniform) {
  ReplayBuffer<Transition> buf(10);
  for (int k = 0; k < 10; ++k) buf.push(tr(k));
  Rng rng(9);
  std::vector<int> count(10, 0);
  for (int k = 0; k < 10000; ++k)
    for (auto i : buf.sample_indices(10, rng)) ++count[i];
  for (int c : count) {
    EXPECT_GE(c, 9000);
    EXPECT_LE(c, 11000);
  }
}

TEST(Replay, UnderfilledSampleThrows) {
  ReplayBuffer<Transition> buf(10);
  buf.push(tr(0));
  Rng rng(1);
  EXPECT_THROW(buf.sample(2, rng), ContractViolation);
  EXPECT_THROW(ReplayBuffer<Transition>(0), InvalidInput);
}

TEST(CriticTarget, ZeroDiscountGivesReward) {
  SacConfig cfg;
  cfg.gamma = 0.0;
  const auto agent = small_agent(1, cfg);
  Rng rng(2);
  const auto b = random_batch(rng, 20);
  EXPECT_EQ(agent.critic_target(b, rng), b.r);
}

TEST(CriticTarget, TerminalDoesNotBootstrap) {
  const auto agent = small_agent(1);
  Rng rng(3);
  auto b = random_batch(rng, 20);
  b.done.setOnes();
  b.s_next *= 1e6;
  EXPECT_EQ(agent.critic_target(b, rng), b.r);
}

TEST(CriticTarget, HandComputedDeterministicLimit) {
  const double mu = 0.5, log_std = -20.0, alpha = 0.2, gamma = 0.9, r = 0.7;
  const auto agent = contrived_agent(3.0, 5.0, mu, log_std, alpha, gamma);
  Batch b;
  b.s = b.s_next = Matrix::Ones(1, 1);
  b.a_p = Matrix::Zero(1, 1);
  b.r = RowVector::Constant(1, r);
  b.done = RowVector::Zero(1);
  // xi = 0: a' = tanh(mu); log pi = -log sigma - log sqrt(2 pi) - log(1 - tanh(mu)^2)
  const double t = std::tanh(mu);
  const double logp = -log_std - 0.5 * std::log(2.0 * std::numbers::pi) - std::log(1.0 - t * t);
  const double expected = r + gamma * (3.0 - alpha * logp);
  EXPECT_NEAR(agent.critic_target(b, Matrix::Zero(1, 1))(0), expected, 1e-9);
}

TEST(CriticTarget, TwinSwapIsSymmetric) {
  auto a = small_agent(4);
  auto b = a;
  auto& c = b.mutable_critics();
  std::swap(c.target1, c.target2);
  Rng rng(5);
  const auto batch = random_batch(rng, 32);
  const Matrix xi = rng.normal_matrix(2, 32);
  EXPECT_EQ(a.critic_target(batch, xi), b.critic_target(batch, xi));
}

TEST(CriticTarget, TabularIterationReachesSoftFixedPoint) {
  const auto m = testing::TabularMdp::toy();
  const auto exact = testing::soft_value_iteration(m);
  const auto t0 = std::chrono::steady_clock::now();
  const auto run = testing::tabular_soft_iteration(m, 64);
  const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(testing::sup_norm_gap(run.q, exact), 1e-2);
  EXPECT_LT(sec, 1.0);
}

TEST(Msbe, ZeroWhenTargetsMatch) {
  Rng rng(6);
  const auto net = DenseNet::create(4, std::vector<int>{8}, 1, rng);
  const Matrix x = rng.normal_matrix(4, 10);
  const RowVector y = nn::forward(net, x);
  const auto r = msbe(net, x, y);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(nn::flatten(r.grad).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Msbe, ReturnsPreStepMeanSquaredResidual) {
  auto agent = small_agent(7);
  Rng rng(8);
  const auto b = random_batch(rng, 32);
  Rng replay = rng;
  const RowVector y = agent.critic_target(b, replay);
  const Matrix x = stack_rows({&b.s, &b.a_p});
  const double q1 = (nn::forward(agent.critics().q1, x) - y).squaredNorm() / 32.0;
  const double q2 = (nn::forward(agent.critics().q2, x) - y).squaredNorm() / 32.0;
  const auto loss = agent.update_critics(b, rng);
  EXPECT_NEAR(loss.q1, q1, 1e-10);
  EXPECT_NEAR(loss.q2, q2, 1e-10);
  EXPECT_NE(nn::forward(agent.critics().q1, x), nn::forward(agent.critics().target1, x));
}

TEST(Msbe, MonotoneOnAFixedBatch) {
  auto agent = small_agent(9);
  Rng rng(10);
  const auto b = random_batch(rng, 64);
  const RowVector y = agent.critic_target(b, rng);
  const Matrix x = stack_rows({&b.s, &b.a_p});
  auto& c = agent.mutable_critics();
  double prev = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 50; ++k) {
    const auto l = update_twin(c, x, y);
    EXPECT_LE(l.mean(), prev) << "step " << k;
    prev = l.mean();
  }
}

TEST(Msbe, NonFiniteTargetAbortsWithoutUpdating) {
  auto agent = small_agent(11);
  Rng rng(12);
  auto b = random_batch(rng, 8);
  b.r(3) = std::numeric_limits<double>::quiet_NaN();
  const auto before = nn::flatten(agent.critics().q1);
  EXPECT_THROW(agent.update_critics(b, rng), NumericalError);
  EXPECT_EQ(nn::flatten(agent.critics().q1), before);
}

TEST(PolicyObjective, MatchesRecomputation) {
  const auto agent = small_agent(13);
  Rng rng(14);
  const Matrix s = rng.normal_matrix(3, 40), xi = rng.normal_matrix(2, 40);
  const auto obj = agent.policy_objective(s, xi, false);
  const auto smp = agent.policy().sample(s, xi);
  const Matrix x = stack_rows({&s, &smp.actions});
  const RowVector q = nn::forward(agent.critics().q1, x).cwiseMin(nn::forward(agent.critics().q2, x));
  EXPECT_NEAR(obj.value, (q - agent.config().alpha * smp.log_prob).mean(), 1e-10);
}

TEST(PolicyObjective, ZeroCriticRaisesEntropy) {
  auto agent = contrived_agent(0.0, 0.0, 0.0, -1.0);
  const Matrix s = Matrix::Ones(1, 64);
  Rng rng(15);
  const double before = agent.policy().head(s).log_std(0, 0);
  Batch b;
  b.s = s;
  for (int k = 0; k < 20; ++k) agent.update_policy(b, rng);
  EXPECT_GT(agent.policy().head(s).log_std(0, 0), before);
}

TEST(PolicyObjective, LargeAlphaPushesSigmaUp) {
  // Linear critic Q = 0.5 a; with alpha large the entropy term dominates.
  nn::GaussianPolicy pi(DenseNet({DenseLayer{Matrix::Zero(2, 1), Vector{{0.2, -1.0}}}}), 1);
  TwinCritic c;
  c.q1 = c.target1 = DenseNet({DenseLayer{Matrix{{0.0, 0.5}}, Vector::Zero(1)}});
  c.q2 = c.target2 = c.q1;
  c.adam1 = nn::AdamState::for_net(c.q1);
  c.adam2 = nn::AdamState::for_net(c.q2);
  SacConfig cfg;
  cfg.alpha = 100.0;
  auto adam = nn::AdamState::for_net(pi.net());
  SacAgent agent(std::move(pi), std::move(adam), std::move(c), cfg);
  Rng rng(16);
  const Matrix s = Matrix::Ones(1, 2000), xi = rng.normal_matrix(1, 2000);
  const auto obj = agent.policy_objective(s, xi);
  const double g = obj.grad[0].bias(1);  // d value / d raw log-std
  EXPECT_GT(g, 0.0);
  auto probe = agent;
  const double h = 1e-5;
  auto value_at = [&](double ls) {
    probe.mutable_policy().mutable_net().mutable_layers()[0].bias(1) = ls;
    return probe.policy_objective(s, xi, false).value;
  };
  const double fd = (value_at(-1.0 + h) - value_at(-1.0 - h)) / (2 * h);
  EXPECT_GT(fd, 0.0);
  EXPECT_LT(testing::relative_error(g, fd), 1e-4);
}

TEST(SoftUpdate, CopyAndHold) {
  auto agent = small_agent(17);
  Rng rng(18);
  const auto b = random_batch(rng, 16);
  agent.update_critics(b, rng);
  const auto target = nn::flatten(agent.critics().target1);
  agent.soft_update(0.0);
  EXPECT_EQ(nn::flatten(agent.critics().target1), target);
  agent.soft_update(1.0);
  EXPECT_EQ(nn::flatten(agent.critics().target1), nn::flatten(agent.critics().q1));
  EXPECT_THROW(agent.soft_update(1.5), ContractViolation);
}

TEST(SoftUpdate, ScalarArithmetic) {
  auto agent = contrived_agent(4.0, 4.0, 0.0, 0.0);
  auto& c = agent.mutable_critics();
  c.target1 = constant_net(2, 2.0);
  agent.soft_update(0.005);
  EXPECT_NEAR(c.target1.layers()[0].bias(0), 2.01, 1e-15);
}

TEST(SoftUpdate, PerEpisodeScheduleMovesOnlyAtEpisodeEnd) {
  SacConfig cfg;
  cfg.target_schedule = TargetSchedule::per_episode;
  auto agent = small_agent(19, cfg);
  Rng rng(20);
  const auto b = random_batch(rng, 16);
  const auto target = nn::flatten(agent.critics().target1);
  agent.train_step(b, rng);
  EXPECT_EQ(nn::flatten(agent.critics().target1), target);
  agent.end_episode();
  const nn::Vector expected = 0.005 * target + 0.995 * nn::flatten(agent.critics().q1);
  EXPECT_LE((nn::flatten(agent.critics().target1) - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Act, DeterministicZeroMean) {
  const auto agent = contrived_agent(0.0, 0.0, 0.0, 0.5);
  Rng rng(21);
  EXPECT_EQ(agent.act(Vector::Ones(1), true, rng)(0), 0.0);
}

TEST(Act, StochasticReproducibleAndInside) {
  const auto agent = contrived_agent(0.0, 0.0, 1.5, 2.0);
  Rng a(22), b(22);
  EXPECT_EQ(agent.act(Vector::Ones(1), false, a), agent.act(Vector::Ones(1), false, b));
  for (int k = 0; k < 10000; ++k) {
    const double x = agent.act(Vector::Ones(1), false, a)(0);
    ASSERT_GT(x, -1.0);
    ASSERT_LT(x, 1.0);
  }
}

TEST(Config, RejectsBadValues) {
  SacConfig c;
  c.alpha = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.tau = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.gamma = 1.2;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Gradients, MsbeMatchesFiniteDifferences) {
  const auto r = testing::gradient_sweep(testing::msbe_gradient_error, 100);
  EXPECT_EQ(r.passed, r.total) << "worst " << r.worst;
}

TEST(Gradients, PolicyObjectiveMatchesFiniteDifferences) {
  const auto r = testing::gradient_sweep(testing::sac_policy_gradient_error, 100);
  EXPECT_EQ(r.passed, r.total) << "worst " << r.worst;
}

}  // namespace
}  // namespace vvcrl
