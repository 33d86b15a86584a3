#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vvcrl/neural.hpp"

namespace vvcrl::nn {
namespace {

using testing::directional_fd;
using testing::relative_error;

DenseNet random_net(Rng& rng, int in, std::vector<int> hidden, int out) {
  auto net = DenseNet::create(in, hidden, out, rng);
  // Non-zero biases so that rectifiers are not all on the same side.
  for (auto& l : net.mutable_layers())
    for (Eigen::Index k = 0; k < l.bias.size(); ++k) l.bias(k) = rng.uniform(-0.5, 0.5);
  return net;
}

TEST(DenseNet, ZeroWeightsGiveZeroOutput) {
  DenseNet net({DenseLayer{Matrix::Zero(3, 2), Vector::Zero(3)}, DenseLayer{Matrix::Zero(1, 3), Vector::Zero(1)}});
  EXPECT_EQ(forward(net, Matrix::Random(2, 5)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(DenseNet, IdentityLayer) {
  DenseNet net({DenseLayer{Matrix::Identity(3, 3), Vector::Zero(3)}});
  const Matrix x = Matrix::Random(3, 4);
  EXPECT_EQ(forward(net, x), x);
}

TEST(DenseNet, ShapeErrors) {
  Rng rng(1);
  auto net = DenseNet::create(3, std::vector<int>{4}, 2, rng);
  EXPECT_THROW(forward(net, Matrix::Zero(2, 1)), ContractViolation);
  EXPECT_THROW(DenseNet({DenseLayer{Matrix::Zero(3, 2), Vector::Zero(3)}, DenseLayer{Matrix::Zero(1, 4), Vector::Zero(1)}}),
               ContractViolation);
}

TEST(Backward, LinearScalar) {
  DenseNet net({DenseLayer{Matrix::Constant(1, 1, 3.0), Vector::Zero(1)}});
  ForwardCache c;
  forward(net, Matrix::Constant(1, 1, 2.0), &c);
  const auto g = backward(net, c, Matrix::Constant(1, 1, 0.5));
  EXPECT_DOUBLE_EQ(g.layers[0].weight(0, 0), 1.0);  // x * output_grad
  EXPECT_DOUBLE_EQ(g.input(0, 0), 1.5);
}

TEST(Backward, ZeroOutputGradGivesZero) {
  Rng rng(2);
  auto net = random_net(rng, 3, {5}, 2);
  ForwardCache c;
  forward(net, Matrix::Random(3, 4), &c);
  const auto g = backward(net, c, Matrix::Zero(2, 4));
  EXPECT_EQ(flatten(g.layers).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Backward, StaleCacheRejected) {
  Rng rng(3);
  auto net = random_net(rng, 3, {5}, 1);
  ForwardCache c;
  forward(net, Matrix::Random(3, 2), &c);
  net.mutable_layers()[0].bias(0) += 1.0;
  EXPECT_THROW(backward(net, c, Matrix::Ones(1, 2)), ContractViolation);
  DenseNet copy = net;
  ForwardCache c2;
  forward(net, Matrix::Random(3, 2), &c2);
  EXPECT_THROW(backward(copy, c2, Matrix::Ones(1, 2)), ContractViolation);
}

TEST(Backward, MatchesFiniteDifferences) {
  Rng rng(4);
  for (int cfg = 0; cfg < 100; ++cfg) {
    const int in = 1 + static_cast<int>(rng.index(5)), out = 1 + static_cast<int>(rng.index(3));
    std::vector<int> hidden(1 + rng.index(3));
    for (auto& h : hidden) h = 2 + static_cast<int>(rng.index(8));
    auto net = random_net(rng, in, hidden, out);
    const Matrix x = rng.normal_matrix(in, 1 + static_cast<Eigen::Index>(rng.index(6)));
    const Matrix w = rng.normal_matrix(out, x.cols());
    ForwardCache cache;
    forward(net, x, &cache);
    const auto g = backward(net, cache, w);
    const Vector p = flatten(net);
    const Vector d = rng.normal_matrix(p.size(), 1).col(0);
    auto f = [&](const Vector& q) {
      DenseNet n2 = net;
      unflatten(n2, q);
      return forward(n2, x).cwiseProduct(w).sum();
    };
    EXPECT_LE(relative_error(flatten(g.layers).dot(d), directional_fd(f, p, d)), 1e-4) << "config " << cfg;
    // input gradient
    const Matrix dx = rng.normal_matrix(in, x.cols());
    const double h = 1e-5;
    const double fd = ((forward(net, x + h * dx).cwiseProduct(w).sum()) - forward(net, x - h * dx).cwiseProduct(w).sum()) / (2 * h);
    EXPECT_LE(relative_error(g.input.cwiseProduct(dx).sum(), fd), 1e-4) << "config " << cfg;
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Rng rng(5);
  auto net = random_net(rng, 2, {3}, 1);
  const Vector before = flatten(net);
  auto st = AdamState::for_net(net);
  adam_step(st, net, zeros_like(net));
  EXPECT_EQ(flatten(net), before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Rng rng(6);
  auto net = random_net(rng, 2, {3}, 1);
  const Vector before = flatten(net);
  auto st = AdamState::for_net(net, AdamConfig{});
  auto g = zeros_like(net);
  for (auto& l : g) {
    l.weight.setConstant(0.37);
    l.bias.setConstant(-2.0);
  }
  adam_step(st, net, g);
  const Vector step = flatten(net) - before;
  for (Eigen::Index k = 0; k < step.size(); ++k) EXPECT_NEAR(std::abs(step(k)), 1e-3, 1e-7);
}

TEST(Adam, RejectsNonFiniteGradient) {
  Rng rng(7);
  auto net = random_net(rng, 2, {3}, 1);
  auto st = AdamState::for_net(net);
  auto g = zeros_like(net);
  g[0].weight(0, 0) = std::nan("");
  const Vector before = flatten(net);
  EXPECT_THROW(adam_step(st, net, g), NumericalError);
  EXPECT_EQ(flatten(net), before);
}

TEST(Adam, Deterministic) {
  auto run = [] {
    Rng rng(8);
    auto net = random_net(rng, 3, {4}, 1);
    auto st = AdamState::for_net(net);
    for (int k = 0; k < 20; ++k) {
      ForwardCache c;
      const Matrix x = rng.normal_matrix(3, 8);
      forward(net, x, &c);
      adam_step(st, net, backward(net, c, Matrix::Ones(1, 8)).layers);
    }
    return flatten(net);
  };
  EXPECT_EQ(run(), run());
}

TEST(Polyak, Interpolates) {
  Rng rng(9);
  auto a = random_net(rng, 2, {3}, 1), b = random_net(rng, 2, {3}, 1);
  const Vector pa = flatten(a), pb = flatten(b);
  polyak_update(a, b, 0.25);
  EXPECT_LE((flatten(a) - (0.75 * pa + 0.25 * pb)).cwiseAbs().maxCoeff(), 1e-15);
}

// -- squashed Gaussian --------------------------------------------------------

/// One-dimensional policy whose head returns a fixed mean and log-std.
GaussianPolicy constant_policy(double mu, double log_std) {
  DenseNet net({DenseLayer{Matrix::Zero(2, 1), Vector{{mu, log_std}}}});
  return GaussianPolicy(std::move(net), 1);
}

TEST(Squashed, StandardLogProbAtZero) {
  const auto pi = constant_policy(0.0, 0.0);
  const auto s = pi.sample(Matrix::Ones(1, 1), Matrix::Zero(1, 1));
  EXPECT_EQ(s.actions(0, 0), 0.0);
  EXPECT_NEAR(s.log_prob(0), -0.5 * std::log(2 * std::numbers::pi), 1e-15);
  EXPECT_NEAR(s.log_prob(0), -0.9189385, 1e-7);
}

TEST(Squashed, TinySigmaGivesMean) {
  const auto pi = constant_policy(0.0, -20.0);
  const auto s = pi.sample(Matrix::Ones(1, 3), Matrix::Constant(1, 3, 2.0));
  EXPECT_NEAR(s.actions.cwiseAbs().maxCoeff(), 0.0, 1e-8);
}

TEST(Squashed, DensityIntegratesToOne) {
  for (auto [mu, ls] : {std::pair{0.0, 0.0}, {0.8, -0.5}, {-1.5, 0.3}, {0.3, -2.0}}) {
    const auto pi = constant_policy(mu, ls);
    // Integrate over the pre-image u with a = tanh(u): da = sech^2(u) du.
    const int n = 200000;
    const double lo = -12.0, hi = 12.0, du = (hi - lo) / n;
    Matrix a(1, n), s = Matrix::Ones(1, n);
    Vector w(n);
    for (int k = 0; k < n; ++k) {
      const double u = lo + (k + 0.5) * du;
      a(0, k) = std::tanh(u);
      w(k) = std::exp(log_sech2(u)) * du;
    }
    const RowVector lp = pi.log_prob(s, a);
    double total = 0.0;
    for (int k = 0; k < n; ++k)
      if (std::abs(a(0, k)) < 1.0 - 1e-6) total += std::exp(lp(k)) * w(k);
    EXPECT_NEAR(total, 1.0, 1e-3) << "mu " << mu << " log_std " << ls;
  }
}

TEST(Squashed, LogProbRoundTrip) {
  Rng rng(10);
  auto pi = GaussianPolicy::create(3, std::vector<int>{8}, 2, rng, 0.1);
  const Matrix s = rng.normal_matrix(3, 50);
  const auto smp = pi.sample(s, rng);
  bool clamped = true;
  const RowVector lp = pi.log_prob(s, smp.actions, &clamped);
  EXPECT_FALSE(clamped);
  EXPECT_LE((lp - smp.log_prob).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Squashed, SymmetryAndMonotonicity) {
  const auto pi = constant_policy(0.0, -1.5);
  const int n = 50;
  Matrix a(1, n);
  for (int k = 0; k < n; ++k) a(0, k) = 0.019 * k;
  const Matrix s = Matrix::Ones(1, n);
  const RowVector lp = pi.log_prob(s, a), lm = pi.log_prob(s, -a);
  EXPECT_LE((lp - lm).cwiseAbs().maxCoeff(), 1e-12);
  for (int k = 1; k < n; ++k) EXPECT_LT(lp(k), lp(k - 1));
}

TEST(Squashed, BoundaryActionsAreClampedAndFlagged) {
  const auto pi = constant_policy(0.0, 0.0);
  bool clamped = false;
  const RowVector lp = pi.log_prob(Matrix::Ones(1, 1), Matrix::Ones(1, 1), &clamped);
  EXPECT_TRUE(clamped);
  EXPECT_TRUE(std::isfinite(lp(0)));
}

TEST(Squashed, EntropyGrowsWithSigma) {
  Rng rng(11);
  double prev = -1e9;
  for (double ls : {-2.0, -1.0, 0.0}) {
    const auto pi = constant_policy(0.2, ls);
    const auto smp = pi.sample(Matrix::Ones(1, 10000), rng);
    const double h = -smp.log_prob.mean();
    EXPECT_GT(h, prev);
    prev = h;
  }
}

TEST(Squashed, LogStdIsClamped) {
  const auto pi = constant_policy(0.0, 5.0);
  const auto h = pi.head(Matrix::Ones(1, 1));
  EXPECT_EQ(h.log_std(0, 0), 2.0);
  EXPECT_EQ(h.clamp_mask(0, 0), 0.0);
}

TEST(Squashed, BackwardMatchesFiniteDifferences) {
  Rng rng(12);
  for (int cfg = 0; cfg < 100; ++cfg) {
    const int sd = 1 + static_cast<int>(rng.index(4)), ad = 1 + static_cast<int>(rng.index(3));
    auto pi = GaussianPolicy::create(sd, std::vector<int>{6, 5}, ad, rng, 0.5);
    for (auto& l : pi.mutable_net().mutable_layers())
      for (Eigen::Index k = 0; k < l.bias.size(); ++k) l.bias(k) = rng.uniform(-0.5, 0.5);
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.index(5));
    const Matrix s = rng.normal_matrix(sd, n), xi = rng.normal_matrix(ad, n);
    const Matrix wa = rng.normal_matrix(ad, n);
    const RowVector wl = rng.normal_matrix(1, n);
    auto f = [&](const Vector& q) {
      GaussianPolicy p2 = pi;
      unflatten(p2.mutable_net(), q);
      const auto smp = p2.sample(s, xi);
      return smp.actions.cwiseProduct(wa).sum() + smp.log_prob.dot(wl);
    };
    const auto smp = pi.sample(s, xi);
    const auto g = pi.backward(smp, wa, wl);
    const Vector p = flatten(pi.net());
    const Vector d = rng.normal_matrix(p.size(), 1).col(0);
    EXPECT_LE(relative_error(flatten(g).dot(d), directional_fd(f, p, d)), 1e-4) << "config " << cfg;
  }
}

TEST(LogSech2, StableForLargeArguments) {
  EXPECT_NEAR(log_sech2(0.0), 0.0, 1e-15);
  EXPECT_NEAR(log_sech2(0.5), std::log(1.0 - std::tanh(0.5) * std::tanh(0.5)), 1e-14);
  EXPECT_NEAR(log_sech2(40.0), 2.0 * (std::numbers::ln2 - 40.0), 1e-12);
  EXPECT_TRUE(std::isfinite(log_sech2(1e4)));
}

}  // namespace
}  // namespace vvcrl::nn
