#include <chrono>
#include <complex>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vvcrl/case_io.hpp"
#include "vvcrl/netcore.hpp"

namespace vvcrl {
namespace {

using testing::backward_forward_sweep;
using testing::two_bus;

NetworkModel load_network(const std::string& name) { return to_network(load_case_file(resolve_case_path(name))); }

TEST(PowerFlow, TwoBusMatchesClosedForm) {
  const auto net = two_bus();
  const auto inj = net.load_injections();
  const auto sol = solve_power_flow(net, inj);
  ASSERT_TRUE(sol.converged);
  EXPECT_NEAR(sol.v_mag[1], testing::two_bus_voltage(0.01, 0.01, 0.1, 0.05), 1e-8);
  EXPECT_DOUBLE_EQ(sol.v_mag[0], 1.0);
}

TEST(PowerFlow, TwoBusLossEqualsCurrentSquaredTimesR) {
  const auto net = two_bus();
  const auto inj = net.load_injections();
  const auto sol = solve_power_flow(net, inj);
  ASSERT_TRUE(sol.converged);
  const auto ref = backward_forward_sweep(net, inj);
  const std::complex<double> v2 = std::polar(ref.v_mag[1], ref.v_ang[1]);
  const auto current = std::conj(std::complex<double>(0.1, 0.05) / v2);
  const double oracle_loss = std::norm(current) * 0.01;
  EXPECT_NEAR(total_loss(net, sol, inj), oracle_loss, 1e-10);
  EXPECT_NEAR(branch_loss(net, sol), oracle_loss, 1e-10);
}

class FeederCase : public ::testing::TestWithParam<std::string> {};

TEST_P(FeederCase, NewtonMatchesSweepOracle) {
  const auto net = load_network(GetParam());
  const auto inj = net.load_injections();
  const auto sol = solve_power_flow(net, inj);
  ASSERT_TRUE(sol.converged);
  EXPECT_LE(sol.iterations, 30);
  EXPECT_LE(sol.max_mismatch, 1e-8);
  const auto ref = backward_forward_sweep(net, inj);
  ASSERT_TRUE(ref.converged);
  for (std::size_t i = 0; i < net.bus_count(); ++i) {
    EXPECT_NEAR(sol.v_mag[i], ref.v_mag[i], 1e-6) << "bus index " << i;
    EXPECT_NEAR(sol.v_ang[i], ref.v_ang[i], 1e-6) << "bus index " << i;
  }
}

TEST_P(FeederCase, LossDuality) {
  const auto net = load_network(GetParam());
  const auto inj = net.load_injections();
  const auto sol = solve_power_flow(net, inj);
  ASSERT_TRUE(sol.converged);
  EXPECT_NEAR(total_loss(net, sol, inj), branch_loss(net, sol), 1e-9);
  EXPECT_GT(branch_loss(net, sol), 0.0);
}

TEST_P(FeederCase, SolveIsFast) {
  const auto net = load_network(GetParam());
  const auto inj = net.load_injections();
  const auto t0 = std::chrono::steady_clock::now();
  const int reps = 5;
  for (int k = 0; k < reps; ++k) ASSERT_TRUE(solve_power_flow(net, inj).converged);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / reps;
  EXPECT_LT(ms, 50.0);
}

INSTANTIATE_TEST_SUITE_P(Cases, FeederCase, ::testing::Values("case33", "case69"));

TEST(PowerFlow, ShuntsMatchSweep) {
  auto buses = two_bus().buses();
  buses[1].shunt_b = 0.02;
  buses[1].shunt_g = 0.005;
  const auto net = two_bus().with_buses(buses);
  const auto inj = net.load_injections();
  const auto sol = solve_power_flow(net, inj);
  const auto ref = backward_forward_sweep(net, inj);
  ASSERT_TRUE(sol.converged);
  EXPECT_NEAR(sol.v_mag[1], ref.v_mag[1], 1e-9);
  EXPECT_NEAR(total_loss(net, sol, inj), branch_loss(net, sol), 1e-10);
}

TEST(PowerFlow, DivergenceIsReportedNotThrown) {
  const auto net = two_bus(0.1, 0.1, 50.0, 50.0);
  const auto sol = solve_power_flow(net, net.load_injections());
  EXPECT_FALSE(sol.converged);
  EXPECT_THROW(total_loss(net, sol, net.load_injections()), InvalidInput);
}

TEST(PowerFlow, SlackVoltageIsHonoured) {
  const auto net = two_bus();
  PowerFlowOptions opt;
  opt.v_slack = 1.03;
  const auto sol = solve_power_flow(net, net.load_injections(), opt);
  ASSERT_TRUE(sol.converged);
  EXPECT_DOUBLE_EQ(sol.v_mag[0], 1.03);
  EXPECT_NEAR(sol.v_mag[1], testing::two_bus_voltage(0.01, 0.01, 0.1, 0.05, 1.03), 1e-8);
}

TEST(NetworkModel, RejectsBadTopology) {
  const std::vector<Bus> b3{{1}, {2}, {3}};
  EXPECT_THROW(NetworkModel(b3, {{1, 2, 0.1, 0.1}}, 1, 1, 1), InvalidInput);                      // too few branches
  EXPECT_THROW(NetworkModel(b3, {{1, 2, 0.1, 0.1}, {2, 1, 0.1, 0.1}}, 1, 1, 1), InvalidInput);    // loop, 3 unreached
  EXPECT_THROW(NetworkModel(b3, {{1, 2, 0.1, 0.1}, {2, 4, 0.1, 0.1}}, 1, 1, 1), InvalidInput);    // unknown bus
  EXPECT_THROW(NetworkModel(b3, {{1, 2, 0.0, 0.0}, {2, 3, 0.1, 0.1}}, 1, 1, 1), InvalidInput);    // zero impedance
  EXPECT_THROW(NetworkModel(b3, {{1, 2, 0.1, 0.1}, {2, 3, 0.1, 0.1}}, 7, 1, 1), InvalidInput);    // slack
  EXPECT_THROW(NetworkModel({{1}, {1}}, {{1, 1, 0.1, 0.1}}, 1, 1, 1), InvalidInput);              // duplicate id
  EXPECT_NO_THROW(NetworkModel(b3, {{1, 2, 0.1, 0.1}, {2, 3, 0.1, 0.1}}, 1, 1, 1));
}

TEST(NetworkModel, InjectionLengthIsAContract) {
  const auto net = two_bus();
  std::vector<Injection> inj(3);
  EXPECT_THROW(solve_power_flow(net, inj), ContractViolation);
}

TEST(ParameterScaling, ClampsAndReports) {
  const auto net = two_bus(0.02, 0.04);
  std::vector<BranchDelta> d{{0.1, 0.0}};
  const auto out = apply_parameter_scaling(net, d);
  EXPECT_DOUBLE_EQ(out.network.branches()[0].r, 0.04);
  EXPECT_DOUBLE_EQ(out.network.branches()[0].x, 0.04);
  ASSERT_EQ(out.clamped.size(), 1u);

  d = {{0.01, -0.01}};
  const auto in = apply_parameter_scaling(net, d);
  EXPECT_DOUBLE_EQ(in.network.branches()[0].r, 0.03);
  EXPECT_DOUBLE_EQ(in.network.branches()[0].x, 0.03);
  EXPECT_TRUE(in.clamped.empty());
  EXPECT_THROW(apply_parameter_scaling(net, std::vector<BranchDelta>{}), ContractViolation);
}

TEST(ParameterScaling, HigherResistanceRaisesLoss) {
  const auto net = two_bus();
  std::vector<BranchDelta> d{{0.01, 0.0}};
  const auto hi = apply_parameter_scaling(net, d).network;
  const auto a = solve_power_flow(net, net.load_injections());
  const auto b = solve_power_flow(hi, hi.load_injections());
  EXPECT_GT(branch_loss(hi, b), branch_loss(net, a));
}

}  // namespace
}  // namespace vvcrl
