#pragma once

// Balanced radial power flow: network model, Newton-Raphson solver in polar
// form, loss accounting and branch-parameter scaling.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "vvcrl/errors.hpp"

namespace vvcrl {

struct Bus {
  int id = 0;
  double shunt_g = 0.0;  // p.u.
  double shunt_b = 0.0;  // p.u.
  double p_load = 0.0;   // MW
  double q_load = 0.0;   // MVAr
};

struct Branch {
  int from = 0;
  int to = 0;
  double r = 0.0;  // p.u.
  double x = 0.0;  // p.u.
};

struct Admittance {
  double g = 0.0;
  double b = 0.0;
};

/// Series admittance g + jb = 1 / (r + jx).
inline Admittance build_admittance(const Branch& branch) {
  const double den = branch.r * branch.r + branch.x * branch.x;
  if (!(den > 0.0) || !std::isfinite(den))
    throw InvalidInput("branch " + std::to_string(branch.from) + "-" + std::to_string(branch.to) +
                       " has zero or non-finite impedance");
  return {branch.r / den, -branch.x / den};
}

/// Per-bus nodal injection in p.u. (generation minus demand).
struct Injection {
  double p = 0.0;
  double q = 0.0;
};

/// Radial feeder. Construction validates the topology: unique ids, one slack,
/// |branches| = |buses| - 1 and every bus reachable from the slack.
class NetworkModel {
 public:
  NetworkModel() = default;

  NetworkModel(std::vector<Bus> buses, std::vector<Branch> branches, int slack_id, double base_mva,
               double base_kv)
      : buses_(std::move(buses)),
        branches_(std::move(branches)),
        slack_id_(slack_id),
        base_mva_(base_mva),
        base_kv_(base_kv) {
    validate();
  }

  const std::vector<Bus>& buses() const { return buses_; }
  const std::vector<Branch>& branches() const { return branches_; }
  int slack_id() const { return slack_id_; }
  std::size_t slack_index() const { return slack_index_; }
  double base_mva() const { return base_mva_; }
  double base_kv() const { return base_kv_; }
  std::size_t bus_count() const { return buses_.size(); }
  std::size_t branch_count() const { return branches_.size(); }

  /// Internal position of a bus id; throws InvalidInput for unknown ids.
  std::size_t index_of(int id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw InvalidInput("unknown bus id " + std::to_string(id));
    return it->second;
  }
  bool has_bus(int id) const { return index_.count(id) != 0; }

  /// Same buses and topology with replaced branch parameters.
  NetworkModel with_branches(std::vector<Branch> branches) const {
    return NetworkModel(buses_, std::move(branches), slack_id_, base_mva_, base_kv_);
  }
  NetworkModel with_buses(std::vector<Bus> buses) const {
    return NetworkModel(std::move(buses), branches_, slack_id_, base_mva_, base_kv_);
  }

  /// Demand-only injections (p.u.) for a uniform load multiplier.
  std::vector<Injection> load_injections(double multiplier = 1.0) const {
    std::vector<Injection> inj(buses_.size());
    for (std::size_t i = 0; i < buses_.size(); ++i) {
      inj[i].p = -multiplier * buses_[i].p_load / base_mva_;
      inj[i].q = -multiplier * buses_[i].q_load / base_mva_;
    }
    return inj;
  }

  /// Dense bus admittance matrix including shunts.
  Eigen::MatrixXcd admittance_matrix() const {
    const auto n = static_cast<Eigen::Index>(buses_.size());
    Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
    for (const auto& br : branches_) {
      const auto a = build_admittance(br);
      const std::complex<double> ys(a.g, a.b);
      const auto i = static_cast<Eigen::Index>(index_.at(br.from));
      const auto j = static_cast<Eigen::Index>(index_.at(br.to));
      y(i, i) += ys;
      y(j, j) += ys;
      y(i, j) -= ys;
      y(j, i) -= ys;
    }
    for (Eigen::Index i = 0; i < n; ++i) y(i, i) += std::complex<double>(buses_[i].shunt_g, buses_[i].shunt_b);
    return y;
  }

 private:
  void validate() {
    if (buses_.empty()) throw InvalidInput("network has no buses");
    if (!(base_mva_ > 0.0) || !(base_kv_ > 0.0)) throw InvalidInput("base_mva and base_kv must be positive");
    index_.clear();
    for (std::size_t i = 0; i < buses_.size(); ++i) {
      const auto& b = buses_[i];
      if (!index_.emplace(b.id, i).second) throw InvalidInput("duplicate bus id " + std::to_string(b.id));
      if (!std::isfinite(b.p_load) || !std::isfinite(b.q_load) || !std::isfinite(b.shunt_g) ||
          !std::isfinite(b.shunt_b))
        throw InvalidInput("bus " + std::to_string(b.id) + " has non-finite data");
    }
    auto slack = index_.find(slack_id_);
    if (slack == index_.end()) throw InvalidInput("slack bus " + std::to_string(slack_id_) + " not in bus list");
    slack_index_ = slack->second;
    if (branches_.size() + 1 != buses_.size())
      throw InvalidInput("radial network needs |branches| = |buses| - 1 (got " + std::to_string(branches_.size()) +
                         " branches for " + std::to_string(buses_.size()) + " buses)");

    std::vector<std::vector<std::size_t>> adj(buses_.size());
    for (const auto& br : branches_) {
      if (br.r < 0.0) throw InvalidInput("negative resistance on branch " + std::to_string(br.from) + "-" + std::to_string(br.to));
      build_admittance(br);
      auto fi = index_.find(br.from);
      auto ti = index_.find(br.to);
      if (fi == index_.end() || ti == index_.end())
        throw InvalidInput("branch " + std::to_string(br.from) + "-" + std::to_string(br.to) + " references unknown bus");
      if (fi->second == ti->second) throw InvalidInput("self-loop branch at bus " + std::to_string(br.from));
      adj[fi->second].push_back(ti->second);
      adj[ti->second].push_back(fi->second);
    }
    // n-1 edges and connected <=> tree.
    std::vector<char> seen(buses_.size(), 0);
    std::vector<std::size_t> stack{slack_index_};
    seen[slack_index_] = 1;
    std::size_t reached = 1;
    while (!stack.empty()) {
      auto u = stack.back();
      stack.pop_back();
      for (auto v : adj[u])
        if (!seen[v]) {
          seen[v] = 1;
          ++reached;
          stack.push_back(v);
        }
    }
    if (reached != buses_.size()) throw InvalidInput("branch set is not a tree rooted at the slack bus");
  }

  std::vector<Bus> buses_;
  std::vector<Branch> branches_;
  int slack_id_ = 0;
  double base_mva_ = 1.0;
  double base_kv_ = 1.0;
  std::size_t slack_index_ = 0;
  std::unordered_map<int, std::size_t> index_;
};

struct PowerFlowSolution {
  std::vector<double> v_mag;  // p.u., in bus order
  std::vector<double> v_ang;  // rad
  bool converged = false;
  int iterations = 0;
  double max_mismatch = 0.0;  // p.u.
};

struct PowerFlowOptions {
  double v_slack = 1.0;
  double tolerance = 1e-8;
  int max_iterations = 30;
};

namespace detail {

/// Complex nodal power S_i = V_i * conj(sum_j Y_ij V_j) for all buses.
inline Eigen::VectorXcd nodal_power(const Eigen::MatrixXcd& y, const Eigen::VectorXd& vm, const Eigen::VectorXd& va) {
  Eigen::VectorXcd v(vm.size());
  for (Eigen::Index i = 0; i < vm.size(); ++i) v(i) = std::polar(vm(i), va(i));
  Eigen::VectorXcd current = y * v;
  return v.array() * current.conjugate().array();
}

}  // namespace detail

/// Newton-Raphson power flow in polar coordinates from a flat start. Every
/// non-slack bus is a PQ bus. Non-convergence is reported in the result, not
/// thrown; the returned state is the last iterate.
inline PowerFlowSolution solve_power_flow(const NetworkModel& net, std::span<const Injection> injections,
                                          const PowerFlowOptions& opt = {}) {
  const std::size_t n = net.bus_count();
  if (injections.size() != n) throw ContractViolation("injection vector length must equal bus count");
  const std::size_t slack = net.slack_index();
  const Eigen::MatrixXcd y = net.admittance_matrix();
  const Eigen::MatrixXd g = y.real();
  const Eigen::MatrixXd b = y.imag();

  Eigen::VectorXd vm = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  Eigen::VectorXd va = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  vm(static_cast<Eigen::Index>(slack)) = opt.v_slack;

  // Unknown ordering: angles then magnitudes of the non-slack buses.
  std::vector<Eigen::Index> pq;
  pq.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i)
    if (i != slack) pq.push_back(static_cast<Eigen::Index>(i));
  const auto m = static_cast<Eigen::Index>(pq.size());

  PowerFlowSolution sol;
  auto mismatch = [&](Eigen::VectorXd& f) {
    const Eigen::VectorXcd s = detail::nodal_power(y, vm, va);
    f.resize(2 * m);
    for (Eigen::Index k = 0; k < m; ++k) {
      f(k) = injections[pq[k]].p - s(pq[k]).real();
      f(m + k) = injections[pq[k]].q - s(pq[k]).imag();
    }
    return s;
  };

  Eigen::VectorXd f;
  Eigen::MatrixXd jac(2 * m, 2 * m);
  Eigen::VectorXcd s = mismatch(f);
  sol.max_mismatch = m > 0 ? f.cwiseAbs().maxCoeff() : 0.0;
  auto newton_step = [&] {
    for (Eigen::Index r = 0; r < m; ++r) {
      const Eigen::Index i = pq[r];
      const double pi = s(i).real();
      const double qi = s(i).imag();
      for (Eigen::Index c = 0; c < m; ++c) {
        const Eigen::Index j = pq[c];
        if (i == j) {
          jac(r, c) = -qi - b(i, i) * vm(i) * vm(i);
          jac(r, m + c) = pi / vm(i) + g(i, i) * vm(i);
          jac(m + r, c) = pi - g(i, i) * vm(i) * vm(i);
          jac(m + r, m + c) = qi / vm(i) - b(i, i) * vm(i);
        } else if (g(i, j) == 0.0 && b(i, j) == 0.0) {
          jac(r, c) = jac(r, m + c) = jac(m + r, c) = jac(m + r, m + c) = 0.0;
        } else {
          const double th = va(i) - va(j);
          const double gc_bs = g(i, j) * std::cos(th) + b(i, j) * std::sin(th);
          const double gs_bc = g(i, j) * std::sin(th) - b(i, j) * std::cos(th);
          jac(r, c) = vm(i) * vm(j) * gs_bc;
          jac(r, m + c) = vm(i) * gc_bs;
          jac(m + r, c) = -vm(i) * vm(j) * gc_bs;
          jac(m + r, m + c) = vm(i) * gs_bc;
        }
      }
    }
    const Eigen::VectorXd dx = jac.partialPivLu().solve(f);
    for (Eigen::Index k = 0; k < m; ++k) {
      va(pq[k]) += dx(k);
      vm(pq[k]) += dx(m + k);
    }
    s = mismatch(f);
    sol.max_mismatch = f.cwiseAbs().maxCoeff();
    if (!std::isfinite(sol.max_mismatch) || vm.minCoeff() <= 0.0) sol.max_mismatch = std::numeric_limits<double>::infinity();
  };
  int it = 0;
  while (std::isfinite(sol.max_mismatch) && sol.max_mismatch > opt.tolerance && it < opt.max_iterations) {
    newton_step();
    ++it;
  }
  sol.iterations = it;
  sol.converged = std::isfinite(sol.max_mismatch) && sol.max_mismatch <= opt.tolerance;
  // One polishing step past the tolerance (not counted) so that nodal and
  // branch loss sums agree to round-off; kept only if it helps.
  if (sol.converged && m > 0 && sol.max_mismatch > 1e-14) {
    const Eigen::VectorXd vm0 = vm, va0 = va;
    const double before = sol.max_mismatch;
    newton_step();
    if (!(sol.max_mismatch < before)) {
      vm = vm0;
      va = va0;
      sol.max_mismatch = before;
    }
  }
  sol.v_mag.assign(vm.data(), vm.data() + vm.size());
  sol.v_ang.assign(va.data(), va.data() + va.size());
  return sol;
}

/// Complex power injected at every bus (p.u.) implied by a solved state.
inline std::vector<Injection> solved_injections(const NetworkModel& net, const PowerFlowSolution& sol) {
  const auto vm = Eigen::Map<const Eigen::VectorXd>(sol.v_mag.data(), static_cast<Eigen::Index>(sol.v_mag.size()));
  const auto va = Eigen::Map<const Eigen::VectorXd>(sol.v_ang.data(), static_cast<Eigen::Index>(sol.v_ang.size()));
  const Eigen::VectorXcd s = detail::nodal_power(net.admittance_matrix(), vm, va);
  std::vector<Injection> out(static_cast<std::size_t>(s.size()));
  for (Eigen::Index i = 0; i < s.size(); ++i) out[static_cast<std::size_t>(i)] = {s(i).real(), s(i).imag()};
  return out;
}

/// Active power loss in MW as the sum of all nodal injections: the specified
/// non-slack injections plus the slack import recovered from the solution.
inline double total_loss(const NetworkModel& net, const PowerFlowSolution& sol, std::span<const Injection> injections) {
  if (!sol.converged) throw InvalidInput("total_loss needs a converged power flow solution");
  if (injections.size() != net.bus_count()) throw ContractViolation("injection vector length must equal bus count");
  const auto solved = solved_injections(net, sol);
  double sum = 0.0;
  for (std::size_t i = 0; i < injections.size(); ++i) sum += (i == net.slack_index()) ? solved[i].p : injections[i].p;
  return sum * net.base_mva();
}

/// Loss in MW as sum over branches of |I|^2 r plus shunt conductance losses.
inline double branch_loss(const NetworkModel& net, const PowerFlowSolution& sol) {
  if (!sol.converged) throw InvalidInput("branch_loss needs a converged power flow solution");
  double sum = 0.0;
  for (const auto& br : net.branches()) {
    const auto i = net.index_of(br.from);
    const auto j = net.index_of(br.to);
    const auto dv = std::polar(sol.v_mag[i], sol.v_ang[i]) - std::polar(sol.v_mag[j], sol.v_ang[j]);
    sum += std::norm(dv) * build_admittance(br).g;
  }
  for (std::size_t i = 0; i < net.bus_count(); ++i) sum += net.buses()[i].shunt_g * sol.v_mag[i] * sol.v_mag[i];
  return sum * net.base_mva();
}

struct BranchDelta {
  double dr = 0.0;
  double dx = 0.0;
};

struct ScaledNetwork {
  NetworkModel network;
  /// Branch positions whose requested parameter left the allowed range and was clamped.
  std::vector<std::size_t> clamped;
};

/// r = r0 + dr, x = x0 + dx per branch, each kept inside [lo, hi] x nominal.
/// Out-of-range requests are clamped and reported in `clamped`.
inline ScaledNetwork apply_parameter_scaling(const NetworkModel& nominal, std::span<const BranchDelta> deltas,
                                             double lo = 0.5, double hi = 2.0) {
  if (deltas.size() != nominal.branch_count()) throw ContractViolation("one (dr, dx) pair per branch required");
  ScaledNetwork out;
  std::vector<Branch> branches = nominal.branches();
  for (std::size_t k = 0; k < branches.size(); ++k) {
    auto& br = branches[k];
    const double r = br.r + deltas[k].dr;
    const double x = br.x + deltas[k].dx;
    // Relative slack so that exact bound requests (dr = r0) are not flagged.
    const double rlo = lo * br.r, rhi = hi * br.r, xlo = lo * br.x, xhi = hi * br.x;
    const double eps_r = 1e-12 * std::abs(br.r), eps_x = 1e-12 * std::abs(br.x);
    const bool clamp = r < rlo - eps_r || r > rhi + eps_r || x < xlo - eps_x || x > xhi + eps_x;
    br.r = std::clamp(r, rlo, rhi);
    br.x = std::clamp(x, xlo, xhi);
    if (clamp) out.clamped.push_back(k);
  }
  out.network = nominal.with_branches(std::move(branches));
  return out;
}

}  // namespace vvcrl
