#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "vvcrl/env.hpp"
#include "vvcrl/errors.hpp"
#include "vvcrl/rng.hpp"

namespace vvcrl {

struct Transition {
  Eigen::VectorXd s;  // normalized
  Eigen::VectorXd a;
  double r = 0.0;
  Eigen::VectorXd s_next;
  bool done = false;
  DoneReason reason = DoneReason::none;
};

struct JointTransition {
  Eigen::VectorXd s;
  Eigen::VectorXd a_p;
  Eigen::VectorXd a_o;
  double r = 0.0;
  Eigen::VectorXd s_next;
  bool done = false;
  DoneReason reason = DoneReason::none;
};

/// Column-stacked minibatch. `a_o` has zero rows for single-agent batches.
struct Batch {
  Eigen::MatrixXd s;
  Eigen::MatrixXd a_p;
  Eigen::MatrixXd a_o;
  Eigen::RowVectorXd r;
  Eigen::MatrixXd s_next;
  Eigen::RowVectorXd done;  // 1 for terminal samples, either reason

  Eigen::Index size() const { return s.cols(); }
};

/// Fixed-capacity ring; pushing beyond capacity overwrites the oldest entry.
template <class T>
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 400'000) : capacity_(capacity) {
    if (capacity == 0) throw InvalidInput("replay capacity must be positive");
  }

  void push(T item) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(item));
    } else {
      items_[cursor_] = std::move(item);
    }
    cursor_ = (cursor_ + 1) % capacity_;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t cursor() const { return cursor_; }
  bool empty() const { return items_.empty(); }
  void clear() {
    items_.clear();
    cursor_ = 0;
  }

  /// Storage slot i (not chronological once the ring has wrapped).
  const T& operator[](std::size_t i) const { return items_.at(i); }

  /// Uniform draw with replacement.
  std::vector<std::size_t> sample_indices(std::size_t batch_size, Rng& rng) const {
    if (batch_size == 0) throw ContractViolation("batch size must be positive");
    if (items_.size() < batch_size)
      throw ContractViolation("replay buffer holds " + std::to_string(items_.size()) + " transitions, batch needs " +
                              std::to_string(batch_size));
    std::vector<std::size_t> idx(batch_size);
    for (auto& i : idx) i = rng.index(items_.size());
    return idx;
  }

  Batch sample(std::size_t batch_size, Rng& rng) const { return gather(sample_indices(batch_size, rng)); }

  Batch gather(const std::vector<std::size_t>& idx) const {
    const auto n = static_cast<Eigen::Index>(idx.size());
    if (n == 0) return {};
    const T& first = items_.at(idx.front());
    Batch b;
    b.s.resize(first.s.size(), n);
    b.s_next.resize(first.s.size(), n);
    b.r.resize(n);
    b.done.resize(n);
    if constexpr (std::is_same_v<T, JointTransition>) {
      b.a_p.resize(first.a_p.size(), n);
      b.a_o.resize(first.a_o.size(), n);
    } else {
      b.a_p.resize(first.a.size(), n);
      b.a_o.resize(0, n);
    }
    for (Eigen::Index k = 0; k < n; ++k) {
      const T& t = items_.at(idx[static_cast<std::size_t>(k)]);
      b.s.col(k) = t.s;
      b.s_next.col(k) = t.s_next;
      b.r(k) = t.r;
      b.done(k) = t.done ? 1.0 : 0.0;
      if constexpr (std::is_same_v<T, JointTransition>) {
        b.a_p.col(k) = t.a_p;
        b.a_o.col(k) = t.a_o;
      } else {
        b.a_p.col(k) = t.a;
      }
    }
    return b;
  }

 private:
  std::size_t capacity_;
  std::size_t cursor_ = 0;
  std::vector<T> items_;
};

}  // namespace vvcrl
