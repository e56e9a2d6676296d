// Independent reference implementations and test doubles shared by the unit
// and acceptance suites. Deliberately naive: literal loops, full sorts.
#ifndef ATRADIFF_TESTS_ORACLES_HPP_
#define ATRADIFF_TESTS_ORACLES_HPP_

#include <algorithm>
#include <cmath>
#include <vector>

#include "atradiff/generator.hpp"
#include "atradiff/qfunction.hpp"

namespace oracle {

// Ending index from the prefix/suffix formulas evaluated term by term with
// 1-based indices: sim_j = sim(s_j, s_{j+1}) for j = 1..k-1,
// pre_i = (sum_{j=1}^{i} sim_j) / i,
// suf_i = (sum_{j=i}^{k} sim(s_{j-1}, s_j)) / (k - i + 1) = (sum_{j=i}^{k} sim_{j-1}) / (k - i + 1).
inline int prune(const std::vector<double>& sims, double epsilon, double tie_tolerance) {
  const int k = static_cast<int>(sims.size()) + 1;
  if (k < 3) return k;
  auto sim = [&sims](int j) { return sims[static_cast<std::size_t>(j - 1)]; };
  std::vector<double> gap(static_cast<std::size_t>(k + 1), -1.0);
  double best = -1.0;
  for (int i = 2; i <= k - 1; ++i) {
    double pre = 0.0;
    for (int j = 1; j <= i; ++j) pre += sim(j);
    pre /= i;
    double suf = 0.0;
    for (int j = i; j <= k; ++j) suf += sim(j - 1);
    suf /= (k - i + 1);
    gap[static_cast<std::size_t>(i)] = std::abs(pre - suf);
    best = std::max(best, gap[static_cast<std::size_t>(i)]);
  }
  if (best < epsilon) return k;
  for (int i = k - 1; i >= 2; --i)
    if (gap[static_cast<std::size_t>(i)] >= best - tie_tolerance) return i;
  return k;
}

// Numpy-style linear percentile computed from a full sort.
inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (pos - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

// Emits trajectories of a fixed number of states stepping by +0.01 in every
// coordinate. `transitions` stored transitions means transitions + 1 states.
class FixedLengthGenerator final : public atradiff::TrajectoryGenerator {
 public:
  explicit FixedLengthGenerator(int states, bool pruned = false) : states_(states), pruned_(pruned) {}
  atradiff::GeneratedTrajectory generate(const atradiff::State& s0, int task, atradiff::Rng&) const override {
    atradiff::GeneratedTrajectory g;
    atradiff::State s = s0;
    for (int i = 0; i < states_; ++i) {
      g.trajectory.states.push_back(s);
      g.trajectory.actions.push_back(0);
      g.trajectory.rewards.push_back(i + 1 == states_ ? 1.0 : 0.0);
      g.trajectory.dones.push_back(0);
      s = s.array() + 0.01;
    }
    g.trajectory.task = task;
    g.window_length = states_;
    g.pruned = pruned_;
    ++calls;
    return g;
  }
  mutable int calls = 0;

 private:
  int states_;
  bool pruned_;
};

// Picks one of two lengths with equal probability using the caller's rng.
class TwoLengthGenerator final : public atradiff::TrajectoryGenerator {
 public:
  TwoLengthGenerator(int a, int b) : a_(a), b_(b) {}
  atradiff::GeneratedTrajectory generate(const atradiff::State& s0, int task, atradiff::Rng& rng) const override {
    FixedLengthGenerator g(rng.bernoulli(0.5) ? a_ : b_);
    return g.generate(s0, task, rng);
  }

 private:
  int a_, b_;
};

class ThrowingGenerator final : public atradiff::TrajectoryGenerator {
 public:
  atradiff::GeneratedTrajectory generate(const atradiff::State&, int, atradiff::Rng&) const override {
    throw std::runtime_error("generator failure");
  }
};

// Q(s, a) = sum_j w[a][j] * s_j, a linear table for indicator tests.
class LinearQ final : public atradiff::QFunction {
 public:
  explicit LinearQ(Eigen::MatrixXd w) : w_(std::move(w)) {}
  Eigen::VectorXd q_values(const atradiff::State& s) const override { return w_ * s; }
  Eigen::MatrixXd q_values_batch(const Eigen::MatrixXd& states) const override { return w_ * states; }
  Eigen::MatrixXd& weights() { return w_; }

 private:
  Eigen::MatrixXd w_;
};

}  // namespace oracle

#endif  // ATRADIFF_TESTS_ORACLES_HPP_
