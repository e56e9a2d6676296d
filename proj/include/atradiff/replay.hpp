#ifndef ATRADIFF_REPLAY_HPP_
#define ATRADIFF_REPLAY_HPP_

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "atradiff/env.hpp"
#include "atradiff/generator.hpp"
#include "atradiff/rng.hpp"

namespace atradiff {

// Fixed-capacity FIFO with O(1) push and random access; the oldest element
// is overwritten once full.
template <typename T>
class RingStore {
 public:
  explicit RingStore(std::size_t capacity = 1) : capacity_(capacity) {
    if (capacity_ == 0) throw std::invalid_argument("ring store capacity must be positive");
    items_.reserve(std::min<std::size_t>(capacity_, 1 << 16));
  }

  void push(T item) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(item));
    } else {
      items_[head_] = std::move(item);
      head_ = (head_ + 1) % capacity_;
    }
  }

  // i-th oldest element.
  const T& at(std::size_t i) const { return items_[(head_ + i) % items_.size()]; }
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return items_.empty(); }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<T> items_;
};

// How done flags are assigned to synthesized transitions.
enum class SyntheticDone {
  // Only the last stored transition of a trajectory the pruner cut short.
  kPrunedEnd,
  // A transition with reward 1 is terminal and ends the stored rollout
  // (sparse goal-reaching environments, where reward implies episode end).
  kRewardTerminal,
};

struct ReplayConfig {
  double rho = 0.0;              // probability of sampling synthetic data, in [0, 1)
  double expected_length = 1.0;  // L >= 1
  std::size_t real_capacity = 200000;
  // 0 selects rho / (1 - rho) * real_capacity.
  std::size_t synthetic_capacity = 0;
  SyntheticDone synthetic_done = SyntheticDone::kPrunedEnd;
};

struct BufferStats {
  std::size_t real_size = 0;
  std::size_t synthetic_size = 0;
  std::uint64_t stores = 0;
  std::uint64_t generations = 0;
  std::uint64_t generation_failures = 0;
  std::uint64_t synthetic_added = 0;
  std::uint64_t generated_steps = 0;  // sum of generated trajectory lengths

  double synthetic_ratio() const {
    return real_size == 0 ? 0.0 : static_cast<double>(synthetic_size) / static_cast<double>(real_size);
  }
  double mean_generated_length() const {
    return generations == 0 ? 0.0 : static_cast<double>(generated_steps) / static_cast<double>(generations);
  }
};

// Replay buffer D = (D_s, D_o, rho, L). Every real store may trigger a
// synthesized trajectory from its next state with probability
// rho / ((1 - rho) L), keeping |D_s| / |D_o| near rho / (1 - rho); sampling
// draws from D_s with probability rho. Not internally synchronized.
// States of g that add_generated keeps under the given done rule (stored
// transitions + 1).
int stored_length(const GeneratedTrajectory& g, SyntheticDone rule);

class AugmentedReplayBuffer {
 public:
  explicit AugmentedReplayBuffer(const ReplayConfig& config = {});

  const ReplayConfig& config() const { return config_; }
  double rho() const { return config_.rho; }
  double expected_length() const { return config_.expected_length; }
  void set_expected_length(double length);

  // rho / ((1 - rho) L), capped at 1.
  double generation_probability() const;

  // Appends z to D_o, then possibly synthesizes from z.s_next. Generation
  // failures are counted and swallowed; the real store always commits.
  void store(const Transition& z, const TrajectoryGenerator* generator, Rng& rng);

  // Adds the l - 1 transitions of a generated trajectory to D_s.
  void add_generated(const GeneratedTrajectory& g);

  // Throws std::logic_error when D_o is empty.
  const Transition& sample(Rng& rng) const;

  bool can_sample() const { return !real_.empty(); }

  const RingStore<Transition>& real() const { return real_; }
  const RingStore<Transition>& synthetic() const { return synthetic_; }

  BufferStats stats() const;

  // One JSON object per line: s, a, s_next, r, done, synthetic.
  void dump(const std::filesystem::path& path) const;

 private:
  ReplayConfig config_;
  RingStore<Transition> real_;
  RingStore<Transition> synthetic_;
  BufferStats counters_;
};

}  // namespace atradiff

#endif  // ATRADIFF_REPLAY_HPP_
