#ifndef ATRADIFF_GENERATOR_HPP_
#define ATRADIFF_GENERATOR_HPP_

#include "atradiff/env.hpp"
#include "atradiff/rng.hpp"

namespace atradiff {

struct GeneratedTrajectory {
  Trajectory trajectory;   // starts at the requested state
  int window_length = 0;   // preset length the trajectory was cut from
  bool pruned = false;     // the pruner found an ending before the window end
  bool from_original = false;
};

// Anything that can synthesize a trajectory from an initial state. The
// augmented replay buffer only sees this interface.
class TrajectoryGenerator {
 public:
  virtual ~TrajectoryGenerator() = default;
  virtual GeneratedTrajectory generate(const State& initial_state, int task, Rng& rng) const = 0;
};

}  // namespace atradiff

#endif  // ATRADIFF_GENERATOR_HPP_
