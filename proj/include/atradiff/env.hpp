#ifndef ATRADIFF_ENV_HPP_
#define ATRADIFF_ENV_HPP_

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "atradiff/rng.hpp"

namespace atradiff {

using State = Eigen::VectorXd;

struct EnvSpec {
  std::string name;
  int state_dim = 0;
  int action_count = 0;  // discrete actions, encoded one-hot in trajectories
  int horizon = 1;
  double gamma = 0.99;
  int task_count = 1;
  bool binary_reward = true;  // sparse 0-1 reward
  std::string goal_description;
};

// One episode (or one generated rollout) as aligned per-step records.
// rewards[i] is the reward for taking actions[i] in states[i]; dones[i] is
// set when that step entered an absorbing goal state (time-limit truncation
// is not a done). final_state, when known, is the state reached after the
// last action; generated trajectories leave it empty.
struct Trajectory {
  std::vector<State> states;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<std::uint8_t> dones;
  int task = 0;
  State final_state;

  int length() const { return static_cast<int>(states.size()); }
  double total_reward() const;
  bool succeeded() const;
  // Throws std::invalid_argument when the per-step sequences disagree.
  void validate() const;
};

struct Transition {
  State s;
  int a = 0;
  State s_next;
  double r = 0.0;
  bool done = false;
  bool synthetic = false;
  // Bookkeeping for real transitions: source episode and step index.
  std::int64_t episode = -1;
  int step = -1;
  int task = 0;
};

struct StepResult {
  State next;
  double reward = 0.0;
  bool terminal = false;  // reached the goal
  bool done = false;      // terminal or horizon reached
};

class InvalidAction : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Episodic environment. dynamics() is the pure transition function; reset()
// and step() wrap it with a step counter that enforces the horizon.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual const EnvSpec& spec() const = 0;
  virtual State sample_start(Rng& rng) const = 0;
  virtual StepResult dynamics(const State& state, int action, Rng& rng) const = 0;
  virtual int expert_action(const State& state) const = 0;
  virtual std::unique_ptr<Environment> clone() const = 0;

  virtual void set_task(int task);
  int task() const { return task_; }

  State reset(Rng& rng);
  StepResult step(int action, Rng& rng);

  const State& state() const { return state_; }
  int elapsed() const { return elapsed_; }

 protected:
  void check_action(int action) const;

  int task_ = 0;

 private:
  State state_;
  int elapsed_ = 0;
};

struct PointGoalConfig {
  std::vector<Eigen::Vector2d> goals{Eigen::Vector2d(0.9, 0.9)};  // one per task
  double goal_radius = 0.1;
  double step_size = 0.05;
  double noise_std = 0.005;
  int horizon = 60;
  double gamma = 0.99;
};

// 2-D point mass on [0,1]^2 with actions {+x, -x, +y, -y}; reward 1 and
// episode end on entering the goal disk.
class PointGoal final : public Environment {
 public:
  explicit PointGoal(PointGoalConfig config = {});

  const EnvSpec& spec() const override { return spec_; }
  State sample_start(Rng& rng) const override;
  StepResult dynamics(const State& state, int action, Rng& rng) const override;
  int expert_action(const State& state) const override;
  std::unique_ptr<Environment> clone() const override;

  const PointGoalConfig& config() const { return config_; }
  const Eigen::Vector2d& goal() const { return config_.goals[static_cast<std::size_t>(task_)]; }
  bool in_goal(const State& s) const;
  static Eigen::Vector2d delta(int action, double step_size);

 private:
  PointGoalConfig config_;
  EnvSpec spec_;
};

struct ChainConfig {
  int length = 20;
  int horizon = 40;
  double gamma = 0.99;
};

// One-hot chain; action 0 moves left (floored at 0), action 1 moves right.
// Reaching the last state gives reward 1 and ends the episode.
class Chain final : public Environment {
 public:
  explicit Chain(ChainConfig config = {});

  const EnvSpec& spec() const override { return spec_; }
  State sample_start(Rng& rng) const override;
  StepResult dynamics(const State& state, int action, Rng& rng) const override;
  int expert_action(const State& state) const override;
  std::unique_ptr<Environment> clone() const override;

  int index_of(const State& s) const;
  State one_hot(int index) const;

 private:
  ChainConfig config_;
  EnvSpec spec_;
};

std::unique_ptr<Environment> make_environment(const std::string& name);

enum class PolicyTier { kRandom, kNoisyExpert, kExpert };

PolicyTier parse_policy_tier(const std::string& name);
std::string to_string(PolicyTier tier);

struct BehaviorPolicy {
  PolicyTier tier = PolicyTier::kExpert;
  double flip_prob = 0.3;  // noisy-expert: chance of replacing the expert action

  int act(const Environment& env, const State& state, Rng& rng) const;
};

// Rolls out n_episodes with the behavior policy. Throws on n_episodes < 1.
std::vector<Trajectory> collect_offline(Environment& env, const BehaviorPolicy& policy, int n_episodes,
                                        Rng& rng);

// Real transitions of a trajectory; needs final_state for the last step.
std::vector<Transition> to_transitions(const Trajectory& traj, std::int64_t episode_id);

// JSON-lines dataset: one trajectory object per line with fields, in order,
// "states", "actions", "rewards", "task", then "dones" and "final_state".
void write_dataset(const std::filesystem::path& path, const std::vector<Trajectory>& data);
std::vector<Trajectory> read_dataset(const std::filesystem::path& path);
std::string trajectory_to_json_line(const Trajectory& traj);
Trajectory trajectory_from_json_line(const std::string& line);

Eigen::VectorXd one_hot(int index, int size);

}  // namespace atradiff

#endif  // ATRADIFF_ENV_HPP_
