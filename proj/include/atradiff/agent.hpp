#ifndef ATRADIFF_AGENT_HPP_
#define ATRADIFF_AGENT_HPP_

#include <cstdint>
#include <vector>

#include "atradiff/nn.hpp"
#include "atradiff/qfunction.hpp"
#include "atradiff/replay.hpp"

namespace atradiff {

struct AgentConfig {
  std::vector<int> hidden{64, 64};
  double learning_rate = 1e-3;
  double gamma = 0.99;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  int epsilon_decay_steps = 20000;
  int target_sync_period = 500;  // in updates
  int batch_size = 64;
  int updates_per_step = 1;
};

// Deep Q-learning (online net + periodically synced target net,
// epsilon-greedy exploration). Consumes transitions only through the replay
// buffer's sample().
class QAgent final : public QFunction {
 public:
  QAgent(int state_dim, int action_count, const AgentConfig& config, Rng& rng);

  const AgentConfig& config() const { return config_; }
  int action_count() const { return action_count_; }

  // Linear decay from epsilon_start to epsilon_end over epsilon_decay_steps
  // environment steps.
  double epsilon() const;
  void set_env_steps(std::int64_t steps) { env_steps_ = steps; }
  std::int64_t env_steps() const { return env_steps_; }

  int act(const State& s, Rng& rng) const { return act(s, epsilon(), rng); }
  int act(const State& s, double epsilon, Rng& rng) const;
  // argmax Q(s, .), lowest index on ties.
  int greedy(const State& s) const;

  // Samples a batch through the buffer and takes one gradient step on the
  // squared TD error. Returns the loss, or 0 without touching anything when
  // the buffer cannot be sampled.
  double update(const AugmentedReplayBuffer& buffer, Rng& rng);
  double update_on(const std::vector<const Transition*>& batch);

  Eigen::VectorXd q_values(const State& s) const override { return online_.forward(s); }
  Eigen::MatrixXd q_values_batch(const Eigen::MatrixXd& states) const override {
    return online_.forward_batch(states);
  }

  const Mlp& online() const { return online_; }
  Mlp& online() { return online_; }
  const Mlp& target() const { return target_; }
  void sync_target() { target_ = online_; }
  std::int64_t update_count() const { return updates_; }

 private:
  AgentConfig config_;
  int state_dim_;
  int action_count_;
  Mlp online_;
  Mlp target_;
  Adam optimizer_;
  std::int64_t env_steps_ = 0;
  std::int64_t updates_ = 0;
};

}  // namespace atradiff

#endif  // ATRADIFF_AGENT_HPP_
