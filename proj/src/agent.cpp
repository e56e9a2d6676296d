#include "atradiff/agent.hpp"

#include <algorithm>

namespace atradiff {

QAgent::QAgent(int state_dim, int action_count, const AgentConfig& config, Rng& rng)
    : config_(config), state_dim_(state_dim), action_count_(action_count) {
  if (action_count_ < 1) throw std::invalid_argument("agent needs at least one action");
  if (config_.batch_size < 1) throw std::invalid_argument("batch size must be positive");
  if (config_.target_sync_period < 1) throw std::invalid_argument("target sync period must be positive");
  std::vector<int> widths{state_dim_};
  widths.insert(widths.end(), config_.hidden.begin(), config_.hidden.end());
  widths.push_back(action_count_);
  online_ = Mlp(widths, Activation::kRelu, rng);
  target_ = online_;
  optimizer_ = Adam(online_, AdamConfig{.learning_rate = config_.learning_rate});
}

double QAgent::epsilon() const {
  if (config_.epsilon_decay_steps <= 0) return config_.epsilon_end;
  const double frac = std::min(1.0, static_cast<double>(env_steps_) / config_.epsilon_decay_steps);
  return config_.epsilon_start + frac * (config_.epsilon_end - config_.epsilon_start);
}

int QAgent::greedy(const State& s) const {
  const Eigen::VectorXd q = q_values(s);
  int best = 0;
  for (int a = 1; a < action_count_; ++a)
    if (q[a] > q[best]) best = a;
  return best;
}

int QAgent::act(const State& s, double epsilon, Rng& rng) const {
  if (epsilon > 0.0 && rng.bernoulli(epsilon)) return static_cast<int>(rng.index(static_cast<std::size_t>(action_count_)));
  return greedy(s);
}

double QAgent::update(const AugmentedReplayBuffer& buffer, Rng& rng) {
  if (!buffer.can_sample()) return 0.0;
  std::vector<const Transition*> batch;
  batch.reserve(static_cast<std::size_t>(config_.batch_size));
  for (int i = 0; i < config_.batch_size; ++i) batch.push_back(&buffer.sample(rng));
  return update_on(batch);
}

double QAgent::update_on(const std::vector<const Transition*>& batch) {
  if (batch.empty()) return 0.0;
  const auto n = static_cast<Eigen::Index>(batch.size());
  Eigen::MatrixXd s(state_dim_, n);
  Eigen::MatrixXd s_next(state_dim_, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    s.col(i) = batch[static_cast<std::size_t>(i)]->s;
    s_next.col(i) = batch[static_cast<std::size_t>(i)]->s_next;
  }
  const Eigen::MatrixXd q_next = target_.forward_batch(s_next);
  Mlp::Tape tape;
  const Eigen::MatrixXd q = online_.forward_batch(s, &tape);
  Eigen::MatrixXd d_out = Eigen::MatrixXd::Zero(action_count_, n);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Transition& z = *batch[static_cast<std::size_t>(i)];
    const double bootstrap = z.done ? 0.0 : config_.gamma * q_next.col(i).maxCoeff();
    const double err = q(z.a, i) - (z.r + bootstrap);
    loss += err * err;
    d_out(z.a, i) = 2.0 * err / static_cast<double>(n);
  }
  optimizer_.step(online_, online_.backward(tape, d_out));
  ++updates_;
  if (updates_ % config_.target_sync_period == 0) sync_target();
  return loss / static_cast<double>(n);
}

}  // namespace atradiff
