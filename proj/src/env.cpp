#include "atradiff/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace atradiff {

using ordered_json = nlohmann::ordered_json;

Eigen::VectorXd one_hot(int index, int size) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(size);
  if (index >= 0 && index < size) v[index] = 1.0;
  return v;
}

double Trajectory::total_reward() const {
  double sum = 0.0;
  for (double r : rewards) sum += r;
  return sum;
}

bool Trajectory::succeeded() const {
  for (auto d : dones)
    if (d) return true;
  return false;
}

void Trajectory::validate() const {
  if (states.empty()) throw std::invalid_argument("trajectory is empty");
  if (actions.size() != states.size() || rewards.size() != states.size())
    throw std::invalid_argument("trajectory states/actions/rewards lengths differ");
  if (!dones.empty() && dones.size() != states.size())
    throw std::invalid_argument("trajectory done flags length differs");
  const auto dim = states.front().size();
  for (const auto& s : states)
    if (s.size() != dim) throw std::invalid_argument("trajectory state dimension varies");
  if (final_state.size() != 0 && final_state.size() != dim)
    throw std::invalid_argument("trajectory final state has wrong dimension");
}

// -- Environment ------------------------------------------------------------

void Environment::set_task(int task) {
  if (task < 0 || task >= spec().task_count) throw std::invalid_argument("task id out of range");
  task_ = task;
}

State Environment::reset(Rng& rng) {
  elapsed_ = 0;
  state_ = sample_start(rng);
  return state_;
}

StepResult Environment::step(int action, Rng& rng) {
  StepResult res = dynamics(state_, action, rng);
  ++elapsed_;
  if (elapsed_ >= spec().horizon) res.done = true;
  state_ = res.next;
  return res;
}

void Environment::check_action(int action) const {
  if (action < 0 || action >= spec().action_count)
    throw InvalidAction("action " + std::to_string(action) + " invalid for " + spec().name);
}

// -- PointGoal --------------------------------------------------------------

PointGoal::PointGoal(PointGoalConfig config) : config_(std::move(config)) {
  if (config_.goals.empty()) throw std::invalid_argument("PointGoal needs at least one goal");
  if (!(config_.gamma >= 0.0 && config_.gamma < 1.0)) throw std::invalid_argument("gamma must lie in [0,1)");
  if (config_.horizon < 1) throw std::invalid_argument("horizon must be >= 1");
  spec_.name = "point_goal";
  spec_.state_dim = 2;
  spec_.action_count = 4;
  spec_.horizon = config_.horizon;
  spec_.gamma = config_.gamma;
  spec_.task_count = static_cast<int>(config_.goals.size());
  spec_.binary_reward = true;
  spec_.goal_description = "disk of radius " + std::to_string(config_.goal_radius) + " around the task goal";
}

Eigen::Vector2d PointGoal::delta(int action, double step_size) {
  switch (action) {
    case 0: return {step_size, 0.0};
    case 1: return {-step_size, 0.0};
    case 2: return {0.0, step_size};
    case 3: return {0.0, -step_size};
  }
  throw InvalidAction("PointGoal action must be in [0, 4)");
}

bool PointGoal::in_goal(const State& s) const { return (s.head<2>() - goal()).norm() < config_.goal_radius; }

State PointGoal::sample_start(Rng& rng) const {
  State s(2);
  do {
    s[0] = rng.uniform();
    s[1] = rng.uniform();
  } while (in_goal(s));
  return s;
}

StepResult PointGoal::dynamics(const State& state, int action, Rng& rng) const {
  check_action(action);
  if (state.size() != 2) throw std::invalid_argument("PointGoal state must be 2-D");
  StepResult res;
  const Eigen::Vector2d d = delta(action, config_.step_size);
  res.next = State(2);
  for (int i = 0; i < 2; ++i) {
    const double noise = config_.noise_std > 0.0 ? config_.noise_std * rng.normal() : 0.0;
    res.next[i] = std::clamp(state[i] + d[i] + noise, 0.0, 1.0);
  }
  res.terminal = in_goal(res.next);
  res.reward = res.terminal ? 1.0 : 0.0;
  res.done = res.terminal;
  return res;
}

int PointGoal::expert_action(const State& state) const {
  const Eigen::Vector2d diff = goal() - state.head<2>();
  if (std::abs(diff[0]) >= std::abs(diff[1])) return diff[0] >= 0.0 ? 0 : 1;
  return diff[1] >= 0.0 ? 2 : 3;
}

std::unique_ptr<Environment> PointGoal::clone() const { return std::make_unique<PointGoal>(*this); }

// -- Chain ------------------------------------------------------------------

Chain::Chain(ChainConfig config) : config_(config) {
  if (config_.length < 2) throw std::invalid_argument("Chain needs at least 2 states");
  if (config_.horizon < 1) throw std::invalid_argument("horizon must be >= 1");
  if (!(config_.gamma >= 0.0 && config_.gamma < 1.0)) throw std::invalid_argument("gamma must lie in [0,1)");
  spec_.name = "chain";
  spec_.state_dim = config_.length;
  spec_.action_count = 2;
  spec_.horizon = config_.horizon;
  spec_.gamma = config_.gamma;
  spec_.task_count = 1;
  spec_.binary_reward = true;
  spec_.goal_description = "last state of the chain";
}

int Chain::index_of(const State& s) const {
  if (s.size() != config_.length) throw std::invalid_argument("Chain state has wrong dimension");
  Eigen::Index idx = 0;
  s.maxCoeff(&idx);
  return static_cast<int>(idx);
}

State Chain::one_hot(int index) const { return atradiff::one_hot(index, config_.length); }

State Chain::sample_start(Rng&) const { return one_hot(0); }

StepResult Chain::dynamics(const State& state, int action, Rng&) const {
  check_action(action);
  const int i = index_of(state);
  const int j = action == 1 ? std::min(i + 1, config_.length - 1) : std::max(i - 1, 0);
  StepResult res;
  res.next = one_hot(j);
  res.terminal = j == config_.length - 1;
  res.reward = res.terminal ? 1.0 : 0.0;
  res.done = res.terminal;
  return res;
}

int Chain::expert_action(const State&) const { return 1; }

std::unique_ptr<Environment> Chain::clone() const { return std::make_unique<Chain>(*this); }

std::unique_ptr<Environment> make_environment(const std::string& name) {
  if (name == "point_goal") return std::make_unique<PointGoal>();
  if (name == "chain") return std::make_unique<Chain>();
  throw std::invalid_argument("unknown environment '" + name + "'");
}

// -- Behavior policies and datasets ------------------------------------------

PolicyTier parse_policy_tier(const std::string& name) {
  if (name == "random") return PolicyTier::kRandom;
  if (name == "noisy_expert" || name == "noisy-expert" || name == "medium") return PolicyTier::kNoisyExpert;
  if (name == "expert") return PolicyTier::kExpert;
  throw std::invalid_argument("unknown policy tier '" + name + "'");
}

std::string to_string(PolicyTier tier) {
  switch (tier) {
    case PolicyTier::kRandom: return "random";
    case PolicyTier::kNoisyExpert: return "noisy_expert";
    case PolicyTier::kExpert: return "expert";
  }
  return "unknown";
}

int BehaviorPolicy::act(const Environment& env, const State& state, Rng& rng) const {
  const int n = env.spec().action_count;
  switch (tier) {
    case PolicyTier::kRandom: return static_cast<int>(rng.index(static_cast<std::size_t>(n)));
    case PolicyTier::kExpert: return env.expert_action(state);
    case PolicyTier::kNoisyExpert: {
      const int expert = env.expert_action(state);
      if (!rng.bernoulli(flip_prob)) return expert;
      // uniform over the other actions
      int a = static_cast<int>(rng.index(static_cast<std::size_t>(n - 1)));
      return a >= expert ? a + 1 : a;
    }
  }
  return 0;
}

std::vector<Trajectory> collect_offline(Environment& env, const BehaviorPolicy& policy, int n_episodes,
                                        Rng& rng) {
  if (n_episodes < 1) throw std::invalid_argument("collect_offline needs n_episodes >= 1");
  std::vector<Trajectory> out;
  out.reserve(static_cast<std::size_t>(n_episodes));
  for (int e = 0; e < n_episodes; ++e) {
    Trajectory traj;
    traj.task = env.task();
    State s = env.reset(rng);
    for (;;) {
      const int a = policy.act(env, s, rng);
      const StepResult res = env.step(a, rng);
      traj.states.push_back(s);
      traj.actions.push_back(a);
      traj.rewards.push_back(res.reward);
      traj.dones.push_back(res.terminal ? 1 : 0);
      s = res.next;
      if (res.done) break;
    }
    traj.final_state = s;
    out.push_back(std::move(traj));
  }
  return out;
}

std::vector<Transition> to_transitions(const Trajectory& traj, std::int64_t episode_id) {
  traj.validate();
  if (traj.final_state.size() == 0) throw std::invalid_argument("trajectory has no final state");
  std::vector<Transition> out;
  const int t = traj.length();
  for (int i = 0; i < t; ++i) {
    Transition z;
    z.s = traj.states[static_cast<std::size_t>(i)];
    z.a = traj.actions[static_cast<std::size_t>(i)];
    z.s_next = i + 1 < t ? traj.states[static_cast<std::size_t>(i + 1)] : traj.final_state;
    z.r = traj.rewards[static_cast<std::size_t>(i)];
    z.done = !traj.dones.empty() && traj.dones[static_cast<std::size_t>(i)] != 0;
    z.episode = episode_id;
    z.step = i;
    z.task = traj.task;
    out.push_back(std::move(z));
  }
  return out;
}

namespace {

ordered_json vec_json(const Eigen::VectorXd& v) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd json_vec(const ordered_json& a) {
  if (!a.is_array()) throw std::invalid_argument("expected an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

}  // namespace

std::string trajectory_to_json_line(const Trajectory& traj) {
  ordered_json j;
  ordered_json states = ordered_json::array();
  for (const auto& s : traj.states) states.push_back(vec_json(s));
  j["states"] = std::move(states);
  j["actions"] = traj.actions;
  j["rewards"] = traj.rewards;
  j["task"] = traj.task;
  ordered_json dones = ordered_json::array();
  for (auto d : traj.dones) dones.push_back(d != 0);
  j["dones"] = std::move(dones);
  j["final_state"] = vec_json(traj.final_state);
  return j.dump();
}

Trajectory trajectory_from_json_line(const std::string& line) {
  const ordered_json j = ordered_json::parse(line);
  Trajectory traj;
  for (const auto& s : j.at("states")) traj.states.push_back(json_vec(s));
  traj.actions = j.at("actions").get<std::vector<int>>();
  traj.rewards = j.at("rewards").get<std::vector<double>>();
  traj.task = j.value("task", 0);
  if (j.contains("dones"))
    for (const auto& d : j.at("dones")) traj.dones.push_back(d.get<bool>() ? 1 : 0);
  if (j.contains("final_state")) traj.final_state = json_vec(j.at("final_state"));
  traj.validate();
  return traj;
}

void write_dataset(const std::filesystem::path& path, const std::vector<Trajectory>& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& traj : data) out << trajectory_to_json_line(traj) << '\n';
}

std::vector<Trajectory> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  std::vector<Trajectory> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(trajectory_from_json_line(line));
    } catch (const std::exception& e) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace atradiff
