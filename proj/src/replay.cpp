#include "atradiff/replay.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace atradiff {
namespace {

std::size_t synthetic_capacity_for(const ReplayConfig& c) {
  if (c.synthetic_capacity > 0) return c.synthetic_capacity;
  const double cap = c.rho / (1.0 - c.rho) * static_cast<double>(c.real_capacity);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cap)));
}

const ReplayConfig& validated(const ReplayConfig& c) {
  if (!(c.rho >= 0.0 && c.rho < 1.0)) throw std::invalid_argument("rho must lie in [0, 1)");
  if (!(c.expected_length >= 1.0)) throw std::invalid_argument("expected length L must be >= 1");
  if (c.real_capacity == 0) throw std::invalid_argument("real buffer capacity must be positive");
  return c;
}

}  // namespace

AugmentedReplayBuffer::AugmentedReplayBuffer(const ReplayConfig& config)
    : config_(validated(config)), real_(config.real_capacity), synthetic_(synthetic_capacity_for(config)) {}

void AugmentedReplayBuffer::set_expected_length(double length) {
  if (!(length >= 1.0)) throw std::invalid_argument("expected length L must be >= 1");
  config_.expected_length = length;
}

double AugmentedReplayBuffer::generation_probability() const {
  if (config_.rho == 0.0) return 0.0;
  return std::min(1.0, config_.rho / ((1.0 - config_.rho) * config_.expected_length));
}

void AugmentedReplayBuffer::store(const Transition& z, const TrajectoryGenerator* generator, Rng& rng) {
  if (z.synthetic) throw std::invalid_argument("store() takes real transitions only");
  real_.push(z);
  ++counters_.stores;
  const double p = generation_probability();
  // No draw at p == 0 so a rho = 0 buffer consumes exactly the randomness of
  // a plain buffer.
  if (generator == nullptr || p == 0.0 || !rng.bernoulli(p)) return;
  ++counters_.generations;
  try {
    add_generated(generator->generate(z.s_next, z.task, rng));
  } catch (const std::exception&) {
    ++counters_.generation_failures;
  }
}

int stored_length(const GeneratedTrajectory& g, SyntheticDone rule) {
  const int l = g.trajectory.length();
  if (rule == SyntheticDone::kRewardTerminal)
    for (int i = 0; i + 1 < l; ++i)
      if (g.trajectory.rewards[static_cast<std::size_t>(i)] >= 0.5) return i + 2;
  return l;
}

void AugmentedReplayBuffer::add_generated(const GeneratedTrajectory& g) {
  const Trajectory& traj = g.trajectory;
  const int l = traj.length();
  counters_.generated_steps += static_cast<std::uint64_t>(l);
  for (int i = 0; i + 1 < l; ++i) {
    const auto u = static_cast<std::size_t>(i);
    Transition z;
    z.s = traj.states[u];
    z.a = traj.actions[u];
    z.s_next = traj.states[u + 1];
    z.r = traj.rewards[u];
    z.synthetic = true;
    z.task = traj.task;
    bool stop = false;
    switch (config_.synthetic_done) {
      case SyntheticDone::kPrunedEnd:
        z.done = g.pruned && i + 2 == l;
        break;
      case SyntheticDone::kRewardTerminal:
        z.done = z.r >= 0.5;
        stop = z.done;
        break;
    }
    synthetic_.push(std::move(z));
    ++counters_.synthetic_added;
    if (stop) break;
  }
}

const Transition& AugmentedReplayBuffer::sample(Rng& rng) const {
  if (real_.empty()) throw std::logic_error("cannot sample: the real buffer is empty");
  if (config_.rho > 0.0 && !synthetic_.empty() && rng.bernoulli(config_.rho))
    return synthetic_.at(rng.index(synthetic_.size()));
  return real_.at(rng.index(real_.size()));
}

BufferStats AugmentedReplayBuffer::stats() const {
  BufferStats s = counters_;
  s.real_size = real_.size();
  s.synthetic_size = synthetic_.size();
  return s;
}

void AugmentedReplayBuffer::dump(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  auto write = [&out](const Transition& z) {
    nlohmann::ordered_json j;
    j["s"] = std::vector<double>(z.s.data(), z.s.data() + z.s.size());
    j["a"] = z.a;
    j["s_next"] = std::vector<double>(z.s_next.data(), z.s_next.data() + z.s_next.size());
    j["r"] = z.r;
    j["done"] = z.done;
    j["synthetic"] = z.synthetic;
    out << j.dump() << '\n';
  };
  for (std::size_t i = 0; i < real_.size(); ++i) write(real_.at(i));
  for (std::size_t i = 0; i < synthetic_.size(); ++i) write(synthetic_.at(i));
}

}  // namespace atradiff
