#include <filesystem>

#include "atradiff/env.hpp"
#include "doctest.h"

using namespace atradiff;

namespace {

PointGoal quiet_point_goal() {
  PointGoalConfig c;
  c.noise_std = 0.0;
  return PointGoal(c);
}

}  // namespace

TEST_CASE("point goal starts inside the box and outside the goal") {
  PointGoal env;
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    Rng rng(seed);
    const State s = env.reset(rng);
    REQUIRE(s.size() == 2);
    CHECK(s.minCoeff() >= 0.0);
    CHECK(s.maxCoeff() <= 1.0);
    CHECK_FALSE(env.in_goal(s));
  }
}

TEST_CASE("chain starts at index zero") {
  Chain env;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const State s = env.reset(rng);
    CHECK(env.index_of(s) == 0);
    CHECK(s.sum() == 1.0);
  }
}

TEST_CASE("reset is deterministic per seed") {
  PointGoal env;
  Rng a(42), b(42);
  CHECK(env.reset(a) == env.reset(b));
}

TEST_CASE("point goal step semantics") {
  PointGoal env = quiet_point_goal();
  Rng rng(1);

  SUBCASE("moving into the goal rewards and terminates") {
    const State s = Eigen::Vector2d(0.85, 0.9);
    const StepResult r = env.dynamics(s, 0, rng);
    CHECK(r.reward == 1.0);
    CHECK(r.terminal);
    CHECK(r.done);
  }
  SUBCASE("boundary clamp") {
    const StepResult r = env.dynamics(Eigen::Vector2d(0.0, 0.0), 1, rng);
    CHECK(r.next[0] == 0.0);
    CHECK(r.next[1] == 0.0);
    const StepResult r2 = env.dynamics(Eigen::Vector2d(0.0, 0.0), 3, rng);
    CHECK(r2.next.minCoeff() >= 0.0);
  }
  SUBCASE("zero noise +x step") {
    const StepResult r = env.dynamics(Eigen::Vector2d(0.5, 0.5), 0, rng);
    CHECK(r.next[0] == doctest::Approx(0.55).epsilon(1e-15));
    CHECK(r.next[1] == 0.5);
    CHECK(r.reward == 0.0);
    CHECK_FALSE(r.done);
  }
  SUBCASE("invalid action rejected") {
    CHECK_THROWS_AS(env.dynamics(Eigen::Vector2d(0.5, 0.5), 4, rng), InvalidAction);
    CHECK_THROWS_AS(env.dynamics(Eigen::Vector2d(0.5, 0.5), -1, rng), InvalidAction);
  }
}

TEST_CASE("horizon ends the episode without a terminal flag") {
  PointGoal env;
  Rng rng(3);
  env.reset(rng);
  StepResult r;
  int steps = 0;
  // Pushing into the corner never reaches the goal.
  do {
    r = env.step(1, rng);
    ++steps;
  } while (!r.done);
  CHECK(steps == env.spec().horizon);
  CHECK_FALSE(r.terminal);
}

TEST_CASE("chain moves and terminates at the last state") {
  Chain env;
  Rng rng(0);
  State s = env.one_hot(0);
  CHECK(env.index_of(env.dynamics(s, 0, rng).next) == 0);
  for (int i = 0; i < 18; ++i) s = env.dynamics(s, 1, rng).next;
  CHECK(env.index_of(s) == 18);
  const StepResult r = env.dynamics(s, 1, rng);
  CHECK(r.terminal);
  CHECK(r.reward == 1.0);
}

TEST_CASE("expert data on point goal always succeeds") {
  PointGoal env;
  Rng rng(11);
  const auto data = collect_offline(env, BehaviorPolicy{PolicyTier::kExpert}, 200, rng);
  REQUIRE(data.size() == 200);
  for (const auto& traj : data) {
    CHECK(traj.succeeded());
    CHECK(traj.total_reward() == 1.0);
    CHECK(traj.length() >= 1);
    CHECK(traj.length() <= env.spec().horizon);
    CHECK(traj.rewards.back() == 1.0);
  }
}

TEST_CASE("offline collection invariants for every tier") {
  for (auto tier : {PolicyTier::kRandom, PolicyTier::kNoisyExpert, PolicyTier::kExpert}) {
    for (const std::string name : {"point_goal", "chain"}) {
      auto env = make_environment(name);
      Rng rng(5);
      const auto data = collect_offline(*env, BehaviorPolicy{tier}, 30, rng);
      for (const auto& traj : data) {
        traj.validate();
        CHECK(traj.length() >= 1);
        CHECK(traj.length() <= env->spec().horizon);
        const double total = traj.total_reward();
        CHECK((total == 0.0 || total == 1.0));
        for (double r : traj.rewards) CHECK((r == 0.0 || r == 1.0));
        for (const auto& s : traj.states) CHECK(s.size() == env->spec().state_dim);
      }
    }
  }
}

TEST_CASE("recorded transitions chain exactly") {
  // With zero noise the stepped state is a pure function of (state, action),
  // so every recorded successor can be recomputed.
  PointGoal env = quiet_point_goal();
  Rng rng(8);
  const auto data = collect_offline(env, BehaviorPolicy{PolicyTier::kNoisyExpert}, 40, rng);
  Rng unused(0);
  for (const auto& traj : data) {
    for (int i = 0; i < traj.length(); ++i) {
      const auto u = static_cast<std::size_t>(i);
      const State next = env.dynamics(traj.states[u], traj.actions[u], unused).next;
      const State& recorded = i + 1 < traj.length() ? traj.states[u + 1] : traj.final_state;
      CHECK(next == recorded);
    }
  }
  // With noise, the transitions built from a trajectory still link up.
  PointGoal noisy;
  const auto noisy_data = collect_offline(noisy, BehaviorPolicy{PolicyTier::kRandom}, 10, rng);
  for (const auto& traj : noisy_data) {
    const auto zs = to_transitions(traj, 0);
    for (std::size_t i = 0; i + 1 < zs.size(); ++i) CHECK(zs[i].s_next == zs[i + 1].s);
  }
}

TEST_CASE("collect_offline rejects zero episodes and is reproducible") {
  PointGoal env;
  Rng rng(1);
  CHECK_THROWS_AS(collect_offline(env, BehaviorPolicy{PolicyTier::kRandom}, 0, rng), std::invalid_argument);
  Rng a(99), b(99);
  const auto da = collect_offline(env, BehaviorPolicy{PolicyTier::kNoisyExpert}, 20, a);
  const auto db = collect_offline(env, BehaviorPolicy{PolicyTier::kNoisyExpert}, 20, b);
  REQUIRE(da.size() == db.size());
  for (std::size_t i = 0; i < da.size(); ++i) CHECK(trajectory_to_json_line(da[i]) == trajectory_to_json_line(db[i]));
}

TEST_CASE("noisy expert flips at the configured rate") {
  PointGoal env;
  BehaviorPolicy policy{PolicyTier::kNoisyExpert, 0.3};
  Rng rng(4);
  const State s = Eigen::Vector2d(0.2, 0.6);
  const int expert = env.expert_action(s);
  int flips = 0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) flips += policy.act(env, s, rng) != expert;
  CHECK(static_cast<double>(flips) / n == doctest::Approx(0.3).epsilon(0.05));
}

TEST_CASE("dataset jsonl round trip with stable field order") {
  PointGoal env;
  Rng rng(2);
  const auto data = collect_offline(env, BehaviorPolicy{PolicyTier::kNoisyExpert}, 15, rng);
  const auto path = std::filesystem::temp_directory_path() / "atradiff_test_dataset.jsonl";
  write_dataset(path, data);
  const auto back = read_dataset(path);
  REQUIRE(back.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(back[i].states == data[i].states);
    CHECK(back[i].actions == data[i].actions);
    CHECK(back[i].rewards == data[i].rewards);
    CHECK(back[i].final_state == data[i].final_state);
    CHECK(back[i].task == data[i].task);
  }
  const std::string line = trajectory_to_json_line(data[0]);
  const auto p_states = line.find("\"states\"");
  const auto p_actions = line.find("\"actions\"");
  const auto p_rewards = line.find("\"rewards\"");
  const auto p_task = line.find("\"task\"");
  CHECK(p_states < p_actions);
  CHECK(p_actions < p_rewards);
  CHECK(p_rewards < p_task);
  std::filesystem::remove(path);
  CHECK_THROWS(trajectory_from_json_line("{\"states\": [[0.1]]}"));
}

TEST_CASE("policy tier parsing") {
  CHECK(parse_policy_tier("random") == PolicyTier::kRandom);
  CHECK(parse_policy_tier("noisy_expert") == PolicyTier::kNoisyExpert);
  CHECK(parse_policy_tier("expert") == PolicyTier::kExpert);
  CHECK_THROWS(parse_policy_tier("oracle"));
  CHECK_THROWS(make_environment("cartpole"));
}
