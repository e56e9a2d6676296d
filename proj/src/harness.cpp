#include "atradiff/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "atradiff/log.hpp"
#include "atradiff/stats.hpp"

namespace atradiff {

using nlohmann::json;
using nlohmann::ordered_json;

RunMode parse_run_mode(const std::string& name) {
  if (name == "online") return RunMode::kOnline;
  if (name == "offline_to_online") return RunMode::kOfflineToOnline;
  if (name == "offline_aug") return RunMode::kOfflineAug;
  throw ConfigError("unknown mode '" + name + "' (expected online, offline_to_online or offline_aug)");
}

std::string to_string(RunMode mode) {
  switch (mode) {
    case RunMode::kOnline:
      return "online";
    case RunMode::kOfflineToOnline:
      return "offline_to_online";
    case RunMode::kOfflineAug:
      return "offline_aug";
  }
  return "online";
}

namespace {

std::string to_string(SyntheticDone d) { return d == SyntheticDone::kPrunedEnd ? "pruned_end" : "reward_terminal"; }

SyntheticDone parse_synthetic_done(const std::string& s) {
  if (s == "pruned_end") return SyntheticDone::kPrunedEnd;
  if (s == "reward_terminal") return SyntheticDone::kRewardTerminal;
  throw ConfigError("unknown synthetic_done '" + s + "' (expected pruned_end or reward_terminal)");
}

// Typed access to one JSON object that remembers which keys were read, so
// leftovers can be reported as unknown.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(label() + " must be a JSON object");
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void integer(const std::string& key, auto& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) fail(key, "an integer");
      if (v->is_number_unsigned() ? v->get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX) : false)
        fail(key, "a smaller integer");
      const auto x = v->get<std::int64_t>();
      if (x < 0 && std::is_unsigned_v<std::remove_reference_t<decltype(out)>>) fail(key, "a non-negative integer");
      out = static_cast<std::remove_reference_t<decltype(out)>>(x);
    }
  }
  void number(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) fail(key, "a number");
      out = v->get<double>();
    }
  }
  void boolean(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) fail(key, "a boolean");
      out = v->get<bool>();
    }
  }
  void string(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(key, "a string");
      out = v->get<std::string>();
    }
  }
  void int_list(const std::string& key, std::vector<int>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail(key, "an array of integers");
      out.clear();
      for (const auto& x : *v) {
        if (!x.is_number_integer()) fail(key, "an array of integers");
        out.push_back(x.get<int>());
      }
    }
  }
  void number_list(const std::string& key, std::vector<double>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail(key, "an array of numbers");
      out.clear();
      for (const auto& x : *v) {
        if (!x.is_number()) fail(key, "an array of numbers");
        out.push_back(x.get<double>());
      }
    }
  }
  std::optional<Fields> object(const std::string& key) {
    if (const json* v = find(key)) return Fields(*v, label() + "." + key);
    return std::nullopt;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + label() + "." + key + "'");
  }

 private:
  std::string label() const { return where_; }
  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError("config key '" + label() + "." + key + "' must be " + what);
  }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

std::string fnv_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

}  // namespace

// -- Config -------------------------------------------------------------------

void RunConfig::validate() const {
  if (seeds.empty()) throw ConfigError("seed list must be nonempty");
  if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("rho must lie in [0, 1)");
  if (expected_length && !(*expected_length >= 1.0)) throw ConfigError("expected_length must be >= 1");
  if (length_probe < 1) throw ConfigError("length_probe must be >= 1");
  if (env != "point_goal" && env != "chain") throw ConfigError("unknown env '" + env + "'");
  if (online_goal && env != "point_goal") throw ConfigError("online_goal applies to point_goal only");
  if (offline_episodes < 1 && dataset.empty()) throw ConfigError("offline.episodes must be >= 1");
  if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (learning_starts < 0) throw ConfigError("agent.learning_starts must be >= 0");
  if (agent.updates_per_step < 1) throw ConfigError("agent.updates_per_step must be >= 1");
  if (agent.batch_size < 1) throw ConfigError("agent.batch_size must be >= 1");
  if (!(agent.gamma >= 0.0 && agent.gamma < 1.0)) throw ConfigError("agent.gamma must lie in [0, 1)");
  if (real_capacity == 0) throw ConfigError("replay.real_capacity must be positive");
  if (bank.presets.empty()) throw ConfigError("bank.presets must be nonempty");
  for (std::size_t i = 0; i < bank.presets.size(); ++i)
    if (bank.presets[i] < 1 || (i > 0 && bank.presets[i] <= bank.presets[i - 1]))
      throw ConfigError("bank.presets must be positive and strictly increasing");
  if (!(bank.p_orig >= 0.0 && bank.p_orig <= 1.0)) throw ConfigError("bank.p_orig must lie in [0, 1]");
  if (bank.diffusion.steps < 1) throw ConfigError("bank.diffusion_steps must be >= 1");
  if (adaptation) {
    if (!diffuser) throw ConfigError("adaptation needs the diffuser");
    if (mode == RunMode::kOfflineAug) throw ConfigError("adaptation needs online interaction (mode offline_aug has none)");
    try {
      adapt.validate(pool);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("adaptation: ") + e.what());
    }
  }
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  Fields f(j, "config");
  f.string("name", c.name);
  f.string("env", c.env);
  std::vector<double> goal;
  f.number_list("online_goal", goal);
  if (f.find("online_goal")) {
    if (goal.size() != 2) throw ConfigError("config key 'config.online_goal' must hold two numbers");
    c.online_goal = Eigen::Vector2d(goal[0], goal[1]);
  }
  if (const json* seeds = f.find("seeds")) {
    if (!seeds->is_array()) throw ConfigError("config key 'config.seeds' must be an array of integers");
    c.seeds.clear();
    for (const auto& s : *seeds) {
      if (!s.is_number_integer() || s.get<std::int64_t>() < 0)
        throw ConfigError("config key 'config.seeds' must hold non-negative integers");
      c.seeds.push_back(s.get<std::uint64_t>());
    }
  }
  std::string mode = to_string(c.mode);
  f.string("mode", mode);
  c.mode = parse_run_mode(mode);

  if (auto off = f.object("offline")) {
    off->string("dataset", c.dataset);
    std::string policy = to_string(c.offline_policy);
    off->string("policy", policy);
    try {
      c.offline_policy = parse_policy_tier(policy);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    off->integer("episodes", c.offline_episodes);
    off->boolean("preload", c.preload_offline);
    off->finish();
  }

  f.boolean("diffuser", c.diffuser);
  f.number("rho", c.rho);
  if (const json* L = f.find("expected_length")) {
    if (L->is_string()) {
      if (L->get<std::string>() != "auto") throw ConfigError("expected_length must be a number or \"auto\"");
    } else if (L->is_number()) {
      c.expected_length = L->get<double>();
    } else {
      throw ConfigError("expected_length must be a number or \"auto\"");
    }
  }
  f.integer("length_probe", c.length_probe);
  std::string done = to_string(c.synthetic_done);
  f.string("synthetic_done", done);
  c.synthetic_done = parse_synthetic_done(done);

  if (auto b = f.object("bank")) {
    b->int_list("presets", c.bank.presets);
    b->integer("diffusion_steps", c.bank.diffusion.steps);
    b->number("beta_start", c.bank.diffusion.beta_start);
    b->number("beta_end", c.bank.diffusion.beta_end);
    b->int_list("hidden", c.bank.diffusion.hidden);
    b->number("learning_rate", c.bank.diffusion.learning_rate);
    b->integer("batch_size", c.bank.diffusion.batch_size);
    b->integer("train_steps", c.bank.diffusion.train_steps);
    b->int_list("estimator_hidden", c.bank.estimator.hidden);
    b->number("estimator_learning_rate", c.bank.estimator.learning_rate);
    b->integer("estimator_batch_size", c.bank.estimator.batch_size);
    b->integer("estimator_steps", c.bank.estimator.train_steps);
    b->number("p_orig", c.bank.p_orig);
    b->number("prune_epsilon", c.bank.prune_epsilon);
    b->boolean("binary_rewards", c.bank.binary_rewards);
    b->integer("threads", c.bank.threads);
    b->string("cache", c.bank_cache);
    b->finish();
  }

  if (auto a = f.object("adaptation")) {
    a->boolean("enabled", c.adaptation);
    std::string kind = to_string(c.pool.kind);
    a->string("indicator", kind);
    try {
      c.pool.kind = parse_indicator(kind);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    a->integer("period", c.adapt.period);
    a->integer("pool_capacity", c.pool.capacity);
    a->integer("selection", c.adapt.selection);
    a->number("drop_fraction", c.pool.drop_fraction);
    a->integer("max_uses", c.pool.max_uses);
    a->integer("diffusion_steps", c.adapt.diffusion_steps);
    a->integer("estimator_steps", c.adapt.estimator_steps);
    a->integer("batch_size", c.adapt.batch_size);
    a->number("learning_rate", c.adapt.learning_rate);
    a->integer("eval_columns", c.adapt.eval_columns);
    a->finish();
  }

  if (auto a = f.object("agent")) {
    a->int_list("hidden", c.agent.hidden);
    a->number("learning_rate", c.agent.learning_rate);
    a->number("gamma", c.agent.gamma);
    a->number("epsilon_start", c.agent.epsilon_start);
    a->number("epsilon_end", c.agent.epsilon_end);
    a->integer("epsilon_decay_steps", c.agent.epsilon_decay_steps);
    a->integer("target_sync_period", c.agent.target_sync_period);
    a->integer("batch_size", c.agent.batch_size);
    a->integer("updates_per_step", c.agent.updates_per_step);
    a->integer("learning_starts", c.learning_starts);
    a->finish();
  }

  if (auto r = f.object("replay")) {
    r->integer("real_capacity", c.real_capacity);
    r->integer("synthetic_capacity", c.synthetic_capacity);
    r->finish();
  }

  f.integer("total_steps", c.total_steps);
  f.integer("eval_every", c.eval_every);
  f.integer("eval_episodes", c.eval_episodes);
  f.integer("jobs", c.jobs);
  f.string("output_dir", c.output_dir);
  f.finish();

  c.pool.gamma = c.agent.gamma;
  c.validate();
  return c;
}

ordered_json RunConfig::to_json() const {
  ordered_json j;
  j["name"] = name;
  j["env"] = env;
  if (online_goal) j["online_goal"] = {(*online_goal)[0], (*online_goal)[1]};
  j["seeds"] = seeds;
  j["mode"] = to_string(mode);
  j["offline"] = {{"dataset", dataset},
                  {"policy", to_string(offline_policy)},
                  {"episodes", offline_episodes},
                  {"preload", preload_offline}};
  j["diffuser"] = diffuser;
  j["rho"] = rho;
  if (expected_length)
    j["expected_length"] = *expected_length;
  else
    j["expected_length"] = "auto";
  j["length_probe"] = length_probe;
  j["synthetic_done"] = to_string(synthetic_done);
  j["bank"] = {{"presets", bank.presets},
               {"diffusion_steps", bank.diffusion.steps},
               {"beta_start", bank.diffusion.beta_start},
               {"beta_end", bank.diffusion.beta_end},
               {"hidden", bank.diffusion.hidden},
               {"learning_rate", bank.diffusion.learning_rate},
               {"batch_size", bank.diffusion.batch_size},
               {"train_steps", bank.diffusion.train_steps},
               {"estimator_hidden", bank.estimator.hidden},
               {"estimator_learning_rate", bank.estimator.learning_rate},
               {"estimator_batch_size", bank.estimator.batch_size},
               {"estimator_steps", bank.estimator.train_steps},
               {"p_orig", bank.p_orig},
               {"prune_epsilon", bank.prune_epsilon},
               {"binary_rewards", bank.binary_rewards},
               {"threads", bank.threads},
               {"cache", bank_cache}};
  j["adaptation"] = {{"enabled", adaptation},
                     {"indicator", to_string(pool.kind)},
                     {"period", adapt.period},
                     {"pool_capacity", pool.capacity},
                     {"selection", adapt.selection},
                     {"drop_fraction", pool.drop_fraction},
                     {"max_uses", pool.max_uses},
                     {"diffusion_steps", adapt.diffusion_steps},
                     {"estimator_steps", adapt.estimator_steps},
                     {"batch_size", adapt.batch_size},
                     {"learning_rate", adapt.learning_rate},
                     {"eval_columns", adapt.eval_columns}};
  j["agent"] = {{"hidden", agent.hidden},
                {"learning_rate", agent.learning_rate},
                {"gamma", agent.gamma},
                {"epsilon_start", agent.epsilon_start},
                {"epsilon_end", agent.epsilon_end},
                {"epsilon_decay_steps", agent.epsilon_decay_steps},
                {"target_sync_period", agent.target_sync_period},
                {"batch_size", agent.batch_size},
                {"updates_per_step", agent.updates_per_step},
                {"learning_starts", learning_starts}};
  j["replay"] = {{"real_capacity", real_capacity}, {"synthetic_capacity", synthetic_capacity}};
  j["total_steps"] = total_steps;
  j["eval_every"] = eval_every;
  j["eval_episodes"] = eval_episodes;
  j["jobs"] = jobs;
  j["output_dir"] = output_dir;
  return j;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return RunConfig::from_json(j);
}

// -- Pipeline pieces ----------------------------------------------------------

double measure_expected_length(const TrajectoryGenerator& generator, Environment& env, int n, Rng& rng,
                               SyntheticDone rule) {
  if (n < 1) throw std::invalid_argument("measure_expected_length needs n >= 1");
  BehaviorPolicy random{PolicyTier::kRandom};
  State s = env.reset(rng);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    total += stored_length(generator.generate(s, env.task(), rng), rule);
    const StepResult r = env.step(random.act(env, s, rng), rng);
    s = r.done ? env.reset(rng) : r.next;
  }
  return std::max(1.0, std::floor(total / n + 0.5));
}

GenerationReport evaluate_generation(const DiffuserBank& bank, Environment& env, int n, Rng& rng,
                                     std::vector<GeneratedTrajectory>* dump) {
  if (n < 1) throw std::invalid_argument("evaluate_generation needs n >= 1");
  GenerationReport rep;
  rep.samples = n;
  rep.preset_counts.assign(bank.presets().size(), 0);
  rep.length_histogram.assign(static_cast<std::size_t>(bank.presets().back()) + 1, 0);
  BehaviorPolicy random{PolicyTier::kRandom};
  State s = env.reset(rng);
  double length = 0.0, pruned = 0.0, original = 0.0, exact = 0.0, dyn = 0.0, rew = 0.0, gen_pos = 0.0, true_pos = 0.0;
  std::int64_t steps = 0;
  for (int i = 0; i < n; ++i) {
    const GeneratedTrajectory g = bank.generate(s, env.task(), rng);
    const Trajectory& t = g.trajectory;
    length += t.length();
    ++rep.length_histogram[static_cast<std::size_t>(std::min<int>(t.length(), static_cast<int>(rep.length_histogram.size()) - 1))];
    for (std::size_t p = 0; p < bank.presets().size(); ++p)
      if (bank.presets()[p] == g.window_length) ++rep.preset_counts[p];
    pruned += g.pruned;
    original += g.from_original;
    exact += t.states.front() == s;
    for (int j = 0; j + 1 < t.length(); ++j) {
      const StepResult truth = env.dynamics(t.states[static_cast<std::size_t>(j)], t.actions[static_cast<std::size_t>(j)], rng);
      dyn += (truth.next - t.states[static_cast<std::size_t>(j) + 1]).norm();
      rew += truth.reward == t.rewards[static_cast<std::size_t>(j)];
      gen_pos += t.rewards[static_cast<std::size_t>(j)] > 0.5;
      true_pos += truth.reward > 0.5;
      ++steps;
    }
    if (dump) dump->push_back(g);
    const StepResult r = env.step(random.act(env, s, rng), rng);
    s = r.done ? env.reset(rng) : r.next;
  }
  rep.mean_length = length / n;
  rep.pruned_fraction = pruned / n;
  rep.from_original_fraction = original / n;
  rep.condition_exact = exact / n;
  if (steps > 0) {
    rep.mean_dynamics_error = dyn / static_cast<double>(steps);
    rep.reward_agreement = rew / static_cast<double>(steps);
    rep.generated_reward_rate = gen_pos / static_cast<double>(steps);
    rep.true_reward_rate = true_pos / static_cast<double>(steps);
  }
  return rep;
}

ordered_json GenerationReport::to_json() const {
  ordered_json j;
  j["samples"] = samples;
  j["mean_length"] = mean_length;
  j["length_histogram"] = length_histogram;
  j["preset_counts"] = preset_counts;
  j["pruned_fraction"] = pruned_fraction;
  j["from_original_fraction"] = from_original_fraction;
  j["condition_exact"] = condition_exact;
  j["mean_dynamics_error"] = mean_dynamics_error;
  j["reward_agreement"] = reward_agreement;
  j["generated_reward_rate"] = generated_reward_rate;
  j["true_reward_rate"] = true_reward_rate;
  return j;
}

std::unique_ptr<Environment> make_offline_env(const RunConfig& config) { return make_environment(config.env); }

std::unique_ptr<Environment> make_online_env(const RunConfig& config) {
  if (config.online_goal) {
    PointGoalConfig pc;
    pc.goals = {*config.online_goal};
    return std::make_unique<PointGoal>(pc);
  }
  return make_environment(config.env);
}

std::vector<Trajectory> offline_dataset(const RunConfig& config, std::uint64_t seed) {
  if (!config.dataset.empty()) return read_dataset(config.dataset);
  auto env = make_offline_env(config);
  Rng rng = Rng(seed).child(1);
  return collect_offline(*env, BehaviorPolicy{config.offline_policy}, config.offline_episodes, rng);
}

DiffuserBank pretrained_bank(const RunConfig& config, std::uint64_t seed, const std::vector<Trajectory>& data) {
  std::filesystem::path cached;
  if (!config.bank_cache.empty()) {
    ordered_json key = config.to_json()["bank"];
    key.erase("threads");
    key.erase("cache");
    key["env"] = config.env;
    key["offline"] = config.to_json()["offline"];
    key["offline"].erase("preload");
    key["seed"] = seed;
    key["format"] = 1;
    cached = std::filesystem::path(config.bank_cache) / ("bank_" + fnv_hex(key.dump()) + ".atrd");
    if (std::filesystem::exists(cached)) return DiffuserBank::deserialize(read_file(cached));
  }
  auto env = make_offline_env(config);
  Rng rng = Rng(seed).child(2);
  const Bytes blob = train_bank(data, env->spec(), config.bank, rng).serialize();
  if (!cached.empty()) {
    std::filesystem::create_directories(cached.parent_path());
    const auto tmp = cached.string() + ".tmp" + std::to_string(seed);
    write_file(tmp, blob);
    std::filesystem::rename(tmp, cached);
  }
  // Optimizer moments are not part of the blob; returning the loaded form keeps a
  // fresh run identical to one served from the cache.
  return DiffuserBank::deserialize(blob);
}

namespace {

struct Evaluation {
  double episode_return = 0.0;
  double success = 0.0;
};

Evaluation evaluate(const QAgent& agent, const Environment& proto, int episodes, Rng rng) {
  Evaluation out;
  auto env = proto.clone();
  const double gamma = env->spec().gamma;
  for (int e = 0; e < episodes; ++e) {
    State s = env->reset(rng);
    double discount = 1.0, ret = 0.0;
    bool reached = false;
    for (;;) {
      const StepResult r = env->step(agent.greedy(s), rng);
      ret += discount * r.reward;
      discount *= gamma;
      reached = reached || r.terminal;
      if (r.done) break;
      s = r.next;
    }
    out.episode_return += ret;
    out.success += reached ? 1.0 : 0.0;
  }
  out.episode_return /= episodes;
  out.success /= episodes;
  return out;
}

}  // namespace

SeedResult run_seed(const RunConfig& config, std::uint64_t seed, const std::filesystem::path* out_dir) {
  config.validate();
  SeedResult result;
  result.seed = seed;
  const Rng root(seed);

  auto online_env = make_online_env(config);
  const EnvSpec& spec = online_env->spec();
  const bool needs_data = config.diffuser || config.preload_offline || config.mode == RunMode::kOfflineAug;
  std::vector<Trajectory> data;
  if (needs_data) data = offline_dataset(config, seed);

  std::optional<DiffuserBank> bank;
  if (config.diffuser) bank = pretrained_bank(config, seed, data);
  const TrajectoryGenerator* generator = bank ? &*bank : nullptr;

  double L = config.expected_length.value_or(1.0);
  if (bank && !config.expected_length) {
    auto probe_env = online_env->clone();
    Rng probe_rng = root.child(3);
    L = measure_expected_length(*bank, *probe_env, config.length_probe, probe_rng, config.synthetic_done);
  }
  result.expected_length = L;

  AugmentedReplayBuffer buffer(ReplayConfig{.rho = config.rho,
                                            .expected_length = L,
                                            .real_capacity = config.real_capacity,
                                            .synthetic_capacity = config.synthetic_capacity,
                                            .synthetic_done = config.synthetic_done});
  Rng init_rng = root.child(4);
  QAgent agent(spec.state_dim, spec.action_count, config.agent, init_rng);
  Rng env_rng = root.child(5);
  Rng act_rng = root.child(6);
  Rng store_rng = root.child(7);
  Rng sample_rng = root.child(8);
  const Rng eval_root = root.child(9);
  const Rng adapt_root = root.child(10);

  if (config.preload_offline || config.mode == RunMode::kOfflineAug) {
    for (std::size_t e = 0; e < data.size(); ++e)
      for (const auto& z : to_transitions(data[e], -1 - static_cast<std::int64_t>(e)))
        buffer.store(z, generator, store_rng);
  }

  double loss_sum = 0.0;
  std::int64_t loss_count = 0;
  auto record = [&](std::int64_t step) {
    const Evaluation ev = evaluate(agent, *online_env, config.eval_episodes, eval_root.child(static_cast<std::uint64_t>(step)));
    const BufferStats st = buffer.stats();
    EvalPoint p;
    p.step = step;
    p.episode_return = ev.episode_return;
    p.success = ev.success;
    p.ds_size = st.synthetic_size;
    p.do_size = st.real_size;
    p.gen_count = st.generations;
    p.gen_failures = st.generation_failures;
    p.mean_gen_length = st.mean_generated_length();
    p.adaptations = static_cast<int>(result.adaptations.size());
    p.td_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    loss_sum = 0.0;
    loss_count = 0;
    result.points.push_back(p);
  };
  auto learn = [&] {
    for (int u = 0; u < config.agent.updates_per_step; ++u) {
      loss_sum += agent.update(buffer, sample_rng);
      ++loss_count;
    }
  };

  record(0);
  if (config.mode == RunMode::kOfflineAug) {
    for (std::int64_t step = 1; step <= config.total_steps; ++step) {
      learn();
      if (step % config.eval_every == 0) record(step);
    }
  } else {
    std::optional<ImportancePool> pool;
    EpisodeLog episodes;
    if (config.adaptation) pool.emplace(config.pool);
    State s = online_env->reset(env_rng);
    Trajectory current;
    current.task = online_env->task();
    int episode = 0;
    for (std::int64_t step = 1; step <= config.total_steps; ++step) {
      agent.set_env_steps(step - 1);
      const int a = agent.act(s, act_rng);
      const StepResult r = online_env->step(a, env_rng);
      Transition z;
      z.s = s;
      z.a = a;
      z.s_next = r.next;
      z.r = r.reward;
      z.done = r.terminal;
      z.episode = episode;
      z.step = current.length();
      z.task = online_env->task();
      current.states.push_back(s);
      current.actions.push_back(a);
      current.rewards.push_back(r.reward);
      current.dones.push_back(r.terminal ? 1 : 0);
      buffer.store(z, generator, store_rng);
      if (step > config.learning_starts) learn();
      s = r.next;
      if (r.done) {
        current.final_state = r.next;
        if (pool) {
          pool->add_episode(current, episode, &agent);
          episodes.add(episode, std::move(current));
        }
        current = Trajectory{};
        current.task = online_env->task();
        ++episode;
        s = online_env->reset(env_rng);
      }
      if (pool && step % config.adapt.period == 0) {
        Rng adapt_rng = adapt_root.child(static_cast<std::uint64_t>(step));
        AdaptReport report = adapt_step(*bank, *pool, episodes, config.adapt, &agent, adapt_rng);
        report.step = step;
        result.adaptations.push_back(std::move(report));
      }
      if (step % config.eval_every == 0) record(step);
    }
  }
  if (result.points.back().step != config.total_steps) record(config.total_steps);
  result.ok = true;

  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    write_seed_csv(*out_dir / ("seed_" + std::to_string(seed) + ".csv"), result);
    if (config.adaptation) {
      std::ofstream events(*out_dir / ("seed_" + std::to_string(seed) + "_adapt.jsonl"), std::ios::trunc);
      for (const auto& e : result.adaptations) write_adapt_event(events, e);
    }
  }
  return result;
}

// -- Aggregation and files ----------------------------------------------------

std::vector<AggregatePoint> aggregate(const std::vector<SeedResult>& seeds) {
  std::vector<const SeedResult*> ok;
  for (const auto& s : seeds)
    if (s.ok) ok.push_back(&s);
  std::vector<AggregatePoint> out;
  if (ok.empty()) return out;
  const std::size_t n = ok.front()->points.size();
  for (const auto* s : ok)
    if (s->points.size() != n) throw std::runtime_error("seeds disagree on the evaluation schedule");
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> ret, suc, ds, dor, gen;
    const std::int64_t step = ok.front()->points[i].step;
    for (const auto* s : ok) {
      const EvalPoint& p = s->points[i];
      if (p.step != step) throw std::runtime_error("seeds disagree on the evaluation schedule");
      ret.push_back(p.episode_return);
      suc.push_back(p.success);
      ds.push_back(static_cast<double>(p.ds_size));
      dor.push_back(static_cast<double>(p.do_size));
      gen.push_back(static_cast<double>(p.gen_count));
    }
    AggregatePoint a;
    a.step = step;
    a.median_return = percentile(ret, 50);
    a.p25_return = percentile(ret, 25);
    a.p75_return = percentile(ret, 75);
    a.median_success = percentile(suc, 50);
    a.p25_success = percentile(suc, 25);
    a.p75_success = percentile(suc, 75);
    a.ds_size = median(ds);
    a.do_size = median(dor);
    a.gen_count = median(gen);
    out.push_back(a);
  }
  return out;
}

void write_seed_csv(const std::filesystem::path& path, const SeedResult& r) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "step,return,success,ds_size,do_size,gen_count,gen_failures,mean_gen_length,adaptations,td_loss\n";
  for (const auto& p : r.points)
    out << p.step << ',' << fmt(p.episode_return) << ',' << fmt(p.success) << ',' << p.ds_size << ',' << p.do_size
        << ',' << p.gen_count << ',' << p.gen_failures << ',' << fmt(p.mean_gen_length) << ',' << p.adaptations << ','
        << fmt(p.td_loss) << '\n';
}

void write_aggregate_csv(const std::filesystem::path& path, const std::vector<AggregatePoint>& points) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const auto& cols = aggregate_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& p : points)
    out << p.step << ',' << fmt(p.median_return) << ',' << fmt(p.p25_return) << ',' << fmt(p.p75_return) << ','
        << fmt(p.median_success) << ',' << fmt(p.p25_success) << ',' << fmt(p.p75_success) << ',' << fmt(p.ds_size)
        << ',' << fmt(p.do_size) << ',' << fmt(p.gen_count) << '\n';
}

std::vector<AggregatePoint> read_aggregate_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty CSV");
  std::string expected;
  for (std::size_t i = 0; i < aggregate_columns().size(); ++i) expected += (i ? "," : "") + aggregate_columns()[i];
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != expected) throw std::runtime_error(path.string() + ": unexpected header '" + line + "'");
  std::vector<AggregatePoint> out;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      std::size_t used = 0;
      double x = 0.0;
      try {
        x = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != cell.size() || !std::isfinite(x))
        throw std::runtime_error(path.string() + ":" + std::to_string(row) + ": bad number '" + cell + "'");
      v.push_back(x);
    }
    if (v.size() != aggregate_columns().size())
      throw std::runtime_error(path.string() + ":" + std::to_string(row) + ": expected " +
                               std::to_string(aggregate_columns().size()) + " fields");
    AggregatePoint p;
    p.step = static_cast<std::int64_t>(v[0]);
    if (static_cast<double>(p.step) != v[0])
      throw std::runtime_error(path.string() + ":" + std::to_string(row) + ": step must be an integer");
    p.median_return = v[1];
    p.p25_return = v[2];
    p.p75_return = v[3];
    p.median_success = v[4];
    p.p25_success = v[5];
    p.p75_success = v[6];
    p.ds_size = v[7];
    p.do_size = v[8];
    p.gen_count = v[9];
    if (!out.empty() && p.step <= out.back().step)
      throw std::runtime_error(path.string() + ":" + std::to_string(row) + ": steps must increase");
    out.push_back(p);
  }
  if (out.empty()) throw std::runtime_error(path.string() + ": no data rows");
  return out;
}

namespace {

double normalized_auc(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() < 2) return y.empty() ? 0.0 : y.front();
  const double span = x.back() - x.front();
  return span > 0 ? trapezoid_auc(x, y) / span : y.front();
}

}  // namespace

double success_auc(const std::vector<EvalPoint>& points) {
  std::vector<double> x, y;
  for (const auto& p : points) {
    x.push_back(static_cast<double>(p.step));
    y.push_back(p.success);
  }
  return normalized_auc(x, y);
}

double median_success_auc(const std::vector<AggregatePoint>& points) {
  std::vector<double> x, y;
  for (const auto& p : points) {
    x.push_back(static_cast<double>(p.step));
    y.push_back(p.median_success);
  }
  return normalized_auc(x, y);
}

std::optional<std::int64_t> steps_to_success(const std::vector<EvalPoint>& points, double threshold) {
  for (const auto& p : points)
    if (p.success >= threshold) return p.step;
  return std::nullopt;
}

ExperimentResult run_experiment(const RunConfig& config) {
  config.validate();
  ExperimentResult result;
  result.config = config;
  const std::filesystem::path out_dir = config.output_dir;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream(out_dir / "config.json", std::ios::trunc) << config.to_json().dump(2) << '\n';
  }
  result.seeds.resize(config.seeds.size());
  auto one = [&](std::size_t i) {
    const std::uint64_t seed = config.seeds[i];
    try {
      result.seeds[i] = run_seed(config, seed, out_dir.empty() ? nullptr : &out_dir);
    } catch (const std::exception& e) {
      result.seeds[i] = SeedResult{};
      result.seeds[i].seed = seed;
      result.seeds[i].error = e.what();
      log_warning("seed " + std::to_string(seed) + " failed: " + e.what());
    }
  };
  const int jobs = std::min<int>(config.jobs, static_cast<int>(config.seeds.size()));
  if (jobs <= 1) {
    for (std::size_t i = 0; i < config.seeds.size(); ++i) one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (int t = 0; t < jobs; ++t)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < config.seeds.size(); i = next++) one(i);
      });
  }
  result.aggregate = aggregate(result.seeds);

  if (!out_dir.empty()) {
    if (!result.aggregate.empty()) write_aggregate_csv(out_dir / "aggregate.csv", result.aggregate);
    ordered_json summary;
    summary["name"] = config.name;
    ordered_json seeds = ordered_json::array();
    for (const auto& s : result.seeds) {
      ordered_json e;
      e["seed"] = s.seed;
      e["ok"] = s.ok;
      if (!s.ok) e["error"] = s.error;
      if (s.ok) {
        e["expected_length"] = s.expected_length;
        e["success_auc"] = success_auc(s.points);
        const auto t80 = steps_to_success(s.points, 0.8);
        if (t80)
          e["steps_to_80"] = *t80;
        else
          e["steps_to_80"] = nullptr;
        e["adaptations"] = s.adaptations.size();
      }
      seeds.push_back(e);
    }
    summary["seeds"] = seeds;
    if (!result.aggregate.empty()) summary["median_success_auc"] = median_success_auc(result.aggregate);
    std::ofstream(out_dir / "summary.json", std::ios::trunc) << summary.dump(2) << '\n';
  }
  if (result.aggregate.empty()) {
    std::string msg = "every seed failed";
    if (!result.seeds.empty()) msg += ": " + result.seeds.front().error;
    throw std::runtime_error(msg);
  }
  return result;
}

// -- Plot ---------------------------------------------------------------------

void write_plot_svg(const std::filesystem::path& path, const std::vector<PlotSeries>& series, PlotMetric metric,
                    const std::string& title) {
  if (series.empty()) throw std::invalid_argument("nothing to plot");
  for (const auto& s : series)
    if (s.points.empty()) throw std::invalid_argument("series '" + s.name + "' has no points");
  const double W = 720, H = 440, left = 64, right = 24, top = 40, bottom = 52;
  const double pw = W - left - right, ph = H - top - bottom;
  auto med = [metric](const AggregatePoint& p) { return metric == PlotMetric::kSuccess ? p.median_success : p.median_return; };
  auto lo = [metric](const AggregatePoint& p) { return metric == PlotMetric::kSuccess ? p.p25_success : p.p25_return; };
  auto hi = [metric](const AggregatePoint& p) { return metric == PlotMetric::kSuccess ? p.p75_success : p.p75_return; };

  double x0 = 1e300, x1 = -1e300, y0 = 0.0, y1 = 1.0;
  if (metric == PlotMetric::kReturn) {
    y0 = 1e300;
    y1 = -1e300;
  }
  for (const auto& s : series)
    for (const auto& p : s.points) {
      x0 = std::min(x0, static_cast<double>(p.step));
      x1 = std::max(x1, static_cast<double>(p.step));
      if (metric == PlotMetric::kReturn) {
        y0 = std::min(y0, lo(p));
        y1 = std::max(y1, hi(p));
      }
    }
  if (x1 <= x0) x1 = x0 + 1.0;
  if (y1 <= y0) y1 = y0 + 1.0;
  auto X = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto Y = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };
  // Single-point series span the whole x range as a flat line.
  auto xs = [&](const PlotSeries& s) {
    std::vector<double> out;
    if (s.points.size() == 1) return std::vector<double>{left, left + pw};
    for (const auto& p : s.points) out.push_back(X(static_cast<double>(p.step)));
    return out;
  };
  auto at = [](const PlotSeries& s, std::size_t i) -> const AggregatePoint& {
    return s.points[std::min(i, s.points.size() - 1)];
  };

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!title.empty()) svg << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
  svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    const double fx = x0 + (x1 - x0) * t / 5.0, fy = y0 + (y1 - y0) * t / 5.0;
    svg << "<line x1=\"" << X(fx) << "\" y1=\"" << top + ph << "\" x2=\"" << X(fx) << "\" y2=\"" << top + ph + 5
        << "\" stroke=\"#333\"/>\n";
    svg << "<text x=\"" << X(fx) << "\" y=\"" << top + ph + 19 << "\" text-anchor=\"middle\">" << fmt(std::round(fx))
        << "</text>\n";
    svg << "<line x1=\"" << left - 5 << "\" y1=\"" << Y(fy) << "\" x2=\"" << left << "\" y2=\"" << Y(fy)
        << "\" stroke=\"#333\"/>\n";
    svg << "<text x=\"" << left - 8 << "\" y=\"" << Y(fy) + 4 << "\" text-anchor=\"end\">" << fmt(fy) << "</text>\n";
  }
  svg << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">environment steps</text>\n";
  svg << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << (metric == PlotMetric::kSuccess ? "success rate" : "return") << "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = colors[si % 6];
    const auto px = xs(s);
    svg << "<polygon class=\"band\" fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
    for (std::size_t i = 0; i < px.size(); ++i) svg << px[i] << ',' << Y(hi(at(s, i))) << ' ';
    for (std::size_t i = px.size(); i-- > 0;) svg << px[i] << ',' << Y(lo(at(s, i))) << ' ';
    svg << "\"/>\n";
    svg << "<polyline class=\"median\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < px.size(); ++i) svg << px[i] << ',' << Y(med(at(s, i))) << ' ';
    svg << "\"/>\n";
  }
  if (series.size() > 1) {
    for (std::size_t si = 0; si < series.size(); ++si) {
      const double ly = top + 14 + 18 * static_cast<double>(si);
      svg << "<g class=\"legend\"><line x1=\"" << left + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + 36 << "\" y2=\""
          << ly << "\" stroke=\"" << colors[si % 6] << "\" stroke-width=\"3\"/><text x=\"" << left + 42 << "\" y=\""
          << ly + 4 << "\">" << series[si].name << "</text></g>\n";
    }
  }
  svg << "</svg>\n";
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << svg.str();
}

}  // namespace atradiff
