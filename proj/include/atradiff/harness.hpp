#ifndef ATRADIFF_HARNESS_HPP_
#define ATRADIFF_HARNESS_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "atradiff/adapt.hpp"
#include "atradiff/agent.hpp"
#include "atradiff/bank.hpp"
#include "atradiff/replay.hpp"
#include "json.hpp"

namespace atradiff {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class RunMode { kOnline, kOfflineToOnline, kOfflineAug };
RunMode parse_run_mode(const std::string& name);
std::string to_string(RunMode mode);

struct RunConfig {
  std::string name = "run";
  std::string env = "point_goal";
  // PointGoal only: goal used online and for evaluation when it differs
  // from the offline data's goal.
  std::optional<Eigen::Vector2d> online_goal;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  RunMode mode = RunMode::kOfflineToOnline;

  // Offline data: read from `dataset` when set, otherwise collected.
  std::string dataset;
  PolicyTier offline_policy = PolicyTier::kExpert;
  int offline_episodes = 200;
  bool preload_offline = false;  // also put offline transitions into D_o

  // Generator. `diffuser = false` runs a plain replay buffer with no bank.
  bool diffuser = true;
  double rho = 0.3;
  std::optional<double> expected_length;  // unset means measured ("auto")
  int length_probe = 500;
  SyntheticDone synthetic_done = SyntheticDone::kPrunedEnd;
  BankConfig bank;
  std::string bank_cache;  // directory for trained banks keyed by config + seed

  bool adaptation = false;
  AdaptConfig adapt;
  PoolConfig pool;

  AgentConfig agent;
  int learning_starts = 1000;
  std::size_t real_capacity = 200000;
  std::size_t synthetic_capacity = 0;

  std::int64_t total_steps = 50000;
  int eval_every = 500;
  int eval_episodes = 10;
  int jobs = 1;  // seeds run concurrently
  std::string output_dir;

  void validate() const;
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::ordered_json to_json() const;
};

RunConfig load_run_config(const std::filesystem::path& path);

struct EvalPoint {
  std::int64_t step = 0;
  double episode_return = 0.0;  // mean discounted return over eval episodes
  double success = 0.0;         // fraction of eval episodes reaching the goal
  std::size_t ds_size = 0;
  std::size_t do_size = 0;
  std::uint64_t gen_count = 0;
  std::uint64_t gen_failures = 0;
  double mean_gen_length = 0.0;
  int adaptations = 0;
  double td_loss = 0.0;  // mean over updates since the previous point
};

struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double expected_length = 0.0;
  std::vector<EvalPoint> points;
  std::vector<AdaptReport> adaptations;
};

struct AggregatePoint {
  std::int64_t step = 0;
  double median_return = 0, p25_return = 0, p75_return = 0;
  double median_success = 0, p25_success = 0, p75_success = 0;
  double ds_size = 0, do_size = 0, gen_count = 0;  // medians over seeds
};

struct ExperimentResult {
  RunConfig config;
  std::vector<SeedResult> seeds;
  std::vector<AggregatePoint> aggregate;
};

// Mean stored length (see stored_length) of n generations from states
// visited by a short random-policy rollout, rounded half-up, at least 1.
// Throws on n < 1.
double measure_expected_length(const TrajectoryGenerator& generator, Environment& env, int n, Rng& rng,
                               SyntheticDone rule = SyntheticDone::kPrunedEnd);

struct GenerationReport {
  int samples = 0;
  double mean_length = 0.0;
  std::vector<int> length_histogram;  // index = pruned length
  std::vector<int> preset_counts;     // per bank preset
  double pruned_fraction = 0.0;
  double from_original_fraction = 0.0;
  double condition_exact = 0.0;  // first state equals the condition
  // One-step agreement with the true dynamics on generated (s, a, s') steps.
  double mean_dynamics_error = 0.0;
  double reward_agreement = 0.0;
  double generated_reward_rate = 0.0;  // generated steps with reward > 0.5
  double true_reward_rate = 0.0;       // same steps rewarded by the true dynamics
  nlohmann::ordered_json to_json() const;
};
// Generation-quality statistics over n draws from states visited by a
// random-policy rollout. Generated trajectories go to `dump` when given.
GenerationReport evaluate_generation(const DiffuserBank& bank, Environment& env, int n, Rng& rng,
                                     std::vector<GeneratedTrajectory>* dump = nullptr);

// Builds the offline and online environments described by the config.
std::unique_ptr<Environment> make_offline_env(const RunConfig& config);
std::unique_ptr<Environment> make_online_env(const RunConfig& config);

std::vector<Trajectory> offline_dataset(const RunConfig& config, std::uint64_t seed);
// Trains (or loads from bank_cache) the seed's bank.
DiffuserBank pretrained_bank(const RunConfig& config, std::uint64_t seed, const std::vector<Trajectory>& data);

// One seed of the full pipeline. Errors propagate; run_experiment isolates
// them per seed. When out_dir is set, writes seed_<seed>.csv and the
// adaptation event log there.
SeedResult run_seed(const RunConfig& config, std::uint64_t seed, const std::filesystem::path* out_dir = nullptr);

// All seeds, then the aggregate. Writes config.json, per-seed files,
// aggregate.csv and summary.json when output_dir is set. Throws only when
// every seed failed.
ExperimentResult run_experiment(const RunConfig& config);

// Median and 25/75 percentiles over the successful seeds at each step.
std::vector<AggregatePoint> aggregate(const std::vector<SeedResult>& seeds);

inline const std::vector<std::string>& aggregate_columns() {
  static const std::vector<std::string> cols{"step",           "median_return", "p25_return",  "p75_return",
                                             "median_success", "p25_success",   "p75_success", "ds_size",
                                             "do_size",        "gen_count"};
  return cols;
}
void write_seed_csv(const std::filesystem::path& path, const SeedResult& result);
void write_aggregate_csv(const std::filesystem::path& path, const std::vector<AggregatePoint>& points);
// Throws std::runtime_error on a malformed file.
std::vector<AggregatePoint> read_aggregate_csv(const std::filesystem::path& path);

// Trapezoid area under success(step), divided by the step span so the value
// is a mean success rate in [0, 1].
double success_auc(const std::vector<EvalPoint>& points);
double median_success_auc(const std::vector<AggregatePoint>& points);
// First eval step with success >= threshold.
std::optional<std::int64_t> steps_to_success(const std::vector<EvalPoint>& points, double threshold);

struct PlotSeries {
  std::string name;
  std::vector<AggregatePoint> points;
};
enum class PlotMetric { kSuccess, kReturn };
// Median line with a 25-75% band per series; a legend when there is more
// than one series.
void write_plot_svg(const std::filesystem::path& path, const std::vector<PlotSeries>& series, PlotMetric metric,
                    const std::string& title = "");

}  // namespace atradiff

#endif  // ATRADIFF_HARNESS_HPP_
