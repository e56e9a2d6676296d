#ifndef ATRADIFF_ADAPT_HPP_
#define ATRADIFF_ADAPT_HPP_

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "atradiff/bank.hpp"
#include "atradiff/env.hpp"
#include "atradiff/qfunction.hpp"
#include "atradiff/rng.hpp"

namespace atradiff {

// |r + gamma * max_a' Q(s', a') - Q(s, a)|, bootstrap dropped when z.done.
double importance_td(const Transition& z, const QFunction& q, double gamma);
// Same for a batch, one forward pass per side.
std::vector<double> importance_td(const std::vector<const Transition*>& batch, const QFunction& q, double gamma);

// Total episode reward; throws on an empty trajectory.
double importance_reward(const Trajectory& traj);

enum class Indicator { kTdError, kReward };
Indicator parse_indicator(const std::string& name);
std::string to_string(Indicator kind);

struct PoolConfig {
  Indicator kind = Indicator::kTdError;
  std::size_t capacity = 5000;
  double gamma = 0.99;         // TD indicator
  double drop_fraction = 0.2;  // reward indicator: per-entry drop chance after each adaptation
  int max_uses = 3;            // reward indicator: dropped after this many adaptations; 0 disables
};

struct PoolEntry {
  Transition transition;  // episode/step locate its source trajectory
  double score = 0.0;
  std::uint64_t sequence = 0;  // insertion order, newer is larger
  int uses = 0;
};

// Bounded score-ordered pool. Lower scores are evicted first; among equal
// scores the older entry goes first. The TD kind re-scores every entry with
// the current Q on each update and at selection time; reward scores are
// fixed at insertion.
class ImportancePool {
 public:
  explicit ImportancePool(const PoolConfig& config);

  const PoolConfig& config() const { return config_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<PoolEntry>& entries() const { return entries_; }

  // Inserts scored transitions. For the TD kind with q set, retained and new
  // entries are (re)scored against q first and `score` arguments are ignored.
  void pool_update(const std::vector<std::pair<Transition, double>>& items, const QFunction* q);

  // Scores every transition of a finished episode and inserts it.
  void add_episode(const Trajectory& traj, int episode, const QFunction* q);

  // Indices of the m best entries, best first. The TD kind re-scores first
  // when q is set.
  std::vector<std::size_t> select_top(std::size_t m, const QFunction* q);

  void mark_used(const std::vector<std::size_t>& indices);

  // Random dropping and the usage cap (reward kind only; no-op for TD).
  // Returns the number of entries removed.
  std::size_t after_adaptation(Rng& rng);

 private:
  void rescore(const QFunction& q);
  void rebuild();

  PoolConfig config_;
  std::vector<PoolEntry> entries_;  // min-heap on (score, sequence)
  std::uint64_t next_sequence_ = 0;
};

// Completed real episodes by id, for turning pool entries back into windows.
class EpisodeLog {
 public:
  void add(int episode, Trajectory traj);
  bool contains(int episode) const { return episodes_.count(episode) != 0; }
  const Trajectory& at(int episode) const;
  std::size_t size() const { return episodes_.size(); }

 private:
  std::map<int, Trajectory> episodes_;
};

struct AdaptConfig {
  int period = 5000;           // T_adapt, env steps between adaptations
  int diffusion_steps = 200;   // fine-tune updates per model per adaptation
  int estimator_steps = 200;
  int batch_size = 64;
  std::size_t selection = 500;  // m
  double learning_rate = 1e-4;
  int eval_columns = 256;  // windows used for the before/after loss

  void validate(const PoolConfig& pool) const;
};

struct AdaptReport {
  bool applied = false;
  std::int64_t step = 0;  // filled in by the caller
  std::size_t pool_size = 0;
  std::size_t selected = 0;
  std::size_t dropped = 0;
  double score_min = 0, score_p25 = 0, score_median = 0, score_p75 = 0, score_max = 0;
  double loss_before = 0, loss_after = 0;  // mean over bank models
  std::vector<std::vector<double>> model_losses;
  std::vector<double> estimator_losses;
};

// Selects the top-m pool entries, expands each into a window of every bank
// length starting at the entry's step of its source episode, fine-tunes the
// adapted models and the length estimator, then applies the pool's
// post-adaptation drops. The frozen original is untouched. An empty pool is
// a logged no-op.
AdaptReport adapt_step(DiffuserBank& bank, ImportancePool& pool, const EpisodeLog& episodes,
                       const AdaptConfig& config, const QFunction* q, Rng& rng);

// One JSON object per line: step, pool_size, selected, dropped, the
// selection score quantiles and the fine-tune loss before/after.
void write_adapt_event(std::ostream& out, const AdaptReport& report);

}  // namespace atradiff

#endif  // ATRADIFF_ADAPT_HPP_
