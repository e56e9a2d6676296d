#ifndef ATRADIFF_BANK_HPP_
#define ATRADIFF_BANK_HPP_

#include <memory>
#include <span>
#include <vector>

#include "atradiff/diffusion.hpp"
#include "atradiff/env.hpp"
#include "atradiff/generator.hpp"
#include "atradiff/nn.hpp"

namespace atradiff {

// Pads the trajectory with k copies of its last record (reward 0, action
// kept) and cuts one length-k window starting at every real step, so a
// trajectory of t steps yields exactly t windows.
std::vector<TrajWindow> pad_and_slice(const Trajectory& traj, const WindowLayout& layout);

// The window starting at step `start` (0-based) of the padded trajectory.
TrajWindow padded_window(const Trajectory& traj, const WindowLayout& layout, int start);

// Smallest preset >= raw_length, or the largest preset when none is.
int round_up_to_preset(std::span<const int> presets, double raw_length);

// exp(-||a - b||_2 / dim): 1 for identical states, decreasing with distance.
double similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

inline constexpr double kDefaultPruneEpsilon = 0.05;
// Differences within this of the maximum count as ties.
inline constexpr double kPruneTieTolerance = 1e-12;

// Ending index l in [2, k] for a window whose adjacent-state similarities are
// sims[j] = sim(s_{j+1}, s_{j+2}) (k - 1 values). For 1 < i < k compares the
// prefix average of sims over j = 1..i with the suffix average of
// sim(s_{j-1}, s_j) over j = i..k and returns the i with the largest
// absolute gap, preferring the largest i among ties. Returns k when k < 3 or
// when the largest gap is below epsilon.
int prune_similarities(std::span<const double> sims, double epsilon = kDefaultPruneEpsilon);
int prune(const std::vector<Eigen::VectorXd>& states, double epsilon = kDefaultPruneEpsilon);

// Regresses the number of remaining steps (current step included) from
// (state, task).
class LengthEstimator {
 public:
  struct Config {
    std::vector<int> hidden{64, 64};
    double learning_rate = 1e-3;
    int batch_size = 64;
    int train_steps = 5000;
  };

  LengthEstimator() = default;
  LengthEstimator(int state_dim, int task_count, Eigen::VectorXd state_mean, Eigen::VectorXd state_std,
                  double target_scale, const Config& config, Rng& rng);

  // Statistics come from the trajectories; targets are t - j for step j.
  static LengthEstimator create(std::span<const Trajectory> data, int state_dim, int task_count,
                                const Config& config, Rng& rng);

  // Raw prediction floored at 1.
  double predict(const State& state, int task) const;

  // Inputs/targets for every step of the trajectories, ready for train().
  struct Corpus {
    Eigen::MatrixXd inputs;
    Eigen::MatrixXd targets;
  };
  Corpus corpus(std::span<const Trajectory> data) const;
  Corpus corpus(const std::vector<std::pair<State, int>>& inputs, const std::vector<double>& remaining) const;
  std::vector<double> train(const Corpus& corpus, int steps, int batch_size, Rng& rng);
  void set_learning_rate(double lr) { optimizer_.set_learning_rate(lr); }

  const Mlp& net() const { return net_; }
  Bytes serialize() const;
  static LengthEstimator deserialize(const Bytes& bytes);

 private:
  Eigen::VectorXd input(const State& state, int task) const;

  int state_dim_ = 0;
  int task_count_ = 1;
  Eigen::VectorXd state_mean_;
  Eigen::VectorXd state_std_;
  double target_scale_ = 1.0;
  Mlp net_;
  Adam optimizer_;
};

// Inner loop shared by pretraining and adaptation: `steps` minibatch
// updates drawn uniformly from the corpus. Returns per-step losses.
std::vector<double> train_diffusion(TrajDiffusionModel& model, const NormalizedBatch& corpus, int steps,
                                    int batch_size, Rng& rng);

struct BankModels {
  std::vector<TrajDiffusionModel> models;  // one per preset, same order
  LengthEstimator estimator;
};

struct BankConfig {
  std::vector<int> presets{5, 10, 15, 20, 25};
  DiffusionConfig diffusion;
  LengthEstimator::Config estimator;
  double p_orig = 0.25;
  double prune_epsilon = kDefaultPruneEpsilon;
  // Round generated rewards to {0, 1} (sparse 0-1 environments).
  bool binary_rewards = true;
  // Models trained concurrently during pretraining.
  int threads = 1;
};

struct BankTrainingReport {
  std::vector<std::vector<double>> model_losses;  // per preset
  std::vector<double> estimator_losses;
};

// Multi-length trajectory diffuser with a length estimator and pruner, plus
// a frozen snapshot of the pretrained models.
class DiffuserBank final : public TrajectoryGenerator {
 public:
  DiffuserBank() = default;
  DiffuserBank(std::vector<int> presets, BankModels models, const BankConfig& config);

  const std::vector<int>& presets() const { return presets_; }
  double p_orig() const { return p_orig_; }
  void set_p_orig(double p);
  double prune_epsilon() const { return prune_epsilon_; }

  const BankModels& models() const { return adapted_; }
  BankModels& mutable_models() { return adapted_; }
  const BankModels* original() const { return original_.get(); }

  // Snapshots the current models as the immutable original copy.
  void freeze();

  int estimate_length(const State& state, int task) const;
  int estimate_length(const BankModels& models, const State& state, int task) const;

  // Draws the frozen copy with probability p_orig (when one exists), picks a
  // preset with the length estimator, samples a window conditioned on the
  // state and cuts it at the pruner's ending index.
  GeneratedTrajectory generate(const State& initial_state, int task, Rng& rng) const override;

  // Decodes a sampled window and applies pruning / reward rounding.
  GeneratedTrajectory finish_window(const TrajDiffusionModel& model, const TrajWindow& window, int task) const;

  Bytes serialize() const;
  static DiffuserBank deserialize(const Bytes& bytes);
  static Bytes serialize_models(const BankModels& models);
  static BankModels deserialize_models(const Bytes& bytes);

 private:
  std::size_t preset_index(int k) const;

  std::vector<int> presets_;
  BankModels adapted_;
  std::shared_ptr<const BankModels> original_;
  double p_orig_ = 0.25;
  double prune_epsilon_ = kDefaultPruneEpsilon;
  bool binary_rewards_ = true;
};

// Trains one model per preset on the padded corpus and the length estimator
// on the raw trajectories, then freezes the result.
DiffuserBank train_bank(std::span<const Trajectory> data, const EnvSpec& env, const BankConfig& config, Rng& rng,
                        BankTrainingReport* report = nullptr);

}  // namespace atradiff

#endif  // ATRADIFF_BANK_HPP_
