#ifndef ATRADIFF_DIFFUSION_HPP_
#define ATRADIFF_DIFFUSION_HPP_

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "atradiff/env.hpp"
#include "atradiff/nn.hpp"
#include "atradiff/rng.hpp"
#include "atradiff/serialize.hpp"

namespace atradiff {

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// beta_1..beta_N with derived alpha_i = 1 - beta_i and alpha_bar_i = prod
// alpha_j. Index 0 is the noiseless endpoint: alpha_bar(0) == 1.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  explicit NoiseSchedule(std::vector<double> betas);
  static NoiseSchedule linear(int steps, double beta_start = 1e-4, double beta_end = 2e-2);

  int steps() const { return static_cast<int>(betas_.size()) - 1; }
  double beta(int i) const { return betas_.at(static_cast<std::size_t>(i)); }
  double alpha(int i) const { return 1.0 - beta(i); }
  double alpha_bar(int i) const { return alpha_bars_.at(static_cast<std::size_t>(i)); }
  // beta_1..beta_N, without the index-0 placeholder.
  std::vector<double> betas() const { return {betas_.begin() + 1, betas_.end()}; }

 private:
  std::vector<double> betas_;       // [0] unused (0)
  std::vector<double> alpha_bars_;  // [0] == 1
};

// sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * noise.
Eigen::VectorXd q_sample(const Eigen::VectorXd& x0, double alpha_bar, const Eigen::VectorXd& noise);
// Closed-form forward marginal at step i in [0, N].
Eigen::VectorXd q_sample(const Eigen::VectorXd& x0, int i, const Eigen::VectorXd& noise,
                         const NoiseSchedule& schedule);

// Shape of a flat trajectory window: k records of
// (state, one-hot action, reward), plus the conditioning vector
// (initial state, and a task one-hot when there is more than one task).
struct WindowLayout {
  int length = 1;  // k
  int state_dim = 1;
  int action_count = 1;
  int task_count = 1;

  int record_dim() const { return state_dim + action_count + 1; }
  int window_dim() const { return length * record_dim(); }
  int task_dim() const { return task_count > 1 ? task_count : 0; }
  int condition_dim() const { return state_dim + task_dim(); }
  int state_offset(int step) const { return step * record_dim(); }
  int action_offset(int step) const { return step * record_dim() + state_dim; }
  int reward_offset(int step) const { return step * record_dim() + state_dim + action_count; }

  bool operator==(const WindowLayout&) const = default;
};

struct WindowCondition {
  State initial_state;
  int task = 0;
};

struct TrajWindow {
  Eigen::VectorXd flat;  // window_dim entries
  WindowCondition condition;
};

// Packs k records into a window; throws ShapeError when sizes disagree.
TrajWindow make_window(const WindowLayout& layout, const std::vector<State>& states, const std::vector<int>& actions,
                       const std::vector<double>& rewards, int task);

struct DecodedWindow {
  std::vector<State> states;
  std::vector<int> actions;
  std::vector<double> rewards;
};
DecodedWindow decode_window(const WindowLayout& layout, const Eigen::VectorXd& flat);

// Per-dimension affine normalization of windows. State dimensions are
// z-scored with statistics pooled over every record of the training
// corpus (std floored at 1e-6); action one-hots and rewards, both bounded in
// [0,1], map through (x - 0.5) / 0.5.
class Normalizer {
 public:
  static constexpr double kStdFloor = 1e-6;

  Normalizer() = default;
  Normalizer(WindowLayout layout, Eigen::VectorXd state_mean, Eigen::VectorXd state_std);
  static Normalizer fit(const WindowLayout& layout, const std::vector<TrajWindow>& corpus);

  const WindowLayout& layout() const { return layout_; }
  const Eigen::VectorXd& state_mean() const { return state_mean_; }
  const Eigen::VectorXd& state_std() const { return state_std_; }

  Eigen::VectorXd normalize(const Eigen::VectorXd& flat) const;
  Eigen::VectorXd denormalize(const Eigen::VectorXd& flat) const;
  Eigen::VectorXd normalize_state(const State& s) const;
  Eigen::VectorXd condition_vector(const WindowCondition& c) const;

  // Identifies the statistics a batch was normalized with.
  std::uint64_t fingerprint() const { return fingerprint_; }

 private:
  void finish();

  WindowLayout layout_;
  Eigen::VectorXd state_mean_;
  Eigen::VectorXd state_std_;
  Eigen::VectorXd mean_;  // full window
  Eigen::VectorXd std_;
  std::uint64_t fingerprint_ = 0;
};

// Windows and conditions already mapped into a model's normalized space.
// Only Normalizer-aware code builds these, so a raw window cannot reach the
// training step by accident.
struct NormalizedBatch {
  Eigen::MatrixXd x0;    // window_dim x B
  Eigen::MatrixXd cond;  // condition_dim x B
  std::uint64_t fingerprint = 0;

  Eigen::Index size() const { return x0.cols(); }
  NormalizedBatch columns(const std::vector<Eigen::Index>& idx) const;
};

NormalizedBatch normalize_batch(const Normalizer& norm, const std::vector<TrajWindow>& windows);

// i/N followed by sin/cos features at two frequencies.
inline constexpr int kTimeEmbeddingDim = 5;
Eigen::VectorXd time_embedding(int i, int steps);

struct NoisingDraw {
  std::vector<int> steps;  // one per column, uniform in [1, N]
  Eigen::MatrixXd noise;
  Eigen::MatrixXd noised;
};
NoisingDraw draw_noising(const NoiseSchedule& schedule, const Eigen::MatrixXd& x0, Rng& rng);

using NoisePredictor =
    std::function<Eigen::MatrixXd(const Eigen::MatrixXd& noised, const std::vector<int>& steps,
                                  const Eigen::MatrixXd& cond)>;

// mean over the batch of ||eps - predictor(q_sample(x0, i, eps), i, cond)||^2
// for fresh draws of i and eps. Does not train anything.
double noise_prediction_loss(const NoiseSchedule& schedule, const NormalizedBatch& batch,
                             const NoisePredictor& predictor, Rng& rng);

struct DiffusionConfig {
  int steps = 100;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
  std::vector<int> hidden{256, 256, 256};
  double learning_rate = 1e-3;
  int batch_size = 64;
  int train_steps = 20000;
};

// Denoising diffusion model over fixed-length windows of one length k.
class TrajDiffusionModel {
 public:
  TrajDiffusionModel() = default;
  TrajDiffusionModel(Normalizer normalizer, const DiffusionConfig& config, Rng& rng);

  const WindowLayout& layout() const { return normalizer_.layout(); }
  int length() const { return layout().length; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const Normalizer& normalizer() const { return normalizer_; }
  const Mlp& denoiser() const { return denoiser_; }
  Mlp& denoiser() { return denoiser_; }
  Adam& optimizer() { return optimizer_; }

  Eigen::MatrixXd denoiser_input(const Eigen::MatrixXd& noised, const std::vector<int>& steps,
                                 const Eigen::MatrixXd& cond) const;
  Eigen::MatrixXd predict_noise(const Eigen::MatrixXd& noised, const std::vector<int>& steps,
                                const Eigen::MatrixXd& cond) const;

  // One optimizer step on the noise-prediction objective; returns the loss.
  // Rejects batches normalized with different statistics or of the wrong
  // shape.
  double train_step(const NormalizedBatch& batch, Rng& rng);

  // Ancestral sampling from pure noise with variance beta_i (zero at the last
  // step). The result is denormalized, its first state is overwritten with
  // the conditioning state, actions snap to one-hot, rewards clamp to [0,1].
  TrajWindow sample(const WindowCondition& condition, Rng& rng) const;
  std::vector<TrajWindow> sample_batch(const std::vector<WindowCondition>& conditions, Rng& rng) const;

  Bytes serialize() const;
  static TrajDiffusionModel deserialize(const Bytes& bytes);

 private:
  void check_batch(const NormalizedBatch& batch) const;

  Normalizer normalizer_;
  NoiseSchedule schedule_;
  Mlp denoiser_;
  Adam optimizer_;
};

}  // namespace atradiff

#endif  // ATRADIFF_DIFFUSION_HPP_
