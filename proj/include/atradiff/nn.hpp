#ifndef ATRADIFF_NN_HPP_
#define ATRADIFF_NN_HPP_

#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "atradiff/rng.hpp"
#include "atradiff/serialize.hpp"

namespace atradiff {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Activation : std::uint8_t { kRelu = 0, kTanh = 1 };

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

// Per-parameter gradients, laid out exactly like Mlp::layers().
struct Gradients {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;

  bool all_finite() const;
  double max_abs() const;
};

// Dense feed-forward network. Hidden layers use a per-layer activation,
// the output layer is linear. Batches are column-major: one sample per
// column.
class Mlp {
 public:
  // Activations recorded during a forward pass, consumed by backward().
  struct Tape {
    std::vector<Eigen::MatrixXd> inputs;  // input to each layer
    std::vector<Eigen::MatrixXd> pre;     // pre-activation of each layer
  };

  Mlp() = default;

  // Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
  Mlp(std::vector<int> widths, Activation hidden, Rng& rng);
  Mlp(std::vector<int> widths, std::vector<Activation> hidden, Rng& rng);

  // All parameters zero.
  static Mlp zeros(std::vector<int> widths, Activation hidden);

  const std::vector<int>& widths() const { return widths_; }
  const std::vector<Activation>& activations() const { return activations_; }
  int input_width() const { return widths_.front(); }
  int output_width() const { return widths_.back(); }
  std::size_t parameter_count() const;

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  Eigen::VectorXd forward(const Eigen::VectorXd& input) const;
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& inputs, Tape* tape = nullptr) const;

  // Back-propagates dLoss/dOutput (out_width x batch) through a recorded
  // forward pass.
  Gradients backward(const Tape& tape, const Eigen::MatrixXd& d_output) const;

  Gradients zero_gradients() const;
  bool all_finite() const;

  Bytes serialize() const;
  static Mlp deserialize(const Bytes& bytes);

 private:
  static void check_widths(const std::vector<int>& widths);

  std::vector<int> widths_;
  std::vector<Activation> activations_;
  std::vector<DenseLayer> layers_;
};

// Batch-mean squared error: mean over columns of ||net(x) - y||^2.
struct MseResult {
  double loss = 0.0;
  Gradients grads;
};
MseResult mse_gradients(const Mlp& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

enum class StepStatus { kApplied, kSkippedNonFinite };

// Adaptive-moment optimizer state for one network.
class Adam {
 public:
  Adam() = default;
  Adam(const Mlp& net, AdamConfig config);

  const AdamConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  std::int64_t step_count() const { return step_; }

  // Non-finite gradients leave the network and moments untouched and log a
  // warning.
  StepStatus step(Mlp& net, const Gradients& grads);

 private:
  AdamConfig config_;
  std::int64_t step_ = 0;
  Gradients first_;
  Gradients second_;
};

}  // namespace atradiff

#endif  // ATRADIFF_NN_HPP_
