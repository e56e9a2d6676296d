#include "atradiff/nn.hpp"

#include <cmath>
#include <string>

#include "atradiff/log.hpp"

namespace atradiff {
namespace {

Eigen::MatrixXd activate(Activation a, const Eigen::MatrixXd& z) {
  switch (a) {
    case Activation::kRelu: return z.cwiseMax(0.0);
    case Activation::kTanh: return z.array().tanh().matrix();
  }
  return z;
}

// dAct/dz evaluated elementwise and multiplied into upstream.
void activate_backward(Activation a, const Eigen::MatrixXd& z, Eigen::MatrixXd& upstream) {
  switch (a) {
    case Activation::kRelu:
      upstream = (z.array() > 0.0).select(upstream, 0.0);
      break;
    case Activation::kTanh:
      upstream.array() *= 1.0 - z.array().tanh().square();
      break;
  }
}

}  // namespace

bool Gradients::all_finite() const {
  for (const auto& w : weight)
    if (!w.allFinite()) return false;
  for (const auto& b : bias)
    if (!b.allFinite()) return false;
  return true;
}

double Gradients::max_abs() const {
  double m = 0.0;
  for (const auto& w : weight)
    if (w.size() > 0) m = std::max(m, w.cwiseAbs().maxCoeff());
  for (const auto& b : bias)
    if (b.size() > 0) m = std::max(m, b.cwiseAbs().maxCoeff());
  return m;
}

void Mlp::check_widths(const std::vector<int>& widths) {
  if (widths.size() < 2) throw ShapeError("an Mlp needs at least input and output widths");
  for (int w : widths)
    if (w <= 0) throw ShapeError("layer widths must be positive");
}

Mlp::Mlp(std::vector<int> widths, Activation hidden, Rng& rng)
    : Mlp(widths, std::vector<Activation>(widths.size() >= 2 ? widths.size() - 2 : 0, hidden), rng) {}

Mlp::Mlp(std::vector<int> widths, std::vector<Activation> hidden, Rng& rng)
    : widths_(std::move(widths)), activations_(std::move(hidden)) {
  check_widths(widths_);
  if (activations_.size() != widths_.size() - 2)
    throw ShapeError("need one activation per hidden layer");
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const int fan_in = widths_[l];
    const int fan_out = widths_[l + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    DenseLayer layer{Eigen::MatrixXd(fan_out, fan_in), Eigen::VectorXd::Zero(fan_out)};
    for (int r = 0; r < fan_out; ++r)
      for (int c = 0; c < fan_in; ++c) layer.weight(r, c) = rng.uniform(-limit, limit);
    layers_.push_back(std::move(layer));
  }
}

Mlp Mlp::zeros(std::vector<int> widths, Activation hidden) {
  check_widths(widths);
  Mlp net;
  net.activations_.assign(widths.size() - 2, hidden);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l)
    net.layers_.push_back({Eigen::MatrixXd::Zero(widths[l + 1], widths[l]), Eigen::VectorXd::Zero(widths[l + 1])});
  net.widths_ = std::move(widths);
  return net;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& input) const {
  if (input.size() != input_width())
    throw ShapeError("input has " + std::to_string(input.size()) + " entries, net expects " +
                     std::to_string(input_width()));
  Eigen::VectorXd h = input;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::VectorXd z = layers_[l].weight * h + layers_[l].bias;
    if (l + 1 < layers_.size())
      h = activate(activations_[l], z);
    else
      h = std::move(z);
  }
  return h;
}

Eigen::MatrixXd Mlp::forward_batch(const Eigen::MatrixXd& inputs, Tape* tape) const {
  if (inputs.rows() != input_width())
    throw ShapeError("batch has " + std::to_string(inputs.rows()) + " rows, net expects " +
                     std::to_string(input_width()));
  if (tape) {
    tape->inputs.clear();
    tape->pre.clear();
  }
  Eigen::MatrixXd h = inputs;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd z = layers_[l].weight * h;
    z.colwise() += layers_[l].bias;
    const bool last = l + 1 == layers_.size();
    Eigen::MatrixXd next = last ? z : activate(activations_[l], z);
    if (tape) {
      tape->inputs.push_back(std::move(h));
      tape->pre.push_back(std::move(z));
    }
    h = std::move(next);
  }
  return h;
}

Gradients Mlp::backward(const Tape& tape, const Eigen::MatrixXd& d_output) const {
  if (tape.inputs.size() != layers_.size()) throw ShapeError("tape does not match network depth");
  if (d_output.rows() != output_width() || d_output.cols() != tape.inputs.front().cols())
    throw ShapeError("output gradient shape mismatch");
  Gradients g;
  g.weight.resize(layers_.size());
  g.bias.resize(layers_.size());
  Eigen::MatrixXd delta = d_output;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    if (l + 1 < layers_.size()) activate_backward(activations_[l], tape.pre[l], delta);
    g.weight[l].noalias() = delta * tape.inputs[l].transpose();
    g.bias[l] = delta.rowwise().sum();
    if (l > 0) delta = layers_[l].weight.transpose() * delta;
  }
  return g;
}

Gradients Mlp::zero_gradients() const {
  Gradients g;
  for (const auto& l : layers_) {
    g.weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
  }
  return g;
}

bool Mlp::all_finite() const {
  for (const auto& l : layers_)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

Bytes Mlp::serialize() const {
  ByteWriter w;
  w.header("");
  w.u32(static_cast<std::uint32_t>(widths_.size()));
  for (int width : widths_) w.u32(static_cast<std::uint32_t>(width));
  for (Activation a : activations_) w.u8(static_cast<std::uint8_t>(a));
  for (const auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) w.f64(l.weight(r, c));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) w.f64(l.bias[r]);
  }
  return w.take();
}

Mlp Mlp::deserialize(const Bytes& bytes) {
  ByteReader r(bytes);
  r.header("");
  const std::uint32_t depth = r.u32();
  if (depth < 2 || depth > 1024) throw FormatError("implausible layer count");
  std::vector<int> widths(depth);
  for (auto& w : widths) {
    w = static_cast<int>(r.u32());
    if (w <= 0) throw FormatError("non-positive layer width");
  }
  Mlp net = zeros(widths, Activation::kRelu);
  for (auto& a : net.activations_) {
    const std::uint8_t tag = r.u8();
    if (tag > 1) throw FormatError("unknown activation tag");
    a = static_cast<Activation>(tag);
  }
  for (auto& l : net.layers_) {
    for (Eigen::Index row = 0; row < l.weight.rows(); ++row)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(row, c) = r.f64();
    for (Eigen::Index row = 0; row < l.bias.size(); ++row) l.bias[row] = r.f64();
  }
  r.expect_done();
  return net;
}

MseResult mse_gradients(const Mlp& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets) {
  if (inputs.cols() == 0) throw std::invalid_argument("empty batch");
  if (targets.cols() != inputs.cols() || targets.rows() != net.output_width())
    throw ShapeError("target batch shape mismatch");
  Mlp::Tape tape;
  const Eigen::MatrixXd out = net.forward_batch(inputs, &tape);
  const Eigen::MatrixXd diff = out - targets;
  const double batch = static_cast<double>(inputs.cols());
  MseResult res;
  res.loss = diff.squaredNorm() / batch;
  res.grads = net.backward(tape, (2.0 / batch) * diff);
  return res;
}

Adam::Adam(const Mlp& net, AdamConfig config)
    : config_(config), first_(net.zero_gradients()), second_(net.zero_gradients()) {
  if (!(config_.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(config_.beta1 > 0.0 && config_.beta1 < 1.0 && config_.beta2 > 0.0 && config_.beta2 < 1.0))
    throw std::invalid_argument("moment decay rates must lie in (0, 1)");
  if (!(config_.epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
}

StepStatus Adam::step(Mlp& net, const Gradients& grads) {
  auto& layers = net.layers();
  if (grads.weight.size() != layers.size() || grads.bias.size() != layers.size() ||
      first_.weight.size() != layers.size())
    throw ShapeError("gradient set does not match network");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (grads.weight[l].rows() != layers[l].weight.rows() || grads.weight[l].cols() != layers[l].weight.cols() ||
        grads.bias[l].size() != layers[l].bias.size())
      throw ShapeError("gradient shape mismatch at layer " + std::to_string(l));
  }
  if (!grads.all_finite()) {
    log_warning("non-finite gradient, optimizer step skipped");
    return StepStatus::kSkippedNonFinite;
  }
  ++step_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double lr = config_.learning_rate;
  const double eps = config_.epsilon;
  auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weight, grads.weight[l], first_.weight[l], second_.weight[l]);
    update(layers[l].bias, grads.bias[l], first_.bias[l], second_.bias[l]);
  }
  return StepStatus::kApplied;
}

}  // namespace atradiff
