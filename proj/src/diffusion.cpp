#include "atradiff/diffusion.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <string>

namespace atradiff {

// -- NoiseSchedule ------------------------------------------------------------

NoiseSchedule::NoiseSchedule(std::vector<double> betas) {
  if (betas.empty()) throw std::invalid_argument("noise schedule needs at least one step");
  betas_.reserve(betas.size() + 1);
  betas_.push_back(0.0);
  alpha_bars_.push_back(1.0);
  for (double b : betas) {
    if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("betas must lie in (0, 1)");
    betas_.push_back(b);
    alpha_bars_.push_back(alpha_bars_.back() * (1.0 - b));
  }
}

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw std::invalid_argument("noise schedule needs at least one step");
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    betas[static_cast<std::size_t>(i)] = beta_start + frac * (beta_end - beta_start);
  }
  return NoiseSchedule(std::move(betas));
}

Eigen::VectorXd q_sample(const Eigen::VectorXd& x0, double alpha_bar, const Eigen::VectorXd& noise) {
  if (noise.size() != x0.size()) throw ShapeError("noise dimension does not match the window");
  return std::sqrt(alpha_bar) * x0 + std::sqrt(1.0 - alpha_bar) * noise;
}

Eigen::VectorXd q_sample(const Eigen::VectorXd& x0, int i, const Eigen::VectorXd& noise,
                         const NoiseSchedule& schedule) {
  if (i < 0 || i > schedule.steps())
    throw std::out_of_range("diffusion step " + std::to_string(i) + " outside [0, " +
                            std::to_string(schedule.steps()) + "]");
  return q_sample(x0, schedule.alpha_bar(i), noise);
}

// -- Windows ------------------------------------------------------------------

TrajWindow make_window(const WindowLayout& layout, const std::vector<State>& states, const std::vector<int>& actions,
                       const std::vector<double>& rewards, int task) {
  const auto k = static_cast<std::size_t>(layout.length);
  if (states.size() != k || actions.size() != k || rewards.size() != k)
    throw ShapeError("window needs exactly k records");
  TrajWindow w;
  w.flat = Eigen::VectorXd::Zero(layout.window_dim());
  for (int j = 0; j < layout.length; ++j) {
    const auto& s = states[static_cast<std::size_t>(j)];
    if (s.size() != layout.state_dim) throw ShapeError("state dimension does not match window layout");
    w.flat.segment(layout.state_offset(j), layout.state_dim) = s;
    const int a = actions[static_cast<std::size_t>(j)];
    if (a < 0 || a >= layout.action_count) throw ShapeError("action id outside window layout");
    w.flat[layout.action_offset(j) + a] = 1.0;
    w.flat[layout.reward_offset(j)] = rewards[static_cast<std::size_t>(j)];
  }
  w.condition = {states.front(), task};
  return w;
}

DecodedWindow decode_window(const WindowLayout& layout, const Eigen::VectorXd& flat) {
  if (flat.size() != layout.window_dim()) throw ShapeError("flat window has wrong size");
  DecodedWindow d;
  for (int j = 0; j < layout.length; ++j) {
    d.states.emplace_back(flat.segment(layout.state_offset(j), layout.state_dim));
    Eigen::Index a = 0;
    flat.segment(layout.action_offset(j), layout.action_count).maxCoeff(&a);
    d.actions.push_back(static_cast<int>(a));
    d.rewards.push_back(flat[layout.reward_offset(j)]);
  }
  return d;
}

// -- Normalizer ---------------------------------------------------------------

Normalizer::Normalizer(WindowLayout layout, Eigen::VectorXd state_mean, Eigen::VectorXd state_std)
    : layout_(layout), state_mean_(std::move(state_mean)), state_std_(std::move(state_std)) {
  if (state_mean_.size() != layout_.state_dim || state_std_.size() != layout_.state_dim)
    throw ShapeError("normalizer statistics do not match the state dimension");
  state_std_ = state_std_.cwiseMax(kStdFloor);
  finish();
}

Normalizer Normalizer::fit(const WindowLayout& layout, const std::vector<TrajWindow>& corpus) {
  if (corpus.empty()) throw std::invalid_argument("cannot fit normalizer on an empty corpus");
  const int d = layout.state_dim;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
  double count = 0.0;
  for (const auto& w : corpus) {
    if (w.flat.size() != layout.window_dim()) throw ShapeError("corpus window has wrong size");
    for (int j = 0; j < layout.length; ++j) sum += w.flat.segment(layout.state_offset(j), d);
    count += layout.length;
  }
  const Eigen::VectorXd mean = sum / count;
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(d);
  for (const auto& w : corpus)
    for (int j = 0; j < layout.length; ++j)
      sq += (w.flat.segment(layout.state_offset(j), d) - mean).cwiseAbs2();
  return Normalizer(layout, mean, (sq / count).cwiseSqrt());
}

void Normalizer::finish() {
  const int rec = layout_.record_dim();
  mean_ = Eigen::VectorXd::Constant(layout_.window_dim(), 0.5);
  std_ = Eigen::VectorXd::Constant(layout_.window_dim(), 0.5);
  for (int j = 0; j < layout_.length; ++j) {
    mean_.segment(j * rec, layout_.state_dim) = state_mean_;
    std_.segment(j * rec, layout_.state_dim) = state_std_;
  }
  // FNV-1a over the statistics' bit patterns.
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xFF;
      h *= 1099511628211ULL;
    }
  };
  mix(static_cast<std::uint64_t>(layout_.length));
  mix(static_cast<std::uint64_t>(layout_.state_dim));
  mix(static_cast<std::uint64_t>(layout_.action_count));
  mix(static_cast<std::uint64_t>(layout_.task_count));
  for (Eigen::Index i = 0; i < state_mean_.size(); ++i) {
    mix(std::bit_cast<std::uint64_t>(state_mean_[i]));
    mix(std::bit_cast<std::uint64_t>(state_std_[i]));
  }
  fingerprint_ = h;
}

Eigen::VectorXd Normalizer::normalize(const Eigen::VectorXd& flat) const {
  if (flat.size() != mean_.size()) throw ShapeError("window size does not match normalizer");
  return (flat - mean_).cwiseQuotient(std_);
}

Eigen::VectorXd Normalizer::denormalize(const Eigen::VectorXd& flat) const {
  if (flat.size() != mean_.size()) throw ShapeError("window size does not match normalizer");
  return flat.cwiseProduct(std_) + mean_;
}

Eigen::VectorXd Normalizer::normalize_state(const State& s) const {
  if (s.size() != layout_.state_dim) throw ShapeError("state dimension does not match normalizer");
  return (s - state_mean_).cwiseQuotient(state_std_);
}

Eigen::VectorXd Normalizer::condition_vector(const WindowCondition& c) const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(layout_.condition_dim());
  v.head(layout_.state_dim) = normalize_state(c.initial_state);
  if (layout_.task_dim() > 0) {
    if (c.task < 0 || c.task >= layout_.task_count) throw ShapeError("task id outside condition layout");
    v[layout_.state_dim + c.task] = 1.0;
  }
  return v;
}

NormalizedBatch NormalizedBatch::columns(const std::vector<Eigen::Index>& idx) const {
  NormalizedBatch out;
  out.fingerprint = fingerprint;
  out.x0.resize(x0.rows(), static_cast<Eigen::Index>(idx.size()));
  out.cond.resize(cond.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c) {
    out.x0.col(static_cast<Eigen::Index>(c)) = x0.col(idx[c]);
    out.cond.col(static_cast<Eigen::Index>(c)) = cond.col(idx[c]);
  }
  return out;
}

NormalizedBatch normalize_batch(const Normalizer& norm, const std::vector<TrajWindow>& windows) {
  const auto& layout = norm.layout();
  NormalizedBatch b;
  b.fingerprint = norm.fingerprint();
  b.x0.resize(layout.window_dim(), static_cast<Eigen::Index>(windows.size()));
  b.cond.resize(layout.condition_dim(), static_cast<Eigen::Index>(windows.size()));
  for (std::size_t i = 0; i < windows.size(); ++i) {
    b.x0.col(static_cast<Eigen::Index>(i)) = norm.normalize(windows[i].flat);
    b.cond.col(static_cast<Eigen::Index>(i)) = norm.condition_vector(windows[i].condition);
  }
  return b;
}

// -- Noise prediction ---------------------------------------------------------

Eigen::VectorXd time_embedding(int i, int steps) {
  const double u = static_cast<double>(i) / steps;
  const double pi = std::numbers::pi;
  Eigen::VectorXd e(kTimeEmbeddingDim);
  e << u, std::sin(pi * u), std::cos(pi * u), std::sin(8.0 * pi * u), std::cos(8.0 * pi * u);
  return e;
}

NoisingDraw draw_noising(const NoiseSchedule& schedule, const Eigen::MatrixXd& x0, Rng& rng) {
  NoisingDraw d;
  const Eigen::Index batch = x0.cols();
  d.steps.resize(static_cast<std::size_t>(batch));
  d.noise.resize(x0.rows(), batch);
  d.noised.resize(x0.rows(), batch);
  for (Eigen::Index c = 0; c < batch; ++c) {
    const int i = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(schedule.steps())));
    d.steps[static_cast<std::size_t>(c)] = i;
    for (Eigen::Index r = 0; r < x0.rows(); ++r) d.noise(r, c) = rng.normal();
    const double ab = schedule.alpha_bar(i);
    d.noised.col(c) = std::sqrt(ab) * x0.col(c) + std::sqrt(1.0 - ab) * d.noise.col(c);
  }
  return d;
}

double noise_prediction_loss(const NoiseSchedule& schedule, const NormalizedBatch& batch,
                             const NoisePredictor& predictor, Rng& rng) {
  if (batch.size() == 0) throw std::invalid_argument("empty batch");
  const NoisingDraw d = draw_noising(schedule, batch.x0, rng);
  const Eigen::MatrixXd pred = predictor(d.noised, d.steps, batch.cond);
  if (pred.rows() != d.noise.rows() || pred.cols() != d.noise.cols())
    throw ShapeError("noise predictor returned the wrong shape");
  return (d.noise - pred).squaredNorm() / static_cast<double>(batch.size());
}

// -- TrajDiffusionModel -------------------------------------------------------

TrajDiffusionModel::TrajDiffusionModel(Normalizer normalizer, const DiffusionConfig& config, Rng& rng)
    : normalizer_(std::move(normalizer)),
      schedule_(NoiseSchedule::linear(config.steps, config.beta_start, config.beta_end)) {
  const auto& l = layout();
  std::vector<int> widths{l.window_dim() + kTimeEmbeddingDim + l.condition_dim()};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(l.window_dim());
  denoiser_ = Mlp(widths, Activation::kRelu, rng);
  optimizer_ = Adam(denoiser_, AdamConfig{.learning_rate = config.learning_rate});
}

Eigen::MatrixXd TrajDiffusionModel::denoiser_input(const Eigen::MatrixXd& noised, const std::vector<int>& steps,
                                                   const Eigen::MatrixXd& cond) const {
  const auto& l = layout();
  const Eigen::Index batch = noised.cols();
  if (noised.rows() != l.window_dim() || cond.rows() != l.condition_dim() || cond.cols() != batch ||
      static_cast<Eigen::Index>(steps.size()) != batch)
    throw ShapeError("denoiser input shapes do not match the model layout");
  Eigen::MatrixXd in(l.window_dim() + kTimeEmbeddingDim + l.condition_dim(), batch);
  in.topRows(l.window_dim()) = noised;
  for (Eigen::Index c = 0; c < batch; ++c)
    in.block(l.window_dim(), c, kTimeEmbeddingDim, 1) = time_embedding(steps[static_cast<std::size_t>(c)], schedule_.steps());
  in.bottomRows(l.condition_dim()) = cond;
  return in;
}

Eigen::MatrixXd TrajDiffusionModel::predict_noise(const Eigen::MatrixXd& noised, const std::vector<int>& steps,
                                                  const Eigen::MatrixXd& cond) const {
  return denoiser_.forward_batch(denoiser_input(noised, steps, cond));
}

void TrajDiffusionModel::check_batch(const NormalizedBatch& batch) const {
  if (batch.size() == 0) throw std::invalid_argument("empty training batch");
  if (batch.fingerprint != normalizer_.fingerprint())
    throw std::invalid_argument("batch was not normalized with this model's statistics");
  if (batch.x0.rows() != layout().window_dim() || batch.cond.rows() != layout().condition_dim() ||
      batch.cond.cols() != batch.x0.cols())
    throw ShapeError("training batch shape does not match the model layout");
}

double TrajDiffusionModel::train_step(const NormalizedBatch& batch, Rng& rng) {
  check_batch(batch);
  const NoisingDraw d = draw_noising(schedule_, batch.x0, rng);
  Mlp::Tape tape;
  const Eigen::MatrixXd pred = denoiser_.forward_batch(denoiser_input(d.noised, d.steps, batch.cond), &tape);
  const Eigen::MatrixXd diff = pred - d.noise;
  const double n = static_cast<double>(batch.size());
  const double loss = diff.squaredNorm() / n;
  optimizer_.step(denoiser_, denoiser_.backward(tape, (2.0 / n) * diff));
  return loss;
}

TrajWindow TrajDiffusionModel::sample(const WindowCondition& condition, Rng& rng) const {
  return sample_batch({condition}, rng).front();
}

std::vector<TrajWindow> TrajDiffusionModel::sample_batch(const std::vector<WindowCondition>& conditions,
                                                         Rng& rng) const {
  const auto& l = layout();
  const auto batch = static_cast<Eigen::Index>(conditions.size());
  if (batch == 0) return {};
  Eigen::MatrixXd cond(l.condition_dim(), batch);
  for (Eigen::Index c = 0; c < batch; ++c) {
    if (conditions[static_cast<std::size_t>(c)].initial_state.size() != l.state_dim)
      throw ShapeError("condition state dimension does not match the model");
    cond.col(c) = normalizer_.condition_vector(conditions[static_cast<std::size_t>(c)]);
  }
  Eigen::MatrixXd x = rng.normal_matrix(l.window_dim(), batch);
  std::vector<int> steps(static_cast<std::size_t>(batch));
  for (int i = schedule_.steps(); i >= 1; --i) {
    std::fill(steps.begin(), steps.end(), i);
    const Eigen::MatrixXd eps = predict_noise(x, steps, cond);
    const double coef = schedule_.beta(i) / std::sqrt(1.0 - schedule_.alpha_bar(i));
    x = (x - coef * eps) / std::sqrt(schedule_.alpha(i));
    if (i > 1) x += std::sqrt(schedule_.beta(i)) * rng.normal_matrix(l.window_dim(), batch);
    if (!x.allFinite())
      throw GenerationError("non-finite value in reverse diffusion at step " + std::to_string(i));
  }
  std::vector<TrajWindow> out;
  out.reserve(conditions.size());
  for (Eigen::Index c = 0; c < batch; ++c) {
    TrajWindow w;
    w.condition = conditions[static_cast<std::size_t>(c)];
    w.flat = normalizer_.denormalize(x.col(c));
    w.flat.segment(l.state_offset(0), l.state_dim) = w.condition.initial_state;
    for (int j = 0; j < l.length; ++j) {
      auto act = w.flat.segment(l.action_offset(j), l.action_count);
      Eigen::Index best = 0;
      act.maxCoeff(&best);
      act.setZero();
      act[best] = 1.0;
      double& r = w.flat[l.reward_offset(j)];
      r = std::clamp(r, 0.0, 1.0);
    }
    out.push_back(std::move(w));
  }
  return out;
}

Bytes TrajDiffusionModel::serialize() const {
  ByteWriter w;
  w.header("DIFM");
  const auto& l = layout();
  w.u32(static_cast<std::uint32_t>(l.length));
  w.u32(static_cast<std::uint32_t>(l.state_dim));
  w.u32(static_cast<std::uint32_t>(l.action_count));
  w.u32(static_cast<std::uint32_t>(l.task_count));
  const auto betas = schedule_.betas();
  w.u32(static_cast<std::uint32_t>(betas.size()));
  for (double b : betas) w.f64(b);
  w.vec(normalizer_.state_mean());
  w.vec(normalizer_.state_std());
  w.f64(optimizer_.config().learning_rate);
  w.blob(denoiser_.serialize());
  return w.take();
}

TrajDiffusionModel TrajDiffusionModel::deserialize(const Bytes& bytes) {
  ByteReader r(bytes);
  r.header("DIFM");
  WindowLayout l;
  l.length = static_cast<int>(r.u32());
  l.state_dim = static_cast<int>(r.u32());
  l.action_count = static_cast<int>(r.u32());
  l.task_count = static_cast<int>(r.u32());
  if (l.length < 1 || l.state_dim < 1 || l.action_count < 1 || l.task_count < 1)
    throw FormatError("invalid window layout in model checkpoint");
  const std::uint32_t n = r.u32();
  std::vector<double> betas(n);
  for (auto& b : betas) b = r.f64();
  Eigen::VectorXd mean = r.vec();
  Eigen::VectorXd stdv = r.vec();
  const double lr = r.f64();
  TrajDiffusionModel m;
  m.normalizer_ = Normalizer(l, std::move(mean), std::move(stdv));
  m.schedule_ = NoiseSchedule(std::move(betas));
  m.denoiser_ = Mlp::deserialize(r.blob());
  r.expect_done();
  if (m.denoiser_.input_width() != l.window_dim() + kTimeEmbeddingDim + l.condition_dim() ||
      m.denoiser_.output_width() != l.window_dim())
    throw FormatError("denoiser widths do not match the window layout");
  m.optimizer_ = Adam(m.denoiser_, AdamConfig{.learning_rate = lr});
  return m;
}

}  // namespace atradiff
