#include "atradiff/bank.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <string>
#include <thread>

namespace atradiff {

// -- Preprocessing ------------------------------------------------------------

TrajWindow padded_window(const Trajectory& traj, const WindowLayout& layout, int start) {
  const int t = traj.length();
  if (start < 0 || start >= t) throw std::out_of_range("window start outside trajectory");
  std::vector<State> states;
  std::vector<int> actions;
  std::vector<double> rewards;
  for (int j = 0; j < layout.length; ++j) {
    const int pos = start + j;
    const auto src = static_cast<std::size_t>(std::min(pos, t - 1));
    states.push_back(traj.states[src]);
    actions.push_back(traj.actions[src]);
    rewards.push_back(pos < t ? traj.rewards[src] : 0.0);
  }
  return make_window(layout, states, actions, rewards, traj.task);
}

std::vector<TrajWindow> pad_and_slice(const Trajectory& traj, const WindowLayout& layout) {
  if (layout.length < 1) throw std::invalid_argument("window length must be >= 1");
  traj.validate();
  std::vector<TrajWindow> out;
  out.reserve(static_cast<std::size_t>(traj.length()));
  for (int start = 0; start < traj.length(); ++start) out.push_back(padded_window(traj, layout, start));
  return out;
}

int round_up_to_preset(std::span<const int> presets, double raw_length) {
  if (presets.empty()) throw std::invalid_argument("no preset lengths");
  for (int k : presets)
    if (static_cast<double>(k) >= raw_length) return k;
  return presets.back();
}

// -- Pruning ------------------------------------------------------------------

double similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() == 0) throw std::invalid_argument("similarity needs equal, nonzero dims");
  return std::exp(-(a - b).norm() / static_cast<double>(a.size()));
}

int prune_similarities(std::span<const double> sims, double epsilon) {
  const int k = static_cast<int>(sims.size()) + 1;
  if (k < 3) return k;
  // prefix[m] = sim_1 + ... + sim_m
  std::vector<double> prefix(static_cast<std::size_t>(k), 0.0);
  for (int m = 1; m < k; ++m) prefix[static_cast<std::size_t>(m)] = prefix[static_cast<std::size_t>(m - 1)] + sims[static_cast<std::size_t>(m - 1)];
  std::vector<double> gap(static_cast<std::size_t>(k), 0.0);
  double best = -1.0;
  for (int i = 2; i < k; ++i) {
    const double pre = prefix[static_cast<std::size_t>(i)] / i;
    // sum_{j=i}^{k} sim(s_{j-1}, s_j) = sim_{i-1} + ... + sim_{k-1}
    const double suf = (prefix[static_cast<std::size_t>(k - 1)] - prefix[static_cast<std::size_t>(i - 2)]) / (k - i + 1);
    gap[static_cast<std::size_t>(i)] = std::abs(pre - suf);
    best = std::max(best, gap[static_cast<std::size_t>(i)]);
  }
  if (best < epsilon) return k;
  for (int i = k - 1; i >= 2; --i)
    if (gap[static_cast<std::size_t>(i)] >= best - kPruneTieTolerance) return i;
  return k;
}

int prune(const std::vector<Eigen::VectorXd>& states, double epsilon) {
  const int k = static_cast<int>(states.size());
  if (k < 3) return k;
  std::vector<double> sims;
  sims.reserve(static_cast<std::size_t>(k - 1));
  for (int j = 0; j + 1 < k; ++j)
    sims.push_back(similarity(states[static_cast<std::size_t>(j)], states[static_cast<std::size_t>(j + 1)]));
  return prune_similarities(sims, epsilon);
}

// -- LengthEstimator ----------------------------------------------------------

LengthEstimator::LengthEstimator(int state_dim, int task_count, Eigen::VectorXd state_mean,
                                 Eigen::VectorXd state_std, double target_scale, const Config& config, Rng& rng)
    : state_dim_(state_dim),
      task_count_(task_count),
      state_mean_(std::move(state_mean)),
      state_std_(std::move(state_std)),
      target_scale_(target_scale) {
  if (state_mean_.size() != state_dim_ || state_std_.size() != state_dim_)
    throw ShapeError("estimator statistics do not match the state dimension");
  if (!(target_scale_ > 0.0)) throw std::invalid_argument("target scale must be positive");
  state_std_ = state_std_.cwiseMax(Normalizer::kStdFloor);
  std::vector<int> widths{state_dim_ + (task_count_ > 1 ? task_count_ : 0)};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(1);
  net_ = Mlp(widths, Activation::kRelu, rng);
  optimizer_ = Adam(net_, AdamConfig{.learning_rate = config.learning_rate});
}

LengthEstimator LengthEstimator::create(std::span<const Trajectory> data, int state_dim, int task_count,
                                        const Config& config, Rng& rng) {
  if (data.empty()) throw std::invalid_argument("length estimator needs data");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(state_dim);
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(state_dim);
  double n = 0.0;
  int longest = 1;
  for (const auto& traj : data) {
    for (const auto& s : traj.states) {
      sum += s;
      sq += s.cwiseAbs2();
      n += 1.0;
    }
    longest = std::max(longest, traj.length());
  }
  const Eigen::VectorXd mean = sum / n;
  const Eigen::VectorXd var = (sq / n - mean.cwiseAbs2()).cwiseMax(0.0);
  return LengthEstimator(state_dim, task_count, mean, var.cwiseSqrt(), longest, config, rng);
}

Eigen::VectorXd LengthEstimator::input(const State& state, int task) const {
  if (state.size() != state_dim_) throw ShapeError("estimator state dimension mismatch");
  Eigen::VectorXd x = Eigen::VectorXd::Zero(net_.input_width());
  x.head(state_dim_) = (state - state_mean_).cwiseQuotient(state_std_);
  if (task_count_ > 1 && task >= 0 && task < task_count_) x[state_dim_ + task] = 1.0;
  return x;
}

double LengthEstimator::predict(const State& state, int task) const {
  return std::max(1.0, net_.forward(input(state, task))[0] * target_scale_);
}

LengthEstimator::Corpus LengthEstimator::corpus(std::span<const Trajectory> data) const {
  std::vector<std::pair<State, int>> inputs;
  std::vector<double> remaining;
  for (const auto& traj : data)
    for (int j = 0; j < traj.length(); ++j) {
      inputs.emplace_back(traj.states[static_cast<std::size_t>(j)], traj.task);
      remaining.push_back(traj.length() - j);
    }
  return corpus(inputs, remaining);
}

LengthEstimator::Corpus LengthEstimator::corpus(const std::vector<std::pair<State, int>>& inputs,
                                                const std::vector<double>& remaining) const {
  if (inputs.size() != remaining.size()) throw ShapeError("estimator corpus sizes differ");
  Corpus c;
  const auto n = static_cast<Eigen::Index>(inputs.size());
  c.inputs.resize(net_.input_width(), n);
  c.targets.resize(1, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    c.inputs.col(i) = input(inputs[static_cast<std::size_t>(i)].first, inputs[static_cast<std::size_t>(i)].second);
    c.targets(0, i) = remaining[static_cast<std::size_t>(i)] / target_scale_;
  }
  return c;
}

std::vector<double> LengthEstimator::train(const Corpus& corpus, int steps, int batch_size, Rng& rng) {
  std::vector<double> losses;
  const Eigen::Index n = corpus.inputs.cols();
  if (n == 0 || steps <= 0) return losses;
  losses.reserve(static_cast<std::size_t>(steps));
  Eigen::MatrixXd x(corpus.inputs.rows(), batch_size);
  Eigen::MatrixXd y(1, batch_size);
  for (int s = 0; s < steps; ++s) {
    for (int b = 0; b < batch_size; ++b) {
      const auto idx = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)));
      x.col(b) = corpus.inputs.col(idx);
      y(0, b) = corpus.targets(0, idx);
    }
    auto res = mse_gradients(net_, x, y);
    optimizer_.step(net_, res.grads);
    losses.push_back(res.loss);
  }
  return losses;
}

Bytes LengthEstimator::serialize() const {
  ByteWriter w;
  w.header("LEST");
  w.u32(static_cast<std::uint32_t>(state_dim_));
  w.u32(static_cast<std::uint32_t>(task_count_));
  w.vec(state_mean_);
  w.vec(state_std_);
  w.f64(target_scale_);
  w.f64(optimizer_.config().learning_rate);
  w.blob(net_.serialize());
  return w.take();
}

LengthEstimator LengthEstimator::deserialize(const Bytes& bytes) {
  ByteReader r(bytes);
  r.header("LEST");
  LengthEstimator e;
  e.state_dim_ = static_cast<int>(r.u32());
  e.task_count_ = static_cast<int>(r.u32());
  e.state_mean_ = r.vec();
  e.state_std_ = r.vec();
  e.target_scale_ = r.f64();
  const double lr = r.f64();
  e.net_ = Mlp::deserialize(r.blob());
  r.expect_done();
  if (e.state_mean_.size() != e.state_dim_ || e.state_std_.size() != e.state_dim_ ||
      e.net_.input_width() != e.state_dim_ + (e.task_count_ > 1 ? e.task_count_ : 0) || e.net_.output_width() != 1)
    throw FormatError("length estimator checkpoint is inconsistent");
  e.optimizer_ = Adam(e.net_, AdamConfig{.learning_rate = lr});
  return e;
}

// -- Training -----------------------------------------------------------------

std::vector<double> train_diffusion(TrajDiffusionModel& model, const NormalizedBatch& corpus, int steps,
                                    int batch_size, Rng& rng) {
  std::vector<double> losses;
  if (corpus.size() == 0 || steps <= 0) return losses;
  losses.reserve(static_cast<std::size_t>(steps));
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(batch_size));
  for (int s = 0; s < steps; ++s) {
    for (auto& i : idx) i = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(corpus.size())));
    losses.push_back(model.train_step(corpus.columns(idx), rng));
  }
  return losses;
}

// -- DiffuserBank -------------------------------------------------------------

DiffuserBank::DiffuserBank(std::vector<int> presets, BankModels models, const BankConfig& config)
    : presets_(std::move(presets)),
      adapted_(std::move(models)),
      prune_epsilon_(config.prune_epsilon),
      binary_rewards_(config.binary_rewards) {
  if (presets_.empty()) throw std::invalid_argument("bank needs at least one preset length");
  for (std::size_t i = 0; i < presets_.size(); ++i) {
    if (presets_[i] < 1) throw std::invalid_argument("preset lengths must be positive");
    if (i > 0 && presets_[i] <= presets_[i - 1]) throw std::invalid_argument("preset lengths must increase");
  }
  if (adapted_.models.size() != presets_.size()) throw std::invalid_argument("one model per preset required");
  for (std::size_t i = 0; i < presets_.size(); ++i)
    if (adapted_.models[i].length() != presets_[i]) throw std::invalid_argument("model length differs from preset");
  set_p_orig(config.p_orig);
}

void DiffuserBank::set_p_orig(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("p_orig must lie in [0, 1]");
  p_orig_ = p;
}

void DiffuserBank::freeze() { original_ = std::make_shared<const BankModels>(adapted_); }

std::size_t DiffuserBank::preset_index(int k) const {
  const auto it = std::find(presets_.begin(), presets_.end(), k);
  return static_cast<std::size_t>(it - presets_.begin());
}

int DiffuserBank::estimate_length(const State& state, int task) const { return estimate_length(adapted_, state, task); }

int DiffuserBank::estimate_length(const BankModels& models, const State& state, int task) const {
  return round_up_to_preset(presets_, models.estimator.predict(state, task));
}

GeneratedTrajectory DiffuserBank::finish_window(const TrajDiffusionModel& model, const TrajWindow& window,
                                                int task) const {
  const auto& layout = model.layout();
  const DecodedWindow d = decode_window(layout, window.flat);
  std::vector<Eigen::VectorXd> scaled;
  scaled.reserve(d.states.size());
  for (const auto& s : d.states) scaled.push_back(model.normalizer().normalize_state(s));
  const int l = prune(scaled, prune_epsilon_);
  GeneratedTrajectory g;
  g.window_length = layout.length;
  g.pruned = l < layout.length;
  Trajectory& traj = g.trajectory;
  traj.task = task;
  for (int j = 0; j < l; ++j) {
    traj.states.push_back(d.states[static_cast<std::size_t>(j)]);
    traj.actions.push_back(d.actions[static_cast<std::size_t>(j)]);
    double r = d.rewards[static_cast<std::size_t>(j)];
    if (binary_rewards_) r = r >= 0.5 ? 1.0 : 0.0;
    traj.rewards.push_back(r);
    traj.dones.push_back(0);
  }
  return g;
}

GeneratedTrajectory DiffuserBank::generate(const State& initial_state, int task, Rng& rng) const {
  // The coin is always drawn so the stream does not depend on whether a
  // frozen copy exists.
  const bool use_original = rng.uniform() < p_orig_ && original_ != nullptr;
  const BankModels& models = use_original ? *original_ : adapted_;
  const int k = estimate_length(models, initial_state, task);
  const TrajDiffusionModel& model = models.models[preset_index(k)];
  const TrajWindow window = model.sample({initial_state, task}, rng);
  GeneratedTrajectory g = finish_window(model, window, task);
  g.from_original = use_original;
  return g;
}

Bytes DiffuserBank::serialize_models(const BankModels& models) {
  ByteWriter w;
  w.header("BMOD");
  w.u32(static_cast<std::uint32_t>(models.models.size()));
  for (const auto& m : models.models) w.blob(m.serialize());
  w.blob(models.estimator.serialize());
  return w.take();
}

BankModels DiffuserBank::deserialize_models(const Bytes& bytes) {
  ByteReader r(bytes);
  r.header("BMOD");
  BankModels out;
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) out.models.push_back(TrajDiffusionModel::deserialize(r.blob()));
  out.estimator = LengthEstimator::deserialize(r.blob());
  r.expect_done();
  return out;
}

Bytes DiffuserBank::serialize() const {
  ByteWriter w;
  w.header("BANK");
  w.u32(static_cast<std::uint32_t>(presets_.size()));
  for (int k : presets_) w.u32(static_cast<std::uint32_t>(k));
  w.f64(p_orig_);
  w.f64(prune_epsilon_);
  w.u8(binary_rewards_ ? 1 : 0);
  w.blob(serialize_models(adapted_));
  w.u8(original_ ? 1 : 0);
  if (original_) w.blob(serialize_models(*original_));
  return w.take();
}

DiffuserBank DiffuserBank::deserialize(const Bytes& bytes) {
  ByteReader r(bytes);
  r.header("BANK");
  std::vector<int> presets(r.u32());
  for (auto& k : presets) k = static_cast<int>(r.u32());
  BankConfig cfg;
  cfg.p_orig = r.f64();
  cfg.prune_epsilon = r.f64();
  cfg.binary_rewards = r.u8() != 0;
  DiffuserBank bank(std::move(presets), deserialize_models(r.blob()), cfg);
  if (r.u8() != 0) bank.original_ = std::make_shared<const BankModels>(deserialize_models(r.blob()));
  r.expect_done();
  return bank;
}

DiffuserBank train_bank(std::span<const Trajectory> data, const EnvSpec& env, const BankConfig& config, Rng& rng,
                        BankTrainingReport* report) {
  if (data.empty()) throw std::invalid_argument("train_bank needs a nonempty offline dataset");
  const std::size_t m = config.presets.size();
  std::vector<TrajDiffusionModel> models(m);
  std::vector<std::vector<double>> losses(m);
  auto train_one = [&](std::size_t i) {
    Rng model_rng = rng.child(100 + i);
    WindowLayout layout{config.presets[i], env.state_dim, env.action_count, env.task_count};
    std::vector<TrajWindow> corpus;
    for (const auto& traj : data) {
      auto w = pad_and_slice(traj, layout);
      corpus.insert(corpus.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
    }
    Normalizer norm = Normalizer::fit(layout, corpus);
    models[i] = TrajDiffusionModel(norm, config.diffusion, model_rng);
    const NormalizedBatch batch = normalize_batch(models[i].normalizer(), corpus);
    losses[i] = train_diffusion(models[i], batch, config.diffusion.train_steps, config.diffusion.batch_size, model_rng);
  };
  const int threads = std::clamp(config.threads, 1, static_cast<int>(m));
  if (threads == 1) {
    for (std::size_t i = 0; i < m; ++i) train_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(m);
    {
      std::vector<std::jthread> pool;
      for (int t = 0; t < threads; ++t)
        pool.emplace_back([&] {
          for (std::size_t i = next++; i < m; i = next++) {
            try {
              train_one(i);
            } catch (...) {
              errors[i] = std::current_exception();
            }
          }
        });
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  Rng est_rng = rng.child(99);
  LengthEstimator estimator = LengthEstimator::create(data, env.state_dim, env.task_count, config.estimator, est_rng);
  auto est_losses = estimator.train(estimator.corpus(data), config.estimator.train_steps, config.estimator.batch_size, est_rng);

  DiffuserBank bank(config.presets, BankModels{std::move(models), std::move(estimator)}, config);
  bank.freeze();
  if (report) {
    report->model_losses = std::move(losses);
    report->estimator_losses = std::move(est_losses);
  }
  return bank;
}

}  // namespace atradiff
