#include "atradiff/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "atradiff/log.hpp"
#include "atradiff/stats.hpp"
#include "json.hpp"

namespace atradiff {

double importance_td(const Transition& z, const QFunction& q, double gamma) {
  const double bootstrap = z.done ? 0.0 : gamma * q.q_values(z.s_next).maxCoeff();
  return std::abs(z.r + bootstrap - q.q_values(z.s)[z.a]);
}

std::vector<double> importance_td(const std::vector<const Transition*>& batch, const QFunction& q, double gamma) {
  std::vector<double> out(batch.size());
  if (batch.empty()) return out;
  const auto n = static_cast<Eigen::Index>(batch.size());
  const auto dim = batch.front()->s.size();
  Eigen::MatrixXd s(dim, n), s_next(dim, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    s.col(i) = batch[static_cast<std::size_t>(i)]->s;
    s_next.col(i) = batch[static_cast<std::size_t>(i)]->s_next;
  }
  const Eigen::MatrixXd qs = q.q_values_batch(s);
  const Eigen::MatrixXd qn = q.q_values_batch(s_next);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Transition& z = *batch[static_cast<std::size_t>(i)];
    const double bootstrap = z.done ? 0.0 : gamma * qn.col(i).maxCoeff();
    out[static_cast<std::size_t>(i)] = std::abs(z.r + bootstrap - qs(z.a, i));
  }
  return out;
}

double importance_reward(const Trajectory& traj) {
  if (traj.length() == 0) throw std::invalid_argument("reward importance of an empty trajectory");
  return traj.total_reward();
}

Indicator parse_indicator(const std::string& name) {
  if (name == "td_error" || name == "td") return Indicator::kTdError;
  if (name == "reward") return Indicator::kReward;
  throw std::invalid_argument("unknown indicator '" + name + "' (expected td_error or reward)");
}

std::string to_string(Indicator kind) { return kind == Indicator::kTdError ? "td_error" : "reward"; }

// -- Pool ---------------------------------------------------------------------

namespace {

bool better(const PoolEntry& a, const PoolEntry& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.sequence > b.sequence;
}

}  // namespace

ImportancePool::ImportancePool(const PoolConfig& config) : config_(config) {
  if (config_.capacity == 0) throw std::invalid_argument("pool capacity must be positive");
  if (!(config_.drop_fraction >= 0.0 && config_.drop_fraction <= 1.0))
    throw std::invalid_argument("drop fraction must lie in [0, 1]");
  if (config_.max_uses < 0) throw std::invalid_argument("max uses must be >= 0");
}

void ImportancePool::rebuild() { std::make_heap(entries_.begin(), entries_.end(), better); }

void ImportancePool::rescore(const QFunction& q) {
  std::vector<const Transition*> batch;
  batch.reserve(entries_.size());
  for (const auto& e : entries_) batch.push_back(&e.transition);
  const auto scores = importance_td(batch, q, config_.gamma);
  for (std::size_t i = 0; i < entries_.size(); ++i) entries_[i].score = scores[i];
}

void ImportancePool::pool_update(const std::vector<std::pair<Transition, double>>& items, const QFunction* q) {
  const bool td = config_.kind == Indicator::kTdError && q != nullptr;
  if (td) {
    for (const auto& [z, score] : items) {
      (void)score;
      entries_.push_back(PoolEntry{z, 0.0, next_sequence_++, 0});
    }
    rescore(*q);
    if (entries_.size() > config_.capacity) {
      std::nth_element(entries_.begin(), entries_.begin() + static_cast<std::ptrdiff_t>(config_.capacity),
                       entries_.end(), better);
      entries_.resize(config_.capacity);
    }
    rebuild();
    return;
  }
  for (const auto& [z, score] : items) {
    PoolEntry e{z, score, next_sequence_++, 0};
    if (entries_.size() < config_.capacity) {
      entries_.push_back(std::move(e));
      std::push_heap(entries_.begin(), entries_.end(), better);
    } else if (better(e, entries_.front())) {
      std::pop_heap(entries_.begin(), entries_.end(), better);
      entries_.back() = std::move(e);
      std::push_heap(entries_.begin(), entries_.end(), better);
    }
  }
}

void ImportancePool::add_episode(const Trajectory& traj, int episode, const QFunction* q) {
  const auto transitions = to_transitions(traj, episode);
  const double score = config_.kind == Indicator::kReward ? importance_reward(traj) : 0.0;
  std::vector<std::pair<Transition, double>> items;
  items.reserve(transitions.size());
  for (const auto& z : transitions) items.emplace_back(z, score);
  pool_update(items, q);
}

std::vector<std::size_t> ImportancePool::select_top(std::size_t m, const QFunction* q) {
  if (config_.kind == Indicator::kTdError && q != nullptr && !entries_.empty()) {
    rescore(*q);
    rebuild();
  }
  std::vector<std::size_t> idx(entries_.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const std::size_t take = std::min(m, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(),
                    [this](std::size_t a, std::size_t b) { return better(entries_[a], entries_[b]); });
  idx.resize(take);
  return idx;
}

void ImportancePool::mark_used(const std::vector<std::size_t>& indices) {
  for (std::size_t i : indices) ++entries_.at(i).uses;
}

std::size_t ImportancePool::after_adaptation(Rng& rng) {
  if (config_.kind != Indicator::kReward) return 0;
  const std::size_t before = entries_.size();
  std::vector<PoolEntry> kept;
  kept.reserve(before);
  for (auto& e : entries_) {
    // One coin per entry in heap order keeps the draw count fixed.
    const bool dropped = config_.drop_fraction > 0.0 && rng.bernoulli(config_.drop_fraction);
    const bool exhausted = config_.max_uses > 0 && e.uses >= config_.max_uses;
    if (!dropped && !exhausted) kept.push_back(std::move(e));
  }
  entries_ = std::move(kept);
  rebuild();
  return before - entries_.size();
}

// -- Episodes -----------------------------------------------------------------

void EpisodeLog::add(int episode, Trajectory traj) {
  traj.validate();
  episodes_[episode] = std::move(traj);
}

const Trajectory& EpisodeLog::at(int episode) const {
  const auto it = episodes_.find(episode);
  if (it == episodes_.end()) throw std::out_of_range("episode " + std::to_string(episode) + " not logged");
  return it->second;
}

// -- Adaptation ---------------------------------------------------------------

void AdaptConfig::validate(const PoolConfig& pool) const {
  if (period < 1) throw std::invalid_argument("adaptation period must be >= 1");
  if (selection > pool.capacity) throw std::invalid_argument("selection size exceeds pool capacity");
  if (selection == 0) throw std::invalid_argument("selection size must be positive");
  if (diffusion_steps < 0 || estimator_steps < 0) throw std::invalid_argument("fine-tune budgets must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("fine-tune batch size must be positive");
}

namespace {

double corpus_loss(const TrajDiffusionModel& model, const NormalizedBatch& corpus, int columns, Rng rng) {
  NormalizedBatch eval = corpus;
  if (corpus.size() > columns) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(columns));
    for (auto& i : idx) i = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(corpus.size())));
    eval = corpus.columns(idx);
  }
  auto predictor = [&model](const Eigen::MatrixXd& x, const std::vector<int>& steps, const Eigen::MatrixXd& c) {
    return model.predict_noise(x, steps, c);
  };
  return noise_prediction_loss(model.schedule(), eval, predictor, rng);
}

}  // namespace

AdaptReport adapt_step(DiffuserBank& bank, ImportancePool& pool, const EpisodeLog& episodes,
                       const AdaptConfig& config, const QFunction* q, Rng& rng) {
  config.validate(pool.config());
  AdaptReport report;
  report.pool_size = pool.size();
  if (pool.empty()) {
    log_warning("adaptation skipped: importance pool is empty");
    return report;
  }
  const auto chosen = pool.select_top(config.selection, q);
  std::vector<const Transition*> selected;
  std::vector<double> scores;
  for (std::size_t i : chosen) {
    const auto& e = pool.entries()[i];
    if (!episodes.contains(static_cast<int>(e.transition.episode))) continue;
    selected.push_back(&e.transition);
    scores.push_back(e.score);
  }
  report.selected = selected.size();
  if (selected.empty()) {
    log_warning("adaptation skipped: no selected entry has a logged episode");
    return report;
  }
  report.score_min = percentile(scores, 0);
  report.score_p25 = percentile(scores, 25);
  report.score_median = percentile(scores, 50);
  report.score_p75 = percentile(scores, 75);
  report.score_max = percentile(scores, 100);

  BankModels& models = bank.mutable_models();
  Rng eval_rng = rng.child(1);
  double before = 0.0, after = 0.0;
  for (std::size_t mi = 0; mi < models.models.size(); ++mi) {
    TrajDiffusionModel& model = models.models[mi];
    std::vector<TrajWindow> windows;
    windows.reserve(selected.size());
    for (const Transition* z : selected)
      windows.push_back(padded_window(episodes.at(static_cast<int>(z->episode)), model.layout(), static_cast<int>(z->step)));
    const NormalizedBatch corpus = normalize_batch(model.normalizer(), windows);
    Rng loss_rng = eval_rng.child(mi);
    before += corpus_loss(model, corpus, config.eval_columns, loss_rng);
    model.optimizer().set_learning_rate(config.learning_rate);
    Rng train_rng = rng.child(100 + mi);
    report.model_losses.push_back(train_diffusion(model, corpus, config.diffusion_steps, config.batch_size, train_rng));
    after += corpus_loss(model, corpus, config.eval_columns, loss_rng);
  }
  const auto count = static_cast<double>(models.models.size());
  report.loss_before = before / count;
  report.loss_after = after / count;

  if (config.estimator_steps > 0) {
    std::vector<std::pair<State, int>> inputs;
    std::vector<double> remaining;
    for (const Transition* z : selected) {
      const Trajectory& traj = episodes.at(static_cast<int>(z->episode));
      inputs.emplace_back(z->s, z->task);
      remaining.push_back(static_cast<double>(traj.length() - z->step));
    }
    models.estimator.set_learning_rate(config.learning_rate);
    Rng est_rng = rng.child(99);
    report.estimator_losses = models.estimator.train(models.estimator.corpus(inputs, remaining),
                                                     config.estimator_steps, config.batch_size, est_rng);
  }

  pool.mark_used(chosen);
  Rng drop_rng = rng.child(2);
  report.dropped = pool.after_adaptation(drop_rng);
  report.applied = true;
  return report;
}

void write_adapt_event(std::ostream& out, const AdaptReport& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["applied"] = r.applied;
  j["pool_size"] = r.pool_size;
  j["selected"] = r.selected;
  j["dropped"] = r.dropped;
  j["score_quantiles"] = {{"min", r.score_min}, {"p25", r.score_p25}, {"median", r.score_median},
                          {"p75", r.score_p75}, {"max", r.score_max}};
  j["loss_before"] = r.loss_before;
  j["loss_after"] = r.loss_after;
  out << j.dump() << '\n';
}

}  // namespace atradiff
