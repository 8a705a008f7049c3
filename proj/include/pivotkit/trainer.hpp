#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pivotkit/corpus.hpp"
#include "pivotkit/encoder.hpp"
#include "pivotkit/error.hpp"
#include "pivotkit/injection.hpp"
#include "pivotkit/kg.hpp"
#include "pivotkit/pivot_bank.hpp"

namespace pivotkit {

enum class OptimizerKind { Adam, Sgd };

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "sgd") return OptimizerKind::Sgd;
  throw Error("unknown optimizer '" + std::string(s) + "' (adam|sgd)");
}

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

enum class PivotRefresh { PerEpoch, EveryNSteps, Disabled };

inline std::string to_string(PivotRefresh r) {
  switch (r) {
    case PivotRefresh::PerEpoch: return "epoch";
    case PivotRefresh::EveryNSteps: return "steps";
    case PivotRefresh::Disabled: return "off";
  }
  return "epoch";
}

inline PivotRefresh parse_pivot_refresh(std::string_view s) {
  if (s == "epoch") return PivotRefresh::PerEpoch;
  if (s == "steps") return PivotRefresh::EveryNSteps;
  if (s == "off") return PivotRefresh::Disabled;
  throw Error("unknown pivot refresh policy '" + std::string(s) + "' (epoch|steps|off)");
}

struct TrainConfig {
  std::size_t batch_size = 32;
  /// Peak step size. Linear warmup over the first `warmup` fraction of
  /// parameter updates, then linear decay to zero.
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double warmup = 0.1;
  std::size_t epochs = 3;
  std::size_t k = 500;
  double pseudo_threshold = kDefaultPseudoThreshold;
  bool pseudo_labeling = true;
  /// 1 - alpha of the memory-bank update.
  double bank_lr = 2e-4;
  std::size_t classifier_update_period = 8;
  PivotRefresh pivot_refresh = PivotRefresh::PerEpoch;
  std::size_t refresh_every = 10;
  bool scl = false;
  double scl_lambda = 0.25;
  double scl_warmup = 0.1;
  std::size_t max_facts = kDefaultMaxFacts;
  std::size_t max_seq_len = kDefaultMaxSeqLen;
  std::uint64_t seed = 1;
  EncoderConfig encoder;  // vocab_size is filled from the vocabulary

  void validate() const {
    auto rate = [](double v, const char* name) {
      if (!(v > 0.0 && v <= 1.0)) throw Error(std::string(name) + " must lie in (0, 1]");
    };
    rate(warmup, "warmup");
    rate(bank_lr, "bank_lr");
    rate(scl_warmup, "scl_warmup");
    if (!(lr > 0.0)) throw Error("lr must be positive");
    if (batch_size < 1) throw Error("batch_size must be at least 1");
    if (classifier_update_period < 1) throw Error("classifier_update_period must be at least 1");
    if (refresh_every < 1) throw Error("refresh_every must be at least 1");
    if (max_seq_len < 2) throw Error("max_seq_len must be at least 2");
    if (scl && !(scl_lambda > 0.0)) throw Error("scl_lambda must be positive when SCL is on");
  }
};

/// Training inputs, already split.
struct TrainData {
  std::vector<Document> labeled;
  std::vector<Document> dev;
  std::vector<Document> source_unlabeled;
  std::vector<Document> target_unlabeled;
};

/// Params, banks and pivots captured together at the best dev epoch.
struct ModelSnapshot {
  ModelParams params;
  MemoryBank bank_source;
  MemoryBank bank_target;
  PivotSet pivots;
  std::size_t epoch = 0;
  double dev_accuracy = 0.0;
};

struct TrainState {
  std::size_t step = 0;
  std::size_t epoch = 0;
  ModelParams params;
  MemoryBank bank_source{};
  MemoryBank bank_target{};
  PivotSet pivots{};
  PivotSet initial_pivots{};
  double best_dev_accuracy = -1.0;
  std::optional<ModelSnapshot> best{};
  std::vector<nlohmann::json> metrics{};
  std::vector<double> accum_grad{};
  std::size_t accum_count = 0;
  std::size_t updates = 0;
  std::size_t schedule_steps = 0;  // total steps of the run; 0 = constant lr
};

struct StepStats {
  LossBreakdown loss;
  double scl_lambda = 0.0;
  std::size_t accepted_source = 0;
  std::size_t accepted_target = 0;
  std::size_t bank_updates = 0;
  bool params_updated = false;
};

// ---------------------------------------------------------------------------
// Input preparation shared by training, evaluation and the CLI.

struct InjectionSettings {
  std::size_t max_facts = kDefaultMaxFacts;
  std::size_t max_seq_len = kDefaultMaxSeqLen;
};

/// Document tokens truncated to fit [CLS] + trunk, injected and flattened.
inline FlattenedInput prepare_document(const Document& doc, const KnowledgeGraph& kg,
                                       const PivotSet& pivots, const InjectionSettings& s) {
  auto trunk = doc.tokens();
  if (trunk.size() + 1 > s.max_seq_len) trunk.resize(s.max_seq_len - 1);
  return flatten(inject(trunk, kg, pivots, s.max_facts), {s.max_seq_len, doc.id});
}

/// Replaces trunk pivots with [MASK]; masked targets are the original ids.
/// Returns nullopt when no in-vocabulary pivot occurs in the trunk.
inline std::optional<TrainingExample> mask_pivots(const FlattenedInput& flat,
                                                  const Vocabulary& vocab,
                                                  const PivotSet& pivots) {
  TrainingExample ex{encode_input(flat, vocab), std::nullopt, {}};
  for (std::size_t i = 1; i < flat.size(); ++i) {
    if (!flat.trunk_mask[i] || !pivots.contains(flat.tokens[i])) continue;
    const int id = vocab.id(flat.tokens[i]);
    if (id == Vocabulary::kUnk) continue;
    ex.masked.push_back({i, id});
    ex.input.ids[i] = Vocabulary::kMask;
  }
  if (ex.masked.empty()) return std::nullopt;
  return ex;
}

/// Masked-word cross-entropy over the trunk pivots of the given inputs;
/// 0 when none contains a pivot.
inline double scl_loss(const ModelParams& params, std::span<const FlattenedInput> batch,
                       const Vocabulary& vocab, const PivotSet& pivots) {
  std::vector<TrainingExample> examples;
  for (const auto& f : batch)
    if (auto ex = mask_pivots(f, vocab, pivots)) examples.push_back(std::move(*ex));
  if (examples.empty()) return 0.0;
  return compute_loss(params, examples, {0.0, 1.0}).mlm;
}

/// Fraction of documents whose argmax class matches the gold label.
inline double evaluate(const ModelParams& params, std::span<const Document> docs,
                       const Vocabulary& vocab, const KnowledgeGraph& kg, const PivotSet& pivots,
                       const InjectionSettings& s) {
  if (docs.empty()) throw Error("cannot evaluate on an empty set");
  std::size_t correct = 0;
  for (const auto& d : docs) {
    if (!d.label) throw Error("document " + d.id + " has no label");
    const auto p = predict(params, encode_input(prepare_document(d, kg, pivots, s), vocab));
    const std::size_t cls = p.probs[1] > p.probs[0] ? 1 : 0;
    if (cls == class_index(*d.label)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(docs.size());
}

/// Short masked-word pretraining (Adam) on unlabeled text, used to give the builtin
/// attention provider non-random attention.
inline void pretrain_mlm(ModelParams& params, std::span<const Document> docs,
                         const Vocabulary& vocab, std::size_t steps, std::size_t batch_size,
                         double lr, std::uint64_t seed, std::size_t max_seq_len = kDefaultMaxSeqLen,
                         double mask_rate = 0.15) {
  if (docs.empty() || steps == 0) return;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  AdamOptimizer adam(params.size());
  for (std::size_t s = 0; s < steps; ++s) {
    std::vector<TrainingExample> batch;
    for (std::size_t b = 0; b < batch_size; ++b) {
      const auto& doc = docs[rng() % docs.size()];
      auto toks = doc.tokens();
      if (toks.empty()) continue;
      if (toks.size() + 1 > max_seq_len) toks.resize(max_seq_len - 1);
      std::vector<int> ids{Vocabulary::kCls};
      for (const auto& t : toks) ids.push_back(vocab.id(t));
      TrainingExample ex{EncodedInput::plain(ids), std::nullopt, {}};
      for (std::size_t i = 1; i < ids.size(); ++i)
        if (coin(rng) < mask_rate) ex.masked.push_back({i, ids[i]});
      if (ex.masked.empty()) ex.masked.push_back({1 + rng() % toks.size(), 0});
      if (ex.masked.back().target == 0) ex.masked.back().target = ids[ex.masked.back().position];
      for (const auto& m : ex.masked) ex.input.ids[m.position] = Vocabulary::kMask;
      batch.push_back(std::move(ex));
    }
    if (batch.empty()) continue;
    auto g = gradients(params, batch, {0.0, 1.0});
    adam.step(params, g.grad, lr);
  }
}

namespace detail {

/// Endless shuffled pass over one document stream.
class StreamCycler {
 public:
  StreamCycler(const std::vector<Document>& docs, std::uint64_t seed) : rng_(seed) {
    for (const auto& d : docs) order_.push_back(&d);
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  std::vector<const Document*> next(std::size_t n) {
    std::vector<const Document*> out;
    if (order_.empty()) return out;
    for (std::size_t i = 0; i < n; ++i) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<const Document*> order_;
  std::size_t pos_ = 0;
  std::mt19937_64 rng_;
};

}  // namespace detail

/// Owns the whole training state. Not thread-safe; one trainer per run.
class Trainer {
 public:
  Trainer(TrainConfig config, Vocabulary vocab, CandidatePool pool, KnowledgeGraph kg,
          TrainData data)
      : config_(std::move(config)),
        vocab_(std::move(vocab)),
        pool_(std::move(pool)),
        kg_(std::move(kg)),
        data_(std::move(data)),
        state_{.params = make_params()} {
    config_.validate();
    if (data_.labeled.empty()) throw Error("no labeled source documents to train on");
    const double alpha = 1.0 - config_.bank_lr;
    state_.bank_source = MemoryBank::from_labeled("source", alpha, pool_, data_.labeled);
    state_.bank_target = MemoryBank::from_labeled("target", alpha, pool_, data_.labeled);
    state_.pivots = select_pivots(pool_, state_.bank_source, state_.bank_target, config_.k, 0);
    state_.initial_pivots = state_.pivots;
    state_.accum_grad.assign(state_.params.size(), 0.0);
  }

  const TrainConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  const CandidatePool& pool() const { return pool_; }
  const KnowledgeGraph& kg() const { return kg_; }
  const TrainData& data() const { return data_; }
  const TrainState& state() const { return state_; }
  TrainState& state() { return state_; }

  InjectionSettings injection() const { return {config_.max_facts, config_.max_seq_len}; }

  FlattenedInput prepare(const Document& d) const {
    return prepare_document(d, kg_, state_.pivots, injection());
  }

  std::size_t steps_per_epoch() const {
    const std::size_t largest = std::max({data_.labeled.size(), data_.source_unlabeled.size(),
                                          data_.target_unlabeled.size()});
    return (largest + config_.batch_size - 1) / config_.batch_size;
  }

  /// One joint step over the three streams.
  StepStats train_step(std::span<const Document* const> labeled,
                       std::span<const Document* const> source_unlabeled,
                       std::span<const Document* const> target_unlabeled) {
    if (labeled.empty()) throw Error("train_step needs a non-empty labeled batch");
    StepStats stats;

    std::vector<TrainingExample> examples;
    for (const auto* d : labeled) {
      if (!d->label) throw Error("labeled batch contains unlabeled document " + d->id);
      examples.push_back({encode_input(prepare(*d), vocab_), class_index(*d->label), {}});
    }

    std::vector<FlattenedInput> src_flat, tgt_flat;
    for (const auto* d : source_unlabeled) src_flat.push_back(prepare(*d));
    for (const auto* d : target_unlabeled) tgt_flat.push_back(prepare(*d));

    LossSpec spec{1.0, 0.0};
    if (config_.scl) {
      stats.scl_lambda = scl_lambda_at(state_.step);
      spec.mlm_weight = stats.scl_lambda;
      for (const auto* group : {&src_flat, &tgt_flat})
        for (const auto& f : *group)
          if (auto ex = mask_pivots(f, vocab_, state_.pivots)) examples.push_back(std::move(*ex));
    }

    auto g = gradients(state_.params, examples, spec);
    stats.loss = g.loss;
    for (std::size_t i = 0; i < g.grad.size(); ++i) state_.accum_grad[i] += g.grad[i];
    ++state_.accum_count;

    // Pseudo labels come from the parameters before this step's update.
    std::vector<std::optional<Label>> src_labels(src_flat.size()), tgt_labels(tgt_flat.size());
    if (config_.pseudo_labeling) {
      for (std::size_t i = 0; i < src_flat.size(); ++i)
        src_labels[i] = pseudo_label(src_flat[i]);
      for (std::size_t i = 0; i < tgt_flat.size(); ++i)
        tgt_labels[i] = pseudo_label(tgt_flat[i]);
    }

    for (const auto* d : labeled) stats.bank_updates += update_bank(state_.bank_source, *d, *d->label);
    for (std::size_t i = 0; i < src_labels.size(); ++i) {
      if (!src_labels[i]) continue;
      ++stats.accepted_source;
      stats.bank_updates += update_bank(state_.bank_source, *source_unlabeled[i], *src_labels[i]);
    }
    for (std::size_t i = 0; i < tgt_labels.size(); ++i) {
      if (!tgt_labels[i]) continue;
      ++stats.accepted_target;
      stats.bank_updates += update_bank(state_.bank_target, *target_unlabeled[i], *tgt_labels[i]);
    }

    ++state_.step;
    if (state_.accum_count >= config_.classifier_update_period) {
      const double lr = lr_at(state_.updates);
      for (auto& v : state_.accum_grad) v /= static_cast<double>(state_.accum_count);
      if (config_.optimizer == OptimizerKind::Adam)
        adam_.step(state_.params, state_.accum_grad, lr);
      else
        apply_gradients(state_.params, state_.accum_grad, lr);
      std::fill(state_.accum_grad.begin(), state_.accum_grad.end(), 0.0);
      state_.accum_count = 0;
      ++state_.updates;
      stats.params_updated = true;
    }

    nlohmann::json rec{{"step", state_.step},
                       {"epoch", state_.epoch},
                       {"loss", g.loss.total},
                       {"cls_loss", g.loss.cls},
                       {"scl_loss", g.loss.mlm},
                       {"accepted_source", stats.accepted_source},
                       {"accepted_target", stats.accepted_target},
                       {"bank_updates", stats.bank_updates}};
    if (config_.pivot_refresh == PivotRefresh::EveryNSteps &&
        state_.step % config_.refresh_every == 0)
      rec["pivot_jaccard"] = refresh_pivots();
    state_.metrics.push_back(std::move(rec));
    return stats;
  }

  /// Reselects the top-K pivots from the current banks. Returns the Jaccard
  /// similarity to the previous set.
  double refresh_pivots() {
    auto next = select_pivots(pool_, state_.bank_source, state_.bank_target, config_.k,
                              static_cast<long>(state_.step));
    const double j = jaccard(state_.pivots, next);
    state_.pivots = std::move(next);
    return j;
  }

  double evaluate(std::span<const Document> docs) const {
    return pivotkit::evaluate(state_.params, docs, vocab_, kg_, state_.pivots, injection());
  }

  /// Full run: `epochs` passes over the largest stream, dev selection at
  /// every epoch end, pivots refreshed per the configured policy.
  void run() {
    const std::size_t per_epoch = steps_per_epoch();
    state_.schedule_steps = per_epoch * config_.epochs;
    detail::StreamCycler lab(data_.labeled, config_.seed * 3 + 1);
    detail::StreamCycler src(data_.source_unlabeled, config_.seed * 3 + 2);
    detail::StreamCycler tgt(data_.target_unlabeled, config_.seed * 3 + 3);
    for (std::size_t e = 0; e < config_.epochs; ++e) {
      state_.epoch = e;
      if (e > 0 && config_.pivot_refresh == PivotRefresh::PerEpoch) {
        const double j = refresh_pivots();
        state_.metrics.push_back({{"step", state_.step}, {"epoch", e}, {"pivot_jaccard", j}});
      }
      for (std::size_t s = 0; s < per_epoch; ++s) {
        const auto a = lab.next(config_.batch_size);
        const auto b = src.next(config_.batch_size);
        const auto c = tgt.next(config_.batch_size);
        train_step(a, b, c);
      }
      nlohmann::json rec{{"step", state_.step}, {"epoch", e}};
      if (!data_.dev.empty()) {
        const double acc = evaluate(data_.dev);
        rec["dev_accuracy"] = acc;
        if (acc > state_.best_dev_accuracy) {
          state_.best_dev_accuracy = acc;
          state_.best = ModelSnapshot{state_.params, state_.bank_source, state_.bank_target,
                                      state_.pivots, e, acc};
        }
      }
      state_.metrics.push_back(std::move(rec));
    }
    if (config_.pivot_refresh != PivotRefresh::Disabled) {
      const double j = refresh_pivots();
      state_.metrics.push_back(
          {{"step", state_.step}, {"epoch", config_.epochs}, {"pivot_jaccard", j}});
    }
  }

  double lr_at(std::size_t update) const {
    if (state_.schedule_steps == 0) return config_.lr;
    const double total = std::ceil(static_cast<double>(state_.schedule_steps) /
                                   static_cast<double>(config_.classifier_update_period));
    const double warm = std::max(1.0, std::floor(config_.warmup * total));
    const double u = static_cast<double>(update);
    if (u < warm) return config_.lr * (u + 1.0) / warm;
    if (total <= warm) return config_.lr;
    return config_.lr * std::max(0.0, (total - u) / (total - warm));
  }

  double scl_lambda_at(std::size_t step) const {
    if (state_.schedule_steps == 0) return config_.scl_lambda;
    const double warm =
        std::max(1.0, config_.scl_warmup * static_cast<double>(state_.schedule_steps));
    return config_.scl_lambda * std::min(1.0, (static_cast<double>(step) + 1.0) / warm);
  }

 private:
  ModelParams make_params() {
    EncoderConfig ec = config_.encoder;
    ec.vocab_size = vocab_.size();
    ec.max_soft_pos = std::max(ec.max_soft_pos, config_.max_seq_len + 3);
    config_.encoder = ec;
    return ModelParams::init_uniform(ec, config_.seed);
  }

  std::optional<Label> pseudo_label(const FlattenedInput& f) const {
    const auto p = predict(state_.params, encode_input(f, vocab_));
    return gate_pseudo_label(p.probs, config_.pseudo_threshold);
  }

  /// One TD update per pool word present in the document.
  std::size_t update_bank(MemoryBank& bank, const Document& d, Label label) const {
    std::size_t n = 0;
    for (const auto& w : d.token_set())
      if (bank.td_update(w, label)) ++n;
    return n;
  }

  TrainConfig config_;
  Vocabulary vocab_;
  CandidatePool pool_;
  KnowledgeGraph kg_;
  TrainData data_;
  TrainState state_;
  AdamOptimizer adam_{state_.params.size()};
};

inline void write_metrics(const std::filesystem::path& path,
                          const std::vector<nlohmann::json>& metrics) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write metrics log " + path.string());
  for (const auto& m : metrics) out << m.dump() << '\n';
}

}  // namespace pivotkit
