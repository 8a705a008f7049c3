#include <gtest/gtest.h>

#include <random>

#include "pivotkit/trainer.hpp"

using namespace pivotkit;

namespace {

const std::vector<std::string> kPositive{"great", "good", "lovely"};
const std::vector<std::string> kNegative{"bad", "awful", "boring"};
const std::vector<std::string> kFiller{"book", "movie", "plot", "story", "the"};

std::vector<Document> make_docs(const std::string& prefix, std::size_t n, std::uint64_t seed,
                                bool labeled) {
  std::mt19937_64 rng(seed);
  std::vector<Document> out;
  for (std::size_t i = 0; i < n; ++i) {
    const bool pos = i % 2 == 0;
    const auto& cue = pos ? kPositive : kNegative;
    std::string text = cue[rng() % cue.size()];
    for (int k = 0; k < 3; ++k) text += " " + kFiller[rng() % kFiller.size()];
    std::optional<Label> label;
    if (labeled) label = pos ? Label::Positive : Label::Negative;
    out.push_back(make_document(prefix + std::to_string(i), prefix, text, label));
  }
  return out;
}

Vocabulary test_vocab() {
  DomainCorpus c("all");
  std::string text;
  for (const auto* group : {&kPositive, &kNegative, &kFiller})
    for (const auto& w : *group) text += w + " ";
  c.add(make_document("v", "all", text, std::nullopt));
  return Vocabulary::build({&c});
}

CandidatePool test_pool() {
  CandidatePool pool;
  for (const auto* group : {&kPositive, &kNegative, &kFiller})
    pool.words.insert(pool.words.end(), group->begin(), group->end());
  std::sort(pool.words.begin(), pool.words.end());
  return pool;
}

KnowledgeGraph test_kg() {
  KnowledgeGraph kg(0.0);
  kg.add({{"great", "book", "story"}, 0, 0.8});
  kg.add({{"bad", "plot", "movie"}, 0, 0.6});
  kg.finalize();
  return kg;
}

TrainConfig small_config() {
  TrainConfig c;
  c.batch_size = 4;
  c.lr = 1e-2;
  c.epochs = 2;
  c.k = 3;
  c.bank_lr = 0.1;
  c.classifier_update_period = 1;
  c.max_seq_len = 16;
  c.encoder.embed_dim = 8;
  c.encoder.layers = 1;
  c.encoder.heads = 2;
  c.encoder.ffn_dim = 16;
  c.encoder.max_soft_pos = 20;
  return c;
}

TrainData small_data() {
  TrainData d;
  d.labeled = make_docs("src", 16, 1, true);
  d.dev = make_docs("dev", 8, 2, true);
  d.source_unlabeled = make_docs("srcu", 12, 3, false);
  d.target_unlabeled = make_docs("tgt", 12, 4, false);
  return d;
}

Trainer make_trainer(TrainConfig c = small_config(), TrainData d = small_data()) {
  return Trainer(std::move(c), test_vocab(), test_pool(), test_kg(), std::move(d));
}

std::vector<const Document*> ptrs(const std::vector<Document>& docs, std::size_t from,
                                  std::size_t n) {
  std::vector<const Document*> out;
  for (std::size_t i = from; i < from + n && i < docs.size(); ++i) out.push_back(&docs[i]);
  return out;
}

/// Independent replay of the bank update: each pool word present in the
/// document moves toward the label by a factor (1 - alpha).
void replay(std::map<std::string, double, std::less<>>& bank, const Document& d, Label l,
            double alpha) {
  std::set<std::string> seen;
  for (const auto& s : d.sentences)
    for (const auto& w : s) seen.insert(w);
  for (const auto& w : seen) {
    auto it = bank.find(w);
    if (it == bank.end()) continue;
    it->second = alpha * it->second + (1.0 - alpha) * (l == Label::Positive ? 1.0 : -1.0);
  }
}

}  // namespace

TEST(Trainer, InitialBanksAndPivots) {
  auto t = make_trainer();
  const auto& s = t.state();
  EXPECT_EQ(s.bank_source.size(), test_pool().size());
  EXPECT_DOUBLE_EQ(s.bank_source.score("great"), 1.0);
  EXPECT_DOUBLE_EQ(s.bank_source.score("awful"), -1.0);
  EXPECT_EQ(s.pivots.size(), 3u);
  EXPECT_TRUE(s.pivots.same_words(s.initial_pivots));
  for (const auto& w : s.pivots.words()) EXPECT_DOUBLE_EQ(behavior_score(w, s.bank_source, s.bank_target), 1.0);
}

TEST(Trainer, ImpossibleThresholdLeavesOnlyGroundTruthUpdates) {
  auto c = small_config();
  c.pseudo_threshold = 1.01;
  auto t = make_trainer(c);
  const auto& d = t.data();
  auto expect_src = t.state().bank_source.scores();
  const auto expect_tgt = t.state().bank_target.scores();
  for (std::size_t step = 0; step < 3; ++step) {
    const auto lab = ptrs(d.labeled, 4 * step, 4);
    const auto stats = t.train_step(lab, ptrs(d.source_unlabeled, 4 * step, 4),
                                    ptrs(d.target_unlabeled, 4 * step, 4));
    EXPECT_EQ(stats.accepted_source, 0u);
    EXPECT_EQ(stats.accepted_target, 0u);
    for (const auto* doc : lab) replay(expect_src, *doc, *doc->label, 0.9);
  }
  for (const auto& [w, v] : expect_src) EXPECT_DOUBLE_EQ(t.state().bank_source.score(w), v) << w;
  EXPECT_EQ(t.state().bank_target.scores(), expect_tgt);
}

TEST(Trainer, TwoStepReplayWithPseudoLabels) {
  auto c = small_config();
  c.pseudo_threshold = 0.5;  // every confident side is accepted
  auto t = make_trainer(c);
  const auto& d = t.data();
  auto src = t.state().bank_source.scores();
  auto tgt = t.state().bank_target.scores();
  const auto s = InjectionSettings{c.max_facts, c.max_seq_len};
  for (std::size_t step = 0; step < 2; ++step) {
    const auto lab = ptrs(d.labeled, 4 * step, 4);
    const auto su = ptrs(d.source_unlabeled, 4 * step, 4);
    const auto tu = ptrs(d.target_unlabeled, 4 * step, 4);
    // labels from the parameters before the step
    auto guess = [&](const Document& doc) {
      const auto p = predict(t.state().params,
                             encode_input(prepare_document(doc, t.kg(), t.state().pivots, s), t.vocab()));
      return p.probs[0] >= p.probs[1] ? Label::Positive : Label::Negative;
    };
    std::vector<Label> su_l, tu_l;
    for (const auto* doc : su) su_l.push_back(guess(*doc));
    for (const auto* doc : tu) tu_l.push_back(guess(*doc));
    const auto stats = t.train_step(lab, su, tu);
    EXPECT_EQ(stats.accepted_source, su.size());
    EXPECT_EQ(stats.accepted_target, tu.size());
    for (const auto* doc : lab) replay(src, *doc, *doc->label, 0.9);
    for (std::size_t i = 0; i < su.size(); ++i) replay(src, *su[i], su_l[i], 0.9);
    for (std::size_t i = 0; i < tu.size(); ++i) replay(tgt, *tu[i], tu_l[i], 0.9);
  }
  for (const auto& [w, v] : src) EXPECT_DOUBLE_EQ(t.state().bank_source.score(w), v) << w;
  for (const auto& [w, v] : tgt) EXPECT_DOUBLE_EQ(t.state().bank_target.score(w), v) << w;
}

TEST(Trainer, BankUpdateCountMatchesPoolHits) {
  auto c = small_config();
  c.pseudo_labeling = false;
  auto t = make_trainer(c);
  const auto lab = ptrs(t.data().labeled, 0, 4);
  std::size_t expected = 0;
  const auto pool = test_pool();
  for (const auto* doc : lab)
    for (const auto& w : doc->token_set()) expected += pool.contains(w);
  const auto stats = t.train_step(lab, ptrs(t.data().source_unlabeled, 0, 4), {});
  EXPECT_EQ(stats.bank_updates, expected);
  EXPECT_EQ(stats.accepted_source, 0u);
}

TEST(Trainer, PeriodOneUpdatesEveryStep) {
  auto t = make_trainer();
  const auto& d = t.data();
  for (std::size_t step = 0; step < 3; ++step) {
    const auto before = t.state().params;
    const auto stats = t.train_step(ptrs(d.labeled, 4 * step, 4), {}, {});
    EXPECT_TRUE(stats.params_updated);
    EXPECT_FALSE(t.state().params == before);
  }
  EXPECT_EQ(t.state().updates, 3u);
}

TEST(Trainer, LongerPeriodAccumulates) {
  auto c = small_config();
  c.classifier_update_period = 3;
  c.optimizer = OptimizerKind::Sgd;
  auto t = make_trainer(c);
  const auto& d = t.data();
  const auto start = t.state().params;

  // expected update: mean of the three batch gradients at the start params
  std::vector<double> mean(start.size(), 0.0);
  const auto s = InjectionSettings{c.max_facts, c.max_seq_len};
  for (std::size_t step = 0; step < 3; ++step) {
    std::vector<TrainingExample> ex;
    for (const auto* doc : ptrs(d.labeled, 4 * step, 4))
      ex.push_back({encode_input(prepare_document(*doc, t.kg(), t.state().pivots, s), t.vocab()),
                    class_index(*doc->label), {}});
    const auto g = gradients(start, ex, {1.0, 0.0});
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += g.grad[i] / 3.0;
  }

  for (std::size_t step = 0; step < 3; ++step) {
    const auto stats = t.train_step(ptrs(d.labeled, 4 * step, 4), {}, {});
    EXPECT_EQ(stats.params_updated, step == 2);
    if (step < 2) {
      EXPECT_TRUE(t.state().params == start);
    }
  }
  EXPECT_EQ(t.state().updates, 1u);
  auto expect = start;
  apply_gradients(expect, mean, c.lr);
  for (std::size_t i = 0; i < expect.size(); ++i)
    EXPECT_NEAR(t.state().params.values()[i], expect.values()[i], 1e-15);
}

TEST(Trainer, RefreshIsStableWhenBanksAreUnchanged) {
  auto t = make_trainer();
  const auto before = t.state().pivots;
  EXPECT_EQ(t.refresh_pivots(), 1.0);
  EXPECT_TRUE(t.state().pivots.same_words(before));
}

TEST(Trainer, RefreshPromotesAlignedWord) {
  auto t = make_trainer();
  ASSERT_FALSE(t.state().pivots.contains("plot"));
  for (const auto& w : test_pool().words) t.state().bank_target.set(w, 0.0);
  t.state().bank_source.set("plot", 1.0);
  t.state().bank_target.set("plot", 1.0);
  const double j = t.refresh_pivots();
  EXPECT_TRUE(t.state().pivots.contains("plot"));
  EXPECT_LT(j, 1.0);
}

TEST(Trainer, RefreshOffKeepsInitialPivots) {
  auto c = small_config();
  c.pivot_refresh = PivotRefresh::Disabled;
  auto t = make_trainer(c);
  t.run();
  EXPECT_TRUE(t.state().pivots.same_words(t.state().initial_pivots));
  for (const auto& m : t.state().metrics) EXPECT_FALSE(m.contains("pivot_jaccard"));
}

TEST(Trainer, StepRefreshLogsJaccard) {
  auto c = small_config();
  c.pivot_refresh = PivotRefresh::EveryNSteps;
  c.refresh_every = 2;
  auto t = make_trainer(c);
  t.run();
  std::size_t logged = 0;
  for (const auto& m : t.state().metrics)
    if (m.contains("pivot_jaccard") && m.contains("loss")) ++logged;
  EXPECT_EQ(logged, t.state().step / 2);
}

TEST(Trainer, RunIsBitReproducible) {
  auto a = make_trainer();
  auto b = make_trainer();
  a.run();
  b.run();
  EXPECT_TRUE(a.state().params == b.state().params);
  EXPECT_EQ(a.state().metrics, b.state().metrics);
  EXPECT_EQ(a.state().bank_target, b.state().bank_target);
  ASSERT_TRUE(a.state().best.has_value());
  EXPECT_EQ(a.state().best->dev_accuracy, a.state().best_dev_accuracy);
}

TEST(Trainer, MetricsRecordFields) {
  auto t = make_trainer();
  t.train_step(ptrs(t.data().labeled, 0, 4), ptrs(t.data().source_unlabeled, 0, 4),
               ptrs(t.data().target_unlabeled, 0, 4));
  const auto& m = t.state().metrics.back();
  for (const char* key : {"step", "epoch", "loss", "cls_loss", "scl_loss", "accepted_source",
                          "accepted_target", "bank_updates"})
    EXPECT_TRUE(m.contains(key)) << key;
  EXPECT_EQ(m["step"], 1);
}

TEST(Trainer, LearningRateSchedule) {
  auto c = small_config();
  c.lr = 0.5;
  c.warmup = 0.1;
  auto t = make_trainer(c);
  EXPECT_EQ(t.lr_at(7), 0.5);  // no schedule before run()
  t.state().schedule_steps = 100;
  EXPECT_DOUBLE_EQ(t.lr_at(0), 0.05);
  EXPECT_DOUBLE_EQ(t.lr_at(9), 0.5);
  EXPECT_DOUBLE_EQ(t.lr_at(10), 0.5);
  EXPECT_DOUBLE_EQ(t.lr_at(55), 0.25);
  EXPECT_DOUBLE_EQ(t.lr_at(100), 0.0);
  for (std::size_t u = 1; u < 100; ++u) EXPECT_LE(t.lr_at(u), 0.5);
}

TEST(Trainer, SclWeightWarmsUp) {
  auto c = small_config();
  c.scl = true;
  c.scl_lambda = 0.4;
  c.scl_warmup = 0.5;
  auto t = make_trainer(c);
  t.state().schedule_steps = 20;
  EXPECT_DOUBLE_EQ(t.scl_lambda_at(0), 0.04);
  EXPECT_DOUBLE_EQ(t.scl_lambda_at(9), 0.4);
  EXPECT_DOUBLE_EQ(t.scl_lambda_at(19), 0.4);
  const auto stats = t.train_step(ptrs(t.data().labeled, 0, 4), ptrs(t.data().source_unlabeled, 0, 4),
                                  ptrs(t.data().target_unlabeled, 0, 4));
  EXPECT_DOUBLE_EQ(stats.scl_lambda, 0.04);
  EXPECT_GT(stats.loss.mlm, 0.0);
}

TEST(Trainer, RejectsBadSetup) {
  auto c = small_config();
  c.bank_lr = 0.0;
  EXPECT_THROW(make_trainer(c), Error);
  TrainData empty;
  EXPECT_THROW(make_trainer(small_config(), empty), Error);
  auto t = make_trainer();
  EXPECT_THROW(t.train_step({}, {}, {}), Error);
}

// ---------------------------------------------------------------------------
// SCL loss

TEST(SclLoss, ZeroWithoutPivots) {
  const auto vocab = test_vocab();
  auto c = small_config().encoder;
  c.vocab_size = vocab.size();
  const auto p = ModelParams::init_uniform(c, 1);
  const std::vector<FlattenedInput> batch{flatten({{"the", "book"}, {}})};
  EXPECT_EQ(scl_loss(p, batch, vocab, PivotSet({"great"}, 0)), 0.0);
}

TEST(SclLoss, UniformHeadGivesLogVocab) {
  const auto vocab = test_vocab();
  auto c = small_config().encoder;
  c.vocab_size = vocab.size();
  auto p = ModelParams::init_uniform(c, 1);
  const auto& L = p.layout();
  std::fill(p.values().begin() + static_cast<std::ptrdiff_t>(L.mlm_w), p.values().end(), 0.0);
  const std::vector<FlattenedInput> batch{flatten({{"great", "book"}, {}})};
  EXPECT_NEAR(scl_loss(p, batch, vocab, PivotSet({"great"}, 0)),
              std::log(static_cast<double>(vocab.size())), 1e-12);
}

TEST(SclLoss, MatchesHandMaskedExample) {
  const auto vocab = test_vocab();
  auto c = small_config().encoder;
  c.vocab_size = vocab.size();
  const auto p = ModelParams::init_uniform(c, 2, 0.5);
  const auto flat = flatten({{"great", "plot", "bad"}, {}});
  TrainingExample ex{EncodedInput::plain({Vocabulary::kCls, Vocabulary::kMask, vocab.id("plot"),
                                          Vocabulary::kMask}),
                     std::nullopt,
                     {{1, vocab.id("great")}, {3, vocab.id("bad")}}};
  const double expect = compute_loss(p, std::span(&ex, 1), {0.0, 1.0}).mlm;
  const std::vector<FlattenedInput> batch{flat};
  EXPECT_DOUBLE_EQ(scl_loss(p, batch, vocab, PivotSet({"great", "bad"}, 0)), expect);
  // branch tokens are never masked
  SentenceTree tree{{"plot"}, {{0, {{"great", 1}}, 0.5}}};
  const std::vector<FlattenedInput> branch_only{flatten(tree)};
  EXPECT_EQ(scl_loss(p, branch_only, vocab, PivotSet({"great"}, 0)), 0.0);
}

// ---------------------------------------------------------------------------
// Evaluation

TEST(Evaluate, OverfitsToPerfectAccuracy) {
  auto c = small_config();
  c.epochs = 15;
  c.lr = 3e-2;
  auto data = small_data();
  data.dev = data.labeled;
  auto t = make_trainer(c, data);
  t.run();
  EXPECT_EQ(t.evaluate(t.data().labeled), 1.0);
}

TEST(Evaluate, UntrainedIsNearChance) {
  const auto docs = make_docs("e", 200, 9, true);
  double sum = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto c = small_config();
    c.seed = seed;
    auto t = make_trainer(c);
    sum += t.evaluate(docs);
  }
  EXPECT_GE(sum / 10.0, 0.35);
  EXPECT_LE(sum / 10.0, 0.65);
}

TEST(Evaluate, LeavesStateUntouched) {
  auto t = make_trainer();
  t.train_step(ptrs(t.data().labeled, 0, 4), ptrs(t.data().source_unlabeled, 0, 4),
               ptrs(t.data().target_unlabeled, 0, 4));
  const auto params = t.state().params;
  const auto src = t.state().bank_source;
  const auto tgt = t.state().bank_target;
  const auto metrics = t.state().metrics.size();
  t.evaluate(t.data().dev);
  EXPECT_TRUE(t.state().params == params);
  EXPECT_EQ(t.state().bank_source, src);
  EXPECT_EQ(t.state().bank_target, tgt);
  EXPECT_EQ(t.state().metrics.size(), metrics);
}

TEST(Evaluate, EmptySetIsAnError) {
  auto t = make_trainer();
  EXPECT_THROW(t.evaluate({}), Error);
  const auto unlabeled = make_docs("u", 2, 1, false);
  EXPECT_THROW(t.evaluate(unlabeled), Error);
}

TEST(PrepareDocument, TruncatesLongTrunk) {
  std::string text;
  for (int i = 0; i < 40; ++i) text += "book ";
  const auto doc = make_document("long", "d", text, Label::Positive);
  const auto flat = prepare_document(doc, test_kg(), PivotSet({"great"}, 0), {2, 16});
  EXPECT_EQ(flat.size(), 16u);
}
