#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "pivotkit/kg.hpp"
#include "pivotkit/stopwords.hpp"

using namespace pivotkit;
namespace fs = std::filesystem;

namespace {

const fs::path kData = PIVOTKIT_TEST_DATA;
using Words = std::vector<std::string>;

WordAttentionMatrix matrix_of(Words words, std::vector<double> values) {
  WordAttentionMatrix m;
  m.matrix.side = words.size();
  m.matrix.values = std::move(values);
  m.words = std::move(words);
  return m;
}

CandidatePool pool_of(Words w) {
  std::sort(w.begin(), w.end());
  return {std::move(w), 1};
}

SquareMatrix random_square(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SquareMatrix m(n);
  for (auto& v : m.values) v = u(rng);
  return m;
}

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

// ---------------------------------------------------------------------------
// average_attention

TEST(AverageAttention, SingleHeadSingleTokenWordsIsIdentity) {
  std::mt19937_64 rng(1);
  const auto h = random_square(rng, 5);
  std::vector<WordSpan> spans;
  for (std::size_t i = 0; i < 5; ++i) spans.push_back({i, i + 1});
  const auto out = average_attention(std::span(&h, 1), spans, Words(5, "w"),
                                     AttentionProvenance::BridgeFile);
  EXPECT_EQ(out.matrix.values, h.values);
  EXPECT_EQ(out.provenance, AttentionProvenance::BridgeFile);
}

TEST(AverageAttention, ConstantHeadsAverage) {
  const std::vector<SquareMatrix> heads{SquareMatrix(4, 0.2), SquareMatrix(4, 0.6)};
  const std::vector<WordSpan> spans{{0, 2}, {2, 3}, {3, 4}};
  const auto out = average_attention(heads, spans, {"a", "b", "c"},
                                     AttentionProvenance::BuiltinEncoder);
  for (double v : out.matrix.values) EXPECT_DOUBLE_EQ(v, 0.4);
}

TEST(AverageAttention, TwoStageOracle) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::vector<SquareMatrix> heads{random_square(rng, 4), random_square(rng, 4)};
    const std::size_t wide = rng() % 3;  // the word spanning two tokens
    std::vector<WordSpan> spans;
    std::vector<std::vector<std::size_t>> tokens;
    for (std::size_t w = 0, t = 0; w < 3; ++w) {
      const std::size_t end = t + (w == wide ? 2 : 1);
      spans.push_back({t, end});
      tokens.emplace_back();
      for (std::size_t k = t; k < end; ++k) tokens.back().push_back(k);
      t = end;
    }
    const auto out = average_attention(heads, spans, Words(spans.size(), "w"),
                                       AttentionProvenance::BuiltinEncoder);
    for (std::size_t a = 0; a < spans.size(); ++a)
      for (std::size_t b = 0; b < spans.size(); ++b) {
        // head mean first, then rows of word a, then columns of word b
        std::vector<double> rowmean(4, 0.0);
        for (std::size_t j = 0; j < 4; ++j) {
          for (auto i : tokens[a]) rowmean[j] += (heads[0](i, j) + heads[1](i, j)) / 2.0;
          rowmean[j] /= static_cast<double>(tokens[a].size());
        }
        double want = 0.0;
        for (auto j : tokens[b]) want += rowmean[j];
        want /= static_cast<double>(tokens[b].size());
        EXPECT_NEAR(out.matrix(a, b), want, 1e-15);
      }
  }
}

TEST(AverageAttention, RejectsBadSpans) {
  const std::vector<SquareMatrix> heads{SquareMatrix(3, 0.1)};
  const std::vector<WordSpan> overlap{{0, 2}, {1, 3}}, gap{{0, 1}, {2, 3}}, empty{{0, 0}, {0, 3}},
      short_cover{{0, 1}, {1, 2}};
  EXPECT_THROW(average_attention(heads, overlap, {"a", "b"}, {}), Error);
  EXPECT_THROW(average_attention(heads, gap, {"a", "b"}, {}), Error);
  EXPECT_THROW(average_attention(heads, empty, {"a", "b"}, {}), Error);
  EXPECT_THROW(average_attention(heads, short_cover, {"a", "b"}, {}), Error);
  const std::vector<SquareMatrix> mixed{SquareMatrix(3), SquareMatrix(2)};
  const std::vector<WordSpan> ok{{0, 1}, {1, 2}, {2, 3}};
  EXPECT_THROW(average_attention(mixed, ok, {"a", "b", "c"}, {}), Error);
}

// ---------------------------------------------------------------------------
// extract_candidate_facts

TEST(ExtractFacts, TrailingPivot) {
  // "great" attends most to "makes", then "reading".
  const auto m = matrix_of({"it", "makes", "reading", "great"},
                           {0.25, 0.25, 0.25, 0.25,  //
                            0.25, 0.25, 0.25, 0.25,  //
                            0.25, 0.25, 0.25, 0.25,  //
                            0.10, 0.50, 0.30, 0.10});
  const auto facts = extract_candidate_facts(m, pool_of({"great"}));
  ASSERT_EQ(facts.size(), 1u);
  EXPECT_EQ(facts[0].elements, (std::array<std::string, 3>{"makes", "reading", "great"}));
  EXPECT_EQ(facts[0].anchor(), "great");
  EXPECT_EQ(facts[0].anchor_slot, 2u);
  EXPECT_DOUBLE_EQ(facts[0].confidence, 0.8);
}

TEST(ExtractFacts, NoPoolWord) {
  const auto m = matrix_of({"a", "b", "c"}, std::vector<double>(9, 0.3));
  EXPECT_TRUE(extract_candidate_facts(m, pool_of({"zzz"})).empty());
}

TEST(ExtractFacts, ShortSentence) {
  const auto m = matrix_of({"great", "book"}, std::vector<double>(4, 0.5));
  EXPECT_TRUE(extract_candidate_facts(m, pool_of({"great"})).empty());
}

TEST(ExtractFacts, GreatBooksScenario) {
  const auto m = matrix_of({"great", "books", "make", "life", "simple"},
                           {0.15, 0.10, 0.40, 0.05, 0.30,  //
                            0.2, 0.2, 0.2, 0.2, 0.2,       //
                            0.2, 0.2, 0.2, 0.2, 0.2,       //
                            0.2, 0.2, 0.2, 0.2, 0.2,       //
                            0.2, 0.2, 0.2, 0.2, 0.2});
  const auto facts = extract_candidate_facts(m, pool_of({"great"}));
  ASSERT_EQ(facts.size(), 1u);
  EXPECT_EQ(facts[0].elements, (std::array<std::string, 3>{"great", "make", "simple"}));
  EXPECT_EQ(facts[0].anchor_slot, 0u);
}

TEST(ExtractFacts, SelfColumnIgnoredAndTiesGoLow) {
  const auto m = matrix_of({"a", "p", "b", "c"},
                           {0, 0, 0, 0,            //
                            0.3, 0.9, 0.3, 0.3,    //
                            0, 0, 0, 0,            //
                            0, 0, 0, 0});
  const auto facts = extract_candidate_facts(m, pool_of({"p"}));
  ASSERT_EQ(facts.size(), 1u);
  EXPECT_EQ(facts[0].elements, (std::array<std::string, 3>{"a", "p", "b"}));
}

TEST(ExtractFacts, ZeroRowGivesNoFact) {
  const auto m = matrix_of({"a", "p", "b"}, {0, 0, 0, 0, 1, 0, 0, 0, 0});
  EXPECT_TRUE(extract_candidate_facts(m, pool_of({"p"})).empty());
}

TEST(ExtractFacts, RepeatedAnchorWordUsesFirstSlot) {
  // Second "p" picks the first "p" as a partner; the anchor slot is the first.
  const auto m = matrix_of({"p", "x", "p"},
                           {0, 0.5, 0.5,  //
                            0, 0, 0,      //
                            0.6, 0.4, 0});
  const auto facts = extract_candidate_facts(m, pool_of({"p"}));
  ASSERT_EQ(facts.size(), 2u);
  for (const auto& f : facts) {
    EXPECT_EQ(f.anchor_slot, 0u);
    EXPECT_EQ(f.anchor(), "p");
  }
}

TEST(ExtractFacts, MatchesExhaustiveOracle) {
  std::mt19937_64 rng(23);
  const Words lexicon{"a", "b", "c", "d", "e", "f", "g"};
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 12;
    Words words;
    for (std::size_t i = 0; i < n; ++i) words.push_back(lexicon[rng() % lexicon.size()]);
    std::vector<double> values(n * n);
    for (auto& v : values) v = static_cast<double>(rng() % 5) / 4.0;  // many ties and zeros
    Words pool{lexicon[rng() % 7], lexicon[rng() % 7]};
    auto p = pool_of(pool);
    p.words.erase(std::unique(p.words.begin(), p.words.end()), p.words.end());
    const auto got = extract_candidate_facts(matrix_of(words, values), p);
    const auto want = oracle::facts(words, values, p.words);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i], want[i]);
  }
}

// ---------------------------------------------------------------------------
// filter_facts

namespace {

std::vector<FactTriplet> random_facts(std::mt19937_64& rng, std::size_t n) {
  const Words lexicon{"it", "great", "book", "the", "simple", "make", "read"};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<FactTriplet> out;
  for (std::size_t i = 0; i < n; ++i) {
    FactTriplet f;
    for (auto& e : f.elements) e = lexicon[rng() % lexicon.size()];
    f.anchor_slot = rng() % 3;
    f.confidence = u(rng);
    out.push_back(f);
  }
  return out;
}

}  // namespace

TEST(FilterFacts, ZeroThresholdNoStopwordsIsIdentity) {
  std::mt19937_64 rng(2);
  const auto f = random_facts(rng, 50);
  EXPECT_EQ(filter_facts(f, 0.0, {}), f);
}

TEST(FilterFacts, DropsStopwordFacts) {
  FactTriplet f{{"it", "makes", "great"}, 2, 0.9};
  FactTriplet g{{"great", "make", "simple"}, 0, 0.9};
  const std::vector<FactTriplet> in{f, g};
  const auto out = filter_facts(in, 0.1, english_stopwords());
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], g);
}

TEST(FilterFacts, ThresholdIsInclusiveAndMonotone) {
  std::mt19937_64 rng(8);
  const auto f = random_facts(rng, 400);
  const WordSet stop{"it", "the"};
  const auto low = filter_facts(f, 0.1, stop);
  const auto high = filter_facts(f, 0.3, stop);
  EXPECT_EQ(filter_facts(low, 0.3, stop), high);
  for (const auto& h : high) {
    EXPECT_GE(h.confidence, 0.3);
    EXPECT_NE(std::find(low.begin(), low.end(), h), low.end());
  }
  const std::vector<FactTriplet> edge{{{"a", "b", "c"}, 0, 0.3}};
  EXPECT_EQ(filter_facts(edge, 0.3, {}).size(), 1u);
  EXPECT_THROW(filter_facts(edge, -0.1, {}), Error);
}

// ---------------------------------------------------------------------------
// build_kg

namespace {

AttentionProvider great_books_provider() {
  return [](const SentenceRef& ref) {
    WordAttentionMatrix m;
    m.words.assign(ref.words.begin(), ref.words.end());
    m.matrix = SquareMatrix(m.words.size(), 0.2);
    if (m.words.size() == 5) {
      const double row[] = {0.15, 0.10, 0.40, 0.05, 0.30};
      for (std::size_t j = 0; j < 5; ++j) m.matrix(0, j) = row[j];
    }
    return m;
  };
}

/// Deterministic pseudo-attention from a hash of the sentence id.
WordAttentionMatrix scripted(const SentenceRef& ref) {
  WordAttentionMatrix m;
  m.words.assign(ref.words.begin(), ref.words.end());
  m.matrix = SquareMatrix(m.words.size());
  std::mt19937_64 rng(std::hash<std::string>{}(ref.id()));
  for (auto& v : m.matrix.values) v = static_cast<double>(rng() % 8) / 16.0;
  return m;
}

}  // namespace

TEST(BuildKg, GreatBooksSingleFact) {
  const auto target = load_corpus(kData / "great_books_target.jsonl", "target");
  const auto kg = build_kg(target, pool_of({"great"}), great_books_provider(),
                           {0.3, english_stopwords(), false});
  ASSERT_EQ(kg.size(), 1u);
  const auto* facts = kg.find("great");
  ASSERT_NE(facts, nullptr);
  EXPECT_EQ((*facts)[0].elements, (std::array<std::string, 3>{"great", "make", "simple"}));
  EXPECT_DOUBLE_EQ((*facts)[0].confidence, 0.7);
  EXPECT_EQ(kg.source(), "target");
}

TEST(BuildKg, EmptyPool) {
  const auto target = load_corpus(kData / "great_books_target.jsonl", "target");
  EXPECT_TRUE(build_kg(target, CandidatePool{}, great_books_provider(), {}).empty());
}

TEST(BuildKg, MatchesSentenceBySentenceReference) {
  std::mt19937_64 rng(31);
  const Words lexicon{"good", "bad", "plot", "the", "ink", "page", "read", "fast", "slow"};
  DomainCorpus target("target");
  for (int d = 0; d < 10; ++d) {
    std::string text;
    for (int s = 0; s < 2; ++s) {
      const int len = 1 + static_cast<int>(rng() % 9);
      for (int w = 0; w < len; ++w) text += lexicon[rng() % lexicon.size()] + " ";
      text += ". ";
    }
    target.add(make_document("doc" + std::to_string(d), "target", text));
  }
  const auto pool = pool_of({"good", "bad", "plot"});
  const WordSet stop{"the"};
  const auto kg = build_kg(target, pool, scripted, {0.4, stop, false});

  // reference: run the oracle on every sentence, filter by hand, merge by max
  std::map<std::tuple<std::string, std::array<std::string, 3>, std::size_t>, double> want;
  for (const auto& doc : target.unlabeled())
    for (std::size_t i = 0; i < doc.sentences.size(); ++i) {
      const auto m = scripted({doc.id, i, doc.sentences[i]});
      for (const auto& f : oracle::facts(m.words, m.matrix.values, pool.words)) {
        const double c = round_confidence(f.confidence);
        if (c < 0.4) continue;
        if (std::any_of(f.elements.begin(), f.elements.end(),
                        [&](const std::string& w) { return stop.count(w); }))
          continue;
        auto key = std::make_tuple(f.anchor(), f.elements, f.anchor_slot);
        want[key] = std::max(want[key], c);
      }
    }
  ASSERT_EQ(kg.size(), want.size());
  for (const auto& [anchor, list] : kg.facts()) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      const auto& f = list[i];
      EXPECT_EQ(f.anchor(), anchor);
      EXPECT_EQ(want.at({anchor, f.elements, f.anchor_slot}), f.confidence);
      if (i > 0) {
        EXPECT_GE(list[i - 1].confidence, f.confidence);
      }
    }
  }
}

TEST(BuildKg, ElementPositionsIncrease) {
  DomainCorpus target("target");
  target.add(make_document("a", "target", "good plot read fast slow ink page good"));
  const auto kg = build_kg(target, pool_of({"good", "plot"}), scripted, {0.0, {}, false});
  const Words sentence = target.unlabeled()[0].sentences[0];
  for (const auto& [anchor, list] : kg.facts())
    for (const auto& f : list) {
      // some strictly increasing index triple spells the fact
      bool found = false;
      for (std::size_t a = 0; a < sentence.size(); ++a)
        for (std::size_t b = a + 1; b < sentence.size(); ++b)
          for (std::size_t c = b + 1; c < sentence.size(); ++c)
            found |= sentence[a] == f.elements[0] && sentence[b] == f.elements[1] &&
                     sentence[c] == f.elements[2];
      EXPECT_TRUE(found);
    }
}

TEST(BuildKg, SentenceOrderDoesNotMatter) {
  std::vector<Document> docs;
  std::mt19937_64 rng(6);
  const Words lexicon{"good", "bad", "plot", "ink", "page", "read"};
  for (int d = 0; d < 12; ++d) {
    std::string text;
    for (int w = 0; w < 6; ++w) text += lexicon[rng() % lexicon.size()] + " ";
    docs.push_back(make_document("d" + std::to_string(d), "t", text));
  }
  // ids drive the scripted provider, so permuting documents keeps matrices
  DomainCorpus a("t"), b("t");
  for (const auto& d : docs) a.add(d);
  std::shuffle(docs.begin(), docs.end(), rng);
  for (const auto& d : docs) b.add(d);
  const auto pool = pool_of({"good", "bad"});
  EXPECT_TRUE(build_kg(a, pool, scripted, {0.2, {}, false}) ==
              build_kg(b, pool, scripted, {0.2, {}, false}));
}

TEST(BuildKg, ProviderFailureNamesSentence) {
  const auto target = load_corpus(kData / "great_books_target.jsonl", "target");
  AttentionProvider bad = [](const SentenceRef&) -> WordAttentionMatrix {
    throw std::runtime_error("boom");
  };
  const auto msg = error_of([&] { build_kg(target, pool_of({"great"}), bad, {}); });
  EXPECT_NE(msg.find("t1:0"), std::string::npos) << msg;
  EXPECT_NE(msg.find("boom"), std::string::npos) << msg;

  AttentionProvider wrong_words = [](const SentenceRef&) {
    return matrix_of({"x", "y", "z"}, std::vector<double>(9, 0.1));
  };
  EXPECT_NE(error_of([&] { build_kg(target, pool_of({"great"}), wrong_words, {}); }).find("t1:0"),
            std::string::npos);
}

TEST(BuildKg, NormalizedRowsOption) {
  const auto target = load_corpus(kData / "great_books_target.jsonl", "target");
  AttentionProvider doubled = [](const SentenceRef& ref) {
    auto m = great_books_provider()(ref);
    for (auto& v : m.matrix.values) v *= 2.0;
    return m;
  };
  const auto raw = build_kg(target, pool_of({"great"}), doubled, {0.3, {}, false});
  const auto norm = build_kg(target, pool_of({"great"}), doubled, {0.3, {}, true});
  EXPECT_DOUBLE_EQ(raw.facts().at("great")[0].confidence, 1.4);
  EXPECT_DOUBLE_EQ(norm.facts().at("great")[0].confidence, 0.7);
}

// ---------------------------------------------------------------------------
// KG file

TEST(KgFile, RoundTrip) {
  KnowledgeGraph kg(0.25, "books");
  kg.add({{"great", "make", "simple"}, 0, 0.7});
  kg.add({{"book", "is", "great"}, 2, 1.0 / 3.0});
  kg.add({{"great", "make", "simple"}, 0, 0.5});  // duplicate keeps max
  kg.finalize();
  EXPECT_EQ(kg.size(), 2u);
  const auto path = fs::temp_directory_path() / "pivotkit_kg.tsv";
  save_kg(path, kg);
  const auto back = load_kg(path);
  EXPECT_EQ(back.size(), 2u);
  EXPECT_EQ(back.threshold(), 0.25);
  EXPECT_EQ(back.source(), "books");
  EXPECT_DOUBLE_EQ(back.facts().at("great")[0].confidence, 0.7);
  // byte-exact second save
  const auto path2 = fs::temp_directory_path() / "pivotkit_kg2.tsv";
  save_kg(path2, back);
  std::ifstream a(path), b(path2);
  EXPECT_EQ(std::string(std::istreambuf_iterator<char>(a), {}),
            std::string(std::istreambuf_iterator<char>(b), {}));
}

TEST(KgFile, TruncatedFileReportsLine) {
  const auto msg = error_of([] { load_kg(kData / "truncated_kg.tsv"); });
  EXPECT_NE(msg.find(":3"), std::string::npos) << msg;
}

TEST(KgFile, RejectsOtherVersionsAndBadLines) {
  const auto path = fs::temp_directory_path() / "pivotkit_badkg.tsv";
  std::ofstream(path) << "pivotkit-kg v2 threshold=0.3\n";
  EXPECT_NE(error_of([&] { load_kg(path); }).find("version"), std::string::npos);
  std::ofstream(path) << "pivotkit-kg v1 threshold=0.3\ngreat\tgreat\tmake\n";
  EXPECT_NE(error_of([&] { load_kg(path); }).find(":2"), std::string::npos);
  std::ofstream(path) << "pivotkit-kg v1 threshold=0.3\ngreat\tbook\tmake\tsimple\t0.5\n";
  EXPECT_THROW(load_kg(path), Error);  // anchor not among the elements
  std::ofstream(path) << "pivotkit-kg v1 threshold=0.3\ngreat\tgreat\tmake\tsimple\tabc\n";
  EXPECT_THROW(load_kg(path), Error);
}

TEST(KgFile, LargeGraphKeepsOrdering) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  KnowledgeGraph kg(0.0);
  for (int i = 0; i < 10000; ++i) {
    const std::string anchor = "a" + std::to_string(rng() % 300);
    std::array<std::string, 3> e{anchor, "w" + std::to_string(rng() % 1000),
                                 "v" + std::to_string(rng() % 1000)};
    const std::size_t slot = rng() % 3;
    std::swap(e[0], e[slot]);
    kg.add({e, slot, round_confidence(u(rng))});
  }
  kg.finalize();
  const auto path = fs::temp_directory_path() / "pivotkit_bigkg.tsv";
  save_kg(path, kg);
  const auto back = load_kg(path);
  EXPECT_TRUE(back == kg);
  for (const auto& [anchor, list] : back.facts())
    for (std::size_t i = 1; i < list.size(); ++i)
      EXPECT_GE(list[i - 1].confidence, list[i].confidence);
}

// ---------------------------------------------------------------------------
// Attention file

TEST(AttentionFile, RoundTripAndProvider) {
  const auto path = fs::temp_directory_path() / "pivotkit_attention.jsonl";
  const auto m = matrix_of({"great", "book", "here"},
                           {0.1, 0.2, 0.7, 0.3, 0.3, 0.4, 1.0 / 3, 1.0 / 3, 1.0 / 3});
  {
    AttentionFileWriter w(path);
    w.write("d:0", m);
  }
  const auto recs = read_attention_file(path);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].attention.matrix.values, m.matrix.values);
  EXPECT_EQ(recs[0].attention.provenance, AttentionProvenance::BridgeFile);

  AttentionFileProvider p(path);
  const Words words{"great", "book", "here"};
  EXPECT_EQ(p({"d", 0, words}).words, words);
  EXPECT_THROW(p({"d", 1, words}), Error);
  const Words other{"great", "book", "there"};
  EXPECT_THROW(p({"d", 0, other}), Error);
}

TEST(AttentionFile, Fixture) {
  const auto recs = read_attention_file(kData / "great_books_attention.jsonl");
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].sentence_id, "t1:0");
  EXPECT_EQ(recs[0].attention.size(), 5u);
}

TEST(AttentionFile, Rejects) {
  const auto path = fs::temp_directory_path() / "pivotkit_badattn.jsonl";
  std::ofstream(path) << R"({"format":"pivotkit-attention","version":2})" << '\n';
  EXPECT_NE(error_of([&] { read_attention_file(path); }).find("version"), std::string::npos);
  std::ofstream(path) << R"({"format":"pivotkit-attention","version":1})" << '\n'
                      << R"({"sentence_id":"a:0","words":["x","y"],"matrix":[1,0,0]})" << '\n';
  EXPECT_NE(error_of([&] { read_attention_file(path); }).find(":2"), std::string::npos);
  std::ofstream(path) << R"({"format":"pivotkit-attention","version":1})" << '\n'
                      << R"({"sentence_id":"a:0","words":["x"],"matrix":[-1]})" << '\n';
  EXPECT_THROW(read_attention_file(path), Error);
  std::ofstream(path) << R"({"format":"pivotkit-attention","version":1})" << '\n'
                      << R"({"sentence_id":"a:0","words":["x"],"matrix":[1]})" << '\n'
                      << R"({"sentence_id":"a:0","words":["x"],"matrix":[1]})" << '\n';
  EXPECT_THROW(AttentionFileProvider{path}, Error);
}
