#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pivotkit/corpus.hpp"

namespace pivotkit {

/// Two-domain sentiment corpus with planted ground truth. Shared sentiment
/// words carry the document label in both domains. Each domain also has its
/// own sentiment words that follow the label at home and appear with a random
/// label in the other domain.
struct SyntheticSpec {
  std::size_t vocab_size = 300;
  std::size_t shared = 20;    // split evenly into positive / negative
  std::size_t specific = 20;  // per domain, split evenly
  std::size_t stopwords = 20;
  std::size_t source_labeled = 800;
  std::size_t source_unlabeled = 1200;
  std::size_t target_unlabeled = 1200;
  std::size_t target_test = 400;
  std::size_t sentences_per_doc = 3;
  std::size_t words_per_sentence = 7;
  std::size_t shared_per_doc = 2;
  double stopword_rate = 0.3;
  std::uint64_t seed = 7;
};

struct SyntheticCorpus {
  DomainCorpus source{"source"};
  DomainCorpus target{"target"};
  std::vector<Document> target_test;
  std::vector<std::string> shared_positive, shared_negative;
  std::vector<std::string> source_positive, source_negative;
  std::vector<std::string> target_positive, target_negative;
  std::vector<std::string> fillers;
  std::vector<std::string> stopwords;

  std::vector<std::string> shared() const {
    auto out = shared_positive;
    out.insert(out.end(), shared_negative.begin(), shared_negative.end());
    return out;
  }
  std::vector<std::string> domain_specific() const {
    std::vector<std::string> out;
    for (const auto* v : {&source_positive, &source_negative, &target_positive, &target_negative})
      out.insert(out.end(), v->begin(), v->end());
    return out;
  }
};

namespace detail {

/// n distinct random pseudo-words of five letters, none of them in `taken`.
/// Random names keep the word-order tie-break from favouring any group.
inline std::vector<std::string> word_block(std::mt19937_64& rng, std::size_t n, WordSet& taken) {
  std::vector<std::string> out;
  while (out.size() < n) {
    std::string w;
    for (int i = 0; i < 5; ++i) w.push_back(static_cast<char>('a' + rng() % 26));
    if (taken.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

}  // namespace detail

inline SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  static const char* kStop[] = {"the",  "it",   "a",  "and", "is",  "this", "was",
                                "of",   "to",   "in", "i",   "that", "for", "with",
                                "on",   "but",  "my", "so",  "as",  "at",  "be",
                                "have", "they", "we", "you", "had", "are", "an"};
  SyntheticCorpus out;
  std::mt19937_64 rng(spec.seed);
  const std::size_t n_stop = std::min(spec.stopwords, std::size(kStop));
  out.stopwords.assign(kStop, kStop + n_stop);
  WordSet taken(out.stopwords.begin(), out.stopwords.end());
  const std::size_t hs = spec.shared / 2, hd = spec.specific / 2;
  out.shared_positive = detail::word_block(rng, hs, taken);
  out.shared_negative = detail::word_block(rng, spec.shared - hs, taken);
  out.source_positive = detail::word_block(rng, hd, taken);
  out.source_negative = detail::word_block(rng, spec.specific - hd, taken);
  out.target_positive = detail::word_block(rng, hd, taken);
  out.target_negative = detail::word_block(rng, spec.specific - hd, taken);
  const std::size_t used = spec.shared + 2 * spec.specific + n_stop;
  out.fillers = detail::word_block(rng, spec.vocab_size > used ? spec.vocab_size - used : 1, taken);

  std::uniform_real_distribution<double> coin(0.0, 1.0);
  auto pick = [&](const std::vector<std::string>& v) -> const std::string& {
    return v[rng() % v.size()];
  };

  auto make_doc = [&](bool in_source, Label label, const std::string& id) {
    const bool pos = label == Label::Positive;
    const auto& home_pos = in_source ? out.source_positive : out.target_positive;
    const auto& home_neg = in_source ? out.source_negative : out.target_negative;
    const auto& away_pos = in_source ? out.target_positive : out.source_positive;
    const auto& away_neg = in_source ? out.target_negative : out.source_negative;
    std::vector<std::string> words;
    for (std::size_t i = 0; i < spec.shared_per_doc; ++i)
      words.push_back(pick(pos ? out.shared_positive : out.shared_negative));
    words.push_back(pick(pos ? home_pos : home_neg));
    words.push_back(pick(coin(rng) < 0.5 ? away_pos : away_neg));
    const std::size_t total = spec.sentences_per_doc * spec.words_per_sentence;
    while (words.size() < total)
      words.push_back(coin(rng) < spec.stopword_rate ? pick(out.stopwords) : pick(out.fillers));
    std::shuffle(words.begin(), words.end(), rng);
    std::string text;
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i > 0) text += (i % spec.words_per_sentence == 0) ? ". " : " ";
      text += words[i];
    }
    text += ".";
    return make_document(id, in_source ? "source" : "target", std::move(text), label);
  };
  auto random_label = [&] { return coin(rng) < 0.5 ? Label::Positive : Label::Negative; };

  for (std::size_t i = 0; i < spec.source_labeled; ++i)
    out.source.add(make_doc(true, random_label(), "sl" + std::to_string(i)));
  for (std::size_t i = 0; i < spec.source_unlabeled; ++i) {
    auto d = make_doc(true, random_label(), "su" + std::to_string(i));
    d.label.reset();
    out.source.add(std::move(d));
  }
  for (std::size_t i = 0; i < spec.target_unlabeled; ++i) {
    auto d = make_doc(false, random_label(), "tu" + std::to_string(i));
    d.label.reset();
    out.target.add(std::move(d));
  }
  for (std::size_t i = 0; i < spec.target_test; ++i)
    out.target_test.push_back(make_doc(false, random_label(), "tt" + std::to_string(i)));
  return out;
}

}  // namespace pivotkit
