#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pivotkit/corpus.hpp"
#include "pivotkit/error.hpp"

namespace pivotkit {

// ---------------------------------------------------------------------------
// Candidate pool

/// Words frequent in both domains. Sorted ascending, stopword-free.
struct CandidatePool {
  std::vector<std::string> words;
  std::size_t min_count = 1;

  bool contains(std::string_view w) const {
    return std::binary_search(words.begin(), words.end(), w, std::less<>{});
  }
  std::size_t size() const { return words.size(); }
  bool empty() const { return words.empty(); }
};

inline CandidatePool build_candidate_pool(const DomainCorpus& source, const DomainCorpus& target,
                                          std::size_t min_count, const WordSet& stopwords) {
  if (min_count < 1) throw Error("min_count must be at least 1");
  CandidatePool pool;
  pool.min_count = min_count;
  for (const auto& [w, n] : source.freq()) {
    if (n < min_count || stopwords.count(w)) continue;
    if (target.count(w) >= min_count) pool.words.push_back(w);
  }
  return pool;
}

inline void save_pool(const std::filesystem::path& path, const CandidatePool& pool) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write pool file " + path.string());
  out << "pivotkit-pool v1 min_count=" << pool.min_count << '\n';
  for (const auto& w : pool.words) out << w << '\n';
}

inline CandidatePool load_pool(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open pool file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(path.string() + ":1: empty pool file");
  constexpr std::string_view kHeader = "pivotkit-pool v1 min_count=";
  if (line.rfind(kHeader, 0) != 0)
    throw Error(path.string() + ":1: not a pivotkit-pool v1 file");
  CandidatePool pool;
  const auto digits = std::string_view(line).substr(kHeader.size());
  auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), pool.min_count);
  if (ec != std::errc{} || p != digits.data() + digits.size())
    throw Error(path.string() + ":1: bad min_count");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (!pool.words.empty() && !(pool.words.back() < line))
      throw Error(path.string() + ":" + std::to_string(lineno) + ": pool words not sorted");
    pool.words.push_back(line);
  }
  return pool;
}

// ---------------------------------------------------------------------------
// Polarity scores

/// Signed label bias of the documents containing `word`: (#positive -
/// #negative) / #containing. Each document counts once. Words that occur in
/// no labeled document score 0.
inline double init_polarity(std::string_view word, std::span<const Document> labeled) {
  long pos = 0;
  long neg = 0;
  for (const auto& doc : labeled) {
    if (!doc.label) continue;
    bool found = false;
    for (const auto& s : doc.sentences) {
      if (std::find(s.begin(), s.end(), word) != s.end()) {
        found = true;
        break;
      }
    }
    if (!found) continue;
    (*doc.label == Label::Positive ? pos : neg) += 1;
  }
  if (pos + neg == 0) return 0.0;
  return static_cast<double>(pos - neg) / static_cast<double>(pos + neg);
}

/// init_polarity for every pool word in a single pass over the documents.
inline std::map<std::string, double, std::less<>> init_polarities(
    const CandidatePool& pool, std::span<const Document> labeled) {
  std::map<std::string, std::pair<long, long>, std::less<>> counts;
  for (const auto& w : pool.words) counts.emplace(w, std::pair<long, long>{0, 0});
  for (const auto& doc : labeled) {
    if (!doc.label) continue;
    for (const auto& w : doc.token_set()) {
      auto it = counts.find(w);
      if (it == counts.end()) continue;
      (*doc.label == Label::Positive ? it->second.first : it->second.second) += 1;
    }
  }
  std::map<std::string, double, std::less<>> out;
  for (const auto& [w, pn] : counts) {
    const auto [pos, neg] = pn;
    out.emplace(w, pos + neg == 0 ? 0.0
                                  : static_cast<double>(pos - neg) /
                                        static_cast<double>(pos + neg));
  }
  return out;
}

/// Per-domain polarity scores of the candidate pool, updated online with
///   p <- alpha * p + (1 - alpha) * label.
/// Since labels are +-1 and scores start in [-1, 1], every update is a convex
/// combination and scores never leave the interval.
class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(std::string domain, double alpha) : domain_(std::move(domain)), alpha_(alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw Error("memory bank alpha must lie in (0, 1]");
  }

  /// Bank keyed on the pool, scores initialised from labeled source data.
  static MemoryBank from_labeled(std::string domain, double alpha, const CandidatePool& pool,
                                 std::span<const Document> labeled) {
    MemoryBank bank(std::move(domain), alpha);
    bank.scores_ = init_polarities(pool, labeled);
    return bank;
  }

  const std::string& domain() const { return domain_; }
  double alpha() const { return alpha_; }
  std::size_t size() const { return scores_.size(); }
  const std::map<std::string, double, std::less<>>& scores() const { return scores_; }

  bool contains(std::string_view w) const { return scores_.find(w) != scores_.end(); }

  double score(std::string_view w) const {
    auto it = scores_.find(w);
    if (it == scores_.end())
      throw Error("word '" + std::string(w) + "' is not keyed in the " + domain_ + " bank");
    return it->second;
  }

  void set(std::string_view w, double score) {
    if (!(score >= -1.0 && score <= 1.0))
      throw Error("polarity score out of [-1, 1] for '" + std::string(w) + "'");
    auto it = scores_.find(w);
    if (it == scores_.end())
      scores_.emplace(std::string(w), score);
    else
      it->second = score;
  }

  /// Returns false (and changes nothing) when the word is not keyed.
  bool td_update(std::string_view w, Label label) {
    auto it = scores_.find(w);
    if (it == scores_.end()) return false;
    it->second = alpha_ * it->second + (1.0 - alpha_) * label_value(label);
    return true;
  }

  bool operator==(const MemoryBank&) const = default;

 private:
  std::string domain_;
  double alpha_ = 1.0;
  std::map<std::string, double, std::less<>> scores_;
};

/// Absolute mean of the two domain scores. High only when the word leans to
/// the same label in both domains.
inline double behavior_score(std::string_view word, const MemoryBank& source,
                             const MemoryBank& target) {
  return std::abs(source.score(word) + target.score(word)) / 2.0;
}

// ---------------------------------------------------------------------------
// Pivot selection

class PivotSet {
 public:
  PivotSet() = default;
  PivotSet(std::vector<std::string> words, long stamp)
      : words_(std::move(words)), lookup_(words_.begin(), words_.end()), stamp_(stamp) {}

  const std::vector<std::string>& words() const { return words_; }
  long stamp() const { return stamp_; }
  std::size_t size() const { return words_.size(); }
  bool contains(std::string_view w) const { return lookup_.find(w) != lookup_.end(); }

  bool same_words(const PivotSet& o) const { return words_ == o.words_; }

 private:
  std::vector<std::string> words_;
  WordSet lookup_;
  long stamp_ = 0;
};

/// Top-K pool words by behavior score; ties go to the smaller word.
inline PivotSet select_pivots(const CandidatePool& pool, const MemoryBank& source,
                              const MemoryBank& target, std::size_t k, long stamp = 0) {
  std::vector<std::pair<double, const std::string*>> scored;
  scored.reserve(pool.size());
  for (const auto& w : pool.words) scored.emplace_back(behavior_score(w, source, target), &w);
  const auto better = [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return *a.second < *b.second;
  };
  const std::size_t n = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(),
                    better);
  std::vector<std::string> words;
  words.reserve(n);
  for (std::size_t i = 0; i < n; ++i) words.push_back(*scored[i].second);
  return PivotSet(std::move(words), stamp);
}

/// |a ∩ b| / |a ∪ b|; 1 for two empty sets.
inline double jaccard(const PivotSet& a, const PivotSet& b) {
  if (a.size() == 0 && b.size() == 0) return 1.0;
  std::size_t common = 0;
  for (const auto& w : a.words())
    if (b.contains(w)) ++common;
  return static_cast<double>(common) / static_cast<double>(a.size() + b.size() - common);
}

inline void save_pivot_list(const std::filesystem::path& path, const PivotSet& pivots) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write pivot list " + path.string());
  for (const auto& w : pivots.words()) out << w << '\n';
}

inline PivotSet load_pivot_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open pivot list " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) words.push_back(line);
  return PivotSet(std::move(words), 0);
}

// ---------------------------------------------------------------------------
// Pseudo labels

inline constexpr double kDefaultPseudoThreshold = 0.9;

/// Argmax label of a binary class distribution when its probability reaches
/// the threshold (inclusive). Class 0 is positive.
inline std::optional<Label> gate_pseudo_label(std::span<const double> probs,
                                              double threshold = kDefaultPseudoThreshold) {
  if (probs.size() != 2)
    throw Error("pseudo-label gate expects 2 class probabilities, got " +
                std::to_string(probs.size()));
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw Error("negative or NaN class probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw Error("class probabilities do not sum to 1");
  const std::size_t best = probs[1] > probs[0] ? 1 : 0;
  if (probs[best] >= threshold) return label_from_class(best);
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Bank snapshots: word<TAB>scoreS<TAB>scoreT, sorted by word.

inline std::string format_double(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

inline double parse_double(std::string_view s, const std::string& where) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v))
    throw Error(where + ": bad number '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline void save_banks(const std::filesystem::path& path, const MemoryBank& source,
                       const MemoryBank& target) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write bank snapshot " + path.string());
  for (const auto& [w, s] : source.scores())
    out << w << '\t' << format_double(s, 17) << '\t' << format_double(target.score(w), 17)
        << '\n';
}

inline std::pair<MemoryBank, MemoryBank> load_banks(const std::filesystem::path& path,
                                                    double alpha,
                                                    std::string source_domain = "source",
                                                    std::string target_domain = "target") {
  std::ifstream in(path);
  if (!in) throw Error("cannot open bank snapshot " + path.string());
  MemoryBank s(std::move(source_domain), alpha);
  MemoryBank t(std::move(target_domain), alpha);
  std::string line;
  std::string prev;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    auto f = split_tabs(line);
    if (f.size() != 3) throw Error(where + ": expected word<TAB>scoreS<TAB>scoreT");
    std::string w(f[0]);
    if (lineno > 1 && !(prev < w)) throw Error(where + ": words not sorted");
    s.set(w, parse_double(f[1], where));
    t.set(w, parse_double(f[2], where));
    prev = std::move(w);
  }
  return {std::move(s), std::move(t)};
}

}  // namespace pivotkit
