#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pivotkit/error.hpp"

namespace pivotkit {

using WordSet = std::set<std::string, std::less<>>;
using Sentence = std::vector<std::string>;

/// Binary sentiment label. The numeric values are the ones the polarity
/// arithmetic uses directly.
enum class Label : int { Negative = -1, Positive = 1 };

inline int label_value(Label l) { return static_cast<int>(l); }

/// Classifier output index for a label: class 0 is positive, class 1 negative.
inline std::size_t class_index(Label l) { return l == Label::Positive ? 0 : 1; }

inline Label label_from_class(std::size_t c) {
  return c == 0 ? Label::Positive : Label::Negative;
}

inline std::string label_string(Label l) { return l == Label::Positive ? "+1" : "-1"; }

// ---------------------------------------------------------------------------
// Tokenization

namespace detail {

inline bool is_word_byte(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
         c >= 0x80;
}

inline char ascii_lower(unsigned char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : static_cast<char>(c);
}

inline bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

}  // namespace detail

/// Lowercases ASCII letters and splits on everything that is not a word
/// character. Apostrophes and hyphens survive only between two word
/// characters ("it's", "well-made"). Bytes >= 0x80 are treated as word
/// characters so UTF-8 words stay intact.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (detail::is_word_byte(c)) {
      cur.push_back(detail::ascii_lower(c));
      continue;
    }
    if ((c == '\'' || c == '-') && !cur.empty() && i + 1 < text.size() &&
        detail::is_word_byte(static_cast<unsigned char>(text[i + 1]))) {
      cur.push_back(static_cast<char>(c));
      continue;
    }
    if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

/// Splits on [.!?;] followed by whitespace or end of text. Sentences that
/// tokenize to nothing are dropped.
inline std::vector<Sentence> split_sentences(std::string_view text) {
  std::vector<Sentence> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c != '.' && c != '!' && c != '?' && c != ';') continue;
    if (i + 1 < text.size() && !detail::is_space(static_cast<unsigned char>(text[i + 1])))
      continue;
    auto toks = tokenize(text.substr(start, i + 1 - start));
    if (!toks.empty()) out.push_back(std::move(toks));
    start = i + 1;
  }
  if (start < text.size()) {
    auto toks = tokenize(text.substr(start));
    if (!toks.empty()) out.push_back(std::move(toks));
  }
  return out;
}

inline std::string join(const std::vector<std::string>& words, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.append(sep);
    out.append(words[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Documents and corpora

struct Document {
  std::string id;
  std::string domain;
  std::string text;
  std::vector<Sentence> sentences;
  std::optional<Label> label;

  /// All tokens of all sentences, in order.
  std::vector<std::string> tokens() const {
    std::vector<std::string> out;
    for (const auto& s : sentences) out.insert(out.end(), s.begin(), s.end());
    return out;
  }

  /// Distinct tokens, sorted. A word counts once per document.
  WordSet token_set() const {
    WordSet out;
    for (const auto& s : sentences) out.insert(s.begin(), s.end());
    return out;
  }
};

inline Document make_document(std::string id, std::string domain, std::string text,
                              std::optional<Label> label = std::nullopt) {
  Document d{std::move(id), std::move(domain), std::move(text), {}, label};
  d.sentences = split_sentences(d.text);
  return d;
}

/// Labeled and unlabeled documents of one domain plus token frequencies over
/// both. Immutable once loaded; use add() only while building.
class DomainCorpus {
 public:
  DomainCorpus() = default;
  explicit DomainCorpus(std::string domain) : domain_(std::move(domain)) {}

  void add(Document doc) {
    for (const auto& s : doc.sentences)
      for (const auto& w : s) ++freq_[w];
    if (doc.label)
      labeled_.push_back(std::move(doc));
    else
      unlabeled_.push_back(std::move(doc));
  }

  const std::string& domain() const { return domain_; }
  const std::vector<Document>& labeled() const { return labeled_; }
  const std::vector<Document>& unlabeled() const { return unlabeled_; }
  /// Labeled documents followed by unlabeled ones.
  std::vector<Document> documents() const {
    auto out = labeled_;
    out.insert(out.end(), unlabeled_.begin(), unlabeled_.end());
    return out;
  }
  const std::map<std::string, std::size_t, std::less<>>& freq() const { return freq_; }

  std::size_t count(std::string_view word) const {
    auto it = freq_.find(word);
    return it == freq_.end() ? 0 : it->second;
  }

 private:
  std::string domain_;
  std::vector<Document> labeled_;
  std::vector<Document> unlabeled_;
  std::map<std::string, std::size_t, std::less<>> freq_;
};

namespace detail {

inline std::optional<Label> parse_label(const nlohmann::json& v, const std::string& where) {
  if (v.is_null()) return std::nullopt;
  if (v.is_string()) {
    const auto& s = v.get_ref<const std::string&>();
    if (s == "+1" || s == "1") return Label::Positive;
    if (s == "-1") return Label::Negative;
    throw Error(where + ": unknown label '" + s + "'");
  }
  if (v.is_number_integer()) {
    const auto n = v.get<long long>();
    if (n == 1) return Label::Positive;
    if (n == -1) return Label::Negative;
    throw Error(where + ": unknown label '" + std::to_string(n) + "'");
  }
  throw Error(where + ": unknown label " + v.dump());
}

}  // namespace detail

/// Appends the records of one newline-delimited JSON corpus file. Each
/// record is {"id": str, "text": str, "label": "+1" | "-1" (optional)}.
inline void append_corpus_file(DomainCorpus& corpus, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw Error(where + ": malformed record");
    }
    if (!rec.is_object()) throw Error(where + ": malformed record (not an object)");
    auto id = rec.find("id");
    auto text = rec.find("text");
    if (id == rec.end() || !id->is_string())
      throw Error(where + ": malformed record (missing string field 'id')");
    if (text == rec.end() || !text->is_string())
      throw Error(where + ": malformed record (missing string field 'text')");
    std::optional<Label> label;
    if (auto l = rec.find("label"); l != rec.end()) label = detail::parse_label(*l, where);
    corpus.add(make_document(id->get<std::string>(), corpus.domain(), text->get<std::string>(),
                             label));
  }
}

inline DomainCorpus load_corpus(const std::filesystem::path& path, std::string domain) {
  DomainCorpus corpus(std::move(domain));
  append_corpus_file(corpus, path);
  return corpus;
}

inline DomainCorpus load_corpus(const std::vector<std::filesystem::path>& paths,
                                std::string domain) {
  DomainCorpus corpus(std::move(domain));
  for (const auto& p : paths) append_corpus_file(corpus, p);
  return corpus;
}

inline void write_corpus_file(const std::filesystem::path& path,
                              const std::vector<Document>& docs) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write corpus file " + path.string());
  for (const auto& d : docs) {
    nlohmann::json rec{{"id", d.id}, {"text", d.text}};
    if (d.label) rec["label"] = label_string(*d.label);
    out << rec.dump() << '\n';
  }
}

struct DevSplit {
  std::vector<Document> train;
  std::vector<Document> dev;
};

/// Deterministic random dev split of the labeled documents. Both halves keep
/// the corpus order.
inline DevSplit split_dev(const DomainCorpus& corpus, std::size_t n, std::uint64_t seed) {
  const auto& labeled = corpus.labeled();
  if (n > labeled.size())
    throw Error("dev split of " + std::to_string(n) + " exceeds " +
                std::to_string(labeled.size()) + " labeled documents");
  std::vector<std::size_t> idx(labeled.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<char> in_dev(labeled.size(), 0);
  for (std::size_t i = 0; i < n; ++i) in_dev[idx[i]] = 1;
  DevSplit out;
  for (std::size_t i = 0; i < labeled.size(); ++i)
    (in_dev[i] ? out.dev : out.train).push_back(labeled[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

class Vocabulary {
 public:
  static constexpr int kCls = 0;
  static constexpr int kPad = 1;
  static constexpr int kUnk = 2;
  static constexpr int kMask = 3;
  static constexpr int kNumSpecial = 4;

  static constexpr std::string_view kClsToken = "[CLS]";
  static constexpr std::string_view kPadToken = "[PAD]";
  static constexpr std::string_view kUnkToken = "[UNK]";
  static constexpr std::string_view kMaskToken = "[MASK]";

  Vocabulary() : words_{std::string(kClsToken), std::string(kPadToken), std::string(kUnkToken),
                        std::string(kMaskToken)} {
    for (int i = 0; i < kNumSpecial; ++i) ids_.emplace(words_[i], i);
  }

  /// Words in ascending order so that ids do not depend on file order.
  static Vocabulary from_words(const WordSet& words) {
    Vocabulary v;
    for (const auto& w : words) v.add(w);
    return v;
  }

  static Vocabulary build(const std::vector<const DomainCorpus*>& corpora,
                          std::size_t min_count = 1) {
    std::map<std::string, std::size_t, std::less<>> total;
    for (const auto* c : corpora)
      for (const auto& [w, n] : c->freq()) total[w] += n;
    WordSet words;
    for (const auto& [w, n] : total)
      if (n >= min_count) words.insert(w);
    return from_words(words);
  }

  int id(std::string_view word) const {
    auto it = ids_.find(word);
    return it == ids_.end() ? kUnk : it->second;
  }
  bool contains(std::string_view word) const { return ids_.find(word) != ids_.end(); }
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return words_.size(); }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write vocabulary " + path.string());
    for (std::size_t i = kNumSpecial; i < words_.size(); ++i) out << words_[i] << '\n';
  }

  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open vocabulary " + path.string());
    Vocabulary v;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      if (v.contains(line))
        throw Error(path.string() + ":" + std::to_string(lineno) + ": duplicate word '" + line +
                    "'");
      v.add(line);
    }
    return v;
  }

 private:
  void add(const std::string& w) {
    if (ids_.count(w)) return;
    ids_.emplace(w, static_cast<int>(words_.size()));
    words_.push_back(w);
  }

  std::vector<std::string> words_;
  std::map<std::string, int, std::less<>> ids_;
};

/// One word per line; blank lines and lines starting with '#' are ignored.
inline WordSet load_word_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open word list " + path.string());
  WordSet out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    out.insert(line);
  }
  return out;
}

}  // namespace pivotkit
