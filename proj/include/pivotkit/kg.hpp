#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <iterator>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "pivotkit/corpus.hpp"
#include "pivotkit/error.hpp"
#include "pivotkit/pivot_bank.hpp"

namespace pivotkit {

/// Dense row-major square matrix.
struct SquareMatrix {
  std::size_t side = 0;
  std::vector<double> values;

  SquareMatrix() = default;
  explicit SquareMatrix(std::size_t n, double fill = 0.0) : side(n), values(n * n, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return values[i * side + j]; }
  double operator()(std::size_t i, std::size_t j) const { return values[i * side + j]; }
};

enum class AttentionProvenance { BuiltinEncoder, BridgeFile };

/// Word-level attention of one sentence: at(i, j) is how much word i attends
/// to word j, averaged over heads and over the tokens of each word.
struct WordAttentionMatrix {
  std::vector<std::string> words;
  SquareMatrix matrix;
  AttentionProvenance provenance = AttentionProvenance::BuiltinEncoder;

  std::size_t size() const { return words.size(); }
  double at(std::size_t i, std::size_t j) const { return matrix(i, j); }

  void validate(const std::string& where) const {
    if (matrix.side != words.size() || matrix.values.size() != words.size() * words.size())
      throw Error(where + ": attention matrix side " + std::to_string(matrix.side) +
                  " does not match " + std::to_string(words.size()) + " words");
    for (double v : matrix.values)
      if (!std::isfinite(v) || v < 0.0)
        throw Error(where + ": attention entries must be finite and nonnegative");
  }
};

/// Half-open token range [begin, end) covered by one word.
struct WordSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Mean over heads, then mean over each word's token rows, then over its
/// token columns.
inline WordAttentionMatrix average_attention(std::span<const SquareMatrix> heads,
                                             std::span<const WordSpan> spans,
                                             std::vector<std::string> words,
                                             AttentionProvenance provenance) {
  if (heads.empty()) throw Error("average_attention needs at least one head");
  const std::size_t n = heads[0].side;
  for (const auto& h : heads)
    if (h.side != n || h.values.size() != n * n)
      throw Error("attention heads must be square and equally sized");
  if (words.size() != spans.size()) throw Error("one span per word is required");
  std::size_t next = 0;
  for (const auto& s : spans) {
    if (s.begin != next) throw Error("word spans overlap or leave a gap at token " +
                                     std::to_string(next));
    if (s.end <= s.begin) throw Error("empty word span at token " + std::to_string(s.begin));
    next = s.end;
  }
  if (next != n) throw Error("word spans do not cover all " + std::to_string(n) + " tokens");

  SquareMatrix mean(n);
  for (const auto& h : heads)
    for (std::size_t i = 0; i < n * n; ++i) mean.values[i] += h.values[i];
  for (auto& v : mean.values) v /= static_cast<double>(heads.size());

  const std::size_t w = spans.size();
  std::vector<double> rows(w * n, 0.0);
  for (std::size_t a = 0; a < w; ++a) {
    const double len = static_cast<double>(spans[a].end - spans[a].begin);
    for (std::size_t i = spans[a].begin; i < spans[a].end; ++i)
      for (std::size_t j = 0; j < n; ++j) rows[a * n + j] += mean(i, j);
    for (std::size_t j = 0; j < n; ++j) rows[a * n + j] /= len;
  }
  WordAttentionMatrix out{std::move(words), SquareMatrix(w), provenance};
  for (std::size_t a = 0; a < w; ++a)
    for (std::size_t b = 0; b < w; ++b) {
      double s = 0.0;
      for (std::size_t j = spans[b].begin; j < spans[b].end; ++j) s += rows[a * n + j];
      out.matrix(a, b) = s / static_cast<double>(spans[b].end - spans[b].begin);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Facts

/// Three words in sentence order, one of which is the anchor pivot.
/// anchor_slot is the first slot holding the anchor word.
struct FactTriplet {
  std::array<std::string, 3> elements;
  std::size_t anchor_slot = 0;
  double confidence = 0.0;

  const std::string& anchor() const { return elements[anchor_slot]; }
  bool operator==(const FactTriplet&) const = default;
};

/// For each occurrence of a pool word p, pairs p with the two other words it
/// attends to most (ties: lower sentence index). Confidence is
/// M[p][w1] + M[p][w2]; candidates with zero confidence are dropped.
inline std::vector<FactTriplet> extract_candidate_facts(const WordAttentionMatrix& attn,
                                                        const CandidatePool& pool) {
  std::vector<FactTriplet> out;
  const std::size_t n = attn.size();
  if (n < 3) return out;
  for (std::size_t p = 0; p < n; ++p) {
    if (!pool.contains(attn.words[p])) continue;
    std::size_t first = n;
    std::size_t second = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == p) continue;
      const double v = attn.at(p, j);
      if (first == n || v > attn.at(p, first)) {
        second = first;
        first = j;
      } else if (second == n || v > attn.at(p, second)) {
        second = j;
      }
    }
    const double confidence = attn.at(p, first) + attn.at(p, second);
    if (!(confidence > 0.0)) continue;
    std::array<std::size_t, 3> pos{p, first, second};
    std::sort(pos.begin(), pos.end());
    FactTriplet f;
    for (std::size_t k = 0; k < 3; ++k) f.elements[k] = attn.words[pos[k]];
    f.anchor_slot = static_cast<std::size_t>(
        std::find(f.elements.begin(), f.elements.end(), attn.words[p]) - f.elements.begin());
    f.confidence = confidence;
    out.push_back(std::move(f));
  }
  return out;
}

/// Keeps facts with confidence >= threshold and no stopword element.
inline std::vector<FactTriplet> filter_facts(std::span<const FactTriplet> candidates,
                                             double threshold, const WordSet& stopwords) {
  if (!(threshold >= 0.0)) throw Error("fact threshold must be nonnegative");
  std::vector<FactTriplet> out;
  for (const auto& f : candidates) {
    if (f.confidence < threshold) continue;
    if (std::any_of(f.elements.begin(), f.elements.end(),
                    [&](const std::string& w) { return stopwords.count(w) > 0; }))
      continue;
    out.push_back(f);
  }
  return out;
}

/// Rounds to the 9 significant digits the KG file stores, so saved graphs
/// reload to identical values.
inline double round_confidence(double v) { return std::strtod(format_double(v, 9).c_str(), nullptr); }

// ---------------------------------------------------------------------------
// Knowledge graph

class KnowledgeGraph {
 public:
  using FactList = std::vector<FactTriplet>;

  KnowledgeGraph() = default;
  explicit KnowledgeGraph(double threshold, std::string source = {})
      : threshold_(threshold), source_(std::move(source)) {}

  /// Inserts a fact; a duplicate (same words and anchor) keeps the larger
  /// confidence. Call finalize() before reading.
  void add(FactTriplet fact) {
    auto& list = facts_[fact.anchor()];
    for (auto& f : list) {
      if (f.elements == fact.elements && f.anchor_slot == fact.anchor_slot) {
        f.confidence = std::max(f.confidence, fact.confidence);
        return;
      }
    }
    list.push_back(std::move(fact));
  }

  /// Sorts each anchor's facts by confidence descending, then by words.
  void finalize() {
    for (auto& [anchor, list] : facts_)
      std::sort(list.begin(), list.end(), [](const FactTriplet& a, const FactTriplet& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        if (a.elements != b.elements) return a.elements < b.elements;
        return a.anchor_slot < b.anchor_slot;
      });
  }

  const FactList* find(std::string_view anchor) const {
    auto it = facts_.find(anchor);
    return it == facts_.end() ? nullptr : &it->second;
  }

  const std::map<std::string, FactList, std::less<>>& facts() const { return facts_; }
  double threshold() const { return threshold_; }
  const std::string& source() const { return source_; }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [a, l] : facts_) n += l.size();
    return n;
  }
  bool empty() const { return facts_.empty(); }

  bool operator==(const KnowledgeGraph&) const = default;

 private:
  std::map<std::string, FactList, std::less<>> facts_;
  double threshold_ = 0.0;
  std::string source_;
};

/// A sentence handed to an attention provider.
struct SentenceRef {
  std::string_view doc_id;
  std::size_t index = 0;
  std::span<const std::string> words;

  std::string id() const { return std::string(doc_id) + ":" + std::to_string(index); }
};

using AttentionProvider = std::function<WordAttentionMatrix(const SentenceRef&)>;

struct KgOptions {
  double threshold = 0.3;
  WordSet stopwords;
  /// Rescale each attention row to sum to 1 before extraction.
  bool normalize_rows = false;
};

namespace detail {

inline void normalize_rows(WordAttentionMatrix& m) {
  const std::size_t n = m.size();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += m.matrix(i, j);
    if (s > 0.0)
      for (std::size_t j = 0; j < n; ++j) m.matrix(i, j) /= s;
  }
}

}  // namespace detail

/// Extracts, filters and merges facts over every sentence of the target's
/// unlabeled documents. Facts are anchored on pool words.
inline KnowledgeGraph build_kg(const DomainCorpus& target, const CandidatePool& pool,
                               const AttentionProvider& provider, const KgOptions& opts) {
  KnowledgeGraph kg(opts.threshold, target.domain());
  if (pool.empty()) return kg;
  for (const auto& doc : target.unlabeled()) {
    for (std::size_t si = 0; si < doc.sentences.size(); ++si) {
      const auto& sentence = doc.sentences[si];
      if (sentence.size() < 3) continue;
      if (std::none_of(sentence.begin(), sentence.end(),
                       [&](const std::string& w) { return pool.contains(w); }))
        continue;
      SentenceRef ref{doc.id, si, sentence};
      WordAttentionMatrix attn;
      try {
        attn = provider(ref);
        attn.validate("sentence " + ref.id());
      } catch (const std::exception& e) {
        throw Error("attention provider failed on sentence " + ref.id() + ": " + e.what());
      }
      if (attn.words != sentence)
        throw Error("attention provider returned different words for sentence " + ref.id());
      if (opts.normalize_rows) detail::normalize_rows(attn);
      auto candidates = extract_candidate_facts(attn, pool);
      for (auto& f : candidates) f.confidence = round_confidence(f.confidence);
      for (auto& f : filter_facts(candidates, opts.threshold, opts.stopwords)) kg.add(std::move(f));
    }
  }
  kg.finalize();
  return kg;
}

// ---------------------------------------------------------------------------
// KG file: header line then anchor<TAB>w1<TAB>w2<TAB>w3<TAB>confidence

inline constexpr std::string_view kKgHeaderPrefix = "pivotkit-kg v";
inline constexpr int kKgVersion = 1;

inline void save_kg(const std::filesystem::path& path, const KnowledgeGraph& kg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write KG file " + path.string());
  out << kKgHeaderPrefix << kKgVersion << " threshold=" << format_double(kg.threshold(), 9);
  if (!kg.source().empty()) out << " source=" << kg.source();
  out << '\n';
  for (const auto& [anchor, list] : kg.facts())
    for (const auto& f : list)
      out << anchor << '\t' << f.elements[0] << '\t' << f.elements[1] << '\t' << f.elements[2]
          << '\t' << format_double(f.confidence, 9) << '\n';
}

inline KnowledgeGraph load_kg(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open KG file " + path.string());
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string name = path.string();

  std::size_t pos = 0;
  std::size_t lineno = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= content.size()) return false;
    ++lineno;
    const auto nl = content.find('\n', pos);
    if (nl == std::string::npos)
      throw Error(name + ":" + std::to_string(lineno) + ": truncated line (no newline)");
    line = std::string_view(content).substr(pos, nl - pos);
    pos = nl + 1;
    return true;
  };

  std::string_view line;
  if (!next_line(line)) throw Error(name + ":1: empty KG file");
  if (line.rfind(kKgHeaderPrefix, 0) != 0) throw Error(name + ":1: not a pivotkit-kg file");
  std::istringstream header{std::string(line.substr(kKgHeaderPrefix.size()))};
  int version = 0;
  header >> version;
  if (version != kKgVersion)
    throw Error(name + ":1: unsupported KG version " + std::to_string(version));
  double threshold = -1.0;
  std::string source;
  std::string field;
  while (header >> field) {
    if (field.rfind("threshold=", 0) == 0)
      threshold = parse_double(std::string_view(field).substr(10), name + ":1");
    else if (field.rfind("source=", 0) == 0)
      source = field.substr(7);
    else
      throw Error(name + ":1: unknown header field '" + field + "'");
  }
  if (threshold < 0.0) throw Error(name + ":1: missing threshold");

  KnowledgeGraph kg(threshold, source);
  while (next_line(line)) {
    const std::string where = name + ":" + std::to_string(lineno);
    auto f = split_tabs(line);
    if (f.size() != 5) throw Error(where + ": expected 5 tab-separated fields");
    FactTriplet fact;
    for (std::size_t k = 0; k < 3; ++k) {
      if (f[k + 1].empty()) throw Error(where + ": empty fact element");
      fact.elements[k] = std::string(f[k + 1]);
    }
    auto it = std::find(fact.elements.begin(), fact.elements.end(), f[0]);
    if (it == fact.elements.end()) throw Error(where + ": anchor is not a fact element");
    fact.anchor_slot = static_cast<std::size_t>(it - fact.elements.begin());
    fact.confidence = parse_double(f[4], where);
    kg.add(std::move(fact));
  }
  kg.finalize();
  return kg;
}

// ---------------------------------------------------------------------------
// Attention interchange file: a JSON header line, then one JSON record per
// sentence {"sentence_id", "words", "matrix"} with the matrix row-major.

inline constexpr std::string_view kAttentionFormat = "pivotkit-attention";
inline constexpr int kAttentionVersion = 1;

struct AttentionRecord {
  std::string sentence_id;
  WordAttentionMatrix attention;
};

class AttentionFileWriter {
 public:
  explicit AttentionFileWriter(const std::filesystem::path& path) : out_(path) {
    if (!out_) throw Error("cannot write attention file " + path.string());
    out_ << nlohmann::json{{"format", kAttentionFormat}, {"version", kAttentionVersion}}.dump()
         << '\n';
  }

  void write(const std::string& sentence_id, const WordAttentionMatrix& m) {
    out_ << nlohmann::json{{"sentence_id", sentence_id},
                           {"words", m.words},
                           {"matrix", m.matrix.values}}
                .dump()
         << '\n';
  }

 private:
  std::ofstream out_;
};

inline std::vector<AttentionRecord> read_attention_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open attention file " + path.string());
  const std::string name = path.string();
  std::string line;
  std::size_t lineno = 0;
  std::vector<AttentionRecord> out;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = name + ":" + std::to_string(lineno);
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw Error(where + ": malformed attention record");
    }
    if (!have_header) {
      if (rec.value("format", std::string{}) != kAttentionFormat)
        throw Error(where + ": not a pivotkit-attention file");
      if (rec.value("version", 0) != kAttentionVersion)
        throw Error(where + ": unsupported attention file version");
      have_header = true;
      continue;
    }
    try {
      AttentionRecord r;
      r.sentence_id = rec.at("sentence_id").get<std::string>();
      r.attention.words = rec.at("words").get<std::vector<std::string>>();
      r.attention.matrix.side = r.attention.words.size();
      r.attention.matrix.values = rec.at("matrix").get<std::vector<double>>();
      r.attention.provenance = AttentionProvenance::BridgeFile;
      r.attention.validate(where);
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error(where + ": malformed attention record (" + e.what() + ")");
    }
  }
  if (!have_header) throw Error(name + ": empty attention file");
  return out;
}

/// Serves matrices from an attention file by sentence id ("<doc id>:<index>").
class AttentionFileProvider {
 public:
  explicit AttentionFileProvider(const std::filesystem::path& path) {
    for (auto& r : read_attention_file(path)) {
      auto id = r.sentence_id;
      if (!records_.emplace(std::move(id), std::move(r.attention)).second)
        throw Error(path.string() + ": duplicate sentence id '" + r.sentence_id + "'");
    }
  }

  WordAttentionMatrix operator()(const SentenceRef& ref) const {
    auto it = records_.find(ref.id());
    if (it == records_.end()) throw Error("no attention record for sentence " + ref.id());
    if (!std::equal(it->second.words.begin(), it->second.words.end(), ref.words.begin(),
                    ref.words.end()))
      throw Error("attention record words differ from corpus tokens for sentence " + ref.id());
    return it->second;
  }

  std::size_t size() const { return records_.size(); }

 private:
  std::unordered_map<std::string, WordAttentionMatrix> records_;
};

}  // namespace pivotkit
