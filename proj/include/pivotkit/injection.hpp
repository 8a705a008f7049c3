#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pivotkit/corpus.hpp"
#include "pivotkit/error.hpp"
#include "pivotkit/kg.hpp"
#include "pivotkit/pivot_bank.hpp"

namespace pivotkit {

/// A fact word hung off an anchor. offset is the word's slot in the triplet
/// minus the anchor's slot, so negative offsets precede the anchor.
struct BranchToken {
  std::string word;
  int offset = 0;
  bool operator==(const BranchToken&) const = default;
};

struct Branch {
  std::size_t anchor_index = 0;  // trunk position
  std::vector<BranchToken> tokens;
  double confidence = 0.0;
  bool operator==(const Branch&) const = default;
};

struct SentenceTree {
  std::vector<std::string> trunk;
  std::vector<Branch> branches;
  bool operator==(const SentenceTree&) const = default;
};

inline constexpr std::size_t kDefaultMaxFacts = 2;
inline constexpr std::size_t kDefaultMaxSeqLen = 128;

/// Attaches up to max_facts KG facts (highest confidence first) to every
/// trunk token that is a current pivot.
inline SentenceTree inject(const std::vector<std::string>& sentence, const KnowledgeGraph& kg,
                           const PivotSet& pivots, std::size_t max_facts = kDefaultMaxFacts) {
  SentenceTree tree{sentence, {}};
  for (std::size_t i = 0; i < sentence.size(); ++i) {
    if (!pivots.contains(sentence[i])) continue;
    const auto* facts = kg.find(sentence[i]);
    if (!facts) continue;
    const std::size_t n = std::min(max_facts, facts->size());
    for (std::size_t f = 0; f < n; ++f) {
      const auto& fact = (*facts)[f];
      Branch b{i, {}, fact.confidence};
      for (std::size_t k = 0; k < 3; ++k) {
        if (k == fact.anchor_slot) continue;
        b.tokens.push_back(
            {fact.elements[k], static_cast<int>(k) - static_cast<int>(fact.anchor_slot)});
      }
      tree.branches.push_back(std::move(b));
    }
  }
  return tree;
}

/// Token sequence fed to the encoder. tokens[0] is [CLS]; visible is a
/// row-major side x side 0/1 matrix.
struct FlattenedInput {
  std::vector<std::string> tokens;
  std::vector<std::size_t> soft_pos;
  std::vector<std::uint8_t> visible;
  std::vector<std::uint8_t> trunk_mask;

  std::size_t size() const { return tokens.size(); }
  bool visible_at(std::size_t i, std::size_t j) const { return visible[i * tokens.size() + j] != 0; }
  bool operator==(const FlattenedInput&) const = default;
};

namespace detail {

inline constexpr int kTrunkNode = -1;

/// Flattened order of a tree. branch[k] is the index of the branch owning
/// token k, or kTrunkNode for [CLS] and trunk tokens.
struct TreeLayout {
  std::vector<std::string> tokens;
  std::vector<std::size_t> soft_pos;
  std::vector<int> branch;
  std::vector<std::size_t> anchor_flat;  // branch index -> flat position of its anchor
};

inline TreeLayout layout_tree(const SentenceTree& tree) {
  for (const auto& b : tree.branches)
    if (b.anchor_index >= tree.trunk.size()) throw Error("branch anchor index out of range");
  TreeLayout out;
  out.anchor_flat.assign(tree.branches.size(), 0);
  out.tokens.emplace_back(Vocabulary::kClsToken);
  out.soft_pos.push_back(0);
  out.branch.push_back(kTrunkNode);
  for (std::size_t i = 0; i < tree.trunk.size(); ++i) {
    const std::size_t anchor_pos = i + 1;
    for (std::size_t b = 0; b < tree.branches.size(); ++b) {
      if (tree.branches[b].anchor_index != i) continue;
      for (const auto& t : tree.branches[b].tokens) {
        if (t.offset >= 0) continue;
        const long p = static_cast<long>(anchor_pos) + t.offset;
        out.tokens.push_back(t.word);
        out.soft_pos.push_back(static_cast<std::size_t>(std::max(1L, p)));
        out.branch.push_back(static_cast<int>(b));
      }
    }
    for (std::size_t b = 0; b < tree.branches.size(); ++b)
      if (tree.branches[b].anchor_index == i) out.anchor_flat[b] = out.tokens.size();
    out.tokens.push_back(tree.trunk[i]);
    out.soft_pos.push_back(anchor_pos);
    out.branch.push_back(kTrunkNode);
    for (std::size_t b = 0; b < tree.branches.size(); ++b) {
      if (tree.branches[b].anchor_index != i) continue;
      for (const auto& t : tree.branches[b].tokens) {
        if (t.offset < 0) continue;
        out.tokens.push_back(t.word);
        out.soft_pos.push_back(anchor_pos + static_cast<std::size_t>(t.offset));
        out.branch.push_back(static_cast<int>(b));
      }
    }
  }
  return out;
}

inline std::vector<std::uint8_t> visible_from_layout(const TreeLayout& l) {
  const std::size_t n = l.tokens.size();
  std::vector<std::uint8_t> vis(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const int bi = l.branch[i];
      const int bj = l.branch[j];
      bool v = false;
      if (i == j || (bi == kTrunkNode && bj == kTrunkNode) || (bi != kTrunkNode && bi == bj))
        v = true;
      else if (bi != kTrunkNode && bj == kTrunkNode)
        v = l.anchor_flat[static_cast<std::size_t>(bi)] == j;
      else if (bj != kTrunkNode && bi == kTrunkNode)
        v = l.anchor_flat[static_cast<std::size_t>(bj)] == i;
      vis[i * n + j] = v ? 1 : 0;
    }
  }
  return vis;
}

}  // namespace detail

/// visible(i, j) holds when both tokens are [CLS]/trunk, when both belong to
/// the same branch, or when one is a branch token and the other its anchor.
inline std::vector<std::uint8_t> build_visible_matrix(const SentenceTree& tree) {
  return detail::visible_from_layout(detail::layout_tree(tree));
}

struct FlattenOptions {
  std::size_t max_len = kDefaultMaxSeqLen;
  std::string sentence_id;
};

/// Flattens the tree into [CLS] + trunk with branch tokens inserted around
/// their anchors. Trunk token i gets soft position i + 1; a branch token gets
/// its anchor's position plus its signed offset, floored at 1. When the
/// sequence is longer than max_len, the lowest-confidence branches are
/// dropped first.
inline FlattenedInput flatten(SentenceTree tree, const FlattenOptions& opts = {}) {
  if (tree.trunk.size() + 1 > opts.max_len)
    throw Error("sentence " + (opts.sentence_id.empty() ? std::string("<unnamed>") : opts.sentence_id) +
                ": " + std::to_string(tree.trunk.size() + 1) +
                " trunk tokens exceed max sequence length " + std::to_string(opts.max_len));
  auto total = [&] {
    std::size_t n = tree.trunk.size() + 1;
    for (const auto& b : tree.branches) n += b.tokens.size();
    return n;
  };
  while (total() > opts.max_len) {
    auto lowest = tree.branches.begin();
    for (auto it = tree.branches.begin(); it != tree.branches.end(); ++it)
      if (it->confidence <= lowest->confidence) lowest = it;
    tree.branches.erase(lowest);
  }
  auto layout = detail::layout_tree(tree);
  FlattenedInput out;
  out.visible = detail::visible_from_layout(layout);
  out.trunk_mask.reserve(layout.tokens.size());
  for (int b : layout.branch) out.trunk_mask.push_back(b == detail::kTrunkNode ? 1 : 0);
  out.tokens = std::move(layout.tokens);
  out.soft_pos = std::move(layout.soft_pos);
  return out;
}

// ---------------------------------------------------------------------------
// Injection dump: JSON header line then one record per sentence. The visible
// matrix is run-length encoded over its row-major bits: "first" is the value
// of the first run and runs alternate from there.

inline constexpr std::string_view kInjectionFormat = "pivotkit-injection";
inline constexpr int kInjectionVersion = 1;

inline nlohmann::json encode_visible_rle(const std::vector<std::uint8_t>& bits, std::size_t side) {
  std::vector<std::size_t> runs;
  const int first = bits.empty() ? 1 : bits[0];
  int cur = first;
  std::size_t len = 0;
  for (auto b : bits) {
    if (b == cur) {
      ++len;
    } else {
      runs.push_back(len);
      cur = b;
      len = 1;
    }
  }
  if (len) runs.push_back(len);
  return {{"side", side}, {"first", first}, {"runs", runs}};
}

inline std::vector<std::uint8_t> decode_visible_rle(const nlohmann::json& j, std::size_t side) {
  if (j.at("side").get<std::size_t>() != side) throw Error("visible matrix side mismatch");
  int cur = j.at("first").get<int>();
  if (cur != 0 && cur != 1) throw Error("visible matrix first bit must be 0 or 1");
  std::vector<std::uint8_t> bits;
  bits.reserve(side * side);
  for (auto run : j.at("runs").get<std::vector<std::size_t>>()) {
    bits.insert(bits.end(), run, static_cast<std::uint8_t>(cur));
    cur ^= 1;
  }
  if (bits.size() != side * side) throw Error("visible matrix runs do not cover side^2 bits");
  return bits;
}

inline nlohmann::json injection_record(const std::string& id, const FlattenedInput& in) {
  return {{"id", id},
          {"tokens", in.tokens},
          {"soft_pos", in.soft_pos},
          {"visible", encode_visible_rle(in.visible, in.size())},
          {"trunk_mask", in.trunk_mask}};
}

inline FlattenedInput parse_injection_record(const nlohmann::json& rec) {
  FlattenedInput out;
  out.tokens = rec.at("tokens").get<std::vector<std::string>>();
  out.soft_pos = rec.at("soft_pos").get<std::vector<std::size_t>>();
  out.trunk_mask = rec.at("trunk_mask").get<std::vector<std::uint8_t>>();
  const std::size_t n = out.tokens.size();
  if (out.soft_pos.size() != n || out.trunk_mask.size() != n)
    throw Error("injection record field lengths disagree");
  out.visible = decode_visible_rle(rec.at("visible"), n);
  return out;
}

inline nlohmann::json injection_header() {
  return {{"format", kInjectionFormat}, {"version", kInjectionVersion}};
}

struct InjectionRecord {
  std::string id;
  FlattenedInput input;
};

inline std::vector<InjectionRecord> read_injection_dump(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open injection dump " + path.string());
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  std::vector<InjectionRecord> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    try {
      auto j = nlohmann::json::parse(line);
      if (!header) {
        if (j.value("format", std::string{}) != kInjectionFormat ||
            j.value("version", 0) != kInjectionVersion)
          throw Error(where + ": not a pivotkit-injection v1 file");
        header = true;
        continue;
      }
      out.push_back({j.at("id").get<std::string>(), parse_injection_record(j)});
    } catch (const nlohmann::json::exception& e) {
      throw Error(where + ": malformed injection record (" + e.what() + ")");
    } catch (const Error& e) {
      if (std::string_view(e.what()).rfind(where, 0) == 0) throw;
      throw Error(where + ": " + e.what());
    }
  }
  if (!header) throw Error(path.string() + ": empty injection dump");
  return out;
}

}  // namespace pivotkit
