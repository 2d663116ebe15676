#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "meddcr/errors.hpp"
#include "meddcr/text.hpp"

namespace meddcr {

enum class CodeSystem { cm, pcs };

enum class NodeKind { chapter, block, category, subcategory };

inline std::string to_string(NodeKind k) {
  switch (k) {
    case NodeKind::chapter: return "chapter";
    case NodeKind::block: return "block";
    case NodeKind::category: return "category";
    case NodeKind::subcategory: return "subcategory";
  }
  return "?";
}

inline std::optional<NodeKind> parse_kind(std::string_view s) {
  if (s == "chapter") return NodeKind::chapter;
  if (s == "block") return NodeKind::block;
  if (s == "category") return NodeKind::category;
  if (s == "subcategory") return NodeKind::subcategory;
  return std::nullopt;
}

/// Normalizes a raw code string: uppercase, whitespace stripped, CM codes get a
/// single dot after the third character once they are four or more characters
/// long, PCS codes (digit-initial) carry no dot. Idempotent on valid input.
/// Chapter numerals and block ranges are not codes and do not pass through here.
inline std::string canonicalize_code(std::string_view raw) {
  std::string bare;
  bare.reserve(raw.size());
  for (char ch : raw) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isspace(c) || c == '.') continue;
    if (!std::isalnum(c)) throw MalformedCode(std::string(raw), "invalid character");
    bare.push_back(static_cast<char>(std::toupper(c)));
  }
  if (bare.empty()) throw MalformedCode(std::string(raw), "empty");
  if (std::isdigit(static_cast<unsigned char>(bare[0]))) {
    // PCS: positional, up to 7 characters, never dotted.
    if (bare.size() > 7) throw MalformedCode(std::string(raw), "PCS code longer than 7 characters");
    return bare;
  }
  if (bare.size() < 3 || bare.size() > 7)
    throw MalformedCode(std::string(raw), "CM code must have 3-7 characters");
  if (bare.size() == 3) return bare;
  return bare.substr(0, 3) + "." + bare.substr(3);
}

struct IcdCode {
  std::string text;
  CodeSystem system = CodeSystem::cm;

  static IcdCode parse(std::string_view raw) {
    std::string t = canonicalize_code(raw);
    CodeSystem sys = std::isdigit(static_cast<unsigned char>(t[0])) ? CodeSystem::pcs : CodeSystem::cm;
    return {std::move(t), sys};
  }
};

struct TaxonomyNode {
  std::string code;
  std::string description;
  NodeKind kind = NodeKind::category;
  CodeSystem system = CodeSystem::cm;
  std::optional<std::string> parent;    // parent code name; absent for chapters
  std::vector<std::string> children;    // child code names, document order

  int id = -1;
  int parent_id = -1;
  std::vector<int> child_ids;
};

/// Indexed forest of ICD-10 codes. Immutable after load; all queries are
/// read-only and safe for unrestricted concurrent use.
///
/// A name may denote both a block and a category (the "B99" case); queries
/// take a prioritize_blocks flag selecting the interpretation.
class Taxonomy {
 public:
  const TaxonomyNode* find(std::string_view code, bool prioritize_blocks = false) const {
    std::string key = to_upper(trim(code));
    auto it = index_.find(key);
    if (it == index_.end()) {
      try {
        key = canonicalize_code(key);
      } catch (const MalformedCode&) {
        return nullptr;
      }
      it = index_.find(key);
      if (it == index_.end()) return nullptr;
    }
    const NameEntry& e = it->second;
    int id = -1;
    if (prioritize_blocks) {
      id = e.block >= 0 ? e.block : e.plain;
    } else {
      id = e.plain >= 0 ? e.plain : e.block;
    }
    return id >= 0 ? &nodes_[static_cast<std::size_t>(id)] : nullptr;
  }

  bool is_valid(std::string_view code) const { return find(code) != nullptr; }

  std::optional<std::string> parent_of(std::string_view code, bool prioritize_blocks = false) const {
    const TaxonomyNode& n = require(code, prioritize_blocks);
    if (n.parent_id < 0) return std::nullopt;
    return nodes_[static_cast<std::size_t>(n.parent_id)].code;
  }

  std::vector<std::string> children_of(std::string_view code, bool prioritize_blocks = false) const {
    return require(code, prioritize_blocks).children;
  }

  /// Proper ancestors, nearest first, up to the chapter.
  std::vector<std::string> ancestors_of(std::string_view code, bool prioritize_blocks = false) const {
    const TaxonomyNode* n = &require(code, prioritize_blocks);
    std::vector<std::string> out;
    while (n->parent_id >= 0) {
      n = &nodes_[static_cast<std::size_t>(n->parent_id)];
      out.push_back(n->code);
    }
    return out;
  }

  /// Proper descendants in depth-first document order.
  std::vector<std::string> descendants_of(std::string_view code, bool prioritize_blocks = false) const {
    const TaxonomyNode& n = require(code, prioritize_blocks);
    std::vector<std::string> out;
    collect_descendants(n.id, out);
    return out;
  }

  /// True iff a is a proper ancestor of b. A code is never its own ancestor.
  bool is_ancestor(std::string_view a, std::string_view b, bool prioritize_blocks = false) const {
    const TaxonomyNode& na = require(a, prioritize_blocks);
    const TaxonomyNode* nb = &require(b, prioritize_blocks);
    while (nb->parent_id >= 0) {
      nb = &nodes_[static_cast<std::size_t>(nb->parent_id)];
      if (nb->id == na.id) return true;
    }
    return false;
  }

  bool is_descendant(std::string_view a, std::string_view b, bool prioritize_blocks = false) const {
    return is_ancestor(b, a, prioritize_blocks);
  }

  /// Deepest node that is an ancestor-or-self of both; may therefore return
  /// one of the arguments. Absent when the codes sit in different chapters.
  std::optional<std::string> nearest_common_ancestor(std::string_view a, std::string_view b,
                                                     bool prioritize_blocks = false) const {
    const TaxonomyNode* na = &require(a, prioritize_blocks);
    const TaxonomyNode* nb = &require(b, prioritize_blocks);
    std::set<int> seen;
    for (const TaxonomyNode* p = na;; p = &nodes_[static_cast<std::size_t>(p->parent_id)]) {
      seen.insert(p->id);
      if (p->parent_id < 0) break;
    }
    for (const TaxonomyNode* p = nb;; p = &nodes_[static_cast<std::size_t>(p->parent_id)]) {
      if (seen.count(p->id)) return p->code;
      if (p->parent_id < 0) break;
    }
    return std::nullopt;
  }

  bool is_leaf(std::string_view code, bool prioritize_blocks = false) const {
    return require(code, prioritize_blocks).child_ids.empty();
  }

  const std::string& description_of(std::string_view code, bool prioritize_blocks = false) const {
    return require(code, prioritize_blocks).description;
  }

  /// Ranks codes by case-folded token overlap of the query against their
  /// descriptions (|query ∩ desc| / |query|); ties broken by code. Zero-score
  /// codes are never returned.
  std::vector<std::string> search_descriptions(std::string_view query, std::size_t limit) const {
    if (trim(query).empty()) throw EmptyQuery();
    auto qtoks = content_token_set(query);
    if (qtoks.empty()) return {};
    std::set<int> candidates;
    for (const auto& t : qtoks) {
      auto it = desc_index_.find(t);
      if (it == desc_index_.end()) continue;
      candidates.insert(it->second.begin(), it->second.end());
    }
    std::vector<std::pair<double, std::string>> scored;
    for (int id : candidates) {
      const TaxonomyNode& n = nodes_[static_cast<std::size_t>(id)];
      double s = token_overlap(qtoks, desc_tokens_[static_cast<std::size_t>(id)]);
      if (s > 0.0) scored.emplace_back(s, n.code);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
      if (x.first != y.first) return x.first > y.first;
      return x.second < y.second;
    });
    if (scored.size() > limit) scored.resize(limit);
    std::vector<std::string> out;
    out.reserve(scored.size());
    for (auto& [s, c] : scored) out.push_back(std::move(c));
    return out;
  }

  const std::vector<TaxonomyNode>& nodes() const { return nodes_; }
  const std::vector<std::string>& roots() const { return roots_; }
  std::size_t size() const { return nodes_.size(); }

  friend Taxonomy load_taxonomy(const std::string& path);

 private:
  struct NameEntry {
    int block = -1;
    int plain = -1;  // chapter, category or subcategory
  };

  const TaxonomyNode& require(std::string_view code, bool prioritize_blocks) const {
    const TaxonomyNode* n = find(code, prioritize_blocks);
    if (!n) throw UnknownCode(std::string(code));
    return *n;
  }

  void collect_descendants(int id, std::vector<std::string>& out) const {
    for (int c : nodes_[static_cast<std::size_t>(id)].child_ids) {
      out.push_back(nodes_[static_cast<std::size_t>(c)].code);
      collect_descendants(c, out);
    }
  }

  std::vector<TaxonomyNode> nodes_;
  std::unordered_map<std::string, NameEntry> index_;
  std::unordered_map<std::string, std::vector<int>> desc_index_;
  std::vector<std::set<std::string>> desc_tokens_;
  std::vector<std::string> roots_;
};

/// Loads the taxonomy TSV: one node per line, tab-separated
/// CODE, PARENT (empty for chapters), KIND, DESCRIPTION. '#' lines ignored.
inline Taxonomy load_taxonomy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open taxonomy file: " + path);

  Taxonomy tax;
  struct Raw {
    std::string parent;
    std::size_t line;
  };
  std::vector<Raw> raw;

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;

    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      std::size_t tab = line.find('\t', start);
      if (tab == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    if (fields.size() != 4) throw ParseError(lineno, "expected 4 tab-separated fields");

    TaxonomyNode node;
    node.code = to_upper(trim(fields[0]));
    std::string parent = to_upper(trim(fields[1]));
    auto kind = parse_kind(trim(fields[2]));
    node.description = trim(fields[3]);

    if (node.code.empty()) throw ParseError(lineno, "empty code");
    if (!kind) throw ParseError(lineno, "unknown kind '" + trim(fields[2]) + "'");
    node.kind = *kind;
    if (node.description.empty()) throw ParseError(lineno, "empty description for " + node.code);
    if (node.kind == NodeKind::chapter && !parent.empty())
      throw ParseError(lineno, "chapter " + node.code + " must not have a parent");
    if (node.kind != NodeKind::chapter && parent.empty())
      throw ParseError(lineno, node.code + " (" + to_string(node.kind) + ") requires a parent");
    if (!parent.empty()) node.parent = parent;
    node.system = std::isdigit(static_cast<unsigned char>(node.code[0])) ? CodeSystem::pcs : CodeSystem::cm;
    node.id = static_cast<int>(tax.nodes_.size());

    auto& entry = tax.index_[node.code];
    int& slot = node.kind == NodeKind::block ? entry.block : entry.plain;
    if (slot >= 0) throw DuplicateCode(node.code);
    slot = node.id;

    tax.nodes_.push_back(std::move(node));
    raw.push_back({parent, lineno});
  }

  // Resolve parents. A child's kind selects the interpretation of an
  // ambiguous parent name: categories hang off blocks, everything else
  // prefers the non-block node.
  for (std::size_t i = 0; i < tax.nodes_.size(); ++i) {
    TaxonomyNode& node = tax.nodes_[i];
    if (!node.parent) {
      tax.roots_.push_back(node.code);
      continue;
    }
    auto it = tax.index_.find(*node.parent);
    if (it == tax.index_.end())
      throw ParseError(raw[i].line, node.code + " references unknown parent " + *node.parent);
    const auto& e = it->second;
    int pid = -1;
    if (node.kind == NodeKind::category) {
      pid = e.block >= 0 ? e.block : e.plain;
    } else {
      pid = e.plain >= 0 ? e.plain : e.block;
    }
    if (pid == node.id) pid = (e.block == node.id) ? e.plain : e.block;  // never self
    if (pid < 0) throw ParseError(raw[i].line, node.code + " references unknown parent " + *node.parent);
    node.parent_id = pid;
    tax.nodes_[static_cast<std::size_t>(pid)].child_ids.push_back(node.id);
    tax.nodes_[static_cast<std::size_t>(pid)].children.push_back(node.code);
  }

  // Forest check: every parent chain must terminate at a root.
  {
    std::vector<int> state(tax.nodes_.size(), 0);  // 0 unvisited, 1 in progress, 2 done
    for (std::size_t i = 0; i < tax.nodes_.size(); ++i) {
      std::vector<int> chain;
      int cur = static_cast<int>(i);
      while (cur >= 0 && state[static_cast<std::size_t>(cur)] == 0) {
        state[static_cast<std::size_t>(cur)] = 1;
        chain.push_back(cur);
        cur = tax.nodes_[static_cast<std::size_t>(cur)].parent_id;
      }
      if (cur >= 0 && state[static_cast<std::size_t>(cur)] == 1)
        throw CycleError(tax.nodes_[static_cast<std::size_t>(cur)].code);
      for (int id : chain) state[static_cast<std::size_t>(id)] = 2;
    }
  }

  // Description token index.
  tax.desc_tokens_.resize(tax.nodes_.size());
  for (const auto& node : tax.nodes_) {
    auto toks = content_token_set(node.description);
    for (const auto& t : toks) tax.desc_index_[t].push_back(node.id);
    tax.desc_tokens_[static_cast<std::size_t>(node.id)] = std::move(toks);
  }

  return tax;
}

}  // namespace meddcr
