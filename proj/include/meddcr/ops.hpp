#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "meddcr/errors.hpp"
#include "meddcr/taxonomy.hpp"
#include "meddcr/text.hpp"

namespace meddcr {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

enum class CueKind { affirmed, negated, family_history, hypothetical, ruled_out };

inline std::string to_string(CueKind c) {
  switch (c) {
    case CueKind::affirmed: return "affirmed";
    case CueKind::negated: return "negated";
    case CueKind::family_history: return "family_history";
    case CueKind::hypothetical: return "hypothetical";
    case CueKind::ruled_out: return "ruled_out";
  }
  return "?";
}

inline std::optional<CueKind> parse_cue(std::string_view s) {
  if (s == "affirmed") return CueKind::affirmed;
  if (s == "negated") return CueKind::negated;
  if (s == "family_history") return CueKind::family_history;
  if (s == "hypothetical") return CueKind::hypothetical;
  if (s == "ruled_out") return CueKind::ruled_out;
  return std::nullopt;
}

/// Cues that bar a mention from feeding candidate proposal.
inline bool cue_excluded(CueKind c) { return c != CueKind::affirmed; }

struct EntityMention {
  std::string surface;                 // verbatim slice of the note
  std::size_t begin = 0;
  std::size_t end = 0;                 // [begin, end)
  CueKind cue = CueKind::affirmed;
  std::vector<std::string> alt_surfaces;  // synonym expansions, not in the note
};

struct EvidenceSnippet {
  std::string text;
  std::size_t begin = 0;
  std::size_t end = 0;
  int window = 0;  // token budget the snippet was clipped to
};

struct CandidateCode {
  std::string code;
  std::set<std::string> sources;
  std::map<std::string, std::set<int>> sample_hits;  // channel key -> sample indices

  int votes = 0;
  double vote_ratio = 0.0;
  bool vote_stats_set = false;

  std::string description;
  bool description_set = false;

  double m_desc = 0.0;
  bool m_desc_set = false;

  bool judge_keep = false;
  double judge_conf = 0.0;
  bool judge_set = false;

  std::vector<EvidenceSnippet> evidence;
  double evidence_overlap = 0.0;
  bool evidence_set = false;

  double rank_score = 0.0;
  bool rank_set = false;
  double rank_penalty = 0.0;
};

/// The currency of the coding pipeline: surviving candidates plus the valid
/// candidates that were filtered out (the fallback pool), with per-channel
/// sample bookkeeping for self-consistency voting.
struct CandidatePool {
  std::map<std::string, CandidateCode> kept;
  std::map<std::string, CandidateCode> dropped;
  std::map<std::string, int> channel_samples;  // e.g. "term#2" -> 3

  int total_samples() const {
    int n = 0;
    for (const auto& [c, k] : channel_samples) n += k;
    return n;
  }
};

struct RankedResult {
  std::vector<CandidateCode> items;  // rank_score holds the listed score
  std::size_t fallback_start = 0;
};

// ---------------------------------------------------------------------------
// Note sectioning
// ---------------------------------------------------------------------------

struct SectionConfig {
  std::vector<std::string> keep_headers = {
      "reason for visit", "chief complaint",     "history of present illness",
      "assessment",       "impression",          "diagnosis",
      "assessment and plan"};
};

inline bool looks_like_header(const std::string& line, std::string* header_out) {
  std::size_t colon = line.find(':');
  if (colon == std::string::npos || colon == 0 || colon > 40) return false;
  std::string head = line.substr(0, colon);
  for (char c : head) {
    if (!std::isalpha(static_cast<unsigned char>(c)) && c != ' ' && c != '/') return false;
  }
  if (header_out) *header_out = to_lower(trim(head));
  return true;
}

/// Keeps reason-for-visit and assessment-style sections when headers are
/// detectable; otherwise returns the whole note.
inline std::string select_sections(const std::string& note, const SectionConfig& cfg = {}) {
  std::vector<std::string> lines;
  {
    std::istringstream in(note);
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
  }
  std::set<std::string> keep(cfg.keep_headers.begin(), cfg.keep_headers.end());
  bool any_header = false;
  bool in_kept = false;
  std::vector<std::string> out;
  for (const auto& line : lines) {
    std::string header;
    if (looks_like_header(line, &header)) {
      any_header = true;
      in_kept = keep.count(header) > 0;
    }
    if (in_kept) out.push_back(line);
  }
  if (!any_header || out.empty()) return note;
  std::string joined;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (i) joined.push_back('\n');
    joined += out[i];
  }
  return joined;
}

/// Lexical guard for assertion cues: inspects the text right before a mention
/// and upgrades `affirmed` to the matching exclusion cue. Never downgrades.
inline CueKind guard_cue(const std::string& note, std::size_t begin, CueKind reported) {
  if (cue_excluded(reported)) return reported;
  std::size_t from = begin > 40 ? begin - 40 : 0;
  std::string context = to_lower(note.substr(from, begin - from));
  auto ends_near = [&](const std::string& pat) {
    std::size_t pos = context.rfind(pat);
    return pos != std::string::npos && context.size() - (pos + pat.size()) <= 12;
  };
  if (ends_near("family history of")) return CueKind::family_history;
  for (const char* pat : {"no ", "not ", "denies ", "denied ", "negative for "}) {
    if (ends_near(pat)) return CueKind::negated;
  }
  for (const char* pat : {"ruled out", "rule out", "r/o "}) {
    if (ends_near(pat)) return CueKind::ruled_out;
  }
  for (const char* pat : {"possible ", "suspected ", "probable ", "concern for "}) {
    if (ends_near(pat)) return CueKind::hypothetical;
  }
  return reported;
}

// ---------------------------------------------------------------------------
// Pool primitives
// ---------------------------------------------------------------------------

/// Canonicalizes and inserts a code into the pool, merging source tags and
/// sample membership. Returns nullptr when the code cannot be canonicalized.
inline CandidateCode* pool_add(CandidatePool& pool, const std::string& raw_code,
                               const std::string& source, const std::string& channel_key = "",
                               int sample_index = -1) {
  std::string code;
  try {
    code = canonicalize_code(raw_code);
  } catch (const MalformedCode&) {
    return nullptr;
  }
  CandidateCode& c = pool.kept[code];
  c.code = code;
  c.sources.insert(source);
  if (!channel_key.empty() && sample_index >= 0) c.sample_hits[channel_key].insert(sample_index);
  return &c;
}

inline void merge_candidate(CandidateCode& into, const CandidateCode& from) {
  into.sources.insert(from.sources.begin(), from.sources.end());
  for (const auto& [ch, hits] : from.sample_hits) into.sample_hits[ch].insert(hits.begin(), hits.end());
  if (from.description_set && !into.description_set) {
    into.description = from.description;
    into.description_set = true;
  }
}

/// Set union with deduplication across canonicalized pools.
inline CandidatePool merge_pools(const std::vector<const CandidatePool*>& pools) {
  CandidatePool out;
  for (const CandidatePool* p : pools) {
    for (const auto& [code, cand] : p->kept) {
      auto [it, fresh] = out.kept.emplace(code, cand);
      if (!fresh) merge_candidate(it->second, cand);
    }
    for (const auto& [code, cand] : p->dropped) {
      auto [it, fresh] = out.dropped.emplace(code, cand);
      if (!fresh) merge_candidate(it->second, cand);
    }
    for (const auto& [ch, n] : p->channel_samples) out.channel_samples[ch] += n;
  }
  return out;
}

/// Removes candidates whose codes are not in the taxonomy. Returns the
/// removed codes for the trace; removed codes never reach the fallback pool.
inline std::vector<std::string> validate_candidates(CandidatePool& pool, const Taxonomy& tax) {
  std::vector<std::string> removed;
  for (auto it = pool.kept.begin(); it != pool.kept.end();) {
    if (!tax.is_valid(it->first)) {
      removed.push_back(it->first);
      it = pool.kept.erase(it);
    } else {
      ++it;
    }
  }
  return removed;
}

inline void fetch_descriptions(CandidatePool& pool, const Taxonomy& tax) {
  for (auto& [code, cand] : pool.kept) {
    if (cand.description_set) continue;
    const TaxonomyNode* n = tax.find(code);
    if (n) {
      cand.description = n->description;
      cand.description_set = true;
    }
  }
}

inline const std::string& description_for(CandidateCode& cand, const Taxonomy& tax) {
  if (!cand.description_set) {
    const TaxonomyNode* n = tax.find(cand.code);
    if (n) {
      cand.description = n->description;
      cand.description_set = true;
    }
  }
  return cand.description;
}

/// Per-code description-to-note match: the fraction of the description's
/// content tokens present in the note. Deterministic.
inline void desc_match(CandidatePool& pool, const Taxonomy& tax, const std::string& note) {
  auto note_tokens = content_token_set(note);
  for (auto& [code, cand] : pool.kept) {
    auto desc_tokens = content_token_set(description_for(cand, tax));
    cand.m_desc = token_overlap(desc_tokens, note_tokens);
    cand.m_desc_set = true;
  }
}

// ---------------------------------------------------------------------------
// Voting
// ---------------------------------------------------------------------------

/// Reference formulation over explicit per-sample sets:
/// votes(c) = membership count across term and note samples,
/// vote_ratio(c) = votes / (S_t + S_n).
inline std::map<std::string, std::pair<int, double>> compute_vote_stats(
    const std::vector<std::set<std::string>>& term_samples,
    const std::vector<std::set<std::string>>& note_samples) {
  std::map<std::string, std::pair<int, double>> out;
  double denom = static_cast<double>(term_samples.size() + note_samples.size());
  auto count = [&](const std::vector<std::set<std::string>>& samples) {
    for (const auto& s : samples) {
      for (const auto& c : s) ++out[c].first;
    }
  };
  count(term_samples);
  count(note_samples);
  for (auto& [c, v] : out) v.second = denom > 0 ? v.first / denom : 0.0;
  return out;
}

/// Pool-based voting from the recorded per-channel sample memberships.
inline void apply_vote_stats(CandidatePool& pool) {
  int denom = pool.total_samples();
  for (auto& [code, cand] : pool.kept) {
    int votes = 0;
    for (const auto& [ch, hits] : cand.sample_hits) votes += static_cast<int>(hits.size());
    cand.votes = votes;
    cand.vote_ratio = denom > 0 ? static_cast<double>(votes) / denom : 0.0;
    cand.vote_stats_set = true;
  }
}

inline void majority_filter(CandidatePool& pool, double min_ratio) {
  for (auto it = pool.kept.begin(); it != pool.kept.end();) {
    if (!it->second.vote_stats_set) throw MissingField("vote_ratio", it->first);
    if (it->second.vote_ratio < min_ratio) {
      pool.dropped[it->first] = it->second;
      it = pool.kept.erase(it);
    } else {
      ++it;
    }
  }
}

// ---------------------------------------------------------------------------
// Evidence
// ---------------------------------------------------------------------------

/// First `window` whitespace-delimited tokens of `snippet`.
inline std::string clip_to_window(const std::string& snippet, int window) {
  if (window <= 0) return snippet;
  int count = 0;
  bool in_word = false;
  for (std::size_t i = 0; i < snippet.size(); ++i) {
    bool ws = std::isspace(static_cast<unsigned char>(snippet[i])) != 0;
    if (!ws && !in_word) {
      ++count;
      if (count > window) return trim(snippet.substr(0, i));
    }
    in_word = !ws;
  }
  return snippet;
}

/// Attaches verbatim snippets to a candidate: clips to the token window,
/// verifies each is a substring of the note (rejects otherwise), caps at
/// s_max, and computes evidence_overlap against the code description.
inline std::vector<std::string> attach_evidence(CandidateCode& cand, const Taxonomy& tax,
                                                const std::string& note,
                                                const std::vector<std::string>& snippets, int s_max,
                                                int window) {
  std::vector<std::string> rejected;
  cand.evidence.clear();
  for (const auto& raw : snippets) {
    if (static_cast<int>(cand.evidence.size()) >= s_max) break;
    std::string clipped = clip_to_window(raw, window);
    std::size_t pos = note.find(clipped);
    if (clipped.empty() || pos == std::string::npos) {
      rejected.push_back(raw);
      continue;
    }
    cand.evidence.push_back({clipped, pos, pos + clipped.size(), window});
  }
  std::set<std::string> snippet_tokens;
  for (const auto& ev : cand.evidence) {
    auto toks = content_token_set(ev.text);
    snippet_tokens.insert(toks.begin(), toks.end());
  }
  auto desc_tokens = content_token_set(description_for(cand, tax));
  cand.evidence_overlap = cand.evidence.empty() ? 0.0 : token_overlap(desc_tokens, snippet_tokens);
  cand.evidence_set = true;
  return rejected;
}

// ---------------------------------------------------------------------------
// Judging
// ---------------------------------------------------------------------------

enum class JudgeStrategy { evidence_keep_drop, evidence_tabular_desc };

inline std::optional<JudgeStrategy> parse_judge_strategy(std::string_view s) {
  if (s == "evidence_keep_drop") return JudgeStrategy::evidence_keep_drop;
  if (s == "evidence_tabular_desc") return JudgeStrategy::evidence_tabular_desc;
  return std::nullopt;
}

/// Applies a judge-score object {code: conf | {keep, conf}} to the pool,
/// clamping scores into [0,1], then filters: keep-drop keeps conf >= tau,
/// the tabular strategy keeps judge_keep OR conf >= tau. Codes missing from
/// the scores get conf 0 / keep false. Returns trace warnings.
inline std::vector<std::string> apply_judge_scores(CandidatePool& pool, const json& scores,
                                                   JudgeStrategy strategy, double tau) {
  std::vector<std::string> warnings;
  for (auto& [code, cand] : pool.kept) {
    double conf = 0.0;
    bool keep = false;
    if (scores.contains(code)) {
      const json& v = scores[code];
      if (v.is_number()) {
        conf = v.get<double>();
      } else if (v.is_object()) {
        conf = v.value("conf", 0.0);
        keep = v.value("keep", false);
      }
    } else {
      warnings.push_back("judge returned no score for " + code);
    }
    if (conf < 0.0 || conf > 1.0) {
      warnings.push_back("judge score " + std::to_string(conf) + " for " + code + " clamped to [0,1]");
      conf = std::clamp(conf, 0.0, 1.0);
    }
    cand.judge_conf = conf;
    cand.judge_keep = keep;
    cand.judge_set = true;
  }
  for (auto it = pool.kept.begin(); it != pool.kept.end();) {
    bool survives = strategy == JudgeStrategy::evidence_tabular_desc
                        ? (it->second.judge_keep || it->second.judge_conf >= tau)
                        : it->second.judge_conf >= tau;
    if (!survives) {
      pool.dropped[it->first] = it->second;
      it = pool.kept.erase(it);
    } else {
      ++it;
    }
  }
  return warnings;
}

/// Marks every kept candidate as judged worthless; used when the judge
/// response is irrecoverable and the batch must fail closed.
inline void fail_judge_batch(CandidatePool& pool) {
  for (auto& [code, cand] : pool.kept) {
    cand.judge_conf = 0.0;
    cand.judge_keep = false;
    cand.judge_set = true;
  }
  pool.dropped.insert(pool.kept.begin(), pool.kept.end());
  pool.kept.clear();
}

// ---------------------------------------------------------------------------
// Screening and pruning
// ---------------------------------------------------------------------------

/// Prunes or demotes near-duplicate siblings: within one parent group, when
/// two kept candidates' m_desc differ by less than `margin` and their
/// descriptions' mutual token overlap reaches `overlap_threshold`, the one
/// with the lower judge confidence is dropped; on a confidence tie the
/// lexicographically later code is demoted by `margin` instead of dropped.
inline std::vector<std::string> contrastive_screen(CandidatePool& pool, const Taxonomy& tax,
                                                   double margin, double overlap_threshold = 0.8) {
  std::vector<std::string> actions;
  if (margin <= 0.0) return actions;

  std::map<std::string, std::vector<std::string>> by_parent;
  for (const auto& [code, cand] : pool.kept) {
    const TaxonomyNode* n = tax.find(code);
    if (!n || n->parent_id < 0) continue;
    by_parent[*n->parent].push_back(code);
  }

  for (auto& [parent, group] : by_parent) {
    std::sort(group.begin(), group.end());
    for (std::size_t i = 0; i < group.size(); ++i) {
      for (std::size_t j = i + 1; j < group.size(); ++j) {
        auto a_it = pool.kept.find(group[i]);
        auto b_it = pool.kept.find(group[j]);
        if (a_it == pool.kept.end() || b_it == pool.kept.end()) continue;
        CandidateCode& a = a_it->second;
        CandidateCode& b = b_it->second;
        if (!a.m_desc_set) throw MissingField("m_desc", a.code);
        if (!b.m_desc_set) throw MissingField("m_desc", b.code);
        if (std::abs(a.m_desc - b.m_desc) >= margin) continue;
        double overlap = mutual_token_overlap(content_token_set(description_for(a, tax)),
                                              content_token_set(description_for(b, tax)));
        if (overlap < overlap_threshold) continue;
        double conf_a = a.judge_set ? a.judge_conf : 0.0;
        double conf_b = b.judge_set ? b.judge_conf : 0.0;
        if (conf_a == conf_b) {
          b.rank_penalty += margin;
          actions.push_back("demoted " + b.code + " (near-duplicate of " + a.code + ")");
          continue;
        }
        const std::string& loser = conf_a < conf_b ? a.code : b.code;
        const std::string& winner = conf_a < conf_b ? b.code : a.code;
        actions.push_back("dropped " + loser + " (near-duplicate of " + winner + ")");
        pool.dropped[loser] = pool.kept.at(loser);
        pool.kept.erase(loser);
      }
    }
  }
  return actions;
}

struct HierPruneRules {
  bool prefer_specific_over_unspecified = true;
  bool drop_duplicate_laterality = true;
  bool drop_ancestors = true;  // drop_mutually_exclusive_with_lower_conf
};

inline bool has_token(const std::set<std::string>& tokens, const char* t) { return tokens.count(t) > 0; }

/// Hierarchical pruning, rules applied in order:
///  1. drop an "unspecified" sibling when a more specific sibling survives,
///  2. collapse duplicate-laterality variants keeping the higher confidence,
///  3. drop any candidate that is a proper ancestor of another candidate.
inline std::vector<std::string> hier_prune(CandidatePool& pool, const Taxonomy& tax,
                                           const HierPruneRules& rules = {}) {
  std::vector<std::string> actions;
  auto drop = [&](const std::string& code, const std::string& why) {
    auto it = pool.kept.find(code);
    if (it == pool.kept.end()) return;
    actions.push_back("dropped " + code + " (" + why + ")");
    pool.dropped[code] = it->second;
    pool.kept.erase(it);
  };

  if (rules.prefer_specific_over_unspecified) {
    std::map<std::string, std::vector<std::string>> by_parent;
    for (auto& [code, cand] : pool.kept) {
      const TaxonomyNode* n = tax.find(code);
      if (n && n->parent_id >= 0) by_parent[*n->parent].push_back(code);
    }
    for (auto& [parent, group] : by_parent) {
      if (group.size() < 2) continue;
      std::sort(group.begin(), group.end());
      bool any_specific = false;
      for (const auto& code : group) {
        auto toks = content_token_set(description_for(pool.kept.at(code), tax));
        if (!has_token(toks, "unspecified")) any_specific = true;
      }
      if (!any_specific) continue;
      for (const auto& code : group) {
        auto toks = content_token_set(description_for(pool.kept.at(code), tax));
        if (has_token(toks, "unspecified")) drop(code, "unspecified sibling of a specific code");
      }
    }
  }

  if (rules.drop_duplicate_laterality) {
    static const std::set<std::string> kLaterality = {"left", "right", "bilateral"};
    std::map<std::string, std::vector<std::string>> by_parent;
    for (auto& [code, cand] : pool.kept) {
      const TaxonomyNode* n = tax.find(code);
      if (n && n->parent_id >= 0) by_parent[*n->parent].push_back(code);
    }
    for (auto& [parent, group] : by_parent) {
      std::sort(group.begin(), group.end());
      for (std::size_t i = 0; i < group.size(); ++i) {
        for (std::size_t j = i + 1; j < group.size(); ++j) {
          auto a_it = pool.kept.find(group[i]);
          auto b_it = pool.kept.find(group[j]);
          if (a_it == pool.kept.end() || b_it == pool.kept.end()) continue;
          auto strip_laterality = [](const std::set<std::string>& toks, bool* had_lat) {
            std::set<std::string> core;
            for (const auto& t : toks) {
              if (kLaterality.count(t)) {
                *had_lat = true;
              } else {
                core.insert(t);
              }
            }
            return core;
          };
          bool a_lat = false, b_lat = false;
          auto ca = strip_laterality(content_token_set(description_for(a_it->second, tax)), &a_lat);
          auto cb = strip_laterality(content_token_set(description_for(b_it->second, tax)), &b_lat);
          if (!(a_lat || b_lat) || ca != cb) continue;
          double conf_a = a_it->second.judge_set ? a_it->second.judge_conf : 0.0;
          double conf_b = b_it->second.judge_set ? b_it->second.judge_conf : 0.0;
          drop(conf_a >= conf_b ? group[j] : group[i], "duplicate laterality variant");
        }
      }
    }
  }

  if (rules.drop_ancestors) {
    std::vector<std::string> codes;
    for (const auto& [code, cand] : pool.kept) codes.push_back(code);
    for (const auto& a : codes) {
      if (!pool.kept.count(a)) continue;
      for (const auto& b : codes) {
        if (a == b || !pool.kept.count(a) || !pool.kept.count(b)) continue;
        if (tax.is_valid(a) && tax.is_valid(b) && tax.is_ancestor(a, b)) {
          drop(a, "ancestor of " + b);
          break;
        }
      }
    }
  }
  return actions;
}

// ---------------------------------------------------------------------------
// Reranking and finalization
// ---------------------------------------------------------------------------

enum class RerankScheme { alg2, alg3 };

inline std::optional<RerankScheme> parse_rerank_scheme(std::string_view s) {
  if (s == "alg2") return RerankScheme::alg2;
  if (s == "alg3") return RerankScheme::alg3;
  return std::nullopt;
}

struct RerankWeights {
  double vote = 0.4;
  double desc = 0.3;
  double conf = 0.2;
  double evidence = 0.1;
};

/// Saturation-times-quality evidence score for the evidence-aware scheme:
/// min(1, |snippets|/s_max) times the mean per-snippet description overlap.
inline double evidence_strength(const CandidateCode& cand, const std::set<std::string>& desc_tokens,
                                int s_max) {
  if (cand.evidence.empty() || s_max <= 0) return 0.0;
  double saturation = std::min(1.0, static_cast<double>(cand.evidence.size()) / s_max);
  double sum = 0.0;
  for (const auto& ev : cand.evidence) sum += token_overlap(desc_tokens, content_token_set(ev.text));
  return saturation * (sum / static_cast<double>(cand.evidence.size()));
}

inline void rerank(CandidatePool& pool, const Taxonomy& tax, RerankScheme scheme,
                   const RerankWeights& w = {}, int s_max = 2) {
  for (auto& [code, cand] : pool.kept) {
    if (!cand.m_desc_set) throw MissingField("m_desc", code);
    if (!cand.judge_set) throw MissingField("judge_conf", code);
    if (!cand.evidence_set) throw MissingField("evidence_overlap", code);
    double score = 0.0;
    if (scheme == RerankScheme::alg3) {
      if (!cand.vote_stats_set) throw MissingField("vote_ratio", code);
      score = w.vote * cand.vote_ratio + w.desc * cand.m_desc + w.conf * cand.judge_conf +
              w.evidence * cand.evidence_overlap;
    } else {
      auto desc_tokens = content_token_set(description_for(cand, tax));
      score = (cand.judge_conf + cand.m_desc + evidence_strength(cand, desc_tokens, s_max)) / 3.0;
    }
    cand.rank_score = std::max(0.0, score - cand.rank_penalty);
    cand.rank_set = true;
  }
}

inline void score_by_votes(CandidatePool& pool) {
  for (auto& [code, cand] : pool.kept) {
    if (!cand.vote_stats_set) throw MissingField("vote_ratio", code);
    cand.rank_score = cand.vote_ratio;
    cand.rank_set = true;
  }
}

inline void score_by_confidence(CandidatePool& pool) {
  for (auto& [code, cand] : pool.kept) {
    if (!cand.judge_set) throw MissingField("judge_conf", code);
    cand.rank_score = cand.judge_conf;
    cand.rank_set = true;
  }
}

inline void score_by_desc_match(CandidatePool& pool) {
  for (auto& [code, cand] : pool.kept) {
    if (!cand.m_desc_set) throw MissingField("m_desc", code);
    cand.rank_score = cand.m_desc;
    cand.rank_set = true;
  }
}

/// Sorts kept candidates by rank score (ties: higher vote ratio, then code)
/// and, when fewer than k survive, appends filtered candidates by judge
/// confidence. The fallback only fills, it never truncates the kept list.
inline RankedResult finalize_ranking(const CandidatePool& pool, std::size_t k) {
  RankedResult out;
  for (const auto& [code, cand] : pool.kept) {
    if (!cand.rank_set) throw MissingField("rank_score", code);
    out.items.push_back(cand);
  }
  std::sort(out.items.begin(), out.items.end(), [](const CandidateCode& a, const CandidateCode& b) {
    if (a.rank_score != b.rank_score) return a.rank_score > b.rank_score;
    if (a.vote_ratio != b.vote_ratio) return a.vote_ratio > b.vote_ratio;
    return a.code < b.code;
  });
  out.fallback_start = out.items.size();

  if (out.items.size() < k) {
    std::vector<CandidateCode> fallback;
    for (const auto& [code, cand] : pool.dropped) {
      if (pool.kept.count(code)) continue;
      fallback.push_back(cand);
    }
    std::sort(fallback.begin(), fallback.end(), [](const CandidateCode& a, const CandidateCode& b) {
      double ca = a.judge_set ? a.judge_conf : 0.0;
      double cb = b.judge_set ? b.judge_conf : 0.0;
      if (ca != cb) return ca > cb;
      return a.code < b.code;
    });
    std::size_t need = k - out.items.size();
    for (std::size_t i = 0; i < fallback.size() && i < need; ++i) {
      CandidateCode c = fallback[i];
      c.rank_score = c.judge_set ? c.judge_conf : 0.0;  // fallback listing key
      c.rank_set = true;
      out.items.push_back(std::move(c));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline json candidate_to_json(const CandidateCode& c) {
  json j{{"code", c.code}, {"sources", c.sources}};
  if (!c.sample_hits.empty()) {
    json hits = json::object();
    for (const auto& [ch, s] : c.sample_hits) hits[ch] = s;
    j["sample_hits"] = std::move(hits);
  }
  if (c.vote_stats_set) {
    j["votes"] = c.votes;
    j["vote_ratio"] = c.vote_ratio;
  }
  if (c.description_set) j["description"] = c.description;
  if (c.m_desc_set) j["m_desc"] = c.m_desc;
  if (c.judge_set) {
    j["judge_keep"] = c.judge_keep;
    j["judge_conf"] = c.judge_conf;
  }
  if (c.evidence_set) {
    json ev = json::array();
    for (const auto& e : c.evidence) {
      ev.push_back(json{{"text", e.text}, {"begin", e.begin}, {"end", e.end}, {"window", e.window}});
    }
    j["evidence"] = std::move(ev);
    j["evidence_overlap"] = c.evidence_overlap;
  }
  if (c.rank_set) j["rank_score"] = c.rank_score;
  return j;
}

inline json ranked_result_to_json(const RankedResult& r) {
  json items = json::array();
  for (std::size_t i = 0; i < r.items.size(); ++i) {
    json j = candidate_to_json(r.items[i]);
    j["fallback"] = i >= r.fallback_start;
    items.push_back(std::move(j));
  }
  return json{{"ranked", std::move(items)}, {"fallback_start", r.fallback_start}};
}

inline json pool_to_json(const CandidatePool& pool) {
  json kept = json::object();
  for (const auto& [code, cand] : pool.kept) kept[code] = candidate_to_json(cand);
  json dropped = json::object();
  for (const auto& [code, cand] : pool.dropped) dropped[code] = candidate_to_json(cand);
  return json{{"kept", std::move(kept)}, {"dropped", std::move(dropped)},
              {"channel_samples", pool.channel_samples}};
}

/// Predicted code set under the default policy: every non-fallback code.
inline std::set<std::string> predicted_codes(const RankedResult& r,
                                             std::optional<double> min_score = std::nullopt) {
  std::set<std::string> out;
  for (std::size_t i = 0; i < r.items.size() && i < r.fallback_start; ++i) {
    if (min_score && r.items[i].rank_score < *min_score) continue;
    out.insert(r.items[i].code);
  }
  return out;
}

}  // namespace meddcr
