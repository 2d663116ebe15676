#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace meddcr {

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::string to_upper(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return out;
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

/// Lowercased alphanumeric runs, in order of appearance.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

/// Function words excluded from description/note matching.
inline const std::set<std::string>& stopwords() {
  static const std::set<std::string> kStop = {
      "a",  "an",  "and",  "are", "as",   "at",   "be", "been", "by",
      "for", "from", "had", "has", "have", "in",   "into", "is", "of",
      "on",  "or",  "the",  "to",  "was",  "were", "with", "without"};
  return kStop;
}

inline std::vector<std::string> content_tokens(std::string_view text) {
  std::vector<std::string> out;
  for (auto& t : tokenize(text)) {
    if (!stopwords().count(t)) out.push_back(std::move(t));
  }
  return out;
}

inline std::set<std::string> content_token_set(std::string_view text) {
  auto toks = content_tokens(text);
  return {toks.begin(), toks.end()};
}

/// Fraction of `target` tokens also present in `have`; 0 for an empty target.
inline double token_overlap(const std::set<std::string>& target, const std::set<std::string>& have) {
  if (target.empty()) return 0.0;
  std::size_t hit = 0;
  for (const auto& t : target) {
    if (have.count(t)) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(target.size());
}

/// Symmetric near-duplicate measure: shared tokens over the larger set.
inline double mutual_token_overlap(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() || b.empty()) return 0.0;
  std::size_t hit = 0;
  for (const auto& t : a) {
    if (b.count(t)) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(std::max(a.size(), b.size()));
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

/// Whitespace-delimited word count, used as the offline token estimate.
inline std::size_t approx_tokens(std::string_view text) {
  std::size_t n = 0;
  bool in_word = false;
  for (char ch : text) {
    bool ws = std::isspace(static_cast<unsigned char>(ch)) != 0;
    if (!ws && !in_word) ++n;
    in_word = !ws;
  }
  return n;
}

}  // namespace meddcr
