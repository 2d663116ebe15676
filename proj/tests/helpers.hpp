#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#ifndef MEDDCR_SOURCE_DIR
#define MEDDCR_SOURCE_DIR "."
#endif

namespace testutil {

inline std::string asset(const std::string& rel) {
  return std::string(MEDDCR_SOURCE_DIR) + "/assets/" + rel;
}

inline std::filesystem::path temp_dir(const std::string& tag) {
  auto base = std::filesystem::temp_directory_path() / ("meddcr_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(base);
  std::filesystem::create_directories(base);
  return base;
}

inline std::string write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p);
  out << content;
  out.close();
  return p.string();
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Random taxonomy TSV with `n` nodes (chapters/blocks/categories/subcategories),
/// returned with its line count. Deterministic for a given seed.
struct SyntheticTaxonomy {
  std::string tsv;
  std::size_t node_lines = 0;
};

inline SyntheticTaxonomy make_synthetic_taxonomy(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::ostringstream out;
  out << "# synthetic\n";
  struct Node {
    std::string code;
    int kind;  // 0 chapter, 1 block, 2 category, 3+ subcategory depth
  };
  std::vector<Node> nodes;
  std::set<std::string> used;
  std::size_t chapters = std::max<std::size_t>(2, n / 100);
  for (std::size_t i = 0; i < chapters && nodes.size() < n; ++i) {
    std::string code = std::to_string(i + 1);
    out << code << "\t\tchapter\tSynthetic chapter " << code << "\n";
    nodes.push_back({code, 0});
    used.insert(code);
  }
  std::size_t serial = 0;
  while (nodes.size() < n) {
    std::uniform_int_distribution<std::size_t> pick(0, nodes.size() - 1);
    std::size_t pi = pick(rng);
    int pkind = nodes[pi].kind;
    if (pkind >= 5) continue;  // cap nesting depth
    int kind = pkind + 1;
    std::string code;
    if (kind == 1) {
      code = "X" + std::to_string(10 + serial % 80) + "Z" + std::to_string(serial);
    } else if (kind == 2) {
      code = std::string(1, static_cast<char>('A' + serial % 26)) + std::to_string(10 + serial % 90);
    } else if (kind == 3) {
      code = std::string(1, static_cast<char>('A' + serial % 26)) + std::to_string(10 + serial % 90) +
             "." + std::to_string(serial % 10);
    } else {
      code = nodes[pi].code + std::to_string(serial % 10);
    }
    ++serial;
    if (used.count(code)) continue;
    used.insert(code);
    const char* kind_name = kind == 1 ? "block" : kind == 2 ? "category" : "subcategory";
    out << code << "\t" << nodes[pi].code << "\t" << kind_name
        << "\tSynthetic node " << code << " level " << kind << "\n";
    nodes.push_back({code, kind});
  }
  return {out.str(), nodes.size()};
}

}  // namespace testutil
