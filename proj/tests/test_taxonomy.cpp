#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <map>
#include <thread>

#include "helpers.hpp"
#include "meddcr/taxonomy.hpp"

using namespace meddcr;

namespace {

Taxonomy& mini() {
  static Taxonomy tax = load_taxonomy(testutil::asset("fixtures/taxonomy_mini.tsv"));
  return tax;
}

}  // namespace

TEST_CASE("canonicalize normalizes CM and PCS shapes", "[taxonomy]") {
  CHECK(canonicalize_code("e11.22 ") == "E11.22");
  CHECK(canonicalize_code("E1122") == "E11.22");
  CHECK(canonicalize_code("I21.3") == "I21.3");
  CHECK(canonicalize_code("i213") == "I21.3");
  CHECK(canonicalize_code("N18") == "N18");
  CHECK(canonicalize_code("021009W") == "021009W");
  CHECK(canonicalize_code("021.009w") == "021009W");
  CHECK_THROWS_AS(canonicalize_code(""), MalformedCode);
  CHECK_THROWS_AS(canonicalize_code("E1"), MalformedCode);
  CHECK_THROWS_AS(canonicalize_code("E11223344"), MalformedCode);
  CHECK_THROWS_AS(canonicalize_code("E11-E12"), MalformedCode);
}

TEST_CASE("canonicalize is idempotent", "[taxonomy]") {
  std::mt19937 rng(7);
  const std::string alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
  for (int i = 0; i < 500; ++i) {
    std::uniform_int_distribution<std::size_t> len(1, 8);
    std::string raw;
    std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
    for (std::size_t j = 0, m = len(rng); j < m; ++j) raw.push_back(alphabet[pick(rng)]);
    try {
      std::string once = canonicalize_code(raw);
      CHECK(canonicalize_code(once) == once);
    } catch (const MalformedCode&) {
      // malformed inputs are out of scope for the idempotence property
    }
  }
}

TEST_CASE("load_taxonomy validates structure", "[taxonomy]") {
  auto dir = testutil::temp_dir("tax_load");

  SECTION("4-line fixture gives 4 nodes, 1 root") {
    auto p = testutil::write_file(dir / "ok.tsv",
                                  "1\t\tchapter\tChapter one\n"
                                  "A00-A09\t1\tblock\tSome block\n"
                                  "A00\tA00-A09\tcategory\tFirst category\n"
                                  "A01\tA00-A09\tcategory\tSecond category\n");
    Taxonomy t = load_taxonomy(p);
    CHECK(t.size() == 4);
    CHECK(t.roots().size() == 1);
    CHECK(t.children_of("A00-A09") == std::vector<std::string>{"A00", "A01"});
  }

  SECTION("unknown parent is a ParseError naming the code") {
    auto p = testutil::write_file(dir / "orphan.tsv",
                                  "1\t\tchapter\tChapter one\n"
                                  "A00\tA00-A09\tcategory\tOrphan\n");
    CHECK_THROWS_WITH(load_taxonomy(p), Catch::Matchers::ContainsSubstring("A00"));
  }

  SECTION("cycle detection names an offending code") {
    auto p = testutil::write_file(dir / "cycle.tsv",
                                  "A00\tA01\tcategory\tFirst\n"
                                  "A01\tA00\tcategory\tSecond\n");
    CHECK_THROWS_AS(load_taxonomy(p), CycleError);
  }

  SECTION("duplicate code of the same kind class") {
    auto p = testutil::write_file(dir / "dup.tsv",
                                  "1\t\tchapter\tChapter one\n"
                                  "A00\t1\tcategory\tFirst\n"
                                  "A00\t1\tcategory\tAgain\n");
    CHECK_THROWS_AS(load_taxonomy(p), DuplicateCode);
  }

  SECTION("node count equals non-comment line count") {
    auto synth = testutil::make_synthetic_taxonomy(200, 11);
    auto p = testutil::write_file(dir / "synth.tsv", synth.tsv);
    Taxonomy t = load_taxonomy(p);
    CHECK(t.size() == synth.node_lines);
  }
}

TEST_CASE("validity and lookups", "[taxonomy]") {
  const Taxonomy& t = mini();
  CHECK(t.is_valid("I21.3"));
  CHECK(t.is_valid("i2540") == false);
  CHECK(t.is_valid("E1122"));       // canonicalized form is a node
  CHECK(t.is_valid("E08-E13"));     // structural names match exactly
  CHECK(t.is_valid("") == false);
  CHECK(t.is_valid("I21.99") == false);
  CHECK(t.is_valid("total nonsense!") == false);
}

TEST_CASE("parent and children queries", "[taxonomy]") {
  const Taxonomy& t = mini();
  CHECK(t.parent_of("E11.22") == "E11.2");
  CHECK(t.parent_of("4") == std::nullopt);
  CHECK(t.children_of("E11.2") == std::vector<std::string>{"E11.21", "E11.22"});
  CHECK(t.children_of("E11.22").empty());
  CHECK_THROWS_AS(t.parent_of("Q99.9"), UnknownCode);

  SECTION("children of a chapter are all blocks") {
    for (const auto& root : t.roots()) {
      for (const auto& child : t.children_of(root)) {
        const TaxonomyNode* n = t.find(child, /*prioritize_blocks=*/true);
        REQUIRE(n != nullptr);
        if (n->system == CodeSystem::cm) CHECK(n->kind == NodeKind::block);
      }
    }
  }
}

TEST_CASE("ambiguous block/category names honour prioritize_blocks", "[taxonomy]") {
  const Taxonomy& t = mini();
  auto as_block = t.parent_of("B99", /*prioritize_blocks=*/true);
  auto as_category = t.parent_of("B99", /*prioritize_blocks=*/false);
  REQUIRE(as_block.has_value());
  REQUIRE(as_category.has_value());
  CHECK(*as_block == "1");
  CHECK(*as_category == "B99");
  CHECK(as_block != as_category);

  CHECK(t.children_of("B99", true) == std::vector<std::string>{"B99"});
  CHECK(t.children_of("B99", false) == std::vector<std::string>{"B99.8", "B99.9"});
}

TEST_CASE("ancestors and descendants", "[taxonomy]") {
  const Taxonomy& t = mini();
  CHECK(t.ancestors_of("4").empty());
  CHECK(t.ancestors_of("E11.22") == std::vector<std::string>{"E11.2", "E11", "E08-E13", "4"});
  auto desc = t.descendants_of("E11");
  CHECK(desc == std::vector<std::string>{"E11.2", "E11.21", "E11.22", "E11.9"});
}

TEST_CASE("ancestor predicates and NCA", "[taxonomy]") {
  const Taxonomy& t = mini();
  CHECK_FALSE(t.is_ancestor("E11", "E11"));
  CHECK(t.is_ancestor("E11", "E11.22"));
  CHECK(t.is_descendant("E11.22", "E11"));
  CHECK_FALSE(t.is_ancestor("E11", "I21.3"));
  CHECK_FALSE(t.is_ancestor("I21.3", "E11"));

  CHECK(t.nearest_common_ancestor("E11.21", "E11.22") == "E11.2");
  CHECK(t.nearest_common_ancestor("E11", "E11.22") == "E11");
  CHECK(t.nearest_common_ancestor("E11.22", "I21.3") == std::nullopt);
  CHECK(t.nearest_common_ancestor("I21.0", "I25.10") == "I20-I25");
  CHECK(t.nearest_common_ancestor("E11.21", "E11.22") == t.nearest_common_ancestor("E11.22", "E11.21"));
}

TEST_CASE("leaf test matches children emptiness everywhere", "[taxonomy]") {
  const Taxonomy& t = mini();
  CHECK(t.is_leaf("E11.22"));
  CHECK_FALSE(t.is_leaf("9"));
  for (const auto& n : t.nodes()) {
    if (t.find(n.code, n.kind == NodeKind::block) != &n) continue;  // ambiguous alias
    CHECK(t.is_leaf(n.code, n.kind == NodeKind::block) == n.child_ids.empty());
  }
}

TEST_CASE("descriptions and search", "[taxonomy]") {
  const Taxonomy& t = mini();
  CHECK(t.description_of("I21.3") == "ST elevation (STEMI) myocardial infarction of unspecified site");

  SECTION("exact description ranks its code first") {
    for (const char* code : {"E11.22", "N18.3", "I25.10"}) {
      auto hits = t.search_descriptions(t.description_of(code), 5);
      REQUIRE_FALSE(hits.empty());
      CHECK(hits.front() == code);
    }
  }

  SECTION("empty query throws") {
    CHECK_THROWS_AS(t.search_descriptions("", 5), EmptyQuery);
    CHECK_THROWS_AS(t.search_descriptions("   ", 5), EmptyQuery);
  }

  SECTION("limit and tie order") {
    auto hits = t.search_descriptions("type 2 diabetes mellitus", 3);
    REQUIRE(hits.size() == 3);
    CHECK(hits[0] == "E11");  // ties broken lexicographically
    CHECK(hits[1] == "E11.2");
  }

  SECTION("CABG text reaches a PCS bypass code") {
    auto hits = t.search_descriptions("bypass coronary artery autologous venous tissue", 3);
    REQUIRE_FALSE(hits.empty());
    CHECK(hits.front() == "021009W");
  }
}

TEST_CASE("hierarchy ops agree with a brute-force DFS oracle", "[taxonomy][oracle]") {
  auto dir = testutil::temp_dir("tax_oracle");
  auto synth = testutil::make_synthetic_taxonomy(500, 42);
  auto p = testutil::write_file(dir / "synth.tsv", synth.tsv);
  Taxonomy t = load_taxonomy(p);
  REQUIRE(t.size() == 500);

  // Independent oracle: re-read the TSV into flat parent/child maps.
  std::map<std::string, std::string> parent;
  std::map<std::string, std::vector<std::string>> children;
  std::vector<std::string> order;
  {
    std::istringstream in(synth.tsv);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      auto tab1 = line.find('\t');
      auto tab2 = line.find('\t', tab1 + 1);
      std::string code = line.substr(0, tab1);
      std::string par = line.substr(tab1 + 1, tab2 - tab1 - 1);
      order.push_back(code);
      if (!par.empty()) {
        parent[code] = par;
        children[par].push_back(code);
      }
    }
  }
  auto oracle_ancestors = [&](const std::string& c) {
    std::vector<std::string> out;
    auto cur = c;
    while (parent.count(cur)) {
      cur = parent[cur];
      out.push_back(cur);
    }
    return out;
  };
  std::function<void(const std::string&, std::vector<std::string>&)> dfs =
      [&](const std::string& c, std::vector<std::string>& out) {
        for (const auto& ch : children[c]) {
          out.push_back(ch);
          dfs(ch, out);
        }
      };

  for (const auto& code : order) {
    auto anc = oracle_ancestors(code);
    CHECK(t.ancestors_of(code) == anc);
    std::vector<std::string> desc;
    dfs(code, desc);
    CHECK(t.descendants_of(code) == desc);
    if (parent.count(code)) CHECK(t.parent_of(code) == parent[code]);
    CHECK(t.children_of(code) == children[code]);
    CHECK(t.is_leaf(code) == children[code].empty());
  }

  std::mt19937 rng(99);
  std::uniform_int_distribution<std::size_t> pick(0, order.size() - 1);
  for (int i = 0; i < 3000; ++i) {
    const auto& a = order[pick(rng)];
    const auto& b = order[pick(rng)];
    auto anc_b = oracle_ancestors(b);
    bool oracle_is_anc = std::find(anc_b.begin(), anc_b.end(), a) != anc_b.end();
    CHECK(t.is_ancestor(a, b) == oracle_is_anc);

    // NCA oracle: deepest element of ancestors-or-self intersection.
    std::vector<std::string> sa = oracle_ancestors(a);
    sa.insert(sa.begin(), a);
    std::vector<std::string> sb = anc_b;
    sb.insert(sb.begin(), b);
    std::optional<std::string> expect;
    for (const auto& x : sb) {
      if (std::find(sa.begin(), sa.end(), x) != sa.end()) {
        expect = x;
        break;
      }
    }
    CHECK(t.nearest_common_ancestor(a, b) == expect);
  }
}

TEST_CASE("is_ancestor is a strict partial order", "[taxonomy][property]") {
  auto dir = testutil::temp_dir("tax_order");
  auto synth = testutil::make_synthetic_taxonomy(120, 5);
  auto p = testutil::write_file(dir / "synth.tsv", synth.tsv);
  Taxonomy t = load_taxonomy(p);

  std::vector<std::string> codes;
  for (const auto& n : t.nodes()) codes.push_back(n.code);
  std::mt19937 rng(3);
  std::uniform_int_distribution<std::size_t> pick(0, codes.size() - 1);
  for (int i = 0; i < 2000; ++i) {
    const auto& a = codes[pick(rng)];
    const auto& b = codes[pick(rng)];
    const auto& c = codes[pick(rng)];
    CHECK_FALSE(t.is_ancestor(a, a));
    if (t.is_ancestor(a, b)) CHECK_FALSE(t.is_ancestor(b, a));
    if (t.is_ancestor(a, b) && t.is_ancestor(b, c)) CHECK(t.is_ancestor(a, c));
  }
}

TEST_CASE("taxonomy reads are safe across threads", "[taxonomy]") {
  const Taxonomy& t = mini();
  std::vector<std::thread> workers;
  std::atomic<int> hits{0};
  for (int w = 0; w < 8; ++w) {
    workers.emplace_back([&t, &hits] {
      for (int i = 0; i < 500; ++i) {
        if (t.is_valid("E11.22") && t.is_ancestor("E11", "E11.22")) ++hits;
      }
    });
  }
  for (auto& w : workers) w.join();
  CHECK(hits == 8 * 500);
}
