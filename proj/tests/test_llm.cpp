#include <catch2/catch_amalgamated.hpp>

#include <thread>

#include "helpers.hpp"
#include "meddcr/http_provider.hpp"
#include "meddcr/llm.hpp"

using namespace meddcr;

namespace {

std::shared_ptr<ScriptedProvider> scripted(const std::string& jsonl, const std::string& tag) {
  auto dir = testutil::temp_dir("llm_" + tag);
  auto p = testutil::write_file(dir / "script.jsonl", jsonl);
  return std::make_shared<ScriptedProvider>(p);
}

LlmRequest pipeline_req(const std::string& prompt, int samples = 1) {
  LlmRequest req;
  req.role = RoleTag::pipeline_op;
  req.user_prompt = prompt;
  req.samples = samples;
  return req;
}

}  // namespace

TEST_CASE("scripted provider serves matched entries with scripted token counts", "[llm]") {
  auto prov = scripted(
      R"({"role": "pipeline_op", "match": "hello", "text": "world", "prompt_tokens": 7, "completion_tokens": 3})"
      "\n",
      "basic");
  LlmGateway gw(prov);
  auto resp = gw.complete(pipeline_req("say hello please"));
  CHECK(resp.texts == std::vector<std::string>{"world"});
  CHECK(resp.prompt_tokens == 7);
  CHECK(resp.completion_tokens == 3);
  CHECK(gw.ledger().total_tokens() == 10);
}

TEST_CASE("samples=4 returns exactly 4 texts", "[llm]") {
  auto prov = scripted(
      R"({"role": "pipeline_op", "match": "multi", "text": "a"})"
      "\n"
      R"({"role": "pipeline_op", "match": "multi", "text": "b"})"
      "\n",
      "samples");
  LlmGateway gw(prov);
  auto resp = gw.complete(pipeline_req("multi sample call", 4));
  REQUIRE(resp.texts.size() == 4);
  // two-entry group cycles deterministically
  CHECK(resp.texts == std::vector<std::string>{"a", "b", "a", "b"});
}

TEST_CASE("queue fallback and exhaustion", "[llm]") {
  auto prov = scripted(
      R"({"role": "designer", "text": "first", "uses": 1})"
      "\n"
      R"({"role": "designer", "text": "second", "uses": 1})"
      "\n",
      "queue");
  LlmGateway gw(prov);
  LlmRequest req;
  req.role = RoleTag::designer;
  req.user_prompt = "anything";
  CHECK(gw.complete(req).texts.front() == "first");
  CHECK(gw.complete(req).texts.front() == "second");
  CHECK_THROWS_AS(gw.complete(req), ScriptExhausted);
}

TEST_CASE("key-hash matching pins exact exchanges", "[llm]") {
  std::string prompt = "the exact prompt";
  auto key = hex64(fnv1a64(prompt));
  auto prov = scripted(
      std::string(R"({"role": "pipeline_op", "key": ")") + key + R"(", "text": "pinned"})" + "\n" +
          R"({"role": "pipeline_op", "text": "fallback"})" + "\n",
      "key");
  LlmGateway gw(prov);
  CHECK(gw.complete(pipeline_req(prompt)).texts.front() == "pinned");
  CHECK(gw.complete(pipeline_req("some other prompt")).texts.front() == "fallback");
}

TEST_CASE("budget cap rejects the overflowing call and leaves the ledger unchanged", "[llm]") {
  auto prov = scripted(
      R"({"role": "pipeline_op", "text": "big", "prompt_tokens": 600, "completion_tokens": 600})"
      "\n",
      "budget");
  LlmGateway gw(prov);
  gw.set_token_budget(1000);
  CHECK_THROWS_AS(gw.complete(pipeline_req("anything")), BudgetExceeded);
  CHECK(gw.ledger().total_tokens() == 0);
}

TEST_CASE("scripted determinism: identical request sequence, identical responses and ledger", "[llm][property]") {
  const std::string script =
      R"({"role": "pipeline_op", "match": "x", "text": "one", "prompt_tokens": 5, "completion_tokens": 1})"
      "\n"
      R"({"role": "pipeline_op", "match": "x", "text": "two", "prompt_tokens": 5, "completion_tokens": 1})"
      "\n"
      R"({"role": "pipeline_op", "text": "fallback"})"
      "\n";
  auto run = [&](const std::string& tag) {
    LlmGateway gw(scripted(script, tag));
    std::vector<std::string> seen;
    for (int i = 0; i < 5; ++i) seen.push_back(gw.complete(pipeline_req("x marks " + std::to_string(i % 2))).texts[0]);
    return std::make_pair(seen, gw.ledger().total_tokens());
  };
  auto a = run("det_a");
  auto b = run("det_b");
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("ledger conservation across concurrent calls", "[llm][property]") {
  auto prov = scripted(
      R"({"role": "pipeline_op", "text": "t", "prompt_tokens": 10, "completion_tokens": 5})"
      "\n",
      "conc");
  LlmGateway gw(prov);
  std::vector<std::thread> workers;
  std::atomic<std::size_t> reported{0};
  for (int w = 0; w < 6; ++w) {
    workers.emplace_back([&] {
      for (int i = 0; i < 40; ++i) {
        auto r = gw.complete(pipeline_req("p"));
        reported += r.prompt_tokens + r.completion_tokens;
      }
    });
  }
  for (auto& w : workers) w.join();
  CHECK(gw.ledger().total_tokens() == reported.load());
  CHECK(gw.ledger().total_calls() == 240);
}

TEST_CASE("complete_json strips fences and validates schemas", "[llm]") {
  auto prov = scripted(
      R"({"role": "designer", "text": "Sure! ```json {\"name\":\"x\",\"thought\":\"t\",\"plan\":[{\"op\":\"Terms\"}]}``` done"})"
      "\n",
      "fence");
  LlmGateway gw(prov);
  LlmRequest req;
  req.role = RoleTag::designer;
  req.user_prompt = "plan please";
  json j = gw.complete_json(req, "plan", 0);
  CHECK(j["name"] == "x");
  CHECK(j["plan"].size() == 1);
}

TEST_CASE("complete_json repairs with the schema error appended", "[llm]") {
  auto prov = scripted(
      R"({"role": "designer", "match": "plan please", "text": "{\"thought\":\"missing name and plan\"}"})"
      "\n"
      R"({"role": "designer", "match": "plan please", "text": "{\"name\":\"fixed\",\"thought\":\"\",\"plan\":[{\"op\":\"Terms\"}]}"})"
      "\n",
      "repair");
  LlmGateway gw(prov);
  LlmRequest req;
  req.role = RoleTag::designer;
  req.user_prompt = "plan please";
  json j = gw.complete_json(req, "plan", 2);
  CHECK(j["name"] == "fixed");

  SECTION("max_repairs=0 with an invalid first response is irrecoverable") {
    LlmGateway gw2(scripted(
        R"({"role": "designer", "text": "not json at all"})"
        "\n",
        "repair0"));
    try {
      gw2.complete_json(req, "plan", 0);
      FAIL("expected JsonIrrecoverable");
    } catch (const JsonIrrecoverable& e) {
      CHECK(e.attempts.size() == 1);
      CHECK(e.attempts[0] == "not json at all");
    }
  }
}

TEST_CASE("usage report splits search from execution tokens and prices them", "[llm]") {
  auto prov = scripted(
      R"({"role": "designer", "text": "d", "prompt_tokens": 10000, "completion_tokens": 5000})"
      "\n"
      R"({"role": "coder", "text": "c", "prompt_tokens": 2000, "completion_tokens": 1000})"
      "\n"
      R"({"role": "reflector", "text": "r", "prompt_tokens": 1000, "completion_tokens": 994})"
      "\n"
      R"({"role": "pipeline_op", "text": "p", "prompt_tokens": 6028160, "completion_tokens": 5517426})"
      "\n",
      "cost");
  LlmGateway gw(prov);
  gw.set_prices(load_price_table(testutil::asset("fixtures/prices.json"), "gpt-4o"));

  SECTION("zero calls, zero cost") {
    auto rep = gw.usage_report();
    CHECK(rep.total_tokens == 0);
    REQUIRE(rep.cost_usd.has_value());
    CHECK(*rep.cost_usd == 0.0);
  }

  SECTION("projected cost for the MDACE-scale token mix") {
    for (RoleTag r : {RoleTag::designer, RoleTag::coder, RoleTag::reflector, RoleTag::pipeline_op}) {
      LlmRequest req;
      req.role = r;
      req.user_prompt = "u";
      gw.complete(req);
    }
    auto rep = gw.usage_report();
    CHECK(rep.search_tokens == 19994);
    CHECK(rep.exec_tokens == 11545586);
    REQUIRE(rep.cost_usd.has_value());
    CHECK_THAT(*rep.cost_usd, Catch::Matchers::WithinAbs(17.09, 0.005));
  }

  SECTION("simple total") {
    LlmRequest req;
    req.role = RoleTag::designer;
    req.user_prompt = "u";
    gw.complete(req);
    LlmRequest req2;
    req2.role = RoleTag::coder;
    req2.user_prompt = "u";
    gw.complete(req2);
    CHECK(gw.usage_report().total_tokens == 18000);
  }
}

TEST_CASE("scripted provider state round-trips", "[llm]") {
  const std::string script =
      R"({"role": "pipeline_op", "match": "q", "text": "one"})"
      "\n"
      R"({"role": "pipeline_op", "match": "q", "text": "two"})"
      "\n";
  auto prov1 = scripted(script, "state_a");
  LlmGateway g1(prov1);
  g1.complete(pipeline_req("q"));
  json st = prov1->state();

  auto prov2 = scripted(script, "state_b");
  prov2->restore(st);
  LlmGateway g2(prov2);
  CHECK(g2.complete(pipeline_req("q")).texts.front() == "two");
}

TEST_CASE("http provider talks to a chat-completions endpoint", "[llm][http]") {
  httplib::Server server;
  json captured;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    captured = json::parse(req.body);
    json reply{{"choices", json::array({json{{"message", json{{"role", "assistant"}, {"content", "ok"}}}}})},
               {"usage", json{{"prompt_tokens", 12}, {"completion_tokens", 2}}}};
    res.set_content(reply.dump(), "application/json");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  HttpProvider::Options opt;
  opt.model = "gpt-4o";
  opt.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  opt.api_key = "test-key";
  HttpProvider prov(opt);
  LlmRequest req;
  req.role = RoleTag::pipeline_op;
  req.system_prompt = "sys";
  req.user_prompt = "hello";
  req.temperature = 0.7;
  req.max_tokens = 128;
  auto resp = prov.complete(req);
  CHECK(resp.texts == std::vector<std::string>{"ok"});
  CHECK(resp.prompt_tokens == 12);
  CHECK(resp.completion_tokens == 2);
  CHECK(captured["model"] == "gpt-4o");
  CHECK(captured["messages"][0]["role"] == "system");
  CHECK(captured["messages"][1]["content"] == "hello");
  CHECK(captured["n"] == 1);

  server.stop();
  th.join();

  SECTION("unreachable endpoint raises ProviderUnavailable") {
    HttpProvider::Options bad;
    bad.base_url = "http://127.0.0.1:1/v1";
    bad.max_retries = 0;
    bad.backoff_ms = 1;
    HttpProvider p2(bad);
    CHECK_THROWS_AS(p2.complete(req), ProviderUnavailable);
  }
}
