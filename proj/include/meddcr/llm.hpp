#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "meddcr/errors.hpp"
#include "meddcr/text.hpp"

namespace meddcr {

using json = nlohmann::json;

enum class RoleTag { designer, coder, reflector, pipeline_op };

inline std::string to_string(RoleTag r) {
  switch (r) {
    case RoleTag::designer: return "designer";
    case RoleTag::coder: return "coder";
    case RoleTag::reflector: return "reflector";
    case RoleTag::pipeline_op: return "pipeline_op";
  }
  return "?";
}

inline std::optional<RoleTag> parse_role(std::string_view s) {
  if (s == "designer") return RoleTag::designer;
  if (s == "coder") return RoleTag::coder;
  if (s == "reflector") return RoleTag::reflector;
  if (s == "pipeline_op") return RoleTag::pipeline_op;
  return std::nullopt;
}

struct LlmRequest {
  RoleTag role = RoleTag::pipeline_op;
  std::string system_prompt;
  std::string user_prompt;
  double temperature = 0.0;
  int samples = 1;
  int max_tokens = 2048;
};

struct LlmResponse {
  std::vector<std::string> texts;
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
  double latency_ms = 0.0;
};

struct RoleUsage {
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
  std::size_t calls = 0;
  double wall_ms = 0.0;

  std::size_t total() const { return prompt_tokens + completion_tokens; }

  void add(const LlmResponse& r) {
    prompt_tokens += r.prompt_tokens;
    completion_tokens += r.completion_tokens;
    calls += 1;
    wall_ms += r.latency_ms;
  }
};

/// Cumulative token/call accounting per role. Monotone; updates are atomic
/// with respect to snapshots.
class UsageLedger {
 public:
  UsageLedger() = default;
  UsageLedger(const UsageLedger& other) { by_role_ = other.snapshot(); }
  UsageLedger& operator=(const UsageLedger& other) {
    if (this != &other) by_role_ = other.snapshot();
    return *this;
  }

  void record(RoleTag role, const LlmResponse& r) {
    std::lock_guard<std::mutex> lock(mu_);
    by_role_[role].add(r);
  }

  std::map<RoleTag, RoleUsage> snapshot() const {
    std::lock_guard<std::mutex> lock(mu_);
    return by_role_;
  }

  std::size_t total_tokens() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::size_t n = 0;
    for (const auto& [r, u] : by_role_) n += u.total();
    return n;
  }

  std::size_t total_calls() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::size_t n = 0;
    for (const auto& [r, u] : by_role_) n += u.calls;
    return n;
  }

  double total_wall_ms() const {
    std::lock_guard<std::mutex> lock(mu_);
    double n = 0;
    for (const auto& [r, u] : by_role_) n += u.wall_ms;
    return n;
  }

  json to_json() const {
    json out = json::object();
    for (const auto& [role, u] : snapshot()) {
      out[to_string(role)] = json{{"prompt_tokens", u.prompt_tokens},
                                  {"completion_tokens", u.completion_tokens},
                                  {"calls", u.calls},
                                  {"wall_ms", u.wall_ms}};
    }
    return out;
  }

  static UsageLedger from_json(const json& j) {
    UsageLedger l;
    for (auto it = j.begin(); it != j.end(); ++it) {
      auto role = parse_role(it.key());
      if (!role) continue;
      RoleUsage u;
      u.prompt_tokens = it.value().value("prompt_tokens", 0u);
      u.completion_tokens = it.value().value("completion_tokens", 0u);
      u.calls = it.value().value("calls", 0u);
      u.wall_ms = it.value().value("wall_ms", 0.0);
      l.by_role_[*role] = u;
    }
    return l;
  }

 private:
  mutable std::mutex mu_;
  std::map<RoleTag, RoleUsage> by_role_;
};

// ---------------------------------------------------------------------------
// Providers
// ---------------------------------------------------------------------------

class LlmProvider {
 public:
  virtual ~LlmProvider() = default;
  virtual LlmResponse complete(const LlmRequest& req) = 0;
  virtual std::string name() const = 0;
  virtual json state() const { return json::object(); }
  virtual void restore(const json&) {}
};

/// Deterministic replay provider. Entries are JSONL records:
///   {"role": "...", "match": "substr" | ["s1","s2"], "key": "<fnv64 hex>",
///    "text": "..." | "json": {...}, "prompt_tokens": n, "completion_tokens": n,
///    "uses": n}
/// Matching precedence per call: first entry group (file order) whose role
/// matches and whose key equals the prompt hash, or whose match substrings all
/// occur in the prompt, or which declares neither (queue fallback). Entries
/// sharing (role, key/match) form an ordered group served round-robin, so
/// repeated identical prompts can see a scripted sequence of replies.
class ScriptedProvider : public LlmProvider {
 public:
  explicit ScriptedProvider(const std::string& path) {
    namespace fs = std::filesystem;
    std::vector<fs::path> files;
    fs::path p(path);
    if (fs::is_directory(p)) {
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.path().extension() == ".jsonl") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
    } else if (fs::exists(p)) {
      files.push_back(p);
    } else {
      throw ProviderUnavailable("scripted fixture path not found: " + path);
    }
    for (const auto& f : files) load_file(f.string());
    if (groups_.empty()) throw ProviderUnavailable("no scripted entries under " + path);
  }

  LlmResponse complete(const LlmRequest& req) override {
    std::lock_guard<std::mutex> lock(mu_);
    LlmResponse out;
    for (int s = 0; s < req.samples; ++s) {
      Entry& e = next_entry(req);
      out.texts.push_back(e.text);
      out.prompt_tokens += e.prompt_tokens ? *e.prompt_tokens : approx_tokens(req.user_prompt);
      out.completion_tokens += e.completion_tokens ? *e.completion_tokens : approx_tokens(e.text);
    }
    return out;
  }

  std::string name() const override { return "scripted"; }

  json state() const override {
    std::lock_guard<std::mutex> lock(mu_);
    json cursors = json::array();
    json served = json::array();
    for (const auto& g : groups_) {
      cursors.push_back(g.cursor);
      json uses = json::array();
      for (const auto& e : g.entries) uses.push_back(e.served);
      served.push_back(std::move(uses));
    }
    return json{{"cursors", std::move(cursors)}, {"served", std::move(served)}};
  }

  void restore(const json& st) override {
    std::lock_guard<std::mutex> lock(mu_);
    if (!st.contains("cursors")) return;
    const auto& cursors = st["cursors"];
    const auto& served = st["served"];
    for (std::size_t i = 0; i < groups_.size() && i < cursors.size(); ++i) {
      groups_[i].cursor = cursors[i].get<std::size_t>();
      for (std::size_t j = 0; j < groups_[i].entries.size() && j < served[i].size(); ++j) {
        groups_[i].entries[j].served = served[i][j].get<int>();
      }
    }
  }

 private:
  struct Entry {
    std::string text;
    std::optional<std::size_t> prompt_tokens;
    std::optional<std::size_t> completion_tokens;
    int uses = -1;  // -1: unlimited
    int served = 0;
  };

  struct Group {
    RoleTag role = RoleTag::pipeline_op;
    std::optional<std::uint64_t> key;
    std::vector<std::string> match;
    std::vector<Entry> entries;
    std::size_t cursor = 0;

    bool matches(const LlmRequest& req) const {
      if (req.role != role) return false;
      if (key) return *key == fnv1a64(req.user_prompt);
      for (const auto& m : match) {
        if (req.user_prompt.find(m) == std::string::npos) return false;
      }
      return true;
    }

    Entry* servable() {
      for (std::size_t i = 0; i < entries.size(); ++i) {
        Entry& e = entries[(cursor + i) % entries.size()];
        if (e.uses < 0 || e.served < e.uses) {
          cursor = (cursor + i) % entries.size();
          return &e;
        }
      }
      return nullptr;
    }
  };

  void load_file(const std::string& path) {
    std::ifstream in(path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string stripped = trim(line);
      if (stripped.empty() || stripped[0] == '#') continue;
      json j = json::parse(stripped, nullptr, false);
      if (j.is_discarded())
        throw ProviderUnavailable("bad scripted entry at " + path + ":" + std::to_string(lineno));

      auto role = parse_role(j.value("role", "pipeline_op"));
      if (!role) throw ProviderUnavailable("bad role at " + path + ":" + std::to_string(lineno));

      Entry e;
      if (j.contains("json")) {
        e.text = j["json"].dump();
      } else {
        e.text = j.value("text", "");
      }
      if (j.contains("prompt_tokens")) e.prompt_tokens = j["prompt_tokens"].get<std::size_t>();
      if (j.contains("completion_tokens")) e.completion_tokens = j["completion_tokens"].get<std::size_t>();
      e.uses = j.value("uses", -1);

      std::optional<std::uint64_t> key;
      std::vector<std::string> match;
      if (j.contains("key")) key = std::stoull(j["key"].get<std::string>(), nullptr, 16);
      if (j.contains("match")) {
        if (j["match"].is_string()) {
          match.push_back(j["match"].get<std::string>());
        } else {
          for (const auto& m : j["match"]) match.push_back(m.get<std::string>());
        }
      }

      // Append to an existing group with the same selector, else start one.
      for (auto& g : groups_) {
        if (g.role == *role && g.key == key && g.match == match) {
          g.entries.push_back(std::move(e));
          goto next_line;
        }
      }
      {
        Group g;
        g.role = *role;
        g.key = key;
        g.match = std::move(match);
        g.entries.push_back(std::move(e));
        groups_.push_back(std::move(g));
      }
    next_line:;
    }
  }

  Entry& next_entry(const LlmRequest& req) {
    for (auto& g : groups_) {
      if (!g.matches(req)) continue;
      Entry* e = g.servable();
      if (!e) continue;
      ++e->served;
      g.cursor = (g.cursor + 1) % g.entries.size();
      return *e;
    }
    throw ScriptExhausted("no scripted entry for role=" + to_string(req.role) +
                          " prompt-head=" + req.user_prompt.substr(0, 120));
  }

  mutable std::mutex mu_;
  std::vector<Group> groups_;
};

// ---------------------------------------------------------------------------
// Strict-JSON helpers
// ---------------------------------------------------------------------------

/// Extracts the first balanced JSON object from model output, tolerating code
/// fences and surrounding prose. Returns nullopt when nothing parses.
inline std::optional<json> extract_first_json_object(const std::string& text) {
  std::size_t start = text.find('{');
  while (start != std::string::npos) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      char c = text[i];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (c == '\\') {
          escaped = true;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{') {
        ++depth;
      } else if (c == '}') {
        if (--depth == 0) {
          json j = json::parse(text.substr(start, i - start + 1), nullptr, false);
          if (!j.is_discarded()) return j;
          break;
        }
      }
    }
    start = text.find('{', start + 1);
  }
  return std::nullopt;
}

/// Like extract_first_json_object but also accepts a top-level array.
inline std::optional<json> extract_first_json_value(const std::string& text) {
  std::size_t obj = text.find('{');
  std::size_t arr = text.find('[');
  if (arr != std::string::npos && (obj == std::string::npos || arr < obj)) {
    // balanced-array scan
    int depth = 0;
    bool in_string = false, escaped = false;
    for (std::size_t i = arr; i < text.size(); ++i) {
      char c = text[i];
      if (in_string) {
        if (escaped) escaped = false;
        else if (c == '\\') escaped = true;
        else if (c == '"') in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      else if (c == '[') ++depth;
      else if (c == ']' && --depth == 0) {
        json j = json::parse(text.substr(arr, i - arr + 1), nullptr, false);
        if (!j.is_discarded()) return j;
        break;
      }
    }
  }
  return extract_first_json_object(text);
}

/// Returns "" when valid, else a diagnostic the repair prompt can carry.
using SchemaValidator = std::function<std::string(const json&)>;

inline std::map<std::string, SchemaValidator> builtin_schemas() {
  std::map<std::string, SchemaValidator> out;

  out["plan"] = [](const json& j) -> std::string {
    if (!j.is_object()) return "expected a JSON object";
    if (!j.contains("name") || !j["name"].is_string() || j["name"].get<std::string>().empty())
      return "missing non-empty string field 'name'";
    if (!j.contains("plan") || !j["plan"].is_array() || j["plan"].empty())
      return "missing non-empty array field 'plan'";
    for (const auto& s : j["plan"]) {
      if (!s.is_object() || !s.contains("op") || !s["op"].is_string())
        return "every plan step must be an object with an 'op' string";
    }
    if (j.contains("register_ops")) {
      if (!j["register_ops"].is_array()) return "'register_ops' must be an array";
      for (const auto& r : j["register_ops"]) {
        if (!r.is_object() || !r.contains("name") || !r.contains("input") || !r.contains("prompt"))
          return "each register_ops entry needs 'name', 'input' and 'prompt'";
      }
    }
    return "";
  };

  out["reflection"] = [](const json& j) -> std::string {
    if (!j.is_object()) return "expected a JSON object";
    if (!j.contains("score") || !j["score"].is_object()) return "missing object field 'score'";
    for (const char* k : {"precision", "recall", "f1"}) {
      if (!j["score"].contains(k) || !j["score"][k].is_number())
        return std::string("score must contain numeric '") + k + "'";
    }
    if (!j.contains("feedback") || !j["feedback"].is_string()) return "missing string field 'feedback'";
    return "";
  };

  out["judge_scores"] = [](const json& j) -> std::string {
    if (!j.is_object()) return "expected a JSON object keyed by code";
    for (auto it = j.begin(); it != j.end(); ++it) {
      const json& v = it.value();
      if (v.is_number()) continue;
      if (v.is_object() && v.contains("conf") && v["conf"].is_number()) continue;
      return "value for '" + it.key() + "' must be a number or {keep, conf}";
    }
    return "";
  };

  out["code_list"] = [](const json& j) -> std::string {
    const json* arr = &j;
    if (j.is_object() && j.contains("codes")) arr = &j["codes"];
    if (!arr->is_array()) return "expected a JSON array of code strings";
    for (const auto& c : *arr) {
      if (!c.is_string()) return "every element must be a string";
    }
    return "";
  };

  out["entity_list"] = [](const json& j) -> std::string {
    const json* arr = &j;
    if (j.is_object() && j.contains("entities")) arr = &j["entities"];
    if (!arr->is_array()) return "expected a JSON array of {surface, cue} objects";
    for (const auto& e : *arr) {
      if (!e.is_object() || !e.contains("surface") || !e["surface"].is_string())
        return "every entity needs a string 'surface'";
    }
    return "";
  };

  out["synonym_map"] = [](const json& j) -> std::string {
    if (!j.is_object()) return "expected a JSON object surface -> [synonyms]";
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!it.value().is_array()) return "synonyms for '" + it.key() + "' must be an array";
    }
    return "";
  };

  out["evidence_map"] = [](const json& j) -> std::string {
    if (!j.is_object()) return "expected a JSON object code -> [snippets]";
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!it.value().is_array()) return "snippets for '" + it.key() + "' must be an array";
      for (const auto& s : it.value()) {
        if (!s.is_string()) return "snippets must be strings";
      }
    }
    return "";
  };

  return out;
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

struct PriceTable {
  double in_per_1k = 0.0;
  double out_per_1k = 0.0;
};

struct UsageReport {
  std::map<RoleTag, RoleUsage> per_role;
  std::size_t search_tokens = 0;  // designer + coder + reflector
  std::size_t exec_tokens = 0;    // pipeline ops
  std::size_t total_tokens = 0;
  std::size_t total_calls = 0;
  std::optional<double> cost_usd;

  json to_json() const {
    json roles = json::object();
    for (const auto& [r, u] : per_role) {
      roles[to_string(r)] = json{{"prompt_tokens", u.prompt_tokens},
                                 {"completion_tokens", u.completion_tokens},
                                 {"calls", u.calls}};
    }
    json out{{"roles", std::move(roles)},
             {"search_tokens", search_tokens},
             {"exec_tokens", exec_tokens},
             {"total_tokens", total_tokens},
             {"total_calls", total_calls}};
    if (cost_usd) out["cost_usd"] = *cost_usd;
    return out;
  }
};

/// Front door for every model call: one provider, one ledger, optional token
/// budget, strict-JSON completion with bounded repair.
class LlmGateway {
 public:
  explicit LlmGateway(std::shared_ptr<LlmProvider> provider)
      : provider_(std::move(provider)), schemas_(builtin_schemas()) {}

  void set_token_budget(std::size_t cap) { budget_cap_ = cap; }
  void set_prices(PriceTable prices) { prices_ = prices; }
  void register_schema(const std::string& id, SchemaValidator v) { schemas_[id] = std::move(v); }

  const UsageLedger& ledger() const { return ledger_; }
  LlmProvider& provider() { return *provider_; }

  LlmResponse complete(const LlmRequest& req, UsageLedger* local = nullptr) {
    if (budget_cap_ && ledger_.total_tokens() >= *budget_cap_)
      throw BudgetExceeded("token budget exhausted before call");
    LlmResponse resp;
    auto t0 = std::chrono::steady_clock::now();
    try {
      resp = provider_->complete(req);
    } catch (const ScriptExhausted&) {
      throw;
    } catch (const BudgetExceeded&) {
      throw;
    } catch (const std::exception& e) {
      throw ProviderUnavailable(e.what());
    }
    resp.latency_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (static_cast<int>(resp.texts.size()) != req.samples)
      throw ProviderUnavailable("provider returned " + std::to_string(resp.texts.size()) +
                                " texts for samples=" + std::to_string(req.samples));
    if (budget_cap_ &&
        ledger_.total_tokens() + resp.prompt_tokens + resp.completion_tokens > *budget_cap_) {
      throw BudgetExceeded("token budget would be exceeded; response not recorded");
    }
    ledger_.record(req.role, resp);
    if (local) local->record(req.role, resp);
    return resp;
  }

  /// Requests one sample, extracts the first JSON object, validates it against
  /// the registered schema and re-prompts with the validation error appended,
  /// up to max_repairs times.
  json complete_json(const LlmRequest& req, const std::string& schema_id, int max_repairs,
                     UsageLedger* local = nullptr) {
    auto sit = schemas_.find(schema_id);
    if (sit == schemas_.end()) throw Error("schema '" + schema_id + "' not registered");

    LlmRequest attempt_req = req;
    attempt_req.samples = 1;
    std::vector<std::string> attempts;
    std::string last_error;
    for (int attempt = 0; attempt <= max_repairs; ++attempt) {
      LlmResponse resp = complete(attempt_req, local);
      const std::string& text = resp.texts.front();
      attempts.push_back(text);
      auto value = extract_first_json_value(text);
      if (!value) {
        last_error = "no parseable JSON value found in the response";
      } else {
        last_error = sit->second(*value);
        if (last_error.empty()) return *value;
      }
      attempt_req.user_prompt = req.user_prompt +
                                "\n\nYour previous response was rejected: " + last_error +
                                "\nReturn STRICTLY ONE JSON OBJECT and nothing else.";
    }
    throw JsonIrrecoverable("schema '" + schema_id + "' not satisfied after " +
                                std::to_string(max_repairs + 1) + " attempts: " + last_error,
                            std::move(attempts));
  }

  UsageReport usage_report() const {
    UsageReport rep;
    rep.per_role = ledger_.snapshot();
    for (const auto& [role, u] : rep.per_role) {
      rep.total_tokens += u.total();
      rep.total_calls += u.calls;
      if (role == RoleTag::pipeline_op) {
        rep.exec_tokens += u.total();
      } else {
        rep.search_tokens += u.total();
      }
    }
    if (prices_) {
      std::size_t in = 0, out = 0;
      for (const auto& [role, u] : rep.per_role) {
        in += u.prompt_tokens;
        out += u.completion_tokens;
      }
      rep.cost_usd = static_cast<double>(in) / 1000.0 * prices_->in_per_1k +
                     static_cast<double>(out) / 1000.0 * prices_->out_per_1k;
    }
    return rep;
  }

 private:
  std::shared_ptr<LlmProvider> provider_;
  UsageLedger ledger_;
  std::optional<std::size_t> budget_cap_;
  std::optional<PriceTable> prices_;
  std::map<std::string, SchemaValidator> schemas_;
};

/// Loads {model: {in_per_1k, out_per_1k}} and selects one model's prices.
inline PriceTable load_price_table(const std::string& path, const std::string& model) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open price table: " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error("bad price table: " + path);
  if (!j.contains(model)) throw Error("model '" + model + "' not in price table " + path);
  PriceTable p;
  p.in_per_1k = j[model].value("in_per_1k", 0.0);
  p.out_per_1k = j[model].value("out_per_1k", 0.0);
  return p;
}

}  // namespace meddcr
