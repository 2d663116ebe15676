#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "meddcr/errors.hpp"
#include "meddcr/llm.hpp"

namespace meddcr {

/// Remote chat-completions backend. Endpoint comes from DCR_API_BASE
/// (e.g. "http://localhost:8089/v1"), auth from DCR_API_KEY. Retries
/// transient failures with exponential backoff and caps in-flight requests.
class HttpProvider : public LlmProvider {
 public:
  struct Options {
    std::string model = "gpt-4o";
    std::string base_url;        // overrides DCR_API_BASE when set
    std::string api_key;         // overrides DCR_API_KEY when set
    int max_retries = 3;
    int max_in_flight = 4;
    int backoff_ms = 250;
    int timeout_s = 120;
  };

  explicit HttpProvider(Options opt) : opt_(std::move(opt)) {
    if (opt_.base_url.empty()) {
      const char* env = std::getenv("DCR_API_BASE");
      if (!env || !*env) throw ProviderUnavailable("DCR_API_BASE not set");
      opt_.base_url = env;
    }
    if (opt_.api_key.empty()) {
      const char* env = std::getenv("DCR_API_KEY");
      if (env) opt_.api_key = env;
    }
    split_url();
  }

  LlmResponse complete(const LlmRequest& req) override {
    InFlightGuard guard(*this);

    json body{{"model", opt_.model},
              {"messages",
               json::array({json{{"role", "system"}, {"content", req.system_prompt}},
                            json{{"role", "user"}, {"content", req.user_prompt}}})},
              {"temperature", req.temperature},
              {"n", req.samples},
              {"max_tokens", req.max_tokens}};
    const std::string payload = body.dump();

    std::string last_error;
    for (int attempt = 0; attempt <= opt_.max_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(opt_.backoff_ms << (attempt - 1)));
      }
      httplib::Client client(host_);
      client.set_read_timeout(opt_.timeout_s, 0);
      httplib::Headers headers;
      if (!opt_.api_key.empty()) headers.emplace("Authorization", "Bearer " + opt_.api_key);
      auto res = client.Post((path_ + "/chat/completions").c_str(), headers, payload, "application/json");
      if (!res) {
        last_error = "connection failed: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        throw ProviderUnavailable("HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
      }
      json j = json::parse(res->body, nullptr, false);
      if (j.is_discarded() || !j.contains("choices"))
        throw ProviderUnavailable("unparseable provider response");
      LlmResponse out;
      for (const auto& choice : j["choices"]) {
        out.texts.push_back(choice.at("message").at("content").get<std::string>());
      }
      if (j.contains("usage")) {
        out.prompt_tokens = j["usage"].value("prompt_tokens", 0u);
        out.completion_tokens = j["usage"].value("completion_tokens", 0u);
      } else {
        out.prompt_tokens = approx_tokens(req.user_prompt);
        for (const auto& t : out.texts) out.completion_tokens += approx_tokens(t);
      }
      return out;
    }
    throw ProviderUnavailable("provider gave up after " + std::to_string(opt_.max_retries + 1) +
                              " attempts: " + last_error);
  }

  std::string name() const override { return "http:" + opt_.model; }

 private:
  struct InFlightGuard {
    HttpProvider& p;
    explicit InFlightGuard(HttpProvider& prov) : p(prov) {
      std::unique_lock<std::mutex> lock(p.mu_);
      p.cv_.wait(lock, [&] { return p.in_flight_ < p.opt_.max_in_flight; });
      ++p.in_flight_;
    }
    ~InFlightGuard() {
      {
        std::lock_guard<std::mutex> lock(p.mu_);
        --p.in_flight_;
      }
      p.cv_.notify_one();
    }
  };

  void split_url() {
    // scheme://host[:port]/path -> client base (scheme://host:port) + path
    auto scheme_end = opt_.base_url.find("://");
    std::size_t path_start =
        scheme_end == std::string::npos ? opt_.base_url.find('/') : opt_.base_url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
      host_ = opt_.base_url;
      path_ = "";
    } else {
      host_ = opt_.base_url.substr(0, path_start);
      path_ = opt_.base_url.substr(path_start);
      while (!path_.empty() && path_.back() == '/') path_.pop_back();
    }
  }

  Options opt_;
  std::string host_;
  std::string path_;
  std::mutex mu_;
  std::condition_variable cv_;
  int in_flight_ = 0;
};

}  // namespace meddcr
