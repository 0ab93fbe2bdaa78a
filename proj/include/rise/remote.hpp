#pragma once

// Chat-completion client over HTTP(S). Needs cpp-httplib and OpenSSL (for
// prompt digests, and for https endpoints when CPPHTTPLIB_OPENSSL_SUPPORT is set).

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <mutex>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "rise/backends.hpp"
#include "rise/digest.hpp"

namespace rise {

struct Endpoint {
  std::string scheme_host_port;  // "http://host:port"
  std::string path;              // "/v1/chat/completions"
};

inline Endpoint parse_endpoint(const std::string& url) {
  const auto sep = url.find("://");
  if (sep == std::string::npos) throw Error(ErrorKind::DomainError, "endpoint needs a scheme: '" + url + "'");
  const std::string scheme = url.substr(0, sep);
  if (scheme != "http" && scheme != "https") throw Error(ErrorKind::DomainError, "unsupported scheme '" + scheme + "'");
  const auto slash = url.find('/', sep + 3);
  Endpoint e;
  e.scheme_host_port = url.substr(0, slash);
  e.path = slash == std::string::npos ? "/" : url.substr(slash);
  if (e.scheme_host_port.size() <= sep + 3) throw Error(ErrorKind::DomainError, "endpoint has no host: '" + url + "'");
  return e;
}

struct RemoteConfig {
  std::string endpoint;                     // full URL of the chat-completion route
  std::string model;
  std::string auth_env;                     // name of the env var holding the bearer token; empty = no auth
  int max_attempts = 3;
  std::chrono::milliseconds backoff_base{1000};
  std::size_t max_in_flight = 4;
  std::chrono::seconds timeout{120};
  std::string ledger_path;                  // JSONL traffic ledger; empty = none
};

namespace detail {

class Gate {
 public:
  explicit Gate(std::size_t limit) : free_(limit ? limit : 1) {}
  void acquire() {
    std::unique_lock lock(m_);
    cv_.wait(lock, [&] { return free_ > 0; });
    --free_;
  }
  void release() {
    {
      std::lock_guard lock(m_);
      ++free_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex m_;
  std::condition_variable cv_;
  std::size_t free_;
};

struct GateHold {
  Gate& g;
  explicit GateHold(Gate& gate) : g(gate) { g.acquire(); }
  ~GateHold() { g.release(); }
};

}  // namespace detail

/// Builds the chat-completion request body: one user message with an image
/// part (when the sample has an image reference) and a text part.
inline nlohmann::ordered_json chat_request_body(const std::string& model, const GenerationRequest& r) {
  nlohmann::ordered_json content = nlohmann::ordered_json::array();
  if (!r.image_ref.empty())
    content.push_back({{"type", "image_url"}, {"image_url", {{"url", r.image_ref}}}});
  content.push_back({{"type", "text"}, {"text", r.prompt}});
  nlohmann::ordered_json body = {
      {"model", model},
      {"messages", nlohmann::ordered_json::array({{{"role", "user"}, {"content", content}}})},
      {"temperature", r.temperature},
      {"max_tokens", r.max_tokens},
  };
  if (r.seed) body["seed"] = *r.seed;
  return body;
}

class RemoteBackend final : public Backend {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  explicit RemoteBackend(RemoteConfig cfg, Sleeper sleeper = {})
      : cfg_(std::move(cfg)), endpoint_(parse_endpoint(cfg_.endpoint)), gate_(cfg_.max_in_flight),
        sleep_(sleeper ? std::move(sleeper) : Sleeper([](auto d) { std::this_thread::sleep_for(d); })) {
    if (cfg_.max_attempts < 1) throw Error(ErrorKind::DomainError, "max_attempts must be >= 1");
  }

  std::string generate(const GenerationRequest& request) const override {
    check_request(request);
    const std::string token = credential();
    const std::string body = chat_request_body(cfg_.model, request).dump();
    Error last(ErrorKind::RemoteUnavailable, "no attempt made");
    for (int attempt = 1; attempt <= cfg_.max_attempts; ++attempt) {
      if (attempt > 1) sleep_(cfg_.backoff_base * (1 << (attempt - 2)));
      const auto t0 = std::chrono::steady_clock::now();
      try {
        auto [text, usage] = post_once(body, token);
        log_traffic(request, attempt, t0, 200, text, usage);
        return text;
      } catch (const Error& e) {
        log_traffic(request, attempt, t0, -1, e.detail, nlohmann::json::object());
        if (e.kind == ErrorKind::AuthFailure) throw;
        last = e;
      }
    }
    throw Error(last.kind, last.detail + " (after " + std::to_string(cfg_.max_attempts) + " attempts)");
  }

  std::string describe() const override { return "remote(" + cfg_.endpoint + ", model=" + cfg_.model + ")"; }
  bool deterministic() const override { return false; }

 private:
  std::string credential() const {
    if (cfg_.auth_env.empty()) return {};
    const char* v = std::getenv(cfg_.auth_env.c_str());
    if (!v || !*v) throw Error(ErrorKind::AuthFailure, "credential variable " + cfg_.auth_env + " is not set");
    return v;
  }

  std::pair<std::string, nlohmann::json> post_once(const std::string& body, const std::string& token) const {
    detail::GateHold hold(gate_);
    httplib::Client cli(endpoint_.scheme_host_port);
    cli.set_connection_timeout(cfg_.timeout);
    cli.set_read_timeout(cfg_.timeout);
    cli.set_write_timeout(cfg_.timeout);
    httplib::Headers headers;
    if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);
    auto res = cli.Post(endpoint_.path, headers, body, "application/json");
    if (!res) {
      const auto err = res.error();
      if (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout)
        throw Error(ErrorKind::Timeout, "request timed out: " + httplib::to_string(err));
      throw Error(ErrorKind::RemoteUnavailable, "transport error: " + httplib::to_string(err));
    }
    if (res->status == 401 || res->status == 403)
      throw Error(ErrorKind::AuthFailure, "HTTP " + std::to_string(res->status));
    if (res->status != 200) throw Error(ErrorKind::RemoteUnavailable, "HTTP " + std::to_string(res->status));
    auto doc = nlohmann::json::parse(res->body, nullptr, false);
    if (doc.is_discarded() || !doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty())
      throw Error(ErrorKind::RemoteUnavailable, "unexpected response body");
    const auto& msg = doc["choices"][0];
    std::string text;
    if (msg.contains("message") && msg["message"].contains("content") && msg["message"]["content"].is_string())
      text = msg["message"]["content"].get<std::string>();
    else if (msg.contains("text") && msg["text"].is_string())
      text = msg["text"].get<std::string>();
    else
      throw Error(ErrorKind::RemoteUnavailable, "response has no completion text");
    return {text, doc.value("usage", nlohmann::json::object())};
  }

  void log_traffic(const GenerationRequest& r, int attempt, std::chrono::steady_clock::time_point t0, int status,
                   const std::string& completion, const nlohmann::json& usage) const {
    if (cfg_.ledger_path.empty()) return;
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);
    nlohmann::ordered_json line = {
        {"sample_id", r.sample_id},
        {"stage", to_string(r.stage)},
        {"attempt", attempt},
        {"prompt_sha256", sha256_hex(r.prompt)},
        {"latency_ms", ms.count()},
        {"ok", status == 200},
        {"prompt_tokens", usage.is_object() ? usage.value("prompt_tokens", 0) : 0},
        {"completion_tokens", usage.is_object() ? usage.value("completion_tokens", 0) : 0},
    };
    line[status == 200 ? "completion" : "error"] = completion;
    std::lock_guard lock(ledger_mutex_);
    std::ofstream out(cfg_.ledger_path, std::ios::app);
    out << line.dump() << '\n';
  }

  RemoteConfig cfg_;
  Endpoint endpoint_;
  mutable detail::Gate gate_;
  Sleeper sleep_;
  mutable std::mutex ledger_mutex_;
};

}  // namespace rise
