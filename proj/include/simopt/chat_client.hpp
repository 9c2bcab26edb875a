#pragma once

#include <chrono>
#include <cstdlib>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <httplib.h>
// <resolv.h>, pulled in by httplib, defines _res as a macro; Eigen uses that name for parameters.
#ifdef _res
#undef _res
#endif
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "simopt/errors.hpp"

namespace simopt {

struct ChatMessage {
  std::string role;
  std::string content;
};

struct RetryPolicy {
  int max_attempts = 4;
  std::chrono::milliseconds base_delay{500};
  double backoff = 2.0;
};

struct EndpointConfig {
  /// Full URL of a chat-completions endpoint, e.g. https://host/v1/chat/completions.
  std::string endpoint;
  std::string model;
  /// Name of the environment variable holding the API key.
  std::string api_key_env = "ADVISOR_API_KEY";
  RetryPolicy retry;
  int timeout_seconds = 120;

  /// Endpoint from ADVISOR_ENDPOINT when `endpoint` is empty.
  std::string resolved_endpoint() const {
    if (!endpoint.empty()) return endpoint;
    const char* env = std::getenv("ADVISOR_ENDPOINT");
    return env ? std::string(env) : std::string{};
  }
};

/// Failure of a single request. `status` is the HTTP status or 0.
struct TransportError {
  int status = 0;
  std::string message;
  bool retryable = true;
};

/// Minimal chat-completions client: one POST per call, JSON in and out.
class ChatClient {
 public:
  explicit ChatClient(EndpointConfig cfg) : cfg_(std::move(cfg)) {}

  const EndpointConfig& config() const { return cfg_; }

  /// Sends one request. Returns the reply text or a transport error.
  std::variant<std::string, TransportError> send(const std::vector<ChatMessage>& messages) const {
    const std::string url = cfg_.resolved_endpoint();
    if (url.empty()) return TransportError{0, "no endpoint configured (set ADVISOR_ENDPOINT)", false};
    const auto split = split_url(url);
    if (!split) return TransportError{0, "malformed endpoint URL '" + url + "'", false};

    nlohmann::json body;
    body["model"] = cfg_.model;
    body["messages"] = nlohmann::json::array();
    for (const auto& m : messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});

    httplib::Headers headers;
    if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    httplib::Client client(split->first);
    client.set_connection_timeout(cfg_.timeout_seconds);
    client.set_read_timeout(cfg_.timeout_seconds);
    auto res = client.Post(split->second, headers, body.dump(), "application/json");
    if (!res) return TransportError{0, "request failed: " + httplib::to_string(res.error()), true};
    if (res->status < 200 || res->status >= 300) {
      const bool retryable = res->status == 429 || res->status >= 500;
      return TransportError{res->status, "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200),
                            retryable};
    }
    try {
      return extract_content(nlohmann::json::parse(res->body));
    } catch (const std::exception& e) {
      return TransportError{res->status, std::string("unreadable response body: ") + e.what(), true};
    }
  }

  /// Sends until `parse` accepts the reply or the retry policy is spent.
  /// `parse` returns nullopt to request a retry.
  template <class T>
  T request(const std::vector<ChatMessage>& messages,
            const std::function<std::optional<T>(const std::string&)>& parse) const {
    std::string last = "no attempt made";
    int last_status = 0;
    auto delay = cfg_.retry.base_delay;
    for (int attempt = 1; attempt <= cfg_.retry.max_attempts; ++attempt) {
      if (attempt > 1) {
        std::this_thread::sleep_for(delay);
        delay = std::chrono::milliseconds(static_cast<long long>(delay.count() * cfg_.retry.backoff));
      }
      auto reply = send(messages);
      if (auto* err = std::get_if<TransportError>(&reply)) {
        last = err->message;
        last_status = err->status;
        spdlog::warn("chat request attempt {} failed: {}", attempt, err->message);
        if (!err->retryable) break;
        continue;
      }
      const auto& text = std::get<std::string>(reply);
      if (auto parsed = parse(text)) return *parsed;
      last = "unparseable reply: " + text.substr(0, 200);
      last_status = 0;
      spdlog::warn("chat request attempt {}: {}", attempt, last);
    }
    throw AdvisorUnavailable(last, last_status);
  }

  /// Splits "scheme://host:port/path" into ("scheme://host:port", "/path").
  static std::optional<std::pair<std::string, std::string>> split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) return std::nullopt;
    const auto path_begin = url.find('/', scheme_end + 3);
    if (path_begin == std::string::npos) return std::make_pair(url, std::string("/"));
    return std::make_pair(url.substr(0, path_begin), url.substr(path_begin));
  }

 private:
  static std::string extract_content(const nlohmann::json& j) {
    if (j.contains("choices")) return j.at("choices").at(0).at("message").at("content").get<std::string>();
    if (j.contains("content") && j["content"].is_array()) return j["content"].at(0).at("text").get<std::string>();
    if (j.contains("content")) return j["content"].get<std::string>();
    throw std::runtime_error("no choices/content field");
  }

  EndpointConfig cfg_;
};

/// Strips a surrounding markdown code fence, if any.
inline std::string strip_code_fence(std::string text) {
  auto trim = [](std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    const auto e = s.find_last_not_of(" \t\r\n");
    s = b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  trim(text);
  if (text.rfind("```", 0) == 0) {
    const auto nl = text.find('\n');
    const auto close = text.rfind("```");
    if (nl != std::string::npos && close != std::string::npos && close > nl) text = text.substr(nl + 1, close - nl - 1);
    trim(text);
  }
  return text;
}

}  // namespace simopt
