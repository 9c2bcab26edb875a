#pragma once

#include <atomic>
#include <chrono>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "simopt/chat_client.hpp"

namespace simopt::testing {

/// Local chat-completions endpoint that replays a fixed list of (status, content) replies.
class StubServer {
 public:
  explicit StubServer(std::vector<std::pair<int, std::string>> replies) : replies_(std::move(replies)) {
    server_.Post("/v1/chat", [this](const httplib::Request& req, httplib::Response& res) {
      last_body = req.body;
      last_auth = req.get_header_value("Authorization");
      const auto i = std::min<std::size_t>(hits_++, replies_.size() - 1);
      res.status = replies_[i].first;
      nlohmann::json body{{"choices", {{{"message", {{"role", "assistant"}, {"content", replies_[i].second}}}}}}};
      res.set_content(body.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat"; }
  int hits() const { return hits_; }
  std::string last_body, last_auth;

 private:
  httplib::Server server_;
  std::vector<std::pair<int, std::string>> replies_;
  std::atomic<int> hits_{0};
  int port_ = 0;
  std::thread thread_;
};

EndpointConfig fast_config(const std::string& url) {
  EndpointConfig c;
  c.endpoint = url;
  c.model = "stub-model";
  c.retry.base_delay = std::chrono::milliseconds(1);
  c.timeout_seconds = 5;
  return c;
}

}  // namespace simopt::testing
