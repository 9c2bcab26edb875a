#pragma once

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "simopt/chat_client.hpp"
#include "simopt/skeleton.hpp"

namespace simopt {

/// Parses a reply that must be a JSON list of strings (a code fence is tolerated).
inline std::optional<std::vector<std::string>> parse_name_list(const std::string& reply) {
  try {
    const auto j = nlohmann::json::parse(strip_code_fence(reply));
    if (!j.is_array()) return std::nullopt;
    std::vector<std::string> out;
    for (const auto& e : j) {
      if (!e.is_string()) return std::nullopt;
      out.push_back(e.get<std::string>());
    }
    return out;
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
}

/// Advisor backed by a chat-completions endpoint.
class RemoteAdvisor final : public Advisor {
 public:
  explicit RemoteAdvisor(EndpointConfig cfg) : client_(std::move(cfg)) {}

  std::vector<std::string> expand(const std::string& node, const DiscoveryHistory& history,
                                  const std::string& hint = {}) override {
    std::ostringstream user;
    user << "Exogenous variables: ";
    bool first = true;
    for (const auto& v : history.catalog) {
      if (v.kind != VariableKind::Input) continue;
      user << (first ? "" : ", ") << v.name;
      first = false;
    }
    user << "\n\nDiscovered causal relations so far:\n" << history.render_edges();
    if (!history.notes.empty()) {
      user << "\nHistory:\n";
      for (const auto& n : history.notes) user << n << '\n';
    }
    if (!hint.empty()) user << '\n' << hint;
    user << "\nWhich catalog variables does <" << node << "> directly influence? "
         << "Answer with a JSON array of variable names and nothing else.";
    const auto names = client_.request<std::vector<std::string>>(
        {{"system", system_prompt(history)}, {"user", user.str()}}, parse_name_list);
    return filter_to_catalog(names, history.catalog);
  }

  std::vector<std::string> select_exogenous(const std::vector<VariableSpec>& catalog) override {
    DiscoveryHistory h;
    h.catalog = catalog;
    const auto names = client_.request<std::vector<std::string>>(
        {{"system", system_prompt(h)},
         {"user", "Which catalog variables are exogenous, i.e. set from outside the system? "
                  "Answer with a JSON array of variable names and nothing else."}},
        parse_name_list);
    return filter_to_catalog(names, catalog);
  }

  DiscoveryHistory compact(const DiscoveryHistory& history) override {
    std::ostringstream user;
    user << "Summarise the following causal discovery notes in at most "
         << history.char_budget / 4 << " characters. Reply with the summary text only.\n\n";
    for (const auto& n : history.notes) user << n << '\n';
    const auto summary = client_.request<std::string>(
        {{"system", "You compact working notes without losing decisions."}, {"user", user.str()}},
        [](const std::string& reply) -> std::optional<std::string> {
          if (reply.empty()) return std::nullopt;
          return reply;
        });
    DiscoveryHistory out = history;
    out.notes.assign(1, summary);
    return out;
  }

 private:
  static std::string system_prompt(const DiscoveryHistory& h) {
    std::ostringstream os;
    os << (h.instructions.empty() ? "You identify causal relations between system variables." : h.instructions)
       << "\n\nVariable catalog:\n"
       << h.catalog_digest();
    return os.str();
  }

  ChatClient client_;
};

}  // namespace simopt
