#pragma once

#include <sstream>
#include <string>

#include "simopt/chat_client.hpp"
#include "simopt/meta_optimizer.hpp"

namespace simopt {

inline const std::string& default_revision_template() {
  static const std::string t =
      "Total evaluation budget: {budget}. Available algorithms: {algorithms}.\n\n"
      "{history}\n"
      "Current schedule: {schedule} (S={score})\n"
      "Per-segment digest (share of total improvement, fraction of steps above the incumbent):\n"
      "{segments}\n"
      "Mean normalised best-so-far curve on the training ensembles:\n{curve}\n\n"
      "Propose one revised schedule. End your reply with it in the form ALGO(T)->ALGO(T), budgets summing to "
      "{budget}.";
  return t;
}

inline void replace_all(std::string& s, const std::string& key, const std::string& value) {
  for (std::size_t pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos + value.size())) {
    s.replace(pos, key.size(), value);
  }
}

/// Mean over trajectories of (b_1 − b_t)/(b_1 − b_T), sampled at no more than `cap` steps.
inline std::vector<std::pair<std::size_t, double>> improvement_curve(const ScoreResult& r, std::size_t cap) {
  std::vector<std::pair<std::size_t, double>> out;
  if (r.per_point.empty() || cap == 0) return out;
  const std::size_t T = r.per_point.front().trajectory.size();
  if (T == 0) return out;
  std::vector<double> mean(T, 0.0);
  for (const auto& p : r.per_point) {
    const auto b = best_so_far(p.trajectory.values());
    const double total = b.front() - b.back();
    for (std::size_t t = 0; t < T && t < b.size(); ++t) mean[t] += total > 0 ? (b.front() - b[t]) / total : 0.0;
  }
  const std::size_t n = std::min(cap, T);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t t = n == 1 ? T - 1 : k * (T - 1) / (n - 1);
    out.emplace_back(t + 1, mean[t] / static_cast<double>(r.per_point.size()));
  }
  return out;
}

/// Revision operator backed by a chat-completions endpoint.
class LlmRevisionOperator final : public RevisionOperator {
 public:
  explicit LlmRevisionOperator(EndpointConfig cfg, std::string prompt_template = default_revision_template(),
                               std::size_t curve_points = 10)
      : client_(std::move(cfg)), template_(std::move(prompt_template)), curve_points_(curve_points) {}

  std::string render(const RevisionContext& ctx) const {
    std::ostringstream segs, curve, algos;
    segs << std::fixed << std::setprecision(3);
    for (const auto& d : segment_digests(ctx.current, ctx.current_result)) {
      segs << "  " << d.algorithm << "(" << d.budget << "): improvement share " << d.improvement_share
           << ", overshoot rate " << d.overshoot_rate << '\n';
    }
    curve << std::fixed << std::setprecision(3);
    for (const auto& [t, v] : improvement_curve(ctx.current_result, curve_points_)) curve << "  t=" << t << ": " << v << '\n';
    const auto ids = AlgorithmRegistry::instance().ids();
    for (std::size_t i = 0; i < ids.size(); ++i) algos << (i ? ", " : "") << ids[i];
    std::ostringstream score;
    score << std::fixed << std::setprecision(4) << ctx.current_result.S;

    std::string prompt = template_;
    replace_all(prompt, "{budget}", std::to_string(ctx.budget));
    replace_all(prompt, "{algorithms}", algos.str());
    replace_all(prompt, "{history}", ctx.history.render());
    replace_all(prompt, "{schedule}", ctx.current.to_string());
    replace_all(prompt, "{score}", score.str());
    replace_all(prompt, "{segments}", segs.str());
    replace_all(prompt, "{curve}", curve.str());
    return prompt;
  }

  Proposal propose(const RevisionContext& ctx) override {
    const std::string reply = ask(render(ctx));
    if (auto s = extract_schedule(reply)) return {repair_budget(*s, ctx.budget), reply};
    spdlog::warn("no schedule found in the advisor reply; keeping {}", ctx.current.to_string());
    return {ctx.current, "unparseable reply: " + reply.substr(0, 200)};
  }

  Proposal initial(const BaselineReference& ref, std::int64_t budget) override {
    std::ostringstream os;
    os << "Total evaluation budget: " << budget << ".\n\n"
       << ref.summary()
       << "\nPropose an initial schedule that combines these algorithms. End your reply with it in the form "
          "ALGO(T)->ALGO(T), budgets summing to "
       << budget << ".";
    const std::string reply = ask(os.str());
    if (auto s = extract_schedule(reply)) return {repair_budget(*s, budget), reply};
    throw OperatorFailure("no schedule in the advisor reply");
  }

 private:
  std::string ask(const std::string& prompt) {
    try {
      return client_.request<std::string>(
          {{"system", "You design hybrid schedules of simulation-optimisation algorithms for minimisation."},
           {"user", prompt}},
          [](const std::string& r) -> std::optional<std::string> {
            if (r.empty()) return std::nullopt;
            return r;
          });
    } catch (const AdvisorUnavailable& e) {
      throw OperatorFailure(std::string("advisor unavailable: ") + e.what());
    }
  }

  ChatClient client_;
  std::string template_;
  std::size_t curve_points_;
};

}  // namespace simopt
