#pragma once

#include <algorithm>
#include <deque>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "simopt/errors.hpp"
#include "simopt/rng.hpp"
#include "simopt/table.hpp"

namespace simopt {

enum class VariableKind { Input, Latent, Objective };

inline std::string to_string(VariableKind k) {
  switch (k) {
    case VariableKind::Input: return "input";
    case VariableKind::Latent: return "latent";
    case VariableKind::Objective: return "objective";
  }
  return "latent";
}

inline VariableKind parse_kind(const std::string& s) {
  if (s == "input") return VariableKind::Input;
  if (s == "latent") return VariableKind::Latent;
  if (s == "objective") return VariableKind::Objective;
  throw InvalidInput("unknown variable kind '" + s + "'");
}

struct VariableSpec {
  std::string name;
  std::string description;
  VariableKind kind = VariableKind::Latent;
  int dim = 1;
};

using Edge = std::pair<std::string, std::string>;

/// Unique names, exactly one objective, positive dims.
inline void validate_catalog(const std::vector<VariableSpec>& catalog) {
  std::set<std::string> seen;
  int objectives = 0;
  for (const auto& v : catalog) {
    if (v.name.empty()) throw InvalidInput("variable with empty name");
    if (!seen.insert(v.name).second) throw InvalidInput("duplicate variable name '" + v.name + "'");
    if (v.dim < 1) throw InvalidInput("variable '" + v.name + "' has non-positive dim");
    if (v.kind == VariableKind::Objective) {
      ++objectives;
      if (v.dim != 1) throw InvalidInput("objective '" + v.name + "' must be scalar");
    }
  }
  if (objectives != 1) throw InvalidInput("catalog must contain exactly one objective, found " + std::to_string(objectives));
}

enum class InsertOutcome { Accepted, SinkViolation, ExogeneityViolation, CycleViolation, Duplicate };

inline std::string to_string(InsertOutcome o) {
  switch (o) {
    case InsertOutcome::Accepted: return "Accepted";
    case InsertOutcome::SinkViolation: return "SinkViolation";
    case InsertOutcome::ExogeneityViolation: return "ExogeneityViolation";
    case InsertOutcome::CycleViolation: return "CycleViolation";
    case InsertOutcome::Duplicate: return "Duplicate";
  }
  return "?";
}

/// DAG over the cataloged variables. Edges keep insertion order.
class CausalSkeleton {
 public:
  CausalSkeleton() = default;
  explicit CausalSkeleton(std::vector<VariableSpec> variables) : variables_(std::move(variables)) {
    validate_catalog(variables_);
    for (std::size_t i = 0; i < variables_.size(); ++i) index_[variables_[i].name] = i;
  }

  const std::vector<VariableSpec>& variables() const { return variables_; }
  const std::vector<Edge>& edges() const { return edges_; }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UnknownVariable("'" + name + "' is not in the catalog");
    return it->second;
  }
  const VariableSpec& variable(const std::string& name) const { return variables_[index_of(name)]; }

  bool has_edge(const std::string& u, const std::string& v) const {
    return std::find(edges_.begin(), edges_.end(), Edge{u, v}) != edges_.end();
  }

  /// Parents in catalog order.
  std::vector<std::string> parents(const std::string& v) const {
    std::vector<std::string> out;
    for (const auto& var : variables_) {
      if (has_edge(var.name, v)) out.push_back(var.name);
    }
    return out;
  }
  std::vector<std::string> children(const std::string& u) const {
    std::vector<std::string> out;
    for (const auto& var : variables_) {
      if (has_edge(u, var.name)) out.push_back(var.name);
    }
    return out;
  }

  std::string objective() const {
    for (const auto& v : variables_) {
      if (v.kind == VariableKind::Objective) return v.name;
    }
    return {};
  }
  std::vector<std::string> names_of(VariableKind kind) const {
    std::vector<std::string> out;
    for (const auto& v : variables_) {
      if (v.kind == kind) out.push_back(v.name);
    }
    return out;
  }
  std::vector<std::string> inputs() const { return names_of(VariableKind::Input); }
  std::vector<std::string> latents() const { return names_of(VariableKind::Latent); }

  /// True when a directed path leads from `from` to `to`.
  bool reaches(const std::string& from, const std::string& to) const {
    if (from == to) return true;
    std::vector<bool> seen(variables_.size(), false);
    std::deque<std::string> queue{from};
    seen[index_of(from)] = true;
    while (!queue.empty()) {
      auto u = queue.front();
      queue.pop_front();
      for (const auto& e : edges_) {
        if (e.first != u) continue;
        if (e.second == to) return true;
        const auto j = index_of(e.second);
        if (!seen[j]) {
          seen[j] = true;
          queue.push_back(e.second);
        }
      }
    }
    return false;
  }

  bool objective_reachable() const {
    const auto y = objective();
    for (const auto& x : inputs()) {
      if (reaches(x, y)) return true;
    }
    return false;
  }

  bool is_acyclic() const { return topological_order().size() == variables_.size(); }

  /// Kahn order with catalog-order tie breaking. Shorter than the catalog
  /// when the edge set has a cycle.
  std::vector<std::string> topological_order() const {
    std::vector<int> indeg(variables_.size(), 0);
    for (const auto& e : edges_) ++indeg[index_of(e.second)];
    std::vector<std::string> order;
    std::vector<bool> done(variables_.size(), false);
    bool progress = true;
    while (progress) {
      progress = false;
      for (std::size_t i = 0; i < variables_.size(); ++i) {
        if (done[i] || indeg[i] != 0) continue;
        done[i] = true;
        order.push_back(variables_[i].name);
        for (const auto& e : edges_) {
          if (e.first == variables_[i].name) --indeg[index_of(e.second)];
        }
        progress = true;
        break;
      }
    }
    return order;
  }

  /// Every structural invariant: acyclic, sink objective, exogenous inputs,
  /// known endpoints.
  bool is_valid() const {
    for (const auto& [u, v] : edges_) {
      if (!contains(u) || !contains(v)) return false;
      if (variable(u).kind == VariableKind::Objective) return false;
      if (variable(v).kind == VariableKind::Input) return false;
    }
    return is_acyclic();
  }

  /// Bypasses the admissibility checks; used when loading files.
  void add_edge_unchecked(const std::string& u, const std::string& v) {
    index_of(u);
    index_of(v);
    edges_.emplace_back(u, v);
  }
  void pop_edge() { edges_.pop_back(); }

 private:
  std::vector<VariableSpec> variables_;
  std::map<std::string, std::size_t> index_;
  std::vector<Edge> edges_;
};

/// Admissibility checks in order: sink, exogeneity, duplicate, acyclicity.
inline InsertOutcome try_insert_edge(CausalSkeleton& skel, const std::string& u, const std::string& v) {
  const auto& from = skel.variable(u);
  const auto& to = skel.variable(v);
  if (from.kind == VariableKind::Objective) return InsertOutcome::SinkViolation;
  if (to.kind == VariableKind::Input) return InsertOutcome::ExogeneityViolation;
  if (skel.has_edge(u, v)) return InsertOutcome::Duplicate;
  if (u == v || skel.reaches(v, u)) return InsertOutcome::CycleViolation;
  skel.add_edge_unchecked(u, v);
  return InsertOutcome::Accepted;
}

/// Running record fed back to the advisor on every turn.
struct DiscoveryHistory {
  std::string instructions;
  std::vector<VariableSpec> catalog;
  std::vector<Edge> accepted_edges;
  std::vector<std::string> notes;  // prose; the only part compaction may rewrite
  int turn_count = 0;
  std::size_t char_budget = 20000;

  std::string catalog_digest() const {
    std::ostringstream os;
    for (const auto& v : catalog) {
      os << "- <" << v.name << "> [" << to_string(v.kind) << ", dim " << v.dim << "]: " << v.description << '\n';
    }
    return os.str();
  }

  std::string render_edges() const {
    std::ostringstream os;
    for (const auto& [u, v] : accepted_edges) os << u << " -> " << v << '\n';
    return os.str();
  }

  std::string render() const {
    std::ostringstream os;
    os << "Instructions:\n" << instructions << "\n\nVariables:\n" << catalog_digest();
    os << "\nDiscovered causal relations so far:\n" << render_edges();
    if (!notes.empty()) {
      os << "\nNotes:\n";
      for (const auto& n : notes) os << n << '\n';
    }
    return os.str();
  }

  std::size_t serialized_length() const { return render().size(); }
};

/// Source of causal judgements (an LLM in production, scripted in tests).
class Advisor {
 public:
  virtual ~Advisor() = default;
  /// Names of variables caused by `node`. `hint` carries optional data statistics.
  virtual std::vector<std::string> expand(const std::string& node, const DiscoveryHistory& history,
                                          const std::string& hint = {}) = 0;
  virtual std::vector<std::string> select_exogenous(const std::vector<VariableSpec>& catalog) = 0;
  /// Summarised history. Implementations may only rewrite prose.
  virtual DiscoveryHistory compact(const DiscoveryHistory& history) = 0;
};

/// Drops names outside the catalog (with a warning) and duplicates;
/// returns the rest in catalog order.
inline std::vector<std::string> filter_to_catalog(const std::vector<std::string>& names,
                                                  const std::vector<VariableSpec>& catalog) {
  std::set<std::string> wanted;
  for (const auto& n : names) {
    const bool known = std::any_of(catalog.begin(), catalog.end(), [&](const auto& v) { return v.name == n; });
    if (!known) {
      spdlog::warn("advisor proposed unknown variable '{}'; dropped", n);
      continue;
    }
    wanted.insert(n);
  }
  std::vector<std::string> out;
  for (const auto& v : catalog) {
    if (wanted.count(v.name)) out.push_back(v.name);
  }
  return out;
}

/// Keeps the history under its character budget. Edges are never rewritten.
inline DiscoveryHistory compact_history(const DiscoveryHistory& h, Advisor& advisor) {
  if (h.serialized_length() <= h.char_budget) return h;
  DiscoveryHistory out;
  try {
    out = advisor.compact(h);
  } catch (const std::exception& e) {
    spdlog::warn("history compaction failed ({}); truncating prose", e.what());
    out = h;
    out.notes.clear();
  }
  out.accepted_edges = h.accepted_edges;
  out.catalog = h.catalog;
  out.turn_count = h.turn_count;
  out.char_budget = h.char_budget;
  // Still over budget: drop oldest notes, then trim the instructions.
  while (out.serialized_length() > out.char_budget && !out.notes.empty()) out.notes.erase(out.notes.begin());
  if (out.serialized_length() > out.char_budget) {
    const std::size_t excess = out.serialized_length() - out.char_budget;
    const std::size_t keep = out.instructions.size() > excess ? out.instructions.size() - excess : 0;
    out.instructions.resize(keep);
  }
  return out;
}

struct DiscoveryOptions {
  int max_turns = 0;  // 0 means |V|
  std::size_t char_budget = 20000;
  std::string instructions =
      "Infer the causal structure of the system. Inputs are exogenous; the objective is a sink. "
      "Only name cataloged variables.";
  /// Optional observed data; when it has latent columns each expansion prompt
  /// carries Pearson correlations between the expanded node and other columns.
  const Table* data = nullptr;
};

enum class DiscoveryStatus { Complete, Truncated };

struct DiscoveryResult {
  CausalSkeleton skeleton;
  DiscoveryHistory history;
  DiscoveryStatus status = DiscoveryStatus::Complete;
  int expand_calls = 0;
  /// False when no input reaches the objective; the caller decides what to do.
  bool objective_reachable = true;
  bool incomplete() const { return status != DiscoveryStatus::Complete || !objective_reachable; }
};

inline std::string correlation_hint(const std::string& node, const std::vector<VariableSpec>& catalog,
                                    const Table& data) {
  if (data.find(node) < 0) return {};
  bool has_latent = false;
  for (const auto& v : catalog) {
    if (v.kind == VariableKind::Latent && data.find(v.name) >= 0) has_latent = true;
  }
  if (!has_latent) return {};
  std::ostringstream os;
  os << "Pearson correlations between <" << node << "> and other observed variables:\n";
  const auto& a = data.column(node);
  for (const auto& v : catalog) {
    if (v.name == node || data.find(v.name) < 0) continue;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", pearson(a, data.column(v.name)));
    os << "- " << v.name << ": " << buf << '\n';
  }
  return os.str();
}

/// Breadth-first skeleton discovery seeded with the input variables.
inline DiscoveryResult discover_skeleton(const std::vector<VariableSpec>& catalog, Advisor& advisor,
                                         const DiscoveryOptions& options = {}) {
  DiscoveryResult result;
  result.skeleton = CausalSkeleton(catalog);
  auto& skel = result.skeleton;
  auto& hist = result.history;
  hist.instructions = options.instructions;
  hist.catalog = catalog;
  hist.char_budget = options.char_budget;

  const int max_turns = options.max_turns > 0 ? options.max_turns : static_cast<int>(catalog.size());
  const std::string objective = skel.objective();

  std::deque<std::string> queue;
  std::set<std::string> enqueued;
  for (const auto& x : skel.inputs()) {
    queue.push_back(x);
    enqueued.insert(x);
  }

  while (!queue.empty()) {
    if (result.expand_calls >= max_turns) {
      result.status = DiscoveryStatus::Truncated;
      spdlog::warn("discovery truncated after {} expansions with {} nodes still queued", result.expand_calls,
                   queue.size());
      break;
    }
    const std::string u = queue.front();
    queue.pop_front();

    hist = compact_history(hist, advisor);
    const std::string hint = options.data ? correlation_hint(u, catalog, *options.data) : std::string{};
    auto proposed = filter_to_catalog(advisor.expand(u, hist, hint), catalog);
    ++result.expand_calls;
    ++hist.turn_count;

    std::ostringstream note;
    note << "Turn " << hist.turn_count << ": expanded <" << u << ">;";
    for (const auto& v : proposed) {
      const auto outcome = try_insert_edge(skel, u, v);
      if (outcome == InsertOutcome::Accepted) {
        hist.accepted_edges.emplace_back(u, v);
        note << " accepted " << u << "->" << v << ";";
        if (v != objective && !enqueued.count(v)) {
          queue.push_back(v);
          enqueued.insert(v);
        }
      } else {
        note << " rejected " << u << "->" << v << " (" << to_string(outcome) << ");";
      }
    }
    hist.notes.push_back(note.str());
  }

  result.objective_reachable = skel.objective_reachable();
  if (!result.objective_reachable) spdlog::warn("objective '{}' is unreachable from the inputs", objective);
  return result;
}

/// Test double answering from a ground-truth skeleton with per-candidate flips.
class ScriptedAdvisor final : public Advisor {
 public:
  ScriptedAdvisor(CausalSkeleton truth, double noise_rate, Rng rng)
      : truth_(std::move(truth)), noise_rate_(noise_rate), rng_(rng) {}

  std::vector<std::string> expand(const std::string& node, const DiscoveryHistory&, const std::string&) override {
    ++calls_;
    std::vector<std::string> out;
    for (const auto& v : truth_.variables()) {
      if (v.name == node) continue;
      bool include = truth_.has_edge(node, v.name);
      if (noise_rate_ > 0.0 && rng_.uniform() < noise_rate_) include = !include;
      if (include) out.push_back(v.name);
    }
    return out;
  }

  std::vector<std::string> select_exogenous(const std::vector<VariableSpec>& catalog) override {
    std::vector<std::string> out;
    for (const auto& v : catalog) {
      if (v.kind == VariableKind::Input) out.push_back(v.name);
    }
    return out;
  }

  DiscoveryHistory compact(const DiscoveryHistory& history) override {
    DiscoveryHistory h = history;
    if (h.notes.size() > 1) {
      const auto n = h.notes.size();
      h.notes.assign(1, "(" + std::to_string(n) + " earlier turn notes summarised)");
    }
    return h;
  }

  int calls() const { return calls_; }

 private:
  CausalSkeleton truth_;
  double noise_rate_;
  Rng rng_;
  int calls_ = 0;
};

// ---- JSON ----------------------------------------------------------------

inline nlohmann::json to_json(const VariableSpec& v) {
  return {{"name", v.name}, {"description", v.description}, {"kind", to_string(v.kind)}, {"dim", v.dim}};
}

inline VariableSpec variable_from_json(const nlohmann::json& j) {
  VariableSpec v;
  v.name = j.at("name").get<std::string>();
  v.description = j.value("description", std::string{});
  v.kind = parse_kind(j.at("kind").get<std::string>());
  v.dim = j.value("dim", 1);
  return v;
}

inline std::vector<VariableSpec> catalog_from_json(const nlohmann::json& j) {
  std::vector<VariableSpec> out;
  const auto& arr = j.is_array() ? j : j.at("variables");
  for (const auto& v : arr) out.push_back(variable_from_json(v));
  validate_catalog(out);
  return out;
}

inline nlohmann::json to_json(const CausalSkeleton& s) {
  nlohmann::json vars = nlohmann::json::array();
  for (const auto& v : s.variables()) vars.push_back(to_json(v));
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [u, v] : s.edges()) edges.push_back({u, v});
  return {{"variables", vars}, {"edges", edges}};
}

/// Loads a skeleton file; rejects files that break any skeleton invariant.
inline CausalSkeleton skeleton_from_json(const nlohmann::json& j) {
  CausalSkeleton s(catalog_from_json(j.at("variables")));
  for (const auto& e : j.at("edges")) {
    const auto u = e.at(0).get<std::string>();
    const auto v = e.at(1).get<std::string>();
    if (!s.contains(u) || !s.contains(v)) throw UnknownVariable("edge " + u + "->" + v + " names an unknown variable");
    if (!s.has_edge(u, v)) s.add_edge_unchecked(u, v);
  }
  if (!s.is_valid()) throw InvalidInput("skeleton violates sink/exogeneity/acyclicity");
  return s;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(path + ": " + e.what());
  }
}

}  // namespace simopt
