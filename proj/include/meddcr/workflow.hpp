#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "meddcr/errors.hpp"

namespace meddcr {

using json = nlohmann::json;

/// Closed set of semantic port types; executability of a plan is checked
/// statically against these.
enum class PortType {
  note_text,
  entity_list,
  code_set,
  code_desc_map,
  code_score_map,
  evidence_map,
  ranked_list,
};

inline std::string to_string(PortType t) {
  switch (t) {
    case PortType::note_text: return "note_text";
    case PortType::entity_list: return "entity_list";
    case PortType::code_set: return "code_set";
    case PortType::code_desc_map: return "code_desc_map";
    case PortType::code_score_map: return "code_score_map";
    case PortType::evidence_map: return "evidence_map";
    case PortType::ranked_list: return "ranked_list";
  }
  return "?";
}

inline std::optional<PortType> parse_port_type(std::string_view s) {
  if (s == "note_text") return PortType::note_text;
  if (s == "entity_list") return PortType::entity_list;
  if (s == "code_set") return PortType::code_set;
  if (s == "code_desc_map") return PortType::code_desc_map;
  if (s == "code_score_map") return PortType::code_score_map;
  if (s == "evidence_map") return PortType::evidence_map;
  if (s == "ranked_list") return PortType::ranked_list;
  return std::nullopt;
}

enum class ParamType { number, integer, boolean, string, string_list };

struct ParamSpec {
  std::string name;
  ParamType type = ParamType::number;
  json default_value;
  std::optional<double> min;
  std::optional<double> max;
  std::vector<std::string> choices;  // for strings; empty = unrestricted
};

struct InputPort {
  std::string name;
  PortType type = PortType::code_set;
  bool from_source = false;  // always reads the run input note
};

enum class ComponentKind { tool, strategy, llm_module };

/// Which proposal channel a component's samples count toward, for
/// self-consistency voting.
enum class VoteChannel { none, term, note };

struct ComponentSignature {
  std::string name;
  ComponentKind kind = ComponentKind::strategy;
  std::vector<InputPort> inputs;
  PortType output = PortType::code_set;
  bool variadic_code_sets = false;  // merge-style fan-in
  std::vector<ParamSpec> params;
  VoteChannel channel = VoteChannel::none;
  // llm_module extras
  std::string role_tag = "pipeline_op";
  std::pair<double, double> temperature_range{0.0, 2.0};
  std::pair<int, int> samples_range{1, 16};
  std::string summary;

  const ParamSpec* param(std::string_view n) const {
    for (const auto& p : params) {
      if (p.name == n) return &p;
    }
    return nullptr;
  }
};

class ComponentLibrary {
 public:
  void add(ComponentSignature sig) {
    if (by_name_.count(sig.name)) throw Error("component '" + sig.name + "' already registered");
    by_name_.emplace(sig.name, std::move(sig));
  }

  const ComponentSignature* find(std::string_view name) const {
    auto it = by_name_.find(std::string(name));
    return it == by_name_.end() ? nullptr : &it->second;
  }

  std::vector<const ComponentSignature*> of_kind(ComponentKind k) const {
    std::vector<const ComponentSignature*> out;
    for (const auto& [n, s] : by_name_) {
      if (s.kind == k) out.push_back(&s);
    }
    return out;
  }

  const std::map<std::string, ComponentSignature>& all() const { return by_name_; }

  /// Human-readable signature list, as embedded in the Designer meta-prompt.
  std::string render_signatures() const {
    std::ostringstream out;
    for (const auto& [name, sig] : by_name_) {
      out << name << "(";
      bool first = true;
      for (const auto& in : sig.inputs) {
        if (!first) out << ", ";
        out << in.name << ": " << to_string(in.type);
        if (in.from_source) out << "=source_note";
        first = false;
      }
      if (sig.variadic_code_sets) out << (first ? "" : ", ") << "codes...: code_set";
      out << ") -> " << to_string(sig.output);
      if (!sig.params.empty()) {
        out << " [params:";
        for (const auto& p : sig.params) {
          out << " " << p.name << "=" << p.default_value.dump();
          if (p.min || p.max) {
            out << " in [" << (p.min ? std::to_string(*p.min) : "-inf") << ","
                << (p.max ? std::to_string(*p.max) : "inf") << "]";
          }
        }
        out << "]";
      }
      if (!sig.summary.empty()) out << " - " << sig.summary;
      out << "\n";
    }
    return out.str();
  }

 private:
  std::map<std::string, ComponentSignature> by_name_;
};

// ---------------------------------------------------------------------------
// Plans
// ---------------------------------------------------------------------------

struct PlanStep {
  std::string op;
  json params = json::object();
};

struct Plan {
  std::string name;
  std::string thought;
  std::vector<PlanStep> steps;
};

inline json plan_to_json(const Plan& plan) {
  json steps = json::array();
  for (const auto& s : plan.steps) {
    json step = s.params;
    step["op"] = s.op;
    steps.push_back(std::move(step));
  }
  return json{{"name", plan.name}, {"thought", plan.thought}, {"plan", std::move(steps)}};
}

inline Plan plan_from_json(const json& j) {
  if (!j.is_object() || !j.contains("name") || !j.contains("plan") || !j["plan"].is_array())
    throw Error("plan JSON must be an object with 'name' and a 'plan' array");
  Plan plan;
  plan.name = j["name"].is_string() ? j["name"].get<std::string>() : "";
  plan.thought = j.value("thought", "");
  for (const auto& step : j["plan"]) {
    if (!step.is_object() || !step.contains("op") || !step["op"].is_string())
      throw Error("each plan step must be an object with an 'op' string");
    PlanStep ps;
    ps.op = step["op"].get<std::string>();
    ps.params = step;
    ps.params.erase("op");
    plan.steps.push_back(std::move(ps));
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

enum class ViolationKind {
  unknown_operation,
  missing_param,
  unknown_param,
  param_type_mismatch,
  param_out_of_range,
  no_producer,
  missing_sink,
  empty_plan,
};

inline std::string to_string(ViolationKind k) {
  switch (k) {
    case ViolationKind::unknown_operation: return "UnknownOperation";
    case ViolationKind::missing_param: return "MissingParam";
    case ViolationKind::unknown_param: return "UnknownParam";
    case ViolationKind::param_type_mismatch: return "ParamTypeMismatch";
    case ViolationKind::param_out_of_range: return "ParamOutOfRange";
    case ViolationKind::no_producer: return "NoProducer";
    case ViolationKind::missing_sink: return "MissingSink";
    case ViolationKind::empty_plan: return "EmptyPlan";
  }
  return "?";
}

struct Violation {
  std::size_t step_index = 0;
  ViolationKind kind = ViolationKind::unknown_operation;
  std::string message;
};

struct ValidationReport {
  bool ok = true;
  std::vector<Violation> violations;

  void add(std::size_t step, ViolationKind kind, std::string msg) {
    ok = false;
    violations.push_back({step, kind, std::move(msg)});
  }

  std::string render() const {
    std::ostringstream out;
    for (const auto& v : violations) {
      out << "step " << v.step_index << " [" << to_string(v.kind) << "]: " << v.message << "\n";
    }
    return out.str();
  }
};

namespace detail {

inline bool param_type_ok(const ParamSpec& spec, const json& v) {
  switch (spec.type) {
    case ParamType::number: return v.is_number();
    case ParamType::integer: return v.is_number_integer() || v.is_number_unsigned();
    case ParamType::boolean: return v.is_boolean();
    case ParamType::string: return v.is_string();
    case ParamType::string_list: {
      if (!v.is_array()) return false;
      return std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_string(); });
    }
  }
  return false;
}

}  // namespace detail

/// Pure check of a plan against the library: unknown ops, bad params,
/// uninferable inputs, missing ranked-list sink. All findings are reported,
/// nothing throws.
inline ValidationReport validate_plan(const Plan& plan, const ComponentLibrary& lib) {
  ValidationReport report;
  if (plan.steps.empty()) {
    report.add(0, ViolationKind::empty_plan, "plan has no steps");
    return report;
  }

  std::vector<PortType> produced;  // per completed step, in order
  bool have_sink = false;

  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    const PlanStep& step = plan.steps[i];
    const ComponentSignature* sig = lib.find(step.op);
    if (!sig) {
      report.add(i, ViolationKind::unknown_operation, "unknown operation '" + step.op + "'");
      continue;
    }

    for (auto it = step.params.begin(); it != step.params.end(); ++it) {
      const ParamSpec* spec = sig->param(it.key());
      if (!spec) {
        report.add(i, ViolationKind::unknown_param, step.op + " has no parameter '" + it.key() + "'");
        continue;
      }
      if (!detail::param_type_ok(*spec, it.value())) {
        report.add(i, ViolationKind::param_type_mismatch,
                   "parameter '" + it.key() + "' of " + step.op + " has the wrong type");
        continue;
      }
      if (it.value().is_number()) {
        double v = it.value().get<double>();
        if ((spec->min && v < *spec->min) || (spec->max && v > *spec->max)) {
          report.add(i, ViolationKind::param_out_of_range,
                     "parameter '" + it.key() + "' of " + step.op + " = " + it.value().dump() +
                         " is outside its allowed range");
        }
      }
      if (spec->type == ParamType::string && !spec->choices.empty()) {
        auto v = it.value().get<std::string>();
        if (std::find(spec->choices.begin(), spec->choices.end(), v) == spec->choices.end()) {
          report.add(i, ViolationKind::param_out_of_range,
                     "parameter '" + it.key() + "' of " + step.op + " = '" + v + "' is not a valid choice");
        }
      }
    }
    for (const auto& spec : sig->params) {
      if (spec.default_value.is_null() && !step.params.contains(spec.name)) {
        report.add(i, ViolationKind::missing_param,
                   step.op + " requires parameter '" + spec.name + "'");
      }
    }

    // Input wiring simulation: every non-source port needs a producer.
    if (sig->variadic_code_sets) {
      bool any = std::any_of(produced.begin(), produced.end(),
                             [](PortType t) { return t == PortType::code_set; });
      if (!any) {
        report.add(i, ViolationKind::no_producer,
                   step.op + " needs at least one upstream code_set producer");
      }
    }
    for (const auto& port : sig->inputs) {
      if (port.from_source) continue;
      bool found = std::any_of(produced.begin(), produced.end(),
                               [&](PortType t) { return t == port.type; });
      if (!found && port.type == PortType::note_text) found = true;  // falls back to the source note
      if (!found) {
        report.add(i, ViolationKind::no_producer,
                   step.op + " input '" + port.name + "' has no upstream producer of " +
                       to_string(port.type));
      }
    }
    produced.push_back(sig->output);
    if (sig->output == PortType::ranked_list) have_sink = true;
  }

  if (!have_sink) {
    report.add(plan.steps.size() - 1, ViolationKind::missing_sink,
               "plan produces no ranked_list output");
  }
  return report;
}

// ---------------------------------------------------------------------------
// Workflow graph
// ---------------------------------------------------------------------------

struct WorkflowNode {
  int id = 0;
  std::string op;
  json params = json::object();               // effective params (defaults applied)
  std::vector<std::string> source_ports;      // ports bound to the run input note
};

struct WorkflowEdge {
  int from = 0;
  int to = 0;
  std::string port;
};

struct WorkflowGraph {
  std::vector<WorkflowNode> nodes;
  std::vector<WorkflowEdge> edges;
  int sink = -1;

  std::vector<int> incoming(int node) const {
    std::vector<int> out;
    for (const auto& e : edges) {
      if (e.to == node) out.push_back(e.from);
    }
    return out;
  }
};

/// Lowers a linear plan to a DAG. Each input port is wired to the most recent
/// producer of its type; merge steps fan in from every code_set producer since
/// the previous merge (inclusive). Ports marked from_source, and note_text
/// ports with no producer, read the run input note.
inline WorkflowGraph compile_plan(const Plan& plan, const ComponentLibrary& lib) {
  WorkflowGraph g;
  std::vector<PortType> produced;
  int last_merge = -1;

  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    const PlanStep& step = plan.steps[i];
    const ComponentSignature* sig = lib.find(step.op);
    if (!sig) throw CompileError(i, "op:" + step.op);

    WorkflowNode node;
    node.id = static_cast<int>(i);
    node.op = step.op;
    for (const auto& spec : sig->params) {
      if (!spec.default_value.is_null()) node.params[spec.name] = spec.default_value;
    }
    for (auto it = step.params.begin(); it != step.params.end(); ++it) node.params[it.key()] = it.value();

    if (sig->variadic_code_sets) {
      int fan = 0;
      for (int j = last_merge < 0 ? 0 : last_merge; j < static_cast<int>(i); ++j) {
        if (produced[static_cast<std::size_t>(j)] == PortType::code_set) {
          g.edges.push_back({j, node.id, "codes[" + std::to_string(fan++) + "]"});
        }
      }
      if (fan == 0) throw CompileError(i, to_string(PortType::code_set));
      last_merge = static_cast<int>(i);
    }
    for (const auto& port : sig->inputs) {
      if (port.from_source) {
        node.source_ports.push_back(port.name);
        continue;
      }
      int from = -1;
      for (int j = static_cast<int>(i) - 1; j >= 0; --j) {
        if (produced[static_cast<std::size_t>(j)] == port.type) {
          from = j;
          break;
        }
      }
      if (from < 0) {
        if (port.type == PortType::note_text) {
          node.source_ports.push_back(port.name);
          continue;
        }
        throw CompileError(i, to_string(port.type));
      }
      g.edges.push_back({from, node.id, port.name});
    }

    produced.push_back(sig->output);
    if (sig->output == PortType::ranked_list) g.sink = node.id;
    g.nodes.push_back(std::move(node));
  }

  if (g.sink < 0) throw CompileError(plan.steps.empty() ? 0 : plan.steps.size() - 1,
                                     to_string(PortType::ranked_list));
  return g;
}

/// Deterministic topological order (Kahn, smallest id first).
inline std::vector<int> topo_order(const WorkflowGraph& g) {
  std::map<int, int> indegree;
  for (const auto& n : g.nodes) indegree[n.id] = 0;
  for (const auto& e : g.edges) ++indegree[e.to];

  std::set<int> ready;
  for (const auto& [id, d] : indegree) {
    if (d == 0) ready.insert(id);
  }
  std::vector<int> order;
  while (!ready.empty()) {
    int id = *ready.begin();
    ready.erase(ready.begin());
    order.push_back(id);
    for (const auto& e : g.edges) {
      if (e.from == id && --indegree[e.to] == 0) ready.insert(e.to);
    }
  }
  if (order.size() != g.nodes.size()) throw CycleError("workflow graph");
  return order;
}

inline json graph_to_manifest(const WorkflowGraph& g) {
  json nodes = json::array();
  for (const auto& n : g.nodes) {
    nodes.push_back(json{{"id", n.id},
                         {"op", n.op},
                         {"params", n.params},
                         {"source_ports", n.source_ports}});
  }
  json edges = json::array();
  for (const auto& e : g.edges) {
    edges.push_back(json{{"from", e.from}, {"to", e.to}, {"port", e.port}});
  }
  return json{{"nodes", std::move(nodes)}, {"edges", std::move(edges)}, {"sink", g.sink}};
}

inline WorkflowGraph manifest_to_graph(const json& j) {
  WorkflowGraph g;
  if (!j.is_object() || !j.contains("nodes") || !j.contains("edges") || !j.contains("sink"))
    throw Error("workflow manifest must contain nodes, edges and sink");
  for (const auto& n : j["nodes"]) {
    WorkflowNode node;
    node.id = n.at("id").get<int>();
    node.op = n.at("op").get<std::string>();
    node.params = n.value("params", json::object());
    node.source_ports = n.value("source_ports", std::vector<std::string>{});
    g.nodes.push_back(std::move(node));
  }
  for (const auto& e : j["edges"]) {
    g.edges.push_back({e.at("from").get<int>(), e.at("to").get<int>(), e.at("port").get<std::string>()});
  }
  g.sink = j["sink"].get<int>();
  return g;
}

}  // namespace meddcr
