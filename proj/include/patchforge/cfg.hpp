#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "patchforge/minilang/ast.hpp"

namespace patchforge::cfg {

enum class NodeType : std::uint8_t { entry, exit, assign, call, branch, loophead, ret };
enum class EdgeKind : std::uint8_t { seq, on_true, on_false, back };

inline std::string_view to_string(NodeType t) {
  switch (t) {
    case NodeType::entry: return "ENTRY";
    case NodeType::exit: return "EXIT";
    case NodeType::assign: return "ASSIGN";
    case NodeType::call: return "CALL";
    case NodeType::branch: return "BRANCH";
    case NodeType::loophead: return "LOOPHEAD";
    case NodeType::ret: return "RETURN";
  }
  return "?";
}

inline std::string_view to_string(EdgeKind k) {
  switch (k) {
    case EdgeKind::seq: return "seq";
    case EdgeKind::on_true: return "true";
    case EdgeKind::on_false: return "false";
    case EdgeKind::back: return "back";
  }
  return "?";
}

struct Node {
  std::size_t id = 0;
  NodeType type = NodeType::assign;
  std::size_t statement_count = 0;

  bool operator==(const Node&) const = default;
};

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  EdgeKind kind = EdgeKind::seq;

  bool operator==(const Edge&) const = default;
};

/// Basic-block control-flow graph of one function. Node ids index `nodes`.
struct Cfg {
  std::vector<Node> nodes;
  std::vector<Edge> edges;
  std::size_t entry = 0;
  std::size_t exit = 0;
  /// Blocks that followed a return and were dropped as unreachable.
  std::size_t pruned_nodes = 0;

  std::vector<std::size_t> successors(std::size_t id) const {
    std::vector<std::size_t> out;
    for (const Edge& e : edges)
      if (e.src == id) out.push_back(e.dst);
    return out;
  }
};

struct CfgMetrics {
  std::size_t node_count = 0;
  std::size_t edge_count = 0;
  long long cyclomatic = 0;
  std::size_t max_path_depth = 0;
};

namespace detail {

class Builder {
 public:
  Cfg build(const minilang::FnDecl& fn) {
    const std::size_t entry = add(NodeType::entry);
    exit_ = add(NodeType::exit);
    Pending tail = sequence(fn.body, {{entry, EdgeKind::seq}});
    connect(tail, exit_);
    g_.entry = entry;
    g_.exit = exit_;
    prune();
    return std::move(g_);
  }

 private:
  using Pending = std::vector<std::pair<std::size_t, EdgeKind>>;

  std::size_t add(NodeType type) {
    const std::size_t id = g_.nodes.size();
    g_.nodes.push_back({id, type, 0});
    return id;
  }

  void connect(const Pending& from, std::size_t to) {
    for (const auto& [src, kind] : from) g_.edges.push_back({src, to, kind});
  }

  static bool is_simple(const minilang::Stmt& s) {
    using minilang::StmtKind;
    return s.kind != StmtKind::if_else && s.kind != StmtKind::while_loop;
  }

  // Dominant type of a straight-line block: any call, else any return, else assign.
  void absorb(std::size_t block, const minilang::Stmt& s) {
    Node& n = g_.nodes[block];
    ++n.statement_count;
    bool has_call = false;
    for (const auto& e : s.exprs) has_call = has_call || minilang::contains_call(e);
    if (has_call) {
      n.type = NodeType::call;
    } else if (s.kind == minilang::StmtKind::ret && n.type != NodeType::call) {
      n.type = NodeType::ret;
    }
  }

  Pending sequence(const std::vector<minilang::Stmt>& body, Pending pending) {
    using minilang::StmtKind;
    std::size_t open = SIZE_MAX;
    for (const auto& s : body) {
      if (is_simple(s)) {
        if (open == SIZE_MAX) {
          open = add(NodeType::assign);
          connect(pending, open);
          pending.clear();
        }
        absorb(open, s);
        if (s.kind == StmtKind::ret) {
          g_.edges.push_back({open, exit_, EdgeKind::seq});
          open = SIZE_MAX;
          // Anything after this point in the block has no predecessor.
        }
        continue;
      }
      if (open != SIZE_MAX) {
        pending = {{open, EdgeKind::seq}};
        open = SIZE_MAX;
      }
      if (s.kind == StmtKind::if_else) {
        const std::size_t branch = add(NodeType::branch);
        connect(pending, branch);
        Pending out = sequence(s.body, {{branch, EdgeKind::on_true}});
        Pending other = s.has_else ? sequence(s.orelse, {{branch, EdgeKind::on_false}})
                                   : Pending{{branch, EdgeKind::on_false}};
        out.insert(out.end(), other.begin(), other.end());
        pending = std::move(out);
      } else {
        const std::size_t head = add(NodeType::loophead);
        connect(pending, head);
        Pending body_tail;
        if (s.body.empty()) {
          const std::size_t empty = add(NodeType::assign);
          g_.edges.push_back({head, empty, EdgeKind::on_true});
          body_tail = {{empty, EdgeKind::seq}};
        } else {
          body_tail = sequence(s.body, {{head, EdgeKind::on_true}});
        }
        for (auto [src, kind] : body_tail)
          g_.edges.push_back({src, head, kind == EdgeKind::seq ? EdgeKind::back : kind});
        pending = {{head, EdgeKind::on_false}};
      }
    }
    if (open != SIZE_MAX) pending = {{open, EdgeKind::seq}};
    return pending;
  }

  void prune() {
    std::vector<char> seen(g_.nodes.size(), 0);
    std::vector<std::size_t> stack{g_.entry};
    seen[g_.entry] = 1;
    while (!stack.empty()) {
      std::size_t u = stack.back();
      stack.pop_back();
      for (const Edge& e : g_.edges)
        if (e.src == u && !seen[e.dst]) {
          seen[e.dst] = 1;
          stack.push_back(e.dst);
        }
    }
    std::vector<std::size_t> remap(g_.nodes.size(), SIZE_MAX);
    std::vector<Node> kept;
    for (const Node& n : g_.nodes) {
      if (!seen[n.id]) continue;
      remap[n.id] = kept.size();
      kept.push_back({kept.size(), n.type, n.statement_count});
    }
    std::vector<Edge> kept_edges;
    for (const Edge& e : g_.edges)
      if (seen[e.src] && seen[e.dst]) kept_edges.push_back({remap[e.src], remap[e.dst], e.kind});
    g_.pruned_nodes = g_.nodes.size() - kept.size();
    g_.nodes = std::move(kept);
    g_.edges = std::move(kept_edges);
    g_.entry = remap[g_.entry];
    g_.exit = remap[g_.exit];
  }

  Cfg g_;
  std::size_t exit_ = 0;
};

}  // namespace detail

/// Builds the basic-block CFG of `fn`. Straight-line runs coalesce into one
/// node; if-conditions become BRANCH and while-conditions LOOPHEAD nodes with a
/// back-edge from the body tail. Unreachable blocks are pruned (`pruned_nodes`).
inline Cfg build_cfg(const minilang::FnDecl& fn) { return detail::Builder().build(fn); }

/// Checks the structural invariants; returns an empty string when they hold.
inline std::string validate(const Cfg& g) {
  std::size_t entries = 0, exits = 0;
  for (const Node& n : g.nodes) {
    entries += n.type == NodeType::entry;
    exits += n.type == NodeType::exit;
  }
  if (entries != 1 || exits != 1) return "expected exactly one ENTRY and one EXIT";
  std::vector<char> seen(g.nodes.size(), 0);
  std::vector<std::size_t> stack{g.entry};
  seen[g.entry] = 1;
  while (!stack.empty()) {
    std::size_t u = stack.back();
    stack.pop_back();
    for (std::size_t v : g.successors(u))
      if (!seen[v]) {
        seen[v] = 1;
        stack.push_back(v);
      }
  }
  for (const Node& n : g.nodes) {
    if (!seen[n.id]) return "node " + std::to_string(n.id) + " unreachable";
    std::size_t out = 0, t = 0, f = 0;
    for (const Edge& e : g.edges) {
      if (e.src != n.id) continue;
      ++out;
      t += e.kind == EdgeKind::on_true;
      f += e.kind == EdgeKind::on_false;
    }
    if (n.type != NodeType::exit && out == 0)
      return "node " + std::to_string(n.id) + " has no successor";
    if ((n.type == NodeType::branch || n.type == NodeType::loophead) && (t != 1 || f != 1))
      return "decision node " + std::to_string(n.id) + " needs one true and one false edge";
  }
  return {};
}

namespace detail {

inline void longest_from(const Cfg& g, const std::vector<std::vector<std::size_t>>& adj,
                         std::size_t u, std::vector<char>& on_path, std::size_t depth,
                         std::size_t& best) {
  best = std::max(best, depth);
  for (std::size_t v : adj[u]) {
    if (on_path[v]) continue;
    on_path[v] = 1;
    longest_from(g, adj, v, on_path, depth + 1, best);
    on_path[v] = 0;
  }
}

inline std::vector<std::vector<std::size_t>> adjacency(const Cfg& g) {
  std::vector<std::vector<std::size_t>> adj(g.nodes.size());
  for (const Edge& e : g.edges) {
    auto& row = adj[e.src];
    if (std::find(row.begin(), row.end(), e.dst) == row.end()) row.push_back(e.dst);
  }
  return adj;
}

}  // namespace detail

/// Node/edge counts, cyclomatic complexity E - N + 2, and the longest simple
/// ENTRY-rooted path counted in nodes.
inline CfgMetrics cfg_metrics(const Cfg& g) {
  CfgMetrics m;
  m.node_count = g.nodes.size();
  m.edge_count = g.edges.size();
  m.cyclomatic = static_cast<long long>(m.edge_count) - static_cast<long long>(m.node_count) + 2;
  if (g.nodes.empty()) return m;
  auto adj = detail::adjacency(g);
  std::vector<char> on_path(g.nodes.size(), 0);
  on_path[g.entry] = 1;
  detail::longest_from(g, adj, g.entry, on_path, 1, m.max_path_depth);
  return m;
}

using TypePath = std::vector<NodeType>;

/// Node-type sequences of every simple path that starts at ENTRY and has at
/// most `max_len` nodes (prefixes included).
inline std::set<TypePath> enumerate_type_paths(const Cfg& g, std::size_t max_len) {
  std::set<TypePath> out;
  if (g.nodes.empty() || max_len == 0) return out;
  auto adj = detail::adjacency(g);
  std::vector<char> on_path(g.nodes.size(), 0);
  TypePath types;
  auto dfs = [&](auto&& self, std::size_t u) -> void {
    types.push_back(g.nodes[u].type);
    on_path[u] = 1;
    out.insert(types);
    if (types.size() < max_len) {
      for (std::size_t v : adj[u])
        if (!on_path[v]) self(self, v);
    }
    on_path[u] = 0;
    types.pop_back();
  };
  dfs(dfs, g.entry);
  return out;
}

/// Graphviz rendering for debugging.
inline std::string to_dot(const Cfg& g, std::string_view name = "cfg") {
  std::ostringstream os;
  os << "digraph \"" << name << "\" {\n";
  for (const Node& n : g.nodes)
    os << "  n" << n.id << " [label=\"" << to_string(n.type) << " (" << n.statement_count
       << ")\"];\n";
  for (const Edge& e : g.edges)
    os << "  n" << e.src << " -> n" << e.dst << " [label=\"" << to_string(e.kind) << "\"];\n";
  os << "}\n";
  return os.str();
}

}  // namespace patchforge::cfg
