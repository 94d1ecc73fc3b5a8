#pragma once

#include <cstddef>
#include <set>
#include <string>
#include <vector>

#include "patchforge/minilang/ast.hpp"

namespace patchforge::dataflow {

/// Where a statement sits inside a function body: each step picks the then-
/// (or loop) body or the else body of the enclosing statement, then an index.
struct PathStep {
  bool in_else = false;
  std::size_t index = 0;

  bool operator==(const PathStep&) const = default;
  auto operator<=>(const PathStep&) const = default;
};
using StmtPath = std::vector<PathStep>;

inline std::string to_string(const StmtPath& path) {
  std::string out;
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (i) out += '.';
    if (i && path[i].in_else) out += "else:";
    out += std::to_string(path[i].index);
  }
  return out;
}

/// Resolves `path` against `fn`; nullptr when it does not name a statement.
inline const minilang::Stmt* resolve(const minilang::FnDecl& fn, const StmtPath& path) {
  const std::vector<minilang::Stmt>* body = &fn.body;
  const minilang::Stmt* cur = nullptr;
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (i > 0) body = path[i].in_else ? &cur->orelse : &cur->body;
    if (path[i].index >= body->size()) return nullptr;
    cur = &(*body)[path[i].index];
  }
  return cur;
}

/// Walks every statement with its path, pre-order.
template <typename Fn>
void walk(const std::vector<minilang::Stmt>& body, StmtPath& path, Fn&& fn, bool in_else = false) {
  for (std::size_t i = 0; i < body.size(); ++i) {
    path.push_back({in_else, i});
    fn(body[i], path);
    walk(body[i].body, path, fn, false);
    walk(body[i].orelse, path, fn, true);
    path.pop_back();
  }
}

template <typename Fn>
void walk(const minilang::FnDecl& fn, Fn&& f) {
  StmtPath path;
  walk(fn.body, path, f);
}

/// A variable definition: parameter, let, assignment or indexed store.
struct Def {
  std::string var;
  minilang::StmtKind stmt_kind = minilang::StmtKind::let;
  bool is_param = false;
  StmtPath path;
  const minilang::Expr* value = nullptr;  // right-hand side, null for params
};

/// A variable read in any expression of a statement.
struct Use {
  std::string var;
  minilang::StmtKind stmt_kind = minilang::StmtKind::expr;
  StmtPath path;
};

struct DefUse {
  std::vector<Def> defs;
  std::vector<Use> uses;
};

/// Flow-insensitive, intra-function def and use collection in statement order.
inline DefUse collect_def_use(const minilang::FnDecl& fn) {
  using minilang::StmtKind;
  DefUse du;
  for (const auto& p : fn.params) du.defs.push_back({p, StmtKind::let, true, {}, nullptr});
  walk(fn, [&](const minilang::Stmt& s, const StmtPath& path) {
    if (s.kind == StmtKind::let || s.kind == StmtKind::assign)
      du.defs.push_back({s.name, s.kind, false, path, &s.exprs[0]});
    if (s.kind == StmtKind::index_assign) {
      du.defs.push_back({s.name, s.kind, false, path, &s.exprs[1]});
      // Storing into an element reads the array as well.
      du.uses.push_back({s.name, s.kind, path});
    }
    for (const auto& e : s.exprs)
      minilang::for_each_expr(e, [&](const minilang::Expr& x) {
        if (x.kind == minilang::ExprKind::var) du.uses.push_back({x.text, s.kind, path});
      });
  });
  return du;
}

/// Whether `e` carries a value produced by a call to `source`. Calls to other
/// functions are opaque: their results are fresh values.
inline bool carries(const minilang::Expr& e, const std::string& source,
                    const std::set<std::string>& tainted) {
  using minilang::ExprKind;
  if (e.kind == ExprKind::call) return e.text == source;
  if (e.kind == ExprKind::var) return tainted.count(e.text) != 0;
  for (const auto& a : e.args)
    if (carries(a, source, tainted)) return true;
  return false;
}

/// Closure of variables reachable from `source` results through definitions.
inline std::set<std::string> tainted_vars(const DefUse& du, const std::string& source) {
  std::set<std::string> tainted;
  bool changed = true;
  while (changed) {
    changed = false;
    for (const Def& d : du.defs) {
      if (d.value == nullptr || tainted.count(d.var)) continue;
      if (carries(*d.value, source, tainted)) {
        tainted.insert(d.var);
        changed = true;
      }
    }
  }
  return tainted;
}

}  // namespace patchforge::dataflow
