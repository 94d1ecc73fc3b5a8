#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace patchforge::minilang {

enum class ExprKind { int_lit, str_lit, var, call, index, unary, binary };

/// Uniform expression tree. `text` holds the literal lexeme, the variable or
/// callee name, or the operator. `args` holds call arguments, [base, index]
/// for Index, [operand] for Unary and [lhs, rhs] for Binary.
struct Expr {
  ExprKind kind = ExprKind::int_lit;
  std::string text;
  std::vector<Expr> args;

  bool operator==(const Expr&) const = default;
};

enum class StmtKind { let, assign, index_assign, if_else, while_loop, ret, expr };

/// `exprs` layout per kind:
///   let / assign:   [value]
///   index_assign:   [index, value]   (target array is `name`)
///   if_else / while_loop: [condition]
///   ret:            [] or [value]
///   expr:           [expression]
struct Stmt {
  StmtKind kind = StmtKind::expr;
  std::string name;
  std::vector<Expr> exprs;
  std::vector<Stmt> body;    // then-branch or loop body
  std::vector<Stmt> orelse;  // else-branch
  bool has_else = false;

  bool operator==(const Stmt&) const = default;
};

struct FnDecl {
  std::string name;
  std::vector<std::string> params;
  std::vector<Stmt> body;

  bool operator==(const FnDecl&) const = default;
};

struct Program {
  std::vector<FnDecl> functions;

  bool operator==(const Program&) const = default;
};

// Small builders, mostly for tests and the corpus generator.
namespace ast {

inline Expr int_lit(long long v) { return {ExprKind::int_lit, std::to_string(v), {}}; }
inline Expr str_lit(const std::string& raw) { return {ExprKind::str_lit, raw, {}}; }
inline Expr var(const std::string& name) { return {ExprKind::var, name, {}}; }
inline Expr call(const std::string& fn, std::vector<Expr> args = {}) {
  return {ExprKind::call, fn, std::move(args)};
}
inline Expr index(Expr base, Expr idx) {
  return {ExprKind::index, "", {std::move(base), std::move(idx)}};
}
inline Expr unary(const std::string& op, Expr e) { return {ExprKind::unary, op, {std::move(e)}}; }
inline Expr binary(const std::string& op, Expr l, Expr r) {
  return {ExprKind::binary, op, {std::move(l), std::move(r)}};
}

inline Stmt let(const std::string& name, Expr value) {
  Stmt s;
  s.kind = StmtKind::let;
  s.name = name;
  s.exprs.push_back(std::move(value));
  return s;
}
inline Stmt assign(const std::string& name, Expr value) {
  Stmt s = let(name, std::move(value));
  s.kind = StmtKind::assign;
  return s;
}
inline Stmt index_assign(const std::string& name, Expr idx, Expr value) {
  Stmt s;
  s.kind = StmtKind::index_assign;
  s.name = name;
  s.exprs.push_back(std::move(idx));
  s.exprs.push_back(std::move(value));
  return s;
}
inline Stmt if_else(Expr cond, std::vector<Stmt> then_body) {
  Stmt s;
  s.kind = StmtKind::if_else;
  s.exprs.push_back(std::move(cond));
  s.body = std::move(then_body);
  return s;
}
inline Stmt if_else(Expr cond, std::vector<Stmt> then_body, std::vector<Stmt> else_body) {
  Stmt s = if_else(std::move(cond), std::move(then_body));
  s.orelse = std::move(else_body);
  s.has_else = true;
  return s;
}
inline Stmt while_loop(Expr cond, std::vector<Stmt> body) {
  Stmt s;
  s.kind = StmtKind::while_loop;
  s.exprs.push_back(std::move(cond));
  s.body = std::move(body);
  return s;
}
inline Stmt ret() {
  Stmt s;
  s.kind = StmtKind::ret;
  return s;
}
inline Stmt ret(Expr value) {
  Stmt s = ret();
  s.exprs.push_back(std::move(value));
  return s;
}
inline Stmt expr(Expr e) {
  Stmt s;
  s.kind = StmtKind::expr;
  s.exprs.push_back(std::move(e));
  return s;
}

}  // namespace ast

/// Calls `fn(stmt)` on every statement of `body` in pre-order, nested bodies included.
template <typename Fn>
void for_each_stmt(const std::vector<Stmt>& body, Fn&& fn) {
  for (const Stmt& s : body) {
    fn(s);
    for_each_stmt(s.body, fn);
    for_each_stmt(s.orelse, fn);
  }
}

/// Calls `fn(expr)` on `e` and all of its sub-expressions in pre-order.
template <typename Fn>
void for_each_expr(const Expr& e, Fn&& fn) {
  fn(e);
  for (const Expr& a : e.args) for_each_expr(a, fn);
}

inline bool contains_call(const Expr& e) {
  bool found = false;
  for_each_expr(e, [&](const Expr& x) { found = found || x.kind == ExprKind::call; });
  return found;
}

inline std::size_t count_statements(const std::vector<Stmt>& body) {
  std::size_t n = 0;
  for_each_stmt(body, [&](const Stmt&) { ++n; });
  return n;
}

}  // namespace patchforge::minilang
