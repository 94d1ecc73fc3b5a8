#pragma once

#include <string>
#include <string_view>

#include "patchforge/minilang/ast.hpp"

namespace patchforge::minilang {

namespace detail {

inline int binary_precedence(std::string_view op) {
  if (op == "||") return 1;
  if (op == "&&") return 2;
  if (op == "==" || op == "!=") return 3;
  if (op == "<" || op == "<=" || op == ">" || op == ">=") return 4;
  if (op == "+" || op == "-") return 5;
  return 6;  // * / %
}

inline constexpr int kUnaryPrecedence = 7;
inline constexpr int kAtomPrecedence = 8;

inline int precedence(const Expr& e) {
  switch (e.kind) {
    case ExprKind::binary:
      return binary_precedence(e.text);
    case ExprKind::unary:
      return kUnaryPrecedence;
    default:
      return kAtomPrecedence;
  }
}

inline void print_expr(const Expr& e, std::string& out);

inline void print_wrapped(const Expr& e, bool parens, std::string& out) {
  if (parens) out += '(';
  print_expr(e, out);
  if (parens) out += ')';
}

inline void print_expr(const Expr& e, std::string& out) {
  switch (e.kind) {
    case ExprKind::int_lit:
    case ExprKind::str_lit:
    case ExprKind::var:
      out += e.text;
      return;
    case ExprKind::call:
      out += e.text;
      out += '(';
      for (std::size_t i = 0; i < e.args.size(); ++i) {
        if (i) out += ", ";
        print_expr(e.args[i], out);
      }
      out += ')';
      return;
    case ExprKind::index:
      print_wrapped(e.args[0], precedence(e.args[0]) < kAtomPrecedence, out);
      out += '[';
      print_expr(e.args[1], out);
      out += ']';
      return;
    case ExprKind::unary:
      out += e.text;
      print_wrapped(e.args[0], precedence(e.args[0]) < kUnaryPrecedence, out);
      return;
    case ExprKind::binary: {
      // Left-associative: the right operand needs parentheses at equal precedence.
      const int p = binary_precedence(e.text);
      print_wrapped(e.args[0], precedence(e.args[0]) < p, out);
      out += ' ';
      out += e.text;
      out += ' ';
      print_wrapped(e.args[1], precedence(e.args[1]) <= p, out);
      return;
    }
  }
}

inline void print_block(const std::vector<Stmt>& body, int depth, std::string& out);

inline void print_stmt(const Stmt& s, int depth, std::string& out) {
  out.append(static_cast<std::size_t>(depth) * 2, ' ');
  switch (s.kind) {
    case StmtKind::let:
      out += "let " + s.name + " = ";
      print_expr(s.exprs[0], out);
      out += ";\n";
      break;
    case StmtKind::assign:
      out += s.name + " = ";
      print_expr(s.exprs[0], out);
      out += ";\n";
      break;
    case StmtKind::index_assign:
      out += s.name + "[";
      print_expr(s.exprs[0], out);
      out += "] = ";
      print_expr(s.exprs[1], out);
      out += ";\n";
      break;
    case StmtKind::if_else:
      out += "if (";
      print_expr(s.exprs[0], out);
      out += ") ";
      print_block(s.body, depth, out);
      if (s.has_else) {
        out += " else ";
        print_block(s.orelse, depth, out);
      }
      out += '\n';
      break;
    case StmtKind::while_loop:
      out += "while (";
      print_expr(s.exprs[0], out);
      out += ") ";
      print_block(s.body, depth, out);
      out += '\n';
      break;
    case StmtKind::ret:
      out += "return";
      if (!s.exprs.empty()) {
        out += ' ';
        print_expr(s.exprs[0], out);
      }
      out += ";\n";
      break;
    case StmtKind::expr:
      print_expr(s.exprs[0], out);
      out += ";\n";
      break;
  }
}

inline void print_block(const std::vector<Stmt>& body, int depth, std::string& out) {
  out += "{\n";
  for (const Stmt& s : body) print_stmt(s, depth + 1, out);
  out.append(static_cast<std::size_t>(depth) * 2, ' ');
  out += '}';
}

}  // namespace detail

inline std::string print_expr(const Expr& e) {
  std::string out;
  detail::print_expr(e, out);
  return out;
}

/// Deterministic canonical text: two-space indentation, one statement per
/// line, minimal parentheses. Parsing the result yields an equal tree.
inline std::string print_canonical(const FnDecl& fn) {
  std::string out = "fn " + fn.name + "(";
  for (std::size_t i = 0; i < fn.params.size(); ++i) {
    if (i) out += ", ";
    out += fn.params[i];
  }
  out += ") ";
  detail::print_block(fn.body, 0, out);
  out += '\n';
  return out;
}

inline std::string print_canonical(const Program& program) {
  std::string out;
  for (std::size_t i = 0; i < program.functions.size(); ++i) {
    if (i) out += '\n';
    out += print_canonical(program.functions[i]);
  }
  return out;
}

}  // namespace patchforge::minilang
