#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "patchforge/minilang/ast.hpp"
#include "patchforge/minilang/lexer.hpp"

namespace patchforge::minilang {

/// Parse failure. `consumed()` is the number of tokens the parser accepted
/// before the failing token; graded syntax rewards are built on it.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t offset, std::string expected, std::size_t consumed)
      : std::runtime_error("parse error at offset " + std::to_string(offset) + ": expected " +
                           expected),
        offset_(offset),
        expected_(std::move(expected)),
        consumed_(consumed) {}

  std::size_t offset() const { return offset_; }
  const std::string& expected() const { return expected_; }
  std::size_t consumed() const { return consumed_; }

 private:
  std::size_t offset_;
  std::string expected_;
  std::size_t consumed_;
};

namespace detail {

// Recursive descent with one token of lookahead. Precedence, loosest first:
// || , && , == != , < <= > >= , + - , * / % , unary - ! , postfix [] .
class Parser {
 public:
  explicit Parser(const std::vector<Token>& tokens) : toks_(tokens) {}

  Program program() {
    Program p;
    while (!at_eof()) p.functions.push_back(function());
    return p;
  }

 private:
  const Token& peek() const { return toks_[pos_]; }
  bool at_eof() const { return pos_ >= toks_.size() || toks_[pos_].kind == TokenKind::eof; }

  bool check(TokenKind kind, std::string_view text) const {
    return !at_eof() && peek().kind == kind && peek().text == text;
  }
  bool check_punct(std::string_view t) const { return check(TokenKind::punct, t); }
  bool check_op(std::string_view t) const { return check(TokenKind::op, t); }
  bool check_kw(std::string_view t) const { return check(TokenKind::keyword, t); }

  [[noreturn]] void fail(const std::string& expected) const {
    std::size_t offset = pos_ < toks_.size() ? toks_[pos_].offset : 0;
    throw ParseError(offset, expected, pos_);
  }

  const Token& advance() { return toks_[pos_++]; }

  void expect(TokenKind kind, std::string_view text) {
    if (!check(kind, text)) fail("'" + std::string(text) + "'");
    ++pos_;
  }
  std::string expect_ident() {
    if (at_eof() || peek().kind != TokenKind::identifier) fail("identifier");
    return advance().text;
  }

  FnDecl function() {
    FnDecl fn;
    expect(TokenKind::keyword, "fn");
    fn.name = expect_ident();
    expect(TokenKind::punct, "(");
    if (!check_punct(")")) {
      fn.params.push_back(expect_ident());
      while (check_punct(",")) {
        ++pos_;
        fn.params.push_back(expect_ident());
      }
    }
    expect(TokenKind::punct, ")");
    fn.body = block();
    return fn;
  }

  std::vector<Stmt> block() {
    expect(TokenKind::punct, "{");
    std::vector<Stmt> body;
    while (!check_punct("}")) {
      if (at_eof()) fail("'}'");
      body.push_back(statement());
    }
    ++pos_;
    return body;
  }

  Stmt statement() {
    if (check_kw("let")) {
      ++pos_;
      std::string name = expect_ident();
      expect(TokenKind::op, "=");
      Expr value = expression();
      expect(TokenKind::punct, ";");
      return ast::let(name, std::move(value));
    }
    if (check_kw("if")) return if_statement();
    if (check_kw("while")) {
      ++pos_;
      expect(TokenKind::punct, "(");
      Expr cond = expression();
      expect(TokenKind::punct, ")");
      return ast::while_loop(std::move(cond), block());
    }
    if (check_kw("return")) {
      ++pos_;
      if (check_punct(";")) {
        ++pos_;
        return ast::ret();
      }
      Expr value = expression();
      expect(TokenKind::punct, ";");
      return ast::ret(std::move(value));
    }
    Expr lhs = expression();
    if (check_op("=")) {
      if (lhs.kind == ExprKind::var) {
        ++pos_;
        Expr value = expression();
        expect(TokenKind::punct, ";");
        return ast::assign(lhs.text, std::move(value));
      }
      if (lhs.kind == ExprKind::index && lhs.args[0].kind == ExprKind::var) {
        ++pos_;
        Expr value = expression();
        expect(TokenKind::punct, ";");
        return ast::index_assign(lhs.args[0].text, std::move(lhs.args[1]), std::move(value));
      }
      fail("assignable target before '='");
    }
    expect(TokenKind::punct, ";");
    return ast::expr(std::move(lhs));
  }

  Stmt if_statement() {
    expect(TokenKind::keyword, "if");
    expect(TokenKind::punct, "(");
    Expr cond = expression();
    expect(TokenKind::punct, ")");
    std::vector<Stmt> then_body = block();
    if (!check_kw("else")) return ast::if_else(std::move(cond), std::move(then_body));
    ++pos_;
    std::vector<Stmt> else_body;
    if (check_kw("if")) {
      else_body.push_back(if_statement());
    } else {
      else_body = block();
    }
    return ast::if_else(std::move(cond), std::move(then_body), std::move(else_body));
  }

  Expr expression() { return logical_or(); }

  template <typename Next>
  Expr binary_level(std::initializer_list<std::string_view> ops, Next next) {
    Expr lhs = (this->*next)();
    for (;;) {
      bool matched = false;
      for (std::string_view op : ops) {
        if (check_op(op)) {
          ++pos_;
          Expr rhs = (this->*next)();
          lhs = ast::binary(std::string(op), std::move(lhs), std::move(rhs));
          matched = true;
          break;
        }
      }
      if (!matched) return lhs;
    }
  }

  Expr logical_or() { return binary_level({"||"}, &Parser::logical_and); }
  Expr logical_and() { return binary_level({"&&"}, &Parser::equality); }
  Expr equality() { return binary_level({"==", "!="}, &Parser::comparison); }
  Expr comparison() { return binary_level({"<", "<=", ">", ">="}, &Parser::additive); }
  Expr additive() { return binary_level({"+", "-"}, &Parser::multiplicative); }
  Expr multiplicative() { return binary_level({"*", "/", "%"}, &Parser::unary); }

  Expr unary() {
    if (check_op("-") || check_op("!")) {
      std::string op = advance().text;
      return ast::unary(op, unary());
    }
    return postfix();
  }

  Expr postfix() {
    Expr e = primary();
    while (check_punct("[")) {
      ++pos_;
      Expr idx = expression();
      expect(TokenKind::punct, "]");
      e = ast::index(std::move(e), std::move(idx));
    }
    return e;
  }

  Expr primary() {
    if (at_eof()) fail("expression");
    const Token& t = peek();
    switch (t.kind) {
      case TokenKind::int_literal:
        ++pos_;
        return {ExprKind::int_lit, t.text, {}};
      case TokenKind::string_literal:
        ++pos_;
        return ast::str_lit(t.text);
      case TokenKind::identifier: {
        std::string name = advance().text;
        if (!check_punct("(")) return ast::var(name);
        ++pos_;
        std::vector<Expr> args;
        if (!check_punct(")")) {
          args.push_back(expression());
          while (check_punct(",")) {
            ++pos_;
            args.push_back(expression());
          }
        }
        expect(TokenKind::punct, ")");
        return ast::call(name, std::move(args));
      }
      case TokenKind::punct:
        if (t.text == "(") {
          ++pos_;
          Expr e = expression();
          expect(TokenKind::punct, ")");
          return e;
        }
        break;
      default:
        break;
    }
    fail("expression");
  }

  const std::vector<Token>& toks_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Parses a token stream produced by lex(). Throws ParseError.
inline Program parse(const std::vector<Token>& tokens) {
  return detail::Parser(tokens).program();
}

/// lex + parse. Throws LexError or ParseError.
inline Program parse_source(std::string_view source) { return parse(lex(source)); }

/// Outcome of a non-throwing parse: exactly one of `program`, `lex_error`,
/// `parse_error` is set. `token_count` excludes the eof token.
struct ParseOutcome {
  std::optional<Program> program;
  std::optional<LexError> lex_error;
  std::optional<ParseError> parse_error;
  std::size_t token_count = 0;

  bool ok() const { return program.has_value(); }
};

inline ParseOutcome try_parse(std::string_view source) {
  ParseOutcome out;
  std::vector<Token> toks;
  try {
    toks = lex(source);
  } catch (const LexError& e) {
    out.lex_error = e;
    return out;
  }
  out.token_count = toks.size() - 1;
  try {
    out.program = parse(toks);
  } catch (const ParseError& e) {
    out.parse_error = e;
  }
  return out;
}

}  // namespace patchforge::minilang
