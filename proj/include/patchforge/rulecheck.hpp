#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "patchforge/dataflow.hpp"
#include "patchforge/minilang/parser.hpp"

namespace patchforge::rulecheck {

enum class RuleKind { banned_call, nonliteral_arg, unguarded_index, taint_flow };

inline std::string_view to_string(RuleKind k) {
  switch (k) {
    case RuleKind::banned_call: return "banned-call";
    case RuleKind::nonliteral_arg: return "nonliteral-arg";
    case RuleKind::unguarded_index: return "unguarded-index";
    case RuleKind::taint_flow: return "taint-flow";
  }
  return "?";
}

struct Rule {
  std::string id;
  RuleKind kind = RuleKind::banned_call;
  std::string subject;  // callee for banned-call / nonliteral-arg, taint source
  std::string sink;     // taint-flow only
  int penalty = 0;

  bool operator==(const Rule&) const = default;
};

struct Finding {
  std::string rule_id;
  std::string function;
  dataflow::StmtPath location;
  std::string message;

  bool operator==(const Finding&) const = default;
};

/// Deduction score: starts at 100; a parse failure scores 0.
struct QualityScore {
  int raw = 100;
  std::vector<Finding> findings;
  bool parse_failed = false;
};

class RuleFormatError : public std::runtime_error {
 public:
  RuleFormatError(std::size_t line, const std::string& reason)
      : std::runtime_error("rules:" + std::to_string(line) + ": " + reason), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline constexpr std::string_view kDefaultRules = R"(# Default vulnerability rules.
rule find_eval
  kind banned-call
  subject eval
  penalty 10
end

rule find_system_taint
  kind taint-flow
  subject read_input -> system
  penalty 15
end

rule find_exec
  kind banned-call
  subject exec
  penalty 10
end

rule nonliteral_system
  kind nonliteral-arg
  subject system
  penalty 10
end

rule unguarded_index
  kind unguarded-index
  penalty 10
end
)";

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline bool valid_name(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
  return true;
}

}  // namespace detail

/// Parses the line-oriented rule format:
///
///   rule <id>
///     kind <banned-call|nonliteral-arg|unguarded-index|taint-flow>
///     subject <name>            (or `subject <source> -> <sink>` for taint-flow)
///     penalty <0..100>
///   end
///
/// `#` starts a comment line. Order is preserved.
inline std::vector<Rule> load_rules(std::string_view text) {
  std::vector<Rule> rules;
  std::set<std::string> ids;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t lineno = 0;
  bool open = false;
  bool has_kind = false, has_subject = false, has_penalty = false;
  std::size_t open_line = 0;
  Rule cur;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = detail::trim(raw);
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    std::string rest = detail::trim(line.substr(key.size()));
    if (key == "rule") {
      if (open) throw RuleFormatError(lineno, "nested 'rule' before 'end'");
      if (!detail::valid_name(rest)) throw RuleFormatError(lineno, "bad rule id");
      if (ids.count(rest)) throw RuleFormatError(lineno, "duplicate rule id '" + rest + "'");
      cur = Rule{};
      cur.id = rest;
      open = true;
      open_line = lineno;
      has_kind = has_subject = has_penalty = false;
      continue;
    }
    if (!open) throw RuleFormatError(lineno, "'" + key + "' outside a rule block");
    if (key == "kind") {
      if (rest == "banned-call") cur.kind = RuleKind::banned_call;
      else if (rest == "nonliteral-arg") cur.kind = RuleKind::nonliteral_arg;
      else if (rest == "unguarded-index") cur.kind = RuleKind::unguarded_index;
      else if (rest == "taint-flow") cur.kind = RuleKind::taint_flow;
      else throw RuleFormatError(lineno, "unknown kind '" + rest + "'");
      has_kind = true;
    } else if (key == "subject") {
      const auto arrow = rest.find("->");
      if (arrow != std::string::npos) {
        cur.subject = detail::trim(rest.substr(0, arrow));
        cur.sink = detail::trim(rest.substr(arrow + 2));
        if (!detail::valid_name(cur.sink)) throw RuleFormatError(lineno, "bad sink name");
      } else {
        cur.subject = rest;
      }
      if (!detail::valid_name(cur.subject)) throw RuleFormatError(lineno, "bad subject name");
      has_subject = true;
    } else if (key == "penalty") {
      std::size_t used = 0;
      int value = 0;
      try {
        value = std::stoi(rest, &used);
      } catch (const std::exception&) {
        throw RuleFormatError(lineno, "penalty must be an integer");
      }
      if (used != rest.size()) throw RuleFormatError(lineno, "penalty must be an integer");
      if (value < 0 || value > 100) throw RuleFormatError(lineno, "penalty must be in [0, 100]");
      cur.penalty = value;
      has_penalty = true;
    } else if (key == "end") {
      if (!has_kind) throw RuleFormatError(lineno, "rule '" + cur.id + "' missing kind");
      if (!has_penalty) throw RuleFormatError(lineno, "rule '" + cur.id + "' missing penalty");
      const bool needs_subject = cur.kind != RuleKind::unguarded_index;
      if (needs_subject && !has_subject)
        throw RuleFormatError(lineno, "rule '" + cur.id + "' missing subject");
      if (cur.kind == RuleKind::taint_flow && cur.sink.empty())
        throw RuleFormatError(lineno, "taint-flow subject must be '<source> -> <sink>'");
      if (cur.kind != RuleKind::taint_flow && !cur.sink.empty())
        throw RuleFormatError(lineno, "only taint-flow rules take '->'");
      if (!needs_subject && has_subject)
        throw RuleFormatError(lineno, "unguarded-index takes no subject");
      ids.insert(cur.id);
      rules.push_back(cur);
      open = false;
    } else {
      throw RuleFormatError(lineno, "unknown key '" + key + "'");
    }
  }
  if (open) throw RuleFormatError(open_line, "rule '" + cur.id + "' not closed by 'end'");
  return rules;
}

inline const std::vector<Rule>& default_rules() {
  static const std::vector<Rule> rules = load_rules(kDefaultRules);
  return rules;
}

namespace detail {

using minilang::Expr;
using minilang::ExprKind;
using minilang::FnDecl;
using minilang::Stmt;
using minilang::StmtKind;

template <typename Fn>
void for_each_call(const Stmt& s, Fn&& fn) {
  for (const Expr& e : s.exprs)
    minilang::for_each_expr(e, [&](const Expr& x) {
      if (x.kind == ExprKind::call) fn(x);
    });
}

inline bool is_literal(const Expr& e) {
  return e.kind == ExprKind::int_lit || e.kind == ExprKind::str_lit;
}

inline void vars_in(const Expr& e, std::set<std::string>& out) {
  minilang::for_each_expr(e, [&](const Expr& x) {
    if (x.kind == ExprKind::var) out.insert(x.text);
  });
}

// Variables appearing as an operand of `<` or `<=` somewhere in `cond`.
inline void bounded_vars(const Expr& cond, std::set<std::string>& out) {
  minilang::for_each_expr(cond, [&](const Expr& x) {
    if (x.kind == ExprKind::binary && (x.text == "<" || x.text == "<=")) {
      vars_in(x.args[0], out);
      vars_in(x.args[1], out);
    }
  });
}

inline void check_index(const Expr& idx, const std::set<std::string>& bounded,
                        const FnDecl& fn, const dataflow::StmtPath& path, const Rule& rule,
                        std::vector<Finding>& out) {
  std::set<std::string> used;
  vars_in(idx, used);
  for (const auto& v : used) {
    if (!bounded.count(v)) {
      out.push_back({rule.id, fn.name, path,
                     "index variable '" + v + "' is not bounds-checked by an enclosing condition"});
      return;
    }
  }
}

inline void unguarded_in_body(const std::vector<Stmt>& body, std::set<std::string> bounded,
                              const FnDecl& fn, dataflow::StmtPath& path, bool in_else,
                              const Rule& rule, std::vector<Finding>& out) {
  for (std::size_t i = 0; i < body.size(); ++i) {
    const Stmt& s = body[i];
    path.push_back({in_else, i});
    std::set<std::string> inner = bounded;
    if (s.kind == StmtKind::if_else || s.kind == StmtKind::while_loop)
      bounded_vars(s.exprs[0], inner);
    for (const Expr& e : s.exprs)
      minilang::for_each_expr(e, [&](const Expr& x) {
        if (x.kind == ExprKind::index) check_index(x.args[1], inner, fn, path, rule, out);
      });
    if (s.kind == StmtKind::index_assign) check_index(s.exprs[0], inner, fn, path, rule, out);
    unguarded_in_body(s.body, inner, fn, path, false, rule, out);
    unguarded_in_body(s.orelse, inner, fn, path, true, rule, out);
    path.pop_back();
  }
}

inline void apply(const Rule& rule, const FnDecl& fn, std::vector<Finding>& out) {
  switch (rule.kind) {
    case RuleKind::banned_call:
      dataflow::walk(fn, [&](const Stmt& s, const dataflow::StmtPath& path) {
        for_each_call(s, [&](const Expr& c) {
          if (c.text == rule.subject)
            out.push_back({rule.id, fn.name, path, "call to banned function '" + c.text + "'"});
        });
      });
      break;
    case RuleKind::nonliteral_arg:
      dataflow::walk(fn, [&](const Stmt& s, const dataflow::StmtPath& path) {
        for_each_call(s, [&](const Expr& c) {
          if (c.text == rule.subject && !c.args.empty() && !is_literal(c.args[0]))
            out.push_back({rule.id, fn.name, path,
                           "first argument of '" + c.text + "' is not a literal"});
        });
      });
      break;
    case RuleKind::unguarded_index: {
      dataflow::StmtPath path;
      unguarded_in_body(fn.body, {}, fn, path, false, rule, out);
      break;
    }
    case RuleKind::taint_flow: {
      const auto tainted = dataflow::tainted_vars(dataflow::collect_def_use(fn), rule.subject);
      dataflow::walk(fn, [&](const Stmt& s, const dataflow::StmtPath& path) {
        for_each_call(s, [&](const Expr& c) {
          if (c.text != rule.sink) return;
          for (const Expr& a : c.args) {
            if (dataflow::carries(a, rule.subject, tainted)) {
              out.push_back({rule.id, fn.name, path,
                             "value from '" + rule.subject + "' reaches '" + rule.sink + "'"});
              return;
            }
          }
        });
      });
      break;
    }
  }
}

}  // namespace detail

/// Runs every rule over every function, in rule order then source order.
inline QualityScore check(const minilang::Program& program, const std::vector<Rule>& rules) {
  QualityScore q;
  int deducted = 0;
  for (const Rule& rule : rules) {
    for (const auto& fn : program.functions) {
      const std::size_t before = q.findings.size();
      detail::apply(rule, fn, q.findings);
      deducted += rule.penalty * static_cast<int>(q.findings.size() - before);
    }
  }
  q.raw = std::max(0, 100 - deducted);
  return q;
}

/// Score for text that may not parse; parse (or lex) failure scores 0.
inline QualityScore check_source(std::string_view source, const std::vector<Rule>& rules) {
  auto outcome = minilang::try_parse(source);
  if (!outcome.ok()) {
    QualityScore q;
    q.raw = 0;
    q.parse_failed = true;
    return q;
  }
  return check(*outcome.program, rules);
}

}  // namespace patchforge::rulecheck
