#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "patchforge/minilang.hpp"
#include "patchforge/nn/rng.hpp"
#include "patchforge/rulecheck.hpp"

namespace patchforge::corpus {

class GenError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IngestError : public std::runtime_error {
 public:
  IngestError(std::size_t line, const std::string& reason)
      : std::runtime_error("line " + std::to_string(line) + ": " + reason), line_(line), reason_(reason) {}
  std::size_t line() const { return line_; }
  const std::string& reason() const { return reason_; }

 private:
  std::size_t line_;
  std::string reason_;
};

inline constexpr std::array<std::string_view, 5> kCategories = {
    "eval_injection", "command_injection", "unguarded_index", "missing_validation", "integer_overflow_guard"};

inline bool is_category(std::string_view c) {
  return std::find(kCategories.begin(), kCategories.end(), c) != kCategories.end();
}

/// Default rule each category injects a violation of; empty when none.
inline std::string_view linked_rule(std::string_view category) {
  if (category == "eval_injection") return "find_eval";
  if (category == "command_injection") return "find_system_taint";
  if (category == "unguarded_index" || category == "missing_validation") return "unguarded_index";
  return "";
}

struct RepairExample {
  std::string id;
  std::string buggy;
  std::string fixed;
  std::string category;

  bool operator==(const RepairExample&) const = default;
};

inline nlohmann::json to_json(const RepairExample& e) {
  return {{"id", e.id}, {"buggy", e.buggy}, {"fixed", e.fixed}, {"category", e.category}};
}

/// Empty string when the example satisfies every invariant, otherwise the
/// first violation.
inline std::string violation(const RepairExample& e) {
  if (!is_category(e.category)) return "unknown category '" + e.category + "'";
  auto fixed = minilang::try_parse(e.fixed);
  if (!fixed.ok()) return "fixed does not parse";
  auto buggy = minilang::try_parse(e.buggy);
  if (!buggy.ok()) return "buggy does not parse";
  if (fixed.program->functions.empty() || buggy.program->functions.empty()) return "program has no function";
  if (minilang::print_canonical(*fixed.program) == minilang::print_canonical(*buggy.program))
    return "buggy and fixed are the same program";
  const std::string_view rule = linked_rule(e.category);
  if (!rule.empty()) {
    const auto& rules = rulecheck::default_rules();
    if (rulecheck::check(*buggy.program, rules).findings.empty()) return "buggy triggers no default rule";
    for (const auto& f : rulecheck::check(*fixed.program, rules).findings)
      if (f.rule_id == rule) return "fixed triggers " + std::string(rule);
  }
  return "";
}

struct SizeRange {
  std::size_t min_statements = 3;
  std::size_t max_statements = 12;
};

namespace detail {

using namespace minilang::ast;
using minilang::Expr;
using minilang::Stmt;

inline constexpr std::array<const char*, 12> kFunctionNames = {
    "handle", "process", "serve", "update", "compute", "dispatch", "render", "collect", "apply", "route", "store", "query"};
inline constexpr std::array<const char*, 20> kVarNames = {
    "data", "count", "total", "size", "value", "acc", "step", "level", "offset", "width",
    "limit_n", "score", "delta", "base", "rate", "depth", "flag", "mode", "seed", "weight"};
inline constexpr std::array<const char*, 6> kCommands = {"\"ls\"", "\"cat\"", "\"echo\"", "\"grep\"", "\"sort\"", "\"wc\""};
inline constexpr std::array<const char*, 3> kSanitizers = {"escape", "filter", "limit"};

struct Builder {
  nn::Rng& rng;
  std::vector<std::string> taken;
  std::vector<std::string> ints;  // integer-valued variables in scope

  template <std::size_t N>
  const char* pick(const std::array<const char*, N>& a) { return a[rng.below(N)]; }

  std::string fresh() {
    for (int tries = 0; tries < 100; ++tries) {
      std::string n = pick(kVarNames);
      if (std::find(taken.begin(), taken.end(), n) == taken.end()) {
        taken.push_back(n);
        return n;
      }
    }
    std::string n = "v" + std::to_string(taken.size());
    taken.push_back(n);
    return n;
  }

  std::string some_int() { return ints[rng.below(ints.size())]; }
  Expr small() { return int_lit(rng.range(1, 9)); }

  Expr operand() { return rng.bernoulli(0.6) ? var(some_int()) : small(); }

  /// One rule-clean statement over the integer variables in scope.
  Stmt filler() {
    switch (rng.below(7)) {
      case 0: {
        Expr e = binary(rng.bernoulli(0.5) ? "+" : "*", var(some_int()), operand());
        std::string n = fresh();
        Stmt s = let(n, std::move(e));
        ints.push_back(n);
        return s;
      }
      case 1: {
        std::string v = some_int();
        return assign(v, binary(rng.bernoulli(0.5) ? "+" : "-", var(v), small()));
      }
      case 2:
        return expr(call("print", {var(some_int())}));
      case 3: {
        std::string v = some_int();
        return if_else(binary(">", var(v), int_lit(rng.range(5, 50))), {assign(v, binary("-", var(v), small()))});
      }
      case 4: {
        std::string v = some_int();
        return if_else(binary("==", var(v), int_lit(0)), {assign(v, int_lit(1))},
                       {assign(v, binary("*", var(v), small()))});
      }
      case 5: {
        std::string v = some_int();
        return assign(v, binary("%", var(v), int_lit(rng.range(7, 97))));
      }
      default: {
        std::string n = fresh();
        Stmt s = let(n, binary("-", var(some_int()), var(some_int())));
        ints.push_back(n);
        return s;
      }
    }
  }
};

struct Skeleton {
  std::vector<Stmt> fixed_core;
  std::vector<Stmt> buggy_core;
};

// Each injector returns the fixed and buggy forms of the same core snippet,
// given the integer variables already in scope.

inline Skeleton eval_injection(Builder& b) {
  const std::string v = b.fresh();
  Expr src = b.rng.bernoulli(0.5) ? call("read_input") : var(b.some_int());
  const char* sanitizer = b.pick(kSanitizers);
  Skeleton s;
  s.fixed_core = {let(v, call(sanitizer, {src})), expr(call("print", {var(v)}))};
  s.buggy_core = {let(v, call("eval", {src})), expr(call("print", {var(v)}))};
  return s;
}

inline Skeleton command_injection(Builder& b) {
  const std::string raw = b.fresh();
  const std::string clean = b.fresh();
  const char* cmd = b.pick(kCommands);
  Skeleton s;
  s.fixed_core = {let(raw, call("read_input")), let(clean, call(b.pick(kSanitizers), {var(raw)})),
                  expr(call("system", {str_lit(cmd), var(clean)}))};
  s.buggy_core = s.fixed_core;
  s.buggy_core[2] = expr(call("system", {str_lit(cmd), var(raw)}));
  return s;
}

inline Skeleton unguarded_index(Builder& b) {
  const std::string buf = b.fresh();
  const std::string i = b.fresh();
  const std::string acc = b.some_int();
  auto loop = [&](const char* op) {
    return while_loop(binary(op, var(i), call("len", {var(buf)})),
                      {assign(acc, binary("+", var(acc), index(var(buf), var(i)))),
                       assign(i, binary("+", var(i), int_lit(1)))});
  };
  Skeleton s;
  s.fixed_core = {let(buf, call("alloc", {int_lit(b.rng.range(4, 32))})), let(i, int_lit(0)), loop("<")};
  s.buggy_core = {s.fixed_core[0], s.fixed_core[1], loop("!=")};
  return s;
}

inline Skeleton missing_validation(Builder& b) {
  const std::string buf = b.fresh();
  const std::string k = b.fresh();
  const int cap = b.rng.range(4, 16);
  Stmt store = index_assign(buf, var(k), var(b.some_int()));
  Expr guard = b.rng.bernoulli(0.5) ? binary("<", var(k), int_lit(cap)) : binary("<=", var(k), int_lit(cap - 1));
  Skeleton s;
  s.fixed_core = {let(buf, call("alloc", {int_lit(cap)})), let(k, call("read_input")), if_else(guard, {store})};
  s.buggy_core = {s.fixed_core[0], s.fixed_core[1], store};
  return s;
}

inline Skeleton integer_overflow_guard(Builder& b) {
  const std::string v = b.some_int();
  const int bound = 100 * b.rng.range(1, 99);
  Stmt grow = assign(v, binary("*", var(v), var(b.some_int())));
  Skeleton s;
  s.fixed_core = {grow, if_else(binary(">", var(v), int_lit(bound)), {assign(v, int_lit(bound))})};
  s.buggy_core = {grow};
  return s;
}

inline Skeleton inject(std::string_view category, Builder& b) {
  if (category == "eval_injection") return eval_injection(b);
  if (category == "command_injection") return command_injection(b);
  if (category == "unguarded_index") return unguarded_index(b);
  if (category == "missing_validation") return missing_validation(b);
  if (category == "integer_overflow_guard") return integer_overflow_guard(b);
  throw GenError("unknown category '" + std::string(category) + "'");
}

inline RepairExample generate_one(std::string id, std::string_view category, const SizeRange& size, nn::Rng& rng) {
  Builder b{rng, {}, {}};
  minilang::FnDecl fixed_fn;
  fixed_fn.name = b.pick(kFunctionNames);
  const std::size_t nparams = 1 + rng.below(3);
  for (std::size_t i = 0; i < nparams; ++i) {
    fixed_fn.params.push_back(b.fresh());
    b.ints.push_back(fixed_fn.params.back());
  }
  const std::size_t target = size.min_statements + rng.below(size.max_statements - size.min_statements + 1);
  std::vector<Stmt> prefix;
  const std::size_t lead = rng.below(3);
  for (std::size_t i = 0; i < lead; ++i) prefix.push_back(b.filler());
  Skeleton core = inject(category, b);
  std::vector<Stmt> suffix;
  const std::size_t used = prefix.size() + core.fixed_core.size() + 1;
  for (std::size_t i = used; i < target; ++i) suffix.push_back(b.filler());
  Stmt ret = minilang::ast::ret(var(b.some_int()));

  auto assemble = [&](const std::vector<Stmt>& mid) {
    minilang::FnDecl fn = fixed_fn;
    fn.body = prefix;
    fn.body.insert(fn.body.end(), mid.begin(), mid.end());
    fn.body.insert(fn.body.end(), suffix.begin(), suffix.end());
    fn.body.push_back(ret);
    return minilang::print_canonical(fn);
  };
  return {std::move(id), assemble(core.buggy_core), assemble(core.fixed_core), std::string(category)};
}

}  // namespace detail

inline std::string example_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "pf-%06zu", index);
  return buf;
}

/// Seeded synthetic repair pairs; categories are assigned round-robin.
/// Example i draws from its own stream derived from (seed, i).
inline std::vector<RepairExample> generate(std::size_t count, std::uint64_t seed, SizeRange size = {}) {
  if (count == 0) throw GenError("count must be at least 1");
  if (size.min_statements < 3 || size.max_statements < size.min_statements)
    throw GenError("statement range must satisfy 3 <= min <= max");
  std::vector<RepairExample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::string_view category = kCategories[i % kCategories.size()];
    nn::Rng rng = nn::Rng::derive(seed, i);
    bool ok = false;
    for (int attempt = 0; attempt < 16 && !ok; ++attempt) {
      RepairExample e = detail::generate_one(example_id(i), category, size, rng);
      if (violation(e).empty()) {
        out.push_back(std::move(e));
        ok = true;
      }
    }
    if (!ok) throw GenError("could not generate a valid " + std::string(category) + " example at index " + std::to_string(i));
  }
  return out;
}

inline void write_jsonl(const std::vector<RepairExample>& examples, std::ostream& os) {
  for (const auto& e : examples) os << to_json(e).dump() << '\n';
}

inline std::vector<RepairExample> parse_jsonl(std::istream& is) {
  std::vector<RepairExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw IngestError(lineno, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw IngestError(lineno, "expected a JSON object");
    RepairExample e;
    for (auto [key, field] : {std::pair{"id", &e.id}, {"buggy", &e.buggy}, {"fixed", &e.fixed}, {"category", &e.category}}) {
      auto it = j.find(key);
      if (it == j.end() || !it->is_string()) throw IngestError(lineno, std::string("missing string field '") + key + "'");
      *field = it->get<std::string>();
    }
    if (auto why = violation(e); !why.empty()) throw IngestError(lineno, why);
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<RepairExample> load_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IngestError(0, "cannot open '" + path + "'");
  return parse_jsonl(f);
}

struct SplitSpec {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (train < 0 || valid < 0 || test < 0 || std::abs(train + valid + test - 1.0) > 1e-9)
      throw std::invalid_argument("split fractions must be non-negative and sum to 1");
  }
};

struct Splits {
  std::vector<RepairExample> train;
  std::vector<RepairExample> valid;
  std::vector<RepairExample> test;
};

/// Sorts by id, shuffles with the seed, then slices: floor for train and
/// valid, the remainder to test.
inline Splits split(std::vector<RepairExample> examples, const SplitSpec& spec) {
  spec.validate();
  std::sort(examples.begin(), examples.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  nn::Rng rng(spec.seed);
  rng.shuffle(examples);
  const double n = static_cast<double>(examples.size());
  const auto n_train = static_cast<std::size_t>(std::floor(n * spec.train + 1e-9));
  const auto n_valid = std::min(examples.size() - n_train, static_cast<std::size_t>(std::floor(n * spec.valid + 1e-9)));
  Splits s;
  auto it = examples.begin();
  s.train.assign(std::make_move_iterator(it), std::make_move_iterator(it + static_cast<std::ptrdiff_t>(n_train)));
  it += static_cast<std::ptrdiff_t>(n_train);
  s.valid.assign(std::make_move_iterator(it), std::make_move_iterator(it + static_cast<std::ptrdiff_t>(n_valid)));
  it += static_cast<std::ptrdiff_t>(n_valid);
  s.test.assign(std::make_move_iterator(it), std::make_move_iterator(examples.end()));
  return s;
}

inline std::map<std::string, std::size_t> category_histogram(const std::vector<RepairExample>& examples) {
  std::map<std::string, std::size_t> h;
  for (auto c : kCategories) h[std::string(c)] = 0;
  for (const auto& e : examples) ++h[e.category];
  return h;
}

}  // namespace patchforge::corpus
