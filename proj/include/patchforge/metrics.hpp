#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "patchforge/dataflow.hpp"
#include "patchforge/minilang.hpp"

namespace patchforge::metrics {

using Tokens = std::vector<std::string>;
using Ngram = std::vector<std::string>;
using NgramSet = std::set<Ngram>;

inline constexpr std::size_t kMaxOrder = 4;

/// True on byte equality, or when both sides parse to the same canonical text.
inline bool exact_match(std::string_view candidate, std::string_view reference) {
  if (candidate == reference) return true;
  auto c = minilang::try_parse(candidate);
  if (!c.ok()) return false;
  auto r = minilang::try_parse(reference);
  if (!r.ok()) return false;
  return minilang::print_canonical(*c.program) == minilang::print_canonical(*r.program);
}

/// Lexemes of the canonical print when the source parses, otherwise the raw
/// lenient lexemes. Formatting and redundant parentheses never matter.
inline Tokens code_tokens(std::string_view source) {
  std::string canonical;
  auto outcome = minilang::try_parse(source);
  if (outcome.ok()) {
    canonical = minilang::print_canonical(*outcome.program);
    source = canonical;
  }
  Tokens out;
  for (const auto& t : minilang::lex_lenient(source))
    if (t.kind != minilang::TokenKind::eof) out.push_back(t.text);
  return out;
}

inline std::map<Ngram, std::size_t> ngram_counts(const Tokens& toks, std::size_t n, const NgramSet& exclude) {
  std::map<Ngram, std::size_t> counts;
  if (toks.size() < n) return counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    Ngram g(toks.begin() + static_cast<std::ptrdiff_t>(i), toks.begin() + static_cast<std::ptrdiff_t>(i + n));
    if (!exclude.count(g)) ++counts[std::move(g)];
  }
  return counts;
}

/// Sentence BLEU-4 with uniform weights. An order with no matches scores
/// 1/(c+1) for c candidate n-grams; an order with no candidate n-grams at all
/// scores 1. No countable candidate unigram gives 0. Excluded n-grams are
/// dropped from both sides; the brevity penalty uses the raw lengths.
inline double bleu4(const Tokens& candidate, const Tokens& reference, const NgramSet& exclude = {}) {
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= kMaxOrder; ++n) {
    const auto cc = ngram_counts(candidate, n, exclude);
    const auto rc = ngram_counts(reference, n, exclude);
    std::size_t total = 0, matched = 0;
    for (const auto& [g, k] : cc) {
      total += k;
      auto it = rc.find(g);
      if (it != rc.end()) matched += std::min(k, it->second);
    }
    if (n == 1 && total == 0) return 0.0;
    double p = 1.0;
    if (total > 0) p = matched > 0 ? static_cast<double>(matched) / static_cast<double>(total) : 1.0 / static_cast<double>(total + 1);
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(candidate.size()), r = static_cast<double>(reference.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / static_cast<double>(kMaxOrder));
}

/// Corpus n-gram frequencies and the K most frequent ("trivially shared")
/// n-grams over all orders; ties broken lexicographically.
struct NgramStats {
  std::map<Ngram, std::size_t> frequency;
  NgramSet trivially_shared;

  template <typename Range>
  static NgramStats build(const Range& sources, std::size_t k) {
    NgramStats s;
    for (const auto& src : sources) {
      const Tokens toks = code_tokens(src);
      for (std::size_t n = 1; n <= kMaxOrder; ++n)
        for (auto& [g, c] : ngram_counts(toks, n, {})) s.frequency[g] += c;
    }
    std::vector<std::pair<const Ngram*, std::size_t>> ranked;
    ranked.reserve(s.frequency.size());
    for (const auto& [g, c] : s.frequency) ranked.emplace_back(&g, c);
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) s.trivially_shared.insert(*ranked[i].first);
    return s;
  }
};

inline double crystalbleu(std::string_view candidate, std::string_view reference, const NgramStats& stats) {
  return bleu4(code_tokens(candidate), code_tokens(reference), stats.trivially_shared);
}

inline bool is_keyword_token(const std::string& t) { return minilang::is_keyword(t) || minilang::is_builtin(t); }

/// Brevity-penalized unigram precision where keyword and builtin tokens
/// count `keyword_weight` times.
inline double weighted_unigram_match(const Tokens& candidate, const Tokens& reference, double keyword_weight) {
  if (candidate.empty()) return 0.0;
  std::map<std::string, std::size_t> cc, rc;
  for (const auto& t : candidate) ++cc[t];
  for (const auto& t : reference) ++rc[t];
  double num = 0.0, den = 0.0;
  for (const auto& [t, k] : cc) {
    const double w = is_keyword_token(t) ? keyword_weight : 1.0;
    den += w * static_cast<double>(k);
    auto it = rc.find(t);
    if (it != rc.end()) num += w * static_cast<double>(std::min(k, it->second));
  }
  const double c = static_cast<double>(candidate.size()), r = static_cast<double>(reference.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * num / den;
}

namespace detail {

inline std::string expr_label(const minilang::Expr& e) {
  using minilang::ExprKind;
  switch (e.kind) {
    case ExprKind::int_lit: return "int";
    case ExprKind::str_lit: return "str";
    case ExprKind::var: return "var";
    case ExprKind::call: return "call";
    case ExprKind::index: return "index";
    case ExprKind::unary: return "unary" + e.text;
    case ExprKind::binary: return "binary" + e.text;
  }
  return "?";
}

inline std::string stmt_label(const minilang::Stmt& s) {
  using minilang::StmtKind;
  switch (s.kind) {
    case StmtKind::let: return "let";
    case StmtKind::assign: return "assign";
    case StmtKind::index_assign: return "index_assign";
    case StmtKind::if_else: return s.has_else ? "if_else" : "if";
    case StmtKind::while_loop: return "while";
    case StmtKind::ret: return "return";
    case StmtKind::expr: return "expr";
  }
  return "?";
}

inline std::string expr_shape(const minilang::Expr& e, int depth) {
  std::string s = expr_label(e);
  if (depth <= 1 || e.args.empty()) return s;
  s += '(';
  for (std::size_t i = 0; i < e.args.size(); ++i) {
    if (i) s += ',';
    s += expr_shape(e.args[i], depth - 1);
  }
  return s + ')';
}

inline std::string stmt_shape(const minilang::Stmt& s, int depth);

inline std::string block_shape(const std::vector<minilang::Stmt>& body, int depth) {
  std::string out = "[";
  for (std::size_t i = 0; i < body.size(); ++i) {
    if (i) out += ',';
    out += stmt_shape(body[i], depth);
  }
  return out + ']';
}

inline std::string stmt_shape(const minilang::Stmt& s, int depth) {
  std::string out = stmt_label(s);
  if (depth <= 1) return out;
  out += '(';
  for (std::size_t i = 0; i < s.exprs.size(); ++i) {
    if (i) out += ',';
    out += expr_shape(s.exprs[i], depth - 1);
  }
  if (s.kind == minilang::StmtKind::if_else || s.kind == minilang::StmtKind::while_loop) out += ";" + block_shape(s.body, depth - 1);
  if (s.has_else) out += ";" + block_shape(s.orelse, depth - 1);
  return out + ')';
}

inline void collect_expr_shapes(const minilang::Expr& e, int depth, std::map<std::string, std::size_t>& out) {
  ++out[expr_shape(e, depth)];
  for (const auto& a : e.args) collect_expr_shapes(a, depth, out);
}

}  // namespace detail

/// Multiset of depth-limited subtree shapes (node kinds and operators only)
/// rooted at every statement and expression node.
inline std::map<std::string, std::size_t> subtree_shapes(const minilang::Program& p, int depth = 3) {
  std::map<std::string, std::size_t> out;
  for (const auto& fn : p.functions) {
    ++out["fn" + detail::block_shape(fn.body, depth - 1)];
    minilang::for_each_stmt(fn.body, [&](const minilang::Stmt& s) {
      ++out[detail::stmt_shape(s, depth)];
      for (const auto& e : s.exprs) detail::collect_expr_shapes(e, depth, out);
    });
  }
  return out;
}

/// Fraction of the reference's subtree shapes (with multiplicity) that the
/// candidate also contains.
inline double ast_match(const minilang::Program& candidate, const minilang::Program& reference) {
  const auto rc = subtree_shapes(reference);
  const auto cc = subtree_shapes(candidate);
  std::size_t total = 0, hit = 0;
  for (const auto& [s, k] : rc) {
    total += k;
    auto it = cc.find(s);
    if (it != cc.end()) hit += std::min(k, it->second);
  }
  return total == 0 ? 1.0 : static_cast<double>(hit) / static_cast<double>(total);
}

using DefUsePair = std::tuple<std::size_t, minilang::StmtKind, minilang::StmtKind>;

/// Flow-insensitive def-use pairs of every function: each definition of a
/// variable paired with each use of it, as (renamed variable, defining
/// statement kind, using statement kind). Variables are numbered by first
/// occurrence among definitions then uses.
inline std::map<DefUsePair, std::size_t> def_use_pairs(const minilang::Program& p) {
  std::map<DefUsePair, std::size_t> out;
  for (const auto& fn : p.functions) {
    const auto du = dataflow::collect_def_use(fn);
    std::map<std::string, std::size_t> rename;
    auto id = [&](const std::string& v) { return rename.emplace(v, rename.size()).first->second; };
    for (const auto& d : du.defs) id(d.var);
    for (const auto& u : du.uses) id(u.var);
    for (const auto& d : du.defs)
      for (const auto& u : du.uses)
        if (d.var == u.var) ++out[{id(d.var), d.stmt_kind, u.stmt_kind}];
  }
  return out;
}

inline double dataflow_match(const minilang::Program& candidate, const minilang::Program& reference) {
  const auto a = def_use_pairs(candidate), b = def_use_pairs(reference);
  std::size_t lo = 0, hi = 0;
  std::set<DefUsePair> keys;
  for (const auto& [k, n] : a) keys.insert(k);
  for (const auto& [k, n] : b) keys.insert(k);
  for (const auto& k : keys) {
    auto ia = a.find(k), ib = b.find(k);
    const std::size_t x = ia == a.end() ? 0 : ia->second, y = ib == b.end() ? 0 : ib->second;
    lo += std::min(x, y);
    hi += std::max(x, y);
  }
  return hi == 0 ? 1.0 : static_cast<double>(lo) / static_cast<double>(hi);
}

struct CodeBleuConfig {
  double w_bleu = 0.25;
  double w_weighted = 0.25;
  double w_ast = 0.25;
  double w_dataflow = 0.25;
  double keyword_weight = 4.0;
};

struct CodeBleuParts {
  double bleu = 0, weighted = 0, ast = 0, dataflow = 0, score = 0;
};

inline CodeBleuParts codebleu_parts(std::string_view candidate, std::string_view reference, const CodeBleuConfig& cfg = {}) {
  CodeBleuParts p;
  const Tokens ct = code_tokens(candidate), rt = code_tokens(reference);
  p.bleu = bleu4(ct, rt);
  p.weighted = weighted_unigram_match(ct, rt, cfg.keyword_weight);
  auto c = minilang::try_parse(candidate);
  auto r = minilang::try_parse(reference);
  if (c.ok() && r.ok()) {
    p.ast = ast_match(*c.program, *r.program);
    p.dataflow = dataflow_match(*c.program, *r.program);
  }
  const double wsum = cfg.w_bleu + cfg.w_weighted + cfg.w_ast + cfg.w_dataflow;
  p.score = (cfg.w_bleu * p.bleu + cfg.w_weighted * p.weighted + cfg.w_ast * p.ast + cfg.w_dataflow * p.dataflow) / wsum;
  return p;
}

inline double codebleu(std::string_view candidate, std::string_view reference, const CodeBleuConfig& cfg = {}) {
  return codebleu_parts(candidate, reference, cfg).score;
}

/// Means over a group of samples, as fractions in [0, 1].
struct MetricTriple {
  std::size_t count = 0;
  double exact_match = 0;
  double codebleu = 0;
  double crystalbleu = 0;
};

struct MetricsReport {
  MetricTriple overall;
  std::map<std::string, MetricTriple> by_category;
};

struct ScoredSample {
  std::string category;
  bool exact = false;
  double codebleu = 0;
  double crystalbleu = 0;
};

inline MetricsReport aggregate(const std::vector<ScoredSample>& samples) {
  MetricsReport r;
  auto add = [](MetricTriple& t, const ScoredSample& s) {
    ++t.count;
    t.exact_match += s.exact ? 1.0 : 0.0;
    t.codebleu += s.codebleu;
    t.crystalbleu += s.crystalbleu;
  };
  auto finish = [](MetricTriple& t) {
    if (t.count == 0) return;
    const double n = static_cast<double>(t.count);
    t.exact_match /= n;
    t.codebleu /= n;
    t.crystalbleu /= n;
  };
  for (const auto& s : samples) {
    add(r.overall, s);
    add(r.by_category[s.category], s);
  }
  finish(r.overall);
  for (auto& [c, t] : r.by_category) finish(t);
  return r;
}

}  // namespace patchforge::metrics
