#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

#include "patchforge/corpus.hpp"
#include "patchforge/metrics.hpp"

namespace mt = patchforge::metrics;
namespace ml = patchforge::minilang;

namespace {

// Reference sentence BLEU-4 over space-joined n-gram keys.
double bleu_oracle(const mt::Tokens& c, const mt::Tokens& r, const std::set<std::string>& exclude = {}) {
  if (c.empty()) return 0.0;
  auto grams = [&](const mt::Tokens& t, std::size_t n) {
    std::unordered_map<std::string, int> m;
    for (std::size_t i = 0; i + n <= t.size(); ++i) {
      std::string key;
      for (std::size_t j = i; j < i + n; ++j) key += (j > i ? " " : "") + t[j];
      if (!exclude.count(key)) m[key]++;
    }
    return m;
  };
  double product = 1.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    auto cm = grams(c, n), rm = grams(r, n);
    int total = 0, clipped = 0;
    for (auto& [k, v] : cm) {
      total += v;
      clipped += std::min(v, rm.count(k) ? rm[k] : 0);
    }
    if (n == 1 && total == 0) return 0.0;
    if (total == 0) continue;
    product *= clipped == 0 ? 1.0 / (total + 1) : static_cast<double>(clipped) / total;
  }
  const double bp = c.size() > r.size() ? 1.0 : std::exp(1.0 - static_cast<double>(r.size()) / c.size());
  return bp * std::pow(product, 0.25);
}

std::set<std::string> joined(const mt::NgramSet& s) {
  std::set<std::string> out;
  for (const auto& g : s) {
    std::string key;
    for (std::size_t i = 0; i < g.size(); ++i) key += (i ? " " : "") + g[i];
    out.insert(key);
  }
  return out;
}

// Enumerates every (definition, use) pair of the same name by walking the tree directly.
struct DefUseOracle {
  struct Site {
    std::string var;
    ml::StmtKind kind;
  };
  std::vector<Site> defs, uses;

  void expr(const ml::Expr& e, ml::StmtKind k) {
    if (e.kind == ml::ExprKind::var) uses.push_back({e.text, k});
    for (const auto& a : e.args) expr(a, k);
  }
  void block(const std::vector<ml::Stmt>& body) {
    for (const auto& s : body) {
      if (s.kind == ml::StmtKind::let || s.kind == ml::StmtKind::assign) defs.push_back({s.name, s.kind});
      if (s.kind == ml::StmtKind::index_assign) {
        defs.push_back({s.name, s.kind});
        uses.push_back({s.name, s.kind});
      }
      for (const auto& e : s.exprs) expr(e, s.kind);
      block(s.body);
      block(s.orelse);
    }
  }
  static std::multiset<std::tuple<int, ml::StmtKind, ml::StmtKind>> pairs(const ml::Program& p) {
    std::multiset<std::tuple<int, ml::StmtKind, ml::StmtKind>> out;
    for (const auto& fn : p.functions) {
      DefUseOracle o;
      for (const auto& a : fn.params) o.defs.push_back({a, ml::StmtKind::let});
      o.block(fn.body);
      std::vector<std::string> order;
      auto number = [&](const std::string& v) {
        for (std::size_t i = 0; i < order.size(); ++i)
          if (order[i] == v) return static_cast<int>(i);
        order.push_back(v);
        return static_cast<int>(order.size() - 1);
      };
      for (const auto& d : o.defs) number(d.var);
      for (const auto& u : o.uses) number(u.var);
      for (const auto& d : o.defs)
        for (const auto& u : o.uses)
          if (d.var == u.var) out.insert({number(d.var), d.kind, u.kind});
    }
    return out;
  }
};

double dataflow_oracle(const std::string& cand, const std::string& ref) {
  auto a = DefUseOracle::pairs(ml::parse_source(cand)), b = DefUseOracle::pairs(ml::parse_source(ref));
  std::vector<std::tuple<int, ml::StmtKind, ml::StmtKind>> both, either;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(either));
  return either.empty() ? 1.0 : static_cast<double>(both.size()) / either.size();
}

mt::Tokens toks(const std::string& s) { return mt::code_tokens(s); }

}  // namespace

TEST(ExactMatch, Examples) {
  EXPECT_TRUE(mt::exact_match("fn f(){return 1;}", "fn f(){return 1;}"));
  EXPECT_TRUE(mt::exact_match("fn f( ) {\n  return 1 ;\n}", "fn f(){return 1;}"));
  EXPECT_TRUE(mt::exact_match("fn f(){return (1);}", "fn f(){return 1;}"));
  EXPECT_FALSE(mt::exact_match("fn f(){return 2;}", "fn f(){return 1;}"));
  EXPECT_FALSE(mt::exact_match("fn f(){return", "fn f(){return 1;}"));
  EXPECT_TRUE(mt::exact_match("fn f(){return", "fn f(){return"));
}

TEST(Bleu, IdentityAndEmpty) {
  const auto t = toks("fn f(a){let x = a + 1; return x;}");
  EXPECT_DOUBLE_EQ(mt::bleu4(t, t), 1.0);
  EXPECT_EQ(mt::bleu4({}, t), 0.0);
}

TEST(Bleu, DisjointStreamsAtSmoothingFloor) {
  const mt::Tokens c{"a", "b", "c", "d", "e"}, r{"v", "w", "x", "y", "z"};
  const double floor = std::pow((1.0 / 6) * (1.0 / 5) * (1.0 / 4) * (1.0 / 3), 0.25);
  EXPECT_LE(mt::bleu4(c, r), floor + 1e-15);
}

TEST(Bleu, TenTokenPairMatchesOracle) {
  const mt::Tokens c{"let", "x", "=", "a", "+", "1", ";", "return", "x", ";"};
  const mt::Tokens r{"let", "y", "=", "a", "+", "1", ";", "return", "y", ";"};
  EXPECT_NEAR(mt::bleu4(c, r), bleu_oracle(c, r), 1e-9);
  // unigram 8/10, bigram 5/9, trigram 4/8, 4-gram 3/7
  EXPECT_NEAR(mt::bleu4(c, r), std::pow(0.8 * 5.0 / 9 * 4.0 / 8 * 3.0 / 7, 0.25), 1e-12);
}

TEST(Bleu, RandomPairsMatchOracle) {
  const auto ex = patchforge::corpus::generate(200, 51);
  for (std::size_t i = 0; i + 1 < ex.size(); ++i) {
    const auto c = toks(ex[i].buggy), r = toks(ex[i + 1].fixed);
    EXPECT_NEAR(mt::bleu4(c, r), bleu_oracle(c, r), 1e-9);
    const auto r2 = toks(ex[i].fixed);
    EXPECT_NEAR(mt::bleu4(c, r2), bleu_oracle(c, r2), 1e-9);
  }
}

TEST(CrystalBleu, ZeroKEqualsBleu) {
  const auto ex = patchforge::corpus::generate(60, 52);
  std::vector<std::string> train;
  for (const auto& e : ex) train.push_back(e.fixed);
  const auto stats = mt::NgramStats::build(train, 0);
  EXPECT_TRUE(stats.trivially_shared.empty());
  for (std::size_t i = 0; i + 1 < ex.size(); ++i)
    EXPECT_EQ(mt::crystalbleu(ex[i].buggy, ex[i].fixed, stats), mt::bleu4(toks(ex[i].buggy), toks(ex[i].fixed)));
}

TEST(CrystalBleu, ExcludedSetIsTopKAndMatchesOracle) {
  const auto ex = patchforge::corpus::generate(100, 53);
  std::vector<std::string> train;
  for (const auto& e : ex) train.push_back(e.fixed);
  const auto stats = mt::NgramStats::build(train, 50);
  ASSERT_EQ(stats.trivially_shared.size(), 50u);
  std::size_t lowest_kept = SIZE_MAX, highest_dropped = 0;
  for (const auto& [g, n] : stats.frequency) {
    if (stats.trivially_shared.count(g))
      lowest_kept = std::min(lowest_kept, n);
    else
      highest_dropped = std::max(highest_dropped, n);
  }
  EXPECT_GE(lowest_kept, highest_dropped);
  const auto ex2 = patchforge::corpus::generate(40, 54);
  const auto excl = joined(stats.trivially_shared);
  for (const auto& e : ex2) {
    const double v = mt::crystalbleu(e.buggy, e.fixed, stats);
    EXPECT_NEAR(v, bleu_oracle(toks(e.buggy), toks(e.fixed), excl), 1e-9);
    EXPECT_DOUBLE_EQ(mt::crystalbleu(e.fixed, e.fixed, stats), 1.0);
  }
}

TEST(CrystalBleu, OnlyTrivialOverlapScoresAtFloor) {
  const auto ex = patchforge::corpus::generate(100, 55);
  std::vector<std::string> train;
  for (const auto& e : ex) train.push_back(e.fixed);
  const auto stats = mt::NgramStats::build(train, 50);
  // interleave every trivially-shared unigram with a token no program contains
  std::string cand;
  for (const auto& g : stats.trivially_shared)
    if (g.size() == 1) cand += g[0] + " qq ";
  const std::string& ref = ex[0].fixed;
  const auto c = toks(cand), r = toks(ref);
  const double v = mt::crystalbleu(cand, ref, stats);
  EXPECT_NEAR(v, bleu_oracle(c, r, joined(stats.trivially_shared)), 1e-12);
  std::vector<std::size_t> surviving(5, 0);
  for (std::size_t n = 1; n <= 4; ++n) surviving[n] = mt::ngram_counts(c, n, stats.trivially_shared).size();
  ASSERT_GT(surviving[1], 0u);
  double floor = 1.0;
  for (std::size_t n = 1; n <= 4; ++n)
    if (surviving[n] > 0) {
      std::size_t total = 0;
      for (const auto& [g, k] : mt::ngram_counts(c, n, stats.trivially_shared)) total += k;
      floor *= 1.0 / static_cast<double>(total + 1);
    }
  EXPECT_LE(v, std::pow(floor, 0.25) + 1e-15);
}

TEST(WeightedBleu, KeywordsCountMore) {
  const auto r = toks("fn f(x){return x;}");
  const mt::Tokens no_kw{"fn", "f", "(", "x", ")", "{", "x", ";", "}"};
  const mt::Tokens no_id{"fn", "f", "(", "x", ")", "{", "return", ";", "}"};
  EXPECT_LT(mt::weighted_unigram_match({"zz", "return"}, r, 4.0), 1.0);
  const mt::Tokens extra_kw{"fn", "f", "(", "x", ")", "{", "return", "while", "x", ";", "}"};
  const mt::Tokens extra_id{"fn", "f", "(", "x", ")", "{", "return", "y", "x", ";", "}"};
  EXPECT_LT(mt::weighted_unigram_match(extra_kw, r, 4.0), mt::weighted_unigram_match(extra_id, r, 4.0));
  // hand value: weights fn=4 return=4 while=4, 8 other units
  EXPECT_NEAR(mt::weighted_unigram_match(extra_kw, r, 4.0), 16.0 / 20.0, 1e-12);
  EXPECT_NEAR(mt::weighted_unigram_match(no_kw, r, 4.0), std::exp(1.0 - 10.0 / 9.0), 1e-12);
  EXPECT_NEAR(mt::weighted_unigram_match(no_id, r, 4.0), std::exp(1.0 - 10.0 / 9.0), 1e-12);
}

TEST(CodeBleu, DataflowHandExample) {
  const std::string ref = "fn f(a){let x = a; print(x); return x;}";
  const std::string cand = "fn f(a){let x = a; let y = x; return y;}";
  const auto parts = mt::codebleu_parts(cand, ref);
  EXPECT_NEAR(parts.dataflow, 0.2, 1e-12);
  EXPECT_NEAR(parts.dataflow, dataflow_oracle(cand, ref), 1e-12);
}

TEST(CodeBleu, DataflowMatchesOracleOnCorpus) {
  const auto ex = patchforge::corpus::generate(300, 56);
  for (std::size_t i = 0; i + 1 < ex.size(); ++i) {
    EXPECT_NEAR(mt::codebleu_parts(ex[i].buggy, ex[i].fixed).dataflow, dataflow_oracle(ex[i].buggy, ex[i].fixed), 1e-12);
    EXPECT_NEAR(mt::codebleu_parts(ex[i].fixed, ex[i + 1].fixed).dataflow,
                dataflow_oracle(ex[i].fixed, ex[i + 1].fixed), 1e-12);
  }
}

TEST(CodeBleu, IdentityAndRenamingInvariantStructure) {
  const std::string ref = "fn f(a){let x = a; if (x < 3) {return x;} return 0;}";
  EXPECT_DOUBLE_EQ(mt::codebleu(ref, ref), 1.0);
  const auto p = mt::codebleu_parts("fn g(b){let y = b; if (y < 3) {return y;} return 0;}", ref);
  EXPECT_DOUBLE_EQ(p.ast, 1.0);
  EXPECT_DOUBLE_EQ(p.dataflow, 1.0);
  EXPECT_LT(p.bleu, 1.0);
}

TEST(CodeBleu, UnparseableCandidateKeepsOnlyTokenTerms) {
  const std::string ref = "fn f(a){let x = a; return x;}";
  const auto p = mt::codebleu_parts("fn f(a){let x = a; return x;", ref);
  EXPECT_EQ(p.ast, 0.0);
  EXPECT_EQ(p.dataflow, 0.0);
  EXPECT_LE(p.score, 0.5);
  EXPECT_GT(p.score, 0.0);
}

TEST(CodeBleu, BleuOnlyWeightsReduceToBleu) {
  const auto ex = patchforge::corpus::generate(50, 57);
  mt::CodeBleuConfig cfg;
  cfg.w_weighted = cfg.w_ast = cfg.w_dataflow = 0.0;
  for (const auto& e : ex) EXPECT_DOUBLE_EQ(mt::codebleu(e.buggy, e.fixed, cfg), mt::bleu4(toks(e.buggy), toks(e.fixed)));
}

TEST(MetricsProperties, BoundsAndExactImpliesFull) {
  const auto ex = patchforge::corpus::generate(200, 58);
  std::vector<std::string> train;
  for (const auto& e : ex) train.push_back(e.fixed);
  const auto stats = mt::NgramStats::build(train, 50);
  for (std::size_t i = 0; i + 1 < ex.size(); ++i) {
    for (const auto* c : {&ex[i].buggy, &ex[i + 1].fixed, &ex[i].fixed}) {
      const auto p = mt::codebleu_parts(*c, ex[i].fixed);
      for (double v : {p.bleu, p.weighted, p.ast, p.dataflow, p.score}) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0 + 1e-12);
      }
      const double cb = mt::crystalbleu(*c, ex[i].fixed, stats);
      EXPECT_GE(cb, 0.0);
      EXPECT_LE(cb, 1.0 + 1e-12);
      if (mt::exact_match(*c, ex[i].fixed)) {
        EXPECT_DOUBLE_EQ(p.score, 1.0);
      }
    }
  }
}

TEST(Aggregate, CategoryCountsSumToTotal) {
  std::vector<mt::ScoredSample> s{{"a", true, 1.0, 1.0}, {"a", false, 0.5, 0.25}, {"b", false, 0.0, 0.5}};
  const auto r = mt::aggregate(s);
  EXPECT_EQ(r.overall.count, 3u);
  std::size_t sum = 0;
  for (const auto& [c, t] : r.by_category) sum += t.count;
  EXPECT_EQ(sum, 3u);
  EXPECT_NEAR(r.overall.exact_match, 1.0 / 3, 1e-15);
  EXPECT_NEAR(r.by_category.at("a").codebleu, 0.75, 1e-15);
  EXPECT_NEAR(r.by_category.at("b").crystalbleu, 0.5, 1e-15);
  EXPECT_EQ(mt::aggregate({}).overall.count, 0u);
}
