#include <gtest/gtest.h>

#include <deque>
#include <set>

#include "patchforge/cfg.hpp"
#include "patchforge/corpus.hpp"
#include "support.hpp"

namespace cfg = patchforge::cfg;
namespace ml = patchforge::minilang;
using cfg::EdgeKind;
using cfg::NodeType;

namespace {

cfg::Cfg build(const std::string& src) { return cfg::build_cfg(ml::parse_source(src).functions.at(0)); }

std::size_t count_kind(const cfg::Cfg& g, EdgeKind k) {
  std::size_t n = 0;
  for (const auto& e : g.edges) n += e.kind == k;
  return n;
}

// Breadth-first expansion of explicit path lists over the raw edge list.
std::set<cfg::TypePath> paths_oracle(const cfg::Cfg& g, std::size_t max_len) {
  std::set<cfg::TypePath> out;
  std::deque<std::vector<std::size_t>> queue{{g.entry}};
  while (!queue.empty()) {
    auto path = queue.front();
    queue.pop_front();
    cfg::TypePath types;
    for (auto id : path) types.push_back(g.nodes[id].type);
    out.insert(types);
    if (path.size() == max_len) continue;
    std::set<std::size_t> next;
    for (const auto& e : g.edges)
      if (e.src == path.back()) next.insert(e.dst);
    for (auto v : next) {
      if (std::find(path.begin(), path.end(), v) != path.end()) continue;
      auto longer = path;
      longer.push_back(v);
      queue.push_back(std::move(longer));
    }
  }
  return out;
}

std::size_t longest_oracle(const cfg::Cfg& g) {
  std::size_t best = 0;
  for (const auto& p : paths_oracle(g, g.nodes.size())) best = std::max(best, p.size());
  return best;
}

// Node count predicted by walking statements: one node per maximal straight
// run, one per decision, an extra node for an empty loop body.
std::size_t blocks(const std::vector<ml::Stmt>& body) {
  std::size_t n = 0;
  bool in_run = false;
  for (const auto& s : body) {
    if (s.kind == ml::StmtKind::if_else) {
      n += 1 + blocks(s.body) + blocks(s.orelse);
      in_run = false;
    } else if (s.kind == ml::StmtKind::while_loop) {
      n += 1 + std::max<std::size_t>(blocks(s.body), 1);
      in_run = false;
    } else if (!in_run) {
      ++n;
      in_run = true;
    }
  }
  return n;
}

std::size_t decisions(const std::vector<ml::Stmt>& body) {
  std::size_t n = 0;
  ml::for_each_stmt(body, [&](const ml::Stmt& s) {
    n += s.kind == ml::StmtKind::if_else || s.kind == ml::StmtKind::while_loop;
  });
  return n;
}

}  // namespace

TEST(BuildCfg, SingleReturn) {
  auto g = build("fn f(){return 1;}");
  ASSERT_EQ(g.nodes.size(), 3u);
  EXPECT_EQ(g.nodes[g.entry].type, NodeType::entry);
  EXPECT_EQ(g.nodes[g.exit].type, NodeType::exit);
  ASSERT_EQ(g.edges.size(), 2u);
  const auto ret = g.edges[0].dst;
  EXPECT_EQ(g.nodes[ret].type, NodeType::ret);
  EXPECT_EQ(g.edges[0], (cfg::Edge{g.entry, ret, EdgeKind::seq}));
  EXPECT_EQ(g.edges[1], (cfg::Edge{ret, g.exit, EdgeKind::seq}));
  EXPECT_EQ(cfg::validate(g), "");
}

TEST(BuildCfg, IfElseThenReturn) {
  auto g = build("fn f(a){if(a<1){let x = 1;}else{let x = 2;} return x;}");
  EXPECT_EQ(g.nodes.size(), 6u);
  EXPECT_EQ(g.edges.size(), 6u);
  EXPECT_EQ(count_kind(g, EdgeKind::on_true), 1u);
  EXPECT_EQ(count_kind(g, EdgeKind::on_false), 1u);
  std::multiset<NodeType> types;
  for (const auto& n : g.nodes) types.insert(n.type);
  EXPECT_EQ(types, (std::multiset<NodeType>{NodeType::entry, NodeType::branch, NodeType::assign, NodeType::assign,
                                            NodeType::ret, NodeType::exit}));
  EXPECT_EQ(g.nodes.size(), 2 + blocks(ml::parse_source("fn f(a){if(a<1){let x = 1;}else{let x = 2;} return x;}")
                                           .functions[0]
                                           .body));
  const auto m = cfg::cfg_metrics(g);
  EXPECT_EQ(m.cyclomatic, 2);
  EXPECT_EQ(m.max_path_depth, 5u);
  EXPECT_EQ(m.max_path_depth, longest_oracle(g));
}

TEST(BuildCfg, WhileHasOneBackEdge) {
  auto g = build("fn f(a){while(a<10){a = a + 1;} return a;}");
  EXPECT_EQ(count_kind(g, EdgeKind::back), 1u);
  EXPECT_EQ(cfg::validate(g), "");
  auto empty = build("fn f(a){while(a<10){} return a;}");
  EXPECT_EQ(count_kind(empty, EdgeKind::back), 1u);
  EXPECT_EQ(cfg::validate(empty), "");
}

TEST(BuildCfg, DominantTypePrecedence) {
  auto g = build("fn f(a){let x = 1; return eval(x);}");
  ASSERT_EQ(g.nodes.size(), 3u);
  EXPECT_EQ(g.nodes[g.edges[0].dst].type, NodeType::call);
  EXPECT_EQ(g.nodes[g.edges[0].dst].statement_count, 2u);
  auto r = build("fn f(a){let x = 1; return x;}");
  EXPECT_EQ(r.nodes[r.edges[0].dst].type, NodeType::ret);
  auto a = build("fn f(a){let x = 1; x = 2;}");
  EXPECT_EQ(a.nodes[a.edges[0].dst].type, NodeType::assign);
}

TEST(BuildCfg, CodeAfterReturnIsPruned) {
  auto g = build("fn f(a){if(a<1){return 1; let y = 2; print(y);} return 0;}");
  EXPECT_EQ(cfg::validate(g), "");
  EXPECT_EQ(g.pruned_nodes, 1u);  // let/print after the return open a block with no predecessor
  auto h = build("fn f(a){return 1; while(a<1){a = 1;} return 2;}");
  EXPECT_EQ(cfg::validate(h), "");
  EXPECT_GT(h.pruned_nodes, 0u);
}

TEST(CfgMetrics, StraightLine) {
  auto m = cfg::cfg_metrics(build("fn f(){return 1;}"));
  EXPECT_EQ(m.node_count, 3u);
  EXPECT_EQ(m.edge_count, 2u);
  EXPECT_EQ(m.cyclomatic, 1);
  EXPECT_EQ(m.max_path_depth, 3u);
}

TEST(CfgMetrics, IndependentBranchAddsOne) {
  auto one = cfg::cfg_metrics(build("fn f(a){if(a<1){print(a);} return a;}"));
  auto two = cfg::cfg_metrics(build("fn f(a){if(a<1){print(a);} if(a<2){print(a);} return a;}"));
  EXPECT_EQ(two.cyclomatic, one.cyclomatic + 1);
}

TEST(TypePaths, StraightLine) {
  auto g = build("fn f(){return 1;}");
  EXPECT_EQ(cfg::enumerate_type_paths(g, 3),
            (std::set<cfg::TypePath>{{NodeType::entry},
                                     {NodeType::entry, NodeType::ret},
                                     {NodeType::entry, NodeType::ret, NodeType::exit}}));
  EXPECT_EQ(cfg::enumerate_type_paths(g, 1), (std::set<cfg::TypePath>{{NodeType::entry}}));
}

TEST(TypePaths, IfElseSharedTypesCollapse) {
  auto g = build("fn f(a){if(a<1){let x = 1;}else{let x = 2;} return x;}");
  auto paths = cfg::enumerate_type_paths(g, 6);
  std::size_t maximal = 0;
  for (const auto& p : paths) maximal += p.size() == 5;
  EXPECT_EQ(maximal, 1u);  // both arms are ASSIGN so the two 5-node paths coincide
  EXPECT_EQ(paths, paths_oracle(g, 6));
  auto mixed = build("fn f(a){if(a<1){let x = 1;}else{print(a);} return x;}");
  std::size_t mixed_max = 0;
  for (const auto& p : cfg::enumerate_type_paths(mixed, 6)) mixed_max += p.size() == 5;
  EXPECT_EQ(mixed_max, 2u);
}

TEST(CfgProperties, RandomProgramsAgreeWithOracles) {
  testsupport::RandomFn gen(21);
  for (int i = 0; i < 200; ++i) {
    const auto fn = gen.next();
    const auto g = cfg::build_cfg(fn);
    ASSERT_EQ(cfg::validate(g), "") << ml::print_canonical(fn);
    const auto m = cfg::cfg_metrics(g);
    EXPECT_GE(m.cyclomatic, 1);
    EXPECT_GE(m.max_path_depth, 2u);
    if (g.nodes.size() <= 12) {
      for (std::size_t len : {1u, 3u, 6u, 12u}) EXPECT_EQ(cfg::enumerate_type_paths(g, len), paths_oracle(g, len));
      EXPECT_EQ(m.max_path_depth, longest_oracle(g));
    }
  }
}

TEST(CfgProperties, WithoutEarlyReturnsCountsFollowStatements) {
  testsupport::RandomFn gen(22, {.max_statements = 20, .max_depth = 3, .early_returns = false});
  for (int i = 0; i < 200; ++i) {
    const auto fn = gen.next();
    const auto g = cfg::build_cfg(fn);
    EXPECT_EQ(g.pruned_nodes, 0u);
    EXPECT_EQ(g.nodes.size(), 2 + blocks(fn.body)) << ml::print_canonical(fn);
    EXPECT_EQ(cfg::cfg_metrics(g).cyclomatic, static_cast<long long>(1 + decisions(fn.body)));
  }
}

TEST(CfgProperties, GeneratedCorpusIsValid) {
  for (const auto& e : patchforge::corpus::generate(300, 5)) {
    for (const auto* src : {&e.buggy, &e.fixed})
      for (const auto& fn : ml::parse_source(*src).functions) EXPECT_EQ(cfg::validate(cfg::build_cfg(fn)), "");
  }
}

TEST(CfgDot, MentionsEveryNode) {
  auto g = build("fn f(a){if(a<1){print(a);} return a;}");
  const auto dot = cfg::to_dot(g, "f");
  EXPECT_NE(dot.find("digraph \"f\""), std::string::npos);
  for (const auto& n : g.nodes) EXPECT_NE(dot.find("n" + std::to_string(n.id) + " ["), std::string::npos);
}
