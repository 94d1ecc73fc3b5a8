#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "patchforge/cfg.hpp"
#include "patchforge/minilang/parser.hpp"
#include "patchforge/minilang/printer.hpp"
#include "patchforge/rulecheck.hpp"

namespace patchforge::reward {

class RewardError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CfgSubscores {
  double node_sim = 0;
  double edge_sim = 0;
  double path_sim = 0;
  double struct_sim = 0;

  double mean() const { return (node_sim + edge_sim + path_sim + struct_sim) / 4.0; }
};

/// Weights of the four control-flow similarities inside r_cfg.
struct CfgPartWeights {
  double node = 0.25;
  double edge = 0.25;
  double path = 0.25;
  double structure = 0.25;

  CfgPartWeights normalized() const {
    if (node < 0 || edge < 0 || path < 0 || structure < 0)
      throw RewardError("control-flow part weights must be non-negative");
    const double sum = node + edge + path + structure;
    if (!(sum > 0)) throw RewardError("at least one control-flow part weight must be positive");
    return {node / sum, edge / sum, path / sum, structure / sum};
  }

  double combine(const CfgSubscores& s) const {
    return node * s.node_sim + edge * s.edge_sim + path * s.path_sim + structure * s.struct_sim;
  }
};

/// Weights of the syntax, control-flow and rule components. They are
/// renormalized to sum to 1 before use.
struct RewardWeights {
  double lambda_ast = 1.0 / 3.0;
  double lambda_cfg = 1.0 / 3.0;
  double lambda_rules = 1.0 / 3.0;
  CfgPartWeights cfg_parts;

  RewardWeights normalized() const {
    if (lambda_ast < 0 || lambda_cfg < 0 || lambda_rules < 0)
      throw RewardError("reward weights must be non-negative");
    const double sum = lambda_ast + lambda_cfg + lambda_rules;
    if (!(sum > 0)) throw RewardError("at least one reward weight must be positive");
    return {lambda_ast / sum, lambda_cfg / sum, lambda_rules / sum, cfg_parts.normalized()};
  }
};

struct RewardBreakdown {
  double r_ast = 0;
  double r_cfg = 0;
  double r_rules = 0;
  double composite = 0;
  CfgSubscores cfg_subscores;
  RewardWeights weights;  // as applied (normalized)
};

inline constexpr std::size_t kDefaultPathLength = 6;

/// 1 when the candidate parses; on a parse error 0.5 * consumed / total
/// tokens; 0 when it does not even lex.
inline double r_ast(const minilang::ParseOutcome& outcome) {
  if (outcome.lex_error) return 0.0;
  if (outcome.ok()) return 1.0;
  if (outcome.token_count == 0) return 0.0;
  return 0.5 * static_cast<double>(outcome.parse_error->consumed()) /
         static_cast<double>(outcome.token_count);
}

inline double r_ast(std::string_view candidate_source) {
  return r_ast(minilang::try_parse(candidate_source));
}

/// Multiset Jaccard: sum of minimum counts over sum of maximum counts; two
/// empty collections score 1.
template <typename Key>
double multiset_jaccard(const std::map<Key, std::size_t>& a, const std::map<Key, std::size_t>& b) {
  std::size_t lo = 0, hi = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() || ib != b.end()) {
    if (ib == b.end() || (ia != a.end() && ia->first < ib->first)) {
      hi += ia->second;
      ++ia;
    } else if (ia == a.end() || ib->first < ia->first) {
      hi += ib->second;
      ++ib;
    } else {
      lo += std::min(ia->second, ib->second);
      hi += std::max(ia->second, ib->second);
      ++ia;
      ++ib;
    }
  }
  return hi == 0 ? 1.0 : static_cast<double>(lo) / static_cast<double>(hi);
}

/// Sum over keys of |count_a - count_b|.
template <typename Key>
std::size_t multiset_symmetric_difference(const std::map<Key, std::size_t>& a,
                                          const std::map<Key, std::size_t>& b) {
  std::size_t d = 0;
  for (const auto& [k, n] : a) {
    auto it = b.find(k);
    const std::size_t m = it == b.end() ? 0 : it->second;
    d += n > m ? n - m : m - n;
  }
  for (const auto& [k, m] : b)
    if (!a.count(k)) d += m;
  return d;
}

template <typename Key>
double set_jaccard(const std::set<Key>& a, const std::set<Key>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& k : a) inter += b.count(k);
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

using EdgeTriple = std::tuple<cfg::NodeType, cfg::NodeType, cfg::EdgeKind>;

inline std::map<cfg::NodeType, std::size_t> node_multiset(const cfg::Cfg& g) {
  std::map<cfg::NodeType, std::size_t> m;
  for (const auto& n : g.nodes) ++m[n.type];
  return m;
}

inline std::map<EdgeTriple, std::size_t> edge_multiset(const cfg::Cfg& g) {
  std::map<EdgeTriple, std::size_t> m;
  for (const auto& e : g.edges) ++m[{g.nodes[e.src].type, g.nodes[e.dst].type, e.kind}];
  return m;
}

/// Four structural similarities between two CFGs.
inline CfgSubscores cfg_similarity(const cfg::Cfg& a, const cfg::Cfg& b,
                                   std::size_t max_len = kDefaultPathLength) {
  CfgSubscores s;
  const auto na = node_multiset(a), nb = node_multiset(b);
  const auto ea = edge_multiset(a), eb = edge_multiset(b);
  s.node_sim = multiset_jaccard(na, nb);
  s.edge_sim = multiset_jaccard(ea, eb);
  s.path_sim = set_jaccard(cfg::enumerate_type_paths(a, max_len), cfg::enumerate_type_paths(b, max_len));
  const double total = static_cast<double>(a.nodes.size() + b.nodes.size() + a.edges.size() + b.edges.size());
  const double diff = static_cast<double>(multiset_symmetric_difference(na, nb) +
                                          multiset_symmetric_difference(ea, eb));
  s.struct_sim = total == 0 ? 1.0 : 1.0 - diff / total;
  return s;
}

/// Control-flow similarity of the first function of each program: a weighted
/// mean of the four parts, the plain mean by default. Throws RewardError when
/// either program has no function.
inline std::pair<double, CfgSubscores> r_cfg(const minilang::Program& candidate,
                                             const minilang::Program& target,
                                             std::size_t max_len = kDefaultPathLength,
                                             const CfgPartWeights& parts = {}) {
  if (candidate.functions.empty()) throw RewardError("candidate has no functions");
  if (target.functions.empty()) throw RewardError("target has no functions");
  const auto sub = cfg_similarity(cfg::build_cfg(candidate.functions.front()),
                                  cfg::build_cfg(target.functions.front()), max_len);
  return {parts.normalized().combine(sub), sub};
}

inline double r_rules(std::string_view candidate_source, const std::vector<rulecheck::Rule>& rules) {
  return rulecheck::check_source(candidate_source, rules).raw / 100.0;
}

/// Normalized weights and rules, shared by every candidate of a run.
class RewardModel {
 public:
  RewardModel(RewardWeights weights, std::vector<rulecheck::Rule> rules,
              std::size_t max_len = kDefaultPathLength)
      : weights_(weights.normalized()), rules_(std::move(rules)), max_len_(max_len) {}

  const RewardWeights& weights() const { return weights_; }
  const std::vector<rulecheck::Rule>& rules() const { return rules_; }
  std::size_t max_len() const { return max_len_; }

  RewardBreakdown score(std::string_view candidate_source, const minilang::Program& target) const {
    RewardBreakdown b;
    b.weights = weights_;
    auto outcome = minilang::try_parse(candidate_source);
    b.r_ast = r_ast(outcome);
    if (outcome.ok()) {
      if (!outcome.program->functions.empty()) {
        auto [value, sub] = r_cfg(*outcome.program, target, max_len_, weights_.cfg_parts);
        b.r_cfg = value;
        b.cfg_subscores = sub;
      }
      b.r_rules = rulecheck::check(*outcome.program, rules_).raw / 100.0;
    }
    b.composite = weights_.lambda_ast * b.r_ast + weights_.lambda_cfg * b.r_cfg +
                  weights_.lambda_rules * b.r_rules;
    return b;
  }

 private:
  RewardWeights weights_;
  std::vector<rulecheck::Rule> rules_;
  std::size_t max_len_;
};

/// r = l_ast * r_ast + l_cfg * r_cfg + l_rules * r_rules with renormalized
/// weights. An unparseable candidate gets r_cfg = 0 and r_rules = 0.
inline RewardBreakdown composite_reward(std::string_view candidate_source,
                                        const minilang::Program& target, RewardWeights weights,
                                        const std::vector<rulecheck::Rule>& rules,
                                        std::size_t max_len = kDefaultPathLength) {
  return RewardModel(weights, rules, max_len).score(candidate_source, target);
}

}  // namespace patchforge::reward
