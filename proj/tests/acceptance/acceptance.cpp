// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <malloc.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "patchforge/config.hpp"
#include "patchforge/run.hpp"
#include "support.hpp"

namespace pf = patchforge;
namespace nn = pf::nn;
namespace ml = pf::minilang;
using nn::Graph;
using nn::Tensor2;
using nn::Var;
using testsupport::random_tensor;

namespace {

// Tolerances and budgets.
constexpr double kFdStep = 1e-5;
constexpr double kFdMaxRel = 1e-6;
constexpr double kFdBudgetSeconds = 120.0;
constexpr double kPpoTol = 1e-12;
constexpr double kBleuTol = 1e-9;
constexpr double kSftLossRatio = 0.60;
constexpr double kSftBudgetSeconds = 600.0;
constexpr double kRouterTarget = 0.9;
constexpr std::size_t kRouterUpdates = 200;
constexpr double kEmSlackPct = 2.0;
constexpr double kRftShareLow = 0.10;
constexpr double kRftShareHigh = 0.90;
constexpr double kDirectionalBudgetSeconds = 45.0 * 60.0;
constexpr int kSeeds = 5;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// 1. Finite-difference gradient checks

struct FdCase {
  std::string name;
  std::function<testsupport::GradCheck()> run;
};

// Scalar head: fixed random projection and squared error.
Var project(Graph& g, Var y, const Tensor2& w, const std::vector<double>& target) {
  return g.mse(g.matmul(y, g.input(w)), target);
}

std::vector<FdCase> fd_cases() {
  std::vector<FdCase> cases;
  auto primitive = [&](std::string name, std::function<Var(Graph&, nn::ParamSet&, nn::Rng&, int)> build) {
    cases.push_back({std::move(name), [build] {
                       nn::Rng rng(2024);
                       nn::ParamSet ps;
                       // first call registers parameters, later calls reuse them
                       Graph setup;
                       build(setup, ps, rng, 0);
                       return testsupport::check_gradients(
                           ps, [&](Graph& g) { return build(g, ps, rng, 1); }, kFdStep);
                     }});
  };
  // Each builder adds its parameters on pass 0 and records the loss on pass 1.
  struct Fixed {
    Tensor2 w;
    std::vector<double> t;
  };
  auto fixed = [](nn::Rng& rng, std::size_t rows, std::size_t cols) {
    Fixed f{random_tensor(cols, 1, rng), std::vector<double>(rows)};
    for (double& x : f.t) x = rng.uniform();
    return f;
  };
  auto get = [](nn::ParamSet& ps, const std::string& n, std::size_t r, std::size_t c, nn::Rng& rng, double scale,
                int pass) -> nn::Parameter& {
    if (pass == 0) return ps.add(n, random_tensor(r, c, rng, scale));
    return ps.get(n);
  };

  primitive("matmul+add+add_row+scale", [=](Graph& g, nn::ParamSet& ps, nn::Rng& rng, int pass) {
    auto& a = get(ps, "a", 4, 4, rng, 1, pass);
    auto& b = get(ps, "b", 4, 4, rng, 1, pass);
    auto& c = get(ps, "c", 4, 4, rng, 1, pass);
    auto& bias = get(ps, "bias", 1, 4, rng, 1, pass);
    static Fixed f;
    if (pass == 0) f = fixed(rng, 4, 4);
    Var y = g.add(g.matmul(g.param(a), g.param(b)), g.scale(g.param(c), -1.7));
    return project(g, g.add_row(y, g.param(bias)), f.w, f.t);
  });
  primitive("relu", [=](Graph& g, nn::ParamSet& ps, nn::Rng& rng, int pass) {
    auto& x = get(ps, "x", 4, 4, rng, 1, pass);
    static Fixed f;
    if (pass == 0) f = fixed(rng, 4, 4);
    return project(g, g.relu(g.param(x)), f.w, f.t);
  });
  primitive("sigmoid", [=](Graph& g, nn::ParamSet& ps, nn::Rng& rng, int pass) {
    auto& x = get(ps, "x", 4, 4, rng, 3, pass);
    static Fixed f;
    if (pass == 0) f = fixed(rng, 4, 4);
    return project(g, g.sigmoid(g.param(x)), f.w, f.t);
  });
  primitive("layer_norm", [=](Graph& g, nn::ParamSet& ps, nn::Rng& rng, int pass) {
    auto& x = get(ps, "x", 4, 4, rng, 2, pass);
    auto& gain = get(ps, "gain", 1, 4, rng, 1, pass);
    auto& shift = get(ps, "shift", 1, 4, rng, 1, pass);
    static Fixed f;
    if (pass == 0) f = fixed(rng, 4, 4);
    return project(g, g.layer_norm(g.param(x), g.param(gain), g.param(shift)), f.w, f.t);
  });
  primitive("embedding", [=](Graph& g, nn::ParamSet& ps, nn::Rng& rng, int pass) {
    auto& table = get(ps, "table", 6, 4, rng, 1, pass);
    static Fixed f;
    if (pass == 0) f = fixed(rng, 4, 4);
    return project(g, g.embedding(g.param(table), std::vector<int>{2, 0, 2, 5}), f.w, f.t);
  });
  primitive("causal_attention", [=](Graph& g, nn::ParamSet& ps, nn::Rng& rng, int pass) {
    auto& q = get(ps, "q", 4, 4, rng, 1, pass);
    auto& k = get(ps, "k", 4, 4, rng, 1, pass);
    auto& v = get(ps, "v", 4, 4, rng, 1, pass);
    static Fixed f;
    if (pass == 0) f = fixed(rng, 4, 4);
    return project(g, g.causal_attention(g.param(q), g.param(k), g.param(v), 2), f.w, f.t);
  });
  primitive("softmax_cross_entropy", [=](Graph& g, nn::ParamSet& ps, nn::Rng& rng, int pass) {
    auto& x = get(ps, "x", 4, 4, rng, 2, pass);
    return g.softmax_cross_entropy(g.param(x), std::vector<int>{3, -1, 0, 2}, 0.7);
  });
  primitive("sigmoid_cross_entropy", [=](Graph& g, nn::ParamSet& ps, nn::Rng& rng, int pass) {
    auto& x = get(ps, "x", 4, 1, rng, 3, pass);
    return g.sigmoid_cross_entropy(g.param(x), std::vector<int>{1, 0, 0, 1}, 1.3);
  });
  primitive("log_softmax_gather", [=](Graph& g, nn::ParamSet& ps, nn::Rng& rng, int pass) {
    auto& x = get(ps, "x", 4, 4, rng, 2, pass);
    static Fixed f;
    if (pass == 0) f = fixed(rng, 4, 1);
    return project(g, g.log_softmax_gather(g.param(x), std::vector<int>{1, 1, -1, 3}), f.w, f.t);
  });
  primitive("mean_rows+slice_rows+sum", [=](Graph& g, nn::ParamSet& ps, nn::Rng& rng, int pass) {
    auto& x = get(ps, "x", 4, 4, rng, 1, pass);
    static Fixed f1, f2;
    if (pass == 0) {
      f1 = fixed(rng, 1, 4);
      f2 = fixed(rng, 2, 4);
    }
    Var xv = g.param(x);
    std::vector<Var> parts{project(g, g.mean_rows(xv, std::vector<char>{1, 0, 1, 1}), f1.w, f1.t),
                           project(g, g.slice_rows(xv, 1, 3), f2.w, f2.t)};
    return g.sum(parts);
  });
  primitive("ppo_clip_objective", [=](Graph& g, nn::ParamSet& ps, nn::Rng&, int pass) {
    if (pass == 0) ps.add("logp", Tensor2(4, 1, std::vector<double>{-1.5, -1.05, -0.95, -0.5}));
    static const std::vector<double> old(4, -1.0), adv{1.0, -2.0, 0.5, 1.5};
    return g.ppo_clip_objective(g.param(ps.get("logp")), old, adv, 0.2, 0.5);
  });

  cases.push_back({"agent (tiny transformer)", [] {
                     pf::agent::AgentConfig c;
                     c.vocab_size = 12;
                     c.d_model = 8;
                     c.layers = 1;
                     c.heads = 2;
                     c.d_ff = 16;
                     c.max_seq = 8;
                     c.embed_init_std = 0.5;
                     nn::Rng rng(5);
                     pf::agent::RepairAgent agent(c, rng);
                     if (agent.params().scalar_count() > 1000) return testsupport::GradCheck{1e9, "too many parameters", 0};
                     pf::agent::EncodedPair p1, p2;
                     p1.prompt = {ml::TokenVocab::kBos, 7, 9, ml::TokenVocab::kSep};
                     p1.target = {5, 11, 6, ml::TokenVocab::kEos};
                     p2.prompt = {ml::TokenVocab::kBos, 10, ml::TokenVocab::kSep};
                     p2.target = {8, ml::TokenVocab::kEos};
                     return testsupport::check_gradients(
                         agent.params(),
                         std::function<double(bool)>([&](bool acc) { return agent.sft_loss({&p1, &p2}, acc); }), kFdStep);
                   }});
  cases.push_back({"critic", [] {
                     nn::Rng rng(6);
                     pf::agent::Critic critic({6, 8}, rng);
                     const Tensor2 x = random_tensor(5, 6, rng);
                     const std::vector<double> y{0.1, 0.9, 0.4, 0.0, 1.0};
                     return testsupport::check_gradients(
                         critic.params(), [&](Graph& g) { return g.mse(critic.forward(g, g.input(x)), y); }, kFdStep);
                   }});
  cases.push_back({"router", [] {
                     nn::Rng rng(11);
                     pf::router::RouterNet net(6, rng);
                     net.params().get("out.w").value = random_tensor(6, 1, rng);
                     const Tensor2 x = random_tensor(3, pf::router::kFeatureDim, rng, 2.0);
                     return testsupport::check_gradients(
                         net.params(),
                         [&](Graph& g) { return g.sigmoid_cross_entropy(net.logits(g, g.input(x)), std::vector<int>{1, 0, 1}, 0.4); },
                         kFdStep);
                   }});
  return cases;
}

Outcome gradient_exactness() {
  const auto start = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  std::size_t scalars = 0;
  for (const auto& c : fd_cases()) {
    const auto r = c.run();
    scalars += r.checked;
    std::printf("  fd %-26s checked %4zu  max rel %.2e\n", c.name.c_str(), r.checked, r.max_rel);
    if (r.checked == 0 || r.max_rel > worst || !std::isfinite(r.max_rel)) {
      worst = r.checked == 0 ? 1e9 : r.max_rel;
      worst_name = c.name + " " + r.worst;
    }
  }
  const double t = seconds_since(start);
  return {worst < kFdMaxRel && t < kFdBudgetSeconds,
          fmt("max rel error %.2e at %s over %zu scalars (< %.0e), %.1fs (< %.0fs)", worst, worst_name.c_str(), scalars,
              kFdMaxRel, t, kFdBudgetSeconds)};
}

// ---------------------------------------------------------------------------
// 2. PPO invariants

Outcome ppo_invariants() {
  pf::agent::AgentConfig c;
  c.d_model = 16;
  c.layers = 2;
  c.heads = 2;
  c.d_ff = 32;
  c.max_seq = 60;
  nn::Rng rng(11);
  pf::agent::RepairAgent agent(c, rng);
  pf::agent::Critic critic({16, 8}, rng);
  const auto prompt = pf::agent::encode_prompt("fn f(a){let x = eval(a); return x;}").prompt;

  std::vector<pf::agent::EpisodeRecord> eps;
  bool ratios_one = true;
  std::size_t tokens = 0;
  double weighted = 0.0;
  for (int i = 0; i < 6; ++i) {
    auto ep = agent.sample(prompt, rng);
    const auto again = agent.sequence_logprobs(prompt, ep.patch);
    for (std::size_t t = 0; t < again.size(); ++t) ratios_one = ratios_one && std::exp(again[t] - ep.old_logprobs[t]) == 1.0;
    ep.state = agent.pool_state(prompt);
    ep.reward = 0.2 * i;
    ep.value = critic.value(ep.state);
    ep.advantage = ep.reward - ep.value;
    weighted += ep.advantage * static_cast<double>(ep.patch.size());
    tokens += ep.patch.size();
    eps.push_back(std::move(ep));
  }
  nn::Optimizer aopt, copt;
  pf::agent::PpoConfig cfg;
  cfg.inner_epochs = 1;
  const auto st = pf::agent::ppo_update(eps, agent, aopt, critic, copt, cfg);
  const double mean_adv = weighted / static_cast<double>(tokens);
  const double at_old_err = std::abs(st.policy_loss - (-mean_adv));

  auto term = [](double ratio, double adv) {
    Graph g;
    return -g.scalar(g.ppo_clip_objective(g.input(Tensor2::scalar(std::log(ratio))), std::vector<double>{0.0},
                                          std::vector<double>{adv}, 0.2));
  };
  const double up = term(1.5, 1.0), down = term(0.5, -1.0);
  const bool pass = ratios_one && at_old_err <= kPpoTol && std::abs(up - 1.2) <= kPpoTol && std::abs(down + 0.8) <= kPpoTol;
  return {pass, fmt("ratios at old policy all exactly 1: %s over %zu tokens; loss + mean(adv) = %.1e; "
                    "clip terms %.15g (1.2), %.15g (-0.8); tol %.0e",
                    ratios_one ? "yes" : "no", tokens, at_old_err, up, down, kPpoTol)};
}

// ---------------------------------------------------------------------------
// 3. Reward soundness

Outcome reward_soundness() {
  const auto ex = pf::corpus::generate(1000, 7);
  const pf::reward::RewardModel model(pf::reward::RewardWeights{}, pf::rulecheck::default_rules());
  std::size_t identity_ok = 0, linked = 0, linked_ok = 0, in_range = 0, scored = 0;
  auto bounded = [](const pf::reward::RewardBreakdown& b) {
    for (double v : {b.r_ast, b.r_cfg, b.r_rules, b.composite})
      if (!(v >= 0.0 && v <= 1.0)) return false;
    return true;
  };
  for (const auto& e : ex) {
    const auto target = ml::parse_source(e.fixed);
    const auto self = model.score(ml::print_canonical(target), target);
    const auto fixed = model.score(e.fixed, target);
    const auto buggy = model.score(e.buggy, target);
    identity_ok += self.r_ast == 1.0 && self.r_cfg == 1.0;
    for (const auto* b : {&self, &fixed, &buggy}) {
      ++scored;
      in_range += bounded(*b);
    }
    if (!pf::corpus::linked_rule(e.category).empty()) {
      ++linked;
      linked_ok += buggy.r_rules < fixed.r_rules;
    }
  }
  return {identity_ok == ex.size() && linked_ok == linked && in_range == scored,
          fmt("canonical fixed scores r_ast = r_cfg = 1 on %zu/%zu; rule-linked buggy below fixed on %zu/%zu; "
              "%zu/%zu breakdowns in [0,1]",
              identity_ok, ex.size(), linked_ok, linked, in_range, scored)};
}

// ---------------------------------------------------------------------------
// 4. Oracle equivalence

// Depth-first enumeration of simple paths from ENTRY with at most max_len nodes.
void dfs_paths(const pf::cfg::Cfg& g, std::vector<std::size_t>& path, std::size_t max_len,
               std::set<pf::cfg::TypePath>& out) {
  pf::cfg::TypePath types;
  for (auto id : path) types.push_back(g.nodes[id].type);
  out.insert(types);
  if (path.size() == max_len) return;
  for (const auto& e : g.edges) {
    if (e.src != path.back() || std::find(path.begin(), path.end(), e.dst) != path.end()) continue;
    path.push_back(e.dst);
    dfs_paths(g, path, max_len, out);
    path.pop_back();
  }
}

// Sentence BLEU-4 over space-joined n-gram keys.
double reference_bleu(const std::vector<std::string>& c, const std::vector<std::string>& r) {
  if (c.empty()) return 0.0;
  auto grams = [](const std::vector<std::string>& t, std::size_t n) {
    std::unordered_map<std::string, int> m;
    for (std::size_t i = 0; i + n <= t.size(); ++i) {
      std::string key;
      for (std::size_t j = i; j < i + n; ++j) key += t[j] + "\x1f";
      m[key]++;
    }
    return m;
  };
  double product = 1.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    auto cm = grams(c, n), rm = grams(r, n);
    int total = 0, clipped = 0;
    for (auto& [k, v] : cm) {
      total += v;
      auto it = rm.find(k);
      clipped += std::min(v, it == rm.end() ? 0 : it->second);
    }
    if (total == 0) continue;
    product *= clipped == 0 ? 1.0 / (total + 1) : static_cast<double>(clipped) / total;
  }
  const double bp = c.size() > r.size() ? 1.0 : std::exp(1.0 - static_cast<double>(r.size()) / c.size());
  return bp * std::pow(product, 0.25);
}

Outcome oracle_equivalence() {
  testsupport::RandomFn gen(404, {.max_statements = 20, .max_depth = 3, .early_returns = true});
  std::size_t agree = 0, comparisons = 0, longest_agree = 0, longest_checked = 0;
  for (int i = 0; i < 100; ++i) {
    const auto g = pf::cfg::build_cfg(gen.next());
    for (std::size_t len = 1; len <= pf::reward::kDefaultPathLength; ++len) {
      std::set<pf::cfg::TypePath> oracle;
      std::vector<std::size_t> path{g.entry};
      dfs_paths(g, path, len, oracle);
      ++comparisons;
      agree += pf::cfg::enumerate_type_paths(g, len) == oracle;
    }
    if (g.nodes.size() <= 16) {
      std::set<pf::cfg::TypePath> all;
      std::vector<std::size_t> path{g.entry};
      dfs_paths(g, path, g.nodes.size(), all);
      std::size_t longest = 0;
      for (const auto& p : all) longest = std::max(longest, p.size());
      ++longest_checked;
      longest_agree += pf::cfg::cfg_metrics(g).max_path_depth == longest;
    }
  }

  const auto ex = pf::corpus::generate(100, 77);
  nn::Rng rng(78);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const auto& a = ex[rng.below(ex.size())];
    const auto& b = ex[rng.below(ex.size())];
    const auto c = pf::metrics::code_tokens(rng.bernoulli(0.5) ? a.buggy : a.fixed);
    const auto r = pf::metrics::code_tokens(i % 3 == 0 ? a.fixed : b.fixed);
    worst = std::max(worst, std::abs(pf::metrics::bleu4(c, r) - reference_bleu(c, r)));
  }
  return {agree == comparisons && longest_agree == longest_checked && worst <= kBleuTol,
          fmt("bounded type paths equal DFS oracle %zu/%zu (100 programs, lengths 1..%zu); longest path %zu/%zu; "
              "bleu4 max |diff| %.1e over 50 pairs (<= %.0e)",
              agree, comparisons, pf::reward::kDefaultPathLength, longest_agree, longest_checked, worst, kBleuTol)};
}

// ---------------------------------------------------------------------------
// 5. SFT learning signal

Outcome sft_learning_signal() {
  const auto start = Clock::now();
  pf::pipeline::TrainConfig tc;
  tc.mode = pf::pipeline::Mode::sft_only;
  tc.seed = 5;
  tc.validate_each_epoch = false;
  const auto data = pf::corpus::generate(500, 5);
  pf::agent::AgentConfig ac;  // 2 layers, d_model 64
  auto models = pf::pipeline::Models::create(ac, 256, pf::router::RouterConfig{}, tc);
  const auto s = pf::pipeline::train(tc, pf::agent::PpoConfig{}, data, {}, models);
  const double first = s.epoch_train_loss.front(), last = s.epoch_train_loss.back();
  const double t = seconds_since(start);
  std::string curve;
  for (double l : s.epoch_train_loss) curve += fmt("%.3f ", l);
  std::printf("  sft epoch mean NLL: %s\n", curve.c_str());
  return {last <= kSftLossRatio * first && t < kSftBudgetSeconds,
          fmt("final/first epoch NLL %.3f/%.3f = %.3f (<= %.2f), %zu epochs x batch %zu, lr %.0e gamma %.2f, %.0fs (< %.0fs)",
              last, first, last / first, kSftLossRatio, tc.epochs, tc.batch_size, tc.agent_optim.learning_rate,
              tc.agent_optim.lr_decay_gamma, t, kSftBudgetSeconds)};
}

// ---------------------------------------------------------------------------
// 6. Router policy gradient

Outcome router_sanity() {
  nn::Rng rng(8);
  pf::router::RouterConfig rc;
  pf::router::RouterState s(rc, rng);
  pf::router::BatchFeatures z;
  for (double& x : z) x = 2.0 * rng.uniform() - 1.0;
  std::size_t crossed = 0;
  for (std::size_t i = 1; i <= kRouterUpdates; ++i) {
    const auto d = s.decide(z, pf::router::DecideMode::sample, rng);
    s.apply_feedback(d, z, d.d == 1 ? 0.5 : -0.5);
    if (!crossed && s.net().probability(z) > kRouterTarget) crossed = i;
  }
  const double p = s.net().probability(z);
  return {p > kRouterTarget, fmt("p_RFT %.4f after %zu updates at lr %.0e (> %.1f first at update %zu)", p, kRouterUpdates,
                                 rc.learning_rate, kRouterTarget, crossed)};
}

// ---------------------------------------------------------------------------
// 7 and 8. Directional experiments on the desk configuration

struct RunStats {
  double test_em_pct = 0.0;
  double linked_em_pct = 0.0;
  std::size_t eligible = 0, eligible_rft = 0;
  std::size_t batches = 0, requested_rft = 0;
  double seconds = 0.0;
};

pf::config::RunConfig desk_config() {
  pf::config::RunConfig c;
  pf::config::apply_ini_file(c, std::string(PATCHFORGE_SOURCE_DIR) + "/configs/desk.ini");
  return c;
}

RunStats desk_run(const std::string& mode, int seed, bool ablate_rules) {
  auto c = desk_config();
  c.mode = mode;
  c.seed = static_cast<std::uint64_t>(seed);
  if (ablate_rules) c.reward_weights.lambda_rules = 0.0;
  static const auto examples = pf::run::load_corpus(c);
  const auto start = Clock::now();
  const auto r = pf::run::train_and_evaluate(c, examples);
  RunStats s;
  s.seconds = seconds_since(start);
  s.test_em_pct = 100.0 * r.test.overall.exact_match;
  double hits = 0.0;
  std::size_t n = 0;
  for (const auto& [cat, t] : r.test.by_category) {
    if (pf::corpus::linked_rule(cat).empty()) continue;
    hits += t.exact_match * static_cast<double>(t.count);
    n += t.count;
  }
  s.linked_em_pct = n ? 100.0 * hits / static_cast<double>(n) : 0.0;
  s.eligible = r.summary.router_eligible;
  s.eligible_rft = r.summary.router_eligible_rft;
  s.batches = r.summary.sft_batches + r.summary.rft_batches;
  s.requested_rft = r.summary.router_eligible_rft + r.summary.overridden;
  std::printf("  run %-9s seed %d%s: test EM %5.1f%%  rule-linked EM %5.1f%%  %.0fs\n", mode.c_str(), seed,
              ablate_rules ? " (no rules reward)" : "", s.test_em_pct, s.linked_em_pct, s.seconds);
  std::fflush(stdout);
  return s;
}

std::map<std::string, std::vector<RunStats>>& run_cache() {
  static std::map<std::string, std::vector<RunStats>> cache;
  return cache;
}

const std::vector<RunStats>& runs(const std::string& mode, bool ablate_rules = false) {
  const std::string key = mode + (ablate_rules ? "-ablate" : "");
  auto& cache = run_cache();
  if (!cache.count(key))
    for (int seed = 1; seed <= kSeeds; ++seed) cache[key].push_back(desk_run(mode, seed, ablate_rules));
  return cache[key];
}

std::vector<double> field(const std::vector<RunStats>& v, double RunStats::*f) {
  std::vector<double> out;
  for (const auto& r : v) out.push_back(r.*f);
  return out;
}

Outcome directional_router() {
  const auto start = Clock::now();
  const auto& router = runs("router");
  const auto& sft = runs("sft_only");
  const auto& rft = runs("rft_only");
  const double t = seconds_since(start);
  const double mr = median(field(router, &RunStats::test_em_pct));
  const double ms = median(field(sft, &RunStats::test_em_pct));
  const double mf = median(field(rft, &RunStats::test_em_pct));
  std::size_t eligible = 0, chose = 0, batches = 0, requested = 0;
  for (const auto& r : router) {
    eligible += r.eligible;
    chose += r.eligible_rft;
    batches += r.batches;
    requested += r.requested_rft;
  }
  const double share = eligible ? static_cast<double>(chose) / static_cast<double>(eligible) : 0.0;
  const bool pass = mr >= std::max(ms, mf) - kEmSlackPct && share >= kRftShareLow && share <= kRftShareHigh &&
                    t < kDirectionalBudgetSeconds;
  return {pass, fmt("median test EM router %.1f%% vs sft_only %.1f%%, rft_only %.1f%% (slack %.0f pp); "
                    "RFT chosen on %zu/%zu eligible batches = %.1f%% (in [%.0f%%, %.0f%%]); "
                    "RFT requested on %zu/%zu batches before the cap; %.1f min (< %.0f)",
                    mr, ms, mf, kEmSlackPct, chose, eligible, 100.0 * share, 100.0 * kRftShareLow,
                    100.0 * kRftShareHigh, requested, batches, t / 60.0, kDirectionalBudgetSeconds / 60.0)};
}

Outcome rules_ablation() {
  const auto& full = runs("router");
  const auto& ablated = runs("router", true);
  const double mf = median(field(full, &RunStats::linked_em_pct));
  const double ma = median(field(ablated, &RunStats::linked_em_pct));
  return {ma < mf, fmt("median rule-linked test EM over %d seeds: all rewards %.1f%%, without rules reward %.1f%%", kSeeds,
                       mf, ma)};
}

// ---------------------------------------------------------------------------
// 9. Determinism and persistence

Outcome determinism() {
  auto c = desk_config();
  c.corpus_count = 120;
  c.epochs = 2;
  c.agent.d_model = 32;
  c.agent.d_ff = 64;
  c.ppo_cap_per_epoch = 2;
  const auto examples = pf::run::load_corpus(c);
  const auto base = std::filesystem::temp_directory_path() / "patchforge_acceptance_determinism";
  std::filesystem::remove_all(base);
  auto read = [](const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
  };
  pf::run::train_and_evaluate(c, examples, base / "a");
  pf::run::train_and_evaluate(c, examples, base / "b");
  const bool logs_equal = read(base / "a/metrics.jsonl") == read(base / "b/metrics.jsonl") &&
                          !read(base / "a/metrics.jsonl").empty();
  const bool ckpt_equal = read(base / "a/last.ckpt") == read(base / "b/last.ckpt");

  // Save, reload and compare forward outputs on a probe batch.
  auto original = pf::run::load_checkpoint((base / "a/last.ckpt").string());
  const auto resaved = base / "resaved.ckpt";
  original.models.checkpoint().save(resaved.string());
  const auto loaded = pf::nn::Checkpoint::load(resaved.string());
  auto reloaded = pf::run::make_models(original.config, original.config.train_config());
  reloaded.restore(loaded);

  bool forward_equal = true;
  std::size_t compared = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    const auto pair = pf::agent::encode_pair(examples[i].buggy, examples[i].fixed);
    std::vector<int> ids, labels;
    pf::agent::RepairAgent::teacher_forcing(pair.prompt, pair.target, ids, labels);
    Graph ga, gb;
    const Tensor2 la = ga.value(original.models.agent.forward(ga, ids).logits);
    const Tensor2 lb = gb.value(reloaded.agent.forward(gb, ids).logits);
    forward_equal = forward_equal && la.data == lb.data;
    const auto sa = original.models.agent.pool_state(pair.prompt);
    forward_equal = forward_equal && sa == reloaded.agent.pool_state(pair.prompt);
    forward_equal = forward_equal && original.models.critic.value(sa) == reloaded.critic.value(sa);
    compared += la.data.size();
  }
  pf::router::BatchFeatures z{};
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = 0.3 * static_cast<double>(i) - 1.0;
  forward_equal = forward_equal && original.models.router.net().probability(z) == reloaded.router.net().probability(z);
  std::filesystem::remove_all(base);
  return {logs_equal && ckpt_equal && forward_equal,
          fmt("metrics logs identical: %s; checkpoints identical: %s; reloaded agent/critic/router outputs identical "
              "on probe batch (%zu logits): %s",
              logs_equal ? "yes" : "no", ckpt_equal ? "yes" : "no", compared, forward_equal ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 10. Split fidelity

Outcome split_fidelity() {
  const auto ex = pf::corpus::generate(100, 10);
  const pf::corpus::SplitSpec spec;
  const auto a = pf::corpus::split(ex, spec);
  auto shuffled = ex;
  nn::Rng rng(3);
  rng.shuffle(shuffled);
  const auto b = pf::corpus::split(shuffled, spec);
  std::multiset<std::string> ids;
  for (const auto* part : {&a.train, &a.valid, &a.test})
    for (const auto& e : *part) ids.insert(e.id);
  std::set<std::string> expected;
  for (const auto& e : ex) expected.insert(e.id);
  const bool sizes = a.train.size() == 80 && a.valid.size() == 10 && a.test.size() == 10;
  const bool same = a.train == b.train && a.valid == b.valid && a.test == b.test;
  const bool partition = ids.size() == 100 && std::set<std::string>(ids.begin(), ids.end()) == expected;
  return {sizes && same && partition, fmt("sizes %zu/%zu/%zu; deterministic: %s; disjoint and covering: %s",
                                          a.train.size(), a.valid.size(), a.test.size(), same ? "yes" : "no",
                                          partition ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient exactness", gradient_exactness},
      {"PPO invariants", ppo_invariants},
      {"reward soundness", reward_soundness},
      {"oracle equivalence", oracle_equivalence},
      {"SFT learning signal", sft_learning_signal},
      {"router policy gradient", router_sanity},
      {"router vs single pathway", directional_router},
      {"rules reward ablation", rules_ablation},
      {"determinism and persistence", determinism},
      {"split fidelity", split_fidelity},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s criterion %d (%s): %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str(),
                seconds_since(start));
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
