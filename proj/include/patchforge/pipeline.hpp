#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchforge/agent.hpp"
#include "patchforge/corpus.hpp"
#include "patchforge/metrics.hpp"
#include "patchforge/reward.hpp"
#include "patchforge/router.hpp"

namespace patchforge::pipeline {

using nlohmann::json;

enum class Mode { router, fixed, sft_only, rft_only };

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::router: return "router";
    case Mode::fixed: return "fixed";
    case Mode::sft_only: return "sft-only";
    case Mode::rft_only: return "rft-only";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "router") return Mode::router;
  if (s == "fixed") return Mode::fixed;
  if (s == "sft-only" || s == "sft_only") return Mode::sft_only;
  if (s == "rft-only" || s == "rft_only") return Mode::rft_only;
  throw std::invalid_argument("unknown mode '" + s + "' (expected router, fixed, sft-only or rft-only)");
}

inline constexpr std::size_t kUnlimited = std::numeric_limits<std::size_t>::max();

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  nn::OptimConfig agent_optim{nn::OptimAlgorithm::adamw, 5e-5, 0.9, 0.999, 1e-8, 0.01, 0.95};
  double critic_learning_rate = 1e-3;
  std::size_t ppo_cap_per_epoch = 3;
  std::size_t rft_only_cap = kUnlimited;
  Mode mode = Mode::router;
  double fixed_rft_ratio = 0.25;
  std::uint64_t seed = 1;
  reward::RewardWeights reward_weights;
  std::vector<rulecheck::Rule> rules = rulecheck::default_rules();
  std::size_t max_path_len = reward::kDefaultPathLength;
  bool validate_each_epoch = true;
  bool log_wall_time = false;

  void validate() const {
    if (batch_size == 0) throw std::invalid_argument("train.batch_size must be at least 1");
    if (!(fixed_rft_ratio >= 0.0 && fixed_rft_ratio <= 1.0)) throw std::invalid_argument("train.fixed_rft_ratio must lie in [0, 1]");
    agent_optim.validate();
    if (!(critic_learning_rate > 0.0)) throw std::invalid_argument("ppo.critic_learning_rate must be positive");
    reward_weights.normalized();
  }

  std::size_t cap() const { return mode == Mode::rft_only ? rft_only_cap : ppo_cap_per_epoch; }
};

/// Agent, critic, router and the two agent-side optimizers.
struct Models {
  agent::RepairAgent agent;
  agent::Critic critic;
  router::RouterState router;
  nn::Optimizer agent_opt;
  nn::Optimizer critic_opt;
  std::size_t epochs_done = 0;

  static Models create(const agent::AgentConfig& ac, std::size_t critic_hidden, const router::RouterConfig& rc,
                       const TrainConfig& tc) {
    Models m;
    nn::Rng agent_rng = nn::Rng::derive(tc.seed, 101);
    nn::Rng critic_rng = nn::Rng::derive(tc.seed, 102);
    nn::Rng router_rng = nn::Rng::derive(tc.seed, 103);
    m.agent = agent::RepairAgent(ac, agent_rng);
    m.critic = agent::Critic({ac.d_model, critic_hidden}, critic_rng);
    m.router = router::RouterState(rc, router_rng);
    m.agent_opt = nn::Optimizer(tc.agent_optim);
    m.critic_opt = nn::Optimizer({nn::OptimAlgorithm::adam, tc.critic_learning_rate, 0.9, 0.999, 1e-8, 0.0, 1.0});
    return m;
  }

  nn::Checkpoint checkpoint() const {
    nn::Checkpoint ck;
    agent.save(ck);
    critic.save(ck);
    router.save(ck);
    ck.scalars["agent_opt/decays"] = agent_opt.decays();
    ck.scalars["epochs_done"] = static_cast<double>(epochs_done);
    return ck;
  }

  void restore(const nn::Checkpoint& ck) {
    agent.load(ck);
    critic.load(ck);
    router.load(ck);
    agent_opt.set_decays(static_cast<unsigned>(ck.scalar("agent_opt/decays")));
    epochs_done = static_cast<std::size_t>(ck.scalar("epochs_done"));
  }
};

inline json to_json(const reward::RewardBreakdown& b) {
  const auto& s = b.cfg_subscores;
  return {{"r_ast", b.r_ast},
          {"r_cfg", b.r_cfg},
          {"r_rules", b.r_rules},
          {"composite", b.composite},
          {"cfg_subscores", {{"node", s.node_sim}, {"edge", s.edge_sim}, {"path", s.path_sim}, {"struct", s.struct_sim}}},
          {"weights", {{"lambda_ast", b.weights.lambda_ast}, {"lambda_cfg", b.weights.lambda_cfg}, {"lambda_rules", b.weights.lambda_rules}}}};
}

/// One training batch as logged.
struct LossRecord {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  router::Pathway pathway = router::Pathway::sft;
  double loss = 0.0;
  std::optional<double> router_p;
  int requested = 0;  // decision before the cap
  bool overridden = false;
  std::optional<double> mean_reward;
  std::optional<reward::RewardBreakdown> mean_breakdown;
  std::optional<double> router_loss;
  std::optional<double> wall_time;

  json to_json() const {
    json j = {{"type", "batch"}, {"epoch", epoch}, {"batch", batch}, {"pathway", router::to_string(pathway)}};
    j[pathway == router::Pathway::sft ? "L_SFT" : "L_RFT"] = loss;
    j["router_p"] = router_p ? json(*router_p) : json(nullptr);
    j["decision"] = pathway == router::Pathway::rft ? 1 : 0;
    j["requested"] = requested;
    j["overridden"] = overridden;
    if (mean_reward) j["mean_reward"] = *mean_reward;
    if (mean_breakdown) {
      const auto& b = *mean_breakdown;
      j["reward"] = {{"r_ast", b.r_ast},
                     {"r_cfg", b.r_cfg},
                     {"r_rules", b.r_rules},
                     {"lambda_ast", b.weights.lambda_ast},
                     {"lambda_cfg", b.weights.lambda_cfg},
                     {"lambda_rules", b.weights.lambda_rules}};
    }
    if (router_loss) j["router_loss"] = *router_loss;
    if (wall_time) j["wall_time"] = *wall_time;
    return j;
  }
};

inline json to_json(const metrics::MetricTriple& t) {
  auto pct = [&](double v) { return t.count == 0 ? json(nullptr) : json(100.0 * v); };
  return {{"count", t.count},
          {"exact_match_pct", pct(t.exact_match)},
          {"codebleu_pct", pct(t.codebleu)},
          {"crystalbleu_pct", pct(t.crystalbleu)}};
}

inline json to_json(const metrics::MetricsReport& r) {
  json by = json::object();
  for (const auto& [c, t] : r.by_category) by[c] = to_json(t);
  json j = to_json(r.overall);
  j["by_category"] = by;
  return j;
}

struct EvalOptions {
  metrics::CodeBleuConfig codebleu;
  const metrics::NgramStats* ngram_stats = nullptr;
};

using RepairFn = std::function<std::string(const corpus::RepairExample&)>;

/// Scores `repair` on every example: Exact Match, CodeBLEU and CrystalBLEU
/// against the fixed side, overall and per category.
inline metrics::MetricsReport evaluate(const std::vector<corpus::RepairExample>& examples, const RepairFn& repair,
                                       const EvalOptions& opt) {
  static const metrics::NgramStats kNoStats;
  const metrics::NgramStats& stats = opt.ngram_stats ? *opt.ngram_stats : kNoStats;
  std::vector<metrics::ScoredSample> scored;
  scored.reserve(examples.size());
  for (const auto& e : examples) {
    const std::string cand = repair(e);
    scored.push_back({e.category, metrics::exact_match(cand, e.fixed), metrics::codebleu(cand, e.fixed, opt.codebleu),
                      metrics::crystalbleu(cand, e.fixed, stats)});
  }
  return metrics::aggregate(scored);
}

/// Greedy repair with the agent.
inline RepairFn greedy_repair(const agent::RepairAgent& a) {
  return [&a](const corpus::RepairExample& e) {
    agent::EncodedPair p = agent::encode_prompt(e.buggy);
    nn::Rng unused(0);
    const agent::EpisodeRecord ep = a.sample(p.prompt, unused, true);
    return minilang::decode_to_source(ep.patch, p.renaming);
  };
}

inline double exact_match_rate(const std::vector<corpus::RepairExample>& examples, const RepairFn& repair) {
  if (examples.empty()) return 0.0;
  std::size_t hit = 0;
  for (const auto& e : examples) hit += metrics::exact_match(repair(e), e.fixed) ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(examples.size());
}

/// Decision source for a batch; `sampled` marks router-sampled requests.
struct Request {
  int d = 0;
  std::optional<double> p;
  bool sampled = false;
  router::RouteDecision decision;
  router::BatchFeatures normalized{};
};

/// Batch position b (0-based) is RFT in fixed mode when (b + 1) is a
/// multiple of ceil(1 / ratio).
inline bool fixed_schedule_rft(std::size_t batch, double ratio) {
  if (ratio <= 0.0) return false;
  const auto spacing = static_cast<std::size_t>(std::ceil(1.0 / ratio - 1e-12));
  return (batch + 1) % spacing == 0;
}

struct TrainSummary {
  std::size_t sft_batches = 0;
  std::size_t rft_batches = 0;
  std::size_t overridden = 0;
  std::size_t router_sampled = 0;   // batches routed by a sampled decision
  std::size_t router_rft_requests = 0;
  std::size_t router_eligible = 0;  // sampled while the epoch's RFT cap was not yet reached
  std::size_t router_eligible_rft = 0;
  std::vector<double> epoch_train_loss;  // mean SFT loss per epoch (NaN when no SFT batch)
  std::vector<double> epoch_valid_em;
  double final_learning_rate = 0.0;

  json to_json() const {
    auto arr = [](const std::vector<double>& v) {
      json a = json::array();
      for (double x : v) a.push_back(std::isfinite(x) ? json(x) : json(nullptr));
      return a;
    };
    return {{"sft_batches", sft_batches},
            {"rft_batches", rft_batches},
            {"overridden_batches", overridden},
            {"router_sampled_batches", router_sampled},
            {"router_rft_requests", router_rft_requests},
            {"router_eligible_batches", router_eligible},
            {"router_eligible_rft", router_eligible_rft},
            {"epoch_mean_sft_loss", arr(epoch_train_loss)},
            {"epoch_valid_exact_match", arr(epoch_valid_em)},
            {"final_learning_rate", final_learning_rate}};
  }
};

/// Hooks for tests: a replacement decision source for router mode.
struct TrainHooks {
  std::function<int(std::size_t epoch, std::size_t batch)> force_request;
  std::function<void(const LossRecord&)> on_record;
};

struct TrainIO {
  std::ostream* log = nullptr;                  // JSONL metrics log
  std::optional<std::filesystem::path> out_dir;  // checkpoints
  std::string config_json;                       // stored with each checkpoint
};

struct PreparedExample {
  const corpus::RepairExample* example;
  agent::EncodedPair pair;
  minilang::Program target;
  std::string buggy_source;
};

inline std::vector<PreparedExample> prepare(const std::vector<corpus::RepairExample>& examples,
                                            const agent::AgentConfig& ac) {
  std::vector<PreparedExample> out;
  out.reserve(examples.size());
  for (const auto& e : examples) {
    PreparedExample p{&e, agent::encode_pair(e.buggy, e.fixed), minilang::parse_source(e.fixed), e.buggy};
    if (p.pair.prompt.size() > ac.max_seq || p.pair.target.size() > ac.max_seq)
      throw agent::SequenceTooLong("example " + e.id + " does not fit agent.max_seq = " + std::to_string(ac.max_seq));
    out.push_back(std::move(p));
  }
  return out;
}

inline void save_checkpoint(const Models& m, const TrainIO& io, const std::string& name) {
  if (!io.out_dir) return;
  nn::Checkpoint ck = m.checkpoint();
  ck.texts["config"] = io.config_json;
  std::filesystem::create_directories(*io.out_dir);
  ck.save((*io.out_dir / name).string());
}

/// The training loop: route each batch, apply the cap, update the agent by
/// SFT or PPO, feed the router, decay the agent learning rate per epoch,
/// checkpoint and validate per epoch.
inline TrainSummary train(const TrainConfig& cfg, const agent::PpoConfig& ppo,
                          const std::vector<corpus::RepairExample>& train_split,
                          const std::vector<corpus::RepairExample>& valid_split, Models& models, const TrainIO& io = {},
                          const TrainHooks& hooks = {}) {
  cfg.validate();
  ppo.validate();
  const auto data = prepare(train_split, models.agent.config());
  const reward::RewardModel reward_model(cfg.reward_weights, cfg.rules, cfg.max_path_len);
  nn::Rng shuffle_rng = nn::Rng::derive(cfg.seed, 1);
  nn::Rng sample_rng = nn::Rng::derive(cfg.seed, 2);
  nn::Rng route_rng = nn::Rng::derive(cfg.seed, 3);
  const auto start = std::chrono::steady_clock::now();
  TrainSummary summary;
  std::vector<std::size_t> order(data.size());

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_rng.shuffle(order);
    std::size_t rft_in_epoch = 0;
    double sft_sum = 0.0;
    std::size_t sft_count = 0;
    const std::size_t nbatches = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
    for (std::size_t b = 0; b < nbatches; ++b) {
      std::vector<const PreparedExample*> batch;
      for (std::size_t i = b * cfg.batch_size; i < std::min(data.size(), (b + 1) * cfg.batch_size); ++i)
        batch.push_back(&data[order[i]]);

      LossRecord rec;
      rec.epoch = epoch;
      rec.batch = b;
      Request req;
      switch (cfg.mode) {
        case Mode::router: {
          if (hooks.force_request) {
            req.d = hooks.force_request(epoch, b);
            req.sampled = true;
            req.decision.d = req.d;
            req.decision.sampled = true;
            break;
          }
          std::vector<std::string_view> sources;
          for (const auto* p : batch) sources.push_back(p->buggy_source);
          req.normalized = models.router.normalize(router::extract_features(sources));
          req.decision = models.router.decide(req.normalized, router::DecideMode::sample, route_rng);
          req.d = req.decision.d;
          req.p = req.decision.p;
          req.sampled = true;
          break;
        }
        case Mode::fixed: req.d = fixed_schedule_rft(b, cfg.fixed_rft_ratio) ? 1 : 0; break;
        case Mode::sft_only: req.d = 0; break;
        case Mode::rft_only: req.d = 1; break;
      }
      rec.requested = req.d;
      rec.router_p = req.p;
      if (req.sampled) {
        ++summary.router_sampled;
        if (req.d == 1) ++summary.router_rft_requests;
        if (rft_in_epoch < cfg.cap()) {
          ++summary.router_eligible;
          if (req.d == 1) ++summary.router_eligible_rft;
        }
      }
      int d = req.d;
      if (d == 1 && rft_in_epoch >= cfg.cap()) {
        d = 0;
        rec.overridden = true;
        req.decision.overridden = true;
        ++summary.overridden;
      }

      if (d == 0) {
        std::vector<const agent::EncodedPair*> pairs;
        for (const auto* p : batch) pairs.push_back(&p->pair);
        rec.pathway = router::Pathway::sft;
        rec.loss = models.agent.sft_loss(pairs);
        models.agent_opt.step(models.agent.params());
        sft_sum += rec.loss;
        ++sft_count;
        ++summary.sft_batches;
      } else {
        ++rft_in_epoch;
        rec.pathway = router::Pathway::rft;
        std::vector<agent::EpisodeRecord> episodes;
        reward::RewardBreakdown mean{};
        for (const auto* p : batch) {
          const std::vector<double> state = models.agent.pool_state(p->pair.prompt);
          const double value = models.critic.value(state);
          for (std::size_t s = 0; s < ppo.samples_per_input; ++s) {
            agent::EpisodeRecord ep = models.agent.sample(p->pair.prompt, sample_rng);
            const std::string candidate = minilang::decode_to_source(ep.patch, p->pair.renaming);
            const reward::RewardBreakdown r = reward_model.score(candidate, p->target);
            ep.state = state;
            ep.reward = r.composite;
            ep.value = value;
            ep.advantage = ep.reward - ep.value;
            mean.r_ast += r.r_ast;
            mean.r_cfg += r.r_cfg;
            mean.r_rules += r.r_rules;
            mean.composite += r.composite;
            mean.weights = r.weights;
            episodes.push_back(std::move(ep));
          }
        }
        const double n = static_cast<double>(episodes.size());
        mean.r_ast /= n;
        mean.r_cfg /= n;
        mean.r_rules /= n;
        mean.composite /= n;
        const agent::PpoStats st =
            agent::ppo_update(episodes, models.agent, models.agent_opt, models.critic, models.critic_opt, ppo);
        rec.loss = st.total;
        rec.mean_reward = mean.composite;
        rec.mean_breakdown = mean;
        ++summary.rft_batches;
      }
      if (cfg.mode == Mode::router && !hooks.force_request && !rec.overridden)
        rec.router_loss = models.router.update(req.decision, req.normalized, rec.loss);
      if (cfg.log_wall_time)
        rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (io.log) *io.log << rec.to_json().dump() << '\n';
      if (hooks.on_record) hooks.on_record(rec);
    }
    models.agent_opt.decay_lr();
    ++models.epochs_done;
    summary.epoch_train_loss.push_back(sft_count ? sft_sum / static_cast<double>(sft_count) : std::nan(""));
    if (cfg.validate_each_epoch) {
      const double em = exact_match_rate(valid_split, greedy_repair(models.agent));
      summary.epoch_valid_em.push_back(em);
      if (io.log)
        *io.log << json{{"type", "eval"}, {"epoch", epoch}, {"split", "valid"}, {"exact_match_pct", 100.0 * em}}.dump()
                << '\n';
    }
    save_checkpoint(models, io, "epoch_" + std::to_string(epoch + 1) + ".ckpt");
    save_checkpoint(models, io, "last.ckpt");
    if (io.log) io.log->flush();
  }
  summary.final_learning_rate = models.agent_opt.learning_rate();
  return summary;
}

}  // namespace patchforge::pipeline
