#pragma once

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "patchforge/agent.hpp"
#include "patchforge/corpus.hpp"
#include "patchforge/metrics.hpp"
#include "patchforge/pipeline.hpp"
#include "patchforge/router.hpp"

namespace patchforge::config {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

/// Everything a command needs, grouped by INI section.
struct RunConfig {
  // [corpus]
  std::string corpus_path;  // JSONL; empty -> generate
  std::size_t corpus_count = 1000;
  std::uint64_t corpus_seed = 7;
  corpus::SizeRange corpus_size;
  corpus::SplitSpec split;
  // [agent]
  agent::AgentConfig agent;
  nn::OptimConfig agent_optim{nn::OptimAlgorithm::adamw, 5e-5, 0.9, 0.999, 1e-8, 0.01, 0.95};
  // [router]
  router::RouterConfig router;
  // [reward]
  reward::RewardWeights reward_weights;
  std::string rules_path;  // empty -> built-in default rules
  std::size_t max_path_len = reward::kDefaultPathLength;
  // [ppo]
  agent::PpoConfig ppo;
  std::size_t critic_hidden = 256;
  double critic_learning_rate = 1e-3;
  // [train]
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  std::size_t ppo_cap_per_epoch = 3;
  long long rft_only_cap = -1;  // -1 -> unlimited
  std::string mode = "router";
  double fixed_rft_ratio = 0.25;
  std::uint64_t seed = 1;
  bool validate_each_epoch = true;
  bool log_wall_time = false;
  // [metrics]
  std::size_t crystal_k = 50;
  metrics::CodeBleuConfig codebleu;

  std::vector<rulecheck::Rule> rules() const {
    if (rules_path.empty()) return rulecheck::default_rules();
    std::ifstream f(rules_path);
    if (!f) throw ConfigError("reward.rules", "cannot open '" + rules_path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return rulecheck::load_rules(ss.str());
  }

  pipeline::TrainConfig train_config() const {
    pipeline::TrainConfig t;
    t.epochs = epochs;
    t.batch_size = batch_size;
    t.agent_optim = agent_optim;
    t.critic_learning_rate = critic_learning_rate;
    t.ppo_cap_per_epoch = ppo_cap_per_epoch;
    t.rft_only_cap = rft_only_cap < 0 ? pipeline::kUnlimited : static_cast<std::size_t>(rft_only_cap);
    t.mode = pipeline::parse_mode(mode);
    t.fixed_rft_ratio = fixed_rft_ratio;
    t.seed = seed;
    t.reward_weights = reward_weights;
    t.rules = rules();
    t.max_path_len = max_path_len;
    t.validate_each_epoch = validate_each_epoch;
    t.log_wall_time = log_wall_time;
    return t;
  }

  void validate() const {
    auto wrap = [](const char* key, auto&& fn) {
      try {
        fn();
      } catch (const std::exception& e) {
        throw ConfigError(key, e.what());
      }
    };
    wrap("agent", [&] { agent.validate(); });
    wrap("agent", [&] { agent_optim.validate(); });
    wrap("router", [&] { router.validate(); });
    wrap("ppo", [&] { ppo.validate(); });
    wrap("reward", [&] { reward_weights.normalized(); });
    wrap("corpus", [&] { split.validate(); });
    wrap("train.mode", [&] { pipeline::parse_mode(mode); });
    if (batch_size == 0) throw ConfigError("train.batch_size", "must be at least 1");
    if (!(fixed_rft_ratio >= 0.0 && fixed_rft_ratio <= 1.0)) throw ConfigError("train.fixed_rft_ratio", "must lie in [0, 1]");
    if (corpus_count == 0) throw ConfigError("corpus.count", "must be at least 1");
    if (corpus_size.min_statements < 3 || corpus_size.max_statements < corpus_size.min_statements)
      throw ConfigError("corpus.min_statements", "need 3 <= min_statements <= max_statements");
    if (critic_hidden == 0) throw ConfigError("ppo.critic_hidden", "must be positive");
  }
};

/// One documented configuration key.
struct KeySpec {
  std::string section;
  std::string key;
  std::string type;
  std::string doc;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;

  std::string full() const { return section + "." + key; }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  T out{};
  const char* first = v.data();
  const char* last = v.data() + v.size();
  std::from_chars_result r;
  if constexpr (std::is_floating_point_v<T>) {
    r = std::from_chars(first, last, out, std::chars_format::general);
  } else {
    r = std::from_chars(first, last, out);
  }
  if (v.empty() || r.ec != std::errc() || r.ptr != last) throw ConfigError(key, "cannot parse '" + v + "' as a number");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

/// Shortest text that reads back to the same double.
inline std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
KeySpec num(std::string section, std::string key, std::string doc, T RunConfig::*field) {
  const std::string full = section + "." + key;
  return {section, key, std::is_floating_point_v<T> ? "real" : "integer", std::move(doc),
          [full, field](RunConfig& c, const std::string& v) { c.*field = parse_number<T>(full, v); },
          [field](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return fmt(c.*field);
            else return std::to_string(c.*field);
          }};
}

template <typename T, typename Fn>
KeySpec num_at(std::string section, std::string key, std::string doc, Fn ref) {
  const std::string full = section + "." + key;
  return {section, key, std::is_floating_point_v<T> ? "real" : "integer", std::move(doc),
          [full, ref](RunConfig& c, const std::string& v) { ref(c) = parse_number<T>(full, v); },
          [ref](const RunConfig& c) {
            T value = ref(const_cast<RunConfig&>(c));
            if constexpr (std::is_floating_point_v<T>) return fmt(value);
            else return std::to_string(value);
          }};
}

inline KeySpec flag(std::string section, std::string key, std::string doc, bool RunConfig::*field) {
  const std::string full = section + "." + key;
  return {section, key, "bool", std::move(doc),
          [full, field](RunConfig& c, const std::string& v) { c.*field = parse_bool(full, v); },
          [field](const RunConfig& c) { return std::string(c.*field ? "true" : "false"); }};
}

inline KeySpec text(std::string section, std::string key, std::string doc, std::string RunConfig::*field) {
  return {section, key, "string", std::move(doc), [field](RunConfig& c, const std::string& v) { c.*field = trim(v); },
          [field](const RunConfig& c) { return c.*field; }};
}

}  // namespace detail

/// The full key table, in documentation order.
inline const std::vector<KeySpec>& keys() {
  using namespace detail;
  using RC = RunConfig;
  static const std::vector<KeySpec> table = {
      text("corpus", "path", "corpus JSONL to load; empty generates one", &RC::corpus_path),
      num("corpus", "count", "examples to generate", &RC::corpus_count),
      num("corpus", "seed", "generator seed", &RC::corpus_seed),
      num_at<std::size_t>("corpus", "min_statements", "smallest generated function body",
                          [](RC& c) -> std::size_t& { return c.corpus_size.min_statements; }),
      num_at<std::size_t>("corpus", "max_statements", "largest generated function body",
                          [](RC& c) -> std::size_t& { return c.corpus_size.max_statements; }),
      num_at<double>("corpus", "train_fraction", "share of examples for training", [](RC& c) -> double& { return c.split.train; }),
      num_at<double>("corpus", "valid_fraction", "share for validation", [](RC& c) -> double& { return c.split.valid; }),
      num_at<double>("corpus", "test_fraction", "share for testing", [](RC& c) -> double& { return c.split.test; }),
      num_at<std::uint64_t>("corpus", "split_seed", "shuffle seed of the split", [](RC& c) -> std::uint64_t& { return c.split.seed; }),

      num_at<std::size_t>("agent", "d_model", "model width", [](RC& c) -> std::size_t& { return c.agent.d_model; }),
      num_at<std::size_t>("agent", "layers", "transformer blocks", [](RC& c) -> std::size_t& { return c.agent.layers; }),
      num_at<std::size_t>("agent", "heads", "attention heads", [](RC& c) -> std::size_t& { return c.agent.heads; }),
      num_at<std::size_t>("agent", "d_ff", "feed-forward width", [](RC& c) -> std::size_t& { return c.agent.d_ff; }),
      num_at<std::size_t>("agent", "max_seq", "longest prompt or patch in tokens", [](RC& c) -> std::size_t& { return c.agent.max_seq; }),
      num_at<double>("agent", "sample_temperature", "sampling temperature", [](RC& c) -> double& { return c.agent.sample_temperature; }),
      num_at<std::size_t>("agent", "top_k", "sampling top-k (0 = full vocabulary)", [](RC& c) -> std::size_t& { return c.agent.top_k; }),
      num_at<double>("agent", "embed_init_std", "embedding init standard deviation", [](RC& c) -> double& { return c.agent.embed_init_std; }),
      num_at<double>("agent", "head_init_std", "output projection init standard deviation", [](RC& c) -> double& { return c.agent.head_init_std; }),
      {"agent", "optimizer", "string", "adamw or adam",
       [](RC& c, const std::string& v) {
         try {
           c.agent_optim.algorithm = nn::parse_optim_algorithm(detail::trim(v));
         } catch (const std::invalid_argument& e) {
           throw ConfigError("agent.optimizer", e.what());
         }
       },
       [](const RC& c) { return std::string(nn::to_string(c.agent_optim.algorithm)); }},
      num_at<double>("agent", "learning_rate", "agent learning rate", [](RC& c) -> double& { return c.agent_optim.learning_rate; }),
      num_at<double>("agent", "weight_decay", "decoupled weight decay (adamw)", [](RC& c) -> double& { return c.agent_optim.weight_decay; }),
      num_at<double>("agent", "lr_decay_gamma", "per-epoch learning-rate factor", [](RC& c) -> double& { return c.agent_optim.lr_decay_gamma; }),

      num_at<std::size_t>("router", "hidden", "units per hidden layer", [](RC& c) -> std::size_t& { return c.router.hidden; }),
      num_at<double>("router", "learning_rate", "Adam learning rate", [](RC& c) -> double& { return c.router.learning_rate; }),
      num_at<double>("router", "baseline_decay", "moving-average baseline decay", [](RC& c) -> double& { return c.router.baseline_decay; }),
      num_at<double>("router", "loss_ema_decay", "pathway loss statistics decay", [](RC& c) -> double& { return c.router.loss_ema_decay; }),
      num_at<double>("router", "clamp", "normalized feature clamp", [](RC& c) -> double& { return c.router.clamp; }),

      num_at<double>("reward", "lambda_ast", "syntax reward weight", [](RC& c) -> double& { return c.reward_weights.lambda_ast; }),
      num_at<double>("reward", "lambda_cfg", "control-flow reward weight", [](RC& c) -> double& { return c.reward_weights.lambda_cfg; }),
      num_at<double>("reward", "lambda_rules", "rule reward weight", [](RC& c) -> double& { return c.reward_weights.lambda_rules; }),
      num_at<double>("reward", "cfg_node_weight", "node similarity weight inside r_cfg",
                     [](RC& c) -> double& { return c.reward_weights.cfg_parts.node; }),
      num_at<double>("reward", "cfg_edge_weight", "edge similarity weight inside r_cfg",
                     [](RC& c) -> double& { return c.reward_weights.cfg_parts.edge; }),
      num_at<double>("reward", "cfg_path_weight", "path similarity weight inside r_cfg",
                     [](RC& c) -> double& { return c.reward_weights.cfg_parts.path; }),
      num_at<double>("reward", "cfg_struct_weight", "structural similarity weight inside r_cfg",
                     [](RC& c) -> double& { return c.reward_weights.cfg_parts.structure; }),
      text("reward", "rules", "rule file; empty uses the built-in rules", &RC::rules_path),
      num("reward", "max_path_len", "CFG path length bound", &RC::max_path_len),

      num_at<double>("ppo", "clip_epsilon", "ratio clip range", [](RC& c) -> double& { return c.ppo.clip_epsilon; }),
      num_at<std::size_t>("ppo", "inner_epochs", "optimizer steps per RFT batch", [](RC& c) -> std::size_t& { return c.ppo.inner_epochs; }),
      num_at<double>("ppo", "value_coefficient", "value loss weight", [](RC& c) -> double& { return c.ppo.value_coefficient; }),
      num_at<std::size_t>("ppo", "samples_per_input", "patches sampled per input", [](RC& c) -> std::size_t& { return c.ppo.samples_per_input; }),
      num("ppo", "critic_hidden", "critic hidden units; the critic input width is agent.d_model (512 for a 7B backbone)",
          &RC::critic_hidden),
      num("ppo", "critic_learning_rate", "critic Adam learning rate", &RC::critic_learning_rate),

      num("train", "epochs", "training epochs", &RC::epochs),
      num("train", "batch_size", "examples per batch", &RC::batch_size),
      num("train", "ppo_cap_per_epoch", "RFT batches allowed per epoch (router, fixed)", &RC::ppo_cap_per_epoch),
      num("train", "rft_only_cap", "RFT batches per epoch in rft-only mode; -1 = unlimited", &RC::rft_only_cap),
      text("train", "mode", "router, fixed, sft-only or rft-only", &RC::mode),
      num("train", "fixed_rft_ratio", "RFT share in fixed mode", &RC::fixed_rft_ratio),
      num("train", "seed", "run seed (PATCHFORGE_SEED overrides)", &RC::seed),
      flag("train", "validate_each_epoch", "greedy validation Exact Match per epoch", &RC::validate_each_epoch),
      flag("train", "log_wall_time", "add wall-clock seconds to batch records", &RC::log_wall_time),

      num("metrics", "crystal_k", "trivially shared n-grams excluded by CrystalBLEU", &RC::crystal_k),
      num_at<double>("metrics", "keyword_weight", "keyword weight in weighted BLEU", [](RC& c) -> double& { return c.codebleu.keyword_weight; }),
      num_at<double>("metrics", "w_bleu", "CodeBLEU n-gram weight", [](RC& c) -> double& { return c.codebleu.w_bleu; }),
      num_at<double>("metrics", "w_weighted", "CodeBLEU weighted n-gram weight", [](RC& c) -> double& { return c.codebleu.w_weighted; }),
      num_at<double>("metrics", "w_ast", "CodeBLEU syntax weight", [](RC& c) -> double& { return c.codebleu.w_ast; }),
      num_at<double>("metrics", "w_dataflow", "CodeBLEU dataflow weight", [](RC& c) -> double& { return c.codebleu.w_dataflow; }),
  };
  return table;
}

inline const KeySpec& find_key(const std::string& section, const std::string& key) {
  for (const auto& k : keys())
    if (k.section == section && k.key == key) return k;
  throw ConfigError(section + "." + key, "unknown configuration key");
}

/// Sets `section.key` from its textual value.
inline void set(RunConfig& c, const std::string& dotted, const std::string& value) {
  const auto dot = dotted.find('.');
  if (dot == std::string::npos) throw ConfigError(dotted, "expected section.key");
  find_key(dotted.substr(0, dot), dotted.substr(dot + 1)).set(c, value);
}

/// Applies INI text (sections of `key = value`, `#` or `;` comments) on top
/// of `c`. Unknown sections or keys are errors.
inline void apply_ini(RunConfig& c, std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("", "config line " + std::to_string(e.line()) + ": " + e.message());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError(section, "key outside of a section");
    for (const auto& [key, value] : body) find_key(section, key).set(c, value.data());
  }
}

inline void apply_ini_file(RunConfig& c, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("", "cannot open config '" + path + "'");
  apply_ini(c, f);
}

/// PATCHFORGE_SEED, when set, replaces the run seed.
inline void apply_env(RunConfig& c) {
  if (const char* s = std::getenv("PATCHFORGE_SEED"); s && *s) c.seed = detail::parse_number<std::uint64_t>("PATCHFORGE_SEED", s);
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& k : keys()) j[k.section][k.key] = k.get(c);
  return j;
}

inline RunConfig from_json(const nlohmann::json& j) {
  RunConfig c;
  for (const auto& [section, body] : j.items())
    for (const auto& [key, value] : body.items()) find_key(section, key).set(c, value.get<std::string>());
  return c;
}

/// INI text with every key at its current value.
inline std::string to_ini(const RunConfig& c) {
  std::string out, section;
  for (const auto& k : keys()) {
    if (k.section != section) {
      if (!section.empty()) out += '\n';
      section = k.section;
      out += "[" + section + "]\n";
    }
    out += "# " + k.doc + " (" + k.type + ")\n" + k.key + " = " + k.get(c) + "\n";
  }
  return out;
}

}  // namespace patchforge::config
