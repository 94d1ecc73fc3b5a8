// patchforge command-line entry point.

#include <CLI11.hpp>

#include <malloc.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "patchforge/cfg.hpp"
#include "patchforge/config.hpp"
#include "patchforge/corpus.hpp"
#include "patchforge/minilang.hpp"
#include "patchforge/pipeline.hpp"
#include "patchforge/reward.hpp"
#include "patchforge/router.hpp"
#include "patchforge/run.hpp"

namespace pf = patchforge;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeFailure = 1;
constexpr int kUsageError = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigFlags {
  std::string path;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", path, "INI config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "override one key, section.key=value (repeatable)");
  }

  /// defaults < file < PATCHFORGE_SEED < flags
  pf::config::RunConfig build() const {
    pf::config::RunConfig c;
    if (!path.empty()) pf::config::apply_ini_file(c, path);
    pf::config::apply_env(c);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw pf::config::ConfigError(kv, "expected section.key=value");
      pf::config::set(c, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return c;
  }
};

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int gen_corpus(std::size_t count, std::uint64_t seed, const std::string& out, const ConfigFlags& flags) {
  const auto c = flags.build();
  const auto examples = pf::corpus::generate(count, seed, c.corpus_size);
  std::ofstream f(out);
  if (!f) throw std::runtime_error("cannot write '" + out + "'");
  pf::corpus::write_jsonl(examples, f);
  f.close();
  if (!f) throw std::runtime_error("failed writing '" + out + "'");
  json h = pf::corpus::category_histogram(examples);
  std::cout << json{{"count", examples.size()}, {"path", out}, {"categories", h}}.dump(2) << '\n';
  return kOk;
}

int train(const ConfigFlags& flags, const std::string& mode, const std::vector<std::string>& ablate,
          const std::string& out_dir, const std::string& corpus_path) {
  auto c = flags.build();
  if (!mode.empty()) c.mode = mode;
  if (!corpus_path.empty()) c.corpus_path = corpus_path;
  for (const auto& a : ablate) {
    if (a == "ast") c.reward_weights.lambda_ast = 0;
    if (a == "cfg") c.reward_weights.lambda_cfg = 0;
    if (a == "rules") c.reward_weights.lambda_rules = 0;
  }
  c.validate();
  const auto examples = pf::run::load_corpus(c);
  const auto result = pf::run::train_and_evaluate(c, examples, std::filesystem::path(out_dir));
  std::cout << result.to_json(c).dump(2) << '\n';
  return kOk;
}

int eval(const std::string& checkpoint, const std::string& corpus_path, const std::string& split,
         const std::string& out) {
  auto loaded = pf::run::load_checkpoint(checkpoint);
  const auto splits = pf::corpus::split(pf::corpus::load_jsonl(corpus_path), loaded.config.split);
  const auto report = pf::run::evaluate_split(loaded.models.agent, splits, split, loaded.config);
  json j = pf::pipeline::to_json(report);
  j["split"] = split;
  j["checkpoint"] = checkpoint;
  if (!out.empty()) {
    std::ofstream f(out);
    f << j.dump(2) << '\n';
    if (!f) throw std::runtime_error("cannot write '" + out + "'");
  }
  std::cout << j.dump(2) << '\n';
  return kOk;
}

int score(const ConfigFlags& flags, const std::string& candidate, const std::string& target,
          const std::string& rules_path) {
  auto c = flags.build();
  if (!rules_path.empty()) c.rules_path = rules_path;
  c.validate();
  const std::string cand = read_file(candidate);
  const auto tgt = pf::minilang::parse_source(read_file(target));
  const auto b = pf::reward::composite_reward(cand, tgt, c.reward_weights, c.rules(), c.max_path_len);
  std::cout << pf::pipeline::to_json(b).dump(2) << '\n';
  return kOk;
}

int route(const ConfigFlags& flags, const std::string& corpus_path, std::size_t batch_size,
          const std::string& checkpoint) {
  pf::config::RunConfig c;
  pf::router::RouterState state;
  if (!checkpoint.empty()) {
    auto loaded = pf::run::load_checkpoint(checkpoint);
    c = loaded.config;
    state = loaded.models.router;
  } else {
    c = flags.build();
    c.validate();
    pf::nn::Rng rng = pf::nn::Rng::derive(c.seed, 103);
    state = pf::router::RouterState(c.router, rng);
  }
  const auto examples = pf::corpus::load_jsonl(corpus_path);
  pf::nn::Rng unused(0);
  for (std::size_t b = 0; b * batch_size < examples.size(); ++b) {
    std::vector<std::string> sources;
    for (std::size_t i = b * batch_size; i < std::min(examples.size(), (b + 1) * batch_size); ++i)
      sources.push_back(examples[i].buggy);
    const auto raw = pf::router::extract_features(sources);
    const auto z = state.normalize(raw);
    const auto d = state.decide(z, pf::router::DecideMode::argmax, unused);
    json jr = json::object();
    for (std::size_t i = 0; i < raw.size(); ++i) jr[pf::router::feature_name(i)] = raw[i];
    std::cout << json{{"batch", b}, {"size", sources.size()}, {"features", jr}, {"normalized", z}, {"p", d.p},
                      {"decision", pf::router::to_string(d.pathway())}}
                     .dump()
              << '\n';
  }
  return kOk;
}

int cfg_dot(const std::string& source, const std::string& function) {
  const auto program = pf::minilang::parse_source(read_file(source));
  bool found = false;
  for (const auto& fn : program.functions) {
    if (!function.empty() && fn.name != function) continue;
    found = true;
    std::cout << pf::cfg::to_dot(pf::cfg::build_cfg(fn), fn.name);
  }
  if (!found) throw UsageError("no function named '" + function + "'");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  CLI::App app{"patchforge: vulnerability repair with routed SFT and reward-guided RFT"};
  app.require_subcommand(1);

  std::size_t count = 0;
  std::uint64_t seed = 7;
  std::string out;
  ConfigFlags gen_flags;
  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic repair corpus");
  gen->add_option("--count", count, "number of pairs")->required()->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed, "generator seed");
  gen->add_option("--out", out, "output JSONL")->required();
  gen_flags.attach(gen);

  ConfigFlags train_flags;
  std::string mode, out_dir, corpus_path;
  std::vector<std::string> ablate;
  auto* tr = app.add_subcommand("train", "train in one of the four modes");
  train_flags.attach(tr);
  tr->add_option("--mode", mode, "router, fixed, sft-only or rft-only")
      ->check(CLI::IsMember({"router", "fixed", "sft-only", "rft-only"}));
  tr->add_option("--ablate-reward", ablate, "zero one reward weight (repeatable)")
      ->check(CLI::IsMember({"ast", "cfg", "rules"}));
  tr->add_option("--out-dir", out_dir, "checkpoints, metrics.jsonl and summary.json")->required();
  tr->add_option("--corpus", corpus_path, "corpus JSONL (overrides corpus.path)")->check(CLI::ExistingFile);

  std::string checkpoint, split = "test";
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a corpus split");
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ev->add_option("--corpus", corpus_path, "corpus JSONL")->required()->check(CLI::ExistingFile);
  ev->add_option("--split", split, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));
  ev->add_option("--out", out, "also write the report here");

  ConfigFlags score_flags;
  std::string candidate, target, rules;
  auto* sc = app.add_subcommand("score", "composite reward of a candidate against a target");
  sc->add_option("--candidate", candidate, "candidate source")->required();
  sc->add_option("--target", target, "target source")->required();
  sc->add_option("--rules", rules, "rule file")->check(CLI::ExistingFile);
  score_flags.attach(sc);

  ConfigFlags route_flags;
  std::size_t batch_size = 16;
  auto* ro = app.add_subcommand("route", "print router features and decisions per batch");
  ro->add_option("--corpus", corpus_path, "corpus JSONL")->required()->check(CLI::ExistingFile);
  ro->add_option("--batch-size", batch_size, "examples per batch")->check(CLI::PositiveNumber);
  ro->add_option("--checkpoint", checkpoint, "use the router stored here");
  route_flags.attach(ro);

  std::string source, function;
  auto* dot = app.add_subcommand("cfg", "export a control-flow graph as DOT");
  dot->add_option("--source", source, "minilang source file")->required();
  dot->add_option("--function", function, "only this function");

  auto* dump = app.add_subcommand("config", "print the effective configuration as INI");
  ConfigFlags dump_flags;
  dump_flags.attach(dump);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    if (*gen) return gen_corpus(count, seed, out, gen_flags);
    if (*tr) return train(train_flags, mode, ablate, out_dir, corpus_path);
    if (*ev) return eval(checkpoint, corpus_path, split, out);
    if (*sc) return score(score_flags, candidate, target, rules);
    if (*ro) return route(route_flags, corpus_path, batch_size, checkpoint);
    if (*dot) return cfg_dot(source, function);
    if (*dump) {
      const auto c = dump_flags.build();
      c.validate();
      std::cout << pf::config::to_ini(c);
      return kOk;
    }
  } catch (const pf::config::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsageError;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kUsageError;
}
