#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchforge/config.hpp"
#include "patchforge/corpus.hpp"
#include "patchforge/pipeline.hpp"

namespace patchforge::run {

using nlohmann::json;

inline std::vector<corpus::RepairExample> load_corpus(const config::RunConfig& c) {
  if (!c.corpus_path.empty()) return corpus::load_jsonl(c.corpus_path);
  return corpus::generate(c.corpus_count, c.corpus_seed, c.corpus_size);
}

inline pipeline::Models make_models(const config::RunConfig& c, const pipeline::TrainConfig& tc) {
  return pipeline::Models::create(c.agent, c.critic_hidden, c.router, tc);
}

/// CrystalBLEU statistics come from the fixed side of the training split.
inline metrics::NgramStats crystal_stats(const corpus::Splits& s, const config::RunConfig& c) {
  std::vector<std::string> sources;
  sources.reserve(s.train.size());
  for (const auto& e : s.train) sources.push_back(e.fixed);
  return metrics::NgramStats::build(sources, c.crystal_k);
}

inline const std::vector<corpus::RepairExample>& pick(const corpus::Splits& s, const std::string& name) {
  if (name == "train") return s.train;
  if (name == "valid") return s.valid;
  if (name == "test") return s.test;
  throw config::ConfigError("split", "expected train, valid or test, got '" + name + "'");
}

inline metrics::MetricsReport evaluate_split(const agent::RepairAgent& a, const corpus::Splits& s,
                                             const std::string& name, const config::RunConfig& c) {
  const metrics::NgramStats stats = crystal_stats(s, c);
  pipeline::EvalOptions opt;
  opt.codebleu = c.codebleu;
  opt.ngram_stats = &stats;
  return pipeline::evaluate(pick(s, name), pipeline::greedy_repair(a), opt);
}

struct RunResult {
  pipeline::TrainSummary summary;
  metrics::MetricsReport test;

  json to_json(const config::RunConfig& c) const {
    json j = summary.to_json();
    j["mode"] = c.mode;
    j["seed"] = c.seed;
    j["test"] = pipeline::to_json(test);
    return j;
  }
};

/// Splits, trains and evaluates on the test split. With `out_dir` set the
/// metrics log, checkpoints and summary.json are written there.
inline RunResult train_and_evaluate(const config::RunConfig& c, const std::vector<corpus::RepairExample>& examples,
                                    const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                                    const pipeline::TrainHooks& hooks = {}) {
  c.validate();
  corpus::SplitSpec spec = c.split;
  const corpus::Splits s = corpus::split(examples, spec);
  const pipeline::TrainConfig tc = c.train_config();
  pipeline::Models models = make_models(c, tc);

  pipeline::TrainIO io;
  io.config_json = config::to_json(c).dump();
  std::ofstream log;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    log.open(*out_dir / "metrics.jsonl");
    if (!log) throw std::runtime_error("cannot write " + (*out_dir / "metrics.jsonl").string());
    io.log = &log;
    io.out_dir = *out_dir;
  }
  RunResult r;
  r.summary = pipeline::train(tc, c.ppo, s.train, s.valid, models, io, hooks);
  r.test = evaluate_split(models.agent, s, "test", c);
  if (out_dir) {
    json t = pipeline::to_json(r.test);
    t["type"] = "eval";
    t["split"] = "test";
    log << t.dump() << '\n';
    std::ofstream f(*out_dir / "summary.json");
    f << r.to_json(c).dump(2) << '\n';
    if (!f) throw std::runtime_error("cannot write summary.json");
  }
  return r;
}

struct Loaded {
  config::RunConfig config;
  pipeline::Models models;
};

/// Rebuilds the models stored in a checkpoint written by training.
inline Loaded load_checkpoint(const std::string& path) {
  const nn::Checkpoint ck = nn::Checkpoint::load(path);
  Loaded l;
  l.config = config::from_json(json::parse(ck.text("config")));
  const pipeline::TrainConfig tc = l.config.train_config();
  l.models = make_models(l.config, tc);
  l.models.restore(ck);
  return l;
}

}  // namespace patchforge::run
