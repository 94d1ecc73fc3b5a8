#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "patchforge/minilang/vocab.hpp"
#include "patchforge/nn.hpp"

namespace patchforge::agent {

using minilang::TokenVocab;
using nn::Graph;
using nn::Parameter;
using nn::ParamSet;
using nn::Tensor2;
using nn::Var;

class SequenceTooLong : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AgentConfig {
  std::size_t vocab_size = TokenVocab::minilang().size();
  std::size_t d_model = 64;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t d_ff = 128;
  std::size_t max_seq = 256;
  double sample_temperature = 0.8;
  std::size_t top_k = 20;
  double embed_init_std = 0.001;
  double head_init_std = 0.08;  // 0 -> 1/sqrt(d_model)

  void validate() const {
    if (vocab_size < 5) throw std::invalid_argument("agent.vocab_size too small");
    if (d_model == 0 || heads == 0 || d_model % heads != 0)
      throw std::invalid_argument("agent.d_model must be a positive multiple of agent.heads");
    if (layers == 0 || d_ff == 0) throw std::invalid_argument("agent.layers and agent.d_ff must be positive");
    if (max_seq < 4) throw std::invalid_argument("agent.max_seq too small");
    if (!(sample_temperature > 0.0)) throw std::invalid_argument("agent.sample_temperature must be positive");
  }
};

struct PpoConfig {
  double clip_epsilon = 0.2;
  std::size_t inner_epochs = 4;
  double value_coefficient = 0.5;
  std::size_t samples_per_input = 1;

  void validate() const {
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) throw std::invalid_argument("ppo.clip_epsilon must lie in (0, 1)");
    if (inner_epochs == 0) throw std::invalid_argument("ppo.inner_epochs must be positive");
    if (value_coefficient < 0.0) throw std::invalid_argument("ppo.value_coefficient must be non-negative");
    if (samples_per_input == 0) throw std::invalid_argument("ppo.samples_per_input must be positive");
  }
};

struct CriticConfig {
  std::size_t input_dim = 64;  // pooled agent state; a 7B backbone would give 512
  std::size_t hidden = 256;
};

/// Prompt and teacher-forcing target for one repair pair. Identifiers are
/// renamed jointly, first over the buggy input then over the fix.
struct EncodedPair {
  std::vector<int> prompt;  // BOS x SEP
  std::vector<int> target;  // y EOS
  minilang::Renaming renaming;
};

inline EncodedPair encode_pair(std::string_view buggy, std::string_view fixed,
                               const TokenVocab& vocab = TokenVocab::minilang()) {
  EncodedPair p;
  p.prompt.push_back(TokenVocab::kBos);
  auto x = minilang::encode_source(buggy, vocab, p.renaming);
  p.prompt.insert(p.prompt.end(), x.begin(), x.end());
  p.prompt.push_back(TokenVocab::kSep);
  p.target = minilang::encode_source(fixed, vocab, p.renaming);
  p.target.push_back(TokenVocab::kEos);
  return p;
}

inline EncodedPair encode_prompt(std::string_view buggy, const TokenVocab& vocab = TokenVocab::minilang()) {
  EncodedPair p;
  p.prompt.push_back(TokenVocab::kBos);
  auto x = minilang::encode_source(buggy, vocab, p.renaming);
  p.prompt.insert(p.prompt.end(), x.begin(), x.end());
  p.prompt.push_back(TokenVocab::kSep);
  return p;
}

/// One sampled repair and everything PPO needs about it.
struct EpisodeRecord {
  std::vector<int> prompt;          // BOS x SEP
  std::vector<int> patch;           // sampled continuation, EOS included when emitted
  std::vector<double> old_logprobs;  // one per patch token
  std::vector<double> state;        // pooled prompt representation fed to the critic
  double reward = 0.0;
  double value = 0.0;
  double advantage = 0.0;
  bool terminated = false;
};

/// Segment and in-segment position of every token of prompt ++ continuation.
/// Tokens before SEP form segment 0; SEP and what follows form segment 1.
/// Positions restart at 0 in each segment.
struct Layout {
  std::vector<int> segments;
  std::vector<int> positions;
};

inline Layout layout_for(const std::vector<int>& ids) {
  Layout l;
  l.segments.resize(ids.size());
  l.positions.resize(ids.size());
  int seg = 0, pos = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (seg == 0 && ids[i] == TokenVocab::kSep) {
      seg = 1;
      pos = 0;
    }
    l.segments[i] = seg;
    l.positions[i] = pos++;
  }
  return l;
}

/// Pre-norm decoder-only transformer over MiniLang agent tokens.
class RepairAgent {
 public:
  RepairAgent() = default;

  RepairAgent(AgentConfig cfg, nn::Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t d = cfg_.d_model, f = cfg_.d_ff, V = cfg_.vocab_size;
    auto lin = [&](const std::string& name, std::size_t in, std::size_t out) {
      params_.add(name + ".w", nn::normal_init(in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng));
      params_.add(name + ".b", Tensor2(1, out), false);
    };
    auto ln = [&](const std::string& name) {
      params_.add(name + ".g", Tensor2(1, d, 1.0), false);
      params_.add(name + ".b", Tensor2(1, d), false);
    };
    params_.add("tok_emb", nn::normal_init(V, d, cfg_.embed_init_std, rng));
    params_.add("seg_emb", nn::normal_init(2, d, cfg_.embed_init_std, rng));
    params_.add("pos_emb", nn::normal_init(cfg_.max_seq, d, cfg_.embed_init_std, rng));
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      ln(p + "ln1");
      lin(p + "q", d, d);
      lin(p + "k", d, d);
      lin(p + "v", d, d);
      lin(p + "o", d, d);
      ln(p + "ln2");
      lin(p + "ff1", d, f);
      lin(p + "ff2", f, d);
    }
    ln("ln_f");
    const double head_std = cfg_.head_init_std > 0.0 ? cfg_.head_init_std : 1.0 / std::sqrt(static_cast<double>(d));
    params_.add("head.w", nn::normal_init(d, V, head_std, rng));
    params_.add("head.b", Tensor2(1, V), false);
    bind();
  }

  RepairAgent(const RepairAgent& o) : cfg_(o.cfg_), params_(o.params_) { bind(); }
  RepairAgent& operator=(const RepairAgent& o) {
    if (this != &o) {
      cfg_ = o.cfg_;
      params_ = o.params_;
      bind();
    }
    return *this;
  }

  const AgentConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  struct Forward {
    Var hidden;  // T x d after the final layer norm
    Var logits;  // T x V
  };

  /// Records the full forward pass of `ids` on `g`.
  Forward forward(Graph& g, const std::vector<int>& ids) {
    if (ids.empty()) throw nn::ShapeError("forward: empty sequence");
    const Layout lay = layout_for(ids);
    for (int p : lay.positions)
      if (static_cast<std::size_t>(p) >= cfg_.max_seq) throw SequenceTooLong("segment longer than max_seq");
    Var x = g.add(g.add(g.embedding(g.param(*tok_emb_), ids), g.embedding(g.param(*seg_emb_), lay.segments)),
                  g.embedding(g.param(*pos_emb_), lay.positions));
    for (const Block& b : blocks_) {
      Var a = g.layer_norm(x, g.param(*b.ln1_g), g.param(*b.ln1_b));
      Var q = g.linear(a, g.param(*b.wq), g.param(*b.bq));
      Var k = g.linear(a, g.param(*b.wk), g.param(*b.bk));
      Var v = g.linear(a, g.param(*b.wv), g.param(*b.bv));
      Var att = g.causal_attention(q, k, v, cfg_.heads);
      x = g.add(x, g.linear(att, g.param(*b.wo), g.param(*b.bo)));
      Var h = g.layer_norm(x, g.param(*b.ln2_g), g.param(*b.ln2_b));
      Var ff = g.linear(g.relu(g.linear(h, g.param(*b.w1), g.param(*b.b1))), g.param(*b.w2), g.param(*b.b2));
      x = g.add(x, ff);
    }
    Var hidden = g.layer_norm(x, g.param(*lnf_g_), g.param(*lnf_b_));
    Var logits = g.linear(hidden, g.param(*head_w_), g.param(*head_b_));
    return {hidden, logits};
  }

  /// Teacher-forced inputs and per-position targets for prompt ++ target.
  /// Prompt positions other than the last carry no target (-1).
  static void teacher_forcing(const std::vector<int>& prompt, const std::vector<int>& target,
                              std::vector<int>& ids, std::vector<int>& labels) {
    ids = prompt;
    ids.insert(ids.end(), target.begin(), target.end());
    ids.pop_back();
    labels.assign(ids.size(), -1);
    for (std::size_t j = 0; j < target.size(); ++j) labels[prompt.size() - 1 + j] = target[j];
  }

  void check_fits(const std::vector<int>& prompt, const std::vector<int>& target) const {
    if (prompt.empty()) throw std::invalid_argument("empty prompt");
    if (prompt.size() > cfg_.max_seq || target.size() > cfg_.max_seq)
      throw SequenceTooLong("prompt of " + std::to_string(prompt.size()) + " or target of " +
                            std::to_string(target.size()) + " tokens exceeds max_seq " + std::to_string(cfg_.max_seq));
  }

  /// Mean per-token negative log-likelihood of each target given its prompt.
  /// Gradients of that mean are accumulated into the parameters.
  double sft_loss(const std::vector<const EncodedPair*>& batch, bool accumulate = true) {
    std::size_t total = 0;
    for (const EncodedPair* p : batch) {
      check_fits(p->prompt, p->target);
      total += p->target.size();
    }
    if (total == 0) return 0.0;
    const double w = 1.0 / static_cast<double>(total);
    double loss = 0.0;
    std::vector<int> ids, labels;
    for (const EncodedPair* p : batch) {
      teacher_forcing(p->prompt, p->target, ids, labels);
      Graph g;
      Var l = g.softmax_cross_entropy(forward(g, ids).logits, labels, w);
      loss += g.scalar(l);
      if (accumulate) g.backward(l);
    }
    return loss;
  }

  /// Log-probability of each patch token under the untempered policy.
  std::vector<double> sequence_logprobs(const std::vector<int>& prompt, const std::vector<int>& patch) {
    if (patch.empty()) return {};
    check_fits(prompt, patch);
    std::vector<int> ids, labels;
    teacher_forcing(prompt, patch, ids, labels);
    Graph g;
    Var lp = g.log_softmax_gather(forward(g, ids).logits, labels);
    const Tensor2& v = g.value(lp);
    return {v.data.begin() + static_cast<std::ptrdiff_t>(prompt.size() - 1), v.data.end()};
  }

  /// Mean over non-PAD positions of the final hidden states of `prompt`.
  std::vector<double> pool_state(const std::vector<int>& prompt) {
    if (prompt.size() > cfg_.max_seq) throw SequenceTooLong("prompt exceeds max_seq");
    Graph g;
    Var pooled = pool_state(g, prompt);
    return g.value(pooled).data;
  }

  Var pool_state(Graph& g, const std::vector<int>& prompt) {
    std::vector<char> mask(prompt.size());
    for (std::size_t i = 0; i < prompt.size(); ++i) mask[i] = prompt[i] != TokenVocab::kPad;
    return g.mean_rows(forward(g, prompt).hidden, mask);
  }

  /// Incremental decoder with a key/value cache. Mirrors forward() token by
  /// token without recording a tape.
  class Decoder {
   public:
    explicit Decoder(const RepairAgent& a) : a_(a) {
      const std::size_t L = a.cfg_.layers;
      keys_.resize(L);
      values_.resize(L);
      for (std::size_t l = 0; l < L; ++l) {
        keys_[l].reserve(2 * a.cfg_.max_seq * a.cfg_.d_model);
        values_[l].reserve(2 * a.cfg_.max_seq * a.cfg_.d_model);
      }
    }

    std::size_t length() const { return len_; }

    /// Feeds one token and returns the logits predicting the next one.
    const std::vector<double>& step(int token, int segment, int position) {
      const AgentConfig& c = a_.cfg_;
      const std::size_t d = c.d_model, dh = d / c.heads;
      if (static_cast<std::size_t>(position) >= c.max_seq) throw SequenceTooLong("decoder ran past max_seq");
      x_.assign(d, 0.0);
      const double* te = a_.tok_emb_->value.row_ptr(static_cast<std::size_t>(token));
      const double* se = a_.seg_emb_->value.row_ptr(static_cast<std::size_t>(segment));
      const double* pe = a_.pos_emb_->value.row_ptr(static_cast<std::size_t>(position));
      for (std::size_t i = 0; i < d; ++i) x_[i] = (te[i] + se[i]) + pe[i];
      buf_a_.resize(d);
      xhat_.resize(d);
      q_.resize(d);
      att_.resize(d);
      proj_.resize(d);
      hid_.resize(c.d_ff);
      const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
      for (std::size_t l = 0; l < a_.blocks_.size(); ++l) {
        const Block& b = a_.blocks_[l];
        nn::kernels::layer_norm_row(x_.data(), d, 1e-5, b.ln1_g->value.data.data(), b.ln1_b->value.data.data(),
                                    xhat_.data(), buf_a_.data());
        nn::kernels::affine_row(buf_a_.data(), b.wq->value, b.bq->value.data.data(), q_.data());
        keys_[l].resize((len_ + 1) * d);
        values_[l].resize((len_ + 1) * d);
        nn::kernels::affine_row(buf_a_.data(), b.wk->value, b.bk->value.data.data(), keys_[l].data() + len_ * d);
        nn::kernels::affine_row(buf_a_.data(), b.wv->value, b.bv->value.data.data(), values_[l].data() + len_ * d);
        std::fill(att_.begin(), att_.end(), 0.0);
        scores_.resize(len_ + 1);
        for (std::size_t h = 0; h < c.heads; ++h) {
          const std::size_t off = h * dh;
          double mx = -INFINITY;
          for (std::size_t j = 0; j <= len_; ++j) {
            scores_[j] = nn::kernels::dot(q_.data() + off, keys_[l].data() + j * d + off, dh) * sc;
            mx = std::max(mx, scores_[j]);
          }
          double s = 0.0;
          for (std::size_t j = 0; j <= len_; ++j) {
            scores_[j] = std::exp(scores_[j] - mx);
            s += scores_[j];
          }
          for (std::size_t j = 0; j <= len_; ++j) {
            nn::kernels::axpy(scores_[j] / s, values_[l].data() + j * d + off, att_.data() + off, dh);
          }
        }
        nn::kernels::affine_row(att_.data(), b.wo->value, b.bo->value.data.data(), proj_.data());
        for (std::size_t i = 0; i < d; ++i) x_[i] += proj_[i];
        nn::kernels::layer_norm_row(x_.data(), d, 1e-5, b.ln2_g->value.data.data(), b.ln2_b->value.data.data(),
                                    xhat_.data(), buf_a_.data());
        nn::kernels::affine_row(buf_a_.data(), b.w1->value, b.b1->value.data.data(), hid_.data());
        for (double& v : hid_) v = v > 0.0 ? v : 0.0;
        nn::kernels::affine_row(hid_.data(), b.w2->value, b.b2->value.data.data(), proj_.data());
        for (std::size_t i = 0; i < d; ++i) x_[i] += proj_[i];
      }
      nn::kernels::layer_norm_row(x_.data(), d, 1e-5, a_.lnf_g_->value.data.data(), a_.lnf_b_->value.data.data(),
                                  xhat_.data(), buf_a_.data());
      logits_.resize(c.vocab_size);
      nn::kernels::affine_row(buf_a_.data(), a_.head_w_->value, a_.head_b_->value.data.data(), logits_.data());
      ++len_;
      return logits_;
    }

   private:
    const RepairAgent& a_;
    std::size_t len_ = 0;
    std::vector<std::vector<double>> keys_, values_;
    std::vector<double> x_, buf_a_, xhat_, q_, att_, proj_, hid_, scores_, logits_;
  };

  /// Autoregressive continuation of `prompt` until EOS or max_seq. Sampling
  /// uses the configured temperature and top-k; `greedy` takes the argmax.
  /// Recorded log-probs are those of the untempered policy.
  EpisodeRecord sample(const std::vector<int>& prompt, nn::Rng& rng, bool greedy = false) const {
    if (prompt.empty()) throw std::invalid_argument("empty prompt");
    if (prompt.size() > cfg_.max_seq) throw SequenceTooLong("prompt exceeds max_seq");
    EpisodeRecord ep;
    ep.prompt = prompt;
    Decoder dec(*this);
    const Layout lay = layout_for(prompt);
    const std::vector<double>* logits = nullptr;
    for (std::size_t i = 0; i < prompt.size(); ++i) logits = &dec.step(prompt[i], lay.segments[i], lay.positions[i]);
    const std::size_t V = cfg_.vocab_size;
    std::vector<double> logp(V), weights(V);
    std::vector<int> order(V);
    int seg1_pos = lay.segments.back() == 1 ? lay.positions.back() : -1;
    while (true) {
      nn::kernels::log_softmax_row(logits->data(), V, logp.data());
      int tok = 0;
      if (greedy) {
        tok = static_cast<int>(std::max_element(logits->begin(), logits->end()) - logits->begin());
      } else {
        tok = draw(*logits, rng, order, weights);
      }
      ep.patch.push_back(tok);
      ep.old_logprobs.push_back(logp[static_cast<std::size_t>(tok)]);
      if (tok == TokenVocab::kEos) {
        ep.terminated = true;
        break;
      }
      if (ep.patch.size() >= cfg_.max_seq) break;
      // A SEP emitted in the patch does not reopen segment 1.
      ++seg1_pos;
      logits = &dec.step(tok, 1, seg1_pos);
    }
    return ep;
  }

  void save(nn::Checkpoint& ck, const std::string& prefix = "agent/") const { ck.put_params(prefix, params_); }
  void load(const nn::Checkpoint& ck, const std::string& prefix = "agent/") { ck.get_params(prefix, params_); }

 private:
  struct Block {
    Parameter *ln1_g, *ln1_b, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo, *ln2_g, *ln2_b, *w1, *b1, *w2, *b2;
  };

  void bind() {
    tok_emb_ = &params_.get("tok_emb");
    seg_emb_ = &params_.get("seg_emb");
    pos_emb_ = &params_.get("pos_emb");
    blocks_.clear();
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      auto P = [&](const std::string& n) { return &params_.get(p + n); };
      blocks_.push_back({P("ln1.g"), P("ln1.b"), P("q.w"), P("q.b"), P("k.w"), P("k.b"), P("v.w"), P("v.b"),
                         P("o.w"), P("o.b"), P("ln2.g"), P("ln2.b"), P("ff1.w"), P("ff1.b"), P("ff2.w"),
                         P("ff2.b")});
    }
    lnf_g_ = &params_.get("ln_f.g");
    lnf_b_ = &params_.get("ln_f.b");
    head_w_ = &params_.get("head.w");
    head_b_ = &params_.get("head.b");
  }

  int draw(const std::vector<double>& logits, nn::Rng& rng, std::vector<int>& order,
           std::vector<double>& weights) const {
    const std::size_t V = logits.size();
    const std::size_t k = cfg_.top_k == 0 ? V : std::min(cfg_.top_k, V);
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](int a, int b) { return logits[a] > logits[b] || (logits[a] == logits[b] && a < b); });
    const double t = cfg_.sample_temperature;
    const double mx = logits[order[0]] / t;
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      weights[i] = std::exp(logits[order[i]] / t - mx);
      s += weights[i];
    }
    double u = rng.uniform() * s;
    for (std::size_t i = 0; i < k; ++i) {
      u -= weights[i];
      if (u < 0.0) return order[i];
    }
    return order[k - 1];
  }

  AgentConfig cfg_;
  ParamSet params_;
  Parameter *tok_emb_ = nullptr, *seg_emb_ = nullptr, *pos_emb_ = nullptr;
  std::vector<Block> blocks_;
  Parameter *lnf_g_ = nullptr, *lnf_b_ = nullptr, *head_w_ = nullptr, *head_b_ = nullptr;
};

/// Value network: input -> hidden -> hidden -> scalar, ReLU activations.
class Critic {
 public:
  Critic() = default;

  Critic(CriticConfig cfg, nn::Rng& rng) : cfg_(cfg) {
    if (cfg_.input_dim == 0 || cfg_.hidden == 0) throw std::invalid_argument("critic dimensions must be positive");
    const std::size_t in = cfg_.input_dim, h = cfg_.hidden;
    params_.add("fc1.w", nn::normal_init(in, h, std::sqrt(2.0 / static_cast<double>(in)), rng));
    params_.add("fc1.b", Tensor2(1, h), false);
    params_.add("fc2.w", nn::normal_init(h, h, std::sqrt(2.0 / static_cast<double>(h)), rng));
    params_.add("fc2.b", Tensor2(1, h), false);
    params_.add("out.w", nn::normal_init(h, 1, 1.0 / std::sqrt(static_cast<double>(h)), rng));
    params_.add("out.b", Tensor2(1, 1), false);
  }

  const CriticConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  /// n x input_dim -> n x 1.
  Var forward(Graph& g, Var input) {
    auto P = [&](const char* n) { return g.param(params_.get(n)); };
    Var h1 = g.relu(g.linear(input, P("fc1.w"), P("fc1.b")));
    Var h2 = g.relu(g.linear(h1, P("fc2.w"), P("fc2.b")));
    return g.linear(h2, P("out.w"), P("out.b"));
  }

  double value(const std::vector<double>& state) {
    Graph g;
    return g.scalar(forward(g, g.input(Tensor2::row(state))));
  }

  void save(nn::Checkpoint& ck, const std::string& prefix = "critic/") const { ck.put_params(prefix, params_); }
  void load(const nn::Checkpoint& ck, const std::string& prefix = "critic/") { ck.get_params(prefix, params_); }

 private:
  CriticConfig cfg_;
  ParamSet params_;
};

struct PpoStats {
  double policy_loss = 0.0;  // first inner epoch, before any update
  double value_loss = 0.0;
  double total = 0.0;
  std::size_t tokens = 0;
};

/// Clipped-surrogate PPO over a batch of scored episodes. Each inner epoch
/// recomputes log-probs under the current agent, takes one optimizer step on
/// the agent and one on the critic. On NonFiniteError both networks and both
/// optimizers are restored and the error is rethrown.
inline PpoStats ppo_update(const std::vector<EpisodeRecord>& episodes, RepairAgent& agent,
                           nn::Optimizer& agent_opt, Critic& critic, nn::Optimizer& critic_opt,
                           const PpoConfig& cfg) {
  cfg.validate();
  PpoStats stats;
  if (episodes.empty()) return stats;
  for (const auto& ep : episodes) {
    if (ep.old_logprobs.size() != ep.patch.size())
      throw std::invalid_argument("episode log-probs do not match its patch");
    stats.tokens += ep.patch.size();
  }
  const ParamSet agent_backup = agent.params();
  const ParamSet critic_backup = critic.params();
  auto restore = [&] {
    agent.params().assign_state(agent_backup);
    critic.params().assign_state(critic_backup);
  };
  const std::size_t din = episodes.front().state.size();
  Tensor2 states(episodes.size(), din);
  std::vector<double> rewards(episodes.size());
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    if (episodes[i].state.size() != din) throw nn::ShapeError("episode states differ in size");
    std::copy(episodes[i].state.begin(), episodes[i].state.end(), states.row_ptr(i));
    rewards[i] = episodes[i].reward;
  }
  try {
    for (std::size_t epoch = 0; epoch < cfg.inner_epochs; ++epoch) {
      double policy = 0.0;
      if (stats.tokens > 0) {
        const double w = 1.0 / static_cast<double>(stats.tokens);
        std::vector<int> ids, labels;
        for (const auto& ep : episodes) {
          if (ep.patch.empty()) continue;
          agent.check_fits(ep.prompt, ep.patch);
          RepairAgent::teacher_forcing(ep.prompt, ep.patch, ids, labels);
          Graph g;
          Var lp = g.log_softmax_gather(agent.forward(g, ids).logits, labels);
          Var patch_lp = g.slice_rows(lp, ep.prompt.size() - 1, ids.size());
          std::vector<double> adv(ep.patch.size(), ep.advantage);
          Var obj = g.ppo_clip_objective(patch_lp, ep.old_logprobs, adv, cfg.clip_epsilon, w);
          policy += g.scalar(obj);
          g.backward(obj);
        }
      }
      Graph cg;
      Var vloss = cg.mse(critic.forward(cg, cg.input(states)), rewards);
      const double value = cg.scalar(vloss);
      cg.backward(vloss);
      if (epoch == 0) {
        stats.policy_loss = policy;
        stats.value_loss = value;
        stats.total = policy + cfg.value_coefficient * value;
      }
      if (!std::isfinite(policy) || !std::isfinite(value)) throw nn::NonFiniteError("non-finite PPO loss");
      for (Parameter& p : critic.params())
        for (double& gv : p.grad.data) gv *= cfg.value_coefficient;
      agent_opt.step(agent.params());
      critic_opt.step(critic.params());
    }
  } catch (const nn::NonFiniteError&) {
    restore();
    throw;
  }
  return stats;
}

}  // namespace patchforge::agent
