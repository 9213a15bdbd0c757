#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "headliner/autodiff.hpp"
#include "headliner/nn.hpp"
#include "headliner/rng.hpp"
#include "headliner/vocab.hpp"

namespace headliner {

struct GeneratorConfig {
  std::size_t embed_dim = 64;
  std::size_t attn_dim = 64;
  std::size_t breaking_hidden = 32;
  std::size_t critic_hidden = 32;
};

inline void init_generator(ParamStore& ps, const GeneratorConfig& cfg, std::size_t vocab_size,
                           Rng& rng) {
  const std::size_t d = cfg.embed_dim;
  ps.add("gen.embed", uniform_init({vocab_size, d}, 0.1, rng));
  init_gru(ps, "gen.body.gru", d, d, rng);
  init_additive_pool(ps, "gen.body.pool", d, cfg.attn_dim, rng);
  init_linear(ps, "gen.init", 2 * d, d, rng);
  init_gru(ps, "gen.dec.gru", d, d, rng);
  ps.add("gen.attn.Wh", glorot_uniform({d, cfg.attn_dim}, rng));
  ps.add("gen.attn.Ws", glorot_uniform({d, cfg.attn_dim}, rng));
  ps.add("gen.attn.b", Tensor({cfg.attn_dim}));
  ps.add("gen.attn.q", glorot_uniform({cfg.attn_dim}, rng));
  init_linear(ps, "gen.out1", 2 * d, d, rng);
  init_linear(ps, "gen.out2", d, vocab_size, rng);
  ps.add("gen.gate.w", glorot_uniform({3 * d}, rng));
  ps.add("gen.gate.b", Tensor::scalar(0.0));
}

inline void init_breaking(ParamStore& ps, const GeneratorConfig& cfg, Rng& rng) {
  ps.add("brk.W1", glorot_uniform({cfg.embed_dim, cfg.breaking_hidden}, rng));
  ps.add("brk.b1", Tensor({cfg.breaking_hidden}));
  ps.add("brk.w2", glorot_uniform({cfg.breaking_hidden}, rng));
  ps.add("brk.b2", Tensor::scalar(0.0));
}

// ---- source token bookkeeping ----------------------------------------------------
// The generation vocabulary is closed. Source tokens outside it are reachable
// only through the copy term, via per-example extended ids at V, V+1, ...

struct SourceMap {
  std::vector<int> input_ids;         // vocab ids fed to the encoder (<unk> for OOV)
  std::vector<std::size_t> ext_ids;   // extended-vocabulary id per source position
  std::vector<std::string> oov;       // OOV token strings, index = ext id - V
  std::size_t vocab_size = 0;
  std::size_t ext_size = 0;
};

inline SourceMap map_source(const Vocabulary& vocab, const std::vector<std::string>& tokens) {
  SourceMap m;
  m.vocab_size = vocab.size();
  for (const auto& tok : tokens) {
    const int id = vocab.id(tok);
    if (id != Vocabulary::kUnk || vocab.token(Vocabulary::kUnk) == tok) {
      m.input_ids.push_back(id);
      m.ext_ids.push_back(static_cast<std::size_t>(id));
      continue;
    }
    m.input_ids.push_back(Vocabulary::kUnk);
    std::size_t k = 0;
    for (; k < m.oov.size(); ++k) {
      if (m.oov[k] == tok) break;
    }
    if (k == m.oov.size()) m.oov.push_back(tok);
    m.ext_ids.push_back(vocab.size() + k);
  }
  m.ext_size = vocab.size() + m.oov.size();
  return m;
}

// extended id of a target token: vocab id, else its copy id if in the source,
// else <unk>
inline std::size_t target_ext_id(const Vocabulary& vocab, const SourceMap& src,
                                 const std::string& token) {
  const int id = vocab.id(token);
  if (id != Vocabulary::kUnk || vocab.token(Vocabulary::kUnk) == token) {
    return static_cast<std::size_t>(id);
  }
  for (std::size_t k = 0; k < src.oov.size(); ++k) {
    if (src.oov[k] == token) return vocab.size() + k;
  }
  return static_cast<std::size_t>(Vocabulary::kUnk);
}

inline std::string ext_token_string(const Vocabulary& vocab, const SourceMap& src,
                                    std::size_t ext_id) {
  if (ext_id < vocab.size()) return vocab.token(static_cast<int>(ext_id));
  return src.oov.at(ext_id - vocab.size());
}

// ---- body encoder ------------------------------------------------------------------

struct BodyEncoding {
  Var hidden;  // {n,d}, one state per source token
  Var pooled;  // {d}, attention-pooled summary
  SourceMap source;
};

inline BodyEncoding encode_body(BoundParams& bp, const GeneratorConfig& cfg,
                                const Vocabulary& vocab,
                                const std::vector<std::string>& body_tokens) {
  if (body_tokens.empty()) throw ValidationError("encode_body: empty body");
  BodyEncoding out;
  out.source = map_source(vocab, body_tokens);
  Tape& tape = bp.tape();
  Var x = rows(bp["gen.embed"], out.source.input_ids);  // {n,d}
  Var h = tape.constant(Tensor({cfg.embed_dim}));
  std::vector<Var> states;
  states.reserve(body_tokens.size());
  for (std::size_t j = 0; j < body_tokens.size(); ++j) {
    h = gru_cell(bp, "gen.body.gru", row(x, j), h);
    states.push_back(h);
  }
  out.hidden = stack_rows(tape, std::span<const Var>(states.data(), states.size()),
                          cfg.embed_dim);
  out.pooled = additive_pool(bp, "gen.body.pool", out.hidden);
  return out;
}

// two-layer feed-forward head on the pooled body; output in [0,1]
inline Var breaking_predict(BoundParams& bp, Var pooled) {
  Var h = tanh_op(add(matmul(pooled, bp["brk.W1"]), bp["brk.b1"]));
  Var logit = add(dot(h, bp["brk.w2"]), bp["brk.b2"]);
  return sigmoid(logit);
}

inline Var breaking_logit(BoundParams& bp, Var pooled) {
  Var h = tanh_op(add(matmul(pooled, bp["brk.W1"]), bp["brk.b1"]));
  return add(dot(h, bp["brk.w2"]), bp["brk.b2"]);
}

// ---- pointer-generator decoding ------------------------------------------------------

// P(w) = lambda * P_vocab(w) + (1 - lambda) * sum_{j: src_j = w} attn_j,
// over the extended vocabulary. Copy mass for repeated source tokens
// aggregates onto one bin.
inline Var mix_pointer_distribution(Var p_vocab, Var attn, Var lambda,
                                    const std::vector<std::size_t>& src_ext_ids,
                                    std::size_t ext_size) {
  if (lambda.value().numel() != 1) throw DimensionError("mix: lambda must be scalar");
  if (p_vocab.value().numel() > ext_size) throw DimensionError("mix: ext smaller than vocab");
  Var gen_part = scale_by(lambda, pad_to(p_vocab, ext_size));
  Var copy_part = scale_by(affine(lambda, -1.0, 1.0),
                           scatter_add(attn, src_ext_ids, ext_size));
  return add(gen_part, copy_part);
}

// test-only overrides; never reachable from the CLI
struct DecodeHooks {
  std::optional<double> force_lambda;
};

struct DecoderStep {
  Var state;       // s_{t+1}
  Var attention;   // {n} over source positions
  Var context;     // {d}
  Var lambda;      // scalar gate in [0,1]
  Var vocab_dist;  // extended distribution, sums to 1
};

// s_0 from [alpha * e_u ; v]
inline Var initial_state(BoundParams& bp, Var e_u, Var alpha, Var pooled) {
  Var gated = scale_by(alpha, e_u);
  return tanh_op(linear(bp, "gen.init", concat({gated, pooled})));
}

inline DecoderStep decode_step(BoundParams& bp, int prev_token, Var state,
                               const BodyEncoding& body, Var e_u, Var alpha,
                               const DecodeHooks* hooks = nullptr) {
  if (alpha.value().numel() != 1 || alpha.value()[0] < 0.0 || alpha.value()[0] > 1.0) {
    throw ContractError("decode_step: alpha must be a scalar in [0,1]");
  }
  Tape& tape = bp.tape();
  DecoderStep out;
  Var x = row(rows(bp["gen.embed"], {prev_token}), 0);
  out.state = gru_cell(bp, "gen.dec.gru", x, state);

  // additive attention over encoder states
  Var keys = add(matmul(body.hidden, bp["gen.attn.Wh"]),
                 add(matmul(out.state, bp["gen.attn.Ws"]), bp["gen.attn.b"]));
  out.attention = softmax(matmul(tanh_op(keys), bp["gen.attn.q"]));
  out.context = vecmat(out.attention, body.hidden);

  Var feat = tanh_op(linear(bp, "gen.out1", concat({out.state, out.context})));
  Var p_vocab = softmax(linear(bp, "gen.out2", feat));

  if (hooks && hooks->force_lambda) {
    out.lambda = tape.constant(Tensor::scalar(*hooks->force_lambda));
  } else {
    Var gate_in = concat({out.context, out.state, scale_by(alpha, e_u)});
    out.lambda = sigmoid(add(dot(gate_in, bp["gen.gate.w"]), bp["gen.gate.b"]));
  }
  out.vocab_dist = mix_pointer_distribution(p_vocab, out.attention, out.lambda,
                                            body.source.ext_ids, body.source.ext_size);
  if (!out.vocab_dist.value().all_finite()) {
    throw NumericError("decode_step: non-finite vocabulary distribution");
  }
  return out;
}

// per-step log P(target_t) with teacher forcing; targets are extended ids and
// should end with </s>
inline std::vector<Var> stepwise_log_probs(BoundParams& bp, const BodyEncoding& body, Var e_u,
                                           Var alpha, const std::vector<std::size_t>& targets,
                                           const DecodeHooks* hooks = nullptr) {
  std::vector<Var> out;
  out.reserve(targets.size());
  Var state = initial_state(bp, e_u, alpha, body.pooled);
  int prev = Vocabulary::kBos;
  for (const std::size_t target : targets) {
    const DecoderStep step = decode_step(bp, prev, state, body, e_u, alpha, hooks);
    out.push_back(log_op(pick(step.vocab_dist, target)));
    state = step.state;
    prev = target < body.source.vocab_size ? static_cast<int>(target) : Vocabulary::kUnk;
  }
  return out;
}

// teacher-forced negative log-likelihood of a token sequence (nats)
inline Var sequence_nll(BoundParams& bp, const BodyEncoding& body, Var e_u, Var alpha,
                        const Vocabulary& vocab, const std::vector<std::string>& target_tokens) {
  std::vector<std::size_t> targets;
  targets.reserve(target_tokens.size() + 1);
  for (const auto& tok : target_tokens) targets.push_back(target_ext_id(vocab, body.source, tok));
  targets.push_back(static_cast<std::size_t>(Vocabulary::kEos));
  const auto logps = stepwise_log_probs(bp, body, e_u, alpha, targets);
  Var total = logps[0];
  for (std::size_t i = 1; i < logps.size(); ++i) total = add(total, logps[i]);
  return neg(total);
}

// ---- beam search -----------------------------------------------------------------------

struct BeamHypothesis {
  std::vector<int> tokens;  // extended ids, </s> not included
  double score = 0.0;       // length-normalized log probability
  double log_prob = 0.0;    // total log probability including </s>
};

// Generic beam core over a step function: step(prev_token, state) ->
// (log-prob vector over the extended vocabulary, next state). Scores are
// normalized by the number of emitted tokens (the </s> step counts).
template <typename State, typename StepFn>
std::vector<BeamHypothesis> beam_search_core(const State& s0, StepFn&& step, int eos_token,
                                             int width, int max_len) {
  if (width < 1) throw ConfigError("beam_search: width must be >= 1");
  if (max_len < 1) throw ConfigError("beam_search: max_len must be >= 1");

  struct Beam {
    std::vector<int> tokens;
    double log_prob = 0.0;
    State state;
    int prev = Vocabulary::kBos;
  };
  std::vector<Beam> live{Beam{{}, 0.0, s0, Vocabulary::kBos}};
  std::vector<BeamHypothesis> done;

  for (int t = 0; t < max_len && !live.empty(); ++t) {
    struct Cand {
      std::size_t beam;
      int token;
      double log_prob;
      State state;
    };
    std::vector<Cand> cands;
    for (std::size_t b = 0; b < live.size(); ++b) {
      auto [logps, next_state] = step(live[b].prev, live[b].state);
      // top `width` continuations of this beam suffice
      std::vector<int> order(logps.size());
      for (std::size_t i = 0; i < logps.size(); ++i) order[i] = static_cast<int>(i);
      const std::size_t keep = std::min<std::size_t>(width, order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep),
                        order.end(), [&](int x, int y) {
                          if (logps[static_cast<std::size_t>(x)] !=
                              logps[static_cast<std::size_t>(y)])
                            return logps[static_cast<std::size_t>(x)] >
                                   logps[static_cast<std::size_t>(y)];
                          return x < y;
                        });
      for (std::size_t i = 0; i < keep; ++i) {
        const int tok = order[i];
        const double lp = logps[static_cast<std::size_t>(tok)];
        if (lp == -std::numeric_limits<double>::infinity()) continue;
        cands.push_back({b, tok, live[b].log_prob + lp, next_state});
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      if (a.beam != b.beam) return a.beam < b.beam;
      return a.token < b.token;
    });
    std::vector<Beam> next;
    for (const auto& c : cands) {
      if (c.token == eos_token) {
        const double len = static_cast<double>(live[c.beam].tokens.size() + 1);
        done.push_back({live[c.beam].tokens, c.log_prob / len, c.log_prob});
        continue;
      }
      if (static_cast<int>(next.size()) >= width) continue;
      Beam nb;
      nb.tokens = live[c.beam].tokens;
      nb.tokens.push_back(c.token);
      nb.log_prob = c.log_prob;
      nb.state = c.state;
      nb.prev = c.token;
      next.push_back(std::move(nb));
    }
    live = std::move(next);
  }
  for (const auto& b : live) {
    if (b.tokens.empty()) continue;
    done.push_back({b.tokens, b.log_prob / static_cast<double>(b.tokens.size()), b.log_prob});
  }
  std::sort(done.begin(), done.end(), [](const BeamHypothesis& a, const BeamHypothesis& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.tokens < b.tokens;
  });
  if (static_cast<int>(done.size()) > width) done.resize(static_cast<std::size_t>(width));
  return done;
}

namespace detail {

// no-grad decode step shared by beam search and sampling; prev extended ids
// outside the vocabulary feed <unk> back in
template <typename F>
auto model_step_fn(BoundParams& bp, const BodyEncoding& body, Var e_u, Var alpha, F&& to_logp) {
  return [&bp, &body, e_u, alpha, to_logp](int prev_ext, Var state) {
    const int prev = prev_ext < static_cast<int>(body.source.vocab_size)
                         ? prev_ext
                         : Vocabulary::kUnk;
    const DecoderStep step = decode_step(bp, prev, state, body, e_u, alpha);
    return std::make_pair(to_logp(step.vocab_dist.value()), step.state);
  };
}

inline std::vector<double> dist_to_logps(const Tensor& dist) {
  std::vector<double> out(dist.numel());
  for (std::size_t i = 0; i < dist.numel(); ++i) {
    out[i] = dist[i] > 0.0 ? std::log(dist[i]) : -std::numeric_limits<double>::infinity();
  }
  return out;
}

}  // namespace detail

// Length-normalized beam search over the trained decoder. Runs without
// gradients; the caller supplies e_u and alpha as plain tensors.
inline std::vector<BeamHypothesis> beam_search(ParamStore& params, const GeneratorConfig& cfg,
                                               const Vocabulary& vocab,
                                               const std::vector<std::string>& body_tokens,
                                               const Tensor& e_u_value, double alpha_value,
                                               int width, int max_len) {
  Tape tape;
  BoundParams bp(tape, params);
  bp.freeze_prefix("");  // whole store is constant here
  const BodyEncoding body = encode_body(bp, cfg, vocab, body_tokens);
  Var e_u = tape.constant(e_u_value);
  Var alpha = tape.constant(Tensor::scalar(alpha_value));
  Var s0 = initial_state(bp, e_u, alpha, body.pooled);
  auto step = detail::model_step_fn(bp, body, e_u, alpha, detail::dist_to_logps);
  return beam_search_core<Var>(s0, step, Vocabulary::kEos, width, max_len);
}

// ---- sampling ------------------------------------------------------------------------

struct SampledHeadline {
  std::vector<int> tokens;       // extended ids, </s> not included
  std::vector<double> log_probs;  // per emitted step, </s> included
};

// ancestral sampling from the per-step mixture distribution
inline SampledHeadline sample_headline(ParamStore& params, const GeneratorConfig& cfg,
                                       const Vocabulary& vocab,
                                       const std::vector<std::string>& body_tokens,
                                       const Tensor& e_u_value, double alpha_value, int max_len,
                                       Rng& rng) {
  Tape tape;
  BoundParams bp(tape, params);
  bp.freeze_prefix("");
  const BodyEncoding body = encode_body(bp, cfg, vocab, body_tokens);
  Var e_u = tape.constant(e_u_value);
  Var alpha = tape.constant(Tensor::scalar(alpha_value));
  Var state = initial_state(bp, e_u, alpha, body.pooled);

  SampledHeadline out;
  int prev = Vocabulary::kBos;
  for (int t = 0; t < max_len; ++t) {
    const DecoderStep step = decode_step(bp, prev, state, body, e_u, alpha);
    const Tensor& dist = step.vocab_dist.value();
    // inverse-CDF draw keeps sampling reproducible across platforms
    const double u = rng.unit();
    double acc = 0.0;
    std::size_t pickd = dist.numel() - 1;
    for (std::size_t i = 0; i < dist.numel(); ++i) {
      acc += dist[i];
      if (u < acc) {
        pickd = i;
        break;
      }
    }
    out.log_probs.push_back(std::log(std::max(dist[pickd], 1e-300)));
    if (pickd == static_cast<std::size_t>(Vocabulary::kEos)) break;
    out.tokens.push_back(static_cast<int>(pickd));
    prev = pickd < body.source.vocab_size ? static_cast<int>(pickd) : Vocabulary::kUnk;
    state = step.state;
  }
  return out;
}

}  // namespace headliner
