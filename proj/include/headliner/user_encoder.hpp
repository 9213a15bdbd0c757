#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "headliner/autodiff.hpp"
#include "headliner/denoise.hpp"
#include "headliner/nn.hpp"
#include "headliner/vocab.hpp"

namespace headliner {

// ---- time-aware dwell masks ---------------------------------------------------
// Pure list transforms; masked positions are exactly 0. All three masks are
// projections (applying twice equals applying once) and never increase a value.

// keep the most recent K positions
inline std::vector<double> ipl_mask(const std::vector<double>& dwells, int k) {
  if (k < 1) throw ConfigError("ipl_mask: K must be >= 1");
  std::vector<double> out(dwells.size(), 0.0);
  const std::size_t L = dwells.size();
  const std::size_t start = L > static_cast<std::size_t>(k) ? L - static_cast<std::size_t>(k) : 0;
  for (std::size_t i = start; i < L; ++i) out[i] = dwells[i];
  return out;
}

// keep clicks inside the closed window [now - window, now]. An infinite
// window is the identity. With on_dwell the raw Eq-style reading is applied:
// the dwell value itself is compared against the window.
inline std::vector<double> iea_mask(const std::vector<double>& dwells,
                                    const std::vector<std::int64_t>& click_times,
                                    std::int64_t now, double window,
                                    bool on_dwell = false) {
  if (window < 0.0) throw ConfigError("iea_mask: window must be >= 0");
  if (dwells.size() != click_times.size()) {
    throw DimensionError("iea_mask: dwells and click_times must align");
  }
  if (std::isinf(window)) return dwells;
  std::vector<double> out(dwells.size(), 0.0);
  const double hi = static_cast<double>(now);
  const double lo = hi - window;
  for (std::size_t i = 0; i < dwells.size(); ++i) {
    const double t = on_dwell ? dwells[i] : static_cast<double>(click_times[i]);
    if (t >= lo && t <= hi) out[i] = dwells[i];
  }
  return out;
}

// keep dwells strictly above the mean; the mean runs over all non-outlier
// positions of the (news-level filtered) dwell list, flagged outliers are
// excluded from the mean but remain eligible for keeping
inline std::vector<double> sim_mask(const std::vector<double>& dwells,
                                    const std::vector<bool>& outlier_flags) {
  if (!outlier_flags.empty() && outlier_flags.size() != dwells.size()) {
    throw DimensionError("sim_mask: flag list must align with dwells");
  }
  std::vector<double> out(dwells.size(), 0.0);
  if (dwells.empty()) return out;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < dwells.size(); ++i) {
    if (!outlier_flags.empty() && outlier_flags[i]) continue;
    sum += dwells[i];
    ++n;
  }
  const double mean = n == 0 ? 0.0 : sum / static_cast<double>(n);
  for (std::size_t i = 0; i < dwells.size(); ++i) {
    if (dwells[i] > mean) out[i] = dwells[i];
  }
  return out;
}

// (t - min) / (max - min) over the full list; degenerate max == min gives all
// zeros so a signal-free facet contributes nothing
inline std::vector<double> minmax_weights(const std::vector<double>& masked) {
  std::vector<double> out(masked.size(), 0.0);
  if (masked.empty()) return out;
  double lo = masked[0], hi = masked[0];
  for (double v : masked) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi == lo) return out;
  for (std::size_t i = 0; i < masked.size(); ++i) out[i] = (masked[i] - lo) / (hi - lo);
  return out;
}

// ---- encoder ---------------------------------------------------------------------

struct UserEncoderConfig {
  std::size_t embed_dim = 64;
  std::size_t heads = 8;
  std::size_t attn_dim = 64;
  int ipl_k = 30;
  double iea_window_seconds = 604800.0;  // one week
  bool iea_on_dwell = false;
  bool use_ipl = true;
  bool use_iea = true;
  bool use_sim = true;
  // off: dwell is ignored entirely and every facet weights history uniformly
  bool use_time_filter = true;
};

inline void init_user_encoder(ParamStore& ps, const UserEncoderConfig& cfg,
                              std::size_t vocab_size, Rng& rng) {
  if (cfg.heads == 0 || cfg.embed_dim % cfg.heads != 0) {
    throw ConfigError("user encoder: embed_dim must be divisible by heads");
  }
  ps.add("user.embed", uniform_init({vocab_size, cfg.embed_dim}, 0.1, rng));
  init_multi_head_attention(ps, "user.mha", cfg.embed_dim, rng);
  init_additive_pool(ps, "user.pool", cfg.embed_dim, cfg.attn_dim, rng);
  init_additive_pool(ps, "user.dyn", cfg.embed_dim, cfg.attn_dim, rng);
}

// headline tokens -> d-vector: embeddings, multi-head self-attention, then
// additive pooling; no positional signal, so token order does not matter
inline Var encode_headline(BoundParams& bp, const UserEncoderConfig& cfg,
                           const Vocabulary& vocab, const std::vector<std::string>& tokens) {
  const std::vector<int> ids = vocab.encode(tokens);
  Var x = rows(bp["user.embed"], ids);
  Var ctx = multi_head_attention(bp, "user.mha", x, x, x, cfg.heads);
  return additive_pool(bp, "user.pool", ctx);
}

// one row per history position; depends on tokens only, never on dwells
inline Var encode_history(BoundParams& bp, const UserEncoderConfig& cfg, const Vocabulary& vocab,
                          const FilteredHistory& fh) {
  std::vector<Var> out_rows;
  out_rows.reserve(fh.size());
  for (const auto& headline : fh.headlines) {
    out_rows.push_back(encode_headline(bp, cfg, vocab, headline));
  }
  return stack_rows(bp.tape(), std::span<const Var>(out_rows.data(), out_rows.size()),
                    cfg.embed_dim);
}

// dwell-derived weights enter as constants: learnability lives in the shared
// news encoder and the aggregation attention, the per-position weights are data
inline Var facet_vector(Tape& tape, const std::vector<double>& weights, Var history) {
  if (weights.size() != history.value().rows()) {
    throw DimensionError("facet_vector: weight count " + std::to_string(weights.size()) +
                         " vs history rows " + std::to_string(history.value().rows()));
  }
  Var w = tape.constant(Tensor::vector(weights));
  return vecmat(w, history);
}

struct FacetMasks {
  std::vector<double> t_ipl, t_iea, t_sim;
  std::vector<double> w_ipl, w_iea, w_sim;
};

struct UserVectorOut {
  Var e_u;
  Var v_ipl, v_iea, v_sim;
  std::array<double, 3> facet_attention{};  // ipl, iea, sim; sums to 1
  FacetMasks masks;
};

struct DynAttnOut {
  Var e_u;
  std::array<double, 3> weights{};
};

// shared additive scoring over the three facet vectors, softmaxed
inline DynAttnOut dyn_attn(BoundParams& bp, Var v_ipl, Var v_iea, Var v_sim) {
  const std::array<Var, 3> facets{v_ipl, v_iea, v_sim};
  Var stacked = stack_rows(bp.tape(), std::span<const Var>(facets.data(), facets.size()),
                           v_ipl.value().numel());
  Var a = softmax(additive_scores(bp, "user.dyn", stacked));
  DynAttnOut out;
  out.e_u = vecmat(a, stacked);
  for (std::size_t i = 0; i < 3; ++i) out.weights[i] = a.value()[i];
  return out;
}

// full pipeline from a news-level-filtered history to e_u
inline UserVectorOut encode_user(BoundParams& bp, const UserEncoderConfig& cfg,
                                 const Vocabulary& vocab, const FilteredHistory& fh) {
  UserVectorOut out;
  Tape& tape = bp.tape();
  if (fh.size() == 0) {
    // documented degenerate path: no history means a zero user vector
    Var zero = tape.constant(Tensor({cfg.embed_dim}));
    out.e_u = zero;
    out.v_ipl = out.v_iea = out.v_sim = zero;
    out.facet_attention = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    return out;
  }

  // "now" for the IEA window is the newest click in this history
  std::int64_t now = fh.click_times.empty() ? 0 : fh.click_times[0];
  for (auto t : fh.click_times) now = std::max(now, t);

  out.masks.t_ipl = ipl_mask(fh.dwells, cfg.ipl_k);
  out.masks.t_iea = iea_mask(fh.dwells, fh.click_times, now, cfg.iea_window_seconds,
                             cfg.iea_on_dwell);
  out.masks.t_sim = sim_mask(fh.dwells, fh.outlier);
  if (cfg.use_time_filter) {
    out.masks.w_ipl = minmax_weights(out.masks.t_ipl);
    out.masks.w_iea = minmax_weights(out.masks.t_iea);
    out.masks.w_sim = minmax_weights(out.masks.t_sim);
  } else {
    const std::vector<double> uniform(fh.size(), 1.0);
    out.masks.w_ipl = uniform;
    out.masks.w_iea = uniform;
    out.masks.w_sim = uniform;
  }

  Var history = encode_history(bp, cfg, vocab, fh);
  Var zero = tape.constant(Tensor({cfg.embed_dim}));
  out.v_ipl = cfg.use_ipl ? facet_vector(tape, out.masks.w_ipl, history) : zero;
  out.v_iea = cfg.use_iea ? facet_vector(tape, out.masks.w_iea, history) : zero;
  out.v_sim = cfg.use_sim ? facet_vector(tape, out.masks.w_sim, history) : zero;

  const DynAttnOut fused = dyn_attn(bp, out.v_ipl, out.v_iea, out.v_sim);
  out.e_u = fused.e_u;
  out.facet_attention = fused.weights;
  return out;
}

// click-through probability: sigmoid of the dot product
inline Var ctr_logit(Var e_u, Var candidate) { return dot(e_u, candidate); }
inline Var ctr_score(Var e_u, Var candidate) { return sigmoid(ctr_logit(e_u, candidate)); }

}  // namespace headliner
