#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "headliner/autodiff.hpp"
#include "headliner/error.hpp"
#include "headliner/rng.hpp"
#include "headliner/tensor.hpp"

namespace headliner {

// Named parameter tensors. std::map keeps iteration order deterministic,
// which matters for checkpoints and seeded updates.
struct ParamStore {
  std::map<std::string, Tensor> tensors;

  Tensor& at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
  }
  const Tensor& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return tensors.count(name) > 0; }
  void add(const std::string& name, Tensor t) {
    if (has(name)) throw ContractError("duplicate parameter: " + name);
    tensors.emplace(name, std::move(t));
  }
};

using GradMap = std::map<std::string, Tensor>;

// Binds store parameters onto a tape for one forward pass. The same name
// always yields the same Var, so gradients for repeated uses accumulate on
// one leaf. Names matching a frozen prefix are bound as constants.
class BoundParams {
public:
  BoundParams(Tape& tape, ParamStore& store) : tape_(&tape), store_(&store) {}

  void freeze_prefix(const std::string& prefix) { frozen_.push_back(prefix); }

  Var operator[](const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    bool frozen = false;
    for (const auto& p : frozen_) {
      if (name.rfind(p, 0) == 0) {
        frozen = true;
        break;
      }
    }
    Var v = tape_->leaf(store_->at(name), !frozen);
    bound_.emplace(name, v);
    return v;
  }

  Tape& tape() { return *tape_; }

  // after backward: collect gradients of every trainable bound parameter
  void collect_grads(GradMap& out) const {
    for (const auto& [name, var] : bound_) {
      if (!var.tape().requires_grad_of(var.index())) continue;
      auto it = out.find(name);
      if (it == out.end()) {
        out.emplace(name, var.grad());
      } else {
        const Tensor& g = var.grad();
        for (std::size_t i = 0; i < g.numel(); ++i) it->second[i] += g[i];
      }
    }
  }

private:
  Tape* tape_;
  ParamStore* store_;
  std::map<std::string, Var> bound_;
  std::vector<std::string> frozen_;
};

// ---- init -------------------------------------------------------------------

inline Tensor glorot_uniform(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  const double fan_in = t.rank() == 2 ? static_cast<double>(t.rows()) : 1.0;
  const double fan_out = t.rank() == 2 ? static_cast<double>(t.cols())
                                       : static_cast<double>(t.numel());
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-limit, limit);
  return t;
}

inline Tensor uniform_init(std::vector<std::size_t> shape, double limit, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-limit, limit);
  return t;
}

// ---- optimizer ---------------------------------------------------------------

// Adam; moments keyed by parameter name, created on first use.
struct AdamState {
  std::map<std::string, Tensor> m, v;
  std::int64_t t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

inline void adam_step(ParamStore& params, const GradMap& grads, AdamState& st, double lr) {
  st.t += 1;
  const double b1t = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double b2t = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    if (!p.same_shape(g)) throw DimensionError("adam_step: grad shape mismatch for " + name);
    auto mi = st.m.find(name);
    if (mi == st.m.end()) {
      st.m.emplace(name, zeros_like(p));
      st.v.emplace(name, zeros_like(p));
      mi = st.m.find(name);
    }
    Tensor& m = mi->second;
    Tensor& v = st.v.at(name);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      if (!std::isfinite(g[i])) throw NumericError("non-finite gradient in " + name);
      m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
      v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / b1t) / (std::sqrt(v[i] / b2t) + st.eps);
    }
  }
}

// ---- gradient oracle ----------------------------------------------------------

// f evaluates the scalar loss; when grads != nullptr it must also fill the
// analytic gradient for every trainable parameter it touched.
using LossFn = std::function<double(ParamStore&, GradMap*)>;

// Central-difference check: returns max over components of
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
inline double grad_check(const LossFn& f, ParamStore& params, double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1e-3)) throw ContractError("grad_check: epsilon out of range");
  GradMap analytic;
  f(params, &analytic);
  double worst = 0.0;
  for (auto& [name, tensor] : params.tensors) {
    const Tensor* ag = nullptr;
    auto it = analytic.find(name);
    if (it != analytic.end()) ag = &it->second;
    for (std::size_t i = 0; i < tensor.numel(); ++i) {
      const double saved = tensor[i];
      tensor[i] = saved + epsilon;
      const double fp = f(params, nullptr);
      tensor[i] = saved - epsilon;
      const double fm = f(params, nullptr);
      tensor[i] = saved;
      const double numeric = (fp - fm) / (2.0 * epsilon);
      const double a = ag ? (*ag)[i] : 0.0;
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

// ---- layers -------------------------------------------------------------------

inline void init_linear(ParamStore& ps, const std::string& prefix, std::size_t in,
                        std::size_t out, Rng& rng) {
  ps.add(prefix + ".W", glorot_uniform({in, out}, rng));
  ps.add(prefix + ".b", Tensor({out}));
}

// x {in} or {n,in} -> {out} or {n,out}
inline Var linear(BoundParams& bp, const std::string& prefix, Var x) {
  return add(matmul(x, bp[prefix + ".W"]), bp[prefix + ".b"]);
}

// Additive (Bahdanau-style) attention pooling over matrix rows:
// scores_i = q . tanh(x_i W + b); pooled = sum_i softmax(scores)_i x_i
inline void init_additive_pool(ParamStore& ps, const std::string& prefix, std::size_t d,
                               std::size_t attn_dim, Rng& rng) {
  ps.add(prefix + ".W", glorot_uniform({d, attn_dim}, rng));
  ps.add(prefix + ".b", Tensor({attn_dim}));
  ps.add(prefix + ".q", glorot_uniform({attn_dim}, rng));
}

inline Var additive_scores(BoundParams& bp, const std::string& prefix, Var x) {
  Var h = tanh_op(add(matmul(x, bp[prefix + ".W"]), bp[prefix + ".b"]));  // {n,a}
  return matmul(h, bp[prefix + ".q"]);                                   // {n}
}

inline Var additive_pool(BoundParams& bp, const std::string& prefix, Var x) {
  Var w = softmax(additive_scores(bp, prefix, x));
  return vecmat(w, x);
}

// ---- recurrent cell -----------------------------------------------------------

// Gated recurrent unit; update/reset gate semantics.
inline void init_gru(ParamStore& ps, const std::string& prefix, std::size_t in, std::size_t d,
                     Rng& rng) {
  for (const char* gate : {"z", "r", "h"}) {
    ps.add(prefix + ".W" + gate, glorot_uniform({in, d}, rng));
    ps.add(prefix + ".U" + gate, glorot_uniform({d, d}, rng));
    ps.add(prefix + ".b" + gate, Tensor({d}));
  }
}

inline Var gru_cell(BoundParams& bp, const std::string& prefix, Var x, Var h) {
  Var z = sigmoid(add(add(matmul(x, bp[prefix + ".Wz"]), matmul(h, bp[prefix + ".Uz"])),
                      bp[prefix + ".bz"]));
  Var r = sigmoid(add(add(matmul(x, bp[prefix + ".Wr"]), matmul(h, bp[prefix + ".Ur"])),
                      bp[prefix + ".br"]));
  Var hc = tanh_op(add(add(matmul(x, bp[prefix + ".Wh"]), matmul(mul(r, h), bp[prefix + ".Uh"])),
                       bp[prefix + ".bh"]));
  // h' = (1-z) * h + z * hc
  return add(mul(affine(z, -1.0, 1.0), h), mul(z, hc));
}

// ---- multi-head attention -------------------------------------------------------

inline void init_multi_head_attention(ParamStore& ps, const std::string& prefix, std::size_t d,
                                      Rng& rng) {
  ps.add(prefix + ".Wq", glorot_uniform({d, d}, rng));
  ps.add(prefix + ".Wk", glorot_uniform({d, d}, rng));
  ps.add(prefix + ".Wv", glorot_uniform({d, d}, rng));
  ps.add(prefix + ".Wo", glorot_uniform({d, d}, rng));
}

// Scaled dot-product attention per head, concatenated and projected.
// query {m,d}, keys/values {n,d} -> {m,d}
inline Var multi_head_attention(BoundParams& bp, const std::string& prefix, Var query, Var keys,
                                Var values, std::size_t heads) {
  const std::size_t d = query.value().cols();
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("multi_head_attention: model dimension " + std::to_string(d) +
                      " not divisible by " + std::to_string(heads) + " heads");
  }
  if (keys.value().cols() != d || values.value().cols() != d ||
      keys.value().rows() != values.value().rows()) {
    throw DimensionError("multi_head_attention: key/value shapes " +
                         keys.value().shape_string() + " vs " + values.value().shape_string());
  }
  const std::size_t dh = d / heads;
  Var q = matmul(query, bp[prefix + ".Wq"]);
  Var k = matmul(keys, bp[prefix + ".Wk"]);
  Var v = matmul(values, bp[prefix + ".Wv"]);
  std::vector<Var> head_ctx;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = slice_cols(q, h * dh, dh);
    Var kh = slice_cols(k, h * dh, dh);
    Var vh = slice_cols(v, h * dh, dh);
    Var attn = softmax(scale(matmul_nt(qh, kh), inv_sqrt));  // {m,n}, rows sum to 1
    head_ctx.push_back(matmul(attn, vh));                    // {m,dh}
  }
  // concatenate head outputs along columns
  const std::size_t m = query.value().rows();
  Tape& t = query.tape();
  std::vector<Var> out_rows;
  out_rows.reserve(m);
  for (std::size_t r = 0; r < m; ++r) {
    std::vector<Var> parts;
    parts.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) parts.push_back(row(head_ctx[h], r));
    out_rows.push_back(concat(std::span<const Var>(parts.data(), parts.size())));
  }
  Var ctx = stack_rows(t, std::span<const Var>(out_rows.data(), out_rows.size()), d);
  return matmul(ctx, bp[prefix + ".Wo"]);
}

}  // namespace headliner
