#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "headliner/error.hpp"
#include "headliner/tensor.hpp"

namespace headliner {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid as long as the tape lives.
class Var {
public:
  Var() : tape_(nullptr), idx_(0) {}

  const Tensor& value() const;
  const Tensor& grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t index() const { return idx_; }
  bool valid() const { return tape_ != nullptr; }

private:
  friend class Tape;
  Var(Tape* tape, std::size_t idx) : tape_(tape), idx_(idx) {}
  Tape* tape_;
  std::size_t idx_;
};

// Reverse-mode tape. Node creation order is a topological order, so the
// backward sweep simply walks indices in reverse. Gradients accumulate
// additively, which handles shared subexpressions. A tape is confined to one
// thread; independent tapes may run in parallel.
class Tape {
public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true) {
    return push(std::move(value), requires_grad, nullptr);
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var constant(double v) { return leaf(Tensor::scalar(v), false); }

  std::size_t size() const { return nodes_.size(); }

  // Seeds d(out) = 1 and propagates to every node created before it.
  // `out` must be scalar-valued.
  void backward(Var out) {
    if (&out.tape() != this) throw ContractError("backward: var from another tape");
    if (out.value().numel() != 1) {
      throw ContractError("backward requires a scalar output, got shape " +
                          out.value().shape_string());
    }
    for (auto& n : nodes_) n.grad.fill(0.0);
    nodes_[out.index()].grad[0] = 1.0;
    for (std::size_t i = out.index() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.backprop) n.backprop(*this);
    }
  }

  const Tensor& value_of(std::size_t i) const { return nodes_[i].value; }
  Tensor& grad_of(std::size_t i) { return nodes_[i].grad; }
  bool requires_grad_of(std::size_t i) const { return nodes_[i].requires_grad; }

private:
  friend class Var;

  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad;
    std::function<void(Tape&)> backprop;
  };

  Var push(Tensor value, bool requires_grad, std::function<void(Tape&)> backprop) {
    Node n;
    n.grad = zeros_like(value);
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;

  // op implementations live below as friends
  friend Var make_op(Tape& t, Tensor value, std::span<const Var> parents,
                     std::function<void(Tape&)> backprop);
};

inline const Tensor& Var::value() const { return tape_->value_of(idx_); }
inline const Tensor& Var::grad() const { return const_cast<Tape*>(tape_)->grad_of(idx_); }

namespace detail {

inline void check_same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
}

inline bool any_requires(std::span<const Var> vs) {
  for (Var v : vs) {
    if (v.tape().requires_grad_of(v.index())) return true;
  }
  return false;
}

}  // namespace detail

inline Var make_op(Tape& t, Tensor value, std::span<const Var> parents,
                   std::function<void(Tape&)> backprop) {
  const bool req = detail::any_requires(parents);
  return t.push(std::move(value), req, req ? std::move(backprop) : nullptr);
}

// ---- elementwise and scalar ops ------------------------------------------

inline Var add(Var a, Var b) {
  detail::check_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tape& t = a.tape();
  const std::size_t ai = a.index(), bi = b.index();
  if (av.same_shape(bv)) {
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    Var ps[] = {a, b};
    return make_op(t, std::move(out), ps, [ai, bi, oi = t.size()](Tape& tp) {
      const Tensor& g = tp.grad_of(oi);
      Tensor& ga = tp.grad_of(ai);
      Tensor& gb = tp.grad_of(bi);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        ga[i] += g[i];
        gb[i] += g[i];
      }
    });
  }
  // matrix + row-broadcast vector
  if (av.rank() == 2 && bv.rank() == 1 && av.cols() == bv.shape()[0]) {
    Tensor out = av;
    for (std::size_t r = 0; r < av.rows(); ++r)
      for (std::size_t c = 0; c < av.cols(); ++c) out.at(r, c) += bv[c];
    Var ps[] = {a, b};
    return make_op(t, std::move(out), ps, [ai, bi, oi = t.size()](Tape& tp) {
      const Tensor& g = tp.grad_of(oi);
      Tensor& ga = tp.grad_of(ai);
      Tensor& gb = tp.grad_of(bi);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) {
          ga.at(r, c) += g.at(r, c);
          gb[c] += g.at(r, c);
        }
    });
  }
  throw DimensionError("add: incompatible shapes " + av.shape_string() + " vs " +
                       bv.shape_string());
}

inline Var sub(Var a, Var b) {
  detail::check_same_tape(a, b);
  if (!a.value().same_shape(b.value())) {
    throw DimensionError("sub: incompatible shapes " + a.value().shape_string() + " vs " +
                         b.value().shape_string());
  }
  Tape& t = a.tape();
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  const std::size_t ai = a.index(), bi = b.index();
  Var ps[] = {a, b};
  return make_op(t, std::move(out), ps, [ai, bi, oi = t.size()](Tape& tp) {
    const Tensor& g = tp.grad_of(oi);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      tp.grad_of(ai)[i] += g[i];
      tp.grad_of(bi)[i] -= g[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  detail::check_same_tape(a, b);
  if (!a.value().same_shape(b.value())) {
    throw DimensionError("mul: incompatible shapes " + a.value().shape_string() + " vs " +
                         b.value().shape_string());
  }
  Tape& t = a.tape();
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  const std::size_t ai = a.index(), bi = b.index();
  Var ps[] = {a, b};
  return make_op(t, std::move(out), ps, [ai, bi, oi = t.size()](Tape& tp) {
    const Tensor& g = tp.grad_of(oi);
    const Tensor& av = tp.value_of(ai);
    const Tensor& bv = tp.value_of(bi);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      tp.grad_of(ai)[i] += g[i] * bv[i];
      tp.grad_of(bi)[i] += g[i] * av[i];
    }
  });
}

// k*x + c, elementwise with double coefficients
inline Var affine(Var x, double k, double c) {
  Tape& t = x.tape();
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = k * out[i] + c;
  const std::size_t xi = x.index();
  Var ps[] = {x};
  return make_op(t, std::move(out), ps, [xi, k, oi = t.size()](Tape& tp) {
    const Tensor& g = tp.grad_of(oi);
    for (std::size_t i = 0; i < g.numel(); ++i) tp.grad_of(xi)[i] += k * g[i];
  });
}

inline Var scale(Var x, double k) { return affine(x, k, 0.0); }
inline Var neg(Var x) { return affine(x, -1.0, 0.0); }

// scalar Var times tensor Var
inline Var scale_by(Var s, Var x) {
  detail::check_same_tape(s, x);
  if (s.value().numel() != 1) {
    throw DimensionError("scale_by: scale must be scalar, got " + s.value().shape_string());
  }
  Tape& t = s.tape();
  const double sv = s.value()[0];
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= sv;
  const std::size_t si = s.index(), xi = x.index();
  Var ps[] = {s, x};
  return make_op(t, std::move(out), ps, [si, xi, oi = t.size()](Tape& tp) {
    const Tensor& g = tp.grad_of(oi);
    const Tensor& xv = tp.value_of(xi);
    const double sval = tp.value_of(si)[0];
    double acc = 0.0;
    for (std::size_t i = 0; i < g.numel(); ++i) {
      acc += g[i] * xv[i];
      tp.grad_of(xi)[i] += sval * g[i];
    }
    tp.grad_of(si)[0] += acc;
  });
}

inline Var sigmoid(Var x) {
  Tape& t = x.tape();
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double v = out[i];
    out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  const std::size_t xi = x.index();
  Var ps[] = {x};
  return make_op(t, std::move(out), ps, [xi, oi = t.size()](Tape& tp) {
    const Tensor& g = tp.grad_of(oi);
    const Tensor& y = tp.value_of(oi);
    for (std::size_t i = 0; i < g.numel(); ++i)
      tp.grad_of(xi)[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

inline Var tanh_op(Var x) {
  Tape& t = x.tape();
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
  const std::size_t xi = x.index();
  Var ps[] = {x};
  return make_op(t, std::move(out), ps, [xi, oi = t.size()](Tape& tp) {
    const Tensor& g = tp.grad_of(oi);
    const Tensor& y = tp.value_of(oi);
    for (std::size_t i = 0; i < g.numel(); ++i)
      tp.grad_of(xi)[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

inline Var log_op(Var x) {
  Tape& t = x.tape();
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    if (out[i] <= 0.0) throw NumericError("log of non-positive value");
    out[i] = std::log(out[i]);
  }
  const std::size_t xi = x.index();
  Var ps[] = {x};
  return make_op(t, std::move(out), ps, [xi, oi = t.size()](Tape& tp) {
    const Tensor& g = tp.grad_of(oi);
    const Tensor& xv = tp.value_of(xi);
    for (std::size_t i = 0; i < g.numel(); ++i) tp.grad_of(xi)[i] += g[i] / xv[i];
  });
}

// ---- reductions ------------------------------------------------------------

inline Var sum(Var x) {
  Tape& t = x.tape();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.value().numel(); ++i) acc += x.value()[i];
  const std::size_t xi = x.index();
  Var ps[] = {x};
  return make_op(t, Tensor::scalar(acc), ps, [xi, oi = t.size()](Tape& tp) {
    const double g = tp.grad_of(oi)[0];
    for (std::size_t i = 0; i < tp.grad_of(xi).numel(); ++i) tp.grad_of(xi)[i] += g;
  });
}

inline Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().numel())); }

inline Var pick(Var v, std::size_t i) {
  if (i >= v.value().numel()) throw DimensionError("pick: index out of range");
  Tape& t = v.tape();
  const std::size_t vi = v.index();
  Var ps[] = {v};
  return make_op(t, Tensor::scalar(v.value()[i]), ps, [vi, i, oi = t.size()](Tape& tp) {
    tp.grad_of(vi)[i] += tp.grad_of(oi)[0];
  });
}

inline Var dot(Var a, Var b) {
  detail::check_same_tape(a, b);
  if (a.value().rank() != 1 || !a.value().same_shape(b.value())) {
    throw DimensionError("dot: need equal-length vectors, got " + a.value().shape_string() +
                         " vs " + b.value().shape_string());
  }
  Tape& t = a.tape();
  double acc = 0.0;
  for (std::size_t i = 0; i < a.value().numel(); ++i) acc += a.value()[i] * b.value()[i];
  const std::size_t ai = a.index(), bi = b.index();
  Var ps[] = {a, b};
  return make_op(t, Tensor::scalar(acc), ps, [ai, bi, oi = t.size()](Tape& tp) {
    const double g = tp.grad_of(oi)[0];
    const Tensor& av = tp.value_of(ai);
    const Tensor& bv = tp.value_of(bi);
    for (std::size_t i = 0; i < av.numel(); ++i) {
      tp.grad_of(ai)[i] += g * bv[i];
      tp.grad_of(bi)[i] += g * av[i];
    }
  });
}

// ---- matrix ops ------------------------------------------------------------

// {m,k}x{k,n} -> {m,n}; {m,k}x{k} -> {m}; {k}x{k,n} -> {n}
inline Var matmul(Var a, Var b) {
  detail::check_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tape& t = a.tape();
  const std::size_t ai = a.index(), bi = b.index();

  if (av.rank() == 2 && bv.rank() == 2) {
    if (av.cols() != bv.rows()) {
      throw DimensionError("matmul: " + av.shape_string() + " x " + bv.shape_string());
    }
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    Tensor out({m, n});
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < k; ++j) {
        const double x = av.at(r, j);
        if (x == 0.0) continue;
        for (std::size_t c = 0; c < n; ++c) out.at(r, c) += x * bv.at(j, c);
      }
    Var ps[] = {a, b};
    return make_op(t, std::move(out), ps, [ai, bi, m, k, n, oi = t.size()](Tape& tp) {
      const Tensor& g = tp.grad_of(oi);
      const Tensor& A = tp.value_of(ai);
      const Tensor& B = tp.value_of(bi);
      Tensor& ga = tp.grad_of(ai);
      Tensor& gb = tp.grad_of(bi);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) {
          const double gv = g.at(r, c);
          if (gv == 0.0) continue;
          for (std::size_t j = 0; j < k; ++j) {
            ga.at(r, j) += gv * B.at(j, c);
            gb.at(j, c) += gv * A.at(r, j);
          }
        }
    });
  }
  if (av.rank() == 2 && bv.rank() == 1) {
    if (av.cols() != bv.shape()[0]) {
      throw DimensionError("matmul: " + av.shape_string() + " x " + bv.shape_string());
    }
    const std::size_t m = av.rows(), k = av.cols();
    Tensor out({m});
    for (std::size_t r = 0; r < m; ++r) {
      double acc = 0.0;
      for (std::size_t j = 0; j < k; ++j) acc += av.at(r, j) * bv[j];
      out[r] = acc;
    }
    Var ps[] = {a, b};
    return make_op(t, std::move(out), ps, [ai, bi, m, k, oi = t.size()](Tape& tp) {
      const Tensor& g = tp.grad_of(oi);
      const Tensor& A = tp.value_of(ai);
      const Tensor& x = tp.value_of(bi);
      for (std::size_t r = 0; r < m; ++r) {
        const double gv = g[r];
        if (gv == 0.0) continue;
        for (std::size_t j = 0; j < k; ++j) {
          tp.grad_of(ai).at(r, j) += gv * x[j];
          tp.grad_of(bi)[j] += gv * A.at(r, j);
        }
      }
    });
  }
  if (av.rank() == 1 && bv.rank() == 2) {
    if (av.shape()[0] != bv.rows()) {
      throw DimensionError("matmul: " + av.shape_string() + " x " + bv.shape_string());
    }
    const std::size_t k = bv.rows(), n = bv.cols();
    Tensor out({n});
    for (std::size_t j = 0; j < k; ++j) {
      const double x = av[j];
      if (x == 0.0) continue;
      for (std::size_t c = 0; c < n; ++c) out[c] += x * bv.at(j, c);
    }
    Var ps[] = {a, b};
    return make_op(t, std::move(out), ps, [ai, bi, k, n, oi = t.size()](Tape& tp) {
      const Tensor& g = tp.grad_of(oi);
      const Tensor& w = tp.value_of(ai);
      const Tensor& M = tp.value_of(bi);
      for (std::size_t j = 0; j < k; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
          acc += g[c] * M.at(j, c);
          tp.grad_of(bi).at(j, c) += w[j] * g[c];
        }
        tp.grad_of(ai)[j] += acc;
      }
    });
  }
  throw DimensionError("matmul: unsupported ranks " + av.shape_string() + " x " +
                       bv.shape_string());
}

// a * b^T for {m,k} x {n,k} -> {m,n}
inline Var matmul_nt(Var a, Var b) {
  detail::check_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.cols()) {
    throw DimensionError("matmul_nt: " + av.shape_string() + " x " + bv.shape_string());
  }
  Tape& t = a.tape();
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  Tensor out({m, n});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < k; ++j) acc += av.at(r, j) * bv.at(c, j);
      out.at(r, c) = acc;
    }
  const std::size_t ai = a.index(), bi = b.index();
  Var ps[] = {a, b};
  return make_op(t, std::move(out), ps, [ai, bi, m, k, n, oi = t.size()](Tape& tp) {
    const Tensor& g = tp.grad_of(oi);
    const Tensor& A = tp.value_of(ai);
    const Tensor& B = tp.value_of(bi);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        const double gv = g.at(r, c);
        if (gv == 0.0) continue;
        for (std::size_t j = 0; j < k; ++j) {
          tp.grad_of(ai).at(r, j) += gv * B.at(c, j);
          tp.grad_of(bi).at(c, j) += gv * A.at(r, j);
        }
      }
  });
}

// w^T M for {m} x {m,n} -> {n}: weighted sum of matrix rows
inline Var vecmat(Var w, Var m) { return matmul(w, m); }

// ---- structural ops --------------------------------------------------------

inline Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  Tape& t = parts[0].tape();
  std::size_t total = 0;
  for (Var p : parts) {
    detail::check_same_tape(parts[0], p);
    if (p.value().rank() != 1) throw DimensionError("concat: vector inputs only");
    total += p.value().numel();
  }
  Tensor out({total});
  std::vector<std::size_t> idxs;
  std::vector<std::size_t> offs;
  std::size_t off = 0;
  for (Var p : parts) {
    idxs.push_back(p.index());
    offs.push_back(off);
    for (std::size_t i = 0; i < p.value().numel(); ++i) out[off + i] = p.value()[i];
    off += p.value().numel();
  }
  return make_op(t, std::move(out), parts,
                 [idxs = std::move(idxs), offs = std::move(offs), oi = t.size()](Tape& tp) {
                   const Tensor& g = tp.grad_of(oi);
                   for (std::size_t p = 0; p < idxs.size(); ++p) {
                     Tensor& gp = tp.grad_of(idxs[p]);
                     for (std::size_t i = 0; i < gp.numel(); ++i) gp[i] += g[offs[p] + i];
                   }
                 });
}

inline Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

// stack n vectors of length d into an {n,d} matrix; n may be 0
inline Var stack_rows(Tape& t, std::span<const Var> rows_in, std::size_t dim) {
  if (rows_in.empty()) return t.constant(Tensor({0, dim}));
  const std::size_t d = rows_in[0].value().numel();
  if (d != dim) throw DimensionError("stack_rows: row length does not match dim");
  Tensor out({rows_in.size(), d});
  std::vector<std::size_t> idxs;
  for (std::size_t r = 0; r < rows_in.size(); ++r) {
    detail::check_same_tape(rows_in[0], rows_in[r]);
    if (rows_in[r].value().numel() != d || rows_in[r].value().rank() != 1) {
      throw DimensionError("stack_rows: rows must be equal-length vectors");
    }
    idxs.push_back(rows_in[r].index());
    for (std::size_t c = 0; c < d; ++c) out.at(r, c) = rows_in[r].value()[c];
  }
  return make_op(t, std::move(out), rows_in,
                 [idxs = std::move(idxs), d, oi = t.size()](Tape& tp) {
                   const Tensor& g = tp.grad_of(oi);
                   for (std::size_t r = 0; r < idxs.size(); ++r)
                     for (std::size_t c = 0; c < d; ++c)
                       tp.grad_of(idxs[r])[c] += g.at(r, c);
                 });
}

// embedding lookup: selected rows of {V,d} -> {n,d}; duplicate ids accumulate
inline Var rows(Var table, const std::vector<int>& ids) {
  const Tensor& tv = table.value();
  if (tv.rank() != 2) throw DimensionError("rows: table must be a matrix");
  Tape& t = table.tape();
  const std::size_t d = tv.cols();
  Tensor out({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= tv.rows()) {
      throw DimensionError("rows: id out of range");
    }
    for (std::size_t c = 0; c < d; ++c) out.at(r, c) = tv.at(ids[r], c);
  }
  const std::size_t ti = table.index();
  Var ps[] = {table};
  return make_op(t, std::move(out), ps, [ti, ids, d, oi = t.size()](Tape& tp) {
    const Tensor& g = tp.grad_of(oi);
    Tensor& gt = tp.grad_of(ti);
    for (std::size_t r = 0; r < ids.size(); ++r)
      for (std::size_t c = 0; c < d; ++c) gt.at(ids[r], c) += g.at(r, c);
  });
}

inline Var row(Var matrix, std::size_t r) {
  const Tensor& mv = matrix.value();
  if (mv.rank() != 2 || r >= mv.rows()) throw DimensionError("row: out of range");
  Tape& t = matrix.tape();
  const std::size_t d = mv.cols();
  Tensor out({d});
  for (std::size_t c = 0; c < d; ++c) out[c] = mv.at(r, c);
  const std::size_t mi = matrix.index();
  Var ps[] = {matrix};
  return make_op(t, std::move(out), ps, [mi, r, d, oi = t.size()](Tape& tp) {
    const Tensor& g = tp.grad_of(oi);
    for (std::size_t c = 0; c < d; ++c) tp.grad_of(mi).at(r, c) += g[c];
  });
}

inline Var slice_cols(Var matrix, std::size_t from, std::size_t count) {
  const Tensor& mv = matrix.value();
  if (mv.rank() != 2 || from + count > mv.cols()) {
    throw DimensionError("slice_cols: range out of bounds for " + mv.shape_string());
  }
  Tape& t = matrix.tape();
  Tensor out({mv.rows(), count});
  for (std::size_t r = 0; r < mv.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out.at(r, c) = mv.at(r, from + c);
  const std::size_t mi = matrix.index();
  Var ps[] = {matrix};
  return make_op(t, std::move(out), ps, [mi, from, count, oi = t.size()](Tape& tp) {
    const Tensor& g = tp.grad_of(oi);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < count; ++c) tp.grad_of(mi).at(r, from + c) += g.at(r, c);
  });
}

// append zeros to a vector
inline Var pad_to(Var v, std::size_t new_len) {
  const Tensor& vv = v.value();
  if (vv.rank() != 1 || new_len < vv.numel()) throw DimensionError("pad_to: bad target length");
  Tape& t = v.tape();
  Tensor out({new_len});
  for (std::size_t i = 0; i < vv.numel(); ++i) out[i] = vv[i];
  const std::size_t vi = v.index(), n = vv.numel();
  Var ps[] = {v};
  return make_op(t, std::move(out), ps, [vi, n, oi = t.size()](Tape& tp) {
    const Tensor& g = tp.grad_of(oi);
    for (std::size_t i = 0; i < n; ++i) tp.grad_of(vi)[i] += g[i];
  });
}

// out[bins[j]] += v[j]; for aggregating copy mass over repeated source tokens
inline Var scatter_add(Var v, const std::vector<std::size_t>& bins, std::size_t out_len) {
  const Tensor& vv = v.value();
  if (vv.rank() != 1 || bins.size() != vv.numel()) {
    throw DimensionError("scatter_add: bins length must match vector length");
  }
  Tape& t = v.tape();
  Tensor out({out_len});
  for (std::size_t j = 0; j < bins.size(); ++j) {
    if (bins[j] >= out_len) throw DimensionError("scatter_add: bin out of range");
    out[bins[j]] += vv[j];
  }
  const std::size_t vi = v.index();
  Var ps[] = {v};
  return make_op(t, std::move(out), ps, [vi, bins, oi = t.size()](Tape& tp) {
    const Tensor& g = tp.grad_of(oi);
    for (std::size_t j = 0; j < bins.size(); ++j) tp.grad_of(vi)[j] += g[bins[j]];
  });
}

// ---- softmax and losses ----------------------------------------------------

// softmax over a vector, or over each row of a matrix; max-subtracted
inline Var softmax(Var x) {
  const Tensor& xv = x.value();
  Tape& t = x.tape();
  Tensor out = xv;
  const std::size_t nrows = xv.rank() == 2 ? xv.rows() : 1;
  const std::size_t ncols = xv.rank() == 2 ? xv.cols() : xv.numel();
  for (std::size_t r = 0; r < nrows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < ncols; ++c) mx = std::max(mx, out[r * ncols + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < ncols; ++c) {
      out[r * ncols + c] = std::exp(out[r * ncols + c] - mx);
      z += out[r * ncols + c];
    }
    for (std::size_t c = 0; c < ncols; ++c) out[r * ncols + c] /= z;
  }
  const std::size_t xi = x.index();
  Var ps[] = {x};
  return make_op(t, std::move(out), ps, [xi, nrows, ncols, oi = t.size()](Tape& tp) {
    const Tensor& g = tp.grad_of(oi);
    const Tensor& y = tp.value_of(oi);
    for (std::size_t r = 0; r < nrows; ++r) {
      double gy = 0.0;
      for (std::size_t c = 0; c < ncols; ++c) gy += g[r * ncols + c] * y[r * ncols + c];
      for (std::size_t c = 0; c < ncols; ++c) {
        const std::size_t i = r * ncols + c;
        tp.grad_of(xi)[i] += y[i] * (g[i] - gy);
      }
    }
  });
}

// -log softmax(logits)[target], fused for stability
inline Var cross_entropy(Var logits, std::size_t target) {
  const Tensor& lv = logits.value();
  if (lv.rank() != 1) throw DimensionError("cross_entropy: logits must be a vector");
  if (target >= lv.numel()) throw DimensionError("cross_entropy: target out of range");
  Tape& t = logits.tape();
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < lv.numel(); ++i) mx = std::max(mx, lv[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < lv.numel(); ++i) z += std::exp(lv[i] - mx);
  const double loss = std::log(z) + mx - lv[target];
  const std::size_t li = logits.index();
  Var ps[] = {logits};
  return make_op(t, Tensor::scalar(loss), ps, [li, target, mx, z, oi = t.size()](Tape& tp) {
    const double g = tp.grad_of(oi)[0];
    const Tensor& l = tp.value_of(li);
    for (std::size_t i = 0; i < l.numel(); ++i) {
      const double p = std::exp(l[i] - mx) / z;
      tp.grad_of(li)[i] += g * (p - (i == target ? 1.0 : 0.0));
    }
  });
}

// binary cross-entropy on a logit, label in [0,1]; stable form
inline Var bce_with_logit(Var logit, double label) {
  if (logit.value().numel() != 1) throw DimensionError("bce_with_logit: scalar logit required");
  Tape& t = logit.tape();
  const double z = logit.value()[0];
  const double loss = std::max(z, 0.0) - z * label + std::log1p(std::exp(-std::abs(z)));
  const std::size_t li = logit.index();
  Var ps[] = {logit};
  return make_op(t, Tensor::scalar(loss), ps, [li, label, oi = t.size()](Tape& tp) {
    const double g = tp.grad_of(oi)[0];
    const double zv = tp.value_of(li)[0];
    const double s = zv >= 0.0 ? 1.0 / (1.0 + std::exp(-zv)) : std::exp(zv) / (1.0 + std::exp(zv));
    tp.grad_of(li)[0] += g * (s - label);
  });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double k, Var a) { return scale(a, k); }

}  // namespace headliner
