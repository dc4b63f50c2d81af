#pragma once

// Reverse-mode automatic differentiation on a dynamic tape.
//
// Values are flat double vectors (scalars are length-1). Trainable tensors
// live outside the tape as Param objects owned by the model; tape ops that
// touch a Param accumulate into its grad during backward(). The tape is
// rebuilt per training example and cleared afterwards; node order is the
// topological order, so backward() is a single reverse sweep.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gloss/error.hpp"
#include "gloss/rng.hpp"

namespace gloss::ad {

using Vec = std::vector<double>;

struct Param {
  std::string name;
  int rows = 0;
  int cols = 1;  // cols == 1 means plain vector
  Vec value;
  Vec grad;

  Param() = default;
  Param(std::string n, int r, int c = 1)
      : name(std::move(n)), rows(r), cols(c), value(std::size_t(r) * c, 0.0),
        grad(std::size_t(r) * c, 0.0) {}

  int size() const { return rows * cols; }
  double& at(int r, int c) { return value[std::size_t(r) * cols + c]; }
  double at(int r, int c) const { return value[std::size_t(r) * cols + c]; }

  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

  void init_uniform(Rng& rng, double bound) {
    for (double& v : value) v = rng.uniform(-bound, bound);
  }

  // Xavier/Glorot uniform against (fan_in, fan_out).
  void init_xavier(Rng& rng) {
    double bound = std::sqrt(6.0 / (rows + cols));
    init_uniform(rng, bound);
  }
};

class Tape {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  const Vec& val(Var v) const { return nodes_[v.id].val; }
  Vec& grad(Var v) { return nodes_[v.id].grad; }
  int dim(Var v) const { return static_cast<int>(nodes_[v.id].val.size()); }
  double scalar(Var v) const { return nodes_[v.id].val[0]; }
  std::size_t node_count() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

  // ---- leaves ----------------------------------------------------------

  Var input(Vec v) { return make(std::move(v), nullptr); }
  Var constant(double x) { return input(Vec{x}); }
  Var zeros(int n) { return input(Vec(n, 0.0)); }

  // ---- parameter access ------------------------------------------------

  Var param_vector(Param& p) {
    Var out = make(p.value, nullptr);
    Param* pp = &p;
    node(out).back = [pp, out](Tape& t) {
      const Vec& g = t.grad(out);
      for (std::size_t i = 0; i < g.size(); ++i) pp->grad[i] += g[i];
    };
    return out;
  }

  Var embedding_row(Param& p, int row) {
    Vec v(p.cols);
    for (int c = 0; c < p.cols; ++c) v[c] = p.at(row, c);
    Var out = make(std::move(v), nullptr);
    Param* pp = &p;
    node(out).back = [pp, row, out](Tape& t) {
      const Vec& g = t.grad(out);
      for (std::size_t c = 0; c < g.size(); ++c)
        pp->grad[std::size_t(row) * pp->cols + c] += g[c];
    };
    return out;
  }

  // y = W x + b
  Var affine(Param& W, Param& b, Var x) {
    check(W.cols == dim(x), "affine: W.cols != dim(x)");
    check(b.size() == W.rows, "affine: bias size != W.rows");
    const Vec& xv = val(x);
    Vec y(W.rows);
    for (int r = 0; r < W.rows; ++r) {
      const double* wr = &W.value[std::size_t(r) * W.cols];
      double acc = b.value[r];
      for (int c = 0; c < W.cols; ++c) acc += wr[c] * xv[c];
      y[r] = acc;
    }
    Var out = make(std::move(y), nullptr);
    Param* wp = &W;
    Param* bp = &b;
    node(out).back = [wp, bp, x, out](Tape& t) {
      const Vec& g = t.grad(out);
      const Vec& xv = t.val(x);
      Vec& xg = t.grad(x);
      for (int r = 0; r < wp->rows; ++r) {
        double gr = g[r];
        if (gr == 0.0) continue;
        bp->grad[r] += gr;
        double* wgr = &wp->grad[std::size_t(r) * wp->cols];
        const double* wr = &wp->value[std::size_t(r) * wp->cols];
        for (int c = 0; c < wp->cols; ++c) {
          wgr[c] += gr * xv[c];
          xg[c] += gr * wr[c];
        }
      }
    };
    return out;
  }

  Var matvec(Param& W, Var x) {
    check(W.cols == dim(x), "matvec: W.cols != dim(x)");
    const Vec& xv = val(x);
    Vec y(W.rows);
    for (int r = 0; r < W.rows; ++r) {
      const double* wr = &W.value[std::size_t(r) * W.cols];
      double acc = 0.0;
      for (int c = 0; c < W.cols; ++c) acc += wr[c] * xv[c];
      y[r] = acc;
    }
    Var out = make(std::move(y), nullptr);
    Param* wp = &W;
    node(out).back = [wp, x, out](Tape& t) {
      const Vec& g = t.grad(out);
      const Vec& xv = t.val(x);
      Vec& xg = t.grad(x);
      for (int r = 0; r < wp->rows; ++r) {
        double gr = g[r];
        if (gr == 0.0) continue;
        double* wgr = &wp->grad[std::size_t(r) * wp->cols];
        const double* wr = &wp->value[std::size_t(r) * wp->cols];
        for (int c = 0; c < wp->cols; ++c) {
          wgr[c] += gr * xv[c];
          xg[c] += gr * wr[c];
        }
      }
    };
    return out;
  }

  // ---- elementwise -----------------------------------------------------

  Var add(Var a, Var b) {
    check(dim(a) == dim(b), "add: dim mismatch");
    Vec y = val(a);
    const Vec& bv = val(b);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
    Var out = make(std::move(y), nullptr);
    node(out).back = [a, b, out](Tape& t) {
      const Vec& g = t.grad(out);
      Vec& ga = t.grad(a);
      Vec& gb = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i];
        gb[i] += g[i];
      }
    };
    return out;
  }

  Var add3(Var a, Var b, Var c) { return add(add(a, b), c); }

  Var sub(Var a, Var b) {
    check(dim(a) == dim(b), "sub: dim mismatch");
    Vec y = val(a);
    const Vec& bv = val(b);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
    Var out = make(std::move(y), nullptr);
    node(out).back = [a, b, out](Tape& t) {
      const Vec& g = t.grad(out);
      Vec& ga = t.grad(a);
      Vec& gb = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i];
        gb[i] -= g[i];
      }
    };
    return out;
  }

  Var mul(Var a, Var b) {
    check(dim(a) == dim(b), "mul: dim mismatch");
    Vec y = val(a);
    const Vec& bv = val(b);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
    Var out = make(std::move(y), nullptr);
    node(out).back = [a, b, out](Tape& t) {
      const Vec& g = t.grad(out);
      const Vec& av = t.val(a);
      const Vec& bv = t.val(b);
      Vec& ga = t.grad(a);
      Vec& gb = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * bv[i];
        gb[i] += g[i] * av[i];
      }
    };
    return out;
  }

  Var scale(Var a, double c) {
    Vec y = val(a);
    for (double& v : y) v *= c;
    Var out = make(std::move(y), nullptr);
    node(out).back = [a, c, out](Tape& t) {
      const Vec& g = t.grad(out);
      Vec& ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    };
    return out;
  }

  Var neg(Var a) { return scale(a, -1.0); }

  // y = a + c with c a fixed vector (e.g. -inf masks on logits).
  Var offset(Var a, Vec c) {
    check(dim(a) == static_cast<int>(c.size()), "offset: dim mismatch");
    Vec y = val(a);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += c[i];
    Var out = make(std::move(y), nullptr);
    node(out).back = [a, out](Tape& t) {
      const Vec& g = t.grad(out);
      Vec& ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    };
    return out;
  }

  // Elementwise product with a fixed mask (dropout).
  Var mask(Var a, Vec m) {
    check(dim(a) == static_cast<int>(m.size()), "mask: dim mismatch");
    Vec y = val(a);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= m[i];
    Var out = make(std::move(y), nullptr);
    node(out).back = [a, m = std::move(m), out](Tape& t) {
      const Vec& g = t.grad(out);
      Vec& ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += m[i] * g[i];
    };
    return out;
  }

  Var tanh_(Var a) {
    Vec y = val(a);
    for (double& v : y) v = std::tanh(v);
    Var out = make(std::move(y), nullptr);
    node(out).back = [a, out](Tape& t) {
      const Vec& g = t.grad(out);
      const Vec& y = t.val(out);
      Vec& ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
    };
    return out;
  }

  Var sigmoid_(Var a) {
    Vec y = val(a);
    for (double& v : y) v = 1.0 / (1.0 + std::exp(-v));
    Var out = make(std::move(y), nullptr);
    node(out).back = [a, out](Tape& t) {
      const Vec& g = t.grad(out);
      const Vec& y = t.val(out);
      Vec& ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
    };
    return out;
  }

  Var exp_(Var a) {
    Vec y = val(a);
    for (double& v : y) v = std::exp(v);
    Var out = make(std::move(y), nullptr);
    node(out).back = [a, out](Tape& t) {
      const Vec& g = t.grad(out);
      const Vec& y = t.val(out);
      Vec& ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    };
    return out;
  }

  // ---- shape -----------------------------------------------------------

  Var slice(Var a, int offset, int len) {
    check(offset >= 0 && offset + len <= dim(a), "slice: out of range");
    const Vec& av = val(a);
    Vec y(av.begin() + offset, av.begin() + offset + len);
    Var out = make(std::move(y), nullptr);
    node(out).back = [a, offset, out](Tape& t) {
      const Vec& g = t.grad(out);
      Vec& ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[offset + i] += g[i];
    };
    return out;
  }

  Var concat(Var a, Var b) {
    Vec y = val(a);
    const Vec& bv = val(b);
    y.insert(y.end(), bv.begin(), bv.end());
    Var out = make(std::move(y), nullptr);
    int na = dim(a);
    node(out).back = [a, b, na, out](Tape& t) {
      const Vec& g = t.grad(out);
      Vec& ga = t.grad(a);
      Vec& gb = t.grad(b);
      for (int i = 0; i < na; ++i) ga[i] += g[i];
      for (std::size_t i = na; i < g.size(); ++i) gb[i - na] += g[i];
    };
    return out;
  }

  Var concat(const std::vector<Var>& vars) {
    check(!vars.empty(), "concat: empty list");
    Vec y;
    std::vector<int> dims;
    dims.reserve(vars.size());
    for (Var v : vars) {
      const Vec& vv = val(v);
      dims.push_back(static_cast<int>(vv.size()));
      y.insert(y.end(), vv.begin(), vv.end());
    }
    Var out = make(std::move(y), nullptr);
    node(out).back = [vars, dims = std::move(dims), out](Tape& t) {
      const Vec& g = t.grad(out);
      std::size_t off = 0;
      for (std::size_t k = 0; k < vars.size(); ++k) {
        Vec& gk = t.grad(vars[k]);
        for (int i = 0; i < dims[k]; ++i) gk[i] += g[off + i];
        off += dims[k];
      }
    };
    return out;
  }

  // Packs scalar vars into one vector node.
  Var gather(const std::vector<Var>& scalars) {
    Vec y(scalars.size());
    for (std::size_t i = 0; i < scalars.size(); ++i) {
      check(dim(scalars[i]) == 1, "gather: non-scalar element");
      y[i] = val(scalars[i])[0];
    }
    Var out = make(std::move(y), nullptr);
    node(out).back = [scalars, out](Tape& t) {
      const Vec& g = t.grad(out);
      for (std::size_t i = 0; i < scalars.size(); ++i) t.grad(scalars[i])[0] += g[i];
    };
    return out;
  }

  Var pick(Var a, int i) {
    check(i >= 0 && i < dim(a), "pick: out of range");
    Var out = make(Vec{val(a)[i]}, nullptr);
    node(out).back = [a, i, out](Tape& t) { t.grad(a)[i] += t.grad(out)[0]; };
    return out;
  }

  // ---- reductions ------------------------------------------------------

  Var dot(Var a, Var b) {
    check(dim(a) == dim(b), "dot: dim mismatch");
    const Vec& av = val(a);
    const Vec& bv = val(b);
    double acc = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
    Var out = make(Vec{acc}, nullptr);
    node(out).back = [a, b, out](Tape& t) {
      double g = t.grad(out)[0];
      if (g == 0.0) return;
      const Vec& av = t.val(a);
      const Vec& bv = t.val(b);
      Vec& ga = t.grad(a);
      Vec& gb = t.grad(b);
      for (std::size_t i = 0; i < av.size(); ++i) {
        ga[i] += g * bv[i];
        gb[i] += g * av[i];
      }
    };
    return out;
  }

  // Treats a as a rows x cols matrix and sums across one axis.
  Var row_sums(Var a, int rows, int cols) {
    check(dim(a) == rows * cols, "row_sums: shape mismatch");
    const Vec& av = val(a);
    Vec y(rows, 0.0);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) y[r] += av[std::size_t(r) * cols + c];
    Var out = make(std::move(y), nullptr);
    node(out).back = [a, rows, cols, out](Tape& t) {
      const Vec& g = t.grad(out);
      Vec& ga = t.grad(a);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) ga[std::size_t(r) * cols + c] += g[r];
    };
    return out;
  }

  Var col_sums(Var a, int rows, int cols) {
    check(dim(a) == rows * cols, "col_sums: shape mismatch");
    const Vec& av = val(a);
    Vec y(cols, 0.0);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) y[c] += av[std::size_t(r) * cols + c];
    Var out = make(std::move(y), nullptr);
    node(out).back = [a, rows, cols, out](Tape& t) {
      const Vec& g = t.grad(out);
      Vec& ga = t.grad(a);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) ga[std::size_t(r) * cols + c] += g[c];
    };
    return out;
  }

  Var sum_scalars(const std::vector<Var>& scalars) {
    double acc = 0.0;
    for (Var s : scalars) {
      check(dim(s) == 1, "sum_scalars: non-scalar element");
      acc += val(s)[0];
    }
    Var out = make(Vec{acc}, nullptr);
    node(out).back = [scalars, out](Tape& t) {
      double g = t.grad(out)[0];
      for (Var s : scalars) t.grad(s)[0] += g;
    };
    return out;
  }

  // log(exp a + exp b) on scalars, stable.
  Var logaddexp(Var a, Var b) {
    check(dim(a) == 1 && dim(b) == 1, "logaddexp: scalars only");
    double av = val(a)[0], bv = val(b)[0];
    double hi = std::max(av, bv);
    double y = hi + std::log(std::exp(av - hi) + std::exp(bv - hi));
    Var out = make(Vec{y}, nullptr);
    node(out).back = [a, b, out](Tape& t) {
      double g = t.grad(out)[0];
      if (g == 0.0) return;
      double y = t.val(out)[0];
      t.grad(a)[0] += g * std::exp(t.val(a)[0] - y);
      t.grad(b)[0] += g * std::exp(t.val(b)[0] - y);
    };
    return out;
  }

  // ---- softmax family ----------------------------------------------------

  Var log_softmax(Var a) {
    const Vec& av = val(a);
    double hi = av[0];
    for (double v : av) hi = std::max(hi, v);
    double z = 0.0;
    for (double v : av) z += std::exp(v - hi);
    double logz = hi + std::log(z);
    Vec y(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) y[i] = av[i] - logz;
    Var out = make(std::move(y), nullptr);
    node(out).back = [a, out](Tape& t) {
      const Vec& g = t.grad(out);
      const Vec& y = t.val(out);
      Vec& ga = t.grad(a);
      double gsum = 0.0;
      for (double v : g) gsum += v;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] - std::exp(y[i]) * gsum;
    };
    return out;
  }

  Var softmax(Var a) {
    const Vec& av = val(a);
    double hi = av[0];
    for (double v : av) hi = std::max(hi, v);
    double z = 0.0;
    Vec y(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
      y[i] = std::exp(av[i] - hi);
      z += y[i];
    }
    for (double& v : y) v /= z;
    Var out = make(std::move(y), nullptr);
    node(out).back = [a, out](Tape& t) {
      const Vec& g = t.grad(out);
      const Vec& y = t.val(out);
      Vec& ga = t.grad(a);
      double gy = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) gy += g[i] * y[i];
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += y[i] * (g[i] - gy);
    };
    return out;
  }

  // Negative log-likelihood of one target under logits.
  Var nll(Var logits, int target) {
    return neg(pick(log_softmax(logits), target));
  }

  // ---- mixtures ----------------------------------------------------------

  // y = sum_i weights[i] * vecs[i], weights a vector node over vecs.
  Var weighted_sum(Var weights, const std::vector<Var>& vecs) {
    check(dim(weights) == static_cast<int>(vecs.size()), "weighted_sum: arity mismatch");
    check(!vecs.empty(), "weighted_sum: empty");
    const Vec& wv = val(weights);
    Vec y(dim(vecs[0]), 0.0);
    for (std::size_t i = 0; i < vecs.size(); ++i) {
      const Vec& vv = val(vecs[i]);
      check(vv.size() == y.size(), "weighted_sum: vec dim mismatch");
      for (std::size_t k = 0; k < y.size(); ++k) y[k] += wv[i] * vv[k];
    }
    Var out = make(std::move(y), nullptr);
    node(out).back = [weights, vecs, out](Tape& t) {
      const Vec& g = t.grad(out);
      const Vec& wv = t.val(weights);
      Vec& wg = t.grad(weights);
      for (std::size_t i = 0; i < vecs.size(); ++i) {
        const Vec& vv = t.val(vecs[i]);
        Vec& vg = t.grad(vecs[i]);
        double acc = 0.0;
        for (std::size_t k = 0; k < g.size(); ++k) {
          acc += g[k] * vv[k];
          vg[k] += wv[i] * g[k];
        }
        wg[i] += acc;
      }
    };
    return out;
  }

  // y = sum_i coeffs[i] * vecs[i], each coeff a scalar node.
  Var lincomb(const std::vector<Var>& coeffs, const std::vector<Var>& vecs) {
    check(coeffs.size() == vecs.size() && !vecs.empty(), "lincomb: arity mismatch");
    Vec y(dim(vecs[0]), 0.0);
    for (std::size_t i = 0; i < vecs.size(); ++i) {
      double c = val(coeffs[i])[0];
      const Vec& vv = val(vecs[i]);
      for (std::size_t k = 0; k < y.size(); ++k) y[k] += c * vv[k];
    }
    Var out = make(std::move(y), nullptr);
    node(out).back = [coeffs, vecs, out](Tape& t) {
      const Vec& g = t.grad(out);
      for (std::size_t i = 0; i < vecs.size(); ++i) {
        const Vec& vv = t.val(vecs[i]);
        Vec& vg = t.grad(vecs[i]);
        double c = t.val(coeffs[i])[0];
        double acc = 0.0;
        for (std::size_t k = 0; k < g.size(); ++k) {
          acc += g[k] * vv[k];
          vg[k] += c * g[k];
        }
        t.grad(coeffs[i])[0] += acc;
      }
    };
    return out;
  }

  Var lincomb_const(const std::vector<double>& coeffs, const std::vector<Var>& vecs) {
    check(coeffs.size() == vecs.size() && !vecs.empty(), "lincomb_const: arity mismatch");
    Vec y(dim(vecs[0]), 0.0);
    for (std::size_t i = 0; i < vecs.size(); ++i) {
      const Vec& vv = val(vecs[i]);
      for (std::size_t k = 0; k < y.size(); ++k) y[k] += coeffs[i] * vv[k];
    }
    Var out = make(std::move(y), nullptr);
    node(out).back = [coeffs, vecs, out](Tape& t) {
      const Vec& g = t.grad(out);
      for (std::size_t i = 0; i < vecs.size(); ++i) {
        Vec& vg = t.grad(vecs[i]);
        for (std::size_t k = 0; k < g.size(); ++k) vg[k] += coeffs[i] * g[k];
      }
    };
    return out;
  }

  Var average(const std::vector<Var>& vecs) {
    return lincomb_const(std::vector<double>(vecs.size(), 1.0 / vecs.size()), vecs);
  }

  // v * s with s scalar.
  Var mul_scalar(Var v, Var s) {
    check(dim(s) == 1, "mul_scalar: s not scalar");
    double sv = val(s)[0];
    Vec y = val(v);
    for (double& x : y) x *= sv;
    Var out = make(std::move(y), nullptr);
    node(out).back = [v, s, out](Tape& t) {
      const Vec& g = t.grad(out);
      const Vec& vv = t.val(v);
      double sv = t.val(s)[0];
      Vec& vg = t.grad(v);
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        vg[i] += sv * g[i];
        acc += g[i] * vv[i];
      }
      t.grad(s)[0] += acc;
    };
    return out;
  }

  // 1 / max(s, eps); derivative zero in the clamped region.
  Var recip_clamped(Var s, double eps) {
    check(dim(s) == 1, "recip_clamped: s not scalar");
    double sv = val(s)[0];
    double d = std::max(sv, eps);
    Var out = make(Vec{1.0 / d}, nullptr);
    node(out).back = [s, eps, out](Tape& t) {
      double sv = t.val(s)[0];
      if (sv > eps) t.grad(s)[0] += -t.grad(out)[0] / (sv * sv);
    };
    return out;
  }

  // ---- backward ----------------------------------------------------------

  void backward(Var root) {
    Vec& g = grad(root);
    std::fill(g.begin(), g.end(), 1.0);
    for (int i = root.id; i >= 0; --i)
      if (nodes_[i].back) nodes_[i].back(*this);
  }

 private:
  struct Node {
    Vec val;
    Vec grad;
    std::function<void(Tape&)> back;
  };

  Node& node(Var v) { return nodes_[v.id]; }

  Var make(Vec val, std::function<void(Tape&)> back) {
    Node n;
    n.grad.assign(val.size(), 0.0);
    n.val = std::move(val);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  static void check(bool ok, const char* what) {
    if (!ok) throw Error(std::string("autodiff: ") + what);
  }

  std::vector<Node> nodes_;
};

using Var = Tape::Var;

}  // namespace gloss::ad
