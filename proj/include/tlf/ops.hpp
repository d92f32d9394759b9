#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tlf/tensor.hpp"

namespace tlf {

enum class Padding { Same, Valid };
enum class Mode { Train, Infer };

namespace detail {

inline int norm_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw std::invalid_argument("axis out of range");
  return axis;
}

inline bool wants_grad(const NodePtr& n) { return n && n->needs_grad; }

// Splits a shape into (outer, extent-at-axis, inner) products.
struct AxisSplit {
  int outer = 1, k = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit sp;
  sp.k = s[static_cast<std::size_t>(axis)];
  for (int i = 0; i < axis; ++i) sp.outer *= s[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < static_cast<int>(s.size()); ++i)
    sp.inner *= s[static_cast<std::size_t>(i)];
  return sp;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pointwise operations
// ---------------------------------------------------------------------------

// Unary pointwise op; `dfdx(x, y)` is the local derivative at one element.
template <typename F, typename D>
Tensor pointwise_unary(const Tensor& x, F f, D dfdx) {
  std::vector<double> out(x.values().size());
  const double* xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_op(x.shape(), std::move(out), {x}, [dfdx](Node& n) {
    auto& p = n.parents[0];
    if (!detail::wants_grad(p)) return;
    auto& gx = p->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i)
      gx[i] += n.grad[i] * dfdx(p->value[i], n.value[i]);
  });
}

namespace detail {
inline double*& kink_margin_slot() {
  thread_local double* p = nullptr;
  return p;
}
inline void note_kink_distance(double d) {
  if (double* m = kink_margin_slot())
    if (d < *m) *m = d;
}
}  // namespace detail

// Tracks the smallest distance of any relu/clip argument to its kink during
// the guarded forward passes. Finite-difference checks are only meaningful at
// differentiable points; this lets a check verify it is evaluating one.
class KinkMonitor {
 public:
  KinkMonitor() : prev_(detail::kink_margin_slot()) { detail::kink_margin_slot() = &margin_; }
  ~KinkMonitor() { detail::kink_margin_slot() = prev_; }
  KinkMonitor(const KinkMonitor&) = delete;
  KinkMonitor& operator=(const KinkMonitor&) = delete;
  double margin() const { return margin_; }

 private:
  double margin_ = 1e300;
  double* prev_;
};

inline Tensor relu(const Tensor& x) {
  if (detail::kink_margin_slot())
    for (double v : x.values()) detail::note_kink_distance(std::fabs(v));
  return pointwise_unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& x) {
  return pointwise_unary(
      x,
      [](double v) {
        return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh_op(const Tensor& x) {
  return pointwise_unary(x, [](double v) { return std::tanh(v); },
                         [](double, double y) { return 1.0 - y * y; });
}

inline Tensor log_op(const Tensor& x) {
  return pointwise_unary(x, [](double v) { return std::log(v); },
                         [](double v, double) { return 1.0 / v; });
}

// y = a*x + b
inline Tensor affine(const Tensor& x, double a, double b) {
  return pointwise_unary(x, [a, b](double v) { return a * v + b; },
                         [a](double, double) { return a; });
}

inline Tensor clip(const Tensor& x, double lo, double hi) {
  return pointwise_unary(
      x, [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

// x^p with constant exponent; p = 0 maps everything to 1 with zero slope.
inline Tensor pow_const(const Tensor& x, double p) {
  return pointwise_unary(
      x, [p](double v) { return p == 0.0 ? 1.0 : std::pow(v, p); },
      [p](double v, double) { return p == 0.0 ? 0.0 : p * std::pow(v, p - 1.0); });
}

// log(cosh(x)) evaluated without overflow: |x| + log1p(exp(-2|x|)) - log 2.
inline Tensor logcosh(const Tensor& x) {
  return pointwise_unary(
      x,
      [](double v) {
        const double a = std::fabs(v);
        return a + std::log1p(std::exp(-2.0 * a)) - 0.6931471805599453094;
      },
      [](double v, double) { return std::tanh(v); });
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!same_shape(a.shape(), b.shape()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& n) {
    for (int p = 0; p < 2; ++p) {
      if (!detail::wants_grad(n.parents[p])) continue;
      auto& g = n.parents[p]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& n) {
    if (detail::wants_grad(n.parents[0])) {
      auto& g = n.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (detail::wants_grad(n.parents[1])) {
      auto& g = n.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& n) {
    auto &pa = n.parents[0], &pb = n.parents[1];
    if (detail::wants_grad(pa)) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pb->value[i];
    }
    if (detail::wants_grad(pb)) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pa->value[i];
    }
  });
}

// Multiplies x by m where m's shape is a prefix of x's shape; m is broadcast
// over the trailing axes. Covers per-pixel and per-sample scaling.
inline Tensor mul_bcast_prefix(const Tensor& x, const Tensor& m) {
  const auto& xs = x.shape();
  const auto& ms = m.shape();
  if (ms.size() > xs.size() || !std::equal(ms.begin(), ms.end(), xs.begin()))
    throw std::invalid_argument("mul_bcast_prefix: " + shape_str(ms) + " is not a prefix of " +
                                shape_str(xs));
  const int rep = x.size() / m.size();
  std::vector<double> out(x.values().size());
  for (int j = 0; j < m.size(); ++j) {
    const double mv = m.data()[j];
    const double* xr = x.data() + static_cast<std::ptrdiff_t>(j) * rep;
    double* orow = out.data() + static_cast<std::ptrdiff_t>(j) * rep;
    for (int i = 0; i < rep; ++i) orow[i] = xr[i] * mv;
  }
  return make_op(x.shape(), std::move(out), {x, m}, [rep](Node& n) {
    auto &px = n.parents[0], &pm = n.parents[1];
    const int mlen = static_cast<int>(pm->value.size());
    if (detail::wants_grad(px)) {
      auto& gx = px->ensure_grad();
      for (int j = 0; j < mlen; ++j) {
        const double mv = pm->value[static_cast<std::size_t>(j)];
        for (int i = 0; i < rep; ++i) {
          const std::size_t idx = static_cast<std::size_t>(j) * rep + i;
          gx[idx] += n.grad[idx] * mv;
        }
      }
    }
    if (detail::wants_grad(pm)) {
      auto& gm = pm->ensure_grad();
      for (int j = 0; j < mlen; ++j) {
        double acc = 0.0;
        for (int i = 0; i < rep; ++i) {
          const std::size_t idx = static_cast<std::size_t>(j) * rep + i;
          acc += n.grad[idx] * px->value[idx];
        }
        gm[static_cast<std::size_t>(j)] += acc;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Shape operations
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.size())
    throw std::invalid_argument("reshape: element count mismatch");
  std::vector<double> out = x.values();
  return make_op(std::move(new_shape), std::move(out), {x}, [](Node& n) {
    if (!detail::wants_grad(n.parents[0])) return;
    auto& g = n.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

// Stacks k same-shape tensors along a new trailing axis.
inline Tensor stack_last(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("stack_last: empty input");
  const Shape base = xs[0].shape();
  for (const auto& t : xs) require_same_shape(t, xs[0], "stack_last");
  const int k = static_cast<int>(xs.size());
  const int n = xs[0].size();
  Shape out_shape = base;
  out_shape.push_back(k);
  std::vector<double> out(static_cast<std::size_t>(n) * k);
  for (int t = 0; t < k; ++t)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j) * k + t] = xs[t].data()[j];
  return make_op(std::move(out_shape), std::move(out), xs, [k, n](Node& nd) {
    for (int t = 0; t < k; ++t) {
      if (!detail::wants_grad(nd.parents[t])) continue;
      auto& g = nd.parents[t]->ensure_grad();
      for (int j = 0; j < n; ++j) g[j] += nd.grad[static_cast<std::size_t>(j) * k + t];
    }
  });
}

// Selects one index of the trailing axis, dropping that axis.
inline Tensor select_last(const Tensor& x, int index) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw std::invalid_argument("select_last: rank must be >= 2");
  const int c = s.back();
  if (index < 0 || index >= c) throw std::invalid_argument("select_last: index out of range");
  Shape out_shape(s.begin(), s.end() - 1);
  const int n = x.size() / c;
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) out[j] = x.data()[static_cast<std::size_t>(j) * c + index];
  return make_op(std::move(out_shape), std::move(out), {x}, [c, index, n](Node& nd) {
    if (!detail::wants_grad(nd.parents[0])) return;
    auto& g = nd.parents[0]->ensure_grad();
    for (int j = 0; j < n; ++j) g[static_cast<std::size_t>(j) * c + index] += nd.grad[j];
  });
}

// Contiguous range of the trailing axis.
inline Tensor narrow_last(const Tensor& x, int start, int count) {
  const Shape& s = x.shape();
  const int c = s.back();
  if (start < 0 || count <= 0 || start + count > c)
    throw std::invalid_argument("narrow_last: range out of bounds");
  Shape out_shape = s;
  out_shape.back() = count;
  const int n = x.size() / c;
  std::vector<double> out(static_cast<std::size_t>(n) * count);
  for (int j = 0; j < n; ++j)
    for (int q = 0; q < count; ++q)
      out[static_cast<std::size_t>(j) * count + q] =
          x.data()[static_cast<std::size_t>(j) * c + start + q];
  return make_op(std::move(out_shape), std::move(out), {x}, [c, start, count, n](Node& nd) {
    if (!detail::wants_grad(nd.parents[0])) return;
    auto& g = nd.parents[0]->ensure_grad();
    for (int j = 0; j < n; ++j)
      for (int q = 0; q < count; ++q)
        g[static_cast<std::size_t>(j) * c + start + q] +=
            nd.grad[static_cast<std::size_t>(j) * count + q];
  });
}

// Concatenates along the trailing axis.
inline Tensor concat_last(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_last: empty input");
  Shape lead(xs[0].shape().begin(), xs[0].shape().end() - 1);
  int ctot = 0;
  std::vector<int> widths;
  for (const auto& t : xs) {
    Shape l(t.shape().begin(), t.shape().end() - 1);
    if (l != lead) throw std::invalid_argument("concat_last: leading shape mismatch");
    widths.push_back(t.shape().back());
    ctot += t.shape().back();
  }
  Shape out_shape = lead;
  out_shape.push_back(ctot);
  const int n = shape_numel(lead);
  std::vector<double> out(static_cast<std::size_t>(n) * ctot);
  int off = 0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const int w = widths[t];
    for (int j = 0; j < n; ++j)
      for (int q = 0; q < w; ++q)
        out[static_cast<std::size_t>(j) * ctot + off + q] =
            xs[t].data()[static_cast<std::size_t>(j) * w + q];
    off += w;
  }
  return make_op(std::move(out_shape), std::move(out), xs, [widths, ctot, n](Node& nd) {
    int o = 0;
    for (std::size_t t = 0; t < widths.size(); ++t) {
      const int w = widths[t];
      if (detail::wants_grad(nd.parents[t])) {
        auto& g = nd.parents[t]->ensure_grad();
        for (int j = 0; j < n; ++j)
          for (int q = 0; q < w; ++q)
            g[static_cast<std::size_t>(j) * w + q] +=
                nd.grad[static_cast<std::size_t>(j) * ctot + o + q];
      }
      o += w;
    }
  });
}

// Concatenates along axis 0 (used to fold time into the batch axis).
inline Tensor concat0(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat0: empty input");
  Shape rest(xs[0].shape().begin() + 1, xs[0].shape().end());
  int btot = 0;
  std::vector<int> lens;
  for (const auto& t : xs) {
    Shape r(t.shape().begin() + 1, t.shape().end());
    if (r != rest) throw std::invalid_argument("concat0: trailing shape mismatch");
    lens.push_back(t.size());
    btot += t.shape()[0];
  }
  Shape out_shape = {btot};
  out_shape.insert(out_shape.end(), rest.begin(), rest.end());
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(btot) * (rest.empty() ? 1 : shape_numel(rest)));
  for (const auto& t : xs) out.insert(out.end(), t.values().begin(), t.values().end());
  return make_op(std::move(out_shape), std::move(out), xs, [lens](Node& nd) {
    std::size_t off = 0;
    for (std::size_t t = 0; t < lens.size(); ++t) {
      if (detail::wants_grad(nd.parents[t])) {
        auto& g = nd.parents[t]->ensure_grad();
        for (int j = 0; j < lens[t]; ++j) g[j] += nd.grad[off + j];
      }
      off += static_cast<std::size_t>(lens[t]);
    }
  });
}

// Rows [start, start+count) of axis 0.
inline Tensor slice0(const Tensor& x, int start, int count) {
  const Shape& s = x.shape();
  if (start < 0 || count <= 0 || start + count > s[0])
    throw std::invalid_argument("slice0: range out of bounds");
  const int row = x.size() / s[0];
  Shape out_shape = s;
  out_shape[0] = count;
  std::vector<double> out(static_cast<std::size_t>(count) * row);
  std::copy_n(x.data() + static_cast<std::ptrdiff_t>(start) * row, out.size(), out.begin());
  return make_op(std::move(out_shape), std::move(out), {x}, [start, row](Node& nd) {
    if (!detail::wants_grad(nd.parents[0])) return;
    auto& g = nd.parents[0]->ensure_grad();
    const std::size_t off = static_cast<std::size_t>(start) * row;
    for (std::size_t j = 0; j < nd.grad.size(); ++j) g[off + j] += nd.grad[j];
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return make_op({1}, {acc}, {x}, [](Node& n) {
    if (!detail::wants_grad(n.parents[0])) return;
    auto& g = n.parents[0]->ensure_grad();
    for (auto& gv : g) gv += n.grad[0];
  });
}

inline Tensor mean_all(const Tensor& x) {
  const double inv = 1.0 / x.size();
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return make_op({1}, {acc * inv}, {x}, [inv](Node& n) {
    if (!detail::wants_grad(n.parents[0])) return;
    auto& g = n.parents[0]->ensure_grad();
    for (auto& gv : g) gv += n.grad[0] * inv;
  });
}

namespace detail {
inline Shape drop_axis(const Shape& s, int axis) {
  Shape out;
  for (int i = 0; i < static_cast<int>(s.size()); ++i)
    if (i != axis) out.push_back(s[static_cast<std::size_t>(i)]);
  if (out.empty()) out.push_back(1);
  return out;
}
}  // namespace detail

inline Tensor sum_axis(const Tensor& x, int axis) {
  axis = detail::norm_axis(axis, x.rank());
  const auto sp = detail::split_axis(x.shape(), axis);
  std::vector<double> out(static_cast<std::size_t>(sp.outer) * sp.inner, 0.0);
  const double* xv = x.data();
  for (int o = 0; o < sp.outer; ++o)
    for (int r = 0; r < sp.k; ++r)
      for (int i = 0; i < sp.inner; ++i)
        out[static_cast<std::size_t>(o) * sp.inner + i] +=
            xv[(static_cast<std::size_t>(o) * sp.k + r) * sp.inner + i];
  return make_op(detail::drop_axis(x.shape(), axis), std::move(out), {x}, [sp](Node& n) {
    if (!detail::wants_grad(n.parents[0])) return;
    auto& g = n.parents[0]->ensure_grad();
    for (int o = 0; o < sp.outer; ++o)
      for (int r = 0; r < sp.k; ++r)
        for (int i = 0; i < sp.inner; ++i)
          g[(static_cast<std::size_t>(o) * sp.k + r) * sp.inner + i] +=
              n.grad[static_cast<std::size_t>(o) * sp.inner + i];
  });
}

inline Tensor mean_axis(const Tensor& x, int axis) {
  axis = detail::norm_axis(axis, x.rank());
  const double inv = 1.0 / x.shape()[static_cast<std::size_t>(axis)];
  return affine(sum_axis(x, axis), inv, 0.0);
}

// Maximum along an axis; ties resolve to the lowest index. The winning
// indices are optionally reported and receive the full gradient.
inline Tensor max_axis(const Tensor& x, int axis, std::vector<int>* argmax_out = nullptr) {
  axis = detail::norm_axis(axis, x.rank());
  const auto sp = detail::split_axis(x.shape(), axis);
  if (sp.k <= 0) throw std::invalid_argument("max_axis: empty reduction extent");
  std::vector<double> out(static_cast<std::size_t>(sp.outer) * sp.inner);
  std::vector<int> arg(out.size(), 0);
  const double* xv = x.data();
  for (int o = 0; o < sp.outer; ++o)
    for (int i = 0; i < sp.inner; ++i) {
      double best = xv[(static_cast<std::size_t>(o) * sp.k) * sp.inner + i];
      int bi = 0;
      for (int r = 1; r < sp.k; ++r) {
        const double v = xv[(static_cast<std::size_t>(o) * sp.k + r) * sp.inner + i];
        if (v > best) {
          best = v;
          bi = r;
        }
      }
      out[static_cast<std::size_t>(o) * sp.inner + i] = best;
      arg[static_cast<std::size_t>(o) * sp.inner + i] = bi;
    }
  if (argmax_out) *argmax_out = arg;
  return make_op(detail::drop_axis(x.shape(), axis), std::move(out), {x},
                 [sp, arg = std::move(arg)](Node& n) {
                   if (!detail::wants_grad(n.parents[0])) return;
                   auto& g = n.parents[0]->ensure_grad();
                   for (int o = 0; o < sp.outer; ++o)
                     for (int i = 0; i < sp.inner; ++i) {
                       const std::size_t oi = static_cast<std::size_t>(o) * sp.inner + i;
                       g[(static_cast<std::size_t>(o) * sp.k + arg[oi]) * sp.inner + i] +=
                           n.grad[oi];
                     }
                 });
}

inline Tensor sum_last(const Tensor& x) { return sum_axis(x, x.rank() - 1); }

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

inline Tensor softmax_axis(const Tensor& x, int axis) {
  axis = detail::norm_axis(axis, x.rank());
  const auto sp = detail::split_axis(x.shape(), axis);
  std::vector<double> out(x.values().size());
  const double* xv = x.data();
  for (int o = 0; o < sp.outer; ++o)
    for (int i = 0; i < sp.inner; ++i) {
      double mx = -1e300;
      for (int r = 0; r < sp.k; ++r)
        mx = std::max(mx, xv[(static_cast<std::size_t>(o) * sp.k + r) * sp.inner + i]);
      double z = 0.0;
      for (int r = 0; r < sp.k; ++r) {
        const std::size_t idx = (static_cast<std::size_t>(o) * sp.k + r) * sp.inner + i;
        out[idx] = std::exp(xv[idx] - mx);
        z += out[idx];
      }
      const double inv = 1.0 / z;
      for (int r = 0; r < sp.k; ++r)
        out[(static_cast<std::size_t>(o) * sp.k + r) * sp.inner + i] *= inv;
    }
  return make_op(x.shape(), std::move(out), {x}, [sp](Node& n) {
    if (!detail::wants_grad(n.parents[0])) return;
    auto& g = n.parents[0]->ensure_grad();
    for (int o = 0; o < sp.outer; ++o)
      for (int i = 0; i < sp.inner; ++i) {
        double dot = 0.0;
        for (int r = 0; r < sp.k; ++r) {
          const std::size_t idx = (static_cast<std::size_t>(o) * sp.k + r) * sp.inner + i;
          dot += n.grad[idx] * n.value[idx];
        }
        for (int r = 0; r < sp.k; ++r) {
          const std::size_t idx = (static_cast<std::size_t>(o) * sp.k + r) * sp.inner + i;
          g[idx] += n.value[idx] * (n.grad[idx] - dot);
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Dense (affine map over the trailing axis)
// ---------------------------------------------------------------------------

// x[..., n] * W[m, n]^T + b[m] -> [..., m]
inline Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const Shape& ws = weight.shape();
  if (ws.size() != 2) throw std::invalid_argument("dense: weight must be rank 2");
  const int m = ws[0], in = ws[1];
  if (x.shape().back() != in)
    throw std::invalid_argument("dense: input width " + std::to_string(x.shape().back()) +
                                " != weight width " + std::to_string(in));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != m))
    throw std::invalid_argument("dense: bias shape mismatch");
  const int rows = x.size() / in;
  Shape out_shape = x.shape();
  out_shape.back() = m;
  std::vector<double> out(static_cast<std::size_t>(rows) * m);
  const double* xv = x.data();
  const double* wv = weight.data();
  for (int r = 0; r < rows; ++r) {
    const double* xr = xv + static_cast<std::ptrdiff_t>(r) * in;
    double* orow = out.data() + static_cast<std::ptrdiff_t>(r) * m;
    for (int j = 0; j < m; ++j) {
      const double* wr = wv + static_cast<std::ptrdiff_t>(j) * in;
      double acc = bias.defined() ? bias.data()[j] : 0.0;
      for (int k = 0; k < in; ++k) acc += xr[k] * wr[k];
      orow[j] = acc;
    }
  }
  std::vector<Tensor> parents = {x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_op(std::move(out_shape), std::move(out), std::move(parents),
                 [rows, m, in](Node& n) {
                   auto& px = n.parents[0];
                   auto& pw = n.parents[1];
                   if (detail::wants_grad(px)) {
                     auto& gx = px->ensure_grad();
                     for (int r = 0; r < rows; ++r)
                       for (int j = 0; j < m; ++j) {
                         const double gy = n.grad[static_cast<std::size_t>(r) * m + j];
                         if (gy == 0.0) continue;
                         const double* wr = pw->value.data() + static_cast<std::ptrdiff_t>(j) * in;
                         double* gxr = gx.data() + static_cast<std::ptrdiff_t>(r) * in;
                         for (int k = 0; k < in; ++k) gxr[k] += gy * wr[k];
                       }
                   }
                   if (detail::wants_grad(pw)) {
                     auto& gw = pw->ensure_grad();
                     for (int r = 0; r < rows; ++r)
                       for (int j = 0; j < m; ++j) {
                         const double gy = n.grad[static_cast<std::size_t>(r) * m + j];
                         if (gy == 0.0) continue;
                         const double* xr = px->value.data() + static_cast<std::ptrdiff_t>(r) * in;
                         double* gwr = gw.data() + static_cast<std::ptrdiff_t>(j) * in;
                         for (int k = 0; k < in; ++k) gwr[k] += gy * xr[k];
                       }
                   }
                   if (n.parents.size() > 2 && detail::wants_grad(n.parents[2])) {
                     auto& gb = n.parents[2]->ensure_grad();
                     for (int r = 0; r < rows; ++r)
                       for (int j = 0; j < m; ++j)
                         gb[j] += n.grad[static_cast<std::size_t>(r) * m + j];
                   }
                 });
}

// ---------------------------------------------------------------------------
// 2-D convolution (channel-last, odd kernels, zero padding)
// ---------------------------------------------------------------------------

struct Conv2dSpec {
  int stride = 1;
  int dilation = 1;
  Padding padding = Padding::Same;
};

namespace detail {

struct ConvDims {
  int batch, h, w, cin;         // input
  int kh, kw, cout;             // kernel
  int ph, pw;                   // zero padding per side
  int ho, wo;                   // output spatial extent
  int stride, dil;
  bool batched;                 // rank-4 input
};

inline ConvDims conv_dims(const Tensor& x, const Tensor& kernel, const Conv2dSpec& spec) {
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if (xs.size() != 3 && xs.size() != 4)
    throw std::invalid_argument("conv2d: input must be [H,W,C] or [B,H,W,C]");
  if (ks.size() != 4) throw std::invalid_argument("conv2d: kernel must be [kh,kw,Cin,Cout]");
  ConvDims d;
  d.batched = xs.size() == 4;
  d.batch = d.batched ? xs[0] : 1;
  d.h = xs[xs.size() - 3];
  d.w = xs[xs.size() - 2];
  d.cin = xs[xs.size() - 1];
  d.kh = ks[0];
  d.kw = ks[1];
  d.cout = ks[3];
  d.stride = spec.stride;
  d.dil = spec.dilation;
  if (d.kh % 2 == 0 || d.kw % 2 == 0)
    throw std::invalid_argument("conv2d: kernel extents must be odd");
  if (d.stride < 1 || d.dil < 1)
    throw std::invalid_argument("conv2d: stride and dilation must be >= 1");
  if (ks[2] != d.cin)
    throw std::invalid_argument("conv2d: kernel input channels " + std::to_string(ks[2]) +
                                " != input channels " + std::to_string(d.cin));
  if (spec.padding == Padding::Same) {
    d.ph = d.dil * (d.kh - 1) / 2;
    d.pw = d.dil * (d.kw - 1) / 2;
  } else {
    d.ph = d.pw = 0;
  }
  d.ho = (d.h + 2 * d.ph - d.dil * (d.kh - 1) - 1) / d.stride + 1;
  d.wo = (d.w + 2 * d.pw - d.dil * (d.kw - 1) - 1) / d.stride + 1;
  if (d.ho <= 0 || d.wo <= 0) throw std::invalid_argument("conv2d: kernel larger than input");
  return d;
}

}  // namespace detail

inline Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                     const Conv2dSpec& spec = {}) {
  const auto d = detail::conv_dims(x, kernel, spec);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != d.cout))
    throw std::invalid_argument("conv2d: bias shape mismatch");
  Shape out_shape = d.batched ? Shape{d.batch, d.ho, d.wo, d.cout} : Shape{d.ho, d.wo, d.cout};
  std::vector<double> out(static_cast<std::size_t>(d.batch) * d.ho * d.wo * d.cout);
  const double* xv = x.data();
  const double* kv = kernel.data();
  const double* bv = bias.defined() ? bias.data() : nullptr;

#pragma omp parallel for schedule(static) collapse(2)
  for (int b = 0; b < d.batch; ++b)
    for (int oy = 0; oy < d.ho; ++oy) {
      const double* xb = xv + static_cast<std::ptrdiff_t>(b) * d.h * d.w * d.cin;
      double* ob =
          out.data() + ((static_cast<std::ptrdiff_t>(b) * d.ho + oy) * d.wo) * d.cout;
      for (int ox = 0; ox < d.wo; ++ox) {
        double* orow = ob + static_cast<std::ptrdiff_t>(ox) * d.cout;
        if (bv)
          std::copy_n(bv, d.cout, orow);
        else
          std::fill_n(orow, d.cout, 0.0);
        for (int ky = 0; ky < d.kh; ++ky) {
          const int iy = oy * d.stride - d.ph + ky * d.dil;
          if (iy < 0 || iy >= d.h) continue;
          for (int kx = 0; kx < d.kw; ++kx) {
            const int ix = ox * d.stride - d.pw + kx * d.dil;
            if (ix < 0 || ix >= d.w) continue;
            const double* xrow = xb + (static_cast<std::ptrdiff_t>(iy) * d.w + ix) * d.cin;
            const double* krow =
                kv + ((static_cast<std::ptrdiff_t>(ky) * d.kw + kx) * d.cin) * d.cout;
            for (int ci = 0; ci < d.cin; ++ci) {
              const double v = xrow[ci];
              if (v == 0.0) continue;
              const double* kr = krow + static_cast<std::ptrdiff_t>(ci) * d.cout;
              for (int co = 0; co < d.cout; ++co) orow[co] += v * kr[co];
            }
          }
        }
      }
    }

  if (!all_finite(out)) throw std::runtime_error("conv2d: non-finite output");

  std::vector<Tensor> parents = {x, kernel};
  if (bias.defined()) parents.push_back(bias);
  return make_op(std::move(out_shape), std::move(out), std::move(parents), [d](Node& n) {
    auto& px = n.parents[0];
    auto& pk = n.parents[1];
    const double* gy = n.grad.data();
    // d loss / d input: gather over kernel taps that touch each input cell.
    if (detail::wants_grad(px)) {
      auto& gx = px->ensure_grad();
      const double* kv = pk->value.data();
#pragma omp parallel for schedule(static) collapse(2)
      for (int b = 0; b < d.batch; ++b)
        for (int iy = 0; iy < d.h; ++iy) {
          double* gxb = gx.data() + static_cast<std::ptrdiff_t>(b) * d.h * d.w * d.cin;
          const double* gyb =
              gy + static_cast<std::ptrdiff_t>(b) * d.ho * d.wo * d.cout;
          for (int ix = 0; ix < d.w; ++ix) {
            double* gxrow = gxb + (static_cast<std::ptrdiff_t>(iy) * d.w + ix) * d.cin;
            for (int ky = 0; ky < d.kh; ++ky) {
              const int ty = iy + d.ph - ky * d.dil;
              if (ty < 0 || ty % d.stride != 0) continue;
              const int oy = ty / d.stride;
              if (oy >= d.ho) continue;
              for (int kx = 0; kx < d.kw; ++kx) {
                const int tx = ix + d.pw - kx * d.dil;
                if (tx < 0 || tx % d.stride != 0) continue;
                const int ox = tx / d.stride;
                if (ox >= d.wo) continue;
                const double* gyrow =
                    gyb + (static_cast<std::ptrdiff_t>(oy) * d.wo + ox) * d.cout;
                const double* kbase =
                    kv + ((static_cast<std::ptrdiff_t>(ky) * d.kw + kx) * d.cin) * d.cout;
                for (int ci = 0; ci < d.cin; ++ci) {
                  const double* kr = kbase + static_cast<std::ptrdiff_t>(ci) * d.cout;
                  double acc = 0.0;
                  for (int co = 0; co < d.cout; ++co) acc += kr[co] * gyrow[co];
                  gxrow[ci] += acc;
                }
              }
            }
          }
        }
    }
    // d loss / d kernel: each (ky,kx,ci) row owned by one iteration.
    if (detail::wants_grad(pk)) {
      auto& gk = pk->ensure_grad();
      const double* xv = px->value.data();
      const int taps = d.kh * d.kw * d.cin;
#pragma omp parallel for schedule(static)
      for (int tap = 0; tap < taps; ++tap) {
        const int ky = tap / (d.kw * d.cin);
        const int kx = (tap / d.cin) % d.kw;
        const int ci = tap % d.cin;
        double* gkr = gk.data() + static_cast<std::ptrdiff_t>(tap) * d.cout;
        for (int b = 0; b < d.batch; ++b) {
          const double* xb = xv + static_cast<std::ptrdiff_t>(b) * d.h * d.w * d.cin;
          const double* gyb = gy + static_cast<std::ptrdiff_t>(b) * d.ho * d.wo * d.cout;
          for (int oy = 0; oy < d.ho; ++oy) {
            const int iy = oy * d.stride - d.ph + ky * d.dil;
            if (iy < 0 || iy >= d.h) continue;
            for (int ox = 0; ox < d.wo; ++ox) {
              const int ix = ox * d.stride - d.pw + kx * d.dil;
              if (ix < 0 || ix >= d.w) continue;
              const double v = xb[(static_cast<std::ptrdiff_t>(iy) * d.w + ix) * d.cin + ci];
              if (v == 0.0) continue;
              const double* gyrow =
                  gyb + (static_cast<std::ptrdiff_t>(oy) * d.wo + ox) * d.cout;
              for (int co = 0; co < d.cout; ++co) gkr[co] += v * gyrow[co];
            }
          }
        }
      }
    }
    if (n.parents.size() > 2 && detail::wants_grad(n.parents[2])) {
      auto& gb = n.parents[2]->ensure_grad();
      const int cells = d.batch * d.ho * d.wo;
      for (int j = 0; j < cells; ++j)
        for (int co = 0; co < d.cout; ++co)
          gb[co] += gy[static_cast<std::size_t>(j) * d.cout + co];
    }
  });
}

// ---------------------------------------------------------------------------
// Bilinear upsampling (half-pixel centers)
// ---------------------------------------------------------------------------

namespace detail {

struct LerpTap {
  int lo, hi;
  double w_hi;  // weight of hi; lo gets (1 - w_hi)
};

inline std::vector<LerpTap> lerp_taps(int in_extent, int factor) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(in_extent) * factor);
  for (int o = 0; o < in_extent * factor; ++o) {
    double s = (o + 0.5) / factor - 0.5;
    s = std::min(std::max(s, 0.0), static_cast<double>(in_extent - 1));
    const int lo = static_cast<int>(std::floor(s));
    taps[static_cast<std::size_t>(o)] = {lo, std::min(lo + 1, in_extent - 1), s - lo};
  }
  return taps;
}

}  // namespace detail

inline Tensor bilinear_upsample(const Tensor& x, int factor) {
  if (factor < 1) throw std::invalid_argument("bilinear_upsample: factor must be >= 1");
  const Shape& s = x.shape();
  if (s.size() != 3 && s.size() != 4)
    throw std::invalid_argument("bilinear_upsample: input must be [H,W,C] or [B,H,W,C]");
  const bool batched = s.size() == 4;
  const int batch = batched ? s[0] : 1;
  const int h = s[s.size() - 3], w = s[s.size() - 2], c = s[s.size() - 1];
  const int ho = h * factor, wo = w * factor;
  const auto ty = detail::lerp_taps(h, factor);
  const auto tx = detail::lerp_taps(w, factor);
  Shape out_shape = batched ? Shape{batch, ho, wo, c} : Shape{ho, wo, c};
  std::vector<double> out(static_cast<std::size_t>(batch) * ho * wo * c);
  const double* xv = x.data();
  for (int b = 0; b < batch; ++b) {
    const double* xb = xv + static_cast<std::ptrdiff_t>(b) * h * w * c;
    double* ob = out.data() + static_cast<std::ptrdiff_t>(b) * ho * wo * c;
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        const auto& ay = ty[static_cast<std::size_t>(oy)];
        const auto& ax = tx[static_cast<std::size_t>(ox)];
        const double w00 = (1 - ay.w_hi) * (1 - ax.w_hi);
        const double w01 = (1 - ay.w_hi) * ax.w_hi;
        const double w10 = ay.w_hi * (1 - ax.w_hi);
        const double w11 = ay.w_hi * ax.w_hi;
        const double* r00 = xb + (static_cast<std::ptrdiff_t>(ay.lo) * w + ax.lo) * c;
        const double* r01 = xb + (static_cast<std::ptrdiff_t>(ay.lo) * w + ax.hi) * c;
        const double* r10 = xb + (static_cast<std::ptrdiff_t>(ay.hi) * w + ax.lo) * c;
        const double* r11 = xb + (static_cast<std::ptrdiff_t>(ay.hi) * w + ax.hi) * c;
        double* orow = ob + (static_cast<std::ptrdiff_t>(oy) * wo + ox) * c;
        for (int ch = 0; ch < c; ++ch)
          orow[ch] = w00 * r00[ch] + w01 * r01[ch] + w10 * r10[ch] + w11 * r11[ch];
      }
  }
  return make_op(std::move(out_shape), std::move(out), {x},
                 [batch, h, w, c, ho, wo, ty, tx](Node& n) {
                   if (!detail::wants_grad(n.parents[0])) return;
                   auto& gx = n.parents[0]->ensure_grad();
                   const double* gy = n.grad.data();
                   for (int b = 0; b < batch; ++b) {
                     double* gxb = gx.data() + static_cast<std::ptrdiff_t>(b) * h * w * c;
                     const double* gyb = gy + static_cast<std::ptrdiff_t>(b) * ho * wo * c;
                     for (int oy = 0; oy < ho; ++oy)
                       for (int ox = 0; ox < wo; ++ox) {
                         const auto& ay = ty[static_cast<std::size_t>(oy)];
                         const auto& ax = tx[static_cast<std::size_t>(ox)];
                         const double w00 = (1 - ay.w_hi) * (1 - ax.w_hi);
                         const double w01 = (1 - ay.w_hi) * ax.w_hi;
                         const double w10 = ay.w_hi * (1 - ax.w_hi);
                         const double w11 = ay.w_hi * ax.w_hi;
                         const double* gyr =
                             gyb + (static_cast<std::ptrdiff_t>(oy) * wo + ox) * c;
                         for (int ch = 0; ch < c; ++ch) {
                           const double g = gyr[ch];
                           if (g == 0.0) continue;
                           gxb[(static_cast<std::ptrdiff_t>(ay.lo) * w + ax.lo) * c + ch] +=
                               w00 * g;
                           gxb[(static_cast<std::ptrdiff_t>(ay.lo) * w + ax.hi) * c + ch] +=
                               w01 * g;
                           gxb[(static_cast<std::ptrdiff_t>(ay.hi) * w + ax.lo) * c + ch] +=
                               w10 * g;
                           gxb[(static_cast<std::ptrdiff_t>(ay.hi) * w + ax.hi) * c + ch] +=
                               w11 * g;
                         }
                       }
                   }
                 });
}

// ---------------------------------------------------------------------------
// Batch normalization (channel-last)
// ---------------------------------------------------------------------------

struct BnStats {
  std::vector<double> mean;
  std::vector<double> var;

  void init(int channels) {
    mean.assign(static_cast<std::size_t>(channels), 0.0);
    var.assign(static_cast<std::size_t>(channels), 1.0);
  }
  bool empty() const { return mean.empty(); }
};

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.9;

// Normalizes per channel over all leading axes. Train mode uses this batch's
// statistics (biased variance) and folds them into `stats` with momentum 0.9;
// infer mode applies the stored statistics.
inline Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Mode mode,
                         BnStats& stats) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw std::invalid_argument("batch_norm: input rank must be >= 2");
  const int c = s.back();
  const int n = x.size() / c;
  if (n == 0 || x.size() == 0) throw std::invalid_argument("batch_norm: empty batch");
  if (gamma.size() != c || beta.size() != c)
    throw std::invalid_argument("batch_norm: scale/shift must have one entry per channel");
  if (stats.empty()) stats.init(c);
  if (static_cast<int>(stats.mean.size()) != c)
    throw std::invalid_argument("batch_norm: running stats channel mismatch");

  std::vector<double> mu(static_cast<std::size_t>(c)), istd(static_cast<std::size_t>(c));
  if (mode == Mode::Train) {
    std::vector<double> var(static_cast<std::size_t>(c), 0.0);
    const double* xv = x.data();
    for (int ch = 0; ch < c; ++ch) mu[static_cast<std::size_t>(ch)] = 0.0;
    for (int j = 0; j < n; ++j)
      for (int ch = 0; ch < c; ++ch) mu[ch] += xv[static_cast<std::size_t>(j) * c + ch];
    for (int ch = 0; ch < c; ++ch) mu[ch] /= n;
    for (int j = 0; j < n; ++j)
      for (int ch = 0; ch < c; ++ch) {
        const double dv = xv[static_cast<std::size_t>(j) * c + ch] - mu[ch];
        var[ch] += dv * dv;
      }
    for (int ch = 0; ch < c; ++ch) {
      var[ch] /= n;
      istd[ch] = 1.0 / std::sqrt(var[ch] + kBnEps);
      stats.mean[ch] = kBnMomentum * stats.mean[ch] + (1.0 - kBnMomentum) * mu[ch];
      stats.var[ch] = kBnMomentum * stats.var[ch] + (1.0 - kBnMomentum) * var[ch];
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mu[ch] = stats.mean[ch];
      istd[ch] = 1.0 / std::sqrt(stats.var[ch] + kBnEps);
    }
  }

  std::vector<double> out(x.values().size());
  const double* xv = x.data();
  for (int j = 0; j < n; ++j)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t idx = static_cast<std::size_t>(j) * c + ch;
      out[idx] = gamma.data()[ch] * (xv[idx] - mu[ch]) * istd[ch] + beta.data()[ch];
    }

  const bool train = mode == Mode::Train;
  return make_op(x.shape(), std::move(out), {x, gamma, beta},
                 [n, c, mu, istd, train](Node& nd) {
                   auto& px = nd.parents[0];
                   auto& pg = nd.parents[1];
                   auto& pb = nd.parents[2];
                   const double* xv = px->value.data();
                   const double* gy = nd.grad.data();
                   // Per-channel sums of dy and dy*xhat feed every input grad.
                   std::vector<double> sum_dy(static_cast<std::size_t>(c), 0.0);
                   std::vector<double> sum_dy_xh(static_cast<std::size_t>(c), 0.0);
                   for (int j = 0; j < n; ++j)
                     for (int ch = 0; ch < c; ++ch) {
                       const std::size_t idx = static_cast<std::size_t>(j) * c + ch;
                       const double xh = (xv[idx] - mu[ch]) * istd[ch];
                       sum_dy[ch] += gy[idx];
                       sum_dy_xh[ch] += gy[idx] * xh;
                     }
                   if (detail::wants_grad(pg)) {
                     auto& g = pg->ensure_grad();
                     for (int ch = 0; ch < c; ++ch) g[ch] += sum_dy_xh[ch];
                   }
                   if (detail::wants_grad(pb)) {
                     auto& g = pb->ensure_grad();
                     for (int ch = 0; ch < c; ++ch) g[ch] += sum_dy[ch];
                   }
                   if (detail::wants_grad(px)) {
                     auto& gx = px->ensure_grad();
                     for (int j = 0; j < n; ++j)
                       for (int ch = 0; ch < c; ++ch) {
                         const std::size_t idx = static_cast<std::size_t>(j) * c + ch;
                         const double gscale = pg->value[ch] * istd[ch];
                         if (train) {
                           const double xh = (xv[idx] - mu[ch]) * istd[ch];
                           gx[idx] += gscale * (gy[idx] - sum_dy[ch] / n - xh * sum_dy_xh[ch] / n);
                         } else {
                           gx[idx] += gscale * gy[idx];
                         }
                       }
                   }
                 });
}

// ---------------------------------------------------------------------------
// Dropout (inverted scaling)
// ---------------------------------------------------------------------------

inline Tensor dropout(const Tensor& x, double rate, Mode mode, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (mode == Mode::Infer || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.values().size());
  for (auto& m : mask) m = rng.uniform() >= rate ? keep_scale : 0.0;
  std::vector<double> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * mask[i];
  return make_op(x.shape(), std::move(out), {x}, [mask = std::move(mask)](Node& n) {
    if (!detail::wants_grad(n.parents[0])) return;
    auto& g = n.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * mask[i];
  });
}

// ---------------------------------------------------------------------------
// Non-differentiable helpers
// ---------------------------------------------------------------------------

// Class labels from the trailing axis; ties resolve to the lowest index.
inline std::vector<std::uint8_t> argmax_last(const Tensor& probs) {
  const int c = probs.shape().back();
  const int n = probs.size() / c;
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    const double* row = probs.data() + static_cast<std::ptrdiff_t>(j) * c;
    int best = 0;
    for (int k = 1; k < c; ++k)
      if (row[k] > row[best]) best = k;
    labels[static_cast<std::size_t>(j)] = static_cast<std::uint8_t>(best);
  }
  return labels;
}

// One-hot encoding of class labels into shape spatial + [classes].
inline Tensor one_hot_last(const std::vector<std::uint8_t>& labels, Shape spatial, int classes) {
  const int n = shape_numel(spatial);
  if (n != static_cast<int>(labels.size()))
    throw std::invalid_argument("one_hot_last: label count does not match shape");
  Shape out_shape = std::move(spatial);
  out_shape.push_back(classes);
  std::vector<double> out(static_cast<std::size_t>(n) * classes, 0.0);
  for (int j = 0; j < n; ++j) {
    if (labels[static_cast<std::size_t>(j)] >= classes)
      throw std::invalid_argument("one_hot_last: label out of range");
    out[static_cast<std::size_t>(j) * classes + labels[static_cast<std::size_t>(j)]] = 1.0;
  }
  return Tensor::leaf(std::move(out_shape), std::move(out), false);
}

}  // namespace tlf
