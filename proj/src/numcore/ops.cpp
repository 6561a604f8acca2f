#include "qfuse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "qfuse/errors.hpp"

namespace qfuse {

namespace {

using detail::ImplPtr;

std::string op_error(const char* op, const std::string& what) { return std::string(op) + ": " + what; }

void require_defined(const char* op, const Tensor& t) {
  if (!t.defined()) throw ContractError(op_error(op, "undefined operand"));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  require_defined(op, t);
  if (t.rank() != rank) {
    throw DimensionError(op_error(op, "expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape())));
  }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  require_defined(op, a);
  require_defined(op, b);
  if (a.shape() != b.shape()) {
    throw DimensionError(op_error(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape())));
  }
}

Tensor make_result(Shape shape, std::vector<double> data) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return Tensor(std::move(impl));
}

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

// Checks the output (when finite checking is on) and records the node when a
// gradient can flow. `make_backward` is only invoked when recording.
template <typename MakeBackward>
void finish(const char* op, Tensor& out, std::initializer_list<const Tensor*> inputs, MakeBackward&& make_backward) {
  auto& graph = Graph::current();
  if (graph.check_finite() && !out.all_finite()) {
    throw ValidityError(std::string("non-finite value produced by ") + op);
  }
  if (!graph.grad_enabled() || !any_requires_grad(inputs)) return;
  out.set_requires_grad(true);
  GraphNode node;
  node.op = op;
  for (const Tensor* t : inputs) {
    if (t && t->defined()) node.inputs.push_back(t->impl());
  }
  node.output = out.impl();
  node.backward = make_backward(out.impl());
  graph.record(std::move(node));
}

// Accumulating matrix products on row-major buffers. Each kernel updates four
// output rows per pass over B; every output element still accumulates its
// terms in ascending order, so blocking does not change results.

// crow_q[j] += a_q * brow[j] for q < 4.
inline void axpy4(std::size_t n, const double* av, const double* __restrict brow, double* __restrict c0,
                  double* __restrict c1, double* __restrict c2,
                  double* __restrict c3) {
  const double a0 = av[0], a1 = av[1], a2 = av[2], a3 = av[3];
  for (std::size_t j = 0; j < n; ++j) {
    const double b = brow[j];
    c0[j] += a0 * b;
    c1[j] += a1 * b;
    c2[j] += a2 * b;
    c3[j] += a3 * b;
  }
}

// C[M,N] += A[M,K] * B[K,N]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av[4] = {a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]};
      axpy4(n, av, b + p * n, c + i * n, c + (i + 1) * n, c + (i + 2) * n, c + (i + 3) * n);
    }
  }
  for (; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[K,N] += A[M,K]^T * B[M,N]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  std::size_t p = 0;
  for (; p + 4 <= k; p += 4) {
    for (std::size_t i = 0; i < m; ++i) {
      axpy4(n, a + i * k + p, b + i * n, c + p * n, c + (p + 1) * n, c + (p + 2) * n, c + (p + 3) * n);
    }
  }
  for (; p < k; ++p) {
    double* crow = c + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a[i * k + p];
      const double* brow = b + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Dot product with four interleaved partial sums.
inline double dot4(std::size_t n, const double* x, const double* y) {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    for (std::size_t q = 0; q < 4; ++q) acc[q] += x[j + q] * y[j + q];
  }
  for (; j < n; ++j) acc[0] += x[j] * y[j];
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

// C[M,K] += A[M,N] * B[K,N]^T
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    for (std::size_t p = 0; p < k; ++p) c[i * k + p] += dot4(n, arow, b + p * n);
  }
}

void add_bias_rows(std::size_t rows, std::size_t n, const double* bias, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = bias[r];
  }
}

void accumulate_row_sums(std::size_t rows, std::size_t n, const double* g, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += g[r * n + j];
    out[r] += acc;
  }
}

void check_bias(const char* op, const Tensor& b, std::size_t c_out) {
  if (!b.defined()) return;
  if (b.rank() != 1 || b.dim(0) != c_out) {
    throw DimensionError(op_error(op, "bias shape " + shape_str(b.shape()) + " does not match " +
                                          std::to_string(c_out) + " output channels"));
  }
}

struct Interp {
  std::size_t i0, i1;
  double t;
};

std::vector<Interp> interp_table(std::size_t in, std::size_t out) {
  std::vector<Interp> table(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    table[d] = {i0, i1, src - static_cast<double>(i0)};
  }
  return table;
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor& b) {
  constexpr const char* kOp = "conv1x1";
  require_rank(kOp, x, 3);
  require_rank(kOp, w, 2);
  const std::size_t c_in = x.dim(0), c_out = w.dim(0);
  if (w.dim(1) != c_in) {
    throw DimensionError(op_error(kOp, "input " + shape_str(x.shape()) + " does not conform to weight " +
                                           shape_str(w.shape())));
  }
  check_bias(kOp, b, c_out);
  const std::size_t p = x.dim(1) * x.dim(2);
  std::vector<double> out(c_out * p, 0.0);
  if (b.defined()) add_bias_rows(c_out, p, b.data().data(), out.data());
  gemm_nn(c_out, c_in, p, w.data().data(), x.data().data(), out.data());
  Tensor result = make_result({c_out, x.dim(1), x.dim(2)}, std::move(out));
  finish(kOp, result, {&x, &w, &b}, [=](const ImplPtr& o) {
    ImplPtr xi = x.impl(), wi = w.impl(), bi = b.defined() ? b.impl() : nullptr;
    return [=]() {
      const double* go = o->grad.data();
      if (xi->requires_grad) gemm_tn(c_out, c_in, p, wi->data.data(), go, xi->ensure_grad().data());
      if (wi->requires_grad) gemm_nt(c_out, c_in, p, go, xi->data.data(), wi->ensure_grad().data());
      if (bi && bi->requires_grad) accumulate_row_sums(c_out, p, go, bi->ensure_grad().data());
    };
  });
  return result;
}

Tensor conv3x3(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
  constexpr const char* kOp = "conv3x3";
  if (stride != 1 && stride != 2) throw ConfigError(op_error(kOp, "stride must be 1 or 2, got " + std::to_string(stride)));
  require_rank(kOp, x, 3);
  require_rank(kOp, w, 4);
  const std::size_t c_in = x.dim(0), h = x.dim(1), wd = x.dim(2), c_out = w.dim(0);
  if (w.dim(1) != c_in || w.dim(2) != 3 || w.dim(3) != 3) {
    throw DimensionError(op_error(kOp, "input " + shape_str(x.shape()) + " does not conform to weight " +
                                           shape_str(w.shape())));
  }
  if (h < 3 || wd < 3) throw DimensionError(op_error(kOp, "spatial extent below 3 in " + shape_str(x.shape())));
  check_bias(kOp, b, c_out);
  const auto s = static_cast<std::size_t>(stride);
  const std::size_t oh = (h - 1) / s + 1, ow = (wd - 1) / s + 1, p = oh * ow;
  const std::size_t kdim = c_in * 9;

  // im2col: cols[(ci*9 + ky*3 + kx), oy*ow + ox]
  auto cols = std::make_shared<std::vector<double>>(kdim * p, 0.0);
  const double* xd = x.data().data();
  for (std::size_t ci = 0; ci < c_in; ++ci) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        double* row = cols->data() + (ci * 9 + ky * 3 + kx) * p;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s + ky) - 1;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          const double* xrow = xd + (ci * h + static_cast<std::size_t>(iy)) * wd;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s + kx) - 1;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
            row[oy * ow + ox] = xrow[ix];
          }
        }
      }
    }
  }
  std::vector<double> out(c_out * p, 0.0);
  if (b.defined()) add_bias_rows(c_out, p, b.data().data(), out.data());
  gemm_nn(c_out, kdim, p, w.data().data(), cols->data(), out.data());
  Tensor result = make_result({c_out, oh, ow}, std::move(out));
  finish(kOp, result, {&x, &w, &b}, [=](const ImplPtr& o) {
    ImplPtr xi = x.impl(), wi = w.impl(), bi = b.defined() ? b.impl() : nullptr;
    return [=]() {
      const double* go = o->grad.data();
      if (wi->requires_grad) gemm_nt(c_out, kdim, p, go, cols->data(), wi->ensure_grad().data());
      if (bi && bi->requires_grad) accumulate_row_sums(c_out, p, go, bi->ensure_grad().data());
      if (xi->requires_grad) {
        std::vector<double> gcols(kdim * p, 0.0);
        gemm_tn(c_out, kdim, p, wi->data.data(), go, gcols.data());
        double* gx = xi->ensure_grad().data();
        for (std::size_t ci = 0; ci < c_in; ++ci) {
          for (std::size_t ky = 0; ky < 3; ++ky) {
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const double* row = gcols.data() + (ci * 9 + ky * 3 + kx) * p;
              for (std::size_t oy = 0; oy < oh; ++oy) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s + ky) - 1;
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                double* gxrow = gx + (ci * h + static_cast<std::size_t>(iy)) * wd;
                for (std::size_t ox = 0; ox < ow; ++ox) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s + kx) - 1;
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                  gxrow[ix] += row[oy * ow + ox];
                }
              }
            }
          }
        }
      }
    };
  });
  return result;
}

Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  constexpr const char* kOp = "resize_bilinear";
  require_rank(kOp, x, 3);
  if (out_h == 0 || out_w == 0) throw DimensionError(op_error(kOp, "output extents must be positive"));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h == out_h && w == out_w) {
    Tensor result = make_result(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
    finish(kOp, result, {&x}, [=](const ImplPtr& o) {
      ImplPtr xi = x.impl();
      return [=]() {
        auto& gx = xi->ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o->grad[i];
      };
    });
    return result;
  }
  const auto ty = interp_table(h, out_h);
  const auto tx = interp_table(w, out_w);
  std::vector<double> out(c * out_h * out_w);
  const double* xd = x.data().data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = xd + ch * h * w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto& ry = ty[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& rx = tx[ox];
        const double top = src[ry.i0 * w + rx.i0] * (1.0 - rx.t) + src[ry.i0 * w + rx.i1] * rx.t;
        const double bot = src[ry.i1 * w + rx.i0] * (1.0 - rx.t) + src[ry.i1 * w + rx.i1] * rx.t;
        out[(ch * out_h + oy) * out_w + ox] = top * (1.0 - ry.t) + bot * ry.t;
      }
    }
  }
  Tensor result = make_result({c, out_h, out_w}, std::move(out));
  finish(kOp, result, {&x}, [=](const ImplPtr& o) {
    ImplPtr xi = x.impl();
    return [=]() {
      double* gx = xi->ensure_grad().data();
      const double* go = o->grad.data();
      for (std::size_t ch = 0; ch < c; ++ch) {
        double* g = gx + ch * h * w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const auto& ry = ty[oy];
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const auto& rx = tx[ox];
            const double v = go[(ch * out_h + oy) * out_w + ox];
            g[ry.i0 * w + rx.i0] += v * (1.0 - ry.t) * (1.0 - rx.t);
            g[ry.i0 * w + rx.i1] += v * (1.0 - ry.t) * rx.t;
            g[ry.i1 * w + rx.i0] += v * ry.t * (1.0 - rx.t);
            g[ry.i1 * w + rx.i1] += v * ry.t * rx.t;
          }
        }
      }
    };
  });
  return result;
}

Tensor pad_edge(const Tensor& x, std::size_t bottom, std::size_t right) {
  constexpr const char* kOp = "pad_edge";
  require_rank(kOp, x, 3);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t ph = h + bottom, pw = w + right;
  std::vector<double> out(c * ph * pw);
  const double* xd = x.data().data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < ph; ++y) {
      const std::size_t sy = std::min(y, h - 1);
      for (std::size_t xx = 0; xx < pw; ++xx) {
        out[(ch * ph + y) * pw + xx] = xd[(ch * h + sy) * w + std::min(xx, w - 1)];
      }
    }
  }
  Tensor result = make_result({c, ph, pw}, std::move(out));
  finish(kOp, result, {&x}, [=](const ImplPtr& o) {
    ImplPtr xi = x.impl();
    return [=]() {
      double* gx = xi->ensure_grad().data();
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < ph; ++y) {
          const std::size_t sy = std::min(y, h - 1);
          for (std::size_t xx = 0; xx < pw; ++xx) {
            gx[(ch * h + sy) * w + std::min(xx, w - 1)] += o->grad[(ch * ph + y) * pw + xx];
          }
        }
      }
    };
  });
  return result;
}

Tensor global_avg_pool(const Tensor& x) {
  constexpr const char* kOp = "global_avg_pool";
  require_rank(kOp, x, 3);
  const std::size_t c = x.dim(0), p = x.dim(1) * x.dim(2);
  std::vector<double> out(c, 0.0);
  const double* xd = x.data().data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (std::size_t i = 0; i < p; ++i) acc += xd[ch * p + i];
    out[ch] = acc / static_cast<double>(p);
  }
  Tensor result = make_result({c}, std::move(out));
  finish(kOp, result, {&x}, [=](const ImplPtr& o) {
    ImplPtr xi = x.impl();
    return [=]() {
      double* gx = xi->ensure_grad().data();
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double g = o->grad[ch] / static_cast<double>(p);
        for (std::size_t i = 0; i < p; ++i) gx[ch * p + i] += g;
      }
    };
  });
  return result;
}

Tensor relu(const Tensor& x) {
  constexpr const char* kOp = "relu";
  require_defined(kOp, x);
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  Tensor result = make_result(x.shape(), std::move(out));
  finish(kOp, result, {&x}, [=](const ImplPtr& o) {
    ImplPtr xi = x.impl();
    return [=]() {
      auto& gx = xi->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        if (xi->data[i] > 0.0) gx[i] += o->grad[i];
      }
    };
  });
  return result;
}

Tensor sigmoid(const Tensor& x) {
  constexpr const char* kOp = "sigmoid";
  require_defined(kOp, x);
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v = stable_sigmoid(v);
  Tensor result = make_result(x.shape(), std::move(out));
  finish(kOp, result, {&x}, [=](const ImplPtr& o) {
    ImplPtr xi = x.impl();
    return [=]() {
      auto& gx = xi->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const double y = o->data[i];
        gx[i] += o->grad[i] * y * (1.0 - y);
      }
    };
  });
  return result;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_elementwise(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  require_same_shape(op, a, b);
  const auto ad = a.data(), bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(ad[i], bd[i]);
  Tensor result = make_result(a.shape(), std::move(out));
  finish(op, result, {&a, &b}, [=](const ImplPtr& o) {
    ImplPtr ai = a.impl(), bi = b.impl();
    return [=]() {
      const std::size_t n = o->data.size();
      // a and b may alias (x*x); read values before touching gradients.
      if (ai->requires_grad) {
        auto& ga = ai->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) ga[i] += o->grad[i] * bwd(ai->data[i], bi->data[i], true);
      }
      if (bi->requires_grad) {
        auto& gb = bi->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) gb[i] += o->grad[i] * bwd(ai->data[i], bi->data[i], false);
      }
    };
  });
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, bool) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, bool wrt_a) { return wrt_a ? 1.0 : -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, bool wrt_a) { return wrt_a ? y : x; });
}

Tensor scale(const Tensor& x, double factor) {
  constexpr const char* kOp = "scale";
  require_defined(kOp, x);
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v *= factor;
  Tensor result = make_result(x.shape(), std::move(out));
  finish(kOp, result, {&x}, [=](const ImplPtr& o) {
    ImplPtr xi = x.impl();
    return [=]() {
      auto& gx = xi->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o->grad[i] * factor;
    };
  });
  return result;
}

namespace {

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  constexpr const char* kOp = "concat";
  if (parts.empty()) throw ContractError(op_error(kOp, "no operands"));
  for (const auto& t : parts) require_defined(kOp, t);
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError(op_error(kOp, "axis out of range for " + shape_str(first)));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& t : parts) {
    const Shape& s = t.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) ok = false;
    }
    if (!ok) {
      throw DimensionError(op_error(kOp, "non-axis extents differ: " + shape_str(first) + " vs " + shape_str(s)));
    }
    out_shape[axis] += s[axis];
  }
  const AxisSplit total = split_at(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& t : parts) {
    offsets.push_back(offset);
    const AxisSplit ps = split_at(t.shape(), axis);
    const double* src = t.data().data();
    const std::size_t block = ps.extent * ps.inner;
    for (std::size_t o = 0; o < ps.outer; ++o) {
      std::copy(src + o * block, src + (o + 1) * block, out.data() + (o * total.extent + offset) * total.inner);
    }
    offset += ps.extent;
  }
  Tensor result = make_result(out_shape, std::move(out));
  std::vector<const Tensor*> ptrs;
  for (const auto& t : parts) ptrs.push_back(&t);
  // finish() takes an initializer_list; record manually for a dynamic arity.
  auto& graph = Graph::current();
  if (graph.check_finite() && !result.all_finite()) throw ValidityError("non-finite value produced by concat");
  bool need = false;
  for (const auto* t : ptrs) need = need || t->requires_grad();
  if (graph.grad_enabled() && need) {
    result.set_requires_grad(true);
    GraphNode node;
    node.op = kOp;
    std::vector<ImplPtr> ins;
    for (const auto* t : ptrs) ins.push_back(t->impl());
    node.inputs = ins;
    node.output = result.impl();
    ImplPtr o = result.impl();
    node.backward = [=]() {
      for (std::size_t k = 0; k < ins.size(); ++k) {
        if (!ins[k]->requires_grad) continue;
        const AxisSplit ps = split_at(ins[k]->shape, axis);
        const std::size_t block = ps.extent * ps.inner;
        auto& g = ins[k]->ensure_grad();
        for (std::size_t oo = 0; oo < ps.outer; ++oo) {
          const double* src = o->grad.data() + (oo * total.extent + offsets[k]) * total.inner;
          for (std::size_t i = 0; i < block; ++i) g[oo * block + i] += src[i];
        }
      }
    };
    graph.record(std::move(node));
  }
  return result;
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  std::vector<Tensor> v(parts);
  return concat(std::span<const Tensor>(v), axis);
}

Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  constexpr const char* kOp = "narrow";
  require_defined(kOp, x);
  const Shape& s = x.shape();
  if (axis >= s.size() || length == 0 || start + length > s[axis]) {
    throw DimensionError(op_error(kOp, "range [" + std::to_string(start) + "," + std::to_string(start + length) +
                                           ") on axis " + std::to_string(axis) + " invalid for " + shape_str(s)));
  }
  const AxisSplit in = split_at(s, axis);
  Shape out_shape = s;
  out_shape[axis] = length;
  const std::size_t block = length * in.inner;
  std::vector<double> out(in.outer * block);
  const double* xd = x.data().data();
  for (std::size_t o = 0; o < in.outer; ++o) {
    const double* src = xd + (o * in.extent + start) * in.inner;
    std::copy(src, src + block, out.data() + o * block);
  }
  Tensor result = make_result(out_shape, std::move(out));
  finish(kOp, result, {&x}, [=](const ImplPtr& op) {
    ImplPtr xi = x.impl();
    return [=]() {
      auto& g = xi->ensure_grad();
      for (std::size_t o = 0; o < in.outer; ++o) {
        double* dst = g.data() + (o * in.extent + start) * in.inner;
        for (std::size_t i = 0; i < block; ++i) dst[i] += op->grad[o * block + i];
      }
    };
  });
  return result;
}

Tensor select0(const Tensor& x, std::size_t k) {
  require_defined("select0", x);
  if (x.rank() < 2) throw DimensionError("select0: need rank >= 2, got " + shape_str(x.shape()));
  Shape rest(x.shape().begin() + 1, x.shape().end());
  return reshape(narrow(x, 0, k, 1), rest);
}

Tensor stack0(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("stack0: no operands");
  std::vector<Tensor> lifted;
  lifted.reserve(parts.size());
  for (const auto& t : parts) {
    require_defined("stack0", t);
    if (t.shape() != parts[0].shape()) {
      throw DimensionError("stack0: shape mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(t.shape()));
    }
    Shape s = t.shape();
    s.insert(s.begin(), 1);
    lifted.push_back(reshape(t, s));
  }
  return concat(std::span<const Tensor>(lifted), 0);
}

Tensor stack0(std::initializer_list<Tensor> parts) {
  std::vector<Tensor> v(parts);
  return stack0(std::span<const Tensor>(v));
}

Tensor reshape(const Tensor& x, Shape shape) {
  constexpr const char* kOp = "reshape";
  require_defined(kOp, x);
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError(op_error(kOp, "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape)));
  }
  Tensor result = make_result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  finish(kOp, result, {&x}, [=](const ImplPtr& o) {
    ImplPtr xi = x.impl();
    return [=]() {
      auto& g = xi->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
    };
  });
  return result;
}

Tensor sum(const Tensor& x) {
  constexpr const char* kOp = "sum";
  require_defined(kOp, x);
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor result = make_result({1}, {acc});
  finish(kOp, result, {&x}, [=](const ImplPtr& o) {
    ImplPtr xi = x.impl();
    return [=]() {
      auto& g = xi->ensure_grad();
      for (double& v : g) v += o->grad[0];
    };
  });
  return result;
}

Tensor mean(const Tensor& x) {
  require_defined("mean", x);
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mul_channel(const Tensor& x, const Tensor& g) {
  constexpr const char* kOp = "mul_channel";
  require_defined(kOp, x);
  require_rank(kOp, g, 1);
  if (x.rank() < 1 || x.dim(0) != g.dim(0)) {
    throw DimensionError(op_error(kOp, "gate " + shape_str(g.shape()) + " does not match " + shape_str(x.shape())));
  }
  const std::size_t c = x.dim(0), p = x.numel() / c;
  std::vector<double> out(x.numel());
  const double* xd = x.data().data();
  const double* gd = g.data().data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < p; ++i) out[ch * p + i] = xd[ch * p + i] * gd[ch];
  }
  Tensor result = make_result(x.shape(), std::move(out));
  finish(kOp, result, {&x, &g}, [=](const ImplPtr& o) {
    ImplPtr xi = x.impl(), gi = g.impl();
    return [=]() {
      const double* go = o->grad.data();
      if (gi->requires_grad) {
        auto& gg = gi->ensure_grad();
        for (std::size_t ch = 0; ch < c; ++ch) {
          double acc = 0.0;
          for (std::size_t i = 0; i < p; ++i) acc += go[ch * p + i] * xi->data[ch * p + i];
          gg[ch] += acc;
        }
      }
      if (xi->requires_grad) {
        auto& gx = xi->ensure_grad();
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t i = 0; i < p; ++i) gx[ch * p + i] += go[ch * p + i] * gi->data[ch];
        }
      }
    };
  });
  return result;
}

Tensor matvec(const Tensor& w, const Tensor& v) {
  constexpr const char* kOp = "matvec";
  require_rank(kOp, w, 2);
  require_rank(kOp, v, 1);
  const std::size_t m = w.dim(0), n = w.dim(1);
  if (v.dim(0) != n) {
    throw DimensionError(op_error(kOp, "matrix " + shape_str(w.shape()) + " vs vector " + shape_str(v.shape())));
  }
  std::vector<double> out(m, 0.0);
  gemm_nn(m, n, 1, w.data().data(), v.data().data(), out.data());
  Tensor result = make_result({m}, std::move(out));
  finish(kOp, result, {&w, &v}, [=](const ImplPtr& o) {
    ImplPtr wi = w.impl(), vi = v.impl();
    return [=]() {
      if (vi->requires_grad) gemm_tn(m, n, 1, wi->data.data(), o->grad.data(), vi->ensure_grad().data());
      if (wi->requires_grad) gemm_nt(m, n, 1, o->grad.data(), vi->data.data(), wi->ensure_grad().data());
    };
  });
  return result;
}

Tensor grid_sample(const Tensor& x, const SampleGrid& grid) {
  constexpr const char* kOp = "grid_sample";
  require_rank(kOp, x, 3);
  const std::size_t cells = grid.out_h * grid.out_w;
  if (cells == 0 || grid.u.size() != cells || grid.v.size() != cells || grid.valid.size() != cells) {
    throw DimensionError(op_error(kOp, "malformed sample grid"));
  }
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  struct Tap {
    std::size_t idx[4];
    double wt[4];
  };
  auto taps = std::make_shared<std::vector<Tap>>(cells);
  for (std::size_t i = 0; i < cells; ++i) {
    Tap& tap = (*taps)[i];
    if (!grid.valid[i]) {
      for (int k = 0; k < 4; ++k) tap.idx[k] = 0, tap.wt[k] = 0.0;
      continue;
    }
    const double u = std::clamp(grid.u[i], 0.0, static_cast<double>(w - 1));
    const double v = std::clamp(grid.v[i], 0.0, static_cast<double>(h - 1));
    auto x0 = static_cast<std::size_t>(std::floor(u));
    auto y0 = static_cast<std::size_t>(std::floor(v));
    const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    const double tx = u - static_cast<double>(x0), ty = v - static_cast<double>(y0);
    tap.idx[0] = y0 * w + x0, tap.wt[0] = (1 - ty) * (1 - tx);
    tap.idx[1] = y0 * w + x1, tap.wt[1] = (1 - ty) * tx;
    tap.idx[2] = y1 * w + x0, tap.wt[2] = ty * (1 - tx);
    tap.idx[3] = y1 * w + x1, tap.wt[3] = ty * tx;
  }
  std::vector<double> out(c * cells, 0.0);
  const double* xd = x.data().data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = xd + ch * h * w;
    for (std::size_t i = 0; i < cells; ++i) {
      const Tap& tap = (*taps)[i];
      out[ch * cells + i] = src[tap.idx[0]] * tap.wt[0] + src[tap.idx[1]] * tap.wt[1] + src[tap.idx[2]] * tap.wt[2] +
                            src[tap.idx[3]] * tap.wt[3];
    }
  }
  Tensor result = make_result({c, grid.out_h, grid.out_w}, std::move(out));
  finish(kOp, result, {&x}, [=](const ImplPtr& o) {
    ImplPtr xi = x.impl();
    return [=]() {
      double* gx = xi->ensure_grad().data();
      for (std::size_t ch = 0; ch < c; ++ch) {
        double* g = gx + ch * h * w;
        for (std::size_t i = 0; i < cells; ++i) {
          const Tap& tap = (*taps)[i];
          const double go = o->grad[ch * cells + i];
          for (int k = 0; k < 4; ++k) g[tap.idx[k]] += go * tap.wt[k];
        }
      }
    };
  });
  return result;
}

Tensor focal_loss(const Tensor& logits, const Tensor& target, double alpha, double beta) {
  constexpr const char* kOp = "focal_loss";
  require_same_shape(kOp, logits, target);
  const auto z = logits.data();
  const auto y = target.data();
  std::size_t positives = 0;
  for (double t : y) positives += (t >= 1.0) ? 1 : 0;
  const double norm = static_cast<double>(std::max<std::size_t>(1, positives));
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double p = stable_sigmoid(z[i]);
    if (y[i] >= 1.0) {
      const double log_p = -softplus(-z[i]);
      total += -std::pow(1.0 - p, alpha) * log_p;
    } else {
      const double log_1mp = -softplus(z[i]);
      total += -std::pow(1.0 - y[i], beta) * std::pow(p, alpha) * log_1mp;
    }
  }
  Tensor result = make_result({1}, {total / norm});
  finish(kOp, result, {&logits}, [=](const ImplPtr& o) {
    ImplPtr zi = logits.impl(), yi = target.impl();
    return [=]() {
      auto& gz = zi->ensure_grad();
      const double go = o->grad[0] / norm;
      for (std::size_t i = 0; i < gz.size(); ++i) {
        const double zz = zi->data[i];
        const double p = stable_sigmoid(zz);
        const double q = stable_sigmoid(-zz);  // 1 - p without cancellation
        double d;
        if (yi->data[i] >= 1.0) {
          const double log_p = -softplus(-zz);
          d = std::pow(q, alpha) * (alpha * p * log_p - q);
        } else {
          const double log_1mp = -softplus(zz);
          d = std::pow(1.0 - yi->data[i], beta) * std::pow(p, alpha) * (p - alpha * q * log_1mp);
        }
        gz[i] += go * d;
      }
    };
  });
  return result;
}

Tensor masked_l1(const Tensor& pred, const Tensor& target, const Tensor& mask, double normalizer) {
  constexpr const char* kOp = "masked_l1";
  require_same_shape(kOp, pred, target);
  require_defined(kOp, mask);
  if (pred.rank() < 2 || mask.numel() * pred.dim(0) != pred.numel()) {
    throw DimensionError(op_error(kOp, "mask " + shape_str(mask.shape()) + " does not match " + shape_str(pred.shape())));
  }
  if (!(normalizer > 0.0)) throw ContractError(op_error(kOp, "normalizer must be positive"));
  const std::size_t c = pred.dim(0), p = mask.numel();
  const auto pd = pred.data(), td = target.data(), md = mask.data();
  double total = 0.0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < p; ++i) {
      if (md[i] != 0.0) total += md[i] * std::abs(pd[ch * p + i] - td[ch * p + i]);
    }
  }
  Tensor result = make_result({1}, {total / normalizer});
  finish(kOp, result, {&pred}, [=](const ImplPtr& o) {
    ImplPtr pi = pred.impl(), ti = target.impl(), mi = mask.impl();
    return [=]() {
      auto& g = pi->ensure_grad();
      const double go = o->grad[0] / normalizer;
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < p; ++i) {
          const double m = mi->data[i];
          if (m == 0.0) continue;
          const double d = pi->data[ch * p + i] - ti->data[ch * p + i];
          g[ch * p + i] += go * m * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
        }
      }
    };
  });
  return result;
}

}  // namespace qfuse
