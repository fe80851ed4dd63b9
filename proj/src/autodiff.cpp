#include "legato/autodiff.hpp"

#include <cmath>
#include <cstring>
#include <unordered_set>
#include <utility>

namespace legato {

namespace {

thread_local bool g_autograd_enabled = true;

void check_finite(const char* op, const Tensor& t) {
  if (!t.all_finite()) {
    throw TensorError(std::string(op) + ": non-finite result");
  }
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw TensorError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

[[noreturn]] void shape_error(const char* op, const Tensor& a) {
  throw TensorError(std::string(op) + ": unsupported shape " + a.shape_str());
}

Var make(const char* op, Tensor value, std::vector<NodePtr> parents,
         std::function<void(Node&)> bwd) {
  check_finite(op, value);
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  if (g_autograd_enabled) {
    bool req = false;
    for (const auto& p : parents) req = req || p->requires_grad;
    if (req) {
      n->requires_grad = true;
      n->parents = std::move(parents);
      n->backward_fn = std::move(bwd);
    }
  }
  return Var(n);
}

// True when b's shape is a strict trailing suffix of a's shape.
bool is_suffix(const Tensor& a, const Tensor& b) {
  if (b.ndim() >= a.ndim()) return false;
  const auto& as = a.shape();
  const auto& bs = b.shape();
  for (std::size_t i = 0; i < bs.size(); ++i) {
    if (bs[i] != as[as.size() - bs.size() + i]) return false;
  }
  return true;
}

// Sum g over its leading axes so the result has `block` elements.
Tensor reduce_leading(const Tensor& g, const std::vector<std::size_t>& shape) {
  Tensor out(shape);
  const std::size_t block = out.size();
  const double* gp = g.data();
  double* op = out.data();
  for (std::size_t i = 0; i < g.size(); ++i) op[i % block] += gp[i];
  return out;
}

// c[M,N] (+)= a[M,K] * b[K,N]
void mm_nn(const double* a, const double* b, double* c, std::size_t M, std::size_t K,
           std::size_t N) {
  for (std::size_t m = 0; m < M; ++m) {
    const double* arow = a + m * K;
    double* crow = c + m * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double amk = arow[k];
      if (amk == 0.0) continue;
      const double* brow = b + k * N;
      for (std::size_t n = 0; n < N; ++n) crow[n] += amk * brow[n];
    }
  }
}

// c[M,K] += g[M,N] * b[K,N]^T
void mm_nt(const double* g, const double* b, double* c, std::size_t M, std::size_t K,
           std::size_t N) {
  for (std::size_t m = 0; m < M; ++m) {
    const double* grow = g + m * N;
    double* crow = c + m * K;
    for (std::size_t k = 0; k < K; ++k) {
      const double* brow = b + k * N;
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) s += grow[n] * brow[n];
      crow[k] += s;
    }
  }
}

// c[K,N] += a[M,K]^T * g[M,N]
void mm_tn(const double* a, const double* g, double* c, std::size_t M, std::size_t K,
           std::size_t N) {
  for (std::size_t m = 0; m < M; ++m) {
    const double* arow = a + m * K;
    const double* grow = g + m * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double amk = arow[k];
      if (amk == 0.0) continue;
      double* crow = c + k * N;
      for (std::size_t n = 0; n < N; ++n) crow[n] += amk * grow[n];
    }
  }
}

template <typename F>
Tensor ew_binary(const char* op, const Tensor& a, const Tensor& b, F fwd) {
  Tensor out(a.shape());
  const double* ap = a.data();
  double* op_ = out.data();
  if (a.same_shape(b)) {
    const double* bp = b.data();
    for (std::size_t i = 0; i < a.size(); ++i) op_[i] = fwd(ap[i], bp[i]);
  } else if (is_suffix(a, b)) {
    const double* bp = b.data();
    const std::size_t block = b.size();
    for (std::size_t i = 0; i < a.size(); ++i) op_[i] = fwd(ap[i], bp[i % block]);
  } else {
    shape_error(op, a, b);
  }
  return out;
}

}  // namespace

bool autograd_enabled() { return g_autograd_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_autograd_enabled) { g_autograd_enabled = false; }
NoGradGuard::~NoGradGuard() { g_autograd_enabled = prev_; }

void Node::accumulate(const Tensor& g) {
  if (!g.same_shape(value)) {
    throw TensorError(std::string("accumulate: gradient shape ") + g.shape_str() +
                      " does not match value shape " + value.shape_str());
  }
  if (grad.empty()) grad = Tensor(value.shape());
  double* gp = grad.data();
  const double* sp = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) gp[i] += sp[i];
  grad_live = true;
}

void Node::zero_grad() {
  if (!grad.empty()) grad.fill(0.0);
  grad_live = false;
}

Var Var::leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Var(n);
}

Var add(const Var& a, const Var& b) {
  Tensor out = ew_binary("add", a.value(), b.value(), [](double x, double y) { return x + y; });
  NodePtr pa = a.node(), pb = b.node();
  return make("add", std::move(out), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) {
      if (pb->value.same_shape(self.grad)) {
        pb->accumulate(self.grad);
      } else {
        pb->accumulate(reduce_leading(self.grad, pb->value.shape()));
      }
    }
  });
}

Var sub(const Var& a, const Var& b) {
  Tensor out = ew_binary("sub", a.value(), b.value(), [](double x, double y) { return x - y; });
  NodePtr pa = a.node(), pb = b.node();
  return make("sub", std::move(out), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) {
      Tensor gb = pb->value.same_shape(self.grad) ? self.grad
                                                  : reduce_leading(self.grad, pb->value.shape());
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = -gb[i];
      pb->accumulate(gb);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  Tensor out = ew_binary("mul", a.value(), b.value(), [](double x, double y) { return x * y; });
  NodePtr pa = a.node(), pb = b.node();
  return make("mul", std::move(out), {pa, pb}, [pa, pb](Node& self) {
    const Tensor& av = pa->value;
    const Tensor& bv = pb->value;
    const std::size_t block = bv.size();
    if (pa->requires_grad) {
      Tensor ga(av.shape());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = self.grad[i] * bv[i % block];
      pa->accumulate(ga);
    }
    if (pb->requires_grad) {
      Tensor gb(bv.shape());
      for (std::size_t i = 0; i < av.size(); ++i) gb[i % block] += self.grad[i] * av[i];
      pb->accumulate(gb);
    }
  });
}

Var scale(const Var& a, double c) {
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a.value()[i];
  NodePtr pa = a.node();
  return make("scale", std::move(out), {pa}, [pa, c](Node& self) {
    Tensor g(self.grad.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = c * self.grad[i];
    pa->accumulate(g);
  });
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.ndim() != 2 || bv.ndim() != 2 || av.dim(1) != bv.dim(0)) shape_error("matmul", av, bv);
  const std::size_t M = av.dim(0), K = av.dim(1), N = bv.dim(1);
  Tensor out({M, N});
  mm_nn(av.data(), bv.data(), out.data(), M, K, N);
  NodePtr pa = a.node(), pb = b.node();
  return make("matmul", std::move(out), {pa, pb}, [pa, pb, M, K, N](Node& self) {
    if (pa->requires_grad) {
      Tensor ga({M, K});
      mm_nt(self.grad.data(), pb->value.data(), ga.data(), M, K, N);
      pa->accumulate(ga);
    }
    if (pb->requires_grad) {
      Tensor gb({K, N});
      mm_tn(pa->value.data(), self.grad.data(), gb.data(), M, K, N);
      pb->accumulate(gb);
    }
  });
}

Var matmul_last(const Var& a, const Var& w) {
  const Tensor& av = a.value();
  const Tensor& wv = w.value();
  if (av.ndim() != 3 || wv.ndim() != 2 || av.dim(2) != wv.dim(0)) {
    shape_error("matmul_last", av, wv);
  }
  const std::size_t B = av.dim(0), M = av.dim(1), K = av.dim(2), N = wv.dim(1);
  Tensor out({B, M, N});
  for (std::size_t b = 0; b < B; ++b) {
    mm_nn(av.data() + b * M * K, wv.data(), out.data() + b * M * N, M, K, N);
  }
  NodePtr pa = a.node(), pw = w.node();
  return make("matmul_last", std::move(out), {pa, pw}, [pa, pw, B, M, K, N](Node& self) {
    if (pa->requires_grad) {
      Tensor ga({B, M, K});
      for (std::size_t b = 0; b < B; ++b) {
        mm_nt(self.grad.data() + b * M * N, pw->value.data(), ga.data() + b * M * K, M, K, N);
      }
      pa->accumulate(ga);
    }
    if (pw->requires_grad) {
      Tensor gw({K, N});
      for (std::size_t b = 0; b < B; ++b) {
        mm_tn(pa->value.data() + b * M * K, self.grad.data() + b * M * N, gw.data(), M, K, N);
      }
      pw->accumulate(gw);
    }
  });
}

Var bmm(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.ndim() != 3 || bv.ndim() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1)) {
    shape_error("bmm", av, bv);
  }
  const std::size_t B = av.dim(0), M = av.dim(1), K = av.dim(2), N = bv.dim(2);
  Tensor out({B, M, N});
  for (std::size_t i = 0; i < B; ++i) {
    mm_nn(av.data() + i * M * K, bv.data() + i * K * N, out.data() + i * M * N, M, K, N);
  }
  NodePtr pa = a.node(), pb = b.node();
  return make("bmm", std::move(out), {pa, pb}, [pa, pb, B, M, K, N](Node& self) {
    if (pa->requires_grad) {
      Tensor ga({B, M, K});
      for (std::size_t i = 0; i < B; ++i) {
        mm_nt(self.grad.data() + i * M * N, pb->value.data() + i * K * N, ga.data() + i * M * K,
              M, K, N);
      }
      pa->accumulate(ga);
    }
    if (pb->requires_grad) {
      Tensor gb({B, K, N});
      for (std::size_t i = 0; i < B; ++i) {
        mm_tn(pa->value.data() + i * M * K, self.grad.data() + i * M * N, gb.data() + i * K * N,
              M, K, N);
      }
      pb->accumulate(gb);
    }
  });
}

namespace {
Tensor transpose2d(const Tensor& t) {
  const std::size_t R = t.dim(0), C = t.dim(1);
  Tensor out({C, R});
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out.at(c, r) = t.at(r, c);
  return out;
}

Tensor transpose_last2(const Tensor& t) {
  const std::size_t B = t.dim(0), R = t.dim(1), C = t.dim(2);
  Tensor out({B, C, R});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) out.at(b, c, r) = t.at(b, r, c);
  return out;
}
}  // namespace

Var transpose(const Var& a) {
  if (a.value().ndim() != 2) shape_error("transpose", a.value());
  NodePtr pa = a.node();
  return make("transpose", transpose2d(a.value()), {pa},
              [pa](Node& self) { pa->accumulate(transpose2d(self.grad)); });
}

Var transpose_last(const Var& a) {
  if (a.value().ndim() != 3) shape_error("transpose_last", a.value());
  NodePtr pa = a.node();
  return make("transpose_last", transpose_last2(a.value()), {pa},
              [pa](Node& self) { pa->accumulate(transpose_last2(self.grad)); });
}

Var reshape(const Var& a, std::vector<std::size_t> shape) {
  NodePtr pa = a.node();
  Tensor out = a.value().reshaped(shape);
  return make("reshape", std::move(out), {pa}, [pa](Node& self) {
    pa->accumulate(self.grad.reshaped(pa->value.shape()));
  });
}

Var concat_last(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.ndim() != bv.ndim() || av.ndim() < 1) shape_error("concat_last", av, bv);
  for (std::size_t i = 0; i + 1 < av.ndim(); ++i) {
    if (av.dim(i) != bv.dim(i)) shape_error("concat_last", av, bv);
  }
  const std::size_t ca = av.shape().back(), cb = bv.shape().back();
  const std::size_t rows = av.size() / ca;
  std::vector<std::size_t> oshape = av.shape();
  oshape.back() = ca + cb;
  Tensor out(oshape);
  for (std::size_t r = 0; r < rows; ++r) {
    std::memcpy(out.data() + r * (ca + cb), av.data() + r * ca, ca * sizeof(double));
    std::memcpy(out.data() + r * (ca + cb) + ca, bv.data() + r * cb, cb * sizeof(double));
  }
  NodePtr pa = a.node(), pb = b.node();
  return make("concat_last", std::move(out), {pa, pb}, [pa, pb, rows, ca, cb](Node& self) {
    if (pa->requires_grad) {
      Tensor ga(pa->value.shape());
      for (std::size_t r = 0; r < rows; ++r) {
        std::memcpy(ga.data() + r * ca, self.grad.data() + r * (ca + cb), ca * sizeof(double));
      }
      pa->accumulate(ga);
    }
    if (pb->requires_grad) {
      Tensor gb(pb->value.shape());
      for (std::size_t r = 0; r < rows; ++r) {
        std::memcpy(gb.data() + r * cb, self.grad.data() + r * (ca + cb) + ca,
                    cb * sizeof(double));
      }
      pb->accumulate(gb);
    }
  });
}

namespace {
// Unary op whose local derivative is a function of input x and output y
// (the output is read back from the node itself during the sweep).
Var ew_unary(const char* op, const Var& a, double (*fwd)(double),
             double (*dfdx)(double x, double y)) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  NodePtr pa = a.node();
  return make(op, std::move(out), {pa}, [pa, dfdx](Node& self) {
    Tensor g(pa->value.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] = self.grad[i] * dfdx(pa->value[i], self.value[i]);
    }
    pa->accumulate(g);
  });
}
}  // namespace

Var relu(const Var& a) {
  return ew_unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a) {
  return ew_unary(
      "leaky_relu", a, [](double x) { return x >= 0.0 ? x : 0.01 * x; },
      [](double x, double) { return x >= 0.0 ? 1.0 : 0.01; });
}

Var tanh_op(const Var& a) {
  return ew_unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
  return ew_unary(
      "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var abs_op(const Var& a) {
  return ew_unary(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var sqrt_op(const Var& a) {
  return ew_unary(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / (y > 1e-12 ? y : 1e-12); });
}

Var rsqrt(const Var& a) {
  return ew_unary(
      "rsqrt", a, [](double x) { return 1.0 / std::sqrt(x); },
      [](double, double y) { return -0.5 * y * y * y; });
}

Var clamp_min(const Var& a, double floor) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] > floor ? av[i] : floor;
  NodePtr pa = a.node();
  return make("clamp_min", std::move(out), {pa}, [pa, floor](Node& self) {
    Tensor g(pa->value.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] = pa->value[i] > floor ? self.grad[i] : 0.0;
    }
    pa->accumulate(g);
  });
}

Var softmax_rows(const Var& a) {
  const Tensor& av = a.value();
  if (av.ndim() < 1) shape_error("softmax_rows", av);
  const std::size_t cols = av.shape().back();
  const std::size_t rows = av.size() / cols;
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * cols;
    double* y = out.data() + r * cols;
    double mx = x[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      s += y[c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[c] /= s;
  }
  NodePtr pa = a.node();
  return make("softmax_rows", std::move(out), {pa}, [pa, rows, cols](Node& self) {
    Tensor g(pa->value.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* gy = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += gy[c] * y[c];
      double* gx = g.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) gx[c] = y[c] * (gy[c] - dot);
    }
    pa->accumulate(g);
  });
}

Var l2_normalize_rows(const Var& a) {
  const Tensor& av = a.value();
  if (av.ndim() < 1) shape_error("l2_normalize_rows", av);
  const std::size_t cols = av.shape().back();
  const std::size_t rows = av.size() / cols;
  constexpr double kFloor = 1e-12;
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * cols;
    double* y = out.data() + r * cols;
    double n2 = 0.0;
    for (std::size_t c = 0; c < cols; ++c) n2 += x[c] * x[c];
    const double n = std::max(std::sqrt(n2), kFloor);
    for (std::size_t c = 0; c < cols; ++c) y[c] = x[c] / n;
  }
  NodePtr pa = a.node();
  return make("l2_normalize_rows", std::move(out), {pa}, [pa, rows, cols](Node& self) {
    Tensor g(pa->value.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      const double* x = pa->value.data() + r * cols;
      const double* gy = self.grad.data() + r * cols;
      double* gx = g.data() + r * cols;
      double n2 = 0.0;
      for (std::size_t c = 0; c < cols; ++c) n2 += x[c] * x[c];
      const double n = std::sqrt(n2);
      if (n > kFloor) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += gy[c] * x[c];
        dot /= n2;
        for (std::size_t c = 0; c < cols; ++c) gx[c] = (gy[c] - x[c] * dot) / n;
      } else {
        for (std::size_t c = 0; c < cols; ++c) gx[c] = gy[c] / kFloor;
      }
    }
    pa->accumulate(g);
  });
}

Var sum_all(const Var& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) s += a.value()[i];
  NodePtr pa = a.node();
  return make("sum_all", Tensor::scalar(s), {pa}, [pa](Node& self) {
    pa->accumulate(Tensor::full(pa->value.shape(), self.grad[0]));
  });
}

Var mean_all(const Var& a) {
  const std::size_t n = a.value().size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a.value()[i];
  NodePtr pa = a.node();
  return make("mean_all", Tensor::scalar(s / static_cast<double>(n)), {pa}, [pa, n](Node& self) {
    pa->accumulate(Tensor::full(pa->value.shape(), self.grad[0] / static_cast<double>(n)));
  });
}

Var sum_last(const Var& a) {
  const Tensor& av = a.value();
  if (av.ndim() < 2) shape_error("sum_last", av);
  const std::size_t cols = av.shape().back();
  const std::size_t rows = av.size() / cols;
  std::vector<std::size_t> oshape(av.shape().begin(), av.shape().end() - 1);
  Tensor out(oshape);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    const double* x = av.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) s += x[c];
    out[r] = s;
  }
  NodePtr pa = a.node();
  return make("sum_last", std::move(out), {pa}, [pa, rows, cols](Node& self) {
    Tensor g(pa->value.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] = self.grad[r];
    }
    pa->accumulate(g);
  });
}

Var mean_axis0(const Var& a) {
  const Tensor& av = a.value();
  if (av.ndim() < 2) shape_error("mean_axis0", av);
  const std::size_t n = av.dim(0);
  const std::size_t block = av.size() / n;
  std::vector<std::size_t> oshape(av.shape().begin() + 1, av.shape().end());
  Tensor out(oshape);
  for (std::size_t i = 0; i < av.size(); ++i) out[i % block] += av[i];
  for (std::size_t j = 0; j < block; ++j) out[j] /= static_cast<double>(n);
  NodePtr pa = a.node();
  return make("mean_axis0", std::move(out), {pa}, [pa, n, block](Node& self) {
    Tensor g(pa->value.shape());
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i % block] * inv;
    pa->accumulate(g);
  });
}

Var mean_axis1(const Var& a) {
  const Tensor& av = a.value();
  if (av.ndim() != 3) shape_error("mean_axis1", av);
  const std::size_t B = av.dim(0), M = av.dim(1), N = av.dim(2);
  Tensor out({B, N});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t m = 0; m < M; ++m) {
      for (std::size_t n = 0; n < N; ++n) out.at(b, n) += av.at(b, m, n);
    }
    for (std::size_t n = 0; n < N; ++n) out.at(b, n) /= static_cast<double>(M);
  }
  NodePtr pa = a.node();
  return make("mean_axis1", std::move(out), {pa}, [pa, B, M, N](Node& self) {
    Tensor g({B, M, N});
    const double inv = 1.0 / static_cast<double>(M);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t m = 0; m < M; ++m)
        for (std::size_t n = 0; n < N; ++n) g.at(b, m, n) = self.grad.at(b, n) * inv;
    pa->accumulate(g);
  });
}

Var stack_axis1(const std::vector<Var>& xs) {
  if (xs.empty()) throw TensorError("stack_axis1: empty input");
  const std::size_t K = xs.size();
  const Tensor& first = xs[0].value();
  if (first.ndim() != 2) shape_error("stack_axis1", first);
  const std::size_t N = first.dim(0), D = first.dim(1);
  Tensor out({N, K, D});
  std::vector<NodePtr> parents;
  parents.reserve(K);
  for (std::size_t k = 0; k < K; ++k) {
    const Tensor& xv = xs[k].value();
    if (xv.ndim() != 2 || xv.dim(0) != N || xv.dim(1) != D) shape_error("stack_axis1", first, xv);
    for (std::size_t n = 0; n < N; ++n) {
      std::memcpy(out.data() + (n * K + k) * D, xv.data() + n * D, D * sizeof(double));
    }
    parents.push_back(xs[k].node());
  }
  auto ps = parents;
  return make("stack_axis1", std::move(out), std::move(parents), [ps, K, N, D](Node& self) {
    for (std::size_t k = 0; k < K; ++k) {
      if (!ps[k]->requires_grad) continue;
      Tensor g({N, D});
      for (std::size_t n = 0; n < N; ++n) {
        std::memcpy(g.data() + n * D, self.grad.data() + (n * K + k) * D, D * sizeof(double));
      }
      ps[k]->accumulate(g);
    }
  });
}

Var slice_axis1(const Var& a, std::size_t k) {
  const Tensor& av = a.value();
  if (av.ndim() != 3 || k >= av.dim(1)) shape_error("slice_axis1", av);
  const std::size_t N = av.dim(0), K = av.dim(1), D = av.dim(2);
  Tensor out({N, D});
  for (std::size_t n = 0; n < N; ++n) {
    std::memcpy(out.data() + n * D, av.data() + (n * K + k) * D, D * sizeof(double));
  }
  NodePtr pa = a.node();
  return make("slice_axis1", std::move(out), {pa}, [pa, k, N, K, D](Node& self) {
    Tensor g({N, K, D});
    for (std::size_t n = 0; n < N; ++n) {
      std::memcpy(g.data() + (n * K + k) * D, self.grad.data() + n * D, D * sizeof(double));
    }
    pa->accumulate(g);
  });
}

Var sse(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) shape_error("sse", av, bv);
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    s += d * d;
  }
  NodePtr pa = a.node(), pb = b.node();
  return make("sse", Tensor::scalar(s), {pa, pb}, [pa, pb](Node& self) {
    const double g = self.grad[0];
    if (pa->requires_grad) {
      Tensor ga(pa->value.shape());
      for (std::size_t i = 0; i < ga.size(); ++i) {
        ga[i] = 2.0 * g * (pa->value[i] - pb->value[i]);
      }
      pa->accumulate(ga);
    }
    if (pb->requires_grad) {
      Tensor gb(pb->value.shape());
      for (std::size_t i = 0; i < gb.size(); ++i) {
        gb[i] = -2.0 * g * (pa->value[i] - pb->value[i]);
      }
      pb->accumulate(gb);
    }
  });
}

void backward(const Var& root) {
  if (!root.defined()) throw TensorError("backward: undefined root");
  if (root.value().size() != 1) {
    throw TensorError("backward: root must be scalar, got shape " + root.value().shape_str());
  }
  Node* rn = root.node().get();
  if (!rn->requires_grad) {
    return;  // constant graph, nothing to differentiate
  }
  // Reverse postorder = topological order with children before parents.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(rn, 0);
  visited.insert(rn);
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  // Interior gradients are per-sweep scratch; only leaves accumulate across
  // backward calls.
  for (Node* n : order) {
    if (n->backward_fn) n->zero_grad();
  }
  rn->accumulate(Tensor::scalar(1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad_live) n->backward_fn(*n);
  }
}

}  // namespace legato
