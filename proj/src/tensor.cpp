#include "ergorisk/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "ergorisk/errors.hpp"

namespace ergorisk::ad {
namespace {

thread_local bool t_grad_enabled = true;
#ifdef NDEBUG
bool g_finite_checks = false;
#else
bool g_finite_checks = true;
#endif

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
using BackwardFn = std::function<void(const std::vector<T>&)>;

[[noreturn]] void shape_fail(const char* op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  if (!t.defined()) shape_fail(op, "undefined tensor");
  if (t.rank() != rank) {
    shape_fail(op, "expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!a.defined() || !b.defined()) shape_fail(op, "undefined tensor");
  if (a.shape() != b.shape()) shape_fail(op, shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Wraps a computed value as a graph node. `make_backward` is invoked only
// when the result needs gradients, so ops skip saving state otherwise.
template <typename T, typename MakeBackward>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value, std::initializer_list<const Tensor<T>*> inputs,
                      MakeBackward&& make_backward) {
  if (g_finite_checks) {
    for (const T v : value) {
      if (!std::isfinite(v)) throw NumericFault(std::string("non-finite value produced by ") + op);
    }
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool track = false;
  if (t_grad_enabled) {
    for (const auto* in : inputs) track = track || (in->defined() && in->requires_grad());
  }
  if (track) {
    node->requires_grad = true;
    for (const auto* in : inputs) {
      if (in->defined() && in->requires_grad()) node->parents.push_back(in->node());
    }
    node->backward = make_backward();
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
bool tracks(const Tensor<T>& t) {
  return t.defined() && t.requires_grad();
}

// out[m,n] += a[m,k] * b[k,n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* out_row = out + i * n;
    const T* a_row = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a_row[p];
      const T* b_row = b + p * n;
      for (std::size_t j = 0; j < n; ++j) out_row[j] += av * b_row[j];
    }
  }
}

// out[m,k] += g[m,n] * b[k,n]^T
template <typename T>
void gemm_nt(const T* g, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* g_row = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T* b_row = b + p * n;
      T acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += g_row[j] * b_row[j];
      out[i * k + p] += acc;
    }
  }
}

// out[k,n] += a[m,k]^T * g[m,n]
template <typename T>
void gemm_tn(const T* a, const T* g, T* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* g_row = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      T* out_row = out + p * n;
      for (std::size_t j = 0; j < n; ++j) out_row[j] += av * g_row[j];
    }
  }
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (const auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

bool grad_enabled() { return t_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks() { return g_finite_checks; }

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<detail::Node<T>>()) {
  for (const auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  node_->value.assign(ad::numel(shape), fill);
  node_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<detail::Node<T>>()) {
  for (const auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (values.size() != ad::numel(shape)) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::uniform(Shape shape, double lo, double hi, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.node_->value) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::normal(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.node_->value) v = static_cast<T>(stddev * rng.normal());
  return t;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) return;

  // iterative post-order DFS -> topological order
  std::vector<detail::Node<T>*> order;
  std::unordered_set<const detail::Node<T>*> visited;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node<T>* parent = node->parents[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node<T>* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(node->grad);
  }
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result<T>("add", a.shape(), std::move(out), {&a, &b}, [&]() -> BackwardFn<T> {
    NodePtr<T> na = tracks(a) ? a.node() : nullptr;
    NodePtr<T> nb = tracks(b) ? b.node() : nullptr;
    return [na, nb](const std::vector<T>& g) {
      for (const auto& n : {na, nb}) {
        if (!n) continue;
        auto& dst = n->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      }
    };
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result<T>("sub", a.shape(), std::move(out), {&a, &b}, [&]() -> BackwardFn<T> {
    NodePtr<T> na = tracks(a) ? a.node() : nullptr;
    NodePtr<T> nb = tracks(b) ? b.node() : nullptr;
    return [na, nb](const std::vector<T>& g) {
      if (na) {
        auto& dst = na->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      }
      if (nb) {
        auto& dst = nb->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] -= g[i];
      }
    };
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result<T>("mul", a.shape(), std::move(out), {&a, &b}, [&]() -> BackwardFn<T> {
    NodePtr<T> na = a.node();
    NodePtr<T> nb = b.node();
    const bool ga = tracks(a);
    const bool gb = tracks(b);
    return [na, nb, ga, gb](const std::vector<T>& g) {
      if (ga) {
        auto& dst = na->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * nb->value[i];
      }
      if (gb) {
        auto& dst = nb->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * na->value[i];
      }
    };
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  if (!x.defined()) shape_fail("scale", "undefined tensor");
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return make_result<T>("scale", x.shape(), std::move(out), {&x}, [&]() -> BackwardFn<T> {
    NodePtr<T> nx = x.node();
    return [nx, factor](const std::vector<T>& g) {
      auto& dst = nx->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * factor;
    };
  });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require_rank(x, 2, "add_bias");
  require_rank(bias, 1, "add_bias");
  const std::size_t n = x.dim(0);
  const std::size_t d = x.dim(1);
  if (bias.dim(0) != d) shape_fail("add_bias", shape_str(x.shape()) + " + " + shape_str(bias.shape()));
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x[i * d + j] + bias[j];
  }
  return make_result<T>("add_bias", x.shape(), std::move(out), {&x, &bias}, [&]() -> BackwardFn<T> {
    NodePtr<T> nx = tracks(x) ? x.node() : nullptr;
    NodePtr<T> nb = tracks(bias) ? bias.node() : nullptr;
    return [nx, nb, n, d](const std::vector<T>& g) {
      if (nx) {
        auto& dst = nx->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      }
      if (nb) {
        auto& dst = nb->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < d; ++j) dst[j] += g[i * d + j];
        }
      }
    };
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(1);
  if (b.dim(0) != k) shape_fail("matmul", shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<T> out(m * n, T(0));
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_result<T>("matmul", Shape{m, n}, std::move(out), {&a, &b}, [&]() -> BackwardFn<T> {
    NodePtr<T> na = a.node();
    NodePtr<T> nb = b.node();
    const bool ga = tracks(a);
    const bool gb = tracks(b);
    return [na, nb, ga, gb, m, k, n](const std::vector<T>& g) {
      if (ga) gemm_nt(g.data(), nb->value.data(), na->ensure_grad().data(), m, k, n);
      if (gb) gemm_tn(na->value.data(), g.data(), nb->ensure_grad().data(), m, k, n);
    };
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0);
  const std::size_t c = x.dim(1);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  }
  return make_result<T>("transpose", Shape{c, r}, std::move(out), {&x}, [&]() -> BackwardFn<T> {
    NodePtr<T> nx = x.node();
    return [nx, r, c](const std::vector<T>& g) {
      auto& dst = nx->ensure_grad();
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) dst[i * c + j] += g[j * r + i];
      }
    };
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (!x.defined()) shape_fail("reshape", "undefined tensor");
  if (numel(shape) != x.numel()) shape_fail("reshape", shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {&x}, [&]() -> BackwardFn<T> {
    NodePtr<T> nx = x.node();
    return [nx](const std::vector<T>& g) {
      auto& dst = nx->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    };
  });
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "concat_cols");
  require_rank(b, 2, "concat_cols");
  const std::size_t n = a.dim(0);
  if (b.dim(0) != n) shape_fail("concat_cols", shape_str(a.shape()) + " | " + shape_str(b.shape()));
  const std::size_t p = a.dim(1);
  const std::size_t q = b.dim(1);
  std::vector<T> out(n * (p + q));
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data().begin() + i * p, p, out.begin() + i * (p + q));
    std::copy_n(b.data().begin() + i * q, q, out.begin() + i * (p + q) + p);
  }
  return make_result<T>("concat_cols", Shape{n, p + q}, std::move(out), {&a, &b}, [&]() -> BackwardFn<T> {
    NodePtr<T> na = tracks(a) ? a.node() : nullptr;
    NodePtr<T> nb = tracks(b) ? b.node() : nullptr;
    return [na, nb, n, p, q](const std::vector<T>& g) {
      for (std::size_t i = 0; i < n; ++i) {
        if (na) {
          auto& dst = na->ensure_grad();
          for (std::size_t j = 0; j < p; ++j) dst[i * p + j] += g[i * (p + q) + j];
        }
        if (nb) {
          auto& dst = nb->ensure_grad();
          for (std::size_t j = 0; j < q; ++j) dst[i * q + j] += g[i * (p + q) + p + j];
        }
      }
    };
  });
}

template <typename T>
Tensor<T> stack_rows(const std::vector<Tensor<T>>& rows) {
  if (rows.empty()) shape_fail("stack_rows", "no rows");
  const std::size_t d = rows.front().numel();
  std::vector<T> out;
  out.reserve(rows.size() * d);
  bool any_grad = false;
  for (const auto& r : rows) {
    if (!r.defined() || r.numel() != d) shape_fail("stack_rows", "rows differ in size");
    out.insert(out.end(), r.data().begin(), r.data().end());
    any_grad = any_grad || r.requires_grad();
  }
  if (g_finite_checks) {
    for (const T v : out) {
      if (!std::isfinite(v)) throw NumericFault("non-finite value produced by stack_rows");
    }
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = Shape{rows.size(), d};
  node->value = std::move(out);
  node->op = "stack_rows";
  if (any_grad && t_grad_enabled) {
    node->requires_grad = true;
    std::vector<NodePtr<T>> sources;
    for (const auto& r : rows) {
      sources.push_back(r.requires_grad() ? r.node() : nullptr);
      if (r.requires_grad()) node->parents.push_back(r.node());
    }
    node->backward = [sources, d](const std::vector<T>& g) {
      for (std::size_t i = 0; i < sources.size(); ++i) {
        if (!sources[i]) continue;
        auto& dst = sources[i]->ensure_grad();
        for (std::size_t j = 0; j < d; ++j) dst[j] += g[i * d + j];
      }
    };
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x) {
  require_rank(x, 2, "mean_rows");
  const std::size_t n = x.dim(0);
  const std::size_t d = x.dim(1);
  std::vector<T> out(d, T(0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[j] += x[i * d + j];
  }
  for (auto& v : out) v /= static_cast<T>(n);
  return make_result<T>("mean_rows", Shape{1, d}, std::move(out), {&x}, [&]() -> BackwardFn<T> {
    NodePtr<T> nx = x.node();
    return [nx, n, d](const std::vector<T>& g) {
      auto& dst = nx->ensure_grad();
      const T inv = T(1) / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) dst[i * d + j] += g[j] * inv;
      }
    };
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  if (!x.defined()) shape_fail("sum", "undefined tensor");
  T acc = 0;
  for (const T v : x.data()) acc += v;
  return make_result<T>("sum", Shape{}, std::vector<T>{acc}, {&x}, [&]() -> BackwardFn<T> {
    NodePtr<T> nx = x.node();
    return [nx](const std::vector<T>& g) {
      auto& dst = nx->ensure_grad();
      for (auto& v : dst) v += g[0];
    };
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (!x.defined()) shape_fail("mean", "undefined tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  if (!x.defined()) shape_fail("relu", "undefined tensor");
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return make_result<T>("relu", x.shape(), std::move(out), {&x}, [&]() -> BackwardFn<T> {
    NodePtr<T> nx = x.node();
    return [nx](const std::vector<T>& g) {
      auto& dst = nx->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (nx->value[i] > T(0)) dst[i] += g[i];
      }
    };
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  if (!x.defined()) shape_fail("gelu", "undefined tensor");
  const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x[i];
    out[i] = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  }
  return make_result<T>("gelu", x.shape(), std::move(out), {&x}, [&]() -> BackwardFn<T> {
    NodePtr<T> nx = x.node();
    return [nx, inv_sqrt2](const std::vector<T>& g) {
      const T inv_sqrt_2pi = static_cast<T>(1.0 / std::sqrt(2.0 * std::numbers::pi));
      auto& dst = nx->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T v = nx->value[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
        dst[i] += g[i] * (cdf + v * pdf);
      }
    };
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng* rng, bool train) {
  if (!x.defined()) shape_fail("dropout", "undefined tensor");
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout rate must lie in [0,1)");
  if (!train || p == 0.0) return x;
  if (rng == nullptr) throw ConfigError("dropout in train mode needs a random generator");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = rng->uniform() < p ? T(0) : keep_scale;
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
  return make_result<T>("dropout", x.shape(), std::move(out), {&x}, [&]() -> BackwardFn<T> {
    NodePtr<T> nx = x.node();
    return [nx, mask = std::move(mask)](const std::vector<T>& g) {
      auto& dst = nx->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * mask[i];
    };
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (!x.defined()) shape_fail("softmax", "undefined tensor");
  if (axis >= x.rank()) shape_fail("softmax", "axis out of range for " + shape_str(x.shape()));
  const auto& shape = x.shape();
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];

  std::vector<T> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = x[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[base + j * inner]);
      T total = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const T e = std::exp(x[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
    }
  }
  std::vector<T> saved = tracks(x) && t_grad_enabled ? out : std::vector<T>{};
  return make_result<T>("softmax", x.shape(), std::move(out), {&x}, [&]() -> BackwardFn<T> {
    NodePtr<T> nx = x.node();
    return [nx, y = std::move(saved), outer, inner, n](const std::vector<T>& g) {
      auto& dst = nx->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * n * inner + in;
          T dot = 0;
          for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t idx = base + j * inner;
            dst[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    };
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
  require_rank(x, 2, "layer_norm");
  require_rank(gamma, 1, "layer_norm");
  require_rank(beta, 1, "layer_norm");
  const std::size_t n = x.dim(0);
  const std::size_t d = x.dim(1);
  if (gamma.dim(0) != d || beta.dim(0) != d) {
    shape_fail("layer_norm", "affine parameters do not match " + shape_str(x.shape()));
  }
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(n);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = x.data().data() + i * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    rstd[i] = T(1) / std::sqrt(var + static_cast<T>(eps));
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mu) * rstd[i];
      out[i * d + j] = xhat[i * d + j] * gamma[j] + beta[j];
    }
  }
  return make_result<T>("layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta}, [&]() -> BackwardFn<T> {
    NodePtr<T> nx = tracks(x) ? x.node() : nullptr;
    NodePtr<T> ng = gamma.node();
    const bool g_gamma = tracks(gamma);
    NodePtr<T> nb = tracks(beta) ? beta.node() : nullptr;
    return [nx, ng, g_gamma, nb, xhat = std::move(xhat), rstd = std::move(rstd), n, d](const std::vector<T>& g) {
      if (g_gamma) {
        auto& dst = ng->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < d; ++j) dst[j] += g[i * d + j] * xhat[i * d + j];
        }
      }
      if (nb) {
        auto& dst = nb->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < d; ++j) dst[j] += g[i * d + j];
        }
      }
      if (nx) {
        auto& dst = nx->ensure_grad();
        const T inv_d = T(1) / static_cast<T>(d);
        for (std::size_t i = 0; i < n; ++i) {
          T mean_dxhat = 0;
          T mean_dxhat_xhat = 0;
          for (std::size_t j = 0; j < d; ++j) {
            const T dxh = g[i * d + j] * ng->value[j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xhat[i * d + j];
          }
          mean_dxhat *= inv_d;
          mean_dxhat_xhat *= inv_d;
          for (std::size_t j = 0; j < d; ++j) {
            const T dxh = g[i * d + j] * ng->value[j];
            dst[i * d + j] += rstd[i] * (dxh - mean_dxhat - xhat[i * d + j] * mean_dxhat_xhat);
          }
        }
      }
    };
  });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
  require_rank(x, 3, "conv2d");
  require_rank(kernel, 4, "conv2d");
  if (stride == 0) throw ConfigError("conv2d stride must be positive");
  const std::size_t c_in = x.dim(0);
  const std::size_t h = x.dim(1);
  const std::size_t w = x.dim(2);
  const std::size_t c_out = kernel.dim(0);
  const std::size_t kh = kernel.dim(2);
  const std::size_t kw = kernel.dim(3);
  if (kernel.dim(1) != c_in) shape_fail("conv2d", "kernel " + shape_str(kernel.shape()) + " vs input " + shape_str(x.shape()));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != c_out)) shape_fail("conv2d", "bias does not match kernel");
  if (h + 2 * padding < kh || w + 2 * padding < kw) shape_fail("conv2d", "kernel larger than padded input");
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::size_t wo = (w + 2 * padding - kw) / stride + 1;
  const std::size_t patch = c_in * kh * kw;
  const std::size_t cells = ho * wo;

  // im2col: cols[patch, cells]
  std::vector<T> cols(patch * cells, T(0));
  const T* xv = x.data().data();
  for (std::size_t c = 0; c < c_in; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        T* col_row = cols.data() + ((c * kh + ki) * kw + kj) * cells;
        for (std::size_t oi = 0; oi < ho; ++oi) {
          const long ii = static_cast<long>(oi * stride + ki) - static_cast<long>(padding);
          if (ii < 0 || ii >= static_cast<long>(h)) continue;
          for (std::size_t oj = 0; oj < wo; ++oj) {
            const long jj = static_cast<long>(oj * stride + kj) - static_cast<long>(padding);
            if (jj < 0 || jj >= static_cast<long>(w)) continue;
            col_row[oi * wo + oj] = xv[(c * h + static_cast<std::size_t>(ii)) * w + static_cast<std::size_t>(jj)];
          }
        }
      }
    }
  }

  std::vector<T> out(c_out * cells, T(0));
  if (bias.defined()) {
    for (std::size_t o = 0; o < c_out; ++o) std::fill_n(out.begin() + o * cells, cells, bias[o]);
  }
  gemm_nn(kernel.data().data(), cols.data(), out.data(), c_out, patch, cells);

  return make_result<T>("conv2d", Shape{c_out, ho, wo}, std::move(out), {&x, &kernel, &bias}, [&]() -> BackwardFn<T> {
    NodePtr<T> nx = tracks(x) ? x.node() : nullptr;
    NodePtr<T> nk = kernel.node();
    const bool g_kernel = tracks(kernel);
    NodePtr<T> nb = tracks(bias) ? bias.node() : nullptr;
    return [=, cols = std::move(cols)](const std::vector<T>& g) {
      if (g_kernel) gemm_nt(g.data(), cols.data(), nk->ensure_grad().data(), c_out, patch, cells);
      if (nb) {
        auto& dst = nb->ensure_grad();
        for (std::size_t o = 0; o < c_out; ++o) {
          T acc = 0;
          for (std::size_t j = 0; j < cells; ++j) acc += g[o * cells + j];
          dst[o] += acc;
        }
      }
      if (nx) {
        std::vector<T> dcols(patch * cells, T(0));
        gemm_tn(nk->value.data(), g.data(), dcols.data(), c_out, patch, cells);
        auto& dst = nx->ensure_grad();
        for (std::size_t c = 0; c < c_in; ++c) {
          for (std::size_t ki = 0; ki < kh; ++ki) {
            for (std::size_t kj = 0; kj < kw; ++kj) {
              const T* col_row = dcols.data() + ((c * kh + ki) * kw + kj) * cells;
              for (std::size_t oi = 0; oi < ho; ++oi) {
                const long ii = static_cast<long>(oi * stride + ki) - static_cast<long>(padding);
                if (ii < 0 || ii >= static_cast<long>(h)) continue;
                for (std::size_t oj = 0; oj < wo; ++oj) {
                  const long jj = static_cast<long>(oj * stride + kj) - static_cast<long>(padding);
                  if (jj < 0 || jj >= static_cast<long>(w)) continue;
                  dst[(c * h + static_cast<std::size_t>(ii)) * w + static_cast<std::size_t>(jj)] += col_row[oi * wo + oj];
                }
              }
            }
          }
        }
      }
    };
  });
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                    AttentionProbe* probe) {
  require_rank(q, 2, "attention");
  require_rank(k, 2, "attention");
  require_rank(v, 2, "attention");
  const std::size_t nq = q.dim(0);
  const std::size_t nk = k.dim(0);
  const std::size_t d = q.dim(1);
  if (k.dim(1) != d || v.dim(1) != d || v.dim(0) != nk) {
    shape_fail("attention", "q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  }
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention width " + std::to_string(d) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  const std::size_t dh = d / heads;
  const T scale_factor = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  const T* qv = q.data().data();
  const T* kv = k.data().data();
  const T* vv = v.data().data();

  std::vector<T> probs(heads * nq * nk);
  std::vector<T> out(nq * d, T(0));
  for (std::size_t hd = 0; hd < heads; ++hd) {
    const std::size_t off = hd * dh;
    T* p_head = probs.data() + hd * nq * nk;
    for (std::size_t i = 0; i < nq; ++i) {
      T* p_row = p_head + i * nk;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < nk; ++j) {
        T s = 0;
        for (std::size_t c = 0; c < dh; ++c) s += qv[i * d + off + c] * kv[j * d + off + c];
        p_row[j] = s * scale_factor;
        mx = std::max(mx, p_row[j]);
      }
      T total = 0;
      for (std::size_t j = 0; j < nk; ++j) {
        p_row[j] = std::exp(p_row[j] - mx);
        total += p_row[j];
      }
      for (std::size_t j = 0; j < nk; ++j) p_row[j] /= total;
      T* o_row = out.data() + i * d + off;
      for (std::size_t j = 0; j < nk; ++j) {
        const T pj = p_row[j];
        const T* v_row = vv + j * d + off;
        for (std::size_t c = 0; c < dh; ++c) o_row[c] += pj * v_row[c];
      }
    }
  }
  if (probe != nullptr) {
    probe->heads = heads;
    probe->n_q = nq;
    probe->n_k = nk;
    probe->probs.assign(probs.begin(), probs.end());
  }

  return make_result<T>("attention", Shape{nq, d}, std::move(out), {&q, &k, &v}, [&]() -> BackwardFn<T> {
    NodePtr<T> nq_node = q.node();
    NodePtr<T> nk_node = k.node();
    NodePtr<T> nv_node = v.node();
    const bool gq = tracks(q);
    const bool gk = tracks(k);
    const bool gv = tracks(v);
    return [=, probs = std::move(probs)](const std::vector<T>& g) {
      const T* qd = nq_node->value.data();
      const T* kd = nk_node->value.data();
      const T* vd = nv_node->value.data();
      T* dq = gq ? nq_node->ensure_grad().data() : nullptr;
      T* dk = gk ? nk_node->ensure_grad().data() : nullptr;
      T* dv = gv ? nv_node->ensure_grad().data() : nullptr;
      std::vector<T> ds(nk);
      for (std::size_t hd = 0; hd < heads; ++hd) {
        const std::size_t off = hd * dh;
        const T* p_head = probs.data() + hd * nq * nk;
        for (std::size_t i = 0; i < nq; ++i) {
          const T* p_row = p_head + i * nk;
          const T* g_row = g.data() + i * d + off;
          // dP_ij = g_i . v_j ; dS = P * (dP - sum_j P dP)
          T dot = 0;
          for (std::size_t j = 0; j < nk; ++j) {
            T dp = 0;
            for (std::size_t c = 0; c < dh; ++c) dp += g_row[c] * vd[j * d + off + c];
            ds[j] = dp;
            dot += dp * p_row[j];
          }
          for (std::size_t j = 0; j < nk; ++j) ds[j] = p_row[j] * (ds[j] - dot) * scale_factor;
          for (std::size_t j = 0; j < nk; ++j) {
            if (dv) {
              const T pj = p_row[j];
              for (std::size_t c = 0; c < dh; ++c) dv[j * d + off + c] += pj * g_row[c];
            }
            if (dq) {
              for (std::size_t c = 0; c < dh; ++c) dq[i * d + off + c] += ds[j] * kd[j * d + off + c];
            }
            if (dk) {
              for (std::size_t c = 0; c < dh; ++c) dk[j * d + off + c] += ds[j] * qd[i * d + off + c];
            }
          }
        }
      }
    };
  });
}

template <typename T>
Tensor<T> cross_entropy_smoothed(const Tensor<T>& logits, std::span<const int> labels, double smoothing) {
  require_rank(logits, 2, "cross_entropy_smoothed");
  const std::size_t batch = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  if (labels.size() != batch) shape_fail("cross_entropy_smoothed", "label count does not match batch");
  if (!(smoothing >= 0.0 && smoothing <= 1.0)) throw ConfigError("label smoothing must lie in [0,1]");
  for (const int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw DomainError("label " + std::to_string(y) + " outside 0.." + std::to_string(classes - 1));
    }
  }
  const T off_target = static_cast<T>(smoothing / static_cast<double>(classes));
  const T on_target = static_cast<T>(1.0 - smoothing) + off_target;

  std::vector<T> probs(logits.numel());
  T total = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = logits.data().data() + b * classes;
    T mx = row[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    T z = 0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
    const T log_z = std::log(z) + mx;
    T sample = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      const T target = static_cast<int>(c) == labels[b] ? on_target : off_target;
      const T log_p = row[c] - log_z;
      sample -= target * log_p;
      probs[b * classes + c] = std::exp(log_p);
    }
    total += sample;
  }
  const T loss = total / static_cast<T>(batch);
  std::vector<int> saved_labels(labels.begin(), labels.end());
  return make_result<T>("cross_entropy_smoothed", Shape{}, std::vector<T>{loss}, {&logits}, [&]() -> BackwardFn<T> {
    NodePtr<T> nl = logits.node();
    return [nl, probs = std::move(probs), saved_labels, batch, classes, on_target, off_target](const std::vector<T>& g) {
      auto& dst = nl->ensure_grad();
      const T factor = g[0] / static_cast<T>(batch);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < classes; ++c) {
          const T target = static_cast<int>(c) == saved_labels[b] ? on_target : off_target;
          dst[b * classes + c] += factor * (probs[b * classes + c] - target);
        }
      }
    };
  });
}

template <typename T>
double clip_global_norm(std::span<Tensor<T>> params, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("clip norm must be positive");
  double sq = 0.0;
  for (const auto& p : params) {
    for (const T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (T& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

#define ERGORISK_INSTANTIATE(T)                                                                            \
  template class Tensor<T>;                                                                                \
  template void backward<T>(const Tensor<T>&);                                                             \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                        \
  template Tensor<T> add_bias<T>(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> transpose<T>(const Tensor<T>&);                                                       \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                                  \
  template Tensor<T> concat_cols<T>(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> stack_rows<T>(const std::vector<Tensor<T>>&);                                         \
  template Tensor<T> mean_rows<T>(const Tensor<T>&);                                                       \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                             \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                            \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                            \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                            \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, Rng*, bool);                                     \
  template Tensor<T> softmax<T>(const Tensor<T>&, std::size_t);                                            \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);          \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,          \
                               std::size_t);                                                               \
  template Tensor<T> attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,       \
                                  AttentionProbe*);                                                        \
  template Tensor<T> cross_entropy_smoothed<T>(const Tensor<T>&, std::span<const int>, double);            \
  template double clip_global_norm<T>(std::span<Tensor<T>>, double);

ERGORISK_INSTANTIATE(float)
ERGORISK_INSTANTIATE(double)

#undef ERGORISK_INSTANTIATE

}  // namespace ergorisk::ad
