#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ergorisk/rng.hpp"

// Dense tensors with reverse-mode differentiation.
//
// A Tensor is a shared handle to a graph node. Every op below returns a new
// node and, when any input tracks gradients and grad mode is on, records
// a backward rule pointing at its inputs. backward() walks the recorded
// graph in reverse topological order from a scalar loss and accumulates
// into the .grad() buffers of tracked leaves.
//
// All ops are instantiated for float (training) and double (gradient
// checks).

namespace ergorisk::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Thread-local switch; when off, ops record no graph.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// When on, every op verifies its output is finite and throws NumericFault
// otherwise. Defaults to on in debug builds.
void set_finite_checks(bool enabled);
bool finite_checks();

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const std::vector<T>& grad_out)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using Scalar = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor scalar(T value) { return Tensor(Shape{}, value); }
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng);
  static Tensor normal(Shape shape, double stddev, Rng& rng);
  static Tensor from_node(NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  // Direct write access, for parameter initialisation and optimizer updates.
  std::span<T> mutable_data() { return node_->value; }
  T item() const;
  T operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    node_->requires_grad = on;
    return *this;
  }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  bool is_leaf() const { return node_->parents.empty(); }
  // Copy of the values with no graph history.
  Tensor detach() const { return Tensor(node_->shape, node_->value); }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Populates .grad() of every tracked leaf reachable from `loss`.
// Throws ShapeError when `loss` does not hold exactly one element.
template <typename T>
void backward(const Tensor<T>& loss);

// Elementwise; shapes must match exactly.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);

// x[n,d] + bias[d] broadcast over rows.
template <typename T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& x);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// [n,p] and [n,q] -> [n,p+q]
template <typename T> Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b);
// k tensors of d elements each -> [k,d]
template <typename T> Tensor<T> stack_rows(const std::vector<Tensor<T>>& rows);
// [n,d] -> [1,d]
template <typename T> Tensor<T> mean_rows(const Tensor<T>& x);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

template <typename T> Tensor<T> relu(const Tensor<T>& x);
// Exact (erf) form.
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
// Inverted dropout. Identity when !train or p == 0.
template <typename T> Tensor<T> dropout(const Tensor<T>& x, double p, Rng* rng, bool train);

template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

// Row-wise normalisation of x[n,d] followed by the affine gamma, beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps = 1e-5);

// x[C,H,W] * kernel[O,C,kh,kw] (+ bias[O]) -> [O,H',W'].
// `bias` may be an undefined Tensor.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding);

// Row-stochastic attention matrices of one attention() call, laid out
// [heads][n_q][n_k].
struct AttentionProbe {
  std::size_t heads = 0;
  std::size_t n_q = 0;
  std::size_t n_k = 0;
  std::vector<double> probs;
};

// Scaled dot-product attention per head over column blocks of width d/heads:
// softmax(Q_h K_h^T / sqrt(d/heads)) V_h, heads concatenated back to [n_q,d].
// Throws ConfigError when d is not divisible by heads.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                    AttentionProbe* probe = nullptr);

// Mean over the batch of -sum_c q_c log softmax(logits)_c, where q is the
// one-hot label mixed with the uniform distribution at rate `smoothing`.
// Throws DomainError for labels outside [0, C).
template <typename T>
Tensor<T> cross_entropy_smoothed(const Tensor<T>& logits, std::span<const int> labels, double smoothing);

// Scales all gradients by max_norm / norm when the global L2 norm exceeds
// max_norm. Returns the norm before clipping.
template <typename T>
double clip_global_norm(std::span<Tensor<T>> params, double max_norm);

}  // namespace ergorisk::ad
