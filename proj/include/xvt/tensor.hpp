#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "xvt/error.hpp"
#include "xvt/rng.hpp"

namespace xvt {

// Extents of an n-dimensional array, outermost first.
using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);

namespace detail {

// One node of the backward graph. A node owns its forward values (shared, so
// reshapes stay metadata-only), an optional gradient buffer of the same
// length, and a closure that scatters this node's gradient into its parents.
// Parents are stored in construction order; the reverse topological replay in
// Tensor::backward() visits every node exactly once, so gradient accumulation
// order is deterministic.
template <typename T>
struct Node {
  Shape shape;
  std::shared_ptr<std::vector<T>> values;
  bool requires_grad = false;
  std::vector<T> grad;  // sized lazily; empty means "not yet touched"
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  std::int64_t size() const { return static_cast<std::int64_t>(values->size()); }

  void ensure_grad() {
    if (grad.size() != values->size()) grad.assign(values->size(), T(0));
  }
};

}  // namespace detail

// Dense row-major n-dimensional array with reverse-mode automatic
// differentiation. Copying a Tensor is shallow (both handles refer to the
// same node); values are treated as immutable once an op has consumed them,
// except that leaf values may be edited between graph constructions (the
// finite-difference harness and the optimizer rely on this).
//
// Feature maps use the (batch, channels, height, width) axis convention
// throughout the library.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad = false);
  static Tensor gaussian(Shape shape, double mean, double stddev, Rng& rng,
                         bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int axis) const { return node_->shape[static_cast<std::size_t>(axis)]; }
  std::int64_t size() const { return node_->size(); }

  std::vector<T>& values() { return *node_->values; }
  const std::vector<T>& values() const { return *node_->values; }
  T* data() { return node_->values->data(); }
  const T* data() const { return node_->values->data(); }

  T& at(int i) { return (*node_->values)[static_cast<std::size_t>(i)]; }
  T& at(int i, int j) { return (*node_->values)[flat(i, j)]; }
  T& at(int i, int j, int k) { return (*node_->values)[flat(i, j, k)]; }
  T& at(int i, int j, int k, int l) { return (*node_->values)[flat(i, j, k, l)]; }
  T at(int i) const { return (*node_->values)[static_cast<std::size_t>(i)]; }
  T at(int i, int j) const { return (*node_->values)[flat(i, j)]; }
  T at(int i, int j, int k) const { return (*node_->values)[flat(i, j, k)]; }
  T at(int i, int j, int k, int l) const { return (*node_->values)[flat(i, j, k, l)]; }

  // Value of a one-element tensor.
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Gradient buffer; sized and zeroed on first access for grad-requiring
  // tensors, throws otherwise.
  std::vector<T>& grad();
  const std::vector<T>& grad() const;
  void zero_grad();

  // Reverse-mode sweep from a scalar output. Populates grad on every
  // grad-requiring node reachable from this one. Gradients accumulate across
  // repeated calls.
  void backward();

  std::shared_ptr<detail::Node<T>> node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node<T>> node);

 private:
  std::size_t flat(int i, int j) const;
  std::size_t flat(int i, int j, int k) const;
  std::size_t flat(int i, int j, int k, int l) const;

  std::shared_ptr<detail::Node<T>> node_;
};

// ---- elementwise ----
// add/sub/mul accept equal shapes or a scalar (1-element) operand on either
// side; anything else is a DimensionError.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> scale(const Tensor<T>& x, double c);
template <typename T> Tensor<T> sum(const Tensor<T>& x);  // -> scalar

// ---- matrix products ----
// matmul: (r,k)x(k,c) -> (r,c). Gradients dA = dC.B^T, dB = A^T.dC.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// linear: X(...,q) x W(q,r) + b(r). X may be rank 2 or 3; b may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b = Tensor<T>());
// Batched products over a shared leading axis N.
template <typename T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b);     // (N,p,q)x(N,q,r)
template <typename T> Tensor<T> bmm_nt(const Tensor<T>& a, const Tensor<T>& b);  // (N,p,q)x(N,r,q)^T
template <typename T> Tensor<T> bmm_tn(const Tensor<T>& a, const Tensor<T>& b);  // (N,q,p)^T x(N,q,r)
template <typename T> Tensor<T> transpose(const Tensor<T>& x);  // 2-D

// ---- shape ----
// reshape is metadata-only: the result shares the input's value buffer.
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis);
// (N,C,H,W) -> (N, H*W, C): row p = y*W + x holds pixel (y,x)'s channel vector.
template <typename T> Tensor<T> flatten_rows(const Tensor<T>& x);
template <typename T> Tensor<T> unflatten_rows(const Tensor<T>& x, int height, int width);

// ---- rest ----
// Numerically stable softmax along `axis` (max-subtracted). Finite inputs
// required; outputs along the axis are positive and sum to 1.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis);
// Inverted-scaling dropout: keeps are scaled by 1/(1-rate) at train time so
// eval mode is the identity. Mask is drawn from `rng` at node construction.
template <typename T> Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, Rng& rng);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace xvt
