#include "xvt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "xvt/opcount.hpp"

namespace xvt {

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

namespace {

void check_positive_extents(const Shape& shape) {
  for (int e : shape) {
    if (e <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
}

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
NodePtr<T> make_node(Shape shape, std::vector<T> values, std::vector<NodePtr<T>> parents,
                     const char* op) {
  auto n = std::make_shared<detail::Node<T>>();
  n->shape = std::move(shape);
  n->values = std::make_shared<std::vector<T>>(std::move(values));
  n->parents = std::move(parents);
  n->op = op;
  for (const auto& p : n->parents) {
    if (p->requires_grad) n->requires_grad = true;
  }
  return n;
}

template <typename T>
void add_into(std::vector<T>& dst, const std::vector<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// ---- raw matrix kernels; all row-major ----

// C(r,c) += A(r,k) . B(k,c)
template <typename T>
void mm_nn(const T* a, const T* b, T* c, int r, int k, int cc) {
  opcount::add_macs(static_cast<std::uint64_t>(r) * k * cc);
  for (int i = 0; i < r; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    T* crow = c + static_cast<std::size_t>(i) * cc;
    for (int t = 0; t < k; ++t) {
      const T av = arow[t];
      const T* brow = b + static_cast<std::size_t>(t) * cc;
      for (int j = 0; j < cc; ++j) crow[j] += av * brow[j];
    }
  }
}

// C(r,c) += A(r,k) . B(c,k)^T
template <typename T>
void mm_nt(const T* a, const T* b, T* c, int r, int k, int cc) {
  opcount::add_macs(static_cast<std::uint64_t>(r) * k * cc);
  for (int i = 0; i < r; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    T* crow = c + static_cast<std::size_t>(i) * cc;
    for (int j = 0; j < cc; ++j) {
      const T* brow = b + static_cast<std::size_t>(j) * k;
      T acc = 0;
      for (int t = 0; t < k; ++t) acc += arow[t] * brow[t];
      crow[j] += acc;
    }
  }
}

// C(r,c) += A(k,r)^T . B(k,c)
template <typename T>
void mm_tn(const T* a, const T* b, T* c, int r, int k, int cc) {
  opcount::add_macs(static_cast<std::uint64_t>(r) * k * cc);
  for (int t = 0; t < k; ++t) {
    const T* arow = a + static_cast<std::size_t>(t) * r;
    const T* brow = b + static_cast<std::size_t>(t) * cc;
    for (int i = 0; i < r; ++i) {
      const T av = arow[i];
      T* crow = c + static_cast<std::size_t>(i) * cc;
      for (int j = 0; j < cc; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

// ---- Tensor ----

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) {
  check_positive_extents(shape);
  if (numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  }
  node_ = make_node<T>(std::move(shape), std::move(values), {}, "leaf");
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  check_positive_extents(shape);
  std::vector<T> v(static_cast<std::size_t>(numel(shape)), value);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad) {
  check_positive_extents(shape);
  std::vector<T> v(static_cast<std::size_t>(numel(shape)));
  for (auto& e : v) e = static_cast<T>(rng.uniform(lo, hi));
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::gaussian(Shape shape, double mean, double stddev, Rng& rng,
                              bool requires_grad) {
  check_positive_extents(shape);
  std::vector<T> v(static_cast<std::size_t>(numel(shape)));
  for (auto& e : v) e = static_cast<T>(mean + stddev * rng.gaussian());
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_node(std::shared_ptr<detail::Node<T>> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw ContractError("item() requires a one-element tensor, got " + shape_str(shape()));
  return (*node_->values)[0];
}

template <typename T>
std::vector<T>& Tensor<T>::grad() {
  if (!node_->requires_grad) throw ContractError("grad() on a tensor that does not require grad");
  node_->ensure_grad();
  return node_->grad;
}

template <typename T>
const std::vector<T>& Tensor<T>::grad() const {
  if (node_->grad.empty()) throw ContractError("grad() before backward()");
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
std::size_t Tensor<T>::flat(int i, int j) const {
  const Shape& s = node_->shape;
  return static_cast<std::size_t>(i) * s[1] + j;
}

template <typename T>
std::size_t Tensor<T>::flat(int i, int j, int k) const {
  const Shape& s = node_->shape;
  return (static_cast<std::size_t>(i) * s[1] + j) * s[2] + k;
}

template <typename T>
std::size_t Tensor<T>::flat(int i, int j, int k, int l) const {
  const Shape& s = node_->shape;
  return ((static_cast<std::size_t>(i) * s[1] + j) * s[2] + k) * s[3] + l;
}

template <typename T>
void Tensor<T>::backward() {
  if (size() != 1) {
    throw ContractError("backward() requires a scalar output, got " + shape_str(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative DFS post-order over parents; each node enters `order` exactly
  // once, after all of its parents have been pushed deeper in the stack, so
  // reversing `order` replays consumers before producers.
  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> visited;
  struct Frame {
    detail::Node<T>* n;
    std::size_t next_parent;
  };
  std::vector<Frame> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.n->parents.size()) {
      detail::Node<T>* p = f.n->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  for (auto* n : order) n->ensure_grad();
  node_->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

// ---- elementwise ----

namespace {

enum class Broadcast { kNone, kLeftScalar, kRightScalar };

template <typename T>
Broadcast broadcast_kind(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (a.size() == 1) return Broadcast::kLeftScalar;
  if (b.size() == 1) return Broadcast::kRightScalar;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                       " and " + shape_str(b.shape()));
}

template <typename T, typename Fwd>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd,
                    std::function<void(detail::Node<T>&, detail::Node<T>&, detail::Node<T>&,
                                       Broadcast)> bwd) {
  const Broadcast bc = broadcast_kind(a, b, name);
  const Shape& out_shape = bc == Broadcast::kLeftScalar ? b.shape() : a.shape();
  const std::size_t n = static_cast<std::size_t>(numel(out_shape));
  std::vector<T> out(n);
  const T* pa = a.data();
  const T* pb = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    const T av = bc == Broadcast::kLeftScalar ? pa[0] : pa[i];
    const T bv = bc == Broadcast::kRightScalar ? pb[0] : pb[i];
    out[i] = fwd(av, bv);
  }
  auto node = make_node<T>(out_shape, std::move(out), {a.node(), b.node()}, name);
  if (node->requires_grad) {
    node->backward = [bc, bwd](detail::Node<T>& self) {
      bwd(self, *self.parents[0], *self.parents[1], bc);
    };
  }
  return Tensor<T>::from_node(node);
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      a, b, "add", [](T x, T y) { return x + y; },
      [](detail::Node<T>& self, detail::Node<T>& pa, detail::Node<T>& pb, Broadcast bc) {
        if (pa.requires_grad) {
          pa.ensure_grad();
          if (bc == Broadcast::kLeftScalar) {
            T acc = 0;
            for (T g : self.grad) acc += g;
            pa.grad[0] += acc;
          } else {
            add_into(pa.grad, self.grad);
          }
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          if (bc == Broadcast::kRightScalar) {
            T acc = 0;
            for (T g : self.grad) acc += g;
            pb.grad[0] += acc;
          } else {
            add_into(pb.grad, self.grad);
          }
        }
      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      a, b, "sub", [](T x, T y) { return x - y; },
      [](detail::Node<T>& self, detail::Node<T>& pa, detail::Node<T>& pb, Broadcast bc) {
        if (pa.requires_grad) {
          pa.ensure_grad();
          if (bc == Broadcast::kLeftScalar) {
            T acc = 0;
            for (T g : self.grad) acc += g;
            pa.grad[0] += acc;
          } else {
            add_into(pa.grad, self.grad);
          }
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          if (bc == Broadcast::kRightScalar) {
            T acc = 0;
            for (T g : self.grad) acc += g;
            pb.grad[0] -= acc;
          } else {
            for (std::size_t i = 0; i < pb.grad.size(); ++i) pb.grad[i] -= self.grad[i];
          }
        }
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      a, b, "mul", [](T x, T y) { return x * y; },
      [](detail::Node<T>& self, detail::Node<T>& pa, detail::Node<T>& pb, Broadcast bc) {
        const std::vector<T>& av = *pa.values;
        const std::vector<T>& bv = *pb.values;
        if (pa.requires_grad) {
          pa.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const T other = bc == Broadcast::kRightScalar ? bv[0] : bv[i];
            if (bc == Broadcast::kLeftScalar) {
              pa.grad[0] += self.grad[i] * other;
            } else {
              pa.grad[i] += self.grad[i] * other;
            }
          }
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const T other = bc == Broadcast::kLeftScalar ? av[0] : av[i];
            if (bc == Broadcast::kRightScalar) {
              pb.grad[0] += self.grad[i] * other;
            } else {
              pb.grad[i] += self.grad[i] * other;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  const std::size_t n = static_cast<std::size_t>(x.size());
  std::vector<T> out(n);
  const T* px = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = px[i] > T(0) ? px[i] : T(0);
  auto node = make_node<T>(x.shape(), std::move(out), {x.node()}, "relu");
  if (node->requires_grad) {
    node->backward = [](detail::Node<T>& self) {
      detail::Node<T>& p = *self.parents[0];
      p.ensure_grad();
      const std::vector<T>& xv = *p.values;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (xv[i] > T(0)) p.grad[i] += self.grad[i];
      }
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double c) {
  const T cv = static_cast<T>(c);
  const std::size_t n = static_cast<std::size_t>(x.size());
  std::vector<T> out(n);
  const T* px = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = px[i] * cv;
  auto node = make_node<T>(x.shape(), std::move(out), {x.node()}, "scale");
  if (node->requires_grad) {
    node->backward = [cv](detail::Node<T>& self) {
      detail::Node<T>& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * cv;
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.values()) acc += v;
  auto node = make_node<T>({1}, std::vector<T>{acc}, {x.node()}, "sum");
  if (node->requires_grad) {
    node->backward = [](detail::Node<T>& self) {
      detail::Node<T>& p = *self.parents[0];
      p.ensure_grad();
      const T g = self.grad[0];
      for (auto& e : p.grad) e += g;
    };
  }
  return Tensor<T>::from_node(node);
}

// ---- matrix products ----

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul expects two matrices, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const int r = a.dim(0), k = a.dim(1), c = b.dim(1);
  std::vector<T> out(static_cast<std::size_t>(r) * c, T(0));
  mm_nn(a.data(), b.data(), out.data(), r, k, c);
  auto node = make_node<T>({r, c}, std::move(out), {a.node(), b.node()}, "matmul");
  if (node->requires_grad) {
    node->backward = [r, k, c](detail::Node<T>& self) {
      detail::Node<T>& pa = *self.parents[0];
      detail::Node<T>& pb = *self.parents[1];
      if (pa.requires_grad) {
        pa.ensure_grad();
        mm_nt(self.grad.data(), pb.values->data(), pa.grad.data(), r, c, k);  // dA = dC.B^T
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        mm_tn(pa.values->data(), self.grad.data(), pb.grad.data(), k, r, c);  // dB = A^T.dC
      }
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw DimensionError("linear expects rank-2 or rank-3 input, got " + shape_str(x.shape()));
  }
  if (w.rank() != 2) throw DimensionError("linear weight must be a matrix, got " + shape_str(w.shape()));
  const int q = x.dim(x.rank() - 1);
  if (q != w.dim(0)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(w.shape()));
  }
  const int r = w.dim(1);
  const bool has_bias = b.defined();
  if (has_bias && (b.rank() != 1 || b.dim(0) != r)) {
    throw DimensionError("linear bias " + shape_str(b.shape()) + " does not match weight " +
                         shape_str(w.shape()));
  }
  const int batches = x.rank() == 3 ? x.dim(0) : 1;
  const int rows = x.rank() == 3 ? x.dim(1) : x.dim(0);
  Shape out_shape = x.rank() == 3 ? Shape{batches, rows, r} : Shape{rows, r};

  std::vector<T> out(static_cast<std::size_t>(batches) * rows * r, T(0));
  if (has_bias) {
    const T* pb = b.data();
    for (int i = 0; i < batches * rows; ++i) {
      std::copy(pb, pb + r, out.data() + static_cast<std::size_t>(i) * r);
    }
  }
  mm_nn(x.data(), w.data(), out.data(), batches * rows, q, r);

  std::vector<NodePtr<T>> parents{x.node(), w.node()};
  if (has_bias) parents.push_back(b.node());
  auto node = make_node<T>(std::move(out_shape), std::move(out), std::move(parents), "linear");
  if (node->requires_grad) {
    const int flat_rows = batches * rows;
    node->backward = [flat_rows, q, r, has_bias](detail::Node<T>& self) {
      detail::Node<T>& px = *self.parents[0];
      detail::Node<T>& pw = *self.parents[1];
      if (px.requires_grad) {
        px.ensure_grad();
        mm_nt(self.grad.data(), pw.values->data(), px.grad.data(), flat_rows, r, q);
      }
      if (pw.requires_grad) {
        pw.ensure_grad();
        mm_tn(px.values->data(), self.grad.data(), pw.grad.data(), q, flat_rows, r);
      }
      if (has_bias) {
        detail::Node<T>& pbn = *self.parents[2];
        if (pbn.requires_grad) {
          pbn.ensure_grad();
          for (int i = 0; i < flat_rows; ++i) {
            const T* g = self.grad.data() + static_cast<std::size_t>(i) * r;
            for (int j = 0; j < r; ++j) pbn.grad[j] += g[j];
          }
        }
      }
    };
  }
  return Tensor<T>::from_node(node);
}

namespace {

template <typename T>
void check_bmm(const Tensor<T>& a, const Tensor<T>& b, const char* name, int a_inner, int b_inner) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(a_inner) != b.dim(b_inner)) {
    throw DimensionError(std::string(name) + ": incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  check_bmm(a, b, "bmm", 2, 1);
  const int n = a.dim(0), p = a.dim(1), q = a.dim(2), r = b.dim(2);
  std::vector<T> out(static_cast<std::size_t>(n) * p * r, T(0));
  for (int i = 0; i < n; ++i) {
    mm_nn(a.data() + static_cast<std::size_t>(i) * p * q,
          b.data() + static_cast<std::size_t>(i) * q * r,
          out.data() + static_cast<std::size_t>(i) * p * r, p, q, r);
  }
  auto node = make_node<T>({n, p, r}, std::move(out), {a.node(), b.node()}, "bmm");
  if (node->requires_grad) {
    node->backward = [n, p, q, r](detail::Node<T>& self) {
      detail::Node<T>& pa = *self.parents[0];
      detail::Node<T>& pb = *self.parents[1];
      for (int i = 0; i < n; ++i) {
        const T* g = self.grad.data() + static_cast<std::size_t>(i) * p * r;
        if (pa.requires_grad) {
          pa.ensure_grad();
          mm_nt(g, pb.values->data() + static_cast<std::size_t>(i) * q * r,
                pa.grad.data() + static_cast<std::size_t>(i) * p * q, p, r, q);
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          mm_tn(pa.values->data() + static_cast<std::size_t>(i) * p * q, g,
                pb.grad.data() + static_cast<std::size_t>(i) * q * r, q, p, r);
        }
      }
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> bmm_nt(const Tensor<T>& a, const Tensor<T>& b) {
  check_bmm(a, b, "bmm_nt", 2, 2);
  const int n = a.dim(0), p = a.dim(1), q = a.dim(2), r = b.dim(1);
  std::vector<T> out(static_cast<std::size_t>(n) * p * r, T(0));
  for (int i = 0; i < n; ++i) {
    mm_nt(a.data() + static_cast<std::size_t>(i) * p * q,
          b.data() + static_cast<std::size_t>(i) * r * q,
          out.data() + static_cast<std::size_t>(i) * p * r, p, q, r);
  }
  auto node = make_node<T>({n, p, r}, std::move(out), {a.node(), b.node()}, "bmm_nt");
  if (node->requires_grad) {
    node->backward = [n, p, q, r](detail::Node<T>& self) {
      detail::Node<T>& pa = *self.parents[0];
      detail::Node<T>& pb = *self.parents[1];
      for (int i = 0; i < n; ++i) {
        const T* g = self.grad.data() + static_cast<std::size_t>(i) * p * r;
        if (pa.requires_grad) {
          pa.ensure_grad();
          // dA = dC . B
          mm_nn(g, pb.values->data() + static_cast<std::size_t>(i) * r * q,
                pa.grad.data() + static_cast<std::size_t>(i) * p * q, p, r, q);
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          // dB = dC^T . A
          mm_tn(g, pa.values->data() + static_cast<std::size_t>(i) * p * q,
                pb.grad.data() + static_cast<std::size_t>(i) * r * q, r, p, q);
        }
      }
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> bmm_tn(const Tensor<T>& a, const Tensor<T>& b) {
  check_bmm(a, b, "bmm_tn", 1, 1);
  const int n = a.dim(0), q = a.dim(1), p = a.dim(2), r = b.dim(2);
  std::vector<T> out(static_cast<std::size_t>(n) * p * r, T(0));
  for (int i = 0; i < n; ++i) {
    mm_tn(a.data() + static_cast<std::size_t>(i) * q * p,
          b.data() + static_cast<std::size_t>(i) * q * r,
          out.data() + static_cast<std::size_t>(i) * p * r, p, q, r);
  }
  auto node = make_node<T>({n, p, r}, std::move(out), {a.node(), b.node()}, "bmm_tn");
  if (node->requires_grad) {
    node->backward = [n, p, q, r](detail::Node<T>& self) {
      detail::Node<T>& pa = *self.parents[0];
      detail::Node<T>& pb = *self.parents[1];
      for (int i = 0; i < n; ++i) {
        const T* g = self.grad.data() + static_cast<std::size_t>(i) * p * r;
        if (pa.requires_grad) {
          pa.ensure_grad();
          // dA = B . dC^T
          mm_nt(pb.values->data() + static_cast<std::size_t>(i) * q * r, g,
                pa.grad.data() + static_cast<std::size_t>(i) * q * p, q, r, p);
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          // dB = A . dC
          mm_nn(pa.values->data() + static_cast<std::size_t>(i) * q * p, g,
                pb.grad.data() + static_cast<std::size_t>(i) * q * r, q, p, r);
        }
      }
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2) throw DimensionError("transpose expects a matrix, got " + shape_str(x.shape()));
  const int r = x.dim(0), c = x.dim(1);
  std::vector<T> out(static_cast<std::size_t>(r) * c);
  const T* px = x.data();
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j) * r + i] = px[static_cast<std::size_t>(i) * c + j];
  }
  auto node = make_node<T>({c, r}, std::move(out), {x.node()}, "transpose");
  if (node->requires_grad) {
    node->backward = [r, c](detail::Node<T>& self) {
      detail::Node<T>& p = *self.parents[0];
      p.ensure_grad();
      for (int j = 0; j < c; ++j) {
        for (int i = 0; i < r; ++i) {
          p.grad[static_cast<std::size_t>(i) * c + j] += self.grad[static_cast<std::size_t>(j) * r + i];
        }
      }
    };
  }
  return Tensor<T>::from_node(node);
}

// ---- shape ops ----

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  check_positive_extents(shape);
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->values = x.node()->values;  // contiguous row-major: share the buffer
  node->parents = {x.node()};
  node->op = "reshape";
  node->requires_grad = x.requires_grad();
  if (node->requires_grad) {
    node->backward = [](detail::Node<T>& self) {
      detail::Node<T>& p = *self.parents[0];
      p.ensure_grad();
      add_into(p.grad, self.grad);
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw ContractError("concat of zero tensors");
  const int rank = xs[0].rank();
  if (axis < 0 || axis >= rank) throw ContractError("concat: axis out of range");
  Shape out_shape = xs[0].shape();
  int total_axis = 0;
  for (const auto& x : xs) {
    if (x.rank() != rank) throw DimensionError("concat: rank mismatch");
    for (int d = 0; d < rank; ++d) {
      if (d != axis && x.dim(d) != out_shape[static_cast<std::size_t>(d)]) {
        throw DimensionError("concat: incompatible shapes " + shape_str(out_shape) + " and " +
                             shape_str(x.shape()));
      }
    }
    total_axis += x.dim(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = total_axis;

  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[static_cast<std::size_t>(d)];
  for (int d = axis + 1; d < rank; ++d) inner *= out_shape[static_cast<std::size_t>(d)];

  std::vector<T> out(static_cast<std::size_t>(numel(out_shape)));
  std::vector<NodePtr<T>> parents;
  std::vector<std::int64_t> blocks;  // per-input block length along axis*inner
  std::int64_t offset = 0;
  for (const auto& x : xs) {
    const std::int64_t block = static_cast<std::int64_t>(x.dim(axis)) * inner;
    const T* px = x.data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy(px + o * block, px + (o + 1) * block,
                out.data() + o * (static_cast<std::int64_t>(total_axis) * inner) + offset);
    }
    parents.push_back(x.node());
    blocks.push_back(block);
    offset += block;
  }
  auto node = make_node<T>(out_shape, std::move(out), std::move(parents), "concat");
  if (node->requires_grad) {
    const std::int64_t row = static_cast<std::int64_t>(total_axis) * inner;
    node->backward = [outer, row, blocks](detail::Node<T>& self) {
      std::int64_t off = 0;
      for (std::size_t idx = 0; idx < self.parents.size(); ++idx) {
        detail::Node<T>& p = *self.parents[idx];
        const std::int64_t block = blocks[idx];
        if (p.requires_grad) {
          p.ensure_grad();
          for (std::int64_t o = 0; o < outer; ++o) {
            const T* g = self.grad.data() + o * row + off;
            T* dst = p.grad.data() + o * block;
            for (std::int64_t i = 0; i < block; ++i) dst[i] += g[i];
          }
        }
        off += block;
      }
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> flatten_rows(const Tensor<T>& x) {
  if (x.rank() != 4) {
    throw DimensionError("flatten_rows expects (N,C,H,W), got " + shape_str(x.shape()));
  }
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int pixels = h * w;
  std::vector<T> out(static_cast<std::size_t>(n) * pixels * c);
  const T* px = x.data();
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const T* plane = px + (static_cast<std::size_t>(b) * c + ch) * pixels;
      T* dst = out.data() + static_cast<std::size_t>(b) * pixels * c + ch;
      for (int p = 0; p < pixels; ++p) dst[static_cast<std::size_t>(p) * c] = plane[p];
    }
  }
  auto node = make_node<T>({n, pixels, c}, std::move(out), {x.node()}, "flatten_rows");
  if (node->requires_grad) {
    node->backward = [n, c, pixels](detail::Node<T>& self) {
      detail::Node<T>& p = *self.parents[0];
      p.ensure_grad();
      for (int b = 0; b < n; ++b) {
        for (int ch = 0; ch < c; ++ch) {
          T* plane = p.grad.data() + (static_cast<std::size_t>(b) * c + ch) * pixels;
          const T* g = self.grad.data() + static_cast<std::size_t>(b) * pixels * c + ch;
          for (int px_i = 0; px_i < pixels; ++px_i) plane[px_i] += g[static_cast<std::size_t>(px_i) * c];
        }
      }
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> unflatten_rows(const Tensor<T>& x, int height, int width) {
  if (x.rank() != 3 || x.dim(1) != height * width) {
    throw DimensionError("unflatten_rows: cannot view " + shape_str(x.shape()) + " as spatial " +
                         std::to_string(height) + "x" + std::to_string(width));
  }
  const int n = x.dim(0), pixels = x.dim(1), c = x.dim(2);
  std::vector<T> out(static_cast<std::size_t>(n) * c * pixels);
  const T* px = x.data();
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      T* plane = out.data() + (static_cast<std::size_t>(b) * c + ch) * pixels;
      const T* src = px + static_cast<std::size_t>(b) * pixels * c + ch;
      for (int p = 0; p < pixels; ++p) plane[p] = src[static_cast<std::size_t>(p) * c];
    }
  }
  auto node = make_node<T>({n, c, height, width}, std::move(out), {x.node()}, "unflatten_rows");
  if (node->requires_grad) {
    node->backward = [n, c, pixels](detail::Node<T>& self) {
      detail::Node<T>& p = *self.parents[0];
      p.ensure_grad();
      for (int b = 0; b < n; ++b) {
        for (int ch = 0; ch < c; ++ch) {
          const T* plane = self.grad.data() + (static_cast<std::size_t>(b) * c + ch) * pixels;
          T* dst = p.grad.data() + static_cast<std::size_t>(b) * pixels * c + ch;
          for (int px_i = 0; px_i < pixels; ++px_i) dst[static_cast<std::size_t>(px_i) * c] += plane[px_i];
        }
      }
    };
  }
  return Tensor<T>::from_node(node);
}

// ---- softmax ----

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  if (axis < 0 || axis >= x.rank()) {
    throw ContractError("softmax: axis " + std::to_string(axis) + " out of range for " +
                        shape_str(x.shape()));
  }
  for (T v : x.values()) {
    if (!std::isfinite(static_cast<double>(v))) throw NumericError("softmax: non-finite input");
  }
  const int len = x.dim(axis);
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.dim(d);
  for (int d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);

  std::vector<T> out(static_cast<std::size_t>(x.size()));
  const T* px = x.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * len * inner + in;
      T mx = px[base];
      for (int i = 1; i < len; ++i) mx = std::max(mx, px[base + i * inner]);
      T denom = 0;
      for (int i = 0; i < len; ++i) {
        const T e = std::exp(px[base + i * inner] - mx);
        out[static_cast<std::size_t>(base + i * inner)] = e;
        denom += e;
      }
      for (int i = 0; i < len; ++i) out[static_cast<std::size_t>(base + i * inner)] /= denom;
    }
  }
  auto node = make_node<T>(x.shape(), std::move(out), {x.node()}, "softmax");
  if (node->requires_grad) {
    node->backward = [len, outer, inner](detail::Node<T>& self) {
      detail::Node<T>& p = *self.parents[0];
      p.ensure_grad();
      const std::vector<T>& y = *self.values;
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
          const std::int64_t base = o * len * inner + in;
          T dot = 0;
          for (int i = 0; i < len; ++i) {
            const std::size_t ix = static_cast<std::size_t>(base + i * inner);
            dot += self.grad[ix] * y[ix];
          }
          for (int i = 0; i < len; ++i) {
            const std::size_t ix = static_cast<std::size_t>(base + i * inner);
            p.grad[ix] += y[ix] * (self.grad[ix] - dot);
          }
        }
      }
    };
  }
  return Tensor<T>::from_node(node);
}

// ---- dropout ----

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ContractError("dropout rate must be in [0,1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  const std::size_t n = static_cast<std::size_t>(x.size());
  std::vector<T> mask(n);
  for (auto& m : mask) m = rng.uniform() < rate ? T(0) : keep_scale;
  std::vector<T> out(n);
  const T* px = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = px[i] * mask[i];
  auto node = make_node<T>(x.shape(), std::move(out), {x.node()}, "dropout");
  if (node->requires_grad) {
    node->backward = [mask = std::move(mask)](detail::Node<T>& self) {
      detail::Node<T>& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * mask[i];
    };
  }
  return Tensor<T>::from_node(node);
}

// ---- explicit instantiations ----

#define XVT_INSTANTIATE_TENSOR(T)                                                  \
  template class Tensor<T>;                                                        \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> relu(const Tensor<T>&);                                       \
  template Tensor<T> scale(const Tensor<T>&, double);                              \
  template Tensor<T> sum(const Tensor<T>&);                                        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> bmm_nt(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> bmm_tn(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> transpose(const Tensor<T>&);                                  \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                             \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                   \
  template Tensor<T> flatten_rows(const Tensor<T>&);                               \
  template Tensor<T> unflatten_rows(const Tensor<T>&, int, int);                   \
  template Tensor<T> softmax(const Tensor<T>&, int);                               \
  template Tensor<T> dropout(const Tensor<T>&, double, bool, Rng&);

XVT_INSTANTIATE_TENSOR(float)
XVT_INSTANTIATE_TENSOR(double)

#undef XVT_INSTANTIATE_TENSOR

}  // namespace xvt
