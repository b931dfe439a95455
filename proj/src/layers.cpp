#include "xvt/layers.hpp"

#include <algorithm>
#include <cmath>

#include "xvt/opcount.hpp"

namespace xvt {

namespace {

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

int conv_extent(int in, int pad, int kernel, int stride) {
  return (in + 2 * pad - kernel) / stride + 1;
}

}  // namespace

int scaled_width(int base, double mult) {
  return std::max(1, static_cast<int>(std::lround(base * mult)));
}

template <typename T>
Conv2dParams<T> make_conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, bool bias,
                            Rng& rng) {
  Conv2dParams<T> p;
  const double fan_in = static_cast<double>(in_ch) * kernel * kernel;
  const double bound = std::sqrt(6.0 / fan_in);
  p.weight = Tensor<T>::uniform({out_ch, in_ch, kernel, kernel}, -bound, bound, rng, true);
  if (bias) p.bias = Tensor<T>::zeros({out_ch}, true);
  p.stride_y = p.stride_x = stride;
  p.pad_y = p.pad_x = pad;
  return p;
}

template <typename T>
NormParams<T> make_batch_norm(int channels) {
  NormParams<T> p;
  p.mode = NormMode::kBatchNorm;
  p.gamma = Tensor<T>::full({channels}, T(1), true);
  p.beta = Tensor<T>::zeros({channels}, true);
  p.running_mean = Tensor<T>::zeros({channels});
  p.running_var = Tensor<T>::full({channels}, T(1));
  return p;
}

template <typename T>
NormParams<T> make_layer_norm(int channels) {
  NormParams<T> p;
  p.mode = NormMode::kLayerNorm;
  p.gamma = Tensor<T>::full({channels}, T(1), true);
  p.beta = Tensor<T>::zeros({channels}, true);
  return p;
}

// ---- conv2d ----

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Conv2dParams<T>& params) {
  if (input.rank() != 4) {
    throw DimensionError("conv2d expects (N,C,H,W), got " + shape_str(input.shape()));
  }
  if (input.dim(1) != params.in_channels()) {
    throw DimensionError("conv2d: input channels " + shape_str(input.shape()) +
                         " do not match weight " + shape_str(params.weight.shape()));
  }
  const int n = input.dim(0), ic = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int oc = params.out_channels();
  const int kh = params.weight.dim(2), kw = params.weight.dim(3);
  const int sy = params.stride_y, sx = params.stride_x;
  const int py = params.pad_y, px = params.pad_x;
  const int oh = conv_extent(h, py, kh, sy);
  const int ow = conv_extent(w, px, kw, sx);
  if (oh <= 0 || ow <= 0) {
    throw DimensionError("conv2d: kernel " + shape_str(params.weight.shape()) +
                         " does not fit input " + shape_str(input.shape()));
  }
  const bool has_bias = params.bias.defined();
  opcount::add_macs(static_cast<std::uint64_t>(n) * oc * ic * kh * kw * oh * ow);

  std::vector<T> out(static_cast<std::size_t>(n) * oc * oh * ow, T(0));
  const T* xin = input.data();
  const T* wt = params.weight.data();
  for (int b = 0; b < n; ++b) {
    for (int o = 0; o < oc; ++o) {
      T* oplane = out.data() + (static_cast<std::size_t>(b) * oc + o) * oh * ow;
      if (has_bias) {
        const T bv = params.bias.at(o);
        std::fill(oplane, oplane + static_cast<std::size_t>(oh) * ow, bv);
      }
      for (int c = 0; c < ic; ++c) {
        const T* iplane = xin + (static_cast<std::size_t>(b) * ic + c) * h * w;
        const T* kplane = wt + (static_cast<std::size_t>(o) * ic + c) * kh * kw;
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const T wv = kplane[ky * kw + kx];
            const int ax = px - kx;
            const int olo = ax <= 0 ? 0 : (ax + sx - 1) / sx;
            const int bx = w - 1 - kx + px;
            const int ohi = bx < 0 ? -1 : std::min(ow - 1, bx / sx);
            for (int y = 0; y < oh; ++y) {
              const int iy = y * sy + ky - py;
              if (iy < 0 || iy >= h) continue;
              const T* irow = iplane + static_cast<std::size_t>(iy) * w;
              T* orow = oplane + static_cast<std::size_t>(y) * ow;
              for (int x = olo; x <= ohi; ++x) orow[x] += wv * irow[x * sx + kx - px];
            }
          }
        }
      }
    }
  }

  std::vector<NodePtr<T>> parents{input.node(), params.weight.node()};
  if (has_bias) parents.push_back(params.bias.node());
  auto node = make_node<T>({n, oc, oh, ow}, std::move(out), std::move(parents), "conv2d");
  if (node->requires_grad) {
    node->backward = [n, ic, h, w, oc, kh, kw, sy, sx, py, px, oh, ow,
                      has_bias](detail::Node<T>& self) {
      detail::Node<T>& pin = *self.parents[0];
      detail::Node<T>& pw = *self.parents[1];
      const T* g = self.grad.data();
      if (pin.requires_grad) {
        pin.ensure_grad();
        const T* wt = pw.values->data();
        for (int b = 0; b < n; ++b) {
          for (int o = 0; o < oc; ++o) {
            const T* gplane = g + (static_cast<std::size_t>(b) * oc + o) * oh * ow;
            for (int c = 0; c < ic; ++c) {
              T* dplane = pin.grad.data() + (static_cast<std::size_t>(b) * ic + c) * h * w;
              const T* kplane = wt + (static_cast<std::size_t>(o) * ic + c) * kh * kw;
              for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                  const T wv = kplane[ky * kw + kx];
                  const int ax = px - kx;
                  const int olo = ax <= 0 ? 0 : (ax + sx - 1) / sx;
                  const int bx = w - 1 - kx + px;
                  const int ohi = bx < 0 ? -1 : std::min(ow - 1, bx / sx);
                  for (int y = 0; y < oh; ++y) {
                    const int iy = y * sy + ky - py;
                    if (iy < 0 || iy >= h) continue;
                    T* drow = dplane + static_cast<std::size_t>(iy) * w;
                    const T* grow = gplane + static_cast<std::size_t>(y) * ow;
                    for (int x = olo; x <= ohi; ++x) drow[x * sx + kx - px] += wv * grow[x];
                  }
                }
              }
            }
          }
        }
      }
      if (pw.requires_grad) {
        pw.ensure_grad();
        const T* xin = pin.values->data();
        for (int b = 0; b < n; ++b) {
          for (int o = 0; o < oc; ++o) {
            const T* gplane = g + (static_cast<std::size_t>(b) * oc + o) * oh * ow;
            for (int c = 0; c < ic; ++c) {
              const T* iplane = xin + (static_cast<std::size_t>(b) * ic + c) * h * w;
              T* kplane = pw.grad.data() + (static_cast<std::size_t>(o) * ic + c) * kh * kw;
              for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                  const int ax = px - kx;
                  const int olo = ax <= 0 ? 0 : (ax + sx - 1) / sx;
                  const int bx = w - 1 - kx + px;
                  const int ohi = bx < 0 ? -1 : std::min(ow - 1, bx / sx);
                  T acc = 0;
                  for (int y = 0; y < oh; ++y) {
                    const int iy = y * sy + ky - py;
                    if (iy < 0 || iy >= h) continue;
                    const T* irow = iplane + static_cast<std::size_t>(iy) * w;
                    const T* grow = gplane + static_cast<std::size_t>(y) * ow;
                    for (int x = olo; x <= ohi; ++x) acc += irow[x * sx + kx - px] * grow[x];
                  }
                  kplane[ky * kw + kx] += acc;
                }
              }
            }
          }
        }
      }
      if (has_bias) {
        detail::Node<T>& pb = *self.parents[2];
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (int b = 0; b < n; ++b) {
            for (int o = 0; o < oc; ++o) {
              const T* gplane = g + (static_cast<std::size_t>(b) * oc + o) * oh * ow;
              T acc = 0;
              for (int i = 0; i < oh * ow; ++i) acc += gplane[i];
              pb.grad[o] += acc;
            }
          }
        }
      }
    };
  }
  return Tensor<T>::from_node(node);
}

// ---- batch norm ----

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, NormParams<T>& params, bool training) {
  if (params.mode != NormMode::kBatchNorm) throw ContractError("batch_norm: params are not batch-norm");
  if (input.rank() != 4) {
    throw DimensionError("batch_norm expects (N,C,H,W), got " + shape_str(input.shape()));
  }
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (c != params.gamma.dim(0)) {
    throw DimensionError("batch_norm: channel count " + shape_str(input.shape()) +
                         " does not match params " + shape_str(params.gamma.shape()));
  }
  if (training && n < 2) {
    throw ContractError("batch_norm: training requires a batch of at least 2 samples");
  }
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t group = static_cast<std::int64_t>(n) * plane;
  const double eps = params.eps;

  std::vector<double> mean(c), inv_std(c);
  if (training) {
    for (int ch = 0; ch < c; ++ch) {
      double m = 0;
      for (int b = 0; b < n; ++b) {
        const T* p = input.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
        for (std::int64_t i = 0; i < plane; ++i) m += p[i];
      }
      m /= static_cast<double>(group);
      double var = 0;
      for (int b = 0; b < n; ++b) {
        const T* p = input.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const double d = p[i] - m;
          var += d * d;
        }
      }
      var /= static_cast<double>(group);
      mean[ch] = m;
      inv_std[ch] = 1.0 / std::sqrt(var + eps);
      // running stats track the unbiased variance
      const double unbiased = group > 1 ? var * static_cast<double>(group) / (group - 1) : var;
      params.running_mean.at(ch) = static_cast<T>((1.0 - params.momentum) *
                                                      params.running_mean.at(ch) +
                                                  params.momentum * m);
      params.running_var.at(ch) = static_cast<T>((1.0 - params.momentum) *
                                                     params.running_var.at(ch) +
                                                 params.momentum * unbiased);
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mean[ch] = params.running_mean.at(ch);
      inv_std[ch] = 1.0 / std::sqrt(static_cast<double>(params.running_var.at(ch)) + eps);
    }
  }

  std::vector<T> xhat(static_cast<std::size_t>(input.size()));
  std::vector<T> out(static_cast<std::size_t>(input.size()));
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const T* p = input.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
      const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * plane;
      const T g = params.gamma.at(ch), be = params.beta.at(ch);
      for (std::int64_t i = 0; i < plane; ++i) {
        const T xh = static_cast<T>((p[i] - mean[ch]) * inv_std[ch]);
        xhat[base + i] = xh;
        out[base + i] = g * xh + be;
      }
    }
  }

  auto node = make_node<T>(input.shape(), std::move(out),
                           {input.node(), params.gamma.node(), params.beta.node()}, "batch_norm");
  if (node->requires_grad) {
    node->backward = [n, c, plane, group, inv_std, xhat = std::move(xhat),
                      training](detail::Node<T>& self) {
      detail::Node<T>& px = *self.parents[0];
      detail::Node<T>& pg = *self.parents[1];
      detail::Node<T>& pb = *self.parents[2];
      const std::vector<T>& gamma = *pg.values;
      for (int ch = 0; ch < c; ++ch) {
        double sum_dy = 0, sum_dy_xhat = 0;
        for (int b = 0; b < n; ++b) {
          const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            sum_dy += self.grad[base + i];
            sum_dy_xhat += static_cast<double>(self.grad[base + i]) * xhat[base + i];
          }
        }
        if (pg.requires_grad) {
          pg.ensure_grad();
          pg.grad[ch] += static_cast<T>(sum_dy_xhat);
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          pb.grad[ch] += static_cast<T>(sum_dy);
        }
        if (px.requires_grad) {
          px.ensure_grad();
          const double gs = static_cast<double>(gamma[ch]) * inv_std[ch];
          const double mean_dy = sum_dy / static_cast<double>(group);
          const double mean_dy_xhat = sum_dy_xhat / static_cast<double>(group);
          for (int b = 0; b < n; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              const double dy = self.grad[base + i];
              if (training) {
                px.grad[base + i] +=
                    static_cast<T>(gs * (dy - mean_dy - xhat[base + i] * mean_dy_xhat));
              } else {
                px.grad[base + i] += static_cast<T>(gs * dy);
              }
            }
          }
        }
      }
    };
  }
  return Tensor<T>::from_node(node);
}

// ---- layer norm ----

template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const NormParams<T>& params) {
  if (params.mode != NormMode::kLayerNorm) throw ContractError("layer_norm: params are not layer-norm");
  if (x.rank() != 2 && x.rank() != 3) {
    throw DimensionError("layer_norm_rows expects rank-2 or rank-3 input, got " +
                         shape_str(x.shape()));
  }
  const int f = x.dim(x.rank() - 1);
  if (f != params.gamma.dim(0)) {
    throw DimensionError("layer_norm: feature count " + shape_str(x.shape()) +
                         " does not match params " + shape_str(params.gamma.shape()));
  }
  const std::int64_t rows = x.size() / f;
  const double eps = params.eps;

  std::vector<T> xhat(static_cast<std::size_t>(x.size()));
  std::vector<double> inv_std(static_cast<std::size_t>(rows));
  std::vector<T> out(static_cast<std::size_t>(x.size()));
  const T* px = x.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = px + r * f;
    double m = 0;
    for (int i = 0; i < f; ++i) m += row[i];
    m /= f;
    double var = 0;
    for (int i = 0; i < f; ++i) {
      const double d = row[i] - m;
      var += d * d;
    }
    var /= f;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = is;
    for (int i = 0; i < f; ++i) {
      const T xh = static_cast<T>((row[i] - m) * is);
      xhat[static_cast<std::size_t>(r * f + i)] = xh;
      out[static_cast<std::size_t>(r * f + i)] =
          params.gamma.at(i) * xh + params.beta.at(i);
    }
  }

  auto node = make_node<T>(x.shape(), std::move(out),
                           {x.node(), params.gamma.node(), params.beta.node()}, "layer_norm");
  if (node->requires_grad) {
    node->backward = [rows, f, inv_std = std::move(inv_std),
                      xhat = std::move(xhat)](detail::Node<T>& self) {
      detail::Node<T>& px2 = *self.parents[0];
      detail::Node<T>& pg = *self.parents[1];
      detail::Node<T>& pb = *self.parents[2];
      const std::vector<T>& gamma = *pg.values;
      if (pg.requires_grad) pg.ensure_grad();
      if (pb.requires_grad) pb.ensure_grad();
      if (px2.requires_grad) px2.ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const std::size_t base = static_cast<std::size_t>(r * f);
        double mean_dyh = 0, mean_dyh_xhat = 0;
        for (int i = 0; i < f; ++i) {
          const double dyh = static_cast<double>(self.grad[base + i]) * gamma[static_cast<std::size_t>(i)];
          mean_dyh += dyh;
          mean_dyh_xhat += dyh * xhat[base + i];
        }
        mean_dyh /= f;
        mean_dyh_xhat /= f;
        for (int i = 0; i < f; ++i) {
          const double dy = self.grad[base + i];
          if (pg.requires_grad) pg.grad[static_cast<std::size_t>(i)] += static_cast<T>(dy * xhat[base + i]);
          if (pb.requires_grad) pb.grad[static_cast<std::size_t>(i)] += static_cast<T>(dy);
          if (px2.requires_grad) {
            const double dyh = dy * gamma[static_cast<std::size_t>(i)];
            px2.grad[base + i] += static_cast<T>(
                inv_std[static_cast<std::size_t>(r)] *
                (dyh - mean_dyh - xhat[base + i] * mean_dyh_xhat));
          }
        }
      }
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& input, const NormParams<T>& params) {
  if (input.rank() != 4) {
    throw DimensionError("layer_norm expects (N,C,H,W), got " + shape_str(input.shape()));
  }
  const int h = input.dim(2), w = input.dim(3);
  return unflatten_rows(layer_norm_rows(flatten_rows(input), params), h, w);
}

// ---- pooling ----

template <typename T>
Tensor<T> max_pool_3x3_s2(const Tensor<T>& input) {
  if (input.rank() != 4) {
    throw DimensionError("max_pool expects (N,C,H,W), got " + shape_str(input.shape()));
  }
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h < 3 || w < 3) {
    throw ContractError("max_pool: spatial dims must be at least the 3x3 kernel, got " +
                        shape_str(input.shape()));
  }
  const int oh = conv_extent(h, 1, 3, 2), ow = conv_extent(w, 1, 3, 2);
  std::vector<T> out(static_cast<std::size_t>(n) * c * oh * ow);
  std::vector<std::int32_t> argmax(out.size());
  const T* px = input.data();
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const T* plane = px + (static_cast<std::size_t>(b) * c + ch) * h * w;
      const std::size_t obase = (static_cast<std::size_t>(b) * c + ch) * oh * ow;
      for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
          T best = 0;
          int best_ix = -1;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = y * 2 + ky - 1;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = x * 2 + kx - 1;
              if (ix < 0 || ix >= w) continue;
              const T v = plane[iy * w + ix];
              if (best_ix < 0 || v > best) {
                best = v;
                best_ix = iy * w + ix;
              }
            }
          }
          out[obase + static_cast<std::size_t>(y) * ow + x] = best;
          argmax[obase + static_cast<std::size_t>(y) * ow + x] = best_ix;
        }
      }
    }
  }
  auto node = make_node<T>({n, c, oh, ow}, std::move(out), {input.node()}, "max_pool");
  if (node->requires_grad) {
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const std::int64_t oplane = static_cast<std::int64_t>(oh) * ow;
    node->backward = [n, c, plane, oplane, argmax = std::move(argmax)](detail::Node<T>& self) {
      detail::Node<T>& p = *self.parents[0];
      p.ensure_grad();
      for (std::int64_t pc = 0; pc < static_cast<std::int64_t>(n) * c; ++pc) {
        T* dplane = p.grad.data() + pc * plane;
        const std::size_t obase = static_cast<std::size_t>(pc * oplane);
        for (std::int64_t i = 0; i < oplane; ++i) {
          dplane[argmax[obase + i]] += self.grad[obase + i];
        }
      }
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  if (input.rank() != 4) {
    throw DimensionError("global_avg_pool expects (N,C,H,W), got " + shape_str(input.shape()));
  }
  const int n = input.dim(0), c = input.dim(1);
  const std::int64_t plane = static_cast<std::int64_t>(input.dim(2)) * input.dim(3);
  std::vector<T> out(static_cast<std::size_t>(n) * c);
  const T* px = input.data();
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const T* p = px + (static_cast<std::size_t>(b) * c + ch) * plane;
      double acc = 0;
      for (std::int64_t i = 0; i < plane; ++i) acc += p[i];
      out[static_cast<std::size_t>(b) * c + ch] = static_cast<T>(acc / static_cast<double>(plane));
    }
  }
  auto node = make_node<T>({n, c}, std::move(out), {input.node()}, "global_avg_pool");
  if (node->requires_grad) {
    node->backward = [n, c, plane](detail::Node<T>& self) {
      detail::Node<T>& p = *self.parents[0];
      p.ensure_grad();
      const T inv = static_cast<T>(1.0 / static_cast<double>(plane));
      for (std::int64_t pc = 0; pc < static_cast<std::int64_t>(n) * c; ++pc) {
        const T g = self.grad[static_cast<std::size_t>(pc)] * inv;
        T* dplane = p.grad.data() + pc * plane;
        for (std::int64_t i = 0; i < plane; ++i) dplane[i] += g;
      }
    };
  }
  return Tensor<T>::from_node(node);
}

// ---- residual block / backbone ----

template <typename T>
Tensor<T> ResnetBlock<T>::forward(const Tensor<T>& x, bool training) {
  Tensor<T> h = conv2d(x, conv1);
  h = batch_norm(h, bn1, training);
  h = relu(h);
  h = conv2d(h, conv2);
  h = batch_norm(h, bn2, training);
  Tensor<T> sc = shortcut ? conv2d(x, *shortcut) : x;
  return relu(add(h, sc));
}

template <typename T>
ResnetBlock<T> make_resnet_block(int in_ch, int out_ch, int stride, Rng& rng) {
  ResnetBlock<T> b;
  b.conv1 = make_conv2d<T>(in_ch, out_ch, 3, stride, 1, false, rng);
  b.bn1 = make_batch_norm<T>(out_ch);
  b.conv2 = make_conv2d<T>(out_ch, out_ch, 3, 1, 1, false, rng);
  b.bn2 = make_batch_norm<T>(out_ch);
  if (in_ch != out_ch || stride != 1) {
    b.shortcut = make_conv2d<T>(in_ch, out_ch, 1, stride, 0, false, rng);
  }
  return b;
}

template <typename T>
Tensor<T> Backbone<T>::stem(const Tensor<T>& x, bool training) {
  Tensor<T> h = conv2d(x, conv1);
  h = batch_norm(h, bn1, training);
  h = relu(h);
  return max_pool_3x3_s2(h);
}

template <typename T>
Tensor<T> Backbone<T>::block(int index, const Tensor<T>& x, bool training) {
  return blocks[static_cast<std::size_t>(index - 1)].forward(x, training);
}

template <typename T>
Tensor<T> Backbone<T>::forward_through(const Tensor<T>& x, int upto, bool training) {
  Tensor<T> h = stem(x, training);
  for (int k = 1; k <= upto; ++k) h = block(k, h, training);
  return h;
}

template <typename T>
int Backbone<T>::out_channels_after(int block_index) const {
  return blocks[static_cast<std::size_t>(block_index - 1)].conv2.out_channels();
}

template <typename T>
Backbone<T> make_backbone(int in_channels, double width_mult, Rng& rng) {
  const int w64 = scaled_width(64, width_mult);
  const int w128 = scaled_width(128, width_mult);
  const int w256 = scaled_width(256, width_mult);
  const int w512 = scaled_width(512, width_mult);
  Backbone<T> bb;
  bb.conv1 = make_conv2d<T>(in_channels, w64, 7, 2, 3, false, rng);
  bb.bn1 = make_batch_norm<T>(w64);
  bb.blocks = {make_resnet_block<T>(w64, w64, 1, rng), make_resnet_block<T>(w64, w128, 2, rng),
               make_resnet_block<T>(w128, w256, 2, rng),
               make_resnet_block<T>(w256, w512, 2, rng)};
  return bb;
}

// ---- explicit instantiations ----

#define XVT_INSTANTIATE_LAYERS(T)                                                         \
  template Conv2dParams<T> make_conv2d(int, int, int, int, int, bool, Rng&);              \
  template NormParams<T> make_batch_norm(int);                                            \
  template NormParams<T> make_layer_norm(int);                                            \
  template Tensor<T> conv2d(const Tensor<T>&, const Conv2dParams<T>&);                    \
  template Tensor<T> batch_norm(const Tensor<T>&, NormParams<T>&, bool);                  \
  template Tensor<T> layer_norm_rows(const Tensor<T>&, const NormParams<T>&);             \
  template Tensor<T> layer_norm(const Tensor<T>&, const NormParams<T>&);                  \
  template Tensor<T> max_pool_3x3_s2(const Tensor<T>&);                                   \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                   \
  template struct ResnetBlock<T>;                                                         \
  template ResnetBlock<T> make_resnet_block(int, int, int, Rng&);                         \
  template struct Backbone<T>;                                                            \
  template Backbone<T> make_backbone(int, double, Rng&);

XVT_INSTANTIATE_LAYERS(float)
XVT_INSTANTIATE_LAYERS(double)

#undef XVT_INSTANTIATE_LAYERS

}  // namespace xvt
