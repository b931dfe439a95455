// Independent reference implementations used as test oracles. Everything in
// this header is written with plain scalar loops and stays deliberately
// decoupled from the library's kernels.
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

// C(r,c) = A(r,k).B(k,c), naive triple loop.
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b,
                                  int r, int k, int c) {
  std::vector<double> out(static_cast<std::size_t>(r) * c, 0.0);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) {
      double acc = 0;
      for (int t = 0; t < k; ++t) acc += a[static_cast<std::size_t>(i) * k + t] * b[static_cast<std::size_t>(t) * c + j];
      out[static_cast<std::size_t>(i) * c + j] = acc;
    }
  }
  return out;
}

// Extended-precision softmax of one row.
inline std::vector<long double> softmax_row(const std::vector<long double>& x) {
  long double mx = x[0];
  for (long double v : x) mx = std::max(mx, v);
  std::vector<long double> out(x.size());
  long double denom = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = expl(x[i] - mx);
    denom += out[i];
  }
  for (auto& v : out) v /= denom;
  return out;
}

// Six-loop cross-correlation with zero padding.
inline std::vector<double> conv2d(const std::vector<double>& x, int ic, int h, int w,
                                  const std::vector<double>& weight, int oc, int kh, int kw,
                                  const std::vector<double>& bias, int stride, int pad) {
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(oc) * oh * ow, 0.0);
  for (int o = 0; o < oc; ++o) {
    for (int y = 0; y < oh; ++y) {
      for (int xx = 0; xx < ow; ++xx) {
        double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(o)];
        for (int c = 0; c < ic; ++c) {
          for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
              const int iy = y * stride + ky - pad;
              const int ix = xx * stride + kx - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += x[(static_cast<std::size_t>(c) * h + iy) * w + ix] *
                     weight[((static_cast<std::size_t>(o) * ic + c) * kh + ky) * kw + kx];
            }
          }
        }
        out[(static_cast<std::size_t>(o) * oh + y) * ow + xx] = acc;
      }
    }
  }
  return out;
}

// Scalar per-pair scaled dot-product attention for one sample:
// q (n,d), k (m,d), v (m,f) -> (n,f).
inline std::vector<double> attention(const std::vector<double>& q, const std::vector<double>& k,
                                     const std::vector<double>& v, int n, int m, int d, int f) {
  std::vector<double> out(static_cast<std::size_t>(n) * f, 0.0);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (int i = 0; i < n; ++i) {
    std::vector<double> logits(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
      double acc = 0;
      for (int t = 0; t < d; ++t) acc += q[static_cast<std::size_t>(i) * d + t] * k[static_cast<std::size_t>(j) * d + t];
      logits[static_cast<std::size_t>(j)] = acc * inv_sqrt_d;
    }
    double mx = logits[0];
    for (double v2 : logits) mx = std::max(mx, v2);
    double denom = 0;
    std::vector<double> weights(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
      weights[static_cast<std::size_t>(j)] = std::exp(logits[static_cast<std::size_t>(j)] - mx);
      denom += weights[static_cast<std::size_t>(j)];
    }
    for (int j = 0; j < m; ++j) {
      const double a = weights[static_cast<std::size_t>(j)] / denom;
      for (int t = 0; t < f; ++t) out[static_cast<std::size_t>(i) * f + t] += a * v[static_cast<std::size_t>(j) * f + t];
    }
  }
  return out;
}

// One tokenizer layer for one sample: spatial softmax per token column of the
// given logits (m,L), then the attention-weighted feature sums.
inline std::vector<double> tokenize_from_logits(const std::vector<double>& x,
                                                const std::vector<double>& logits, int m, int f,
                                                int l) {
  std::vector<double> tokens(static_cast<std::size_t>(l) * f, 0.0);
  for (int t = 0; t < l; ++t) {
    double mx = logits[static_cast<std::size_t>(t)];
    for (int i = 0; i < m; ++i) mx = std::max(mx, logits[static_cast<std::size_t>(i) * l + t]);
    double denom = 0;
    std::vector<double> w(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
      w[static_cast<std::size_t>(i)] = std::exp(logits[static_cast<std::size_t>(i) * l + t] - mx);
      denom += w[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < m; ++i) {
      const double a = w[static_cast<std::size_t>(i)] / denom;
      for (int j = 0; j < f; ++j) tokens[static_cast<std::size_t>(t) * f + j] += a * x[static_cast<std::size_t>(i) * f + j];
    }
  }
  return tokens;
}

// O(n^2) pairwise AUC with half credit for ties.
inline double auc_pairwise(const std::vector<double>& scores, const std::vector<int>& labels) {
  long long concordant = 0, tied = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg) += 1;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      if (scores[i] > scores[j]) {
        ++concordant;
      } else if (scores[i] == scores[j]) {
        ++tied;
      }
    }
  }
  return (static_cast<double>(concordant) + 0.5 * static_cast<double>(tied)) /
         (static_cast<double>(pos) * static_cast<double>(neg));
}

}  // namespace oracle
