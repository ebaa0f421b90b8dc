// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "realise/neural/kernels.hpp"
#include "realise/neural/tensor.hpp"

// Differentiable operations over row-major tensors. Most ops treat their
// inputs as matrices (rows x cols); the graph records one closure per op.
namespace realise::nn {

namespace detail {

template <typename T>
void require(bool ok, const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (!ok) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
}

template <typename T>
void require_matrix(const Tensor<T>& a, const char* op) {
  if (a.ndim() != 2) throw ShapeError(std::string(op) + ": expected matrix, got " + shape_str(a.shape()));
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false, bool trans_b = false) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = trans_a ? a.dim(1) : a.dim(0);
  const std::size_t k = trans_a ? a.dim(0) : a.dim(1);
  const std::size_t kb = trans_b ? b.dim(1) : b.dim(0);
  const std::size_t n = trans_b ? b.dim(0) : b.dim(1);
  detail::require(k == kb, "matmul", a, b);
  std::vector<T> out(m * n);
  kernels::gemm(trans_a, trans_b, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  return make_result<T>({m, n}, std::move(out), {a, b}, [=](Node<T>& self) {
    auto& na = *self.parents[0];
    auto& nb = *self.parents[1];
    const T* g = self.grad.data();
    if (na.requires_grad) {
      // dA = dC * op(B)^T, laid out to match A's storage.
      if (!trans_a) {
        kernels::gemm(false, !trans_b, m, k, n, g, nb.value.data(), na.grad_buffer().data(), true);
      } else {
        kernels::gemm(trans_b, true, k, m, n, nb.value.data(), g, na.grad_buffer().data(), true);
      }
    }
    if (nb.requires_grad) {
      if (!trans_b) {
        kernels::gemm(!trans_a, false, k, n, m, na.value.data(), g, nb.grad_buffer().data(), true);
      } else {
        kernels::gemm(true, trans_a, n, k, m, g, na.value.data(), nb.grad_buffer().data(), true);
      }
    }
  });
}

/// x[m x in] * w[in x out] + bias[out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  detail::require_matrix(x, "linear");
  detail::require(x.dim(1) == w.dim(0), "linear", x, w);
  const std::size_t m = x.dim(0), k = w.dim(0), n = w.dim(1);
  detail::require(bias.numel() == n, "linear", w, bias);
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(bias.data().data(), n, out.data() + i * n);
  kernels::gemm(false, false, m, n, k, x.data().data(), w.data().data(), out.data(), true);
  return make_result<T>({m, n}, std::move(out), {x, w, bias}, [=](Node<T>& self) {
    auto& nx = *self.parents[0];
    auto& nw = *self.parents[1];
    auto& nb = *self.parents[2];
    const T* g = self.grad.data();
    if (nx.requires_grad) kernels::gemm(false, true, m, k, n, g, nw.value.data(), nx.grad_buffer().data(), true);
    if (nw.requires_grad) kernels::gemm(true, false, k, n, m, nx.value.data(), g, nw.grad_buffer().data(), true);
    if (nb.requires_grad) {
      auto gb = nb.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "add", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (int p = 0; p < 2; ++p) {
      auto& n = *self.parents[p];
      if (!n.requires_grad) continue;
      auto g = n.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "sub", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (int p = 0; p < 2; ++p) {
      auto& n = *self.parents[p];
      if (!n.requires_grad) continue;
      auto g = n.grad_buffer();
      const T sign = p == 0 ? T{1} : T{-1};
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "mul", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    auto& na = *self.parents[0];
    auto& nb = *self.parents[1];
    if (na.requires_grad) {
      auto g = na.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.value[i];
    }
    if (nb.requires_grad) {
      auto g = nb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  return make_result<T>(a.shape(), std::move(out), {a}, [s](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

/// Adds a length-cols vector to every row.
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
  const std::size_t m = x.rows(), n = x.cols();
  detail::require(v.numel() == n, "add_rowvec", x, v);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x.data()[i * n + j] + v.data()[j];
  return make_result<T>(x.shape(), std::move(out), {x, v}, [=](Node<T>& self) {
    auto& nx = *self.parents[0];
    auto& nv = *self.parents[1];
    if (nx.requires_grad) {
      auto g = nx.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (nv.requires_grad) {
      auto g = nv.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

/// Scales row i of x[m x n] by s[i]; s has m elements.
template <typename T>
Tensor<T> mul_colvec(const Tensor<T>& x, const Tensor<T>& s) {
  const std::size_t m = x.rows(), n = x.cols();
  detail::require(s.numel() == m, "mul_colvec", x, s);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x.data()[i * n + j] * s.data()[i];
  return make_result<T>(x.shape(), std::move(out), {x, s}, [=](Node<T>& self) {
    auto& nx = *self.parents[0];
    auto& ns = *self.parents[1];
    if (nx.requires_grad) {
      auto g = nx.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i * n + j] * ns.value[i];
    }
    if (ns.requires_grad) {
      auto g = ns.grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        T acc{0};
        for (std::size_t j = 0; j < n; ++j) acc += self.grad[i * n + j] * nx.value[i * n + j];
        g[i] += acc;
      }
    }
  });
}

namespace detail {

template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& x, F f, DF df) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x.data()[i]);
  return make_result<T>(x.shape(), std::move(out), {x}, [df](Node<T>& self) {
    auto& nx = *self.parents[0];
    auto g = nx.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(nx.value[i], self.value[i]);
  });
}

}  // namespace detail

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return v > T{0} ? v : T{0}; }, [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return T{1} / (T{1} + std::exp(-v)); }, [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T{1} - y * y; });
}

/// Exact (erf) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt_2pi = T(0.39894228040143267794);
  return detail::unary(
      x, [](T v) { return T(0.5) * v * (T{1} + std::erf(v * inv_sqrt2)); },
      [](T v, T) {
        const T cdf = T(0.5) * (T{1} + std::erf(v * inv_sqrt2));
        return cdf + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      });
}

/// Row-wise layer normalization with affine gain and bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-12)) {
  const std::size_t m = x.rows(), n = x.cols();
  detail::require(gain.numel() == n && bias.numel() == n, "layer_norm", x, gain);
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = x.data().data() + i * n;
    // Statistics in double: float rows with a large common offset lose the
    // centred signal otherwise.
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    const double r = 1.0 / std::sqrt(var + static_cast<double>(eps));
    rstd[i] = static_cast<T>(r);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = static_cast<T>((row[j] - mean) * r);
      out[i * n + j] = xhat[i * n + j] * gain.data()[j] + bias.data()[j];
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x, gain, bias},
                        [=, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
    auto& nx = *self.parents[0];
    auto& ng = *self.parents[1];
    auto& nb = *self.parents[2];
    const T* g = self.grad.data();
    if (ng.requires_grad) {
      auto gg = ng.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * xhat[i * n + j];
    }
    if (nb.requires_grad) {
      auto gb = nb.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
    if (nx.requires_grad) {
      auto gx = nx.grad_buffer();
      std::vector<T> dxhat(n);
      for (std::size_t i = 0; i < m; ++i) {
        T mean_d{0}, mean_dx{0};
        for (std::size_t j = 0; j < n; ++j) {
          dxhat[j] = g[i * n + j] * ng.value[j];
          mean_d += dxhat[j];
          mean_dx += dxhat[j] * xhat[i * n + j];
        }
        mean_d /= static_cast<T>(n);
        mean_dx /= static_cast<T>(n);
        for (std::size_t j = 0; j < n; ++j)
          gx[i * n + j] += rstd[i] * (dxhat[j] - mean_d - xhat[i * n + j] * mean_dx);
      }
    }
  });
}

/// out[r] = table[index[r]]; used for embeddings and for fanning a per-unique
/// computation back out to positions. Backward scatter-adds.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const int> index) {
  const std::size_t n = table.cols();
  const std::size_t rows = table.rows();
  std::vector<T> out(index.size() * n);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || static_cast<std::size_t>(index[r]) >= rows) {
      throw std::out_of_range("gather_rows: index " + std::to_string(index[r]) + " outside [0, " +
                              std::to_string(rows) + ")");
    }
    std::copy_n(table.data().data() + static_cast<std::size_t>(index[r]) * n, n, out.data() + r * n);
  }
  std::vector<int> idx(index.begin(), index.end());
  return make_result<T>({index.size(), n}, std::move(out), {table},
                        [n, idx = std::move(idx)](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      T* dst = g.data() + static_cast<std::size_t>(idx[r]) * n;
      const T* src = self.grad.data() + r * n;
      for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require(p.rows() == m, "concat_cols", parts[0], p);
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<T> out(m * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(parts[k].data().data() + i * widths[k], widths[k], out.data() + i * total + off);
    off += widths[k];
  }
  return make_result<T>({m, total}, std::move(out), parts, [=](Node<T>& self) {
    std::size_t o = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      auto& np = *self.parents[k];
      if (np.requires_grad) {
        auto g = np.grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * total + o + j];
      }
      o += widths[k];
    }
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t len) {
  const std::size_t m = x.rows(), n = x.cols();
  if (start + len > n) throw ShapeError("slice_cols: range exceeds " + shape_str(x.shape()));
  std::vector<T> out(m * len);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(x.data().data() + i * n + start, len, out.data() + i * len);
  return make_result<T>({m, len}, std::move(out), {x}, [=](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < len; ++j) g[i * n + start + j] += self.grad[i * len + j];
  });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t start, std::size_t count) {
  const std::size_t n = x.cols();
  if (start + count > x.rows()) throw ShapeError("slice_rows: range exceeds " + shape_str(x.shape()));
  std::vector<T> out(x.data().begin() + static_cast<std::ptrdiff_t>(start * n),
                     x.data().begin() + static_cast<std::ptrdiff_t>((start + count) * n));
  return make_result<T>({count, n}, std::move(out), {x}, [=](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < count * n; ++i) g[start * n + i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), {x}, [](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// Mean of x's rows per sentence over positions with mask=1.
/// x is [batch*len x d]; result is [batch x d].
template <typename T>
Tensor<T> masked_row_mean(const Tensor<T>& x, std::span<const std::uint8_t> mask, std::size_t batch,
                          std::size_t len) {
  const std::size_t d = x.cols();
  if (x.rows() != batch * len || mask.size() != batch * len) {
    throw ShapeError("masked_row_mean: " + shape_str(x.shape()) + " vs batch*len " +
                     std::to_string(batch * len));
  }
  std::vector<T> out(batch * d, T{0});
  std::vector<T> inv(batch, T{0});
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t count = 0;
    for (std::size_t t = 0; t < len; ++t) count += mask[b * len + t] ? 1 : 0;
    if (count == 0) continue;
    inv[b] = T{1} / static_cast<T>(count);
    for (std::size_t t = 0; t < len; ++t) {
      if (!mask[b * len + t]) continue;
      const T* row = x.data().data() + (b * len + t) * d;
      for (std::size_t j = 0; j < d; ++j) out[b * d + j] += row[j];
    }
    for (std::size_t j = 0; j < d; ++j) out[b * d + j] *= inv[b];
  }
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return make_result<T>({batch, d}, std::move(out), {x},
                        [=, m = std::move(m), inv = std::move(inv)](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < len; ++t) {
        if (!m[b * len + t]) continue;
        for (std::size_t j = 0; j < d; ++j) g[(b * len + t) * d + j] += self.grad[b * d + j] * inv[b];
      }
  });
}

/// Multi-head scaled dot-product self-attention over packed Q|K|V.
/// qkv is [batch*len x 3d]; keys with mask=0 receive zero weight and query
/// rows with mask=0 produce zero output.
template <typename T>
Tensor<T> attention(const Tensor<T>& qkv, std::span<const std::uint8_t> mask, std::size_t batch,
                    std::size_t len, std::size_t heads) {
  const std::size_t width = qkv.cols();
  if (width % 3 != 0 || qkv.rows() != batch * len || mask.size() != batch * len) {
    throw ShapeError("attention: bad packed qkv " + shape_str(qkv.shape()));
  }
  const std::size_t d = width / 3;
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("attention: model dim " + std::to_string(d) + " not divisible by heads " +
                     std::to_string(heads));
  }
  const std::size_t dh = d / heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));
  const T* in = qkv.data().data();
  std::vector<T> out(batch * len * d, T{0});
  std::vector<T> probs(batch * heads * len * len, T{0});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      T* p = probs.data() + (b * heads + h) * len * len;
      for (std::size_t i = 0; i < len; ++i) {
        if (!mask[b * len + i]) continue;
        const T* q = in + (b * len + i) * width + h * dh;
        T maxv = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < len; ++j) {
          if (!mask[b * len + j]) continue;
          const T* k = in + (b * len + j) * width + d + h * dh;
          T s{0};
          for (std::size_t c = 0; c < dh; ++c) s += q[c] * k[c];
          s *= scale;
          p[i * len + j] = s;
          maxv = std::max(maxv, s);
        }
        T denom{0};
        for (std::size_t j = 0; j < len; ++j) {
          if (!mask[b * len + j]) continue;
          p[i * len + j] = std::exp(p[i * len + j] - maxv);
          denom += p[i * len + j];
        }
        T* o = out.data() + (b * len + i) * d + h * dh;
        for (std::size_t j = 0; j < len; ++j) {
          if (!mask[b * len + j]) continue;
          p[i * len + j] /= denom;
          const T* v = in + (b * len + j) * width + 2 * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) o[c] += p[i * len + j] * v[c];
        }
      }
    }
  }
  return make_result<T>({batch * len, d}, std::move(out), {qkv},
                        [=, probs = std::move(probs)](Node<T>& self) {
    auto& nq = *self.parents[0];
    const T* x = nq.value.data();
    T* gx = nq.grad_buffer().data();
    const T* go = self.grad.data();
    std::vector<T> dp(len);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        const T* p = probs.data() + (b * heads + h) * len * len;
        for (std::size_t i = 0; i < len; ++i) {
          const T* gi = go + (b * len + i) * d + h * dh;
          T dot{0};
          for (std::size_t j = 0; j < len; ++j) {
            const T pij = p[i * len + j];
            if (pij == T{0}) {
              dp[j] = T{0};
              continue;
            }
            const T* v = x + (b * len + j) * width + 2 * d + h * dh;
            T* gv = gx + (b * len + j) * width + 2 * d + h * dh;
            T s{0};
            for (std::size_t c = 0; c < dh; ++c) {
              s += gi[c] * v[c];
              gv[c] += pij * gi[c];
            }
            dp[j] = s;
            dot += pij * s;
          }
          const T* q = x + (b * len + i) * width + h * dh;
          T* gq = gx + (b * len + i) * width + h * dh;
          for (std::size_t j = 0; j < len; ++j) {
            const T pij = p[i * len + j];
            if (pij == T{0}) continue;
            const T ds = pij * (dp[j] - dot) * scale;
            const T* k = x + (b * len + j) * width + d + h * dh;
            T* gk = gx + (b * len + j) * width + d + h * dh;
            for (std::size_t c = 0; c < dh; ++c) {
              gq[c] += ds * k[c];
              gk[c] += ds * q[c];
            }
          }
        }
      }
    }
  });
}

struct Conv2dSpec {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// x [n x c x h x w], weight [co x c x kh x kw], bias [co] -> [n x co x ho x wo].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Conv2dSpec spec) {
  if (x.ndim() != 4 || weight.ndim() != 4 || x.dim(1) != weight.dim(1) || bias.numel() != weight.dim(0)) {
    detail::require(false, "conv2d", x, weight);
  }
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t co = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  const std::size_t s = spec.stride, pad = spec.pad;
  if (h + 2 * pad < kh || w + 2 * pad < kw || s == 0) detail::require(false, "conv2d", x, weight);
  const std::size_t ho = (h + 2 * pad - kh) / s + 1;
  const std::size_t wo = (w + 2 * pad - kw) / s + 1;
  const std::size_t kdim = ci * kh * kw, plane = ho * wo, total = n * plane;
  // The whole batch is unfolded into one kdim x (n * plane) matrix so each
  // pass is a single product.
  std::vector<T> cols(kdim * total);
  for (std::size_t b = 0; b < n; ++b) {
    kernels::im2col(x.data().data() + b * ci * h * w, ci, h, w, kh, kw, s, pad, ho, wo, cols.data() + b * plane,
                    total);
  }
  std::vector<T> prod(co * total);
  kernels::gemm(false, false, co, total, kdim, weight.data().data(), cols.data(), prod.data(), false);
  std::vector<T> out(n * co * plane);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t c = 0; c < co; ++c) {
      const T* src = prod.data() + c * total + b * plane;
      T* dst = out.data() + (b * co + c) * plane;
      const T bc = bias.data()[c];
      for (std::size_t k = 0; k < plane; ++k) dst[k] = src[k] + bc;
    }
  return make_result<T>({n, co, ho, wo}, std::move(out), {x, weight, bias},
                        [=, cols = std::move(cols)](Node<T>& self) {
    auto& nx = *self.parents[0];
    auto& nw = *self.parents[1];
    auto& nb = *self.parents[2];
    std::vector<T> g(co * total);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t c = 0; c < co; ++c)
        std::copy_n(self.grad.data() + (b * co + c) * plane, plane, g.data() + c * total + b * plane);
    if (nw.requires_grad) kernels::gemm(false, true, co, kdim, total, g.data(), cols.data(), nw.grad_buffer().data(), true);
    if (nb.requires_grad) {
      auto gb = nb.grad_buffer();
      for (std::size_t c = 0; c < co; ++c)
        for (std::size_t k = 0; k < total; ++k) gb[c] += g[c * total + k];
    }
    if (nx.requires_grad) {
      std::vector<T> dcol(kdim * total);
      kernels::gemm(true, false, kdim, total, co, nw.value.data(), g.data(), dcol.data(), false);
      for (std::size_t b = 0; b < n; ++b) {
        kernels::col2im(dcol.data() + b * plane, ci, h, w, kh, kw, s, pad, ho, wo,
                        nx.grad_buffer().data() + b * ci * h * w, total);
      }
    }
  });
}

/// Mean softmax cross-entropy over rows with weight 1. Rows with weight 0
/// are ignored; when every row is ignored the loss is 0 with zero gradient.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                        std::span<const std::uint8_t> active) {
  const std::size_t m = logits.rows(), v = logits.cols();
  if (targets.size() != m || active.size() != m) {
    throw ShapeError("cross_entropy: targets/mask length does not match " + shape_str(logits.shape()));
  }
  std::vector<T> probs(m * v, T{0});
  std::size_t count = 0;
  T loss{0};
  for (std::size_t i = 0; i < m; ++i) {
    if (!active[i]) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[i]) + " outside vocabulary");
    }
    const T* row = logits.data().data() + i * v;
    const T maxv = *std::max_element(row, row + v);
    T denom{0};
    for (std::size_t j = 0; j < v; ++j) {
      probs[i * v + j] = std::exp(row[j] - maxv);
      denom += probs[i * v + j];
    }
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] /= denom;
    loss += -(row[targets[i]] - maxv - std::log(denom));
    ++count;
  }
  const T inv = count ? T{1} / static_cast<T>(count) : T{0};
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<std::uint8_t> act(active.begin(), active.end());
  return make_result<T>({1}, {loss * inv}, {logits},
                        [=, probs = std::move(probs), tgt = std::move(tgt), act = std::move(act)](Node<T>& self) {
    if (inv == T{0}) return;
    auto g = self.parents[0]->grad_buffer();
    const T up = self.grad[0] * inv;
    for (std::size_t i = 0; i < m; ++i) {
      if (!act[i]) continue;
      for (std::size_t j = 0; j < v; ++j) g[i * v + j] += up * probs[i * v + j];
      g[i * v + static_cast<std::size_t>(tgt[i])] -= up;
    }
  });
}

/// Inverted dropout; identity when rate is 0.
template <typename T, typename Rng>
Tensor<T> dropout(const Tensor<T>& x, T rate, Rng& rng) {
  if (rate <= T{0}) return x;
  std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
  const T factor = T{1} / (T{1} - rate);
  std::vector<T> m(x.numel());
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i] = keep(rng) ? factor : T{0};
    out[i] = x.data()[i] * m[i];
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [m = std::move(m)](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * m[i];
  });
}

/// sum_i x_i * w_i with constant weights; a convenient scalar probe.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, std::span<const T> weights) {
  if (weights.size() != x.numel()) throw ShapeError("weighted_sum: weight count mismatch");
  T s{0};
  for (std::size_t i = 0; i < weights.size(); ++i) s += x.data()[i] * weights[i];
  std::vector<T> w(weights.begin(), weights.end());
  return make_result<T>({1}, {s}, {x}, [w = std::move(w)](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * w[i];
  });
}

/// Row-wise softmax on values (no graph).
template <typename T>
std::vector<T> softmax_rows(const Tensor<T>& logits) {
  const std::size_t m = logits.rows(), v = logits.cols();
  std::vector<T> out(m * v);
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = logits.data().data() + i * v;
    const T maxv = *std::max_element(row, row + v);
    T denom{0};
    for (std::size_t j = 0; j < v; ++j) {
      out[i * v + j] = std::exp(row[j] - maxv);
      denom += out[i * v + j];
    }
    for (std::size_t j = 0; j < v; ++j) out[i * v + j] /= denom;
  }
  return out;
}

}  // namespace realise::nn
