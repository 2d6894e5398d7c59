#pragma once

// Forward and backward kernels for the encoder's operator set. All kernels
// are single-threaded with a fixed loop order, so results are bitwise
// reproducible for identical inputs.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstddef>
#include <vector>

#include "unisync/tensor.hpp"

namespace unisync::kernels {

struct Conv2dParams {
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
};

inline std::size_t conv_out_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  UNISYNC_CHECK(stride >= 1, ErrorKind::shape, "conv stride must be >= 1");
  UNISYNC_CHECK(in + 2 * pad >= kernel, ErrorKind::shape,
                "kernel " + std::to_string(kernel) + " does not fit padded input " + std::to_string(in + 2 * pad));
  return (in + 2 * pad - kernel) / stride + 1;
}

namespace detail {

// col has layout [Cin*kH*kW][ld]; this image fills columns [0, OH*OW) of
// each row, so several images can share one matrix at column offsets.
template <class T>
void im2col(const T* img, std::size_t cin, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            const Conv2dParams& p, std::size_t oh, std::size_t ow, T* col, std::size_t ld) {
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        T* row = col + ((c * kh + ki) * kw + kj) * ld;
        for (std::size_t oi = 0; oi < oh; ++oi) {
          const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * p.stride_h + ki) - static_cast<std::ptrdiff_t>(p.pad_h);
          T* dst = row + oi * ow;
          if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          const T* src = img + (c * h + static_cast<std::size_t>(ii)) * w;
          for (std::size_t oj = 0; oj < ow; ++oj) {
            const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * p.stride_w + kj) - static_cast<std::ptrdiff_t>(p.pad_w);
            dst[oj] = (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) ? T(0) : src[jj];
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, std::size_t cin, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                const Conv2dParams& p, std::size_t oh, std::size_t ow, T* img, std::size_t ld) {
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const T* row = col + ((c * kh + ki) * kw + kj) * ld;
        for (std::size_t oi = 0; oi < oh; ++oi) {
          const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * p.stride_h + ki) - static_cast<std::ptrdiff_t>(p.pad_h);
          if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = img + (c * h + static_cast<std::size_t>(ii)) * w;
          const T* src = row + oi * ow;
          for (std::size_t oj = 0; oj < ow; ++oj) {
            const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * p.stride_w + kj) - static_cast<std::ptrdiff_t>(p.pad_w);
            if (jj >= 0 && jj < static_cast<std::ptrdiff_t>(w)) dst[jj] += src[oj];
          }
        }
      }
    }
  }
}

template <class T>
struct VecOf;
template <>
struct VecOf<float> {
  typedef float type __attribute__((vector_size(32)));
};
template <>
struct VecOf<double> {
  typedef double type __attribute__((vector_size(32)));
};
template <class T>
using Vec = typename VecOf<T>::type;

template <class T>
inline Vec<T> load(const T* p) {
  Vec<T> v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

template <class T>
inline void store(T* p, const Vec<T>& v) {
  std::memcpy(p, &v, sizeof v);
}

/// C[M][N] += A * B[K][N], where A(i,k) = a[i*a_row + k*a_col]. Each C entry
/// accumulates over k in increasing order regardless of tiling.
template <class T>
void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t a_row, std::size_t a_col,
              const T* b, T* c) {
  constexpr std::size_t kRows = 4, kLanes = sizeof(Vec<T>) / sizeof(T), kCols = 2 * kLanes;
  std::vector<T> ap(kRows * k);
  std::size_t i = 0;
  for (; i + kRows <= m; i += kRows) {
    for (std::size_t kk = 0; kk < k; ++kk)
      for (std::size_t r = 0; r < kRows; ++r) ap[kk * kRows + r] = a[(i + r) * a_row + kk * a_col];
    std::size_t j = 0;
    for (; j + kCols <= n; j += kCols) {
      Vec<T> acc[kRows][2];
      for (std::size_t r = 0; r < kRows; ++r) {
        acc[r][0] = load(c + (i + r) * n + j);
        acc[r][1] = load(c + (i + r) * n + j + kLanes);
      }
      const T* bp = b + j;
      const T* av = ap.data();
      for (std::size_t kk = 0; kk < k; ++kk, bp += n, av += kRows) {
        const Vec<T> b0 = load(bp), b1 = load(bp + kLanes);
        for (std::size_t r = 0; r < kRows; ++r) {
          acc[r][0] += av[r] * b0;
          acc[r][1] += av[r] * b1;
        }
      }
      for (std::size_t r = 0; r < kRows; ++r) {
        store(c + (i + r) * n + j, acc[r][0]);
        store(c + (i + r) * n + j + kLanes, acc[r][1]);
      }
    }
    for (; j < n; ++j)
      for (std::size_t r = 0; r < kRows; ++r) {
        T s = c[(i + r) * n + j];
        for (std::size_t kk = 0; kk < k; ++kk) s += ap[kk * kRows + r] * b[kk * n + j];
        c[(i + r) * n + j] = s;
      }
  }
  for (; i < m; ++i) {
    T* ci = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = a[i * a_row + kk * a_col];
      const T* br = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * br[j];
    }
  }
}

template <class T>
inline T hsum(const Vec<T>& v) {
  constexpr std::size_t kLanes = sizeof(Vec<T>) / sizeof(T);
  T s = 0;
  for (std::size_t l = 0; l < kLanes; ++l) s += v[l];
  return s;
}

/// Dot product with vector partial sums combined in a fixed order.
template <class T>
T dot(const T* a, const T* b, std::size_t n) {
  constexpr std::size_t kLanes = sizeof(Vec<T>) / sizeof(T);
  Vec<T> s0{}, s1{};
  std::size_t j = 0;
  for (; j + 2 * kLanes <= n; j += 2 * kLanes) {
    s0 += load(a + j) * load(b + j);
    s1 += load(a + j + kLanes) * load(b + j + kLanes);
  }
  T t = 0;
  for (; j < n; ++j) t += a[j] * b[j];
  return hsum<T>(s0 + s1) + t;
}

/// C[M][K] += A[M][N] * B[K][N]^T; each entry is dot(A row, B row).
template <class T>
void gemm_dot_acc(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  constexpr std::size_t kLanes = sizeof(Vec<T>) / sizeof(T);
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const T* a0 = a + i * n;
    const T* a1 = a0 + n;
    const T* a2 = a1 + n;
    const T* a3 = a2 + n;
    std::size_t kk = 0;
    for (; kk + 2 <= k; kk += 2) {
      const T* b0 = b + kk * n;
      const T* b1 = b0 + n;
      Vec<T> s00{}, s01{}, s10{}, s11{}, s20{}, s21{}, s30{}, s31{};
      std::size_t j = 0;
      for (; j + kLanes <= n; j += kLanes) {
        const Vec<T> x0 = load(b0 + j), x1 = load(b1 + j);
        const Vec<T> y0 = load(a0 + j), y1 = load(a1 + j), y2 = load(a2 + j), y3 = load(a3 + j);
        s00 += y0 * x0;
        s01 += y0 * x1;
        s10 += y1 * x0;
        s11 += y1 * x1;
        s20 += y2 * x0;
        s21 += y2 * x1;
        s30 += y3 * x0;
        s31 += y3 * x1;
      }
      T t[8] = {};
      for (; j < n; ++j) {
        t[0] += a0[j] * b0[j];
        t[1] += a0[j] * b1[j];
        t[2] += a1[j] * b0[j];
        t[3] += a1[j] * b1[j];
        t[4] += a2[j] * b0[j];
        t[5] += a2[j] * b1[j];
        t[6] += a3[j] * b0[j];
        t[7] += a3[j] * b1[j];
      }
      c[i * k + kk] += hsum<T>(s00) + t[0];
      c[i * k + kk + 1] += hsum<T>(s01) + t[1];
      c[(i + 1) * k + kk] += hsum<T>(s10) + t[2];
      c[(i + 1) * k + kk + 1] += hsum<T>(s11) + t[3];
      c[(i + 2) * k + kk] += hsum<T>(s20) + t[4];
      c[(i + 2) * k + kk + 1] += hsum<T>(s21) + t[5];
      c[(i + 3) * k + kk] += hsum<T>(s30) + t[6];
      c[(i + 3) * k + kk + 1] += hsum<T>(s31) + t[7];
    }
    for (; kk < k; ++kk)
      for (std::size_t r = 0; r < 4; ++r) c[(i + r) * k + kk] += dot(a + (i + r) * n, b + kk * n, n);
  }
  for (; i < m; ++i)
    for (std::size_t kk = 0; kk < k; ++kk) c[i * k + kk] += dot(a + i * n, b + kk * n, n);
}

}  // namespace detail

/// Cross-correlation plus bias. input [N,Cin,H,W], weight [Cout,Cin,kH,kW], bias [Cout].
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      const Conv2dParams& p) {
  UNISYNC_CHECK(input.ndim() == 4 && weight.ndim() == 4, ErrorKind::shape, "conv2d expects 4-d input and weight");
  UNISYNC_CHECK(input.dim(1) == weight.dim(1), ErrorKind::shape,
                "conv2d channel mismatch: input " + dims_to_string(input.dims()) + " weight " + dims_to_string(weight.dims()));
  UNISYNC_CHECK(bias.ndim() == 1 && bias.dim(0) == weight.dim(0), ErrorKind::shape, "conv2d bias must be [Cout]");
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  const std::size_t oh = conv_out_size(h, kh, p.stride_h, p.pad_h);
  const std::size_t ow = conv_out_size(w, kw, p.stride_w, p.pad_w);
  const std::size_t k = cin * kh * kw, plane = oh * ow, ld = n * plane;

  std::vector<T> col(k * ld);
  for (std::size_t b = 0; b < n; ++b)
    detail::im2col(input.data() + b * cin * h * w, cin, h, w, kh, kw, p, oh, ow, col.data() + b * plane, ld);
  std::vector<T> acc(cout * ld);
  for (std::size_t oc = 0; oc < cout; ++oc) std::fill(acc.begin() + oc * ld, acc.begin() + (oc + 1) * ld, bias[oc]);
  detail::gemm_acc(cout, ld, k, weight.data(), k, 1, col.data(), acc.data());

  BasicTensor<T> out({n, cout, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < cout; ++oc)
      std::copy_n(acc.data() + oc * ld + b * plane, plane, out.data() + (b * cout + oc) * plane);
  return out;
}

/// Accumulates gradients of conv2d into grad_input / grad_weight / grad_bias
/// (any of which may be null).
template <class T>
void conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& grad_out,
                     const Conv2dParams& p, BasicTensor<T>* grad_input, BasicTensor<T>* grad_weight,
                     BasicTensor<T>* grad_bias) {
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  const std::size_t oh = grad_out.dim(2), ow = grad_out.dim(3);
  const std::size_t k = cin * kh * kw, plane = oh * ow, ld = n * plane;

  // grad_out regrouped as [Cout][N*plane].
  std::vector<T> g(cout * ld);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < cout; ++oc)
      std::copy_n(grad_out.data() + (b * cout + oc) * plane, plane, g.data() + oc * ld + b * plane);

  if (grad_bias) {
    for (std::size_t oc = 0; oc < cout; ++oc) {
      T s = 0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t q = 0; q < plane; ++q) s += g[oc * ld + b * plane + q];
      (*grad_bias)[oc] += s;
    }
  }
  if (grad_weight) {
    std::vector<T> col(k * ld);
    for (std::size_t b = 0; b < n; ++b)
      detail::im2col(input.data() + b * cin * h * w, cin, h, w, kh, kw, p, oh, ow, col.data() + b * plane, ld);
    detail::gemm_dot_acc(cout, k, ld, g.data(), col.data(), grad_weight->data());
  }
  if (grad_input) {
    std::vector<T> dcol(k * ld, T(0));
    detail::gemm_acc(k, ld, cout, weight.data(), 1, k, g.data(), dcol.data());
    for (std::size_t b = 0; b < n; ++b)
      detail::col2im_add(dcol.data() + b * plane, cin, h, w, kh, kw, p, oh, ow, grad_input->data() + b * cin * h * w, ld);
  }
}

/// Per-channel batch statistics saved by the train-mode forward pass.
template <class T>
struct BatchNormCache {
  std::vector<T> mean;
  std::vector<T> inv_std;
  BasicTensor<T> normalized;  // x_hat
};

/// Train-mode batchnorm: normalizes with batch statistics (biased variance)
/// and updates running stats with the unbiased variance.
template <class T>
BasicTensor<T> batchnorm2d_train(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                                 BasicTensor<T>& running_mean, BasicTensor<T>& running_var, T eps, T momentum,
                                 BatchNormCache<T>& cache) {
  UNISYNC_CHECK(x.ndim() == 4, ErrorKind::shape, "batchnorm2d expects [N,C,H,W]");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  UNISYNC_CHECK(gamma.size() == c && beta.size() == c && running_mean.size() == c && running_var.size() == c,
                ErrorKind::shape, "batchnorm2d parameter size mismatch");
  const std::size_t m = n * plane;
  UNISYNC_CHECK(m >= 2, ErrorKind::shape, "batchnorm2d train mode needs at least 2 values per channel");

  BasicTensor<T> out(x.dims());
  cache.mean.assign(c, T(0));
  cache.inv_std.assign(c, T(0));
  cache.normalized = BasicTensor<T>(x.dims());
  for (std::size_t ch = 0; ch < c; ++ch) {
    T sum = 0;
    for (std::size_t b = 0; b < n; ++b) {
      const T* src = x.data() + (b * c + ch) * plane;
      for (std::size_t q = 0; q < plane; ++q) sum += src[q];
    }
    const T mean = sum / static_cast<T>(m);
    T sq = 0;
    for (std::size_t b = 0; b < n; ++b) {
      const T* src = x.data() + (b * c + ch) * plane;
      for (std::size_t q = 0; q < plane; ++q) {
        const T d = src[q] - mean;
        sq += d * d;
      }
    }
    const T var = sq / static_cast<T>(m);
    const T inv_std = T(1) / std::sqrt(var + eps);
    cache.mean[ch] = mean;
    cache.inv_std[ch] = inv_std;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * plane;
      for (std::size_t q = 0; q < plane; ++q) {
        const T xh = (x[off + q] - mean) * inv_std;
        cache.normalized[off + q] = xh;
        out[off + q] = gamma[ch] * xh + beta[ch];
      }
    }
    const T unbiased = sq / static_cast<T>(m - 1);
    running_mean[ch] = (T(1) - momentum) * running_mean[ch] + momentum * mean;
    running_var[ch] = (T(1) - momentum) * running_var[ch] + momentum * unbiased;
  }
  return out;
}

template <class T>
BasicTensor<T> batchnorm2d_eval(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                                const BasicTensor<T>& running_mean, const BasicTensor<T>& running_var, T eps) {
  UNISYNC_CHECK(x.ndim() == 4, ErrorKind::shape, "batchnorm2d expects [N,C,H,W]");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  UNISYNC_CHECK(gamma.size() == c && beta.size() == c && running_mean.size() == c && running_var.size() == c,
                ErrorKind::shape, "batchnorm2d parameter size mismatch");
  for (std::size_t ch = 0; ch < c; ++ch)
    UNISYNC_CHECK(std::isfinite(running_mean[ch]) && std::isfinite(running_var[ch]) && running_var[ch] >= T(0),
                  ErrorKind::range, "batchnorm2d running statistics are not initialized");
  BasicTensor<T> out(x.dims());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T inv_std = T(1) / std::sqrt(running_var[ch] + eps);
    const T scale = gamma[ch] * inv_std;
    const T shift = beta[ch] - running_mean[ch] * scale;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * plane;
      for (std::size_t q = 0; q < plane; ++q) out[off + q] = x[off + q] * scale + shift;
    }
  }
  return out;
}

template <class T>
void batchnorm2d_train_backward(const BasicTensor<T>& gamma, const BatchNormCache<T>& cache,
                                const BasicTensor<T>& grad_out, BasicTensor<T>* grad_x, BasicTensor<T>* grad_gamma,
                                BasicTensor<T>* grad_beta) {
  const std::size_t n = grad_out.dim(0), c = grad_out.dim(1), plane = grad_out.dim(2) * grad_out.dim(3);
  const T m = static_cast<T>(n * plane);
  for (std::size_t ch = 0; ch < c; ++ch) {
    T sum_g = 0, sum_gx = 0;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * plane;
      for (std::size_t q = 0; q < plane; ++q) {
        sum_g += grad_out[off + q];
        sum_gx += grad_out[off + q] * cache.normalized[off + q];
      }
    }
    if (grad_gamma) (*grad_gamma)[ch] += sum_gx;
    if (grad_beta) (*grad_beta)[ch] += sum_g;
    if (grad_x) {
      const T k = gamma[ch] * cache.inv_std[ch] / m;
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * c + ch) * plane;
        for (std::size_t q = 0; q < plane; ++q)
          (*grad_x)[off + q] += k * (m * grad_out[off + q] - sum_g - cache.normalized[off + q] * sum_gx);
      }
    }
  }
}

template <class T>
void batchnorm2d_eval_backward(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                               const BasicTensor<T>& running_mean, const BasicTensor<T>& running_var, T eps,
                               const BasicTensor<T>& grad_out, BasicTensor<T>* grad_x, BasicTensor<T>* grad_gamma,
                               BasicTensor<T>* grad_beta) {
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T inv_std = T(1) / std::sqrt(running_var[ch] + eps);
    T sum_g = 0, sum_gx = 0;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * plane;
      for (std::size_t q = 0; q < plane; ++q) {
        sum_g += grad_out[off + q];
        sum_gx += grad_out[off + q] * (x[off + q] - running_mean[ch]) * inv_std;
        if (grad_x) (*grad_x)[off + q] += grad_out[off + q] * gamma[ch] * inv_std;
      }
    }
    if (grad_gamma) (*grad_gamma)[ch] += sum_gx;
    if (grad_beta) (*grad_beta)[ch] += sum_g;
  }
}

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

/// Subgradient 0 at exactly 0.
template <class T>
void relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& grad_out, BasicTensor<T>& grad_x) {
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] > T(0)) grad_x[i] += grad_out[i];
}

/// Region [floor(i*in/out), ceil((i+1)*in/out)).
struct PoolRange {
  std::size_t begin, end;
};

inline PoolRange adaptive_range(std::size_t i, std::size_t in, std::size_t out) {
  return {(i * in) / out, ((i + 1) * in + out - 1) / out};
}

template <class T>
BasicTensor<T> adaptive_avg_pool2d(const BasicTensor<T>& x, std::size_t out_h, std::size_t out_w) {
  UNISYNC_CHECK(x.ndim() == 4, ErrorKind::shape, "adaptive_avg_pool2d expects [N,C,H,W]");
  UNISYNC_CHECK(out_h >= 1 && out_w >= 1, ErrorKind::shape, "adaptive_avg_pool2d output size must be >= 1");
  const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  BasicTensor<T> out({x.dim(0), x.dim(1), out_h, out_w});
  for (std::size_t p = 0; p < nc; ++p) {
    const T* src = x.data() + p * h * w;
    T* dst = out.data() + p * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const auto ri = adaptive_range(i, h, out_h);
      for (std::size_t j = 0; j < out_w; ++j) {
        const auto rj = adaptive_range(j, w, out_w);
        T s = 0;
        for (std::size_t a = ri.begin; a < ri.end; ++a)
          for (std::size_t b = rj.begin; b < rj.end; ++b) s += src[a * w + b];
        dst[i * out_w + j] = s / static_cast<T>((ri.end - ri.begin) * (rj.end - rj.begin));
      }
    }
  }
  return out;
}

template <class T>
void adaptive_avg_pool2d_backward(const BasicTensor<T>& grad_out, BasicTensor<T>& grad_x) {
  const std::size_t nc = grad_x.dim(0) * grad_x.dim(1), h = grad_x.dim(2), w = grad_x.dim(3);
  const std::size_t out_h = grad_out.dim(2), out_w = grad_out.dim(3);
  for (std::size_t p = 0; p < nc; ++p) {
    const T* src = grad_out.data() + p * out_h * out_w;
    T* dst = grad_x.data() + p * h * w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const auto ri = adaptive_range(i, h, out_h);
      for (std::size_t j = 0; j < out_w; ++j) {
        const auto rj = adaptive_range(j, w, out_w);
        const T g = src[i * out_w + j] / static_cast<T>((ri.end - ri.begin) * (rj.end - rj.begin));
        for (std::size_t a = ri.begin; a < ri.end; ++a)
          for (std::size_t b = rj.begin; b < rj.end; ++b) dst[a * w + b] += g;
      }
    }
  }
}

/// y = x W^T + b. x [N,Din], weight [Dout,Din], bias [Dout].
template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
  UNISYNC_CHECK(x.ndim() == 2 && weight.ndim() == 2, ErrorKind::shape, "linear expects 2-d input and weight");
  UNISYNC_CHECK(x.dim(1) == weight.dim(1), ErrorKind::shape,
                "linear Din mismatch: input " + dims_to_string(x.dims()) + " weight " + dims_to_string(weight.dims()));
  UNISYNC_CHECK(bias.ndim() == 1 && bias.dim(0) == weight.dim(0), ErrorKind::shape, "linear bias must be [Dout]");
  const std::size_t n = x.dim(0), din = x.dim(1), dout = weight.dim(0);
  BasicTensor<T> out({n, dout});
  for (std::size_t b = 0; b < n; ++b) std::copy_n(bias.data(), dout, out.data() + b * dout);
  detail::gemm_dot_acc(n, dout, din, x.data(), weight.data(), out.data());
  return out;
}

template <class T>
void linear_backward(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& grad_out,
                     BasicTensor<T>* grad_x, BasicTensor<T>* grad_weight, BasicTensor<T>* grad_bias) {
  const std::size_t n = x.dim(0), din = x.dim(1), dout = weight.dim(0);
  if (grad_bias)
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t o = 0; o < dout; ++o) (*grad_bias)[o] += grad_out[b * dout + o];
  if (grad_weight) detail::gemm_acc(dout, din, n, grad_out.data(), 1, dout, x.data(), grad_weight->data());
  if (grad_x) detail::gemm_acc(n, din, dout, grad_out.data(), dout, 1, weight.data(), grad_x->data());
}

}  // namespace unisync::kernels
