#include "cost/conv.hpp"

#include <algorithm>
#include <limits>

#include "cost/parallel.hpp"

#ifdef COST_USE_BLAS
#include <cblas.h>
extern "C" void openblas_set_num_threads(int);
namespace {
// one BLAS thread per call: parallelism stays at the sample level, so results
// do not depend on the worker count
const bool kBlasSingleThread = [] {
  openblas_set_num_threads(1);
  return true;
}();
}  // namespace
#endif

namespace cost {

namespace {

struct Geometry {
  i64 pt, ph, pw;        // leading pad per axis
  i64 ot, oh, ow;        // output extents
  i64 out_voxels() const { return ot * oh * ow; }
};

Geometry make_geometry(const Shape5& in, const ConvKernel& k, Stride3 s, Padding pad) {
  Geometry g{};
  if (pad == Padding::Same) {
    check(k.kt % 2 == 1 && k.kh % 2 == 1 && k.kw % 2 == 1,
          "conv3d: same padding requires odd kernel extents");
    g.pt = (k.kt - 1) / 2;
    g.ph = (k.kh - 1) / 2;
    g.pw = (k.kw - 1) / 2;
  } else {
    g.pt = g.ph = g.pw = 0;
  }
  g.ot = conv_out_extent(in.t, k.kt, s.t, pad);
  g.oh = conv_out_extent(in.h, k.kh, s.h, pad);
  g.ow = conv_out_extent(in.w, k.kw, s.w, pad);
  return g;
}

// im2col for one sample: rows = output voxels in (t,h,w) order, cols indexed
// by ((dt*kh+dh)*kw+dw)*c_in+ci. Channels-last input makes each tap a
// contiguous c_in copy.
void im2col_sample(const Tensor& x, i64 n, const ConvKernel& k, Stride3 s, const Geometry& g,
                   double* cols) {
  const i64 ci = x.shape.c;
  const i64 K = k.taps() * ci;
  const double* base = x.data.data() + n * x.shape.t * x.shape.h * x.shape.w * ci;
  i64 row = 0;
  for (i64 ot = 0; ot < g.ot; ++ot) {
    const i64 t0 = ot * s.t - g.pt;
    for (i64 oh = 0; oh < g.oh; ++oh) {
      const i64 h0 = oh * s.h - g.ph;
      for (i64 ow = 0; ow < g.ow; ++ow, ++row) {
        const i64 w0 = ow * s.w - g.pw;
        double* dst = cols + row * K;
        for (i64 dt = 0; dt < k.kt; ++dt) {
          const i64 t = t0 + dt;
          const bool t_ok = (t >= 0 && t < x.shape.t);
          for (i64 dh = 0; dh < k.kh; ++dh) {
            const i64 h = h0 + dh;
            const bool h_ok = t_ok && (h >= 0 && h < x.shape.h);
            for (i64 dw = 0; dw < k.kw; ++dw, dst += ci) {
              const i64 w = w0 + dw;
              if (h_ok && w >= 0 && w < x.shape.w) {
                const double* src = base + ((t * x.shape.h + h) * x.shape.w + w) * ci;
                std::copy(src, src + ci, dst);
              } else {
                std::fill(dst, dst + ci, 0.0);
              }
            }
          }
        }
      }
    }
  }
}

// scatter-add counterpart of im2col_sample
void col2im_sample(const double* cols, i64 n, const ConvKernel& k, Stride3 s, const Geometry& g,
                   Tensor& dx) {
  const i64 ci = dx.shape.c;
  const i64 K = k.taps() * ci;
  double* base = dx.data.data() + n * dx.shape.t * dx.shape.h * dx.shape.w * ci;
  i64 row = 0;
  for (i64 ot = 0; ot < g.ot; ++ot) {
    const i64 t0 = ot * s.t - g.pt;
    for (i64 oh = 0; oh < g.oh; ++oh) {
      const i64 h0 = oh * s.h - g.ph;
      for (i64 ow = 0; ow < g.ow; ++ow, ++row) {
        const i64 w0 = ow * s.w - g.pw;
        const double* src = cols + row * K;
        for (i64 dt = 0; dt < k.kt; ++dt) {
          const i64 t = t0 + dt;
          const bool t_ok = (t >= 0 && t < dx.shape.t);
          for (i64 dh = 0; dh < k.kh; ++dh) {
            const i64 h = h0 + dh;
            const bool h_ok = t_ok && (h >= 0 && h < dx.shape.h);
            for (i64 dw = 0; dw < k.kw; ++dw, src += ci) {
              const i64 w = w0 + dw;
              if (h_ok && w >= 0 && w < dx.shape.w) {
                double* dst = base + ((t * dx.shape.h + h) * dx.shape.w + w) * ci;
                for (i64 c = 0; c < ci; ++c) dst[c] += src[c];
              }
            }
          }
        }
      }
    }
  }
}

// kernel (c_out,c_in,kt,kh,kw) -> column-matched weight matrix [K x c_out]
std::vector<double> pack_weights(const ConvKernel& k) {
  const i64 K = k.taps() * k.c_in;
  std::vector<double> w(static_cast<size_t>(K * k.c_out));
  for (i64 o = 0; o < k.c_out; ++o)
    for (i64 i = 0; i < k.c_in; ++i)
      for (i64 dt = 0; dt < k.kt; ++dt)
        for (i64 dh = 0; dh < k.kh; ++dh)
          for (i64 dw = 0; dw < k.kw; ++dw) {
            const i64 kk = ((dt * k.kh + dh) * k.kw + dw) * k.c_in + i;
            w[static_cast<size_t>(kk * k.c_out + o)] = k.at(o, i, dt, dh, dw);
          }
  return w;
}

// transposed variant [c_out x K]; the forward pass runs long contiguous dots
std::vector<double> pack_weights_t(const ConvKernel& k) {
  const i64 K = k.taps() * k.c_in;
  std::vector<double> w(static_cast<size_t>(K * k.c_out));
  for (i64 o = 0; o < k.c_out; ++o)
    for (i64 i = 0; i < k.c_in; ++i)
      for (i64 dt = 0; dt < k.kt; ++dt)
        for (i64 dh = 0; dh < k.kh; ++dh)
          for (i64 dw = 0; dw < k.kw; ++dw) {
            const i64 kk = ((dt * k.kh + dh) * k.kw + dw) * k.c_in + i;
            w[static_cast<size_t>(o * K + kk)] = k.at(o, i, dt, dh, dw);
          }
  return w;
}

void unpack_weight_grads(const std::vector<double>& w, ConvKernel& dk) {
  for (i64 o = 0; o < dk.c_out; ++o)
    for (i64 i = 0; i < dk.c_in; ++i)
      for (i64 dt = 0; dt < dk.kt; ++dt)
        for (i64 dh = 0; dh < dk.kh; ++dh)
          for (i64 dw = 0; dw < dk.kw; ++dw) {
            const i64 kk = ((dt * dk.kh + dh) * dk.kw + dw) * dk.c_in + i;
            dk.at(o, i, dt, dh, dw) = w[static_cast<size_t>(kk * dk.c_out + o)];
          }
}

// Accumulation runs over independent output lanes (axpy form) so the
// compiler can vectorize without reordering any per-element sum; every
// kernel below keeps a fixed, thread-count-independent summation order.
constexpr i64 kAccChunk = 512;

// C[M x N] = A[M x K] * B[K x N]
void gemm_nn(i64 M, i64 N, i64 K, const double* __restrict__ A, const double* __restrict__ B,
             double* __restrict__ C) {
  double acc[kAccChunk];
  for (i64 m = 0; m < M; ++m) {
    const double* a = A + m * K;
    for (i64 n0 = 0; n0 < N; n0 += kAccChunk) {
      const i64 nb = std::min(kAccChunk, N - n0);
      for (i64 j = 0; j < nb; ++j) acc[j] = 0.0;
      for (i64 k = 0; k < K; ++k) {
        const double av = a[k];
        const double* b = B + k * N + n0;
        for (i64 j = 0; j < nb; ++j) acc[j] += av * b[j];
      }
      double* c = C + m * N + n0;
      for (i64 j = 0; j < nb; ++j) c[j] = acc[j];
    }
  }
}

// C[M x K] = A[M x N] * BT[N x K]  (BT is the [N x K] transpose of W)
void gemm_n_bt(i64 M, i64 N, i64 K, const double* __restrict__ A, const double* __restrict__ BT,
               double* __restrict__ C) {
  double acc[kAccChunk];
  for (i64 m = 0; m < M; ++m) {
    const double* a = A + m * N;
    for (i64 k0 = 0; k0 < K; k0 += kAccChunk) {
      const i64 kb = std::min(kAccChunk, K - k0);
      for (i64 j = 0; j < kb; ++j) acc[j] = 0.0;
      for (i64 n = 0; n < N; ++n) {
        const double av = a[n];
        const double* b = BT + n * K + k0;
        for (i64 j = 0; j < kb; ++j) acc[j] += av * b[j];
      }
      double* c = C + m * K + k0;
      for (i64 j = 0; j < kb; ++j) c[j] = acc[j];
    }
  }
}

// blocked out-of-place transpose, dst[K x M] from src[M x K]
void transpose(i64 M, i64 K, const double* __restrict__ src, double* __restrict__ dst) {
  constexpr i64 blk = 32;
  for (i64 m0 = 0; m0 < M; m0 += blk)
    for (i64 k0 = 0; k0 < K; k0 += blk) {
      const i64 m1 = std::min(M, m0 + blk), k1 = std::min(K, k0 + blk);
      for (i64 m = m0; m < m1; ++m)
        for (i64 k = k0; k < k1; ++k) dst[k * M + m] = src[m * K + k];
    }
}

// adjoint kernel for backward-data: swap in/out channels and flip the taps
ConvKernel transpose_flip(const ConvKernel& k) {
  ConvKernel out(k.c_in, k.c_out, k.kt, k.kh, k.kw);
  for (i64 o = 0; o < k.c_out; ++o)
    for (i64 i = 0; i < k.c_in; ++i)
      for (i64 dt = 0; dt < k.kt; ++dt)
        for (i64 dh = 0; dh < k.kh; ++dh)
          for (i64 dw = 0; dw < k.kw; ++dw)
            out.at(i, o, k.kt - 1 - dt, k.kh - 1 - dh, k.kw - 1 - dw) = k.at(o, i, dt, dh, dw);
  return out;
}

void check_conv_args(const Tensor& x, const ConvKernel& k, Padding pad) {
  check(x.shape.c == k.c_in, "conv3d: input has " + std::to_string(x.shape.c) +
                                 " channels but kernel expects " + std::to_string(k.c_in));
  if (pad == Padding::Valid)
    check(x.shape.t >= k.kt && x.shape.h >= k.kh && x.shape.w >= k.kw,
          "conv3d: kernel larger than input with valid padding");
}

}  // namespace

i64 conv_out_extent(i64 in, i64 k, i64 stride, Padding pad) {
  check(stride >= 1, "conv: stride must be >= 1");
  if (pad == Padding::Same) return (in - 1) / stride + 1;
  check(in >= k, "conv: kernel larger than input with valid padding");
  return (in - k) / stride + 1;
}

bool pointwise_unit_stride(const ConvKernel& k, Stride3 s) {
  return k.taps() == 1 && s.t == 1 && s.h == 1 && s.w == 1;
}

Tensor conv3d(const Tensor& x, const ConvKernel& kernel, Stride3 stride, Padding pad) {
  check_conv_args(x, kernel, pad);
  const Geometry g = make_geometry(x.shape, kernel, stride, pad);
  Tensor y(Shape5{x.shape.n, g.ot, g.oh, g.ow, kernel.c_out});

  const std::vector<double> w = pack_weights(kernel);
  const i64 K = kernel.taps() * kernel.c_in;
  const i64 vox = g.out_voxels();

  if (pointwise_unit_stride(kernel, stride)) {
    // channels-last 1x1x1 conv: the input already is the im2col matrix
    gemm_nn(x.shape.n * vox, kernel.c_out, K, x.data.data(), w.data(), y.data.data());
    return y;
  }

  parallel_for(x.shape.n, [&](i64 n0, i64 n1) {
    std::vector<double> cols(static_cast<size_t>(vox * K));
    for (i64 n = n0; n < n1; ++n) {
      im2col_sample(x, n, kernel, stride, g, cols.data());
      gemm_nn(vox, kernel.c_out, K, cols.data(), w.data(),
              y.data.data() + n * vox * kernel.c_out);
    }
  });
  return y;
}

Conv3dGrads conv3d_backward(const Tensor& x, const ConvKernel& kernel, Stride3 stride, Padding pad,
                            const Tensor& dy) {
  check_conv_args(x, kernel, pad);
  const Geometry g = make_geometry(x.shape, kernel, stride, pad);
  check(dy.shape == Shape5{x.shape.n, g.ot, g.oh, g.ow, kernel.c_out},
        "conv3d_backward: dy shape mismatch");

  Conv3dGrads grads{Tensor(),
                    ConvKernel(kernel.c_out, kernel.c_in, kernel.kt, kernel.kh, kernel.kw)};
  const i64 K = kernel.taps() * kernel.c_in;
  const i64 vox = g.out_voxels();

  if (pointwise_unit_stride(kernel, stride)) {
    const i64 rows = x.shape.n * vox;
    grads.dx = Tensor(x.shape);
    const std::vector<double> wt1 = pack_weights_t(kernel);
    gemm_n_bt(rows, kernel.c_out, K, dy.data.data(), wt1.data(), grads.dx.data.data());
    std::vector<double> dy_t(static_cast<size_t>(rows * kernel.c_out));
    transpose(rows, kernel.c_out, dy.data.data(), dy_t.data());
    // [c_out x c_in] result lands directly in the kernel layout
    gemm_nn(kernel.c_out, K, rows, dy_t.data(), x.data.data(), grads.dkernel.data.data());
    return grads;
  }

  const bool unit_stride_same =
      pad == Padding::Same && stride.t == 1 && stride.h == 1 && stride.w == 1;
  std::vector<double> wt;
  if (unit_stride_same) {
    // backward-data of a same-padded unit-stride conv is itself such a conv
    grads.dx = conv3d(dy, transpose_flip(kernel), {}, Padding::Same);
  } else {
    grads.dx = Tensor::zeros(x.shape);
    wt = pack_weights_t(kernel);
  }

  // per-sample weight-grad buffers, reduced in sample order afterwards
  std::vector<std::vector<double>> dw_per_sample(static_cast<size_t>(x.shape.n));

  const i64 C = kernel.c_out;
  parallel_for(x.shape.n, [&](i64 n0, i64 n1) {
    std::vector<double> cols(static_cast<size_t>(vox * K));
    std::vector<double> dy_t(static_cast<size_t>(vox * C));
    std::vector<double> dw_t(static_cast<size_t>(C * K));
    std::vector<double> dcols;
    for (i64 n = n0; n < n1; ++n) {
      const double* dy_n = dy.data.data() + n * vox * C;
      im2col_sample(x, n, kernel, stride, g, cols.data());

      // dW^T = dY^T * cols, then a small transpose back into [K x c_out]
      transpose(vox, C, dy_n, dy_t.data());
      std::fill(dw_t.begin(), dw_t.end(), 0.0);
      gemm_nn(C, K, vox, dy_t.data(), cols.data(), dw_t.data());
      auto& dw = dw_per_sample[static_cast<size_t>(n)];
      dw.resize(static_cast<size_t>(K * C));
      transpose(C, K, dw_t.data(), dw.data());

      if (!unit_stride_same) {
        dcols.resize(static_cast<size_t>(vox * K));
        gemm_n_bt(vox, C, K, dy_n, wt.data(), dcols.data());
        col2im_sample(dcols.data(), n, kernel, stride, g, grads.dx);
      }
    }
  });

  std::vector<double> dw_total(static_cast<size_t>(K * kernel.c_out), 0.0);
  for (const auto& dw : dw_per_sample)
    for (size_t i = 0; i < dw.size(); ++i) dw_total[i] += dw[i];
  unpack_weight_grads(dw_total, grads.dkernel);
  return grads;
}

namespace {

struct PoolGeometry {
  i64 pt, ph, pw, ot, oh, ow;
};

PoolGeometry pool_geometry(const Shape5& in, Window3 win, Stride3 s, Padding pad) {
  PoolGeometry g{};
  if (pad == Padding::Same) {
    check(win.t % 2 == 1 && win.h % 2 == 1 && win.w % 2 == 1,
          "max_pool: same padding requires odd window extents");
    g.pt = (win.t - 1) / 2;
    g.ph = (win.h - 1) / 2;
    g.pw = (win.w - 1) / 2;
    g.ot = (in.t - 1) / s.t + 1;
    g.oh = (in.h - 1) / s.h + 1;
    g.ow = (in.w - 1) / s.w + 1;
  } else {
    check(in.t >= win.t && in.h >= win.h && in.w >= win.w,
          "max_pool: window larger than input with valid padding");
    g.ot = (in.t - win.t) / s.t + 1;
    g.oh = (in.h - win.h) / s.h + 1;
    g.ow = (in.w - win.w) / s.w + 1;
  }
  return g;
}

}  // namespace

Tensor max_pool(const Tensor& x, Window3 win, Stride3 stride, Padding pad) {
  const PoolGeometry g = pool_geometry(x.shape, win, stride, pad);
  Tensor y(Shape5{x.shape.n, g.ot, g.oh, g.ow, x.shape.c});
  parallel_for(x.shape.n, [&](i64 n0, i64 n1) {
    for (i64 n = n0; n < n1; ++n)
      for (i64 ot = 0; ot < g.ot; ++ot)
        for (i64 oh = 0; oh < g.oh; ++oh)
          for (i64 ow = 0; ow < g.ow; ++ow)
            for (i64 c = 0; c < x.shape.c; ++c) {
              double best = -std::numeric_limits<double>::infinity();
              for (i64 dt = 0; dt < win.t; ++dt) {
                const i64 t = ot * stride.t - g.pt + dt;
                if (t < 0 || t >= x.shape.t) continue;
                for (i64 dh = 0; dh < win.h; ++dh) {
                  const i64 h = oh * stride.h - g.ph + dh;
                  if (h < 0 || h >= x.shape.h) continue;
                  for (i64 dw = 0; dw < win.w; ++dw) {
                    const i64 w = ow * stride.w - g.pw + dw;
                    if (w < 0 || w >= x.shape.w) continue;
                    best = std::max(best, x.at(n, t, h, w, c));
                  }
                }
              }
              y.at(n, ot, oh, ow, c) = best;
            }
  });
  return y;
}

Tensor max_pool_backward(const Tensor& x, Window3 win, Stride3 stride, Padding pad,
                         const Tensor& dy) {
  const PoolGeometry g = pool_geometry(x.shape, win, stride, pad);
  check(dy.shape == Shape5{x.shape.n, g.ot, g.oh, g.ow, x.shape.c},
        "max_pool_backward: dy shape mismatch");
  Tensor dx = Tensor::zeros(x.shape);
  parallel_for(x.shape.n, [&](i64 n0, i64 n1) {
    for (i64 n = n0; n < n1; ++n)
      for (i64 ot = 0; ot < g.ot; ++ot)
        for (i64 oh = 0; oh < g.oh; ++oh)
          for (i64 ow = 0; ow < g.ow; ++ow)
            for (i64 c = 0; c < x.shape.c; ++c) {
              double best = -std::numeric_limits<double>::infinity();
              i64 bt = -1, bh = -1, bw = -1;
              for (i64 dt = 0; dt < win.t; ++dt) {
                const i64 t = ot * stride.t - g.pt + dt;
                if (t < 0 || t >= x.shape.t) continue;
                for (i64 dh = 0; dh < win.h; ++dh) {
                  const i64 h = oh * stride.h - g.ph + dh;
                  if (h < 0 || h >= x.shape.h) continue;
                  for (i64 dw = 0; dw < win.w; ++dw) {
                    const i64 w = ow * stride.w - g.pw + dw;
                    if (w < 0 || w >= x.shape.w) continue;
                    const double v = x.at(n, t, h, w, c);
                    if (v > best) {
                      best = v;
                      bt = t; bh = h; bw = w;
                    }
                  }
                }
              }
              dx.at(n, bt, bh, bw, c) += dy.at(n, ot, oh, ow, c);
            }
  });
  return dx;
}

Matrix global_max_pool_thw(const Tensor& x) {
  Matrix out(x.shape.n, x.shape.c, -std::numeric_limits<double>::infinity());
  for (i64 n = 0; n < x.shape.n; ++n) {
    const double* p = x.data.data() + n * x.shape.t * x.shape.h * x.shape.w * x.shape.c;
    const i64 vox = x.shape.t * x.shape.h * x.shape.w;
    for (i64 v = 0; v < vox; ++v, p += x.shape.c)
      for (i64 c = 0; c < x.shape.c; ++c) out.at(n, c) = std::max(out.at(n, c), p[c]);
  }
  return out;
}

Tensor global_max_pool_thw_backward(const Tensor& x, const Matrix& dy) {
  check(dy.rows == x.shape.n && dy.cols == x.shape.c, "global_max_pool backward: shape mismatch");
  Tensor dx = Tensor::zeros(x.shape);
  for (i64 n = 0; n < x.shape.n; ++n)
    for (i64 c = 0; c < x.shape.c; ++c) {
      double best = -std::numeric_limits<double>::infinity();
      i64 bt = 0, bh = 0, bw = 0;
      for (i64 t = 0; t < x.shape.t; ++t)
        for (i64 h = 0; h < x.shape.h; ++h)
          for (i64 w = 0; w < x.shape.w; ++w) {
            const double v = x.at(n, t, h, w, c);
            if (v > best) {
              best = v;
              bt = t; bh = h; bw = w;
            }
          }
      dx.at(n, bt, bh, bw, c) += dy.at(n, c);
    }
  return dx;
}

Matrix global_avg_pool_thw(const Tensor& x) {
  Matrix out(x.shape.n, x.shape.c);
  const i64 vox = x.shape.t * x.shape.h * x.shape.w;
  for (i64 n = 0; n < x.shape.n; ++n) {
    const double* p = x.data.data() + n * vox * x.shape.c;
    for (i64 v = 0; v < vox; ++v, p += x.shape.c)
      for (i64 c = 0; c < x.shape.c; ++c) out.at(n, c) += p[c];
    for (i64 c = 0; c < x.shape.c; ++c) out.at(n, c) /= static_cast<double>(vox);
  }
  return out;
}

Tensor global_avg_pool_thw_backward(Shape5 x_shape, const Matrix& dy) {
  check(dy.rows == x_shape.n && dy.cols == x_shape.c, "global_avg_pool backward: shape mismatch");
  Tensor dx(x_shape);
  const i64 vox = x_shape.t * x_shape.h * x_shape.w;
  const double inv = 1.0 / static_cast<double>(vox);
  for (i64 n = 0; n < x_shape.n; ++n) {
    double* p = dx.data.data() + n * vox * x_shape.c;
    for (i64 v = 0; v < vox; ++v, p += x_shape.c)
      for (i64 c = 0; c < x_shape.c; ++c) p[c] = dy.at(n, c) * inv;
  }
  return dx;
}

}  // namespace cost
