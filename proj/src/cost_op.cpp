#include "cost/cost_op.hpp"

#include <cmath>

#include "cost/conv.hpp"
#include "cost/nn.hpp"
#include "cost/parallel.hpp"

namespace cost {

const char* view_name(View v) {
  switch (v) {
    case View::HW: return "hw";
    case View::TW: return "tw";
    case View::TH: return "th";
  }
  return "?";
}

ConvKernel materialize_view(const SharedKernel& sk, View v) {
  const i64 k = sk.k;
  ConvKernel out;
  switch (v) {
    case View::HW: out = ConvKernel(sk.c_out, sk.c_in, 1, k, k); break;
    case View::TW: out = ConvKernel(sk.c_out, sk.c_in, k, 1, k); break;
    case View::TH: out = ConvKernel(sk.c_out, sk.c_in, k, k, 1); break;
  }
  for (i64 o = 0; o < sk.c_out; ++o)
    for (i64 i = 0; i < sk.c_in; ++i)
      for (i64 a = 0; a < k; ++a)
        for (i64 b = 0; b < k; ++b) {
          const double w = sk.at(o, i, a, b);
          switch (v) {
            case View::HW: out.at(o, i, 0, a, b) = w; break;  // a->H, b->W
            case View::TW: out.at(o, i, a, 0, b) = w; break;  // a->T, b->W
            case View::TH: out.at(o, i, a, b, 0) = w; break;  // a->T, b->H
          }
        }
  return out;
}

void accumulate_view_grad(const ConvKernel& dview, View v, SharedKernel& acc) {
  const i64 k = acc.k;
  for (i64 o = 0; o < acc.c_out; ++o)
    for (i64 i = 0; i < acc.c_in; ++i)
      for (i64 a = 0; a < k; ++a)
        for (i64 b = 0; b < k; ++b) {
          double g = 0.0;
          switch (v) {
            case View::HW: g = dview.at(o, i, 0, a, b); break;
            case View::TW: g = dview.at(o, i, a, 0, b); break;
            case View::TH: g = dview.at(o, i, a, b, 0); break;
          }
          acc.at(o, i, a, b) += g;
        }
}

ViewTriple conv_three_views(const Tensor& x, const SharedKernel& kernel, Stride3 stride) {
  check(x.shape.c == kernel.c_in, "conv_three_views: channel mismatch");
  check(stride.t == 1, "conv_three_views: temporal stride is not supported");
  ViewTriple out;
  for (View v : kViews)
    out[v] = conv3d(x, materialize_view(kernel, v), stride, Padding::Same);
  return out;
}

ThreeViewGrads conv_three_views_backward(const Tensor& x, const SharedKernel& kernel,
                                         Stride3 stride, const ViewTriple& dviews) {
  ThreeViewGrads g{Tensor::zeros(x.shape), SharedKernel(kernel.c_out, kernel.c_in, kernel.k)};
  for (View v : kViews) {
    Conv3dGrads cg = conv3d_backward(x, materialize_view(kernel, v), stride, Padding::Same,
                                     dviews[v]);
    add_inplace(g.dx, cg.dx);
    accumulate_view_grad(cg.dkernel, v, g.dkernel);
  }
  return g;
}

ViewCoefficients ViewCoefficients::constant_rows(i64 c_out, std::array<double, 3> row) {
  ViewCoefficients vc{Matrix(c_out, 3)};
  for (i64 r = 0; r < c_out; ++r)
    for (i64 c = 0; c < 3; ++c) vc.values.at(r, c) = row[static_cast<size_t>(c)];
  return vc;
}

bool ViewCoefficients::row_stochastic(double tol) const {
  for (i64 r = 0; r < values.rows; ++r) {
    double sum = 0.0;
    for (i64 c = 0; c < 3; ++c) {
      const double v = values.at(r, c);
      if (!(v > 0.0 && v < 1.0)) return false;
      sum += v;
    }
    if (std::abs(sum - 1.0) > tol) return false;
  }
  return true;
}

namespace {

void check_fuse_shapes(const ViewTriple& views, i64 alpha_rows) {
  check(views.hw.shape == views.tw.shape && views.hw.shape == views.th.shape,
        "fuse_views: view shapes differ");
  check(alpha_rows == views.hw.shape.c, "fuse_views: alpha rows != channels");
}

}  // namespace

Tensor fuse_views(const ViewTriple& views, const Matrix& alpha) {
  check(alpha.cols == 3, "fuse_views: alpha must have 3 columns");
  check_fuse_shapes(views, alpha.rows);
  const i64 C = alpha.rows;
  Tensor y(views.hw.shape);
  const i64 vox = y.size() / C;
  parallel_for(vox, [&](i64 a, i64 b) {
    const double* phw = views.hw.data.data() + a * C;
    const double* ptw = views.tw.data.data() + a * C;
    const double* pth = views.th.data.data() + a * C;
    double* py = y.data.data() + a * C;
    for (i64 v = a; v < b; ++v, phw += C, ptw += C, pth += C, py += C)
      for (i64 c = 0; c < C; ++c)
        py[c] = alpha.at(c, 0) * phw[c] + alpha.at(c, 1) * ptw[c] + alpha.at(c, 2) * pth[c];
  });
  return y;
}

FuseGrads fuse_views_backward(const ViewTriple& views, const Matrix& alpha, const Tensor& dy) {
  check(alpha.cols == 3, "fuse_views_backward: alpha must have 3 columns");
  check_fuse_shapes(views, alpha.rows);
  check(dy.shape == views.hw.shape, "fuse_views_backward: dy shape mismatch");
  const i64 C = alpha.rows;
  FuseGrads g{{Tensor(views.hw.shape), Tensor(views.tw.shape), Tensor(views.th.shape)},
              Matrix(C, 3)};
  const i64 vox = dy.size() / C;
  const double* phw = views.hw.data.data();
  const double* ptw = views.tw.data.data();
  const double* pth = views.th.data.data();
  const double* pd = dy.data.data();
  double* ghw = g.dviews.hw.data.data();
  double* gtw = g.dviews.tw.data.data();
  double* gth = g.dviews.th.data.data();
  for (i64 v = 0; v < vox; ++v) {
    for (i64 c = 0; c < C; ++c) {
      const double d = pd[c];
      ghw[c] = alpha.at(c, 0) * d;
      gtw[c] = alpha.at(c, 1) * d;
      gth[c] = alpha.at(c, 2) * d;
      g.dalpha.at(c, 0) += phw[c] * d;
      g.dalpha.at(c, 1) += ptw[c] * d;
      g.dalpha.at(c, 2) += pth[c] * d;
    }
    phw += C; ptw += C; pth += C; pd += C;
    ghw += C; gtw += C; gth += C;
  }
  return g;
}

Tensor fuse_views_per_sample(const ViewTriple& views, const std::vector<Matrix>& alpha) {
  check_fuse_shapes(views, alpha.empty() ? -1 : alpha[0].rows);
  check(static_cast<i64>(alpha.size()) == views.hw.shape.n,
        "fuse_views_per_sample: one alpha per sample required");
  const i64 C = views.hw.shape.c;
  const i64 vox = views.hw.shape.t * views.hw.shape.h * views.hw.shape.w;
  Tensor y(views.hw.shape);
  parallel_for(views.hw.shape.n, [&](i64 n0, i64 n1) {
    for (i64 n = n0; n < n1; ++n) {
      const Matrix& a = alpha[static_cast<size_t>(n)];
      const i64 off = n * vox * C;
      const double* phw = views.hw.data.data() + off;
      const double* ptw = views.tw.data.data() + off;
      const double* pth = views.th.data.data() + off;
      double* py = y.data.data() + off;
      for (i64 v = 0; v < vox; ++v, phw += C, ptw += C, pth += C, py += C)
        for (i64 c = 0; c < C; ++c)
          py[c] = a.at(c, 0) * phw[c] + a.at(c, 1) * ptw[c] + a.at(c, 2) * pth[c];
    }
  });
  return y;
}

FusePerSampleGrads fuse_views_per_sample_backward(const ViewTriple& views,
                                                  const std::vector<Matrix>& alpha,
                                                  const Tensor& dy) {
  check(dy.shape == views.hw.shape, "fuse_views_per_sample_backward: dy shape mismatch");
  const i64 N = views.hw.shape.n;
  const i64 C = views.hw.shape.c;
  const i64 vox = views.hw.shape.t * views.hw.shape.h * views.hw.shape.w;
  FusePerSampleGrads g{{Tensor(views.hw.shape), Tensor(views.tw.shape), Tensor(views.th.shape)},
                       std::vector<Matrix>(static_cast<size_t>(N))};
  parallel_for(N, [&](i64 n0, i64 n1) {
    for (i64 n = n0; n < n1; ++n) {
      const Matrix& a = alpha[static_cast<size_t>(n)];
      Matrix& da = g.dalpha[static_cast<size_t>(n)];
      da = Matrix(C, 3);
      const i64 off = n * vox * C;
      const double* phw = views.hw.data.data() + off;
      const double* ptw = views.tw.data.data() + off;
      const double* pth = views.th.data.data() + off;
      const double* pd = dy.data.data() + off;
      double* ghw = g.dviews.hw.data.data() + off;
      double* gtw = g.dviews.tw.data.data() + off;
      double* gth = g.dviews.th.data.data() + off;
      for (i64 v = 0; v < vox; ++v) {
        for (i64 c = 0; c < C; ++c) {
          const double d = pd[c];
          ghw[c] = a.at(c, 0) * d;
          gtw[c] = a.at(c, 1) * d;
          gth[c] = a.at(c, 2) * d;
          da.at(c, 0) += phw[c] * d;
          da.at(c, 1) += ptw[c] * d;
          da.at(c, 2) += pth[c] * d;
        }
        phw += C; ptw += C; pth += C; pd += C;
        ghw += C; gtw += C; gth += C;
      }
    }
  });
  return g;
}

CostAResult cost_a_forward(const Tensor& x, const SharedKernel& kernel, const Matrix& logits,
                           Stride3 stride, CostACache* cache) {
  check(logits.rows == kernel.c_out && logits.cols == 3, "cost_a_forward: logits must be c_out x 3");
  ViewTriple views = conv_three_views(x, kernel, stride);
  Matrix alpha = softmax_rows(logits);
  Tensor y = fuse_views(views, alpha);
  if (cache) {
    cache->views = std::move(views);
    cache->alpha = alpha;
  }
  return {std::move(y), std::move(alpha)};
}

CostAGrads cost_a_backward(const Tensor& x, const SharedKernel& kernel, Stride3 stride,
                           const CostACache& cache, const Tensor& dy) {
  FuseGrads fg = fuse_views_backward(cache.views, cache.alpha, dy);
  ThreeViewGrads vg = conv_three_views_backward(x, kernel, stride, fg.dviews);
  Matrix dlogits = softmax_rows_backward(cache.alpha, fg.dalpha);
  return {std::move(vg.dx), std::move(vg.dkernel), std::move(dlogits)};
}

CoeffPredictorParams CoeffPredictorParams::init(i64 c_out) {
  CoeffPredictorParams p;
  // identity scaled by the fan-in factor; fc starts at zero so the initial
  // coefficients are exactly uniform
  p.conv1x1 = Matrix::identity(c_out, std::sqrt(2.0 / static_cast<double>(c_out)));
  p.fc_w = Matrix(3, 3, 0.0);
  p.fc_b = {0.0, 0.0, 0.0};
  return p;
}

CostBResult cost_b_forward(const Tensor& x, const SharedKernel& kernel,
                           const CoeffPredictorParams& pred, Stride3 stride, CostBCache* cache) {
  check(pred.conv1x1.rows == kernel.c_out && pred.conv1x1.cols == kernel.c_out,
        "cost_b_forward: conv1x1 must be c_out x c_out");
  check(pred.fc_w.rows == 3 && pred.fc_w.cols == 3, "cost_b_forward: fc must be 3x3");
  ViewTriple views = conv_three_views(x, kernel, stride);
  const i64 N = views.hw.shape.n;
  const i64 C = kernel.c_out;

  std::array<Matrix, 3> pooled, mapped;
  for (View v : kViews) {
    pooled[static_cast<size_t>(v)] = global_max_pool_thw(views[v]);
    mapped[static_cast<size_t>(v)] = linear(pooled[static_cast<size_t>(v)], pred.conv1x1, {});
  }

  std::vector<Matrix> scores(static_cast<size_t>(N)), alpha(static_cast<size_t>(N));
  for (i64 n = 0; n < N; ++n) {
    // rows of the c x 3 matrix: one per channel, columns (hw, tw, th)
    Matrix rows(C, 3);
    for (i64 c = 0; c < C; ++c)
      for (int v = 0; v < 3; ++v) rows.at(c, v) = mapped[static_cast<size_t>(v)].at(n, c);
    Matrix s = linear(rows, pred.fc_w, pred.fc_b);
    alpha[static_cast<size_t>(n)] = softmax_rows(s);
    scores[static_cast<size_t>(n)] = std::move(s);
  }

  Tensor y = fuse_views_per_sample(views, alpha);
  CostBResult out{std::move(y), alpha};
  if (cache) {
    cache->views = std::move(views);
    cache->pooled = std::move(pooled);
    cache->mapped = std::move(mapped);
    cache->scores = std::move(scores);
    cache->alpha = std::move(alpha);
  }
  return out;
}

CostBGrads cost_b_backward(const Tensor& x, const SharedKernel& kernel,
                           const CoeffPredictorParams& pred, Stride3 stride,
                           const CostBCache& cache, const Tensor& dy) {
  const i64 N = dy.shape.n;
  const i64 C = kernel.c_out;

  FusePerSampleGrads fg = fuse_views_per_sample_backward(cache.views, cache.alpha, dy);

  CostBGrads out;
  out.dconv1x1 = Matrix(C, C);
  out.dfc_w = Matrix(3, 3);

  std::array<Matrix, 3> dpooled;
  for (int v = 0; v < 3; ++v) dpooled[static_cast<size_t>(v)] = Matrix(N, C);

  for (i64 n = 0; n < N; ++n) {
    const Matrix& a = cache.alpha[static_cast<size_t>(n)];
    Matrix ds = softmax_rows_backward(a, fg.dalpha[static_cast<size_t>(n)]);

    Matrix rows(C, 3);
    for (i64 c = 0; c < C; ++c)
      for (int v = 0; v < 3; ++v) rows.at(c, v) = cache.mapped[static_cast<size_t>(v)].at(n, c);
    LinearGrads lg = linear_backward(rows, pred.fc_w, ds);
    for (i64 r = 0; r < 3; ++r)
      for (i64 c = 0; c < 3; ++c) out.dfc_w.at(r, c) += lg.dw.at(r, c);
    for (int v = 0; v < 3; ++v) out.dfc_b[static_cast<size_t>(v)] += lg.db[static_cast<size_t>(v)];
    // lg.dx rows are per channel, columns are views -> gradient of mapped
    for (int v = 0; v < 3; ++v)
      for (i64 c = 0; c < C; ++c) {
        // dmapped[n][c] for view v
        const double dm = lg.dx.at(c, v);
        // mapped = pooled * conv1x1 : accumulate both factors
        for (i64 j = 0; j < C; ++j) {
          out.dconv1x1.at(j, c) += cache.pooled[static_cast<size_t>(v)].at(n, j) * dm;
          dpooled[static_cast<size_t>(v)].at(n, j) += dm * pred.conv1x1.at(j, c);
        }
      }
  }

  ViewTriple dviews = std::move(fg.dviews);
  for (View v : kViews) {
    Tensor dpool_v =
        global_max_pool_thw_backward(cache.views[v], dpooled[static_cast<size_t>(v)]);
    add_inplace(dviews[v], dpool_v);
  }
  ThreeViewGrads vg = conv_three_views_backward(x, kernel, stride, dviews);
  out.dx = std::move(vg.dx);
  out.dkernel = std::move(vg.dkernel);
  return out;
}

Tensor cost_fused_forward_optimized(const Tensor& x, const SharedKernel& kernel,
                                    const Matrix& alpha) {
  check(alpha.rows == kernel.c_out && alpha.cols == 3,
        "cost_fused_forward_optimized: alpha must be c_out x 3");
  check(x.shape.c == kernel.c_in, "cost_fused_forward_optimized: channel mismatch");
  const i64 k = kernel.k;
  const i64 mid = (k - 1) / 2;
  const i64 C = kernel.c_out;

  // Distinct taps of the masked cubic kernel and, per output channel, the
  // coefficient-weighted value at each tap. Center-column overlaps sum.
  struct Tap {
    i64 dt, dh, dw;
  };
  std::vector<Tap> taps;
  std::vector<std::vector<double>> tap_w;  // [tap][c_out * c_in]
  for (i64 dt = 0; dt < k; ++dt)
    for (i64 dh = 0; dh < k; ++dh)
      for (i64 dw = 0; dw < k; ++dw) {
        const bool in_hw = (dt == mid);
        const bool in_tw = (dh == mid);
        const bool in_th = (dw == mid);
        if (!in_hw && !in_tw && !in_th) continue;  // the 8 corner blocks stay zero
        std::vector<double> wv(static_cast<size_t>(C * kernel.c_in), 0.0);
        for (i64 o = 0; o < C; ++o)
          for (i64 i = 0; i < kernel.c_in; ++i) {
            double w = 0.0;
            if (in_hw) w += alpha.at(o, 0) * kernel.at(o, i, dh, dw);
            if (in_tw) w += alpha.at(o, 1) * kernel.at(o, i, dt, dw);
            if (in_th) w += alpha.at(o, 2) * kernel.at(o, i, dt, dh);
            wv[static_cast<size_t>(o * kernel.c_in + i)] = w;
          }
        taps.push_back({dt, dh, dw});
        tap_w.push_back(std::move(wv));
      }
  check(static_cast<i64>(taps.size()) == 3 * k * k - 3 * k + 1,
        "cost_fused_forward_optimized: unexpected tap count");

  Tensor y(Shape5{x.shape.n, x.shape.t, x.shape.h, x.shape.w, C});
  parallel_for(x.shape.n, [&](i64 n0, i64 n1) {
    for (i64 n = n0; n < n1; ++n)
      for (i64 t = 0; t < x.shape.t; ++t)
        for (i64 h = 0; h < x.shape.h; ++h)
          for (i64 w = 0; w < x.shape.w; ++w) {
            double* py = &y.at(n, t, h, w, 0);
            for (size_t ti = 0; ti < taps.size(); ++ti) {
              const i64 it = t - mid + taps[ti].dt;
              const i64 ih = h - mid + taps[ti].dh;
              const i64 iw = w - mid + taps[ti].dw;
              if (it < 0 || it >= x.shape.t || ih < 0 || ih >= x.shape.h || iw < 0 ||
                  iw >= x.shape.w)
                continue;
              const double* px = &x.at(n, it, ih, iw, 0);
              const double* wv = tap_w[ti].data();
              for (i64 o = 0; o < C; ++o) {
                double acc = 0.0;
                for (i64 i = 0; i < kernel.c_in; ++i) acc += px[i] * wv[o * kernel.c_in + i];
                py[o] += acc;
              }
            }
          }
  });
  return y;
}

}  // namespace cost
