#include "cost/units.hpp"

#include <cmath>

#include "cost/conv.hpp"

namespace cost {

const char* unit_kind_name(UnitKind k) {
  switch (k) {
    case UnitKind::C2D: return "c2d";
    case UnitKind::C3D_311: return "c3d311";
    case UnitKind::C3D_333: return "c3d333";
    case UnitKind::CoST_a: return "cost-a";
    case UnitKind::CoST_b: return "cost-b";
  }
  return "?";
}

UnitKind unit_kind_from_string(const std::string& s) {
  if (s == "c2d") return UnitKind::C2D;
  if (s == "c3d311") return UnitKind::C3D_311;
  if (s == "c3d333") return UnitKind::C3D_333;
  if (s == "cost-a") return UnitKind::CoST_a;
  if (s == "cost-b") return UnitKind::CoST_b;
  throw std::invalid_argument("unknown unit kind: " + s);
}

void ConvParam::init(i64 co, i64 ci, i64 kt, i64 kh, i64 kw, Rng& rng) {
  w = ConvKernel(co, ci, kt, kh, kw);
  const double std = std::sqrt(2.0 / static_cast<double>(ci * kt * kh * kw));
  rng.fill_normal(w.data, std);
  g = ConvKernel(co, ci, kt, kh, kw);
}

void BnParam::init(i64 c) {
  bn = BatchNorm(c);
  dgamma.assign(static_cast<size_t>(c), 0.0);
  dbeta.assign(static_cast<size_t>(c), 0.0);
}

void SharedKernelParam::init(i64 co, i64 ci, i64 k, Rng& rng) {
  w = SharedKernel(co, ci, k);
  const double std = std::sqrt(2.0 / static_cast<double>(ci * k * k));
  rng.fill_normal(w.w, std);
  g = SharedKernel(co, ci, k);
}

// ---------------------------------------------------------------------------
// CostOp

CostOp CostOp::make(bool variant_b, i64 c_in, i64 c_out, i64 k, bool share, Rng& rng) {
  CostOp op;
  op.variant_b = variant_b;
  op.share_weights = share;
  op.c_in = c_in;
  op.c_out = c_out;
  op.k = k;
  if (share) {
    op.shared.init(c_out, c_in, k, rng);
  } else {
    for (auto& pv : op.per_view) pv.init(c_out, c_in, k, rng);
  }
  if (variant_b) {
    CoeffPredictorParams p = CoeffPredictorParams::init(c_out);
    op.pred_conv1x1.w = std::move(p.conv1x1);
    op.pred_conv1x1.g = Matrix(c_out, c_out);
    op.pred_fc_w.w = std::move(p.fc_w);
    op.pred_fc_w.g = Matrix(3, 3);
    op.pred_fc_b.w.assign(3, 0.0);
    op.pred_fc_b.g.assign(3, 0.0);
  } else {
    // zero logits -> exactly uniform 1/3 coefficients at the start
    op.logits.w = Matrix(c_out, 3, 0.0);
    op.logits.g = Matrix(c_out, 3);
  }
  return op;
}

void CostOp::inject(const Matrix& alpha, bool raw) {
  check(alpha.cols == 3, "inject_coefficients: rows must have length 3");
  check(alpha.rows == c_out, "inject_coefficients: row count must equal output channels");
  if (!raw)
    check(ViewCoefficients{alpha}.row_stochastic(),
          "inject_coefficients: matrix is not row-stochastic (pass raw=true to force)");
  injected = alpha;
}

ViewTriple CostOp::run_views(const Tensor& x, Stride3 stride) const {
  if (share_weights) return conv_three_views(x, shared.w, stride);
  ViewTriple out;
  for (View v : kViews)
    out[v] = conv3d(x, materialize_view(per_view[static_cast<size_t>(v)].w, v), stride,
                    Padding::Same);
  return out;
}

ThreeViewGrads CostOp::views_backward(const Tensor& x, Stride3 stride, const ViewTriple& dviews) {
  if (share_weights) {
    ThreeViewGrads g = conv_three_views_backward(x, shared.w, stride, dviews);
    for (size_t i = 0; i < shared.g.w.size(); ++i) shared.g.w[i] += g.dkernel.w[i];
    return g;
  }
  ThreeViewGrads total{Tensor::zeros(x.shape), SharedKernel(c_out, c_in, k)};
  for (View v : kViews) {
    auto& pv = per_view[static_cast<size_t>(v)];
    Conv3dGrads cg =
        conv3d_backward(x, materialize_view(pv.w, v), stride, Padding::Same, dviews[v]);
    add_inplace(total.dx, cg.dx);
    SharedKernel dk(c_out, c_in, k);
    accumulate_view_grad(cg.dkernel, v, dk);
    for (size_t i = 0; i < pv.g.w.size(); ++i) pv.g.w[i] += dk.w[i];
  }
  return total;
}

Tensor CostOp::forward(const Tensor& x, Stride3 stride, Cache* cache) const {
  ViewTriple views = run_views(x, stride);
  const i64 N = views.hw.shape.n;

  std::vector<Matrix> alpha;
  bool constant = true;
  std::array<Matrix, 3> pooled, mapped;
  if (injected) {
    alpha.assign(static_cast<size_t>(N), *injected);
  } else if (!variant_b) {
    alpha.assign(static_cast<size_t>(N), softmax_rows(logits.w));
  } else {
    constant = false;
    for (View v : kViews) {
      pooled[static_cast<size_t>(v)] = global_max_pool_thw(views[v]);
      mapped[static_cast<size_t>(v)] = linear(pooled[static_cast<size_t>(v)], pred_conv1x1.w, {});
    }
    alpha.resize(static_cast<size_t>(N));
    for (i64 n = 0; n < N; ++n) {
      Matrix rows(c_out, 3);
      for (i64 c = 0; c < c_out; ++c)
        for (int v = 0; v < 3; ++v) rows.at(c, v) = mapped[static_cast<size_t>(v)].at(n, c);
      alpha[static_cast<size_t>(n)] = softmax_rows(linear(rows, pred_fc_w.w, pred_fc_b.w));
    }
  }

  Tensor y = fuse_views_per_sample(views, alpha);
  if (cache) {
    cache->views = std::move(views);
    cache->alpha = std::move(alpha);
    cache->alpha_is_constant = constant;
    cache->pooled = std::move(pooled);
    cache->mapped = std::move(mapped);
  }
  return y;
}

Tensor CostOp::backward(const Tensor& x, Stride3 stride, const Cache& cache, const Tensor& dy) {
  FusePerSampleGrads fg = fuse_views_per_sample_backward(cache.views, cache.alpha, dy);
  ViewTriple dviews = std::move(fg.dviews);
  const i64 N = dy.shape.n;

  if (injected) {
    // coefficients are constants in test mode
  } else if (!variant_b) {
    // all samples share one alpha; softmax backward on the summed dalpha
    Matrix dalpha(c_out, 3);
    for (const Matrix& da : fg.dalpha)
      for (size_t i = 0; i < dalpha.data.size(); ++i) dalpha.data[i] += da.data[i];
    Matrix dl = softmax_rows_backward(cache.alpha[0], dalpha);
    for (size_t i = 0; i < logits.g.data.size(); ++i) logits.g.data[i] += dl.data[i];
  } else {
    std::array<Matrix, 3> dpooled;
    for (int v = 0; v < 3; ++v) dpooled[static_cast<size_t>(v)] = Matrix(N, c_out);
    for (i64 n = 0; n < N; ++n) {
      Matrix ds = softmax_rows_backward(cache.alpha[static_cast<size_t>(n)],
                                        fg.dalpha[static_cast<size_t>(n)]);
      Matrix rows(c_out, 3);
      for (i64 c = 0; c < c_out; ++c)
        for (int v = 0; v < 3; ++v)
          rows.at(c, v) = cache.mapped[static_cast<size_t>(v)].at(n, c);
      LinearGrads lg = linear_backward(rows, pred_fc_w.w, ds);
      for (size_t i = 0; i < pred_fc_w.g.data.size(); ++i) pred_fc_w.g.data[i] += lg.dw.data[i];
      for (size_t i = 0; i < 3; ++i) pred_fc_b.g[i] += lg.db[i];
      for (int v = 0; v < 3; ++v)
        for (i64 c = 0; c < c_out; ++c) {
          const double dm = lg.dx.at(c, v);
          for (i64 j = 0; j < c_out; ++j) {
            pred_conv1x1.g.at(j, c) += cache.pooled[static_cast<size_t>(v)].at(n, j) * dm;
            dpooled[static_cast<size_t>(v)].at(n, j) += dm * pred_conv1x1.w.at(j, c);
          }
        }
    }
    for (View v : kViews) {
      Tensor dpool =
          global_max_pool_thw_backward(cache.views[v], dpooled[static_cast<size_t>(v)]);
      add_inplace(dviews[v], dpool);
    }
  }

  return views_backward(x, stride, dviews).dx;
}

void CostOp::visit_params(const std::string& prefix, const ParamVisitor& fn) {
  auto emit = [&](const std::string& name, std::vector<double>& v, std::vector<double>& g,
                  bool decay, std::vector<i64> dims) {
    fn(ParamRef{prefix + name, v.data(), g.data(), static_cast<i64>(v.size()), decay,
                std::move(dims)});
  };
  if (share_weights) {
    emit("shared_kernel", shared.w.w, shared.g.w, true, {c_out, c_in, k, k});
  } else {
    emit("kernel_hw", per_view[0].w.w, per_view[0].g.w, true, {c_out, c_in, k, k});
    emit("kernel_tw", per_view[1].w.w, per_view[1].g.w, true, {c_out, c_in, k, k});
    emit("kernel_th", per_view[2].w.w, per_view[2].g.w, true, {c_out, c_in, k, k});
  }
  if (variant_b) {
    emit("pred_conv1x1", pred_conv1x1.w.data, pred_conv1x1.g.data, true, {c_out, c_out});
    emit("pred_fc_w", pred_fc_w.w.data, pred_fc_w.g.data, true, {3, 3});
    emit("pred_fc_b", pred_fc_b.w, pred_fc_b.g, false, {3});
  } else {
    emit("coeff_logits", logits.w.data, logits.g.data, false, {c_out, 3});
  }
}

void CostOp::zero_grads() {
  auto z = [](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); };
  z(shared.g.w);
  for (auto& pv : per_view) z(pv.g.w);
  z(logits.g.data);
  z(pred_conv1x1.g.data);
  z(pred_fc_w.g.data);
  z(pred_fc_b.g);
}

// ---------------------------------------------------------------------------
// ResidualUnit

ResidualUnit ResidualUnit::make(UnitKind kind, i64 c_in, i64 c_mid, i64 c_out, Stride3 stride,
                                u64 seed, i64 k, bool share_weights, bool zero_final_gamma) {
  Rng rng(seed);
  return make(kind, c_in, c_mid, c_out, stride, rng, k, share_weights, zero_final_gamma);
}

ResidualUnit ResidualUnit::make(UnitKind kind, i64 c_in, i64 c_mid, i64 c_out, Stride3 stride,
                                Rng& rng, i64 k, bool share_weights, bool zero_final_gamma) {
  check(stride.t == 1, "ResidualUnit: temporal striding is not supported");
  ResidualUnit u;
  u.kind = kind;
  u.c_in = c_in;
  u.c_mid = c_mid;
  u.c_out = c_out;
  u.k = k;
  u.stride = stride;

  const i64 kt1 = (kind == UnitKind::C3D_311) ? 3 : 1;
  u.conv1.init(c_mid, c_in, kt1, 1, 1, rng);
  u.bn1.init(c_mid);

  switch (kind) {
    case UnitKind::C2D:
    case UnitKind::C3D_311:
      u.mid.init(c_mid, c_mid, 1, k, k, rng);
      break;
    case UnitKind::C3D_333:
      u.mid.init(c_mid, c_mid, k, k, k, rng);
      break;
    case UnitKind::CoST_a:
    case UnitKind::CoST_b:
      u.cost = CostOp::make(kind == UnitKind::CoST_b, c_mid, c_mid, k, share_weights, rng);
      break;
  }
  u.bn2.init(c_mid);
  u.conv3.init(c_out, c_mid, 1, 1, 1, rng);
  u.bn3.init(c_out);
  if (zero_final_gamma) std::fill(u.bn3.bn.gamma.begin(), u.bn3.bn.gamma.end(), 0.0);

  u.has_proj = (c_in != c_out) || stride.h != 1 || stride.w != 1;
  if (u.has_proj) {
    u.proj.init(c_out, c_in, 1, 1, 1, rng);
    u.proj_bn.init(c_out);
  }
  return u;
}

Tensor ResidualUnit::forward(const Tensor& x, Mode mode, bool update_running, Cache* cache) {
  check(x.shape.c == c_in, "ResidualUnit: input has " + std::to_string(x.shape.c) +
                               " channels, expected " + std::to_string(c_in));
  Tensor c1_out = conv3d(x, conv1.w, Stride3{}, Padding::Same);
  Tensor b1 = batch_norm_forward(bn1.bn, c1_out, mode, update_running,
                                 cache ? &cache->bn1c : nullptr);
  Tensor r1 = relu(b1);

  Tensor mid_out;
  if (cost) {
    mid_out = cost->forward(r1, stride, cache ? &cache->costc : nullptr);
  } else {
    mid_out = conv3d(r1, mid.w, stride, Padding::Same);
  }
  Tensor b2 = batch_norm_forward(bn2.bn, mid_out, mode, update_running,
                                 cache ? &cache->bn2c : nullptr);
  Tensor r2 = relu(b2);

  Tensor c3_out = conv3d(r2, conv3.w, Stride3{}, Padding::Same);
  Tensor b3 = batch_norm_forward(bn3.bn, c3_out, mode, update_running,
                                 cache ? &cache->bn3c : nullptr);

  Tensor proj_out, shortcut;
  if (has_proj) {
    proj_out = conv3d(x, proj.w, stride, Padding::Same);
    shortcut = batch_norm_forward(proj_bn.bn, proj_out, mode, update_running,
                                  cache ? &cache->projc : nullptr);
  } else {
    shortcut = x;
  }
  add_inplace(b3, shortcut);
  Tensor y = relu(b3);

  if (cache) {
    cache->x = x;
    cache->c1_out = std::move(c1_out);
    cache->r1 = std::move(r1);
    cache->mid_out = std::move(mid_out);
    cache->r2 = std::move(r2);
    cache->c3_out = std::move(c3_out);
    cache->proj_out = std::move(proj_out);
    cache->y = y;
  }
  return y;
}

Tensor ResidualUnit::backward(const Cache& cc, const Tensor& dy) {
  Tensor dsum = relu_backward(cc.y, dy);

  // main branch
  BnGrads g3 = batch_norm_backward(bn3.bn, cc.bn3c, cc.c3_out, dsum, Mode::Train);
  for (size_t i = 0; i < bn3.dgamma.size(); ++i) {
    bn3.dgamma[i] += g3.dgamma[i];
    bn3.dbeta[i] += g3.dbeta[i];
  }
  Conv3dGrads c3g = conv3d_backward(cc.r2, conv3.w, Stride3{}, Padding::Same, g3.dx);
  for (size_t i = 0; i < conv3.g.data.size(); ++i) conv3.g.data[i] += c3g.dkernel.data[i];

  Tensor dr2 = relu_backward(cc.r2, c3g.dx);
  BnGrads g2 = batch_norm_backward(bn2.bn, cc.bn2c, cc.mid_out, dr2, Mode::Train);
  for (size_t i = 0; i < bn2.dgamma.size(); ++i) {
    bn2.dgamma[i] += g2.dgamma[i];
    bn2.dbeta[i] += g2.dbeta[i];
  }

  Tensor dr1;
  if (cost) {
    dr1 = cost->backward(cc.r1, stride, cc.costc, g2.dx);
  } else {
    Conv3dGrads mg = conv3d_backward(cc.r1, mid.w, stride, Padding::Same, g2.dx);
    for (size_t i = 0; i < mid.g.data.size(); ++i) mid.g.data[i] += mg.dkernel.data[i];
    dr1 = std::move(mg.dx);
  }

  Tensor db1 = relu_backward(cc.r1, dr1);
  BnGrads g1 = batch_norm_backward(bn1.bn, cc.bn1c, cc.c1_out, db1, Mode::Train);
  for (size_t i = 0; i < bn1.dgamma.size(); ++i) {
    bn1.dgamma[i] += g1.dgamma[i];
    bn1.dbeta[i] += g1.dbeta[i];
  }
  Conv3dGrads c1g = conv3d_backward(cc.x, conv1.w, Stride3{}, Padding::Same, g1.dx);
  for (size_t i = 0; i < conv1.g.data.size(); ++i) conv1.g.data[i] += c1g.dkernel.data[i];
  Tensor dx = std::move(c1g.dx);

  // shortcut branch
  if (has_proj) {
    BnGrads gp = batch_norm_backward(proj_bn.bn, cc.projc, cc.proj_out, dsum, Mode::Train);
    for (size_t i = 0; i < proj_bn.dgamma.size(); ++i) {
      proj_bn.dgamma[i] += gp.dgamma[i];
      proj_bn.dbeta[i] += gp.dbeta[i];
    }
    Conv3dGrads pg = conv3d_backward(cc.x, proj.w, stride, Padding::Same, gp.dx);
    for (size_t i = 0; i < proj.g.data.size(); ++i) proj.g.data[i] += pg.dkernel.data[i];
    add_inplace(dx, pg.dx);
  } else {
    add_inplace(dx, dsum);
  }
  return dx;
}

void ResidualUnit::visit_params(const std::string& prefix, const ParamVisitor& fn) {
  auto conv = [&](const std::string& name, ConvParam& p) {
    fn(ParamRef{prefix + name, p.w.data.data(), p.g.data.data(), p.w.size(), true,
                {p.w.c_out, p.w.c_in, p.w.kt, p.w.kh, p.w.kw}});
  };
  auto bn = [&](const std::string& name, BnParam& p) {
    fn(ParamRef{prefix + name + ".gamma", p.bn.gamma.data(), p.dgamma.data(),
                static_cast<i64>(p.bn.gamma.size()), false, {p.bn.channels}});
    fn(ParamRef{prefix + name + ".beta", p.bn.beta.data(), p.dbeta.data(),
                static_cast<i64>(p.bn.beta.size()), false, {p.bn.channels}});
  };
  conv("conv1", conv1);
  bn("bn1", bn1);
  if (cost) {
    cost->visit_params(prefix + "cost.", fn);
  } else {
    conv("mid_conv", mid);
  }
  bn("bn2", bn2);
  conv("conv3", conv3);
  bn("bn3", bn3);
  if (has_proj) {
    conv("proj", proj);
    bn("proj_bn", proj_bn);
  }
}

void ResidualUnit::visit_state(const std::string& prefix, const StateVisitor& fn) {
  auto bn = [&](const std::string& name, BnParam& p) {
    fn(StateRef{prefix + name + ".running_mean", p.bn.running_mean.data(),
                static_cast<i64>(p.bn.running_mean.size())});
    fn(StateRef{prefix + name + ".running_var", p.bn.running_var.data(),
                static_cast<i64>(p.bn.running_var.size())});
  };
  bn("bn1", bn1);
  bn("bn2", bn2);
  bn("bn3", bn3);
  if (has_proj) bn("proj_bn", proj_bn);
}

void ResidualUnit::zero_grads() {
  visit_params("", [](const ParamRef& p) { std::fill(p.grad, p.grad + p.len, 0.0); });
}

i64 ResidualUnit::param_count() {
  i64 n = 0;
  visit_params("", [&](const ParamRef& p) { n += p.len; });
  return n;
}

void perturb_params(const std::function<void(const ParamVisitor&)>& visit, Rng& rng,
                    double scale) {
  visit([&](const ParamRef& p) {
    for (i64 i = 0; i < p.len; ++i) p.value[i] += rng.normal(0.0, scale);
  });
}

}  // namespace cost
