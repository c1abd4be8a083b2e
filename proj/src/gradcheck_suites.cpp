#include "cost/gradcheck_suites.hpp"

#include <numeric>

#include "cost/baseline.hpp"
#include "cost/conv.hpp"
#include "cost/cost_op.hpp"
#include "cost/network.hpp"
#include "cost/nn.hpp"
#include "cost/rng.hpp"
#include "cost/trainer.hpp"
#include "cost/units.hpp"

namespace cost {

namespace {

constexpr double kStep = 1e-5;
constexpr i64 kProbes = 120;

// flat parameter vector assembled from named segments
struct FlatTheta {
  std::vector<double> values;
  std::vector<std::pair<size_t, size_t>> segments;  // offset, length

  size_t add(std::span<const double> seg) {
    segments.emplace_back(values.size(), seg.size());
    values.insert(values.end(), seg.begin(), seg.end());
    return segments.size() - 1;
  }
  std::span<const double> seg(std::span<const double> theta, size_t i) const {
    return theta.subspan(segments[i].first, segments[i].second);
  }
  void read(std::span<const double> theta, size_t i, double* out) const {
    auto s = seg(theta, i);
    std::copy(s.begin(), s.end(), out);
  }
};

// fixed random projection so the scalar loss exercises every output
std::vector<double> projection(i64 len, Rng& rng) {
  std::vector<double> r(static_cast<size_t>(len));
  rng.fill_uniform(r, -1.0, 1.0);
  return r;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

SuiteResult run_case(const std::string& name,
                     const std::function<double(std::span<const double>)>& f,
                     std::span<const double> theta, std::span<const double> analytic,
                     double tolerance, u64 seed, bool corrupt = false) {
  std::vector<double> grad(analytic.begin(), analytic.end());
  if (corrupt)
    for (double& g : grad) g += 1.0;  // every probe must notice
  SuiteResult res;
  res.name = corrupt ? name + ".corrupted" : name;
  res.tolerance = tolerance;
  res.report = gradcheck(f, theta, grad, kProbes, kStep, seed);
  res.pass = res.report.within(tolerance);
  return res;
}

// ---------------------------------------------------------------------------

SuiteResult case_conv3d(u64 seed, Stride3 stride, Padding pad, const std::string& name,
                        bool corrupt = false) {
  Rng rng(seed);
  Tensor x(Shape5{1, 4, 5, 5, 2});
  rng.fill_normal(x.data, 1.0);
  ConvKernel k(3, 2, 3, 3, 3);
  rng.fill_normal(k.data, 0.5);

  FlatTheta ft;
  ft.add(x.data);
  ft.add(k.data);

  Tensor y0 = conv3d(x, k, stride, pad);
  std::vector<double> proj = projection(y0.size(), rng);

  auto eval = [&, stride, pad](std::span<const double> theta) {
    Tensor xx = x;
    ConvKernel kk = k;
    ft.read(theta, 0, xx.data.data());
    ft.read(theta, 1, kk.data.data());
    Tensor y = conv3d(xx, kk, stride, pad);
    return dot(y.data, proj);
  };

  Tensor dy(y0.shape);
  std::copy(proj.begin(), proj.end(), dy.data.begin());
  Conv3dGrads g = conv3d_backward(x, k, stride, pad, dy);
  std::vector<double> analytic;
  analytic.insert(analytic.end(), g.dx.data.begin(), g.dx.data.end());
  analytic.insert(analytic.end(), g.dkernel.data.begin(), g.dkernel.data.end());

  return run_case(name, eval, ft.values, analytic, 1e-4, seed, corrupt);
}

SuiteResult case_max_pool(u64 seed) {
  Rng rng(seed);
  Tensor x(Shape5{1, 6, 7, 7, 3});
  rng.fill_normal(x.data, 1.0);
  const Window3 win{3, 2, 2};
  const Stride3 stride{2, 2, 2};

  Tensor y0 = max_pool(x, win, stride, Padding::Valid);
  Rng prng(seed + 1);
  std::vector<double> proj = projection(y0.size(), prng);

  auto eval = [&](std::span<const double> theta) {
    Tensor xx = x;
    std::copy(theta.begin(), theta.end(), xx.data.begin());
    Tensor y = max_pool(xx, win, stride, Padding::Valid);
    return dot(y.data, proj);
  };
  Tensor dy(y0.shape);
  std::copy(proj.begin(), proj.end(), dy.data.begin());
  Tensor dx = max_pool_backward(x, win, stride, Padding::Valid, dy);
  return run_case("op.max_pool", eval, x.data, dx.data, 1e-4, seed);
}

SuiteResult case_global_max(u64 seed) {
  Rng rng(seed);
  Tensor x(Shape5{2, 3, 4, 4, 5});
  rng.fill_normal(x.data, 1.0);
  Matrix y0 = global_max_pool_thw(x);
  std::vector<double> proj = projection(y0.size(), rng);

  auto eval = [&](std::span<const double> theta) {
    Tensor xx = x;
    std::copy(theta.begin(), theta.end(), xx.data.begin());
    return dot(global_max_pool_thw(xx).data, proj);
  };
  Matrix dy(y0.rows, y0.cols);
  std::copy(proj.begin(), proj.end(), dy.data.begin());
  Tensor dx = global_max_pool_thw_backward(x, dy);
  return run_case("op.global_max_pool_thw", eval, x.data, dx.data, 1e-4, seed);
}

SuiteResult case_global_avg(u64 seed) {
  Rng rng(seed);
  Tensor x(Shape5{2, 3, 4, 4, 5});
  rng.fill_normal(x.data, 1.0);
  Matrix y0 = global_avg_pool_thw(x);
  std::vector<double> proj = projection(y0.size(), rng);

  auto eval = [&](std::span<const double> theta) {
    Tensor xx = x;
    std::copy(theta.begin(), theta.end(), xx.data.begin());
    return dot(global_avg_pool_thw(xx).data, proj);
  };
  Matrix dy(y0.rows, y0.cols);
  std::copy(proj.begin(), proj.end(), dy.data.begin());
  Tensor dx = global_avg_pool_thw_backward(x.shape, dy);
  return run_case("op.global_avg_pool_thw", eval, x.data, dx.data, 1e-4, seed);
}

SuiteResult case_linear(u64 seed) {
  Rng rng(seed);
  Matrix x(8, 9), w(9, 5);
  std::vector<double> b(5);
  rng.fill_normal(x.data, 1.0);
  rng.fill_normal(w.data, 0.5);
  rng.fill_normal(b, 0.5);

  FlatTheta ft;
  ft.add(x.data);
  ft.add(w.data);
  ft.add(b);
  std::vector<double> proj = projection(8 * 5, rng);

  auto eval = [&](std::span<const double> theta) {
    Matrix xx = x, ww = w;
    std::vector<double> bb = b;
    ft.read(theta, 0, xx.data.data());
    ft.read(theta, 1, ww.data.data());
    ft.read(theta, 2, bb.data());
    return dot(linear(xx, ww, bb).data, proj);
  };

  Matrix dy(8, 5);
  std::copy(proj.begin(), proj.end(), dy.data.begin());
  LinearGrads g = linear_backward(x, w, dy);
  std::vector<double> analytic;
  analytic.insert(analytic.end(), g.dx.data.begin(), g.dx.data.end());
  analytic.insert(analytic.end(), g.dw.data.begin(), g.dw.data.end());
  analytic.insert(analytic.end(), g.db.begin(), g.db.end());
  return run_case("op.linear", eval, ft.values, analytic, 1e-4, seed);
}

SuiteResult case_softmax(u64 seed) {
  Rng rng(seed);
  Matrix m(10, 12);
  rng.fill_normal(m.data, 2.0);
  std::vector<double> proj = projection(m.size(), rng);

  auto eval = [&](std::span<const double> theta) {
    Matrix mm = m;
    std::copy(theta.begin(), theta.end(), mm.data.begin());
    return dot(softmax_rows(mm).data, proj);
  };
  Matrix y = softmax_rows(m);
  Matrix dy(m.rows, m.cols);
  std::copy(proj.begin(), proj.end(), dy.data.begin());
  Matrix dx = softmax_rows_backward(y, dy);
  return run_case("op.softmax_rows", eval, m.data, dx.data, 1e-4, seed);
}

SuiteResult case_batch_norm(u64 seed, Mode mode) {
  Rng rng(seed);
  Tensor x(Shape5{2, 3, 4, 4, 5});
  rng.fill_normal(x.data, 1.5);
  BatchNorm bn(5);
  rng.fill_normal(bn.gamma, 0.5);
  rng.fill_normal(bn.beta, 0.5);
  for (auto& v : bn.running_var) v = std::abs(rng.normal(1.0, 0.2)) + 0.5;
  rng.fill_normal(bn.running_mean, 0.3);

  FlatTheta ft;
  ft.add(x.data);
  ft.add(bn.gamma);
  ft.add(bn.beta);
  std::vector<double> proj = projection(x.size(), rng);

  auto eval = [&, mode](std::span<const double> theta) {
    Tensor xx = x;
    BatchNorm bb = bn;
    ft.read(theta, 0, xx.data.data());
    ft.read(theta, 1, bb.gamma.data());
    ft.read(theta, 2, bb.beta.data());
    Tensor y = batch_norm_forward(bb, xx, mode, false, nullptr);
    return dot(y.data, proj);
  };

  BnCache cache;
  BatchNorm bn_copy = bn;
  batch_norm_forward(bn_copy, x, mode, false, &cache);
  Tensor dy(x.shape);
  std::copy(proj.begin(), proj.end(), dy.data.begin());
  BnGrads g = batch_norm_backward(bn, cache, x, dy, mode);
  std::vector<double> analytic;
  analytic.insert(analytic.end(), g.dx.data.begin(), g.dx.data.end());
  analytic.insert(analytic.end(), g.dgamma.begin(), g.dgamma.end());
  analytic.insert(analytic.end(), g.dbeta.begin(), g.dbeta.end());
  const std::string name =
      mode == Mode::Train ? "op.batch_norm.train" : "op.batch_norm.eval";
  return run_case(name, eval, ft.values, analytic, 1e-4, seed);
}

SuiteResult case_cross_entropy(u64 seed) {
  Rng rng(seed);
  Matrix logits(12, 10);
  rng.fill_normal(logits.data, 2.0);
  std::vector<i64> labels(12);
  for (auto& l : labels) l = rng.index(10);

  auto eval = [&](std::span<const double> theta) {
    Matrix ll = logits;
    std::copy(theta.begin(), theta.end(), ll.data.begin());
    return cross_entropy_loss(ll, labels).loss;
  };
  CrossEntropyResult ce = cross_entropy_loss(logits, labels);
  return run_case("op.cross_entropy", eval, logits.data, ce.dlogits.data, 1e-4, seed);
}

SuiteResult case_conv_three_views(u64 seed) {
  Rng rng(seed);
  Tensor x(Shape5{1, 5, 6, 6, 2});
  rng.fill_normal(x.data, 1.0);
  SharedKernel k(3, 2, 3);
  rng.fill_normal(k.w, 0.5);

  FlatTheta ft;
  ft.add(x.data);
  ft.add(k.w);

  ViewTriple v0 = conv_three_views(x, k);
  Rng prng(seed + 9);
  std::vector<double> phw = projection(v0.hw.size(), prng);
  std::vector<double> ptw = projection(v0.tw.size(), prng);
  std::vector<double> pth = projection(v0.th.size(), prng);

  auto eval = [&](std::span<const double> theta) {
    Tensor xx = x;
    SharedKernel kk = k;
    ft.read(theta, 0, xx.data.data());
    ft.read(theta, 1, kk.w.data());
    ViewTriple v = conv_three_views(xx, kk);
    return dot(v.hw.data, phw) + dot(v.tw.data, ptw) + dot(v.th.data, pth);
  };

  ViewTriple dv{Tensor(v0.hw.shape), Tensor(v0.tw.shape), Tensor(v0.th.shape)};
  std::copy(phw.begin(), phw.end(), dv.hw.data.begin());
  std::copy(ptw.begin(), ptw.end(), dv.tw.data.begin());
  std::copy(pth.begin(), pth.end(), dv.th.data.begin());
  ThreeViewGrads g = conv_three_views_backward(x, k, {}, dv);
  std::vector<double> analytic;
  analytic.insert(analytic.end(), g.dx.data.begin(), g.dx.data.end());
  analytic.insert(analytic.end(), g.dkernel.w.begin(), g.dkernel.w.end());
  return run_case("op.conv_three_views", eval, ft.values, analytic, 1e-4, seed);
}

SuiteResult case_fuse_views(u64 seed) {
  Rng rng(seed);
  const Shape5 s{2, 3, 4, 4, 3};
  ViewTriple views{Tensor(s), Tensor(s), Tensor(s)};
  rng.fill_normal(views.hw.data, 1.0);
  rng.fill_normal(views.tw.data, 1.0);
  rng.fill_normal(views.th.data, 1.0);
  Matrix alpha(3, 3);
  rng.fill_uniform(alpha.data, 0.1, 0.9);

  FlatTheta ft;
  ft.add(views.hw.data);
  ft.add(views.tw.data);
  ft.add(views.th.data);
  ft.add(alpha.data);
  std::vector<double> proj = projection(s.size(), rng);

  auto eval = [&](std::span<const double> theta) {
    ViewTriple v = views;
    Matrix a = alpha;
    ft.read(theta, 0, v.hw.data.data());
    ft.read(theta, 1, v.tw.data.data());
    ft.read(theta, 2, v.th.data.data());
    ft.read(theta, 3, a.data.data());
    return dot(fuse_views(v, a).data, proj);
  };

  Tensor dy(s);
  std::copy(proj.begin(), proj.end(), dy.data.begin());
  FuseGrads g = fuse_views_backward(views, alpha, dy);
  std::vector<double> analytic;
  analytic.insert(analytic.end(), g.dviews.hw.data.begin(), g.dviews.hw.data.end());
  analytic.insert(analytic.end(), g.dviews.tw.data.begin(), g.dviews.tw.data.end());
  analytic.insert(analytic.end(), g.dviews.th.data.begin(), g.dviews.th.data.end());
  analytic.insert(analytic.end(), g.dalpha.data.begin(), g.dalpha.data.end());
  return run_case("op.fuse_views", eval, ft.values, analytic, 1e-4, seed);
}

SuiteResult case_cost_a(u64 seed, Stride3 stride, const std::string& name) {
  Rng rng(seed);
  Tensor x(Shape5{2, 4, 6, 6, 2});
  rng.fill_normal(x.data, 1.0);
  SharedKernel k(3, 2, 3);
  rng.fill_normal(k.w, 0.5);
  Matrix logits(3, 3);
  rng.fill_normal(logits.data, 0.7);

  FlatTheta ft;
  ft.add(x.data);
  ft.add(k.w);
  ft.add(logits.data);

  CostAResult r0 = cost_a_forward(x, k, logits, stride);
  std::vector<double> proj = projection(r0.y.size(), rng);

  auto eval = [&, stride](std::span<const double> theta) {
    Tensor xx = x;
    SharedKernel kk = k;
    Matrix ll = logits;
    ft.read(theta, 0, xx.data.data());
    ft.read(theta, 1, kk.w.data());
    ft.read(theta, 2, ll.data.data());
    return dot(cost_a_forward(xx, kk, ll, stride).y.data, proj);
  };

  CostACache cache;
  cost_a_forward(x, k, logits, stride, &cache);
  Tensor dy(r0.y.shape);
  std::copy(proj.begin(), proj.end(), dy.data.begin());
  CostAGrads g = cost_a_backward(x, k, stride, cache, dy);
  std::vector<double> analytic;
  analytic.insert(analytic.end(), g.dx.data.begin(), g.dx.data.end());
  analytic.insert(analytic.end(), g.dkernel.w.begin(), g.dkernel.w.end());
  analytic.insert(analytic.end(), g.dlogits.data.begin(), g.dlogits.data.end());
  return run_case(name, eval, ft.values, analytic, 1e-4, seed);
}

SuiteResult case_cost_b(u64 seed) {
  Rng rng(seed);
  Tensor x(Shape5{2, 4, 5, 5, 2});
  rng.fill_normal(x.data, 1.0);
  SharedKernel k(3, 2, 3);
  rng.fill_normal(k.w, 0.5);
  CoeffPredictorParams pred = CoeffPredictorParams::init(3);
  rng.fill_normal(pred.conv1x1.data, 0.4);
  rng.fill_normal(pred.fc_w.data, 0.4);
  for (auto& b : pred.fc_b) b = rng.normal(0.0, 0.2);

  FlatTheta ft;
  ft.add(x.data);
  ft.add(k.w);
  ft.add(pred.conv1x1.data);
  ft.add(pred.fc_w.data);
  ft.add(pred.fc_b);

  CostBResult r0 = cost_b_forward(x, k, pred);
  std::vector<double> proj = projection(r0.y.size(), rng);

  auto eval = [&](std::span<const double> theta) {
    Tensor xx = x;
    SharedKernel kk = k;
    CoeffPredictorParams pp = pred;
    ft.read(theta, 0, xx.data.data());
    ft.read(theta, 1, kk.w.data());
    ft.read(theta, 2, pp.conv1x1.data.data());
    ft.read(theta, 3, pp.fc_w.data.data());
    ft.read(theta, 4, pp.fc_b.data());
    return dot(cost_b_forward(xx, kk, pp).y.data, proj);
  };

  CostBCache cache;
  cost_b_forward(x, k, pred, {}, &cache);
  Tensor dy(r0.y.shape);
  std::copy(proj.begin(), proj.end(), dy.data.begin());
  CostBGrads g = cost_b_backward(x, k, pred, {}, cache, dy);
  std::vector<double> analytic;
  analytic.insert(analytic.end(), g.dx.data.begin(), g.dx.data.end());
  analytic.insert(analytic.end(), g.dkernel.w.begin(), g.dkernel.w.end());
  analytic.insert(analytic.end(), g.dconv1x1.data.begin(), g.dconv1x1.data.end());
  analytic.insert(analytic.end(), g.dfc_w.data.begin(), g.dfc_w.data.end());
  analytic.insert(analytic.end(), g.dfc_b.begin(), g.dfc_b.end());
  return run_case("op.cost_b", eval, ft.values, analytic, 1e-4, seed);
}

SuiteResult case_unit(UnitKind kind, bool share, Stride3 stride, u64 seed,
                      const std::string& name) {
  Rng rng(seed);
  ResidualUnit unit = ResidualUnit::make(kind, 3, 2, 4, stride, rng, 3, share, true);
  Rng prng(seed + 13);
  perturb_params([&](const ParamVisitor& fn) { unit.visit_params("", fn); }, prng, 0.3);

  Tensor x(Shape5{2, 4, 6, 6, 3});
  prng.fill_normal(x.data, 1.0);

  FlatTheta ft;
  ft.add(x.data);
  std::vector<std::pair<size_t, ParamRef>> slots;
  unit.visit_params("", [&](const ParamRef& p) {
    slots.emplace_back(ft.add({p.value, static_cast<size_t>(p.len)}), p);
  });

  ResidualUnit::Cache cache;
  Tensor y0 = unit.forward(x, Mode::Train, false, &cache);
  std::vector<double> proj = projection(y0.size(), prng);

  auto eval = [&](std::span<const double> theta) {
    Tensor xx = x;
    ft.read(theta, 0, xx.data.data());
    for (const auto& [si, p] : slots) ft.read(theta, si, p.value);
    Tensor y = unit.forward(xx, Mode::Train, false, nullptr);
    // restore originals so later evaluations start clean
    return dot(y.data, proj);
  };

  unit.zero_grads();
  Tensor dy(y0.shape);
  std::copy(proj.begin(), proj.end(), dy.data.begin());
  Tensor dx = unit.backward(cache, dy);
  std::vector<double> analytic;
  analytic.insert(analytic.end(), dx.data.begin(), dx.data.end());
  for (const auto& [si, p] : slots) {
    (void)si;
    analytic.insert(analytic.end(), p.grad, p.grad + p.len);
  }
  SuiteResult res = run_case(name, eval, ft.values, analytic, 1e-4, seed);
  // leave the unit at its original parameters
  std::span<const double> base = ft.values;
  for (const auto& [si, p] : slots) ft.read(base, si, p.value);
  return res;
}

SuiteResult case_network(u64 seed) {
  NetworkConfig cfg;
  cfg.seed = seed;
  cfg.unit_kind = UnitKind::CoST_b;
  Network net = Network::build(cfg);
  Rng prng(seed + 17);
  perturb_params([&](const ParamVisitor& fn) { net.visit_params(fn); }, prng, 0.05);

  Tensor x(Shape5{2, cfg.t, cfg.h, cfg.w, cfg.c});
  prng.fill_uniform(x.data, 0.0, 1.0);
  std::vector<i64> labels = {1, 6};

  FlatTheta ft;
  std::vector<std::pair<size_t, ParamRef>> slots;
  net.visit_params([&](const ParamRef& p) {
    slots.emplace_back(ft.add({p.value, static_cast<size_t>(p.len)}), p);
  });

  auto eval = [&](std::span<const double> theta) {
    for (const auto& [si, p] : slots) ft.read(theta, si, p.value);
    Matrix logits = net.forward(x, Mode::Train, nullptr, false);
    return cross_entropy_loss(logits, labels).loss;
  };

  Network::Tape tape;
  Matrix logits = net.forward(x, Mode::Train, &tape, false);
  CrossEntropyResult ce = cross_entropy_loss(logits, labels);
  net.zero_grads();
  net.backward(tape, ce.dlogits);

  std::vector<double> analytic;
  for (const auto& [si, p] : slots) {
    (void)si;
    analytic.insert(analytic.end(), p.grad, p.grad + p.len);
  }
  SuiteResult res = run_case("network.micro_cost_b", eval, ft.values, analytic, 1e-3, seed);
  std::span<const double> base = ft.values;
  for (const auto& [si, p] : slots) ft.read(base, si, p.value);
  return res;
}

}  // namespace

std::vector<SuiteResult> gradcheck_ops(u64 seed, int corrupt_index) {
  std::vector<SuiteResult> out;
  out.push_back(case_conv3d(mix_seed(seed, 1), {}, Padding::Same, "op.conv3d.same",
                            corrupt_index >= 0));
  out.push_back(case_conv3d(mix_seed(seed, 2), Stride3{1, 2, 2}, Padding::Same,
                            "op.conv3d.strided"));
  out.push_back(case_conv3d(mix_seed(seed, 3), {}, Padding::Valid, "op.conv3d.valid"));
  out.push_back(case_max_pool(mix_seed(seed, 4)));
  out.push_back(case_global_max(mix_seed(seed, 5)));
  out.push_back(case_global_avg(mix_seed(seed, 6)));
  out.push_back(case_linear(mix_seed(seed, 7)));
  out.push_back(case_softmax(mix_seed(seed, 8)));
  out.push_back(case_batch_norm(mix_seed(seed, 9), Mode::Train));
  out.push_back(case_batch_norm(mix_seed(seed, 10), Mode::Eval));
  out.push_back(case_cross_entropy(mix_seed(seed, 11)));
  out.push_back(case_conv_three_views(mix_seed(seed, 12)));
  out.push_back(case_fuse_views(mix_seed(seed, 13)));
  out.push_back(case_cost_a(mix_seed(seed, 14), {}, "op.cost_a"));
  out.push_back(case_cost_a(mix_seed(seed, 15), Stride3{1, 2, 2}, "op.cost_a.strided"));
  out.push_back(case_cost_b(mix_seed(seed, 16)));
  return out;
}

std::vector<SuiteResult> gradcheck_units(u64 seed) {
  std::vector<SuiteResult> out;
  out.push_back(case_unit(UnitKind::C2D, true, {}, mix_seed(seed, 21), "unit.c2d"));
  out.push_back(case_unit(UnitKind::C3D_311, true, {}, mix_seed(seed, 22), "unit.c3d311"));
  out.push_back(case_unit(UnitKind::C3D_333, true, {}, mix_seed(seed, 23), "unit.c3d333"));
  out.push_back(case_unit(UnitKind::CoST_a, true, {}, mix_seed(seed, 24), "unit.cost_a"));
  out.push_back(case_unit(UnitKind::CoST_b, true, {}, mix_seed(seed, 25), "unit.cost_b"));
  out.push_back(
      case_unit(UnitKind::CoST_b, false, {}, mix_seed(seed, 26), "unit.cost_b_noshare"));
  out.push_back(case_unit(UnitKind::CoST_b, true, Stride3{1, 2, 2}, mix_seed(seed, 27),
                          "unit.cost_b_strided"));
  return out;
}

std::vector<SuiteResult> gradcheck_network(u64 seed) {
  return {case_network(mix_seed(seed, 31))};
}

bool all_pass(const std::vector<SuiteResult>& results) {
  for (const auto& r : results)
    if (!r.pass) return false;
  return true;
}

}  // namespace cost
