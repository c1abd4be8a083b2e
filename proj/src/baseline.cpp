#include "cost/baseline.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cost/conv.hpp"
#include "cost/errors.hpp"

namespace cost {

ConvKernel cost_to_masked_c3d_kernel(const SharedKernel& shared, const Matrix& alpha) {
  check(shared.k % 2 == 1, "cost_to_masked_c3d_kernel: k must be odd");
  check(alpha.rows == shared.c_out && alpha.cols == 3,
        "cost_to_masked_c3d_kernel: alpha must be c_out x 3");
  const i64 k = shared.k;
  const i64 mid = (k - 1) / 2;
  ConvKernel out(shared.c_out, shared.c_in, k, k, k);
  for (i64 o = 0; o < shared.c_out; ++o)
    for (i64 i = 0; i < shared.c_in; ++i)
      for (i64 dt = 0; dt < k; ++dt)
        for (i64 dh = 0; dh < k; ++dh)
          for (i64 dw = 0; dw < k; ++dw) {
            double v = 0.0;
            if (dt == mid) v += alpha.at(o, 0) * shared.at(o, i, dh, dw);
            if (dh == mid) v += alpha.at(o, 1) * shared.at(o, i, dt, dw);
            if (dw == mid) v += alpha.at(o, 2) * shared.at(o, i, dt, dh);
            out.at(o, i, dt, dh, dw) = v;
          }
  return out;
}

namespace {

ConvKernel positive_kernel(i64 co, i64 ci, i64 kt, i64 kh, i64 kw, Rng& rng) {
  ConvKernel k(co, ci, kt, kh, kw);
  rng.fill_uniform(k.data, 0.1, 1.0);
  return k;
}

i64 count_influenced_voxels(const Tensor& dx) {
  i64 n = 0;
  for (i64 t = 0; t < dx.shape.t; ++t)
    for (i64 h = 0; h < dx.shape.h; ++h)
      for (i64 w = 0; w < dx.shape.w; ++w) {
        bool hit = false;
        for (i64 c = 0; c < dx.shape.c && !hit; ++c) hit = dx.at(0, t, h, w, c) != 0.0;
        if (hit) ++n;
      }
  return n;
}

}  // namespace

i64 receptive_field_count(UnitKind kind, i64 k, u64 seed) {
  check(k % 2 == 1 && k >= 1, "receptive_field_count: k must be odd");
  Rng rng(seed);
  const i64 L = 2 * k + 3;  // roomy enough that the support never clips
  const Tensor x(Shape5{1, L, L, L, 1}, 1.0);
  const i64 mid = L / 2;

  auto backprop_delta = [&](const Tensor& y, auto&& backward) {
    Tensor dy = Tensor::zeros(y.shape);
    dy.at(0, mid, mid, mid, 0) = 1.0;
    return backward(dy);
  };

  switch (kind) {
    case UnitKind::C2D: {
      ConvKernel w = positive_kernel(1, 1, 1, k, k, rng);
      Tensor y = conv3d(x, w, {}, Padding::Same);
      Tensor dx = backprop_delta(y, [&](const Tensor& dy) {
        return conv3d_backward(x, w, {}, Padding::Same, dy).dx;
      });
      return count_influenced_voxels(dx);
    }
    case UnitKind::C3D_333: {
      ConvKernel w = positive_kernel(1, 1, k, k, k, rng);
      Tensor y = conv3d(x, w, {}, Padding::Same);
      Tensor dx = backprop_delta(y, [&](const Tensor& dy) {
        return conv3d_backward(x, w, {}, Padding::Same, dy).dx;
      });
      return count_influenced_voxels(dx);
    }
    case UnitKind::C3D_311: {
      // temporal conv then spatial conv, as in the decoupled unit
      ConvKernel wt = positive_kernel(1, 1, 3, 1, 1, rng);
      ConvKernel ws = positive_kernel(1, 1, 1, k, k, rng);
      Tensor mid_out = conv3d(x, wt, {}, Padding::Same);
      Tensor y = conv3d(mid_out, ws, {}, Padding::Same);
      Tensor dx = backprop_delta(y, [&](const Tensor& dy) {
        Tensor dmid = conv3d_backward(mid_out, ws, {}, Padding::Same, dy).dx;
        return conv3d_backward(x, wt, {}, Padding::Same, dmid).dx;
      });
      return count_influenced_voxels(dx);
    }
    case UnitKind::CoST_a:
    case UnitKind::CoST_b: {
      SharedKernel w(1, 1, k);
      rng.fill_uniform(w.w, 0.1, 1.0);
      Matrix alpha(1, 3);
      alpha.at(0, 0) = alpha.at(0, 1) = alpha.at(0, 2) = 1.0 / 3.0;
      ViewTriple views = conv_three_views(x, w, {});
      Tensor dy = Tensor::zeros(views.hw.shape);
      dy.at(0, mid, mid, mid, 0) = 1.0;
      FuseGrads fg = fuse_views_backward(views, alpha, dy);
      Tensor dx = conv_three_views_backward(x, w, {}, fg.dviews).dx;
      return count_influenced_voxels(dx);
    }
  }
  throw std::invalid_argument("receptive_field_count: unknown kind");
}

// ---------------------------------------------------------------------------
// parameter / multiply-add accounting

i64 OpCostReport::total_params() const {
  i64 n = 0;
  for (const auto& r : rows) n += r.params;
  return n;
}
i64 OpCostReport::total_ma_naive() const {
  i64 n = 0;
  for (const auto& r : rows) n += r.ma_naive;
  return n;
}
i64 OpCostReport::total_ma_opt() const {
  i64 n = 0;
  for (const auto& r : rows) n += r.ma_opt;
  return n;
}

std::string OpCostReport::to_csv() const {
  std::ostringstream os;
  os << "layer,kind,params,ma_naive,ma_opt\n";
  for (const auto& r : rows)
    os << r.layer << "," << r.kind << "," << r.params << "," << r.ma_naive << "," << r.ma_opt
       << "\n";
  os << "total,," << total_params() << "," << total_ma_naive() << "," << total_ma_opt() << "\n";
  return os.str();
}

std::string OpCostReport::to_json_string() const {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows)
    j["rows"].push_back({{"layer", r.layer},
                         {"kind", r.kind},
                         {"params", r.params},
                         {"ma_naive", r.ma_naive},
                         {"ma_opt", r.ma_opt}});
  j["total"] = {{"params", total_params()},
                {"ma_naive", total_ma_naive()},
                {"ma_opt", total_ma_opt()}};
  return j.dump(2);
}

void OpCostReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_csv();
}

void OpCostReport::write_json(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json_string() << "\n";
}

namespace {

i64 out_extent(i64 in, i64 stride) { return (in - 1) / stride + 1; }  // same padding

void conv_row(OpCostReport& rep, const std::string& name, const ConvKernel& w, i64 out_elems) {
  const i64 ma = out_elems * w.c_out * w.c_in * w.taps();
  rep.rows.push_back({name, "conv", w.size(), ma, ma});
}

void bn_row(OpCostReport& rep, const std::string& name, i64 channels) {
  rep.rows.push_back({name, "bn", 2 * channels, 0, 0});
}

}  // namespace

OpCostReport count_cost_unit(const ResidualUnit& unit, Shape5 in, const std::string& prefix) {
  OpCostReport rep;
  const i64 in_elems = in.t * in.h * in.w;
  const i64 ot = out_extent(in.t, unit.stride.t);
  const i64 oh = out_extent(in.h, unit.stride.h);
  const i64 ow = out_extent(in.w, unit.stride.w);
  const i64 out_elems = ot * oh * ow;

  conv_row(rep, prefix + "conv1", unit.conv1.w, in_elems);
  bn_row(rep, prefix + "bn1", unit.c_mid);

  if (unit.cost) {
    const CostOp& op = *unit.cost;
    const i64 kernels = op.share_weights ? 1 : 3;
    const i64 kernel_params = kernels * op.c_out * op.c_in * op.k * op.k;
    const i64 ma_naive = out_elems * op.c_out * op.c_in * cost_ma_factor_naive(op.k);
    const i64 ma_opt = out_elems * op.c_out * op.c_in * cost_ma_factor_optimized(op.k);
    rep.rows.push_back({prefix + "cost.kernel", "cost", kernel_params, ma_naive, ma_opt});
    const i64 fusion = 3 * out_elems * op.c_out;
    rep.rows.push_back({prefix + "cost.fusion", "fusion", 0, fusion, fusion});
    if (op.variant_b) {
      const i64 pred_params = op.c_out * op.c_out + 3 * 3 + 3;
      const i64 pred_ma = 3 * op.c_out * op.c_out + 9 * op.c_out;
      rep.rows.push_back({prefix + "cost.predictor", "predictor", pred_params, pred_ma, pred_ma});
    } else {
      rep.rows.push_back({prefix + "cost.coeff_logits", "coeff", 3 * op.c_out, 0, 0});
    }
  } else {
    conv_row(rep, prefix + "mid_conv", unit.mid.w, out_elems);
  }
  bn_row(rep, prefix + "bn2", unit.c_mid);

  conv_row(rep, prefix + "conv3", unit.conv3.w, out_elems);
  bn_row(rep, prefix + "bn3", unit.c_out);

  if (unit.has_proj) {
    conv_row(rep, prefix + "proj", unit.proj.w, out_elems);
    bn_row(rep, prefix + "proj_bn", unit.c_out);
  }
  return rep;
}

OpCostReport count_cost(const Network& net) {
  const NetworkConfig& cfg = net.cfg;
  OpCostReport rep;

  Shape5 cur{1, cfg.t, cfg.h, cfg.w, cfg.c};
  Shape5 stem_out{1, out_extent(cfg.t, cfg.stem.stride.t), out_extent(cfg.h, cfg.stem.stride.h),
                  out_extent(cfg.w, cfg.stem.stride.w), cfg.stem.c_out};
  conv_row(rep, "stem.conv", net.stem.w, stem_out.t * stem_out.h * stem_out.w);
  bn_row(rep, "stem.bn", cfg.stem.c_out);
  cur = stem_out;

  size_t block = 0, within = 0;
  for (size_t i = 0; i < net.units.size(); ++i) {
    while (block < cfg.blocks.size() && within >= static_cast<size_t>(cfg.blocks[block].units)) {
      ++block;
      within = 0;
    }
    const ResidualUnit& u = net.units[i];
    const std::string prefix =
        "block" + std::to_string(block + 1) + ".unit" + std::to_string(within) + ".";
    OpCostReport unit_rep = count_cost_unit(u, cur, prefix);
    rep.rows.insert(rep.rows.end(), unit_rep.rows.begin(), unit_rep.rows.end());
    cur = Shape5{1, out_extent(cur.t, u.stride.t), out_extent(cur.h, u.stride.h),
                 out_extent(cur.w, u.stride.w), u.c_out};
    if (net.pool_after[i]) cur.t = out_extent(cur.t, 2);
    ++within;
  }

  const i64 head_params = net.head_w.w.size() + static_cast<i64>(net.head_b.w.size());
  const i64 head_ma = net.head_w.w.rows * net.head_w.w.cols;
  rep.rows.push_back({"head.fc", "linear", head_params, head_ma, head_ma});
  return rep;
}

}  // namespace cost
