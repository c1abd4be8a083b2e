#include "cost/network.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "cost/conv.hpp"
#include "cost/errors.hpp"
#include "cost/serialize.hpp"

namespace cost {

using nlohmann::json;

namespace {
constexpr Window3 kTemporalPoolWindow{3, 1, 1};
constexpr Stride3 kTemporalPoolStride{2, 1, 1};
}  // namespace

NetworkConfig NetworkConfig::default_micro() { return NetworkConfig{}; }

bool NetworkConfig::unit_is_special(int j) const {
  if (unit_kind == UnitKind::C2D) return false;
  return j % cost_every_n == cost_offset % cost_every_n;
}

i64 NetworkConfig::expected_special_units() const {
  i64 n = 0;
  for (const auto& b : blocks)
    for (int j = 0; j < b.units; ++j)
      if (unit_is_special(j)) ++n;
  return n;
}

std::string NetworkConfig::to_json_string() const {
  json j;
  j["input"] = {{"t", t}, {"h", h}, {"w", w}, {"c", c}};
  j["stem"] = {{"kt", stem.kt},           {"kh", stem.kh},
               {"kw", stem.kw},           {"c_out", stem.c_out},
               {"stride_t", stem.stride.t}, {"stride_h", stem.stride.h},
               {"stride_w", stem.stride.w}};
  j["blocks"] = json::array();
  for (const auto& b : blocks)
    j["blocks"].push_back({{"units", b.units},
                           {"c_mid", b.c_mid},
                           {"c_out", b.c_out},
                           {"spatial_stride", b.spatial_stride}});
  j["temporal_pool_after_block1"] = temporal_pool_after_block1;
  j["unit_kind"] = unit_kind_name(unit_kind);
  j["cost_every_n"] = cost_every_n;
  j["cost_offset"] = cost_offset;
  j["share_weights"] = share_weights;
  j["num_classes"] = num_classes;
  j["seed"] = seed;
  return j.dump(2);
}

NetworkConfig NetworkConfig::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("network config: ") + e.what());
  }
  try {
    NetworkConfig cfg;
    if (j.contains("input")) {
      cfg.t = j["input"].value("t", cfg.t);
      cfg.h = j["input"].value("h", cfg.h);
      cfg.w = j["input"].value("w", cfg.w);
      cfg.c = j["input"].value("c", cfg.c);
    }
    if (j.contains("stem")) {
      const auto& s = j["stem"];
      cfg.stem.kt = s.value("kt", cfg.stem.kt);
      cfg.stem.kh = s.value("kh", cfg.stem.kh);
      cfg.stem.kw = s.value("kw", cfg.stem.kw);
      cfg.stem.c_out = s.value("c_out", cfg.stem.c_out);
      cfg.stem.stride.t = s.value("stride_t", cfg.stem.stride.t);
      cfg.stem.stride.h = s.value("stride_h", cfg.stem.stride.h);
      cfg.stem.stride.w = s.value("stride_w", cfg.stem.stride.w);
    }
    if (j.contains("blocks")) {
      cfg.blocks.clear();
      for (const auto& b : j["blocks"])
        cfg.blocks.push_back(BlockSpec{b.value("units", 2), b.value("c_mid", i64{8}),
                                       b.value("c_out", i64{16}),
                                       b.value("spatial_stride", i64{1})});
    }
    cfg.temporal_pool_after_block1 =
        j.value("temporal_pool_after_block1", cfg.temporal_pool_after_block1);
    if (j.contains("unit_kind")) cfg.unit_kind = unit_kind_from_string(j["unit_kind"]);
    cfg.cost_every_n = j.value("cost_every_n", cfg.cost_every_n);
    cfg.cost_offset = j.value("cost_offset", cfg.cost_offset);
    cfg.share_weights = j.value("share_weights", cfg.share_weights);
    cfg.num_classes = j.value("num_classes", cfg.num_classes);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("network config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("network config: ") + e.what());
  }
}

NetworkConfig NetworkConfig::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json_string(text);
}

Network Network::build(const NetworkConfig& cfg) {
  if (cfg.blocks.empty()) throw ConfigError("network config: blocks must be non-empty");
  if (cfg.cost_every_n < 1) throw ConfigError("network config: cost_every_n must be >= 1");
  if (cfg.num_classes < 1) throw ConfigError("network config: num_classes must be >= 1");
  if (cfg.t < 1 || cfg.h < 1 || cfg.w < 1 || cfg.c < 1)
    throw ConfigError("network config: input dims must be >= 1");
  for (const auto& b : cfg.blocks)
    if (b.units < 1 || b.c_mid < 1 || b.c_out < 1 || b.spatial_stride < 1)
      throw ConfigError("network config: invalid block spec");

  Network net;
  net.cfg = cfg;
  Rng rng(cfg.seed);

  net.stem.init(cfg.stem.c_out, cfg.c, cfg.stem.kt, cfg.stem.kh, cfg.stem.kw, rng);
  net.stem_bn.init(cfg.stem.c_out);

  i64 c_prev = cfg.stem.c_out;
  for (size_t bi = 0; bi < cfg.blocks.size(); ++bi) {
    const BlockSpec& blk = cfg.blocks[bi];
    for (int j = 0; j < blk.units; ++j) {
      const Stride3 stride = (j == 0) ? Stride3{1, blk.spatial_stride, blk.spatial_stride}
                                      : Stride3{1, 1, 1};
      const UnitKind kind = cfg.unit_is_special(j) ? cfg.unit_kind : UnitKind::C2D;
      net.units.push_back(ResidualUnit::make(kind, c_prev, blk.c_mid, blk.c_out, stride, rng, 3,
                                             cfg.share_weights, true));
      net.pool_after.push_back(0);
      c_prev = blk.c_out;
    }
    if (bi == 0 && cfg.temporal_pool_after_block1) net.pool_after.back() = 1;
  }

  net.head_w.w = Matrix(c_prev, cfg.num_classes);
  rng.fill_normal(net.head_w.w.data, std::sqrt(1.0 / static_cast<double>(c_prev)));
  net.head_w.g = Matrix(c_prev, cfg.num_classes);
  net.head_b.w.assign(static_cast<size_t>(cfg.num_classes), 0.0);
  net.head_b.g.assign(static_cast<size_t>(cfg.num_classes), 0.0);
  return net;
}

Matrix Network::forward(const Tensor& x, Mode mode, Tape* tape, bool update_running) {
  check(x.shape.t == cfg.t && x.shape.h == cfg.h && x.shape.w == cfg.w && x.shape.c == cfg.c,
        "network forward: input shape " + x.shape.str() + " does not match config");

  Tensor stem_out = conv3d(x, stem.w, cfg.stem.stride, Padding::Same);
  Tensor cur = relu(batch_norm_forward(stem_bn.bn, stem_out, mode, update_running,
                                       tape ? &tape->stem_bnc : nullptr));
  if (tape) {
    tape->input = x;
    tape->stem_out = std::move(stem_out);
    tape->stem_relu = cur;
    tape->unit_caches.resize(units.size());
  }

  for (size_t i = 0; i < units.size(); ++i) {
    cur = units[i].forward(cur, mode, update_running, tape ? &tape->unit_caches[i] : nullptr);
    if (pool_after[i]) {
      if (tape) tape->pool_inputs[i] = cur;
      cur = max_pool(cur, kTemporalPoolWindow, kTemporalPoolStride, Padding::Same);
    }
  }

  Matrix pooled = global_avg_pool_thw(cur);
  Matrix logits = linear(pooled, head_w.w, head_b.w);
  if (tape) {
    tape->feat_shape = cur.shape;
    tape->pooled = std::move(pooled);
  }
  return logits;
}

Tensor Network::backward(const Tape& tp, const Matrix& dlogits) {
  LinearGrads hg = linear_backward(tp.pooled, head_w.w, dlogits);
  for (size_t i = 0; i < head_w.g.data.size(); ++i) head_w.g.data[i] += hg.dw.data[i];
  for (size_t i = 0; i < head_b.g.size(); ++i) head_b.g[i] += hg.db[i];

  Tensor dcur = global_avg_pool_thw_backward(tp.feat_shape, hg.dx);
  for (size_t i = units.size(); i-- > 0;) {
    if (pool_after[i]) {
      const Tensor& pin = tp.pool_inputs.at(i);
      dcur = max_pool_backward(pin, kTemporalPoolWindow, kTemporalPoolStride, Padding::Same, dcur);
    }
    dcur = units[i].backward(tp.unit_caches[i], dcur);
  }

  Tensor dpre = relu_backward(tp.stem_relu, dcur);
  BnGrads bg = batch_norm_backward(stem_bn.bn, tp.stem_bnc, tp.stem_out, dpre, Mode::Train);
  for (size_t i = 0; i < stem_bn.dgamma.size(); ++i) {
    stem_bn.dgamma[i] += bg.dgamma[i];
    stem_bn.dbeta[i] += bg.dbeta[i];
  }
  Conv3dGrads sg = conv3d_backward(tp.input, stem.w, cfg.stem.stride, Padding::Same, bg.dx);
  for (size_t i = 0; i < stem.g.data.size(); ++i) stem.g.data[i] += sg.dkernel.data[i];
  return sg.dx;
}

void Network::visit_params(const ParamVisitor& fn) {
  fn(ParamRef{"stem.conv", stem.w.data.data(), stem.g.data.data(), stem.w.size(), true,
              {stem.w.c_out, stem.w.c_in, stem.w.kt, stem.w.kh, stem.w.kw}});
  fn(ParamRef{"stem.bn.gamma", stem_bn.bn.gamma.data(), stem_bn.dgamma.data(),
              static_cast<i64>(stem_bn.bn.gamma.size()), false, {stem_bn.bn.channels}});
  fn(ParamRef{"stem.bn.beta", stem_bn.bn.beta.data(), stem_bn.dbeta.data(),
              static_cast<i64>(stem_bn.bn.beta.size()), false, {stem_bn.bn.channels}});
  size_t block = 0, within = 0;
  for (auto& u : units) {
    while (block < cfg.blocks.size() && within >= static_cast<size_t>(cfg.blocks[block].units)) {
      ++block;
      within = 0;
    }
    const std::string prefix =
        "block" + std::to_string(block + 1) + ".unit" + std::to_string(within) + ".";
    u.visit_params(prefix, fn);
    ++within;
  }
  fn(ParamRef{"head.fc.w", head_w.w.data.data(), head_w.g.data.data(), head_w.w.size(), true,
              {head_w.w.rows, head_w.w.cols}});
  fn(ParamRef{"head.fc.b", head_b.w.data(), head_b.g.data(), static_cast<i64>(head_b.w.size()),
              false, {static_cast<i64>(head_b.w.size())}});
}

void Network::visit_state(const StateVisitor& fn) {
  fn(StateRef{"stem.bn.running_mean", stem_bn.bn.running_mean.data(),
              static_cast<i64>(stem_bn.bn.running_mean.size())});
  fn(StateRef{"stem.bn.running_var", stem_bn.bn.running_var.data(),
              static_cast<i64>(stem_bn.bn.running_var.size())});
  size_t block = 0, within = 0;
  for (auto& u : units) {
    while (block < cfg.blocks.size() && within >= static_cast<size_t>(cfg.blocks[block].units)) {
      ++block;
      within = 0;
    }
    const std::string prefix =
        "block" + std::to_string(block + 1) + ".unit" + std::to_string(within) + ".";
    u.visit_state(prefix, fn);
    ++within;
  }
}

void Network::zero_grads() {
  visit_params([](const ParamRef& p) { std::fill(p.grad, p.grad + p.len, 0.0); });
}

i64 Network::param_count() {
  i64 n = 0;
  visit_params([&](const ParamRef& p) { n += p.len; });
  return n;
}

void Network::inject_coefficients_all(std::array<double, 3> row, bool raw) {
  bool any = false;
  for (auto& u : units)
    if (u.cost) {
      Matrix m(u.cost->c_out, 3);
      for (i64 r = 0; r < m.rows; ++r)
        for (i64 c = 0; c < 3; ++c) m.at(r, c) = row[static_cast<size_t>(c)];
      u.cost->inject(m, raw);
      any = true;
    }
  check(any, "inject_coefficients_all: network has no CoST units");
}

void Network::clear_injections() {
  for (auto& u : units)
    if (u.cost) u.cost->clear_injection();
}

// ---------------------------------------------------------------------------
// checkpoints: manifest.json + one binary tensor file per named array

void save_checkpoint(const std::filesystem::path& dir, Network& net, const CheckpointExtra* extra,
                     DType dtype) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "tensors", ec);
  if (ec) throw IoError("cannot create checkpoint dir " + dir.string());

  json manifest;
  manifest["format"] = "cost-checkpoint";
  manifest["version"] = 1;
  manifest["network_config"] = json::parse(net.cfg.to_json_string());
  manifest["tensors"] = json::array();

  auto dump = [&](const std::string& name, const double* data, i64 len, std::vector<i64> dims) {
    const std::string file = "tensors/" + name + ".cost";
    if (dims.empty()) dims = {len};
    write_tensor_file(dir / file, dims, std::span<const double>(data, static_cast<size_t>(len)),
                      dtype);
    manifest["tensors"].push_back({{"name", name}, {"file", file}, {"dims", dims}});
  };

  net.visit_params([&](const ParamRef& p) { dump(p.name, p.value, p.len, p.dims); });
  net.visit_state([&](const StateRef& s) { dump(s.name, s.value, s.len, {}); });
  if (extra) {
    for (const auto& [name, vel] : extra->momentum)
      dump("momentum." + name, vel.data(), static_cast<i64>(vel.size()), {});
    manifest["train_state"] = {{"step", extra->step},
                               {"best_val", extra->best_val},
                               {"best_step", extra->best_step}};
  }

  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write checkpoint manifest in " + dir.string());
  out << manifest.dump(2) << "\n";
}

Network load_checkpoint(const std::filesystem::path& dir, CheckpointExtra* extra_out) {
  namespace fs = std::filesystem;
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("cannot open checkpoint manifest in " + dir.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw IoError("bad checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "cost-checkpoint")
    throw IoError("not a checkpoint manifest: " + (dir / "manifest.json").string());

  Network net = Network::build(NetworkConfig::from_json_string(manifest["network_config"].dump()));

  std::map<std::string, std::filesystem::path> files;
  for (const auto& t : manifest["tensors"])
    files[t["name"].get<std::string>()] = dir / t["file"].get<std::string>();

  auto restore = [&](const std::string& name, double* data, i64 len) {
    auto it = files.find(name);
    if (it == files.end()) throw IoError("checkpoint missing tensor " + name);
    TensorFile tf = read_tensor_file(it->second);
    if (tf.size() != len)
      throw IoError("checkpoint tensor " + name + " has wrong size");
    std::copy(tf.data.begin(), tf.data.end(), data);
    files.erase(it);
  };

  net.visit_params([&](const ParamRef& p) { restore(p.name, p.value, p.len); });
  net.visit_state([&](const StateRef& s) { restore(s.name, s.value, s.len); });

  if (extra_out) {
    extra_out->momentum.clear();
    for (auto& [name, path] : files) {
      if (name.rfind("momentum.", 0) == 0) {
        TensorFile tf = read_tensor_file(path);
        extra_out->momentum[name.substr(9)] = std::move(tf.data);
      }
    }
    if (manifest.contains("train_state") && !manifest["train_state"].is_null()) {
      extra_out->step = manifest["train_state"].value("step", i64{0});
      extra_out->best_val = manifest["train_state"].value("best_val", -1.0);
      extra_out->best_step = manifest["train_state"].value("best_step", i64{-1});
    }
  }
  return net;
}

}  // namespace cost
