#pragma once

#include <filesystem>
#include <map>
#include <optional>

#include "cost/serialize.hpp"
#include "cost/units.hpp"

namespace cost {

struct StemSpec {
  i64 kt = 1, kh = 5, kw = 5;
  i64 c_out = 8;
  Stride3 stride{1, 2, 2};
};

struct BlockSpec {
  int units = 2;
  i64 c_mid = 8;
  i64 c_out = 16;
  i64 spatial_stride = 1;  // first unit of the block strides H and W
};

struct NetworkConfig {
  i64 t = 8, h = 32, w = 32, c = 3;
  StemSpec stem;
  std::vector<BlockSpec> blocks{{2, 8, 16, 1}, {2, 16, 32, 2}, {2, 32, 64, 2}};
  bool temporal_pool_after_block1 = true;
  UnitKind unit_kind = UnitKind::CoST_b;
  int cost_every_n = 2;   // place a special unit every n units within a block
  int cost_offset = 1;    // 0-based phase: default hits the 2nd, 4th, ... unit
  bool share_weights = true;
  i64 num_classes = 8;
  u64 seed = 1;

  static NetworkConfig default_micro();
  std::string to_json_string() const;
  static NetworkConfig from_json_string(const std::string& text);
  static NetworkConfig from_json_file(const std::filesystem::path& path);

  bool unit_is_special(int index_in_block) const;
  i64 expected_special_units() const;
};

/// Micro video classifier: 2D stem conv + bottleneck blocks with the
/// configured unit kind placed periodically + global average pool + linear
/// head. Initialization is a pure function of cfg.seed.
struct Network {
  NetworkConfig cfg;
  ConvParam stem;
  BnParam stem_bn;
  std::vector<ResidualUnit> units;
  std::vector<char> pool_after;  // temporal max pool after unit i
  MatrixParam head_w;            // feature_dim x num_classes
  VecParam head_b;

  struct Tape {
    Tensor input;
    Tensor stem_out;
    BnCache stem_bnc;
    Tensor stem_relu;
    std::vector<ResidualUnit::Cache> unit_caches;
    std::map<size_t, Tensor> pool_inputs;
    Shape5 feat_shape{};
    Matrix pooled;
  };

  static Network build(const NetworkConfig& cfg);

  /// Logits (n x num_classes). Train mode normalizes with batch statistics;
  /// running stats move only when update_running is set.
  Matrix forward(const Tensor& x, Mode mode, Tape* tape = nullptr, bool update_running = false);
  /// Accumulates parameter gradients; returns the input gradient.
  Tensor backward(const Tape& tape, const Matrix& dlogits);

  void visit_params(const ParamVisitor& fn);
  void visit_state(const StateVisitor& fn);
  void zero_grads();
  i64 param_count();
  i64 feature_dim() const { return cfg.blocks.back().c_out; }

  /// Test mode: force the same coefficient row on every CoST unit.
  void inject_coefficients_all(std::array<double, 3> row, bool raw = true);
  void clear_injections();
};

/// Optimizer / bookkeeping state stored alongside the weights.
struct CheckpointExtra {
  i64 step = 0;
  double best_val = -1.0;
  i64 best_step = -1;
  std::map<std::string, std::vector<double>> momentum;
};

/// f32 storage halves checkpoint size but is lossy; bit-exact resume needs f64.
void save_checkpoint(const std::filesystem::path& dir, Network& net,
                     const CheckpointExtra* extra = nullptr, DType dtype = DType::F64);
Network load_checkpoint(const std::filesystem::path& dir, CheckpointExtra* extra_out = nullptr);

}  // namespace cost
