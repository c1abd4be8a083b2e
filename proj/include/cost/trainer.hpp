#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>

#include "cost/network.hpp"
#include "cost/synth_data.hpp"

namespace cost {

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  i64 batch_size = 16;
  i64 total_steps = 3000;
  std::vector<i64> lr_drop_steps;  // empty -> 60% and 85% of total_steps
  double lr_drop_factor = 10.0;
  u64 seed = 0;
  std::string dtype = "f64";  // "f32" only changes checkpoint storage precision
  i64 eval_every = 100;

  std::vector<i64> effective_drop_steps() const;
  std::string to_json_string() const;
  static TrainConfig from_json_string(const std::string& text);
  void validate() const;
};

struct MetricsRecord {
  i64 step = 0;
  double train_loss = 0.0;
  double val_top1 = 0.0;
  std::optional<double> val_top1_appearance, val_top1_motion, val_top1_mixed;
  double wall_ms = 0.0;  // measured; kept out of the serialized stream so
                         // identical runs produce identical files
};

struct CrossEntropyResult {
  double loss = 0.0;
  Matrix dlogits;
};
/// Mean softmax cross-entropy; gradient is (softmax - onehot) / n.
CrossEntropyResult cross_entropy_loss(const Matrix& logits, std::span<const i64> labels);

/// v <- mu*v + (g + lambda*theta); theta <- theta - lr*v
void sgd_update(std::span<double> theta, std::span<const double> grad, std::span<double> velocity,
                double lr, double momentum, double weight_decay);

struct SgdState {
  std::map<std::string, std::vector<double>> velocity;
};
/// One optimizer step over every network parameter. Weight decay only touches
/// conv/linear weights, never BN parameters, biases or coefficient logits.
void sgd_step(Network& net, SgdState& state, double lr, const TrainConfig& cfg);

/// Piecewise-constant schedule: lr divided by lr_drop_factor at each drop step.
double lr_at(i64 step, const TrainConfig& cfg);

struct EvalResult {
  double top1 = 0.0;
  std::optional<double> by_kind_appearance, by_kind_motion, by_kind_mixed;
};
EvalResult evaluate(Network& net, const std::vector<SyntheticClip>& clips, i64 batch_size);

/// Averaged softmax scores over n_clips windows sampled evenly along T.
Matrix evaluate_multiclip(Network& net, const Tensor& long_clip, int n_clips);

struct TrainOutputs {
  std::optional<std::filesystem::path> metrics_csv;
  std::optional<std::filesystem::path> metrics_jsonl;
  std::optional<std::filesystem::path> checkpoint_dir;  // gets best/ and final/
};

struct TrainResult {
  std::vector<MetricsRecord> metrics;
  double best_val = -1.0;
  i64 best_step = -1;
  EvalResult final_eval;
};

/// Deterministic SGD loop: batch composition is a pure function of
/// (cfg.seed, epoch), so a resumed run replays exactly. NaN loss raises
/// DivergenceError. resume, when given, carries the restored step counter and
/// momentum (weights are already in net).
TrainResult train(Network& net, const Dataset& data, const TrainConfig& cfg,
                  const TrainOutputs& outputs = {}, const CheckpointExtra* resume = nullptr);

/// Batch tensor from clips[indices].
Tensor stack_clips(const std::vector<SyntheticClip>& clips, std::span<const i64> indices);

}  // namespace cost
