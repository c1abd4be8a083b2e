#include "cost/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "cost/errors.hpp"

namespace cost {

using nlohmann::json;

std::vector<i64> TrainConfig::effective_drop_steps() const {
  if (!lr_drop_steps.empty()) return lr_drop_steps;
  std::vector<i64> drops;
  for (i64 d : {total_steps * 6 / 10, total_steps * 85 / 100})
    if (d > 0 && (drops.empty() || d > drops.back())) drops.push_back(d);
  return drops;
}

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("train config: lr must be positive");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (total_steps < 0) throw ConfigError("train config: total_steps must be >= 0");
  if (lr_drop_factor <= 0.0) throw ConfigError("train config: lr_drop_factor must be positive");
  if (dtype != "f64" && dtype != "f32")
    throw ConfigError("train config: dtype must be f64 or f32");
  if (eval_every < 1) throw ConfigError("train config: eval_every must be >= 1");
  const auto drops = effective_drop_steps();
  for (size_t i = 1; i < drops.size(); ++i)
    if (drops[i] <= drops[i - 1]) throw ConfigError("train config: drop steps must increase");
}

std::string TrainConfig::to_json_string() const {
  json j;
  j["lr"] = lr;
  j["momentum"] = momentum;
  j["weight_decay"] = weight_decay;
  j["batch_size"] = batch_size;
  j["total_steps"] = total_steps;
  j["lr_drop_steps"] = lr_drop_steps;
  j["lr_drop_factor"] = lr_drop_factor;
  j["seed"] = seed;
  j["dtype"] = dtype;
  j["eval_every"] = eval_every;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  try {
    TrainConfig cfg;
    cfg.lr = j.value("lr", cfg.lr);
    cfg.momentum = j.value("momentum", cfg.momentum);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.total_steps = j.value("total_steps", cfg.total_steps);
    if (j.contains("lr_drop_steps")) cfg.lr_drop_steps = j["lr_drop_steps"].get<std::vector<i64>>();
    cfg.lr_drop_factor = j.value("lr_drop_factor", cfg.lr_drop_factor);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.dtype = j.value("dtype", cfg.dtype);
    cfg.eval_every = j.value("eval_every", cfg.eval_every);
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

CrossEntropyResult cross_entropy_loss(const Matrix& logits, std::span<const i64> labels) {
  check(static_cast<i64>(labels.size()) == logits.rows, "cross_entropy: one label per row");
  const i64 n = logits.rows, k = logits.cols;
  CrossEntropyResult out;
  out.dlogits = Matrix(n, k);
  double total = 0.0;
  for (i64 r = 0; r < n; ++r) {
    const i64 y = labels[static_cast<size_t>(r)];
    check(y >= 0 && y < k, "cross_entropy: label out of range");
    double mx = logits.at(r, 0);
    for (i64 c = 1; c < k; ++c) mx = std::max(mx, logits.at(r, c));
    double sum = 0.0;
    for (i64 c = 0; c < k; ++c) sum += std::exp(logits.at(r, c) - mx);
    const double lse = mx + std::log(sum);
    total += lse - logits.at(r, y);
    for (i64 c = 0; c < k; ++c) {
      const double p = std::exp(logits.at(r, c) - mx) / sum;
      out.dlogits.at(r, c) = (p - (c == y ? 1.0 : 0.0)) / static_cast<double>(n);
    }
  }
  out.loss = total / static_cast<double>(n);
  return out;
}

void sgd_update(std::span<double> theta, std::span<const double> grad, std::span<double> velocity,
                double lr, double momentum, double weight_decay) {
  check(theta.size() == grad.size() && theta.size() == velocity.size(),
        "sgd_update: length mismatch");
  for (size_t i = 0; i < theta.size(); ++i) {
    velocity[i] = momentum * velocity[i] + (grad[i] + weight_decay * theta[i]);
    theta[i] -= lr * velocity[i];
  }
}

void sgd_step(Network& net, SgdState& state, double lr, const TrainConfig& cfg) {
  net.visit_params([&](const ParamRef& p) {
    auto& v = state.velocity[p.name];
    if (v.empty()) v.assign(static_cast<size_t>(p.len), 0.0);
    const double decay = p.decay ? cfg.weight_decay : 0.0;
    sgd_update({p.value, static_cast<size_t>(p.len)}, {p.grad, static_cast<size_t>(p.len)},
               v, lr, cfg.momentum, decay);
  });
}

double lr_at(i64 step, const TrainConfig& cfg) {
  double lr = cfg.lr;
  for (i64 drop : cfg.effective_drop_steps())
    if (step >= drop) lr /= cfg.lr_drop_factor;
  return lr;
}

Tensor stack_clips(const std::vector<SyntheticClip>& clips, std::span<const i64> indices) {
  check(!indices.empty(), "stack_clips: empty batch");
  const Shape5 s0 = clips[static_cast<size_t>(indices[0])].video.shape;
  Tensor batch(Shape5{static_cast<i64>(indices.size()), s0.t, s0.h, s0.w, s0.c});
  const i64 stride = s0.t * s0.h * s0.w * s0.c;
  for (size_t i = 0; i < indices.size(); ++i) {
    const Tensor& v = clips[static_cast<size_t>(indices[i])].video;
    check(v.shape == s0, "stack_clips: mixed clip shapes");
    std::copy(v.data.begin(), v.data.end(), batch.data.begin() + static_cast<i64>(i) * stride);
  }
  return batch;
}

EvalResult evaluate(Network& net, const std::vector<SyntheticClip>& clips, i64 batch_size) {
  check(!clips.empty(), "evaluate: empty clip set");
  i64 correct = 0;
  std::map<ClassKind, std::pair<i64, i64>> per_kind;  // kind -> {correct, total}

  for (size_t begin = 0; begin < clips.size(); begin += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(clips.size(), begin + static_cast<size_t>(batch_size));
    std::vector<i64> idx(end - begin);
    std::iota(idx.begin(), idx.end(), static_cast<i64>(begin));
    Tensor batch = stack_clips(clips, idx);
    Matrix logits = net.forward(batch, Mode::Eval);
    for (size_t i = begin; i < end; ++i) {
      const i64 r = static_cast<i64>(i - begin);
      i64 argmax = 0;
      for (i64 c = 1; c < logits.cols; ++c)
        if (logits.at(r, c) > logits.at(r, argmax)) argmax = c;
      const bool ok = argmax == clips[i].label;
      correct += ok;
      auto& [good, total] = per_kind[clips[i].kind];
      good += ok;
      total += 1;
    }
  }

  EvalResult res;
  res.top1 = static_cast<double>(correct) / static_cast<double>(clips.size());
  auto kind_acc = [&](ClassKind k) -> std::optional<double> {
    auto it = per_kind.find(k);
    if (it == per_kind.end()) return std::nullopt;
    return static_cast<double>(it->second.first) / static_cast<double>(it->second.second);
  };
  res.by_kind_appearance = kind_acc(ClassKind::Appearance);
  res.by_kind_motion = kind_acc(ClassKind::Motion);
  res.by_kind_mixed = kind_acc(ClassKind::Mixed);
  return res;
}

Matrix evaluate_multiclip(Network& net, const Tensor& long_clip, int n_clips) {
  check(long_clip.shape.n == 1, "evaluate_multiclip: expects a single clip");
  check(n_clips >= 1, "evaluate_multiclip: n_clips must be >= 1");
  const i64 T = net.cfg.t;
  const i64 Tl = long_clip.shape.t;
  check(Tl >= T, "evaluate_multiclip: clip shorter than the network window");

  std::vector<i64> starts;
  if (n_clips == 1) {
    starts.push_back((Tl - T) / 2);
  } else {
    for (int i = 0; i < n_clips; ++i) {
      const double f = static_cast<double>(i) * static_cast<double>(Tl - T) /
                       static_cast<double>(n_clips - 1);
      starts.push_back(static_cast<i64>(std::llround(f)));
    }
  }

  Matrix avg(1, net.cfg.num_classes);
  for (i64 start : starts) {
    Tensor window(Shape5{1, T, long_clip.shape.h, long_clip.shape.w, long_clip.shape.c});
    const i64 frame = long_clip.shape.h * long_clip.shape.w * long_clip.shape.c;
    std::copy(long_clip.data.begin() + start * frame,
              long_clip.data.begin() + (start + T) * frame, window.data.begin());
    Matrix scores = softmax_rows(net.forward(window, Mode::Eval));
    for (i64 c = 0; c < avg.cols; ++c) avg.at(0, c) += scores.at(0, c);
  }
  for (double& v : avg.data) v /= static_cast<double>(n_clips);
  return avg;
}

namespace {

std::string csv_opt(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", *v);
  return buf;
}

void append_metrics(const MetricsRecord& m, std::ostream* csv, std::ostream* jsonl) {
  if (csv) {
    char loss[32], top1[32];
    std::snprintf(loss, sizeof(loss), "%.17g", m.train_loss);
    std::snprintf(top1, sizeof(top1), "%.17g", m.val_top1);
    *csv << m.step << "," << loss << "," << top1 << "," << csv_opt(m.val_top1_appearance) << ","
         << csv_opt(m.val_top1_motion) << "," << csv_opt(m.val_top1_mixed) << "\n";
    csv->flush();
  }
  if (jsonl) {
    json j;
    j["step"] = m.step;
    j["train_loss"] = m.train_loss;
    j["val_top1"] = m.val_top1;
    auto put = [&](const char* key, const std::optional<double>& v) {
      if (v)
        j[key] = *v;
      else
        j[key] = nullptr;
    };
    put("val_top1_appearance", m.val_top1_appearance);
    put("val_top1_motion", m.val_top1_motion);
    put("val_top1_mixed", m.val_top1_mixed);
    *jsonl << j.dump() << "\n";
    jsonl->flush();
  }
}

}  // namespace

TrainResult train(Network& net, const Dataset& data, const TrainConfig& cfg,
                  const TrainOutputs& outputs, const CheckpointExtra* resume) {
  cfg.validate();
  check(!data.train.empty(), "train: empty training set");
  check(!data.val.empty(), "train: empty validation set");
  check(static_cast<i64>(data.train.size()) >= cfg.batch_size,
        "train: batch_size larger than the training set");

  const DType store_dtype = cfg.dtype == "f32" ? DType::F32 : DType::F64;

  const i64 N = static_cast<i64>(data.train.size());
  const i64 steps_per_epoch = N / cfg.batch_size;

  SgdState sgd;
  TrainResult result;
  i64 start_step = 0;
  if (resume) {
    start_step = resume->step;
    for (const auto& [name, v] : resume->momentum) sgd.velocity[name] = v;
    result.best_val = resume->best_val;
    result.best_step = resume->best_step;
  }

  std::ofstream csv, jsonl;
  std::ostream* csv_p = nullptr;
  std::ostream* jsonl_p = nullptr;
  if (outputs.metrics_csv) {
    csv.open(*outputs.metrics_csv, resume ? std::ios::app : std::ios::trunc);
    if (!csv) throw IoError("cannot write " + outputs.metrics_csv->string());
    if (!resume)
      csv << "step,train_loss,val_top1,val_top1_appearance,val_top1_motion,val_top1_mixed\n";
    csv_p = &csv;
  }
  if (outputs.metrics_jsonl) {
    jsonl.open(*outputs.metrics_jsonl, resume ? std::ios::app : std::ios::trunc);
    if (!jsonl) throw IoError("cannot write " + outputs.metrics_jsonl->string());
    jsonl_p = &jsonl;
  }

  // epoch-order cache so a resumed run replays the same batches
  std::vector<i64> perm;
  i64 perm_epoch = -1;
  auto batch_indices = [&](i64 step) {
    const i64 epoch = (step - 1) / steps_per_epoch;
    const i64 within = (step - 1) % steps_per_epoch;
    if (epoch != perm_epoch) {
      perm.resize(static_cast<size_t>(N));
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng(mix_seed(cfg.seed, 0x51AFF1E5ULL, static_cast<u64>(epoch)));
      rng.shuffle(perm);
      perm_epoch = epoch;
    }
    return std::vector<i64>(perm.begin() + within * cfg.batch_size,
                            perm.begin() + (within + 1) * cfg.batch_size);
  };

  auto save_ckpt = [&](const std::filesystem::path& dir, i64 step) {
    CheckpointExtra extra;
    extra.step = step;
    extra.best_val = result.best_val;
    extra.best_step = result.best_step;
    extra.momentum = sgd.velocity;
    save_checkpoint(dir, net, &extra, store_dtype);
  };

  double last_loss = 0.0;
  auto run_eval = [&](i64 step, double wall_ms) {
    EvalResult ev = evaluate(net, data.val, cfg.batch_size);
    MetricsRecord m;
    m.step = step;
    m.train_loss = last_loss;
    m.val_top1 = ev.top1;
    m.val_top1_appearance = ev.by_kind_appearance;
    m.val_top1_motion = ev.by_kind_motion;
    m.val_top1_mixed = ev.by_kind_mixed;
    m.wall_ms = wall_ms;
    result.metrics.push_back(m);
    append_metrics(m, csv_p, jsonl_p);
    if (ev.top1 > result.best_val) {
      result.best_val = ev.top1;
      result.best_step = step;
      if (outputs.checkpoint_dir) save_ckpt(*outputs.checkpoint_dir / "best", step);
    }
    result.final_eval = ev;
    return ev;
  };

  const auto t0 = std::chrono::steady_clock::now();
  for (i64 step = start_step + 1; step <= cfg.total_steps; ++step) {
    const std::vector<i64> idx = batch_indices(step);
    Tensor batch = stack_clips(data.train, idx);
    std::vector<i64> labels(idx.size());
    for (size_t i = 0; i < idx.size(); ++i)
      labels[i] = data.train[static_cast<size_t>(idx[i])].label;

    Network::Tape tape;
    Matrix logits = net.forward(batch, Mode::Train, &tape, /*update_running=*/true);
    CrossEntropyResult ce = cross_entropy_loss(logits, labels);
    if (!std::isfinite(ce.loss))
      throw DivergenceError("training diverged at step " + std::to_string(step) +
                            " (loss is not finite)");
    last_loss = ce.loss;

    net.zero_grads();
    net.backward(tape, ce.dlogits);
    sgd_step(net, sgd, lr_at(step, cfg), cfg);

    if (step % cfg.eval_every == 0 || step == cfg.total_steps) {
      const double wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
              .count();
      run_eval(step, wall_ms);
    }
  }

  if (cfg.total_steps == start_step) {
    // nothing to do; still report the current state
    run_eval(start_step, 0.0);
  }

  if (outputs.checkpoint_dir) save_ckpt(*outputs.checkpoint_dir / "final", cfg.total_steps);
  return result;
}

}  // namespace cost
