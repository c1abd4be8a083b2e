// cost: dataset generation, training, verification oracles, counters and
// coefficient analysis for the three-view shared-kernel video operation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cost/analysis.hpp"
#include "cost/baseline.hpp"
#include "cost/conv.hpp"
#include "cost/errors.hpp"
#include "cost/gradcheck_suites.hpp"
#include "cost/manifest.hpp"
#include "cost/reference.hpp"
#include "cost/trainer.hpp"

namespace fs = std::filesystem;
using namespace cost;

namespace {

constexpr const char* kVersion = "0.1.0";

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitDivergence = 4;
constexpr int kExitOracle = 5;

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
}

RunManifest begin_manifest(const std::string& command, const std::string& config_json, u64 seed) {
  RunManifest m;
  m.command = command;
  m.config_hash = canonical_json_hash(config_json);
  m.seed = seed;
  m.version = kVersion;
  m.started_at = iso8601_now();
  return m;
}

int cmd_gen(const std::string& spec_path, const std::string& out_dir) {
  DatasetSpec spec =
      spec_path.empty() ? DatasetSpec::default_spec() : DatasetSpec::from_json_file(spec_path);
  RunManifest manifest = begin_manifest("gen", spec.to_json_string(), spec.train_seed);

  write_dataset(spec, out_dir);
  manifest.add_output_tree(out_dir, out_dir);
  manifest.finished_at = iso8601_now();
  manifest.write(fs::path(out_dir) / "run_manifest.json");

  const i64 clips = static_cast<i64>(spec.classes.size()) *
                    (spec.clips_per_class_train + spec.clips_per_class_val);
  std::cout << "wrote " << clips << " clips for " << spec.classes.size() << " classes to "
            << out_dir << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& unit_override, bool no_share,
              const std::string& resume_dir) {
  nlohmann::json cfg_json = nlohmann::json::object();
  if (!config_path.empty()) {
    try {
      cfg_json = nlohmann::json::parse(read_file(config_path));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("train config: ") + e.what());
    }
  }
  NetworkConfig ncfg = cfg_json.contains("network")
                           ? NetworkConfig::from_json_string(cfg_json["network"].dump())
                           : NetworkConfig::default_micro();
  TrainConfig tcfg = cfg_json.contains("train")
                         ? TrainConfig::from_json_string(cfg_json["train"].dump())
                         : TrainConfig{};
  if (!unit_override.empty()) ncfg.unit_kind = unit_kind_from_string(unit_override);
  if (no_share) ncfg.share_weights = false;
  tcfg.validate();

  if (!fs::is_directory(data_dir)) throw IoError("data directory not found: " + data_dir);
  fs::create_directories(out_dir);

  nlohmann::json effective;
  effective["network"] = nlohmann::json::parse(ncfg.to_json_string());
  effective["train"] = nlohmann::json::parse(tcfg.to_json_string());
  RunManifest manifest = begin_manifest("train", effective.dump(), tcfg.seed);

  Dataset data = read_dataset(data_dir);

  Network net = Network::build(ncfg);
  CheckpointExtra resume_state;
  const CheckpointExtra* resume = nullptr;
  if (!resume_dir.empty()) {
    net = load_checkpoint(resume_dir, &resume_state);
    resume = &resume_state;
  }

  TrainOutputs outputs;
  outputs.metrics_csv = fs::path(out_dir) / "metrics.csv";
  outputs.metrics_jsonl = fs::path(out_dir) / "metrics.jsonl";
  outputs.checkpoint_dir = fs::path(out_dir) / "checkpoints";
  write_file(fs::path(out_dir) / "config.json", effective.dump(2) + "\n");

  TrainResult result = train(net, data, tcfg, outputs, resume);

  manifest.add_output_tree(out_dir, out_dir);
  manifest.finished_at = iso8601_now();
  manifest.write(fs::path(out_dir) / "run_manifest.json");

  std::cout << "final val_top1=" << result.final_eval.top1 << " best=" << result.best_val
            << " at step " << result.best_step << "\n";
  return kExitOk;
}

void print_suites(const std::vector<SuiteResult>& suites) {
  for (const auto& s : suites) {
    std::printf("%-28s probes=%-4lld max_rel=%.3e max_abs=%.3e tol=%.0e [%s]\n", s.name.c_str(),
                static_cast<long long>(s.report.probed_coordinates), s.report.max_rel_error,
                s.report.max_abs_error, s.tolerance, s.pass ? "PASS" : "FAIL");
  }
}

int cmd_gradcheck(const std::string& scope, u64 seed, bool corrupt) {
  std::vector<SuiteResult> suites;
  if (scope == "op") {
    suites = gradcheck_ops(seed, corrupt ? 0 : -1);
  } else if (scope == "unit") {
    suites = gradcheck_units(seed);
  } else if (scope == "network") {
    suites = gradcheck_network(seed);
  } else {
    throw ConfigError("gradcheck: scope must be op, unit or network");
  }
  print_suites(suites);
  if (!all_pass(suites)) {
    std::cerr << "gradcheck failed\n";
    return kExitOracle;
  }
  return kExitOk;
}

int cmd_flops(const std::string& config_path, const std::string& out_dir) {
  NetworkConfig ncfg = config_path.empty() ? NetworkConfig::default_micro()
                                           : NetworkConfig::from_json_file(config_path);
  Network net = Network::build(ncfg);
  OpCostReport report = count_cost(net);

  // per-element kernel factors for the k sweep
  std::string sweep = "k,cost_naive,cost_opt,c3d\n";
  for (i64 k : {3, 5, 7}) {
    sweep += std::to_string(k) + "," + std::to_string(cost_ma_factor_naive(k)) + "," +
             std::to_string(cost_ma_factor_optimized(k)) + "," + std::to_string(c3d_ma_factor(k)) +
             "\n";
  }

  std::cout << report.to_csv() << "\n" << sweep;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    RunManifest manifest = begin_manifest("flops", ncfg.to_json_string(), ncfg.seed);
    report.write_csv(fs::path(out_dir) / "op_cost.csv");
    report.write_json(fs::path(out_dir) / "op_cost.json");
    write_file(fs::path(out_dir) / "k_sweep.csv", sweep);
    manifest.add_output_tree(out_dir, out_dir);
    manifest.finished_at = iso8601_now();
    manifest.write(fs::path(out_dir) / "run_manifest.json");
  }
  return kExitOk;
}

int cmd_analyze(const std::string& checkpoint_dir, const std::string& data_dir,
                const std::string& out_dir) {
  if (!fs::is_directory(checkpoint_dir))
    throw IoError("checkpoint directory not found: " + checkpoint_dir);
  if (!fs::is_directory(data_dir)) throw IoError("data directory not found: " + data_dir);

  Network net = load_checkpoint(checkpoint_dir);
  Dataset data = read_dataset(data_dir);
  fs::create_directories(out_dir);

  RunManifest manifest = begin_manifest("analyze", net.cfg.to_json_string(), net.cfg.seed);

  CoefficientProfile profile = coefficient_profile(net, data.val);
  auto ranking = class_temporal_ranking(net, data.val);

  write_file(fs::path(out_dir) / "coefficient_profile.csv", profile.to_csv());
  write_file(fs::path(out_dir) / "coefficient_profile.json", profile.to_json_string() + "\n");
  write_file(fs::path(out_dir) / "profile_plot_data.csv", profile.plot_data_csv());
  write_file(fs::path(out_dir) / "class_temporal_ranking.csv", ranking_to_csv(ranking));
  write_file(fs::path(out_dir) / "class_temporal_ranking.json", ranking_to_json(ranking) + "\n");

  manifest.add_output_tree(out_dir, out_dir);
  manifest.finished_at = iso8601_now();
  manifest.write(fs::path(out_dir) / "run_manifest.json");

  std::cout << "overall mean coefficients: hw=" << profile.overall[0]
            << " tw=" << profile.overall[1] << " th=" << profile.overall[2]
            << " (temporal share " << profile.overall_temporal_share() << ")\n";
  return kExitOk;
}

int cmd_oracle(const std::string& which, i64 k, u64 seed) {
  Rng rng(mix_seed(seed, 0x0AC1EULL));
  if (which == "masked-c3d") {
    double worst = 0.0;
    for (i64 kk : {i64{3}, i64{5}}) {
      if (k > 0 && kk != k) continue;
      for (i64 c : {1, 2, 4}) {
        SharedKernel shared(c, c, kk);
        rng.fill_normal(shared.w, 0.7);
        Matrix alpha = softmax_rows([&] {
          Matrix m(c, 3);
          rng.fill_normal(m.data, 0.8);
          return m;
        }());
        ConvKernel masked = cost_to_masked_c3d_kernel(shared, alpha);
        for (int rep = 0; rep < 5; ++rep) {
          Tensor x(Shape5{1, 2 * kk, 7, 7, c});
          rng.fill_normal(x.data, 1.0);
          Tensor fused = fuse_views(conv_three_views(x, shared), alpha);
          Tensor via_c3d = conv3d(x, masked, {}, Padding::Same);
          for (size_t i = 0; i < fused.data.size(); ++i)
            worst = std::max(worst, std::abs(fused.data[i] - via_c3d.data[i]));
        }
      }
    }
    std::printf("masked-c3d equivalence: max |diff| = %.3e (tolerance 1e-10)\n", worst);
    if (worst > 1e-10) throw OracleError("masked-c3d equivalence exceeded tolerance");
    return kExitOk;
  }
  if (which == "receptive-field") {
    const i64 kk = k > 0 ? k : 3;
    const i64 cost_rf = receptive_field_count(UnitKind::CoST_a, kk, seed);
    const i64 c3d_rf = receptive_field_count(UnitKind::C3D_333, kk, seed);
    const i64 c2d_rf = receptive_field_count(UnitKind::C2D, kk, seed);
    std::printf("receptive field (k=%lld): cost=%lld c3d=%lld c2d=%lld\n",
                static_cast<long long>(kk), static_cast<long long>(cost_rf),
                static_cast<long long>(c3d_rf), static_cast<long long>(c2d_rf));
    if (cost_rf != cost_receptive_field_formula(kk) || c3d_rf != c3d_ma_factor(kk) ||
        c2d_rf != kk * kk)
      throw OracleError("receptive field counts do not match the closed forms");
    return kExitOk;
  }
  if (which == "conv") {
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      Tensor x(Shape5{1, 1 + rng.index(4), 3 + rng.index(4), 3 + rng.index(4), 1 + rng.index(3)});
      rng.fill_normal(x.data, 1.0);
      ConvKernel kern(1 + rng.index(3), x.shape.c, 1 + 2 * rng.index(2), 3, 3);
      rng.fill_normal(kern.data, 0.7);
      Tensor fast = conv3d(x, kern, {}, Padding::Same);
      Tensor slow = ref::conv3d_naive(x, kern, {}, Padding::Same);
      for (size_t i = 0; i < fast.data.size(); ++i)
        worst = std::max(worst, std::abs(fast.data[i] - slow.data[i]));
    }
    std::printf("conv3d vs naive oracle: max |diff| = %.3e (tolerance 1e-12)\n", worst);
    if (worst > 1e-12) throw OracleError("conv3d disagrees with the naive oracle");
    return kExitOk;
  }
  throw ConfigError("oracle: --which must be masked-c3d, receptive-field or conv");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"three-view shared-kernel spatiotemporal convolution toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string spec_path, out_dir, config_path, data_dir, unit_override, resume_dir;
  std::string scope = "op", which, checkpoint_dir;
  bool no_share = false, corrupt = false;
  u64 seed = 0;
  i64 k = 0;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("--spec", spec_path, "dataset spec JSON (default built-in)");
  gen->add_option("--out", out_dir, "output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "train a network");
  train_cmd->add_option("--config", config_path, "JSON with network/train sections");
  train_cmd->add_option("--data", data_dir, "dataset directory")->required();
  train_cmd->add_option("--out", out_dir, "output directory")->required();
  train_cmd->add_option("--unit", unit_override,
                        "unit kind: c2d|c3d311|c3d333|cost-a|cost-b");
  train_cmd->add_flag("--no-share", no_share, "disable kernel sharing across views");
  train_cmd->add_option("--resume", resume_dir, "checkpoint directory to resume from");

  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck_cmd->add_option("--scope", scope, "op|unit|network")->required();
  gradcheck_cmd->add_option("--seed", seed, "probe seed");
  gradcheck_cmd->add_flag("--corrupt", corrupt,
                          "negative control: corrupt one analytic gradient");

  auto* flops = app.add_subcommand("flops", "parameter and multiply-add counters");
  flops->add_option("--config", config_path, "network config JSON (default micro)");
  flops->add_option("--out", out_dir, "optional output directory");

  auto* analyze = app.add_subcommand("analyze", "coefficient profiles and rankings");
  analyze->add_option("--checkpoint", checkpoint_dir, "checkpoint directory")->required();
  analyze->add_option("--data", data_dir, "dataset directory")->required();
  analyze->add_option("--out", out_dir, "output directory")->required();

  auto* oracle = app.add_subcommand("oracle", "equivalence and counting oracles");
  oracle->add_option("--which", which, "masked-c3d|receptive-field|conv")->required();
  oracle->add_option("--k", k, "kernel size (odd)");
  oracle->add_option("--seed", seed, "randomness seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen(spec_path, out_dir);
    if (train_cmd->parsed())
      return cmd_train(config_path, data_dir, out_dir, unit_override, no_share, resume_dir);
    if (gradcheck_cmd->parsed()) return cmd_gradcheck(scope, seed, corrupt);
    if (flops->parsed()) return cmd_flops(config_path, out_dir);
    if (analyze->parsed()) return cmd_analyze(checkpoint_dir, data_dir, out_dir);
    if (oracle->parsed()) return cmd_oracle(which, k, seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const OracleError& e) {
    std::cerr << "oracle failure: " << e.what() << "\n";
    return kExitOracle;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
