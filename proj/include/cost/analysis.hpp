#pragma once

#include <array>
#include <filesystem>
#include <map>

#include "cost/trainer.hpp"

namespace cost {

struct LayerCoeffProfile {
  std::string layer;
  int depth_index = 0;
  double mean_hw = 0.0, mean_tw = 0.0, mean_th = 0.0;
};

/// Mean fusion coefficients per CoST layer over a validation set, averaged
/// over samples and channels; overall is the unweighted mean across layers.
struct CoefficientProfile {
  std::vector<LayerCoeffProfile> per_layer;
  std::array<double, 3> overall{};
  i64 n_samples = 0;
  bool is_constant = false;  // CoST(a): data-independent coefficients
  double depth_temporal_correlation = 0.0;  // reported, not asserted

  double overall_temporal_share() const { return overall[1] + overall[2]; }
  std::string to_csv() const;
  std::string to_json_string() const;
  /// (x, y) = (depth_index, temporal share) series for external plotting.
  std::string plot_data_csv() const;
};

CoefficientProfile coefficient_profile(Network& net, const std::vector<SyntheticClip>& clips,
                                       i64 batch_size = 16);

struct ClassTemporalRow {
  i64 class_id = 0;
  ClassKind kind = ClassKind::Appearance;
  double temporal_score = 0.0;  // mean(a_tw + a_th) over samples and CoST layers
};

/// Sorted descending by score, ties broken by class id.
std::vector<ClassTemporalRow> class_temporal_ranking(Network& net,
                                                     const std::vector<SyntheticClip>& clips,
                                                     i64 batch_size = 16);
std::string ranking_to_csv(const std::vector<ClassTemporalRow>& rows);
std::string ranking_to_json(const std::vector<ClassTemporalRow>& rows);

struct AblationVariantResult {
  std::string variant;
  EvalResult eval;
  i64 params = 0;
  i64 ma_naive = 0;
  i64 ma_opt = 0;
  std::optional<CoefficientProfile> profile;
};

struct AblationReport {
  std::vector<AblationVariantResult> variants;
  std::vector<std::string> kinds_present;

  /// Long format, one row per (variant, class kind present).
  std::string to_csv() const;
  std::string to_json_string() const;
};

/// Trains C2D, C3D_311, C3D_333, CoST(a), CoST(b) and CoST(b) without weight
/// sharing under identical seeds and configs.
AblationReport ablation_suite(const Dataset& data, const NetworkConfig& base_net,
                              const TrainConfig& base_train);

}  // namespace cost
