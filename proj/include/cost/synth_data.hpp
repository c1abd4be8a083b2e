#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cost/tensor.hpp"

namespace cost {

enum class ClassKind { Appearance, Motion, Mixed };
enum class ShapeKind { Circle, Square, Cross, Triangle };
enum class TrajectoryKind { Static, Left, Right, Up, Down };

const char* class_kind_name(ClassKind k);
ClassKind class_kind_from_string(const std::string& s);
const char* shape_kind_name(ShapeKind s);
ShapeKind shape_kind_from_string(const std::string& s);
const char* trajectory_name(TrajectoryKind t);
TrajectoryKind trajectory_from_string(const std::string& s);

struct ClassSpec {
  std::string name;
  ClassKind kind = ClassKind::Appearance;
  ShapeKind shape = ShapeKind::Square;
  TrajectoryKind trajectory = TrajectoryKind::Static;
  i64 size = 10;   // bounding box edge in pixels
  i64 speed = 0;   // pixels per frame along the trajectory axis
};

/// Appearance classes differ by static shape; motion classes share one shape
/// and size but differ by trajectory, so single frames cannot separate them.
/// Trajectories wrap toroidally: the object never clips at a border.
struct DatasetSpec {
  std::vector<ClassSpec> classes;
  i64 clips_per_class_train = 200;
  i64 clips_per_class_val = 50;
  i64 t = 8, h = 32, w = 32, c = 3;
  double noise_sigma = 0.05;
  u64 train_seed = 101;  // must differ from val_seed
  u64 val_seed = 202;

  /// 4 static shapes + the same square moving left/right/up/down.
  static DatasetSpec default_spec();
  std::string to_json_string() const;
  static DatasetSpec from_json_string(const std::string& text);
  static DatasetSpec from_json_file(const std::filesystem::path& path);

  /// Classes of one kind only, relabeled 0..m-1 (ablation subsets).
  DatasetSpec subset_by_kind(ClassKind kind) const;
};

enum class Split { Train, Val };

struct SyntheticClip {
  Tensor video;  // 1 x T x H x W x C, values in [0,1]
  i64 label = 0;
  ClassKind kind = ClassKind::Appearance;
  u64 seed = 0;
  ShapeKind shape = ShapeKind::Square;
  TrajectoryKind trajectory = TrajectoryKind::Static;
  i64 size = 0, speed = 0, start_y = 0, start_x = 0;
};

/// Noise-free renderer; generate_clip layers seeded noise on top. Exposed so
/// tests can pin trajectories directly.
Tensor render_moving_shape(i64 t, i64 h, i64 w, i64 c, ShapeKind shape, i64 size, i64 start_y,
                           i64 start_x, i64 vel_y, i64 vel_x);

/// Deterministic: identical (spec, class_id, index, split) always reproduces
/// the same clip bit for bit.
SyntheticClip generate_clip(const DatasetSpec& spec, i64 class_id, i64 index, Split split);

struct Dataset {
  DatasetSpec spec;
  std::vector<SyntheticClip> train, val;
};

Dataset generate_dataset(const DatasetSpec& spec);

/// Layout: dir/dataset.json, dir/{train,val}/manifest.csv with columns
/// clip_id,file,label,class_kind,seed and clips in the binary tensor format.
void write_dataset(const DatasetSpec& spec, const std::filesystem::path& dir);
std::vector<SyntheticClip> read_split(const DatasetSpec& spec, const std::filesystem::path& dir,
                                      Split split);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace cost
