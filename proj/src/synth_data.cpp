#include "cost/synth_data.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cost/errors.hpp"
#include "cost/rng.hpp"
#include "cost/serialize.hpp"

namespace cost {

using nlohmann::json;

const char* class_kind_name(ClassKind k) {
  switch (k) {
    case ClassKind::Appearance: return "appearance";
    case ClassKind::Motion: return "motion";
    case ClassKind::Mixed: return "mixed";
  }
  return "?";
}
ClassKind class_kind_from_string(const std::string& s) {
  if (s == "appearance") return ClassKind::Appearance;
  if (s == "motion") return ClassKind::Motion;
  if (s == "mixed") return ClassKind::Mixed;
  throw std::invalid_argument("unknown class kind: " + s);
}
const char* shape_kind_name(ShapeKind s) {
  switch (s) {
    case ShapeKind::Circle: return "circle";
    case ShapeKind::Square: return "square";
    case ShapeKind::Cross: return "cross";
    case ShapeKind::Triangle: return "triangle";
  }
  return "?";
}
ShapeKind shape_kind_from_string(const std::string& s) {
  if (s == "circle") return ShapeKind::Circle;
  if (s == "square") return ShapeKind::Square;
  if (s == "cross") return ShapeKind::Cross;
  if (s == "triangle") return ShapeKind::Triangle;
  throw std::invalid_argument("unknown shape: " + s);
}
const char* trajectory_name(TrajectoryKind t) {
  switch (t) {
    case TrajectoryKind::Static: return "static";
    case TrajectoryKind::Left: return "left";
    case TrajectoryKind::Right: return "right";
    case TrajectoryKind::Up: return "up";
    case TrajectoryKind::Down: return "down";
  }
  return "?";
}
TrajectoryKind trajectory_from_string(const std::string& s) {
  if (s == "static") return TrajectoryKind::Static;
  if (s == "left") return TrajectoryKind::Left;
  if (s == "right") return TrajectoryKind::Right;
  if (s == "up") return TrajectoryKind::Up;
  if (s == "down") return TrajectoryKind::Down;
  throw std::invalid_argument("unknown trajectory: " + s);
}

DatasetSpec DatasetSpec::default_spec() {
  DatasetSpec spec;
  spec.classes = {
      {"circle_static", ClassKind::Appearance, ShapeKind::Circle, TrajectoryKind::Static, 12, 0},
      {"square_static", ClassKind::Appearance, ShapeKind::Square, TrajectoryKind::Static, 12, 0},
      {"cross_static", ClassKind::Appearance, ShapeKind::Cross, TrajectoryKind::Static, 12, 0},
      {"triangle_static", ClassKind::Appearance, ShapeKind::Triangle, TrajectoryKind::Static, 12,
       0},
      {"square_left", ClassKind::Motion, ShapeKind::Square, TrajectoryKind::Left, 8, 2},
      {"square_right", ClassKind::Motion, ShapeKind::Square, TrajectoryKind::Right, 8, 2},
      {"square_up", ClassKind::Motion, ShapeKind::Square, TrajectoryKind::Up, 8, 2},
      {"square_down", ClassKind::Motion, ShapeKind::Square, TrajectoryKind::Down, 8, 2},
  };
  return spec;
}

std::string DatasetSpec::to_json_string() const {
  json j;
  j["classes"] = json::array();
  for (const auto& c : classes)
    j["classes"].push_back({{"name", c.name},
                            {"kind", class_kind_name(c.kind)},
                            {"shape", shape_kind_name(c.shape)},
                            {"trajectory", trajectory_name(c.trajectory)},
                            {"size", c.size},
                            {"speed", c.speed}});
  j["clips_per_class_train"] = clips_per_class_train;
  j["clips_per_class_val"] = clips_per_class_val;
  j["t"] = t;
  j["h"] = h;
  j["w"] = w;
  j["c"] = c;
  j["noise_sigma"] = noise_sigma;
  j["train_seed"] = train_seed;
  j["val_seed"] = val_seed;
  return j.dump(2);
}

DatasetSpec DatasetSpec::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("dataset spec: ") + e.what());
  }
  try {
    DatasetSpec spec;
    spec.classes.clear();
    if (j.contains("classes")) {
      for (const auto& c : j["classes"]) {
        ClassSpec cs;
        cs.name = c.value("name", std::string("class") + std::to_string(spec.classes.size()));
        cs.kind = class_kind_from_string(c.value("kind", "appearance"));
        cs.shape = shape_kind_from_string(c.value("shape", "square"));
        cs.trajectory = trajectory_from_string(c.value("trajectory", "static"));
        cs.size = c.value("size", i64{10});
        cs.speed = c.value("speed", i64{0});
        spec.classes.push_back(cs);
      }
    }
    spec.clips_per_class_train = j.value("clips_per_class_train", spec.clips_per_class_train);
    spec.clips_per_class_val = j.value("clips_per_class_val", spec.clips_per_class_val);
    spec.t = j.value("t", spec.t);
    spec.h = j.value("h", spec.h);
    spec.w = j.value("w", spec.w);
    spec.c = j.value("c", spec.c);
    spec.noise_sigma = j.value("noise_sigma", spec.noise_sigma);
    spec.train_seed = j.value("train_seed", spec.train_seed);
    spec.val_seed = j.value("val_seed", spec.val_seed);
    if (spec.train_seed == spec.val_seed)
      throw ConfigError("dataset spec: train_seed and val_seed must be disjoint");
    return spec;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("dataset spec: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("dataset spec: ") + e.what());
  }
}

DatasetSpec DatasetSpec::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read dataset spec " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json_string(text);
}

DatasetSpec DatasetSpec::subset_by_kind(ClassKind kind) const {
  DatasetSpec out = *this;
  out.classes.clear();
  for (const auto& c : classes)
    if (c.kind == kind) out.classes.push_back(c);
  return out;
}

namespace {

// shape mask within a size x size bounding box
bool in_shape(ShapeKind shape, i64 size, i64 dy, i64 dx) {
  switch (shape) {
    case ShapeKind::Square:
      return true;
    case ShapeKind::Circle: {
      const double cy = (size - 1) / 2.0, cx = (size - 1) / 2.0;
      const double r = size / 2.0;
      const double y = dy - cy, x = dx - cx;
      return y * y + x * x <= r * r;
    }
    case ShapeKind::Cross: {
      const i64 arm = std::max<i64>(2, size / 3);
      const i64 lo = (size - arm) / 2, hi = lo + arm;
      return (dy >= lo && dy < hi) || (dx >= lo && dx < hi);
    }
    case ShapeKind::Triangle: {
      const double cx = (size - 1) / 2.0;
      return std::abs(dx - cx) * 2.0 <= static_cast<double>(dy) + 1.0;
    }
  }
  return false;
}

void velocity_of(TrajectoryKind traj, i64 speed, i64& vy, i64& vx) {
  vy = vx = 0;
  switch (traj) {
    case TrajectoryKind::Static: break;
    case TrajectoryKind::Left: vx = -speed; break;
    case TrajectoryKind::Right: vx = speed; break;
    case TrajectoryKind::Up: vy = -speed; break;
    case TrajectoryKind::Down: vy = speed; break;
  }
}

i64 wrap(i64 v, i64 m) { return ((v % m) + m) % m; }

u64 split_seed(const DatasetSpec& spec, Split split) {
  return split == Split::Train ? spec.train_seed : spec.val_seed;
}

}  // namespace

Tensor render_moving_shape(i64 t, i64 h, i64 w, i64 c, ShapeKind shape, i64 size, i64 start_y,
                           i64 start_x, i64 vel_y, i64 vel_x) {
  check(size >= 1 && size <= std::min(h, w), "render_moving_shape: invalid shape size");
  Tensor video(Shape5{1, t, h, w, c});
  for (i64 f = 0; f < t; ++f) {
    const i64 y0 = start_y + f * vel_y;
    const i64 x0 = start_x + f * vel_x;
    for (i64 dy = 0; dy < size; ++dy)
      for (i64 dx = 0; dx < size; ++dx) {
        if (!in_shape(shape, size, dy, dx)) continue;
        const i64 py = wrap(y0 + dy, h);
        const i64 px = wrap(x0 + dx, w);
        for (i64 ch = 0; ch < c; ++ch) video.at(0, f, py, px, ch) = 1.0;
      }
  }
  return video;
}

SyntheticClip generate_clip(const DatasetSpec& spec, i64 class_id, i64 index, Split split) {
  check(class_id >= 0 && class_id < static_cast<i64>(spec.classes.size()),
        "generate_clip: class id out of range");
  const ClassSpec& cls = spec.classes[static_cast<size_t>(class_id)];

  SyntheticClip clip;
  clip.label = class_id;
  clip.kind = cls.kind;
  clip.shape = cls.shape;
  clip.trajectory = cls.trajectory;
  clip.size = cls.size;
  clip.speed = cls.speed;
  clip.seed = mix_seed(split_seed(spec, split), static_cast<u64>(class_id),
                       static_cast<u64>(index));

  Rng rng(clip.seed);
  clip.start_y = rng.index(spec.h);
  clip.start_x = rng.index(spec.w);
  i64 vy = 0, vx = 0;
  velocity_of(cls.trajectory, cls.speed, vy, vx);
  clip.video = render_moving_shape(spec.t, spec.h, spec.w, spec.c, cls.shape, cls.size,
                                   clip.start_y, clip.start_x, vy, vx);
  if (spec.noise_sigma > 0.0) {
    for (double& v : clip.video.data)
      v = std::clamp(v + rng.normal(0.0, spec.noise_sigma), 0.0, 1.0);
  }
  return clip;
}

Dataset generate_dataset(const DatasetSpec& spec) {
  Dataset ds;
  ds.spec = spec;
  for (i64 cls = 0; cls < static_cast<i64>(spec.classes.size()); ++cls) {
    for (i64 i = 0; i < spec.clips_per_class_train; ++i)
      ds.train.push_back(generate_clip(spec, cls, i, Split::Train));
    for (i64 i = 0; i < spec.clips_per_class_val; ++i)
      ds.val.push_back(generate_clip(spec, cls, i, Split::Val));
  }
  return ds;
}

namespace {

void write_split(const DatasetSpec& spec, const std::filesystem::path& dir, Split split) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "clips", ec);
  if (ec) throw IoError("cannot create " + (dir / "clips").string());

  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw IoError("cannot write " + (dir / "manifest.csv").string());
  manifest << "clip_id,file,label,class_kind,seed\n";

  const i64 per_class =
      split == Split::Train ? spec.clips_per_class_train : spec.clips_per_class_val;
  i64 clip_id = 0;
  for (i64 cls = 0; cls < static_cast<i64>(spec.classes.size()); ++cls) {
    for (i64 i = 0; i < per_class; ++i, ++clip_id) {
      SyntheticClip clip = generate_clip(spec, cls, i, split);
      char name[48];
      std::snprintf(name, sizeof(name), "clips/clip_%06lld.cost",
                    static_cast<long long>(clip_id));
      save_tensor(dir / name, clip.video);
      manifest << clip_id << "," << name << "," << clip.label << ","
               << class_kind_name(clip.kind) << "," << clip.seed << "\n";
    }
  }
}

}  // namespace

void write_dataset(const DatasetSpec& spec, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset dir " + dir.string());
  {
    std::ofstream out(dir / "dataset.json");
    if (!out) throw IoError("cannot write " + (dir / "dataset.json").string());
    out << spec.to_json_string() << "\n";
  }
  write_split(spec, dir / "train", Split::Train);
  write_split(spec, dir / "val", Split::Val);
}

std::vector<SyntheticClip> read_split(const DatasetSpec& spec, const std::filesystem::path& dir,
                                      Split split) {
  const std::filesystem::path split_dir = dir / (split == Split::Train ? "train" : "val");
  std::ifstream manifest(split_dir / "manifest.csv");
  if (!manifest) throw IoError("cannot open " + (split_dir / "manifest.csv").string());

  std::vector<SyntheticClip> clips;
  std::string line;
  std::getline(manifest, line);  // header
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string clip_id, file, label, kind, seed;
    if (!std::getline(is, clip_id, ',') || !std::getline(is, file, ',') ||
        !std::getline(is, label, ',') || !std::getline(is, kind, ',') ||
        !std::getline(is, seed, ','))
      throw IoError("malformed manifest row: " + line);
    SyntheticClip clip;
    clip.video = load_tensor(split_dir / file);
    if (clip.video.shape.t != spec.t || clip.video.shape.h != spec.h ||
        clip.video.shape.w != spec.w || clip.video.shape.c != spec.c)
      throw IoError("clip " + file + " does not match the dataset spec shape");
    clip.label = std::stoll(label);
    clip.kind = class_kind_from_string(kind);
    clip.seed = std::stoull(seed);
    if (clip.label < 0 || clip.label >= static_cast<i64>(spec.classes.size()))
      throw IoError("clip " + file + " has out-of-range label");
    clips.push_back(std::move(clip));
  }
  return clips;
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.spec = DatasetSpec::from_json_file(dir / "dataset.json");
  ds.train = read_split(ds.spec, dir, Split::Train);
  ds.val = read_split(ds.spec, dir, Split::Val);
  return ds;
}

}  // namespace cost
