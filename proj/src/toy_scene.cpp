#include "posesynth/toy_scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include <json.hpp>

namespace posesynth {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kFogDistance = 30.0;

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double length(const Vec3& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); }
Vec3 normalized(const Vec3& a) {
  const double n = length(a);
  return {a[0] / n, a[1] / n, a[2] / n};
}
Color mix(const Color& a, const Color& b, double t) {
  return {a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])};
}
Color scaled(const Color& c, double k) { return {c[0] * k, c[1] * k, c[2] * k}; }

Color hsv(double h, double s, double v) {
  const double c = v * s;
  const double hp = std::fmod(h, 1.0) * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  Color rgb{};
  switch (static_cast<int>(hp)) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  const double m = v - c;
  return {rgb[0] + m, rgb[1] + m, rgb[2] + m};
}

struct Camera {
  Mat3 rotation;  // camera-to-world
  Vec3 origin;
  double focal;
  int size;

  Vec3 to_camera(const Vec3& p) const {
    const Vec3 d = sub(p, origin);
    Vec3 out{};
    for (int i = 0; i < 3; ++i) out[i] = rotation[0][i] * d[0] + rotation[1][i] * d[1] + rotation[2][i] * d[2];
    return out;
  }
  /// Pixel-centre offsets from the principal point, image x right / y down.
  double centred(int index) const { return index + 0.5 - size / 2.0; }
  Vec3 ray(int row, int col) const {
    const Vec3 d{centred(col), -centred(row), -focal};
    Vec3 out{};
    for (int i = 0; i < 3; ++i) out[i] = rotation[i][0] * d[0] + rotation[i][1] * d[1] + rotation[i][2] * d[2];
    return out;
  }
};

Color background(const ToySceneSpec& spec, const Camera& cam, const Vec3& dir) {
  const double up = dir[1] / length(dir);
  const Color sky = mix(spec.sky_horizon, spec.sky_zenith, std::clamp(up, 0.0, 1.0));
  if (!spec.ground || dir[1] >= 0.0 || cam.origin[1] <= 0.0) return sky;

  const double t = -cam.origin[1] / dir[1];
  const double hx = cam.origin[0] + t * dir[0];
  const double hz = cam.origin[2] + t * dir[2];
  // round() is odd-symmetric, which keeps the pattern mirror symmetric about x = 0.
  const auto cell = static_cast<long long>(std::round(hx / spec.checker_size)) +
                    static_cast<long long>(std::round(hz / spec.checker_size));
  const Color tile = (cell % 2 == 0) ? spec.ground_a : spec.ground_b;
  const double dist = t * length(dir);
  return mix(spec.sky_horizon, tile, std::exp(-dist / kFogDistance));
}

/// Slab test against an axis-aligned box. Returns the entry parameter and the
/// axis of the entered face, or a negative axis when the ray misses.
std::pair<double, int> intersect_box(const Vec3& origin, const Vec3& dir, const ToyPrimitive& box) {
  double t_enter = -std::numeric_limits<double>::infinity();
  double t_exit = std::numeric_limits<double>::infinity();
  int axis = -1;
  for (int a = 0; a < 3; ++a) {
    const double lo = box.center[a] - box.extent[a];
    const double hi = box.center[a] + box.extent[a];
    if (dir[a] == 0.0) {
      if (origin[a] < lo || origin[a] > hi) return {0.0, -1};
      continue;
    }
    const double inv = 1.0 / dir[a];
    double t1 = (lo - origin[a]) * inv;
    double t2 = (hi - origin[a]) * inv;
    if (t1 > t2) std::swap(t1, t2);
    if (t1 > t_enter) {
      t_enter = t1;
      axis = a;
    }
    t_exit = std::min(t_exit, t2);
  }
  if (t_exit < t_enter || t_exit <= 0.0) return {0.0, -1};
  return {t_enter, t_enter > 0.0 ? axis : 1};
}

}  // namespace

std::vector<ToyPrimitive> random_layout(std::uint64_t seed, int count) {
  SplitMix64 rng(seed);
  std::vector<ToyPrimitive> out;
  int attempts = 0;
  while (static_cast<int>(out.size()) < count && attempts < 10000) {
    ++attempts;
    ToyPrimitive p;
    p.kind = rng.uniform() < 0.5 ? ToyPrimitive::Kind::Sphere : ToyPrimitive::Kind::Box;
    if (p.kind == ToyPrimitive::Kind::Sphere) {
      const double r = rng.uniform(0.45, 0.9);
      p.extent = {r, r, r};
    } else {
      p.extent = {rng.uniform(0.3, 0.8), rng.uniform(0.3, 0.9), rng.uniform(0.3, 0.8)};
    }
    p.center = {rng.uniform(-2.5, 2.5), p.extent[1], rng.uniform(-2.5, 2.5)};
    p.color = hsv(rng.uniform(), 0.75, 0.9);
    const bool overlaps = std::any_of(out.begin(), out.end(), [&](const ToyPrimitive& q) {
      const double dx = q.center[0] - p.center[0], dz = q.center[2] - p.center[2];
      return std::sqrt(dx * dx + dz * dz) < q.extent[0] + p.extent[0] + 0.4;
    });
    if (!overlaps) out.push_back(p);
  }
  return out;
}

ToySceneSpec make_toy_scene(std::uint64_t seed, int primitive_count, int image_size) {
  ToySceneSpec spec;
  spec.seed = seed;
  spec.image_size = image_size;
  spec.primitives = random_layout(seed, primitive_count);
  return spec;
}

ToySceneSpec mirror_scene(const ToySceneSpec& spec) {
  ToySceneSpec out = spec;
  for (auto& p : out.primitives) p.center[0] = -p.center[0];
  out.view_center[0] = -out.view_center[0];
  return out;
}

Pose mirror_pose(const Pose& pose) {
  const auto& t = pose.translation();
  const auto& q = pose.rotation();
  return Pose({-t[0], t[1], t[2]}, {q.w, q.x, -q.y, -q.z});
}

double focal_length_px(const ToySceneSpec& spec) {
  return (spec.image_size / 2.0) / std::tan(spec.fov_deg * kDegToRad / 2.0);
}

Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 forward = normalized(sub(target, eye));
  const Vec3 right = normalized(cross(forward, up));
  const Vec3 back{-forward[0], -forward[1], -forward[2]};
  const Vec3 cam_up = cross(back, right);
  const Mat3 r{{{right[0], cam_up[0], back[0]}, {right[1], cam_up[1], back[1]}, {right[2], cam_up[2], back[2]}}};
  return Pose(eye, matrix_to_quat(r));
}

Rgb8 toy_render_rgb8(const ToySceneSpec& spec, const Pose& pose) {
  const int n = spec.image_size;
  const Camera cam{quat_to_matrix(pose.rotation()), pose.translation(), focal_length_px(spec), n};

  std::vector<Color> frame(static_cast<std::size_t>(n) * n);
  for (int row = 0; row < n; ++row)
    for (int col = 0; col < n; ++col) frame[static_cast<std::size_t>(row) * n + col] = background(spec, cam, cam.ray(row, col));

  // Painter's algorithm: far primitives first.
  std::vector<std::size_t> order(spec.primitives.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> depth(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) depth[i] = -cam.to_camera(spec.primitives[i].center)[2];
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return depth[a] > depth[b]; });

  constexpr double kNear = 1e-3;
  for (std::size_t idx : order) {
    const ToyPrimitive& prim = spec.primitives[idx];
    if (prim.kind == ToyPrimitive::Kind::Sphere) {
      const Vec3 c = cam.to_camera(prim.center);
      const double z = -c[2];
      if (z <= kNear) continue;
      const double cx = cam.focal * c[0] / z;
      const double cy = -cam.focal * c[1] / z;
      const double r = cam.focal * prim.extent[0] / z;
      for (int row = 0; row < n; ++row) {
        const double dy = cam.centred(row) - cy;
        for (int col = 0; col < n; ++col) {
          const double dx = cam.centred(col) - cx;
          if (dx * dx + dy * dy <= r * r) frame[static_cast<std::size_t>(row) * n + col] = prim.color;
        }
      }
    } else {
      constexpr std::array<double, 3> kFaceShade{0.8, 1.0, 0.65};
      for (int row = 0; row < n; ++row) {
        for (int col = 0; col < n; ++col) {
          const auto [t, axis] = intersect_box(cam.origin, cam.ray(row, col), prim);
          if (axis < 0) continue;
          frame[static_cast<std::size_t>(row) * n + col] = scaled(prim.color, kFaceShade[static_cast<std::size_t>(axis)]);
        }
      }
    }
  }

  Rgb8 out(n, n, 3);
  for (int row = 0; row < n; ++row)
    for (int col = 0; col < n; ++col)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(frame[static_cast<std::size_t>(row) * n + col][static_cast<std::size_t>(c)], 0.0, 1.0);
        out.at(row, col, c) = static_cast<std::uint8_t>(std::round(v * 255.0));
      }
  return out;
}

ImageF toy_render(const ToySceneSpec& spec, const Pose& pose) {
  return preprocess_image(toy_render_rgb8(spec, pose), spec.image_size);
}

namespace {

Pose sample_view(const ToySceneSpec& spec, SplitMix64& rng) {
  const double az = rng.uniform(spec.azimuth_min_deg, spec.azimuth_max_deg) * kDegToRad;
  const double el = rng.uniform(spec.elevation_min_deg, spec.elevation_max_deg) * kDegToRad;
  const double r = spec.view_radius * (1.0 + rng.uniform(-spec.radius_jitter, spec.radius_jitter));
  const Vec3& c = spec.view_center;
  const Vec3 eye{c[0] + r * std::cos(el) * std::sin(az), c[1] + r * std::sin(el), c[2] + r * std::cos(el) * std::cos(az)};
  Vec3 target = c;
  for (double& v : target) v += rng.uniform(-spec.lookat_jitter, spec.lookat_jitter);
  return look_at(eye, target);
}

std::string frame_name(const std::string& seq, int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05d.png", index);
  return seq + "/" + buf;
}

}  // namespace

DatasetSplit toy_dataset(const ToySceneSpec& spec, int n_train, int n_test, std::uint64_t pose_sampler_seed) {
  if (n_train < 1 || n_test < 1) throw Error(ErrorCode::ConfigError, "toy dataset needs n_train, n_test >= 1");
  SplitMix64 train_rng(pose_sampler_seed);
  SplitMix64 test_rng(pose_sampler_seed ^ 0x5deece66dULL);

  DatasetSplit split;
  for (int i = 0; i < n_train; ++i) {
    SceneSample s;
    s.pose = sample_view(spec, train_rng);
    s.sequence_id = "toy_train";
    s.image_ref = frame_name(s.sequence_id, i);
    s.raster = std::make_shared<const Rgb8>(toy_render_rgb8(spec, s.pose));
    split.train.push_back(std::move(s));
  }
  for (int i = 0; i < n_test; ++i) {
    SceneSample s;
    do {
      s.pose = sample_view(spec, test_rng);
    } while (std::any_of(split.train.begin(), split.train.end(),
                         [&](const SceneSample& t) { return t.pose == s.pose; }));
    s.sequence_id = "toy_test";
    s.image_ref = frame_name(s.sequence_id, i);
    s.raster = std::make_shared<const Rgb8>(toy_render_rgb8(spec, s.pose));
    split.test.push_back(std::move(s));
  }
  return split;
}

void materialize_dataset(const DatasetSplit& split, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::vector<SceneSample> all = split.train;
  all.insert(all.end(), split.test.begin(), split.test.end());
  for (const auto& s : all) {
    if (!s.raster) throw Error(ErrorCode::IoError, "sample " + s.image_ref + " has no in-memory raster");
    const fs::path target = dir / s.image_ref;
    fs::create_directories(target.parent_path());
    write_png(target, *s.raster);
  }
  write_pose_list(dir / "poses.txt", all);
}

namespace {

nlohmann::json vec_json(const std::array<double, 3>& v) { return {v[0], v[1], v[2]}; }
std::array<double, 3> json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw Error(ErrorCode::ConfigError, "expected a 3-vector");
  return {v[0], v[1], v[2]};
}

}  // namespace

std::string toy_scene_to_json(const ToySceneSpec& spec) {
  nlohmann::json doc;
  doc["seed"] = spec.seed;
  doc["image_size"] = spec.image_size;
  doc["fov_deg"] = spec.fov_deg;
  doc["primitives"] = nlohmann::json::array();
  for (const auto& p : spec.primitives) {
    doc["primitives"].push_back({{"kind", p.kind == ToyPrimitive::Kind::Sphere ? "sphere" : "box"},
                                 {"center", vec_json(p.center)},
                                 {"extent", vec_json(p.extent)},
                                 {"color", vec_json(p.color)}});
  }
  doc["ground"] = spec.ground;
  doc["checker_size"] = spec.checker_size;
  doc["ground_a"] = vec_json(spec.ground_a);
  doc["ground_b"] = vec_json(spec.ground_b);
  doc["sky_horizon"] = vec_json(spec.sky_horizon);
  doc["sky_zenith"] = vec_json(spec.sky_zenith);
  doc["view"] = {{"center", vec_json(spec.view_center)},
                 {"radius", spec.view_radius},
                 {"radius_jitter", spec.radius_jitter},
                 {"azimuth_deg", {spec.azimuth_min_deg, spec.azimuth_max_deg}},
                 {"elevation_deg", {spec.elevation_min_deg, spec.elevation_max_deg}},
                 {"lookat_jitter", spec.lookat_jitter}};
  return doc.dump(2);
}

ToySceneSpec toy_scene_from_json(const std::string& text) {
  ToySceneSpec spec;
  try {
    const auto doc = nlohmann::json::parse(text);
    spec.seed = doc.value("seed", spec.seed);
    spec.image_size = doc.value("image_size", spec.image_size);
    spec.fov_deg = doc.value("fov_deg", spec.fov_deg);
    if (doc.contains("primitives")) {
      for (const auto& j : doc.at("primitives")) {
        ToyPrimitive p;
        const auto kind = j.at("kind").get<std::string>();
        if (kind != "sphere" && kind != "box") throw Error(ErrorCode::ConfigError, "unknown primitive kind " + kind);
        p.kind = kind == "sphere" ? ToyPrimitive::Kind::Sphere : ToyPrimitive::Kind::Box;
        p.center = json_vec(j.at("center"));
        p.extent = json_vec(j.at("extent"));
        p.color = json_vec(j.at("color"));
        spec.primitives.push_back(p);
      }
    } else {
      spec.primitives = random_layout(spec.seed, doc.value("primitive_count", 5));
    }
    spec.ground = doc.value("ground", spec.ground);
    spec.checker_size = doc.value("checker_size", spec.checker_size);
    if (doc.contains("ground_a")) spec.ground_a = json_vec(doc["ground_a"]);
    if (doc.contains("ground_b")) spec.ground_b = json_vec(doc["ground_b"]);
    if (doc.contains("sky_horizon")) spec.sky_horizon = json_vec(doc["sky_horizon"]);
    if (doc.contains("sky_zenith")) spec.sky_zenith = json_vec(doc["sky_zenith"]);
    if (doc.contains("view")) {
      const auto& v = doc["view"];
      if (v.contains("center")) spec.view_center = json_vec(v["center"]);
      spec.view_radius = v.value("radius", spec.view_radius);
      spec.radius_jitter = v.value("radius_jitter", spec.radius_jitter);
      if (v.contains("azimuth_deg")) {
        spec.azimuth_min_deg = v["azimuth_deg"].at(0);
        spec.azimuth_max_deg = v["azimuth_deg"].at(1);
      }
      if (v.contains("elevation_deg")) {
        spec.elevation_min_deg = v["elevation_deg"].at(0);
        spec.elevation_max_deg = v["elevation_deg"].at(1);
      }
      spec.lookat_jitter = v.value("lookat_jitter", spec.lookat_jitter);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("toy scene JSON: ") + e.what());
  }
  if (spec.image_size < 1) throw Error(ErrorCode::ConfigError, "image_size must be positive");
  return spec;
}

}  // namespace posesynth
