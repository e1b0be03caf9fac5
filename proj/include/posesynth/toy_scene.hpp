#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "posesynth/dataset.hpp"
#include "posesynth/image.hpp"
#include "posesynth/pose.hpp"

namespace posesynth {

/// Deterministic generator used wherever reproducible randomness is needed
/// outside libtorch (scene layouts, pose sampling, shuffling). Distributions
/// are derived from raw bits so results do not depend on the standard library.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next() % n; }

 private:
  std::uint64_t state_;
};

using Color = std::array<double, 3>;

struct ToyPrimitive {
  enum class Kind { Sphere, Box };
  Kind kind = Kind::Sphere;
  Vec3 center{0.0, 0.0, 0.0};
  /// Sphere: extent[0] is the radius. Box: half extents along x, y, z.
  Vec3 extent{0.5, 0.5, 0.5};
  Color color{1.0, 0.0, 0.0};
};

/// Procedural scene: flat-shaded primitives over a checkerboard ground plane
/// (y = 0, y up) under a vertical sky gradient, plus the view-sphere used to
/// sample camera poses around it.
struct ToySceneSpec {
  std::uint64_t seed = 7;
  int image_size = 64;
  double fov_deg = 60.0;
  std::vector<ToyPrimitive> primitives;

  bool ground = true;
  double checker_size = 2.0;
  Color ground_a{0.80, 0.80, 0.75};
  Color ground_b{0.35, 0.35, 0.40};
  Color sky_horizon{0.85, 0.90, 1.00};
  Color sky_zenith{0.35, 0.55, 0.90};

  Vec3 view_center{0.0, 0.5, 0.0};
  double view_radius = 7.0;
  double radius_jitter = 0.2;
  double azimuth_min_deg = -50.0;
  double azimuth_max_deg = 50.0;
  double elevation_min_deg = 15.0;
  double elevation_max_deg = 35.0;
  double lookat_jitter = 0.1;
};

/// Random layout of `count` primitives resting on the ground, drawn from `seed`.
std::vector<ToyPrimitive> random_layout(std::uint64_t seed, int count);

/// Default scene with its layout populated from the seed.
ToySceneSpec make_toy_scene(std::uint64_t seed = 7, int primitive_count = 5, int image_size = 64);

/// Mirror image of the scene across the x = 0 plane.
ToySceneSpec mirror_scene(const ToySceneSpec& spec);
/// Pose that views the mirrored scene the way `pose` views the original.
Pose mirror_pose(const Pose& pose);

double focal_length_px(const ToySceneSpec& spec);

/// Camera at `eye` looking at `target` (camera looks down its -z, y up).
Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up = {0.0, 1.0, 0.0});

Rgb8 toy_render_rgb8(const ToySceneSpec& spec, const Pose& pose);
/// Model-space render in [-1, 1], identical to preprocessing the 8-bit render.
ImageF toy_render(const ToySceneSpec& spec, const Pose& pose);

/// Samples view-sphere poses; train and test pose sets are disjoint. Samples
/// carry their rasters in memory under refs "toy_train/NNNNN.png" and
/// "toy_test/NNNNN.png".
DatasetSplit toy_dataset(const ToySceneSpec& spec, int n_train, int n_test, std::uint64_t pose_sampler_seed);

/// Writes every image as PNG under `dir` plus `poses.txt` in pose-list format,
/// so the directory loads like any other dataset.
void materialize_dataset(const DatasetSplit& split, const std::filesystem::path& dir);

std::string toy_scene_to_json(const ToySceneSpec& spec);
/// Missing keys keep their defaults; an absent "primitives" array is generated
/// from "seed" and "primitive_count".
ToySceneSpec toy_scene_from_json(const std::string& text);

}  // namespace posesynth
