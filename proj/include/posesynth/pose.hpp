#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

namespace posesynth {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

/// Rotation quaternion, component order (w, x, y, z).
struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double norm() const;
  double dot(const Quaternion& other) const { return w * other.w + x * other.x + y * other.y + z * other.z; }
  Quaternion operator-() const { return {-w, -x, -y, -z}; }
  bool operator==(const Quaternion&) const = default;
};

/// Hamilton product.
Quaternion operator*(const Quaternion& a, const Quaternion& b);

/// Scales to unit norm and flips into the canonical hemisphere (w >= 0; when
/// w == 0 the first nonzero of x, y, z is positive).
/// Throws DegenerateRotation for a zero (or non-finite) quaternion.
Quaternion normalize_quaternion(const Quaternion& q);

/// Hemisphere flip only; q must already be unit.
Quaternion canonical_hemisphere(const Quaternion& q);

Mat3 quat_to_matrix(const Quaternion& q);

/// Shepperd-style extraction. Throws InvalidRotation unless R is orthonormal
/// within 1e-4 with positive determinant.
Quaternion matrix_to_quat(const Mat3& rotation);

/// Angle of the relative rotation, 2 acos(|<a, b>|), in [0, pi].
double rotation_angle(const Quaternion& a, const Quaternion& b);

/// Shorter-arc spherical interpolation. The result is canonicalized.
Quaternion slerp(const Quaternion& q0, const Quaternion& q1, double t);

/// Rigid camera placement: camera centre in world coordinates plus the
/// camera-to-world rotation. Immutable once built; the rotation is always unit
/// and canonical.
class Pose {
 public:
  static constexpr std::size_t kFlatSize = 7;

  Pose() = default;
  Pose(const Vec3& translation, const Quaternion& rotation);

  /// Inverse of flatten(): (x, y, z, w, qx, qy, qz).
  static Pose from_flat(std::span<const double> values);

  const Vec3& translation() const { return translation_; }
  const Quaternion& rotation() const { return rotation_; }

  std::array<double, kFlatSize> flatten() const;

  bool operator==(const Pose&) const = default;

 private:
  Vec3 translation_{0.0, 0.0, 0.0};
  Quaternion rotation_{};
};

/// ||t_a - t_b|| + alpha * rotation_angle(q_a, q_b). Default alpha weighs one
/// radian like one metre.
double pose_distance(const Pose& a, const Pose& b, double alpha = 1.0);

struct Trajectory {
  std::vector<Pose> poses;

  std::size_t frame_count() const { return poses.size(); }
};

/// Linear translation / slerp rotation between consecutive keyposes. Output has
/// (n - 1) * frames_per_segment + 1 frames and starts/ends on the keyposes.
/// Throws InsufficientKeyposes for fewer than two keyposes.
Trajectory interpolate_trajectory(std::span<const Pose> keyposes, int frames_per_segment);

/// Trajectory authoring file:
///   {"keyposes": [{"t": [x, y, z], "q": [w, qx, qy, qz]}, ...], "frames_per_segment": n}
struct TrajectorySpec {
  std::vector<Pose> keyposes;
  int frames_per_segment = 1;
};

TrajectorySpec parse_trajectory_json(const std::string& text);
std::string trajectory_to_json(const TrajectorySpec& spec);

/// Flattened 7-vector as whitespace-separated text with round-trip precision.
std::string format_pose(const Pose& pose);
Pose parse_pose_text(const std::string& text);

}  // namespace posesynth
