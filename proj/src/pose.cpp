#include "posesynth/pose.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "posesynth/errors.hpp"

namespace posesynth {

double Quaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quaternion operator*(const Quaternion& a, const Quaternion& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

Quaternion canonical_hemisphere(const Quaternion& q) {
  if (q.w > 0.0) return q;
  if (q.w < 0.0) return -q;
  for (double c : {q.x, q.y, q.z}) {
    if (c > 0.0) return q;
    if (c < 0.0) return -q;
  }
  return q;
}

Quaternion normalize_quaternion(const Quaternion& q) {
  const double n = q.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw Error(ErrorCode::DegenerateRotation, "quaternion has zero or non-finite norm");
  }
  // Already-unit input is kept bit for bit so normalization is idempotent.
  if (std::abs(n - 1.0) <= 4.0 * std::numeric_limits<double>::epsilon()) return canonical_hemisphere(q);
  return canonical_hemisphere({q.w / n, q.x / n, q.y / n, q.z / n});
}

Mat3 quat_to_matrix(const Quaternion& q) {
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  return {{{1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)},
           {2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)},
           {2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)}}};
}

namespace {

double determinant(const Mat3& m) {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

}  // namespace

Quaternion matrix_to_quat(const Mat3& r) {
  constexpr double kTol = 1e-4;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (!std::isfinite(r[i][j])) throw Error(ErrorCode::InvalidRotation, "non-finite matrix entry");
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += r[k][i] * r[k][j];
      if (std::abs(dot - (i == j ? 1.0 : 0.0)) > kTol) {
        throw Error(ErrorCode::InvalidRotation, "matrix is not orthonormal");
      }
    }
  }
  if (determinant(r) <= 0.0) throw Error(ErrorCode::InvalidRotation, "matrix has non-positive determinant");

  // Pick the largest of (trace, diagonal entries) to keep the divisor away from zero.
  const double trace = r[0][0] + r[1][1] + r[2][2];
  Quaternion q;
  if (trace >= r[0][0] && trace >= r[1][1] && trace >= r[2][2]) {
    const double s = 2.0 * std::sqrt(1.0 + trace);
    q = {0.25 * s, (r[2][1] - r[1][2]) / s, (r[0][2] - r[2][0]) / s, (r[1][0] - r[0][1]) / s};
  } else if (r[0][0] >= r[1][1] && r[0][0] >= r[2][2]) {
    const double s = 2.0 * std::sqrt(1.0 + r[0][0] - r[1][1] - r[2][2]);
    q = {(r[2][1] - r[1][2]) / s, 0.25 * s, (r[0][1] + r[1][0]) / s, (r[0][2] + r[2][0]) / s};
  } else if (r[1][1] >= r[2][2]) {
    const double s = 2.0 * std::sqrt(1.0 + r[1][1] - r[0][0] - r[2][2]);
    q = {(r[0][2] - r[2][0]) / s, (r[0][1] + r[1][0]) / s, 0.25 * s, (r[1][2] + r[2][1]) / s};
  } else {
    const double s = 2.0 * std::sqrt(1.0 + r[2][2] - r[0][0] - r[1][1]);
    q = {(r[1][0] - r[0][1]) / s, (r[0][2] + r[2][0]) / s, (r[1][2] + r[2][1]) / s, 0.25 * s};
  }
  return normalize_quaternion(q);
}

double rotation_angle(const Quaternion& a, const Quaternion& b) {
  // Relative rotation conj(a) * b, written so that a == b gives an exactly
  // zero vector part; atan2 then stays exact near zero where acos does not.
  const double w = a.dot(b);
  const double x = (a.w * b.x - b.w * a.x) - (a.y * b.z - a.z * b.y);
  const double y = (a.w * b.y - b.w * a.y) - (a.z * b.x - a.x * b.z);
  const double z = (a.w * b.z - b.w * a.z) - (a.x * b.y - a.y * b.x);
  return 2.0 * std::atan2(std::sqrt(x * x + y * y + z * z), std::abs(w));
}

Quaternion slerp(const Quaternion& q0, const Quaternion& q1, double t) {
  Quaternion end = q1;
  double cos_theta = q0.dot(q1);
  if (cos_theta < 0.0) {
    end = -q1;
    cos_theta = -cos_theta;
  }
  if (t <= 0.0) return canonical_hemisphere(q0);
  if (t >= 1.0) return canonical_hemisphere(q1);

  double k0 = 1.0 - t;
  double k1 = t;
  // Nearly parallel: the sine ratio is ill-conditioned, plain lerp is accurate.
  if (cos_theta < 0.9995) {
    const double theta = std::acos(cos_theta);
    const double sin_theta = std::sin(theta);
    k0 = std::sin((1.0 - t) * theta) / sin_theta;
    k1 = std::sin(t * theta) / sin_theta;
  }
  return normalize_quaternion({k0 * q0.w + k1 * end.w, k0 * q0.x + k1 * end.x, k0 * q0.y + k1 * end.y,
                               k0 * q0.z + k1 * end.z});
}

Pose::Pose(const Vec3& translation, const Quaternion& rotation)
    : translation_(translation), rotation_(normalize_quaternion(rotation)) {
  for (double v : translation_) {
    if (!std::isfinite(v)) throw Error(ErrorCode::ParseError, "non-finite translation component");
  }
}

Pose Pose::from_flat(std::span<const double> v) {
  if (v.size() != kFlatSize) {
    throw Error(ErrorCode::ShapeError, "pose vector needs 7 values, got " + std::to_string(v.size()));
  }
  return Pose({v[0], v[1], v[2]}, {v[3], v[4], v[5], v[6]});
}

std::array<double, Pose::kFlatSize> Pose::flatten() const {
  return {translation_[0], translation_[1], translation_[2], rotation_.w, rotation_.x, rotation_.y, rotation_.z};
}

double pose_distance(const Pose& a, const Pose& b, double alpha) {
  const double dx = a.translation()[0] - b.translation()[0];
  const double dy = a.translation()[1] - b.translation()[1];
  const double dz = a.translation()[2] - b.translation()[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz) + alpha * rotation_angle(a.rotation(), b.rotation());
}

Trajectory interpolate_trajectory(std::span<const Pose> keyposes, int frames_per_segment) {
  if (keyposes.size() < 2) {
    throw Error(ErrorCode::InsufficientKeyposes, "need at least 2 keyposes, got " + std::to_string(keyposes.size()));
  }
  if (frames_per_segment < 1) throw Error(ErrorCode::ConfigError, "frames_per_segment must be >= 1");

  Trajectory out;
  out.poses.reserve((keyposes.size() - 1) * static_cast<std::size_t>(frames_per_segment) + 1);
  for (std::size_t seg = 0; seg + 1 < keyposes.size(); ++seg) {
    const Pose& a = keyposes[seg];
    const Pose& b = keyposes[seg + 1];
    for (int f = 0; f < frames_per_segment; ++f) {
      const double t = static_cast<double>(f) / frames_per_segment;
      Vec3 tr;
      for (int i = 0; i < 3; ++i) tr[i] = a.translation()[i] + t * (b.translation()[i] - a.translation()[i]);
      out.poses.emplace_back(tr, slerp(a.rotation(), b.rotation(), t));
    }
  }
  out.poses.push_back(keyposes.back());
  return out;
}

TrajectorySpec parse_trajectory_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("trajectory JSON: ") + e.what());
  }
  TrajectorySpec spec;
  try {
    for (const auto& kp : doc.at("keyposes")) {
      const auto t = kp.at("t").get<std::vector<double>>();
      const auto q = kp.at("q").get<std::vector<double>>();
      if (t.size() != 3 || q.size() != 4) throw Error(ErrorCode::ParseError, "keypose needs t[3] and q[4]");
      spec.keyposes.emplace_back(Vec3{t[0], t[1], t[2]}, Quaternion{q[0], q[1], q[2], q[3]});
    }
    spec.frames_per_segment = doc.value("frames_per_segment", 1);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("trajectory JSON: ") + e.what());
  }
  return spec;
}

std::string trajectory_to_json(const TrajectorySpec& spec) {
  nlohmann::json doc;
  doc["keyposes"] = nlohmann::json::array();
  for (const auto& p : spec.keyposes) {
    const auto& t = p.translation();
    const auto& q = p.rotation();
    doc["keyposes"].push_back({{"t", {t[0], t[1], t[2]}}, {"q", {q.w, q.x, q.y, q.z}}});
  }
  doc["frames_per_segment"] = spec.frames_per_segment;
  return doc.dump(2);
}

std::string format_pose(const Pose& pose) {
  std::string out;
  char buf[32];
  for (double v : pose.flatten()) {
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    if (!out.empty()) out.push_back(' ');
    out.append(buf, res.ptr);
  }
  return out;
}

Pose parse_pose_text(const std::string& text) {
  std::istringstream in(text);
  std::vector<double> values;
  std::string token;
  while (in >> token) {
    for (char& c : token) {
      if (c == ',') c = ' ';
    }
    std::istringstream sub(token);
    std::string piece;
    while (sub >> piece) {
      double v = 0.0;
      auto res = std::from_chars(piece.data(), piece.data() + piece.size(), v);
      if (res.ec != std::errc() || res.ptr != piece.data() + piece.size()) {
        throw Error(ErrorCode::ParseError, "bad pose token '" + piece + "'");
      }
      values.push_back(v);
    }
  }
  if (values.size() != Pose::kFlatSize) {
    throw Error(ErrorCode::ParseError, "pose needs 7 values, got " + std::to_string(values.size()));
  }
  return Pose::from_flat(values);
}

}  // namespace posesynth
