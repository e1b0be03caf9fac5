#pragma once

#include <filesystem>
#include <istream>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "posesynth/image.hpp"
#include "posesynth/pose.hpp"

namespace posesynth {

/// Component order of the quaternion in a pose-list file. Internally
/// everything is (w, x, y, z).
enum class QuatOrder { WXYZ, XYZW };

QuatOrder parse_quat_order(const std::string& name);
std::string to_string(QuatOrder order);

/// One (image, pose) training or test pair. When `raster` is set the image
/// lives in memory and `image_ref` is only its name.
struct SceneSample {
  std::string image_ref;
  Pose pose;
  std::string sequence_id;
  std::shared_ptr<const Rgb8> raster;
};

struct DatasetSplit {
  std::vector<SceneSample> train;
  std::vector<SceneSample> test;
};

/// Reads "relative/path.png x y z q0 q1 q2 q3" lines. Lines that do not have
/// exactly 8 tokens before the first valid data line are treated as header.
/// Blank lines are ignored everywhere.
std::vector<SceneSample> parse_pose_list(std::istream& in, QuatOrder order = QuatOrder::WXYZ);
std::vector<SceneSample> read_pose_list(const std::filesystem::path& path, QuatOrder order = QuatOrder::WXYZ);
void write_pose_list(const std::filesystem::path& path, const std::vector<SceneSample>& samples);

/// 4x4 row-major homogeneous camera-to-world matrix (16 reals).
Pose parse_matrix_pose(std::istream& in);

/// Walks `root/<seq>/frame-XXXXXX.pose.txt` files; image refs point at the
/// sibling `frame-XXXXXX.color.png`.
std::vector<SceneSample> load_sevenscenes(const std::filesystem::path& root);

/// Bilinear resize to size x size followed by v / 127.5 - 1.
ImageF preprocess_image(const Rgb8& raster, int size = 256);

/// Partitions by sequence id.
DatasetSplit make_split(const std::vector<SceneSample>& samples, const std::set<std::string>& test_sequences);

/// Records which image refs were read while each named phase was active.
class AccessLog {
 public:
  struct Entry {
    std::string phase;
    std::string image_ref;
  };

  void set_phase(std::string phase);
  std::string phase() const;
  void record(const std::string& image_ref);
  std::vector<Entry> entries() const;
  /// Refs from `refs` that were read while `phase` was active.
  std::vector<std::string> touched(const std::string& phase, const std::vector<std::string>& refs) const;
  void write(const std::filesystem::path& path) const;

 private:
  mutable std::mutex mutex_;
  std::string phase_ = "idle";
  std::vector<Entry> entries_;
};

/// Every image read in the pipeline goes through here so the access log is
/// complete.
class ImageLoader {
 public:
  explicit ImageLoader(std::filesystem::path root = {}, std::shared_ptr<AccessLog> log = nullptr)
      : root_(std::move(root)), log_(std::move(log)) {}

  Rgb8 load(const SceneSample& sample) const;
  const std::shared_ptr<AccessLog>& log() const { return log_; }
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  std::shared_ptr<AccessLog> log_;
};

}  // namespace posesynth
