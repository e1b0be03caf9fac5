#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "posesynth/dataset.hpp"
#include "posesynth/gennet.hpp"
#include "posesynth/pose.hpp"
#include "posesynth/refinenet.hpp"

namespace posesynth {

enum class Stage { Coarse, Refined };

Stage parse_stage(const std::string& name);
std::string to_string(Stage stage);

/// Read-only pose -> image pipeline built from trained checkpoints. Safe to
/// share between threads once constructed.
class Synthesizer {
 public:
  Synthesizer(GenNet gennet, UnetGenerator refiner, std::string config_hash);

  /// Loads `<dir>/stage1/gennet` and, when present, the refiner from
  /// `<dir>/stage2_pl` (preferred) or `<dir>/stage2_wo_pl`. Training poses
  /// and thumbnails written by stage 1 are picked up when available.
  static Synthesizer load(const std::filesystem::path& experiment_dir);

  bool has_refiner() const { return static_cast<bool>(refiner_); }
  const std::string& config_hash() const { return config_hash_; }
  std::int64_t image_size() const { return gennet_->config().output_size; }

  /// Model-space (3, S, S) tensor.
  torch::Tensor synthesize_tensor(const Pose& pose, Stage stage) const;
  Rgb8 synthesize(const Pose& pose, Stage stage) const;

  const std::vector<SceneSample>& train_samples() const { return train_samples_; }
  void set_train_samples(std::vector<SceneSample> samples) { train_samples_ = std::move(samples); }
  /// Directory holding `<index>.png` thumbnails of the training images.
  const std::filesystem::path& thumbnail_dir() const { return thumbnail_dir_; }
  void set_thumbnail_dir(std::filesystem::path dir) { thumbnail_dir_ = std::move(dir); }

 private:
  GenNet gennet_;
  UnetGenerator refiner_;
  std::string config_hash_;
  std::vector<SceneSample> train_samples_;
  std::filesystem::path thumbnail_dir_;
};

/// Synthesizes every trajectory pose independently and writes
/// `frame_00000.png`, `frame_00001.png`, ... into `out_dir`.
std::vector<std::filesystem::path> render_trajectory(const Synthesizer& synth, const Trajectory& trajectory,
                                                     Stage stage, const std::filesystem::path& out_dir);

struct Neighbor {
  std::size_t index = 0;
  double distance = 0.0;
};

/// The k training samples closest to `query` by pose_distance, ascending;
/// ties keep dataset order and k larger than the set truncates.
std::vector<Neighbor> nearest_poses(const Pose& query, std::span<const SceneSample> train, std::size_t k,
                                    double alpha = 1.0);

}  // namespace posesynth
