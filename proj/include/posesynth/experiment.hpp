#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "posesynth/dataset.hpp"
#include "posesynth/gennet.hpp"
#include "posesynth/metrics.hpp"
#include "posesynth/refinenet.hpp"
#include "posesynth/toy_scene.hpp"
#include "posesynth/training.hpp"

namespace posesynth {

/// Where the (image, pose) pairs come from.
///   toy          procedural scene rendered in memory
///   cambridge    pose-list files ("seq/img.png x y z q q q q") under `root`
///   sevenscenes  per-frame 4x4 matrices under `root/<seq>/`
/// Non-toy datasets are split by sequence: `test_sequences` go to the test side.
struct DatasetConfig {
  std::string kind = "toy";
  std::string root;
  std::vector<std::string> pose_files;
  std::vector<std::string> test_sequences;
  QuatOrder quat_order = QuatOrder::WXYZ;
  ToySceneSpec toy = make_toy_scene();
  int toy_train = 200;
  int toy_test = 50;
  std::uint64_t toy_pose_seed = 11;

  nlohmann::json to_json() const;
  static DatasetConfig from_json(const nlohmann::json& j);
};

struct ExperimentConfig {
  DatasetConfig dataset;
  GenNetConfig gennet;
  RefineConfig refine;
  TrainHparams stage1;
  TrainHparams stage2;
  bool global_ssim = false;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";

  /// Desk-scale toy experiment (small networks, 64 x 64 images).
  static ExperimentConfig toy_default();

  nlohmann::json to_json() const;
  /// Missing keys keep the full-scale defaults; unknown keys are rejected.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Fingerprint of everything except `output_dir`.
  std::string hash() const;
  /// ConfigError when referenced paths are missing or values are invalid.
  void validate() const;
};

/// Exclusive claim on an output directory for the lifetime of the object.
/// A lockfile left by a dead process is taken over.
class ExperimentLock {
 public:
  explicit ExperimentLock(const std::filesystem::path& dir);
  ~ExperimentLock();
  ExperimentLock(const ExperimentLock&) = delete;
  ExperimentLock& operator=(const ExperimentLock&) = delete;

 private:
  std::filesystem::path path_;
};

DatasetSplit load_dataset(const DatasetConfig& config);

enum class EvalSet { Test, Train };

/// The two-stage pipeline over one output directory:
///   <out>/config.json
///   <out>/stage1/{gennet.ckpt, gennet.json, loss.csv, samples/, train_poses.txt, thumbnails/}
///   <out>/stage2_pl/ and <out>/stage2_wo_pl/ {refinenet.*, loss.csv, samples/}
///   <out>/eval_report.json, <out>/eval_report.txt
///   <out>/access_<phase>.tsv
class Experiment {
 public:
  explicit Experiment(ExperimentConfig config);

  const ExperimentConfig& config() const { return config_; }
  std::filesystem::path output_dir() const { return config_.output_dir; }
  const DatasetSplit& split();
  const std::shared_ptr<AccessLog>& access_log() const { return log_; }

  std::filesystem::path stage1_stem() const;
  std::filesystem::path stage2_stem(bool perceptual) const;

  /// Trains (or resumes) GenNet and saves the checkpoint.
  Checkpoint run_stage1(bool resume = false);
  /// Trains RefineNet on top of the saved stage-1 checkpoint.
  Checkpoint run_stage2(bool perceptual = true);
  /// Coarse and every available refined variant against the chosen split.
  EvalReport run_eval(EvalSet set = EvalSet::Test);

 private:
  ImageLoader loader() const;
  void write_access_log(const std::string& phase) const;

  ExperimentConfig config_;
  std::shared_ptr<AccessLog> log_ = std::make_shared<AccessLog>();
  std::optional<DatasetSplit> split_;
};

}  // namespace posesynth
