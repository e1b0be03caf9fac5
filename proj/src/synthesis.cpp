#include "posesynth/synthesis.hpp"

#include <algorithm>
#include <cstdio>

#include "posesynth/tensor_image.hpp"

namespace posesynth {

Stage parse_stage(const std::string& name) {
  if (name == "coarse") return Stage::Coarse;
  if (name == "refined") return Stage::Refined;
  throw Error(ErrorCode::ConfigError, "stage must be 'coarse' or 'refined'");
}

std::string to_string(Stage stage) { return stage == Stage::Coarse ? "coarse" : "refined"; }

Synthesizer::Synthesizer(GenNet gennet, UnetGenerator refiner, std::string config_hash)
    : gennet_(std::move(gennet)), refiner_(std::move(refiner)), config_hash_(std::move(config_hash)) {
  gennet_->eval();
  if (refiner_) refiner_->eval();
}

Synthesizer Synthesizer::load(const std::filesystem::path& dir) {
  const auto stage1 = dir / "stage1" / "gennet";
  if (!Checkpoint::exists(stage1)) throw Error(ErrorCode::CheckpointError, "no stage-1 checkpoint under " + dir.string());
  const Checkpoint gen_ckpt = Checkpoint::load(stage1);
  UnetGenerator refiner{nullptr};
  for (const char* variant : {"stage2_pl", "stage2_wo_pl"}) {
    const auto stem = dir / variant / "refinenet";
    if (!Checkpoint::exists(stem)) continue;
    const Checkpoint ref_ckpt = Checkpoint::load(stem);
    if (ref_ckpt.metadata.value("stage1_tensors_hash", std::string()) != gen_ckpt.tensors_hash()) {
      throw Error(ErrorCode::CheckpointError, stem.string() + " was trained on a different stage-1 checkpoint");
    }
    refiner = load_refiner(ref_ckpt);
    break;
  }
  Synthesizer synth(load_gennet(gen_ckpt), refiner, gen_ckpt.metadata.value("experiment_hash", gen_ckpt.config_hash()));
  const auto poses = dir / "stage1" / "train_poses.txt";
  if (std::filesystem::exists(poses)) synth.set_train_samples(read_pose_list(poses));
  const auto thumbs = dir / "stage1" / "thumbnails";
  if (std::filesystem::is_directory(thumbs)) synth.set_thumbnail_dir(thumbs);
  return synth;
}

torch::Tensor Synthesizer::synthesize_tensor(const Pose& pose, Stage stage) const {
  torch::NoGradGuard no_grad;
  const auto coarse = gennet_infer(gennet_, pose);
  if (stage == Stage::Coarse) return coarse;
  if (!refiner_) throw Error(ErrorCode::CheckpointError, "no RefineNet checkpoint loaded");
  return refine_infer(refiner_, coarse);
}

Rgb8 Synthesizer::synthesize(const Pose& pose, Stage stage) const {
  return model_to_rgb8(synthesize_tensor(pose, stage));
}

std::vector<std::filesystem::path> render_trajectory(const Synthesizer& synth, const Trajectory& trajectory,
                                                     Stage stage, const std::filesystem::path& out_dir) {
  if (trajectory.poses.empty()) throw Error(ErrorCode::InsufficientKeyposes, "trajectory has no frames");
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> files;
  char name[32];
  for (std::size_t i = 0; i < trajectory.poses.size(); ++i) {
    std::snprintf(name, sizeof(name), "frame_%05zu.png", i);
    files.push_back(out_dir / name);
    write_png(files.back(), synth.synthesize(trajectory.poses[i], stage));
  }
  return files;
}

std::vector<Neighbor> nearest_poses(const Pose& query, std::span<const SceneSample> train, std::size_t k,
                                    double alpha) {
  if (k < 1) throw Error(ErrorCode::ConfigError, "k must be >= 1");
  if (train.empty()) throw Error(ErrorCode::EmptyDataset, "no training poses to search");
  std::vector<Neighbor> all;
  all.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) all.push_back({i, pose_distance(query, train[i].pose, alpha)});
  std::stable_sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) { return a.distance < b.distance; });
  all.resize(std::min(k, all.size()));
  return all;
}

}  // namespace posesynth
