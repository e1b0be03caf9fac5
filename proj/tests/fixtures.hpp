#pragma once

// Small trained experiments shared by the integration-style tests.

#include <filesystem>
#include <string>

#include "posesynth/experiment.hpp"

namespace fixture {

inline std::filesystem::path temp_dir(const std::string& name, bool clear = true) {
  auto dir = std::filesystem::temp_directory_path() / ("posesynth_test_" + name);
  if (clear) std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// 16 x 16 toy experiment with narrow networks; trains in seconds.
inline posesynth::ExperimentConfig tiny_config(const std::filesystem::path& out) {
  using namespace posesynth;
  ExperimentConfig c;
  c.dataset.kind = "toy";
  c.dataset.toy = make_toy_scene(7, 5, 16);
  c.dataset.toy_train = 12;
  c.dataset.toy_test = 4;
  c.gennet.fc_dims = {32, 16};
  c.gennet.upsample_channels = {8, 8, 8, 8};
  c.gennet.output_size = 16;
  c.refine.image_size = 16;
  c.refine.num_downs = 4;
  c.refine.ngf = 4;
  c.refine.ndf = 4;
  c.refine.discriminator_layers = 2;
  c.refine.extractor.width_divisor = 16;
  c.stage1.lr = 1e-3;
  c.stage1.batch_size = 4;
  c.stage1.max_steps = 12;
  c.stage1.snapshot_every = 6;
  c.stage1.checkpoint_every = 6;
  c.stage2.lr = 2e-4;
  c.stage2.batch_size = 4;
  c.stage2.max_steps = 3;
  c.stage2.snapshot_every = 3;
  c.seed = 2;
  c.output_dir = out.string();
  return c;
}

/// Trains stage 1 and the perceptual stage 2 once per process and returns the
/// experiment directory.
inline const std::filesystem::path& trained_tiny_experiment() {
  static const std::filesystem::path dir = [] {
    auto out = temp_dir("trained_tiny");
    posesynth::Experiment exp(tiny_config(out));
    exp.run_stage1();
    exp.run_stage2(true);
    return out;
  }();
  return dir;
}

}  // namespace fixture
