#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "posesynth/image.hpp"

namespace posesynth {

/// Adam hyperparameters and loop length for either stage. `max_steps > 0`
/// overrides `epochs`.
struct TrainHparams {
  double lr = 1e-4;
  std::int64_t batch_size = 48;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::int64_t epochs = 1000;
  std::int64_t max_steps = 0;
  std::uint64_t seed = 0;
  /// Cadence (in steps) of periodic checkpoints and sample grids; 0 disables.
  std::int64_t checkpoint_every = 0;
  std::int64_t snapshot_every = 500;

  nlohmann::json to_json() const;
  static TrainHparams from_json(const nlohmann::json& j, TrainHparams defaults);
  static TrainHparams from_json(const nlohmann::json& j) { return from_json(j, TrainHparams()); }
};

struct Checkpoint;

/// Observer for a training loop. Every callback is optional.
struct TrainingSink {
  std::function<void(std::int64_t epoch, std::int64_t step, double loss)> on_epoch;
  std::function<void(const Checkpoint&)> on_checkpoint;
  std::function<void(std::int64_t step, const Rgb8& grid)> on_snapshot;
};

/// Epoch-wise batching with a permutation drawn from (seed, epoch); a trailing
/// batch of one sample is merged into the previous batch so batch norm always
/// sees at least two samples.
std::vector<std::vector<std::int64_t>> epoch_batches(std::int64_t sample_count, std::int64_t batch_size,
                                                     std::uint64_t seed, std::int64_t epoch);

/// Applies normal(0, 0.02) to conv / linear weights (biases zeroed) and
/// normal(1, 0.02) / 0 to batch-norm scale / shift.
void init_weights(torch::nn::Module& module);

/// Deterministic CPU execution: single intra-op thread, global seed.
void seed_everything(std::uint64_t seed);

}  // namespace posesynth
