#pragma once

#include <string>

#include <torch/torch.h>

#include "posesynth/checkpoint.hpp"

namespace posesynth {

/// Stores Adam moments and step counts as named tensors
/// (<prefix><param>.exp_avg, .exp_avg_sq, .step) keyed by the module's
/// parameter names. Parameters without state (never stepped) are skipped.
void append_adam_state(Checkpoint& ckpt, const torch::optim::Adam& optimizer, const torch::nn::Module& module,
                       const std::string& prefix);

/// Inverse of append_adam_state; parameters absent from the checkpoint start
/// with fresh state.
void restore_adam_state(torch::optim::Adam& optimizer, const torch::nn::Module& module, const Checkpoint& ckpt,
                        const std::string& prefix);

}  // namespace posesynth
