#include "posesynth/training.hpp"

#include <numeric>

#include "posesynth/toy_scene.hpp"

namespace posesynth {

nlohmann::json TrainHparams::to_json() const {
  return {{"lr", lr},
          {"batch_size", batch_size},
          {"beta1", beta1},
          {"beta2", beta2},
          {"epochs", epochs},
          {"max_steps", max_steps},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every},
          {"snapshot_every", snapshot_every}};
}

TrainHparams TrainHparams::from_json(const nlohmann::json& j, TrainHparams d) {
  d.lr = j.value("lr", d.lr);
  d.batch_size = j.value("batch_size", d.batch_size);
  d.beta1 = j.value("beta1", d.beta1);
  d.beta2 = j.value("beta2", d.beta2);
  d.epochs = j.value("epochs", d.epochs);
  d.max_steps = j.value("max_steps", d.max_steps);
  d.seed = j.value("seed", d.seed);
  d.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  d.snapshot_every = j.value("snapshot_every", d.snapshot_every);
  return d;
}

std::vector<std::vector<std::int64_t>> epoch_batches(std::int64_t sample_count, std::int64_t batch_size,
                                                     std::uint64_t seed, std::int64_t epoch) {
  std::vector<std::int64_t> order(static_cast<std::size_t>(sample_count));
  std::iota(order.begin(), order.end(), 0);
  SplitMix64 rng(seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(epoch) + 1);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  std::vector<std::vector<std::int64_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

void init_weights(torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  for (auto& child : module.modules(/*include_self=*/true)) {
    const std::string name = child->name();
    const bool is_norm = name.find("BatchNorm") != std::string::npos;
    const bool is_weighted = name.find("Conv") != std::string::npos || name.find("Linear") != std::string::npos;
    if (!is_norm && !is_weighted) continue;
    for (auto& p : child->named_parameters(/*recurse=*/false)) {
      if (p.key() == "weight") {
        if (is_norm) {
          p.value().normal_(1.0, 0.02);
        } else {
          p.value().normal_(0.0, 0.02);
        }
      } else if (p.key() == "bias") {
        p.value().zero_();
      }
    }
  }
}

void seed_everything(std::uint64_t seed) {
  torch::set_num_threads(1);
  torch::manual_seed(seed);
}

}  // namespace posesynth
