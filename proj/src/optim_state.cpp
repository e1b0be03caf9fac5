#include "posesynth/optim_state.hpp"

namespace posesynth {

void append_adam_state(Checkpoint& ckpt, const torch::optim::Adam& optimizer, const torch::nn::Module& module,
                       const std::string& prefix) {
  const auto& state = optimizer.state();
  for (const auto& item : module.named_parameters(true)) {
    const auto it = state.find(item.value().unsafeGetTensorImpl());
    if (it == state.end()) continue;
    const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
    const std::string base = prefix + item.key();
    ckpt.tensors.emplace_back(base + ".exp_avg", s.exp_avg().detach().clone());
    ckpt.tensors.emplace_back(base + ".exp_avg_sq", s.exp_avg_sq().detach().clone());
    ckpt.tensors.emplace_back(base + ".step", torch::tensor({s.step()}, torch::kInt64));
  }
}

void restore_adam_state(torch::optim::Adam& optimizer, const torch::nn::Module& module, const Checkpoint& ckpt,
                        const std::string& prefix) {
  auto& state = optimizer.state();
  for (const auto& item : module.named_parameters(true)) {
    const std::string base = prefix + item.key();
    const torch::Tensor* avg = ckpt.find(base + ".exp_avg");
    const torch::Tensor* avg_sq = ckpt.find(base + ".exp_avg_sq");
    const torch::Tensor* step = ckpt.find(base + ".step");
    if (avg == nullptr || avg_sq == nullptr || step == nullptr) continue;
    auto s = std::make_unique<torch::optim::AdamParamState>();
    s->exp_avg(avg->clone());
    s->exp_avg_sq(avg_sq->clone());
    s->step(step->item<std::int64_t>());
    state[item.value().unsafeGetTensorImpl()] = std::move(s);
  }
}

}  // namespace posesynth
