#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace posesynth {

/// 64-bit FNV-1a, hex encoded. Used for config and parameter fingerprints.
std::string fnv1a_hex(std::string_view bytes);
/// Fingerprint of a JSON value's canonical (sorted-key, compact) dump.
std::string json_hash(const nlohmann::json& value);

/// Trained network state plus provenance.
///
/// On disk a checkpoint is two files sharing a stem:
///   <stem>.ckpt  named-tensor archive (little endian):
///                  "PSNT0001" | u32 count | count x {u32 name_len, name,
///                  u8 dtype (0 f32, 1 f64, 2 i64), u32 ndim, i64 dims[ndim],
///                  raw data}
///   <stem>.json  {"format", "kind", "config", "config_hash", "step", "seed",
///                 "tensors_hash", "metadata"}
/// The JSON sidecar is self-describing so other tools can read provenance
/// without parsing tensors.
struct Checkpoint {
  std::string kind;
  nlohmann::json config;
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, torch::Tensor>> tensors;
  nlohmann::json metadata = nlohmann::json::object();

  std::string config_hash() const { return json_hash(config); }
  /// Fingerprint over tensor names, shapes and bytes.
  std::string tensors_hash() const;
  const torch::Tensor* find(const std::string& name) const;

  void save(const std::filesystem::path& stem) const;
  static Checkpoint load(const std::filesystem::path& stem);
  static bool exists(const std::filesystem::path& stem);
};

/// Copies every parameter and buffer of `module` (deep copies) under `prefix`.
void append_module_state(Checkpoint& ckpt, const torch::nn::Module& module, const std::string& prefix = "");

/// Loads parameters and buffers named `prefix + name` into `module`. Missing,
/// surplus (with the prefix) or mis-shaped tensors raise CheckpointError.
void restore_module_state(torch::nn::Module& module, const Checkpoint& ckpt, const std::string& prefix = "");

}  // namespace posesynth
