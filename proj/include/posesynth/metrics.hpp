#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "posesynth/image.hpp"

namespace posesynth {

struct SsimOptions {
  /// Gaussian-windowed mean of the local SSIM map (11x11, sigma 1.5) unless
  /// `global` is set, in which case image-wide statistics are used.
  bool global = false;
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Inputs in [0, 1]. RGB inputs are reduced to luma first; 1-channel inputs
/// are used as is.
double ssim(const ImageF& img, const ImageF& ref, const SsimOptions& options = {});

/// 20 log10(1 / sqrt(MSE)) on [0, 1] images. Identical images give +infinity,
/// which callers treat as a marker rather than a number.
double psnr(const ImageF& img, const ImageF& ref);

/// Mean absolute difference over all pixels and channels.
double l1_distance(const ImageF& img, const ImageF& ref);

/// [0, 1] RGB -> [0, 255] real-valued luma (0.299 R + 0.587 G + 0.114 B).
ImageF to_grayscale(const ImageF& rgb);

/// Sum over h in [0, 253], w in [0, 255] of (f(h + 2, w) - f(h, w))^2 on a
/// 256 x 256 grayscale image. Any other size is a ShapeError.
double brenner(const ImageF& gray);
/// Same sum with h running to H - 3 for arbitrary sizes (H >= 3).
double brenner_general(const ImageF& gray);

struct MetricSummary {
  double ssim = 0.0;
  /// Mean over finite samples; +infinity when every sample was infinite.
  double psnr = 0.0;
  double l1 = 0.0;
  double brenner = 0.0;
  std::size_t psnr_infinite = 0;
};

/// Per-variant means over one test set ("coarse", "refined_pl",
/// "refined_wo_pl" are the canonical variant names).
struct EvalReport {
  std::size_t sample_count = 0;
  std::map<std::string, MetricSummary> variants;
  std::string config_hash;

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
  /// Metrics as rows, variants as columns.
  std::string to_table() const;
};

/// Reference and candidate images are [0, 1] RGB. Streams must align
/// one-to-one with `refs` (AlignmentError otherwise).
EvalReport evaluate(const std::map<std::string, std::vector<ImageF>>& variants, const std::vector<ImageF>& refs,
                    const SsimOptions& ssim_options = {});

}  // namespace posesynth
