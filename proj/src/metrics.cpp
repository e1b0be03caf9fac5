#include "posesynth/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace posesynth {

namespace {

void require_same_shape(const ImageF& a, const ImageF& b, const char* what) {
  if (!a.same_shape(b)) {
    throw Error(ErrorCode::ShapeError, std::string(what) + ": shapes differ (" + std::to_string(a.height) + "x" +
                                           std::to_string(a.width) + "x" + std::to_string(a.channels) + " vs " +
                                           std::to_string(b.height) + "x" + std::to_string(b.width) + "x" +
                                           std::to_string(b.channels) + ")");
  }
}

ImageF luma01(const ImageF& img) {
  if (img.channels == 1) return img;
  if (img.channels != 3) throw Error(ErrorCode::ChannelError, "expected 1 or 3 channels");
  ImageF out(img.height, img.width, 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      out.at(y, x) = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
  return out;
}

std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const double centre = (size - 1) / 2.0;
  for (int i = 0; i < size; ++i) k[static_cast<std::size_t>(i)] = std::exp(-(i - centre) * (i - centre) / (2.0 * sigma * sigma));
  const double sum = std::accumulate(k.begin(), k.end(), 0.0);
  for (double& v : k) v /= sum;
  return k;
}

/// Valid-mode separable filtering of a single-channel image.
ImageF filter_valid(const ImageF& img, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int oh = img.height - n + 1, ow = img.width - n + 1;
  ImageF rows(img.height, ow, 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += k[static_cast<std::size_t>(i)] * img.at(y, x + i);
      rows.at(y, x) = acc;
    }
  ImageF out(oh, ow, 1);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += k[static_cast<std::size_t>(i)] * rows.at(y + i, x);
      out.at(y, x) = acc;
    }
  return out;
}

ImageF product(const ImageF& a, const ImageF& b) {
  ImageF out = a;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] *= b.pixels[i];
  return out;
}

double ssim_formula(double mx, double my, double vx, double vy, double cov, double c1, double c2) {
  return ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

/// Order-independent mean: summing sorted values makes the result identical
/// for any permutation of the inputs.
double stable_mean(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

}  // namespace

double ssim(const ImageF& img, const ImageF& ref, const SsimOptions& options) {
  require_same_shape(img, ref, "ssim");
  const ImageF a = luma01(img);
  const ImageF b = luma01(ref);
  const double c1 = std::pow(options.k1 * options.dynamic_range, 2);
  const double c2 = std::pow(options.k2 * options.dynamic_range, 2);

  if (options.global) {
    const double n = static_cast<double>(a.pixels.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
      mx += a.pixels[i];
      my += b.pixels[i];
    }
    mx /= n;
    my /= n;
    double vx = 0, vy = 0, cov = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
      const double dx = a.pixels[i] - mx, dy = b.pixels[i] - my;
      vx += dx * dx;
      vy += dy * dy;
      cov += dx * dy;
    }
    return ssim_formula(mx, my, vx / n, vy / n, cov / n, c1, c2);
  }

  if (a.height < options.window || a.width < options.window) {
    throw Error(ErrorCode::ShapeError, "image smaller than the SSIM window");
  }
  const auto k = gaussian_kernel(options.window, options.sigma);
  const ImageF mx = filter_valid(a, k), my = filter_valid(b, k);
  const ImageF exx = filter_valid(product(a, a), k);
  const ImageF eyy = filter_valid(product(b, b), k);
  const ImageF exy = filter_valid(product(a, b), k);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.pixels.size(); ++i) {
    const double ux = mx.pixels[i], uy = my.pixels[i];
    total += ssim_formula(ux, uy, exx.pixels[i] - ux * ux, eyy.pixels[i] - uy * uy, exy.pixels[i] - ux * uy, c1, c2);
  }
  return total / static_cast<double>(mx.pixels.size());
}

double psnr(const ImageF& img, const ImageF& ref) {
  require_same_shape(img, ref, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const double d = img.pixels[i] - ref.pixels[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(img.pixels.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(1.0 / std::sqrt(mse));
}

double l1_distance(const ImageF& img, const ImageF& ref) {
  require_same_shape(img, ref, "l1");
  double acc = 0.0;
  for (std::size_t i = 0; i < img.pixels.size(); ++i) acc += std::abs(img.pixels[i] - ref.pixels[i]);
  return acc / static_cast<double>(img.pixels.size());
}

ImageF to_grayscale(const ImageF& rgb) {
  if (rgb.channels != 3) throw Error(ErrorCode::ChannelError, "grayscale conversion needs 3 channels");
  ImageF out(rgb.height, rgb.width, 1);
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x)
      out.at(y, x) = 255.0 * (0.299 * rgb.at(y, x, 0) + 0.587 * rgb.at(y, x, 1) + 0.114 * rgb.at(y, x, 2));
  return out;
}

double brenner_general(const ImageF& gray) {
  if (gray.channels != 1) throw Error(ErrorCode::ChannelError, "Brenner needs a grayscale image");
  if (gray.height < 3) throw Error(ErrorCode::ShapeError, "Brenner needs at least 3 rows");
  double sum = 0.0;
  for (int h = 0; h + 2 < gray.height; ++h)
    for (int w = 0; w < gray.width; ++w) {
      const double d = gray.at(h + 2, w) - gray.at(h, w);
      sum += d * d;
    }
  return sum;
}

double brenner(const ImageF& gray) {
  if (gray.height != 256 || gray.width != 256) {
    throw Error(ErrorCode::ShapeError, "Brenner is defined on 256x256 images, got " + std::to_string(gray.height) +
                                           "x" + std::to_string(gray.width));
  }
  return brenner_general(gray);
}

EvalReport evaluate(const std::map<std::string, std::vector<ImageF>>& variants, const std::vector<ImageF>& refs,
                    const SsimOptions& ssim_options) {
  if (refs.empty()) throw Error(ErrorCode::EmptyDataset, "evaluation needs at least one reference image");
  EvalReport report;
  report.sample_count = refs.size();
  for (const auto& [name, images] : variants) {
    if (images.size() != refs.size()) {
      throw Error(ErrorCode::AlignmentError, "variant '" + name + "' has " + std::to_string(images.size()) +
                                                 " images for " + std::to_string(refs.size()) + " references");
    }
    std::vector<double> s, p, l, b;
    MetricSummary m;
    for (std::size_t i = 0; i < refs.size(); ++i) {
      s.push_back(ssim(images[i], refs[i], ssim_options));
      const double db = psnr(images[i], refs[i]);
      if (std::isinf(db)) {
        ++m.psnr_infinite;
      } else {
        p.push_back(db);
      }
      l.push_back(l1_distance(images[i], refs[i]));
      b.push_back(brenner_general(to_grayscale(images[i])));
    }
    m.ssim = stable_mean(s);
    m.psnr = p.empty() ? std::numeric_limits<double>::infinity() : stable_mean(p);
    m.l1 = stable_mean(l);
    m.brenner = stable_mean(b);
    report.variants[name] = m;
  }
  return report;
}

std::string EvalReport::to_json() const {
  nlohmann::json doc;
  doc["sample_count"] = sample_count;
  doc["config_hash"] = config_hash;
  doc["variants"] = nlohmann::json::object();
  for (const auto& [name, m] : variants) {
    nlohmann::json v;
    v["ssim"] = m.ssim;
    v["psnr"] = std::isinf(m.psnr) ? nlohmann::json(nullptr) : nlohmann::json(m.psnr);
    v["psnr_infinite"] = m.psnr_infinite;
    v["l1"] = m.l1;
    v["brenner"] = m.brenner;
    doc["variants"][name] = v;
  }
  return doc.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
  EvalReport r;
  try {
    const auto doc = nlohmann::json::parse(text);
    r.sample_count = doc.at("sample_count").get<std::size_t>();
    r.config_hash = doc.value("config_hash", "");
    for (const auto& [name, v] : doc.at("variants").items()) {
      MetricSummary m;
      m.ssim = v.at("ssim").get<double>();
      m.psnr = v.at("psnr").is_null() ? std::numeric_limits<double>::infinity() : v.at("psnr").get<double>();
      m.psnr_infinite = v.at("psnr_infinite").get<std::size_t>();
      m.l1 = v.at("l1").get<double>();
      m.brenner = v.at("brenner").get<double>();
      r.variants[name] = m;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("eval report: ") + e.what());
  }
  if (r.sample_count == 0) throw Error(ErrorCode::ParseError, "eval report: sample_count must be positive");
  return r;
}

std::string EvalReport::to_table() const {
  std::ostringstream out;
  constexpr int kLabel = 9, kCol = 16;
  out << std::left << std::setw(kLabel) << "";
  for (const auto& [name, m] : variants) out << std::right << std::setw(kCol) << name;
  out << '\n';
  auto row = [&](const char* label, auto field) {
    out << std::left << std::setw(kLabel) << label;
    for (const auto& [name, m] : variants) {
      const double v = field(m);
      std::ostringstream cell;
      if (std::isinf(v)) {
        cell << "inf";
      } else {
        cell << std::fixed << std::setprecision(4) << v;
      }
      out << std::right << std::setw(kCol) << cell.str();
    }
    out << '\n';
  };
  row("SSIM", [](const MetricSummary& m) { return m.ssim; });
  row("PSNR", [](const MetricSummary& m) { return m.psnr; });
  row("L1", [](const MetricSummary& m) { return m.l1; });
  row("Brenner", [](const MetricSummary& m) { return m.brenner; });
  out << "samples: " << sample_count;
  bool any_inf = false;
  for (const auto& [name, m] : variants) any_inf |= m.psnr_infinite > 0;
  if (any_inf) {
    out << "  (infinite PSNR excluded:";
    for (const auto& [name, m] : variants) out << ' ' << name << '=' << m.psnr_infinite;
    out << ')';
  }
  out << '\n';
  return out.str();
}

}  // namespace posesynth
