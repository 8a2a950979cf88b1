#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rrdn/image_io.hpp"

namespace rrdn {

struct AugmentRecord {
  std::size_t crop_y = 0, crop_x = 0;
  bool flipped = false;
  bool photometric = false;
  float gamma = 1.f;
  float brightness = 1.f;
  std::array<float, 3> color{1.f, 1.f, 1.f};
};

struct StereoSample {
  Image left, right;
  std::string left_path, right_path;
  AugmentRecord aug;
};

class DataError : public Error {
 public:
  using Error::Error;
};

/// Reads a manifest of `left right` path pairs, one per line. Relative
/// paths resolve against the manifest's directory. Blank lines and lines
/// starting with '#' are skipped. All bad lines are reported together.
inline std::vector<StereoSample> load_pairs(const std::string& manifest) {
  std::ifstream f(manifest);
  if (!f) throw DataError("cannot open manifest: " + manifest);
  const std::filesystem::path base = std::filesystem::path(manifest).parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return (path.is_absolute() ? path : base / path).string();
  };
  std::vector<StereoSample> out;
  std::string errors;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    std::istringstream in(line);
    std::string l, r, extra;
    if (!(in >> l) || l[0] == '#') continue;
    const std::string where = manifest + ":" + std::to_string(lineno) + ": ";
    if (!(in >> r) || (in >> extra)) {
      errors += where + "expected exactly two paths\n";
      continue;
    }
    try {
      StereoSample s;
      s.left_path = resolve(l);
      s.right_path = resolve(r);
      s.left = to_rgb(read_image(s.left_path));
      s.right = to_rgb(read_image(s.right_path));
      if (s.left.height != s.right.height || s.left.width != s.right.width) {
        errors += where + "left image is " + std::to_string(s.left.width) + "x" + std::to_string(s.left.height) +
                  " but right image is " + std::to_string(s.right.width) + "x" + std::to_string(s.right.height) + "\n";
        continue;
      }
      out.push_back(std::move(s));
    } catch (const Error& e) {
      errors += where + e.what() + "\n";
    }
  }
  if (!errors.empty()) {
    errors.pop_back();
    throw DataError(errors);
  }
  return out;
}

inline Image mirror(const Image& img) {
  Image out(img.channels, img.height, img.width);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

inline Image crop(const Image& img, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  if (y0 + h > img.height || x0 + w > img.width) throw DataError("crop window outside image");
  Image out(img.channels, h, w);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  return out;
}

// Uniform in [0,1) from the top 53 bits; identical on every platform.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

struct AugmentRanges {
  double flip_probability = 0.5;
  double photometric_probability = 0.5;
  double gamma_lo = 0.8, gamma_hi = 1.2;
  double brightness_lo = 0.5, brightness_hi = 2.0;
  double color_lo = 0.8, color_hi = 1.2;
};

inline AugmentRecord draw_augmentation(std::mt19937_64& rng, std::size_t height, std::size_t width, std::size_t crop_h,
                                       std::size_t crop_w, const AugmentRanges& ranges = {}) {
  if (height < crop_h || width < crop_w) {
    throw DataError("image " + std::to_string(width) + "x" + std::to_string(height) + " is smaller than crop " +
                    std::to_string(crop_w) + "x" + std::to_string(crop_h));
  }
  AugmentRecord a;
  a.crop_y = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(height - crop_h + 1));
  a.crop_x = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(width - crop_w + 1));
  a.flipped = uniform01(rng) < ranges.flip_probability;
  a.photometric = uniform01(rng) < ranges.photometric_probability;
  const double gamma = uniform(rng, ranges.gamma_lo, ranges.gamma_hi);
  const double brightness = uniform(rng, ranges.brightness_lo, ranges.brightness_hi);
  std::array<float, 3> color{};
  for (auto& c : color) c = static_cast<float>(uniform(rng, ranges.color_lo, ranges.color_hi));
  if (a.photometric) {
    a.gamma = static_cast<float>(gamma);
    a.brightness = static_cast<float>(brightness);
    a.color = color;
  }
  return a;
}

/// Applies a recorded augmentation: the same crop to both views; on flip the
/// views swap roles and both are mirrored; then gamma, brightness and
/// per-channel colour, identical on both views, clamped to [0,1].
inline StereoSample apply_augmentation(const StereoSample& in, const AugmentRecord& a, std::size_t crop_h, std::size_t crop_w) {
  if (in.left.height < crop_h || in.left.width < crop_w) {
    throw DataError("image " + std::to_string(in.left.width) + "x" + std::to_string(in.left.height) + " is smaller than crop " +
                    std::to_string(crop_w) + "x" + std::to_string(crop_h));
  }
  StereoSample out;
  out.left_path = in.left_path;
  out.right_path = in.right_path;
  out.aug = a;
  Image l = crop(in.left, a.crop_y, a.crop_x, crop_h, crop_w);
  Image r = crop(in.right, a.crop_y, a.crop_x, crop_h, crop_w);
  if (a.flipped) {
    out.left = mirror(r);
    out.right = mirror(l);
  } else {
    out.left = std::move(l);
    out.right = std::move(r);
  }
  const bool identity = a.gamma == 1.f && a.brightness == 1.f && a.color == std::array<float, 3>{1.f, 1.f, 1.f};
  if (a.photometric && !identity) {
    for (Image* img : {&out.left, &out.right}) {
      for (std::size_t c = 0; c < img->channels; ++c)
        for (std::size_t i = 0; i < img->height * img->width; ++i) {
          float& v = img->data[c * img->height * img->width + i];
          const float scale = a.brightness * a.color[c % 3];
          v = std::clamp(std::pow(v, a.gamma) * scale, 0.f, 1.f);
        }
    }
  }
  return out;
}

inline StereoSample augment(const StereoSample& in, std::mt19937_64& rng, std::size_t crop_h, std::size_t crop_w,
                            const AugmentRanges& ranges = {}) {
  return apply_augmentation(in, draw_augmentation(rng, in.left.height, in.left.width, crop_h, crop_w, ranges), crop_h, crop_w);
}

}  // namespace rrdn
