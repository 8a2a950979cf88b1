#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "rrdn/tensor.hpp"

namespace rrdn {

class ImageError : public Error {
 public:
  using Error::Error;
};

/// Planar image, values in [0,1], layout (channel, row, col).
struct Image {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<float> data;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.f) : channels(c), height(h), width(w), data(c * h * w, fill) {}

  float& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
  bool operator==(const Image&) const = default;
};

/// Raw integer samples as stored in the file (8 or 16 bit), interleaved.
struct RawImage {
  std::size_t channels = 0, height = 0, width = 0;
  unsigned max_value = 255;
  std::vector<std::uint16_t> samples;
};

namespace detail {

inline bool has_extension(const std::string& path, const char* ext) {
  std::string lower = path;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  const std::string e(ext);
  return lower.size() >= e.size() && lower.compare(lower.size() - e.size(), e.size(), e) == 0;
}

inline RawImage read_png(const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw ImageError("cannot open image: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageError("libpng initialisation failed: " + path);
  }
  RawImage img;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageError("invalid PNG file: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);  // native little-endian uint16
  png_read_update_info(png, info);
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  const int out_depth = png_get_bit_depth(png, info);
  img.max_value = out_depth == 16 ? 65535 : 255;
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * img.height);
  rows.resize(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  img.samples.resize(img.width * img.height * img.channels);
  if (out_depth == 16) {
    for (std::size_t i = 0; i < img.samples.size(); ++i)
      img.samples[i] = static_cast<std::uint16_t>(buffer[2 * i] | (buffer[2 * i + 1] << 8));
  } else {
    for (std::size_t i = 0; i < img.samples.size(); ++i) img.samples[i] = buffer[i];
  }
  return img;
}

// Binary PGM (P5) and PPM (P6), 8- or 16-bit (big-endian samples).
inline RawImage read_pnm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ImageError("cannot open image: " + path);
  auto token = [&]() {
    std::string t;
    char ch;
    while (f.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(f, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(ch);
    }
    return t;
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P6") throw ImageError("unsupported image format (expected P5/P6 or PNG): " + path);
  RawImage img;
  try {
    img.width = std::stoul(token());
    img.height = std::stoul(token());
    img.max_value = static_cast<unsigned>(std::stoul(token()));
  } catch (const std::exception&) {
    throw ImageError("malformed PNM header: " + path);
  }
  if (img.max_value == 0 || img.max_value > 65535) throw ImageError("bad PNM maxval: " + path);
  img.channels = magic == "P6" ? 3 : 1;
  const std::size_t count = img.width * img.height * img.channels;
  const std::size_t bytes = img.max_value > 255 ? 2 : 1;
  std::vector<unsigned char> raw(count * bytes);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(f.gcount()) != raw.size()) throw ImageError("truncated PNM data: " + path);
  img.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i)
    img.samples[i] = bytes == 2 ? static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]) : raw[i];
  return img;
}

}  // namespace detail

inline RawImage read_raw_image(const std::string& path) {
  if (detail::has_extension(path, ".png")) return detail::read_png(path);
  if (detail::has_extension(path, ".ppm") || detail::has_extension(path, ".pgm") || detail::has_extension(path, ".pnm")) {
    return detail::read_pnm(path);
  }
  throw ImageError("unsupported image format (expected .png, .ppm or .pgm): " + path);
}

/// Decodes to planar floats; samples are divided by the format's max value.
inline Image read_image(const std::string& path) {
  RawImage raw = read_raw_image(path);
  Image img(raw.channels, raw.height, raw.width);
  const float inv = 1.0f / static_cast<float>(raw.max_value);
  for (std::size_t y = 0; y < raw.height; ++y)
    for (std::size_t x = 0; x < raw.width; ++x)
      for (std::size_t c = 0; c < raw.channels; ++c)
        img.at(c, y, x) = static_cast<float>(raw.samples[(y * raw.width + x) * raw.channels + c]) * inv;
  return img;
}

// Grayscale -> 3 identical channels.
inline Image to_rgb(Image img) {
  if (img.channels == 3) return img;
  if (img.channels != 1) throw ImageError("expected 1 or 3 channels, got " + std::to_string(img.channels));
  Image out(3, img.height, img.width);
  for (std::size_t c = 0; c < 3; ++c) std::copy(img.data.begin(), img.data.end(), out.data.begin() + c * img.data.size());
  return out;
}

inline void write_pnm(const std::string& path, std::size_t channels, std::size_t height, std::size_t width, unsigned max_value,
                      const std::vector<std::uint16_t>& interleaved) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ImageError("cannot open for writing: " + path);
  f << (channels == 3 ? "P6" : "P5") << "\n" << width << " " << height << "\n" << max_value << "\n";
  for (std::uint16_t v : interleaved) {
    if (max_value > 255) f.put(static_cast<char>(v >> 8));
    f.put(static_cast<char>(v & 0xFF));
  }
  if (!f) throw ImageError("write failed: " + path);
}

// [0,1] image -> 8-bit PPM/PGM.
inline void write_image8(const std::string& path, const Image& img) {
  std::vector<std::uint16_t> s(img.data.size());
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c)
        s[(y * img.width + x) * img.channels + c] =
            static_cast<std::uint16_t>(std::lround(std::clamp(img.at(c, y, x), 0.f, 1.f) * 255.f));
  write_pnm(path, img.channels, img.height, img.width, 255, s);
}

/// Writes 8-bit (max_value 255) or 16-bit PNG from interleaved samples.
inline void write_png(const std::string& path, std::size_t channels, std::size_t height, std::size_t width, unsigned max_value,
                      const std::vector<std::uint16_t>& interleaved) {
  if (channels != 1 && channels != 3) throw ImageError("write_png: 1 or 3 channels required");
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw ImageError("cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw ImageError("libpng initialisation failed: " + path);
  }
  const int depth = max_value > 255 ? 16 : 8;
  const std::size_t bytes = depth / 8;
  std::vector<unsigned char> buffer(interleaved.size() * bytes);
  for (std::size_t i = 0; i < interleaved.size(); ++i) {
    if (bytes == 2) {
      buffer[2 * i] = static_cast<unsigned char>(interleaved[i] >> 8);
      buffer[2 * i + 1] = static_cast<unsigned char>(interleaved[i] & 0xFF);
    } else {
      buffer[i] = static_cast<unsigned char>(interleaved[i]);
    }
  }
  std::vector<png_bytep> rows(height);
  for (std::size_t y = 0; y < height; ++y) rows[y] = buffer.data() + y * width * channels * bytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageError("PNG encoding failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), depth,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Single-channel map written as 16-bit PGM with value * scale, rounded and clamped.
inline void write_pgm16(const std::string& path, std::size_t height, std::size_t width, const std::vector<double>& values,
                        double scale) {
  std::vector<std::uint16_t> s(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) s[i] = static_cast<std::uint16_t>(std::clamp(std::lround(values[i] * scale), 0L, 65535L));
  write_pnm(path, 1, height, width, 65535, s);
}

/// Single-channel map written as 8-bit PGM with value * scale.
inline void write_pgm8(const std::string& path, std::size_t height, std::size_t width, const std::vector<double>& values,
                       double scale) {
  std::vector<std::uint16_t> s(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) s[i] = static_cast<std::uint16_t>(std::clamp(std::lround(values[i] * scale), 0L, 255L));
  write_pnm(path, 1, height, width, 255, s);
}

/// Bilinear resize (pixel-centre aligned).
inline Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w) {
  if (img.height == out_h && img.width == out_w) return img;
  Image out(img.channels, out_h, out_w);
  const double sy = static_cast<double>(img.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(img.width) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const double tx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double top = (1 - tx) * img.at(c, y0, x0) + tx * img.at(c, y0, x1);
        const double bot = (1 - tx) * img.at(c, y1, x0) + tx * img.at(c, y1, x1);
        out.at(c, y, x) = static_cast<float>((1 - ty) * top + ty * bot);
      }
    }
  }
  return out;
}

// Stacks same-sized images into an (n,c,h,w) tensor.
template <typename T>
Tensor<T> to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw ShapeError("to_tensor: no images");
  const Image& f = *images.front();
  Shape s{images.size(), f.channels, f.height, f.width};
  std::vector<T> data;
  data.reserve(s.size());
  for (const Image* img : images) {
    if (img->channels != f.channels || img->height != f.height || img->width != f.width) throw ShapeError("to_tensor: image sizes differ");
    data.insert(data.end(), img->data.begin(), img->data.end());
  }
  return Tensor<T>::from(s, std::move(data));
}

template <typename T>
Tensor<T> to_tensor(const Image& img) {
  return to_tensor<T>(std::vector<const Image*>{&img});
}

}  // namespace rrdn
