#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fer/errors.hpp"
#include "fer/model.hpp"
#include "fer/nn.hpp"
#include "fer/tensor.hpp"

namespace fer {

/// |input gradient| normalized by its maximum; identically-zero maps stay
/// zero.
template <typename T>
Tensor<T> normalize_map(const Tensor<T>& grad) {
  Tensor<T> map(grad.shape());
  T mx{0};
  for (std::size_t i = 0; i < grad.size(); ++i) {
    map[i] = std::abs(grad[i]);
    if (map[i] > mx) mx = map[i];
  }
  if (mx > T{0}) {
    for (std::size_t i = 0; i < map.size(); ++i) map[i] /= mx;
  }
  return map;
}

/// Saliency of one 40x40 image in [0,1]: eval-mode forward (running stats,
/// no dropout), cross-entropy against `label` propagated back to the pixels.
/// With use_logit the gradient of the label's raw logit is taken instead.
template <typename T>
Tensor<T> saliency_map(VggModel<T>& model, const Tensor<T>& image, int label,
                       bool use_logit = false) {
  if (image.rank() != 4 || image.shape()[0] != 1 || image.shape()[1] != 1) {
    throw ShapeError("saliency: image must be [1,1,hw,hw]");
  }
  auto logits = model.forward(image, Mode::Eval);
  Tensor<T> upstream;
  if (use_logit) {
    upstream = Tensor<T>::zeros(logits.shape());
    upstream[static_cast<std::size_t>(label)] = T{1};
  } else {
    upstream = softmax_cross_entropy(logits, {label}).logit_grad;
  }
  auto back = model.backward(upstream);
  const std::size_t hw = image.shape()[2];
  return normalize_map(back.input_grad.reshaped({hw, hw}));
}

/// Center 40x40 crop of a 48x48 image tensor.
template <typename T>
Tensor<T> center_crop(const Tensor<T>& img, std::size_t crop) {
  const std::size_t h = img.shape()[0], w = img.shape()[1];
  if (crop > h || crop > w) throw ShapeError("center_crop larger than image");
  const std::size_t top = (h - crop) / 2, left = (w - crop) / 2;
  Tensor<T> out({crop, crop});
  for (std::size_t y = 0; y < crop; ++y) {
    for (std::size_t x = 0; x < crop; ++x) {
      out[y * crop + x] = img[(top + y) * w + (left + x)];
    }
  }
  return out;
}

/// Zero-pads a small map back into the center of a `size`-square frame for
/// display next to the original image.
template <typename T>
Tensor<T> embed_center(const Tensor<T>& map, std::size_t size) {
  const std::size_t h = map.shape()[0], w = map.shape()[1];
  if (h > size || w > size) throw ShapeError("embed_center: map too large");
  Tensor<T> out({size, size}, T{0});
  const std::size_t top = (size - h) / 2, left = (size - w) / 2;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      out[(top + y) * size + (left + x)] = map[y * w + x];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fixed colorization: a 256-entry blue -> cyan -> yellow -> red lookup table
// computed with integer arithmetic only, so emitted images are identical on
// every platform.
// ---------------------------------------------------------------------------

struct Rgb {
  std::uint8_t r, g, b;
};

inline const std::array<Rgb, 256>& colormap_lut() {
  static const std::array<Rgb, 256> lut = [] {
    std::array<Rgb, 256> t{};
    constexpr int anchors[4][3] = {
        {0, 0, 255}, {0, 255, 255}, {255, 255, 0}, {255, 0, 0}};
    constexpr int seg_len = 85;  // 255 = 3 * 85
    for (int v = 0; v < 256; ++v) {
      const int seg = v == 255 ? 2 : v / seg_len;
      const int i = v - seg * seg_len;
      auto lerp = [&](int a, int b) {
        return static_cast<std::uint8_t>(
            (a * (seg_len - i) + b * i + seg_len / 2) / seg_len);
      };
      t[static_cast<std::size_t>(v)] = {lerp(anchors[seg][0], anchors[seg + 1][0]),
                                        lerp(anchors[seg][1], anchors[seg + 1][1]),
                                        lerp(anchors[seg][2], anchors[seg + 1][2])};
    }
    return t;
  }();
  return lut;
}

inline std::uint8_t quantize_byte(double v) {
  if (v < 0) v = 0;
  if (v > 1) v = 1;
  const double scaled = std::floor(v * 255.0 + 0.5);  // round half up
  return static_cast<std::uint8_t>(scaled);
}

/// out = (1 - alpha) * grayscale + alpha * colorized(map), channels clamped
/// to [0,1]. Result layout [h,w,3].
template <typename T>
Tensor<T> superimpose(const Tensor<T>& map, const Tensor<T>& gray,
                      double alpha) {
  if (map.shape() != gray.shape() || map.rank() != 2) {
    throw ShapeError("superimpose: map and image shapes must match");
  }
  if (alpha < 0 || alpha > 1) throw ConfigError("alpha must be in [0,1]");
  const std::size_t h = map.shape()[0], w = map.shape()[1];
  const auto& lut = colormap_lut();
  Tensor<T> out({h, w, 3});
  for (std::size_t i = 0; i < h * w; ++i) {
    const Rgb c = lut[quantize_byte(static_cast<double>(map[i]))];
    const double g = static_cast<double>(gray[i]);
    const double rgb[3] = {c.r / 255.0, c.g / 255.0, c.b / 255.0};
    for (std::size_t ch = 0; ch < 3; ++ch) {
      double v = (1.0 - alpha) * g + alpha * rgb[ch];
      if (v < 0) v = 0;
      if (v > 1) v = 1;
      out[i * 3 + ch] = static_cast<T>(v);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary netpbm output: P5 for grayscale [h,w], P6 for color [h,w,3].
// Values in [0,1] scale by 255 and round half up.
// ---------------------------------------------------------------------------

template <typename T>
void write_pgm(const Tensor<T>& img, const std::filesystem::path& path) {
  if (img.rank() != 2) throw ShapeError("write_pgm: [h,w] tensor required");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  const std::size_t h = img.shape()[0], w = img.shape()[1];
  os << "P5\n" << w << ' ' << h << "\n255\n";
  std::vector<std::uint8_t> row(w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      row[x] = quantize_byte(static_cast<double>(img[y * w + x]));
    }
    os.write(reinterpret_cast<const char*>(row.data()),
             static_cast<std::streamsize>(w));
  }
  if (!os) throw IoError("write failure on " + path.string());
}

template <typename T>
void write_ppm(const Tensor<T>& img, const std::filesystem::path& path) {
  if (img.rank() != 3 || img.shape()[2] != 3) {
    throw ShapeError("write_ppm: [h,w,3] tensor required");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  const std::size_t h = img.shape()[0], w = img.shape()[1];
  os << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<std::uint8_t> row(w * 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t i = 0; i < w * 3; ++i) {
      row[i] = quantize_byte(static_cast<double>(img[y * w * 3 + i]));
    }
    os.write(reinterpret_cast<const char*>(row.data()),
             static_cast<std::streamsize>(w * 3));
  }
  if (!os) throw IoError("write failure on " + path.string());
}

namespace netpbm_detail {

inline int read_pnm_token(std::istream& is) {
  // skips whitespace and '#' comment lines between header fields
  int c = is.get();
  for (;;) {
    while (c == ' ' || c == '\n' || c == '\r' || c == '\t') c = is.get();
    if (c == '#') {
      while (c != '\n' && c != EOF) c = is.get();
      continue;
    }
    break;
  }
  int value = 0;
  bool any = false;
  while (c >= '0' && c <= '9') {
    value = value * 10 + (c - '0');
    c = is.get();
    any = true;
  }
  if (!any) throw ParseError("malformed netpbm header");
  return value;
}

}  // namespace netpbm_detail

/// Reads a binary P5 file back as values in [0,1].
template <typename T>
Tensor<T> read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[2];
  is.read(magic, 2);
  if (is.gcount() != 2 || magic[0] != 'P' || magic[1] != '5') {
    throw ParseError("not a binary P5 file: " + path.string());
  }
  const int w = netpbm_detail::read_pnm_token(is);
  const int h = netpbm_detail::read_pnm_token(is);
  const int maxval = netpbm_detail::read_pnm_token(is);
  if (w <= 0 || h <= 0 || maxval != 255) {
    throw ParseError("unsupported P5 geometry in " + path.string());
  }
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h);
  is.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(is.gcount()) != bytes.size()) {
    throw ParseError("truncated P5 payload in " + path.string());
  }
  Tensor<T> img({static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    img[i] = static_cast<T>(bytes[i] / 255.0);
  }
  return img;
}

template <typename T>
Tensor<T> read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[2];
  is.read(magic, 2);
  if (is.gcount() != 2 || magic[0] != 'P' || magic[1] != '6') {
    throw ParseError("not a binary P6 file: " + path.string());
  }
  const int w = netpbm_detail::read_pnm_token(is);
  const int h = netpbm_detail::read_pnm_token(is);
  const int maxval = netpbm_detail::read_pnm_token(is);
  if (w <= 0 || h <= 0 || maxval != 255) {
    throw ParseError("unsupported P6 geometry in " + path.string());
  }
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h * 3);
  is.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(is.gcount()) != bytes.size()) {
    throw ParseError("truncated P6 payload in " + path.string());
  }
  Tensor<T> img({static_cast<std::size_t>(h), static_cast<std::size_t>(w), 3});
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    img[i] = static_cast<T>(bytes[i] / 255.0);
  }
  return img;
}

}  // namespace fer
