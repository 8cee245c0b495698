#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"

namespace imuspec {

/// Three-channel image stored planar (channel, row, column). Channel 0/1/2
/// are R/G/B; for spectrograms they carry the x/y/z axes.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, double fill = 0.0) : height(h), width(w), data(std::size_t(3) * h * w, fill) {}

  std::size_t plane() const { return std::size_t(height) * width; }
  double& at(int c, int r, int col) { return data[c * plane() + std::size_t(r) * width + col]; }
  double at(int c, int r, int col) const { return data[c * plane() + std::size_t(r) * width + col]; }

  bool operator==(const Image&) const = default;
};

struct ChannelStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};

  bool operator==(const ChannelStats&) const = default;
};

// ---- PPM (P6, maxval 255) ----

inline unsigned char quantize_u8(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<unsigned char>(std::lround(c * 255.0));
}

inline std::string ppm_header(int height, int width) {
  return "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
}

inline std::string encode_ppm(const Image& img) {
  std::string out = ppm_header(img.height, img.width);
  out.reserve(out.size() + img.plane() * 3);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      for (int ch = 0; ch < 3; ++ch) out.push_back(static_cast<char>(quantize_u8(img.at(ch, r, c))));
  return out;
}

inline void write_ppm(const std::string& path, const Image& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + path);
  const auto bytes = encode_ppm(img);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed: " + path);
}

namespace detail {

// Reads one header token, skipping whitespace and '#' comments.
inline std::string ppm_token(const std::string& buf, std::size_t& pos) {
  while (pos < buf.size()) {
    if (buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos])) && buf[pos] != '#') ++pos;
  return buf.substr(start, pos - start);
}

}  // namespace detail

inline Image decode_ppm(const std::string& buf) {
  std::size_t pos = 0;
  if (detail::ppm_token(buf, pos) != "P6") throw DataError("ppm: bad magic (expected P6)");
  long long w = 0, h = 0, maxval = 0;
  if (!parse_int(detail::ppm_token(buf, pos), w) || !parse_int(detail::ppm_token(buf, pos), h) || w <= 0 || h <= 0)
    throw DataError("ppm: malformed dimensions");
  if (!parse_int(detail::ppm_token(buf, pos), maxval) || maxval != 255)
    throw DataError("ppm: only maxval 255 is supported");
  if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos])))
    throw DataError("ppm: missing header terminator");
  ++pos;
  const std::size_t need = std::size_t(w) * std::size_t(h) * 3;
  if (buf.size() - pos < need) throw DataError("ppm: truncated pixel data");
  Image img(static_cast<int>(h), static_cast<int>(w));
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      for (int ch = 0; ch < 3; ++ch)
        img.at(ch, r, c) = static_cast<unsigned char>(buf[pos++]) / 255.0;
  return img;
}

inline Image read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return decode_ppm(ss.str());
}

// ---- resize / normalize ----

/// Separable bilinear resize with corner-aligned sampling: output corners map
/// exactly onto input corners.
inline Image resize_bilinear(const Image& src, int out_h, int out_w) {
  if (src.height < 1 || src.width < 1 || out_h < 1 || out_w < 1)
    throw ShapeError("resize_bilinear: dimensions must be >= 1");
  if (out_h == src.height && out_w == src.width) return src;

  struct Tap {
    int i0, i1;
    double f;
  };
  auto taps = [](int in, int out) {
    std::vector<Tap> t(out);
    const double scale = out > 1 ? double(in - 1) / double(out - 1) : 0.0;
    for (int o = 0; o < out; ++o) {
      const double pos = o * scale;
      int i0 = std::min(static_cast<int>(std::floor(pos)), in - 1);
      int i1 = std::min(i0 + 1, in - 1);
      t[o] = {i0, i1, pos - i0};
    }
    return t;
  };
  const auto ty = taps(src.height, out_h);
  const auto tx = taps(src.width, out_w);

  Image tmp(src.height, out_w);
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 0; r < src.height; ++r)
      for (int c = 0; c < out_w; ++c) {
        const auto& t = tx[c];
        const double a = src.at(ch, r, t.i0), b = src.at(ch, r, t.i1);
        tmp.at(ch, r, c) = t.f == 0.0 ? a : a + (b - a) * t.f;
      }
  Image out(out_h, out_w);
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 0; r < out_h; ++r) {
      const auto& t = ty[r];
      for (int c = 0; c < out_w; ++c) {
        const double a = tmp.at(ch, t.i0, c), b = tmp.at(ch, t.i1, c);
        out.at(ch, r, c) = t.f == 0.0 ? a : a + (b - a) * t.f;
      }
    }
  return out;
}

inline void check_stats(const ChannelStats& stats) {
  for (int ch = 0; ch < 3; ++ch)
    if (!(stats.std[ch] > 0.0) || !std::isfinite(stats.std[ch]) || !std::isfinite(stats.mean[ch]))
      throw NumericError("normalize: channel " + std::to_string(ch) + " has non-positive or non-finite std");
}

inline Image normalize(Image img, const ChannelStats& stats) {
  check_stats(stats);
  const std::size_t n = img.plane();
  for (int ch = 0; ch < 3; ++ch) {
    double* p = img.data.data() + ch * n;
    for (std::size_t i = 0; i < n; ++i) p[i] = (p[i] - stats.mean[ch]) / stats.std[ch];
  }
  return img;
}

inline Image denormalize(Image img, const ChannelStats& stats) {
  check_stats(stats);
  const std::size_t n = img.plane();
  for (int ch = 0; ch < 3; ++ch) {
    double* p = img.data.data() + ch * n;
    for (std::size_t i = 0; i < n; ++i) p[i] = p[i] * stats.std[ch] + stats.mean[ch];
  }
  return img;
}

}  // namespace imuspec
