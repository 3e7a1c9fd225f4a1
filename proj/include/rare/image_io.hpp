#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rare/tensor.hpp"

namespace rare {

// Grayscale images move through the system as (H, W) tensors in [0, 1].

template <typename S>
void save_pgm(const std::string& path, const Tensor<S>& img) {
  if (img.rank() != 2) throw std::invalid_argument("save_pgm: image must be 2-d");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_pgm: cannot write " + path);
  f << "P5\n" << img.shape[1] << " " << img.shape[0] << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(img.shape[1]));
  for (int y = 0; y < img.shape[0]; ++y) {
    for (int x = 0; x < img.shape[1]; ++x) {
      double v = static_cast<double>(img.at(y, x));
      v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
      row[static_cast<size_t>(x)] = static_cast<unsigned char>(v * 255.0 + 0.5);
    }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw std::runtime_error("save_pgm: write failed for " + path);
}

namespace detail {

inline int pgm_token(std::istream& in) {
  // skips whitespace and '#' comments
  int c = in.get();
  while (c == '#' || std::isspace(c)) {
    if (c == '#')
      while (c != '\n' && c != EOF) c = in.get();
    c = in.get();
  }
  int v = 0;
  while (std::isdigit(c)) {
    v = v * 10 + (c - '0');
    c = in.get();
  }
  return v;
}

template <typename S>
Tensor<S> load_pgm(std::istream& in, const std::string& path) {
  char magic[2];
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '5')
    throw std::runtime_error("load_image: " + path + " is not a binary graymap");
  int w = pgm_token(in);
  int h = pgm_token(in);
  int maxval = pgm_token(in);
  if (w < 1 || h < 1 || maxval < 1 || maxval > 255)
    throw std::runtime_error("load_image: bad graymap header in " + path);
  std::vector<unsigned char> data(static_cast<size_t>(w) * h);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!in) throw std::runtime_error("load_image: truncated graymap " + path);
  Tensor<S> img = Tensor<S>::zeros({h, w});
  for (size_t i = 0; i < data.size(); ++i)
    img.values[i] = static_cast<S>(data[i] / static_cast<double>(maxval));
  return img;
}

inline uint32_t be32(const unsigned char* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

inline int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

// Minimal reader for 8-bit single-channel, non-interlaced PNG.
template <typename S>
Tensor<S> load_png(std::istream& in, const std::string& path) {
  static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  unsigned char hdr[8];
  in.read(reinterpret_cast<char*>(hdr), 8);
  if (!in || std::memcmp(hdr, sig, 8) != 0)
    throw std::runtime_error("load_image: " + path + " is not a PNG file");
  int w = 0, h = 0;
  bool have_ihdr = false;
  std::vector<unsigned char> idat;
  for (;;) {
    unsigned char chdr[8];
    in.read(reinterpret_cast<char*>(chdr), 8);
    if (!in) throw std::runtime_error("load_image: truncated PNG " + path);
    uint32_t len = be32(chdr);
    std::string type(reinterpret_cast<char*>(chdr + 4), 4);
    std::vector<unsigned char> data(len);
    if (len) in.read(reinterpret_cast<char*>(data.data()), len);
    in.ignore(4);  // crc
    if (type == "IHDR") {
      if (len != 13) throw std::runtime_error("load_image: bad PNG header in " + path);
      w = static_cast<int>(be32(data.data()));
      h = static_cast<int>(be32(data.data() + 4));
      int depth = data[8], color = data[9], interlace = data[12];
      if (depth != 8 || color != 0 || interlace != 0)
        throw std::runtime_error("load_image: " + path +
                                 ": only 8-bit grayscale non-interlaced PNG is supported");
      have_ihdr = true;
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data.begin(), data.end());
    } else if (type == "IEND") {
      break;
    }
  }
  if (!have_ihdr || w < 1 || h < 1) throw std::runtime_error("load_image: bad PNG " + path);

  uLongf raw_len = static_cast<uLongf>((w + 1) * h);
  std::vector<unsigned char> raw(raw_len);
  if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != static_cast<uLongf>((w + 1) * h))
    throw std::runtime_error("load_image: PNG inflate failed for " + path);

  Tensor<S> img = Tensor<S>::zeros({h, w});
  std::vector<unsigned char> prev(static_cast<size_t>(w), 0);
  std::vector<unsigned char> cur(static_cast<size_t>(w));
  for (int y = 0; y < h; ++y) {
    const unsigned char* row = raw.data() + static_cast<size_t>(y) * (w + 1);
    int filter = row[0];
    for (int x = 0; x < w; ++x) {
      int rv = row[1 + x];
      int a = x > 0 ? cur[static_cast<size_t>(x - 1)] : 0;
      int b = prev[static_cast<size_t>(x)];
      int c = x > 0 ? prev[static_cast<size_t>(x - 1)] : 0;
      int v;
      switch (filter) {
        case 0: v = rv; break;
        case 1: v = rv + a; break;
        case 2: v = rv + b; break;
        case 3: v = rv + (a + b) / 2; break;
        case 4: v = rv + paeth(a, b, c); break;
        default: throw std::runtime_error("load_image: bad PNG filter in " + path);
      }
      cur[static_cast<size_t>(x)] = static_cast<unsigned char>(v & 0xff);
      img.at(y, x) = static_cast<S>(cur[static_cast<size_t>(x)] / 255.0);
    }
    std::swap(prev, cur);
  }
  return img;
}

}  // namespace detail

/// Loads a single-channel image (binary PGM or 8-bit grayscale PNG),
/// dispatching on content.
template <typename S>
Tensor<S> load_image(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_image: cannot open " + path);
  int first = f.peek();
  if (first == 'P') return detail::load_pgm<S>(f, path);
  return detail::load_png<S>(f, path);
}

}  // namespace rare
