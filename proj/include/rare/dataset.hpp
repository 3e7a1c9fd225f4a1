#pragma once

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "rare/charset.hpp"
#include "rare/image_io.hpp"
#include "rare/kernels.hpp"
#include "rare/tensor.hpp"

namespace rare {

struct Sample {
  std::string path;
  std::string label;
  bool heldout = false;  // keyed on the path as written in the manifest
};

inline std::string dirname_of(const std::string& path) {
  size_t pos = path.find_last_of('/');
  return pos == std::string::npos ? std::string(".") : path.substr(0, pos);
}

/// FNV-1a; the held-out split keys on it so membership depends only on
/// the path string as written in the manifest.
inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline bool is_heldout(const std::string& path) { return fnv1a(path) % 10 == 0; }

/// Manifest: one `<image-path>\t<label>` per line. Relative paths resolve
/// against the manifest's directory.
inline std::vector<Sample> read_manifest(const std::string& manifest_path) {
  std::ifstream f(manifest_path);
  if (!f) throw std::runtime_error("manifest: cannot open " + manifest_path);
  std::string dir = dirname_of(manifest_path);
  std::vector<Sample> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("manifest: line without tab separator: " + line);
    Sample s;
    s.path = line.substr(0, tab);
    s.label = line.substr(tab + 1);
    s.heldout = is_heldout(s.path);
    if (!s.path.empty() && s.path[0] != '/') s.path = dir + "/" + s.path;
    for (char c : s.label)
      if (!char_valid(c))
        throw std::runtime_error("manifest: label '" + s.label + "' of sample " + s.path +
                                 " contains characters outside the 36-character alphabet");
    out.push_back(std::move(s));
  }
  if (out.empty()) throw std::runtime_error("manifest: " + manifest_path + " lists no samples");
  return out;
}

/// Bilinear resize through the normalized-coordinate sampler.
template <typename S>
Tensor<S> resize_bilinear(const Tensor<S>& img, int out_h, int out_w) {
  if (img.shape[0] == out_h && img.shape[1] == out_w) return img;
  std::vector<S> grid(static_cast<size_t>(out_h) * out_w * 2);
  size_t i = 0;
  for (int r = 0; r < out_h; ++r)
    for (int c = 0; c < out_w; ++c) {
      grid[i++] = static_cast<S>(-1.0 + 2.0 * (c + 0.5) / out_w);
      grid[i++] = static_cast<S>(-1.0 + 2.0 * (r + 0.5) / out_h);
    }
  Tensor<S> out = Tensor<S>::zeros({out_h, out_w});
  kernels::bilinear_sample(img.values.data(), img.shape[0], img.shape[1], grid.data(),
                           out_h * out_w, out.values.data());
  return out;
}

template <typename S>
struct LoadedDataset {
  std::vector<Sample> samples;
  std::vector<Tensor<S>> images;  // (H, W), values in [-1, 1]
  std::vector<int> train_idx;
  std::vector<int> heldout_idx;
};

/// Loads every manifest sample, resized to (img_h, img_w) and normalized
/// to [-1, 1]. Unreadable samples are skipped with a warning; all samples
/// unreadable is an error. `workers` only parallelizes file loading;
/// results are deposited by index, so the outcome is order-independent.
template <typename S>
LoadedDataset<S> load_dataset(const std::string& manifest_path, int img_h, int img_w,
                              int workers = 1) {
  std::vector<Sample> manifest = read_manifest(manifest_path);
  int n = static_cast<int>(manifest.size());
  std::vector<Tensor<S>> images(static_cast<size_t>(n));
  std::vector<char> ok(static_cast<size_t>(n), 0);

  auto load_range = [&](int begin, int end) {
    for (int i = begin; i < end; ++i) {
      try {
        Tensor<S> img = resize_bilinear(load_image<S>(manifest[static_cast<size_t>(i)].path),
                                        img_h, img_w);
        for (S& v : img.values) v = S(2) * v - S(1);
        images[static_cast<size_t>(i)] = std::move(img);
        ok[static_cast<size_t>(i)] = 1;
      } catch (const std::exception& e) {
        std::cerr << "warning: skipping unreadable sample " << manifest[static_cast<size_t>(i)].path
                  << ": " << e.what() << "\n";
      }
    }
  };
  workers = std::max(1, workers);
  if (workers == 1 || n < 2 * workers) {
    load_range(0, n);
  } else {
    std::vector<std::thread> pool;
    int chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back(load_range, w * chunk, std::min(n, (w + 1) * chunk));
    for (auto& t : pool) t.join();
  }

  LoadedDataset<S> out;
  for (int i = 0; i < n; ++i) {
    if (!ok[static_cast<size_t>(i)]) continue;
    out.samples.push_back(manifest[static_cast<size_t>(i)]);
    out.images.push_back(std::move(images[static_cast<size_t>(i)]));
    int idx = static_cast<int>(out.samples.size()) - 1;
    if (out.samples.back().heldout)
      out.heldout_idx.push_back(idx);
    else
      out.train_idx.push_back(idx);
  }
  if (out.samples.empty())
    throw std::runtime_error("dataset: no readable samples in " + manifest_path);
  return out;
}

}  // namespace rare
