#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "rare/nn.hpp"

namespace rare {

/// Starting layouts for the predicted fiducial points.
enum class InitPattern { TopBottomLines, CenterLine, SideLines };

inline const char* pattern_name(InitPattern p) {
  switch (p) {
    case InitPattern::TopBottomLines: return "top-bottom";
    case InitPattern::CenterLine: return "center";
    case InitPattern::SideLines: return "sides";
  }
  return "?";
}

/// Interleaved (x, y) coordinates of the chosen pattern. Kept strictly
/// inside (-1, 1): the output tanh can never reach the boundary, so an
/// exact edge pattern would need infinite biases.
inline std::vector<double> pattern_coords(InitPattern pattern, int k) {
  if (k < 4 || k % 2 != 0)
    throw std::invalid_argument("init pattern: K must be even and >= 4");
  std::vector<double> c;
  c.reserve(static_cast<size_t>(2 * k));
  int half = k / 2;
  switch (pattern) {
    case InitPattern::TopBottomLines:
      for (int row = 0; row < 2; ++row)
        for (int i = 0; i < half; ++i) {
          c.push_back(-0.9 + 1.8 * i / (half - 1));
          c.push_back(row == 0 ? -0.8 : 0.8);
        }
      break;
    case InitPattern::CenterLine:
      for (int i = 0; i < k; ++i) {
        c.push_back(-0.9 + 1.8 * i / (k - 1));
        c.push_back(0.0);
      }
      break;
    case InitPattern::SideLines:
      for (int side = 0; side < 2; ++side)
        for (int i = 0; i < half; ++i) {
          c.push_back(side == 0 ? -0.9 : 0.9);
          c.push_back(-0.8 + 1.6 * i / (half - 1));
        }
      break;
  }
  return c;
}

/// Output biases that make tanh reproduce the target coordinates exactly.
inline std::vector<double> atanh_bias(const std::vector<double>& coords) {
  std::vector<double> b(coords.size());
  for (size_t i = 0; i < coords.size(); ++i) {
    if (std::fabs(coords[i]) >= 1.0)
      throw std::invalid_argument("init pattern: coordinate " + std::to_string(coords[i]) +
                                  " not in (-1,1); atanh undefined");
    b[i] = std::atanh(coords[i]);
  }
  return b;
}

struct LocalizationConfig {
  std::vector<ConvSpec> convs;
  std::vector<int> fc_widths;
  int k = 20;
  InitPattern pattern = InitPattern::TopBottomLines;
  int img_h = 0, img_w = 0;
};

/// Convolutional regressor for the K fiducial points. The output layer
/// starts at zero weights with pattern biases, so the initial prediction
/// is the pattern regardless of the image.
template <typename S>
struct LocalizationNet {
  LocalizationConfig cfg;
  Params<S> params;

  void init(Rng& rng) {
    int c = 1;
    for (size_t i = 0; i < cfg.convs.size(); ++i) {
      const ConvSpec& s = cfg.convs[i];
      int fanin = c * s.kernel * s.kernel;
      params.add("loc.conv" + std::to_string(i) + ".w",
                 uniform_fanin<S>(rng, {s.filters, c, s.kernel, s.kernel}, fanin));
      params.add("loc.conv" + std::to_string(i) + ".b", Tensor<S>::zeros({s.filters}));
      c = s.filters;
    }
    auto [fc, fh, fw] = conv_stack_dims(cfg.convs, 1, cfg.img_h, cfg.img_w);
    int width = fc * fh * fw;
    for (size_t i = 0; i < cfg.fc_widths.size(); ++i) {
      int out = cfg.fc_widths[i];
      params.add("loc.fc" + std::to_string(i) + ".w", uniform_fanin<S>(rng, {out, width}, width));
      params.add("loc.fc" + std::to_string(i) + ".b", Tensor<S>::zeros({out}));
      width = out;
    }
    params.add("loc.out.w", Tensor<S>::zeros({2 * cfg.k, width}));
    std::vector<double> bias = atanh_bias(pattern_coords(cfg.pattern, cfg.k));
    Tensor<S> b = Tensor<S>::zeros({2 * cfg.k});
    for (size_t i = 0; i < bias.size(); ++i) b.values[i] = static_cast<S>(bias[i]);
    params.add("loc.out.b", std::move(b));
  }

  /// image: (1, H, W) -> fiducials (K, 2), coordinates in (-1, 1).
  Value fiducials(Graph<S>& g, const BoundParams<S>& bp, Value image) const {
    if (g.shape(image) != Shape{1, cfg.img_h, cfg.img_w})
      throw std::invalid_argument("localization: image shape " + shape_str(g.shape(image)) +
                                  ", configured " + shape_str({1, cfg.img_h, cfg.img_w}));
    Value x = image;
    for (size_t i = 0; i < cfg.convs.size(); ++i) {
      const ConvSpec& s = cfg.convs[i];
      x = g.relu(g.conv2d(x, bp["loc.conv" + std::to_string(i) + ".w"],
                          bp["loc.conv" + std::to_string(i) + ".b"], s.stride, s.pad, s.pad));
      if (s.pool) x = g.maxpool2x2(x);
    }
    x = g.reshape(x, {numel(g.shape(x))});
    for (size_t i = 0; i < cfg.fc_widths.size(); ++i)
      x = g.relu(g.add(g.matmul(bp["loc.fc" + std::to_string(i) + ".w"], x),
                       bp["loc.fc" + std::to_string(i) + ".b"]));
    Value out = g.tanh(g.add(g.matmul(bp["loc.out.w"], x), bp["loc.out.b"]));
    return g.reshape(out, {cfg.k, 2});
  }
};

}  // namespace rare
