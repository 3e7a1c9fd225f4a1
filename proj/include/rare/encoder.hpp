#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "rare/nn.hpp"

namespace rare {

/// One LSTM direction over a (L, D) sequence; returns (L, H) with row t
/// holding the state after consuming position t (positions visited
/// right-to-left when reverse is set, rows still in input order).
/// Gate layout in w, b: [input; forget; candidate; output].
template <typename S>
Value lstm_direction(Graph<S>& g, Value seq, Value w, Value b, int hidden, bool reverse) {
  const Shape& ss = g.shape(seq);
  if (ss.size() != 2 || ss[0] < 1) throw std::invalid_argument("lstm: empty sequence");
  int len = ss[0];
  Value h = g.constant(Tensor<S>::zeros({hidden}));
  Value c = g.constant(Tensor<S>::zeros({hidden}));
  std::vector<Value> out(static_cast<size_t>(len));
  for (int step = 0; step < len; ++step) {
    int t = reverse ? len - 1 - step : step;
    Value x = g.reshape(g.slice(seq, 0, t, 1), {ss[1]});
    Value gates = g.add(g.matmul(w, g.concat({x, h}, 0)), b);
    Value gi = g.sigmoid(g.slice(gates, 0, 0, hidden));
    Value gf = g.sigmoid(g.slice(gates, 0, hidden, hidden));
    Value gc = g.tanh(g.slice(gates, 0, 2 * hidden, hidden));
    Value go = g.sigmoid(g.slice(gates, 0, 3 * hidden, hidden));
    c = g.add(g.mul(gf, c), g.mul(gi, gc));
    h = g.mul(go, g.tanh(c));
    out[static_cast<size_t>(t)] = h;
  }
  return g.stack_rows(out);
}

/// Bidirectional layer: per-position concatenation [forward; backward].
template <typename S>
Value blstm_layer(Graph<S>& g, Value seq, Value wf, Value bf, Value wb, Value bb, int hidden) {
  Value fwd = lstm_direction(g, seq, wf, bf, hidden, false);
  Value bwd = lstm_direction(g, seq, wb, bb, hidden, true);
  return g.concat({fwd, bwd}, 1);
}

struct EncoderConfig {
  std::vector<ConvSpec> convs;
  int lstm_hidden = 64;
  int lstm_layers = 2;
  int img_h = 0, img_w = 0;
};

/// Convolutional feature extractor + map-to-sequence + stacked BLSTM.
template <typename S>
struct Encoder {
  EncoderConfig cfg;
  Params<S> params;

  int conv_height() const { return conv_stack_dims(cfg.convs, 1, cfg.img_h, cfg.img_w)[1]; }
  int conv_depth() const { return cfg.convs.back().filters; }
  int seq_len() const { return conv_stack_dims(cfg.convs, 1, cfg.img_h, cfg.img_w)[2]; }
  int out_dim() const { return 2 * cfg.lstm_hidden; }

  void init(Rng& rng) {
    int c = 1;
    for (size_t i = 0; i < cfg.convs.size(); ++i) {
      const ConvSpec& s = cfg.convs[i];
      int fanin = c * s.kernel * s.kernel;
      params.add("enc.conv" + std::to_string(i) + ".w",
                 uniform_fanin<S>(rng, {s.filters, c, s.kernel, s.kernel}, fanin));
      params.add("enc.conv" + std::to_string(i) + ".b", Tensor<S>::zeros({s.filters}));
      c = s.filters;
    }
    int in_dim = conv_depth() * conv_height();
    for (int layer = 0; layer < cfg.lstm_layers; ++layer) {
      int h = cfg.lstm_hidden;
      for (const char* dir : {"fwd", "bwd"}) {
        std::string base = "enc.blstm" + std::to_string(layer) + "." + dir;
        params.add(base + ".w", uniform_fanin<S>(rng, {4 * h, in_dim + h}, in_dim + h));
        params.add(base + ".b", Tensor<S>::zeros({4 * h}));
      }
      in_dim = 2 * h;
    }
  }

  /// image (1, h, w) -> feature maps (D, h', w'). Fully convolutional:
  /// any input size compatible with the pooling chain works.
  Value conv_features(Graph<S>& g, const BoundParams<S>& bp, Value image) const {
    Value x = image;
    for (size_t i = 0; i < cfg.convs.size(); ++i) {
      const ConvSpec& s = cfg.convs[i];
      x = g.relu(g.conv2d(x, bp["enc.conv" + std::to_string(i) + ".w"],
                          bp["enc.conv" + std::to_string(i) + ".b"], s.stride, s.pad, s.pad));
      if (s.pool) x = g.maxpool2x2(x);
    }
    return x;
  }

  /// Full encoder: image (1, H, W) -> sequence (L, 2 * lstm_hidden).
  Value encode(Graph<S>& g, const BoundParams<S>& bp, Value image) const {
    if (g.shape(image)[1] != cfg.img_h)
      throw std::invalid_argument("encoder: image height " + std::to_string(g.shape(image)[1]) +
                                  ", configured " + std::to_string(cfg.img_h));
    Value seq = g.map_to_sequence(conv_features(g, bp, image));
    for (int layer = 0; layer < cfg.lstm_layers; ++layer) {
      std::string base = "enc.blstm" + std::to_string(layer) + ".";
      seq = blstm_layer(g, seq, bp[base + "fwd.w"], bp[base + "fwd.b"], bp[base + "bwd.w"],
                        bp[base + "bwd.b"], cfg.lstm_hidden);
    }
    return seq;
  }
};

}  // namespace rare
