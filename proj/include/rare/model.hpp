#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rare/decoder.hpp"
#include "rare/encoder.hpp"
#include "rare/localization.hpp"
#include "rare/tps.hpp"

namespace rare {

struct ModelConfig {
  std::string preset;
  int img_h = 0, img_w = 0;
  int k = 20;
  InitPattern pattern = InitPattern::TopBottomLines;
  bool stn = true;
  LocalizationConfig loc;
  EncoderConfig enc;
  DecoderConfig dec;

  static ModelConfig make(const std::string& preset);
};

inline ModelConfig ModelConfig::make(const std::string& preset) {
  ModelConfig c;
  c.preset = preset;
  auto conv = [](int filters, bool pool, int kernel = 3, int pad = 1) {
    ConvSpec s;
    s.filters = filters;
    s.kernel = kernel;
    s.pad = pad;
    s.pool = pool;
    return s;
  };
  if (preset == "tiny") {
    // gradient-check scale: every hidden width <= 32
    c.img_h = 16;
    c.img_w = 48;
    c.k = 8;
    c.loc.convs = {conv(4, true), conv(8, true), conv(8, true)};
    c.loc.fc_widths = {16};
    c.enc.convs = {conv(4, true), conv(8, true), conv(8, false)};
    c.enc.lstm_hidden = 8;
    c.dec.state_size = 16;
    c.dec.embed_size = 8;
    c.dec.attn_size = 8;
    c.dec.attn_filters = 4;
  } else if (preset == "desk") {
    c.img_h = 32;
    c.img_w = 100;
    c.k = 20;
    c.loc.convs = {conv(16, true), conv(32, true), conv(64, true)};
    c.loc.fc_widths = {128};
    c.enc.convs = {conv(16, true), conv(32, true), conv(64, false)};
    c.enc.lstm_hidden = 64;
    c.dec.state_size = 128;
    c.dec.embed_size = 32;
    c.dec.attn_size = 64;
    c.dec.attn_filters = 16;
  } else if (preset == "full") {
    // the published architecture; far beyond desk-scale training budgets
    c.img_h = 32;
    c.img_w = 100;
    c.k = 20;
    c.loc.convs = {conv(64, true), conv(128, true), conv(256, true), conv(512, true)};
    c.loc.fc_widths = {1024, 1024};
    c.enc.convs = {conv(64, true),  conv(128, true), conv(256, false), conv(256, true),
                   conv(512, false), conv(512, true), conv(512, false, 2, 0)};
    c.enc.lstm_hidden = 256;
    c.dec.state_size = 256;
    c.dec.embed_size = 32;
    c.dec.attn_size = 256;
    c.dec.attn_filters = 16;
  } else {
    throw std::invalid_argument("unknown preset '" + preset + "' (tiny, desk, full)");
  }
  c.loc.k = c.k;
  c.loc.pattern = c.pattern;
  c.loc.img_h = c.img_h;
  c.loc.img_w = c.img_w;
  c.enc.img_h = c.img_h;
  c.enc.img_w = c.img_w;
  return c;
}

/// The whole recognizer: rectification (localization + TPS + sampler)
/// feeding the encoder-decoder. Rectified output keeps the input dims.
template <typename S>
struct Model {
  ModelConfig cfg;
  LocalizationNet<S> loc;
  Encoder<S> enc;
  Decoder<S> dec;
  TpsChain<S> tps;

  explicit Model(ModelConfig config) : cfg(std::move(config)) {
    loc.cfg = cfg.loc;
    enc.cfg = cfg.enc;
    dec.cfg = cfg.dec;
    dec.cfg.h_dim = enc.out_dim();
    if (cfg.stn) tps = TpsChain<S>(cfg.k, cfg.img_h, cfg.img_w);
  }

  void init(uint64_t seed) {
    Rng rng(seed);
    if (cfg.stn) loc.init(rng);
    enc.init(rng);
    dec.init(rng);
  }

  std::vector<std::pair<std::string, Tensor<S>*>> named_params() {
    std::vector<std::pair<std::string, Tensor<S>*>> out;
    for (auto* p : {&loc.params, &enc.params, &dec.params})
      for (auto& [name, t] : p->items()) out.emplace_back(name, &t);
    return out;
  }

  BoundParams<S> bind(Graph<S>& g) const {
    BoundParams<S> bp;
    for (const auto* p : {&loc.params, &enc.params, &dec.params})
      for (const auto& [name, t] : p->items()) bp.vals[name] = g.param(name, t);
    return bp;
  }

  struct Forward {
    Value image;
    Value fiducials;  // invalid when the STN is bypassed
    Value rectified;
    typename Decoder<S>::Context ctx;
  };

  /// image: (H, W) in [-1, 1].
  Forward forward(Graph<S>& g, const BoundParams<S>& bp, Value image) const {
    Forward fw;
    fw.image = image;
    if (cfg.stn) {
      fw.fiducials = loc.fiducials(g, bp, g.reshape(image, {1, cfg.img_h, cfg.img_w}));
      fw.rectified = tps.rectify(g, image, fw.fiducials);
    } else {
      fw.rectified = image;
    }
    Value feats = enc.encode(g, bp, g.reshape(fw.rectified, {1, cfg.img_h, cfg.img_w}));
    fw.ctx = dec.make_context(g, bp, feats);
    return fw;
  }
};

}  // namespace rare
