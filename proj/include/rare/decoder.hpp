#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "rare/charset.hpp"
#include "rare/nn.hpp"

namespace rare {

struct DecoderConfig {
  int h_dim = 0;         // encoder output dimension
  int state_size = 128;  // GRU state
  int embed_size = 32;
  int attn_size = 64;
  int attn_filters = 16;  // 1-d conv filters over the previous attention
};

/// Attention GRU character generator. Additive content+location scoring:
///   score_i = v^T tanh(Ws s_{t-1} + Wh h_i + Wf f_i),  f = conv1d(alpha_{t-1})
/// output distribution: softmax(W s_t), 37 classes.
template <typename S>
struct Decoder {
  DecoderConfig cfg;
  Params<S> params;

  void init(Rng& rng) {
    int sdim = cfg.state_size, e = cfg.embed_size, a = cfg.attn_size, f = cfg.attn_filters;
    int x = e + cfg.h_dim;
    params.add("dec.embed", uniform_fanin<S>(rng, {kSos + 1, e}, e));
    params.add("dec.attn.ws", uniform_fanin<S>(rng, {a, sdim}, sdim));
    params.add("dec.attn.wh", uniform_fanin<S>(rng, {cfg.h_dim, a}, cfg.h_dim));
    params.add("dec.attn.conv", uniform_fanin<S>(rng, {f, 1, 1, 3}, 3));
    params.add("dec.attn.wf", uniform_fanin<S>(rng, {f, a}, f));
    params.add("dec.attn.v", uniform_fanin<S>(rng, {a}, a));
    params.add("dec.gru.wzr", uniform_fanin<S>(rng, {2 * sdim, x + sdim}, x + sdim));
    params.add("dec.gru.bzr", Tensor<S>::zeros({2 * sdim}));
    params.add("dec.gru.wc", uniform_fanin<S>(rng, {sdim, x + sdim}, x + sdim));
    params.add("dec.gru.bc", Tensor<S>::zeros({sdim}));
    // zero output layer: the untrained model emits uniform distributions
    params.add("dec.out.w", Tensor<S>::zeros({kNumClasses, sdim}));
    params.add("dec.out.b", Tensor<S>::zeros({kNumClasses}));
  }

  /// Per-image precomputation: the content projection Wh h is step-invariant.
  struct Context {
    Value h;       // (L, h_dim)
    Value h_proj;  // (L, attn_size)
    int len = 0;
  };

  struct State {
    Value s;      // GRU state (state_size)
    Value alpha;  // previous attention (L)
  };

  struct StepOut {
    State state;
    Value probs;   // (37)
    Value logits;  // (37)
    Value alpha;   // (L)
  };

  Context make_context(Graph<S>& g, const BoundParams<S>& bp, Value h) const {
    const Shape& hs = g.shape(h);
    if (hs.size() != 2 || hs[1] != cfg.h_dim)
      throw std::invalid_argument("decoder: feature shape " + shape_str(hs));
    return Context{h, g.matmul(h, bp["dec.attn.wh"]), hs[0]};
  }

  /// Zero state and zero attention (the t=1 convention).
  State initial_state(Graph<S>& g, const Context& ctx) const {
    return State{g.constant(Tensor<S>::zeros({cfg.state_size})),
                 g.constant(Tensor<S>::zeros({ctx.len}))};
  }

  /// Attention weights for the current step; a simplex vector of length L.
  Value attend(Graph<S>& g, const BoundParams<S>& bp, const Context& ctx, Value s_prev,
               Value alpha_prev) const {
    if (g.shape(alpha_prev)[0] != ctx.len)
      throw std::invalid_argument("attend: alpha length " +
                                  std::to_string(g.shape(alpha_prev)[0]) + ", features " +
                                  std::to_string(ctx.len));
    Value f = g.conv2d(g.reshape(alpha_prev, {1, 1, ctx.len}), bp["dec.attn.conv"], Value{}, 1, 0,
                       1);                                   // (F, 1, L)
    Value floc = g.matmul(g.map_to_sequence(f), bp["dec.attn.wf"]);  // (L, A)
    Value sproj = g.matmul(bp["dec.attn.ws"], s_prev);               // (A)
    Value scores = g.matmul(g.tanh(g.add(g.add(ctx.h_proj, floc), sproj)), bp["dec.attn.v"]);
    return g.softmax(scores);
  }

  /// g_t = sum_i alpha_i h_i.
  Value glimpse(Graph<S>& g, Value alpha, Value h) const {
    if (g.shape(alpha)[0] != g.shape(h)[0])
      throw std::invalid_argument("glimpse: alpha length " + std::to_string(g.shape(alpha)[0]) +
                                  " vs features " + std::to_string(g.shape(h)[0]));
    int d = g.shape(h)[1];
    return g.reshape(g.matmul(g.reshape(alpha, {1, g.shape(alpha)[0]}), h), {d});
  }

  /// One GRU update + output distribution. l_prev is the previous label
  /// (kSos at t=1).
  std::pair<Value, Value> decode_step(Graph<S>& g, const BoundParams<S>& bp, int l_prev,
                                      Value glimpse_vec, Value s_prev) const {
    if (l_prev < 0 || l_prev > kSos)
      throw std::invalid_argument("decode_step: invalid label index " + std::to_string(l_prev));
    int sdim = cfg.state_size;
    Value x = g.concat({g.embed(bp["dec.embed"], l_prev), glimpse_vec}, 0);
    Value zr = g.sigmoid(g.add(g.matmul(bp["dec.gru.wzr"], g.concat({x, s_prev}, 0)),
                               bp["dec.gru.bzr"]));
    Value z = g.slice(zr, 0, 0, sdim);
    Value r = g.slice(zr, 0, sdim, sdim);
    Value cand = g.tanh(g.add(g.matmul(bp["dec.gru.wc"], g.concat({x, g.mul(r, s_prev)}, 0)),
                              bp["dec.gru.bc"]));
    Value s = g.add(s_prev, g.mul(z, g.sub(cand, s_prev)));
    Value logits = g.add(g.matmul(bp["dec.out.w"], s), bp["dec.out.b"]);
    return {s, logits};
  }

  /// attend + glimpse + decode_step.
  StepOut step(Graph<S>& g, const BoundParams<S>& bp, const Context& ctx, const State& prev,
               int l_prev) const {
    Value alpha = attend(g, bp, ctx, prev.s, prev.alpha);
    Value gl = glimpse(g, alpha, ctx.h);
    auto [s, logits] = decode_step(g, bp, l_prev, gl, prev.s);
    return StepOut{State{s, alpha}, g.softmax(logits), logits, alpha};
  }

  /// Stateless-step view used by the lexicon searches; every hypothesis
  /// owns its (s, alpha) pair, so branching is free.
  struct Session {
    Graph<S>* g = nullptr;
    const Decoder* dec = nullptr;
    const BoundParams<S>* bp = nullptr;
    const Context* ctx = nullptr;

    struct State {
      typename Decoder::State st;
      bool started = false;
    };

    State start() const { return State{dec->initial_state(*g, *ctx), true}; }

    std::pair<State, std::array<double, kNumClasses>> step(const State& s, int l_prev) const {
      StepOut so = dec->step(*g, *bp, *ctx, s.st, l_prev);
      std::array<double, kNumClasses> probs{};
      const auto& v = g->val(so.probs).values;
      for (int i = 0; i < kNumClasses; ++i) probs[static_cast<size_t>(i)] = static_cast<double>(v[static_cast<size_t>(i)]);
      return {State{so.state, true}, probs};
    }
  };

  Session session(Graph<S>& g, const BoundParams<S>& bp, const Context& ctx) const {
    return Session{&g, this, &bp, &ctx};
  }

  /// Argmax generation, feeding each prediction back; stops at EOS or
  /// max_len. The returned sequence excludes EOS.
  LabelSequence greedy_decode(Graph<S>& g, const BoundParams<S>& bp, const Context& ctx,
                              int max_len = 32) const {
    if (max_len < 1) throw std::invalid_argument("greedy_decode: max_len must be >= 1");
    LabelSequence out;
    State state = initial_state(g, ctx);
    int prev = kSos;
    for (int t = 0; t < max_len; ++t) {
      StepOut so = step(g, bp, ctx, state, prev);
      const auto& p = g.val(so.probs).values;
      int best = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
      if (best == kEos) break;
      out.push_back(best);
      state = so.state;
      prev = best;
    }
    return out;
  }
};

}  // namespace rare
