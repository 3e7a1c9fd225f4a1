#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rare/graph.hpp"
#include "rare/rng.hpp"
#include "rare/tensor.hpp"

namespace rare {

/// Named parameter tensors in insertion order (the order fixes checkpoint
/// layout and optimizer-state pairing).
template <typename S>
class Params {
 public:
  Tensor<S>& add(const std::string& name, Tensor<S> t) {
    if (find(name)) throw std::invalid_argument("params: duplicate name " + name);
    items_.emplace_back(name, std::move(t));
    return items_.back().second;
  }

  Tensor<S>* find(const std::string& name) {
    for (auto& [n, t] : items_)
      if (n == name) return &t;
    return nullptr;
  }

  Tensor<S>& at(const std::string& name) {
    Tensor<S>* t = find(name);
    if (!t) throw std::invalid_argument("params: no parameter named " + name);
    return *t;
  }

  std::vector<std::pair<std::string, Tensor<S>>>& items() { return items_; }
  const std::vector<std::pair<std::string, Tensor<S>>>& items() const { return items_; }
  size_t size() const { return items_.size(); }

 private:
  std::vector<std::pair<std::string, Tensor<S>>> items_;
};

/// Uniform init scaled by 1/sqrt(fan-in).
template <typename S>
Tensor<S> uniform_fanin(Rng& rng, Shape shape, int fanin) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fanin));
  Tensor<S> t = Tensor<S>::zeros(std::move(shape));
  for (auto& v : t.values) v = static_cast<S>(rng.uniform(-bound, bound));
  return t;
}

/// Parameters registered as graph leaves for one forward/backward pass.
template <typename S>
struct BoundParams {
  std::map<std::string, Value> vals;

  Value operator[](const std::string& name) const {
    auto it = vals.find(name);
    if (it == vals.end()) throw std::invalid_argument("bound params: no value for " + name);
    return it->second;
  }
};

template <typename S>
BoundParams<S> bind_params(Graph<S>& g, const Params<S>& params) {
  BoundParams<S> bp;
  for (const auto& [name, t] : params.items()) bp.vals[name] = g.param(name, t);
  return bp;
}

struct ConvSpec {
  int filters = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  bool pool = false;  // 2x2 max-pool after the activation
};

inline std::array<int, 3> conv_stack_dims(const std::vector<ConvSpec>& specs, int in_c, int in_h,
                                          int in_w) {
  int c = in_c, h = in_h, w = in_w;
  for (const ConvSpec& s : specs) {
    h = (h + 2 * s.pad - s.kernel) / s.stride + 1;
    w = (w + 2 * s.pad - s.kernel) / s.stride + 1;
    c = s.filters;
    if (s.pool) {
      h /= 2;
      w /= 2;
    }
  }
  return {c, h, w};
}

}  // namespace rare
