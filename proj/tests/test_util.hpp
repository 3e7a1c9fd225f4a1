#pragma once

#include "rare/rng.hpp"
#include "rare/tensor.hpp"

namespace rare::testing {

template <typename S>
Tensor<S> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor<S> t = Tensor<S>::zeros(std::move(shape));
  for (auto& v : t.values) v = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

}  // namespace rare::testing
