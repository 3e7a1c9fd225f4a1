#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rare/tensor.hpp"

namespace rare {

/// ADADELTA accumulators, one pair per parameter tensor, in registry order.
template <typename S>
struct AdadeltaState {
  double rho = 0.95;
  double epsilon = 1e-6;
  std::vector<std::vector<S>> grad_sq;    // E[g^2]
  std::vector<std::vector<S>> update_sq;  // E[dx^2]

  template <typename P>
  void init(const std::vector<std::pair<std::string, P>>& params) {
    grad_sq.clear();
    update_sq.clear();
    for (const auto& [name, t] : params) {
      grad_sq.emplace_back(t->values.size(), S(0));
      update_sq.emplace_back(t->values.size(), S(0));
    }
  }
};

/// One ADADELTA update:
///   E[g^2] <- rho E[g^2] + (1-rho) g^2
///   dx = -sqrt(E[dx^2]+eps) / sqrt(E[g^2]+eps) * g
///   E[dx^2] <- rho E[dx^2] + (1-rho) dx^2
///   x <- x + dx
template <typename S>
void adadelta_step(std::vector<std::pair<std::string, Tensor<S>*>>& params,
                   const std::vector<std::vector<S>>& grads, AdadeltaState<S>& state) {
  if (params.size() != grads.size() || params.size() != state.grad_sq.size())
    throw std::invalid_argument("adadelta: parameter/gradient/state count mismatch");
  S rho = static_cast<S>(state.rho);
  S eps = static_cast<S>(state.epsilon);
  for (size_t p = 0; p < params.size(); ++p) {
    std::vector<S>& x = params[p].second->values;
    const std::vector<S>& g = grads[p];
    std::vector<S>& eg2 = state.grad_sq[p];
    std::vector<S>& edx2 = state.update_sq[p];
    if (x.size() != g.size())
      throw std::invalid_argument("adadelta: gradient shape mismatch for " + params[p].first);
    for (size_t i = 0; i < x.size(); ++i) {
      eg2[i] = rho * eg2[i] + (S(1) - rho) * g[i] * g[i];
      S dx = -std::sqrt(edx2[i] + eps) / std::sqrt(eg2[i] + eps) * g[i];
      edx2[i] = rho * edx2[i] + (S(1) - rho) * dx * dx;
      x[i] += dx;
    }
  }
}

/// Scales gradients so their global L2 norm is at most max_norm.
/// Returns the pre-clip norm.
template <typename S>
double clip_global_norm(std::vector<std::vector<S>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (S v : g) sq += static_cast<double>(v) * static_cast<double>(v);
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    S f = static_cast<S>(max_norm / norm);
    for (auto& g : grads)
      for (S& v : g) v *= f;
  }
  return norm;
}

}  // namespace rare
