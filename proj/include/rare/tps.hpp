#pragma once

#include <cmath>
#include <iostream>
#include <stdexcept>
#include <utility>
#include <vector>

#include "rare/graph.hpp"
#include "rare/linalg.hpp"
#include "rare/tensor.hpp"

namespace rare {

/// K control points in normalized coordinates (origin at image center,
/// both axes in [-1, 1]). Row-major storage: (x_0, y_0, x_1, y_1, ...).
struct FiducialSet {
  int k = 0;
  std::vector<double> coords;  // 2K values

  double x(int i) const { return coords[static_cast<size_t>(2 * i)]; }
  double y(int i) const { return coords[static_cast<size_t>(2 * i + 1)]; }
  bool operator==(const FiducialSet&) const = default;
};

/// TPS transform: 2 x (K+3) matrix, columns ordered [1, x, y, r_1..r_K].
struct TpsParams {
  int k = 0;
  Mat t;  // 2 x (K+3)
};

/// Inverse of the base-point system matrix; a pure function of the base
/// fiducials, computed once and reused for every solve.
struct DeltaInverse {
  int k = 0;
  Mat inv;            // (K+3) x (K+3)
  double condition = 0.0;
};

struct SampleGrid {
  int out_h = 0, out_w = 0;
  std::vector<double> points;  // N pairs (x, y), row-major over output pixels

  int size() const { return out_h * out_w; }
};

/// Radial basis d^2 ln d^2 as a function of the squared distance, with the
/// analytic limit 0 at d = 0.
inline double tps_radial(double d2) { return d2 > 0.0 ? d2 * std::log(d2) : 0.0; }

inline double dist2(double ax, double ay, double bx, double by) {
  double dx = ax - bx, dy = ay - by;
  return dx * dx + dy * dy;
}

/// K/2 points evenly spaced along the top edge (y=-1) followed by K/2
/// along the bottom edge (y=+1).
inline FiducialSet build_base_fiducials(int k) {
  if (k < 4 || k % 2 != 0)
    throw std::invalid_argument("base fiducials: K must be even and >= 4, got " +
                                std::to_string(k));
  FiducialSet f;
  f.k = k;
  f.coords.reserve(static_cast<size_t>(2 * k));
  int half = k / 2;
  for (int row = 0; row < 2; ++row) {
    double y = row == 0 ? -1.0 : 1.0;
    for (int i = 0; i < half; ++i) {
      double x = -1.0 + 2.0 * i / (half - 1);
      f.coords.push_back(x);
      f.coords.push_back(y);
    }
  }
  return f;
}

/// Assembles the (K+3)x(K+3) system matrix for a base point set:
///   [ 1  C'^T  R ]
///   [ 0   0   1^T]
///   [ 0   0   C' ]
inline Mat build_delta_matrix(const FiducialSet& base) {
  int k = base.k;
  Mat delta(k + 3, k + 3);
  for (int i = 0; i < k; ++i) {
    delta(i, 0) = 1.0;
    delta(i, 1) = base.x(i);
    delta(i, 2) = base.y(i);
    for (int j = 0; j < k; ++j)
      delta(i, 3 + j) = tps_radial(dist2(base.x(i), base.y(i), base.x(j), base.y(j)));
  }
  for (int j = 0; j < k; ++j) {
    delta(k, 3 + j) = 1.0;
    delta(k + 1, 3 + j) = base.x(j);
    delta(k + 2, 3 + j) = base.y(j);
  }
  return delta;
}

inline DeltaInverse build_delta_inverse(const FiducialSet& base) {
  for (int i = 0; i < base.k; ++i)
    for (int j = i + 1; j < base.k; ++j)
      if (dist2(base.x(i), base.y(i), base.x(j), base.y(j)) < 1e-24)
        throw std::invalid_argument("delta matrix: base fiducials " + std::to_string(i) + " and " +
                                    std::to_string(j) + " coincide");
  Mat delta = build_delta_matrix(base);
  DeltaInverse out;
  out.k = base.k;
  out.inv = invert(delta);
  out.condition = inf_norm(delta) * inf_norm(out.inv);
  if (out.condition > 1e12)
    std::cerr << "warning: TPS base system condition number " << out.condition << "\n";
  return out;
}

/// Lifted point [1, x, y, r_1, ..., r_K] (Eq. 2-3 form).
inline std::vector<double> lift_point(double x, double y, const FiducialSet& base) {
  std::vector<double> lifted(static_cast<size_t>(base.k + 3));
  lifted[0] = 1.0;
  lifted[1] = x;
  lifted[2] = y;
  for (int j = 0; j < base.k; ++j)
    lifted[static_cast<size_t>(3 + j)] = tps_radial(dist2(x, y, base.x(j), base.y(j)));
  return lifted;
}

/// T = (Delta^-1 [C^T; 0_{3x2}])^T; maps lifted rectified-frame points onto
/// the input image. Linear in C, so the solve is differentiable.
inline TpsParams solve_tps(const FiducialSet& c, const DeltaInverse& delta_inv) {
  if (c.k != delta_inv.k)
    throw std::invalid_argument("solve_tps: K mismatch (" + std::to_string(c.k) + " vs base " +
                                std::to_string(delta_inv.k) + ")");
  int k = c.k;
  Mat rhs(k + 3, 2);
  for (int i = 0; i < k; ++i) {
    rhs(i, 0) = c.x(i);
    rhs(i, 1) = c.y(i);
  }
  Mat m = matmul(delta_inv.inv, rhs);  // (K+3) x 2
  TpsParams p;
  p.k = k;
  p.t = Mat(2, k + 3);
  for (int i = 0; i < k + 3; ++i) {
    p.t(0, i) = m(i, 0);
    p.t(1, i) = m(i, 1);
  }
  return p;
}

inline std::pair<double, double> apply_tps(const TpsParams& p, double x, double y,
                                           const FiducialSet& base) {
  std::vector<double> lifted = lift_point(x, y, base);
  double ox = 0.0, oy = 0.0;
  for (int i = 0; i < p.k + 3; ++i) {
    ox += p.t(0, i) * lifted[static_cast<size_t>(i)];
    oy += p.t(1, i) * lifted[static_cast<size_t>(i)];
  }
  return {ox, oy};
}

/// Normalized coordinates of output pixel centers, row-major.
inline std::pair<double, double> output_pixel_coord(int row, int col, int out_h, int out_w) {
  return {-1.0 + 2.0 * (col + 0.5) / out_w, -1.0 + 2.0 * (row + 0.5) / out_h};
}

inline SampleGrid generate_grid(const TpsParams& p, int out_h, int out_w,
                                const FiducialSet& base) {
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("generate_grid: empty output");
  SampleGrid grid;
  grid.out_h = out_h;
  grid.out_w = out_w;
  grid.points.reserve(static_cast<size_t>(out_h) * out_w * 2);
  for (int r = 0; r < out_h; ++r)
    for (int c = 0; c < out_w; ++c) {
      auto [x, y] = output_pixel_coord(r, c, out_h, out_w);
      auto [ox, oy] = apply_tps(p, x, y, base);
      grid.points.push_back(ox);
      grid.points.push_back(oy);
    }
  return grid;
}

template <typename S>
Tensor<S> sample_bilinear(const Tensor<S>& img, const SampleGrid& grid) {
  if (img.rank() != 2) throw std::invalid_argument("sample_bilinear: image must be 2-d");
  std::vector<S> pts(grid.points.size());
  for (size_t i = 0; i < pts.size(); ++i) pts[i] = static_cast<S>(grid.points[i]);
  Tensor<S> out = Tensor<S>::zeros({grid.out_h, grid.out_w});
  kernels::bilinear_sample(img.values.data(), img.shape[0], img.shape[1], pts.data(),
                           grid.size(), out.values.data());
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable chain: fiducials tensor (K,2) -> sampling grid -> rectified
// image, recorded on a Graph. The constant system matrices come from the
// closed-form code above.

/// Lifted coordinates of every output pixel as an N x (K+3) matrix; constant
/// for fixed output dims and base points.
template <typename S>
Tensor<S> lift_matrix(const FiducialSet& base, int out_h, int out_w) {
  Tensor<S> m = Tensor<S>::zeros({out_h * out_w, base.k + 3});
  int idx = 0;
  for (int r = 0; r < out_h; ++r)
    for (int c = 0; c < out_w; ++c) {
      auto [x, y] = output_pixel_coord(r, c, out_h, out_w);
      std::vector<double> lifted = lift_point(x, y, base);
      for (int j = 0; j < base.k + 3; ++j)
        m.values[static_cast<size_t>(idx) * (base.k + 3) + j] = static_cast<S>(lifted[static_cast<size_t>(j)]);
      ++idx;
    }
  return m;
}

template <typename S>
Tensor<S> delta_inverse_tensor(const DeltaInverse& d) {
  Tensor<S> m = Tensor<S>::zeros({d.k + 3, d.k + 3});
  for (int i = 0; i < d.k + 3; ++i)
    for (int j = 0; j < d.k + 3; ++j) m.values[static_cast<size_t>(i) * (d.k + 3) + j] = static_cast<S>(d.inv(i, j));
  return m;
}

/// Precomputed constants of the rectification chain for one output size.
template <typename S>
struct TpsChain {
  FiducialSet base;
  int out_h = 0, out_w = 0;
  Tensor<S> delta_inv;  // (K+3) x (K+3)
  Tensor<S> lift;       // N x (K+3)

  TpsChain() = default;
  TpsChain(int k, int h, int w)
      : base(build_base_fiducials(k)),
        out_h(h),
        out_w(w),
        delta_inv(delta_inverse_tensor<S>(build_delta_inverse(base))),
        lift(lift_matrix<S>(base, h, w)) {}

  /// fiducials: (K, 2) rows (x_k, y_k). Returns the grid (N, 2).
  Value grid(Graph<S>& g, Value fiducials) const {
    Value di = g.constant(delta_inv);
    Value zeros = g.constant(Tensor<S>::zeros({3, 2}));
    Value rhs = g.concat({fiducials, zeros}, 0);     // (K+3) x 2
    Value m = g.matmul(di, rhs);                     // (K+3) x 2
    return g.matmul(g.constant(lift), m);            // N x 2
  }

  /// Full rectification: image (H, W) -> rectified (out_h, out_w).
  Value rectify(Graph<S>& g, Value image, Value fiducials) const {
    Value sampled = g.bilinear_sample(image, grid(g, fiducials));
    return g.reshape(sampled, {out_h, out_w});
  }
};

}  // namespace rare
