#include <gtest/gtest.h>

#include <cmath>

#include "rare/gradcheck.hpp"
#include "rare/tps.hpp"
#include "test_util.hpp"

using namespace rare;
using rare::testing::random_tensor;

using D = Tensor<double>;

TEST(BaseFiducials, CornersAtK4) {
  FiducialSet f = build_base_fiducials(4);
  std::vector<double> expect = {-1, -1, 1, -1, -1, 1, 1, 1};
  EXPECT_EQ(f.coords, expect);
}

TEST(BaseFiducials, EvenSpacingK6) {
  FiducialSet f = build_base_fiducials(6);
  EXPECT_DOUBLE_EQ(f.x(0), -1.0);
  EXPECT_DOUBLE_EQ(f.x(1), 0.0);
  EXPECT_DOUBLE_EQ(f.x(2), 1.0);
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(f.y(i), -1.0);
  for (int i = 3; i < 6; ++i) EXPECT_DOUBLE_EQ(f.y(i), 1.0);
}

TEST(BaseFiducials, K20SpacingAndCount) {
  FiducialSet f = build_base_fiducials(20);
  EXPECT_EQ(f.k, 20);
  for (int i = 0; i + 1 < 10; ++i) EXPECT_NEAR(f.x(i + 1) - f.x(i), 2.0 / 9.0, 1e-12);
  for (int i = 0; i < 10; ++i) EXPECT_DOUBLE_EQ(f.y(i), -1.0);
  for (int i = 10; i < 20; ++i) EXPECT_DOUBLE_EQ(f.y(i), 1.0);
}

TEST(BaseFiducials, RejectsOddOrSmall) {
  EXPECT_THROW(build_base_fiducials(3), std::invalid_argument);
  EXPECT_THROW(build_base_fiducials(2), std::invalid_argument);
}

TEST(Delta, InverseTimesDeltaIsIdentity) {
  for (int k : {4, 6, 20}) {
    FiducialSet base = build_base_fiducials(k);
    Mat delta = build_delta_matrix(base);
    DeltaInverse di = build_delta_inverse(base);
    Mat prod = matmul(di.inv, delta);
    for (int i = 0; i < k + 3; ++i)
      for (int j = 0; j < k + 3; ++j) EXPECT_NEAR(prod(i, j), i == j ? 1.0 : 0.0, 1e-9);
  }
}

TEST(Delta, RadialBlockSymmetric) {
  FiducialSet base = build_base_fiducials(4);
  Mat delta = build_delta_matrix(base);
  EXPECT_DOUBLE_EQ(delta(0, 3 + 1), delta(1, 3 + 0));
}

TEST(Delta, TopEdgeRadialValue) {
  // corners: d = 2 along the top edge, r = d^2 ln d^2 = 4 ln 4
  FiducialSet base = build_base_fiducials(4);
  Mat delta = build_delta_matrix(base);
  EXPECT_NEAR(delta(0, 3 + 1), 4.0 * std::log(4.0), 1e-12);
}

TEST(Delta, CoincidentPointsNamed) {
  FiducialSet bad;
  bad.k = 4;
  bad.coords = {-1, -1, -1, -1, -1, 1, 1, 1};
  try {
    build_delta_inverse(bad);
    FAIL() << "expected singularity failure";
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("0"), std::string::npos);
    EXPECT_NE(msg.find("1"), std::string::npos);
  }
}

TEST(Delta, PureFunctionOfBase) {
  DeltaInverse a = build_delta_inverse(build_base_fiducials(8));
  DeltaInverse b = build_delta_inverse(build_base_fiducials(8));
  EXPECT_EQ(a.inv.a, b.inv.a);
}

TEST(Lift, ConventionAndLength) {
  FiducialSet base = build_base_fiducials(4);
  // coincides with base point 0
  std::vector<double> l0 = lift_point(-1.0, -1.0, base);
  EXPECT_EQ(l0.size(), 7u);
  EXPECT_DOUBLE_EQ(l0[3], 0.0);
  // center: all four corners at distance sqrt(2), r = 2 ln 2
  std::vector<double> lc = lift_point(0.0, 0.0, base);
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(lc[static_cast<size_t>(3 + j)], 2.0 * std::log(2.0), 1e-12);
  EXPECT_DOUBLE_EQ(lc[0], 1.0);
  EXPECT_DOUBLE_EQ(lc[1], 0.0);
  EXPECT_DOUBLE_EQ(lc[2], 0.0);
}

namespace {

FiducialSet jittered(const FiducialSet& base, Rng& rng, double amount) {
  FiducialSet c = base;
  for (double& v : c.coords) v += rng.uniform(-amount, amount);
  return c;
}

}  // namespace

TEST(SolveTps, IdentityWhenCEqualsBase) {
  FiducialSet base = build_base_fiducials(8);
  DeltaInverse di = build_delta_inverse(base);
  TpsParams t = solve_tps(base, di);
  Rng rng(31);
  for (int i = 0; i < 100; ++i) {
    double x = rng.uniform(-1, 1), y = rng.uniform(-1, 1);
    auto [ox, oy] = apply_tps(t, x, y, base);
    EXPECT_NEAR(ox, x, 1e-9);
    EXPECT_NEAR(oy, y, 1e-9);
  }
}

TEST(SolveTps, PureTranslation) {
  FiducialSet base = build_base_fiducials(6);
  DeltaInverse di = build_delta_inverse(base);
  FiducialSet c = base;
  for (int i = 0; i < c.k; ++i) c.coords[static_cast<size_t>(2 * i)] += 0.1;
  TpsParams t = solve_tps(c, di);
  Rng rng(32);
  for (int i = 0; i < 100; ++i) {
    double x = rng.uniform(-1, 1), y = rng.uniform(-1, 1);
    auto [ox, oy] = apply_tps(t, x, y, base);
    EXPECT_NEAR(ox, x + 0.1, 1e-9);
    EXPECT_NEAR(oy, y, 1e-9);
  }
}

TEST(SolveTps, AffineReproduction) {
  // C = affine image of the base points: scale 0.5 then rotate 30 degrees
  FiducialSet base = build_base_fiducials(10);
  DeltaInverse di = build_delta_inverse(base);
  double ca = std::cos(M_PI / 6.0), sa = std::sin(M_PI / 6.0);
  auto affine = [&](double x, double y) {
    return std::pair<double, double>{0.5 * (ca * x - sa * y), 0.5 * (sa * x + ca * y)};
  };
  FiducialSet c = base;
  for (int i = 0; i < c.k; ++i) {
    auto [ax, ay] = affine(base.x(i), base.y(i));
    c.coords[static_cast<size_t>(2 * i)] = ax;
    c.coords[static_cast<size_t>(2 * i + 1)] = ay;
  }
  TpsParams t = solve_tps(c, di);
  Rng rng(33);
  for (int i = 0; i < 100; ++i) {
    double x = rng.uniform(-1, 1), y = rng.uniform(-1, 1);
    auto [ox, oy] = apply_tps(t, x, y, base);
    auto [ex, ey] = affine(x, y);
    EXPECT_NEAR(ox, ex, 1e-9);
    EXPECT_NEAR(oy, ey, 1e-9);
  }
}

TEST(SolveTps, KMismatchFails) {
  DeltaInverse di = build_delta_inverse(build_base_fiducials(8));
  EXPECT_THROW(solve_tps(build_base_fiducials(6), di), std::invalid_argument);
}

TEST(SolveTps, InterpolationExactness) {
  FiducialSet base = build_base_fiducials(20);
  DeltaInverse di = build_delta_inverse(base);
  Rng rng(34);
  for (int trial = 0; trial < 100; ++trial) {
    FiducialSet c = jittered(base, rng, 0.3);
    for (double& v : c.coords) v = std::clamp(v, -1.0, 1.0);
    TpsParams t = solve_tps(c, di);
    for (int k = 0; k < base.k; ++k) {
      auto [ox, oy] = apply_tps(t, base.x(k), base.y(k), base);
      EXPECT_NEAR(ox, c.x(k), 1e-9);
      EXPECT_NEAR(oy, c.y(k), 1e-9);
    }
  }
}

TEST(Grid, IdentityPixelCenters) {
  FiducialSet base = build_base_fiducials(4);
  DeltaInverse di = build_delta_inverse(base);
  TpsParams t = solve_tps(base, di);
  SampleGrid grid = generate_grid(t, 2, 2, base);
  std::vector<double> expect = {-0.5, -0.5, 0.5, -0.5, -0.5, 0.5, 0.5, 0.5};
  ASSERT_EQ(grid.points.size(), expect.size());
  for (size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(grid.points[i], expect[i], 1e-12);
}

TEST(Grid, TranslationShiftsX) {
  FiducialSet base = build_base_fiducials(6);
  DeltaInverse di = build_delta_inverse(base);
  FiducialSet c = base;
  for (int i = 0; i < c.k; ++i) c.coords[static_cast<size_t>(2 * i)] += 0.1;
  SampleGrid ident = generate_grid(solve_tps(base, di), 3, 5, base);
  SampleGrid moved = generate_grid(solve_tps(c, di), 3, 5, base);
  ASSERT_EQ(moved.size(), 15);
  for (int i = 0; i < moved.size(); ++i) {
    EXPECT_NEAR(moved.points[static_cast<size_t>(2 * i)],
                ident.points[static_cast<size_t>(2 * i)] + 0.1, 1e-9);
    EXPECT_NEAR(moved.points[static_cast<size_t>(2 * i + 1)],
                ident.points[static_cast<size_t>(2 * i + 1)], 1e-9);
  }
}

TEST(Sampler, CenterOfTwoByTwo) {
  D img({2, 2}, {0, 1, 2, 3});
  SampleGrid grid;
  grid.out_h = 1;
  grid.out_w = 1;
  grid.points = {0.0, 0.0};
  Tensor<double> out = sample_bilinear(img, grid);
  EXPECT_DOUBLE_EQ(out.values[0], 1.5);
}

TEST(Sampler, ExactPixelNode) {
  D img({2, 2}, {0, 1, 2, 3});
  SampleGrid grid;
  grid.out_h = 1;
  grid.out_w = 1;
  grid.points = {-0.5, -0.5};  // center of pixel (0,0)
  EXPECT_DOUBLE_EQ(sample_bilinear(img, grid).values[0], 0.0);
  grid.points = {0.5, 0.5};  // center of pixel (1,1)
  EXPECT_DOUBLE_EQ(sample_bilinear(img, grid).values[0], 3.0);
}

TEST(Sampler, FarOutsideIsZero) {
  D img({2, 2}, {5, 5, 5, 5});
  SampleGrid grid;
  grid.out_h = 1;
  grid.out_w = 1;
  grid.points = {3.0, 0.0};
  EXPECT_DOUBLE_EQ(sample_bilinear(img, grid).values[0], 0.0);
}

TEST(Chain, IdentityReproducesImage) {
  Rng rng(35);
  Tensor<double> img = random_tensor<double>(rng, {6, 9}, 0.0, 1.0);
  FiducialSet base = build_base_fiducials(8);
  DeltaInverse di = build_delta_inverse(base);
  SampleGrid grid = generate_grid(solve_tps(base, di), 6, 9, base);
  Tensor<double> out = sample_bilinear(img, grid);
  for (int i = 0; i < img.size(); ++i) EXPECT_NEAR(out[i], img[i], 1e-12);
}

TEST(Chain, GraphMatchesClosedForm) {
  Rng rng(36);
  FiducialSet base = build_base_fiducials(8);
  DeltaInverse di = build_delta_inverse(base);
  FiducialSet c = jittered(base, rng, 0.2);
  Tensor<double> img = random_tensor<double>(rng, {8, 8}, 0.0, 1.0);

  SampleGrid grid = generate_grid(solve_tps(c, di), 8, 8, base);
  Tensor<double> direct = sample_bilinear(img, grid);

  TpsChain<double> chain(8, 8, 8);
  Graph<double> g;
  D cm = D::zeros({8, 2});
  for (int i = 0; i < 8; ++i) {
    cm.at(i, 0) = c.x(i);
    cm.at(i, 1) = c.y(i);
  }
  Value rect = chain.rectify(g, g.input("img", img), g.input("c", cm));
  const auto& got = g.val(rect);
  ASSERT_EQ(got.shape, (Shape{8, 8}));
  for (int i = 0; i < direct.size(); ++i) EXPECT_NEAR(got[i], direct[i], 1e-12);
}

TEST(Chain, GradientThroughSolveGridSample) {
  Rng rng(37);
  for (auto [h, w] : {std::pair{8, 8}, std::pair{16, 48}}) {
    TpsChain<double> chain(8, h, w);
    Graph<double> g;
    D cm = D::zeros({8, 2});
    // a global shift keeps grid points off the pixel lattice, where the
    // interpolant kinks and central differences are unreliable
    for (int i = 0; i < 8; ++i) {
      cm.at(i, 0) = chain.base.x(i) + 0.0371 + rng.uniform(-0.15, 0.15);
      cm.at(i, 1) = chain.base.y(i) + 0.0137 + rng.uniform(-0.15, 0.15);
    }
    Value img = g.input("img", random_tensor<double>(rng, {h, w}, 0.0, 1.0));
    Value c = g.param("c", cm);
    Value rect = chain.rectify(g, img, c);
    Value loss = g.sum(g.mul(g.reshape(rect, {h * w}),
                             g.constant(random_tensor<double>(rng, {h * w}))));
    EXPECT_LT(finite_difference_check(g, c, loss, 1e-5), 1e-4) << h << "x" << w;
  }
}
