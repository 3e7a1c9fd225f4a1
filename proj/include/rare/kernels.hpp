#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace rare {
namespace kernels {

// C (m x n) += A (m x k) * B (k x n). ikj loops with restrict-qualified
// rows; the j loop vectorizes and desk-scale operands stay in cache.
// Matrix-vector (n == 1) takes a dot-product path.
template <typename S>
void gemm_acc(const S* __restrict__ a, const S* __restrict__ b, S* __restrict__ c, int m, int k,
              int n) {
  if (n == 1) {
    for (int i = 0; i < m; ++i) {
      const S* __restrict__ arow = a + static_cast<size_t>(i) * k;
      S acc = S(0);
#pragma omp simd reduction(+ : acc)
      for (int p = 0; p < k; ++p) acc += arow[p] * b[p];
      c[i] += acc;
    }
    return;
  }
  for (int i = 0; i < m; ++i) {
    const S* __restrict__ arow = a + static_cast<size_t>(i) * k;
    S* __restrict__ crow = c + static_cast<size_t>(i) * n;
    int p = 0;
    for (; p + 4 <= k; p += 4) {
      S v0 = arow[p], v1 = arow[p + 1], v2 = arow[p + 2], v3 = arow[p + 3];
      const S* __restrict__ b0 = b + static_cast<size_t>(p) * n;
      const S* __restrict__ b1 = b0 + n;
      const S* __restrict__ b2 = b1 + n;
      const S* __restrict__ b3 = b2 + n;
      for (int j = 0; j < n; ++j) crow[j] += v0 * b0[j] + v1 * b1[j] + v2 * b2[j] + v3 * b3[j];
    }
    for (; p < k; ++p) {
      S v = arow[p];
      const S* __restrict__ brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += v * brow[j];
    }
  }
}

// C (m x n) += A (m x k) * B^T (n x k). k == 1 degenerates to an outer
// product (the matrix-vector backward).
template <typename S>
void gemm_bt_acc(const S* __restrict__ a, const S* __restrict__ b, S* __restrict__ c, int m,
                 int k, int n) {
  if (k == 1) {
    for (int i = 0; i < m; ++i) {
      S v = a[i];
      S* __restrict__ crow = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += v * b[j];
    }
    return;
  }
  for (int i = 0; i < m; ++i) {
    const S* __restrict__ arow = a + static_cast<size_t>(i) * k;
    S* __restrict__ crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const S* __restrict__ brow = b + static_cast<size_t>(j) * k;
      S acc = S(0);
#pragma omp simd reduction(+ : acc)
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C (m x n) += A^T (k x m) * B (k x n)
template <typename S>
void gemm_at_acc(const S* __restrict__ a, const S* __restrict__ b, S* __restrict__ c, int m,
                 int k, int n) {
  if (n == 1) {
    for (int p = 0; p < k; ++p) {
      const S* __restrict__ arow = a + static_cast<size_t>(p) * m;
      S v = b[p];
      for (int i = 0; i < m; ++i) c[i] += arow[i] * v;
    }
    return;
  }
  for (int p = 0; p < k; ++p) {
    const S* __restrict__ arow = a + static_cast<size_t>(p) * m;
    const S* __restrict__ brow = b + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      S v = arow[i];
      S* __restrict__ crow = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += v * brow[j];
    }
  }
}

// Unfolds x (cin x h x w) into columns (cin*kh*kw) x (ho*wo).
template <typename S>
void im2col(const S* x, int cin, int h, int w, int kh, int kw, int stride, int pad_h, int pad_w,
            int ho, int wo, S* col) {
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        S* dst = col + (static_cast<size_t>(c) * kh * kw + static_cast<size_t>(ky) * kw + kx) *
                           (static_cast<size_t>(ho) * wo);
        for (int oy = 0; oy < ho; ++oy) {
          int iy = oy * stride - pad_h + ky;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, S(0));
            dst += wo;
            continue;
          }
          const S* src = x + (static_cast<size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            int ix = ox * stride - pad_w + kx;
            *dst++ = (ix >= 0 && ix < w) ? src[ix] : S(0);
          }
        }
      }
    }
  }
}

// Scatter-adds columns back into dx (inverse of im2col).
template <typename S>
void col2im_acc(const S* col, int cin, int h, int w, int kh, int kw, int stride, int pad_h,
                int pad_w, int ho, int wo, S* dx) {
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const S* src = col + (static_cast<size_t>(c) * kh * kw + static_cast<size_t>(ky) * kw + kx) *
                                 (static_cast<size_t>(ho) * wo);
        for (int oy = 0; oy < ho; ++oy, src += wo) {
          int iy = oy * stride - pad_h + ky;
          if (iy < 0 || iy >= h) continue;
          S* dst = dx + (static_cast<size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            int ix = ox * stride - pad_w + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// 2x2 max pool, stride 2, floor semantics. argmax stores the flat input
// index chosen per output cell (first maximum in scan order).
template <typename S>
void maxpool2x2(const S* x, int c, int h, int w, S* y, int* argmax) {
  int ho = h / 2, wo = w / 2;
  for (int ch = 0; ch < c; ++ch) {
    const S* xc = x + static_cast<size_t>(ch) * h * w;
    S* yc = y + static_cast<size_t>(ch) * ho * wo;
    int* am = argmax + static_cast<size_t>(ch) * ho * wo;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        int base = (oy * 2) * w + ox * 2;
        int best = base;
        S bv = xc[base];
        const int cand[3] = {base + 1, base + w, base + w + 1};
        for (int t = 0; t < 3; ++t) {
          if (xc[cand[t]] > bv) {
            bv = xc[cand[t]];
            best = cand[t];
          }
        }
        yc[oy * wo + ox] = bv;
        am[oy * wo + ox] = ch * h * w + best;
      }
    }
  }
}

// Maps one normalized coordinate in [-1,1] to a pixel coordinate under the
// pixel-center convention: centers sit at (i + 0.5) / extent.
template <typename S>
inline S norm_to_pixel(S v, int extent) {
  return (v + S(1)) * S(0.5) * static_cast<S>(extent) - S(0.5);
}

// Bilinear sampling of a single-channel image at N normalized grid points.
// Out-of-bounds pixels read as zero.
template <typename S>
void bilinear_sample(const S* img, int h, int w, const S* grid, int n, S* out) {
  auto pix = [&](int y, int x) -> S {
    return (y >= 0 && y < h && x >= 0 && x < w) ? img[static_cast<size_t>(y) * w + x] : S(0);
  };
  for (int i = 0; i < n; ++i) {
    S px = norm_to_pixel(grid[2 * i], w);
    S py = norm_to_pixel(grid[2 * i + 1], h);
    int x0 = static_cast<int>(std::floor(px));
    int y0 = static_cast<int>(std::floor(py));
    S wx = px - static_cast<S>(x0);
    S wy = py - static_cast<S>(y0);
    S v00 = pix(y0, x0), v01 = pix(y0, x0 + 1);
    S v10 = pix(y0 + 1, x0), v11 = pix(y0 + 1, x0 + 1);
    out[i] = (S(1) - wy) * ((S(1) - wx) * v00 + wx * v01) + wy * ((S(1) - wx) * v10 + wx * v11);
  }
}

// Backward of bilinear_sample w.r.t. image and grid coordinates. At exact
// pixel-grid coordinates the interpolant kinks; the coordinate gradient
// then takes the one-sided sub-gradient from the lower cell.
template <typename S>
void bilinear_sample_backward(const S* img, int h, int w, const S* grid, int n, const S* gout,
                              S* dimg, S* dgrid) {
  auto pix = [&](int y, int x) -> S {
    return (y >= 0 && y < h && x >= 0 && x < w) ? img[static_cast<size_t>(y) * w + x] : S(0);
  };
  auto add_pix = [&](int y, int x, S v) {
    if (dimg && y >= 0 && y < h && x >= 0 && x < w) dimg[static_cast<size_t>(y) * w + x] += v;
  };
  for (int i = 0; i < n; ++i) {
    S g = gout[i];
    S px = norm_to_pixel(grid[2 * i], w);
    S py = norm_to_pixel(grid[2 * i + 1], h);
    int x0 = static_cast<int>(std::floor(px));
    int y0 = static_cast<int>(std::floor(py));
    S wx = px - static_cast<S>(x0);
    S wy = py - static_cast<S>(y0);
    if (dimg) {
      add_pix(y0, x0, g * (S(1) - wy) * (S(1) - wx));
      add_pix(y0, x0 + 1, g * (S(1) - wy) * wx);
      add_pix(y0 + 1, x0, g * wy * (S(1) - wx));
      add_pix(y0 + 1, x0 + 1, g * wy * wx);
    }
    if (dgrid) {
      // cell used for the coordinate slope; shift down one cell on an
      // exact lattice hit
      int cx0 = x0, cy0 = y0;
      S cwx = wx, cwy = wy;
      if (wx == S(0)) {
        cx0 = x0 - 1;
        cwx = S(1);
      }
      if (wy == S(0)) {
        cy0 = y0 - 1;
        cwy = S(1);
      }
      S c00 = pix(cy0, cx0), c01 = pix(cy0, cx0 + 1);
      S c10 = pix(cy0 + 1, cx0), c11 = pix(cy0 + 1, cx0 + 1);
      S dpx = (S(1) - cwy) * (c01 - c00) + cwy * (c11 - c10);
      S dpy = (S(1) - cwx) * (c10 - c00) + cwx * (c11 - c01);
      dgrid[2 * i] += g * dpx * S(0.5) * static_cast<S>(w);
      dgrid[2 * i + 1] += g * dpy * S(0.5) * static_cast<S>(h);
    }
  }
}

}  // namespace kernels
}  // namespace rare
