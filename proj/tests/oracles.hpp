#pragma once

// Independent reference implementations used as test oracles. Everything
// here is deliberately naive and kept apart from the library code paths it
// checks.

#include <array>
#include <cmath>
#include <vector>

#include "bevmem/heatmap.hpp"
#include "bevmem/tensor.hpp"

namespace oracle {

using bevmem::GridSpec;
using bevmem::Point2;
using bevmem::Pose2;
using bevmem::real;
using bevmem::Tensor;

// --- SE(2) via homogeneous 3x3 matrices --------------------------------

using Mat3 = std::array<double, 9>;

inline Mat3 pose_matrix(const Pose2& p) {
  const double c = std::cos(p.yaw), s = std::sin(p.yaw);
  return {c, -s, p.x, s, c, p.y, 0, 0, 1};
}

inline Mat3 mat_mul(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return r;
}

inline Mat3 mat_inverse_rigid(const Mat3& m) {
  // transpose the rotation block, rotate-negate the translation
  Mat3 r{};
  r[0] = m[0];
  r[1] = m[3];
  r[3] = m[1];
  r[4] = m[4];
  r[2] = -(r[0] * m[2] + r[1] * m[5]);
  r[5] = -(r[3] * m[2] + r[4] * m[5]);
  r[8] = 1;
  return r;
}

inline Point2 mat_apply(const Mat3& m, const Point2& p) {
  return {m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5]};
}

inline Pose2 pose_from_matrix(const Mat3& m) {
  return {m[2], m[5], std::atan2(m[3], m[0])};
}

// --- dense reference kernels --------------------------------------------

// quintuple-loop convolution, same padding, stride 1
inline Tensor conv2d_naive(const Tensor& x, const Tensor& w, const Tensor& b, int dil_h,
                           int dil_w) {
  const int out_ch = w.shape[0], in_ch = w.shape[1], k = w.shape[2];
  const int H = x.h(), W = x.w();
  const int ph = dil_h * (k - 1) / 2, pw = dil_w * (k - 1) / 2;
  Tensor out({out_ch, H, W});
  for (int oc = 0; oc < out_ch; ++oc)
    for (int oy = 0; oy < H; ++oy)
      for (int ox = 0; ox < W; ++ox) {
        double acc = static_cast<double>(b.v[static_cast<std::size_t>(oc)]);
        for (int ic = 0; ic < in_ch; ++ic)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy + ky * dil_h - ph;
              const int ix = ox + kx * dil_w - pw;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              acc += static_cast<double>(
                         w.v[((static_cast<std::size_t>(oc) * in_ch + ic) * k + ky) * k + kx]) *
                     static_cast<double>(x.at(ic, iy, ix));
            }
        out.at(oc, oy, ox) = static_cast<real>(acc);
      }
  return out;
}

// integer-cell shift with zero fill: content moves by (di, dj) in the
// destination grid (dest(i,j) = src(i - di, j - dj))
inline Tensor shift_fill_zero(const Tensor& x, int di, int dj) {
  Tensor out(x.shape);
  for (int c = 0; c < x.c(); ++c)
    for (int i = 0; i < x.h(); ++i)
      for (int j = 0; j < x.w(); ++j) {
        const int si = i - di, sj = j - dj;
        if (si < 0 || si >= x.h() || sj < 0 || sj >= x.w()) continue;
        out.at(c, i, j) = x.at(c, si, sj);
      }
  return out;
}

// nearest-neighbor warp used by the rasterization consistency check
inline std::vector<std::uint8_t> warp_nearest_labels(const std::vector<std::uint8_t>& labels,
                                                     const GridSpec& spec, const Pose2& rel) {
  const bevmem::FlowField flow = bevmem::backward_flow(spec, rel);
  std::vector<std::uint8_t> out(labels.size(), 0);
  for (int cell = 0; cell < spec.h_cells * spec.w_cells; ++cell) {
    const int si = static_cast<int>(std::lround(flow.src_i[static_cast<std::size_t>(cell)]));
    const int sj = static_cast<int>(std::lround(flow.src_j[static_cast<std::size_t>(cell)]));
    if (si < 0 || si >= spec.h_cells || sj < 0 || sj >= spec.w_cells) continue;
    out[static_cast<std::size_t>(cell)] =
        labels[static_cast<std::size_t>(si) * spec.w_cells + sj];
  }
  return out;
}

// --- heatmap counting oracle --------------------------------------------
// value(x, t) = 1 + value(map(x, t -> t-1), t-1) when the mapped point is
// in bounds, else 1. The point travels back through the exact geometric
// chain (no snapping); the count is the number of consecutive past frames
// whose field of view contains the cell's world point, evaluated at cell
// centers with the nearest-cell in-bounds convention of the grid.
inline std::vector<double> heatmap_oracle(const GridSpec& spec,
                                          const std::vector<Pose2>& trajectory) {
  const int H = spec.h_cells, W = spec.w_cells;
  const int T = static_cast<int>(trajectory.size());
  std::vector<Mat3> back;  // back[t]: frame-t coords -> frame-(t-1) coords
  back.reserve(static_cast<std::size_t>(T));
  back.push_back(pose_matrix(Pose2{}));
  for (int t = 1; t < T; ++t)
    back.push_back(mat_inverse_rigid(
        pose_matrix(bevmem::relative_transform(trajectory[static_cast<std::size_t>(t) - 1],
                                               trajectory[static_cast<std::size_t>(t)]))));

  // tolerance so points sitting exactly on the boundary survive the float
  // noise of the chain (the bilinear warp keeps them at weight ~1 as well)
  constexpr double kEdge = 1e-9;
  std::vector<double> out(static_cast<std::size_t>(H) * W, 1.0);
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      Point2 p = spec.grid_to_ego(i, j);
      double v = 1.0;
      for (int t = T - 1; t >= 1; --t) {
        p = mat_apply(back[static_cast<std::size_t>(t)], p);
        const Point2 ij = spec.ego_to_grid_ij(p);
        if (ij.x < -kEdge || ij.x > H - 1 + kEdge || ij.y < -kEdge || ij.y > W - 1 + kEdge)
          break;
        v += 1.0;
      }
      out[static_cast<std::size_t>(i) * W + j] = v;
    }
  return out;
}

// confusion-count IoU oracle
struct IouOracle {
  std::int64_t tp[4] = {0, 0, 0, 0}, fp[4] = {0, 0, 0, 0}, fn[4] = {0, 0, 0, 0};

  void add(int gt, int pred) {
    if (gt == pred) {
      ++tp[gt];
    } else {
      ++fn[gt];
      ++fp[pred];
    }
  }
  double iou(int cls) const {
    const std::int64_t denom = tp[cls] + fp[cls] + fn[cls];
    return denom ? static_cast<double>(tp[cls]) / static_cast<double>(denom) : -1.0;
  }
};

}  // namespace oracle
