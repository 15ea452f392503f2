#include "bevmem/kernels.hpp"

#include <algorithm>
#include <cstring>

BEVMEM_NS_BEGIN

namespace {

void check_conv_shapes(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 3) throw ShapeError("conv2d: input must be C x H x W, got " + shape_str(x.shape));
  if (w.rank() != 4 || w.shape[2] != w.shape[3])
    throw ShapeError("conv2d: weights must be out x in x k x k, got " + shape_str(w.shape));
  if (w.shape[1] != x.c())
    throw ShapeError("conv2d: input has " + std::to_string(x.c()) + " channels, weights expect " +
                     std::to_string(w.shape[1]));
  if (w.shape[2] % 2 != 1) throw ShapeError("conv2d: kernel size must be odd");
  if (b.rank() != 1 || b.shape[0] != w.shape[0])
    throw ShapeError("conv2d: bias must be {out_channels}");
}

}  // namespace

Tensor pad_input(const Tensor& x, int ph, int pw) {
  const int C = x.c(), H = x.h(), W = x.w();
  const int Hp = H + 2 * ph, Wp = W + 2 * pw;
  Tensor xp({C, Hp, Wp});
  for (int c = 0; c < C; ++c) {
    const real* src = x.v.data() + static_cast<std::size_t>(c) * H * W;
    real* dst = xp.v.data() + static_cast<std::size_t>(c) * Hp * Wp;
    for (int y = 0; y < H; ++y)
      std::memcpy(dst + static_cast<std::size_t>(y + ph) * Wp + pw,
                  src + static_cast<std::size_t>(y) * W, sizeof(real) * W);
  }
  return xp;
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int dil_h, int dil_w,
                      Tensor* padded_out) {
  check_conv_shapes(x, w, b);
  const int out_ch = w.shape[0], in_ch = w.shape[1], k = w.shape[2];
  const int H = x.h(), W = x.w();
  const int ph = dil_h * (k - 1) / 2, pw = dil_w * (k - 1) / 2;
  const int Hp = H + 2 * ph, Wp = W + 2 * pw;

  Tensor xp = pad_input(x, ph, pw);

  // weights repacked to (ic, ky, kx) x oc so a quad of output channels is
  // contiguous in the inner loop
  std::vector<real> wp(static_cast<std::size_t>(in_ch) * k * k * out_ch);
  for (int oc = 0; oc < out_ch; ++oc)
    for (int ic = 0; ic < in_ch; ++ic)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx)
          wp[((static_cast<std::size_t>(ic) * k + ky) * k + kx) * out_ch + oc] =
              w.v[((static_cast<std::size_t>(oc) * in_ch + ic) * k + ky) * k + kx];

  Tensor out({out_ch, H, W});
  constexpr int XB = 32;
  const int quads = (out_ch + 3) / 4;

  parallel_for(quads, [&](std::int64_t q0, std::int64_t q1) {
    for (std::int64_t q = q0; q < q1; ++q) {
      const int oc0 = static_cast<int>(q) * 4;
      const int nq = std::min(4, out_ch - oc0);
      real acc[4][XB];
      for (int oy = 0; oy < H; ++oy) {
        for (int xb = 0; xb < W; xb += XB) {
          const int len = std::min(XB, W - xb);
          for (int t = 0; t < nq; ++t)
            for (int j = 0; j < len; ++j) acc[t][j] = b.v[oc0 + t];
          const real* __restrict wrow = wp.data() + oc0;
          for (int ic = 0; ic < in_ch; ++ic) {
            const real* plane = xp.v.data() + static_cast<std::size_t>(ic) * Hp * Wp;
            for (int ky = 0; ky < k; ++ky) {
              const real* row = plane + static_cast<std::size_t>(oy + ky * dil_h) * Wp + xb;
              for (int kx = 0; kx < k; ++kx) {
                const real* __restrict src = row + kx * dil_w;
                const real* wq = wrow + ((static_cast<std::size_t>(ic) * k + ky) * k + kx) * out_ch;
                if (nq == 4) {
                  const real w0 = wq[0], w1 = wq[1], w2 = wq[2], w3 = wq[3];
                  for (int j = 0; j < len; ++j) {
                    const real s = src[j];
                    acc[0][j] += w0 * s;
                    acc[1][j] += w1 * s;
                    acc[2][j] += w2 * s;
                    acc[3][j] += w3 * s;
                  }
                } else {
                  for (int t = 0; t < nq; ++t) {
                    const real wt = wq[t];
                    for (int j = 0; j < len; ++j) acc[t][j] += wt * src[j];
                  }
                }
              }
            }
          }
          for (int t = 0; t < nq; ++t) {
            real* dst = out.v.data() + (static_cast<std::size_t>(oc0 + t) * H + oy) * W + xb;
            for (int j = 0; j < len; ++j) dst[j] = acc[t][j];
          }
        }
      }
    }
  });

  if (padded_out) *padded_out = std::move(xp);
  return out;
}

Tensor conv2d_backward_input(const Tensor& w, const Tensor& gout, int dil_h, int dil_w) {
  const int out_ch = w.shape[0], in_ch = w.shape[1], k = w.shape[2];
  // flipped, transposed kernel: wt[ic][oc][ky][kx] = w[oc][ic][k-1-ky][k-1-kx]
  Tensor wt({in_ch, out_ch, k, k});
  for (int oc = 0; oc < out_ch; ++oc)
    for (int ic = 0; ic < in_ch; ++ic)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx)
          wt.v[((static_cast<std::size_t>(ic) * out_ch + oc) * k + (k - 1 - ky)) * k +
               (k - 1 - kx)] = w.v[((static_cast<std::size_t>(oc) * in_ch + ic) * k + ky) * k + kx];
  const Tensor zero_bias({in_ch});
  return conv2d_forward(gout, wt, zero_bias, dil_h, dil_w, nullptr);
}

void conv2d_backward_params(const Tensor& padded_x, int in_ch, const Tensor& gout, int k,
                            int dil_h, int dil_w, Tensor& dw, Tensor& db) {
  const int out_ch = gout.c(), H = gout.h(), W = gout.w();
  const int Hp = padded_x.shape[1], Wp = padded_x.shape[2];
  (void)Hp;
  dw = Tensor({out_ch, in_ch, k, k});
  db = Tensor({out_ch});

  parallel_for(out_ch, [&](std::int64_t o0, std::int64_t o1) {
    for (std::int64_t oc = o0; oc < o1; ++oc) {
      const real* gplane = gout.v.data() + static_cast<std::size_t>(oc) * H * W;
      real bsum = real(0);
      for (int p = 0; p < H * W; ++p) bsum += gplane[p];
      db.v[static_cast<std::size_t>(oc)] = bsum;
      for (int ic = 0; ic < in_ch; ++ic) {
        const real* xplane = padded_x.v.data() + static_cast<std::size_t>(ic) * Hp * Wp;
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            real lanes[16] = {real(0)};
            real tail = real(0);
            for (int oy = 0; oy < H; ++oy) {
              const real* __restrict grow = gplane + static_cast<std::size_t>(oy) * W;
              const real* __restrict xrow =
                  xplane + static_cast<std::size_t>(oy + ky * dil_h) * Wp + kx * dil_w;
              int i = 0;
              for (; i + 16 <= W; i += 16)
                for (int l = 0; l < 16; ++l) lanes[l] += grow[i + l] * xrow[i + l];
              for (; i < W; ++i) tail += grow[i] * xrow[i];
            }
            real s = tail;
            for (int l = 0; l < 16; ++l) s += lanes[l];
            dw.v[((static_cast<std::size_t>(oc) * in_ch + ic) * k + ky) * k + kx] = s;
          }
        }
      }
    }
  });
}

namespace {

// Per-cell bilinear taps; invalid taps carry weight 0 and a safe index.
struct WarpTaps {
  std::vector<std::int32_t> idx;  // 4 per cell
  std::vector<real> wgt;          // 4 per cell
};

WarpTaps make_taps(const FlowField& flow) {
  const int h = flow.h, w = flow.w;
  WarpTaps t;
  t.idx.assign(static_cast<std::size_t>(h) * w * 4, 0);
  t.wgt.assign(static_cast<std::size_t>(h) * w * 4, real(0));
  for (int cell = 0; cell < h * w; ++cell) {
    const double si = flow.src_i[static_cast<std::size_t>(cell)];
    const double sj = flow.src_j[static_cast<std::size_t>(cell)];
    const double fi0 = std::floor(si), fj0 = std::floor(sj);
    const int i0 = static_cast<int>(fi0), j0 = static_cast<int>(fj0);
    const double fi = si - fi0, fj = sj - fj0;
    const double ww[4] = {(1.0 - fi) * (1.0 - fj), (1.0 - fi) * fj, fi * (1.0 - fj), fi * fj};
    const int ii[4] = {i0, i0, i0 + 1, i0 + 1};
    const int jj[4] = {j0, j0 + 1, j0, j0 + 1};
    for (int s = 0; s < 4; ++s) {
      const bool ok = ii[s] >= 0 && ii[s] < h && jj[s] >= 0 && jj[s] < w;
      t.idx[static_cast<std::size_t>(cell) * 4 + s] = ok ? ii[s] * w + jj[s] : 0;
      t.wgt[static_cast<std::size_t>(cell) * 4 + s] = ok ? static_cast<real>(ww[s]) : real(0);
    }
  }
  return t;
}

}  // namespace

Tensor warp_forward(const Tensor& x, const FlowField& flow) {
  if (x.rank() != 3 || x.h() != flow.h || x.w() != flow.w)
    throw ShapeError("warp: feature map " + shape_str(x.shape) + " does not match grid " +
                     std::to_string(flow.h) + "x" + std::to_string(flow.w));
  const WarpTaps taps = make_taps(flow);
  const int C = x.c(), HW = flow.h * flow.w;
  Tensor out({C, flow.h, flow.w});
  parallel_for(C, [&](std::int64_t c0, std::int64_t c1) {
    for (std::int64_t c = c0; c < c1; ++c) {
      const real* src = x.v.data() + static_cast<std::size_t>(c) * HW;
      real* dst = out.v.data() + static_cast<std::size_t>(c) * HW;
      for (int cell = 0; cell < HW; ++cell) {
        const std::int32_t* id = taps.idx.data() + static_cast<std::size_t>(cell) * 4;
        const real* wg = taps.wgt.data() + static_cast<std::size_t>(cell) * 4;
        dst[cell] = wg[0] * src[id[0]] + wg[1] * src[id[1]] + wg[2] * src[id[2]] +
                    wg[3] * src[id[3]];
      }
    }
  });
  return out;
}

Tensor warp_backward(const FlowField& flow, const Tensor& gout) {
  const WarpTaps taps = make_taps(flow);
  const int C = gout.c(), HW = flow.h * flow.w;
  Tensor dx({C, flow.h, flow.w});
  parallel_for(C, [&](std::int64_t c0, std::int64_t c1) {
    for (std::int64_t c = c0; c < c1; ++c) {
      const real* g = gout.v.data() + static_cast<std::size_t>(c) * HW;
      real* d = dx.v.data() + static_cast<std::size_t>(c) * HW;
      for (int cell = 0; cell < HW; ++cell) {
        const std::int32_t* id = taps.idx.data() + static_cast<std::size_t>(cell) * 4;
        const real* wg = taps.wgt.data() + static_cast<std::size_t>(cell) * 4;
        const real gv = g[cell];
        d[id[0]] += wg[0] * gv;
        d[id[1]] += wg[1] * gv;
        d[id[2]] += wg[2] * gv;
        d[id[3]] += wg[3] * gv;
      }
    }
  });
  return dx;
}

Tensor warp(const Tensor& x, const Pose2& rel, const GridSpec& spec) {
  if (x.rank() != 3 || x.h() != spec.h_cells || x.w() != spec.w_cells)
    throw ShapeError("warp: feature map " + shape_str(x.shape) + " does not match grid spec " +
                     std::to_string(spec.h_cells) + "x" + std::to_string(spec.w_cells));
  return warp_forward(x, backward_flow(spec, rel));
}

Tensor relu_forward(const Tensor& x) {
  Tensor out(x.shape);
  const std::int64_t n = x.numel();
  parallel_for(n, [&](std::int64_t b, std::int64_t e) {
    for (std::int64_t i = b; i < e; ++i)
      out.v[static_cast<std::size_t>(i)] = std::max(real(0), x.v[static_cast<std::size_t>(i)]);
  });
  return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& gout) {
  Tensor dx(x.shape);
  const std::int64_t n = x.numel();
  parallel_for(n, [&](std::int64_t b, std::int64_t e) {
    for (std::int64_t i = b; i < e; ++i)
      dx.v[static_cast<std::size_t>(i)] =
          x.v[static_cast<std::size_t>(i)] > real(0) ? gout.v[static_cast<std::size_t>(i)] : real(0);
  });
  return dx;
}

Tensor sigmoid_forward(const Tensor& x) {
  Tensor out(x.shape);
  const std::int64_t n = x.numel();
  parallel_for(n, [&](std::int64_t b, std::int64_t e) {
    for (std::int64_t i = b; i < e; ++i) {
      const double v = static_cast<double>(x.v[static_cast<std::size_t>(i)]);
      double y;
      if (v >= 0.0) {
        y = 1.0 / (1.0 + std::exp(-v));
      } else {
        const double ev = std::exp(v);
        y = ev / (1.0 + ev);
      }
      out.v[static_cast<std::size_t>(i)] = static_cast<real>(y);
    }
  });
  return out;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& gout) {
  Tensor dx(y.shape);
  const std::int64_t n = y.numel();
  parallel_for(n, [&](std::int64_t b, std::int64_t e) {
    for (std::int64_t i = b; i < e; ++i) {
      const real yv = y.v[static_cast<std::size_t>(i)];
      dx.v[static_cast<std::size_t>(i)] = gout.v[static_cast<std::size_t>(i)] * yv * (real(1) - yv);
    }
  });
  return dx;
}

Tensor layer_norm_forward(const Tensor& x, const Tensor& gain, const Tensor& bias, real eps,
                          LayerNormSaved* saved) {
  const int C = x.c(), HW = x.h() * x.w();
  if (gain.numel() != C || bias.numel() != C)
    throw ShapeError("layer_norm: gain/bias must have C entries");
  Tensor out(x.shape);
  Tensor x_hat(x.shape);
  std::vector<real> inv_std(static_cast<std::size_t>(HW));

  parallel_for(HW, [&](std::int64_t p0, std::int64_t p1) {
    const std::int64_t len = p1 - p0;
    std::vector<real> mean(static_cast<std::size_t>(len), real(0));
    std::vector<real> var(static_cast<std::size_t>(len), real(0));
    for (int c = 0; c < C; ++c) {
      const real* row = x.v.data() + static_cast<std::size_t>(c) * HW;
      for (std::int64_t p = 0; p < len; ++p) mean[static_cast<std::size_t>(p)] += row[p0 + p];
    }
    const real invC = real(1) / static_cast<real>(C);
    for (std::int64_t p = 0; p < len; ++p) mean[static_cast<std::size_t>(p)] *= invC;
    for (int c = 0; c < C; ++c) {
      const real* row = x.v.data() + static_cast<std::size_t>(c) * HW;
      for (std::int64_t p = 0; p < len; ++p) {
        const real d = row[p0 + p] - mean[static_cast<std::size_t>(p)];
        var[static_cast<std::size_t>(p)] += d * d;
      }
    }
    for (std::int64_t p = 0; p < len; ++p)
      inv_std[static_cast<std::size_t>(p0 + p)] =
          real(1) / std::sqrt(var[static_cast<std::size_t>(p)] * invC + eps);
    for (int c = 0; c < C; ++c) {
      const real* row = x.v.data() + static_cast<std::size_t>(c) * HW;
      real* hrow = x_hat.v.data() + static_cast<std::size_t>(c) * HW;
      real* orow = out.v.data() + static_cast<std::size_t>(c) * HW;
      const real g = gain.v[static_cast<std::size_t>(c)], bi = bias.v[static_cast<std::size_t>(c)];
      for (std::int64_t p = 0; p < len; ++p) {
        const real xh =
            (row[p0 + p] - mean[static_cast<std::size_t>(p)]) * inv_std[static_cast<std::size_t>(p0 + p)];
        hrow[p0 + p] = xh;
        orow[p0 + p] = g * xh + bi;
      }
    }
  });

  if (saved) {
    saved->x_hat = std::move(x_hat);
    saved->inv_std = std::move(inv_std);
  }
  return out;
}

void layer_norm_backward(const LayerNormSaved& saved, const Tensor& gain, const Tensor& gout,
                         Tensor& dx, Tensor& dgain, Tensor& dbias) {
  const Tensor& x_hat = saved.x_hat;
  const int C = x_hat.c(), HW = x_hat.h() * x_hat.w();
  dx = Tensor(x_hat.shape);
  dgain = Tensor({C});
  dbias = Tensor({C});

  for (int c = 0; c < C; ++c) {
    const real* g = gout.v.data() + static_cast<std::size_t>(c) * HW;
    const real* xh = x_hat.v.data() + static_cast<std::size_t>(c) * HW;
    real sg = real(0), sb = real(0);
    for (int p = 0; p < HW; ++p) {
      sg += g[p] * xh[p];
      sb += g[p];
    }
    dgain.v[static_cast<std::size_t>(c)] = sg;
    dbias.v[static_cast<std::size_t>(c)] = sb;
  }

  parallel_for(HW, [&](std::int64_t p0, std::int64_t p1) {
    const std::int64_t len = p1 - p0;
    std::vector<real> m1(static_cast<std::size_t>(len), real(0));
    std::vector<real> m2(static_cast<std::size_t>(len), real(0));
    for (int c = 0; c < C; ++c) {
      const real gc = gain.v[static_cast<std::size_t>(c)];
      const real* g = gout.v.data() + static_cast<std::size_t>(c) * HW;
      const real* xh = x_hat.v.data() + static_cast<std::size_t>(c) * HW;
      for (std::int64_t p = 0; p < len; ++p) {
        const real gg = gc * g[p0 + p];
        m1[static_cast<std::size_t>(p)] += gg;
        m2[static_cast<std::size_t>(p)] += gg * xh[p0 + p];
      }
    }
    const real invC = real(1) / static_cast<real>(C);
    for (std::int64_t p = 0; p < len; ++p) {
      m1[static_cast<std::size_t>(p)] *= invC;
      m2[static_cast<std::size_t>(p)] *= invC;
    }
    for (int c = 0; c < C; ++c) {
      const real gc = gain.v[static_cast<std::size_t>(c)];
      const real* g = gout.v.data() + static_cast<std::size_t>(c) * HW;
      const real* xh = x_hat.v.data() + static_cast<std::size_t>(c) * HW;
      real* d = dx.v.data() + static_cast<std::size_t>(c) * HW;
      for (std::int64_t p = 0; p < len; ++p)
        d[p0 + p] = saved.inv_std[static_cast<std::size_t>(p0 + p)] *
                    (gc * g[p0 + p] - m1[static_cast<std::size_t>(p)] -
                     xh[p0 + p] * m2[static_cast<std::size_t>(p)]);
    }
  });
}

Tensor concat_channels(const std::vector<const Tensor*>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: empty part list");
  const int H = parts[0]->h(), W = parts[0]->w();
  int C = 0;
  for (const Tensor* p : parts) {
    if (p->rank() != 3 || p->h() != H || p->w() != W)
      throw ShapeError("concat_channels: spatial mismatch, " + shape_str(parts[0]->shape) +
                       " vs " + shape_str(p->shape));
    C += p->c();
  }
  Tensor out({C, H, W});
  std::size_t off = 0;
  for (const Tensor* p : parts) {
    std::memcpy(out.v.data() + off, p->v.data(), sizeof(real) * p->v.size());
    off += p->v.size();
  }
  return out;
}

BEVMEM_NS_END
