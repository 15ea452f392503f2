#pragma once

#include "bevmem/pose.hpp"
#include "bevmem/tensor.hpp"

BEVMEM_NS_BEGIN

// Raw compute kernels shared by the tape ops and the plain (detached) paths.
// All kernels are pure with respect to their inputs; internal parallelism
// partitions output elements, so results are bit-identical for any thread
// count (every output element is reduced in one fixed order by one thread).

// Input copied into a zero-padded plane buffer, (H + 2*ph) x (W + 2*pw) per
// channel. Kept around by conv forward so the backward pass can reuse it.
Tensor pad_input(const Tensor& x, int ph, int pw);

// Same-padding stride-1 convolution, pad = dilation*(k-1)/2 per axis.
// w: out x in x k x k, b: {out}. Throws ShapeError on channel mismatch.
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int dil_h, int dil_w,
                      Tensor* padded_out = nullptr);

// dx from upstream gradient; equals a convolution of the padded upstream
// gradient with the flipped, transposed kernel.
Tensor conv2d_backward_input(const Tensor& w, const Tensor& gout, int dil_h, int dil_w);

// dw/db given the padded input saved by the forward pass.
void conv2d_backward_params(const Tensor& padded_x, int in_ch, const Tensor& gout, int k,
                            int dil_h, int dil_w, Tensor& dw, Tensor& db);

// Bilinear resample along a backward flow; out-of-bounds taps contribute 0.
// Identity flow reproduces the input bit-exactly.
Tensor warp_forward(const Tensor& x, const FlowField& flow);
Tensor warp_backward(const FlowField& flow, const Tensor& gout);
// Convenience: flow computed from rel. Throws ShapeError if x does not match spec.
Tensor warp(const Tensor& x, const Pose2& rel, const GridSpec& spec);

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& gout);
Tensor sigmoid_forward(const Tensor& x);
Tensor sigmoid_backward(const Tensor& y, const Tensor& gout);

// Normalization over the channel axis at every spatial location.
// Saves the normalized (pre-affine) values and 1/std per location.
struct LayerNormSaved {
  Tensor x_hat;        // C x H x W
  std::vector<real> inv_std;  // H*W
};
Tensor layer_norm_forward(const Tensor& x, const Tensor& gain, const Tensor& bias, real eps,
                          LayerNormSaved* saved);
void layer_norm_backward(const LayerNormSaved& saved, const Tensor& gain, const Tensor& gout,
                         Tensor& dx, Tensor& dgain, Tensor& dbias);

Tensor concat_channels(const std::vector<const Tensor*>& parts);

BEVMEM_NS_END
