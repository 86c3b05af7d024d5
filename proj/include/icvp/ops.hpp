#pragma once

#include "icvp/tensor.hpp"

#include <array>
#include <cstdint>

namespace icvp {

// "same"-style zero padding: floor(dilation*(k-1)/2) per side, so stride-1
// convolutions preserve spatial extents.
inline int same_pad(int k, int dilation) { return dilation * (k - 1) / 2; }

inline int conv_out_extent(int in, int k, int stride, int dilation) {
    int p = same_pad(k, dilation);
    return (in + 2 * p - dilation * (k - 1) - 1) / stride + 1;
}

// With odd k and the padding rule above, a transposed conv emits
// (in-1)*stride + 1 + output_padding elements along an upsampled axis;
// output_padding in [0, stride) selects the exact target extent.
inline int deconv_out_extent(int in, int stride, int output_padding) {
    return (in - 1) * stride + 1 + output_padding;
}

/// x: [C_in,H,W], w: [C_out,C_in,k,k], b: [C_out].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1, int dilation = 1);

/// x: [C_in,D,H,W], w: [C_out,C_in,kd,kh,kw]; stride/dilation per (d,h,w) axis.
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b,
              std::array<int, 3> stride = {1, 1, 1}, std::array<int, 3> dilation = {1, 1, 1});

/// Transposed convolution; w: [C_in,C_out,k,k]. out_h/out_w must satisfy
/// (in-1)*stride+1 <= out < (in-1)*stride+1+stride; pass -1 for exact 2x.
Tensor deconv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 2,
                int out_h = -1, int out_w = -1);

/// w: [C_in,C_out,kd,kh,kw]; out extents per axis, -1 for stride-times input.
Tensor deconv3d(const Tensor& x, const Tensor& w, const Tensor& b,
                std::array<int, 3> stride = {2, 2, 2}, std::array<int, 3> out_extent = {-1, -1, -1});

/// Per-channel statistics over all non-channel axes. Train mode normalizes
/// with batch statistics and folds them into running_mean/running_var
/// (momentum 0.1 by default); eval mode reads the running buffers.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 Tensor running_mean, Tensor running_var, bool train,
                 float eps = 1e-5f, float momentum = 0.1f);

Tensor leaky_relu(const Tensor& x, float slope = 0.1f);

Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, int start, int len);

/// v: [C,D,H,W], f: [C,H,W] -> out(c,d,i,j) = v(c,d,i,j) + f(c,i,j).
Tensor broadcast_sum(const Tensor& v, const Tensor& f);

/// v: [D,H,W] resized to [d_out,h_out,w_out]; align-corners=false with edge clamp.
Tensor trilinear_resize(const Tensor& v, int d_out, int h_out, int w_out);
Tensor trilinear_upsample(const Tensor& v, int factor);

/// Softmax over axis 0 of a [D,H,W] volume, max-subtracted per pixel.
Tensor softmax_bins(const Tensor& v);
/// p: [D,H,W] -> out(i,j) = sum_d d * p(d,i,j).
Tensor disparity_expectation(const Tensor& p);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor sum(const Tensor& a);
Tensor reshape(const Tensor& x, std::vector<int> new_shape);

} // namespace icvp
