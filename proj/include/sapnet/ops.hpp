#pragma once

#include <vector>

#include "sapnet/autograd.hpp"

/// Differentiable tensor operations on rank-3 (C,H,W) feature maps, rank-1
/// vectors, and scalars (shape {1}). Every op has an analytic backward.
namespace sapnet::ops {

using ad::Var;

// Elementwise, shapes must match exactly.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var square(const Var& a);
Var abs(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);
Var log(const Var& a);
/// Gradient is zero where the input lies outside [lo, hi].
Var clamp(const Var& a, double lo, double hi);
/// Elementwise -alpha * (1 - p)^gamma * log(p).
Var focal_term(const Var& p, double alpha, double gamma);

// Reductions to a scalar of shape {1}.
Var sum(const Var& a);
Var mean(const Var& a);

/// x[C,H,W] scaled per channel by g (shape {C}).
Var channel_scale(const Var& x, const Var& g);
/// Fixed per-channel affine map: x[c] * scale[c] + shift[c].
Var channel_affine(const Var& x, const std::vector<double>& scale, const std::vector<double>& shift);
/// Global spatial average / maximum per channel: [C,H,W] -> {C}.
Var global_avg_pool(const Var& x);
Var global_max_pool(const Var& x);
/// Per-pixel maximum over channels: [C,H,W] -> [1,H,W].
Var channel_max(const Var& x);
/// Per-pixel softmax over channels.
Var softmax_channels(const Var& x);
/// Per-pixel division by the L2 norm of the channel vector.
Var normalize_channels(const Var& x);

/// y = W v + b with v {N}, W [M,N], b {M}. `b` may be empty.
Var linear(const Var& v, const Var& w, const Var& b);

struct ConvOptions {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
};

/// Zero-padded 2-D cross-correlation. x [Ci,H,W], w [Co,Ci,k,k], b {Co} (may be empty).
Var conv2d(const Var& x, const Var& w, const Var& b, ConvOptions opt);
int conv_output_size(int in, int kernel, ConvOptions opt);

Var concat_channels(const std::vector<Var>& parts);
/// Channels [begin, begin + count).
Var slice_channels(const Var& x, int begin, int count);
Var max_pool2d(const Var& x, int kernel, int stride, int padding);
/// Bilinear resampling with half-pixel centers (the align_corners=false convention).
Var resize_bilinear(const Var& x, int out_h, int out_w);
/// Mirror-pads the bottom and right edges.
Var reflect_pad(const Var& x, int pad_bottom, int pad_right);
/// Top-left crop.
Var crop(const Var& x, int out_h, int out_w);
/// Depthwise separable filter with a symmetric 1-D kernel, valid positions only.
Var separable_filter_valid(const Var& x, const std::vector<double>& kernel);

}  // namespace sapnet::ops
