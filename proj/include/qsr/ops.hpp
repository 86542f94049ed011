#pragma once

#include <vector>

#include "qsr/tensor.hpp"

namespace qsr {

// --- convolution ------------------------------------------------------------
//
// input  [N, C, H, W], kernel [Cout, C/groups, kH, kW], bias [Cout] or empty.
// Output spatial dims follow the usual arithmetic; differentiable w.r.t.
// input, kernel and bias.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
              int pad_h, int pad_w, int groups);

inline Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                     int stride = 1, int padding = 0, int groups = 1) {
    return conv2d(input, kernel, bias, stride, padding, padding, groups);
}

// --- pixel shuffle ----------------------------------------------------------
//
// [N, C*r*r, H, W] -> [N, C, H*r, W*r]; bijective rearrangement, gradient is
// the inverse rearrangement (exposed as pixel_unshuffle).
Tensor pixel_shuffle(const Tensor& x, int r);
Tensor pixel_unshuffle(const Tensor& x, int r);

// --- elementwise / reduction suite ------------------------------------------
//
// Broadcasting is limited to scalar-vs-tensor and per-channel ([C] against
// [N,C,H,W]); anything else is a contract violation.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& x, double c);
Tensor scalar_add(const Tensor& x, double c);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.2);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor softmax(const Tensor& v);  // 1-D only
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor clamp_min(const Tensor& x, double lo);

// Per-sample standard deviation over (C,H,W): [N,C,H,W] -> [N].
Tensor std_over_channels(const Tensor& x);

// Scalar graph view of v[i]; gradient scatters back into v.
Tensor select(const Tensor& v, int i);

// [N,C,H,W] scaled by a per-sample factor s of shape [N].
Tensor mul_per_sample(const Tensor& x, const Tensor& s);

// Scalar sum_i w[i] * v[i] with constant weights.
Tensor weighted_sum(const Tensor& v, const std::vector<double>& w);

// Shannon entropy (natural log) of a probability vector; entries below 1e-12
// contribute zero (the x*log x limit).
Tensor entropy(const Tensor& p);

// Fused batch norm over (N,H,W) per channel. In training mode normalizes with
// batch statistics and, when update_running is set, folds them into the
// running buffers; in eval mode normalizes with the running buffers.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  std::vector<double>& running_mean, std::vector<double>& running_var,
                  bool training, bool update_running, double momentum = 0.1,
                  double eps = 1e-5);

}  // namespace qsr
