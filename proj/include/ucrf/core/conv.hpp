#pragma once

#include "ucrf/core/tensor.hpp"

namespace ucrf {

// Stride-1 convolution with zero padding k/2 (odd k), "same" output size.
// x: (C, H, W), w: (O, C, k, k), bias: (O) or empty.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr);

// Accumulates into whichever of grad_x, grad_w, grad_b are non-null.
void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& grad_out, Tensor* grad_x,
                     Tensor* grad_w, Tensor* grad_b = nullptr);

// 2x2 average pooling; output is ceil(H/2) x ceil(W/2), edge windows
// average only the pixels they cover.
Tensor avg_pool2(const Tensor& x);
Tensor avg_pool2_backward(const Tensor& grad_out, std::size_t in_h, std::size_t in_w);

void relu_inplace(Tensor& x);
// Zeroes grad wherever the forward output was not positive.
void relu_backward_inplace(const Tensor& out, Tensor& grad);

/// Rounds every value to the nearest float32.
void round_to_float(Tensor& t);
double round_to_float(double v);

}  // namespace ucrf
