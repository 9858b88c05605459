#pragma once

// Forward and backward kernels over plain tensors. The autodiff graph in
// graph.hpp records these; they are also usable directly for inference.

#include <cstddef>

#include "cadgd/tensor.hpp"

namespace cadgd::kernels {

inline constexpr double kLayerNormEps = 1e-5;

// x [h,w,cin], weight [k,k,cin,cout], bias [cout]; padding must be (k-1)/2.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              std::size_t padding);

struct Conv2dGrads {
  Tensor x, weight, bias;
};
Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& weight,
                            const Tensor& grad_out, std::size_t padding);

// Half-pixel (align_corners = false) bilinear upsampling of [h,w,c].
Tensor bilinear_upsample(const Tensor& x, int factor);
Tensor bilinear_upsample_backward(const Tensor& grad_out, const Shape& in_shape,
                                  int factor);

// Affine map over the last axis: x [..., din] * weight [din, dout] + bias.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

double sigmoid(double x);
double gelu(double x);
double gelu_derivative(double x);

Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta);

struct LayerNormGrads {
  Tensor x, gamma, beta;
};
LayerNormGrads layer_norm_backward(const Tensor& x, const Tensor& gamma,
                                   const Tensor& grad_out);

}  // namespace cadgd::kernels
