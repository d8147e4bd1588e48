#pragma once

#include <vector>

#include "eqnet/tensor.hpp"

namespace eqnet::ops {

enum class Padding { valid, zero };

// Image tensors are rank d+1 (spatial dims..., channels). Conv and upconv
// kernels are rank d+2 (kernel spatial dims..., in channels, out channels).
// All operators fix the accumulation order per output element (kernel flat
// order), so repeated evaluation on identical inputs is bit-identical.

// Stride-1 cross-correlation. valid shrinks each spatial dim by (k-1);
// zero pads (k-1)/2 per side and preserves the spatial shape.
Tensor conv(const Tensor& in, const Tensor& kernel, const Tensor& bias, Padding padding);

struct ConvGrads {
  Tensor d_in;
  Tensor d_kernel;
  Tensor d_bias;
};
ConvGrads conv_backward(const Tensor& in, const Tensor& kernel, const Tensor& d_out, Padding padding);

Tensor relu(const Tensor& in);
Tensor relu_backward(const Tensor& in, const Tensor& d_out);

// Max pooling, kernel size = stride = f. Ties resolve to the lowest flat
// input index; the argmax context routes the backward pass.
struct PoolResult {
  Tensor out;
  std::vector<int64_t> argmax;  // flat input index per output element
};
PoolResult maxpool(const Tensor& in, int64_t f);
Tensor maxpool_backward(const std::vector<int64_t>& in_shape, const std::vector<int64_t>& argmax,
                        const Tensor& d_out);

// Nearest-neighbor upsampling by factor f (each value repeated f^d times).
Tensor upsample_nn(const Tensor& in, int64_t f);
Tensor upsample_nn_backward(const std::vector<int64_t>& in_shape, const Tensor& d_out, int64_t f);

// Up-convolution with kernel size = stride = f:
// out(x, co) = sum_ci in(floor(x/f), ci) * kernel(x mod f, ci, co).
Tensor upconv(const Tensor& in, const Tensor& kernel, int64_t f);
struct UpconvGrads {
  Tensor d_in;
  Tensor d_kernel;
};
UpconvGrads upconv_backward(const Tensor& in, const Tensor& kernel, const Tensor& d_out, int64_t f);

// Spatial crop at the given per-dim offsets (channels untouched).
Tensor crop(const Tensor& in, const std::vector<int64_t>& offset, const std::vector<int64_t>& size);
Tensor crop_backward(const std::vector<int64_t>& in_shape, const std::vector<int64_t>& offset,
                     const Tensor& d_out);

// Zero padding, per-dim low/high amounts on the spatial dims.
Tensor pad_zero(const Tensor& in, const std::vector<int64_t>& lo, const std::vector<int64_t>& hi);
Tensor pad_zero_backward(const std::vector<int64_t>& lo, const std::vector<int64_t>& in_spatial,
                         const Tensor& d_out);

// Channel concatenation of spatially identical tensors, a first.
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Central crop of skip to up's spatial size, then channel concat (skip
// channels first). The size difference must be even in every dim.
Tensor concat_crop(const Tensor& skip, const Tensor& up);
std::vector<int64_t> central_crop_offset(const std::vector<int64_t>& from_spatial,
                                         const std::vector<int64_t>& to_spatial);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
double sum(const Tensor& a);

std::vector<int64_t> spatial_shape(const Tensor& t);
int64_t channels(const Tensor& t);

}  // namespace eqnet::ops
