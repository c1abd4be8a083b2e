#pragma once

#include "cost/tensor.hpp"

namespace cost {

struct Window3 {
  i64 t = 1, h = 1, w = 1;
};

/// Output extent of one axis. Same padding pads (k-1)/2 on both sides (odd k
/// required) and then strides; valid requires the kernel to fit.
i64 conv_out_extent(i64 in, i64 k, i64 stride, Padding pad);

/// 3D cross-correlation over (t,h,w), channels-last. Same padding is
/// zero-padding. Throws on channel mismatch or even kernel with same padding.
Tensor conv3d(const Tensor& x, const ConvKernel& kernel, Stride3 stride = {},
              Padding pad = Padding::Same);

struct Conv3dGrads {
  Tensor dx;
  ConvKernel dkernel;
};
Conv3dGrads conv3d_backward(const Tensor& x, const ConvKernel& kernel, Stride3 stride, Padding pad,
                            const Tensor& dy);

/// Max pooling; padded positions never win (same padding pads with -inf).
Tensor max_pool(const Tensor& x, Window3 window, Stride3 stride, Padding pad = Padding::Valid);
Tensor max_pool_backward(const Tensor& x, Window3 window, Stride3 stride, Padding pad,
                         const Tensor& dy);

/// out[n,c] = max over (t,h,w). Backward routes to the first max in scan order.
Matrix global_max_pool_thw(const Tensor& x);
Tensor global_max_pool_thw_backward(const Tensor& x, const Matrix& dy);

Matrix global_avg_pool_thw(const Tensor& x);
Tensor global_avg_pool_thw_backward(Shape5 x_shape, const Matrix& dy);

}  // namespace cost
