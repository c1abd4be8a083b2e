#pragma once

#include "cost/tensor.hpp"

namespace cost::ref {

/// Direct 7-nested-loop 3D cross-correlation. Independent of the im2col path
/// in conv.cpp on purpose: this is the oracle the fast path is checked against.
Tensor conv3d_naive(const Tensor& x, const ConvKernel& kernel, Stride3 stride = {},
                    Padding pad = Padding::Same);

}  // namespace cost::ref
