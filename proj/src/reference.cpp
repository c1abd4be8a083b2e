#include "cost/reference.hpp"

#include "cost/conv.hpp"

namespace cost::ref {

Tensor conv3d_naive(const Tensor& x, const ConvKernel& k, Stride3 s, Padding pad) {
  check(x.shape.c == k.c_in, "conv3d_naive: channel mismatch");
  const i64 ot = conv_out_extent(x.shape.t, k.kt, s.t, pad);
  const i64 oh = conv_out_extent(x.shape.h, k.kh, s.h, pad);
  const i64 ow = conv_out_extent(x.shape.w, k.kw, s.w, pad);
  const i64 pt = pad == Padding::Same ? (k.kt - 1) / 2 : 0;
  const i64 ph = pad == Padding::Same ? (k.kh - 1) / 2 : 0;
  const i64 pw = pad == Padding::Same ? (k.kw - 1) / 2 : 0;

  Tensor y(Shape5{x.shape.n, ot, oh, ow, k.c_out});
  for (i64 n = 0; n < x.shape.n; ++n)
    for (i64 t = 0; t < ot; ++t)
      for (i64 h = 0; h < oh; ++h)
        for (i64 w = 0; w < ow; ++w)
          for (i64 o = 0; o < k.c_out; ++o) {
            double acc = 0.0;
            for (i64 i = 0; i < k.c_in; ++i)
              for (i64 dt = 0; dt < k.kt; ++dt)
                for (i64 dh = 0; dh < k.kh; ++dh)
                  for (i64 dw = 0; dw < k.kw; ++dw) {
                    const i64 it = t * s.t - pt + dt;
                    const i64 ih = h * s.h - ph + dh;
                    const i64 iw = w * s.w - pw + dw;
                    if (it < 0 || it >= x.shape.t || ih < 0 || ih >= x.shape.h || iw < 0 ||
                        iw >= x.shape.w)
                      continue;
                    acc += x.at(n, it, ih, iw, i) * k.at(o, i, dt, dh, dw);
                  }
            y.at(n, t, h, w, o) = acc;
          }
  return y;
}

}  // namespace cost::ref
