#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cost {

using i64 = std::int64_t;
using u64 = std::uint64_t;

enum class Mode { Train, Eval };
enum class Padding { Same, Valid };

struct Stride3 {
  i64 t = 1, h = 1, w = 1;
};

/// Shape of a rank-5 video tensor: (batch, time, height, width, channels).
struct Shape5 {
  i64 n = 0, t = 0, h = 0, w = 0, c = 0;

  i64 size() const { return n * t * h * w * c; }
  bool operator==(const Shape5&) const = default;
  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(t) + "x" + std::to_string(h) + "x" +
           std::to_string(w) + "x" + std::to_string(c);
  }
};

/// Dense rank-5 tensor, channels-last row-major (n,t,h,w,c), 64-bit values.
struct Tensor {
  Shape5 shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape5 s, double fill = 0.0) : shape(s), data(static_cast<size_t>(s.size()), fill) {
    if (s.n < 1 || s.t < 1 || s.h < 1 || s.w < 1 || s.c < 1)
      throw std::invalid_argument("Tensor: all dimensions must be >= 1, got " + s.str());
  }
  static Tensor zeros(Shape5 s) { return Tensor(s); }
  static Tensor like(const Tensor& o, double fill = 0.0) { return Tensor(o.shape, fill); }

  i64 size() const { return shape.size(); }

  double& at(i64 n, i64 t, i64 h, i64 w, i64 c) {
    return data[static_cast<size_t>((((n * shape.t + t) * shape.h + h) * shape.w + w) * shape.c + c)];
  }
  const double& at(i64 n, i64 t, i64 h, i64 w, i64 c) const {
    return data[static_cast<size_t>((((n * shape.t + t) * shape.h + h) * shape.w + w) * shape.c + c)];
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

/// Row-major matrix.
struct Matrix {
  i64 rows = 0, cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(i64 r, i64 c, double fill = 0.0) : rows(r), cols(c), data(static_cast<size_t>(r * c), fill) {}
  static Matrix identity(i64 n, double scale = 1.0) {
    Matrix m(n, n);
    for (i64 i = 0; i < n; ++i) m.at(i, i) = scale;
    return m;
  }

  i64 size() const { return rows * cols; }
  double& at(i64 r, i64 c) { return data[static_cast<size_t>(r * cols + c)]; }
  const double& at(i64 r, i64 c) const { return data[static_cast<size_t>(r * cols + c)]; }
};

/// Convolution weight bank, layout (c_out, c_in, kt, kh, kw), no bias.
struct ConvKernel {
  i64 c_out = 0, c_in = 0, kt = 1, kh = 1, kw = 1;
  std::vector<double> data;

  ConvKernel() = default;
  ConvKernel(i64 co, i64 ci, i64 t, i64 h, i64 w, double fill = 0.0)
      : c_out(co), c_in(ci), kt(t), kh(h), kw(w),
        data(static_cast<size_t>(co * ci * t * h * w), fill) {}

  i64 size() const { return c_out * c_in * kt * kh * kw; }
  i64 taps() const { return kt * kh * kw; }

  double& at(i64 o, i64 i, i64 t, i64 h, i64 w) {
    return data[static_cast<size_t>(((((o * c_in) + i) * kt + t) * kh + h) * kw + w)];
  }
  const double& at(i64 o, i64 i, i64 t, i64 h, i64 w) const {
    return data[static_cast<size_t>(((((o * c_in) + i) * kt + t) * kh + h) * kw + w)];
  }
};

inline void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace cost
