#include "cost/nn.hpp"

#include <algorithm>
#include <cmath>

#include "cost/parallel.hpp"

namespace cost {

Matrix linear(const Matrix& x, const Matrix& w, std::span<const double> b) {
  check(x.cols == w.rows, "linear: x cols != w rows");
  check(b.empty() || static_cast<i64>(b.size()) == w.cols, "linear: bias length != d_out");
  Matrix y(x.rows, w.cols);
  for (i64 r = 0; r < x.rows; ++r) {
    double* yr = y.data.data() + r * w.cols;
    if (!b.empty()) std::copy(b.begin(), b.end(), yr);
    for (i64 k = 0; k < x.cols; ++k) {
      const double xv = x.at(r, k);
      const double* wr = w.data.data() + k * w.cols;
      for (i64 c = 0; c < w.cols; ++c) yr[c] += xv * wr[c];
    }
  }
  return y;
}

LinearGrads linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy) {
  check(dy.rows == x.rows && dy.cols == w.cols, "linear_backward: dy shape mismatch");
  LinearGrads g{Matrix(x.rows, x.cols), Matrix(w.rows, w.cols),
                std::vector<double>(static_cast<size_t>(w.cols), 0.0)};
  for (i64 r = 0; r < x.rows; ++r) {
    for (i64 c = 0; c < w.cols; ++c) {
      const double d = dy.at(r, c);
      g.db[static_cast<size_t>(c)] += d;
      for (i64 k = 0; k < x.cols; ++k) g.dw.at(k, c) += x.at(r, k) * d;
    }
    for (i64 k = 0; k < x.cols; ++k) {
      double acc = 0.0;
      for (i64 c = 0; c < w.cols; ++c) acc += dy.at(r, c) * w.at(k, c);
      g.dx.at(r, k) = acc;
    }
  }
  return g;
}

Matrix softmax_rows(const Matrix& m) {
  Matrix y(m.rows, m.cols);
  for (i64 r = 0; r < m.rows; ++r) {
    double mx = m.at(r, 0);
    for (i64 c = 1; c < m.cols; ++c) mx = std::max(mx, m.at(r, c));
    double sum = 0.0;
    for (i64 c = 0; c < m.cols; ++c) {
      const double e = std::exp(m.at(r, c) - mx);
      y.at(r, c) = e;
      sum += e;
    }
    for (i64 c = 0; c < m.cols; ++c) y.at(r, c) /= sum;
  }
  return y;
}

Matrix softmax_rows_backward(const Matrix& y, const Matrix& dy) {
  check(y.rows == dy.rows && y.cols == dy.cols, "softmax backward: shape mismatch");
  Matrix dx(y.rows, y.cols);
  for (i64 r = 0; r < y.rows; ++r) {
    double dot = 0.0;
    for (i64 c = 0; c < y.cols; ++c) dot += dy.at(r, c) * y.at(r, c);
    for (i64 c = 0; c < y.cols; ++c) dx.at(r, c) = (dy.at(r, c) - dot) * y.at(r, c);
  }
  return dx;
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  parallel_for(static_cast<i64>(y.data.size()), [&](i64 a, i64 b) {
    for (i64 i = a; i < b; ++i) y.data[static_cast<size_t>(i)] = std::max(0.0, y.data[static_cast<size_t>(i)]);
  });
  return y;
}

Tensor relu_backward(const Tensor& y, const Tensor& dy) {
  check(y.shape == dy.shape, "relu_backward: shape mismatch");
  Tensor dx = dy;
  parallel_for(static_cast<i64>(dx.data.size()), [&](i64 a, i64 b) {
    for (i64 i = a; i < b; ++i)
      if (y.data[static_cast<size_t>(i)] <= 0.0) dx.data[static_cast<size_t>(i)] = 0.0;
  });
  return dx;
}

Tensor batch_norm_forward(BatchNorm& bn, const Tensor& x, Mode mode, bool update_running,
                          BnCache* cache) {
  check(x.shape.c == bn.channels, "batch_norm: channel mismatch");
  const i64 C = bn.channels;
  const i64 m = x.shape.n * x.shape.t * x.shape.h * x.shape.w;

  std::vector<double> mean(static_cast<size_t>(C), 0.0), var(static_cast<size_t>(C), 0.0);
  if (mode == Mode::Train) {
    const double* p = x.data.data();
    for (i64 v = 0; v < m; ++v, p += C)
      for (i64 c = 0; c < C; ++c) mean[static_cast<size_t>(c)] += p[c];
    for (i64 c = 0; c < C; ++c) mean[static_cast<size_t>(c)] /= static_cast<double>(m);
    p = x.data.data();
    for (i64 v = 0; v < m; ++v, p += C)
      for (i64 c = 0; c < C; ++c) {
        const double d = p[c] - mean[static_cast<size_t>(c)];
        var[static_cast<size_t>(c)] += d * d;
      }
    for (i64 c = 0; c < C; ++c) var[static_cast<size_t>(c)] /= static_cast<double>(m);
    if (update_running) {
      for (i64 c = 0; c < C; ++c) {
        auto i = static_cast<size_t>(c);
        bn.running_mean[i] = bn.momentum * bn.running_mean[i] + (1.0 - bn.momentum) * mean[i];
        bn.running_var[i] = bn.momentum * bn.running_var[i] + (1.0 - bn.momentum) * var[i];
      }
    }
  } else {
    mean = bn.running_mean;
    var = bn.running_var;
  }

  std::vector<double> inv_std(static_cast<size_t>(C));
  for (i64 c = 0; c < C; ++c)
    inv_std[static_cast<size_t>(c)] = 1.0 / std::sqrt(var[static_cast<size_t>(c)] + bn.eps);
  if (cache) {
    cache->mean = mean;
    cache->inv_std = inv_std;
  }

  Tensor y(x.shape);
  parallel_for(m, [&](i64 a, i64 b) {
    const double* p = x.data.data() + a * C;
    double* q = y.data.data() + a * C;
    for (i64 v = a; v < b; ++v, p += C, q += C)
      for (i64 c = 0; c < C; ++c) {
        auto i = static_cast<size_t>(c);
        q[c] = bn.gamma[i] * (p[c] - mean[i]) * inv_std[i] + bn.beta[i];
      }
  });
  return y;
}

BnGrads batch_norm_backward(const BatchNorm& bn, const BnCache& cache, const Tensor& x,
                            const Tensor& dy, Mode mode) {
  check(x.shape == dy.shape, "batch_norm_backward: shape mismatch");
  const i64 C = bn.channels;
  const i64 m = x.shape.n * x.shape.t * x.shape.h * x.shape.w;
  BnGrads g{Tensor(x.shape), std::vector<double>(static_cast<size_t>(C), 0.0),
            std::vector<double>(static_cast<size_t>(C), 0.0)};

  // dgamma = sum dy*xhat, dbeta = sum dy
  std::vector<double> sum_dy(static_cast<size_t>(C), 0.0), sum_dy_xhat(static_cast<size_t>(C), 0.0);
  {
    const double* p = x.data.data();
    const double* d = dy.data.data();
    for (i64 v = 0; v < m; ++v, p += C, d += C)
      for (i64 c = 0; c < C; ++c) {
        auto i = static_cast<size_t>(c);
        const double xhat = (p[c] - cache.mean[i]) * cache.inv_std[i];
        sum_dy[i] += d[c];
        sum_dy_xhat[i] += d[c] * xhat;
      }
  }
  g.dgamma = sum_dy_xhat;
  g.dbeta = sum_dy;

  if (mode == Mode::Train) {
    const double invm = 1.0 / static_cast<double>(m);
    parallel_for(m, [&](i64 a, i64 b) {
      const double* p = x.data.data() + a * C;
      const double* d = dy.data.data() + a * C;
      double* o = g.dx.data.data() + a * C;
      for (i64 v = a; v < b; ++v, p += C, d += C, o += C)
        for (i64 c = 0; c < C; ++c) {
          auto i = static_cast<size_t>(c);
          const double xhat = (p[c] - cache.mean[i]) * cache.inv_std[i];
          o[c] = bn.gamma[i] * cache.inv_std[i] *
                 (d[c] - invm * sum_dy[i] - invm * xhat * sum_dy_xhat[i]);
        }
    });
  } else {
    parallel_for(m, [&](i64 a, i64 b) {
      const double* d = dy.data.data() + a * C;
      double* o = g.dx.data.data() + a * C;
      for (i64 v = a; v < b; ++v, d += C, o += C)
        for (i64 c = 0; c < C; ++c) {
          auto i = static_cast<size_t>(c);
          o[c] = d[c] * bn.gamma[i] * cache.inv_std[i];
        }
    });
  }
  return g;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check(a.shape == b.shape, "add: shape mismatch");
  Tensor y = a;
  for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += b.data[i];
  return y;
}

void add_inplace(Tensor& a, const Tensor& b) {
  check(a.shape == b.shape, "add_inplace: shape mismatch");
  for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

void scale_inplace(Tensor& a, double s) {
  for (double& v : a.data) v *= s;
}

}  // namespace cost
