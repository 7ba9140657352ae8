#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <type_traits>
#include <vector>

#include "betamixer/nn/graph.hpp"

namespace bmx::nn {

namespace detail {

inline void require(bool ok, const char* op, const Shape& a, const Shape& b) {
  if (!ok) throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

template <typename Scalar>
Tensor<Scalar> like(const Var<Scalar>& v, std::type_identity_t<Matrix<Scalar>> m) {
  return Tensor<Scalar>(v.shape(), std::move(m));
}

/// Flat row view of a matrix of any shape.
template <typename Scalar>
Eigen::Map<RowVector<Scalar>> flat(Matrix<Scalar>& m) {
  return Eigen::Map<RowVector<Scalar>>(m.data(), m.size());
}
template <typename Scalar>
Eigen::Map<const RowVector<Scalar>> flat(const Matrix<Scalar>& m) {
  return Eigen::Map<const RowVector<Scalar>>(m.data(), m.size());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and matrix algebra

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require(a.cols() == b.rows(), "matmul", a.shape(), b.shape());
  Matrix<Scalar> out = a.value() * b.value();
  return a.graph->record(Tensor<Scalar>::from_matrix(std::move(out)), {a, b},
                         [a, b](Graph<Scalar>& g, const Matrix<Scalar>& go) {
                           if (a.requires_grad()) g.grad(a.id).noalias() += go * b.value().transpose();
                           if (b.requires_grad()) g.grad(b.id).noalias() += a.value().transpose() * go;
                         });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require(a.shape() == b.shape(), "add", a.shape(), b.shape());
  return a.graph->record(detail::like(a, a.value() + b.value()), {a, b},
                         [a, b](Graph<Scalar>& g, const Matrix<Scalar>& go) {
                           g.accumulate(a, go);
                           g.accumulate(b, go);
                         });
}

template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require(a.shape() == b.shape(), "sub", a.shape(), b.shape());
  return a.graph->record(detail::like(a, a.value() - b.value()), {a, b},
                         [a, b](Graph<Scalar>& g, const Matrix<Scalar>& go) {
                           g.accumulate(a, go);
                           g.accumulate(b, -go);
                         });
}

/// Elementwise product.
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require(a.shape() == b.shape(), "mul", a.shape(), b.shape());
  return a.graph->record(detail::like(a, a.value().cwiseProduct(b.value())), {a, b},
                         [a, b](Graph<Scalar>& g, const Matrix<Scalar>& go) {
                           g.accumulate(a, go.cwiseProduct(b.value()));
                           g.accumulate(b, go.cwiseProduct(a.value()));
                         });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar c) {
  return a.graph->record(detail::like(a, a.value() * c), {a},
                         [a, c](Graph<Scalar>& g, const Matrix<Scalar>& go) { g.accumulate(a, go * c); });
}

/// Adds a [cols] bias to every row.
template <typename Scalar>
Var<Scalar> add_bias(const Var<Scalar>& x, const Var<Scalar>& bias) {
  detail::require(bias.value().size() == x.cols(), "add_bias", x.shape(), bias.shape());
  Matrix<Scalar> out = x.value();
  const auto b = detail::flat(bias.value());
  out.rowwise() += b;
  return x.graph->record(detail::like(x, std::move(out)), {x, bias},
                         [x, bias](Graph<Scalar>& g, const Matrix<Scalar>& go) {
                           g.accumulate(x, go);
                           if (bias.requires_grad()) detail::flat(g.grad(bias.id)) += go.colwise().sum();
                         });
}

/// y = x W + b with W of shape [in, out] and b of shape [out].
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  detail::require(x.cols() == weight.rows(), "linear", x.shape(), weight.shape());
  detail::require(bias.value().size() == weight.cols(), "linear", weight.shape(), bias.shape());
  Matrix<Scalar> out = x.value() * weight.value();
  out.rowwise() += detail::flat(bias.value());
  return x.graph->record(Tensor<Scalar>::from_matrix(std::move(out)), {x, weight, bias},
                         [x, weight, bias](Graph<Scalar>& g, const Matrix<Scalar>& go) {
                           if (x.requires_grad()) g.grad(x.id).noalias() += go * weight.value().transpose();
                           if (weight.requires_grad()) g.grad(weight.id).noalias() += x.value().transpose() * go;
                           if (bias.requires_grad()) detail::flat(g.grad(bias.id)) += go.colwise().sum();
                         });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  return x.graph->record(detail::like(x, x.value().cwiseMax(Scalar(0))), {x},
                         [x](Graph<Scalar>& g, const Matrix<Scalar>& go) {
                           g.accumulate(x, (x.value().array() > Scalar(0)).select(go.array(), Scalar(0)).matrix());
                         });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x) {
  Matrix<Scalar> out = x.value().unaryExpr([](Scalar v) {
    // Split on sign so exp never overflows.
    if (v >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-v));
    const Scalar e = std::exp(v);
    return e / (Scalar(1) + e);
  });
  Matrix<Scalar> deriv = (out.array() * (Scalar(1) - out.array())).matrix();
  return x.graph->record(detail::like(x, std::move(out)), {x},
                         [x, deriv = std::move(deriv)](Graph<Scalar>& g, const Matrix<Scalar>& go) {
                           g.accumulate(x, go.cwiseProduct(deriv));
                         });
}

template <typename Scalar>
Var<Scalar> tanh(const Var<Scalar>& x) {
  Matrix<Scalar> out = x.value().array().tanh().matrix();
  Matrix<Scalar> deriv = (Scalar(1) - out.array().square()).matrix();
  return x.graph->record(detail::like(x, std::move(out)), {x},
                         [x, deriv = std::move(deriv)](Graph<Scalar>& g, const Matrix<Scalar>& go) {
                           g.accumulate(x, go.cwiseProduct(deriv));
                         });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = x.value().sum();
  return x.graph->record(Tensor<Scalar>({1}, std::move(out)), {x},
                         [x](Graph<Scalar>& g, const Matrix<Scalar>& go) {
                           if (x.requires_grad()) g.grad(x.id).array() += go(0, 0);
                         });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x) {
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.value().size()));
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape) {
  Tensor<Scalar> t = x.tensor().reshaped(std::move(shape));
  return x.graph->record(std::move(t), {x}, [x](Graph<Scalar>& g, const Matrix<Scalar>& go) {
    if (!x.requires_grad()) return;
    auto& dx = g.grad(x.id);
    Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(dx.data(), dx.size()) +=
        Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(go.data(), go.size());
  });
}

// ---------------------------------------------------------------------------
// Normalisation

/// Row-wise layer normalisation over the last dimension.
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gain, const Var<Scalar>& bias,
                       Scalar eps = Scalar(1e-5)) {
  const Index n = x.cols();
  detail::require(gain.value().size() == n && bias.value().size() == n, "layer_norm", x.shape(), gain.shape());
  const auto& xv = x.value();
  RowVector<Scalar> g = detail::flat(gain.value());
  RowVector<Scalar> b = detail::flat(bias.value());
  Matrix<Scalar> xhat(xv.rows(), n);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(xv.rows());
  for (Index r = 0; r < xv.rows(); ++r) {
    const Scalar mu = xv.row(r).mean();
    const Scalar var = (xv.row(r).array() - mu).square().mean();
    inv_std(r) = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
  }
  Matrix<Scalar> out = xhat.array().rowwise() * g.array();
  out.rowwise() += b;
  return x.graph->record(
      detail::like(x, std::move(out)), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), g](Graph<Scalar>& gr,
                                                                                const Matrix<Scalar>& go) {
        if (gain.requires_grad())
          detail::flat(gr.grad(gain.id)) += go.cwiseProduct(xhat).colwise().sum();
        if (bias.requires_grad()) detail::flat(gr.grad(bias.id)) += go.colwise().sum();
        if (x.requires_grad()) {
          Matrix<Scalar> dxhat = go.array().rowwise() * g.array();
          auto& dx = gr.grad(x.id);
          for (Index r = 0; r < go.rows(); ++r) {
            const Scalar m1 = dxhat.row(r).mean();
            const Scalar m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
            dx.row(r).array() += inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
          }
        }
      });
}

/// Column statistics of a batch: mean and biased variance per column.
template <typename Scalar>
struct BatchMoments {
  RowVector<Scalar> mean;
  RowVector<Scalar> variance;
};

template <typename Scalar>
BatchMoments<Scalar> batch_moments(const Matrix<Scalar>& x) {
  BatchMoments<Scalar> m;
  m.mean = x.colwise().mean();
  m.variance = (x.rowwise() - m.mean).array().square().colwise().mean().matrix();
  return m;
}

/// Batch normalisation over rows using the batch's own statistics, which
/// are returned through `moments` when given.
template <typename Scalar>
Var<Scalar> batch_norm(const Var<Scalar>& x, const Var<Scalar>& gain, const Var<Scalar>& bias,
                       BatchMoments<Scalar>* moments = nullptr, Scalar eps = Scalar(1e-5)) {
  const Index n = x.cols();
  detail::require(gain.value().size() == n && bias.value().size() == n, "batch_norm", x.shape(), gain.shape());
  if (x.rows() < 2) throw ShapeError("batch_norm: batch statistics need at least two rows");
  const auto stats = batch_moments(x.value());
  if (moments) *moments = stats;
  RowVector<Scalar> inv_std = (stats.variance.array() + eps).rsqrt().matrix();
  Matrix<Scalar> xhat = (x.value().rowwise() - stats.mean).array().rowwise() * inv_std.array();
  RowVector<Scalar> g = detail::flat(gain.value());
  Matrix<Scalar> out = xhat.array().rowwise() * g.array();
  out.rowwise() += detail::flat(bias.value());
  return x.graph->record(
      detail::like(x, std::move(out)), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), g](Graph<Scalar>& gr,
                                                                                const Matrix<Scalar>& go) {
        if (gain.requires_grad()) detail::flat(gr.grad(gain.id)) += go.cwiseProduct(xhat).colwise().sum();
        if (bias.requires_grad()) detail::flat(gr.grad(bias.id)) += go.colwise().sum();
        if (x.requires_grad()) {
          const Matrix<Scalar> dxhat = go.array().rowwise() * g.array();
          const RowVector<Scalar> m1 = dxhat.colwise().mean();
          const RowVector<Scalar> m2 = dxhat.cwiseProduct(xhat).colwise().mean();
          Matrix<Scalar> dx = (dxhat.rowwise() - m1) - (xhat.array().rowwise() * m2.array()).matrix();
          gr.grad(x.id) += (dx.array().rowwise() * inv_std.array()).matrix();
        }
      });
}

/// Batch normalisation with fixed statistics.
template <typename Scalar>
Var<Scalar> batch_norm(const Var<Scalar>& x, const Var<Scalar>& gain, const Var<Scalar>& bias,
                       const BatchMoments<Scalar>& fixed, Scalar eps = Scalar(1e-5)) {
  const Index n = x.cols();
  detail::require(gain.value().size() == n && bias.value().size() == n && fixed.mean.size() == n &&
                      fixed.variance.size() == n,
                  "batch_norm", x.shape(), gain.shape());
  const RowVector<Scalar> inv_std = (fixed.variance.array() + eps).rsqrt().matrix();
  Matrix<Scalar> xhat = (x.value().rowwise() - fixed.mean).array().rowwise() * inv_std.array();
  const RowVector<Scalar> g = detail::flat(gain.value());
  Matrix<Scalar> out = xhat.array().rowwise() * g.array();
  out.rowwise() += detail::flat(bias.value());
  return x.graph->record(
      detail::like(x, std::move(out)), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), inv_std, g](Graph<Scalar>& gr, const Matrix<Scalar>& go) {
        if (gain.requires_grad()) detail::flat(gr.grad(gain.id)) += go.cwiseProduct(xhat).colwise().sum();
        if (bias.requires_grad()) detail::flat(gr.grad(bias.id)) += go.colwise().sum();
        if (x.requires_grad())
          gr.grad(x.id) += (go.array().rowwise() * (g.array() * inv_std.array())).matrix();
      });
}

/// Appends the batch's per-column mean and standard deviation to every row:
/// [N, d] -> [N, 3d].
template <typename Scalar>
Var<Scalar> append_batch_moments(const Var<Scalar>& x, Scalar eps = Scalar(1e-5)) {
  const Index n = x.rows(), d = x.cols();
  if (n < 2) throw ShapeError("append_batch_moments: need at least two rows");
  const auto stats = batch_moments(x.value());
  const RowVector<Scalar> sd = (stats.variance.array() + eps).sqrt().matrix();
  Matrix<Scalar> out(n, 3 * d);
  out.leftCols(d) = x.value();
  out.middleCols(d, d).rowwise() = stats.mean;
  out.rightCols(d).rowwise() = sd;
  return x.graph->record(Tensor<Scalar>::from_matrix(std::move(out)), {x},
                         [x, n, d, mean = stats.mean, sd](Graph<Scalar>& g, const Matrix<Scalar>& go) {
                           if (!x.requires_grad()) return;
                           const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);
                           const RowVector<Scalar> gm = go.middleCols(d, d).colwise().sum() * inv_n;
                           const RowVector<Scalar> gs =
                               (go.rightCols(d).colwise().sum().array() / sd.array()).matrix() * inv_n;
                           auto& dx = g.grad(x.id);
                           dx += go.leftCols(d);
                           dx.rowwise() += gm;
                           dx += ((x.value().rowwise() - mean).array().rowwise() * gs.array()).matrix();
                         });
}

namespace detail {

template <typename Scalar, typename Derived>
void softmax_rows_inplace(Eigen::MatrixBase<Derived>& m) {
  for (Index r = 0; r < m.rows(); ++r) {
    const Scalar mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp().matrix();
    m.row(r) /= m.row(r).sum();
  }
}

// dS = A * (dA - rowsum(dA * A))
template <typename Scalar>
Matrix<Scalar> softmax_rows_backward(const Matrix<Scalar>& a, const Matrix<Scalar>& da) {
  Matrix<Scalar> ds = da;
  for (Index r = 0; r < a.rows(); ++r) {
    const Scalar dot = a.row(r).dot(da.row(r));
    ds.row(r) = a.row(r).cwiseProduct((da.row(r).array() - dot).matrix());
  }
  return ds;
}

}  // namespace detail

/// Numerically stable softmax along axis 1 (within rows) or 0 (within columns).
template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& x, int axis = 1) {
  if (axis != 0 && axis != 1) throw ShapeError("softmax: axis must be 0 or 1");
  Matrix<Scalar> out = axis == 1 ? Matrix<Scalar>(x.value()) : Matrix<Scalar>(x.value().transpose());
  detail::softmax_rows_inplace<Scalar>(out);
  Matrix<Scalar> a = out;
  if (axis == 0) out.transposeInPlace();
  return x.graph->record(detail::like(x, std::move(out)), {x},
                         [x, a = std::move(a), axis](Graph<Scalar>& g, const Matrix<Scalar>& go) {
                           if (!x.requires_grad()) return;
                           if (axis == 1) {
                             g.grad(x.id) += detail::softmax_rows_backward<Scalar>(a, go);
                           } else {
                             Matrix<Scalar> got = go.transpose();
                             g.grad(x.id) += detail::softmax_rows_backward<Scalar>(a, got).transpose();
                           }
                         });
}

// ---------------------------------------------------------------------------
// Row bookkeeping

/// Repeats the rows of x `times` times: [r, c] -> [times*r, c].
template <typename Scalar>
Var<Scalar> tile_rows(const Var<Scalar>& x, Index times) {
  const Index r = x.rows();
  Matrix<Scalar> out(r * times, x.cols());
  for (Index t = 0; t < times; ++t) out.middleRows(t * r, r) = x.value();
  return x.graph->record(Tensor<Scalar>::from_matrix(std::move(out)), {x},
                         [x, r, times](Graph<Scalar>& g, const Matrix<Scalar>& go) {
                           if (!x.requires_grad()) return;
                           auto& dx = g.grad(x.id);
                           for (Index t = 0; t < times; ++t) dx += go.middleRows(t * r, r);
                         });
}

/// Averages consecutive blocks of `group` rows: [B*group, c] -> [B, c].
template <typename Scalar>
Var<Scalar> group_mean(const Var<Scalar>& x, Index group) {
  if (group <= 0 || x.rows() % group != 0)
    throw ShapeError("group_mean: " + std::to_string(x.rows()) + " rows not divisible by group " +
                     std::to_string(group));
  const Index b = x.rows() / group;
  Matrix<Scalar> out(b, x.cols());
  for (Index i = 0; i < b; ++i) out.row(i) = x.value().middleRows(i * group, group).colwise().mean();
  return x.graph->record(Tensor<Scalar>::from_matrix(std::move(out)), {x},
                         [x, group, b](Graph<Scalar>& g, const Matrix<Scalar>& go) {
                           if (!x.requires_grad()) return;
                           auto& dx = g.grad(x.id);
                           const Scalar w = Scalar(1) / static_cast<Scalar>(group);
                           for (Index i = 0; i < b; ++i)
                             dx.middleRows(i * group, group).rowwise() += go.row(i) * w;
                         });
}

template <typename Scalar>
Var<Scalar> gather_rows(const Var<Scalar>& x, std::vector<Index> rows) {
  Matrix<Scalar> out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= x.rows()) throw ShapeError("gather_rows: row index out of range");
    out.row(static_cast<Index>(i)) = x.value().row(rows[i]);
  }
  return x.graph->record(Tensor<Scalar>::from_matrix(std::move(out)), {x},
                         [x, rows = std::move(rows)](Graph<Scalar>& g, const Matrix<Scalar>& go) {
                           if (!x.requires_grad()) return;
                           auto& dx = g.grad(x.id);
                           for (std::size_t i = 0; i < rows.size(); ++i) dx.row(rows[i]) += go.row(static_cast<Index>(i));
                         });
}

template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    detail::require(p.rows() == rows, "concat_cols", parts.front().shape(), p.shape());
    cols += p.cols();
  }
  Matrix<Scalar> out(rows, cols);
  Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  return parts.front().graph->record(Tensor<Scalar>::from_matrix(std::move(out)), parts,
                                     [parts](Graph<Scalar>& g, const Matrix<Scalar>& go) {
                                       Index o = 0;
                                       for (const auto& p : parts) {
                                         g.accumulate(p, go.middleCols(o, p.cols()));
                                         o += p.cols();
                                       }
                                     });
}

// ---------------------------------------------------------------------------
// Convolution and pooling on [N, C, H, W] tensors

struct Conv2dGeometry {
  Index channels, height, width;
  Index out_channels, kernel_h, kernel_w;
  Index stride, padding;
  Index out_h() const { return (height + 2 * padding - kernel_h) / stride + 1; }
  Index out_w() const { return (width + 2 * padding - kernel_w) / stride + 1; }
};

namespace detail {

template <typename Scalar>
void im2col(const Scalar* img, const Conv2dGeometry& geo, Matrix<Scalar>& cols) {
  const Index oh = geo.out_h(), ow = geo.out_w();
  cols.resize(geo.channels * geo.kernel_h * geo.kernel_w, oh * ow);
  for (Index c = 0; c < geo.channels; ++c)
    for (Index ki = 0; ki < geo.kernel_h; ++ki)
      for (Index kj = 0; kj < geo.kernel_w; ++kj) {
        const Index row = (c * geo.kernel_h + ki) * geo.kernel_w + kj;
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * geo.stride - geo.padding + ki;
          for (Index ox = 0; ox < ow; ++ox) {
            const Index ix = ox * geo.stride - geo.padding + kj;
            const bool inside = iy >= 0 && iy < geo.height && ix >= 0 && ix < geo.width;
            cols(row, oy * ow + ox) = inside ? img[(c * geo.height + iy) * geo.width + ix] : Scalar(0);
          }
        }
      }
}

template <typename Scalar>
void col2im_add(const Matrix<Scalar>& cols, const Conv2dGeometry& geo, Scalar* img) {
  const Index oh = geo.out_h(), ow = geo.out_w();
  for (Index c = 0; c < geo.channels; ++c)
    for (Index ki = 0; ki < geo.kernel_h; ++ki)
      for (Index kj = 0; kj < geo.kernel_w; ++kj) {
        const Index row = (c * geo.kernel_h + ki) * geo.kernel_w + kj;
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * geo.stride - geo.padding + ki;
          if (iy < 0 || iy >= geo.height) continue;
          for (Index ox = 0; ox < ow; ++ox) {
            const Index ix = ox * geo.stride - geo.padding + kj;
            if (ix < 0 || ix >= geo.width) continue;
            img[(c * geo.height + iy) * geo.width + ix] += cols(row, oy * ow + ox);
          }
        }
      }
}

}  // namespace detail

/// 2-D cross-correlation. x: [N, C, H, W]; kernel: [O, C, kh, kw]; bias: [O].
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& kernel, const Var<Scalar>& bias, Index stride = 1,
                   Index padding = 0) {
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if (xs.size() != 4 || ks.size() != 4 || xs[1] != ks[1] || bias.value().size() != ks[0])
    throw ShapeError("conv2d: incompatible shapes " + shape_string(xs) + " and " + shape_string(ks));
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: stride must be >= 1 and padding >= 0");
  const Conv2dGeometry geo{xs[1], xs[2], xs[3], ks[0], ks[2], ks[3], stride, padding};
  if (geo.out_h() < 1 || geo.out_w() < 1)
    throw ShapeError("conv2d: kernel " + shape_string(ks) + " larger than padded input " + shape_string(xs));
  const Index n = xs[0];
  const Index oh = geo.out_h(), ow = geo.out_w();
  const auto& kmat = kernel.value();  // [O, C*kh*kw]
  RowVector<Scalar> bvec = detail::flat(bias.value());
  Matrix<Scalar> out(n, geo.out_channels * oh * ow);
  Matrix<Scalar> cols;
  Matrix<Scalar> y;
  for (Index i = 0; i < n; ++i) {
    detail::im2col(x.value().row(i).data(), geo, cols);
    y.noalias() = kmat * cols;
    y.colwise() += bvec.transpose();
    out.row(i) = Eigen::Map<const RowVector<Scalar>>(y.data(), y.size());
  }
  return x.graph->record(
      Tensor<Scalar>({n, geo.out_channels, oh, ow}, std::move(out)), {x, kernel, bias},
      [x, kernel, bias, geo, n, oh, ow](Graph<Scalar>& g, const Matrix<Scalar>& go) {
        Matrix<Scalar> cols;
        Matrix<Scalar> dcols;
        const auto& kmat = kernel.value();
        for (Index i = 0; i < n; ++i) {
          const Eigen::Map<const Matrix<Scalar>> gi(go.row(i).data(), geo.out_channels, oh * ow);
          if (kernel.requires_grad()) {
            detail::im2col(x.value().row(i).data(), geo, cols);
            g.grad(kernel.id).noalias() += gi * cols.transpose();
          }
          if (bias.requires_grad()) detail::flat(g.grad(bias.id)) += gi.rowwise().sum().transpose();
          if (x.requires_grad()) {
            dcols.noalias() = kmat.transpose() * gi;
            detail::col2im_add(dcols, geo, g.grad(x.id).row(i).data());
          }
        }
      });
}

/// Non-overlapping average pooling with a square window.
template <typename Scalar>
Var<Scalar> avg_pool2d(const Var<Scalar>& x, Index window) {
  const Shape& xs = x.shape();
  if (xs.size() != 4 || window < 1 || xs[2] % window != 0 || xs[3] % window != 0)
    throw ShapeError("avg_pool2d: shape " + shape_string(xs) + " not divisible by window " + std::to_string(window));
  const Index n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const Index oh = h / window, ow = w / window;
  const Scalar inv = Scalar(1) / static_cast<Scalar>(window * window);
  Matrix<Scalar> out = Matrix<Scalar>::Zero(n, c * oh * ow);
  for (Index i = 0; i < n; ++i) {
    const Scalar* src = x.value().row(i).data();
    for (Index ch = 0; ch < c; ++ch)
      for (Index y = 0; y < h; ++y)
        for (Index xx = 0; xx < w; ++xx)
          out(i, (ch * oh + y / window) * ow + xx / window) += src[(ch * h + y) * w + xx] * inv;
  }
  return x.graph->record(Tensor<Scalar>({n, c, oh, ow}, std::move(out)), {x},
                         [x, n, c, h, w, oh, ow, window, inv](Graph<Scalar>& g, const Matrix<Scalar>& go) {
                           if (!x.requires_grad()) return;
                           auto& dx = g.grad(x.id);
                           for (Index i = 0; i < n; ++i)
                             for (Index ch = 0; ch < c; ++ch)
                               for (Index y = 0; y < h; ++y)
                                 for (Index xx = 0; xx < w; ++xx)
                                   dx(i, (ch * h + y) * w + xx) += go(i, (ch * oh + y / window) * ow + xx / window) * inv;
                         });
}

// ---------------------------------------------------------------------------
// Attention

template <typename Scalar>
struct AttentionResult {
  Var<Scalar> output;
  /// Softmax weights stacked as [groups * heads * n_queries, n_keys], group-major then head.
  std::shared_ptr<const Matrix<Scalar>> weights;
};

/// Batched multi-head scaled dot-product attention.
///
/// Queries are [groups * n_queries, D]; keys and values are
/// [groups * n_keys, D]. Each group attends only within itself, and each of
/// `heads` heads uses a contiguous D/heads slice of the columns. Queries never
/// attend to one another, only to the keys of their group.
template <typename Scalar>
AttentionResult<Scalar> scaled_dot_attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v,
                                             Scalar scale, Index groups = 1, Index heads = 1) {
  const Index d = q.cols();
  if (k.cols() != d || v.cols() != d) throw ShapeError("attention: inner dimensions differ: " +
                                                       shape_string(q.shape()) + " and " + shape_string(k.shape()));
  if (k.rows() != v.rows()) throw ShapeError("attention: keys " + shape_string(k.shape()) + " and values " +
                                             shape_string(v.shape()) + " differ in length");
  if (groups < 1 || q.rows() % groups != 0 || k.rows() % groups != 0)
    throw ShapeError("attention: rows not divisible into " + std::to_string(groups) + " groups");
  if (heads < 1 || d % heads != 0)
    throw ShapeError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  const Index nq = q.rows() / groups, nk = k.rows() / groups, dh = d / heads;
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  auto weights = std::make_shared<Matrix<Scalar>>(groups * heads * nq, nk);
  Matrix<Scalar> out(q.rows(), d);
  for (Index gi = 0; gi < groups; ++gi)
    for (Index h = 0; h < heads; ++h) {
      auto a = weights->middleRows((gi * heads + h) * nq, nq);
      a.noalias() = qv.block(gi * nq, h * dh, nq, dh) * kv.block(gi * nk, h * dh, nk, dh).transpose();
      a *= scale;
      detail::softmax_rows_inplace<Scalar>(a);
      out.block(gi * nq, h * dh, nq, dh).noalias() = a * vv.block(gi * nk, h * dh, nk, dh);
    }
  std::shared_ptr<const Matrix<Scalar>> w = weights;
  Var<Scalar> y = q.graph->record(
      Tensor<Scalar>::from_matrix(std::move(out)), {q, k, v},
      [q, k, v, w, scale, groups, heads, nq, nk, dh](Graph<Scalar>& g, const Matrix<Scalar>& go) {
        const auto& qv = q.value();
        const auto& kv = k.value();
        const auto& vv = v.value();
        Matrix<Scalar> da, ds;
        for (Index gi = 0; gi < groups; ++gi)
          for (Index h = 0; h < heads; ++h) {
            const Matrix<Scalar> a = w->middleRows((gi * heads + h) * nq, nq);
            const auto dout = go.block(gi * nq, h * dh, nq, dh);
            if (v.requires_grad()) g.grad(v.id).block(gi * nk, h * dh, nk, dh).noalias() += a.transpose() * dout;
            if (!q.requires_grad() && !k.requires_grad()) continue;
            da.noalias() = dout * vv.block(gi * nk, h * dh, nk, dh).transpose();
            ds = detail::softmax_rows_backward<Scalar>(a, da);
            ds *= scale;
            if (q.requires_grad())
              g.grad(q.id).block(gi * nq, h * dh, nq, dh).noalias() += ds * kv.block(gi * nk, h * dh, nk, dh);
            if (k.requires_grad())
              g.grad(k.id).block(gi * nk, h * dh, nk, dh).noalias() += ds.transpose() * qv.block(gi * nq, h * dh, nq, dh);
          }
      });
  return {y, w};
}

// ---------------------------------------------------------------------------
// Losses

/// Mean binary cross-entropy of probabilities against {0,1} (or soft) targets.
template <typename Scalar>
Var<Scalar> binary_cross_entropy(const Var<Scalar>& probs, const Matrix<Scalar>& targets) {
  if (probs.rows() != targets.rows() || probs.cols() != targets.cols())
    throw ShapeError("binary_cross_entropy: prediction " + shape_string(probs.shape()) + " vs targets " +
                     std::to_string(targets.rows()) + "x" + std::to_string(targets.cols()));
  constexpr Scalar eps = std::numeric_limits<Scalar>::epsilon();
  const Matrix<Scalar> p = probs.value().cwiseMax(eps).cwiseMin(Scalar(1) - eps);
  const Scalar n = static_cast<Scalar>(p.size());
  const Scalar loss =
      -(targets.array() * p.array().log() + (Scalar(1) - targets.array()) * (Scalar(1) - p.array()).log()).sum() / n;
  Matrix<Scalar> out(1, 1);
  out(0, 0) = loss;
  return probs.graph->record(Tensor<Scalar>({1}, std::move(out)), {probs},
                             [probs, p, targets, n](Graph<Scalar>& g, const Matrix<Scalar>& go) {
                               const Matrix<Scalar> d =
                                   ((p - targets).array() / (p.array() * (Scalar(1) - p.array()))).matrix();
                               g.accumulate(probs, d * (go(0, 0) / n));
                             });
}

/// Mean squared error against fixed targets.
template <typename Scalar>
Var<Scalar> mse_loss(const Var<Scalar>& pred, const Matrix<Scalar>& targets) {
  if (pred.rows() != targets.rows() || pred.cols() != targets.cols())
    throw ShapeError("mse_loss: prediction " + shape_string(pred.shape()) + " vs targets " +
                     std::to_string(targets.rows()) + "x" + std::to_string(targets.cols()));
  const Matrix<Scalar> diff = pred.value() - targets;
  const Scalar n = static_cast<Scalar>(diff.size());
  Matrix<Scalar> out(1, 1);
  out(0, 0) = diff.squaredNorm() / n;
  return pred.graph->record(Tensor<Scalar>({1}, std::move(out)), {pred},
                            [pred, diff, n](Graph<Scalar>& g, const Matrix<Scalar>& go) {
                              g.accumulate(pred, diff * (Scalar(2) * go(0, 0) / n));
                            });
}

}  // namespace bmx::nn
