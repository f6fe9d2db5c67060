#include "comen/ops.hpp"

#include "comen/errors.hpp"

#include <cmath>
#include <string>

namespace comen {

namespace {

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

Index normalize_axis(Index axis, Index rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return axis;
}

// Splits a shape around one axis into (outer, extent, inner) so that element
// (o, j, i) lives at flat index (o * extent + j) * inner + i.
struct AxisSplit {
  Index outer = 1;
  Index extent = 1;
  Index inner = 1;
};

AxisSplit split_at(const Shape& shape, Index axis) {
  AxisSplit s;
  for (Index d = 0; d < static_cast<Index>(shape.size()); ++d) {
    if (d < axis) s.outer *= shape[d];
    else if (d == axis) s.extent = shape[d];
    else s.inner *= shape[d];
  }
  return s;
}

// Per-output-dimension strides of an input aligned to the right of `out`;
// broadcast dimensions get stride 0.
std::vector<Index> broadcast_strides(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<Index> strides(r, 0);
  Index stride = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t din = in.size() - 1 - k;
    const std::size_t dout = r - 1 - k;
    strides[dout] = in[din] == 1 ? 0 : stride;
    stride *= in[din];
  }
  return strides;
}

// Calls f(out_index, a_index, b_index) for every element of `out`.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<Index>& sa, const std::vector<Index>& sb, F&& f) {
  const std::size_t r = out.size();
  if (r == 0) {
    f(Index{0}, Index{0}, Index{0});
    return;
  }
  const Index inner = out[r - 1];
  const Index ia = sa[r - 1];
  const Index ib = sb[r - 1];
  const Index total = numel(out);
  std::vector<Index> counter(r, 0);
  Index oa = 0;
  Index ob = 0;
  for (Index o = 0; o < total; o += inner) {
    for (Index j = 0; j < inner; ++j) f(o + j, oa + j * ia, ob + j * ib);
    for (std::size_t d = r - 1; d-- > 0;) {
      ++counter[d];
      oa += sa[d];
      ob += sb[d];
      if (counter[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      counter[d] = 0;
    }
  }
}

// Elementwise binary op. fwd(x, y) -> z; da(x, y, z) and db(x, y, z) are the
// local partial derivatives.
template <class Fwd, class Da, class Db>
Tensor binary(OpKind kind, const Tensor& a, const Tensor& b, Fwd fwd, Da da, Db db) {
  const char* name = to_string(kind);
  if (a.shape() == b.shape()) {
    const Array& x = a.values();
    const Array& y = b.values();
    Array z(x.size());
    for (Index i = 0; i < z.size(); ++i) z[i] = fwd(x[i], y[i]);
    return Tensor::make_result(kind, a.shape(), std::move(z), {a, b}, [da, db](const BackwardContext& ctx) {
      const Array& x = *ctx.input_values[0];
      const Array& y = *ctx.input_values[1];
      const Array& g = ctx.grad_out;
      const Array& z = ctx.value_out;
      if (Array* gx = ctx.input_grads[0]) {
        for (Index i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * da(x[i], y[i], z[i]);
      }
      if (Array* gy = ctx.input_grads[1]) {
        for (Index i = 0; i < g.size(); ++i) (*gy)[i] += g[i] * db(x[i], y[i], z[i]);
      }
    });
  }
  Shape out = broadcast_shape(a.shape(), b.shape(), name);
  auto sa = broadcast_strides(a.shape(), out);
  auto sb = broadcast_strides(b.shape(), out);
  Array z(numel(out));
  const Array& x = a.values();
  const Array& y = b.values();
  for_each_broadcast(out, sa, sb, [&](Index o, Index i, Index j) { z[o] = fwd(x[i], y[j]); });
  return Tensor::make_result(kind, out, std::move(z), {a, b}, [out, sa, sb, da, db](const BackwardContext& ctx) {
    const Array& x = *ctx.input_values[0];
    const Array& y = *ctx.input_values[1];
    const Array& g = ctx.grad_out;
    const Array& z = ctx.value_out;
    Array* gx = ctx.input_grads[0];
    Array* gy = ctx.input_grads[1];
    for_each_broadcast(out, sa, sb, [&](Index o, Index i, Index j) {
      if (gx) (*gx)[i] += g[o] * da(x[i], y[j], z[o]);
      if (gy) (*gy)[j] += g[o] * db(x[i], y[j], z[o]);
    });
  });
}

// Elementwise unary op with local derivative d(x, z).
template <class Fwd, class D>
Tensor unary(OpKind kind, const Tensor& a, Fwd fwd, D d) {
  const Array& x = a.values();
  Array z(x.size());
  for (Index i = 0; i < z.size(); ++i) z[i] = fwd(x[i]);
  return Tensor::make_result(kind, a.shape(), std::move(z), {a}, [d](const BackwardContext& ctx) {
    Array* gx = ctx.input_grads[0];
    if (!gx) return;
    const Array& x = *ctx.input_values[0];
    const Array& z = ctx.value_out;
    const Array& g = ctx.grad_out;
    for (Index i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * d(x[i], z[i]);
  });
}

Shape drop_axis(const Shape& shape, Index axis, bool keepdim) {
  Shape out = shape;
  if (keepdim) out[static_cast<std::size_t>(axis)] = 1;
  else out.erase(out.begin() + axis);
  return out;
}

Tensor reduce_axis(OpKind kind, const Tensor& x, Index axis, bool keepdim, double scale) {
  axis = normalize_axis(axis, x.rank(), to_string(kind));
  const AxisSplit s = split_at(x.shape(), axis);
  const Array& v = x.values();
  Array z = Array::Zero(s.outer * s.inner);
  for (Index o = 0; o < s.outer; ++o)
    for (Index j = 0; j < s.extent; ++j)
      for (Index i = 0; i < s.inner; ++i) z[o * s.inner + i] += v[(o * s.extent + j) * s.inner + i];
  z *= scale;
  return Tensor::make_result(kind, drop_axis(x.shape(), axis, keepdim), std::move(z), {x},
                             [s, scale](const BackwardContext& ctx) {
                               Array* gx = ctx.input_grads[0];
                               if (!gx) return;
                               const Array& g = ctx.grad_out;
                               for (Index o = 0; o < s.outer; ++o)
                                 for (Index j = 0; j < s.extent; ++j)
                                   for (Index i = 0; i < s.inner; ++i)
                                     (*gx)[(o * s.extent + j) * s.inner + i] += scale * g[o * s.inner + i];
                             });
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t k = 0; k < r; ++k) {
    const Index da = k < a.size() ? a[a.size() - 1 - k] : 1;
    const Index db = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (da != db && da != 1 && db != 1) shape_mismatch(op, a, b);
    out[r - 1 - k] = std::max(da, db);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      OpKind::kAdd, a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      OpKind::kSub, a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      OpKind::kMul, a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      OpKind::kDiv, a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; }, [](double, double y, double z) { return -z / y; });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
Tensor operator+(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
Tensor operator-(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
Tensor operator*(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
Tensor operator*(double a, const Tensor& b) { return mul(Tensor::scalar(a), b); }
Tensor operator/(const Tensor& a, double b) { return div(a, Tensor::scalar(b)); }
Tensor operator-(const Tensor& a) { return mul(a, Tensor::scalar(-1.0)); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_mismatch("matmul", a.shape(), b.shape());
  const Index n = a.dim(0);
  const Index k = a.dim(1);
  const Index m = b.dim(1);
  RowMatrix out = a.matrix() * b.matrix();
  Array z = Eigen::Map<const Array>(out.data(), out.size());
  return Tensor::make_result(OpKind::kMatmul, {n, m}, std::move(z), {a, b}, [n, k, m](const BackwardContext& ctx) {
    Eigen::Map<const RowMatrix> g(ctx.grad_out.data(), n, m);
    Eigen::Map<const RowMatrix> x(ctx.input_values[0]->data(), n, k);
    Eigen::Map<const RowMatrix> y(ctx.input_values[1]->data(), k, m);
    if (Array* gx = ctx.input_grads[0]) Eigen::Map<RowMatrix>(gx->data(), n, k).noalias() += g * y.transpose();
    if (Array* gy = ctx.input_grads[1]) Eigen::Map<RowMatrix>(gy->data(), k, m).noalias() += x.transpose() * g;
  });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("transpose: expected rank 2, got shape " + to_string(x.shape()));
  const Index n = x.dim(0);
  const Index m = x.dim(1);
  RowMatrix t = x.matrix().transpose();
  Array z = Eigen::Map<const Array>(t.data(), t.size());
  return Tensor::make_result(OpKind::kTranspose, {m, n}, std::move(z), {x}, [n, m](const BackwardContext& ctx) {
    Array* gx = ctx.input_grads[0];
    if (!gx) return;
    Eigen::Map<const RowMatrix> g(ctx.grad_out.data(), m, n);
    Eigen::Map<RowMatrix>(gx->data(), n, m) += g.transpose();
  });
}

Tensor exp(const Tensor& x) {
  return unary(
      OpKind::kExp, x, [](double v) { return std::exp(v); }, [](double, double z) { return z; });
}

Tensor log(const Tensor& x) {
  if ((x.values() < 0.0).any()) throw DomainError("log: negative input");
  return unary(
      OpKind::kLog, x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  if ((x.values() < 0.0).any()) throw DomainError("sqrt: negative input");
  return unary(
      OpKind::kSqrt, x, [](double v) { return std::sqrt(v); }, [](double, double z) { return 0.5 / z; });
}

Tensor relu(const Tensor& x) {
  return unary(
      OpKind::kRelu, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      OpKind::kLeakyRelu, x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor clamp_min(const Tensor& x, double floor) {
  return unary(
      OpKind::kClampMin, x, [floor](double v) { return v > floor ? v : floor; },
      [floor](double v, double) { return v > floor ? 1.0 : 0.0; });
}

Tensor square(const Tensor& x) { return mul(x, x); }

Tensor softmax(const Tensor& x, Index axis) {
  axis = normalize_axis(axis, x.rank(), "softmax");
  const AxisSplit s = split_at(x.shape(), axis);
  const Array& v = x.values();
  Array z(v.size());
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.extent * s.inner + i;
      double mx = v[base];
      for (Index j = 1; j < s.extent; ++j) mx = std::max(mx, v[base + j * s.inner]);
      double total = 0.0;
      for (Index j = 0; j < s.extent; ++j) total += z[base + j * s.inner] = std::exp(v[base + j * s.inner] - mx);
      for (Index j = 0; j < s.extent; ++j) z[base + j * s.inner] /= total;
    }
  }
  return Tensor::make_result(OpKind::kSoftmax, x.shape(), std::move(z), {x}, [s](const BackwardContext& ctx) {
    Array* gx = ctx.input_grads[0];
    if (!gx) return;
    const Array& y = ctx.value_out;
    const Array& g = ctx.grad_out;
    for (Index o = 0; o < s.outer; ++o) {
      for (Index i = 0; i < s.inner; ++i) {
        const Index base = o * s.extent * s.inner + i;
        double dot = 0.0;
        for (Index j = 0; j < s.extent; ++j) dot += g[base + j * s.inner] * y[base + j * s.inner];
        for (Index j = 0; j < s.extent; ++j) {
          const Index p = base + j * s.inner;
          (*gx)[p] += y[p] * (g[p] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, Index axis) {
  axis = normalize_axis(axis, x.rank(), "log_softmax");
  const AxisSplit s = split_at(x.shape(), axis);
  const Array& v = x.values();
  Array z(v.size());
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.extent * s.inner + i;
      double mx = v[base];
      for (Index j = 1; j < s.extent; ++j) mx = std::max(mx, v[base + j * s.inner]);
      double total = 0.0;
      for (Index j = 0; j < s.extent; ++j) total += std::exp(v[base + j * s.inner] - mx);
      const double lse = mx + std::log(total);
      for (Index j = 0; j < s.extent; ++j) z[base + j * s.inner] = v[base + j * s.inner] - lse;
    }
  }
  return Tensor::make_result(OpKind::kLogSoftmax, x.shape(), std::move(z), {x}, [s](const BackwardContext& ctx) {
    Array* gx = ctx.input_grads[0];
    if (!gx) return;
    const Array& y = ctx.value_out;
    const Array& g = ctx.grad_out;
    for (Index o = 0; o < s.outer; ++o) {
      for (Index i = 0; i < s.inner; ++i) {
        const Index base = o * s.extent * s.inner + i;
        double gsum = 0.0;
        for (Index j = 0; j < s.extent; ++j) gsum += g[base + j * s.inner];
        for (Index j = 0; j < s.extent; ++j) {
          const Index p = base + j * s.inner;
          (*gx)[p] += g[p] - std::exp(y[p]) * gsum;
        }
      }
    }
  });
}

Tensor sum(const Tensor& x, Index axis, bool keepdim) { return reduce_axis(OpKind::kSum, x, axis, keepdim, 1.0); }

Tensor sum(const Tensor& x) {
  return Tensor::make_result(OpKind::kSum, {}, Array::Constant(1, x.values().sum()), {x},
                             [](const BackwardContext& ctx) {
                               if (Array* gx = ctx.input_grads[0]) *gx += ctx.grad_out[0];
                             });
}

Tensor mean(const Tensor& x, Index axis, bool keepdim) {
  const Index extent = x.dim(axis);
  return reduce_axis(OpKind::kMean, x, axis, keepdim, 1.0 / static_cast<double>(extent));
}

Tensor mean(const Tensor& x) {
  const double scale = 1.0 / static_cast<double>(x.size());
  return Tensor::make_result(OpKind::kMean, {}, Array::Constant(1, x.values().sum() * scale), {x},
                             [scale](const BackwardContext& ctx) {
                               if (Array* gx = ctx.input_grads[0]) *gx += ctx.grad_out[0] * scale;
                             });
}

Tensor concat(const std::vector<Tensor>& parts, Index axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  axis = normalize_axis(axis, static_cast<Index>(first.size()), "concat");
  Shape out = first;
  out[static_cast<std::size_t>(axis)] = 0;
  std::vector<Index> extents;
  for (const Tensor& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != first.size()) shape_mismatch("concat", first, probe);
    extents.push_back(probe[static_cast<std::size_t>(axis)]);
    probe[static_cast<std::size_t>(axis)] = first[static_cast<std::size_t>(axis)];
    if (probe != first) shape_mismatch("concat", first, p.shape());
    out[static_cast<std::size_t>(axis)] += extents.back();
  }
  const AxisSplit s = split_at(out, axis);
  Array z(numel(out));
  Index offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Array& v = parts[k].values();
    const Index block = extents[k] * s.inner;
    for (Index o = 0; o < s.outer; ++o) z.segment(o * s.extent * s.inner + offset, block) = v.segment(o * block, block);
    offset += block;
  }
  return Tensor::make_result(OpKind::kConcat, out, std::move(z), parts, [s, extents](const BackwardContext& ctx) {
    Index offset = 0;
    for (std::size_t k = 0; k < extents.size(); ++k) {
      const Index block = extents[k] * s.inner;
      if (Array* gk = ctx.input_grads[k]) {
        for (Index o = 0; o < s.outer; ++o)
          gk->segment(o * block, block) += ctx.grad_out.segment(o * s.extent * s.inner + offset, block);
      }
      offset += block;
    }
  });
}

Tensor slice(const Tensor& x, Index axis, Index start, Index stop) {
  axis = normalize_axis(axis, x.rank(), "slice");
  const Index extent = x.dim(axis);
  if (start < 0 || stop > extent || start >= stop) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(stop) +
                     ") invalid for shape " + to_string(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out = x.shape();
  out[static_cast<std::size_t>(axis)] = stop - start;
  const Index block = (stop - start) * s.inner;
  Array z(numel(out));
  for (Index o = 0; o < s.outer; ++o) z.segment(o * block, block) = x.values().segment((o * extent + start) * s.inner, block);
  return Tensor::make_result(OpKind::kSlice, out, std::move(z), {x}, [s, block, start](const BackwardContext& ctx) {
    Array* gx = ctx.input_grads[0];
    if (!gx) return;
    for (Index o = 0; o < s.outer; ++o)
      gx->segment((o * s.extent + start) * s.inner, block) += ctx.grad_out.segment(o * block, block);
  });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (broadcast_shape(x.shape(), shape, "broadcast") != shape) shape_mismatch("broadcast", x.shape(), shape);
  auto sx = broadcast_strides(x.shape(), shape);
  std::vector<Index> none(shape.size(), 0);
  Array z(numel(shape));
  const Array& v = x.values();
  for_each_broadcast(shape, sx, none, [&](Index o, Index i, Index) { z[o] = v[i]; });
  return Tensor::make_result(OpKind::kBroadcast, shape, std::move(z), {x},
                             [shape, sx, none](const BackwardContext& ctx) {
                               Array* gx = ctx.input_grads[0];
                               if (!gx) return;
                               for_each_broadcast(shape, sx, none,
                                                  [&](Index o, Index i, Index) { (*gx)[i] += ctx.grad_out[o]; });
                             });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) shape_mismatch("reshape", x.shape(), shape);
  return Tensor::make_result(OpKind::kReshape, std::move(shape), x.values(), {x}, [](const BackwardContext& ctx) {
    if (Array* gx = ctx.input_grads[0]) *gx += ctx.grad_out;
  });
}

namespace {

struct ConvGeometry {
  Index batch, cin, h, w, cout, kh, kw, pad, oh, ow;
};

// Unfolds one image (cin x h x w) into a (cin*kh*kw) x (oh*ow) column matrix.
void im2col(const double* img, const ConvGeometry& g, RowMatrix& cols) {
  cols.setZero(g.cin * g.kh * g.kw, g.oh * g.ow);
  for (Index c = 0; c < g.cin; ++c)
    for (Index ky = 0; ky < g.kh; ++ky)
      for (Index kx = 0; kx < g.kw; ++kx) {
        const Index row = (c * g.kh + ky) * g.kw + kx;
        for (Index y = 0; y < g.oh; ++y) {
          const Index sy = y + ky - g.pad;
          if (sy < 0 || sy >= g.h) continue;
          for (Index x = 0; x < g.ow; ++x) {
            const Index sx = x + kx - g.pad;
            if (sx < 0 || sx >= g.w) continue;
            cols(row, y * g.ow + x) = img[(c * g.h + sy) * g.w + sx];
          }
        }
      }
}

void col2im(const RowMatrix& cols, const ConvGeometry& g, double* img) {
  for (Index c = 0; c < g.cin; ++c)
    for (Index ky = 0; ky < g.kh; ++ky)
      for (Index kx = 0; kx < g.kw; ++kx) {
        const Index row = (c * g.kh + ky) * g.kw + kx;
        for (Index y = 0; y < g.oh; ++y) {
          const Index sy = y + ky - g.pad;
          if (sy < 0 || sy >= g.h) continue;
          for (Index x = 0; x < g.ow; ++x) {
            const Index sx = x + kx - g.pad;
            if (sx < 0 || sx >= g.w) continue;
            img[(c * g.h + sy) * g.w + sx] += cols(row, y * g.ow + x);
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Index pad) {
  if (x.rank() != 4 || weight.rank() != 4 || bias.rank() != 1 || x.dim(1) != weight.dim(1) ||
      bias.dim(0) != weight.dim(0)) {
    throw ShapeError("conv2d: incompatible shapes input " + to_string(x.shape()) + ", weight " +
                     to_string(weight.shape()) + ", bias " + to_string(bias.shape()));
  }
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), weight.dim(3), pad, 0, 0};
  g.oh = g.h + 2 * pad - g.kh + 1;
  g.ow = g.w + 2 * pad - g.kw + 1;
  if (pad < 0 || g.oh <= 0 || g.ow <= 0) throw ShapeError("conv2d: kernel larger than padded input");
  const Index in_size = g.cin * g.h * g.w;
  const Index out_size = g.cout * g.oh * g.ow;
  Eigen::Map<const RowMatrix> wmat(weight.values().data(), g.cout, g.cin * g.kh * g.kw);
  Array z(g.batch * out_size);
  RowMatrix cols;
  for (Index b = 0; b < g.batch; ++b) {
    im2col(x.values().data() + b * in_size, g, cols);
    Eigen::Map<RowMatrix> out(z.data() + b * out_size, g.cout, g.oh * g.ow);
    out.noalias() = wmat * cols;
    out.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.values().data(), g.cout);
  }
  return Tensor::make_result(
      OpKind::kConv2d, {g.batch, g.cout, g.oh, g.ow}, std::move(z), {x, weight, bias},
      [g, in_size, out_size](const BackwardContext& ctx) {
        const Array& xin = *ctx.input_values[0];
        Eigen::Map<const RowMatrix> wmat(ctx.input_values[1]->data(), g.cout, g.cin * g.kh * g.kw);
        Array* gx = ctx.input_grads[0];
        Array* gw = ctx.input_grads[1];
        Array* gb = ctx.input_grads[2];
        RowMatrix cols;
        RowMatrix dcols;
        for (Index b = 0; b < g.batch; ++b) {
          Eigen::Map<const RowMatrix> gout(ctx.grad_out.data() + b * out_size, g.cout, g.oh * g.ow);
          if (gw) {
            im2col(xin.data() + b * in_size, g, cols);
            Eigen::Map<RowMatrix>(gw->data(), g.cout, g.cin * g.kh * g.kw).noalias() += gout * cols.transpose();
          }
          if (gb) Eigen::Map<Eigen::VectorXd>(gb->data(), g.cout) += gout.rowwise().sum();
          if (gx) {
            dcols.noalias() = wmat.transpose() * gout;
            col2im(dcols, g, gx->data() + b * in_size);
          }
        }
      });
}

Tensor avg_pool2d(const Tensor& x, Index k) {
  if (x.rank() != 4 || k <= 0 || x.dim(2) % k != 0 || x.dim(3) % k != 0) {
    throw ShapeError("avg_pool2d: shape " + to_string(x.shape()) + " not divisible by window " + std::to_string(k));
  }
  const Index planes = x.dim(0) * x.dim(1);
  const Index h = x.dim(2);
  const Index w = x.dim(3);
  const Index oh = h / k;
  const Index ow = w / k;
  const double scale = 1.0 / static_cast<double>(k * k);
  const Array& v = x.values();
  Array z = Array::Zero(planes * oh * ow);
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < h; ++y)
      for (Index xx = 0; xx < w; ++xx) z[(p * oh + y / k) * ow + xx / k] += scale * v[(p * h + y) * w + xx];
  return Tensor::make_result(OpKind::kAvgPool2d, {x.dim(0), x.dim(1), oh, ow}, std::move(z), {x},
                             [planes, h, w, oh, ow, k, scale](const BackwardContext& ctx) {
                               Array* gx = ctx.input_grads[0];
                               if (!gx) return;
                               for (Index p = 0; p < planes; ++p)
                                 for (Index y = 0; y < h; ++y)
                                   for (Index xx = 0; xx < w; ++xx)
                                     (*gx)[(p * h + y) * w + xx] += scale * ctx.grad_out[(p * oh + y / k) * ow + xx / k];
                             });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<Index>(labels.size())) {
    throw ShapeError("cross_entropy: logits " + to_string(logits.shape()) + " vs " + std::to_string(labels.size()) +
                     " labels");
  }
  const Index n = logits.dim(0);
  const Index k = logits.dim(1);
  Array onehot = Array::Zero(n * k);
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " outside [0, K)");
    onehot[i * k + y] = 1.0;
  }
  const Tensor picked = sum(log_softmax(logits, 1) * Tensor({n, k}, std::move(onehot)));
  return picked * (-1.0 / static_cast<double>(n));
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  if (x.rank() != 2) throw ShapeError("l2_normalize_rows: expected rank 2, got " + to_string(x.shape()));
  return x / sqrt(clamp_min(sum(square(x), 1, true), eps * eps));
}

}  // namespace comen
