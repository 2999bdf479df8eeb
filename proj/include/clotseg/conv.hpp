#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

#include "clotseg/ops.hpp"
#include "clotseg/tensor.hpp"

namespace clotseg {

enum class Padding { kSame, kValid };

namespace detail {

/// Gathers the input into the column matrix: row (ci, ky, kx) of `col`
/// holds the input values each output position sees through that kernel
/// tap. The stride-1 case copies contiguous row segments.
template <typename S>
void im2col_fill(const S* x, S* col, std::int64_t cin, std::int64_t h, std::int64_t w,
                 std::int64_t k, std::int64_t pad, std::int64_t stride, std::int64_t ho,
                 std::int64_t wo) {
  for (std::int64_t ci = 0; ci < cin; ++ci)
    for (std::int64_t ky = 0; ky < k; ++ky)
      for (std::int64_t kx = 0; kx < k; ++kx) {
        S* row = col + ((ci * k + ky) * k + kx) * ho * wo;
        for (std::int64_t oy = 0; oy < ho; ++oy) {
          const std::int64_t iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          if (stride == 1) {
            const std::int64_t ox0 = std::max<std::int64_t>(0, pad - kx);
            const std::int64_t ox1 = std::min(wo - 1, w - 1 - kx + pad);
            if (ox0 > ox1) continue;
            std::copy_n(x + (ci * h + iy) * w + (ox0 + kx - pad), ox1 - ox0 + 1,
                        row + oy * wo + ox0);
          } else {
            for (std::int64_t ox = 0; ox < wo; ++ox) {
              const std::int64_t ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= w) continue;
              row[oy * wo + ox] = x[(ci * h + iy) * w + ix];
            }
          }
        }
      }
}

/// Scatters column-matrix gradients back to the input image (inverse of
/// im2col_fill).
template <typename S>
void col2im_accumulate(const S* col, S* gx, std::int64_t cin, std::int64_t h, std::int64_t w,
                       std::int64_t k, std::int64_t pad, std::int64_t stride, std::int64_t ho,
                       std::int64_t wo) {
  for (std::int64_t ci = 0; ci < cin; ++ci)
    for (std::int64_t ky = 0; ky < k; ++ky)
      for (std::int64_t kx = 0; kx < k; ++kx) {
        const S* row = col + ((ci * k + ky) * k + kx) * ho * wo;
        for (std::int64_t oy = 0; oy < ho; ++oy) {
          const std::int64_t iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          if (stride == 1) {
            const std::int64_t ox0 = std::max<std::int64_t>(0, pad - kx);
            const std::int64_t ox1 = std::min(wo - 1, w - 1 - kx + pad);
            if (ox0 > ox1) continue;
            const std::int64_t n = ox1 - ox0 + 1;
            Eigen::Map<EigenArray<S>> dst(gx + (ci * h + iy) * w + (ox0 + kx - pad), n);
            Eigen::Map<const EigenArray<S>> src(row + oy * wo + ox0, n);
            dst += src;
          } else {
            for (std::int64_t ox = 0; ox < wo; ++ox) {
              const std::int64_t ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= w) continue;
              gx[(ci * h + iy) * w + ix] += row[oy * wo + ox];
            }
          }
        }
      }
}

}  // namespace detail

/// 2D cross-correlation of a [C_in,H,W] image with a [C_out,C_in,k,k] kernel
/// (no kernel flip, the usual deep-learning convention). Same-padding keeps
/// H,W when stride is 1 and requires odd k; valid uses no padding. Lowered to
/// a single matrix product via im2col.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& kernel, const Tensor<S>& bias,
                 Padding padding = Padding::kSame, std::int64_t stride = 1) {
  detail::require(x.rank() == 3, "conv2d: input must be [C,H,W], got " + shape_str(x.shape()));
  detail::require(kernel.rank() == 4 && kernel.dim(2) == kernel.dim(3),
                  "conv2d: kernel must be [Cout,Cin,k,k], got " + shape_str(kernel.shape()));
  if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
  const std::int64_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::int64_t cout = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != cin) {
    throw ShapeError("conv2d: channel mismatch, input " + shape_str(x.shape()) + " vs kernel " +
                     shape_str(kernel.shape()));
  }
  if (padding == Padding::kSame && k % 2 == 0) {
    throw ValueError("conv2d: same-padding requires an odd kernel, got k=" + std::to_string(k));
  }
  const std::int64_t pad = padding == Padding::kSame ? (k - 1) / 2 : 0;
  detail::require(h + 2 * pad >= k && w + 2 * pad >= k,
                  "conv2d: kernel larger than padded input");
  const std::int64_t ho = (h + 2 * pad - k) / stride + 1;
  const std::int64_t wo = (w + 2 * pad - k) / stride + 1;
  const bool has_bias = bias.defined();
  if (has_bias) {
    detail::require(bias.size() == cout, "conv2d: bias size " + std::to_string(bias.size()) +
                                             " != Cout " + std::to_string(cout));
  }

  std::vector<S> col(static_cast<std::size_t>(cin * k * k * ho * wo), S(0));
  detail::im2col_fill(x.data().data(), col.data(), cin, h, w, k, pad, stride, ho, wo);

  auto out = detail::alloc<S>({cout, ho, wo}, "conv2d");
  auto* o = out.node().get();
  using CMap = Eigen::Map<const EigenRowMat<S>>;
  using Map = Eigen::Map<EigenRowMat<S>>;
  {
    CMap wm(kernel.data().data(), cout, cin * k * k);
    CMap cm(col.data(), cin * k * k, ho * wo);
    Map om(o->data.data(), cout, ho * wo);
    om.noalias() = wm * cm;
    if (has_bias) om.colwise() += Eigen::Map<const Eigen::Vector<S, Eigen::Dynamic>>(
        bias.data().data(), cout);
  }

  auto make_bw = [o, xn = x.node().get(), kn = kernel.node().get(),
                  bn = has_bias ? bias.node().get() : nullptr, col = std::move(col), cin, h, w, k,
                  pad, stride, ho, wo, cout]() mutable {
    return [o, xn, kn, bn, col = std::move(col), cin, h, w, k, pad, stride, ho, wo, cout] {
      CMap go(o->grad.data(), cout, ho * wo);
      if (kn->requires_grad) {
        CMap cm(col.data(), cin * k * k, ho * wo);
        Map gw(kn->grad_buffer().data(), cout, cin * k * k);
        gw.noalias() += go * cm.transpose();
      }
      if (bn && bn->requires_grad) {
        Eigen::Map<Eigen::Vector<S, Eigen::Dynamic>> gb(bn->grad_buffer().data(), cout);
        gb.noalias() += go.rowwise().sum();
      }
      if (xn->requires_grad) {
        CMap wm(kn->data.data(), cout, cin * k * k);
        EigenRowMat<S> gcol = wm.transpose() * go;
        detail::col2im_accumulate(gcol.data(), xn->grad_buffer().data(), cin, h, w, k, pad,
                                  stride, ho, wo);
      }
    };
  };
  if (has_bias) {
    detail::wire(out, {&x, &kernel, &bias}, make_bw);
  } else {
    detail::wire(out, {&x, &kernel}, make_bw);
  }
  return out;
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& kernel, Padding padding = Padding::kSame,
                 std::int64_t stride = 1) {
  return conv2d(x, kernel, Tensor<S>(), padding, stride);
}

/// Stride-1 sliding max over a square window, clipped at the borders
/// (equivalently -inf padding), so the output keeps the input shape. The
/// window at (i,j) spans rows [i-(w-1)/2, i+w/2] and the same for columns.
/// Gradient flows to the first maximal element in row-major order. Computed
/// separably (rows then columns), which preserves that tie-break: the column
/// pass keeps the smallest row achieving the max and the row pass the
/// smallest column within it.
template <typename S>
Tensor<S> maxpool_window(const Tensor<S>& x, std::int64_t window) {
  detail::require(x.rank() == 3, "maxpool_window: input must be [C,H,W], got " +
                                     shape_str(x.shape()));
  if (window < 1) throw ValueError("maxpool_window: window must be >= 1");
  const std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::int64_t lo = (window - 1) / 2, hi = window / 2;
  auto out = detail::alloc<S>(x.shape(), "maxpool_window");
  auto* o = out.node().get();
  std::vector<std::int32_t> argmax(static_cast<std::size_t>(x.size()));
  std::vector<S> rowmax(static_cast<std::size_t>(h * w));
  std::vector<std::int32_t> rowarg(static_cast<std::size_t>(h * w));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const S* xc = x.data().data() + ch * h * w;
    // Row pass: sliding max over columns.
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j) {
        const std::int64_t j0 = std::max<std::int64_t>(0, j - lo);
        const std::int64_t j1 = std::min<std::int64_t>(w - 1, j + hi);
        S best = xc[i * w + j0];
        std::int64_t arg = j0;
        for (std::int64_t jj = j0 + 1; jj <= j1; ++jj) {
          if (xc[i * w + jj] > best) {
            best = xc[i * w + jj];
            arg = jj;
          }
        }
        rowmax[static_cast<std::size_t>(i * w + j)] = best;
        rowarg[static_cast<std::size_t>(i * w + j)] = static_cast<std::int32_t>(arg);
      }
    // Column pass over the row maxima.
    for (std::int64_t i = 0; i < h; ++i) {
      const std::int64_t i0 = std::max<std::int64_t>(0, i - lo);
      const std::int64_t i1 = std::min<std::int64_t>(h - 1, i + hi);
      for (std::int64_t j = 0; j < w; ++j) {
        S best = rowmax[static_cast<std::size_t>(i0 * w + j)];
        std::int64_t arg_i = i0;
        for (std::int64_t ii = i0 + 1; ii <= i1; ++ii) {
          if (rowmax[static_cast<std::size_t>(ii * w + j)] > best) {
            best = rowmax[static_cast<std::size_t>(ii * w + j)];
            arg_i = ii;
          }
        }
        const std::int64_t flat = ch * h * w + i * w + j;
        o->data[flat] = best;
        argmax[static_cast<std::size_t>(flat)] = static_cast<std::int32_t>(
            arg_i * w + rowarg[static_cast<std::size_t>(arg_i * w + j)]);
      }
    }
  }
  detail::wire(out, {&x},
               [o, xn = x.node().get(), argmax = std::move(argmax), c, hw = h * w]() mutable {
                 return [o, xn, argmax = std::move(argmax), c, hw] {
                   auto g = xn->grad_buffer();
                   for (std::int64_t ch = 0; ch < c; ++ch)
                     for (std::int64_t t = 0; t < hw; ++t) {
                       const std::int64_t flat = ch * hw + t;
                       g[ch * hw + argmax[static_cast<std::size_t>(flat)]] += o->grad[flat];
                     }
                 };
               });
  return out;
}

/// Nearest-neighbour upsampling: every value of [C,H,W] becomes an f x f
/// block of [C,fH,fW]. Backward sums the block gradients.
template <typename S>
Tensor<S> resize_nearest(const Tensor<S>& x, std::int64_t factor) {
  detail::require(x.rank() == 3, "resize_nearest: input must be [C,H,W], got " +
                                     shape_str(x.shape()));
  if (factor < 1) throw ValueError("resize_nearest: factor must be >= 1");
  const std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::int64_t fh = h * factor, fw = w * factor;
  auto out = detail::alloc<S>({c, fh, fw}, "resize_nearest");
  auto* o = out.node().get();
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t i = 0; i < fh; ++i)
      for (std::int64_t j = 0; j < fw; ++j)
        o->data[(ch * fh + i) * fw + j] = x.data()[(ch * h + i / factor) * w + j / factor];
  detail::wire(out, {&x}, [o, xn = x.node().get(), c, h, w, fh, fw, factor] {
    return [o, xn, c, h, w, fh, fw, factor] {
      auto g = xn->grad_buffer();
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t i = 0; i < fh; ++i)
          for (std::int64_t j = 0; j < fw; ++j)
            g[(ch * h + i / factor) * w + j / factor] += o->grad[(ch * fh + i) * fw + j];
    };
  });
  return out;
}

}  // namespace clotseg
