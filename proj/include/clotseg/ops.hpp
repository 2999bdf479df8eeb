#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "clotseg/tensor.hpp"

namespace clotseg {

template <typename S>
using EigenArray = Eigen::Array<S, Eigen::Dynamic, 1>;
template <typename S>
using EigenRowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

template <typename S>
Eigen::Map<EigenArray<S>> arr(Node<S>* n) {
  return {n->data.data(), static_cast<Eigen::Index>(n->data.size())};
}
template <typename S>
Eigen::Map<const EigenArray<S>> carr(const Node<S>* n) {
  return {n->data.data(), static_cast<Eigen::Index>(n->data.size())};
}
template <typename S>
Eigen::Map<const EigenArray<S>> carr(const Tensor<S>& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.size())};
}
template <typename S>
Eigen::Map<EigenArray<S>> garr(Node<S>* n) {
  auto g = n->grad_buffer();
  return {g.data(), static_cast<Eigen::Index>(g.size())};
}
template <typename S>
Eigen::Map<const EigenArray<S>> cgarr(const Node<S>* n) {
  return {n->grad.data(), static_cast<Eigen::Index>(n->grad.size())};
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require(a.shape() == b.shape(),
                  "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = detail::alloc<S>(a.shape(), "add");
  detail::arr(out.node().get()) = detail::carr(a) + detail::carr(b);
  detail::wire(out, {&a, &b}, [o = out.node().get(), an = a.node().get(), bn = b.node().get()] {
    return [o, an, bn] {
      if (an->requires_grad) detail::garr(an) += detail::cgarr(o);
      if (bn->requires_grad) detail::garr(bn) += detail::cgarr(o);
    };
  });
  return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require(a.shape() == b.shape(),
                  "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = detail::alloc<S>(a.shape(), "sub");
  detail::arr(out.node().get()) = detail::carr(a) - detail::carr(b);
  detail::wire(out, {&a, &b}, [o = out.node().get(), an = a.node().get(), bn = b.node().get()] {
    return [o, an, bn] {
      if (an->requires_grad) detail::garr(an) += detail::cgarr(o);
      if (bn->requires_grad) detail::garr(bn) -= detail::cgarr(o);
    };
  });
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require(a.shape() == b.shape(),
                  "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = detail::alloc<S>(a.shape(), "mul");
  detail::arr(out.node().get()) = detail::carr(a) * detail::carr(b);
  detail::wire(out, {&a, &b}, [o = out.node().get(), an = a.node().get(), bn = b.node().get()] {
    return [o, an, bn] {
      if (an->requires_grad) detail::garr(an) += detail::cgarr(o) * detail::carr(bn);
      if (bn->requires_grad) detail::garr(bn) += detail::cgarr(o) * detail::carr(an);
    };
  });
  return out;
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require(a.shape() == b.shape(),
                  "div: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = detail::alloc<S>(a.shape(), "div");
  detail::arr(out.node().get()) = detail::carr(a) / detail::carr(b);
  detail::wire(out, {&a, &b}, [o = out.node().get(), an = a.node().get(), bn = b.node().get()] {
    return [o, an, bn] {
      if (an->requires_grad) detail::garr(an) += detail::cgarr(o) / detail::carr(bn);
      if (bn->requires_grad)
        detail::garr(bn) -= detail::cgarr(o) * detail::carr(o) / detail::carr(bn);
    };
  });
  return out;
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  auto out = detail::alloc<S>(a.shape(), "add_scalar");
  detail::arr(out.node().get()) = detail::carr(a) + c;
  detail::wire(out, {&a}, [o = out.node().get(), an = a.node().get()] {
    return [o, an] { detail::garr(an) += detail::cgarr(o); };
  });
  return out;
}

template <typename S>
Tensor<S> scalar_mul(const Tensor<S>& a, S c) {
  auto out = detail::alloc<S>(a.shape(), "scalar_mul");
  detail::arr(out.node().get()) = detail::carr(a) * c;
  detail::wire(out, {&a}, [o = out.node().get(), an = a.node().get(), c] {
    return [o, an, c] { detail::garr(an) += detail::cgarr(o) * c; };
  });
  return out;
}

/// Adds a length-d bias vector to every row of [N, d] (linear-layer bias).
template <typename S>
Tensor<S> add_rowvec(const Tensor<S>& x, const Tensor<S>& b) {
  detail::require(x.rank() == 2 && b.size() == x.dim(1),
                  "add_rowvec: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
  const std::int64_t n = x.dim(0), d = x.dim(1);
  auto out = detail::alloc<S>(x.shape(), "add_rowvec");
  auto* o = out.node().get();
  for (std::int64_t r = 0; r < n; ++r)
    for (std::int64_t i = 0; i < d; ++i) o->data[r * d + i] = x.data()[r * d + i] + b.data()[i];
  detail::wire(out, {&x, &b}, [o, xn = x.node().get(), bn = b.node().get(), n, d] {
    return [o, xn, bn, n, d] {
      if (xn->requires_grad) detail::garr(xn) += detail::cgarr(o);
      if (bn->requires_grad) {
        auto g = bn->grad_buffer();
        for (std::int64_t r = 0; r < n; ++r)
          for (std::int64_t i = 0; i < d; ++i) g[i] += o->grad[r * d + i];
      }
    };
  });
  return out;
}

/// y = x * lambda where lambda is a learnable [1] tensor (residual gate).
template <typename S>
Tensor<S> scale_by(const Tensor<S>& x, const Tensor<S>& lambda) {
  detail::require(lambda.size() == 1, "scale_by: gate must be a [1] tensor");
  auto out = detail::alloc<S>(x.shape(), "scale_by");
  detail::arr(out.node().get()) = detail::carr(x) * lambda.data()[0];
  detail::wire(out, {&x, &lambda}, [o = out.node().get(), xn = x.node().get(),
                                    ln = lambda.node().get()] {
    return [o, xn, ln] {
      if (xn->requires_grad) detail::garr(xn) += detail::cgarr(o) * ln->data[0];
      if (ln->requires_grad) detail::garr(ln)[0] += (detail::cgarr(o) * detail::carr(xn)).sum();
    };
  });
  return out;
}

// ---------------------------------------------------------------------------
// Activations, log
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  auto out = detail::alloc<S>(x.shape(), "relu");
  detail::arr(out.node().get()) = detail::carr(x).max(S(0));
  detail::wire(out, {&x}, [o = out.node().get(), xn = x.node().get()] {
    return [o, xn] {
      detail::garr(xn) +=
          detail::cgarr(o) * (detail::carr(xn) > S(0)).template cast<S>();
    };
  });
  return out;
}

template <typename S>
Tensor<S> elu(const Tensor<S>& x) {
  auto out = detail::alloc<S>(x.shape(), "elu");
  auto xo = detail::carr(x);
  detail::arr(out.node().get()) = (xo > S(0)).select(xo, xo.exp() - S(1));
  detail::wire(out, {&x}, [o = out.node().get(), xn = x.node().get()] {
    return [o, xn] {
      // d/dx = 1 for x > 0, exp(x) = y + 1 otherwise.
      auto xv = detail::carr(xn);
      auto yv = detail::carr(o);
      detail::garr(xn) += detail::cgarr(o) * (xv > S(0)).select(
          EigenArray<S>::Ones(xv.size()), yv + S(1));
    };
  });
  return out;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  auto out = detail::alloc<S>(x.shape(), "sigmoid");
  auto* o = out.node().get();
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const S v = x.data()[i];
    o->data[i] = v >= S(0) ? S(1) / (S(1) + std::exp(-v))
                           : std::exp(v) / (S(1) + std::exp(v));
  }
  detail::wire(out, {&x}, [o, xn = x.node().get()] {
    return [o, xn] {
      auto yv = detail::carr(o);
      detail::garr(xn) += detail::cgarr(o) * yv * (S(1) - yv);
    };
  });
  return out;
}

template <typename S>
Tensor<S> tanh(const Tensor<S>& x) {
  auto out = detail::alloc<S>(x.shape(), "tanh");
  detail::arr(out.node().get()) = detail::carr(x).tanh();
  detail::wire(out, {&x}, [o = out.node().get(), xn = x.node().get()] {
    return [o, xn] {
      auto yv = detail::carr(o);
      detail::garr(xn) += detail::cgarr(o) * (S(1) - yv * yv);
    };
  });
  return out;
}

template <typename S>
Tensor<S> log(const Tensor<S>& x) {
  auto out = detail::alloc<S>(x.shape(), "log");
  detail::arr(out.node().get()) = detail::carr(x).log();
  detail::wire(out, {&x}, [o = out.node().get(), xn = x.node().get()] {
    return [o, xn] { detail::garr(xn) += detail::cgarr(o) / detail::carr(xn); };
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
  auto out = detail::alloc<S>({1}, "sum_all");
  out.node()->data[0] = detail::carr(x).sum();
  detail::wire(out, {&x}, [o = out.node().get(), xn = x.node().get()] {
    return [o, xn] { detail::garr(xn) += o->grad[0]; };
  });
  return out;
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& x) {
  auto out = detail::alloc<S>({1}, "mean_all");
  const S inv_n = S(1) / static_cast<S>(x.size());
  out.node()->data[0] = detail::carr(x).sum() * inv_n;
  detail::wire(out, {&x}, [o = out.node().get(), xn = x.node().get(), inv_n] {
    return [o, xn, inv_n] { detail::garr(xn) += o->grad[0] * inv_n; };
  });
  return out;
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape new_shape) {
  detail::require(shape_numel(new_shape) == x.size(),
                  "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
  auto out = detail::alloc<S>(std::move(new_shape), "reshape");
  out.node()->data = std::vector<S>(x.data().begin(), x.data().end());
  detail::wire(out, {&x}, [o = out.node().get(), xn = x.node().get()] {
    return [o, xn] { detail::garr(xn) += detail::cgarr(o); };
  });
  return out;
}

/// Contiguous slice along the leading dimension: rows of a token matrix or
/// channels of a [C,H,W] feature map.
template <typename S>
Tensor<S> slice_dim0(const Tensor<S>& x, std::int64_t from, std::int64_t to) {
  detail::require(x.rank() >= 1 && from >= 0 && from < to && to <= x.dim(0),
                  "slice_dim0: bad range [" + std::to_string(from) + "," + std::to_string(to) +
                      ") for shape " + shape_str(x.shape()));
  Shape shape = x.shape();
  shape[0] = to - from;
  const std::int64_t inner = x.size() / x.dim(0);
  auto out = detail::alloc<S>(std::move(shape), "slice_dim0");
  std::copy_n(x.data().data() + from * inner, (to - from) * inner, out.node()->data.data());
  detail::wire(out, {&x},
               [o = out.node().get(), xn = x.node().get(), off = from * inner] {
                 return [o, xn, off] {
                   auto g = xn->grad_buffer();
                   for (std::size_t i = 0; i < o->grad.size(); ++i)
                     g[static_cast<std::size_t>(off) + i] += o->grad[i];
                 };
               });
  return out;
}

template <typename S>
Tensor<S> concat_dim0(const std::vector<Tensor<S>>& parts) {
  detail::require(!parts.empty(), "concat_dim0: no inputs");
  Shape shape = parts[0].shape();
  std::int64_t dim0 = 0;
  for (const auto& p : parts) {
    detail::require(p.rank() == parts[0].rank(), "concat_dim0: rank mismatch");
    for (std::int64_t d = 1; d < p.rank(); ++d)
      detail::require(p.dim(d) == parts[0].dim(d),
                      "concat_dim0: trailing shape mismatch " + shape_str(p.shape()) + " vs " +
                          shape_str(parts[0].shape()));
    dim0 += p.dim(0);
  }
  shape[0] = dim0;
  auto out = detail::alloc<S>(std::move(shape), "concat_dim0");
  std::int64_t off = 0;
  std::vector<detail::Node<S>*> srcs;
  std::vector<std::int64_t> offsets;
  bool needs_grad = false;
  for (const auto& p : parts) {
    std::copy_n(p.data().data(), p.size(), out.node()->data.data() + off);
    srcs.push_back(p.node().get());
    offsets.push_back(off);
    off += p.size();
    needs_grad = needs_grad || p.requires_grad();
  }
  if (grad_enabled() && needs_grad) {
    auto& node = *out.node();
    node.requires_grad = true;
    for (const auto& p : parts) node.parents.push_back(p.node());
    node.backward = [o = out.node().get(), srcs, offsets] {
      for (std::size_t k = 0; k < srcs.size(); ++k) {
        if (!srcs[k]->requires_grad) continue;
        auto g = srcs[k]->grad_buffer();
        const S* go = o->grad.data() + offsets[k];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
      }
    };
  }
  return out;
}

template <typename S>
Tensor<S> transpose2d(const Tensor<S>& x) {
  detail::require(x.rank() == 2, "transpose2d: expects rank-2, got " + shape_str(x.shape()));
  const std::int64_t n = x.dim(0), m = x.dim(1);
  auto out = detail::alloc<S>({m, n}, "transpose2d");
  auto* o = out.node().get();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < m; ++j) o->data[j * n + i] = x.data()[i * m + j];
  detail::wire(out, {&x}, [o, xn = x.node().get(), n, m] {
    return [o, xn, n, m] {
      auto g = xn->grad_buffer();
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < m; ++j) g[i * m + j] += o->grad[j * n + i];
    };
  });
  return out;
}

// ---------------------------------------------------------------------------
// Matrix multiply (batched, leading dims broadcastable)
// ---------------------------------------------------------------------------

namespace detail {

struct BatchPlan {
  std::int64_t count = 1;
  std::vector<std::int64_t> out_batch;       // broadcast leading dims
  std::vector<std::int64_t> a_index, b_index;  // per-batch offsets (in matrices)
};

inline BatchPlan make_batch_plan(const Shape& a, const Shape& b) {
  const std::int64_t ra = static_cast<std::int64_t>(a.size()) - 2;
  const std::int64_t rb = static_cast<std::int64_t>(b.size()) - 2;
  const std::int64_t r = std::max(ra, rb);
  BatchPlan plan;
  plan.out_batch.resize(static_cast<std::size_t>(r));
  for (std::int64_t i = 0; i < r; ++i) {
    const std::int64_t da = i < r - ra ? 1 : a[static_cast<std::size_t>(i - (r - ra))];
    const std::int64_t db = i < r - rb ? 1 : b[static_cast<std::size_t>(i - (r - rb))];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("matmul: batch dims not broadcastable " + shape_str(a) + " vs " +
                       shape_str(b));
    }
    plan.out_batch[static_cast<std::size_t>(i)] = std::max(da, db);
    plan.count *= std::max(da, db);
  }
  plan.a_index.resize(static_cast<std::size_t>(plan.count));
  plan.b_index.resize(static_cast<std::size_t>(plan.count));
  for (std::int64_t flat = 0; flat < plan.count; ++flat) {
    std::int64_t rem = flat, ia = 0, ib = 0;
    for (std::int64_t i = 0; i < r; ++i) {
      std::int64_t stride = 1;
      for (std::int64_t j = i + 1; j < r; ++j) stride *= plan.out_batch[static_cast<std::size_t>(j)];
      const std::int64_t idx = rem / stride;
      rem %= stride;
      const std::int64_t da = i < r - ra ? 1 : a[static_cast<std::size_t>(i - (r - ra))];
      const std::int64_t db = i < r - rb ? 1 : b[static_cast<std::size_t>(i - (r - rb))];
      if (i >= r - ra) ia = ia * da + (da == 1 ? 0 : idx);
      if (i >= r - rb) ib = ib * db + (db == 1 ? 0 : idx);
    }
    plan.a_index[static_cast<std::size_t>(flat)] = ia;
    plan.b_index[static_cast<std::size_t>(flat)] = ib;
  }
  return plan;
}

}  // namespace detail

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require(a.rank() >= 2 && b.rank() >= 2,
                  "matmul: both operands need rank >= 2, got " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()));
  const std::int64_t n = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::int64_t kb = b.dim(b.rank() - 2), m = b.dim(b.rank() - 1);
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  auto plan = detail::make_batch_plan(a.shape(), b.shape());
  Shape out_shape = plan.out_batch;
  out_shape.push_back(n);
  out_shape.push_back(m);
  auto out = detail::alloc<S>(std::move(out_shape), "matmul");

  using CMap = Eigen::Map<const EigenRowMat<S>>;
  using Map = Eigen::Map<EigenRowMat<S>>;
  auto* o = out.node().get();
  for (std::int64_t t = 0; t < plan.count; ++t) {
    CMap ma(a.data().data() + plan.a_index[static_cast<std::size_t>(t)] * n * k, n, k);
    CMap mb(b.data().data() + plan.b_index[static_cast<std::size_t>(t)] * k * m, k, m);
    Map mo(o->data.data() + t * n * m, n, m);
    mo.noalias() = ma * mb;
  }

  detail::wire(out, {&a, &b}, [o, an = a.node().get(), bn = b.node().get(), plan, n, k, m] {
    return [o, an, bn, plan, n, k, m] {
      for (std::int64_t t = 0; t < plan.count; ++t) {
        const auto ai = plan.a_index[static_cast<std::size_t>(t)];
        const auto bi = plan.b_index[static_cast<std::size_t>(t)];
        CMap go(o->grad.data() + t * n * m, n, m);
        if (an->requires_grad) {
          CMap mb(bn->data.data() + bi * k * m, k, m);
          Map ga(an->grad_buffer().data() + ai * n * k, n, k);
          ga.noalias() += go * mb.transpose();
        }
        if (bn->requires_grad) {
          CMap ma(an->data.data() + ai * n * k, n, k);
          Map gb(bn->grad_buffer().data() + bi * k * m, k, m);
          gb.noalias() += ma.transpose() * go;
        }
      }
    };
  });
  return out;
}

// ---------------------------------------------------------------------------
// Softmax / layer norm
// ---------------------------------------------------------------------------

/// Max-subtracted softmax over the last dimension.
template <typename S>
Tensor<S> softmax_lastdim(const Tensor<S>& x) {
  detail::require(x.rank() >= 1 && x.dim(x.rank() - 1) >= 1,
                  "softmax_lastdim: needs a non-empty last dim, got " + shape_str(x.shape()));
  const std::int64_t d = x.dim(x.rank() - 1);
  const std::int64_t rows = x.size() / d;
  auto out = detail::alloc<S>(x.shape(), "softmax_lastdim");
  auto* o = out.node().get();
  for (std::int64_t r = 0; r < rows; ++r) {
    const S* xi = x.data().data() + r * d;
    S* yi = o->data.data() + r * d;
    S mx = xi[0];
    for (std::int64_t i = 1; i < d; ++i) mx = std::max(mx, xi[i]);
    S sum = S(0);
    for (std::int64_t i = 0; i < d; ++i) {
      yi[i] = std::exp(xi[i] - mx);
      sum += yi[i];
    }
    const S inv = S(1) / sum;
    for (std::int64_t i = 0; i < d; ++i) yi[i] *= inv;
  }
  detail::wire(out, {&x}, [o, xn = x.node().get(), rows, d] {
    return [o, xn, rows, d] {
      auto g = xn->grad_buffer();
      for (std::int64_t r = 0; r < rows; ++r) {
        const S* y = o->data.data() + r * d;
        const S* go = o->grad.data() + r * d;
        S dot = S(0);
        for (std::int64_t i = 0; i < d; ++i) dot += go[i] * y[i];
        for (std::int64_t i = 0; i < d; ++i) g[r * d + i] += y[i] * (go[i] - dot);
      }
    };
  });
  return out;
}

/// Zero-mean unit-variance over the last dimension (population variance,
/// eps inside the square root), then the learned affine gamma * xhat + beta.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     S eps = S(1e-5)) {
  const std::int64_t d = x.dim(x.rank() - 1);
  detail::require(d >= 2, "layer_norm: last dim must be >= 2, got " + shape_str(x.shape()));
  detail::require(gamma.size() == d && beta.size() == d,
                  "layer_norm: affine params must have last-dim size " + std::to_string(d));
  const std::int64_t rows = x.size() / d;
  auto out = detail::alloc<S>(x.shape(), "layer_norm");
  auto* o = out.node().get();
  std::vector<S> xhat(static_cast<std::size_t>(x.size()));
  std::vector<S> inv_std(static_cast<std::size_t>(rows));
  const S* gma = gamma.data().data();
  const S* bta = beta.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const S* xi = x.data().data() + r * d;
    S mean = S(0);
    for (std::int64_t i = 0; i < d; ++i) mean += xi[i];
    mean /= static_cast<S>(d);
    S var = S(0);
    for (std::int64_t i = 0; i < d; ++i) var += (xi[i] - mean) * (xi[i] - mean);
    var /= static_cast<S>(d);
    const S istd = S(1) / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = istd;
    for (std::int64_t i = 0; i < d; ++i) {
      const S xh = (xi[i] - mean) * istd;
      xhat[static_cast<std::size_t>(r * d + i)] = xh;
      o->data[r * d + i] = gma[i] * xh + bta[i];
    }
  }
  detail::wire(out, {&x, &gamma, &beta},
               [o, xn = x.node().get(), gn = gamma.node().get(), bn = beta.node().get(),
                xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d] {
                 return [o, xn, gn, bn, xhat, inv_std, rows, d] {
                   for (std::int64_t r = 0; r < rows; ++r) {
                     const S* go = o->grad.data() + r * d;
                     const S* xh = xhat.data() + r * d;
                     const S istd = inv_std[static_cast<std::size_t>(r)];
                     if (gn->requires_grad) {
                       auto gg = gn->grad_buffer();
                       for (std::int64_t i = 0; i < d; ++i) gg[i] += go[i] * xh[i];
                     }
                     if (bn->requires_grad) {
                       auto gb = bn->grad_buffer();
                       for (std::int64_t i = 0; i < d; ++i) gb[i] += go[i];
                     }
                     if (xn->requires_grad) {
                       // dx = istd/D * (D*dxh - sum(dxh) - xh * sum(dxh*xh))
                       S sum_dxh = S(0), sum_dxh_xh = S(0);
                       const S* gma = gn->data.data();
                       for (std::int64_t i = 0; i < d; ++i) {
                         const S dxh = go[i] * gma[i];
                         sum_dxh += dxh;
                         sum_dxh_xh += dxh * xh[i];
                       }
                       auto gx = xn->grad_buffer();
                       const S inv_d = S(1) / static_cast<S>(d);
                       for (std::int64_t i = 0; i < d; ++i) {
                         const S dxh = go[i] * gma[i];
                         gx[r * d + i] += istd * (dxh - inv_d * sum_dxh - inv_d * xh[i] * sum_dxh_xh);
                       }
                     }
                   }
                 };
               });
  return out;
}

// ---------------------------------------------------------------------------
// Token layout helpers
// ---------------------------------------------------------------------------

/// [h*w, d] row-major tokens -> [d, h, w] feature map.
template <typename S>
Tensor<S> tokens_to_chw(const Tensor<S>& tokens, std::int64_t h, std::int64_t w) {
  detail::require(tokens.rank() == 2 && tokens.dim(0) == h * w,
                  "tokens_to_chw: got " + shape_str(tokens.shape()) + " for grid " +
                      std::to_string(h) + "x" + std::to_string(w));
  const std::int64_t d = tokens.dim(1);
  auto out = detail::alloc<S>({d, h, w}, "tokens_to_chw");
  auto* o = out.node().get();
  for (std::int64_t t = 0; t < h * w; ++t)
    for (std::int64_t c = 0; c < d; ++c) o->data[c * h * w + t] = tokens.data()[t * d + c];
  detail::wire(out, {&tokens}, [o, tn = tokens.node().get(), hw = h * w, d] {
    return [o, tn, hw, d] {
      auto g = tn->grad_buffer();
      for (std::int64_t t = 0; t < hw; ++t)
        for (std::int64_t c = 0; c < d; ++c) g[t * d + c] += o->grad[c * hw + t];
    };
  });
  return out;
}

/// [c, h, w] feature map -> [h*w, c] row-major tokens.
template <typename S>
Tensor<S> chw_to_tokens(const Tensor<S>& x) {
  detail::require(x.rank() == 3, "chw_to_tokens: expects [C,H,W], got " + shape_str(x.shape()));
  const std::int64_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  auto out = detail::alloc<S>({hw, c}, "chw_to_tokens");
  auto* o = out.node().get();
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t t = 0; t < hw; ++t) o->data[t * c + ch] = x.data()[ch * hw + t];
  detail::wire(out, {&x}, [o, xn = x.node().get(), c, hw] {
    return [o, xn, c, hw] {
      auto g = xn->grad_buffer();
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t t = 0; t < hw; ++t) g[ch * hw + t] += o->grad[t * c + ch];
    };
  });
  return out;
}

/// Replicates each token of a g x g grid into an f x f block: [g*g, d] ->
/// [(g*f)*(g*f), d], preserving row-major grid order.
template <typename S>
Tensor<S> token_grid_upsample(const Tensor<S>& tokens, std::int64_t factor) {
  detail::require(tokens.rank() == 2 && factor >= 1, "token_grid_upsample: bad arguments");
  const std::int64_t n = tokens.dim(0), d = tokens.dim(1);
  const auto g = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(n))));
  detail::require(g * g == n, "token_grid_upsample: token count " + std::to_string(n) +
                                  " is not a square grid");
  const std::int64_t gf = g * factor;
  auto out = detail::alloc<S>({gf * gf, d}, "token_grid_upsample");
  auto* o = out.node().get();
  for (std::int64_t i = 0; i < gf; ++i)
    for (std::int64_t j = 0; j < gf; ++j) {
      const std::int64_t src = (i / factor) * g + (j / factor);
      std::copy_n(tokens.data().data() + src * d, d, o->data.data() + (i * gf + j) * d);
    }
  detail::wire(out, {&tokens}, [o, tn = tokens.node().get(), g, gf, d, factor] {
    return [o, tn, g, gf, d, factor] {
      auto gr = tn->grad_buffer();
      for (std::int64_t i = 0; i < gf; ++i)
        for (std::int64_t j = 0; j < gf; ++j) {
          const std::int64_t src = (i / factor) * g + (j / factor);
          const S* go = o->grad.data() + (i * gf + j) * d;
          for (std::int64_t c = 0; c < d; ++c) gr[src * d + c] += go[c];
        }
    };
  });
  return out;
}

/// Two-class softmax over the channel axis of [2,H,W] logits, returning the
/// foreground (channel 1) probability map [H,W].
template <typename S>
Tensor<S> softmax2_fg(const Tensor<S>& logits) {
  detail::require(logits.rank() == 3 && logits.dim(0) == 2,
                  "softmax2_fg: expects [2,H,W], got " + shape_str(logits.shape()));
  const std::int64_t hw = logits.dim(1) * logits.dim(2);
  auto out = detail::alloc<S>({logits.dim(1), logits.dim(2)}, "softmax2_fg");
  auto* o = out.node().get();
  for (std::int64_t i = 0; i < hw; ++i) {
    const S z = logits.data()[hw + i] - logits.data()[i];  // fg - bg
    o->data[i] = z >= S(0) ? S(1) / (S(1) + std::exp(-z)) : std::exp(z) / (S(1) + std::exp(z));
  }
  detail::wire(out, {&logits}, [o, ln = logits.node().get(), hw] {
    return [o, ln, hw] {
      auto g = ln->grad_buffer();
      for (std::int64_t i = 0; i < hw; ++i) {
        const S p = o->data[i];
        const S d = o->grad[i] * p * (S(1) - p);
        g[hw + i] += d;
        g[i] -= d;
      }
    };
  });
  return out;
}

}  // namespace clotseg
