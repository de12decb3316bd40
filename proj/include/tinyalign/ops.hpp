#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <vector>

#include "tinyalign/tensor.hpp"

namespace tinyalign {

namespace detail {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

inline ECMap mat_of(const TensorNode& n) {
  return ECMap(n.value.data(), n.shape[0], n.shape[1]);
}

inline EMap grad_mat_of(TensorNode& n) {
  grad_buf(n);
  return EMap(n.grad.data(), n.shape[0], n.shape[1]);
}

inline void require_rank2(const Tensor& t, const char* who) {
  if (t.rank() != 2)
    throw DimensionError(std::string(who) + ": expected rank-2 tensor, got shape " +
                         shape_str(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(who) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  const long m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m * n));
  detail::EMap(out.data(), m, n).noalias() =
      detail::ECMap(a.data().data(), m, k) * detail::ECMap(b.data().data(), k, n);
  return make_op({m, n}, std::move(out), {a, b}, [m, k, n](detail::TensorNode& self) {
    detail::ECMap g(self.grad.data(), m, n);
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad)
      detail::grad_mat_of(pa).noalias() += g * detail::mat_of(pb).transpose();
    if (pb.requires_grad)
      detail::grad_mat_of(pb).noalias() += detail::mat_of(pa).transpose() * g;
  });
}

// a * b^T without materializing the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "matmul_nt");
  detail::require_rank2(b, "matmul_nt");
  if (a.dim(1) != b.dim(1))
    throw DimensionError("matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()) + "^T");
  const long m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<double> out(static_cast<std::size_t>(m * n));
  detail::EMap(out.data(), m, n).noalias() =
      detail::ECMap(a.data().data(), m, k) * detail::ECMap(b.data().data(), n, k).transpose();
  return make_op({m, n}, std::move(out), {a, b}, [m, k, n](detail::TensorNode& self) {
    detail::ECMap g(self.grad.data(), m, n);
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) detail::grad_mat_of(pa).noalias() += g * detail::mat_of(pb);
    if (pb.requires_grad)
      detail::grad_mat_of(pb).noalias() += g.transpose() * detail::mat_of(pa);
  });
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.data());
  const auto& bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::TensorNode& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = detail::grad_buf(*p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.data());
  const auto& bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = detail::grad_buf(pa);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = detail::grad_buf(pb);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.data());
  const auto& bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = detail::grad_buf(pa);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = detail::grad_buf(pb);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

inline Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.data());
  for (auto& v : out) v *= c;
  return make_op(x.shape(), std::move(out), {x}, [c](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    auto& g = detail::grad_buf(p);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * self.grad[i];
  });
}

// Division rather than multiply-by-reciprocal so that batch means match a
// plain `sum / n` bit for bit.
inline Tensor div_scalar(const Tensor& x, double c) {
  if (c == 0.0) throw ValueError("div_scalar: division by zero");
  std::vector<double> out(x.data());
  for (auto& v : out) v /= c;
  return make_op(x.shape(), std::move(out), {x}, [c](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    auto& g = detail::grad_buf(p);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / c;
  });
}

inline Tensor neg(const Tensor& x) { return scale(x, -1.0); }

inline Tensor silu(const Tensor& x) {
  std::vector<double> out(x.data());
  for (auto& v : out) v *= detail::stable_sigmoid(v);
  return make_op(x.shape(), std::move(out), {x}, [](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    auto& g = detail::grad_buf(p);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = detail::stable_sigmoid(p.value[i]);
      g[i] += self.grad[i] * s * (1.0 + p.value[i] * (1.0 - s));
    }
  });
}

// log(1 + e^x), evaluated as max(x,0) + log1p(e^-|x|) for stability.
inline Tensor softplus(const Tensor& x) {
  std::vector<double> out(x.data());
  for (auto& v : out) v = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
  return make_op(x.shape(), std::move(out), {x}, [](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    auto& g = detail::grad_buf(p);
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i] * detail::stable_sigmoid(p.value[i]);
  });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (const double v : x.data()) acc += v;
  return make_op({1}, {acc}, {x}, [](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    auto& g = detail::grad_buf(p);
    for (auto& v : g) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) { return div_scalar(sum(x), static_cast<double>(x.size())); }

// sum_i w_i * x_i over scalar tensors, accumulated in argument order.
inline Tensor weighted_sum(std::span<const Tensor> xs, std::span<const double> ws) {
  if (xs.empty()) throw ValueError("weighted_sum: empty input");
  if (xs.size() != ws.size()) throw DimensionError("weighted_sum: weight count mismatch");
  double acc = 0.0;
  std::vector<Tensor> parents;
  parents.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].size() != 1)
      throw DimensionError("weighted_sum: inputs must be scalars, got " +
                           shape_str(xs[i].shape()));
    acc += ws[i] * xs[i].data()[0];
    parents.push_back(xs[i]);
  }
  std::vector<double> weights(ws.begin(), ws.end());
  return make_op({1}, {acc}, std::move(parents),
                 [weights = std::move(weights)](detail::TensorNode& self) {
                   for (std::size_t i = 0; i < self.parents.size(); ++i) {
                     auto& p = *self.parents[i];
                     if (!p.requires_grad) continue;
                     detail::grad_buf(p)[0] += self.grad[0] * weights[i];
                   }
                 });
}

// ---------------------------------------------------------------------------
// softmax family
// ---------------------------------------------------------------------------

// Softmax along `axis` with max-subtraction. Works on any rank.
inline Tensor softmax(const Tensor& x, int axis) {
  const auto& shape = x.shape();
  const int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw DimensionError("softmax: axis out of range for shape " + shape_str(shape));
  const long n_axis = shape[static_cast<std::size_t>(axis)];
  long inner = 1, outer = 1;
  for (int i = axis + 1; i < r; ++i) inner *= shape[static_cast<std::size_t>(i)];
  for (int i = 0; i < axis; ++i) outer *= shape[static_cast<std::size_t>(i)];

  std::vector<double> out(x.data());
  for (long o = 0; o < outer; ++o) {
    for (long in = 0; in < inner; ++in) {
      const long base = o * n_axis * inner + in;
      double mx = out[static_cast<std::size_t>(base)];
      for (long j = 1; j < n_axis; ++j)
        mx = std::max(mx, out[static_cast<std::size_t>(base + j * inner)]);
      double total = 0.0;
      for (long j = 0; j < n_axis; ++j) {
        auto& v = out[static_cast<std::size_t>(base + j * inner)];
        v = std::exp(v - mx);
        total += v;
      }
      for (long j = 0; j < n_axis; ++j) out[static_cast<std::size_t>(base + j * inner)] /= total;
    }
  }
  return make_op(shape, std::move(out), {x},
                 [n_axis, inner, outer](detail::TensorNode& self) {
                   auto& p = *self.parents[0];
                   auto& g = detail::grad_buf(p);
                   for (long o = 0; o < outer; ++o) {
                     for (long in = 0; in < inner; ++in) {
                       const long base = o * n_axis * inner + in;
                       double dot = 0.0;
                       for (long j = 0; j < n_axis; ++j) {
                         const auto idx = static_cast<std::size_t>(base + j * inner);
                         dot += self.grad[idx] * self.value[idx];
                       }
                       for (long j = 0; j < n_axis; ++j) {
                         const auto idx = static_cast<std::size_t>(base + j * inner);
                         g[idx] += self.value[idx] * (self.grad[idx] - dot);
                       }
                     }
                   }
                 });
}

// Row-wise softmax over the causal prefix: row r attends to columns 0..r.
// Entries above the diagonal are exactly zero in the output.
inline Tensor causal_softmax(const Tensor& scores) {
  detail::require_rank2(scores, "causal_softmax");
  if (scores.dim(0) != scores.dim(1))
    throw DimensionError("causal_softmax: expected square scores, got " +
                         shape_str(scores.shape()));
  const long t = scores.dim(0);
  std::vector<double> out(static_cast<std::size_t>(t * t), 0.0);
  const auto& v = scores.data();
  for (long r = 0; r < t; ++r) {
    const long base = r * t;
    double mx = v[static_cast<std::size_t>(base)];
    for (long c = 1; c <= r; ++c) mx = std::max(mx, v[static_cast<std::size_t>(base + c)]);
    double total = 0.0;
    for (long c = 0; c <= r; ++c) {
      const double e = std::exp(v[static_cast<std::size_t>(base + c)] - mx);
      out[static_cast<std::size_t>(base + c)] = e;
      total += e;
    }
    for (long c = 0; c <= r; ++c) out[static_cast<std::size_t>(base + c)] /= total;
  }
  return make_op({t, t}, std::move(out), {scores}, [t](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    auto& g = detail::grad_buf(p);
    for (long r = 0; r < t; ++r) {
      const long base = r * t;
      double dot = 0.0;
      for (long c = 0; c <= r; ++c) {
        const auto idx = static_cast<std::size_t>(base + c);
        dot += self.grad[idx] * self.value[idx];
      }
      for (long c = 0; c <= r; ++c) {
        const auto idx = static_cast<std::size_t>(base + c);
        g[idx] += self.value[idx] * (self.grad[idx] - dot);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// token-level losses and lookups
// ---------------------------------------------------------------------------

enum class CeReduction { MeanOverMask, Sum };

// -sum_i w_i * log softmax(logits_i)[target_i], divided by sum_i w_i for the
// mean reduction. Rows with zero weight contribute nothing.
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                            std::span<const double> weights,
                            CeReduction reduction = CeReduction::MeanOverMask) {
  detail::require_rank2(logits, "cross_entropy");
  const long t = logits.dim(0), vocab = logits.dim(1);
  if (static_cast<long>(targets.size()) != t || static_cast<long>(weights.size()) != t)
    throw DimensionError("cross_entropy: targets/mask length must equal sequence length");
  double mask_sum = 0.0;
  for (long i = 0; i < t; ++i) {
    if (targets[static_cast<std::size_t>(i)] < 0 ||
        targets[static_cast<std::size_t>(i)] >= vocab)
      throw ValueError("cross_entropy: target id out of vocabulary range");
    mask_sum += weights[static_cast<std::size_t>(i)];
  }
  if (mask_sum <= 0.0) throw ValueError("cross_entropy: no supervised tokens");

  const auto& lv = logits.data();
  double total = 0.0;
  for (long i = 0; i < t; ++i) {
    const double w = weights[static_cast<std::size_t>(i)];
    if (w == 0.0) continue;
    const long base = i * vocab;
    double mx = lv[static_cast<std::size_t>(base)];
    for (long v = 1; v < vocab; ++v) mx = std::max(mx, lv[static_cast<std::size_t>(base + v)]);
    double z = 0.0;
    for (long v = 0; v < vocab; ++v) z += std::exp(lv[static_cast<std::size_t>(base + v)] - mx);
    const double lse = mx + std::log(z);
    total += w * (lse - lv[static_cast<std::size_t>(base + targets[static_cast<std::size_t>(i)])]);
  }
  const double value = reduction == CeReduction::MeanOverMask ? total / mask_sum : total;

  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<double> wts(weights.begin(), weights.end());
  return make_op(
      {1}, {value}, {logits},
      [t, vocab, mask_sum, reduction, tgt = std::move(tgt),
       wts = std::move(wts)](detail::TensorNode& self) {
        auto& p = *self.parents[0];
        auto& g = detail::grad_buf(p);
        const double upstream = self.grad[0];
        for (long i = 0; i < t; ++i) {
          const double w = wts[static_cast<std::size_t>(i)];
          if (w == 0.0) continue;
          double coeff = upstream * w;
          if (reduction == CeReduction::MeanOverMask) coeff /= mask_sum;
          const long base = i * vocab;
          double mx = p.value[static_cast<std::size_t>(base)];
          for (long v = 1; v < vocab; ++v)
            mx = std::max(mx, p.value[static_cast<std::size_t>(base + v)]);
          double z = 0.0;
          for (long v = 0; v < vocab; ++v)
            z += std::exp(p.value[static_cast<std::size_t>(base + v)] - mx);
          for (long v = 0; v < vocab; ++v) {
            const auto idx = static_cast<std::size_t>(base + v);
            const double soft = std::exp(p.value[idx] - mx) / z;
            g[idx] += coeff * (soft - (v == tgt[static_cast<std::size_t>(i)] ? 1.0 : 0.0));
          }
        }
      });
}

// Gathers rows of an embedding table; backward scatter-adds.
inline Tensor embedding_rows(const Tensor& table, std::span<const int> ids) {
  detail::require_rank2(table, "embedding_rows");
  const long vocab = table.dim(0), dim = table.dim(1);
  const long t = static_cast<long>(ids.size());
  if (t == 0) throw ValueError("embedding_rows: empty id sequence");
  std::vector<double> out(static_cast<std::size_t>(t * dim));
  const auto& tv = table.data();
  for (long i = 0; i < t; ++i) {
    const int id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= vocab) throw ValueError("embedding_rows: id out of range");
    std::copy_n(tv.begin() + id * dim, dim, out.begin() + i * dim);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return make_op({t, dim}, std::move(out), {table},
                 [dim, idv = std::move(idv)](detail::TensorNode& self) {
                   auto& p = *self.parents[0];
                   auto& g = detail::grad_buf(p);
                   for (std::size_t i = 0; i < idv.size(); ++i) {
                     const long dst = static_cast<long>(idv[i]) * dim;
                     const long src = static_cast<long>(i) * dim;
                     for (long d = 0; d < dim; ++d)
                       g[static_cast<std::size_t>(dst + d)] +=
                           self.grad[static_cast<std::size_t>(src + d)];
                   }
                 });
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

inline constexpr double kRmsNormEps = 1e-6;

// y[t,d] = x[t,d] * gain[d] / sqrt(mean_d(x[t,:]^2) + eps)
inline Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps = kRmsNormEps) {
  detail::require_rank2(x, "rms_norm");
  const long t = x.dim(0), d = x.dim(1);
  if (gain.rank() != 1 || gain.dim(0) != d)
    throw DimensionError("rms_norm: gain shape " + shape_str(gain.shape()) +
                         " does not match feature dim " + std::to_string(d));
  const auto& xv = x.data();
  const auto& gv = gain.data();
  std::vector<double> out(static_cast<std::size_t>(t * d));
  for (long i = 0; i < t; ++i) {
    const long base = i * d;
    double ms = 0.0;
    for (long j = 0; j < d; ++j) {
      const double v = xv[static_cast<std::size_t>(base + j)];
      ms += v * v;
    }
    const double inv = 1.0 / std::sqrt(ms / static_cast<double>(d) + eps);
    for (long j = 0; j < d; ++j)
      out[static_cast<std::size_t>(base + j)] =
          xv[static_cast<std::size_t>(base + j)] * inv * gv[static_cast<std::size_t>(j)];
  }
  return make_op({t, d}, std::move(out), {x, gain}, [t, d, eps](detail::TensorNode& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    for (long i = 0; i < t; ++i) {
      const long base = i * d;
      double ms = 0.0;
      for (long j = 0; j < d; ++j) {
        const double v = px.value[static_cast<std::size_t>(base + j)];
        ms += v * v;
      }
      const double inv = 1.0 / std::sqrt(ms / static_cast<double>(d) + eps);
      if (pg.requires_grad) {
        auto& gg = detail::grad_buf(pg);
        for (long j = 0; j < d; ++j)
          gg[static_cast<std::size_t>(j)] += self.grad[static_cast<std::size_t>(base + j)] *
                                             px.value[static_cast<std::size_t>(base + j)] * inv;
      }
      if (px.requires_grad) {
        auto& gx = detail::grad_buf(px);
        double s = 0.0;
        for (long j = 0; j < d; ++j)
          s += self.grad[static_cast<std::size_t>(base + j)] *
               pg.value[static_cast<std::size_t>(j)] *
               px.value[static_cast<std::size_t>(base + j)];
        const double inv3 = inv * inv * inv / static_cast<double>(d);
        for (long j = 0; j < d; ++j)
          gx[static_cast<std::size_t>(base + j)] +=
              self.grad[static_cast<std::size_t>(base + j)] *
                  pg.value[static_cast<std::size_t>(j)] * inv -
              px.value[static_cast<std::size_t>(base + j)] * inv3 * s;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// rotary position embedding
// ---------------------------------------------------------------------------

// Rotates consecutive pairs (x[2i], x[2i+1]) of each row by
// position * base^(-2i / d_head). The rotation is orthogonal, so the
// backward pass applies the inverse rotation to the gradient.
inline Tensor rope(const Tensor& x, std::span<const long> positions, double base) {
  detail::require_rank2(x, "rope");
  const long t = x.dim(0), dh = x.dim(1);
  if (dh % 2 != 0)
    throw ConfigError("rope: head dimension must be even, got " + std::to_string(dh));
  if (static_cast<long>(positions.size()) != t)
    throw DimensionError("rope: positions length must equal sequence length");
  const long half = dh / 2;
  std::vector<double> inv_freq(static_cast<std::size_t>(half));
  for (long i = 0; i < half; ++i)
    inv_freq[static_cast<std::size_t>(i)] =
        std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(dh));

  const auto& xv = x.data();
  std::vector<double> out(xv.size());
  for (long r = 0; r < t; ++r) {
    const long b = r * dh;
    const auto pos = static_cast<double>(positions[static_cast<std::size_t>(r)]);
    for (long i = 0; i < half; ++i) {
      const double ang = pos * inv_freq[static_cast<std::size_t>(i)];
      const double c = std::cos(ang), s = std::sin(ang);
      const double x1 = xv[static_cast<std::size_t>(b + 2 * i)];
      const double x2 = xv[static_cast<std::size_t>(b + 2 * i + 1)];
      out[static_cast<std::size_t>(b + 2 * i)] = x1 * c - x2 * s;
      out[static_cast<std::size_t>(b + 2 * i + 1)] = x1 * s + x2 * c;
    }
  }
  std::vector<long> pos(positions.begin(), positions.end());
  return make_op({t, dh}, std::move(out), {x},
                 [t, dh, half, inv_freq = std::move(inv_freq),
                  pos = std::move(pos)](detail::TensorNode& self) {
                   auto& p = *self.parents[0];
                   auto& g = detail::grad_buf(p);
                   for (long r = 0; r < t; ++r) {
                     const long b = r * dh;
                     const auto position = static_cast<double>(pos[static_cast<std::size_t>(r)]);
                     for (long i = 0; i < half; ++i) {
                       const double ang = position * inv_freq[static_cast<std::size_t>(i)];
                       const double c = std::cos(ang), s = std::sin(ang);
                       const double g1 = self.grad[static_cast<std::size_t>(b + 2 * i)];
                       const double g2 = self.grad[static_cast<std::size_t>(b + 2 * i + 1)];
                       g[static_cast<std::size_t>(b + 2 * i)] += c * g1 + s * g2;
                       g[static_cast<std::size_t>(b + 2 * i + 1)] += -s * g1 + c * g2;
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// slicing / assembly
// ---------------------------------------------------------------------------

inline Tensor slice_cols(const Tensor& x, long c0, long c1) {
  detail::require_rank2(x, "slice_cols");
  const long t = x.dim(0), d = x.dim(1);
  if (c0 < 0 || c1 > d || c0 >= c1)
    throw DimensionError("slice_cols: bad column range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") for " + shape_str(x.shape()));
  const long w = c1 - c0;
  std::vector<double> out(static_cast<std::size_t>(t * w));
  const auto& xv = x.data();
  for (long r = 0; r < t; ++r)
    std::copy_n(xv.begin() + r * d + c0, w, out.begin() + r * w);
  return make_op({t, w}, std::move(out), {x}, [t, d, c0, w](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    auto& g = detail::grad_buf(p);
    for (long r = 0; r < t; ++r)
      for (long j = 0; j < w; ++j)
        g[static_cast<std::size_t>(r * d + c0 + j)] +=
            self.grad[static_cast<std::size_t>(r * w + j)];
  });
}

inline Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ValueError("concat_cols: empty input");
  const long t = parts[0].dim(0);
  long total = 0;
  for (const auto& part : parts) {
    detail::require_rank2(part, "concat_cols");
    if (part.dim(0) != t) throw DimensionError("concat_cols: row count mismatch");
    total += part.dim(1);
  }
  std::vector<double> out(static_cast<std::size_t>(t * total));
  std::vector<long> widths;
  widths.reserve(parts.size());
  long off = 0;
  std::vector<Tensor> parents;
  parents.reserve(parts.size());
  for (const auto& part : parts) {
    const long w = part.dim(1);
    const auto& pv = part.data();
    for (long r = 0; r < t; ++r)
      std::copy_n(pv.begin() + r * w, w, out.begin() + r * total + off);
    widths.push_back(w);
    off += w;
    parents.push_back(part);
  }
  return make_op({t, total}, std::move(out), std::move(parents),
                 [t, total, widths = std::move(widths)](detail::TensorNode& self) {
                   long col = 0;
                   for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
                     const long w = widths[pi];
                     auto& p = *self.parents[pi];
                     if (p.requires_grad) {
                       auto& g = detail::grad_buf(p);
                       for (long r = 0; r < t; ++r)
                         for (long j = 0; j < w; ++j)
                           g[static_cast<std::size_t>(r * w + j)] +=
                               self.grad[static_cast<std::size_t>(r * total + col + j)];
                     }
                     col += w;
                   }
                 });
}

inline Tensor row(const Tensor& x, long r) {
  detail::require_rank2(x, "row");
  const long t = x.dim(0), d = x.dim(1);
  if (r < 0 || r >= t) throw DimensionError("row: index out of range");
  std::vector<double> out(static_cast<std::size_t>(d));
  std::copy_n(x.data().begin() + r * d, d, out.begin());
  return make_op({1, d}, std::move(out), {x}, [r, d](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    auto& g = detail::grad_buf(p);
    for (long j = 0; j < d; ++j)
      g[static_cast<std::size_t>(r * d + j)] += self.grad[static_cast<std::size_t>(j)];
  });
}

}  // namespace tinyalign
