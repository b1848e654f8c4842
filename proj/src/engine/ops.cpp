#include <algorithm>
#include <array>
#include <cmath>

#include "tdformer/tensor.hpp"

namespace tdformer {

namespace {

struct BroadcastPlan {
  std::vector<std::size_t> dims;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  std::size_t numel = 1;
  bool same = false;
};

std::vector<std::size_t> contiguous_strides(const std::vector<std::size_t>& dims) {
  std::vector<std::size_t> strides(dims.size(), 1);
  for (std::size_t i = dims.size(); i-- > 1;) strides[i - 1] = strides[i] * dims[i];
  return strides;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan plan;
  if (a == b) {
    plan.same = true;
    plan.dims = a.dims();
    plan.numel = a.numel();
    return plan;
  }
  const std::size_t rank = std::max(a.rank(), b.rank());
  plan.dims.assign(rank, 1);
  plan.stride_a.assign(rank, 0);
  plan.stride_b.assign(rank, 0);
  const auto sa = contiguous_strides(a.dims());
  const auto sb = contiguous_strides(b.dims());
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ia = i + a.rank() - rank;  // may wrap for missing axes
    const std::size_t ib = i + b.rank() - rank;
    const bool has_a = i + a.rank() >= rank;
    const bool has_b = i + b.rank() >= rank;
    const std::size_t da = has_a ? a[ia] : 1;
    const std::size_t db = has_b ? b[ib] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + a.str() +
                           " with " + b.str());
    }
    plan.dims[i] = std::max(da, db);
    if (has_a && da != 1) plan.stride_a[i] = sa[ia];
    if (has_b && db != 1) plan.stride_b[i] = sb[ib];
  }
  plan.numel = Shape(plan.dims).numel();
  return plan;
}

template <class F>
void for_each_broadcast(const BroadcastPlan& plan, F&& f) {
  if (plan.same) {
    for (std::size_t i = 0; i < plan.numel; ++i) f(i, i, i);
    return;
  }
  const std::size_t rank = plan.dims.size();
  std::array<std::size_t, Shape::kMaxRank> idx{};
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t o = 0; o < plan.numel; ++o) {
    f(o, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += plan.stride_a[d];
      ib += plan.stride_b[d];
      if (idx[d] < plan.dims[d]) break;
      ia -= plan.stride_a[d] * plan.dims[d];
      ib -= plan.stride_b[d] * plan.dims[d];
      idx[d] = 0;
    }
  }
}

void count_elementwise(double n) {
  if (OpCounter* c = active_counter()) {
    OpCounts counts;
    counts.elementwise = n;
    c->record(active_count_label(), counts);
  }
}

enum class BinaryKind { add, sub, mul };

Var binary(const Var& a, const Var& b, BinaryKind kind, const char* tag) {
  const BroadcastPlan plan = plan_broadcast(a->shape, b->shape, tag);
  std::vector<double> out(plan.numel);
  const auto& av = a->values;
  const auto& bv = b->values;
  switch (kind) {
    case BinaryKind::add:
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
        out[o] = av[i] + bv[j];
      });
      break;
    case BinaryKind::sub:
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
        out[o] = av[i] - bv[j];
      });
      break;
    case BinaryKind::mul:
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
        out[o] = av[i] * bv[j];
      });
      count_elementwise(static_cast<double>(plan.numel));
      break;
  }
  return make_result(Shape(plan.dims), std::move(out), tag, {a, b},
                     [plan, kind](Node& self) {
                       Node& pa = *self.parents[0];
                       Node& pb = *self.parents[1];
                       const auto& g = self.grad;
                       if (pa.requires_grad) {
                         auto ga = pa.grad_buffer();
                         if (kind == BinaryKind::mul) {
                           const auto& bv = pb.values;
                           for_each_broadcast(plan, [&](std::size_t o, std::size_t i,
                                                        std::size_t j) {
                             ga[i] += g[o] * bv[j];
                           });
                         } else {
                           for_each_broadcast(plan, [&](std::size_t o, std::size_t i,
                                                        std::size_t) { ga[i] += g[o]; });
                         }
                       }
                       if (pb.requires_grad) {
                         auto gb = pb.grad_buffer();
                         if (kind == BinaryKind::mul) {
                           const auto& av = pa.values;
                           for_each_broadcast(plan, [&](std::size_t o, std::size_t i,
                                                        std::size_t j) {
                             gb[j] += g[o] * av[i];
                           });
                         } else {
                           const double sign = kind == BinaryKind::sub ? -1.0 : 1.0;
                           for_each_broadcast(plan, [&](std::size_t o, std::size_t,
                                                        std::size_t j) {
                             gb[j] += sign * g[o];
                           });
                         }
                       }
                     });
}

// Splits a shape around `axis` into (outer, extent, inner) block sizes.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit split;
  for (std::size_t i = 0; i < axis; ++i) split.outer *= s[i];
  split.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.rank(); ++i) split.inner *= s[i];
  return split;
}

}  // namespace

Var add(const Var& a, const Var& b) { return binary(a, b, BinaryKind::add, "add"); }
Var sub(const Var& a, const Var& b) { return binary(a, b, BinaryKind::sub, "sub"); }
Var hadamard(const Var& a, const Var& b) {
  return binary(a, b, BinaryKind::mul, "hadamard");
}

Var scale(const Var& a, double s) {
  std::vector<double> out(a->values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->values[i] * s;
  return make_result(a->shape, std::move(out), "scale", {a}, [s](Node& self) {
    auto ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * self.grad[i];
  });
}

Var add_scalar(const Var& a, double s) {
  std::vector<double> out(a->values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->values[i] + s;
  return make_result(a->shape, std::move(out), "add_scalar", {a}, [](Node& self) {
    auto ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

Var matmul(const Var& a, const Var& b) {
  const Shape& sa = a->shape;
  const Shape& sb = b->shape;
  if (sa.rank() < 2 || sb.rank() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + sa.str() +
                         " and " + sb.str());
  }
  const std::size_t m = sa[sa.rank() - 2];
  const std::size_t k = sa[sa.rank() - 1];
  const std::size_t kb = sb[sb.rank() - 2];
  const std::size_t p = sb[sb.rank() - 1];
  if (k != kb) {
    throw DimensionError("matmul inner extents differ: " + sa.str() + " x " +
                         sb.str());
  }
  const Shape batch_a(std::vector<std::size_t>(sa.dims().begin(), sa.dims().end() - 2));
  const Shape batch_b(std::vector<std::size_t>(sb.dims().begin(), sb.dims().end() - 2));
  BroadcastPlan plan;
  try {
    plan = plan_broadcast(batch_a, batch_b, "matmul");
  } catch (const DimensionError&) {
    throw DimensionError("matmul batch axes not broadcast-compatible: " + sa.str() +
                         " x " + sb.str());
  }
  // (offset into a, offset into b) per output matrix
  std::vector<std::array<std::size_t, 2>> pairs;
  pairs.reserve(plan.numel);
  for_each_broadcast(plan, [&](std::size_t, std::size_t ia, std::size_t ib) {
    pairs.push_back({ia * m * k, ib * k * p});
  });
  std::vector<double> out(plan.numel * m * p, 0.0);
  const double* av = a->values.data();
  const double* bv = b->values.data();
  double nonzero = 0;
  for (std::size_t bi = 0; bi < pairs.size(); ++bi) {
    const double* am = av + pairs[bi][0];
    const double* bm = bv + pairs[bi][1];
    double* om = out.data() + bi * m * p;
    for (std::size_t i = 0; i < m; ++i) {
      double* orow = om + i * p;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double aik = am[i * k + kk];
        if (aik == 0.0) continue;
        nonzero += 1;
        const double* brow = bm + kk * p;
        for (std::size_t j = 0; j < p; ++j) orow[j] += aik * brow[j];
      }
    }
  }
  if (OpCounter* c = active_counter()) {
    OpCounts counts;
    counts.macs = static_cast<double>(pairs.size() * m * k * p);
    counts.accumulates = nonzero * static_cast<double>(p);
    counts.left_elements = static_cast<double>(pairs.size() * m * k);
    counts.left_nonzero = nonzero;
    c->record(active_count_label(), counts);
  }
  std::vector<std::size_t> out_dims = plan.dims;
  out_dims.push_back(m);
  out_dims.push_back(p);
  return make_result(
      Shape(std::move(out_dims)), std::move(out), "matmul", {a, b},
      [pairs = std::move(pairs), m, k, p](Node& self) {
        Node& na = *self.parents[0];
        Node& nb = *self.parents[1];
        const double* g = self.grad.data();
        if (na.requires_grad) {
          auto ga = na.grad_buffer();
          const double* bv = nb.values.data();
          for (std::size_t bi = 0; bi < pairs.size(); ++bi) {
            const double* gm = g + bi * m * p;
            const double* bm = bv + pairs[bi][1];
            double* gam = ga.data() + pairs[bi][0];
            for (std::size_t i = 0; i < m; ++i) {
              for (std::size_t kk = 0; kk < k; ++kk) {
                double acc = 0.0;
                const double* brow = bm + kk * p;
                const double* grow = gm + i * p;
                for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
                gam[i * k + kk] += acc;
              }
            }
          }
        }
        if (nb.requires_grad) {
          auto gb = nb.grad_buffer();
          const double* av = na.values.data();
          for (std::size_t bi = 0; bi < pairs.size(); ++bi) {
            const double* gm = g + bi * m * p;
            const double* am = av + pairs[bi][0];
            double* gbm = gb.data() + pairs[bi][1];
            for (std::size_t i = 0; i < m; ++i) {
              for (std::size_t kk = 0; kk < k; ++kk) {
                const double aik = am[i * k + kk];
                if (aik == 0.0) continue;
                double* gbrow = gbm + kk * p;
                const double* grow = gm + i * p;
                for (std::size_t j = 0; j < p; ++j) gbrow[j] += aik * grow[j];
              }
            }
          }
        }
      });
}

Var reduce_sum(const Var& a, std::size_t axis, bool keepdim) {
  if (axis >= a->shape.rank()) {
    throw DimensionError("reduce_sum axis " + std::to_string(axis) +
                         " out of range for " + a->shape.str());
  }
  const AxisSplit s = split_axis(a->shape, axis);
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto& av = a->values;
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      const double* src = av.data() + (o * s.extent + e) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  count_elementwise(static_cast<double>(av.size()));
  std::vector<std::size_t> dims = a->shape.dims();
  if (keepdim) {
    dims[axis] = 1;
  } else {
    dims.erase(dims.begin() + static_cast<long>(axis));
  }
  return make_result(Shape(std::move(dims)), std::move(out), "reduce_sum", {a},
                     [s](Node& self) {
                       auto ga = self.parents[0]->grad_buffer();
                       for (std::size_t o = 0; o < s.outer; ++o) {
                         for (std::size_t e = 0; e < s.extent; ++e) {
                           double* dst = ga.data() + (o * s.extent + e) * s.inner;
                           const double* src = self.grad.data() + o * s.inner;
                           for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Var mean(const Var& a, std::size_t axis, bool keepdim) {
  if (axis >= a->shape.rank()) {
    throw DimensionError("mean axis out of range for " + a->shape.str());
  }
  return scale(reduce_sum(a, axis, keepdim), 1.0 / static_cast<double>(a->shape[axis]));
}

Var sum_all(const Var& a) {
  double total = 0.0;
  for (double v : a->values) total += v;
  return make_result(Shape{}, {total}, "sum_all", {a}, [](Node& self) {
    auto ga = self.parents[0]->grad_buffer();
    const double g = self.grad[0];
    for (double& v : ga) v += g;
  });
}

Var mean_all(const Var& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a->values.size()));
}

Var clamp(const Var& a, double lo, double hi, ClampGrad mode) {
  if (!(lo < hi)) {
    throw ConfigError("clamp requires lower bound < upper bound, got [" +
                      std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  std::vector<double> out(a->values.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::min(std::max(a->values[i], lo), hi);
  }
  return make_result(a->shape, std::move(out), "clamp", {a}, [lo, hi, mode](Node& self) {
    Node& pa = *self.parents[0];
    auto ga = pa.grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const double x = pa.values[i];
      if (mode == ClampGrad::straight_through || (x > lo && x < hi)) {
        ga[i] += self.grad[i];
      }
    }
  });
}

Var concat(const Var& a, const Var& b, std::size_t axis) {
  const std::array<Var, 2> parts{a, b};
  return concat(std::span<const Var>(parts), axis);
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts[0]->shape;
  if (axis >= first.rank()) {
    throw DimensionError("concat axis " + std::to_string(axis) +
                         " out of range for " + first.str());
  }
  std::vector<std::size_t> dims = first.dims();
  std::size_t total = 0;
  std::vector<std::size_t> extents;
  for (const Var& part : parts) {
    const Shape& s = part->shape;
    if (s.rank() != first.rank()) {
      throw DimensionError("concat rank mismatch: " + first.str() + " vs " + s.str());
    }
    for (std::size_t i = 0; i < s.rank(); ++i) {
      if (i != axis && s[i] != first[i]) {
        throw DimensionError("concat extent mismatch on axis " + std::to_string(i) +
                             ": " + first.str() + " vs " + s.str());
      }
    }
    extents.push_back(s[axis]);
    total += s[axis];
  }
  dims[axis] = total;
  const AxisSplit s0 = split_axis(first, axis);
  const std::size_t outer = s0.outer;
  const std::size_t inner = s0.inner;
  std::vector<double> out(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& pv = parts[pi]->values;
    const std::size_t block = extents[pi] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.data() + o * block, block, out.data() + (o * total + offset) * inner);
    }
    offset += extents[pi];
  }
  return make_result(Shape(std::move(dims)), std::move(out), "concat",
                     std::vector<Var>(parts.begin(), parts.end()),
                     [extents, outer, inner, total](Node& self) {
                       std::size_t offset = 0;
                       for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
                         Node& p = *self.parents[pi];
                         const std::size_t block = extents[pi] * inner;
                         if (p.requires_grad) {
                           auto gp = p.grad_buffer();
                           for (std::size_t o = 0; o < outer; ++o) {
                             const double* src =
                                 self.grad.data() + (o * total + offset) * inner;
                             double* dst = gp.data() + o * block;
                             for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                           }
                         }
                         offset += extents[pi];
                       }
                     });
}

Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= a->shape.rank() || begin >= end || end > a->shape[axis]) {
    throw DimensionError("invalid slice [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") on axis " + std::to_string(axis) +
                         " of " + a->shape.str());
  }
  const AxisSplit s = split_axis(a->shape, axis);
  const std::size_t len = end - begin;
  std::vector<double> out(s.outer * len * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(a->values.data() + (o * s.extent + begin) * s.inner, len * s.inner,
                out.data() + o * len * s.inner);
  }
  std::vector<std::size_t> dims = a->shape.dims();
  dims[axis] = len;
  return make_result(Shape(std::move(dims)), std::move(out), "slice", {a},
                     [s, begin, len](Node& self) {
                       auto ga = self.parents[0]->grad_buffer();
                       for (std::size_t o = 0; o < s.outer; ++o) {
                         const double* src = self.grad.data() + o * len * s.inner;
                         double* dst = ga.data() + (o * s.extent + begin) * s.inner;
                         for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
                       }
                     });
}

Var reshape(const Var& a, Shape shape) {
  if (shape.numel() != a->shape.numel()) {
    throw DimensionError("cannot reshape " + a->shape.str() + " to " + shape.str());
  }
  return make_result(std::move(shape), a->values, "reshape", {a}, [](Node& self) {
    auto ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

Var permute(const Var& a, const std::vector<std::size_t>& axes) {
  const Shape& s = a->shape;
  if (axes.size() != s.rank()) {
    throw DimensionError("permute needs " + std::to_string(s.rank()) + " axes");
  }
  std::vector<bool> seen(s.rank(), false);
  for (std::size_t ax : axes) {
    if (ax >= s.rank() || seen[ax]) throw DimensionError("permute axes invalid");
    seen[ax] = true;
  }
  const auto in_strides = contiguous_strides(s.dims());
  std::vector<std::size_t> dims(s.rank());
  std::vector<std::size_t> strides(s.rank());
  for (std::size_t i = 0; i < s.rank(); ++i) {
    dims[i] = s[axes[i]];
    strides[i] = in_strides[axes[i]];
  }
  // gather map: out index -> in index
  const std::size_t n = s.numel();
  std::vector<std::size_t> source(n);
  std::array<std::size_t, Shape::kMaxRank> idx{};
  std::size_t in = 0;
  for (std::size_t o = 0; o < n; ++o) {
    source[o] = in;
    for (std::size_t d = dims.size(); d-- > 0;) {
      ++idx[d];
      in += strides[d];
      if (idx[d] < dims[d]) break;
      in -= strides[d] * dims[d];
      idx[d] = 0;
    }
  }
  std::vector<double> out(n);
  for (std::size_t o = 0; o < n; ++o) out[o] = a->values[source[o]];
  return make_result(Shape(std::move(dims)), std::move(out), "permute", {a},
                     [source = std::move(source)](Node& self) {
                       auto ga = self.parents[0]->grad_buffer();
                       for (std::size_t o = 0; o < source.size(); ++o) {
                         ga[source[o]] += self.grad[o];
                       }
                     });
}

}  // namespace tdformer
