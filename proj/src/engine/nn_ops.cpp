#include <algorithm>
#include <cmath>

#include "tdformer/tensor.hpp"

namespace tdformer {

Var linear(const Var& x, const Var& weight, const Var& bias) {
  if (weight->shape.rank() != 2) {
    throw DimensionError("linear weight must be [C_in, C_out], got " +
                         weight->shape.str());
  }
  const Shape& sx = x->shape;
  if (sx.rank() == 0 || sx[sx.rank() - 1] != weight->shape[0]) {
    throw DimensionError("linear: input " + sx.str() + " does not end in C_in=" +
                         std::to_string(weight->shape[0]));
  }
  Var input = x;
  if (sx.rank() == 1) input = reshape(x, Shape{1, sx[0]});
  Var out = matmul(input, weight);
  if (bias) {
    if (bias->shape != Shape{weight->shape[1]}) {
      throw DimensionError("linear bias must be [C_out], got " + bias->shape.str());
    }
    out = add(out, bias);
  }
  if (sx.rank() == 1) out = reshape(out, Shape{weight->shape[1]});
  return out;
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state,
               const BatchNormOptions& options) {
  const Shape& s = x->shape;
  if (options.channel_axis >= s.rank()) {
    throw DimensionError("batch_norm channel axis " +
                         std::to_string(options.channel_axis) + " out of range for " +
                         s.str());
  }
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < options.channel_axis; ++i) outer *= s[i];
  for (std::size_t i = options.channel_axis + 1; i < s.rank(); ++i) inner *= s[i];
  const std::size_t channels = s[options.channel_axis];
  if (gamma->shape != Shape{channels} || beta->shape != Shape{channels}) {
    throw DimensionError("batch_norm scale/shift must be [" + std::to_string(channels) +
                         "]");
  }
  const std::size_t count = outer * inner;
  const auto at = [&](std::size_t o, std::size_t c, std::size_t i) {
    return (o * channels + c) * inner + i;
  };

  std::vector<double> mean_c(channels, 0.0);
  std::vector<double> inv_std(channels, 0.0);
  const auto& xv = x->values;
  if (options.mode == NormMode::train) {
    if (!state.initialized) {
      state.running_mean.assign(channels, 0.0);
      state.running_var.assign(channels, 1.0);
      state.initialized = true;
    }
    for (std::size_t c = 0; c < channels; ++c) {
      double sum = 0.0;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) sum += xv[at(o, c, i)];
      const double mu = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = xv[at(o, c, i)] - mu;
          sq += d * d;
        }
      const double var = sq / static_cast<double>(count);
      const double unbiased =
          count > 1 ? sq / static_cast<double>(count - 1) : var;
      mean_c[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + options.eps);
      state.running_mean[c] =
          (1.0 - options.momentum) * state.running_mean[c] + options.momentum * mu;
      state.running_var[c] =
          (1.0 - options.momentum) * state.running_var[c] + options.momentum * unbiased;
    }
  } else {
    if (!state.initialized) {
      throw NumericError(
          "batch_norm in eval mode before any train step: running statistics are "
          "uninitialized");
    }
    for (std::size_t c = 0; c < channels; ++c) {
      mean_c[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + options.eps);
    }
  }

  std::vector<double> xhat(xv.size());
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t k = at(o, c, i);
        xhat[k] = (xv[k] - mean_c[c]) * inv_std[c];
        out[k] = gamma->values[c] * xhat[k] + beta->values[c];
      }

  const bool train = options.mode == NormMode::train;
  return make_result(
      s, std::move(out), "batch_norm", {x, gamma, beta},
      [xhat = std::move(xhat), inv_std, outer, inner, channels, count, train](Node& self) {
        Node& nx = *self.parents[0];
        Node& ng = *self.parents[1];
        Node& nb = *self.parents[2];
        const auto& g = self.grad;
        const auto at = [&](std::size_t o, std::size_t c, std::size_t i) {
          return (o * channels + c) * inner + i;
        };
        for (std::size_t c = 0; c < channels; ++c) {
          double sum_g = 0.0;
          double sum_gx = 0.0;
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < inner; ++i) {
              const std::size_t k = at(o, c, i);
              sum_g += g[k];
              sum_gx += g[k] * xhat[k];
            }
          if (ng.requires_grad) ng.grad_buffer()[c] += sum_gx;
          if (nb.requires_grad) nb.grad_buffer()[c] += sum_g;
          if (!nx.requires_grad) continue;
          auto gx = nx.grad_buffer();
          const double gam = ng.values[c];
          if (train) {
            const double mg = sum_g / static_cast<double>(count);
            const double mgx = sum_gx / static_cast<double>(count);
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t k = at(o, c, i);
                gx[k] += gam * inv_std[c] * (g[k] - mg - xhat[k] * mgx);
              }
          } else {
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t k = at(o, c, i);
                gx[k] += gam * inv_std[c] * g[k];
              }
          }
        }
      });
}

Var gather_neighbors(const Var& x, const std::vector<std::vector<long>>& table) {
  const Shape& s = x->shape;
  if (s.rank() < 2) throw DimensionError("gather_neighbors needs [..., N, C]");
  const std::size_t n_in = s[s.rank() - 2];
  const std::size_t c = s[s.rank() - 1];
  const std::size_t n_out = table.size();
  if (n_out == 0) throw DimensionError("gather_neighbors: empty table");
  const std::size_t k = table[0].size();
  for (const auto& row : table) {
    if (row.size() != k) throw DimensionError("gather_neighbors: ragged table");
    for (long idx : row) {
      if (idx >= static_cast<long>(n_in)) {
        throw DimensionError("gather_neighbors: index out of range");
      }
    }
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i + 2 < s.rank(); ++i) outer *= s[i];
  std::vector<double> out(outer * n_out * k * c, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t n = 0; n < n_out; ++n)
      for (std::size_t kk = 0; kk < k; ++kk) {
        const long src = table[n][kk];
        if (src < 0) continue;
        std::copy_n(x->values.data() + (o * n_in + static_cast<std::size_t>(src)) * c, c,
                    out.data() + ((o * n_out + n) * k + kk) * c);
      }
  std::vector<std::size_t> dims = s.dims();
  dims[dims.size() - 2] = n_out;
  dims[dims.size() - 1] = k * c;
  return make_result(Shape(std::move(dims)), std::move(out), "gather_neighbors", {x},
                     [table, outer, n_in, n_out, k, c](Node& self) {
                       auto gx = self.parents[0]->grad_buffer();
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t n = 0; n < n_out; ++n)
                           for (std::size_t kk = 0; kk < k; ++kk) {
                             const long src = table[n][kk];
                             if (src < 0) continue;
                             const double* g =
                                 self.grad.data() + ((o * n_out + n) * k + kk) * c;
                             double* dst =
                                 gx.data() + (o * n_in + static_cast<std::size_t>(src)) * c;
                             for (std::size_t i = 0; i < c; ++i) dst[i] += g[i];
                           }
                     });
}

Var cross_entropy(const Var& logits, std::span<const int> targets) {
  const Shape& s = logits->shape;
  if (s.rank() != 2) throw DimensionError("cross_entropy expects [B, L], got " + s.str());
  const std::size_t batch = s[0];
  const std::size_t classes = s[1];
  if (targets.size() != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for batch of " + std::to_string(batch));
  }
  std::vector<double> probs(batch * classes);
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const int y = targets[b];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw DomainError("cross_entropy: target " + std::to_string(y) + " out of range");
    }
    const double* row = logits->values.data() + b * classes;
    const double mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t j = 0; j < classes; ++j) z += std::exp(row[j] - mx);
    const double log_z = std::log(z) + mx;
    for (std::size_t j = 0; j < classes; ++j) {
      probs[b * classes + j] = std::exp(row[j] - log_z);
    }
    loss += log_z - row[y];
  }
  loss /= static_cast<double>(batch);
  std::vector<int> ys(targets.begin(), targets.end());
  return make_result(Shape{}, {loss}, "cross_entropy", {logits},
                     [probs = std::move(probs), ys = std::move(ys), batch,
                      classes](Node& self) {
                       auto gl = self.parents[0]->grad_buffer();
                       const double g = self.grad[0] / static_cast<double>(batch);
                       for (std::size_t b = 0; b < batch; ++b)
                         for (std::size_t j = 0; j < classes; ++j) {
                           const double onehot = static_cast<int>(j) == ys[b] ? 1.0 : 0.0;
                           gl[b * classes + j] += g * (probs[b * classes + j] - onehot);
                         }
                     });
}

}  // namespace tdformer
