#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "tdformer/tensor.hpp"

namespace tdformer::testing {

// Max abs difference between autodiff and central differences of a scalar
// function of the given leaves.
inline double gradcheck(const std::vector<Var>& leaves, const std::function<Var()>& f,
                        double h = 1e-6) {
  for (const Var& l : leaves) l->zero_grad();
  Var y = f();
  backward(y);
  double worst = 0.0;
  for (const Var& l : leaves) {
    std::vector<double> analytic = l->grad;
    analytic.resize(l->values.size(), 0.0);
    for (std::size_t i = 0; i < l->values.size(); ++i) {
      const double x0 = l->values[i];
      double up;
      double down;
      {
        NoGradScope ng;
        l->values[i] = x0 + h;
        up = f()->item();
        l->values[i] = x0 - h;
        down = f()->item();
      }
      l->values[i] = x0;
      const double numeric = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(numeric - analytic[i]));
    }
  }
  return worst;
}

inline Var random_leaf(Shape shape, unsigned seed, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape.numel());
  unsigned s = seed * 2654435761u + 12345u;
  for (double& x : v) {
    s = s * 1664525u + 1013904223u;
    x = lo + (hi - lo) * (static_cast<double>(s >> 8) / static_cast<double>(1u << 24));
  }
  return make_tensor(std::move(shape), std::move(v), true);
}

}  // namespace tdformer::testing
