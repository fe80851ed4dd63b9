#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "legato/autodiff.hpp"
#include "legato/rng.hpp"

namespace legato::testutil {

inline Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * scale;
  return t;
}

/// Central-difference check of d(f)/d(leaf) for every given leaf, against the
/// gradients backward() accumulates. Returns the worst relative deviation.
inline double finite_diff_worst(const std::function<Var(const std::vector<Var>&)>& f,
                                std::vector<Var>& leaves, double step = 1e-5) {
  for (auto& leaf : leaves) leaf.zero_grad();
  Var out = f(leaves);
  backward(out);

  std::vector<Tensor> analytic;
  for (auto& leaf : leaves) {
    analytic.push_back(leaf.has_grad() ? leaf.grad() : Tensor(leaf.value().shape()));
  }

  auto eval = [&]() {
    NoGradGuard guard;
    return f(leaves).value().item();
  };

  double worst = 0.0;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    Tensor& theta = leaves[l].value_mut();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double orig = theta[i];
      theta[i] = orig + step;
      const double fp = eval();
      theta[i] = orig - step;
      const double fm = eval();
      theta[i] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[l][i];
      const double dev =
          std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-6});
      worst = std::max(worst, dev);
    }
  }
  for (auto& leaf : leaves) leaf.zero_grad();
  return worst;
}

}  // namespace legato::testutil
