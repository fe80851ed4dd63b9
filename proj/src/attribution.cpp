#include "legato/attribution.hpp"

#include <cmath>

namespace legato {

namespace {

Var target_scalar(const Var& latent_h, const IgTarget& target) {
  const Tensor& hz = latent_h.value();  // (1, K', r)
  const std::size_t nodes = hz.dim(1), dims = hz.dim(2);
  if (target.node >= nodes) {
    throw TensorError("attribution: latent node " + std::to_string(target.node) +
                      " out of range (" + std::to_string(nodes) + " nodes)");
  }
  if (target.dim >= 0) {
    if (static_cast<std::size_t>(target.dim) >= dims) {
      throw TensorError("attribution: latent dim out of range");
    }
    Tensor mask({1, nodes, dims});
    mask.at(0, target.node, static_cast<std::size_t>(target.dim)) = 1.0;
    return sum_all(mul(latent_h, Var::constant(std::move(mask))));
  }
  Tensor mask({1, nodes, dims});
  for (std::size_t j = 0; j < dims; ++j) mask.at(0, target.node, j) = 1.0;
  Var row = mul(latent_h, Var::constant(std::move(mask)));
  return sqrt_op(clamp_min(sum_all(mul(row, row)), 1e-24));
}

}  // namespace

IgResult integrated_gradients_fn(const std::function<Var(const std::vector<Var>&)>& f,
                                 const std::vector<Tensor>& x,
                                 const std::vector<Tensor>& baseline, int steps) {
  if (steps < 1) throw TensorError("attribution: steps must be >= 1");
  const std::size_t k = x.size();
  std::vector<Tensor> base = baseline;
  if (base.empty()) {
    for (const auto& v : x) base.push_back(Tensor(v.shape()));
  }

  auto eval = [&](const std::vector<Tensor>& input) {
    NoGradGuard guard;
    std::vector<Var> vars;
    vars.reserve(k);
    for (const auto& t : input) vars.push_back(Var::constant(t));
    return f(vars).value().item();
  };

  std::vector<Tensor> avg_grads;
  for (const auto& v : x) avg_grads.push_back(Tensor(v.shape()));

  for (int s = 1; s <= steps; ++s) {
    // Midpoint rule: quadratically smaller quadrature error than endpoint
    // sampling, which matters for the completeness identity at small steps.
    const double t = (static_cast<double>(s) - 0.5) / static_cast<double>(steps);
    std::vector<Var> inputs;
    inputs.reserve(k);
    for (std::size_t v = 0; v < k; ++v) {
      Tensor xt(x[v].shape());
      for (std::size_t i = 0; i < xt.size(); ++i) {
        xt[i] = base[v][i] + t * (x[v][i] - base[v][i]);
      }
      inputs.push_back(Var::leaf(std::move(xt), /*requires_grad=*/true));
    }
    backward(f(inputs));
    for (std::size_t v = 0; v < k; ++v) {
      if (!inputs[v].has_grad()) continue;
      const Tensor& g = inputs[v].grad();
      for (std::size_t i = 0; i < g.size(); ++i) avg_grads[v][i] += g[i];
    }
  }

  IgResult res;
  res.target_value = eval(x);
  res.baseline_value = eval(base);
  res.view_attributions.assign(k, 0.0);
  double norm = 0.0;
  for (std::size_t v = 0; v < k; ++v) {
    Tensor ig({x[v].size()});
    for (std::size_t i = 0; i < ig.size(); ++i) {
      ig[i] = (x[v][i] - base[v][i]) * avg_grads[v][i] / static_cast<double>(steps);
      res.attribution_sum += ig[i];
      res.view_attributions[v] += std::fabs(ig[i]);
    }
    norm += res.view_attributions[v];
    res.feature_attributions.push_back(std::move(ig));
  }
  if (norm > 0.0) {
    for (auto& a : res.view_attributions) a /= norm;
  }
  return res;
}

IgResult integrated_gradients(LegatoModel& model, const std::vector<Tensor>& x,
                              const std::vector<Tensor>& baseline, IgTarget target,
                              int steps) {
  if (x.size() != model.config().num_views) {
    throw TensorError("attribution: wrong view count");
  }
  for (const auto& v : x) {
    if (v.dim(0) != 1) throw TensorError("attribution: expected a single-sample input");
  }
  const bool was_training = model.training();
  model.set_training(false);
  auto f = [&](const std::vector<Var>& views) {
    return target_scalar(model.forward(views).latent_h, target);
  };
  IgResult res = integrated_gradients_fn(f, x, baseline, steps);
  model.set_training(was_training);
  return res;
}

}  // namespace legato
