#include "legato/params.hpp"

#include <cmath>

namespace legato {

Var ParameterStore::create(const std::string& name, Tensor init, bool trainable) {
  if (index_.count(name)) {
    throw TensorError("parameter store: duplicate name '" + name + "'");
  }
  Var v = Var::leaf(std::move(init), trainable);
  index_[name] = entries_.size();
  entries_.push_back({name, v, trainable});
  return v;
}

Var ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw TensorError("parameter store: unknown name '" + name + "'");
  }
  return entries_[it->second].var;
}

std::size_t ParameterStore::trainable_scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.trainable) n += e.var.value().size();
  }
  return n;
}

void ParameterStore::zero_grads() {
  for (auto& e : entries_) e.var.zero_grad();
}

std::vector<Tensor> ParameterStore::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.var.value());
  return out;
}

void ParameterStore::restore(const std::vector<Tensor>& values) {
  if (values.size() != entries_.size()) {
    throw TensorError("parameter store: snapshot size mismatch");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!values[i].same_shape(entries_[i].var.value())) {
      throw TensorError("parameter store: snapshot shape mismatch at '" + entries_[i].name + "'");
    }
    entries_[i].var.value_mut() = values[i];
  }
}

Tensor glorot_uniform(Rng& rng, std::vector<std::size_t> shape, std::size_t fan_in,
                      std::size_t fan_out) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-a, a);
  return t;
}

GradCheckReport grad_check(const std::function<Var(ParameterStore&)>& f, ParameterStore& store,
                           double step, double tol) {
  if (step <= 0.0 || tol <= 0.0) throw TensorError("grad_check: step and tol must be positive");

  auto eval = [&](void) -> double {
    NoGradGuard guard;
    Var out = f(store);
    if (out.value().size() != 1) {
      throw TensorError("grad_check: function output must be scalar, got " +
                        out.value().shape_str());
    }
    return out.value().item();
  };

  // Analytic pass.
  store.zero_grads();
  Var out = f(store);
  if (out.value().size() != 1) {
    throw TensorError("grad_check: function output must be scalar, got " +
                      out.value().shape_str());
  }
  backward(out);
  std::vector<Tensor> analytic;
  for (const auto& e : store.entries()) {
    analytic.push_back(e.trainable && e.var.has_grad() ? e.var.grad()
                                                       : Tensor(e.var.value().shape()));
  }

  GradCheckReport report;
  // Below this magnitude the comparison is effectively absolute; central
  // differences of an O(1) function carry ~1e-11 rounding noise at step
  // 1e-5, so a 1e-4 floor keeps zero-gradient entries from tripping on it.
  constexpr double kFloor = 1e-4;
  for (std::size_t pi = 0; pi < store.entries().size(); ++pi) {
    const auto& e = store.entries()[pi];
    if (!e.trainable) continue;
    Tensor& theta = const_cast<Var&>(e.var).value_mut();
    double worst = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double orig = theta[i];
      const double a = analytic[pi][i];
      auto deviation_at = [&](double h) {
        theta[i] = orig + h;
        const double fp = eval();
        theta[i] = orig - h;
        const double fm = eval();
        theta[i] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        return std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), kFloor});
      };
      double dev = deviation_at(step);
      if (dev >= tol) {
        // A ReLU kink inside the step window makes the central difference
        // one-sided. Refining the step collapses that; a wrong backward
        // rule keeps the deviation.
        dev = std::min(dev, deviation_at(step / 16.0));
      }
      worst = std::max(worst, dev);
    }
    report.entries.push_back({e.name, worst});
    report.worst = std::max(report.worst, worst);
  }
  report.pass = report.worst < tol;
  store.zero_grads();
  return report;
}

}  // namespace legato
