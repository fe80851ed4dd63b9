#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "legato/autodiff.hpp"
#include "legato/rng.hpp"

namespace legato {

/// Named parameters and state buffers with a stable, insertion-defined
/// iteration order. Buffers (running statistics) are non-trainable entries.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Var var;
    bool trainable;
  };

  Var create(const std::string& name, Tensor init, bool trainable = true);
  Var get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t trainable_scalar_count() const;
  void zero_grads();

  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Glorot-style uniform init over [-a, a] with a = sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(Rng& rng, std::vector<std::size_t> shape, std::size_t fan_in,
                      std::size_t fan_out);

struct GradCheckEntry {
  std::string name;
  double max_rel_dev;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst = 0.0;
  bool pass = false;
};

/// Compare analytic gradients of a scalar function against central finite
/// differences, per trainable parameter entry. Relative deviation uses a
/// 1e-4 magnitude floor so near-zero gradients are judged by absolute error.
GradCheckReport grad_check(const std::function<Var(ParameterStore&)>& f, ParameterStore& store,
                           double step, double tol);

}  // namespace legato
