#pragma once

#include "legato/model.hpp"

namespace legato {

/// Scalar target for attribution: one coordinate of a latent node embedding,
/// or (with dim < 0) the embedding's L2 norm.
struct IgTarget {
  std::size_t node = 0;
  int dim = -1;
};

struct IgResult {
  std::vector<Tensor> feature_attributions;  // per view, (d_k)
  std::vector<double> view_attributions;     // |IG| mass per view, sums to 1
  double target_value = 0.0;
  double baseline_value = 0.0;
  double attribution_sum = 0.0;  // completeness: compare with target - baseline
};

/// Path-integrated gradients of an arbitrary scalar function of the views,
/// along the straight line from baseline to x. Baseline may be empty,
/// meaning all zeros.
IgResult integrated_gradients_fn(const std::function<Var(const std::vector<Var>&)>& f,
                                 const std::vector<Tensor>& x,
                                 const std::vector<Tensor>& baseline, int steps);

/// Integrated gradients for a latent-node target of a model, for a single
/// sample (each view a (1,d_k) tensor). The model is evaluated in inference
/// mode.
IgResult integrated_gradients(LegatoModel& model, const std::vector<Tensor>& x,
                              const std::vector<Tensor>& baseline, IgTarget target,
                              int steps = 50);

}  // namespace legato
