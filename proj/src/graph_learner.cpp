#include "legato/graph_learner.hpp"

namespace legato {

GraphLearner::GraphLearner(ParameterStore& store, std::size_t num_views, std::size_t embed_dim,
                           std::size_t key_dim, Rng& rng)
    : num_views_(num_views), embed_dim_(embed_dim) {
  const std::size_t in_dim = embed_dim + num_views;
  weight_ = store.create("graph.W", glorot_uniform(rng, {in_dim, key_dim}, in_dim, key_dim));
}

Var GraphLearner::learn_adjacency(const Var& embeddings) const {
  ++calls_;
  const Tensor& hv = embeddings.value();
  if (hv.ndim() != 3 || hv.dim(1) != num_views_ || hv.dim(2) != embed_dim_) {
    throw TensorError("learn_adjacency: embeddings " + hv.shape_str() + " do not match W with " +
                      std::to_string(embed_dim_) + "+" + std::to_string(num_views_) +
                      " input dims");
  }
  const std::size_t n = hv.dim(0), k = num_views_;

  // One-hot view codes: each sample gets an identity block.
  Tensor codes({n, k, k});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) codes.at(i, j, j) = 1.0;
  }
  Var keys = leaky_relu(matmul_last(concat_last(embeddings, Var::constant(std::move(codes))),
                                    weight_));
  return sigmoid(bmm(keys, transpose_last(keys)));
}

Var threshold_adjacency(const Var& raw, double tau) {
  if (tau < 0.0 || tau >= 1.0) {
    throw TensorError("threshold_adjacency: tau must be in [0,1)");
  }
  const Tensor& rv = raw.value();
  Tensor mask(rv.shape());
  for (std::size_t i = 0; i < rv.size(); ++i) mask[i] = rv[i] < tau ? 0.0 : 1.0;
  return mul(raw, Var::constant(std::move(mask)));
}

Var sparsity_loss(const Var& raw) {
  return mean_all(abs_op(raw));
}

}  // namespace legato
