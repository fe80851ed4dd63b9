#pragma once

#include "legato/autodiff.hpp"
#include "legato/params.hpp"

namespace legato {

/// Learns the per-sample view adjacency from view embeddings. Each view
/// embedding is concatenated with its one-hot view code, mapped to a key by
/// a shared linear layer with LeakyReLU, and pairwise key inner products
/// are squashed to (0,1) by a sigmoid. The result is symmetric per sample.
class GraphLearner {
 public:
  GraphLearner(ParameterStore& store, std::size_t num_views, std::size_t embed_dim,
               std::size_t key_dim, Rng& rng);

  /// H: (N, K, d) view embeddings -> raw adjacency (N, K, K).
  Var learn_adjacency(const Var& embeddings) const;

  std::size_t calls() const { return calls_; }

 private:
  Var weight_;  // (d + K) x key_dim
  std::size_t num_views_;
  std::size_t embed_dim_;
  mutable std::size_t calls_ = 0;
};

/// Zero entries strictly below tau with a 0/1 mask recomputed on every call;
/// kept entries pass value and gradient through unchanged.
Var threshold_adjacency(const Var& raw, double tau = 0.1);

/// Entrywise L1 mass of the raw adjacency averaged by 1/(N K^2).
Var sparsity_loss(const Var& raw);

}  // namespace legato
