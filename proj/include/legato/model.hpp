#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "legato/graph_learner.hpp"
#include "legato/params.hpp"

namespace legato {

enum class Variant { Full, NoHier, NoGraph, NoReg, GlobalPool };

Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);

struct ModelConfig {
  std::size_t num_views = 0;           // K
  std::vector<std::size_t> view_dims;  // input width per view
  std::size_t embed_dim = 64;          // d
  std::size_t latent_dim = 64;         // r
  std::size_t hidden_dim = 64;         // codec hidden width
  double alpha = 0.01;                 // orthogonality weight
  double beta = 0.01;                  // sparsity weight
  double tau = 0.1;                    // adjacency threshold
  int pool_levels = 1;
  Variant variant = Variant::Full;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct LossBreakdown {
  double recon_features = 0.0;
  double recon_adjacency = 0.0;
  double orthogonality = 0.0;
  double sparsity = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double total = 0.0;
};

struct ForwardResult {
  Var total;               // scalar loss node, differentiable end to end
  LossBreakdown losses;
  Var raw_adjacency;       // (N,K,K); undefined when the graph is fixed
  Var gated_adjacency;     // (N,K,K)
  Var latent_h;            // (N,K',r) innermost latent node embeddings
  Var latent_a;            // (N,K',K')
  Var pool_assign;         // (N,K,K') outermost pooling matrix; undefined for NoHier
  Var adjacency_hat;       // (N,K,K) reconstructed adjacency; undefined for NoHier
  Var readout;             // (N,r) mean over latent nodes
  std::vector<Var> recon_views;  // K x (N,d_k)
};

/// One GCN layer on a weighted graph: unit self-loops are added, messages
/// are normalized by 1/sqrt(deg_i deg_j) with weighted degrees, and the
/// aggregated features pass through a linear map and ReLU.
Var gcn_layer(const Var& adjacency, const Var& features, const Var& weight);

/// Mean abs cosine over all latent-node pairs, averaged over samples.
/// Zero when there is a single latent node.
Var orthogonality_loss(const Var& latent_h);

/// Feature and adjacency reconstruction terms: sum of squared errors over
/// views scaled by 1/(NK), and squared Frobenius distance of the adjacency
/// scaled by 1/N.
std::pair<Var, Var> reconstruction_loss(const std::vector<Var>& x,
                                        const std::vector<Var>& x_hat, const Var& adjacency,
                                        const Var& adjacency_hat);

/// The hierarchical multi-view graph autoencoder, including its ablation
/// variants. Training mode uses batch moments in the node-normalization
/// layers and updates their running statistics; evaluation mode is a pure
/// function of inputs, parameters, and the stored statistics.
class LegatoModel {
 public:
  explicit LegatoModel(ModelConfig cfg);

  ForwardResult forward(const std::vector<Var>& views);
  ForwardResult forward(const std::vector<Tensor>& views);

  /// Readout vectors in evaluation mode, no graph recorded.
  Tensor readout_eval(const std::vector<Tensor>& views);

  /// Per-view encoders applied independently; rows stacked to (N,K,d).
  Var encode_views(const std::vector<Var>& views);
  /// Per-view decoders applied to rows of (N,K,d).
  std::vector<Var> decode_views(const Var& h_hat);

  struct PoolOut {
    Var assign;    // (N,K,K') row-stochastic
    Var latent_a;  // (N,K',K')
    Var latent_h;  // (N,K',r)
  };
  struct UnpoolOut {
    Var assign;  // (N,K',K) row-stochastic
    Var a_hat;   // (N,K,K)
    Var h_hat;   // (N,K,d_out)
  };
  PoolOut pool_level(std::size_t level, const Var& adjacency, const Var& features);
  UnpoolOut unpool_level(std::size_t index, const Var& adjacency, const Var& features);
  std::size_t pool_level_count() const { return pools_.size(); }

  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }
  /// Pure-function mode for finite-difference checks: training-mode math
  /// stays, but running statistics stop updating and the adjacency
  /// reconstruction target is cached on first use instead of being
  /// recomputed per forward.
  void set_stats_frozen(bool on) {
    stats_frozen_ = on;
    frozen_adj_target_.reset();
  }

  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  const ModelConfig& config() const { return cfg_; }
  std::size_t latent_nodes() const { return latent_nodes_; }
  std::size_t graph_learner_calls() const { return learner_ ? learner_->calls() : 0; }

 private:
  struct NormSite {
    Var mean;  // (nodes, dims) running mean
    Var var;   // (nodes, dims) running variance
  };
  struct Codec {
    Var w1, b1, w2, b2;
  };
  struct PoolLevel {
    Var assign_w, embed_w;
    NormSite assign_norm, embed_norm, hz_norm;
    std::size_t in_nodes, out_nodes;
  };
  struct UnpoolLevel {
    Var assign_w, embed_w;
    NormSite assign_norm, embed_norm;
    std::size_t in_nodes, out_nodes;
  };

  NormSite make_norm(const std::string& name, std::size_t nodes, std::size_t dims);
  Var node_normalize(const Var& h, NormSite& site);
  Var apply_codec(const Codec& c, const Var& x);

  ModelConfig cfg_;
  ParameterStore store_;
  std::vector<Codec> encoders_, decoders_;
  std::unique_ptr<GraphLearner> learner_;
  std::vector<PoolLevel> pools_;
  std::vector<UnpoolLevel> unpools_;
  // NoHier keeps a plain GCN encoder/decoder pair on the learned graph.
  Var gcn_encode_w_, gcn_decode_w_;
  NormSite gcn_encode_norm_, gcn_decode_norm_;
  std::size_t latent_nodes_ = 0;
  bool training_ = true;
  bool stats_frozen_ = false;
  std::optional<Tensor> frozen_adj_target_;
};

/// Batch-moment node normalization (exposed for direct testing). Normalizes
/// per node and dimension over axis 0; variance is floored at 1e-8.
Var node_normalize_batch(const Var& h);

}  // namespace legato
