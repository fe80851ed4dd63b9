#include "legato/model.hpp"

#include <algorithm>
#include <cmath>

namespace legato {

Variant variant_from_string(const std::string& s) {
  std::string t;
  for (char c : s) t += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (t == "full") return Variant::Full;
  if (t == "nohier") return Variant::NoHier;
  if (t == "nograph") return Variant::NoGraph;
  if (t == "noreg") return Variant::NoReg;
  if (t == "globalpool" || t == "global_pool") return Variant::GlobalPool;
  throw TensorError("unknown variant '" + s + "'");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::NoHier: return "nohier";
    case Variant::NoGraph: return "nograph";
    case Variant::NoReg: return "noreg";
    case Variant::GlobalPool: return "globalpool";
  }
  return "full";
}

nlohmann::json ModelConfig::to_json() const {
  return {{"num_views", num_views},   {"view_dims", view_dims},   {"embed_dim", embed_dim},
          {"latent_dim", latent_dim}, {"hidden_dim", hidden_dim}, {"alpha", alpha},
          {"beta", beta},             {"tau", tau},               {"pool_levels", pool_levels},
          {"variant", to_string(variant)}, {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.num_views = j.at("num_views");
  c.view_dims = j.at("view_dims").get<std::vector<std::size_t>>();
  c.embed_dim = j.at("embed_dim");
  c.latent_dim = j.at("latent_dim");
  c.hidden_dim = j.at("hidden_dim");
  c.alpha = j.at("alpha");
  c.beta = j.at("beta");
  c.tau = j.at("tau");
  c.pool_levels = j.at("pool_levels");
  c.variant = variant_from_string(j.at("variant"));
  c.seed = j.at("seed");
  return c;
}

// Floor for the normalization variance. Quiet dimensions are common here
// (ReLU-dead GCN columns summed into few latent nodes); a floor this size
// caps their eval-time amplification at 10x per site, which keeps readouts
// finite-scaled across the train/eval statistics gap.
constexpr double kVarianceFloor = 1e-2;

Var gcn_layer(const Var& adjacency, const Var& features, const Var& weight) {
  const Tensor& av = adjacency.value();
  if (av.ndim() != 3 || av.dim(1) != av.dim(2)) {
    throw TensorError("gcn_layer: adjacency must be (N,K,K), got " + av.shape_str());
  }
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (av[i] < 0.0) throw TensorError("gcn_layer: negative adjacency entry");
  }
  const std::size_t n = av.dim(0), k = av.dim(1);
  Var hat = add(adjacency, Var::constant(Tensor::identity(k)));
  Var inv_sqrt_deg = rsqrt(sum_last(hat));  // degrees >= 1 because of self-loops
  Var norm = bmm(reshape(inv_sqrt_deg, {n, k, 1}), reshape(inv_sqrt_deg, {n, 1, k}));
  return relu(matmul_last(bmm(mul(hat, norm), features), weight));
}

Var node_normalize_batch(const Var& h) {
  if (h.value().dim(0) < 2) {
    throw TensorError("node_normalize: training mode needs a batch of at least 2 samples");
  }
  Var mu = mean_axis0(h);
  Var centered = sub(h, mu);
  Var variance = mean_axis0(mul(centered, centered));
  return mul(centered, rsqrt(clamp_min(variance, kVarianceFloor)));
}

Var orthogonality_loss(const Var& latent_h) {
  const Tensor& hv = latent_h.value();
  if (hv.ndim() != 3) throw TensorError("orthogonality_loss: expected (N,K',r)");
  const std::size_t n = hv.dim(0), k = hv.dim(1);
  if (k < 2) return Var::constant(Tensor::scalar(0.0));
  Var unit = l2_normalize_rows(latent_h);
  Var cosines = abs_op(bmm(unit, transpose_last(unit)));
  Tensor upper({k, k});
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) upper.at(i, j) = 1.0;
  const double pairs = static_cast<double>(k * (k - 1) / 2);
  return scale(sum_all(mul(cosines, Var::constant(std::move(upper)))),
               1.0 / (static_cast<double>(n) * pairs));
}

LegatoModel::LegatoModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.num_views == 0 || cfg_.view_dims.size() != cfg_.num_views) {
    throw TensorError("model: view_dims must list one width per view");
  }
  if (cfg_.pool_levels < 1) throw TensorError("model: pool_levels must be >= 1");
  if (cfg_.variant == Variant::GlobalPool) cfg_.pool_levels = 1;
  if (cfg_.variant == Variant::NoReg) cfg_.alpha = 0.0;

  Rng rng(split_seed(cfg_.seed, 0x6d6f64656cULL));
  const std::size_t d = cfg_.embed_dim, r = cfg_.latent_dim, hid = cfg_.hidden_dim;
  const std::size_t k = cfg_.num_views;

  auto make_codec = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    Codec c;
    c.w1 = store_.create(prefix + ".w1", glorot_uniform(rng, {in, hid}, in, hid));
    c.b1 = store_.create(prefix + ".b1", Tensor({hid}));
    c.w2 = store_.create(prefix + ".w2", glorot_uniform(rng, {hid, out}, hid, out));
    c.b2 = store_.create(prefix + ".b2", Tensor({out}));
    return c;
  };
  for (std::size_t v = 0; v < k; ++v) {
    encoders_.push_back(make_codec("enc" + std::to_string(v), cfg_.view_dims[v], d));
  }
  for (std::size_t v = 0; v < k; ++v) {
    decoders_.push_back(make_codec("dec" + std::to_string(v), d, cfg_.view_dims[v]));
  }

  if (cfg_.variant != Variant::NoGraph) {
    learner_ = std::make_unique<GraphLearner>(store_, k, d, /*key_dim=*/d, rng);
  }

  if (cfg_.variant == Variant::NoHier) {
    latent_nodes_ = k;
    gcn_encode_w_ = store_.create("gcn.encode.W", glorot_uniform(rng, {d, r}, d, r));
    gcn_encode_norm_ = make_norm("gcn.encode.norm", k, r);
    gcn_decode_w_ = store_.create("gcn.decode.W", glorot_uniform(rng, {r, d}, r, d));
    gcn_decode_norm_ = make_norm("gcn.decode.norm", k, d);
    return;
  }

  std::size_t nodes = k;
  std::size_t in_dim = d;
  for (int level = 0; level < cfg_.pool_levels; ++level) {
    const std::size_t out_nodes =
        cfg_.variant == Variant::GlobalPool ? 1 : std::max<std::size_t>(1, nodes / 2);
    const std::string p = "pool" + std::to_string(level);
    PoolLevel pl;
    pl.in_nodes = nodes;
    pl.out_nodes = out_nodes;
    pl.assign_w = store_.create(p + ".assign.W", glorot_uniform(rng, {in_dim, out_nodes}, in_dim, out_nodes));
    pl.assign_norm = make_norm(p + ".assign.norm", nodes, out_nodes);
    pl.embed_w = store_.create(p + ".embed.W", glorot_uniform(rng, {in_dim, r}, in_dim, r));
    pl.embed_norm = make_norm(p + ".embed.norm", nodes, r);
    pl.hz_norm = make_norm(p + ".hz.norm", out_nodes, r);
    pools_.push_back(std::move(pl));
    nodes = out_nodes;
    in_dim = r;
  }
  latent_nodes_ = nodes;
  // Mirrored unpool stack, innermost first.
  for (int level = cfg_.pool_levels - 1; level >= 0; --level) {
    const PoolLevel& pl = pools_[static_cast<std::size_t>(level)];
    const std::size_t out_dim = level == 0 ? d : r;
    const std::string p = "unpool" + std::to_string(level);
    UnpoolLevel ul;
    ul.in_nodes = pl.out_nodes;
    ul.out_nodes = pl.in_nodes;
    ul.assign_w = store_.create(p + ".assign.W", glorot_uniform(rng, {r, pl.in_nodes}, r, pl.in_nodes));
    ul.assign_norm = make_norm(p + ".assign.norm", pl.out_nodes, pl.in_nodes);
    ul.embed_w = store_.create(p + ".embed.W", glorot_uniform(rng, {r, out_dim}, r, out_dim));
    ul.embed_norm = make_norm(p + ".embed.norm", pl.out_nodes, out_dim);
    unpools_.push_back(std::move(ul));
  }
}

LegatoModel::NormSite LegatoModel::make_norm(const std::string& name, std::size_t nodes,
                                             std::size_t dims) {
  NormSite s;
  s.mean = store_.create(name + ".mean", Tensor({nodes, dims}), /*trainable=*/false);
  s.var = store_.create(name + ".var", Tensor::full({nodes, dims}, 1.0), /*trainable=*/false);
  return s;
}

Var LegatoModel::node_normalize(const Var& h, NormSite& site) {
  if (!training_) {
    const Tensor& rm = site.mean.value();
    const Tensor& rv = site.var.value();
    Tensor inv_std(rv.shape());
    for (std::size_t i = 0; i < rv.size(); ++i) {
      inv_std[i] = 1.0 / std::sqrt(std::max(rv[i], kVarianceFloor));
    }
    return mul(sub(h, Var::constant(rm)), Var::constant(std::move(inv_std)));
  }
  if (h.value().dim(0) < 2) {
    throw TensorError("node_normalize: training mode needs a batch of at least 2 samples");
  }
  Var mu = mean_axis0(h);
  Var centered = sub(h, mu);
  Var variance = mean_axis0(mul(centered, centered));
  if (!stats_frozen_) {
    Tensor& rm = site.mean.value_mut();
    Tensor& rv = site.var.value_mut();
    const Tensor& bm = mu.value();
    const Tensor& bv = variance.value();
    for (std::size_t i = 0; i < rm.size(); ++i) {
      rm[i] = 0.9 * rm[i] + 0.1 * bm[i];
      rv[i] = 0.9 * rv[i] + 0.1 * bv[i];
    }
  }
  return mul(centered, rsqrt(clamp_min(variance, kVarianceFloor)));
}

Var LegatoModel::apply_codec(const Codec& c, const Var& x) {
  return add(matmul(relu(add(matmul(x, c.w1), c.b1)), c.w2), c.b2);
}

std::pair<Var, Var> reconstruction_loss(const std::vector<Var>& x,
                                        const std::vector<Var>& x_hat, const Var& adjacency,
                                        const Var& adjacency_hat) {
  if (x.empty() || x.size() != x_hat.size()) {
    throw TensorError("reconstruction_loss: view count mismatch");
  }
  const std::size_t n = x[0].value().dim(0), k = x.size();
  Var features;
  for (std::size_t v = 0; v < k; ++v) {
    Var term = sse(x[v], x_hat[v]);
    features = v == 0 ? term : add(features, term);
  }
  features = scale(features, 1.0 / static_cast<double>(n * k));
  Var adj = scale(sse(adjacency, adjacency_hat), 1.0 / static_cast<double>(n));
  return {features, adj};
}

Var LegatoModel::encode_views(const std::vector<Var>& views) {
  std::vector<Var> embedded(views.size());
  for (std::size_t v = 0; v < views.size(); ++v) {
    embedded[v] = apply_codec(encoders_[v], views[v]);
  }
  return stack_axis1(embedded);
}

std::vector<Var> LegatoModel::decode_views(const Var& h_hat) {
  std::vector<Var> out(cfg_.num_views);
  for (std::size_t v = 0; v < cfg_.num_views; ++v) {
    out[v] = apply_codec(decoders_[v], slice_axis1(h_hat, v));
  }
  return out;
}

LegatoModel::PoolOut LegatoModel::pool_level(std::size_t level, const Var& adjacency,
                                             const Var& features) {
  PoolLevel& pl = pools_.at(level);
  if (pl.out_nodes > pl.in_nodes) {
    throw TensorError("pool: latent node count exceeds input node count");
  }
  PoolOut out;
  Var logits = node_normalize(gcn_layer(adjacency, features, pl.assign_w), pl.assign_norm);
  out.assign = softmax_rows(logits);
  Var z = node_normalize(gcn_layer(adjacency, features, pl.embed_w), pl.embed_norm);
  Var pt = transpose_last(out.assign);
  out.latent_a = bmm(bmm(pt, adjacency), out.assign);
  out.latent_h = node_normalize(bmm(pt, z), pl.hz_norm);
  return out;
}

LegatoModel::UnpoolOut LegatoModel::unpool_level(std::size_t index, const Var& adjacency,
                                                 const Var& features) {
  UnpoolLevel& ul = unpools_.at(index);
  UnpoolOut out;
  Var logits = node_normalize(gcn_layer(adjacency, features, ul.assign_w), ul.assign_norm);
  out.assign = softmax_rows(logits);
  Var z = node_normalize(gcn_layer(adjacency, features, ul.embed_w), ul.embed_norm);
  Var put = transpose_last(out.assign);
  out.h_hat = bmm(put, z);
  out.a_hat = bmm(bmm(put, adjacency), out.assign);
  return out;
}

ForwardResult LegatoModel::forward(const std::vector<Tensor>& views) {
  std::vector<Var> vars;
  vars.reserve(views.size());
  for (const auto& v : views) vars.push_back(Var::constant(v));
  return forward(vars);
}

ForwardResult LegatoModel::forward(const std::vector<Var>& views) {
  const std::size_t k = cfg_.num_views;
  if (views.size() != k) {
    throw TensorError("forward: expected " + std::to_string(k) + " views, got " +
                      std::to_string(views.size()));
  }
  const std::size_t n = views[0].value().dim(0);
  for (std::size_t v = 0; v < k; ++v) {
    const Tensor& xv = views[v].value();
    if (xv.ndim() != 2 || xv.dim(0) != n || xv.dim(1) != cfg_.view_dims[v]) {
      throw TensorError("forward: view " + std::to_string(v) + " has shape " + xv.shape_str() +
                        ", expected [" + std::to_string(n) + "," +
                        std::to_string(cfg_.view_dims[v]) + "]");
    }
  }

  ForwardResult out;
  Var h0 = encode_views(views);

  // Multi-view graph.
  Var gated;
  if (cfg_.variant == Variant::NoGraph) {
    gated = Var::constant(Tensor::full({n, k, k}, 1.0));
  } else {
    out.raw_adjacency = learner_->learn_adjacency(h0);
    gated = threshold_adjacency(out.raw_adjacency, cfg_.tau);
  }
  out.gated_adjacency = gated;

  Var h_hat;  // (N,K,d) decoder input
  if (cfg_.variant == Variant::NoHier) {
    Var z = node_normalize(gcn_layer(gated, h0, gcn_encode_w_), gcn_encode_norm_);
    out.latent_h = z;
    out.latent_a = gated;
    h_hat = node_normalize(gcn_layer(gated, z, gcn_decode_w_), gcn_decode_norm_);
  } else {
    Var a = gated, h = h0;
    for (std::size_t level = 0; level < pools_.size(); ++level) {
      PoolOut po = pool_level(level, a, h);
      a = po.latent_a;
      h = po.latent_h;
      if (level == 0) out.pool_assign = po.assign;
    }
    out.latent_a = a;
    out.latent_h = h;
    for (std::size_t idx = 0; idx < unpools_.size(); ++idx) {
      UnpoolOut uo = unpool_level(idx, a, h);
      a = uo.a_hat;
      h = uo.h_hat;
    }
    out.adjacency_hat = a;
    h_hat = h;
  }

  out.recon_views = decode_views(h_hat);

  // The graph is the autoencoder's input on the adjacency side, so the
  // reconstruction target is a constant label: gradient reaches the graph
  // learner through message passing and the A_z sandwich, not through a
  // shortcut that rewards making the graph trivially reconstructible.
  Var adj_target;
  if (stats_frozen_) {
    if (!frozen_adj_target_) frozen_adj_target_ = gated.value();
    adj_target = Var::constant(*frozen_adj_target_);
  } else {
    adj_target = Var::constant(gated.value());
  }
  // NoHier has no adjacency decoder; comparing the target to itself makes
  // the adjacency term exactly zero.
  Var adj_pred = cfg_.variant == Variant::NoHier ? adj_target : out.adjacency_hat;
  auto [recon_feat, recon_adj] = reconstruction_loss(views, out.recon_views, adj_target, adj_pred);

  Var orth = orthogonality_loss(out.latent_h);
  Var spar = cfg_.variant == Variant::NoGraph ? Var::constant(Tensor::scalar(0.0))
                                              : sparsity_loss(out.raw_adjacency);

  out.total = add(add(recon_feat, recon_adj), add(scale(orth, cfg_.alpha), scale(spar, cfg_.beta)));
  out.losses.recon_features = recon_feat.value().item();
  out.losses.recon_adjacency = recon_adj.value().item();
  out.losses.orthogonality = orth.value().item();
  out.losses.sparsity = spar.value().item();
  out.losses.alpha = cfg_.alpha;
  out.losses.beta = cfg_.beta;
  out.losses.total = out.total.value().item();

  out.readout = mean_axis1(out.latent_h);
  return out;
}

Tensor LegatoModel::readout_eval(const std::vector<Tensor>& views) {
  NoGradGuard guard;
  const bool was_training = training_;
  training_ = false;
  Tensor r = forward(views).readout.value();
  training_ = was_training;
  return r;
}

}  // namespace legato
