#include <cmath>

#include "doctest.h"
#include "legato/model.hpp"
#include "testutil.hpp"

using namespace legato;
using testutil::random_tensor;

namespace {

ModelConfig tiny_config(std::size_t k, std::size_t view_dim, std::size_t d = 4,
                        std::size_t r = 4, std::size_t hidden = 5) {
  ModelConfig cfg;
  cfg.num_views = k;
  cfg.view_dims.assign(k, view_dim);
  cfg.embed_dim = d;
  cfg.latent_dim = r;
  cfg.hidden_dim = hidden;
  cfg.seed = 17;
  return cfg;
}

std::vector<Var> random_views(Rng& rng, const ModelConfig& cfg, std::size_t n) {
  std::vector<Var> views;
  for (std::size_t v = 0; v < cfg.num_views; ++v) {
    views.push_back(Var::constant(random_tensor(rng, {n, cfg.view_dims[v]})));
  }
  return views;
}

void zero_all(ParameterStore& store) {
  for (const auto& e : store.entries()) {
    if (e.trainable) const_cast<Var&>(e.var).value_mut().fill(0.0);
  }
}

}  // namespace

TEST_CASE("encode_views: zero weights give zero embeddings") {
  ModelConfig cfg = tiny_config(3, 4);
  LegatoModel model(cfg);
  zero_all(model.params());
  Rng rng(1);
  Var h = model.encode_views(random_views(rng, cfg, 5));
  CHECK(h.value().shape() == std::vector<std::size_t>{5, 3, 4});
  for (std::size_t i = 0; i < h.value().size(); ++i) CHECK(h.value()[i] == 0.0);
}

TEST_CASE("codec matches the hand-computed single-view fixture") {
  ModelConfig cfg = tiny_config(1, 2, /*d=*/2, /*r=*/2, /*hidden=*/2);
  LegatoModel model(cfg);
  auto& store = model.params();
  store.get("enc0.w1").value_mut() = Tensor({2, 2}, {1.0, -0.5, 0.25, 0.75});
  store.get("enc0.b1").value_mut() = Tensor({2}, {0.1, -0.2});
  store.get("enc0.w2").value_mut() = Tensor({2, 2}, {0.5, 1.0, -0.25, 0.5});
  store.get("enc0.b2").value_mut() = Tensor({2}, {0.0, 0.25});

  Var h = model.encode_views({Var::constant(Tensor({1, 2}, {0.5, -1.0}))});
  // Frozen from the scripted oracle: hidden = [0.35, 0], out = [0.175, 0.6].
  CHECK(h.value().at(0, 0, 0) == doctest::Approx(0.175).epsilon(1e-12));
  CHECK(h.value().at(0, 0, 1) == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("encode_views is per-sample: permuting samples permutes rows") {
  ModelConfig cfg = tiny_config(2, 3);
  LegatoModel model(cfg);
  Rng rng(2);
  Tensor a = random_tensor(rng, {4, 3});
  Tensor b = random_tensor(rng, {4, 3});
  Tensor h = model.encode_views({Var::constant(a), Var::constant(b)}).value();

  auto swap_rows = [](Tensor t, std::size_t i, std::size_t j) {
    for (std::size_t c = 0; c < t.dim(1); ++c) std::swap(t.at(i, c), t.at(j, c));
    return t;
  };
  Tensor h2 = model
                  .encode_views({Var::constant(swap_rows(a, 0, 3)),
                                 Var::constant(swap_rows(b, 0, 3))})
                  .value();
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(h.at(0, v, c) == h2.at(3, v, c));
      CHECK(h.at(3, v, c) == h2.at(0, v, c));
    }
}

TEST_CASE("gcn_layer: single node with zero adjacency reduces to ReLU(hW)") {
  Var a = Var::constant(Tensor({1, 1, 1}, {0.0}));
  Var h = Var::constant(Tensor({1, 1, 2}, {2.0, -1.0}));
  Var w = Var::constant(Tensor({2, 2}, {1.0, 0.5, 0.25, -0.5}));
  Tensor out = gcn_layer(a, h, w).value();
  CHECK(out.at(0, 0, 0) == doctest::Approx(1.75).epsilon(1e-12));  // relu(2 - 0.25)
  CHECK(out.at(0, 0, 1) == doctest::Approx(1.5).epsilon(1e-12));   // relu(1 + 0.5)
}

TEST_CASE("gcn_layer: zero adjacency means nodes only see themselves") {
  Rng rng(3);
  Tensor h = random_tensor(rng, {2, 3, 4});
  Tensor w = random_tensor(rng, {4, 2});
  Tensor out =
      gcn_layer(Var::constant(Tensor({2, 3, 3})), Var::constant(h), Var::constant(w)).value();
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t c = 0; c < 2; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < 4; ++j) acc += h.at(s, i, j) * w.at(j, c);
        CHECK(out.at(s, i, c) == doctest::Approx(std::max(0.0, acc)).epsilon(1e-12));
      }
}

TEST_CASE("gcn_layer matches the frozen K=2 fully-connected walkthrough") {
  Var a = Var::constant(Tensor({1, 2, 2}, {1.0, 1.0, 1.0, 1.0}));
  Var h = Var::constant(Tensor({1, 2, 2}, {1.0, -2.0, 0.5, 1.5}));
  Var w = Var::constant(Tensor({2, 2}, {0.5, -1.0, 0.25, 0.5}));
  Tensor out = gcn_layer(a, h, w).value();
  CHECK(out.at(0, 0, 0) == doctest::Approx(0.20833333333333331).epsilon(1e-12));
  CHECK(out.at(0, 0, 1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(out.at(0, 1, 0) == doctest::Approx(0.41666666666666663).epsilon(1e-12));
  CHECK(out.at(0, 1, 1) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("gcn_layer rejects negative adjacency entries") {
  Var a = Var::constant(Tensor({1, 2, 2}, {0.5, -0.1, -0.1, 0.5}));
  Var h = Var::constant(Tensor({1, 2, 2}));
  Var w = Var::constant(Tensor({2, 2}));
  CHECK_THROWS_AS(gcn_layer(a, h, w), TensorError);
}

TEST_CASE("node normalization closed forms") {
  // Already standardized input stays put.
  Var x = Var::constant(Tensor({2, 1, 1}, {-1.0, 1.0}));
  Tensor y = node_normalize_batch(x).value();
  CHECK(std::fabs(y[0] + 1.0) < 1e-6);
  CHECK(std::fabs(y[1] - 1.0) < 1e-6);

  // Constant batch: variance floor engages, output is zero.
  Var c = Var::constant(Tensor({3, 2, 2}, {5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5}));
  Tensor yc = node_normalize_batch(c).value();
  for (std::size_t i = 0; i < yc.size(); ++i) CHECK(yc[i] == 0.0);

  // Two samples {0, 2}: mean 1, population variance 1 -> {-1, +1}.
  Var two = Var::constant(Tensor({2, 1, 1}, {0.0, 2.0}));
  Tensor yt = node_normalize_batch(two).value();
  CHECK(yt[0] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(yt[1] == doctest::Approx(1.0).epsilon(1e-9));

  CHECK_THROWS_AS(node_normalize_batch(Var::constant(Tensor({1, 2, 2}))), TensorError);
}

// The K=2, d=2, r=2 hand-fixed pooling instance. In evaluation mode with
// fresh running statistics every normalization is the identity, so the
// walkthrough is plain matrix arithmetic.
TEST_CASE("pool/unpool match the scripted matrix walkthrough") {
  ModelConfig cfg = tiny_config(2, 2, 2, 2, 2);
  LegatoModel model(cfg);
  model.set_training(false);
  auto& store = model.params();
  store.get("pool0.assign.W").value_mut() = Tensor({2, 1}, {0.5, -0.25});
  store.get("pool0.embed.W").value_mut() = Tensor({2, 2}, {0.75, -0.5, 0.25, 1.0});
  store.get("unpool0.assign.W").value_mut() = Tensor({2, 2}, {0.5, 0.25, -0.75, 0.5});
  store.get("unpool0.embed.W").value_mut() = Tensor({2, 2}, {1.0, 0.5, -0.25, 0.75});

  Var a = Var::constant(Tensor({1, 2, 2}, {0.6, 0.3, 0.3, 0.9}));
  Var h = Var::constant(Tensor({1, 2, 2}, {1.0, -0.5, 0.25, 0.75}));

  auto po = model.pool_level(0, a, h);
  // Single latent node: softmax over one logit forces P = [1, 1]^T.
  CHECK(po.assign.value().at(0, 0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(po.assign.value().at(0, 1, 0) == doctest::Approx(1.0).epsilon(1e-12));
  // A_z collapses to the total edge mass, H_z to Z_1 + Z_2.
  CHECK(po.latent_a.value().at(0, 0, 0) == doctest::Approx(2.1).epsilon(1e-10));
  CHECK(po.latent_h.value().at(0, 0, 0) ==
        doctest::Approx(0.9969142222506762).epsilon(1e-10));
  CHECK(po.latent_h.value().at(0, 0, 1) ==
        doctest::Approx(0.39303793085937166).epsilon(1e-10));

  auto uo = model.unpool_level(0, po.latent_a, po.latent_h);
  const Tensor& pun = uo.assign.value();
  CHECK(pun.at(0, 0, 0) == doctest::Approx(0.43977657635699585).epsilon(1e-10));
  CHECK(pun.at(0, 0, 1) == doctest::Approx(0.5602234236430041).epsilon(1e-10));
  const Tensor& hh = uo.h_hat.value();
  CHECK(hh.at(0, 0, 0) == doctest::Approx(0.3952073046800566).epsilon(1e-10));
  CHECK(hh.at(0, 0, 1) == doctest::Approx(0.3488464185003289).epsilon(1e-10));
  CHECK(hh.at(0, 1, 0) == doctest::Approx(0.5034474348557767).epsilon(1e-10));
  CHECK(hh.at(0, 1, 1) == doctest::Approx(0.4443891407695379).epsilon(1e-10));
  const Tensor& ah = uo.a_hat.value();
  CHECK(ah.at(0, 0, 0) == doctest::Approx(0.4061472179357892).epsilon(1e-10));
  CHECK(ah.at(0, 0, 1) == doctest::Approx(0.5173835924139019).epsilon(1e-10));
  CHECK(ah.at(0, 1, 0) == doctest::Approx(0.5173835924139019).epsilon(1e-10));
  CHECK(ah.at(0, 1, 1) == doctest::Approx(0.6590855972364066).epsilon(1e-10));
}

TEST_CASE("uniform pooling matrix averages transformed embeddings") {
  Rng rng(4);
  const std::size_t n = 2, k = 4, kp = 2, r = 3;
  Tensor p({n, k, kp});
  p.fill(1.0 / static_cast<double>(kp));
  Tensor z = random_tensor(rng, {n, k, r});
  Tensor hz = bmm(transpose_last(Var::constant(p)), Var::constant(z)).value();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t j = 0; j < kp; ++j)
      for (std::size_t c = 0; c < r; ++c) {
        double col = 0.0;
        for (std::size_t i = 0; i < k; ++i) col += z.at(s, i, c);
        CHECK(hz.at(s, j, c) == doctest::Approx(col / kp).epsilon(1e-12));
      }
}

TEST_CASE("shape pipeline holds for K = 2..10") {
  Rng rng(5);
  for (std::size_t k = 2; k <= 10; ++k) {
    ModelConfig cfg = tiny_config(k, 3);
    LegatoModel model(cfg);
    model.set_training(false);
    const std::size_t expected_latent = std::max<std::size_t>(1, k / 2);
    CHECK(model.latent_nodes() == expected_latent);

    std::vector<Var> views = random_views(rng, cfg, 3);
    ForwardResult fr = model.forward(views);
    CHECK(fr.latent_h.value().shape() == std::vector<std::size_t>{3, expected_latent, 4});
    CHECK(fr.latent_a.value().shape() ==
          std::vector<std::size_t>{3, expected_latent, expected_latent});
    CHECK(fr.pool_assign.value().shape() == std::vector<std::size_t>{3, k, expected_latent});
    CHECK(fr.readout.value().shape() == std::vector<std::size_t>{3, 4});
    for (std::size_t v = 0; v < k; ++v) {
      CHECK(fr.recon_views[v].value().shape() == std::vector<std::size_t>{3, 3});
    }

    // Pooling rows are probability vectors; the latent adjacency stays
    // symmetric and nonnegative.
    const Tensor& p = fr.pool_assign.value();
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t i = 0; i < k; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < expected_latent; ++j) {
          sum += p.at(s, i, j);
          CHECK(p.at(s, i, j) > 0.0);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
      }
    const Tensor& az = fr.latent_a.value();
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t i = 0; i < expected_latent; ++i)
        for (std::size_t j = 0; j < expected_latent; ++j) {
          CHECK(az.at(s, i, j) >= 0.0);
          CHECK(std::fabs(az.at(s, i, j) - az.at(s, j, i)) < 1e-12);
        }
  }
}

TEST_CASE("orthogonality loss closed forms") {
  // Orthogonal rows.
  Var a = Var::constant(Tensor({1, 2, 2}, {1, 0, 0, 1}));
  CHECK(orthogonality_loss(a).value().item() == doctest::Approx(0.0).epsilon(1e-12));

  // Identical nonzero rows.
  Var b = Var::constant(Tensor({1, 3, 2}, {2, 1, 2, 1, 2, 1}));
  CHECK(orthogonality_loss(b).value().item() == doctest::Approx(1.0).epsilon(1e-10));

  // Frozen oracle: rows [1,0], [1,1]/sqrt2, [0,1] -> sqrt(2)/3.
  const double s = 1.0 / std::sqrt(2.0);
  Var c = Var::constant(Tensor({1, 3, 2}, {1, 0, s, s, 0, 1}));
  CHECK(orthogonality_loss(c).value().item() ==
        doctest::Approx(0.4714045207910316).epsilon(1e-10));

  // Single latent node: empty sum defined as zero.
  Var d = Var::constant(Tensor({2, 1, 3}, {1, 2, 3, 4, 5, 6}));
  CHECK(orthogonality_loss(d).value().item() == 0.0);

  // Zero rows are guarded, not NaN.
  Var e = Var::constant(Tensor({1, 2, 2}, {0, 0, 1, 1}));
  CHECK(orthogonality_loss(e).value().item() == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("orthogonality loss stays within [0,1] on random inputs") {
  Rng rng(6);
  for (int t = 0; t < 10; ++t) {
    Var h = Var::constant(random_tensor(rng, {3, 4, 5}));
    const double v = orthogonality_loss(h).value().item();
    CHECK(v >= 0.0);
    CHECK(v <= 1.0 + 1e-12);
  }
}

TEST_CASE("reconstruction loss closed forms") {
  // Perfect reconstruction.
  Rng rng(7);
  Tensor x = random_tensor(rng, {2, 3});
  Tensor adj = random_tensor(rng, {2, 2, 2});
  auto [f0, a0] = reconstruction_loss({Var::constant(x)}, {Var::constant(x)},
                                      Var::constant(adj), Var::constant(adj));
  CHECK(f0.value().item() == 0.0);
  CHECK(a0.value().item() == 0.0);

  // N=1, K=1, x=[1,2] vs zeros -> 5.
  auto [f1, a1] = reconstruction_loss({Var::constant(Tensor({1, 2}, {1, 2}))},
                                      {Var::constant(Tensor({1, 2}, {0, 0}))},
                                      Var::constant(Tensor({1, 1, 1})),
                                      Var::constant(Tensor({1, 1, 1})));
  CHECK(f1.value().item() == doctest::Approx(5.0).epsilon(1e-12));

  // N=1, K=2, adjacency difference all 0.5 -> 4 * 0.25 = 1.
  Tensor a_t({1, 2, 2});
  Tensor a_h({1, 2, 2});
  a_h.fill(0.5);
  auto [f2, a2] = reconstruction_loss(
      {Var::constant(Tensor({1, 2})), Var::constant(Tensor({1, 2}))},
      {Var::constant(Tensor({1, 2})), Var::constant(Tensor({1, 2}))}, Var::constant(a_t),
      Var::constant(a_h));
  CHECK(a2.value().item() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("readout is the mean over latent nodes") {
  Var h = Var::constant(Tensor({1, 2, 2}, {1, 0, 0, 1}));
  Tensor r = mean_axis1(h).value();
  CHECK(r.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.at(0, 1) == doctest::Approx(0.5).epsilon(1e-12));

  // Random latent: column means, computed directly.
  Rng rng(8);
  Tensor hz = random_tensor(rng, {1, 3, 4});
  Tensor rr = mean_axis1(Var::constant(hz)).value();
  for (std::size_t c = 0; c < 4; ++c) {
    double m = (hz.at(0, 0, c) + hz.at(0, 1, c) + hz.at(0, 2, c)) / 3.0;
    CHECK(rr.at(0, c) == doctest::Approx(m).epsilon(1e-12));
  }

  // Single latent node: readout equals that row.
  Tensor one({2, 1, 3}, {1, 2, 3, 4, 5, 6});
  Tensor ro = mean_axis1(Var::constant(one)).value();
  for (std::size_t i = 0; i < 6; ++i) CHECK(ro[i] == one[i]);
}

TEST_CASE("forward with alpha=beta=0 reduces to the reconstruction terms") {
  ModelConfig cfg = tiny_config(2, 3);
  cfg.alpha = 0.0;
  cfg.beta = 0.0;
  LegatoModel model(cfg);
  model.set_training(false);
  Rng rng(9);
  ForwardResult fr = model.forward(random_views(rng, cfg, 4));
  CHECK(fr.losses.total == fr.losses.recon_features + fr.losses.recon_adjacency);
}

TEST_CASE("loss breakdown total composes exactly as recorded") {
  ModelConfig cfg = tiny_config(3, 4);
  cfg.alpha = 0.37;
  cfg.beta = 0.011;
  LegatoModel model(cfg);
  model.set_training(false);
  Rng rng(10);
  ForwardResult fr = model.forward(random_views(rng, cfg, 4));
  const LossBreakdown& l = fr.losses;
  const double expected = (l.recon_features + l.recon_adjacency) +
                          (l.alpha * l.orthogonality + l.beta * l.sparsity);
  CHECK(l.total == expected);
}

TEST_CASE("evaluation-mode forward is deterministic bitwise") {
  ModelConfig cfg = tiny_config(3, 4);
  LegatoModel model(cfg);
  model.set_training(false);
  Rng rng(11);
  std::vector<Var> views = random_views(rng, cfg, 4);
  ForwardResult a = model.forward(views);
  ForwardResult b = model.forward(views);
  CHECK(a.losses.total == b.losses.total);
  CHECK(a.losses.recon_features == b.losses.recon_features);
  for (std::size_t i = 0; i < a.readout.value().size(); ++i) {
    CHECK(a.readout.value()[i] == b.readout.value()[i]);
  }
}

TEST_CASE("end-to-end gradients match finite differences") {
  ModelConfig cfg = tiny_config(2, 3);
  LegatoModel model(cfg);
  model.set_training(true);
  model.set_stats_frozen(true);  // keep the loss a pure function

  Rng rng(12);
  std::vector<Tensor> views;
  for (std::size_t v = 0; v < 2; ++v) views.push_back(random_tensor(rng, {4, 3}));

  auto f = [&](ParameterStore&) { return model.forward(views).total; };
  GradCheckReport rep = grad_check(f, model.params(), 1e-5, 1e-4);
  INFO("worst deviation ", rep.worst);
  CHECK(rep.pass);
}

TEST_CASE("end-to-end gradient check across variants and K=3") {
  Rng rng(13);
  for (Variant variant : {Variant::NoHier, Variant::NoGraph, Variant::GlobalPool}) {
    ModelConfig cfg = tiny_config(3, 3);
    cfg.variant = variant;
    LegatoModel model(cfg);
    model.set_training(true);
    model.set_stats_frozen(true);
    std::vector<Tensor> views;
    for (std::size_t v = 0; v < 3; ++v) views.push_back(random_tensor(rng, {4, 3}));
    auto f = [&](ParameterStore&) { return model.forward(views).total; };
    GradCheckReport rep = grad_check(f, model.params(), 1e-5, 1e-4);
    INFO("variant ", to_string(variant), " worst ", rep.worst);
    CHECK(rep.pass);
  }
}

TEST_CASE("training mode learns running statistics; eval mode then uses them") {
  ModelConfig cfg = tiny_config(2, 3);
  LegatoModel model(cfg);
  Rng rng(14);
  std::vector<Var> views = random_views(rng, cfg, 8);
  model.set_training(true);
  model.forward(views);
  const Tensor& mean_after = model.params().get("pool0.hz.norm.mean").value();
  bool moved = false;
  for (std::size_t i = 0; i < mean_after.size(); ++i) moved |= mean_after[i] != 0.0;
  CHECK(moved);

  // Frozen stats keep repeated training-mode forwards identical.
  model.set_stats_frozen(true);
  ForwardResult a = model.forward(views);
  ForwardResult b = model.forward(views);
  CHECK(a.losses.total == b.losses.total);
}

TEST_CASE("forward validates the view schema") {
  ModelConfig cfg = tiny_config(2, 3);
  LegatoModel model(cfg);
  CHECK_THROWS_AS(model.forward(std::vector<Var>{Var::constant(Tensor({2, 3}))}), TensorError);
  CHECK_THROWS_AS(model.forward({Var::constant(Tensor({2, 3})), Var::constant(Tensor({2, 4}))}),
                  TensorError);
  CHECK_THROWS_AS(model.forward({Var::constant(Tensor({2, 3})), Var::constant(Tensor({3, 3}))}),
                  TensorError);
}
