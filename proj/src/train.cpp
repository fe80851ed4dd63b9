#include "legato/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "legato/logging.hpp"

namespace legato {

void TrainConfig::validate() const {
  const double total = split_fractions[0] + split_fractions[1] + split_fractions[2];
  if (std::fabs(total - 1.0) > 1e-9) {
    throw TensorError("train config: split fractions must sum to 1");
  }
  if (patience < 1) throw TensorError("train config: patience must be >= 1");
  if (batch_size < 2) throw TensorError("train config: batch size must be >= 2");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate},
          {"weight_decay", weight_decay},
          {"batch_size", batch_size},
          {"max_epochs", max_epochs},
          {"patience", patience},
          {"alpha", alpha},
          {"beta", beta},
          {"split_fractions", split_fractions},
          {"seed", seed},
          {"variant", to_string(variant)},
          {"embed_dim", embed_dim},
          {"latent_dim", latent_dim},
          {"hidden_dim", hidden_dim},
          {"tau", tau},
          {"pool_levels", pool_levels}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  if (j.contains("split_fractions")) {
    auto f = j.at("split_fractions").get<std::vector<double>>();
    if (f.size() != 3) throw TensorError("train config: split_fractions needs 3 values");
    c.split_fractions = {f[0], f[1], f[2]};
  }
  c.seed = j.value("seed", c.seed);
  if (j.contains("variant")) c.variant = variant_from_string(j.at("variant"));
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.tau = j.value("tau", c.tau);
  c.pool_levels = j.value("pool_levels", c.pool_levels);
  return c;
}

Adam::Adam(const ParameterStore& store) {
  for (const auto& e : store.entries()) {
    m_.push_back(Tensor(e.var.value().shape()));
    v_.push_back(Tensor(e.var.value().shape()));
  }
}

void Adam::step(ParameterStore& store, double lr, double weight_decay) {
  if (m_.size() != store.size()) throw TensorError("adam: store changed size");
  ++t_;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& e = store.entries()[i];
    if (!e.trainable) continue;
    Var var = e.var;
    if (!var.has_grad()) {
      throw TensorError("adam: missing gradient for '" + e.name + "'");
    }
    Tensor& p = var.value_mut();
    const Tensor& g = var.grad();
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t d = 0; d < p.size(); ++d) {
      if (weight_decay != 0.0) p[d] -= lr * weight_decay * p[d];
      m[d] = kBeta1 * m[d] + (1.0 - kBeta1) * g[d];
      v[d] = kBeta2 * v[d] + (1.0 - kBeta2) * g[d] * g[d];
      const double mhat = m[d] / bc1;
      const double vhat = v[d] / bc2;
      p[d] -= lr * mhat / (std::sqrt(vhat) + kEps);
    }
  }
  store.zero_grads();
}

nlohmann::json RunRecord::to_json() const {
  auto loss_json = [](const LossBreakdown& l) {
    return nlohmann::json{{"recon_features", l.recon_features},
                          {"recon_adjacency", l.recon_adjacency},
                          {"orthogonality", l.orthogonality},
                          {"sparsity", l.sparsity},
                          {"alpha", l.alpha},
                          {"beta", l.beta},
                          {"total", l.total}};
  };
  nlohmann::json epochs_json = nlohmann::json::array();
  for (const auto& e : epochs) {
    epochs_json.push_back({{"train", loss_json(e.train)}, {"val", loss_json(e.val)}});
  }
  return {{"epochs", epochs_json},
          {"best_epoch", best_epoch},
          {"best_val", best_val},
          {"final_metric", final_metric},
          {"wall_seconds", wall_seconds}};
}

void RunRecord::write_json(const std::filesystem::path& path) const {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw TensorError("cannot write " + tmp.string());
    out << to_json().dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

void RunRecord::write_losses_csv(const std::filesystem::path& path) const {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw TensorError("cannot write " + tmp.string());
    out << "epoch,recon_feat,recon_adj,orth,spar,total,val_total\n";
    for (std::size_t i = 0; i < epochs.size(); ++i) {
      const auto& e = epochs[i];
      out << i << ',' << format_double(e.train.recon_features) << ','
          << format_double(e.train.recon_adjacency) << ','
          << format_double(e.train.orthogonality) << ',' << format_double(e.train.sparsity)
          << ',' << format_double(e.train.total) << ',' << format_double(e.val.total) << '\n';
    }
  }
  std::filesystem::rename(tmp, path);
}

Split make_split(std::size_t n, const std::array<double, 3>& fractions, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(split_seed(seed, 0x73706c6974ULL));
  rng.shuffle(idx);
  const std::size_t n_unlabeled = static_cast<std::size_t>(fractions[0] * static_cast<double>(n));
  const std::size_t n_labeled = static_cast<std::size_t>(fractions[1] * static_cast<double>(n));
  Split s;
  s.unlabeled.assign(idx.begin(), idx.begin() + n_unlabeled);
  s.labeled.assign(idx.begin() + n_unlabeled, idx.begin() + n_unlabeled + n_labeled);
  s.test.assign(idx.begin() + n_unlabeled + n_labeled, idx.end());
  return s;
}

Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& idx) {
  const std::size_t d = t.dim(1);
  Tensor out({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = t.at(idx[i], j);
  }
  return out;
}

std::vector<Tensor> gather_views(const std::vector<Tensor>& views,
                                 const std::vector<std::size_t>& idx) {
  std::vector<Tensor> out;
  out.reserve(views.size());
  for (const auto& v : views) out.push_back(gather_rows(v, idx));
  return out;
}

std::unique_ptr<LegatoModel> build_variant(const Dataset& ds, const TrainConfig& cfg) {
  ModelConfig mc;
  mc.num_views = ds.num_views();
  mc.view_dims = ds.view_dims();
  mc.embed_dim = cfg.embed_dim;
  mc.latent_dim = cfg.latent_dim;
  mc.hidden_dim = cfg.hidden_dim;
  mc.alpha = cfg.alpha;
  mc.beta = cfg.beta;
  mc.tau = cfg.tau;
  mc.pool_levels = cfg.pool_levels;
  mc.variant = cfg.variant;
  mc.seed = cfg.seed;
  return std::make_unique<LegatoModel>(mc);
}

namespace {

void check_finite_losses(const LossBreakdown& l, std::size_t epoch) {
  const std::pair<const char*, double> terms[] = {{"recon_features", l.recon_features},
                                                  {"recon_adjacency", l.recon_adjacency},
                                                  {"orthogonality", l.orthogonality},
                                                  {"sparsity", l.sparsity},
                                                  {"total", l.total}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) {
      throw TensorError("train: non-finite " + std::string(name) + " at epoch " +
                        std::to_string(epoch));
    }
  }
}

LossBreakdown eval_losses(LegatoModel& model, const std::vector<Tensor>& views) {
  NoGradGuard guard;
  const bool was = model.training();
  model.set_training(false);
  LossBreakdown l = model.forward(views).losses;
  model.set_training(was);
  return l;
}

}  // namespace

RunRecord train_model(LegatoModel& model, const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.final_metric = std::numeric_limits<double>::quiet_NaN();

  Split split = make_split(ds.num_samples(), cfg.split_fractions, cfg.seed);
  std::vector<Tensor> train_views = gather_views(ds.views, split.unlabeled);
  std::vector<Tensor> val_views = gather_views(ds.views, split.labeled);

  Adam opt(model.params());
  rec.best_val = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_state = model.params().snapshot();

  const std::size_t n_train = split.unlabeled.size();
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    Rng shuffle_rng(split_seed(cfg.seed, 0x65706f6368ULL + epoch));
    shuffle_rng.shuffle(order);

    LossBreakdown train_avg;
    std::size_t seen = 0;
    model.set_training(true);
    for (std::size_t start = 0; start < n_train;) {
      std::size_t stop = std::min(start + cfg.batch_size, n_train);
      // A trailing singleton has no batch variance; fold it into this batch.
      if (n_train - stop == 1) stop = n_train;
      std::vector<std::size_t> batch_idx(order.begin() + start, order.begin() + stop);
      ForwardResult fr = model.forward(gather_views(train_views, batch_idx));
      check_finite_losses(fr.losses, epoch);
      backward(fr.total);
      opt.step(model.params(), cfg.learning_rate, cfg.weight_decay);

      const double bn = static_cast<double>(stop - start);
      train_avg.recon_features += fr.losses.recon_features * bn;
      train_avg.recon_adjacency += fr.losses.recon_adjacency * bn;
      train_avg.orthogonality += fr.losses.orthogonality * bn;
      train_avg.sparsity += fr.losses.sparsity * bn;
      train_avg.total += fr.losses.total * bn;
      seen += stop - start;
      start = stop;
    }
    // Running statistics lag the weights that just moved; settle them with a
    // forward-only pass so validation and snapshots see consistent stats.
    {
      NoGradGuard guard;
      for (std::size_t start = 0; start < n_train;) {
        std::size_t stop = std::min(start + cfg.batch_size, n_train);
        if (n_train - stop == 1) stop = n_train;
        std::vector<std::size_t> batch_idx(order.begin() + start, order.begin() + stop);
        model.forward(gather_views(train_views, batch_idx));
        start = stop;
      }
    }
    const double inv = seen ? 1.0 / static_cast<double>(seen) : 0.0;
    train_avg.recon_features *= inv;
    train_avg.recon_adjacency *= inv;
    train_avg.orthogonality *= inv;
    train_avg.sparsity *= inv;
    train_avg.total *= inv;
    train_avg.alpha = cfg.alpha;
    train_avg.beta = cfg.beta;

    LossBreakdown val = eval_losses(model, val_views);
    check_finite_losses(val, epoch);
    rec.epochs.push_back({train_avg, val});

    if (val.total < rec.best_val) {
      rec.best_val = val.total;
      rec.best_epoch = epoch;
      best_state = model.params().snapshot();
    } else if (epoch - rec.best_epoch >= cfg.patience) {
      log::info("early stop at epoch " + std::to_string(epoch) + " (best " +
                std::to_string(rec.best_epoch) + ")");
      break;
    }
  }

  model.params().restore(best_state);
  model.set_training(false);

  if (ds.has_latents()) {
    rec.final_metric = evaluate_probe(model, ds, cfg);
  }
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

std::pair<std::unique_ptr<LegatoModel>, RunRecord> train(const Dataset& ds,
                                                         const TrainConfig& cfg) {
  auto model = build_variant(ds, cfg);
  RunRecord rec = train_model(*model, ds, cfg);
  return {std::move(model), std::move(rec)};
}

namespace {

// Solve (G) x = b for SPD G via Cholesky, in place.
void cholesky_solve(std::vector<double>& g, std::vector<double>& b, std::size_t n,
                    std::size_t nrhs) {
  for (std::size_t j = 0; j < n; ++j) {
    double d = g[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= g[j * n + k] * g[j * n + k];
    if (d <= 0.0) throw TensorError("probe: normal equations singular despite ridge");
    g[j * n + j] = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = g[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= g[i * n + k] * g[j * n + k];
      g[i * n + j] = s / g[j * n + j];
    }
  }
  // Forward then backward substitution, one rhs column at a time.
  for (std::size_t c = 0; c < nrhs; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = b[i * nrhs + c];
      for (std::size_t k = 0; k < i; ++k) s -= g[i * n + k] * b[k * nrhs + c];
      b[i * nrhs + c] = s / g[i * n + i];
    }
    for (std::size_t ii = n; ii > 0; --ii) {
      const std::size_t i = ii - 1;
      double s = b[i * nrhs + c];
      for (std::size_t k = i + 1; k < n; ++k) s -= g[k * n + i] * b[k * nrhs + c];
      b[i * nrhs + c] = s / g[i * n + i];
    }
  }
}

}  // namespace

double probe_downstream(const Tensor& reps_fit, const Tensor& latents_fit,
                        const Tensor& reps_test, const Tensor& latents_test, double ridge) {
  const std::size_t n = reps_fit.dim(0), r = reps_fit.dim(1), k = latents_fit.dim(1);
  if (latents_fit.dim(0) != n || reps_test.dim(1) != r || latents_test.dim(1) != k) {
    throw TensorError("probe: shape mismatch between representations and latents");
  }
  // Standardize features on the fit split so the ridge penalty acts on
  // comparable scales; degenerate dimensions drop out. The intercept is
  // carried by the target means, not penalized.
  std::vector<double> x_mean(r, 0.0), x_scale(r, 0.0), y_mean(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < r; ++j) x_mean[j] += reps_fit.at(i, j);
    for (std::size_t j = 0; j < k; ++j) y_mean[j] += latents_fit.at(i, j);
  }
  for (auto& v : x_mean) v /= static_cast<double>(n);
  for (auto& v : y_mean) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < r; ++j) {
      const double d = reps_fit.at(i, j) - x_mean[j];
      x_scale[j] += d * d;
    }
  }
  for (auto& v : x_scale) {
    const double sd = std::sqrt(v / static_cast<double>(n));
    v = sd > 1e-8 ? 1.0 / sd : 0.0;
  }
  // Winsorize at 10 fit-split sigmas: rare activation spikes in the
  // representations otherwise let single test rows dominate the fit.
  auto standardized = [&](const Tensor& reps, std::size_t i, std::size_t j) {
    const double v = (reps.at(i, j) - x_mean[j]) * x_scale[j];
    return std::clamp(v, -10.0, 10.0);
  };
  auto fit_x = [&](std::size_t i, std::size_t j) { return standardized(reps_fit, i, j); };
  auto test_x = [&](std::size_t i, std::size_t j) { return standardized(reps_test, i, j); };

  std::vector<double> gram(r * r, 0.0);  // X^T X + ridge I on standardized X
  std::vector<double> xty(r * k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < r; ++a) {
      const double xa = fit_x(i, a);
      if (xa == 0.0) continue;
      for (std::size_t b = a; b < r; ++b) gram[a * r + b] += xa * fit_x(i, b);
      for (std::size_t c = 0; c < k; ++c) {
        xty[a * k + c] += xa * (latents_fit.at(i, c) - y_mean[c]);
      }
    }
  }
  for (std::size_t a = 0; a < r; ++a) {
    for (std::size_t b = 0; b < a; ++b) gram[a * r + b] = gram[b * r + a];
    gram[a * r + a] += ridge;
  }
  cholesky_solve(gram, xty, r, k);  // xty now holds the weights (r x k)

  const std::size_t nt = reps_test.dim(0);
  double mse_sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    double se = 0.0;
    for (std::size_t i = 0; i < nt; ++i) {
      double pred = y_mean[c];
      for (std::size_t a = 0; a < r; ++a) pred += test_x(i, a) * xty[a * k + c];
      const double d = pred - latents_test.at(i, c);
      se += d * d;
    }
    mse_sum += se / static_cast<double>(nt);
  }
  return mse_sum / static_cast<double>(k);
}

double evaluate_probe(LegatoModel& model, const Dataset& ds, const TrainConfig& cfg) {
  if (!ds.has_latents()) throw TensorError("evaluate: dataset has no latents.csv");
  Split split = make_split(ds.num_samples(), cfg.split_fractions, cfg.seed);
  Tensor reps_fit = model.readout_eval(gather_views(ds.views, split.labeled));
  Tensor reps_test = model.readout_eval(gather_views(ds.views, split.test));
  return probe_downstream(reps_fit, gather_rows(ds.latents, split.labeled), reps_test,
                          gather_rows(ds.latents, split.test));
}

GridSearchResult grid_search(const Dataset& ds, const TrainConfig& base) {
  const double grid[] = {0.001, 0.01, 0.1};
  GridSearchResult res;
  res.best = base;
  res.best_val = std::numeric_limits<double>::infinity();
  for (double lr : grid) {
    for (double wd : grid) {
      TrainConfig cfg = base;
      cfg.learning_rate = lr;
      cfg.weight_decay = wd;
      auto [model, rec] = train(ds, cfg);
      res.trials.push_back({lr, wd, rec.best_val});
      if (rec.best_val < res.best_val) {
        res.best_val = rec.best_val;
        res.best = cfg;
      }
    }
  }
  return res;
}

}  // namespace legato
