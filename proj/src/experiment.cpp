#include "legato/experiment.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include "legato/checkpoint.hpp"
#include "legato/logging.hpp"

namespace legato {

namespace {

SimSpec parse_sim(const nlohmann::json& j) {
  SimSpec s;
  s.num_views = j.value("k", static_cast<std::size_t>(6));
  s.correlation = j.value("w", 0.0);
  s.mode = mode_from_string(j.value("mode", "local"));
  // Desk-scale defaults; the paper-scale 100-dim run is a config key away.
  s.num_samples = j.value("n", static_cast<std::size_t>(2000));
  s.feature_dim = j.value("feature_dim", static_cast<std::size_t>(20));
  s.seed = j.value("seed", static_cast<std::uint64_t>(0));
  return s;
}

SweepAxes parse_sweep(const nlohmann::json& j) {
  SweepAxes a;
  if (j.contains("k")) a.k_values = j.at("k").get<std::vector<std::size_t>>();
  if (j.contains("w")) a.w_values = j.at("w").get<std::vector<double>>();
  if (j.contains("variants")) a.variants = j.at("variants").get<std::vector<std::string>>();
  if (j.contains("seeds")) a.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  a.mode = mode_from_string(j.value("mode", "local"));
  a.num_samples = j.value("n", a.num_samples);
  a.feature_dim = j.value("feature_dim", a.feature_dim);
  a.save_checkpoints = j.value("save_checkpoints", false);
  if (a.k_values.empty() || a.w_values.empty() || a.variants.empty() || a.seeds.empty()) {
    throw ConfigError("sweep: all axes must be non-empty");
  }
  for (const auto& v : a.variants) variant_from_string(v);  // validate early
  return a;
}

}  // namespace

ExperimentConfig parse_experiment_config(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  if (doc.contains("schema_version") && doc.at("schema_version") != 1) {
    throw ConfigError("unsupported config schema_version");
  }
  ExperimentConfig cfg;
  if (doc.contains("sim")) cfg.sim = parse_sim(doc.at("sim"));
  if (doc.contains("data_dir")) cfg.data_dir = doc.at("data_dir").get<std::string>();
  if (cfg.sim && cfg.data_dir) {
    throw ConfigError("config must name exactly one data source (sim or data_dir)");
  }
  if (doc.contains("checkpoint")) cfg.checkpoint = doc.at("checkpoint").get<std::string>();
  if (doc.contains("train")) cfg.train = TrainConfig::from_json(doc.at("train"));
  cfg.run_grid_search = doc.value("grid_search", false);
  if (doc.contains("attribute")) {
    const auto& a = doc.at("attribute");
    cfg.attribute.target = a.value("target", cfg.attribute.target);
    cfg.attribute.dim = a.value("dim", cfg.attribute.dim);
    cfg.attribute.samples = a.value("samples", cfg.attribute.samples);
    cfg.attribute.steps = a.value("steps", cfg.attribute.steps);
    if (cfg.attribute.target != "norm" && cfg.attribute.target != "coordinate") {
      throw ConfigError("attribute.target must be 'norm' or 'coordinate'");
    }
  }
  if (doc.contains("sweep")) cfg.sweep = parse_sweep(doc.at("sweep"));
  if (doc.contains("out")) cfg.out = doc.at("out").get<std::string>();
  cfg.workers = doc.value("workers", 1);
  if (cfg.workers < 1) throw ConfigError("workers must be >= 1");
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const CliOverrides& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError("config parse error in " + path.string() + ": " + e.what());
  }
  ExperimentConfig cfg = parse_experiment_config(doc);
  if (overrides.out) cfg.out = *overrides.out;
  if (overrides.seed) {
    if (cfg.sim) cfg.sim->seed = *overrides.seed;
    cfg.train.seed = *overrides.seed;
  }
  if (overrides.force) cfg.force = true;
  if (overrides.workers) cfg.workers = *overrides.workers;
  return cfg;
}

namespace {

Dataset resolve_dataset(const ExperimentConfig& cfg) {
  if (cfg.data_dir) return load_dataset(*cfg.data_dir);
  if (cfg.sim) return simulate(*cfg.sim);
  throw ConfigError("no data source: set either sim or data_dir in the config");
}

nlohmann::json data_provenance(const ExperimentConfig& cfg) {
  if (cfg.data_dir) return {{"data_dir", cfg.data_dir->string()}};
  return {{"sim", cfg.sim->to_json()}};
}

void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw TensorError("cannot write " + tmp.string());
    out << j.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

struct LoadedModel {
  std::unique_ptr<LegatoModel> model;
  TrainConfig train_cfg;
};

LoadedModel load_model_for(const ExperimentConfig& cfg, const Dataset& ds) {
  const auto path = resolve_checkpoint(cfg);
  if (!std::filesystem::exists(path)) {
    throw TensorError("missing checkpoint: " + path.string());
  }
  nlohmann::json schema = read_checkpoint_schema(path);
  ModelConfig mc = ModelConfig::from_json(schema.at("model"));
  if (mc.num_views != ds.num_views() || mc.view_dims != ds.view_dims()) {
    throw TensorError("schema mismatch: checkpoint expects " + std::to_string(mc.num_views) +
                      " views with dims that do not match the dataset");
  }
  auto model = std::make_unique<LegatoModel>(mc);
  load_checkpoint(path, model->params());
  model->set_training(false);
  TrainConfig tc = TrainConfig::from_json(schema.at("train"));
  return {std::move(model), tc};
}

}  // namespace

std::filesystem::path resolve_checkpoint(const ExperimentConfig& cfg) {
  return cfg.checkpoint ? *cfg.checkpoint : cfg.out / "checkpoint.bin";
}

int cmd_simulate(const ExperimentConfig& cfg) {
  if (!cfg.sim) throw ConfigError("simulate needs a sim section in the config");
  if (std::filesystem::exists(cfg.out) && !std::filesystem::is_empty(cfg.out) && !cfg.force) {
    throw ConfigError("output directory " + cfg.out.string() +
                      " exists and is not empty (use --force to overwrite)");
  }
  Dataset ds = simulate(*cfg.sim);
  write_dataset(ds, cfg.out, cfg.force);
  std::cout << "simulate: wrote " << ds.num_views() << " views x " << ds.num_samples()
            << " samples to " << cfg.out.string() << "\n";
  return kExitOk;
}

int cmd_train(const ExperimentConfig& cfg) {
  Dataset ds = resolve_dataset(cfg);
  std::filesystem::create_directories(cfg.out);
  TrainConfig tc = cfg.train;
  if (cfg.run_grid_search) {
    GridSearchResult gs = grid_search(ds, tc);
    nlohmann::json trials = nlohmann::json::array();
    for (const auto& t : gs.trials) {
      trials.push_back({{"learning_rate", t.learning_rate},
                        {"weight_decay", t.weight_decay},
                        {"best_val", t.best_val}});
    }
    write_json_atomic(cfg.out / "grid_search.json",
                      {{"trials", trials},
                       {"best_learning_rate", gs.best.learning_rate},
                       {"best_weight_decay", gs.best.weight_decay}});
    tc = gs.best;
    log::info("grid search picked lr=" + std::to_string(tc.learning_rate) +
              " wd=" + std::to_string(tc.weight_decay));
  }

  auto [model, rec] = train(ds, tc);
  nlohmann::json schema = {{"model", model->config().to_json()},
                           {"train", tc.to_json()},
                           {"data", data_provenance(cfg)}};
  save_checkpoint(cfg.out / "checkpoint.bin", model->params(), schema);
  rec.write_json(cfg.out / "run_record.json");
  rec.write_losses_csv(cfg.out / "losses.csv");
  std::cout << "train: " << rec.epochs.size() << " epochs, best_val "
            << format_double(rec.best_val) << ", probe_mse " << format_double(rec.final_metric)
            << ", wrote " << (cfg.out / "checkpoint.bin").string() << "\n";
  return kExitOk;
}

int cmd_evaluate(const ExperimentConfig& cfg) {
  Dataset ds = resolve_dataset(cfg);
  auto [model, tc] = load_model_for(cfg, ds);
  const double mse = evaluate_probe(*model, ds, tc);
  std::filesystem::create_directories(cfg.out);
  write_json_atomic(cfg.out / "probe_mse.json",
                    {{"mean_mse", mse},
                     {"ridge", 1e-3},
                     {"split_seed", tc.seed},
                     {"checkpoint", resolve_checkpoint(cfg).string()}});
  std::cout << "evaluate: probe mean MSE " << format_double(mse) << "\n";
  return kExitOk;
}

int cmd_attribute(const ExperimentConfig& cfg) {
  Dataset ds = resolve_dataset(cfg);
  auto [model, tc] = load_model_for(cfg, ds);
  const std::size_t k = ds.num_views();
  const std::size_t kp = model->latent_nodes();

  Split split = make_split(ds.num_samples(), tc.split_fractions, tc.seed);
  std::vector<std::size_t> picks = split.test;
  if (picks.size() > cfg.attribute.samples) picks.resize(cfg.attribute.samples);
  if (picks.empty()) throw TensorError("attribute: empty test split");

  // Mean learned adjacency over the inspected samples (the gated matrix the
  // model actually propagates).
  Tensor adj_mean({k, k});
  {
    NoGradGuard guard;
    ForwardResult fr = model->forward(gather_views(ds.views, picks));
    const Tensor& gated = fr.gated_adjacency.value();
    for (std::size_t s = 0; s < picks.size(); ++s)
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) adj_mean.at(i, j) += gated.at(s, i, j);
    for (std::size_t i = 0; i < k * k; ++i) adj_mean[i] /= static_cast<double>(picks.size());
  }

  // Per-target view attributions, averaged over samples. Each column is one
  // latent node's attribution profile and sums to one; the emitted matrix is
  // then row-normalized so each view row describes how that view distributes
  // over latent nodes.
  IgTarget target;
  target.dim = cfg.attribute.target == "coordinate" ? cfg.attribute.dim : -1;
  Tensor contrib({k, kp});
  for (std::size_t idx : picks) {
    std::vector<Tensor> sample = gather_views(ds.views, {idx});
    for (std::size_t node = 0; node < kp; ++node) {
      target.node = node;
      IgResult ig = integrated_gradients(*model, sample, {}, target, cfg.attribute.steps);
      for (std::size_t v = 0; v < k; ++v) contrib.at(v, node) += ig.view_attributions[v];
    }
  }
  for (std::size_t i = 0; i < contrib.size(); ++i) {
    contrib[i] /= static_cast<double>(picks.size());
  }
  for (std::size_t v = 0; v < k; ++v) {
    double row = 0.0;
    for (std::size_t node = 0; node < kp; ++node) row += contrib.at(v, node);
    if (row > 0.0) {
      for (std::size_t node = 0; node < kp; ++node) contrib.at(v, node) /= row;
    }
  }

  std::filesystem::create_directories(cfg.out);
  {
    std::ofstream out(cfg.out / "adjacency_mean.csv");
    out << "view";
    for (std::size_t j = 0; j < k; ++j) out << ",view_" << (j + 1);
    out << '\n';
    for (std::size_t i = 0; i < k; ++i) {
      out << "view_" << (i + 1);
      for (std::size_t j = 0; j < k; ++j) out << ',' << format_double(adj_mean.at(i, j));
      out << '\n';
    }
  }
  {
    std::ofstream out(cfg.out / "view_contributions.csv");
    out << "view";
    for (std::size_t j = 0; j < kp; ++j) out << ",latent_" << (j + 1);
    out << '\n';
    for (std::size_t v = 0; v < k; ++v) {
      out << "view_" << (v + 1);
      for (std::size_t j = 0; j < kp; ++j) out << ',' << format_double(contrib.at(v, j));
      out << '\n';
    }
  }
  std::cout << "attribute: wrote adjacency_mean.csv and view_contributions.csv to "
            << cfg.out.string() << "\n";
  return kExitOk;
}

namespace {

struct SweepCell {
  std::size_t k;
  double w;
  std::string variant;
  std::uint64_t seed;
  std::string id;
};

std::string format_w(double w) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", w);
  return buf;
}

nlohmann::json run_sweep_cell(const ExperimentConfig& cfg, const SweepAxes& axes,
                              const SweepCell& cell, const std::filesystem::path& cell_dir) {
  SimSpec spec;
  spec.num_views = cell.k;
  spec.correlation = cell.w;
  spec.mode = axes.mode;
  spec.num_samples = axes.num_samples;
  spec.feature_dim = axes.feature_dim;
  spec.seed = cell.seed;

  TrainConfig tc = cfg.train;
  tc.variant = variant_from_string(cell.variant);
  tc.seed = cell.seed;

  Dataset ds = simulate(spec);
  auto [model, rec] = train(ds, tc);
  rec.write_json(cell_dir / "run_record.json");
  rec.write_losses_csv(cell_dir / "losses.csv");
  if (axes.save_checkpoints) {
    nlohmann::json schema = {{"model", model->config().to_json()},
                             {"train", tc.to_json()},
                             {"data", {{"sim", spec.to_json()}}}};
    save_checkpoint(cell_dir / "checkpoint.bin", model->params(), schema);
  }

  const bool has_epochs = !rec.epochs.empty();
  const LossBreakdown best =
      has_epochs ? rec.epochs[rec.best_epoch].train : LossBreakdown{};
  return {{"status", "ok"},
          {"k", cell.k},
          {"w", cell.w},
          {"mode", to_string(axes.mode)},
          {"variant", cell.variant},
          {"seed", cell.seed},
          {"mean_mse", rec.final_metric},
          {"recon_feat", best.recon_features},
          {"recon_adj", best.recon_adjacency},
          {"orth", best.orthogonality},
          {"spar", best.sparsity},
          {"total", best.total},
          {"val_total", has_epochs ? rec.best_val : 0.0},
          {"best_epoch", rec.best_epoch},
          {"epochs", rec.epochs.size()}};
}

}  // namespace

int cmd_sweep(const ExperimentConfig& cfg) {
  if (!cfg.sweep) throw ConfigError("sweep needs a sweep section in the config");
  const SweepAxes& axes = *cfg.sweep;

  std::vector<SweepCell> cells;
  for (std::size_t k : axes.k_values) {
    for (double w : axes.w_values) {
      for (const auto& variant : axes.variants) {
        for (std::uint64_t seed : axes.seeds) {
          SweepCell c{k, w, variant, seed, ""};
          c.id = "K" + std::to_string(k) + "_w" + format_w(w) + "_" + to_string(axes.mode) +
                 "_" + variant + "_s" + std::to_string(seed);
          cells.push_back(std::move(c));
        }
      }
    }
  }
  std::cout << "sweep: " << cells.size() << " cells (" << axes.k_values.size() << " K x "
            << axes.w_values.size() << " w x " << axes.variants.size() << " variants x "
            << axes.seeds.size() << " seeds), workers " << cfg.workers << "\n";

  const auto cells_dir = cfg.out / "cells";
  std::filesystem::create_directories(cells_dir);
  {
    nlohmann::json cell_ids = nlohmann::json::array();
    for (const auto& c : cells) cell_ids.push_back(c.id);
    write_json_atomic(cfg.out / "sweep_manifest.json",
                      {{"schema_version", 1},
                       {"mode", to_string(axes.mode)},
                       {"n", axes.num_samples},
                       {"feature_dim", axes.feature_dim},
                       {"train", cfg.train.to_json()},
                       {"cells", cell_ids}});
  }

  std::vector<nlohmann::json> results(cells.size());
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> failures{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      const SweepCell& cell = cells[i];
      const auto cell_dir = cells_dir / cell.id;
      const auto result_path = cell_dir / "result.json";
      if (std::filesystem::exists(result_path)) {
        try {
          std::ifstream in(result_path);
          results[i] = nlohmann::json::parse(in);
          log::debug("sweep: resume " + cell.id);
          continue;
        } catch (const std::exception&) {
          log::warn("sweep: unreadable result for " + cell.id + ", re-running");
        }
      }
      std::filesystem::create_directories(cell_dir);
      nlohmann::json res;
      try {
        res = run_sweep_cell(cfg, axes, cell, cell_dir);
      } catch (const std::exception& e) {
        res = {{"status", "failed"}, {"k", cell.k},          {"w", cell.w},
               {"mode", to_string(axes.mode)}, {"variant", cell.variant},
               {"seed", cell.seed},   {"error", e.what()}};
        failures.fetch_add(1);
        log::error("sweep cell " + cell.id + " failed: " + e.what());
      }
      write_json_atomic(result_path, res);
      results[i] = res;
      log::info("sweep: finished " + cell.id);
    }
  };
  {
    std::vector<std::thread> pool;
    const int nw = std::max(1, cfg.workers);
    pool.reserve(static_cast<std::size_t>(nw));
    for (int t = 0; t < nw; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  // Resumed runs may have failed earlier; count every failed row.
  std::size_t failed_rows = 0;
  const auto csv_path = cfg.out / "sweep.csv";
  std::filesystem::path tmp = csv_path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    out << "K,w,mode,variant,seed,status,mean_mse,recon_feat,recon_adj,orth,spar,total,"
           "val_total,best_epoch,epochs\n";
    for (const auto& res : results) {
      const std::string status = res.value("status", "failed");
      if (status != "ok") ++failed_rows;
      out << res.at("k").get<std::size_t>() << ',' << format_double(res.at("w").get<double>())
          << ',' << res.at("mode").get<std::string>() << ','
          << res.at("variant").get<std::string>() << ',' << res.at("seed").get<std::uint64_t>()
          << ',' << status;
      const char* keys[] = {"mean_mse", "recon_feat", "recon_adj", "orth",
                            "spar",     "total",      "val_total"};
      for (const char* key : keys) {
        out << ',';
        if (res.contains(key) && res.at(key).is_number()) {
          out << format_double(res.at(key).get<double>());
        }
      }
      out << ',';
      if (res.contains("best_epoch")) out << res.at("best_epoch").get<std::size_t>();
      out << ',';
      if (res.contains("epochs")) out << res.at("epochs").get<std::size_t>();
      out << '\n';
    }
  }
  std::filesystem::rename(tmp, csv_path);
  std::cout << "sweep: wrote " << csv_path.string() << " (" << results.size() << " rows, "
            << failed_rows << " failed)\n";
  return failed_rows == 0 ? kExitOk : kExitRuntime;
}

}  // namespace legato
