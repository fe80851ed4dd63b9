#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "legato/rng.hpp"
#include "legato/tensor.hpp"

namespace legato {

/// Multi-view simulation: one scalar latent per view, rendered through a
/// frozen random MLP. Correlation is injected either globally (every latent
/// mixes with the first) or locally (independent correlated pairs).
struct SimSpec {
  enum class Mode { Global, Local };

  std::size_t num_views = 6;    // K
  double correlation = 0.0;     // w
  Mode mode = Mode::Global;
  std::size_t num_samples = 2000;
  std::size_t feature_dim = 100;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static SimSpec from_json(const nlohmann::json& j);
};

std::string to_string(SimSpec::Mode m);
SimSpec::Mode mode_from_string(const std::string& s);

/// Draw z_k ~ N(k,1) independently, then mix every column with the original
/// first column: z_k <- (1-w) z_k + w z_1. Returns (N,K).
Tensor simulate_global(const SimSpec& spec);

/// K/2 independent pairs; pair p has means (2p-1, 2p), unit variances and
/// covariance w. Requires even K. Returns (N,K).
Tensor simulate_local(const SimSpec& spec);

Tensor simulate_latents(const SimSpec& spec);

/// Render view k from latent column k through a frozen seeded MLP
/// (1 -> 32 tanh -> feature_dim, zero biases, N(0,1)/sqrt(fan_in) weights).
std::vector<Tensor> render_views(const Tensor& latents, const SimSpec& spec);

struct Dataset {
  std::vector<Tensor> views;  // K x (N, d_k)
  Tensor latents;             // (N, K); empty when unknown
  nlohmann::json manifest;    // sim_manifest.json contents when available

  std::size_t num_views() const { return views.size(); }
  std::size_t num_samples() const { return views.empty() ? 0 : views[0].dim(0); }
  std::vector<std::size_t> view_dims() const;
  bool has_latents() const { return !latents.empty(); }
};

Dataset simulate(const SimSpec& spec);

/// Layout: view_<k>.csv (1-based, header row), latents.csv, sim_manifest.json.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir, bool force);

/// Accepts any directory matching the layout above; latents.csv and the
/// manifest are optional.
Dataset load_dataset(const std::filesystem::path& dir);

/// Deterministic shortest round-trip formatting used for all emitted CSVs.
std::string format_double(double v);

}  // namespace legato
