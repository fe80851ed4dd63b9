#pragma once

#include <array>
#include <memory>
#include <utility>

#include "legato/model.hpp"
#include "legato/synthetic.hpp"

namespace legato {

struct TrainConfig {
  double learning_rate = 0.01;
  double weight_decay = 0.001;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 200;
  std::size_t patience = 20;
  double alpha = 0.01;
  double beta = 0.01;
  std::array<double, 3> split_fractions = {0.6, 0.2, 0.2};
  std::uint64_t seed = 0;
  Variant variant = Variant::Full;
  std::size_t embed_dim = 64;
  std::size_t latent_dim = 64;
  std::size_t hidden_dim = 64;
  double tau = 0.1;
  int pool_levels = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Bias-corrected Adam with decoupled weight decay (p -= lr*wd*p before the
/// Adam delta). Gradients are zeroed after each step.
class Adam {
 public:
  explicit Adam(const ParameterStore& store);
  void step(ParameterStore& store, double lr, double weight_decay);
  std::size_t steps() const { return t_; }

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

 private:
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

struct EpochRecord {
  LossBreakdown train;
  LossBreakdown val;
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
  double final_metric = 0.0;  // downstream probe mean MSE; NaN without latents
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;
  void write_json(const std::filesystem::path& path) const;
  void write_losses_csv(const std::filesystem::path& path) const;
};

struct Split {
  std::vector<std::size_t> unlabeled;  // representation training
  std::vector<std::size_t> labeled;    // validation + probe fitting
  std::vector<std::size_t> test;
};

Split make_split(std::size_t n, const std::array<double, 3>& fractions, std::uint64_t seed);

/// Rows of the views selected by index.
std::vector<Tensor> gather_views(const std::vector<Tensor>& views,
                                 const std::vector<std::size_t>& idx);
Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& idx);

/// Model for a spec'd ablation variant, sized for the dataset's view schema.
std::unique_ptr<LegatoModel> build_variant(const Dataset& ds, const TrainConfig& cfg);

/// Minimize the unsupervised total loss on the unlabeled split with early
/// stopping on the labeled split's loss; restores the best-epoch weights.
/// When ground-truth latents are present the downstream probe fills
/// final_metric.
RunRecord train_model(LegatoModel& model, const Dataset& ds, const TrainConfig& cfg);

std::pair<std::unique_ptr<LegatoModel>, RunRecord> train(const Dataset& ds,
                                                         const TrainConfig& cfg);

/// Closed-form ridge probe (lambda = 1e-3), one regression per latent
/// dimension; returns test MSE averaged over the latents.
double probe_downstream(const Tensor& reps_fit, const Tensor& latents_fit,
                        const Tensor& reps_test, const Tensor& latents_test,
                        double ridge = 1e-3);

/// Readout-based probe evaluation of a trained model on a dataset split.
double evaluate_probe(LegatoModel& model, const Dataset& ds, const TrainConfig& cfg);

struct GridPoint {
  double learning_rate;
  double weight_decay;
  double best_val;
};

struct GridSearchResult {
  TrainConfig best;
  double best_val;
  std::vector<GridPoint> trials;
};

/// Deterministic 3x3 grid over lr x weight_decay in {0.001, 0.01, 0.1}^2,
/// selected by validation loss.
GridSearchResult grid_search(const Dataset& ds, const TrainConfig& base);

}  // namespace legato
