#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nopf/dynamics.hpp"
#include "nopf/simulator.hpp"
#include "nopf/surrogate.hpp"

namespace nopf {

// Ranges for closed-loop trajectories whose numerical-predictor outputs become
// training labels.
struct SamplingConfig {
  std::size_t trajectories = 200;
  std::size_t samples_per_trajectory = 20;
  double horizon = 10.0;  // samples at uniform times i*horizon/samples over [0, horizon)
  std::vector<Interval> x0_box{{0.0, 0.2}, {0.0, 40.0}};
  Interval true_delay{0.6, 2.5};
  Interval d_hat0{0.5, 3.0};
  std::size_t grid_size = 41;         // surrogate input/output grid
  std::size_t label_intervals = 200;  // predictor resolution for labels, multiple of grid_size-1
  std::uint64_t seed = 0;
  std::size_t threads = 1;  // 0 = hardware concurrency
  double max_discard_fraction = 0.1;

  void validate(std::size_t state_dim, double d_min, double d_max) const;
};

struct DatasetSample {
  std::vector<double> state;
  std::vector<double> input_profile;  // grid_size values
  double d_hat = 0.0;
  std::vector<double> target_profile;  // grid_size*n values, node-major
};

struct Dataset {
  std::size_t state_dim = 0;
  std::size_t grid_size = 0;
  std::size_t label_intervals = 0;
  SamplingConfig sampling;
  std::string plant;
  std::size_t discarded_trajectories = 0;
  std::string provenance;  // effective configuration echo (JSON text), may be empty
  std::vector<DatasetSample> samples;
};

// Numerical-predictor label for one (state, profile, D̂) triple: the profile is
// linearly upsampled to `label_intervals`, marched with Euler and read back at
// the coarse nodes. A pure function of the stored row.
std::vector<double> label_profile(const PlantModel& model, std::span<const double> state,
                                  std::span<const double> input_profile, double d_hat, std::size_t label_intervals);

// `sim` supplies dt, γ, b, [D_, D̄] and the simulation grid step; its x0,
// true delay and D̂(0) are replaced per trajectory.
Dataset generate_dataset(const PlantModel& model, const SamplingConfig& sampling, const SimConfig& sim);

void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 256;
  std::size_t epochs = 500;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t patience = 25;  // 0 disables early stopping
  double validation_fraction = 0.1;
  double target_epsilon = 0.0;  // stop once validation ε̂ falls to this; 0 disables
  bool parallel = false;        // split batches across threads (not bit-reproducible)
  std::size_t threads = 0;      // parallel mode only; 0 = hardware concurrency

  void validate() const;
};

struct LossAndGradients {
  double loss = 0.0;
  std::vector<double> gradients;
};

// Mean squared error in normalized output space over the batch, the grid
// nodes and the state components, with reverse-mode gradients.
LossAndGradients loss_and_gradients(const SurrogateParams& params, std::span<const DatasetSample> batch);

struct AdamMoments {
  std::vector<double> first;
  std::vector<double> second;
};

// Bias-corrected Adam update; `step_index` counts from 1.
void adam_step(std::vector<double>& params, std::span<const double> gradients, AdamMoments& moments,
               std::size_t step_index, const TrainConfig& config);

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

// Deterministic shuffle-and-split. A single-row dataset validates on its
// training row.
DatasetSplit split_dataset(std::size_t rows, double validation_fraction, std::uint64_t seed);

// Per-feature standardization fitted to the listed rows.
void fit_normalization(SurrogateParams& params, const Dataset& dataset, std::span<const std::size_t> rows);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double validation_epsilon = 0.0;
};

struct TrainingReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_validation_loss = 0.0;
  double validation_epsilon = 0.0;  // ε̂ of the returned checkpoint
  std::string stop_reason;          // "epochs", "patience" or "target_epsilon"
  double wall_seconds = 0.0;
  std::size_t train_rows = 0;
  std::size_t validation_rows = 0;
};

struct TrainResult {
  SurrogateParams params;
  TrainingReport report;
};

TrainResult train(const Dataset& dataset, const SurrogateArchitecture& architecture, const TrainConfig& config);

// Key-value summary at `path`, per-epoch table at `path`.csv.
void write_training_report(const TrainingReport& report, const std::string& path);

struct SupErrorReport {
  double epsilon_hat = 0.0;  // max |P̂ - P| over samples, nodes and components
  double mean_error = 0.0;
  std::size_t samples = 0;
  std::vector<double> component_max;
  std::string domain;  // descriptor of the evaluated sample ranges
};

SupErrorReport eval_sup_error(const SurrogateParams& params, std::span<const DatasetSample> partition);

}  // namespace nopf
