#pragma once

// Experiment protocols behind the CLI: invariance tables, large- vs
// small-batch comparison, layer-normalized line plots and single-point
// measurement. Every report echoes its configuration and seeds; rerunning
// with the echoed values reproduces the numbers.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "flatness/spectral.hpp"
#include "flatness/train.hpp"

namespace flatness {

// ---- invariance -----------------------------------------------------------

struct InvarianceConfig {
  std::string arch = "F1";
  bool with_bias = true;
  std::vector<std::vector<double>> lambdas;
  std::uint64_t seed = 0;
  Index samples = 500;
  Index features = 784;
  int classes = 10;
  TrainConfig train = default_train();
  PowerConfig power;

  static TrainConfig default_train();
};

struct InvarianceRow {
  std::vector<double> lambda;
  double sigma = 0.0;
  double relative_difference = 0.0;
  double class_invariant_change = 0.0;
  SpectralResult spectral;
};

struct InvarianceReport {
  InvarianceConfig config;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  int epochs = 0;
  ParamPoint minimum;
  SpectralResult base;
  std::vector<InvarianceRow> rows;

  nlohmann::json to_json() const;
  /// lambda,sigma_base,sigma_transformed,relative_difference,iterations,converged
  std::string to_csv() const;
};

/// Trains on synthetic data, then measures the Riemannian spectral norm at
/// the minimum and at each rescaled copy of it.
InvarianceReport run_invariance(const InvarianceConfig& cfg);

// ---- large batch vs small batch -------------------------------------------

struct LbsbConfig {
  std::string dataset = "mnist";
  std::string data_dir;
  std::string arch = "mnist-fc-small";
  bool with_bias = true;
  Index subset = 5000;
  Index test_subset = 2000;
  /// Samples of the training set used for the spectral measurement.
  Index measure_samples = 5000;
  Index sb_batch = 16;
  Index lb_batch = 1000;
  double sb_lr = 1e-4;
  double lb_lr = 1e-3;
  Optimizer optimizer = Optimizer::Adam;
  int max_epochs = 200;
  double target_train_accuracy = 0.99;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  PowerConfig power;
  bool euclidean = true;
  /// When non-empty, trained checkpoints are written here.
  std::string checkpoint_dir;
};

struct RunRecord {
  std::uint64_t seed = 0;
  Index batch_size = 0;
  double learning_rate = 0.0;
  int epochs = 0;
  bool reached_target = false;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double riemannian_sigma = 0.0;
  int riemannian_iterations = 0;
  bool riemannian_converged = false;
  std::optional<double> euclidean_sigma;
  int euclidean_iterations = 0;
  std::string checkpoint;
  std::string error;
};

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t count = 0;
};

/// Mean and sample standard deviation (n - 1 denominator; 0 for n < 2).
Summary summarize(const std::vector<double>& values);

struct BatchAggregate {
  Index batch_size = 0;
  Summary test_accuracy;
  Summary riemannian_sigma;
  Summary euclidean_sigma;
};

struct LbsbReport {
  LbsbConfig config;
  std::vector<RunRecord> records;
  std::vector<BatchAggregate> aggregates;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

/// Train/test split used by the LB/SB protocol.
struct Split {
  Dataset train;
  Dataset test;
};
Split load_split(const LbsbConfig& cfg);

std::vector<BatchAggregate> aggregate(const std::vector<RunRecord>& records);

LbsbReport run_lbsb(const LbsbConfig& cfg);

// ---- line plots -----------------------------------------------------------

struct LineplotConfig {
  int directions = 8;
  int samples = 21;
  std::uint64_t seed = 0;
};

struct LineplotRow {
  int direction = 0;
  double t = 0.0;
  double loss_a = 0.0;
  double loss_b = 0.0;
};

/// Scales each block of v to the norm of the matching block of the point.
TangentVector layer_normalized(const ParamPoint& point, const TangentVector& v);

/// Loss along point + t * layer_normalized(V) for t in [-1, 1], both points
/// sharing the same random directions.
std::vector<LineplotRow> run_lineplot(const LossGraph& graph, const ParamPoint& a, const ParamPoint& b,
                                      const Dataset& data, const LineplotConfig& cfg);

/// direction,t,loss_a,loss_b
std::string lineplot_csv(const std::vector<LineplotRow>& rows);

// ---- single measurement ---------------------------------------------------

struct MeasureConfig {
  std::optional<MetricMode> mode;
  PowerConfig power;
  double epsilon = 1e-3;
  bool euclidean = true;
  /// Also run with horizontal projection and compare.
  bool verify_projection = false;
};

struct MeasureReport {
  MetricMode mode = MetricMode::WeightsOnly;
  double loss = 0.0;
  double epsilon = 0.0;
  SpectralResult riemannian;
  double riemannian_sharpness = 0.0;
  std::optional<SpectralResult> euclidean;
  std::optional<double> euclidean_sharpness;
  std::optional<double> projected_sigma;
  std::optional<double> projection_relative_difference;

  nlohmann::json to_json() const;
};

inline constexpr double kProjectionAgreement = 1e-8;

MeasureReport run_measure(const LossGraph& graph, const ParamPoint& point, const Dataset& data,
                          const MeasureConfig& cfg);

}  // namespace flatness
