#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "recgen/seq_model.hpp"

namespace recgen {

inline const std::vector<double> kDefaultFractions{0.05, 0.10, 0.25, 0.50, 1.00};

// loss(t) = a * t^(-b) + c
struct PowerLawFit {
  enum class Status { kOk, kInsufficientPoints, kFailed };
  Status status = Status::kInsufficientPoints;
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double r_squared = 0.0;  // on log(loss)
  std::string message;

  double predict(double tokens) const;
};

std::string to_string(PowerLawFit::Status status);

// Least squares on log residuals, log(loss_i) - log(a t_i^-b + c), with a > 0
// and c >= 0. Needs at least three points.
PowerLawFit fit_power_law(std::span<const double> tokens, std::span<const double> losses);

struct ScalingPoint {
  double fraction = 0.0;
  std::size_t sequences = 0;
  std::int64_t tokens = 0;  // scored target tokens in the training subset
  std::int64_t tokens_processed = 0;
  double eval_loss = 0.0;
  int epochs_run = 0;
  bool ok = false;
  std::string failure;
};

struct ScalingResult {
  std::vector<ScalingPoint> points;  // one per requested fraction
  PowerLawFit fit;

  std::size_t failures() const;
};

struct ScalingSettings {
  std::vector<double> fractions = kDefaultFractions;
  ModelTrainSettings train;  // epochs, patience and keep_best are overridden
  int max_epochs = 30;
  int patience = 5;
  double min_relative_improvement = 0.005;
  std::uint64_t subset_seed = 3;
  std::uint64_t init_seed = 5;
  // Called after every epoch of every run; may throw DivergenceError to
  // abandon that run.
  std::function<void(double fraction, const EpochRecord&)> on_epoch;
};

// One model per fraction, all from the same initial parameters, trained on
// nested prefixes of one seeded permutation of `train` until the eval loss
// stabilises. A run that diverges is recorded as failed; the others go on.
ScalingResult run_scaling_experiment(std::span<const TokenizedSequence> train,
                                     std::span<const TokenizedSequence> eval, const ModelConfig& config,
                                     const ScalingSettings& settings);

// Losses sampled exactly from a known curve, optionally with multiplicative
// noise of relative size `noise`.
std::vector<double> planted_losses(std::span<const double> tokens, double a, double b, double c,
                                   double noise = 0.0, std::uint64_t seed = 0);

// `fraction tokens eval_loss` per successful point, then `#`-prefixed lines
// for failures and the fit.
void write_scaling_result(std::ostream& out, const ScalingResult& result);

}  // namespace recgen
