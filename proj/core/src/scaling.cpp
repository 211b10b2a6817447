#include "recgen/scaling.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>

#include <Eigen/Dense>
#include <unsupported/Eigen/NonLinearOptimization>

#include "recgen/error.hpp"
#include "recgen/rng.hpp"

namespace recgen {

double PowerLawFit::predict(double tokens) const { return a * std::pow(tokens, -b) + c; }

std::string to_string(PowerLawFit::Status status) {
  switch (status) {
    case PowerLawFit::Status::kOk:
      return "ok";
    case PowerLawFit::Status::kInsufficientPoints:
      return "insufficient points";
    case PowerLawFit::Status::kFailed:
      return "failed";
  }
  return "unknown";
}

namespace {

// Parameters x = (log a', b, log c) with tokens rescaled by t_ref, so that
// a = a' * t_ref^b.
struct LogResidual {
  using Scalar = double;
  using InputType = Eigen::VectorXd;
  using ValueType = Eigen::VectorXd;
  using JacobianType = Eigen::MatrixXd;
  enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };

  Eigen::VectorXd log_u;
  Eigen::VectorXd log_loss;

  int inputs() const { return 3; }
  int values() const { return static_cast<int>(log_u.size()); }

  int operator()(const Eigen::VectorXd& x, Eigen::VectorXd& r) const {
    for (Eigen::Index i = 0; i < log_u.size(); ++i) {
      const double m = std::exp(x(0) - x(1) * log_u(i)) + std::exp(x(2));
      r(i) = std::log(m) - log_loss(i);
    }
    return 0;
  }

  int df(const Eigen::VectorXd& x, Eigen::MatrixXd& j) const {
    for (Eigen::Index i = 0; i < log_u.size(); ++i) {
      const double power = std::exp(x(0) - x(1) * log_u(i));
      const double floor = std::exp(x(2));
      const double m = power + floor;
      j(i, 0) = power / m;
      j(i, 1) = -log_u(i) * power / m;
      j(i, 2) = floor / m;
    }
    return 0;
  }
};

}  // namespace

PowerLawFit fit_power_law(std::span<const double> tokens, std::span<const double> losses) {
  if (tokens.size() != losses.size()) throw ConfigError("fit_power_law: tokens and losses differ in length");
  PowerLawFit fit;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!(tokens[i] > 0.0) || !(losses[i] > 0.0) || !std::isfinite(tokens[i]) || !std::isfinite(losses[i])) {
      throw DataError("fit_power_law: tokens and losses must be positive and finite");
    }
  }
  if (tokens.size() < 3) {
    fit.status = PowerLawFit::Status::kInsufficientPoints;
    fit.message = "need at least 3 points, got " + std::to_string(tokens.size());
    return fit;
  }

  const auto n = static_cast<Eigen::Index>(tokens.size());
  const double t_ref = *std::max_element(tokens.begin(), tokens.end());
  LogResidual functor;
  functor.log_u.resize(n);
  functor.log_loss.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    functor.log_u(i) = std::log(tokens[static_cast<std::size_t>(i)] / t_ref);
    functor.log_loss(i) = std::log(losses[static_cast<std::size_t>(i)]);
  }

  // Start from c = 0.9 * min loss and a straight-line fit of log(loss - c).
  const double c0 = 0.9 * *std::min_element(losses.begin(), losses.end());
  Eigen::MatrixXd design(n, 2);
  Eigen::VectorXd rhs(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    design(i, 0) = 1.0;
    design(i, 1) = functor.log_u(i);
    rhs(i) = std::log(losses[static_cast<std::size_t>(i)] - c0);
  }
  const Eigen::Vector2d line = design.colPivHouseholderQr().solve(rhs);
  Eigen::VectorXd x(3);
  x << line(0), -line(1), std::log(c0);

  Eigen::LevenbergMarquardt<LogResidual> lm(functor);
  lm.parameters.maxfev = 2000;
  lm.parameters.xtol = 1e-12;
  lm.parameters.ftol = 1e-14;
  const auto status = lm.minimize(x);
  if (!x.allFinite() || status == Eigen::LevenbergMarquardtSpace::ImproperInputParameters) {
    fit.status = PowerLawFit::Status::kFailed;
    fit.message = "Levenberg-Marquardt did not converge (status " + std::to_string(static_cast<int>(status)) + ")";
    return fit;
  }

  fit.b = x(1);
  fit.a = std::exp(x(0)) * std::pow(t_ref, fit.b);
  fit.c = std::exp(x(2));
  Eigen::VectorXd r(n);
  functor(x, r);
  const double mean = functor.log_loss.mean();
  const double ss_tot = (functor.log_loss.array() - mean).square().sum();
  const double ss_res = r.squaredNorm();
  fit.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
  fit.status = PowerLawFit::Status::kOk;
  return fit;
}

std::size_t ScalingResult::failures() const {
  return static_cast<std::size_t>(std::count_if(points.begin(), points.end(), [](const auto& p) { return !p.ok; }));
}

ScalingResult run_scaling_experiment(std::span<const TokenizedSequence> train,
                                     std::span<const TokenizedSequence> eval, const ModelConfig& config,
                                     const ScalingSettings& settings) {
  if (settings.fractions.empty()) throw ConfigError("scaling: no fractions given");
  for (std::size_t i = 0; i < settings.fractions.size(); ++i) {
    const double f = settings.fractions[i];
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("scaling: fractions must lie in (0, 1]");
    if (i > 0 && !(f > settings.fractions[i - 1])) throw ConfigError("scaling: fractions must be strictly increasing");
  }
  if (train.empty()) throw DataError("scaling: empty training set");
  if (eval.empty()) throw DataError("scaling: empty evaluation set");
  config.validate();

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(settings.subset_seed, 0x5ca1));
  shuffle(std::span(order), rng);

  ModelTrainSettings train_settings = settings.train;
  train_settings.epochs = settings.max_epochs;
  train_settings.patience = settings.patience;
  train_settings.min_relative_improvement = settings.min_relative_improvement;
  train_settings.keep_best = true;

  ScalingResult result;
  std::vector<double> fit_tokens;
  std::vector<double> fit_losses;
  for (double f : settings.fractions) {
    ScalingPoint point;
    point.fraction = f;
    const auto count = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::ceil(f * static_cast<double>(train.size()) - 1e-9)), 1, train.size());
    std::vector<TokenizedSequence> subset;
    subset.reserve(count);
    for (std::size_t i = 0; i < count; ++i) subset.push_back(train[order[i]]);
    point.sequences = count;
    try {
      SequenceModel model(config, settings.init_seed);
      std::function<void(const EpochRecord&)> observer;
      if (settings.on_epoch) observer = [&](const EpochRecord& rec) { settings.on_epoch(f, rec); };
      const auto run = train_model(model, subset, eval, train_settings, nullptr, observer);
      point.tokens = run.scored_tokens_per_epoch;
      point.tokens_processed = run.scored_tokens_processed;
      point.eval_loss = run.best_eval_loss;
      point.epochs_run = static_cast<int>(run.trace.size());
      point.ok = std::isfinite(point.eval_loss);
      if (!point.ok) point.failure = "non-finite evaluation loss";
    } catch (const DivergenceError& err) {
      point.failure = err.what();
    }
    if (point.ok) {
      fit_tokens.push_back(static_cast<double>(point.tokens));
      fit_losses.push_back(point.eval_loss);
    }
    result.points.push_back(std::move(point));
  }
  result.fit = fit_power_law(fit_tokens, fit_losses);
  return result;
}

std::vector<double> planted_losses(std::span<const double> tokens, double a, double b, double c, double noise,
                                   std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x91a));
  std::vector<double> out;
  out.reserve(tokens.size());
  for (double t : tokens) {
    const double clean = a * std::pow(t, -b) + c;
    out.push_back(noise > 0.0 ? clean * std::exp(noise * standard_normal(rng)) : clean);
  }
  return out;
}

void write_scaling_result(std::ostream& out, const ScalingResult& result) {
  const auto old = out.precision(std::numeric_limits<double>::max_digits10);
  for (const auto& p : result.points) {
    if (p.ok) out << p.fraction << ' ' << p.tokens << ' ' << p.eval_loss << '\n';
  }
  for (const auto& p : result.points) {
    if (!p.ok) out << "# failed " << p.fraction << ' ' << p.failure << '\n';
  }
  out << "# fit " << to_string(result.fit.status);
  if (result.fit.status == PowerLawFit::Status::kOk) {
    out << " a=" << result.fit.a << " b=" << result.fit.b << " c=" << result.fit.c
        << " r2=" << result.fit.r_squared;
  } else if (!result.fit.message.empty()) {
    out << ' ' << result.fit.message;
  }
  out << '\n';
  out.precision(old);
}

}  // namespace recgen
