#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "recgen/error.hpp"
#include "recgen/scaling.hpp"
#include "support/fixtures.hpp"

using namespace recgen;
using namespace recgen::testing;

namespace {

const std::vector<double> kTokens{2000, 4000, 10000, 20000, 40000};

ModelConfig tiny_model() { return ModelConfig{16, 1, 2, 8, 2, 7, 3, 32}; }

}  // namespace

TEST(PowerLaw, RecoversCleanCurve) {
  const auto losses = planted_losses(kTokens, 50.0, 0.5, 2.0);
  const auto fit = fit_power_law(kTokens, losses);
  ASSERT_EQ(fit.status, PowerLawFit::Status::kOk) << fit.message;
  EXPECT_NEAR(fit.b, 0.5, 1e-6);
  EXPECT_NEAR(fit.a, 50.0, 1e-3);
  EXPECT_NEAR(fit.c, 2.0, 1e-6);
  EXPECT_NEAR(fit.r_squared, 1.0, 1e-9);
  EXPECT_NEAR(fit.predict(8000), 50.0 * std::pow(8000.0, -0.5) + 2.0, 1e-6);
}

TEST(PowerLaw, RecoversNoisyExponents) {
  int within = 0;
  int runs = 0;
  for (double b : {0.3, 0.5, 0.8}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const double a = 3.0 * std::pow(2000.0, b);
      const auto losses = planted_losses(kTokens, a, b, 1.0, 0.002, seed);
      const auto fit = fit_power_law(kTokens, losses);
      ++runs;
      if (fit.status == PowerLawFit::Status::kOk && std::abs(fit.b - b) / b <= 0.1) ++within;
    }
  }
  EXPECT_EQ(within, runs);
}

TEST(PowerLaw, NeedsThreePoints) {
  const std::vector<double> t{1000, 2000}, l{3.0, 2.5};
  EXPECT_EQ(fit_power_law(t, l).status, PowerLawFit::Status::kInsufficientPoints);
  EXPECT_EQ(to_string(PowerLawFit::Status::kInsufficientPoints), "insufficient points");
}

TEST(Scaling, NestedSubsetsAndFailureIsolation) {
  Rng rng(1);
  const auto cfg = tiny_model();
  std::vector<TokenizedSequence> train, eval;
  for (int i = 0; i < 40; ++i) train.push_back(random_sequence(cfg, 2 + static_cast<int>(uniform_below(rng, 3)), rng));
  for (int i = 0; i < 10; ++i) eval.push_back(random_sequence(cfg, 3, rng));
  ScalingSettings s;
  s.fractions = {0.1, 0.25, 0.5, 1.0};
  s.max_epochs = 3;
  s.train.batch_size = 4;
  s.on_epoch = [](double fraction, const EpochRecord& r) {
    if (fraction == 0.5 && r.epoch == 2) throw DivergenceError("injected");
  };
  const auto result = run_scaling_experiment(train, eval, cfg, s);
  ASSERT_EQ(result.points.size(), 4u);
  EXPECT_EQ(result.failures(), 1u);
  EXPECT_FALSE(result.points[2].ok);
  EXPECT_NE(result.points[2].failure.find("injected"), std::string::npos);
  EXPECT_EQ(result.points[0].sequences, 4u);
  EXPECT_EQ(result.points[1].sequences, 10u);
  EXPECT_EQ(result.points[3].sequences, 40u);
  EXPECT_LT(result.points[0].tokens, result.points[1].tokens);
  EXPECT_LT(result.points[1].tokens, result.points[3].tokens);
  EXPECT_EQ(result.fit.status, PowerLawFit::Status::kOk);

  std::ostringstream out;
  write_scaling_result(out, result);
  const auto text = out.str();
  EXPECT_NE(text.find("# failed 0.5"), std::string::npos);
  EXPECT_NE(text.find("# fit ok"), std::string::npos);
}

TEST(Scaling, TooFewSurvivorsMeansNoFit) {
  Rng rng(2);
  const auto cfg = tiny_model();
  std::vector<TokenizedSequence> train, eval;
  for (int i = 0; i < 20; ++i) train.push_back(random_sequence(cfg, 3, rng));
  for (int i = 0; i < 5; ++i) eval.push_back(random_sequence(cfg, 3, rng));
  ScalingSettings s;
  s.fractions = {0.25, 0.5, 1.0};
  s.max_epochs = 1;
  s.on_epoch = [](double fraction, const EpochRecord&) {
    if (fraction == 1.0) throw DivergenceError("boom");
  };
  const auto result = run_scaling_experiment(train, eval, cfg, s);
  EXPECT_EQ(result.failures(), 1u);
  EXPECT_EQ(result.fit.status, PowerLawFit::Status::kInsufficientPoints);
}
