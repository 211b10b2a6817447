#include <cmath>

#include <gtest/gtest.h>

#include "recgen/error.hpp"
#include "recgen/eval.hpp"
#include "recgen/rng.hpp"

using namespace recgen;

TEST(Metrics, KnownRanks) {
  const std::vector<std::size_t> ranks{1, 3, 7};
  const auto r = compute_metrics(ranks);
  EXPECT_EQ(r.n_cases, 3u);
  EXPECT_EQ(r.hit.at(5), 2.0 / 3.0);
  // (1 + 1/log2(4)) / 3
  EXPECT_EQ(r.ndcg.at(5), 0.5);
  EXPECT_EQ(r.hit.at(1), 1.0 / 3.0);
  EXPECT_EQ(r.hit.at(10), 1.0);
  EXPECT_NEAR(r.ndcg.at(10), (1.0 + 0.5 + 1.0 / 3.0) / 3.0, 1e-15);
}

TEST(Metrics, HitAtOneEqualsNdcgAtOne) {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::size_t> ranks(1 + uniform_below(rng, 50));
    for (auto& r : ranks) r = 1 + uniform_below(rng, 20);
    const auto m = compute_metrics(ranks);
    EXPECT_EQ(m.hit.at(1), m.ndcg.at(1));
    for (int n : kDefaultCutoffs) {
      EXPECT_LE(m.ndcg.at(n), m.hit.at(n));
      EXPECT_GE(m.hit.at(n), 0.0);
      EXPECT_LE(m.hit.at(n), 1.0);
    }
    EXPECT_LE(m.hit.at(3), m.hit.at(5));
  }
}

TEST(Metrics, RejectsInvalidInput) {
  EXPECT_THROW(compute_metrics(std::vector<std::size_t>{}), DataError);
  EXPECT_THROW(compute_metrics(std::vector<std::size_t>{0}), DataError);
  EXPECT_THROW(compute_metrics(std::vector<std::size_t>{1}, std::vector<int>{0}), ConfigError);
}
