#include <chrono>
#include <numeric>

#include <gtest/gtest.h>

#include "recgen/error.hpp"
#include "recgen/fsq.hpp"

using namespace recgen;

namespace {

// Horner evaluation with digit 0 most significant, written independently of
// the library codec.
std::int64_t oracle_encode(const std::vector<int>& digits, const std::vector<int>& levels) {
  std::int64_t token = 0;
  for (std::size_t j = 0; j < levels.size(); ++j) token = token * levels[j] + digits[j];
  return token;
}

}  // namespace

TEST(Codec, CodebookSizes) {
  EXPECT_EQ(FsqConfig::full_profile().codebook_size(), 15360);
  EXPECT_EQ(FsqConfig::desk_profile().codebook_size(), 576);
  EXPECT_EQ((FsqConfig{2, 8, {3, 2}}).codebook_size(), 6);
}

TEST(Codec, KnownTokens) {
  const auto cfg = FsqConfig::full_profile();
  // 1*1920 + 2*240 + 3*30 + 4*5 + 0
  EXPECT_EQ(digits_to_token(std::vector<int>{1, 2, 3, 4, 0}, cfg), 2510);
  EXPECT_EQ(digits_to_token(std::vector<int>{0, 0, 0, 0, 1}, cfg), 1);
  EXPECT_EQ(digits_to_token(std::vector<int>{7, 7, 7, 5, 4}, cfg), 15359);
  EXPECT_EQ(token_to_digits(2510, cfg), (QuantizedDigits{1, 2, 3, 4, 0}));
}

TEST(Codec, ExhaustiveRoundTripPaperLevels) {
  const auto cfg = FsqConfig::full_profile();
  const auto start = std::chrono::steady_clock::now();
  std::size_t mismatches = 0;
  for (std::int64_t t = 0; t < cfg.codebook_size(); ++t) {
    const auto digits = token_to_digits(t, cfg);
    if (digits_to_token(digits, cfg) != t || oracle_encode(digits, cfg.levels) != t) ++mismatches;
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_EQ(mismatches, 0u);
  EXPECT_LT(seconds, 1.0);
}

TEST(Codec, ExhaustiveRoundTripOddLevels) {
  const FsqConfig cfg{1, 4, {2, 7, 3, 5}};
  std::vector<int> digits(4, 0);
  for (digits[0] = 0; digits[0] < 2; ++digits[0])
    for (digits[1] = 0; digits[1] < 7; ++digits[1])
      for (digits[2] = 0; digits[2] < 3; ++digits[2])
        for (digits[3] = 0; digits[3] < 5; ++digits[3]) {
          const auto t = digits_to_token(digits, cfg);
          EXPECT_EQ(t, oracle_encode(digits, cfg.levels));
          EXPECT_EQ(token_to_digits(t, cfg), digits);
        }
}

TEST(Codec, RejectsOutOfRange) {
  const auto cfg = FsqConfig::full_profile();
  EXPECT_THROW(token_to_digits(-1, cfg), ConfigError);
  EXPECT_THROW(token_to_digits(15360, cfg), ConfigError);
  EXPECT_THROW(digits_to_token(std::vector<int>{8, 0, 0, 0, 0}, cfg), ConfigError);
  EXPECT_THROW(digits_to_token(std::vector<int>{0, 0, 0, -1, 0}, cfg), ConfigError);
  EXPECT_THROW(digits_to_token(std::vector<int>{0, 0, 0, 0}, cfg), ConfigError);
}

TEST(Codec, RoundHalfAwayFromZero) {
  EXPECT_EQ(round_half_away(3.5), 4);
  EXPECT_EQ(round_half_away(2.5), 3);
  EXPECT_EQ(round_half_away(-2.5), -3);
  EXPECT_EQ(round_half_away(0.4999), 0);
  EXPECT_EQ(round_half_away(6.999), 7);
}

TEST(Codec, PartitionIsContiguous) {
  const FsqConfig cfg{4, 8, {3, 3}};
  std::vector<double> e(8);
  std::iota(e.begin(), e.end(), 0.0);
  const auto parts = partition(e, cfg);
  ASSERT_EQ(parts.size(), 4u);
  EXPECT_EQ(parts[0], (std::vector<double>{0, 1}));
  EXPECT_EQ(parts[3], (std::vector<double>{6, 7}));
  EXPECT_THROW(partition(std::vector<double>(7), cfg), Error);
}

TEST(Codec, ConfigValidation) {
  EXPECT_THROW((FsqConfig{3, 64, {8, 8}}).validate(), ConfigError);
  EXPECT_THROW((FsqConfig{4, 64, {8, 1}}).validate(), ConfigError);
  EXPECT_THROW((FsqConfig{4, 64, {}}).validate(), ConfigError);
  EXPECT_THROW((FsqConfig{0, 64, {8}}).validate(), ConfigError);
  EXPECT_NO_THROW(FsqConfig::full_profile().validate());
}
