#include <iostream>

#include <gtest/gtest.h>

#include "support/validity.hpp"

namespace {

class CatalogValidity : public ::testing::Environment {
 public:
  void TearDown() override {
    const auto counts = recgen::testing::validity_counts();
    if (counts.decoded > 0) {
      std::cout << "decoded recommendations: " << counts.decoded << ", outside catalog: " << counts.invalid << '\n';
    }
    EXPECT_EQ(counts.invalid, 0u);
  }
};

}  // namespace

int main(int argc, char** argv) {
  ::testing::InitGoogleTest(&argc, argv);
  ::testing::AddGlobalTestEnvironment(new CatalogValidity);
  return RUN_ALL_TESTS();
}
