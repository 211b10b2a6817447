#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "recgen/dataset.hpp"
#include "recgen/error.hpp"
#include "support/fixtures.hpp"

using namespace recgen;
using namespace recgen::testing;

namespace {

InteractionDataset numbered(std::size_t n) {
  InteractionDataset d;
  for (std::size_t i = 0; i < n; ++i) d.sequences.push_back({"u" + std::to_string(i), {"a", "b"}});
  return d;
}

}  // namespace

TEST(Dataset, ParseAndWriteRoundTrip) {
  std::stringstream in("u1 a b c\n\nu2 c a\n");
  const auto d = read_dataset(in, "books");
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.sequences[0].items, (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(d.domain_tag, "books");
  std::stringstream out;
  write_dataset(out, d);
  EXPECT_EQ(out.str(), "u1 a b c\nu2 c a\n");
}

TEST(Dataset, ShortSequencesAreRejected) {
  std::stringstream in("u1 a b\nu2 a\n");
  try {
    read_dataset(in);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("u2"), std::string::npos);
  }
}

TEST(Dataset, UnknownItemsAreNamed) {
  EmbeddingCatalog catalog(2);
  catalog.add({"a", {1, 0}});
  InteractionDataset d;
  d.sequences.push_back({"u1", {"a", "ghost"}});
  try {
    check_items_known(d, catalog);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos);
  }
}

TEST(Dataset, SplitSizesAndDisjointness) {
  for (std::size_t n : {2u, 3u, 9u, 10u, 11u, 101u}) {
    const auto d = numbered(n);
    const auto [train, test] = split_dataset(d, SplitSpec{0.9, 5});
    std::size_t expected = static_cast<std::size_t>(std::floor(0.9 * static_cast<double>(n)));
    expected = std::clamp<std::size_t>(expected, 1, n - 1);
    EXPECT_EQ(train.size(), expected);
    EXPECT_EQ(train.size() + test.size(), n);
    std::set<std::string> ids;
    for (const auto& s : train.sequences) ids.insert(s.user_id);
    for (const auto& s : test.sequences) EXPECT_FALSE(ids.contains(s.user_id));
  }
  const auto d = numbered(50);
  const auto a = split_dataset(d, SplitSpec{0.9, 5});
  const auto b = split_dataset(d, SplitSpec{0.9, 5});
  const auto c = split_dataset(d, SplitSpec{0.9, 6});
  EXPECT_EQ(a.second.sequences, b.second.sequences);
  EXPECT_NE(a.second.sequences, c.second.sequences);
  EXPECT_THROW(split_dataset(numbered(1), SplitSpec{}), DataError);
  EXPECT_THROW(split_dataset(d, SplitSpec{1.0, 1}), ConfigError);
}

TEST(Dataset, LookupBuildsModelInputs) {
  EmbeddingCatalog catalog(4);
  catalog.add({"a", {1, 2, 3, 4}});
  catalog.add({"b", {5, 6, 7, 8}});
  const std::vector<ItemTokenSequence> tokens{{"a", {1, 2}}, {"b", {3, 4}}};
  const ItemLookup lookup(catalog, tokens);
  const std::vector<std::string> ids{"b", "a"};
  const auto seq = lookup.sequence(ids);
  ASSERT_EQ(seq.size(), 2u);
  EXPECT_EQ(seq.items[0].tokens, (std::vector<std::int32_t>{3, 4}));
  EXPECT_EQ(seq.items[1].features, (std::vector<double>{1, 2, 3, 4}));
  EXPECT_THROW(lookup.item("c"), DataError);
  InteractionDataset d;
  d.sequences.push_back({"u", {"a", "b", "a"}});
  EXPECT_EQ(tokenize_dataset(d, lookup).front().size(), 3u);
  const std::vector<ItemTokenSequence> orphan{{"zz", {0, 0}}};
  EXPECT_THROW(ItemLookup(catalog, orphan), DataError);
}
