#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "recgen/embedding.hpp"
#include "recgen/fsq.hpp"
#include "recgen/seq_model.hpp"

namespace recgen {

struct UserSequence {
  std::string user_id;
  std::vector<std::string> items;  // chronological

  bool operator==(const UserSequence&) const = default;
};

struct InteractionDataset {
  std::vector<UserSequence> sequences;
  std::string domain_tag;

  std::size_t size() const { return sequences.size(); }
  bool empty() const { return sequences.empty(); }
};

// Dataset file: one `user_id item_1 item_2 ...` line per user, items in
// timestamp order. Sequences shorter than two items are rejected.
InteractionDataset read_dataset(std::istream& in, std::string domain_tag = {});
InteractionDataset load_dataset(const std::filesystem::path& path, std::string domain_tag = {});
void write_dataset(std::ostream& out, const InteractionDataset& data);
void write_dataset(const std::filesystem::path& path, const InteractionDataset& data);

// Throws DataError naming the first sequence/item not present in `catalog`.
void check_items_known(const InteractionDataset& data, const EmbeddingCatalog& catalog);

struct SplitSpec {
  double train_fraction = 0.9;
  std::uint64_t seed = 1;
};

/// Sequence-level split after a seeded shuffle. The training side receives
/// floor(train_fraction * n) sequences, clamped to [1, n-1] so neither side
/// is empty.
std::pair<InteractionDataset, InteractionDataset> split_dataset(const InteractionDataset& data,
                                                                const SplitSpec& spec);

// Token + feature lookup for turning item-id sequences into model inputs.
class ItemLookup {
 public:
  ItemLookup(const EmbeddingCatalog& embeddings, std::span<const ItemTokenSequence> tokens);

  const TokenizedItem& item(const std::string& item_id) const;
  bool contains(const std::string& item_id) const { return index_.contains(item_id); }

  TokenizedSequence sequence(std::span<const std::string> item_ids) const;

 private:
  std::vector<TokenizedItem> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

std::vector<TokenizedSequence> tokenize_dataset(const InteractionDataset& data, const ItemLookup& lookup);

}  // namespace recgen
