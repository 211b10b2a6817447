#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "recgen/fsq.hpp"
#include "recgen/seq_model.hpp"

namespace recgen {

// Depth-K prefix tree over the catalog's token sequences. Leaves hold every
// item that maps to the leaf's sequence, sorted by item id.
class CatalogTrie {
 public:
  struct Node {
    // (token, child node index), sorted by token.
    std::vector<std::pair<std::int32_t, std::int32_t>> children;
    std::vector<std::string> items;
  };

  struct Leaf {
    std::int32_t node = 0;
    std::vector<std::int32_t> tokens;
  };

  CatalogTrie(std::span<const ItemTokenSequence> catalog, int num_slots);

  int depth() const { return depth_; }
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t item_count() const { return item_count_; }
  std::size_t leaf_count() const { return leaves_.size(); }

  const Node& node(std::int32_t index) const { return nodes_[static_cast<std::size_t>(index)]; }
  static constexpr std::int32_t root() { return 0; }
  // Leaves in lexicographic token order.
  const std::vector<Leaf>& leaves() const { return leaves_; }

  // Leaf index of an item, or -1.
  std::int32_t leaf_of(std::string_view item_id) const;
  bool contains(std::string_view item_id) const { return leaf_of(item_id) >= 0; }
  // Node reached by following `prefix`, or -1.
  std::int32_t find(std::span<const std::int32_t> prefix) const;

 private:
  int depth_;
  std::size_t item_count_ = 0;
  std::vector<Node> nodes_;
  std::vector<Leaf> leaves_;
  std::unordered_map<std::string, std::int32_t> item_leaf_;
};

struct RankedItem {
  std::string item_id;
  double log_score = 0.0;
  std::vector<std::int32_t> tokens;

  bool operator==(const RankedItem&) const = default;
};

using RankedRecommendations = std::vector<RankedItem>;

struct BeamStats {
  std::size_t node_expansions = 0;  // child edges scored
  std::size_t max_branching = 0;
};

/// Trie-constrained beam search over K independent slot distributions.
///
/// At depth d every live hypothesis is extended only along its trie
/// children; the beam_width best prefixes survive. Ordering is by score
/// (sum of slot log-probabilities, highest first), then by token sequence
/// (lexicographically smaller first), then by item id. Items that share a
/// leaf are emitted consecutively. At most n entries are returned.
RankedRecommendations constrained_beam_search(const NextItemDistribution& dist, const CatalogTrie& trie,
                                              int beam_width, int n, BeamStats* stats = nullptr);

RankedRecommendations decode_topn(const TokenizedSequence& history, const SequenceModel& model,
                                  const CatalogTrie& trie, int beam_width, int n);

// 1-based rank of `item_id` when every catalog sequence is scored exactly,
// under the same total order as constrained_beam_search. Throws DataError
// for unknown items.
std::size_t rank_in_catalog(const NextItemDistribution& dist, const CatalogTrie& trie,
                            std::string_view item_id);
std::size_t rank_of_item(const TokenizedSequence& history, const SequenceModel& model,
                         const CatalogTrie& trie, std::string_view item_id);

// `rank item_id log_score` per line.
void write_recommendations(std::ostream& out, const RankedRecommendations& recs);

}  // namespace recgen
