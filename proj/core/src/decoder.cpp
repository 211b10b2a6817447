#include "recgen/decoder.hpp"

#include <algorithm>
#include <iomanip>
#include <limits>
#include <ostream>

#include "recgen/error.hpp"

namespace recgen {

CatalogTrie::CatalogTrie(std::span<const ItemTokenSequence> catalog, int num_slots) : depth_(num_slots) {
  if (num_slots <= 0) throw ConfigError("trie depth must be positive");
  nodes_.emplace_back();
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    const auto& entry = catalog[i];
    if (static_cast<int>(entry.tokens.size()) != num_slots) {
      throw DataError("item '" + entry.item_id + "' has " + std::to_string(entry.tokens.size()) +
                      " tokens, trie depth is " + std::to_string(num_slots));
    }
    if (item_leaf_.contains(entry.item_id)) throw DataError("duplicate item '" + entry.item_id + "' in token catalog");
    std::int32_t current = root();
    for (auto token : entry.tokens) {
      auto& children = nodes_[static_cast<std::size_t>(current)].children;
      auto it = std::lower_bound(children.begin(), children.end(), token,
                                 [](const auto& edge, std::int32_t t) { return edge.first < t; });
      if (it != children.end() && it->first == token) {
        current = it->second;
      } else {
        const auto next = static_cast<std::int32_t>(nodes_.size());
        children.insert(it, {token, next});
        nodes_.emplace_back();
        current = next;
      }
    }
    nodes_[static_cast<std::size_t>(current)].items.push_back(entry.item_id);
    item_leaf_.emplace(entry.item_id, -1);
    ++item_count_;
  }

  // Collect leaves in lexicographic order and index items by leaf.
  std::vector<std::int32_t> prefix;
  auto visit = [&](auto&& self, std::int32_t index) -> void {
    auto& n = nodes_[static_cast<std::size_t>(index)];
    if (static_cast<int>(prefix.size()) == depth_) {
      std::sort(n.items.begin(), n.items.end());
      const auto leaf = static_cast<std::int32_t>(leaves_.size());
      for (const auto& id : n.items) item_leaf_[id] = leaf;
      leaves_.push_back(Leaf{index, prefix});
      return;
    }
    for (const auto& [token, child] : n.children) {
      prefix.push_back(token);
      self(self, child);
      prefix.pop_back();
    }
  };
  if (item_count_ > 0) visit(visit, root());
}

std::int32_t CatalogTrie::leaf_of(std::string_view item_id) const {
  auto it = item_leaf_.find(std::string(item_id));
  return it == item_leaf_.end() ? -1 : it->second;
}

std::int32_t CatalogTrie::find(std::span<const std::int32_t> prefix) const {
  std::int32_t current = root();
  for (auto token : prefix) {
    const auto& children = node(current).children;
    auto it = std::lower_bound(children.begin(), children.end(), token,
                               [](const auto& edge, std::int32_t t) { return edge.first < t; });
    if (it == children.end() || it->first != token) return -1;
    current = it->second;
  }
  return current;
}

namespace {

struct Hypothesis {
  double score;
  std::int32_t node;
  std::vector<std::int32_t> prefix;
};

bool better(double score_a, std::span<const std::int32_t> a, double score_b, std::span<const std::int32_t> b) {
  if (score_a != score_b) return score_a > score_b;
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

void check_distribution(const NextItemDistribution& dist, const CatalogTrie& trie) {
  if (dist.num_slots() != trie.depth()) {
    throw ConfigError("distribution has " + std::to_string(dist.num_slots()) + " slots, trie depth is " +
                      std::to_string(trie.depth()));
  }
}

double leaf_score(const NextItemDistribution& dist, std::span<const std::int32_t> tokens) {
  double score = 0.0;
  for (std::size_t k = 0; k < tokens.size(); ++k) score += dist.log_prob(static_cast<int>(k), tokens[k]);
  return score;
}

}  // namespace

RankedRecommendations constrained_beam_search(const NextItemDistribution& dist, const CatalogTrie& trie,
                                              int beam_width, int n, BeamStats* stats) {
  if (beam_width <= 0) throw ConfigError("beam width must be positive");
  check_distribution(dist, trie);
  RankedRecommendations out;
  if (n <= 0 || trie.item_count() == 0) return out;

  BeamStats local;
  BeamStats& st = stats ? *stats : local;
  st = BeamStats{};

  std::vector<Hypothesis> beam{Hypothesis{0.0, CatalogTrie::root(), {}}};
  std::vector<Hypothesis> candidates;
  struct Edge {
    double score;
    std::int32_t token;
    std::int32_t child;
  };
  std::vector<Edge> edges;
  const auto width = static_cast<std::size_t>(beam_width);

  for (int depth = 0; depth < trie.depth(); ++depth) {
    candidates.clear();
    for (const auto& hyp : beam) {
      const auto& children = trie.node(hyp.node).children;
      st.max_branching = std::max(st.max_branching, children.size());
      st.node_expansions += children.size();
      edges.clear();
      for (const auto& [token, child] : children) {
        edges.push_back(Edge{hyp.score + dist.log_prob(depth, token), token, child});
      }
      // Only this hypothesis's best `width` children can survive the cut.
      const auto keep = std::min(width, edges.size());
      std::partial_sort(edges.begin(), edges.begin() + static_cast<std::ptrdiff_t>(keep), edges.end(),
                        [](const Edge& a, const Edge& b) {
                          return a.score != b.score ? a.score > b.score : a.token < b.token;
                        });
      for (std::size_t i = 0; i < keep; ++i) {
        Hypothesis next{edges[i].score, edges[i].child, hyp.prefix};
        next.prefix.push_back(edges[i].token);
        candidates.push_back(std::move(next));
      }
    }
    const auto keep = std::min(width, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      [](const Hypothesis& a, const Hypothesis& b) {
                        return better(a.score, a.prefix, b.score, b.prefix);
                      });
    candidates.resize(keep);
    beam.swap(candidates);
  }

  for (const auto& hyp : beam) {
    for (const auto& id : trie.node(hyp.node).items) {
      if (static_cast<int>(out.size()) == n) return out;
      out.push_back(RankedItem{id, hyp.score, hyp.prefix});
    }
  }
  return out;
}

RankedRecommendations decode_topn(const TokenizedSequence& history, const SequenceModel& model,
                                  const CatalogTrie& trie, int beam_width, int n) {
  if (model.config().num_slots != trie.depth()) {
    throw ConfigError("model K and trie depth disagree");
  }
  return constrained_beam_search(model.predict_next_item(history), trie, beam_width, n);
}

std::size_t rank_in_catalog(const NextItemDistribution& dist, const CatalogTrie& trie, std::string_view item_id) {
  check_distribution(dist, trie);
  const auto target_leaf = trie.leaf_of(item_id);
  if (target_leaf < 0) throw DataError("item '" + std::string(item_id) + "' is not in the catalog");
  const auto& leaves = trie.leaves();
  const auto& target = leaves[static_cast<std::size_t>(target_leaf)];
  const double target_score = leaf_score(dist, target.tokens);

  std::size_t rank = 1;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    if (static_cast<std::int32_t>(i) == target_leaf) continue;
    const double s = leaf_score(dist, leaves[i].tokens);
    // Leaves are stored in lexicographic order, so index order is token order.
    if (s > target_score || (s == target_score && static_cast<std::int32_t>(i) < target_leaf)) {
      rank += trie.node(leaves[i].node).items.size();
    }
  }
  const auto& siblings = trie.node(target.node).items;
  rank += static_cast<std::size_t>(std::lower_bound(siblings.begin(), siblings.end(), item_id) - siblings.begin());
  return rank;
}

std::size_t rank_of_item(const TokenizedSequence& history, const SequenceModel& model, const CatalogTrie& trie,
                         std::string_view item_id) {
  return rank_in_catalog(model.predict_next_item(history), trie, item_id);
}

void write_recommendations(std::ostream& out, const RankedRecommendations& recs) {
  const auto old = out.precision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    out << (i + 1) << ' ' << recs[i].item_id << ' ' << recs[i].log_score << '\n';
  }
  out.precision(old);
}

}  // namespace recgen
