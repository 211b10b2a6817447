#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "recgen/dataset.hpp"
#include "recgen/decoder.hpp"
#include "recgen/embedding.hpp"
#include "recgen/fsq.hpp"
#include "recgen/seq_model.hpp"

namespace recgen {

inline const std::vector<int> kDefaultCutoffs{1, 3, 5, 10};

struct MetricsReport {
  std::map<int, double> hit;
  std::map<int, double> ndcg;
  std::size_t n_cases = 0;
  std::string protocol;
};

// Hit@N = share of ranks <= N; NDCG@N = mean of 1/log2(rank+1) for ranks
// <= N (single relevant item). Ranks are 1-based.
MetricsReport compute_metrics(std::span<const std::size_t> ranks, std::span<const int> cutoffs = kDefaultCutoffs,
                              std::string protocol = {});

// A frozen codebook applied to a target catalog: token sequences, the trie
// over them, and the lookup used to build model inputs.
class TargetCatalog {
 public:
  TargetCatalog(const FsqCodebook& codebook, const EmbeddingCatalog& embeddings);

  const std::vector<ItemTokenSequence>& tokens() const { return tokens_; }
  const CatalogTrie& trie() const { return trie_; }
  const ItemLookup& lookup() const { return lookup_; }

 private:
  std::vector<ItemTokenSequence> tokens_;
  CatalogTrie trie_;
  ItemLookup lookup_;
};

// One ranking query: the history items and the held-out next item.
struct EvalCase {
  std::span<const std::string> history;
  std::string target;
};

struct EvalOptions {
  std::vector<int> cutoffs = kDefaultCutoffs;
  unsigned threads = 1;
};

struct EvaluationResult {
  MetricsReport report;
  std::vector<std::size_t> ranks;
};

// Full-catalog ranks for every case. Cases are independent and may be
// processed on several threads; results are stored by case index.
std::vector<std::size_t> rank_cases(const SequenceModel& model, const TargetCatalog& catalog,
                                    std::span<const EvalCase> cases, unsigned threads);

void check_compatible(const SequenceModel& model, const FsqCodebook& codebook);

// Every sequence contributes one case: all but the last item as history,
// the last item as target.
EvaluationResult evaluate_zero_shot(const SequenceModel& model, const FsqCodebook& codebook,
                                    const EmbeddingCatalog& target_items, const InteractionDataset& target,
                                    const EvalOptions& options = {});

// Per sequence, a seeded uniform prefix length in {1,2,3}, capped at
// length-1; the target is the item right after the prefix.
std::vector<std::size_t> cold_start_prefix_lengths(const InteractionDataset& data, std::uint64_t seed);

EvaluationResult evaluate_cold_start(const SequenceModel& model, const FsqCodebook& codebook,
                                     const EmbeddingCatalog& target_items, const InteractionDataset& target,
                                     std::uint64_t seed, const EvalOptions& options = {});

}  // namespace recgen
