#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "recgen/dataset.hpp"
#include "recgen/embedding.hpp"

namespace recgen {

// Multi-domain corpus whose next-item structure lives at the level of shared
// "concepts". Every domain has its own items, but an item's text is built
// from its concept's phrase, so items of one concept embed close together
// in every domain, and user sequences in every domain follow the same
// concept-level Markov chain.
struct SyntheticSpec {
  std::vector<std::string> domains{"alpha", "beta"};
  int items_per_domain = 500;
  int users_per_domain = 2000;
  int min_length = 4;
  int max_length = 10;
  int num_concepts = 25;
  int successors_per_concept = 2;
  int words_per_concept = 3;
  std::size_t embedding_dim = 64;
  std::uint64_t seed = 7;
  std::uint64_t embedding_seed = 11;

  void validate() const;
};

struct SyntheticItem {
  std::string item_id;
  std::string text;
  std::string domain;
  int concept_id = 0;
};

struct SyntheticCorpus {
  std::vector<SyntheticItem> items;
  EmbeddingCatalog embeddings{1};
  std::vector<InteractionDataset> datasets;  // one per domain, in domain order
  // transitions[c][d] = P(next concept d | concept c); rows sum to 1.
  std::vector<std::vector<double>> transitions;
  std::vector<std::string> concept_phrases;

  const InteractionDataset& dataset(const std::string& domain) const;
  // Items and embeddings of one domain only.
  EmbeddingCatalog domain_embeddings(const std::string& domain) const;
  int concept_of(const std::string& item_id) const;
};

SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec);

// Row-wise frequencies of consecutive concept pairs in `data`; rows with no
// observations stay zero. Also returns the observation count per row.
std::vector<std::vector<double>> empirical_transitions(const SyntheticCorpus& corpus, const InteractionDataset& data,
                                                       std::vector<std::size_t>* row_counts = nullptr);

// Entropy in nats of the generator's next-item distribution, averaged over
// the stationary concept mix of `data`: for each observed transition the
// conditional entropy of the next concept plus log(items in that concept).
double next_item_entropy(const SyntheticCorpus& corpus, const InteractionDataset& data);

// Item text file: `item_id text...` per line.
struct ItemText {
  std::string item_id;
  std::string text;
};
std::vector<ItemText> read_item_texts(std::istream& in);
std::vector<ItemText> load_item_texts(const std::filesystem::path& path);
void write_item_texts(const std::filesystem::path& path, const std::vector<ItemText>& texts);

}  // namespace recgen
