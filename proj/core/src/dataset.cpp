#include "recgen/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "recgen/error.hpp"
#include "recgen/rng.hpp"

namespace recgen {

InteractionDataset read_dataset(std::istream& in, std::string domain_tag) {
  InteractionDataset data;
  data.domain_tag = std::move(domain_tag);
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    UserSequence seq;
    if (!(fields >> seq.user_id)) continue;
    ++row;
    std::string item;
    while (fields >> item) seq.items.push_back(std::move(item));
    if (seq.items.size() < 2) {
      throw DataError("sequence of user '" + seq.user_id + "' (row " + std::to_string(row) +
                      ") has fewer than two items");
    }
    data.sequences.push_back(std::move(seq));
  }
  return data;
}

InteractionDataset load_dataset(const std::filesystem::path& path, std::string domain_tag) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file '" + path.string() + "'");
  if (domain_tag.empty()) domain_tag = path.stem().string();
  try {
    return read_dataset(in, std::move(domain_tag));
  } catch (const DataError& err) {
    throw DataError(path.string() + ": " + err.what());
  }
}

void write_dataset(std::ostream& out, const InteractionDataset& data) {
  for (const auto& seq : data.sequences) {
    out << seq.user_id;
    for (const auto& item : seq.items) out << ' ' << item;
    out << '\n';
  }
}

void write_dataset(const std::filesystem::path& path, const InteractionDataset& data) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot create dataset file '" + path.string() + "'");
  write_dataset(out, data);
}

void check_items_known(const InteractionDataset& data, const EmbeddingCatalog& catalog) {
  for (const auto& seq : data.sequences) {
    for (const auto& item : seq.items) {
      if (!catalog.find(item)) {
        throw DataError("sequence of user '" + seq.user_id + "' references unknown item '" + item + "'");
      }
    }
  }
}

std::pair<InteractionDataset, InteractionDataset> split_dataset(const InteractionDataset& data,
                                                                const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw ConfigError("train fraction must lie in (0, 1)");
  }
  if (data.size() < 2) throw DataError("split_dataset: need at least two sequences");
  const std::size_t n = data.size();
  auto n_train = static_cast<std::size_t>(std::floor(spec.train_fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(spec.seed, 0x5b1));
  shuffle(std::span(order), rng);

  InteractionDataset train{{}, data.domain_tag};
  InteractionDataset test{{}, data.domain_tag};
  for (std::size_t i = 0; i < n; ++i) {
    (i < n_train ? train : test).sequences.push_back(data.sequences[order[i]]);
  }
  return {std::move(train), std::move(test)};
}

ItemLookup::ItemLookup(const EmbeddingCatalog& embeddings, std::span<const ItemTokenSequence> tokens) {
  items_.reserve(tokens.size());
  for (const auto& t : tokens) {
    const auto* e = embeddings.find(t.item_id);
    if (!e) throw DataError("item '" + t.item_id + "' has tokens but no embedding");
    index_.emplace(t.item_id, items_.size());
    items_.push_back(TokenizedItem{t.tokens, e->vector});
  }
}

const TokenizedItem& ItemLookup::item(const std::string& item_id) const {
  auto it = index_.find(item_id);
  if (it == index_.end()) throw DataError("unknown item '" + item_id + "'");
  return items_[it->second];
}

TokenizedSequence ItemLookup::sequence(std::span<const std::string> item_ids) const {
  TokenizedSequence seq;
  seq.items.reserve(item_ids.size());
  for (const auto& id : item_ids) seq.items.push_back(item(id));
  return seq;
}

std::vector<TokenizedSequence> tokenize_dataset(const InteractionDataset& data, const ItemLookup& lookup) {
  std::vector<TokenizedSequence> out;
  out.reserve(data.size());
  for (const auto& seq : data.sequences) {
    for (const auto& id : seq.items) {
      if (!lookup.contains(id)) {
        throw DataError("sequence of user '" + seq.user_id + "' references unknown item '" + id + "'");
      }
    }
    out.push_back(lookup.sequence(seq.items));
  }
  return out;
}

}  // namespace recgen
