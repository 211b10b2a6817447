#include "recgen/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "recgen/error.hpp"
#include "recgen/rng.hpp"

namespace recgen {

void SyntheticSpec::validate() const {
  if (domains.empty()) throw ConfigError("synthetic corpus needs at least one domain");
  std::unordered_set<std::string> seen;
  for (const auto& d : domains) {
    if (d.empty() || d.find_first_of(" \t\n") != std::string::npos) {
      throw ConfigError("domain names must be non-empty and free of whitespace");
    }
    if (!seen.insert(d).second) throw ConfigError("duplicate domain '" + d + "'");
  }
  if (num_concepts <= 0) throw ConfigError("synthetic corpus needs at least one concept");
  if (items_per_domain < num_concepts) throw ConfigError("need at least one item per concept in every domain");
  if (users_per_domain <= 0) throw ConfigError("users_per_domain must be positive");
  if (min_length < 2 || max_length < min_length) throw ConfigError("sequence lengths must satisfy 2 <= min <= max");
  if (successors_per_concept <= 0 || successors_per_concept > num_concepts) {
    throw ConfigError("successors_per_concept must lie in [1, num_concepts]");
  }
  if (words_per_concept <= 0) throw ConfigError("words_per_concept must be positive");
  if (embedding_dim == 0) throw ConfigError("embedding dimension must be positive");
}

namespace {

constexpr std::string_view kConsonants = "bcdfghjklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

std::string make_word(Rng& rng, int syllables) {
  std::string w;
  for (int s = 0; s < syllables; ++s) {
    w += kConsonants[uniform_below(rng, kConsonants.size())];
    w += kVowels[uniform_below(rng, kVowels.size())];
  }
  return w;
}

std::string unique_word(Rng& rng, int syllables, std::unordered_set<std::string>& used) {
  for (;;) {
    auto w = make_word(rng, syllables);
    if (used.insert(w).second) return w;
  }
}

}  // namespace

const InteractionDataset& SyntheticCorpus::dataset(const std::string& domain) const {
  for (const auto& d : datasets) {
    if (d.domain_tag == domain) return d;
  }
  throw ConfigError("unknown domain '" + domain + "'");
}

EmbeddingCatalog SyntheticCorpus::domain_embeddings(const std::string& domain) const {
  EmbeddingCatalog out(embeddings.dim());
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].domain == domain) out.add(embeddings[i]);
  }
  if (out.empty()) throw ConfigError("unknown domain '" + domain + "'");
  return out;
}

int SyntheticCorpus::concept_of(const std::string& item_id) const {
  const auto* e = embeddings.find(item_id);
  if (!e) throw DataError("unknown item '" + item_id + "'");
  return items[static_cast<std::size_t>(e - embeddings.entries().data())].concept_id;
}

SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticCorpus corpus;
  corpus.embeddings = EmbeddingCatalog(spec.embedding_dim);
  const auto n_concepts = static_cast<std::size_t>(spec.num_concepts);

  Rng text_rng(mix_seed(spec.seed, 1));
  std::unordered_set<std::string> used_words(spec.domains.begin(), spec.domains.end());
  for (std::size_t c = 0; c < n_concepts; ++c) {
    std::string phrase;
    for (int w = 0; w < spec.words_per_concept; ++w) {
      if (w) phrase += ' ';
      phrase += unique_word(text_rng, 3, used_words);
    }
    corpus.concept_phrases.push_back(std::move(phrase));
  }

  // Each concept moves to a few distinct successors with random weights.
  Rng chain_rng(mix_seed(spec.seed, 2));
  corpus.transitions.assign(n_concepts, std::vector<double>(n_concepts, 0.0));
  for (std::size_t c = 0; c < n_concepts; ++c) {
    std::vector<std::size_t> order(n_concepts);
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(std::span(order), chain_rng);
    double total = 0.0;
    for (int s = 0; s < spec.successors_per_concept; ++s) {
      const double w = 0.5 + uniform01(chain_rng);
      corpus.transitions[c][order[static_cast<std::size_t>(s)]] = w;
      total += w;
    }
    for (auto& p : corpus.transitions[c]) p /= total;
  }

  // items_by_concept[domain][concept] -> item indices into corpus.items
  std::vector<std::vector<std::vector<std::size_t>>> items_by_concept(spec.domains.size(),
                                                                      std::vector<std::vector<std::size_t>>(n_concepts));
  for (std::size_t d = 0; d < spec.domains.size(); ++d) {
    const auto& domain = spec.domains[d];
    for (int i = 0; i < spec.items_per_domain; ++i) {
      const auto c = static_cast<std::size_t>(i % spec.num_concepts);
      SyntheticItem item;
      item.item_id = domain + "_" + std::to_string(i);
      item.domain = domain;
      item.concept_id = static_cast<int>(c);
      item.text = corpus.concept_phrases[c] + ' ' + unique_word(text_rng, 2, used_words);
      items_by_concept[d][c].push_back(corpus.items.size());
      corpus.embeddings.add(stub_embed(item.item_id, item.text, spec.embedding_dim, spec.embedding_seed));
      corpus.items.push_back(std::move(item));
    }
  }

  for (std::size_t d = 0; d < spec.domains.size(); ++d) {
    Rng rng(mix_seed(spec.seed, 100 + d));
    InteractionDataset data;
    data.domain_tag = spec.domains[d];
    const auto span = static_cast<std::uint64_t>(spec.max_length - spec.min_length + 1);
    for (int u = 0; u < spec.users_per_domain; ++u) {
      UserSequence seq;
      seq.user_id = spec.domains[d] + "_u" + std::to_string(u);
      const auto length = static_cast<std::size_t>(spec.min_length) + uniform_below(rng, span);
      auto c = static_cast<std::size_t>(uniform_below(rng, n_concepts));
      for (std::size_t t = 0; t < length; ++t) {
        if (t > 0) {
          const double r = uniform01(rng);
          double acc = 0.0;
          std::size_t next = n_concepts - 1;
          for (std::size_t j = 0; j < n_concepts; ++j) {
            acc += corpus.transitions[c][j];
            if (r < acc) {
              next = j;
              break;
            }
          }
          // Floating-point slack can leave r above the accumulated mass.
          if (corpus.transitions[c][next] == 0.0) {
            for (std::size_t j = n_concepts; j-- > 0;) {
              if (corpus.transitions[c][j] > 0.0) {
                next = j;
                break;
              }
            }
          }
          c = next;
        }
        const auto& pool = items_by_concept[d][c];
        seq.items.push_back(corpus.items[pool[uniform_below(rng, pool.size())]].item_id);
      }
      data.sequences.push_back(std::move(seq));
    }
    corpus.datasets.push_back(std::move(data));
  }
  return corpus;
}

std::vector<std::vector<double>> empirical_transitions(const SyntheticCorpus& corpus, const InteractionDataset& data,
                                                       std::vector<std::size_t>* row_counts) {
  const auto n = corpus.transitions.size();
  std::vector<std::vector<double>> freq(n, std::vector<double>(n, 0.0));
  std::vector<std::size_t> counts(n, 0);
  for (const auto& seq : data.sequences) {
    for (std::size_t t = 1; t < seq.items.size(); ++t) {
      const auto a = static_cast<std::size_t>(corpus.concept_of(seq.items[t - 1]));
      const auto b = static_cast<std::size_t>(corpus.concept_of(seq.items[t]));
      freq[a][b] += 1.0;
      ++counts[a];
    }
  }
  for (std::size_t a = 0; a < n; ++a) {
    if (counts[a] == 0) continue;
    for (auto& f : freq[a]) f /= static_cast<double>(counts[a]);
  }
  if (row_counts) *row_counts = std::move(counts);
  return freq;
}

double next_item_entropy(const SyntheticCorpus& corpus, const InteractionDataset& data) {
  const auto n = corpus.transitions.size();
  std::vector<double> pool_size(n, 0.0);
  for (const auto& item : corpus.items) {
    if (item.domain == data.domain_tag) pool_size[static_cast<std::size_t>(item.concept_id)] += 1.0;
  }
  std::vector<double> row_entropy(n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t d = 0; d < n; ++d) {
      const double p = corpus.transitions[c][d];
      if (p > 0.0) row_entropy[c] += -p * std::log(p) + p * std::log(pool_size[d]);
    }
  }
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& seq : data.sequences) {
    for (std::size_t t = 1; t < seq.items.size(); ++t) {
      total += row_entropy[static_cast<std::size_t>(corpus.concept_of(seq.items[t - 1]))];
      ++count;
    }
  }
  if (count == 0) throw DataError("next_item_entropy: no transitions");
  return total / static_cast<double>(count);
}

std::vector<ItemText> read_item_texts(std::istream& in) {
  std::vector<ItemText> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    const auto start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos) continue;
    const auto end_id = line.find_first_of(" \t", start);
    ItemText t;
    t.item_id = line.substr(start, end_id - start);
    if (end_id != std::string::npos) {
      const auto text_start = line.find_first_not_of(" \t", end_id);
      if (text_start != std::string::npos) t.text = line.substr(text_start);
    }
    while (!t.text.empty() && (t.text.back() == '\r' || t.text.back() == ' ')) t.text.pop_back();
    if (t.text.empty()) throw DataError("item text row " + std::to_string(row) + " ('" + t.item_id + "') has no text");
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<ItemText> load_item_texts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open item text file '" + path.string() + "'");
  try {
    return read_item_texts(in);
  } catch (const DataError& err) {
    throw DataError(path.string() + ": " + err.what());
  }
}

void write_item_texts(const std::filesystem::path& path, const std::vector<ItemText>& texts) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot create item text file '" + path.string() + "'");
  for (const auto& t : texts) out << t.item_id << ' ' << t.text << '\n';
}

}  // namespace recgen
