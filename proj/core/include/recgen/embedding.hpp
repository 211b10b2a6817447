#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace recgen {

// Continuous semantic vector for one item.
struct ItemEmbedding {
  std::string item_id;
  std::vector<double> vector;
};

// Ordered, id-unique set of equally sized embeddings. Immutable once
// populated; concurrent reads are safe.
class EmbeddingCatalog {
 public:
  explicit EmbeddingCatalog(std::size_t dim);

  // Throws DataError on dimension mismatch, duplicate id or non-finite value.
  void add(ItemEmbedding embedding);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<ItemEmbedding>& entries() const { return entries_; }
  const ItemEmbedding& operator[](std::size_t i) const { return entries_[i]; }

  // nullptr when the id is unknown.
  const ItemEmbedding* find(std::string_view item_id) const;

  bool operator==(const EmbeddingCatalog& other) const;

 private:
  std::size_t dim_;
  std::vector<ItemEmbedding> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class EmbeddingFormat { kText, kBinary };

// ".bin" selects the binary form; anything else is read as text.
EmbeddingFormat embedding_format_for(const std::filesystem::path& path);

// Parses an embedding file. When expected_dim is set, the header's d_L must
// match it. Errors name the 1-based item row they occur on.
EmbeddingCatalog read_embeddings(std::istream& in, EmbeddingFormat format,
                                 std::optional<std::size_t> expected_dim);
EmbeddingCatalog load_embeddings(const std::filesystem::path& path,
                                 std::optional<std::size_t> expected_dim = std::nullopt);

void write_embeddings(std::ostream& out, const EmbeddingCatalog& catalog, EmbeddingFormat format);
void write_embeddings(const std::filesystem::path& path, const EmbeddingCatalog& catalog);

/// Deterministic text embedder standing in for a trained sentence encoder.
///
/// Character 3-grams of the padded text are hashed (with a hashed sign) into
/// `dim` buckets and the result is L2-normalised. Texts that share more
/// n-grams therefore have higher cosine similarity. The item id is carried
/// through as a label and does not influence the vector.
ItemEmbedding stub_embed(std::string_view item_id, std::string_view text, std::size_t dim,
                         std::uint64_t seed);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace recgen
