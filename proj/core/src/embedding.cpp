#include "recgen/embedding.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "recgen/binary_io.hpp"
#include "recgen/error.hpp"
#include "recgen/rng.hpp"

namespace recgen {

namespace {

constexpr std::string_view kBinaryMagic = "RGEB";

std::string row_label(std::size_t row) { return "row " + std::to_string(row); }

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view text, T& value) {
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  return ec == std::errc() && ptr == end;
}

bool is_blank(std::string_view line) { return split_ws(line).empty(); }

void check_header(std::size_t dim, std::optional<std::size_t> expected_dim) {
  if (dim == 0) throw DataError("embedding header: d_L must be positive");
  if (expected_dim && *expected_dim != dim) {
    throw DataError("dimension mismatch in header: file has d_L=" + std::to_string(dim) +
                    ", expected " + std::to_string(*expected_dim));
  }
}

EmbeddingCatalog read_text(std::istream& in, std::optional<std::size_t> expected_dim) {
  std::string line;
  while (std::getline(in, line) && is_blank(line)) {
  }
  const auto header = split_ws(line);
  std::size_t count = 0;
  std::size_t dim = 0;
  if (header.size() != 2 || !parse_number(header[0], count) || !parse_number(header[1], dim)) {
    throw DataError("malformed embedding header: expected 'count d_L'");
  }
  check_header(dim, expected_dim);

  EmbeddingCatalog catalog(dim);
  std::size_t row = 0;
  while (row < count && std::getline(in, line)) {
    if (is_blank(line)) continue;
    ++row;
    const auto fields = split_ws(line);
    const std::size_t values = fields.size() - 1;
    if (values != dim) {
      throw DataError("dimension mismatch at " + row_label(row) + ": expected " +
                      std::to_string(dim) + " values, found " + std::to_string(values));
    }
    ItemEmbedding e{std::string(fields[0]), std::vector<double>(dim)};
    for (std::size_t j = 0; j < dim; ++j) {
      if (!parse_number(fields[j + 1], e.vector[j])) {
        throw DataError("malformed value '" + std::string(fields[j + 1]) + "' at " +
                        row_label(row));
      }
    }
    try {
      catalog.add(std::move(e));
    } catch (const DataError& err) {
      throw DataError(std::string(err.what()) + " at " + row_label(row));
    }
  }
  if (row != count) {
    throw DataError("malformed embedding file: header promises " + std::to_string(count) +
                    " rows, found " + std::to_string(row));
  }
  while (std::getline(in, line)) {
    if (!is_blank(line)) throw DataError("malformed embedding file: trailing data after last row");
  }
  return catalog;
}

EmbeddingCatalog read_binary(std::istream& in, std::optional<std::size_t> expected_dim) {
  binary::expect_magic(in, kBinaryMagic, "binary embedding");
  const std::size_t count = binary::read_u32(in, "header");
  const std::size_t dim = binary::read_u32(in, "header");
  check_header(dim, expected_dim);
  EmbeddingCatalog catalog(dim);
  for (std::size_t row = 1; row <= count; ++row) {
    const std::string where = row_label(row);
    const std::uint32_t id_len = binary::read_u32(in, where);
    if (id_len == 0 || id_len > (1u << 16)) {
      throw DataError("malformed item id length at " + where);
    }
    std::string id(id_len, '\0');
    if (!in.read(id.data(), id_len)) throw DataError("unexpected end of file at " + where);
    ItemEmbedding e{std::move(id), std::vector<double>(dim)};
    for (auto& v : e.vector) v = binary::read_f32(in, where);
    try {
      catalog.add(std::move(e));
    } catch (const DataError& err) {
      throw DataError(std::string(err.what()) + " at " + where);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw DataError("malformed embedding file: trailing data after last row");
  }
  return catalog;
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ mix_seed(seed);
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix_seed(h);
}

}  // namespace

EmbeddingCatalog::EmbeddingCatalog(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw ConfigError("embedding dimension must be positive");
}

void EmbeddingCatalog::add(ItemEmbedding embedding) {
  if (embedding.item_id.empty()) throw DataError("empty item_id");
  if (embedding.vector.size() != dim_) {
    throw DataError("dimension mismatch for item '" + embedding.item_id + "': expected " +
                    std::to_string(dim_) + ", found " + std::to_string(embedding.vector.size()));
  }
  for (double v : embedding.vector) {
    if (!std::isfinite(v)) throw DataError("non-finite value for item '" + embedding.item_id + "'");
  }
  if (index_.contains(embedding.item_id)) {
    throw DataError("duplicate item_id '" + embedding.item_id + "'");
  }
  index_.emplace(embedding.item_id, entries_.size());
  entries_.push_back(std::move(embedding));
}

const ItemEmbedding* EmbeddingCatalog::find(std::string_view item_id) const {
  auto it = index_.find(std::string(item_id));
  return it == index_.end() ? nullptr : &entries_[it->second];
}

bool EmbeddingCatalog::operator==(const EmbeddingCatalog& other) const {
  if (dim_ != other.dim_ || entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.item_id != b.item_id) return false;
    // Bit-level comparison so that -0.0 and 0.0 are distinguished.
    if (std::memcmp(a.vector.data(), b.vector.data(), a.vector.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

EmbeddingFormat embedding_format_for(const std::filesystem::path& path) {
  return path.extension() == ".bin" ? EmbeddingFormat::kBinary : EmbeddingFormat::kText;
}

EmbeddingCatalog read_embeddings(std::istream& in, EmbeddingFormat format,
                                 std::optional<std::size_t> expected_dim) {
  return format == EmbeddingFormat::kBinary ? read_binary(in, expected_dim)
                                            : read_text(in, expected_dim);
}

EmbeddingCatalog load_embeddings(const std::filesystem::path& path,
                                 std::optional<std::size_t> expected_dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open embedding file '" + path.string() + "'");
  try {
    return read_embeddings(in, embedding_format_for(path), expected_dim);
  } catch (const DataError& err) {
    throw DataError(path.string() + ": " + err.what());
  }
}

void write_embeddings(std::ostream& out, const EmbeddingCatalog& catalog, EmbeddingFormat format) {
  if (format == EmbeddingFormat::kBinary) {
    binary::write_magic(out, kBinaryMagic);
    binary::write_u32(out, static_cast<std::uint32_t>(catalog.size()));
    binary::write_u32(out, static_cast<std::uint32_t>(catalog.dim()));
    for (const auto& e : catalog.entries()) {
      binary::write_u32(out, static_cast<std::uint32_t>(e.item_id.size()));
      out.write(e.item_id.data(), static_cast<std::streamsize>(e.item_id.size()));
      for (double v : e.vector) binary::write_f32(out, static_cast<float>(v));
    }
    return;
  }
  out << catalog.size() << ' ' << catalog.dim() << '\n';
  char buf[32];
  for (const auto& e : catalog.entries()) {
    out << e.item_id;
    for (double v : e.vector) {
      // Shortest representation that parses back to the same double.
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
      out << ' ' << std::string_view(buf, ptr - buf);
    }
    out << '\n';
  }
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingCatalog& catalog) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot create embedding file '" + path.string() + "'");
  write_embeddings(out, catalog, embedding_format_for(path));
  if (!out) throw DataError("failed writing embedding file '" + path.string() + "'");
}

ItemEmbedding stub_embed(std::string_view item_id, std::string_view text, std::size_t dim,
                         std::uint64_t seed) {
  if (dim == 0) throw ConfigError("stub_embed: dimension must be positive");
  std::string padded;
  padded.reserve(text.size() + 4);
  padded.append("^^").append(text).append("$$");

  std::vector<double> acc(dim, 0.0);
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
    const std::uint64_t h = fnv1a(std::string_view(padded).substr(i, 3), seed);
    const double sign = (h >> 63) ? -1.0 : 1.0;
    acc[h % dim] += sign;
  }
  double norm = 0.0;
  for (double v : acc) norm += v * v;
  norm = std::sqrt(norm);
  if (norm == 0.0) {
    // Every n-gram cancelled out; fall back to a fixed basis direction.
    acc[fnv1a(padded, seed) % dim] = 1.0;
    norm = 1.0;
  }
  ItemEmbedding out{std::string(item_id), std::vector<double>(dim)};
  for (std::size_t j = 0; j < dim; ++j) out.vector[j] = acc[j] / norm;
  return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
    dot += double(a[i]) * b[i];
    na += double(a[i]) * a[i];
    nb += double(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

}  // namespace recgen
