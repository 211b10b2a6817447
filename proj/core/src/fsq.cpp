#include "recgen/fsq.hpp"

#include <charconv>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "recgen/binary_io.hpp"
#include "recgen/error.hpp"

namespace recgen {

namespace {

constexpr std::string_view kCodebookMagic = "RGFSQCB1";
constexpr std::uint32_t kCodebookVersion = 1;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

// ---------------------------------------------------------------------------
// Config and codec

std::int64_t FsqConfig::codebook_size() const {
  std::int64_t size = 1;
  for (int l : levels) size *= l;
  return size;
}

void FsqConfig::validate() const {
  if (num_slots <= 0) throw ConfigError("fsq: K must be positive");
  if (embedding_dim <= 0) throw ConfigError("fsq: d_L must be positive");
  if (embedding_dim % num_slots != 0) {
    throw ConfigError("fsq: d_L=" + std::to_string(embedding_dim) + " is not divisible by K=" +
                      std::to_string(num_slots));
  }
  if (levels.empty()) throw ConfigError("fsq: levels must not be empty");
  std::int64_t size = 1;
  for (int l : levels) {
    if (l < 2) throw ConfigError("fsq: every level count must be >= 2");
    size *= l;
    if (size > (std::int64_t{1} << 31)) throw ConfigError("fsq: codebook exceeds 2^31 tokens");
  }
}

FsqConfig FsqConfig::full_profile() { return FsqConfig{4, 768, {8, 8, 8, 6, 5}}; }

FsqConfig FsqConfig::desk_profile() { return FsqConfig{4, 64, {4, 4, 4, 3, 3}}; }

int round_half_away(double x) { return static_cast<int>(std::round(x)); }

std::int64_t digits_to_token(std::span<const int> digits, const FsqConfig& config) {
  if (digits.size() != config.levels.size()) {
    throw ConfigError("digits_to_token: expected " + std::to_string(config.levels.size()) +
                      " digits, got " + std::to_string(digits.size()));
  }
  std::int64_t token = 0;
  for (std::size_t j = 0; j < digits.size(); ++j) {
    if (digits[j] < 0 || digits[j] >= config.levels[j]) {
      throw ConfigError("digit " + std::to_string(j) + " = " + std::to_string(digits[j]) +
                        " out of range [0, " + std::to_string(config.levels[j]) + ")");
    }
    token = token * config.levels[j] + digits[j];
  }
  return token;
}

QuantizedDigits token_to_digits(std::int64_t token, const FsqConfig& config) {
  if (token < 0 || token >= config.codebook_size()) {
    throw ConfigError("token " + std::to_string(token) + " out of range [0, " +
                      std::to_string(config.codebook_size()) + ")");
  }
  QuantizedDigits digits(config.levels.size());
  for (std::size_t j = config.levels.size(); j-- > 0;) {
    digits[j] = static_cast<int>(token % config.levels[j]);
    token /= config.levels[j];
  }
  return digits;
}

std::vector<std::vector<double>> partition(std::span<const double> embedding,
                                           const FsqConfig& config) {
  if (config.num_slots <= 0 || embedding.size() % config.num_slots != 0) {
    throw ConfigError("partition: dimension " + std::to_string(embedding.size()) +
                      " not divisible by K=" + std::to_string(config.num_slots));
  }
  const std::size_t sub = embedding.size() / config.num_slots;
  std::vector<std::vector<double>> out;
  out.reserve(config.num_slots);
  for (int k = 0; k < config.num_slots; ++k) {
    auto first = embedding.begin() + static_cast<std::ptrdiff_t>(k * sub);
    out.emplace_back(first, first + static_cast<std::ptrdiff_t>(sub));
  }
  return out;
}

// ---------------------------------------------------------------------------
// ReconstructionDecoder

ReconstructionDecoder::ReconstructionDecoder(int num_slots, int sub_dim, const DecoderConfig& config)
    : in_proj("decoder.in_proj", sub_dim, config.width),
      slot_position("decoder.slot_position", num_slots, config.width),
      ln_final("decoder.ln_final", config.width),
      out_proj("decoder.out_proj", config.width, sub_dim),
      num_slots_(num_slots),
      mask_(nn::AttentionMask::full(num_slots)) {
  for (int l = 0; l < config.layers; ++l) {
    blocks.emplace_back("decoder.block" + std::to_string(l), config.width, config.heads,
                        config.ff_dim);
  }
}

void ReconstructionDecoder::init(Rng& rng) {
  const double residual_std = 0.02 / std::sqrt(2.0 * std::max<std::size_t>(1, blocks.size()));
  in_proj.init(rng, 1.0 / std::sqrt(static_cast<double>(in_proj.weight.value.rows())));
  nn::fill_normal(slot_position.value, rng, 0.02);
  for (auto& b : blocks) b.init(rng, 0.02, residual_std);
  out_proj.weight.value.setZero();
  out_proj.bias.value.setZero();
}

nn::Matrix ReconstructionDecoder::forward(const nn::Matrix& x, Cache* cache) const {
  const Eigen::Index items = x.rows() / num_slots_;
  nn::Matrix h = in_proj.forward(x);
  for (Eigen::Index i = 0; i < items; ++i) h.middleRows(i * num_slots_, num_slots_) += slot_position.value;
  if (cache) {
    cache->input = x;
    cache->embedded = h;
    cache->blocks.resize(blocks.size());
    cache->block_inputs.resize(blocks.size());
  }
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    if (cache) cache->block_inputs[l] = h;
    h = blocks[l].forward(h, mask_, cache ? &cache->blocks[l] : nullptr);
  }
  nn::LayerNorm::Cache ln_cache;
  nn::Matrix normed = ln_final.forward(h, &ln_cache);
  nn::Matrix y = x + out_proj.forward(normed);
  if (cache) {
    cache->ln_final = std::move(ln_cache);
    cache->ln_final_out = std::move(normed);
  }
  return y;
}

nn::Matrix ReconstructionDecoder::backward(const Cache& cache, const nn::Matrix& dy) {
  nn::Matrix dh = ln_final.backward(cache.ln_final, out_proj.backward(cache.ln_final_out, dy));
  for (std::size_t l = blocks.size(); l-- > 0;) dh = blocks[l].backward(cache.blocks[l], mask_, dh);
  const Eigen::Index items = dh.rows() / num_slots_;
  for (Eigen::Index i = 0; i < items; ++i) slot_position.grad += dh.middleRows(i * num_slots_, num_slots_);
  return dy + in_proj.backward(cache.input, dh);
}

void ReconstructionDecoder::collect(nn::ParamList& out) {
  in_proj.collect(out);
  out.push_back(&slot_position);
  for (auto& b : blocks) b.collect(out);
  ln_final.collect(out);
  out_proj.collect(out);
}

// ---------------------------------------------------------------------------
// FsqCodebook

FsqCodebook::FsqCodebook(FsqConfig config, DecoderConfig decoder_config, std::uint64_t seed)
    : config_(std::move(config)), decoder_config_(decoder_config) {
  config_.validate();
  const int sub = config_.sub_dim();
  const int q = config_.quant_dim();
  input_transform = nn::Linear("fsq.t_in", sub, q);
  output_transform = nn::Linear("fsq.t_out", q, sub);
  decoder = ReconstructionDecoder(config_.num_slots, sub, decoder_config_);

  Rng rng(mix_seed(seed, 0xf59));
  input_transform.init(rng, 1.0 / std::sqrt(static_cast<double>(sub)));
  output_transform.init(rng, 0.02);
  decoder.init(rng);
  nn::round_to_storage(params());
}

nn::Matrix FsqCodebook::level_scale() const {
  nn::Matrix s(1, config_.quant_dim());
  for (int j = 0; j < config_.quant_dim(); ++j) s(0, j) = config_.levels[j] - 1;
  return s;
}

std::vector<double> FsqCodebook::pre_activation(std::span<const double> sub) const {
  if (static_cast<int>(sub.size()) != config_.sub_dim()) {
    throw ConfigError("sub-vector has dimension " + std::to_string(sub.size()) + ", expected " +
                      std::to_string(config_.sub_dim()));
  }
  const nn::Matrix x = Eigen::Map<const nn::Matrix>(sub.data(), 1, static_cast<Eigen::Index>(sub.size()));
  const nn::Matrix z = input_transform.forward(x);
  if (!z.allFinite()) throw DivergenceError("non-finite quantizer pre-activation");
  return {z.data(), z.data() + z.size()};
}

QuantizedDigits FsqCodebook::quantize(std::span<const double> sub) const {
  const auto z = pre_activation(sub);
  QuantizedDigits digits(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) {
    const int top = config_.levels[j] - 1;
    digits[j] = std::clamp(round_half_away(top * sigmoid(z[j])), 0, top);
  }
  return digits;
}

SteOutput FsqCodebook::ste_forward(std::span<const double> sub) const {
  const auto z = pre_activation(sub);
  SteOutput out;
  for (std::size_t j = 0; j < z.size(); ++j) {
    const double smooth = (config_.levels[j] - 1) * sigmoid(z[j]);
    out.surrogate.push_back(smooth);
    // smooth + sg(round(smooth) - smooth): the forward value is the rounded one.
    out.forward.push_back(static_cast<double>(round_half_away(smooth)));
  }
  return out;
}

std::vector<double> FsqCodebook::ste_backward(std::span<const double> sub,
                                              std::span<const double> upstream) {
  const auto z = pre_activation(sub);
  nn::Matrix dz(1, static_cast<Eigen::Index>(z.size()));
  for (std::size_t j = 0; j < z.size(); ++j) {
    const double s = sigmoid(z[j]);
    dz(0, static_cast<Eigen::Index>(j)) = upstream[j] * (config_.levels[j] - 1) * s * (1.0 - s);
  }
  const nn::Matrix x = Eigen::Map<const nn::Matrix>(sub.data(), 1, static_cast<Eigen::Index>(sub.size()));
  const nn::Matrix dx = input_transform.backward(x, dz);
  return {dx.data(), dx.data() + dx.size()};
}

ItemTokenSequence FsqCodebook::tokenize(const ItemEmbedding& embedding) const {
  if (static_cast<int>(embedding.vector.size()) != config_.embedding_dim) {
    throw DataError("item '" + embedding.item_id + "' has dimension " +
                    std::to_string(embedding.vector.size()) + ", codebook expects " +
                    std::to_string(config_.embedding_dim));
  }
  ItemTokenSequence out{embedding.item_id, {}};
  for (const auto& sub : partition(embedding.vector, config_)) {
    out.tokens.push_back(static_cast<std::int32_t>(digits_to_token(quantize(sub), config_)));
  }
  return out;
}

std::vector<ItemTokenSequence> FsqCodebook::tokenize(const EmbeddingCatalog& catalog) const {
  std::vector<ItemTokenSequence> out;
  out.reserve(catalog.size());
  for (const auto& e : catalog.entries()) out.push_back(tokenize(e));
  return out;
}

std::vector<double> FsqCodebook::reconstruct(const nn::Matrix& codes) const {
  if (codes.rows() != config_.num_slots || codes.cols() != config_.quant_dim()) {
    throw ConfigError("reconstruct: expected " + std::to_string(config_.num_slots) + "x" +
                      std::to_string(config_.quant_dim()) + " codes");
  }
  const nn::Matrix y = decoder.forward(output_transform.forward(codes), nullptr);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(config_.embedding_dim));
  for (Eigen::Index k = 0; k < y.rows(); ++k) {
    for (Eigen::Index c = 0; c < y.cols(); ++c) out.push_back(y(k, c));
  }
  return out;
}

std::vector<double> FsqCodebook::roundtrip(std::span<const double> embedding) const {
  nn::Matrix codes(config_.num_slots, config_.quant_dim());
  const auto subs = partition(embedding, config_);
  for (int k = 0; k < config_.num_slots; ++k) {
    const auto digits = quantize(subs[static_cast<std::size_t>(k)]);
    for (int j = 0; j < config_.quant_dim(); ++j) codes(k, j) = digits[static_cast<std::size_t>(j)];
  }
  return reconstruct(codes);
}

nn::Matrix FsqCodebook::to_slots(const nn::Matrix& targets) const {
  if (targets.cols() != config_.embedding_dim) {
    throw ConfigError("batch width " + std::to_string(targets.cols()) + " does not match d_L=" +
                      std::to_string(config_.embedding_dim));
  }
  const int k_slots = config_.num_slots;
  const int sub = config_.sub_dim();
  nn::Matrix slots(targets.rows() * k_slots, sub);
  for (Eigen::Index b = 0; b < targets.rows(); ++b) {
    for (int k = 0; k < k_slots; ++k) slots.row(b * k_slots + k) = targets.block(b, k * sub, 1, sub);
  }
  return slots;
}

double FsqCodebook::reconstruction_loss(const nn::Matrix& targets) const {
  if (targets.rows() == 0) return 0.0;
  const nn::Matrix subs = to_slots(targets);
  const nn::Matrix scale = level_scale();
  nn::Matrix codes = input_transform.forward(subs).unaryExpr([](double z) { return sigmoid(z); });
  codes = (codes.array().rowwise() * scale.row(0).array()).unaryExpr([](double s) {
    return static_cast<double>(round_half_away(s));
  });
  const nn::Matrix recon = decoder.forward(output_transform.forward(codes), nullptr);
  return (recon - subs).cwiseAbs().sum() / static_cast<double>(targets.size());
}

double FsqCodebook::accumulate_gradients(const nn::Matrix& targets) {
  const nn::Matrix subs = to_slots(targets);
  const nn::Matrix scale = level_scale();
  const nn::Matrix sig = input_transform.forward(subs).unaryExpr([](double z) { return sigmoid(z); });
  const nn::Matrix smooth = sig.array().rowwise() * scale.row(0).array();
  const nn::Matrix codes = smooth.unaryExpr([](double s) { return static_cast<double>(round_half_away(s)); });
  const nn::Matrix expanded = output_transform.forward(codes);
  ReconstructionDecoder::Cache cache;
  const nn::Matrix recon = decoder.forward(expanded, &cache);
  const nn::Matrix residual = recon - subs;
  const double norm = 1.0 / static_cast<double>(targets.size());
  const double loss = residual.cwiseAbs().sum() * norm;

  const nn::Matrix dy = residual.unaryExpr([norm](double r) { return r > 0 ? norm : (r < 0 ? -norm : 0.0); });
  const nn::Matrix dexpanded = decoder.backward(cache, dy);
  const nn::Matrix dcodes = output_transform.backward(codes, dexpanded);
  // Straight-through: d(codes)/d(smooth) = 1.
  const nn::Matrix dpre = (dcodes.array().rowwise() * scale.row(0).array()) * sig.array() * (1.0 - sig.array());
  input_transform.backward(subs, dpre);
  return loss;
}

nn::ParamList FsqCodebook::params() {
  nn::ParamList out;
  input_transform.collect(out);
  output_transform.collect(out);
  decoder.collect(out);
  return out;
}

void FsqCodebook::save(std::ostream& out) const {
  binary::write_magic(out, kCodebookMagic);
  binary::write_u32(out, kCodebookVersion);
  binary::write_u32(out, static_cast<std::uint32_t>(config_.num_slots));
  binary::write_u32(out, static_cast<std::uint32_t>(config_.embedding_dim));
  binary::write_u32(out, static_cast<std::uint32_t>(config_.quant_dim()));
  for (int l : config_.levels) binary::write_u32(out, static_cast<std::uint32_t>(l));
  binary::write_u32(out, static_cast<std::uint32_t>(decoder_config_.width));
  binary::write_u32(out, static_cast<std::uint32_t>(decoder_config_.layers));
  binary::write_u32(out, static_cast<std::uint32_t>(decoder_config_.heads));
  binary::write_u32(out, static_cast<std::uint32_t>(decoder_config_.ff_dim));
  auto params = const_cast<FsqCodebook*>(this)->params();
  binary::write_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) binary::write_tensor(out, p->value);
}

void FsqCodebook::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot create codebook file '" + path.string() + "'");
  save(out);
  if (!out) throw DataError("failed writing codebook file '" + path.string() + "'");
}

FsqCodebook FsqCodebook::load(std::istream& in) {
  binary::expect_magic(in, kCodebookMagic, "codebook checkpoint");
  const auto version = binary::read_u32(in, "codebook header");
  if (version != kCodebookVersion) {
    throw DataError("unsupported codebook format version " + std::to_string(version));
  }
  FsqConfig config;
  config.num_slots = static_cast<int>(binary::read_u32(in, "codebook header"));
  config.embedding_dim = static_cast<int>(binary::read_u32(in, "codebook header"));
  const auto quant = binary::read_u32(in, "codebook header");
  if (quant == 0 || quant > 64) throw DataError("codebook header: implausible d_fsq");
  config.levels.clear();
  for (std::uint32_t j = 0; j < quant; ++j) {
    config.levels.push_back(static_cast<int>(binary::read_u32(in, "codebook header")));
  }
  DecoderConfig dec;
  dec.width = static_cast<int>(binary::read_u32(in, "codebook header"));
  dec.layers = static_cast<int>(binary::read_u32(in, "codebook header"));
  dec.heads = static_cast<int>(binary::read_u32(in, "codebook header"));
  dec.ff_dim = static_cast<int>(binary::read_u32(in, "codebook header"));
  FsqCodebook codebook(config, dec);
  auto params = codebook.params();
  if (binary::read_u32(in, "codebook header") != params.size()) {
    throw DataError("codebook checkpoint has the wrong tensor count");
  }
  for (auto* p : params) binary::read_tensor(in, p->value, p->name);
  if (!nn::all_finite(params)) throw DataError("codebook checkpoint contains non-finite values");
  return codebook;
}

FsqCodebook FsqCodebook::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open codebook file '" + path.string() + "'");
  try {
    return load(in);
  } catch (const DataError& err) {
    throw DataError(path.string() + ": " + err.what());
  }
}

// ---------------------------------------------------------------------------
// Training

nn::Matrix stack_embeddings(const EmbeddingCatalog& catalog) {
  nn::Matrix out(static_cast<Eigen::Index>(catalog.size()), static_cast<Eigen::Index>(catalog.dim()));
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    for (std::size_t j = 0; j < catalog.dim(); ++j) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = catalog[i].vector[j];
    }
  }
  return out;
}

QuantizerTrainResult train_quantizer(const EmbeddingCatalog& catalog, const FsqConfig& config,
                                     const QuantizerTrainSettings& settings,
                                     const DecoderConfig& decoder) {
  config.validate();
  if (catalog.empty()) throw DataError("train_quantizer: empty catalog");
  if (static_cast<int>(catalog.dim()) != config.embedding_dim) {
    throw ConfigError("train_quantizer: catalog d_L=" + std::to_string(catalog.dim()) +
                      " but config d_L=" + std::to_string(config.embedding_dim));
  }
  if (settings.epochs < 0 || settings.batch_size <= 0) {
    throw ConfigError("train_quantizer: epochs must be >= 0 and batch size positive");
  }

  QuantizerTrainResult result{FsqCodebook(config, decoder, settings.seed), 0.0, {}};
  FsqCodebook& codebook = result.codebook;
  const nn::Matrix targets = stack_embeddings(catalog);

  // Standardise T_in on the data so that pre-activations start in the
  // sigmoid's linear region (zero mean, unit spread per output dimension).
  {
    nn::Matrix slots(targets.rows() * config.num_slots, config.sub_dim());
    for (Eigen::Index b = 0; b < targets.rows(); ++b) {
      for (int k = 0; k < config.num_slots; ++k) {
        slots.row(b * config.num_slots + k) = targets.block(b, k * config.sub_dim(), 1, config.sub_dim());
      }
    }
    const nn::Matrix z = codebook.input_transform.forward(slots);
    auto& w = codebook.input_transform.weight.value;
    auto& bias = codebook.input_transform.bias.value;
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      const double mean = z.col(j).mean();
      const double sd = std::sqrt((z.col(j).array() - mean).square().mean());
      const double inv = sd > 1e-12 ? 1.0 / sd : 1.0;
      w.col(j) *= inv;
      bias(0, j) = (bias(0, j) - mean) * inv;
    }
    nn::round_to_storage(codebook.params());
  }

  result.initial_loss = codebook.reconstruction_loss(targets);
  if (!std::isfinite(result.initial_loss)) throw DivergenceError("train_quantizer: non-finite initial loss");

  OptimizerSettings opt;
  opt.kind = OptimizerKind::kSgd;
  opt.learning_rate = settings.learning_rate;
  opt.clip_norm = settings.clip_norm;
  Optimizer optimizer(codebook.params(), opt);

  Rng rng(mix_seed(settings.seed, 0x7a1));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(targets.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  nn::Matrix batch;
  for (int epoch = 1; epoch <= settings.epochs; ++epoch) {
    shuffle(std::span(order), rng);
    for (std::size_t start = 0; start < order.size(); start += settings.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(settings.batch_size));
      batch.resize(static_cast<Eigen::Index>(end - start), targets.cols());
      for (std::size_t i = start; i < end; ++i) batch.row(static_cast<Eigen::Index>(i - start)) = targets.row(order[i]);
      optimizer.zero_grad();
      const double loss = codebook.accumulate_gradients(batch);
      if (!std::isfinite(loss)) {
        throw DivergenceError("train_quantizer: loss became non-finite in epoch " + std::to_string(epoch));
      }
      optimizer.step();
    }
    const double loss = codebook.reconstruction_loss(targets);
    if (!std::isfinite(loss) || !nn::all_finite(codebook.params())) {
      throw DivergenceError("train_quantizer: loss became non-finite in epoch " + std::to_string(epoch));
    }
    result.epoch_losses.push_back(loss);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Token catalog file

void write_token_catalog(std::ostream& out, std::span<const ItemTokenSequence> tokens) {
  for (const auto& t : tokens) {
    out << t.item_id;
    for (auto tok : t.tokens) out << ' ' << tok;
    out << '\n';
  }
}

void write_token_catalog(const std::filesystem::path& path, std::span<const ItemTokenSequence> tokens) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot create token catalog '" + path.string() + "'");
  write_token_catalog(out, tokens);
  if (!out) throw DataError("failed writing token catalog '" + path.string() + "'");
}

std::vector<ItemTokenSequence> read_token_catalog(std::istream& in, int num_slots) {
  std::vector<ItemTokenSequence> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    ItemTokenSequence entry;
    if (!(fields >> entry.item_id)) continue;
    ++row;
    std::string tok;
    while (fields >> tok) {
      std::int32_t value = 0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
      if (ec != std::errc() || ptr != tok.data() + tok.size() || value < 0) {
        throw DataError("malformed token '" + tok + "' at row " + std::to_string(row));
      }
      entry.tokens.push_back(value);
    }
    if (static_cast<int>(entry.tokens.size()) != num_slots) {
      throw DataError("row " + std::to_string(row) + " has " + std::to_string(entry.tokens.size()) +
                      " tokens, expected " + std::to_string(num_slots));
    }
    out.push_back(std::move(entry));
  }
  return out;
}

std::vector<ItemTokenSequence> read_token_catalog(const std::filesystem::path& path, int num_slots) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open token catalog '" + path.string() + "'");
  try {
    return read_token_catalog(in, num_slots);
  } catch (const DataError& err) {
    throw DataError(path.string() + ": " + err.what());
  }
}

}  // namespace recgen
