#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "recgen/embedding.hpp"
#include "recgen/nn.hpp"
#include "recgen/optim.hpp"

namespace recgen {

// Shape of the item tokenizer: an embedding of width embedding_dim is cut
// into num_slots sub-vectors, each projected to levels.size() dimensions and
// rounded per dimension to one of levels[j] values.
struct FsqConfig {
  int num_slots = 4;
  int embedding_dim = 64;
  std::vector<int> levels{8, 8, 8, 6, 5};

  int quant_dim() const { return static_cast<int>(levels.size()); }
  int sub_dim() const { return embedding_dim / num_slots; }
  std::int64_t codebook_size() const;

  // Throws ConfigError on any violated invariant.
  void validate() const;

  // K=4, d_L=768, levels [8,8,8,6,5] -> 15,360 tokens per slot.
  static FsqConfig full_profile();
  // K=4, d_L=64, levels [4,4,4,3,3] -> 576 tokens per slot.
  static FsqConfig desk_profile();

  bool operator==(const FsqConfig&) const = default;
};

// Width of the bidirectional reconstruction decoder.
struct DecoderConfig {
  int width = 64;
  int layers = 2;
  int heads = 4;
  int ff_dim = 256;

  bool operator==(const DecoderConfig&) const = default;
};

// One mixed-radix digit per quantized dimension, digit j in [0, levels[j]).
using QuantizedDigits = std::vector<int>;

struct ItemTokenSequence {
  std::string item_id;
  std::vector<std::int32_t> tokens;

  bool operator==(const ItemTokenSequence&) const = default;
};

// Ties go away from zero, e.g. 3.5 -> 4.
int round_half_away(double x);

// Mixed-radix codec, digit 0 most significant. Throws ConfigError when a
// digit or token is out of range.
std::int64_t digits_to_token(std::span<const int> digits, const FsqConfig& config);
QuantizedDigits token_to_digits(std::int64_t token, const FsqConfig& config);

// Contiguous equal slices of the embedding, in index order.
std::vector<std::vector<double>> partition(std::span<const double> embedding,
                                           const FsqConfig& config);

// Transformer over the K quantized slots that maps T_out outputs back to
// sub-vectors. It is residual around its input with a zero-initialised
// output projection, so an untrained decoder is exactly the identity.
class ReconstructionDecoder {
 public:
  struct Cache {
    nn::Matrix input;
    nn::Matrix embedded;
    std::vector<nn::TransformerBlock::Cache> blocks;
    std::vector<nn::Matrix> block_inputs;
    nn::LayerNorm::Cache ln_final;
    nn::Matrix ln_final_out;
  };

  ReconstructionDecoder() = default;
  ReconstructionDecoder(int num_slots, int sub_dim, const DecoderConfig& config);

  void init(Rng& rng);
  // x stacks items of num_slots rows each: (items*K) x sub_dim.
  nn::Matrix forward(const nn::Matrix& x, Cache* cache) const;
  nn::Matrix backward(const Cache& cache, const nn::Matrix& dy);
  void collect(nn::ParamList& out);

  nn::Linear in_proj;
  nn::Param slot_position;
  std::vector<nn::TransformerBlock> blocks;
  nn::LayerNorm ln_final;
  nn::Linear out_proj;

 private:
  int num_slots_ = 0;
  nn::AttentionMask mask_;
};

// Output of the straight-through quantizer for one sub-vector.
struct SteOutput {
  std::vector<double> forward;    // rounded digits, as reals
  std::vector<double> surrogate;  // (L_j - 1) * sigmoid(T_in(sub)_j), no rounding
};

class FsqCodebook {
 public:
  FsqCodebook(FsqConfig config, DecoderConfig decoder = {}, std::uint64_t seed = 0);

  const FsqConfig& config() const { return config_; }
  const DecoderConfig& decoder_config() const { return decoder_config_; }

  // T_in(sub) before the sigmoid.
  std::vector<double> pre_activation(std::span<const double> sub) const;
  QuantizedDigits quantize(std::span<const double> sub) const;
  SteOutput ste_forward(std::span<const double> sub) const;
  // Backward through the surrogate: accumulates T_in gradients for upstream
  // dL/d(output) and returns dL/d(sub).
  std::vector<double> ste_backward(std::span<const double> sub, std::span<const double> upstream);

  ItemTokenSequence tokenize(const ItemEmbedding& embedding) const;
  std::vector<ItemTokenSequence> tokenize(const EmbeddingCatalog& catalog) const;

  // codes: K x d_fsq real matrix (digits or STE outputs). Returns the
  // d_L-wide reconstruction.
  std::vector<double> reconstruct(const nn::Matrix& codes) const;
  // Quantizes then reconstructs one embedding.
  std::vector<double> roundtrip(std::span<const double> embedding) const;

  // Mean absolute reconstruction error over items and components.
  double reconstruction_loss(const nn::Matrix& targets) const;
  // Forward + backward over a batch (items x d_L); accumulates gradients of
  // the mean absolute error through the straight-through path.
  double accumulate_gradients(const nn::Matrix& targets);

  nn::ParamList params();

  void save(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static FsqCodebook load(std::istream& in);
  static FsqCodebook load(const std::filesystem::path& path);

  nn::Linear input_transform;   // T_in: sub_dim -> d_fsq
  nn::Linear output_transform;  // T_out: d_fsq -> sub_dim
  ReconstructionDecoder decoder;

 private:
  // Rows of `targets` split into (items*K) x sub_dim.
  nn::Matrix to_slots(const nn::Matrix& targets) const;
  nn::Matrix level_scale() const;

  FsqConfig config_;
  DecoderConfig decoder_config_;
};

struct QuantizerTrainSettings {
  int epochs = 200;
  int batch_size = 2;
  double learning_rate = 0.1;
  double clip_norm = 1.0;
  std::uint64_t seed = 17;
};

struct QuantizerTrainResult {
  FsqCodebook codebook;
  double initial_loss = 0.0;
  std::vector<double> epoch_losses;  // full-catalog loss after each epoch

  double final_loss() const { return epoch_losses.empty() ? initial_loss : epoch_losses.back(); }
};

nn::Matrix stack_embeddings(const EmbeddingCatalog& catalog);

// Plain SGD on the mean absolute reconstruction error. Throws
// DivergenceError (with the epoch) if the loss becomes non-finite.
QuantizerTrainResult train_quantizer(const EmbeddingCatalog& catalog, const FsqConfig& config,
                                     const QuantizerTrainSettings& settings,
                                     const DecoderConfig& decoder = {});

// Token catalog file: one `item_id t_0 ... t_{K-1}` line per item.
void write_token_catalog(std::ostream& out, std::span<const ItemTokenSequence> tokens);
void write_token_catalog(const std::filesystem::path& path, std::span<const ItemTokenSequence> tokens);
std::vector<ItemTokenSequence> read_token_catalog(std::istream& in, int num_slots);
std::vector<ItemTokenSequence> read_token_catalog(const std::filesystem::path& path, int num_slots);

}  // namespace recgen
