#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "recgen/nn.hpp"
#include "recgen/optim.hpp"

namespace recgen {

struct ModelConfig {
  int width = 64;            // d_ar
  int layers = 2;
  int heads = 4;
  int max_positions = 64;    // T, excluding the BOS position
  int num_slots = 4;         // K
  int vocab = 15360;         // |C|
  int aux_dim = 16;          // d_L / K
  int ff_dim = 256;

  int max_items() const { return max_positions / num_slots; }
  void validate() const;

  // d_ar=768, 3 layers, T=1024, vocab 15,360, d_L=768.
  static ModelConfig full_profile();
  static ModelConfig desk_profile();

  bool operator==(const ModelConfig&) const = default;
};

// One item inside a model input: its K token ids and its raw d_L embedding,
// whose K contiguous slices feed the auxiliary stream.
struct TokenizedItem {
  std::vector<std::int32_t> tokens;
  std::vector<double> features;
};

struct TokenizedSequence {
  std::vector<TokenizedItem> items;

  std::size_t size() const { return items.size(); }
};

// Keeps the most recent max_items items.
TokenizedSequence truncate_to_recent(const TokenizedSequence& seq, int max_items);

// K per-slot categorical distributions over the vocabulary, stored as
// log-probabilities (K x vocab).
struct NextItemDistribution {
  nn::Matrix log_probs;

  int num_slots() const { return static_cast<int>(log_probs.rows()); }
  int vocab() const { return static_cast<int>(log_probs.cols()); }
  double log_prob(int slot, std::int32_t token) const { return log_probs(slot, token); }
};

// Mask over BOS + n_items*K positions. Position p may attend to q iff
// block(q) <= block(p), where block(BOS)=0 and block(p)=1+(p-1)/K.
nn::AttentionMask build_block_mask(int n_items, int num_slots);

struct ArLossResult {
  double loss = 0.0;
  // log P(target) at each scored position, in (item, slot) order starting
  // with item 2.
  std::vector<double> target_log_probs;
  std::size_t scored_positions() const { return target_log_probs.size(); }
};

class SequenceModel {
 public:
  struct Cache {
    nn::Matrix aux_in;
    nn::Matrix aux_proj;
    nn::LayerNorm::Cache ln_aux;
    nn::LayerNorm::Cache ln_tok;
    std::vector<std::int32_t> token_ids;  // -1 marks BOS
    std::vector<nn::TransformerBlock::Cache> blocks;
    nn::LayerNorm::Cache ln_final;
    nn::Matrix hidden;  // after final layer norm
    nn::AttentionMask mask;
  };

  explicit SequenceModel(ModelConfig config, std::uint64_t seed = 0);

  const ModelConfig& config() const { return config_; }

  // Input rows: LN(aux) + LN(token) + position, one row per position
  // (BOS first). Throws DataError for out-of-range tokens.
  nn::Matrix compose_inputs(const TokenizedSequence& seq, Cache* cache = nullptr) const;
  // Per-position logits over the vocabulary, (1 + n_items*K) x vocab.
  nn::Matrix forward(const TokenizedSequence& seq, Cache* cache = nullptr) const;

  ArLossResult ar_loss(const TokenizedSequence& seq) const;
  // Same as ar_loss, also accumulating dLoss/dParam into the gradients.
  ArLossResult accumulate_gradients(const TokenizedSequence& seq, double weight = 1.0);

  NextItemDistribution predict_next_item(const TokenizedSequence& history) const;

  nn::ParamList params();

  void save(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static SequenceModel load(std::istream& in);
  static SequenceModel load(const std::filesystem::path& path);

  nn::Param token_embedding;     // vocab x d_ar; also the output projection
  nn::Param bos_embedding;       // 1 x d_ar
  nn::Param position_embedding;  // (T + 1) x d_ar
  nn::Linear aux_proj;           // d_sub -> d_ar, no bias
  nn::LayerNorm ln_aux;
  nn::LayerNorm ln_tok;
  std::vector<nn::TransformerBlock> blocks;
  nn::LayerNorm ln_final;

 private:
  void check_sequence(const TokenizedSequence& seq) const;
  ArLossResult loss_impl(const TokenizedSequence& seq, double weight, bool with_grad);

  ModelConfig config_;
};

struct ModelTrainSettings {
  OptimizerSettings optimizer{OptimizerKind::kAdam, 3e-3};
  int epochs = 10;
  int batch_size = 16;
  std::uint64_t seed = 29;
  // Early stop once eval loss improves by less than min_relative_improvement
  // for `patience` consecutive epochs; patience 0 disables.
  int patience = 0;
  double min_relative_improvement = 0.005;
  // Restore the parameters of the best-eval epoch at the end.
  bool keep_best = false;
  // Epochs already run by a resumed model. The shuffle stream is advanced
  // past them and epoch numbers continue from there.
  int completed_epochs = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double eval_loss = 0.0;
};

struct ModelTrainResult {
  std::vector<EpochRecord> trace;
  double initial_train_loss = 0.0;
  double initial_eval_loss = 0.0;
  double best_eval_loss = 0.0;
  int best_epoch = 0;
  std::int64_t scored_tokens_per_epoch = 0;
  std::int64_t scored_tokens_processed = 0;
};

// Mean negative log-likelihood over all scored positions in the set.
double mean_ar_loss(const SequenceModel& model, std::span<const TokenizedSequence> data);

// Mini-batch training of the autoregressive objective. Every sequence must
// hold at least two items. `optimizer` may be passed to continue from saved
// state; otherwise a fresh one is created.
ModelTrainResult train_model(SequenceModel& model, std::span<const TokenizedSequence> train,
                             std::span<const TokenizedSequence> eval,
                             const ModelTrainSettings& settings, Optimizer* optimizer = nullptr,
                             const std::function<void(const EpochRecord&)>& on_epoch = {});

// `epoch train_loss eval_loss` per line.
void write_loss_trace(std::ostream& out, std::span<const EpochRecord> trace);

}  // namespace recgen
