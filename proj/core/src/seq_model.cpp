#include "recgen/seq_model.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

#include "recgen/binary_io.hpp"
#include "recgen/error.hpp"

namespace recgen {

namespace {

constexpr std::string_view kModelMagic = "RGSEQMD1";
constexpr std::uint32_t kModelVersion = 1;

std::size_t scored_count(const TokenizedSequence& seq, int num_slots) {
  return seq.items.size() < 2 ? 0 : (seq.items.size() - 1) * static_cast<std::size_t>(num_slots);
}

}  // namespace

void ModelConfig::validate() const {
  if (width <= 0 || layers < 0 || heads <= 0 || ff_dim <= 0) {
    throw ConfigError("model: width, heads and ff_dim must be positive");
  }
  if (width % heads != 0) throw ConfigError("model: d_ar must be divisible by the head count");
  if (num_slots <= 0 || max_positions <= 0 || max_positions % num_slots != 0) {
    throw ConfigError("model: T must be a positive multiple of K");
  }
  if (max_items() < 2) throw ConfigError("model: T must hold at least two items");
  if (vocab <= 0 || aux_dim <= 0) throw ConfigError("model: vocab and aux_dim must be positive");
}

ModelConfig ModelConfig::full_profile() {
  return ModelConfig{768, 3, 12, 1024, 4, 15360, 192, 3072};
}

ModelConfig ModelConfig::desk_profile() { return ModelConfig{64, 2, 4, 64, 4, 576, 16, 256}; }

TokenizedSequence truncate_to_recent(const TokenizedSequence& seq, int max_items) {
  if (static_cast<int>(seq.items.size()) <= max_items) return seq;
  TokenizedSequence out;
  out.items.assign(seq.items.end() - max_items, seq.items.end());
  return out;
}

nn::AttentionMask build_block_mask(int n_items, int num_slots) {
  const int size = 1 + n_items * num_slots;
  nn::AttentionMask mask(size);
  auto block = [num_slots](int p) { return p == 0 ? 0 : 1 + (p - 1) / num_slots; };
  for (int p = 0; p < size; ++p) {
    for (int q = 0; q < size; ++q) mask.set(p, q, block(q) <= block(p));
  }
  return mask;
}

SequenceModel::SequenceModel(ModelConfig config, std::uint64_t seed)
    : token_embedding("wte", config.vocab, config.width),
      bos_embedding("bos", 1, config.width),
      position_embedding("wpe", config.max_positions + 1, config.width),
      aux_proj("aux_proj", config.aux_dim, config.width, /*bias=*/false),
      ln_aux("ln_aux", config.width),
      ln_tok("ln_tok", config.width),
      ln_final("ln_final", config.width),
      config_(config) {
  config_.validate();
  for (int l = 0; l < config_.layers; ++l) {
    blocks.emplace_back("block" + std::to_string(l), config_.width, config_.heads, config_.ff_dim);
  }
  Rng rng(mix_seed(seed, 0x5e9));
  nn::fill_normal(token_embedding.value, rng, 0.02);
  nn::fill_normal(bos_embedding.value, rng, 0.02);
  nn::fill_normal(position_embedding.value, rng, 0.01);
  aux_proj.init(rng, 1.0 / std::sqrt(static_cast<double>(config_.aux_dim)));
  const double residual_std = 0.02 / std::sqrt(2.0 * std::max(1, config_.layers));
  for (auto& b : blocks) b.init(rng, 0.02, residual_std);
  nn::round_to_storage(params());
}

void SequenceModel::check_sequence(const TokenizedSequence& seq) const {
  if (seq.items.empty()) throw DataError("empty item sequence");
  if (static_cast<int>(seq.items.size()) > config_.max_items()) {
    throw ConfigError("sequence of " + std::to_string(seq.items.size()) + " items exceeds T/K=" +
                      std::to_string(config_.max_items()));
  }
  for (const auto& item : seq.items) {
    if (static_cast<int>(item.tokens.size()) != config_.num_slots) {
      throw DataError("item has " + std::to_string(item.tokens.size()) + " tokens, expected K=" +
                      std::to_string(config_.num_slots));
    }
    if (static_cast<int>(item.features.size()) != config_.num_slots * config_.aux_dim) {
      throw DataError("item features have dimension " + std::to_string(item.features.size()) +
                      ", expected " + std::to_string(config_.num_slots * config_.aux_dim));
    }
    for (auto t : item.tokens) {
      if (t < 0 || t >= config_.vocab) {
        throw DataError("token id " + std::to_string(t) + " outside vocabulary of " +
                        std::to_string(config_.vocab));
      }
    }
  }
}

nn::Matrix SequenceModel::compose_inputs(const TokenizedSequence& seq, Cache* cache) const {
  check_sequence(seq);
  const int k_slots = config_.num_slots;
  const Eigen::Index positions = 1 + static_cast<Eigen::Index>(seq.items.size()) * k_slots;

  nn::Matrix aux_in = nn::Matrix::Zero(positions, config_.aux_dim);
  nn::Matrix tok(positions, config_.width);
  std::vector<std::int32_t> ids(static_cast<std::size_t>(positions), -1);
  tok.row(0) = bos_embedding.value.row(0);
  for (std::size_t m = 0; m < seq.items.size(); ++m) {
    const auto& item = seq.items[m];
    for (int k = 0; k < k_slots; ++k) {
      const Eigen::Index p = 1 + static_cast<Eigen::Index>(m) * k_slots + k;
      for (int j = 0; j < config_.aux_dim; ++j) {
        aux_in(p, j) = item.features[static_cast<std::size_t>(k * config_.aux_dim + j)];
      }
      tok.row(p) = token_embedding.value.row(item.tokens[static_cast<std::size_t>(k)]);
      ids[static_cast<std::size_t>(p)] = item.tokens[static_cast<std::size_t>(k)];
    }
  }
  nn::Matrix aux = aux_proj.forward(aux_in);
  nn::LayerNorm::Cache aux_cache;
  nn::LayerNorm::Cache tok_cache;
  nn::Matrix x = ln_aux.forward(aux, &aux_cache) + ln_tok.forward(tok, &tok_cache);
  x += position_embedding.value.topRows(positions);
  if (cache) {
    cache->aux_in = std::move(aux_in);
    cache->aux_proj = std::move(aux);
    cache->ln_aux = std::move(aux_cache);
    cache->ln_tok = std::move(tok_cache);
    cache->token_ids = std::move(ids);
  }
  return x;
}

namespace {

nn::Matrix run_stack(const SequenceModel& model, const TokenizedSequence& seq,
                     SequenceModel::Cache* cache) {
  nn::Matrix h = model.compose_inputs(seq, cache);
  const auto mask = build_block_mask(static_cast<int>(seq.items.size()), model.config().num_slots);
  if (cache) cache->blocks.resize(model.blocks.size());
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    h = model.blocks[l].forward(h, mask, cache ? &cache->blocks[l] : nullptr);
    if (!h.allFinite()) {
      throw DivergenceError("non-finite activations after transformer layer " + std::to_string(l));
    }
  }
  nn::LayerNorm::Cache ln_cache;
  nn::Matrix out = model.ln_final.forward(h, &ln_cache);
  if (cache) {
    cache->ln_final = std::move(ln_cache);
    cache->hidden = out;
    cache->mask = mask;
  }
  return out;
}

}  // namespace

nn::Matrix SequenceModel::forward(const TokenizedSequence& seq, Cache* cache) const {
  const nn::Matrix hidden = run_stack(*this, seq, cache);
  return hidden * token_embedding.value.transpose();
}

ArLossResult SequenceModel::ar_loss(const TokenizedSequence& seq) const {
  return const_cast<SequenceModel*>(this)->loss_impl(seq, 1.0, /*with_grad=*/false);
}

ArLossResult SequenceModel::accumulate_gradients(const TokenizedSequence& seq, double weight) {
  return loss_impl(seq, weight, /*with_grad=*/true);
}

ArLossResult SequenceModel::loss_impl(const TokenizedSequence& seq, double weight, bool with_grad) {
  if (seq.items.size() < 2) throw DataError("autoregressive loss needs at least two items");
  Cache cache;
  const nn::Matrix hidden = run_stack(*this, seq, with_grad ? &cache : nullptr);

  // Slot k of item m+1 is scored from slot k of item m.
  const int k_slots = config_.num_slots;
  const Eigen::Index scored = static_cast<Eigen::Index>(seq.items.size() - 1) * k_slots;
  nn::Matrix source(scored, config_.width);
  std::vector<std::int32_t> targets(static_cast<std::size_t>(scored));
  for (Eigen::Index s = 0; s < scored; ++s) {
    source.row(s) = hidden.row(1 + s);
    const auto next = static_cast<std::size_t>(s / k_slots + 1);
    targets[static_cast<std::size_t>(s)] = seq.items[next].tokens[static_cast<std::size_t>(s % k_slots)];
  }
  const nn::Matrix logits = source * token_embedding.value.transpose();
  const nn::Matrix log_probs = nn::log_softmax_rows(logits);

  ArLossResult result;
  result.target_log_probs.reserve(static_cast<std::size_t>(scored));
  double total = 0.0;
  for (Eigen::Index s = 0; s < scored; ++s) {
    const double lp = log_probs(s, targets[static_cast<std::size_t>(s)]);
    result.target_log_probs.push_back(lp);
    total -= lp;
  }
  result.loss = total / static_cast<double>(scored);
  if (!std::isfinite(result.loss)) throw DivergenceError("non-finite autoregressive loss");
  if (!with_grad) return result;

  // d(mean NLL)/d(logits) = (softmax - onehot) / scored.
  nn::Matrix dlogits = log_probs.array().exp();
  for (Eigen::Index s = 0; s < scored; ++s) dlogits(s, targets[static_cast<std::size_t>(s)]) -= 1.0;
  dlogits *= weight / static_cast<double>(scored);

  token_embedding.grad.noalias() += dlogits.transpose() * source;
  nn::Matrix dhidden = nn::Matrix::Zero(hidden.rows(), hidden.cols());
  dhidden.middleRows(1, scored).noalias() = dlogits * token_embedding.value;

  nn::Matrix dx = ln_final.backward(cache.ln_final, dhidden);
  for (std::size_t l = blocks.size(); l-- > 0;) dx = blocks[l].backward(cache.blocks[l], cache.mask, dx);

  position_embedding.grad.topRows(dx.rows()) += dx;
  const nn::Matrix dtok = ln_tok.backward(cache.ln_tok, dx);
  for (Eigen::Index p = 0; p < dtok.rows(); ++p) {
    const auto id = cache.token_ids[static_cast<std::size_t>(p)];
    if (id < 0) {
      bos_embedding.grad.row(0) += dtok.row(p);
    } else {
      token_embedding.grad.row(id) += dtok.row(p);
    }
  }
  aux_proj.backward(cache.aux_in, ln_aux.backward(cache.ln_aux, dx));
  return result;
}

NextItemDistribution SequenceModel::predict_next_item(const TokenizedSequence& history) const {
  if (history.items.empty()) throw DataError("predict_next_item: empty history");
  const TokenizedSequence seq = truncate_to_recent(history, config_.max_items());
  const nn::Matrix hidden = run_stack(*this, seq, nullptr);
  const int k_slots = config_.num_slots;
  const Eigen::Index first = 1 + static_cast<Eigen::Index>(seq.items.size() - 1) * k_slots;
  const nn::Matrix logits = hidden.middleRows(first, k_slots) * token_embedding.value.transpose();
  return NextItemDistribution{nn::log_softmax_rows(logits)};
}

nn::ParamList SequenceModel::params() {
  nn::ParamList out{&token_embedding, &bos_embedding, &position_embedding};
  aux_proj.collect(out);
  ln_aux.collect(out);
  ln_tok.collect(out);
  for (auto& b : blocks) b.collect(out);
  ln_final.collect(out);
  return out;
}

void SequenceModel::save(std::ostream& out) const {
  binary::write_magic(out, kModelMagic);
  binary::write_u32(out, kModelVersion);
  for (int v : {config_.width, config_.layers, config_.heads, config_.max_positions, config_.num_slots,
                config_.vocab, config_.aux_dim, config_.ff_dim}) {
    binary::write_u32(out, static_cast<std::uint32_t>(v));
  }
  const auto params = const_cast<SequenceModel*>(this)->params();
  binary::write_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) binary::write_tensor(out, p->value);
}

void SequenceModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot create model file '" + path.string() + "'");
  save(out);
  if (!out) throw DataError("failed writing model file '" + path.string() + "'");
}

SequenceModel SequenceModel::load(std::istream& in) {
  binary::expect_magic(in, kModelMagic, "model checkpoint");
  const auto version = binary::read_u32(in, "model header");
  if (version != kModelVersion) throw DataError("unsupported model format version " + std::to_string(version));
  ModelConfig c;
  for (int* field : {&c.width, &c.layers, &c.heads, &c.max_positions, &c.num_slots, &c.vocab, &c.aux_dim,
                     &c.ff_dim}) {
    *field = static_cast<int>(binary::read_u32(in, "model header"));
  }
  SequenceModel model(c);
  auto params = model.params();
  if (binary::read_u32(in, "model header") != params.size()) {
    throw DataError("model checkpoint has the wrong tensor count");
  }
  for (auto* p : params) binary::read_tensor(in, p->value, p->name);
  if (!nn::all_finite(params)) throw DataError("model checkpoint contains non-finite values");
  return model;
}

SequenceModel SequenceModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file '" + path.string() + "'");
  try {
    return load(in);
  } catch (const DataError& err) {
    throw DataError(path.string() + ": " + err.what());
  }
}

double mean_ar_loss(const SequenceModel& model, std::span<const TokenizedSequence> data) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& raw : data) {
    const auto seq = truncate_to_recent(raw, model.config().max_items());
    const auto r = model.ar_loss(seq);
    total += r.loss * static_cast<double>(r.scored_positions());
    count += r.scored_positions();
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

ModelTrainResult train_model(SequenceModel& model, std::span<const TokenizedSequence> train,
                             std::span<const TokenizedSequence> eval,
                             const ModelTrainSettings& settings, Optimizer* optimizer,
                             const std::function<void(const EpochRecord&)>& on_epoch) {
  if (train.empty()) throw DataError("train_model: empty training set");
  if (settings.batch_size <= 0 || settings.epochs < 0 || settings.completed_epochs < 0) {
    throw ConfigError("train_model: batch size must be positive and epochs non-negative");
  }
  const int max_items = model.config().max_items();
  const int k_slots = model.config().num_slots;
  std::vector<TokenizedSequence> data;
  data.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].items.size() < 2) {
      throw DataError("train_model: training sequence " + std::to_string(i) + " has fewer than two items");
    }
    data.push_back(truncate_to_recent(train[i], max_items));
  }

  ModelTrainResult result;
  for (const auto& s : data) result.scored_tokens_per_epoch += static_cast<std::int64_t>(scored_count(s, k_slots));
  result.initial_train_loss = mean_ar_loss(model, data);
  result.initial_eval_loss = eval.empty() ? result.initial_train_loss : mean_ar_loss(model, eval);
  result.best_eval_loss = result.initial_eval_loss;

  std::optional<Optimizer> local;
  if (!optimizer) {
    local.emplace(model.params(), settings.optimizer);
    optimizer = &*local;
  }
  auto params = model.params();
  std::vector<nn::Matrix> best_values;
  if (settings.keep_best) {
    for (const auto* p : params) best_values.push_back(p->value);
  }

  Rng rng(mix_seed(settings.seed, 0x7e4));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int skipped = 0; skipped < settings.completed_epochs; ++skipped) shuffle(std::span(order), rng);
  int stalled = 0;
  const int last_epoch = settings.completed_epochs + settings.epochs;
  for (int epoch = settings.completed_epochs + 1; epoch <= last_epoch; ++epoch) {
    shuffle(std::span(order), rng);
    double epoch_total = 0.0;
    std::size_t epoch_count = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(settings.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(settings.batch_size));
      std::size_t batch_scored = 0;
      for (std::size_t i = start; i < end; ++i) batch_scored += scored_count(data[order[i]], k_slots);
      optimizer->zero_grad();
      for (std::size_t i = start; i < end; ++i) {
        const auto& seq = data[order[i]];
        const double n = static_cast<double>(scored_count(seq, k_slots));
        const auto r = model.accumulate_gradients(seq, n / static_cast<double>(batch_scored));
        epoch_total += r.loss * n;
      }
      epoch_count += batch_scored;
      optimizer->step();
      if (!nn::all_finite(params)) {
        throw DivergenceError("train_model: parameters became non-finite in epoch " + std::to_string(epoch));
      }
    }
    result.scored_tokens_processed += static_cast<std::int64_t>(epoch_count);
    EpochRecord rec{epoch, epoch_total / static_cast<double>(epoch_count), 0.0};
    rec.eval_loss = eval.empty() ? mean_ar_loss(model, data) : mean_ar_loss(model, eval);
    if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.eval_loss)) {
      throw DivergenceError("train_model: loss became non-finite in epoch " + std::to_string(epoch));
    }
    result.trace.push_back(rec);
    if (on_epoch) on_epoch(rec);

    const double previous_best = result.best_eval_loss;
    if (rec.eval_loss < result.best_eval_loss) {
      result.best_eval_loss = rec.eval_loss;
      result.best_epoch = epoch;
      if (settings.keep_best) {
        for (std::size_t i = 0; i < params.size(); ++i) best_values[i] = params[i]->value;
      }
    }
    const double improvement = (previous_best - rec.eval_loss) / std::abs(previous_best);
    stalled = improvement < settings.min_relative_improvement ? stalled + 1 : 0;
    if (settings.patience > 0 && stalled >= settings.patience) break;
  }
  if (settings.keep_best) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];
  }
  return result;
}

void write_loss_trace(std::ostream& out, std::span<const EpochRecord> trace) {
  for (const auto& r : trace) {
    out << r.epoch << ' ' << r.train_loss << ' ' << r.eval_loss << '\n';
  }
}

}  // namespace recgen
