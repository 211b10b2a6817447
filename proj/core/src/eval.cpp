#include "recgen/eval.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <thread>

#include "recgen/error.hpp"
#include "recgen/rng.hpp"

namespace recgen {

MetricsReport compute_metrics(std::span<const std::size_t> ranks, std::span<const int> cutoffs,
                              std::string protocol) {
  if (ranks.empty()) throw DataError("compute_metrics: no ranks to evaluate");
  MetricsReport report;
  report.protocol = std::move(protocol);
  report.n_cases = ranks.size();
  for (int n : cutoffs) {
    if (n <= 0) throw ConfigError("metric cutoff must be positive");
    double hits = 0.0;
    double gain = 0.0;
    for (std::size_t r : ranks) {
      if (r == 0) throw DataError("compute_metrics: ranks are 1-based");
      if (r <= static_cast<std::size_t>(n)) {
        hits += 1.0;
        gain += 1.0 / std::log2(static_cast<double>(r) + 1.0);
      }
    }
    report.hit[n] = hits / static_cast<double>(ranks.size());
    report.ndcg[n] = gain / static_cast<double>(ranks.size());
  }
  return report;
}

TargetCatalog::TargetCatalog(const FsqCodebook& codebook, const EmbeddingCatalog& embeddings)
    : tokens_(codebook.tokenize(embeddings)),
      trie_(tokens_, codebook.config().num_slots),
      lookup_(embeddings, tokens_) {}

void check_compatible(const SequenceModel& model, const FsqCodebook& codebook) {
  const auto& m = model.config();
  const auto& f = codebook.config();
  if (m.num_slots != f.num_slots || m.vocab != f.codebook_size() || m.aux_dim != f.sub_dim()) {
    throw ConfigError("model (K=" + std::to_string(m.num_slots) + ", vocab=" + std::to_string(m.vocab) +
                      ", d_sub=" + std::to_string(m.aux_dim) + ") does not match codebook (K=" +
                      std::to_string(f.num_slots) + ", |C|=" + std::to_string(f.codebook_size()) +
                      ", d_sub=" + std::to_string(f.sub_dim()) + ")");
  }
}

std::vector<std::size_t> rank_cases(const SequenceModel& model, const TargetCatalog& catalog,
                                    std::span<const EvalCase> cases, unsigned threads) {
  std::vector<std::size_t> ranks(cases.size(), 0);
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < cases.size(); i += stride) {
      const auto history = catalog.lookup().sequence(cases[i].history);
      ranks[i] = rank_of_item(history, model, catalog.trie(), cases[i].target);
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, cases.size()))));
  if (threads == 1) {
    work(0, 1);
    return ranks;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          work(t, threads);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return ranks;
}

namespace {

void require_cases(const InteractionDataset& target) {
  if (target.empty()) throw DataError("evaluation: target dataset has no sequences");
}

}  // namespace

EvaluationResult evaluate_zero_shot(const SequenceModel& model, const FsqCodebook& codebook,
                                    const EmbeddingCatalog& target_items, const InteractionDataset& target,
                                    const EvalOptions& options) {
  require_cases(target);
  check_compatible(model, codebook);
  check_items_known(target, target_items);
  const TargetCatalog catalog(codebook, target_items);
  std::vector<EvalCase> cases;
  cases.reserve(target.size());
  for (const auto& seq : target.sequences) {
    cases.push_back(EvalCase{std::span(seq.items).first(seq.items.size() - 1), seq.items.back()});
  }
  EvaluationResult result;
  result.ranks = rank_cases(model, catalog, cases, options.threads);
  result.report = compute_metrics(result.ranks, options.cutoffs, "zero-shot");
  return result;
}

std::vector<std::size_t> cold_start_prefix_lengths(const InteractionDataset& data, std::uint64_t seed) {
  std::vector<std::size_t> lengths;
  lengths.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& seq = data.sequences[i];
    if (seq.items.size() < 2) throw DataError("cold-start: sequence of user '" + seq.user_id + "' is too short");
    Rng rng(mix_seed(seed, i));
    const std::size_t drawn = 1 + uniform_below(rng, 3);
    lengths.push_back(std::min(drawn, seq.items.size() - 1));
  }
  return lengths;
}

EvaluationResult evaluate_cold_start(const SequenceModel& model, const FsqCodebook& codebook,
                                     const EmbeddingCatalog& target_items, const InteractionDataset& target,
                                     std::uint64_t seed, const EvalOptions& options) {
  require_cases(target);
  check_compatible(model, codebook);
  check_items_known(target, target_items);
  const TargetCatalog catalog(codebook, target_items);
  const auto lengths = cold_start_prefix_lengths(target, seed);
  std::vector<EvalCase> cases;
  cases.reserve(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto& items = target.sequences[i].items;
    cases.push_back(EvalCase{std::span(items).first(lengths[i]), items[lengths[i]]});
  }
  EvaluationResult result;
  result.ranks = rank_cases(model, catalog, cases, options.threads);
  result.report = compute_metrics(result.ranks, options.cutoffs, "cold-start");
  return result;
}

}  // namespace recgen
