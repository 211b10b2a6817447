#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "recgen/decoder.hpp"
#include "recgen/embedding.hpp"
#include "recgen/fsq.hpp"
#include "recgen/nn.hpp"
#include "recgen/rng.hpp"
#include "recgen/seq_model.hpp"

namespace recgen::testing {

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& path);

// Brute-force ranking: score every catalog item independently, sort by
// score desc, tokens asc, item id asc and keep the first n.
RankedRecommendations brute_force_topn(const NextItemDistribution& dist,
                                       const std::vector<ItemTokenSequence>& catalog, std::size_t n);

// Random log-probability rows. With `coarse`, probabilities come from a
// handful of dyadic values so that exact score ties are common.
NextItemDistribution random_distribution(int slots, int vocab, Rng& rng, bool coarse);

std::vector<ItemTokenSequence> random_catalog(std::size_t items, int slots, int vocab, Rng& rng);

// Random unit vectors with ids "item<i>".
EmbeddingCatalog random_embeddings(std::size_t items, std::size_t dim, Rng& rng);

TokenizedSequence random_sequence(const ModelConfig& config, int items, Rng& rng);

// Every parameter entry set to N(0, stddev); used before gradient checks so
// that zero-initialised tensors also carry signal.
void randomize(const nn::ParamList& params, Rng& rng, double stddev);

struct GradientCheck {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst_relative_error = 0.0;
  std::string worst_param;
};

// Compares accumulated gradients in `params` against central differences of
// `loss`, entry by entry. An entry passes when
// |analytic - numeric| <= rel_tol * max(|analytic|, |numeric|) + abs_floor.
// The floor only absorbs difference noise on gradients that are zero or
// nearly so; worst_relative_error covers entries the floor cannot mask.
GradientCheck check_gradients(const nn::ParamList& params, const std::function<double()>& loss, double step,
                              double rel_tol, double abs_floor);

// L1 reconstruction loss of a batch where every quantized value is the
// smooth surrogate plus a frozen offset (rounded - surrogate at the time the
// offsets were taken). Its exact gradient equals the straight-through one.
class FrozenOffsetLoss {
 public:
  FrozenOffsetLoss(const FsqCodebook& codebook, const nn::Matrix& targets);
  double operator()() const;

 private:
  nn::Matrix smooth() const;

  const FsqCodebook& codebook_;
  nn::Matrix subs_;
  nn::Matrix offsets_;
  double count_;
};

}  // namespace recgen::testing
