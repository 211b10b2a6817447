#include "support/fixtures.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unistd.h>

namespace recgen::testing {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("recgen_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ignored;
  fs::remove_all(path_, ignored);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

RankedRecommendations brute_force_topn(const NextItemDistribution& dist,
                                       const std::vector<ItemTokenSequence>& catalog, std::size_t n) {
  RankedRecommendations all;
  for (const auto& item : catalog) {
    double score = 0.0;
    for (std::size_t k = 0; k < item.tokens.size(); ++k) {
      score += dist.log_probs(static_cast<Eigen::Index>(k), item.tokens[k]);
    }
    all.push_back({item.item_id, score, item.tokens});
  }
  std::sort(all.begin(), all.end(), [](const RankedItem& a, const RankedItem& b) {
    if (a.log_score != b.log_score) return a.log_score > b.log_score;
    if (a.tokens != b.tokens) return a.tokens < b.tokens;
    return a.item_id < b.item_id;
  });
  if (all.size() > n) all.resize(n);
  return all;
}

NextItemDistribution random_distribution(int slots, int vocab, Rng& rng, bool coarse) {
  NextItemDistribution dist;
  dist.log_probs.resize(slots, vocab);
  for (int k = 0; k < slots; ++k) {
    std::vector<double> w(static_cast<std::size_t>(vocab));
    double total = 0.0;
    for (auto& v : w) {
      v = coarse ? static_cast<double>(1 + uniform_below(rng, 4)) : 0.05 + uniform01(rng);
      total += v;
    }
    for (int t = 0; t < vocab; ++t) {
      // Coarse values are multiples of 1/4, so sums are exact and ties are real.
      dist.log_probs(k, t) = coarse ? std::round(std::log(w[static_cast<std::size_t>(t)] / total) * 4.0) / 4.0
                                    : std::log(w[static_cast<std::size_t>(t)] / total);
    }
  }
  return dist;
}

std::vector<ItemTokenSequence> random_catalog(std::size_t items, int slots, int vocab, Rng& rng) {
  std::vector<ItemTokenSequence> out;
  out.reserve(items);
  for (std::size_t i = 0; i < items; ++i) {
    ItemTokenSequence s{"item" + std::to_string(i), {}};
    for (int k = 0; k < slots; ++k) s.tokens.push_back(static_cast<std::int32_t>(uniform_below(rng, vocab)));
    out.push_back(std::move(s));
  }
  return out;
}

EmbeddingCatalog random_embeddings(std::size_t items, std::size_t dim, Rng& rng) {
  EmbeddingCatalog catalog(dim);
  for (std::size_t i = 0; i < items; ++i) {
    std::vector<double> v(dim);
    double sq = 0.0;
    for (auto& x : v) {
      x = standard_normal(rng);
      sq += x * x;
    }
    for (auto& x : v) x /= std::sqrt(sq);
    catalog.add({"item" + std::to_string(i), std::move(v)});
  }
  return catalog;
}

TokenizedSequence random_sequence(const ModelConfig& config, int items, Rng& rng) {
  TokenizedSequence seq;
  for (int m = 0; m < items; ++m) {
    TokenizedItem item;
    for (int k = 0; k < config.num_slots; ++k) {
      item.tokens.push_back(static_cast<std::int32_t>(uniform_below(rng, config.vocab)));
    }
    for (int d = 0; d < config.aux_dim * config.num_slots; ++d) item.features.push_back(standard_normal(rng) * 0.3);
    seq.items.push_back(std::move(item));
  }
  return seq;
}

void randomize(const nn::ParamList& params, Rng& rng, double stddev) {
  for (auto* p : params) nn::fill_normal(p->value, rng, stddev);
}

GradientCheck check_gradients(const nn::ParamList& params, const std::function<double()>& loss, double step,
                              double rel_tol, double abs_floor) {
  GradientCheck result;
  for (auto* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& v = p->value.data()[i];
      const double saved = v;
      v = saved + step;
      const double up = loss();
      v = saved - step;
      const double down = loss();
      v = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p->grad.data()[i];
      const double diff = std::abs(analytic - numeric);
      const double scale = std::max(std::abs(analytic), std::abs(numeric));
      ++result.checked;
      if (diff > rel_tol * scale + abs_floor) ++result.failed;
      const double rel = scale > 0.0 ? diff / scale : 0.0;
      if (scale * rel_tol > abs_floor && rel > result.worst_relative_error) {
        result.worst_relative_error = rel;
        result.worst_param = p->name;
      }
    }
  }
  return result;
}

FrozenOffsetLoss::FrozenOffsetLoss(const FsqCodebook& codebook, const nn::Matrix& targets)
    : codebook_(codebook), count_(static_cast<double>(targets.size())) {
  const auto& cfg = codebook.config();
  const int sub = cfg.sub_dim();
  subs_.resize(targets.rows() * cfg.num_slots, sub);
  for (Eigen::Index b = 0; b < targets.rows(); ++b) {
    for (int k = 0; k < cfg.num_slots; ++k) subs_.row(b * cfg.num_slots + k) = targets.block(b, k * sub, 1, sub);
  }
  const nn::Matrix s = smooth();
  offsets_ = s.unaryExpr([](double x) { return static_cast<double>(round_half_away(x)); }) - s;
}

nn::Matrix FrozenOffsetLoss::smooth() const {
  const auto& levels = codebook_.config().levels;
  nn::Matrix z = codebook_.input_transform.forward(subs_);
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      z(r, j) = (levels[static_cast<std::size_t>(j)] - 1) / (1.0 + std::exp(-z(r, j)));
    }
  }
  return z;
}

double FrozenOffsetLoss::operator()() const {
  const nn::Matrix codes = smooth() + offsets_;
  const nn::Matrix recon = codebook_.decoder.forward(codebook_.output_transform.forward(codes), nullptr);
  return (recon - subs_).cwiseAbs().sum() / count_;
}

}  // namespace recgen::testing
