#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "recgen/dataset.hpp"
#include "recgen/fsq.hpp"
#include "recgen/scaling.hpp"
#include "recgen/seq_model.hpp"
#include "recgen/synthetic.hpp"

namespace recgen::cli {

struct EmbedSettings {
  std::size_t dim = 64;
  std::uint64_t seed = 11;
};

struct BeamSettings {
  int width = 20;
  int top_n = 10;
};

struct EvalSettings {
  std::string protocol;  // "zero-shot" or "cold-start"
  std::uint64_t seed = 13;
  unsigned threads = 1;
  std::vector<int> cutoffs{1, 3, 5, 10};
};

// Every tunable of the pipeline. Built as defaults of the chosen profile,
// overridden by a JSON config file, overridden by command-line flags.
struct RunConfig {
  std::string profile = "desk";
  EmbedSettings embedding;
  FsqConfig fsq = FsqConfig::desk_profile();
  DecoderConfig decoder;
  QuantizerTrainSettings quantizer;
  ModelConfig model = ModelConfig::desk_profile();
  std::uint64_t model_init_seed = 3;
  ModelTrainSettings training;
  SplitSpec split;
  BeamSettings beam;
  EvalSettings evaluation;
  ScalingSettings scaling;
  SyntheticSpec synthetic;

  static RunConfig for_profile(const std::string& name);

  // Model fields that follow from the tokenizer: K, vocab and d_sub.
  void derive_model_shape();
  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
// Overrides only the keys present in `j`; unknown keys are ConfigErrors.
void apply_json(RunConfig& config, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace recgen::cli
