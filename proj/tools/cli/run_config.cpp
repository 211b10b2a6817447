#include "cli/run_config.hpp"

#include <fstream>
#include <set>

#include "recgen/error.hpp"
#include "recgen/optim.hpp"

namespace recgen::cli {

using nlohmann::json;

RunConfig RunConfig::for_profile(const std::string& name) {
  RunConfig c;
  c.profile = name;
  if (name == "desk") {
    c.fsq = FsqConfig::desk_profile();
    c.model = ModelConfig::desk_profile();
    c.embedding.dim = static_cast<std::size_t>(c.fsq.embedding_dim);
  } else if (name == "full") {
    c.fsq = FsqConfig::full_profile();
    c.model = ModelConfig::full_profile();
    c.embedding.dim = static_cast<std::size_t>(c.fsq.embedding_dim);
    c.synthetic.embedding_dim = c.embedding.dim;
  } else {
    throw ConfigError("unknown profile '" + name + "' (expected desk or full)");
  }
  c.derive_model_shape();
  return c;
}

void RunConfig::derive_model_shape() {
  model.num_slots = fsq.num_slots;
  model.vocab = static_cast<int>(fsq.codebook_size());
  model.aux_dim = fsq.sub_dim();
}

void RunConfig::validate() const {
  fsq.validate();
  model.validate();
  if (!(split.train_fraction > 0.0 && split.train_fraction < 1.0)) {
    throw ConfigError("split.train_fraction must lie in (0, 1)");
  }
  if (beam.width <= 0 || beam.top_n <= 0) throw ConfigError("beam width and top_n must be positive");
  if (evaluation.threads == 0) throw ConfigError("evaluation.threads must be positive");
  for (int n : evaluation.cutoffs) {
    if (n <= 0) throw ConfigError("evaluation cutoffs must be positive");
  }
}

namespace {

// Reads the keys of one JSON object into fields, rejecting unknown keys.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
  }

  template <typename T>
  Section& get(const char* key, T& field) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return *this;
    try {
      field = it->template get<T>();
    } catch (const json::exception& err) {
      throw ConfigError("config " + name_ + "." + key + ": " + err.what());
    }
    return *this;
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& at(const char* key) const { return j_.at(key); }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError("unknown config key '" + name_ + "." + key + "'");
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

json optimizer_json(const OptimizerSettings& o) {
  return {{"kind", to_string(o.kind)},   {"learning_rate", o.learning_rate}, {"beta1", o.beta1},
          {"beta2", o.beta2},            {"epsilon", o.epsilon},             {"clip_norm", o.clip_norm}};
}

void apply_optimizer(OptimizerSettings& o, const json& j, const std::string& name) {
  Section s(j, name);
  if (s.has("kind")) o.kind = optimizer_kind_from_string(s.at("kind").get<std::string>());
  s.get("learning_rate", o.learning_rate).get("beta1", o.beta1).get("beta2", o.beta2).get("epsilon", o.epsilon);
  s.get("clip_norm", o.clip_norm);
  s.finish();
}

json training_json(const ModelTrainSettings& t) {
  return {{"optimizer", optimizer_json(t.optimizer)},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"seed", t.seed},
          {"patience", t.patience},
          {"min_relative_improvement", t.min_relative_improvement},
          {"keep_best", t.keep_best}};
}

void apply_training(ModelTrainSettings& t, const json& j, const std::string& name) {
  Section s(j, name);
  if (s.has("optimizer")) apply_optimizer(t.optimizer, s.at("optimizer"), name + ".optimizer");
  s.get("epochs", t.epochs).get("batch_size", t.batch_size).get("seed", t.seed).get("patience", t.patience);
  s.get("min_relative_improvement", t.min_relative_improvement).get("keep_best", t.keep_best);
  s.finish();
}

}  // namespace

json to_json(const RunConfig& c) {
  json j;
  j["profile"] = c.profile;
  j["embedding"] = {{"dim", c.embedding.dim}, {"seed", c.embedding.seed}};
  j["fsq"] = {{"num_slots", c.fsq.num_slots},
              {"embedding_dim", c.fsq.embedding_dim},
              {"levels", c.fsq.levels},
              {"codebook_size", c.fsq.codebook_size()}};
  j["decoder"] = {{"width", c.decoder.width},
                  {"layers", c.decoder.layers},
                  {"heads", c.decoder.heads},
                  {"ff_dim", c.decoder.ff_dim}};
  j["quantizer"] = {{"epochs", c.quantizer.epochs},
                    {"batch_size", c.quantizer.batch_size},
                    {"learning_rate", c.quantizer.learning_rate},
                    {"clip_norm", c.quantizer.clip_norm},
                    {"seed", c.quantizer.seed},
                    {"optimizer", "sgd"}};
  j["model"] = {{"width", c.model.width},
                {"layers", c.model.layers},
                {"heads", c.model.heads},
                {"max_positions", c.model.max_positions},
                {"ff_dim", c.model.ff_dim},
                {"num_slots", c.model.num_slots},
                {"vocab", c.model.vocab},
                {"aux_dim", c.model.aux_dim},
                {"init_seed", c.model_init_seed},
                {"dropout", 0.0}};
  j["training"] = training_json(c.training);
  j["split"] = {{"train_fraction", c.split.train_fraction}, {"seed", c.split.seed}};
  j["beam"] = {{"width", c.beam.width}, {"top_n", c.beam.top_n}};
  j["evaluation"] = {{"protocol", c.evaluation.protocol},
                     {"seed", c.evaluation.seed},
                     {"threads", c.evaluation.threads},
                     {"cutoffs", c.evaluation.cutoffs},
                     {"tie_break", "score desc, then token sequence asc, then item_id asc"}};
  j["scaling"] = {{"fractions", c.scaling.fractions},
                  {"max_epochs", c.scaling.max_epochs},
                  {"patience", c.scaling.patience},
                  {"min_relative_improvement", c.scaling.min_relative_improvement},
                  {"subset_seed", c.scaling.subset_seed},
                  {"init_seed", c.scaling.init_seed},
                  {"training", training_json(c.scaling.train)}};
  const auto& s = c.synthetic;
  j["synthetic"] = {{"domains", s.domains},
                    {"items_per_domain", s.items_per_domain},
                    {"users_per_domain", s.users_per_domain},
                    {"min_length", s.min_length},
                    {"max_length", s.max_length},
                    {"num_concepts", s.num_concepts},
                    {"successors_per_concept", s.successors_per_concept},
                    {"words_per_concept", s.words_per_concept},
                    {"embedding_dim", s.embedding_dim},
                    {"seed", s.seed},
                    {"embedding_seed", s.embedding_seed}};
  return j;
}

void apply_json(RunConfig& c, const json& j) {
  Section top(j, "config");
  top.has("profile");  // chosen before the file is applied
  if (top.has("embedding")) {
    Section s(j.at("embedding"), "embedding");
    s.get("dim", c.embedding.dim).get("seed", c.embedding.seed).finish();
  }
  if (top.has("fsq")) {
    Section s(j.at("fsq"), "fsq");
    s.get("num_slots", c.fsq.num_slots).get("embedding_dim", c.fsq.embedding_dim).get("levels", c.fsq.levels);
    s.has("codebook_size");  // derived, echoed in manifests
    s.finish();
  }
  if (top.has("decoder")) {
    Section s(j.at("decoder"), "decoder");
    s.get("width", c.decoder.width).get("layers", c.decoder.layers).get("heads", c.decoder.heads);
    s.get("ff_dim", c.decoder.ff_dim).finish();
  }
  if (top.has("quantizer")) {
    Section s(j.at("quantizer"), "quantizer");
    s.get("epochs", c.quantizer.epochs).get("batch_size", c.quantizer.batch_size);
    s.get("learning_rate", c.quantizer.learning_rate).get("clip_norm", c.quantizer.clip_norm);
    s.get("seed", c.quantizer.seed);
    if (s.has("optimizer") && j.at("quantizer").at("optimizer") != "sgd") {
      throw ConfigError("quantizer.optimizer: only sgd is supported");
    }
    s.finish();
  }
  if (top.has("model")) {
    Section s(j.at("model"), "model");
    s.get("width", c.model.width).get("layers", c.model.layers).get("heads", c.model.heads);
    s.get("max_positions", c.model.max_positions).get("ff_dim", c.model.ff_dim).get("init_seed", c.model_init_seed);
    // Shape fields that follow from the tokenizer are accepted but rederived.
    s.has("num_slots");
    s.has("vocab");
    s.has("aux_dim");
    if (s.has("dropout") && j.at("model").at("dropout") != 0.0) throw ConfigError("model.dropout: only 0 is supported");
    s.finish();
  }
  if (top.has("training")) apply_training(c.training, j.at("training"), "training");
  if (top.has("split")) {
    Section s(j.at("split"), "split");
    s.get("train_fraction", c.split.train_fraction).get("seed", c.split.seed).finish();
  }
  if (top.has("beam")) {
    Section s(j.at("beam"), "beam");
    s.get("width", c.beam.width).get("top_n", c.beam.top_n).finish();
  }
  if (top.has("evaluation")) {
    Section s(j.at("evaluation"), "evaluation");
    s.get("protocol", c.evaluation.protocol).get("seed", c.evaluation.seed).get("threads", c.evaluation.threads);
    s.get("cutoffs", c.evaluation.cutoffs);
    s.has("tie_break");
    s.finish();
  }
  if (top.has("scaling")) {
    Section s(j.at("scaling"), "scaling");
    s.get("fractions", c.scaling.fractions).get("max_epochs", c.scaling.max_epochs);
    s.get("patience", c.scaling.patience).get("min_relative_improvement", c.scaling.min_relative_improvement);
    s.get("subset_seed", c.scaling.subset_seed).get("init_seed", c.scaling.init_seed);
    if (s.has("training")) apply_training(c.scaling.train, j.at("scaling").at("training"), "scaling.training");
    s.finish();
  }
  if (top.has("synthetic")) {
    auto& sp = c.synthetic;
    Section s(j.at("synthetic"), "synthetic");
    s.get("domains", sp.domains).get("items_per_domain", sp.items_per_domain);
    s.get("users_per_domain", sp.users_per_domain).get("min_length", sp.min_length).get("max_length", sp.max_length);
    s.get("num_concepts", sp.num_concepts).get("successors_per_concept", sp.successors_per_concept);
    s.get("words_per_concept", sp.words_per_concept).get("embedding_dim", sp.embedding_dim);
    s.get("seed", sp.seed).get("embedding_seed", sp.embedding_seed).finish();
  }
  top.finish();
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& err) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + err.what());
  }
}

}  // namespace recgen::cli
