#include "cli/commands.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cli/manifest.hpp"
#include "cli/run_config.hpp"
#include "recgen/dataset.hpp"
#include "recgen/decoder.hpp"
#include "recgen/embedding.hpp"
#include "recgen/error.hpp"
#include "recgen/eval.hpp"
#include "recgen/fsq.hpp"
#include "recgen/scaling.hpp"
#include "recgen/seq_model.hpp"
#include "recgen/synthetic.hpp"

namespace recgen::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

// Flags that override config fields; applied after the config file.
class Overrides {
 public:
  template <typename T>
  CLI::Option* add(CLI::App* app, const std::string& name, const std::string& help,
                   std::function<void(RunConfig&, const T&)> apply) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app->add_option(name, *value, help);
    fns_.push_back([opt, value, apply](RunConfig& c) {
      if (opt->count() > 0) apply(c, *value);
    });
    return opt;
  }

  CLI::Option* add_flag(CLI::App* app, const std::string& name, const std::string& help,
                        std::function<void(RunConfig&)> apply) {
    CLI::Option* opt = app->add_flag(name, help);
    fns_.push_back([opt, apply](RunConfig& c) {
      if (opt->count() > 0) apply(c);
    });
    return opt;
  }

  void apply(RunConfig& c) const {
    for (const auto& f : fns_) f(c);
  }

 private:
  std::vector<std::function<void(RunConfig&)>> fns_;
};

struct Paths {
  std::string config;
  std::string profile;
  std::string items, embeddings, codebook, tokens, dataset, model, out, trace, resume, heldout, out_dir;
  std::string history;
  bool self_test = false;
  std::vector<double> planted{50.0, 0.5, 2.0};
  double planted_noise = 0.0;
};

RunConfig build_config(const Paths& p, const Overrides& overrides) {
  std::optional<json> file;
  if (!p.config.empty()) file = read_json_file(p.config);
  std::string profile = "desk";
  if (file && file->contains("profile")) profile = (*file)["profile"].get<std::string>();
  if (!p.profile.empty()) profile = p.profile;
  RunConfig c = RunConfig::for_profile(profile);
  if (file) apply_json(c, *file);
  overrides.apply(c);
  c.derive_model_shape();
  c.validate();
  return c;
}

const fs::path& require_file(const fs::path& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " path is required");
  if (!fs::is_regular_file(path)) throw DataError(what + " '" + path.string() + "' does not exist");
  return path;
}

void require_output(const fs::path& path, const std::string& flag) {
  if (path.empty()) throw ConfigError(flag + " is required");
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

template <typename Writer>
void write_text(const fs::path& target, Writer&& writer) {
  write_atomically(target, [&](const fs::path& tmp) {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot create '" + tmp.string() + "'");
    out.precision(std::numeric_limits<double>::max_digits10);
    writer(out);
    if (!out) throw DataError("failed writing '" + target.string() + "'");
  });
}

json metrics_json(const MetricsReport& r) {
  json hit = json::object();
  json ndcg = json::object();
  for (const auto& [n, v] : r.hit) hit[std::to_string(n)] = v;
  for (const auto& [n, v] : r.ndcg) ndcg[std::to_string(n)] = v;
  return {{"protocol", r.protocol}, {"n_cases", r.n_cases}, {"hit", hit}, {"ndcg", ndcg}};
}

std::size_t distinct_sequences(const std::vector<ItemTokenSequence>& tokens) {
  std::set<std::vector<std::int32_t>> seen;
  for (const auto& t : tokens) seen.insert(t.tokens);
  return seen.size();
}

// ---------------------------------------------------------------------------

int cmd_synth(const RunConfig& c, const Paths& p, std::ostream& out) {
  require_output(p.out_dir, "--out-dir");
  const fs::path dir(p.out_dir);
  if (!fs::is_directory(dir)) throw DataError("output directory '" + dir.string() + "' does not exist");
  const auto corpus = generate_synthetic_corpus(c.synthetic);
  Manifest manifest("synth", to_json(c));
  for (const auto& data : corpus.datasets) {
    std::vector<ItemText> texts;
    for (const auto& item : corpus.items) {
      if (item.domain == data.domain_tag) texts.push_back({item.item_id, item.text});
    }
    const auto items_path = dir / (data.domain_tag + ".items.txt");
    const auto data_path = dir / (data.domain_tag + ".dataset.txt");
    write_atomically(items_path, [&](const fs::path& tmp) { write_item_texts(tmp, texts); });
    write_atomically(data_path, [&](const fs::path& tmp) { write_dataset(tmp, data); });
    manifest.add_output(data.domain_tag + ".items", items_path);
    manifest.add_output(data.domain_tag + ".dataset", data_path);
    out << data.domain_tag << ": " << texts.size() << " items, " << data.size() << " sequences\n";
  }
  json structure;
  structure["concept_phrases"] = corpus.concept_phrases;
  structure["transitions"] = corpus.transitions;
  json concepts = json::object();
  for (const auto& item : corpus.items) concepts[item.item_id] = item.concept_id;
  structure["item_concepts"] = concepts;
  const auto structure_path = dir / "corpus.json";
  write_text(structure_path, [&](std::ostream& o) { o << structure.dump(1) << '\n'; });
  manifest.add_output("structure", structure_path);
  manifest.write(structure_path);
  return kExitOk;
}

int cmd_embed(const RunConfig& c, const Paths& p, std::ostream& out) {
  require_output(p.out, "--out");
  const fs::path items_path = require_file(p.items, "item text file");
  const auto texts = load_item_texts(items_path);
  if (c.embedding.dim == 0) throw ConfigError("embedding dimension must be positive");
  EmbeddingCatalog catalog(c.embedding.dim);
  for (const auto& t : texts) catalog.add(stub_embed(t.item_id, t.text, c.embedding.dim, c.embedding.seed));
  const fs::path target(p.out);
  write_atomically(target, [&](const fs::path& tmp) {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    write_embeddings(f, catalog, embedding_format_for(target));
    if (!f) throw DataError("failed writing '" + target.string() + "'");
  });
  Manifest manifest("embed", to_json(c));
  manifest.add_input("items", items_path);
  manifest.add_output("embeddings", target);
  manifest.results()["count"] = catalog.size();
  manifest.results()["dim"] = catalog.dim();
  manifest.results()["l2_normalized"] = true;
  manifest.write(target);
  out << "embedded " << catalog.size() << " items (d_L=" << catalog.dim() << ") -> " << target.string() << '\n';
  return kExitOk;
}

int cmd_train_tokenizer(const RunConfig& c, const Paths& p, std::ostream& out) {
  require_output(p.out, "--out");
  const fs::path emb_path = require_file(p.embeddings, "embedding file");
  const auto catalog = load_embeddings(emb_path);
  if (static_cast<int>(catalog.dim()) != c.fsq.embedding_dim) {
    throw ConfigError("embedding file has d_L=" + std::to_string(catalog.dim()) + " but fsq.embedding_dim is " +
                      std::to_string(c.fsq.embedding_dim));
  }
  const auto start = Clock::now();
  const auto result = train_quantizer(catalog, c.fsq, c.quantizer, c.decoder);
  const double seconds = seconds_since(start);

  const fs::path target(p.out);
  write_atomically(target, [&](const fs::path& tmp) { result.codebook.save(tmp); });
  const fs::path trace = p.trace.empty() ? fs::path(p.out + ".trace.txt") : fs::path(p.trace);
  write_text(trace, [&](std::ostream& o) {
    o << 0 << ' ' << result.initial_loss << '\n';
    for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) o << (e + 1) << ' ' << result.epoch_losses[e] << '\n';
  });

  const auto tokens = result.codebook.tokenize(catalog);
  const auto distinct = distinct_sequences(tokens);
  bool unit_norm = true;
  for (const auto& e : catalog.entries()) {
    double sq = 0.0;
    for (double v : e.vector) sq += v * v;
    unit_norm = unit_norm && std::abs(std::sqrt(sq) - 1.0) < 1e-6;
  }

  Manifest manifest("train-tokenizer", to_json(c));
  manifest.add_input("embeddings", emb_path);
  manifest.add_output("codebook", target);
  manifest.add_output("trace", trace);
  auto& r = manifest.results();
  r["initial_loss"] = result.initial_loss;
  r["final_loss"] = result.final_loss();
  r["loss_ratio"] = result.final_loss() / result.initial_loss;
  r["items"] = catalog.size();
  r["distinct_sequences"] = distinct;
  r["distinct_ratio"] = static_cast<double>(distinct) / static_cast<double>(catalog.size());
  r["embeddings_unit_norm"] = unit_norm;
  r["seconds"] = seconds;
  manifest.extra()["machine"] = machine_info();
  manifest.write(target);
  out << "L1 loss " << result.initial_loss << " -> " << result.final_loss() << " (ratio "
      << result.final_loss() / result.initial_loss << "), distinct token sequences " << distinct << '/'
      << catalog.size() << ", " << std::fixed << std::setprecision(1) << seconds << " s\n";
  out.unsetf(std::ios::fixed);
  return kExitOk;
}

int cmd_tokenize(const RunConfig& c, const Paths& p, std::ostream& out) {
  require_output(p.out, "--out");
  const fs::path cb_path = require_file(p.codebook, "codebook");
  const fs::path emb_path = require_file(p.embeddings, "embedding file");
  const auto codebook = FsqCodebook::load(cb_path);
  const auto catalog = load_embeddings(emb_path, static_cast<std::size_t>(codebook.config().embedding_dim));
  Manifest manifest("tokenize", to_json(c));
  if (!p.dataset.empty()) {
    const auto data = load_dataset(require_file(p.dataset, "dataset"));
    check_items_known(data, catalog);
    manifest.add_input("dataset", p.dataset);
  }
  const auto tokens = codebook.tokenize(catalog);
  const fs::path target(p.out);
  write_atomically(target, [&](const fs::path& tmp) { write_token_catalog(tmp, tokens); });
  const auto distinct = distinct_sequences(tokens);
  manifest.add_input("codebook", cb_path);
  manifest.add_input("embeddings", emb_path);
  manifest.add_output("tokens", target);
  manifest.results()["items"] = tokens.size();
  manifest.results()["distinct_sequences"] = distinct;
  manifest.results()["codebook_size"] = codebook.config().codebook_size();
  manifest.write(target);
  out << "tokenized " << tokens.size() << " items (" << distinct << " distinct sequences) -> " << target.string()
      << '\n';
  return kExitOk;
}

struct TrainingInputs {
  EmbeddingCatalog embeddings{1};
  std::vector<ItemTokenSequence> tokens;
  InteractionDataset data;
  std::string codebook_digest;
};

// Loads tokens, embeddings and dataset for training, with consistency and
// staleness checks. Adopts the codebook's shape when one is given.
TrainingInputs load_training_inputs(RunConfig& c, const Paths& p, Manifest& manifest) {
  TrainingInputs in;
  const fs::path tok_path = require_file(p.tokens, "token catalog");
  const fs::path emb_path = require_file(p.embeddings, "embedding file");
  const fs::path data_path = require_file(p.dataset, "dataset");
  if (!p.codebook.empty()) {
    const auto codebook = FsqCodebook::load(require_file(p.codebook, "codebook"));
    c.fsq = codebook.config();
    c.derive_model_shape();
    c.validate();
    manifest.add_input("codebook", p.codebook);
    in.codebook_digest = manifest.input_digest("codebook");
  }
  in.embeddings = load_embeddings(emb_path, static_cast<std::size_t>(c.fsq.embedding_dim));
  manifest.add_input("embeddings", emb_path);
  manifest.add_input("tokens", tok_path);
  manifest.add_input("dataset", data_path);

  if (const auto tok_manifest = read_manifest(tok_path)) {
    const auto recorded_emb = recorded_digest(*tok_manifest, "embeddings");
    if (!recorded_emb.empty() && recorded_emb != manifest.input_digest("embeddings")) {
      throw DataError("token catalog '" + tok_path.string() +
                      "' was produced from a different embedding file (stale artifact)");
    }
    const auto recorded_cb = recorded_digest(*tok_manifest, "codebook");
    if (!in.codebook_digest.empty() && !recorded_cb.empty() && recorded_cb != in.codebook_digest) {
      throw DataError("token catalog '" + tok_path.string() + "' was produced by a different codebook (stale artifact)");
    }
    if (in.codebook_digest.empty()) in.codebook_digest = recorded_cb;
  }

  in.tokens = read_token_catalog(tok_path, c.fsq.num_slots);
  for (const auto& t : in.tokens) {
    for (auto tok : t.tokens) {
      if (tok >= c.model.vocab) {
        throw DataError("item '" + t.item_id + "' has token " + std::to_string(tok) + " outside the vocabulary of " +
                        std::to_string(c.model.vocab));
      }
    }
  }
  in.data = load_dataset(data_path);
  check_items_known(in.data, in.embeddings);
  return in;
}

int cmd_train(RunConfig c, const Paths& p, std::ostream& out) {
  require_output(p.out, "--out");
  Manifest manifest("train", json::object());
  auto in = load_training_inputs(c, p, manifest);
  const ItemLookup lookup(in.embeddings, in.tokens);
  const auto [train_set, heldout] = split_dataset(in.data, c.split);
  const auto train = tokenize_dataset(train_set, lookup);
  const auto eval = tokenize_dataset(heldout, lookup);

  std::optional<SequenceModel> model;
  if (!p.resume.empty()) {
    model.emplace(SequenceModel::load(require_file(p.resume, "resume checkpoint")));
    const auto& m = model->config();
    if (m.vocab != c.model.vocab || m.num_slots != c.model.num_slots || m.aux_dim != c.model.aux_dim) {
      throw ConfigError("resume checkpoint shape does not match the token catalog");
    }
    c.model = m;
    manifest.add_input("resume", p.resume);
    if (const auto previous = read_manifest(p.resume)) {
      c.training.completed_epochs = previous->value("results", json::object()).value("epochs_completed", 0);
    }
  } else {
    model.emplace(c.model, c.model_init_seed);
  }
  Optimizer optimizer(model->params(), c.training.optimizer);
  const fs::path resume_state(p.resume + ".optim");
  if (!p.resume.empty() && fs::is_regular_file(resume_state)) {
    std::ifstream state(resume_state, std::ios::binary);
    optimizer.load_state(state);
    manifest.add_input("resume_optimizer", resume_state);
  }

  const auto start = Clock::now();
  const auto result = train_model(*model, train, eval, c.training, &optimizer, [&](const EpochRecord& r) {
    out << "epoch " << r.epoch << " train " << r.train_loss << " eval " << r.eval_loss << '\n' << std::flush;
  });
  const double seconds = seconds_since(start);

  const fs::path target(p.out);
  write_atomically(target, [&](const fs::path& tmp) { model->save(tmp); });
  const fs::path state_path(p.out + ".optim");
  write_atomically(state_path, [&](const fs::path& tmp) {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    optimizer.save_state(f);
  });
  const fs::path trace = p.trace.empty() ? fs::path(p.out + ".trace.txt") : fs::path(p.trace);
  write_text(trace, [&](std::ostream& o) { write_loss_trace(o, result.trace); });
  if (!p.heldout.empty()) {
    write_atomically(p.heldout, [&](const fs::path& tmp) { write_dataset(tmp, heldout); });
    manifest.add_output("heldout", p.heldout);
  }

  manifest.extra()["config"] = to_json(c);
  manifest.extra()["codebook_sha256"] = in.codebook_digest;
  manifest.extra()["machine"] = machine_info();
  manifest.add_output("model", target);
  manifest.add_output("optimizer_state", state_path);
  manifest.add_output("trace", trace);
  auto& r = manifest.results();
  r["train_sequences"] = train.size();
  r["eval_sequences"] = eval.size();
  r["initial_train_loss"] = result.initial_train_loss;
  r["initial_eval_loss"] = result.initial_eval_loss;
  r["final_train_loss"] = result.trace.empty() ? result.initial_train_loss : result.trace.back().train_loss;
  r["final_eval_loss"] = result.trace.empty() ? result.initial_eval_loss : result.trace.back().eval_loss;
  r["best_eval_loss"] = result.best_eval_loss;
  r["best_epoch"] = result.best_epoch;
  r["epochs_run"] = result.trace.size();
  r["epochs_completed"] = c.training.completed_epochs + static_cast<int>(result.trace.size());
  r["scored_tokens_processed"] = result.scored_tokens_processed;
  r["seconds"] = seconds;
  manifest.write(target);
  out << "trained " << result.trace.size() << " epochs in " << std::fixed << std::setprecision(1) << seconds
      << " s -> " << target.string() << '\n';
  out.unsetf(std::ios::fixed);
  return kExitOk;
}

int cmd_evaluate(const RunConfig& c, const Paths& p, std::ostream& out) {
  const auto& protocol = c.evaluation.protocol;
  if (protocol.empty()) throw ConfigError("--protocol is required (zero-shot or cold-start)");
  if (protocol != "zero-shot" && protocol != "cold-start") {
    throw ConfigError("unknown protocol '" + protocol + "' (expected zero-shot or cold-start)");
  }
  require_output(p.out, "--out");
  const fs::path model_path = require_file(p.model, "model checkpoint");
  const fs::path cb_path = require_file(p.codebook, "codebook");
  const fs::path emb_path = require_file(p.embeddings, "embedding file");
  const fs::path data_path = require_file(p.dataset, "dataset");

  const auto model = SequenceModel::load(model_path);
  const auto codebook = FsqCodebook::load(cb_path);
  check_compatible(model, codebook);
  Manifest manifest("evaluate", to_json(c));
  manifest.add_input("model", model_path);
  manifest.add_input("codebook", cb_path);
  manifest.add_input("embeddings", emb_path);
  manifest.add_input("dataset", data_path);
  if (const auto model_manifest = read_manifest(model_path)) {
    const auto recorded = model_manifest->value("codebook_sha256", std::string{});
    if (!recorded.empty() && recorded != manifest.input_digest("codebook")) {
      throw DataError("model '" + model_path.string() + "' was trained against a different codebook (stale artifact)");
    }
  }
  const auto embeddings = load_embeddings(emb_path, static_cast<std::size_t>(codebook.config().embedding_dim));
  const auto data = load_dataset(data_path);

  EvalOptions options{c.evaluation.cutoffs, c.evaluation.threads};
  json report;
  EvaluationResult primary;
  if (protocol == "zero-shot") {
    primary = evaluate_zero_shot(model, codebook, embeddings, data, options);
  } else {
    primary = evaluate_cold_start(model, codebook, embeddings, data, c.evaluation.seed, options);
    const auto full = evaluate_zero_shot(model, codebook, embeddings, data, options);
    auto companion = metrics_json(full.report);
    companion["protocol"] = "full-history";
    report["full_history"] = companion;
    std::map<std::size_t, std::size_t> histogram;
    for (auto len : cold_start_prefix_lengths(data, c.evaluation.seed)) ++histogram[len];
    json lengths = json::object();
    for (const auto& [len, count] : histogram) lengths[std::to_string(len)] = count;
    report["prefix_lengths"] = lengths;
  }
  const auto metrics = metrics_json(primary.report);
  for (const auto& [key, value] : metrics.items()) report[key] = value;
  report["seed"] = c.evaluation.seed;
  report["catalog_size"] = embeddings.size();
  json baseline = json::object();
  for (int n : c.evaluation.cutoffs) {
    baseline[std::to_string(n)] = std::min(1.0, static_cast<double>(n) / static_cast<double>(embeddings.size()));
  }
  report["random_hit_baseline"] = baseline;
  report["tie_break"] = "score desc, then token sequence asc, then item_id asc";
  manifest.add_output("report", p.out);
  report["manifest"] = manifest.json();

  write_text(p.out, [&](std::ostream& o) { o << report.dump(2) << '\n'; });
  manifest.write(p.out);
  out << protocol << " on " << primary.report.n_cases << " cases:";
  for (const auto& [n, v] : primary.report.hit) out << " Hit@" << n << '=' << v;
  for (const auto& [n, v] : primary.report.ndcg) out << " NDCG@" << n << '=' << v;
  out << '\n';
  return kExitOk;
}

int cmd_scaling(RunConfig c, const Paths& p, std::ostream& out) {
  require_output(p.out, "--out");
  if (p.self_test) {
    if (p.planted.size() != 3) throw ConfigError("--planted takes three values a,b,c");
    std::vector<double> tokens;
    for (double f : c.scaling.fractions) tokens.push_back(std::round(f * 40000.0));
    const auto losses = planted_losses(tokens, p.planted[0], p.planted[1], p.planted[2], p.planted_noise, 1);
    const auto fit = fit_power_law(tokens, losses);
    const double rel = fit.status == PowerLawFit::Status::kOk ? std::abs(fit.b - p.planted[1]) / p.planted[1]
                                                              : std::numeric_limits<double>::infinity();
    json result{{"planted", {{"a", p.planted[0]}, {"b", p.planted[1]}, {"c", p.planted[2]}}},
                {"noise", p.planted_noise},
                {"tokens", tokens},
                {"losses", losses},
                {"fit", {{"status", to_string(fit.status)}, {"a", fit.a}, {"b", fit.b}, {"c", fit.c},
                         {"r_squared", fit.r_squared}}},
                {"exponent_relative_error", rel},
                {"passed", rel <= 0.1}};
    write_text(p.out, [&](std::ostream& o) { o << result.dump(2) << '\n'; });
    Manifest manifest("scaling --self-test", to_json(c));
    manifest.add_output("result", p.out);
    manifest.write(p.out);
    out << "planted b=" << p.planted[1] << " recovered b=" << fit.b << " (relative error " << rel << ")\n";
    return rel <= 0.1 ? kExitOk : kExitFailure;
  }

  Manifest manifest("scaling", json::object());
  auto in = load_training_inputs(c, p, manifest);
  const ItemLookup lookup(in.embeddings, in.tokens);
  const auto [train_set, heldout] = split_dataset(in.data, c.split);
  const auto train = tokenize_dataset(train_set, lookup);
  const auto eval = tokenize_dataset(heldout, lookup);
  ScalingSettings settings = c.scaling;
  settings.on_epoch = [&](double fraction, const EpochRecord& r) {
    out << "fraction " << fraction << " epoch " << r.epoch << " eval " << r.eval_loss << '\n' << std::flush;
  };
  const auto start = Clock::now();
  const auto result = run_scaling_experiment(train, eval, c.model, settings);
  write_text(p.out, [&](std::ostream& o) { write_scaling_result(o, result); });

  manifest.extra()["config"] = to_json(c);
  manifest.extra()["machine"] = machine_info();
  manifest.add_output("result", p.out);
  json points = json::array();
  for (const auto& pt : result.points) {
    points.push_back({{"fraction", pt.fraction},
                      {"sequences", pt.sequences},
                      {"tokens", pt.tokens},
                      {"tokens_processed", pt.tokens_processed},
                      {"eval_loss", pt.eval_loss},
                      {"epochs_run", pt.epochs_run},
                      {"ok", pt.ok},
                      {"failure", pt.failure}});
  }
  auto& r = manifest.results();
  r["points"] = points;
  r["fit"] = {{"status", to_string(result.fit.status)}, {"a", result.fit.a},
              {"b", result.fit.b},                      {"c", result.fit.c},
              {"r_squared", result.fit.r_squared},      {"message", result.fit.message}};
  r["tokens_axis"] = "scored target tokens in the training subset";
  r["seconds"] = seconds_since(start);
  manifest.write(p.out);
  for (const auto& pt : result.points) {
    out << "fraction " << pt.fraction << ": "
        << (pt.ok ? "eval loss " + std::to_string(pt.eval_loss) : "failed: " + pt.failure) << '\n';
  }
  out << "fit: " << to_string(result.fit.status);
  if (result.fit.status == PowerLawFit::Status::kOk) out << " b=" << result.fit.b << " r2=" << result.fit.r_squared;
  out << '\n';
  return result.failures() > 0 ? kExitPartial : kExitOk;
}

int cmd_recommend(const RunConfig& c, const Paths& p, std::ostream& out) {
  const auto model = SequenceModel::load(require_file(p.model, "model checkpoint"));
  const auto codebook = FsqCodebook::load(require_file(p.codebook, "codebook"));
  check_compatible(model, codebook);
  const auto embeddings = load_embeddings(require_file(p.embeddings, "embedding file"),
                                          static_cast<std::size_t>(codebook.config().embedding_dim));
  std::vector<std::string> history;
  std::stringstream ids(p.history);
  for (std::string id; std::getline(ids, id, ',');) {
    if (!id.empty()) history.push_back(id);
  }
  if (history.empty()) throw ConfigError("--history needs at least one item id");
  const TargetCatalog catalog(codebook, embeddings);
  const auto recs = decode_topn(catalog.lookup().sequence(history), model, catalog.trie(), c.beam.width,
                                c.beam.top_n);
  if (p.out.empty()) {
    write_recommendations(out, recs);
  } else {
    write_text(p.out, [&](std::ostream& o) { write_recommendations(o, recs); });
  }
  return kExitOk;
}

void add_common(CLI::App* sub, Paths& p) {
  sub->add_option("--config", p.config, "JSON config file (overrides profile defaults)");
  sub->add_option("--profile", p.profile, "Default profile: desk or full");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"recgen: text-token generative recommendation pipeline"};
  app.require_subcommand(1);
  Paths p;
  Overrides ov;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic multi-domain corpus");
  add_common(synth, p);
  synth->add_option("--out-dir", p.out_dir, "Directory for items, datasets and corpus.json");
  ov.add<std::vector<std::string>>(synth, "--domains", "Comma-separated domain names",
                                   [](RunConfig& c, const auto& v) { c.synthetic.domains = v; })
      ->delimiter(',');
  ov.add<int>(synth, "--items-per-domain", "Items per domain",
              [](RunConfig& c, const int& v) { c.synthetic.items_per_domain = v; });
  ov.add<int>(synth, "--users", "Users per domain", [](RunConfig& c, const int& v) { c.synthetic.users_per_domain = v; });
  ov.add<int>(synth, "--concepts", "Number of shared concepts",
              [](RunConfig& c, const int& v) { c.synthetic.num_concepts = v; });
  ov.add<std::uint64_t>(synth, "--seed", "Corpus seed", [](RunConfig& c, const std::uint64_t& v) { c.synthetic.seed = v; });

  auto* embed = app.add_subcommand("embed", "Stub-embed an item text file");
  add_common(embed, p);
  embed->add_option("--items", p.items, "Item text file: `item_id text...` per line");
  embed->add_option("--out", p.out, "Embedding file (.bin for binary, text otherwise)");
  ov.add<std::size_t>(embed, "--dim", "Embedding dimension d_L",
                      [](RunConfig& c, const std::size_t& v) { c.embedding.dim = v; });
  ov.add<std::uint64_t>(embed, "--seed", "Hash seed", [](RunConfig& c, const std::uint64_t& v) { c.embedding.seed = v; });

  auto* train_tok = app.add_subcommand("train-tokenizer", "Train the FSQ codebook on an embedding file");
  add_common(train_tok, p);
  train_tok->add_option("--embeddings", p.embeddings, "Embedding file");
  train_tok->add_option("--out", p.out, "Codebook checkpoint");
  train_tok->add_option("--trace", p.trace, "Loss trace (default <out>.trace.txt)");
  ov.add<int>(train_tok, "--slots", "Sub-vectors per item (K)", [](RunConfig& c, const int& v) { c.fsq.num_slots = v; });
  ov.add<int>(train_tok, "--dim", "Embedding dimension d_L", [](RunConfig& c, const int& v) { c.fsq.embedding_dim = v; });
  ov.add<std::vector<int>>(train_tok, "--levels", "Comma-separated levels per quantized dimension",
                           [](RunConfig& c, const std::vector<int>& v) { c.fsq.levels = v; })
      ->delimiter(',');
  ov.add<int>(train_tok, "--epochs", "Epochs", [](RunConfig& c, const int& v) { c.quantizer.epochs = v; });
  ov.add<int>(train_tok, "--batch-size", "Batch size", [](RunConfig& c, const int& v) { c.quantizer.batch_size = v; });
  ov.add<double>(train_tok, "--lr", "SGD step size", [](RunConfig& c, const double& v) { c.quantizer.learning_rate = v; });
  ov.add<double>(train_tok, "--clip", "Gradient norm clip (0 disables)",
                 [](RunConfig& c, const double& v) { c.quantizer.clip_norm = v; });
  ov.add<std::uint64_t>(train_tok, "--seed", "Init and shuffle seed",
                        [](RunConfig& c, const std::uint64_t& v) { c.quantizer.seed = v; });

  auto* tokenize = app.add_subcommand("tokenize", "Write the token catalog of an embedding file");
  add_common(tokenize, p);
  tokenize->add_option("--codebook", p.codebook, "Codebook checkpoint");
  tokenize->add_option("--embeddings", p.embeddings, "Embedding file");
  tokenize->add_option("--dataset", p.dataset, "Optional dataset whose items must all be present");
  tokenize->add_option("--out", p.out, "Token catalog");

  auto add_model_flags = [&](CLI::App* sub) {
    sub->add_option("--tokens", p.tokens, "Token catalog");
    sub->add_option("--embeddings", p.embeddings, "Embedding file (auxiliary stream)");
    sub->add_option("--dataset", p.dataset, "Interaction dataset");
    sub->add_option("--codebook", p.codebook, "Codebook (optional; fixes K, vocabulary and d_sub)");
    sub->add_option("--out", p.out, "Output file");
    ov.add<int>(sub, "--width", "Model width d_ar", [](RunConfig& c, const int& v) { c.model.width = v; });
    ov.add<int>(sub, "--layers", "Transformer layers", [](RunConfig& c, const int& v) { c.model.layers = v; });
    ov.add<int>(sub, "--heads", "Attention heads", [](RunConfig& c, const int& v) { c.model.heads = v; });
    ov.add<int>(sub, "--ff-dim", "Feed-forward width", [](RunConfig& c, const int& v) { c.model.ff_dim = v; });
    ov.add<int>(sub, "--max-positions", "Token positions T (multiple of K)",
                [](RunConfig& c, const int& v) { c.model.max_positions = v; });
    ov.add<double>(sub, "--train-fraction", "Sequence-level split fraction",
                   [](RunConfig& c, const double& v) { c.split.train_fraction = v; });
    ov.add<std::uint64_t>(sub, "--split-seed", "Split seed", [](RunConfig& c, const std::uint64_t& v) { c.split.seed = v; });
  };

  auto* train = app.add_subcommand("train", "Train the sequence model");
  add_common(train, p);
  add_model_flags(train);
  train->add_option("--trace", p.trace, "Loss trace (default <out>.trace.txt)");
  train->add_option("--resume", p.resume, "Continue from this checkpoint (and its .optim state)");
  train->add_option("--heldout-out", p.heldout, "Write the held-out split as a dataset file");
  ov.add<int>(train, "--epochs", "Epochs", [](RunConfig& c, const int& v) { c.training.epochs = v; });
  ov.add<int>(train, "--batch-size", "Sequences per step", [](RunConfig& c, const int& v) { c.training.batch_size = v; });
  ov.add<double>(train, "--lr", "Learning rate", [](RunConfig& c, const double& v) { c.training.optimizer.learning_rate = v; });
  ov.add<std::string>(train, "--optimizer", "adam or sgd", [](RunConfig& c, const std::string& v) {
    c.training.optimizer.kind = optimizer_kind_from_string(v);
  });
  ov.add<std::uint64_t>(train, "--seed", "Shuffle seed", [](RunConfig& c, const std::uint64_t& v) { c.training.seed = v; });
  ov.add<std::uint64_t>(train, "--init-seed", "Parameter init seed",
                        [](RunConfig& c, const std::uint64_t& v) { c.model_init_seed = v; });
  ov.add<int>(train, "--patience", "Early-stop patience in epochs (0 disables)",
              [](RunConfig& c, const int& v) { c.training.patience = v; });
  ov.add_flag(train, "--keep-best", "Keep the parameters of the best eval epoch",
              [](RunConfig& c) { c.training.keep_best = true; });

  auto* evaluate = app.add_subcommand("evaluate", "Rank held-out next items against the full catalog");
  add_common(evaluate, p);
  evaluate->add_option("--model", p.model, "Model checkpoint");
  evaluate->add_option("--codebook", p.codebook, "Codebook checkpoint");
  evaluate->add_option("--embeddings", p.embeddings, "Target-domain embedding file");
  evaluate->add_option("--dataset", p.dataset, "Target-domain dataset");
  evaluate->add_option("--out", p.out, "Report file (JSON)");
  ov.add<std::string>(evaluate, "--protocol", "zero-shot or cold-start",
                      [](RunConfig& c, const std::string& v) { c.evaluation.protocol = v; });
  ov.add<std::uint64_t>(evaluate, "--seed", "Cold-start truncation seed",
                        [](RunConfig& c, const std::uint64_t& v) { c.evaluation.seed = v; });
  ov.add<unsigned>(evaluate, "--threads", "Worker threads", [](RunConfig& c, const unsigned& v) { c.evaluation.threads = v; });

  auto* scaling = app.add_subcommand("scaling", "Train on data fractions and fit a power law");
  add_common(scaling, p);
  add_model_flags(scaling);
  scaling->add_flag("--self-test", p.self_test, "Fit a planted curve instead of training");
  scaling->add_option("--planted", p.planted, "Planted a,b,c for --self-test")->delimiter(',')->expected(3);
  scaling->add_option("--planted-noise", p.planted_noise, "Relative log-normal noise for --self-test");
  ov.add<std::vector<double>>(scaling, "--fractions", "Comma-separated data fractions",
                              [](RunConfig& c, const std::vector<double>& v) { c.scaling.fractions = v; })
      ->delimiter(',');
  ov.add<int>(scaling, "--max-epochs", "Epoch cap per fraction", [](RunConfig& c, const int& v) { c.scaling.max_epochs = v; });
  ov.add<int>(scaling, "--patience", "Epochs without 0.5% improvement before stopping",
              [](RunConfig& c, const int& v) { c.scaling.patience = v; });
  ov.add<double>(scaling, "--lr", "Learning rate",
                 [](RunConfig& c, const double& v) { c.scaling.train.optimizer.learning_rate = v; });

  auto* recommend = app.add_subcommand("recommend", "Beam-decode top-n items for one history");
  add_common(recommend, p);
  recommend->add_option("--model", p.model, "Model checkpoint");
  recommend->add_option("--codebook", p.codebook, "Codebook checkpoint");
  recommend->add_option("--embeddings", p.embeddings, "Catalog embedding file");
  recommend->add_option("--history", p.history, "Comma-separated item ids, oldest first");
  recommend->add_option("--out", p.out, "Output file (default stdout)");
  ov.add<int>(recommend, "--beam-width", "Beam width", [](RunConfig& c, const int& v) { c.beam.width = v; });
  ov.add<int>(recommend, "--top-n", "Number of items", [](RunConfig& c, const int& v) { c.beam.top_n = v; });

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    const RunConfig config = build_config(p, ov);
    if (*synth) return cmd_synth(config, p, out);
    if (*embed) return cmd_embed(config, p, out);
    if (*train_tok) return cmd_train_tokenizer(config, p, out);
    if (*tokenize) return cmd_tokenize(config, p, out);
    if (*train) return cmd_train(config, p, out);
    if (*evaluate) return cmd_evaluate(config, p, out);
    if (*scaling) return cmd_scaling(config, p, out);
    if (*recommend) return cmd_recommend(config, p, out);
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const DivergenceError& e) {
    err << "divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace recgen::cli
