#include <chrono>
#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "recgen/error.hpp"
#include "recgen/seq_model.hpp"
#include "support/fixtures.hpp"

using namespace recgen;
using namespace recgen::testing;

namespace {

ModelConfig toy_config() {
  ModelConfig c;
  c.width = 16;
  c.layers = 2;
  c.heads = 2;
  c.max_positions = 10;
  c.num_slots = 2;
  c.vocab = 11;
  c.aux_dim = 4;
  c.ff_dim = 32;
  return c;
}

}  // namespace

TEST(SeqModel, BlockMaskPattern) {
  const auto mask = build_block_mask(3, 2);
  ASSERT_EQ(mask.size(), 7);
  const auto block = [](int p) { return p == 0 ? 0 : 1 + (p - 1) / 2; };
  for (int p = 0; p < 7; ++p)
    for (int q = 0; q < 7; ++q) EXPECT_EQ(mask.allowed(p, q), block(q) <= block(p)) << p << ',' << q;
}

TEST(SeqModel, LossMatchesShiftedLabelOracle) {
  Rng rng(1);
  const auto cfg = toy_config();
  SequenceModel model(cfg, 4);
  const auto seq = random_sequence(cfg, 4, rng);
  const nn::Matrix lp = nn::log_softmax_rows(model.forward(seq));
  // Item m+1, slot k is predicted from the row of item m, slot k.
  std::vector<double> expected;
  for (int m = 0; m + 1 < 4; ++m)
    for (int k = 0; k < 2; ++k) expected.push_back(lp(1 + m * 2 + k, seq.items[m + 1].tokens[k]));
  const auto r = model.ar_loss(seq);
  ASSERT_EQ(r.scored_positions(), 6u);
  double nll = 0.0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    EXPECT_NEAR(r.target_log_probs[i], expected[i], 1e-12);
    nll -= expected[i];
  }
  EXPECT_NEAR(r.loss, nll / 6.0, 1e-12);
}

TEST(SeqModel, NextItemUsesFinalBlock) {
  Rng rng(2);
  const auto cfg = toy_config();
  SequenceModel model(cfg, 5);
  const auto seq = random_sequence(cfg, 3, rng);
  const nn::Matrix lp = nn::log_softmax_rows(model.forward(seq));
  const auto dist = model.predict_next_item(seq);
  ASSERT_EQ(dist.num_slots(), 2);
  ASSERT_EQ(dist.vocab(), 11);
  EXPECT_LT((dist.log_probs - lp.middleRows(5, 2)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SeqModel, GradientsMatchFiniteDifferences) {
  Rng rng(3);
  const auto cfg = toy_config();
  SequenceModel model(cfg, 6);
  randomize(model.params(), rng, 0.2);
  const auto seq = random_sequence(cfg, 4, rng);
  const auto start = std::chrono::steady_clock::now();
  for (auto* p : model.params()) p->zero_grad();
  model.accumulate_gradients(seq, 1.0);
  const auto check = check_gradients(model.params(), [&] { return model.ar_loss(seq).loss; }, 1e-5, 1e-3, 1e-10);
  EXPECT_EQ(check.failed, 0u) << "worst " << check.worst_relative_error << " in " << check.worst_param;
  EXPECT_GT(check.checked, 1000u);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 60.0);
}

TEST(SeqModel, GradientWeightScales) {
  Rng rng(4);
  const auto cfg = toy_config();
  SequenceModel model(cfg, 7);
  const auto seq = random_sequence(cfg, 3, rng);
  for (auto* p : model.params()) p->zero_grad();
  model.accumulate_gradients(seq, 1.0);
  const nn::Matrix g1 = model.token_embedding.grad;
  for (auto* p : model.params()) p->zero_grad();
  model.accumulate_gradients(seq, 0.25);
  EXPECT_LT((model.token_embedding.grad - 0.25 * g1).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(SeqModel, BlockCausality) {
  Rng rng(5);
  const auto cfg = toy_config();
  SequenceModel model(cfg, 8);
  randomize(model.params(), rng, 0.3);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(uniform_below(rng, 4));
    const auto seq = random_sequence(cfg, n, rng);
    const int m = 1 + static_cast<int>(uniform_below(rng, n));  // 1-based item
    auto changed = seq;
    auto& tokens = changed.items[m - 1].tokens;
    const auto slot = uniform_below(rng, 2);
    tokens[slot] = static_cast<std::int32_t>((tokens[slot] + 1 + uniform_below(rng, cfg.vocab - 1)) % cfg.vocab);
    const nn::Matrix a = model.forward(seq);
    const nn::Matrix b = model.forward(changed);
    const int first = 1 + (m - 1) * 2;
    EXPECT_EQ((a.topRows(first) - b.topRows(first)).cwiseAbs().maxCoeff(), 0.0) << "trial " << trial;
    for (int p = first; p < first + 2; ++p) EXPECT_GT((a.row(p) - b.row(p)).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(SeqModel, OutputIsWeightTied) {
  Rng rng(6);
  const auto cfg = toy_config();
  SequenceModel model(cfg, 9);
  const auto seq = random_sequence(cfg, 2, rng);
  SequenceModel::Cache cache;
  const nn::Matrix logits = model.forward(seq, &cache);
  EXPECT_LT((logits - cache.hidden * model.token_embedding.value.transpose()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SeqModel, RejectsBadInput) {
  Rng rng(7);
  const auto cfg = toy_config();
  SequenceModel model(cfg, 1);
  auto seq = random_sequence(cfg, 2, rng);
  seq.items[1].tokens[0] = cfg.vocab;
  EXPECT_THROW(model.forward(seq), DataError);
  EXPECT_THROW(model.predict_next_item(TokenizedSequence{}), DataError);
  auto bad = cfg;
  bad.max_positions = 9;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.heads = 3;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(SeqModel, LongHistoriesKeepMostRecentItems) {
  Rng rng(8);
  const auto cfg = toy_config();
  SequenceModel model(cfg, 2);
  const auto seq = random_sequence(cfg, 9, rng);
  const auto recent = truncate_to_recent(seq, cfg.max_items());
  ASSERT_EQ(recent.size(), 5u);
  EXPECT_EQ(recent.items.front().tokens, seq.items[4].tokens);
  EXPECT_EQ(model.predict_next_item(seq).log_probs, model.predict_next_item(recent).log_probs);
}

TEST(SeqModel, CheckpointRoundTripIsExact) {
  Rng rng(9);
  const auto cfg = toy_config();
  SequenceModel model(cfg, 10);
  std::vector<TokenizedSequence> data;
  for (int i = 0; i < 8; ++i) data.push_back(random_sequence(cfg, 3, rng));
  ModelTrainSettings s;
  s.epochs = 2;
  s.batch_size = 4;
  train_model(model, data, {}, s);
  std::stringstream buf;
  model.save(buf);
  const auto loaded = SequenceModel::load(buf);
  EXPECT_EQ(loaded.config(), cfg);
  for (const auto& seq : data) EXPECT_EQ(loaded.forward(seq), model.forward(seq));
  std::stringstream again;
  loaded.save(again);
  EXPECT_EQ(again.str(), buf.str());
  std::stringstream junk("garbage");
  EXPECT_THROW(SequenceModel::load(junk), DataError);
}

TEST(SeqModel, TrainingReducesLossAndIsDeterministic) {
  Rng rng(10);
  const auto cfg = toy_config();
  std::vector<TokenizedSequence> data;
  for (int i = 0; i < 16; ++i) data.push_back(random_sequence(cfg, 4, rng));
  ModelTrainSettings s;
  s.epochs = 5;
  s.batch_size = 4;
  SequenceModel a(cfg, 11), b(cfg, 11);
  const auto ra = train_model(a, data, {}, s);
  const auto rb = train_model(b, data, {}, s);
  EXPECT_LT(ra.trace.back().train_loss, ra.initial_train_loss);
  ASSERT_EQ(ra.trace.size(), rb.trace.size());
  for (std::size_t i = 0; i < ra.trace.size(); ++i) EXPECT_EQ(ra.trace[i].eval_loss, rb.trace[i].eval_loss);
  EXPECT_EQ(ra.scored_tokens_per_epoch, 16 * 3 * 2);
}

TEST(SeqModel, ResumeMatchesUninterruptedRun) {
  Rng rng(11);
  const auto cfg = toy_config();
  std::vector<TokenizedSequence> data;
  for (int i = 0; i < 12; ++i) data.push_back(random_sequence(cfg, 3, rng));
  ModelTrainSettings s;
  s.batch_size = 4;
  s.epochs = 4;
  SequenceModel straight(cfg, 12);
  train_model(straight, data, {}, s);

  SequenceModel first(cfg, 12);
  Optimizer opt(first.params(), s.optimizer);
  s.epochs = 2;
  train_model(first, data, {}, s, &opt);
  std::stringstream model_buf, opt_buf;
  first.save(model_buf);
  opt.save_state(opt_buf);

  auto resumed = SequenceModel::load(model_buf);
  Optimizer resumed_opt(resumed.params(), s.optimizer);
  resumed_opt.load_state(opt_buf);
  s.completed_epochs = 2;
  const auto r = train_model(resumed, data, {}, s, &resumed_opt);
  EXPECT_EQ(r.trace.front().epoch, 3);
  double worst = 0.0;
  auto pa = straight.params();
  auto pb = resumed.params();
  for (std::size_t i = 0; i < pa.size(); ++i) worst = std::max(worst, (pa[i]->value - pb[i]->value).cwiseAbs().maxCoeff());
  EXPECT_LE(worst, 1e-6);
}

TEST(SeqModel, EarlyStoppingAndKeepBest) {
  Rng rng(12);
  const auto cfg = toy_config();
  std::vector<TokenizedSequence> train, eval;
  for (int i = 0; i < 6; ++i) train.push_back(random_sequence(cfg, 3, rng));
  for (int i = 0; i < 6; ++i) eval.push_back(random_sequence(cfg, 3, rng));
  ModelTrainSettings s;
  s.epochs = 40;
  s.batch_size = 2;
  s.optimizer.learning_rate = 0.03;
  s.patience = 2;
  s.keep_best = true;
  SequenceModel model(cfg, 13);
  const auto r = train_model(model, train, eval, s);
  EXPECT_LT(r.trace.size(), 40u);
  EXPECT_NEAR(mean_ar_loss(model, eval), r.best_eval_loss, 1e-12);
}

TEST(SeqModel, DivergenceIsReported) {
  Rng rng(13);
  const auto cfg = toy_config();
  std::vector<TokenizedSequence> data{random_sequence(cfg, 3, rng), random_sequence(cfg, 3, rng)};
  ModelTrainSettings s;
  s.epochs = 2;
  s.optimizer = OptimizerSettings{OptimizerKind::kSgd, std::numeric_limits<double>::infinity()};
  SequenceModel model(cfg, 14);
  EXPECT_THROW(train_model(model, data, {}, s), DivergenceError);
}

TEST(SeqModel, OptimizerStateRoundTrip) {
  Rng rng(14);
  const auto cfg = toy_config();
  SequenceModel model(cfg, 15);
  Optimizer opt(model.params(), OptimizerSettings{OptimizerKind::kAdam, 1e-3});
  model.accumulate_gradients(random_sequence(cfg, 3, rng));
  opt.step();
  std::stringstream buf;
  opt.save_state(buf);
  Optimizer other(model.params(), OptimizerSettings{OptimizerKind::kAdam, 1e-3});
  other.load_state(buf);
  EXPECT_EQ(other.steps(), 1);
  std::stringstream again;
  other.save_state(again);
  EXPECT_EQ(again.str(), buf.str());
}
