#include <gtest/gtest.h>

#include <cstring>
#include <limits>

#include "support.hpp"

using namespace unisync;

namespace {

const Corpus& train_corpus() {
  static const Corpus c = synth_corpus(ts::small_synth("3dmm", "mel", 3, 2, 120, 21));
  return c;
}

const Corpus& val_corpus() {
  static const Corpus c = synth_corpus(ts::small_synth("3dmm", "mel", 2, 1, 120, 22));
  return c;
}

TrainConfig tiny_config(std::size_t epochs = 2, std::size_t steps = 4) {
  TrainConfig c;
  c.encoder = ts::tiny_encoder();
  c.epochs = epochs;
  c.steps_per_epoch = steps;
  c.batch_size = 8;
  c.eval_pairs = 40;
  c.seed = 3;
  return c;
}

bool same_weights(const ModelWeights& a, const ModelWeights& b) {
  if (a.entries.size() != b.entries.size()) return false;
  for (std::size_t i = 0; i < a.entries.size(); ++i)
    if (a.entries[i].name != b.entries[i].name || !bitwise_equal(a.entries[i].value, b.entries[i].value)) return false;
  return true;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

ErrorKind decode_error(const io::Bytes& bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode succeeded";
  return ErrorKind::io;
}

}  // namespace

TEST(Train, ZeroEpochsLeavesInitialization) {
  const auto cfg = tiny_config(0);
  const auto [ckpt, hist] = train(cfg, train_corpus(), val_corpus());
  const auto init = initial_checkpoint(cfg);
  EXPECT_TRUE(same_weights(ckpt.weights, init.weights));
  EXPECT_EQ(ckpt.epoch, 0u);
  EXPECT_EQ(ckpt.adam.step, 0u);
  EXPECT_TRUE(hist.step_loss.empty());
  EXPECT_TRUE(hist.evals.empty());
  EXPECT_EQ(encode_checkpoint(ckpt), encode_checkpoint(init));
}

TEST(Train, SameSeedGivesBitwiseIdenticalRuns) {
  const auto cfg = tiny_config();
  const auto [a, ha] = train(cfg, train_corpus(), val_corpus());
  const auto [b, hb] = train(cfg, train_corpus(), val_corpus());
  EXPECT_TRUE(same_bits(ha.step_loss, hb.step_loss));
  EXPECT_TRUE(same_weights(a.weights, b.weights));
  EXPECT_EQ(to_json(ha).dump(), to_json(hb).dump());
  auto other = cfg;
  other.seed = 4;
  EXPECT_FALSE(same_bits(ha.step_loss, train(other, train_corpus(), val_corpus()).second.step_loss));
}

TEST(Train, HistoryLengthsMatchSchedule) {
  auto cfg = tiny_config(3, 5);
  cfg.eval_every = 2;
  const auto [ckpt, h] = train(cfg, train_corpus(), val_corpus());
  EXPECT_EQ(h.step_loss.size(), 15u);
  EXPECT_EQ(h.epoch_seconds.size(), 3u);
  ASSERT_EQ(h.evals.size(), 2u);
  EXPECT_EQ(h.evals[0].epoch, 2u);
  EXPECT_EQ(h.evals[1].epoch, 3u);
  EXPECT_EQ(h.evals[1].step, 15u);
  EXPECT_EQ(ckpt.adam.step, 15u);
  const auto j = to_json(h);
  EXPECT_FALSE(j.contains("epoch_seconds"));
  EXPECT_EQ(j["step_loss"].size(), 15u);
}

TEST(Train, ResumeReproducesUninterruptedRun) {
  const auto cfg = tiny_config(4, 3);
  const auto [full, hfull] = train(cfg, train_corpus(), val_corpus());

  const auto dir = ts::temp_dir("resume");
  TrainOptions first;
  first.stop_after_epoch = 2;
  auto [part, h1] = train(cfg, train_corpus(), val_corpus(), first);
  EXPECT_EQ(part.epoch, 2u);
  save_checkpoint(dir / "mid.uckp", part);
  auto resumed = load_checkpoint(dir / "mid.uckp");
  const auto h2 = train_from(resumed, train_corpus(), val_corpus());

  auto losses = h1.step_loss;
  losses.insert(losses.end(), h2.step_loss.begin(), h2.step_loss.end());
  EXPECT_TRUE(same_bits(losses, hfull.step_loss));
  EXPECT_TRUE(same_weights(resumed.weights, full.weights));
  EXPECT_EQ(encode_checkpoint(resumed), encode_checkpoint(full));
  ASSERT_EQ(h2.evals.size(), 2u);
  EXPECT_EQ(h2.evals.back().accuracy, hfull.evals.back().accuracy);
  std::filesystem::remove_all(dir);
}

TEST(Train, OverfitsAFrozenBatch) {
  TrainConfig cfg;
  cfg.encoder.visual_spec = "3dmm";
  cfg.loss.lambda = 0;
  const auto corpus = synth_corpus(ts::small_synth("3dmm", "mel", 3, 2, 120, 21));
  auto ckpt = initial_checkpoint(cfg);
  Rng rng(5);
  const auto batch = sample_batch(corpus, cfg.batch_size, cfg.sampler, rng);
  std::vector<double> losses;
  for (int i = 0; i < 50; ++i) losses.push_back(train_step(ckpt.weights, ckpt.adam, cfg, batch).loss);
  for (std::size_t i = 1; i < losses.size(); ++i) EXPECT_LT(losses[i], losses[i - 1]) << i;
  EXPECT_LT(losses.back(), 0.05);
}

TEST(Train, StepMovesParametersOnlyWithNonzeroGradient) {
  auto cfg = tiny_config();
  cfg.loss.lambda = 0;
  cfg.sampler.margin_same = 0.999;
  cfg.sampler.margin_cross = 0.999;
  auto ckpt = initial_checkpoint(cfg);
  const auto before = ckpt.weights;

  Rng rng(6);
  std::vector<PairSample> negatives;
  while (negatives.size() < 8) negatives.push_back(make_same_speaker_negative(train_corpus(), rng, cfg.sampler));
  train_step(ckpt.weights, ckpt.adam, cfg, negatives);
  for (auto i : ckpt.weights.trainable_indices())
    EXPECT_TRUE(bitwise_equal(ckpt.weights.entries[i].value, before.entries[i].value)) << ckpt.weights.entries[i].name;
  EXPECT_FALSE(bitwise_equal(ckpt.weights.at("visual.pre.0.bn.running_mean"), before.at("visual.pre.0.bn.running_mean")));

  const auto batch = sample_batch(train_corpus(), 8, SamplerConfig{}, rng);
  train_step(ckpt.weights, ckpt.adam, cfg, batch);
  EXPECT_FALSE(bitwise_equal(ckpt.weights.at("audio.head.weight"), before.at("audio.head.weight")));
}

TEST(Train, EvaluationDoesNotTouchWeights) {
  const auto cfg = tiny_config();
  const auto ckpt = initial_checkpoint(cfg);
  const auto copy = ckpt.weights;
  const double a = validation_accuracy(ckpt.weights, cfg, val_corpus());
  EXPECT_TRUE(same_weights(copy, ckpt.weights));
  EXPECT_EQ(a, validation_accuracy(ckpt.weights, cfg, val_corpus()));
}

TEST(Train, NonFiniteLossIsDivergence) {
  const auto cfg = tiny_config();
  auto ckpt = initial_checkpoint(cfg);
  ckpt.weights.at("audio.head.weight")[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    train_from(ckpt, train_corpus(), val_corpus());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::divergence);
    EXPECT_NE(std::string(e.what()).find("epoch 1, step 1"), std::string::npos) << e.what();
  }
}

TEST(Train, CorpusSpecMismatchIsRejected) {
  const auto cfg = tiny_config();
  const auto other = synth_corpus(ts::small_synth("landmarks", "mel", 2, 1, 60));
  try {
    train(cfg, other, val_corpus());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::spec_mismatch);
  }
}

TEST(Checkpoint, RoundTripIsBitwise) {
  auto ckpt = initial_checkpoint(tiny_config());
  std::mt19937_64 g(7);
  for (auto& e : ckpt.weights.entries) e.value = ts::random_tensor(e.value.dims(), g);
  for (auto& m : ckpt.adam.m) m = ts::random_tensor(m.dims(), g);
  for (auto& v : ckpt.adam.v) v = ts::random_tensor(v.dims(), g);
  ckpt.adam.step = 123;
  ckpt.epoch = 9;
  const auto bytes = encode_checkpoint(ckpt);
  const auto back = decode_checkpoint(bytes);
  EXPECT_TRUE(same_weights(back.weights, ckpt.weights));
  for (std::size_t i = 0; i < ckpt.adam.m.size(); ++i) {
    EXPECT_TRUE(bitwise_equal(back.adam.m[i], ckpt.adam.m[i]));
    EXPECT_TRUE(bitwise_equal(back.adam.v[i], ckpt.adam.v[i]));
  }
  EXPECT_EQ(back.adam.step, 123u);
  EXPECT_EQ(back.epoch, 9u);
  EXPECT_EQ(back.rng_state, ckpt.rng_state);
  EXPECT_EQ(canonical_config(back.config), canonical_config(ckpt.config));
  EXPECT_EQ(encode_checkpoint(back), bytes);

  const auto dir = ts::temp_dir("ckpt");
  save_checkpoint(dir / "a.uckp", ckpt);
  save_checkpoint(dir / "b.uckp", load_checkpoint(dir / "a.uckp"));
  EXPECT_EQ(io::read_file(dir / "a.uckp"), io::read_file(dir / "b.uckp"));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, HeaderLayout) {
  const auto ckpt = initial_checkpoint(tiny_config());
  const auto bytes = encode_checkpoint(ckpt);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "UCKP");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
  EXPECT_EQ(stored_config_hash(bytes), config_hash(ckpt.config));
  EXPECT_EQ(hex(sha256("abc")), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Checkpoint, CorruptionGivesStructuredErrors) {
  const auto bytes = encode_checkpoint(initial_checkpoint(tiny_config()));

  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(decode_error(bad), ErrorKind::bad_magic);

  bad = bytes;
  bad[4] = 2;
  EXPECT_EQ(decode_error(bad), ErrorKind::version_mismatch);

  bad = io::Bytes(bytes.begin(), bytes.end() - 3);
  EXPECT_EQ(decode_error(bad), ErrorKind::truncated);
  bad = io::Bytes(bytes.begin(), bytes.begin() + 20);
  EXPECT_EQ(decode_error(bad), ErrorKind::truncated);

  bad = bytes;
  bad.push_back(0);
  EXPECT_EQ(decode_error(bad), ErrorKind::length_mismatch);

  bad = bytes;
  bad[8] ^= 1;  // config hash
  EXPECT_EQ(decode_error(bad), ErrorKind::length_mismatch);

  try {
    load_checkpoint("/nonexistent/unisync.uckp");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
}

TEST(Checkpoint, RecordDimsMustMatchEmbeddedConfig) {
  auto ckpt = initial_checkpoint(tiny_config());
  ckpt.weights.entries[0].value = Tensor({1, 2});
  EXPECT_EQ(decode_error(encode_checkpoint(ckpt)), ErrorKind::length_mismatch);
}
