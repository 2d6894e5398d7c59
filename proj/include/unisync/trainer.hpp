#pragma once

// Training loop, history and checkpoints.
//
// Checkpoint file (little-endian):
//   "UCKP" | u32 version | 32-byte SHA-256 of the canonical config JSON
//   | u32 len | config JSON bytes | u64 epochs_done | u32 len | sampler RNG state
//   | u32 count | count x (u32 name_len | name | u32 ndim | u32 dims[] | f32 payload)
//   | u64 adam_step | u32 count | count x record (names "m/<param>", "v/<param>")
//
// Weight records include batchnorm running statistics. Every record's dims
// are checked against the shapes implied by the embedded config.

#include <openssl/evp.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "unisync/adam.hpp"
#include "unisync/binary_io.hpp"
#include "unisync/config.hpp"
#include "unisync/graph.hpp"
#include "unisync/loss.hpp"
#include "unisync/metrics.hpp"
#include "unisync/model.hpp"
#include "unisync/sampler.hpp"

namespace unisync {

inline constexpr char kCheckpointMagic[4] = {'U', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using Digest = std::array<std::uint8_t, 32>;

inline Digest sha256(std::string_view data) {
  Digest d{};
  unsigned int len = 0;
  UNISYNC_CHECK(EVP_Digest(data.data(), data.size(), d.data(), &len, EVP_sha256(), nullptr) == 1 && len == d.size(),
                ErrorKind::io, "sha256 failed");
  return d;
}

inline std::string hex(const Digest& d) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s;
  for (auto b : d) {
    s.push_back(kHex[b >> 4]);
    s.push_back(kHex[b & 15]);
  }
  return s;
}

inline std::string canonical_config(const TrainConfig& c) { return to_json(c).dump(); }
inline Digest config_hash(const TrainConfig& c) { return sha256(canonical_config(c)); }

struct Checkpoint {
  TrainConfig config;
  ModelWeights weights;
  AdamState adam;
  std::uint64_t epoch = 0;  // completed epochs
  std::string rng_state;    // sampler stream, positioned at the next batch
};

struct EvalRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;  // global steps completed when evaluated
  double accuracy = 0;
};

struct History {
  std::vector<double> step_loss;
  std::vector<EvalRecord> evals;
  std::vector<double> epoch_seconds;  // not serialized
};

/// Wall-clock time is left out so identical runs give identical files.
inline Json to_json(const History& h) {
  Json evals = Json::array();
  for (const auto& e : h.evals) evals.push_back({{"epoch", e.epoch}, {"step", e.step}, {"accuracy", e.accuracy}});
  return {{"step_loss", h.step_loss}, {"evals", evals}};
}

inline std::vector<BasicTensor<float>> trainable_tensors(const ModelWeights& w) {
  std::vector<Tensor> out;
  for (auto i : w.trainable_indices()) out.push_back(w.entries[i].value);
  return out;
}

inline Checkpoint initial_checkpoint(const TrainConfig& cfg) {
  validate(cfg);
  Checkpoint c;
  c.config = cfg;
  c.weights = init_weights(cfg.encoder, derive_seed(cfg.seed, "init"));
  c.adam = AdamState::zeros_like(trainable_tensors(c.weights));
  c.rng_state = Rng(derive_seed(cfg.seed, "sampler")).state();
  return c;
}

struct StepResult {
  double loss = 0;
  double bce = 0;
};

/// One forward/backward/update on a given batch.
inline StepResult train_step(ModelWeights& weights, AdamState& adam, const TrainConfig& cfg,
                             std::span<const PairSample> batch) {
  Graph<float> g;
  ParamNodes<float> params(g, true);
  std::vector<FeatureClip> a, v;
  std::vector<int> labels;
  std::vector<double> margins;
  for (const auto& s : batch) {
    a.push_back(s.audio);
    v.push_back(s.visual);
    labels.push_back(s.label);
    margins.push_back(s.margin);
  }
  const auto& enc = cfg.encoder;
  const NodeId vin = g.leaf(stack_clips<float>(find_spec(enc.visual_spec), v));
  const NodeId ain = g.leaf(stack_clips<float>(find_spec(enc.audio_spec), a));
  const NodeId ve = encode_stream(g, params, weights, enc, Modality::visual, vin, Mode::train).embedding;
  const NodeId ae = encode_stream(g, params, weights, enc, Modality::audio, ain, Mode::train).embedding;
  const NodeId p = ops::cosine_rows(g, ae, ve);
  UNISYNC_CHECK(g.value(p).all_finite(), ErrorKind::divergence, "sync probabilities became non-finite");
  LossConfig bce_only = cfg.loss;
  bce_only.lambda = 0;
  const NodeId bce = total_loss(g, p, labels, margins, params, weights, bce_only);
  const NodeId loss = cfg.loss.lambda == 0 ? bce : total_loss(g, p, labels, margins, params, weights, cfg.loss);
  const double lv = g.value(loss)[0];
  UNISYNC_CHECK(std::isfinite(lv), ErrorKind::divergence, "loss became non-finite (" + std::to_string(lv) + ")");
  g.backward(loss);

  const auto idx = weights.trainable_indices();
  std::vector<Tensor> ps, gs;
  ps.reserve(idx.size());
  gs.reserve(idx.size());
  for (auto i : idx) {
    ps.push_back(std::move(weights.entries[i].value));
    gs.push_back(g.grad(params.get(weights, i)));
  }
  adam_step<float>(ps, gs, adam, cfg.adam);
  for (std::size_t k = 0; k < idx.size(); ++k) weights.entries[idx[k]].value = std::move(ps[k]);
  UNISYNC_CHECK(weights.all_finite(), ErrorKind::divergence, "parameters became non-finite");
  return {lv, g.value(bce)[0]};
}

inline double validation_accuracy(const ModelWeights& w, const TrainConfig& cfg, const Corpus& val) {
  ModelScorer scorer(w, cfg.encoder);
  Rng rng(derive_seed(cfg.seed, "eval"));
  return lip_sync_accuracy(scorer, val, cfg.eval_pairs, cfg.sampler, rng);
}

struct TrainOptions {
  // Called after each epoch with the state at that point.
  std::function<void(const Checkpoint&, const History&)> on_epoch;
  // Stop after this many total epochs (for interrupted runs); 0 = config.epochs.
  std::size_t stop_after_epoch = 0;
};

/// Continues `ckpt` until config.epochs. History covers only the epochs run
/// here, with global step indices implied by ckpt.epoch.
inline History train_from(Checkpoint& ckpt, const Corpus& train, const Corpus& val, const TrainOptions& opt = {}) {
  const TrainConfig& cfg = ckpt.config;
  validate(cfg);
  UNISYNC_CHECK(!train.tracks.empty(), ErrorKind::config, "empty training corpus");
  for (const auto* c : {&train, &val})
    for (const auto& t : c->tracks)
      UNISYNC_CHECK(t.visual_spec == cfg.encoder.visual_spec && t.audio_spec == cfg.encoder.audio_spec,
                    ErrorKind::spec_mismatch,
                    "track " + t.track_id + " is " + t.visual_spec + "+" + t.audio_spec + ", model expects " +
                        cfg.encoder.visual_spec + "+" + cfg.encoder.audio_spec);
  Rng rng;
  rng.set_state(ckpt.rng_state);
  History h;
  const std::size_t last = opt.stop_after_epoch ? std::min(opt.stop_after_epoch, cfg.epochs) : cfg.epochs;
  for (std::size_t epoch = ckpt.epoch; epoch < last; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t s = 0; s < cfg.steps_per_epoch; ++s) {
      const auto batch = sample_batch(train, cfg.batch_size, cfg.sampler, rng);
      try {
        h.step_loss.push_back(train_step(ckpt.weights, ckpt.adam, cfg, batch).loss);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::divergence) throw;
        throw Error(ErrorKind::divergence, std::string(e.what()) + " at epoch " + std::to_string(epoch + 1) +
                                               ", step " + std::to_string(s + 1));
      }
    }
    ckpt.epoch = epoch + 1;
    ckpt.rng_state = rng.state();
    if (!val.tracks.empty() && cfg.eval_every > 0 && (ckpt.epoch % cfg.eval_every == 0 || ckpt.epoch == cfg.epochs))
      h.evals.push_back({ckpt.epoch, ckpt.epoch * cfg.steps_per_epoch, validation_accuracy(ckpt.weights, cfg, val)});
    h.epoch_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    if (opt.on_epoch) opt.on_epoch(ckpt, h);
  }
  return h;
}

inline std::pair<Checkpoint, History> train(const TrainConfig& cfg, const Corpus& train_corpus, const Corpus& val_corpus,
                                            const TrainOptions& opt = {}) {
  Checkpoint c = initial_checkpoint(cfg);
  History h = train_from(c, train_corpus, val_corpus, opt);
  return {std::move(c), std::move(h)};
}

// ---- checkpoint persistence ----

namespace detail {

inline void write_record(io::ByteWriter& w, const std::string& name, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.raw(name);
  w.tensor(t);
}

inline Tensor read_record(io::ByteReader& r, const std::string& expected_name, const Dims& expected_dims,
                          const std::string& context) {
  const std::uint32_t len = r.u32();
  UNISYNC_CHECK(len <= 4096, ErrorKind::length_mismatch, context + ": implausible record name length");
  const std::string name = r.raw(len);
  UNISYNC_CHECK(name == expected_name, ErrorKind::length_mismatch,
                context + ": expected record '" + expected_name + "', found '" + name + "'");
  Dims dims = r.dims();
  UNISYNC_CHECK(dims == expected_dims, ErrorKind::length_mismatch,
                context + ": record '" + name + "' has dims " + dims_to_string(dims) + ", config implies " +
                    dims_to_string(expected_dims));
  return Tensor(std::move(dims), r.floats(dims_product(expected_dims)));
}

}  // namespace detail

inline io::Bytes encode_checkpoint(const Checkpoint& c) {
  const std::string cfg = canonical_config(c.config);
  io::ByteWriter w;
  w.raw(std::string_view(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  const Digest d = sha256(cfg);
  w.raw(d.data(), d.size());
  w.u32(static_cast<std::uint32_t>(cfg.size()));
  w.raw(cfg);
  w.u64(c.epoch);
  w.u32(static_cast<std::uint32_t>(c.rng_state.size()));
  w.raw(c.rng_state);
  w.u32(static_cast<std::uint32_t>(c.weights.entries.size()));
  for (const auto& e : c.weights.entries) detail::write_record(w, e.name, e.value);
  const auto idx = c.weights.trainable_indices();
  UNISYNC_CHECK(c.adam.m.size() == idx.size() && c.adam.v.size() == idx.size(), ErrorKind::shape,
                "adam state does not match the trainable parameters");
  w.u64(c.adam.step);
  w.u32(static_cast<std::uint32_t>(2 * idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) detail::write_record(w, "m/" + c.weights.entries[idx[k]].name, c.adam.m[k]);
  for (std::size_t k = 0; k < idx.size(); ++k) detail::write_record(w, "v/" + c.weights.entries[idx[k]].name, c.adam.v[k]);
  return w.take();
}

inline Checkpoint decode_checkpoint(const io::Bytes& bytes, const std::string& context = "checkpoint") {
  UNISYNC_CHECK(bytes.size() >= 4 && std::memcmp(bytes.data(), kCheckpointMagic, 4) == 0, ErrorKind::bad_magic,
                context + ": not a UCKP checkpoint");
  io::ByteReader r(bytes, context);
  r.raw(4);
  const std::uint32_t version = r.u32();
  UNISYNC_CHECK(version == kCheckpointVersion, ErrorKind::version_mismatch,
                context + ": checkpoint version " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointVersion));
  const std::string digest = r.raw(32);
  const std::string cfg_text = r.raw(r.u32());
  const Digest actual = sha256(cfg_text);
  UNISYNC_CHECK(std::memcmp(actual.data(), digest.data(), 32) == 0, ErrorKind::length_mismatch,
                context + ": config hash does not match the embedded config");
  Checkpoint c;
  try {
    c.config = train_config_from_json(Json::parse(cfg_text));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::length_mismatch, context + ": embedded config is not valid JSON");
  }
  c.epoch = r.u64();
  c.rng_state = r.raw(r.u32());

  const auto shapes = parameter_shapes(c.config.encoder);
  const std::uint32_t n = r.u32();
  UNISYNC_CHECK(n == shapes.size(), ErrorKind::length_mismatch,
                context + ": " + std::to_string(n) + " weight records, config implies " + std::to_string(shapes.size()));
  for (const auto& s : shapes) c.weights.entries.push_back({s.name, s.role, detail::read_record(r, s.name, s.dims, context)});

  const auto idx = c.weights.trainable_indices();
  c.adam.step = r.u64();
  const std::uint32_t na = r.u32();
  UNISYNC_CHECK(na == 2 * idx.size(), ErrorKind::length_mismatch, context + ": wrong number of optimizer records");
  for (auto i : idx) {
    const auto& e = c.weights.entries[i];
    c.adam.m.push_back(detail::read_record(r, "m/" + e.name, e.value.dims(), context));
  }
  for (auto i : idx) {
    const auto& e = c.weights.entries[i];
    c.adam.v.push_back(detail::read_record(r, "v/" + e.name, e.value.dims(), context));
  }
  UNISYNC_CHECK(r.remaining() == 0, ErrorKind::length_mismatch,
                context + ": " + std::to_string(r.remaining()) + " trailing bytes");
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  io::write_file_atomic(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path), path.string());
}

/// Hash stored in a checkpoint file, without decoding the rest.
inline Digest stored_config_hash(const io::Bytes& bytes) {
  UNISYNC_CHECK(bytes.size() >= 40 && std::memcmp(bytes.data(), kCheckpointMagic, 4) == 0, ErrorKind::bad_magic,
                "not a UCKP checkpoint");
  Digest d{};
  std::memcpy(d.data(), bytes.data() + 8, 32);
  return d;
}

}  // namespace unisync
