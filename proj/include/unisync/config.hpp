#pragma once

// Run configuration and its JSON form.
//
// A config document has the sections encoder, sampler, trainer, eval and
// paths. Every field is optional; missing fields keep their defaults and
// unknown keys are rejected. to_json always emits every field, so parsing
// then dumping yields the canonical form.

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>

#include "json.hpp"

#include "unisync/adam.hpp"
#include "unisync/binary_io.hpp"
#include "unisync/loss.hpp"
#include "unisync/model.hpp"
#include "unisync/sampler.hpp"

namespace unisync {

using Json = nlohmann::json;

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t steps_per_epoch = 40;
  std::size_t batch_size = 16;
  AdamConfig adam{};
  LossConfig loss{};
  SamplerConfig sampler{};
  EncoderConfig encoder{};
  std::uint64_t seed = 7;
  std::size_t eval_every = 1;  // epochs; 0 disables periodic evaluation
  std::size_t eval_pairs = 400;

  /// Small-batch profile used by tests and the CLI default.
  static TrainConfig desk() { return TrainConfig{}; }

  /// Batch 64 profile.
  static TrainConfig paper() {
    TrainConfig c;
    c.batch_size = 64;
    c.adam.lr = 1e-4;
    return c;
  }
};

struct EvalConfig {
  std::size_t pairs = 1000;
  std::size_t clips = 100;
  std::size_t max_offset = 15;
  std::uint64_t seed = 7;
};

struct PathsConfig {
  std::string corpus;
  std::string val_corpus;
  std::string checkpoint;
  std::string history;
  std::string out;
};

struct RunConfig {
  TrainConfig train{};
  EvalConfig eval{};
  PathsConfig paths{};
};

inline void validate(const TrainConfig& c) {
  UNISYNC_CHECK(c.steps_per_epoch >= 1, ErrorKind::config, "steps_per_epoch must be >= 1");
  UNISYNC_CHECK(c.batch_size >= 2, ErrorKind::config, "batch_size must be >= 2");
  UNISYNC_CHECK(c.eval_pairs >= 1, ErrorKind::config, "eval_pairs must be >= 1");
  validate(c.adam);
  validate(c.loss);
  validate(c.sampler);
  validate(c.encoder);
}

inline void validate(const EvalConfig& c) {
  UNISYNC_CHECK(c.pairs >= 1, ErrorKind::config, "eval pairs must be >= 1");
  UNISYNC_CHECK(c.clips >= 1, ErrorKind::config, "eval clips must be >= 1");
}

namespace detail {

inline void reject_unknown(const Json& j, std::initializer_list<const char*> keys, const std::string& where) {
  UNISYNC_CHECK(j.is_object(), ErrorKind::config, where + " must be an object");
  std::set<std::string> known(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    UNISYNC_CHECK(known.count(k), ErrorKind::config, "unknown key '" + k + "' in " + where);
}

template <class T>
void read_field(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorKind::config, where + "." + key + " has the wrong type");
  }
}

inline Json plan_to_json(const std::vector<LayerPlan>& plan) {
  Json a = Json::array();
  for (const auto& l : plan) a.push_back({l.out_channels, l.stride_h, l.stride_w});
  return a;
}

inline std::vector<LayerPlan> plan_from_json(const Json& j, const std::string& where) {
  UNISYNC_CHECK(j.is_array(), ErrorKind::config, where + " must be a list of [channels, stride_h, stride_w]");
  std::vector<LayerPlan> out;
  for (const auto& e : j) {
    UNISYNC_CHECK(e.is_array() && e.size() == 3 && e[0].is_number_unsigned() && e[1].is_number_unsigned() &&
                      e[2].is_number_unsigned(),
                  ErrorKind::config, where + " entries must be [channels, stride_h, stride_w]");
    out.push_back({e[0].get<std::size_t>(), e[1].get<std::size_t>(), e[2].get<std::size_t>()});
  }
  return out;
}

}  // namespace detail

inline Json to_json(const EncoderConfig& c) {
  Json pre = Json::object();
  for (const auto& [name, plan] : c.preproc_plan) pre[name] = detail::plan_to_json(plan);
  return {{"visual_spec", c.visual_spec},
          {"audio_spec", c.audio_spec},
          {"unified_h", c.unified_h},
          {"unified_w", c.unified_w},
          {"unified_channels", c.unified_channels},
          {"embed_dim", c.embed_dim},
          {"preproc_plan", pre},
          {"shared_plan", detail::plan_to_json(c.shared_plan)},
          {"use_residual", c.use_residual},
          {"threshold", c.threshold}};
}

inline void from_json_into(const Json& j, EncoderConfig& c) {
  const std::string w = "encoder";
  detail::reject_unknown(j, {"visual_spec", "audio_spec", "unified_h", "unified_w", "unified_channels", "embed_dim",
                             "preproc_plan", "shared_plan", "use_residual", "threshold"},
                         w);
  detail::read_field(j, "visual_spec", c.visual_spec, w);
  detail::read_field(j, "audio_spec", c.audio_spec, w);
  detail::read_field(j, "unified_h", c.unified_h, w);
  detail::read_field(j, "unified_w", c.unified_w, w);
  detail::read_field(j, "unified_channels", c.unified_channels, w);
  detail::read_field(j, "embed_dim", c.embed_dim, w);
  detail::read_field(j, "use_residual", c.use_residual, w);
  detail::read_field(j, "threshold", c.threshold, w);
  if (j.contains("shared_plan")) c.shared_plan = detail::plan_from_json(j["shared_plan"], w + ".shared_plan");
  if (j.contains("preproc_plan")) {
    const auto& p = j["preproc_plan"];
    UNISYNC_CHECK(p.is_object(), ErrorKind::config, "encoder.preproc_plan must be an object");
    for (const auto& [name, plan] : p.items()) {
      UNISYNC_CHECK(c.preproc_plan.count(name), ErrorKind::config, "unknown key '" + name + "' in encoder.preproc_plan");
      c.preproc_plan[name] = detail::plan_from_json(plan, "encoder.preproc_plan." + name);
    }
  }
}

inline Json to_json(const SamplerConfig& c) {
  return {{"pos_fraction", c.pos_fraction},
          {"cross_fraction_of_negatives", c.cross_fraction_of_negatives},
          {"min_shift_frames", c.min_shift_frames},
          {"margin_same", c.margin_same},
          {"margin_cross", c.margin_cross}};
}

inline void from_json_into(const Json& j, SamplerConfig& c) {
  const std::string w = "sampler";
  detail::reject_unknown(j, {"pos_fraction", "cross_fraction_of_negatives", "min_shift_frames", "margin_same", "margin_cross"}, w);
  detail::read_field(j, "pos_fraction", c.pos_fraction, w);
  detail::read_field(j, "cross_fraction_of_negatives", c.cross_fraction_of_negatives, w);
  detail::read_field(j, "min_shift_frames", c.min_shift_frames, w);
  detail::read_field(j, "margin_same", c.margin_same, w);
  detail::read_field(j, "margin_cross", c.margin_cross, w);
}

/// The trainer section: everything in TrainConfig except encoder and sampler.
inline Json trainer_section(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"steps_per_epoch", c.steps_per_epoch},
          {"batch_size", c.batch_size},
          {"lr", c.adam.lr},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"adam_eps", c.adam.eps},
          {"weight_decay", c.adam.weight_decay},
          {"lambda", c.loss.lambda},
          {"clamp_eps", c.loss.clamp_eps},
          {"seed", c.seed},
          {"eval_every", c.eval_every},
          {"eval_pairs", c.eval_pairs}};
}

inline void trainer_section_into(const Json& j, TrainConfig& c) {
  const std::string w = "trainer";
  detail::reject_unknown(j, {"profile", "epochs", "steps_per_epoch", "batch_size", "lr", "beta1", "beta2", "adam_eps",
                             "weight_decay", "lambda", "clamp_eps", "seed", "eval_every", "eval_pairs"},
                         w);
  if (j.contains("profile")) {
    std::string profile;
    detail::read_field(j, "profile", profile, w);
    UNISYNC_CHECK(profile == "desk" || profile == "paper", ErrorKind::config, "trainer.profile must be desk or paper");
    const TrainConfig base = profile == "paper" ? TrainConfig::paper() : TrainConfig::desk();
    c.epochs = base.epochs;
    c.steps_per_epoch = base.steps_per_epoch;
    c.batch_size = base.batch_size;
    c.adam = base.adam;
    c.loss = base.loss;
  }
  detail::read_field(j, "epochs", c.epochs, w);
  detail::read_field(j, "steps_per_epoch", c.steps_per_epoch, w);
  detail::read_field(j, "batch_size", c.batch_size, w);
  detail::read_field(j, "lr", c.adam.lr, w);
  detail::read_field(j, "beta1", c.adam.beta1, w);
  detail::read_field(j, "beta2", c.adam.beta2, w);
  detail::read_field(j, "adam_eps", c.adam.eps, w);
  detail::read_field(j, "weight_decay", c.adam.weight_decay, w);
  detail::read_field(j, "lambda", c.loss.lambda, w);
  detail::read_field(j, "clamp_eps", c.loss.clamp_eps, w);
  detail::read_field(j, "seed", c.seed, w);
  detail::read_field(j, "eval_every", c.eval_every, w);
  detail::read_field(j, "eval_pairs", c.eval_pairs, w);
}

/// Encoder, sampler and trainer sections; this is what checkpoints record.
inline Json to_json(const TrainConfig& c) {
  return {{"encoder", to_json(c.encoder)}, {"sampler", to_json(c.sampler)}, {"trainer", trainer_section(c)}};
}

inline TrainConfig train_config_from_json(const Json& j) {
  detail::reject_unknown(j, {"encoder", "sampler", "trainer"}, "training config");
  TrainConfig c;
  if (j.contains("trainer")) trainer_section_into(j["trainer"], c);
  if (j.contains("encoder")) from_json_into(j["encoder"], c.encoder);
  if (j.contains("sampler")) from_json_into(j["sampler"], c.sampler);
  return c;
}

inline Json to_json(const EvalConfig& c) {
  return {{"pairs", c.pairs}, {"clips", c.clips}, {"max_offset", c.max_offset}, {"seed", c.seed}};
}

inline void from_json_into(const Json& j, EvalConfig& c) {
  const std::string w = "eval";
  detail::reject_unknown(j, {"pairs", "clips", "max_offset", "seed"}, w);
  detail::read_field(j, "pairs", c.pairs, w);
  detail::read_field(j, "clips", c.clips, w);
  detail::read_field(j, "max_offset", c.max_offset, w);
  detail::read_field(j, "seed", c.seed, w);
}

inline Json to_json(const PathsConfig& c) {
  return {{"corpus", c.corpus},
          {"val_corpus", c.val_corpus},
          {"checkpoint", c.checkpoint},
          {"history", c.history},
          {"out", c.out}};
}

inline void from_json_into(const Json& j, PathsConfig& c) {
  const std::string w = "paths";
  detail::reject_unknown(j, {"corpus", "val_corpus", "checkpoint", "history", "out"}, w);
  detail::read_field(j, "corpus", c.corpus, w);
  detail::read_field(j, "val_corpus", c.val_corpus, w);
  detail::read_field(j, "checkpoint", c.checkpoint, w);
  detail::read_field(j, "history", c.history, w);
  detail::read_field(j, "out", c.out, w);
}

inline Json to_json(const RunConfig& c) {
  Json j = to_json(c.train);
  j["eval"] = to_json(c.eval);
  j["paths"] = to_json(c.paths);
  return j;
}

inline RunConfig run_config_from_json(const Json& j) {
  detail::reject_unknown(j, {"encoder", "sampler", "trainer", "eval", "paths"}, "config");
  RunConfig c;
  Json train = Json::object();
  for (const char* k : {"encoder", "sampler", "trainer"})
    if (j.contains(k)) train[k] = j[k];
  c.train = train_config_from_json(train);
  if (j.contains("eval")) from_json_into(j["eval"], c.eval);
  if (j.contains("paths")) from_json_into(j["paths"], c.paths);
  return c;
}

inline Json parse_json_text(std::string_view text, const std::string& context) {
  try {
    return Json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, context + ": invalid JSON (" + e.what() + ")");
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return run_config_from_json(parse_json_text(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                                              path.string()));
}

/// Sorted keys, two-space indent, trailing newline.
inline std::string canonical_dump(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace unisync
