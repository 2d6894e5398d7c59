#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "unisync/tensor.hpp"

namespace unisync {

enum class Modality { audio, visual };

inline const char* to_string(Modality m) { return m == Modality::audio ? "audio" : "visual"; }

/// Visual frame rate and clip length shared by every representation.
inline constexpr std::size_t kFramesPerSecond = 25;
inline constexpr std::size_t kFramesPerClip = 5;

/// Shape contract for one representation family.
///
/// Tracks are stored as a sequence of time steps of shape `step_dims`; a clip
/// is `steps_per_clip` consecutive steps covering 0.2 s, reshaped to
/// `clip_dims`. Visual families step at the frame rate, audio families at
/// their native feature rate.
struct RepresentationSpec {
  std::string name;
  Modality modality = Modality::visual;
  Dims clip_dims;
  std::size_t frames_per_clip = kFramesPerClip;
  std::size_t steps_per_clip = kFramesPerClip;
  Dims step_dims;
  // Non-zero for label maps that are one-hot expanded at model input.
  std::size_t num_classes = 0;
  std::string description;

  friend bool operator==(const RepresentationSpec&, const RepresentationSpec&) = default;
};

inline std::vector<RepresentationSpec> builtin_specs() {
  return {
      {"rgb", Modality::visual, {5, 3, 96, 96}, 5, 5, {3, 96, 96}, 0, "RGB face crops, 5 frames"},
      {"parsing", Modality::visual, {5, 1, 96, 96}, 5, 5, {1, 96, 96}, 19,
       "face parsing label maps (classes 0-18 stored as floats), 5 frames"},
      {"landmarks", Modality::visual, {5, 2, 68, 1}, 5, 5, {2, 68, 1}, 0, "68 2-d facial landmarks, 5 frames"},
      {"3dmm", Modality::visual, {5, 1, 64, 1}, 5, 5, {1, 64, 1}, 0, "64 3DMM expression coefficients, 5 frames"},
      {"mel", Modality::audio, {1, 1, 16, 80}, 5, 16, {80}, 0, "80-bin mel spectrogram, 16 hops per clip"},
      {"hubert", Modality::audio, {1, 1, 10, 768}, 5, 10, {768}, 0, "768-d HuBERT features at 50 Hz"},
  };
}

inline const RepresentationSpec& find_spec(std::string_view name) {
  static const std::vector<RepresentationSpec> specs = builtin_specs();
  auto it = std::find_if(specs.begin(), specs.end(), [&](const auto& s) { return s.name == name; });
  UNISYNC_CHECK(it != specs.end(), ErrorKind::config, "unknown representation '" + std::string(name) + "'");
  return *it;
}

/// Steps needed so that a track of `frames` frames yields exactly `frames`
/// back through frames_for_steps.
inline std::size_t steps_for_frames(const RepresentationSpec& spec, std::size_t frames) {
  return (frames * spec.steps_per_clip + spec.frames_per_clip - 1) / spec.frames_per_clip;
}

inline std::size_t frames_for_steps(const RepresentationSpec& spec, std::size_t steps) {
  return steps * spec.frames_per_clip / spec.steps_per_clip;
}

inline std::size_t step_for_frame(const RepresentationSpec& spec, std::size_t frame) {
  return frame * spec.steps_per_clip / spec.frames_per_clip;
}

struct FeatureClip {
  RepresentationSpec spec;
  Tensor data;
  std::string source_track;
  std::size_t start_frame = 0;
};

struct Track {
  std::string track_id;
  std::string speaker_id;
  std::string visual_spec;
  std::string audio_spec;
  Tensor visual;  // [frames, step_dims...]
  Tensor audio;   // [steps, step_dims...]
  // Generator latents per frame, present only for synthetic tracks.
  std::optional<std::vector<float>> visual_latent;
  std::optional<std::vector<float>> audio_latent;

  std::size_t length_frames() const { return visual.empty() ? 0 : visual.dim(0); }
};

inline std::size_t track_frames(const Tensor& data, const RepresentationSpec& spec) {
  return data.empty() ? 0 : frames_for_steps(spec, data.dim(0));
}

/// Checks step dims and frame-for-frame alignment of a track.
inline void validate_track(const Track& t) {
  const auto& vs = find_spec(t.visual_spec);
  const auto& as = find_spec(t.audio_spec);
  UNISYNC_CHECK(vs.modality == Modality::visual && as.modality == Modality::audio, ErrorKind::spec_mismatch,
                "track " + t.track_id + " has specs of the wrong modality");
  auto step_dims_ok = [](const Tensor& x, const RepresentationSpec& s) {
    return x.ndim() == s.step_dims.size() + 1 && Dims(x.dims().begin() + 1, x.dims().end()) == s.step_dims;
  };
  UNISYNC_CHECK(step_dims_ok(t.visual, vs), ErrorKind::spec_mismatch,
                "track " + t.track_id + " visual dims " + dims_to_string(t.visual.dims()) + " do not match spec " + vs.name);
  UNISYNC_CHECK(step_dims_ok(t.audio, as), ErrorKind::spec_mismatch,
                "track " + t.track_id + " audio dims " + dims_to_string(t.audio.dims()) + " do not match spec " + as.name);
  const std::size_t vf = track_frames(t.visual, vs), af = track_frames(t.audio, as);
  UNISYNC_CHECK(vf == af, ErrorKind::misaligned_track,
                "track " + t.track_id + ": visual has " + std::to_string(vf) + " frames, audio has " +
                    std::to_string(af));
  UNISYNC_CHECK(vf >= kFramesPerClip, ErrorKind::range, "track " + t.track_id + " is shorter than one clip");
}

/// Cuts the 0.2 s window starting at visual frame `start_frame`.
inline FeatureClip cut_clip(const Track& t, Modality modality, std::size_t start_frame) {
  const bool visual = modality == Modality::visual;
  const auto& spec = find_spec(visual ? t.visual_spec : t.audio_spec);
  const Tensor& src = visual ? t.visual : t.audio;
  const std::size_t frames = track_frames(src, spec);
  UNISYNC_CHECK(start_frame + spec.frames_per_clip <= frames, ErrorKind::range,
                "clip at frame " + std::to_string(start_frame) + " exceeds track " + t.track_id + " of " +
                    std::to_string(frames) + " frames");
  const std::size_t first = step_for_frame(spec, start_frame);
  const std::size_t per_step = dims_product(spec.step_dims);
  UNISYNC_CHECK(first + spec.steps_per_clip <= src.dim(0), ErrorKind::range, "clip window exceeds track steps");
  std::vector<float> data(src.data() + first * per_step, src.data() + (first + spec.steps_per_clip) * per_step);
  return FeatureClip{spec, Tensor(spec.clip_dims, std::move(data)), t.track_id, start_frame};
}

struct Corpus {
  std::vector<Track> tracks;

  std::set<std::string> speakers() const {
    std::set<std::string> s;
    for (const auto& t : tracks) s.insert(t.speaker_id);
    return s;
  }

  const Track& track(std::string_view id) const {
    auto it = std::find_if(tracks.begin(), tracks.end(), [&](const Track& t) { return t.track_id == id; });
    UNISYNC_CHECK(it != tracks.end(), ErrorKind::range, "unknown track '" + std::string(id) + "'");
    return *it;
  }

  std::size_t index_of(std::string_view id) const {
    for (std::size_t i = 0; i < tracks.size(); ++i)
      if (tracks[i].track_id == id) return i;
    throw Error(ErrorKind::range, "unknown track '" + std::string(id) + "'");
  }

  void validate() const {
    std::set<std::string> ids;
    for (const auto& t : tracks) {
      UNISYNC_CHECK(ids.insert(t.track_id).second, ErrorKind::duplicate_track, "duplicate track id '" + t.track_id + "'");
      validate_track(t);
    }
  }
};

/// Splits off the last `per_speaker` tracks of every speaker (in corpus order)
/// as a held-out set, preserving order otherwise. Returns {train, held_out}.
inline std::pair<Corpus, Corpus> split_holdout(Corpus c, std::size_t per_speaker = 1) {
  std::map<std::string, std::size_t> total, seen;
  for (const auto& t : c.tracks) ++total[t.speaker_id];
  for (const auto& [spk, n] : total)
    UNISYNC_CHECK(n > per_speaker, ErrorKind::config, "speaker " + spk + " has too few tracks for a held-out split");
  Corpus train, held;
  for (auto& t : c.tracks) {
    const std::size_t i = seen[t.speaker_id]++;
    (i + per_speaker < total[t.speaker_id] ? train : held).tracks.push_back(std::move(t));
  }
  return {std::move(train), std::move(held)};
}

}  // namespace unisync
