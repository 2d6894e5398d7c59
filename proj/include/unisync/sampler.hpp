#pragma once

// Contrastive pair construction: sync positives, same-speaker shifted
// negatives and cross-speaker negatives.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "unisync/representation.hpp"
#include "unisync/rng.hpp"

namespace unisync {

enum class PairClass { positive, same_speaker_negative, cross_speaker_negative };

inline const char* to_string(PairClass c) {
  switch (c) {
    case PairClass::positive: return "positive";
    case PairClass::same_speaker_negative: return "same_speaker_negative";
    case PairClass::cross_speaker_negative: return "cross_speaker_negative";
  }
  return "?";
}

struct PairSample {
  FeatureClip audio;
  FeatureClip visual;
  int label = 0;
  PairClass pair_class = PairClass::positive;
  double margin = 0;
};

struct SamplerConfig {
  double pos_fraction = 0.5;
  double cross_fraction_of_negatives = 0.2;
  std::size_t min_shift_frames = 5;
  double margin_same = 0.3;
  double margin_cross = 0.7;

  friend bool operator==(const SamplerConfig&, const SamplerConfig&) = default;
};

// Same-track shifts up to this many frames count as overlapping context.
inline constexpr std::size_t kOverlapShiftLimit = 25;

inline void validate(const SamplerConfig& c) {
  auto unit = [](double x) { return x >= 0 && x <= 1; };
  UNISYNC_CHECK(unit(c.pos_fraction) && unit(c.cross_fraction_of_negatives), ErrorKind::config,
                "sampler fractions must lie in [0,1]");
  UNISYNC_CHECK(c.min_shift_frames >= 1, ErrorKind::config, "min_shift_frames must be >= 1");
  UNISYNC_CHECK(c.margin_same >= 0 && c.margin_same < 1 && c.margin_cross >= 0 && c.margin_cross < 1,
                ErrorKind::config, "margins must lie in [0,1)");
  UNISYNC_CHECK(c.margin_same <= c.margin_cross, ErrorKind::config, "margin_same must not exceed margin_cross");
}

namespace detail {

inline std::size_t last_start(const Track& t) { return t.length_frames() - kFramesPerClip; }

inline std::map<std::string, std::vector<std::size_t>> tracks_by_speaker(const Corpus& c) {
  std::map<std::string, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < c.tracks.size(); ++i) out[c.tracks[i].speaker_id].push_back(i);
  return out;
}

inline std::size_t random_start(const Track& t, Rng& rng) { return rng.uniform_index(last_start(t) + 1); }

}  // namespace detail

inline PairSample make_pair(const Track& audio_track, std::size_t audio_start, const Track& visual_track,
                            std::size_t visual_start, PairClass cls, double margin) {
  PairSample s;
  s.audio = cut_clip(audio_track, Modality::audio, audio_start);
  s.visual = cut_clip(visual_track, Modality::visual, visual_start);
  s.pair_class = cls;
  s.label = cls == PairClass::positive ? 1 : 0;
  s.margin = cls == PairClass::positive ? 0.0 : margin;
  return s;
}

inline PairSample make_positive(const Corpus& corpus, std::string_view track_id, std::size_t start_frame) {
  const Track& t = corpus.track(track_id);
  return make_pair(t, start_frame, t, start_frame, PairClass::positive, 0.0);
}

inline PairSample make_positive(const Corpus& corpus, Rng& rng) {
  UNISYNC_CHECK(!corpus.tracks.empty(), ErrorKind::range, "empty corpus");
  const Track& t = corpus.tracks[rng.uniform_index(corpus.tracks.size())];
  const std::size_t start = detail::random_start(t, rng);
  return make_pair(t, start, t, start, PairClass::positive, 0.0);
}

/// Same-track pairs are shifted by at least min_shift_frames, choosing the
/// overlapping (shift <= 25) or non-overlapping regime with equal odds when
/// the track allows both. Tracks too short for any valid shift are paired
/// with another track of the same speaker.
inline PairSample make_same_speaker_negative(const Corpus& corpus, Rng& rng, const SamplerConfig& cfg) {
  validate(cfg);
  const auto by_spk = detail::tracks_by_speaker(corpus);
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < corpus.tracks.size(); ++i)
    if (detail::last_start(corpus.tracks[i]) >= cfg.min_shift_frames || by_spk.at(corpus.tracks[i].speaker_id).size() >= 2)
      eligible.push_back(i);
  UNISYNC_CHECK(!eligible.empty(), ErrorKind::range, "no track admits a same-speaker negative");

  const Track& t = corpus.tracks[eligible[rng.uniform_index(eligible.size())]];
  const std::size_t max_shift = detail::last_start(t);
  if (max_shift < cfg.min_shift_frames) {
    std::vector<std::size_t> others;
    for (std::size_t j : by_spk.at(t.speaker_id))
      if (corpus.tracks[j].track_id != t.track_id) others.push_back(j);
    const Track& u = corpus.tracks[others[rng.uniform_index(others.size())]];
    const bool audio_from_t = rng.bernoulli(0.5);
    const Track& at = audio_from_t ? t : u;
    const Track& vt = audio_from_t ? u : t;
    const std::size_t as = detail::random_start(at, rng);
    const std::size_t vs = detail::random_start(vt, rng);
    return make_pair(at, as, vt, vs, PairClass::same_speaker_negative, cfg.margin_same);
  }

  const std::size_t lo_overlap = cfg.min_shift_frames;
  const std::size_t hi_overlap = std::min(kOverlapShiftLimit, max_shift);
  const std::size_t lo_far = std::max(kOverlapShiftLimit + 1, cfg.min_shift_frames);
  const bool has_overlap = lo_overlap <= hi_overlap;
  const bool has_far = lo_far <= max_shift;
  const bool far = has_far && (!has_overlap || rng.bernoulli(0.5));
  const std::size_t lo = far ? lo_far : lo_overlap, hi = far ? max_shift : hi_overlap;
  const auto d = static_cast<long>(lo + rng.uniform_index(hi - lo + 1));
  const long shift = rng.bernoulli(0.5) ? d : -d;  // audio start minus visual start
  const long v_lo = std::max(0L, -shift);
  const long v_hi = static_cast<long>(max_shift) - std::max(0L, shift);
  const long v = v_lo + static_cast<long>(rng.uniform_index(static_cast<std::uint64_t>(v_hi - v_lo + 1)));
  return make_pair(t, static_cast<std::size_t>(v + shift), t, static_cast<std::size_t>(v),
                   PairClass::same_speaker_negative, cfg.margin_same);
}

inline PairSample make_cross_speaker_negative(const Corpus& corpus, Rng& rng, const SamplerConfig& cfg) {
  validate(cfg);
  UNISYNC_CHECK(corpus.speakers().size() >= 2, ErrorKind::range, "cross-speaker negatives need >= 2 speakers");
  const Track& at = corpus.tracks[rng.uniform_index(corpus.tracks.size())];
  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < corpus.tracks.size(); ++i)
    if (corpus.tracks[i].speaker_id != at.speaker_id) others.push_back(i);
  const Track& vt = corpus.tracks[others[rng.uniform_index(others.size())]];
  const std::size_t as = detail::random_start(at, rng);
  const std::size_t vs = detail::random_start(vt, rng);
  return make_pair(at, as, vt, vs, PairClass::cross_speaker_negative, cfg.margin_cross);
}

/// Class drawn per sample: positive with pos_fraction, otherwise cross-speaker
/// with cross_fraction_of_negatives, otherwise same-speaker.
inline PairClass draw_class(Rng& rng, const SamplerConfig& cfg) {
  if (rng.bernoulli(cfg.pos_fraction)) return PairClass::positive;
  return rng.bernoulli(cfg.cross_fraction_of_negatives) ? PairClass::cross_speaker_negative
                                                        : PairClass::same_speaker_negative;
}

inline PairSample make_sample(const Corpus& corpus, PairClass cls, Rng& rng, const SamplerConfig& cfg) {
  switch (cls) {
    case PairClass::positive: return make_positive(corpus, rng);
    case PairClass::same_speaker_negative: return make_same_speaker_negative(corpus, rng, cfg);
    case PairClass::cross_speaker_negative: return make_cross_speaker_negative(corpus, rng, cfg);
  }
  throw Error(ErrorKind::range, "unknown pair class");
}

inline std::vector<PairSample> sample_batch(const Corpus& corpus, std::size_t batch_size, const SamplerConfig& cfg,
                                            Rng& rng) {
  validate(cfg);
  UNISYNC_CHECK(batch_size >= 2, ErrorKind::config, "batch_size must be >= 2");
  std::vector<PairSample> batch;
  batch.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) batch.push_back(make_sample(corpus, draw_class(rng, cfg), rng, cfg));
  return batch;
}

}  // namespace unisync
