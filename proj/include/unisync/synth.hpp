#pragma once

// Synthetic speaker-attributed corpora with a known audio-visual coupling.
//
// Every track is driven by one scalar articulation latent s(t) per frame.
// Visual steps are s(t) * V_spk + noise and audio steps are s(t') * A_spk +
// noise, where V_spk / A_spk are fixed per-speaker random maps into the
// step shape and t' is the audio step's time in frames (linear
// interpolation of s). Aligned windows therefore share their latent while
// shifted or cross-speaker windows do not.

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <string>
#include <vector>

#include "unisync/representation.hpp"
#include "unisync/rng.hpp"

namespace unisync {

struct SynthConfig {
  std::size_t n_speakers = 4;
  std::size_t tracks_per_speaker = 4;
  std::size_t frames_per_track = 500;
  std::string visual_spec = "rgb";
  std::string audio_spec = "mel";
  double noise_level = 0.1;
  std::uint64_t seed = 7;
};

inline constexpr double kLatentPersistence = 0.5;  // AR(1) coefficient of the leaky walk
inline constexpr std::size_t kLatentSmoothing = 5;  // moving-average width, frames
inline constexpr double kSpeakerJitter = 0.5;       // speaker deviation from the shared map

/// Stationary standard deviation of the smoothed leaky walk with unit
/// innovations, used to normalize s(t) to unit variance.
inline double latent_stddev() {
  const double rho = kLatentPersistence;
  const std::size_t w = kLatentSmoothing;
  double acc = 0;
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t j = 0; j < w; ++j)
      acc += std::pow(rho, std::abs(static_cast<double>(i) - static_cast<double>(j))) / (1 - rho * rho);
  return std::sqrt(acc) / static_cast<double>(w);
}

/// Per-frame latent: leaky Gaussian walk, 5-frame moving average, unit variance.
inline std::vector<float> synth_latent(std::size_t frames, Rng& rng) {
  const std::size_t w = kLatentSmoothing;
  std::vector<double> walk(frames + w - 1);
  // Start from the stationary distribution so the first frames are not special.
  double x = rng.normal() / std::sqrt(1 - kLatentPersistence * kLatentPersistence);
  for (auto& v : walk) {
    x = kLatentPersistence * x + rng.normal();
    v = x;
  }
  const double norm = 1.0 / (latent_stddev() * static_cast<double>(w));
  std::vector<float> s(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0;
    for (std::size_t k = 0; k < w; ++k) acc += walk[f + k];
    s[f] = static_cast<float>(acc * norm);
  }
  return s;
}

/// Latent at a fractional frame time, linear interpolation, clamped at the ends.
inline double latent_at(const std::vector<float>& s, double t) {
  if (t <= 0) return s.front();
  const double last = static_cast<double>(s.size() - 1);
  if (t >= last) return s.back();
  const auto i = static_cast<std::size_t>(t);
  const double a = t - static_cast<double>(i);
  return (1 - a) * s[i] + a * s[i + 1];
}

namespace detail {

/// Random field of the given step shape. Image-like shapes [C,H,W] with H,W
/// > 8 get a spatially smooth field (bilinear upsampling of a coarse 6x6
/// grid); everything else is i.i.d. N(0,1).
inline std::vector<float> random_map(const Dims& step_dims, Rng& rng) {
  const std::size_t n = dims_product(step_dims);
  std::vector<float> out(n);
  if (step_dims.size() == 3 && step_dims[1] > 8 && step_dims[2] > 8) {
    const std::size_t c = step_dims[0], h = step_dims[1], w = step_dims[2], g = 6;
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::vector<double> grid(g * g);
      for (auto& v : grid) v = rng.normal();
      for (std::size_t i = 0; i < h; ++i) {
        const double y = (static_cast<double>(i) + 0.5) / static_cast<double>(h) * (g - 1);
        const auto y0 = std::min<std::size_t>(static_cast<std::size_t>(y), g - 2);
        const double ay = y - static_cast<double>(y0);
        for (std::size_t j = 0; j < w; ++j) {
          const double x = (static_cast<double>(j) + 0.5) / static_cast<double>(w) * (g - 1);
          const auto x0 = std::min<std::size_t>(static_cast<std::size_t>(x), g - 2);
          const double ax = x - static_cast<double>(x0);
          const double v = (1 - ay) * ((1 - ax) * grid[y0 * g + x0] + ax * grid[y0 * g + x0 + 1]) +
                           ay * ((1 - ax) * grid[(y0 + 1) * g + x0] + ax * grid[(y0 + 1) * g + x0 + 1]);
          out[(ch * h + i) * w + j] = static_cast<float>(v);
        }
      }
    }
  } else {
    rng.fill_normal(out, 1.0);
  }
  return out;
}

/// Speaker map: a corpus-wide articulation pattern plus speaker jitter.
inline std::vector<float> speaker_map(const std::vector<float>& shared, const Dims& step_dims, Rng& rng) {
  auto jitter = random_map(step_dims, rng);
  std::vector<float> out(shared.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = shared[i] + static_cast<float>(kSpeakerJitter) * jitter[i];
  return out;
}

/// steps x step_dims tensor: value(step) = s(time(step)) * map + noise.
/// Label-map specs are quantized to class indices around the middle class.
inline Tensor render_stream(const RepresentationSpec& spec, const std::vector<float>& latent,
                            const std::vector<float>& map, std::size_t steps, double noise, Rng& rng) {
  const std::size_t per = map.size();
  Dims dims{steps};
  dims.insert(dims.end(), spec.step_dims.begin(), spec.step_dims.end());
  Tensor out(dims);
  rng.fill_normal(out.values(), noise);
  const double frames_per_step = static_cast<double>(spec.frames_per_clip) / static_cast<double>(spec.steps_per_clip);
  for (std::size_t k = 0; k < steps; ++k) {
    const auto s = static_cast<float>(latent_at(latent, static_cast<double>(k) * frames_per_step));
    float* dst = out.data() + k * per;
    for (std::size_t i = 0; i < per; ++i) dst[i] += s * map[i];
  }
  if (spec.num_classes > 0) {
    const float mid = static_cast<float>(spec.num_classes / 2);
    const float top = static_cast<float>(spec.num_classes - 1);
    for (auto& v : out.values()) v = std::clamp(std::round(mid + 3.0f * v), 0.0f, top);
  }
  return out;
}

}  // namespace detail

inline Corpus synth_corpus(const SynthConfig& cfg) {
  UNISYNC_CHECK(cfg.n_speakers >= 2, ErrorKind::config, "need ≥ 2 speakers");
  UNISYNC_CHECK(cfg.tracks_per_speaker >= 1, ErrorKind::config, "need >= 1 track per speaker");
  UNISYNC_CHECK(cfg.frames_per_track >= kFramesPerSecond, ErrorKind::config, "need >= 25 frames per track");
  UNISYNC_CHECK(cfg.noise_level >= 0 && std::isfinite(cfg.noise_level), ErrorKind::config, "noise level must be >= 0");
  const auto& vspec = find_spec(cfg.visual_spec);
  const auto& aspec = find_spec(cfg.audio_spec);
  UNISYNC_CHECK(vspec.modality == Modality::visual, ErrorKind::config, cfg.visual_spec + " is not a visual representation");
  UNISYNC_CHECK(aspec.modality == Modality::audio, ErrorKind::config, cfg.audio_spec + " is not an audio representation");

  Rng map_rng(derive_seed(cfg.seed, "maps"));
  const auto shared_v = detail::random_map(vspec.step_dims, map_rng);
  const auto shared_a = detail::random_map(aspec.step_dims, map_rng);

  Corpus c;
  const std::size_t audio_steps = steps_for_frames(aspec, cfg.frames_per_track);
  for (std::size_t spk = 0; spk < cfg.n_speakers; ++spk) {
    Rng spk_rng(derive_seed(cfg.seed, "speaker/" + std::to_string(spk)));
    const auto vmap = detail::speaker_map(shared_v, vspec.step_dims, spk_rng);
    const auto amap = detail::speaker_map(shared_a, aspec.step_dims, spk_rng);
    char spk_id[16];
    std::snprintf(spk_id, sizeof spk_id, "spk%02zu", spk);
    for (std::size_t tr = 0; tr < cfg.tracks_per_speaker; ++tr) {
      char track_id[32];
      std::snprintf(track_id, sizeof track_id, "%s_t%02zu", spk_id, tr);
      Rng rng(derive_seed(cfg.seed, std::string("track/") + track_id));
      Track t;
      t.track_id = track_id;
      t.speaker_id = spk_id;
      t.visual_spec = vspec.name;
      t.audio_spec = aspec.name;
      auto latent = synth_latent(cfg.frames_per_track, rng);
      t.visual = detail::render_stream(vspec, latent, vmap, cfg.frames_per_track, cfg.noise_level, rng);
      t.audio = detail::render_stream(aspec, latent, amap, audio_steps, cfg.noise_level, rng);
      t.visual_latent = latent;
      t.audio_latent = std::move(latent);
      c.tracks.push_back(std::move(t));
    }
  }
  c.validate();
  return c;
}

/// Copy of `t` whose visual stream is advanced by `shift` frames:
/// visual'[f] = visual[f + shift]. Frames that would fall outside the source
/// are dropped from both streams, so the result stays aligned frame-for-frame
/// in storage while its content is offset. Scanning this track against its
/// own audio places the best match at offset -shift.
inline Track shift_visual(const Track& t, long shift) {
  const auto& vspec = find_spec(t.visual_spec);
  const auto& aspec = find_spec(t.audio_spec);
  const long frames = static_cast<long>(t.length_frames());
  long begin = std::max(0L, -shift);
  // Start on a frame that falls exactly on an audio step boundary.
  while ((static_cast<std::size_t>(begin) * aspec.steps_per_clip) % aspec.frames_per_clip != 0) ++begin;
  const long end = std::min(frames, frames - shift);
  UNISYNC_CHECK(end - begin >= static_cast<long>(kFramesPerClip), ErrorKind::range, "shift leaves no frames");
  const auto n = static_cast<std::size_t>(end - begin);
  const std::size_t per_v = dims_product(vspec.step_dims);
  const std::size_t per_a = dims_product(aspec.step_dims);

  Track out;
  out.track_id = t.track_id + "_shift" + std::to_string(shift);
  out.speaker_id = t.speaker_id;
  out.visual_spec = t.visual_spec;
  out.audio_spec = t.audio_spec;

  Dims vd = t.visual.dims();
  vd[0] = n;
  std::vector<float> vdata(t.visual.data() + static_cast<std::size_t>(begin + shift) * per_v,
                           t.visual.data() + static_cast<std::size_t>(end + shift) * per_v);
  out.visual = Tensor(vd, std::move(vdata));

  // Audio keeps its own timeline, restricted to frames [begin, end).
  const std::size_t a0 = step_for_frame(aspec, static_cast<std::size_t>(begin));
  const std::size_t an = steps_for_frames(aspec, n);
  UNISYNC_CHECK(a0 + an <= t.audio.dim(0), ErrorKind::range, "shift exceeds audio track");
  Dims ad = t.audio.dims();
  ad[0] = an;
  std::vector<float> adata(t.audio.data() + a0 * per_a, t.audio.data() + (a0 + an) * per_a);
  out.audio = Tensor(ad, std::move(adata));

  if (t.visual_latent) {
    const auto& lv = *t.visual_latent;
    out.visual_latent = std::vector<float>(lv.begin() + begin + shift, lv.begin() + end + shift);
  }
  if (t.audio_latent) {
    const auto& la = *t.audio_latent;
    out.audio_latent = std::vector<float>(la.begin() + begin, la.begin() + end);
  }
  validate_track(out);
  return out;
}

}  // namespace unisync
