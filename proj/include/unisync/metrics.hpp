#pragma once

// Lip-sync accuracy, offset scans and LSE-D / LSE-C.
//
// distance = 1 - p_sync. LSE-D is the mean over clips of the minimum
// distance across the offset scan; LSE-C is the mean of (median - minimum).

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <span>
#include <string>
#include <vector>

#include "unisync/model.hpp"
#include "unisync/sampler.hpp"

namespace unisync {

/// Anything that assigns p_sync to (audio, visual) clip pairs, row by row.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::vector<double> score(std::span<const FeatureClip> audio, std::span<const FeatureClip> visual) const = 0;
  virtual double threshold() const { return 0.5; }
};

class ModelScorer final : public Scorer {
 public:
  ModelScorer(const ModelWeights& weights, const EncoderConfig& config, std::size_t chunk = 32)
      : weights_(weights), config_(config), chunk_(std::max<std::size_t>(1, chunk)) {}

  std::vector<double> score(std::span<const FeatureClip> audio, std::span<const FeatureClip> visual) const override {
    UNISYNC_CHECK(audio.size() == visual.size(), ErrorKind::shape, "score needs as many audio as visual clips");
    std::vector<double> out;
    out.reserve(audio.size());
    for (std::size_t b = 0; b < audio.size(); b += chunk_) {
      const std::size_t n = std::min(chunk_, audio.size() - b);
      const auto ea = encode_batch(audio.subspan(b, n), Modality::audio, weights_, config_);
      const auto ev = encode_batch(visual.subspan(b, n), Modality::visual, weights_, config_);
      const std::size_t d = ea.dim(1);
      for (std::size_t i = 0; i < n; ++i)
        out.push_back(sync_probability(std::span(ea.data() + i * d, d), std::span(ev.data() + i * d, d)));
    }
    return out;
  }

  double threshold() const override { return config_.threshold; }

 private:
  const ModelWeights& weights_;
  EncoderConfig config_;
  std::size_t chunk_;
};

inline std::vector<double> score_pairs(const Scorer& scorer, std::span<const PairSample> pairs) {
  std::vector<FeatureClip> a, v;
  a.reserve(pairs.size());
  v.reserve(pairs.size());
  for (const auto& p : pairs) {
    a.push_back(p.audio);
    v.push_back(p.visual);
  }
  return scorer.score(a, v);
}

/// Accuracy of classify(p) against the labels of a balanced draw: even
/// indices are positives, odd indices negatives drawn per the sampler config.
inline double lip_sync_accuracy(const Scorer& scorer, const Corpus& corpus, std::size_t n_pairs,
                                const SamplerConfig& cfg, Rng& rng, std::size_t chunk = 64) {
  UNISYNC_CHECK(n_pairs >= 1, ErrorKind::config, "n_pairs must be >= 1");
  validate(cfg);
  std::size_t correct = 0;
  for (std::size_t b = 0; b < n_pairs; b += chunk) {
    std::vector<PairSample> pairs;
    for (std::size_t i = b; i < std::min(n_pairs, b + chunk); ++i) {
      if (i % 2 == 0) {
        pairs.push_back(make_positive(corpus, rng));
      } else {
        const auto cls = rng.bernoulli(cfg.cross_fraction_of_negatives) ? PairClass::cross_speaker_negative
                                                                         : PairClass::same_speaker_negative;
        pairs.push_back(make_sample(corpus, cls, rng, cfg));
      }
    }
    const auto p = score_pairs(scorer, pairs);
    for (std::size_t i = 0; i < pairs.size(); ++i)
      correct += (classify(p[i], scorer.threshold()) == SyncLabel::sync) == (pairs[i].label == 1);
  }
  return static_cast<double>(correct) / static_cast<double>(n_pairs);
}

struct OffsetScan {
  std::string track_id;
  std::size_t center_frame = 0;
  std::vector<long> offsets;
  std::vector<double> distances;
};

inline std::vector<long> offset_range(std::size_t max_offset) {
  std::vector<long> out;
  for (long o = -static_cast<long>(max_offset); o <= static_cast<long>(max_offset); ++o) out.push_back(o);
  return out;
}

/// distances[k] = 1 - p(audio at center, visual at center + offsets[k]).
inline OffsetScan offset_scan(const Scorer& scorer, const Track& track, std::size_t center_frame,
                              const std::vector<long>& offsets) {
  UNISYNC_CHECK(!offsets.empty(), ErrorKind::config, "offset scan needs offsets");
  for (std::size_t k = 1; k < offsets.size(); ++k)
    UNISYNC_CHECK(offsets[k] > offsets[k - 1], ErrorKind::config, "offsets must be strictly increasing");
  const long last = static_cast<long>(track.length_frames()) - static_cast<long>(kFramesPerClip);
  const long c = static_cast<long>(center_frame);
  UNISYNC_CHECK(c <= last && c + offsets.front() >= 0 && c + offsets.back() <= last, ErrorKind::range,
                "offset scan around frame " + std::to_string(center_frame) + " leaves track " + track.track_id);
  std::vector<FeatureClip> a(offsets.size(), cut_clip(track, Modality::audio, center_frame));
  std::vector<FeatureClip> v;
  for (long o : offsets) v.push_back(cut_clip(track, Modality::visual, static_cast<std::size_t>(c + o)));
  const auto p = scorer.score(a, v);
  OffsetScan s{track.track_id, center_frame, offsets, {}};
  for (double x : p) s.distances.push_back(std::clamp(1.0 - x, 0.0, 1.0));
  return s;
}

/// Offset of minimal distance; ties go to the smaller |offset|, then to the
/// negative one.
inline long estimate_offset(const OffsetScan& scan) {
  UNISYNC_CHECK(!scan.distances.empty() && scan.distances.size() == scan.offsets.size(), ErrorKind::config,
                "estimate_offset needs a non-empty scan");
  std::size_t best = 0;
  for (std::size_t k = 1; k < scan.distances.size(); ++k) {
    const double d = scan.distances[k], db = scan.distances[best];
    const long o = scan.offsets[k], ob = scan.offsets[best];
    if (d < db || (d == db && (std::labs(o) < std::labs(ob) || (std::labs(o) == std::labs(ob) && o < ob)))) best = k;
  }
  return scan.offsets[best];
}

inline double median(std::vector<double> v) {
  UNISYNC_CHECK(!v.empty(), ErrorKind::range, "median of empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct LseMetrics {
  double lse_d = 0;
  double lse_c = 0;
};

inline LseMetrics lse_from_scans(std::span<const OffsetScan> scans) {
  UNISYNC_CHECK(!scans.empty(), ErrorKind::range, "no scans");
  LseMetrics m;
  for (const auto& s : scans) {
    const double lo = *std::min_element(s.distances.begin(), s.distances.end());
    m.lse_d += lo;
    m.lse_c += median(s.distances) - lo;
  }
  m.lse_d /= static_cast<double>(scans.size());
  m.lse_c /= static_cast<double>(scans.size());
  return m;
}

/// Random clip centers with room for the full ±max_offset scan.
inline std::vector<std::pair<std::size_t, std::size_t>> scan_centers(const Corpus& corpus, std::size_t n_clips,
                                                                     std::size_t max_offset, Rng& rng) {
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < corpus.tracks.size(); ++i)
    if (corpus.tracks[i].length_frames() >= kFramesPerClip + 2 * max_offset) eligible.push_back(i);
  UNISYNC_CHECK(!eligible.empty(), ErrorKind::range, "no track is long enough for the offset scan");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t k = 0; k < n_clips; ++k) {
    const std::size_t t = eligible[rng.uniform_index(eligible.size())];
    const std::size_t span = corpus.tracks[t].length_frames() - kFramesPerClip - 2 * max_offset;
    out.emplace_back(t, max_offset + rng.uniform_index(span + 1));
  }
  return out;
}

inline LseMetrics lse_metrics(const Scorer& scorer, const Corpus& corpus, std::size_t n_clips, Rng& rng,
                              std::size_t max_offset = 15) {
  UNISYNC_CHECK(n_clips >= 1, ErrorKind::config, "n_clips must be >= 1");
  const auto offsets = offset_range(max_offset);
  std::vector<OffsetScan> scans;
  for (const auto& [t, c] : scan_centers(corpus, n_clips, max_offset, rng))
    scans.push_back(offset_scan(scorer, corpus.tracks[t], c, offsets));
  return lse_from_scans(scans);
}

/// Distance scan averaged over every window center of the track that admits
/// the full offset range, stepping by `stride` frames.
inline OffsetScan track_offset_scan(const Scorer& scorer, const Track& track, std::size_t max_offset,
                                    std::size_t stride = kFramesPerClip) {
  const auto offsets = offset_range(max_offset);
  UNISYNC_CHECK(track.length_frames() >= kFramesPerClip + 2 * max_offset, ErrorKind::range,
                "track " + track.track_id + " is too short for a ±" + std::to_string(max_offset) + " scan");
  OffsetScan acc{track.track_id, max_offset, offsets, std::vector<double>(offsets.size(), 0.0)};
  std::size_t n = 0;
  for (std::size_t c = max_offset; c + max_offset + kFramesPerClip <= track.length_frames(); c += stride, ++n) {
    const auto s = offset_scan(scorer, track, c, offsets);
    for (std::size_t k = 0; k < offsets.size(); ++k) acc.distances[k] += s.distances[k];
  }
  for (auto& d : acc.distances) d /= static_cast<double>(n);
  return acc;
}

struct MetricReport {
  double accuracy = 0;
  double lse_d = 0;
  double lse_c = 0;
  std::size_t n_pairs = 0;
  std::size_t n_clips = 0;
  std::uint64_t seed = 0;
};

inline MetricReport evaluate(const Scorer& scorer, const Corpus& corpus, std::size_t n_pairs, std::size_t n_clips,
                             std::size_t max_offset, const SamplerConfig& cfg, std::uint64_t seed) {
  MetricReport r;
  Rng pair_rng(derive_seed(seed, "eval/pairs"));
  r.accuracy = lip_sync_accuracy(scorer, corpus, n_pairs, cfg, pair_rng);
  Rng clip_rng(derive_seed(seed, "eval/clips"));
  const auto lse = lse_metrics(scorer, corpus, n_clips, clip_rng, max_offset);
  r.lse_d = lse.lse_d;
  r.lse_c = lse.lse_c;
  r.n_pairs = n_pairs;
  r.n_clips = n_clips;
  r.seed = seed;
  return r;
}

}  // namespace unisync
