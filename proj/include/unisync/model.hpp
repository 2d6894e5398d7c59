#pragma once

// Dual-stream sync encoder.
//
// Each stream is: representation-specific preprocessing convs, adaptive
// average pooling to a unified [C,h,w] map, shared extraction convs, a
// linear embedding head and a final ReLU. The two embeddings are compared by
// cosine similarity.
//
// Every conv is followed by batchnorm and ReLU. A layer plan entry
// (out_channels, stride_h, stride_w) uses, per axis, kernel 3 / pad 1 for
// stride 1 and kernel = stride / pad 0 otherwise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "unisync/graph.hpp"
#include "unisync/representation.hpp"
#include "unisync/rng.hpp"

namespace unisync {

enum class Mode { train, eval };

struct LayerPlan {
  std::size_t out_channels = 0;
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;

  friend bool operator==(const LayerPlan&, const LayerPlan&) = default;
};

inline std::map<std::string, std::vector<LayerPlan>> default_preproc_plans() {
  // Large inputs are reduced with strided convs, small ones expanded in
  // channels at stride 1 and stretched by the adaptive pool.
  return {
      {"rgb", {{16, 4, 4}, {64, 2, 2}}},
      {"parsing", {{16, 4, 4}, {64, 2, 2}}},
      {"landmarks", {{32, 1, 1}, {64, 1, 1}}},
      {"3dmm", {{32, 1, 1}, {64, 1, 1}}},
      {"mel", {{32, 1, 4}, {64, 1, 2}}},
      {"hubert", {{32, 1, 16}, {64, 1, 4}}},
  };
}

struct EncoderConfig {
  std::string visual_spec = "rgb";
  std::string audio_spec = "mel";
  std::size_t unified_h = 12;
  std::size_t unified_w = 12;
  std::size_t unified_channels = 64;
  std::size_t embed_dim = 512;
  std::map<std::string, std::vector<LayerPlan>> preproc_plan = default_preproc_plans();
  std::vector<LayerPlan> shared_plan = {{64, 2, 2}, {128, 2, 2}};
  bool use_residual = false;
  double threshold = 0.5;

  const std::string& spec_name(Modality m) const { return m == Modality::visual ? visual_spec : audio_spec; }
  const std::vector<LayerPlan>& plan_for(const std::string& spec) const {
    auto it = preproc_plan.find(spec);
    UNISYNC_CHECK(it != preproc_plan.end(), ErrorKind::config, "no preprocessing plan for '" + spec + "'");
    return it->second;
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

inline void validate(const EncoderConfig& c) {
  UNISYNC_CHECK(find_spec(c.visual_spec).modality == Modality::visual, ErrorKind::config,
                c.visual_spec + " is not a visual representation");
  UNISYNC_CHECK(find_spec(c.audio_spec).modality == Modality::audio, ErrorKind::config,
                c.audio_spec + " is not an audio representation");
  UNISYNC_CHECK(c.embed_dim >= 8, ErrorKind::config, "embed_dim must be >= 8");
  UNISYNC_CHECK(c.threshold > 0 && c.threshold < 1, ErrorKind::config, "threshold must lie in (0,1)");
  UNISYNC_CHECK(c.unified_h >= 1 && c.unified_w >= 1 && c.unified_channels >= 1, ErrorKind::config,
                "unified size must be positive");
  UNISYNC_CHECK(!c.shared_plan.empty(), ErrorKind::config, "shared plan must be non-empty");
  for (const auto* name : {&c.visual_spec, &c.audio_spec}) {
    const auto& plan = c.plan_for(*name);
    UNISYNC_CHECK(!plan.empty(), ErrorKind::config, "preprocessing plan for " + *name + " is empty");
    UNISYNC_CHECK(plan.back().out_channels == c.unified_channels, ErrorKind::config,
                  "preprocessing plan for " + *name + " must end at unified_channels");
  }
  for (const auto& [name, plan] : c.preproc_plan)
    for (const auto& l : plan)
      UNISYNC_CHECK(l.out_channels >= 1 && l.stride_h >= 1 && l.stride_w >= 1, ErrorKind::config,
                    "invalid layer in plan for " + name);
  for (const auto& l : c.shared_plan)
    UNISYNC_CHECK(l.out_channels >= 1 && l.stride_h >= 1 && l.stride_w >= 1, ErrorKind::config,
                  "invalid layer in shared plan");
}

/// Channel-stacked 2-d layout fed to the first conv of a stream.
struct InputGeometry {
  std::size_t channels, height, width;
};

inline InputGeometry input_geometry(const RepresentationSpec& spec) {
  const auto& d = spec.clip_dims;
  const std::size_t classes = spec.num_classes > 0 ? spec.num_classes : 1;
  return {d[0] * d[1] * classes, d[2], d[3]};
}

inline kernels::Conv2dParams conv_params(const LayerPlan& l) {
  return {l.stride_h, l.stride_w, l.stride_h == 1 ? 1u : 0u, l.stride_w == 1 ? 1u : 0u};
}

inline std::size_t kernel_extent(std::size_t stride) { return stride == 1 ? 3 : stride; }

enum class ParamRole { weight, bias, bn_gamma, bn_beta, bn_running_mean, bn_running_var };

inline bool trainable(ParamRole r) { return r != ParamRole::bn_running_mean && r != ParamRole::bn_running_var; }

struct ParamShape {
  std::string name;
  ParamRole role;
  Dims dims;
  std::size_t fan_in = 0;  // for weights
};

namespace detail {

inline void conv_block_shapes(std::vector<ParamShape>& out, const std::string& prefix, std::size_t cin,
                              const LayerPlan& l) {
  const std::size_t kh = kernel_extent(l.stride_h), kw = kernel_extent(l.stride_w);
  out.push_back({prefix + ".conv.weight", ParamRole::weight, {l.out_channels, cin, kh, kw}, cin * kh * kw});
  out.push_back({prefix + ".conv.bias", ParamRole::bias, {l.out_channels}});
  out.push_back({prefix + ".bn.gamma", ParamRole::bn_gamma, {l.out_channels}});
  out.push_back({prefix + ".bn.beta", ParamRole::bn_beta, {l.out_channels}});
  out.push_back({prefix + ".bn.running_mean", ParamRole::bn_running_mean, {l.out_channels}});
  out.push_back({prefix + ".bn.running_var", ParamRole::bn_running_var, {l.out_channels}});
}

}  // namespace detail

/// Spatial size after the shared layers, walking the unified map through them.
inline std::pair<std::size_t, std::size_t> shared_output_hw(const EncoderConfig& c) {
  std::size_t h = c.unified_h, w = c.unified_w;
  for (const auto& l : c.shared_plan) {
    h = kernels::conv_out_size(h, kernel_extent(l.stride_h), l.stride_h, l.stride_h == 1 ? 1 : 0);
    w = kernels::conv_out_size(w, kernel_extent(l.stride_w), l.stride_w, l.stride_w == 1 ? 1 : 0);
  }
  return {h, w};
}

/// Parameter and buffer shapes for both streams, in storage order.
inline std::vector<ParamShape> parameter_shapes(const EncoderConfig& c) {
  validate(c);
  std::vector<ParamShape> out;
  for (Modality m : {Modality::visual, Modality::audio}) {
    const std::string stream = to_string(m);
    const auto& spec = find_spec(c.spec_name(m));
    std::size_t cin = input_geometry(spec).channels;
    const auto& pre = c.plan_for(spec.name);
    for (std::size_t i = 0; i < pre.size(); ++i) {
      detail::conv_block_shapes(out, stream + ".pre." + std::to_string(i), cin, pre[i]);
      cin = pre[i].out_channels;
    }
    for (std::size_t i = 0; i < c.shared_plan.size(); ++i) {
      detail::conv_block_shapes(out, stream + ".shared." + std::to_string(i), cin, c.shared_plan[i]);
      cin = c.shared_plan[i].out_channels;
    }
    const auto [h, w] = shared_output_hw(c);
    const std::size_t din = cin * h * w;
    out.push_back({stream + ".head.weight", ParamRole::weight, {c.embed_dim, din}, din});
    out.push_back({stream + ".head.bias", ParamRole::bias, {c.embed_dim}});
  }
  return out;
}

inline std::size_t count_parameters(std::span<const ParamShape> shapes) {
  std::size_t n = 0;
  for (const auto& s : shapes)
    if (trainable(s.role)) n += dims_product(s.dims);
  return n;
}

/// Trainable scalar count (batchnorm running stats are buffers, not counted).
inline std::size_t param_count(const EncoderConfig& c) { return count_parameters(parameter_shapes(c)); }

template <class T>
struct ParamEntry {
  std::string name;
  ParamRole role;
  BasicTensor<T> value;
};

template <class T>
struct BasicModelWeights {
  std::vector<ParamEntry<T>> entries;

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].name == name) return i;
    throw Error(ErrorKind::shape, "no parameter named '" + name + "'");
  }
  BasicTensor<T>& at(const std::string& name) { return entries[index_of(name)].value; }
  const BasicTensor<T>& at(const std::string& name) const { return entries[index_of(name)].value; }

  template <class U>
  BasicModelWeights<U> cast() const {
    BasicModelWeights<U> out;
    for (const auto& e : entries) out.entries.push_back({e.name, e.role, e.value.template cast<U>()});
    return out;
  }

  std::vector<std::size_t> trainable_indices() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (trainable(entries[i].role)) idx.push_back(i);
    return idx;
  }

  bool all_finite() const {
    return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.value.all_finite(); });
  }
};

using ModelWeights = BasicModelWeights<float>;

/// Kaiming-uniform (fan-in, ReLU gain) weights, zero biases, unit gamma, zero
/// beta, running stats (0, 1).
inline ModelWeights init_weights(const EncoderConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  ModelWeights w;
  for (const auto& s : parameter_shapes(c)) {
    Tensor t(s.dims);
    switch (s.role) {
      case ParamRole::weight: {
        const double bound = std::sqrt(6.0 / static_cast<double>(s.fan_in));
        for (auto& v : t.values()) v = static_cast<float>((2.0 * rng.uniform01() - 1.0) * bound);
        break;
      }
      case ParamRole::bn_gamma:
      case ParamRole::bn_running_var: t.fill(1.0f); break;
      default: break;
    }
    w.entries.push_back({s.name, s.role, std::move(t)});
  }
  return w;
}

/// Leaf nodes for model parameters inside one graph, created on first use.
template <class T>
class ParamNodes {
 public:
  ParamNodes(Graph<T>& g, bool requires_grad) : graph_(g), requires_grad_(requires_grad) {}

  template <class W>
  NodeId get(W& weights, std::size_t index) {
    auto it = nodes_.find(index);
    if (it != nodes_.end()) return it->second;
    const NodeId id = graph_.leaf(weights.entries[index].value, requires_grad_);
    nodes_.emplace(index, id);
    return id;
  }

  const std::map<std::size_t, NodeId>& nodes() const { return nodes_; }

 private:
  Graph<T>& graph_;
  bool requires_grad_;
  std::map<std::size_t, NodeId> nodes_;
};

/// Stacks clips of one spec into the [N, C, H, W] model input. Visual frames
/// go into channels; label maps are one-hot expanded per frame.
template <class T>
BasicTensor<T> stack_clips(const RepresentationSpec& spec, std::span<const FeatureClip> clips) {
  UNISYNC_CHECK(!clips.empty(), ErrorKind::shape, "no clips to stack");
  const auto geo = input_geometry(spec);
  const std::size_t per = geo.channels * geo.height * geo.width;
  BasicTensor<T> out({clips.size(), geo.channels, geo.height, geo.width});
  for (std::size_t n = 0; n < clips.size(); ++n) {
    const auto& clip = clips[n];
    UNISYNC_CHECK(clip.spec.name == spec.name, ErrorKind::shape,
                  "clip of spec '" + clip.spec.name + "' fed to a '" + spec.name + "' stream");
    UNISYNC_CHECK(clip.data.dims() == spec.clip_dims, ErrorKind::shape,
                  "clip dims " + dims_to_string(clip.data.dims()) + " do not match " + dims_to_string(spec.clip_dims));
    T* dst = out.data() + n * per;
    if (spec.num_classes == 0) {
      for (std::size_t i = 0; i < clip.data.size(); ++i) dst[i] = static_cast<T>(clip.data[i]);
    } else {
      const std::size_t plane = geo.height * geo.width;
      const std::size_t frames = clip.data.size() / plane;  // frames * channels
      for (std::size_t f = 0; f < frames; ++f) {
        for (std::size_t q = 0; q < plane; ++q) {
          const float label = clip.data[f * plane + q];
          const auto cls = static_cast<std::size_t>(std::clamp(std::lround(label), 0L, static_cast<long>(spec.num_classes - 1)));
          dst[(f * spec.num_classes + cls) * plane + q] = T(1);
        }
      }
    }
  }
  return out;
}

struct StreamNodes {
  NodeId input;
  NodeId unified;    // adaptive-pool output entering the shared layers
  NodeId embedding;  // [N, embed_dim], post-ReLU
};

/// Builds one stream on graph `g`. `W` may be const only in eval mode.
template <class T, class W>
StreamNodes encode_stream(Graph<T>& g, ParamNodes<T>& params, W& weights, const EncoderConfig& cfg, Modality m,
                          NodeId input, Mode mode) {
  constexpr bool kMutable = !std::is_const_v<W>;
  if constexpr (!kMutable) UNISYNC_CHECK(mode == Mode::eval, ErrorKind::config, "train mode needs mutable weights");
  const std::string stream = to_string(m);
  const auto& spec = find_spec(cfg.spec_name(m));

  auto block = [&](NodeId x, const std::string& prefix, const LayerPlan& l) {
    auto idx = [&](const char* suffix) { return weights.index_of(prefix + suffix); };
    NodeId y = ops::conv2d(g, x, params.get(weights, idx(".conv.weight")), params.get(weights, idx(".conv.bias")),
                           conv_params(l));
    const NodeId gamma = params.get(weights, idx(".bn.gamma"));
    const NodeId beta = params.get(weights, idx(".bn.beta"));
    auto& rm = weights.entries[idx(".bn.running_mean")].value;
    auto& rv = weights.entries[idx(".bn.running_var")].value;
    if constexpr (kMutable) {
      y = mode == Mode::train ? ops::batchnorm2d_train(g, y, gamma, beta, rm, rv) : ops::batchnorm2d_eval(g, y, gamma, beta, rm, rv);
    } else {
      y = ops::batchnorm2d_eval(g, y, gamma, beta, rm, rv);
    }
    return y;
  };

  NodeId x = input;
  const auto& pre = cfg.plan_for(spec.name);
  for (std::size_t i = 0; i < pre.size(); ++i) x = ops::relu(g, block(x, stream + ".pre." + std::to_string(i), pre[i]));
  const NodeId unified = ops::adaptive_avg_pool2d(g, x, cfg.unified_h, cfg.unified_w);
  x = unified;
  for (std::size_t i = 0; i < cfg.shared_plan.size(); ++i) {
    const auto& l = cfg.shared_plan[i];
    NodeId y = block(x, stream + ".shared." + std::to_string(i), l);
    if (cfg.use_residual && g.value(y).dims() == g.value(x).dims()) y = ops::add(g, y, x);
    x = ops::relu(g, y);
  }
  const auto& xv = g.value(x);
  x = ops::reshape(g, x, {xv.dim(0), xv.size() / xv.dim(0)});
  x = ops::linear(g, x, params.get(weights, weights.index_of(stream + ".head.weight")),
                  params.get(weights, weights.index_of(stream + ".head.bias")));
  return {input, unified, ops::relu(g, x)};
}

/// Encodes a batch of clips of one modality in eval mode -> [N, embed_dim].
template <class T = float>
BasicTensor<T> encode_batch(std::span<const FeatureClip> clips, Modality m, const BasicModelWeights<T>& weights,
                            const EncoderConfig& cfg) {
  Graph<T> g;
  ParamNodes<T> params(g, false);
  const auto& spec = find_spec(cfg.spec_name(m));
  const NodeId in = g.leaf(stack_clips<T>(spec, clips));
  return g.value(encode_stream(g, params, weights, cfg, m, in, Mode::eval).embedding);
}

struct Embedding {
  std::vector<float> values;
};

namespace detail {

template <class W>
Embedding encode_one(const FeatureClip& clip, Modality m, W& weights, const EncoderConfig& cfg, Mode mode) {
  UNISYNC_CHECK(clip.spec.name == cfg.spec_name(m), ErrorKind::shape,
                "clip spec '" + clip.spec.name + "' does not match the " + to_string(m) + " stream ('" +
                    cfg.spec_name(m) + "')");
  Graph<float> g;
  ParamNodes<float> params(g, false);
  const NodeId in = g.leaf(stack_clips<float>(find_spec(cfg.spec_name(m)), std::span(&clip, 1)));
  const auto& e = g.value(encode_stream(g, params, weights, cfg, m, in, mode).embedding);
  return {std::vector<float>(e.values().begin(), e.values().end())};
}

}  // namespace detail

inline Embedding encode_visual(const FeatureClip& clip, const ModelWeights& weights, const EncoderConfig& cfg) {
  return detail::encode_one(clip, Modality::visual, weights, cfg, Mode::eval);
}
inline Embedding encode_visual(const FeatureClip& clip, ModelWeights& weights, const EncoderConfig& cfg, Mode mode) {
  return detail::encode_one(clip, Modality::visual, weights, cfg, mode);
}
inline Embedding encode_audio(const FeatureClip& clip, const ModelWeights& weights, const EncoderConfig& cfg) {
  return detail::encode_one(clip, Modality::audio, weights, cfg, Mode::eval);
}
inline Embedding encode_audio(const FeatureClip& clip, ModelWeights& weights, const EncoderConfig& cfg, Mode mode) {
  return detail::encode_one(clip, Modality::audio, weights, cfg, mode);
}

/// Cosine similarity of two embeddings; 0 when either has zero norm. For
/// non-negative embeddings the result lies in [0, 1].
inline double sync_probability(std::span<const float> a, std::span<const float> v) {
  UNISYNC_CHECK(a.size() == v.size(), ErrorKind::shape,
                "embedding dims differ: " + std::to_string(a.size()) + " vs " + std::to_string(v.size()));
  double dot = 0, na = 0, nv = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * v[i];
    na += static_cast<double>(a[i]) * a[i];
    nv += static_cast<double>(v[i]) * v[i];
  }
  if (na == 0 || nv == 0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nv)), -1.0, 1.0);
}

inline double sync_probability(const Embedding& a, const Embedding& v) { return sync_probability(a.values, v.values); }

enum class SyncLabel { unsync, sync };

/// Strict inequality: p == threshold is unsync.
inline SyncLabel classify(double p, double threshold = 0.5) { return p > threshold ? SyncLabel::sync : SyncLabel::unsync; }

}  // namespace unisync
