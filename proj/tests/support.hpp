#pragma once

// Test-side oracles and helpers. Nothing here calls into the kernels it is
// used to check.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "unisync/unisync.hpp"

namespace ts {

using namespace unisync;

/// Six nested loops, double accumulation.
inline std::vector<double> naive_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t sh,
                                        std::size_t sw, std::size_t ph, std::size_t pw, Dims& out_dims) {
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (h + 2 * ph - kh) / sh + 1, ow = (wd + 2 * pw - kw) / sw + 1;
  out_dims = {n, cout, oh, ow};
  std::vector<double> out(n * cout * oh * ow);
  for (std::size_t bi = 0; bi < n; ++bi)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double s = b[o];
          for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long yy = static_cast<long>(i * sh + u) - static_cast<long>(ph);
                const long xx = static_cast<long>(j * sw + v) - static_cast<long>(pw);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(wd)) continue;
                s += static_cast<double>(x[((bi * cin + c) * h + yy) * wd + xx]) * w[((o * cin + c) * kh + u) * kw + v];
              }
          out[((bi * cout + o) * oh + i) * ow + j] = s;
        }
  return out;
}

/// Triple loop y = x W^T + b.
inline std::vector<double> naive_linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t n = x.dim(0), din = x.dim(1), dout = w.dim(0);
  std::vector<double> out(n * dout);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < dout; ++o) {
      double s = b[o];
      for (std::size_t k = 0; k < din; ++k) s += static_cast<double>(x[i * din + k]) * w[o * din + k];
      out[i * dout + o] = s;
    }
  return out;
}

inline Tensor random_tensor(Dims dims, std::mt19937_64& g, double scale = 1.0) {
  Tensor t(std::move(dims));
  std::normal_distribution<double> nd(0.0, scale);
  for (auto& v : t.values()) v = static_cast<float>(nd(g));
  return t;
}

template <class T>
BasicTensor<T> random_tensor_t(Dims dims, std::mt19937_64& g, double scale = 1.0) {
  BasicTensor<T> t(std::move(dims));
  std::normal_distribution<double> nd(0.0, scale);
  for (auto& v : t.values()) v = static_cast<T>(nd(g));
  return t;
}

inline double rel_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct FdReport {
  std::size_t checked = 0;
  std::size_t passed = 0;
  double worst = 0;
};

/// Central differences on every coordinate of every input. `build` maps a
/// graph plus one leaf per input to a scalar loss node.
template <class Build>
FdReport fd_check(const std::vector<BasicTensor<double>>& inputs, Build build, double h, double tol, double floor) {
  auto eval = [&](const std::vector<BasicTensor<double>>& xs, std::vector<BasicTensor<double>>* grads) {
    Graph<double> g;
    std::vector<NodeId> leaves;
    for (const auto& x : xs) leaves.push_back(g.leaf(x, true));
    const NodeId loss = build(g, leaves);
    if (grads) {
      g.backward(loss);
      for (NodeId l : leaves) grads->push_back(g.grad(l));
    }
    return g.value(loss)[0];
  };
  std::vector<BasicTensor<double>> analytic;
  eval(inputs, &analytic);
  FdReport r;
  auto xs = inputs;
  for (std::size_t t = 0; t < xs.size(); ++t)
    for (std::size_t i = 0; i < xs[t].size(); ++i) {
      const double x0 = xs[t][i];
      xs[t][i] = x0 + h;
      const double up = eval(xs, nullptr);
      xs[t][i] = x0 - h;
      const double down = eval(xs, nullptr);
      xs[t][i] = x0;
      const double e = rel_error(analytic[t][i], (up - down) / (2 * h), floor);
      ++r.checked;
      r.passed += e <= tol;
      r.worst = std::max(r.worst, e);
    }
  return r;
}

/// p = 1 exactly when the generator latents under the two windows coincide.
class OracleScorer final : public Scorer {
 public:
  explicit OracleScorer(const Corpus& c) {
    for (const auto& t : c.tracks) tracks_[t.track_id] = &t;
  }
  void add(const Track& t) { tracks_[t.track_id] = &t; }

  std::vector<double> score(std::span<const FeatureClip> audio, std::span<const FeatureClip> visual) const override {
    std::vector<double> out;
    for (std::size_t i = 0; i < audio.size(); ++i) {
      const auto& la = *tracks_.at(audio[i].source_track)->audio_latent;
      const auto& lv = *tracks_.at(visual[i].source_track)->visual_latent;
      bool same = true;
      for (std::size_t k = 0; k < kFramesPerClip; ++k)
        same = same && la.at(audio[i].start_frame + k) == lv.at(visual[i].start_frame + k);
      out.push_back(same ? 1.0 : 0.0);
    }
    return out;
  }

 private:
  std::map<std::string, const Track*> tracks_;
};

class ConstantScorer final : public Scorer {
 public:
  explicit ConstantScorer(double p) : p_(p) {}
  std::vector<double> score(std::span<const FeatureClip> audio, std::span<const FeatureClip>) const override {
    return std::vector<double>(audio.size(), p_);
  }

 private:
  double p_;
};

/// Small encoder for fast tests; same layer kinds as the default.
inline EncoderConfig tiny_encoder(const std::string& visual = "3dmm", const std::string& audio = "mel") {
  EncoderConfig c;
  c.visual_spec = visual;
  c.audio_spec = audio;
  c.unified_h = 4;
  c.unified_w = 4;
  c.unified_channels = 8;
  c.embed_dim = 16;
  c.preproc_plan = {{"rgb", {{8, 8, 8}, {8, 2, 2}}},      {"parsing", {{8, 8, 8}, {8, 2, 2}}},
                    {"landmarks", {{8, 1, 1}}},             {"3dmm", {{8, 1, 1}}},
                    {"mel", {{4, 1, 4}, {8, 1, 2}}},        {"hubert", {{8, 1, 16}, {8, 1, 4}}}};
  c.shared_plan = {{8, 1, 1}, {16, 2, 2}};
  return c;
}

inline SynthConfig small_synth(const std::string& visual = "3dmm", const std::string& audio = "mel",
                               std::size_t speakers = 3, std::size_t tracks = 2, std::size_t frames = 120,
                               std::uint64_t seed = 11) {
  SynthConfig s;
  s.n_speakers = speakers;
  s.tracks_per_speaker = tracks;
  s.frames_per_track = frames;
  s.visual_spec = visual;
  s.audio_spec = audio;
  s.seed = seed;
  return s;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("unisync_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CommandResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

/// Runs a shell command line, capturing stdout and stderr separately.
inline CommandResult run_command(const std::string& cmd) {
  static int counter = 0;
  const auto base = std::filesystem::temp_directory_path() /
                    ("unisync_cmd_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  const std::string out = base.string() + ".out", err = base.string() + ".err";
  const int status = std::system((cmd + " >" + out + " 2>" + err).c_str());
  CommandResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_text(out);
  r.err = read_text(err);
  std::filesystem::remove(out);
  std::filesystem::remove(err);
  return r;
}

/// Pearson correlation.
inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

/// Normal-approximation 99.9% interval half-width for a binomial proportion.
inline double binomial_halfwidth_999(double p, std::size_t n) {
  return 3.2905 * std::sqrt(p * (1 - p) / static_cast<double>(n));
}

}  // namespace ts
