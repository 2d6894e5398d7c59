// unisync: synth / train / eval / score / inspect.
//
// Exit codes: 0 ok, 2 usage or config, 3 I/O, 4 numeric divergence,
// 5 format, version or spec mismatch.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "unisync/unisync.hpp"

namespace fs = std::filesystem;
using namespace unisync;

namespace {

enum Exit { kOk = 0, kUsage = 2, kIo = 3, kDivergence = 4, kFormat = 5 };

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return kUsage;
    case ErrorKind::io: return kIo;
    case ErrorKind::divergence: return kDivergence;
    default: return kFormat;
  }
}

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n') c = ' ';
  return s;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// ---- synth ----

struct SynthArgs {
  SynthConfig cfg;
  std::string out;
  long shift_visual = 0;
};

void add_synth(CLI::App& app, SynthArgs& a) {
  auto* c = app.add_subcommand("synth", "Generate a synthetic speaker corpus");
  c->add_option("--speakers", a.cfg.n_speakers, "Number of speakers (>= 2)")->capture_default_str();
  c->add_option("--tracks", a.cfg.tracks_per_speaker, "Tracks per speaker")->capture_default_str();
  c->add_option("--frames", a.cfg.frames_per_track, "Frames per track at 25 fps (>= 25)")->capture_default_str();
  c->add_option("--visual", a.cfg.visual_spec, "Visual representation")
      ->check(CLI::IsMember({"rgb", "parsing", "landmarks", "3dmm"}))
      ->capture_default_str();
  c->add_option("--audio", a.cfg.audio_spec, "Audio representation")
      ->check(CLI::IsMember({"mel", "hubert"}))
      ->capture_default_str();
  c->add_option("--noise", a.cfg.noise_level, "Noise standard deviation")->capture_default_str();
  c->add_option("--seed", a.cfg.seed, "Random seed")->capture_default_str();
  c->add_option("--shift-visual", a.shift_visual,
                "Advance every track's visual stream by this many frames (content offset)")
      ->capture_default_str();
  c->add_option("--out", a.out, "Output directory")->required();
}

int run_synth(const SynthArgs& a) {
  Corpus c = synth_corpus(a.cfg);
  if (a.shift_visual != 0)
    for (auto& t : c.tracks) t = shift_visual(t, a.shift_visual);
  save_corpus(a.out, c);
  std::cout << "wrote " << c.tracks.size() << " tracks (" << c.speakers().size() << " speakers) to " << a.out << "\n";
  return kOk;
}

// ---- shared training/eval options ----

struct TrainArgs {
  std::string config_file;
  std::string profile;
  std::string corpus;
  std::string val_corpus;
  std::string checkpoint = "unisync.uckp";
  std::string history;
  std::string resume;
  std::size_t stop_after = 0;
  bool print_config = false;
  bool quiet = false;

  TrainConfig d = TrainConfig::desk();  // flag storage; applied only when given
  CLI::App* cmd = nullptr;
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* c = app.add_subcommand("train", "Train the sync model on a corpus");
  a.cmd = c;
  auto& d = a.d;
  c->add_option("--config", a.config_file, "JSON config file (flags override it)");
  c->add_option("--profile", a.profile, "Preset: desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  c->add_option("--corpus", a.corpus, "Training corpus (manifest or directory)");
  c->add_option("--val-corpus", a.val_corpus,
                "Validation corpus; default holds out the last track of every speaker");
  c->add_option("--checkpoint", a.checkpoint, "Checkpoint output path")->capture_default_str();
  c->add_option("--history", a.history, "History output path (default: <checkpoint>.history.json)");
  c->add_option("--resume", a.resume, "Continue from this checkpoint");
  c->add_option("--stop-after", a.stop_after, "Stop once this many epochs are complete (0: run all)")
      ->capture_default_str();
  c->add_option("--epochs", d.epochs, "Epochs")->capture_default_str();
  c->add_option("--steps-per-epoch", d.steps_per_epoch, "Optimizer steps per epoch")->capture_default_str();
  c->add_option("--batch-size", d.batch_size, "Pairs per batch")->capture_default_str();
  c->add_option("--lr", d.adam.lr, "Adam learning rate")->capture_default_str();
  c->add_option("--beta1", d.adam.beta1, "Adam beta1")->capture_default_str();
  c->add_option("--beta2", d.adam.beta2, "Adam beta2")->capture_default_str();
  c->add_option("--lambda", d.loss.lambda, "L2 coefficient")->capture_default_str();
  c->add_option("--pos-fraction", d.sampler.pos_fraction, "Positive fraction per batch")->capture_default_str();
  c->add_option("--cross-fraction", d.sampler.cross_fraction_of_negatives, "Cross-speaker fraction of negatives")
      ->capture_default_str();
  c->add_option("--min-shift", d.sampler.min_shift_frames, "Minimum same-track shift in frames")->capture_default_str();
  c->add_option("--margin-same", d.sampler.margin_same, "Margin for same-speaker negatives")->capture_default_str();
  c->add_option("--margin-cross", d.sampler.margin_cross, "Margin for cross-speaker negatives")->capture_default_str();
  c->add_option("--embed-dim", d.encoder.embed_dim, "Embedding dimension")->capture_default_str();
  c->add_flag("--residual", d.encoder.use_residual, "Identity skips around shape-preserving shared blocks");
  c->add_option("--seed", d.seed, "Root random seed")->capture_default_str();
  c->add_option("--eval-every", d.eval_every, "Validate every N epochs (0: never)")->capture_default_str();
  c->add_option("--eval-pairs", d.eval_pairs, "Validation pairs")->capture_default_str();
  c->add_flag("--print-config", a.print_config, "Print the canonical config and exit");
  c->add_flag("--quiet", a.quiet, "No per-epoch log on stderr");
}

bool given(const CLI::App* c, const char* name) { return c->count(name) > 0; }

/// Config file first, then explicitly given flags.
RunConfig resolve_train_config(const TrainArgs& a) {
  RunConfig rc;
  if (!a.config_file.empty()) rc = load_run_config(a.config_file);
  auto& t = rc.train;
  const auto* c = a.cmd;
  const auto& d = a.d;
  if (!a.profile.empty()) {
    const TrainConfig p = a.profile == "paper" ? TrainConfig::paper() : TrainConfig::desk();
    t.epochs = p.epochs;
    t.steps_per_epoch = p.steps_per_epoch;
    t.batch_size = p.batch_size;
    t.adam = p.adam;
    t.loss = p.loss;
  }
  if (given(c, "--epochs")) t.epochs = d.epochs;
  if (given(c, "--steps-per-epoch")) t.steps_per_epoch = d.steps_per_epoch;
  if (given(c, "--batch-size")) t.batch_size = d.batch_size;
  if (given(c, "--lr")) t.adam.lr = d.adam.lr;
  if (given(c, "--beta1")) t.adam.beta1 = d.adam.beta1;
  if (given(c, "--beta2")) t.adam.beta2 = d.adam.beta2;
  if (given(c, "--lambda")) t.loss.lambda = d.loss.lambda;
  if (given(c, "--pos-fraction")) t.sampler.pos_fraction = d.sampler.pos_fraction;
  if (given(c, "--cross-fraction")) t.sampler.cross_fraction_of_negatives = d.sampler.cross_fraction_of_negatives;
  if (given(c, "--min-shift")) t.sampler.min_shift_frames = d.sampler.min_shift_frames;
  if (given(c, "--margin-same")) t.sampler.margin_same = d.sampler.margin_same;
  if (given(c, "--margin-cross")) t.sampler.margin_cross = d.sampler.margin_cross;
  if (given(c, "--embed-dim")) t.encoder.embed_dim = d.encoder.embed_dim;
  if (given(c, "--residual")) t.encoder.use_residual = d.encoder.use_residual;
  if (given(c, "--seed")) t.seed = d.seed;
  if (given(c, "--eval-every")) t.eval_every = d.eval_every;
  if (given(c, "--eval-pairs")) t.eval_pairs = d.eval_pairs;
  if (!a.corpus.empty()) rc.paths.corpus = a.corpus;
  if (!a.val_corpus.empty()) rc.paths.val_corpus = a.val_corpus;
  if (given(c, "--checkpoint") || rc.paths.checkpoint.empty()) rc.paths.checkpoint = a.checkpoint;
  if (!a.history.empty()) rc.paths.history = a.history;
  return rc;
}

/// Representation specs come from the corpus unless the config file pins them.
void adopt_corpus_specs(TrainConfig& t, const Corpus& c, bool pinned) {
  UNISYNC_CHECK(!c.tracks.empty(), ErrorKind::config, "corpus has no tracks");
  const auto& first = c.tracks.front();
  if (!pinned) {
    t.encoder.visual_spec = first.visual_spec;
    t.encoder.audio_spec = first.audio_spec;
  }
  for (const auto& tr : c.tracks)
    UNISYNC_CHECK(tr.visual_spec == t.encoder.visual_spec && tr.audio_spec == t.encoder.audio_spec,
                  ErrorKind::spec_mismatch,
                  "track " + tr.track_id + " is " + tr.visual_spec + "+" + tr.audio_spec + ", config expects " +
                      t.encoder.visual_spec + "+" + t.encoder.audio_spec);
}

bool config_pins_specs(const std::string& config_file) {
  if (config_file.empty()) return false;
  const auto bytes = io::read_file(config_file);
  const Json j = parse_json_text(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), config_file);
  return j.contains("encoder") && (j["encoder"].contains("visual_spec") || j["encoder"].contains("audio_spec"));
}

std::optional<History> read_history(const fs::path& p) {
  if (!fs::exists(p)) return std::nullopt;
  try {
    const auto bytes = io::read_file(p);
    const Json j = Json::parse(bytes.begin(), bytes.end());
    History h;
    h.step_loss = j.at("step_loss").get<std::vector<double>>();
    for (const auto& e : j.at("evals"))
      h.evals.push_back({e.at("epoch").get<std::size_t>(), e.at("step").get<std::size_t>(), e.at("accuracy").get<double>()});
    return h;
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
}

int run_train(const TrainArgs& a) {
  const bool resuming = !a.resume.empty();
  RunConfig rc = resolve_train_config(a);
  if (resuming) {
    for (const char* f : {"--config", "--profile", "--steps-per-epoch", "--batch-size", "--lr", "--beta1", "--beta2",
                          "--lambda", "--pos-fraction", "--cross-fraction", "--min-shift", "--margin-same",
                          "--margin-cross", "--embed-dim", "--residual", "--seed", "--eval-every", "--eval-pairs"})
      UNISYNC_CHECK(!given(a.cmd, f), ErrorKind::config,
                    std::string(f) + " cannot be combined with --resume (the checkpoint fixes the config)");
  }

  Checkpoint ckpt;
  if (resuming) {
    ckpt = load_checkpoint(a.resume);
    if (given(a.cmd, "--epochs")) ckpt.config.epochs = a.d.epochs;
    rc.train = ckpt.config;
  }
  if (a.print_config) {
    if (!resuming) validate(rc.train);
    std::cout << canonical_dump(to_json(rc));
    return kOk;
  }
  UNISYNC_CHECK(!rc.paths.corpus.empty(), ErrorKind::config, "--corpus is required");
  UNISYNC_CHECK(a.stop_after == 0 || a.stop_after <= rc.train.epochs, ErrorKind::config, "--stop-after exceeds --epochs");

  Corpus train_c = load_manifest(rc.paths.corpus);
  Corpus val_c;
  if (!rc.paths.val_corpus.empty()) {
    val_c = load_manifest(rc.paths.val_corpus);
  } else {
    std::tie(train_c, val_c) = split_holdout(std::move(train_c));
  }
  if (!resuming) {
    adopt_corpus_specs(rc.train, train_c, config_pins_specs(a.config_file));
    validate(rc.train);
    ckpt = initial_checkpoint(rc.train);
  } else {
    adopt_corpus_specs(rc.train, train_c, true);
  }
  adopt_corpus_specs(rc.train, val_c, true);

  const fs::path ckpt_path = rc.paths.checkpoint;
  const fs::path hist_path = rc.paths.history.empty() ? fs::path(ckpt_path.string() + ".history.json") : fs::path(rc.paths.history);

  History prior;
  if (resuming && ckpt.epoch > 0) {
    auto h = read_history(hist_path);
    if (h && h->step_loss.size() == ckpt.epoch * ckpt.config.steps_per_epoch) {
      prior = std::move(*h);
    } else {
      std::cerr << "warning: no matching history at " << hist_path.string() << "; history restarts at epoch "
                << ckpt.epoch << "\n";
    }
  }

  auto merged = [&](const History& h) {
    History m = prior;
    m.step_loss.insert(m.step_loss.end(), h.step_loss.begin(), h.step_loss.end());
    m.evals.insert(m.evals.end(), h.evals.begin(), h.evals.end());
    return m;
  };

  TrainOptions opt;
  opt.stop_after_epoch = a.stop_after;
  opt.on_epoch = [&](const Checkpoint& c, const History& h) {
    save_checkpoint(ckpt_path, c);
    io::write_text_atomic(hist_path, canonical_dump(to_json(merged(h))));
    if (!a.quiet) {
      const std::size_t n = c.config.steps_per_epoch;
      double mean = 0;
      for (std::size_t i = h.step_loss.size() - n; i < h.step_loss.size(); ++i) mean += h.step_loss[i];
      std::cerr << "epoch " << c.epoch << "/" << c.config.epochs << " loss " << format_double(mean / static_cast<double>(n));
      if (!h.evals.empty() && h.evals.back().epoch == c.epoch) std::cerr << " val_accuracy " << format_double(h.evals.back().accuracy);
      std::cerr << " time " << format_double(h.epoch_seconds.back()) << "s\n";
    }
  };

  const History h = train_from(ckpt, train_c, val_c, opt);
  if (h.step_loss.empty()) {
    save_checkpoint(ckpt_path, ckpt);
    io::write_text_atomic(hist_path, canonical_dump(to_json(merged(h))));
  }
  const History all = merged(h);
  const double acc = all.evals.empty() ? validation_accuracy(ckpt.weights, ckpt.config, val_c) : all.evals.back().accuracy;
  std::cout << "final epoch=" << ckpt.epoch << " steps=" << all.step_loss.size()
            << " val_accuracy=" << format_double(acc) << " checkpoint=" << ckpt_path.string() << "\n";
  return kOk;
}

// ---- eval ----

struct EvalArgs {
  std::string checkpoint;
  std::string corpus;
  std::string config_file;
  std::string out;
  EvalConfig e{};
  CLI::App* cmd = nullptr;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  auto* c = app.add_subcommand("eval", "Accuracy and LSE metrics of a checkpoint on a corpus");
  a.cmd = c;
  c->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required();
  c->add_option("--corpus", a.corpus, "Corpus (manifest or directory)")->required();
  c->add_option("--config", a.config_file, "JSON config; its encoder section must match the checkpoint");
  c->add_option("--pairs", a.e.pairs, "Pairs for lip-sync accuracy (>= 1)")->capture_default_str();
  c->add_option("--clips", a.e.clips, "Clips for LSE-D / LSE-C (>= 1)")->capture_default_str();
  c->add_option("--max-offset", a.e.max_offset, "Offset scan half-width in frames")->capture_default_str();
  c->add_option("--seed", a.e.seed, "Random seed")->capture_default_str();
  c->add_option("--out", a.out, "Also write the report as JSON here");
}

Json report_json(const MetricReport& r) {
  return {{"accuracy", r.accuracy}, {"lse_d", r.lse_d},   {"lse_c", r.lse_c},
          {"n_pairs", r.n_pairs},   {"n_clips", r.n_clips}, {"seed", r.seed}};
}

int run_eval(const EvalArgs& a) {
  EvalConfig e = a.e;
  std::optional<RunConfig> rc;
  if (!a.config_file.empty()) {
    rc = load_run_config(a.config_file);
    const EvalConfig base = rc->eval;
    if (!given(a.cmd, "--pairs")) e.pairs = base.pairs;
    if (!given(a.cmd, "--clips")) e.clips = base.clips;
    if (!given(a.cmd, "--max-offset")) e.max_offset = base.max_offset;
    if (!given(a.cmd, "--seed")) e.seed = base.seed;
  }
  validate(e);
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  if (rc) {
    Json want = to_json(rc->train.encoder), have = to_json(ckpt.config.encoder);
    // Specs are taken from data when the config leaves them out.
    want.erase("visual_spec");
    want.erase("audio_spec");
    have.erase("visual_spec");
    have.erase("audio_spec");
    UNISYNC_CHECK(want == have, ErrorKind::spec_mismatch, "config encoder section does not match the checkpoint");
    if (config_hash(rc->train) != config_hash(ckpt.config))
      std::cerr << "warning: config hash differs from the checkpoint's (training settings differ)\n";
  }
  const Corpus corpus = load_manifest(a.corpus);
  TrainConfig tc = ckpt.config;
  adopt_corpus_specs(tc, corpus, true);
  ModelScorer scorer(ckpt.weights, ckpt.config.encoder);
  const MetricReport r = evaluate(scorer, corpus, e.pairs, e.clips, e.max_offset, ckpt.config.sampler, e.seed);
  std::ostringstream os;
  os << "accuracy " << format_double(r.accuracy) << "\n"
     << "lse_d " << format_double(r.lse_d) << "\n"
     << "lse_c " << format_double(r.lse_c) << "\n"
     << "n_pairs " << r.n_pairs << "\n"
     << "n_clips " << r.n_clips << "\n"
     << "seed " << r.seed << "\n";
  if (!a.out.empty()) io::write_text_atomic(a.out, canonical_dump(report_json(r)));
  std::cout << os.str();
  return kOk;
}

// ---- score ----

struct ScoreArgs {
  std::string checkpoint;
  std::string visual;
  std::string audio;
  std::size_t stride = kFramesPerClip;
  std::size_t max_offset = 15;
  std::string out;
};

void add_score(CLI::App& app, ScoreArgs& a) {
  auto* c = app.add_subcommand("score", "Per-window p_sync and estimated offset for one track pair");
  c->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required();
  c->add_option("--visual", a.visual, "Visual track file (.usyn)")->required();
  c->add_option("--audio", a.audio, "Audio track file (.usyn)")->required();
  c->add_option("--stride", a.stride, "Frames between window starts (>= 1)")->capture_default_str();
  c->add_option("--max-offset", a.max_offset, "Offset search half-width in frames")->capture_default_str();
  c->add_option("--out", a.out, "Also write the output here");
}

int run_score(const ScoreArgs& a) {
  UNISYNC_CHECK(a.stride >= 1, ErrorKind::config, "--stride must be >= 1");
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  Track t;
  t.track_id = fs::path(a.visual).stem().string();
  t.visual_spec = ckpt.config.encoder.visual_spec;
  t.audio_spec = ckpt.config.encoder.audio_spec;
  t.visual = read_track(a.visual);
  t.audio = read_track(a.audio);
  validate_track(t);
  ModelScorer scorer(ckpt.weights, ckpt.config.encoder);

  std::vector<FeatureClip> av, vv;
  std::vector<std::size_t> starts;
  for (std::size_t f = 0; f + kFramesPerClip <= t.length_frames(); f += a.stride) {
    starts.push_back(f);
    av.push_back(cut_clip(t, Modality::audio, f));
    vv.push_back(cut_clip(t, Modality::visual, f));
  }
  const auto p = scorer.score(av, vv);
  const long offset = estimate_offset(track_offset_scan(scorer, t, a.max_offset, a.stride));
  std::ostringstream os;
  os << "start_frame p_sync\n";
  for (std::size_t i = 0; i < starts.size(); ++i) os << starts[i] << " " << format_double(p[i]) << "\n";
  os << "offset " << offset << "\n";
  if (!a.out.empty()) io::write_text_atomic(a.out, os.str());
  std::cout << os.str();
  return kOk;
}

// ---- inspect ----

int run_inspect(const std::string& path) {
  if (fs::is_directory(path) || fs::path(path).extension() == ".json") {
    const Corpus c = load_manifest(path);
    Json tracks = Json::array();
    for (const auto& t : c.tracks)
      tracks.push_back({{"track_id", t.track_id},
                        {"speaker_id", t.speaker_id},
                        {"visual_spec", t.visual_spec},
                        {"audio_spec", t.audio_spec},
                        {"frames", t.length_frames()}});
    std::cout << canonical_dump({{"kind", "manifest"}, {"speakers", c.speakers().size()}, {"tracks", tracks}});
    return kOk;
  }
  const auto bytes = io::read_file(path);
  UNISYNC_CHECK(bytes.size() >= 4, ErrorKind::bad_magic, path + ": file too short to identify");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) == 0) {
    const Checkpoint c = decode_checkpoint(bytes, path);
    std::cout << canonical_dump({{"kind", "checkpoint"},
                                 {"version", kCheckpointVersion},
                                 {"config_hash", hex(config_hash(c.config))},
                                 {"epoch", c.epoch},
                                 {"adam_step", c.adam.step},
                                 {"param_count", param_count(c.config.encoder)},
                                 {"tensors", c.weights.entries.size()},
                                 {"config", to_json(c.config)}});
    return kOk;
  }
  const Tensor t = decode_track(bytes, path);
  std::cout << canonical_dump({{"kind", "track"}, {"version", kTrackVersion}, {"dims", t.dims()}});
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audio-visual sync training and evaluation on feature tracks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "unisync 1.0");
  SynthArgs synth;
  TrainArgs train;
  EvalArgs eval;
  ScoreArgs score;
  std::string inspect_path;
  add_synth(app, synth);
  add_train(app, train);
  add_eval(app, eval);
  add_score(app, score);
  app.add_subcommand("inspect", "Print metadata of a manifest, checkpoint or track file")
      ->add_option("path", inspect_path, "File or corpus directory")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return kUsage;
  }

  try {
    if (app.got_subcommand("synth")) return run_synth(synth);
    if (app.got_subcommand("train")) return run_train(train);
    if (app.got_subcommand("eval")) return run_eval(eval);
    if (app.got_subcommand("score")) return run_score(score);
    if (app.got_subcommand("inspect")) return run_inspect(inspect_path);
  } catch (const Error& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return kIo;
  }
  return kUsage;
}
