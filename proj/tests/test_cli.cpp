#include <gtest/gtest.h>

#include <regex>

#include "support.hpp"

using namespace unisync;
namespace fs = std::filesystem;

namespace {

const std::string kCli = UNISYNC_CLI_PATH;

ts::CommandResult cli(const std::string& args) { return ts::run_command(kCli + " " + args); }

const fs::path& work() {
  static const fs::path dir = ts::temp_dir("cli");
  return dir;
}

/// 3dmm+mel corpus shared by the train/eval/score tests.
const fs::path& corpus_dir() {
  static const fs::path dir = [] {
    const auto d = work() / "corpus";
    const auto r = cli("synth --speakers 3 --tracks 2 --frames 100 --visual 3dmm --audio mel --seed 5 --out " + d.string());
    EXPECT_EQ(r.exit_code, 0) << r.err;
    return d;
  }();
  return dir;
}

const std::string kFast = " --steps-per-epoch 3 --batch-size 4 --eval-pairs 20 --quiet";

std::map<std::string, std::string> files_under(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = ts::read_text(e.path());
  return out;
}

double report_value(const std::string& report, const std::string& key) {
  std::smatch m;
  EXPECT_TRUE(std::regex_search(report, m, std::regex(key + " ([0-9.]+)"))) << report;
  return m.empty() ? -1 : std::stod(m[1]);
}

bool one_line(const std::string& s) { return !s.empty() && s.find('\n') == s.size() - 1; }

}  // namespace

TEST(Cli, HelpListsFlagsWithDefaults) {
  auto r = cli("--help");
  EXPECT_EQ(r.exit_code, 0);
  for (const char* sub : {"synth", "train", "eval", "score", "inspect"}) EXPECT_NE(r.out.find(sub), std::string::npos);
  r = cli("train --help");
  EXPECT_EQ(r.exit_code, 0);
  for (const char* flag : {"--margin-same", "--margin-cross", "--lambda", "--lr", "--seed", "--resume", "--cross-fraction"})
    EXPECT_NE(r.out.find(flag), std::string::npos) << flag;
  EXPECT_NE(r.out.find("0.0001"), std::string::npos);
  for (const char* sub : {"synth", "eval", "score", "inspect"}) {
    r = cli(std::string(sub) + " --help");
    EXPECT_EQ(r.exit_code, 0) << sub;
    EXPECT_NE(r.out.find("--"), std::string::npos) << sub;
  }
  r = cli("synth --help");
  EXPECT_NE(r.out.find("--speakers"), std::string::npos);
  EXPECT_NE(r.out.find("[4]"), std::string::npos);
}

TEST(Cli, InvalidFlagsGiveOneLineUsageError) {
  auto r = cli("train --no-such-flag 3");
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_TRUE(one_line(r.err)) << r.err;
  r = cli("synth --visual video --out " + (work() / "bad").string());
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_FALSE(fs::exists(work() / "bad"));
  r = cli("");
  EXPECT_EQ(r.exit_code, 2);
}

TEST(Cli, SynthWritesManifestWithAllTracks) {
  const auto d = work() / "rgb";
  const auto r = cli("synth --speakers 4 --tracks 4 --frames 25 --visual rgb --audio mel --seed 7 --out " + d.string());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto c = load_manifest(d);
  EXPECT_EQ(c.tracks.size(), 16u);
  EXPECT_EQ(c.speakers().size(), 4u);
  EXPECT_EQ(c.tracks[0].visual_spec, "rgb");
  EXPECT_EQ(c.tracks[0].length_frames(), 25u);
  fs::remove_all(d);
}

TEST(Cli, SynthIsByteReproducible) {
  const auto a = work() / "rep_a", b = work() / "rep_b";
  const std::string flags = "synth --speakers 2 --tracks 2 --frames 60 --visual landmarks --audio hubert --seed 9 --out ";
  ASSERT_EQ(cli(flags + a.string()).exit_code, 0);
  ASSERT_EQ(cli(flags + b.string()).exit_code, 0);
  const auto fa = files_under(a), fb = files_under(b);
  EXPECT_EQ(fa.size(), 2u * 2u * 2u + 1u);  // two files per track plus manifest
  EXPECT_EQ(fa, fb);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Cli, SynthRejectsSingleSpeaker) {
  const auto d = work() / "one";
  const auto r = cli("synth --speakers 1 --out " + d.string());
  EXPECT_NE(r.exit_code, 0);
  EXPECT_NE(r.err.find("need ≥ 2 speakers"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(d / "manifest.json"));
}

TEST(Cli, PrintConfigEchoesMarginsCanonically) {
  const auto r = cli("train --print-config --margin-same 0.3 --margin-cross 0.7");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto j = Json::parse(r.out);
  EXPECT_EQ(j["sampler"]["margin_same"], 0.3);
  EXPECT_EQ(j["sampler"]["margin_cross"], 0.7);
  EXPECT_EQ(canonical_dump(to_json(run_config_from_json(j))), r.out);
  const auto other = cli("train --print-config --margin-same 0.1 --margin-cross 0.3");
  EXPECT_EQ(Json::parse(other.out)["sampler"]["margin_same"], 0.1);
}

TEST(Cli, FlagsOverrideConfigFile) {
  const auto cfg = work() / "c.json";
  io::write_text_atomic(cfg, R"({"trainer": {"epochs": 5, "lr": 0.002}, "sampler": {"margin_same": 0.2}})");
  const auto r = cli("train --print-config --config " + cfg.string() + " --epochs 9");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto j = Json::parse(r.out);
  EXPECT_EQ(j["trainer"]["epochs"], 9);
  EXPECT_EQ(j["trainer"]["lr"], 0.002);
  EXPECT_EQ(j["sampler"]["margin_same"], 0.2);
  io::write_text_atomic(cfg, R"({"trainer": {"epocs": 5}})");
  EXPECT_EQ(cli("train --print-config --config " + cfg.string()).exit_code, 2);
}

TEST(Cli, TrainWritesCheckpointAndHistory) {
  const auto ck = work() / "t.uckp";
  const auto r = cli("train --corpus " + corpus_dir().string() + " --epochs 2 --checkpoint " + ck.string() + kFast);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(r.out.find("val_accuracy="), std::string::npos);
  const auto c = load_checkpoint(ck);
  EXPECT_EQ(c.epoch, 2u);
  EXPECT_EQ(c.config.encoder.visual_spec, "3dmm");
  const auto h = Json::parse(ts::read_text(ck.string() + ".history.json"));
  EXPECT_EQ(h["step_loss"].size(), 6u);
  EXPECT_EQ(h["evals"].size(), 2u);
}

TEST(Cli, ResumeMatchesUninterruptedRun) {
  const auto full = work() / "full.uckp", part = work() / "part.uckp";
  const std::string common = "train --corpus " + corpus_dir().string() + " --epochs 3" + kFast + " --checkpoint ";
  ASSERT_EQ(cli(common + full.string()).exit_code, 0);
  ASSERT_EQ(cli(common + part.string() + " --stop-after 1").exit_code, 0);
  EXPECT_EQ(load_checkpoint(part).epoch, 1u);
  const auto r = cli("train --corpus " + corpus_dir().string() + " --resume " + part.string() + " --checkpoint " +
                     part.string() + " --quiet");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(ts::read_text(full), ts::read_text(part));
  EXPECT_EQ(ts::read_text(full.string() + ".history.json"), ts::read_text(part.string() + ".history.json"));
  EXPECT_EQ(cli("train --corpus " + corpus_dir().string() + " --resume " + part.string() + " --lr 0.1").exit_code, 2);
}

TEST(Cli, TrainErrorsMapToExitCodes) {
  EXPECT_EQ(cli("train --corpus " + (work() / "nope").string() + kFast).exit_code, 3);
  EXPECT_EQ(cli("train --corpus " + corpus_dir().string() + " --batch-size 1" + kFast).exit_code, 2);
  const auto r = cli("train --corpus " + corpus_dir().string() + " --epochs 1 --lr 1e30 --checkpoint " +
                     (work() / "div.uckp").string() + kFast);
  EXPECT_EQ(r.exit_code, 4) << r.err;
  EXPECT_TRUE(one_line(r.err)) << r.err;
}

TEST(Cli, EvalIsDeterministicAndNearChanceUntrained) {
  const auto ck = work() / "untrained.uckp";
  ASSERT_EQ(cli("train --corpus " + corpus_dir().string() + " --epochs 0 --checkpoint " + ck.string() + kFast).exit_code, 0);
  const std::string args = "eval --checkpoint " + ck.string() + " --corpus " + corpus_dir().string() + " --pairs 400 --clips 10 --seed 3";
  const auto a = cli(args), b = cli(args);
  ASSERT_EQ(a.exit_code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_LE(std::abs(report_value(a.out, "accuracy") - 0.5), ts::binomial_halfwidth_999(0.5, 400));
  for (const char* key : {"lse_d", "lse_c", "n_pairs", "seed"}) EXPECT_NE(a.out.find(key), std::string::npos);
  const auto out = work() / "report.json";
  ASSERT_EQ(cli(args + " --out " + out.string()).exit_code, 0);
  EXPECT_EQ(Json::parse(ts::read_text(out))["n_pairs"], 400);
}

TEST(Cli, EvalRejectsZeroPairsAndMismatchedConfig) {
  const auto ck = work() / "t.uckp";
  if (!fs::exists(ck))
    ASSERT_EQ(cli("train --corpus " + corpus_dir().string() + " --epochs 0 --checkpoint " + ck.string() + kFast).exit_code, 0);
  const std::string base = "eval --checkpoint " + ck.string() + " --corpus " + corpus_dir().string();
  const auto r = cli(base + " --pairs 0");
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_TRUE(one_line(r.err));
  const auto cfg = work() / "e.json";
  io::write_text_atomic(cfg, R"({"encoder": {"embed_dim": 64}})");
  EXPECT_EQ(cli(base + " --config " + cfg.string()).exit_code, 5);
  EXPECT_EQ(cli("eval --checkpoint " + (work() / "none.uckp").string() + " --corpus " + corpus_dir().string()).exit_code, 3);
}

TEST(Cli, ScorePrintsWindowsAndOffset) {
  const auto ck = work() / "score.uckp";
  ASSERT_EQ(cli("train --corpus " + corpus_dir().string() + " --epochs 0 --checkpoint " + ck.string() + kFast).exit_code, 0);
  const auto tracks = corpus_dir() / "tracks";
  const auto c = load_manifest(corpus_dir());
  const std::string id = c.tracks[0].track_id;
  const auto r = cli("score --checkpoint " + ck.string() + " --visual " + (tracks / (id + ".visual.usyn")).string() +
                     " --audio " + (tracks / (id + ".audio.usyn")).string());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "start_frame p_sync");
  std::size_t windows = 0;
  bool saw_offset = false;
  while (std::getline(in, line)) {
    if (line.rfind("offset ", 0) == 0) {
      saw_offset = true;
      const long o = std::stol(line.substr(7));
      EXPECT_LE(std::labs(o), 15);
      continue;
    }
    const double p = std::stod(line.substr(line.find(' ') + 1));
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
    ++windows;
  }
  EXPECT_TRUE(saw_offset);
  EXPECT_EQ(windows, 20u);

  const auto other = work() / "lm";
  ASSERT_EQ(cli("synth --speakers 2 --tracks 1 --frames 60 --visual landmarks --out " + other.string()).exit_code, 0);
  const auto oc = load_manifest(other);
  const std::string oid = oc.tracks[0].track_id;
  const auto bad = cli("score --checkpoint " + ck.string() + " --visual " +
                       (other / "tracks" / (oid + ".visual.usyn")).string() + " --audio " +
                       (other / "tracks" / (oid + ".audio.usyn")).string());
  EXPECT_EQ(bad.exit_code, 5) << bad.err;
}

TEST(Cli, InspectReportsKinds) {
  auto r = cli("inspect " + corpus_dir().string());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(Json::parse(r.out)["kind"], "manifest");
  const auto ck = work() / "inspect.uckp";
  ASSERT_EQ(cli("train --corpus " + corpus_dir().string() + " --epochs 0 --checkpoint " + ck.string() + kFast).exit_code, 0);
  r = cli("inspect " + ck.string());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto j = Json::parse(r.out);
  EXPECT_EQ(j["kind"], "checkpoint");
  EXPECT_EQ(j["epoch"], 0);
  io::write_text_atomic(work() / "junk.bin", "JUNKJUNK");
  EXPECT_EQ(cli("inspect " + (work() / "junk.bin").string()).exit_code, 5);
}
