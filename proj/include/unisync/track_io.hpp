#pragma once

// Track files and corpus manifests.
//
// Track file (all integers little-endian):
//   "USYN" | u32 version (=1) | u32 ndim | u32 dims[ndim] | f32 payload (row-major)
//
// A payload whose byte count is not a multiple of 4 is reported as
// `truncated`; a whole number of floats that disagrees with the header dims
// is reported as `length_mismatch`.
//
// Manifest (manifest.json):
//   {"format": "unisync-manifest", "version": 1,
//    "tracks": [{"track_id", "speaker_id", "visual_spec", "audio_spec",
//                "visual", "audio"}, ...]}
// with "visual"/"audio" paths relative to the manifest's directory.

#include <filesystem>
#include <set>
#include <string>

#include "json.hpp"

#include "unisync/binary_io.hpp"
#include "unisync/representation.hpp"

namespace unisync {

inline constexpr char kTrackMagic[4] = {'U', 'S', 'Y', 'N'};
inline constexpr std::uint32_t kTrackVersion = 1;
inline constexpr std::uint32_t kManifestVersion = 1;

inline io::Bytes encode_track(const Tensor& t) {
  UNISYNC_CHECK(t.all_finite(), ErrorKind::range, "track data must be finite");
  io::ByteWriter w;
  w.raw(std::string_view(kTrackMagic, 4));
  w.u32(kTrackVersion);
  w.tensor(t);
  return w.take();
}

inline Tensor decode_track(const io::Bytes& bytes, const std::string& context = "track") {
  UNISYNC_CHECK(bytes.size() >= 4 && std::memcmp(bytes.data(), kTrackMagic, 4) == 0, ErrorKind::bad_magic,
                context + ": not a USYN track file");
  io::ByteReader r(bytes, context);
  r.raw(4);
  const std::uint32_t version = r.u32();
  UNISYNC_CHECK(version == kTrackVersion, ErrorKind::version_mismatch,
                context + ": track format version " + std::to_string(version) + ", expected " +
                    std::to_string(kTrackVersion));
  Dims dims = r.dims();
  const std::size_t rest = r.remaining();
  UNISYNC_CHECK(rest % 4 == 0, ErrorKind::truncated, context + ": payload ends inside a value");
  UNISYNC_CHECK(rest / 4 == dims_product(dims), ErrorKind::length_mismatch,
                context + ": header dims " + dims_to_string(dims) + " need " + std::to_string(dims_product(dims)) +
                    " values, payload has " + std::to_string(rest / 4));
  return Tensor(std::move(dims), r.floats(rest / 4));
}

inline void write_track(const std::filesystem::path& path, const Tensor& t) {
  io::write_file_atomic(path, encode_track(t));
}

inline Tensor read_track(const std::filesystem::path& path) {
  return decode_track(io::read_file(path), path.string());
}

/// Writes every track plus manifest.json into `dir`.
inline void save_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  corpus.validate();
  nlohmann::ordered_json tracks = nlohmann::ordered_json::array();
  for (const auto& t : corpus.tracks) {
    const std::string vname = "tracks/" + t.track_id + ".visual.usyn";
    const std::string aname = "tracks/" + t.track_id + ".audio.usyn";
    write_track(dir / vname, t.visual);
    write_track(dir / aname, t.audio);
    tracks.push_back({{"track_id", t.track_id},
                      {"speaker_id", t.speaker_id},
                      {"visual_spec", t.visual_spec},
                      {"audio_spec", t.audio_spec},
                      {"visual", vname},
                      {"audio", aname}});
  }
  nlohmann::ordered_json m;
  m["format"] = "unisync-manifest";
  m["version"] = kManifestVersion;
  m["tracks"] = std::move(tracks);
  io::write_text_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

/// Accepts either the manifest file itself or its directory.
inline Corpus load_manifest(const std::filesystem::path& path) {
  const auto file = std::filesystem::is_directory(path) ? path / "manifest.json" : path;
  const auto base = file.parent_path();
  const auto bytes = io::read_file(file);
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::bad_magic, file.string() + ": manifest is not valid JSON (" + e.what() + ")");
  }
  UNISYNC_CHECK(m.is_object() && m.value("format", "") == "unisync-manifest", ErrorKind::bad_magic,
                file.string() + ": not a unisync manifest");
  UNISYNC_CHECK(m.value("version", 0u) == kManifestVersion, ErrorKind::version_mismatch,
                file.string() + ": unsupported manifest version");
  Corpus c;
  std::set<std::string> ids;
  try {
    for (const auto& e : m.at("tracks")) {
      Track t;
      t.track_id = e.at("track_id").get<std::string>();
      t.speaker_id = e.at("speaker_id").get<std::string>();
      t.visual_spec = e.at("visual_spec").get<std::string>();
      t.audio_spec = e.at("audio_spec").get<std::string>();
      UNISYNC_CHECK(ids.insert(t.track_id).second, ErrorKind::duplicate_track,
                    file.string() + ": duplicate track id '" + t.track_id + "'");
      const auto vpath = base / e.at("visual").get<std::string>();
      const auto apath = base / e.at("audio").get<std::string>();
      UNISYNC_CHECK(std::filesystem::exists(vpath), ErrorKind::io, "missing track file " + vpath.string());
      UNISYNC_CHECK(std::filesystem::exists(apath), ErrorKind::io, "missing track file " + apath.string());
      t.visual = read_track(vpath);
      t.audio = read_track(apath);
      c.tracks.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::bad_magic, file.string() + ": malformed manifest entry (" + e.what() + ")");
  }
  c.validate();
  return c;
}

}  // namespace unisync
