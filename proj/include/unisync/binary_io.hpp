#pragma once

// Little-endian byte encoding and crash-safe file writes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "unisync/error.hpp"
#include "unisync/tensor.hpp"

namespace unisync::io {

using Bytes = std::vector<std::uint8_t>;

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void raw(const std::uint8_t* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }

  /// ndim, dims, payload.
  void tensor(const Tensor& t) {
    u32(static_cast<std::uint32_t>(t.ndim()));
    for (auto d : t.dims()) u32(static_cast<std::uint32_t>(d));
    buf_.reserve(buf_.size() + 4 * t.size());
    for (float v : t.values()) f32(v);
  }

  const Bytes& bytes() const noexcept { return buf_; }
  Bytes take() { return std::move(buf_); }

 private:
  Bytes buf_;
};

/// Sequential reader; every short read raises ErrorKind::truncated.
class ByteReader {
 public:
  ByteReader(const Bytes& buf, std::string context) : buf_(buf), context_(std::move(context)) {}

  std::size_t remaining() const noexcept { return buf_.size() - pos_; }
  std::size_t position() const noexcept { return pos_; }

  void need(std::size_t n) const {
    UNISYNC_CHECK(remaining() >= n, ErrorKind::truncated,
                  context_ + ": unexpected end of data at byte " + std::to_string(pos_));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  Dims dims() {
    const std::uint32_t ndim = u32();
    UNISYNC_CHECK(ndim >= 1 && ndim <= 8, ErrorKind::length_mismatch, context_ + ": implausible ndim " + std::to_string(ndim));
    Dims d(ndim);
    for (auto& x : d) {
      x = u32();
      UNISYNC_CHECK(x > 0, ErrorKind::length_mismatch, context_ + ": zero dimension");
    }
    return d;
  }
  std::vector<float> floats(std::size_t n) {
    need(4 * n);
    std::vector<float> out(n);
    for (auto& v : out) v = f32();
    return out;
  }

 private:
  const Bytes& buf_;
  std::size_t pos_ = 0;
  std::string context_;
};

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  UNISYNC_CHECK(in.good(), ErrorKind::io, "cannot open " + path.string());
  Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  UNISYNC_CHECK(!in.bad(), ErrorKind::io, "error reading " + path.string());
  return data;
}

/// Writes to a sibling temp file and renames over the target, so readers
/// never observe a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const Bytes& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    UNISYNC_CHECK(out.good(), ErrorKind::io, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    out.flush();
    if (!out.good()) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw Error(ErrorKind::io, "short write to " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorKind::io, "cannot rename into " + path.string());
  }
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, Bytes(text.begin(), text.end()));
}

}  // namespace unisync::io
