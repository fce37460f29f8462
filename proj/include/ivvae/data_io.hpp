#pragma once

// Readers for the on-disk dataset formats: zip archives (stored or deflated
// members, zip64 sizes), .npy arrays streamed out of them, and IDX files
// (optionally gzip-compressed).

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "ivvae/error.hpp"

namespace ivvae::io {

namespace detail {

inline uint64_t le(const unsigned char* p, int bytes) {
  uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

inline void read_at(std::ifstream& f, uint64_t offset, void* dst, std::size_t n, const std::string& what) {
  f.clear();
  f.seekg(static_cast<std::streamoff>(offset));
  if (!f.read(static_cast<char*>(dst), static_cast<std::streamsize>(n))) {
    throw IngestionError("zip: truncated archive while reading " + what);
  }
}

}  // namespace detail

struct ZipEntry {
  std::string name;
  uint16_t method = 0;  // 0 stored, 8 deflate
  uint32_t crc32 = 0;
  uint64_t compressed_size = 0;
  uint64_t uncompressed_size = 0;
  uint64_t local_header_offset = 0;
};

/// Central-directory view of a zip archive with streaming member extraction.
class ZipArchive {
 public:
  explicit ZipArchive(std::string path) : path_(std::move(path)), file_(path_, std::ios::binary) {
    if (!file_) throw IngestionError("zip: cannot open " + path_);
    read_directory();
  }

  const std::vector<ZipEntry>& entries() const { return entries_; }

  const ZipEntry& entry(const std::string& name) const {
    for (const auto& e : entries_) {
      if (e.name == name) return e;
    }
    throw IngestionError("zip: " + path_ + " has no member '" + name + "'");
  }

  bool contains(const std::string& name) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const ZipEntry& e) { return e.name == name; });
  }

  /// Streams the decompressed member through `sink` in chunks and verifies
  /// its CRC-32 and size.
  void stream(const ZipEntry& e, const std::function<void(const unsigned char*, std::size_t)>& sink) {
    unsigned char lh[30];
    detail::read_at(file_, e.local_header_offset, lh, sizeof(lh), e.name);
    if (detail::le(lh, 4) != 0x04034b50) throw IngestionError("zip: bad local header for " + e.name);
    const uint64_t data_start = e.local_header_offset + 30 + detail::le(lh + 26, 2) + detail::le(lh + 28, 2);
    file_.clear();
    file_.seekg(static_cast<std::streamoff>(data_start));

    constexpr std::size_t kChunk = 1 << 20;
    std::vector<unsigned char> in(kChunk), out(kChunk);
    uLong crc = ::crc32(0L, Z_NULL, 0);
    uint64_t produced = 0, remaining = e.compressed_size;
    auto emit = [&](const unsigned char* p, std::size_t n) {
      crc = ::crc32_z(crc, p, n);
      produced += n;
      sink(p, n);
    };
    auto fill = [&]() -> std::size_t {
      const std::size_t n = static_cast<std::size_t>(std::min<uint64_t>(remaining, kChunk));
      if (n > 0 && !file_.read(reinterpret_cast<char*>(in.data()), static_cast<std::streamsize>(n))) {
        throw IngestionError("zip: truncated data for " + e.name);
      }
      remaining -= n;
      return n;
    };

    if (e.method == 0) {
      while (remaining > 0) {
        const auto n = fill();
        emit(in.data(), n);
      }
    } else if (e.method == 8) {
      z_stream zs{};
      if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw IngestionError("zip: inflateInit failed");
      int rc = Z_OK;
      try {
        while (rc != Z_STREAM_END) {
          if (zs.avail_in == 0) {
            const auto n = fill();
            if (n == 0) throw IngestionError("zip: deflate stream of " + e.name + " ends early");
            zs.next_in = in.data();
            zs.avail_in = static_cast<uInt>(n);
          }
          zs.next_out = out.data();
          zs.avail_out = static_cast<uInt>(out.size());
          rc = inflate(&zs, Z_NO_FLUSH);
          if (rc != Z_OK && rc != Z_STREAM_END) throw IngestionError("zip: corrupt deflate data in " + e.name);
          emit(out.data(), out.size() - zs.avail_out);
        }
      } catch (...) {
        inflateEnd(&zs);
        throw;
      }
      inflateEnd(&zs);
    } else {
      throw IngestionError("zip: unsupported compression method " + std::to_string(e.method) + " for " + e.name);
    }
    if (produced != e.uncompressed_size) throw IngestionError("zip: size mismatch for " + e.name);
    if (static_cast<uint32_t>(crc) != e.crc32) throw IngestionError("zip: checksum mismatch for " + e.name);
  }

 private:
  void read_directory() {
    file_.seekg(0, std::ios::end);
    const uint64_t size = static_cast<uint64_t>(file_.tellg());
    if (size < 22) throw IngestionError("zip: " + path_ + " is too small");
    const uint64_t tail_len = std::min<uint64_t>(size, 22 + 65535 + 20);
    std::vector<unsigned char> tail(tail_len);
    detail::read_at(file_, size - tail_len, tail.data(), tail_len, "end record");
    int64_t eocd = -1;
    for (int64_t i = static_cast<int64_t>(tail_len) - 22; i >= 0; --i) {
      if (detail::le(&tail[i], 4) == 0x06054b50) {
        eocd = i;
        break;
      }
    }
    if (eocd < 0) throw IngestionError("zip: no end-of-central-directory record in " + path_);
    uint64_t count = detail::le(&tail[eocd + 10], 2);
    uint64_t cd_size = detail::le(&tail[eocd + 12], 4);
    uint64_t cd_offset = detail::le(&tail[eocd + 16], 4);
    if (eocd >= 20 && detail::le(&tail[eocd - 20], 4) == 0x07064b50) {
      const uint64_t rec_off = detail::le(&tail[eocd - 20 + 8], 8);
      unsigned char rec[56];
      detail::read_at(file_, rec_off, rec, sizeof(rec), "zip64 end record");
      if (detail::le(rec, 4) != 0x06064b50) throw IngestionError("zip: bad zip64 end record");
      count = detail::le(rec + 32, 8);
      cd_size = detail::le(rec + 40, 8);
      cd_offset = detail::le(rec + 48, 8);
    }
    std::vector<unsigned char> cd(cd_size);
    detail::read_at(file_, cd_offset, cd.data(), cd_size, "central directory");
    std::size_t p = 0;
    for (uint64_t k = 0; k < count; ++k) {
      if (p + 46 > cd.size() || detail::le(&cd[p], 4) != 0x02014b50) {
        throw IngestionError("zip: corrupt central directory in " + path_);
      }
      ZipEntry e;
      e.method = static_cast<uint16_t>(detail::le(&cd[p + 10], 2));
      e.crc32 = static_cast<uint32_t>(detail::le(&cd[p + 16], 4));
      e.compressed_size = detail::le(&cd[p + 20], 4);
      e.uncompressed_size = detail::le(&cd[p + 24], 4);
      const std::size_t name_len = detail::le(&cd[p + 28], 2);
      const std::size_t extra_len = detail::le(&cd[p + 30], 2);
      const std::size_t comment_len = detail::le(&cd[p + 32], 2);
      e.local_header_offset = detail::le(&cd[p + 42], 4);
      if (p + 46 + name_len + extra_len > cd.size()) throw IngestionError("zip: corrupt central directory entry");
      e.name.assign(reinterpret_cast<const char*>(&cd[p + 46]), name_len);
      // zip64 extra field carries whichever 32-bit fields were saturated, in order
      std::size_t x = p + 46 + name_len;
      const std::size_t x_end = x + extra_len;
      while (x + 4 <= x_end) {
        const uint64_t id = detail::le(&cd[x], 2), len = detail::le(&cd[x + 2], 2);
        if (id == 0x0001) {
          std::size_t q = x + 4;
          auto next = [&](uint64_t& field) {
            if (field == 0xffffffffu && q + 8 <= x + 4 + len) {
              field = detail::le(&cd[q], 8);
              q += 8;
            }
          };
          next(e.uncompressed_size);
          next(e.compressed_size);
          next(e.local_header_offset);
        }
        x += 4 + len;
      }
      entries_.push_back(std::move(e));
      p += 46 + name_len + extra_len + comment_len;
    }
  }

  std::string path_;
  std::ifstream file_;
  std::vector<ZipEntry> entries_;
};

// ---------------------------------------------------------------------------
// .npy

struct NpyHeader {
  std::string descr;  // e.g. "|u1", "<i8", "<f8"
  bool fortran_order = false;
  std::vector<int64_t> shape;

  int64_t count() const {
    int64_t n = 1;
    for (auto s : shape) n *= s;
    return n;
  }
  std::size_t item_size() const { return static_cast<std::size_t>(std::stoi(descr.substr(2))); }
};

inline NpyHeader parse_npy_header(const std::string& dict) {
  NpyHeader h;
  std::smatch m;
  if (!std::regex_search(dict, m, std::regex(R"('descr'\s*:\s*'([^']+)')"))) {
    throw FormatError("npy: header without descr");
  }
  h.descr = m[1];
  if (!std::regex_search(dict, m, std::regex(R"('fortran_order'\s*:\s*(True|False))"))) {
    throw FormatError("npy: header without fortran_order");
  }
  h.fortran_order = m[1] == "True";
  if (!std::regex_search(dict, m, std::regex(R"('shape'\s*:\s*\(([^)]*)\))"))) {
    throw FormatError("npy: header without shape");
  }
  const std::string dims = m[1];
  static const std::regex digits(R"(\d+)");
  for (std::sregex_iterator it(dims.begin(), dims.end(), digits), end; it != end; ++it) {
    h.shape.push_back(std::stoll(it->str()));
  }
  if (h.descr.size() < 3 || (h.descr[0] != '<' && h.descr[0] != '|')) {
    throw FormatError("npy: unsupported byte order in descr '" + h.descr + "'");
  }
  return h;
}

/// Incremental .npy decoder: feed raw bytes, receive the header once and
/// then the payload with its running byte offset.
class NpyStream {
 public:
  using HeaderFn = std::function<void(const NpyHeader&)>;
  using PayloadFn = std::function<void(uint64_t offset, const unsigned char*, std::size_t)>;

  NpyStream(HeaderFn on_header, PayloadFn on_payload)
      : on_header_(std::move(on_header)), on_payload_(std::move(on_payload)) {}

  void feed(const unsigned char* p, std::size_t n) {
    if (!header_done_) {
      const std::size_t take = std::min(n, needed() - pre_.size());
      pre_.insert(pre_.end(), p, p + take);
      p += take;
      n -= take;
      if (pre_.size() == needed()) advance_header();
      if (!header_done_ && n > 0) return feed(p, n);
    }
    if (header_done_ && n > 0) {
      on_payload_(offset_, p, n);
      offset_ += n;
    }
  }

  bool header_done() const { return header_done_; }
  uint64_t payload_bytes() const { return offset_; }

 private:
  std::size_t needed() const { return header_len_ ? 10 + *header_len_ + (version_ >= 2 ? 2 : 0) : 12; }

  void advance_header() {
    if (!header_len_) {
      static const unsigned char magic[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
      if (std::memcmp(pre_.data(), magic, 6) != 0) throw FormatError("npy: bad magic");
      version_ = pre_[6];
      header_len_ = version_ >= 2 ? detail::le(&pre_[8], 4) : detail::le(&pre_[8], 2);
      if (pre_.size() >= needed()) advance_header();
      return;
    }
    const std::size_t start = version_ >= 2 ? 12 : 10;
    header_ = parse_npy_header(std::string(pre_.begin() + start, pre_.begin() + start + *header_len_));
    header_done_ = true;
    on_header_(header_);
  }

  HeaderFn on_header_;
  PayloadFn on_payload_;
  std::vector<unsigned char> pre_;
  std::optional<std::size_t> header_len_;
  int version_ = 1;
  bool header_done_ = false;
  NpyHeader header_;
  uint64_t offset_ = 0;
};

/// Whole-array read of a little-endian integer member into int64 values.
inline std::vector<int64_t> read_npy_ints(ZipArchive& zip, const std::string& member, NpyHeader* header_out = nullptr) {
  std::vector<int64_t> values;
  NpyHeader header;
  std::vector<unsigned char> carry;
  NpyStream npy(
      [&](const NpyHeader& h) {
        if (h.fortran_order) throw FormatError("npy: Fortran-ordered arrays are not supported");
        const char kind = h.descr[1];
        if (kind != 'i' && kind != 'u') throw FormatError("npy: " + member + " is not an integer array");
        header = h;
        values.reserve(static_cast<std::size_t>(h.count()));
      },
      [&](uint64_t, const unsigned char* p, std::size_t n) {
        const std::size_t w = header.item_size();
        carry.insert(carry.end(), p, p + n);
        std::size_t k = 0;
        for (; k + w <= carry.size(); k += w) {
          uint64_t v = detail::le(&carry[k], static_cast<int>(w));
          if (header.descr[1] == 'i' && w < 8 && (v >> (8 * w - 1))) v |= ~uint64_t{0} << (8 * w);
          values.push_back(static_cast<int64_t>(v));
        }
        carry.erase(carry.begin(), carry.begin() + static_cast<std::ptrdiff_t>(k));
      });
  zip.stream(zip.entry(member), [&](const unsigned char* p, std::size_t n) { npy.feed(p, n); });
  if (!npy.header_done() || static_cast<int64_t>(values.size()) != header.count() || !carry.empty()) {
    throw IngestionError("npy: " + member + " payload does not match its shape");
  }
  if (header_out) *header_out = header;
  return values;
}

// ---------------------------------------------------------------------------
// IDX (optionally gzip-compressed; gzread passes plain files through)

struct IdxArray {
  std::vector<int64_t> shape;
  std::vector<uint8_t> data;
};

inline IdxArray read_idx(const std::string& path, int expected_rank) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IngestionError("idx: cannot open " + path);
  auto read = [&](void* dst, unsigned n) {
    if (gzread(f, dst, n) != static_cast<int>(n)) {
      gzclose(f);
      throw FormatError("idx: truncated file " + path);
    }
  };
  unsigned char magic[4];
  read(magic, 4);
  if (magic[0] != 0 || magic[1] != 0 || magic[2] != 0x08 || magic[3] != expected_rank) {
    gzclose(f);
    throw FormatError("idx: magic number mismatch in " + path + " (expected unsigned-byte rank " +
                      std::to_string(expected_rank) + ")");
  }
  IdxArray out;
  std::size_t total = 1;
  for (int d = 0; d < expected_rank; ++d) {
    unsigned char b[4];
    read(b, 4);
    const int64_t n = (int64_t{b[0]} << 24) | (int64_t{b[1]} << 16) | (int64_t{b[2]} << 8) | b[3];
    out.shape.push_back(n);
    total *= static_cast<std::size_t>(n);
  }
  out.data.resize(total);
  std::size_t done = 0;
  while (done < total) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(total - done, 1u << 30));
    read(out.data.data() + done, chunk);
    done += chunk;
  }
  unsigned char extra;
  const bool trailing = gzread(f, &extra, 1) > 0;
  gzclose(f);
  if (trailing) throw FormatError("idx: trailing bytes in " + path);
  return out;
}

}  // namespace ivvae::io
