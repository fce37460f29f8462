#pragma once

// Small synthetic datasets in the real on-disk formats: a dSprites-style npz
// and MNIST-style IDX files.

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace fixtures {

inline void put_le(std::vector<unsigned char>& out, uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline std::vector<unsigned char> npy_bytes(const std::string& descr, const std::vector<int64_t>& shape,
                                            const std::vector<unsigned char>& payload) {
  std::string dims;
  for (auto s : shape) dims += std::to_string(s) + ", ";
  if (shape.size() > 1) dims.resize(dims.size() - 1);
  std::string dict = "{'descr': '" + descr + "', 'fortran_order': False, 'shape': (" + dims + "), }";
  while ((10 + dict.size() + 1) % 64 != 0) dict += ' ';
  dict += '\n';
  std::vector<unsigned char> out = {0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
  put_le(out, dict.size(), 2);
  out.insert(out.end(), dict.begin(), dict.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

struct Member {
  std::string name;
  std::vector<unsigned char> data;
};

/// Zip archive with stored (method 0) or raw-deflate (method 8) members.
inline void write_zip(const std::string& path, const std::vector<Member>& members, bool compress) {
  std::vector<unsigned char> body, cd;
  for (const auto& m : members) {
    const uint32_t crc = static_cast<uint32_t>(::crc32_z(0L, m.data.data(), m.data.size()));
    std::vector<unsigned char> packed;
    if (compress) {
      z_stream zs{};
      deflateInit2(&zs, Z_BEST_SPEED, Z_DEFLATED, -MAX_WBITS, 8, Z_DEFAULT_STRATEGY);
      packed.resize(deflateBound(&zs, m.data.size()));
      zs.next_in = const_cast<unsigned char*>(m.data.data());
      zs.avail_in = static_cast<uInt>(m.data.size());
      zs.next_out = packed.data();
      zs.avail_out = static_cast<uInt>(packed.size());
      deflate(&zs, Z_FINISH);
      packed.resize(zs.total_out);
      deflateEnd(&zs);
    } else {
      packed = m.data;
    }
    const uint64_t offset = body.size();
    const uint16_t method = compress ? 8 : 0;
    put_le(body, 0x04034b50, 4);
    put_le(body, 20, 2);
    put_le(body, 0, 2);
    put_le(body, method, 2);
    put_le(body, 0, 4);
    put_le(body, crc, 4);
    put_le(body, packed.size(), 4);
    put_le(body, m.data.size(), 4);
    put_le(body, m.name.size(), 2);
    put_le(body, 0, 2);
    body.insert(body.end(), m.name.begin(), m.name.end());
    body.insert(body.end(), packed.begin(), packed.end());

    put_le(cd, 0x02014b50, 4);
    put_le(cd, 20, 2);
    put_le(cd, 20, 2);
    put_le(cd, 0, 2);
    put_le(cd, method, 2);
    put_le(cd, 0, 4);
    put_le(cd, crc, 4);
    put_le(cd, packed.size(), 4);
    put_le(cd, m.data.size(), 4);
    put_le(cd, m.name.size(), 2);
    put_le(cd, 0, 2);
    put_le(cd, 0, 2);
    put_le(cd, 0, 2);
    put_le(cd, 0, 2);
    put_le(cd, 0, 4);
    put_le(cd, offset, 4);
    cd.insert(cd.end(), m.name.begin(), m.name.end());
  }
  std::vector<unsigned char> eocd;
  put_le(eocd, 0x06054b50, 4);
  put_le(eocd, 0, 2);
  put_le(eocd, 0, 2);
  put_le(eocd, members.size(), 2);
  put_le(eocd, members.size(), 2);
  put_le(eocd, cd.size(), 4);
  put_le(eocd, body.size(), 4);
  put_le(eocd, 0, 2);
  std::ofstream os(path, std::ios::binary);
  for (const auto* part : {&body, &cd, &eocd}) os.write(reinterpret_cast<const char*>(part->data()), part->size());
}

struct SpritesDesign {
  std::vector<int> cards{3, 2, 2, 4, 4};  // shape, scale, rotation, posX, posY
  int64_t rows() const {
    int64_t n = 1;
    for (int c : cards) n *= c;
    return n;
  }
};

/// Full-factorial binary 64x64 sprites whose appearance depends on every
/// factor; the archive mirrors the official member names and dtypes.
inline void write_sprites_npz(const std::string& path, const SpritesDesign& d = {}, bool compress = true,
                              int pixel_on = 1) {
  const int64_t N = d.rows();
  std::vector<unsigned char> imgs(static_cast<std::size_t>(N) * 64 * 64, 0);
  std::vector<unsigned char> lat;
  for (int64_t i = 0; i < N; ++i) {
    std::vector<int> f(5);
    int64_t r = i;
    for (int k = 4; k >= 0; --k) {
      f[k] = static_cast<int>(r % d.cards[k]);
      r /= d.cards[k];
    }
    put_le(lat, 0, 8);
    for (int k = 0; k < 5; ++k) put_le(lat, static_cast<uint64_t>(f[k]), 8);
    const int side = 10 + 6 * f[1];
    auto step = [](int c) { return c > 1 ? std::min(12, 40 / (c - 1)) : 0; };
    const int x0 = 4 + f[3] * step(d.cards[3]);
    const int y0 = 4 + f[4] * step(d.cards[4]);
    for (int a = 0; a < side; ++a) {
      for (int b = 0; b < side; ++b) {
        bool on = false;
        if (f[0] == 0) on = true;
        else if (f[0] == 1) on = a == 0 || b == 0 || a == side - 1 || b == side - 1 || a == b;
        else on = (a + b) % 4 < 2;
        if (f[2] % 2 == 1) on = on && a >= b;
        const int y = std::min(63, y0 + a), x = std::min(63, x0 + b);
        if (on) imgs[static_cast<std::size_t>(i) * 4096 + y * 64 + x] = static_cast<unsigned char>(pixel_on);
      }
    }
  }
  write_zip(path,
            {{"imgs.npy", npy_bytes("|u1", {N, 64, 64}, imgs)},
             {"latents_classes.npy", npy_bytes("<i8", {N, 6}, lat)}},
            compress);
}

inline void write_idx(const std::string& path, const std::vector<int64_t>& shape, const std::vector<uint8_t>& data,
                      bool gzip, unsigned char type_code = 0x08) {
  std::vector<unsigned char> bytes = {0, 0, type_code, static_cast<unsigned char>(shape.size())};
  for (auto s : shape) {
    for (int k = 3; k >= 0; --k) bytes.push_back(static_cast<unsigned char>(s >> (8 * k)));
  }
  bytes.insert(bytes.end(), data.begin(), data.end());
  if (gzip) {
    gzFile f = gzopen(path.c_str(), "wb");
    gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    gzclose(f);
  } else {
    std::ofstream os(path, std::ios::binary);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
}

/// MNIST-layout directory with `n_train` + `n_test` 28x28 images; label k
/// draws a horizontal bar whose row depends on k, plus seeded noise.
inline void write_digits_dir(const std::string& dir, int64_t n_train, int64_t n_test, bool gzip = true,
                             uint64_t seed = 0) {
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(seed);
  auto make = [&](int64_t n, const std::string& prefix) {
    std::vector<uint8_t> x(static_cast<std::size_t>(n) * 784), y(static_cast<std::size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      const int label = static_cast<int>(i % 10);
      y[i] = static_cast<uint8_t>(label);
      for (int p = 0; p < 784; ++p) {
        const int row = p / 28, col = p % 28;
        int v = static_cast<int>(rng() % 40);
        if (row >= 2 + 2 * label && row < 4 + 2 * label && col >= 4 && col < 24) v = 220 + static_cast<int>(rng() % 36);
        x[static_cast<std::size_t>(i) * 784 + p] = static_cast<uint8_t>(v);
      }
    }
    const std::string ext = gzip ? ".gz" : "";
    write_idx(dir + "/" + prefix + "-images-idx3-ubyte" + ext, {n, 28, 28}, x, gzip);
    write_idx(dir + "/" + prefix + "-labels-idx1-ubyte" + ext, {n}, y, gzip);
  };
  make(n_train, "train");
  make(n_test, "t10k");
}

}  // namespace fixtures
