#pragma once

// Datasets, deterministic splits with class-balanced labeled subsets, split
// manifests, and fixed-composition semi-supervised minibatch streams.

#include <torch/torch.h>

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ivvae/data_io.hpp"
#include "ivvae/error.hpp"

namespace ivvae::data {

struct FactorTable {
  std::vector<std::string> names;
  std::vector<int> cardinalities;
  std::vector<int32_t> values;  // [rows][factors]
  int class_factor = 0;

  int64_t rows() const { return names.empty() ? 0 : static_cast<int64_t>(values.size() / names.size()); }
  int num_factors() const { return static_cast<int>(names.size()); }

  std::vector<int> column(int k) const {
    std::vector<int> out(static_cast<std::size_t>(rows()));
    const std::size_t M = names.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = values[i * M + k];
    return out;
  }

  int index_of(const std::string& name) const {
    for (int k = 0; k < num_factors(); ++k) {
      if (names[k] == name) return k;
    }
    throw DimensionError("FactorTable: no factor named '" + name + "'");
  }

  int32_t at(int64_t row, int k) const { return values[static_cast<std::size_t>(row) * names.size() + k]; }
};

/// Images kept either as packed bits (binary datasets) or float32 in [0,1].
struct ImageStore {
  int64_t rows = 0;
  int size = 0;
  bool binary = false;
  torch::Tensor storage;  // uint8 [N, size*size/8] or float32 [N, size, size]

  /// [B, 1, size, size] float32 in [0,1].
  torch::Tensor gather(const std::vector<int64_t>& idx) const {
    const auto index = torch::tensor(idx, torch::kInt64);
    if (!binary) return storage.index_select(0, index).unsqueeze(1);
    const auto packed = storage.index_select(0, index);
    const auto shifts = torch::arange(8, torch::kUInt8);
    const auto bits = packed.unsqueeze(-1).bitwise_right_shift(shifts).bitwise_and(1);
    return bits.reshape({-1, 1, size, size}).to(torch::kFloat32);
  }
};

struct Dataset {
  std::string name;
  ImageStore images;
  FactorTable factors;
  int classes = 0;
  std::optional<int64_t> official_test_start;  // rows from here on form the fixed test set

  int64_t rows() const { return images.rows; }
  int64_t label(int64_t row) const { return factors.at(row, factors.class_factor); }
  std::vector<int> labels() const { return factors.column(factors.class_factor); }
};

// ---------------------------------------------------------------------------
// dSprites

inline const std::vector<std::string>& dsprites_factor_names() {
  static const std::vector<std::string> n{"shape", "scale", "rotation", "posX", "posY"};
  return n;
}
inline const std::vector<int>& dsprites_cardinalities() {
  static const std::vector<int> c{3, 6, 40, 32, 32};
  return c;
}
inline constexpr int64_t kDspritesRows = 737280;
inline constexpr const char* kDspritesFile = "dsprites_ndarray_co1sh3sc6or40x32y32_64x64.npz";

struct DspritesOptions {
  // Require the official 737,280-row design with cardinalities 3,6,40,32,32.
  // When false the cardinalities are read off the data, which still has to
  // be a complete factorial design.
  bool strict = true;
};

/// Reads the archive's `imgs` and `latents_classes` arrays. Pixels are
/// stored as packed bits; the constant color factor is dropped.
inline Dataset load_dsprites(const std::string& path, const DspritesOptions& opt = {}) {
  io::ZipArchive zip(path);

  io::NpyHeader lat_h;
  const auto latents = io::read_npy_ints(zip, "latents_classes.npy", &lat_h);
  if (lat_h.shape.size() != 2 || lat_h.shape[1] != 6) {
    throw IngestionError("dsprites: latents_classes must be [N, 6]");
  }
  const int64_t N = lat_h.shape[0];
  if (opt.strict && N != kDspritesRows) {
    throw IngestionError("dsprites: expected " + std::to_string(kDspritesRows) + " rows, found " + std::to_string(N));
  }

  Dataset ds;
  ds.name = "dsprites";
  ds.classes = 3;
  auto& f = ds.factors;
  f.names = dsprites_factor_names();
  f.class_factor = 0;
  f.values.resize(static_cast<std::size_t>(N) * 5);
  std::vector<int> maxv(6, 0);
  for (int64_t i = 0; i < N; ++i) {
    for (int k = 0; k < 6; ++k) {
      const int64_t v = latents[i * 6 + k];
      if (v < 0 || v > 1000) throw IngestionError("dsprites: latent class out of range");
      maxv[k] = std::max<int>(maxv[k], static_cast<int>(v));
      if (k > 0) f.values[i * 5 + (k - 1)] = static_cast<int32_t>(v);
    }
  }
  if (maxv[0] != 0) throw IngestionError("dsprites: color factor is not constant");
  for (int k = 1; k < 6; ++k) f.cardinalities.push_back(maxv[k] + 1);
  if (opt.strict && f.cardinalities != dsprites_cardinalities()) {
    throw IngestionError("dsprites: factor cardinalities differ from 3,6,40,32,32");
  }
  ds.classes = f.cardinalities[0];
  if (ds.classes < 2) throw IngestionError("dsprites: fewer than two shapes");
  // complete factorial design: every combination exactly once
  int64_t combos = 1;
  for (int c : f.cardinalities) combos *= c;
  if (combos != N) throw IngestionError("dsprites: factor design is not complete (rows != product of cardinalities)");
  std::vector<bool> seen(static_cast<std::size_t>(combos), false);
  for (int64_t i = 0; i < N; ++i) {
    int64_t code = 0;
    for (int k = 0; k < 5; ++k) code = code * f.cardinalities[k] + f.values[i * 5 + k];
    if (seen[code]) throw IngestionError("dsprites: duplicated factor combination");
    seen[code] = true;
  }

  // images, streamed straight into packed bits
  const int S = 64;
  auto packed = torch::zeros({N, S * S / 8}, torch::kUInt8);
  auto* out = packed.data_ptr<uint8_t>();
  bool shape_ok = false;
  bool binary = true;
  io::NpyStream npy(
      [&](const io::NpyHeader& h) {
        shape_ok = h.descr == "|u1" && !h.fortran_order && h.shape == std::vector<int64_t>{N, S, S};
        if (!shape_ok) throw IngestionError("dsprites: imgs must be uint8 [N, 64, 64] matching the latents");
      },
      [&](uint64_t offset, const unsigned char* p, std::size_t n) {
        for (std::size_t k = 0; k < n; ++k) {
          const uint64_t g = offset + k;
          const unsigned char v = p[k];
          if (v > 1) binary = false;
          out[g >> 3] |= static_cast<uint8_t>((v & 1) << (g & 7));
        }
      });
  zip.stream(zip.entry("imgs.npy"), [&](const unsigned char* p, std::size_t n) { npy.feed(p, n); });
  if (!shape_ok || npy.payload_bytes() != static_cast<uint64_t>(N) * S * S) {
    throw IngestionError("dsprites: imgs payload size mismatch");
  }
  if (!binary) throw IngestionError("dsprites: pixel values outside {0,1}");
  ds.images = {N, S, true, packed};
  return ds;
}

// ---------------------------------------------------------------------------
// MNIST / Fashion-MNIST

/// Bilinear resize of [N, H, W] float images (corner alignment off).
inline torch::Tensor resize_bilinear(const torch::Tensor& images, int size) {
  namespace F = torch::nn::functional;
  return F::interpolate(images.unsqueeze(1),
                        F::InterpolateFuncOptions()
                            .size(std::vector<int64_t>{size, size})
                            .mode(torch::kBilinear)
                            .align_corners(false))
      .squeeze(1);
}

struct IdxOptions {
  bool strict = true;  // require 60,000 training and 10,000 test rows
  int image_size = 32;
};

namespace detail {

inline std::string find_idx(const std::filesystem::path& dir, const std::string& stem) {
  for (const auto& name : {stem + ".gz", stem}) {
    if (std::filesystem::exists(dir / name)) return (dir / name).string();
  }
  throw IngestionError("idx: " + stem + "[.gz] not found in " + dir.string());
}

}  // namespace detail

/// Training file rows first, then the official test rows.
inline Dataset load_idx_dataset(const std::string& name, const std::string& dir, const IdxOptions& opt = {}) {
  if (name != "mnist" && name != "fashion") throw ConfigError("load_idx_dataset: unknown dataset '" + name + "'");
  const std::filesystem::path d(dir);
  auto images_of = [&](const std::string& prefix) { return io::read_idx(detail::find_idx(d, prefix + "-images-idx3-ubyte"), 3); };
  auto labels_of = [&](const std::string& prefix) { return io::read_idx(detail::find_idx(d, prefix + "-labels-idx1-ubyte"), 1); };
  const auto tr_x = images_of("train"), te_x = images_of("t10k");
  const auto tr_y = labels_of("train"), te_y = labels_of("t10k");
  if (tr_x.shape[0] != tr_y.shape[0] || te_x.shape[0] != te_y.shape[0]) {
    throw IngestionError("idx: image and label counts differ");
  }
  if (tr_x.shape[1] != te_x.shape[1] || tr_x.shape[2] != te_x.shape[2]) {
    throw IngestionError("idx: train and test image sizes differ");
  }
  if (opt.strict && (tr_x.shape[0] != 60000 || te_x.shape[0] != 10000 || tr_x.shape[1] != 28 || tr_x.shape[2] != 28)) {
    throw IngestionError("idx: expected 60,000 + 10,000 images of 28x28");
  }
  const int64_t n_tr = tr_x.shape[0], n_te = te_x.shape[0], N = n_tr + n_te;
  const int64_t H = tr_x.shape[1], W = tr_x.shape[2];

  auto raw = torch::empty({N, H, W}, torch::kUInt8);
  std::memcpy(raw.data_ptr<uint8_t>(), tr_x.data.data(), tr_x.data.size());
  std::memcpy(raw.data_ptr<uint8_t>() + tr_x.data.size(), te_x.data.data(), te_x.data.size());
  auto pixels = raw.to(torch::kFloat32).div_(255.0f);
  if (H != opt.image_size || W != opt.image_size) pixels = resize_bilinear(pixels, opt.image_size);
  pixels = pixels.clamp_(0.0f, 1.0f).contiguous();

  Dataset ds;
  ds.name = name;
  ds.classes = 10;
  ds.official_test_start = n_tr;
  ds.images = {N, opt.image_size, false, pixels};
  ds.factors.names = {"label"};
  ds.factors.cardinalities = {10};
  ds.factors.class_factor = 0;
  ds.factors.values.reserve(static_cast<std::size_t>(N));
  for (const auto* y : {&tr_y, &te_y}) {
    for (uint8_t v : y->data) {
      if (v > 9) throw IngestionError("idx: label outside 0..9");
      ds.factors.values.push_back(v);
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Dataset discovery

/// $IVVAE_DATA_ROOT when set and non-empty.
inline std::optional<std::string> data_root_from_env() {
  const char* v = std::getenv("IVVAE_DATA_ROOT");
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

/// Location of `name` under `root`, or nullopt when absent. Accepted layouts:
/// root/dsprites/<official npz> or root/<official npz>; root/mnist/,
/// root/fashion/ (or root/fashion-mnist/) holding the four IDX files.
inline std::optional<std::string> locate_dataset(const std::string& root, const std::string& name) {
  namespace fs = std::filesystem;
  const fs::path r(root);
  if (name == "dsprites") {
    for (const auto& p : {r / "dsprites" / kDspritesFile, r / kDspritesFile}) {
      if (fs::exists(p)) return p.string();
    }
    return std::nullopt;
  }
  std::vector<fs::path> dirs;
  if (name == "mnist") dirs = {r / "mnist", r / "MNIST"};
  else if (name == "fashion") dirs = {r / "fashion", r / "fashion-mnist", r / "fashion_mnist"};
  else throw ConfigError("unknown dataset '" + name + "'");
  for (const auto& d : dirs) {
    if (fs::exists(d / "train-images-idx3-ubyte.gz") || fs::exists(d / "train-images-idx3-ubyte")) return d.string();
  }
  return std::nullopt;
}

inline Dataset load_dataset(const std::string& name, const std::string& path, bool strict = true) {
  if (name == "dsprites") return load_dsprites(path, {strict});
  return load_idx_dataset(name, path, {strict, 32});
}

// ---------------------------------------------------------------------------
// Splits

/// Seeded Fisher-Yates with a fixed index draw, so the permutation depends
/// only on the seed and not on the standard library.
inline void shuffle(std::vector<int64_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

struct SplitProtocol {
  enum class Kind { stratified_ratio, official_test };
  Kind kind = Kind::stratified_ratio;
  int train_ratio = 10, val_ratio = 1, test_ratio = 1;  // stratified_ratio
  int64_t val_count = 10000;                            // official_test: validation rows taken from the training file

  static SplitProtocol for_dataset(const Dataset& ds) {
    SplitProtocol p;
    if (ds.official_test_start) {
      p.kind = Kind::official_test;
      // 10,000 of 60,000 for the real files; the same share for smaller ones
      p.val_count = std::min<int64_t>(10000, *ds.official_test_start / 6);
    }
    return p;
  }

  nlohmann::json to_json() const {
    if (kind == Kind::official_test) return {{"kind", "official_test"}, {"val_count", val_count}};
    return {{"kind", "stratified_ratio"}, {"ratios", {train_ratio, val_ratio, test_ratio}}};
  }
};

struct SslSplit {
  std::string dataset;
  uint64_t seed = 0;
  double label_fraction = 0.0;
  nlohmann::json protocol;
  std::vector<int64_t> train, val, test, labeled;
  bool complete = true;  // false once restricted to a subset of the rows

  /// Disjointness, coverage of [0, rows) unless restricted, labeled subset
  /// inside train and balanced across classes to within one.
  void validate(const Dataset& ds) const {
    std::vector<uint8_t> owner(static_cast<std::size_t>(ds.rows()), 0);
    auto mark = [&](const std::vector<int64_t>& v, uint8_t tag) {
      for (auto i : v) {
        if (i < 0 || i >= ds.rows()) throw ValidationError("SslSplit: index out of range");
        if (owner[i] != 0) throw ValidationError("SslSplit: train/val/test overlap");
        owner[i] = tag;
      }
    };
    mark(train, 1);
    mark(val, 2);
    mark(test, 3);
    if (complete && std::find(owner.begin(), owner.end(), 0) != owner.end()) {
      throw ValidationError("SslSplit: train/val/test do not cover the dataset");
    }
    std::set<int64_t> seen;
    std::vector<int64_t> per_class(static_cast<std::size_t>(ds.classes), 0);
    for (auto i : labeled) {
      if (i < 0 || i >= ds.rows() || owner[i] != 1) throw ValidationError("SslSplit: labeled index outside train");
      if (!seen.insert(i).second) throw ValidationError("SslSplit: duplicated labeled index");
      ++per_class[ds.label(i)];
    }
    const auto [lo, hi] = std::minmax_element(per_class.begin(), per_class.end());
    if (!labeled.empty() && *hi - *lo > 1) throw ValidationError("SslSplit: labeled subset is not class-balanced");
  }
};

namespace detail {

inline std::vector<int64_t> draw_labeled(const Dataset& ds, const std::vector<int64_t>& train, double fraction,
                                         std::mt19937_64& rng) {
  const int C = ds.classes;
  const auto n_lab = static_cast<int64_t>(std::llround(fraction * static_cast<double>(train.size())));
  if (n_lab < C) {
    throw ConfigError("make_split: label fraction " + std::to_string(fraction) + " leaves some class with no labels");
  }
  std::vector<std::vector<int64_t>> by_class(static_cast<std::size_t>(C));
  for (auto i : train) by_class[ds.label(i)].push_back(i);
  std::vector<int64_t> out;
  for (int c = 0; c < C; ++c) {
    const int64_t want = n_lab / C + (c < n_lab % C ? 1 : 0);
    auto& members = by_class[c];
    if (static_cast<int64_t>(members.size()) < want) {
      throw ConfigError("make_split: class " + std::to_string(c) + " has too few training samples for its labels");
    }
    shuffle(members, rng);
    out.insert(out.end(), members.begin(), members.begin() + want);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

/// Deterministic train/val/test split plus a class-balanced labeled subset
/// of round(label_fraction * |train|) training indices.
inline SslSplit make_split(const Dataset& ds, const SplitProtocol& protocol, double label_fraction, uint64_t seed) {
  if (!(label_fraction > 0.0) || label_fraction > 1.0) throw ConfigError("make_split: label fraction must be in (0, 1]");
  std::mt19937_64 rng(seed);
  SslSplit s;
  s.dataset = ds.name;
  s.seed = seed;
  s.label_fraction = label_fraction;
  s.protocol = protocol.to_json();
  const int C = ds.classes;

  if (protocol.kind == SplitProtocol::Kind::stratified_ratio) {
    const int sum = protocol.train_ratio + protocol.val_ratio + protocol.test_ratio;
    if (protocol.train_ratio <= 0 || protocol.val_ratio < 0 || protocol.test_ratio < 0) {
      throw ConfigError("make_split: invalid ratios");
    }
    std::vector<std::vector<int64_t>> by_class(static_cast<std::size_t>(C));
    for (int64_t i = 0; i < ds.rows(); ++i) by_class[ds.label(i)].push_back(i);
    for (auto& members : by_class) {
      shuffle(members, rng);
      const auto n = static_cast<int64_t>(members.size());
      const int64_t n_test = n * protocol.test_ratio / sum;
      const int64_t n_val = n * protocol.val_ratio / sum;
      s.test.insert(s.test.end(), members.begin(), members.begin() + n_test);
      s.val.insert(s.val.end(), members.begin() + n_test, members.begin() + n_test + n_val);
      s.train.insert(s.train.end(), members.begin() + n_test + n_val, members.end());
    }
  } else {
    if (!ds.official_test_start) throw ConfigError("make_split: dataset has no official test rows");
    const int64_t start = *ds.official_test_start;
    if (protocol.val_count < 0 || protocol.val_count >= start) throw ConfigError("make_split: invalid validation size");
    std::vector<int64_t> pool(static_cast<std::size_t>(start));
    std::iota(pool.begin(), pool.end(), 0);
    shuffle(pool, rng);
    s.val.assign(pool.begin(), pool.begin() + protocol.val_count);
    s.train.assign(pool.begin() + protocol.val_count, pool.end());
    for (int64_t i = start; i < ds.rows(); ++i) s.test.push_back(i);
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());

  s.labeled = detail::draw_labeled(ds, s.train, label_fraction, rng);
  s.validate(ds);
  return s;
}

/// Smaller split for smoke runs: a seeded subset of `max_train` training
/// rows with a freshly drawn balanced labeled subset, and at most `max_eval`
/// rows each of val and test. Zero leaves a part untouched.
inline SslSplit restrict_split(const Dataset& ds, const SslSplit& full, int64_t max_train, int64_t max_eval,
                               uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  SslSplit s = full;
  auto take = [&](std::vector<int64_t>& v, int64_t k) {
    if (k <= 0 || k >= static_cast<int64_t>(v.size())) return false;
    shuffle(v, rng);
    v.resize(static_cast<std::size_t>(k));
    std::sort(v.begin(), v.end());
    return true;
  };
  if (take(s.train, max_train)) {
    s.labeled = detail::draw_labeled(ds, s.train, s.label_fraction, rng);
    s.complete = false;
  }
  if (take(s.val, max_eval)) s.complete = false;
  if (take(s.test, max_eval)) s.complete = false;
  s.validate(ds);
  return s;
}

inline nlohmann::json manifest_to_json(const SslSplit& s) {
  return {{"format", "ivvae-split-manifest"},
          {"version", 1},
          {"dataset", s.dataset},
          {"seed", s.seed},
          {"label_fraction", s.label_fraction},
          {"protocol", s.protocol},
          {"counts", {{"train", s.train.size()}, {"val", s.val.size()}, {"test", s.test.size()}, {"labeled", s.labeled.size()}}},
          {"train", s.train},
          {"val", s.val},
          {"test", s.test},
          {"labeled", s.labeled},
          {"complete", s.complete}};
}

inline SslSplit manifest_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "ivvae-split-manifest" || j.at("version") != 1) {
      throw FormatError("split manifest: unknown format or version");
    }
    SslSplit s;
    s.dataset = j.at("dataset").get<std::string>();
    s.seed = j.at("seed").get<uint64_t>();
    s.label_fraction = j.at("label_fraction").get<double>();
    s.protocol = j.at("protocol");
    s.train = j.at("train").get<std::vector<int64_t>>();
    s.val = j.at("val").get<std::vector<int64_t>>();
    s.test = j.at("test").get<std::vector<int64_t>>();
    s.labeled = j.at("labeled").get<std::vector<int64_t>>();
    s.complete = j.value("complete", true);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("split manifest: ") + e.what());
  }
}

inline void save_manifest(const SslSplit& s, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw FormatError("split manifest: cannot write " + path);
  os << manifest_to_json(s).dump() << '\n';
}

inline SslSplit load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("split manifest: cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("split manifest: ") + e.what());
  }
  return manifest_from_json(j);
}

// ---------------------------------------------------------------------------
// Batches

struct BatchSpec {
  int64_t total = 512;
  int64_t labeled = 256;

  static BatchSpec for_dataset(const std::string& name) {
    if (name == "dsprites") return {2048, 1024};
    return {512, 256};
  }

  int64_t unlabeled() const { return total - labeled; }

  void validate() const {
    if (total < 1 || labeled < 0 || labeled > total) {
      throw ConfigError("BatchSpec: need 0 <= labeled <= total and total >= 1");
    }
  }
};

struct SemiSupervisedBatch {
  std::vector<int64_t> labeled;
  std::vector<int64_t> unlabeled;
  int64_t epoch = 0;
  int64_t step_in_epoch = 0;
};

/// Endless stream of batches with exactly spec.labeled labeled and
/// spec.unlabeled() unlabeled indices. One epoch walks a fresh permutation of
/// the training set for the unlabeled part; the last batch of an epoch is
/// topped up from the start of the same permutation. The labeled pool is
/// reshuffled whenever it runs out. Output depends only on the seed.
class BatchStream {
 public:
  BatchStream(const SslSplit& split, BatchSpec spec, uint64_t seed)
      : train_(split.train), pool_(split.labeled), spec_(spec), unl_rng_(seed * 2 + 1), lab_rng_(seed * 2 + 2) {
    spec_.validate();
    if (spec_.labeled > 0 && pool_.empty()) throw ConfigError("BatchStream: labeled batches need a labeled pool");
    if (train_.empty()) throw ConfigError("BatchStream: empty training set");
    const int64_t u = spec_.unlabeled();
    const auto n = static_cast<int64_t>(u > 0 ? train_.size() : pool_.size());
    const int64_t per = u > 0 ? u : spec_.labeled;
    steps_per_epoch_ = (n + per - 1) / per;
  }

  int64_t steps_per_epoch() const { return steps_per_epoch_; }
  const BatchSpec& spec() const { return spec_; }

  SemiSupervisedBatch next() {
    if (step_ == 0) {
      perm_ = train_;
      shuffle(perm_, unl_rng_);
    }
    SemiSupervisedBatch b;
    b.epoch = epoch_;
    b.step_in_epoch = step_;
    const int64_t u = spec_.unlabeled();
    for (int64_t k = 0; k < u; ++k) {
      b.unlabeled.push_back(perm_[static_cast<std::size_t>((step_ * u + k) % static_cast<int64_t>(perm_.size()))]);
    }
    for (int64_t k = 0; k < spec_.labeled; ++k) {
      if (lab_pos_ == lab_perm_.size()) {
        lab_perm_ = pool_;
        shuffle(lab_perm_, lab_rng_);
        lab_pos_ = 0;
      }
      b.labeled.push_back(lab_perm_[lab_pos_++]);
    }
    if (++step_ == steps_per_epoch_) {
      step_ = 0;
      ++epoch_;
    }
    return b;
  }

 private:
  std::vector<int64_t> train_, pool_, perm_, lab_perm_;
  BatchSpec spec_;
  std::mt19937_64 unl_rng_, lab_rng_;
  std::size_t lab_pos_ = 0;
  int64_t step_ = 0, epoch_ = 0, steps_per_epoch_ = 0;
};

struct TensorBatch {
  torch::Tensor labeled_images;  // [B_L, 1, S, S]
  torch::Tensor labels;          // [B_L] int64
  torch::Tensor unlabeled_images;
};

inline TensorBatch materialize(const Dataset& ds, const SemiSupervisedBatch& b) {
  TensorBatch t;
  std::vector<int64_t> labels;
  for (auto i : b.labeled) labels.push_back(ds.label(i));
  t.labeled_images = ds.images.gather(b.labeled);
  t.labels = torch::tensor(labels, torch::kInt64);
  t.unlabeled_images = ds.images.gather(b.unlabeled);
  return t;
}

}  // namespace ivvae::data
