#pragma once

// Convolutional encoder q(y,z|x) = q(y|x) q(z|x) and decoder p(x|y,z) for
// square grayscale images, plus a self-describing checkpoint container.
//
// Encoder: C4x4/2 stack -> Fc -> {Fc(2J) linear -> (mu, log var), Fc(C) softmax -> psi}
// Decoder: concat(y, z) -> Fc -> Fc(c_L * 2 * 2) -> uC4x4/2 stack (mirrored) -> sigmoid
// ReLU follows every hidden layer.

#include <torch/torch.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ivvae/distributions.hpp"
#include "ivvae/error.hpp"

namespace ivvae {

struct ArchitectureDescriptor {
  int input_size = 32;
  int z_dims = 6;
  int classes = 3;
  std::vector<int> encoder_channels{32, 32, 64, 64};
  int fc_width = 256;

  /// Layouts for the two supported image sizes.
  static ArchitectureDescriptor for_images(int size, int z_dims, int classes) {
    ArchitectureDescriptor d;
    d.z_dims = z_dims;
    d.classes = classes;
    d.input_size = size;
    if (size == 32) {
      d.encoder_channels = {32, 32, 64, 64};
    } else if (size == 64) {
      d.encoder_channels = {32, 32, 32, 64, 64};
    } else {
      throw DimensionError("ArchitectureDescriptor: input size must be 32 or 64, got " + std::to_string(size));
    }
    d.validate();
    return d;
  }

  /// Spatial size after the conv stack.
  int bottleneck_size() const { return input_size >> encoder_channels.size(); }

  bool is_standard() const {
    return (input_size == 32 || input_size == 64) &&
           encoder_channels == for_images(input_size, z_dims, classes).encoder_channels && fc_width == 256;
  }

  void validate() const {
    if (z_dims < 1) throw DimensionError("ArchitectureDescriptor: J must be at least 1");
    if (classes < 2) throw DimensionError("ArchitectureDescriptor: C must be at least 2");
    if (encoder_channels.empty() || fc_width < 1) throw DimensionError("ArchitectureDescriptor: empty layers");
    for (int c : encoder_channels) {
      if (c < 1) throw DimensionError("ArchitectureDescriptor: channel counts must be positive");
    }
    if (input_size < 4 || (input_size >> encoder_channels.size()) != 2 ||
        (2 << encoder_channels.size()) != input_size) {
      throw DimensionError("ArchitectureDescriptor: conv stack must reduce input_size to 2x2");
    }
  }

  nlohmann::json to_json() const {
    return {{"input_size", input_size}, {"z_dims", z_dims},         {"classes", classes},
            {"encoder_channels", encoder_channels}, {"fc_width", fc_width}};
  }

  static ArchitectureDescriptor from_json(const nlohmann::json& j) {
    ArchitectureDescriptor d;
    d.input_size = j.at("input_size").get<int>();
    d.z_dims = j.at("z_dims").get<int>();
    d.classes = j.at("classes").get<int>();
    d.encoder_channels = j.at("encoder_channels").get<std::vector<int>>();
    d.fc_width = j.at("fc_width").get<int>();
    d.validate();
    return d;
  }

  bool operator==(const ArchitectureDescriptor&) const = default;
};

struct PosteriorPair {
  GaussianPosterior gaussian;
  CategoricalPosterior categorical;
};

class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const ArchitectureDescriptor& d) : desc_(d) {
    int in = 1;
    for (std::size_t l = 0; l < d.encoder_channels.size(); ++l) {
      const int out = d.encoder_channels[l];
      convs_.push_back(register_module("conv" + std::to_string(l),
                                       torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 4).stride(2).padding(1))));
      in = out;
    }
    const int flat = in * d.bottleneck_size() * d.bottleneck_size();
    fc_ = register_module("fc", torch::nn::Linear(flat, d.fc_width));
    gauss_head_ = register_module("gauss_head", torch::nn::Linear(d.fc_width, 2 * d.z_dims));
    class_head_ = register_module("class_head", torch::nn::Linear(d.fc_width, d.classes));
  }

  PosteriorPair forward(const torch::Tensor& images) {
    auto h = images;
    for (auto& c : convs_) h = torch::relu(c->forward(h));
    h = torch::relu(fc_->forward(h.flatten(1)));
    const auto g = gauss_head_->forward(h);
    const auto parts = g.split(desc_.z_dims, 1);
    return {{parts[0], parts[1]}, {torch::softmax(class_head_->forward(h), 1)}};
  }

 private:
  ArchitectureDescriptor desc_;
  std::vector<torch::nn::Conv2d> convs_;
  torch::nn::Linear fc_{nullptr}, gauss_head_{nullptr}, class_head_{nullptr};
};
TORCH_MODULE(Encoder);

class DecoderImpl : public torch::nn::Module {
 public:
  explicit DecoderImpl(const ArchitectureDescriptor& d) : desc_(d) {
    const int top = d.encoder_channels.back();
    const int b = d.bottleneck_size();
    fc1_ = register_module("fc1", torch::nn::Linear(d.classes + d.z_dims, d.fc_width));
    fc2_ = register_module("fc2", torch::nn::Linear(d.fc_width, top * b * b));
    const std::size_t L = d.encoder_channels.size();
    for (std::size_t l = 0; l < L; ++l) {
      const int in = d.encoder_channels[L - 1 - l];
      const int out = l + 1 < L ? d.encoder_channels[L - 2 - l] : 1;
      upconvs_.push_back(register_module(
          "upconv" + std::to_string(l),
          torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(in, out, 4).stride(2).padding(1))));
    }
  }

  /// Pixel logits [B, 1, H, W].
  torch::Tensor logits(const torch::Tensor& y, const torch::Tensor& z) {
    const int b = desc_.bottleneck_size();
    auto h = torch::relu(fc1_->forward(torch::cat({y, z}, 1)));
    h = torch::relu(fc2_->forward(h)).view({-1, desc_.encoder_channels.back(), b, b});
    for (std::size_t l = 0; l < upconvs_.size(); ++l) {
      h = upconvs_[l]->forward(h);
      if (l + 1 < upconvs_.size()) h = torch::relu(h);
    }
    return h;
  }

  torch::Tensor forward(const torch::Tensor& y, const torch::Tensor& z) { return torch::sigmoid(logits(y, z)); }

 private:
  ArchitectureDescriptor desc_;
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
  std::vector<torch::nn::ConvTranspose2d> upconvs_;
};
TORCH_MODULE(Decoder);

/// Encoder and decoder parameters with their architecture and provenance.
struct ModelState {
  ArchitectureDescriptor arch;
  Encoder encoder{nullptr};
  Decoder decoder{nullptr};
  uint64_t seed = 0;
  int64_t epoch = 0;

  ModelState() = default;

  /// Fresh parameters: every weight and bias ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  explicit ModelState(const ArchitectureDescriptor& a, uint64_t init_seed = 0,
                      torch::Dtype dtype = torch::kFloat32)
      : arch(a), encoder(a), decoder(a), seed(init_seed) {
    arch.validate();
    encoder->to(dtype);
    decoder->to(dtype);
    auto gen = at::make_generator<at::CPUGeneratorImpl>(init_seed);
    torch::NoGradGuard no_grad;
    for (auto* m : {static_cast<torch::nn::Module*>(encoder.get()), static_cast<torch::nn::Module*>(decoder.get())}) {
      for (auto& sub : m->children()) {
        auto w = sub->named_parameters(false).find("weight");
        auto b = sub->named_parameters(false).find("bias");
        if (!w) continue;
        // fan-in is dim 1 times the kernel area, as torch itself counts it
        int64_t fan_in = w->size(1);
        for (int64_t k = 2; k < w->dim(); ++k) fan_in *= w->size(k);
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        w->uniform_(-bound, bound, gen);
        if (b) b->uniform_(-bound, bound, gen);
      }
    }
  }

  /// Named parameters, encoder first, with "encoder." / "decoder." prefixes.
  std::vector<std::pair<std::string, torch::Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& p : encoder->named_parameters()) out.emplace_back("encoder." + p.key(), p.value());
    for (const auto& p : decoder->named_parameters()) out.emplace_back("decoder." + p.key(), p.value());
    return out;
  }

  std::vector<torch::Tensor> parameters() const {
    std::vector<torch::Tensor> out;
    for (auto& [_, t] : named_parameters()) out.push_back(t);
    return out;
  }

  int64_t parameter_count() const {
    int64_t n = 0;
    for (const auto& t : parameters()) n += t.numel();
    return n;
  }

  torch::Dtype dtype() const { return encoder->parameters().front().scalar_type(); }

  void train(bool on = true) {
    encoder->train(on);
    decoder->train(on);
  }

  void validate() const {
    arch.validate();
    for (const auto& [name, t] : named_parameters()) {
      if (!torch::isfinite(t).all().item<bool>()) throw NumericError("ModelState: non-finite parameter " + name);
    }
  }
};

/// images: [B, H, W] or [B, 1, H, W] with H = W = input size.
inline PosteriorPair encode(ModelState& state, const torch::Tensor& images) {
  auto x = images;
  if (x.dim() == 3) x = x.unsqueeze(1);
  const int s = state.arch.input_size;
  if (x.dim() != 4 || x.size(1) != 1 || x.size(2) != s || x.size(3) != s) {
    throw DimensionError("encode: expected [B, 1, " + std::to_string(s) + ", " + std::to_string(s) + "] images, got " +
                         c10::str(images.sizes()));
  }
  return state.encoder->forward(x.to(state.dtype()));
}

/// Bernoulli means [B, 1, H, W] in (0, 1).
inline torch::Tensor decode(ModelState& state, const torch::Tensor& y, const torch::Tensor& z) {
  if (y.dim() != 2 || z.dim() != 2 || y.size(0) != z.size(0) || y.size(1) != state.arch.classes ||
      z.size(1) != state.arch.z_dims) {
    throw DimensionError("decode: expected y [B, " + std::to_string(state.arch.classes) + "] and z [B, " +
                         std::to_string(state.arch.z_dims) + "]");
  }
  return state.decoder->forward(y, z);
}

inline constexpr double kPixelClamp = 1e-7;

/// Per-sample sum over pixels of x log m + (1-x) log(1-m), with m clamped to [1e-7, 1-1e-7].
inline torch::Tensor bernoulli_recon_loglik_per_sample(const torch::Tensor& means, const torch::Tensor& targets) {
  if (means.sizes() != targets.sizes()) {
    throw DimensionError("bernoulli_recon_loglik: means " + c10::str(means.sizes()) + " vs targets " +
                         c10::str(targets.sizes()));
  }
  if ((targets < 0).any().item<bool>() || (targets > 1).any().item<bool>() ||
      !torch::isfinite(targets).all().item<bool>()) {
    throw ValidationError("bernoulli_recon_loglik: targets must lie in [0, 1]");
  }
  const auto m = means.clamp(kPixelClamp, 1.0 - kPixelClamp);
  const auto x = targets.to(m.scalar_type());
  return (x * torch::log(m) + (1 - x) * torch::log1p(-m)).flatten(1).sum(1);
}

/// Sum over pixels, mean over the batch.
inline torch::Tensor bernoulli_recon_loglik(const torch::Tensor& means, const torch::Tensor& targets) {
  return bernoulli_recon_loglik_per_sample(means, targets).mean();
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// "IVVAECKP" | u32 version | u64 header bytes | JSON header | raw tensor blobs
// The header holds the architecture, seed, epoch, caller metadata and a table
// of {name, dtype, shape, offset, bytes} into the blob section. Integers are
// little-endian.

inline constexpr char kCheckpointMagic[8] = {'I', 'V', 'V', 'A', 'E', 'C', 'K', 'P'};
inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

inline std::string dtype_name(torch::Dtype t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    default: throw FormatError("checkpoint: unsupported dtype " + std::string(c10::toString(t)));
  }
}

inline torch::Dtype dtype_from(const std::string& s) {
  if (s == "f32") return torch::kFloat32;
  if (s == "f64") return torch::kFloat64;
  throw FormatError("checkpoint: unknown dtype '" + s + "'");
}

template <class T>
void write_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw FormatError("checkpoint: truncated header");
  uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace detail

inline void save_checkpoint(const ModelState& state, const std::string& path,
                            const nlohmann::json& metadata = nlohmann::json::object()) {
  nlohmann::json header;
  header["architecture"] = state.arch.to_json();
  header["seed"] = state.seed;
  header["epoch"] = state.epoch;
  header["metadata"] = metadata;
  header["tensors"] = nlohmann::json::array();
  std::vector<torch::Tensor> blobs;
  uint64_t offset = 0;
  for (const auto& [name, t] : state.named_parameters()) {
    auto c = t.detach().cpu().contiguous();
    const uint64_t bytes = c.numel() * c.element_size();
    header["tensors"].push_back({{"name", name},
                                 {"dtype", detail::dtype_name(c.scalar_type())},
                                 {"shape", c.sizes().vec()},
                                 {"offset", offset},
                                 {"bytes", bytes}});
    offset += bytes;
    blobs.push_back(c);
  }
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("checkpoint: cannot open " + path + " for writing");
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_le<uint32_t>(os, kCheckpointVersion);
  detail::write_le<uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& b : blobs) os.write(static_cast<const char*>(b.data_ptr()), b.numel() * b.element_size());
  if (!os) throw FormatError("checkpoint: write failed for " + path);
}

struct LoadedCheckpoint {
  ModelState state;
  nlohmann::json metadata;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open " + path);
  char magic[sizeof(kCheckpointMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw FormatError("checkpoint: bad magic in " + path);
  }
  const auto version = detail::read_le<uint32_t>(is);
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto header_bytes = detail::read_le<uint64_t>(is);
  if (header_bytes > (uint64_t{1} << 30)) throw FormatError("checkpoint: implausible header size");
  std::string text(header_bytes, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(header_bytes))) throw FormatError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: header is not JSON: ") + e.what());
  }
  const auto blob_start = is.tellg();

  LoadedCheckpoint out;
  try {
    const auto arch = ArchitectureDescriptor::from_json(header.at("architecture"));
    const auto& table = header.at("tensors");
    const auto dtype = table.empty() ? torch::kFloat32 : detail::dtype_from(table.at(0).at("dtype").get<std::string>());
    out.state = ModelState(arch, header.at("seed").get<uint64_t>(), dtype);
    out.state.epoch = header.at("epoch").get<int64_t>();
    out.metadata = header.value("metadata", nlohmann::json::object());

    std::map<std::string, torch::Tensor> params;
    for (auto& [name, t] : out.state.named_parameters()) params[name] = t;
    if (table.size() != params.size()) throw FormatError("checkpoint: parameter count does not match architecture");
    torch::NoGradGuard no_grad;
    for (const auto& entry : table) {
      const auto name = entry.at("name").get<std::string>();
      auto it = params.find(name);
      if (it == params.end()) throw FormatError("checkpoint: unexpected tensor " + name);
      const auto shape = entry.at("shape").get<std::vector<int64_t>>();
      if (it->second.sizes().vec() != shape) throw FormatError("checkpoint: shape mismatch for " + name);
      if (detail::dtype_from(entry.at("dtype").get<std::string>()) != dtype) {
        throw FormatError("checkpoint: mixed dtypes are not supported");
      }
      const auto bytes = entry.at("bytes").get<uint64_t>();
      auto buf = torch::empty(shape, torch::TensorOptions().dtype(dtype));
      if (bytes != static_cast<uint64_t>(buf.numel() * buf.element_size())) {
        throw FormatError("checkpoint: byte count mismatch for " + name);
      }
      is.seekg(blob_start + static_cast<std::streamoff>(entry.at("offset").get<uint64_t>()));
      if (!is.read(static_cast<char*>(buf.data_ptr()), static_cast<std::streamsize>(bytes))) {
        throw FormatError("checkpoint: truncated blob for " + name);
      }
      it->second.copy_(buf);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  }
  return out;
}

}  // namespace ivvae
