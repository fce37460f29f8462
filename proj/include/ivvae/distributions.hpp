#pragma once

// Reparameterizable latent distributions and closed-form KLs to the fixed
// priors p(z) = N(0, I) and p(y) = uniform categorical.
//
// Every function works on batched tensors: the last dimension is the latent
// dimension (J for z, C for y) and any leading dimensions are batch axes.
// Randomness always enters through explicit noise tensors owned by the caller.

#include <torch/torch.h>

#include <cmath>
#include <numbers>
#include <string>

#include "ivvae/error.hpp"

namespace ivvae {

inline constexpr double kLogTwoPi = 1.8378770664093453;  // log(2*pi)
inline constexpr double kLogProbFloor = 1e-12;

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

inline bool all_finite(const torch::Tensor& t) { return torch::isfinite(t).all().item<bool>(); }

}  // namespace detail

/// q(z|x) = N(mean, exp(log_variance)), diagonal.
struct GaussianPosterior {
  torch::Tensor mean;
  torch::Tensor log_variance;

  int64_t dims() const { return mean.size(-1); }
  int64_t batch_size() const { return mean.dim() > 1 ? mean.size(0) : 1; }

  torch::Tensor variance() const { return log_variance.exp(); }

  void validate_shape() const {
    detail::require(mean.defined() && log_variance.defined(), "GaussianPosterior: undefined tensors");
    detail::require(mean.sizes() == log_variance.sizes(), "GaussianPosterior: mean/log_variance shape mismatch");
    detail::require(mean.dim() >= 1 && mean.size(-1) >= 1, "GaussianPosterior: J must be at least 1");
  }

  void validate() const {
    validate_shape();
    if (!detail::all_finite(mean) || !detail::all_finite(log_variance)) {
      throw NumericError("GaussianPosterior: non-finite parameters");
    }
  }

  GaussianPosterior index(const torch::Tensor& rows) const {
    return {mean.index_select(0, rows), log_variance.index_select(0, rows)};
  }
};

/// q(y|x) = Cat(probs).
struct CategoricalPosterior {
  torch::Tensor probs;

  int64_t classes() const { return probs.size(-1); }

  void validate(double tolerance = 1e-5) const {
    detail::require(probs.defined() && probs.dim() >= 1, "CategoricalPosterior: undefined tensor");
    detail::require(probs.size(-1) >= 2, "CategoricalPosterior: C must be at least 2");
    const auto p = probs.detach();
    if (!detail::all_finite(p) || (p < 0).any().item<bool>()) {
      throw NumericError("CategoricalPosterior: probabilities must be finite and nonnegative");
    }
    if ((p.sum(-1) - 1.0).abs().max().item<double>() > tolerance) {
      throw NumericError("CategoricalPosterior: probabilities do not sum to one");
    }
  }

  CategoricalPosterior index(const torch::Tensor& rows) const { return {probs.index_select(0, rows)}; }
};

struct SamplerConfig {
  double temperature = 0.75;
  bool hard_forward = false;  // straight-through one-hot on the forward pass

  void validate() const {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
      throw ConfigError("SamplerConfig: temperature must be positive");
    }
  }
};

/// A draw of (y, z) used in reconstruction; y is a relaxed one-hot.
struct LatentSample {
  torch::Tensor y_relaxed;
  torch::Tensor z;
};

/// mean + exp(log_variance / 2) * noise.
inline torch::Tensor gaussian_rsample(const GaussianPosterior& post, const torch::Tensor& noise) {
  post.validate_shape();
  if (noise.sizes() != post.mean.sizes()) {
    throw DimensionError("gaussian_rsample: noise shape does not match posterior");
  }
  return post.mean + torch::exp(0.5 * post.log_variance) * noise;
}

/// Elementwise log N(z; mean, exp(log_variance)).
inline torch::Tensor gaussian_log_density(const torch::Tensor& z, const torch::Tensor& mean,
                                          const torch::Tensor& log_variance) {
  return -0.5 * (kLogTwoPi + log_variance + (z - mean).pow(2) * torch::exp(-log_variance));
}

/// Elementwise log N(z; 0, 1).
inline torch::Tensor standard_normal_log_density(const torch::Tensor& z) {
  return -0.5 * (kLogTwoPi + z.pow(2));
}

/// KL(q || N(0, I)) per batch row: 1/2 sum_j (mu^2 + sigma^2 - log sigma^2 - 1).
inline torch::Tensor gaussian_kl_standard(const GaussianPosterior& post) {
  post.validate();
  return 0.5 * (post.mean.pow(2) + post.log_variance.exp() - post.log_variance - 1.0).sum(-1);
}

/// KL(q || uniform) per batch row: sum_c psi_c log(psi_c C), with 0 log 0 = 0.
inline torch::Tensor categorical_kl_uniform(const CategoricalPosterior& post) {
  post.validate();
  const double log_c = std::log(static_cast<double>(post.classes()));
  return (torch::xlogy(post.probs, post.probs) + post.probs * log_c).sum(-1);
}

/// softmax((log psi + g) / tau) with g = -log(-log u). With hard_forward the
/// value is the argmax one-hot while gradients follow the soft sample.
inline torch::Tensor gumbel_softmax_sample(const CategoricalPosterior& post, const SamplerConfig& cfg,
                                           const torch::Tensor& uniform_noise) {
  cfg.validate();
  if (uniform_noise.sizes() != post.probs.sizes()) {
    throw DimensionError("gumbel_softmax_sample: noise shape does not match probabilities");
  }
  if (((uniform_noise <= 0) | (uniform_noise >= 1)).any().item<bool>()) {
    throw NumericError("gumbel_softmax_sample: uniform noise must lie strictly inside (0,1)");
  }
  const auto logits = torch::log(post.probs.clamp_min(kLogProbFloor));
  const auto gumbel = -torch::log(-torch::log(uniform_noise));
  const auto soft = torch::softmax((logits + gumbel) / cfg.temperature, -1);
  if (!cfg.hard_forward) return soft;
  const auto hard = torch::zeros_like(soft).scatter_(-1, soft.argmax(-1, /*keepdim=*/true), 1.0);
  return hard + soft - soft.detach();
}

/// Uniform noise in the open interval (0,1) suitable for Gumbel perturbation.
inline torch::Tensor open_uniform(at::IntArrayRef sizes, torch::Generator& gen,
                                  torch::TensorOptions opts = torch::kFloat32) {
  const double eps = opts.dtype() == torch::kFloat64 ? 1e-12 : 1e-6;
  return torch::rand(sizes, gen, opts).clamp(eps, 1.0 - eps);
}

}  // namespace ivvae
