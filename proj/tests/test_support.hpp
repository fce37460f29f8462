#pragma once

// Shared helpers for the torch-backed test suites.

#include <torch/torch.h>

#include <cmath>
#include <functional>
#include <vector>

namespace ivvae::testing {

inline torch::TensorOptions f64() { return torch::TensorOptions().dtype(torch::kFloat64); }

inline torch::Generator make_gen(uint64_t seed) {
  return at::make_generator<at::CPUGeneratorImpl>(seed);
}

/// Norm-wise relative error between autograd and central finite differences
/// of `f` with respect to every element of `params` (float64 tensors with
/// requires_grad set). Returns ||g_ad - g_fd|| / max(||g_fd||, tiny).
inline double gradient_check(const std::vector<torch::Tensor>& params,
                             const std::function<torch::Tensor()>& f, double step = 1e-6) {
  for (const auto& p : params) {
    if (p.grad().defined()) p.grad().zero_();
  }
  const auto value = f();
  const auto grads = torch::autograd::grad({value}, params, {}, false, false, true);
  double diff2 = 0.0, ref2 = 0.0;
  torch::NoGradGuard no_grad;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto flat = params[k].view(-1);
    const auto g_ad = grads[k].defined() ? grads[k].reshape(-1) : torch::zeros_like(flat);
    for (int64_t i = 0; i < flat.numel(); ++i) {
      const double orig = flat[i].item<double>();
      flat[i] = orig + step;
      const double up = f().item<double>();
      flat[i] = orig - step;
      const double down = f().item<double>();
      flat[i] = orig;
      const double fd = (up - down) / (2.0 * step);
      const double ad = g_ad[i].item<double>();
      diff2 += (ad - fd) * (ad - fd);
      ref2 += fd * fd;
    }
  }
  return std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-300);
}

}  // namespace ivvae::testing
