#pragma once

// Minibatch estimators of aggregate-posterior KL quantities.
//
// The minibatch posteriors q(z|x_m), m = 1..M, drawn from a dataset of size N,
// act as mixture components for the aggregate q(z) = (1/N) sum_n q(z|x_n). For
// an evaluation point z_i drawn from component s(i), the component s(i) gets
// weight 1/N and each of the other M-1 components gets (N-1)/(N(M-1)). This
// is an unbiased estimate of q(z_i) when the other batch members are uniform
// draws from the rest of the dataset, and it is the exact mixture when M = N.
//
// The class latent y is marginalized exactly over its C values using the
// categorical probabilities, so no relaxed-sample density is ever needed.

#include <torch/torch.h>

#include <cmath>

#include "ivvae/distributions.hpp"
#include "ivvae/error.hpp"

namespace ivvae {

/// Posteriors of one minibatch plus the size of the dataset it was drawn from.
struct BatchPosteriors {
  GaussianPosterior gaussian;
  CategoricalPosterior categorical;
  int64_t dataset_size = 0;

  int64_t batch_size() const { return gaussian.mean.size(0); }

  void validate() const {
    gaussian.validate_shape();
    if (gaussian.mean.dim() != 2 || categorical.probs.dim() != 2) {
      throw DimensionError("BatchPosteriors: expected [M, J] and [M, C] tensors");
    }
    if (categorical.probs.size(0) != batch_size()) {
      throw DimensionError("BatchPosteriors: Gaussian and categorical batch sizes differ");
    }
    if (dataset_size < batch_size()) throw EstimatorError("BatchPosteriors: dataset smaller than batch");
    if (batch_size() < 2 && dataset_size != batch_size()) {
      throw EstimatorError("BatchPosteriors: at least two samples are needed unless the batch is the dataset");
    }
  }
};

/// Points at which aggregate densities are evaluated, with the index of the
/// posterior each point was drawn from.
struct EvalPoints {
  torch::Tensor z;       // [S, J]
  torch::Tensor source;  // [S] int64

  /// z_i drawn from posterior i.
  static EvalPoints paired(const torch::Tensor& z) {
    return {z, torch::arange(z.size(0), torch::TensorOptions().dtype(torch::kInt64).device(z.device()))};
  }
};

struct AggregateEstimates {
  torch::Tensor vec_idp;
  torch::Tensor tc_z;
  torch::Tensor tc_yz;
  torch::Tensor reg_z;
  torch::Tensor reg_y;
  torch::Tensor log_qz;                  // [S]   log q^(z_i)
  torch::Tensor log_qz_marginal_sum;     // [S]   sum_j log q^(z_ij)
};

/// Log-densities of the estimated aggregates at every evaluation point.
struct MwsDensities {
  torch::Tensor log_qz;        // [S]
  torch::Tensor log_qz_dims;   // [S, J]
  torch::Tensor log_qyz;       // [S, C]  log q^(y=c, z_i)
  torch::Tensor log_qy;        // [C]     log q^(y=c)
  torch::Tensor own_probs;     // [S, C]  psi of the source posterior
  torch::Tensor own_log_q;     // [S]     log q(z_i | x_s(i))
};

namespace detail {

inline torch::Tensor mws_log_weights(const torch::Tensor& source, int64_t batch, int64_t dataset,
                                     const torch::TensorOptions& opts) {
  const auto S = source.size(0);
  const double own = -std::log(static_cast<double>(dataset));
  if (batch == 1) return torch::full({S, 1}, own, opts);
  const double other = std::log(static_cast<double>(dataset - 1)) -
                       std::log(static_cast<double>(dataset)) -
                       std::log(static_cast<double>(batch - 1));
  auto w = torch::full({S, batch}, other, opts);
  const auto rows = torch::arange(S, torch::TensorOptions().dtype(torch::kInt64).device(source.device()));
  w.index_put_({rows, source}, own);
  return w;
}

inline void check_eval(const EvalPoints& eval, const BatchPosteriors& post) {
  post.validate();
  if (eval.z.dim() != 2 || eval.z.size(1) != post.gaussian.dims()) {
    throw DimensionError("aggregate: evaluation points must be [S, J]");
  }
  if (eval.source.dim() != 1 || eval.source.size(0) != eval.z.size(0)) {
    throw DimensionError("aggregate: one source index per evaluation point");
  }
}

}  // namespace detail

inline MwsDensities mws_densities(const EvalPoints& eval, const BatchPosteriors& post) {
  detail::check_eval(eval, post);
  const auto& mean = post.gaussian.mean;          // [M, J]
  const auto& logvar = post.gaussian.log_variance;
  // [S, M, J]: log q(z_ij | x_m)
  const auto log_q = gaussian_log_density(eval.z.unsqueeze(1), mean.unsqueeze(0), logvar.unsqueeze(0));
  const auto log_w = detail::mws_log_weights(eval.source, post.batch_size(), post.dataset_size,
                                             eval.z.options());   // [S, M]
  const auto log_q_joint = log_q.sum(-1);                          // [S, M]

  MwsDensities d;
  d.log_qz = torch::logsumexp(log_w + log_q_joint, 1);
  d.log_qz_dims = torch::logsumexp(log_w.unsqueeze(-1) + log_q, 1);
  const auto log_psi = torch::log(post.categorical.probs.clamp_min(1e-30));  // [M, C]
  d.log_qyz = torch::logsumexp((log_w + log_q_joint).unsqueeze(-1) + log_psi.unsqueeze(0), 1);
  const auto q_y = post.categorical.probs.mean(0);
  d.log_qy = torch::log(q_y.clamp_min(1e-30));
  d.own_probs = post.categorical.probs.index_select(0, eval.source);
  d.own_log_q = log_q_joint.gather(1, eval.source.unsqueeze(1)).squeeze(1);
  return d;
}

/// (log q^(z_i), sum_j log q^(z_ij)) for z_i drawn from posterior i.
inline std::pair<torch::Tensor, torch::Tensor> mws_log_density(const torch::Tensor& z,
                                                               const BatchPosteriors& post) {
  const auto d = mws_densities(EvalPoints::paired(z), post);
  return {d.log_qz, d.log_qz_dims.sum(-1)};
}

/// q(y) = (1/M) sum_m psi_m.
inline torch::Tensor exact_q_y(const BatchPosteriors& post) {
  post.validate();
  return post.categorical.probs.mean(0);
}

inline torch::Tensor vec_idp_from(const MwsDensities& d) {
  const auto ratio = d.log_qyz - d.log_qy.unsqueeze(0) - d.log_qz.unsqueeze(1);
  return (d.own_probs * ratio).sum(-1).mean();
}

inline torch::Tensor tc_z_from(const MwsDensities& d) {
  return (d.log_qz - d.log_qz_dims.sum(-1)).mean();
}

inline torch::Tensor tc_yz_from(const MwsDensities& d) {
  const auto ratio = d.log_qyz - d.log_qy.unsqueeze(0) - d.log_qz_dims.sum(-1, true);
  return (d.own_probs * ratio).sum(-1).mean();
}

inline torch::Tensor reg_z_from(const MwsDensities& d, const torch::Tensor& z) {
  return (d.log_qz_dims - standard_normal_log_density(z)).sum(-1).mean();
}

/// I(y,z; x): mean_i sum_c psi_i(c) [log psi_i(c) + log q(z_i|x_i) - log q^(y=c, z_i)].
inline torch::Tensor mi_data_latent_from(const MwsDensities& d) {
  const auto inner = torch::xlogy(d.own_probs, d.own_probs) + d.own_probs * (d.own_log_q.unsqueeze(1) - d.log_qyz);
  return inner.sum(-1).mean();
}

inline torch::Tensor reg_y_from(const BatchPosteriors& post) {
  return categorical_kl_uniform({exact_q_y(post).unsqueeze(0)}).squeeze(0);
}

/// KL(q(y,z) || q(y) q(z)).
inline torch::Tensor estimate_vec_idp(const EvalPoints& eval, const BatchPosteriors& post) {
  return vec_idp_from(mws_densities(eval, post));
}
inline torch::Tensor estimate_vec_idp(const torch::Tensor& z, const BatchPosteriors& post) {
  return estimate_vec_idp(EvalPoints::paired(z), post);
}

/// KL(q(z) || prod_j q(z_j)).
inline torch::Tensor estimate_tc_z(const EvalPoints& eval, const BatchPosteriors& post) {
  return tc_z_from(mws_densities(eval, post));
}
inline torch::Tensor estimate_tc_z(const torch::Tensor& z, const BatchPosteriors& post) {
  return estimate_tc_z(EvalPoints::paired(z), post);
}

/// KL(q(y,z) || q(y) prod_j q(z_j)).
inline torch::Tensor estimate_tc_yz(const EvalPoints& eval, const BatchPosteriors& post) {
  return tc_yz_from(mws_densities(eval, post));
}
inline torch::Tensor estimate_tc_yz(const torch::Tensor& z, const BatchPosteriors& post) {
  return estimate_tc_yz(EvalPoints::paired(z), post);
}

/// (sum_j KL(q(z_j) || p(z_j)), KL(q(y) || p(y))); the y term is exact.
inline std::pair<torch::Tensor, torch::Tensor> estimate_reg_terms(const EvalPoints& eval,
                                                                  const BatchPosteriors& post) {
  return {reg_z_from(mws_densities(eval, post), eval.z), reg_y_from(post)};
}
inline std::pair<torch::Tensor, torch::Tensor> estimate_reg_terms(const torch::Tensor& z,
                                                                  const BatchPosteriors& post) {
  return estimate_reg_terms(EvalPoints::paired(z), post);
}

/// Every estimate from a single density pass.
inline AggregateEstimates estimate_all(const EvalPoints& eval, const BatchPosteriors& post) {
  const auto d = mws_densities(eval, post);
  AggregateEstimates e;
  e.vec_idp = vec_idp_from(d);
  e.tc_z = tc_z_from(d);
  e.tc_yz = tc_yz_from(d);
  e.reg_z = reg_z_from(d, eval.z);
  e.reg_y = reg_y_from(post);
  e.log_qz = d.log_qz;
  e.log_qz_marginal_sum = d.log_qz_dims.sum(-1);
  return e;
}
inline AggregateEstimates estimate_all(const torch::Tensor& z, const BatchPosteriors& post) {
  return estimate_all(EvalPoints::paired(z), post);
}

/// Evaluation-only estimate of I(z; x): mean_i [log q(z_i|x_i) - log q^(z_i)].
inline torch::Tensor estimate_mi_data_latent(const torch::Tensor& z, const BatchPosteriors& post) {
  const auto d = mws_densities(EvalPoints::paired(z), post);
  return (d.own_log_q - d.log_qz).mean();
}

}  // namespace ivvae
