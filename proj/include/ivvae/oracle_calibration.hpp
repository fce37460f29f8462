#pragma once

// Runs the minibatch aggregate estimators on batches drawn from a TinyJoint
// and compares them with the enumerated values.
//
// The batch is the whole support: posterior m is q(.|x_m) and the dataset size
// is N_x, so the estimated mixture is the true aggregate when q(x) is uniform.
// Evaluation points are drawn from the continuous Gaussians q(z|x) with sources
// cycling through the support, which keeps every x equally represented.

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ivvae/aggregate.hpp"
#include "ivvae/oracle.hpp"

namespace ivvae::oracle {

struct EstimatorValues {
  double vec_idp = 0.0;
  double tc_z = 0.0;
  double tc_yz = 0.0;
  double reg_z = 0.0;
  double reg_y = 0.0;
};

struct CalibrationPoint {
  int64_t samples = 0;
  EstimatorValues median_abs_error;
  EstimatorValues median_rel_error;  // relative to |truth|; absolute when truth is ~0
  double max_identity_residual = 0.0;  // |tc_yz - vec_idp - tc_z| over all repeats
};

struct CalibrationCurve {
  EstimatorValues truth;
  std::vector<CalibrationPoint> points;
};

inline EstimatorValues exact_values(const TinyJoint& joint) {
  const auto r = exact_decomposition(joint);
  return {r.vec_idp, r.tc_z, r.tc_yz, r.reg_z, r.reg_y};
}

/// The joint's support as a full batch (float64).
inline BatchPosteriors support_batch(const TinyJoint& joint) {
  joint.validate();
  if (joint.y_cardinalities.size() != 1) {
    throw ValidationError("support_batch: the estimators handle a single class latent");
  }
  if (joint.z_means.empty()) {
    throw ValidationError("support_batch: joint has no Gaussian parameters behind its z-tables");
  }
  const auto nx = static_cast<int64_t>(joint.num_x());
  for (double q : joint.q_x) {
    if (std::abs(q * static_cast<double>(nx) - 1.0) > 1e-12) {
      throw ValidationError("support_batch: full-support batches need a uniform q(x)");
    }
  }
  const auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  const int64_t J = joint.z_dims;
  const int64_t C = joint.y_cardinalities[0];
  auto mean = torch::tensor(joint.z_means, opts).view({nx, J});
  auto logvar = torch::tensor(joint.z_variances, opts).log().view({nx, J});
  auto probs = torch::tensor(joint.q_y_given_x, opts).view({nx, C});
  return {{mean, logvar}, {probs}, nx};
}

/// `samples` evaluation points, source i mod N_x, z ~ q(z|x_source). With
/// `stratified` the standard-normal noise of each source is a Latin hypercube:
/// one draw per equal-probability stratum in every coordinate, strata paired
/// across coordinates by independent random permutations.
inline EvalPoints draw_eval_points(const BatchPosteriors& batch, int64_t samples,
                                   torch::Generator& gen, bool stratified = true) {
  const auto opts = batch.gaussian.mean.options();
  const int64_t M = batch.batch_size();
  const int64_t J = batch.gaussian.dims();
  auto source = torch::arange(samples, torch::TensorOptions().dtype(torch::kInt64)) % M;
  torch::Tensor noise;
  if (!stratified) {
    noise = torch::randn({samples, J}, gen, opts);
  } else {
    noise = torch::empty({samples, J}, opts);
    for (int64_t m = 0; m < std::min(M, samples); ++m) {
      const auto rows = torch::arange(m, samples, M, torch::TensorOptions().dtype(torch::kInt64));
      const int64_t n = rows.size(0);
      auto block = torch::empty({n, J}, opts);
      for (int64_t j = 0; j < J; ++j) {
        const auto strata = torch::randperm(n, gen, opts);
        const auto u = (strata + torch::rand({n}, gen, opts)) / static_cast<double>(n);
        block.select(1, j).copy_(torch::special::ndtri(u.clamp(1e-300, 1.0 - 1e-16)));
      }
      noise.index_copy_(0, rows, block);
    }
  }
  const auto mean = batch.gaussian.mean.index_select(0, source);
  const auto logvar = batch.gaussian.log_variance.index_select(0, source);
  return {gaussian_rsample({mean, logvar}, noise), source};
}

inline EstimatorValues to_values(const AggregateEstimates& e) {
  return {e.vec_idp.item<double>(), e.tc_z.item<double>(), e.tc_yz.item<double>(),
          e.reg_z.item<double>(), e.reg_y.item<double>()};
}

namespace detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double relative(double err, double truth) {
  return std::abs(truth) > 1e-12 ? err / std::abs(truth) : err;
}

}  // namespace detail

/// Error curves of every estimator against the enumerated truth, with
/// medians over `repeats` independent draws per sample count.
inline CalibrationCurve calibrate_estimators(const TinyJoint& joint,
                                             const std::vector<int64_t>& sample_counts,
                                             uint64_t seed = 0, int repeats = 1,
                                             bool stratified = true) {
  if (repeats < 1) throw ConfigError("calibrate_estimators: repeats must be positive");
  const auto batch = support_batch(joint);
  CalibrationCurve curve;
  curve.truth = exact_values(joint);
  const auto& t = curve.truth;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  torch::NoGradGuard no_grad;
  for (int64_t s : sample_counts) {
    if (s < 1) throw ConfigError("calibrate_estimators: sample counts must be positive");
    std::vector<double> ev, et, ey, er, eg;
    CalibrationPoint point;
    point.samples = s;
    for (int r = 0; r < repeats; ++r) {
      const auto est = estimate_all(draw_eval_points(batch, s, gen, stratified), batch);
      const auto v = to_values(est);
      ev.push_back(std::abs(v.vec_idp - t.vec_idp));
      et.push_back(std::abs(v.tc_z - t.tc_z));
      ey.push_back(std::abs(v.tc_yz - t.tc_yz));
      er.push_back(std::abs(v.reg_z - t.reg_z));
      eg.push_back(std::abs(v.reg_y - t.reg_y));
      point.max_identity_residual =
          std::max(point.max_identity_residual, std::abs(v.tc_yz - v.vec_idp - v.tc_z));
    }
    auto& a = point.median_abs_error;
    a = {detail::median(ev), detail::median(et), detail::median(ey), detail::median(er),
         detail::median(eg)};
    point.median_rel_error = {detail::relative(a.vec_idp, t.vec_idp), detail::relative(a.tc_z, t.tc_z),
                              detail::relative(a.tc_yz, t.tc_yz), detail::relative(a.reg_z, t.reg_z),
                              detail::relative(a.reg_y, t.reg_y)};
    curve.points.push_back(point);
  }
  return curve;
}

/// Uniform-q(x) joint used for calibration: x = (class, style) pairs where the
/// class drives both psi and the first z coordinate, and the second coordinate
/// copies the first up to noise, so VecIdp, TC_z and Reg terms are all sizeable.
inline TinyJoint calibration_joint(int z_dims = 2, QuadratureGrid grid = {-9.0, 9.0, 121}) {
  if (z_dims < 1 || z_dims > 2) throw DimensionError("calibration_joint: J must be 1 or 2");
  const int classes = 3;
  const double centers[3] = {-2.0, 0.0, 2.0};
  const double offsets[2] = {-0.6, 0.6};
  std::vector<double> q_x, qy, means, vars;
  for (int c = 0; c < classes; ++c)
    for (double o : offsets) {
      q_x.push_back(1.0 / (classes * 2));
      // class 0 is favoured everywhere so q(y) is not uniform
      const double row[3] = {c == 0 ? 0.85 : 0.25, c == 1 ? 0.65 : 0.05, c == 2 ? 0.7 : 0.1};
      const double total = row[0] + row[1] + row[2];
      for (double v : row) qy.push_back(v / total);
      means.push_back(centers[c] + o);
      vars.push_back(0.5);
      if (z_dims == 2) {
        means.push_back(centers[c] + 0.5 * o);
        vars.push_back(0.7);
      }
    }
  return make_joint(q_x, {{classes}, z_dims, grid}, qy, means, vars);
}

}  // namespace ivvae::oracle
