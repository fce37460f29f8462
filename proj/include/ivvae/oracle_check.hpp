#pragma once

// Every enumeration-backed identity in one pass, with residuals and
// tolerances collected into a JSON report.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ivvae/oracle.hpp"
#include "ivvae/oracle_calibration.hpp"

namespace ivvae::oracle {

struct OracleCheckOptions {
  uint64_t seed = 0;
  int random_joints = 100;
  int64_t calibration_samples = 10000;
  int calibration_seeds = 3;
  double calibration_tolerance = 0.02;  // relative
};

struct ResidualCheck {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  std::string comparison = "<";  // value < tolerance, or ">" for lower bounds

  bool pass() const {
    if (!std::isfinite(value)) return false;
    return comparison == "<" ? value < tolerance : value > tolerance;
  }
};

struct OracleCheckReport {
  OracleCheckOptions options;
  std::vector<ResidualCheck> checks;

  bool pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const ResidualCheck& c) { return c.pass(); });
  }

  nlohmann::json to_json() const {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& c : checks) {
      list.push_back({{"name", c.name},
                      {"value", std::isfinite(c.value) ? nlohmann::json(c.value) : nlohmann::json()},
                      {"comparison", c.comparison},
                      {"tolerance", c.tolerance},
                      {"pass", c.pass()}});
    }
    return {{"pass", pass()},
            {"seed", options.seed},
            {"random_joints", options.random_joints},
            {"calibration_samples", options.calibration_samples},
            {"calibration_seeds", options.calibration_seeds},
            {"checks", list}};
  }
};

inline OracleCheckReport run_oracle_check(const OracleCheckOptions& opt = {}) {
  if (opt.random_joints < 1 || opt.calibration_seeds < 1 || opt.calibration_samples < 1) {
    throw ConfigError("oracle-check: counts must be positive");
  }
  OracleCheckReport rep{opt, {}};
  auto add = [&](std::string name, double value, double tol, std::string cmp = "<") {
    rep.checks.push_back({std::move(name), value, tol, std::move(cmp)});
  };
  std::mt19937_64 rng(opt.seed);
  const JointShape shape{{3}, 2, QuadratureGrid{-6.0, 6.0, 41}};

  double decomposition = 0, chain = 0, negative = 0, split_gap = 0, contrapositive = INFINITY;
  for (int t = 0; t < opt.random_joints; ++t) {
    const auto joint = random_joint(rng, 4, shape);
    const auto r = exact_decomposition(joint);
    decomposition = std::max(decomposition, std::abs(r.decomposition_residual));
    chain = std::max(chain, std::abs(r.chain_residual));
    negative = std::max(negative, -std::min(0.0, r.min_term()));
    split_gap = std::max(split_gap, std::abs(check_collective_tc_split(joint) - r.vec_idp));
    if (r.vec_idp > 1e-6) contrapositive = std::min(contrapositive, r.tc_yz / r.vec_idp);
  }
  add("decomposition_residual_max", decomposition, 1e-6);
  add("chain_residual_max", chain, 1e-9);
  add("negative_kl_term_max", negative, 1e-12);
  add("collective_tc_gap_equals_vec_idp_max", split_gap, 1e-9);
  add("tc_yz_over_vec_idp_min", contrapositive, 1.0 - 1e-9, ">");

  double product_split = 0, vanishing = 0;
  for (int t = 0; t < 10; ++t) {
    vanishing = std::max(vanishing, [&] {
      const auto r = exact_decomposition(fully_independent_joint(rng, 2, shape));
      return std::max({r.tc_yz, r.tc_y, r.tc_z, r.vec_idp});
    }());
    product_split = std::max(product_split, check_collective_tc_split(product_form_joint(rng, 2, 2, shape)));
  }
  add("collective_tc_split_product_form_max", product_split, 1e-9);
  add("vanishing_tc_independent_max_term", vanishing, 1e-9);

  {
    const QuadratureGrid grid{-6.0, 6.0, 21};
    const auto gen = random_generative_table(rng, 2, 2, 1, grid);
    const auto tight = evidence_bound(gen, true_posterior(gen));
    double equality = 0, violation = -INFINITY;
    for (std::size_t x = 0; x < gen.num_x; ++x) equality = std::max(equality, std::abs(tight.elbo[x] - tight.log_evidence[x]));
    for (int t = 0; t < 50; ++t) {
      std::vector<double> post;
      for (std::size_t x = 0; x < gen.num_x; ++x) {
        const auto row = dirichlet(rng, gen.prior_latent.size());
        post.insert(post.end(), row.begin(), row.end());
      }
      const auto b = evidence_bound(gen, post);
      for (std::size_t x = 0; x < gen.num_x; ++x) violation = std::max(violation, b.elbo[x] - b.log_evidence[x]);
    }
    add("elbo_gap_at_true_posterior", equality, 1e-12);
    add("elbo_minus_log_evidence_max", violation, 0.0);
  }

  for (int J : {1, 2}) {
    const auto joint = calibration_joint(J);
    double worst = 0, identity = 0;
    for (int s = 0; s < opt.calibration_seeds; ++s) {
      const auto c = calibrate_estimators(joint, {opt.calibration_samples}, opt.seed + static_cast<uint64_t>(s));
      const auto& e = c.points[0].median_rel_error;
      worst = std::max({worst, e.vec_idp, e.tc_z, e.tc_yz, e.reg_z, e.reg_y});
      identity = std::max(identity, c.points[0].max_identity_residual);
    }
    const auto tag = "_J" + std::to_string(J);
    add("estimator_relative_error_max" + tag, worst, opt.calibration_tolerance);
    add("estimator_chain_residual_max" + tag, identity, 1e-9);
  }
  return rep;
}

}  // namespace ivvae::oracle
