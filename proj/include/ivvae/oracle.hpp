#pragma once

// Exact enumeration of aggregate-posterior KL quantities on tiny models.
//
// Continuous z is replaced by a fixed trapezoidal grid: every conditional
// density q(z_j|x) and the prior p(z_j) becomes a normalized probability mass
// vector over the grid nodes. All identities below then hold exactly up to
// floating-point summation, while the individual terms approximate their
// continuous counterparts to quadrature accuracy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ivvae/error.hpp"

namespace ivvae::oracle {

inline constexpr std::size_t kEnumerabilityBound = 10'000'000;

struct QuadratureGrid {
  double lo = -6.0;
  double hi = 6.0;
  int points = 41;

  std::vector<double> nodes() const {
    std::vector<double> out(static_cast<std::size_t>(points));
    const double step = (hi - lo) / (points - 1);
    for (int g = 0; g < points; ++g) out[g] = lo + step * g;
    return out;
  }

  std::vector<double> weights() const {
    std::vector<double> out(static_cast<std::size_t>(points), (hi - lo) / (points - 1));
    out.front() *= 0.5;
    out.back() *= 0.5;
    return out;
  }
};

/// Normalized grid masses of N(mean, variance) under trapezoidal quadrature.
inline std::vector<double> gaussian_grid_masses(const QuadratureGrid& grid, double mean,
                                                double variance) {
  if (!(variance > 0.0) || !std::isfinite(mean)) {
    throw NumericError("gaussian_grid_masses: invalid Gaussian parameters");
  }
  const auto nodes = grid.nodes();
  const auto w = grid.weights();
  std::vector<double> m(nodes.size());
  double total = 0.0;
  for (std::size_t g = 0; g < nodes.size(); ++g) {
    const double d = nodes[g] - mean;
    m[g] = w[g] * std::exp(-0.5 * d * d / variance) / std::sqrt(2.0 * std::numbers::pi * variance);
    total += m[g];
  }
  for (auto& v : m) v /= total;
  return m;
}

/// Dense probability table over a product of finite axes, row-major.
struct DiscreteTable {
  std::vector<int> shape;
  std::vector<double> p;

  std::size_t size() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }

  double total() const { return std::accumulate(p.begin(), p.end(), 0.0); }

  /// Marginal over the listed axes (in the listed order).
  DiscreteTable marginal(const std::vector<int>& axes) const;
};

namespace detail {

// Row-major strides of `shape` restricted to `axes`; zero for every other axis.
inline std::vector<std::size_t> projected_strides(const std::vector<int>& shape,
                                                  const std::vector<int>& axes) {
  std::vector<std::size_t> strides(shape.size(), 0);
  std::size_t s = 1;
  for (auto it = axes.rbegin(); it != axes.rend(); ++it) {
    strides[static_cast<std::size_t>(*it)] = s;
    s *= static_cast<std::size_t>(shape[static_cast<std::size_t>(*it)]);
  }
  return strides;
}

// Visits every cell of `shape` in row-major order, passing the linear index and
// for each projection the index into the projected (sub-)table.
inline void for_each_cell(const std::vector<int>& shape,
                          const std::vector<std::vector<std::size_t>>& projections,
                          const std::function<void(std::size_t, std::span<const std::size_t>)>& fn) {
  const std::size_t rank = shape.size();
  std::size_t total = 1;
  for (int s : shape) total *= static_cast<std::size_t>(s);
  std::vector<int> idx(rank, 0);
  std::vector<std::size_t> offsets(projections.size(), 0);
  for (std::size_t lin = 0; lin < total; ++lin) {
    fn(lin, offsets);
    for (std::size_t a = rank; a-- > 0;) {
      ++idx[a];
      for (std::size_t f = 0; f < projections.size(); ++f) offsets[f] += projections[f][a];
      if (idx[a] < shape[a]) break;
      for (std::size_t f = 0; f < projections.size(); ++f) {
        offsets[f] -= projections[f][a] * static_cast<std::size_t>(shape[a]);
      }
      idx[a] = 0;
    }
  }
}

inline double xlogy_ratio(double p, double q) {
  if (p <= 0.0) return 0.0;
  return p * std::log(p / q);
}

}  // namespace detail

inline DiscreteTable DiscreteTable::marginal(const std::vector<int>& axes) const {
  DiscreteTable out;
  for (int a : axes) {
    if (a < 0 || a >= static_cast<int>(shape.size())) {
      throw DimensionError("DiscreteTable::marginal: axis out of range");
    }
    out.shape.push_back(shape[static_cast<std::size_t>(a)]);
  }
  out.p.assign(out.size(), 0.0);
  detail::for_each_cell(shape, {detail::projected_strides(shape, axes)},
                        [&](std::size_t lin, std::span<const std::size_t> off) {
                          out.p[off[0]] += p[lin];
                        });
  return out;
}

/// A factor of a reference distribution: a table over a subset of axes.
struct Factor {
  std::vector<int> axes;
  std::vector<double> values;  // row-major over `axes`
};

/// KL( table || prod_f factor_f ).
inline double kl_to_factorized(const DiscreteTable& table, const std::vector<Factor>& factors) {
  std::vector<std::vector<std::size_t>> proj;
  proj.reserve(factors.size());
  for (const auto& f : factors) proj.push_back(detail::projected_strides(table.shape, f.axes));
  double kl = 0.0;
  detail::for_each_cell(table.shape, proj, [&](std::size_t lin, std::span<const std::size_t> off) {
    const double p = table.p[lin];
    if (p <= 0.0) return;
    double q = 1.0;
    for (std::size_t f = 0; f < factors.size(); ++f) q *= factors[f].values[off[f]];
    kl += p * std::log(p / q);
  });
  return kl;
}

/// KL( table || prod_g marginal_g ), i.e. the independence KL between groups of
/// axes. With singleton groups this is a total correlation; with one group per
/// latent vector it is the multi-vector independence KL.
inline double group_independence_kl(const DiscreteTable& table,
                                    const std::vector<std::vector<int>>& groups) {
  std::vector<Factor> factors;
  factors.reserve(groups.size());
  for (const auto& g : groups) factors.push_back({g, table.marginal(g).p});
  return kl_to_factorized(table, factors);
}

inline double categorical_kl(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DimensionError("categorical_kl: size mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) kl += detail::xlogy_ratio(p[i], q[i]);
  return kl;
}

/// Enumerable stand-in for (q(x), q(y|x), q(z|x), p(y), p(z)).
///
/// y is a tuple of K categorical variables with cardinalities `y_cardinalities`;
/// `q_y_given_x` holds, for every x, a full table over the product space (so
/// per-x dependence between the y_k is allowed). z has `z_dims` coordinates
/// with diagonal conditionals stored as per-dimension grid masses.
struct TinyJoint {
  std::vector<double> q_x;
  std::vector<int> y_cardinalities;
  std::vector<double> q_y_given_x;  // [N_x][|Y|]
  int z_dims = 1;
  QuadratureGrid grid;
  std::vector<double> q_z_given_x;  // [N_x][J][G]
  std::vector<std::vector<double>> p_y;  // per-k prior
  std::vector<double> p_z;               // [G], shared by all coordinates

  // Gaussian parameters behind q_z_given_x, kept for estimator calibration.
  std::vector<double> z_means;      // [N_x][J]
  std::vector<double> z_variances;  // [N_x][J]

  std::size_t num_x() const { return q_x.size(); }
  std::size_t y_size() const {
    std::size_t s = 1;
    for (int c : y_cardinalities) s *= static_cast<std::size_t>(c);
    return s;
  }
  std::size_t num_grid() const { return static_cast<std::size_t>(grid.points); }
  std::size_t table_size() const {
    std::size_t s = num_x() * y_size();
    for (int j = 0; j < z_dims; ++j) s *= num_grid();
    return s;
  }

  /// Throws if tables are malformed or the joint exceeds the enumerability bound.
  void validate() const {
    const std::size_t nx = num_x();
    if (nx == 0 || y_cardinalities.empty() || z_dims < 1) {
      throw DimensionError("TinyJoint: empty support");
    }
    if (q_y_given_x.size() != nx * y_size()) throw DimensionError("TinyJoint: q(y|x) size");
    if (q_z_given_x.size() != nx * static_cast<std::size_t>(z_dims) * num_grid()) {
      throw DimensionError("TinyJoint: q(z|x) size");
    }
    if (p_y.size() != y_cardinalities.size() || p_z.size() != num_grid()) {
      throw DimensionError("TinyJoint: prior size");
    }
    // Rough size first to avoid overflow in table_size().
    double approx = static_cast<double>(nx) * static_cast<double>(y_size()) *
                    std::pow(static_cast<double>(num_grid()), z_dims);
    if (approx > static_cast<double>(kEnumerabilityBound)) {
      throw EnumerabilityError("TinyJoint: " + std::to_string(approx) +
                               " cells exceed the enumerability bound");
    }
    auto check_norm = [](std::span<const double> v, double tol, const char* what) {
      double s = 0.0;
      for (double x : v) {
        if (!(x >= 0.0) || !std::isfinite(x)) throw NumericError(std::string("TinyJoint: ") + what);
        s += x;
      }
      if (std::abs(s - 1.0) > tol) throw NumericError(std::string("TinyJoint: unnormalized ") + what);
    };
    check_norm(q_x, 1e-12, "q(x)");
    for (std::size_t x = 0; x < nx; ++x) {
      check_norm(std::span(q_y_given_x).subspan(x * y_size(), y_size()), 1e-12, "q(y|x)");
      for (int j = 0; j < z_dims; ++j) {
        check_norm(std::span(q_z_given_x).subspan((x * z_dims + j) * num_grid(), num_grid()), 1e-6,
                   "q(z|x)");
      }
    }
    for (std::size_t k = 0; k < p_y.size(); ++k) {
      if (p_y[k].size() != static_cast<std::size_t>(y_cardinalities[k])) {
        throw DimensionError("TinyJoint: p(y_k) size");
      }
      check_norm(p_y[k], 1e-12, "p(y)");
    }
    check_norm(p_z, 1e-6, "p(z)");
  }

  /// Full table over axes [x, y_1..y_K, z_1..z_J].
  DiscreteTable full_table() const {
    validate();
    DiscreteTable t;
    t.shape.push_back(static_cast<int>(num_x()));
    for (int c : y_cardinalities) t.shape.push_back(c);
    for (int j = 0; j < z_dims; ++j) t.shape.push_back(grid.points);
    t.p.assign(t.size(), 0.0);
    const std::size_t ny = y_size();
    std::size_t nz = 1;
    for (int j = 0; j < z_dims; ++j) nz *= num_grid();
    std::vector<double> qz(nz);
    for (std::size_t x = 0; x < num_x(); ++x) {
      // product of per-dimension masses, z_J fastest
      for (std::size_t zi = 0; zi < nz; ++zi) {
        std::size_t rem = zi;
        double v = 1.0;
        for (int j = z_dims - 1; j >= 0; --j) {
          const std::size_t g = rem % num_grid();
          rem /= num_grid();
          v *= q_z_given_x[(x * z_dims + j) * num_grid() + g];
        }
        qz[zi] = v;
      }
      for (std::size_t y = 0; y < ny; ++y) {
        const double pxy = q_x[x] * q_y_given_x[x * ny + y];
        double* dst = t.p.data() + (x * ny + y) * nz;
        for (std::size_t zi = 0; zi < nz; ++zi) dst[zi] = pxy * qz[zi];
      }
    }
    return t;
  }

  int x_axis() const { return 0; }
  std::vector<int> y_axes() const {
    std::vector<int> a(y_cardinalities.size());
    std::iota(a.begin(), a.end(), 1);
    return a;
  }
  std::vector<int> z_axes() const {
    std::vector<int> a(static_cast<std::size_t>(z_dims));
    std::iota(a.begin(), a.end(), 1 + static_cast<int>(y_cardinalities.size()));
    return a;
  }
};

struct DecompositionReport {
  double kl_total = 0.0;        // E_x KL(q(y,z|x) || p(y)p(z))
  double mi_data_latent = 0.0;  // I(y,z; x)
  double vec_idp = 0.0;         // KL(q(y,z) || q(y)q(z))
  double tc_y = 0.0;
  double tc_z = 0.0;
  double reg_y = 0.0;
  double reg_z = 0.0;
  double tc_yz = 0.0;
  double decomposition_residual = 0.0;  // kl_total - (mi + vec_idp + tc_y + reg_y + tc_z + reg_z)
  double chain_residual = 0.0;          // tc_yz - (vec_idp + tc_y + tc_z)

  double min_term() const {
    return std::min({kl_total, mi_data_latent, vec_idp, tc_y, tc_z, reg_y, reg_z, tc_yz});
  }
};

inline DecompositionReport exact_decomposition(const TinyJoint& joint) {
  const DiscreteTable t = joint.full_table();
  const auto ya = joint.y_axes();
  const auto za = joint.z_axes();
  std::vector<int> yz = ya;
  yz.insert(yz.end(), za.begin(), za.end());

  DecompositionReport r;

  std::vector<Factor> reference{{{joint.x_axis()}, joint.q_x}};
  for (std::size_t k = 0; k < ya.size(); ++k) reference.push_back({{ya[k]}, joint.p_y[k]});
  for (int a : za) reference.push_back({{a}, joint.p_z});
  r.kl_total = kl_to_factorized(t, reference);

  r.mi_data_latent = group_independence_kl(t, {{joint.x_axis()}, yz});

  // Work on the (y, z) marginal; its axes are renumbered 0..K+J-1.
  const DiscreteTable q_yz = t.marginal(yz);
  const int K = static_cast<int>(ya.size());
  const int J = joint.z_dims;
  std::vector<int> y_local(static_cast<std::size_t>(K)), z_local(static_cast<std::size_t>(J));
  std::iota(y_local.begin(), y_local.end(), 0);
  std::iota(z_local.begin(), z_local.end(), K);
  std::vector<std::vector<int>> singletons;
  for (int a = 0; a < K + J; ++a) singletons.push_back({a});

  r.vec_idp = group_independence_kl(q_yz, {y_local, z_local});
  r.tc_yz = group_independence_kl(q_yz, singletons);

  const DiscreteTable q_y = q_yz.marginal(y_local);
  const DiscreteTable q_z = q_yz.marginal(z_local);
  {
    std::vector<std::vector<int>> ys;
    for (int k = 0; k < K; ++k) ys.push_back({k});
    r.tc_y = K == 1 ? 0.0 : group_independence_kl(q_y, ys);
    std::vector<std::vector<int>> zs;
    for (int j = 0; j < J; ++j) zs.push_back({j});
    r.tc_z = J == 1 ? 0.0 : group_independence_kl(q_z, zs);
  }
  for (int k = 0; k < K; ++k) r.reg_y += categorical_kl(q_y.marginal({k}).p, joint.p_y[k]);
  for (int j = 0; j < J; ++j) r.reg_z += categorical_kl(q_z.marginal({j}).p, joint.p_z);

  r.decomposition_residual =
      r.kl_total - (r.mi_data_latent + r.vec_idp + r.tc_y + r.reg_y + r.tc_z + r.reg_z);
  r.chain_residual = r.tc_yz - (r.vec_idp + r.tc_y + r.tc_z);
  return r;
}

/// |TC_yz - (TC_y + TC_z)|; zero whenever q(y,z) = q(y)q(z).
inline double check_collective_tc_split(const TinyJoint& joint) {
  const auto r = exact_decomposition(joint);
  return std::abs(r.tc_yz - (r.tc_y + r.tc_z));
}

struct VanishingTcCheck {
  double tc_yz = 0.0;
  bool tc_y_vanishes = false;
  bool tc_z_vanishes = false;
  bool vec_idp_vanishes = false;

  bool all() const { return tc_y_vanishes && tc_z_vanishes && vec_idp_vanishes; }
};

inline VanishingTcCheck check_vanishing_tc(const TinyJoint& joint, double tolerance = 1e-9) {
  const auto r = exact_decomposition(joint);
  return {r.tc_yz, r.tc_y < tolerance, r.tc_z < tolerance, r.vec_idp < tolerance};
}

// ---------------------------------------------------------------------------
// Joint construction

struct JointShape {
  std::vector<int> y_cardinalities{3};
  int z_dims = 2;
  QuadratureGrid grid{};
};

inline std::vector<double> standard_normal_grid(const QuadratureGrid& grid) {
  return gaussian_grid_masses(grid, 0.0, 1.0);
}

inline std::vector<std::vector<double>> uniform_y_prior(const std::vector<int>& cards) {
  std::vector<std::vector<double>> p;
  for (int c : cards) p.emplace_back(static_cast<std::size_t>(c), 1.0 / c);
  return p;
}

/// Builds a joint from explicit tables and per-x diagonal Gaussian parameters.
inline TinyJoint make_joint(std::vector<double> q_x, const JointShape& shape,
                            std::vector<double> q_y_given_x, std::vector<double> z_means,
                            std::vector<double> z_variances) {
  TinyJoint j;
  j.q_x = std::move(q_x);
  j.y_cardinalities = shape.y_cardinalities;
  j.q_y_given_x = std::move(q_y_given_x);
  j.z_dims = shape.z_dims;
  j.grid = shape.grid;
  const std::size_t nx = j.q_x.size();
  if (z_means.size() != nx * static_cast<std::size_t>(shape.z_dims) ||
      z_variances.size() != z_means.size()) {
    throw DimensionError("make_joint: Gaussian parameter size");
  }
  j.q_z_given_x.reserve(nx * shape.z_dims * j.num_grid());
  for (std::size_t i = 0; i < z_means.size(); ++i) {
    const auto m = gaussian_grid_masses(j.grid, z_means[i], z_variances[i]);
    j.q_z_given_x.insert(j.q_z_given_x.end(), m.begin(), m.end());
  }
  j.z_means = std::move(z_means);
  j.z_variances = std::move(z_variances);
  j.p_y = uniform_y_prior(j.y_cardinalities);
  j.p_z = standard_normal_grid(j.grid);
  j.validate();
  return j;
}

inline std::vector<double> dirichlet(std::mt19937_64& rng, std::size_t n, double concentration = 1.0) {
  std::gamma_distribution<double> gamma(concentration, 1.0);
  std::vector<double> v(n);
  double s = 0.0;
  for (auto& x : v) {
    x = gamma(rng);
    s += x;
  }
  for (auto& x : v) x /= s;
  return v;
}

namespace detail {

inline void draw_gaussian(std::mt19937_64& rng, double& mean, double& variance) {
  std::uniform_real_distribution<double> mu(-2.0, 2.0);
  std::uniform_real_distribution<double> log_var(std::log(0.25), std::log(4.0));
  mean = mu(rng);
  variance = std::exp(log_var(rng));
}

// Full table over the y product space from independent per-k conditionals.
inline std::vector<double> product_y_table(std::mt19937_64& rng, const std::vector<int>& cards) {
  std::vector<double> table{1.0};
  for (int c : cards) {
    const auto pk = dirichlet(rng, static_cast<std::size_t>(c));
    std::vector<double> next;
    next.reserve(table.size() * pk.size());
    for (double a : table)
      for (double b : pk) next.push_back(a * b);
    table = std::move(next);
  }
  return table;
}

}  // namespace detail

/// Random joint: Dirichlet q(x) and q(y|x); Gaussian q(z|x) with mean in
/// [-2,2] and log-uniform variance in [0.25,4].
inline TinyJoint random_joint(std::mt19937_64& rng, int num_x, const JointShape& shape) {
  const auto q_x = dirichlet(rng, static_cast<std::size_t>(num_x));
  std::vector<double> qy, means, vars;
  for (int x = 0; x < num_x; ++x) {
    const auto row = detail::product_y_table(rng, shape.y_cardinalities);
    qy.insert(qy.end(), row.begin(), row.end());
    for (int j = 0; j < shape.z_dims; ++j) {
      double m = 0.0, v = 1.0;
      detail::draw_gaussian(rng, m, v);
      means.push_back(m);
      vars.push_back(v);
    }
  }
  return make_joint(q_x, shape, std::move(qy), std::move(means), std::move(vars));
}

/// x = (a, b) with q(x) = q(a)q(b); q(y|x) depends on a only and q(z|x) on b
/// only, so q(y,z) = q(y)q(z) exactly.
inline TinyJoint product_form_joint(std::mt19937_64& rng, int num_a, int num_b,
                                    const JointShape& shape) {
  const auto qa = dirichlet(rng, static_cast<std::size_t>(num_a));
  const auto qb = dirichlet(rng, static_cast<std::size_t>(num_b));
  std::vector<std::vector<double>> y_rows;
  for (int a = 0; a < num_a; ++a) y_rows.push_back(detail::product_y_table(rng, shape.y_cardinalities));
  std::vector<double> mb, vb;
  for (int b = 0; b < num_b; ++b)
    for (int j = 0; j < shape.z_dims; ++j) {
      double m = 0.0, v = 1.0;
      detail::draw_gaussian(rng, m, v);
      mb.push_back(m);
      vb.push_back(v);
    }
  std::vector<double> q_x, qy, means, vars;
  for (int a = 0; a < num_a; ++a)
    for (int b = 0; b < num_b; ++b) {
      q_x.push_back(qa[a] * qb[b]);
      qy.insert(qy.end(), y_rows[a].begin(), y_rows[a].end());
      for (int j = 0; j < shape.z_dims; ++j) {
        means.push_back(mb[b * shape.z_dims + j]);
        vars.push_back(vb[b * shape.z_dims + j]);
      }
    }
  return make_joint(q_x, shape, std::move(qy), std::move(means), std::move(vars));
}

/// x = (a_1..a_K, b_1..b_J) with independent components; y_k depends only on
/// a_k and z_j only on b_j, so every latent variable is independent of every
/// other under the aggregate posterior (collective TC is zero).
inline TinyJoint fully_independent_joint(std::mt19937_64& rng, int values_per_component,
                                         const JointShape& shape) {
  const int K = static_cast<int>(shape.y_cardinalities.size());
  const int J = shape.z_dims;
  const int comps = K + J;
  std::vector<std::vector<double>> comp_probs;
  for (int c = 0; c < comps; ++c) comp_probs.push_back(dirichlet(rng, values_per_component));
  std::vector<std::vector<std::vector<double>>> y_cond(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k)
    for (int a = 0; a < values_per_component; ++a)
      y_cond[k].push_back(dirichlet(rng, static_cast<std::size_t>(shape.y_cardinalities[k])));
  std::vector<std::vector<std::pair<double, double>>> z_cond(static_cast<std::size_t>(J));
  for (int j = 0; j < J; ++j)
    for (int b = 0; b < values_per_component; ++b) {
      double m = 0.0, v = 1.0;
      detail::draw_gaussian(rng, m, v);
      z_cond[j].push_back({m, v});
    }

  std::size_t nx = 1;
  for (int c = 0; c < comps; ++c) nx *= static_cast<std::size_t>(values_per_component);
  std::vector<double> q_x, qy, means, vars;
  std::vector<int> idx(static_cast<std::size_t>(comps), 0);
  for (std::size_t x = 0; x < nx; ++x) {
    std::size_t rem = x;
    for (int c = comps - 1; c >= 0; --c) {
      idx[c] = static_cast<int>(rem % values_per_component);
      rem /= values_per_component;
    }
    double px = 1.0;
    for (int c = 0; c < comps; ++c) px *= comp_probs[c][idx[c]];
    q_x.push_back(px);
    std::vector<double> row{1.0};
    for (int k = 0; k < K; ++k) {
      std::vector<double> next;
      for (double a : row)
        for (double b : y_cond[k][idx[k]]) next.push_back(a * b);
      row = std::move(next);
    }
    qy.insert(qy.end(), row.begin(), row.end());
    for (int j = 0; j < J; ++j) {
      means.push_back(z_cond[j][idx[K + j]].first);
      vars.push_back(z_cond[j][idx[K + j]].second);
    }
  }
  return make_joint(q_x, shape, std::move(qy), std::move(means), std::move(vars));
}

/// Mixes q(y|x) of `joint` toward the rows of `other` (same x support):
/// q_eps(y|x) = (1-eps) q(y|x) + eps q'(y|x). z-conditionals are mixed the
/// same way at the grid-mass level.
inline TinyJoint perturb_joint(const TinyJoint& joint, const TinyJoint& other, double eps) {
  if (joint.num_x() != other.num_x() || joint.y_size() != other.y_size() ||
      joint.z_dims != other.z_dims || joint.num_grid() != other.num_grid()) {
    throw DimensionError("perturb_joint: incompatible joints");
  }
  TinyJoint out = joint;
  for (std::size_t i = 0; i < out.q_y_given_x.size(); ++i) {
    out.q_y_given_x[i] = (1.0 - eps) * joint.q_y_given_x[i] + eps * other.q_y_given_x[i];
  }
  for (std::size_t i = 0; i < out.q_z_given_x.size(); ++i) {
    out.q_z_given_x[i] = (1.0 - eps) * joint.q_z_given_x[i] + eps * other.q_z_given_x[i];
  }
  out.z_means.clear();
  out.z_variances.clear();
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Evidence lower bound on an enumerable generative model.

/// p(y) p(z) p(x|y,z) with x, y and gridded z all finite.
struct GenerativeTable {
  std::size_t num_x = 2;
  std::vector<double> prior_latent;  // [L] over the flattened (y, z) latent space
  std::vector<double> likelihood;    // [L][N_x], rows normalized over x
};

struct EvidenceBound {
  std::vector<double> log_evidence;  // per x
  std::vector<double> elbo;          // per x
};

/// log p(x) and ELBO(x) = sum_l q(l|x) [log p(x|l) + log p(l) - log q(l|x)].
/// `posterior` is [N_x][L] and may be any (not necessarily factorized) table.
inline EvidenceBound evidence_bound(const GenerativeTable& gen, std::span<const double> posterior) {
  const std::size_t L = gen.prior_latent.size();
  if (gen.likelihood.size() != L * gen.num_x || posterior.size() != gen.num_x * L) {
    throw DimensionError("evidence_bound: table sizes");
  }
  EvidenceBound out;
  for (std::size_t x = 0; x < gen.num_x; ++x) {
    double evidence = 0.0;
    double elbo = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
      const double joint = gen.prior_latent[l] * gen.likelihood[l * gen.num_x + x];
      evidence += joint;
      const double q = posterior[x * L + l];
      if (q > 0.0) elbo += q * (std::log(joint) - std::log(q));
    }
    out.log_evidence.push_back(std::log(evidence));
    out.elbo.push_back(elbo);
  }
  return out;
}

inline std::vector<double> true_posterior(const GenerativeTable& gen) {
  const std::size_t L = gen.prior_latent.size();
  std::vector<double> post(gen.num_x * L);
  for (std::size_t x = 0; x < gen.num_x; ++x) {
    double z = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
      post[x * L + l] = gen.prior_latent[l] * gen.likelihood[l * gen.num_x + x];
      z += post[x * L + l];
    }
    for (std::size_t l = 0; l < L; ++l) post[x * L + l] /= z;
  }
  return post;
}

/// Random decoder table over (C classes) x (gridded z, J dims) with the
/// uniform/standard-normal priors of the model.
inline GenerativeTable random_generative_table(std::mt19937_64& rng, std::size_t num_x, int classes,
                                               int z_dims, const QuadratureGrid& grid) {
  const auto pz = standard_normal_grid(grid);
  std::size_t nz = 1;
  for (int j = 0; j < z_dims; ++j) nz *= pz.size();
  GenerativeTable gen;
  gen.num_x = num_x;
  for (int c = 0; c < classes; ++c)
    for (std::size_t zi = 0; zi < nz; ++zi) {
      std::size_t rem = zi;
      double v = 1.0 / classes;
      for (int j = 0; j < z_dims; ++j) {
        v *= pz[rem % pz.size()];
        rem /= pz.size();
      }
      gen.prior_latent.push_back(v);
    }
  for (std::size_t l = 0; l < gen.prior_latent.size(); ++l) {
    const auto row = dirichlet(rng, num_x);
    gen.likelihood.insert(gen.likelihood.end(), row.begin(), row.end());
  }
  return gen;
}

}  // namespace ivvae::oracle
