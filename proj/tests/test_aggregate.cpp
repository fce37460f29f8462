#include "ivvae/aggregate.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "ivvae/oracle.hpp"
#include "test_support.hpp"

namespace {

using namespace ivvae;
using ivvae::testing::f64;
using ivvae::testing::make_gen;

BatchPosteriors random_batch(torch::Generator& gen, int64_t M, int64_t J, int64_t C, int64_t N = -1) {
  return {{torch::randn({M, J}, gen, f64()) * 1.5, torch::randn({M, J}, gen, f64()) * 0.5},
          {torch::softmax(torch::randn({M, C}, gen, f64()) * 2, -1)},
          N < 0 ? M : N};
}

torch::Tensor paired_sample(const BatchPosteriors& b, torch::Generator& gen) {
  return gaussian_rsample(b.gaussian, torch::randn(b.gaussian.mean.sizes(), gen, f64()));
}

TEST(MwsLogDensity, SingleComponentIsThatDensity) {
  const BatchPosteriors b{{torch::zeros({1, 1}, f64()), torch::zeros({1, 1}, f64())},
                          {torch::tensor({{0.5, 0.5}}, f64())}, 1};
  const auto [log_qz, log_dims] = mws_log_density(torch::zeros({1, 1}, f64()), b);
  EXPECT_NEAR(log_qz.item<double>(), -0.9189385332046727, 1e-15);
  EXPECT_NEAR(log_dims.item<double>(), -0.9189385332046727, 1e-15);
}

TEST(MwsLogDensity, IdenticalComponentsCollapse) {
  const auto mean = torch::tensor({{0.3, -1.0}}, f64()).expand({2, 2}).contiguous();
  const auto logvar = torch::tensor({{0.2, -0.4}}, f64()).expand({2, 2}).contiguous();
  const BatchPosteriors b{{mean, logvar}, {torch::full({2, 3}, 1.0 / 3, f64())}, 2};
  const auto z = torch::tensor({{0.1, 0.2}, {-2.0, 1.5}}, f64());
  const auto single = gaussian_log_density(z, mean, logvar);
  const auto [log_qz, log_dims] = mws_log_density(z, b);
  EXPECT_TRUE(torch::allclose(log_qz, single.sum(-1), 0, 1e-13));
  EXPECT_TRUE(torch::allclose(log_dims, single.sum(-1), 0, 1e-13));
}

TEST(MwsLogDensity, FullBatchIsExplicitMixture) {
  auto gen = make_gen(1);
  const auto b = random_batch(gen, 4, 1, 2);
  const std::vector<double> grid{-3.0, -1.0, 0.0, 0.5, 2.5};
  const auto z = torch::tensor(grid, f64()).view({5, 1});
  // Each grid point is attributed to a source; at M = N the weights are uniform regardless.
  const EvalPoints eval{z, torch::tensor(std::vector<int64_t>{0, 1, 2, 3, 0})};
  const auto d = mws_densities(eval, b);
  for (int i = 0; i < 5; ++i) {
    double mix = 0.0;
    for (int m = 0; m < 4; ++m) {
      const double mu = b.gaussian.mean[m][0].item<double>();
      const double var = std::exp(b.gaussian.log_variance[m][0].item<double>());
      mix += 0.25 * std::exp(-0.5 * (grid[i] - mu) * (grid[i] - mu) / var) / std::sqrt(2 * M_PI * var);
    }
    EXPECT_NEAR(d.log_qz[i].item<double>(), std::log(mix), 1e-10);
  }
}

TEST(MwsLogDensity, WeightsSumToOneForPartialBatches) {
  const auto src = torch::tensor(std::vector<int64_t>{0, 2, 1});
  const auto w = ivvae::detail::mws_log_weights(src, 3, 100, f64()).exp();
  EXPECT_TRUE(torch::allclose(w.sum(1), torch::ones({3}, f64()), 0, 1e-14));
  EXPECT_NEAR(w[1][2].item<double>(), 0.01, 1e-15);
}

TEST(MwsLogDensity, RejectsUndefinedBatches) {
  auto gen = make_gen(2);
  auto single = random_batch(gen, 1, 2, 3, 10);
  EXPECT_THROW(mws_log_density(torch::zeros({1, 2}, f64()), single), EstimatorError);
  auto b = random_batch(gen, 4, 2, 3, 3);
  EXPECT_THROW(mws_log_density(torch::zeros({4, 2}, f64()), b), EstimatorError);
  b.dataset_size = 8;
  EXPECT_THROW(mws_log_density(torch::zeros({4, 3}, f64()), b), DimensionError);
  b.categorical.probs = torch::full({5, 3}, 1.0 / 3, f64());
  EXPECT_THROW(mws_log_density(torch::zeros({4, 2}, f64()), b), DimensionError);
}

TEST(ExactQy, Cases) {
  const auto same = torch::tensor({{0.2, 0.8}}, f64()).expand({3, 2}).contiguous();
  const BatchPosteriors b{{torch::zeros({3, 1}, f64()), torch::zeros({3, 1}, f64())}, {same}, 3};
  EXPECT_TRUE(torch::allclose(exact_q_y(b), torch::tensor({0.2, 0.8}, f64())));

  const BatchPosteriors sym{{torch::zeros({2, 1}, f64()), torch::zeros({2, 1}, f64())},
                            {torch::tensor({{1.0, 0.0}, {0.0, 1.0}}, f64())}, 2};
  EXPECT_TRUE(torch::equal(exact_q_y(sym), torch::tensor({0.5, 0.5}, f64())));

  auto gen = make_gen(3);
  const auto r = random_batch(gen, 8, 1, 5);
  const auto q = exact_q_y(r);
  const auto acc = r.categorical.probs.accessor<double, 2>();
  for (int c = 0; c < 5; ++c) {
    double s = 0.0;
    for (int m = 0; m < 8; ++m) s += acc[m][c];
    EXPECT_NEAR(q[c].item<double>(), s / 8.0, 1e-15);
  }
  EXPECT_NEAR(q.sum().item<double>(), 1.0, 1e-14);
  EXPECT_GE(q.min().item<double>(), 0.0);
}

TEST(VecIdp, ConstantPosteriorsGiveZero) {
  const int64_t M = 16;
  const BatchPosteriors b{{torch::full({M, 3}, 0.7, f64()), torch::full({M, 3}, -0.3, f64())},
                          {torch::tensor({{0.1, 0.6, 0.3}}, f64()).expand({M, 3}).contiguous()}, M};
  auto gen = make_gen(4);
  EXPECT_NEAR(estimate_vec_idp(paired_sample(b, gen), b).item<double>(), 0.0, 1e-9);
}

TEST(VecIdp, SignDependentClassMatchesDiscreteSurrogate) {
  // psi depends on sign(mu) and components are well separated, so the
  // aggregate reduces to a two-valued z; the surrogate is enumerated exactly.
  const int64_t M = 64;
  auto gen = make_gen(5);
  const auto signs = torch::randint(0, 2, {M}, gen, torch::kInt64);
  const auto mean = (signs.to(torch::kFloat64) * 2 - 1).mul(3.0).view({M, 1});
  const auto logvar = torch::full({M, 1}, std::log(0.01), f64());
  const auto probs = torch::stack({torch::where(signs == 1, 0.95, 0.05), torch::where(signs == 1, 0.05, 0.95)}, 1)
                         .to(torch::kFloat64);
  const BatchPosteriors b{{mean, logvar}, {probs}, M};
  const double est = estimate_vec_idp(paired_sample(b, gen), b).item<double>();

  oracle::DiscreteTable t{{2, 2}, std::vector<double>(4, 0.0)};
  const auto sa = signs.accessor<int64_t, 1>();
  const auto pa = probs.accessor<double, 2>();
  for (int64_t m = 0; m < M; ++m)
    for (int c = 0; c < 2; ++c) t.p[c * 2 + sa[m]] += pa[m][c] / M;
  const double exact = oracle::group_independence_kl(t, {{0}, {1}});
  EXPECT_GT(est, 0.3);
  EXPECT_NEAR(est, exact, 1e-6);
}

TEST(TcZ, SingleDimensionIsZero) {
  auto gen = make_gen(6);
  const auto b = random_batch(gen, 32, 1, 3);
  EXPECT_EQ(estimate_tc_z(paired_sample(b, gen), b).item<double>(), 0.0);
  const auto e = estimate_all(paired_sample(b, gen), b);
  EXPECT_EQ(e.tc_yz.item<double>(), e.vec_idp.item<double>());
}

TEST(TcZ, IndependentCoordinatesGiveNearZero) {
  const int64_t M = 2048;
  auto gen = make_gen(7);
  const BatchPosteriors b{{torch::randn({M, 2}, gen, f64()), torch::zeros({M, 2}, f64())},
                          {torch::full({M, 2}, 0.5, f64())}, M};
  EXPECT_LT(std::abs(estimate_tc_z(paired_sample(b, gen), b).item<double>()), 0.02);
}

TEST(TcYz, SameBatchIdentityOnRandomBatches) {
  auto gen = make_gen(8);
  for (int trial = 0; trial < 25; ++trial) {
    const auto b = random_batch(gen, 24, 4, 5, 24 + 10 * trial);
    const auto e = estimate_all(paired_sample(b, gen), b);
    EXPECT_NEAR(e.tc_yz.item<double>(), e.vec_idp.item<double>() + e.tc_z.item<double>(), 1e-9);
  }
}

TEST(RegTerms, PriorPosteriorsAndOneHotClasses) {
  const int64_t M = 2048;
  auto gen = make_gen(9);
  const auto onehot = torch::zeros({M, 3}, f64()).index_fill_(1, torch::tensor({int64_t{0}}), 1.0);
  const BatchPosteriors b{{torch::zeros({M, 2}, f64()), torch::zeros({M, 2}, f64())}, {onehot}, M};
  const auto [reg_z, reg_y] = estimate_reg_terms(paired_sample(b, gen), b);
  EXPECT_LT(std::abs(reg_z.item<double>()), 0.02);
  EXPECT_NEAR(reg_y.item<double>(), std::log(3.0), 1e-15);
}

TEST(Aggregate, EstimatesAreFiniteAndRegYBounded) {
  auto gen = make_gen(10);
  for (int trial = 0; trial < 10; ++trial) {
    const auto b = random_batch(gen, 16, 3, 4, 1000);
    const auto e = estimate_all(paired_sample(b, gen), b);
    for (const auto& t : {e.vec_idp, e.tc_z, e.tc_yz, e.reg_z, e.reg_y}) {
      EXPECT_TRUE(std::isfinite(t.item<double>()));
    }
    EXPECT_TRUE(torch::isfinite(e.log_qz).all().item<bool>());
    EXPECT_EQ(e.log_qz.size(0), 16);
    EXPECT_GE(e.reg_y.item<double>(), 0.0);
    EXPECT_LE(e.reg_y.item<double>(), std::log(4.0));
  }
}

TEST(Aggregate, PermutationInvariance) {
  auto gen = make_gen(11);
  const auto b = random_batch(gen, 20, 3, 4, 500);
  const auto z = paired_sample(b, gen);
  const auto perm = torch::randperm(20, gen, torch::kInt64);
  const BatchPosteriors pb{b.gaussian.index(perm), b.categorical.index(perm), b.dataset_size};
  const auto e = estimate_all(z, b);
  const auto p = estimate_all(z.index_select(0, perm), pb);
  for (auto [x, y] : {std::pair{e.vec_idp, p.vec_idp}, {e.tc_z, p.tc_z}, {e.tc_yz, p.tc_yz},
                      {e.reg_z, p.reg_z}, {e.reg_y, p.reg_y}}) {
    EXPECT_NEAR(x.item<double>(), y.item<double>(), 1e-10);
  }
  EXPECT_TRUE(torch::allclose(e.log_qz.index_select(0, perm), p.log_qz, 0, 1e-10));
}

TEST(Aggregate, GradientsMatchFiniteDifferences) {
  auto gen = make_gen(12);
  const int64_t M = 6, J = 2, C = 3;
  auto mean = torch::randn({M, J}, gen, f64()).requires_grad_(true);
  auto logvar = (torch::randn({M, J}, gen, f64()) * 0.3).requires_grad_(true);
  auto psi = torch::softmax(torch::randn({M, C}, gen, f64()), -1).requires_grad_(true);
  const auto noise = torch::randn({M, J}, gen, f64());
  const auto batch = [&] { return BatchPosteriors{{mean, logvar}, {psi}, 40}; };
  const auto z = [&] { return gaussian_rsample({mean, logvar}, noise); };
  const std::vector<std::pair<const char*, std::function<torch::Tensor()>>> terms{
      {"vec_idp", [&] { return estimate_vec_idp(z(), batch()); }},
      {"tc_z", [&] { return estimate_tc_z(z(), batch()); }},
      {"tc_yz", [&] { return estimate_tc_yz(z(), batch()); }},
      {"reg_z", [&] { return estimate_reg_terms(z(), batch()).first; }},
      {"reg_y", [&] { return estimate_reg_terms(z(), batch()).second; }},
  };
  for (const auto& [name, f] : terms) {
    EXPECT_LT(ivvae::testing::gradient_check({mean, logvar, psi}, f), 1e-4) << name;
  }
}

TEST(Aggregate, MiDataLatentIsNonnegativeAtFullBatch) {
  auto gen = make_gen(13);
  const auto b = random_batch(gen, 64, 2, 3);
  EXPECT_GE(estimate_mi_data_latent(paired_sample(b, gen), b).item<double>(), 0.0);
  const BatchPosteriors same{{torch::zeros({8, 2}, f64()), torch::zeros({8, 2}, f64())},
                             {torch::full({8, 3}, 1.0 / 3, f64())}, 8};
  EXPECT_NEAR(estimate_mi_data_latent(paired_sample(same, gen), same).item<double>(), 0.0, 1e-12);
}

}  // namespace
