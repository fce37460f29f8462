#include "ivvae/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace {

using namespace ivvae::metrics;

// Codes with J z-columns, C classes and one class factor, all zero-filled.
LatentCodes blank_codes(std::size_t n, int z_dims, int classes) {
  LatentCodes c;
  c.num_samples = n;
  c.z_dims = z_dims;
  c.classes = classes;
  c.z_means.assign(n * z_dims, 0.0);
  c.y_probs.assign(n * classes, 1.0 / classes);
  return c;
}

// Brute force: count every (a, b) cell with a separate pass over the data.
double brute_force_mi(const Discrete& a, const Discrete& b) {
  const double n = static_cast<double>(a.codes.size());
  double mi = 0.0;
  for (int va = 0; va < a.cardinality; ++va) {
    double ca = 0.0;
    for (int x : a.codes) ca += x == va;
    for (int vb = 0; vb < b.cardinality; ++vb) {
      double cb = 0.0, cab = 0.0;
      for (std::size_t i = 0; i < a.codes.size(); ++i) {
        cb += b.codes[i] == vb;
        cab += (a.codes[i] == va && b.codes[i] == vb);
      }
      if (cab > 0) mi += cab / n * std::log((cab / n) / ((ca / n) * (cb / n)));
    }
  }
  return mi;
}

TEST(Metrics, CopiedFactorHasUnitNormalizedMi) {
  const std::size_t n = 3000;
  auto codes = blank_codes(n, 2, 3);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> noise;
  std::vector<int> factor(n);
  for (std::size_t i = 0; i < n; ++i) {
    factor[i] = static_cast<int>(i % 3);
    codes.z_means[i * 2] = factor[i];
    codes.z_means[i * 2 + 1] = noise(rng);
  }
  codes.factor_names = {"shape"};
  codes.factors = {factor};
  const auto m = empirical_mi_matrix(codes);
  EXPECT_NEAR(m(0, 1), 1.0, 0.01);
  EXPECT_LT(m(0, 2), 0.02);
  EXPECT_EQ(m(0, 0), 0.0);  // uniform y -> constant argmax
}

TEST(Metrics, IndependentNoiseHasNearZeroMi) {
  const std::size_t n = 10000;
  auto codes = blank_codes(n, 1, 3);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u;
  std::uniform_int_distribution<int> f(0, 2);
  std::vector<int> factor(n);
  for (std::size_t i = 0; i < n; ++i) {
    codes.z_means[i] = u(rng);
    factor[i] = f(rng);
  }
  codes.factor_names = {"v"};
  codes.factors = {factor};
  EXPECT_LT(empirical_mi_matrix(codes)(0, 1), 0.02);
}

TEST(Metrics, NoisyCopyMatchesBruteForceHistogram) {
  const std::size_t n = 2000;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::uniform_int_distribution<int> f(0, 5);
  std::vector<double> z(n);
  std::vector<int> factor(n);
  for (std::size_t i = 0; i < n; ++i) {
    factor[i] = f(rng);
    z[i] = factor[i] + noise(rng);
  }
  const auto bz = quantile_bins(z, 20);
  const auto bf = compact_codes(factor);
  const double fast = mutual_information(bz, bf);
  const double slow = brute_force_mi(bz, bf);
  EXPECT_NEAR(fast, slow, 1e-10);

  auto codes = blank_codes(n, 1, 2);
  codes.z_means = z;
  codes.factor_names = {"v"};
  codes.factors = {factor};
  const double normalized = empirical_mi_matrix(codes, 20)(0, 1);
  EXPECT_NEAR(normalized, slow / entropy(bf), 0.03 * normalized);
}

TEST(Metrics, QuantileBinsAreEqualCount) {
  std::vector<double> v(100);
  for (int i = 0; i < 100; ++i) v[i] = std::sin(i * 1.7);
  const auto b = quantile_bins(v, 20);
  EXPECT_EQ(b.cardinality, 20);
  std::vector<int> counts(20, 0);
  for (int c : b.codes) ++counts[c];
  for (int c : counts) EXPECT_EQ(c, 5);
}

TEST(Metrics, InvariantToMonotoneTransformAndRelabeling) {
  const std::size_t n = 1500;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  std::uniform_int_distribution<int> f(0, 3);
  auto codes = blank_codes(n, 2, 4);
  std::vector<int> factor(n);
  for (std::size_t i = 0; i < n; ++i) {
    factor[i] = f(rng);
    codes.z_means[2 * i] = factor[i] + g(rng);
    codes.z_means[2 * i + 1] = g(rng);
  }
  codes.factor_names = {"v"};
  codes.factors = {factor};
  const auto base = empirical_mi_matrix(codes);

  auto transformed = codes;
  for (auto& z : transformed.z_means) z = std::exp(3.0 * z) - 7.0;
  const auto tm = empirical_mi_matrix(transformed);
  for (std::size_t k = 0; k < base.data.size(); ++k) EXPECT_EQ(base.data[k], tm.data[k]);

  auto relabeled = codes;
  const int perm[4] = {17, -2, 5, 40};
  for (auto& v : relabeled.factors[0]) v = perm[v];
  const auto rm = empirical_mi_matrix(relabeled);
  for (std::size_t k = 0; k < base.data.size(); ++k) EXPECT_NEAR(base.data[k], rm.data[k], 1e-14);
}

TEST(Metrics, ConstantLatentHasZeroMiAndEmptyCodesThrow) {
  auto codes = blank_codes(50, 1, 2);
  codes.factor_names = {"v"};
  codes.factors = {std::vector<int>(50)};
  for (int i = 0; i < 50; ++i) codes.factors[0][i] = i % 2;
  const auto m = empirical_mi_matrix(codes);
  EXPECT_EQ(m(0, 1), 0.0);
  EXPECT_THROW(empirical_mi_matrix(blank_codes(0, 1, 2)), ivvae::DimensionError);
}

TEST(Metrics, MigOnIdentityBlock) {
  Matrix m(3, 4, 0.0);
  m(0, 0) = m(1, 1) = m(2, 3) = 1.0;
  const auto s = mig_scores(m, 0);
  EXPECT_DOUBLE_EQ(s.mig_all, 1.0);
  EXPECT_DOUBLE_EQ(s.mig_class, 1.0);
  EXPECT_DOUBLE_EQ(s.mig_style, 1.0);
}

TEST(Metrics, MigOnDuplicatedColumnsIsZero) {
  Matrix m(2, 3, 0.0);
  m(0, 0) = m(0, 1) = 0.8;
  m(1, 0) = m(1, 1) = 0.4;
  m(1, 2) = 0.1;
  const auto s = mig_scores(m, 0);
  for (double g : s.per_factor) EXPECT_EQ(g, 0.0);
  EXPECT_EQ(s.mig_all, 0.0);
}

TEST(Metrics, MigOnHandPlacedMatrix) {
  Matrix m(3, 4);
  const double vals[3][4] = {{0.9, 0.1, 0.3, 0.2}, {0.05, 0.5, 0.7, 0.1}, {0.0, 0.4, 0.4, 0.8}};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = vals[r][c];
  const auto s = mig_scores(m, 0);
  // gaps: 0.9-0.3, 0.7-0.5, 0.8-0.4
  EXPECT_NEAR(s.mig_class, 0.6, 1e-12);
  EXPECT_NEAR(s.mig_style, 0.3, 1e-12);
  EXPECT_NEAR(s.mig_all, 0.4, 1e-12);
  EXPECT_NEAR(s.mig_all, (s.mig_class + 2.0 * s.mig_style) / 3.0, 1e-15);
}

TEST(Metrics, MigNeedsTwoLatents) {
  EXPECT_THROW(mig_scores(Matrix(2, 1), 0), ivvae::DimensionError);
}

TEST(Metrics, LabelMiPerfectClassifier) {
  const std::size_t n = 1000;
  auto codes = blank_codes(n, 1, 10);
  std::vector<int> t(n);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = static_cast<int>(i % 10);
    for (int c = 0; c < 10; ++c) codes.y_probs[i * 10 + c] = c == t[i] ? 0.91 : 0.01;
  }
  codes.factor_names = {"label"};
  codes.factors = {t};
  codes.class_factor = 0;
  EXPECT_NEAR(label_mi(codes).i_y_t, std::log(10.0), 1e-12);
  EXPECT_EQ(classification_error(codes), 0.0);
}

TEST(Metrics, LabelMiNullCalibration) {
  const std::size_t n = 10000;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  std::uniform_int_distribution<int> cls(0, 9);
  auto codes = blank_codes(n, 2, 10);
  std::vector<int> t(n);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = static_cast<int>(i % 10);
    codes.z_means[2 * i] = g(rng);
    codes.z_means[2 * i + 1] = g(rng);
    const int guess = cls(rng);
    for (int c = 0; c < 10; ++c) codes.y_probs[i * 10 + c] = c == guess ? 0.5 : 0.5 / 9;
  }
  codes.factor_names = {"label"};
  codes.factors = {t};
  codes.class_factor = 0;
  const auto lm = label_mi(codes);
  EXPECT_LT(lm.i_y_t, 0.02);
  EXPECT_LT(lm.i_z_t, 0.05);
}

TEST(Metrics, ClassificationErrorEdges) {
  const std::size_t n = 10000;
  auto codes = blank_codes(n, 1, 10);
  std::vector<int> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<int>(i % 10);
  codes.factor_names = {"label"};
  codes.factors = {t};
  codes.class_factor = 0;
  // uniform psi: ties resolve to class 0, right on 1/10 of balanced labels
  EXPECT_NEAR(classification_error(codes), 0.9, 0.02);

  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 10; ++c) codes.y_probs[i * 10 + c] = c == (t[i] + 1) % 10 ? 1.0 : 0.0;
  EXPECT_EQ(classification_error(codes), 1.0);
}

TEST(Metrics, ReportJsonRoundTrip) {
  const std::size_t n = 600;
  auto codes = blank_codes(n, 2, 3);
  std::vector<int> t(n), s(n);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = static_cast<int>(i % 3);
    s[i] = static_cast<int>((i / 3) % 4);
    codes.y_probs[i * 3 + t[i]] = 0.9;
    codes.z_means[2 * i] = s[i];
    codes.z_means[2 * i + 1] = static_cast<double>(i);
  }
  codes.factor_names = {"shape", "scale"};
  codes.factors = {t, s};
  codes.class_factor = 0;
  const auto r = mi_report(codes);
  EXPECT_LE(r.mig_all, 1.0);
  const auto back = mi_report_from_json(to_json(r));
  EXPECT_EQ(back.normalized_mi.data, r.normalized_mi.data);
  EXPECT_EQ(back.mig_style, r.mig_style);
  EXPECT_EQ(back.cls_error, r.cls_error);
  EXPECT_NE(mi_matrix_csv(r).find("factor,y,z1,z2"), std::string::npos);
}

}  // namespace
