#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "vaereg/sampler.hpp"

using namespace vaereg;

TEST(Sampler, DeterministicForSeed) {
  PosteriorParams<double> p{Matrix<double>::Zero(4, 5), Matrix<double>::Zero(4, 5)};
  RngStream a(42), b(42), c(43);
  const auto za = sample(p, a).z, zb = sample(p, b).z, zc = sample(p, c).z;
  EXPECT_EQ(za, zb);
  EXPECT_NE(za, zc);
}

TEST(Sampler, StreamsAreIndependent) {
  RngStream s(7, StreamId::sampler), e(7, StreamId::experiment), e1(7, StreamId::experiment, 1);
  const double a = s.normal(), b = e.normal(), c = e1.normal();
  EXPECT_NE(a, b);
  EXPECT_NE(b, c);
}

TEST(Sampler, StateRoundTrip) {
  RngStream a(5);
  a.normal();  // leave a cached second draw in the distribution
  const auto saved = a.state();
  RngStream b(999);
  b.restore(saved);
  EXPECT_TRUE(a == b);
  for (int k = 0; k < 10; ++k) EXPECT_EQ(a.normal(), b.normal());
  EXPECT_THROW(b.restore("garbage"), ArgumentError);
}

TEST(Sampler, ReparametrizationIdentity) {
  std::mt19937_64 rng(1);
  PosteriorParams<double> p{oracle::random_matrix(rng, 3, 4, -2, 2), oracle::random_matrix(rng, 3, 4, -2, 2)};
  RngStream r(3);
  const auto batch = sample(p, r);
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < 4; ++j)
      EXPECT_DOUBLE_EQ(batch.z(i, j), p.mu(i, j) + batch.eps(i, j) * std::exp(p.log_var(i, j) / 2));
}

TEST(Sampler, MonteCarloMoments) {
  PosteriorParams<double> p{Matrix<double>(1, 3), Matrix<double>(1, 3)};
  p.mu << -1.0, 0.5, 2.0;
  p.log_var << std::log(0.25), 0.0, std::log(4.0);
  RngStream r(11);
  const int n = 200000;
  Vector<double> sum = Vector<double>::Zero(3), sq = Vector<double>::Zero(3);
  for (int k = 0; k < n; ++k) {
    const auto z = sample(p, r).z;
    for (int j = 0; j < 3; ++j) {
      sum(j) += z(0, j);
      sq(j) += z(0, j) * z(0, j);
    }
  }
  const double var_true[] = {0.25, 1.0, 4.0};
  for (int j = 0; j < 3; ++j) {
    const double mean = sum(j) / n;
    const double var = sq(j) / n - mean * mean;
    // 5 standard errors
    EXPECT_NEAR(mean, p.mu(0, j), 5 * std::sqrt(var_true[j] / n));
    EXPECT_NEAR(var, var_true[j], 5 * var_true[j] * std::sqrt(2.0 / n));
  }
}

TEST(Sampler, CollapsesOntoMeanAsVarianceShrinks) {
  // The clamp keeps sigma >= exp(-10); z - mu is bounded by that times |eps|.
  PosteriorParams<double> p{Matrix<double>::Constant(2, 3, 0.7), Matrix<double>::Constant(2, 3, -1e6)};
  RngStream r(2);
  const auto b = sample(p, r);
  for (Eigen::Index i = 0; i < 2; ++i)
    for (Eigen::Index j = 0; j < 3; ++j)
      EXPECT_LE(std::abs(b.z(i, j) - 0.7), std::exp(kLogVarMin / 2) * std::abs(b.eps(i, j)) * (1 + 1e-9));
}

TEST(Sampler, RejectsNonFinite) {
  PosteriorParams<double> p{Matrix<double>::Zero(1, 2), Matrix<double>::Zero(1, 2)};
  p.mu(0, 1) = NAN;
  RngStream r(0);
  EXPECT_THROW(sample(p, r), DomainError);
  PosteriorParams<double> q{Matrix<double>::Zero(1, 2), Matrix<double>::Zero(2, 2)};
  EXPECT_THROW(sample(q, r), ArgumentError);
}

TEST(Sampler, SampleKDrawsDiffer) {
  PosteriorParams<double> p{Matrix<double>::Zero(2, 2), Matrix<double>::Zero(2, 2)};
  RngStream r(9);
  const auto draws = sample_k(p, r, 3);
  ASSERT_EQ(draws.size(), 3u);
  EXPECT_NE(draws[0].z, draws[1].z);
  EXPECT_EQ(draws[1].source.mu, p.mu);
}

TEST(Sampler, BackwardMatchesCentralDifferences) {
  // f(mu, lv) = sum W .* z(mu, lv) with eps held fixed
  std::mt19937_64 rng(4);
  PosteriorParams<double> p{oracle::random_matrix(rng, 3, 5, -2, 2), oracle::random_matrix(rng, 3, 5, -3, 3)};
  const auto W = oracle::random_matrix(rng, 3, 5, -1, 1);
  RngStream r(8);
  const auto batch = sample(p, r);
  Matrix<double> dmu = Matrix<double>::Zero(3, 5), dlv = Matrix<double>::Zero(3, 5);
  sample_backward(batch, W, dmu, dlv);
  const auto f = [&] {
    const Matrix<double> z = p.mu + batch.eps.cwiseProduct(p.stddev());
    return W.cwiseProduct(z).sum();
  };
  EXPECT_LT(oracle::relative_error(oracle::flatten(dmu), oracle::central_difference(f, p.mu.data(), 15)), 1e-8);
  EXPECT_LT(oracle::relative_error(oracle::flatten(dlv), oracle::central_difference(f, p.log_var.data(), 15)), 1e-8);
}

TEST(Sampler, BackwardAccumulates) {
  PosteriorParams<double> p{Matrix<double>::Zero(1, 1), Matrix<double>::Zero(1, 1)};
  RngStream r(1);
  const auto b = sample(p, r);
  Matrix<double> dmu = Matrix<double>::Constant(1, 1, 1.0), dlv = Matrix<double>::Zero(1, 1);
  sample_backward(b, Matrix<double>(Matrix<double>::Constant(1, 1, 2.0)), dmu, dlv);
  EXPECT_EQ(dmu(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(dlv(0, 0), 2.0 * b.eps(0, 0) * 0.5);
  EXPECT_THROW(sample_backward(b, Matrix<double>(Matrix<double>::Zero(2, 1)), dmu, dlv), ArgumentError);
}
