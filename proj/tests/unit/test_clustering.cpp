#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "condssl/clustering.hpp"
#include "condssl/error.hpp"
#include "condssl/rng.hpp"
#include "support/temp_dir.hpp"

using namespace condssl;

namespace {

// Points around the given centers with isotropic noise; labels returned alongside.
Matrix blobs(const std::vector<std::vector<double>>& centers, std::size_t per, double sd, Rng& rng,
             std::vector<int>* labels = nullptr) {
  std::normal_distribution<double> z(0.0, sd);
  const std::size_t d = centers.front().size();
  Matrix x(centers.size() * per, d);
  for (std::size_t c = 0; c < centers.size(); ++c) {
    for (std::size_t i = 0; i < per; ++i) {
      for (std::size_t j = 0; j < d; ++j) x(c * per + i, j) = centers[c][j] + z(rng);
      if (labels) labels->push_back(static_cast<int>(c));
    }
  }
  return x;
}

double choose2(double n) { return n * (n - 1) / 2; }

// Hubert-Arabie adjusted Rand index from the contingency table.
double ari_oracle(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<std::pair<int, int>, double> cells;
  std::map<int, double> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cells[{a[i], b[i]}] += 1;
    rows[a[i]] += 1;
    cols[b[i]] += 1;
  }
  double index = 0, sa = 0, sb = 0;
  for (const auto& [k, v] : cells) index += choose2(v);
  for (const auto& [k, v] : rows) sa += choose2(v);
  for (const auto& [k, v] : cols) sb += choose2(v);
  const double expected = sa * sb / choose2(static_cast<double>(a.size()));
  return (index - expected) / (0.5 * (sa + sb) - expected);
}

GmmModel two_component_model() {
  GmmModel m;
  m.weights = {0.5, 0.5};
  m.means = Matrix(2, 2);
  m.means(0, 0) = -3.0;
  m.means(1, 0) = 3.0;
  m.variances = Matrix(2, 2, 1.0);
  return m;
}

}  // namespace

TEST(FitGmm, SingleComponentIsClosedForm) {
  Rng rng(1);
  const Matrix x = blobs({{1.0, -2.0, 0.5}}, 200, 1.5, rng);
  GmmOptions opt;
  opt.k = 1;
  const GmmModel m = fit_gmm(x, opt);
  for (std::size_t j = 0; j < 3; ++j) {
    double mean = 0, var = 0;
    for (std::size_t i = 0; i < x.rows; ++i) mean += x(i, j);
    mean /= x.rows;
    for (std::size_t i = 0; i < x.rows; ++i) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= x.rows;
    EXPECT_NEAR(m.means(0, j), mean, 1e-12);
    EXPECT_NEAR(m.variances(0, j), var, 1e-12);
  }
  EXPECT_EQ(m.weights, std::vector<double>{1.0});
  EXPECT_EQ(posterior(m, x.row(0)), std::vector<double>{1.0});
}

TEST(FitGmm, RecoversWellSeparatedClusters) {
  Rng rng(2);
  const Matrix x = blobs({{-10.0, -10.0}, {10.0, 10.0}}, 100, 1.0, rng);
  GmmOptions opt;
  opt.k = 2;
  const GmmModel m = fit_gmm(x, opt);
  const std::size_t lo = m.means(0, 0) < 0 ? 0 : 1;
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_NEAR(m.means(lo, j), -10.0, 0.25);
    EXPECT_NEAR(m.means(1 - lo, j), 10.0, 0.25);
  }
  for (std::size_t i = 0; i < x.rows; ++i) {
    const auto p = posterior(m, x.row(i));
    const std::size_t truth = i < 100 ? lo : 1 - lo;
    EXPECT_GT(p[truth], 1.0 - 1e-6);
  }
}

TEST(FitGmm, IterationCountHonoursMaxIter) {
  Rng rng(3);
  const Matrix x = blobs({{0.0, 0.0}, {1.0, 1.0}, {3.0, 0.0}}, 50, 1.0, rng);
  GmmOptions opt;
  opt.k = 3;
  opt.tolerance = 0.0;
  opt.max_iter = 5;
  const GmmModel m = fit_gmm(x, opt);
  EXPECT_EQ(m.iterations, 5u);
  EXPECT_EQ(m.log_likelihood_trace.size(), 6u);
}

TEST(FitGmm, LogLikelihoodNeverDecreases) {
  Rng data_rng(4);
  const Matrix x = blobs({{0.0, 0.0, 0.0}, {2.0, 0.0, 1.0}, {0.0, 3.0, -1.0}, {4.0, 4.0, 4.0}}, 60, 1.0, data_rng);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    GmmOptions opt;
    opt.k = 2 + seed % 5;
    opt.tolerance = 0.0;
    opt.max_iter = 40;
    opt.seed = seed;
    const GmmModel m = fit_gmm(x, opt);
    for (std::size_t i = 1; i < m.log_likelihood_trace.size(); ++i) {
      EXPECT_GE(m.log_likelihood_trace[i], m.log_likelihood_trace[i - 1] - 1e-9) << "seed " << seed << " it " << i;
    }
    EXPECT_NEAR(m.log_likelihood_trace.back(), gmm_log_likelihood(m, x), 1e-9 * std::abs(m.log_likelihood_trace.back()));
  }
}

TEST(FitGmm, ClusterRecoveryAri) {
  Rng rng(5);
  std::vector<int> truth;
  const Matrix x = blobs({{0, 0, 0, 0}, {4, 0, 0, 0}, {0, 4, 0, 0}, {0, 0, 4, 0}, {0, 0, 0, 4}}, 80, 0.7, rng, &truth);
  GmmOptions opt;
  opt.k = 5;
  const GmmModel m = fit_gmm(x, opt);
  EXPECT_GT(adjusted_rand_index(hard_assignments(m, x), truth), 0.9);
}

TEST(FitGmm, DeterministicPerSeedAndValidatesInput) {
  Rng rng(6);
  const Matrix x = blobs({{0.0}, {5.0}}, 30, 1.0, rng);
  GmmOptions opt;
  opt.k = 2;
  const GmmModel a = fit_gmm(x, opt), b = fit_gmm(x, opt);
  EXPECT_EQ(a.means, b.means);
  EXPECT_EQ(a.variances, b.variances);
  opt.k = 0;
  EXPECT_THROW(fit_gmm(x, opt), InvalidArgument);
  opt.k = 61;
  EXPECT_THROW(fit_gmm(x, opt), InvalidArgument);
  Matrix bad = x;
  bad(0, 0) = NAN;
  opt.k = 2;
  EXPECT_THROW(fit_gmm(bad, opt), InvalidArgument);
}

TEST(Posterior, PointAtAMeanBelongsToIt) {
  const GmmModel m = two_component_model();
  const auto p = posterior(m, m.means.row(0));
  const double direct = 1.0 / (1.0 + std::exp(-0.5 * 36.0));
  EXPECT_GT(p[0], 1.0 - 1e-6);
  EXPECT_NEAR(p[0], direct, 1e-12);
}

TEST(Posterior, NormalizedAndShiftInvariant) {
  Rng rng(7);
  std::normal_distribution<double> z(0.0, 3.0);
  const GmmModel m = two_component_model();
  for (int trial = 0; trial < 100; ++trial) {
    const std::vector<double> x{z(rng), z(rng)};
    const auto p = posterior(m, x);
    EXPECT_NEAR(p[0] + p[1], 1.0, 1e-12);
    auto logs = component_log_densities(m, x);
    EXPECT_EQ(softmax_from_logs(logs), p);
    for (double& l : logs) l += 750.0;
    const auto shifted = softmax_from_logs(logs);
    EXPECT_NEAR(shifted[0], p[0], 1e-12);
    EXPECT_NEAR(shifted[1], p[1], 1e-12);
  }
}

TEST(PoolSlide, MeanOfPosteriors) {
  Matrix same(3, 2);
  for (std::size_t i = 0; i < 3; ++i) same(i, 0) = 0.4;
  const GmmModel m = two_component_model();
  const SlideFeature f = pool_slide(m, 9, same);
  EXPECT_EQ(f.slide_id, 9);
  const auto p = posterior(m, same.row(0));
  EXPECT_NEAR(f.v[0], p[0], 1e-15);
  EXPECT_NEAR(f.v[1], p[1], 1e-15);

  Matrix post(2, 2);
  post(0, 0) = 1.0;
  post(1, 1) = 1.0;
  EXPECT_EQ(mean_rows(post), (std::vector<double>{0.5, 0.5}));
  EXPECT_THROW(pool_slide(m, 1, Matrix(0, 2)), InvalidArgument);
}

TEST(PoolSlide, PermutationInvariantAndLinearInTiles) {
  Rng rng(8);
  std::normal_distribution<double> z(0.0, 3.0);
  const GmmModel m = two_component_model();
  Matrix a(5, 2), b(7, 2);
  for (double& v : a.data) v = z(rng);
  for (double& v : b.data) v = z(rng);
  Matrix reversed(5, 2), both(12, 2);
  for (std::size_t i = 0; i < 5; ++i) std::copy(a.row(i).begin(), a.row(i).end(), reversed.row(4 - i).begin());
  std::copy(a.data.begin(), a.data.end(), both.data.begin());
  std::copy(b.data.begin(), b.data.end(), both.data.begin() + 10);
  const auto fa = pool_slide(m, 0, a).v, fb = pool_slide(m, 0, b).v;
  const auto fr = pool_slide(m, 0, reversed).v, fab = pool_slide(m, 0, both).v;
  for (std::size_t z2 = 0; z2 < 2; ++z2) {
    EXPECT_NEAR(fr[z2], fa[z2], 1e-15);
    EXPECT_NEAR(fab[z2], (5 * fa[z2] + 7 * fb[z2]) / 12, 1e-14);
  }
}

TEST(AdjustedRandIndex, MatchesContingencyOracle) {
  EXPECT_EQ(adjusted_rand_index(std::vector<int>{0, 0, 1, 1}, std::vector<int>{5, 5, 2, 2}), 1.0);
  Rng rng(9);
  std::uniform_int_distribution<int> label(0, 4);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> a(60), b(60);
    for (int i = 0; i < 60; ++i) {
      a[i] = label(rng);
      b[i] = trial % 2 ? label(rng) : (a[i] + (i % 7 == 0)) % 5;
    }
    EXPECT_NEAR(adjusted_rand_index(a, b), ari_oracle(a, b), 1e-12);
  }
}

TEST(SaveGmm, RoundTrip) {
  Rng rng(10);
  GmmOptions opt;
  opt.k = 3;
  const GmmModel m = fit_gmm(blobs({{0.0, 1.0}, {3.0, 3.0}, {-3.0, 2.0}}, 20, 0.5, rng), opt);
  testing_support::TempDir dir;
  save_gmm(m, dir / "gmm.txt");
  const GmmModel back = load_gmm(dir / "gmm.txt");
  EXPECT_EQ(back.weights, m.weights);
  EXPECT_EQ(back.means, m.means);
  EXPECT_EQ(back.variances, m.variances);
}
