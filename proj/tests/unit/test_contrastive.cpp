#include <gtest/gtest.h>

#include <cmath>

#include "condssl/cohort.hpp"
#include "condssl/contrastive.hpp"
#include "condssl/error.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace condssl;

namespace {

std::vector<double> random_unit(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> z;
  std::vector<double> v(dim);
  for (double& x : v) x = z(rng);
  const double n = norm2(v);
  for (double& x : v) x /= n;
  return v;
}

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> z(0.0, sd);
  Matrix m(rows, cols);
  for (double& x : m.data) x = z(rng);
  return m;
}

TrainConfig small_train_config() {
  TrainConfig c;
  c.epochs = 20;
  c.learning_rate = 0.2;
  c.batch = BatchSpec::parse("cond:4", 128);
  c.queue_size = 256;
  c.hidden_dim = 32;
  c.embedding_dim = 8;
  c.momentum = 0.99;
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// Augmentation

TEST(Augment, ZeroConfigIsIdentity) {
  Rng rng(1);
  const std::vector<double> x{0.25, -3.0, 7.5};
  const AugmentConfig none{0.0, 0.0, 0.0};
  EXPECT_EQ(augment(x, none, rng), x);
}

TEST(Augment, DropoutOneIsRejected) {
  AugmentConfig c;
  c.dropout_prob = 1.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  TrainConfig t;
  t.augment = c;
  EXPECT_THROW(t.validate(), InvalidArgument);
}

TEST(Augment, NoiseHasTheConfiguredScale) {
  const AugmentConfig c{0.1, 0.0, 0.0};
  const std::vector<double> x{1.0, -2.0, 0.5, 0.0};
  Rng a(2), b(2);
  EXPECT_EQ(augment(x, c, a), augment(x, c, b));
  std::vector<double> sum(x.size(), 0.0), sq(x.size(), 0.0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const auto y = augment(x, c, a);
    for (std::size_t j = 0; j < x.size(); ++j) {
      sum[j] += y[j] - x[j];
      sq[j] += (y[j] - x[j]) * (y[j] - x[j]);
    }
  }
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double mean = sum[j] / draws;
    const double sd = std::sqrt(sq[j] / draws - mean * mean);
    EXPECT_NEAR(sd, 0.1, 0.005) << "coordinate " << j;
  }
}

// ---------------------------------------------------------------------------
// Encoder

TEST(Encode, OutputHasUnitNorm) {
  Rng rng(3);
  Mlp net({6, 8, 4});
  net.init_random(rng);
  for (int i = 0; i < 200; ++i) {
    const Matrix x = random_matrix(1, 6, rng, 5.0);
    EXPECT_NEAR(norm2(encode(net, x.row(0))), 1.0, 1e-9);
  }
}

TEST(Encode, ZeroHiddenWeightsGiveAConstantEmbedding) {
  Rng rng(4);
  Mlp net({3, 4, 2});
  net.init_random(rng);
  auto p = net.params();
  std::fill(p.begin() + net.weight_offset(0), p.begin() + net.bias_offset(0), 0.0);
  const std::vector<double> b{0.3, -0.7, 1.1, 0.05};
  std::copy(b.begin(), b.end(), p.begin() + net.bias_offset(0));
  std::fill(p.begin() + net.bias_offset(1), p.end(), 0.0);

  std::vector<double> expected(2, 0.0);
  for (std::size_t o = 0; o < 2; ++o) {
    for (std::size_t h = 0; h < 4; ++h) expected[o] += p[net.weight_offset(1) + o * 4 + h] * std::tanh(b[h]);
  }
  const double n = norm2(expected);
  for (double& v : expected) v /= n;
  for (int i = 0; i < 20; ++i) {
    const Matrix x = random_matrix(1, 3, rng, 3.0);
    const auto e = encode(net, x.row(0));
    EXPECT_NEAR(e[0], expected[0], 1e-12);
    EXPECT_NEAR(e[1], expected[1], 1e-12);
  }
}

TEST(Encode, SmallPerturbationsMoveTheEmbeddingProportionally) {
  Rng rng(5);
  Mlp net({6, 8, 4});
  net.init_random(rng);
  const auto p = net.params();
  // Lipschitz bound of normalize(W2 tanh(W1 x + b1) + b2) near x: |W1|_F |W2|_F / |z(x)|,
  // doubled to cover the second-order term.
  auto frob = [&](std::size_t l) {
    double s = 0;
    for (std::size_t i = net.weight_offset(l); i < net.bias_offset(l); ++i) s += p[i] * p[i];
    return std::sqrt(s);
  };
  for (int i = 0; i < 50; ++i) {
    const Matrix x = random_matrix(1, 6, rng);
    std::vector<double> y(x.data);
    const auto dir = random_unit(6, rng);
    for (std::size_t j = 0; j < 6; ++j) y[j] += 1e-7 * dir[j];
    const double lipschitz = 2.0 * frob(0) * frob(1) / norm2(net.forward(x.row(0)));
    const auto a = encode(net, x.row(0)), b = encode(net, y);
    std::vector<double> d(4);
    for (std::size_t j = 0; j < 4; ++j) d[j] = a[j] - b[j];
    EXPECT_LE(norm2(d), lipschitz * 1e-7);
  }
}

// ---------------------------------------------------------------------------
// InfoNCE

TEST(InfoNce, UniformSimilarityGivesLogOnePlusK) {
  for (std::size_t k : {1u, 2u, 8u, 128u, 1024u}) {
    const std::vector<double> q{1.0, 0.0}, pos{0.0, 1.0};
    Matrix neg(k, 2);
    for (std::size_t j = 0; j < k; ++j) neg(j, 1) = j % 2 ? -1.0 : 1.0;
    EXPECT_NEAR(info_nce_loss(q, pos, neg, 0.07), std::log(1.0 + k), 1e-9) << "K=" << k;
  }
}

TEST(InfoNce, PerfectSeparationIsZero) {
  for (std::size_t k : {1u, 8u, 128u, 1024u}) {
    const std::vector<double> q{1.0, 0.0}, pos{1.0, 0.0};
    Matrix neg(k, 2);
    for (std::size_t j = 0; j < k; ++j) neg(j, 0) = -1.0;
    const double loss = info_nce_loss(q, pos, neg, 0.07);
    EXPECT_LT(loss, 1e-9);
    EXPECT_GE(loss, 0.0);
  }
}

TEST(InfoNce, MatchesSoftmaxCrossEntropyOracle) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const auto q = random_unit(16, rng), pos = random_unit(16, rng);
    Matrix neg(8, 16);
    std::vector<double> logits{dot(q, pos) / 0.07};
    for (std::size_t j = 0; j < 8; ++j) {
      const auto k = random_unit(16, rng);
      std::copy(k.begin(), k.end(), neg.row(j).begin());
      logits.push_back(dot(q, k) / 0.07);
    }
    EXPECT_NEAR(info_nce_loss(q, pos, neg, 0.07), oracle::softmax_cross_entropy(logits), 1e-10);
  }
}

TEST(InfoNce, RejectsDegenerateInputs) {
  const std::vector<double> q{1.0, 0.0};
  EXPECT_THROW(info_nce_loss(q, q, Matrix(0, 2), 0.07), InvalidArgument);
  EXPECT_THROW(info_nce_loss(q, q, Matrix(1, 2), 0.0), InvalidArgument);
  EXPECT_THROW(info_nce_loss(q, q, Matrix(1, 3), 0.07), InvalidArgument);
}

// ---------------------------------------------------------------------------
// Loss and gradient

TEST(LossAndGradient, MatchesFiniteDifferences) {
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(1000 + trial);
    EncoderState state = EncoderState::create(6, 8, 4, 16, 0.07 + 0.2 * (trial % 3), 0.999, rng);
    // Move the key encoder away from the query encoder and partly fill the queue.
    for (double& v : state.key.params()) v += std::normal_distribution<double>(0.0, 0.1)(rng);
    for (int j = 0; j < trial % 20; ++j) state.queue.push(random_unit(4, rng));
    const BatchViews views{random_matrix(8, 6, rng), random_matrix(8, 6, rng)};

    const LossGradient lg = loss_and_gradient(state, views);
    ASSERT_EQ(lg.gradient.size(), state.query.num_params());
    std::vector<double> theta(state.query.params().begin(), state.query.params().end());
    const auto fd = oracle::central_difference(
        [&](const std::vector<double>& p) {
          EncoderState probe = state;
          std::copy(p.begin(), p.end(), probe.query.params().begin());
          return loss_and_gradient(probe, views).loss;
        },
        theta, 1e-5);
    EXPECT_LT(oracle::max_relative_error(lg.gradient, fd), 1e-4) << "trial " << trial;
  }
}

TEST(LossAndGradient, KeysComeFromTheKeyEncoderOnly) {
  Rng rng(7);
  EncoderState state = EncoderState::create(6, 8, 4, 16, 0.07, 0.999, rng);
  const BatchViews views{random_matrix(8, 6, rng), random_matrix(8, 6, rng)};
  const LossGradient a = loss_and_gradient(state, views);
  EXPECT_EQ(a.keys, encode_all(state.key, views.key_views));
  // Changing the query encoder leaves the keys, and so the enqueued entries, untouched.
  for (double& v : state.query.params()) v *= 1.5;
  EXPECT_EQ(loss_and_gradient(state, views).keys, a.keys);
}

TEST(LossAndGradient, SmallStepDecreasesLoss) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    EncoderState state = EncoderState::create(6, 8, 4, 16, 0.2, 0.999, rng);
    const BatchViews views{random_matrix(8, 6, rng), random_matrix(8, 6, rng)};
    const LossGradient before = loss_and_gradient(state, views);
    auto p = state.query.params();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= 1e-3 * before.gradient[i];
    EXPECT_LT(loss_and_gradient(state, views).loss, before.loss);
  }
}

// ---------------------------------------------------------------------------
// Momentum encoder and queue

TEST(Momentum, LimitsAndArithmetic) {
  std::vector<double> key{0.0, 2.0}, query{1.0, -1.0};
  momentum_update(key, query, 1.0);
  EXPECT_EQ(key, (std::vector<double>{0.0, 2.0}));
  momentum_update(key, query, 0.0);
  EXPECT_EQ(key, query);
  std::vector<double> zero{0.0};
  const std::vector<double> one{1.0};
  momentum_update(zero, one, 0.999);
  EXPECT_NEAR(zero[0], 0.001, 1e-15);
}

TEST(Momentum, KeyStaysInTheHullOfQueryHistory) {
  Rng rng(9);
  std::normal_distribution<double> z;
  std::vector<double> key(5), lo(5), hi(5);
  for (std::size_t i = 0; i < 5; ++i) lo[i] = hi[i] = key[i] = z(rng);
  for (int step = 0; step < 500; ++step) {
    std::vector<double> query(5);
    for (std::size_t i = 0; i < 5; ++i) {
      query[i] = z(rng);
      lo[i] = std::min(lo[i], query[i]);
      hi[i] = std::max(hi[i], query[i]);
    }
    momentum_update(key, query, 0.9);
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_GE(key[i], lo[i] - 1e-12);
      EXPECT_LE(key[i], hi[i] + 1e-12);
    }
  }
}

TEST(NegativeQueue, FifoEviction) {
  NegativeQueue q(3, 1);
  for (double v : {1.0, 2.0}) q.push(std::vector<double>{v});
  EXPECT_EQ(q.size(), 2u);
  EXPECT_EQ(q.contents().data, (std::vector<double>{1.0, 2.0}));
  for (double v : {3.0, 4.0, 5.0}) q.push(std::vector<double>{v});
  EXPECT_EQ(q.size(), 3u);
  EXPECT_EQ(q.contents().data, (std::vector<double>{3.0, 4.0, 5.0}));
  EXPECT_EQ(q.at(0)[0], 3.0);
  EXPECT_THROW(q.push(std::vector<double>{1.0, 2.0}), InvalidArgument);
}

// ---------------------------------------------------------------------------
// Training

TEST(Train, StepCountFollowsTheSchedule) {
  CohortConfig cc;
  cc.n_patients = 8;
  cc.tiles_per_slide = 32;
  const Cohort cohort = generate_cohort(cc);
  ASSERT_EQ(cohort.tiles.size(), 256u);
  TrainConfig c = small_train_config();
  c.epochs = 1;
  c.batch = BatchSpec::parse("random", 128);
  const TrainResult r = train(cohort.tiles, c);
  EXPECT_EQ(r.steps, 2u);
  EXPECT_EQ(r.loss_trace.size(), 1u);
  EXPECT_EQ(r.state.queue.size(), 256u);
}

TEST(Train, ZeroEpochsReturnsInitialState) {
  const Cohort cohort = generate_cohort(CohortConfig{.n_patients = 4});
  TrainConfig c = small_train_config();
  c.epochs = 0;
  const TrainResult r = train(cohort.tiles, c);
  EXPECT_EQ(r.steps, 0u);
  EXPECT_TRUE(r.loss_trace.empty());
  EXPECT_EQ(r.state.query, r.state.key);
}

TEST(Train, SameSeedIsBitIdentical) {
  CohortConfig cc;
  cc.n_patients = 16;
  const Cohort cohort = generate_cohort(cc);
  TrainConfig c = small_train_config();
  c.epochs = 3;
  const TrainResult a = train(cohort.tiles, c), b = train(cohort.tiles, c);
  EXPECT_EQ(a.state.query, b.state.query);
  EXPECT_EQ(a.state.key, b.state.key);
  EXPECT_EQ(a.loss_trace, b.loss_trace);
  c.seed += 1;
  EXPECT_FALSE(train(cohort.tiles, c).state.query == a.state.query);
}

TEST(Train, LossDecreasesOnTheSyntheticCohort) {
  CohortConfig cc;
  cc.n_patients = 40;
  const Cohort cohort = generate_cohort(cc);
  const TrainResult r = train(cohort.tiles, small_train_config());
  ASSERT_EQ(r.loss_trace.size(), 20u);
  EXPECT_LT(r.loss_trace.back(), r.loss_trace.front());
  // Allow fluctuations, but the second half must sit below the first on average.
  double first = 0, second = 0;
  for (std::size_t i = 0; i < 10; ++i) first += r.loss_trace[i], second += r.loss_trace[10 + i];
  EXPECT_LT(second, first);
}

TEST(Train, CheckpointRoundTrip) {
  CohortConfig cc;
  cc.n_patients = 8;
  const Cohort cohort = generate_cohort(cc);
  TrainConfig c = small_train_config();
  c.epochs = 2;
  const TrainResult r = train(cohort.tiles, c);
  testing_support::TempDir dir;
  save_checkpoint(r.state, dir / "enc.txt");
  const EncoderState back = load_checkpoint(dir / "enc.txt");
  EXPECT_EQ(back.query, r.state.query);
  EXPECT_EQ(back.key, r.state.key);
  EXPECT_EQ(back.queue, r.state.queue);
  EXPECT_EQ(back.temperature, r.state.temperature);
  EXPECT_EQ(back.momentum, r.state.momentum);
  EXPECT_EQ(back.epoch, r.state.epoch);

  testing_support::write_file(dir / "bad.txt", "not a checkpoint\n");
  EXPECT_THROW(load_checkpoint(dir / "bad.txt"), ParseError);
}

// ---------------------------------------------------------------------------
// Slide-identity probe

TEST(SlideProbe, IdenticalEmbeddingsScoreChance) {
  const std::size_t slides = 10, per_slide = 20;
  Matrix e(slides * per_slide, 4, 0.5);
  std::vector<std::int64_t> ids;
  for (std::size_t s = 0; s < slides; ++s) ids.insert(ids.end(), per_slide, static_cast<std::int64_t>(s));
  const ProbeResult r = slide_probe(e, ids, 1);
  EXPECT_DOUBLE_EQ(r.chance, 0.1);
  const double se = std::sqrt(r.chance * (1 - r.chance) / r.n_test);
  EXPECT_NEAR(r.accuracy, r.chance, 3 * se);
}

TEST(SlideProbe, OneHotEmbeddingsScorePerfectly) {
  const std::size_t slides = 6;
  Matrix e(slides * 10, slides);
  std::vector<std::int64_t> ids;
  for (std::size_t i = 0; i < e.rows; ++i) {
    e(i, i / 10) = 1.0;
    ids.push_back(static_cast<std::int64_t>(40 + i / 10));
  }
  const ProbeResult r = slide_probe(e, ids, 2);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.n_slides, slides);
  EXPECT_EQ(r.n_test, 30u);
}

TEST(SlideProbe, NeedsTwoUsableSlides) {
  Matrix e(3, 2);
  const std::vector<std::int64_t> ids{1, 1, 2};
  EXPECT_THROW(slide_probe(e, ids, 3), InvalidArgument);
}
