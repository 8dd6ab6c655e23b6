#include <gtest/gtest.h>

#include <cmath>

#include "condssl/linalg.hpp"
#include "condssl/mlp.hpp"
#include "support/oracles.hpp"

using namespace condssl;

TEST(Mlp, ParameterLayout) {
  const Mlp net({3, 5, 2});
  EXPECT_EQ(net.num_params(), 3u * 5 + 5 + 5 * 2 + 2);
  EXPECT_EQ(net.weight_offset(0), 0u);
  EXPECT_EQ(net.bias_offset(0), 15u);
  EXPECT_EQ(net.weight_offset(1), 20u);
  EXPECT_EQ(net.bias_offset(1), 30u);
}

TEST(Mlp, AffineForwardByHand) {
  Mlp net({2, 1});
  auto p = net.params();
  p[0] = 2.0, p[1] = -1.0, p[2] = 0.5;
  EXPECT_EQ(net.forward(std::vector<double>{3.0, 4.0}), std::vector<double>{2.5});
}

TEST(Mlp, HiddenLayerUsesTanh) {
  Mlp net({1, 1, 1});
  auto p = net.params();
  p[0] = 1.0, p[1] = 0.5, p[2] = 3.0, p[3] = -1.0;
  EXPECT_NEAR(net.forward(std::vector<double>{0.2})[0], 3.0 * std::tanh(0.7) - 1.0, 1e-15);
}

TEST(Mlp, BackwardMatchesFiniteDifferences) {
  Rng rng(1);
  std::normal_distribution<double> z;
  for (int trial = 0; trial < 50; ++trial) {
    Mlp net({4, 6, 5, 3});
    net.init_random(rng);
    std::vector<double> x(4), w(3);
    for (double& v : x) v = z(rng);
    for (double& v : w) v = z(rng);
    // Scalar objective: w . f(x).
    Mlp::Workspace ws;
    net.forward(x, ws);
    std::vector<double> grad(net.num_params(), 0.0), grad_x(4, 0.0);
    net.backward(ws, w, grad, grad_x);

    std::vector<double> theta(net.params().begin(), net.params().end());
    const auto fd = oracle::central_difference(
        [&](const std::vector<double>& p) {
          Mlp probe = net;
          std::copy(p.begin(), p.end(), probe.params().begin());
          return dot(w, probe.forward(x));
        },
        theta, 1e-6);
    EXPECT_LT(oracle::max_relative_error(grad, fd), 1e-6);
    const auto fd_x = oracle::central_difference([&](const std::vector<double>& in) { return dot(w, net.forward(in)); },
                                                 x, 1e-6);
    EXPECT_LT(oracle::max_relative_error(grad_x, fd_x), 1e-6);
  }
}

TEST(Mlp, BackwardAccumulates) {
  Rng rng(2);
  Mlp net({2, 3, 1});
  net.init_random(rng);
  Mlp::Workspace ws;
  net.forward(std::vector<double>{0.1, -0.4}, ws);
  std::vector<double> once(net.num_params(), 0.0), twice(net.num_params(), 0.0);
  const std::vector<double> g{1.0};
  net.backward(ws, g, once);
  net.backward(ws, g, twice);
  net.backward(ws, g, twice);
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_NEAR(twice[i], 2.0 * once[i], 1e-15);
}

TEST(Mlp, InitIsSeededAndBounded) {
  Rng a(3), b(3);
  Mlp x({10, 20, 5}), y({10, 20, 5});
  x.init_random(a);
  y.init_random(b);
  EXPECT_TRUE(x == y);
  const double limit0 = std::sqrt(6.0 / 30.0);
  for (std::size_t i = x.weight_offset(0); i < x.bias_offset(0); ++i) EXPECT_LE(std::abs(x.params()[i]), limit0);
  for (std::size_t i = x.bias_offset(0); i < x.weight_offset(1); ++i) EXPECT_EQ(x.params()[i], 0.0);
}
