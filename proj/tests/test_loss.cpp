#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"

using namespace unisync;

namespace {

double bce_reference(const std::vector<double>& p, const std::vector<int>& y) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += y[i] ? -std::log(p[i]) : -std::log(1 - p[i]);
  return s / static_cast<double>(p.size());
}

ModelWeights single_weight(std::vector<float> v) {
  ModelWeights w;
  const std::size_t n = v.size();
  w.entries.push_back({"w", ParamRole::weight, Tensor({n}, std::move(v))});
  w.entries.push_back({"b", ParamRole::bias, Tensor({1}, {7.0f})});
  w.entries.push_back({"g", ParamRole::bn_gamma, Tensor({1}, {5.0f})});
  return w;
}

double graph_margin_bce(const std::vector<double>& p, const std::vector<int>& y, const std::vector<double>& m,
                        std::vector<double>* grad = nullptr) {
  Graph<double> g;
  const NodeId pn = g.leaf(BasicTensor<double>({p.size()}, p), true);
  const NodeId l = ops::margin_bce(g, pn, y, m, 1e-7);
  if (grad) {
    g.backward(l);
    const auto gr = g.grad(pn);
    grad->assign(gr.values().begin(), gr.values().end());
  }
  return g.value(l)[0];
}

}  // namespace

TEST(MarginBce, PerfectPositiveIsZero) {
  EXPECT_NEAR(margin_bce(std::vector<double>{1.0}, std::vector<int>{1}, std::vector<double>{0.0}), 0.0, 1e-6);
}

TEST(MarginBce, SubMarginNegativeIsZero) {
  EXPECT_NEAR(margin_bce(std::vector<double>{0.2}, std::vector<int>{0}, std::vector<double>{0.3}), 0.0, 1e-6);
}

TEST(MarginBce, AboveMarginNegative) {
  EXPECT_NEAR(margin_bce(std::vector<double>{0.8}, std::vector<int>{0}, std::vector<double>{0.3}), 0.693147, 1e-6);
}

TEST(MarginBce, MixedBatch) {
  const double expected = (-std::log(0.9) + std::log(2.0)) / 2;
  EXPECT_NEAR(expected, 0.3992538, 1e-7);
  EXPECT_NEAR(margin_bce(std::vector<double>{0.9, 0.8}, std::vector<int>{1, 0}, std::vector<double>{0.0, 0.3}),
              expected, 1e-6);
}

TEST(MarginBce, GraphOpMatchesScalarForm) {
  std::mt19937_64 g(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> p(8), m(8);
    std::vector<int> y(8);
    for (std::size_t i = 0; i < 8; ++i) {
      p[i] = u(g);
      y[i] = u(g) < 0.5;
      m[i] = y[i] ? 0.0 : 0.9 * u(g);
    }
    EXPECT_NEAR(graph_margin_bce(p, y, m), margin_bce(p, y, m), 1e-12);
  }
}

TEST(MarginBce, Errors) {
  EXPECT_THROW(margin_bce(std::vector<double>{0.5, 0.5}, std::vector<int>{1}, std::vector<double>{0.0}), Error);
  EXPECT_THROW(margin_bce(std::vector<double>{}, std::vector<int>{}, std::vector<double>{}), Error);
  EXPECT_THROW(margin_bce(std::vector<double>{1.2}, std::vector<int>{1}, std::vector<double>{0.0}), Error);
  EXPECT_THROW(margin_bce(std::vector<double>{-0.1}, std::vector<int>{0}, std::vector<double>{0.0}), Error);
}

TEST(MarginBce, ClampedExtremesStayFinite) {
  const double a = margin_bce(std::vector<double>{0.0}, std::vector<int>{1}, std::vector<double>{0.0});
  const double b = margin_bce(std::vector<double>{1.0}, std::vector<int>{0}, std::vector<double>{0.0});
  EXPECT_NEAR(a, -std::log(1e-7), 1e-9);
  EXPECT_NEAR(b, -std::log(1e-7), 1e-9);
}

TEST(MarginBce, EqualsPlainBceWithoutMargins) {
  std::mt19937_64 g(2);
  std::uniform_real_distribution<double> u(1e-3, 1 - 1e-3);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + t % 17;
    std::vector<double> p(n), m(n, 0.0);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = u(g);
      y[i] = u(g) < 0.5;
    }
    ASSERT_NEAR(margin_bce(p, y, m), bce_reference(p, y), 1e-6);
  }
}

TEST(MarginBce, Monotone) {
  std::mt19937_64 g(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 500; ++t) {
    double p1 = u(g), p2 = u(g);
    if (p1 > p2) std::swap(p1, p2);
    const double m = 0.9 * u(g);
    EXPECT_LE(margin_bce(std::vector<double>{p1}, std::vector<int>{0}, std::vector<double>{m}),
              margin_bce(std::vector<double>{p2}, std::vector<int>{0}, std::vector<double>{m}));
    EXPECT_GE(margin_bce(std::vector<double>{p1}, std::vector<int>{1}, std::vector<double>{0.0}),
              margin_bce(std::vector<double>{p2}, std::vector<int>{1}, std::vector<double>{0.0}));
  }
}

TEST(MarginBce, NegativesBelowMarginContributeExactlyZero) {
  std::mt19937_64 g(4);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 500; ++t) {
    const double m = u(g) * 0.99, p = m * u(g);
    EXPECT_EQ(margin_bce(std::vector<double>{p}, std::vector<int>{0}, std::vector<double>{m}), 0.0);
  }
}

TEST(MarginBce, FlatGradientInsideMargin) {
  std::vector<double> grad;
  graph_margin_bce({0.1, 0.25, 0.6, 0.9}, {0, 0, 0, 1}, {0.3, 0.3, 0.3, 0.0}, &grad);
  EXPECT_EQ(grad[0], 0.0);
  EXPECT_EQ(grad[1], 0.0);
  EXPECT_GT(grad[2], 0.0);
  EXPECT_LT(grad[3], 0.0);
}

TEST(MarginBce, GradientMatchesFiniteDifferences) {
  std::mt19937_64 g(5);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> p(6), m(6);
    std::vector<int> y(6);
    for (std::size_t i = 0; i < 6; ++i) {
      y[i] = i % 2;
      m[i] = y[i] ? 0.0 : 0.3;
      p[i] = u(g);
      if (!y[i] && std::abs(p[i] - m[i]) < 1e-3) p[i] += 0.01;
    }
    std::vector<double> grad;
    graph_margin_bce(p, y, m, &grad);
    for (std::size_t i = 0; i < 6; ++i) {
      auto up = p, down = p;
      up[i] += 1e-6;
      down[i] -= 1e-6;
      const double fd = (margin_bce(up, y, m) - margin_bce(down, y, m)) / 2e-6;
      EXPECT_LE(ts::rel_error(grad[i], fd, 1e-8), 1e-5);
    }
  }
}

TEST(L2Penalty, Examples) {
  EXPECT_EQ(l2_penalty(single_weight({3, 4}), 0.0), 0.0);
  EXPECT_DOUBLE_EQ(l2_penalty(single_weight({3, 4}), 0.5), 12.5);
}

TEST(L2Penalty, HomogeneousOfDegreeTwo) {
  const auto cfg = ts::tiny_encoder();
  auto w = init_weights(cfg, 6);
  const double base = l2_penalty(w, 1e-3);
  for (auto& e : w.entries)
    for (auto& v : e.value.values()) v *= 2;
  EXPECT_NEAR(l2_penalty(w, 1e-3), 4 * base, 1e-9 * base);
}

TEST(L2Penalty, IgnoresBiasesAndBatchnorm) {
  auto w = single_weight({3, 4});
  w.entries[1].value[0] = 100;
  w.entries[2].value[0] = -100;
  EXPECT_DOUBLE_EQ(l2_penalty(w, 0.5), 12.5);
}

TEST(TotalLoss, ZeroLambdaReducesToMarginBce) {
  const auto cfg = ts::tiny_encoder();
  auto w = init_weights(cfg, 7);
  Graph<double> g;
  ParamNodes<double> params(g, true);
  auto wd = w.cast<double>();
  const NodeId p = g.leaf(BasicTensor<double>({3}, {0.9, 0.8, 0.2}), true);
  const NodeId l = total_loss(g, p, {1, 0, 0}, {0.0, 0.3, 0.3}, params, wd, LossConfig{0.0, 1e-7});
  EXPECT_DOUBLE_EQ(g.value(l)[0], margin_bce(std::vector<double>{0.9, 0.8, 0.2}, std::vector<int>{1, 0, 0},
                                             std::vector<double>{0.0, 0.3, 0.3}));
}

TEST(TotalLoss, PerfectBatchWithoutPenaltyIsZero) {
  auto w = single_weight({3, 4}).cast<double>();
  Graph<double> g;
  ParamNodes<double> params(g, true);
  const NodeId p = g.leaf(BasicTensor<double>({3}, {1.0, 0.1, 0.0}), true);
  const NodeId l = total_loss(g, p, {1, 0, 0}, {0.0, 0.3, 0.7}, params, w, LossConfig{0.0, 1e-7});
  EXPECT_EQ(g.value(l)[0], 0.0);
}

TEST(TotalLoss, AddsPenaltyAndItsGradient) {
  auto w = single_weight({3, 4}).cast<double>();
  Graph<double> g;
  ParamNodes<double> params(g, true);
  const NodeId p = g.leaf(BasicTensor<double>({1}, {0.9}), true);
  const NodeId l = total_loss(g, p, {1}, {0.0}, params, w, LossConfig{0.5, 1e-7});
  EXPECT_NEAR(g.value(l)[0], -std::log(0.9) + 12.5, 1e-12);
  g.backward(l);
  const auto gw = g.grad(params.get(w, 0));
  EXPECT_DOUBLE_EQ(gw[0], 3.0);
  EXPECT_DOUBLE_EQ(gw[1], 4.0);
}

TEST(TotalLoss, RejectsPositiveMarginAndBadConfig) {
  auto w = single_weight({1}).cast<double>();
  Graph<double> g;
  ParamNodes<double> params(g, true);
  const NodeId p = g.leaf(BasicTensor<double>({1}, {0.5}), true);
  EXPECT_THROW(total_loss(g, p, {1}, {0.3}, params, w, LossConfig{}), Error);
  EXPECT_THROW(total_loss(g, p, {1}, {0.0}, params, w, LossConfig{-1.0, 1e-7}), Error);
  EXPECT_THROW(total_loss(g, p, {1}, {0.0}, params, w, LossConfig{0.0, 0.1}), Error);
  EXPECT_THROW(total_loss(g, p, {2}, {0.0}, params, w, LossConfig{}), Error);
}
