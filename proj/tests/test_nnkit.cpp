// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

namespace {

using namespace uamt;
using nnkit::Grid;
using nnkit::ParamSet;
using nnkit::RngStream;

ParamSet conv_params(std::size_t co, std::size_t ci, std::size_t k, double w, double b) {
  ParamSet p;
  p.add("w", {co, ci, k, k}, w);
  p.add("b", {co}, b);
  return p;
}

TEST(ParamSet, RejectsDuplicateNamesAndEmptyShapes) {
  ParamSet p;
  p.add("a", {2, 3});
  EXPECT_EQ(p.at("a").values.size(), 6u);
  EXPECT_THROW(p.add("a", {1}), ConfigError);
  EXPECT_THROW(p.add("b", {}), ConfigError);
  EXPECT_THROW(p.add("c", {0}), ConfigError);
  EXPECT_THROW((void)p.at("missing"), ConfigError);
}

TEST(ParamSet, AlignmentNeedsNamesShapesAndOrder) {
  ParamSet a, b, c;
  a.add("x", {2});
  a.add("y", {3});
  b.add("x", {2});
  b.add("y", {3}, 1.0);
  c.add("y", {3});
  c.add("x", {2});
  EXPECT_TRUE(nnkit::aligned(a, b));
  EXPECT_FALSE(nnkit::aligned(a, c));
  EXPECT_THROW(nnkit::ema_update(a, c, 0.5), ConfigError);
}

TEST(ParamSet, CheckpointRoundTripIsBitExact) {
  auto p = detector::init_detector_params({}, 5);
  const auto bytes = nnkit::encode_checkpoint(p);
  EXPECT_EQ(nnkit::decode_checkpoint(bytes), p);
  EXPECT_EQ(nnkit::encode_checkpoint(nnkit::decode_checkpoint(bytes)), bytes);
  EXPECT_THROW(nnkit::decode_checkpoint(bytes.substr(0, bytes.size() - 3)), DataError);
  EXPECT_THROW(nnkit::decode_checkpoint("XXXX" + bytes.substr(4)), DataError);
}

TEST(Rng, StreamsArePureFunctionsOfSeedIdAndCounter) {
  RngStream a(1, 2), b(1, 2), c(1, 3);
  const auto x = a.next_u64();
  EXPECT_EQ(x, b.next_u64());
  EXPECT_NE(x, c.next_u64());
  RngStream d(1, 2, 1);
  EXPECT_EQ(a.next_u64(), d.next_u64());
  EXPECT_EQ(a.split(4).next_u64(), b.split(4).next_u64());
}

TEST(Rng, UniformMomentsAreSane) {
  RngStream r(9, 0);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    s += u;
    s2 += u * u;
  }
  EXPECT_NEAR(s / n, 0.5, 0.005);
  EXPECT_NEAR(s2 / n - (s / n) * (s / n), 1.0 / 12.0, 0.002);
}

TEST(Conv2d, OneByOneIdentityKernelCopiesInput) {
  Grid in(1, 4, 5);
  for (std::size_t i = 0; i < in.values.size(); ++i) in.values[i] = 0.1 * static_cast<double>(i) - 0.7;
  const auto p = conv_params(1, 1, 1, 1.0, 0.0);
  EXPECT_EQ(nnkit::conv2d(in, p.at("w"), p.at("b"), 0), in);
}

TEST(Conv2d, ZeroKernelGivesZeros) {
  Grid in(2, 5, 5, 3.0);
  const auto p = conv_params(3, 2, 3, 0.0, 0.0);
  const auto out = nnkit::conv2d(in, p.at("w"), p.at("b"), 1);
  for (double v : out.values) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, AllOnesKernelSpreadsImpulseToThreeByThreeBlock) {
  Grid in(1, 5, 5);
  in.at(0, 2, 2) = 1.0;
  const auto p = conv_params(1, 1, 3, 1.0, 0.0);
  const auto out = nnkit::conv2d(in, p.at("w"), p.at("b"), 1);
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 5; ++x) {
      const bool block = y >= 1 && y <= 3 && x >= 1 && x <= 3;
      EXPECT_EQ(out.at(0, y, x), block ? 1.0 : 0.0) << y << "," << x;
    }
}

TEST(Conv2d, DilatedKernelSamplesSpacedTaps) {
  Grid in(1, 9, 9);
  in.at(0, 4, 4) = 1.0;
  const auto p = conv_params(1, 1, 3, 1.0, 0.0);
  const auto out = nnkit::conv2d(in, p.at("w"), p.at("b"), 2, 2);
  for (std::size_t y = 0; y < 9; ++y)
    for (std::size_t x = 0; x < 9; ++x) {
      const bool tap = (y == 2 || y == 4 || y == 6) && (x == 2 || x == 4 || x == 6);
      EXPECT_EQ(out.at(0, y, x), tap ? 1.0 : 0.0);
    }
  EXPECT_THROW(nnkit::conv2d(in, p.at("w"), p.at("b"), 1, 2), ConfigError);
}

TEST(Conv2d, BackwardMatchesFiniteDifferences) {
  for (int dilation : {1, 3}) {
    RngStream rng(4, static_cast<std::uint64_t>(dilation));
    Grid in(2, 7, 6);
    for (auto& v : in.values) v = rng.normal();
    Grid probe(3, 7, 6);
    for (auto& v : probe.values) v = rng.normal();
    ParamSet p;
    p.add("w", {3, 2, 3, 3});
    p.add("b", {3});
    for (auto& e : p.entries())
      for (auto& v : e.values) v = rng.normal();
    auto loss = [&](const ParamSet& q, ParamSet* g) {
      const auto out = nnkit::conv2d(in, q.at("w"), q.at("b"), dilation, dilation);
      double s = 0;
      for (std::size_t i = 0; i < out.values.size(); ++i) s += probe.values[i] * out.values[i];
      if (g != nullptr) nnkit::conv2d_backward(in, q.at("w"), dilation, probe, nullptr, g->at("w").span(), g->at("b").span(), dilation);
      return s;
    };
    const auto rep = nnkit::grad_check(loss, p);
    EXPECT_LE(rep.max_rel_error, 1e-6) << rep.worst_entry;
  }
}

TEST(Conv2d, InputGradientMatchesFiniteDifferences) {
  RngStream rng(8, 0);
  ParamSet p;
  p.add("w", {2, 1, 3, 3});
  p.add("b", {2});
  for (auto& v : p.at("w").values) v = rng.normal();
  Grid probe(2, 5, 5);
  for (auto& v : probe.values) v = rng.normal();
  // The input is wrapped as a parameter so grad_check can perturb it.
  ParamSet x;
  auto& xv = x.add("x", {1, 5, 5});
  for (auto& v : xv.values) v = rng.normal();
  auto loss = [&](const ParamSet& q, ParamSet* g) {
    Grid in(1, 5, 5);
    in.values = q.at("x").values;
    const auto out = nnkit::conv2d(in, p.at("w"), p.at("b"), 2, 2);
    double s = 0;
    for (std::size_t i = 0; i < out.values.size(); ++i) s += probe.values[i] * out.values[i];
    if (g != nullptr) {
      Grid gin(1, 5, 5);
      auto gw = p.zeros_like();
      nnkit::conv2d_backward(in, p.at("w"), 2, probe, &gin, gw.at("w").span(), gw.at("b").span(), 2);
      g->at("x").values = gin.values;
    }
    return s;
  };
  EXPECT_LE(nnkit::grad_check(loss, x).max_rel_error, 1e-6);
}

TEST(Dense, IdentityZeroAndHandMultiply) {
  ParamSet p;
  p.add("w", {2, 2});
  p.add("b", {2});
  auto& w = p.at("w");
  auto& b = p.at("b");
  w.values = {1, 0, 0, 1};
  const std::vector<double> x{3.5, -2.0};
  EXPECT_EQ(nnkit::dense(x, w, b), x);
  w.values = {0, 0, 0, 0};
  b.values = {0.25, -4.0};
  EXPECT_EQ(nnkit::dense(x, w, b), b.values);
  w.values = {1, 2, 3, 4};
  b.values = {0, 0};
  EXPECT_EQ(nnkit::dense(std::vector<double>{1, 1}, w, b), (std::vector<double>{3, 7}));
  EXPECT_THROW(nnkit::dense(std::vector<double>{1, 1, 1}, w, b), ConfigError);
}

TEST(Activations, ClosedForms) {
  EXPECT_EQ(nnkit::relu(-2.0), 0.0);
  EXPECT_EQ(nnkit::relu(3.0), 3.0);
  EXPECT_EQ(nnkit::sigmoid(0.0), 0.5);
  EXPECT_NEAR(nnkit::sigmoid(std::log(3.0)), 0.75, 1e-15);
  EXPECT_NEAR(nnkit::sigmoid(-800.0), 0.0, 1e-300);
  EXPECT_EQ(nnkit::sigmoid(800.0), 1.0);
  EXPECT_NEAR(nnkit::softplus(0.0), std::log(2.0), 1e-15);
}

TEST(Dropout, DisabledAndZeroRateAreIdentity) {
  const std::vector<double> x{1, -2, 3, 4.5};
  RngStream s(1, 1);
  auto r = nnkit::dropout(x, 0.5, s, false);
  EXPECT_EQ(r.output, x);
  EXPECT_EQ(r.mask, std::vector<double>(4, 1.0));
  r = nnkit::dropout(x, 0.0, s, true);
  EXPECT_EQ(r.output, x);
  EXPECT_THROW(nnkit::dropout(x, 1.0, s, true), ConfigError);
}

TEST(Dropout, ReplayingTheStreamReproducesTheMask) {
  std::vector<double> x(64, 1.0);
  RngStream a(7, 3), b(7, 3);
  const auto ra = nnkit::dropout(x, 0.5, a, true);
  const auto rb = nnkit::dropout(x, 0.5, b, true);
  EXPECT_EQ(ra.mask, rb.mask);
  for (double m : ra.mask) EXPECT_TRUE(m == 0.0 || m == 2.0);
  EXPECT_EQ(nnkit::apply_mask(x, ra.mask), ra.output);
}

TEST(Adam, ZeroGradientLeavesParamsAndAdvancesStep) {
  ParamSet p;
  p.add("x", {3}, 1.5);
  const auto before = p;
  nnkit::AdamState st(p);
  nnkit::adam_step(p, p.zeros_like(), st, {});
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, FirstBiasCorrectedStepHasMagnitudeLr) {
  ParamSet p, g;
  p.add("x", {1}, 0.0);
  g.add("x", {1}, 1.0);
  nnkit::AdamState st(p);
  nnkit::adam_step(p, g, st, {1e-3, 0.9, 0.999, 0.0});
  EXPECT_NEAR(p.at("x").values[0], -1e-3, 1e-15);
}

TEST(Adam, EqualRunsAreBitwiseEqual) {
  auto run = [] {
    ParamSet p;
    p.add("x", {4}, 0.3);
    nnkit::AdamState st(p);
    RngStream r(2, 2);
    for (int i = 0; i < 20; ++i) {
      auto g = p.zeros_like();
      for (auto& v : g.at("x").values) v = r.normal();
      nnkit::adam_step(p, g, st, {});
    }
    return p;
  };
  EXPECT_EQ(run(), run());
}

TEST(Ema, IdentityDegenerateAndPaperRatio) {
  ParamSet t, s;
  t.add("w", {1}, 1.0);
  s.add("w", {1}, 0.0);
  auto t1 = t;
  nnkit::ema_update(t1, s, 1.0);
  EXPECT_EQ(t1, t);
  auto t0 = t;
  nnkit::ema_update(t0, s, 0.0);
  EXPECT_EQ(t0, s);
  nnkit::ema_update(t, s, 0.999);
  EXPECT_DOUBLE_EQ(t.at("w").values[0], 0.999);
  EXPECT_THROW(nnkit::ema_update(t, s, 1.5), ConfigError);
}

TEST(Ema, ConstantStudentReplaysGeometricDecay) {
  ParamSet t, s;
  t.add("w", {1}, 1.0);
  s.add("w", {1}, 0.0);
  for (int k = 1; k <= 500; ++k) {
    nnkit::ema_update(t, s, 0.999);
    ASSERT_NEAR(t.at("w").values[0], std::pow(0.999, k), 1e-12) << k;
  }
}

TEST(GradCheck, LinearModelQuadraticLossIsExact) {
  ParamSet p;
  auto& w = p.add("w", {3}, 0.0);
  w.values = {0.5, -1.0, 2.0};
  const std::vector<double> x{1.0, 2.0, -0.5}, y{3.0};
  auto loss = [&](const ParamSet& q, ParamSet* g) {
    double pred = 0;
    for (int i = 0; i < 3; ++i) pred += q.at("w").values[i] * x[i];
    const double r = pred - y[0];
    if (g != nullptr)
      for (int i = 0; i < 3; ++i) g->at("w").values[i] = 2 * r * x[i];
    return r * r;
  };
  EXPECT_LT(nnkit::grad_check(loss, p).max_rel_error, 1e-8);
}

TEST(GradCheck, ReportsAWrongGradient) {
  ParamSet p;
  p.add("w", {2}, 1.0);
  auto loss = [](const ParamSet& q, ParamSet* g) {
    const auto& v = q.at("w").values;
    if (g != nullptr) g->at("w").values = {3 * v[0], 2 * v[1]};
    return v[0] * v[0] + v[1] * v[1];
  };
  const auto rep = nnkit::grad_check(loss, p);
  EXPECT_GT(rep.max_rel_error, 0.1);
  EXPECT_EQ(rep.worst_entry, "w");
  EXPECT_EQ(rep.worst_index, 0u);
}

}  // namespace
