#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "karat/error.hpp"
#include "karat/finite_diff.hpp"
#include "karat/karat_attention.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace karat;
using namespace karat::attention;
using test_support::random_tensor;

namespace {

using Coeffs = std::vector<std::vector<std::vector<double>>>;

Coeffs nested(const Tensor& t) {
  const std::size_t rows = t.shape()[0], cols = t.shape()[1], np = t.shape()[2];
  Coeffs out(rows, std::vector<std::vector<double>>(cols));
  for (std::size_t p = 0; p < rows; ++p) {
    for (std::size_t q = 0; q < cols; ++q) {
      const std::size_t base = (p * cols + q) * np;
      out[p][q].assign(t.values().begin() + base, t.values().begin() + base + np);
    }
  }
  return out;
}

KArAtConfig fourier_cfg(Layout layout, int rank, int grid = 3) {
  KArAtConfig cfg;
  cfg.basis.grid_size = grid;
  cfg.layout = layout;
  cfg.rank = rank;
  return cfg;
}

// Row-by-row composition of the scalar oracles for every layout.
oracle::Mat oracle_activate(const Tensor& a, const KArAtConfig& cfg, const OperatorParams& p) {
  const std::size_t n = a.rows();
  const int g = cfg.basis.grid_size;
  const auto phi1 = nested(p.phi1);
  oracle::Mat out;
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<double> row(a.values().begin() + k * n, a.values().begin() + (k + 1) * n);
    std::vector<double> y;
    switch (cfg.layout) {
      case Layout::FullRank:
        y = oracle::fourier_operator(phi1, row, g);
        break;
      case Layout::PhiThenW: {
        const auto z = oracle::fourier_operator(phi1, row, g);
        const auto w = oracle::from_flat(p.projector.values(), n, z.size());
        y = oracle::to_flat(oracle::matmul(w, oracle::transpose({z})));
        break;
      }
      case Layout::WThenPhi: {
        const auto w = oracle::from_flat(p.projector.values(), p.projector.rows(), n);
        const auto z = oracle::to_flat(oracle::matmul(w, oracle::transpose({row})));
        y = oracle::fourier_operator(phi1, z, g);
        break;
      }
      case Layout::PhiPhi:
        y = oracle::fourier_operator(nested(p.phi2), oracle::fourier_operator(phi1, row, g), g);
        break;
    }
    out.push_back(y);
  }
  return out;
}

std::mt19937_64 rng_for(std::uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace

TEST(ApplyOperator, ZeroCoefficientsGiveZero) {
  basis::BasisSpec spec;
  const Tensor coeffs(Shape{3, 4, 6}, 0.0);
  const std::vector<double> row{0.3, -1.0, 2.0, 0.1};
  for (double v : apply_operator(spec, coeffs, row)) EXPECT_EQ(v, 0.0);
}

TEST(ApplyOperator, TwoSinesAtHalfPi) {
  basis::BasisSpec spec;
  spec.grid_size = 1;
  const Tensor coeffs(Shape{1, 2, 2}, std::vector<double>{0, 1, 0, 1});
  const std::vector<double> row{std::numbers::pi / 2, std::numbers::pi / 2};
  EXPECT_DOUBLE_EQ(apply_operator(spec, coeffs, row)[0], 2.0);
}

TEST(ApplyOperator, MatchesDoubleLoop) {
  basis::BasisSpec spec;
  const Tensor coeffs = random_tensor({4, 7, 6}, 1);
  const auto row = test_support::normal_values(7, 2);
  const auto got = apply_operator(spec, coeffs, row);
  const auto expect = oracle::fourier_operator(nested(coeffs), row, 3);
  for (std::size_t p = 0; p < 4; ++p) EXPECT_NEAR(got[p], expect[p], 1e-12);
  EXPECT_THROW(apply_operator(spec, coeffs, std::vector<double>(6, 0.0)), DimensionError);
}

TEST(KArAtActivate, ZeroCoefficientsGiveZeroOrUniform) {
  auto cfg = fourier_cfg(Layout::PhiThenW, 2);
  auto rng = rng_for(3);
  auto p = init_operator(cfg, 5, rng);
  for (double& v : p.phi1.mutable_data()) v = 0.0;
  const Tensor a = random_tensor({5, 5}, 4);
  for (double v : karat_activate(a, cfg, p).values()) EXPECT_EQ(v, 0.0);
  cfg.project_simplex = true;
  for (double v : karat_activate(a, cfg, p).values()) EXPECT_DOUBLE_EQ(v, 0.2);
}

TEST(KArAtActivate, FullRankEqualsIdentityProjectorBitForBit) {
  const std::size_t n = 4;
  auto full = fourier_cfg(Layout::FullRank, 4);
  auto low = fourier_cfg(Layout::PhiThenW, 4);
  auto rng = rng_for(5);
  const auto pf = init_operator(full, n, rng);
  OperatorParams pl;
  pl.phi1 = pf.phi1;
  pl.projector = Tensor(Shape{n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) pl.projector.mutable_data()[i * n + i] = 1.0;
  const Tensor a = random_tensor({n, n}, 6);
  EXPECT_EQ(karat_activate(a, full, pf).values(), karat_activate(a, low, pl).values());
}

TEST(KArAtActivate, EveryLayoutMatchesComposedOracle) {
  for (Layout layout : {Layout::FullRank, Layout::PhiThenW, Layout::WThenPhi, Layout::PhiPhi}) {
    const auto cfg = fourier_cfg(layout, 3);
    auto rng = rng_for(7);
    const auto p = init_operator(cfg, 8, rng);
    const Tensor a = random_tensor({8, 8}, 8);
    const auto got = karat_activate(a, cfg, p).values();
    const auto expect = oracle::to_flat(oracle_activate(a, cfg, p));
    ASSERT_EQ(got.size(), expect.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_NEAR(got[i], expect[i], 1e-12 * (1 + std::abs(expect[i]))) << to_string(layout);
    }
  }
}

TEST(KArAtActivate, ProjectionPutsRowsOnSimplex) {
  auto cfg = fourier_cfg(Layout::PhiThenW, 3);
  cfg.project_simplex = true;
  auto rng = rng_for(9);
  const auto p = init_operator(cfg, 6, rng);
  const auto y = karat_activate(random_tensor({6, 6}, 10), cfg, p);
  for (std::size_t r = 0; r < 6; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 6; ++c) {
      EXPECT_GE(y.at(r, c), 0.0);
      total += y.at(r, c);
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(KArAtActivate, RankAboveTokensIsConfigError) {
  const auto cfg = fourier_cfg(Layout::PhiThenW, 6);
  auto rng = rng_for(11);
  const auto p = init_operator(fourier_cfg(Layout::PhiThenW, 4), 4, rng);
  EXPECT_THROW(karat_activate(random_tensor({4, 4}, 12), cfg, p), ConfigError);
  EXPECT_THROW(cfg.validate(4, 1), ConfigError);
}

TEST(KArAtActivate, InputScaleMultipliesLogits) {
  auto cfg = fourier_cfg(Layout::FullRank, 3);
  auto rng = rng_for(13);
  const auto p = init_operator(cfg, 4, rng);
  const Tensor a = random_tensor({4, 4}, 14);
  cfg.input_scale = 0.5;
  auto plain = cfg;
  plain.input_scale = 1.0;
  EXPECT_EQ(karat_activate(a, cfg, p).values(), karat_activate(scale(a, 0.5), plain, p).values());
}

TEST(KArAtActivate, ProjectorInitVarianceIsInverseFanIn) {
  const auto cfg = fourier_cfg(Layout::PhiThenW, 16);
  auto rng = rng_for(15);
  double sq = 0.0;
  std::size_t count = 0;
  for (int i = 0; i < 50; ++i) {
    const auto p = init_operator(cfg, 64, rng);
    for (double v : p.projector.values()) sq += v * v;
    count += p.projector.size();
  }
  EXPECT_NEAR(sq / static_cast<double>(count), 1.0 / 16.0, 0.003);
}

TEST(AttentionHead, ZeroInputsSoftmax) {
  const Tensor z(Shape{4, 3}, 0.0);
  KArAtConfig cfg;
  HeadTrace trace;
  const auto out = attention_head_forward(z, z, z, HeadActivation::Softmax, cfg, nullptr, &trace);
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
  for (double v : trace.post.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(AttentionHead, SingleTokenReturnsValue) {
  const Tensor q = random_tensor({1, 3}, 16), k = random_tensor({1, 3}, 17), v = random_tensor({1, 3}, 18);
  KArAtConfig cfg;
  EXPECT_EQ(attention_head_forward(q, k, v, HeadActivation::Softmax, cfg, nullptr).values(), v.values());
}

TEST(AttentionHead, KArAtMatchesStepwiseOracle) {
  const auto cfg = fourier_cfg(Layout::PhiThenW, 2, 2);
  auto rng = rng_for(19);
  const auto p = init_operator(cfg, 6, rng);
  const Tensor q = random_tensor({6, 4}, 20), k = random_tensor({6, 4}, 21), v = random_tensor({6, 4}, 22);
  const auto got = attention_head_forward(q, k, v, HeadActivation::KArAt, cfg, &p).values();
  auto logits = oracle::matmul(oracle::from_flat(q.values(), 6, 4), oracle::transpose(oracle::from_flat(k.values(), 6, 4)));
  for (auto& row : logits) for (double& x : row) x /= 2.0;
  const auto act = oracle_activate(Tensor(Shape{6, 6}, oracle::to_flat(logits)), cfg, p);
  const auto expect = oracle::to_flat(oracle::matmul(act, oracle::from_flat(v.values(), 6, 4)));
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-12 * (1 + std::abs(expect[i])));
}

TEST(AttentionHead, GradientsMatchFiniteDifferencesForEveryLayout) {
  for (Layout layout : {Layout::FullRank, Layout::PhiThenW, Layout::WThenPhi, Layout::PhiPhi}) {
    for (ProjectionGrad mode : {ProjectionGrad::StraightThrough, ProjectionGrad::ActiveSet}) {
      auto cfg = fourier_cfg(layout, 3, 2);
      // Straight-through is not the derivative of the projection, so only the
      // exact mode is checked with projection on.
      cfg.project_simplex = mode == ProjectionGrad::ActiveSet;
      cfg.projection_grad = mode;
      auto rng = rng_for(23);
      const auto p = init_operator(cfg, 6, rng);
      Tensor q = random_tensor({6, 4}, 24, 0.7, true), k = random_tensor({6, 4}, 25, 0.7, true);
      Tensor v = random_tensor({6, 4}, 26, 1.0, true);
      const Tensor w = random_tensor({6, 4}, 27);
      auto loss = [&] { return sum(mul(attention_head_forward(q, k, v, HeadActivation::KArAt, cfg, &p), w)); };
      std::vector<Tensor> inputs{q, k, v, p.phi1};
      if (p.projector.defined()) inputs.push_back(p.projector);
      if (p.phi2.defined()) inputs.push_back(p.phi2);
      for (auto& t : inputs) t.zero_grad();
      backward(loss());
      for (auto& t : inputs) {
        const auto analytic = t.grad();
        const auto numeric = finite_diff_grad([&](const Tensor&) { return loss().item(); }, t);
        EXPECT_LT(max_relative_error(analytic, numeric, 1e-6), 1e-4) << to_string(layout);
      }
    }
  }
}

TEST(SharedParams, UniversalAliasesAcrossLayers) {
  auto cfg = fourier_cfg(Layout::PhiThenW, 2);
  cfg.sharing = Sharing::Universal;
  const auto ops = make_shared_params(cfg, 5, 3, 4, std::uint64_t{1});
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 1; j < 4; ++j) EXPECT_EQ(ops.at(j, i).get(), ops.at(0, i).get());
  }
  EXPECT_EQ(ops.unique().size(), 3u);
  cfg.sharing = Sharing::Blockwise;
  EXPECT_EQ(make_shared_params(cfg, 5, 3, 4, std::uint64_t{1}).unique().size(), 12u);
}

TEST(SharedParams, HybridAssignmentLeavesSoftmaxHeadsEmpty) {
  auto cfg = fourier_cfg(Layout::PhiThenW, 2);
  cfg.head_assignment = {HeadActivation::Softmax, HeadActivation::KArAt};
  const auto ops = make_shared_params(cfg, 5, 2, 3, std::uint64_t{2});
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(ops.at(j, 0), nullptr);
    EXPECT_NE(ops.at(j, 1), nullptr);
  }
  EXPECT_EQ(count_activation_params(cfg, 5, 2, 3), 3 * operator_param_count(cfg, 5));
  EXPECT_THROW(cfg.validate(5, 3), ConfigError);
}

TEST(SharedParams, UniversalGradientIsSumOfLayerGradients) {
  auto cfg = fourier_cfg(Layout::PhiThenW, 2, 2);
  cfg.sharing = Sharing::Universal;
  const auto ops = make_shared_params(cfg, 5, 1, 3, std::uint64_t{3});
  const Tensor a0 = random_tensor({5, 5}, 30), a1 = random_tensor({5, 5}, 31), a2 = random_tensor({5, 5}, 32);
  const std::vector<Tensor> inputs{a0, a1, a2};
  auto layer_loss = [&](std::size_t j) { return sum(mul(karat_activate(inputs[j], cfg, *ops.at(j, 0)), inputs[j])); };
  auto total = [&] { return add(add(layer_loss(0), layer_loss(1)), layer_loss(2)); };
  Tensor phi = ops.at(0, 0)->phi1;
  phi.zero_grad();
  backward(total());
  const auto shared_grad = phi.grad();
  std::vector<double> summed(phi.size(), 0.0);
  for (std::size_t j = 0; j < 3; ++j) {
    const auto g = finite_diff_grad([&](const Tensor&) { return layer_loss(j).item(); }, phi);
    for (std::size_t i = 0; i < g.size(); ++i) summed[i] += g[i];
  }
  EXPECT_LT(max_relative_error(shared_grad, summed, 1e-6), 1e-4);
}

TEST(Counting, ClosedFormExamples) {
  auto cfg = fourier_cfg(Layout::PhiThenW, 12);
  EXPECT_EQ(count_activation_params(cfg, 197, 3, 12), 595728u);
  cfg.sharing = Sharing::Universal;
  EXPECT_EQ(count_activation_params(cfg, 197, 3, 12), 49644u);
  auto smallest = fourier_cfg(Layout::PhiThenW, 1, 1);
  EXPECT_EQ(count_activation_params(smallest, 2, 1, 1), 6u);
}

TEST(Counting, ClosedFormMatchesAllocatedTensors) {
  for (Layout layout : {Layout::FullRank, Layout::PhiThenW, Layout::WThenPhi, Layout::PhiPhi}) {
    for (basis::Kind kind : {basis::Kind::Fourier, basis::Kind::Rational, basis::Kind::Shannon}) {
      auto cfg = fourier_cfg(layout, 3);
      cfg.basis.kind = kind;
      const auto ops = make_shared_params(cfg, 7, 2, 3, std::uint64_t{4});
      std::size_t allocated = 0;
      for (const auto& op : ops.unique()) allocated += op->parameter_count();
      EXPECT_EQ(allocated, count_activation_params(cfg, 7, 2, 3));
    }
  }
}

TEST(Parsing, NamesRoundTrip) {
  for (Layout l : {Layout::FullRank, Layout::PhiThenW, Layout::WThenPhi, Layout::PhiPhi}) {
    EXPECT_EQ(parse_layout(to_string(l)), l);
  }
  EXPECT_EQ(parse_sharing("universal"), Sharing::Universal);
  EXPECT_THROW(parse_sharing("global"), ConfigError);
  EXPECT_THROW(parse_head_activation("relu"), ConfigError);
}
