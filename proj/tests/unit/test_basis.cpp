#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "karat/basis.hpp"
#include "karat/error.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace karat;
using namespace karat::basis;
using std::numbers::pi;

TEST(Fourier, CosineAtZero) {
  const std::vector<double> p{1.0, 0.0};
  EXPECT_DOUBLE_EQ(eval_fourier(p, 1, 0.0), 1.0);
}

TEST(Fourier, SinesVanishAtPi) {
  const std::vector<double> p{0.0, 0.0, 1.0, 1.0};
  EXPECT_NEAR(eval_fourier(p, 2, pi), 0.0, 1e-15);
}

TEST(Fourier, MatchesTermByTermSum) {
  const auto p = test_support::normal_values(6, 1);
  const std::vector<double> a(p.begin(), p.begin() + 3), b(p.begin() + 3, p.end());
  EXPECT_NEAR(eval_fourier(p, 3, 0.7), oracle::fourier(a, b, 0.7), 1e-12);
}

TEST(Fourier, PeriodicWithoutBase) {
  const auto p = test_support::normal_values(10, 2);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int i = 0; i < 100; ++i) {
    const double x = u(rng);
    EXPECT_LT(std::abs(eval_fourier(p, 5, x) - eval_fourier(p, 5, x + 2 * pi)), 1e-9);
  }
}

TEST(Fourier, ConstantTermWhenEnabled) {
  const std::vector<double> p{0.0, 0.0, 2.5};
  EXPECT_DOUBLE_EQ(eval_fourier(p, 1, 1.3, BaseActivation::Zero, true), 2.5);
}

TEST(Rational, ZeroNumerator) {
  const std::vector<double> p(10, 0.0);
  for (double x : {-3.0, 0.0, 7.5}) EXPECT_EQ(eval_rational(p, 5, 4, x), 0.0);
}

TEST(Rational, ConstantNumerator) {
  std::vector<double> p(10, 0.0);
  p[0] = 1.0;
  for (double x : {-3.0, 0.0, 7.5}) EXPECT_EQ(eval_rational(p, 5, 4, x), 1.0);
}

TEST(Rational, MatchesPowerOracle) {
  const auto p = test_support::normal_values(10, 4);
  const std::vector<double> a(p.begin(), p.begin() + 6), b(p.begin() + 6, p.end());
  EXPECT_NEAR(eval_rational(p, 5, 4, -2.3), oracle::rational(a, b, -2.3), 1e-12);
}

TEST(Rational, DenominatorNeverBelowOne) {
  // With numerator 1 the unit equals 1 / denominator, so it must stay in (0, 1].
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  for (int trial = 0; trial < 1000; ++trial) {
    auto p = test_support::normal_values(10, 100 + trial, 5.0);
    for (int i = 0; i < 6; ++i) p[i] = i == 0 ? 1.0 : 0.0;
    const double y = eval_rational(p, 5, 4, u(rng));
    EXPECT_GT(y, 0.0);
    EXPECT_LE(y, 1.0);
  }
}

TEST(Wavelet, DogVanishesAtCentre) {
  const std::vector<double> p{1.7, 0.8, 0.3};
  EXPECT_EQ(eval_wavelet(Kind::DOG, p, 0.3), 0.0);
}

TEST(Wavelet, MexicanHatAtCentre) {
  const std::vector<double> p{1.0, 1.0, 0.0};
  EXPECT_NEAR(eval_wavelet(Kind::MexicanHat, p, 0.0), -2.0 / (std::pow(pi, 0.25) * std::sqrt(3.0)), 1e-15);
}

TEST(Wavelet, MexicanHatMatchesOracle) {
  const std::vector<double> p{0.7, 1.3, -0.2};
  for (double x = -4; x <= 4; x += 0.37) {
    EXPECT_NEAR(eval_wavelet(Kind::MexicanHat, p, x), oracle::mexican_hat(0.7, 1.3, -0.2, x), 1e-12);
  }
}

TEST(Wavelet, MeyerMatchesPiecewiseOracle) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    const double w = n(rng), s = 0.5 + std::abs(n(rng)), tau = 0.3 * n(rng);
    const std::vector<double> p{w, s, tau};
    for (double x = -3; x <= 3; x += 0.05) {
      EXPECT_NEAR(eval_wavelet(Kind::Meyer, p, x), oracle::meyer(w, s, tau, x), 1e-10);
    }
  }
}

TEST(Wavelet, ShannonIsOneAtCentreAndZeroOutsideWindow) {
  const std::vector<double> p{1.0, 1.0, 0.0};
  EXPECT_DOUBLE_EQ(eval_wavelet(Kind::Shannon, p, 0.0), 1.0);
  EXPECT_EQ(eval_wavelet(Kind::Shannon, p, 3.5), 0.0);
  EXPECT_NEAR(eval_wavelet(Kind::Shannon, p, 1.0), std::sin(1.0) * (0.54 + 0.46 * std::cos(1.0)), 1e-15);
}

TEST(Wavelet, MorletUsesFixedCentralFrequency) {
  const std::vector<double> p{1.0, 1.0, 0.0};
  const double x = 0.4;
  EXPECT_NEAR(eval_wavelet(Kind::Morlet, p, x), std::cos(5.0 * x) * std::exp(-x * x / 2), 1e-15);
}

TEST(Wavelet, ScaleFloor) {
  EXPECT_EQ(effective_scale(0.0), kMinWaveletScale);
  EXPECT_EQ(effective_scale(-1e-6), -kMinWaveletScale);
  EXPECT_EQ(effective_scale(0.5), 0.5);
  std::vector<double> coeffs{1.0, 1e-9, 0.0, 1.0, -0.2, 0.0};
  BasisSpec spec;
  spec.kind = Kind::DOG;
  enforce_constraints(spec, coeffs);
  EXPECT_EQ(coeffs[1], kMinWaveletScale);
  EXPECT_EQ(coeffs[4], -0.2);
}

TEST(BaseActivation, KnownValues) {
  EXPECT_EQ(eval_base_activation(BaseActivation::Zero, 17.3), 0.0);
  EXPECT_EQ(eval_base_activation(BaseActivation::SiLU, 0.0), 0.0);
  EXPECT_EQ(eval_base_activation(BaseActivation::Identity, -2.5), -2.5);
  EXPECT_NEAR(eval_base_activation(BaseActivation::GELU, 1.0), oracle::gelu_scalar(1.0), 1e-12);
}

TEST(Init, SameSeedSameParams) {
  BasisSpec spec;
  spec.grid_size = 4;
  EXPECT_EQ(init_unit(spec, 42), init_unit(spec, 42));
  EXPECT_NE(init_unit(spec, 42), init_unit(spec, 43));
}

TEST(Init, FourierDrawsAreStandardNormal) {
  BasisSpec spec;
  spec.grid_size = 5;
  std::mt19937_64 rng(7);
  std::vector<double> draws;
  std::vector<double> unit(10);
  while (draws.size() < 100000) {
    init_unit(spec, rng, unit);
    draws.insert(draws.end(), unit.begin(), unit.end());
  }
  double mean = 0.0;
  for (double v : draws) mean += v;
  mean /= static_cast<double>(draws.size());
  double var = 0.0;
  for (double v : draws) var += (v - mean) * (v - mean);
  var /= static_cast<double>(draws.size() - 1);
  EXPECT_LT(std::abs(mean), 0.02);
  EXPECT_LT(std::abs(var - 1.0), 0.05);
}

TEST(Init, ScaledFourierInit) {
  BasisSpec plain, scaled;
  plain.grid_size = scaled.grid_size = 4;
  scaled.scaled_init = true;
  const auto a = init_unit(plain, 9), b = init_unit(scaled, 9);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i], a[i] / 2.0, 1e-15);
}

TEST(Init, WaveletCentredUnitScale) {
  for (Kind k : {Kind::MexicanHat, Kind::Morlet, Kind::DOG, Kind::Meyer, Kind::Shannon}) {
    BasisSpec spec;
    spec.kind = k;
    const auto p = init_unit(spec, 11);
    ASSERT_EQ(p.size(), 3u);
    EXPECT_EQ(p[1], 1.0);
    EXPECT_EQ(p[2], 0.0);
  }
}

TEST(Spec, ParameterCountsAndValidation) {
  BasisSpec spec;
  spec.grid_size = 3;
  EXPECT_EQ(spec.params_per_unit(), 6u);
  spec.kind = Kind::Rational;
  EXPECT_EQ(spec.params_per_unit(), 10u);
  spec.kind = Kind::Meyer;
  EXPECT_EQ(spec.params_per_unit(), 3u);
  BasisSpec bad;
  bad.grid_size = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = BasisSpec{};
  bad.kind = Kind::Rational;
  bad.rational_n = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(parse_kind("bspline"), ConfigError);
  EXPECT_EQ(parse_kind("mexican_hat"), Kind::MexicanHat);
}

namespace {

// Kink locations of the piecewise wavelets, in the scaled coordinate.
bool near_kink(Kind kind, double t) {
  if (kind == Kind::Meyer) return std::abs(t) < 1e-3 || std::abs(t - 1.0) < 1e-3;
  if (kind == Kind::Shannon) return std::abs(std::abs(t) - pi) < 1e-3;
  return false;
}

}  // namespace

TEST(Gradients, AllKindsMatchFiniteDifferences) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> ux(-3, 3);
  for (Kind kind : {Kind::Fourier, Kind::Rational, Kind::MexicanHat, Kind::Morlet, Kind::DOG,
                    Kind::Meyer, Kind::Shannon}) {
    for (BaseActivation base : {BaseActivation::Zero, BaseActivation::SiLU, BaseActivation::GELU}) {
      BasisSpec spec;
      spec.kind = kind;
      spec.base = base;
      const std::size_t np = spec.params_per_unit();
      int checked = 0;
      for (std::uint64_t trial = 0; checked < 100; ++trial) {
        auto p = test_support::normal_values(np, 1000 + trial);
        if (spec.is_wavelet()) p[1] = 0.5 + std::abs(p[1]);
        const double x = ux(rng);
        if (spec.is_wavelet() && near_kink(kind, (x - p[2]) / p[1])) continue;
        ++checked;
        double d_dx = 0.0;
        std::vector<double> d_dp(np);
        const double y = eval_unit_grad(spec, p, x, d_dx, d_dp);
        EXPECT_NEAR(y, eval_unit(spec, p, x), 1e-14 * (1 + std::abs(y)));
        const double h = 1e-6;
        const double fd_x = (eval_unit(spec, p, x + h) - eval_unit(spec, p, x - h)) / (2 * h);
        EXPECT_LT(std::abs(d_dx - fd_x) / std::max({std::abs(d_dx), std::abs(fd_x), 1e-4}), 1e-4)
            << to_string(kind) << " x=" << x;
        for (std::size_t i = 0; i < np; ++i) {
          auto up = p, down = p;
          up[i] += h;
          down[i] -= h;
          const double fd = (eval_unit(spec, up, x) - eval_unit(spec, down, x)) / (2 * h);
          EXPECT_LT(std::abs(d_dp[i] - fd) / std::max({std::abs(d_dp[i]), std::abs(fd), 1e-4}), 1e-4)
              << to_string(kind) << " param " << i << " x=" << x;
        }
      }
    }
  }
}
