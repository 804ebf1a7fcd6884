#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace karat::basis {

enum class Kind { Fourier, Rational, MexicanHat, Morlet, DOG, Meyer, Shannon };

enum class BaseActivation { Zero, Identity, SiLU, GELU };

/// Lower bound on |s| for wavelet units.
inline constexpr double kMinWaveletScale = 1e-3;

/// A learnable scalar function family plus its residual base activation.
///
/// Unit parameter layouts:
///   Fourier   [a_1..a_G, b_1..b_G] (+ one constant term when fourier_dc)
///   Rational  [a_0..a_m, b_1..b_n]
///   wavelets  [w, s, tau]
struct BasisSpec {
  Kind kind = Kind::Fourier;
  int grid_size = 3;
  int rational_m = 5;
  int rational_n = 4;
  BaseActivation base = BaseActivation::Zero;
  bool fourier_dc = false;
  // Scale Fourier init by 1/sqrt(G).
  bool scaled_init = false;
  double morlet_omega = 5.0;

  void validate() const;
  std::size_t params_per_unit() const;
  bool is_wavelet() const;
};

std::string to_string(Kind kind);
std::string to_string(BaseActivation base);
Kind parse_kind(const std::string& name);
BaseActivation parse_base_activation(const std::string& name);

double eval_base_activation(BaseActivation base, double x);
double base_activation_derivative(BaseActivation base, double x);

/// b(x) + sum_{m=1..G} a_m cos(m x) + b_m sin(m x) (+ c when dc is set).
double eval_fourier(std::span<const double> params, int grid_size, double x,
                    BaseActivation base = BaseActivation::Zero, bool dc = false);

/// Safe Pade unit: P(x) / (1 + |Q(x)|) with Q having no constant term.
double eval_rational(std::span<const double> params, int m, int n, double x);

/// w * psi((x - tau) / s) for the mother wavelet named by `kind`.
double eval_wavelet(Kind kind, std::span<const double> params, double x,
                    double morlet_omega = 5.0);

/// Scale actually used for evaluation: s pushed away from zero to |s| >= kMinWaveletScale.
double effective_scale(double s);

/// Full unit value, base activation included.
double eval_unit(const BasisSpec& spec, std::span<const double> params, double x);

/// Unit value; writes d/dx into `d_dx` and d/dparams into `d_dparams`
/// (overwritten, length params_per_unit()).
double eval_unit_grad(const BasisSpec& spec, std::span<const double> params,
                      double x, double& d_dx, std::span<double> d_dparams);

/// Draws one unit's parameters. Fourier/rational coefficients ~ N(0,1)
/// (Fourier optionally scaled by 1/sqrt(G)); wavelets get w ~ N(0,1), s = 1, tau = 0.
void init_unit(const BasisSpec& spec, std::mt19937_64& rng, std::span<double> params);
std::vector<double> init_unit(const BasisSpec& spec, std::uint64_t seed);

/// Re-imposes parameter constraints (wavelet scale floor) on a packed
/// coefficient array of whole units.
void enforce_constraints(const BasisSpec& spec, std::span<double> coeffs);

}  // namespace karat::basis
