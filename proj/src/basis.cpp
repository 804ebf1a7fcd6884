#include "karat/basis.hpp"

#include <cmath>
#include <numbers>

#include "karat/error.hpp"

namespace karat::basis {

namespace {

constexpr double kPi = std::numbers::pi;

// Mother wavelet value and derivative with respect to its argument.
struct WaveletEval {
  double value;
  double slope;
};

WaveletEval mexican_hat(double t) {
  // 2 / (pi^{1/4} sqrt(3))
  const double c = 2.0 / (std::pow(kPi, 0.25) * std::sqrt(3.0));
  const double g = std::exp(-0.5 * t * t);
  return {c * (t * t - 1.0) * g, c * t * (3.0 - t * t) * g};
}

WaveletEval morlet(double t, double omega) {
  const double g = std::exp(-0.5 * t * t);
  const double c = std::cos(omega * t);
  const double s = std::sin(omega * t);
  return {c * g, (-omega * s - t * c) * g};
}

WaveletEval dog(double t) {
  const double g = std::exp(-0.5 * t * t);
  return {t * g, (1.0 - t * t) * g};
}

// nu(t) = t^4 (35 - 84t + 70t^2 - 20t^3) on [0, 1], zero elsewhere.
double meyer_nu(double t) {
  if (t < 0.0 || t > 1.0) return 0.0;
  const double t4 = t * t * t * t;
  return t4 * (35.0 - 84.0 * t + 70.0 * t * t - 20.0 * t * t * t);
}

double meyer_nu_slope(double t) {
  if (t <= 0.0 || t >= 1.0) return 0.0;
  const double t3 = t * t * t;
  return 140.0 * t3 * (1.0 - 3.0 * t + 3.0 * t * t - t3);
}

double meyer_m(double u) {
  if (u <= 0.5) return 1.0;
  if (u < 1.0) return std::cos(0.5 * kPi * meyer_nu(2.0 * u - 1.0));
  return 0.0;
}

double meyer_m_slope(double u) {
  if (u <= 0.5 || u >= 1.0) return 0.0;
  const double v = 2.0 * u - 1.0;
  return -std::sin(0.5 * kPi * meyer_nu(v)) * kPi * meyer_nu_slope(v);
}

WaveletEval meyer(double t) {
  const double a = std::abs(t);
  const double nu = meyer_nu(t);
  const double m = meyer_m(nu);
  const double sign = t > 0.0 ? 1.0 : (t < 0.0 ? -1.0 : 0.0);
  const double value = std::sin(kPi * a) * m;
  const double slope = kPi * std::cos(kPi * a) * sign * m +
                       std::sin(kPi * a) * meyer_m_slope(nu) * meyer_nu_slope(t);
  return {value, slope};
}

// sinc(t / pi) = sin(t) / t, windowed by a symmetric Hamming window on [-pi, pi].
WaveletEval shannon(double t) {
  if (std::abs(t) > kPi) return {0.0, 0.0};
  double sinc;
  double sinc_slope;
  if (std::abs(t) < 1e-4) {
    const double t2 = t * t;
    sinc = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
    sinc_slope = -t / 3.0 + t * t2 / 30.0;
  } else {
    sinc = std::sin(t) / t;
    sinc_slope = (t * std::cos(t) - std::sin(t)) / (t * t);
  }
  const double window = 0.54 + 0.46 * std::cos(t);
  const double window_slope = -0.46 * std::sin(t);
  return {sinc * window, sinc_slope * window + sinc * window_slope};
}

WaveletEval mother_wavelet(Kind kind, double t, double omega) {
  switch (kind) {
    case Kind::MexicanHat: return mexican_hat(t);
    case Kind::Morlet: return morlet(t, omega);
    case Kind::DOG: return dog(t);
    case Kind::Meyer: return meyer(t);
    case Kind::Shannon: return shannon(t);
    default: break;
  }
  throw ContractError("mother_wavelet called with non-wavelet basis");
}

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double std_normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
}

}  // namespace

void BasisSpec::validate() const {
  if (kind == Kind::Fourier && grid_size < 1) {
    throw ConfigError("Fourier basis needs grid_size >= 1, got " + std::to_string(grid_size));
  }
  if (kind == Kind::Rational && (rational_m < 0 || rational_n < 1)) {
    throw ConfigError("Rational(m,n) needs m >= 0 and n >= 1");
  }
  if (kind == Kind::Morlet && !(morlet_omega >= 0.0)) {
    throw ConfigError("Morlet central frequency must be nonnegative");
  }
}

std::size_t BasisSpec::params_per_unit() const {
  switch (kind) {
    case Kind::Fourier: return 2 * static_cast<std::size_t>(grid_size) + (fourier_dc ? 1 : 0);
    case Kind::Rational: return static_cast<std::size_t>(rational_m + 1 + rational_n);
    default: return 3;
  }
}

bool BasisSpec::is_wavelet() const {
  return kind != Kind::Fourier && kind != Kind::Rational;
}

std::string to_string(Kind kind) {
  switch (kind) {
    case Kind::Fourier: return "fourier";
    case Kind::Rational: return "rational";
    case Kind::MexicanHat: return "mexican_hat";
    case Kind::Morlet: return "morlet";
    case Kind::DOG: return "dog";
    case Kind::Meyer: return "meyer";
    case Kind::Shannon: return "shannon";
  }
  return "?";
}

std::string to_string(BaseActivation base) {
  switch (base) {
    case BaseActivation::Zero: return "zero";
    case BaseActivation::Identity: return "identity";
    case BaseActivation::SiLU: return "silu";
    case BaseActivation::GELU: return "gelu";
  }
  return "?";
}

Kind parse_kind(const std::string& name) {
  for (Kind k : {Kind::Fourier, Kind::Rational, Kind::MexicanHat, Kind::Morlet,
                 Kind::DOG, Kind::Meyer, Kind::Shannon}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown basis '" + name + "'");
}

BaseActivation parse_base_activation(const std::string& name) {
  for (BaseActivation b : {BaseActivation::Zero, BaseActivation::Identity,
                           BaseActivation::SiLU, BaseActivation::GELU}) {
    if (to_string(b) == name) return b;
  }
  throw ConfigError("unknown base activation '" + name + "'");
}

double eval_base_activation(BaseActivation base, double x) {
  switch (base) {
    case BaseActivation::Zero: return 0.0;
    case BaseActivation::Identity: return x;
    case BaseActivation::SiLU: return x / (1.0 + std::exp(-x));
    case BaseActivation::GELU: return x * std_normal_cdf(x);
  }
  return 0.0;
}

double base_activation_derivative(BaseActivation base, double x) {
  switch (base) {
    case BaseActivation::Zero: return 0.0;
    case BaseActivation::Identity: return 1.0;
    case BaseActivation::SiLU: {
      const double s = 1.0 / (1.0 + std::exp(-x));
      return s * (1.0 + x * (1.0 - s));
    }
    case BaseActivation::GELU: return std_normal_cdf(x) + x * std_normal_pdf(x);
  }
  return 0.0;
}

double eval_fourier(std::span<const double> params, int grid_size, double x,
                    BaseActivation base, bool dc) {
  const auto g = static_cast<std::size_t>(grid_size);
  double acc = 0.0;
  for (std::size_t m = 1; m <= g; ++m) {
    const double mx = static_cast<double>(m) * x;
    acc += params[m - 1] * std::cos(mx) + params[g + m - 1] * std::sin(mx);
  }
  if (dc) acc += params[2 * g];
  return eval_base_activation(base, x) + acc;
}

double eval_rational(std::span<const double> params, int m, int n, double x) {
  const auto num_terms = static_cast<std::size_t>(m) + 1;
  double num = 0.0;
  for (std::size_t i = num_terms; i-- > 0;) num = num * x + params[i];
  // Q(x) = x * (b_1 + b_2 x + ... + b_n x^{n-1})
  double den = 0.0;
  for (std::size_t j = static_cast<std::size_t>(n); j-- > 0;) den = den * x + params[num_terms + j];
  den *= x;
  return num / (1.0 + std::abs(den));
}

double effective_scale(double s) {
  if (s >= 0.0) return s < kMinWaveletScale ? kMinWaveletScale : s;
  return s > -kMinWaveletScale ? -kMinWaveletScale : s;
}

double eval_wavelet(Kind kind, std::span<const double> params, double x, double morlet_omega) {
  const double w = params[0];
  const double s = effective_scale(params[1]);
  const double tau = params[2];
  return w * mother_wavelet(kind, (x - tau) / s, morlet_omega).value;
}

double eval_unit(const BasisSpec& spec, std::span<const double> params, double x) {
  switch (spec.kind) {
    case Kind::Fourier:
      return eval_fourier(params, spec.grid_size, x, spec.base, spec.fourier_dc);
    case Kind::Rational:
      return eval_base_activation(spec.base, x) +
             eval_rational(params, spec.rational_m, spec.rational_n, x);
    default:
      return eval_base_activation(spec.base, x) +
             eval_wavelet(spec.kind, params, x, spec.morlet_omega);
  }
}

double eval_unit_grad(const BasisSpec& spec, std::span<const double> params,
                      double x, double& d_dx, std::span<double> d_dparams) {
  double value = eval_base_activation(spec.base, x);
  d_dx = base_activation_derivative(spec.base, x);

  switch (spec.kind) {
    case Kind::Fourier: {
      const auto g = static_cast<std::size_t>(spec.grid_size);
      for (std::size_t m = 1; m <= g; ++m) {
        const double fm = static_cast<double>(m);
        const double c = std::cos(fm * x);
        const double s = std::sin(fm * x);
        const double a = params[m - 1];
        const double b = params[g + m - 1];
        value += a * c + b * s;
        d_dx += fm * (b * c - a * s);
        d_dparams[m - 1] = c;
        d_dparams[g + m - 1] = s;
      }
      if (spec.fourier_dc) {
        value += params[2 * g];
        d_dparams[2 * g] = 1.0;
      }
      return value;
    }
    case Kind::Rational: {
      const auto num_terms = static_cast<std::size_t>(spec.rational_m) + 1;
      const auto den_terms = static_cast<std::size_t>(spec.rational_n);
      double num = 0.0, num_slope = 0.0;
      double power = 1.0;
      double prev = 0.0;
      for (std::size_t i = 0; i < num_terms; ++i) {
        num += params[i] * power;
        num_slope += static_cast<double>(i) * params[i] * prev;
        prev = power;
        power *= x;
      }
      double q = 0.0, q_slope = 0.0;
      power = x;
      double prev_power = 1.0;
      for (std::size_t j = 0; j < den_terms; ++j) {
        q += params[num_terms + j] * power;
        q_slope += static_cast<double>(j + 1) * params[num_terms + j] * prev_power;
        prev_power = power;
        power *= x;
      }
      const double sign = q > 0.0 ? 1.0 : (q < 0.0 ? -1.0 : 0.0);
      const double den = 1.0 + std::abs(q);
      const double ratio = num / den;
      value += ratio;
      d_dx += num_slope / den - ratio * sign * q_slope / den;
      power = 1.0;
      for (std::size_t i = 0; i < num_terms; ++i) {
        d_dparams[i] = power / den;
        power *= x;
      }
      power = x;
      for (std::size_t j = 0; j < den_terms; ++j) {
        d_dparams[num_terms + j] = -ratio * sign * power / den;
        power *= x;
      }
      return value;
    }
    default: {
      const double w = params[0];
      const double s_raw = params[1];
      const double s = effective_scale(s_raw);
      const double clamped = std::abs(s_raw) < kMinWaveletScale ? 0.0 : 1.0;
      const double t = (x - params[2]) / s;
      const WaveletEval psi = mother_wavelet(spec.kind, t, spec.morlet_omega);
      value += w * psi.value;
      d_dx += w * psi.slope / s;
      d_dparams[0] = psi.value;
      d_dparams[1] = -w * psi.slope * t / s * clamped;
      d_dparams[2] = -w * psi.slope / s;
      return value;
    }
  }
}

void init_unit(const BasisSpec& spec, std::mt19937_64& rng, std::span<double> params) {
  std::normal_distribution<double> normal(0.0, 1.0);
  switch (spec.kind) {
    case Kind::Fourier: {
      const double scale = spec.scaled_init ? 1.0 / std::sqrt(static_cast<double>(spec.grid_size)) : 1.0;
      const std::size_t n = 2 * static_cast<std::size_t>(spec.grid_size);
      for (std::size_t i = 0; i < n; ++i) params[i] = scale * normal(rng);
      if (spec.fourier_dc) params[n] = 0.0;
      break;
    }
    case Kind::Rational:
      for (double& p : params) p = normal(rng);
      break;
    default:
      params[0] = normal(rng);
      params[1] = 1.0;
      params[2] = 0.0;
      break;
  }
}

std::vector<double> init_unit(const BasisSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> params(spec.params_per_unit());
  init_unit(spec, rng, params);
  return params;
}

void enforce_constraints(const BasisSpec& spec, std::span<double> coeffs) {
  if (!spec.is_wavelet()) return;
  for (std::size_t i = 1; i < coeffs.size(); i += 3) coeffs[i] = effective_scale(coeffs[i]);
}

}  // namespace karat::basis
