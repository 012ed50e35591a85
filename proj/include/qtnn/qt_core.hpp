#pragma once

// Quantum-tunnelling activation: transmission probability of a particle of
// energy E through a rectangular barrier of height V0 and width a, in units
// where hbar^2 / 2m = 1.
//
//   T(E) = 1 / (1 + V0^2 sinh^2(kappa a) / (4 E (V0 - E)))   E < V0
//   T(E) = 1 / (1 + V0^2 sin^2(k a)     / (4 E (E - V0)))    E > V0
//
// Both branches are the same expression G = V0^2 a^2 f(u) / (4E) with
// u = (V0 - E) a^2 and f(u) = sinh^2(sqrt u) / u, continued analytically
// to f(u) = sin^2(sqrt(-u)) / (-u) for u < 0. f is entire, so the branch
// point E = V0 is handled with its Taylor series.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "qtnn/errors.hpp"

namespace qtnn {

struct Barrier {
  double height = 1.0;  // V0
  double width = 1.0;   // a

  Barrier() = default;
  Barrier(double v0, double a) : height(v0), width(a) { validate(); }

  void validate() const {
    if (!(std::isfinite(height) && height > 0.0))
      throw DomainError("barrier height must be positive and finite, got " + std::to_string(height));
    if (!(std::isfinite(width) && width > 0.0))
      throw DomainError("barrier width must be positive and finite, got " + std::to_string(width));
  }

  friend bool operator==(const Barrier&, const Barrier&) = default;
};

enum class EnergyMapKind { SmoothPositive, IdentityClamp };

// Maps an unbounded pre-activation onto a strictly positive energy.
struct EnergyMap {
  EnergyMapKind kind = EnergyMapKind::SmoothPositive;
  double scale = 1.0;

  void validate() const {
    if (!(std::isfinite(scale) && scale > 0.0))
      throw DomainError("energy map scale must be positive and finite");
  }

  friend bool operator==(const EnergyMap&, const EnergyMap&) = default;
};

inline constexpr double kBranchWindow = 1e-6;       // relative |E - V0| / V0
inline constexpr double kDeepTunnelling = 20.0;     // kappa * a
inline constexpr double kClampFloor = 1e-12;

namespace detail {

// |u| below which f and f' come from their Taylor series. Covers the branch
// window |E - V0| <= 1e-6 V0 whenever V0 a^2 <= 5e4; outside this radius the
// closed forms carry no cancellation worth mentioning.
inline constexpr double kSeriesRadius = 0.05;
inline constexpr int kSeriesTerms = 10;

// Taylor coefficients of f(u) = sum_n c_n u^n with c_n = 2^(2n+1) / (2n+2)!.
inline constexpr auto kShapeSeries = [] {
  std::array<double, kSeriesTerms> c{};
  double fact = 2.0;  // (2n+2)! at n = 0
  double pow2 = 2.0;  // 2^(2n+1) at n = 0
  for (int n = 0; n < kSeriesTerms; ++n) {
    c[n] = pow2 / fact;
    pow2 *= 4.0;
    fact *= static_cast<double>((2 * n + 3) * (2 * n + 4));
  }
  return c;
}();

inline double shape_factor(double u) {
  if (std::abs(u) < kSeriesRadius) {
    double acc = 0.0;
    for (int n = kSeriesTerms - 1; n >= 0; --n) acc = acc * u + kShapeSeries[n];
    return acc;
  }
  if (u > 0.0) {
    const double x = std::sqrt(u);
    const double s = std::sinh(x) / x;
    return s * s;
  }
  const double x = std::sqrt(-u);
  const double s = std::sin(x) / x;
  return s * s;
}

inline double shape_factor_deriv(double u) {
  if (std::abs(u) < kSeriesRadius) {
    double acc = 0.0;
    for (int n = kSeriesTerms - 1; n >= 1; --n) acc = acc * u + n * kShapeSeries[n];
    return acc;
  }
  if (u > 0.0) {
    const double x = std::sqrt(u);
    const double sh = std::sinh(x);
    return (x * std::sinh(2.0 * x) - 2.0 * sh * sh) / (2.0 * u * u);
  }
  const double x = std::sqrt(-u);
  const double sn = std::sin(x);
  return -(x * std::sin(2.0 * x) - 2.0 * sn * sn) / (2.0 * u * u);
}

inline void check_energy(double energy) {
  if (!(std::isfinite(energy) && energy > 0.0))
    throw DomainError("transmission energy must be positive and finite, got " + std::to_string(energy));
}

// log of 1/G in the deep-tunnelling regime, where sinh^2 would overflow:
// 1/G = 16 E (V0 - E) e^(-2y) / (V0^2 (1 - e^(-2y))^2), y = kappa a.
inline double deep_log_inverse_g(double energy, const Barrier& b, double y) {
  const double v0 = b.height;
  return std::log(16.0 * energy * (v0 - energy) / (v0 * v0)) - 2.0 * y -
         2.0 * std::log1p(-std::exp(-2.0 * y));
}

}  // namespace detail

inline double transmission(double energy, const Barrier& b) {
  detail::check_energy(energy);
  const double v0 = b.height;
  const double a2 = b.width * b.width;
  const double u = (v0 - energy) * a2;
  if (u > 0.0) {
    const double y = std::sqrt(u);
    if (y > kDeepTunnelling) {
      const double g = std::exp(detail::deep_log_inverse_g(energy, b, y));
      return g / (1.0 + g);
    }
  }
  const double big_g = v0 * v0 * a2 * detail::shape_factor(u) / (4.0 * energy);
  return 1.0 / (1.0 + big_g);
}

// dT/dE, differentiated branch by branch from the same closed forms.
inline double transmission_grad(double energy, const Barrier& b) {
  detail::check_energy(energy);
  const double v0 = b.height;
  const double a2 = b.width * b.width;
  const double u = (v0 - energy) * a2;

  if (u > 0.0) {
    const double y = std::sqrt(u);
    if (y > kDeepTunnelling) {
      const double g = std::exp(detail::deep_log_inverse_g(energy, b, y));
      const double e2y = std::exp(-2.0 * y);
      const double dy = -a2 / (2.0 * y);
      const double dlog_g = 1.0 / energy - 1.0 / (v0 - energy) - 2.0 * dy -
                            4.0 * dy * e2y / (1.0 - e2y);
      return g / ((1.0 + g) * (1.0 + g)) * dlog_g;
    }
    // T(1 - T) * d(-ln G)/dE; stays finite when G overflows at tiny E.
    const double f = detail::shape_factor(u);
    const double big_g = v0 * v0 * a2 * f / (4.0 * energy);
    const double w = big_g > 1e150 ? 1.0 / big_g : big_g / ((1.0 + big_g) * (1.0 + big_g));
    return w * (a2 * detail::shape_factor_deriv(u) / f + 1.0 / energy);
  }

  const double f = detail::shape_factor(u);
  const double big_g = v0 * v0 * a2 * f / (4.0 * energy);
  const double dg = 0.25 * v0 * v0 * a2 *
                    (-a2 * detail::shape_factor_deriv(u) / energy - f / (energy * energy));
  const double t = 1.0 / (1.0 + big_g);
  return -dg * t * t;
}

inline double apply_energy_map(double x, const EnergyMap& m) {
  if (m.kind == EnergyMapKind::IdentityClamp) return std::max(x, kClampFloor);
  const double s = m.scale;
  const double t = x / s;
  double e;
  if (t > 40.0)
    e = x + s * std::log1p(std::exp(-t));
  else if (t < -40.0)
    e = s * std::exp(t);
  else
    e = s * std::log1p(std::exp(t));
  // exp underflows below t ~ -745; the energy must stay strictly positive.
  return std::max(e, std::numeric_limits<double>::min());
}

inline double energy_map_grad(double x, const EnergyMap& m) {
  if (m.kind == EnergyMapKind::IdentityClamp) return x > kClampFloor ? 1.0 : 0.0;
  const double t = x / m.scale;
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

struct Activated {
  double value;
  double deriv;  // d value / d pre-activation
};

inline Activated qt_activate(double x, const Barrier& b, const EnergyMap& m) {
  const double e = apply_energy_map(x, m);
  return {transmission(e, b), transmission_grad(e, b) * energy_map_grad(x, m)};
}

struct ActivatedVector {
  std::vector<double> values;
  std::vector<double> derivs;
};

inline ActivatedVector qt_activate(std::span<const double> pre, const Barrier& b, const EnergyMap& m) {
  ActivatedVector out;
  out.values.resize(pre.size());
  out.derivs.resize(pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i) {
    if (!std::isfinite(pre[i])) throw DomainError("non-finite pre-activation");
    const auto [v, d] = qt_activate(pre[i], b, m);
    out.values[i] = v;
    out.derivs[i] = d;
  }
  return out;
}

// Bound-state energies of the symmetric finite square well of depth V0 and
// full width a (the same hyperparameters read as a well rather than a
// barrier). With z0 = (a/2) sqrt(V0) the levels solve
//   z tan z = sqrt(z0^2 - z^2)     (even)
//  -z cot z = sqrt(z0^2 - z^2)     (odd)
// and E_n = -V0 + (2 z_n / a)^2. There are floor(2 z0 / pi) + 1 of them.
inline std::vector<double> bound_state_energies(const Barrier& b) {
  b.validate();
  constexpr double kTol = 1e-12;
  constexpr double half_pi = std::numbers::pi / 2.0;
  const double z0 = 0.5 * b.width * std::sqrt(b.height);
  const double z0sq = z0 * z0;

  auto rhs = [&](double z) { return std::sqrt(std::max(0.0, z0sq - z * z)); };
  auto even = [&](double z) { return z * std::tan(z) - rhs(z); };
  auto odd = [&](double z) { return -z / std::tan(z) - rhs(z); };

  // Each matching function is increasing on its bracket, negative at the
  // lower end and nonnegative (or +inf) at the upper end.
  auto bisect = [&](auto&& fn, double lo, double hi) {
    for (int it = 0; it < 200 && hi - lo > kTol; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;
      if (fn(mid) < 0.0) lo = mid; else hi = mid;
    }
    return 0.5 * (lo + hi);
  };

  std::vector<double> roots;
  for (int k = 0;; ++k) {
    const double start = k * half_pi;
    if (!(start < z0)) break;
    const double end = std::min(start + half_pi, z0);
    roots.push_back(k % 2 == 0 ? bisect(even, start, end) : bisect(odd, start, end));
  }

  std::vector<double> levels;
  levels.reserve(roots.size());
  for (double z : roots) {
    const double k = 2.0 * z / b.width;
    levels.push_back(std::min(0.0, -b.height + k * k));
  }
  std::sort(levels.begin(), levels.end());
  return levels;
}

}  // namespace qtnn
