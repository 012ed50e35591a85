#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "oracles.hpp"
#include "qtnn/qt_core.hpp"
#include "qtnn/random.hpp"

using namespace qtnn;
using std::numbers::pi;

namespace {

const std::vector<double> kHeights = {0.5, 1.0, 2.0, 5.0};
const std::vector<double> kWidths = {0.5, 1.0, 2.0};

double central_diff(double e, const Barrier& b) {
  const double h = 1e-6 * std::max(1.0, e);
  return (transmission(e + h, b) - transmission(e - h, b)) / (2.0 * h);
}

}  // namespace

TEST(Barrier, RejectsNonPositiveOrNonFinite) {
  EXPECT_THROW(Barrier(0.0, 1.0), DomainError);
  EXPECT_THROW(Barrier(1.0, -1.0), DomainError);
  EXPECT_THROW(Barrier(NAN, 1.0), DomainError);
  EXPECT_THROW(Barrier(1.0, INFINITY), DomainError);
  EXPECT_NO_THROW(Barrier(1.0, 1.0));
}

TEST(Transmission, BranchPointLimit) {
  EXPECT_NEAR(transmission(1.0, Barrier(1.0, 2.0)), 0.5, 1e-12);
  for (double v0 : kHeights)
    for (double a : kWidths)
      EXPECT_NEAR(transmission(v0, Barrier(v0, a)), 1.0 / (1.0 + a * a * v0 / 4.0), 1e-12);
}

TEST(Transmission, Resonances) {
  EXPECT_NEAR(transmission(1.0 + pi * pi, Barrier(1.0, 1.0)), 1.0, 1e-12);
  for (double v0 : kHeights)
    for (double a : kWidths)
      for (int n = 1; n <= 5; ++n) {
        const double e = v0 + (n * pi / a) * (n * pi / a);
        EXPECT_NEAR(transmission(e, Barrier(v0, a)), 1.0, 1e-12) << v0 << " " << a << " " << n;
      }
}

TEST(Transmission, MatchesGridSchrodingerOracle) {
  // Frozen from the RK4 oracle and an independent 40-digit closed-form
  // evaluation: 0.62929027363485367, 0.91868770688270666.
  const Barrier b(1.0, 1.0);
  EXPECT_NEAR(oracle::grid_transmission(0.5, 1.0, 1.0), 0.6292902736348537, 1e-9);
  EXPECT_NEAR(oracle::grid_transmission(2.0, 1.0, 1.0), 0.9186877068827067, 1e-9);
  EXPECT_NEAR(transmission(0.5, b), oracle::grid_transmission(0.5, 1.0, 1.0), 1e-6);
  EXPECT_NEAR(transmission(2.0, b), oracle::grid_transmission(2.0, 1.0, 1.0), 1e-6);
  EXPECT_NEAR(transmission(0.5, b), 0.6292902736348537, 1e-12);
  EXPECT_NEAR(transmission(2.0, b), 0.9186877068827067, 1e-12);
}

TEST(Transmission, AgreesWithExtendedPrecisionClosedFormAcrossGrid) {
  for (double v0 : kHeights)
    for (double a : kWidths)
      for (double r : {0.01, 0.1, 0.3, 0.7, 0.9, 0.999, 1.001, 1.5, 3.0, 10.0, 100.0}) {
        const double e = r * v0;
        const double want = static_cast<double>(oracle::closed_form_transmission(e, v0, a));
        EXPECT_NEAR(transmission(e, Barrier(v0, a)), want, 1e-13 + 1e-12 * want);
      }
}

TEST(Transmission, RejectsInvalidEnergy) {
  const Barrier b;
  EXPECT_THROW(transmission(0.0, b), DomainError);
  EXPECT_THROW(transmission(-1.0, b), DomainError);
  EXPECT_THROW(transmission(NAN, b), DomainError);
  EXPECT_THROW(transmission_grad(0.0, b), DomainError);
}

TEST(Transmission, StaysInUnitIntervalForRandomInputs) {
  SeedStream s(11);
  for (int i = 0; i < 20000; ++i) {
    const Barrier b(std::exp(s.uniform(-5, 5)), std::exp(s.uniform(-4, 4)));
    const double e = std::exp(s.uniform(-20, 20));
    const double t = transmission(e, b);
    ASSERT_GE(t, 0.0);
    ASSERT_LE(t, 1.0);
    ASSERT_TRUE(std::isfinite(transmission_grad(e, b)));
  }
}

TEST(Transmission, BranchContinuity) {
  // The points V0(1 -+ 2 delta) straddle the branch window. T has slope
  // T'(V0) there, so the test removes the first-order term and requires no
  // residual step, plus agreement with the unstitched closed form.
  for (double v0 : kHeights)
    for (double a : kWidths) {
      const Barrier b(v0, a);
      const double e_lo = v0 * (1 - 2 * kBranchWindow);
      const double e_hi = v0 * (1 + 2 * kBranchWindow);
      const double lo = transmission(e_lo, b);
      const double hi = transmission(e_hi, b);
      const double slope = transmission_grad(v0, b);
      EXPECT_LT(std::abs((hi - lo) - slope * (e_hi - e_lo)), 1e-8);
      EXPECT_NEAR(lo, static_cast<double>(oracle::closed_form_transmission(e_lo, v0, a)), 1e-9);
      EXPECT_NEAR(hi, static_cast<double>(oracle::closed_form_transmission(e_hi, v0, a)), 1e-9);
      const double limit = 1.0 / (1.0 + a * a * v0 / 4.0);
      EXPECT_NEAR(lo, limit, 1e-6 + std::abs(slope) * (v0 - e_lo));
      EXPECT_NEAR(hi, limit, 1e-6 + std::abs(slope) * (e_hi - v0));
    }
}

TEST(Transmission, Limits) {
  for (double v0 : kHeights)
    for (double a : kWidths) {
      const Barrier b(v0, a);
      EXPECT_LT(transmission(1e-10 * v0, b), 1e-6);
      EXPECT_GT(transmission(1e6 * v0, b), 1.0 - 1e-4);
    }
}

TEST(Transmission, StrictlyIncreasingBelowBarrier) {
  for (double v0 : kHeights)
    for (double a : kWidths) {
      const Barrier b(v0, a);
      double prev = -1.0;
      for (int i = 1; i < 10000; ++i) {
        const double t = transmission(v0 * i / 10000.0, b);
        ASSERT_GT(t, prev) << v0 << " " << a << " " << i;
        prev = t;
      }
    }
}

TEST(Transmission, DeepTunnellingIsFiniteAndContinuous) {
  // kappa a from 1 to 1e4: no overflow, no NaN.
  for (double ka : {1.0, 19.999, 20.0, 20.001, 100.0, 354.0, 356.0, 1000.0, 1e4}) {
    const Barrier b(1.0, ka / std::sqrt(0.5));
    const double t = transmission(0.5, b);
    const double g = transmission_grad(0.5, b);
    EXPECT_TRUE(std::isfinite(t) && std::isfinite(g)) << ka;
    EXPECT_GE(t, 0.0);
  }
  // Either side of the switch agrees with the extended-precision closed form.
  for (double ka : {19.9999999, 20.0000001, 25.0}) {
    const double a = ka / std::sqrt(0.5);
    const double want = static_cast<double>(oracle::closed_form_transmission(0.5L, 1.0L, a));
    EXPECT_NEAR(transmission(0.5, Barrier(1.0, a)) / want, 1.0, 1e-12);
  }
  EXPECT_EQ(transmission(0.5, Barrier(1.0, 1e4 / std::sqrt(0.5))), 0.0);
}

TEST(TransmissionGrad, ResonanceIsStationary) {
  EXPECT_NEAR(transmission_grad(1.0 + pi * pi, Barrier(1.0, 1.0)), 0.0, 1e-12);
}

TEST(TransmissionGrad, FrozenValue) {
  // d/dE of the closed form at E = 0.5, 40 digits: 0.54185490311917597...
  EXPECT_NEAR(transmission_grad(0.5, Barrier(1.0, 1.0)), 0.541854903119176, 1e-12);
  EXPECT_NEAR(central_diff(0.5, Barrier(1.0, 1.0)), 0.541854903119176, 1e-8);
}

TEST(TransmissionGrad, MatchesCentralDifferencesAwayFromBranch) {
  SeedStream s(3);
  double worst = 0.0;
  for (double v0 : kHeights)
    for (double a : kWidths) {
      const Barrier b(v0, a);
      for (int i = 0; i < 2000; ++i) {
        const double e = v0 * std::exp(s.uniform(std::log(1e-3), std::log(50.0)));
        if (std::abs(e - v0) <= 1e-3 * v0) continue;
        const double g = transmission_grad(e, b);
        const double fd = central_diff(e, b);
        // Near-stationary points carry no relative information.
        const double scale = std::max(std::abs(fd), 1e-6);
        worst = std::max(worst, std::abs(g - fd) / scale);
      }
    }
  EXPECT_LT(worst, 1e-5);
}

TEST(TransmissionGrad, SmoothAcrossBranchWindow) {
  for (double v0 : kHeights)
    for (double a : kWidths) {
      const Barrier b(v0, a);
      const double in = transmission_grad(v0, b);
      const double below = transmission_grad(v0 * (1 - 1e-3), b);
      const double above = transmission_grad(v0 * (1 + 1e-3), b);
      EXPECT_NEAR(in, 0.5 * (below + above), 1e-3 * std::abs(in) + 1e-9);
    }
}

TEST(EnergyMap, SmoothPositive) {
  const EnergyMap m{EnergyMapKind::SmoothPositive, 1.0};
  EXPECT_NEAR(apply_energy_map(0.0, m), std::log(2.0), 1e-15);
  EXPECT_NEAR(apply_energy_map(100.0, m), 100.0, 1e-9);
  EXPECT_GT(apply_energy_map(-1000.0, m), 0.0);
  EXPECT_NEAR(apply_energy_map(-50.0, m), std::exp(-50.0), 1e-30);
  const EnergyMap wide{EnergyMapKind::SmoothPositive, 2.5};
  EXPECT_NEAR(apply_energy_map(1.0, wide), 2.5 * std::log1p(std::exp(0.4)), 1e-14);
}

TEST(EnergyMap, IdentityClamp) {
  const EnergyMap m{EnergyMapKind::IdentityClamp, 1.0};
  EXPECT_EQ(apply_energy_map(-5.0, m), 1e-12);
  EXPECT_EQ(apply_energy_map(3.0, m), 3.0);
  EXPECT_EQ(energy_map_grad(-5.0, m), 0.0);
  EXPECT_EQ(energy_map_grad(3.0, m), 1.0);
}

TEST(EnergyMap, GradientMatchesCentralDifference) {
  for (double s : {0.5, 1.0, 3.0}) {
    const EnergyMap m{EnergyMapKind::SmoothPositive, s};
    for (double x = -30; x <= 30; x += 0.37) {
      const double fd = (apply_energy_map(x + 1e-6, m) - apply_energy_map(x - 1e-6, m)) / 2e-6;
      EXPECT_NEAR(energy_map_grad(x, m), fd, 1e-7);
    }
  }
}

TEST(QtActivate, ZeroPreActivation) {
  const auto out = qt_activate(std::vector<double>{0.0}, Barrier(1.0, 1.0), EnergyMap{});
  ASSERT_EQ(out.values.size(), 1u);
  // Oracle value at E = ln 2.
  EXPECT_NEAR(out.values[0], oracle::grid_transmission(std::log(2.0), 1.0, 1.0), 1e-6);
  EXPECT_NEAR(out.values[0], 0.7147411528423229, 1e-12);
}

TEST(QtActivate, ResonanceThroughInverseMap) {
  const double e = 1.0 + pi * pi;
  const double x = std::log(std::expm1(e));
  const auto out = qt_activate(std::vector<double>{x}, Barrier(1.0, 1.0), EnergyMap{});
  EXPECT_NEAR(out.values[0], 1.0, 1e-12);
}

TEST(QtActivate, EmptyAndChainRule) {
  EXPECT_TRUE(qt_activate(std::vector<double>{}, Barrier(), EnergyMap{}).values.empty());
  const Barrier b(2.0, 0.7);
  const EnergyMap m{};
  for (double x = -6; x <= 12; x += 0.25) {
    const double fd = (qt_activate(x + 1e-6, b, m).value - qt_activate(x - 1e-6, b, m).value) / 2e-6;
    EXPECT_NEAR(qt_activate(x, b, m).deriv, fd, 1e-7);
    const double v = qt_activate(x, b, m).value;
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_THROW(qt_activate(std::vector<double>{NAN}, b, m), DomainError);
}

TEST(BoundStates, LevelCounts) {
  EXPECT_EQ(bound_state_energies(Barrier(100.0, 1.0)).size(), 4u);
  EXPECT_EQ(bound_state_energies(Barrier(0.01, 1.0)).size(), 1u);
  EXPECT_EQ(oracle::well_levels(100.0, 1.0).size(), 4u);
  EXPECT_EQ(oracle::well_levels(0.01, 1.0).size(), 1u);
}

TEST(BoundStates, MatchOracleLevels) {
  for (auto [v0, a] : {std::pair{100.0, 1.0}, {0.01, 1.0}, {50.0, 2.0}, {7.0, 3.3}}) {
    const auto got = bound_state_energies(Barrier(v0, a));
    const auto want = oracle::well_levels(v0, a);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-8 * v0);
  }
}

TEST(BoundStates, DeepWellApproachesInfiniteWell) {
  const auto levels = bound_state_energies(Barrier(1e6, 1.0));
  ASSERT_FALSE(levels.empty());
  EXPECT_NEAR((levels[0] + 1e6) / (pi * pi), 1.0, 0.02);
  for (std::size_t i = 1; i < levels.size(); ++i) EXPECT_LT(levels[i - 1], levels[i]);
  for (double e : levels) EXPECT_LE(e, 0.0);
}

TEST(BoundStates, CountFormulaOnRandomBarriers) {
  SeedStream s(2024);
  for (int i = 0; i < 100; ++i) {
    const Barrier b(std::exp(s.uniform(std::log(0.01), std::log(1e4))), std::exp(s.uniform(std::log(0.1), std::log(10.0))));
    const double z0 = 0.5 * b.width * std::sqrt(b.height);
    EXPECT_EQ(bound_state_energies(b).size(), static_cast<std::size_t>(std::floor(2 * z0 / pi)) + 1);
  }
}
