#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

#include "qtnn/random.hpp"

using namespace qtnn;

TEST(SeedStream, SameSeedAndStreamRepeat) {
  SeedStream a(42, 7), b(42, 7);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(gaussian_draw(a), gaussian_draw(b));
}

TEST(SeedStream, DistinctStreamsDiverge) {
  SeedStream base(42);
  SeedStream a = base.child(1), b = base.child(2);
  int equal = 0;
  for (int i = 0; i < 1000; ++i) equal += a.next_u64() == b.next_u64();
  EXPECT_EQ(equal, 0);
  EXPECT_NE(SeedStream(1, 0).next_u64(), SeedStream(2, 0).next_u64());
  EXPECT_EQ(base.child(3), SeedStream(42).child(3));
}

TEST(SeedStream, GaussianMoments) {
  SeedStream s(123);
  const int n = 100000;
  double sum = 0.0, sq = 0.0;
  std::vector<double> xs(n);
  for (auto& x : xs) {
    x = s.gaussian();
    sum += x;
  }
  const double mean = sum / n;
  for (double x : xs) sq += (x - mean) * (x - mean);
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(sq / (n - 1), 1.0, 0.03);
}

TEST(SeedStream, GaussianConsumesTwoUniforms) {
  SeedStream a(5), b(5);
  a.gaussian();
  b.uniform();
  b.uniform();
  EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(SeedStream, UniformRangeAndBelow) {
  SeedStream s(9);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const double u = s.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ++hist[s.below(7)];
  }
  for (int c : hist) EXPECT_NEAR(c, 10000, 500);
}

TEST(Shuffle, IsSeededPermutation) {
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  auto w = v;
  SeedStream a(1), b(1);
  shuffle(std::span<int>(v), a);
  shuffle(std::span<int>(w), b);
  EXPECT_EQ(v, w);
  std::sort(w.begin(), w.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(w[i], i);
}

TEST(SeedStream, FillGaussianUsesBothBoxMullerOutputs) {
  SeedStream a(21), b(21);
  std::vector<double> out(5);
  a.fill_gaussian(out);
  for (int pair = 0; pair < 2; ++pair) {
    const double u1 = 1.0 - b.uniform(), u2 = b.uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    EXPECT_EQ(out[2 * pair], r * std::cos(2.0 * std::numbers::pi * u2));
    EXPECT_EQ(out[2 * pair + 1], r * std::sin(2.0 * std::numbers::pi * u2));
  }
  EXPECT_EQ(out[4], b.gaussian());
  EXPECT_EQ(a, b);
}

TEST(SeedStream, FillGaussianMoments) {
  SeedStream s(22);
  std::vector<double> v(200000);
  s.fill_gaussian(v);
  double m = 0, m2 = 0, m4 = 0;
  for (double x : v) m += x;
  m /= v.size();
  for (double x : v) {
    m2 += (x - m) * (x - m);
    m4 += std::pow(x - m, 4);
  }
  m2 /= v.size();
  m4 /= v.size();
  EXPECT_NEAR(m, 0.0, 5.0 / std::sqrt(200000.0));
  EXPECT_NEAR(m2, 1.0, 0.02);
  EXPECT_NEAR(m4 / (m2 * m2), 3.0, 0.1);
}
