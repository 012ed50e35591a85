#pragma once

// Deterministic random streams: xoshiro256** seeded through splitmix64.
//
// A stream is identified by (seed, stream_id). Child streams are derived by
// hashing the parent id with a child index, so a run can hand out one
// independent stream per purpose (init, shuffle, noise, eval) and per sample
// index without the streams' consumption interfering with each other.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>

namespace qtnn {

inline constexpr std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t mix64(std::uint64_t x) {
  std::uint64_t s = x;
  return splitmix64_next(s);
}

class SeedStream {
 public:
  explicit SeedStream(std::uint64_t seed = 0, std::uint64_t stream_id = 0)
      : seed_(seed), stream_id_(stream_id) {
    std::uint64_t sm = seed ^ mix64(stream_id ^ 0x5851f42d4c957f2dULL);
    for (auto& word : state_) word = splitmix64_next(sm);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  // Independent stream for a named purpose or per-index work item.
  SeedStream child(std::uint64_t index) const {
    return SeedStream(seed_, mix64(stream_id_ * 0x9e3779b97f4a7c15ULL + index + 1));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // 53-bit uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n) by rejection (no modulo bias).
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do x = next_u64(); while (x >= limit);
    return x % n;
  }

  // Standard normal by Box-Muller. Consumes exactly two uniforms per call,
  // u1 then u2, and returns sqrt(-2 ln(1 - u1)) cos(2 pi u2); the sine
  // partner is discarded so the stream position depends only on call count.
  double gaussian() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Bulk standard normals: each (u1, u2) pair yields both Box-Muller outputs,
  // cosine then sine; an odd final slot takes gaussian(). Not the same
  // sequence as repeated gaussian() calls.
  void fill_gaussian(std::span<double> out) {
    std::size_t i = 0;
    for (; i + 2 <= out.size(); i += 2) {
      const double u1 = 1.0 - uniform();
      const double u2 = uniform();
      const double r = std::sqrt(-2.0 * std::log(u1));
      const double theta = 2.0 * std::numbers::pi * u2;
      out[i] = r * std::cos(theta);
      out[i + 1] = r * std::sin(theta);
    }
    if (i < out.size()) out[i] = gaussian();
  }

  friend bool operator==(const SeedStream&, const SeedStream&) = default;

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t state_[4];
};

inline double gaussian_draw(SeedStream& s) { return s.gaussian(); }

// Fisher-Yates over any random-access range.
template <typename T>
void shuffle(std::span<T> items, SeedStream& s) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(s.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace qtnn
