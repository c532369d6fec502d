#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

#include "linalg.hpp"

namespace cgbound {

/// Philox4x32-10 block function (Salmon et al., SC'11).
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t m0 = 0xD2511F53u, m1 = 0xCD9E8D57u;
  constexpr std::uint32_t w0 = 0x9E3779B9u, w1 = 0xBB67AE85u;
  for (int r = 0; r < 10; ++r) {
    const std::uint64_t p0 = std::uint64_t(m0) * ctr[0];
    const std::uint64_t p1 = std::uint64_t(m1) * ctr[2];
    ctr = {std::uint32_t(p1 >> 32) ^ ctr[1] ^ key[0], std::uint32_t(p1), std::uint32_t(p0 >> 32) ^ ctr[3] ^ key[1],
           std::uint32_t(p0)};
    key[0] += w0;
    key[1] += w1;
  }
  return ctr;
}

/// Identifies a random stream: experiment seed, stream index, and an optional substream
/// (trajectory or chain number).
struct SeedLineage {
  std::uint64_t seed = 0;
  std::uint32_t stream = 0;
  std::uint32_t substream = 0;
};

/// Counter-based stream. Draw j of lineage (seed, stream, substream) is a pure function of
/// those four numbers, so streams can be consumed in any order or thread.
class RandomStream {
public:
  explicit RandomStream(SeedLineage lin) : lin_(lin) {}
  RandomStream(std::uint64_t seed, std::uint32_t stream, std::uint32_t substream = 0)
      : lin_{seed, stream, substream} {}

  const SeedLineage& lineage() const { return lin_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() {
    if (avail_ == 0) refill();
    std::uint64_t hi = buf_[4 - avail_], lo = buf_[5 - avail_];
    avail_ -= 2;
    return (hi << 32) | lo;
  }

  /// Uniform on (0,1), 53-bit resolution, never exactly 0.
  double uniform() { return (double(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  /// Standard normal by Box-Muller; spare value cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform(), u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  Vec normal_vec(long n) {
    Vec v(n);
    for (long i = 0; i < n; ++i) v(i) = normal();
    return v;
  }

private:
  void refill() {
    std::array<std::uint32_t, 4> ctr = {std::uint32_t(counter_), std::uint32_t(counter_ >> 32), lin_.stream,
                                        lin_.substream};
    std::array<std::uint32_t, 2> key = {std::uint32_t(lin_.seed), std::uint32_t(lin_.seed >> 32)};
    auto out = philox4x32(ctr, key);
    for (int i = 0; i < 4; ++i) buf_[i] = out[i];
    avail_ = 4;
    ++counter_;
  }

  SeedLineage lin_;
  std::uint64_t counter_ = 0;
  std::uint64_t buf_[4] = {0, 0, 0, 0};
  int avail_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Fixed stream indices so every stochastic operation has a declared stream.
namespace streams {
inline constexpr std::uint32_t gibbs = 1;
inline constexpr std::uint32_t conditional = 2;
inline constexpr std::uint32_t overdamped = 3;
inline constexpr std::uint32_t langevin = 4;
inline constexpr std::uint32_t effective = 5;
inline constexpr std::uint32_t coupled_pair = 6;
inline constexpr std::uint32_t constants = 7;
inline constexpr std::uint32_t initial = 8;
inline constexpr std::uint32_t sliced = 9;
}  // namespace streams

}  // namespace cgbound
