#include "stylus/rng.hpp"

#include <cmath>

#include "stylus/common.hpp"

namespace stylus {

namespace {

inline std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9E3779B97f4A7C15ull;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

void Rng::reseed(std::uint64_t seed) {
  std::uint64_t x = seed;
  for (auto& s : s_) s = splitmix64(x);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (lo > hi) fail(ErrorClass::config, "uniform_int: empty range");
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(next_u64());  // full 64-bit range
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  std::uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return lo + static_cast<std::int64_t>(v % span);
}

double Rng::normal() {
  // Box-Muller, cosine branch only: one draw per call keeps replay simple.
  double u1 = uniform();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return r * std::cos(6.283185307179586 * u2);
}

std::size_t Rng::weighted_index(const std::vector<double>& cumulative) {
  if (cumulative.empty()) fail(ErrorClass::config, "weighted_index: empty table");
  const double total = cumulative.back();
  const double r = uniform() * total;
  std::size_t lo = 0, hi = cumulative.size() - 1;
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (cumulative[mid] <= r) {
      lo = mid + 1;
    } else {
      hi = mid;
    }
  }
  return lo;
}

Rng Rng::child(std::string_view label) const {
  return child(fnv1a(label));
}

Rng Rng::child(std::uint64_t salt) const {
  Rng r;
  std::uint64_t x = s_[0] ^ rotl(s_[2], 13) ^ (salt * 0x9E3779B97f4A7C15ull);
  for (auto& s : r.s_) s = splitmix64(x);
  return r;
}

}  // namespace stylus
