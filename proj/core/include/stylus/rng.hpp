#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace stylus {

// xoshiro256** with splitmix64 seeding. Every random draw in the project goes
// through this generator so that a (seed, config) pair reproduces the same
// bytes on any platform; std::* distributions are implementation-defined and
// are not used anywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform in [0, 1), 53-bit resolution.
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [lo, hi] (inclusive), unbiased via rejection.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  // Standard normal via Box-Muller (deterministic, no cached spare).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  bool bernoulli(double p) { return uniform() < p; }

  // Weighted index draw over non-negative weights summing to `total`.
  std::size_t weighted_index(const std::vector<double>& cumulative);

  // Derived stream: mixes a label into the state so that subsystems consume
  // independent sequences from one top-level seed.
  Rng child(std::string_view label) const;
  Rng child(std::uint64_t salt) const;

 private:
  std::uint64_t s_[4];
};

}  // namespace stylus
