#pragma once

#include <cstdint>
#include <random>

#include "angdiff/common.hpp"

namespace angdiff {

std::uint64_t splitmix64(std::uint64_t x);

// Child seed for stream `stream` of root seed `root`. Streams are addressed by
// a counter, never by draw order, so adding or reordering consumers cannot
// shift the numbers another consumer sees.
std::uint64_t stream_seed(std::uint64_t root, std::uint64_t stream);

// Well-known stream ids. Commands derive every RNG from the root seed via
// these counters.
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kData = 2;
inline constexpr std::uint64_t kTrain = 3;
inline constexpr std::uint64_t kInject = 4;
inline constexpr std::uint64_t kSample = 5;
inline constexpr std::uint64_t kEval = 6;
inline constexpr std::uint64_t kReference = 7;
inline constexpr std::uint64_t kMask = 8;
}  // namespace streams

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  Rng split(std::uint64_t stream) const { return Rng(stream_seed(seed_, stream)); }
  std::uint64_t seed() const { return seed_; }

  double normal();
  // Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer on [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p) { return uniform() < p; }
  std::uint64_t next_u64() { return engine_(); }

  void fill_normal(Span out);
  Vec normal_vec(std::size_t n);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace angdiff
