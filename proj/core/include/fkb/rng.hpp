#pragma once

#include <cstdint>
#include <limits>

namespace fkb {

// Purpose tags mixed into the stream id so that, e.g., transform draw #7 and
// gamma draw #7 under the same seed are independent.
enum class StreamDomain : std::uint64_t {
  kTransform = 1,
  kGamma = 2,
  kBriefPattern = 3,
  kRansac = 4,
  kSynthetic = 5,
};

/// Counter-based 64-bit generator.
///
/// Output i of stream (seed, stream) is splitmix64(key + (i + 1) * golden),
/// with key = splitmix64(seed ^ splitmix64(stream)). Every draw index gets
/// its own stream, so results do not depend on evaluation order or thread
/// count. Floating-point conversions are implemented here rather than with
/// <random> distributions, whose output is implementation-defined.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, std::uint64_t stream);
  CounterRng(std::uint64_t seed, StreamDomain domain, std::uint64_t index);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return next_u64(); }
  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi);
  // Unbiased integer in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller (both outputs consumed in order).
  double gaussian();

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace fkb
