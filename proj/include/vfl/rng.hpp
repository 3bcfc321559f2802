#pragma once

#include <cstdint>

#include "vfl/vec.hpp"

namespace vfl {

// Counter-based random stream: the value of draw k depends only on
// (seed, stream_id, k), never on host, thread schedule, or call grouping.
// Distinct stream ids give statistically independent sequences, which lets
// each protocol actor own its noise regardless of delivery order.
//
// Each uniform or normal draw advances the counter by exactly one.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t counter = 0)
      : seed_(seed), stream_(stream_id), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

  // Derived independent stream; handy for (actor, iteration) keying.
  RngStream substream(std::uint64_t tag) const;

  std::uint64_t next_u64();
  double uniform();          // (0, 1), endpoints excluded
  double standard_normal();  // via the normal quantile of one uniform
  Vec standard_normal_vec(std::size_t n);
  // Uniform integer in [lo, hi] inclusive.
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_;
};

// Standard normal quantile (Wichura's AS241, double precision).
double normal_quantile(double p);

// Stream id for a protocol actor at a given iteration. Server is actor 0,
// client j is actor j+1; data generation and other tooling use tags >= 1000.
std::uint64_t actor_stream(std::uint64_t actor, std::uint64_t iteration);

}  // namespace vfl
