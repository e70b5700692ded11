#pragma once

#include <cstdint>

namespace ucsd {

// Counter-based random stream (Philox4x32-10). A draw depends only on
// (master_seed, stream_id, counter), so streams can be derived per image,
// epoch or purpose and replayed independently of evaluation order.
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t master_seed, std::uint64_t stream_id, std::uint64_t counter = 0)
      : master_seed_(master_seed), stream_id_(stream_id), counter_(counter) {}

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Standard normal via Box-Muller; consumes two counters.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  // Child stream keyed by (purpose, a, b); the parent is not advanced.
  [[nodiscard]] RngStream derive(std::uint64_t purpose, std::uint64_t a = 0,
                                 std::uint64_t b = 0) const;

  std::uint64_t master_seed() const { return master_seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t master_seed_ = 0;
  std::uint64_t stream_id_ = 0;
  std::uint64_t counter_ = 0;
};

// Stream purposes used across the library.
namespace purpose {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kScene = 2;
inline constexpr std::uint64_t kShuffle = 3;
inline constexpr std::uint64_t kAnnotator = 4;
inline constexpr std::uint64_t kReparam = 5;
inline constexpr std::uint64_t kLangevin = 6;
inline constexpr std::uint64_t kMix = 7;
inline constexpr std::uint64_t kPredict = 8;
inline constexpr std::uint64_t kBank = 9;
inline constexpr std::uint64_t kStep = 10;
}  // namespace purpose

}  // namespace ucsd
