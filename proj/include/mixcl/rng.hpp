#pragma once

#include <cstdint>
#include <vector>

namespace mixcl {

// Deterministic seeded PRNG. Algorithm is fixed: xoshiro256** (Blackman &
// Vigna), state expanded from the 64-bit seed with splitmix64. The same seed
// yields the same stream on every platform; uniforms are 53-bit values in
// [0,1).
//
// Sub-streams: substream(master, label[, index]) derives an independent Rng
// from a labeled offset of the master seed, so e.g. the weight-init stream
// does not shift when the data-shuffle stream consumes more values.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  static Rng substream(std::uint64_t master_seed, std::uint64_t label,
                       std::uint64_t index = 0);

  std::uint64_t next_u64();

  // Unbiased integer in [0, bound) by rejection.
  std::uint64_t below(std::uint64_t bound);

  double uniform();  // [0, 1)

  // Box-Muller transform (cosine branch, no spare caching): each call
  // consumes exactly two uniforms.
  double normal(double mean = 0.0, double stddev = 1.0);
  std::vector<double> normal_vec(double mean, double stddev, std::size_t n);

  // Gamma(shape, 1): Marsaglia-Tsang squeeze for shape >= 1, and the
  // U^(1/shape) * Gamma(shape+1) boost for shape < 1.
  double gamma(double shape);

  // Beta(alpha, alpha) as G1/(G1+G2), G_i ~ Gamma(alpha, 1).
  double beta_symmetric(double alpha);

  // Fisher-Yates shuffle of 0..n-1.
  std::vector<int> permutation(int n);

 private:
  std::uint64_t s_[4];
};

// Labels for the per-purpose sub-streams of one training run.
namespace stream {
inline constexpr std::uint64_t kWeightInit = 1;
inline constexpr std::uint64_t kDataShuffle = 2;
inline constexpr std::uint64_t kLambda = 3;
inline constexpr std::uint64_t kNoise = 4;
inline constexpr std::uint64_t kRun = 5;
inline constexpr std::uint64_t kJob = 6;
}  // namespace stream

}  // namespace mixcl
