#include "mixcl/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mixcl {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace

Rng::Rng(std::uint64_t seed) {
  std::uint64_t sm = seed;
  for (auto& w : s_) w = splitmix64(sm);
}

Rng Rng::substream(std::uint64_t master_seed, std::uint64_t label,
                   std::uint64_t index) {
  // Hash (master, label, index) down to one derived seed. The chain of
  // splitmix64 steps keeps distinct labels/indices decorrelated.
  std::uint64_t sm = master_seed;
  std::uint64_t h = splitmix64(sm);
  sm = h ^ (0x9E3779B97F4A7C15ULL * (label + 1));
  h = splitmix64(sm);
  sm = h ^ (0xD1B54A32D192ED03ULL * (index + 1));
  return Rng(splitmix64(sm));
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

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("Rng::below: bound must be > 0");
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t r = next_u64();
    if (r >= threshold) return r % bound;
  }
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal(double mean, double stddev) {
  // uniform() can return 0; flip to (0,1] for the log.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<double> Rng::normal_vec(double mean, double stddev,
                                    std::size_t n) {
  if (stddev < 0.0)
    throw std::invalid_argument("normal_vec: stddev must be >= 0");
  std::vector<double> out(n);
  for (auto& v : out) v = normal(mean, stddev);
  return out;
}

double Rng::gamma(double shape) {
  if (shape <= 0.0)
    throw std::invalid_argument("Rng::gamma: shape must be > 0");
  if (shape < 1.0) {
    const double u = 1.0 - uniform();  // (0,1]
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 &&
        std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
      return d * v;
  }
}

double Rng::beta_symmetric(double alpha) {
  if (alpha <= 0.0)
    throw std::invalid_argument("beta_symmetric: alpha must be > 0");
  for (;;) {
    const double g1 = gamma(alpha);
    const double g2 = gamma(alpha);
    const double sum = g1 + g2;
    if (sum > 0.0) return g1 / sum;
    // Both gammas underflowed to zero (tiny alpha); redraw.
  }
}

std::vector<int> Rng::permutation(int n) {
  if (n < 1) throw std::invalid_argument("permutation: n must be >= 1");
  std::vector<int> p(n);
  for (int i = 0; i < n; ++i) p[i] = i;
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(below(static_cast<std::uint64_t>(i) + 1));
    std::swap(p[i], p[j]);
  }
  return p;
}

}  // namespace mixcl
