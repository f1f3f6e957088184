#ifndef DMMIA_RNG_HPP
#define DMMIA_RNG_HPP

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

namespace dmmia {

// Deterministic 64-bit generator (splitmix64): a Weyl counter advanced by a
// fixed odd constant, followed by two xor-shift-multiply mixing rounds.
// Integer output is identical on every platform; floating-point helpers use
// only IEEE-754 double arithmetic plus libm log/sqrt/cos/sin.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  // Next raw 64-bit word.
  std::uint64_t next_u64();

  // Uniform double in [0, 1), 53-bit resolution.
  double uniform();

  // Uniform integer in [0, bound) by rejection sampling; bound >= 1.
  std::uint64_t uniform_below(std::uint64_t bound);

  // Standard normal via Box-Muller on (0,1] x [0,1) uniforms.
  // Generates pairs; the second value is cached for the next call.
  double normal();

  // mean + stddev * normal()
  double normal(double mean, double stddev);

  // In-place Fisher-Yates shuffle of an index vector.
  template <typename T>
  void shuffle(std::vector<T>& idx) {
    for (std::size_t i = idx.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_below(i));
      std::swap(idx[i - 1], idx[j]);
    }
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Derives an independent stream seed from (seed, salt). Used to give every
// pipeline stage and every attack run its own stream.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace dmmia

#endif
