#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace dsgd {

/// Purpose tags keep streams derived from one master seed disjoint.
enum class StreamTag : std::uint64_t {
  Gradient = 0x67726164,
  Mixing = 0x6d697869,
  ControlMixing = 0x63746c6d,
  Init = 0x696e6974,
  Data = 0x64617461,
  Probe = 0x70726f62,
  Estimate = 0x65737469,
};

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Hashes a master seed and a key path into a stream seed. The result only
/// depends on the values, so evaluation order never changes a stream.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> keys) noexcept;

class Rng {
 public:
  using result_type = std::mt19937_64::result_type;

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Stream for (master, tag, keys...).
  static Rng stream(std::uint64_t master, StreamTag tag, std::uint64_t a = 0,
                    std::uint64_t b = 0, std::uint64_t c = 0);

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return engine_(); }

  double normal() { return normal_(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace dsgd
