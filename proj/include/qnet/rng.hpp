#pragma once

#include <cstdint>
#include <limits>

namespace qnet {

/// Counter-based random stream.
///
/// Each draw is a pure function of (key, counter): the key is derived from a
/// seed and a path of stream ids through split(), and the counter advances by
/// one per draw. Two streams with equal keys produce equal sequences no matter
/// which thread runs them or in which order they are created, which is what
/// makes simulation output independent of worker scheduling.
///
/// The mixing function is the SplitMix64 finalizer applied to
/// key + counter * golden-gamma, i.e. SplitMix64 addressed by position.
class RngStream {
 public:
  using result_type = std::uint64_t;

  explicit RngStream(std::uint64_t seed) : key_(mix(seed ^ kSeedSalt)) {}

  /// Child stream keyed by (this key, id). Does not advance this stream.
  RngStream split(std::uint64_t id) const {
    return RngStream(Key{mix(key_ ^ mix(id + kGamma))});
  }

  /// Draw at an absolute position, leaving the counter untouched.
  std::uint64_t at(std::uint64_t position) const {
    return mix(key_ + (position + 1) * kGamma);
  }

  std::uint64_t operator()() { return at(counter_++); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Standard normal deviate (Box-Muller, one value per two uniforms).
  double normal();

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  struct Key {
    std::uint64_t value;
  };
  explicit RngStream(Key k) : key_(k.value) {}

  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;
  static constexpr std::uint64_t kSeedSalt = 0x6a09e667f3bcc909ULL;

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace qnet
