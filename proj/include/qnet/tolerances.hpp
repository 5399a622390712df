#pragma once

#include <cstddef>

namespace qnet {

/// Process-wide numeric tolerances. Tests may tighten them through
/// ScopedTolerances; library code reads them through tolerances().
struct Tolerances {
  double algebraic = 1e-10;  // unitarity, Hermiticity, normalization
  double physical = 1e-8;    // POVM completeness, wavepacket norm
  double psd_clip = 1e-9;    // most negative eigenvalue accepted as zero
  double degenerate = 1e-15; // probabilities below this count as zero
  std::size_t dimension_cap = 4096;
};

const Tolerances& tolerances() noexcept;
void set_tolerances(const Tolerances& t) noexcept;

/// RAII override of the global tolerances.
class ScopedTolerances {
 public:
  explicit ScopedTolerances(const Tolerances& t) : saved_(tolerances()) {
    set_tolerances(t);
  }
  ~ScopedTolerances() { set_tolerances(saved_); }
  ScopedTolerances(const ScopedTolerances&) = delete;
  ScopedTolerances& operator=(const ScopedTolerances&) = delete;

 private:
  Tolerances saved_;
};

}  // namespace qnet
