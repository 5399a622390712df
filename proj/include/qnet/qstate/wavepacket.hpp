#pragma once

#include <vector>

#include "qnet/qstate/states.hpp"

namespace qnet {

/// Temporal envelope E(t) sampled on a uniform grid t0 + k*dt, in units of
/// amplitude per sqrt(time), normalized so that sum |E_k|^2 dt = 1.
class Envelope {
 public:
  Envelope(double t0, double dt, std::vector<cplx> samples);

  /// Rescale arbitrary samples to unit norm.
  static Envelope normalized(double t0, double dt, std::vector<cplx> samples);

  double t0() const noexcept { return t0_; }
  double dt() const noexcept { return dt_; }
  double duration() const noexcept { return dt_ * static_cast<double>(samples_.size()); }
  const std::vector<cplx>& samples() const noexcept { return samples_; }
  double norm_squared() const;

  /// Linear interpolation; zero outside the grid.
  cplx at(double t) const;
  /// Mirror image in time, E'(t0 + k dt) = E(t0 + (N-1-k) dt).
  Envelope time_reversed() const;

 private:
  double t0_;
  double dt_;
  std::vector<cplx> samples_;
};

/// A propagating mode: its envelope and the photon-number state it carries.
/// photon_content may be mixed, e.g. after lossy retrieval.
struct Wavepacket {
  Envelope envelope;
  DensityMatrix photon_content;
};

}  // namespace qnet
