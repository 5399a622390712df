#include "qnet/qstate/wavepacket.hpp"

#include <cmath>

#include "qnet/errors.hpp"
#include "qnet/tolerances.hpp"

namespace qnet {

namespace {
double sum_sq(const std::vector<cplx>& s, double dt) {
  double acc = 0.0;
  for (const cplx& v : s) acc += std::norm(v);
  return acc * dt;
}
}  // namespace

Envelope::Envelope(double t0, double dt, std::vector<cplx> samples)
    : t0_(t0), dt_(dt), samples_(std::move(samples)) {
  if (!(dt_ > 0.0)) throw ArgumentError("Envelope: grid spacing must be positive");
  if (samples_.empty()) throw ArgumentError("Envelope: no samples");
  if (std::abs(norm_squared() - 1.0) > tolerances().physical) {
    throw ArgumentError("Envelope: integral of |E|^2 is not 1");
  }
}

Envelope Envelope::normalized(double t0, double dt, std::vector<cplx> samples) {
  if (!(dt > 0.0)) throw ArgumentError("Envelope: grid spacing must be positive");
  const double n = sum_sq(samples, dt);
  if (!(n > 0.0)) throw ArgumentError("Envelope: all samples are zero");
  const double scale = 1.0 / std::sqrt(n);
  for (cplx& v : samples) v *= scale;
  return Envelope(t0, dt, std::move(samples));
}

double Envelope::norm_squared() const { return sum_sq(samples_, dt_); }

cplx Envelope::at(double t) const {
  const double x = (t - t0_) / dt_;
  if (x < 0.0 || x > static_cast<double>(samples_.size() - 1)) return 0.0;
  const auto k = static_cast<std::size_t>(std::floor(x));
  if (k + 1 >= samples_.size()) return samples_.back();
  const double f = x - static_cast<double>(k);
  return (1.0 - f) * samples_[k] + f * samples_[k + 1];
}

Envelope Envelope::time_reversed() const {
  return Envelope(t0_, dt_, std::vector<cplx>(samples_.rbegin(), samples_.rend()));
}

}  // namespace qnet
