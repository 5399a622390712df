#pragma once

#include <complex>
#include <initializer_list>
#include <span>

#include <Eigen/Dense>

#include "qnet/qstate/hilbert_space.hpp"

namespace qnet {

using cplx = std::complex<double>;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;

/// Pure state over a HilbertSpace.
class StateVector {
 public:
  StateVector(HilbertSpace space, CVector amplitudes);

  /// Basis state |digits>.
  static StateVector basis(const HilbertSpace& space,
                           std::initializer_list<std::size_t> digits);
  static StateVector basis(const HilbertSpace& space,
                           std::span<const std::size_t> digits);

  const HilbertSpace& space() const noexcept { return space_; }
  const CVector& amplitudes() const noexcept { return amps_; }
  cplx operator[](std::size_t i) const { return amps_(static_cast<Eigen::Index>(i)); }
  std::size_t dimension() const noexcept { return space_.total_dimension(); }

  double norm() const { return amps_.norm(); }
  /// Copy scaled to unit norm. Throws DegenerateMeasurementError on a null vector.
  StateVector normalized() const;
  cplx inner(const StateVector& other) const;

 private:
  HilbertSpace space_;
  CVector amps_;
};

/// Mixed state over a HilbertSpace.
///
/// Construction only checks the shape; physical validity (Hermitian, unit
/// trace, PSD) is checked by validate() or repaired by enforce_psd() when a
/// caller asks for it.
class DensityMatrix {
 public:
  DensityMatrix(HilbertSpace space, CMatrix matrix);
  explicit DensityMatrix(const StateVector& pure);

  static DensityMatrix maximally_mixed(const HilbertSpace& space);

  const HilbertSpace& space() const noexcept { return space_; }
  const CMatrix& matrix() const noexcept { return m_; }
  cplx operator()(std::size_t i, std::size_t j) const {
    return m_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  std::size_t dimension() const noexcept { return space_.total_dimension(); }

  cplx trace() const { return m_.trace(); }
  double purity() const;
  double hermiticity_error() const;
  double min_eigenvalue() const;

  /// Throws StateValidityError unless Hermitian, unit trace (algebraic
  /// tolerance) and PSD down to -psd_clip.
  void validate() const;

  /// Copy scaled to unit trace. Throws DegenerateMeasurementError on zero trace.
  DensityMatrix normalized() const;

  struct PsdRepair;
  /// Clip negative eigenvalues to zero and renormalize. Only applied on
  /// request; nothing in the library calls this silently.
  PsdRepair enforce_psd() const;

 private:
  HilbertSpace space_;
  CMatrix m_;
};

struct DensityMatrix::PsdRepair {
  DensityMatrix state;
  double clipped_mass;      // sum of |negative eigenvalues| removed
  double min_eigenvalue;    // before clipping
};

}  // namespace qnet
