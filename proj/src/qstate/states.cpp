#include "qnet/qstate/states.hpp"

#include <vector>

#include "qnet/errors.hpp"
#include "qnet/tolerances.hpp"

namespace qnet {

StateVector::StateVector(HilbertSpace space, CVector amplitudes)
    : space_(std::move(space)), amps_(std::move(amplitudes)) {
  if (static_cast<std::size_t>(amps_.size()) != space_.total_dimension()) {
    throw ArgumentError("StateVector: " + std::to_string(amps_.size()) +
                        " amplitudes for a space of dimension " +
                        std::to_string(space_.total_dimension()));
  }
}

StateVector StateVector::basis(const HilbertSpace& space,
                               std::initializer_list<std::size_t> digits) {
  return basis(space, std::span<const std::size_t>(digits.begin(), digits.size()));
}

StateVector StateVector::basis(const HilbertSpace& space,
                               std::span<const std::size_t> digits) {
  CVector v = CVector::Zero(static_cast<Eigen::Index>(space.total_dimension()));
  v(static_cast<Eigen::Index>(space.index_of(digits))) = 1.0;
  return StateVector(space, std::move(v));
}

StateVector StateVector::normalized() const {
  const double n = norm();
  if (n < tolerances().degenerate) {
    throw DegenerateMeasurementError("StateVector: cannot normalize a null vector");
  }
  return StateVector(space_, amps_ / n);
}

cplx StateVector::inner(const StateVector& other) const {
  if (!(space_ == other.space_)) throw ArgumentError("inner: space mismatch");
  return amps_.dot(other.amps_);
}

DensityMatrix::DensityMatrix(HilbertSpace space, CMatrix matrix)
    : space_(std::move(space)), m_(std::move(matrix)) {
  const auto n = static_cast<Eigen::Index>(space_.total_dimension());
  if (m_.rows() != n || m_.cols() != n) {
    throw ArgumentError("DensityMatrix: matrix is " + std::to_string(m_.rows()) +
                        "x" + std::to_string(m_.cols()) +
                        " for a space of dimension " + std::to_string(n));
  }
}

DensityMatrix::DensityMatrix(const StateVector& pure)
    : DensityMatrix(pure.space(), pure.amplitudes() * pure.amplitudes().adjoint()) {}

DensityMatrix DensityMatrix::maximally_mixed(const HilbertSpace& space) {
  const auto n = static_cast<Eigen::Index>(space.total_dimension());
  return DensityMatrix(space, CMatrix::Identity(n, n) / static_cast<double>(n));
}

double DensityMatrix::purity() const { return (m_ * m_).trace().real(); }

double DensityMatrix::hermiticity_error() const {
  return (m_ - m_.adjoint()).cwiseAbs().maxCoeff();
}

double DensityMatrix::min_eigenvalue() const {
  const CMatrix h = 0.5 * (m_ + m_.adjoint());
  Eigen::SelfAdjointEigenSolver<CMatrix> es(h, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

void DensityMatrix::validate() const {
  const auto& tol = tolerances();
  if (hermiticity_error() > tol.algebraic) {
    throw StateValidityError("DensityMatrix: not Hermitian");
  }
  if (std::abs(trace() - 1.0) > tol.algebraic) {
    throw StateValidityError("DensityMatrix: trace is not 1");
  }
  if (min_eigenvalue() < -tol.psd_clip) {
    throw StateValidityError("DensityMatrix: negative eigenvalue beyond tolerance");
  }
}

DensityMatrix DensityMatrix::normalized() const {
  const double tr = trace().real();
  if (tr < tolerances().degenerate) {
    throw DegenerateMeasurementError("DensityMatrix: cannot normalize zero trace");
  }
  return DensityMatrix(space_, m_ / tr);
}

DensityMatrix::PsdRepair DensityMatrix::enforce_psd() const {
  const CMatrix h = 0.5 * (m_ + m_.adjoint());
  Eigen::SelfAdjointEigenSolver<CMatrix> es(h);
  Eigen::VectorXd lambda = es.eigenvalues();
  const double min_ev = lambda.minCoeff();
  double clipped = 0.0;
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) < 0.0) {
      clipped += -lambda(i);
      lambda(i) = 0.0;
    }
  }
  const double total = lambda.sum();
  if (total < tolerances().degenerate) {
    throw StateValidityError("DensityMatrix: no positive spectrum left after clipping");
  }
  CMatrix repaired = es.eigenvectors() * (lambda / total).asDiagonal() *
                     es.eigenvectors().adjoint();
  return {DensityMatrix(space_, std::move(repaired)), clipped, min_ev};
}

}  // namespace qnet
