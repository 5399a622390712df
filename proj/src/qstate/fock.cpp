#include "qnet/qstate/fock.hpp"

#include <cmath>

#include "qnet/errors.hpp"

namespace qnet::fock {

CMatrix annihilation(std::size_t dim) {
  const auto d = static_cast<Eigen::Index>(dim);
  CMatrix a = CMatrix::Zero(d, d);
  for (Eigen::Index n = 1; n < d; ++n) a(n - 1, n) = std::sqrt(static_cast<double>(n));
  return a;
}

CMatrix number(std::size_t dim) {
  const auto d = static_cast<Eigen::Index>(dim);
  CMatrix n = CMatrix::Zero(d, d);
  for (Eigen::Index k = 0; k < d; ++k) n(k, k) = static_cast<double>(k);
  return n;
}

CMatrix phase_shift(std::size_t dim, double phi) {
  const auto d = static_cast<Eigen::Index>(dim);
  CMatrix u = CMatrix::Zero(d, d);
  for (Eigen::Index k = 0; k < d; ++k) u(k, k) = std::polar(1.0, phi * static_cast<double>(k));
  return u;
}

std::vector<CMatrix> loss_kraus(std::size_t dim, double eta) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw ArgumentError("loss_kraus: eta outside [0,1]");
  const auto d = static_cast<Eigen::Index>(dim);
  std::vector<CMatrix> kraus;
  for (Eigen::Index k = 0; k < d; ++k) {
    CMatrix a = CMatrix::Zero(d, d);
    for (Eigen::Index n = k; n < d; ++n) {
      const double binom = std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) -
                                    std::lgamma(n - k + 1.0));
      const double w = binom * std::pow(eta, static_cast<double>(n - k)) *
                       std::pow(1.0 - eta, static_cast<double>(k));
      a(n - k, n) = std::sqrt(w);
    }
    kraus.push_back(std::move(a));
  }
  return kraus;
}

CVector coherent_amplitudes(std::size_t dim, cplx alpha) {
  const auto d = static_cast<Eigen::Index>(dim);
  CVector v(d);
  cplx term = 1.0;
  for (Eigen::Index n = 0; n < d; ++n) {
    if (n > 0) term *= alpha / std::sqrt(static_cast<double>(n));
    v(n) = term;
  }
  return v / v.norm();
}

}  // namespace qnet::fock
