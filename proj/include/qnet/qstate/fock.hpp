#pragma once

#include <vector>

#include "qnet/qstate/states.hpp"

namespace qnet::fock {

/// Truncated annihilation operator on levels {0, ..., dim-1}.
CMatrix annihilation(std::size_t dim);
CMatrix number(std::size_t dim);
/// diag(exp(i phi n)).
CMatrix phase_shift(std::size_t dim, double phi);

/// Kraus operators of bosonic loss with transmissivity eta:
/// A_k|n> = sqrt(C(n,k) eta^(n-k) (1-eta)^k) |n-k>.
std::vector<CMatrix> loss_kraus(std::size_t dim, double eta);

/// Coherent state truncated to `dim` levels and renormalized.
CVector coherent_amplitudes(std::size_t dim, cplx alpha);

}  // namespace qnet::fock
