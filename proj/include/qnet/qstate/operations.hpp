#pragma once

#include <optional>
#include <span>
#include <vector>

#include "qnet/qstate/states.hpp"

namespace qnet {

class RngStream;

using Targets = std::span<const std::size_t>;

// Kronecker products. The result space is a.space() followed by b.space().
StateVector tensor_product(const StateVector& a, const StateVector& b);
DensityMatrix tensor_product(const DensityMatrix& a, const DensityMatrix& b);

/// Reduced state on `keep` (kept subsystems stay in their original order).
DensityMatrix partial_trace(const DensityMatrix& rho, Targets keep);
DensityMatrix partial_trace(const StateVector& psi, Targets keep);

/// Reorder subsystems: result subsystem i is input subsystem order[i].
DensityMatrix permute(const DensityMatrix& rho, Targets order);
StateVector permute(const StateVector& psi, Targets order);

/// Zero-pad (or truncate) subsystem `i` to `new_dim` levels. Truncation
/// drops amplitude above the new top level without renormalizing.
DensityMatrix resize_subsystem(const DensityMatrix& rho, std::size_t i,
                               std::size_t new_dim);
StateVector resize_subsystem(const StateVector& psi, std::size_t i,
                             std::size_t new_dim);

/// U embedded on `targets` (U's row index runs over the targets in the order
/// given). Throws ArgumentError if U is not unitary to algebraic tolerance or
/// its size does not match.
StateVector apply_unitary(const StateVector& psi, const CMatrix& u, Targets targets);
DensityMatrix apply_unitary(const DensityMatrix& rho, const CMatrix& u,
                            Targets targets);

/// Arbitrary local operator, no unitarity check and no renormalization:
/// psi -> K psi, rho -> K rho K^dagger.
StateVector apply_operator(const StateVector& psi, const CMatrix& k, Targets targets);
DensityMatrix apply_operator(const DensityMatrix& rho, const CMatrix& k,
                             Targets targets);

/// sum_k K_k rho K_k^dagger on `targets`.
DensityMatrix apply_channel(const DensityMatrix& rho, std::span<const CMatrix> kraus,
                            Targets targets);

/// Tr[(op on targets) rho].
cplx expectation(const DensityMatrix& rho, const CMatrix& op, Targets targets);

struct PovmResult {
  std::size_t outcome;
  DensityMatrix posterior;           // normalized sqrt(E) rho sqrt(E)
  double probability;                // exact Born probability of `outcome`
  std::vector<double> probabilities; // exact Born probability of every outcome
};

/// Born probabilities of a POVM acting on `targets` (all subsystems when
/// empty). Validates completeness and positivity of the effects.
std::vector<double> povm_probabilities(const DensityMatrix& rho,
                                       std::span<const CMatrix> effects,
                                       Targets targets = {});

/// Sample one POVM outcome. The returned probabilities are exact, only the
/// outcome index is random.
PovmResult measure_povm(const DensityMatrix& rho, std::span<const CMatrix> effects,
                        RngStream& rng, Targets targets = {});

/// Posterior for a chosen outcome without sampling.
DensityMatrix povm_posterior(const DensityMatrix& rho, const CMatrix& effect,
                             Targets targets = {});

/// Uhlmann fidelity in the squared convention, F = (Tr sqrt(sqrt(rho) sigma
/// sqrt(rho)))^2, so that F(rho, |psi><psi|) = <psi|rho|psi>.
double fidelity(const DensityMatrix& rho, const DensityMatrix& sigma);
double fidelity(const DensityMatrix& rho, const StateVector& psi);

/// Principal square root of a Hermitian PSD matrix (negative eigenvalues are
/// clipped to zero).
CMatrix psd_sqrt(const CMatrix& m);

bool is_unitary(const CMatrix& u, double tol);

}  // namespace qnet
