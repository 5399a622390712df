#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "qnet/ensemble/ensemble.hpp"
#include "qnet/qstate/operations.hpp"
#include "qnet/rng.hpp"

namespace qnet::verify {

/// Dichotomic analyzer cos(2 theta) Z + sin(2 theta)(cos(phi) X + sin(phi) Y).
/// theta is the polarizer-style angle, so theta = 0 measures Z and
/// theta = 45 deg measures X (phi = 0) or Y (phi = 90 deg).
struct Analyzer {
  double theta = 0.0;
  double phi = 0.0;

  CMatrix observable() const;
  /// Projector onto the +1 (outcome 0) or -1 (outcome 1) eigenspace.
  CMatrix projector(int outcome) const;
};

struct MeasurementSetting {
  Analyzer a;
  Analyzer b;
};

/// Settings (a,b), (a,b'), (a',b), (a',b') for chsh_value.
std::array<MeasurementSetting, 4> chsh_settings(double a, double a2, double b, double b2);

/// Outcome counts per setting; outcomes ordered ++, +-, -+, --.
struct CountsTable {
  std::vector<MeasurementSetting> settings;
  std::vector<std::array<std::uint64_t, 4>> counts;
  std::uint64_t shots = 0;
};

/// Throws ArgumentError unless rho is a 2 x 2 two-subsystem state.
void require_two_qubit(const DensityMatrix& rho);

/// Restrict every subsystem of a two-mode state to its {0, 1} levels and
/// renormalize. `discarded` receives the weight outside that block.
DensityMatrix qubit_block(const DensityMatrix& rho, double* discarded = nullptr);

/// Wootters concurrence. Small negative eigenvalues (within the PSD clipping
/// tolerance) are clipped first; larger ones throw StateValidityError.
double concurrence(const DensityMatrix& rho);

/// E = <A (x) B>.
double correlator(const DensityMatrix& rho, const MeasurementSetting& s);

/// S = |E(a,b) - E(a,b') + E(a',b) + E(a',b')|.
double chsh_value(const DensityMatrix& rho, const std::array<MeasurementSetting, 4>& settings);

/// Largest S over all settings, 2 sqrt(m1 + m2) from the two largest
/// eigenvalues of T^T T, T_ij = <sigma_i (x) sigma_j>.
double max_chsh_value(const DensityMatrix& rho);

/// Born probabilities of the four outcomes of a setting.
std::array<double, 4> outcome_probabilities(const DensityMatrix& rho, const MeasurementSetting& s);

CountsTable simulate_counts(const DensityMatrix& rho, const std::vector<MeasurementSetting>& settings,
                            std::uint64_t shots, RngStream& rng);

/// The nine local Pauli-basis settings {Z, X, Y} x {Z, X, Y}.
std::vector<MeasurementSetting> pauli_settings();

struct TomographyResult {
  DensityMatrix estimate;        // PSD, unit trace
  DensityMatrix linear;          // Hermitian unit-trace inversion before projection
  double min_eigenvalue;         // of `linear`; negative values mean clipping happened
  double clipped_mass;
};

/// Least-squares linear inversion from outcome frequencies, one row of four
/// per setting, followed by PSD projection. Throws ArgumentError when the
/// settings are not informationally complete.
TomographyResult tomography_reconstruct(const std::vector<MeasurementSetting>& settings,
                                        const std::vector<std::array<double, 4>>& frequencies);
TomographyResult tomography_reconstruct(const CountsTable& counts);

struct DecayPoint {
  double t;
  double concurrence;
  double coherence_a;      // |<0|rho_A|1>|
  double coherence_b;      // |<0|rho_B|1>|
  double joint_coherence;  // |<01|rho|10>|
};

/// Memory decoherence applied to both qubits at each time of an increasing grid.
std::vector<DecayPoint> concurrence_decay_curve(const DensityMatrix& initial,
                                                const ensemble::MemoryDecoherence& rates,
                                                const std::vector<double>& times);

}  // namespace qnet::verify
