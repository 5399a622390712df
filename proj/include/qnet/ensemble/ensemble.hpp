#pragma once

#include <limits>
#include <string>

#include "qnet/qstate/operations.hpp"
#include "qnet/qstate/wavepacket.hpp"

namespace qnet::ensemble {

/// Largest excitation probability accepted for a write pulse. The
/// lowest-order treatment assumes p << 1.
inline constexpr double kMaxExcitationProbability = 0.2;

/// Memory decoherence of the collective mode: bosonic amplitude damping with
/// lifetime `amplitude_time` followed by number dephasing with lifetime
/// `dephasing_time` (coherences rho_mn decay as exp(-(m-n)^2 t / T)).
/// Either time may be infinite to switch that part off.
struct MemoryDecoherence {
  double amplitude_time = std::numeric_limits<double>::infinity();
  double dephasing_time = std::numeric_limits<double>::infinity();
};

struct EnsembleParams {
  std::size_t n_atoms = 100000;
  double p_excite = 0.01;
  double write_phase = 0.0;            // beta, radians
  double memory_lifetime = 1e-3;       // amplitude damping time, seconds
  double dephasing_lifetime = 1e-3;    // may differ from memory_lifetime
  double readout_efficiency = 1.0;
  std::size_t n_max = 2;               // Fock truncation of the collective mode

  /// Throws ArgumentError if a field is out of range.
  void validate() const;
  MemoryDecoherence decoherence() const { return {memory_lifetime, dephasing_lifetime}; }
};

/// One DLCZ memory. Mutable, owned by one protocol engine at a time.
class EnsembleNode {
 public:
  explicit EnsembleNode(EnsembleParams params, std::string id = {});

  const std::string& id() const noexcept { return id_; }
  const EnsembleParams& params() const noexcept { return params_; }
  const DensityMatrix& spin_state() const noexcept { return spin_; }
  double last_touched() const noexcept { return last_touched_; }

  /// True when the collective mode is in |0_a> to algebraic tolerance.
  bool idle() const;

  /// Return to |0_a>. Required after every failed heralding trial.
  void reset(double now);
  void set_spin_state(DensityMatrix spin, double now);
  /// Advance the clock. Throws ArgumentError if `now` is in the past.
  void touch(double now);

 private:
  EnsembleParams params_;
  std::string id_;
  DensityMatrix spin_;
  double last_touched_ = 0.0;
};

/// Space of the collective mode followed by field 1.
HilbertSpace write_space(const EnsembleParams& params);

/// Joint (collective mode x field 1) state after a write pulse:
/// sum_n (e^{i beta} sqrt(p))^n |n_a n_1>, n = 0..n_max, normalized.
StateVector write_state(const EnsembleParams& params);

/// Write pulse on an idle node. The node keeps the reduced spin state, so it
/// is no longer idle afterwards. Throws ProtocolStateError if not idle.
StateVector write_pulse(EnsembleNode& node);

/// Read pulse: maps the collective excitation into field 2 through a
/// beamsplitter of transmissivity readout_efficiency (the rest is lost) and
/// leaves the node in |0_a>.
Wavepacket read_pulse(EnsembleNode& node, const Envelope& shape);
Wavepacket read_pulse(EnsembleNode& node);

/// Default field-2 shape used by read_pulse(node): a 100 ns square pulse.
Envelope default_read_envelope();

/// Read pulse on subsystem `index` of a joint state. The subsystem is
/// replaced by its field-2 mode (same dimension, relabeled Field).
DensityMatrix read_out(const DensityMatrix& joint, std::size_t index, double efficiency);

/// Decoherence channel for a storage time dt on subsystem `index`.
DensityMatrix apply_memory_decoherence(const DensityMatrix& rho, std::size_t index,
                                       double dt, const MemoryDecoherence& rates);

/// Decohere a node's spin for dt seconds and advance its clock by dt.
/// Throws ArgumentError for negative dt.
void decohere_memory(EnsembleNode& node, double dt);

/// Symmetric Dicke state of n two-level atoms (|g> = 0, |s> = 1) with k
/// atoms in |s>. Throws CapacityError when 2^n exceeds the dimension cap.
StateVector dicke_state(std::size_t n_atoms, std::size_t k_excitations);

/// Apply the collective creation operator S^dagger = N^{-1/2} sum_i sigma_i^+
/// to a state of N two-level atoms.
StateVector raise_collective(const StateVector& atoms);

/// |<D_k| (S^dagger)^k / sqrt(k!) |0_a>|^2: how well the bosonic ladder used
/// for the collective mode matches the exact symmetric state.
double dicke_boson_overlap(std::size_t n_atoms, std::size_t k_excitations);

}  // namespace qnet::ensemble
