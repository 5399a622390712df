#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qnet/channel/channel.hpp"
#include "qnet/qstate/operations.hpp"
#include "qnet/qstate/wavepacket.hpp"

namespace qnet::cavity {

// Physical constants, SI (CODATA 2018 exact or recommended values).
inline constexpr double kHbar = 1.054571817e-34;      // J s
inline constexpr double kEpsilon0 = 8.8541878128e-12; // F/m

/// Atom-cavity rates in rad/s. kappa is the field amplitude decay rate, so the
/// intracavity photon number decays as exp(-2 kappa t); gamma likewise is the
/// amplitude decay of |e> into non-cavity modes (population at 2 gamma).
struct CavityParams {
  double g = 0.0;
  double kappa = 0.0;
  double gamma = 0.0;
  double omega_c = 0.0;
  double omega_a = 0.0;
  double dipole_moment = 0.0;  // C m, 0 when g is given directly
  double mode_volume = 0.0;    // m^3, 0 when g is given directly
  std::size_t n_max = 2;       // cavity Fock truncation

  /// Build g from dipole moment, frequencies and mode volume.
  static CavityParams from_physical(double dipole_moment, double omega_c, double omega_a,
                                    double mode_volume, double polarization_overlap,
                                    double kappa, double gamma);
  void validate() const;
  double detuning() const { return omega_c - omega_a; }
  /// g > kappa and g > gamma.
  bool strong_coupling() const { return g > kappa && g > gamma; }
  /// The interface ordering chi ~ g > kappa > gamma.
  bool interface_hierarchy() const { return g > kappa && kappa > gamma; }
};

/// g = overlap * sqrt(mu^2 omega_c / (2 hbar eps0 V)).
double coupling_g(double dipole_moment, double omega_c, double mode_volume,
                  double polarization_overlap);

struct CriticalNumbers {
  double n0;  // gamma^2 / g^2
  double N0;  // kappa gamma / g^2
};
CriticalNumbers critical_numbers(const CavityParams& params);

struct Preset {
  std::string name;
  CavityParams params;
  CriticalNumbers target;  // published order-of-magnitude pair
  std::string note;
};
const std::vector<Preset>& presets();
/// Throws ArgumentError for an unknown name.
const Preset& preset(const std::string& name);
/// True when both critical numbers are within a factor `factor` of the target.
bool matches_order_of_magnitude(const CriticalNumbers& got, const CriticalNumbers& target,
                                double factor = 3.0);

/// (cos theta, sin theta) with tan theta = omega / g. The dark state is
/// cos theta |a,0> + sin theta |b,1>.
std::pair<double, double> dark_state_angle(double omega, double g);

/// Classical control field Omega(t) on a uniform grid, rad/s.
class ControlPulse {
 public:
  ControlPulse(double t0, double dt, std::vector<cplx> samples);

  /// sin^2 ramp from 0 to `peak` (Direction::On) or from `peak` to 0 (Off)
  /// over `duration`, held flat outside.
  enum class Shape { RampOn, RampOff };
  static ControlPulse ramp(Shape shape, double peak, double duration, std::size_t samples,
                           double t0 = 0.0);

  /// Rising pulse that makes the cavity emit a flat-top photon (sin^2 edges
  /// over `edge` of the window) leaving `residual` of the excitation behind,
  /// from the dark-state relation sin^2 theta = P_b1 / P_dark. Capped at
  /// `cap` (rad/s) once the formula leaves the dark-state range.
  static ControlPulse flat_top_emission(const CavityParams& params, double duration,
                                        std::size_t samples, double cap,
                                        double residual = 0.01, double edge = 0.5);

  double t0() const noexcept { return t0_; }
  double dt() const noexcept { return dt_; }
  double t_end() const noexcept { return t0_ + dt_ * static_cast<double>(samples_.size() - 1); }
  double duration() const noexcept { return t_end() - t0_; }
  const std::vector<cplx>& samples() const noexcept { return samples_; }
  double max_abs() const;
  /// Linear interpolation, clamped to the end values outside the grid.
  cplx at(double t) const;
  /// Omega'(t0 + k dt) = Omega(t0 + (N-1-k) dt).
  ControlPulse time_reversed() const;
  /// |Omega| non-decreasing (rising) or non-increasing, up to round-off.
  bool monotone(bool rising) const;

 private:
  double t0_;
  double dt_;
  std::vector<cplx> samples_;
};

// Atom levels and the layout of an atom-cavity state.
inline constexpr std::size_t kLevelA = 0, kLevelB = 1, kLevelE = 2;

/// Atom (3 levels) x cavity (n_max + 1), optionally x an emitted-field bin
/// that counts photons leaving through the cavity mirror.
HilbertSpace atom_cavity_space(const CavityParams& params, bool with_bin = false);

struct Trajectory {
  std::vector<double> times;
  std::vector<DensityMatrix> states;
};

/// Fixed-step RK4 integration of the master equation
///   d rho/dt = -i[H, rho] + D[sqrt(2 kappa) a] rho + D[sqrt(2 gamma) |b><e|] rho,
///   H = Delta a^dag a + g (|e><b| a + h.c.) - (Omega(t) |e><a| + h.c.),
/// in the frame rotating at omega_a. With a bin subsystem the cavity jump also
/// raises the bin. Records every `record_every` steps plus the final state.
/// Throws StabilityError if dt > 0.1 / max(g, kappa, gamma, |Delta|, max|Omega|).
Trajectory evolve_lindblad(const DensityMatrix& initial, const CavityParams& params,
                           const ControlPulse& pulse, std::pair<double, double> t_span,
                           double dt, std::size_t record_every = 1);

enum class Direction { Emit, Absorb };
enum class Mode { Ideal, Integrated };

struct MapOptions {
  Mode mode = Mode::Ideal;
  double dt = 0.0;  // integrated mode; 0 picks 0.05 / fastest rate
  /// Incoming field envelope for integrated absorption. When unset, the
  /// envelope this cavity would emit under the time-reversed pulse is used,
  /// mirrored in time.
  std::optional<Envelope> incoming;
};

struct MapResult {
  /// Emit: field qubit {|0>,|1>}; absorb: memory qubit {|b>,|a>}.
  /// Conditioned on no loss; see success_probability.
  DensityMatrix output;
  double success_probability;
  /// Single-excitation transfer efficiency (photon emitted or stored).
  double efficiency;
  double max_excited_population;
  double gamma_loss;  // probability of decay from |e> out of the cavity mode
  std::optional<Envelope> envelope;  // emitted field shape (emit, integrated)
};

/// Memory qubit convention: index 0 = |b>, index 1 = |a>; field qubit: Fock
/// |0>, |1>. Ideal emission maps c0|b> + c1|a> to c0|0> + c1|1> exactly,
/// ideal absorption is the inverse. Throws ArgumentError if the pulse is not
/// rising (emit) or falling (absorb).
MapResult adiabatic_map(Direction direction, const ControlPulse& pulse,
                        const CavityParams& params, const StateVector& input,
                        const MapOptions& options = {});
MapResult adiabatic_map(Direction direction, const ControlPulse& pulse,
                        const CavityParams& params, const DensityMatrix& input,
                        const MapOptions& options = {});

/// Envelope emitted from |a,0> under `pulse` (integrated dynamics), with its
/// efficiency integral.
std::pair<Envelope, double> emission_envelope(const ControlPulse& pulse,
                                              const CavityParams& params, double dt);

struct TransferResult {
  DensityMatrix memory_b;      // conditioned on no loss
  double fidelity;             // of memory_b to the input
  double unconditional_fidelity;
  double success_probability;
};

/// Emit at A, send through the link, absorb at B. In ideal mode the absorb
/// pulse must be the time reverse of the emit pulse on the same grid.
TransferResult transfer_node_to_node(const StateVector& memory_a,
                                     std::pair<ControlPulse, ControlPulse> pulses,
                                     const channel::OpticalLink& link, const CavityParams& params_a,
                                     const CavityParams& params_b, Mode mode, double dt = 0.0);

struct CoherentStorageResult {
  DensityMatrix input_field;      // truncated coherent state on {0, 1, 2}
  DensityMatrix retrieved_field;  // on {0, 1, 2}
  double overlap;                 // fidelity between the two
  double storage_efficiency;
};

/// Store a coherent pulse of mean photon number nbar and retrieve it again
/// (integrated dynamics for both steps).
CoherentStorageResult coherent_storage_roundtrip(double nbar, const ControlPulse& store,
                                                 const ControlPulse& retrieve,
                                                 const CavityParams& params, double dt = 0.0);

struct PolarizationResult {
  /// atom {a, b+, b-} x photon 1 x photon 2, photons {vac, sigma+, sigma-}.
  DensityMatrix state;
  double coincidence_probability;  // both photons present
  /// Photon pair (or atom-photon pair when the second pulse is omitted),
  /// restricted to the polarization qubits and conditioned on presence.
  DensityMatrix conditional_pair;
};

/// Two-pulse polarization entanglement sequence in the ideal adiabatic limit.
/// Omega_1 maps |a> to (|b+,sigma+> + |b-,sigma->)/sqrt2; Omega_2 maps
/// |b+-> to |a> emitting sigma-+. Each photon then passes a channel of
/// transmissivity `transmissivity`.
PolarizationResult polarization_pair_sequence(bool second_pulse = true,
                                              double transmissivity = 1.0);

/// Loss on a polarization photon {vac, sigma+, sigma-}.
std::vector<CMatrix> polarization_loss_kraus(double transmissivity);

}  // namespace qnet::cavity
