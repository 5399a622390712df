#pragma once

#include <array>
#include <optional>
#include <utility>
#include <vector>

#include "qnet/ensemble/ensemble.hpp"
#include "qnet/qstate/operations.hpp"
#include "qnet/rng.hpp"

namespace qnet::channel {

inline constexpr double kSpeedOfLight = 299792458.0;  // m/s

struct OpticalLink {
  double length = 0.0;            // meters
  double attenuation = 0.0;       // dB/km
  double extra_phase = 0.0;       // radians, fixed path phase
  double phase_jitter_std = 0.0;  // radians, redrawn every trial

  void validate() const;
  /// 10^(-attenuation * length_km / 10).
  double transmissivity() const;
  /// One-way time of flight, length / c.
  double delay() const { return length / kSpeedOfLight; }
};

struct Detector {
  double efficiency = 1.0;
  double dark_count_prob = 0.0;  // per gate

  void validate() const;
};

/// Two-mode rotation on modes of `dim` levels each, acting on the joint
/// index m * dim + n:
///   a^dag -> cos(theta) a^dag + sin(theta) e^{i phi} b^dag
///   b^dag -> -sin(theta) e^{-i phi} a^dag + cos(theta) b^dag
/// Output components with a mode above dim - 1 are dropped, so the matrix is
/// unitary only on the sectors with total photon number < dim.
CMatrix beamsplitter_matrix(std::size_t dim, double theta, double phi);

/// Kraus operators of a beamsplitter with transmissivity T coupling the mode
/// to a vacuum environment, environment traced out: K_k = <k_env|U|0_env>.
std::vector<CMatrix> dilated_loss_kraus(std::size_t dim, double transmissivity);

/// Loss of transmissivity T followed by the phase e^{i phase n}.
DensityMatrix attenuate(const DensityMatrix& rho, std::size_t mode, double transmissivity,
                        double phase);

/// Send field mode `mode` through `link`. The stream is drawn from only when
/// the link has phase jitter.
DensityMatrix propagate_loss(const DensityMatrix& rho, std::size_t mode,
                             const OpticalLink& link, RngStream& rng);

struct BeamsplitterResult {
  DensityMatrix state;  // not renormalized when amplitude leaked
  double leaked_norm;   // probability pushed above the truncation
};

/// Beamsplitter on field modes i and j, which must have equal truncation.
BeamsplitterResult beamsplitter(const DensityMatrix& rho, std::pair<std::size_t, std::size_t> modes,
                                double theta, double phi);

/// {no click, click} effects of a threshold detector on `dim` levels:
/// P(no click | n) = (1 - dark) (1 - efficiency)^n.
std::array<CMatrix, 2> threshold_effects(std::size_t dim, const Detector& detector);

struct Detection {
  bool click;
  DensityMatrix posterior;  // detected mode traced out
  double click_probability;
};

Detection detect_threshold(const DensityMatrix& rho, std::size_t mode, const Detector& detector,
                           RngStream& rng);

enum class Click { None, D1, D2, Both };
const char* to_string(Click c);

struct HeraldOutcome {
  Click which_detector = Click::None;
  std::optional<DensityMatrix> conditional_state;  // memories (L, R), set for D1 and D2
  double herald_probability = 0.0;                 // exact P(D1) + P(D2)
  double eta1 = 0.0;                               // phase in the heralded state
  std::array<double, 4> probabilities{};           // none, D1, D2, both
};

/// Exact heralding statistics for one phase configuration.
struct HeraldDistribution {
  std::array<double, 4> probabilities{};
  std::array<std::optional<DensityMatrix>, 2> conditional;  // after D1, after D2
  double eta1 = 0.0;
};

/// Middle station of a heralded link: the two fields are sent through their
/// links, combined on a 50/50 beamsplitter and detected by D1 and D2.
///
/// The source state has subsystems (memory L, field L, memory R, field R).
/// A D1 click alone projects the memories onto
/// (|0_L 1_R> + e^{i eta1}|1_L 0_R>)/sqrt2, D2 onto the minus sign, with
/// eta1 = source_phase + beta_L - beta_R (beta: link phase plus jitter).
/// Distributions are exact; only the outcome is sampled.
class HeraldStation {
 public:
  HeraldStation(DensityMatrix source, std::pair<OpticalLink, OpticalLink> links,
                std::pair<Detector, Detector> detectors, double source_phase = 0.0);

  const HeraldDistribution& nominal() const noexcept { return nominal_; }
  /// Statistics with additional per-trial phases on the two links.
  HeraldDistribution distribution(double jitter_l, double jitter_r) const;
  /// One trial: draws link jitter (if configured) and then the outcome.
  HeraldOutcome sample(RngStream& rng) const;

  const std::pair<OpticalLink, OpticalLink>& links() const noexcept { return links_; }

 private:
  DensityMatrix source_;
  std::pair<OpticalLink, OpticalLink> links_;
  std::pair<Detector, Detector> detectors_;
  double source_phase_;
  HeraldDistribution nominal_;
};

/// Source state for two DLCZ nodes written simultaneously.
DensityMatrix dlcz_source(const ensemble::EnsembleParams& left,
                          const ensemble::EnsembleParams& right);

HeraldStation dlcz_station(const ensemble::EnsembleParams& left,
                           const ensemble::EnsembleParams& right,
                           std::pair<OpticalLink, OpticalLink> links,
                           std::pair<Detector, Detector> detectors);

/// Write pulse on both nodes, heralding, and bookkeeping: on a single click
/// each node keeps its reduced conditional state; on none or both the nodes
/// are left written and must be reset before the next attempt.
/// Throws ProtocolStateError if either node is not idle.
HeraldOutcome herald_entangle(ensemble::EnsembleNode& left, ensemble::EnsembleNode& right,
                              std::pair<OpticalLink, OpticalLink> links,
                              std::pair<Detector, Detector> detectors, RngStream& rng);

/// Same with a prebuilt station (must match the nodes' parameters).
HeraldOutcome herald_entangle(ensemble::EnsembleNode& left, ensemble::EnsembleNode& right,
                              const HeraldStation& station, RngStream& rng);

}  // namespace qnet::channel
