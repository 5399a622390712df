#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "qnet/cavity/cavity.hpp"
#include "qnet/channel/channel.hpp"
#include "qnet/ensemble/ensemble.hpp"
#include "qnet/repeater/events.hpp"
#include "qnet/rng.hpp"

namespace qnet::repeater {

struct ProtocolConfig {
  double attempt_period = 1e-6;  // seconds per write trial
  std::uint64_t max_trials = 1000000;
  double memory_budget = std::numeric_limits<double>::infinity();  // seconds
  std::uint64_t max_restarts = 1000;  // expiries tolerated per preparation
  std::uint64_t rng_seed = 0;
  /// Undo the known part of the herald phase (detector sign and nominal
  /// eta1) with a phase shift on the right memory.
  bool feed_forward = true;

  void validate() const;
};

/// One heralding attempt stream. Only clicks are recorded; the trials in
/// between had no click.
struct TrialRecord {
  double time = 0.0;
  std::string link;
  std::uint64_t repetition = 0;
  channel::Click outcome = channel::Click::None;
  std::uint64_t cumulative_trials = 0;
};

/// A heralded link between two ensembles and a middle station.
struct HeraldLink {
  std::string id;
  ensemble::EnsembleNode* left = nullptr;
  ensemble::EnsembleNode* right = nullptr;
  channel::HeraldStation station;

  /// Photon flight to the station plus the herald signal back to the
  /// farther node: 2 max(delay).
  double latency() const;
};

HeraldLink make_link(std::string id, ensemble::EnsembleNode& left, ensemble::EnsembleNode& right,
                     std::pair<channel::OpticalLink, channel::OpticalLink> links,
                     std::pair<channel::Detector, channel::Detector> detectors);

struct HeraldResult {
  std::uint64_t trials = 0;
  channel::HeraldOutcome outcome;
  DensityMatrix pair;     // memories (left, right) at herald_time
  double start = 0.0;
  double herald_time = 0.0;
  double elapsed() const { return herald_time - start; }
};

/// Context shared by the protocol steps of one repetition.
struct Engine {
  const ProtocolConfig* config = nullptr;
  std::uint64_t repetition = 0;
  EventLog* log = nullptr;                 // optional
  std::vector<TrialRecord>* trials = nullptr;  // optional
};

/// Reset, write and herald every attempt_period until a single click. Trial k
/// uses rng.split(k). The memories are decohered for the herald latency only;
/// failed trials leave nothing behind. Throws TimeoutError after max_trials.
HeraldResult attempt_until_heralded(HeraldLink& link, const Engine& engine, const RngStream& rng,
                                    double start = 0.0);

/// Generic form: `trial(rng, time)` runs one attempt.
HeraldResult attempt_until_heralded(
    const std::string& link_id, double latency,
    const std::function<channel::HeraldOutcome(RngStream&, double)>& trial, const Engine& engine,
    const RngStream& rng, double start = 0.0);

/// Phase shift on the right memory that maps the heralded state onto
/// (|01> + |10>)/sqrt2 up to the uncorrected link jitter.
DensityMatrix align_pair(const DensityMatrix& pair, const channel::HeraldOutcome& outcome,
                         double nominal_eta1);

/// Two ensembles (upper and lower) forming one node qubit.
struct EnsemblePair {
  ensemble::EnsembleNode upper;
  ensemble::EnsembleNode lower;
};

struct PreparedPairs {
  DensityMatrix first;   // link 1 memories, decohered up to `done`
  DensityMatrix second;  // link 2 memories
  channel::HeraldOutcome outcome_first;
  channel::HeraldOutcome outcome_second;
  double start = 0.0;
  double done = 0.0;
  std::uint64_t trials_first = 0;
  std::uint64_t trials_second = 0;
  std::uint64_t restarts = 0;
  double stored_for = 0.0;  // storage time of the pair heralded first
};

/// Herald two links independently from `start` and keep the first heralded
/// pair in memory until the second arrives. A pair stored longer than the
/// memory budget expires and its link starts over (round r uses
/// rng.split(2 r + link index)). Throws MemoryExpiredError after
/// max_restarts expiries, TimeoutError from either link.
PreparedPairs prepare_pairs(HeraldLink& first, HeraldLink& second, const Engine& engine,
                            const RngStream& rng, double start = 0.0);

struct NodeQubitState {
  DensityMatrix joint;  // (L_u, R_u, L_l, R_l)
  PreparedPairs pairs;
};

/// Asynchronous preparation of the (u, l) pairs between two nodes.
NodeQubitState prepare_node_qubit(EnsemblePair& left, EnsemblePair& right,
                                  std::pair<channel::OpticalLink, channel::OpticalLink> links,
                                  std::pair<channel::Detector, channel::Detector> detectors,
                                  const Engine& engine, const RngStream& rng, double start = 0.0);
/// Same with a prebuilt station shared by the u and l links.
NodeQubitState prepare_node_qubit(EnsemblePair& left, EnsemblePair& right,
                                  const channel::HeraldStation& station, const Engine& engine,
                                  const RngStream& rng, double start = 0.0);

struct PolarizationReadout {
  DensityMatrix state;  // (photon L, photon R), H = 0 from u, V = 1 from l
  double coincidence_probability = 0.0;
};

/// Read all four ensembles (efficiencies for L_u, R_u, L_l, R_l) and keep
/// the events with one photon per node. Throws DegenerateMeasurementError
/// when that never happens.
PolarizationReadout polarization_readout(const DensityMatrix& joint,
                                         const std::array<double, 4>& efficiencies);

/// Exact statistics of the connection measurement at B.
struct SwapDistribution {
  std::array<double, 4> probabilities{};  // none, D1, D2, both
  std::array<std::optional<DensityMatrix>, 2> conditional;  // (A, C) after D1, D2
};

/// Read both memories at B with efficiency eta_b, combine the fields on a
/// 50/50 beamsplitter and detect. `ab` is (A, B), `bc` is (B, C). Throws
/// ProtocolStateError when a pair is missing (not a two-memory state).
SwapDistribution swap_distribution(const DensityMatrix& ab, const DensityMatrix& bc, double eta_b,
                                   std::pair<channel::Detector, channel::Detector> detectors);

struct SwapResult {
  bool success = false;
  channel::Click which_detector = channel::Click::None;
  std::optional<DensityMatrix> state;      // full (A, C) state
  std::optional<DensityMatrix> effective;  // one-excitation sector as two qubits
  double effective_weight = 0.0;           // probability of that sector
  double success_probability = 0.0;
  std::array<double, 4> probabilities{};
};

SwapResult entanglement_swap(const DensityMatrix& ab, const DensityMatrix& bc, double eta_b,
                             std::pair<channel::Detector, channel::Detector> detectors,
                             RngStream& rng);

/// Restrict a two-mode state to span{|01>, |10>} and renormalize, returned
/// as a two-qubit state. `weight` receives the sector probability.
DensityMatrix single_excitation_sector(const DensityMatrix& rho, double* weight = nullptr);

/// Cavity node used as one arm of a hybrid link. A partial Raman transfer
/// |a,0> -> sqrt(1 - q)|a,0> + e^{i phase} sqrt(q)|b,1> flips the atom
/// (|1_A> = |b>) while emitting; in integrated mode the photon leaves with
/// the efficiency of the emission pulse.
struct CavityEmitter {
  cavity::CavityParams params;
  double emission_probability = 0.01;  // q
  double phase = 0.0;
  cavity::Mode mode = cavity::Mode::Ideal;
  std::optional<cavity::ControlPulse> pulse;  // integrated mode; default flat-top 100/g
  double dt = 0.0;

  void validate() const;
  double emission_efficiency() const;
};

/// Source (atom, field A, spin E, field E) for the hybrid link.
DensityMatrix hybrid_source(const CavityEmitter& a, const ensemble::EnsembleParams& e);

channel::HeraldStation hybrid_station(const CavityEmitter& a, const ensemble::EnsembleParams& e,
                                      std::pair<channel::OpticalLink, channel::OpticalLink> links,
                                      std::pair<channel::Detector, channel::Detector> detectors);

/// One hybrid attempt. On a single click the conditional state is over
/// (atom qubit {|0_A>, |1_A>}, collective spin) and the ensemble keeps its
/// reduced state. Throws ProtocolStateError if the ensemble is not idle.
channel::HeraldOutcome hybrid_entangle(const channel::HeraldStation& station,
                                       ensemble::EnsembleNode& e, RngStream& rng);

using BigInt = boost::multiprecision::cpp_int;

struct ConnectivityDimension {
  BigInt classical;  // k 2^n
  BigInt quantum;    // 2^(k n)
};

/// Throws ArgumentError unless k, n >= 1.
ConnectivityDimension connectivity_dimension(std::uint64_t k_nodes, std::uint64_t n_qubits);

}  // namespace qnet::repeater
