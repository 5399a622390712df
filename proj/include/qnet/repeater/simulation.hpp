#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "qnet/cavity/cavity.hpp"
#include "qnet/channel/channel.hpp"
#include "qnet/ensemble/ensemble.hpp"
#include "qnet/repeater/events.hpp"
#include "qnet/repeater/protocol.hpp"

namespace qnet::repeater {

enum class NodeKind { EnsemblePair, Cavity, DetectorStation };
const char* to_string(NodeKind kind);

struct NodeSpec {
  std::string id;
  NodeKind kind = NodeKind::EnsemblePair;
  ensemble::EnsembleParams ensemble;  // ensemble-pair: shared by u and l
  cavity::CavityParams cavity;        // cavity
  /// Detector-station: (D1, D2). Ensemble-pair: the local pair used for
  /// entanglement connection at this node.
  std::pair<channel::Detector, channel::Detector> detectors;
};

struct LinkSpec {
  std::string from;
  std::string to;
  channel::OpticalLink link;
};

/// Two nodes joined through a detector station: link from a, link from b.
struct Segment {
  std::string station;
  std::pair<channel::OpticalLink, channel::OpticalLink> links;
  std::pair<channel::Detector, channel::Detector> detectors;
};

struct NetworkTopology {
  std::vector<NodeSpec> nodes;
  std::vector<LinkSpec> links;

  /// Unique ids, existing endpoints, no self links, every station on exactly
  /// two links. Throws ConfigError naming the offending entry.
  void validate() const;
  const NodeSpec& node(const std::string& id) const;
  /// Station shared by a and b. Throws ConfigError if there is none.
  Segment segment(const std::string& a, const std::string& b) const;
  /// Direct link between a and b. Throws ConfigError if there is none.
  const channel::OpticalLink& direct(const std::string& a, const std::string& b) const;
};

enum class Scenario { HeraldOneLink, NodePairBell, SwapChain, Hybrid, CavityTransfer };
const char* to_string(Scenario s);
Scenario scenario_from_string(const std::string& name);  // throws ConfigError

struct ScenarioConfig {
  Scenario scenario = Scenario::HeraldOneLink;
  ProtocolConfig protocol;
  /// Node ids the scenario runs over; empty picks them from the topology in
  /// declaration order.
  std::vector<std::string> path;
  std::uint64_t repetitions = 1000;
  std::size_t workers = 1;  // 0: hardware concurrency
  std::uint64_t shots = 10000;  // per setting for count-based estimates
  bool record_events = true;
  // Cavity nodes.
  cavity::Mode cavity_mode = cavity::Mode::Ideal;
  double pulse_duration = 100.0;  // units of 1/g
  std::size_t pulse_samples = 2001;
  double dt = 0.01;                // integrator step, units of 1/g
  double emission_probability = 0.01;
  double input_theta = M_PI / 4;   // cavity-transfer input cos|b> + e^{i phi} sin|a>
  double input_phi = 0.0;
  /// Reference values reported next to the simulated ones.
  std::vector<std::pair<std::string, double>> reference;
};

struct LinkStats {
  std::string link;
  std::uint64_t samples = 0;
  double mean_trials = 0.0;
  double std_trials = 0.0;
  double herald_probability = 0.0;  // exact per-trial probability
  double mean_time = 0.0;           // seconds from start to herald
  double rate = 0.0;                // heralds per second
};

struct Metric {
  std::string name;
  double value = 0.0;
};

struct StageRate {
  std::string stage;
  double simulated = 0.0;
  double std_error = 0.0;
  double analytic = 0.0;
};

struct SimReport {
  std::string scenario;
  std::uint64_t seed = 0;
  std::uint64_t repetitions = 0;
  std::vector<LinkStats> links;
  std::vector<Metric> metrics;
  std::vector<Metric> imperfections;
  std::vector<Metric> reference;
  std::vector<StageRate> stages;
  std::vector<TrialRecord> trials;
  EventLog events;  // per repetition, each sorted by (time, node, kind)
};

/// Repetition r uses RngStream(seed).split(r) and runs on any worker; the
/// report is assembled in repetition order. QNET_WORKERS caps the pool.
SimReport run_simulation(const NetworkTopology& topology, const ScenarioConfig& config);

/// Worker count after applying config.workers and QNET_WORKERS.
std::size_t effective_workers(std::size_t requested, std::uint64_t jobs);

/// E[max(X1, X2)] for independent X_i = (N_i - 1) period + latency_i with
/// N_i ~ Geometric(p_i).
double expected_max_completion(double p1, double latency1, double p2, double latency2,
                               double period);

}  // namespace qnet::repeater
