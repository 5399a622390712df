#include "qnet/repeater/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <thread>

#include "qnet/errors.hpp"
#include "qnet/verify/verify.hpp"

namespace qnet::repeater {

using channel::Click;
using channel::HeraldOutcome;

const char* to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::EnsemblePair: return "ensemble-pair";
    case NodeKind::Cavity: return "cavity";
    case NodeKind::DetectorStation: return "detector-station";
  }
  return "?";
}

const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::HeraldOneLink: return "herald-one-link";
    case Scenario::NodePairBell: return "node-pair-bell";
    case Scenario::SwapChain: return "swap-chain";
    case Scenario::Hybrid: return "hybrid";
    case Scenario::CavityTransfer: return "cavity-transfer";
  }
  return "?";
}

Scenario scenario_from_string(const std::string& name) {
  for (Scenario s : {Scenario::HeraldOneLink, Scenario::NodePairBell, Scenario::SwapChain,
                     Scenario::Hybrid, Scenario::CavityTransfer}) {
    if (name == to_string(s)) return s;
  }
  throw ConfigError("scenario", "unknown scenario '" + name + "'");
}

void NetworkTopology::validate() const {
  std::set<std::string> ids;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const NodeSpec& n = nodes[i];
    const std::string path = "topology.nodes[" + std::to_string(i) + "]";
    if (n.id.empty()) throw ConfigError(path + ".id", "empty node id");
    if (!ids.insert(n.id).second) throw ConfigError(path + ".id", "duplicate id '" + n.id + "'");
    try {
      switch (n.kind) {
        case NodeKind::EnsemblePair:
          n.ensemble.validate();
          n.detectors.first.validate();
          n.detectors.second.validate();
          break;
        case NodeKind::Cavity: n.cavity.validate(); break;
        case NodeKind::DetectorStation:
          n.detectors.first.validate();
          n.detectors.second.validate();
          break;
      }
    } catch (const ArgumentError& e) {
      throw ConfigError(path, e.what());
    }
  }
  std::map<std::string, int> station_links;
  for (std::size_t i = 0; i < links.size(); ++i) {
    const LinkSpec& l = links[i];
    const std::string path = "topology.links[" + std::to_string(i) + "]";
    if (!ids.count(l.from)) throw ConfigError(path + ".from", "unknown node '" + l.from + "'");
    if (!ids.count(l.to)) throw ConfigError(path + ".to", "unknown node '" + l.to + "'");
    if (l.from == l.to) throw ConfigError(path, "link joins a node to itself");
    try {
      l.link.validate();
    } catch (const ArgumentError& e) {
      throw ConfigError(path, e.what());
    }
    for (const auto* end : {&l.from, &l.to}) {
      if (node(*end).kind == NodeKind::DetectorStation) ++station_links[*end];
    }
  }
  for (const NodeSpec& n : nodes) {
    if (n.kind == NodeKind::DetectorStation && station_links[n.id] != 2) {
      throw ConfigError("topology.nodes", "station '" + n.id + "' must have exactly two links");
    }
  }
}

const NodeSpec& NetworkTopology::node(const std::string& id) const {
  for (const NodeSpec& n : nodes) {
    if (n.id == id) return n;
  }
  throw ConfigError("topology.nodes", "unknown node '" + id + "'");
}

Segment NetworkTopology::segment(const std::string& a, const std::string& b) const {
  auto link_between = [&](const std::string& x, const std::string& y) -> const LinkSpec* {
    for (const LinkSpec& l : links) {
      if ((l.from == x && l.to == y) || (l.from == y && l.to == x)) return &l;
    }
    return nullptr;
  };
  for (const NodeSpec& s : nodes) {
    if (s.kind != NodeKind::DetectorStation) continue;
    const LinkSpec* la = link_between(a, s.id);
    const LinkSpec* lb = link_between(b, s.id);
    if (la && lb) return {s.id, {la->link, lb->link}, s.detectors};
  }
  throw ConfigError("topology.links", "no detector station between '" + a + "' and '" + b + "'");
}

const channel::OpticalLink& NetworkTopology::direct(const std::string& a,
                                                    const std::string& b) const {
  for (const LinkSpec& l : links) {
    if ((l.from == a && l.to == b) || (l.from == b && l.to == a)) return l.link;
  }
  throw ConfigError("topology.links", "no link between '" + a + "' and '" + b + "'");
}

std::size_t effective_workers(std::size_t requested, std::uint64_t jobs) {
  std::size_t n = requested == 0 ? std::max(1u, std::thread::hardware_concurrency()) : requested;
  if (const char* cap = std::getenv("QNET_WORKERS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(cap, &end, 10);
    if (end != cap && *end == '\0' && v >= 1) n = std::min<std::size_t>(n, v);
  }
  return std::max<std::size_t>(1, std::min<std::uint64_t>(n, std::max<std::uint64_t>(jobs, 1)));
}

double expected_max_completion(double p1, double latency1, double p2, double latency2,
                               double period) {
  if (!(p1 > 0.0 && p1 <= 1.0 && p2 > 0.0 && p2 <= 1.0)) {
    throw ArgumentError("expected_max_completion: probabilities must lie in (0, 1]");
  }
  // E[max(c, X2)] = c + E[(X2 - c)+], summed over the values c of X1.
  auto excess = [&](double c) {
    double k0 = 0.0;
    if (c >= latency2) k0 = std::floor((c - latency2) / period) + 1.0;
    return std::pow(1.0 - p2, k0) * ((k0 * period + latency2 - c) + period * (1.0 - p2) / p2);
  };
  double total = 0.0, tail = 1.0;
  for (std::uint64_t k = 0; tail > 1e-16; ++k) {
    const double weight = p1 * tail;
    const double c = static_cast<double>(k) * period + latency1;
    total += weight * (c + excess(c));
    tail *= 1.0 - p1;
    if (k > 100000000) break;
  }
  return total;
}

namespace {

struct RepOutput {
  std::vector<TrialRecord> trials;
  EventLog events;
  std::vector<double> values;
  std::optional<DensityMatrix> state;
  double weight = 0.0;
};

std::vector<RepOutput> run_repetitions(const ScenarioConfig& cfg,
                                       const std::function<void(std::uint64_t, RepOutput&)>& body) {
  const std::uint64_t n = cfg.repetitions;
  std::vector<RepOutput> out(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::uint64_t> next{0};
  auto work = [&] {
    for (std::uint64_t r = next++; r < n; r = next++) {
      try {
        body(r, out[r]);
        std::sort(out[r].events.begin(), out[r].events.end(), event_before);
      } catch (...) {
        errors[r] = std::current_exception();
      }
    }
  };
  const std::size_t workers = effective_workers(cfg.workers, n);
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
};

Summary summarize(const std::vector<RepOutput>& reps, std::size_t column) {
  Summary s;
  const double n = static_cast<double>(reps.size());
  if (reps.empty()) return s;
  for (const auto& r : reps) s.mean += r.values[column];
  s.mean /= n;
  if (reps.size() > 1) {
    double ss = 0.0;
    for (const auto& r : reps) ss += (r.values[column] - s.mean) * (r.values[column] - s.mean);
    s.std = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

/// Rate sum(count) / sum(time) and its delta-method standard error.
StageRate ratio_rate(std::string stage, const std::vector<RepOutput>& reps, std::size_t count_col,
                     std::size_t time_col, double analytic) {
  StageRate sr{std::move(stage), 0.0, 0.0, analytic};
  double sc = 0.0, st = 0.0;
  for (const auto& r : reps) {
    sc += r.values[count_col];
    st += r.values[time_col];
  }
  if (st <= 0.0) return sr;
  sr.simulated = sc / st;
  const double n = static_cast<double>(reps.size());
  double ss = 0.0;
  for (const auto& r : reps) {
    const double d = r.values[count_col] - sr.simulated * r.values[time_col];
    ss += d * d;
  }
  if (reps.size() > 1) sr.std_error = std::sqrt(ss / (n - 1.0) / n) / (st / n);
  return sr;
}

std::vector<std::string> resolve_path(const NetworkTopology& topo, const ScenarioConfig& cfg,
                                      const std::vector<NodeKind>& kinds) {
  std::vector<std::string> path = cfg.path;
  if (path.empty()) {
    std::set<std::string> used;
    for (NodeKind k : kinds) {
      for (const NodeSpec& n : topo.nodes) {
        if (n.kind == k && !used.count(n.id)) {
          path.push_back(n.id);
          used.insert(n.id);
          break;
        }
      }
    }
  }
  std::string expected;
  for (NodeKind k : kinds) expected += std::string(expected.empty() ? "" : ", ") + to_string(k);
  if (path.size() != kinds.size()) {
    throw ConfigError("path", std::string(to_string(cfg.scenario)) + " needs nodes (" +
                                  expected + ")");
  }
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    if (topo.node(path[i]).kind != kinds[i]) {
      throw ConfigError("path[" + std::to_string(i) + "]",
                        "node '" + path[i] + "' must be " + to_string(kinds[i]));
    }
  }
  return path;
}

double herald_probability(const channel::HeraldStation& s) {
  return s.nominal().probabilities[1] + s.nominal().probabilities[2];
}

double segment_latency(const Segment& seg) {
  return 2.0 * std::max(seg.links.first.delay(), seg.links.second.delay());
}

/// (|01> + sign e^{i eta}|10>)/sqrt2 on the space of `rho`.
StateVector heralded_target(const HilbertSpace& sp, Click click, double eta) {
  CVector amp = CVector::Zero(static_cast<Eigen::Index>(sp.total_dimension()));
  const std::size_t d01[] = {0, 1}, d10[] = {1, 0};
  const double sign = click == Click::D2 ? -1.0 : 1.0;
  amp(static_cast<Eigen::Index>(sp.index_of(d01))) = M_SQRT1_2;
  amp(static_cast<Eigen::Index>(sp.index_of(d10))) = sign * std::polar(M_SQRT1_2, eta);
  return StateVector(sp, amp);
}

void add_ensemble_imperfections(std::vector<Metric>& out, const std::string& id,
                                const ensemble::EnsembleParams& p) {
  out.push_back({id + ".p_excite", p.p_excite});
  out.push_back({id + ".readout_efficiency", p.readout_efficiency});
  out.push_back({id + ".memory_lifetime", p.memory_lifetime});
  out.push_back({id + ".dephasing_lifetime", p.dephasing_lifetime});
  out.push_back({id + ".n_max", static_cast<double>(p.n_max)});
}

void add_segment_imperfections(std::vector<Metric>& out, const Segment& seg) {
  const auto& [d1, d2] = seg.detectors;
  out.push_back({seg.station + ".d1.efficiency", d1.efficiency});
  out.push_back({seg.station + ".d1.dark_count_prob", d1.dark_count_prob});
  out.push_back({seg.station + ".d2.efficiency", d2.efficiency});
  out.push_back({seg.station + ".d2.dark_count_prob", d2.dark_count_prob});
  int k = 0;
  for (const auto* l : {&seg.links.first, &seg.links.second}) {
    const std::string id = seg.station + ".arm" + std::to_string(++k);
    out.push_back({id + ".length", l->length});
    out.push_back({id + ".transmissivity", l->transmissivity()});
    out.push_back({id + ".phase_jitter_std", l->phase_jitter_std});
  }
}

LinkStats link_stats(std::string id, const std::vector<RepOutput>& reps, std::size_t trials_col,
                     std::size_t time_col, double p) {
  LinkStats s;
  s.link = std::move(id);
  s.samples = reps.size();
  const Summary t = summarize(reps, trials_col);
  s.mean_trials = t.mean;
  s.std_trials = t.std;
  s.herald_probability = p;
  s.mean_time = summarize(reps, time_col).mean;
  s.rate = s.mean_time > 0.0 ? 1.0 / s.mean_time : 0.0;
  return s;
}

void collect(SimReport& report, std::vector<RepOutput>& reps, bool events) {
  for (auto& r : reps) {
    report.trials.insert(report.trials.end(), r.trials.begin(), r.trials.end());
    if (events) report.events.insert(report.events.end(), r.events.begin(), r.events.end());
  }
}

Engine engine_for(const ScenarioConfig& cfg, std::uint64_t r, RepOutput& out) {
  return Engine{&cfg.protocol, r, cfg.record_events ? &out.events : nullptr, &out.trials};
}

// ---- herald-one-link ------------------------------------------------------

void run_herald_one_link(const NetworkTopology& topo, const ScenarioConfig& cfg, SimReport& rep) {
  const auto path = resolve_path(topo, cfg, {NodeKind::EnsemblePair, NodeKind::EnsemblePair});
  const NodeSpec& a = topo.node(path[0]);
  const NodeSpec& b = topo.node(path[1]);
  const Segment seg = topo.segment(a.id, b.id);
  const channel::HeraldStation station =
      channel::dlcz_station(a.ensemble, b.ensemble, seg.links, seg.detectors);
  const RngStream root(cfg.protocol.rng_seed);
  const std::string id = a.id + "~" + b.id;

  // values: trials, elapsed, fidelity, concurrence, D1
  auto reps = run_repetitions(cfg, [&](std::uint64_t r, RepOutput& out) {
    ensemble::EnsembleNode left(a.ensemble, a.id + ".u"), right(b.ensemble, b.id + ".u");
    HeraldLink link{id, &left, &right, station};
    const HeraldResult h = attempt_until_heralded(link, engine_for(cfg, r, out), root.split(r));
    const Click c = h.outcome.which_detector;
    out.values = {static_cast<double>(h.trials), h.elapsed(),
                  fidelity(h.pair, heralded_target(h.pair.space(), c, h.outcome.eta1)),
                  verify::concurrence(verify::qubit_block(h.pair)), c == Click::D1 ? 1.0 : 0.0};
  });
  const double p = herald_probability(station);
  rep.links.push_back(link_stats(id, reps, 0, 1, p));
  rep.metrics = {{"herald_probability", p},
                 {"expected_trials", 1.0 / p},
                 {"mean_trials", summarize(reps, 0).mean},
                 {"mean_fidelity", summarize(reps, 2).mean},
                 {"mean_concurrence", summarize(reps, 3).mean},
                 {"d1_fraction", summarize(reps, 4).mean}};
  add_ensemble_imperfections(rep.imperfections, a.id, a.ensemble);
  add_ensemble_imperfections(rep.imperfections, b.id, b.ensemble);
  add_segment_imperfections(rep.imperfections, seg);
  collect(rep, reps, cfg.record_events);
}

// ---- node-pair-bell -------------------------------------------------------

double chsh_from_counts(const verify::CountsTable& t) {
  std::array<double, 4> e{};
  for (std::size_t k = 0; k < 4; ++k) {
    const auto& c = t.counts[k];
    e[k] = (static_cast<double>(c[0]) - static_cast<double>(c[1]) - static_cast<double>(c[2]) +
            static_cast<double>(c[3])) /
           static_cast<double>(t.shots);
  }
  return std::abs(e[0] - e[1] + e[2] + e[3]);
}

void run_node_pair_bell(const NetworkTopology& topo, const ScenarioConfig& cfg, SimReport& rep) {
  const auto path = resolve_path(topo, cfg, {NodeKind::EnsemblePair, NodeKind::EnsemblePair});
  const NodeSpec& a = topo.node(path[0]);
  const NodeSpec& b = topo.node(path[1]);
  const Segment seg = topo.segment(a.id, b.id);
  const RngStream root(cfg.protocol.rng_seed);
  const std::array<double, 4> eff{a.ensemble.readout_efficiency, b.ensemble.readout_efficiency,
                                  a.ensemble.readout_efficiency, b.ensemble.readout_efficiency};
  const channel::HeraldStation station =
      channel::dlcz_station(a.ensemble, b.ensemble, seg.links, seg.detectors);

  // values: done, trials_u, trials_l, restarts, coincidence, time_u, time_l
  auto reps = run_repetitions(cfg, [&](std::uint64_t r, RepOutput& out) {
    EnsemblePair left{ensemble::EnsembleNode(a.ensemble, a.id + ".u"),
                      ensemble::EnsembleNode(a.ensemble, a.id + ".l")};
    EnsemblePair right{ensemble::EnsembleNode(b.ensemble, b.id + ".u"),
                       ensemble::EnsembleNode(b.ensemble, b.id + ".l")};
    const Engine engine = engine_for(cfg, r, out);
    const NodeQubitState nq =
        prepare_node_qubit(left, right, station, engine, root.split(r).split(0));
    const PolarizationReadout ro = polarization_readout(nq.joint, eff);
    if (engine.log) {
      engine.log->push_back({nq.pairs.done, a.id + "|" + b.id, EventKind::Readout,
                             engine.log->size(), r,
                             "coincidence=" + std::to_string(ro.coincidence_probability)});
    }
    const double period = cfg.protocol.attempt_period, lat = segment_latency(seg);
    out.values = {nq.pairs.done,
                  static_cast<double>(nq.pairs.trials_first),
                  static_cast<double>(nq.pairs.trials_second),
                  static_cast<double>(nq.pairs.restarts),
                  ro.coincidence_probability,
                  (static_cast<double>(nq.pairs.trials_first) - 1.0) * period + lat,
                  (static_cast<double>(nq.pairs.trials_second) - 1.0) * period + lat};
    out.state = ro.state;
    out.weight = ro.coincidence_probability;
  });

  CMatrix acc = CMatrix::Zero(4, 4);
  double total = 0.0;
  for (const auto& r : reps) {
    acc += r.weight * r.state->matrix();
    total += r.weight;
  }
  const DensityMatrix avg(reps.front().state->space(), acc / total);

  const double p = herald_probability(station);
  const double period = cfg.protocol.attempt_period, lat = segment_latency(seg);
  rep.links.push_back(link_stats(a.id + ".u~" + b.id + ".u", reps, 1, 5, p));
  rep.links.push_back(link_stats(a.id + ".l~" + b.id + ".l", reps, 2, 6, p));

  // Settings for (|HV> + |VH>)/sqrt2: a = 0, a' = 45, b = 67.5, b' = 22.5 degrees.
  const double deg = M_PI / 180.0;
  const auto chsh = verify::chsh_settings(0.0, 45.0 * deg, 67.5 * deg, 22.5 * deg);
  const RngStream counts_rng = root.split(~std::uint64_t{0});
  RngStream s1 = counts_rng.split(0), s2 = counts_rng.split(1);
  const auto chsh_counts = verify::simulate_counts(
      avg, std::vector<verify::MeasurementSetting>(chsh.begin(), chsh.end()), cfg.shots, s1);
  const auto tomo =
      verify::tomography_reconstruct(verify::simulate_counts(avg, verify::pauli_settings(),
                                                             cfg.shots, s2));
  rep.metrics = {{"herald_probability", p},
                 {"mean_preparation_time", summarize(reps, 0).mean},
                 {"expected_preparation_time", expected_max_completion(p, lat, p, lat, period)},
                 {"mean_restarts", summarize(reps, 3).mean},
                 {"coincidence_probability", summarize(reps, 4).mean},
                 {"concurrence", verify::concurrence(avg)},
                 {"chsh", verify::chsh_value(avg, chsh)},
                 {"chsh_max", verify::max_chsh_value(avg)},
                 {"chsh_from_counts", chsh_from_counts(chsh_counts)},
                 {"tomography_fidelity", fidelity(tomo.estimate, avg)},
                 {"tomography_concurrence", verify::concurrence(tomo.estimate)}};
  add_ensemble_imperfections(rep.imperfections, a.id, a.ensemble);
  add_ensemble_imperfections(rep.imperfections, b.id, b.ensemble);
  add_segment_imperfections(rep.imperfections, seg);
  rep.imperfections.push_back({"attempt_period", period});
  rep.imperfections.push_back({"memory_budget", cfg.protocol.memory_budget});
  collect(rep, reps, cfg.record_events);
}

// ---- swap-chain -----------------------------------------------------------

DensityMatrix nominal_pair(const channel::HeraldStation& s, const ensemble::EnsembleParams& l,
                           const ensemble::EnsembleParams& r, double latency) {
  HeraldOutcome d1;
  d1.which_detector = Click::D1;
  DensityMatrix pair = align_pair(*s.nominal().conditional[0], d1, s.nominal().eta1);
  if (latency > 0.0) {
    pair = ensemble::apply_memory_decoherence(pair, 0, latency, l.decoherence());
    pair = ensemble::apply_memory_decoherence(pair, 1, latency, r.decoherence());
  }
  return pair;
}

channel::OpticalLink equal_loss_arm(const Segment& s1, const Segment& s2) {
  channel::OpticalLink arm;
  const double total_length = s1.links.first.length + s1.links.second.length +
                              s2.links.first.length + s2.links.second.length;
  const double t = std::sqrt(s1.links.first.transmissivity() * s1.links.second.transmissivity() *
                             s2.links.first.transmissivity() * s2.links.second.transmissivity());
  arm.length = total_length / 2.0;
  if (arm.length > 0.0) arm.attenuation = -10.0 * std::log10(t) / (arm.length / 1000.0);
  return arm;
}

void run_swap_chain(const NetworkTopology& topo, const ScenarioConfig& cfg, SimReport& rep) {
  const auto path = resolve_path(
      topo, cfg, {NodeKind::EnsemblePair, NodeKind::EnsemblePair, NodeKind::EnsemblePair});
  const NodeSpec& a = topo.node(path[0]);
  const NodeSpec& b = topo.node(path[1]);
  const NodeSpec& c = topo.node(path[2]);
  const Segment s1 = topo.segment(a.id, b.id), s2 = topo.segment(b.id, c.id);
  const auto st1 = channel::dlcz_station(a.ensemble, b.ensemble, s1.links, s1.detectors);
  const auto st2 = channel::dlcz_station(b.ensemble, c.ensemble, s2.links, s2.detectors);
  const channel::OpticalLink arm = equal_loss_arm(s1, s2);
  const auto direct = channel::dlcz_station(a.ensemble, c.ensemble, {arm, arm}, s1.detectors);
  const double eta_b = b.ensemble.readout_efficiency;
  const double period = cfg.protocol.attempt_period;
  const double lat1 = segment_latency(s1), lat2 = segment_latency(s2);
  const double lat_d = 2.0 * arm.delay();
  const RngStream root(cfg.protocol.rng_seed);
  const std::string id1 = a.id + ".u~" + b.id + ".u", id2 = b.id + ".l~" + c.id + ".u";
  const std::string id_d = a.id + "~" + c.id + ".direct";

  // values: done, time1, time2, success, fidelity, effective fidelity,
  //         effective weight, direct elapsed, one, trials1, trials2, direct trials
  auto reps = run_repetitions(cfg, [&](std::uint64_t r, RepOutput& out) {
    ensemble::EnsembleNode au(a.ensemble, a.id + ".u"), bu(b.ensemble, b.id + ".u"),
        bl(b.ensemble, b.id + ".l"), cu(c.ensemble, c.id + ".u");
    HeraldLink l1{id1, &au, &bu, st1}, l2{id2, &bl, &cu, st2};
    const Engine engine = engine_for(cfg, r, out);
    const RngStream s = root.split(r);
    const PreparedPairs pp = prepare_pairs(l1, l2, engine, s.split(0));
    RngStream swap_rng = s.split(1);
    const SwapResult sw =
        entanglement_swap(pp.first, pp.second, eta_b, b.detectors, swap_rng);
    if (engine.log) {
      engine.log->push_back({pp.done, b.id, EventKind::Swap, engine.log->size(), r,
                             std::string("click=") + channel::to_string(sw.which_detector)});
    }
    double f = 0.0, fe = 0.0;
    if (sw.success) {
      f = fidelity(*sw.state, heralded_target(sw.state->space(), sw.which_detector, 0.0));
      if (sw.effective) {
        fe = fidelity(*sw.effective,
                      heralded_target(sw.effective->space(), sw.which_detector, 0.0));
      }
    }
    ensemble::EnsembleNode ad(a.ensemble, a.id + ".d"), cd(c.ensemble, c.id + ".d");
    HeraldLink ld{id_d, &ad, &cd, direct};
    const HeraldResult hd =
        attempt_until_heralded(ld, Engine{&cfg.protocol, r, nullptr, nullptr}, s.split(2));
    out.values = {pp.done,
                  (static_cast<double>(pp.trials_first) - 1.0) * period + lat1,
                  (static_cast<double>(pp.trials_second) - 1.0) * period + lat2,
                  sw.success ? 1.0 : 0.0,
                  f,
                  fe,
                  sw.effective_weight,
                  hd.elapsed(),
                  1.0,
                  static_cast<double>(pp.trials_first),
                  static_cast<double>(pp.trials_second),
                  static_cast<double>(hd.trials)};
  });

  const double p1 = herald_probability(st1), p2 = herald_probability(st2);
  const double pd = herald_probability(direct);
  const SwapDistribution nominal =
      swap_distribution(nominal_pair(st1, a.ensemble, b.ensemble, lat1),
                        nominal_pair(st2, b.ensemble, c.ensemble, lat2), eta_b, b.detectors);
  const double ps = nominal.probabilities[1] + nominal.probabilities[2];
  const double prep = expected_max_completion(p1, lat1, p2, lat2, period);
  const double n = static_cast<double>(reps.size());

  rep.links.push_back(link_stats(id1, reps, 9, 1, p1));
  rep.links.push_back(link_stats(id2, reps, 10, 2, p2));
  rep.links.push_back(link_stats(id_d, reps, 11, 7, pd));
  const Summary succ = summarize(reps, 3);
  double successes = 0.0, f_sum = 0.0, fe_sum = 0.0, w_sum = 0.0;
  for (const auto& r : reps) {
    successes += r.values[3];
    f_sum += r.values[4];
    fe_sum += r.values[5];
    w_sum += r.values[6];
  }
  const double k = std::max(successes, 1.0);
  rep.stages = {ratio_rate("link " + id1, reps, 8, 1, 1.0 / ((1.0 / p1 - 1.0) * period + lat1)),
                ratio_rate("link " + id2, reps, 8, 2, 1.0 / ((1.0 / p2 - 1.0) * period + lat2)),
                StageRate{"swap", succ.mean, std::sqrt(ps * (1.0 - ps) / n), ps},
                ratio_rate("end-to-end", reps, 3, 0, ps / prep),
                ratio_rate("direct", reps, 8, 7, 1.0 / ((1.0 / pd - 1.0) * period + lat_d))};
  rep.metrics = {{"swap_success_probability", ps},
                 {"swap_success_fraction", succ.mean},
                 {"mean_fidelity", f_sum / k},
                 {"mean_effective_fidelity", fe_sum / k},
                 {"mean_effective_weight", w_sum / k},
                 {"expected_preparation_time", prep},
                 {"direct_herald_probability", pd}};
  for (const auto* n_ : {&a, &b, &c}) {
    add_ensemble_imperfections(rep.imperfections, n_->id, n_->ensemble);
  }
  add_segment_imperfections(rep.imperfections, s1);
  add_segment_imperfections(rep.imperfections, s2);
  rep.imperfections.push_back({b.id + ".swap.d1.efficiency", b.detectors.first.efficiency});
  rep.imperfections.push_back({b.id + ".swap.d2.efficiency", b.detectors.second.efficiency});
  collect(rep, reps, cfg.record_events);
}

// ---- hybrid ---------------------------------------------------------------

std::optional<cavity::ControlPulse> emission_pulse(const ScenarioConfig& cfg,
                                                   const cavity::CavityParams& p) {
  if (cfg.cavity_mode == cavity::Mode::Ideal) return std::nullopt;
  return cavity::ControlPulse::flat_top_emission(p, cfg.pulse_duration / p.g, cfg.pulse_samples,
                                                 3.0 * p.g);
}

void run_hybrid(const NetworkTopology& topo, const ScenarioConfig& cfg, SimReport& rep) {
  const auto path = resolve_path(topo, cfg, {NodeKind::Cavity, NodeKind::EnsemblePair});
  const NodeSpec& a = topo.node(path[0]);
  const NodeSpec& e = topo.node(path[1]);
  const Segment seg = topo.segment(a.id, e.id);
  CavityEmitter em{a.cavity, cfg.emission_probability, 0.0, cfg.cavity_mode,
                   emission_pulse(cfg, a.cavity), cfg.dt / a.cavity.g};
  const channel::HeraldStation station = hybrid_station(em, e.ensemble, seg.links, seg.detectors);
  const double latency = segment_latency(seg);
  const RngStream root(cfg.protocol.rng_seed);
  const std::string id = a.id + "~" + e.id;

  // values: trials, elapsed, concurrence, fidelity
  auto reps = run_repetitions(cfg, [&](std::uint64_t r, RepOutput& out) {
    ensemble::EnsembleNode node(e.ensemble, e.id + ".u");
    auto trial = [&](RngStream& s, double t) {
      node.reset(t);
      return hybrid_entangle(station, node, s);
    };
    const HeraldResult h =
        attempt_until_heralded(id, latency, trial, engine_for(cfg, r, out), root.split(r));
    out.values = {static_cast<double>(h.trials), h.elapsed(),
                  verify::concurrence(verify::qubit_block(h.pair)),
                  fidelity(h.pair, heralded_target(h.pair.space(), h.outcome.which_detector,
                                                   h.outcome.eta1))};
  });
  const double p = herald_probability(station);
  rep.links.push_back(link_stats(id, reps, 0, 1, p));
  rep.metrics = {{"herald_probability", p},
                 {"emission_efficiency", em.emission_efficiency()},
                 {"mean_concurrence", summarize(reps, 2).mean},
                 {"mean_fidelity", summarize(reps, 3).mean}};
  rep.imperfections.push_back({a.id + ".emission_probability", cfg.emission_probability});
  rep.imperfections.push_back({a.id + ".gamma_over_g", a.cavity.gamma / a.cavity.g});
  rep.imperfections.push_back({a.id + ".kappa_over_g", a.cavity.kappa / a.cavity.g});
  add_ensemble_imperfections(rep.imperfections, e.id, e.ensemble);
  add_segment_imperfections(rep.imperfections, seg);
  collect(rep, reps, cfg.record_events);
}

// ---- cavity-transfer ------------------------------------------------------

void run_cavity_transfer(const NetworkTopology& topo, const ScenarioConfig& cfg, SimReport& rep) {
  const auto path = resolve_path(topo, cfg, {NodeKind::Cavity, NodeKind::Cavity});
  const NodeSpec& x = topo.node(path[0]);
  const NodeSpec& y = topo.node(path[1]);
  const channel::OpticalLink& link = topo.direct(x.id, y.id);
  const double g = x.cavity.g;
  const cavity::ControlPulse on =
      cfg.cavity_mode == cavity::Mode::Ideal
          ? cavity::ControlPulse::ramp(cavity::ControlPulse::Shape::RampOn, 10.0 * g,
                                       cfg.pulse_duration / g, cfg.pulse_samples)
          : *emission_pulse(cfg, x.cavity);
  CVector amp(2);
  amp << std::cos(cfg.input_theta), std::polar(std::sin(cfg.input_theta), cfg.input_phi);
  const StateVector memory(HilbertSpace({2}, {SubsystemKind::Atom}), amp);
  const cavity::TransferResult tr = cavity::transfer_node_to_node(
      memory, {on, on.time_reversed()}, link, x.cavity, y.cavity, cfg.cavity_mode, cfg.dt / g);
  const double latency = 2.0 * link.delay();
  const RngStream root(cfg.protocol.rng_seed);
  const std::string id = x.id + "->" + y.id;

  auto reps = run_repetitions(cfg, [&](std::uint64_t r, RepOutput& out) {
    auto trial = [&](RngStream& s, double) {
      HeraldOutcome o;
      o.herald_probability = tr.success_probability;
      if (s.uniform() < tr.success_probability) {
        o.which_detector = Click::D1;
        o.conditional_state = tr.memory_b;
      }
      return o;
    };
    const HeraldResult h =
        attempt_until_heralded(id, latency, trial, engine_for(cfg, r, out), root.split(r));
    out.values = {static_cast<double>(h.trials), h.elapsed()};
  });
  rep.links.push_back(link_stats(id, reps, 0, 1, tr.success_probability));
  rep.metrics = {{"fidelity", tr.fidelity},
                 {"unconditional_fidelity", tr.unconditional_fidelity},
                 {"success_probability", tr.success_probability}};
  for (const auto* n : {&x, &y}) {
    rep.imperfections.push_back({n->id + ".gamma_over_g", n->cavity.gamma / n->cavity.g});
    rep.imperfections.push_back({n->id + ".kappa_over_g", n->cavity.kappa / n->cavity.g});
  }
  rep.imperfections.push_back({id + ".transmissivity", link.transmissivity()});
  rep.imperfections.push_back({id + ".length", link.length});
  collect(rep, reps, cfg.record_events);
}

}  // namespace

SimReport run_simulation(const NetworkTopology& topology, const ScenarioConfig& config) {
  topology.validate();
  try {
    config.protocol.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError("protocol", e.what());
  }
  if (config.repetitions < 1) throw ConfigError("repetitions", "must be >= 1");
  SimReport report;
  report.scenario = to_string(config.scenario);
  report.seed = config.protocol.rng_seed;
  report.repetitions = config.repetitions;
  for (const auto& [name, value] : config.reference) report.reference.push_back({name, value});
  switch (config.scenario) {
    case Scenario::HeraldOneLink: run_herald_one_link(topology, config, report); break;
    case Scenario::NodePairBell: run_node_pair_bell(topology, config, report); break;
    case Scenario::SwapChain: run_swap_chain(topology, config, report); break;
    case Scenario::Hybrid: run_hybrid(topology, config, report); break;
    case Scenario::CavityTransfer: run_cavity_transfer(topology, config, report); break;
  }
  return report;
}

}  // namespace qnet::repeater
