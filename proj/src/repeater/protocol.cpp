#include "qnet/repeater/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "qnet/errors.hpp"
#include "qnet/qstate/fock.hpp"
#include "qnet/tolerances.hpp"

namespace qnet::repeater {

using channel::Click;
using channel::HeraldOutcome;

void ProtocolConfig::validate() const {
  if (!(attempt_period > 0.0) || !std::isfinite(attempt_period)) {
    throw ArgumentError("ProtocolConfig: attempt_period must be > 0");
  }
  if (max_trials < 1) throw ArgumentError("ProtocolConfig: max_trials must be >= 1");
  if (!(memory_budget > 0.0)) throw ArgumentError("ProtocolConfig: memory_budget must be > 0");
}

double HeraldLink::latency() const {
  const auto& l = station.links();
  return 2.0 * std::max(l.first.delay(), l.second.delay());
}

HeraldLink make_link(std::string id, ensemble::EnsembleNode& left, ensemble::EnsembleNode& right,
                     std::pair<channel::OpticalLink, channel::OpticalLink> links,
                     std::pair<channel::Detector, channel::Detector> detectors) {
  return HeraldLink{std::move(id), &left, &right,
                    channel::dlcz_station(left.params(), right.params(), std::move(links),
                                          std::move(detectors))};
}

namespace {

void log_event(const Engine& engine, double time, const std::string& node, EventKind kind,
               std::string detail) {
  if (engine.log) {
    engine.log->push_back(Event{time, node, kind, engine.log->size(), engine.repetition,
                                std::move(detail)});
  }
}

DensityMatrix decohere_pair(DensityMatrix pair, double dt, const ensemble::EnsembleParams& left,
                            const ensemble::EnsembleParams& right) {
  if (dt <= 0.0) return pair;
  pair = ensemble::apply_memory_decoherence(pair, 0, dt, left.decoherence());
  return ensemble::apply_memory_decoherence(pair, 1, dt, right.decoherence());
}

std::size_t sample_index(const std::array<double, 4>& p, RngStream& rng) {
  double total = 0.0;
  for (double x : p) total += x;
  const double u = rng.uniform() * total;
  double acc = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    acc += p[k];
    if (u < acc) return k;
  }
  return 3;
}

}  // namespace

HeraldResult attempt_until_heralded(
    const std::string& link_id, double latency,
    const std::function<HeraldOutcome(RngStream&, double)>& trial, const Engine& engine,
    const RngStream& rng, double start) {
  if (!engine.config) throw ArgumentError("attempt_until_heralded: engine has no config");
  const ProtocolConfig& cfg = *engine.config;
  cfg.validate();
  for (std::uint64_t k = 0; k < cfg.max_trials; ++k) {
    const double t = start + static_cast<double>(k) * cfg.attempt_period;
    RngStream s = rng.split(k);
    HeraldOutcome out = trial(s, t);
    if (out.which_detector != Click::None && engine.trials) {
      engine.trials->push_back({t, link_id, engine.repetition, out.which_detector, k + 1});
    }
    if (out.which_detector == Click::D1 || out.which_detector == Click::D2) {
      DensityMatrix pair = *out.conditional_state;
      HeraldResult r{k + 1, std::move(out), std::move(pair), start, t + latency};
      log_event(engine, r.herald_time, link_id, EventKind::Herald,
                std::string("trials=") + std::to_string(r.trials) + " click=" +
                    channel::to_string(r.outcome.which_detector));
      return r;
    }
  }
  throw TimeoutError(link_id + ": no herald after " + std::to_string(cfg.max_trials) + " trials",
                     cfg.max_trials);
}

HeraldResult attempt_until_heralded(HeraldLink& link, const Engine& engine, const RngStream& rng,
                                    double start) {
  if (!link.left || !link.right) throw ProtocolStateError("attempt_until_heralded: missing node");
  auto trial = [&](RngStream& s, double t) {
    link.left->reset(t);
    link.right->reset(t);
    return channel::herald_entangle(*link.left, *link.right, link.station, s);
  };
  try {
    HeraldResult r = attempt_until_heralded(link.id, link.latency(), trial, engine, rng, start);
    const double write_time = r.herald_time - link.latency();
    r.pair = decohere_pair(std::move(r.pair), r.herald_time - write_time, link.left->params(),
                           link.right->params());
    const std::size_t l[] = {0}, rr[] = {1};
    link.left->set_spin_state(partial_trace(r.pair, l), r.herald_time);
    link.right->set_spin_state(partial_trace(r.pair, rr), r.herald_time);
    return r;
  } catch (const TimeoutError&) {
    const double t = start + static_cast<double>(engine.config->max_trials) *
                                 engine.config->attempt_period;
    link.left->reset(t);
    link.right->reset(t);
    throw;
  }
}

DensityMatrix align_pair(const DensityMatrix& pair, const HeraldOutcome& outcome,
                         double nominal_eta1) {
  if (pair.space().size() != 2) throw ArgumentError("align_pair: expected a two-memory state");
  const double phi =
      nominal_eta1 + (outcome.which_detector == Click::D2 ? M_PI : 0.0);
  const std::size_t r[] = {1};
  return apply_unitary(pair, fock::phase_shift(pair.space().dim(1), phi), r);
}

PreparedPairs prepare_pairs(HeraldLink& first, HeraldLink& second, const Engine& engine,
                            const RngStream& rng, double start) {
  if (first.id == second.id) throw ArgumentError("prepare_pairs: links need distinct ids");
  const ProtocolConfig& cfg = *engine.config;
  struct Slot {
    HeraldLink* link;
    std::optional<HeraldResult> result;
    std::uint64_t round = 0;
    std::uint64_t trials = 0;
    bool heralded = false;
  };
  Slot slots[2] = {{&first, std::nullopt}, {&second, std::nullopt}};
  EventQueue queue;
  auto tag = [](std::uint64_t round) { return "round=" + std::to_string(round); };
  auto launch = [&](std::size_t i, double t0) {
    Slot& s = slots[i];
    const RngStream stream = rng.split(2 * s.round + i);
    s.result = attempt_until_heralded(*s.link, engine, stream, t0);
    s.trials += s.result->trials;
    s.heralded = false;
    queue.push(s.result->herald_time, s.link->id, EventKind::Herald, tag(s.round),
               engine.repetition);
    if (std::isfinite(cfg.memory_budget)) {
      queue.push(s.result->herald_time + cfg.memory_budget, s.link->id, EventKind::Expire,
                 tag(s.round), engine.repetition);
    }
  };
  launch(0, start);
  launch(1, start);

  std::uint64_t restarts = 0;
  double done = start;
  while (!queue.empty()) {
    const Event e = queue.pop();
    const std::size_t i = e.node == first.id ? 0 : 1;
    Slot& s = slots[i];
    if (e.detail != tag(s.round)) continue;  // superseded by a restart
    if (e.kind == EventKind::Herald) {
      s.heralded = true;
      if (slots[1 - i].heralded) {
        done = e.time;
        break;
      }
      log_event(engine, e.time, s.link->id, EventKind::Store, tag(s.round));
    } else if (e.kind == EventKind::Expire) {
      if (++restarts > cfg.max_restarts) {
        throw MemoryExpiredError(s.link->id + ": stored pair expired " + std::to_string(restarts) +
                                     " times",
                                 cfg.memory_budget);
      }
      log_event(engine, e.time, s.link->id, EventKind::Expire, tag(s.round));
      ++s.round;
      log_event(engine, e.time, s.link->id, EventKind::Restart, tag(s.round));
      launch(i, e.time);
    }
  }

  auto finish = [&](Slot& s) {
    HeraldLink& link = *s.link;
    DensityMatrix pair = s.result->pair;
    if (cfg.feed_forward) pair = align_pair(pair, s.result->outcome, link.station.nominal().eta1);
    const double wait = done - s.result->herald_time;
    pair = decohere_pair(std::move(pair), wait, link.left->params(), link.right->params());
    if (wait > 0.0) {
      ensemble::decohere_memory(*link.left, wait);
      ensemble::decohere_memory(*link.right, wait);
    }
    return pair;
  };
  PreparedPairs out{finish(slots[0]),
                    finish(slots[1]),
                    slots[0].result->outcome,
                    slots[1].result->outcome,
                    start,
                    done,
                    slots[0].trials,
                    slots[1].trials,
                    restarts,
                    done - std::min(slots[0].result->herald_time, slots[1].result->herald_time)};
  log_event(engine, done, first.id + "+" + second.id, EventKind::Done,
            "restarts=" + std::to_string(restarts));
  return out;
}

NodeQubitState prepare_node_qubit(EnsemblePair& left, EnsemblePair& right,
                                  std::pair<channel::OpticalLink, channel::OpticalLink> links,
                                  std::pair<channel::Detector, channel::Detector> detectors,
                                  const Engine& engine, const RngStream& rng, double start) {
  for (const auto* n : {&left.upper, &left.lower, &right.upper, &right.lower}) {
    if (!n->idle()) throw ProtocolStateError("prepare_node_qubit: ensemble " + n->id() + " busy");
  }
  HeraldLink u = make_link(left.upper.id() + "~" + right.upper.id(), left.upper, right.upper,
                           links, detectors);
  HeraldLink l = make_link(left.lower.id() + "~" + right.lower.id(), left.lower, right.lower,
                           links, detectors);
  PreparedPairs pairs = prepare_pairs(u, l, engine, rng, start);
  DensityMatrix joint = tensor_product(pairs.first, pairs.second);
  return {std::move(joint), std::move(pairs)};
}

NodeQubitState prepare_node_qubit(EnsemblePair& left, EnsemblePair& right,
                                  const channel::HeraldStation& station, const Engine& engine,
                                  const RngStream& rng, double start) {
  for (const auto* n : {&left.upper, &left.lower, &right.upper, &right.lower}) {
    if (!n->idle()) throw ProtocolStateError("prepare_node_qubit: ensemble " + n->id() + " busy");
  }
  HeraldLink u{left.upper.id() + "~" + right.upper.id(), &left.upper, &right.upper, station};
  HeraldLink l{left.lower.id() + "~" + right.lower.id(), &left.lower, &right.lower, station};
  PreparedPairs pairs = prepare_pairs(u, l, engine, rng, start);
  DensityMatrix joint = tensor_product(pairs.first, pairs.second);
  return {std::move(joint), std::move(pairs)};
}

PolarizationReadout polarization_readout(const DensityMatrix& joint,
                                         const std::array<double, 4>& efficiencies) {
  if (joint.space().size() != 4) {
    throw ArgumentError("polarization_readout: expected (L_u, R_u, L_l, R_l)");
  }
  DensityMatrix rho = joint;
  for (std::size_t i = 0; i < 4; ++i) rho = ensemble::read_out(rho, i, efficiencies[i]);
  const HilbertSpace& sp = rho.space();
  // Polarization 0 (H) puts the photon in the upper mode, 1 (V) in the lower.
  auto index = [&](std::size_t pl, std::size_t pr) {
    const std::size_t d[] = {pl == 0 ? 1u : 0u, pr == 0 ? 1u : 0u, pl == 1 ? 1u : 0u,
                             pr == 1 ? 1u : 0u};
    return sp.index_of(d);
  };
  CMatrix m(4, 4);
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = 0; b < 4; ++b)
      m(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
          rho(index(a / 2, a % 2), index(b / 2, b % 2));
  const double p = m.trace().real();
  if (!(p > tolerances().degenerate)) {
    throw DegenerateMeasurementError("polarization_readout: no one-photon-per-node events");
  }
  return {DensityMatrix(HilbertSpace::uniform(2, 2, SubsystemKind::Field), m / p), p};
}

SwapDistribution swap_distribution(const DensityMatrix& ab, const DensityMatrix& bc, double eta_b,
                                   std::pair<channel::Detector, channel::Detector> detectors) {
  if (ab.space().size() != 2 || bc.space().size() != 2) {
    throw ProtocolStateError("entanglement_swap: both pairs must be present");
  }
  if (!(eta_b >= 0.0 && eta_b <= 1.0)) {
    throw ArgumentError("entanglement_swap: readout efficiency must lie in [0, 1]");
  }
  detectors.first.validate();
  detectors.second.validate();
  DensityMatrix rho = tensor_product(ab, bc);  // (A, B1, B2, C)
  rho = ensemble::read_out(rho, 1, eta_b);
  rho = ensemble::read_out(rho, 2, eta_b);
  const HilbertSpace& sp = rho.space();
  const std::size_t dc = sp.dim(3), d1 = sp.dim(1), d2 = sp.dim(2);
  const std::size_t big = 2 * std::max(d1, d2) - 1;
  const Eigen::Index db = static_cast<Eigen::Index>(d1 * d2);
  const Eigen::Index dk = static_cast<Eigen::Index>(sp.dim(0) * dc);

  // Beamsplitter columns for the occupied inputs; the padded output space
  // holds every photon-number sector exactly.
  const CMatrix u = channel::beamsplitter_matrix(big, M_PI / 4, 0.0);
  CMatrix v(static_cast<Eigen::Index>(big * big), db);
  for (std::size_t b1 = 0; b1 < d1; ++b1)
    for (std::size_t b2 = 0; b2 < d2; ++b2)
      v.col(static_cast<Eigen::Index>(b1 * d2 + b2)) = u.col(static_cast<Eigen::Index>(b1 * big + b2));

  // Same port assignment as the herald station: D2 on the B1 port. Both
  // effects are diagonal in the output Fock basis.
  const auto e2 = channel::threshold_effects(big, detectors.second);
  const auto e1 = channel::threshold_effects(big, detectors.first);
  const int clicks[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};  // (D1, D2)
  std::array<Eigen::VectorXcd, 4> weight;
  for (int k = 0; k < 4; ++k) {
    weight[k].resize(static_cast<Eigen::Index>(big * big));
    for (std::size_t m = 0; m < big; ++m)
      for (std::size_t n = 0; n < big; ++n)
        weight[k](static_cast<Eigen::Index>(m * big + n)) =
            e2[clicks[k][1]](m, m).real() * e1[clicks[k][0]](n, n).real();
  }

  // Unnormalized (A, C) blocks: sum over outputs w(m, n) <mn|V B V^dag|mn>.
  std::array<CMatrix, 4> y;
  for (auto& m : y) m = CMatrix::Zero(dk, dk);
  const CMatrix& m = rho.matrix();
  const CMatrix v_conj = v.conjugate();
  CMatrix block(db, db);
  const auto dce = static_cast<Eigen::Index>(dc);
  for (Eigen::Index r1 = 0; r1 < dk; ++r1) {
    const Eigen::Index a1 = r1 / dce, c1 = r1 % dce;
    for (Eigen::Index r2 = 0; r2 < dk; ++r2) {
      const Eigen::Index a2 = r2 / dce, c2 = r2 % dce;
      for (Eigen::Index b = 0; b < db; ++b)
        for (Eigen::Index b2 = 0; b2 < db; ++b2)
          block(b, b2) = m((a1 * db + b) * dce + c1, (a2 * db + b2) * dce + c2);
      const Eigen::VectorXcd diag = (v * block).cwiseProduct(v_conj).rowwise().sum();
      for (int k = 0; k < 4; ++k) y[k](r1, r2) = weight[k].dot(diag);
    }
  }

  SwapDistribution out;
  const std::size_t keep[] = {0, 3};
  const HilbertSpace kept = sp.select(keep);
  for (int k = 0; k < 4; ++k) out.probabilities[k] = std::max(0.0, y[k].trace().real());
  for (int k = 0; k < 2; ++k) {
    const double p = out.probabilities[1 + k];
    if (p <= tolerances().degenerate) continue;
    CMatrix c = y[1 + k] / p;
    out.conditional[k] = DensityMatrix(kept, 0.5 * (c + c.adjoint()));
  }
  return out;
}

DensityMatrix single_excitation_sector(const DensityMatrix& rho, double* weight) {
  if (rho.space().size() != 2) throw ArgumentError("single_excitation_sector: expected two modes");
  const HilbertSpace& sp = rho.space();
  const std::size_t d01[] = {0, 1}, d10[] = {1, 0};
  const std::size_t i01 = sp.index_of(d01), i10 = sp.index_of(d10);
  CMatrix m = CMatrix::Zero(4, 4);
  m(1, 1) = rho(i01, i01);
  m(1, 2) = rho(i01, i10);
  m(2, 1) = rho(i10, i01);
  m(2, 2) = rho(i10, i10);
  const double w = m.trace().real();
  if (weight) *weight = w;
  if (!(w > tolerances().degenerate)) {
    throw DegenerateMeasurementError("single_excitation_sector: no weight in the sector");
  }
  return DensityMatrix(HilbertSpace({2, 2}, {sp.kind(0), sp.kind(1)}), m / w);
}

SwapResult entanglement_swap(const DensityMatrix& ab, const DensityMatrix& bc, double eta_b,
                             std::pair<channel::Detector, channel::Detector> detectors,
                             RngStream& rng) {
  const SwapDistribution dist = swap_distribution(ab, bc, eta_b, std::move(detectors));
  SwapResult r;
  r.probabilities = dist.probabilities;
  r.success_probability = dist.probabilities[1] + dist.probabilities[2];
  const std::size_t k = sample_index(dist.probabilities, rng);
  r.which_detector = static_cast<Click>(k);
  if (k == 1 || k == 2) {
    r.success = true;
    r.state = dist.conditional[k - 1];
    double w = 0.0;
    try {
      r.effective = single_excitation_sector(*r.state, &w);
    } catch (const DegenerateMeasurementError&) {
    }
    r.effective_weight = w;
  }
  return r;
}

void CavityEmitter::validate() const {
  params.validate();
  if (!(emission_probability >= 0.0 && emission_probability <= 1.0)) {
    throw ArgumentError("CavityEmitter: emission probability must lie in [0, 1]");
  }
  if (!std::isfinite(phase)) throw ArgumentError("CavityEmitter: phase must be finite");
}

double CavityEmitter::emission_efficiency() const {
  if (mode == cavity::Mode::Ideal) return 1.0;
  const cavity::ControlPulse p =
      pulse ? *pulse
            : cavity::ControlPulse::flat_top_emission(params, 100.0 / params.g, 2001,
                                                      3.0 * params.g);
  return cavity::emission_envelope(p, params, dt > 0.0 ? dt : 0.01 / params.g).second;
}

DensityMatrix hybrid_source(const CavityEmitter& a, const ensemble::EnsembleParams& e) {
  a.validate();
  e.validate();
  const double q = a.emission_probability;
  CVector amp = CVector::Zero(4);
  amp(0) = std::sqrt(1.0 - q);                     // |0_A, 0>
  amp(3) = std::polar(std::sqrt(q), a.phase);      // |1_A, 1>
  const HilbertSpace sp({2, 2}, {SubsystemKind::Atom, SubsystemKind::Field});
  DensityMatrix atom(StateVector(sp, amp));
  atom = channel::attenuate(atom, 1, a.emission_efficiency(), 0.0);
  return tensor_product(atom, DensityMatrix(ensemble::write_state(e)));
}

channel::HeraldStation hybrid_station(const CavityEmitter& a, const ensemble::EnsembleParams& e,
                                      std::pair<channel::OpticalLink, channel::OpticalLink> links,
                                      std::pair<channel::Detector, channel::Detector> detectors) {
  return channel::HeraldStation(hybrid_source(a, e), std::move(links), std::move(detectors),
                                a.phase - e.write_phase);
}

channel::HeraldOutcome hybrid_entangle(const channel::HeraldStation& station,
                                       ensemble::EnsembleNode& e, RngStream& rng) {
  if (!e.idle()) throw ProtocolStateError("hybrid_entangle: ensemble must be idle");
  ensemble::write_pulse(e);
  HeraldOutcome out = station.sample(rng);
  if (out.conditional_state) {
    const std::size_t keep[] = {1};
    e.set_spin_state(partial_trace(*out.conditional_state, keep), e.last_touched());
  }
  return out;
}

ConnectivityDimension connectivity_dimension(std::uint64_t k_nodes, std::uint64_t n_qubits) {
  if (k_nodes < 1 || n_qubits < 1) {
    throw ArgumentError("connectivity_dimension: k and n must be >= 1");
  }
  constexpr std::uint64_t kMaxBits = 1ULL << 24;
  if (n_qubits > kMaxBits / k_nodes) {
    throw ArgumentError("connectivity_dimension: k n above 2^24 bits");
  }
  ConnectivityDimension d;
  d.classical = BigInt(k_nodes) << static_cast<unsigned>(n_qubits);
  d.quantum = BigInt(1) << static_cast<unsigned>(k_nodes * n_qubits);
  return d;
}

}  // namespace qnet::repeater
