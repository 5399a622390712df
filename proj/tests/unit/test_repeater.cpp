#include <doctest.h>

#include <algorithm>
#include <map>

#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

#include "qnet/errors.hpp"
#include "qnet/repeater/events.hpp"
#include "qnet/repeater/protocol.hpp"
#include "qnet/repeater/simulation.hpp"
#include "qnet/verify/verify.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace qnet;
using namespace qnet::repeater;
using namespace qnet::test;
using channel::Click;
using channel::Detector;
using channel::OpticalLink;

namespace {

ensemble::EnsembleParams dlcz(double p, std::size_t nmax = 2, double tau = INFINITY) {
  ensemble::EnsembleParams e;
  e.p_excite = p;
  e.n_max = nmax;
  e.memory_lifetime = tau;
  e.dephasing_lifetime = tau;
  return e;
}

OpticalLink fiber(double length, double db_per_km = 0.0) {
  OpticalLink l;
  l.length = length;
  l.attenuation = db_per_km;
  return l;
}

Detector detector(double eff = 1.0, double dark = 0.0) {
  Detector d;
  d.efficiency = eff;
  d.dark_count_prob = dark;
  return d;
}

std::pair<OpticalLink, OpticalLink> arms(double length = 0.0, double db = 0.0) {
  return {fiber(length, db), fiber(length, db)};
}

std::pair<Detector, Detector> ideal_detectors() { return {detector(), detector()}; }

double herald_p(const channel::HeraldStation& s) {
  return s.nominal().probabilities[1] + s.nominal().probabilities[2];
}

CMatrix bell_psi(double sign, double eta = 0.0) {
  CVector v = CVector::Zero(4);
  v(1) = M_SQRT1_2;
  v(2) = sign * std::polar(M_SQRT1_2, eta);
  return pure(v);
}

DensityMatrix two_memories(const CMatrix& m, std::size_t d = 2) {
  return DensityMatrix(HilbertSpace::uniform(2, d, SubsystemKind::CollectiveSpin), m);
}

}  // namespace

// ---- events -----------------------------------------------------------------

TEST_CASE("EventQueue pops in (time, node, kind, insertion) order") {
  EventQueue q;
  q.push(2.0, "b", EventKind::Herald, "x");
  q.push(1.0, "b", EventKind::Store, "first store");
  q.push(1.0, "a", EventKind::Expire);
  q.push(1.0, "b", EventKind::Herald);
  q.push(1.0, "b", EventKind::Store, "second store");
  std::vector<std::string> order;
  while (!q.empty()) {
    const Event e = q.pop();
    order.push_back(std::to_string(e.time) + e.node + to_string(e.kind) + e.detail);
  }
  CHECK(order == std::vector<std::string>{
                     "1.000000aexpire", "1.000000bherald", "1.000000bstorefirst store",
                     "1.000000bstoresecond store", "2.000000bheraldx"});
  CHECK_THROWS(q.pop());
}

TEST_CASE("EventQueue: random pushes come out sorted") {
  std::mt19937_64 gen(3);
  std::uniform_int_distribution<int> t(0, 5), node(0, 2), kind(0, 8);
  EventQueue q;
  for (int i = 0; i < 500; ++i) {
    q.push(t(gen) * 0.5, std::string(1, static_cast<char>('a' + node(gen))),
           static_cast<EventKind>(kind(gen)));
  }
  Event prev = q.pop();
  while (!q.empty()) {
    const Event e = q.pop();
    CHECK(std::tie(prev.time, prev.node, prev.kind, prev.seq) <
          std::tie(e.time, e.node, e.kind, e.seq));
    prev = e;
  }
}

// ---- attempt_until_heralded ------------------------------------------------------

TEST_CASE("attempt_until_heralded: certain herald takes one trial") {
  ProtocolConfig cfg;
  Engine engine{&cfg};
  auto trial = [](RngStream&, double) {
    channel::HeraldOutcome o;
    o.which_detector = Click::D1;
    o.conditional_state = two_memories(bell_psi(1.0));
    return o;
  };
  const auto r = attempt_until_heralded("stub", 2e-6, trial, engine, RngStream(1), 5.0);
  CHECK(r.trials == 1);
  CHECK(r.herald_time == doctest::Approx(5.0 + 2e-6));
}

TEST_CASE("attempt_until_heralded: zero probability times out after max_trials") {
  ProtocolConfig cfg;
  cfg.max_trials = 10;
  Engine engine{&cfg};
  ensemble::EnsembleNode l(dlcz(0.0), "l"), r(dlcz(0.0), "r");
  HeraldLink link = make_link("l~r", l, r, arms(), ideal_detectors());
  CHECK(herald_p(link.station) == 0.0);
  try {
    attempt_until_heralded(link, engine, RngStream(2));
    FAIL("no timeout");
  } catch (const TimeoutError& e) {
    CHECK(e.trials() == 10);
  }
  CHECK(l.idle());
  CHECK(r.idle());
}

TEST_CASE("attempt_until_heralded: mean trials matches 1/P") {
  ProtocolConfig cfg;
  Engine engine{&cfg};
  ensemble::EnsembleNode l(dlcz(0.05), "l"), r(dlcz(0.05), "r");
  HeraldLink link = make_link("l~r", l, r, arms(2000.0, 0.5), {detector(0.6), detector(0.6)});
  const double p = herald_p(link.station);
  const RngStream root(11);
  const int n = 10000;
  double sum = 0.0;
  for (int k = 0; k < n; ++k) {
    l.reset(0.0);
    r.reset(0.0);
    ensemble::EnsembleNode a(dlcz(0.05), "l"), b(dlcz(0.05), "r");
    link.left = &a;
    link.right = &b;
    sum += static_cast<double>(attempt_until_heralded(link, engine, root.split(k)).trials);
  }
  const double mean = sum / n;
  const double sigma = std::sqrt((1.0 - p) / (p * p) / n);
  MESSAGE("P = " << p << ", mean trials " << mean << " vs " << 1.0 / p);
  CHECK(std::abs(mean - 1.0 / p) <= 3.0 * sigma);
}

TEST_CASE("attempt_until_heralded: trials-to-herald is geometric") {
  struct Set {
    double p_excite, length, efficiency;
  };
  for (const Set s : {Set{0.01, 0.0, 1.0}, Set{0.05, 5000.0, 0.5}, Set{0.1, 1000.0, 0.9}}) {
    ProtocolConfig cfg;
    Engine engine{&cfg};
    const auto station =
        channel::dlcz_station(dlcz(s.p_excite), dlcz(s.p_excite), arms(s.length, 0.3),
                              {detector(s.efficiency), detector(s.efficiency)});
    const double p = herald_p(station);
    const RngStream root(97);
    std::vector<std::uint64_t> samples;
    for (int k = 0; k < 10000; ++k) {
      ensemble::EnsembleNode a(dlcz(s.p_excite), "a"), b(dlcz(s.p_excite), "b");
      HeraldLink link{"a~b", &a, &b, station};
      samples.push_back(attempt_until_heralded(link, engine, root.split(k)).trials);
    }
    const double pv = chi_square_geometric(samples, p);
    MESSAGE("P = " << p << ", chi-square p-value " << pv);
    CHECK(pv > 0.01);
  }
}

TEST_CASE("attempt_until_heralded: click records are ordered and the herald is last") {
  ProtocolConfig cfg;
  std::vector<TrialRecord> trials;
  EventLog log;
  Engine engine{&cfg, 4, &log, &trials};
  ensemble::EnsembleNode l(dlcz(0.02), "l"), r(dlcz(0.02), "r");
  HeraldLink link = make_link("l~r", l, r, arms(1000.0, 0.2), {detector(0.5, 0.01), detector(0.5, 0.01)});
  const auto res = attempt_until_heralded(link, engine, RngStream(5), 1.0);
  REQUIRE(!trials.empty());
  for (std::size_t k = 1; k < trials.size(); ++k) {
    CHECK(trials[k].time >= trials[k - 1].time);
    CHECK(trials[k].cumulative_trials > trials[k - 1].cumulative_trials);
  }
  for (const auto& t : trials) {
    CHECK(t.outcome != Click::None);
    CHECK(t.repetition == 4);
  }
  CHECK(trials.back().cumulative_trials == res.trials);
  CHECK((trials.back().outcome == Click::D1 || trials.back().outcome == Click::D2));
  CHECK(res.herald_time == doctest::Approx(1.0 + (res.trials - 1) * cfg.attempt_period +
                                           2.0 * 1000.0 / channel::kSpeedOfLight));
  REQUIRE(log.size() == 1);
  CHECK(log[0].kind == EventKind::Herald);
  CHECK(l.last_touched() == doctest::Approx(res.herald_time));
}

// ---- align_pair and prepare_pairs ----------------------------------------------

TEST_CASE("align_pair maps both heralds onto (|01> + |10>)/sqrt2") {
  for (double eta : {0.0, 0.4, -2.0}) {
    for (Click c : {Click::D1, Click::D2}) {
      channel::HeraldOutcome o;
      o.which_detector = c;
      const auto aligned =
          align_pair(two_memories(bell_psi(c == Click::D1 ? 1.0 : -1.0, eta)), o, eta);
      CHECK(max_abs_diff(aligned.matrix(), bell_psi(1.0)) <= 1e-12);
    }
  }
}

TEST_CASE("prepare_pairs: infinite memory gives the product of aligned heralded pairs") {
  ProtocolConfig cfg;
  const auto p = dlcz(0.05);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ensemble::EnsembleNode a(p, "a"), b(p, "b"), c(p, "c"), d(p, "d");
    HeraldLink u = make_link("u", a, b, arms(500.0, 0.2), ideal_detectors());
    HeraldLink l = make_link("l", c, d, arms(500.0, 0.2), ideal_detectors());
    Engine engine{&cfg};
    const PreparedPairs pp = prepare_pairs(u, l, engine, RngStream(seed));
    const std::vector<std::size_t> dims{3, 3};
    for (const auto* pr : {&pp.first, &pp.second}) {
      const auto& o = pr == &pp.first ? pp.outcome_first : pp.outcome_second;
      const auto& st = pr == &pp.first ? u.station : l.station;
      const CMatrix raw = st.nominal().conditional[o.which_detector == Click::D1 ? 0 : 1]->matrix();
      const double phi = st.nominal().eta1 + (o.which_detector == Click::D2 ? M_PI : 0.0);
      CHECK(max_abs_diff(pr->matrix(), phase_oracle(raw, 1, dims, phi)) <= 1e-12);
    }
    CHECK(pp.done >= pp.start);
    CHECK(pp.restarts == 0);
  }
}

TEST_CASE("prepare_pairs: storage decoherence matches the composed channel") {
  ProtocolConfig cfg;
  cfg.attempt_period = 1e-5;
  const double tau = 2e-4;
  const auto p = dlcz(0.03, 2, tau);
  const std::vector<std::size_t> dims{3, 3};
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    ensemble::EnsembleNode a(p, "a"), b(p, "b"), c(p, "c"), d(p, "d");
    HeraldLink u = make_link("u", a, b, arms(300.0, 0.2), ideal_detectors());
    HeraldLink l = make_link("l", c, d, arms(300.0, 0.2), ideal_detectors());
    Engine engine{&cfg};
    const PreparedPairs pp = prepare_pairs(u, l, engine, RngStream(100 + seed));
    const double latency = 2.0 * 300.0 / channel::kSpeedOfLight;
    const double t_u = pp.start + (pp.trials_first - 1) * cfg.attempt_period + latency;
    const double t_l = pp.start + (pp.trials_second - 1) * cfg.attempt_period + latency;
    CHECK(pp.done == doctest::Approx(std::max(t_u, t_l)).epsilon(1e-12));
    for (int k = 0; k < 2; ++k) {
      const auto& o = k == 0 ? pp.outcome_first : pp.outcome_second;
      const auto& st = k == 0 ? u.station : l.station;
      const double herald = k == 0 ? t_u : t_l;
      CMatrix m = st.nominal().conditional[o.which_detector == Click::D1 ? 0 : 1]->matrix();
      const double phi = st.nominal().eta1 + (o.which_detector == Click::D2 ? M_PI : 0.0);
      m = phase_oracle(m, 1, dims, phi);
      const double stored = latency + (pp.done - herald);
      m = decohere_oracle(m, 0, dims, stored, tau);
      m = decohere_oracle(m, 1, dims, stored, tau);
      CHECK(max_abs_diff((k == 0 ? pp.first : pp.second).matrix(), m) <= 1e-9);
      ++checked;
    }
    CHECK(c.spin_state().matrix().isApprox(
        partial_trace_oracle(pp.second.matrix(), dims, {0}), 1e-9));
  }
  CHECK(checked == 12);
}

TEST_CASE("prepare_pairs: preparation time is the max of two geometrics") {
  ProtocolConfig cfg;
  const auto p = dlcz(0.04);
  const auto station = channel::dlcz_station(p, p, arms(1000.0, 0.3), ideal_detectors());
  const double P = herald_p(station);
  const double latency = 2.0 * 1000.0 / channel::kSpeedOfLight;
  const double q = 1.0 - P;
  const double e_max = 2.0 / P - 1.0 / (1.0 - q * q);
  const double var_max = [&] {
    // E[M^2] for M = max of two iid geometrics: sum_k (2k - 1) P(M >= k).
    double s = 0.0;
    for (int k = 1; k < 100000; ++k) s += (2.0 * k - 1.0) * (1.0 - std::pow(1.0 - std::pow(q, k - 1), 2));
    return s - e_max * e_max;
  }();
  const double expected = (e_max - 1.0) * cfg.attempt_period + latency;
  CHECK(expected_max_completion(P, latency, P, latency, cfg.attempt_period) ==
        doctest::Approx(expected).epsilon(1e-10));
  const RngStream root(21);
  const int n = 10000;
  double sum = 0.0;
  for (int k = 0; k < n; ++k) {
    ensemble::EnsembleNode a(p, "a"), b(p, "b"), c(p, "c"), d(p, "d");
    HeraldLink u{"u", &a, &b, station}, l{"l", &c, &d, station};
    Engine engine{&cfg};
    sum += prepare_pairs(u, l, engine, root.split(k)).done;
  }
  const double sigma = std::sqrt(var_max / n) * cfg.attempt_period;
  MESSAGE("mean preparation " << sum / n << " s vs " << expected << " s");
  CHECK(std::abs(sum / n - expected) <= 3.0 * sigma);
}

TEST_CASE("expected_max_completion: unequal links against a double sum") {
  const double p1 = 0.3, p2 = 0.12, l1 = 3e-6, l2 = 7.5e-6, tau = 1e-6;
  double brute = 0.0;
  for (int n1 = 1; n1 < 400; ++n1) {
    for (int n2 = 1; n2 < 800; ++n2) {
      const double w = p1 * std::pow(1 - p1, n1 - 1) * p2 * std::pow(1 - p2, n2 - 1);
      brute += w * std::max((n1 - 1) * tau + l1, (n2 - 1) * tau + l2);
    }
  }
  CHECK(expected_max_completion(p1, l1, p2, l2, tau) == doctest::Approx(brute).epsilon(1e-10));
  CHECK(expected_max_completion(1.0, l1, 1.0, l2, tau) == doctest::Approx(l2));
}

TEST_CASE("prepare_pairs: expired pairs restart and the stored pair respects the budget") {
  ProtocolConfig cfg;
  cfg.memory_budget = 3e-6;
  const auto p = dlcz(0.02);
  std::uint64_t total_restarts = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ensemble::EnsembleNode a(p, "a"), b(p, "b"), c(p, "c"), d(p, "d");
    HeraldLink u = make_link("u", a, b, arms(), ideal_detectors());
    HeraldLink l = make_link("l", c, d, arms(), ideal_detectors());
    EventLog log;
    Engine engine{&cfg, 0, &log};
    const PreparedPairs pp = prepare_pairs(u, l, engine, RngStream(seed));
    total_restarts += pp.restarts;
    CHECK(pp.stored_for <= cfg.memory_budget + 1e-15);
    const auto expiries = std::count_if(log.begin(), log.end(),
                                        [](const Event& e) { return e.kind == EventKind::Expire; });
    CHECK(static_cast<std::uint64_t>(expiries) == pp.restarts);
  }
  CHECK(total_restarts > 0);

  cfg.max_restarts = 0;
  bool expired = false;
  for (std::uint64_t seed = 0; seed < 20 && !expired; ++seed) {
    ensemble::EnsembleNode a(p, "a"), b(p, "b"), c(p, "c"), d(p, "d");
    HeraldLink u = make_link("u", a, b, arms(), ideal_detectors());
    HeraldLink l = make_link("l", c, d, arms(), ideal_detectors());
    Engine engine{&cfg};
    try {
      prepare_pairs(u, l, engine, RngStream(seed));
    } catch (const MemoryExpiredError& e) {
      expired = true;
      CHECK(e.stored_for() == doctest::Approx(cfg.memory_budget));
    }
  }
  CHECK(expired);
}

// ---- polarization readout ----------------------------------------------------

DensityMatrix ideal_joint() {
  const CMatrix pair = bell_psi(1.0);
  return DensityMatrix(HilbertSpace::uniform(4, 2, SubsystemKind::CollectiveSpin),
                       Eigen::kroneckerProduct(pair, pair).eval());
}

TEST_CASE("polarization_readout: ideal pairs give a maximally entangled photon pair") {
  const auto ro = polarization_readout(ideal_joint(), {1.0, 1.0, 1.0, 1.0});
  CVector psi = CVector::Zero(4);
  psi(1) = psi(2) = M_SQRT1_2;  // |HV> + |VH>
  CHECK(max_abs_diff(ro.state.matrix(), pure(psi)) <= 1e-12);
  CHECK(ro.coincidence_probability == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(verify::concurrence(ro.state) == doctest::Approx(1.0).epsilon(1e-9));
  const double deg = M_PI / 180.0;
  CHECK(verify::chsh_value(ro.state, verify::chsh_settings(0.0, 45 * deg, 67.5 * deg, 22.5 * deg)) ==
        doctest::Approx(2.0 * std::sqrt(2.0)).epsilon(1e-9));
}

TEST_CASE("polarization_readout: coincidences scale as the product of efficiencies") {
  const double base = polarization_readout(ideal_joint(), {1, 1, 1, 1}).coincidence_probability;
  const auto ro = polarization_readout(ideal_joint(), {0.84, 0.84, 0.84, 0.84});
  CHECK(ro.coincidence_probability / base == doctest::Approx(0.84 * 0.84).epsilon(1e-12));
  CHECK(verify::concurrence(ro.state) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK_THROWS_AS(polarization_readout(ideal_joint(), {0.0, 1.0, 0.0, 1.0}),
                  DegenerateMeasurementError);
  CHECK_THROWS_AS(polarization_readout(two_memories(bell_psi(1.0)), {1, 1, 1, 1}), ArgumentError);
}

TEST_CASE("prepare_node_qubit then readout: small p gives concurrence near 1") {
  ProtocolConfig cfg;
  const auto p = dlcz(1e-3, 2);
  ensemble::EnsembleNode lu(p, "L.u"), ll(p, "L.l"), ru(p, "R.u"), rl(p, "R.l");
  EnsemblePair left{lu, ll}, right{ru, rl};
  Engine engine{&cfg};
  const auto nq = prepare_node_qubit(left, right, arms(100.0, 0.2), ideal_detectors(), engine,
                                     RngStream(8));
  const auto ro = polarization_readout(nq.joint, {1, 1, 1, 1});
  CHECK(verify::concurrence(ro.state) >= 0.998);
  ensemble::EnsembleNode busy(p, "busy");
  ensemble::write_pulse(busy);
  EnsemblePair bad{busy, ll};
  CHECK_THROWS_AS(prepare_node_qubit(bad, right, arms(), ideal_detectors(), engine, RngStream(1)),
                  ProtocolStateError);
}

TEST_CASE("polarization state decays under storage: CHSH threshold sweep") {
  // Pure dephasing of an ideal pair keeps S = 2 sqrt(1 + c^2) > 2; the
  // double excitations of a finite-p pair are what pull S below 2.
  const auto station = channel::dlcz_station(dlcz(0.05), dlcz(0.05), arms(), ideal_detectors());
  channel::HeraldOutcome d1;
  d1.which_detector = Click::D1;
  const CMatrix pair0 =
      align_pair(*station.nominal().conditional[0], d1, station.nominal().eta1).matrix();
  const std::vector<std::size_t> dims{3, 3};
  double s0 = 0.0, threshold = -1.0;
  for (double t = 0.0; t <= 3.0 + 1e-9; t += 0.05) {
    CMatrix pair = decohere_oracle(pair0, 0, dims, t, 1.0);
    pair = decohere_oracle(pair, 1, dims, t, 1.0);
    const DensityMatrix joint(HilbertSpace::uniform(4, 3, SubsystemKind::CollectiveSpin),
                              Eigen::kroneckerProduct(pair, pair).eval());
    const double s = verify::max_chsh_value(polarization_readout(joint, {1, 1, 1, 1}).state);
    if (t == 0.0) s0 = s;
    if (s <= 2.0 && threshold < 0.0) threshold = t;
  }
  MESSAGE("S(0) = " << s0 << ", S <= 2 from storage time " << threshold << " tau");
  CHECK(s0 > 2.0);
  CHECK(threshold > 0.0);
}

// ---- entanglement swap --------------------------------------------------------

TEST_CASE("entanglement_swap: perfect Bell pairs connect to a Bell pair") {
  const auto ab = two_memories(bell_psi(1.0));
  const auto dist = swap_distribution(ab, ab, 1.0, ideal_detectors());
  // Single click probability eta - eta^2 / 4 at eta = 1.
  CHECK(dist.probabilities[1] + dist.probabilities[2] == doctest::Approx(0.75).epsilon(1e-12));
  RngStream rng(4);
  int seen = 0;
  for (int k = 0; k < 40; ++k) {
    const auto r = entanglement_swap(ab, ab, 1.0, ideal_detectors(), rng);
    if (!r.success) continue;
    ++seen;
    const double sign = r.which_detector == Click::D1 ? 1.0 : -1.0;
    REQUIRE(r.effective.has_value());
    CHECK(fidelity(*r.effective, two_memories(bell_psi(sign))) >= 1.0 - 1e-9);
    // Full state: 1/4 Bell + 1/8 vacuum from bunched pairs, renormalized.
    CHECK(fidelity(*r.state, two_memories(bell_psi(sign))) == doctest::Approx(2.0 / 3.0));
    CHECK(r.effective_weight == doctest::Approx(2.0 / 3.0));
  }
  CHECK(seen > 20);
}

TEST_CASE("entanglement_swap: success rate matches eta - eta^2/4") {
  const double eta = 0.6;
  const auto ab = two_memories(bell_psi(1.0));
  const double expected = eta - eta * eta / 4.0;
  RngStream rng(77);
  const int n = 100000;
  int hits = 0;
  for (int k = 0; k < n; ++k) hits += entanglement_swap(ab, ab, eta, ideal_detectors(), rng).success;
  const double f = static_cast<double>(hits) / n;
  MESSAGE("swap success " << f << " vs " << expected);
  CHECK(std::abs(f - expected) <= 3.0 * std::sqrt(expected * (1 - expected) / n));
}

TEST_CASE("swap_distribution: finite p matches the dense composition") {
  struct Case {
    double p, eta, det_eff, dark;
  };
  for (const Case c : {Case{0.01, 1.0, 1.0, 0.0}, Case{0.05, 0.8, 0.9, 0.0},
                       Case{0.1, 0.5, 0.7, 0.01}}) {
    const auto station = channel::dlcz_station(dlcz(c.p), dlcz(c.p), arms(1000.0, 0.5),
                                               {detector(0.8), detector(0.8)});
    const auto ab = *station.nominal().conditional[0];
    const auto bc = *station.nominal().conditional[1];
    const std::pair dets{detector(c.det_eff, c.dark), detector(c.det_eff, c.dark)};
    const auto got = swap_distribution(ab, bc, c.eta, dets);
    const auto want = swap_oracle(ab.matrix(), bc.matrix(), 3, 3, 3, 3, c.eta, dets);
    for (int k = 0; k < 4; ++k) CHECK(got.probabilities[k] == doctest::Approx(want.p[k]).epsilon(1e-9));
    for (int k = 0; k < 2; ++k) {
      REQUIRE(got.conditional[k].has_value());
      CHECK(max_abs_diff(got.conditional[k]->matrix(), want.cond[k]) <= 1e-9);
    }
  }
}

TEST_CASE("entanglement_swap: connection never raises fidelity") {
  for (double v : {0.5, 0.7, 0.9, 1.0}) {
    for (double eta : {0.4, 0.8, 1.0}) {
      for (int noise = 0; noise < 2; ++noise) {
        CMatrix in;
        if (noise == 0) {
          in = v * bell_psi(1.0) + (1 - v) * CMatrix::Identity(4, 4) / 4.0;  // white noise
        } else {
          in = bell_psi(1.0);  // phase noise: coherence scaled by v
          in(1, 2) *= v;
          in(2, 1) *= v;
        }
        const double f_in = in(1, 1).real() * 0.5 + in(2, 2).real() * 0.5 + in(1, 2).real();
        const auto pair = two_memories(in);
        const auto dist = swap_distribution(pair, pair, eta, ideal_detectors());
        for (int k = 0; k < 2; ++k) {
          const double f_out =
              fidelity(*dist.conditional[k], two_memories(bell_psi(k == 0 ? 1.0 : -1.0)));
          CHECK(f_out <= f_in + 1e-12);
        }
      }
    }
  }
}

TEST_CASE("entanglement_swap: missing pairs") {
  const auto ab = two_memories(bell_psi(1.0));
  const DensityMatrix single(HilbertSpace::single(2, SubsystemKind::CollectiveSpin),
                             CMatrix::Identity(2, 2) / 2.0);
  RngStream rng(1);
  CHECK_THROWS_AS(entanglement_swap(single, ab, 1.0, ideal_detectors(), rng), ProtocolStateError);
  CHECK_THROWS_AS(entanglement_swap(ab, single, 1.0, ideal_detectors(), rng), ProtocolStateError);
}

// ---- hybrid -------------------------------------------------------------------

cavity::CavityParams slow_cavity() {
  cavity::CavityParams c;
  c.g = 1.0;
  c.kappa = 0.1;
  c.gamma = 0.01;
  return c;
}

TEST_CASE("hybrid_entangle: balanced arms give a Bell-type atom-ensemble pair") {
  CavityEmitter em{slow_cavity(), 1e-4};
  const auto e = dlcz(1e-4);
  const auto station = hybrid_station(em, e, arms(), ideal_detectors());
  RngStream rng(9);
  for (int heralds = 0; heralds < 3;) {
    ensemble::EnsembleNode node(e, "E");
    const auto out = hybrid_entangle(station, node, rng);
    if (!out.conditional_state) continue;
    ++heralds;
    CHECK(out.conditional_state->space().dim(0) == 2);
    CHECK(verify::concurrence(verify::qubit_block(*out.conditional_state)) >= 0.999);
    CHECK(!node.idle());
  }
  ensemble::EnsembleNode busy(e, "busy");
  ensemble::write_pulse(busy);
  CHECK_THROWS_AS(hybrid_entangle(station, busy, rng), ProtocolStateError);
}

TEST_CASE("hybrid_entangle: no ensemble amplitude heralds the atom alone") {
  CavityEmitter em{slow_cavity(), 0.01};
  const auto station = hybrid_station(em, dlcz(0.0), arms(), ideal_detectors());
  for (int k = 0; k < 2; ++k) {
    const auto& rho = *station.nominal().conditional[k];
    const std::size_t d10[] = {1, 0};
    const auto i = rho.space().index_of(d10);
    CHECK(rho(i, i).real() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(verify::concurrence(verify::qubit_block(rho)) <= 1e-9);
  }
}

TEST_CASE("hybrid_entangle: amplitude imbalance follows the projection algebra") {
  for (const auto [q, p] : {std::pair{0.01, 0.04}, std::pair{0.05, 0.005}, std::pair{0.02, 0.02}}) {
    CavityEmitter em{slow_cavity(), q, 0.3};
    auto e = dlcz(p, 1);
    e.write_phase = -0.4;
    const auto station = hybrid_station(em, e, arms(200.0, 0.1), ideal_detectors());
    // One-excitation amplitudes: sqrt(q) for the atom arm, sqrt((1-q) p) for the ensemble arm.
    const double r = std::sqrt(p * (1.0 - q) / q);
    for (int k = 0; k < 2; ++k) {
      const double sign = k == 0 ? 1.0 : -1.0;
      CVector v = CVector::Zero(4);
      v(1) = r / std::sqrt(1 + r * r);                                          // |0_A 1_E>
      v(2) = sign * std::polar(1.0 / std::sqrt(1 + r * r), station.nominal().eta1);  // |1_A 0_E>
      const auto block = single_excitation_sector(*station.nominal().conditional[k]);
      CHECK(max_abs_diff(block.matrix(), pure(v)) <= 1e-9);
    }
    CHECK(station.nominal().eta1 == doctest::Approx(0.3 + 0.4));
  }
}

TEST_CASE("CavityEmitter: integrated emission efficiency") {
  CavityEmitter em{slow_cavity(), 0.01};
  CHECK(em.emission_efficiency() == 1.0);
  em.mode = cavity::Mode::Integrated;
  em.dt = 0.01;
  const double eff = em.emission_efficiency();
  CHECK(eff > 0.95);
  CHECK(eff < 1.0);
  em.emission_probability = 1.5;
  CHECK_THROWS_AS(em.validate(), ArgumentError);
}

// ---- connectivity ---------------------------------------------------------------

TEST_CASE("connectivity_dimension") {
  auto d = connectivity_dimension(2, 3);
  CHECK(d.classical == 16);
  CHECK(d.quantum == 64);
  for (std::uint64_t n : {1, 7, 63, 130}) {
    d = connectivity_dimension(1, n);
    CHECK(d.classical == d.quantum);
    BigInt two_n = 1;
    for (std::uint64_t i = 0; i < n; ++i) two_n *= 2;
    CHECK(d.quantum == two_n);
  }
  d = connectivity_dimension(5, 10);
  CHECK(d.quantum.str() == "1125899906842624");
  CHECK(d.classical == 5120);
  CHECK_THROWS_AS(connectivity_dimension(0, 3), ArgumentError);
  CHECK_THROWS_AS(connectivity_dimension(3, 0), ArgumentError);
}

// ---- run_simulation ---------------------------------------------------------------

NodeSpec ensemble_node(const std::string& id, const ensemble::EnsembleParams& p) {
  NodeSpec n;
  n.id = id;
  n.kind = NodeKind::EnsemblePair;
  n.ensemble = p;
  return n;
}

NodeSpec station_node(const std::string& id) {
  NodeSpec n;
  n.id = id;
  n.kind = NodeKind::DetectorStation;
  return n;
}

NodeSpec cavity_node(const std::string& id) {
  NodeSpec n;
  n.id = id;
  n.kind = NodeKind::Cavity;
  n.cavity = slow_cavity();
  return n;
}

NetworkTopology chain(const ensemble::EnsembleParams& p, double length, double db) {
  NetworkTopology t;
  t.nodes = {ensemble_node("A", p), station_node("S1"), ensemble_node("B", p), station_node("S2"),
             ensemble_node("C", p)};
  t.links = {{"A", "S1", fiber(length, db)},
             {"B", "S1", fiber(length, db)},
             {"B", "S2", fiber(length, db)},
             {"C", "S2", fiber(length, db)}};
  return t;
}

bool same_report(const SimReport& a, const SimReport& b) {
  auto same_metrics = [](const std::vector<Metric>& x, const std::vector<Metric>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i].name != y[i].name || x[i].value != y[i].value) return false;
    }
    return true;
  };
  if (a.links.size() != b.links.size() || a.trials.size() != b.trials.size() ||
      a.events.size() != b.events.size() || a.stages.size() != b.stages.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.links.size(); ++i) {
    if (a.links[i].mean_trials != b.links[i].mean_trials ||
        a.links[i].mean_time != b.links[i].mean_time) {
      return false;
    }
  }
  for (std::size_t i = 0; i < a.trials.size(); ++i) {
    if (a.trials[i].time != b.trials[i].time || a.trials[i].outcome != b.trials[i].outcome) {
      return false;
    }
  }
  for (std::size_t i = 0; i < a.events.size(); ++i) {
    if (a.events[i].time != b.events[i].time || a.events[i].node != b.events[i].node ||
        a.events[i].kind != b.events[i].kind || a.events[i].detail != b.events[i].detail) {
      return false;
    }
  }
  for (std::size_t i = 0; i < a.stages.size(); ++i) {
    if (a.stages[i].simulated != b.stages[i].simulated) return false;
  }
  return same_metrics(a.metrics, b.metrics) && same_metrics(a.imperfections, b.imperfections);
}

TEST_CASE("NetworkTopology validation") {
  auto t = chain(dlcz(0.01), 100.0, 0.2);
  CHECK_NOTHROW(t.validate());
  auto dup = t;
  dup.nodes[2].id = "A";
  CHECK_THROWS_AS(dup.validate(), ConfigError);
  auto dangling = t;
  dangling.links[0].to = "nowhere";
  try {
    dangling.validate();
    FAIL("accepted");
  } catch (const ConfigError& e) {
    CHECK(e.path() == "topology.links[0].to");
  }
  auto lonely = t;
  lonely.links.pop_back();
  CHECK_THROWS_AS(lonely.validate(), ConfigError);
  CHECK(t.segment("A", "B").station == "S1");
  CHECK_THROWS_AS(t.segment("A", "C"), ConfigError);
}

TEST_CASE("run_simulation: herald-one-link equals direct calls with the same streams") {
  NetworkTopology t;
  const auto p = dlcz(0.03);
  t.nodes = {ensemble_node("L", p), station_node("S"), ensemble_node("R", p)};
  t.links = {{"L", "S", fiber(1000.0, 0.3)}, {"R", "S", fiber(1000.0, 0.3)}};
  ScenarioConfig cfg;
  cfg.repetitions = 200;
  cfg.protocol.rng_seed = 42;
  const SimReport rep = run_simulation(t, cfg);
  REQUIRE(rep.links.size() == 1);

  const RngStream root(42);
  const auto station = channel::dlcz_station(p, p, {fiber(1000.0, 0.3), fiber(1000.0, 0.3)},
                                             ideal_detectors());
  double sum = 0.0;
  std::vector<std::uint64_t> heralds;
  for (std::uint64_t r = 0; r < cfg.repetitions; ++r) {
    ensemble::EnsembleNode a(p, "L.u"), b(p, "R.u");
    HeraldLink link{"L~R", &a, &b, station};
    Engine engine{&cfg.protocol, r};
    const auto h = attempt_until_heralded(link, engine, root.split(r));
    sum += static_cast<double>(h.trials);
    heralds.push_back(h.trials);
  }
  CHECK(rep.links[0].mean_trials == sum / cfg.repetitions);
  std::vector<std::uint64_t> from_records;
  for (const auto& tr : rep.trials) {
    if (tr.outcome == Click::D1 || tr.outcome == Click::D2) from_records.push_back(tr.cumulative_trials);
  }
  CHECK(from_records == heralds);
  CHECK(rep.links[0].herald_probability == herald_p(station));
}

TEST_CASE("run_simulation: reruns and worker counts give identical reports") {
  const auto t = chain(dlcz(0.05), 500.0, 0.3);
  ScenarioConfig cfg;
  cfg.scenario = Scenario::SwapChain;
  cfg.repetitions = 60;
  cfg.protocol.rng_seed = 7;
  const SimReport a = run_simulation(t, cfg);
  const SimReport b = run_simulation(t, cfg);
  cfg.workers = 4;
  const SimReport c = run_simulation(t, cfg);
  CHECK(same_report(a, b));
  CHECK(same_report(a, c));
  cfg.protocol.rng_seed = 8;
  CHECK(!same_report(a, run_simulation(t, cfg)));
}

TEST_CASE("run_simulation: event logs are sorted within each repetition") {
  const auto t = chain(dlcz(0.05, 2, 1e-3), 500.0, 0.3);
  ScenarioConfig cfg;
  cfg.scenario = Scenario::SwapChain;
  cfg.repetitions = 30;
  cfg.protocol.memory_budget = 5e-6;
  const SimReport rep = run_simulation(t, cfg);
  REQUIRE(!rep.events.empty());
  for (std::size_t k = 1; k < rep.events.size(); ++k) {
    const auto& x = rep.events[k - 1];
    const auto& y = rep.events[k];
    if (x.repetition != y.repetition) {
      CHECK(y.repetition == x.repetition + 1);
      continue;
    }
    CHECK(std::tie(x.time, x.node, x.kind) <= std::tie(y.time, y.node, y.kind));
  }
}

TEST_CASE("run_simulation: swap-chain stages agree with the stage-product oracle") {
  const auto p = dlcz(0.05, 2);
  const auto t = chain(p, 2000.0, 0.5);
  ScenarioConfig cfg;
  cfg.scenario = Scenario::SwapChain;
  cfg.repetitions = 3000;
  cfg.workers = 0;
  cfg.record_events = false;
  const SimReport rep = run_simulation(t, cfg);
  REQUIRE(rep.stages.size() == 5);

  const auto station = channel::dlcz_station(p, p, {fiber(2000.0, 0.5), fiber(2000.0, 0.5)},
                                             ideal_detectors());
  const double P = herald_p(station);
  const double tau = cfg.protocol.attempt_period;
  const double latency = 2.0 * 2000.0 / channel::kSpeedOfLight;
  const double link_rate = 1.0 / ((1.0 / P - 1.0) * tau + latency);
  const double q = 1.0 - P;
  const double prep = (2.0 / P - 1.0 / (1.0 - q * q) - 1.0) * tau + latency;
  const auto by_name = [&](const std::string& s) {
    for (const auto& st : rep.stages) {
      if (st.stage == s) return st;
    }
    FAIL("missing stage " << s);
    return StageRate{};
  };
  const StageRate swap = by_name("swap");
  for (const auto& st : rep.stages) {
    MESSAGE(st.stage << ": simulated " << st.simulated << " +- " << st.std_error << ", analytic "
                     << st.analytic);
    CHECK(std::abs(st.simulated - st.analytic) <= 3.0 * st.std_error);
  }
  CHECK(by_name("link A.u~B.u").analytic == doctest::Approx(link_rate).epsilon(1e-12));
  CHECK(by_name("end-to-end").analytic == doctest::Approx(swap.analytic / prep).epsilon(1e-9));
  // The direct link spans all four arms: two 4 km arms carrying 2 dB each.
  const auto direct_station =
      channel::dlcz_station(p, p, {fiber(4000.0, 0.5), fiber(4000.0, 0.5)}, ideal_detectors());
  const double pd = herald_p(direct_station);
  const double direct_latency = 2.0 * 4000.0 / channel::kSpeedOfLight;
  CHECK(by_name("direct").analytic ==
        doctest::Approx(1.0 / ((1.0 / pd - 1.0) * tau + direct_latency)).epsilon(1e-9));
}

TEST_CASE("run_simulation: node-pair-bell reports entanglement and the budget") {
  NetworkTopology t;
  auto p = dlcz(0.01);
  p.readout_efficiency = 0.84;
  t.nodes = {ensemble_node("L", p), station_node("S"), ensemble_node("R", p)};
  t.links = {{"L", "S", fiber(100.0, 0.2)}, {"R", "S", fiber(100.0, 0.2)}};
  ScenarioConfig cfg;
  cfg.scenario = Scenario::NodePairBell;
  cfg.repetitions = 50;
  cfg.shots = 5000;
  cfg.reference = {{"concurrence", 0.9}};
  const SimReport rep = run_simulation(t, cfg);
  std::map<std::string, double> m;
  for (const auto& x : rep.metrics) m[x.name] = x.value;
  CHECK(m.at("concurrence") > 0.9);
  CHECK(m.at("chsh") > 2.0);
  CHECK(m.at("chsh_max") >= m.at("chsh") - 1e-12);
  CHECK(m.at("tomography_fidelity") > 0.95);
  CHECK(rep.links.size() == 2);
  CHECK(rep.reference.size() == 1);
  bool has_eff = false;
  for (const auto& x : rep.imperfections) has_eff |= x.name == "L.readout_efficiency" && x.value == 0.84;
  CHECK(has_eff);
}

TEST_CASE("run_simulation: hybrid and cavity-transfer scenarios") {
  NetworkTopology t;
  t.nodes = {cavity_node("A"), station_node("S"), ensemble_node("E", dlcz(0.01)), cavity_node("X")};
  t.links = {{"A", "S", fiber(100.0, 0.2)}, {"E", "S", fiber(100.0, 0.2)},
             {"A", "X", fiber(1000.0, 0.2)}};
  ScenarioConfig cfg;
  cfg.scenario = Scenario::Hybrid;
  cfg.repetitions = 20;
  const SimReport h = run_simulation(t, cfg);
  std::map<std::string, double> m;
  for (const auto& x : h.metrics) m[x.name] = x.value;
  CHECK(m.at("mean_concurrence") > 0.95);

  cfg.scenario = Scenario::CavityTransfer;
  cfg.path = {"A", "X"};
  const SimReport c = run_simulation(t, cfg);
  m.clear();
  for (const auto& x : c.metrics) m[x.name] = x.value;
  // Input (|b> + |a>)/sqrt2; the no-loss branch is (|0> + sqrt(T)|1>)/norm.
  const double tr = fiber(1000.0, 0.2).transmissivity();
  const double f = std::pow(1.0 + std::sqrt(tr), 2) / (2.0 * (1.0 + tr));
  CHECK(m.at("fidelity") == doctest::Approx(f).epsilon(1e-9));
  CHECK(m.at("success_probability") == doctest::Approx(0.5 * (1.0 + tr)).epsilon(1e-9));
  CHECK(c.links[0].mean_trials >= 1.0);
}

TEST_CASE("run_simulation: scenario and topology mismatch") {
  NetworkTopology t;
  t.nodes = {cavity_node("A"), cavity_node("B")};
  t.links = {{"A", "B", fiber(10.0)}};
  ScenarioConfig cfg;
  CHECK_THROWS_AS(run_simulation(t, cfg), ConfigError);
  cfg.scenario = Scenario::CavityTransfer;
  cfg.path = {"A"};
  CHECK_THROWS_AS(run_simulation(t, cfg), ConfigError);
  CHECK_THROWS_AS(scenario_from_string("herald"), ConfigError);
  CHECK(scenario_from_string("swap-chain") == Scenario::SwapChain);
}
