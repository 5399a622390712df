#include <doctest.h>

#include <random>

#include "qnet/cavity/cavity.hpp"
#include "qnet/errors.hpp"
#include "qnet/verify/verify.hpp"
#include "test_support.hpp"

using namespace qnet;
using namespace qnet::cavity;
using namespace qnet::test;

namespace {

CavityParams rates(double g, double kappa, double gamma) {
  CavityParams p;
  p.g = g;
  p.kappa = kappa;
  p.gamma = gamma;
  return p;
}

ControlPulse zero_pulse(double duration) {
  return ControlPulse(0.0, duration, {0.0, 0.0});
}

// Basis index of |level, n> in the atom x cavity layout.
Eigen::Index ac(const CavityParams& p, std::size_t level, std::size_t n) {
  return static_cast<Eigen::Index>(level * (p.n_max + 1) + n);
}

DensityMatrix ac_state(const CavityParams& p, std::size_t level, std::size_t n) {
  const HilbertSpace sp = atom_cavity_space(p);
  CVector v = CVector::Zero(static_cast<Eigen::Index>(sp.total_dimension()));
  v(ac(p, level, n)) = 1.0;
  return DensityMatrix(StateVector(sp, v));
}

StateVector qubit(SubsystemKind kind, cplx c0, cplx c1) {
  CVector v(2);
  v << c0, c1;
  return StateVector(HilbertSpace::single(2, kind), v / v.norm());
}

double photon_number(const CavityParams& p, const DensityMatrix& rho) {
  double n = 0.0;
  for (std::size_t level = 0; level < 3; ++level)
    for (std::size_t k = 0; k <= p.n_max; ++k)
      n += static_cast<double>(k) * rho(ac(p, level, k), ac(p, level, k)).real();
  return n;
}

const CavityParams kSlow = rates(1.0, 0.1, 0.01);

}  // namespace

TEST_CASE("coupling_g: unit-arithmetic oracle and scalings") {
  // Constant-by-constant arithmetic, written out independently.
  const double hbar = 1.054571817e-34, eps0 = 8.8541878128e-12, c = 299792458.0;
  const double mu = 2.69e-29, lambda = 852e-9, v = 1e-15;
  const double omega = 2.0 * 3.14159265358979323846 * c / lambda;
  const double oracle = std::sqrt(mu * mu * omega / (2.0 * hbar * eps0 * v));
  CHECK(coupling_g(mu, omega, v, 1.0) == doctest::Approx(oracle).epsilon(1e-9));
  CHECK(coupling_g(mu, omega, v, 0.0) == 0.0);
  CHECK(coupling_g(mu, omega, 4.0 * v, 1.0) ==
        doctest::Approx(0.5 * coupling_g(mu, omega, v, 1.0)).epsilon(1e-12));
  CHECK_THROWS_AS(coupling_g(mu, omega, 0.0, 1.0), ArgumentError);
  CHECK_THROWS_AS(coupling_g(mu, omega, -1.0, 1.0), ArgumentError);

  const CavityParams p = CavityParams::from_physical(mu, omega, omega, v, 1.0, 1e6, 1e6);
  CHECK(p.g == doctest::Approx(oracle).epsilon(1e-6));
  CHECK_NOTHROW(p.validate());
  CavityParams inflated = p;
  inflated.g *= 1.01;
  CHECK_THROWS_AS(inflated.validate(), ArgumentError);
}

TEST_CASE("critical numbers") {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0.01, 10.0);
  for (int i = 0; i < 50; ++i) {
    const CavityParams p = rates(u(gen), u(gen), u(gen));
    const auto cn = critical_numbers(p);
    CHECK(cn.N0 / cn.n0 == doctest::Approx(p.kappa / p.gamma).epsilon(1e-12));
  }
  const auto big = critical_numbers(rates(1e12, 1.0, 1.0));
  CHECK(big.n0 < 1e-20);
  CHECK(big.N0 < 1e-20);

  const Preset& toroid = preset("microtoroid");
  const auto cn = critical_numbers(toroid.params);
  CHECK(matches_order_of_magnitude(cn, toroid.target));
  CHECK(toroid.params.strong_coupling());
  CHECK_FALSE(matches_order_of_magnitude({1e-3, 1e-6}, toroid.target));
  CHECK_THROWS_AS(preset("nope"), ArgumentError);
}

TEST_CASE("dark_state_angle: examples") {
  const auto [c0, s0] = dark_state_angle(0.0, 1.0);
  CHECK(c0 == 1.0);
  CHECK(s0 == 0.0);
  const auto [c1, s1] = dark_state_angle(2.0, 2.0);
  CHECK(c1 * c1 == doctest::Approx(0.5).epsilon(1e-14));
  const auto [c2, s2] = dark_state_angle(10.0, 1.0);
  CHECK(s2 >= 0.995);
  CHECK_THROWS_AS(dark_state_angle(1.0, 0.0), ArgumentError);
}

TEST_CASE("dark_state_angle: property, null vector of the Lambda Hamiltonian") {
  std::mt19937_64 gen(17);
  std::uniform_real_distribution<double> u(0.0, 20.0);
  for (int i = 0; i < 200; ++i) {
    const double g = 0.01 + u(gen), om = u(gen);
    const auto [c, s] = dark_state_angle(om, g);
    CHECK(std::abs(c * c + s * s - 1.0) <= 1e-12);
    // H on span{|a,0>, |b,1>, |e,0>} in that order.
    CMatrix h = CMatrix::Zero(3, 3);
    h(2, 1) = h(1, 2) = g;
    h(2, 0) = h(0, 2) = -om;
    CVector d(3);
    d << c, s, 0.0;
    CHECK((h * d).norm() <= 1e-12 * std::max(1.0, g + om));
  }
}

TEST_CASE("evolve_lindblad: examples") {
  SUBCASE("dark initial state with no drive stays put") {
    const CavityParams p = rates(1.0, 0.2, 0.05);
    const DensityMatrix rho0 = ac_state(p, kLevelA, 0);
    const auto tr = evolve_lindblad(rho0, p, zero_pulse(20.0), {0.0, 20.0}, 0.01, 100);
    for (const auto& s : tr.states) CHECK(max_abs_diff(s.matrix(), rho0.matrix()) <= 1e-12);
  }
  SUBCASE("empty cavity photon decays as exp(-2 kappa t)") {
    // Atom in |a> with no drive is decoupled from the mode.
    const CavityParams p = rates(1.0, 0.3, 0.02);
    const auto tr =
        evolve_lindblad(ac_state(p, kLevelA, 1), p, zero_pulse(10.0), {0.0, 10.0}, 0.005, 20);
    REQUIRE(tr.times.size() > 10);
    for (std::size_t k = 0; k < tr.times.size(); ++k) {
      CHECK(std::abs(photon_number(p, tr.states[k]) - std::exp(-2.0 * 0.3 * tr.times[k])) <=
            1e-6);
    }
  }
  SUBCASE("vacuum Rabi oscillation at 2g") {
    const CavityParams p = rates(1.3, 0.0, 0.0);
    const auto tr =
        evolve_lindblad(ac_state(p, kLevelB, 1), p, zero_pulse(10.0), {0.0, 10.0}, 0.005, 10);
    for (std::size_t k = 0; k < tr.times.size(); ++k) {
      // Two-level oracle: P(|b,1>) = cos^2(g t) = (1 + cos(2 g t)) / 2.
      const double oracle = 0.5 * (1.0 + std::cos(2.0 * 1.3 * tr.times[k]));
      CHECK(std::abs(tr.states[k](ac(p, kLevelB, 1), ac(p, kLevelB, 1)).real() - oracle) <= 1e-6);
    }
  }
  SUBCASE("step too large") {
    const CavityParams p = rates(1.0, 0.1, 0.01);
    CHECK_THROWS_AS(evolve_lindblad(ac_state(p, kLevelA, 0), p, zero_pulse(1.0), {0.0, 1.0}, 0.2),
                    StabilityError);
    const ControlPulse strong(0.0, 1.0, {5.0, 5.0});
    CHECK_THROWS_AS(evolve_lindblad(ac_state(p, kLevelA, 0), p, strong, {0.0, 1.0}, 0.05),
                    StabilityError);
  }
  SUBCASE("wrong space") {
    const CavityParams p = rates(1.0, 0.1, 0.01);
    const DensityMatrix bad(qubit(SubsystemKind::Atom, 1.0, 0.0));
    CHECK_THROWS_AS(evolve_lindblad(bad, p, zero_pulse(1.0), {0.0, 1.0}, 0.01), ArgumentError);
  }
}

TEST_CASE("evolve_lindblad: trace, Hermiticity and step convergence") {
  std::mt19937_64 gen(23);
  struct Case {
    CavityParams p;
    double peak;
    double detuning;
  };
  const std::vector<Case> cases{{rates(1.0, 0.1, 0.01), 2.0, 0.0},
                                {rates(1.0, 1.0, 0.5), 0.5, 0.3},
                                {rates(2.0, 0.05, 0.2), 4.0, -0.5}};
  for (const auto& c : cases) {
    CavityParams p = c.p;
    p.omega_c = c.detuning;
    const HilbertSpace sp = atom_cavity_space(p);
    const DensityMatrix rho0(sp, random_density(gen, static_cast<Eigen::Index>(sp.total_dimension())));
    const auto pulse = ControlPulse::ramp(ControlPulse::Shape::RampOn, c.peak, 8.0, 101);
    const double dt = 0.01;
    const auto tr = evolve_lindblad(rho0, p, pulse, {0.0, 8.0}, dt, 50);
    for (const auto& s : tr.states) {
      CHECK(std::abs(s.matrix().trace().real() - 1.0) <= 1e-7);
      CHECK(max_abs_diff(s.matrix(), s.matrix().adjoint()) <= 1e-9);
    }
    const auto half = evolve_lindblad(rho0, p, pulse, {0.0, 8.0}, dt / 2, 100);
    CHECK(fidelity(tr.states.back(), half.states.back()) >= 1.0 - 1e-6);
  }
}

TEST_CASE("evolve_lindblad: emitted-photon bin agrees with the output-field integral") {
  const CavityParams p = rates(1.0, 0.2, 0.02);
  const auto pulse = ControlPulse::ramp(ControlPulse::Shape::RampOn, 2.0, 30.0, 301);
  const HilbertSpace sp = atom_cavity_space(p, true);
  CVector v = CVector::Zero(static_cast<Eigen::Index>(sp.total_dimension()));
  v(0) = 1.0;  // |a, 0, 0>
  const auto tr = evolve_lindblad(DensityMatrix(StateVector(sp, v)), p, pulse, {0.0, 30.0}, 0.01,
                                  100000);
  const DensityMatrix bin = partial_trace(tr.states.back(), std::vector<std::size_t>{2});
  const double emitted = 1.0 - bin(0, 0).real();
  const auto [env, eff] = emission_envelope(pulse, p, 0.01);
  CHECK(eff == doctest::Approx(emitted).epsilon(1e-4));
  CHECK(emitted > 0.5);
}

TEST_CASE("adiabatic_map: ideal examples") {
  const auto on = ControlPulse::ramp(ControlPulse::Shape::RampOn, 10.0, 100.0, 101);
  const auto off = on.time_reversed();
  const cplx c0(0.6, 0.0), c1(0.0, 0.8);
  const auto mem = qubit(SubsystemKind::Atom, c0, c1);
  const auto r = adiabatic_map(Direction::Emit, on, kSlow, mem);
  CHECK(r.success_probability == 1.0);
  CHECK(r.output.space().kind(0) == SubsystemKind::Field);
  CHECK(max_abs_diff(r.output.matrix(), pure(mem.amplitudes())) <= 1e-14);

  std::mt19937_64 gen(3);
  for (int i = 0; i < 20; ++i) {
    const CVector f = random_vector(gen, 2);
    const StateVector field(HilbertSpace::single(2, SubsystemKind::Field), f);
    const auto stored = adiabatic_map(Direction::Absorb, off, kSlow, field);
    const auto back = adiabatic_map(Direction::Emit, on, kSlow, stored.output);
    CHECK(max_abs_diff(back.output.matrix(), pure(f)) <= 1e-10);
  }
}

TEST_CASE("adiabatic_map: errors") {
  const auto on = ControlPulse::ramp(ControlPulse::Shape::RampOn, 10.0, 100.0, 101);
  const auto mem = qubit(SubsystemKind::Atom, 1.0, 1.0);
  CHECK_THROWS_AS(adiabatic_map(Direction::Absorb, on, kSlow, mem), ArgumentError);
  CHECK_THROWS_AS(adiabatic_map(Direction::Emit, on.time_reversed(), kSlow, mem), ArgumentError);
  const ControlPulse bump(0.0, 1.0, {0.0, 1.0, 0.0});
  CHECK_THROWS_AS(adiabatic_map(Direction::Emit, bump, kSlow, mem), ArgumentError);
  CHECK_THROWS_AS(ControlPulse(0.0, 0.0, {0.0, 1.0}), ArgumentError);
  CHECK_THROWS_AS(ControlPulse(0.0, 1.0, {0.0, cplx(NAN, 0.0)}), ArgumentError);
}

TEST_CASE("adiabatic_map: integrated slow ramp keeps |e> nearly empty") {
  const auto on = ControlPulse::flat_top_emission(kSlow, 100.0, 2001, 3.0);
  CHECK(on.monotone(true));
  const auto mem = qubit(SubsystemKind::Atom, 0.0, 1.0);
  MapOptions opt;
  opt.mode = Mode::Integrated;
  opt.dt = 0.01;
  const auto r = adiabatic_map(Direction::Emit, on, kSlow, mem, opt);
  opt.dt = 0.005;
  const auto half = adiabatic_map(Direction::Emit, on, kSlow, mem, opt);
  MESSAGE("max |e> population " << r.max_excited_population << ", efficiency " << r.efficiency);
  CHECK(r.max_excited_population <= 1e-3);
  CHECK(half.max_excited_population <= 1e-3);
  CHECK(std::abs(r.max_excited_population - half.max_excited_population) <= 1e-6);
  CHECK(r.efficiency > 0.95);
  REQUIRE(r.envelope.has_value());
}

TEST_CASE("adiabatic_map: gamma loss falls as the pulse lengthens") {
  const auto mem = qubit(SubsystemKind::Atom, 0.0, 1.0);
  MapOptions opt;
  opt.mode = Mode::Integrated;
  opt.dt = 0.01;
  double previous = 1.0;
  for (double duration : {10.0, 30.0, 100.0}) {
    const auto on = ControlPulse::flat_top_emission(kSlow, duration, 1001, 3.0);
    const auto r = adiabatic_map(Direction::Emit, on, kSlow, mem, opt);
    CHECK(r.gamma_loss > 0.0);
    CHECK(r.gamma_loss < previous);
    previous = r.gamma_loss;
  }
}

TEST_CASE("adiabatic_map: integrated absorb then emit") {
  const auto on = ControlPulse::flat_top_emission(kSlow, 100.0, 2001, 3.0);
  const auto off = on.time_reversed();
  const auto field = qubit(SubsystemKind::Field, M_SQRT1_2, cplx(0.0, M_SQRT1_2));
  MapOptions opt;
  opt.mode = Mode::Integrated;
  opt.dt = 0.01;
  const auto stored = adiabatic_map(Direction::Absorb, off, kSlow, field, opt);
  CHECK(stored.efficiency > 0.95);
  // The stored coherence keeps the phase of the field coherence.
  CHECK(std::abs(std::arg(stored.output(0, 1)) - std::arg(cplx(0.0, -0.5))) <= 1e-3);
  const auto back = adiabatic_map(Direction::Emit, on, kSlow, stored.output, opt);
  CHECK(fidelity(back.output, field) >= 0.999);
}

TEST_CASE("transfer_node_to_node: ideal mode") {
  const auto on = ControlPulse::ramp(ControlPulse::Shape::RampOn, 10.0, 100.0, 101);
  const std::pair pulses{on, on.time_reversed()};
  channel::OpticalLink lossless;
  lossless.length = 1000.0;
  lossless.attenuation = 0.0;

  SUBCASE("lossless gives fidelity 1") {
    const auto mem = qubit(SubsystemKind::Atom, 0.6, cplx(0.0, 0.8));
    const auto r = transfer_node_to_node(mem, pulses, lossless, kSlow, kSlow, Mode::Ideal);
    CHECK(r.fidelity == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.success_probability == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("loss T: success T for |a>, conditional fidelity 1") {
    channel::OpticalLink link;
    link.length = 10000.0;
    link.attenuation = 0.3;
    const double t = link.transmissivity();
    const auto r = transfer_node_to_node(qubit(SubsystemKind::Atom, 0.0, 1.0), pulses, link, kSlow,
                                         kSlow, Mode::Ideal);
    CHECK(r.success_probability == doctest::Approx(t).epsilon(1e-12));
    CHECK(r.fidelity == doctest::Approx(1.0).epsilon(1e-12));
    const auto sup = transfer_node_to_node(qubit(SubsystemKind::Atom, 1.0, 1.0), pulses, link,
                                           kSlow, kSlow, Mode::Ideal);
    CHECK(sup.success_probability == doctest::Approx(0.5 * (1.0 + t)).epsilon(1e-12));
    CHECK(sup.fidelity < 1.0);
  }
  SUBCASE("pulses must be a time-reversed pair") {
    const auto mem = qubit(SubsystemKind::Atom, 1.0, 1.0);
    CHECK_THROWS_AS(transfer_node_to_node(mem, {on, on}, lossless, kSlow, kSlow, Mode::Ideal),
                    ArgumentError);
  }
}

TEST_CASE("transfer_node_to_node: ideal lossless process is the identity") {
  const auto on = ControlPulse::ramp(ControlPulse::Shape::RampOn, 10.0, 100.0, 101);
  channel::OpticalLink lossless;
  lossless.length = 500.0;
  lossless.attenuation = 0.0;
  auto run = [&](cplx c0, cplx c1) {
    return transfer_node_to_node(qubit(SubsystemKind::Atom, c0, c1), {on, on.time_reversed()},
                                 lossless, kSlow, kSlow, Mode::Ideal)
        .memory_b.matrix();
  };
  // E(|i><j|) from the images of |0>, |1>, |+>, |+i>.
  const CMatrix e00 = run(1.0, 0.0), e11 = run(0.0, 1.0), ep = run(1.0, 1.0),
                ei = run(1.0, cplx(0.0, 1.0));
  const cplx i(0.0, 1.0);
  const CMatrix e01 = ep + i * ei - 0.5 * (1.0 + i) * (e00 + e11);
  const CMatrix e10 = e01.adjoint();
  // Choi matrix sum |i><j| (x) E(|i><j|) / 2 against the maximally entangled state.
  CMatrix choi = CMatrix::Zero(4, 4);
  const CMatrix* blocks[2][2] = {{&e00, &e01}, {&e10, &e11}};
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) choi.block(2 * a, 2 * b, 2, 2) = *blocks[a][b] / 2.0;
  CVector phi = CVector::Zero(4);
  phi(0) = phi(3) = M_SQRT1_2;
  const double process_fidelity = (phi.adjoint() * choi * phi)(0, 0).real();
  CHECK(std::abs(process_fidelity - 1.0) <= 1e-10);
}

TEST_CASE("transfer_node_to_node: integrated mode through a lossy link") {
  const auto on = ControlPulse::flat_top_emission(kSlow, 100.0, 2001, 3.0);
  channel::OpticalLink link;
  link.length = 1000.0;
  link.attenuation = 0.2;
  link.extra_phase = 0.7;
  const auto mem = qubit(SubsystemKind::Atom, 1.0, cplx(0.0, 1.0));
  const auto r = transfer_node_to_node(mem, {on, on.time_reversed()}, link, kSlow, kSlow,
                                       Mode::Integrated, 0.01);
  MESSAGE("integrated transfer: fidelity " << r.fidelity << ", success " << r.success_probability);
  CHECK(r.fidelity > 0.98);
  CHECK(r.unconditional_fidelity < r.fidelity);
  CHECK(r.success_probability < 0.5 * (1.0 + link.transmissivity()));
}

TEST_CASE("coherent_storage_roundtrip: nbar 1.1 regression scenario") {
  const auto on = ControlPulse::flat_top_emission(kSlow, 100.0, 2001, 3.0);
  const auto r = coherent_storage_roundtrip(1.1, on.time_reversed(), on, kSlow, 0.01);
  MESSAGE("stored-then-retrieved overlap " << r.overlap << ", storage efficiency "
                                           << r.storage_efficiency);
  CHECK(r.overlap > 0.0);
  CHECK(r.overlap <= 1.0 + 1e-12);
  CHECK(r.storage_efficiency > 0.0);
  CHECK(r.storage_efficiency < 1.0);
  CHECK(r.input_field.space().dim(0) == 3);
  CHECK_THROWS_AS(coherent_storage_roundtrip(-1.0, on.time_reversed(), on, kSlow),
                  ArgumentError);
}

TEST_CASE("polarization_pair_sequence: examples") {
  SUBCASE("ideal sequence: maximally entangled photons, atom back in |a>") {
    const auto r = polarization_pair_sequence();
    CHECK(verify::concurrence(r.conditional_pair) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.coincidence_probability == doctest::Approx(1.0).epsilon(1e-12));
    const DensityMatrix atom = partial_trace(r.state, std::vector<std::size_t>{0});
    CHECK(atom(0, 0).real() == doctest::Approx(1.0).epsilon(1e-12));
    const CMatrix sq = atom.matrix() * atom.matrix();
    CHECK(sq.trace().real() == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("second pulse omitted: atom-photon entangled") {
    const auto r = polarization_pair_sequence(false);
    CHECK(verify::concurrence(r.conditional_pair) == doctest::Approx(1.0).epsilon(1e-12));
    const DensityMatrix atom = partial_trace(r.state, std::vector<std::size_t>{0});
    CHECK(atom(0, 0).real() == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("lossy photons: coincidence T^2, conditional concurrence 1") {
    for (double t : {0.9, 0.5, 0.1}) {
      const auto r = polarization_pair_sequence(true, t);
      CHECK(r.coincidence_probability == doctest::Approx(t * t).epsilon(1e-12));
      CHECK(verify::concurrence(r.conditional_pair) == doctest::Approx(1.0).epsilon(1e-10));
    }
  }
  SUBCASE("loss Kraus operators are complete") {
    const auto k = polarization_loss_kraus(0.37);
    CMatrix sum = CMatrix::Zero(3, 3);
    for (const auto& m : k) sum += m.adjoint() * m;
    CHECK(max_abs_diff(sum, CMatrix::Identity(3, 3)) <= 1e-14);
    CHECK_THROWS_AS(polarization_loss_kraus(1.5), ArgumentError);
  }
}
