#include "qnet/cavity/cavity.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Sparse>
#include <unsupported/Eigen/KroneckerProduct>

#include "qnet/errors.hpp"
#include "qnet/qstate/fock.hpp"
#include "qnet/tolerances.hpp"

namespace qnet::cavity {

namespace {

constexpr double kTwoPiMHz = 2.0 * M_PI * 1e6;

CMatrix kron(const CMatrix& a, const CMatrix& b) { return Eigen::kroneckerProduct(a, b).eval(); }

CMatrix ket_bra(std::size_t dim, std::size_t i, std::size_t j) {
  CMatrix m = CMatrix::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 1.0;
  return m;
}

CMatrix eye(std::size_t dim) {
  return CMatrix::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
}

}  // namespace

// ---------------------------------------------------------------- parameters

double coupling_g(double dipole_moment, double omega_c, double mode_volume,
                  double polarization_overlap) {
  if (!(mode_volume > 0.0)) throw ArgumentError("coupling_g: mode volume must be > 0");
  if (!(dipole_moment > 0.0) || !(omega_c > 0.0)) {
    throw ArgumentError("coupling_g: dipole moment and frequency must be > 0");
  }
  if (!(polarization_overlap >= 0.0 && polarization_overlap <= 1.0)) {
    throw ArgumentError("coupling_g: polarization overlap must lie in [0, 1]");
  }
  const double mu = polarization_overlap * dipole_moment;
  return std::sqrt(mu * mu * omega_c / (2.0 * kHbar * kEpsilon0 * mode_volume));
}

CavityParams CavityParams::from_physical(double dipole_moment, double omega_c, double omega_a,
                                         double mode_volume, double polarization_overlap,
                                         double kappa, double gamma) {
  CavityParams p;
  p.g = coupling_g(dipole_moment, omega_c, mode_volume, polarization_overlap);
  p.kappa = kappa;
  p.gamma = gamma;
  p.omega_c = omega_c;
  p.omega_a = omega_a;
  p.dipole_moment = dipole_moment;
  p.mode_volume = mode_volume;
  return p;
}

void CavityParams::validate() const {
  if (!(g > 0.0) || !std::isfinite(g)) throw ArgumentError("CavityParams: g must be > 0");
  if (!(kappa >= 0.0) || !(gamma >= 0.0)) {
    throw ArgumentError("CavityParams: kappa and gamma must be >= 0");
  }
  if (!std::isfinite(detuning())) throw ArgumentError("CavityParams: detuning not finite");
  if (n_max < 1) throw ArgumentError("CavityParams: n_max must be >= 1");
  if (dipole_moment > 0.0 && mode_volume > 0.0 && omega_c > 0.0) {
    // Constructed from physical fields: g may only be reduced by the overlap.
    const double g_max = coupling_g(dipole_moment, omega_c, mode_volume, 1.0);
    if (g > g_max * (1.0 + 1e-6)) {
      throw ArgumentError("CavityParams: g exceeds the value implied by dipole and volume");
    }
  }
}

CriticalNumbers critical_numbers(const CavityParams& p) {
  if (!(p.g > 0.0)) throw ArgumentError("critical_numbers: g must be > 0");
  return {p.gamma * p.gamma / (p.g * p.g), p.kappa * p.gamma / (p.g * p.g)};
}

const std::vector<Preset>& presets() {
  static const std::vector<Preset> table = [] {
    std::vector<Preset> t;
    CavityParams toroid;
    toroid.g = 580.0 * kTwoPiMHz;
    toroid.kappa = 0.13 * kTwoPiMHz;
    toroid.gamma = 2.6 * kTwoPiMHz;
    toroid.omega_c = toroid.omega_a = 2.0 * M_PI * 299792458.0 / 852e-9;
    t.push_back({"microtoroid", toroid, {2e-5, 1e-6},
                 "projected SiO2 microtoroid, Cs D2; rates chosen to reproduce the quoted "
                 "(n0, N0) with the Cs gamma"});
    CavityParams fp;
    fp.g = 33.9 * kTwoPiMHz;
    fp.kappa = 4.1 * kTwoPiMHz;
    fp.gamma = 2.6 * kTwoPiMHz;
    fp.omega_c = fp.omega_a = toroid.omega_a;
    const CriticalNumbers fpn{fp.gamma * fp.gamma / (fp.g * fp.g),
                              fp.kappa * fp.gamma / (fp.g * fp.g)};
    t.push_back({"fabry-perot", fp, fpn, "10 um Fabry-Perot cavity, Cs D2"});
    return t;
  }();
  return table;
}

const Preset& preset(const std::string& name) {
  for (const auto& p : presets())
    if (p.name == name) return p;
  throw ArgumentError("unknown cavity preset '" + name + "'");
}

bool matches_order_of_magnitude(const CriticalNumbers& got, const CriticalNumbers& target,
                                double factor) {
  auto within = [factor](double a, double b) {
    return a > 0.0 && b > 0.0 && a <= b * factor && b <= a * factor;
  };
  return within(got.n0, target.n0) && within(got.N0, target.N0);
}

std::pair<double, double> dark_state_angle(double omega, double g) {
  if (!(g > 0.0)) throw ArgumentError("dark_state_angle: g must be > 0");
  if (!(omega >= 0.0)) throw ArgumentError("dark_state_angle: omega must be >= 0");
  // Via atan2 so that cos^2 + sin^2 = 1 holds to round-off for any ratio.
  const double theta = std::atan2(omega, g);
  return {std::cos(theta), std::sin(theta)};
}

// ------------------------------------------------------------------- pulses

ControlPulse::ControlPulse(double t0, double dt, std::vector<cplx> samples)
    : t0_(t0), dt_(dt), samples_(std::move(samples)) {
  if (!(dt_ > 0.0)) throw ArgumentError("ControlPulse: grid spacing must be > 0");
  if (samples_.size() < 2) throw ArgumentError("ControlPulse: need at least two samples");
  for (const auto& s : samples_) {
    if (!std::isfinite(s.real()) || !std::isfinite(s.imag())) {
      throw ArgumentError("ControlPulse: samples must be finite");
    }
  }
}

ControlPulse ControlPulse::ramp(Shape shape, double peak, double duration, std::size_t samples,
                                double t0) {
  if (samples < 2) throw ArgumentError("ControlPulse::ramp: need at least two samples");
  if (!(duration > 0.0)) throw ArgumentError("ControlPulse::ramp: duration must be > 0");
  std::vector<cplx> s(samples);
  for (std::size_t k = 0; k < samples; ++k) {
    const double x = static_cast<double>(k) / static_cast<double>(samples - 1);
    const double up = std::pow(std::sin(0.5 * M_PI * x), 2);
    s[k] = peak * (shape == Shape::RampOn ? up : 1.0 - up);
  }
  return ControlPulse(t0, duration / static_cast<double>(samples - 1), std::move(s));
}

ControlPulse ControlPulse::flat_top_emission(const CavityParams& params, double duration,
                                             std::size_t samples, double cap, double residual,
                                             double edge) {
  params.validate();
  if (samples < 2) throw ArgumentError("ControlPulse::flat_top_emission: need at least two samples");
  if (!(duration > 0.0)) throw ArgumentError("ControlPulse::flat_top_emission: duration must be > 0");
  if (!(cap > 0.0)) throw ArgumentError("ControlPulse::flat_top_emission: cap must be > 0");
  if (!(residual > 0.0 && residual < 1.0) || !(edge > 0.0 && edge <= 1.0)) {
    throw ArgumentError("ControlPulse::flat_top_emission: residual and edge must lie in (0, 1)");
  }
  const double dt = duration / static_cast<double>(samples - 1);
  const double rise = edge * duration;
  auto window = [&](double t) {
    return t >= rise ? 1.0 : std::pow(std::sin(0.5 * M_PI * t / rise), 2);
  };
  // Cavity population P_b1(t) = c w(t) with 2 kappa int P_b1 = 1 - residual.
  const double c = (1.0 - residual) / (2.0 * params.kappa * duration * (1.0 - 0.5 * edge));
  std::vector<cplx> s(samples);
  double emitted = 0.0;
  double prev = 0.0;
  for (std::size_t k = 0; k < samples; ++k) {
    const double t = static_cast<double>(k) * dt;
    if (k > 0) {
      const double t_prev = t - dt;
      emitted += params.kappa * c * dt * (window(t_prev) + window(t));
    }
    const double dark = 1.0 - emitted;
    const double sin2 = dark > 0.0 ? c * window(t) / dark : 1.0;
    double om = sin2 < 1.0 ? params.g * std::sqrt(sin2 / (1.0 - sin2)) : cap;
    om = std::max(prev, std::min(om, cap));
    s[k] = om;
    prev = om;
  }
  return ControlPulse(0.0, dt, std::move(s));
}

double ControlPulse::max_abs() const {
  double m = 0.0;
  for (const auto& s : samples_) m = std::max(m, std::abs(s));
  return m;
}

cplx ControlPulse::at(double t) const {
  const double x = (t - t0_) / dt_;
  if (x <= 0.0) return samples_.front();
  const auto last = static_cast<double>(samples_.size() - 1);
  if (x >= last) return samples_.back();
  const auto k = static_cast<std::size_t>(x);
  const double f = x - static_cast<double>(k);
  return (1.0 - f) * samples_[k] + f * samples_[k + 1];
}

ControlPulse ControlPulse::time_reversed() const {
  std::vector<cplx> r(samples_.rbegin(), samples_.rend());
  return ControlPulse(t0_, dt_, std::move(r));
}

bool ControlPulse::monotone(bool rising) const {
  const double tol = 1e-12 * std::max(1.0, max_abs());
  for (std::size_t k = 1; k < samples_.size(); ++k) {
    const double d = std::abs(samples_[k]) - std::abs(samples_[k - 1]);
    if (rising ? d < -tol : d > tol) return false;
  }
  return true;
}

// --------------------------------------------------------------- integrator

HilbertSpace atom_cavity_space(const CavityParams& params, bool with_bin) {
  std::vector<std::size_t> dims{3, params.n_max + 1};
  std::vector<SubsystemKind> kinds{SubsystemKind::Atom, SubsystemKind::Field};
  if (with_bin) {
    dims.push_back(params.n_max + 1);
    kinds.push_back(SubsystemKind::Field);
  }
  return HilbertSpace(dims, kinds);
}

namespace {

double fastest_rate(const CavityParams& p, double max_omega) {
  return std::max({p.g, p.kappa, p.gamma, std::abs(p.detuning()), max_omega});
}

void check_step(const CavityParams& p, double max_omega, double dt) {
  if (!(dt > 0.0)) throw ArgumentError("evolve_lindblad: dt must be > 0");
  if (dt > 0.1 / fastest_rate(p, max_omega)) {
    throw StabilityError("evolve_lindblad: dt exceeds 0.1 / fastest rate");
  }
}

double default_step(const CavityParams& p, double max_omega) {
  return 0.05 / fastest_rate(p, max_omega);
}

using Sparse = Eigen::SparseMatrix<cplx>;

Sparse sparse(const CMatrix& m) { return m.sparseView(); }

// Tr(op * rho) touching only the nonzeros of op.
cplx trace_product(const Sparse& op, const CMatrix& rho) {
  cplx t = 0.0;
  for (Eigen::Index k = 0; k < op.outerSize(); ++k)
    for (Sparse::InnerIterator it(op, k); it; ++it) t += it.value() * rho(it.col(), it.row());
  return t;
}

// Operators of the driven Lambda system embedded as (prefix) x atom x cavity
// x (suffix), so the same builder serves the plain, binned and cascaded cases.
struct LambdaOps {
  Sparse h0;       // detuning + cavity coupling
  Sparse drive;    // |e><a|, multiplied by -Omega(t)
  Sparse drive_dag;
  Sparse a;        // cavity annihilation
  Sparse decay;    // sqrt(2 gamma)|b><e|
  Sparse excited;
};

LambdaOps lambda_ops(const CavityParams& p, std::size_t prefix, std::size_t suffix) {
  const std::size_t nc = p.n_max + 1;
  auto embed = [&](const CMatrix& atom, const CMatrix& cav) {
    return kron(kron(eye(prefix), kron(atom, cav)), eye(suffix));
  };
  const CMatrix a = fock::annihilation(nc);
  const CMatrix aa = embed(eye(3), a);
  const CMatrix couple = embed(ket_bra(3, kLevelE, kLevelB), a);
  const CMatrix drive = embed(ket_bra(3, kLevelE, kLevelA), eye(nc));
  LambdaOps ops;
  ops.a = sparse(aa);
  ops.h0 = sparse(p.detuning() * aa.adjoint() * aa + p.g * (couple + couple.adjoint()));
  ops.drive = sparse(drive);
  ops.drive_dag = sparse(drive.adjoint());
  ops.decay = sparse(std::sqrt(2.0 * p.gamma) * embed(ket_bra(3, kLevelB, kLevelE), eye(nc)));
  ops.excited = sparse(embed(ket_bra(3, kLevelE, kLevelE), eye(nc)));
  return ops;
}

// The generator at one instant as linear combinations of fixed sparse
// operators: H_eff = H - i/2 sum L^dag L, and each jump L.
struct Term {
  cplx c;
  const Sparse* op;
};
struct Generator {
  std::vector<Term> h_eff;
  std::vector<std::vector<Term>> jumps;
};

CMatrix apply_terms(const std::vector<Term>& terms, const CMatrix& x) {
  CMatrix out = CMatrix::Zero(x.rows(), x.cols());
  for (const auto& t : terms)
    if (t.c != 0.0) out.noalias() += t.c * (*t.op * x);
  return out;
}

CMatrix lindblad_rhs(const Generator& gen, const CMatrix& rho) {
  const CMatrix hr = apply_terms(gen.h_eff, rho);
  CMatrix out = cplx(0.0, -1.0) * hr + cplx(0.0, 1.0) * hr.adjoint();
  for (const auto& jump : gen.jumps) {
    // L rho L^dag = (L (L rho)^dag)^dag
    const CMatrix x = apply_terms(jump, rho);
    out += apply_terms(jump, x.adjoint()).adjoint();
  }
  return out;
}

/// RK4 over [t0, t1] with generator(t). Calls observe(step, t, rho) at every
/// step boundary, including both ends.
template <class GenFn, class Observe>
CMatrix rk4(CMatrix rho, double t0, double t1, double dt, GenFn&& generator, Observe&& observe) {
  const auto steps = static_cast<std::size_t>(std::ceil((t1 - t0) / dt - 1e-9));
  const double h = steps ? (t1 - t0) / static_cast<double>(steps) : 0.0;
  observe(std::size_t{0}, t0, rho);
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = t0 + h * static_cast<double>(k);
    const Generator g0 = generator(t), gm = generator(t + 0.5 * h), g1 = generator(t + h);
    const CMatrix k1 = lindblad_rhs(g0, rho);
    const CMatrix k2 = lindblad_rhs(gm, rho + 0.5 * h * k1);
    const CMatrix k3 = lindblad_rhs(gm, rho + 0.5 * h * k2);
    const CMatrix k4 = lindblad_rhs(g1, rho + h * k3);
    rho += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    observe(k + 1, t + h, rho);
  }
  return rho;
}

// Generator for the plain (optionally binned) atom-cavity system.
struct PlainSystem {
  LambdaOps ops;
  Sparse kappa_jump;
  Sparse h0_eff;
  const ControlPulse* pulse;

  Generator operator()(double t) const {
    const cplx om = pulse->at(t);
    return {{{1.0, &h0_eff}, {-om, &ops.drive}, {-std::conj(om), &ops.drive_dag}},
            {{{1.0, &kappa_jump}}, {{1.0, &ops.decay}}}};
  }
};

PlainSystem plain_system(const CavityParams& p, const ControlPulse& pulse, bool with_bin) {
  const std::size_t nc = p.n_max + 1;
  PlainSystem s{lambda_ops(p, 1, with_bin ? nc : 1), {}, {}, &pulse};
  if (with_bin) {
    // Cavity jump also raises the bin: a (x) b^dag.
    const CMatrix raise = fock::annihilation(nc).adjoint();
    s.kappa_jump = sparse(std::sqrt(2.0 * p.kappa) *
                          kron(kron(eye(3), fock::annihilation(nc)), raise));
  } else {
    s.kappa_jump = std::sqrt(2.0 * p.kappa) * s.ops.a;
  }
  const Sparse damping = Sparse(s.kappa_jump.adjoint()) * s.kappa_jump +
                         Sparse(s.ops.decay.adjoint()) * s.ops.decay;
  s.h0_eff = s.ops.h0 - cplx(0.0, 0.5) * damping;
  return s;
}

}  // namespace

Trajectory evolve_lindblad(const DensityMatrix& initial, const CavityParams& params,
                           const ControlPulse& pulse, std::pair<double, double> t_span,
                           double dt, std::size_t record_every) {
  params.validate();
  check_step(params, pulse.max_abs(), dt);
  if (!(t_span.second >= t_span.first)) throw ArgumentError("evolve_lindblad: empty time span");
  const auto& sp = initial.space();
  const bool bin = sp.size() == 3;
  if (!(sp == atom_cavity_space(params, bin))) {
    throw ArgumentError("evolve_lindblad: state must live on atom_cavity_space(params)");
  }
  if (record_every < 1) record_every = 1;
  const PlainSystem sys = plain_system(params, pulse, bin);
  Trajectory traj;
  const CMatrix final_rho = rk4(
      initial.matrix(), t_span.first, t_span.second, dt, sys,
      [&](std::size_t k, double t, const CMatrix& rho) {
        if (k % record_every == 0) {
          traj.times.push_back(t);
          traj.states.emplace_back(sp, rho);
        }
      });
  if (traj.times.back() != t_span.second) {
    traj.times.push_back(t_span.second);
    traj.states.emplace_back(sp, final_rho);
  }
  return traj;
}

// ---------------------------------------------------------- adiabatic maps

namespace {

DensityMatrix memory_qubit(const CMatrix& m) {
  return DensityMatrix(HilbertSpace::single(2, SubsystemKind::Atom), m);
}

DensityMatrix field_qubit(const CMatrix& m) {
  return DensityMatrix(HilbertSpace::single(static_cast<std::size_t>(m.rows()),
                                            SubsystemKind::Field), m);
}

// Unconditional field after emission with efficiency eta; the field is
// expressed in the emitted temporal mode, which absorbs the emission phase.
CMatrix emitted_field(const CMatrix& mem, double eta) {
  CMatrix f(2, 2);
  f(0, 0) = mem(0, 0) + (1.0 - eta) * mem(1, 1);
  f(1, 1) = eta * mem(1, 1);
  f(0, 1) = std::sqrt(eta) * mem(0, 1);
  f(1, 0) = std::conj(f(0, 1));
  return f;
}

struct EmissionRun {
  std::vector<cplx> psi;  // output amplitude sqrt(2 kappa) <b,0|...|b,1> per step
  double t0;
  double dt;
  double efficiency;
  double max_excited;
  double gamma_loss;
};

EmissionRun run_emission(const ControlPulse& pulse, const CavityParams& p, double dt) {
  p.validate();
  if (dt == 0.0) dt = default_step(p, pulse.max_abs());
  check_step(p, pulse.max_abs(), dt);
  const PlainSystem sys = plain_system(p, pulse, false);
  const std::size_t nc = p.n_max + 1;
  // (|a,0> + |b,0>)/sqrt2: the |b,0> half is stationary, so <a> tracks the
  // amplitude of |b,1> grown from |a,0>.
  CVector v = CVector::Zero(static_cast<Eigen::Index>(3 * nc));
  v(static_cast<Eigen::Index>(kLevelA * nc)) = M_SQRT1_2;
  v(static_cast<Eigen::Index>(kLevelB * nc)) = M_SQRT1_2;
  EmissionRun run{{}, pulse.t0(), 0.0, 0.0, 0.0, 0.0};
  const double root = std::sqrt(2.0 * p.kappa);
  std::vector<double> times;
  std::vector<double> excited;
  rk4(CMatrix(v * v.adjoint()), pulse.t0(), pulse.t_end(), dt, sys,
      [&](std::size_t, double t, const CMatrix& rho) {
        times.push_back(t);
        run.psi.push_back(root * 2.0 * trace_product(sys.ops.a, rho));
        excited.push_back(2.0 * trace_product(sys.ops.excited, rho).real());
        run.max_excited = std::max(run.max_excited, excited.back());
      });
  run.dt = times.size() > 1 ? times[1] - times[0] : dt;
  // Trapezoid rule for the emitted and spontaneously lost probabilities.
  double eff = 0.0;
  for (std::size_t k = 1; k < run.psi.size(); ++k) {
    eff += 0.5 * run.dt * (std::norm(run.psi[k - 1]) + std::norm(run.psi[k]));
    run.gamma_loss += p.gamma * run.dt * (excited[k - 1] + excited[k]);
  }
  run.efficiency = eff;
  return run;
}

// Cascaded virtual source feeding the cavity with envelope u(t). The source
// mode s leaks through L1 = v(t) s with v = u / sqrt(1 - int_0^t |u|^2), so
// its output is exactly u(t); it drives the cavity (L2 = sqrt(2 kappa) a)
// one-way. With L = L1 + L2 and H_c = (i/2)(L1^dag L2 - L2^dag L1),
//   H_eff = H - i/2 |v|^2 s^dag s - i/2 L2^dag L2 - i v L2^dag s - i/2 Gamma.
struct CascadedSystem {
  LambdaOps ops;
  Sparse s;
  Sparse l2;
  Sparse sts;       // s^dag s
  Sparse l2dag_s;   // L2^dag s
  Sparse h0_eff;
  const ControlPulse* pulse;
  const Envelope* env;
  std::vector<double> cumulative;  // int_0^{t_k} |u|^2 on the envelope grid

  cplx source_rate(double t) const {
    const cplx u = env->at(t);
    const double x = (t - env->t0()) / env->dt();
    double done;
    if (x <= 0.0) {
      done = 0.0;
    } else if (x >= static_cast<double>(cumulative.size() - 1)) {
      done = cumulative.back();
    } else {
      const auto k = static_cast<std::size_t>(x);
      const double f = x - static_cast<double>(k);
      done = (1.0 - f) * cumulative[k] + f * cumulative[k + 1];
    }
    const double left = 1.0 - done;
    if (left < 1e-10) return 0.0;
    return u / std::sqrt(left);
  }

  Generator operator()(double t) const {
    const cplx om = pulse->at(t);
    const cplx v = source_rate(t);
    return {{{1.0, &h0_eff},
             {-om, &ops.drive},
             {-std::conj(om), &ops.drive_dag},
             {cplx(0.0, -0.5) * std::norm(v), &sts},
             {cplx(0.0, -1.0) * v, &l2dag_s}},
            {{{v, &s}, {1.0, &l2}}, {{1.0, &ops.decay}}}};
  }
};

struct AbsorptionRun {
  CMatrix atom;
  double max_excited;
  double gamma_loss;
};

// Integrated absorption of a field state (dimension <= n_max + 1).
AbsorptionRun run_absorption(const CMatrix& field, const ControlPulse& pulse,
                                          const CavityParams& p, const Envelope& env,
                                          double dt) {
  const auto ds = static_cast<std::size_t>(field.rows());
  const std::size_t nc = p.n_max + 1;
  CascadedSystem sys{lambda_ops(p, ds, 1), {}, {}, {}, {}, {}, &pulse, &env, {}};
  sys.s = sparse(kron(fock::annihilation(ds), eye(3 * nc)));
  sys.l2 = std::sqrt(2.0 * p.kappa) * sys.ops.a;
  sys.sts = Sparse(sys.s.adjoint()) * sys.s;
  sys.l2dag_s = Sparse(sys.l2.adjoint()) * sys.s;
  sys.h0_eff = sys.ops.h0 - cplx(0.0, 0.5) * (Sparse(sys.l2.adjoint()) * sys.l2 +
                                              Sparse(sys.ops.decay.adjoint()) * sys.ops.decay);
  sys.cumulative.assign(env.samples().size(), 0.0);
  for (std::size_t k = 1; k < env.samples().size(); ++k) {
    sys.cumulative[k] = sys.cumulative[k - 1] + 0.5 * env.dt() *
                                                    (std::norm(env.samples()[k - 1]) +
                                                     std::norm(env.samples()[k]));
  }
  // The grid integral may differ from 1 at the 1e-8 level; rescale so the
  // source empties exactly at the end of the envelope.
  const double total = sys.cumulative.back();
  for (auto& c : sys.cumulative) c /= total;

  CMatrix atom_cav0 = CMatrix::Zero(static_cast<Eigen::Index>(3 * nc),
                                    static_cast<Eigen::Index>(3 * nc));
  atom_cav0(static_cast<Eigen::Index>(kLevelB * nc), static_cast<Eigen::Index>(kLevelB * nc)) = 1.0;
  const CMatrix rho0 = kron(field, atom_cav0);

  const double t0 = std::min(pulse.t0(), env.t0());
  const double t1 = std::max(pulse.t_end(), env.t0() + env.duration());
  double max_e = 0.0;
  double loss = 0.0;
  double prev_e = 0.0;
  double prev_t = t0;
  const CMatrix rho = rk4(rho0, t0, t1, dt, sys, [&](std::size_t, double t, const CMatrix& r) {
    const double e = trace_product(sys.ops.excited, r).real();
    loss += p.gamma * (t - prev_t) * (prev_e + e);
    prev_e = e;
    prev_t = t;
    max_e = std::max(max_e, e);
  });
  // Reduce to the atom.
  CMatrix atom = CMatrix::Zero(3, 3);
  const auto blk = static_cast<Eigen::Index>(nc);
  const auto stride = static_cast<Eigen::Index>(3 * nc);
  for (Eigen::Index s = 0; s < static_cast<Eigen::Index>(ds); ++s)
    for (Eigen::Index i = 0; i < 3; ++i)
      for (Eigen::Index j = 0; j < 3; ++j)
        for (Eigen::Index n = 0; n < blk; ++n)
          atom(i, j) += rho(s * stride + i * blk + n, s * stride + j * blk + n);
  return {atom, max_e, loss};
}

CMatrix atom_to_memory(const CMatrix& atom) {
  CMatrix m(2, 2);
  m(0, 0) = atom(kLevelB, kLevelB);
  m(1, 1) = atom(kLevelA, kLevelA);
  m(0, 1) = atom(kLevelB, kLevelA);
  m(1, 0) = atom(kLevelA, kLevelB);
  return m;
}

// Receiver reference: a (|0> + |1>)/sqrt2 field fixes the storage efficiency
// and the phase the absorption imprints on the memory coherence.
struct Receiver {
  double eta;
  cplx frame;  // unit phase to divide out of memory coherences
  double max_excited;
  double gamma_loss;
};

Receiver calibrate_receiver(const ControlPulse& pulse, const CavityParams& p, const Envelope& env,
                            double dt) {
  const CMatrix plus = CMatrix::Constant(2, 2, 0.5);
  const AbsorptionRun ref = run_absorption(plus, pulse, p, env, dt);
  const double eta = 2.0 * ref.atom(kLevelA, kLevelA).real();
  const cplx c = ref.atom(kLevelB, kLevelA);
  const cplx frame = std::abs(c) > 1e-12 ? c / std::abs(c) : cplx(1.0);
  return {eta, frame, 2.0 * ref.max_excited, 2.0 * ref.gamma_loss};
}

CMatrix absorb_to_memory(const CMatrix& field, const ControlPulse& pulse, const CavityParams& p,
                         const Envelope& env, double dt, const Receiver& rx,
                         AbsorptionRun* run = nullptr) {
  AbsorptionRun r = run_absorption(field, pulse, p, env, dt);
  CMatrix m = atom_to_memory(r.atom);
  m(0, 1) /= rx.frame;
  m(1, 0) = std::conj(m(0, 1));
  if (run) *run = std::move(r);
  return m;
}

void require_qubit(const DensityMatrix& in, const char* who) {
  if (in.space().size() != 1 || in.space().dim(0) != 2) {
    throw ArgumentError(std::string(who) + ": expected a single qubit");
  }
}

}  // namespace

std::pair<Envelope, double> emission_envelope(const ControlPulse& pulse,
                                              const CavityParams& params, double dt) {
  const EmissionRun run = run_emission(pulse, params, dt);
  if (!(run.efficiency > tolerances().degenerate)) {
    throw DegenerateMeasurementError("emission_envelope: nothing is emitted");
  }
  return {Envelope::normalized(run.t0, run.dt, run.psi), run.efficiency};
}

MapResult adiabatic_map(Direction direction, const ControlPulse& pulse,
                        const CavityParams& params, const StateVector& input,
                        const MapOptions& options) {
  return adiabatic_map(direction, pulse, params, DensityMatrix(input), options);
}

MapResult adiabatic_map(Direction direction, const ControlPulse& pulse,
                        const CavityParams& params, const DensityMatrix& input,
                        const MapOptions& options) {
  params.validate();
  const bool emit = direction == Direction::Emit;
  if (!pulse.monotone(emit)) {
    throw ArgumentError(emit ? "adiabatic_map: emission needs a rising (off to on) pulse"
                             : "adiabatic_map: absorption needs a falling (on to off) pulse");
  }
  if (emit) {
    require_qubit(input, "adiabatic_map(emit)");
    if (options.mode == Mode::Ideal) {
      return {field_qubit(input.matrix()), 1.0, 1.0, 0.0, 0.0, std::nullopt};
    }
    const EmissionRun run = run_emission(pulse, params, options.dt);
    const CMatrix out = emitted_field(input.matrix(), run.efficiency);
    const double success = input(0, 0).real() + run.efficiency * input(1, 1).real();
    CMatrix cond = out;
    cond(0, 0) -= (1.0 - run.efficiency) * input(1, 1).real();
    cond /= success;
    std::optional<Envelope> env;
    if (run.efficiency > tolerances().degenerate) {
      env = Envelope::normalized(run.t0, run.dt, run.psi);
    }
    return {field_qubit(cond), success, run.efficiency, run.max_excited, run.gamma_loss,
            env};
  }

  // Absorption: the field may carry up to n_max photons; only {0, 1} fits in memory.
  if (input.space().size() != 1 || input.space().dim(0) < 2) {
    throw ArgumentError("adiabatic_map(absorb): expected a single field mode");
  }
  if (options.mode == Mode::Ideal) {
    const CMatrix block = input.matrix().topLeftCorner(2, 2);
    const double kept = block.trace().real();
    if (!(kept > tolerances().degenerate)) {
      throw DegenerateMeasurementError("adiabatic_map(absorb): no weight in {0, 1}");
    }
    return {memory_qubit(block / kept), kept, 1.0, 0.0, 0.0, std::nullopt};
  }
  if (input.space().dim(0) > params.n_max + 1) {
    throw ArgumentError("adiabatic_map(absorb): field exceeds the cavity truncation");
  }
  double dt = options.dt;
  const double fast = std::max(pulse.max_abs(), params.kappa);
  if (dt == 0.0) dt = default_step(params, fast);
  check_step(params, fast, dt);
  Envelope env = options.incoming
                     ? *options.incoming
                     : emission_envelope(pulse.time_reversed(), params, dt).first.time_reversed();
  if (!options.incoming) {
    // Time reversal also conjugates the amplitude.
    std::vector<cplx> conj = env.samples();
    for (auto& c : conj) c = std::conj(c);
    env = Envelope(env.t0(), env.dt(), std::move(conj));
  }
  const Receiver rx = calibrate_receiver(pulse, params, env, dt);
  const double eta = rx.eta;
  AbsorptionRun run;
  const CMatrix mem = absorb_to_memory(input.matrix(), pulse, params, env, dt, rx, &run);
  // Failed absorption of the one-photon part leaves |b>; remove that weight.
  const double failed = input(1, 1).real() * (1.0 - eta) +
                        (input.space().dim(0) > 2 ? input.matrix().bottomRightCorner(
                                                         input.matrix().rows() - 2,
                                                         input.matrix().cols() - 2)
                                                        .trace()
                                                        .real()
                                                  : 0.0);
  const double success = 1.0 - failed;
  CMatrix cond = mem;
  if (input.space().dim(0) == 2) {
    cond(0, 0) -= input(1, 1).real() * (1.0 - eta);
    cond /= success;
  } else {
    cond /= cond.trace().real();
  }
  return {memory_qubit(cond),
          success,
          eta,
          std::max(rx.max_excited, run.max_excited),
          rx.gamma_loss,
          std::nullopt};
}

TransferResult transfer_node_to_node(const StateVector& memory_a,
                                     std::pair<ControlPulse, ControlPulse> pulses,
                                     const channel::OpticalLink& link, const CavityParams& params_a,
                                     const CavityParams& params_b, Mode mode, double dt) {
  link.validate();
  const DensityMatrix in(memory_a);
  require_qubit(in, "transfer_node_to_node");
  const double t = link.transmissivity();
  CMatrix field;
  double eta_emit = 1.0;
  std::optional<Envelope> env;
  if (mode == Mode::Ideal) {
    const auto& a = pulses.first.samples();
    const auto rb = pulses.second.time_reversed();
    const auto& b = rb.samples();
    bool reversed = a.size() == b.size() && pulses.first.dt() == pulses.second.dt();
    for (std::size_t k = 0; reversed && k < a.size(); ++k) {
      reversed = std::abs(a[k] - b[k]) <= 1e-12 * std::max(1.0, pulses.first.max_abs());
    }
    if (!reversed) {
      throw ArgumentError("transfer_node_to_node: ideal mode needs time-reversed pulses");
    }
    if (!pulses.first.monotone(true)) {
      throw ArgumentError("transfer_node_to_node: emission pulse must rise");
    }
    field = in.matrix();
  } else {
    MapOptions opt;
    opt.mode = Mode::Integrated;
    opt.dt = dt;
    const auto em = adiabatic_map(Direction::Emit, pulses.first, params_a, in, opt);
    eta_emit = em.efficiency;
    field = emitted_field(in.matrix(), eta_emit);
    env = em.envelope;
  }
  // Channel: loss T and the link phase. The phase is a known frame rotation
  // and is undone at B, as a receiver would with a phase reference.
  const DensityMatrix sent = channel::attenuate(field_qubit(field), 0, t, 0.0);

  CMatrix mem;
  double eta_abs = 1.0;
  if (mode == Mode::Ideal) {
    mem = sent.matrix();
  } else {
    if (!pulses.second.monotone(false)) {
      throw ArgumentError("transfer_node_to_node: absorption pulse must fall");
    }
    const double fast = std::max(pulses.second.max_abs(), params_b.kappa);
    double step = dt == 0.0 ? default_step(params_b, fast) : dt;
    check_step(params_b, fast, step);
    if (!env) throw DegenerateMeasurementError("transfer_node_to_node: nothing emitted at A");
    const Receiver rx = calibrate_receiver(pulses.second, params_b, *env, step);
    eta_abs = rx.eta;
    mem = absorb_to_memory(sent.matrix(), pulses.second, params_b, *env, step, rx);
  }
  const double eta = eta_emit * t * eta_abs;
  const double success = in(0, 0).real() + eta * in(1, 1).real();
  CMatrix cond = mem;
  cond(0, 0) -= (1.0 - eta) * in(1, 1).real();
  cond /= success;
  DensityMatrix out = memory_qubit(cond);
  return {out, fidelity(out, memory_a), fidelity(memory_qubit(mem), memory_a), success};
}

CoherentStorageResult coherent_storage_roundtrip(double nbar, const ControlPulse& store,
                                                 const ControlPulse& retrieve,
                                                 const CavityParams& params, double dt) {
  if (!(nbar >= 0.0)) throw ArgumentError("coherent_storage_roundtrip: nbar must be >= 0");
  if (params.n_max < 2) throw ArgumentError("coherent_storage_roundtrip: needs n_max >= 2");
  if (!store.monotone(false) || !retrieve.monotone(true)) {
    throw ArgumentError("coherent_storage_roundtrip: store must fall and retrieve must rise");
  }
  const CVector alpha = fock::coherent_amplitudes(3, std::sqrt(nbar));
  const CMatrix in = alpha * alpha.adjoint();
  const double fast = std::max({store.max_abs(), retrieve.max_abs(), params.kappa});
  if (dt == 0.0) dt = default_step(params, fast);
  check_step(params, fast, dt);

  auto [env, eta_e] = emission_envelope(retrieve, params, dt);
  std::vector<cplx> rev(env.samples().rbegin(), env.samples().rend());
  for (auto& c : rev) c = std::conj(c);
  const Envelope incoming(store.t0(), env.dt(), std::move(rev));
  const Receiver rx = calibrate_receiver(store, params, incoming, dt);
  const CMatrix mem = absorb_to_memory(in, store, params, incoming, dt, rx);
  CMatrix out = CMatrix::Zero(3, 3);
  out.topLeftCorner(2, 2) = emitted_field(mem / mem.trace().real(), eta_e);
  const DensityMatrix input_field = field_qubit(in), retrieved = field_qubit(out);
  return {input_field, retrieved, fidelity(retrieved, input_field), mem(1, 1).real()};
}

// ------------------------------------------------------------ polarization

std::vector<CMatrix> polarization_loss_kraus(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw ArgumentError("polarization_loss_kraus: T must lie in [0, 1]");
  CMatrix k0 = CMatrix::Zero(3, 3);
  k0(0, 0) = 1.0;
  k0(1, 1) = k0(2, 2) = std::sqrt(t);
  std::vector<CMatrix> k{k0};
  for (std::size_t pol : {1, 2}) k.push_back(std::sqrt(1.0 - t) * ket_bra(3, 0, pol));
  return k;
}

PolarizationResult polarization_pair_sequence(bool second_pulse, double transmissivity) {
  // Atom {a, b+, b-} = {0, 1, 2}; photons {vac, sigma+, sigma-} = {0, 1, 2}.
  const HilbertSpace sp({3, 3, 3}, {SubsystemKind::Atom, SubsystemKind::Field,
                                    SubsystemKind::Field});
  auto idx = [](std::size_t atom, std::size_t p1, std::size_t p2) {
    return static_cast<Eigen::Index>(9 * atom + 3 * p1 + p2);
  };
  CVector psi = CVector::Zero(27);
  if (second_pulse) {
    // |b+->|sigma+-> -> |a>|sigma+->|sigma-+>
    psi(idx(0, 1, 2)) = M_SQRT1_2;
    psi(idx(0, 2, 1)) = M_SQRT1_2;
  } else {
    psi(idx(1, 1, 0)) = M_SQRT1_2;
    psi(idx(2, 2, 0)) = M_SQRT1_2;
  }
  DensityMatrix rho{StateVector(sp, psi)};
  const auto kraus = polarization_loss_kraus(transmissivity);
  for (std::size_t mode : {1, 2}) {
    const std::size_t t[] = {mode};
    rho = apply_channel(rho, kraus, t);
  }
  // Pair of interest: photons 1 and 2, or atom and photon 1.
  const std::size_t first = second_pulse ? 1 : 0, second = second_pulse ? 2 : 1;
  CMatrix pair = CMatrix::Zero(4, 4);
  double present = 0.0;
  const auto& m = rho.matrix();
  for (Eigen::Index r = 0; r < 27; ++r) {
    const auto dr = sp.digits_of(static_cast<std::size_t>(r));
    if (dr[first] == 0 || dr[second] == 0) continue;
    for (Eigen::Index c = 0; c < 27; ++c) {
      const auto dc = sp.digits_of(static_cast<std::size_t>(c));
      if (dc[first] == 0 || dc[second] == 0) continue;
      // Trace over the remaining subsystem.
      const std::size_t other = 3 - first - second;
      if (dr[other] != dc[other]) continue;
      const auto i = static_cast<Eigen::Index>(2 * (dr[first] - 1) + (dr[second] - 1));
      const auto j = static_cast<Eigen::Index>(2 * (dc[first] - 1) + (dc[second] - 1));
      pair(i, j) += m(r, c);
    }
  }
  present = pair.trace().real();
  // With the second pulse omitted the atom is always "present".
  const double coincidence = present;
  if (present > tolerances().degenerate) pair /= present;
  DensityMatrix cond(HilbertSpace({2, 2}, {second_pulse ? SubsystemKind::Field : SubsystemKind::Atom,
                                           SubsystemKind::Field}),
                     pair);
  return {rho, coincidence, cond};
}

}  // namespace qnet::cavity
