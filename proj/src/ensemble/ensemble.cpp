#include "qnet/ensemble/ensemble.hpp"

#include <cmath>

#include "qnet/errors.hpp"
#include "qnet/qstate/fock.hpp"
#include "qnet/tolerances.hpp"

namespace qnet::ensemble {

void EnsembleParams::validate() const {
  if (n_atoms < 1) throw ArgumentError("EnsembleParams: n_atoms must be >= 1");
  if (!(p_excite >= 0.0 && p_excite <= kMaxExcitationProbability)) {
    throw ArgumentError("EnsembleParams: p_excite must lie in [0, 0.2]");
  }
  if (!(readout_efficiency >= 0.0 && readout_efficiency <= 1.0)) {
    throw ArgumentError("EnsembleParams: readout_efficiency must lie in [0, 1]");
  }
  if (!(memory_lifetime > 0.0)) throw ArgumentError("EnsembleParams: memory_lifetime must be > 0");
  if (!(dephasing_lifetime > 0.0)) {
    throw ArgumentError("EnsembleParams: dephasing_lifetime must be > 0");
  }
  if (!std::isfinite(write_phase)) throw ArgumentError("EnsembleParams: write_phase not finite");
  if (n_max < 1) throw ArgumentError("EnsembleParams: n_max must be >= 1");
}

namespace {
HilbertSpace spin_space(const EnsembleParams& p) {
  return HilbertSpace::single(p.n_max + 1, SubsystemKind::CollectiveSpin);
}

DensityMatrix vacuum_spin(const EnsembleParams& p) {
  return DensityMatrix(StateVector::basis(spin_space(p), {0}));
}
}  // namespace

EnsembleNode::EnsembleNode(EnsembleParams params, std::string id)
    : params_((params.validate(), params)), id_(std::move(id)), spin_(vacuum_spin(params_)) {}

bool EnsembleNode::idle() const {
  const double tol = tolerances().algebraic;
  CMatrix vac = CMatrix::Zero(spin_.matrix().rows(), spin_.matrix().cols());
  vac(0, 0) = 1.0;
  return (spin_.matrix() - vac).cwiseAbs().maxCoeff() <= tol;
}

void EnsembleNode::reset(double now) {
  touch(now);
  spin_ = vacuum_spin(params_);
}

void EnsembleNode::set_spin_state(DensityMatrix spin, double now) {
  if (!(spin.space() == spin_.space())) {
    throw ArgumentError("EnsembleNode: spin state has the wrong space");
  }
  touch(now);
  spin_ = std::move(spin);
}

void EnsembleNode::touch(double now) {
  if (now < last_touched_) {
    throw ArgumentError("EnsembleNode " + id_ + ": time moved backwards");
  }
  last_touched_ = now;
}

HilbertSpace write_space(const EnsembleParams& params) {
  return HilbertSpace({params.n_max + 1, params.n_max + 1},
                      {SubsystemKind::CollectiveSpin, SubsystemKind::Field});
}

StateVector write_state(const EnsembleParams& params) {
  params.validate();
  const HilbertSpace space = write_space(params);
  const std::size_t d = params.n_max + 1;
  CVector amps = CVector::Zero(static_cast<Eigen::Index>(d * d));
  const cplx ratio = std::polar(std::sqrt(params.p_excite), params.write_phase);
  cplx term = 1.0;
  for (std::size_t n = 0; n < d; ++n) {
    amps(static_cast<Eigen::Index>(n * d + n)) = term;
    term *= ratio;
  }
  return StateVector(space, amps / amps.norm());
}

StateVector write_pulse(EnsembleNode& node) {
  if (!node.idle()) {
    throw ProtocolStateError("write_pulse: ensemble " + node.id() + " is not idle");
  }
  StateVector joint = write_state(node.params());
  const std::size_t keep[] = {0};
  node.set_spin_state(partial_trace(joint, keep), node.last_touched());
  return joint;
}

Envelope default_read_envelope() {
  constexpr std::size_t kSamples = 16;
  constexpr double kDuration = 100e-9;
  return Envelope::normalized(0.0, kDuration / kSamples, std::vector<cplx>(kSamples, 1.0));
}

DensityMatrix read_out(const DensityMatrix& joint, std::size_t index, double efficiency) {
  if (index >= joint.space().size()) throw ArgumentError("read_out: index out of range");
  const auto kraus = fock::loss_kraus(joint.space().dim(index), efficiency);
  const std::size_t t[] = {index};
  DensityMatrix out = apply_channel(joint, kraus, t);
  return DensityMatrix(out.space().with_kind(index, SubsystemKind::Field), out.matrix());
}

Wavepacket read_pulse(EnsembleNode& node, const Envelope& shape) {
  DensityMatrix field = read_out(node.spin_state(), 0, node.params().readout_efficiency);
  node.reset(node.last_touched());
  return Wavepacket{shape, std::move(field)};
}

Wavepacket read_pulse(EnsembleNode& node) { return read_pulse(node, default_read_envelope()); }

DensityMatrix apply_memory_decoherence(const DensityMatrix& rho, std::size_t index,
                                       double dt, const MemoryDecoherence& rates) {
  if (!(dt >= 0.0)) throw ArgumentError("decoherence: negative storage time");
  if (index >= rho.space().size()) throw ArgumentError("decoherence: index out of range");
  if (dt == 0.0) return rho;
  const std::size_t dim = rho.space().dim(index);
  const std::size_t t[] = {index};
  const double eta = std::exp(-dt / rates.amplitude_time);  // exp(-0) for infinite time
  DensityMatrix out = apply_channel(rho, fock::loss_kraus(dim, eta), t);

  if (std::isfinite(rates.dephasing_time)) {
    // Number dephasing is diagonal in the Fock basis: scale rho elements by
    // exp(-(m-n)^2 dt/T) according to the digits of subsystem `index`.
    const HilbertSpace& s = out.space();
    std::size_t stride = 1;
    for (std::size_t i = s.size(); i-- > index + 1;) stride *= s.dim(i);
    CMatrix m = out.matrix();
    const auto n = m.rows();
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto dr = static_cast<double>((static_cast<std::size_t>(r) / stride) % dim);
      for (Eigen::Index c = 0; c < n; ++c) {
        const auto dc = static_cast<double>((static_cast<std::size_t>(c) / stride) % dim);
        const double diff = dr - dc;
        if (diff != 0.0) m(r, c) *= std::exp(-diff * diff * dt / rates.dephasing_time);
      }
    }
    out = DensityMatrix(s, std::move(m));
  }
  return out;
}

void decohere_memory(EnsembleNode& node, double dt) {
  if (!(dt >= 0.0)) throw ArgumentError("decohere_memory: negative dt");
  DensityMatrix next =
      apply_memory_decoherence(node.spin_state(), 0, dt, node.params().decoherence());
  node.set_spin_state(std::move(next), node.last_touched() + dt);
}

StateVector dicke_state(std::size_t n_atoms, std::size_t k_excitations) {
  if (k_excitations > n_atoms) throw ArgumentError("dicke_state: k exceeds n_atoms");
  const HilbertSpace space = HilbertSpace::uniform(n_atoms, 2, SubsystemKind::Atom);
  const std::size_t dim = space.total_dimension();
  CVector amps = CVector::Zero(static_cast<Eigen::Index>(dim));
  for (std::size_t idx = 0; idx < dim; ++idx) {
    if (static_cast<std::size_t>(__builtin_popcountll(idx)) == k_excitations) {
      amps(static_cast<Eigen::Index>(idx)) = 1.0;
    }
  }
  return StateVector(space, amps / amps.norm());
}

StateVector raise_collective(const StateVector& atoms) {
  const HilbertSpace& space = atoms.space();
  const std::size_t n = space.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (space.dim(i) != 2) throw ArgumentError("raise_collective: atoms must be two-level");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  CVector out = CVector::Zero(atoms.amplitudes().size());
  for (Eigen::Index idx = 0; idx < out.size(); ++idx) {
    const cplx a = atoms.amplitudes()(idx);
    if (a == 0.0) continue;
    for (std::size_t bit = 0; bit < n; ++bit) {
      const auto mask = static_cast<Eigen::Index>(1) << bit;
      if ((idx & mask) == 0) out(idx | mask) += scale * a;
    }
  }
  return StateVector(space, std::move(out));
}

double dicke_boson_overlap(std::size_t n_atoms, std::size_t k_excitations) {
  const HilbertSpace space = HilbertSpace::uniform(n_atoms, 2, SubsystemKind::Atom);
  std::vector<std::size_t> ground(n_atoms, 0);
  StateVector ladder = StateVector::basis(space, ground);
  for (std::size_t j = 0; j < k_excitations; ++j) ladder = raise_collective(ladder);
  const double inv_fact = std::exp(-0.5 * std::lgamma(static_cast<double>(k_excitations) + 1.0));
  const cplx overlap = dicke_state(n_atoms, k_excitations).inner(ladder) * inv_fact;
  return std::norm(overlap);
}

}  // namespace qnet::ensemble
