#include "qnet/channel/channel.hpp"

#include <cmath>

#include <unsupported/Eigen/KroneckerProduct>

#include "qnet/errors.hpp"
#include "qnet/qstate/fock.hpp"
#include "qnet/tolerances.hpp"

namespace qnet::channel {

void OpticalLink::validate() const {
  if (!(length >= 0.0) || !std::isfinite(length)) {
    throw ArgumentError("OpticalLink: length must be finite and >= 0");
  }
  if (!(attenuation >= 0.0)) throw ArgumentError("OpticalLink: attenuation must be >= 0");
  if (!(phase_jitter_std >= 0.0)) throw ArgumentError("OpticalLink: phase_jitter_std must be >= 0");
  if (!std::isfinite(extra_phase)) throw ArgumentError("OpticalLink: extra_phase not finite");
  if (!(transmissivity() > 0.0)) throw ArgumentError("OpticalLink: transmissivity underflows to 0");
}

double OpticalLink::transmissivity() const {
  return std::pow(10.0, -attenuation * (length / 1000.0) / 10.0);
}

void Detector::validate() const {
  if (!(efficiency >= 0.0 && efficiency <= 1.0)) {
    throw ArgumentError("Detector: efficiency must lie in [0, 1]");
  }
  if (!(dark_count_prob >= 0.0 && dark_count_prob < 1.0)) {
    throw ArgumentError("Detector: dark_count_prob must lie in [0, 1)");
  }
}

namespace {

double factorial(std::size_t n) { return std::tgamma(static_cast<double>(n) + 1.0); }

template <class T>
T ipow(T x, std::size_t n) {
  T r(1);
  while (n--) r *= x;
  return r;
}

double binom(std::size_t n, std::size_t k) {
  return factorial(n) / (factorial(k) * factorial(n - k));
}

void require_field(const DensityMatrix& rho, std::size_t mode, const char* who) {
  if (mode >= rho.space().size()) throw ArgumentError(std::string(who) + ": mode out of range");
  if (rho.space().kind(mode) != SubsystemKind::Field) {
    throw ArgumentError(std::string(who) + ": subsystem is not a field mode");
  }
}

}  // namespace

CMatrix beamsplitter_matrix(std::size_t dim, double theta, double phi) {
  if (dim < 1) throw ArgumentError("beamsplitter_matrix: dim must be >= 1");
  const double c = std::cos(theta), s = std::sin(theta);
  const cplx ea = std::polar(s, phi);     // a^dag -> c a^dag + ea b^dag
  const cplx eb = -std::polar(s, -phi);   // b^dag -> eb a^dag + c b^dag
  const auto n = static_cast<Eigen::Index>(dim * dim);
  CMatrix u = CMatrix::Zero(n, n);
  for (std::size_t m = 0; m < dim; ++m) {
    for (std::size_t k = 0; k < dim; ++k) {
      // (c A + ea B)^m (eb A + c B)^k, term A^(j+l) B^(m-j+k-l).
      for (std::size_t j = 0; j <= m; ++j) {
        for (std::size_t l = 0; l <= k; ++l) {
          const std::size_t p = j + l, q = m + k - p;
          if (p >= dim || q >= dim) continue;
          const cplx coeff = binom(m, j) * ipow(c, j) * ipow(ea, m - j) * binom(k, l) *
                             ipow(eb, l) * ipow(c, k - l);
          const double norm =
              std::sqrt(factorial(p) * factorial(q) / (factorial(m) * factorial(k)));
          u(static_cast<Eigen::Index>(p * dim + q), static_cast<Eigen::Index>(m * dim + k)) +=
              coeff * norm;
        }
      }
    }
  }
  return u;
}

std::vector<CMatrix> dilated_loss_kraus(std::size_t dim, double transmissivity) {
  if (!(transmissivity >= 0.0 && transmissivity <= 1.0)) {
    throw ArgumentError("dilated_loss_kraus: transmissivity must lie in [0, 1]");
  }
  const CMatrix u = beamsplitter_matrix(dim, std::acos(std::sqrt(transmissivity)), 0.0);
  std::vector<CMatrix> kraus;
  for (std::size_t k = 0; k < dim; ++k) {
    CMatrix kk = CMatrix::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    for (std::size_t p = 0; p < dim; ++p)
      for (std::size_t m = 0; m < dim; ++m)
        kk(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(m)) =
            u(static_cast<Eigen::Index>(p * dim + k), static_cast<Eigen::Index>(m * dim));
    kraus.push_back(std::move(kk));
  }
  return kraus;
}

DensityMatrix attenuate(const DensityMatrix& rho, std::size_t mode, double transmissivity,
                        double phase) {
  require_field(rho, mode, "attenuate");
  const std::size_t dim = rho.space().dim(mode);
  std::vector<CMatrix> kraus = dilated_loss_kraus(dim, transmissivity);
  const CMatrix ph = fock::phase_shift(dim, phase);
  for (auto& k : kraus) k = ph * k;
  const std::size_t t[] = {mode};
  return apply_channel(rho, kraus, t);
}

DensityMatrix propagate_loss(const DensityMatrix& rho, std::size_t mode,
                             const OpticalLink& link, RngStream& rng) {
  link.validate();
  double phase = link.extra_phase;
  if (link.phase_jitter_std > 0.0) phase += link.phase_jitter_std * rng.normal();
  return attenuate(rho, mode, link.transmissivity(), phase);
}

BeamsplitterResult beamsplitter(const DensityMatrix& rho,
                                std::pair<std::size_t, std::size_t> modes, double theta,
                                double phi) {
  const auto [i, j] = modes;
  require_field(rho, i, "beamsplitter");
  require_field(rho, j, "beamsplitter");
  if (i == j) throw ArgumentError("beamsplitter: modes must differ");
  const std::size_t d = rho.space().dim(i);
  if (rho.space().dim(j) != d) {
    throw ArgumentError("beamsplitter: modes must have equal truncation");
  }
  // Pad so that no output is dropped, then measure what lies above d - 1.
  const std::size_t big = 2 * d - 1;
  DensityMatrix padded = resize_subsystem(resize_subsystem(rho, i, big), j, big);
  const std::size_t t[] = {i, j};
  padded = apply_operator(padded, beamsplitter_matrix(big, theta, phi), t);
  const double before = padded.trace().real();
  DensityMatrix out = resize_subsystem(resize_subsystem(padded, i, d), j, d);
  const double leaked = std::max(0.0, before - out.trace().real());
  return {std::move(out), leaked};
}

std::array<CMatrix, 2> threshold_effects(std::size_t dim, const Detector& detector) {
  detector.validate();
  const auto n = static_cast<Eigen::Index>(dim);
  CMatrix none = CMatrix::Zero(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    none(k, k) = (1.0 - detector.dark_count_prob) *
                 std::pow(1.0 - detector.efficiency, static_cast<double>(k));
  }
  CMatrix click = CMatrix::Identity(n, n) - none;
  return {none, click};
}

Detection detect_threshold(const DensityMatrix& rho, std::size_t mode, const Detector& detector,
                           RngStream& rng) {
  require_field(rho, mode, "detect_threshold");
  const auto effects = threshold_effects(rho.space().dim(mode), detector);
  const std::size_t t[] = {mode};
  PovmResult r = measure_povm(rho, effects, rng, t);
  std::vector<std::size_t> keep;
  for (std::size_t k = 0; k < rho.space().size(); ++k)
    if (k != mode) keep.push_back(k);
  if (keep.empty()) {
    return {r.outcome == 1, DensityMatrix(HilbertSpace{}, CMatrix::Identity(1, 1)),
            r.probabilities[1]};
  }
  return {r.outcome == 1, partial_trace(r.posterior, keep), r.probabilities[1]};
}

const char* to_string(Click c) {
  switch (c) {
    case Click::None: return "none";
    case Click::D1: return "D1";
    case Click::D2: return "D2";
    case Click::Both: return "both";
  }
  return "?";
}

namespace {

// Subsystem layout of the station state.
constexpr std::size_t kMemL = 0, kFieldL = 1, kMemR = 2, kFieldR = 3;

HeraldDistribution compute_distribution(const DensityMatrix& source,
                                        const std::pair<OpticalLink, OpticalLink>& links,
                                        const std::pair<Detector, Detector>& det,
                                        double phase_l, double phase_r, double source_phase) {
  DensityMatrix rho = attenuate(source, kFieldL, links.first.transmissivity(), phase_l);
  rho = attenuate(rho, kFieldR, links.second.transmissivity(), phase_r);

  const std::size_t d =
      std::max(rho.space().dim(kFieldL), rho.space().dim(kFieldR));
  const std::size_t big = 2 * d - 1;
  rho = resize_subsystem(resize_subsystem(rho, kFieldL, big), kFieldR, big);
  const std::size_t ports[] = {kFieldL, kFieldR};
  rho = apply_operator(rho, beamsplitter_matrix(big, M_PI / 4, 0.0), ports);

  // D2 watches the output port of field L, D1 the one of field R.
  const auto e2 = threshold_effects(big, det.second);
  const auto e1 = threshold_effects(big, det.first);
  auto joint = [&](int c1, int c2) -> CMatrix {
    return Eigen::kroneckerProduct(e2[c2], e1[c1]).eval();
  };
  const CMatrix effects[4] = {joint(0, 0), joint(1, 0), joint(0, 1), joint(1, 1)};

  HeraldDistribution out;
  const auto probs = povm_probabilities(rho, effects, ports);
  std::copy(probs.begin(), probs.end(), out.probabilities.begin());
  out.eta1 = source_phase + phase_l - phase_r;
  const std::size_t mems[] = {kMemL, kMemR};
  for (int k = 0; k < 2; ++k) {
    if (out.probabilities[1 + k] <= tolerances().degenerate) continue;
    DensityMatrix post = povm_posterior(rho, effects[1 + k], ports);
    out.conditional[k] = partial_trace(post, mems);
  }
  return out;
}

}  // namespace

HeraldStation::HeraldStation(DensityMatrix source, std::pair<OpticalLink, OpticalLink> links,
                             std::pair<Detector, Detector> detectors, double source_phase)
    : source_(std::move(source)),
      links_(std::move(links)),
      detectors_(std::move(detectors)),
      source_phase_(source_phase) {
  links_.first.validate();
  links_.second.validate();
  detectors_.first.validate();
  detectors_.second.validate();
  const auto& sp = source_.space();
  if (sp.size() != 4 || sp.kind(kFieldL) != SubsystemKind::Field ||
      sp.kind(kFieldR) != SubsystemKind::Field) {
    throw ArgumentError("HeraldStation: source must be (memory, field, memory, field)");
  }
  nominal_ = distribution(0.0, 0.0);
}

HeraldDistribution HeraldStation::distribution(double jitter_l, double jitter_r) const {
  return compute_distribution(source_, links_, detectors_, links_.first.extra_phase + jitter_l,
                              links_.second.extra_phase + jitter_r, source_phase_);
}

HeraldOutcome HeraldStation::sample(RngStream& rng) const {
  const bool jitter = links_.first.phase_jitter_std > 0.0 || links_.second.phase_jitter_std > 0.0;
  HeraldDistribution local;
  const HeraldDistribution* dist = &nominal_;
  if (jitter) {
    const double jl = links_.first.phase_jitter_std * rng.normal();
    const double jr = links_.second.phase_jitter_std * rng.normal();
    local = distribution(jl, jr);
    dist = &local;
  }
  const double u = rng.uniform();
  double total = 0.0;
  for (double p : dist->probabilities) total += p;
  double acc = 0.0;
  std::size_t k = 0;
  for (; k < 3; ++k) {
    acc += dist->probabilities[k] / total;
    if (u < acc) break;
  }
  HeraldOutcome out;
  out.which_detector = static_cast<Click>(k);
  out.probabilities = dist->probabilities;
  out.herald_probability = dist->probabilities[1] + dist->probabilities[2];
  out.eta1 = dist->eta1;
  if (k == 1 || k == 2) out.conditional_state = dist->conditional[k - 1];
  return out;
}

DensityMatrix dlcz_source(const ensemble::EnsembleParams& left,
                          const ensemble::EnsembleParams& right) {
  return DensityMatrix(
      tensor_product(ensemble::write_state(left), ensemble::write_state(right)));
}

HeraldStation dlcz_station(const ensemble::EnsembleParams& left,
                           const ensemble::EnsembleParams& right,
                           std::pair<OpticalLink, OpticalLink> links,
                           std::pair<Detector, Detector> detectors) {
  return HeraldStation(dlcz_source(left, right), std::move(links), std::move(detectors),
                       left.write_phase - right.write_phase);
}

HeraldOutcome herald_entangle(ensemble::EnsembleNode& left, ensemble::EnsembleNode& right,
                              const HeraldStation& station, RngStream& rng) {
  if (!left.idle() || !right.idle()) {
    throw ProtocolStateError("herald_entangle: both nodes must be idle");
  }
  ensemble::write_pulse(left);
  ensemble::write_pulse(right);
  HeraldOutcome out = station.sample(rng);
  if (out.conditional_state) {
    const std::size_t l[] = {0}, r[] = {1};
    left.set_spin_state(partial_trace(*out.conditional_state, l), left.last_touched());
    right.set_spin_state(partial_trace(*out.conditional_state, r), right.last_touched());
  }
  return out;
}

HeraldOutcome herald_entangle(ensemble::EnsembleNode& left, ensemble::EnsembleNode& right,
                              std::pair<OpticalLink, OpticalLink> links,
                              std::pair<Detector, Detector> detectors, RngStream& rng) {
  if (!left.idle() || !right.idle()) {
    throw ProtocolStateError("herald_entangle: both nodes must be idle");
  }
  const HeraldStation station =
      dlcz_station(left.params(), right.params(), std::move(links), std::move(detectors));
  return herald_entangle(left, right, station, rng);
}

}  // namespace qnet::channel
