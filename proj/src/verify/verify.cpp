#include "qnet/verify/verify.hpp"

#include <algorithm>
#include <cmath>

#include <unsupported/Eigen/KroneckerProduct>

#include "qnet/errors.hpp"
#include "qnet/tolerances.hpp"

namespace qnet::verify {

namespace {

const CMatrix& pauli(int k) {
  static const std::array<CMatrix, 4> p = [] {
    std::array<CMatrix, 4> m;
    for (auto& x : m) x = CMatrix::Zero(2, 2);
    m[0] << 1, 0, 0, 1;
    m[1] << 0, 1, 1, 0;
    m[2] << 0, cplx(0, -1), cplx(0, 1), 0;
    m[3] << 1, 0, 0, -1;
    return m;
  }();
  return p[static_cast<std::size_t>(k)];
}

CMatrix kron(const CMatrix& a, const CMatrix& b) { return Eigen::kroneckerProduct(a, b).eval(); }

}  // namespace

CMatrix Analyzer::observable() const {
  const double c = std::cos(2 * theta), s = std::sin(2 * theta);
  return c * pauli(3) + s * (std::cos(phi) * pauli(1) + std::sin(phi) * pauli(2));
}

CMatrix Analyzer::projector(int outcome) const {
  const double sign = outcome == 0 ? 1.0 : -1.0;
  return 0.5 * (pauli(0) + sign * observable());
}

std::array<MeasurementSetting, 4> chsh_settings(double a, double a2, double b, double b2) {
  return {{{{a, 0}, {b, 0}}, {{a, 0}, {b2, 0}}, {{a2, 0}, {b, 0}}, {{a2, 0}, {b2, 0}}}};
}

void require_two_qubit(const DensityMatrix& rho) {
  const auto& s = rho.space();
  if (s.size() != 2 || s.dim(0) != 2 || s.dim(1) != 2) {
    throw ArgumentError("verify: expected a two-qubit state");
  }
}

DensityMatrix qubit_block(const DensityMatrix& rho, double* discarded) {
  const auto& s = rho.space();
  if (s.size() != 2 || s.dim(0) < 2 || s.dim(1) < 2) {
    throw ArgumentError("qubit_block: expected two subsystems with at least two levels");
  }
  const auto d1 = static_cast<Eigen::Index>(s.dim(1));
  const Eigen::Index idx[4] = {0, 1, d1, d1 + 1};
  CMatrix m(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) m(i, j) = rho.matrix()(idx[i], idx[j]);
  const double w = m.trace().real();
  if (discarded) *discarded = rho.trace().real() - w;
  if (!(w > tolerances().degenerate)) {
    throw DegenerateMeasurementError("qubit_block: no weight in the qubit subspace");
  }
  HilbertSpace q({2, 2}, {s.kind(0), s.kind(1)});
  return DensityMatrix(std::move(q), m / w);
}

double concurrence(const DensityMatrix& rho_in) {
  require_two_qubit(rho_in);
  DensityMatrix rho = rho_in;
  rho.validate();
  if (rho.min_eigenvalue() < 0.0) rho = rho.enforce_psd().state;
  // rho = W W^dagger; the lambda_i are the singular values of W^T (Y x Y) W.
  // Eigenvalues at round-off level are dropped: the square roots would turn
  // 1e-17 of noise into 1e-9 of concurrence.
  Eigen::SelfAdjointEigenSolver<CMatrix> es(0.5 * (rho.matrix() + rho.matrix().adjoint()));
  std::vector<Eigen::Index> cols;
  for (Eigen::Index i = 0; i < 4; ++i)
    if (es.eigenvalues()(i) > 1e-14) cols.push_back(i);
  if (cols.empty()) return 0.0;
  CMatrix w(4, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) {
    w.col(static_cast<Eigen::Index>(k)) =
        std::sqrt(es.eigenvalues()(cols[k])) * es.eigenvectors().col(cols[k]);
  }
  const CMatrix tau = w.transpose() * kron(pauli(2), pauli(2)) * w;
  Eigen::JacobiSVD<CMatrix> svd(tau);
  const Eigen::VectorXd l = svd.singularValues();  // decreasing
  double c = l(0);
  for (Eigen::Index i = 1; i < l.size(); ++i) c -= l(i);
  return std::clamp(c, 0.0, 1.0);
}

double correlator(const DensityMatrix& rho, const MeasurementSetting& s) {
  require_two_qubit(rho);
  return (kron(s.a.observable(), s.b.observable()) * rho.matrix()).trace().real();
}

double chsh_value(const DensityMatrix& rho, const std::array<MeasurementSetting, 4>& st) {
  return std::abs(correlator(rho, st[0]) - correlator(rho, st[1]) + correlator(rho, st[2]) +
                  correlator(rho, st[3]));
}

double max_chsh_value(const DensityMatrix& rho) {
  require_two_qubit(rho);
  Eigen::Matrix3d t;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      t(i, j) = (kron(pauli(i + 1), pauli(j + 1)) * rho.matrix()).trace().real();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(t.transpose() * t);
  const auto& ev = es.eigenvalues();  // ascending
  return 2.0 * std::sqrt(std::max(0.0, ev(2) + ev(1)));
}

std::array<double, 4> outcome_probabilities(const DensityMatrix& rho,
                                            const MeasurementSetting& s) {
  require_two_qubit(rho);
  std::array<double, 4> p{};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      p[static_cast<std::size_t>(2 * i + j)] = std::max(
          0.0, (kron(s.a.projector(i), s.b.projector(j)) * rho.matrix()).trace().real());
  return p;
}

CountsTable simulate_counts(const DensityMatrix& rho,
                            const std::vector<MeasurementSetting>& settings,
                            std::uint64_t shots, RngStream& rng) {
  if (shots < 1) throw ArgumentError("simulate_counts: shots must be >= 1");
  CountsTable table{settings, {}, shots};
  for (const auto& s : settings) {
    const auto p = outcome_probabilities(rho, s);
    const double total = p[0] + p[1] + p[2] + p[3];
    std::array<double, 3> cum{p[0] / total, (p[0] + p[1]) / total, (p[0] + p[1] + p[2]) / total};
    std::array<std::uint64_t, 4> c{};
    for (std::uint64_t k = 0; k < shots; ++k) {
      const double u = rng.uniform();
      std::size_t o = 0;
      while (o < 3 && u >= cum[o]) ++o;
      ++c[o];
    }
    table.counts.push_back(c);
  }
  return table;
}

std::vector<MeasurementSetting> pauli_settings() {
  const Analyzer z{0.0, 0.0}, x{M_PI / 4, 0.0}, y{M_PI / 4, M_PI / 2};
  std::vector<MeasurementSetting> out;
  for (const auto& a : {z, x, y})
    for (const auto& b : {z, x, y}) out.push_back({a, b});
  return out;
}

TomographyResult tomography_reconstruct(const std::vector<MeasurementSetting>& settings,
                                        const std::vector<std::array<double, 4>>& freqs) {
  if (settings.size() != freqs.size()) {
    throw ArgumentError("tomography_reconstruct: settings and frequencies differ in length");
  }
  // rho = sum_k r_k P_k / 4 over the 16 two-qubit Paulis, r_k real.
  const auto rows = static_cast<Eigen::Index>(4 * settings.size());
  Eigen::MatrixXd a(rows, 16);
  Eigen::VectorXd f(rows);
  for (std::size_t s = 0; s < settings.size(); ++s) {
    for (int o = 0; o < 4; ++o) {
      const CMatrix proj = kron(settings[s].a.projector(o / 2), settings[s].b.projector(o % 2));
      const auto row = static_cast<Eigen::Index>(4 * s) + o;
      for (int k = 0; k < 16; ++k)
        a(row, k) = (proj * kron(pauli(k / 4), pauli(k % 4))).trace().real() / 4.0;
      f(row) = freqs[s][static_cast<std::size_t>(o)];
    }
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-10);
  if (qr.rank() < 16) {
    throw ArgumentError("tomography_reconstruct: settings are not informationally complete");
  }
  const Eigen::VectorXd r = qr.solve(f);
  CMatrix m = CMatrix::Zero(4, 4);
  for (int k = 0; k < 16; ++k) m += r(k) * kron(pauli(k / 4), pauli(k % 4)) / 4.0;
  m = 0.5 * (m + m.adjoint()).eval();
  m /= m.trace().real();
  DensityMatrix linear(HilbertSpace::uniform(2, 2, SubsystemKind::Field), m);
  auto repair = linear.enforce_psd();
  return {repair.state, linear, repair.min_eigenvalue, repair.clipped_mass};
}

TomographyResult tomography_reconstruct(const CountsTable& counts) {
  std::vector<std::array<double, 4>> freqs;
  for (const auto& c : counts.counts) {
    const double n = static_cast<double>(c[0] + c[1] + c[2] + c[3]);
    freqs.push_back({c[0] / n, c[1] / n, c[2] / n, c[3] / n});
  }
  return tomography_reconstruct(counts.settings, freqs);
}

std::vector<DecayPoint> concurrence_decay_curve(const DensityMatrix& initial,
                                                const ensemble::MemoryDecoherence& rates,
                                                const std::vector<double>& times) {
  require_two_qubit(initial);
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) throw ArgumentError("concurrence_decay_curve: times must increase");
  }
  std::vector<DecayPoint> out;
  const std::size_t ka[] = {0}, kb[] = {1};
  for (double t : times) {
    DensityMatrix rho = ensemble::apply_memory_decoherence(initial, 0, t, rates);
    rho = ensemble::apply_memory_decoherence(rho, 1, t, rates);
    out.push_back({t, concurrence(rho), std::abs(partial_trace(rho, ka)(0, 1)),
                   std::abs(partial_trace(rho, kb)(0, 1)), std::abs(rho(1, 2))});
  }
  return out;
}

}  // namespace qnet::verify
