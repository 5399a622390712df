#include "qnet/qstate/operations.hpp"

#include <algorithm>
#include <numeric>

#include "qnet/errors.hpp"
#include "qnet/rng.hpp"
#include "qnet/tolerances.hpp"

namespace qnet {
namespace {

using Index = Eigen::Index;

std::vector<std::size_t> all_subsystems(const HilbertSpace& space) {
  std::vector<std::size_t> v(space.size());
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// Permutation that groups the basis as (rest, target): full index of the pair
// (r, t) is order[r * target_dim + t]. Targets keep the caller's order, the
// rest keep the space's order.
struct LocalLayout {
  std::size_t target_dim = 1;
  std::size_t rest_dim = 1;
  std::vector<Index> order;
};

LocalLayout make_layout(const HilbertSpace& space, Targets targets) {
  const std::size_t n = space.size();
  std::vector<bool> is_target(n, false);
  for (std::size_t t : targets) {
    if (t >= n) {
      throw ArgumentError("subsystem index " + std::to_string(t) + " out of range");
    }
    if (is_target[t]) throw ArgumentError("duplicate subsystem index");
    is_target[t] = true;
  }

  // Per-subsystem place value inside the target block or the rest block.
  std::vector<std::size_t> weight(n, 0);
  LocalLayout layout;
  for (std::size_t k = targets.size(); k-- > 0;) {
    weight[targets[k]] = layout.target_dim;
    layout.target_dim *= space.dim(targets[k]);
  }
  for (std::size_t i = n; i-- > 0;) {
    if (is_target[i]) continue;
    weight[i] = layout.rest_dim;
    layout.rest_dim *= space.dim(i);
  }

  const std::size_t total = space.total_dimension();
  layout.order.resize(total);
  std::vector<std::size_t> digit(n, 0);
  for (std::size_t full = 0; full < total; ++full) {
    std::size_t t = 0, r = 0;
    for (std::size_t i = 0; i < n; ++i) {
      (is_target[i] ? t : r) += digit[i] * weight[i];
    }
    layout.order[r * layout.target_dim + t] = static_cast<Index>(full);
    // Increment the mixed-radix counter (last subsystem fastest).
    for (std::size_t i = n; i-- > 0;) {
      if (++digit[i] < space.dim(i)) break;
      digit[i] = 0;
    }
  }
  return layout;
}

void check_local_size(const CMatrix& op, const LocalLayout& layout) {
  const auto d = static_cast<Index>(layout.target_dim);
  if (op.rows() != d || op.cols() != d) {
    throw ArgumentError("operator is " + std::to_string(op.rows()) + "x" +
                        std::to_string(op.cols()) + " but targets span dimension " +
                        std::to_string(d));
  }
}

// Left-multiply every column of `m` (rows indexed by the full basis) by the
// local operator.
CMatrix left_apply(const CMatrix& m, const CMatrix& op, const LocalLayout& layout) {
  const Index n = m.rows();
  const Index dt = static_cast<Index>(layout.target_dim);
  const Index cols = m.cols();
  CMatrix permuted(n, cols);
  for (Index i = 0; i < n; ++i) permuted.row(i) = m.row(layout.order[i]);
  // Column-major storage: each column is a stack of rest blocks of length dt.
  Eigen::Map<CMatrix> blocks(permuted.data(), dt, n / dt * cols);
  CMatrix transformed = op * blocks;
  Eigen::Map<CMatrix> back(transformed.data(), n, cols);
  CMatrix out(n, cols);
  for (Index i = 0; i < n; ++i) out.row(layout.order[i]) = back.row(i);
  return out;
}

CMatrix sandwich(const CMatrix& rho, const CMatrix& op, const LocalLayout& layout) {
  const CMatrix half = left_apply(rho, op, layout);             // K rho
  return left_apply(CMatrix(half.adjoint()), op, layout).adjoint();  // (K (K rho)^+)^+
}

std::vector<std::size_t> targets_or_all(const HilbertSpace& space, Targets targets) {
  if (targets.empty()) return all_subsystems(space);
  return {targets.begin(), targets.end()};
}

}  // namespace

bool is_unitary(const CMatrix& u, double tol) {
  if (u.rows() != u.cols()) return false;
  const CMatrix prod = u.adjoint() * u;
  return (prod - CMatrix::Identity(u.rows(), u.cols())).cwiseAbs().maxCoeff() <= tol;
}

StateVector tensor_product(const StateVector& a, const StateVector& b) {
  HilbertSpace space = a.space().concat(b.space());
  const Index nb = b.amplitudes().size();
  CVector out(a.amplitudes().size() * nb);
  for (Index i = 0; i < a.amplitudes().size(); ++i) {
    out.segment(i * nb, nb) = a.amplitudes()(i) * b.amplitudes();
  }
  return StateVector(std::move(space), std::move(out));
}

DensityMatrix tensor_product(const DensityMatrix& a, const DensityMatrix& b) {
  HilbertSpace space = a.space().concat(b.space());
  const Index na = a.matrix().rows();
  const Index nb = b.matrix().rows();
  CMatrix out(na * nb, na * nb);
  for (Index i = 0; i < na; ++i) {
    for (Index j = 0; j < na; ++j) {
      out.block(i * nb, j * nb, nb, nb) = a.matrix()(i, j) * b.matrix();
    }
  }
  return DensityMatrix(std::move(space), std::move(out));
}

DensityMatrix partial_trace(const DensityMatrix& rho, Targets keep) {
  if (keep.empty()) throw ArgumentError("partial_trace: keep set is empty");
  std::vector<std::size_t> kept(keep.begin(), keep.end());
  std::sort(kept.begin(), kept.end());
  if (std::adjacent_find(kept.begin(), kept.end()) != kept.end()) {
    throw ArgumentError("partial_trace: duplicate subsystem index");
  }
  for (std::size_t k : kept) {
    if (k >= rho.space().size()) {
      throw ArgumentError("partial_trace: subsystem index " + std::to_string(k) +
                          " out of range");
    }
  }
  // Layout with the kept block as "rest" is awkward; instead treat the traced
  // subsystems as targets so each kept index r owns a contiguous run.
  std::vector<std::size_t> traced;
  for (std::size_t i = 0; i < rho.space().size(); ++i) {
    if (!std::binary_search(kept.begin(), kept.end(), i)) traced.push_back(i);
  }
  const LocalLayout layout = make_layout(rho.space(), traced);
  const Index dt = static_cast<Index>(layout.target_dim);
  const Index dk = static_cast<Index>(layout.rest_dim);
  CMatrix out = CMatrix::Zero(dk, dk);
  const CMatrix& m = rho.matrix();
  for (Index r1 = 0; r1 < dk; ++r1) {
    for (Index r2 = 0; r2 < dk; ++r2) {
      cplx sum = 0.0;
      for (Index t = 0; t < dt; ++t) {
        sum += m(layout.order[r1 * dt + t], layout.order[r2 * dt + t]);
      }
      out(r1, r2) = sum;
    }
  }
  return DensityMatrix(rho.space().select(kept), std::move(out));
}

DensityMatrix partial_trace(const StateVector& psi, Targets keep) {
  return partial_trace(DensityMatrix(psi), keep);
}

namespace {
std::vector<Index> permutation_map(const HilbertSpace& space, Targets order,
                                   HilbertSpace& out_space) {
  if (order.size() != space.size()) {
    throw ArgumentError("permute: order must list every subsystem once");
  }
  out_space = space.select(order);
  const LocalLayout layout = make_layout(space, order);
  // All subsystems are targets, so rest_dim == 1 and order[t] is the input
  // index of output basis state t.
  return layout.order;
}
}  // namespace

DensityMatrix permute(const DensityMatrix& rho, Targets order) {
  HilbertSpace out_space;
  const auto map = permutation_map(rho.space(), order, out_space);
  const Index n = static_cast<Index>(map.size());
  CMatrix out(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) out(i, j) = rho.matrix()(map[i], map[j]);
  return DensityMatrix(std::move(out_space), std::move(out));
}

StateVector permute(const StateVector& psi, Targets order) {
  HilbertSpace out_space;
  const auto map = permutation_map(psi.space(), order, out_space);
  CVector out(static_cast<Index>(map.size()));
  for (Index i = 0; i < out.size(); ++i) out(i) = psi.amplitudes()(map[i]);
  return StateVector(std::move(out_space), std::move(out));
}

namespace {
// Matrix mapping the old basis to the resized one (zero padding / cut).
CMatrix resize_map(const HilbertSpace& from, const HilbertSpace& to, std::size_t i) {
  CMatrix p = CMatrix::Zero(static_cast<Index>(to.total_dimension()),
                            static_cast<Index>(from.total_dimension()));
  for (std::size_t idx = 0; idx < from.total_dimension(); ++idx) {
    auto digits = from.digits_of(idx);
    if (digits[i] >= to.dim(i)) continue;
    p(static_cast<Index>(to.index_of(digits)), static_cast<Index>(idx)) = 1.0;
  }
  return p;
}

HilbertSpace resized_space(const HilbertSpace& s, std::size_t i, std::size_t d) {
  if (i >= s.size()) throw ArgumentError("resize_subsystem: index out of range");
  if (d == 0) throw ArgumentError("resize_subsystem: dimension 0");
  auto dims = s.dims();
  dims[i] = d;
  return HilbertSpace(std::move(dims), s.kinds());
}
}  // namespace

DensityMatrix resize_subsystem(const DensityMatrix& rho, std::size_t i,
                               std::size_t new_dim) {
  HilbertSpace to = resized_space(rho.space(), i, new_dim);
  const CMatrix p = resize_map(rho.space(), to, i);
  return DensityMatrix(std::move(to), p * rho.matrix() * p.adjoint());
}

StateVector resize_subsystem(const StateVector& psi, std::size_t i,
                             std::size_t new_dim) {
  HilbertSpace to = resized_space(psi.space(), i, new_dim);
  const CMatrix p = resize_map(psi.space(), to, i);
  return StateVector(std::move(to), p * psi.amplitudes());
}

StateVector apply_operator(const StateVector& psi, const CMatrix& k, Targets targets) {
  const LocalLayout layout = make_layout(psi.space(), targets);
  check_local_size(k, layout);
  CMatrix col = psi.amplitudes();
  return StateVector(psi.space(), left_apply(col, k, layout).col(0));
}

DensityMatrix apply_operator(const DensityMatrix& rho, const CMatrix& k,
                             Targets targets) {
  const LocalLayout layout = make_layout(rho.space(), targets);
  check_local_size(k, layout);
  return DensityMatrix(rho.space(), sandwich(rho.matrix(), k, layout));
}

StateVector apply_unitary(const StateVector& psi, const CMatrix& u, Targets targets) {
  if (!is_unitary(u, tolerances().algebraic)) {
    throw ArgumentError("apply_unitary: matrix is not unitary");
  }
  return apply_operator(psi, u, targets);
}

DensityMatrix apply_unitary(const DensityMatrix& rho, const CMatrix& u,
                            Targets targets) {
  if (!is_unitary(u, tolerances().algebraic)) {
    throw ArgumentError("apply_unitary: matrix is not unitary");
  }
  return apply_operator(rho, u, targets);
}

DensityMatrix apply_channel(const DensityMatrix& rho, std::span<const CMatrix> kraus,
                            Targets targets) {
  const LocalLayout layout = make_layout(rho.space(), targets);
  CMatrix out = CMatrix::Zero(rho.matrix().rows(), rho.matrix().cols());
  for (const CMatrix& k : kraus) {
    check_local_size(k, layout);
    out += sandwich(rho.matrix(), k, layout);
  }
  return DensityMatrix(rho.space(), std::move(out));
}

cplx expectation(const DensityMatrix& rho, const CMatrix& op, Targets targets) {
  const LocalLayout layout = make_layout(rho.space(), targets);
  check_local_size(op, layout);
  return left_apply(rho.matrix(), op, layout).trace();
}

CMatrix psd_sqrt(const CMatrix& m) {
  Eigen::SelfAdjointEigenSolver<CMatrix> es(0.5 * (m + m.adjoint()));
  Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().adjoint();
}

namespace {
void check_povm(std::span<const CMatrix> effects, Index dim) {
  if (effects.empty()) throw ArgumentError("POVM has no effects");
  CMatrix sum = CMatrix::Zero(dim, dim);
  for (const CMatrix& e : effects) {
    if (e.rows() != dim || e.cols() != dim) {
      throw ArgumentError("POVM effect has the wrong size");
    }
    if ((e - e.adjoint()).cwiseAbs().maxCoeff() > tolerances().physical) {
      throw ArgumentError("POVM effect is not Hermitian");
    }
    Eigen::SelfAdjointEigenSolver<CMatrix> es(0.5 * (e + e.adjoint()),
                                              Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -tolerances().physical) {
      throw ArgumentError("POVM effect is not positive semidefinite");
    }
    sum += e;
  }
  if ((sum - CMatrix::Identity(dim, dim)).cwiseAbs().maxCoeff() > tolerances().physical) {
    throw ArgumentError("POVM effects do not sum to the identity");
  }
}
}  // namespace

std::vector<double> povm_probabilities(const DensityMatrix& rho,
                                       std::span<const CMatrix> effects,
                                       Targets targets) {
  const auto tg = targets_or_all(rho.space(), targets);
  const LocalLayout layout = make_layout(rho.space(), tg);
  check_povm(effects, static_cast<Index>(layout.target_dim));
  std::vector<double> probs;
  probs.reserve(effects.size());
  for (const CMatrix& e : effects) {
    const double p = left_apply(rho.matrix(), e, layout).trace().real();
    probs.push_back(std::max(0.0, p));
  }
  return probs;
}

DensityMatrix povm_posterior(const DensityMatrix& rho, const CMatrix& effect,
                             Targets targets) {
  const auto tg = targets_or_all(rho.space(), targets);
  return apply_operator(rho, psd_sqrt(effect), tg).normalized();
}

PovmResult measure_povm(const DensityMatrix& rho, std::span<const CMatrix> effects,
                        RngStream& rng, Targets targets) {
  const auto tg = targets_or_all(rho.space(), targets);
  std::vector<double> probs = povm_probabilities(rho, effects, tg);
  const double total = std::accumulate(probs.begin(), probs.end(), 0.0);
  if (std::all_of(probs.begin(), probs.end(),
                  [](double p) { return p < tolerances().degenerate; })) {
    throw DegenerateMeasurementError("measure_povm: every outcome has zero probability");
  }
  const double u = rng.uniform() * total;
  std::size_t outcome = 0;
  double acc = 0.0;
  for (; outcome < probs.size(); ++outcome) {
    acc += probs[outcome];
    if (u < acc && probs[outcome] > 0.0) break;
  }
  if (outcome == probs.size()) {
    // Rounding put u past the last bin; take the last nonzero outcome.
    outcome = probs.size() - 1;
    while (probs[outcome] < tolerances().degenerate) --outcome;
  }
  DensityMatrix post = povm_posterior(rho, effects[outcome], tg);
  return {outcome, std::move(post), probs[outcome], std::move(probs)};
}

double fidelity(const DensityMatrix& rho, const DensityMatrix& sigma) {
  if (!(rho.space() == sigma.space())) throw ArgumentError("fidelity: space mismatch");
  // Tr sqrt(sqrt(rho) sigma sqrt(rho)) is the trace norm of sqrt(rho) sqrt(sigma);
  // singular values avoid taking square roots of round-off eigenvalues.
  const CMatrix product = psd_sqrt(rho.matrix()) * psd_sqrt(sigma.matrix());
  Eigen::BDCSVD<CMatrix> svd(product);
  const double tr = svd.singularValues().sum();
  return std::clamp(tr * tr, 0.0, 1.0);
}

double fidelity(const DensityMatrix& rho, const StateVector& psi) {
  if (!(rho.space() == psi.space())) throw ArgumentError("fidelity: space mismatch");
  const cplx f = psi.amplitudes().dot(rho.matrix() * psi.amplitudes());
  return std::clamp(f.real(), 0.0, 1.0);
}

}  // namespace qnet
