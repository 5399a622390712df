#include "qnet/qstate/hilbert_space.hpp"

#include "qnet/errors.hpp"
#include "qnet/tolerances.hpp"

namespace qnet {

std::string to_string(SubsystemKind kind) {
  switch (kind) {
    case SubsystemKind::Atom:
      return "atom";
    case SubsystemKind::CollectiveSpin:
      return "collective-spin";
    case SubsystemKind::Field:
      return "field";
  }
  return "unknown";
}

HilbertSpace::HilbertSpace(std::vector<std::size_t> dims,
                           std::vector<SubsystemKind> kinds)
    : dims_(std::move(dims)), kinds_(std::move(kinds)) {
  if (dims_.size() != kinds_.size()) {
    throw ArgumentError("HilbertSpace: " + std::to_string(dims_.size()) +
                        " dims but " + std::to_string(kinds_.size()) +
                        " labels");
  }
  const std::size_t cap = tolerances().dimension_cap;
  for (std::size_t d : dims_) {
    if (d == 0) throw ArgumentError("HilbertSpace: subsystem dimension 0");
    if (total_ > cap / d) {
      throw CapacityError("HilbertSpace: total dimension exceeds cap of " +
                          std::to_string(cap));
    }
    total_ *= d;
  }
}

HilbertSpace HilbertSpace::single(std::size_t dim, SubsystemKind kind) {
  return HilbertSpace({dim}, {kind});
}

HilbertSpace HilbertSpace::uniform(std::size_t count, std::size_t dim,
                                   SubsystemKind kind) {
  return HilbertSpace(std::vector<std::size_t>(count, dim),
                      std::vector<SubsystemKind>(count, kind));
}

HilbertSpace HilbertSpace::concat(const HilbertSpace& other) const {
  auto dims = dims_;
  auto kinds = kinds_;
  dims.insert(dims.end(), other.dims_.begin(), other.dims_.end());
  kinds.insert(kinds.end(), other.kinds_.begin(), other.kinds_.end());
  return HilbertSpace(std::move(dims), std::move(kinds));
}

HilbertSpace HilbertSpace::select(std::span<const std::size_t> indices) const {
  std::vector<std::size_t> dims;
  std::vector<SubsystemKind> kinds;
  for (std::size_t i : indices) {
    if (i >= dims_.size()) {
      throw ArgumentError("HilbertSpace: subsystem index " + std::to_string(i) +
                          " out of range");
    }
    dims.push_back(dims_[i]);
    kinds.push_back(kinds_[i]);
  }
  return HilbertSpace(std::move(dims), std::move(kinds));
}

HilbertSpace HilbertSpace::with_kind(std::size_t i, SubsystemKind kind) const {
  HilbertSpace out = *this;
  out.kinds_.at(i) = kind;
  return out;
}

std::size_t HilbertSpace::index_of(std::span<const std::size_t> digits) const {
  if (digits.size() != dims_.size()) {
    throw ArgumentError("HilbertSpace: wrong number of digits");
  }
  std::size_t index = 0;
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (digits[i] >= dims_[i]) throw ArgumentError("HilbertSpace: digit out of range");
    index = index * dims_[i] + digits[i];
  }
  return index;
}

std::vector<std::size_t> HilbertSpace::digits_of(std::size_t index) const {
  std::vector<std::size_t> digits(dims_.size());
  for (std::size_t i = dims_.size(); i-- > 0;) {
    digits[i] = index % dims_[i];
    index /= dims_[i];
  }
  return digits;
}

}  // namespace qnet
