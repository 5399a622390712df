#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace qnet {

/// Role of one tensor factor.
enum class SubsystemKind { Atom, CollectiveSpin, Field };

std::string to_string(SubsystemKind kind);

/// Ordered tensor product of finite-dimensional subsystems.
///
/// Basis index convention: subsystem 0 is the most significant digit, so for
/// two qubits |01> has index 1 and |10> has index 2.
class HilbertSpace {
 public:
  /// The trivial one-dimensional space (no subsystems).
  HilbertSpace() = default;
  HilbertSpace(std::vector<std::size_t> dims, std::vector<SubsystemKind> kinds);

  static HilbertSpace single(std::size_t dim, SubsystemKind kind);
  /// `count` copies of the same subsystem.
  static HilbertSpace uniform(std::size_t count, std::size_t dim,
                              SubsystemKind kind);

  std::size_t size() const noexcept { return dims_.size(); }
  std::size_t dim(std::size_t i) const { return dims_.at(i); }
  SubsystemKind kind(std::size_t i) const { return kinds_.at(i); }
  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  const std::vector<SubsystemKind>& kinds() const noexcept { return kinds_; }
  std::size_t total_dimension() const noexcept { return total_; }

  /// Tensor product space (this first). Throws CapacityError above the cap.
  HilbertSpace concat(const HilbertSpace& other) const;
  /// Subspace of the listed subsystems, in the listed order.
  HilbertSpace select(std::span<const std::size_t> indices) const;
  HilbertSpace with_kind(std::size_t i, SubsystemKind kind) const;

  /// Basis index of a multi-index (one digit per subsystem).
  std::size_t index_of(std::span<const std::size_t> digits) const;
  std::vector<std::size_t> digits_of(std::size_t index) const;

  bool operator==(const HilbertSpace&) const = default;

 private:
  std::vector<std::size_t> dims_;
  std::vector<SubsystemKind> kinds_;
  std::size_t total_ = 1;
};

}  // namespace qnet
