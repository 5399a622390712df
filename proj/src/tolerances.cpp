#include "qnet/tolerances.hpp"

namespace qnet {
namespace {
Tolerances g_tolerances;
}

const Tolerances& tolerances() noexcept { return g_tolerances; }
void set_tolerances(const Tolerances& t) noexcept { g_tolerances = t; }

}  // namespace qnet
