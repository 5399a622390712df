#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "qnet/cli/config.hpp"
#include "qnet/repeater/simulation.hpp"

namespace qnet::cli {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitRuntime = 2 };

/// Summary JSON of a scenario run. Fixed key order; contains no wall-clock
/// data, so identical inputs give identical bytes.
ordered_json report_json(const repeater::SimReport& report, const RunConfig& config);

/// One row per heralding click: repetition, link, cumulative_trials, time, outcome.
std::string trials_csv(const repeater::SimReport& report);
/// One row per event: repetition, time, node, kind, seq, detail.
std::string events_csv(const repeater::SimReport& report);
/// Any JSON document flattened to `field,value` rows with dotted field names.
std::string flatten_csv(const ordered_json& doc);

// Single computations. Each takes the parsed config document and checks it
// strictly.
ordered_json calc_g(const ordered_json& doc);
ordered_json calc_critical_numbers(const ordered_json& doc);
ordered_json calc_dimension(const ordered_json& doc);
ordered_json verify_concurrence(const ordered_json& doc);
ordered_json verify_chsh(const ordered_json& doc);
/// `seed` is needed only when counts are simulated from a supplied state.
ordered_json verify_tomography(const ordered_json& doc, std::optional<std::uint64_t> seed);

/// Entire command line. Data goes to `out` (only with --stdout), diagnostics
/// to `err`. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace qnet::cli
