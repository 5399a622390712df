#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qnet/cavity/cavity.hpp"
#include "qnet/channel/channel.hpp"
#include "qnet/ensemble/ensemble.hpp"
#include "qnet/repeater/simulation.hpp"

namespace qnet::cli {

using ordered_json = nlohmann::ordered_json;

inline constexpr const char* kToolName = "qnet-sim";
inline constexpr const char* kToolVersion = "0.1.0";

// Named preset tables. Every default in a resolved config comes from one of
// these; the config names the table entry it starts from.
struct EnsemblePreset {
  std::string name;
  ensemble::EnsembleParams params;
  std::string note;
};
struct DetectorPreset {
  std::string name;
  channel::Detector detector;
  std::string note;
};
struct LinkPreset {
  std::string name;
  channel::OpticalLink link;
  std::string note;
};
struct ProtocolPreset {
  std::string name;
  repeater::ProtocolConfig protocol;
  std::string note;
};
struct RunPreset {
  std::string name;
  repeater::ScenarioConfig run;  // scenario, protocol, path and reference unused
  std::string note;
};

const std::vector<EnsemblePreset>& ensemble_presets();
const std::vector<DetectorPreset>& detector_presets();
const std::vector<LinkPreset>& link_presets();
const std::vector<ProtocolPreset>& protocol_presets();
const std::vector<RunPreset>& run_presets();

struct PresetSelection {
  std::string ensemble = "cold-cesium";
  std::string detector = "apd";
  std::string link = "lab-fiber";
  std::string cavity = "fabry-perot";
  std::string protocol = "default";
  std::string run = "default";
};

struct OutputOptions {
  std::string dir = "qnet-out";
  std::string format = "json";  // json or csv
};

/// A validated, fully resolved scenario run.
struct RunConfig {
  repeater::Scenario scenario = repeater::Scenario::HeraldOneLink;
  std::uint64_t seed = 0;
  PresetSelection presets;
  repeater::NetworkTopology topology;
  repeater::ScenarioConfig run;  // run.protocol.rng_seed == seed
  std::vector<std::string> node_presets;    // per node, preset the node started from
  std::vector<std::string> link_presets;    // per link
  OutputOptions output;
};

/// Parse a scenario config. Unknown keys, wrong types and out-of-range values
/// throw ConfigError with the path of the field. `seed` overrides the file;
/// one of the two must provide it. `scenario` (from the subcommand) must
/// agree with the file when both are given.
RunConfig parse_config(const ordered_json& doc, std::optional<std::uint64_t> seed = std::nullopt,
                       std::optional<repeater::Scenario> scenario = std::nullopt);
RunConfig parse_config_file(const std::filesystem::path& path,
                            std::optional<std::uint64_t> seed = std::nullopt,
                            std::optional<repeater::Scenario> scenario = std::nullopt);

/// Fully explicit config: every default filled in, overrides applied.
/// parse_config(serialize(c)) reproduces c.
ordered_json serialize(const RunConfig& config);

/// SHA-256 (hex) of the canonical serialization.
std::string config_hash(const RunConfig& config);
std::string sha256_hex(const std::string& data);

/// Read a JSON file. Throws ConfigError on I/O or syntax errors.
ordered_json read_json_file(const std::filesystem::path& path);

/// Numbers as JSON; non-finite values become the strings "inf", "-inf", "nan".
ordered_json number(double x);

}  // namespace qnet::cli
