#include "qnet/cli/config.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "qnet/errors.hpp"
#include "strict_json.hpp"

namespace qnet::cli {

using repeater::NodeKind;
using repeater::Scenario;

const std::vector<EnsemblePreset>& ensemble_presets() {
  static const std::vector<EnsemblePreset> table = [] {
    std::vector<EnsemblePreset> t;
    ensemble::EnsembleParams cs;
    cs.n_atoms = 100000;
    cs.p_excite = 0.01;
    cs.memory_lifetime = 20e-6;
    cs.dephasing_lifetime = 20e-6;
    cs.readout_efficiency = 0.5;
    cs.n_max = 2;
    t.push_back({"cold-cesium", cs, "laser-cooled Cs cloud, ~20 us memory, 50% retrieval"});
    ensemble::EnsembleParams ideal;
    ideal.p_excite = 0.01;
    ideal.memory_lifetime = std::numeric_limits<double>::infinity();
    ideal.dephasing_lifetime = std::numeric_limits<double>::infinity();
    ideal.readout_efficiency = 1.0;
    t.push_back({"ideal", ideal, "no decoherence, unit retrieval"});
    return t;
  }();
  return table;
}

const std::vector<DetectorPreset>& detector_presets() {
  static const std::vector<DetectorPreset> table = {
      {"apd", {0.5, 1e-6}, "silicon APD at 852 nm with gated dark counts"},
      {"ideal", {1.0, 0.0}, "unit efficiency, no dark counts"},
  };
  return table;
}

const std::vector<LinkPreset>& link_presets() {
  static const std::vector<LinkPreset> table = [] {
    std::vector<LinkPreset> t;
    channel::OpticalLink lab;
    lab.length = 3.0;
    lab.attenuation = 3.0;
    t.push_back({"lab-fiber", lab, "3 m of 852 nm fiber at 3 dB/km"});
    channel::OpticalLink tel;
    tel.length = 1000.0;
    tel.attenuation = 0.2;
    t.push_back({"telecom-km", tel, "1 km at 0.2 dB/km"});
    t.push_back({"ideal", channel::OpticalLink{}, "lossless, zero length"});
    return t;
  }();
  return table;
}

const std::vector<ProtocolPreset>& protocol_presets() {
  static const std::vector<ProtocolPreset> table = [] {
    std::vector<ProtocolPreset> t;
    repeater::ProtocolConfig p;
    p.attempt_period = 1e-6;
    p.max_trials = 1000000;
    p.memory_budget = std::numeric_limits<double>::infinity();
    p.max_restarts = 1000;
    p.feed_forward = true;
    t.push_back({"default", p, "1 MHz attempts, no memory cutoff"});
    return t;
  }();
  return table;
}

const std::vector<RunPreset>& run_presets() {
  static const std::vector<RunPreset> table = [] {
    std::vector<RunPreset> t;
    repeater::ScenarioConfig r;
    t.push_back({"default", r, "1000 repetitions, one worker"});
    repeater::ScenarioConfig quick = r;
    quick.repetitions = 100;
    quick.shots = 2000;
    t.push_back({"quick", quick, "100 repetitions for smoke runs"});
    return t;
  }();
  return table;
}

namespace {

template <class Table>
const auto& lookup(const Table& table, const std::string& name, const std::string& path) {
  for (const auto& e : table) {
    if (e.name == name) return e;
  }
  std::string names;
  for (const auto& e : table) names += (names.empty() ? "" : ", ") + e.name;
  throw ConfigError(path, "unknown preset '" + name + "' (known: " + names + ")");
}

const cavity::Preset& cavity_preset(const std::string& name, const std::string& path) {
  try {
    return cavity::preset(name);
  } catch (const ArgumentError&) {
    std::string names;
    for (const auto& p : cavity::presets()) names += (names.empty() ? "" : ", ") + p.name;
    throw ConfigError(path, "unknown preset '" + name + "' (known: " + names + ")");
  }
}

NodeKind kind_from_string(const std::string& s, const std::string& path) {
  for (NodeKind k : {NodeKind::EnsemblePair, NodeKind::Cavity, NodeKind::DetectorStation}) {
    if (s == repeater::to_string(k)) return k;
  }
  throw ConfigError(path, "unknown node kind '" + s +
                              "' (known: ensemble-pair, cavity, detector-station)");
}

const char* mode_name(cavity::Mode m) { return m == cavity::Mode::Ideal ? "ideal" : "integrated"; }

void read_ensemble(const ordered_json& j, const std::string& path, ensemble::EnsembleParams& p) {
  Obj o(j, path,
        {"n_atoms", "p_excite", "write_phase", "memory_lifetime", "dephasing_lifetime",
         "readout_efficiency", "n_max"});
  o.uint("n_atoms", p.n_atoms);
  o.num("p_excite", p.p_excite);
  o.num("write_phase", p.write_phase);
  o.num("memory_lifetime", p.memory_lifetime);
  o.num("dephasing_lifetime", p.dephasing_lifetime);
  o.num("readout_efficiency", p.readout_efficiency);
  o.uint("n_max", p.n_max);
}

void read_detector(const ordered_json& j, const std::string& path, channel::Detector& d) {
  Obj o(j, path, {"efficiency", "dark_count_prob"});
  o.num("efficiency", d.efficiency);
  o.num("dark_count_prob", d.dark_count_prob);
  checked(path, [&] { d.validate(); });
}

void read_detectors(const ordered_json& j, const std::string& path,
                    std::pair<channel::Detector, channel::Detector>& d) {
  Obj o(j, path, {"d1", "d2"});
  if (o.has("d1")) read_detector(o.raw("d1"), o.at("d1"), d.first);
  if (o.has("d2")) read_detector(o.raw("d2"), o.at("d2"), d.second);
}

void read_cavity(const ordered_json& j, const std::string& path, cavity::CavityParams& c) {
  Obj o(j, path, {"g", "kappa", "gamma", "omega_c", "omega_a", "n_max"});
  o.num("g", c.g);
  o.num("kappa", c.kappa);
  o.num("gamma", c.gamma);
  o.num("omega_c", c.omega_c);
  o.num("omega_a", c.omega_a);
  o.uint("n_max", c.n_max);
}

void read_link(const ordered_json& j, const std::string& path, channel::OpticalLink& l) {
  Obj o(j, path, {"from", "to", "preset", "length", "attenuation", "extra_phase",
                  "phase_jitter_std"});
  o.num("length", l.length);
  o.num("attenuation", l.attenuation);
  o.num("extra_phase", l.extra_phase);
  o.num("phase_jitter_std", l.phase_jitter_std);
}

/// "a.b.c" into segments; a segment naming a node id selects that node of
/// topology.nodes, a number selects an array element.
void apply_override(ordered_json& doc, const std::string& key, const ordered_json& value) {
  const std::string path = "overrides." + key;
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string part; std::getline(ss, part, '.');) {
    if (part.empty()) throw ConfigError(path, "empty path segment");
    parts.push_back(part);
  }
  if (parts.empty()) throw ConfigError(path, "empty override path");
  ordered_json* cur = &doc;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::string& p = parts[i];
    const bool last = i + 1 == parts.size();
    if (cur->is_array()) {
      ordered_json* next = nullptr;
      for (auto& e : *cur) {
        if (e.is_object() && e.contains("id") && e["id"] == p) next = &e;
      }
      if (!next && p.find_first_not_of("0123456789") == std::string::npos) {
        const std::size_t idx = std::stoul(p);
        if (idx < cur->size()) next = &(*cur)[idx];
      }
      if (!next) throw ConfigError(path, "no element '" + p + "'");
      if (last) throw ConfigError(path, "cannot replace a whole element");
      cur = next;
    } else {
      if (cur->is_null()) *cur = ordered_json::object();
      if (!cur->is_object()) throw ConfigError(path, "'" + p + "' is not inside an object");
      if (last) {
        (*cur)[p] = value;
      } else {
        cur = &(*cur)[p];
      }
    }
  }
}

}  // namespace

ordered_json number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return x;
}

RunConfig parse_config(const ordered_json& input, std::optional<std::uint64_t> seed,
                       std::optional<Scenario> scenario) {
  ordered_json doc = input;
  Obj top(doc, "",
          {"scenario", "seed", "presets", "topology", "protocol", "run", "overrides", "reference",
           "output"});
  if (top.has("overrides") && !doc["overrides"].is_object()) {
    throw ConfigError("overrides", "expected an object");
  }
  RunConfig c;

  std::string scenario_name;
  top.str("scenario", scenario_name);
  if (!scenario_name.empty()) {
    c.scenario = repeater::scenario_from_string(scenario_name);
    if (scenario && *scenario != c.scenario) {
      throw ConfigError("scenario", "config is for '" + scenario_name + "' but the command is '" +
                                        repeater::to_string(*scenario) + "'");
    }
  } else if (scenario) {
    c.scenario = *scenario;
  } else {
    throw ConfigError("scenario", "missing");
  }

  if (seed) {
    c.seed = *seed;
  } else if (top.has("seed")) {
    top.uint("seed", c.seed);
  } else {
    throw ConfigError("seed", "required (in the config or with --seed)");
  }

  if (top.has("presets")) {
    Obj p(doc["presets"], "presets", {"ensemble", "detector", "link", "cavity", "protocol", "run"});
    p.str("ensemble", c.presets.ensemble);
    p.str("detector", c.presets.detector);
    p.str("link", c.presets.link);
    p.str("cavity", c.presets.cavity);
    p.str("protocol", c.presets.protocol);
    p.str("run", c.presets.run);
  }
  lookup(ensemble_presets(), c.presets.ensemble, "presets.ensemble");
  lookup(detector_presets(), c.presets.detector, "presets.detector");
  lookup(link_presets(), c.presets.link, "presets.link");
  cavity_preset(c.presets.cavity, "presets.cavity");

  // Overrides act on the document before the strict read.
  if (doc.contains("overrides")) {
    const ordered_json ov = doc["overrides"];
    doc.erase("overrides");
    for (auto it = ov.begin(); it != ov.end(); ++it) apply_override(doc, it.key(), it.value());
  }

  // Topology.
  if (!doc.contains("topology")) throw ConfigError("topology", "missing");
  Obj topo(doc["topology"], "topology", {"nodes", "links"});
  if (!topo.has("nodes") || !topo.raw("nodes").is_array()) {
    throw ConfigError("topology.nodes", "expected an array");
  }
  const auto& nodes = topo.raw("nodes");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const std::string path = "topology.nodes[" + std::to_string(i) + "]";
    Obj n(nodes[i], path, {"id", "kind", "preset", "ensemble", "detectors", "cavity"});
    repeater::NodeSpec spec;
    n.str("id", spec.id);
    if (!n.has("id")) throw ConfigError(n.at("id"), "missing");
    if (!n.has("kind")) throw ConfigError(n.at("kind"), "missing");
    std::string kind;
    n.str("kind", kind);
    spec.kind = kind_from_string(kind, n.at("kind"));
    std::string preset;
    switch (spec.kind) {
      case NodeKind::EnsemblePair: {
        if (n.has("cavity")) throw ConfigError(n.at("cavity"), "not allowed for ensemble-pair");
        preset = c.presets.ensemble;
        n.str("preset", preset);
        spec.ensemble = lookup(ensemble_presets(), preset, n.at("preset")).params;
        const auto& det = lookup(detector_presets(), c.presets.detector, "presets.detector");
        spec.detectors = {det.detector, det.detector};
        if (n.has("ensemble")) read_ensemble(n.raw("ensemble"), n.at("ensemble"), spec.ensemble);
        checked(n.at("ensemble"), [&] { spec.ensemble.validate(); });
        if (n.has("detectors")) read_detectors(n.raw("detectors"), n.at("detectors"), spec.detectors);
        break;
      }
      case NodeKind::DetectorStation: {
        for (const char* k : {"ensemble", "cavity"}) {
          if (n.has(k)) throw ConfigError(n.at(k), "not allowed for detector-station");
        }
        preset = c.presets.detector;
        n.str("preset", preset);
        const auto& det = lookup(detector_presets(), preset, n.at("preset"));
        spec.detectors = {det.detector, det.detector};
        if (n.has("detectors")) read_detectors(n.raw("detectors"), n.at("detectors"), spec.detectors);
        break;
      }
      case NodeKind::Cavity: {
        for (const char* k : {"ensemble", "detectors"}) {
          if (n.has(k)) throw ConfigError(n.at(k), "not allowed for cavity");
        }
        preset = c.presets.cavity;
        n.str("preset", preset);
        spec.cavity = cavity_preset(preset, n.at("preset")).params;
        if (n.has("cavity")) read_cavity(n.raw("cavity"), n.at("cavity"), spec.cavity);
        checked(n.at("cavity"), [&] { spec.cavity.validate(); });
        break;
      }
    }
    c.topology.nodes.push_back(std::move(spec));
    c.node_presets.push_back(preset);
  }
  if (topo.has("links")) {
    if (!topo.raw("links").is_array()) throw ConfigError("topology.links", "expected an array");
    const auto& links = topo.raw("links");
    for (std::size_t i = 0; i < links.size(); ++i) {
      const std::string path = "topology.links[" + std::to_string(i) + "]";
      Obj l(links[i], path, {"from", "to", "preset", "length", "attenuation", "extra_phase",
                             "phase_jitter_std"});
      repeater::LinkSpec spec;
      if (!l.has("from")) throw ConfigError(l.at("from"), "missing");
      if (!l.has("to")) throw ConfigError(l.at("to"), "missing");
      l.str("from", spec.from);
      l.str("to", spec.to);
      std::string preset = c.presets.link;
      l.str("preset", preset);
      spec.link = lookup(link_presets(), preset, l.at("preset")).link;
      read_link(links[i], path, spec.link);
      c.topology.links.push_back(std::move(spec));
      c.link_presets.push_back(preset);
    }
  }
  c.topology.validate();

  // Protocol.
  c.run = lookup(run_presets(), c.presets.run, "presets.run").run;
  c.run.protocol = lookup(protocol_presets(), c.presets.protocol, "presets.protocol").protocol;
  if (top.has("protocol")) {
    Obj p(doc["protocol"], "protocol",
          {"attempt_period", "max_trials", "memory_budget", "max_restarts", "feed_forward"});
    p.num("attempt_period", c.run.protocol.attempt_period);
    p.uint("max_trials", c.run.protocol.max_trials);
    p.num("memory_budget", c.run.protocol.memory_budget);
    p.uint("max_restarts", c.run.protocol.max_restarts);
    p.boolean("feed_forward", c.run.protocol.feed_forward);
  }
  checked("protocol", [&] { c.run.protocol.validate(); });
  c.run.protocol.rng_seed = c.seed;
  c.run.scenario = c.scenario;

  // Run options.
  if (top.has("run")) {
    Obj r(doc["run"], "run",
          {"repetitions", "workers", "shots", "record_events", "path", "cavity_mode",
           "pulse_duration", "pulse_samples", "dt", "emission_probability", "input_theta",
           "input_phi"});
    r.uint("repetitions", c.run.repetitions);
    r.uint("workers", c.run.workers);
    r.uint("shots", c.run.shots);
    r.boolean("record_events", c.run.record_events);
    if (r.has("path")) {
      const auto& p = r.raw("path");
      if (!p.is_array()) throw ConfigError(r.at("path"), "expected an array of node ids");
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (!p[i].is_string()) {
          throw ConfigError("run.path[" + std::to_string(i) + "]", "expected a node id");
        }
        c.run.path.push_back(p[i].get<std::string>());
      }
    }
    std::string mode = mode_name(c.run.cavity_mode);
    r.str("cavity_mode", mode);
    if (mode == "ideal") {
      c.run.cavity_mode = cavity::Mode::Ideal;
    } else if (mode == "integrated") {
      c.run.cavity_mode = cavity::Mode::Integrated;
    } else {
      throw ConfigError(r.at("cavity_mode"), "expected 'ideal' or 'integrated'");
    }
    r.num("pulse_duration", c.run.pulse_duration);
    r.uint("pulse_samples", c.run.pulse_samples);
    r.num("dt", c.run.dt);
    r.num("emission_probability", c.run.emission_probability);
    r.num("input_theta", c.run.input_theta);
    r.num("input_phi", c.run.input_phi);
  }
  if (c.run.repetitions < 1) throw ConfigError("run.repetitions", "must be >= 1");
  if (c.run.shots < 1) throw ConfigError("run.shots", "must be >= 1");
  if (!(c.run.pulse_duration > 0.0) || !std::isfinite(c.run.pulse_duration)) {
    throw ConfigError("run.pulse_duration", "must be finite and > 0");
  }
  if (c.run.pulse_samples < 2) throw ConfigError("run.pulse_samples", "must be >= 2");
  if (!(c.run.dt > 0.0) || !std::isfinite(c.run.dt)) throw ConfigError("run.dt", "must be > 0");
  if (!(c.run.emission_probability >= 0.0 && c.run.emission_probability <= 1.0)) {
    throw ConfigError("run.emission_probability", "must lie in [0, 1]");
  }
  if (!std::isfinite(c.run.input_theta) || !std::isfinite(c.run.input_phi)) {
    throw ConfigError("run.input_theta", "input angles must be finite");
  }
  for (std::size_t i = 0; i < c.run.path.size(); ++i) {
    bool known = false;
    for (const auto& n : c.topology.nodes) known = known || n.id == c.run.path[i];
    if (!known) {
      throw ConfigError("run.path[" + std::to_string(i) + "]", "unknown node '" + c.run.path[i] + "'");
    }
  }

  if (doc.contains("reference")) {
    const auto& ref = doc["reference"];
    if (!ref.is_object()) throw ConfigError("reference", "expected an object");
    for (auto it = ref.begin(); it != ref.end(); ++it) {
      if (!it.value().is_number()) throw ConfigError("reference." + it.key(), "expected a number");
      c.run.reference.emplace_back(it.key(), it.value().get<double>());
    }
  }

  if (top.has("output")) {
    Obj o(doc["output"], "output", {"dir", "format"});
    o.str("dir", c.output.dir);
    o.str("format", c.output.format);
  }
  if (c.output.format != "json" && c.output.format != "csv") {
    throw ConfigError("output.format", "expected 'json' or 'csv'");
  }
  if (c.output.dir.empty()) throw ConfigError("output.dir", "must not be empty");
  return c;
}

RunConfig parse_config_file(const std::filesystem::path& path, std::optional<std::uint64_t> seed,
                            std::optional<Scenario> scenario) {
  return parse_config(read_json_file(path), seed, scenario);
}

ordered_json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config '" + path.string() + "'");
  try {
    return ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("", "invalid JSON in '" + path.string() + "': " + e.what());
  }
}

ordered_json serialize(const RunConfig& c) {
  ordered_json j;
  j["scenario"] = repeater::to_string(c.scenario);
  j["seed"] = c.seed;
  j["presets"] = {{"ensemble", c.presets.ensemble}, {"detector", c.presets.detector},
                  {"link", c.presets.link},         {"cavity", c.presets.cavity},
                  {"protocol", c.presets.protocol}, {"run", c.presets.run}};
  auto detector = [](const channel::Detector& d) {
    return ordered_json{{"efficiency", number(d.efficiency)},
                        {"dark_count_prob", number(d.dark_count_prob)}};
  };
  ordered_json nodes = ordered_json::array();
  for (std::size_t i = 0; i < c.topology.nodes.size(); ++i) {
    const auto& n = c.topology.nodes[i];
    ordered_json o;
    o["id"] = n.id;
    o["kind"] = repeater::to_string(n.kind);
    o["preset"] = c.node_presets.at(i);
    switch (n.kind) {
      case NodeKind::EnsemblePair: {
        const auto& e = n.ensemble;
        o["ensemble"] = {{"n_atoms", e.n_atoms},
                         {"p_excite", number(e.p_excite)},
                         {"write_phase", number(e.write_phase)},
                         {"memory_lifetime", number(e.memory_lifetime)},
                         {"dephasing_lifetime", number(e.dephasing_lifetime)},
                         {"readout_efficiency", number(e.readout_efficiency)},
                         {"n_max", e.n_max}};
        o["detectors"] = {{"d1", detector(n.detectors.first)},
                          {"d2", detector(n.detectors.second)}};
        break;
      }
      case NodeKind::DetectorStation:
        o["detectors"] = {{"d1", detector(n.detectors.first)},
                          {"d2", detector(n.detectors.second)}};
        break;
      case NodeKind::Cavity: {
        const auto& p = n.cavity;
        o["cavity"] = {{"g", number(p.g)},           {"kappa", number(p.kappa)},
                       {"gamma", number(p.gamma)},   {"omega_c", number(p.omega_c)},
                       {"omega_a", number(p.omega_a)}, {"n_max", p.n_max}};
        break;
      }
    }
    nodes.push_back(o);
  }
  ordered_json links = ordered_json::array();
  for (std::size_t i = 0; i < c.topology.links.size(); ++i) {
    const auto& l = c.topology.links[i];
    links.push_back({{"from", l.from},
                     {"to", l.to},
                     {"preset", c.link_presets.at(i)},
                     {"length", number(l.link.length)},
                     {"attenuation", number(l.link.attenuation)},
                     {"extra_phase", number(l.link.extra_phase)},
                     {"phase_jitter_std", number(l.link.phase_jitter_std)}});
  }
  j["topology"] = {{"nodes", nodes}, {"links", links}};
  const auto& p = c.run.protocol;
  j["protocol"] = {{"attempt_period", number(p.attempt_period)},
                   {"max_trials", p.max_trials},
                   {"memory_budget", number(p.memory_budget)},
                   {"max_restarts", p.max_restarts},
                   {"feed_forward", p.feed_forward}};
  const auto& r = c.run;
  j["run"] = {{"repetitions", r.repetitions},
              {"workers", r.workers},
              {"shots", r.shots},
              {"record_events", r.record_events},
              {"path", r.path},
              {"cavity_mode", mode_name(r.cavity_mode)},
              {"pulse_duration", number(r.pulse_duration)},
              {"pulse_samples", r.pulse_samples},
              {"dt", number(r.dt)},
              {"emission_probability", number(r.emission_probability)},
              {"input_theta", number(r.input_theta)},
              {"input_phi", number(r.input_phi)}};
  ordered_json ref = ordered_json::object();
  for (const auto& [name, value] : r.reference) ref[name] = value;
  j["reference"] = ref;
  j["output"] = {{"dir", c.output.dir}, {"format", c.output.format}};
  return j;
}

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) {
    out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return out.str();
}

std::string config_hash(const RunConfig& c) {
  ordered_json j = serialize(c);
  j.erase("output");
  return sha256_hex(j.dump());
}

}  // namespace qnet::cli
