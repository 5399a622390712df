#include "qnet/cli/app.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "qnet/cavity/cavity.hpp"
#include "qnet/errors.hpp"
#include "qnet/repeater/protocol.hpp"
#include "qnet/verify/verify.hpp"
#include "strict_json.hpp"

namespace qnet::cli {

namespace {

std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q += '"';
    q += ch;
  }
  return q + "\"";
}

ordered_json tool_block() { return {{"name", kToolName}, {"version", kToolVersion}}; }

ordered_json matrix_json(const CMatrix& m) {
  ordered_json re = ordered_json::array(), im = ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    ordered_json r = ordered_json::array(), c = ordered_json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      r.push_back(number(m(i, j).real()));
      c.push_back(number(m(i, j).imag()));
    }
    re.push_back(r);
    im.push_back(c);
  }
  return {{"re", re}, {"im", im}};
}

CMatrix read_real_block(const ordered_json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 4) throw ConfigError(path, "expected a 4 x 4 array");
  CMatrix m(4, 4);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& row = j[i];
    const std::string rp = path + "[" + std::to_string(i) + "]";
    if (!row.is_array() || row.size() != 4) throw ConfigError(rp, "expected 4 numbers");
    for (std::size_t k = 0; k < 4; ++k) {
      if (!row[k].is_number()) {
        throw ConfigError(rp + "[" + std::to_string(k) + "]", "expected a number");
      }
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = row[k].get<double>();
    }
  }
  return m;
}

DensityMatrix read_state(const ordered_json& j, const std::string& path) {
  Obj o(j, path, {"re", "im"});
  if (!o.has("re")) throw ConfigError(o.at("re"), "missing");
  CMatrix m = read_real_block(o.raw("re"), o.at("re"));
  if (o.has("im")) m += cplx(0.0, 1.0) * read_real_block(o.raw("im"), o.at("im"));
  DensityMatrix rho(HilbertSpace::uniform(2, 2, SubsystemKind::Field), m);
  checked(path, [&] { rho.validate(); });
  return rho;
}

double required_num(const Obj& o, const std::string& key) {
  if (!o.has(key)) throw ConfigError(o.at(key), "missing");
  double v = 0.0;
  o.num(key, v);
  return v;
}

void write_file(const std::filesystem::path& path, const std::string& data) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write '" + path.string() + "'");
  f << data;
  if (!f) throw Error("write failed for '" + path.string() + "'");
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void flatten(const ordered_json& j, const std::string& prefix, std::string& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) flatten(it.value(), join(prefix, it.key()), out);
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) {
      // Named records (links, stages) are keyed by their name.
      std::string key = std::to_string(i);
      if (j[i].is_object()) {
        for (const char* name : {"link", "stage", "name"}) {
          if (j[i].contains(name) && j[i][name].is_string()) {
            key = j[i][name].get<std::string>();
            break;
          }
        }
      }
      flatten(j[i], prefix + "[" + key + "]", out);
    }
  } else if (j.is_number_float()) {
    out += csv_field(prefix) + "," + fmt(j.get<double>()) + "\n";
  } else if (j.is_string()) {
    out += csv_field(prefix) + "," + csv_field(j.get<std::string>()) + "\n";
  } else {
    out += csv_field(prefix) + "," + j.dump() + "\n";
  }
}

}  // namespace

// ------------------------------------------------------------------ reports

ordered_json report_json(const repeater::SimReport& r, const RunConfig& config) {
  ordered_json j;
  j["tool"] = tool_block();
  j["config_sha256"] = config_hash(config);
  j["scenario"] = r.scenario;
  j["seed"] = r.seed;
  j["repetitions"] = r.repetitions;
  ordered_json links = ordered_json::array();
  for (const auto& l : r.links) {
    links.push_back({{"link", l.link},
                     {"samples", l.samples},
                     {"mean_trials", number(l.mean_trials)},
                     {"std_trials", number(l.std_trials)},
                     {"herald_probability", number(l.herald_probability)},
                     {"mean_time", number(l.mean_time)},
                     {"rate", number(l.rate)}});
  }
  j["links"] = links;
  ordered_json stages = ordered_json::array();
  for (const auto& s : r.stages) {
    stages.push_back({{"stage", s.stage},
                      {"simulated", number(s.simulated)},
                      {"std_error", number(s.std_error)},
                      {"analytic", number(s.analytic)}});
  }
  j["stages"] = stages;
  ordered_json metrics = ordered_json::object();
  for (const auto& m : r.metrics) metrics[m.name] = number(m.value);
  j["metrics"] = metrics;
  ordered_json imperfections = ordered_json::object();
  for (const auto& m : r.imperfections) imperfections[m.name] = number(m.value);
  j["imperfections"] = imperfections;

  ordered_json reference = ordered_json::object();
  for (const auto& m : r.reference) reference[m.name] = number(m.value);
  j["reference"] = reference;
  ordered_json comparison = ordered_json::array();
  for (const auto& ref : r.reference) {
    for (const auto& m : r.metrics) {
      if (m.name != ref.name) continue;
      ordered_json c{{"name", m.name},
                     {"simulated", number(m.value)},
                     {"reference", number(ref.value)},
                     {"difference", number(m.value - ref.value)}};
      bool bounded = false;
      for (const auto& u : r.reference) {
        if (u.name == ref.name + "_uncertainty") {
          c["uncertainty"] = number(u.value);
          c["within_uncertainty"] = std::abs(m.value - ref.value) <= u.value;
          bounded = true;
        }
      }
      if (!bounded) c["exceeds_reference"] = m.value > ref.value;
      comparison.push_back(c);
    }
  }
  j["comparison"] = comparison;
  j["counts"] = {{"trials", r.trials.size()}, {"events", r.events.size()}};
  ordered_json echo = serialize(config);
  echo.erase("output");
  j["config"] = echo;
  return j;
}

std::string trials_csv(const repeater::SimReport& r) {
  std::string s = "repetition,link,cumulative_trials,time,outcome\n";
  for (const auto& t : r.trials) {
    s += std::to_string(t.repetition) + "," + csv_field(t.link) + "," +
         std::to_string(t.cumulative_trials) + "," + fmt(t.time) + "," +
         channel::to_string(t.outcome) + "\n";
  }
  return s;
}

std::string events_csv(const repeater::SimReport& r) {
  std::string s = "repetition,time,node,kind,seq,detail\n";
  for (const auto& e : r.events) {
    s += std::to_string(e.repetition) + "," + fmt(e.time) + "," + csv_field(e.node) + "," +
         repeater::to_string(e.kind) + "," + std::to_string(e.seq) + "," + csv_field(e.detail) +
         "\n";
  }
  return s;
}

std::string flatten_csv(const ordered_json& doc) {
  std::string s = "field,value\n";
  flatten(doc, "", s);
  return s;
}

// ------------------------------------------------------ single computations

ordered_json calc_g(const ordered_json& doc) {
  Obj o(doc, "", {"dipole_moment", "omega_c", "mode_volume", "polarization_overlap"});
  const double mu = required_num(o, "dipole_moment");
  const double wc = required_num(o, "omega_c");
  const double v = required_num(o, "mode_volume");
  double overlap = 1.0;
  o.num("polarization_overlap", overlap);
  double g = 0.0;
  checked("", [&] { g = cavity::coupling_g(mu, wc, v, overlap); });
  return {{"dipole_moment", number(mu)},
          {"omega_c", number(wc)},
          {"mode_volume", number(v)},
          {"polarization_overlap", number(overlap)},
          {"g", number(g)},
          {"g_over_2pi", number(g / (2.0 * M_PI))}};
}

ordered_json calc_critical_numbers(const ordered_json& doc) {
  Obj o(doc, "", {"preset", "cavity"});
  if (!o.has("preset") && !o.has("cavity")) {
    throw ConfigError("preset", "give a preset name, cavity rates, or both");
  }
  cavity::CavityParams p;
  std::optional<cavity::Preset> preset;
  if (o.has("preset")) {
    std::string name;
    o.str("preset", name);
    checked("preset", [&] { preset = cavity::preset(name); });
    p = preset->params;
  }
  if (o.has("cavity")) {
    Obj c(o.raw("cavity"), "cavity", {"g", "kappa", "gamma"});
    c.num("g", p.g);
    c.num("kappa", p.kappa);
    c.num("gamma", p.gamma);
  }
  cavity::CriticalNumbers n{};
  checked("cavity", [&] {
    p.validate();
    n = cavity::critical_numbers(p);
  });
  ordered_json j;
  j["preset"] = preset ? preset->name : "";
  j["g"] = number(p.g);
  j["kappa"] = number(p.kappa);
  j["gamma"] = number(p.gamma);
  j["n0"] = number(n.n0);
  j["N0"] = number(n.N0);
  j["N0_over_n0"] = number(n.N0 / n.n0);
  j["kappa_over_gamma"] = number(p.kappa / p.gamma);
  j["strong_coupling"] = p.strong_coupling();
  if (preset) {
    j["target"] = {{"n0", number(preset->target.n0)}, {"N0", number(preset->target.N0)}};
    j["within_factor_3"] = cavity::matches_order_of_magnitude(n, preset->target, 3.0);
  }
  return j;
}

ordered_json calc_dimension(const ordered_json& doc) {
  Obj o(doc, "", {"k_nodes", "n_qubits"});
  std::uint64_t k = 0, n = 0;
  if (!o.has("k_nodes")) throw ConfigError("k_nodes", "missing");
  if (!o.has("n_qubits")) throw ConfigError("n_qubits", "missing");
  o.uint("k_nodes", k);
  o.uint("n_qubits", n);
  repeater::ConnectivityDimension d;
  checked("", [&] { d = repeater::connectivity_dimension(k, n); });
  return {{"k_nodes", k},
          {"n_qubits", n},
          {"classical", d.classical.str()},
          {"quantum", d.quantum.str()},
          {"quantum_log2", k * n}};
}

ordered_json verify_concurrence(const ordered_json& doc) {
  Obj o(doc, "", {"rho"});
  if (!o.has("rho")) throw ConfigError("rho", "missing");
  const DensityMatrix rho = read_state(o.raw("rho"), "rho");
  double c = 0.0;
  checked("rho", [&] { c = verify::concurrence(rho); });
  return {{"concurrence", number(c)},
          {"purity", number(rho.purity())},
          {"min_eigenvalue", number(rho.min_eigenvalue())}};
}

ordered_json verify_chsh(const ordered_json& doc) {
  Obj o(doc, "", {"rho", "angles_deg"});
  if (!o.has("rho")) throw ConfigError("rho", "missing");
  const DensityMatrix rho = read_state(o.raw("rho"), "rho");
  double a = 0.0, a2 = 45.0, b = 22.5, b2 = 67.5;
  if (o.has("angles_deg")) {
    Obj ang(o.raw("angles_deg"), "angles_deg", {"a", "a2", "b", "b2"});
    ang.num("a", a);
    ang.num("a2", a2);
    ang.num("b", b);
    ang.num("b2", b2);
    for (double x : {a, a2, b, b2}) {
      if (!std::isfinite(x)) throw ConfigError("angles_deg", "angles must be finite");
    }
  }
  const double deg = M_PI / 180.0;
  const auto settings = verify::chsh_settings(a * deg, a2 * deg, b * deg, b2 * deg);
  return {{"angles_deg", {{"a", number(a)}, {"a2", number(a2)}, {"b", number(b)}, {"b2", number(b2)}}},
          {"chsh", number(verify::chsh_value(rho, settings))},
          {"chsh_max", number(verify::max_chsh_value(rho))},
          {"classical_bound", 2.0},
          {"tsirelson_bound", number(2.0 * std::sqrt(2.0))}};
}

ordered_json verify_tomography(const ordered_json& doc, std::optional<std::uint64_t> seed) {
  Obj o(doc, "", {"rho", "shots", "counts"});
  const auto settings = verify::pauli_settings();
  verify::CountsTable table;
  std::optional<DensityMatrix> rho;
  if (o.has("counts") == o.has("rho")) {
    throw ConfigError("counts", "give either measured counts or a state to sample from");
  }
  if (o.has("rho")) {
    rho = read_state(o.raw("rho"), "rho");
    std::uint64_t shots = 10000;
    o.uint("shots", shots);
    if (shots < 1) throw ConfigError("shots", "must be >= 1");
    if (!seed) throw ConfigError("seed", "required to sample counts (use --seed)");
    RngStream rng(*seed);
    table = verify::simulate_counts(*rho, settings, shots, rng);
  } else {
    if (o.has("shots")) throw ConfigError("shots", "only used together with rho");
    Obj c(o.raw("counts"), "counts", {"shots", "table"});
    if (!c.has("shots")) throw ConfigError("counts.shots", "missing");
    c.uint("shots", table.shots);
    if (table.shots < 1) throw ConfigError("counts.shots", "must be >= 1");
    const auto& t = c.has("table") ? c.raw("table") : ordered_json();
    if (!t.is_array() || t.size() != settings.size()) {
      throw ConfigError("counts.table", "expected 9 rows (ZZ ZX ZY XZ XX XY YZ YX YY)");
    }
    table.settings = settings;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const std::string rp = "counts.table[" + std::to_string(i) + "]";
      if (!t[i].is_array() || t[i].size() != 4) throw ConfigError(rp, "expected 4 counts");
      std::array<std::uint64_t, 4> row{};
      std::uint64_t sum = 0;
      for (std::size_t k = 0; k < 4; ++k) {
        if (!t[i][k].is_number_unsigned() &&
            (!t[i][k].is_number_integer() || t[i][k].get<std::int64_t>() < 0)) {
          throw ConfigError(rp + "[" + std::to_string(k) + "]", "expected a count");
        }
        row[k] = t[i][k].get<std::uint64_t>();
        sum += row[k];
      }
      if (sum != table.shots) throw ConfigError(rp, "counts do not add up to shots");
      table.counts.push_back(row);
    }
  }
  verify::TomographyResult tr = [&] {
    try {
      return verify::tomography_reconstruct(table);
    } catch (const ArgumentError& e) {
      throw ConfigError("counts", e.what());
    }
  }();
  ordered_json j;
  j["shots"] = table.shots;
  j["estimate"] = matrix_json(tr.estimate.matrix());
  j["min_eigenvalue"] = number(tr.min_eigenvalue);
  j["clipped_mass"] = number(tr.clipped_mass);
  j["concurrence"] = number(verify::concurrence(tr.estimate));
  if (rho) j["fidelity_to_input"] = number(fidelity(tr.estimate, *rho));
  return j;
}

// ---------------------------------------------------------------- commands

namespace {

struct Options {
  std::string config;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::string out;
  CLI::Option* out_opt = nullptr;
  std::string format;
  CLI::Option* format_opt = nullptr;
  bool to_stdout = false;

  std::optional<std::uint64_t> seed_value() const {
    return seed_opt->count() ? std::optional<std::uint64_t>(seed) : std::nullopt;
  }
};

void add_options(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "JSON config file")->required();
  o.seed_opt = sub->add_option("--seed", o.seed, "Root random seed (overrides the config)");
  o.out_opt = sub->add_option("--out", o.out, "Output directory");
  o.format_opt = sub->add_option("--format", o.format, "Summary format")
                     ->check(CLI::IsMember({"json", "csv"}));
  sub->add_flag("--stdout", o.to_stdout, "Print the summary to stdout");
}

struct Emit {
  std::string dir;
  std::string format;
  bool to_stdout = false;
  bool write_files = true;
};

Emit resolve_emit(const Options& o, const OutputOptions& defaults) {
  Emit e{defaults.dir, defaults.format, o.to_stdout, true};
  if (o.out_opt->count()) e.dir = o.out;
  if (o.format_opt->count()) e.format = o.format;
  e.write_files = !o.to_stdout || o.out_opt->count() > 0;
  return e;
}

void emit(const Emit& e, const ordered_json& summary,
          const std::vector<std::pair<std::string, std::string>>& extra, double seconds,
          const std::string& started, std::ostream& out, std::ostream& err) {
  const std::string body = e.format == "json" ? summary.dump(2) + "\n" : flatten_csv(summary);
  if (e.to_stdout) out << body << std::flush;
  if (!e.write_files) return;
  const std::filesystem::path dir(e.dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create '" + dir.string() + "': " + ec.message());
  write_file(dir / (e.format == "json" ? "summary.json" : "summary.csv"), body);
  for (const auto& [name, data] : extra) write_file(dir / name, data);
  const ordered_json timing{{"started_utc", started}, {"wall_clock_seconds", seconds}};
  write_file(dir / "timing.json", timing.dump(2) + "\n");
  err << "wrote " << dir.string() << "\n";
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Photonic quantum-network simulator", kToolName};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1, 1);

  struct Leaf {
    CLI::App* app;
    std::function<int(const Options&)> run;
  };
  std::vector<std::unique_ptr<Options>> store;
  std::vector<Leaf> leaves;
  auto leaf = [&](CLI::App* parent, const std::string& name, const std::string& help,
                  std::function<int(const Options&)> fn) {
    store.push_back(std::make_unique<Options>());
    CLI::App* sub = parent->add_subcommand(name, help);
    add_options(sub, *store.back());
    leaves.push_back({sub, std::move(fn)});
  };

  auto scenario_cmd = [&](repeater::Scenario s) {
    return [&, s](const Options& o) {
      const std::string started = utc_now();
      const auto t0 = std::chrono::steady_clock::now();
      const RunConfig cfg = parse_config_file(o.config, o.seed_value(), s);
      const repeater::SimReport report = repeater::run_simulation(cfg.topology, cfg.run);
      const ordered_json summary = report_json(report, cfg);
      emit(resolve_emit(o, cfg.output), summary,
           {{"trials.csv", trials_csv(report)}, {"events.csv", events_csv(report)}},
           seconds_since(t0), started, out, err);
      return static_cast<int>(kExitOk);
    };
  };
  using Compute = std::function<ordered_json(const ordered_json&, std::optional<std::uint64_t>)>;
  auto compute_cmd = [&](Compute fn) {
    return [&, fn](const Options& o) {
      const std::string started = utc_now();
      const auto t0 = std::chrono::steady_clock::now();
      const ordered_json doc = read_json_file(o.config);
      ordered_json summary;
      summary["tool"] = tool_block();
      summary["config_sha256"] = sha256_hex(doc.dump());
      const ordered_json result = fn(doc, o.seed_value());
      for (auto it = result.begin(); it != result.end(); ++it) summary[it.key()] = it.value();
      emit(resolve_emit(o, OutputOptions{}), summary, {}, seconds_since(t0), started, out, err);
      return static_cast<int>(kExitOk);
    };
  };
  auto ignore_seed = [](ordered_json (*f)(const ordered_json&)) {
    return Compute([f](const ordered_json& d, std::optional<std::uint64_t>) { return f(d); });
  };

  using repeater::Scenario;
  leaf(&app, "herald", "Herald entanglement over one link", scenario_cmd(Scenario::HeraldOneLink));
  leaf(&app, "node-pair-bell", "Two-pair node qubits and Bell tests",
       scenario_cmd(Scenario::NodePairBell));
  leaf(&app, "swap-chain", "Three-node entanglement connection",
       scenario_cmd(Scenario::SwapChain));
  leaf(&app, "hybrid", "Cavity atom to ensemble entanglement", scenario_cmd(Scenario::Hybrid));
  leaf(&app, "cavity-transfer", "Node-to-node state transfer between cavities",
       scenario_cmd(Scenario::CavityTransfer));
  CLI::App* calc = app.add_subcommand("calc", "Single calculations");
  calc->require_subcommand(1, 1);
  leaf(calc, "g", "Atom-cavity coupling from physical inputs", compute_cmd(ignore_seed(calc_g)));
  leaf(calc, "critical-numbers", "Critical photon and atom numbers",
       compute_cmd(ignore_seed(calc_critical_numbers)));
  leaf(calc, "dimension", "Classical and quantum state-space dimension",
       compute_cmd(ignore_seed(calc_dimension)));
  CLI::App* ver = app.add_subcommand("verify", "Entanglement verification of a supplied state");
  ver->require_subcommand(1, 1);
  leaf(ver, "concurrence", "Wootters concurrence", compute_cmd(ignore_seed(verify_concurrence)));
  leaf(ver, "chsh", "CHSH value", compute_cmd(ignore_seed(verify_chsh)));
  leaf(ver, "tomography", "Linear-inversion tomography", compute_cmd(verify_tomography));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    for (const Leaf& l : leaves) {
      if (l.app->parsed()) {
        for (std::size_t i = 0; i < leaves.size(); ++i) {
          if (&leaves[i] == &l) return l.run(*store[i]);
        }
      }
    }
    err << "error: no command\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace qnet::cli
