#pragma once

#include <atomic>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "corrspace/analysis.hpp"

namespace corrspace {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

struct CouplingConfig {
  int wire_a = 0;
  int wire_b = 1;
  int column = 1;
  std::string op = "cz";
  std::vector<Complex> entries;  // 16 values when op = "matrix"
};

struct StageConfig {
  int wire = 0;
  ComplexMatrix target = ComplexMatrix::Identity(2, 2);
};

struct ExperimentConfig {
  // [resource]
  std::string family = "theta";  // theta | cluster
  double theta = M_PI / 8;
  int length = 0;  // 0: sized from the protocol budget where possible
  int wires = 1;
  std::optional<StateVector> left, right;
  std::vector<CouplingConfig> couplings;

  // [protocol]
  std::string mode = "general";  // simple | general | web
  double epsilon = 1e-3;

  // [target]
  std::string target_kind = "unitary";  // unitary | state | random
  ComplexMatrix target_unitary = ComplexMatrix::Identity(2, 2);
  StateVector target_state;  // dim 2 for single-wire prep, 2^wires for webs
  int target_count = 0;      // random targets

  // [stage] (web mode; appended in file order)
  std::vector<StageConfig> stages;

  // [analysis]
  std::string analysis_kind = "spectrum";
  int grid_points = 20;
  std::string observable = "x";  // x | z
  int min_distance = 2;
  int max_distance = 12;
  std::vector<double> epsilons{1e-1, 1e-2, 1e-3};

  // [simulate]
  std::string sim_basis = "m";  // m | computational

  // [oracle]
  std::string oracle_kind = "transcripts";  // transcripts | reject
  int oracle_cases = 200;
  int oracle_max_qubits = 14;

  // [run]
  int shots = 100;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int jobs = 0;  // 0: hardware concurrency
  std::string out_dir = "out";
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  size_t b = s.find_last_not_of(" \t\r\n");
  return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

inline std::string lowered(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline double parse_double(const std::string& v, const std::string& what) {
  size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument(fmt::format("config: {} is not a number ('{}')", what, v));
  }
  if (!trim(v.substr(used)).empty())
    throw std::invalid_argument(
        fmt::format("config: trailing characters after {} ('{}')", what, v));
  return out;
}

inline long long parse_int(const std::string& v, const std::string& what) {
  size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument(
        fmt::format("config: {} is not an integer ('{}')", what, v));
  }
  if (!trim(v.substr(used)).empty())
    throw std::invalid_argument(
        fmt::format("config: trailing characters after {} ('{}')", what, v));
  return out;
}

inline std::uint64_t parse_u64(const std::string& v, const std::string& what) {
  size_t used = 0;
  std::uint64_t out = 0;
  try {
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument(
        fmt::format("config: {} is not an unsigned integer ('{}')", what, v));
  }
  if (!trim(v.substr(used)).empty())
    throw std::invalid_argument(
        fmt::format("config: trailing characters after {} ('{}')", what, v));
  return out;
}

inline Complex parse_complex(const std::string& v, const std::string& what) {
  size_t comma = v.find(',');
  if (comma == std::string::npos)
    throw std::invalid_argument(
        fmt::format("config: {} entries must be 're,im' pairs ('{}')", what, v));
  return Complex(parse_double(trim(v.substr(0, comma)), what),
                 parse_double(trim(v.substr(comma + 1)), what));
}

inline std::vector<Complex> parse_complex_list(const std::string& v,
                                               const std::string& what) {
  std::vector<Complex> out;
  std::istringstream ss(v);
  std::string tok;
  while (ss >> tok) out.push_back(parse_complex(tok, what));
  if (out.empty())
    throw std::invalid_argument(fmt::format("config: {} has no entries", what));
  return out;
}

inline StateVector parse_state(const std::string& v, const std::string& what) {
  auto e = parse_complex_list(v, what);
  StateVector out(static_cast<Eigen::Index>(e.size()));
  for (size_t i = 0; i < e.size(); ++i) out(static_cast<Eigen::Index>(i)) = e[i];
  return out;
}

inline ComplexMatrix parse_gate(const std::string& v, const std::string& what) {
  if (v.find(',') != std::string::npos) {
    auto e = parse_complex_list(v, what);
    if (e.size() != 4)
      throw std::invalid_argument(
          fmt::format("config: {} must have 4 row-major entries", what));
    ComplexMatrix m(2, 2);
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c) m(r, c) = e[static_cast<size_t>(r) * 2 + c];
    return m;
  }
  std::string n = lowered(trim(v));
  if (n == "i" || n == "identity") return ComplexMatrix::Identity(2, 2);
  if (n == "h") return gates::H();
  if (n == "x") return gates::X();
  if (n == "y") return gates::Y();
  if (n == "z") return gates::Z();
  if (n.rfind("rz:", 0) == 0) return gates::rz(parse_double(n.substr(3), what));
  if (n.rfind("rx:", 0) == 0) return gates::rx(parse_double(n.substr(3), what));
  throw std::invalid_argument(fmt::format("config: unknown gate '{}' for {}", v, what));
}

inline std::vector<double> parse_double_list(const std::string& v,
                                             const std::string& what) {
  std::vector<double> out;
  std::istringstream ss(v);
  std::string tok;
  while (ss >> tok) out.push_back(parse_double(tok, what));
  if (out.empty())
    throw std::invalid_argument(fmt::format("config: {} has no entries", what));
  return out;
}

}  // namespace detail

inline ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    size_t hash = raw.find('#');
    if (hash != std::string::npos) raw = raw.substr(0, hash);
    std::string line = detail::trim(raw);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::invalid_argument(
            fmt::format("config line {}: malformed section header '{}'", lineno, line));
      section = detail::lowered(detail::trim(line.substr(1, line.size() - 2)));
      if (section == "coupling") cfg.couplings.emplace_back();
      else if (section == "stage") cfg.stages.emplace_back();
      else if (section != "resource" && section != "protocol" && section != "target" &&
               section != "analysis" && section != "simulate" && section != "oracle" &&
               section != "run")
        throw std::invalid_argument(
            fmt::format("config line {}: unknown section [{}]", lineno, section));
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(
          fmt::format("config line {}: expected 'key = value' ('{}')", lineno, line));
    std::string key = detail::lowered(detail::trim(line.substr(0, eq)));
    std::string val = detail::trim(line.substr(eq + 1));
    if (section.empty())
      throw std::invalid_argument(
          fmt::format("config line {}: key '{}' outside any section", lineno, key));
    std::string what = fmt::format("[{}] {}", section, key);

    if (section == "resource") {
      if (key == "family") cfg.family = detail::lowered(val);
      else if (key == "theta") cfg.theta = detail::parse_double(val, what);
      else if (key == "length") cfg.length = static_cast<int>(detail::parse_int(val, what));
      else if (key == "wires") cfg.wires = static_cast<int>(detail::parse_int(val, what));
      else if (key == "left") cfg.left = detail::parse_state(val, what);
      else if (key == "right") cfg.right = detail::parse_state(val, what);
      else throw std::invalid_argument(fmt::format("config: unknown key {}", what));
    } else if (section == "coupling") {
      auto& cp = cfg.couplings.back();
      if (key == "wire_a") cp.wire_a = static_cast<int>(detail::parse_int(val, what));
      else if (key == "wire_b") cp.wire_b = static_cast<int>(detail::parse_int(val, what));
      else if (key == "column") cp.column = static_cast<int>(detail::parse_int(val, what));
      else if (key == "op") {
        if (val.find(',') != std::string::npos) {
          cp.op = "matrix";
          cp.entries = detail::parse_complex_list(val, what);
          if (cp.entries.size() != 16)
            throw std::invalid_argument(
                fmt::format("config: {} matrix needs 16 row-major entries", what));
        } else {
          cp.op = detail::lowered(val);
        }
      } else throw std::invalid_argument(fmt::format("config: unknown key {}", what));
    } else if (section == "stage") {
      auto& st = cfg.stages.back();
      if (key == "wire") st.wire = static_cast<int>(detail::parse_int(val, what));
      else if (key == "unitary") st.target = detail::parse_gate(val, what);
      else throw std::invalid_argument(fmt::format("config: unknown key {}", what));
    } else if (section == "protocol") {
      if (key == "mode") cfg.mode = detail::lowered(val);
      else if (key == "epsilon") cfg.epsilon = detail::parse_double(val, what);
      else throw std::invalid_argument(fmt::format("config: unknown key {}", what));
    } else if (section == "target") {
      if (key == "kind") cfg.target_kind = detail::lowered(val);
      else if (key == "unitary") cfg.target_unitary = detail::parse_gate(val, what);
      else if (key == "state") cfg.target_state = detail::parse_state(val, what);
      else if (key == "count") cfg.target_count = static_cast<int>(detail::parse_int(val, what));
      else throw std::invalid_argument(fmt::format("config: unknown key {}", what));
    } else if (section == "analysis") {
      if (key == "kind") cfg.analysis_kind = detail::lowered(val);
      else if (key == "grid") cfg.grid_points = static_cast<int>(detail::parse_int(val, what));
      else if (key == "observable") cfg.observable = detail::lowered(val);
      else if (key == "min_distance") cfg.min_distance = static_cast<int>(detail::parse_int(val, what));
      else if (key == "max_distance") cfg.max_distance = static_cast<int>(detail::parse_int(val, what));
      else if (key == "epsilons") cfg.epsilons = detail::parse_double_list(val, what);
      else throw std::invalid_argument(fmt::format("config: unknown key {}", what));
    } else if (section == "simulate") {
      if (key == "basis") cfg.sim_basis = detail::lowered(val);
      else throw std::invalid_argument(fmt::format("config: unknown key {}", what));
    } else if (section == "oracle") {
      if (key == "kind") cfg.oracle_kind = detail::lowered(val);
      else if (key == "cases") cfg.oracle_cases = static_cast<int>(detail::parse_int(val, what));
      else if (key == "max_qubits") cfg.oracle_max_qubits = static_cast<int>(detail::parse_int(val, what));
      else throw std::invalid_argument(fmt::format("config: unknown key {}", what));
    } else if (section == "run") {
      if (key == "shots") cfg.shots = static_cast<int>(detail::parse_int(val, what));
      else if (key == "seed") {
        cfg.seed = detail::parse_u64(val, what);
        cfg.seed_set = true;
      } else if (key == "jobs") cfg.jobs = static_cast<int>(detail::parse_int(val, what));
      else if (key == "out") cfg.out_dir = val;
      else throw std::invalid_argument(fmt::format("config: unknown key {}", what));
    }
  }
  return cfg;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::invalid_argument(fmt::format("config: cannot open '{}'", path));
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

// cross-field checks applied after command-line overrides
inline void validate_config(const ExperimentConfig& cfg) {
  if (!cfg.seed_set)
    throw std::invalid_argument(
        "config: [run] seed is required (wall-clock seeding is not supported)");
  if (cfg.shots < 1) throw std::invalid_argument("config: [run] shots must be >= 1");
  if (cfg.wires < 1) throw std::invalid_argument("config: [resource] wires must be >= 1");
  if (cfg.family != "theta" && cfg.family != "cluster")
    throw std::invalid_argument(
        fmt::format("config: unknown resource family '{}'", cfg.family));
  if (cfg.mode != "simple" && cfg.mode != "general" && cfg.mode != "web")
    throw std::invalid_argument(fmt::format("config: unknown protocol mode '{}'", cfg.mode));
  if (!(cfg.epsilon > 0) || cfg.epsilon >= 1)
    throw std::invalid_argument("config: [protocol] epsilon must lie in (0,1)");
}

// ---------------------------------------------------------------------------
// resource construction
// ---------------------------------------------------------------------------

inline WireResource build_wire(const ExperimentConfig& cfg, int length) {
  if (cfg.family == "theta") return make_theta_wire(cfg.theta, length, cfg.left, cfg.right);
  if (cfg.family == "cluster") return make_cluster_wire(length, cfg.left, cfg.right);
  throw std::invalid_argument(fmt::format("config: unknown resource family '{}'", cfg.family));
}

inline std::shared_ptr<const WebResource> build_web(const ExperimentConfig& cfg,
                                                    int length) {
  std::vector<WireResource> wires;
  for (int w = 0; w < cfg.wires; ++w) wires.push_back(build_wire(cfg, length));
  std::vector<WebCoupling> couplings;
  for (const auto& cc : cfg.couplings) {
    WebCoupling cp;
    cp.wire_a = cc.wire_a;
    cp.wire_b = cc.wire_b;
    cp.column = cc.column;
    if (cc.op == "cz") {
      cp.op = cz_coupling();
      cp.label = "cz";
    } else if (cc.op == "matrix") {
      cp.op = ComplexMatrix(4, 4);
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) cp.op(r, c) = cc.entries[static_cast<size_t>(r) * 4 + c];
      cp.label = "matrix";
    } else {
      throw std::invalid_argument(fmt::format("config: unknown coupling op '{}'", cc.op));
    }
    couplings.push_back(std::move(cp));
  }
  return std::make_shared<const WebResource>(make_web(std::move(wires), std::move(couplings)));
}

// ---------------------------------------------------------------------------
// small shared utilities
// ---------------------------------------------------------------------------

namespace detail {

inline std::string num(double v) { return fmt::format("{:.12g}", v); }

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::invalid_argument(fmt::format("config: cannot write '{}'", p.string()));
  f << content;
}

struct Summary {
  std::string text;
  bool ok = true;
  void kv(const std::string& key, const std::string& value) {
    text += fmt::format("{} = {}\n", key, value);
  }
  void kv(const std::string& key, double value) { kv(key, num(value)); }
  void kv(const std::string& key, long long value) { kv(key, fmt::format("{}", value)); }
  void check(const std::string& name, bool pass, const std::string& what) {
    ok = ok && pass;
    text += fmt::format("check {} = {} ({})\n", name, pass ? "pass" : "fail", what);
  }
  int finish(const std::filesystem::path& dir) {
    int code = ok ? 0 : 1;
    text += fmt::format("exit = {}\n", code);
    write_file(dir / "summary.txt", text);
    return code;
  }
};

template <class Body>
inline void parallel_shots(int shots, int jobs, Body&& body) {
  if (jobs <= 0) jobs = static_cast<int>(std::thread::hardware_concurrency());
  if (jobs < 1) jobs = 1;
  jobs = std::min(jobs, shots);
  if (jobs <= 1) {
    for (int i = 0; i < shots; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex mu;
  std::exception_ptr first;
  std::vector<std::thread> pool;
  for (int t = 0; t < jobs; ++t)
    pool.emplace_back([&] {
      try {
        for (int i = next.fetch_add(1); i < shots; i = next.fetch_add(1)) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(mu);
        if (!first) first = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  if (first) std::rethrow_exception(first);
}

inline StateVector random_qubit_state(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  StateVector v(2);
  for (int i = 0; i < 2; ++i) v(i) = Complex(n(rng), n(rng));
  double norm = v.norm();
  if (norm < 1e-9) {
    v << 1, 0;
    return v;
  }
  return StateVector(v / norm);
}

inline double z99() {
  boost::math::normal norm01;
  return boost::math::quantile(norm01, 0.995);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// localize
// ---------------------------------------------------------------------------

struct LocalizePlan {
  ExperimentConfig cfg;
  std::shared_ptr<const WebResource> web;
  std::vector<MeasurementPattern> preps;                 // one per target
  std::vector<std::vector<MeasurementPattern>> stages;   // web mode
  StateVector joint_target;                              // web mode
  double r1 = 0.0;
  int l = 1;
  int length = 0;
};

inline LocalizePlan plan_localize(const ExperimentConfig& cfg) {
  LocalizePlan plan;
  plan.cfg = cfg;
  WireResource probe = build_wire(cfg, 1);
  plan.r1 = probe.canonical ? probe.canonical->r1 : 0.0;
  plan.l = plan.r1 > 0.0 ? required_trials(cfg.epsilon, plan.r1) : 1;

  if (cfg.mode == "web") {
    if (cfg.stages.empty())
      throw std::invalid_argument("config: web mode needs at least one [stage] section");
    plan.stages.resize(static_cast<size_t>(cfg.wires));
    for (const auto& st : cfg.stages) {
      if (st.wire < 0 || st.wire >= cfg.wires)
        throw std::invalid_argument(
            fmt::format("config: [stage] wire {} outside [0,{})", st.wire, cfg.wires));
      plan.stages[static_cast<size_t>(st.wire)].push_back(
          compile_unitary(probe, st.target, cfg.epsilon));
    }
    for (const auto& s : plan.stages)
      if (s.empty())
        throw std::invalid_argument("config: every wire needs at least one [stage]");
    if (cfg.target_kind != "state" || cfg.target_state.size() != (Eigen::Index(1) << cfg.wires))
      throw std::invalid_argument(
          "config: web mode needs [target] kind=state with 2^wires entries");
    if (cfg.target_state.norm() < 1e-12)
      throw std::invalid_argument("config: [target] state must not be zero");
    plan.joint_target = cfg.target_state.normalized();
    int length = cfg.length;
    if (length <= 0) {
      for (const auto& s : plan.stages) {
        MeasurementPattern total;
        for (const auto& p : s) total.declared_length += p.declared_length;
        length = std::max(length, recommended_wire_length(probe, total, cfg.epsilon));
      }
    }
    plan.length = length;
    plan.web = build_web(cfg, length);
    return plan;
  }

  if (cfg.wires != 1)
    throw std::invalid_argument(
        fmt::format("config: mode {} runs on a single wire", cfg.mode));
  if (cfg.mode == "simple" && plan.r1 > 0.0)
    throw std::invalid_argument(
        "config: mode simple needs a rank-one wire family (r1 = 0)");

  if (cfg.target_kind == "unitary") {
    plan.preps.push_back(compile_unitary(probe, cfg.target_unitary, cfg.epsilon));
  } else if (cfg.target_kind == "state") {
    if (cfg.target_state.size() != 2)
      throw std::invalid_argument("config: [target] state must have 2 entries");
    plan.preps.push_back(compile_prep(probe, cfg.target_state, cfg.epsilon));
  } else if (cfg.target_kind == "random") {
    if (cfg.target_count < 1)
      throw std::invalid_argument("config: [target] kind=random needs count >= 1");
    std::mt19937_64 trng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    for (int k = 0; k < cfg.target_count; ++k)
      plan.preps.push_back(
          compile_prep(probe, detail::random_qubit_state(trng), cfg.epsilon));
  } else {
    throw std::invalid_argument(
        fmt::format("config: unknown target kind '{}'", cfg.target_kind));
  }

  int length = cfg.length;
  if (length <= 0)
    for (const auto& p : plan.preps)
      length = std::max(length, recommended_wire_length(probe, p, cfg.epsilon));
  plan.length = length;
  plan.web = std::make_shared<const WebResource>(single_wire_web(build_wire(cfg, length)));
  return plan;
}

inline int run_localize(const LocalizePlan& plan) {
  const ExperimentConfig& cfg = plan.cfg;
  std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  const int shots = cfg.shots;
  const bool web_mode = cfg.mode == "web";
  const int m = web_mode ? cfg.wires : 1;

  struct Shot {
    std::vector<LocalizationResult> rs;
    int filter_records = 0;
    bool aborted = false;
    std::string abort_reason;
  };
  std::vector<Shot> shot_data(static_cast<size_t>(shots));

  detail::parallel_shots(shots, cfg.jobs, [&](int i) {
    Shot& sh = shot_data[static_cast<size_t>(i)];
    SimState sim(plan.web, shot_stream(cfg.seed, static_cast<std::uint64_t>(i)));
    try {
      if (web_mode) {
        sh.rs = localize_web(sim, plan.stages, cfg.epsilon, plan.joint_target);
      } else {
        const auto& prep = plan.preps[static_cast<size_t>(i) % plan.preps.size()];
        sh.rs.push_back(cfg.mode == "simple"
                            ? localize_simple(sim, 0, prep)
                            : localize_general(sim, 0, prep, cfg.epsilon));
      }
    } catch (const std::runtime_error& e) {
      sh.aborted = true;  // the protocol's own stochastic failure mode
      sh.abort_reason = e.what();
    }
    for (const auto& rec : sim.transcript())
      if (rec.op_label == "filter") ++sh.filter_records;
  });

  int aborted = 0;
  for (const auto& sh : shot_data) aborted += sh.aborted ? 1 : 0;
  if (aborted == shots)
    throw std::runtime_error(fmt::format(
        "localize: every shot aborted (first reason: {})", shot_data[0].abort_reason));

  // report CSV: one row per shot; the required (shot, trials, success) prefix
  std::string report = web_mode
                           ? "shot,trials,success,joint_fidelity\n"
                           : "shot,trials,success,host_site,trials_phase1,trials_phase2,"
                             "fidelity,note\n";
  std::string wires_csv =
      "shot,wire,trials,success,host_site,trials_phase1,trials_phase2,fidelity\n";
  std::vector<LocalizationResult> flat;
  int succeeded = 0, first_trial = 0, all_filter_records = 0;
  double min_fid = 2.0;
  for (int i = 0; i < shots; ++i) {
    const Shot& sh = shot_data[static_cast<size_t>(i)];
    all_filter_records += sh.filter_records;
    if (sh.aborted) {
      report += web_mode ? fmt::format("{},0,0,0\n", i)
                         : fmt::format("{},0,0,0,0,0,0,aborted: {}\n", i, sh.abort_reason);
      continue;
    }
    int trials = 0;
    bool ok = true;
    for (const auto& r : sh.rs) {
      trials += r.trials_used;
      ok = ok && r.succeeded;
      flat.push_back(r);
    }
    if (ok) {
      ++succeeded;
      min_fid = std::min(min_fid, sh.rs[0].fidelity);
    }
    if (!web_mode) {
      const auto& r = sh.rs[0];
      if (r.host_site > 0 && r.trials_phase1 == 1) ++first_trial;
      report += fmt::format("{},{},{},{},{},{},{},{}\n", i, trials, ok ? 1 : 0,
                            r.host_site, r.trials_phase1, r.trials_phase2,
                            detail::num(r.fidelity), r.note);
    } else {
      report += fmt::format("{},{},{},{}\n", i, trials, ok ? 1 : 0,
                            detail::num(ok ? sh.rs[0].fidelity : 0.0));
      for (int w = 0; w < m; ++w) {
        const auto& r = sh.rs[static_cast<size_t>(w)];
        wires_csv += fmt::format("{},{},{},{},{},{},{},{}\n", i, w, r.trials_used,
                                 r.succeeded ? 1 : 0, r.host_site, r.trials_phase1,
                                 r.trials_phase2, detail::num(r.fidelity));
      }
    }
  }
  detail::write_file(dir / "localize_report.csv", report);
  if (web_mode) detail::write_file(dir / "localize_wires.csv", wires_csv);

  // trial histogram CSV pooled over phases (and wires, for webs)
  {
    std::string stats = "phase,trial,count,expected_probability\n";
    int l = plan.l;
    std::vector<long long> h1(static_cast<size_t>(l) + 1, 0),
        h2(static_cast<size_t>(l) + 1, 0);
    for (const auto& r : flat) {
      if (plan.r1 == 0.0) {
        h1[0] += r.host_site > 0 ? 1 : 0;
        h2[0] += r.succeeded ? 1 : 0;
        continue;
      }
      h1[static_cast<size_t>(r.host_site > 0 ? r.trials_phase1 - 1 : l)]++;
      if (r.host_site > 0) h2[static_cast<size_t>(r.succeeded ? r.trials_phase2 - 1 : l)]++;
    }
    for (int phase = 1; phase <= 2; ++phase) {
      const auto& h = phase == 1 ? h1 : h2;
      for (int k = 0; k <= (plan.r1 == 0.0 ? 0 : l); ++k) {
        double pk = plan.r1 == 0.0
                        ? 1.0
                        : (k < l ? std::pow(plan.r1, k) * (1.0 - plan.r1)
                                 : std::pow(plan.r1, l));
        stats += fmt::format("{},{},{},{}\n", phase, k < l ? k + 1 : -1, h[static_cast<size_t>(k)],
                             detail::num(pk));
      }
    }
    detail::write_file(dir / "localize_stats.csv", stats);
  }

  detail::Summary s;
  s.kv("command", std::string("localize"));
  s.kv("family", cfg.family);
  if (cfg.family == "theta") s.kv("theta", cfg.theta);
  s.kv("mode", cfg.mode);
  s.kv("wires", static_cast<long long>(m));
  s.kv("length", static_cast<long long>(plan.length));
  s.kv("epsilon", cfg.epsilon);
  s.kv("r1", plan.r1);
  s.kv("trial_budget", static_cast<long long>(plan.l));
  s.kv("shots", static_cast<long long>(shots));
  s.kv("seed", fmt::format("{}", cfg.seed));
  s.kv("aborted", static_cast<long long>(aborted));
  s.kv("succeeded", static_cast<long long>(succeeded));
  double p_hat = double(succeeded) / shots;
  s.kv("success_rate", p_hat);

  s.check("fidelity", succeeded > 0 && min_fid >= 1.0 - 1e-9,
          succeeded > 0 ? fmt::format("min success fidelity {}", detail::num(min_fid))
                        : "no successful shots");

  if (plan.r1 == 0.0) {
    bool single = true;
    for (const auto& r : flat) single = single && r.trials_used == 1;
    s.check("trivial_protocol",
            single && all_filter_records == 0 && succeeded == shots - aborted,
            fmt::format("single-trial shots with {} filter records", all_filter_records));
  } else {
    int completed = shots - aborted;
    double expected = 1.0 - std::pow(plan.r1, plan.l);
    s.kv("expected_success", expected);
    if (completed >= 100 && !web_mode) {
      std::vector<LocalizationResult> singles;
      for (const auto& sh : shot_data)
        if (!sh.aborted) singles.push_back(sh.rs[0]);
      auto st = success_stats(singles, plan.r1, plan.l);
      s.kv("p_phase1", st.p_phase1);
      s.kv("p_phase2", st.p_phase2);
      s.kv("ci_half_width", st.ci_half);
      s.kv("chi_square", st.chi_square);
      s.kv("chi_p_value", st.p_value);
      s.check("phase1_in_ci", st.expected_in_ci,
              fmt::format("p1 {} vs {} +- {}", detail::num(st.p_phase1),
                          detail::num(st.expected), detail::num(st.ci_half)));
      s.check("trial_histogram", st.p_value > 0.01,
              fmt::format("chi-square p {}", detail::num(st.p_value)));
      double f_hat = double(first_trial) / completed;
      double p0 = 1.0 - plan.r1;
      double half = detail::z99() * std::sqrt(p0 * (1.0 - p0) / completed);
      s.kv("first_trial_rate", f_hat);
      s.check("first_trial_in_ci", std::abs(f_hat - p0) <= half,
              fmt::format("{} vs {} +- {}", detail::num(f_hat), detail::num(p0),
                          detail::num(half)));
    }
    if (web_mode && completed >= 100) {
      double p0 = std::pow(expected, 2 * m);
      double half = detail::z99() * std::sqrt(p0 * (1.0 - p0) / completed) + 1e-15;
      double joint_hat = double(succeeded) / completed;
      s.kv("expected_joint_success", p0);
      s.check("joint_success_in_ci", std::abs(joint_hat - p0) <= half,
              fmt::format("{} vs {} +- {}", detail::num(joint_hat), detail::num(p0),
                          detail::num(half)));
    }
  }
  return s.finish(dir);
}

// ---------------------------------------------------------------------------
// simulate: measure every site of the resource in a fixed basis
// ---------------------------------------------------------------------------

inline int run_simulate(const ExperimentConfig& cfg) {
  if (cfg.length < 1)
    throw std::invalid_argument("config: [resource] length must be set for simulate");
  if (cfg.sim_basis != "m" && cfg.sim_basis != "computational")
    throw std::invalid_argument(
        fmt::format("config: unknown simulate basis '{}'", cfg.sim_basis));
  auto web = build_web(cfg, cfg.length);
  std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);

  struct Row {
    std::string outcomes;
    double probability = 1.0;
    long long ones = 0;
  };
  std::vector<Row> rows(static_cast<size_t>(cfg.shots));
  detail::parallel_shots(cfg.shots, cfg.jobs, [&](int i) {
    SimState sim(web, shot_stream(cfg.seed, static_cast<std::uint64_t>(i)));
    Row& row = rows[static_cast<size_t>(i)];
    row.outcomes.assign(static_cast<size_t>(web->total_sites()), '.');
    bool progressed = true;
    while (progressed) {
      progressed = false;
      for (int w = 0; w < web->wire_count(); ++w) {
        int c = sim.cursor(w);
        if (c > web->wires[w].length() || !sim.can_consume(w)) continue;
        MeasurementOp op =
            cfg.sim_basis == "m"
                ? basis_measurement(w, c, web->wires[w].canonical->m_basis, "basis:m",
                                    {"m0", "m1"})
                : computational_measurement(w, c);
        const auto& rec = sim.apply_measurement(op);
        row.outcomes[static_cast<size_t>(web->flat_index(w, c))] =
            rec.outcome ? '1' : '0';
        row.ones += rec.outcome;
        progressed = true;
      }
    }
    row.probability = sim.branch_probability();
  });

  std::string csv = "shot,outcomes,branch_probability\n";
  double mean_p = 0;
  long long ones = 0;
  for (int i = 0; i < cfg.shots; ++i) {
    const Row& r = rows[static_cast<size_t>(i)];
    csv += fmt::format("{},{},{}\n", i, r.outcomes, detail::num(r.probability));
    mean_p += r.probability / cfg.shots;
    ones += r.ones;
  }
  detail::write_file(dir / "simulate_transcript.csv", csv);

  detail::Summary s;
  s.kv("command", std::string("simulate"));
  s.kv("family", cfg.family);
  if (cfg.family == "theta") s.kv("theta", cfg.theta);
  s.kv("wires", static_cast<long long>(cfg.wires));
  s.kv("length", static_cast<long long>(cfg.length));
  s.kv("basis", cfg.sim_basis);
  s.kv("shots", static_cast<long long>(cfg.shots));
  s.kv("seed", fmt::format("{}", cfg.seed));
  s.kv("mean_branch_probability", mean_p);
  s.kv("ones_fraction",
       double(ones) / (double(cfg.shots) * web->total_sites()));
  return s.finish(dir);
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

inline int run_analyze(const ExperimentConfig& cfg) {
  std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  detail::Summary s;
  s.kv("command", std::string("analyze"));
  s.kv("kind", cfg.analysis_kind);

  if (cfg.analysis_kind == "spectrum") {
    if (cfg.grid_points < 2)
      throw std::invalid_argument("config: [analysis] grid must be >= 2");
    std::string csv = "theta,r1,xi_spectral,xi_closed_form\n";
    double worst = 0;
    double cluster_xi = -1;
    for (int k = 1; k <= cfg.grid_points; ++k) {
      double theta = (M_PI / 4) * k / cfg.grid_points;
      auto w = make_theta_wire(theta, 2);
      double r1 = w.canonical->r1;
      auto sp = correlation_length(w);
      double closed = r1 > 0.0 ? -2.0 / std::log(r1) : 0.0;
      csv += fmt::format("{},{},{},{}\n", detail::num(theta), detail::num(r1),
                         detail::num(sp.xi), detail::num(closed));
      worst = std::max(worst, std::abs(std::exp(-1.0 / sp.xi) - std::sqrt(r1)));
      if (k == cfg.grid_points) cluster_xi = sp.xi;
    }
    detail::write_file(dir / "spectrum.csv", csv);
    s.kv("grid_points", static_cast<long long>(cfg.grid_points));
    s.kv("max_closed_form_residual", worst);
    s.check("closed_form", worst <= 1e-9,
            fmt::format("max |e^(-1/xi) - sqrt(r1)| = {}", detail::num(worst)));
    s.check("cluster_point", cluster_xi == 0.0,
            fmt::format("xi at theta=pi/4 is {}", detail::num(cluster_xi)));
    return s.finish(dir);
  }

  if (cfg.analysis_kind == "correlator") {
    int length = cfg.length > 0 ? cfg.length : 40;
    if (cfg.min_distance < 1 || cfg.max_distance < cfg.min_distance)
      throw std::invalid_argument("config: [analysis] bad distance window");
    if (cfg.observable != "x" && cfg.observable != "z")
      throw std::invalid_argument("config: [analysis] observable must be x or z");
    ComplexMatrix o = cfg.observable == "x" ? gates::X() : gates::Z();
    auto w = build_wire(cfg, length);
    std::string csv = "distance,correlator\n";
    double largest = 0;
    for (int d = cfg.min_distance; d <= cfg.max_distance; ++d) {
      double c = two_point_correlator(w, o, 3, 3 + d);
      largest = std::max(largest, std::abs(c));
      csv += fmt::format("{},{}\n", d, detail::num(c));
    }
    detail::write_file(dir / "correlator.csv", csv);
    s.kv("family", cfg.family);
    if (cfg.family == "theta") s.kv("theta", cfg.theta);
    s.kv("observable", cfg.observable);
    s.kv("length", static_cast<long long>(length));
    if (cfg.family == "theta" && cfg.observable == "x" &&
        w.canonical->r1 > 0.0) {
      double xi = correlation_length(w).xi;
      auto fit = correlator_decay(w, o, cfg.min_distance, cfg.max_distance);
      s.kv("xi", xi);
      s.kv("fit_slope", fit.slope);
      s.kv("fit_points", static_cast<long long>(fit.points));
      s.check("decay_matches_xi", std::abs(fit.slope + 1.0 / xi) <= 0.05 / xi,
              fmt::format("slope {} vs -1/xi {}", detail::num(fit.slope),
                          detail::num(-1.0 / xi)));
    } else {
      s.kv("max_abs_correlator", largest);
      s.check("vanishing", largest <= 1e-10,
              fmt::format("max |correlator| = {}", detail::num(largest)));
    }
    return s.finish(dir);
  }

  if (cfg.analysis_kind == "entropy") {
    int length = cfg.length > 0 ? cfg.length : 10;
    auto w = build_wire(cfg, length);
    std::string csv = "site,entropy\n";
    double lo = 2.0, hi = -1.0;
    for (int site = 1; site <= length; ++site) {
      double h = local_entropy(w, site);
      lo = std::min(lo, h);
      hi = std::max(hi, h);
      csv += fmt::format("{},{}\n", site, detail::num(h));
    }
    detail::write_file(dir / "entropy.csv", csv);
    s.kv("family", cfg.family);
    if (cfg.family == "theta") s.kv("theta", cfg.theta);
    s.kv("length", static_cast<long long>(length));
    s.kv("min_entropy", lo);
    s.kv("max_entropy", hi);
    s.check("range", lo >= 0.0 && hi <= 1.0 + 1e-12,
            fmt::format("entropies within [{}, {}]", detail::num(lo), detail::num(hi)));
    if (cfg.family == "cluster") {
      double mid = local_entropy(w, (length + 1) / 2);
      s.check("maximally_mixed", std::abs(mid - 1.0) <= 1e-9,
              fmt::format("bulk entropy {}", detail::num(mid)));
    }
    return s.finish(dir);
  }

  if (cfg.analysis_kind == "filter-algebra") {
    std::vector<double> r1s;
    for (int k = 0; k <= 9; ++k) r1s.push_back(k / 10.0);
    r1s.push_back(std::cos(M_PI / 4));
    std::string csv = "r1,completeness_residual,fbar_second_singular\n";
    double worst_c = 0, worst_s = 0;
    for (double r1 : r1s) {
      auto f = build_filter(r1);
      ComplexMatrix total =
          f.F.adjoint() * f.F + f.Fbar.adjoint() * f.Fbar - ComplexMatrix::Identity(2, 2);
      double comp = total.cwiseAbs().maxCoeff();
      Eigen::JacobiSVD<ComplexMatrix> svd(f.Fbar);
      double sigma2 = svd.singularValues()(1);
      worst_c = std::max(worst_c, comp);
      worst_s = std::max(worst_s, sigma2);
      csv += fmt::format("{},{},{}\n", detail::num(r1), detail::num(comp),
                         detail::num(sigma2));
    }
    detail::write_file(dir / "filter_algebra.csv", csv);
    s.kv("points", static_cast<long long>(r1s.size()));
    s.kv("max_completeness_residual", worst_c);
    s.kv("max_fbar_second_singular", worst_s);
    s.check("completeness", worst_c <= 1e-12,
            fmt::format("max residual {}", detail::num(worst_c)));
    s.check("fbar_rank_one", worst_s <= 1e-12,
            fmt::format("max second singular value {}", detail::num(worst_s)));
    return s.finish(dir);
  }

  if (cfg.analysis_kind == "trials-bound") {
    if (cfg.grid_points < 2)
      throw std::invalid_argument("config: [analysis] grid must be >= 2");
    std::string csv = "epsilon,theta,r1,xi,required_trials,xi_bound\n";
    bool all_ok = true;
    for (double eps : cfg.epsilons) {
      for (int k = 1; k <= cfg.grid_points; ++k) {
        double theta = (M_PI / 4) * k / cfg.grid_points;
        double r1 = make_theta_wire(theta, 1).canonical->r1;
        double xi = r1 > 0.0 ? -2.0 / std::log(r1) : 0.0;
        int l = required_trials(eps, r1);
        double bound = 0.5 * std::log(1.0 / eps) * xi - 1.0;
        all_ok = all_ok && l >= bound - 1e-9;
        csv += fmt::format("{},{},{},{},{},{}\n", detail::num(eps), detail::num(theta),
                           detail::num(r1), detail::num(xi), l, detail::num(bound));
      }
    }
    detail::write_file(dir / "trials_bound.csv", csv);
    s.kv("grid_points", static_cast<long long>(cfg.grid_points));
    s.kv("epsilons", static_cast<long long>(cfg.epsilons.size()));
    s.check("xi_bound", all_ok, "required_trials >= ln(1/eps)*xi/2 - 1 across the grid");
    return s.finish(dir);
  }

  throw std::invalid_argument(
      fmt::format("config: unknown analysis kind '{}'", cfg.analysis_kind));
}

// ---------------------------------------------------------------------------
// compile: write the adaptive pattern for the configured target
// ---------------------------------------------------------------------------

inline int run_compile(const ExperimentConfig& cfg) {
  WireResource probe = build_wire(cfg, 1);
  MeasurementPattern pat;
  if (cfg.target_kind == "unitary") {
    pat = compile_unitary(probe, cfg.target_unitary, cfg.epsilon);
  } else if (cfg.target_kind == "state") {
    if (cfg.target_state.size() != 2)
      throw std::invalid_argument("config: [target] state must have 2 entries");
    pat = compile_prep(probe, cfg.target_state, cfg.epsilon);
  } else {
    throw std::invalid_argument(
        fmt::format("config: compile cannot use target kind '{}'", cfg.target_kind));
  }

  std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  std::string text = "# corrspace pattern v1\n";
  text += fmt::format("family = {}\n", pat.family);
  text += fmt::format("theta = {:.17g}\n", pat.theta);
  text += fmt::format("epsilon = {:.17g}\n", pat.epsilon);
  text += fmt::format("declared_length = {}\n", pat.declared_length);
  text += fmt::format("frame_x = {}\n", pat.initial_frame.x_power);
  text += fmt::format("frame_z = {}\n", pat.initial_frame.z_power);
  std::string target;
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c)
      target += fmt::format("{}{:.17g},{:.17g}", target.empty() ? "" : " ",
                            pat.target(r, c).real(), pat.target(r, c).imag());
  text += fmt::format("target = {}\n", target);
  text += fmt::format("slots = {}\n", pat.plan.size());
  for (size_t k = 0; k < pat.plan.size(); ++k)
    text += fmt::format("slot {} = {:.17g}\n", k, pat.plan[k]);
  detail::write_file(dir / "pattern.txt", text);

  detail::Summary s;
  s.kv("command", std::string("compile"));
  s.kv("family", pat.family);
  s.kv("theta", pat.theta);
  s.kv("epsilon", pat.epsilon);
  s.kv("slots", static_cast<long long>(pat.plan.size()));
  s.kv("declared_length", static_cast<long long>(pat.declared_length));
  return s.finish(dir);
}

// ---------------------------------------------------------------------------
// oracle-check: dense-state certification sweeps
// ---------------------------------------------------------------------------

struct OracleCaseReport {
  int qubits = 0;
  int steps = 0;
  double max_tv = 0.0;
};

struct OracleSweep {
  std::vector<OracleCaseReport> cases;
  double max_tv = 0.0;
};

// random mixed-operation transcripts on small wires/webs, certified step by
// step against the dense expansion
inline OracleSweep run_oracle_sweep(int cases, int max_qubits, std::uint64_t seed,
                                    int jobs) {
  if (cases < 1) throw std::invalid_argument("oracle sweep: need at least one case");
  if (max_qubits < 4 || max_qubits > 20)
    throw std::invalid_argument("oracle sweep: max_qubits must lie in [4,20]");
  OracleSweep sweep;
  sweep.cases.resize(static_cast<size_t>(cases));
  detail::parallel_shots(cases, jobs, [&](int i) {
    std::mt19937_64 rng = shot_stream(seed, static_cast<std::uint64_t>(i));
    std::uniform_real_distribution<double> uth(0.15, M_PI / 4);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    bool two_wires = i % 3 == 2 && max_qubits >= 8;
    int n = two_wires
                ? 2 + static_cast<int>(rng() % static_cast<std::uint64_t>(max_qubits / 2 - 1))
                : 3 + static_cast<int>(rng() % static_cast<std::uint64_t>(max_qubits - 2));
    auto one_wire = [&]() {
      return i % 2 == 0 ? make_cluster_wire(n) : make_theta_wire(uth(rng), n);
    };
    std::shared_ptr<const WebResource> web;
    if (two_wires) {
      int col = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(std::max(1, n - 1)));
      auto wa = one_wire();
      web = std::make_shared<const WebResource>(
          make_web({wa, wa}, {WebCoupling{0, 1, col, cz_coupling()}}));
    } else {
      web = std::make_shared<const WebResource>(single_wire_web(one_wire()));
    }

    OracleCaseReport& rep = sweep.cases[static_cast<size_t>(i)];
    rep.qubits = web->total_sites();
    SimState sim(web, shot_stream(seed ^ 0x5bd1e995ULL, static_cast<std::uint64_t>(i)));
    auto probe = [&]() {
      rep.max_tv = std::max(rep.max_tv, sim.oracle_check(max_qubits));
      ++rep.steps;
    };
    probe();
    auto retained_on = [&](int w) {
      int c = 0;
      for (const auto& s : sim.retained()) c += s.wire == w ? 1 : 0;
      return c;
    };
    bool progressed = true;
    while (progressed) {
      progressed = false;
      for (int w = 0; w < web->wire_count(); ++w) {
        if (sim.cursor(w) > web->wires[w].length() || !sim.can_consume(w)) continue;
        double u = u01(rng);
        if (u < 0.2 && retained_on(w) == 0) {
          sim.retain_site(w);
        } else {
          int c = sim.cursor(w);
          MeasurementOp op =
              u < 0.6 ? computational_measurement(w, c)
                      : basis_measurement(w, c, web->wires[w].canonical->m_basis,
                                          "basis:m", {"m0", "m1"});
          sim.apply_measurement(op);
        }
        probe();
        progressed = true;
        // retained sites are measured out with 40% probability per sweep;
        // a passed filter leaves its site retained for later operations
        if (!sim.retained().empty() && u01(rng) < 0.4) {
          auto site = sim.retained().front();
          const auto& canon = *web->wires[site.wire].canonical;
          MeasurementOp op =
              canon.r1 > 0.0 && u01(rng) < 0.5
                  ? retained_povm(site.wire, site.column,
                                  filter_kraus(build_filter(canon.r1), canon.m_basis),
                                  "filter", {"pass", "reject"})
                  : retained_povm(site.wire, site.column,
                                  {canon.m_basis.col(0) * canon.m_basis.col(0).adjoint(),
                                   canon.m_basis.col(1) * canon.m_basis.col(1).adjoint()},
                                  "basis:m", {"m0", "m1"});
          sim.apply_measurement(op);
          probe();
        }
      }
    }
    while (!sim.retained().empty()) {
      auto site = sim.retained().front();
      const auto& canon = *web->wires[site.wire].canonical;
      sim.apply_measurement(retained_povm(
          site.wire, site.column,
          {canon.m_basis.col(0) * canon.m_basis.col(0).adjoint(),
           canon.m_basis.col(1) * canon.m_basis.col(1).adjoint()},
          "basis:m", {"m0", "m1"}));
      probe();
    }
  });
  for (const auto& rep : sweep.cases) sweep.max_tv = std::max(sweep.max_tv, rep.max_tv);
  return sweep;
}

struct RejectCaseReport {
  double theta = 0.0;
  double schmidt = 0.0;
  double restart_tv = 1.0;
};

struct RejectSweep {
  std::vector<RejectCaseReport> cases;
  double min_schmidt = 1.0;
  double max_restart_tv = 0.0;
};

// force the filter's reject outcome and certify that the measured site
// factors out and the recovered wire restarts cleanly
inline RejectSweep run_reject_sweep(int cases, double theta, int length,
                                    double epsilon, std::uint64_t seed, int jobs) {
  if (cases < 1) throw std::invalid_argument("reject sweep: need at least one case");
  if (length < 6 || length > 14)
    throw std::invalid_argument("reject sweep: length must lie in [6,14]");
  auto probe = make_theta_wire(theta, 1);
  if (probe.canonical->r1 <= 0.0)
    throw std::invalid_argument("reject sweep: the filter never rejects at r1 = 0");
  RejectSweep sweep;
  sweep.cases.resize(static_cast<size_t>(cases));
  detail::parallel_shots(cases, jobs, [&](int i) {
    std::mt19937_64 rng = shot_stream(seed, static_cast<std::uint64_t>(i));
    StateVector v = detail::random_qubit_state(rng);
    auto web = std::make_shared<const WebResource>(
        single_wire_web(make_theta_wire(theta, length, v)));
    const auto& canon = *web->wires[0].canonical;
    SimState sim(web, shot_stream(seed ^ 0x2545f491ULL, static_cast<std::uint64_t>(i)));
    sim.retain_site(0);
    auto filt = detail::filter_measurement(0, 1, build_filter(canon.r1), canon.m_basis);
    sim.apply_measurement(filt, 1);  // forced reject

    RejectCaseReport& rep = sweep.cases[static_cast<size_t>(i)];
    rep.theta = theta;

    // Schmidt coefficient of the measured site against everything else
    StateVector psi = sim.dense_reference(length);
    Eigen::Index rest = psi.size() / 2;
    ComplexMatrix m(2, rest);
    for (int a = 0; a < 2; ++a)
      for (Eigen::Index k = 0; k < rest; ++k) m(a, k) = psi(a * rest + k);
    Eigen::JacobiSVD<ComplexMatrix> svd(m);
    rep.schmidt = svd.singularValues()(0) / psi.norm();

    // recovery pattern, then compare distributions against a fresh wire that
    // carries the frame-corrected state
    auto ex = run_pattern(sim, 0, compile_output_map(web->wires[0], epsilon));
    if (!ex.succeeded)
      throw std::runtime_error(
          fmt::format("reject sweep: recovery failed ({})", ex.failure_reason));
    StateVector corrected =
        gates::pauli(ex.frame.x_power, ex.frame.z_power) * v;
    int rest_sites = sim.remaining(0);
    auto fresh_web = std::make_shared<const WebResource>(
        single_wire_web(make_theta_wire(theta, rest_sites, corrected.normalized())));
    SimState fresh(fresh_web, shot_stream(seed ^ 0x27d4eb2fULL, static_cast<std::uint64_t>(i)));
    rep.restart_tv = 0.0;
    for (const ComplexMatrix& basis :
         {ComplexMatrix(ComplexMatrix::Identity(2, 2)), ComplexMatrix(canon.m_basis)}) {
      auto a = sim.outcome_distribution(
          basis_measurement(0, sim.cursor(0), basis, "probe"));
      auto b = fresh.outcome_distribution(
          basis_measurement(0, fresh.cursor(0), basis, "probe"));
      rep.restart_tv =
          std::max(rep.restart_tv, 0.5 * (std::abs(a[0] - b[0]) + std::abs(a[1] - b[1])));
    }
  });
  for (const auto& rep : sweep.cases) {
    sweep.min_schmidt = std::min(sweep.min_schmidt, rep.schmidt);
    sweep.max_restart_tv = std::max(sweep.max_restart_tv, rep.restart_tv);
  }
  return sweep;
}

inline int run_oracle_check(const ExperimentConfig& cfg) {
  std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  detail::Summary s;
  s.kv("command", std::string("oracle-check"));
  s.kv("kind", cfg.oracle_kind);
  s.kv("seed", fmt::format("{}", cfg.seed));

  if (cfg.oracle_kind == "transcripts") {
    auto sweep = run_oracle_sweep(cfg.oracle_cases, cfg.oracle_max_qubits, cfg.seed,
                                  cfg.jobs);
    std::string csv = "case,qubits,steps,max_tv\n";
    for (size_t i = 0; i < sweep.cases.size(); ++i)
      csv += fmt::format("{},{},{},{:.3e}\n", i, sweep.cases[i].qubits,
                         sweep.cases[i].steps, sweep.cases[i].max_tv);
    detail::write_file(dir / "oracle.csv", csv);
    s.kv("cases", static_cast<long long>(sweep.cases.size()));
    s.kv("max_qubits", static_cast<long long>(cfg.oracle_max_qubits));
    s.kv("max_tv", fmt::format("{:.3e}", sweep.max_tv));
    s.check("per_step_tv", sweep.max_tv <= 1e-9,
            fmt::format("max per-step TV {:.3e}", sweep.max_tv));
    return s.finish(dir);
  }

  if (cfg.oracle_kind == "reject") {
    int length = cfg.length > 0 ? cfg.length : 12;
    auto sweep = run_reject_sweep(cfg.oracle_cases, cfg.theta, length, cfg.epsilon,
                                  cfg.seed, cfg.jobs);
    std::string csv = "case,theta,schmidt,restart_tv\n";
    for (size_t i = 0; i < sweep.cases.size(); ++i)
      csv += fmt::format("{},{},{:.12g},{:.3e}\n", i, detail::num(sweep.cases[i].theta),
                         sweep.cases[i].schmidt, sweep.cases[i].restart_tv);
    detail::write_file(dir / "oracle.csv", csv);
    s.kv("cases", static_cast<long long>(sweep.cases.size()));
    s.kv("min_schmidt", fmt::format("{:.12g}", sweep.min_schmidt));
    s.kv("max_restart_tv", fmt::format("{:.3e}", sweep.max_restart_tv));
    s.check("factorization", sweep.min_schmidt >= 1.0 - 1e-10,
            fmt::format("min Schmidt coefficient {:.12g}", sweep.min_schmidt));
    s.check("restart", sweep.max_restart_tv <= 1e-9,
            fmt::format("max restart TV {:.3e}", sweep.max_restart_tv));
    return s.finish(dir);
  }

  throw std::invalid_argument(
      fmt::format("config: unknown oracle kind '{}'", cfg.oracle_kind));
}

}  // namespace corrspace
