#pragma once

/**
 * @file
 * @brief Scenario files (JSON), dotted-path overrides, the canonical resolved-config echo and
 * the run outputs trajectory.csv / metrics.json / config.resolved.json.
 */

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sim.hpp"

namespace dstrack::io {

using json = nlohmann::ordered_json;

struct Diagnostic
{
  std::string path;  ///< dotted field path, empty for document-level problems
  std::string message;

  std::string str() const { return path.empty() ? message : path + ": " + message; }
};

/// One or more problems with a scenario document.
class ConfigError : public InputError
{
public:
  explicit ConfigError(std::vector<Diagnostic> diags) : InputError(join(diags)), diags_(std::move(diags)) {}

  const std::vector<Diagnostic> & diagnostics() const noexcept { return diags_; }

private:
  static std::string join(const std::vector<Diagnostic> & d)
  {
    std::string out;
    for (const auto & x : d) { out += (out.empty() ? "" : "\n") + x.str(); }
    return out;
  }

  std::vector<Diagnostic> diags_;
};

/// Formats a double with 17 significant digits.
inline std::string fmt(double v)
{
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------------------------
// documents and overrides

inline json parse_document(const std::string & text)
{
  try {
    return json::parse(text);
  } catch (const json::parse_error & e) {
    // locate the byte offset as line/column
    std::size_t line = 1, col = 1;
    for (std::size_t k = 0; k + 1 < e.byte && k < text.size(); ++k) {
      if (text[k] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string what = e.what();
    const auto pos = what.find("parse error");
    if (pos != std::string::npos) { what = what.substr(pos); }
    throw ConfigError(std::vector<Diagnostic>{{"", "line " + std::to_string(line) + ", column " + std::to_string(col) + ": " + what}});
  }
}

inline json load_document(const std::filesystem::path & path)
{
  std::ifstream in(path);
  if (!in) { throw ConfigError(std::vector<Diagnostic>{{"", "cannot open scenario file " + path.string()}}); }
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_document(ss.str());
}

/// Applies "a.b.c=value". The value is read as JSON when it parses, otherwise as a string.
/// Numeric path components index into arrays.
inline void apply_override(json & doc, const std::string & assignment)
{
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError(std::vector<Diagnostic>{{"", "override '" + assignment + "' is not of the form key=value"}});
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) { value = text; }

  json * node = &doc;
  std::stringstream ks(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ks, part, '.')) { parts.push_back(part); }
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto & p = parts[k];
    if (p.empty()) { throw ConfigError(std::vector<Diagnostic>{{key, "empty path component in override"}}); }
    const bool index = p.find_first_not_of("0123456789") == std::string::npos;
    json * next = nullptr;
    if (node->is_array() && index) {
      const auto i = std::stoul(p);
      if (i >= node->size()) { throw ConfigError(std::vector<Diagnostic>{{key, "array index " + p + " out of range"}}); }
      next = &(*node)[i];
    } else {
      if (node->is_null()) { *node = json::object(); }
      if (!node->is_object()) { throw ConfigError(std::vector<Diagnostic>{{key, "cannot descend into non-object at '" + p + "'"}}); }
      next = &(*node)[p];
    }
    node = next;
  }
  *node = value;
}

// ---------------------------------------------------------------------------------------------
// reading values

namespace detail {

inline std::string join_path(const std::string & base, const std::string & key)
{
  return base.empty() ? key : base + "." + key;
}

inline std::string join_path(const std::string & base, std::size_t index)
{
  return base + "." + std::to_string(index);
}

[[noreturn]] inline void fail(const std::string & path, const std::string & msg) { throw ConfigError(std::vector<Diagnostic>{{path, msg}}); }

inline double number(const json & j, const std::string & path)
{
  if (!j.is_number()) { fail(path, "expected a number"); }
  return j.get<double>();
}

inline bool is_vector(const json & j)
{
  if (!j.is_array() || j.empty()) { return false; }
  for (const auto & x : j) {
    if (!x.is_number()) { return false; }
  }
  return true;
}

inline bool is_matrix(const json & j)
{
  if (j.is_number()) { return true; }
  if (!j.is_array() || j.empty()) { return false; }
  for (const auto & row : j) {
    if (!is_vector(row)) { return false; }
  }
  return true;
}

inline Vec vector(const json & j, const std::string & path)
{
  if (!is_vector(j)) { fail(path, "expected a non-empty array of numbers"); }
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) { v[static_cast<Eigen::Index>(k)] = j[k].get<double>(); }
  return v;
}

inline Vec vector(const json & j, const std::string & path, int dim)
{
  Vec v = vector(j, path);
  if (v.size() != dim) {
    fail(path, "expected " + std::to_string(dim) + " entries, got " + std::to_string(v.size()));
  }
  return v;
}

/// Row-major nested array; a bare number is a 1×1 matrix.
inline Mat matrix(const json & j, const std::string & path)
{
  if (j.is_number()) { return Mat::Constant(1, 1, j.get<double>()); }
  if (!is_matrix(j)) { fail(path, "expected a matrix (array of rows)"); }
  const auto rows = j.size();
  const auto cols = j[0].size();
  Mat M(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (j[r].size() != cols) { fail(join_path(path, r), "row length differs from the first row"); }
    for (std::size_t c = 0; c < cols; ++c) { M(r, c) = j[r][c].get<double>(); }
  }
  return M;
}

/// One matrix broadcast over all T steps, or exactly T matrices.
inline std::vector<Mat> matrix_sequence(const json & j, const std::string & path, int T)
{
  if (is_matrix(j)) { return std::vector<Mat>(T, matrix(j, path)); }
  if (!j.is_array()) { fail(path, "expected a matrix or a sequence of matrices"); }
  if (static_cast<int>(j.size()) != T) {
    fail(path, "sequence has " + std::to_string(j.size()) + " entries, horizon is " + std::to_string(T));
  }
  std::vector<Mat> out;
  for (std::size_t k = 0; k < j.size(); ++k) { out.push_back(matrix(j[k], join_path(path, k))); }
  return out;
}

inline std::vector<Vec> vector_sequence(const json & j, const std::string & path, int T)
{
  if (is_vector(j)) { return std::vector<Vec>(T, vector(j, path)); }
  if (!j.is_array()) { fail(path, "expected a vector or a sequence of vectors"); }
  if (static_cast<int>(j.size()) != T) {
    fail(path, "sequence has " + std::to_string(j.size()) + " entries, horizon is " + std::to_string(T));
  }
  std::vector<Vec> out;
  for (std::size_t k = 0; k < j.size(); ++k) { out.push_back(vector(j[k], join_path(path, k))); }
  return out;
}

inline std::vector<double> scalar_sequence(const json & j, const std::string & path, int T)
{
  if (j.is_number()) { return std::vector<double>(T, j.get<double>()); }
  if (!j.is_array() || static_cast<int>(j.size()) != T) { fail(path, "expected a number or T numbers"); }
  std::vector<double> out;
  for (std::size_t k = 0; k < j.size(); ++k) { out.push_back(number(j[k], join_path(path, k))); }
  return out;
}

inline const json & require(const json & obj, const std::string & key, const std::string & path)
{
  if (!obj.is_object() || !obj.contains(key)) { fail(join_path(path, key), "required field missing"); }
  return obj[key];
}

/// Rejects keys outside `allowed` so typos do not pass silently.
inline void known_keys(const json & obj, std::initializer_list<const char *> allowed, const std::string & path)
{
  if (!obj.is_object()) { fail(path, "expected an object"); }
  for (const auto & item : obj.items()) {
    bool ok = false;
    for (const char * a : allowed) { ok = ok || item.key() == a; }
    if (!ok) { fail(join_path(path, item.key()), "unknown field"); }
  }
}

/// A scalar draw rule: a number, or {"uniform": [lo, hi]}.
inline double draw(const json & j, const std::string & path, std::mt19937_64 & gen)
{
  if (j.is_number()) { return j.get<double>(); }
  if (j.is_object() && j.contains("uniform")) {
    const Vec lim = vector(j["uniform"], join_path(path, "uniform"), 2);
    if (!(lim[0] <= lim[1])) { fail(path, "uniform range needs lo <= hi"); }
    std::uniform_real_distribution<double> u(lim[0], lim[1]);
    return u(gen);
  }
  fail(path, "expected a number or {\"uniform\": [lo, hi]}");
}

struct PopulationResult
{
  Population population;
  bool gamma_follows_alpha = false;
};

inline PopulationResult parse_population(const json & j, const std::string & path, int T, int dx)
{
  known_keys(j, {"agents", "generator", "gamma_follows_alpha"}, path);
  PopulationResult out;
  if (j.contains("gamma_follows_alpha")) {
    if (!j["gamma_follows_alpha"].is_boolean()) { fail(join_path(path, "gamma_follows_alpha"), "expected a boolean"); }
    out.gamma_follows_alpha = j["gamma_follows_alpha"].get<bool>();
  }
  const bool has_agents = j.contains("agents");
  const bool has_gen = j.contains("generator");
  if (has_agents == has_gen) { fail(path, "exactly one of 'agents' or 'generator' is required"); }
  std::vector<AgentProfile> agents;
  if (has_agents) {
    const auto & list = j["agents"];
    const auto lp = join_path(path, "agents");
    if (!list.is_array() || list.empty()) { fail(lp, "expected a non-empty array of agents"); }
    for (std::size_t i = 0; i < list.size(); ++i) {
      const auto ap = join_path(lp, i);
      const auto & a = list[i];
      known_keys(a, {"alpha", "gamma", "reference", "initial_state"}, ap);
      AgentProfile p;
      p.alpha = number(require(a, "alpha", ap), join_path(ap, "alpha"));
      if (a.contains("gamma")) {
        p.gamma = number(a["gamma"], join_path(ap, "gamma"));
      } else if (out.gamma_follows_alpha) {
        p.gamma = p.alpha;
      } else {
        fail(join_path(ap, "gamma"), "required field missing");
      }
      p.initial_state = vector(require(a, "initial_state", ap), join_path(ap, "initial_state"), dx);
      if (a.contains("reference")) {
        p.reference = vector_sequence(a["reference"], join_path(ap, "reference"), T);
      } else {
        p.reference.assign(T, Vec::Zero(dx));
      }
      agents.push_back(std::move(p));
    }
  } else {
    const auto & g = j["generator"];
    const auto gp = join_path(path, "generator");
    known_keys(g, {"n", "alpha", "gamma", "initial_state", "reference", "seed"}, gp);
    const auto & nj = require(g, "n", gp);
    if (!nj.is_number_integer() || nj.get<long long>() < 1) { fail(join_path(gp, "n"), "expected a positive integer"); }
    const auto n = nj.get<std::size_t>();
    const auto & sj = require(g, "seed", gp);
    if (!sj.is_number_integer() || sj.get<long long>() < 0) { fail(join_path(gp, "seed"), "expected a non-negative integer"); }
    std::mt19937_64 gen(sj.get<std::uint64_t>());
    const json alpha_rule = g.contains("alpha") ? g["alpha"] : json(1.0);
    const json gamma_rule = g.contains("gamma") ? g["gamma"] : json("alpha");
    const bool gamma_alpha = gamma_rule.is_string();
    if (gamma_alpha && gamma_rule.get<std::string>() != "alpha") {
      fail(join_path(gp, "gamma"), "expected \"alpha\", a number or {\"uniform\": [lo, hi]}");
    }
    if (gamma_alpha) { out.gamma_follows_alpha = true; }
    const json & init = require(g, "initial_state", gp);
    const auto ip = join_path(gp, "initial_state");
    Vec lo, hi;
    if (is_vector(init)) {
      lo = hi = vector(init, ip, dx);
    } else if (init.is_object() && init.contains("uniform") && init["uniform"].is_array() && init["uniform"].size() == 2) {
      lo = vector(init["uniform"][0], join_path(ip, "uniform.0"), dx);
      hi = vector(init["uniform"][1], join_path(ip, "uniform.1"), dx);
      if ((lo.array() > hi.array()).any()) { fail(ip, "uniform box needs lo <= hi"); }
    } else {
      fail(ip, "expected a vector or {\"uniform\": [[lo...], [hi...]]}");
    }
    const std::vector<Vec> ref =
        g.contains("reference") ? vector_sequence(g["reference"], join_path(gp, "reference"), T)
                                : std::vector<Vec>(T, Vec::Zero(dx));
    for (const auto & r : ref) {
      if (r.size() != dx) { fail(join_path(gp, "reference"), "dimension mismatch"); }
    }
    // draw order per agent: alpha, gamma, state coordinates
    for (std::size_t i = 0; i < n; ++i) {
      AgentProfile p;
      p.alpha = draw(alpha_rule, join_path(gp, "alpha"), gen);
      p.gamma = gamma_alpha ? p.alpha : draw(gamma_rule, join_path(gp, "gamma"), gen);
      p.initial_state = Vec(dx);
      for (int k = 0; k < dx; ++k) {
        std::uniform_real_distribution<double> u(lo[k], hi[k]);
        p.initial_state[k] = lo[k] == hi[k] ? lo[k] : u(gen);
      }
      p.reference = ref;
      agents.push_back(std::move(p));
    }
  }
  try {
    out.population = Population(std::move(agents));
  } catch (const InputError & e) {
    fail(path, e.what());
  }
  return out;
}

inline std::vector<double> parse_z(const json & j, const std::string & path, std::size_t n)
{
  if (!j.is_array() || j.size() != n) { fail(path, "expected " + std::to_string(n) + " entries"); }
  std::vector<double> z;
  for (std::size_t k = 0; k < j.size(); ++k) { z.push_back(number(j[k], join_path(path, k))); }
  return z;
}

template<typename F>
void collect(std::vector<Diagnostic> & diags, F && f)
{
  try {
    f();
  } catch (const ConfigError & e) {
    diags.insert(diags.end(), e.diagnostics().begin(), e.diagnostics().end());
  }
}

template<typename F>
void check(std::vector<Diagnostic> & diags, const std::string & path, F && f)
{
  try {
    f();
  } catch (const ConfigError & e) {
    diags.insert(diags.end(), e.diagnostics().begin(), e.diagnostics().end());
  } catch (const std::exception & e) {
    diags.push_back({path, e.what()});
  }
}

}  // namespace detail

/// Builds and fully validates a scenario. Throws ConfigError listing every problem found.
inline ScenarioConfig parse_scenario(const json & doc)
{
  using namespace detail;
  std::vector<Diagnostic> diags;
  ScenarioConfig cfg;
  if (!doc.is_object()) { fail("", "scenario must be a JSON object"); }
  collect(diags, [&] {
    known_keys(doc,
               {"name", "horizon", "dynamics", "weights", "population", "controller", "bounds", "attack", "noise",
                "target"},
               "");
  });

  if (doc.contains("name")) {
    if (!doc["name"].is_string()) { diags.push_back({"name", "expected a string"}); }
    else { cfg.name = doc["name"].get<std::string>(); }
  }
  const auto & hj = require(doc, "horizon", "");
  if (!hj.is_number_integer() || hj.get<long long>() < 1) { fail("horizon", "expected a positive integer"); }
  const int T = hj.get<int>();

  // dynamics is needed for every dimension check that follows
  {
    const auto & d = require(doc, "dynamics", "");
    known_keys(d, {"A", "B"}, "dynamics");
    auto A = matrix_sequence(require(d, "A", "dynamics"), "dynamics.A", T);
    auto B = matrix_sequence(require(d, "B", "dynamics"), "dynamics.B", T);
    try {
      cfg.model = SystemModel(std::move(A), std::move(B));
    } catch (const InputError & e) {
      fail("dynamics", e.what());
    }
  }
  const int dx = cfg.model.state_dim();
  const int du = cfg.model.action_dim();

  bool weights_ok = false;
  collect(diags, [&] {
    const auto & w = require(doc, "weights", "");
    known_keys(w, {"Q", "R", "Qbar", "Rbar", "s", "offset"}, "weights");
    auto Q = matrix_sequence(require(w, "Q", "weights"), "weights.Q", T);
    auto R = matrix_sequence(require(w, "R", "weights"), "weights.R", T);
    auto Qbar = w.contains("Qbar") ? matrix_sequence(w["Qbar"], "weights.Qbar", T) : std::vector<Mat>(T, Mat::Zero(dx, dx));
    auto Rbar = w.contains("Rbar") ? matrix_sequence(w["Rbar"], "weights.Rbar", T) : std::vector<Mat>(T, Mat::Zero(du, du));
    auto s = w.contains("s") ? vector_sequence(w["s"], "weights.s", T) : std::vector<Vec>(T, Vec::Zero(dx));
    auto off = w.contains("offset") ? scalar_sequence(w["offset"], "weights.offset", T) : std::vector<double>(T, 0.0);
    try {
      cfg.weights = CostWeights(std::move(Q), std::move(R), std::move(Qbar), std::move(Rbar), std::move(s), std::move(off));
      cfg.weights.check_compatible(cfg.model);
    } catch (const InputError & e) {
      fail("weights", e.what());
    }
    weights_ok = true;
  });

  bool population_ok = false;
  collect(diags, [&] {
    auto res = parse_population(require(doc, "population", ""), "population", T, dx);
    cfg.population = std::move(res.population);
    cfg.gamma_follows_alpha = res.gamma_follows_alpha;
    population_ok = true;
  });

  collect(diags, [&] {
    const auto & c = require(doc, "controller", "");
    known_keys(c, {"type", "decomposition", "horizon", "lambda", "regime"}, "controller");
    const auto & type = require(c, "type", "controller");
    const std::string t = type.is_string() ? type.get<std::string>() : "";
    if (t == "lqr") {
      cfg.controller.kind = ControllerKind::Lqr;
      for (const char * k : {"horizon", "lambda", "regime"}) {
        if (c.contains(k)) { fail(join_path("controller", k), "only valid for the rhc controller"); }
      }
      if (c.contains("decomposition")) {
        const auto & d = c["decomposition"];
        const std::string ds = d.is_string() ? d.get<std::string>() : "";
        if (ds == "exact") { cfg.controller.decomposition = Decomposition::Exact; }
        else if (ds == "relaxed") { cfg.controller.decomposition = Decomposition::Relaxed; }
        else { fail("controller.decomposition", "expected \"exact\" or \"relaxed\""); }
      }
    } else if (t == "rhc") {
      cfg.controller.kind = ControllerKind::Rhc;
      if (c.contains("decomposition")) { fail("controller.decomposition", "only valid for the lqr controller"); }
      if (c.contains("horizon")) {
        const auto & h = c["horizon"];
        if (!h.is_number_integer() || h.get<long long>() < 1) { fail("controller.horizon", "expected a positive integer"); }
        cfg.controller.horizon = h.get<int>();
      }
      if (c.contains("lambda")) {
        cfg.controller.lambda = number(c["lambda"], "controller.lambda");
        if (!(cfg.controller.lambda > 0.0 && cfg.controller.lambda < 1.0)) {
          fail("controller.lambda", "must lie strictly between 0 and 1");
        }
      }
      if (c.contains("regime")) {
        const auto & r = c["regime"];
        const std::string rs = r.is_string() ? r.get<std::string>() : "";
        if (rs == "positive") { cfg.controller.regime = BoundRegime::PositiveFactors; }
        else if (rs == "signed") { cfg.controller.regime = BoundRegime::SignedFactors; }
        else { fail("controller.regime", "expected \"positive\" or \"signed\""); }
      }
    } else {
      fail("controller.type", "expected \"lqr\" or \"rhc\"");
    }
  });

  collect(diags, [&] {
    if (!doc.contains("bounds")) { return; }
    const auto & b = doc["bounds"];
    known_keys(b, {"a", "b", "c", "d", "abar", "bbar", "cbar", "dbar"}, "bounds");
    BoxBounds bb;
    bb.a = vector(require(b, "a", "bounds"), "bounds.a", dx);
    bb.b = vector(require(b, "b", "bounds"), "bounds.b", dx);
    bb.c = vector(require(b, "c", "bounds"), "bounds.c", du);
    bb.d = vector(require(b, "d", "bounds"), "bounds.d", du);
    bb.abar = vector(require(b, "abar", "bounds"), "bounds.abar", dx);
    bb.bbar = vector(require(b, "bbar", "bounds"), "bounds.bbar", dx);
    bb.cbar = vector(require(b, "cbar", "bounds"), "bounds.cbar", du);
    bb.dbar = vector(require(b, "dbar", "bounds"), "bounds.dbar", du);
    try {
      bb.validate(dx, du);
    } catch (const InputError & e) {
      fail("bounds", e.what());
    }
    cfg.bounds = bb;
  });

  collect(diags, [&] {
    if (!doc.contains("attack")) { return; }
    const auto & a = doc["attack"];
    known_keys(a, {"kind", "z", "rho", "epsilon_isolate"}, "attack");
    AttackSpec spec;
    const auto & k = require(a, "kind", "attack");
    const auto kind = attack_kind_from_string(k.is_string() ? k.get<std::string>() : "");
    if (!kind) { fail("attack.kind", "expected \"denial_of_service\", \"leader\", \"protected\" or \"isolated\""); }
    spec.kind = *kind;
    if (a.contains("z")) {
      if (!population_ok) { return; }
      spec.z = parse_z(a["z"], "attack.z", cfg.population.size());
    } else if (spec.kind != AttackKind::LeaderAttack) {
      fail("attack.z", "required field missing");
    }
    if (a.contains("rho")) { spec.rho = number(a["rho"], "attack.rho"); }
    if (a.contains("epsilon_isolate")) { spec.epsilon_isolate = number(a["epsilon_isolate"], "attack.epsilon_isolate"); }
    if (!(spec.rho >= 0.0 && spec.rho <= 1.0)) { fail("attack.rho", "must lie in [0, 1]"); }
    cfg.attack = spec;
  });

  collect(diags, [&] {
    if (!doc.contains("noise")) { return; }
    const auto & nz = doc["noise"];
    known_keys(nz, {"stddev", "seed"}, "noise");
    NoiseSpec spec;
    spec.stddev = vector(require(nz, "stddev", "noise"), "noise.stddev", dx);
    if (spec.stddev.minCoeff() < 0.0) { fail("noise.stddev", "must be non-negative"); }
    const auto & sj = require(nz, "seed", "noise");
    if (!sj.is_number_integer() || sj.get<long long>() < 0) { fail("noise.seed", "expected a non-negative integer"); }
    spec.seed = sj.get<std::uint64_t>();
    cfg.noise = spec;
  });

  collect(diags, [&] {
    if (doc.contains("target")) { cfg.target = vector(doc["target"], "target", dx); }
  });

  if (!diags.empty()) { throw ConfigError(diags); }
  if (!weights_ok || !population_ok) { throw ConfigError(std::vector<Diagnostic>{{"", "scenario incomplete"}}); }

  // semantic checks, each reported against the section it concerns
  if (cfg.controller.kind == ControllerKind::Rhc && !cfg.bounds) { diags.push_back({"bounds", "RHC requires bounds"}); }
  if (cfg.controller.kind == ControllerKind::Lqr && cfg.bounds) {
    diags.push_back({"bounds", "LQR controller is unconstrained and does not accept bounds"});
  }
  std::optional<Population> effective;
  check(diags, cfg.attack ? "attack" : "population", [&] { effective = effective_population(cfg); });
  if (effective) {
    check(diags, "weights", [&] { cfg.weights.validate(mu(*effective)); });
    if (diags.empty() && cfg.controller.kind == ControllerKind::Rhc) {
      check(diags, "controller", [&] {
        DistributedRhc probe(cfg.model, cfg.weights, *effective, *cfg.bounds, rhc_settings(cfg.controller));
      });
    }
  }
  if (!diags.empty()) { throw ConfigError(diags); }
  validate(cfg);
  return cfg;
}

/// Loads, applies overrides, parses and validates.
inline ScenarioConfig load_scenario(const std::filesystem::path & path, const std::vector<std::string> & overrides = {})
{
  json doc = load_document(path);
  for (const auto & o : overrides) { apply_override(doc, o); }
  return parse_scenario(doc);
}

// ---------------------------------------------------------------------------------------------
// canonical echo

namespace detail {

inline json to_json(const Vec & v)
{
  json j = json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) { j.push_back(v[k]); }
  return j;
}

inline json to_json(const Mat & M)
{
  json j = json::array();
  for (Eigen::Index r = 0; r < M.rows(); ++r) { j.push_back(to_json(Vec(M.row(r).transpose()))); }
  return j;
}

/// One entry when the whole sequence is equal, otherwise the full sequence.
template<typename T>
json sequence(const std::vector<T> & seq)
{
  bool constant = true;
  for (std::size_t k = 1; k < seq.size() && constant; ++k) { constant = dstrack::detail::same(seq[k], seq[0]); }
  if (constant) { return to_json(seq.front()); }
  json j = json::array();
  for (const auto & x : seq) { j.push_back(to_json(x)); }
  return j;
}

inline json scalar_sequence(const std::vector<double> & seq)
{
  bool constant = true;
  for (std::size_t k = 1; k < seq.size() && constant; ++k) { constant = seq[k] == seq[0]; }
  if (constant) { return seq.front(); }
  return json(seq);
}

}  // namespace detail

/// Fully explicit form of a scenario. Parsing it gives back an equal ScenarioConfig.
inline json resolved_json(const ScenarioConfig & cfg)
{
  using detail::sequence;
  using detail::to_json;
  const int T = cfg.model.horizon();
  json j;
  j["name"] = cfg.name;
  j["horizon"] = T;
  j["dynamics"]["A"] = sequence(cfg.model.A_sequence());
  j["dynamics"]["B"] = sequence(cfg.model.B_sequence());

  std::vector<Mat> Q, R, Qbar, Rbar;
  std::vector<Vec> s;
  std::vector<double> off;
  for (int t = 1; t <= T; ++t) {
    Q.push_back(cfg.weights.Q(t));
    R.push_back(cfg.weights.R(t));
    Qbar.push_back(cfg.weights.Qbar(t));
    Rbar.push_back(cfg.weights.Rbar(t));
    s.push_back(cfg.weights.s(t));
    off.push_back(cfg.weights.offset(t));
  }
  j["weights"] = {{"Q", sequence(Q)},       {"R", sequence(R)}, {"Qbar", sequence(Qbar)}, {"Rbar", sequence(Rbar)},
                  {"s", sequence(s)}, {"offset", detail::scalar_sequence(off)}};

  json agents = json::array();
  for (const auto & a : cfg.population.agents()) {
    agents.push_back({{"alpha", a.alpha},
                      {"gamma", a.gamma},
                      {"reference", sequence(a.reference)},
                      {"initial_state", to_json(a.initial_state)}});
  }
  j["population"] = {{"gamma_follows_alpha", cfg.gamma_follows_alpha}, {"agents", agents}};

  const auto & c = cfg.controller;
  if (c.kind == ControllerKind::Lqr) {
    j["controller"] = {{"type", "lqr"}, {"decomposition", to_string(c.decomposition)}};
  } else {
    j["controller"] = {{"type", "rhc"}, {"horizon", c.horizon}, {"lambda", c.lambda}, {"regime", to_string(c.regime)}};
  }
  if (cfg.bounds) {
    const auto & b = *cfg.bounds;
    j["bounds"] = {{"a", to_json(b.a)},       {"b", to_json(b.b)},       {"c", to_json(b.c)},       {"d", to_json(b.d)},
                   {"abar", to_json(b.abar)}, {"bbar", to_json(b.bbar)}, {"cbar", to_json(b.cbar)}, {"dbar", to_json(b.dbar)}};
  }
  if (cfg.attack) {
    const auto & a = *cfg.attack;
    j["attack"] = {{"kind", to_string(a.kind)}};
    if (a.kind != AttackKind::LeaderAttack) { j["attack"]["z"] = a.z; }
    j["attack"]["rho"] = a.rho;
    j["attack"]["epsilon_isolate"] = a.epsilon_isolate;
  }
  if (cfg.noise) { j["noise"] = {{"stddev", to_json(cfg.noise->stddev)}, {"seed", cfg.noise->seed}}; }
  if (cfg.target) { j["target"] = to_json(*cfg.target); }
  return j;
}

// ---------------------------------------------------------------------------------------------
// outputs

inline constexpr const char * kTrajectoryFile = "trajectory.csv";
inline constexpr const char * kMetricsFile = "metrics.json";
inline constexpr const char * kResolvedFile = "config.resolved.json";

inline std::string csv_header(int state_dim, int action_dim)
{
  std::string h = "t,agent";
  for (int k = 1; k <= state_dim; ++k) { h += ",x_" + std::to_string(k); }
  for (int k = 1; k <= action_dim; ++k) { h += ",u_" + std::to_string(k); }
  return h;
}

/// One row per step and agent; agent 0 is the deep state/action and comes first at each step.
inline void write_trajectory_csv(std::ostream & os, const TrajectoryLog & log)
{
  os << csv_header(log.state_dim, log.action_dim) << '\n';
  const auto row = [&os](int t, std::size_t agent, const Vec & x, const Vec & u) {
    os << t << ',' << agent;
    for (Eigen::Index k = 0; k < x.size(); ++k) { os << ',' << fmt(x[k]); }
    for (Eigen::Index k = 0; k < u.size(); ++k) { os << ',' << fmt(u[k]); }
    os << '\n';
  };
  for (int t = 1; t <= log.horizon; ++t) {
    row(t, 0, log.deep_states[t - 1], log.deep_actions[t - 1]);
    for (std::size_t i = 0; i < log.agents; ++i) { row(t, i + 1, log.states[t - 1][i], log.actions[t - 1][i]); }
  }
}

/// Parsed trajectory.csv.
struct TrajectoryTable
{
  std::vector<std::string> header;
  int state_dim = 0;
  int action_dim = 0;
  struct Row
  {
    int t = 0;
    std::size_t agent = 0;
    Vec x, u;
  };
  std::vector<Row> rows;
};

/// Reads a trajectory file written by write_trajectory_csv, checking the header layout.
inline TrajectoryTable read_trajectory_csv(std::istream & is)
{
  const auto split = [](const std::string & line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) { out.push_back(cell); }
    return out;
  };
  TrajectoryTable tab;
  std::string line;
  if (!std::getline(is, line)) { throw InputError("trajectory file is empty"); }
  tab.header = split(line);
  if (tab.header.size() < 4 || tab.header[0] != "t" || tab.header[1] != "agent") {
    throw InputError("trajectory header must start with t,agent");
  }
  for (std::size_t k = 2; k < tab.header.size(); ++k) {
    const auto & h = tab.header[k];
    if (h == "x_" + std::to_string(tab.state_dim + 1) && tab.action_dim == 0) {
      ++tab.state_dim;
    } else if (h == "u_" + std::to_string(tab.action_dim + 1)) {
      ++tab.action_dim;
    } else {
      throw InputError("unexpected trajectory column '" + h + "'");
    }
  }
  if (tab.state_dim == 0 || tab.action_dim == 0) { throw InputError("trajectory header lacks x_ or u_ columns"); }
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) { continue; }
    const auto cells = split(line);
    if (cells.size() != tab.header.size()) {
      throw InputError("trajectory line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) + " fields");
    }
    TrajectoryTable::Row r;
    r.t = std::stoi(cells[0]);
    r.agent = std::stoul(cells[1]);
    r.x.resize(tab.state_dim);
    r.u.resize(tab.action_dim);
    for (int k = 0; k < tab.state_dim; ++k) { r.x[k] = std::stod(cells[2 + k]); }
    for (int k = 0; k < tab.action_dim; ++k) { r.u[k] = std::stod(cells[2 + tab.state_dim + k]); }
    tab.rows.push_back(std::move(r));
  }
  return tab;
}

inline json metrics_json(const MetricsReport & m, const TrajectoryLog & log)
{
  json j;
  j["final_tracking_error"] = m.final_tracking_error;
  j["max_constraint_violation"] = m.max_constraint_violation;
  j["total_cost"] = m.total_cost;
  j["max_deviation_from_center"] = m.max_deviation_from_center;
  json c;
  c["controller"] = log.info.controller;
  if (!log.info.decomposition.empty()) { c["decomposition"] = log.info.decomposition; }
  if (log.info.horizon) { c["horizon"] = *log.info.horizon; }
  if (log.info.lambda) { c["lambda"] = *log.info.lambda; }
  if (log.info.regime) { c["regime"] = *log.info.regime; }
  if (log.info.rho) { c["rho"] = *log.info.rho; }
  c["noise"] = log.info.noise;
  c["certainty_equivalence_approximation"] = log.info.certainty_equivalence_approximation;
  j["run"] = c;
  return j;
}

/// Thrown when an output file exists and overwriting was not requested.
class OutputExistsError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

inline void write_text(const std::filesystem::path & p, const std::string & text)
{
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) { throw std::runtime_error("cannot write " + p.string()); }
  out << text;
  if (!out) { throw std::runtime_error("write failed for " + p.string()); }
}

/// Writes the three run files into `dir` (created if absent) and returns their paths.
inline std::vector<std::filesystem::path> write_run(const std::filesystem::path & dir, const ScenarioConfig & cfg,
                                                    const TrajectoryLog & log, bool force)
{
  namespace fs = std::filesystem;
  const std::vector<fs::path> files{dir / kTrajectoryFile, dir / kMetricsFile, dir / kResolvedFile};
  if (!force) {
    for (const auto & f : files) {
      if (fs::exists(f)) { throw OutputExistsError(f.string() + " exists (use --force to overwrite)"); }
    }
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) { throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message()); }
  std::ostringstream csv;
  write_trajectory_csv(csv, log);
  write_text(files[0], csv.str());
  write_text(files[1], metrics_json(metrics(log, cfg), log).dump(2) + "\n");
  write_text(files[2], resolved_json(cfg).dump(2) + "\n");
  return files;
}

}  // namespace dstrack::io
