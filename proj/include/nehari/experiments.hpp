#pragma once

// Batch experiments behind the nehari-shape command line: configuration
// parsing, orchestration and the JSON/CSV run records.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nehari/errors.hpp"
#include "nehari/femcore.hpp"
#include "nehari/geometry.hpp"
#include "nehari/nehari.hpp"
#include "nehari/nonlinearity.hpp"
#include "nehari/shape.hpp"
#include "nehari/solvers.hpp"
#include "nehari/symmetrize.hpp"

namespace nehari {

using Json = nlohmann::ordered_json;

inline constexpr const char* kSoftwareName = "nehari-shape";
inline constexpr const char* kSoftwareVersion = "1.0.0";
inline constexpr const char* kRecordSchema = "nehari-shape/run-record/1";

inline const std::vector<std::string>& experimentNames() {
  static const std::vector<std::string> names = {"mesh",          "solve-positive", "solve-negative", "solve-nodal",
                                                 "eigen",         "rayleigh",       "sweep",          "hadamard-check",
                                                 "pohozaev-check", "symmetry-check", "nonradiality"};
  return names;
}

struct RunConfig {
  std::string experiment;
  DomainSpec domain = DomainSpec::ball(1.0);
  NonlinearitySpec nl = NonlinearitySpec::power(2.0, 4.0);
  SolverOptions solver;
  std::string outDir = "out";
  std::map<std::string, std::string> raw;  ///< the parsed file, for the record

  // sweep
  SweepTarget sweepWhich = SweepTarget::MuPlus;
  std::vector<double> sGrid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  std::optional<double> sweepMargin;
  // hadamard-check / pohozaev-check / symmetry-check
  std::string level = "muPlus";
  double rayleighQ = 4.0;
  std::vector<std::string> fields = {"inner-shift", "outer-shift", "dilation", "translation"};
  std::optional<double> tStep;
  bool refine = false;
  // symmetry-check
  Vec2 pole{-1.0, 0.0};
  std::optional<Vec2> planeAnchor;
  Vec2 planeNormal{1.0, 0.0};
  std::vector<double> epsilons;
  // nonradiality
  double witnessFraction = 0.1;  ///< inner-ball shift as a fraction of R1 - r
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline double parseDouble(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(x)) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    fail(ErrorClass::ConfigError, "key '" + key + "' expects a number, got '" + v + "'");
  }
}

inline long long parseInteger(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    fail(ErrorClass::ConfigError, "key '" + key + "' expects an integer, got '" + v + "'");
  }
}

inline bool parseBool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(ErrorClass::ConfigError, "key '" + key + "' expects true or false, got '" + v + "'");
}

inline std::vector<std::string> splitList(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::vector<double> parseDoubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& item : splitList(v)) out.push_back(parseDouble(key, item));
  return out;
}

inline Vec2 parseVec2(const std::string& key, const std::string& v) {
  const auto xs = parseDoubles(key, v);
  if (xs.size() != 2) fail(ErrorClass::ConfigError, "key '" + key + "' expects two comma-separated numbers");
  return {xs[0], xs[1]};
}

/// "c:e, c:e" -> terms c |s|^{e-2} s.
inline std::vector<PowerTerm> parseTerms(const std::string& key, const std::string& v) {
  std::vector<PowerTerm> out;
  for (const auto& item : splitList(v)) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) fail(ErrorClass::ConfigError, "key '" + key + "' expects coefficient:exponent pairs");
    out.push_back({parseDouble(key, trim(item.substr(0, colon))), parseDouble(key, trim(item.substr(colon + 1)))});
  }
  if (out.empty()) fail(ErrorClass::ConfigError, "key '" + key + "' lists no terms");
  return out;
}

inline std::string iso8601Now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

/// Reads `key = value` lines; `#` starts a comment. Unknown keys are errors.
inline RunConfig parseConfig(std::istream& in) {
  RunConfig cfg;
  std::string line;
  int lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorClass::ConfigError, "line " + std::to_string(lineNo) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) fail(ErrorClass::ConfigError, "line " + std::to_string(lineNo) + ": empty key");
    if (cfg.raw.count(key)) fail(ErrorClass::ConfigError, "duplicate key '" + key + "'");
    cfg.raw[key] = value;
  }

  static const std::set<std::string> known = {
      "experiment",       "domain.kind",        "domain.R1",          "domain.R0",          "domain.s",
      "domain.center",    "nonlinearity.kind",  "nonlinearity.p",     "nonlinearity.q",     "nonlinearity.terms",
      "solver.tol",       "solver.max-iter",    "solver.starts",      "solver.seed",        "solver.h",
      "solver.n1d",       "solver.jobs",        "solver.restarts",    "output.dir",         "sweep.which",
      "sweep.s",          "sweep.margin",       "check.level",        "check.fields",       "check.t-step",
      "check.refine",     "rayleigh.q",         "symmetry.pole",      "symmetry.plane.anchor",
      "symmetry.plane.normal", "symmetry.epsilons", "nonradiality.shift-fraction"};
  for (const auto& [k, v] : cfg.raw)
    if (!known.count(k)) fail(ErrorClass::ConfigError, "unknown key '" + k + "'");

  auto get = [&](const std::string& k) -> const std::string* {
    const auto it = cfg.raw.find(k);
    return it == cfg.raw.end() ? nullptr : &it->second;
  };
  using detail::parseDouble;
  using detail::parseInteger;

  if (auto v = get("experiment")) cfg.experiment = *v;

  const std::string kind = get("domain.kind") ? *get("domain.kind") : (get("domain.R0") ? "annulus" : "ball");
  const double R1 = get("domain.R1") ? parseDouble("domain.R1", *get("domain.R1")) : 1.0;
  const Vec2 center = get("domain.center") ? detail::parseVec2("domain.center", *get("domain.center")) : Vec2{};
  if (kind == "ball") {
    cfg.domain = DomainSpec::ball(R1, center);
    if (get("domain.R0")) cfg.domain.innerRadius = parseDouble("domain.R0", *get("domain.R0"));
    if (get("domain.s")) cfg.domain.displacement = parseDouble("domain.s", *get("domain.s"));
  } else if (kind == "annulus") {
    const double R0 = get("domain.R0") ? parseDouble("domain.R0", *get("domain.R0")) : 0.3;
    const double s = get("domain.s") ? parseDouble("domain.s", *get("domain.s")) : 0.0;
    cfg.domain = DomainSpec::annulus(R1, R0, s, center);
  } else {
    fail(ErrorClass::ConfigError, "domain.kind must be ball or annulus");
  }

  const double p = get("nonlinearity.p") ? parseDouble("nonlinearity.p", *get("nonlinearity.p")) : 2.0;
  const std::string nlKind = get("nonlinearity.kind") ? *get("nonlinearity.kind") : "power";
  if (nlKind == "power") {
    const double q = get("nonlinearity.q") ? parseDouble("nonlinearity.q", *get("nonlinearity.q")) : p + 2.0;
    cfg.nl = NonlinearitySpec::power(p, q);
  } else if (nlKind == "power-sum") {
    if (!get("nonlinearity.terms")) fail(ErrorClass::ConfigError, "power-sum needs nonlinearity.terms");
    cfg.nl = NonlinearitySpec::powerSum(p, detail::parseTerms("nonlinearity.terms", *get("nonlinearity.terms")));
  } else {
    fail(ErrorClass::ConfigError, "nonlinearity.kind must be power or power-sum");
  }

  SolverOptions& o = cfg.solver;
  if (auto v = get("solver.tol")) o.tol = parseDouble("solver.tol", *v);
  if (auto v = get("solver.max-iter")) o.maxIter = static_cast<int>(parseInteger("solver.max-iter", *v));
  if (auto v = get("solver.starts")) o.starts = static_cast<int>(parseInteger("solver.starts", *v));
  if (auto v = get("solver.seed")) o.seed = static_cast<std::uint64_t>(parseInteger("solver.seed", *v));
  if (auto v = get("solver.h")) o.h = parseDouble("solver.h", *v);
  if (auto v = get("solver.n1d")) o.n1d = static_cast<int>(parseInteger("solver.n1d", *v));
  if (auto v = get("solver.jobs")) o.jobs = static_cast<int>(parseInteger("solver.jobs", *v));
  if (auto v = get("solver.restarts")) o.restarts = static_cast<int>(parseInteger("solver.restarts", *v));
  if (auto v = get("output.dir")) cfg.outDir = *v;

  if (auto v = get("sweep.which")) {
    if (*v == "muPlus") cfg.sweepWhich = SweepTarget::MuPlus;
    else if (*v == "muMinus") cfg.sweepWhich = SweepTarget::MuMinus;
    else if (*v == "lambda") cfg.sweepWhich = SweepTarget::Lambda;
    else fail(ErrorClass::ConfigError, "sweep.which must be muPlus, muMinus or lambda");
  }
  if (auto v = get("sweep.s")) cfg.sGrid = detail::parseDoubles("sweep.s", *v);
  if (auto v = get("sweep.margin")) cfg.sweepMargin = parseDouble("sweep.margin", *v);
  if (auto v = get("check.level")) cfg.level = *v;
  if (auto v = get("check.fields")) cfg.fields = detail::splitList(*v);
  if (auto v = get("check.t-step")) cfg.tStep = parseDouble("check.t-step", *v);
  if (auto v = get("check.refine")) cfg.refine = detail::parseBool("check.refine", *v);
  cfg.rayleighQ = get("rayleigh.q") ? parseDouble("rayleigh.q", *get("rayleigh.q")) : cfg.nl.q;
  if (auto v = get("symmetry.pole")) cfg.pole = detail::parseVec2("symmetry.pole", *v);
  if (auto v = get("symmetry.plane.anchor")) cfg.planeAnchor = detail::parseVec2("symmetry.plane.anchor", *v);
  if (auto v = get("symmetry.plane.normal")) cfg.planeNormal = detail::parseVec2("symmetry.plane.normal", *v);
  if (auto v = get("symmetry.epsilons")) cfg.epsilons = detail::parseDoubles("symmetry.epsilons", *v);
  if (auto v = get("nonradiality.shift-fraction"))
    cfg.witnessFraction = parseDouble("nonradiality.shift-fraction", *v);
  return cfg;
}

inline RunConfig parseConfigFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorClass::ConfigError, "cannot open config file '" + path + "'");
  return parseConfig(in);
}

/// Checks every field against its module invariants; throws ConfigError.
inline void validateConfig(const RunConfig& cfg) {
  const auto& names = experimentNames();
  if (std::find(names.begin(), names.end(), cfg.experiment) == names.end())
    fail(ErrorClass::ConfigError, "unknown experiment '" + cfg.experiment + "'");
  try {
    cfg.domain.validate();
  } catch (const Error& e) {
    fail(ErrorClass::ConfigError, std::string("domain: ") + e.what());
  }
  const DomainSpec& d = cfg.domain;
  const SolverOptions& o = cfg.solver;
  const double gap = d.isAnnulus() ? d.outerRadius - d.innerRadius : d.outerRadius;
  if (!(o.h > 0.0 && o.h < gap / 4.0)) fail(ErrorClass::ConfigError, "solver.h must lie in (0, gap/4)");
  if (!(o.tol > 0.0)) fail(ErrorClass::ConfigError, "solver.tol must be positive");
  if (o.maxIter < 1) fail(ErrorClass::ConfigError, "solver.max-iter must be positive");
  if (o.starts < 0) fail(ErrorClass::ConfigError, "solver.starts must be nonnegative");
  if (o.jobs < 1) fail(ErrorClass::ConfigError, "solver.jobs must be positive");
  if (o.restarts < 0) fail(ErrorClass::ConfigError, "solver.restarts must be nonnegative");
  if (o.n1d < 2000) fail(ErrorClass::ConfigError, "solver.n1d must be at least 2000");
  const NonlinearitySpec& nl = cfg.nl;
  if (!(nl.p > 1.0)) fail(ErrorClass::ConfigError, "nonlinearity.p must exceed 1");
  if (nl.kind == NonlinearityKind::PowerPrototype && !(nl.q > nl.p))
    fail(ErrorClass::ConfigError, "nonlinearity.q must exceed nonlinearity.p");
  if (nl.kind == NonlinearityKind::PowerSum)
    for (const auto& t : nl.terms)
      if (!(t.exponent > nl.p) || !(t.coefficient > 0.0))
        fail(ErrorClass::ConfigError, "power-sum terms need positive coefficients and exponents above p");

  const std::string& ex = cfg.experiment;
  if (ex == "rayleigh" && !(cfg.rayleighQ > 1.0)) fail(ErrorClass::ConfigError, "rayleigh.q must exceed 1");
  if (ex == "sweep") {
    if (!d.isAnnulus()) fail(ErrorClass::ConfigError, "sweep needs an annulus");
    if (cfg.sGrid.empty()) fail(ErrorClass::ConfigError, "sweep.s is empty");
    for (std::size_t i = 0; i < cfg.sGrid.size(); ++i) {
      const double s = cfg.sGrid[i];
      if (!(s >= 0.0 && s < d.outerRadius - d.innerRadius - 2.0 * o.h))
        fail(ErrorClass::ConfigError, "sweep.s values must lie in [0, R1 - R0 - 2h)");
      if (i > 0 && !(s >= cfg.sGrid[i - 1])) fail(ErrorClass::ConfigError, "sweep.s must be ascending");
    }
  }
  if (ex == "hadamard-check" || ex == "pohozaev-check" || ex == "symmetry-check") {
    static const std::set<std::string> levels = {"muPlus", "muMinus", "nodal", "eigen", "rayleigh"};
    if (!levels.count(cfg.level)) fail(ErrorClass::ConfigError, "check.level '" + cfg.level + "' is not supported");
    if (ex == "hadamard-check" && cfg.level == "nodal")
      fail(ErrorClass::ConfigError, "hadamard-check needs a constant-sign or Rayleigh level");
    if (ex == "pohozaev-check" && (cfg.level == "eigen" || cfg.level == "rayleigh"))
      fail(ErrorClass::ConfigError, "pohozaev-check needs a Nehari level");
    static const std::set<std::string> fields = {"inner-shift", "outer-shift", "dilation", "translation", "zero"};
    for (const auto& f : cfg.fields)
      if (!fields.count(f)) fail(ErrorClass::ConfigError, "unknown perturbation field '" + f + "'");
    if (cfg.tStep && !(*cfg.tStep > 0.0)) fail(ErrorClass::ConfigError, "check.t-step must be positive");
  }
  if (ex == "symmetry-check") {
    if (norm(cfg.planeNormal) == 0.0) fail(ErrorClass::ConfigError, "symmetry.plane.normal must be nonzero");
    if (norm(cfg.pole) == 0.0) fail(ErrorClass::ConfigError, "symmetry.pole must be nonzero");
    for (double e : cfg.epsilons)
      if (!(e > 0.0 && e < gap)) fail(ErrorClass::ConfigError, "symmetry.epsilons must lie in (0, gap)");
  }
  if (ex == "nonradiality") {
    if (!d.isRadial()) fail(ErrorClass::ConfigError, "nonradiality needs a ball or a concentric annulus");
    if (!(cfg.witnessFraction > 0.0 && cfg.witnessFraction < 0.5))
      fail(ErrorClass::ConfigError, "nonradiality.shift-fraction must lie in (0, 0.5)");
  }
}

// ---------------------------------------------------------------------------
// JSON views

inline Json toJson(const DomainSpec& d) {
  return {{"kind", d.isAnnulus() ? "annulus" : "ball"},
          {"R1", d.outerRadius},
          {"R0", d.innerRadius},
          {"s", d.displacement},
          {"center", {d.center.x, d.center.y}}};
}

inline Json toJson(const NonlinearitySpec& nl) {
  Json j = {{"kind", nl.kind == NonlinearityKind::PowerSum ? "power-sum" : "power"}, {"p", nl.p}, {"q", nl.q}};
  if (nl.kind == NonlinearityKind::PowerSum) {
    Json terms = Json::array();
    for (const auto& t : nl.terms) terms.push_back({{"coefficient", t.coefficient}, {"exponent", t.exponent}});
    j["terms"] = terms;
  }
  return j;
}

inline Json toJson(const SolverOptions& o) {
  return {{"tol", o.tol},   {"maxIter", o.maxIter}, {"starts", o.starts}, {"seed", o.seed},
          {"h", o.h},       {"n1d", o.n1d},         {"jobs", o.jobs},     {"restarts", o.restarts}};
}

inline Json toJson(const SolveReport& r) {
  Json j = {{"kind", std::string(toString(r.kind))},
            {"level", r.level},
            {"p", r.p},
            {"converged", r.converged},
            {"iterations", r.iterations},
            {"gradientNorm", r.gradientNorm},
            {"nehariResidual", r.nehariResidual},
            {"meshSize", r.meshSize},
            {"nodes", r.values.size()},
            {"wallTime", r.wallTime},
            {"bestStart", r.bestStart},
            {"startLevels", r.startLevels},
            {"trace", r.trace}};
  if (r.kind == LevelKind::Nu) {
    j["levelPlus"] = r.levelPlus;
    j["levelMinus"] = r.levelMinus;
    j["nodalDomains"] = r.nodalDomains;
    j["polishIterations"] = r.polishIterations;
    j["nodalLineSpread"] = r.nodalLineSpread;
  }
  if (r.kind == LevelKind::RayleighQ || r.kind == LevelKind::Lambda) j["q"] = r.q;
  if (r.kind == LevelKind::RayleighQ) j["muPlusFromQ"] = r.muPlusFromQ;
  if (!r.space) {
    j["errorEstimate"] = r.errorEstimate;
    j["coarseLevel"] = r.coarseLevel;
    j["fineLevel"] = r.fineLevel;
  }
  return j;
}

inline Json toJson(const ShapeDerivativeResult& r) {
  return {{"fieldKind", std::string(toString(r.fieldKind))},
          {"formulaValue", r.formulaValue},
          {"fdValue", r.fdValue},
          {"relMismatch", r.relMismatch},
          {"floor", r.floor},
          {"fluxScale", r.fluxScale},
          {"tStep", r.tStep}};
}

inline Json toJson(const TranslationIdentity& t) {
  return {{"moment1", t.moment1}, {"moment2", t.moment2}, {"total", t.total}, {"worstRatio", t.worstRatio()}};
}

inline Json toJson(const PohozaevTerms& t) {
  return {{"gradDiv", t.gradDiv},       {"jacobianTerm", t.jacobianTerm}, {"potDiv", t.potDiv},
          {"boundary", t.boundary},     {"residual", t.residual},         {"scale", t.scale()},
          {"relResidual", t.residual / t.scale()}};
}

// ---------------------------------------------------------------------------
// CSV writers (17 significant digits)

inline std::string sweepCsv(const SweepResult& sweep) {
  std::ostringstream os;
  os << "s,level,flux_integral_inner,flux_integral_outer,converged\n" << std::setprecision(17);
  for (const auto& pt : sweep.points)
    os << pt.s << ',' << pt.level << ',' << pt.fluxInner << ',' << pt.fluxOuter << ',' << (pt.converged ? 1 : 0) << '\n';
  return os.str();
}

inline std::string fiberCsv(const std::vector<FiberSample>& profile) {
  std::ostringstream os;
  os << "alpha,Q,Qprime\n" << std::setprecision(17);
  for (const auto& s : profile) os << s.alpha << ',' << s.Q << ',' << s.Qprime << '\n';
  return os.str();
}

inline std::string asymmetryCsv(const ReflectionDiagnostics& diag) {
  std::ostringstream os;
  writeAsymmetryCsv(os, diag);
  return os.str();
}

// ---------------------------------------------------------------------------
// Records

struct OutputFile {
  std::string name;
  std::string content;
};

struct RunRecord {
  Json record;
  std::vector<OutputFile> files;  ///< written in this order next to record.json
  bool ok() const { return record.value("status", "") == "ok"; }
};

namespace detail {

inline PerturbationField fieldByName(const std::string& name, const DomainSpec& d) {
  if (name == "inner-shift") return PerturbationField::shift(d, {1.0, 0.0});
  if (name == "outer-shift") return PerturbationField::shift(d, {1.0, 0.0}, true);
  if (name == "dilation") return PerturbationField::dilation(d.center);
  if (name == "translation") return PerturbationField::translation({1.0, 0.0});
  if (name == "zero") return PerturbationField::zero();
  fail(ErrorClass::ConfigError, "unknown perturbation field '" + name + "'");
}

inline std::string meshText(const Mesh& m) {
  std::ostringstream os;
  writeMesh(os, m);
  return os.str();
}

inline std::string fieldText(const ScalarField& u) {
  std::ostringstream os;
  writeField(os, u);
  return os.str();
}

inline SolveReport solveLevel(const std::string& level, const FemSpacePtr& space, const RunConfig& cfg) {
  if (level == "muPlus") return solvePositive(space, cfg.nl, cfg.solver);
  if (level == "muMinus") return solveNegative(space, cfg.nl, cfg.solver);
  if (level == "nodal") return solveNodal(space, cfg.nl, cfg.solver);
  if (level == "eigen") return solveEigen(space, cfg.nl.p, cfg.solver);
  if (level == "rayleigh") return solveRayleighQ(space, cfg.nl.p, cfg.rayleighQ, cfg.solver);
  fail(ErrorClass::ConfigError, "unknown level '" + level + "'");
}

inline void addSolveFiles(RunRecord& rec, const SolveReport& rep) {
  rec.files.push_back({"mesh.txt", meshText(rep.space->mesh())});
  rec.files.push_back({"field.txt", fieldText(rep.minimizer())});
}

inline bool allTrue(const Json& verdicts) {
  for (const auto& [k, v] : verdicts.items())
    if (!v.get<bool>()) return false;
  return true;
}

}  // namespace detail

inline void meshExperiment(const RunConfig& cfg, RunRecord& rec) {
  const Mesh m = buildMesh(cfg.domain, cfg.solver.h);
  double outer = 0.0, inner = 0.0;
  for (const auto& e : m.boundaryEdges) (e.tag == BoundaryTag::Outer ? outer : inner) += edgeLength(m, e);
  rec.record["payload"] = {{"nodes", m.nodeCount()},
                           {"triangles", m.triangleCount()},
                           {"boundaryEdges", m.boundaryEdges.size()},
                           {"outerLoops", countBoundaryLoops(m, BoundaryTag::Outer)},
                           {"innerLoops", countBoundaryLoops(m, BoundaryTag::Inner)},
                           {"outerLength", outer},
                           {"innerLength", inner},
                           {"area", meshArea(m)},
                           {"minAngleDegrees", m.minAngleDegrees()},
                           {"maxEdgeLength", m.maxEdgeLength()}};
  rec.record["verdicts"] = {{"minAngleAbove15", m.minAngleDegrees() >= 15.0}};
  rec.files.push_back({"mesh.txt", detail::meshText(m)});
}

inline void solveExperiment(const RunConfig& cfg, RunRecord& rec) {
  static const std::map<std::string, std::string> levelOf = {{"solve-positive", "muPlus"},
                                                             {"solve-negative", "muMinus"},
                                                             {"solve-nodal", "nodal"},
                                                             {"eigen", "eigen"},
                                                             {"rayleigh", "rayleigh"}};
  const std::string level = levelOf.at(cfg.experiment);
  const auto space = makeSpace(buildMesh(cfg.domain, cfg.solver.h));
  const SolveReport rep = detail::solveLevel(level, space, cfg);
  Json payload = {{"solve", toJson(rep)}};
  Json verdicts = {{"converged", rep.converged}};
  if ((level == "muPlus" || level == "muMinus") && cfg.domain.isRadial()) {
    const SolveReport oracle = radialOracle(cfg.domain, cfg.nl, level == "muPlus" ? 1 : -1, cfg.solver.n1d, cfg.solver);
    payload["radialOracle"] = toJson(oracle);
    payload["relativeToOracle"] = (rep.level - oracle.level) / oracle.level;
  }
  if (level == "nodal") verdicts["twoNodalDomains"] = rep.nodalDomains == 2;
  if (level == "muPlus" || level == "muMinus") {
    std::vector<double> grid;
    for (int k = 1; k <= 40; ++k) grid.push_back(0.05 * k);
    const auto profile = fiberingProfile(rep.minimizer(), cfg.nl, grid);
    rec.files.push_back({"fibering.csv", fiberCsv(profile)});
  }
  rec.record["payload"] = payload;
  rec.record["verdicts"] = verdicts;
  detail::addSolveFiles(rec, rep);
}

inline void sweepExperiment(const RunConfig& cfg, RunRecord& rec) {
  const SweepResult sweep = sweepLevels(cfg.domain, cfg.sGrid, cfg.sweepWhich, cfg.nl, cfg.solver, cfg.sweepMargin);
  Json points = Json::array();
  for (const auto& pt : sweep.points) {
    Json j = {{"s", pt.s},         {"level", pt.level},         {"fluxInner", pt.fluxInner},
              {"fluxOuter", pt.fluxOuter}, {"converged", pt.converged}, {"nodes", pt.nodes}};
    if (!pt.error.empty()) j["error"] = pt.error;
    points.push_back(j);
  }
  rec.record["payload"] = {{"which", std::string(toString(sweep.which))},
                           {"points", points},
                           {"margin", sweep.margin},
                           {"upperDerivatives", sweep.upperDerivatives},
                           {"forwardDifferences", forwardDifferences(sweep)},
                           {"monotone", sweep.monotone}};
  rec.record["verdicts"] = {{"monotone", sweep.monotone}};
  rec.files.push_back({"sweep.csv", sweepCsv(sweep)});
}

inline void hadamardExperiment(const RunConfig& cfg, RunRecord& rec) {
  const auto space = makeSpace(buildMesh(cfg.domain, cfg.solver.h));
  const SolveReport rep = detail::solveLevel(cfg.level, space, cfg);
  const bool rayleigh = cfg.level == "eigen" || cfg.level == "rayleigh";
  Json results = Json::array();
  Json verdicts = {{"converged", rep.converged}};
  bool within = true;
  for (const auto& name : cfg.fields) {
    const PerturbationField field = detail::fieldByName(name, cfg.domain);
    const ShapeDerivativeResult r =
        rayleigh ? hadamardRayleigh(rep, field, cfg.tStep) : hadamardEnergy(rep, cfg.nl, field, cfg.tStep);
    Json j = toJson(r);
    j["field"] = name;
    results.push_back(j);
    if (name == "translation")
      verdicts["translationFormulaVanishes"] = std::abs(r.formulaValue) <= 1e-2 * r.fluxScale;
    else
      within = within && r.relMismatch <= 0.05;
  }
  verdicts["formulaMatchesFd"] = within;
  const TranslationIdentity ti = translationIdentity(rep.space->mesh(), reportFlux(rep, cfg.nl), rep.p);
  verdicts["translationIdentity"] = ti.worstRatio() <= 0.01;
  rec.record["payload"] = {{"solve", toJson(rep)}, {"derivatives", results}, {"translationIdentity", toJson(ti)}};
  rec.record["verdicts"] = verdicts;
  detail::addSolveFiles(rec, rep);
}

inline void pohozaevExperiment(const RunConfig& cfg, RunRecord& rec) {
  auto run = [&](double h) {
    const auto space = makeSpace(buildMesh(cfg.domain, h));
    return detail::solveLevel(cfg.level, space, cfg);
  };
  const SolveReport rep = run(cfg.solver.h);
  const ScalarField u = rep.minimizer();
  Json terms = Json::object();
  Json verdicts = {{"converged", rep.converged}};
  bool within = true;
  std::vector<std::string> fields;
  for (const auto& name : cfg.fields)
    if (name != "translation" && name != "zero") fields.push_back(name);
  for (const auto& name : fields) {
    const PohozaevTerms t = pohozaevTerms(u, cfg.nl, detail::fieldByName(name, cfg.domain));
    terms[name] = toJson(t);
    within = within && std::abs(t.residual) <= 0.02 * t.scale();
  }
  verdicts["residualWithin2pct"] = within;
  Json payload = {{"solve", toJson(rep)}, {"terms", terms}};
  if (cfg.refine) {
    const SolveReport coarse = run(2.0 * cfg.solver.h);
    const ScalarField uc = coarse.minimizer();
    Json coarseTerms = Json::object();
    bool decreasing = true;
    for (const auto& name : fields) {
      const PohozaevTerms t = pohozaevTerms(uc, cfg.nl, detail::fieldByName(name, cfg.domain));
      coarseTerms[name] = toJson(t);
      decreasing = decreasing && std::abs(terms[name]["relResidual"].get<double>()) < std::abs(t.residual / t.scale());
    }
    payload["coarse"] = {{"h", 2.0 * cfg.solver.h}, {"terms", coarseTerms}};
    verdicts["decreasingUnderRefinement"] = decreasing;
  }
  rec.record["payload"] = payload;
  rec.record["verdicts"] = verdicts;
  detail::addSolveFiles(rec, rep);
}

inline void symmetryExperiment(const RunConfig& cfg, RunRecord& rec) {
  const auto space = makeSpace(buildMesh(cfg.domain, cfg.solver.h));
  const SolveReport rep = detail::solveLevel(cfg.level, space, cfg);
  const ScalarField u = rep.minimizer();
  const Discretization& d = u.disc();
  const double p = rep.p;
  const Vec2 anchor = cfg.planeAnchor ? *cfg.planeAnchor : cfg.domain.innerCenter();
  const Hyperplane plane = Hyperplane::through(anchor, cfg.planeNormal);

  const ScalarField V = polarize(u, plane);
  const ScalarField VV = polarize(V, plane);
  const double gu = gradientTerm(d, u.values(), p), gV = gradientTerm(d, V.values(), p);
  const double qExp = cfg.nl.q;
  const double lu = lebesgueTerm(d, u.values(), qExp), lV = lebesgueTerm(d, V.values(), qExp);
  const bool idempotent = VV.values() == V.values();
  Json payload = {{"solve", toJson(rep)},
                  {"plane", {{"anchor", {plane.anchor.x, plane.anchor.y}}, {"normal", {plane.normal.x, plane.normal.y}}}},
                  {"polarization",
                   {{"admissible", polarizationAdmissible(u.mesh(), plane)},
                    {"gradTerm", gu},
                    {"gradTermPolarized", gV},
                    {"gradRelChange", std::abs(gV - gu) / gu},
                    {"lebesgueTerm", lu},
                    {"lebesgueTermPolarized", lV},
                    {"lebesgueRelChange", std::abs(lV - lu) / lu},
                    {"idempotent", idempotent}}}};
  Json verdicts = {{"converged", rep.converged}, {"polarizationIdempotent", idempotent}};
  if (cfg.domain.isRadial()) {
    const FoliatedSchwarzResult fs = foliatedSchwarzDetailed(u, cfg.pole);
    const NonlinearitySpec& nl = cfg.nl;
    const double Fu = assembleBreakdown(d, u.values(), nl).potTerm;
    const double Fs = assembleBreakdown(d, fs.field.values(), nl).potTerm;
    const double gs = gradientTerm(d, fs.field.values(), p);
    bool ringsMonotone = true;
    for (const auto& ring : fs.rings)
      for (std::size_t j = 0; j + 1 < ring.size(); ++j) ringsMonotone = ringsMonotone && ring[j] >= ring[j + 1];
    const Hyperplane axis = Hyperplane::through(cfg.domain.center, {-cfg.pole.y, cfg.pole.x});
    const ReflectionDiagnostics sym = reflectionDiagnostics(fs.field, axis, cfg.epsilons);
    double asym = 0.0;
    for (const auto& s : sym.samples) asym = std::max({asym, s.innerAsymmetry, s.outerAsymmetry});
    payload["schwarz"] = {{"potTerm", Fu},
                          {"potTermSymmetrized", Fs},
                          {"potRelChange", std::abs(Fs - Fu) / std::abs(Fu)},
                          {"gradTermSymmetrized", gs},
                          {"gradRelExcess", (gs - gu) / gu},
                          {"ringsMonotone", ringsMonotone},
                          {"axisAsymmetry", asym}};
    verdicts["schwarzEquimeasurable"] = std::abs(Fs - Fu) <= 0.01 * std::abs(Fu);
    verdicts["schwarzDirichlet"] = gs <= 1.01 * gu;
    verdicts["schwarzRingsMonotone"] = ringsMonotone;
  }
  const ReflectionDiagnostics diag = reflectionDiagnostics(u, plane, cfg.epsilons);
  Json shells = Json::array();
  for (const auto& s : diag.samples)
    shells.push_back({{"epsilon", s.epsilon}, {"inner", s.innerAsymmetry}, {"outer", s.outerAsymmetry}});
  payload["reflection"] = {{"admissible", diag.admissible}, {"shells", shells}};
  rec.record["payload"] = payload;
  rec.record["verdicts"] = verdicts;
  rec.files.push_back({"asymmetry.csv", asymmetryCsv(diag)});
  detail::addSolveFiles(rec, rep);
}

inline void nonradialityExperiment(const RunConfig& cfg, RunRecord& rec) {
  const DomainSpec& d = cfg.domain;
  const SolverOptions& o = cfg.solver;
  const RadialNodalResult rn = radialNodalLevel(d, cfg.nl, o.n1d, o);
  const SolveReport nodal = solveNodal(makeSpace(buildMesh(d, o.h)), cfg.nl, o);
  const SolveReport coarse = solveNodal(makeSpace(buildMesh(d, 2.0 * o.h)), cfg.nl, o);
  const double err2D = std::abs(coarse.level - nodal.level);

  // witness: shift the circular nodal line by s along e1
  const double r = rn.interfaceRadius;
  const double s = cfg.witnessFraction * (d.outerRadius - r);
  const DomainSpec outerRegion = DomainSpec::annulus(d.outerRadius, r, s, d.center);
  const double hOuter = std::min(o.h, (d.outerRadius - r - s) / 4.5);
  const SolveReport wPlus = solvePositive(makeSpace(buildMesh(outerRegion, hOuter)), cfg.nl, o);
  double wMinus = 0.0;
  Json minusJson;
  if (d.isAnnulus()) {
    // B_r(s e1) minus B_R0(0) is congruent to B_r(0) minus B_R0(s e1)
    const DomainSpec innerRegion = DomainSpec::annulus(r, d.innerRadius, s, d.center);
    const double hInner = std::min(o.h, (r - d.innerRadius - s) / 4.5);
    const SolveReport m = solveNegative(makeSpace(buildMesh(innerRegion, hInner)), cfg.nl, o);
    wMinus = m.level;
    minusJson = toJson(m);
  } else {
    const SolveReport m = radialOracle(DomainSpec::ball(r, d.center), cfg.nl, -1, o.n1d, o);
    wMinus = m.level;
    minusJson = toJson(m);
  }
  const double witness = wPlus.level + wMinus;
  const double margin = 3.0 * (rn.errorEstimate + err2D);

  rec.record["payload"] = {
      {"radial",
       {{"level", rn.level},
        {"interfaceRadius", rn.interfaceRadius},
        {"levelPlus", rn.levelPlus},
        {"levelMinus", rn.levelMinus},
        {"errorEstimate", rn.errorEstimate},
        {"evaluations", rn.evaluations}}},
      {"nodal", toJson(nodal)},
      {"nodalCoarse", toJson(coarse)},
      {"discretizationError", err2D},
      {"witness", {{"shift", s}, {"level", witness}, {"plus", toJson(wPlus)}, {"minus", minusJson}}},
      {"margin", margin}};
  rec.record["verdicts"] = {{"nodalBelowRadial", nodal.level < rn.level - margin},
                            {"witnessBelowRadial", witness < rn.level - margin},
                            {"twoNodalDomains", nodal.nodalDomains == 2},
                            {"nodalLineAnisotropic", nodal.nodalLineSpread > 0.1}};
  detail::addSolveFiles(rec, nodal);
}

/// Runs a validated configuration. Module errors are captured in the record
/// (status "error") together with whatever payload was produced.
inline RunRecord runExperiment(const RunConfig& cfg) {
  validateConfig(cfg);
  RunRecord rec;
  Json config = Json::object();
  for (const auto& [k, v] : cfg.raw) config[k] = v;
  rec.record = {{"schema", kRecordSchema},
                {"software", {{"name", kSoftwareName}, {"version", kSoftwareVersion}}},
                {"experiment", cfg.experiment},
                {"startedAt", detail::iso8601Now()},
                {"finishedAt", ""},
                {"seed", cfg.solver.seed},
                {"config", config},
                {"resolved", {{"domain", toJson(cfg.domain)}, {"nonlinearity", toJson(cfg.nl)}, {"solver", toJson(cfg.solver)}}},
                {"status", "ok"},
                {"payload", Json::object()},
                {"verdicts", Json::object()}};
  try {
    const std::string& ex = cfg.experiment;
    if (ex == "mesh") meshExperiment(cfg, rec);
    else if (ex == "sweep") sweepExperiment(cfg, rec);
    else if (ex == "hadamard-check") hadamardExperiment(cfg, rec);
    else if (ex == "pohozaev-check") pohozaevExperiment(cfg, rec);
    else if (ex == "symmetry-check") symmetryExperiment(cfg, rec);
    else if (ex == "nonradiality") nonradialityExperiment(cfg, rec);
    else solveExperiment(cfg, rec);
  } catch (const Error& e) {
    rec.record["status"] = "error";
    rec.record["error"] = {{"class", std::string(toString(e.errorClass()))}, {"message", e.what()}};
  }
  rec.record["allVerdictsPass"] = detail::allTrue(rec.record["verdicts"]);
  rec.record["finishedAt"] = detail::iso8601Now();
  return rec;
}

/// record.json plus the side files, in a fixed order.
inline void writeRunRecord(const RunRecord& rec, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& f : rec.files) {
    std::ofstream os(dir / f.name, std::ios::binary);
    os << f.content;
  }
  std::ofstream os(dir / "record.json", std::ios::binary);
  os << rec.record.dump(2) << '\n';
}

}  // namespace nehari
