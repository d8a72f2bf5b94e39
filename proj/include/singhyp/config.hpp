#pragma once

// Analysis configuration: a JSON document (comments allowed) validated key by
// key. Every default is materialized, so the effective configuration written
// back is itself a complete config.

#include "singhyp/chain.hpp"
#include "singhyp/verdict.hpp"

#include "json.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace singhyp {

using Json = nlohmann::ordered_json;

class ConfigError : public Error {
 public:
  ConfigError(const std::string& pointer, const std::string& what)
      : Error("config " + (pointer.empty() ? std::string("/") : pointer) + ": " + what), pointer_(pointer) {}
  const std::string& pointer() const { return pointer_; }

 private:
  std::string pointer_;
};

namespace detail {

inline std::string pointer_escape(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (c == '~') out += "~0";
    else if (c == '/') out += "~1";
    else out += c;
  }
  return out;
}

// Reads one JSON object; every key must be consumed before finish().
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string pointer) : j_(j), ptr_(std::move(pointer)) {
    if (!j_.is_object()) throw ConfigError(ptr_, "expected an object");
  }

  const std::string& pointer() const { return ptr_; }
  std::string child(const std::string& key) const { return ptr_ + "/" + pointer_escape(key); }
  bool has(const std::string& key) const { return j_.contains(key); }

  const Json* get(const std::string& key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  double number(const std::string& key, double fallback) {
    const Json* v = get(key);
    if (!v) return fallback;
    return as_number(*v, child(key));
  }
  double required_number(const std::string& key) {
    const Json* v = get(key);
    if (!v) throw ConfigError(child(key), "required number is missing");
    return as_number(*v, child(key));
  }
  long long integer(const std::string& key, long long fallback) {
    const Json* v = get(key);
    if (!v) return fallback;
    return as_integer(*v, child(key));
  }
  bool boolean(const std::string& key, bool fallback) {
    const Json* v = get(key);
    if (!v) return fallback;
    if (!v->is_boolean()) throw ConfigError(child(key), "expected true or false");
    return v->get<bool>();
  }
  std::string string(const std::string& key, const std::string& fallback) {
    const Json* v = get(key);
    if (!v) return fallback;
    if (!v->is_string()) throw ConfigError(child(key), "expected a string");
    return v->get<std::string>();
  }
  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) {
    const Json* v = get(key);
    if (!v) return fallback;
    return as_numbers(*v, child(key));
  }
  std::vector<long long> integers(const std::string& key, std::vector<long long> fallback) {
    const Json* v = get(key);
    if (!v) return fallback;
    if (!v->is_array()) throw ConfigError(child(key), "expected an array of integers");
    std::vector<long long> out;
    for (std::size_t k = 0; k < v->size(); ++k) out.push_back(as_integer((*v)[k], child(key) + "/" + std::to_string(k)));
    return out;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError(child(it.key()), "unknown key");
  }

  static double as_number(const Json& v, const std::string& ptr) {
    if (!v.is_number()) throw ConfigError(ptr, "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(ptr, "expected a finite number");
    return x;
  }
  static long long as_integer(const Json& v, const std::string& ptr) {
    if (!v.is_number_integer()) throw ConfigError(ptr, "expected an integer");
    return v.get<long long>();
  }
  static std::vector<double> as_numbers(const Json& v, const std::string& ptr) {
    if (!v.is_array()) throw ConfigError(ptr, "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t k = 0; k < v.size(); ++k) out.push_back(as_number(v[k], ptr + "/" + std::to_string(k)));
    return out;
  }

 private:
  const Json& j_;
  std::string ptr_;
  std::set<std::string> used_;
};

inline Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}
inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace detail

struct FieldConfig {
  /// Built-in family name, or "polynomial".
  std::string kind = "lorenz";
  ParamSet params;
  PolynomialTable polynomial;
};

struct OrbitConfig {
  std::vector<double> x0;
  double t_total = 100.0;
  double dt = 0.01;
  double transient = 0.2;
};

struct LambdaConfig {
  /// orbit-closure | unstable-branch | box-class | points
  std::string source = "orbit-closure";
  /// unstable-branch: the zero nearest this point.
  std::vector<double> near;
  double offset = 1e-6;
  /// Zeros within this distance of the sample join Lambda; 0 selects 1e-3 diam.
  double inclusion_radius = 0.0;
  std::size_t class_index = 0;
  std::string file;
};

struct ChainConfig {
  std::vector<int> resolution{64};
  double epsilon = 0.0;
  double t_edge = 2.0;
  int jitter = 2;
};

struct LyapunovConfig {
  double t_total = 1000.0;
  double dt = 0.01;
  double transient_time = 0.0;
  std::size_t records = 200;
};

struct GridOptions {
  std::vector<double> eta{0.1};
  std::vector<double> T{5.0};
  double window = 2.0;
  double t_max = 0.0;
  std::size_t stride = 10;
  double min_gap = 1e-3;
};

struct DominationConfig {
  int index = 1;
  GridOptions grid;
};

struct CheckConfig {
  /// A verdict notion or "crosscheck".
  std::string notion = "multi-singular";
  GridOptions grid;
  /// 0: automatic.
  int index = 0;
  std::vector<int> index_candidates;
  double v_radius = 0.0;
  double iso_time = 1.0;
  double r_in = 0.0, r_out = 0.0;
  int center_lines = 16;
  bool model_center = false;
};

struct ProbeConfig {
  std::string notion = "multi-singular";
  /// NaN: the first grid values of the first check of that notion.
  double eta = std::numeric_limits<double>::quiet_NaN();
  double T = std::numeric_limits<double>::quiet_NaN();
  double delta = 0.01;
  std::size_t trials = 20;
  double polynomial_fraction = 0.1;
  double boundary_margin = 0.05;
  double min_margin_ratio = 0.5;
};

struct AnalysisConfig {
  FieldConfig field;
  Box region;
  IntegratorOptions integrator;
  OrbitConfig orbit;
  LambdaConfig lambda;
  ChainConfig chain;
  LyapunovConfig lyapunov;
  DominationConfig domination;
  std::vector<CheckConfig> checks;
  ProbeConfig probe;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  bool strict_vacuous = false;
  std::string output = "out";
};

inline const std::vector<std::string>& check_notions() {
  static const std::vector<std::string> n{"singular-domination", "multi-singular", "uniform",
                                          "singular-hyperbolic", "renormalized-multi-singular", "crosscheck"};
  return n;
}

namespace detail {

inline ParamSet read_params(const Json& j, const std::string& ptr) {
  if (!j.is_object()) throw ConfigError(ptr, "expected an object");
  ParamSet p;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string at = ptr + "/" + pointer_escape(it.key());
    if (it->is_array()) p[it.key()] = ObjectReader::as_numbers(*it, at);
    else p[it.key()] = {ObjectReader::as_number(*it, at)};
  }
  return p;
}

inline PolynomialTable read_polynomial(const Json& j, const std::string& ptr) {
  ObjectReader r(j, ptr);
  PolynomialTable t;
  t.dimension = static_cast<int>(r.integer("dimension", 0));
  if (t.dimension <= 0) throw ConfigError(r.child("dimension"), "required positive integer");
  const Json* terms = r.get("terms");
  const std::string tp = r.child("terms");
  if (!terms || !terms->is_array() || static_cast<int>(terms->size()) != t.dimension)
    throw ConfigError(tp, "expected one array of monomials per component");
  for (std::size_t c = 0; c < terms->size(); ++c) {
    const std::string cp = tp + "/" + std::to_string(c);
    if (!(*terms)[c].is_array()) throw ConfigError(cp, "expected an array of monomials");
    std::vector<Monomial> comp;
    for (std::size_t m = 0; m < (*terms)[c].size(); ++m) {
      ObjectReader mr((*terms)[c][m], cp + "/" + std::to_string(m));
      Monomial mono;
      mono.coef = mr.required_number("coefficient");
      for (long long p : mr.integers("powers", {})) {
        if (p < 0) throw ConfigError(mr.child("powers"), "powers must be non-negative");
        mono.powers.push_back(static_cast<int>(p));
      }
      if (static_cast<int>(mono.powers.size()) != t.dimension)
        throw ConfigError(mr.child("powers"), "expected one power per coordinate");
      mr.finish();
      comp.push_back(std::move(mono));
    }
    t.terms.push_back(std::move(comp));
  }
  r.finish();
  return t;
}

inline void read_grid(ObjectReader& r, GridOptions& g) {
  g.eta = r.numbers("eta", g.eta);
  g.T = r.numbers("T", g.T);
  if (g.eta.empty()) throw ConfigError(r.child("eta"), "grid needs at least one value");
  if (g.T.empty()) throw ConfigError(r.child("T"), "grid needs at least one value");
  for (std::size_t k = 0; k < g.eta.size(); ++k)
    if (!(g.eta[k] > 0)) throw ConfigError(r.child("eta") + "/" + std::to_string(k), "must be positive");
  for (std::size_t k = 0; k < g.T.size(); ++k)
    if (!(g.T[k] > 0)) throw ConfigError(r.child("T") + "/" + std::to_string(k), "must be positive");
  g.window = r.number("window", g.window);
  if (!(g.window > 0)) throw ConfigError(r.child("window"), "must be positive");
  g.t_max = r.number("t_max", g.t_max);
  if (g.t_max < 0) throw ConfigError(r.child("t_max"), "must be non-negative");
  const long long stride = r.integer("stride", static_cast<long long>(g.stride));
  if (stride < 1) throw ConfigError(r.child("stride"), "must be at least 1");
  g.stride = static_cast<std::size_t>(stride);
  g.min_gap = r.number("min_gap", g.min_gap);
}

inline double positive(ObjectReader& r, const std::string& key, double fallback) {
  const double v = r.number(key, fallback);
  if (!(v > 0)) throw ConfigError(r.child(key), "must be positive");
  return v;
}

inline double non_negative(ObjectReader& r, const std::string& key, double fallback) {
  const double v = r.number(key, fallback);
  if (v < 0) throw ConfigError(r.child(key), "must be non-negative");
  return v;
}

inline Json grid_json(const GridOptions& g) {
  Json j;
  j["eta"] = g.eta;
  j["T"] = g.T;
  j["window"] = g.window;
  j["t_max"] = g.t_max;
  j["stride"] = g.stride;
  j["min_gap"] = g.min_gap;
  return j;
}

}  // namespace detail

inline VectorFieldSpec make_field(const FieldConfig& f, const Box& region) {
  VectorFieldSpec spec = f.kind == "polynomial" ? polynomial_field("polynomial", f.polynomial, region)
                                                : builtin(f.kind, f.params);
  spec.region = region;
  return spec;
}

inline AnalysisConfig parse_config(const Json& root) {
  using detail::ObjectReader;
  AnalysisConfig c;
  ObjectReader r(root, "");

  // field
  {
    const Json* fj = r.get("field");
    if (!fj) throw ConfigError("/field", "required object is missing");
    ObjectReader fr(*fj, "/field");
    const bool has_builtin = fr.has("builtin"), has_poly = fr.has("polynomial");
    if (has_builtin == has_poly) throw ConfigError("/field", "give exactly one of 'builtin' and 'polynomial'");
    if (has_builtin) {
      c.field.kind = fr.string("builtin", "");
      const Json* pj = fr.get("params");
      c.field.params = pj ? detail::read_params(*pj, "/field/params") : default_params(c.field.kind);
    } else {
      c.field.kind = "polynomial";
      c.field.polynomial = detail::read_polynomial(*fr.get("polynomial"), "/field/polynomial");
    }
    fr.finish();
  }

  // region, defaulting to the built-in's
  {
    std::optional<Box> fallback;
    if (c.field.kind != "polynomial") {
      try {
        fallback = builtin(c.field.kind, c.field.params).region;
      } catch (const PreconditionError& e) {
        throw ConfigError("/field", e.what());
      }
    }
    const Json* rj = r.get("region");
    if (rj) {
      ObjectReader rr(*rj, "/region");
      const auto lo = rr.numbers("lo", {}), hi = rr.numbers("hi", {});
      rr.finish();
      if (lo.empty() || lo.size() != hi.size()) throw ConfigError("/region", "'lo' and 'hi' need equal non-zero length");
      for (std::size_t k = 0; k < lo.size(); ++k)
        if (!(lo[k] < hi[k])) throw ConfigError("/region/hi/" + std::to_string(k), "must exceed lo");
      c.region = Box{detail::to_vector(lo), detail::to_vector(hi)};
    } else if (fallback) {
      c.region = *fallback;
    } else {
      throw ConfigError("/region", "required for polynomial fields");
    }
    const int d = c.field.kind == "polynomial" ? c.field.polynomial.dimension : builtin(c.field.kind, c.field.params).dimension;
    if (c.region.dimension() != d) throw ConfigError("/region", "dimension differs from the field's");
  }
  const int d = c.region.dimension();

  if (const Json* ij = r.get("integrator")) {
    ObjectReader ir(*ij, "/integrator");
    c.integrator.tol = detail::positive(ir, "tol", c.integrator.tol);
    const std::string m = ir.string("method", "dormand-prince");
    if (m == "dormand-prince") c.integrator.method = Method::DormandPrince45;
    else if (m == "rk4") c.integrator.method = Method::FixedRK4;
    else throw ConfigError(ir.child("method"), "expected 'dormand-prince' or 'rk4'");
    c.integrator.fixed_step = detail::positive(ir, "step", c.integrator.fixed_step);
    ir.finish();
  }

  c.orbit.x0 = detail::to_std(c.region.center());
  if (const Json* oj = r.get("orbit")) {
    ObjectReader orr(*oj, "/orbit");
    c.orbit.x0 = orr.numbers("x0", c.orbit.x0);
    if (static_cast<int>(c.orbit.x0.size()) != d) throw ConfigError(orr.child("x0"), "needs one entry per coordinate");
    c.orbit.t_total = detail::positive(orr, "t_total", c.orbit.t_total);
    c.orbit.dt = detail::positive(orr, "dt", c.orbit.dt);
    c.orbit.transient = orr.number("transient", c.orbit.transient);
    if (c.orbit.transient < 0 || c.orbit.transient >= 1) throw ConfigError(orr.child("transient"), "must lie in [0, 1)");
    orr.finish();
  }

  if (const Json* lj = r.get("lambda")) {
    ObjectReader lr(*lj, "/lambda");
    auto& l = c.lambda;
    l.source = lr.string("source", l.source);
    if (l.source != "orbit-closure" && l.source != "unstable-branch" && l.source != "box-class" && l.source != "points")
      throw ConfigError(lr.child("source"), "expected orbit-closure, unstable-branch, box-class or points");
    l.near = lr.numbers("near", std::vector<double>(static_cast<std::size_t>(d), 0.0));
    if (static_cast<int>(l.near.size()) != d) throw ConfigError(lr.child("near"), "needs one entry per coordinate");
    l.offset = detail::positive(lr, "offset", l.offset);
    l.inclusion_radius = detail::non_negative(lr, "inclusion_radius", l.inclusion_radius);
    const long long k = lr.integer("class", 0);
    if (k < 0) throw ConfigError(lr.child("class"), "must be non-negative");
    l.class_index = static_cast<std::size_t>(k);
    l.file = lr.string("file", "");
    if (l.source == "points" && l.file.empty()) throw ConfigError(lr.child("file"), "required for source 'points'");
    lr.finish();
  } else {
    c.lambda.near.assign(static_cast<std::size_t>(d), 0.0);
  }
  if (!(c.lambda.inclusion_radius > 0)) c.lambda.inclusion_radius = 1e-3 * c.region.diameter();

  if (const Json* cj = r.get("chain")) {
    ObjectReader cr(*cj, "/chain");
    const auto res = cr.integers("resolution", {64});
    c.chain.resolution.clear();
    for (std::size_t k = 0; k < res.size(); ++k) {
      if (res[k] < 2) throw ConfigError(cr.child("resolution") + "/" + std::to_string(k), "must be at least 2");
      c.chain.resolution.push_back(static_cast<int>(res[k]));
    }
    if (c.chain.resolution.size() != 1 && static_cast<int>(c.chain.resolution.size()) != d)
      throw ConfigError(cr.child("resolution"), "give one value or one per axis");
    c.chain.epsilon = detail::non_negative(cr, "epsilon", c.chain.epsilon);
    c.chain.t_edge = cr.number("t_edge", c.chain.t_edge);
    if (!(c.chain.t_edge >= 1)) throw ConfigError(cr.child("t_edge"), "must be at least 1");
    c.chain.jitter = static_cast<int>(cr.integer("jitter", c.chain.jitter));
    if (c.chain.jitter < 0) throw ConfigError(cr.child("jitter"), "must be non-negative");
    cr.finish();
  }
  if (c.chain.resolution.size() == 1) c.chain.resolution.assign(static_cast<std::size_t>(d), c.chain.resolution[0]);
  if (!(c.chain.epsilon > 0)) {
    Vector side = c.region.hi - c.region.lo;
    for (int i = 0; i < d; ++i) side[i] /= c.chain.resolution[static_cast<std::size_t>(i)];
    c.chain.epsilon = 1.5 * side.norm();
  }

  if (const Json* yj = r.get("lyapunov")) {
    ObjectReader yr(*yj, "/lyapunov");
    c.lyapunov.t_total = detail::positive(yr, "t_total", c.lyapunov.t_total);
    c.lyapunov.dt = detail::positive(yr, "dt", c.lyapunov.dt);
    c.lyapunov.transient_time = detail::non_negative(yr, "transient_time", c.lyapunov.transient_time);
    const long long rec = yr.integer("records", static_cast<long long>(c.lyapunov.records));
    if (rec < 2) throw ConfigError(yr.child("records"), "must be at least 2");
    c.lyapunov.records = static_cast<std::size_t>(rec);
    yr.finish();
  }

  if (const Json* dj = r.get("domination")) {
    ObjectReader dr(*dj, "/domination");
    c.domination.index = static_cast<int>(dr.integer("index", c.domination.index));
    if (c.domination.index < 1) throw ConfigError(dr.child("index"), "must be at least 1");
    detail::read_grid(dr, c.domination.grid);
    dr.finish();
  }

  if (const Json* kj = r.get("checks")) {
    if (!kj->is_array()) throw ConfigError("/checks", "expected an array of checks");
    for (std::size_t n = 0; n < kj->size(); ++n) {
      ObjectReader kr((*kj)[n], "/checks/" + std::to_string(n));
      CheckConfig k;
      k.notion = kr.string("notion", "");
      const auto& names = check_notions();
      if (std::find(names.begin(), names.end(), k.notion) == names.end())
        throw ConfigError(kr.child("notion"), "unknown notion '" + k.notion + "'");
      detail::read_grid(kr, k.grid);
      k.index = static_cast<int>(kr.integer("index", 0));
      if (k.index < 0 || k.index > d - 2) throw ConfigError(kr.child("index"), "must be 0 (automatic) or lie in [1, d-2]");
      for (long long i : kr.integers("index_candidates", {})) {
        if (i < 1 || i > d - 2) throw ConfigError(kr.child("index_candidates"), "entries must lie in [1, d-2]");
        k.index_candidates.push_back(static_cast<int>(i));
      }
      k.v_radius = detail::non_negative(kr, "v_radius", 0.0);
      if (!(k.v_radius > 0)) k.v_radius = 0.02 * c.region.diameter();
      k.iso_time = detail::non_negative(kr, "iso_time", k.iso_time);
      k.r_out = detail::non_negative(kr, "r_out", 0.0);
      if (!(k.r_out > 0)) k.r_out = k.v_radius;
      k.r_in = detail::non_negative(kr, "r_in", 0.0);
      if (!(k.r_in > 0)) k.r_in = 0.5 * k.r_out;
      if (!(k.r_in < k.r_out)) throw ConfigError(kr.child("r_in"), "must be smaller than r_out");
      k.center_lines = static_cast<int>(kr.integer("center_lines", k.center_lines));
      if (k.center_lines < 1) throw ConfigError(kr.child("center_lines"), "must be positive");
      k.model_center = kr.boolean("model_center", false);
      kr.finish();
      c.checks.push_back(std::move(k));
    }
  }

  if (const Json* pj = r.get("probe")) {
    ObjectReader pr(*pj, "/probe");
    auto& p = c.probe;
    p.notion = pr.string("notion", p.notion);
    try {
      notion_from_string(p.notion);
    } catch (const PreconditionError&) {
      throw ConfigError(pr.child("notion"), "unknown notion '" + p.notion + "'");
    }
    p.eta = pr.number("eta", p.eta);
    p.T = pr.number("T", p.T);
    p.delta = detail::non_negative(pr, "delta", p.delta);
    const long long trials = pr.integer("trials", static_cast<long long>(p.trials));
    if (trials < 1) throw ConfigError(pr.child("trials"), "must be positive");
    p.trials = static_cast<std::size_t>(trials);
    p.polynomial_fraction = detail::non_negative(pr, "polynomial_fraction", p.polynomial_fraction);
    p.boundary_margin = detail::non_negative(pr, "boundary_margin", p.boundary_margin);
    p.min_margin_ratio = detail::non_negative(pr, "min_margin_ratio", p.min_margin_ratio);
    pr.finish();
  }
  {
    auto& p = c.probe;
    auto it = std::find_if(c.checks.begin(), c.checks.end(), [&](const CheckConfig& k) { return k.notion == p.notion; });
    if (std::isnan(p.eta)) p.eta = it != c.checks.end() ? it->grid.eta.front() : GridOptions{}.eta.front();
    if (std::isnan(p.T)) p.T = it != c.checks.end() ? it->grid.T.front() : GridOptions{}.T.front();
    if (!(p.eta > 0)) throw ConfigError("/probe/eta", "must be positive");
    if (!(p.T > 0)) throw ConfigError("/probe/T", "must be positive");
  }

  const long long seed = r.integer("seed", 1);
  if (seed < 0) throw ConfigError("/seed", "must be non-negative");
  c.seed = static_cast<std::uint64_t>(seed);
  const long long threads = r.integer("threads", 1);
  if (threads < 1) throw ConfigError("/threads", "must be positive");
  c.threads = static_cast<unsigned>(threads);
  c.strict_vacuous = r.boolean("strict_vacuous", false);
  c.output = r.string("output", c.output);
  r.finish();
  return c;
}

inline AnalysisConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open '" + path + "'");
  Json root;
  try {
    root = Json::parse(in, nullptr, true, true);
  } catch (const Json::parse_error& e) {
    throw ConfigError("", std::string("parse error: ") + e.what());
  }
  return parse_config(root);
}

inline Json to_json(const AnalysisConfig& c) {
  Json j;
  Json f;
  if (c.field.kind == "polynomial") {
    Json p;
    p["dimension"] = c.field.polynomial.dimension;
    Json terms = Json::array();
    for (const auto& comp : c.field.polynomial.terms) {
      Json cj = Json::array();
      for (const auto& m : comp) cj.push_back(Json{{"coefficient", m.coef}, {"powers", m.powers}});
      terms.push_back(cj);
    }
    p["terms"] = terms;
    f["polynomial"] = p;
  } else {
    f["builtin"] = c.field.kind;
    Json p = Json::object();
    for (const auto& [k, v] : c.field.params) {
      if (v.size() == 1 && k != "A") p[k] = v[0];
      else p[k] = v;
    }
    f["params"] = p;
  }
  j["field"] = f;
  j["region"] = {{"lo", detail::to_std(c.region.lo)}, {"hi", detail::to_std(c.region.hi)}};
  j["integrator"] = {{"tol", c.integrator.tol},
                     {"method", c.integrator.method == Method::FixedRK4 ? "rk4" : "dormand-prince"},
                     {"step", c.integrator.fixed_step}};
  j["orbit"] = {{"x0", c.orbit.x0}, {"t_total", c.orbit.t_total}, {"dt", c.orbit.dt}, {"transient", c.orbit.transient}};
  Json l = {{"source", c.lambda.source},
            {"near", c.lambda.near},
            {"offset", c.lambda.offset},
            {"inclusion_radius", c.lambda.inclusion_radius},
            {"class", c.lambda.class_index}};
  if (!c.lambda.file.empty()) l["file"] = c.lambda.file;
  j["lambda"] = l;
  j["chain"] = {{"resolution", c.chain.resolution},
                {"epsilon", c.chain.epsilon},
                {"t_edge", c.chain.t_edge},
                {"jitter", c.chain.jitter}};
  j["lyapunov"] = {{"t_total", c.lyapunov.t_total},
                   {"dt", c.lyapunov.dt},
                   {"transient_time", c.lyapunov.transient_time},
                   {"records", c.lyapunov.records}};
  Json dom = detail::grid_json(c.domination.grid);
  dom["index"] = c.domination.index;
  j["domination"] = dom;
  Json checks = Json::array();
  for (const auto& k : c.checks) {
    Json kj;
    kj["notion"] = k.notion;
    const Json grid = detail::grid_json(k.grid);
    for (auto it = grid.begin(); it != grid.end(); ++it) kj[it.key()] = *it;
    kj["index"] = k.index;
    kj["index_candidates"] = k.index_candidates;
    kj["v_radius"] = k.v_radius;
    kj["iso_time"] = k.iso_time;
    kj["r_in"] = k.r_in;
    kj["r_out"] = k.r_out;
    kj["center_lines"] = k.center_lines;
    kj["model_center"] = k.model_center;
    checks.push_back(kj);
  }
  j["checks"] = checks;
  j["probe"] = {{"notion", c.probe.notion},
                {"eta", c.probe.eta},
                {"T", c.probe.T},
                {"delta", c.probe.delta},
                {"trials", c.probe.trials},
                {"polynomial_fraction", c.probe.polynomial_fraction},
                {"boundary_margin", c.probe.boundary_margin},
                {"min_margin_ratio", c.probe.min_margin_ratio}};
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["strict_vacuous"] = c.strict_vacuous;
  // The output directory is not an analysis input; leaving it out keeps
  // reports from different directories identical.
  return j;
}

inline CheckOptions check_options(const AnalysisConfig& c, const CheckConfig& k) {
  CheckOptions o;
  o.window = k.grid.window;
  o.t_max = k.grid.t_max;
  o.stride = k.grid.stride;
  o.min_gap = k.grid.min_gap;
  o.threads = c.threads;
  o.strict_vacuous = c.strict_vacuous;
  o.v_radius = k.v_radius;
  o.iso_time = k.iso_time;
  o.r_in = k.r_in;
  o.r_out = k.r_out;
  o.center_lines = k.center_lines;
  o.model_center = k.model_center;
  o.index_candidates = k.index_candidates;
  o.seed = c.seed;
  return o;
}

// ---------------------------------------------------------------------------
// Lambda provenance

/// Points from a CSV file: one header line, then one row of coordinates per
/// point (extra leading columns beyond d are ignored from the left).
inline std::vector<Vector> read_points_csv(const std::string& path, int d) {
  std::ifstream in(path);
  if (!in) throw PreconditionError("cannot open point file '" + path + "'");
  std::string line;
  std::getline(in, line);
  std::vector<Vector> pts;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<double> vals;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        vals.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw PreconditionError(path + ":" + std::to_string(row) + ": not a number: '" + cell + "'");
      }
    }
    if (static_cast<int>(vals.size()) < d)
      throw PreconditionError(path + ":" + std::to_string(row) + ": expected at least " + std::to_string(d) + " columns");
    pts.push_back(detail::to_vector(std::vector<double>(vals.end() - d, vals.end())));
  }
  if (pts.empty()) throw PreconditionError("point file '" + path + "' has no rows");
  return pts;
}

inline BoxGraph chain_graph(const VectorFieldSpec& spec, const AnalysisConfig& c) {
  BoxGraphOptions o;
  o.epsilon = c.chain.epsilon;
  o.t_edge = c.chain.t_edge;
  o.jitter = c.chain.jitter;
  o.seed = c.seed;
  o.threads = c.threads;
  return build_box_graph(spec, c.region, c.chain.resolution, o);
}

inline LambdaSample build_lambda(const VectorFieldSpec& spec, const AnalysisConfig& c) {
  const auto zeros = find_singularities(spec, c.region).zeros;
  const auto& l = c.lambda;
  if (l.source == "orbit-closure")
    return lambda_from_orbit(spec, detail::to_vector(c.orbit.x0), c.orbit.t_total, c.orbit.dt, c.orbit.transient, zeros,
                             l.inclusion_radius, c.integrator);
  if (l.source == "unstable-branch") {
    if (zeros.empty()) throw PreconditionError("unstable-branch: the field has no zero in the region");
    const Vector near = detail::to_vector(l.near);
    std::size_t best = 0;
    for (std::size_t k = 1; k < zeros.size(); ++k)
      if ((zeros[k].location - near).norm() < (zeros[best].location - near).norm()) best = k;
    return lambda_from_unstable_branch(spec, zeros[best], l.offset, c.orbit.t_total, c.orbit.dt, zeros,
                                       l.inclusion_radius, c.integrator);
  }
  if (l.source == "box-class") {
    const auto g = chain_graph(spec, c);
    const auto classes = chain_classes(g);
    if (l.class_index >= classes.size())
      throw PreconditionError("box-class: class " + std::to_string(l.class_index) + " requested, " +
                              std::to_string(classes.size()) + " found");
    return class_lambda(spec, g, classes[l.class_index]);
  }
  auto pts = read_points_csv(l.file, spec.dimension);
  std::vector<SingularityInfo> inside;
  for (const auto& z : zeros) {
    const bool hit = std::any_of(pts.begin(), pts.end(),
                                 [&](const Vector& p) { return (p - z.location).norm() <= l.inclusion_radius; });
    if (hit) inside.push_back(z);
  }
  return lambda_from_points(std::move(pts), std::move(inside), "points");
}

}  // namespace singhyp
