#pragma once

// Command-line front end: one command per run, all inputs from a config file,
// results in report.json plus CSV series. Nothing time-dependent goes into the
// output directory; wall-clock timings go to the log stream only.

#include "singhyp/config.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>

#ifndef SINGHYP_VERSION
#define SINGHYP_VERSION "0.1.0"
#endif

namespace singhyp::cli {

inline constexpr int kReportSchema = 1;

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> c{"singularities", "lyapunov", "domination", "chain-classes", "verdicts", "probe"};
  return c;
}

// ---------------------------------------------------------------------------
// Serialization

inline std::string fmt17(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace detail {

inline bool is_scalar(const Json& j) { return !j.is_object() && !j.is_array(); }

inline void dump(const Json& j, std::string& out, int depth) {
  const std::string pad(static_cast<std::size_t>(2 * (depth + 1)), ' ');
  const std::string close(static_cast<std::size_t>(2 * depth), ' ');
  switch (j.type()) {
    case Json::value_t::number_float: {
      const double x = j.get<double>();
      out += std::isfinite(x) ? fmt17(x) : "\"" + fmt17(x) + "\"";
      return;
    }
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ",\n";
        first = false;
        out += pad + Json(it.key()).dump() + ": ";
        dump(*it, out, depth + 1);
      }
      out += "\n" + close + "}";
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      const bool flat = std::all_of(j.begin(), j.end(), is_scalar);
      out += flat ? "[" : "[\n";
      for (std::size_t k = 0; k < j.size(); ++k) {
        if (k) out += flat ? ", " : ",\n";
        if (!flat) out += pad;
        dump(j[k], out, depth + 1);
      }
      out += flat ? "]" : "\n" + close + "]";
      return;
    }
    default:
      out += j.dump();
  }
}

}  // namespace detail

/// JSON text with every float at 17 significant digits; non-finite floats
/// become the strings "inf", "-inf" and "nan".
inline std::string dump_json(const Json& j) {
  std::string out;
  detail::dump(j, out, 0);
  out += "\n";
  return out;
}

inline Json vec_json(const Vector& v) { return singhyp::detail::to_std(v); }

inline Json certificate_json(const Certificate& c) {
  return Json{{"kind", c.kind},
              {"eta", c.eta},
              {"T", c.T},
              {"t_max", c.t_max},
              {"index", c.index},
              {"pass", c.pass},
              {"vacuous", c.vacuous},
              {"margin", c.margin()},
              {"log_worst_ratio", c.log_worst_ratio},
              {"worst_time", c.worst_time},
              {"worst_sample", c.worst_sample},
              {"samples_tested", c.samples_tested},
              {"pairs_tested", c.pairs_tested}};
}

inline Json escape_json(const EscapeResult& e) {
  return Json{{"escapes", e.escapes},
              {"hits", e.hits},
              {"min_distance", e.min_distance},
              {"tube_samples", e.tube_samples},
              {"trajectories", e.trajectories},
              {"disk_radius", e.disk_radius},
              {"tolerance", e.tolerance},
              {"ball_radius", e.ball_radius},
              {"validation_ratio", e.validation_ratio}};
}

inline Json verdict_json(const Verdict& v) {
  Json j;
  j["notion"] = to_string(v.notion);
  j["pass"] = v.pass;
  j["index"] = v.index ? Json(*v.index) : Json(nullptr);
  j["eta"] = v.eta ? Json(*v.eta) : Json(nullptr);
  j["T"] = v.T ? Json(*v.T) : Json(nullptr);
  j["margin"] = v.margin;
  j["reason"] = v.reason;
  j["vacuous_flags"] = v.vacuous_flags;
  j["notes"] = v.notes;
  Json ev = Json::array();
  for (const auto& e : v.evidence) {
    Json ej{{"kind", e.kind},     {"subject", e.subject}, {"mandatory", e.mandatory}, {"pass", e.pass},
            {"vacuous", e.vacuous}, {"margin", e.margin},   {"note", e.note}};
    if (e.certificate) ej["certificate"] = certificate_json(*e.certificate);
    if (e.escape) ej["escape"] = escape_json(*e.escape);
    ev.push_back(ej);
  }
  j["evidence"] = ev;
  return j;
}

inline Json zero_json(const SingularityInfo& s) {
  Json eig = Json::array();
  for (const auto& z : s.eigenvalues) eig.push_back(Json::array({z.real(), z.imag()}));
  Json blocks = Json::array();
  for (const auto& b : s.blocks) blocks.push_back(Json{{"dim", b.dim()}, {"real_part", b.real_part}});
  Json j{{"location", vec_json(s.location)},
         {"eigenvalues", eig},
         {"hyperbolic", s.hyperbolic},
         {"index", s.index},
         {"blocks", blocks},
         {"lorenz_like", s.lorenz_like},
         {"lorenz_case", to_string(s.lorenz_case)}};
  if (s.lorenz_like) {
    j["lambda_s"] = s.lambda_s;
    j["lambda_u"] = s.lambda_u;
    j["rho_ss"] = s.rho_ss;
    j["rho_uu"] = s.rho_uu;
    j["rho_c"] = s.rho_c;
    j["dims"] = {{"ss", s.dim_ss}, {"c", s.dim_c}, {"uu", s.dim_uu}};
  } else {
    j["lorenz_reason"] = s.lorenz_reason;
  }
  return j;
}

inline Json lambda_json(const LambdaSample& lam) {
  Json z = Json::array();
  for (const auto& s : lam.singularities) z.push_back(vec_json(s.location));
  return Json{{"provenance", lam.provenance},
              {"points", lam.points.size()},
              {"singularities", z},
              {"hausdorff_slack", lam.hausdorff_slack}};
}

// ---------------------------------------------------------------------------
// CSV

class Csv {
 public:
  explicit Csv(std::initializer_list<std::string> header) {
    bool first = true;
    for (const auto& h : header) {
      text_ += (first ? "" : ",") + h;
      first = false;
    }
    text_ += "\n";
  }
  explicit Csv(const std::vector<std::string>& header) {
    for (std::size_t k = 0; k < header.size(); ++k) text_ += (k ? "," : "") + header[k];
    text_ += "\n";
  }
  Csv& cell(const std::string& s) {
    text_ += (fresh_ ? "" : ",") + s;
    fresh_ = false;
    return *this;
  }
  Csv& cell(double x) { return cell(fmt17(x)); }
  Csv& cell(std::size_t n) { return cell(std::to_string(n)); }
  Csv& cell(int n) { return cell(std::to_string(n)); }
  void end() {
    text_ += "\n";
    fresh_ = true;
  }
  const std::string& text() const { return text_; }

 private:
  std::string text_;
  bool fresh_ = true;
};

inline Csv orbit_csv(const OrbitSegment& o) {
  std::vector<std::string> h{"t"};
  for (int i = 0; i < o.dimension(); ++i) h.push_back("x" + std::to_string(i));
  Csv csv(h);
  for (std::size_t k = 0; k < o.size(); ++k) {
    csv.cell(o.times[k]);
    for (int i = 0; i < o.dimension(); ++i) csv.cell(o.states[k][i]);
    csv.end();
  }
  return csv;
}

// ---------------------------------------------------------------------------
// Commands

struct RunResult {
  int exit_code = 0;
  Json results;
  /// File name -> contents.
  std::map<std::string, std::string> files;
};

class Logger {
 public:
  explicit Logger(std::ostream& os) : os_(os), start_(std::chrono::steady_clock::now()) {}
  void operator()(const std::string& msg) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    char buf[32];
    std::snprintf(buf, sizeof buf, "[%8.2f s] ", s);
    os_ << buf << msg << std::endl;
  }

 private:
  std::ostream& os_;
  std::chrono::steady_clock::time_point start_;
};

namespace detail {

inline RunResult run_singularities(const AnalysisConfig& c, const VectorFieldSpec& spec, Logger& log) {
  RunResult r;
  const auto found = find_singularities(spec, c.region);
  Json zeros = Json::array();
  for (const auto& z : found.zeros) zeros.push_back(zero_json(z));
  r.results = {{"seeds", found.seeds}, {"abandoned", found.abandoned}, {"zeros", zeros}};
  log(std::to_string(found.zeros.size()) + " zeros");
  return r;
}

inline RunResult run_lyapunov(const AnalysisConfig& c, const VectorFieldSpec& spec, Logger& log) {
  RunResult r;
  Vector x0 = singhyp::detail::to_vector(c.orbit.x0);
  if (c.lyapunov.transient_time > 0) x0 = flow(spec, x0, c.lyapunov.transient_time, c.integrator);
  const auto ly = lyapunov_exponents(spec, x0, c.lyapunov.t_total, c.lyapunov.dt, c.integrator, c.lyapunov.records);
  r.results = {{"start", vec_json(x0)},
               {"exponents", vec_json(ly.exponents)},
               {"sum", ly.exponents.sum()},
               {"convergence_diagnostic", ly.diagnostic}};
  std::vector<std::string> h{"t"};
  for (int i = 0; i < ly.exponents.size(); ++i) h.push_back("lambda" + std::to_string(i));
  Csv csv(h);
  for (std::size_t k = 0; k < ly.times.size(); ++k) {
    csv.cell(ly.times[k]);
    for (int i = 0; i < ly.running[k].size(); ++i) csv.cell(ly.running[k][i]);
    csv.end();
  }
  r.files["exponents.csv"] = csv.text();
  log("exponents computed");
  return r;
}

inline CheckOptions grid_options(const AnalysisConfig& c, const GridOptions& g) {
  CheckOptions o;
  o.window = g.window;
  o.t_max = g.t_max;
  o.stride = g.stride;
  o.min_gap = g.min_gap;
  o.threads = c.threads;
  o.seed = c.seed;
  return o;
}

inline RunResult run_domination(const AnalysisConfig& c, const VectorFieldSpec& spec, Logger& log) {
  RunResult r;
  const int i = c.domination.index;
  if (i > spec.dimension - 2)
    throw PreconditionError("domination index " + std::to_string(i) + " needs dimension at least " + std::to_string(i + 2));
  auto lam = build_lambda(spec, c);
  log("Lambda: " + std::to_string(lam.points.size()) + " points");
  if (!lam.orbit || lam.orbit->size() < 2) throw PreconditionError("domination needs an orbit-based Lambda");
  Analysis a(spec, lam, grid_options(c, c.domination.grid));
  const auto& sp = a.poincare_splitting(i);
  if (!sp.sample) throw PreconditionError(sp.no_gap);
  Json grid = Json::array();
  Csv csv{"eta", "T", "t", "log_worst_ratio"};
  std::optional<Certificate> best;
  for (double eta : c.domination.grid.eta)
    for (double T : c.domination.grid.T) {
      const auto cert = domination_test(*sp.sample, eta, T, a.t_max(T), a.test_options(true));
      grid.push_back(Json{{"eta", eta}, {"T", T}, {"pass", cert.pass}, {"margin", cert.margin()}});
      for (const auto& [t, v] : cert.profile) {
        csv.cell(eta).cell(T).cell(t).cell(v);
        csv.end();
      }
      if (!best || (cert.pass && (!best->pass || cert.margin() > best->margin()))) best = cert;
    }
  r.results = {{"lambda", lambda_json(lam)},
               {"index", i},
               {"splitting_residual", sp.sample->max_residual},
               {"grid", grid},
               {"selected", certificate_json(*best)}};
  r.exit_code = best->pass ? 0 : 1;
  r.files["domination.csv"] = csv.text();
  r.files["orbit.csv"] = orbit_csv(*lam.orbit).text();
  log(std::string("domination ") + (best->pass ? "pass" : "fail"));
  return r;
}

inline RunResult run_chain(const AnalysisConfig& c, const VectorFieldSpec& spec, Logger& log) {
  RunResult r;
  const auto g = chain_graph(spec, c);
  const auto classes = chain_classes(g);
  const auto zeros = find_singularities(spec, c.region).zeros;
  Json cl = Json::array();
  for (std::size_t k = 0; k < classes.size(); ++k) {
    Vector lo = g.box(classes[k].front()).lo, hi = g.box(classes[k].front()).hi;
    for (std::size_t b : classes[k]) {
      lo = lo.cwiseMin(g.box(b).lo);
      hi = hi.cwiseMax(g.box(b).hi);
    }
    const auto lam = class_lambda(spec, g, classes[k]);
    Json zs = Json::array();
    for (const auto& z : lam.singularities) zs.push_back(vec_json(z.location));
    const std::string file = "class_" + std::to_string(k) + ".csv";
    cl.push_back(Json{{"class", k},
                      {"boxes", classes[k].size()},
                      {"lo", vec_json(lo)},
                      {"hi", vec_json(hi)},
                      {"zeros", zs},
                      {"file", file}});
    std::ostringstream os;
    write_class_csv(os, g, classes[k]);
    r.files[file] = os.str();
  }
  r.results = {{"boxes", g.size()},
               {"edges", g.edge_count()},
               {"dropped_samples", g.dropped},
               {"samples_per_box", g.samples_per_box},
               {"box_diameter", g.box_diameter()},
               {"epsilon", g.epsilon},
               {"t_edge", g.t_edge},
               {"classes", cl}};
  log(std::to_string(classes.size()) + " chain classes");
  return r;
}

inline std::string options_key(const CheckConfig& k) {
  std::ostringstream os;
  os << fmt17(k.grid.window) << '|' << fmt17(k.grid.t_max) << '|' << k.grid.stride << '|' << fmt17(k.grid.min_gap) << '|'
     << fmt17(k.v_radius) << '|' << fmt17(k.iso_time) << '|' << fmt17(k.r_in) << '|' << fmt17(k.r_out) << '|'
     << k.center_lines << '|' << k.model_center << '|';
  for (int i : k.index_candidates) os << i << ',';
  return os.str();
}

struct GridEntry {
  double eta = 0, T = 0;
  bool pass = false;
  double margin = 0;
  Json detail;
  std::vector<const Verdict*> verdicts;
};

inline RunResult run_verdicts(const AnalysisConfig& c, const VectorFieldSpec& spec, Logger& log) {
  if (c.checks.empty()) throw ConfigError("/checks", "the verdicts command needs at least one check");
  RunResult r;
  const auto lam = build_lambda(spec, c);
  log("Lambda: " + std::to_string(lam.points.size()) + " points, " + std::to_string(lam.singularities.size()) +
      " singularities (" + lam.provenance + ")");
  std::map<std::string, std::unique_ptr<Analysis>> analyses;
  std::vector<std::unique_ptr<Verdict>> keep;
  Json checks = Json::array();
  Csv ratios{"check", "eta", "T", "notion", "kind", "subject", "t", "log_worst_ratio"};
  bool all_pass = true;
  for (std::size_t n = 0; n < c.checks.size(); ++n) {
    const auto& k = c.checks[n];
    auto& slot = analyses[options_key(k)];
    if (!slot) slot = std::make_unique<Analysis>(spec, lam, check_options(c, k));
    Analysis& a = *slot;
    std::vector<GridEntry> entries;
    for (double eta : k.grid.eta)
      for (double T : k.grid.T) {
        GridEntry e;
        e.eta = eta;
        e.T = T;
        if (k.notion == "crosscheck") {
          const auto rep = equivalence_crosscheck(a, eta, T);
          e.pass = !rep.applicable || rep.consistent;
          e.margin = std::numeric_limits<double>::infinity();
          Json vs = Json::array();
          for (const auto& v : rep.verdicts) {
            vs.push_back(Json{{"notion", to_string(v.notion)}, {"pass", v.pass}, {"index", v.index ? Json(*v.index) : Json(nullptr)},
                              {"margin", v.margin}});
            keep.push_back(std::make_unique<Verdict>(v));
            e.verdicts.push_back(keep.back().get());
          }
          e.detail = Json{{"applicable", rep.applicable}, {"consistent", rep.consistent}, {"reason", rep.reason},
                          {"uniform_item", rep.uniform_item}, {"singular_item", rep.singular_item},
                          {"diagnostics", rep.diagnostics}, {"verdicts", vs}};
        } else {
          const Notion notion = notion_from_string(k.notion);
          Verdict v;
          if (notion == Notion::SingularDomination && k.index > 0) v = check_singular_domination(a, k.index, eta, T);
          else if (notion == Notion::Renormalized) v = check_renormalized(a, eta, T, k.index);
          else v = run_verdict(a, notion, eta, T);
          e.pass = v.pass;
          e.margin = v.margin;
          e.detail = verdict_json(v);
          keep.push_back(std::make_unique<Verdict>(std::move(v)));
          e.verdicts.push_back(keep.back().get());
        }
        log(k.notion + " eta=" + fmt17(eta) + " T=" + fmt17(T) + ": " + (e.pass ? "pass" : "fail"));
        entries.push_back(std::move(e));
      }
    // The passing pair with the largest margin; the first pair if none passes.
    std::size_t sel = 0;
    for (std::size_t m = 0; m < entries.size(); ++m)
      if (entries[m].pass && (!entries[sel].pass || entries[m].margin > entries[sel].margin)) sel = m;
    Json grid = Json::array();
    for (const auto& e : entries) grid.push_back(Json{{"eta", e.eta}, {"T", e.T}, {"pass", e.pass}, {"margin", e.margin}});
    const auto& s = entries[sel];
    for (const Verdict* v : s.verdicts)
      for (const auto& ev : v->evidence)
        if (ev.certificate)
          for (const auto& [t, lr] : ev.certificate->profile) {
            ratios.cell(n).cell(s.eta).cell(s.T).cell(std::string(to_string(v->notion))).cell(ev.kind).cell(ev.subject);
            ratios.cell(t).cell(lr);
            ratios.end();
          }
    all_pass = all_pass && s.pass;
    checks.push_back(Json{{"check", n},
                          {"notion", k.notion},
                          {"pass", s.pass},
                          {"eta", s.eta},
                          {"T", s.T},
                          {"margin", s.margin},
                          {"grid", grid},
                          {"result", s.detail}});
  }
  Json zeros = Json::array();
  for (const auto& z : lam.singularities) zeros.push_back(zero_json(z));
  r.results = {{"lambda", lambda_json(lam)}, {"singularities", zeros}, {"checks", checks}};
  r.exit_code = all_pass ? 0 : 1;
  r.files["ratios.csv"] = ratios.text();
  if (lam.orbit) r.files["orbit.csv"] = orbit_csv(*lam.orbit).text();
  return r;
}

inline RunResult run_probe(const AnalysisConfig& c, const VectorFieldSpec&, Logger& log) {
  RunResult r;
  const auto& p = c.probe;
  SpecBuilder make_spec;
  ParamSet base;
  if (c.field.kind == "polynomial") {
    std::vector<double> coef;
    for (const auto& comp : c.field.polynomial.terms)
      for (const auto& m : comp) coef.push_back(m.coef);
    base["coefficients"] = coef;
    make_spec = [c](const ParamSet& ps) {
      FieldConfig f = c.field;
      std::size_t at = 0;
      const auto& v = ps.at("coefficients");
      for (auto& comp : f.polynomial.terms)
        for (auto& m : comp) m.coef = v.at(at++);
      return make_field(f, c.region);
    };
  } else {
    base = c.field.params;
    make_spec = [c](const ParamSet& ps) {
      FieldConfig f = c.field;
      f.params = ps;
      return make_field(f, c.region);
    };
  }
  LambdaBuilder make_lambda = [c](const VectorFieldSpec& s) { return build_lambda(s, c); };
  CheckConfig k;
  k.notion = p.notion;
  auto it = std::find_if(c.checks.begin(), c.checks.end(), [&](const CheckConfig& x) { return x.notion == p.notion; });
  if (it != c.checks.end()) k = *it;
  ProbeOptions po;
  po.delta = p.delta;
  po.trials = p.trials;
  po.seed = c.seed;
  po.polynomial_fraction = p.polynomial_fraction;
  po.boundary_margin = p.boundary_margin;
  log("probe: " + std::to_string(p.trials) + " trials of " + p.notion);
  const auto rep = robustness_probe(make_spec, base, make_lambda, notion_from_string(p.notion), p.eta, p.T,
                                    check_options(c, k), po);
  Json trials = Json::array();
  Csv csv{"trial", "pass", "margin"};
  for (const auto& t : rep.trials) {
    Json params = Json::object();
    for (const auto& [name, v] : t.params) params[name] = v;
    trials.push_back(Json{{"trial", t.trial}, {"pass", t.pass}, {"margin", t.margin}, {"reason", t.reason}, {"params", params}});
    csv.cell(t.trial).cell(std::string(t.pass ? "1" : "0")).cell(t.margin);
    csv.end();
  }
  const bool ok = rep.base_pass && rep.passes == rep.trials.size() && rep.margin_ratio >= p.min_margin_ratio;
  r.results = {{"notion", p.notion},
               {"eta", rep.eta},
               {"T", rep.T},
               {"delta", rep.delta},
               {"base_pass", rep.base_pass},
               {"base_margin", rep.base_margin},
               {"passes", rep.passes},
               {"trials_run", rep.trials.size()},
               {"pass_rate", rep.pass_rate},
               {"worst_margin", rep.worst_margin},
               {"margin_ratio", rep.margin_ratio},
               {"min_margin_ratio", p.min_margin_ratio},
               {"flags", rep.flags},
               {"trials", trials}};
  r.exit_code = ok ? 0 : 1;
  r.files["probe.csv"] = csv.text();
  log("probe: " + std::to_string(rep.passes) + "/" + std::to_string(rep.trials.size()) + " pass, margin ratio " +
      fmt17(rep.margin_ratio));
  return r;
}

}  // namespace detail

/// Runs one command; throws on configuration or module errors.
inline RunResult run_command(const AnalysisConfig& c, const std::string& command, Logger& log) {
  const VectorFieldSpec spec = make_field(c.field, c.region);
  RunResult r;
  if (command == "singularities") r = detail::run_singularities(c, spec, log);
  else if (command == "lyapunov") r = detail::run_lyapunov(c, spec, log);
  else if (command == "domination") r = detail::run_domination(c, spec, log);
  else if (command == "chain-classes") r = detail::run_chain(c, spec, log);
  else if (command == "verdicts") r = detail::run_verdicts(c, spec, log);
  else if (command == "probe") r = detail::run_probe(c, spec, log);
  else throw PreconditionError("unknown command '" + command + "'");
  return r;
}

inline Json report(const AnalysisConfig& c, const std::string& command, const RunResult& r) {
  Json files = Json::array();
  for (const auto& [name, text] : r.files) files.push_back(name);
  return Json{{"schema_version", kReportSchema},
              {"tool", "singhyp"},
              {"tool_version", SINGHYP_VERSION},
              {"command", command},
              {"status", r.exit_code == 0 ? "pass" : "fail"},
              {"effective_config", to_json(c)},
              {"results", r.results},
              {"files", files}};
}

struct Overrides {
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  bool strict_vacuous = false;
};

/// Exit code 0: everything requested passes; 1: something fails; 2: error.
inline int run(const std::string& command, const std::string& config_path, const Overrides& o, std::ostream& log_os) {
  Logger log(log_os);
  AnalysisConfig c;
  try {
    c = load_config(config_path);
  } catch (const Error& e) {
    log_os << "error: " << e.what() << std::endl;
    return 2;
  }
  if (o.out) c.output = *o.out;
  if (o.seed) c.seed = *o.seed;
  if (o.threads) c.threads = *o.threads;
  if (o.strict_vacuous) c.strict_vacuous = true;
  RunResult r;
  try {
    r = run_command(c, command, log);
  } catch (const std::exception& e) {
    log_os << "error: " << command << ": " << e.what() << std::endl;
    return 2;
  }
  namespace fs = std::filesystem;
  try {
    fs::create_directories(c.output);
    for (const auto& [name, text] : r.files) {
      std::ofstream f(fs::path(c.output) / name, std::ios::binary);
      f << text;
      if (!f) throw Error("cannot write " + name);
    }
    std::ofstream f(fs::path(c.output) / "report.json", std::ios::binary);
    f << dump_json(report(c, command, r));
    if (!f) throw Error("cannot write report.json");
  } catch (const std::exception& e) {
    log_os << "error: output: " << e.what() << std::endl;
    return 2;
  }
  log(command + ": " + (r.exit_code == 0 ? "pass" : "fail") + ", report in " + c.output);
  return r.exit_code;
}

inline int main(int argc, char** argv) {
  CLI::App app{"Hyperbolicity verdicts for flows with singularities"};
  std::string command, config;
  Overrides o;
  std::string out;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  app.add_option("command", command, "singularities | lyapunov | domination | chain-classes | verdicts | probe")
      ->required()
      ->check(CLI::IsMember(commands()));
  app.add_option("--config", config, "Analysis config (JSON)")->required();
  auto* out_opt = app.add_option("--out", out, "Output directory (overrides the config)");
  auto* seed_opt = app.add_option("--seed", seed, "Seed (overrides the config)");
  auto* threads_opt = app.add_option("--threads", threads, "Worker threads (overrides the config)")->check(CLI::PositiveNumber);
  app.add_flag("--strict-vacuous", o.strict_vacuous, "Vacuous mandatory evidence fails the verdict");
  app.set_version_flag("--version", SINGHYP_VERSION);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  if (*out_opt) o.out = out;
  if (*seed_opt) o.seed = seed;
  if (*threads_opt) o.threads = threads;
  return run(command, config, o, std::cerr);
}

}  // namespace singhyp::cli
