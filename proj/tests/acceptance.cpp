// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include "singhyp/chain.hpp"
#include "singhyp/cli.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

using namespace singhyp;
namespace fs = std::filesystem;

#ifndef SINGHYP_CONFIG_DIR
#define SINGHYP_CONFIG_DIR "configs"
#endif

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

Vector v3(double a, double b, double c) { return Eigen::Vector3d(a, b, c); }

Vector e(int i, int d = 3) { return Vector::Unit(d, i); }

VectorFieldSpec diag(double a, double b, double c) {
  Matrix m = v3(a, b, c).asDiagonal();
  return linear_field(m);
}

VectorFieldSpec lorenz() { return builtin("lorenz", default_params("lorenz")); }

double rel(const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max(1e-300, b.norm()); }

std::string config(const char* name) { return (fs::path(SINGHYP_CONFIG_DIR) / name).string(); }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("singhyp_acceptance_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& cmd, const std::string& cfg, const fs::path& out) {
  cli::Overrides o;
  o.out = out.string();
  std::ostringstream log;
  const int rc = cli::run(cmd, cfg, o, log);
  if (rc == 2) std::fprintf(stderr, "%s", log.str().c_str());
  return rc;
}

Json report(const fs::path& out) {
  const std::string s = slurp(out / "report.json");
  return s.empty() ? Json() : Json::parse(s);
}

const Json* find_check(const Json& rep, const std::string& notion) {
  if (!rep.is_object()) return nullptr;
  for (const auto& c : rep["results"]["checks"])
    if (c["notion"] == notion) return &c;
  return nullptr;
}

// ---------------------------------------------------------------------------

Outcome closed_form_flows() {
  Outcome o;
  IntegratorOptions tight;
  tight.tol = 1e-12;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 0.6);
  std::vector<Matrix> fields{Matrix(v3(-2, -1, 1).asDiagonal())};
  for (int k = 0; k < 4; ++k) {
    Matrix a(3, 3);
    for (Eigen::Index i = 0; i < 9; ++i) a.data()[i] = g(rng);
    fields.push_back(a);
  }
  double worst = 0.0;
  for (const auto& a : fields) {
    const auto spec = linear_field(a);
    const Vector x0 = v3(0.3, -0.2, 0.5);
    for (double t = -2.0; t <= 2.0 + 1e-12; t += 0.25) {
      const Matrix ex = (a * t).exp();
      const Vector x = flow(spec, x0, t, tight);
      auto [y, m] = tangent_flow(spec, x0, t, tight);
      worst = std::max({worst, rel(x, ex * x0), rel(y, ex * x0), rel(m, ex)});
    }
  }
  o.require(worst <= 1e-8, "flow error " + num(worst));

  // Eigen-axis orbits of diag(-2,-1,1): Psi_t e_j = e^{l_j t} e_j, and relative
  // to the flow speed the ratio is e^{(l_j - l_i) t}.
  const double lam[3] = {-2, -1, 1};
  const auto spec = diag(-2, -1, 1);
  double worst_psi = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      if (i == j) continue;
      for (double t : {-2.0, -1.0, 0.5, 2.0}) {
        const Vector w = psi(spec, e(i), t, e(j), tight);
        const Vector y = flow(spec, e(i), t, tight);
        const double speed = spec(y).norm() / spec(e(i)).norm();
        worst_psi = std::max(worst_psi, rel(w, std::exp(lam[j] * t) * e(j)));
        worst_psi = std::max(worst_psi, std::abs(w.norm() / speed / std::exp((lam[j] - lam[i]) * t) - 1.0));
      }
    }
  o.require(worst_psi <= 1e-8, "psi error " + num(worst_psi));
  o.detail = "flow " + num(worst) + ", psi " + num(worst_psi) + (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

Outcome lorenz_singularities() {
  Outcome o;
  const auto spec = lorenz();
  const auto found = find_singularities(spec, spec.region);
  o.require(found.zeros.size() == 3, std::to_string(found.zeros.size()) + " zeros");
  const double q = std::sqrt(8.0 / 3.0 * 27.0);
  const std::vector<Vector> expected{v3(0, 0, 0), v3(q, q, 27), v3(-q, -q, 27)};
  double loc_err = 0.0;
  for (const auto& x : expected) {
    double best = 1e300;
    for (const auto& z : found.zeros) best = std::min(best, (z.location - x).norm());
    loc_err = std::max(loc_err, best);
  }
  o.require(loc_err <= 1e-8, "location error " + num(loc_err));

  const auto s = classify_singularity(spec, Vector::Zero(3));
  const double r = std::sqrt(1201.0);
  const double l_ss = (-11 - r) / 2, l_c = -8.0 / 3, l_u = (-11 + r) / 2;
  double eig_err = 1e300;
  if (s.eigenvalues.size() == 3) {
    eig_err = std::max({std::abs(s.eigenvalues[0] - Complex(l_ss, 0)), std::abs(s.eigenvalues[1] - Complex(l_c, 0)),
                        std::abs(s.eigenvalues[2] - Complex(l_u, 0))});
  }
  o.require(eig_err <= 1e-10, "eigenvalue error " + num(eig_err));
  o.require(s.lorenz_like, "origin not Lorenz-like");

  // Spectral radii of D phi_1 on E^ss, E^uu (for phi_{-1}) and E^c.
  const double rho_ss = std::exp(l_ss), rho_uu = std::exp(-l_u), rho_c = std::exp(l_c);
  o.require(std::abs(s.rho_ss / rho_ss - 1) < 1e-10 && std::abs(s.rho_uu / rho_uu - 1) < 1e-10 &&
                std::abs(s.rho_c / rho_c - 1) < 1e-10,
            "rho values differ from the closed form");
  o.require(std::max(rho_ss, rho_uu) < std::min(rho_c, 1 / rho_c) && std::min(rho_c, 1 / rho_c) < 1,
            "spectral inequality fails");
  o.detail = "zeros " + num(loc_err) + ", eigenvalues " + num(eig_err) + (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

Outcome lyapunov_suite() {
  Outcome o;
  const auto lin = lyapunov_exponents(diag(-2, -1, 1), v3(0.01, 0.02, 0.03), 10.0, 0.1);
  const double lin_err = (lin.exponents - v3(1, -1, -2)).cwiseAbs().maxCoeff();
  o.require(lin_err <= 1e-6, "linear error " + num(lin_err));
  const auto lor = lyapunov_exponents(lorenz(), v3(1, 1, 1), 2000.0, 0.01);
  const double sum = lor.exponents.sum();
  const double zero = lor.exponents.cwiseAbs().minCoeff();
  o.require(std::abs(sum + 41.0 / 3.0) <= 0.05, "sum " + num(sum));
  o.require(zero <= 0.02, "no exponent near 0");
  std::ostringstream os;
  os << "lorenz (" << lor.exponents[0] << ", " << lor.exponents[1] << ", " << lor.exponents[2] << "), sum "
     << sum;
  o.detail = os.str() + (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

Outcome domination_grid() {
  Outcome o;
  const auto spec = diag(-2, -1, 1);
  auto c = std::make_shared<const Cocycle>(poincare_cocycle(spec, sample_orbit(spec, e(0), 4.0, 0.01)));
  FrameField n1, n2;
  for (std::size_t k = 0; k < c->size(); ++k) {
    n1.indices.push_back(k);
    n2.indices.push_back(k);
    n1.frames.push_back(orthonormalize(c->coordinates(k, e(1))));
    n2.frames.push_back(orthonormalize(c->coordinates(k, e(2))));
  }
  const auto split = finite_time_splitting(c, 1, 1.0, {.stride = 5});
  std::string line;
  for (double eta : {1.0, 1.8, 2.5}) {
    const bool want = eta < 2.0;
    const auto axis = domination_test(*c, n1, n2, eta, 1.0, 2.5);
    const auto fts = domination_test(split, eta, 1.0, 2.0);
    o.require(axis.pass == want && !axis.vacuous, "axis frames at eta " + num(eta));
    o.require(fts.pass == want && !fts.vacuous, "computed splitting at eta " + num(eta));
    line += (line.empty() ? "" : ", ") + ("eta " + num(eta) + (axis.pass ? " pass" : " fail"));
  }
  o.detail = line + (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

struct DeskRun {
  fs::path a, b;
  int rc_a = -1, rc_b = -1;
};

Outcome multi_singular_desk(const DeskRun& run) {
  Outcome o;
  o.require(run.rc_a != 2, "run error");
  const Json rep = report(run.a);
  const Json* ms = find_check(rep, "multi-singular");
  const Json* cc = find_check(rep, "crosscheck");
  o.require(ms && (*ms)["pass"].get<bool>(), "multi-singular fails");
  if (ms) {
    o.require((*ms)["result"]["index"] == 1, "index " + (*ms)["result"]["index"].dump());
    o.require((*ms)["result"]["vacuous_flags"].empty(), "vacuous flags " + (*ms)["result"]["vacuous_flags"].dump());
  }
  bool uniform_fails = false;
  if (cc) {
    o.require((*cc)["result"]["applicable"].get<bool>() && (*cc)["result"]["consistent"].get<bool>(),
              "crosscheck " + (*cc)["result"]["reason"].get<std::string>());
    for (const auto& v : (*cc)["result"]["verdicts"])
      if (v["notion"] == "uniform") uniform_fails = !v["pass"].get<bool>();
  } else {
    o.require(false, "no crosscheck");
  }
  o.require(uniform_fails, "uniform verdict does not fail");
  if (ms && o.pass) o.detail = "index 1, margin " + num((*ms)["margin"].get<double>()) + ", uniform fails, consistent";
  return o;
}

Outcome renormalized_agreement(const DeskRun& lorenz_run) {
  Outcome o;
  const auto cycle = scratch("cycle");
  const int rc = run_cli("verdicts", config("saddle-cycle.json"), cycle);
  o.require(rc != 2, "saddle-cycle run error");
  std::string line;
  for (const auto& [name, dir] : {std::pair<std::string, fs::path>{"saddle-cycle", cycle}, {"lorenz", lorenz_run.a}}) {
    const Json rep = report(dir);
    const Json* ms = find_check(rep, "multi-singular");
    const Json* rn = find_check(rep, "renormalized-multi-singular");
    if (!ms || !rn) {
      o.require(false, name + ": missing check");
      continue;
    }
    const bool a = (*ms)["pass"].get<bool>(), b = (*rn)["pass"].get<bool>();
    o.require(a == b, name + ": verdicts disagree");
    line += (line.empty() ? "" : ", ") + name + " " + (a ? "pass" : "fail") + "/" + (b ? "pass" : "fail");
  }
  o.detail = line + (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// Bounds over one passage near sigma = 0 along field lines. Bullet 1: the
// ratio h / ||D phi|L|| over pairs of samples inside r_in. Bullet 2: h over
// pairs of samples outside the r_out ball.
std::pair<double, double> renorm_constants(const VectorFieldSpec& spec, const Vector& x0, double t, double dt,
                                           double r_in, double r_out) {
  const auto orbit = sample_orbit(spec, x0, t, dt);
  const auto c = extended_cocycle(orbit, spec(x0));
  const auto log_h = renorm_log_cocycle(spec, c, Vector::Zero(3), r_in, r_out);
  double lo1 = 0, hi1 = 0, lo2 = 0, hi2 = 0;
  bool in1 = false, in2 = false;
  for (std::size_t k = 0; k < c.size(); ++k) {
    const double r = c.states[k].norm();
    if (r <= r_in) {
      const double a = log_h[k] - c.log_line_growth[k];
      lo1 = in1 ? std::min(lo1, a) : a;
      hi1 = in1 ? std::max(hi1, a) : a;
      in1 = true;
    }
    if (r >= r_out) {
      lo2 = in2 ? std::min(lo2, log_h[k]) : log_h[k];
      hi2 = in2 ? std::max(hi2, log_h[k]) : log_h[k];
      in2 = true;
    }
  }
  if (!in1 || !in2) throw PreconditionError("passage does not visit both regions");
  return {std::exp(hi1 - lo1), std::exp(hi2 - lo2)};
}

Outcome renormalization_cocycle() {
  Outcome o;
  // Cocycle law from independent integrations: h^{t+s}(L) = h^t(L) h^s(hat-phi_t L).
  double law = 0.0;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0), tt(0.1, 0.6);
  struct Case {
    VectorFieldSpec spec;
    Vector x;
    double r_in, r_out;
  };
  const std::vector<Case> cases{{diag(-2, -1, 1), v3(0.3, 0.2, 0.05), 0.3, 0.6},
                                {lorenz(), v3(0.05, 0.02, 1.5), 1.0, 2.0}};
  for (const auto& cs : cases) {
    for (int probe = 0; probe < 5; ++probe) {
      const Vector x = cs.x + 0.02 * v3(u(rng), u(rng), u(rng));
      const auto l = LineElement::make(x, v3(u(rng), u(rng), u(rng)));
      const double t = std::round(tt(rng) * 1e3) * 1e-3, s = std::round(tt(rng) * 1e3) * 1e-3;
      const double whole = renorm_cocycle(cs.spec, l, t + s, Vector::Zero(3), cs.r_in, cs.r_out, 1e-4);
      const double first = renorm_cocycle(cs.spec, l, t, Vector::Zero(3), cs.r_in, cs.r_out, 1e-4);
      const auto moved = psi_hat(cs.spec, l, t, Vector::Zero(3)).first;
      const double second = renorm_cocycle(cs.spec, moved, s, Vector::Zero(3), cs.r_in, cs.r_out, 1e-4);
      law = std::max(law, std::abs(std::log(whole) - std::log(first) - std::log(second)));
    }
  }
  o.require(law <= 1e-8, "cocycle law error " + num(law));

  double c_max = 1.0;
  const auto lin = diag(-2, -1, 1);
  for (const Vector& x0 : {v3(1, 1, 1e-4), v3(0.3, -0.2, 1e-3), v3(-0.8, 0.5, 2e-3)}) {
    const auto [c1, c2] = renorm_constants(lin, x0, 10.0, 1e-3, 0.5, 1.0);
    c_max = std::max({c_max, c1, c2});
  }
  const double lin_c = c_max;
  // Lorenz passages: starts near the stable manifold (the z-axis) come down to
  // the origin and leave along the unstable branch.
  const auto lor = lorenz();
  for (const Vector& x0 : {v3(1e-3, 1e-3, 5), v3(-2e-3, 1e-3, 6), v3(5e-4, -1e-3, 8)}) {
    const auto [c1, c2] = renorm_constants(lor, x0, 2.5, 1e-4, 2.0, 4.0);
    c_max = std::max({c_max, c1, c2});
  }
  o.require(c_max < 10.0, "measured C " + num(c_max));
  o.detail = "law " + num(law) + ", C linear " + num(lin_c) + ", C overall " + num(c_max) +
             (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

Outcome subadditive_lemma() {
  Outcome o;
  std::mt19937_64 rng(29);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> box(-15.0, 15.0), T(0.2, 1.5), start(0.0, 10.0);
  const auto lor = lorenz();
  const auto cycle = builtin("saddle-cycle", default_params("saddle-cycle"));
  const double dt = 0.02;
  int held = 0;
  double worst_gap = 1e300;
  for (int k = 0; k < 50; ++k) {
    const bool on_cycle = k % 5 == 4;
    const auto& spec = on_cycle ? cycle : lor;
    const double angle = box(rng);
    const Vector x0 = on_cycle ? v3(std::cos(angle), std::sin(angle), 0.0)
                               : flow(lor, v3(box(rng), box(rng), 25 + box(rng)), 15.0 + start(rng));
    const double tT = std::round(T(rng) / dt) * dt;
    const double t = tT * (3.0 + 2.0 * (k % 3));
    const auto c = std::make_shared<const Cocycle>(poincare_cocycle(spec, sample_orbit(spec, x0, t + 4 * tT, dt)));
    Matrix f(2, 1 + k % 2);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = g(rng);
    const auto fam = log_norm_family(c, orthonormalize(f));
    const std::size_t k0 = static_cast<std::size_t>(std::llround(tT / dt));
    const std::size_t last = k0 + static_cast<std::size_t>(std::llround((t + tT) / dt)) + 1;
    const double cT = subadditive_constant(fam, tT, k0, last);
    const auto r = subadditive_bound_check(fam, cT, tT, t, k0, static_cast<std::uint64_t>(k));
    if (r.holds) ++held;
    worst_gap = std::min(worst_gap, r.rhs - r.lhs);
  }
  o.require(held == 50, std::to_string(50 - held) + " configurations violate the bound");
  o.detail = std::to_string(held) + "/50 hold, smallest slack " + num(worst_gap) +
             (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

Outcome chain_classes_criterion() {
  Outcome o;
  const auto spec = builtin("cubic1d-product");
  std::string line;
  for (int res : {64, 128}) {
    const auto g = build_box_graph(spec, spec.region, {res});
    const double diam = g.box_diameter();
    o.require(std::abs(g.epsilon - 1.5 * diam) < 1e-12 * diam, "epsilon is not 1.5 diam");
    const auto n = chain_classes(g).size();
    o.require(n == 3, std::to_string(n) + " classes at " + std::to_string(res));
    line += (line.empty() ? "" : ", ") + std::to_string(res) + "^2: " + std::to_string(n);
  }
  o.detail = line + (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

Outcome robustness() {
  Outcome o;
  const auto out = scratch("probe");
  const int rc = run_cli("probe", config("lorenz.json"), out);
  o.require(rc != 2, "run error");
  const Json rep = report(out);
  if (!rep.is_object()) return o;
  const Json& r = rep["results"];
  const auto passes = r["passes"].get<std::size_t>(), trials = r["trials_run"].get<std::size_t>();
  const double ratio = r["margin_ratio"].get<double>();
  o.require(r["base_pass"].get<bool>(), "base verdict fails");
  o.require(trials == 20 && passes == 20, std::to_string(passes) + "/" + std::to_string(trials) + " pass");
  o.require(ratio >= 0.5, "margin ratio " + num(ratio));
  o.detail = std::to_string(passes) + "/" + std::to_string(trials) + ", margin ratio " + num(ratio) +
             (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

Outcome determinism(const DeskRun& run) {
  Outcome o;
  const std::string a = slurp(run.a / "report.json"), b = slurp(run.b / "report.json");
  o.require(!a.empty(), "no report");
  o.require(a == b, "reports differ");
  o.require(run.rc_a == run.rc_b, "exit codes differ");
  if (o.pass) o.detail = std::to_string(a.size()) + " identical bytes";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  // Optional arguments select criteria by number; default runs all.
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  auto wanted = [&](int k) { return only.empty() || std::find(only.begin(), only.end(), k) != only.end(); };

  DeskRun desk;
  auto ensure_desk = [&, done = false]() mutable {
    if (done) return;
    done = true;
    desk.a = scratch("lorenz_a");
    desk.b = scratch("lorenz_b");
    desk.rc_a = run_cli("verdicts", config("lorenz.json"), desk.a);
    if (wanted(11)) desk.rc_b = run_cli("verdicts", config("lorenz.json"), desk.b);
  };

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"closed-form flows", closed_form_flows},
      {"lorenz singularities", lorenz_singularities},
      {"lyapunov exponents", lyapunov_suite},
      {"domination grid", domination_grid},
      {"multi-singular desk run", [&] { ensure_desk(); return multi_singular_desk(desk); }},
      {"renormalized agreement", [&] { ensure_desk(); return renormalized_agreement(desk); }},
      {"renormalization cocycle", renormalization_cocycle},
      {"subadditive lemma", subadditive_lemma},
      {"chain classes", chain_classes_criterion},
      {"robustness probe", robustness},
      {"determinism", [&] { ensure_desk(); return determinism(desk); }},
  };

  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k + 1);
    if (!wanted(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = criteria[k].second();
    } catch (const std::exception& ex) {
      r.pass = false;
      r.detail = std::string("exception: ") + ex.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!r.pass) ++failed;
    std::printf("criterion %2d %-26s %s  (%.1f s) %s\n", id, criteria[k].first, r.pass ? "PASS" : "FAIL", secs,
                r.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
