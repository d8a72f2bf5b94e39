#pragma once

// Verdicts for the hyperbolicity notions on a sampled invariant set: singular
// domination, multi-singular hyperbolicity, uniform and singular
// hyperbolicity, and the renormalized variant over the extended invariant
// set. An Analysis holds one field, one Lambda sample and the expensive
// intermediate objects (cocycles, splittings, escape tests) shared by the
// verdicts built on it.

#include "singhyp/singularity.hpp"
#include "singhyp/splitting.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

namespace singhyp {

enum class Notion { SingularDomination, MultiSingular, Uniform, SingularHyperbolic, Renormalized };

inline const char* to_string(Notion n) {
  switch (n) {
    case Notion::SingularDomination: return "singular-domination";
    case Notion::MultiSingular: return "multi-singular";
    case Notion::Uniform: return "uniform";
    case Notion::SingularHyperbolic: return "singular-hyperbolic";
    case Notion::Renormalized: return "renormalized-multi-singular";
  }
  return "?";
}

inline Notion notion_from_string(const std::string& s) {
  for (Notion n : {Notion::SingularDomination, Notion::MultiSingular, Notion::Uniform,
                   Notion::SingularHyperbolic, Notion::Renormalized})
    if (s == to_string(n)) return n;
  throw PreconditionError("unknown verdict kind '" + s + "'");
}

/// One sub-certificate of a verdict.
struct Evidence {
  std::string kind;
  /// "regular", "sigma[k]" or "sigma[k] lines".
  std::string subject;
  bool mandatory = true;
  bool pass = false;
  bool vacuous = false;
  /// Log-distance of the worst tested ratio to 1 at the verdict's constants;
  /// infinite for yes/no evidence.
  double margin = std::numeric_limits<double>::infinity();
  std::string note;
  std::optional<Certificate> certificate;
  std::optional<EscapeResult> escape;
};

struct Verdict {
  Notion notion = Notion::SingularDomination;
  bool pass = false;
  std::optional<int> index;
  std::optional<double> eta, T;
  std::vector<Evidence> evidence;
  std::vector<std::string> vacuous_flags;
  /// Smallest margin over mandatory non-vacuous evidence.
  double margin = std::numeric_limits<double>::infinity();
  std::string reason;
  std::vector<std::string> notes;
};

struct CheckOptions {
  /// Splitting window.
  double window = 2.0;
  /// Longest tested time; 0 selects max(T + 4, 1.5 T).
  double t_max = 0.0;
  /// Base-sample stride of the inequality tests.
  std::size_t stride = 10;
  unsigned threads = 1;
  double min_gap = 1e-3;
  /// Vacuous mandatory evidence fails the verdict.
  bool strict_vacuous = false;
  /// Radius of the balls forming V around the singularities of Lambda;
  /// 0 selects 0.02 diam(region).
  double v_radius = 0.0;
  /// Runs inside V shorter than this are always accepted.
  double iso_time = 1.0;
  /// Bump radii of the renormalization cocycles; 0 selects v_radius / 2 and v_radius.
  double r_in = 0.0, r_out = 0.0;
  int center_lines = 16;
  /// Use the model center space (E^c + E^u or E^s + E^c by index) instead of
  /// the escape-test center space.
  bool model_center = false;
  /// Time step of the line orbits at singularities; 0 takes the orbit's dt or 0.01.
  double line_dt = 0.0;
  /// Splitting indices to try; empty tries 1 .. d-2.
  std::vector<int> index_candidates;
  std::uint64_t seed = 1;
  EscapeOptions escape;
};

namespace detail {

inline std::string sigma_name(std::size_t s) { return "sigma[" + std::to_string(s) + "]"; }

/// Number of leading blocks whose dimensions add up to k, or -1.
inline int leading_blocks(const SingularityInfo& s, int k) {
  int sum = 0;
  for (std::size_t b = 0; b <= s.blocks.size(); ++b) {
    if (sum == k) return static_cast<int>(b);
    if (b == s.blocks.size() || sum > k) break;
    sum += static_cast<int>(s.blocks[b].dim());
  }
  return -1;
}

/// Real parts of the eigenvalues of sign * J, ascending, with multiplicity.
inline std::vector<double> real_parts(const SingularityInfo& s, double sign) {
  std::vector<double> re;
  for (const auto& z : s.eigenvalues) re.push_back(sign * z.real());
  std::sort(re.begin(), re.end());
  return re;
}

inline Evidence from_certificate(const Certificate& c, std::string subject, std::string note = {}) {
  Evidence e;
  e.kind = c.kind;
  e.subject = std::move(subject);
  e.pass = c.pass;
  e.vacuous = c.vacuous;
  e.margin = c.vacuous ? std::numeric_limits<double>::infinity() : c.margin();
  e.note = std::move(note);
  e.certificate = c;
  return e;
}

/// Evidence over a family of certificates (one per line orbit): keeps the worst.
inline Evidence worst_of(const std::vector<Certificate>& certs, std::string kind, std::string subject) {
  Evidence e;
  e.kind = std::move(kind);
  e.subject = std::move(subject);
  e.vacuous = true;
  e.pass = true;
  std::size_t worst = certs.size();
  for (std::size_t j = 0; j < certs.size(); ++j) {
    if (certs[j].vacuous) continue;
    e.vacuous = false;
    e.pass = e.pass && certs[j].pass;
    if (worst == certs.size() || certs[j].margin() < certs[worst].margin()) worst = j;
  }
  if (worst < certs.size()) {
    e.margin = certs[worst].margin();
    e.certificate = certs[worst];
    e.note = "worst of " + std::to_string(certs.size()) + " line orbits (line " +
             std::to_string(worst) + ")";
  }
  return e;
}

}  // namespace detail

/// Shared state of the verdicts on one (field, Lambda) pair.
class Analysis {
 public:
  struct Split {
    std::shared_ptr<const SplittingSample> sample;
    /// Set when the splitting has no numerical gap at the index.
    std::string no_gap;
  };

  Analysis(VectorFieldSpec spec, LambdaSample lam, CheckOptions opt = {})
      : spec_(std::move(spec)), lam_(std::move(lam)), opt_(std::move(opt)) {
    if (lam_.points.empty() && lam_.singularities.empty())
      throw PreconditionError("Lambda sample is empty");
    const double diam = spec_.region.diameter();
    if (!(opt_.v_radius > 0)) opt_.v_radius = 0.02 * diam;
    if (!(opt_.r_out > 0)) opt_.r_out = opt_.v_radius;
    if (!(opt_.r_in > 0)) opt_.r_in = 0.5 * opt_.r_out;
    if (!(opt_.r_in < opt_.r_out)) throw PreconditionError("bump radii must satisfy r_in < r_out");
    if (!(opt_.line_dt > 0)) opt_.line_dt = has_regular_orbit() ? lam_.orbit->dt() : 0.01;
  }

  const VectorFieldSpec& spec() const { return spec_; }
  const LambdaSample& lambda() const { return lam_; }
  const CheckOptions& options() const { return opt_; }
  int dimension() const { return spec_.dimension; }

  bool has_regular_orbit() const { return lam_.orbit && lam_.orbit->size() > 1; }

  double t_max(double T) const { return opt_.t_max > 0 ? opt_.t_max : std::max(T + 4.0, 1.5 * T); }

  std::vector<int> index_candidates() const {
    if (!opt_.index_candidates.empty()) return opt_.index_candidates;
    std::vector<int> out;
    for (int i = 1; i <= dimension() - 2; ++i) out.push_back(i);
    return out;
  }

  TestOptions test_options(bool anchored) const {
    TestOptions t;
    t.threads = opt_.threads;
    t.sample_stride = opt_.stride;
    t.anchored = anchored;
    return t;
  }

  std::shared_ptr<const Cocycle> poincare() {
    if (!poincare_) poincare_ = std::make_shared<const Cocycle>(poincare_cocycle(spec_, *lam_.orbit, 1e-6));
    return poincare_;
  }

  std::shared_ptr<const Cocycle> tangent(bool reversed_time) {
    auto& slot = reversed_time ? tangent_reversed_ : tangent_;
    if (!slot) {
      if (!tangent_) tangent_ = std::make_shared<const Cocycle>(tangent_cocycle(*lam_.orbit));
      if (reversed_time) tangent_reversed_ = std::make_shared<const Cocycle>(reversed(*tangent_));
    }
    return slot;
  }

  const Split& poincare_splitting(int i) { return split(poincare_splits_, poincare(), i); }
  const Split& tangent_splitting(int i, bool reversed_time) {
    return split(reversed_time ? tangent_reversed_splits_ : tangent_splits_, tangent(reversed_time), i);
  }

  /// inside[k]: orbit sample k lies in V.
  const std::vector<bool>& inside_v() {
    if (inside_.size() != lam_.orbit->size()) {
      inside_.assign(lam_.orbit->size(), false);
      for (std::size_t k = 0; k < inside_.size(); ++k)
        for (const auto& s : lam_.singularities)
          if ((lam_.orbit->states[k] - s.location).norm() < opt_.v_radius) inside_[k] = true;
    }
    return inside_;
  }

  const EscapeResult& escape(std::size_t s, const Matrix& frame, ManifoldSide side) {
    const auto key = std::make_tuple(s, side == ManifoldSide::Stable ? 0 : 1, frame.cols());
    auto it = escapes_.find(key);
    if (it == escapes_.end())
      it = escapes_.emplace(key, escape_test(spec_, lam_.singularities[s], frame, side, lam_, opt_.escape)).first;
    return it->second;
  }

  const CenterSpace& center(std::size_t s) {
    auto it = centers_.find(s);
    if (it == centers_.end())
      it = centers_.emplace(s, center_space(spec_, lam_.singularities[s], lam_, opt_.escape, opt_.center_lines)).first;
    return it->second;
  }

  /// Memoized certificate; `make` runs on a miss.
  const Certificate& certificate(const std::string& key, const std::function<Certificate()>& make) {
    auto it = certs_.find(key);
    if (it == certs_.end()) it = certs_.emplace(key, make()).first;
    return it->second;
  }

  /// Memoized verdict.
  const Verdict& verdict(const std::string& key, const std::function<Verdict()>& make) {
    auto it = verdicts_.find(key);
    if (it == verdicts_.end()) it = verdicts_.emplace(key, make()).first;
    return it->second;
  }

 private:
  const Split& split(std::map<int, Split>& cache, std::shared_ptr<const Cocycle> c, int i) {
    auto it = cache.find(i);
    if (it != cache.end()) return it->second;
    Split out;
    try {
      SplittingOptions so;
      so.threads = opt_.threads;
      so.min_gap = opt_.min_gap;
      out.sample = std::make_shared<const SplittingSample>(finite_time_splitting(std::move(c), i, opt_.window, so));
    } catch (const NoGapError& e) {
      out.no_gap = e.what();
    }
    return cache.emplace(i, std::move(out)).first->second;
  }

  VectorFieldSpec spec_;
  LambdaSample lam_;
  CheckOptions opt_;
  std::shared_ptr<const Cocycle> poincare_, tangent_, tangent_reversed_;
  std::map<int, Split> poincare_splits_, tangent_splits_, tangent_reversed_splits_;
  std::vector<bool> inside_;
  std::map<std::tuple<std::size_t, int, Eigen::Index>, EscapeResult> escapes_;
  std::map<std::size_t, CenterSpace> centers_;
  std::map<std::string, Certificate> certs_;
  std::map<std::string, Verdict> verdicts_;
};

namespace detail {

inline std::string key(const char* what, int i, double eta, double T) {
  std::ostringstream os;
  os.precision(17);
  os << what << '/' << i << '/' << eta << '/' << T;
  return os.str();
}

/// Fills pass, margin, vacuous flags and reason from the evidence list.
inline void finalize(Verdict& v, bool strict_vacuous) {
  v.pass = true;
  v.margin = std::numeric_limits<double>::infinity();
  for (const auto& e : v.evidence) {
    if (!e.mandatory) continue;
    if (e.vacuous) {
      v.vacuous_flags.push_back(e.kind + " (" + e.subject + ")");
      if (strict_vacuous) {
        if (v.pass && v.reason.empty()) v.reason = "vacuous " + e.kind + " (" + e.subject + ") in strict mode";
        v.pass = false;
      }
      continue;
    }
    v.margin = std::min(v.margin, e.margin);
    if (!e.pass) {
      if (v.pass && v.reason.empty())
        v.reason = e.kind + " fails (" + e.subject + ")" + (e.note.empty() ? "" : ": " + e.note);
      v.pass = false;
    }
  }
  if (!v.pass && v.reason.empty()) v.reason = "failed";
}

inline Evidence missing_regular(const char* kind, const std::string& why) {
  Evidence e;
  e.kind = kind;
  e.subject = "regular";
  e.pass = true;
  e.vacuous = true;
  e.note = why;
  return e;
}

/// Domination of the index-i splitting of the linear Poincare flow.
inline Evidence regular_domination(Analysis& a, int i, double eta, double T, bool& no_gap,
                                   std::string& gap_message) {
  no_gap = false;
  if (!a.has_regular_orbit()) return missing_regular("domination", "no regular orbit in Lambda");
  const auto& sp = a.poincare_splitting(i);
  if (!sp.sample) {
    no_gap = true;
    gap_message = sp.no_gap;
    Evidence e;
    e.kind = "domination";
    e.subject = "regular";
    e.note = sp.no_gap;
    return e;
  }
  const auto& c = a.certificate(key("poincare-domination", i, eta, T), [&] {
    return domination_test(*sp.sample, eta, T, a.t_max(T), a.test_options(true));
  });
  std::ostringstream note;
  note << "splitting residual " << sp.sample->max_residual;
  return from_certificate(c, "regular", note.str());
}

/// The singularity alternative of singular domination: a dominated E^ss of
/// dimension i with W^ss meeting Lambda only at sigma, or the mirror E^uu of
/// dimension d - 1 - i.
inline Evidence singular_alternative(Analysis& a, std::size_t s, int i, double T,
                                     std::vector<Evidence>& details) {
  const auto& sig = a.lambda().singularities[s];
  const int d = a.dimension();
  Evidence out;
  out.kind = "singularity-splitting";
  out.subject = sigma_name(s);
  if (!sig.hyperbolic) {
    out.note = "not hyperbolic";
    return out;
  }
  const auto nb = static_cast<int>(sig.blocks.size());
  const int ns = sig.stable_block_count();
  std::string why;

  auto try_side = [&](bool stable) -> bool {
    // E^ss = blocks [0, boundary), E^uu = blocks [boundary, nb).
    const int boundary = leading_blocks(sig, stable ? i : i + 1);
    const char* name = stable ? "strong-stable-escape" : "strong-unstable-escape";
    Evidence e;
    e.kind = name;
    e.subject = sigma_name(s);
    e.mandatory = false;
    if (boundary <= 0 || boundary >= nb) {
      e.note = std::string("no eigenvalue gap after ") + std::to_string(stable ? i : i + 1) + " dimensions";
      details.push_back(e);
      why += std::string(why.empty() ? "" : "; ") + name + ": " + e.note;
      return false;
    }
    const bool sided = stable ? boundary <= ns : boundary >= ns;
    if (!sided) {
      e.note = stable ? "E^ss would contain non-contracting directions"
                      : "E^uu would contain non-expanding directions";
      details.push_back(e);
      why += std::string(why.empty() ? "" : "; ") + name + ": " + e.note;
      return false;
    }
    const Matrix frame = stable ? sig.block_frame(0, static_cast<std::size_t>(boundary))
                                : sig.block_frame(static_cast<std::size_t>(boundary), sig.blocks.size());
    const auto& r = a.escape(s, frame, stable ? ManifoldSide::Stable : ManifoldSide::Unstable);
    const double gap = sig.blocks[static_cast<std::size_t>(boundary)].real_part -
                       sig.blocks[static_cast<std::size_t>(boundary - 1)].real_part;
    const double rate = stable ? -sig.blocks[static_cast<std::size_t>(boundary - 1)].real_part
                               : sig.blocks[static_cast<std::size_t>(boundary)].real_part;
    e.pass = r.escapes;
    e.escape = r;
    e.margin = T * std::min(gap, rate);
    e.note = r.escapes ? "local strong manifold meets Lambda only at sigma"
                       : "Lambda point within tolerance of the strong manifold";
    details.push_back(e);
    if (r.escapes) {
      out.pass = true;
      out.margin = e.margin;
      out.escape = r;
      out.note = stable ? "E^ss + F case, dim E^ss = " + std::to_string(i)
                        : "E + E^uu case, dim E^uu = " + std::to_string(d - 1 - i);
      return true;
    }
    why += std::string(why.empty() ? "" : "; ") + name + ": " + e.note;
    return false;
  };
  if (!try_side(true) && !try_side(false)) out.note = why;
  return out;
}

inline Evidence lorenz_evidence(const SingularityInfo& sig, std::size_t s, double T) {
  Evidence e;
  e.kind = "lorenz-like";
  e.subject = sigma_name(s);
  e.pass = sig.lorenz_like;
  if (sig.lorenz_like) {
    const double lhs = std::max(sig.rho_ss, sig.rho_uu);
    const double rhs = std::min(sig.rho_c, 1.0 / sig.rho_c);
    e.margin = T * std::min(std::log(rhs) - std::log(lhs), -std::log(rhs));
    e.note = to_string(sig.lorenz_case);
  } else {
    e.note = sig.lorenz_reason;
  }
  return e;
}

/// Every maximal run of the orbit inside V that lasts longer than iso_time
/// must be explained by a passage near a hyperbolic zero: its duration is at
/// most 2 (1/mu_s + 1/mu_u) log(r / delta) + iso_time, delta the closest
/// approach and mu the weakest rates.
inline void validate_isolation(Analysis& a) {
  if (!a.has_regular_orbit() || a.lambda().singularities.empty()) return;
  const auto& orbit = *a.lambda().orbit;
  const auto& inside = a.inside_v();
  const double dt = orbit.dt();
  const double r = a.options().v_radius;
  std::size_t k = 0;
  while (k < inside.size()) {
    if (!inside[k]) {
      ++k;
      continue;
    }
    const std::size_t start = k;
    while (k < inside.size() && inside[k]) ++k;
    const double duration = static_cast<double>(k - start) * dt;
    if (duration <= a.options().iso_time) continue;
    double bound = 0.0;
    for (const auto& sig : a.lambda().singularities) {
      double delta = std::numeric_limits<double>::infinity();
      for (std::size_t q = start; q < k; ++q) delta = std::min(delta, (orbit.states[q] - sig.location).norm());
      if (delta >= r) continue;
      double mu_s = std::numeric_limits<double>::infinity(), mu_u = mu_s;
      for (const auto& z : sig.eigenvalues) {
        if (z.real() < 0) mu_s = std::min(mu_s, -z.real());
        if (z.real() > 0) mu_u = std::min(mu_u, z.real());
      }
      if (!sig.hyperbolic || delta <= 0) {
        bound = std::numeric_limits<double>::infinity();
        break;
      }
      // A source is only left and a sink only approached: the run must touch
      // the corresponding end of the orbit.
      if (!std::isfinite(mu_s) && start != 0) continue;
      if (!std::isfinite(mu_u) && k != inside.size()) continue;
      const double in = std::isfinite(mu_s) ? 1.0 / mu_s : 0.0;
      const double out = std::isfinite(mu_u) ? 1.0 / mu_u : 0.0;
      bound = std::max(bound, 2.0 * (in + out) * std::log(r / delta));
    }
    if (duration > bound + a.options().iso_time) {
      std::ostringstream os;
      os << "V does not isolate the singularities: the orbit stays " << duration
         << " time units inside V from t = " << orbit.times[start]
         << " without a matching approach to a zero (allowed " << bound + a.options().iso_time << ")";
      throw PreconditionError(os.str());
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// Singular domination at index i.
inline Verdict check_singular_domination(Analysis& a, int i, double eta, double T) {
  const int d = a.dimension();
  if (i < 1 || i > d - 2)
    throw PreconditionError("singular domination index must satisfy 1 <= i <= d - 2");
  return a.verdict(detail::key("singular-domination", i, eta, T), [&] {
    Verdict v;
    v.notion = Notion::SingularDomination;
    v.index = i;
    v.eta = eta;
    v.T = T;
    bool no_gap = false;
    std::string gap_message;
    v.evidence.push_back(detail::regular_domination(a, i, eta, T, no_gap, gap_message));
    if (no_gap) {
      v.pass = false;
      v.reason = "no index-" + std::to_string(i) + " gap";
      v.notes.push_back(gap_message);
      return v;
    }
    std::vector<Evidence> details;
    for (std::size_t s = 0; s < a.lambda().singularities.size(); ++s)
      v.evidence.push_back(detail::singular_alternative(a, s, i, T, details));
    for (auto& e : details) v.evidence.push_back(std::move(e));
    detail::finalize(v, a.options().strict_vacuous);
    return v;
  });
}

inline Verdict check_singular_domination(const VectorFieldSpec& spec, const LambdaSample& lam, int i,
                                         double eta, double T, CheckOptions opt = {}) {
  Analysis a(spec, lam, std::move(opt));
  return check_singular_domination(a, i, eta, T);
}

namespace detail {

/// First candidate index with a passing singular domination (the first
/// candidate's verdict when none passes), plus the uniqueness diagnostic.
inline std::pair<Verdict, std::vector<std::string>> select_index(Analysis& a, double eta, double T) {
  std::optional<Verdict> chosen;
  std::vector<Verdict> strong;
  for (int i : a.index_candidates()) {
    const Verdict& v = check_singular_domination(a, i, eta, T);
    if (v.pass && !chosen) chosen = v;
    if (v.pass && v.vacuous_flags.empty() && v.margin > std::log(2.0)) strong.push_back(v);
  }
  std::vector<std::string> notes;
  if (strong.size() > 1) {
    std::string list;
    for (const auto& v : strong) list += (list.empty() ? "" : ", ") + std::to_string(*v.index);
    notes.push_back("index inconsistency: singular domination passes non-vacuously with margin > log 2 at indices " + list);
  }
  if (!chosen) chosen = check_singular_domination(a, a.index_candidates().front(), eta, T);
  return {*chosen, notes};
}

}  // namespace detail

/// Multi-singular hyperbolicity: singular domination, contraction of N^s and
/// expansion of N^u away from V, and Lorenz-like singularities.
inline Verdict check_multi_singular(Analysis& a, double eta, double T) {
  detail::validate_isolation(a);
  return a.verdict(detail::key("multi-singular", 0, eta, T), [&] {
    Verdict v;
    v.notion = Notion::MultiSingular;
    v.eta = eta;
    v.T = T;
    auto [sd, notes] = detail::select_index(a, eta, T);
    const int i = *sd.index;
    v.index = i;
    v.notes = notes;
    for (const auto& e : sd.evidence) v.evidence.push_back(e);
    if (!sd.reason.empty() && sd.reason.rfind("no index-", 0) == 0) {
      v.pass = false;
      v.reason = sd.reason;
      return v;
    }
    if (a.has_regular_orbit()) {
      const auto& sp = a.poincare_splitting(i);
      const auto& mask = a.inside_v();
      const auto& c = *sp.sample->cocycle;
      const auto& con = a.certificate(detail::key("poincare-contraction-masked", i, eta, T), [&] {
        return uniform_contraction_test(c, sp.sample->first, Direction::Contract, eta, T, a.t_max(T), mask,
                                        a.test_options(true));
      });
      const auto& exp = a.certificate(detail::key("poincare-expansion-masked", i, eta, T), [&] {
        return uniform_contraction_test(c, sp.sample->second, Direction::Expand, eta, T, a.t_max(T), mask,
                                        a.test_options(false));
      });
      std::size_t in = 0;
      for (bool b : mask) in += b;
      const std::string note = std::to_string(in) + " of " + std::to_string(mask.size()) + " samples inside V";
      v.evidence.push_back(detail::from_certificate(con, "regular", note));
      v.evidence.push_back(detail::from_certificate(exp, "regular", note));
    } else {
      v.evidence.push_back(detail::missing_regular("uniform-contraction", "no regular orbit in Lambda"));
      v.evidence.push_back(detail::missing_regular("uniform-expansion", "no regular orbit in Lambda"));
    }
    for (std::size_t s = 0; s < a.lambda().singularities.size(); ++s)
      v.evidence.push_back(detail::lorenz_evidence(a.lambda().singularities[s], s, T));
    detail::finalize(v, a.options().strict_vacuous);
    return v;
  });
}

inline Verdict check_multi_singular(const VectorFieldSpec& spec, const LambdaSample& lam, double eta,
                                    double T, CheckOptions opt = {}) {
  Analysis a(spec, lam, std::move(opt));
  return check_multi_singular(a, eta, T);
}

// ---------------------------------------------------------------------------

namespace detail {

/// Eigenvalue form of the singular-hyperbolic splitting at a zero for the
/// field sign * X: E^s = first i eigenvalues (contracting, dominated), E^cu
/// the rest with every pair of eigenvalues expanding area faster than eta.
inline Evidence singular_hyperbolic_at_zero(Analysis& a, std::size_t s, int i, double sign, double eta,
                                            double T) {
  const SingularityInfo& sig = a.lambda().singularities[s];
  Evidence e;
  e.kind = "singular-hyperbolic-eigenvalues";
  e.subject = sigma_name(s);
  const auto re = real_parts(sig, sign);
  const auto n = static_cast<int>(re.size());
  if (!sig.hyperbolic) {
    e.note = "not hyperbolic";
    return e;
  }
  if (i < 1 || i + 2 > n) {
    e.note = "index outside the eigenvalue range";
    return e;
  }
  const double gap = re[i] - re[i - 1];
  const double contraction = -re[i - 1];
  const double area = re[i] + re[i + 1];
  e.margin = T * std::min({gap, contraction - eta, area - eta});
  e.pass = gap > kBlockMergeTolerance && contraction > eta && area > eta;
  std::ostringstream os;
  os << "gap " << gap << ", E^s rate " << -contraction << ", weakest E^cu area rate " << area;
  // X lies in E^cu along regular orbits, so by continuity Lambda may only
  // approach sigma tangent to E^cu: the local manifold of E^s(sigma) must
  // meet Lambda only at sigma.
  if (e.pass) {
    const int d = a.dimension();
    const int boundary = leading_blocks(sig, sign > 0 ? i : d - i);
    const auto nb = sig.blocks.size();
    const Matrix frame = sign > 0 ? sig.block_frame(0, static_cast<std::size_t>(boundary))
                                  : sig.block_frame(static_cast<std::size_t>(boundary), nb);
    const auto& r = a.escape(s, frame, sign > 0 ? ManifoldSide::Stable : ManifoldSide::Unstable);
    e.escape = r;
    if (!r.escapes) {
      e.pass = false;
      os << "; Lambda meets the local manifold of E^s(sigma) away from sigma";
    }
  }
  e.note = os.str();
  return e;
}

/// One case of singular hyperbolicity on the (possibly reversed) tangent
/// cocycle at index i: contraction of E^s, sectional expansion of E^cu and
/// their domination.
inline std::vector<Evidence> singular_hyperbolic_case(Analysis& a, int i, bool reversed_time, double eta,
                                                      double T) {
  std::vector<Evidence> out;
  const std::string tag = reversed_time ? "reversed-" : "";
  if (a.has_regular_orbit()) {
    const auto& sp = a.tangent_splitting(i, reversed_time);
    if (!sp.sample) {
      Evidence e;
      e.kind = "tangent-splitting";
      e.subject = "regular";
      e.note = sp.no_gap;
      out.push_back(e);
      return out;
    }
    const auto& c = *sp.sample->cocycle;
    const double t_max = a.t_max(T);
    out.push_back(from_certificate(a.certificate(key((tag + "tangent-domination").c_str(), i, eta, T), [&] {
      return domination_test(*sp.sample, eta, T, t_max, a.test_options(true));
    }), "regular"));
    out.push_back(from_certificate(a.certificate(key((tag + "tangent-contraction").c_str(), i, eta, T), [&] {
      return uniform_contraction_test(c, sp.sample->first, Direction::Contract, eta, T, t_max, {},
                                      a.test_options(true));
    }), "regular"));
    out.push_back(from_certificate(a.certificate(key((tag + "tangent-sectional").c_str(), i, eta, T), [&] {
      return sectional_expansion_test(c, sp.sample->second, eta, T, t_max, a.options().seed,
                                      a.test_options(false));
    }), "regular"));
  } else {
    out.push_back(missing_regular("domination", "no regular orbit in Lambda"));
    out.push_back(missing_regular("uniform-contraction", "no regular orbit in Lambda"));
    out.push_back(missing_regular("sectional-expansion", "no regular orbit in Lambda"));
  }
  for (std::size_t s = 0; s < a.lambda().singularities.size(); ++s)
    out.push_back(singular_hyperbolic_at_zero(a, s, i, reversed_time ? -1.0 : 1.0, eta, T));
  if (reversed_time)
    for (auto& e : out) e.note = "mirrored case" + (e.note.empty() ? "" : "; " + e.note);
  return out;
}

inline Verdict uniform_verdict(Analysis& a, double eta, double T) {
  Verdict v;
  v.notion = Notion::Uniform;
  v.eta = eta;
  v.T = T;
  const auto& sings = a.lambda().singularities;
  if (!sings.empty() && a.lambda().has_regular_part()) {
    Evidence e;
    e.kind = "flow-direction";
    e.subject = "regular";
    e.note = "Lambda contains a singularity together with regular points; the flow direction degenerates";
    v.evidence.push_back(e);
    finalize(v, a.options().strict_vacuous);
    return v;
  }
  if (!a.has_regular_orbit()) {
    if (a.lambda().has_regular_part())
      v.notes.push_back("regular samples without an orbit; the regular part is not tested");
    v.evidence.push_back(missing_regular("tangent-hyperbolicity", "no regular orbit in Lambda"));
    for (std::size_t s = 0; s < sings.size(); ++s) {
      Evidence e;
      e.kind = "hyperbolic-zero";
      e.subject = sigma_name(s);
      e.pass = sings[s].hyperbolic;
      double m = std::numeric_limits<double>::infinity();
      for (const auto& z : sings[s].eigenvalues) m = std::min(m, std::abs(z.real()));
      e.margin = T * (m - eta);
      e.pass = e.pass && m > eta;
      e.note = "index " + std::to_string(sings[s].index);
      v.evidence.push_back(e);
      if (!v.index) v.index = sings[s].index;
      else if (*v.index != sings[s].index) v.notes.push_back("singularities of different indices");
    }
    finalize(v, a.options().strict_vacuous);
    if (!v.evidence.empty() && std::any_of(v.evidence.begin(), v.evidence.end(),
                                           [](const Evidence& e) { return e.vacuous; }))
      v.vacuous_flags.push_back("vacuous-regular");
    return v;
  }
  std::optional<Verdict> first;
  for (int i : a.index_candidates()) {
    Verdict w = v;
    w.index = i;
    const auto& lo = a.tangent_splitting(i, false);
    const auto& hi = a.tangent_splitting(i + 1, false);
    if (!lo.sample || !hi.sample) {
      Evidence e;
      e.kind = "tangent-splitting";
      e.subject = "regular";
      e.note = !lo.sample ? lo.no_gap : hi.no_gap;
      w.evidence.push_back(e);
    } else {
      const double t_max = a.t_max(T);
      const auto& c = *lo.sample->cocycle;
      w.evidence.push_back(from_certificate(a.certificate(key("tangent-domination", i, eta, T), [&] {
        return domination_test(*lo.sample, eta, T, t_max, a.test_options(true));
      }), "regular", "E^s against X + E^u"));
      w.evidence.push_back(from_certificate(a.certificate(key("tangent-domination-upper", i + 1, eta, T), [&] {
        return domination_test(*hi.sample, eta, T, t_max, a.test_options(false));
      }), "regular", "E^s + X against E^u"));
      w.evidence.push_back(from_certificate(a.certificate(key("tangent-contraction", i, eta, T), [&] {
        return uniform_contraction_test(c, lo.sample->first, Direction::Contract, eta, T, t_max, {},
                                        a.test_options(true));
      }), "regular", "E^s"));
      w.evidence.push_back(from_certificate(a.certificate(key("tangent-expansion", i + 1, eta, T), [&] {
        return uniform_contraction_test(c, hi.sample->second, Direction::Expand, eta, T, t_max, {},
                                        a.test_options(false));
      }), "regular", "E^u"));
      // The flow direction must sit in the middle bundle.
      double worst = 0.0;
      const auto& orbit = *a.lambda().orbit;
      for (std::size_t j = 0; j < lo.sample->first.size(); j += std::max<std::size_t>(a.options().stride, 1)) {
        const std::size_t k = lo.sample->first.indices[j];
        const Vector x = a.spec()(orbit.states[k]).normalized();
        const Matrix below = lo.sample->first.frames[j];
        const Matrix upto = hi.sample->first.frames[j];
        const double in_upper = (x - upto * (upto.transpose() * x)).norm();
        const double in_lower = (below.transpose() * x).norm();
        worst = std::max({worst, in_upper, in_lower});
      }
      Evidence e;
      e.kind = "flow-line-middle";
      e.subject = "regular";
      e.mandatory = false;
      e.pass = worst < 0.1;
      e.note = "largest component of X outside the middle bundle " + std::to_string(worst);
      w.evidence.push_back(e);
    }
    finalize(w, a.options().strict_vacuous);
    if (w.pass) return w;
    if (!first) first = w;
  }
  return *first;
}

}  // namespace detail

/// Uniform hyperbolicity and singular hyperbolicity (either case) on the
/// same samples.
inline std::pair<Verdict, Verdict> check_uniform_and_singular(Analysis& a, double eta, double T) {
  const Verdict& u = a.verdict(detail::key("uniform", 0, eta, T), [&] { return detail::uniform_verdict(a, eta, T); });
  const Verdict& sh = a.verdict(detail::key("singular-hyperbolic", 0, eta, T), [&] {
    const int d = a.dimension();
    std::optional<Verdict> first;
    for (int i : a.index_candidates()) {
      for (bool mirror : {false, true}) {
        Verdict v;
        v.notion = Notion::SingularHyperbolic;
        v.eta = eta;
        v.T = T;
        v.index = i;
        // The mirrored case E^cs + E^u is the direct case of the reversed
        // flow with E^s of dimension d - 1 - i.
        v.evidence = detail::singular_hyperbolic_case(a, mirror ? d - 1 - i : i, mirror, eta, T);
        v.notes.push_back(mirror ? "case E^cs + E^u (sectional contraction)" : "case E^s + E^cu (sectional expansion)");
        detail::finalize(v, a.options().strict_vacuous);
        if (v.pass) return v;
        if (!first) first = v;
      }
    }
    return *first;
  });
  return {u, sh};
}

inline std::pair<Verdict, Verdict> check_uniform_and_singular(const VectorFieldSpec& spec,
                                                              const LambdaSample& lam, double eta, double T,
                                                              CheckOptions opt = {}) {
  Analysis a(spec, lam, std::move(opt));
  return check_uniform_and_singular(a, eta, T);
}

// ---------------------------------------------------------------------------

/// Finite sample of the extended invariant set: field lines over the regular
/// samples and projective grids of the center spaces at the singularities.
struct ExtendedInvariantSample {
  std::vector<LineElement> lines;
  std::size_t regular_lines = 0;
  /// For each singularity of Lambda, the range [begin, end) of its lines.
  std::vector<std::pair<std::size_t, std::size_t>> center_ranges;
};

namespace detail {

/// Center directions at sigma: the escape-test center space, or the model
/// space E^c + E^u (index i + 1) / E^s + E^c (index i) when requested.
inline std::vector<LineElement> center_lines(Analysis& a, std::size_t s, int i) {
  const auto& sig = a.lambda().singularities[s];
  if (!a.options().model_center) return a.center(s).lines;
  std::vector<LineElement> out;
  Matrix frame;
  if (sig.index == i + 1) {
    const int b = leading_blocks(sig, i);
    if (b > 0) frame = sig.block_frame(static_cast<std::size_t>(b), sig.blocks.size());
  } else if (sig.index == i) {
    const int b = leading_blocks(sig, i + 1);
    if (b > 0) frame = sig.block_frame(0, static_cast<std::size_t>(b));
  }
  for (const auto& u : projective_grid(frame, a.options().center_lines, a.options().seed))
    out.push_back(LineElement::make(sig.location, u));
  return out;
}

}  // namespace detail

inline ExtendedInvariantSample extended_invariant_sample(Analysis& a, int i = 0) {
  ExtendedInvariantSample b;
  for (const auto& s : a.lambda().singularities)
    if (!s.hyperbolic) throw PreconditionError("extended invariant sample needs hyperbolic singularities");
  for (const auto& x : a.lambda().points) {
    const Vector f = a.spec()(x);
    if (f.norm() <= kDegenerateSpeed) continue;
    b.lines.push_back(LineElement::make(x, f));
  }
  b.regular_lines = b.lines.size();
  for (std::size_t s = 0; s < a.lambda().singularities.size(); ++s) {
    const std::size_t begin = b.lines.size();
    for (auto& l : detail::center_lines(a, s, i)) b.lines.push_back(std::move(l));
    b.center_ranges.emplace_back(begin, b.lines.size());
  }
  return b;
}

inline ExtendedInvariantSample extended_invariant_sample(const VectorFieldSpec& spec, const LambdaSample& lam,
                                                         CheckOptions opt = {}) {
  Analysis a(spec, lam, std::move(opt));
  return extended_invariant_sample(a);
}

namespace detail {

inline std::vector<double> product_log_h(Analysis& a, const Cocycle& c, const std::vector<std::size_t>& members) {
  std::vector<double> out(c.size(), 0.0);
  for (std::size_t s : members) {
    const auto h = renorm_log_cocycle(a.spec(), c, a.lambda().singularities[s].location, a.options().r_in,
                                      a.options().r_out);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += h[k];
  }
  return out;
}

/// Does the escape test find Lambda on both local manifolds of sigma?
inline bool manifold_hypothesis(Analysis& a, std::size_t s) {
  const auto& sig = a.lambda().singularities[s];
  if (!sig.hyperbolic) return false;
  const Matrix st = sig.stable_frame();
  const Matrix un = sig.unstable_frame();
  if (st.cols() == 0 || un.cols() == 0) return false;
  // Lambda \ {sigma} empty: nothing can lie on either manifold.
  const double r0 = a.options().escape.r_sigma;
  if (std::none_of(a.lambda().points.begin(), a.lambda().points.end(),
                   [&](const Vector& p) { return (p - sig.location).norm() > r0; }))
    return false;
  return !a.escape(s, st, ManifoldSide::Stable).escapes && !a.escape(s, un, ManifoldSide::Unstable).escapes;
}

}  // namespace detail

/// Multi-singular hyperbolicity through renormalization: the index-i
/// splitting of the extended linear Poincare flow over the extended invariant
/// sample, with h_+ Psi|N^s contracting and h_- Psi|N^u expanding, where
/// S_- collects the zeros of stable dimension i + 1 and S_+ those of stable
/// dimension i. i = 0 takes the index of the singular-domination pass.
inline Verdict check_renormalized(Analysis& a, double eta, double T, int i = 0) {
  if (i == 0) i = *detail::select_index(a, eta, T).first.index;
  return a.verdict(detail::key("renormalized", i, eta, T), [&] {
    Verdict v;
    v.notion = Notion::Renormalized;
    v.eta = eta;
    v.T = T;
    v.index = i;
    const auto& sings = a.lambda().singularities;
    std::vector<std::size_t> s_plus, s_minus;
    for (std::size_t s = 0; s < sings.size(); ++s) {
      if (!sings[s].hyperbolic) {
        Evidence e;
        e.kind = "hyperbolic-zero";
        e.subject = detail::sigma_name(s);
        e.note = "not hyperbolic";
        v.evidence.push_back(e);
        continue;
      }
      if (sings[s].index == i + 1) s_minus.push_back(s);
      else if (sings[s].index == i) s_plus.push_back(s);
      else {
        Evidence e;
        e.kind = "index-compatibility";
        e.subject = detail::sigma_name(s);
        e.note = "stable dimension " + std::to_string(sings[s].index) + " is neither " + std::to_string(i) +
                 " nor " + std::to_string(i + 1) + "; incompatible with the splitting dimensions";
        v.evidence.push_back(e);
      }
      if (!detail::manifold_hypothesis(a, s))
        v.notes.push_back(detail::sigma_name(s) +
                          ": Lambda was not found on both local manifolds; S+/S- chosen by index regardless");
    }
    if (!v.evidence.empty()) {
      detail::finalize(v, a.options().strict_vacuous);
      return v;
    }
    auto names = [](const std::vector<std::size_t>& m) {
      std::string out;
      for (std::size_t s : m) out += (out.empty() ? "" : ", ") + detail::sigma_name(s);
      return "{" + out + "}";
    };
    v.notes.push_back("S+ = " + names(s_plus) + ", S- = " + names(s_minus));
    const double t_max = a.t_max(T);

    // Field lines over the regular orbit: the Poincare cocycle itself.
    if (a.has_regular_orbit()) {
      const auto& sp = a.poincare_splitting(i);
      if (!sp.sample) {
        v.pass = false;
        v.reason = "no index-" + std::to_string(i) + " gap";
        v.notes.push_back(sp.no_gap);
        return v;
      }
      const auto& c = *sp.sample->cocycle;
      v.evidence.push_back(detail::from_certificate(a.certificate(detail::key("poincare-domination", i, eta, T), [&] {
        return domination_test(*sp.sample, eta, T, t_max, a.test_options(true));
      }), "regular"));
      const auto hp = detail::product_log_h(a, c, s_plus);
      const auto hm = detail::product_log_h(a, c, s_minus);
      v.evidence.push_back(detail::from_certificate(a.certificate(detail::key("renorm-contraction", i, eta, T), [&] {
        return weighted_contraction_test(c, sp.sample->first, Direction::Contract, hp, eta, T, t_max,
                                         a.test_options(true));
      }), "regular"));
      v.evidence.push_back(detail::from_certificate(a.certificate(detail::key("renorm-expansion", i, eta, T), [&] {
        return weighted_contraction_test(c, sp.sample->second, Direction::Expand, hm, eta, T, t_max,
                                         a.test_options(false));
      }), "regular"));
    } else {
      v.evidence.push_back(detail::missing_regular("domination", "no regular orbit in Lambda"));
    }

    // Center lines at each zero: extended cocycles over the fixed point.
    const double dt = a.options().line_dt;
    for (std::size_t s = 0; s < sings.size(); ++s) {
      const auto lines = detail::center_lines(a, s, i);
      const std::string subject = detail::sigma_name(s) + " lines";
      if (lines.empty()) {
        Evidence e = detail::missing_regular("center-lines", "empty center space");
        e.subject = subject;
        v.evidence.push_back(e);
        continue;
      }
      const OrbitSegment orbit = fixed_point_orbit(a.spec(), sings[s].location, t_max + a.options().window + dt, dt);
      std::vector<Certificate> dom, con, exp;
      std::string gap_error;
      for (const auto& l : lines) {
        auto c = std::make_shared<const Cocycle>(extended_cocycle(orbit, l.direction));
        SplittingSample sp;
        try {
          SplittingOptions so;
          so.min_gap = a.options().min_gap;
          sp = finite_time_splitting(c, i, a.options().window, so);
        } catch (const NoGapError& e) {
          gap_error = e.what();
          break;
        }
        TestOptions to = a.test_options(true);
        dom.push_back(domination_test(sp, eta, T, t_max, to));
        con.push_back(weighted_contraction_test(*c, sp.first, Direction::Contract, detail::product_log_h(a, *c, s_plus),
                                                eta, T, t_max, to));
        to.anchored = false;
        exp.push_back(weighted_contraction_test(*c, sp.second, Direction::Expand, detail::product_log_h(a, *c, s_minus),
                                                eta, T, t_max, to));
      }
      if (!gap_error.empty()) {
        Evidence e;
        e.kind = "domination";
        e.subject = subject;
        e.note = "no index-" + std::to_string(i) + " gap over a center line: " + gap_error;
        v.evidence.push_back(e);
        continue;
      }
      v.evidence.push_back(detail::worst_of(dom, "domination", subject));
      v.evidence.push_back(detail::worst_of(con, "renormalized-contraction", subject));
      v.evidence.push_back(detail::worst_of(exp, "renormalized-expansion", subject));
    }
    detail::finalize(v, a.options().strict_vacuous);
    return v;
  });
}

inline Verdict check_renormalized(const VectorFieldSpec& spec, const LambdaSample& lam, double eta, double T,
                                  CheckOptions opt = {}, int i = 0) {
  Analysis a(spec, lam, std::move(opt));
  return check_renormalized(a, eta, T, i);
}

/// Runs the verdict of the given kind (index from the singular-domination
/// selection where one is needed).
inline Verdict run_verdict(Analysis& a, Notion n, double eta, double T) {
  switch (n) {
    case Notion::SingularDomination: return detail::select_index(a, eta, T).first;
    case Notion::MultiSingular: return check_multi_singular(a, eta, T);
    case Notion::Uniform: return check_uniform_and_singular(a, eta, T).first;
    case Notion::SingularHyperbolic: return check_uniform_and_singular(a, eta, T).second;
    case Notion::Renormalized: return check_renormalized(a, eta, T);
  }
  throw PreconditionError("unknown verdict kind");
}

// ---------------------------------------------------------------------------

/// Verdict-level check of the two equivalences: uniform iff multi-singular
/// without singularities; singular-hyperbolic iff multi-singular with all
/// singularities of one index. Applies when every zero of Lambda is
/// hyperbolic and Lambda meets both of its local manifolds away from it.
struct ConsistencyReport {
  bool applicable = false;
  std::string reason;
  std::vector<Verdict> verdicts;
  bool uniform_item = true;
  bool singular_item = true;
  bool consistent = true;
  std::vector<std::string> diagnostics;
};

inline ConsistencyReport equivalence_crosscheck(Analysis& a, double eta, double T) {
  ConsistencyReport r;
  const auto& sings = a.lambda().singularities;
  for (std::size_t s = 0; s < sings.size(); ++s) {
    if (!sings[s].hyperbolic) {
      r.reason = "inapplicable: " + detail::sigma_name(s) + " is not hyperbolic";
      return r;
    }
    if (!detail::manifold_hypothesis(a, s)) {
      r.reason = "inapplicable: Lambda does not meet both local manifolds of " + detail::sigma_name(s) +
                 " away from it";
      return r;
    }
  }
  r.applicable = true;
  const Verdict ms = check_multi_singular(a, eta, T);
  const auto [u, sh] = check_uniform_and_singular(a, eta, T);
  r.verdicts = {detail::select_index(a, eta, T).first, ms, u, sh};
  const bool no_sing = sings.empty();
  bool same_index = true;
  for (const auto& s : sings) same_index = same_index && s.index == sings.front().index;
  r.uniform_item = u.pass == (ms.pass && no_sing);
  r.singular_item = sh.pass == (ms.pass && same_index);
  r.consistent = r.uniform_item && r.singular_item;
  auto yn = [](bool b) { return b ? "pass" : "fail"; };
  if (!r.uniform_item)
    r.diagnostics.push_back(std::string("inconsistency: uniform ") + yn(u.pass) + " but multi-singular " +
                            yn(ms.pass) + (no_sing ? " without" : " with") + " singularities");
  if (!r.singular_item)
    r.diagnostics.push_back(std::string("inconsistency: singular-hyperbolic ") + yn(sh.pass) +
                            " but multi-singular " + yn(ms.pass) +
                            (same_index ? " with" : " without") + " a common singularity index");
  r.reason = r.consistent ? "consistent" : "inconsistent (tool bug or insufficient sampling)";
  return r;
}

// ---------------------------------------------------------------------------

/// Random polynomial of degree <= 2 whose C^1 size over the region (sup of
/// |P| / half-width and of the Jacobian entries) is at most `size`.
inline PolynomialTable random_polynomial(const Box& region, double size, std::mt19937_64& rng) {
  const int d = region.dimension();
  const Vector c = region.center();
  const Vector h = 0.5 * (region.hi - region.lo);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  // Coefficients in the scaled variable z = (x - c) / h, z in [-1, 1]^d.
  std::vector<Vector> lin(d);
  std::vector<Matrix> quad(d);
  std::vector<double> cst(d);
  double bound = 0.0;
  for (int k = 0; k < d; ++k) {
    cst[k] = u(rng);
    lin[k] = Vector(d);
    quad[k] = Matrix::Zero(d, d);
    for (int j = 0; j < d; ++j) lin[k][j] = u(rng);
    for (int j = 0; j < d; ++j)
      for (int l = j; l < d; ++l) quad[k](j, l) = u(rng);
    for (int j = 0; j < d; ++j) {
      double row = std::abs(lin[k][j]);
      for (int l = 0; l < d; ++l) row += (l == j ? 2.0 : 1.0) * std::abs(quad[k](std::min(j, l), std::max(j, l)));
      bound = std::max(bound, row / h[j]);
    }
    double val = std::abs(cst[k]) + lin[k].cwiseAbs().sum() + quad[k].cwiseAbs().sum();
    bound = std::max(bound, val / h.minCoeff());
  }
  const double scale = bound > 0 ? size / bound : 0.0;
  // Expand in x: z_j = (x_j - c_j) / h_j.
  PolynomialTable p;
  p.dimension = d;
  p.terms.resize(d);
  auto add = [&](int k, double coef, std::vector<int> powers) {
    if (coef != 0.0) p.terms[k].push_back(Monomial{coef, std::move(powers)});
  };
  for (int k = 0; k < d; ++k) {
    double c0 = cst[k];
    Vector c1 = Vector::Zero(d);
    for (int j = 0; j < d; ++j) {
      c0 -= lin[k][j] * c[j] / h[j];
      c1[j] += lin[k][j] / h[j];
    }
    for (int j = 0; j < d; ++j)
      for (int l = j; l < d; ++l) {
        const double q = quad[k](j, l) / (h[j] * h[l]);
        // q (x_j - c_j)(x_l - c_l)
        std::vector<int> pw(d, 0);
        pw[j] += 1;
        pw[l] += 1;
        add(k, scale * q, pw);
        c1[j] -= q * c[l];
        c1[l] -= q * c[j];
        c0 += q * c[j] * c[l];
      }
    for (int j = 0; j < d; ++j) {
      std::vector<int> pw(d, 0);
      pw[j] = 1;
      add(k, scale * c1[j], pw);
    }
    add(k, scale * c0, std::vector<int>(d, 0));
  }
  return p;
}

struct ProbeTrial {
  std::size_t trial = 0;
  ParamSet params;
  bool pass = false;
  double margin = 0.0;
  std::string reason;
};

struct ProbeReport {
  Notion check = Notion::MultiSingular;
  double delta = 0.0;
  double eta = 0.0, T = 0.0;
  bool base_pass = false;
  double base_margin = 0.0;
  std::size_t passes = 0;
  double pass_rate = 0.0;
  double worst_margin = std::numeric_limits<double>::infinity();
  /// worst_margin / base_margin.
  double margin_ratio = 0.0;
  std::vector<ProbeTrial> trials;
  std::vector<std::string> flags;
};

using SpecBuilder = std::function<VectorFieldSpec(const ParamSet&)>;
using LambdaBuilder = std::function<LambdaSample(const VectorFieldSpec&)>;

struct ProbeOptions {
  double delta = 0.01;
  std::size_t trials = 20;
  std::uint64_t seed = 1;
  /// C^1 size of the added polynomial, as a fraction of delta times the
  /// median Jacobian norm over Lambda.
  double polynomial_fraction = 0.1;
  /// Base margins below this are reported as "at margin boundary".
  double boundary_margin = 0.05;
};

/// Re-runs one verdict on perturbed fields with the base (eta, T): every
/// parameter is scaled by 1 + delta u, u uniform in [-1, 1], and a random
/// quadratic polynomial is added. Lambda is rebuilt for each field.
inline ProbeReport robustness_probe(const SpecBuilder& make_spec, const ParamSet& base_params,
                                    const LambdaBuilder& make_lambda, Notion check, double eta, double T,
                                    const CheckOptions& copt, const ProbeOptions& popt) {
  ProbeReport rep;
  rep.check = check;
  rep.delta = popt.delta;
  rep.eta = eta;
  rep.T = T;
  const VectorFieldSpec base = make_spec(base_params);
  {
    Analysis a(base, make_lambda(base), copt);
    const Verdict v = run_verdict(a, check, eta, T);
    rep.base_pass = v.pass;
    rep.base_margin = v.margin;
    if (!v.pass) rep.flags.push_back("base verdict fails: " + v.reason);
    if (v.pass && v.margin < popt.boundary_margin) rep.flags.push_back("at margin boundary");
    if (!v.vacuous_flags.empty()) rep.flags.push_back("base verdict has vacuous evidence");
  }
  double jac_scale = 0.0;
  {
    const LambdaSample lam = make_lambda(base);
    std::vector<double> norms;
    for (std::size_t k = 0; k < lam.points.size(); k += std::max<std::size_t>(1, lam.points.size() / 200))
      norms.push_back(base.jacobian(lam.points[k]).norm());
    for (const auto& s : lam.singularities) norms.push_back(s.jacobian.norm());
    if (!norms.empty()) {
      std::nth_element(norms.begin(), norms.begin() + static_cast<long>(norms.size() / 2), norms.end());
      jac_scale = norms[norms.size() / 2];
    }
  }
  std::mt19937_64 rng(popt.seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::size_t t = 0; t < popt.trials; ++t) {
    ProbeTrial tr;
    tr.trial = t;
    tr.params = base_params;
    for (auto& [name, values] : tr.params)
      for (double& x : values) x *= 1.0 + popt.delta * u(rng);
    const PolynomialTable p =
        random_polynomial(base.region, popt.polynomial_fraction * popt.delta * jac_scale, rng);
    try {
      VectorFieldSpec spec = make_spec(tr.params);
      if (popt.delta > 0 && popt.polynomial_fraction > 0) spec = perturbed(spec, p);
      Analysis a(spec, make_lambda(spec), copt);
      const Verdict v = run_verdict(a, check, eta, T);
      tr.pass = v.pass;
      tr.margin = v.margin;
      tr.reason = v.reason;
    } catch (const Error& e) {
      tr.pass = false;
      tr.margin = -std::numeric_limits<double>::infinity();
      tr.reason = e.what();
    }
    rep.passes += tr.pass;
    rep.worst_margin = std::min(rep.worst_margin, tr.margin);
    rep.trials.push_back(std::move(tr));
  }
  rep.pass_rate = popt.trials ? static_cast<double>(rep.passes) / static_cast<double>(popt.trials) : 0.0;
  rep.margin_ratio = rep.base_margin != 0 ? rep.worst_margin / rep.base_margin : 0.0;
  return rep;
}

}  // namespace singhyp
