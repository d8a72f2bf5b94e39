#pragma once

// Candidate invariant splittings of a cocycle along a sampled orbit and the
// quantitative inequalities tested on them: domination, uniform
// contraction/expansion, cone invariance, rescaled contraction, sectional
// expansion, Lyapunov exponents and the subadditive averaging bound.

#include "singhyp/parallel.hpp"
#include "singhyp/poincare.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace singhyp {

/// Frames (fiber coordinates) attached to a subset of the samples of a cocycle.
struct FrameField {
  std::vector<std::size_t> indices;
  std::vector<Matrix> frames;

  std::size_t size() const { return indices.size(); }
  Eigen::Index dim() const { return frames.empty() ? 0 : frames.front().cols(); }

  /// Constant coordinates at every stride-th sample of c.
  static FrameField constant(const Cocycle& c, const Matrix& coords, std::size_t stride = 1) {
    FrameField f;
    for (std::size_t k = 0; k < c.size(); k += std::max<std::size_t>(stride, 1)) {
      f.indices.push_back(k);
      f.frames.push_back(coords);
    }
    return f;
  }
};

struct SplittingSample {
  std::shared_ptr<const Cocycle> cocycle;
  int index = 0;
  double window = 0.0;
  /// N1 and N2 at the same sample indices.
  FrameField first;
  FrameField second;
  /// Principal angle between the image of N1(x_a) and N1(x_b) for consecutive
  /// computed samples a < b.
  std::vector<double> residuals;
  double max_residual = 0.0;
  /// Log singular value gap per unit time at the index split.
  std::vector<double> gaps;

  Matrix ambient_first(std::size_t j) const {
    return cocycle->ambient(first.indices[j], first.frames[j]);
  }
  Matrix ambient_second(std::size_t j) const {
    return cocycle->ambient(second.indices[j], second.frames[j]);
  }
};

struct SplittingOptions {
  std::size_t stride = 1;
  unsigned threads = 1;
  double min_gap = 1e-3;
};

/// N1 at x_k: the i most contracted right singular vectors of the window
/// cocycle over [t_k, t_k + W]; N2 is the orthogonal complement. Only samples
/// with a full window ahead receive frames: a shortened window does not
/// resolve the contracted directions, and the past of x_k carries no
/// information about them.
inline SplittingSample finite_time_splitting(std::shared_ptr<const Cocycle> c, int i, double W,
                                             SplittingOptions opt = {}) {
  const auto m = static_cast<int>(c->fiber_dim());
  if (i < 1 || i > m - 1)
    throw PreconditionError("splitting index must satisfy 1 <= i <= " + std::to_string(m - 1) +
                            " (fiber dimension " + std::to_string(m) + ")");
  const double dt = c->dt();
  if (c->size() < 2) throw PreconditionError("orbit has fewer than two samples");
  if (W < 5 * dt * (1 - 1e-9)) throw PreconditionError("window must be at least 5 dt");
  const auto w = static_cast<std::size_t>(std::llround(W / dt));
  const std::size_t n = c->size();
  if (n <= w) throw PreconditionError("orbit is shorter than the splitting window");

  SplittingSample s;
  s.cocycle = c;
  s.index = i;
  s.window = W;
  for (std::size_t k = 0; k + w < n; k += std::max<std::size_t>(opt.stride, 1))
    s.first.indices.push_back(k);
  s.second.indices = s.first.indices;
  const std::size_t count = s.first.indices.size();
  s.first.frames.resize(count);
  s.second.frames.resize(count);
  s.gaps.resize(count);

  const Matrix id = Matrix::Identity(m, m);
  parallel_for(count, opt.threads, [&](std::size_t j) {
    const std::size_t k = s.first.indices[j];
    FactoredMatrix f = c->propagate(k, k + w, id);
    const Vector ls = f.log_singular_values();
    s.first.frames[j] = f.contracted_directions(i);
    s.second.frames[j] = orthogonal_complement(s.first.frames[j], m);
    s.gaps[j] = (ls[m - i - 1] - ls[m - i]) / (static_cast<double>(w) * dt);
  });
  for (std::size_t j = 0; j < count; ++j) {
    if (!(s.gaps[j] >= opt.min_gap))
      throw NoGapError("no numerical gap at index " + std::to_string(i) + " (sample " +
                       std::to_string(s.first.indices[j]) + ", gap " +
                       std::to_string(s.gaps[j]) + ")");
  }
  if (count > 1) s.residuals.resize(count - 1);
  parallel_for(count > 0 ? count - 1 : 0, opt.threads, [&](std::size_t j) {
    const FactoredMatrix img =
        c->propagate(s.first.indices[j], s.first.indices[j + 1], s.first.frames[j]);
    s.residuals[j] = principal_angle(img.q, s.first.frames[j + 1]);
  });
  for (double r : s.residuals) s.max_residual = std::max(s.max_residual, r);
  return s;
}

/// Splitting of the linear Poincare flow along a regular orbit.
inline SplittingSample finite_time_splitting(const OrbitSegment& orbit, const VectorFieldSpec& spec,
                                             int i, double W, SplittingOptions opt = {}) {
  auto c = std::make_shared<const Cocycle>(poincare_cocycle(spec, orbit, 1e-6));
  return finite_time_splitting(std::move(c), i, W, opt);
}

// ---------------------------------------------------------------------------

/// Outcome of one (eta, T) inequality test. ratio means e^{eta t} times the
/// tested quantity; the test passes when every tested ratio is below 1.
struct Certificate {
  std::string kind;
  double eta = 0.0;
  double T = 0.0;
  double t_max = 0.0;
  int index = -1;
  double log_worst_ratio = -std::numeric_limits<double>::infinity();
  double worst_time = 0.0;
  std::size_t worst_sample = 0;
  std::size_t samples_tested = 0;
  std::size_t pairs_tested = 0;
  bool pass = true;
  bool vacuous = true;
  /// (t, worst log ratio over samples at that t)
  std::vector<std::pair<double, double>> profile;

  double worst_ratio() const { return std::exp(std::min(log_worst_ratio, 700.0)); }
  /// Positive when passing; the log-distance of the worst ratio to 1.
  double margin() const { return -log_worst_ratio; }
};

using DominationCertificate = Certificate;

struct TestOptions {
  unsigned threads = 1;
  /// Use every k-th base sample of the frame field.
  std::size_t sample_stride = 1;
  /// Re-project contracted bundles onto the stored frame at every sample
  /// instead of transporting the initial frame. Forward transport of a
  /// contracted direction is swamped by roundoff once the expansion gap
  /// exceeds 1/eps (t ~ 2.4 on Lorenz); anchoring keeps it accurate but is
  /// only meaningful for invariant frames given at consecutive samples.
  bool anchored = false;
};

namespace detail {

struct PairRange {
  std::size_t first;  // steps at t = T
  std::size_t last;   // steps at t = t_max
};

inline PairRange pair_range(double T, double t_max, double dt) {
  const auto first = static_cast<std::size_t>(std::ceil(T / dt - 1e-9));
  const auto last = static_cast<std::size_t>(std::floor(t_max / dt + 1e-9));
  return {std::max<std::size_t>(first, 1), last};
}

/// Drives a forward scan: for each selected base sample k and each step count
/// s in [first, last] with k + s inside the orbit, eval(j, s) returns the log
/// ratio (or NaN to skip the pair). Results are reduced in index order.
template <class Start, class Eval>
Certificate scan(std::string kind, const Cocycle& c, const std::vector<std::size_t>& base,
                 double eta, double T, double t_max, const TestOptions& opt, Start&& start,
                 Eval&& eval) {
  Certificate cert;
  cert.kind = std::move(kind);
  cert.eta = eta;
  cert.T = T;
  cert.t_max = t_max;
  const double dt = c.dt();
  if (!(eta > 0) || !(T > 0)) throw PreconditionError(cert.kind + ": eta and T must be positive");
  const PairRange r = pair_range(T, t_max, dt);
  std::vector<std::size_t> chosen;
  for (std::size_t j = 0; j < base.size(); j += std::max<std::size_t>(opt.sample_stride, 1))
    chosen.push_back(j);
  if (t_max < T || r.last < r.first) {
    cert.vacuous = true;
    return cert;
  }
  const std::size_t steps = r.last - r.first + 1;
  struct Local {
    std::vector<double> worst;
    std::size_t pairs = 0;
  };
  std::vector<Local> locals(chosen.size());
  parallel_for(chosen.size(), opt.threads, [&](std::size_t idx) {
    const std::size_t j = chosen[idx];
    const std::size_t k = base[j];
    Local& loc = locals[idx];
    loc.worst.assign(steps, -std::numeric_limits<double>::infinity());
    auto state = start(j);
    for (std::size_t s = 1; s <= r.last && k + s < c.size(); ++s) {
      state.advance(c.steps[k + s - 1]);
      if (s < r.first) continue;
      const double lr = eval(j, s, state);
      if (std::isnan(lr)) continue;
      loc.worst[s - r.first] = std::max(loc.worst[s - r.first], lr);
      ++loc.pairs;
    }
  });
  std::vector<double> profile(steps, -std::numeric_limits<double>::infinity());
  for (std::size_t idx = 0; idx < chosen.size(); ++idx) {
    const Local& loc = locals[idx];
    if (loc.pairs == 0) continue;
    ++cert.samples_tested;
    cert.pairs_tested += loc.pairs;
    for (std::size_t q = 0; q < steps; ++q) {
      profile[q] = std::max(profile[q], loc.worst[q]);
      if (loc.worst[q] > cert.log_worst_ratio) {
        cert.log_worst_ratio = loc.worst[q];
        cert.worst_time = static_cast<double>(q + r.first) * dt;
        cert.worst_sample = base[chosen[idx]];
      }
    }
  }
  for (std::size_t q = 0; q < steps; ++q)
    if (std::isfinite(profile[q])) cert.profile.emplace_back(static_cast<double>(q + r.first) * dt, profile[q]);
  cert.vacuous = cert.pairs_tested == 0;
  cert.pass = cert.vacuous || cert.log_worst_ratio < 0.0;
  return cert;
}

struct OneFrame {
  FactoredMatrix a;
  void advance(const Matrix& step) { a.left_multiply(step); }
};

struct TwoFrames {
  FactoredMatrix a, b;
  void advance(const Matrix& step) {
    a.left_multiply(step);
    b.left_multiply(step);
  }
};

/// restricted[j] = F_{j+1}^T A F_j between consecutive frames (orthonormal).
inline std::vector<Matrix> restricted_steps(const Cocycle& c, const FrameField& f) {
  std::vector<Matrix> out;
  for (std::size_t j = 0; j + 1 < f.size(); ++j) {
    if (f.indices[j + 1] != f.indices[j] + 1)
      throw PreconditionError("anchored test needs frames at consecutive samples");
    out.push_back(f.frames[j + 1].transpose() * c.steps[f.indices[j]] * f.frames[j]);
  }
  return out;
}

/// Product of restricted steps from frame j onward; invalid past the last frame.
struct AnchoredFrame {
  const std::vector<Matrix>* restricted = nullptr;
  std::size_t pos = 0;
  FactoredMatrix a;
  bool valid = true;
  void advance(const Matrix&) {
    if (pos >= restricted->size()) {
      valid = false;
      return;
    }
    a.left_multiply((*restricted)[pos++]);
  }
};

struct AnchoredAndFree {
  AnchoredFrame a;
  FactoredMatrix b;
  void advance(const Matrix& step) {
    a.advance(step);
    b.left_multiply(step);
  }
};

inline AnchoredFrame anchored_start(const std::vector<Matrix>& restricted, std::size_t j, Eigen::Index dim) {
  return AnchoredFrame{&restricted, j, factored_frame(Matrix::Identity(dim, dim)), true};
}

}  // namespace detail

/// ||A_t|N1(x)|| * ||A_{-t}|N2(phi_t x)|| * e^{eta t} over t in [T, t_max].
/// The backward norm on the image bundle is 1 / min singular value of A_t on
/// N2(x), which is exact for an invariant N2 and stays well conditioned.
inline Certificate domination_test(const Cocycle& c, const FrameField& n1, const FrameField& n2,
                                   double eta, double T, double t_max, TestOptions opt = {}) {
  if (n1.indices != n2.indices) throw PreconditionError("domination_test: frame fields differ");
  const double dt = c.dt();
  Certificate cert;
  if (opt.anchored) {
    const auto restricted = detail::restricted_steps(c, n1);
    cert = detail::scan(
        "domination", c, n1.indices, eta, T, t_max, opt,
        [&](std::size_t j) {
          return detail::AnchoredAndFree{detail::anchored_start(restricted, j, n1.dim()),
                                         factored_frame(n2.frames[j])};
        },
        [&](std::size_t, std::size_t s, const detail::AnchoredAndFree& st) {
          if (!st.a.valid) return std::numeric_limits<double>::quiet_NaN();
          return eta * static_cast<double>(s) * dt + st.a.a.log_norm() - st.b.log_min_singular();
        });
  } else {
    cert = detail::scan(
        "domination", c, n1.indices, eta, T, t_max, opt,
        [&](std::size_t j) {
          return detail::TwoFrames{factored_frame(n1.frames[j]), factored_frame(n2.frames[j])};
        },
        [&](std::size_t, std::size_t s, const detail::TwoFrames& st) {
          return eta * static_cast<double>(s) * dt + st.a.log_norm() - st.b.log_min_singular();
        });
  }
  cert.index = static_cast<int>(n1.dim());
  return cert;
}

inline Certificate domination_test(const SplittingSample& s, double eta, double T, double t_max,
                                   TestOptions opt = {}) {
  return domination_test(*s.cocycle, s.first, s.second, eta, T, t_max, opt);
}

enum class Direction { Contract, Expand };

namespace detail {

/// Shared body of the bundle tests. The tested quantity is e^{w_{k+s} - w_k}
/// times the cocycle (empty weight = 1); masked pairs are skipped.
inline Certificate bundle_test(std::string kind, const Cocycle& c, const FrameField& frames,
                               Direction dir, double eta, double T, double t_max,
                               const std::vector<bool>& inside_mask,
                               const std::vector<double>& log_weight, const TestOptions& opt) {
  auto masked = [&](std::size_t k) { return !inside_mask.empty() && inside_mask[k]; };
  auto weight = [&](std::size_t k, std::size_t s) {
    return log_weight.empty() ? 0.0 : log_weight[k + s] - log_weight[k];
  };
  if (!log_weight.empty() && log_weight.size() != c.size())
    throw PreconditionError(kind + ": weight length differs from the cocycle");
  const double dt = c.dt();
  Certificate cert;
  if (opt.anchored && dir == Direction::Contract) {
    const auto restricted = restricted_steps(c, frames);
    cert = scan(
        kind, c, frames.indices, eta, T, t_max, opt,
        [&](std::size_t j) { return anchored_start(restricted, j, frames.dim()); },
        [&](std::size_t j, std::size_t s, const AnchoredFrame& st) {
          const std::size_t k = frames.indices[j];
          if (!st.valid || masked(k) || masked(k + s)) return std::numeric_limits<double>::quiet_NaN();
          return eta * static_cast<double>(s) * dt + st.a.log_norm() + weight(k, s);
        });
  } else {
    cert = scan(
        kind, c, frames.indices, eta, T, t_max, opt,
        [&](std::size_t j) { return OneFrame{factored_frame(frames.frames[j])}; },
        [&](std::size_t j, std::size_t s, const OneFrame& st) {
          const std::size_t k = frames.indices[j];
          if (masked(k) || masked(k + s)) return std::numeric_limits<double>::quiet_NaN();
          const double t = static_cast<double>(s) * dt;
          return dir == Direction::Contract ? eta * t + st.a.log_norm() + weight(k, s)
                                            : eta * t - st.a.log_min_singular() - weight(k, s);
        });
  }
  cert.index = static_cast<int>(frames.dim());
  return cert;
}

}  // namespace detail

/// ||A_t|N^s(x)|| < e^{-eta t} (Contract) or ||A_{-t}|N^u(phi_t x)|| < e^{-eta t}
/// (Expand), over pairs with both ends outside the mask.
inline Certificate uniform_contraction_test(const Cocycle& c, const FrameField& frames,
                                            Direction dir, double eta, double T, double t_max,
                                            const std::vector<bool>& inside_mask = {},
                                            TestOptions opt = {}) {
  return detail::bundle_test(dir == Direction::Contract ? "uniform-contraction" : "uniform-expansion",
                             c, frames, dir, eta, T, t_max, inside_mask, {}, opt);
}

/// The same inequalities for the cocycle multiplied by the scalar cocycle
/// e^{w(k+s) - w(k)} (a renormalization such as log h along the orbit).
inline Certificate weighted_contraction_test(const Cocycle& c, const FrameField& frames,
                                             Direction dir, const std::vector<double>& log_weight,
                                             double eta, double T, double t_max,
                                             TestOptions opt = {}) {
  return detail::bundle_test(dir == Direction::Contract ? "renormalized-contraction"
                                                        : "renormalized-expansion",
                             c, frames, dir, eta, T, t_max, {}, log_weight, opt);
}

/// ||Psi_t|N1(x)|| <= e^{-eta t} ||X(phi_t x)|| / ||X(x)|| on a Poincare cocycle
/// (the line growth of a regular orbit is the speed ratio).
inline Certificate rescaled_contraction_test(const Cocycle& c, const FrameField& n1, double eta,
                                             double T, double t_max, TestOptions opt = {}) {
  if (!c.is_normal()) throw PreconditionError("rescaled contraction needs a normal cocycle");
  const double dt = c.dt();
  auto ratio = [&](std::size_t j, std::size_t s, double log_norm) {
    const std::size_t k = n1.indices[j];
    const double speed = c.log_line_growth[k + s] - c.log_line_growth[k];
    return eta * static_cast<double>(s) * dt + log_norm - speed;
  };
  Certificate cert;
  if (opt.anchored) {
    const auto restricted = detail::restricted_steps(c, n1);
    cert = detail::scan(
        "rescaled-contraction", c, n1.indices, eta, T, t_max, opt,
        [&](std::size_t j) { return detail::anchored_start(restricted, j, n1.dim()); },
        [&](std::size_t j, std::size_t s, const detail::AnchoredFrame& st) {
          if (!st.valid) return std::numeric_limits<double>::quiet_NaN();
          return ratio(j, s, st.a.log_norm());
        });
  } else {
    cert = detail::scan(
        "rescaled-contraction", c, n1.indices, eta, T, t_max, opt,
        [&](std::size_t j) { return detail::OneFrame{factored_frame(n1.frames[j])}; },
        [&](std::size_t j, std::size_t s, const detail::OneFrame& st) { return ratio(j, s, st.a.log_norm()); });
  }
  cert.index = static_cast<int>(n1.dim());
  return cert;
}

namespace detail {

/// Coordinate 2-planes of a k-frame plus `random` random 2-planes inside it,
/// as k x 2 coefficient matrices.
inline std::vector<Matrix> plane_probes(Eigen::Index k, int random, std::mt19937_64& rng) {
  std::vector<Matrix> out;
  for (Eigen::Index a = 0; a < k; ++a)
    for (Eigen::Index b = a + 1; b < k; ++b) {
      Matrix p = Matrix::Zero(k, 2);
      p(a, 0) = 1.0;
      p(b, 1) = 1.0;
      out.push_back(p);
    }
  if (k == 2) return out;  // the only 2-plane
  std::normal_distribution<double> g;
  for (int r = 0; r < random; ++r) {
    Matrix p(k, 2);
    for (Eigen::Index i = 0; i < k; ++i) {
      p(i, 0) = g(rng);
      p(i, 1) = g(rng);
    }
    out.push_back(orthonormalize(p));
  }
  return out;
}

struct PlaneSet {
  std::vector<FactoredMatrix> planes;
  void advance(const Matrix& step) {
    for (auto& p : planes) p.left_multiply(step);
  }
};

}  // namespace detail

/// Area growth of every probe 2-plane inside F is at least e^{eta t}.
inline Certificate sectional_expansion_test(const Cocycle& c, const FrameField& f, double eta,
                                            double T, double t_max, std::uint64_t seed = 1,
                                            TestOptions opt = {}) {
  if (f.dim() < 2) throw PreconditionError("sectional expansion needs a frame of dimension >= 2");
  std::vector<std::vector<Matrix>> probes(f.size());
  std::mt19937_64 rng(seed);
  for (std::size_t j = 0; j < f.size(); ++j) probes[j] = detail::plane_probes(f.dim(), 16, rng);
  const double dt = c.dt();
  auto cert = detail::scan(
      "sectional-expansion", c, f.indices, eta, T, t_max, opt,
      [&](std::size_t j) {
        detail::PlaneSet ps;
        for (const auto& p : probes[j]) ps.planes.push_back(factored_frame(f.frames[j] * p));
        return ps;
      },
      [&](std::size_t, std::size_t s, const detail::PlaneSet& ps) {
        double worst = -std::numeric_limits<double>::infinity();
        for (const auto& p : ps.planes) worst = std::max(worst, -p.log_volume());
        return eta * static_cast<double>(s) * dt + worst;
      });
  cert.index = static_cast<int>(f.dim());
  return cert;
}

/// Volume growth of the whole frame (the Gram determinant of A_t F).
inline Certificate volume_expansion_test(const Cocycle& c, const FrameField& f, double eta,
                                         double T, double t_max, TestOptions opt = {}) {
  const double dt = c.dt();
  return detail::scan(
      "volume-expansion", c, f.indices, eta, T, t_max, opt,
      [&](std::size_t j) { return detail::OneFrame{factored_frame(f.frames[j])}; },
      [&](std::size_t, std::size_t s, const detail::OneFrame& st) {
        return eta * static_cast<double>(s) * dt - st.a.log_volume();
      });
}

// ---------------------------------------------------------------------------

struct ConeResult {
  bool invariant = false;
  /// Smallest lambda with A_t(C_alpha) inside C_{lambda^2 alpha} on all probes.
  double lambda = std::numeric_limits<double>::infinity();
  std::size_t samples_tested = 0;
  std::size_t probes_tested = 0;
};

/// Cone C^F_alpha(x) = { v_E + v_F : |v_E| <= alpha |v_F| } for the splitting
/// E + F; images are decomposed along the transported E and F.
inline ConeResult cone_invariance_test(const Cocycle& c, const FrameField& e, const FrameField& f,
                                       double alpha, double T, std::uint64_t seed = 1,
                                       TestOptions opt = {}) {
  if (!(alpha > 0)) throw PreconditionError("cone angle alpha must be positive");
  if (e.indices != f.indices) throw PreconditionError("cone test: frame fields differ");
  const double dt = c.dt();
  const detail::PairRange r = detail::pair_range(T, 2 * T, dt);
  const Eigen::Index de = e.dim(), df = f.dim();

  std::vector<Matrix> probes(e.size());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t j = 0; j < e.size(); ++j) {
    // Columns are (E-coefficients; F-coefficients) with |v_E| <= alpha |v_F|.
    Matrix p(de + df, 0);
    auto add = [&](const Vector& ve, const Vector& vf) {
      p.conservativeResize(Eigen::NoChange, p.cols() + 1);
      p.col(p.cols() - 1) << ve, vf;
    };
    for (Eigen::Index a = 0; a < df; ++a) {
      Vector vf = Vector::Zero(df);
      vf[a] = 1.0;
      for (Eigen::Index b = 0; b < de; ++b) {
        Vector ve = Vector::Zero(de);
        ve[b] = alpha;
        add(ve, vf);
        add(-ve, vf);
      }
    }
    while (p.cols() < 32) {
      Vector vf(df), ve(de);
      for (Eigen::Index a = 0; a < df; ++a) vf[a] = g(rng);
      for (Eigen::Index a = 0; a < de; ++a) ve[a] = g(rng);
      vf.normalize();
      ve = ve.normalized() * alpha * (p.cols() % 2 == 0 ? 1.0 : unit(rng));
      add(ve, vf);
    }
    probes[j] = p;
  }

  std::vector<double> worst(e.size(), 0.0);
  std::vector<std::size_t> count(e.size(), 0);
  parallel_for(e.size(), opt.threads, [&](std::size_t j) {
    const std::size_t k = e.indices[j];
    Matrix basis(c.fiber_dim(), de + df);
    basis << e.frames[j], f.frames[j];
    // A_t(basis * p) = (A_t basis) * p, so the E and F parts of an image are
    // the transported E and F columns with the probe's own coefficients.
    Matrix img = basis;
    for (std::size_t s = 1; s <= r.last && k + s < c.size(); ++s) {
      img = c.steps[k + s - 1] * img;
      if (s < r.first) continue;
      const Matrix we = img.leftCols(de) * probes[j].topRows(de);
      const Matrix wf = img.rightCols(df) * probes[j].bottomRows(df);
      for (Eigen::Index q = 0; q < probes[j].cols(); ++q) {
        worst[j] = std::max(worst[j], we.col(q).norm() / (wf.col(q).norm() * alpha));
        ++count[j];
      }
    }
  });
  ConeResult res;
  double w = 0.0;
  for (std::size_t j = 0; j < e.size(); ++j) {
    if (count[j] == 0) continue;
    ++res.samples_tested;
    res.probes_tested += count[j];
    w = std::max(w, worst[j]);
  }
  if (res.probes_tested == 0) return res;
  res.lambda = std::sqrt(w);
  res.invariant = res.lambda < 1.0;
  return res;
}

// ---------------------------------------------------------------------------

struct LyapunovResult {
  /// Exponents, descending.
  Vector exponents;
  /// max_i |lambda_i(t_total) - lambda_i(t_total / 2)|
  double diagnostic = 0.0;
  std::vector<double> times;
  std::vector<Vector> running;
};

/// QR (Benettin) exponents of the tangent cocycle along the forward orbit.
inline LyapunovResult lyapunov_exponents(const VectorFieldSpec& spec, const Vector& x0,
                                         double t_total, double dt, IntegratorOptions opt = {},
                                         std::size_t max_records = 2000) {
  if (!(dt > 0) || t_total < 100 * dt * (1 - 1e-12))
    throw PreconditionError("lyapunov_exponents needs t_total >= 100 dt");
  check_start(spec, x0, opt.tol);
  const int d = spec.dimension;
  const auto n = static_cast<std::size_t>(std::floor(t_total / dt + 1e-9));
  const std::size_t every = std::max<std::size_t>(1, n / max_records);
  FactoredMatrix acc = factored_frame(Matrix::Identity(d, d));
  Vector x = x0;
  LyapunovResult out;
  auto sorted = [&](double t) {
    Vector v = acc.log_diag / t;
    std::sort(v.data(), v.data() + v.size(), std::greater<>());
    return v;
  };
  Vector half;
  for (std::size_t k = 0; k < n; ++k) {
    const double t0 = static_cast<double>(k) * dt;
    std::pair<Vector, Matrix> step;
    try {
      step = tangent_flow(spec, x, dt, opt);
    } catch (const IntegrationError& e) {
      throw IntegrationError(e.kind(), t0 + e.time(), e.what());
    }
    x = step.first;
    acc.left_multiply(step.second);
    const double t = static_cast<double>(k + 1) * dt;
    if (k + 1 == (n + 1) / 2) half = sorted(t);
    if ((k + 1) % every == 0 || k + 1 == n) {
      out.times.push_back(t);
      out.running.push_back(sorted(t));
    }
  }
  out.exponents = sorted(static_cast<double>(n) * dt);
  out.diagnostic = (out.exponents - half).cwiseAbs().maxCoeff();
  return out;
}

// ---------------------------------------------------------------------------

/// A family a_{s dt}(x_k) sampled along an orbit; s may be negative.
struct SampledFamily {
  double dt = 0.0;
  std::size_t size = 0;
  std::function<double(std::size_t k, std::ptrdiff_t s)> a;
  /// Optional fast path: sup of a_s(x_k) over s in [-w, w] and k in [k_begin, k_end).
  std::function<double(std::size_t k_begin, std::size_t k_end, std::ptrdiff_t w)> window_sup;

  bool valid(std::size_t k, std::ptrdiff_t s) const {
    const auto end = static_cast<std::ptrdiff_t>(k) + s;
    return k < size && end >= 0 && end < static_cast<std::ptrdiff_t>(size);
  }
};

/// a_t(x_k) = log ||A_t restricted to F(x_k)||, F the transport of frame0
/// (given at sample 0). Negative times use ||A_{-t}|F(x)|| = 1 / m(A_t|F(phi_{-t} x)),
/// which only needs forward products; running the inverse steps instead
/// amplifies roundoff along the contracted directions.
inline SampledFamily log_norm_family(std::shared_ptr<const Cocycle> c, const Matrix& frame0) {
  auto frames = std::make_shared<std::vector<Matrix>>();
  FactoredMatrix f = factored_frame(frame0);
  frames->push_back(f.q);
  for (std::size_t k = 0; k + 1 < c->size(); ++k) {
    f.left_multiply(c->steps[k]);
    frames->push_back(f.q);
  }
  SampledFamily fam;
  fam.dt = c->dt();
  fam.size = c->size();
  fam.a = [c, frames](std::size_t k, std::ptrdiff_t s) {
    if (s >= 0) return c->propagate(k, k + static_cast<std::size_t>(s), (*frames)[k]).log_norm();
    const std::size_t from = k - static_cast<std::size_t>(-s);
    return -c->propagate(from, k, (*frames)[from]).log_min_singular();
  };
  fam.window_sup = [c, frames](std::size_t k_begin, std::size_t k_end, std::ptrdiff_t w) {
    const std::size_t n = c->size();
    k_end = std::min(k_end, n);
    double best = 0.0;  // a_0 = 0
    // One forward sweep from every start j covers a_s(x_j) and a_{-s}(x_{j+s}).
    const std::size_t lo = k_begin > static_cast<std::size_t>(w) ? k_begin - static_cast<std::size_t>(w) : 0;
    for (std::size_t j = lo; j < k_end; ++j) {
      FactoredMatrix g = factored_frame((*frames)[j]);
      for (std::size_t s = 1; s <= static_cast<std::size_t>(w) && j + s < n; ++s) {
        g.left_multiply(c->steps[j + s - 1]);
        if (j >= k_begin) best = std::max(best, g.log_norm());
        if (j + s >= k_begin && j + s < k_end) best = std::max(best, -g.log_min_singular());
      }
    }
    return best;
  };
  return fam;
}

/// The smallest admissible constant: sup of a_s(x_k) over s in [-T, T] and
/// samples k in [k_begin, k_end), plus a small slack.
inline double subadditive_constant(const SampledFamily& fam, double T, std::size_t k_begin = 0,
                                   std::size_t k_end = std::numeric_limits<std::size_t>::max()) {
  const auto w = static_cast<std::ptrdiff_t>(std::llround(T / fam.dt));
  k_end = std::min(k_end, fam.size);
  if (fam.window_sup) return fam.window_sup(k_begin, k_end, w) + 1e-9;
  double sup = 0.0;
  for (std::size_t k = k_begin; k < k_end; ++k)
    for (std::ptrdiff_t s = -w; s <= w; ++s)
      if (fam.valid(k, s)) sup = std::max(sup, fam.a(k, s));
  return sup + 1e-9;
}

struct SubadditiveCheck {
  bool holds = false;
  double lhs = 0.0;
  double rhs = 0.0;
};

/// a_t(x_k0) <= 3 c_T + (1/T) int_0^t a_T(phi_s x_k0) ds, trapezoid at the
/// orbit step. Subadditivity is probed first on random triples.
inline SubadditiveCheck subadditive_bound_check(const SampledFamily& fam, double c_T, double T,
                                                double t, std::size_t k0 = 0,
                                                std::uint64_t seed = 1, int probes = 64) {
  if (t < 3 * T * (1 - 1e-12)) throw PreconditionError("subadditive check needs t >= 3T");
  const auto sT = static_cast<std::ptrdiff_t>(std::llround(T / fam.dt));
  const auto st = static_cast<std::ptrdiff_t>(std::llround(t / fam.dt));
  if (!fam.valid(k0, st + sT))
    throw PreconditionError("orbit too short for the subadditive check");

  std::mt19937_64 rng(seed);
  const auto span = static_cast<std::ptrdiff_t>(fam.size) - 1;
  std::uniform_int_distribution<std::ptrdiff_t> pick(0, span);
  std::uniform_int_distribution<std::ptrdiff_t> len(-std::min(span, 2 * sT), std::min(span, 2 * sT));
  for (int p = 0; p < probes; ++p) {
    const auto k = static_cast<std::size_t>(pick(rng));
    const std::ptrdiff_t s = len(rng), r = len(rng);
    if (!fam.valid(k, s) || !fam.valid(k, s + r)) continue;
    const auto ks = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(k) + s);
    if (!fam.valid(ks, r)) continue;
    const double lhs = fam.a(k, s + r);
    const double rhs = fam.a(k, s) + fam.a(ks, r);
    if (lhs > rhs + 1e-6)
      throw PreconditionError("family is not subadditive: a_{t+s}(x) exceeds a_s(x) + a_t(phi_s x) by " +
                              std::to_string(lhs - rhs) +
                              " at sample " + std::to_string(k));
  }

  double integral = 0.0;
  for (std::ptrdiff_t s = 0; s <= st; ++s) {
    const double w = (s == 0 || s == st) ? 0.5 : 1.0;
    integral += w * fam.a(k0 + static_cast<std::size_t>(s), sT);
  }
  integral *= fam.dt;
  SubadditiveCheck out;
  out.lhs = fam.a(k0, st);
  out.rhs = 3 * c_T + integral / T;
  out.holds = out.lhs <= out.rhs;
  return out;
}

}  // namespace singhyp
