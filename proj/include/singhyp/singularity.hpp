#pragma once

// Zeros of X: location, eigen-data, the finest splitting into real-part
// blocks, the Lorenz-like test, escape tests for strong manifolds, center
// spaces and the renormalization cocycle near a zero.

#include "singhyp/poincare.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <unordered_map>
#include <unsupported/Eigen/MatrixFunctions>
#include <vector>

namespace singhyp {

using Complex = std::complex<double>;

inline constexpr double kHyperbolicThreshold = 1e-8;
inline constexpr double kBlockMergeTolerance = 1e-6;

/// A J-invariant real subspace for eigenvalues sharing one real part.
struct EigenBlock {
  Matrix frame;  // d x dim, orthonormal
  double real_part = 0.0;
  std::vector<Complex> eigenvalues;

  Eigen::Index dim() const { return frame.cols(); }
  bool is_complex() const {
    return std::any_of(eigenvalues.begin(), eigenvalues.end(),
                       [](const Complex& z) { return std::abs(z.imag()) > 1e-12; });
  }
};

enum class LorenzCase { None, Stable, Unstable };

inline const char* to_string(LorenzCase c) {
  switch (c) {
    case LorenzCase::Stable: return "center-stable";
    case LorenzCase::Unstable: return "center-unstable";
    default: return "none";
  }
}

struct SingularityInfo {
  Vector location;
  Matrix jacobian;
  /// Sorted by real part, then imaginary part.
  std::vector<Complex> eigenvalues;
  bool hyperbolic = false;
  int index = 0;
  /// Ascending real part: strongest stable first, strongest unstable last.
  std::vector<EigenBlock> blocks;
  bool merged_blocks = false;

  bool lorenz_like = false;
  LorenzCase lorenz_case = LorenzCase::None;
  double lambda_s = std::numeric_limits<double>::quiet_NaN();
  double lambda_u = std::numeric_limits<double>::quiet_NaN();
  double rho_ss = std::numeric_limits<double>::quiet_NaN();
  double rho_uu = std::numeric_limits<double>::quiet_NaN();
  double rho_c = std::numeric_limits<double>::quiet_NaN();
  /// Dimensions of E^ss, E^c, E^uu in the Lorenz-like decomposition.
  int dim_ss = 0, dim_c = 0, dim_uu = 0;
  /// Human-readable reason when lorenz_like is false.
  std::string lorenz_reason;

  int stable_block_count() const {
    return static_cast<int>(std::count_if(blocks.begin(), blocks.end(),
                                          [](const EigenBlock& b) { return b.real_part < 0; }));
  }

  /// Columns of blocks [first, last).
  Matrix block_frame(std::size_t first, std::size_t last) const {
    Eigen::Index cols = 0;
    for (std::size_t b = first; b < last; ++b) cols += blocks[b].dim();
    Matrix out(location.size(), cols);
    Eigen::Index at = 0;
    for (std::size_t b = first; b < last; ++b) {
      out.middleCols(at, blocks[b].dim()) = blocks[b].frame;
      at += blocks[b].dim();
    }
    return out;
  }

  Matrix stable_frame() const { return block_frame(0, static_cast<std::size_t>(stable_block_count())); }
  Matrix unstable_frame() const {
    return block_frame(static_cast<std::size_t>(stable_block_count()), blocks.size());
  }

  /// Largest real part over blocks [first, last).
  double max_real_part(std::size_t first, std::size_t last) const {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t b = first; b < last; ++b) m = std::max(m, blocks[b].real_part);
    return m;
  }
};

namespace detail {

/// Orthonormal basis of the kernel of prod (J - z I) over the group's
/// eigenvalues: the real invariant subspace of that group.
inline Matrix invariant_subspace(const Matrix& j, const std::vector<Complex>& group) {
  const Eigen::Index d = j.rows();
  Eigen::MatrixXcd p = Eigen::MatrixXcd::Identity(d, d);
  const Eigen::MatrixXcd jc = j.cast<Complex>();
  const double scale = std::max(1.0, j.norm());
  for (const Complex& z : group) {
    p = (jc - z * Eigen::MatrixXcd::Identity(d, d)) * p / scale;
  }
  const Matrix pr = p.real();
  Eigen::JacobiSVD<Matrix> svd(pr, Eigen::ComputeFullV);
  const auto k = static_cast<Eigen::Index>(group.size());
  return svd.matrixV().rightCols(k);
}

}  // namespace detail

/// Eigen-analysis of J(sigma) and the Lorenz-like decision.
inline SingularityInfo classify_singularity(const VectorFieldSpec& spec, const Vector& sigma) {
  const Vector f = spec(sigma);
  if (f.norm() > 1e-8)
    throw PreconditionError("classify_singularity: |X(sigma)| = " + std::to_string(f.norm()) +
                            " exceeds 1e-8");
  SingularityInfo info;
  info.location = sigma;
  info.jacobian = eval_jacobian(spec, sigma);
  const int d = spec.dimension;

  Eigen::EigenSolver<Matrix> es(info.jacobian, false);
  for (Eigen::Index i = 0; i < d; ++i) info.eigenvalues.push_back(es.eigenvalues()[i]);
  std::sort(info.eigenvalues.begin(), info.eigenvalues.end(), [](const Complex& a, const Complex& b) {
    return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
  });
  info.hyperbolic = std::all_of(info.eigenvalues.begin(), info.eigenvalues.end(),
                                [](const Complex& z) { return std::abs(z.real()) > kHyperbolicThreshold; });
  info.index = static_cast<int>(std::count_if(info.eigenvalues.begin(), info.eigenvalues.end(),
                                              [](const Complex& z) { return z.real() < 0; }));

  // Group by real part; stable and unstable values never share a block.
  std::vector<std::vector<Complex>> groups;
  for (const Complex& z : info.eigenvalues) {
    if (!groups.empty()) {
      const Complex& last = groups.back().back();
      const bool same_side = (last.real() < 0) == (z.real() < 0);
      if (same_side && std::abs(z.real() - last.real()) < kBlockMergeTolerance) {
        groups.back().push_back(z);
        continue;
      }
    }
    groups.push_back({z});
  }
  for (const auto& g : groups) {
    EigenBlock b;
    b.eigenvalues = g;
    double re = 0.0;
    for (const Complex& z : g) re += z.real();
    b.real_part = re / static_cast<double>(g.size());
    b.frame = detail::invariant_subspace(info.jacobian, g);
    const bool pair_only = g.size() == 2 && std::abs(g[0].imag()) > 1e-12 &&
                           std::abs(g[0] - std::conj(g[1])) < 1e-9 * std::max(1.0, std::abs(g[0]));
    if (g.size() > 1 && !pair_only) info.merged_blocks = true;
    info.blocks.push_back(std::move(b));
  }

  // Lorenz-like test.
  const int ns = info.stable_block_count();
  const int nb = static_cast<int>(info.blocks.size());
  const int nu = nb - ns;
  if (!info.hyperbolic) {
    info.lorenz_reason = "not hyperbolic";
    return info;
  }
  auto dim_of = [&](int first, int last) {
    int s = 0;
    for (int b = first; b < last; ++b) s += static_cast<int>(info.blocks[static_cast<std::size_t>(b)].dim());
    return s;
  };
  std::string reason;
  if (ns >= 2 && nu >= 1) {
    const EigenBlock& c = info.blocks[static_cast<std::size_t>(ns - 1)];
    const double ls = c.real_part, lu = info.blocks[static_cast<std::size_t>(ns)].real_part;
    if (c.dim() == 1 && !c.is_complex() && ls + lu > 0) {
      info.lorenz_case = LorenzCase::Stable;
      info.lambda_s = ls;
      info.lambda_u = lu;
      info.rho_ss = std::exp(info.max_real_part(0, static_cast<std::size_t>(ns - 1)));
      info.rho_uu = std::exp(-lu);
      info.rho_c = std::exp(ls);
      info.dim_ss = dim_of(0, ns - 1);
      info.dim_c = 1;
      info.dim_uu = dim_of(ns, nb);
    } else {
      reason = c.dim() != 1 || c.is_complex() ? "weakest stable block is not a real line"
                                              : "lambda_s + lambda_u <= 0";
    }
  } else {
    reason = ns < 2 ? "no strong stable block" : "no unstable block";
  }
  if (info.lorenz_case == LorenzCase::None && nu >= 2 && ns >= 1) {
    const EigenBlock& c = info.blocks[static_cast<std::size_t>(ns)];
    const double lu = c.real_part, ls = info.blocks[static_cast<std::size_t>(ns - 1)].real_part;
    if (c.dim() == 1 && !c.is_complex() && ls + lu < 0) {
      info.lorenz_case = LorenzCase::Unstable;
      info.lambda_s = ls;
      info.lambda_u = lu;
      info.rho_ss = std::exp(ls);
      info.rho_uu = std::exp(-info.blocks[static_cast<std::size_t>(ns + 1)].real_part);
      info.rho_c = std::exp(lu);
      info.dim_ss = dim_of(0, ns);
      info.dim_c = 1;
      info.dim_uu = dim_of(ns + 1, nb);
    } else {
      reason += c.dim() != 1 || c.is_complex() ? "; weakest unstable block is not a real line"
                                               : "; lambda_s + lambda_u >= 0";
    }
  } else if (info.lorenz_case == LorenzCase::None) {
    reason += nu < 2 ? "; no strong unstable block" : "; no stable block";
  }
  if (info.lorenz_case != LorenzCase::None) {
    const double lhs = std::max(info.rho_ss, info.rho_uu);
    const double rhs = std::min(info.rho_c, 1.0 / info.rho_c);
    info.lorenz_like = lhs < rhs && rhs < 1.0;
    if (!info.lorenz_like) reason = "spectral radius inequality fails";
  }
  if (!info.lorenz_like) info.lorenz_reason = reason;
  return info;
}

struct SingularitySearch {
  std::vector<SingularityInfo> zeros;
  std::size_t seeds = 0;
  std::size_t abandoned = 0;  // seeds hitting a singular Jacobian or diverging
};

/// Newton iteration from a density^d grid of seeds over the region.
inline SingularitySearch find_singularities(const VectorFieldSpec& spec, const Box& region,
                                            int density = 6, int max_iter = 60) {
  if (density < 1) throw PreconditionError("seed grid density must be positive");
  const int d = spec.dimension;
  if (region.dimension() != d) throw PreconditionError("region dimension mismatch");
  SingularitySearch out;
  std::vector<Vector> roots;
  const double diam = region.diameter();
  std::vector<int> idx(static_cast<std::size_t>(d), 0);
  const auto total = static_cast<std::size_t>(std::pow(density, d));
  for (std::size_t n = 0; n < total; ++n) {
    std::size_t rem = n;
    Vector x(d);
    for (int i = 0; i < d; ++i) {
      const auto c = static_cast<double>(rem % static_cast<std::size_t>(density));
      rem /= static_cast<std::size_t>(density);
      x[i] = region.lo[i] + (c + 0.5) / density * (region.hi[i] - region.lo[i]);
    }
    ++out.seeds;
    bool ok = false;
    for (int it = 0; it < max_iter; ++it) {
      const Vector f = spec(x);
      if (!f.allFinite()) break;
      if (f.norm() <= 1e-14 * std::max(1.0, x.norm())) {
        ok = true;
        break;
      }
      const Matrix j = spec.jacobian(x);
      Eigen::FullPivLU<Matrix> lu(j);
      if (!lu.isInvertible() || std::abs(lu.determinant()) < 1e-300) break;
      const Vector step = lu.solve(f);
      x -= step;
      if (!x.allFinite() || x.norm() > 1e3 * (diam + region.center().norm())) break;
      if (step.norm() <= 1e-15 * std::max(1.0, x.norm())) {
        ok = spec(x).norm() <= 1e-10;
        break;
      }
    }
    if (!ok) {
      if (spec(x).allFinite() && spec(x).norm() <= 1e-10) ok = true;
    }
    if (!ok) {
      ++out.abandoned;
      continue;
    }
    if (spec(x).norm() > 1e-10) {
      ++out.abandoned;
      continue;
    }
    // Accept roots inside the region, allowing for roundoff on its faces.
    Box grown = region;
    grown.lo.array() -= 1e-9 * diam;
    grown.hi.array() += 1e-9 * diam;
    if (!grown.contains(x)) continue;
    const bool dup = std::any_of(roots.begin(), roots.end(),
                                 [&](const Vector& r) { return (r - x).norm() < 1e-6; });
    if (!dup) roots.push_back(x);
  }
  std::sort(roots.begin(), roots.end(), [](const Vector& a, const Vector& b) {
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
  });
  for (const auto& r : roots) out.zeros.push_back(classify_singularity(spec, r));
  return out;
}

// ---------------------------------------------------------------------------

/// A finite approximation of a compact invariant set and the zeros it contains.
struct LambdaSample {
  std::vector<Vector> points;
  std::vector<SingularityInfo> singularities;
  std::string provenance;
  /// Regular orbit segment the points came from, when there is one.
  std::shared_ptr<const OrbitSegment> orbit;
  double hausdorff_slack = 0.0;

  bool has_regular_part() const { return !points.empty(); }
};

/// Long-orbit closure: the orbit of x0 after discarding a transient; zeros
/// from `candidates` within `inclusion_radius` of the orbit are added to Lambda.
inline LambdaSample lambda_from_orbit(const VectorFieldSpec& spec, const Vector& x0, double t_total,
                                      double dt, double transient_fraction,
                                      const std::vector<SingularityInfo>& candidates,
                                      double inclusion_radius, IntegratorOptions opt = {}) {
  if (transient_fraction < 0 || transient_fraction >= 1)
    throw PreconditionError("transient fraction must lie in [0, 1)");
  const double t_skip = transient_fraction * t_total;
  const Vector start = t_skip > 0 ? flow(spec, x0, t_skip, opt) : x0;
  auto orbit = std::make_shared<OrbitSegment>(sample_orbit(spec, start, t_total - t_skip, dt, opt));
  LambdaSample lam;
  lam.provenance = "orbit";
  lam.points = orbit->states;
  lam.orbit = orbit;
  for (const auto& s : candidates) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : lam.points) best = std::min(best, (p - s.location).norm());
    if (best <= inclusion_radius) lam.singularities.push_back(s);
  }
  return lam;
}

/// Closure of one branch of the unstable manifold of sigma: the orbit of
/// sigma + offset * u, u the weakest unstable eigendirection. A finite orbit on
/// an attractor rarely passes close to the zeros it accumulates on; starting on
/// W^u(sigma) puts sigma in the sample by construction. Other candidates are
/// included when the orbit comes within inclusion_radius of them.
inline LambdaSample lambda_from_unstable_branch(const VectorFieldSpec& spec, const SingularityInfo& sigma,
                                                double offset, double t_total, double dt,
                                                const std::vector<SingularityInfo>& candidates,
                                                double inclusion_radius, IntegratorOptions opt = {}) {
  const auto ns = static_cast<std::size_t>(sigma.stable_block_count());
  if (!sigma.hyperbolic || ns == sigma.blocks.size())
    throw PreconditionError("unstable branch needs a hyperbolic zero with an unstable direction");
  if (!(offset > 0)) throw PreconditionError("branch offset must be positive");
  const Vector u = canonical_direction(sigma.blocks[ns].frame.col(0));
  auto lam = lambda_from_orbit(spec, sigma.location + offset * u, t_total, dt, 0.0, candidates,
                               inclusion_radius, opt);
  lam.provenance = "unstable-branch";
  const bool present = std::any_of(lam.singularities.begin(), lam.singularities.end(), [&](const auto& s) {
    return (s.location - sigma.location).norm() < 1e-9;
  });
  if (!present) lam.singularities.insert(lam.singularities.begin(), sigma);
  return lam;
}

/// Lambda given by a finite point list (no orbit).
inline LambdaSample lambda_from_points(std::vector<Vector> points,
                                       std::vector<SingularityInfo> singularities,
                                       std::string provenance = "points") {
  LambdaSample lam;
  lam.points = std::move(points);
  lam.singularities = std::move(singularities);
  lam.provenance = std::move(provenance);
  return lam;
}

// ---------------------------------------------------------------------------

namespace detail {

/// Uniform hash grid over points for fixed-radius neighbour queries.
class PointGrid {
 public:
  PointGrid(double cell, int dim) : cell_(cell), dim_(dim) {}

  void insert(const Vector& p) {
    const std::size_t id = pts_.size();
    pts_.push_back(p);
    cells_[key(p)].push_back(id);
  }

  std::size_t size() const { return pts_.size(); }

  /// Nearest stored point to q if it is closer than cell: (distance, id);
  /// otherwise (+inf, size()).
  std::pair<double, std::size_t> nearest_within_cell(const Vector& q) const {
    std::vector<std::int64_t> base = coords(q);
    std::vector<std::int64_t> c(base.size());
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_id = pts_.size();
    const auto total = static_cast<std::size_t>(std::pow(3, dim_));
    for (std::size_t n = 0; n < total; ++n) {
      std::size_t rem = n;
      for (int i = 0; i < dim_; ++i) {
        c[static_cast<std::size_t>(i)] = base[static_cast<std::size_t>(i)] + static_cast<std::int64_t>(rem % 3) - 1;
        rem /= 3;
      }
      auto it = cells_.find(hash(c));
      if (it == cells_.end()) continue;
      for (std::size_t id : it->second) {
        if (coords(pts_[id]) != c) continue;
        const double dist = (pts_[id] - q).norm();
        if (dist < best) {
          best = dist;
          best_id = id;
        }
      }
    }
    if (best < cell_) return {best, best_id};
    return {std::numeric_limits<double>::infinity(), pts_.size()};
  }

 private:
  std::vector<std::int64_t> coords(const Vector& p) const {
    std::vector<std::int64_t> c(static_cast<std::size_t>(dim_));
    for (int i = 0; i < dim_; ++i)
      c[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(std::floor(p[i] / cell_));
    return c;
  }
  static std::uint64_t hash(const std::vector<std::int64_t>& c) {
    std::uint64_t h = 1469598103934665603ull;
    for (auto v : c) {
      h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
      h *= 1099511628211ull;
    }
    return h;
  }
  std::uint64_t key(const Vector& p) const { return hash(coords(p)); }

  double cell_;
  int dim_;
  std::vector<Vector> pts_;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
};

/// Unit coefficient vectors on the sphere of R^k: +-axes, a circle, or a
/// Fibonacci / Gaussian cloud.
inline std::vector<Vector> sphere_directions(Eigen::Index k, int count, std::uint64_t seed = 1) {
  std::vector<Vector> out;
  for (Eigen::Index i = 0; i < k; ++i) {
    Vector e = Vector::Zero(k);
    e[i] = 1.0;
    out.push_back(e);
    out.push_back(-e);
  }
  if (k == 1) return out;
  if (k == 2) {
    for (int j = 0; j < count; ++j) {
      const double a = 2 * std::numbers::pi * (j + 0.5) / count;
      out.push_back(Eigen::Vector2d(std::cos(a), std::sin(a)));
    }
    return out;
  }
  if (k == 3) {
    const double golden = std::numbers::pi * (3 - std::sqrt(5.0));
    for (int j = 0; j < count; ++j) {
      const double z = 1 - 2 * (j + 0.5) / count;
      const double r = std::sqrt(1 - z * z);
      out.push_back(Eigen::Vector3d(r * std::cos(golden * j), r * std::sin(golden * j), z));
    }
    return out;
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  for (int j = 0; j < count; ++j) {
    Vector v(k);
    for (Eigen::Index i = 0; i < k; ++i) v[i] = g(rng);
    out.push_back(v.normalized());
  }
  return out;
}


/// Trajectory of a tube seed as a polyline.
struct TubePath {
  std::vector<Vector> y;
};

inline double segment_distance2(const Vector& p, const Vector& a, const Vector& b) {
  double ab2 = 0.0, pab = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double ab = b[i] - a[i];
    ab2 += ab * ab;
    pab += (p[i] - a[i]) * ab;
  }
  const double s = ab2 > 0 ? std::clamp(pab / ab2, 0.0, 1.0) : 0.0;
  double d2 = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double e = p[i] - a[i] - s * (b[i] - a[i]);
    d2 += e * e;
  }
  return d2;
}

/// Is some vertex of a farther than thr from the polyline b? Matches are
/// searched outward from the previous match, since nearby trajectories run
/// alongside each other.
inline bool directed_gap_exceeds(const TubePath& a, const TubePath& b, double thr) {
  const double thr2 = thr * thr;
  const std::size_t nseg = b.y.size() > 1 ? b.y.size() - 1 : 1;
  auto dist2 = [&](const Vector& p, std::size_t j) {
    return b.y.size() == 1 ? (p - b.y[0]).squaredNorm() : segment_distance2(p, b.y[j], b.y[j + 1]);
  };
  std::size_t last = 0;
  for (const auto& p : a.y) {
    bool found = false;
    for (std::size_t off = 0; off < nseg && !found; ++off) {
      if (last + off < nseg && dist2(p, last + off) <= thr2) {
        last += off;
        found = true;
      } else if (off > 0 && off <= last && dist2(p, last - off) <= thr2) {
        last -= off;
        found = true;
      }
    }
    if (!found) return true;
  }
  return false;
}

/// Are two seed trajectories farther apart than thr in Hausdorff distance?
inline bool path_gap_exceeds(const TubePath& a, const TubePath& b, double thr) {
  return directed_gap_exceeds(a, b, thr) || directed_gap_exceeds(b, a, thr);
}

/// A one-parameter family of seed coefficient vectors on [lo, hi].
struct SeedBranch {
  std::function<Vector(double)> coeffs;
  double lo = 0.0, hi = 0.0;
  int initial = 0;
  double min_width = 0.0;
};

/// Seed families for a restricted generator a. Two real rates far apart
/// distort the disk: trajectories reaching far along the weak direction start
/// exponentially close to the weak axis, so the ratio of strong to weak
/// component is parametrized on a log scale there.
inline std::vector<SeedBranch> seed_branches(const Matrix& a, double r, double ball) {
  std::vector<SeedBranch> out;
  const Eigen::Index k = a.rows();
  if (k == 1) {
    for (double s : {1.0, -1.0}) out.push_back({[s](double) { return Vector::Constant(1, s); }, 0, 0, 0, 0});
    return out;
  }
  if (k == 2) {
    Eigen::EigenSolver<Matrix> es(a);
    const auto ev = es.eigenvalues();
    const bool real = std::abs(ev[0].imag()) < 1e-12 && std::abs(ev[1].imag()) < 1e-12;
    if (real) {
      Eigen::Index ws = std::abs(ev[0].real()) < std::abs(ev[1].real()) ? 0 : 1;
      const double mu_w = std::abs(ev[ws].real()), mu_s = std::abs(ev[1 - ws].real());
      if (mu_s > 1.2 * mu_w) {
        const Vector ew = es.eigenvectors().col(ws).real().normalized();
        const Vector est = es.eigenvectors().col(1 - ws).real().normalized();
        const double depth = (mu_s / mu_w - 1.0) * std::log10(ball / r) + 2.0;
        const double u_max = std::min(300.0, depth);
        for (double sw : {1.0, -1.0})
          for (double ss : {1.0, -1.0}) {
            out.push_back({[=](double u) -> Vector { return sw * ew + ss * std::pow(10.0, -u) * est; }, 0.0,
                           u_max, static_cast<int>(std::ceil(2 * u_max)), 1e-3});
            out.push_back({[=](double v) -> Vector { return ss * est + sw * v * ew; }, 0.0, 1.0, 8, 1e-6});
          }
        return out;
      }
    }
    out.push_back({[](double th) -> Vector { return Eigen::Vector2d(std::cos(th), std::sin(th)); }, 0.0,
                   2 * std::numbers::pi, 48, 1e-6});
    return out;
  }
  for (const auto& c : sphere_directions(k, 64)) out.push_back({[c](double) { return c; }, 0, 0, 0, 0});
  return out;
}
}  // namespace detail

enum class ManifoldSide { Stable, Unstable };

struct EscapeOptions {
  /// Seed disk radius; 0 selects 1e-4 * diam(region).
  double disk_radius = 0.0;
  /// Validation horizon; 0 selects one e-folding time of the slowest block.
  double horizon = 0.0;
  /// Radius of the neighbourhood ball the tube is grown to; 0 selects 0.25 * diam.
  double ball_radius = 0.0;
  /// Membership tolerance; 0 selects 1e-3 * diam.
  double tolerance = 0.0;
  double r_sigma = 1e-4;
  int directions = 48;
  /// Growth stops after this many horizons even inside the ball.
  double max_horizons = 40.0;
  /// Cap on seed refinement.
  std::size_t max_trajectories = 6000;
  /// Stop growing the tube at the first Lambda point found on it.
  bool stop_at_first_hit = true;
  IntegratorOptions integrator{.tol = 1e-9};
};

struct EscapeResult {
  bool escapes = true;
  /// Smallest distance from a Lambda point (outside r_sigma) to the tube
  /// samples, among pairs closer than one grid cell (tolerance).
  double min_distance = std::numeric_limits<double>::infinity();
  std::size_t hits = 0;
  std::size_t tube_samples = 0;
  std::size_t trajectories = 0;
  Vector closest_point;
  double disk_radius = 0.0, tolerance = 0.0, ball_radius = 0.0;
  /// Worst ratio of observed to linearly predicted contraction in validation.
  double validation_ratio = 1.0;
};

/// Does the local strong manifold tangent to `frame` at sigma meet Lambda
/// only at sigma? The manifold is grown from a disk in sigma + span(frame):
/// backward in time for a stable frame, forward for an unstable one, until
/// the tube leaves the neighbourhood ball. Tube points closer than
/// 2 tolerance to sigma are not recorded: there every point of Lambda is
/// within tolerance of every local manifold and membership is unresolvable.
inline EscapeResult escape_test(const VectorFieldSpec& spec, const SingularityInfo& sigma,
                                const Matrix& frame, ManifoldSide side, const LambdaSample& lam,
                                EscapeOptions opt = {}) {
  if (!sigma.hyperbolic) throw PreconditionError("escape_test needs a hyperbolic singularity");
  EscapeResult res;
  if (frame.cols() == 0) return res;  // the zero-dimensional manifold is {sigma}
  const double diam = spec.region.diameter();
  const double r = opt.disk_radius > 0 ? opt.disk_radius : 1e-4 * diam;
  const double tau = opt.tolerance > 0 ? opt.tolerance : 1e-3 * diam;
  const double ball = opt.ball_radius > 0 ? opt.ball_radius : 0.25 * diam;
  res.disk_radius = r;
  res.tolerance = tau;
  res.ball_radius = ball;

  const Matrix b = orthonormalize(frame);
  const Matrix a = b.transpose() * sigma.jacobian * b;  // restricted generator
  Eigen::EigenSolver<Matrix> es(a, false);
  double slowest = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double re = es.eigenvalues()[i].real();
    if (side == ManifoldSide::Stable ? re >= 0 : re <= 0)
      throw PreconditionError("escape_test: frame is not inside the requested stable/unstable space");
    slowest = std::min(slowest, std::abs(re));
  }
  const double th = opt.horizon > 0 ? opt.horizon : 1.0 / slowest;
  const double sgn = side == ManifoldSide::Stable ? 1.0 : -1.0;  // validation direction

  // Validation: seeds must contract toward sigma as the linear flow predicts.
  const auto dirs = detail::sphere_directions(b.cols(), opt.directions);
  const Matrix lin = (a * (sgn * th)).exp();
  for (const Vector& c : dirs) {
    const Vector seed = sigma.location + r * (b * c);
    const Vector y = flow(spec, seed, sgn * th, opt.integrator);
    const double observed = (y - sigma.location).norm();
    const double predicted = r * (lin * c).norm();
    const double ratio = observed / predicted;
    res.validation_ratio = std::max(res.validation_ratio, std::max(ratio, 1.0 / ratio));
    if (!(ratio <= 2.0 && ratio >= 0.5))
      throw PreconditionError("radius too large: seeds at r=" + std::to_string(r) +
                              " do not follow the linear flow (ratio " + std::to_string(ratio) + ")");
  }

  // Grow the tube. Seeds are refined between neighbours whose trajectories
  // separate by more than the tolerance, so the sampled surface has no holes
  // wider than tau inside the ball.
  detail::PointGrid lambda_grid(tau, spec.dimension);
  std::vector<std::size_t> lambda_ids;
  for (std::size_t i = 0; i < lam.points.size(); ++i) {
    if ((lam.points[i] - sigma.location).norm() <= opt.r_sigma) continue;
    lambda_grid.insert(lam.points[i]);
    lambda_ids.push_back(i);
  }
  std::vector<bool> hit(lambda_ids.size(), false);
  bool done = false;
  auto record = [&](const Vector& y) {
    ++res.tube_samples;
    const auto [dist, id] = lambda_grid.nearest_within_cell(y);
    if (dist < res.min_distance) {
      res.min_distance = dist;
      res.closest_point = lam.points[lambda_ids[id]];
    }
    if (dist < tau && !hit[id]) {
      hit[id] = true;
      ++res.hits;
      if (opt.stop_at_first_hit) done = true;
    }
  };
  const double t_cap = opt.max_horizons * th;
  auto grow = [&](const Vector& c) {
    detail::TubePath path;
    Vector y = sigma.location + r * (b * c.normalized());
    Vector last = y;
    double t = 0.0;
    path.y.push_back(y);
    while (t < t_cap && !done) {
      const double speed = std::max(spec(y).norm(), 1e-12);
      const double h = std::min(0.0125 * th, 0.5 * tau / speed);
      try {
        y = flow(spec, y, -sgn * h, opt.integrator);
      } catch (const IntegrationError&) {
        break;
      }
      t += h;
      const double dist = (y - sigma.location).norm();
      if (dist > ball) break;
      if ((y - path.y.back()).norm() >= tau) path.y.push_back(y);
      if (dist >= 2 * tau && (y - last).norm() >= 0.5 * tau) {
        record(y);
        last = y;
      }
    }
    path.y.push_back(y);
    ++res.trajectories;
    return path;
  };

  auto branches = detail::seed_branches(a, r, ball);
  for (const auto& br : branches) {
    std::vector<double> params;
    for (int j = 0; j <= br.initial; ++j) params.push_back(br.lo + (br.hi - br.lo) * j / std::max(1, br.initial));
    if (br.initial == 0) params.resize(1);
    std::vector<detail::TubePath> paths;
    for (double p : params) {
      if (done) break;
      paths.push_back(grow(br.coeffs(p)));
    }
    // Depth-first bisection keeps only the active paths in memory.
    std::function<void(double, const detail::TubePath&, double, const detail::TubePath&)> refine =
        [&](double pa, const detail::TubePath& a_path, double pb, const detail::TubePath& b_path) {
          if (done || pb - pa <= br.min_width || res.trajectories >= opt.max_trajectories) return;
          if (!detail::path_gap_exceeds(a_path, b_path, 2 * tau)) return;
          const double pm = 0.5 * (pa + pb);
          const auto m_path = grow(br.coeffs(pm));
          refine(pa, a_path, pm, m_path);
          refine(pm, m_path, pb, b_path);
        };
    for (std::size_t j = 0; j + 1 < paths.size(); ++j) refine(params[j], paths[j], params[j + 1], paths[j + 1]);
    if (done) break;
  }
  res.escapes = res.hits == 0;
  return res;
}

struct CenterSpace {
  Matrix escaping_stable;
  Matrix center;
  Matrix escaping_unstable;
  std::size_t ss_blocks = 0;
  std::size_t uu_blocks = 0;
  std::vector<LineElement> lines;
  std::vector<EscapeResult> stable_scan;
  std::vector<EscapeResult> unstable_scan;
  bool merged_blocks = false;
};

/// Unit directions of a projective grid in span(frame): one line for a 1-d
/// frame, a half circle for 2-d, a Fibonacci hemisphere for 3-d.
inline std::vector<Vector> projective_grid(const Matrix& frame, int count, std::uint64_t seed = 1) {
  std::vector<Vector> out;
  const Eigen::Index k = frame.cols();
  if (k == 0) return out;
  if (k == 1) {
    out.push_back(canonical_direction(frame.col(0)));
    return out;
  }
  if (k == 2) {
    for (int j = 0; j < count; ++j) {
      const double a = std::numbers::pi * j / count;
      out.push_back(canonical_direction(frame * Eigen::Vector2d(std::cos(a), std::sin(a))));
    }
    return out;
  }
  std::vector<Vector> dirs;
  if (k == 3) {
    const double golden = std::numbers::pi * (3 - std::sqrt(5.0));
    for (int j = 0; j < count; ++j) {
      const double z = 1 - (j + 0.5) / count;  // upper hemisphere
      const double r = std::sqrt(1 - z * z);
      dirs.push_back(Eigen::Vector3d(r * std::cos(golden * j), r * std::sin(golden * j), z));
    }
  } else {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    for (int j = 0; j < count; ++j) {
      Vector v(k);
      for (Eigen::Index i = 0; i < k; ++i) v[i] = g(rng);
      dirs.push_back(v);
    }
  }
  for (const auto& c : dirs) out.push_back(canonical_direction(frame * c));
  return out;
}

/// Escaping stable/unstable spaces and the center space of sigma in Lambda.
inline CenterSpace center_space(const VectorFieldSpec& spec, const SingularityInfo& sigma,
                                const LambdaSample& lam, EscapeOptions opt = {},
                                int line_count = 16) {
  if (!sigma.hyperbolic) throw PreconditionError("center_space needs a hyperbolic singularity");
  CenterSpace cs;
  cs.merged_blocks = sigma.merged_blocks;
  const auto ns = static_cast<std::size_t>(sigma.stable_block_count());
  const std::size_t nb = sigma.blocks.size();
  for (std::size_t j = 1; j <= ns; ++j) {
    auto r = escape_test(spec, sigma, sigma.block_frame(0, j), ManifoldSide::Stable, lam, opt);
    cs.stable_scan.push_back(r);
    if (!r.escapes) break;
    cs.ss_blocks = j;
  }
  for (std::size_t j = 1; j <= nb - ns; ++j) {
    auto r = escape_test(spec, sigma, sigma.block_frame(nb - j, nb), ManifoldSide::Unstable, lam, opt);
    cs.unstable_scan.push_back(r);
    if (!r.escapes) break;
    cs.uu_blocks = j;
  }
  // When every block escapes on both sides the two scans overlap; the
  // escaping spaces then cover everything and the center is trivial.
  const std::size_t lo = cs.ss_blocks;
  const std::size_t hi = std::max(lo, nb - cs.uu_blocks);
  cs.escaping_stable = sigma.block_frame(0, lo);
  cs.escaping_unstable = sigma.block_frame(hi, nb);
  cs.center = sigma.block_frame(lo, hi);
  for (const auto& u : projective_grid(cs.center, line_count))
    cs.lines.push_back(LineElement::make(sigma.location, u));
  return cs;
}

// ---------------------------------------------------------------------------

/// 1 inside r_in, 0 outside r_out, cubic smoothstep in between.
inline double bump(double dist, double r_in, double r_out) {
  if (dist <= r_in) return 1.0;
  if (dist >= r_out) return 0.0;
  const double s = (dist - r_in) / (r_out - r_in);
  return 1.0 - s * s * (3.0 - 2.0 * s);
}

/// log h^{t_k}(L) for every sample k of a line cocycle (extended or Poincare)
/// started at sample k0, by trapezoid quadrature of rho * g along the orbit.
inline std::vector<double> renorm_log_cocycle(const VectorFieldSpec& spec, const Cocycle& c,
                                              const Vector& sigma, double r_in, double r_out,
                                              std::size_t k0 = 0) {
  if (!(r_in > 0 && r_in < r_out)) throw PreconditionError("bump radii must satisfy 0 < r_in < r_out");
  if (!c.is_normal()) throw PreconditionError("renormalization needs a line cocycle");
  if (k0 >= c.size()) throw PreconditionError("start sample outside the integration record");
  auto integrand = [&](std::size_t k) {
    const double rho = bump((c.states[k] - sigma).norm(), r_in, r_out);
    if (rho == 0.0) return 0.0;
    return rho * c.directions[k].dot(spec.jacobian(c.states[k]) * c.directions[k]);
  };
  std::vector<double> out(c.size() - k0, 0.0);
  const double dt = c.dt();
  double prev = integrand(k0);
  for (std::size_t k = k0 + 1; k < c.size(); ++k) {
    const double cur = integrand(k);
    out[k - k0] = out[k - k0 - 1] + 0.5 * dt * (prev + cur);
    prev = cur;
  }
  return out;
}

/// h^t(L) between two samples of a recorded line cocycle.
inline double renorm_cocycle(const VectorFieldSpec& spec, const Cocycle& c, std::size_t k0,
                             std::size_t k1, const Vector& sigma, double r_in, double r_out) {
  if (k1 >= c.size() || k0 > k1)
    throw PreconditionError("renorm_cocycle: the segment leaves the integration record");
  const auto log_h = renorm_log_cocycle(spec, c, sigma, r_in, r_out, k0);
  return std::exp(log_h[k1 - k0]);
}

/// h^t(L) for a line element: samples the orbit of L at step dt and integrates.
inline double renorm_cocycle(const VectorFieldSpec& spec, const LineElement& l, double t,
                             const Vector& sigma, double r_in, double r_out, double dt = 1e-3,
                             IntegratorOptions opt = {}) {
  if (t == 0.0) return 1.0;
  const double steps = std::max(1.0, std::round(t / dt));
  const double h = t / steps;
  const bool at_zero = spec(l.base).norm() == 0.0;
  OrbitSegment orbit = at_zero ? fixed_point_orbit(spec, l.base, t, h, opt)
                               : sample_orbit(spec, l.base, t, h, opt);
  const Cocycle c = extended_cocycle(orbit, l.direction);
  const auto log_h = renorm_log_cocycle(spec, c, sigma, r_in, r_out);
  return std::exp(log_h.back());
}

}  // namespace singhyp
