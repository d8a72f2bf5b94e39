#pragma once

// The normal bundle, the linear Poincare flow Psi_t over regular points and
// its extension hat-Psi_t over lines of the projective bundle. Along sampled
// orbits both are represented as a Cocycle: fiber coordinates in an
// orthonormal basis of the normal space at every sample, and one small
// transition matrix per step.

#include "singhyp/dynamics.hpp"
#include "singhyp/factored.hpp"

#include <cmath>
#include <memory>
#include <vector>

namespace singhyp {

/// Below this speed a point counts as a zero of X for the plain Psi_t.
inline constexpr double kDegenerateSpeed = 1e-9;

/// Applies the sign convention: first coordinate with |u_i| > 1e-12 positive.
inline Vector canonical_direction(Vector u) {
  const double n = u.norm();
  if (!(n > 0)) throw PreconditionError("line direction must be non-zero");
  u /= n;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    if (std::abs(u[i]) > 1e-12) {
      if (u[i] < 0) u = -u;
      break;
    }
  }
  return u;
}

/// A point of the projective bundle: base point and a unit direction.
struct LineElement {
  Vector base;
  Vector direction;

  static LineElement make(Vector base, Vector direction) {
    return LineElement{std::move(base), canonical_direction(std::move(direction))};
  }

  bool operator==(const LineElement& o) const {
    return base == o.base && direction == o.direction;
  }
};

/// The line R X(x) at a regular point.
inline LineElement field_line(const VectorFieldSpec& spec, const Vector& x) {
  const Vector v = spec(x);
  if (v.norm() <= kDegenerateSpeed)
    throw DegenerateNormalError("degenerate normal bundle: X vanishes at the base point");
  return LineElement::make(x, v);
}

/// A vector of the normal space N(L) = L^perp.
struct NormalVector {
  LineElement at;
  Vector v;

  NormalVector(LineElement l, Vector w) : at(std::move(l)), v(std::move(w)) {
    if (std::abs(v.dot(at.direction)) > 1e-10 * std::max(1.0, v.norm()))
      throw PreconditionError("normal vector is not orthogonal to its line");
  }
};

/// v - <v,u> u for unit u.
inline Vector normal_project(const Vector& v, const Vector& u) { return v - v.dot(u) * u; }

/// Psi_t(v) = D phi_t(v) projected onto X(phi_t(x))^perp.
inline Vector psi(const VectorFieldSpec& spec, const Vector& x, double t, const Vector& v,
                  IntegratorOptions opt = {}) {
  const Vector fx = spec(x);
  if (fx.norm() <= kDegenerateSpeed)
    throw DegenerateNormalError("degenerate normal bundle at the start point");
  if (std::abs(v.dot(fx)) > 1e-8 * v.norm() * fx.norm())
    throw PreconditionError("psi: v must be orthogonal to X(x)");
  auto [y, m] = tangent_flow(spec, x, t, opt);
  const Vector fy = spec(y);
  if (fy.norm() <= kDegenerateSpeed)
    throw DegenerateNormalError("degenerate normal bundle at the end point");
  return normal_project(m * v, fy / fy.norm());
}

/// (hat-phi_t(L), hat-Psi_t(v)) for v orthogonal to L.
inline std::pair<LineElement, Vector> psi_hat(const VectorFieldSpec& spec, const LineElement& l,
                                              double t, const Vector& v,
                                              IntegratorOptions opt = {}) {
  if (std::abs(v.dot(l.direction)) > 1e-8 * std::max(1.0, v.norm()))
    throw PreconditionError("psi_hat: v must be orthogonal to the line");
  if (t == 0.0) return {l, v};
  auto [y, m] = tangent_flow(spec, l.base, t, opt);
  const Vector du = m * l.direction;
  const Vector u = du / du.norm();
  return {LineElement::make(y, u), normal_project(m * v, u)};
}

/// Infinitesimal growth rate of the line: <J(x) u, u>.
inline double log_derivative(const VectorFieldSpec& spec, const LineElement& l) {
  return l.direction.dot(spec.jacobian(l.base) * l.direction);
}

// ---------------------------------------------------------------------------

/// A linear cocycle sampled along an orbit. Fiber k has coordinates in the
/// orthonormal columns of bases[k] (d x m); steps[k] maps fiber k to k+1.
/// Tangent cocycles use identity bases; normal cocycles use bases of L_k^perp.
struct Cocycle {
  std::vector<double> times;
  std::vector<Vector> states;
  std::vector<Matrix> bases;
  std::vector<Matrix> steps;
  /// Unit line directions (normal cocycles only).
  std::vector<Vector> directions;
  /// log ||D phi_{t_k}|_L|| relative to sample 0 (normal cocycles only).
  std::vector<double> log_line_growth;

  std::size_t size() const { return times.size(); }
  Eigen::Index fiber_dim() const { return bases.empty() ? 0 : bases.front().cols(); }
  double dt() const { return times.size() > 1 ? times[1] - times[0] : 0.0; }
  bool is_normal() const { return !directions.empty(); }

  /// Propagate a fiber frame (coordinates, m x k) from sample k0 to k1;
  /// k1 < k0 runs the inverse steps.
  FactoredMatrix propagate(std::size_t k0, std::size_t k1, const Matrix& frame) const {
    FactoredMatrix f = factored_frame(frame);
    if (k1 >= k0) {
      for (std::size_t k = k0; k < k1; ++k) f.left_multiply(steps[k]);
    } else {
      for (std::size_t k = k0; k > k1; --k) f.left_multiply(steps[k - 1].inverse());
    }
    return f;
  }

  /// Ambient frame for fiber coordinates at sample k.
  Matrix ambient(std::size_t k, const Matrix& coords) const { return bases[k] * coords; }
  /// Fiber coordinates of an ambient frame at sample k (projects first).
  Matrix coordinates(std::size_t k, const Matrix& ambient_frame) const {
    return bases[k].transpose() * ambient_frame;
  }
};

/// The same cocycle over the time-reversed orbit: sample k becomes n-1-k and
/// steps are inverted. Times restart at 0; line growth is re-based.
inline Cocycle reversed(const Cocycle& c) {
  Cocycle r;
  const std::size_t n = c.size();
  const double t_end = n ? c.times.back() : 0.0;
  for (std::size_t k = n; k-- > 0;) {
    r.times.push_back(t_end - c.times[k]);
    r.states.push_back(c.states[k]);
    r.bases.push_back(c.bases[k]);
    if (c.is_normal()) {
      r.directions.push_back(c.directions[k]);
      r.log_line_growth.push_back(c.log_line_growth[k] - c.log_line_growth.back());
    }
  }
  for (std::size_t k = n - 1; k-- > 0;) r.steps.push_back(c.steps[k].inverse());
  return r;
}

namespace detail {

inline Matrix normal_basis(const Vector& u) {
  return orthogonal_complement(u, u.size());
}

}  // namespace detail

/// Tangent cocycle D phi along a sampled orbit.
inline Cocycle tangent_cocycle(const OrbitSegment& orbit) {
  Cocycle c;
  c.times = orbit.times;
  c.states = orbit.states;
  const int d = orbit.dimension();
  c.bases.assign(orbit.size(), Matrix::Identity(d, d));
  c.steps = orbit.steps;
  return c;
}

/// Linear Poincare flow along a regular sampled orbit; lines are R X(x_k).
inline Cocycle poincare_cocycle(const VectorFieldSpec& spec, const OrbitSegment& orbit,
                                double min_speed = kDegenerateSpeed) {
  Cocycle c;
  c.times = orbit.times;
  c.states = orbit.states;
  const std::size_t n = orbit.size();
  c.bases.reserve(n);
  c.directions.reserve(n);
  c.log_line_growth.reserve(n);
  double log0 = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const Vector f = spec(orbit.states[k]);
    const double speed = f.norm();
    if (speed <= min_speed)
      throw DegenerateNormalError("degenerate normal bundle: orbit sample " + std::to_string(k) +
                                  " is within the singular threshold");
    const Vector u = f / speed;
    if (k == 0) log0 = std::log(speed);
    c.directions.push_back(u);
    c.bases.push_back(detail::normal_basis(u));
    c.log_line_growth.push_back(std::log(speed) - log0);
  }
  c.steps.reserve(n - 1);
  for (std::size_t k = 0; k + 1 < n; ++k)
    c.steps.push_back(c.bases[k + 1].transpose() * orbit.steps[k] * c.bases[k]);
  return c;
}

/// Extended linear Poincare flow along the orbit of the line through x_0
/// with direction u0: lines are transported by D phi.
inline Cocycle extended_cocycle(const OrbitSegment& orbit, const Vector& u0) {
  Cocycle c;
  c.times = orbit.times;
  c.states = orbit.states;
  const std::size_t n = orbit.size();
  Vector u = u0 / u0.norm();
  double growth = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    c.directions.push_back(u);
    c.bases.push_back(detail::normal_basis(u));
    c.log_line_growth.push_back(growth);
    if (k + 1 < n) {
      const Vector w = orbit.steps[k] * u;
      const double g = w.norm();
      growth += std::log(g);
      u = w / g;
    }
  }
  for (std::size_t k = 0; k + 1 < n; ++k)
    c.steps.push_back(c.bases[k + 1].transpose() * orbit.steps[k] * c.bases[k]);
  return c;
}

/// Orbit segment of a zero sigma: constant states, steps exp(J dt).
inline OrbitSegment fixed_point_orbit(const VectorFieldSpec& spec, const Vector& sigma,
                                      double t_total, double dt, IntegratorOptions opt = {}) {
  OrbitSegment o;
  o.tol = opt.tol;
  auto [y, step] = tangent_flow(spec, sigma, dt, opt);
  (void)y;
  const auto n = static_cast<std::size_t>(std::floor(t_total / dt + 1e-9));
  FactoredMatrix acc = factored_frame(Matrix::Identity(spec.dimension, spec.dimension));
  o.times.push_back(0.0);
  o.states.push_back(sigma);
  o.fundamentals.push_back(acc);
  for (std::size_t k = 0; k < n; ++k) {
    acc.left_multiply(step);
    o.times.push_back(static_cast<double>(k + 1) * dt);
    o.states.push_back(sigma);
    o.steps.push_back(step);
    o.fundamentals.push_back(acc);
  }
  return o;
}

}  // namespace singhyp
