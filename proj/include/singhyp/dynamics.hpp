#pragma once

// Vector fields on R^d with exact Jacobians, the built-in example families,
// and adaptive integration of the flow and of the tangent (variational) flow.

#include "singhyp/factored.hpp"
#include "singhyp/types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace singhyp {

/// Axis-aligned box, the compact region of interest.
struct Box {
  Vector lo;
  Vector hi;

  int dimension() const { return static_cast<int>(lo.size()); }
  double diameter() const { return (hi - lo).norm(); }
  Vector center() const { return 0.5 * (lo + hi); }
  bool contains(const Vector& x) const {
    for (int i = 0; i < lo.size(); ++i)
      if (x[i] < lo[i] || x[i] > hi[i]) return false;
    return true;
  }

  static Box cube(int d, double half_width) {
    return Box{Vector::Constant(d, -half_width), Vector::Constant(d, half_width)};
  }
};

/// Named real parameters. Scalars are one-element arrays; `linear` carries
/// its matrix row-major under "A".
using ParamSet = std::map<std::string, std::vector<double>>;

struct VectorFieldSpec {
  std::string name;
  int dimension = 0;
  std::function<Vector(const Vector&)> rhs;
  std::function<Matrix(const Vector&)> jacobian;
  ParamSet params;
  Box region;

  Vector operator()(const Vector& x) const { return rhs(x); }
};

/// One term c * x_1^p_1 * ... * x_d^p_d.
struct Monomial {
  double coef = 0.0;
  std::vector<int> powers;
};

/// Per-component monomial lists; component k is sum of terms[k].
struct PolynomialTable {
  int dimension = 0;
  std::vector<std::vector<Monomial>> terms;
};

namespace detail {

inline double ipow(double x, int p) {
  double r = 1.0;
  for (int i = 0; i < p; ++i) r *= x;
  return r;
}

inline Vector poly_eval(const PolynomialTable& p, const Vector& x) {
  Vector out = Vector::Zero(p.dimension);
  for (int k = 0; k < p.dimension; ++k) {
    for (const auto& m : p.terms[k]) {
      double v = m.coef;
      for (int j = 0; j < p.dimension; ++j) v *= ipow(x[j], m.powers[j]);
      out[k] += v;
    }
  }
  return out;
}

inline Matrix poly_jacobian(const PolynomialTable& p, const Vector& x) {
  Matrix out = Matrix::Zero(p.dimension, p.dimension);
  for (int k = 0; k < p.dimension; ++k) {
    for (const auto& m : p.terms[k]) {
      for (int j = 0; j < p.dimension; ++j) {
        if (m.powers[j] == 0) continue;
        double v = m.coef * m.powers[j] * ipow(x[j], m.powers[j] - 1);
        for (int l = 0; l < p.dimension; ++l)
          if (l != j) v *= ipow(x[l], m.powers[l]);
        out(k, j) += v;
      }
    }
  }
  return out;
}

inline double scalar_param(const ParamSet& params, const std::string& family,
                           const std::string& key) {
  auto it = params.find(key);
  if (it == params.end())
    throw PreconditionError("builtin '" + family + "': missing parameter '" + key + "'");
  if (it->second.size() != 1)
    throw PreconditionError("builtin '" + family + "': parameter '" + key +
                            "' must be a scalar");
  return it->second.front();
}

inline void reject_unknown(const ParamSet& params, const std::string& family,
                           std::initializer_list<const char*> allowed) {
  for (const auto& [key, _] : params) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok)
      throw PreconditionError("builtin '" + family + "': unknown parameter '" + key + "'");
  }
}

}  // namespace detail

inline VectorFieldSpec polynomial_field(std::string name, PolynomialTable table, Box region) {
  if (table.dimension <= 0 || static_cast<int>(table.terms.size()) != table.dimension)
    throw PreconditionError("polynomial field: component count must equal dimension");
  for (const auto& comp : table.terms)
    for (const auto& m : comp)
      if (static_cast<int>(m.powers.size()) != table.dimension ||
          std::any_of(m.powers.begin(), m.powers.end(), [](int p) { return p < 0; }))
        throw PreconditionError("polynomial field: each monomial needs d non-negative powers");
  VectorFieldSpec spec;
  spec.name = std::move(name);
  spec.dimension = table.dimension;
  spec.rhs = [table](const Vector& x) { return detail::poly_eval(table, x); };
  spec.jacobian = [table](const Vector& x) { return detail::poly_jacobian(table, x); };
  spec.region = std::move(region);
  return spec;
}

inline VectorFieldSpec linear_field(const Matrix& a, std::optional<Box> region = std::nullopt) {
  if (a.rows() != a.cols() || a.rows() == 0)
    throw PreconditionError("builtin 'linear': A must be a non-empty square matrix");
  const int d = static_cast<int>(a.rows());
  VectorFieldSpec spec;
  spec.name = "linear";
  spec.dimension = d;
  spec.rhs = [a](const Vector& x) -> Vector { return a * x; };
  spec.jacobian = [a](const Vector&) -> Matrix { return a; };
  std::vector<double> flat;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) flat.push_back(a(i, j));
  spec.params["A"] = flat;
  spec.region = region ? *region : Box::cube(d, 1.0);
  return spec;
}

/// Built-in example families: lorenz, linear, rotation2d, cubic1d-product,
/// saddle-cycle.
inline VectorFieldSpec builtin(const std::string& name, const ParamSet& params = {}) {
  using detail::scalar_param;
  if (name == "lorenz") {
    detail::reject_unknown(params, name, {"sigma", "rho", "beta"});
    const double s = scalar_param(params, name, "sigma");
    const double r = scalar_param(params, name, "rho");
    const double b = scalar_param(params, name, "beta");
    VectorFieldSpec spec;
    spec.name = name;
    spec.dimension = 3;
    spec.rhs = [s, r, b](const Vector& x) -> Vector {
      Vector v(3);
      v << s * (x[1] - x[0]), x[0] * (r - x[2]) - x[1], x[0] * x[1] - b * x[2];
      return v;
    };
    spec.jacobian = [s, r, b](const Vector& x) -> Matrix {
      Matrix j(3, 3);
      j << -s, s, 0.0, r - x[2], -1.0, -x[0], x[1], x[0], -b;
      return j;
    };
    spec.params = params;
    Vector lo(3), hi(3);
    lo << -30.0, -30.0, -5.0;
    hi << 30.0, 30.0, 55.0;
    spec.region = Box{lo, hi};
    return spec;
  }
  if (name == "linear") {
    detail::reject_unknown(params, name, {"A"});
    auto it = params.find("A");
    if (it == params.end())
      throw PreconditionError("builtin 'linear': missing parameter 'A'");
    const auto& flat = it->second;
    const int d = static_cast<int>(std::lround(std::sqrt(static_cast<double>(flat.size()))));
    if (d == 0 || static_cast<std::size_t>(d * d) != flat.size())
      throw PreconditionError("builtin 'linear': parameter 'A' must hold d*d entries");
    Matrix a(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) a(i, j) = flat[static_cast<std::size_t>(i * d + j)];
    return linear_field(a);
  }
  if (name == "rotation2d") {
    detail::reject_unknown(params, name, {});
    Matrix a(2, 2);
    a << 0.0, -1.0, 1.0, 0.0;
    auto spec = linear_field(a, Box::cube(2, 2.0));
    spec.name = name;
    spec.params.clear();
    return spec;
  }
  if (name == "cubic1d-product") {
    // (x(1 - x^2), -y)
    detail::reject_unknown(params, name, {});
    VectorFieldSpec spec;
    spec.name = name;
    spec.dimension = 2;
    spec.rhs = [](const Vector& x) -> Vector {
      Vector v(2);
      v << x[0] * (1.0 - x[0] * x[0]), -x[1];
      return v;
    };
    spec.jacobian = [](const Vector& x) -> Matrix {
      Matrix j(2, 2);
      j << 1.0 - 3.0 * x[0] * x[0], 0.0, 0.0, -1.0;
      return j;
    };
    spec.region = Box::cube(2, 2.0);
    return spec;
  }
  if (name == "saddle-cycle") {
    // Rotation at speed omega in the (x,y)-plane, radial law
    // r' = kappa r (1 - r^2) / 2 and z' = mu z. The unit circle is a periodic
    // orbit with normal exponents -kappa (radial) and +mu (vertical).
    detail::reject_unknown(params, name, {"omega", "kappa", "mu"});
    const double w = scalar_param(params, name, "omega");
    const double k = scalar_param(params, name, "kappa");
    const double m = scalar_param(params, name, "mu");
    VectorFieldSpec spec;
    spec.name = name;
    spec.dimension = 3;
    spec.rhs = [w, k, m](const Vector& x) -> Vector {
      const double g = 0.5 * k * (1.0 - x[0] * x[0] - x[1] * x[1]);
      Vector v(3);
      v << g * x[0] - w * x[1], g * x[1] + w * x[0], m * x[2];
      return v;
    };
    spec.jacobian = [w, k, m](const Vector& x) -> Matrix {
      const double g = 0.5 * k * (1.0 - x[0] * x[0] - x[1] * x[1]);
      Matrix j(3, 3);
      j << g - k * x[0] * x[0], -k * x[0] * x[1] - w, 0.0,  //
          -k * x[0] * x[1] + w, g - k * x[1] * x[1], 0.0,    //
          0.0, 0.0, m;
      return j;
    };
    spec.params = params;
    spec.region = Box::cube(3, 2.0);
    return spec;
  }
  throw PreconditionError("unknown builtin vector field '" + name + "'");
}

/// Parameters the built-in families are usually run with.
inline ParamSet default_params(const std::string& name) {
  if (name == "lorenz") return {{"sigma", {10.0}}, {"rho", {28.0}}, {"beta", {8.0 / 3.0}}};
  if (name == "saddle-cycle") return {{"omega", {1.0}}, {"kappa", {1.0}}, {"mu", {0.5}}};
  return {};
}

inline Matrix eval_jacobian(const VectorFieldSpec& spec, const Vector& x) {
  if (!x.allFinite()) throw PreconditionError("eval_jacobian: non-finite input");
  return spec.jacobian(x);
}

/// X -> c X. c < 0 reverses time.
inline VectorFieldSpec scaled(const VectorFieldSpec& spec, double c) {
  VectorFieldSpec out = spec;
  auto f = spec.rhs;
  auto j = spec.jacobian;
  out.rhs = [f, c](const Vector& x) -> Vector { return c * f(x); };
  out.jacobian = [j, c](const Vector& x) -> Matrix { return c * j(x); };
  out.name = spec.name + (c < 0 ? "-reversed" : "-scaled");
  return out;
}

/// X + P for a polynomial perturbation P of the same dimension.
inline VectorFieldSpec perturbed(const VectorFieldSpec& spec, const PolynomialTable& p) {
  if (p.dimension != spec.dimension)
    throw PreconditionError("perturbation dimension mismatch");
  VectorFieldSpec out = spec;
  auto f = spec.rhs;
  auto j = spec.jacobian;
  out.rhs = [f, p](const Vector& x) -> Vector { return f(x) + detail::poly_eval(p, x); };
  out.jacobian = [j, p](const Vector& x) -> Matrix {
    return j(x) + detail::poly_jacobian(p, x);
  };
  return out;
}

// ---------------------------------------------------------------------------
// Integration

enum class Method { DormandPrince45, FixedRK4 };

struct IntegratorOptions {
  double tol = 1e-10;
  Method method = Method::DormandPrince45;
  /// Step of the reproducibility mode (FixedRK4).
  double fixed_step = 1e-3;
  double norm_guard = 1e6;
  double min_step = 1e-14;
  long max_steps = 50'000'000;
};

namespace detail {

// y' = f(y) on the joint vector (state, optionally column-stacked matrix).
// Only the first `guard_dim` entries are checked against the norm guard.
template <class F>
Vector integrate(const F& f, Vector y, double t, const IntegratorOptions& opt, int guard_dim) {
  if (t == 0.0) return y;
  const double dir = t > 0 ? 1.0 : -1.0;
  const double span = std::abs(t);
  auto check = [&](const Vector& v, double at) {
    if (!v.allFinite())
      throw IntegrationError(IntegrationError::Kind::NonFinite, dir * at,
                             "non-finite state at t=" + std::to_string(dir * at));
    if (v.head(guard_dim).norm() > opt.norm_guard)
      throw IntegrationError(IntegrationError::Kind::BlowUp, dir * at,
                             "state norm exceeded guard at t=" + std::to_string(dir * at));
  };
  auto g = [&](const Vector& v) -> Vector { return dir * f(v); };

  if (opt.method == Method::FixedRK4) {
    const long n = std::max(1L, static_cast<long>(std::ceil(span / opt.fixed_step - 1e-12)));
    const double h = span / static_cast<double>(n);
    double s = 0.0;
    for (long i = 0; i < n; ++i) {
      Vector k1 = g(y);
      Vector k2 = g(y + 0.5 * h * k1);
      Vector k3 = g(y + 0.5 * h * k2);
      Vector k4 = g(y + h * k3);
      y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      s += h;
      check(y, s);
    }
    return y;
  }

  // Dormand-Prince 5(4), FSAL, standard step-size controller.
  constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  constexpr double a21 = 1.0 / 5;
  constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                   a54 = -212.0 / 729;
  constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                   a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                   b6 = 11.0 / 84;
  constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                   e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
  (void)c2;
  (void)c3;
  (void)c4;
  (void)c5;

  const double atol = opt.tol, rtol = opt.tol;
  Vector k1 = g(y);
  double s = 0.0;
  double h;
  {
    const double yn = y.norm(), fn = k1.norm();
    h = (fn > 0 && yn > 0) ? 0.01 * std::max(yn, 1.0) / fn : 1e-3;
    h = std::clamp(h, 1e-6, 0.1);
    h = std::min(h, span);
  }
  long steps = 0;
  while (s < span) {
    if (++steps > opt.max_steps)
      throw IntegrationError(IntegrationError::Kind::StepUnderflow, dir * s,
                             "step budget exhausted");
    bool last = false;
    if (s + h >= span) {
      h = span - s;
      last = true;
    }
    Vector k2 = g(y + h * a21 * k1);
    Vector k3 = g(y + h * (a31 * k1 + a32 * k2));
    Vector k4 = g(y + h * (a41 * k1 + a42 * k2 + a43 * k3));
    Vector k5 = g(y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    Vector k6 = g(y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    Vector y_new = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    Vector k7 = g(y_new);
    Vector err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    double en = 0.0;
    for (int i = 0; i < y.size(); ++i) {
      const double sc = atol + rtol * std::max(std::abs(y[i]), std::abs(y_new[i]));
      en += (err[i] / sc) * (err[i] / sc);
    }
    en = std::sqrt(en / static_cast<double>(y.size()));
    if (!std::isfinite(en)) en = 1e10;
    if (en <= 1.0) {
      s = last ? span : s + h;
      y = std::move(y_new);
      k1 = std::move(k7);
      check(y, s);
      const double fac = en == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 5.0);
      h *= fac;
    } else {
      h *= std::clamp(0.9 * std::pow(en, -0.2), 0.1, 1.0);
    }
    if (s < span && h < opt.min_step * std::max(1.0, span))
      throw IntegrationError(IntegrationError::Kind::StepUnderflow, dir * s,
                             "step size underflow at t=" + std::to_string(dir * s));
  }
  return y;
}

}  // namespace detail

inline void check_start(const VectorFieldSpec& spec, const Vector& x0, double tol) {
  if (x0.size() != spec.dimension)
    throw PreconditionError("initial point has dimension " + std::to_string(x0.size()) +
                            ", field has " + std::to_string(spec.dimension));
  if (!x0.allFinite()) throw PreconditionError("initial point is not finite");
  if (!(tol > 0)) throw PreconditionError("integration tolerance must be positive");
}

/// phi_t(x0); negative t integrates -X.
inline Vector flow(const VectorFieldSpec& spec, const Vector& x0, double t,
                   IntegratorOptions opt = {}) {
  check_start(spec, x0, opt.tol);
  auto f = [&spec](const Vector& y) -> Vector { return spec.rhs(y); };
  return detail::integrate(f, x0, t, opt, spec.dimension);
}

inline Vector flow(const VectorFieldSpec& spec, const Vector& x0, double t, double tol) {
  IntegratorOptions opt;
  opt.tol = tol;
  return flow(spec, x0, t, opt);
}

/// (phi_t(x0), D phi_t(x0)) from the joint variational system M' = J M.
inline std::pair<Vector, Matrix> tangent_flow(const VectorFieldSpec& spec, const Vector& x0,
                                              double t, IntegratorOptions opt = {}) {
  check_start(spec, x0, opt.tol);
  const int d = spec.dimension;
  Vector y(d + d * d);
  y.head(d) = x0;
  Eigen::Map<Matrix>(y.data() + d, d, d).setIdentity();
  if (t == 0.0) return {x0, Matrix::Identity(d, d)};
  auto f = [&spec, d](const Vector& z) -> Vector {
    Vector out(z.size());
    const Vector x = z.head(d);
    out.head(d) = spec.rhs(x);
    Eigen::Map<const Matrix> m(z.data() + d, d, d);
    Eigen::Map<Matrix>(out.data() + d, d, d) = spec.jacobian(x) * m;
    return out;
  };
  Vector r = detail::integrate(f, y, t, opt, d);
  return {r.head(d), Eigen::Map<const Matrix>(r.data() + d, d, d)};
}

inline std::pair<Vector, Matrix> tangent_flow(const VectorFieldSpec& spec, const Vector& x0,
                                              double t, double tol) {
  IntegratorOptions opt;
  opt.tol = tol;
  return tangent_flow(spec, x0, t, opt);
}

// ---------------------------------------------------------------------------
// Orbit segments

struct OrbitSegment {
  std::vector<double> times;
  std::vector<Vector> states;
  /// steps[k] = D phi over [t_k, t_{k+1}] started at states[k].
  std::vector<Matrix> steps;
  /// fundamentals[i] = D phi_{t_i}(x_0) in factored form.
  std::vector<FactoredMatrix> fundamentals;
  double tol = 0.0;

  std::size_t size() const { return states.size(); }
  int dimension() const { return states.empty() ? 0 : static_cast<int>(states.front().size()); }
  double dt() const { return times.size() > 1 ? times[1] - times[0] : 0.0; }
  double duration() const { return times.empty() ? 0.0 : times.back(); }

  Matrix fundamental(std::size_t i) const { return fundamentals.at(i).value(); }

  /// D phi over [t_i, t_j], i <= j, as a plain product.
  Matrix window(std::size_t i, std::size_t j) const {
    Matrix m = Matrix::Identity(dimension(), dimension());
    for (std::size_t k = i; k < j; ++k) m = steps[k] * m;
    return m;
  }
};

inline OrbitSegment sample_orbit(const VectorFieldSpec& spec, const Vector& x0, double t_total,
                                 double dt, IntegratorOptions opt = {}) {
  if (!(dt > 0)) throw PreconditionError("sample_orbit: dt must be positive");
  if (t_total < dt * (1.0 - 1e-12))
    throw PreconditionError("sample_orbit: t_total must be at least dt");
  check_start(spec, x0, opt.tol);
  const auto n = static_cast<std::size_t>(std::floor(t_total / dt + 1e-9));
  OrbitSegment orbit;
  orbit.tol = opt.tol;
  orbit.times.reserve(n + 1);
  orbit.states.reserve(n + 1);
  orbit.steps.reserve(n);
  orbit.fundamentals.reserve(n + 1);
  orbit.times.push_back(0.0);
  orbit.states.push_back(x0);
  FactoredMatrix acc = factored_frame(Matrix::Identity(spec.dimension, spec.dimension));
  orbit.fundamentals.push_back(acc);
  for (std::size_t k = 0; k < n; ++k) {
    const double t_next = (k + 1 == n && std::abs(n * dt - t_total) < 1e-9 * t_total)
                              ? t_total
                              : static_cast<double>(k + 1) * dt;
    const double h = t_next - orbit.times.back();
    try {
      auto [x, m] = tangent_flow(spec, orbit.states.back(), h, opt);
      acc.left_multiply(m);
      orbit.times.push_back(t_next);
      orbit.states.push_back(std::move(x));
      orbit.steps.push_back(std::move(m));
      orbit.fundamentals.push_back(acc);
    } catch (const IntegrationError& e) {
      throw IntegrationError(e.kind(), orbit.times.back() + e.time(), e.what());
    }
  }
  return orbit;
}

}  // namespace singhyp
