#include "singhyp/poincare.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <unsupported/Eigen/MatrixFunctions>

using namespace singhyp;

namespace {

Vector v3(double a, double b, double c) { return Eigen::Vector3d(a, b, c); }
Vector v2(double a, double b) { return Eigen::Vector2d(a, b); }

VectorFieldSpec diag_field() {
  Matrix a = v3(-2, -1, 1).asDiagonal();
  return linear_field(a);
}

Vector e(int i, int d = 3) {
  Vector v = Vector::Zero(d);
  v[i] = 1.0;
  return v;
}

}  // namespace

TEST(NormalProject, DropsParallelPart) {
  EXPECT_TRUE(normal_project(v3(1, 1, 0), e(0)).isApprox(e(1)));
  EXPECT_EQ(normal_project(v3(3, 0, 0), e(0)).norm(), 0.0);
  EXPECT_EQ(normal_project(e(2), e(0)), e(2));
}

TEST(LineElementTest, SignConventionAndFieldLine) {
  auto l = LineElement::make(Vector::Zero(3), v3(0, -2, 1));
  EXPECT_NEAR(l.direction.norm(), 1.0, 1e-12);
  EXPECT_GT(l.direction[1], 0.0);
  EXPECT_EQ(l, LineElement::make(Vector::Zero(3), v3(0, 2, -1)));

  auto spec = builtin("lorenz", default_params("lorenz"));
  Vector x = v3(1, 1, 1);
  auto fl = field_line(spec, x);
  Vector f = spec(x).normalized();
  EXPECT_NEAR(std::abs(fl.direction.dot(f)), 1.0, 1e-12);
  EXPECT_THROW(field_line(spec, Vector::Zero(3)), DegenerateNormalError);
  EXPECT_THROW(LineElement::make(x, Vector::Zero(3)), PreconditionError);
}

TEST(NormalVectorTest, RejectsNonOrthogonal) {
  auto l = LineElement::make(Vector::Zero(3), e(0));
  EXPECT_NO_THROW(NormalVector(l, e(1)));
  EXPECT_THROW(NormalVector(l, v3(1e-3, 1, 0)), PreconditionError);
}

TEST(Psi, DiagonalFieldOnAxis) {
  auto spec = diag_field();
  Vector x = e(0);
  EXPECT_TRUE(psi(spec, x, 1.0, e(1)).isApprox(std::exp(-1.0) * e(1), 1e-9));
  EXPECT_TRUE(psi(spec, x, 1.0, e(2)).isApprox(std::exp(1.0) * e(2), 1e-9));
}

TEST(Psi, RotationIsIsometric) {
  auto spec = builtin("rotation2d");
  Vector x = v2(1, 0);
  // X(1,0) = (0,1); normal vectors are multiples of e1.
  Vector v = v2(0.7, 0.0);
  for (double t : {0.3, 1.0, 2.5, -1.2}) EXPECT_NEAR(psi(spec, x, t, v).norm(), 0.7, 1e-9);
}

TEST(Psi, Errors) {
  auto spec = diag_field();
  EXPECT_THROW(psi(spec, Vector::Zero(3), 1.0, e(1)), DegenerateNormalError);
  EXPECT_THROW(psi(spec, e(0), 1.0, e(0)), PreconditionError);
}

TEST(PsiHat, LineAtSingularity) {
  auto spec = diag_field();
  auto l = LineElement::make(Vector::Zero(3), e(0));
  auto [l1, w] = psi_hat(spec, l, 1.0, e(1));
  EXPECT_TRUE(l1.direction.isApprox(e(0), 1e-12));
  EXPECT_TRUE(w.isApprox(std::exp(-1.0) * e(1), 1e-9));

  auto [l0, w0] = psi_hat(spec, l, 0.0, e(2));
  EXPECT_EQ(l0, l);
  EXPECT_EQ(w0, e(2));
}

TEST(PsiHat, ReducesToPsiOnRegularOrbits) {
  auto spec = builtin("lorenz", default_params("lorenz"));
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int probe = 0; probe < 5; ++probe) {
    Vector x = v3(5 * u(rng), 5 * u(rng), 20 + 5 * u(rng));
    Vector v = normal_project(v3(u(rng), u(rng), u(rng)), spec(x).normalized());
    auto l = field_line(spec, x);
    const double t = 0.4;
    Vector a = psi(spec, x, t, v);
    auto [l1, b] = psi_hat(spec, l, t, v);
    EXPECT_LE((a - b).norm(), 1e-9 * std::max(1.0, a.norm()));
    Vector f = spec(flow(spec, x, t)).normalized();
    EXPECT_NEAR(std::abs(l1.direction.dot(f)), 1.0, 1e-9);
  }
}

TEST(LogDerivative, ClosedForms) {
  auto d = diag_field();
  EXPECT_DOUBLE_EQ(log_derivative(d, LineElement::make(v3(4, 5, 6), e(0))), -2.0);
  auto r = builtin("rotation2d");
  EXPECT_NEAR(log_derivative(r, LineElement::make(v2(1, 2), v2(3, 1))),
              0.0, 1e-15);
  auto lz = builtin("lorenz", default_params("lorenz"));
  EXPECT_DOUBLE_EQ(log_derivative(lz, LineElement::make(Vector::Zero(3), e(2))), -8.0 / 3.0);
}

TEST(PoincareProperties, CocycleOrthogonalityNormBound) {
  auto spec = builtin("lorenz", default_params("lorenz"));
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1, 1);
  Vector x0 = flow(spec, v3(1, 1, 1), 5.0);
  for (int probe = 0; probe < 6; ++probe) {
    Vector x = flow(spec, x0, 0.37 * probe);
    Vector v = normal_project(v3(u(rng), u(rng), u(rng)), spec(x).normalized());
    const double s = 0.2, t = 0.3;
    Vector whole = psi(spec, x, s + t, v);
    Vector part = psi(spec, flow(spec, x, s), t, psi(spec, x, s, v));
    EXPECT_LE((whole - part).norm(), 1e-6 * v.norm());

    Vector xt = flow(spec, x, s + t);
    Vector f = spec(xt);
    EXPECT_LE(std::abs(whole.dot(f)), 1e-8 * whole.norm() * f.norm());

    auto [y, m] = tangent_flow(spec, x, s + t);
    EXPECT_LE(whole.norm(), (m * v).norm() * (1 + 1e-12));
  }
}

TEST(PoincareProperties, GeneratorMatchesLogDerivative) {
  auto spec = builtin("lorenz", default_params("lorenz"));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  const double h = 1e-4;
  for (int probe = 0; probe < 8; ++probe) {
    Vector x = v3(10 * u(rng), 10 * u(rng), 25 + 10 * u(rng));
    auto l = LineElement::make(x, v3(u(rng), u(rng), u(rng)));
    // Symmetric quotient: the one-sided one carries an O(h |J|^2) bias.
    auto [y1, fwd] = tangent_flow(spec, x, h);
    auto [y0, bwd] = tangent_flow(spec, x, -h);
    const double rate =
        (std::log((fwd * l.direction).norm()) - std::log((bwd * l.direction).norm())) / (2 * h);
    EXPECT_NEAR(rate, log_derivative(spec, l), 1e-3 * std::max(1.0, std::abs(rate)));
  }
}

TEST(CocycleTest, PoincareCocycleMatchesPsi) {
  auto spec = builtin("lorenz", default_params("lorenz"));
  Vector x0 = flow(spec, v3(1, 1, 1), 3.0);
  auto orbit = sample_orbit(spec, x0, 1.0, 0.01);
  auto c = poincare_cocycle(spec, orbit);
  ASSERT_EQ(c.fiber_dim(), 2);
  const std::size_t k1 = 60;
  Matrix frame = Matrix::Identity(2, 2);
  Matrix product = c.propagate(0, k1, frame).value();
  for (int j = 0; j < 2; ++j) {
    Vector v = c.bases[0].col(j);
    Vector expect = psi(spec, x0, c.times[k1], v);
    Vector got = c.bases[k1] * product.col(j);
    EXPECT_LE((expect - got).norm(), 1e-7 * std::max(1.0, expect.norm()));
  }
  // Line growth along a regular orbit is the speed ratio.
  EXPECT_NEAR(c.log_line_growth[k1],
              std::log(spec(orbit.states[k1]).norm() / spec(x0).norm()), 1e-12);
  // Inverse propagation returns to the start.
  Matrix back = c.propagate(k1, 0, product).value();
  EXPECT_TRUE(back.isApprox(frame, 1e-8));
}

TEST(CocycleTest, ExtendedCocycleAtFixedPoint) {
  auto spec = diag_field();
  auto orbit = fixed_point_orbit(spec, Vector::Zero(3), 1.0, 0.1);
  auto c = extended_cocycle(orbit, e(0));
  EXPECT_NEAR(c.log_line_growth.back(), -2.0, 1e-9);
  Matrix p = c.ambient(orbit.size() - 1, c.propagate(0, orbit.size() - 1,
                                                     Matrix::Identity(2, 2)).value());
  Matrix start = c.bases[0];
  Matrix expect = v3(-2, -1, 1).asDiagonal();
  expect = (expect.exp() * start).eval();
  EXPECT_TRUE(p.isApprox(expect, 1e-9));
}
