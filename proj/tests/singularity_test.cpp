#include "singhyp/singularity.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <unsupported/Eigen/MatrixFunctions>

using namespace singhyp;

namespace {

Vector v3(double a, double b, double c) { return Eigen::Vector3d(a, b, c); }

VectorFieldSpec diag(double a, double b, double c) {
  Matrix m = v3(a, b, c).asDiagonal();
  return linear_field(m);
}

VectorFieldSpec lorenz() { return builtin("lorenz", default_params("lorenz")); }

// Roots of the characteristic polynomial via the companion matrix; the
// coefficients come from Faddeev-LeVerrier, independent of EigenSolver on J.
std::vector<Complex> companion_roots(const Matrix& a) {
  const Eigen::Index n = a.rows();
  std::vector<double> c(static_cast<std::size_t>(n + 1), 0.0);
  c[static_cast<std::size_t>(n)] = 1.0;
  Matrix m = Matrix::Zero(n, n);
  for (Eigen::Index k = 1; k <= n; ++k) {
    m = a * m + c[static_cast<std::size_t>(n - k + 1)] * Matrix::Identity(n, n);
    c[static_cast<std::size_t>(n - k)] = -(a * m).trace() / static_cast<double>(k);
  }
  Matrix comp = Matrix::Zero(n, n);
  for (Eigen::Index i = 1; i < n; ++i) comp(i, i - 1) = 1.0;
  for (Eigen::Index i = 0; i < n; ++i) comp(i, n - 1) = -c[static_cast<std::size_t>(i)];
  Eigen::EigenSolver<Matrix> es(comp, false);
  std::vector<Complex> out;
  for (Eigen::Index i = 0; i < n; ++i) out.push_back(es.eigenvalues()[i]);
  std::sort(out.begin(), out.end(), [](const Complex& x, const Complex& y) {
    return x.real() != y.real() ? x.real() < y.real() : x.imag() < y.imag();
  });
  return out;
}

LambdaSample axis_orbit_lambda(const VectorFieldSpec& spec, const SingularityInfo& s) {
  auto orbit = sample_orbit(spec, v3(0, 0, 0.01), 4.0, 0.01);
  return lambda_from_points(orbit.states, {s}, "x3-axis orbit");
}

}  // namespace

TEST(FindSingularities, LorenzThreeZeros) {
  auto res = find_singularities(lorenz(), lorenz().region);
  ASSERT_EQ(res.zeros.size(), 3u);
  const double a = std::sqrt(72.0);
  std::vector<Vector> expected{v3(-a, -a, 27), v3(0, 0, 0), v3(a, a, 27)};
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_LT((res.zeros[i].location - expected[i]).norm(), 1e-8) << i;
}

TEST(FindSingularities, LinearAndRotation) {
  auto res = find_singularities(diag(-2, -1, 1), Box::cube(3, 1.0));
  ASSERT_EQ(res.zeros.size(), 1u);
  EXPECT_LT(res.zeros[0].location.norm(), 1e-12);

  auto rot = builtin("rotation2d", default_params("rotation2d"));
  Vector lo(2), hi(2);
  lo << 0.5, 0.5;
  hi << 1.5, 1.5;
  EXPECT_TRUE(find_singularities(rot, Box{lo, hi}).zeros.empty());
}

TEST(Classify, LorenzOrigin) {
  auto s = classify_singularity(lorenz(), Vector::Zero(3));
  const double r = std::sqrt(1201.0);
  ASSERT_EQ(s.eigenvalues.size(), 3u);
  EXPECT_NEAR(s.eigenvalues[0].real(), (-11 - r) / 2, 1e-10);
  EXPECT_NEAR(s.eigenvalues[1].real(), -8.0 / 3, 1e-10);
  EXPECT_NEAR(s.eigenvalues[2].real(), (-11 + r) / 2, 1e-10);
  EXPECT_TRUE(s.hyperbolic);
  EXPECT_EQ(s.index, 2);
  EXPECT_TRUE(s.lorenz_like);
  EXPECT_EQ(s.lorenz_case, LorenzCase::Stable);
  EXPECT_EQ(s.dim_ss, 1);
  EXPECT_EQ(s.dim_c, 1);
  EXPECT_EQ(s.dim_uu, 1);
  EXPECT_NEAR(s.lambda_s + s.lambda_u, -8.0 / 3 + (-11 + r) / 2, 1e-10);
  EXPECT_NEAR(std::log(s.rho_ss), (-11 - r) / 2, 1e-10);
  EXPECT_NEAR(std::log(s.rho_uu), -(-11 + r) / 2, 1e-10);
  EXPECT_NEAR(std::log(s.rho_c), -8.0 / 3, 1e-10);
  EXPECT_LT(std::max(s.rho_ss, s.rho_uu), std::min(s.rho_c, 1 / s.rho_c));
  // E^c is the z-axis.
  EXPECT_NEAR(std::abs(s.blocks[1].frame(2, 0)), 1.0, 1e-12);
}

TEST(Classify, DiagonalExamples) {
  auto a = classify_singularity(diag(-3, -1, 2), Vector::Zero(3));
  EXPECT_TRUE(a.lorenz_like);
  EXPECT_NEAR(std::abs(a.blocks[0].frame(0, 0)), 1.0, 1e-12);

  auto b = classify_singularity(diag(-1, -1, 1), Vector::Zero(3));
  EXPECT_FALSE(b.lorenz_like);
  EXPECT_EQ(b.blocks.size(), 2u);
  EXPECT_EQ(b.blocks[0].dim(), 2);
  EXPECT_TRUE(b.merged_blocks);
}

TEST(Classify, NonHyperbolicIsNotAnError) {
  auto s = classify_singularity(diag(-1, 0, 1), Vector::Zero(3));
  EXPECT_FALSE(s.hyperbolic);
  EXPECT_FALSE(s.lorenz_like);
  EXPECT_THROW(classify_singularity(lorenz(), v3(1, 1, 1)), PreconditionError);
}

TEST(Classify, IndexCountAndBlockInvariance) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    Matrix a(4, 4);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) a(i, j) = g(rng);
    auto s = classify_singularity(linear_field(a, Box::cube(4, 1.0)), Vector::Zero(4));
    if (!s.hyperbolic) continue;
    int pos = 0;
    for (const auto& z : s.eigenvalues) pos += z.real() > 0;
    EXPECT_EQ(s.index + pos, 4);
    for (const auto& b : s.blocks) {
      const Matrix& f = b.frame;
      EXPECT_LT((a * f - f * (f.transpose() * a * f)).norm(), 1e-8);
    }
  }
}

TEST(Classify, CompanionMatrixCrossCheck) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    Matrix a(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) a(i, j) = g(rng);
    auto s = classify_singularity(linear_field(a), Vector::Zero(3));
    auto roots = companion_roots(a);
    for (std::size_t i = 0; i < 3; ++i)
      EXPECT_LT(std::abs(s.eigenvalues[i] - roots[i]), 1e-10 * std::max(1.0, std::abs(roots[i])));
  }
  auto s = classify_singularity(lorenz(), Vector::Zero(3));
  auto roots = companion_roots(s.jacobian);
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_LT(std::abs(s.eigenvalues[i] - roots[i]), 1e-10 * std::abs(roots[i]));
}

TEST(Classify, ScalingAndReversal) {
  auto base = lorenz();
  auto s = classify_singularity(base, Vector::Zero(3));
  for (double c : {0.5, 2.0}) {
    auto sc = classify_singularity(scaled(base, c), Vector::Zero(3));
    EXPECT_EQ(sc.lorenz_like, s.lorenz_like);
    EXPECT_EQ(sc.lorenz_case, s.lorenz_case);
  }
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  int lorenz_like = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Vector d(4);
    for (int i = 0; i < 4; ++i) {
      do d[i] = u(rng);
      while (std::abs(d[i]) < 0.1);
    }
    Matrix a = d.asDiagonal();
    auto f = classify_singularity(linear_field(a, Box::cube(4, 1.0)), Vector::Zero(4));
    auto r = classify_singularity(scaled(linear_field(a, Box::cube(4, 1.0)), -1.0), Vector::Zero(4));
    EXPECT_EQ(f.lorenz_like, r.lorenz_like) << d.transpose();
    if (f.lorenz_like) {
      ++lorenz_like;
      EXPECT_NE(f.lorenz_case, r.lorenz_case);
      EXPECT_NE(r.lorenz_case, LorenzCase::None);
    }
    for (double c : {0.5, 2.0}) {
      auto sc = classify_singularity(scaled(linear_field(a, Box::cube(4, 1.0)), c), Vector::Zero(4));
      EXPECT_EQ(sc.lorenz_like, f.lorenz_like);
    }
  }
  EXPECT_GT(lorenz_like, 0);
}

TEST(Escape, DiagonalExamples) {
  auto spec = diag(-2, -1, 1);
  auto s = classify_singularity(spec, Vector::Zero(3));
  const Matrix ess = s.blocks[0].frame;

  auto lam = axis_orbit_lambda(spec, s);
  auto r = escape_test(spec, s, ess, ManifoldSide::Stable, lam);
  EXPECT_TRUE(r.escapes);
  EXPECT_GT(r.tube_samples, 10u);

  auto aug = lam;
  aug.points.push_back(v3(0.5, 0, 0));
  auto r2 = escape_test(spec, s, ess, ManifoldSide::Stable, aug);
  EXPECT_FALSE(r2.escapes);
  EXPECT_EQ(r2.hits, 1u);

  auto only = lambda_from_points({}, {s}, "sigma");
  EXPECT_TRUE(escape_test(spec, s, ess, ManifoldSide::Stable, only).escapes);

  // The unstable manifold of the origin is the x3-axis, which the orbit lies on.
  EXPECT_FALSE(escape_test(spec, s, s.unstable_frame(), ManifoldSide::Unstable, lam).escapes);
}

TEST(Escape, RejectsLargeDiskAndWrongSide) {
  // x' = -x + 3x^2, y' = y: the stable seed at x = 0.9 moves away from the zero.
  VectorFieldSpec spec;
  spec.name = "quadratic";
  spec.dimension = 2;
  spec.rhs = [](const Vector& x) -> Vector { return Eigen::Vector2d(-x[0] + 3 * x[0] * x[0], x[1]); };
  spec.jacobian = [](const Vector& x) -> Matrix {
    Matrix j(2, 2);
    j << -1 + 6 * x[0], 0, 0, 1;
    return j;
  };
  spec.region = Box::cube(2, 1.0);
  auto s = classify_singularity(spec, Vector::Zero(2));
  auto lam = lambda_from_points({}, {s});
  EscapeOptions opt;
  opt.disk_radius = 0.3;
  EXPECT_THROW(escape_test(spec, s, s.blocks[0].frame, ManifoldSide::Stable, lam, opt),
               PreconditionError);
  opt.disk_radius = 1e-4;
  EXPECT_NO_THROW(escape_test(spec, s, s.blocks[0].frame, ManifoldSide::Stable, lam, opt));
  EXPECT_THROW(escape_test(spec, s, s.blocks[1].frame, ManifoldSide::Stable, lam), PreconditionError);
}

TEST(CenterSpaceTest, DiagonalExamples) {
  auto spec = diag(-2, -1, 1);
  auto s = classify_singularity(spec, Vector::Zero(3));
  auto cs = center_space(spec, s, lambda_from_points({}, {s}));
  EXPECT_EQ(cs.center.cols(), 0);
  EXPECT_TRUE(cs.lines.empty());
  EXPECT_EQ(cs.escaping_stable.cols() + cs.escaping_unstable.cols(), 3);

  auto lam = lambda_from_points({v3(0.5, 0, 0)}, {s});
  auto cs2 = center_space(spec, s, lam);
  EXPECT_EQ(cs2.escaping_stable.cols(), 0);
  EXPECT_EQ(cs2.ss_blocks, 0u);
}

TEST(CenterSpaceTest, MonotoneUnderEnlargingLambda) {
  auto spec = diag(-2, -1, 1);
  auto s = classify_singularity(spec, Vector::Zero(3));
  std::vector<Vector> pts;
  auto cs = center_space(spec, s, lambda_from_points(pts, {s}));
  const std::vector<Vector> extra{v3(0, 0, 0.3), v3(0, 0.4, 0), v3(0.2, 0.2, 0.2), v3(0.5, 0, 0)};
  for (const auto& p : extra) {
    pts.push_back(p);
    auto next = center_space(spec, s, lambda_from_points(pts, {s}));
    EXPECT_LE(next.escaping_stable.cols(), cs.escaping_stable.cols());
    EXPECT_LE(next.escaping_unstable.cols(), cs.escaping_unstable.cols());
    EXPECT_GE(next.center.cols(), cs.center.cols());
    cs = next;
  }
  EXPECT_EQ(cs.center.cols(), 3);
}

TEST(CenterSpaceTest, LorenzAttractor) {
  auto spec = lorenz();
  auto zeros = find_singularities(spec, spec.region).zeros;
  const auto& origin = zeros[1];
  auto lam = lambda_from_unstable_branch(spec, origin, 1e-6, 100.0, 0.01, zeros, 0.1);
  ASSERT_EQ(lam.singularities.size(), 1u);
  const auto& s = lam.singularities[0];
  EXPECT_LT(s.location.norm(), 1e-12);
  auto cs = center_space(spec, s, lam);
  EXPECT_EQ(cs.escaping_stable.cols(), 1);
  EXPECT_EQ(cs.escaping_unstable.cols(), 0);
  EXPECT_EQ(cs.center.cols(), 2);
  EXPECT_EQ(cs.lines.size(), 16u);
  // J is not normal, so E^c + E^u is not the orthogonal complement of E^ss.
  const Matrix q = orthonormalize(s.block_frame(1, 3));
  for (const auto& l : cs.lines)
    EXPECT_LT((l.direction - q * (q.transpose() * l.direction)).norm(), 1e-10);
}

TEST(Renorm, BumpShape) {
  EXPECT_EQ(bump(0.5, 1, 2), 1.0);
  EXPECT_EQ(bump(2.5, 1, 2), 0.0);
  EXPECT_NEAR(bump(1.5, 1, 2), 0.5, 1e-15);
  EXPECT_GT(bump(1.2, 1, 2), bump(1.8, 1, 2));
}

TEST(Renorm, DiagonalPlateau) {
  auto spec = diag(-2, -1, 1);
  auto l = LineElement::make(v3(0.01, 0, 0), v3(1, 0, 0));
  for (double t : {0.5, 1.0, 2.0})
    EXPECT_NEAR(renorm_cocycle(spec, l, t, Vector::Zero(3), 0.1, 0.2), std::exp(-2 * t), 1e-10);
}

TEST(Renorm, OutsideBallIsOne) {
  auto spec = lorenz();
  auto l = field_line(spec, v3(8, 8, 27.5));
  EXPECT_DOUBLE_EQ(renorm_cocycle(spec, l, 0.3, Vector::Zero(3), 1.0, 2.0), 1.0);
}

TEST(Renorm, CocycleLawAndErrors) {
  auto spec = lorenz();
  auto orbit = sample_orbit(spec, v3(0.05, 0.02, 1.5), 3.0, 1e-3);
  auto c = extended_cocycle(orbit, v3(1, 2, 3));
  const Vector sigma = Vector::Zero(3);
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> pick(0, 1000);
  for (int probe = 0; probe < 10; ++probe) {
    const std::size_t a = pick(rng), b = a + pick(rng), e = b + pick(rng);
    const double whole = renorm_cocycle(spec, c, a, e, sigma, 1.0, 2.0);
    const double split = renorm_cocycle(spec, c, a, b, sigma, 1.0, 2.0) *
                         renorm_cocycle(spec, c, b, e, sigma, 1.0, 2.0);
    EXPECT_NEAR(std::log(whole), std::log(split), 1e-8);
  }
  EXPECT_THROW(renorm_cocycle(spec, c, 0, c.size(), sigma, 1.0, 2.0), PreconditionError);
  EXPECT_THROW(renorm_cocycle(spec, c, 0, 10, sigma, 2.0, 1.0), PreconditionError);
}

TEST(Renorm, MatchesLineGrowthInsidePlateau) {
  auto spec = lorenz();
  // Start near the origin; while the orbit stays in r_in the ratio is 1 up to quadrature.
  auto orbit = sample_orbit(spec, v3(1e-3, 1e-3, 0.5), 0.4, 1e-3);
  auto c = extended_cocycle(orbit, v3(0, 0, 1));
  auto log_h = renorm_log_cocycle(spec, c, Vector::Zero(3), 2.0, 4.0);
  for (std::size_t k = 0; k < c.size(); k += 50) {
    ASSERT_LT(c.states[k].norm(), 2.0);
    EXPECT_NEAR(log_h[k], c.log_line_growth[k], 1e-4);
  }
}
