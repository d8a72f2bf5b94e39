#include "singhyp/chain.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace singhyp;

namespace {

VectorFieldSpec drift() {
  VectorFieldSpec s;
  s.name = "drift";
  s.dimension = 2;
  s.rhs = [](const Vector&) -> Vector { return Vector::Unit(2, 0); };
  s.jacobian = [](const Vector&) -> Matrix { return Matrix::Zero(2, 2); };
  s.region = Box::cube(2, 1.0);
  return s;
}

bool overlaps(const Box& a, const Box& b) {
  for (int i = 0; i < a.dimension(); ++i)
    if (a.hi[i] < b.lo[i] || b.hi[i] < a.lo[i]) return false;
  return true;
}

Vector pt(double x, double y) {
  Vector v(2);
  v << x, y;
  return v;
}

bool class_holds(const BoxGraph& g, const std::vector<std::size_t>& cls, const Vector& x) {
  return std::any_of(cls.begin(), cls.end(), [&](std::size_t b) { return g.box(b).contains(x); });
}

}  // namespace

TEST(BoxGraph, IndexingRoundTrips) {
  const auto spec = builtin("rotation2d");
  BoxGraphOptions o;
  o.t_edge = 1.0;
  o.jitter = 0;
  const auto g = build_box_graph(spec, Box::cube(2, 2.0), {4, 3}, o);
  ASSERT_EQ(g.size(), 12u);
  for (std::size_t b = 0; b < g.size(); ++b) {
    EXPECT_EQ(g.flat_index(g.multi_index(b)), b);
    EXPECT_EQ(g.locate(g.center(b)), b);
  }
  EXPECT_EQ(g.locate(pt(5, 0)), BoxGraph::npos);
  EXPECT_NEAR(g.epsilon, 1.5 * std::hypot(1.0, 4.0 / 3.0), 1e-12);
}

TEST(BoxGraph, RejectsBadArguments) {
  const auto spec = builtin("rotation2d");
  EXPECT_THROW(build_box_graph(spec, Box::cube(2, 2.0), {1, 4}), PreconditionError);
  BoxGraphOptions o;
  o.epsilon = 0.1;
  EXPECT_THROW(build_box_graph(spec, Box::cube(2, 2.0), {4}, o), PreconditionError);
  o.epsilon = 0;
  o.t_edge = 0.5;
  EXPECT_THROW(build_box_graph(spec, Box::cube(2, 2.0), {4}, o), PreconditionError);
}

TEST(BoxGraph, DeterministicAcrossThreadCounts) {
  const auto spec = builtin("cubic1d-product");
  BoxGraphOptions o;
  o.seed = 11;
  const auto a = build_box_graph(spec, spec.region, {16}, o);
  o.threads = 3;
  const auto b = build_box_graph(spec, spec.region, {16}, o);
  EXPECT_EQ(a.adjacency, b.adjacency);
  o.seed = 12;
  const auto c = build_box_graph(spec, spec.region, {16}, o);
  EXPECT_EQ(chain_classes(a), chain_classes(c));
}

TEST(BoxGraph, ZeroBoxesCarrySelfLoops) {
  const auto spec = builtin("cubic1d-product");
  const auto g = build_box_graph(spec, spec.region, {8});
  for (double x : {-1.0, 0.0, 1.0}) {
    const std::size_t b = g.locate(pt(x, 0.0));
    EXPECT_TRUE(g.has_edge(b, b)) << x;
  }
}

// Rotation by 2*pi: a box away from the origin returns to itself only once
// the time grid reaches the period.
TEST(BoxGraph, RotationReturnsAfterOnePeriod) {
  const auto spec = builtin("rotation2d");
  BoxGraphOptions o;
  const double side = 4.0 / 32;
  o.epsilon = 2 * std::sqrt(2.0) * side;
  o.t_edge = 2.0;
  const auto short_g = build_box_graph(spec, Box::cube(2, 2.0), {32}, o);
  const std::size_t b = short_g.locate(pt(1.5, 0.01));
  EXPECT_FALSE(short_g.has_edge(b, b));
  o.t_edge = 6.5;
  const auto long_g = build_box_graph(spec, Box::cube(2, 2.0), {32}, o);
  EXPECT_TRUE(long_g.has_edge(b, b));
}

// x-dynamics flows from 0 toward +-1; nothing near (1,0) reaches (-1,0).
TEST(BoxGraph, ProductFieldHasNoCrossEdges) {
  const auto spec = builtin("cubic1d-product");
  const auto g = build_box_graph(spec, spec.region, {64});
  for (std::size_t a = 0; a < g.size(); ++a) {
    if ((g.center(a) - pt(1, 0)).norm() > 0.3) continue;
    for (std::size_t b : g.adjacency[a]) EXPECT_GT(g.center(b)[0], 0.3);
  }
}

TEST(ChainClasses, ProductFieldHasThreeClasses) {
  const auto spec = builtin("cubic1d-product");
  std::vector<std::vector<std::size_t>> coarse;
  BoxGraph coarse_g;
  for (int res : {64, 128}) {
    const auto g = build_box_graph(spec, spec.region, {res});
    const auto classes = chain_classes(g);
    ASSERT_EQ(classes.size(), 3u) << res;
    for (double x : {-1.0, 0.0, 1.0}) {
      const auto n = std::count_if(classes.begin(), classes.end(),
                                   [&](const auto& c) { return class_holds(g, c, pt(x, 0)); });
      EXPECT_EQ(n, 1) << res << " " << x;
    }
    if (res == 64) {
      coarse = classes;
      coarse_g = g;
      continue;
    }
    // Every fine class meets some coarse class.
    for (const auto& fc : classes) {
      bool met = false;
      for (const auto& cc : coarse)
        for (std::size_t f : fc)
          for (std::size_t c : cc) met = met || overlaps(g.box(f), coarse_g.box(c));
      EXPECT_TRUE(met);
    }
    std::size_t fine_boxes = 0, coarse_boxes = 0;
    for (const auto& c : classes) fine_boxes += c.size();
    for (const auto& c : coarse) coarse_boxes += c.size();
    EXPECT_LE(fine_boxes, 4 * coarse_boxes);
  }
}

TEST(ChainClasses, HyperbolicLinearHasOnlyOrigin) {
  Matrix a = Matrix::Zero(3, 3);
  a.diagonal() << -2, -1, 1;
  const auto spec = linear_field(a);
  const auto g = build_box_graph(spec, Box::cube(3, 1.0), {8});
  const auto classes = chain_classes(g);
  ASSERT_EQ(classes.size(), 1u);
  EXPECT_TRUE(class_holds(g, classes[0], Vector::Zero(3)));
  EXPECT_LT(classes[0].size(), g.size() / 2);
}

TEST(ChainClasses, DriftHasNone) {
  const auto spec = drift();
  const auto g = build_box_graph(spec, spec.region, {8});
  EXPECT_GT(g.edge_count(), 0u);
  EXPECT_TRUE(chain_classes(g).empty());
}

// Edges out of a class either stay in it or never come back: the class is a
// whole SCC.
TEST(ChainClasses, ClassesAreClosedUnderReturn) {
  const auto spec = builtin("cubic1d-product");
  const auto g = build_box_graph(spec, spec.region, {32});
  const auto classes = chain_classes(g);
  std::vector<int> owner(g.size(), -1);
  for (std::size_t k = 0; k < classes.size(); ++k)
    for (std::size_t b : classes[k]) owner[b] = static_cast<int>(k);
  // Forward reachability from each class.
  for (std::size_t k = 0; k < classes.size(); ++k) {
    std::vector<char> seen(g.size(), 0);
    std::vector<std::size_t> todo;
    for (std::size_t b : classes[k]) {
      for (std::size_t w : g.adjacency[b])
        if (owner[w] != static_cast<int>(k) && !seen[w]) seen[w] = 1, todo.push_back(w);
    }
    while (!todo.empty()) {
      const std::size_t v = todo.back();
      todo.pop_back();
      EXPECT_NE(owner[v], static_cast<int>(k));
      for (std::size_t w : g.adjacency[v])
        if (!seen[w]) seen[w] = 1, todo.push_back(w);
    }
  }
}

TEST(ChainClasses, ClassLambdaAndCsv) {
  const auto spec = builtin("cubic1d-product");
  const auto g = build_box_graph(spec, spec.region, {32});
  const auto classes = chain_classes(g);
  ASSERT_EQ(classes.size(), 3u);
  for (const auto& c : classes) {
    const auto lam = class_lambda(spec, g, c);
    EXPECT_EQ(lam.points.size(), c.size());
    EXPECT_EQ(lam.singularities.size(), 1u);
    EXPECT_EQ(lam.provenance, "box-class");
  }
  std::ostringstream os;
  write_class_csv(os, g, classes[0]);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "box,c0,c1");
  std::size_t rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, classes[0].size());
}
