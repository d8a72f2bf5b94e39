#pragma once

// Box covering of a region and the epsilon-pseudo-orbit graph on boxes.
// Strongly connected components with a cycle approximate chain-recurrence
// classes from outside.

#include "singhyp/dynamics.hpp"
#include "singhyp/parallel.hpp"
#include "singhyp/singularity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace singhyp {

struct BoxGraph {
  Box region;
  std::vector<int> resolution;
  double epsilon = 0.0;
  double t_edge = 0.0;
  int samples_per_box = 0;
  /// adjacency[b] = sorted distinct targets of b.
  std::vector<std::vector<std::size_t>> adjacency;
  /// Samples lost to blow-up or integration failure.
  std::size_t dropped = 0;
  /// Flow times of the edge grid.
  std::vector<double> times;
  /// images[b][s * times.size() + k]: sample s of box b at times[k]; a
  /// dropped sample leaves its slots empty.
  std::vector<std::vector<Vector>> images;
  /// Boxes containing a zero of X.
  std::vector<char> holds_zero;

  std::size_t size() const { return adjacency.size(); }
  int dimension() const { return region.dimension(); }

  Vector side() const {
    Vector s = region.hi - region.lo;
    for (int i = 0; i < s.size(); ++i) s[i] /= resolution[static_cast<std::size_t>(i)];
    return s;
  }
  double box_diameter() const { return side().norm(); }

  std::vector<int> multi_index(std::size_t b) const {
    std::vector<int> m(resolution.size());
    for (std::size_t i = 0; i < resolution.size(); ++i) {
      m[i] = static_cast<int>(b % static_cast<std::size_t>(resolution[i]));
      b /= static_cast<std::size_t>(resolution[i]);
    }
    return m;
  }
  std::size_t flat_index(const std::vector<int>& m) const {
    std::size_t b = 0;
    for (std::size_t i = resolution.size(); i-- > 0;)
      b = b * static_cast<std::size_t>(resolution[i]) + static_cast<std::size_t>(m[i]);
    return b;
  }

  Box box(std::size_t b) const {
    const auto m = multi_index(b);
    const Vector s = side();
    Box out{region.lo, region.lo};
    for (int i = 0; i < s.size(); ++i) {
      out.lo[i] = region.lo[i] + m[static_cast<std::size_t>(i)] * s[i];
      out.hi[i] = out.lo[i] + s[i];
    }
    return out;
  }
  Vector center(std::size_t b) const { return box(b).center(); }

  /// Box containing x (faces go to the upper box, the top face to the last
  /// box); npos outside the region.
  std::size_t locate(const Vector& x) const {
    if (!region.contains(x)) return npos;
    const Vector s = side();
    std::vector<int> m(resolution.size());
    for (std::size_t i = 0; i < resolution.size(); ++i) {
      const auto k = static_cast<int>(std::floor((x[static_cast<Eigen::Index>(i)] - region.lo[static_cast<Eigen::Index>(i)]) /
                                                 s[static_cast<Eigen::Index>(i)]));
      m[i] = std::clamp(k, 0, resolution[i] - 1);
    }
    return flat_index(m);
  }

  bool has_edge(std::size_t a, std::size_t b) const {
    return std::binary_search(adjacency[a].begin(), adjacency[a].end(), b);
  }
  std::size_t edge_count() const {
    std::size_t n = 0;
    for (const auto& a : adjacency) n += a.size();
    return n;
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

struct BoxGraphOptions {
  /// 0 selects 1.5 box diameters.
  double epsilon = 0.0;
  double t_edge = 2.0;
  /// Seeded uniform points per box on top of corners and center.
  int jitter = 2;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  double tol = 1e-8;
};

namespace detail {

inline double point_box_distance(const Vector& p, const Box& b) {
  double s = 0;
  for (int i = 0; i < p.size(); ++i) {
    const double e = std::max({b.lo[i] - p[i], 0.0, p[i] - b.hi[i]});
    s += e * e;
  }
  return std::sqrt(s);
}

// Boxes whose closure lies within eps of p.
inline void boxes_near(const BoxGraph& g, const Vector& p, double eps, std::vector<std::size_t>& out) {
  const int d = g.dimension();
  const Vector s = g.side();
  std::vector<int> lo(static_cast<std::size_t>(d)), hi(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) {
    const auto r = static_cast<std::size_t>(i);
    const double a = std::floor((p[i] - eps - g.region.lo[i]) / s[i]);
    const double b = std::floor((p[i] + eps - g.region.lo[i]) / s[i]);
    if (b < 0 || a > g.resolution[r] - 1) return;
    lo[r] = static_cast<int>(std::max(a, 0.0));
    hi[r] = static_cast<int>(std::min(b, static_cast<double>(g.resolution[r] - 1)));
  }
  std::vector<int> m = lo;
  while (true) {
    const std::size_t b = g.flat_index(m);
    if (point_box_distance(p, g.box(b)) < eps) out.push_back(b);
    int i = 0;
    for (; i < d; ++i) {
      const auto r = static_cast<std::size_t>(i);
      if (++m[r] <= hi[r]) break;
      m[r] = lo[r];
    }
    if (i == d) break;
  }
}

inline std::vector<Vector> box_samples(const Box& b, int jitter, std::uint64_t seed, std::size_t index) {
  const int d = b.dimension();
  std::vector<Vector> pts;
  for (std::size_t c = 0; c < (std::size_t{1} << d); ++c) {
    Vector x(d);
    for (int i = 0; i < d; ++i) x[i] = (c >> i) & 1U ? b.hi[i] : b.lo[i];
    pts.push_back(x);
  }
  pts.push_back(b.center());
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int j = 0; j < jitter; ++j) {
    Vector x(d);
    for (int i = 0; i < d; ++i) x[i] = b.lo[i] + u(rng) * (b.hi[i] - b.lo[i]);
    pts.push_back(x);
  }
  return pts;
}

}  // namespace detail

/// Edge b1 -> b2 when a sample of b1 flowed for some t in {1, 1.5, ..., T_edge}
/// lands within epsilon of b2. Boxes holding a zero of X get a self-loop.
inline BoxGraph build_box_graph(const VectorFieldSpec& spec, const Box& region, std::vector<int> resolution,
                                const BoxGraphOptions& opt = {}) {
  const int d = spec.dimension;
  if (region.dimension() != d) throw PreconditionError("box graph: region dimension mismatch");
  if (resolution.size() == 1 && d > 1) resolution.assign(static_cast<std::size_t>(d), resolution[0]);
  if (static_cast<int>(resolution.size()) != d)
    throw PreconditionError("box graph: resolution needs one entry per axis");
  for (int r : resolution)
    if (r < 2) throw PreconditionError("box graph: resolution must be at least 2 per axis");
  if (!(opt.t_edge >= 1.0)) throw PreconditionError("box graph: T_edge must be at least 1");
  if (opt.jitter < 0) throw PreconditionError("box graph: jitter count must be non-negative");

  BoxGraph g;
  g.region = region;
  g.resolution = resolution;
  g.t_edge = opt.t_edge;
  const double diam = g.box_diameter();
  g.epsilon = opt.epsilon > 0 ? opt.epsilon : 1.5 * diam;
  if (g.epsilon < diam * (1 - 1e-12))
    throw PreconditionError("box graph: epsilon must be at least the box diameter");
  g.samples_per_box = (1 << d) + 1 + opt.jitter;

  std::size_t n = 1;
  for (int r : resolution) n *= static_cast<std::size_t>(r);
  g.adjacency.assign(n, {});
  g.images.assign(n, {});
  g.holds_zero.assign(n, 0);
  std::vector<std::size_t> lost(n, 0);

  for (double t = 1.0; t <= opt.t_edge + 1e-12; t += 0.5) g.times.push_back(t);
  const auto& times = g.times;

  IntegratorOptions io;
  io.tol = opt.tol;
  io.norm_guard = std::max(1e6, 1e3 * (region.diameter() + region.center().norm()));

  parallel_for(n, opt.threads, [&](std::size_t b) {
    std::vector<std::size_t> targets;
    auto& img = g.images[b];
    for (Vector x : detail::box_samples(g.box(b), opt.jitter, opt.seed, b)) {
      double now = 0.0;
      std::vector<Vector> path;
      try {
        for (double t : times) {
          x = flow(spec, x, t - now, io);
          now = t;
          path.push_back(x);
        }
      } catch (const IntegrationError&) {
        ++lost[b];
        path.clear();
      }
      // Edges only from samples that survive the whole grid.
      for (const auto& y : path) detail::boxes_near(g, y, g.epsilon, targets);
      if (path.empty()) path.resize(times.size());
      img.insert(img.end(), path.begin(), path.end());
    }
    std::sort(targets.begin(), targets.end());
    targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
    g.adjacency[b] = std::move(targets);
  });
  for (std::size_t l : lost) g.dropped += l;

  // Zeros are chain recurrent whatever the sampling saw.
  for (const auto& z : find_singularities(spec, region).zeros) {
    std::vector<std::size_t> holders;
    detail::boxes_near(g, z.location, 1e-12 * diam, holders);
    const std::size_t own = g.locate(z.location);
    if (own != BoxGraph::npos) holders.push_back(own);
    for (std::size_t b : holders) {
      g.holds_zero[b] = 1;
      auto& adj = g.adjacency[b];
      const auto it = std::lower_bound(adj.begin(), adj.end(), b);
      if (it == adj.end() || *it != b) adj.insert(it, b);
    }
  }
  return g;
}

namespace detail {

// A class of the flow is invariant, so a box class covering one holds a zero
// or a sample whose images stay within epsilon of the class over the whole
// time grid. Cycles without such a witness come from slow transient boxes
// moving less than epsilon per unit time.
inline bool has_invariance_witness(const BoxGraph& g, const std::vector<std::size_t>& comp) {
  std::vector<char> member(g.size(), 0);
  for (std::size_t b : comp) {
    if (g.holds_zero[b]) return true;
    member[b] = 1;
  }
  const std::size_t nt = g.times.size();
  std::vector<std::size_t> near;
  for (std::size_t b : comp) {
    const auto& img = g.images[b];
    for (std::size_t s = 0; s + nt <= img.size(); s += nt) {
      bool stays = img[s].size() > 0;
      for (std::size_t k = 0; k < nt && stays; ++k) {
        near.clear();
        boxes_near(g, img[s + k], g.epsilon, near);
        stays = std::any_of(near.begin(), near.end(), [&](std::size_t w) { return member[w] != 0; });
      }
      if (stays) return true;
    }
  }
  return false;
}

}  // namespace detail

/// Strongly connected components carrying a cycle and an invariance witness,
/// largest first, ties by smallest box. Each class is a sorted list of boxes.
inline std::vector<std::vector<std::size_t>> chain_classes(const BoxGraph& g) {
  const std::size_t n = g.size();
  constexpr std::size_t unseen = static_cast<std::size_t>(-1);
  std::vector<std::size_t> index(n, unseen), low(n, 0);
  std::vector<char> on_stack(n, 0);
  std::vector<std::size_t> stack;
  std::vector<std::vector<std::size_t>> out;
  std::size_t counter = 0;
  // Iterative Tarjan: frames of (vertex, next edge position).
  std::vector<std::pair<std::size_t, std::size_t>> call;
  for (std::size_t root = 0; root < n; ++root) {
    if (index[root] != unseen) continue;
    call.push_back({root, 0});
    index[root] = low[root] = counter++;
    stack.push_back(root);
    on_stack[root] = 1;
    while (!call.empty()) {
      auto& [v, pos] = call.back();
      const auto& adj = g.adjacency[v];
      if (pos < adj.size()) {
        const std::size_t w = adj[pos++];
        if (index[w] == unseen) {
          index[w] = low[w] = counter++;
          stack.push_back(w);
          on_stack[w] = 1;
          call.push_back({w, 0});
        } else if (on_stack[w]) {
          low[v] = std::min(low[v], index[w]);
        }
        continue;
      }
      const std::size_t done = v;
      call.pop_back();
      if (!call.empty()) low[call.back().first] = std::min(low[call.back().first], low[done]);
      if (low[done] != index[done]) continue;
      std::vector<std::size_t> comp;
      std::size_t w;
      do {
        w = stack.back();
        stack.pop_back();
        on_stack[w] = 0;
        comp.push_back(w);
      } while (w != done);
      if ((comp.size() > 1 || g.has_edge(done, done)) && detail::has_invariance_witness(g, comp)) {
        std::sort(comp.begin(), comp.end());
        out.push_back(std::move(comp));
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.size() != b.size()) return a.size() > b.size();
    return a.front() < b.front();
  });
  return out;
}

/// Lambda sample made of the box centers of a class and the zeros inside it.
inline LambdaSample class_lambda(const VectorFieldSpec& spec, const BoxGraph& g,
                                 const std::vector<std::size_t>& cls) {
  std::vector<Vector> centers;
  centers.reserve(cls.size());
  for (std::size_t b : cls) centers.push_back(g.center(b));
  std::vector<SingularityInfo> zeros;
  for (const auto& z : find_singularities(spec, g.region).zeros) {
    const bool inside = std::any_of(cls.begin(), cls.end(), [&](std::size_t b) {
      return detail::point_box_distance(z.location, g.box(b)) <= 1e-12 * g.box_diameter();
    });
    if (inside) zeros.push_back(z);
  }
  auto lam = lambda_from_points(std::move(centers), std::move(zeros), "box-class");
  lam.hausdorff_slack = 0.5 * g.box_diameter();
  return lam;
}

/// CSV of the class boxes: box,c0,...,c{d-1}.
inline void write_class_csv(std::ostream& os, const BoxGraph& g, const std::vector<std::size_t>& cls) {
  os << "box";
  for (int i = 0; i < g.dimension(); ++i) os << ",c" << i;
  os << '\n';
  const auto old = os.precision(17);
  for (std::size_t b : cls) {
    os << b;
    const Vector c = g.center(b);
    for (int i = 0; i < c.size(); ++i) os << ',' << c[i];
    os << '\n';
  }
  os.precision(old);
}

}  // namespace singhyp
