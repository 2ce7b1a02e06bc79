#include "agmonlab/distance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <queue>
#include <utility>
#include <vector>

#include "agmonlab/rng.hpp"

namespace agmonlab {

namespace {

struct Move {
  Index di, dj, dk;
  double len;  // step length in units of h
};

std::vector<Move> moves_for(Neighborhood nb) {
  const int cap = nb == Neighborhood::kFaces ? 1 : nb == Neighborhood::kEdges ? 2 : 3;
  std::vector<Move> mv;
  for (Index a = -1; a <= 1; ++a)
    for (Index b = -1; b <= 1; ++b)
      for (Index c = -1; c <= 1; ++c) {
        const int taps = int(std::abs(a) + std::abs(b) + std::abs(c));
        if (taps == 0 || taps > cap) continue;
        mv.push_back({a, b, c, std::sqrt(double(a * a + b * b + c * c))});
      }
  return mv;
}

}  // namespace

DistanceField agmon_distance(const MaximalField& m_field, Index source,
                             const DistanceOptions& opts) {
  return agmon_distance(m_field, std::vector<Index>{source}, opts);
}

DistanceField agmon_distance(const MaximalField& m_field,
                             const std::vector<Index>& source,
                             const DistanceOptions& opts) {
  const Grid& g = m_field.m.grid;
  const Index n = g.size();
  if (source.empty()) throw EmptySource("agmon_distance: empty source set");
  for (Index s : source)
    if (s < 0 || s >= n)
      throw OutOfDomain("agmon_distance: source index outside the grid");
  const double uf = m_field.unconverged_fraction();
  if (uf > opts.unconverged_limit)
    throw UnconvergedMetric("agmon_distance: " + std::to_string(uf * 100.0) +
                            "% of metric points unconverged");

  DistanceField out;
  out.grid = g;
  out.source = source;
  out.neighborhood = opts.neighborhood;
  {
    Index soft = 0;
    for (Index i = 0; i < n; ++i)
      if (!m_field.trusted_at(i)) ++soft;
    out.low_confidence_fraction = n > 0 ? double(soft) / double(n) : 0.0;
  }

  const auto mv = moves_for(opts.neighborhood);
  const double h = g.spacing;
  const double inf = std::numeric_limits<double>::infinity();
  Eigen::VectorXd dist = Eigen::VectorXd::Constant(n, inf);
  std::vector<Index> pred(std::size_t(n), -1);
  std::vector<char> is_src(std::size_t(n), 0), done(std::size_t(n), 0);

  using QItem = std::pair<double, Index>;
  std::priority_queue<QItem, std::vector<QItem>, std::greater<QItem>> heap;
  for (Index s : source) {
    dist[s] = 0.0;
    is_src[std::size_t(s)] = 1;
    heap.push({0.0, s});
  }

  const double* m = m_field.m.values.data();
  while (!heap.empty()) {
    const auto [du, u] = heap.top();
    heap.pop();
    if (done[std::size_t(u)]) continue;  // stale heap entry
    done[std::size_t(u)] = 1;
    const auto [ui, uj, uk] = g.unpack(u);
    for (const Move& e : mv) {
      const Index vi = ui + e.di, vj = uj + e.dj, vk = uk + e.dk;
      if (!g.contains(vi, vj, vk)) continue;
      const Index v = g.index(vi, vj, vk);
      if (done[std::size_t(v)]) continue;
      const double cand = du + 0.5 * (m[u] + m[v]) * e.len * h;
      if (cand < dist[v]) {
        dist[v] = cand;
        pred[std::size_t(v)] = u;
        heap.push({cand, v});
      }
    }
  }

  // a non-source boundary node serving as a predecessor means some geodesic
  // travels along the wall (conservative: equal-length ties count too)
  for (Index v = 0; v < n && !out.boundary_hug; ++v) {
    const Index u = pred[std::size_t(v)];
    if (u >= 0 && !is_src[std::size_t(u)] && g.on_boundary(u)) out.boundary_hug = true;
  }

  out.d_values = ScalarField(g, std::move(dist));
  return out;
}

PropertyReport check_distance_lemmas(const DistanceField& d_field,
                                     const MaximalField& m_field,
                                     std::uint64_t rng_seed) {
  require_same_grid(d_field.grid, m_field.m.grid, "check_distance_lemmas");
  const Grid& g = d_field.grid;
  const Index n = g.size();
  PropertyReport rep;
  if (d_field.source.empty() || n == 0) return rep;

  Rng rng(rng_seed);
  const double* m = m_field.m.values.data();

  // the lemmas quantify over pairs, one shortest-path run per x; extra
  // sources sit at fixed box fractions so a refit on a finer grid probes
  // the same physical configuration instead of a reshuffled sample
  std::vector<Index> xs{d_field.source.front()};
  {
    const Eigen::Vector3d mid = 0.5 * (g.box_lo() + g.box_hi());
    const Eigen::Vector3d rad = 0.5 * (g.box_hi() - g.box_lo());
    for (int sx : {-1, 1})
      for (int sy : {-1, 1})
        for (int sz : {-1, 1}) {
          const Eigen::Vector3d p =
              mid + 0.55 * Eigen::Vector3d(sx * rad[0], sy * rad[1], sz * rad[2]);
          Index ijk[3];
          for (int ax = 0; ax < 3; ++ax) {
            const double t = (p[ax] - g.origin[ax]) / g.spacing;
            ijk[ax] = std::clamp(Index(std::llround(t)), Index(0), g.dims[ax] - 1);
          }
          const Index idx = g.index(ijk[0], ijk[1], ijk[2]);
          if (idx != xs.front()) xs.push_back(idx);
        }
  }
  DistanceOptions run_opts;
  run_opts.neighborhood = d_field.neighborhood;
  run_opts.unconverged_limit = 2.0;  // diagnostic: never re-gate the metric

  struct Pair {
    double msep, d;
  };
  std::vector<Pair> near, far, sep;
  auto thin = [&rng](std::vector<Pair>& pool, std::size_t cap) {
    if (pool.size() <= cap) return;
    for (std::size_t i = 0; i < cap; ++i) {  // partial Fisher-Yates
      const std::size_t j =
          i + std::size_t(rng.uniform_int(std::int64_t(pool.size() - i)));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(cap);
  };

  for (std::size_t si = 0; si < xs.size(); ++si) {
    const Index x = xs[si];
    const double* d =
        si == 0 ? d_field.d_values.values.data() : nullptr;
    DistanceField extra;
    if (!d) {
      extra = agmon_distance(m_field, x, run_opts);
      d = extra.d_values.values.data();
    }
    const Eigen::Vector3d px = g.point(x);
    const double mx = m[x];
    for (Index y = 0; y < n; ++y) {
      if (y == x || !std::isfinite(d[y])) continue;
      const double r = (g.point(y) - px).norm();
      const double ms = r * mx;
      if (ms <= 1.0) near.push_back({ms, d[y]});
      if (ms >= 2.0) far.push_back({ms, d[y]});
      if (r >= 2.0 / m[y]) sep.push_back({ms, d[y]});
    }
    // keep the pools from ballooning on big grids
    thin(near, 4096);
    thin(far, 8192);
    thin(sep, 4096);
  }
  thin(near, 512);
  thin(far, 2048);
  thin(sep, 512);

  {  // d stays finite (and modest) inside the metric ball |x-y| m(x) <= 1
    PropertyCheck c;
    c.name = "d_bounded";
    for (const Pair& p : near) c.worst = std::max(c.worst, p.d);
    c.n_samples = int(near.size());
    c.pass = std::isfinite(c.worst);
    rep.checks.push_back(c);
  }
  {  // lower-growth law: LS fit of log d against log(1 + |x-y| m(x))
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int k = 0;
    for (const Pair& p : far) {
      if (!(p.d > 0.0)) continue;
      const double lx = std::log(1.0 + p.msep);
      const double ly = std::log(p.d);
      sx += lx;
      sy += ly;
      sxx += lx * lx;
      sxy += lx * ly;
      ++k;
    }
    PropertyCheck ce, cc;
    ce.name = "growth_exponent";
    cc.name = "growth_constant";
    ce.n_samples = cc.n_samples = k;
    const double det = double(k) * sxx - sx * sx;
    if (k >= 2 && det > 0.0) {
      const double slope = (double(k) * sxy - sx * sy) / det;
      const double inter = (sy - slope * sx) / double(k);
      ce.worst = slope;
      cc.worst = std::exp(inter);
      ce.pass = std::isfinite(slope) && slope > 0.0;
      cc.pass = std::isfinite(cc.worst) && cc.worst > 0.0;
    } else {
      ce.pass = cc.pass = true;  // not enough spread: no evidence either way
    }
    rep.checks.push_back(ce);
    rep.checks.push_back(cc);
  }
  {  // separation: x outside B(y, 2/m(y)) keeps positive distance
    PropertyCheck c;
    c.name = "aprop_separation";
    c.worst = std::numeric_limits<double>::infinity();
    for (const Pair& p : sep) c.worst = std::min(c.worst, p.d);
    c.n_samples = int(sep.size());
    c.pass = sep.empty() || c.worst > 0.0;
    if (sep.empty()) c.worst = 0.0;
    rep.checks.push_back(c);
  }
  return rep;
}

std::vector<PairSample> pair_table(const DistanceField& d,
                                   const std::vector<Index>& targets) {
  const Grid& g = d.grid;
  const Index x = d.source.size() == 1 ? d.source.front() : -1;
  std::vector<PairSample> rows;
  rows.reserve(targets.size());
  for (Index y : targets) {
    if (y < 0 || y >= g.size())
      throw OutOfDomain("pair_table: target index outside the grid");
    PairSample s;
    s.x_idx = x;
    s.y_idx = y;
    double best = std::numeric_limits<double>::infinity();
    for (Index src : d.source)
      best = std::min(best, (g.point(y) - g.point(src)).norm());
    s.euclid = best;
    s.agmon_d = d.d_values.values[y];
    rows.push_back(s);
  }
  return rows;
}

void write_pair_csv(const std::string& path, const std::vector<PairSample>& rows) {
  std::ofstream out(path, std::ios::binary);  // binary: no CRLF surprises
  if (!out) throw IoError("write_pair_csv: cannot open " + path);
  out << "x_idx,y_idx,euclid,agmon_d\n" << std::setprecision(17);
  for (const auto& s : rows)
    out << s.x_idx << ',' << s.y_idx << ',' << s.euclid << ',' << s.agmon_d << '\n';
  if (!out) throw IoError("write_pair_csv: write failed: " + path);
}

}  // namespace agmonlab
