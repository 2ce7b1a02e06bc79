#include "agmonlab/weights.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <unordered_map>

#include "agmonlab/errors.hpp"
#include "agmonlab/parallel.hpp"
#include "agmonlab/rng.hpp"

namespace agmonlab {

namespace {

constexpr double kPi = std::numbers::pi;
// cells whose center is farther than r + margin*h cannot touch the smoothed
// sphere; closer than r - margin*h they are entirely inside it
const double kCellMargin = std::sqrt(3.0) / 3.0 + 1.0 / 6.0;  // ~0.744

// smoothed overlap fraction of the cell at x + (dx,dy,dz) with B(x, r);
// 27 subcells, each ramps linearly over a band of width h/3 around the
// sphere; squared-distance prechecks keep sqrt off the full/empty subcells
double cell_fraction(double dx, double dy, double dz, double h, double r) {
  const double step = h / 3.0;
  const double lo = r - 0.5 * step, hi = r + 0.5 * step;
  const double lo2 = lo * lo, hi2 = hi * hi;
  const bool has_full = lo > 0.0;
  double acc = 0.0;
  for (int a = -1; a <= 1; ++a) {
    const double sx = dx + step * a, sx2 = sx * sx;
    for (int b = -1; b <= 1; ++b) {
      const double sy = dy + step * b, sxy2 = sx2 + sy * sy;
      for (int c = -1; c <= 1; ++c) {
        const double sz = dz + step * c;
        const double d2 = sxy2 + sz * sz;
        if (has_full && d2 <= lo2) {
          acc += 1.0;
        } else if (d2 < hi2) {
          acc += std::clamp((r - std::sqrt(d2)) / step + 0.5, 0.0, 1.0);
        }
      }
    }
  }
  return acc / 27.0;
}

struct BallSums {
  double mass = 0.0;    // integral of w
  double volume = 0.0;  // integral of 1 (same quadrature)
};

// direct enumeration over the bounding box of B(x, r); arbitrary center
BallSums ball_sums(const ScalarField& w, const Eigen::Vector3d& x, double r) {
  const Grid& g = w.grid;
  const double h = g.spacing;
  const double margin = kCellMargin * h;
  const double cell = h * h * h;
  const double in2 = (r > margin) ? (r - margin) * (r - margin) : -1.0;
  const double out2 = (r + margin) * (r + margin);
  std::array<Index, 3> lo, hi;
  for (int a = 0; a < 3; ++a) {
    lo[a] = std::max<Index>(0, (Index)std::ceil((x[a] - r - margin - g.origin[a]) / h));
    hi[a] = std::min<Index>(g.dims[a] - 1, (Index)std::floor((x[a] + r + margin - g.origin[a]) / h));
  }
  BallSums s;
  for (Index k = lo[2]; k <= hi[2]; ++k) {
    const double dz = g.origin[2] + k * h - x[2], dz2 = dz * dz;
    for (Index j = lo[1]; j <= hi[1]; ++j) {
      const double dy = g.origin[1] + j * h - x[1], dyz2 = dz2 + dy * dy;
      const double* row = w.values.data() + g.index(lo[0], j, k);
      for (Index i = lo[0]; i <= hi[0]; ++i) {
        const double dx = g.origin[0] + i * h - x[0];
        const double d2 = dyz2 + dx * dx;
        if (d2 >= out2) continue;
        double f = (d2 <= in2) ? 1.0 : cell_fraction(dx, dy, dz, h, r);
        if (f <= 0.0) continue;
        double wv = row[i - lo[0]];
        s.mass += wv * f * cell;
        s.volume += f * cell;
      }
    }
  }
  return s;
}

double small_ball_blend(double r, double h) {
  // 1 below r = h, 0 above r = 1.5h
  return std::clamp((1.5 * h - r) / (0.5 * h), 0.0, 1.0);
}

// w at the cell containing x (clamped to the box)
double nearest_cell_value(const ScalarField& w, const Eigen::Vector3d& x) {
  const Grid& g = w.grid;
  Index i[3];
  for (int a = 0; a < 3; ++a) {
    i[a] = (Index)std::llround((x[a] - g.origin[a]) / g.spacing);
    i[a] = std::clamp<Index>(i[a], 0, g.dims[a] - 1);
  }
  return w.values[g.index(i[0], i[1], i[2])];
}

double phi_blended(const ScalarField& w, const Eigen::Vector3d& x, double r, double local_w) {
  const double h = w.grid.spacing;
  double theta = small_ball_blend(r, h);
  double quad = (theta >= 1.0) ? 0.0 : ball_sums(w, x, r).mass / r;
  double local = (theta > 0.0) ? (4.0 * kPi / 3.0) * r * r * local_w : 0.0;
  return theta * local + (1.0 - theta) * quad;
}

double phi_blend_direct(const ScalarField& w, Index point, double r) {
  return phi_blended(w, w.grid.point(point), r, w.values[point]);
}

// ---- sorted lattice offsets shared by every point of a field sweep ----

// exact min/max subcell distance (in units of h) for the cell at offset
// (i,j,k): the 27 subcells sit at offset + (a,b,c)/3, so extremes separate
// per axis
inline double subcell_min_h(int i, int j, int k) {
  auto m = [](int v) { return std::max(std::abs((double)v) - 1.0 / 3.0, 0.0); };
  double a = m(i), b = m(j), c = m(k);
  return std::sqrt(a * a + b * b + c * c);
}
inline double subcell_max_h(int i, int j, int k) {
  double a = std::abs((double)i) + 1.0 / 3.0, b = std::abs((double)j) + 1.0 / 3.0,
         c = std::abs((double)k) + 1.0 / 3.0;
  return std::sqrt(a * a + b * b + c * c);
}

struct OffsetTable {
  // center-distance order: supplies the margin band for exact evaluations
  std::vector<std::int16_t> oi, oj, ok;
  std::vector<double> dist;            // offset length in units of h
  std::vector<double> dminh, dmaxh;    // exact subcell distance range, units of h
  // the same offsets reordered by max subcell distance ("certainly full"
  // cursor) and by min subcell distance ("possibly touching" cursor)
  std::vector<std::int16_t> fi, fj, fk;
  std::vector<double> fkey;  // sorted subcell_max
  std::vector<std::int16_t> ti, tj, tk;
  std::vector<double> tkey;  // sorted subcell_min
  // 27 sorted subcell distances (units of h) with running sums, pooled per
  // octant-canonical offset (sorted |i|,|j|,|k|): the multiset is invariant
  // under the 48 cube symmetries, so band evaluations never recompute or
  // re-sort subcell geometry
  std::vector<std::int32_t> sub_id;  // per offset: orbit index
  std::vector<double> sub_d;         // 27 per orbit
  std::vector<double> sub_p;         // 28 per orbit

  void build(int max_cells) {
    const double lim = max_cells + 1e-9;
    const double lim2 = lim * lim;
    std::vector<std::uint64_t> order;
    for (int k = -max_cells; k <= max_cells; ++k)
      for (int j = -max_cells; j <= max_cells; ++j)
        for (int i = -max_cells; i <= max_cells; ++i) {
          double d2 = double(i) * i + double(j) * j + double(k) * k;
          if (d2 > lim2) continue;
          // pack: 24-bit quantized distance key, then the three offsets
          std::uint64_t key = (std::uint64_t)std::llround(std::sqrt(d2) * 65536.0);
          std::uint64_t bi = (std::uint64_t)(i + 512), bj = (std::uint64_t)(j + 512),
                        bk = (std::uint64_t)(k + 512);
          order.push_back((key << 36) | (bi << 24) | (bj << 12) | bk);
        }
    std::sort(order.begin(), order.end());
    const std::size_t n = order.size();
    oi.resize(n); oj.resize(n); ok.resize(n);
    dist.resize(n); dminh.resize(n); dmaxh.resize(n);
    for (std::size_t s = 0; s < n; ++s) {
      int i = int((order[s] >> 24) & 0xfff) - 512;
      int j = int((order[s] >> 12) & 0xfff) - 512;
      int k = int(order[s] & 0xfff) - 512;
      oi[s] = (std::int16_t)i;
      oj[s] = (std::int16_t)j;
      ok[s] = (std::int16_t)k;
      dist[s] = std::sqrt(double(i) * i + double(j) * j + double(k) * k);
      dminh[s] = subcell_min_h(i, j, k);
      dmaxh[s] = subcell_max_h(i, j, k);
    }
    sub_id.resize(n);
    std::unordered_map<std::uint32_t, std::int32_t> orbit;
    orbit.reserve(4096);
    for (std::size_t s = 0; s < n; ++s) {
      int a = std::abs(int(oi[s])), b = std::abs(int(oj[s])), c = std::abs(int(ok[s]));
      if (a > b) std::swap(a, b);
      if (b > c) std::swap(b, c);
      if (a > b) std::swap(a, b);
      std::uint32_t key = (std::uint32_t(a) << 20) | (std::uint32_t(b) << 10) | std::uint32_t(c);
      auto [it, fresh] = orbit.try_emplace(key, std::int32_t(sub_d.size() / 27));
      if (fresh) {
        double buf[27];
        int t = 0;
        for (int da = -1; da <= 1; ++da)
          for (int db = -1; db <= 1; ++db)
            for (int dc = -1; dc <= 1; ++dc) {
              double x = a + da / 3.0, y = b + db / 3.0, z = c + dc / 3.0;
              buf[t++] = std::sqrt(x * x + y * y + z * z);
            }
        std::sort(buf, buf + 27);
        double run = 0.0;
        sub_p.push_back(0.0);
        for (int u = 0; u < 27; ++u) {
          sub_d.push_back(buf[u]);
          run += buf[u];
          sub_p.push_back(run);
        }
      }
      sub_id[s] = it->second;
    }
    // deterministic reorders keyed on the exact subcell extremes
    std::vector<std::uint32_t> perm(n);
    auto reorder = [&](const std::vector<double>& key, std::vector<std::int16_t>& ri,
                       std::vector<std::int16_t>& rj, std::vector<std::int16_t>& rk,
                       std::vector<double>& rkey) {
      for (std::uint32_t s = 0; s < n; ++s) perm[s] = s;
      std::sort(perm.begin(), perm.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (key[a] != key[b]) return key[a] < key[b];
        return order[a] < order[b];
      });
      ri.resize(n); rj.resize(n); rk.resize(n); rkey.resize(n);
      for (std::size_t s = 0; s < n; ++s) {
        ri[s] = oi[perm[s]];
        rj[s] = oj[perm[s]];
        rk[s] = ok[perm[s]];
        rkey[s] = key[perm[s]];
      }
    };
    reorder(dmaxh, fi, fj, fk, fkey);
    reorder(dminh, ti, tj, tk, tkey);
  }
  // first index with dist > cells
  std::size_t upper(double cells) const {
    return std::upper_bound(dist.begin(), dist.end(), cells) - dist.begin();
  }
};

// 3D prefix sums of the weight: O(1) mass of any index box, giving cheap
// two-sided bounds on any ball mass without touching the cells
struct PrefixMass {
  std::vector<double> P;  // (d0+1)(d1+1)(d2+1) corner sums
  Index n0 = 0, n1 = 0, n2 = 0;
  double cellvol = 0.0, total = 0.0, slack = 0.0;

  void build(const ScalarField& w) {
    const Grid& g = w.grid;
    n0 = g.dims[0] + 1; n1 = g.dims[1] + 1; n2 = g.dims[2] + 1;
    cellvol = std::pow(g.spacing, 3);
    P.assign((std::size_t)n0 * n1 * n2, 0.0);
    auto at = [&](Index i, Index j, Index k) -> double& {
      return P[((std::size_t)k * n1 + j) * n0 + i];
    };
    for (Index k = 1; k < n2; ++k)
      for (Index j = 1; j < n1; ++j)
        for (Index i = 1; i < n0; ++i)
          at(i, j, k) = w.values[g.index(i - 1, j - 1, k - 1)] + at(i - 1, j, k) +
                        at(i, j - 1, k) + at(i, j, k - 1) - at(i - 1, j - 1, k) -
                        at(i - 1, j, k - 1) - at(i, j - 1, k - 1) + at(i - 1, j - 1, k - 1);
    total = at(n0 - 1, n1 - 1, n2 - 1) * cellvol;
    // rounding slack of an inclusion-exclusion difference, kept conservative
    slack = 1e-12 * std::max(total, 1.0);
  }
  // mass over cells with indices in [la,ha]x[lb,hb]x[lc,hc], clamped to the box
  double box(Index la, Index ha, Index lb, Index hb, Index lc, Index hc) const {
    la = std::max<Index>(la, 0); lb = std::max<Index>(lb, 0); lc = std::max<Index>(lc, 0);
    ha = std::min<Index>(ha, n0 - 2); hb = std::min<Index>(hb, n1 - 2);
    hc = std::min<Index>(hc, n2 - 2);
    if (la > ha || lb > hb || lc > hc) return 0.0;
    auto at = [&](Index i, Index j, Index k) {
      return P[((std::size_t)k * n1 + j) * n0 + i];
    };
    ++ha; ++hb; ++hc;
    return (at(ha, hb, hc) - at(la, hb, hc) - at(ha, lb, hc) - at(ha, hb, lc) +
            at(la, lb, hc) + at(la, hb, lc) + at(ha, lb, lc) - at(la, lb, lc)) *
           cellvol;
  }
};

// walking cursor: masses of fully-inside and possibly-touching cells around
// one grid point; Mlo(r) <= M(r) <= Mhi(r) rigorously for the quadrature
struct PointWalk {
  const ScalarField* w = nullptr;
  const OffsetTable* tab = nullptr;
  Index pi = 0, pj = 0, pk = 0;
  Index d0 = 0, d1 = 0, d2 = 0;
  double cell = 0.0;
  std::size_t ptr_lo = 0, ptr_hi = 0;      // center-distance cursors (margin band)
  double mass_lo = 0.0, mass_hi = 0.0;
  std::size_t ptr_full = 0, ptr_touch = 0;  // exact subcell-extreme cursors
  double mass_full = 0.0, mass_touch = 0.0;

  void init(const ScalarField& wf, const OffsetTable& t, Index point) {
    w = &wf;
    tab = &t;
    auto [a, b, c] = wf.grid.unpack(point);
    pi = a; pj = b; pk = c;
    d0 = wf.grid.dims[0]; d1 = wf.grid.dims[1]; d2 = wf.grid.dims[2];
    cell = std::pow(wf.grid.spacing, 3);
  }
  double value_at(int i0, int j0, int k0) const {
    Index i = pi + i0, j = pj + j0, k = pk + k0;
    // unsigned wrap catches the negative side in one compare per axis
    if ((std::uint64_t)i >= (std::uint64_t)d0 || (std::uint64_t)j >= (std::uint64_t)d1 ||
        (std::uint64_t)k >= (std::uint64_t)d2)
      return -1.0;  // outside the box: skip
    return w->values[(k * d1 + j) * d0 + i];
  }
  double cell_value(std::size_t s) const { return value_at(tab->oi[s], tab->oj[s], tab->ok[s]); }
  void advance(double r) {  // r in physical units
    const double h = w->grid.spacing;
    const std::size_t n = tab->dist.size();
    double chi = (r + kCellMargin * h) / h, clo = (r - kCellMargin * h) / h;
    for (; ptr_hi < n && tab->dist[ptr_hi] <= chi; ++ptr_hi) {
      double v = cell_value(ptr_hi);
      if (v >= 0.0) mass_hi += v * cell;
    }
    for (; ptr_lo < n && tab->dist[ptr_lo] <= clo; ++ptr_lo) {
      double v = cell_value(ptr_lo);
      if (v >= 0.0) mass_lo += v * cell;
    }
    // mass_full counts cells whose every subcell is already fully inside;
    // mass_touch counts every cell any subcell of which the ball reaches
    double tfull = (r - h / 6.0) / h, ttouch = (r + h / 6.0) / h;
    for (; ptr_full < n && tab->fkey[ptr_full] <= tfull; ++ptr_full) {
      double v = value_at(tab->fi[ptr_full], tab->fj[ptr_full], tab->fk[ptr_full]);
      if (v >= 0.0) mass_full += v * cell;
    }
    for (; ptr_touch < n && tab->tkey[ptr_touch] < ttouch; ++ptr_touch) {
      double v = value_at(tab->ti[ptr_touch], tab->tj[ptr_touch], tab->tk[ptr_touch]);
      if (v >= 0.0) mass_touch += v * cell;
    }
  }
  // exact phi at r using the current band (requires advance(r) done)
  double exact_phi(double r) const {
    const Grid& g = w->grid;
    const double h = g.spacing;
    const double tfull = (r - h / 6.0) / h, tempty = (r + h / 6.0) / h;
    const double rh = r / h;
    double band = 0.0;
    for (std::size_t s = ptr_lo; s < ptr_hi; ++s) {
      double v = cell_value(s);
      if (v <= 0.0) continue;
      if (tab->dmaxh[s] <= tfull) {
        band += v * cell;  // every subcell fully inside
      } else if (tab->dminh[s] < tempty) {
        // same 27-subcell ramp as cell_fraction, via the pooled sorted tables
        const double* d = tab->sub_d.data() + 27 * std::size_t(tab->sub_id[s]);
        const double* p = tab->sub_p.data() + 28 * std::size_t(tab->sub_id[s]);
        std::size_t i1 = std::upper_bound(d, d + 27, tfull) - d;
        std::size_t i2 = std::lower_bound(d, d + 27, tempty) - d;
        double f27 = double(i1) + double(i2 - i1) * (3.0 * rh + 0.5) - 3.0 * (p[i2] - p[i1]);
        band += v * (f27 / 27.0) * cell;
      }
    }
    double quad = (mass_lo + band) / r;
    double theta = small_ball_blend(r, h);
    if (theta <= 0.0) return quad;
    double local = (4.0 * kPi / 3.0) * r * r * w->values[g.index(pi, pj, pk)];
    return theta * local + (1.0 - theta) * quad;
  }
};

// band cache for bisection inside a fixed bracket [rlo, rhi]: per band cell a
// pointer into the pooled sorted subcell tables, so each eval is two binary
// searches per cell and no square roots at all
struct BandCache {
  double base_mass = 0.0;  // cells always fully inside for r >= rlo
  std::vector<double> values;
  std::vector<const double*> cd;  // 27 sorted subcell distances, units of h
  std::vector<const double*> cp;  // 28 running sums
  double h = 0.0, cell = 0.0, point_w = 0.0;

  void build(const PointWalk& pw, double rlo, double rhi) {
    const Grid& g = pw.w->grid;
    h = g.spacing;
    cell = pw.cell;
    point_w = pw.w->values[g.index(pw.pi, pw.pj, pw.pk)];
    const double tfull = (rlo - h / 6.0) / h;   // full across the whole bracket
    const double tempty = (rhi + h / 6.0) / h;  // empty across the whole bracket
    std::size_t cut = pw.tab->upper((rlo - kCellMargin * h) / h);
    double band_mass = 0.0;
    for (std::size_t s = cut; s < pw.ptr_hi; ++s) {
      double v = pw.cell_value(s);
      if (v < 0.0) continue;
      if (pw.tab->dmaxh[s] <= tfull) continue;  // stays inside base_mass
      band_mass += v * cell;
      if (v == 0.0) continue;  // contributes nothing at any radius
      if (pw.tab->dminh[s] >= tempty) continue;  // never reached below rhi
      values.push_back(v);
      cd.push_back(pw.tab->sub_d.data() + 27 * std::size_t(pw.tab->sub_id[s]));
      cp.push_back(pw.tab->sub_p.data() + 28 * std::size_t(pw.tab->sub_id[s]));
    }
    base_mass = pw.mass_hi - band_mass;
  }
  double eval(double r) const {
    const double rh = r / h;
    const double lo = rh - 1.0 / 6.0, hi = rh + 1.0 / 6.0;
    double acc = 0.0;  // sum of w * 27 * fraction over band cells
    for (std::size_t s = 0; s < values.size(); ++s) {
      const double* d = cd[s];
      if (d[26] <= lo) {
        acc += values[s] * 27.0;
        continue;
      }
      if (d[0] >= hi) continue;
      const double* p = cp[s];
      // full subcells: d <= lo; partial: lo < d < hi, each 3*(rh - d) + 0.5
      std::size_t i1 = std::upper_bound(d, d + 27, lo) - d;
      std::size_t i2 = std::lower_bound(d, d + 27, hi) - d;
      acc += values[s] * (double(i1) + double(i2 - i1) * (3.0 * rh + 0.5) -
                          3.0 * (p[i2] - p[i1]));
    }
    double quad = (base_mass + acc * cell / 27.0) / r;
    double theta = small_ball_blend(r, h);
    if (theta <= 0.0) return quad;
    return theta * (4.0 * kPi / 3.0) * r * r * point_w + (1.0 - theta) * quad;
  }
};

std::vector<double> scan_radii(const Grid& g, int count) {
  double r0 = 0.5 * g.spacing, r1 = g.half_diameter();
  std::vector<double> r(count);
  for (int i = 0; i < count; ++i)
    r[i] = r0 * std::pow(r1 / r0, double(i) / (count - 1));
  return r;
}

template <class Eval>
MaximalPoint bisect_root(double rlo, double rhi, Eval&& eval, const MaximalOptions& opts) {
  MaximalPoint out;
  double flo = eval(rlo) - 1.0;
  double mid = 0.5 * (rlo + rhi), fmid = 0.0;
  for (int it = 0; it < opts.max_bisect; ++it) {
    mid = 0.5 * (rlo + rhi);
    fmid = eval(mid) - 1.0;
    if (std::abs(fmid) <= opts.residual_tol && (rhi - rlo) <= opts.rel_tol * rhi) break;
    if ((fmid > 0.0) == (flo > 0.0)) {
      rlo = mid;
      flo = fmid;
    } else {
      rhi = mid;
    }
    if (rhi - rlo < 1e-15 * rhi) {
      mid = 0.5 * (rlo + rhi);
      fmid = eval(mid) - 1.0;
      break;
    }
  }
  out.rhat = mid;
  out.m = 1.0 / mid;
  out.residual = std::abs(fmid);
  out.converged = out.residual <= opts.residual_tol;
  return out;
}

MaximalPoint maximal_point_impl(const ScalarField& w, const OffsetTable& tab,
                                const PrefixMass& pre, const std::vector<double>& radii,
                                Index point, const MaximalOptions& opts) {
  const Grid& g = w.grid;
  const double h = g.spacing;
  const double margin = kCellMargin * h;
  const double inv_s3 = 1.0 / std::sqrt(3.0);
  const int n = (int)radii.size();
  const double rmax = radii.back();

  PointWalk pw;
  pw.init(w, tab, point);
  const double local_coeff = (4.0 * kPi / 3.0) * w.values[point];
  auto [pi, pj, pk] = g.unpack(point);

  int candidate = -1;
  int k = 0;
  while (k < n) {
    double r = radii[k];
    double theta = small_ball_blend(r, h);
    double local = theta * local_coeff * r * r;
    double blo = local, bhi = local;
    if (theta < 1.0) {
      // O(1) cube bounds from the prefix sums: the Chebyshev box of
      // half-width (r - margin)/sqrt(3) holds only fully-counted cells, the
      // one of half-width r + margin holds every touched cell
      double clo = 0.0;
      if (r > margin) {
        Index a = (Index)std::floor((r - margin) * inv_s3 / h);
        if (a >= 0)
          clo = std::max(0.0, pre.box(pi - a, pi + a, pj - a, pj + a, pk - a, pk + a) -
                                  pre.slack);
      }
      Index b = (Index)std::floor((r + margin) / h);
      double chi = pre.box(pi - b, pi + b, pj - b, pj + b, pk - b, pk + b) + pre.slack;
      blo += (1.0 - theta) * clo / r;
      bhi += (1.0 - theta) * chi / r;
      if (blo <= 1.0 && bhi > 1.0) {
        // cube bounds inconclusive: engage the walking cursors
        pw.advance(r);
        blo = local + (1.0 - theta) * pw.mass_full / r;
        bhi = local + (1.0 - theta) * pw.mass_touch / r;
      }
    }
    if (bhi <= 1.0) {  // certainly phi <= 1
      candidate = k;
      ++k;
    } else if (blo > 1.0) {  // certainly phi > 1
      ++k;
    } else {
      double val = pw.exact_phi(r);
      if (val <= 1.0) candidate = k;
      ++k;
    }
  }

  MaximalPoint out;
  Eigen::Vector3d x = g.point(point);

  if (candidate == n - 1) {
    // phi never exceeds 1 on the box: no crossing, clipped at the half-diameter
    out.rhat = rmax;
    out.m = 1.0 / rmax;
    out.residual = 0.0;
    out.converged = true;
    out.clipped_at_box = true;
    out.ball_exits_box = true;
    out.degenerate = pre.total <= 0.0 && w.values[point] <= 0.0;
    return out;
  }

  if (candidate < 0) {
    // root below the first scan radius: the blended small-ball branch owns it
    double rhi = radii[0];
    double rlo = rhi * 1e-3;
    auto eval = [&](double r) { return phi_blend_direct(w, point, r); };
    for (int guard = 0; guard < 40 && eval(rlo) > 1.0; ++guard) rlo *= 0.1;
    out = bisect_root(rlo, rhi, eval, opts);
    out.under_resolved = true;
    out.ball_exits_box = g.wall_distance(x) < out.rhat;
    return out;
  }

  double rlo = radii[candidate], rhi = radii[candidate + 1];
  if (rhi < 1.6 * h) {
    auto eval = [&](double r) { return phi_blend_direct(w, point, r); };
    out = bisect_root(rlo, rhi, eval, opts);
  } else {
    pw.advance(rhi);
    BandCache cache;
    cache.build(pw, rlo, rhi);
    auto eval = [&](double r) { return cache.eval(r); };
    out = bisect_root(rlo, rhi, eval, opts);
  }
  out.under_resolved = out.rhat < 0.5 * h;
  out.ball_exits_box = g.wall_distance(x) < out.rhat;
  return out;
}

OffsetTable build_table(const Grid& g) {
  int max_cells = (int)std::ceil(g.half_diameter() / g.spacing + kCellMargin) + 1;
  OffsetTable tab;
  tab.build(max_cells);
  return tab;
}

}  // namespace

double phi(const ScalarField& w, const Eigen::Vector3d& x, double r) {
  if (!(r > 0.0)) throw NonpositiveRadius("phi: radius must be positive");
  const Grid& g = w.grid;
  Eigen::Vector3d lo = g.box_lo(), hi = g.box_hi(), gap;
  for (int a = 0; a < 3; ++a)
    gap[a] = std::max({lo[a] - x[a], x[a] - hi[a], 0.0});
  if (gap.norm() >= r) throw EmptyIntersection("phi: ball misses the box");
  return phi_blended(w, x, r, nearest_cell_value(w, x));
}

double phi_at_point(const ScalarField& w, Index point, double r) {
  if (point < 0 || point >= w.grid.size()) throw OutOfDomain("phi_at_point: bad index");
  if (!(r > 0.0)) throw NonpositiveRadius("phi_at_point: radius must be positive");
  return phi_blend_direct(w, point, r);
}

double phi_exact(const PotentialModel& model, const Eigen::Vector3d& x, double r) {
  if (!(r > 0.0)) throw NonpositiveRadius("phi_exact: radius must be positive");
  if (model.kind() == PotentialModel::Kind::Constant)
    return model(x) * (4.0 * kPi / 3.0) * r * r;
  if (model.kind() == PotentialModel::Kind::RadialPower) {
    if (x.norm() > 1e-12 * (1.0 + r))
      throw UnsupportedSetting("phi_exact: radial powers integrate about the origin only");
    double a = model.radial_alpha();
    // r^{-1} * 4pi INT_0^r s^{a+2} ds
    return model.radial_scale() * 4.0 * kPi * std::pow(r, a + 2.0) / (a + 3.0);
  }
  throw UnsupportedSetting("phi_exact: no closed form for this model");
}

double MaximalField::unconverged_fraction() const {
  if (flags.empty()) return 0.0;
  Index bad = 0;
  for (auto f : flags)
    if (!(f & kConverged)) ++bad;
  return double(bad) / double(flags.size());
}

MaximalPoint maximal_function(const ScalarField& w, Index point, const MaximalOptions& opts) {
  if (point < 0 || point >= w.grid.size())
    throw OutOfDomain("maximal_function: point index outside the grid");
  if (w.values.minCoeff() < -1e-12) throw NegativeWeight("maximal_function: negative weight");
  OffsetTable tab = build_table(w.grid);
  PrefixMass pre;
  pre.build(w);
  MaximalPoint mp =
      maximal_point_impl(w, tab, pre, scan_radii(w.grid, opts.scan_count), point, opts);
  if (mp.degenerate) throw DegenerateWeight("maximal_function: phi vanishes on every ball");
  return mp;
}

MaximalField maximal_field(const ScalarField& w, const MaximalOptions& opts) {
  if (w.values.minCoeff() < -1e-12) throw NegativeWeight("maximal_field: negative weight");
  if (w.values.maxCoeff() <= 0.0)
    throw DegenerateWeight("maximal_field: weight vanishes identically");

  const Grid& g = w.grid;
  OffsetTable tab = build_table(g);
  PrefixMass pre;
  pre.build(w);
  std::vector<double> radii = scan_radii(g, opts.scan_count);

  MaximalField out{ScalarField(g), ScalarField(g), std::vector<std::uint8_t>(g.size(), 0)};
  out.half_diameter = g.half_diameter();

  std::vector<double> residuals(thread_count(), 0.0);
  parallel_for_blocks(g.size(), [&](Index begin, Index end, int tid) {
    double worst = 0.0;
    for (Index p = begin; p < end; ++p) {
      MaximalPoint mp = maximal_point_impl(w, tab, pre, radii, p, opts);
      out.m.values[p] = mp.m;
      out.rhat.values[p] = mp.rhat;
      std::uint8_t f = 0;
      if (mp.converged) f |= MaximalField::kConverged;
      if (mp.clipped_at_box) f |= MaximalField::kClipped;
      if (mp.under_resolved) f |= MaximalField::kUnderResolved;
      if (mp.ball_exits_box) f |= MaximalField::kExitsBox;
      out.flags[p] = f;
      worst = std::max(worst, mp.residual);
    }
    residuals[tid] = std::max(residuals[tid], worst);
  });

  for (double r : residuals) out.max_residual = std::max(out.max_residual, r);
  for (Index p = 0; p < g.size(); ++p) {
    if (out.flags[p] & MaximalField::kClipped) ++out.n_clipped;
    if (out.flags[p] & MaximalField::kExitsBox) ++out.n_exits_box;
    if (out.flags[p] & MaximalField::kUnderResolved) ++out.n_under_resolved;
    if (!(out.flags[p] & MaximalField::kConverged)) ++out.n_unconverged;
  }
  return out;
}

MaximalField degenerate_clipped_field(const Grid& g) {
  MaximalField out{ScalarField(g), ScalarField(g), std::vector<std::uint8_t>(g.size(), 0)};
  out.half_diameter = g.half_diameter();
  const double rmax = out.half_diameter;
  constexpr std::uint8_t f =
      MaximalField::kConverged | MaximalField::kClipped | MaximalField::kExitsBox;
  out.m.values.setConstant(1.0 / rmax);
  out.rhat.values.setConstant(rmax);
  std::fill(out.flags.begin(), out.flags.end(), f);
  out.n_clipped = g.size();
  out.n_exits_box = g.size();
  return out;
}

RHEstimate rh_estimate(const ScalarField& w, double p, int n_samples, std::uint64_t seed) {
  if (!(p >= 1.0)) throw OutOfDomain("rh_estimate: p must be >= 1");
  if (n_samples < 1) throw OutOfDomain("rh_estimate: need at least one ball");
  if (w.values.minCoeff() < -1e-12) throw NegativeWeight("rh_estimate: negative weight");

  const Grid& g = w.grid;
  const double h = g.spacing;

  // centers in the inner half-box so that the doubled ball stays inside
  std::vector<Index> centers;
  for (Index idx = 0; idx < g.size(); ++idx) {
    Eigen::Vector3d x = g.point(idx);
    bool inner = true;
    for (int a = 0; a < 3; ++a) {
      double lo = g.box_lo()[a], hi = g.box_hi()[a], half = 0.25 * (hi - lo);
      if (x[a] < lo + half || x[a] > hi - half) inner = false;
    }
    if (inner) centers.push_back(idx);
  }
  if (centers.empty()) throw InsufficientResolution("rh_estimate: grid too small for interior balls");

  Rng rng(seed);
  RHEstimate est;
  est.p = p;
  est.samples = n_samples;
  est.seed = seed;

  int used = 0;
  for (int b = 0; b < n_samples; ++b) {
    Index c = centers[(std::size_t)rng.uniform_int((std::int64_t)centers.size())];
    Eigen::Vector3d x = g.point(c);
    // quarter of the box diameter, and the doubled ball must stay inside
    double rmax = std::min(0.5 * g.half_diameter(), 0.5 * g.wall_distance(x));
    if (rmax < 2.0 * h)
      throw InsufficientResolution("rh_estimate: no admissible radius; refine the grid");
    double r = rng.log_uniform(2.0 * h, rmax);

    BallSums s1 = ball_sums(w, x, r);
    if (s1.volume <= 0.0 || s1.mass <= 0.0) continue;  // degenerate ball
    double mean_w = s1.mass / s1.volume;

    // same quadrature for the p-mean
    double mass_p = 0.0;
    {
      const double margin = kCellMargin * h, cell = h * h * h;
      const double in2 = (r > margin) ? (r - margin) * (r - margin) : -1.0;
      const double out2 = (r + margin) * (r + margin);
      std::array<Index, 3> lo, hi;
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::max<Index>(0, (Index)std::ceil((x[a] - r - margin - g.origin[a]) / h));
        hi[a] = std::min<Index>(g.dims[a] - 1, (Index)std::floor((x[a] + r + margin - g.origin[a]) / h));
      }
      for (Index k = lo[2]; k <= hi[2]; ++k) {
        const double dz = g.origin[2] + k * h - x[2], dz2 = dz * dz;
        for (Index j = lo[1]; j <= hi[1]; ++j) {
          const double dy = g.origin[1] + j * h - x[1], dyz2 = dz2 + dy * dy;
          for (Index i = lo[0]; i <= hi[0]; ++i) {
            const double dx = g.origin[0] + i * h - x[0];
            const double d2 = dyz2 + dx * dx;
            if (d2 >= out2) continue;
            double f = (d2 <= in2) ? 1.0 : cell_fraction(dx, dy, dz, h, r);
            if (f <= 0.0) continue;
            mass_p += std::pow(w.values[g.index(i, j, k)], p) * f * cell;
          }
        }
      }
    }
    double mean_wp = std::pow(mass_p / s1.volume, 1.0 / p);
    est.norm_estimate = std::max(est.norm_estimate, mean_wp / mean_w);

    BallSums s2 = ball_sums(w, x, 2.0 * r);
    est.doubling_constant = std::max(est.doubling_constant, s2.mass / s1.mass);
    ++used;
  }
  if (used == 0) throw DegenerateWeight("rh_estimate: every sampled ball carried zero mass");

  if (p == 1.0) {
    est.alpha = std::numeric_limits<double>::infinity();
    est.doubling_bound = std::numeric_limits<double>::infinity();
  } else {
    double inner = 1.0 - std::pow(1.0 / (2.0 * est.norm_estimate), p / (p - 1.0));
    est.alpha = std::pow(inner, -1.0 / 3.0);
    est.doubling_bound = std::pow(2.0, 1.0 + std::log(2.0) / std::log(est.alpha));
  }
  return est;
}

double kato_integral_ratio(const ScalarField& w, Index point, double radius) {
  const Grid& g = w.grid;
  const double h = g.spacing, cell = h * h * h;
  const double margin = kCellMargin * h;
  Eigen::Vector3d x = g.point(point);

  std::array<Index, 3> lo, hi;
  for (int a = 0; a < 3; ++a) {
    lo[a] = std::max<Index>(0, (Index)std::ceil((x[a] - radius - margin - g.origin[a]) / h));
    hi[a] = std::min<Index>(g.dims[a] - 1, (Index)std::floor((x[a] + radius + margin - g.origin[a]) / h));
  }
  const double in2 = (radius > margin) ? (radius - margin) * (radius - margin) : -1.0;
  const double out2 = (radius + margin) * (radius + margin);
  double mass = 0.0, singular = 0.0;
  for (Index k = lo[2]; k <= hi[2]; ++k) {
    const double dz = g.origin[2] + k * h - x[2], dz2 = dz * dz;
    for (Index j = lo[1]; j <= hi[1]; ++j) {
      const double dy = g.origin[1] + j * h - x[1], dyz2 = dz2 + dy * dy;
      for (Index i = lo[0]; i <= hi[0]; ++i) {
        const double dx = g.origin[0] + i * h - x[0];
        const double d2 = dyz2 + dx * dx;
        if (d2 >= out2) continue;
        double f = (d2 <= in2) ? 1.0 : cell_fraction(dx, dy, dz, h, radius);
        if (f <= 0.0) continue;
        double wv = w.values[g.index(i, j, k)];
        mass += wv * f * cell;
        if (d2 < 0.25 * h * h) {
          // cell holding the singularity: 6^3 subsample of 1/|z-x|
          double acc = 0.0;
          const double sub = h / 6.0;
          for (int a = 0; a < 6; ++a)
            for (int b = 0; b < 6; ++b)
              for (int c2 = 0; c2 < 6; ++c2) {
                double zx = dx + sub * (a - 2.5), zy = dy + sub * (b - 2.5),
                       zz = dz + sub * (c2 - 2.5);
                acc += 1.0 / std::sqrt(zx * zx + zy * zy + zz * zz);
              }
          singular += wv * f * cell * acc / 216.0;
        } else {
          singular += wv * f * cell / std::sqrt(d2);
        }
      }
    }
  }
  if (mass <= 0.0) throw DegenerateWeight("kato_integral_ratio: zero mass ball");
  return singular / (mass / radius);
}

bool PropertyReport::all_pass() const {
  for (const auto& c : checks)
    if (!c.pass) return false;
  return true;
}

const PropertyCheck* PropertyReport::find(const std::string& name) const {
  for (const auto& c : checks)
    if (c.name == name) return &c;
  return nullptr;
}

PropertyReport check_section3_properties(const ScalarField& w, const MaximalField& mf,
                                         int sample_pairs, std::uint64_t seed,
                                         double p, double p_tilde) {
  require_same_grid(w.grid, mf.m.grid, "check_section3_properties");
  if (!(p > 1.0) || !(p_tilde > 1.5))
    throw OutOfDomain("check_section3_properties: need p > 1 and p_tilde > n/2");

  const Grid& g = w.grid;
  const double h = g.spacing;
  Rng rng(seed);

  // usable points: converged, crossing inside the box, resolved
  std::vector<Index> good;
  for (Index i = 0; i < g.size(); ++i)
    if (mf.trusted_at(i)) good.push_back(i);
  if (good.size() < 8)
    throw InsufficientResolution("check_section3_properties: too few converged points");
  auto pick = [&]() { return good[(std::size_t)rng.uniform_int((std::int64_t)good.size())]; };
  auto usable = [&](Index i) { return mf.trusted_at(i); };
  // random usable grid point within euclidean `reach` of a; -1 if none found
  auto pick_near = [&](Index a, double reach) -> Index {
    auto [ai, aj, ak] = g.unpack(a);
    Index span = std::max<Index>(1, (Index)std::floor(reach / h));
    for (int tries = 0; tries < 16; ++tries) {
      Index bi = ai + rng.uniform_int(2 * span + 1) - span;
      Index bj = aj + rng.uniform_int(2 * span + 1) - span;
      Index bk = ak + rng.uniform_int(2 * span + 1) - span;
      if (!g.contains(bi, bj, bk)) continue;
      Index b = g.index(bi, bj, bk);
      if (!usable(b)) continue;
      if ((g.point(b) - g.point(a)).norm() <= reach) return b;
    }
    return -1;
  };

  RHEstimate rh = rh_estimate(w, p, std::max(64, sample_pairs / 4), seed ^ 0x9e3779b97f4a7c15ull);
  const double c0 = rh.doubling_bound;
  const double q = p_tilde / (p_tilde - 1.0);
  const double kato_c = std::pow(3.0 - q, -1.0 / q) * c0;  // n - q(n-2) = 3 - q
  // m-comparability constant at reach C/m with C = 2: exponent 1 + log2(C+1)
  const double comp_expo = 2.0 - 3.0 / p_tilde;  // positive since p_tilde > 3/2
  const double comp_bound = std::pow(
      std::max(rh.norm_estimate, 1.0) * std::pow(c0, 1.0 + std::log2(3.0)), 1.0 / comp_expo);

  PropertyReport rep;

  {  // phi comparability across radii: phi(r) <= norm * (R/r)^{n/p-2} phi(R)
    PropertyCheck c{"vprop", 0.0, 0.0, false, true, 0};
    double expo = 3.0 / p - 2.0;
    for (int s = 0; s < sample_pairs; ++s) {
      Index idx = pick();
      Eigen::Vector3d x = g.point(idx);
      double cap = g.wall_distance(x);
      if (cap < 4.0 * h) continue;
      double big = rng.log_uniform(2.0 * h, cap);
      double small = rng.log_uniform(std::min(h, 0.5 * big), 0.5 * big);
      double pr = phi(w, x, small), pR = phi(w, x, big);
      if (pR <= 0.0) continue;
      c.worst = std::max(c.worst, pr / (std::pow(big / small, expo) * pR));
      ++c.n_samples;
    }
    c.bound = std::max(rh.norm_estimate, 1.0);
    c.has_bound = true;
    c.pass = c.worst <= c.bound * 1.05;
    rep.checks.push_back(c);
  }

  {  // m is comparable at points within reach 2/m of each other
    PropertyCheck c{"m_comparable", 0.0, comp_bound, true, true, 0};
    for (int s = 0; s < sample_pairs; ++s) {
      Index a = pick();
      Index b = pick_near(a, 2.0 / mf.m.values[a]);
      if (b < 0) continue;
      double r1 = mf.m.values[a] / mf.m.values[b];
      c.worst = std::max({c.worst, r1, 1.0 / r1});
      ++c.n_samples;
    }
    c.pass = c.worst <= comp_bound * 1.05;
    rep.checks.push_back(c);
  }

  {  // polynomial growth: exponent of m(x)/m(y) against 1 + |x-y| m(y)
    PropertyCheck c{"poly_growth", 0.0, 0.0, false, true, 0};
    for (int s = 0; s < sample_pairs; ++s) {
      Index a = pick(), b = pick();
      double sep = (g.point(b) - g.point(a)).norm();
      double base = 1.0 + sep * mf.m.values[b];
      if (base < 2.0) continue;
      double expo = std::log(mf.m.values[a] / mf.m.values[b]) / std::log(base);
      c.worst = std::max(c.worst, expo);
      ++c.n_samples;
    }
    c.pass = std::isfinite(c.worst);
    rep.checks.push_back(c);
  }

  {  // Kato-type bound: INT_B w/|z-x| <= const * R^{-1} INT_B w
    PropertyCheck c{"kato_integral", 0.0, kato_c, true, true, 0};
    int tries = std::min(sample_pairs, 500);
    for (int s = 0; s < tries; ++s) {
      Index idx = pick();
      Eigen::Vector3d x = g.point(idx);
      double cap = std::min(g.wall_distance(x), 0.5 * g.half_diameter());
      if (cap < 3.0 * h) continue;
      double radius = rng.log_uniform(2.0 * h, cap);
      c.worst = std::max(c.worst, kato_integral_ratio(w, idx, radius));
      ++c.n_samples;
    }
    c.pass = c.worst <= kato_c * 1.05;
    rep.checks.push_back(c);
  }

  {  // separation: inside B(y, 2/m(y)) the product m(x)|x-y| stays bounded
    PropertyCheck c{"separation", 0.0, 2.0 * comp_bound, true, true, 0};
    for (int s = 0; s < sample_pairs; ++s) {
      Index b = pick();
      Index a = pick_near(b, 2.0 / mf.m.values[b]);
      if (a < 0) continue;
      double sep = (g.point(a) - g.point(b)).norm();
      c.worst = std::max(c.worst, sep * mf.m.values[a]);
      ++c.n_samples;
    }
    c.pass = c.worst <= c.bound * 1.05;
    rep.checks.push_back(c);
  }

  return rep;
}

}  // namespace agmonlab
