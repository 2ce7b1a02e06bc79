#include "agmonlab/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>

#include "agmonlab/rng.hpp"

namespace agmonlab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// compensated (Kahan) accumulator; keeps the regression sums associative
// enough that permuting the pair order does not move the fit
struct Ksum {
  double s = 0.0, c = 0.0;
  void add(double x) {
    const double y = x - c;
    const double t = s + y;
    c = (t - s) - y;
    s = t;
  }
  double get() const { return s; }
};

struct LineFit {
  double slope = 0.0, intercept = 0.0, r2 = 1.0;
};

LineFit fit_line(const std::vector<double>& xs, const std::vector<double>& ys) {
  Ksum sx, sy, sxx, sxy;
  const double n = double(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx.add(xs[i]);
    sy.add(ys[i]);
    sxx.add(xs[i] * xs[i]);
    sxy.add(xs[i] * ys[i]);
  }
  const double det = n * sxx.get() - sx.get() * sx.get();
  LineFit out;
  if (det <= 0.0) {  // all abscissae equal: horizontal line through the mean
    out.intercept = sy.get() / n;
    return out;
  }
  out.slope = (n * sxy.get() - sx.get() * sy.get()) / det;
  out.intercept = (sy.get() - out.slope * sx.get()) / n;
  Ksum ss_res, ss_tot;
  const double mean = sy.get() / n;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double e = ys[i] - (out.intercept + out.slope * xs[i]);
    ss_res.add(e * e);
    const double m = ys[i] - mean;
    ss_tot.add(m * m);
  }
  out.r2 = ss_tot.get() > 0.0 ? 1.0 - ss_res.get() / ss_tot.get() : 1.0;
  return out;
}

// inner box covering `fraction` of each side, centered
void trust_box(const Grid& g, double fraction, Eigen::Vector3d& lo, Eigen::Vector3d& hi) {
  const Eigen::Vector3d blo = g.box_lo(), bhi = g.box_hi();
  const Eigen::Vector3d margin = 0.5 * (1.0 - fraction) * (bhi - blo);
  lo = blo + margin;
  hi = bhi - margin;
}

bool in_box(const Eigen::Vector3d& x, const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
  return (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
}

// partial Fisher-Yates keeping the first k entries
template <class T>
void thin(std::vector<T>& v, std::size_t k, Rng& rng) {
  if (v.size() <= k) return;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + std::size_t(rng.uniform_int(std::int64_t(v.size() - i)));
    std::swap(v[i], v[j]);
  }
  v.resize(k);
}

double clipped_fraction(const MaximalField& mf) {
  return mf.m.grid.size() > 0 ? double(mf.n_clipped) / double(mf.m.grid.size()) : 0.0;
}

std::vector<Index> nodes_in(const Grid& g, const BoxSet& box) {
  std::vector<Index> out;
  for (Index p = 0; p < g.size(); ++p)
    if (box.contains(g.point(p))) out.push_back(p);
  return out;
}

}  // namespace

double fp_ratio(const MaximalField& mf, const ScalarField& v, const VectorField* a,
                const ComplexField& u) {
  const Grid& g = mf.m.grid;
  require_same_grid(g, v.grid, "fp_ratio");
  require_same_grid(g, u.grid, "fp_ratio");
  if (a) require_same_grid(g, a->grid, "fp_ratio");
  const double sup = u.values.cwiseAbs().maxCoeff();
  if (!(sup > 1e-30)) throw DegenerateTest("fp_ratio: test function is numerically zero");

  const double h = g.spacing;
  const double h3 = h * h * h;
  const Index step[3] = {1, g.dims[0], g.dims[0] * g.dims[1]};

  Ksum mass, energy;
  for (Index p = 0; p < g.size(); ++p) {
    const double au = std::norm(u.values[p]);
    mass.add(mf.m.values[p] * mf.m.values[p] * au * h3);
    energy.add(v.values[p] * au * h3);
    const auto ijk = g.unpack(p);
    for (int ax = 0; ax < 3; ++ax) {  // each edge once, in the +ax direction
      if (ijk[std::size_t(ax)] + 1 >= g.dims[std::size_t(ax)]) continue;
      const Index q = p + step[ax];
      Complex dq = u.values[q];
      if (a) {
        const double theta = 0.5 * (a->values(p, ax) + a->values(q, ax)) * h;
        dq *= std::exp(Complex(0.0, -theta));
      }
      energy.add(std::norm(dq - u.values[p]) / (h * h) * h3);
    }
  }
  if (!(energy.get() > 0.0))
    throw DegenerateTest("fp_ratio: zero energy, nothing to compare against");
  return mass.get() / energy.get();
}

FPReport fefferman_phong_check(const MaximalField& mf, const ScalarField& v,
                               const VectorField* a, Index n_tests, std::uint64_t rng_seed,
                               const FPReport* coarse) {
  const Grid& g = mf.m.grid;
  const double h = g.spacing;
  const Eigen::Vector3d blo = g.box_lo(), bhi = g.box_hi();
  const double width = (bhi - blo).minCoeff();
  const double r_lo = 4.0 * h;
  const double r_hi = std::max(width / 8.0, r_lo * (1.0 + 1e-9));
  Rng rng(rng_seed);

  FPReport rep;
  rep.n_test_functions = n_tests;
  for (Index trial = 0; trial < n_tests; ++trial) {
    const Index n_bumps = 1 + rng.uniform_int(5);
    ComplexField u(g);
    struct Bump {
      Eigen::Vector3d c;
      double sigma, amp;
    };
    std::vector<Bump> bumps;
    for (Index b = 0; b < n_bumps; ++b) {
      Bump bp;
      for (int ax = 0; ax < 3; ++ax)  // centers in the inner 70% of the box
        bp.c[ax] = blo[ax] + (0.15 + 0.7 * rng.uniform()) * (bhi[ax] - blo[ax]);
      bp.sigma = rng.uniform(r_lo, r_hi);
      bp.amp = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 1.0);
      bumps.push_back(bp);
    }
    for (Index p = 0; p < g.size(); ++p) {
      if (g.on_boundary(p)) continue;  // compact support in the open box
      const Eigen::Vector3d x = g.point(p);
      double val = 0.0;
      for (const Bump& bp : bumps) {
        const double r2 = (x - bp.c).squaredNorm();
        if (r2 > 9.0 * bp.sigma * bp.sigma) continue;  // hard truncation
        val += bp.amp * std::exp(-r2 / (2.0 * bp.sigma * bp.sigma));
      }
      u.values[p] = val;
    }
    if (!(u.values.cwiseAbs().maxCoeff() > 1e-30)) continue;  // cancelled bumps: skip
    rep.max_ratio = std::max(rep.max_ratio, fp_ratio(mf, v, a, u));
  }
  if (coarse && coarse->max_ratio > 0.0)
    rep.resolution_stability = rep.max_ratio / coarse->max_ratio;
  return rep;
}

L2DecayReport l2_decay_check(const SparseOperator& op, const ComplexField& f,
                             const MaximalField& mf, const DistanceField& df,
                             const L2DecayOptions& opt) {
  const Grid& g = op.grid;
  require_same_grid(g, f.grid, "l2_decay_check");
  require_same_grid(g, mf.m.grid, "l2_decay_check");
  require_same_grid(g, df.grid, "l2_decay_check");
  if (!(opt.dtilde > 0.0)) throw UnsupportedSetting("l2_decay_check: dtilde must be positive");

  Eigen::Vector3d tlo, thi;
  trust_box(g, 0.5, tlo, thi);
  for (Index p = 0; p < g.size(); ++p)
    if (std::abs(f.values[p]) > 0.0 && !in_box(g.point(p), tlo, thi))
      throw SupportTooLarge("l2_decay_check: f has mass outside the inner half-box");

  L2DecayReport rep;
  rep.dtilde = opt.dtilde;
  rep.t = opt.t;
  rep.degenerate_metric = clipped_fraction(mf) > 0.5;

  rep.eps_grid.resize(std::size_t(opt.n_eps));
  for (int i = 0; i < opt.n_eps; ++i)
    rep.eps_grid[std::size_t(i)] = opt.eps_max * double(i) / double(opt.n_eps - 1);
  rep.ratios.assign(std::size_t(opt.n_eps), 0.0);

  if (!(f.values.norm() > 0.0)) {  // nothing propagates: every eps is admissible
    rep.vacuous = true;
    rep.eps_best = opt.eps_max;
    return rep;
  }

  ComplexField u = std::isfinite(opt.t) ? resolvent_apply(op, opt.t, f, opt.solve_tol)
                                        : solve(op, f, opt.solve_tol).first;

  const double h3 = std::pow(g.spacing, 3);
  Ksum rhs_sum;
  for (Index p = 0; p < g.size(); ++p) {
    const double af = std::norm(f.values[p]);
    if (af > 0.0) rhs_sum.add(af / (mf.m.values[p] * mf.m.values[p]) * h3);
  }
  const double rhs = rhs_sum.get();

  std::vector<Index> region;
  for (Index p = 0; p < g.size(); ++p)
    if (df.d_values.values[p] >= opt.dtilde) region.push_back(p);
  if (region.empty()) {  // the metric never reaches the threshold
    rep.vacuous = true;
    rep.eps_best = 0.0;
    return rep;
  }

  for (int i = 0; i < opt.n_eps; ++i) {
    const double eps = rep.eps_grid[std::size_t(i)];
    Ksum lhs;
    for (Index p : region) {
      const double m2 = mf.m.values[p] * mf.m.values[p];
      lhs.add(m2 * std::norm(u.values[p]) * std::exp(2.0 * eps * df.d_values.values[p]) * h3);
    }
    rep.ratios[std::size_t(i)] = lhs.get() / rhs;
  }

  const double base = rep.ratios[0];
  if (!(base > 0.0)) {
    rep.vacuous = true;
    rep.eps_best = opt.eps_max;
    return rep;
  }
  if (rep.degenerate_metric) {  // box-clipped m: no exponential content to certify
    rep.eps_best = 0.0;
    rep.ratio_at_best = base;
    return rep;
  }
  for (int i = 0; i < opt.n_eps; ++i) {
    if (rep.ratios[std::size_t(i)] <= opt.growth_cap * base) {
      rep.eps_best = rep.eps_grid[std::size_t(i)];
      rep.ratio_at_best = rep.ratios[std::size_t(i)];
    }
  }
  return rep;
}

std::vector<GaffneyRow> gaffney_check(const SparseOperator& op, const ComplexField& f,
                                      const BoxSet& f_box, const BoxSet& e_box,
                                      const std::vector<double>& t_list,
                                      const std::vector<const MaximalField*>& mf_per_t,
                                      double eps_fit, double c_fit, double solve_tol) {
  const Grid& g = op.grid;
  require_same_grid(g, f.grid, "gaffney_check");
  if (t_list.size() != mf_per_t.size())
    throw UnsupportedSetting("gaffney_check: one maximal field per t is required");
  if (f_box.overlaps(e_box)) throw SetsOverlap("gaffney_check: E and F intersect");

  const std::vector<Index> f_nodes = nodes_in(g, f_box);
  const std::vector<Index> e_nodes = nodes_in(g, e_box);
  if (f_nodes.empty() || e_nodes.empty())
    throw EmptyIntersection("gaffney_check: a set contains no grid nodes");
  for (Index p = 0; p < g.size(); ++p)
    if (std::abs(f.values[p]) > 0.0 && !f_box.contains(g.point(p)))
      throw SupportTooLarge("gaffney_check: f has mass outside F");

  // Euclidean gap between the closed boxes
  double gap2 = 0.0;
  for (int ax = 0; ax < 3; ++ax) {
    const double d = std::max({0.0, e_box.lo[ax] - f_box.hi[ax], f_box.lo[ax] - e_box.hi[ax]});
    gap2 += d * d;
  }
  const double dist_euclid = std::sqrt(gap2);

  const double h3 = std::pow(g.spacing, 3);
  std::vector<GaffneyRow> table;
  for (std::size_t i = 0; i < t_list.size(); ++i) {
    const double t = t_list[i];
    const MaximalField& mf = *mf_per_t[i];
    require_same_grid(g, mf.m.grid, "gaffney_check");

    // metric distance between the sets under this t's weight
    DistanceOptions dopt;
    dopt.unconverged_limit = 2.0;  // gating happened upstream
    DistanceField df = agmon_distance(mf, f_nodes, dopt);
    double dist_agmon = kInf;
    for (Index p : e_nodes) dist_agmon = std::min(dist_agmon, df.d_values.values[p]);

    ComplexField u = resolvent_apply(op, t, f, solve_tol);
    Ksum lhs2, mf2;
    for (Index p : e_nodes) lhs2.add(std::norm(u.values[p]) * h3);
    for (Index p : f_nodes)
      mf2.add(mf.m.values[p] * mf.m.values[p] * std::norm(f.values[p]) * h3);

    GaffneyRow row;
    row.t = t;
    row.lhs = std::sqrt(lhs2.get());
    row.dist_euclid = dist_euclid;
    row.dist_agmon = dist_agmon;
    row.rhs = c_fit * t * t * std::exp(-eps_fit * dist_euclid / t) * std::sqrt(mf2.get());
    row.pass = row.lhs <= row.rhs;
    table.push_back(row);
  }
  return table;
}

HarnackReport harnack_check(const SparseOperator& op, const ComplexField& column,
                            Index source, const MaximalField& mf, double c_fraction,
                            Index n_balls, std::uint64_t rng_seed) {
  const Grid& g = op.grid;
  require_same_grid(g, column.grid, "harnack_check");
  require_same_grid(g, mf.m.grid, "harnack_check");
  if (op.has_magnetic)
    throw UnsupportedSetting("harnack_check: magnetic operators need the |u| variant");
  if (source < 0 || source >= g.size()) throw OutOfDomain("harnack_check: bad source index");
  if (!(c_fraction > 0.0)) throw UnsupportedSetting("harnack_check: c_fraction must be positive");

  const Eigen::Vector3d py = g.point(source);
  const double h = g.spacing;
  Rng rng(rng_seed);
  HarnackReport rep;
  rep.c_fraction = c_fraction;

  const Index max_attempts = 400 * std::max<Index>(n_balls, 1);
  for (Index attempt = 0; attempt < max_attempts && rep.n_balls < n_balls; ++attempt) {
    const Index x0 = rng.uniform_int(g.size());
    if (!mf.trusted_at(x0)) continue;
    const Eigen::Vector3d c = g.point(x0);
    const double r = c_fraction / mf.m.values[x0];
    // 2B inside the box and clear of both the pole and the Dirichlet wall
    if (g.wall_distance(c) < 2.0 * r + h) continue;
    if ((c - py).norm() < 2.0 * r + 2.0 * h) continue;

    double lo = kInf, hi = -kInf;
    Index n_nodes = 0;
    const Index reach = Index(std::ceil(r / h));
    const auto ijk = g.unpack(x0);
    for (Index dk = -reach; dk <= reach; ++dk)
      for (Index dj = -reach; dj <= reach; ++dj)
        for (Index di = -reach; di <= reach; ++di) {
          const Index i = ijk[0] + di, j = ijk[1] + dj, k = ijk[2] + dk;
          if (!g.contains(i, j, k)) continue;
          if (double(di * di + dj * dj + dk * dk) * h * h > r * r) continue;
          const double val = std::real(column.values[g.index(i, j, k)]);
          lo = std::min(lo, val);
          hi = std::max(hi, val);
          ++n_nodes;
        }
    if (n_nodes < 8) continue;  // ball too small to say anything
    if (!(lo > 0.0))
      throw NonpositiveSolution("harnack_check: solution is not positive on a sampled ball");
    rep.ratios.push_back(hi / lo);
    rep.m_values.push_back(mf.m.values[x0]);
    rep.max_ratio = std::max(rep.max_ratio, hi / lo);
    rep.min_ratio = std::min(rep.min_ratio, hi / lo);
    ++rep.n_balls;
  }
  if (rep.n_balls == 0)
    throw InsufficientResolution("harnack_check: no admissible balls at this resolution");
  return rep;
}

namespace {

struct EnvPair {
  double d, z;        // metric distance, log(|G| |x-y|)
  Index x_idx, y_idx;
  double euclid, gamma;
};

std::vector<EnvPair> collect_pairs(const ComplexField& column, const DistanceField& df,
                                   const MaximalField& mf, const EnvelopeOptions& opt) {
  const Grid& g = mf.m.grid;
  require_same_grid(g, column.grid, "envelope pairs");
  require_same_grid(g, df.grid, "envelope pairs");
  if (df.source.size() != 1)
    throw UnsupportedSetting("envelope pairs need single-source distance fields");
  const Index y = df.source[0];
  const Eigen::Vector3d py = g.point(y);
  Eigen::Vector3d tlo, thi;
  trust_box(g, opt.trust_fraction, tlo, thi);

  std::vector<EnvPair> out;
  const double rmin = opt.pole_exclusion * g.spacing;
  // a mostly box-clipped metric has no trusted points at all; the no-decay
  // branch still needs pairs, so fall back to converged-and-resolved there
  const bool degenerate = clipped_fraction(mf) > 0.5;
  for (Index p = 0; p < g.size(); ++p) {
    if (degenerate) {
      if (!mf.converged_at(p) || mf.under_resolved_at(p)) continue;
    } else if (!mf.trusted_at(p)) {
      continue;
    }
    const Eigen::Vector3d x = g.point(p);
    if (!in_box(x, tlo, thi)) continue;
    const double r = (x - py).norm();
    if (r < rmin) continue;
    const double gam = std::abs(column.values[p]);
    const double val = gam * r;
    if (!(val > 0.0) || !std::isfinite(val)) continue;
    const double d = df.d_values.values[p];
    if (!std::isfinite(d)) continue;
    out.push_back({d, std::log(val), p, y, r, gam});
  }
  return out;
}

}  // namespace

DecayReport envelope_fit(const std::vector<const ComplexField*>& columns,
                         const std::vector<const DistanceField*>& distances,
                         const MaximalField& mf, const EnvelopeOptions& opt) {
  if (columns.empty() || columns.size() != distances.size())
    throw UnsupportedSetting("envelope_fit: need matching columns and distance fields");
  const Grid& g = mf.m.grid;

  std::vector<EnvPair> pairs;
  for (std::size_t i = 0; i < columns.size(); ++i) {
    std::vector<EnvPair> part = collect_pairs(*columns[i], *distances[i], mf, opt);
    // seed thinning off the source node, not the column position, so the fit
    // is invariant under permutations of the input columns
    const std::uint64_t salt =
        distances[i]->source.empty() ? 0u : std::uint64_t(distances[i]->source.front());
    Rng rng(opt.rng_seed ^ (0x9e3779b97f4a7c15ull * (salt + 1)));
    thin(part, std::size_t(opt.max_pairs_per_source), rng);
    pairs.insert(pairs.end(), part.begin(), part.end());
  }
  if (Index(pairs.size()) < 50)
    throw InsufficientPairs("envelope_fit: fewer than 50 admissible pairs");

  DecayReport rep;
  rep.n_pairs = Index(pairs.size());
  rep.resolution = g.spacing;
  trust_box(g, opt.trust_fraction, rep.trust_lo, rep.trust_hi);
  rep.no_decay = clipped_fraction(mf) > 0.5;

  std::vector<double> ds, zs;
  ds.reserve(pairs.size());
  zs.reserve(pairs.size());
  for (const EnvPair& p : pairs) {
    ds.push_back(p.d);
    zs.push_back(p.z);
  }
  const LineFit ls = fit_line(ds, zs);
  rep.ls_slope = -ls.slope;
  rep.ls_intercept = ls.intercept;
  rep.r_squared = ls.r2;
  if (!rep.no_decay && rep.ls_slope <= 0.0)
    throw NondecayingData("envelope_fit: kernel does not decay against a nontrivial metric");

  // envelope rates from binned extremes
  double dmin = kInf, dmax = -kInf;
  for (double d : ds) {
    dmin = std::min(dmin, d);
    dmax = std::max(dmax, d);
  }
  double eps_up = 0.0, eps_lo = 0.0;
  if (!rep.no_decay && dmax - dmin > 1e-9) {
    const int nb = std::max(2, opt.n_bins);
    std::vector<double> bin_max(std::size_t(nb), -kInf), bin_min(std::size_t(nb), kInf);
    for (const EnvPair& p : pairs) {
      int b = int((p.d - dmin) / (dmax - dmin) * nb);
      b = std::clamp(b, 0, nb - 1);
      bin_max[std::size_t(b)] = std::max(bin_max[std::size_t(b)], p.z);
      bin_min[std::size_t(b)] = std::min(bin_min[std::size_t(b)], p.z);
    }
    std::vector<double> xs, ymax, ymin;
    for (int b = 0; b < nb; ++b) {
      if (bin_max[std::size_t(b)] == -kInf) continue;  // empty bin
      xs.push_back(dmin + (double(b) + 0.5) / nb * (dmax - dmin));
      ymax.push_back(bin_max[std::size_t(b)]);
      ymin.push_back(bin_min[std::size_t(b)]);
    }
    eps_up = std::max(0.0, -fit_line(xs, ymax).slope);
    eps_lo = std::max(0.0, -fit_line(xs, ymin).slope);
  }
  rep.eps_upper = eps_up;
  rep.eps_lower = opt.fit_lower ? eps_lo : 0.0;

  // calibrate the intercepts so that every pair is covered
  double log_cu = -kInf, log_cl = kInf;
  for (const EnvPair& p : pairs) {
    log_cu = std::max(log_cu, p.z + rep.eps_upper * p.d);
    if (opt.fit_lower) log_cl = std::min(log_cl, p.z + rep.eps_lower * p.d);
  }
  if (!opt.fit_lower) {
    rep.eps_lower = 0.0;
    log_cl = log_cu;  // degenerate lower envelope, kept consistent
  }
  log_cl = std::min(log_cl, log_cu);  // constants stay ordered
  rep.c_upper = std::exp(log_cu);
  rep.c_lower = std::exp(log_cl);

  // ball-averaged variant of the upper bound, recorded as a log-gap
  const double h = g.spacing;
  const Index stride = std::max<Index>(1, Index(pairs.size()) / opt.ball_avg_samples);
  for (std::size_t ip = 0; ip < pairs.size(); ip += std::size_t(stride)) {
    const EnvPair& p = pairs[ip];
    const double rb = 1.0 / mf.m.values[p.x_idx];
    if (p.euclid <= 2.0 * rb) continue;  // keep the pole out of the averaging ball
    const auto ijk = g.unpack(p.x_idx);
    const Index reach = Index(std::ceil(rb / h));
    // average the column this pair came from
    Ksum own;
    Index n2 = 0;
    const ComplexField* col = nullptr;
    for (std::size_t ci = 0; ci < distances.size(); ++ci)
      if (distances[ci]->source[0] == p.y_idx) col = columns[ci];
    if (!col) continue;
    for (Index dk = -reach; dk <= reach; ++dk)
      for (Index dj = -reach; dj <= reach; ++dj)
        for (Index di = -reach; di <= reach; ++di) {
          const Index i = ijk[0] + di, j = ijk[1] + dj, k = ijk[2] + dk;
          if (!g.contains(i, j, k)) continue;
          if (double(di * di + dj * dj + dk * dk) * h * h > rb * rb) continue;
          own.add(std::norm(col->values[g.index(i, j, k)]));
          ++n2;
        }
    const double avg = std::sqrt(own.get() / double(n2));
    if (!(avg > 0.0)) continue;
    const double z = std::log(avg * p.euclid);
    rep.ball_avg_gap = std::max(rep.ball_avg_gap, z - (log_cu - rep.eps_upper * p.d));
  }
  return rep;
}

SmallBallReport perturbation_smallball_check(const ComplexField& gamma_v,
                                             const ComplexField& gamma_0, Index source,
                                             const MaximalField& mf, double p_tilde) {
  const Grid& g = mf.m.grid;
  require_same_grid(g, gamma_v.grid, "perturbation_smallball_check");
  require_same_grid(g, gamma_0.grid, "perturbation_smallball_check");
  if (source < 0 || source >= g.size())
    throw OutOfDomain("perturbation_smallball_check: bad source index");
  const double delta = 2.0 - 3.0 / p_tilde;
  if (!(delta > 0.0))
    throw UnsupportedSetting("perturbation_smallball_check: p_tilde gives nonpositive delta");

  const Eigen::Vector3d py = g.point(source);
  const double h = g.spacing;
  const double my = mf.m.values[source];
  const double r_hi = 1.0 / my;

  SmallBallReport rep;
  rep.delta = delta;
  rep.min_product = kInf;
  double min_product_near = kInf;  // restricted to [4h, 0.5/m]
  for (Index p = 0; p < g.size(); ++p) {
    if (g.on_boundary(p)) continue;
    const double r = (g.point(p) - py).norm();
    if (r < 4.0 * h || r >= r_hi) continue;
    const double diff = std::abs(gamma_v.values[p] - gamma_0.values[p]);
    rep.max_ratio = std::max(rep.max_ratio, diff * r / std::pow(r * my, delta));
    const double prod = std::abs(gamma_v.values[p]) * r;
    rep.min_product = std::min(rep.min_product, prod);
    if (r <= 0.5 * r_hi) min_product_near = std::min(min_product_near, prod);
    ++rep.n_pairs;
  }
  if (rep.n_pairs == 0)
    throw NoSmallBallPairs("perturbation_smallball_check: no pairs with 4h <= |x-y| < 1/m");
  if (std::isfinite(min_product_near)) rep.min_product = min_product_near;
  return rep;
}

std::vector<EnvelopePoint> envelope_table(const ComplexField& column, Index source,
                                          const DistanceField& df, const MaximalField& mf,
                                          const EnvelopeOptions& opt) {
  if (df.source.size() != 1 || df.source[0] != source)
    throw UnsupportedSetting("envelope_table: distance field does not match the source");
  std::vector<EnvPair> pairs = collect_pairs(column, df, mf, opt);
  // same per-source thinning seed as envelope_fit, so the exported table is
  // exactly the pair set a single-column fit was calibrated on
  Rng rng(opt.rng_seed ^ (0x9e3779b97f4a7c15ull * (std::uint64_t(source) + 1)));
  thin(pairs, std::size_t(opt.max_pairs_per_source), rng);
  std::vector<EnvelopePoint> out;
  out.reserve(pairs.size());
  for (const EnvPair& p : pairs)
    out.push_back({p.x_idx, p.y_idx, p.euclid, p.d, p.gamma, p.z});
  return out;
}

void write_envelope_csv(const std::string& path, const std::vector<EnvelopePoint>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_envelope_csv: cannot open " + path);
  out << "x_idx,y_idx,euclid,agmon_d,gamma_abs,log_env\n";
  out << std::setprecision(17);
  for (const EnvelopePoint& r : rows)
    out << r.x_idx << ',' << r.y_idx << ',' << r.euclid << ',' << r.agmon_d << ','
        << r.gamma_abs << ',' << r.log_env << '\n';
  if (!out) throw IoError("write_envelope_csv: write failed for " + path);
}

}  // namespace agmonlab
