#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "agmonlab/distance.hpp"
#include "agmonlab/rng.hpp"
#include "agmonlab/weights.hpp"

using namespace agmonlab;

namespace {
constexpr double kPi = std::numbers::pi;
const double kMConst = std::sqrt(4.0 * kPi / 3.0);
// chamfer gauge extremes over lattice directions, unit metric
const double kSharp26 = std::sqrt(1.0 + (std::sqrt(2.0) - 1.0) * (std::sqrt(2.0) - 1.0) +
                                  (std::sqrt(3.0) - std::sqrt(2.0)) *
                                      (std::sqrt(3.0) - std::sqrt(2.0)));  // 1.1280928
const double kSharp18 = (1.0 + std::sqrt(2.0)) / std::sqrt(3.0);           // 1.3938469
const double kSharp6 = std::sqrt(3.0);

MaximalField constant_metric(const Grid& g, double m) {
  MaximalField mf;
  mf.m = ScalarField(g, Eigen::VectorXd::Constant(g.size(), m));
  mf.rhat = ScalarField(g, Eigen::VectorXd::Constant(g.size(), 1.0 / m));
  mf.flags.assign(std::size_t(g.size()), MaximalField::kConverged);
  mf.half_diameter = g.half_diameter();
  return mf;
}

const MaximalField& growth_field_33() {  // w = |x|^2 on [-4,4]^3
  static const MaximalField mf =
      maximal_field(sample_potential(PotentialModel::radial_power(2.0), make_box_grid(4.0, 33)));
  return mf;
}

const MaximalField& growth_field_17() {  // w = |x|^2 on [-2,2]^3
  static const MaximalField mf =
      maximal_field(sample_potential(PotentialModel::radial_power(2.0), make_box_grid(2.0, 17)));
  return mf;
}

double worst_ratio(const DistanceField& d, const MaximalField& mf) {
  const Grid& g = d.grid;
  const Eigen::Vector3d px = g.point(d.source.front());
  double worst = 0.0;
  for (Index y = 0; y < g.size(); ++y) {
    if (y == d.source.front()) continue;
    const double e = (g.point(y) - px).norm() * mf.m.values[y];
    worst = std::max(worst, d.d_values.values[y] / e);
  }
  return worst;
}
}  // namespace

TEST_CASE("chamfer gauge on a constant metric: exact directions and extremes") {
  Grid g = make_box_grid(1.0, 21);  // h = 0.1, center on-grid
  MaximalField mf = constant_metric(g, 1.0);
  const Index c = g.index(10, 10, 10);
  DistanceOptions o26, o18, o6;
  o18.neighborhood = Neighborhood::kEdges;
  o6.neighborhood = Neighborhood::kFaces;
  DistanceField d26 = agmon_distance(mf, c, o26);
  DistanceField d18 = agmon_distance(mf, c, o18);
  DistanceField d6 = agmon_distance(mf, c, o6);

  const double h = g.spacing;
  for (Index t = 1; t <= 10; ++t) {
    // axis targets exact for every connectivity
    const Index ax = g.index(10 + t, 10, 10);
    CHECK(d26.d_values[ax] == doctest::Approx(t * h).epsilon(1e-12));
    CHECK(d18.d_values[ax] == doctest::Approx(t * h).epsilon(1e-12));
    CHECK(d6.d_values[ax] == doctest::Approx(t * h).epsilon(1e-12));
    // face diagonals exact once diagonal moves exist
    const Index fd = g.index(10 + t, 10 - t, 10);
    CHECK(d26.d_values[fd] == doctest::Approx(t * h * std::sqrt(2.0)).epsilon(1e-12));
    CHECK(d18.d_values[fd] == doctest::Approx(t * h * std::sqrt(2.0)).epsilon(1e-12));
    // body diagonals exact only with the full stencil
    const Index bd = g.index(10 + t, 10 + t, 10 - t);
    CHECK(d26.d_values[bd] == doctest::Approx(t * h * std::sqrt(3.0)).epsilon(1e-12));
  }

  // worst-case anisotropy hits the known gauge constants
  CHECK(worst_ratio(d6, mf) == doctest::Approx(kSharp6).epsilon(1e-9));
  CHECK(worst_ratio(d18, mf) == doctest::Approx(kSharp18).epsilon(1e-9));
  const double w26 = worst_ratio(d26, mf);
  CHECK(w26 > 1.127);
  CHECK(w26 <= kSharp26 * (1.0 + 1e-12));

  // richer stencils can only shorten paths
  for (Index i = 0; i < g.size(); ++i) {
    CHECK(d26.d_values[i] <= d18.d_values[i] * (1.0 + 1e-12));
    CHECK(d18.d_values[i] <= d6.d_values[i] * (1.0 + 1e-12));
  }
}

TEST_CASE("constant metric distance equals m |x-y| up to the gauge bound") {
  Grid g = make_box_grid(1.25, 21);
  MaximalField mf = constant_metric(g, kMConst);
  const Index c = g.index(10, 10, 10);
  DistanceField d = agmon_distance(mf, c);
  CHECK(d.d_values[c] == 0.0);
  for (Index y = 0; y < g.size(); ++y) {
    if (y == c) continue;
    const double ref = kMConst * (g.point(y) - g.point(c)).norm();
    CHECK(d.d_values[y] >= ref * (1.0 - 1e-12));
    CHECK(d.d_values[y] <= ref * kSharp26 * (1.0 + 1e-12));
  }
  // the straight-line example: unit step along an axis
  const Index t = g.index(18, 10, 10);  // x = (1, 0, 0)
  CHECK(d.d_values[t] == doctest::Approx(kMConst).epsilon(1e-12));
  CHECK(std::abs(d.d_values[t] - kMConst) / kMConst < 0.08);
}

TEST_CASE("computed constant-weight metric stays near the straight-line value") {
  Grid g = make_box_grid(1.25, 21);
  ScalarField w = sample_potential(PotentialModel::constant(1.0), g);
  MaximalField mf = maximal_field(w);
  const Index c = g.index(10, 10, 10);
  DistanceField d = agmon_distance(mf, c);
  CHECK(d.low_confidence_fraction > 0.0);  // wall shell is box-clipped
  double lo = 10.0, hi = 0.0;
  for (Index y = 0; y < g.size(); ++y) {
    if (y == c || !mf.trusted_at(y)) continue;
    const double r = d.d_values[y] / (kMConst * (g.point(y) - g.point(c)).norm());
    lo = std::min(lo, r);
    hi = std::max(hi, r);
  }
  // quadrature wiggle plus the wall sag of the computed metric stay small
  CHECK(lo > 0.93);
  CHECK(hi < kSharp26 * 1.01);
}

TEST_CASE("sources are zero and distances nonnegative") {
  Grid g = make_box_grid(1.0, 9);
  ScalarField w = sample_potential(PotentialModel::constant(1.0), g);
  MaximalField mf = maximal_field(w);
  DistanceField d = agmon_distance(mf, std::vector<Index>{0, g.index(4, 4, 4)});
  CHECK(d.d_values[0] == 0.0);
  CHECK(d.d_values[g.index(4, 4, 4)] == 0.0);
  CHECK(d.d_values.values.minCoeff() >= 0.0);
  CHECK(all_finite(d.d_values));
}

TEST_CASE("distance is symmetric in the endpoints") {
  const MaximalField& mf = growth_field_17();
  const Grid& g = mf.m.grid;
  Rng rng(77);
  for (int rep = 0; rep < 5; ++rep) {
    const Index a = rng.uniform_int(g.size());
    const Index b = rng.uniform_int(g.size());
    DistanceField da = agmon_distance(mf, a);
    DistanceField db = agmon_distance(mf, b);
    const double dab = da.d_values[b], dba = db.d_values[a];
    CHECK(std::abs(dab - dba) <= 1e-12 * std::max(1.0, dab));
  }
}

TEST_CASE("triangle inequality holds on sampled triples") {
  const MaximalField& mf = growth_field_17();
  const Grid& g = mf.m.grid;
  Rng rng(91);
  for (int rep = 0; rep < 5; ++rep) {
    const Index x = rng.uniform_int(g.size());
    const Index y = rng.uniform_int(g.size());
    const Index z = rng.uniform_int(g.size());
    DistanceField dx = agmon_distance(mf, x);
    DistanceField dy = agmon_distance(mf, y);
    CHECK(dx.d_values[z] <= dx.d_values[y] + dy.d_values[z] + 1e-12);
  }
}

TEST_CASE("set distance equals the pointwise minimum over sources") {
  Grid g = make_box_grid(1.0, 8);
  ScalarField w = sample_potential(PotentialModel::constant(1.0), g);
  MaximalField mf = maximal_field(w);
  const std::vector<Index> srcs{0, g.index(7, 3, 2), g.index(3, 6, 5)};
  DistanceField dset = agmon_distance(mf, srcs);
  std::vector<DistanceField> singles;
  for (Index s : srcs) singles.push_back(agmon_distance(mf, s));
  for (Index i = 0; i < g.size(); ++i) {
    double best = singles[0].d_values[i];
    for (const auto& f : singles) best = std::min(best, f.d_values[i]);
    CHECK(dset.d_values[i] == best);
  }
}

TEST_CASE("distance is monotone in the metric") {
  Grid g = make_box_grid(1.0, 9);
  Rng rng(5);
  Eigen::VectorXd base(g.size()), extra(g.size());
  for (Index i = 0; i < g.size(); ++i) {
    base[i] = 0.5 + rng.uniform();
    extra[i] = rng.uniform();
  }
  MaximalField m1 = constant_metric(g, 1.0), m2 = constant_metric(g, 1.0);
  m1.m.values = base;
  m2.m.values = base + extra;
  for (Index s : {Index(0), g.index(4, 4, 4), g.index(8, 0, 8)}) {
    DistanceField d1 = agmon_distance(m1, s);
    DistanceField d2 = agmon_distance(m2, s);
    for (Index i = 0; i < g.size(); ++i) CHECK(d1.d_values[i] <= d2.d_values[i] + 1e-12);
  }
}

TEST_CASE("axis rays on the growth weight match the line integral of m") {
  const MaximalField& mf = growth_field_33();
  const Grid& g = mf.m.grid;
  const Index c = g.index(16, 16, 16);
  DistanceField d = agmon_distance(mf, c);
  const double h = g.spacing;

  auto ray_integral = [&](int axis, int dir, Index steps) {
    double acc = 0.0;
    for (Index t = 0; t < steps; ++t) {
      Index i0[3] = {16, 16, 16}, i1[3] = {16, 16, 16};
      i0[axis] += dir * t;
      i1[axis] += dir * (t + 1);
      acc += 0.5 *
             (mf.m.values[g.index(i0[0], i0[1], i0[2])] +
              mf.m.values[g.index(i1[0], i1[1], i1[2])]) *
             h;
    }
    return acc;
  };

  for (int axis = 0; axis < 3; ++axis)
    for (int dir : {-1, 1})
      for (Index steps : {Index(8), Index(12), Index(16)}) {
        Index tgt[3] = {16, 16, 16};
        tgt[axis] += dir * steps;
        const double got = d.d_values[g.index(tgt[0], tgt[1], tgt[2])];
        const double want = ray_integral(axis, dir, steps);
        CHECK(std::abs(got - want) / want < 0.10);
      }
}

TEST_CASE("metric convergence gate and bad sources") {
  Grid g = make_box_grid(1.0, 9);
  MaximalField mf = constant_metric(g, 1.0);
  CHECK_THROWS_AS(agmon_distance(mf, std::vector<Index>{}), EmptySource);
  CHECK_THROWS_AS(agmon_distance(mf, Index(-1)), OutOfDomain);
  CHECK_THROWS_AS(agmon_distance(mf, g.size()), OutOfDomain);

  // clear the converged bit on 15% of the points
  const Index n_bad = g.size() * 15 / 100;
  for (Index i = 0; i < n_bad; ++i) mf.flags[std::size_t(i * 6)] = 0;
  CHECK(mf.unconverged_fraction() > 0.10);
  CHECK_THROWS_AS(agmon_distance(mf, Index(0)), UnconvergedMetric);
  DistanceOptions lax;
  lax.unconverged_limit = 0.2;
  CHECK_NOTHROW(agmon_distance(mf, Index(0), lax));
}

TEST_CASE("boundary hug flag tracks wall-running geodesics") {
  // 5^3, source center: every optimal two-hop path has an interior midpoint
  Grid g5 = make_box_grid(1.0, 5);
  DistanceField d5 = agmon_distance(constant_metric(g5, 1.0), g5.index(2, 2, 2));
  CHECK(!d5.boundary_hug);
  // 6-connectivity forces corner predecessors onto the boundary
  Grid g9 = make_box_grid(1.0, 9);
  DistanceOptions o6;
  o6.neighborhood = Neighborhood::kFaces;
  DistanceField d9 = agmon_distance(constant_metric(g9, 1.0), g9.index(4, 4, 4), o6);
  CHECK(d9.boundary_hug);
}

TEST_CASE("lemma battery on the constant weight") {
  Grid g = make_box_grid(1.25, 21);
  MaximalField mf = constant_metric(g, kMConst);
  const Index c = g.index(10, 10, 10);
  DistanceField d = agmon_distance(mf, c);
  PropertyReport rep = check_distance_lemmas(d, mf, 2024);
  CHECK(rep.all_pass());

  const auto* bounded = rep.find("d_bounded");
  REQUIRE(bounded != nullptr);
  CHECK(bounded->n_samples > 50);
  CHECK(bounded->worst <= kSharp26);  // continuum bound 1, gauge stretch on top
  CHECK(bounded->worst > 0.8);

  const auto* expo = rep.find("growth_exponent");
  REQUIRE(expo != nullptr);
  CHECK(expo->n_samples > 100);
  CHECK(expo->worst > 0.9);
  CHECK(expo->worst < 1.6);
  const auto* cst = rep.find("growth_constant");
  REQUIRE(cst != nullptr);
  CHECK(cst->worst > 0.0);

  const auto* sepr = rep.find("aprop_separation");
  REQUIRE(sepr != nullptr);
  CHECK(sepr->n_samples > 50);
  CHECK(sepr->worst >= 1.9);  // separated pairs sit >= 2 gauge lengths apart

  // the exact growth inequality for a constant metric: d >= (1 + m sep)/2
  const Eigen::Vector3d pc = g.point(c);
  for (Index y = 0; y < g.size(); ++y) {
    const double ms = kMConst * (g.point(y) - pc).norm();
    if (ms < 2.0) continue;
    CHECK(d.d_values[y] >= (1.0 + ms) / 2.0 * (1.0 - 1e-12));
  }
}

TEST_CASE("growth-weight exponent is stable under refinement") {
  const MaximalField& m33 = growth_field_33();
  DistanceField d33 = agmon_distance(m33, m33.m.grid.index(16, 16, 16));
  PropertyReport r33 = check_distance_lemmas(d33, m33, 31337);
  const auto* e33 = r33.find("growth_exponent");
  REQUIRE(e33 != nullptr);
  CHECK(e33->worst > 0.0);
  CHECK(e33->worst <= 1.0);

  MaximalField m65 =
      maximal_field(sample_potential(PotentialModel::radial_power(2.0), make_box_grid(4.0, 65)));
  DistanceField d65 = agmon_distance(m65, m65.m.grid.index(32, 32, 32));
  PropertyReport r65 = check_distance_lemmas(d65, m65, 31337);
  const auto* e65 = r65.find("growth_exponent");
  REQUIRE(e65 != nullptr);
  CHECK(e65->worst > 0.0);
  CHECK(std::abs(e65->worst - e33->worst) <= 0.20 * e33->worst);
}

TEST_CASE("pair tables and file round trips") {
  Grid g = make_box_grid(1.0, 9);
  MaximalField mf = constant_metric(g, 2.0);
  const Index c = g.index(4, 4, 4);
  DistanceField d = agmon_distance(mf, c);

  std::vector<Index> targets{0, g.index(8, 4, 4), g.index(2, 7, 1)};
  auto rows = pair_table(d, targets);
  REQUIRE(rows.size() == 3);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].x_idx == c);
    CHECK(rows[i].y_idx == targets[i]);
    CHECK(rows[i].euclid ==
          doctest::Approx((g.point(targets[i]) - g.point(c)).norm()).epsilon(1e-14));
    CHECK(rows[i].agmon_d == d.d_values[targets[i]]);
  }

  DistanceField dset = agmon_distance(mf, std::vector<Index>{0, g.index(8, 8, 8)});
  auto set_rows = pair_table(dset, targets);
  CHECK(set_rows[0].x_idx == -1);
  CHECK(set_rows[0].euclid == 0.0);  // target 0 is itself a source

  const char* csv_path = "pair_table_tmp.csv";
  write_pair_csv(csv_path, rows);
  std::ifstream in(csv_path);
  REQUIRE(in.good());
  std::string header;
  std::getline(in, header);
  CHECK(header == "x_idx,y_idx,euclid,agmon_d");
  int n_rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string tok;
    std::getline(ss, tok, ',');
    CHECK(std::stoll(tok) == rows[std::size_t(n_rows)].x_idx);
    std::getline(ss, tok, ',');
    CHECK(std::stoll(tok) == rows[std::size_t(n_rows)].y_idx);
    std::getline(ss, tok, ',');
    CHECK(std::stod(tok) == doctest::Approx(rows[std::size_t(n_rows)].euclid).epsilon(1e-15));
    std::getline(ss, tok, ',');
    CHECK(std::stod(tok) == doctest::Approx(rows[std::size_t(n_rows)].agmon_d).epsilon(1e-15));
    ++n_rows;
  }
  in.close();
  CHECK(n_rows == 3);
  std::remove(csv_path);

  const char* agf_path = "distance_tmp.agf1";
  write_agf1(agf_path, d.d_values);
  Agf1Contents back = read_agf1(agf_path);
  CHECK(!back.is_complex);
  CHECK(back.grid.same_layout(g));
  CHECK((back.scalar.values - d.d_values.values).lpNorm<Eigen::Infinity>() == 0.0);
  std::remove(agf_path);
}
