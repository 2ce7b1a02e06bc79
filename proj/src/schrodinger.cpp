#include "agmonlab/schrodinger.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <fstream>
#include <iomanip>
#include <limits>
#include <type_traits>
#include <vector>

namespace agmonlab {

namespace {

constexpr double kPi = 3.14159265358979323846;

SparseOperator assemble_impl(const ScalarField& v, const VectorField* a,
                             const VectorField* a_diag, double shift) {
  const Grid& g = v.grid;
  if (g.size() == 0) throw GridMismatch("assemble: empty grid");
  if (a) require_same_grid(g, a->grid, "assemble (magnetic potential)");
  if (a_diag) require_same_grid(g, a_diag->grid, "assemble (matrix A)");
  if (a && a_diag)
    throw UnsupportedMatrixA("assemble: magnetic coupling requires A = I");
  if (shift < 0.0) throw UnsupportedSetting("assemble: negative shift");
  for (Index i = 0; i < g.size(); ++i)
    if (v.values[i] < -1e-12)
      throw NegativePotential("assemble: V < 0 at linear index " + std::to_string(i));
  if (a_diag)
    for (Index i = 0; i < g.size(); ++i)
      for (int ax = 0; ax < 3; ++ax)
        if (!(a_diag->values(i, ax) > 0.0))
          throw EllipticityViolation("assemble: A diagonal not positive at index " +
                                     std::to_string(i));

  const double h = g.spacing;
  const double inv_h2 = 1.0 / (h * h);
  const Index n = g.size();

  std::vector<Eigen::Triplet<Complex>> trips;
  trips.reserve(std::size_t(7 * n));
  const Index step[3] = {1, g.dims[0], g.dims[0] * g.dims[1]};

  for (Index k = 0; k < g.dims[2]; ++k)
    for (Index j = 0; j < g.dims[1]; ++j)
      for (Index i = 0; i < g.dims[0]; ++i) {
        const Index p = g.index(i, j, k);
        if (g.on_boundary(i, j, k)) {
          trips.emplace_back(int(p), int(p), Complex(1.0, 0.0));
          continue;
        }
        double diag = shift + v.values[p];
        for (int ax = 0; ax < 3; ++ax)
          for (int dir = -1; dir <= 1; dir += 2) {
            const Index q = p + dir * step[ax];
            const double w =
                a_diag ? 0.5 * (a_diag->values(p, ax) + a_diag->values(q, ax)) : 1.0;
            diag += w * inv_h2;
            Complex hop(-w * inv_h2, 0.0);
            if (a) {
              const double theta =
                  0.5 * (a->values(p, ax) + a->values(q, ax)) * (dir * h);
              hop *= std::exp(Complex(0.0, -theta));
            }
            if (!g.on_boundary(q)) trips.emplace_back(int(p), int(q), hop);
          }
        trips.emplace_back(int(p), int(p), Complex(diag, 0.0));
      }

  SparseOperator op;
  op.grid = g;
  op.matrix.resize(n, n);
  op.matrix.setFromTriplets(trips.begin(), trips.end());
  op.matrix.makeCompressed();
  op.v = v;
  op.shift = shift;
  op.has_magnetic = a != nullptr;
  op.a_kind = a_diag ? MatrixAKind::kRealElliptic : MatrixAKind::kIdentity;
  op.hermitian = true;
  op.is_real = !op.has_magnetic;
  if (op.is_real) {
    op.real_matrix = op.matrix.real();
    op.real_matrix.makeCompressed();
  }
  return op;
}

/// Jacobi-preconditioned CG in the Hermitian inner product. Returns
/// {iterations, true relative residual}; curvature that goes non-real or
/// non-positive is a definiteness breakdown.
template <class Mat, class Vec>
std::pair<Index, double> pcg(const Mat& A, const Vec& b, Vec& x, double tol, Index cap) {
  using Scalar = typename Vec::Scalar;
  const Index n = b.size();
  Vec dinv(n);
  for (Index i = 0; i < n; ++i) {
    const double d = std::real(Scalar(A.coeff(i, i)));
    if (!(d > 0.0))
      throw NotPositiveDefinite("solve: nonpositive diagonal at row " + std::to_string(i));
    dinv[i] = Scalar(1.0 / d);
  }
  x = Vec::Zero(n);
  const double bnorm = b.norm();
  if (bnorm == 0.0) return {0, 0.0};
  Vec r = b;
  Vec z = dinv.cwiseProduct(r);
  double rz = std::real(r.dot(z));
  if (!(rz > 0.0)) throw NotPositiveDefinite("solve: preconditioned residual energy <= 0");
  Vec p = z, Ap(n);
  for (Index it = 1; it <= cap; ++it) {
    Ap.noalias() = A * p;
    const Scalar curv_full = p.dot(Ap);
    const double curv = std::real(curv_full);
    if constexpr (std::is_same_v<Scalar, Complex>) {
      if (std::abs(std::imag(curv_full)) >
          1e-8 * std::max(std::abs(curv), std::numeric_limits<double>::min()))
        throw NotPositiveDefinite("solve: curvature acquired an imaginary part");
    }
    if (!(curv > 0.0)) throw NotPositiveDefinite("solve: nonpositive curvature");
    const double alpha = rz / curv;
    x += alpha * p;
    r -= alpha * Ap;
    if (r.norm() <= tol * bnorm) {
      Vec rt = b - A * x;  // trust only the recomputed residual
      const double res = rt.norm() / bnorm;
      if (res <= tol) return {it, res};
      r = rt;
    }
    z = dinv.cwiseProduct(r);
    const double rz_new = std::real(r.dot(z));
    if (!(rz_new >= 0.0)) throw NotPositiveDefinite("solve: indefinite preconditioner step");
    const double beta = rz_new / rz;
    rz = rz_new;
    p = z + beta * p;
  }
  throw MaxIterations("solve: conjugate gradients hit the 20 N iteration cap");
}

std::vector<Index> ball_points(const Grid& g, const Eigen::Vector3d& x0, double radius) {
  std::vector<Index> pts;
  const double r2 = radius * radius;
  for (Index p = 0; p < g.size(); ++p)
    if ((g.point(p) - x0).squaredNorm() <= r2) pts.push_back(p);
  return pts;
}

void require_ball_in_box(const Grid& g, const Eigen::Vector3d& x0, double radius,
                         const char* what) {
  const Eigen::Vector3d lo = g.box_lo(), hi = g.box_hi();
  for (int ax = 0; ax < 3; ++ax)
    if (x0[ax] - radius < lo[ax] || x0[ax] + radius > hi[ax])
      throw BallOutOfBox(std::string(what) + ": ball leaves the box");
}

}  // namespace

SparseOperator assemble(const ScalarField& v, double shift) {
  return assemble_impl(v, nullptr, nullptr, shift);
}

SparseOperator assemble(const ScalarField& v, const VectorField& a, double shift) {
  return assemble_impl(v, &a, nullptr, shift);
}

SparseOperator assemble_elliptic(const ScalarField& v, const VectorField& a_diag,
                                 double shift) {
  return assemble_impl(v, nullptr, &a_diag, shift);
}

std::pair<ComplexField, SolveStats> solve(const SparseOperator& op, const ComplexField& rhs,
                                          double tol) {
  require_same_grid(op.grid, rhs.grid, "solve");
  if (!(tol > 1e-14 && tol < 1e-2))
    throw UnsupportedSetting("solve: tol outside (1e-14, 1e-2)");
  const Index cap = 20 * op.grid.size();
  const auto t0 = std::chrono::steady_clock::now();
  SolveStats stats;
  ComplexField out(op.grid);

  if (!op.hermitian) {
    Eigen::BiCGSTAB<Eigen::SparseMatrix<Complex, Eigen::RowMajor>,
                    Eigen::DiagonalPreconditioner<Complex>>
        solver;
    solver.setTolerance(tol);
    solver.setMaxIterations(cap);
    solver.compute(op.matrix);
    out.values = solver.solve(rhs.values);
    if (solver.info() != Eigen::Success)
      throw MaxIterations("solve: BiCGStab did not converge");
    stats.method = SolveMethod::kBicgstab;
    stats.iterations = Index(solver.iterations());
    const double bnorm = rhs.values.norm();
    stats.relative_residual =
        bnorm > 0.0 ? (rhs.values - op.matrix * out.values).norm() / bnorm : 0.0;
  } else if (op.is_real) {
    Eigen::VectorXd xr, xi;
    const Eigen::VectorXd br = rhs.values.real(), bi = rhs.values.imag();
    auto [it_r, res_r] = pcg(op.real_matrix, br, xr, tol, cap);
    stats.iterations = it_r;
    stats.relative_residual = res_r;
    if (bi.norm() > 0.0) {
      auto [it_i, res_i] = pcg(op.real_matrix, bi, xi, tol, cap);
      stats.iterations += it_i;
      stats.relative_residual = std::max(stats.relative_residual, res_i);
    } else {
      xi = Eigen::VectorXd::Zero(br.size());
    }
    out.values = xr + Complex(0.0, 1.0) * xi;
  } else {
    Eigen::VectorXcd x;
    auto [it, res] = pcg(op.matrix, rhs.values, x, tol, cap);
    stats.iterations = it;
    stats.relative_residual = res;
    out.values = std::move(x);
  }
  stats.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(out), stats};
}

ComplexField fundamental_column(const SparseOperator& op, Index y, double tol, FarField far) {
  const Grid& g = op.grid;
  if (y < 0 || y >= g.size())
    throw OutOfDomain("fundamental_column: source index outside the grid");
  const double h = g.spacing;
  if (g.wall_distance(g.point(y)) < 4.0 * h - 1e-12)
    throw BoundarySource("fundamental_column: source closer than 4h to the boundary");

  ComplexField rhs(g);
  rhs.values[y] = Complex(1.0 / (h * h * h), 0.0);

  if (far == FarField::kNewtonian) {
    if (op.has_magnetic || op.a_kind != MatrixAKind::kIdentity || op.shift != 0.0 ||
        (op.v.values.array() != 0.0).any())
      throw UnsupportedSetting(
          "fundamental_column: Newtonian far field is for the free reference operator");
    const Eigen::Vector3d py = g.point(y);
    auto newton = [&](Index b) { return 1.0 / (4.0 * kPi * (g.point(b) - py).norm()); };
    const double inv_h2 = 1.0 / (h * h);
    const Index step[3] = {1, g.dims[0], g.dims[0] * g.dims[1]};
    for (Index p = 0; p < g.size(); ++p) {
      if (g.on_boundary(p)) {
        rhs.values[p] = Complex(newton(p), 0.0);  // identity row carries the data
        continue;
      }
      for (int ax = 0; ax < 3; ++ax)
        for (int dir = -1; dir <= 1; dir += 2) {
          const Index q = p + dir * step[ax];
          if (g.on_boundary(q)) rhs.values[p] += Complex(newton(q) * inv_h2, 0.0);
        }
    }
  }
  return solve(op, rhs, tol).first;
}

ComplexField resolvent_apply(const SparseOperator& op, double t, const ComplexField& f,
                             double tol) {
  if (!(t > 0.0)) throw UnsupportedSetting("resolvent_apply: t must be positive");
  require_same_grid(op.grid, f.grid, "resolvent_apply");
  const double bump = 1.0 / (t * t);
  SparseOperator shifted = op;
  shifted.shift = op.shift + bump;
  for (Index p = 0; p < op.grid.size(); ++p) {
    if (op.grid.on_boundary(p)) continue;
    shifted.matrix.coeffRef(p, p) += Complex(bump, 0.0);
    if (shifted.is_real) shifted.real_matrix.coeffRef(p, p) += bump;
  }
  ComplexField u = solve(shifted, f, tol).first;
  u.values *= bump;  // (1/t^2) L_t^{-1} f
  return u;
}

PropertyReport kato_simon_check(const ScalarField& v, const VectorField* a,
                                const ScalarField& f, double tol) {
  const Grid& g = v.grid;
  require_same_grid(g, f.grid, "kato_simon_check");
  if (a) require_same_grid(g, a->grid, "kato_simon_check");
  for (Index i = 0; i < g.size(); ++i)
    if (f.values[i] < -1e-12)
      throw UnsupportedSetting("kato_simon_check: f must be nonnegative");
  const double fsup = f.values.cwiseAbs().maxCoeff();

  PropertyReport rep;
  ScalarField zero(g);
  ComplexField fc(g);
  fc.values = f.values.cast<Complex>();
  for (double eps : {0.25, 1.0}) {
    SparseOperator op_full = a ? assemble(v, *a, eps) : assemble(v, eps);
    SparseOperator op_free = assemble(zero, eps);
    ComplexField u = solve(op_full, fc, tol).first;
    ComplexField w = solve(op_free, fc, tol).first;
    PropertyCheck c;
    c.name = "kato_simon_eps_" + (eps == 0.25 ? std::string("0.25") : std::string("1"));
    double worst = -std::numeric_limits<double>::infinity();
    for (Index i = 0; i < g.size(); ++i)
      worst = std::max(worst, std::abs(u.values[i]) - std::real(w.values[i]));
    c.worst = fsup > 0.0 ? worst / fsup : worst;
    c.bound = tol;
    c.has_bound = true;
    c.pass = c.worst <= tol;
    c.n_samples = int(std::min<Index>(g.size(), std::numeric_limits<int>::max()));
    rep.checks.push_back(c);
  }
  return rep;
}

double caccioppoli_check(const SparseOperator& op, const ComplexField& u,
                         const Eigen::Vector3d& x0, double r, double R,
                         const ComplexField& f) {
  const Grid& g = op.grid;
  require_same_grid(g, u.grid, "caccioppoli_check");
  require_same_grid(g, f.grid, "caccioppoli_check");
  if (!(r > 0.0) || !(R > r)) throw BallOutOfBox("caccioppoli_check: need 0 < r < R");
  require_ball_in_box(g, x0, R, "caccioppoli_check");

  const double h = g.spacing;
  const double cell = h * h * h;
  const Index step[3] = {1, g.dims[0], g.dims[0] * g.dims[1]};

  double lhs = 0.0;
  for (Index p : ball_points(g, x0, r)) {
    for (int ax = 0; ax < 3; ++ax) {
      const auto ijk = g.unpack(p);
      Index nb[3] = {ijk[0], ijk[1], ijk[2]};
      nb[ax] += 1;
      if (!g.contains(nb[0], nb[1], nb[2])) continue;
      const Index q = p + step[ax];
      Complex uq = u.values[q];
      double w = 1.0;
      const Complex c = op.matrix.coeff(p, q);
      if (c != Complex(0.0, 0.0)) {
        w = std::abs(c) * h * h;
        const Complex phase = -c * (h * h) / w;  // unimodular hop factor
        uq *= phase;
      }
      lhs += w * std::norm((uq - u.values[p]) / h) * cell;
    }
  }

  double mass_u = 0.0, mass_fu = 0.0, c2 = 0.0;
  for (Index p : ball_points(g, x0, R)) {
    mass_u += std::norm(u.values[p]) * cell;
    mass_fu += std::abs(f.values[p]) * std::abs(u.values[p]) * cell;
    c2 = std::max(c2, op.v.values[p] + op.shift);
  }
  const double rhs = (1.0 / ((R - r) * (R - r)) + c2) * mass_u + mass_fu;
  if (lhs == 0.0) return 0.0;
  return lhs / rhs;
}

double moser_check(const SparseOperator& op, const ComplexField& u,
                   const Eigen::Vector3d& x0, double R, const ComplexField& f) {
  const Grid& g = op.grid;
  require_same_grid(g, u.grid, "moser_check");
  require_same_grid(g, f.grid, "moser_check");
  if (!(R > 0.0)) throw BallOutOfBox("moser_check: need R > 0");
  require_ball_in_box(g, x0, 2.0 * R, "moser_check");

  const auto quarter = ball_points(g, x0, 0.25 * R);
  if (quarter.empty())
    throw InsufficientResolution("moser_check: quarter ball holds no grid points");
  double lhs = 0.0;
  for (Index p : quarter) lhs = std::max(lhs, std::abs(u.values[p]));

  const auto twoB = ball_points(g, x0, 2.0 * R);
  double su = 0.0, sf = 0.0;
  for (Index p : twoB) {
    su += std::norm(u.values[p]);
    sf += std::norm(f.values[p]);
  }
  const double navg = double(twoB.size());
  const double rhs = std::sqrt(su / navg) + R * R * std::sqrt(sf / navg);
  if (lhs == 0.0) return 0.0;
  return lhs / rhs;
}

double perturbation_identity_check(const ScalarField& v, const VectorField* a, double tol) {
  const Grid& g = v.grid;
  if (a) require_same_grid(g, a->grid, "perturbation_identity_check");
  const double tol_solve = std::max(tol * 0.1, 2e-14);

  // deterministic bump, sup-normalized, supported in the inner half-box
  ComplexField f(g);
  const Eigen::Vector3d mid = 0.5 * (g.box_lo() + g.box_hi());
  const Eigen::Vector3d rad = 0.5 * (g.box_hi() - g.box_lo());
  const double sigma = 0.18 * rad.minCoeff();
  for (Index p = 0; p < g.size(); ++p) {
    const Eigen::Vector3d d = g.point(p) - mid;
    if ((d.cwiseQuotient(rad)).cwiseAbs().maxCoeff() > 0.45) continue;
    f.values[p] = Complex(std::exp(-d.squaredNorm() / (2.0 * sigma * sigma)), 0.0);
  }

  ScalarField zero(g);
  SparseOperator op0 = a ? assemble(zero, *a, 0.0) : assemble(zero, 0.0);
  SparseOperator opv = a ? assemble(v, *a, 0.0) : assemble(v, 0.0);

  ComplexField uv = solve(opv, f, tol_solve).first;
  ComplexField t1 = solve(op0, f, tol_solve).first;
  ComplexField vu(g);
  vu.values = v.values.cast<Complex>().cwiseProduct(uv.values);
  ComplexField t2 = solve(op0, vu, tol_solve).first;

  return (t1.values - uv.values - t2.values).cwiseAbs().maxCoeff();
}

void write_triplets(const std::string& path, const SparseOperator& op) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_triplets: cannot open " + path);
  out << std::setprecision(17);
  for (Index row = 0; row < op.matrix.outerSize(); ++row)
    for (Eigen::SparseMatrix<Complex, Eigen::RowMajor>::InnerIterator it(op.matrix, row); it;
         ++it)
      out << row << ' ' << it.col() << ' ' << it.value().real() << ' ' << it.value().imag()
          << '\n';
  if (!out) throw IoError("write_triplets: write failed: " + path);
}

}  // namespace agmonlab
