#pragma once

#include <Eigen/Sparse>
#include <string>
#include <utility>
#include <vector>

#include "agmonlab/grid.hpp"
#include "agmonlab/weights.hpp"

namespace agmonlab {

enum class MatrixAKind { kIdentity, kRealElliptic };
enum class SolveMethod { kCgHermitian, kBicgstab };

/// Discrete L = -(grad - i a)^T A (grad - i a) + V + shift on the grid, 7-point
/// stencil, homogeneous Dirichlet box (boundary rows reduced to identity and
/// their couplings eliminated symmetrically). Magnetic hops carry Peierls
/// phases exp(-i theta_pq) with theta_pq = a((p+q)/2) . (q - p), the midpoint
/// value taken as the endpoint average of the sampled a (exact for affine a).
/// A, when not the identity, is a diagonal matrix field (one positive entry
/// per axis per node, face-averaged flux coefficients); a 7-point stencil has
/// no room for mixed second derivatives, and every decay experiment here uses
/// A = I anyway.
struct SparseOperator {
  Grid grid;
  Eigen::SparseMatrix<Complex, Eigen::RowMajor> matrix;
  Eigen::SparseMatrix<double, Eigen::RowMajor> real_matrix;  // mirror when real
  ScalarField v;  // zeroth-order coefficient as assembled (without the shift)
  bool hermitian = true;
  bool is_real = false;
  double shift = 0.0;
  bool has_magnetic = false;
  MatrixAKind a_kind = MatrixAKind::kIdentity;
};

struct SolveStats {
  Index iterations = 0;
  double relative_residual = 0.0;  // true residual, recomputed at exit
  SolveMethod method = SolveMethod::kCgHermitian;
  double wall_time = 0.0;  // seconds
};

SparseOperator assemble(const ScalarField& v, double shift = 0.0);
SparseOperator assemble(const ScalarField& v, const VectorField& a, double shift = 0.0);
/// a_diag holds the three diagonal entries of A at each node.
SparseOperator assemble_elliptic(const ScalarField& v, const VectorField& a_diag,
                                 double shift = 0.0);

/// Jacobi-preconditioned conjugate gradients in the Hermitian inner product
/// (real path solves re/im parts separately); BiCGStab fallback when the
/// operator is flagged non-Hermitian. Iteration cap 20 N. tol is a relative
/// residual in (1e-14, 1e-2).
std::pair<ComplexField, SolveStats> solve(const SparseOperator& op, const ComplexField& rhs,
                                          double tol);

enum class FarField {
  kNone,       // homogeneous Dirichlet walls
  kNewtonian,  // impose 1/(4 pi |x-y|) as boundary data (free reference only)
};

/// Column of the discrete fundamental solution: solve with rhs = e_y / h^3.
/// The Newtonian far-field lift is for the free operator (V = 0, a = 0,
/// shift = 0) whose continuum column is known exactly; it removes the
/// long-range deficit of a zero boundary on a truncated box.
ComplexField fundamental_column(const SparseOperator& op, Index y, double tol,
                                FarField far = FarField::kNone);

/// R_t f = (1 + t^2 L)^{-1} f = (1/t^2) (L + 1/t^2)^{-1} f. op carries L
/// (assembled with shift 0); the 1/t^2 shift lands on interior diagonals.
ComplexField resolvent_apply(const SparseOperator& op, double t, const ComplexField& f,
                             double tol);

/// Kato-Simon domination: |(L + eps)^{-1} f| <= (-Delta_h + eps)^{-1} |f|
/// pointwise, checked at eps in {0.25, 1}. Checks are named
/// kato_simon_eps_<eps>, worst = max signed excess over tol * sup|f|.
PropertyReport kato_simon_check(const ScalarField& v, const VectorField* a,
                                const ScalarField& f, double tol);

/// Energy-ratio diagnostics: each returns lhs/rhs of the named inequality on
/// concentric balls (0 reported when u vanishes there). Covariant gradients
/// read their hop phases straight off the assembled matrix.
double caccioppoli_check(const SparseOperator& op, const ComplexField& u,
                         const Eigen::Vector3d& x0, double r, double R,
                         const ComplexField& f);
double moser_check(const SparseOperator& op, const ComplexField& u,
                   const Eigen::Vector3d& x0, double R, const ComplexField& f);

/// Resolvent perturbation identity L0^{-1} f - LV^{-1} f - L0^{-1}(V LV^{-1} f)
/// for a deterministic compactly supported f with sup|f| = 1; returns the sup
/// defect. Internal solves run a decade tighter than tol so the defect stays
/// an algebra check, not a solver-noise measurement.
double perturbation_identity_check(const ScalarField& v, const VectorField* a, double tol);

/// Triplet text export, one "row col re im" line per stored entry in CSR
/// order, full double precision.
void write_triplets(const std::string& path, const SparseOperator& op);

}  // namespace agmonlab
