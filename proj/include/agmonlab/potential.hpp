#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <vector>

#include "agmonlab/grid.hpp"

namespace agmonlab {

struct Monomial {
  double coeff = 0.0;
  std::array<int, 3> powers{0, 0, 0};
};

/// Closed-form nonnegative electric potentials:
///   constant c, radial_power scale*|x|^alpha (alpha > -2),
///   polynomial |P(x)|^beta, and piecewise region lists of the above.
class PotentialModel {
 public:
  enum class Kind { Constant, RadialPower, Polynomial, Piecewise };

  static PotentialModel constant(double c);
  static PotentialModel radial_power(double alpha, double scale = 1.0);
  static PotentialModel polynomial(std::vector<Monomial> terms, double beta);
  struct Piece;  // defined after the class: it holds a model by value
  /// First matching region wins; a point in no region is OutOfDomain.
  static PotentialModel piecewise(std::vector<Piece> pieces);

  double operator()(const Eigen::Vector3d& x) const;

  /// Cell average over [center - h/2, center + h/2]^3 by 5^3 midpoint
  /// quadrature; the subcell holding an integrable singularity is refined
  /// recursively.
  double cell_average(const Eigen::Vector3d& center, double h) const;

  Kind kind() const { return kind_; }
  /// True when the model has a non-smooth point at the origin (|x|^alpha with
  /// alpha not an even positive integer behaves like one for quadrature).
  bool needs_cell_average_at(const Eigen::Vector3d& center, double h) const;
  double radial_alpha() const { return alpha_; }
  double radial_scale() const { return scale_; }

 private:
  PotentialModel() = default;
  double eval_or_throw(const Eigen::Vector3d& x) const;
  double cell_average_impl(const Eigen::Vector3d& center, double h, int depth) const;

  Kind kind_ = Kind::Constant;
  double constant_ = 0.0;
  double alpha_ = 0.0;
  double scale_ = 1.0;
  std::vector<Monomial> terms_;
  double beta_ = 1.0;
  std::vector<Piece> pieces_;
};

struct PotentialModel::Piece {
  Eigen::Vector3d lo, hi;  // axis-aligned region, closed box
  PotentialModel model;
};

/// Closed-form magnetic potentials with analytic Jacobian (hence curl).
/// uniform: a = 0.5 * B0 x x; linear: a = M x; optional gauge term adds
/// grad(chi) for chi a sum of Gaussian bumps (curl unchanged).
class MagneticModel {
 public:
  struct GaussianChi {
    Eigen::Vector3d center{0, 0, 0};
    double width = 1.0;
    double amplitude = 0.0;
  };

  static MagneticModel none();
  static MagneticModel uniform(const Eigen::Vector3d& b0);
  static MagneticModel linear(const Eigen::Matrix3d& m);

  MagneticModel with_gauge(std::vector<GaussianChi> chi) const;

  bool is_none() const { return kind_ == Kind::None; }
  Eigen::Vector3d vector_potential(const Eigen::Vector3d& x) const;
  Eigen::Matrix3d jacobian(const Eigen::Vector3d& x) const;  // d a_j / d x_k in (j,k)
  /// Frobenius norm of b_jk = da_j/dx_k - da_k/dx_j.
  double field_norm(const Eigen::Vector3d& x) const;
  double chi(const Eigen::Vector3d& x) const;
  const std::vector<GaussianChi>& gauge_terms() const { return chi_; }

 private:
  enum class Kind { None, Uniform, Linear };
  Kind kind_ = Kind::None;
  Eigen::Matrix3d m_ = Eigen::Matrix3d::Zero();
  std::vector<GaussianChi> chi_;
};

/// Midpoint sampling of the model at grid points, with cell averaging where
/// the model is singular/kinked inside the cell.
ScalarField sample_potential(const PotentialModel& model, const Grid& grid);

ScalarField sample_scalar(const Grid& grid, const std::function<double(const Eigen::Vector3d&)>& f);
VectorField sample_vector_potential(const MagneticModel& model, const Grid& grid);

enum class CurlPath { Analytic, FiniteDifference };

struct FieldNormResult {
  ScalarField norm;          // |B|_F at grid points
  bool boundary_one_sided = false;  // FD path uses one-sided stencils at faces
};

/// |B| for the analytic model, or by centered differences of a sampled a.
FieldNormResult magnetic_field_norm(const MagneticModel& model, const Grid& grid);
FieldNormResult magnetic_field_norm(const VectorField& a);

/// w = V + |B| (+ inv_t2 for resolvent studies). Fields must share the grid.
ScalarField combined_weight(const ScalarField& v, const ScalarField* b_norm,
                            double inv_t2 = 0.0);

}  // namespace agmonlab
