#include "agmonlab/potential.hpp"

#include <cmath>

namespace agmonlab {

PotentialModel PotentialModel::constant(double c) {
  if (c < 0.0 || !std::isfinite(c)) throw NegativePotential("constant potential must be >= 0");
  PotentialModel m;
  m.kind_ = Kind::Constant;
  m.constant_ = c;
  return m;
}

PotentialModel PotentialModel::radial_power(double alpha, double scale) {
  if (alpha <= -2.0)
    throw NonIntegrableSingularity("radial_power needs alpha > -2 in three dimensions");
  if (scale < 0.0) throw NegativePotential("radial_power scale must be >= 0");
  PotentialModel m;
  m.kind_ = Kind::RadialPower;
  m.alpha_ = alpha;
  m.scale_ = scale;
  return m;
}

PotentialModel PotentialModel::polynomial(std::vector<Monomial> terms, double beta) {
  if (!(beta > 0.0)) throw Error("polynomial exponent beta must be positive");
  PotentialModel m;
  m.kind_ = Kind::Polynomial;
  m.terms_ = std::move(terms);
  m.beta_ = beta;
  return m;
}

PotentialModel PotentialModel::piecewise(std::vector<Piece> pieces) {
  PotentialModel m;
  m.kind_ = Kind::Piecewise;
  m.pieces_ = std::move(pieces);
  return m;
}

double PotentialModel::eval_or_throw(const Eigen::Vector3d& x) const {
  switch (kind_) {
    case Kind::Constant:
      return constant_;
    case Kind::RadialPower: {
      const double r = x.norm();
      if (r == 0.0) {
        if (alpha_ > 0.0) return 0.0;
        if (alpha_ == 0.0) return scale_;
        return std::numeric_limits<double>::infinity();
      }
      return scale_ * std::pow(r, alpha_);
    }
    case Kind::Polynomial: {
      double p = 0.0;
      for (const auto& t : terms_) {
        double v = t.coeff;
        for (int ax = 0; ax < 3; ++ax)
          for (int e = 0; e < t.powers[ax]; ++e) v *= x[ax];
        p += v;
      }
      return std::pow(std::abs(p), beta_);
    }
    case Kind::Piecewise: {
      for (const auto& pc : pieces_) {
        bool in = true;
        for (int ax = 0; ax < 3; ++ax)
          in = in && x[ax] >= pc.lo[ax] - 1e-12 && x[ax] <= pc.hi[ax] + 1e-12;
        if (in) return pc.model(x);
      }
      throw OutOfDomain("piecewise potential has no region containing the point");
    }
  }
  return 0.0;
}

double PotentialModel::operator()(const Eigen::Vector3d& x) const { return eval_or_throw(x); }

bool PotentialModel::needs_cell_average_at(const Eigen::Vector3d& center, double h) const {
  if (kind_ == Kind::RadialPower) {
    // |x|^alpha is non-smooth at the origin for every alpha that is not an
    // even nonnegative integer; average the cell the origin lands in.
    const bool smooth = alpha_ == 0.0 || (alpha_ >= 2.0 && std::fmod(alpha_, 2.0) == 0.0);
    if (smooth && alpha_ != 2.0) return false;  // alpha == 2 keeps the documented quadrature
    return center.lpNorm<Eigen::Infinity>() <= 0.5 * h + 1e-15;
  }
  if (kind_ == Kind::Piecewise) {
    // cells straddling region boundaries get averaged too
    for (const auto& pc : pieces_) {
      for (int ax = 0; ax < 3; ++ax) {
        for (double edge : {pc.lo[ax], pc.hi[ax]}) {
          if (std::abs(center[ax] - edge) < 0.5 * h) return true;
        }
      }
    }
    return false;
  }
  return false;
}

double PotentialModel::cell_average_impl(const Eigen::Vector3d& center, double h,
                                         int depth) const {
  const double sub = h / 5.0;
  double sum = 0.0;
  int singular_slot = -1;
  Eigen::Vector3d singular_center;
  for (int a = -2; a <= 2; ++a) {
    for (int b = -2; b <= 2; ++b) {
      for (int c = -2; c <= 2; ++c) {
        const Eigen::Vector3d p = center + sub * Eigen::Vector3d(a, b, c);
        const bool holds_origin = kind_ == Kind::RadialPower && alpha_ < 0.0 &&
                                  p.lpNorm<Eigen::Infinity>() <= 0.5 * sub + 1e-15;
        if (holds_origin && depth < 6 && singular_slot < 0) {
          singular_slot = 1;
          singular_center = p;
          continue;
        }
        double v = eval_or_throw(p);
        if (!std::isfinite(v)) {
          // midpoint landed exactly on the singularity at max depth; the
          // subcell contributes O(sub^{3+alpha}) -- evaluate off-center.
          v = eval_or_throw(p + 0.25 * sub * Eigen::Vector3d::Ones());
        }
        sum += v;
      }
    }
  }
  if (singular_slot >= 0) sum += cell_average_impl(singular_center, sub, depth + 1);
  return sum / 125.0;
}

double PotentialModel::cell_average(const Eigen::Vector3d& center, double h) const {
  return cell_average_impl(center, h, 0);
}

MagneticModel MagneticModel::none() { return MagneticModel(); }

MagneticModel MagneticModel::uniform(const Eigen::Vector3d& b0) {
  MagneticModel m;
  m.kind_ = Kind::Uniform;
  // a = 0.5 * b0 x x  =>  a = M x with M = 0.5 [b0]_x
  m.m_ << 0, -0.5 * b0[2], 0.5 * b0[1],
      0.5 * b0[2], 0, -0.5 * b0[0],
      -0.5 * b0[1], 0.5 * b0[0], 0;
  return m;
}

MagneticModel MagneticModel::linear(const Eigen::Matrix3d& m) {
  MagneticModel out;
  out.kind_ = Kind::Linear;
  out.m_ = m;
  return out;
}

MagneticModel MagneticModel::with_gauge(std::vector<GaussianChi> chi) const {
  MagneticModel out = *this;
  if (out.kind_ == Kind::None && !chi.empty()) out.kind_ = Kind::Linear;  // pure gradient
  for (auto& t : chi) {
    if (!(t.width > 0.0)) throw Error("gauge bump width must be positive");
    out.chi_.push_back(t);
  }
  return out;
}

double MagneticModel::chi(const Eigen::Vector3d& x) const {
  double s = 0.0;
  for (const auto& t : chi_) {
    const double q = (x - t.center).squaredNorm() / (2.0 * t.width * t.width);
    s += t.amplitude * std::exp(-q);
  }
  return s;
}

Eigen::Vector3d MagneticModel::vector_potential(const Eigen::Vector3d& x) const {
  Eigen::Vector3d a = m_ * x;
  for (const auto& t : chi_) {
    const Eigen::Vector3d d = x - t.center;
    const double w2 = t.width * t.width;
    a += (-t.amplitude / w2) * std::exp(-d.squaredNorm() / (2.0 * w2)) * d;  // grad chi
  }
  return a;
}

Eigen::Matrix3d MagneticModel::jacobian(const Eigen::Vector3d& x) const {
  Eigen::Matrix3d j = m_;
  for (const auto& t : chi_) {
    const Eigen::Vector3d d = x - t.center;
    const double w2 = t.width * t.width;
    const double g = t.amplitude * std::exp(-d.squaredNorm() / (2.0 * w2));
    // Hessian of chi (symmetric; contributes nothing to the curl)
    j += (g / (w2 * w2)) * (d * d.transpose()) - (g / w2) * Eigen::Matrix3d::Identity();
  }
  return j;
}

double MagneticModel::field_norm(const Eigen::Vector3d& x) const {
  const Eigen::Matrix3d j = jacobian(x);
  return (j - j.transpose()).norm();  // Frobenius norm of b_jk
}

ScalarField sample_potential(const PotentialModel& model, const Grid& grid) {
  ScalarField f(grid);
  for (Index idx = 0; idx < grid.size(); ++idx) {
    const Eigen::Vector3d p = grid.point(idx);
    double v;
    if (model.needs_cell_average_at(p, grid.spacing)) {
      v = model.cell_average(p, grid.spacing);
    } else {
      v = model(p);
    }
    if (!std::isfinite(v) || v < 0.0)
      throw NegativePotential("sampled potential must be finite and >= 0");
    f[idx] = v;
  }
  return f;
}

ScalarField sample_scalar(const Grid& grid,
                          const std::function<double(const Eigen::Vector3d&)>& fn) {
  ScalarField f(grid);
  for (Index idx = 0; idx < grid.size(); ++idx) f[idx] = fn(grid.point(idx));
  return f;
}

VectorField sample_vector_potential(const MagneticModel& model, const Grid& grid) {
  if (model.is_none() && model.gauge_terms().empty())
    throw NoMagneticComponent("model has no magnetic component to sample");
  VectorField a(grid);
  for (Index idx = 0; idx < grid.size(); ++idx)
    a.values.row(idx) = model.vector_potential(grid.point(idx)).transpose();
  return a;
}

FieldNormResult magnetic_field_norm(const MagneticModel& model, const Grid& grid) {
  if (model.is_none()) throw NoMagneticComponent("no magnetic component");
  FieldNormResult out;
  out.norm = ScalarField(grid);
  for (Index idx = 0; idx < grid.size(); ++idx)
    out.norm[idx] = model.field_norm(grid.point(idx));
  return out;
}

FieldNormResult magnetic_field_norm(const VectorField& a) {
  const Grid& g = a.grid;
  if (a.values.rows() != g.size()) throw GridMismatch("vector field size != grid size");
  FieldNormResult out;
  out.norm = ScalarField(g);
  out.boundary_one_sided = true;
  const double h = g.spacing;
  for (Index k = 0; k < g.dims[2]; ++k) {
    for (Index j = 0; j < g.dims[1]; ++j) {
      for (Index i = 0; i < g.dims[0]; ++i) {
        // d a_j / d x_k by centered differences, one-sided at faces
        Eigen::Matrix3d jac;
        const Index ijk[3] = {i, j, k};
        for (int ax = 0; ax < 3; ++ax) {
          Index lo[3] = {i, j, k}, hi[3] = {i, j, k};
          double denom = 2.0 * h;
          if (ijk[ax] == 0) {
            hi[ax] += 1;
            denom = h;
          } else if (ijk[ax] == g.dims[ax] - 1) {
            lo[ax] -= 1;
            denom = h;
          } else {
            lo[ax] -= 1;
            hi[ax] += 1;
          }
          const Index plo = g.index(lo[0], lo[1], lo[2]);
          const Index phi = g.index(hi[0], hi[1], hi[2]);
          jac.col(ax) = (a.values.row(phi) - a.values.row(plo)).transpose() / denom;
        }
        out.norm[g.index(i, j, k)] = (jac - jac.transpose()).norm();
      }
    }
  }
  return out;
}

ScalarField combined_weight(const ScalarField& v, const ScalarField* b_norm, double inv_t2) {
  if (inv_t2 < 0.0) throw Error("resolvent shift must be >= 0");
  ScalarField w = v;
  if (b_norm) {
    require_same_grid(v.grid, b_norm->grid, "combined_weight");
    w.values += b_norm->values;
  }
  if (inv_t2 > 0.0) w.values.array() += inv_t2;
  if (w.values.minCoeff() < -1e-12) throw NegativeWeight("combined weight must be >= 0");
  return w;
}

}  // namespace agmonlab
