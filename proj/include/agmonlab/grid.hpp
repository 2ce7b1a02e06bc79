#pragma once

#include <Eigen/Dense>
#include <array>
#include <complex>
#include <cstdint>
#include <string>

#include "agmonlab/errors.hpp"

namespace agmonlab {

using Index = std::int64_t;
using Complex = std::complex<double>;

/// Uniform isotropic grid on an axis-aligned box. Grid points are cell
/// centers; the covered box is [origin - h/2, origin + (dims-1)h + h/2]
/// per axis. Linear index runs i fastest: idx = i + dims0*(j + dims1*k).
struct Grid {
  std::array<Index, 3> dims{0, 0, 0};
  Eigen::Vector3d origin{0, 0, 0};
  double spacing = 0.0;

  Grid() = default;
  Grid(std::array<Index, 3> d, const Eigen::Vector3d& o, double h);

  Index size() const { return dims[0] * dims[1] * dims[2]; }

  Index index(Index i, Index j, Index k) const {
    return i + dims[0] * (j + dims[1] * k);
  }
  std::array<Index, 3> unpack(Index idx) const {
    const Index i = idx % dims[0];
    const Index j = (idx / dims[0]) % dims[1];
    const Index k = idx / (dims[0] * dims[1]);
    return {i, j, k};
  }
  bool contains(Index i, Index j, Index k) const {
    return i >= 0 && i < dims[0] && j >= 0 && j < dims[1] && k >= 0 && k < dims[2];
  }

  Eigen::Vector3d point(Index i, Index j, Index k) const {
    return origin + spacing * Eigen::Vector3d(double(i), double(j), double(k));
  }
  Eigen::Vector3d point(Index idx) const {
    const auto ijk = unpack(idx);
    return point(ijk[0], ijk[1], ijk[2]);
  }

  bool on_boundary(Index i, Index j, Index k) const {
    return i == 0 || j == 0 || k == 0 || i == dims[0] - 1 || j == dims[1] - 1 ||
           k == dims[2] - 1;
  }
  bool on_boundary(Index idx) const {
    const auto ijk = unpack(idx);
    return on_boundary(ijk[0], ijk[1], ijk[2]);
  }

  /// Lowest/highest covered coordinates (cell faces, not point positions).
  Eigen::Vector3d box_lo() const {
    return origin - 0.5 * spacing * Eigen::Vector3d::Ones();
  }
  Eigen::Vector3d box_hi() const {
    return origin + spacing * (Eigen::Vector3d(double(dims[0] - 1), double(dims[1] - 1),
                                               double(dims[2] - 1)) +
                               0.5 * Eigen::Vector3d::Ones());
  }
  /// Half of the box diagonal; the largest meaningful ball radius.
  double half_diameter() const { return 0.5 * (box_hi() - box_lo()).norm(); }

  /// Euclidean distance from x to the nearest box face.
  double wall_distance(const Eigen::Vector3d& x) const;

  bool same_layout(const Grid& other) const;
};

/// Symmetric box [-extent, extent]^3 with n points per axis.
Grid make_box_grid(double extent, Index points_per_axis);

template <class Scalar>
struct Field {
  Grid grid;
  Eigen::VectorX<Scalar> values;

  Field() = default;
  explicit Field(const Grid& g) : grid(g), values(Eigen::VectorX<Scalar>::Zero(g.size())) {}
  Field(const Grid& g, Eigen::VectorX<Scalar> v) : grid(g), values(std::move(v)) {
    if (values.size() != grid.size()) throw GridMismatch("field size != grid size");
  }

  Scalar& operator[](Index idx) { return values[idx]; }
  const Scalar& operator[](Index idx) const { return values[idx]; }
};

using ScalarField = Field<double>;
using ComplexField = Field<Complex>;

/// Sampled vector field; row p holds the three components at grid point p.
struct VectorField {
  Grid grid;
  Eigen::Matrix<double, Eigen::Dynamic, 3> values;

  VectorField() = default;
  explicit VectorField(const Grid& g)
      : grid(g), values(Eigen::Matrix<double, Eigen::Dynamic, 3>::Zero(g.size(), 3)) {}
};

void require_same_grid(const Grid& a, const Grid& b, const char* what);
bool all_finite(const ScalarField& f);
bool all_finite(const ComplexField& f);

/// AGF1 binary dump: magic "AGF1", 3x uint32 dims, 3x float64 origin,
/// float64 spacing, uint8 flag (0 scalar / 1 complex), then little-endian
/// float64 payload in linear-index order (i fastest); complex values are
/// interleaved (re, im).
void write_agf1(const std::string& path, const ScalarField& f);
void write_agf1(const std::string& path, const ComplexField& f);
struct Agf1Contents {
  Grid grid;
  bool is_complex = false;
  ScalarField scalar;
  ComplexField complex_field;
};
Agf1Contents read_agf1(const std::string& path);

}  // namespace agmonlab
