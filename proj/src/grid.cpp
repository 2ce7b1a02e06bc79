#include "agmonlab/grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

namespace agmonlab {

Grid::Grid(std::array<Index, 3> d, const Eigen::Vector3d& o, double h)
    : dims(d), origin(o), spacing(h) {
  for (int ax = 0; ax < 3; ++ax) {
    if (dims[ax] < 4) throw Error("grid needs at least 4 points per axis");
  }
  if (!(spacing > 0.0) || !std::isfinite(spacing)) throw Error("grid spacing must be positive");
  if (!origin.allFinite()) throw Error("grid origin must be finite");
  // keep linear indices comfortably inside int64 and ball-offset tables sane
  if (size() > (Index(1) << 31)) throw Error("grid too large to address");
}

double Grid::wall_distance(const Eigen::Vector3d& x) const {
  const Eigen::Vector3d lo = box_lo(), hi = box_hi();
  double d = std::numeric_limits<double>::infinity();
  for (int ax = 0; ax < 3; ++ax) {
    d = std::min(d, x[ax] - lo[ax]);
    d = std::min(d, hi[ax] - x[ax]);
  }
  return d;
}

bool Grid::same_layout(const Grid& other) const {
  return dims == other.dims && spacing == other.spacing &&
         (origin - other.origin).norm() <= 1e-12 * (1.0 + origin.norm());
}

Grid make_box_grid(double extent, Index points_per_axis) {
  if (!(extent > 0.0)) throw Error("box extent must be positive");
  if (points_per_axis < 4) throw Error("grid needs at least 4 points per axis");
  const double h = 2.0 * extent / double(points_per_axis - 1);
  return Grid({points_per_axis, points_per_axis, points_per_axis},
              Eigen::Vector3d(-extent, -extent, -extent), h);
}

void require_same_grid(const Grid& a, const Grid& b, const char* what) {
  if (!a.same_layout(b)) throw GridMismatch(std::string("grid mismatch in ") + what);
}

bool all_finite(const ScalarField& f) { return f.values.allFinite(); }
bool all_finite(const ComplexField& f) {
  return f.values.real().allFinite() && f.values.imag().allFinite();
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void put_bytes(std::FILE* f, const void* p, size_t n, const std::string& path) {
  if (std::fwrite(p, 1, n, f) != n) throw IoError("short write: " + path);
}
void get_bytes(std::FILE* f, void* p, size_t n, const std::string& path) {
  if (std::fread(p, 1, n, f) != n) throw IoError("short read: " + path);
}

void write_header(std::FILE* f, const Grid& g, bool is_complex, const std::string& path) {
  put_bytes(f, "AGF1", 4, path);
  for (int ax = 0; ax < 3; ++ax) {
    const std::uint32_t d = std::uint32_t(g.dims[ax]);
    put_bytes(f, &d, 4, path);
  }
  for (int ax = 0; ax < 3; ++ax) {
    const double o = g.origin[ax];
    put_bytes(f, &o, 8, path);
  }
  put_bytes(f, &g.spacing, 8, path);
  const std::uint8_t flag = is_complex ? 1 : 0;
  put_bytes(f, &flag, 1, path);
}

}  // namespace

void write_agf1(const std::string& path, const ScalarField& f) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open for write: " + path);
  write_header(fp.get(), f.grid, false, path);
  put_bytes(fp.get(), f.values.data(), sizeof(double) * size_t(f.values.size()), path);
}

void write_agf1(const std::string& path, const ComplexField& f) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open for write: " + path);
  write_header(fp.get(), f.grid, true, path);
  // std::complex<double> is layout-compatible with double[2] = (re, im)
  put_bytes(fp.get(), f.values.data(), 2 * sizeof(double) * size_t(f.values.size()), path);
}

Agf1Contents read_agf1(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open for read: " + path);
  char magic[4];
  get_bytes(fp.get(), magic, 4, path);
  if (std::memcmp(magic, "AGF1", 4) != 0) throw IoError("bad magic in " + path);
  std::array<Index, 3> dims;
  for (int ax = 0; ax < 3; ++ax) {
    std::uint32_t d = 0;
    get_bytes(fp.get(), &d, 4, path);
    dims[ax] = Index(d);
  }
  Eigen::Vector3d origin;
  for (int ax = 0; ax < 3; ++ax) get_bytes(fp.get(), &origin[ax], 8, path);
  double spacing = 0;
  get_bytes(fp.get(), &spacing, 8, path);
  std::uint8_t flag = 0;
  get_bytes(fp.get(), &flag, 1, path);
  if (flag > 1) throw IoError("bad scalar/complex flag in " + path);

  Agf1Contents out;
  out.grid = Grid(dims, origin, spacing);
  out.is_complex = (flag == 1);
  if (out.is_complex) {
    out.complex_field = ComplexField(out.grid);
    get_bytes(fp.get(), out.complex_field.values.data(),
              2 * sizeof(double) * size_t(out.grid.size()), path);
  } else {
    out.scalar = ScalarField(out.grid);
    get_bytes(fp.get(), out.scalar.values.data(), sizeof(double) * size_t(out.grid.size()),
              path);
  }
  return out;
}

}  // namespace agmonlab
