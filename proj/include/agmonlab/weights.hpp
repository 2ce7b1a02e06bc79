#pragma once

#include <cstdint>
#include <vector>

#include "agmonlab/grid.hpp"
#include "agmonlab/potential.hpp"

namespace agmonlab {

/// phi(x, r) = r^{2-n} * integral of w over B(x, r) restricted to the box,
/// n = 3. Quadrature: full cells count wholly; cells cut by the sphere get a
/// 3^3-subcell fraction with a linearly smoothed boundary overlap per subcell
/// (continuous and monotone in r, which the root-residual contract needs).
/// Below the cell scale (r under ~1.5h) the value blends into the pointwise
/// small-ball form (4pi/3) r^2 w(x), preserving the r->0 asymptotics.
double phi(const ScalarField& w, const Eigen::Vector3d& x, double r);

/// phi at a grid point by linear index; identical quadrature and blend.
double phi_at_point(const ScalarField& w, Index point, double r);

/// Exact radial integration for closed-form radially symmetric models:
/// constant anywhere, scale*|x|^alpha about the origin.
double phi_exact(const PotentialModel& model, const Eigen::Vector3d& x, double r);

struct MaximalOptions {
  int scan_count = 64;        // log-spaced radii from h/2 to box half-diameter
  double rel_tol = 1e-6;      // bisection width target, relative
  double residual_tol = 1e-6; // |phi(rhat) - 1| target
  int max_bisect = 200;
};

struct MaximalPoint {
  double rhat = 0.0;
  double m = 0.0;  // always exactly 1/rhat
  double residual = 0.0;
  bool converged = false;
  bool clipped_at_box = false;   // no crossing up to the box half-diameter
  bool ball_exits_box = false;   // B(x, rhat) leaves the box: quadrature clipped
  bool under_resolved = false;   // rhat < h/2: metric finer than the grid
  bool degenerate = false;       // phi vanished on every scanned ball
};

struct MaximalField {
  static constexpr std::uint8_t kConverged = 1, kClipped = 2, kUnderResolved = 4,
                                kExitsBox = 8;

  ScalarField m;
  ScalarField rhat;
  std::vector<std::uint8_t> flags;
  double max_residual = 0.0;
  Index n_clipped = 0;
  Index n_exits_box = 0;
  Index n_under_resolved = 0;
  Index n_unconverged = 0;
  double half_diameter = 0.0;

  bool converged_at(Index i) const { return flags[i] & kConverged; }
  bool clipped_at(Index i) const { return flags[i] & kClipped; }
  bool exits_box_at(Index i) const { return flags[i] & kExitsBox; }
  bool under_resolved_at(Index i) const { return flags[i] & kUnderResolved; }
  /// Converged, crossing found, ball inside the box, resolved: the points
  /// acceptance comparisons are allowed to use.
  bool trusted_at(Index i) const {
    return converged_at(i) && !clipped_at(i) && !exits_box_at(i) && !under_resolved_at(i);
  }
  /// Fraction of points that failed to converge or sit under the grid scale.
  double unconverged_fraction() const;
};

/// 1/m(x, w) = sup{ r : phi(x, r) <= 1 }: largest scanned radius with
/// phi <= 1, refined by bisection. No crossing up to the box half-diameter
/// reports m = 1/half_diameter with the clipped flag.
MaximalPoint maximal_function(const ScalarField& w, Index point,
                              const MaximalOptions& opts = {});

/// maximal_function at every grid point. Throws DegenerateWeight when w == 0
/// identically and NegativeWeight on negative entries.
MaximalField maximal_field(const ScalarField& w, const MaximalOptions& opts = {});

/// The no-crossing limit a vanishing weight would produce: phi == 0 never
/// crosses 1, so every point is clipped at the box half-diameter with
/// m = 1/half_diameter. maximal_field refuses w == 0 outright; callers that
/// deliberately study the zero-potential branch build this field instead.
MaximalField degenerate_clipped_field(const Grid& g);

struct RHEstimate {
  double p = 0.0;
  double norm_estimate = 0.0;       // sampled sup of (avg w^p)^{1/p} / avg w
  double doubling_constant = 0.0;   // sampled sup of mass(2B) / mass(B)
  double alpha = 0.0;               // [1 - (1/(2 norm))^{p/(p-1)}]^{-1/n}
  double doubling_bound = 0.0;      // C0 = 2^{1 + ln2/ln alpha}
  int samples = 0;
  std::uint64_t seed = 0;
};

/// Reverse Holder diagnostics over randomly sampled balls whose double stays
/// inside the box: centers are grid points in the inner half-box, radii
/// log-uniform in [2h, quarter box-diameter] capped by half the wall
/// distance. The sampled sup underestimates the true norm; reports say so.
RHEstimate rh_estimate(const ScalarField& w, double p, int n_samples, std::uint64_t seed);

/// integral over B(x,R) of w(z)/|z-x| dz  divided by  R^{-1} * integral of w
/// over B(x,R); the singular center cell is subsampled. x is a grid point.
double kato_integral_ratio(const ScalarField& w, Index point, double radius);

struct PropertyCheck {
  std::string name;
  double worst = 0.0;       // measured extreme ratio / exponent
  double bound = 0.0;       // explicit constant when one exists
  bool has_bound = false;
  bool pass = false;
  int n_samples = 0;
};

struct PropertyReport {
  std::vector<PropertyCheck> checks;
  bool all_pass() const;
  const PropertyCheck* find(const std::string& name) const;
};

/// Ball-and-metric lemma battery: comparability of phi across radii, local
/// m-comparability, polynomial growth exponent, the Kato-type integral bound,
/// and the separation property. Distance-dependent lemmas live with the
/// distance code. p_tilde must exceed n/2 = 3/2; 1.6 is the working default.
PropertyReport check_section3_properties(const ScalarField& w, const MaximalField& mf,
                                         int sample_pairs, std::uint64_t seed,
                                         double p = 1.6, double p_tilde = 1.6);

}  // namespace agmonlab
