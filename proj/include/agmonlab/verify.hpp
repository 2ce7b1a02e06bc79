#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "agmonlab/distance.hpp"
#include "agmonlab/schrodinger.hpp"
#include "agmonlab/weights.hpp"

namespace agmonlab {

// The estimate suite. Every check here is read-only over immutable fields and
// columns, so independent checks may run concurrently; regression sums use
// compensated accumulation and are order-independent.

/// Two-sided envelope fit of log(|G(x,y)| |x-y|) against the metric distance
/// d(x,y). eps_upper/c_upper describe the calibrated upper envelope
/// |G| |x-y| <= c_upper exp(-eps_upper d); eps_lower/c_lower the lower one.
/// ls_slope/r_squared come from the plain least-squares line through all
/// pairs. no_decay marks the degenerate branch (box-clipped metric, nothing
/// to fit an exponential against).
struct DecayReport {
  double eps_upper = 0.0;
  double eps_lower = 0.0;
  double c_upper = 0.0;
  double c_lower = 0.0;
  double ls_slope = 0.0;
  double ls_intercept = 0.0;
  double r_squared = 0.0;
  Index n_pairs = 0;
  Eigen::Vector3d trust_lo{0, 0, 0};
  Eigen::Vector3d trust_hi{0, 0, 0};
  double resolution = 0.0;
  bool no_decay = false;
  /// worst log-gap of the ball-averaged kernel above the upper envelope
  /// (<= 0 means the averaged variant is covered as well); recorded only.
  double ball_avg_gap = -std::numeric_limits<double>::infinity();
};

/// Uncertainty-principle report: worst ratio of the weighted mass
/// sum m^2 |u|^2 h^3 against the energy sum (|Du|^2 + V |u|^2) h^3 over the
/// randomized test functions.
struct FPReport {
  double max_ratio = 0.0;
  Index n_test_functions = 0;
  /// max_ratio at this resolution divided by the coarse reference when one is
  /// supplied; 1.0 otherwise.
  double resolution_stability = 1.0;
};

/// Ratio for one explicit test function; throws DegenerateTest when u is
/// numerically zero. a may be null for the real operator.
double fp_ratio(const MaximalField& mf, const ScalarField& v, const VectorField* a,
                const ComplexField& u);

/// Runs n_tests randomized sums of 1-5 Gaussian bumps (radii in
/// [4h, box_width/8], compactly supported in the interior) through fp_ratio.
/// When coarse is given, resolution_stability = max_ratio / coarse->max_ratio.
FPReport fefferman_phong_check(const MaximalField& mf, const ScalarField& v,
                               const VectorField* a, Index n_tests, std::uint64_t rng_seed,
                               const FPReport* coarse = nullptr);

struct L2DecayOptions {
  double dtilde = 1.0;
  double t = std::numeric_limits<double>::infinity();  // infinity = direct solve
  double growth_cap = 10.0;  // ratio(eps) may grow this factor over ratio(0)
  int n_eps = 25;
  double eps_max = 2.0;
  double solve_tol = 1e-9;
};

struct L2DecayReport {
  double eps_best = 0.0;      // largest eps on the grid with capped growth
  double ratio_at_best = 0.0; // lhs/rhs there
  std::vector<double> eps_grid;
  std::vector<double> ratios; // lhs/rhs per eps
  double dtilde = 0.0;
  double t = 0.0;
  bool degenerate_metric = false;  // box-clipped m: no exponential content
  bool vacuous = false;            // f == 0 or empty far region
};

/// Weighted L^2 decay of u = (I + t^2 L)^{-1} f (or u = L^{-1} f at t =
/// infinity): sweeps eps and compares sum_{d >= dtilde} m^2 |u|^2 e^{2 eps d}
/// against sum |f|^2 / m^2. f must be supported in the inner half-box.
L2DecayReport l2_decay_check(const SparseOperator& op, const ComplexField& f,
                             const MaximalField& mf, const DistanceField& df,
                             const L2DecayOptions& opt = {});

/// Axis-aligned closed box, used for the set-to-set estimates.
struct BoxSet {
  Eigen::Vector3d lo{0, 0, 0};
  Eigen::Vector3d hi{0, 0, 0};
  bool contains(const Eigen::Vector3d& x) const {
    return (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
  }
  bool overlaps(const BoxSet& o) const {
    return (lo.array() <= o.hi.array()).all() && (o.lo.array() <= hi.array()).all();
  }
};

struct GaffneyRow {
  double t = 0.0;
  double lhs = 0.0;         // ||(I + t^2 L)^{-1} f||_{L^2(E)}
  double rhs = 0.0;         // C t^2 exp(-eps dist/t) ||m f||_{L^2(F)}
  double dist_euclid = 0.0; // Euclidean box gap
  double dist_agmon = 0.0;  // metric distance between the node sets
  bool pass = false;        // lhs <= rhs
};

/// Resolvent locality between separated boxes. f lives on F; per t the decay
/// of mass on E is compared against the fitted (c_fit, eps_fit) bound with
/// the metric built from the matching per-t weight field.
std::vector<GaffneyRow> gaffney_check(const SparseOperator& op, const ComplexField& f,
                                      const BoxSet& f_box, const BoxSet& e_box,
                                      const std::vector<double>& t_list,
                                      const std::vector<const MaximalField*>& mf_per_t,
                                      double eps_fit, double c_fit, double solve_tol = 1e-9);

struct HarnackReport {
  double max_ratio = 0.0;
  double min_ratio = std::numeric_limits<double>::infinity();
  Index n_balls = 0;
  double c_fraction = 0.0;
  std::vector<double> ratios;    // per accepted ball
  std::vector<double> m_values;  // m(x0) per ball, for the scale-invariance read
};

/// sup/inf of a positive column over random balls of radius
/// c_fraction / m(x0), with 2B inside the box and clear of the pole.
/// Requires the real non-magnetic setting.
HarnackReport harnack_check(const SparseOperator& op, const ComplexField& column,
                            Index source, const MaximalField& mf, double c_fraction,
                            Index n_balls, std::uint64_t rng_seed);

struct EnvelopeOptions {
  double trust_fraction = 0.5;    // inner fraction of the box, per axis
  double pole_exclusion = 4.0;    // in units of h
  Index max_pairs_per_source = 4096;
  std::uint64_t rng_seed = 1;
  bool fit_lower = true;          // lower envelope needs the real setting
  int n_bins = 12;
  Index ball_avg_samples = 128;
};

/// Fits the two-sided exponential envelope through (d, log |G| |x-y|) pairs
/// pooled over the given fundamental-solution columns. distances[i] must be
/// the single-source metric field for columns[i]'s source.
DecayReport envelope_fit(const std::vector<const ComplexField*>& columns,
                         const std::vector<const DistanceField*>& distances,
                         const MaximalField& mf, const EnvelopeOptions& opt = {});

struct SmallBallReport {
  double max_ratio = 0.0;     // |G_V - G_0| |x-y| / (|x-y| m(y))^delta
  double min_product = 0.0;   // min G_V |x-y| over the admissible pairs
  double delta = 0.0;
  Index n_pairs = 0;
};

/// Near-pole perturbation bound: pairs with 4h <= |x-y| < 1/m(y) compare the
/// kernel difference against the small-ball modulus (|x-y| m(y))^delta,
/// delta = 2 - 3/p_tilde.
SmallBallReport perturbation_smallball_check(const ComplexField& gamma_v,
                                             const ComplexField& gamma_0, Index source,
                                             const MaximalField& mf, double p_tilde = 1.6);

/// Pair-level regression data export (x_idx, y_idx, euclid, agmon_d,
/// gamma_abs, log_env) for external plotting.
struct EnvelopePoint {
  Index x_idx = 0;
  Index y_idx = 0;
  double euclid = 0.0;
  double agmon_d = 0.0;
  double gamma_abs = 0.0;
  double log_env = 0.0;  // log(|G| |x-y|)
};
std::vector<EnvelopePoint> envelope_table(const ComplexField& column, Index source,
                                          const DistanceField& df, const MaximalField& mf,
                                          const EnvelopeOptions& opt = {});
void write_envelope_csv(const std::string& path, const std::vector<EnvelopePoint>& rows);

}  // namespace agmonlab
