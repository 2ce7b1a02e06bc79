#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "agmonlab/grid.hpp"
#include "agmonlab/weights.hpp"

namespace agmonlab {

/// Grid-graph connectivity for the shortest-path metric. 26 is the default;
/// the body-diagonal moves keep the chamfer anisotropy at its sharp bound
/// sqrt(1 + (sqrt2-1)^2 + (sqrt3-sqrt2)^2) ~ 1.1281 over the unit sphere,
/// with axis / face-diagonal / body-diagonal directions exact.
enum class Neighborhood : int { kFaces = 6, kEdges = 18, kFull = 26 };

struct DistanceOptions {
  Neighborhood neighborhood = Neighborhood::kFull;
  double unconverged_limit = 0.10;  // UnconvergedMetric beyond this fraction
};

/// Shortest-path Agmon distance from a source point (or set) to every grid
/// point: Dijkstra over the chosen neighbor graph with edge weight
/// ((m(p)+m(q))/2) * |p-q|. Paths are confined to the box.
struct DistanceField {
  Grid grid;
  std::vector<Index> source;
  ScalarField d_values;  // dimensionless
  Neighborhood neighborhood = Neighborhood::kFull;
  // some geodesic runs through a boundary node (shortest-path tree has a
  // non-source boundary node with children): distances there are suspect
  // because the true geodesic may want to leave the box
  bool boundary_hug = false;
  // fraction of metric points that were clipped / under-resolved / exiting
  // the box; carried over from the metric field as a confidence note
  double low_confidence_fraction = 0.0;
};

DistanceField agmon_distance(const MaximalField& m_field, Index source,
                             const DistanceOptions& opts = {});
/// Set sources initialize every member at 0 (distance to the set).
DistanceField agmon_distance(const MaximalField& m_field,
                             const std::vector<Index>& source,
                             const DistanceOptions& opts = {});

/// Distance-side lemma battery. The lemmas quantify over pairs (x, y), so
/// the sampler pools the given field's first source with a handful of extra
/// sources drawn from trusted metric points (each gets its own shortest-path
/// run). Reports: sup d over sampled pairs with |x-y| m(x) <= 1
/// ("d_bounded"), least-squares exponent and constant of d against
/// 1 + |x-y| m(x) on pairs with |x-y| m(x) >= 2 ("growth_exponent",
/// "growth_constant"), and the separation verdict min d over pairs with x
/// outside B(y, 2/m(y)) ("aprop_separation"). Diagnostic: never throws on
/// content, only on grid mismatch.
PropertyReport check_distance_lemmas(const DistanceField& d_field,
                                     const MaximalField& m_field,
                                     std::uint64_t rng_seed);

struct PairSample {
  Index x_idx = -1;  // -1 when the source is a set (distance-to-set rows)
  Index y_idx = -1;
  double euclid = 0.0;  // |x - y|, to the nearest source member for sets
  double agmon_d = 0.0;
};

std::vector<PairSample> pair_table(const DistanceField& d,
                                   const std::vector<Index>& targets);
/// CSV with header x_idx,y_idx,euclid,agmon_d; full double precision.
void write_pair_csv(const std::string& path, const std::vector<PairSample>& rows);

}  // namespace agmonlab
