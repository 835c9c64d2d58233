#pragma once

// Geometric and set-level kernels over superpoint-partitioned point clouds.
// All functions are pure; none keep state between calls.

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "gres/tensor.hpp"

namespace gres {

using Vec3 = std::array<double, 3>;

double squared_distance(const Vec3& a, const Vec3& b);

// Colored point cloud with precomputed superpoints and instance labels.
//
// Invariants (checked by validate()):
//  - one superpoint id per point, ids contiguous in [0, num_superpoints), none empty;
//  - instance ids are -1 (background) or index the instance table.
struct SceneCloud {
  std::vector<Vec3> positions;
  std::vector<Vec3> colors;
  std::vector<int> superpoint_id;
  std::vector<int> instance_id;
  std::vector<int> instance_class;
  std::vector<Vec3> instance_center;
  std::size_t num_superpoints = 0;

  std::size_t num_points() const { return positions.size(); }
  std::size_t num_instances() const { return instance_class.size(); }

  // Throws StructuralError describing the first violated invariant.
  void validate() const;

  friend bool operator==(const SceneCloud&, const SceneCloud&) = default;
};

// Binary mask over superpoints (values exactly 0 or 1).
struct SuperpointMask {
  std::vector<double> values;
  std::size_t count() const;
  friend bool operator==(const SuperpointMask&, const SuperpointMask&) = default;
};

// Row s = mean of the rows of point_features whose point lies in superpoint s.
Tensor superpoint_pool(const Tensor& point_features, const SceneCloud& scene);

// Inverse direction: point p receives row superpoint_id[p].
Tensor expand_to_points(const Tensor& superpoint_values, const SceneCloud& scene);
std::vector<int> expand_mask_to_points(std::span<const int> superpoint_mask, const SceneCloud& scene);

std::vector<Vec3> superpoint_centroids(const SceneCloud& scene);

// Greedy farthest point sampling. Starts at index 0; each step takes the
// point maximising the squared distance to the selected set, lowest index on
// ties. Throws ArgumentError unless 1 <= n <= centroids.size().
std::vector<int> fss(std::span<const Vec3> centroids, std::size_t n);

// The instance holding a strict majority of each superpoint's points, or the
// smallest instance id holding exactly half when no strict majority exists.
// -1 when no instance qualifies. Background points never claim a superpoint.
std::vector<int> superpoint_majority_instance(const SceneCloud& scene);

// 1 where superpoint_majority_instance == instance.
SuperpointMask instance_superpoint_mask(const SceneCloud& scene, int instance);

// Relevance targets for seed queries. A seed belongs to the instance that
// owns its source superpoint. Per mentioned instance the member seed nearest
// the instance center scores 1 and other members exp(-alpha d^2 / sigma^2);
// everything else scores 0. Overlapping claims keep the maximum.
std::vector<double> gaussian_relevance_labels(std::span<const Vec3> seed_positions,
                                              std::span<const int> seed_sources,
                                              const SceneCloud& scene,
                                              std::span<const int> mentioned, double alpha,
                                              double sigma);

struct CoverageStats {
  double coverage_rate = 0.0;
  double repetition_rate = 0.0;
  std::size_t covered_instances = 0;
  std::size_t covering_seeds = 0;
};

// CR = covered / total instances; RR = (covering seeds - covered) / covering
// seeds, 0 when no seed lands in an instance.
CoverageStats coverage_repetition_rates(std::span<const int> selected_seed_sources,
                                        const SceneCloud& scene);

}  // namespace gres
