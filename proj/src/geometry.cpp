#include "gres/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gres/errors.hpp"
#include "gres/simd/kernels.hpp"

namespace gres {

double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

void SceneCloud::validate() const {
  const std::size_t n = positions.size();
  if (colors.size() != n || superpoint_id.size() != n || instance_id.size() != n) {
    throw StructuralError("scene arrays disagree on point count");
  }
  if (instance_center.size() != instance_class.size()) {
    throw StructuralError("instance table columns disagree in length");
  }
  std::vector<char> seen(num_superpoints, 0);
  for (std::size_t p = 0; p < n; ++p) {
    const int s = superpoint_id[p];
    if (s < 0 || static_cast<std::size_t>(s) >= num_superpoints) {
      throw StructuralError("point " + std::to_string(p) + " has superpoint id " +
                            std::to_string(s) + " outside [0, " + std::to_string(num_superpoints) + ")");
    }
    seen[s] = 1;
    const int inst = instance_id[p];
    if (inst < -1 || inst >= static_cast<int>(num_instances())) {
      throw StructuralError("point " + std::to_string(p) + " references unknown instance " +
                            std::to_string(inst));
    }
  }
  for (std::size_t s = 0; s < num_superpoints; ++s) {
    if (!seen[s]) throw StructuralError("superpoint " + std::to_string(s) + " has no points");
  }
}

std::size_t SuperpointMask::count() const {
  return static_cast<std::size_t>(std::count(values.begin(), values.end(), 1.0));
}

namespace {

std::vector<std::size_t> superpoint_sizes(const SceneCloud& scene) {
  std::vector<std::size_t> sizes(scene.num_superpoints, 0);
  for (std::size_t p = 0; p < scene.num_points(); ++p) {
    const int s = scene.superpoint_id[p];
    if (s < 0 || static_cast<std::size_t>(s) >= scene.num_superpoints) {
      throw StructuralError("point " + std::to_string(p) + " has invalid superpoint id " + std::to_string(s));
    }
    ++sizes[s];
  }
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    if (sizes[s] == 0) throw StructuralError("superpoint " + std::to_string(s) + " has no points");
  }
  return sizes;
}

}  // namespace

Tensor superpoint_pool(const Tensor& point_features, const SceneCloud& scene) {
  if (point_features.rows() != scene.num_points()) {
    throw ArgumentError("superpoint_pool: " + std::to_string(point_features.rows()) +
                        " feature rows for " + std::to_string(scene.num_points()) + " points");
  }
  const auto sizes = superpoint_sizes(scene);
  const auto& k = simd::active();
  const std::size_t d = point_features.cols();
  Tensor out(scene.num_superpoints, d);
  for (std::size_t p = 0; p < scene.num_points(); ++p) {
    k.add(point_features.row(p).data(), out.row(scene.superpoint_id[p]).data(), d);
  }
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    k.scale(1.0 / static_cast<double>(sizes[s]), out.row(s).data(), d);
  }
  return out;
}

Tensor expand_to_points(const Tensor& superpoint_values, const SceneCloud& scene) {
  if (superpoint_values.rows() != scene.num_superpoints) {
    throw ArgumentError("expand_to_points: row count differs from superpoint count");
  }
  Tensor out(scene.num_points(), superpoint_values.cols());
  for (std::size_t p = 0; p < scene.num_points(); ++p) {
    const auto src = superpoint_values.row(scene.superpoint_id[p]);
    std::copy(src.begin(), src.end(), out.row(p).begin());
  }
  return out;
}

std::vector<int> expand_mask_to_points(std::span<const int> superpoint_mask, const SceneCloud& scene) {
  if (superpoint_mask.size() != scene.num_superpoints) {
    throw ArgumentError("expand_mask_to_points: mask length differs from superpoint count");
  }
  std::vector<int> out(scene.num_points());
  for (std::size_t p = 0; p < scene.num_points(); ++p) out[p] = superpoint_mask[scene.superpoint_id[p]];
  return out;
}

std::vector<Vec3> superpoint_centroids(const SceneCloud& scene) {
  Tensor pos(scene.num_points(), 3);
  for (std::size_t p = 0; p < scene.num_points(); ++p)
    for (int c = 0; c < 3; ++c) pos(p, c) = scene.positions[p][c];
  const Tensor pooled = superpoint_pool(pos, scene);
  std::vector<Vec3> out(scene.num_superpoints);
  for (std::size_t s = 0; s < out.size(); ++s) out[s] = {pooled(s, 0), pooled(s, 1), pooled(s, 2)};
  return out;
}

std::vector<int> fss(std::span<const Vec3> centroids, std::size_t n) {
  const std::size_t total = centroids.size();
  if (n == 0 || n > total) {
    throw ArgumentError("fss: cannot sample " + std::to_string(n) + " of " + std::to_string(total) +
                        " superpoints");
  }
  std::vector<double> xs(total), ys(total), zs(total);
  for (std::size_t i = 0; i < total; ++i) {
    xs[i] = centroids[i][0];
    ys[i] = centroids[i][1];
    zs[i] = centroids[i][2];
  }
  // Selected entries are pinned to -1 so they can never win the argmax, even
  // when duplicates of them remain at distance 0.
  std::vector<double> min_dist(total, std::numeric_limits<double>::infinity());
  const auto& k = simd::active();

  std::vector<int> picked;
  picked.reserve(n);
  std::size_t current = 0;
  for (;;) {
    picked.push_back(static_cast<int>(current));
    min_dist[current] = -1.0;
    if (picked.size() == n) break;
    k.update_min_sq_dist(xs.data(), ys.data(), zs.data(), xs[current], ys[current], zs[current],
                         min_dist.data(), total);
    std::size_t best = total;
    double best_dist = -1.0;
    for (std::size_t i = 0; i < total; ++i) {
      if (min_dist[i] > best_dist) {
        best_dist = min_dist[i];
        best = i;
      }
    }
    current = best;
  }
  return picked;
}

std::vector<int> superpoint_majority_instance(const SceneCloud& scene) {
  const auto sizes = superpoint_sizes(scene);
  const std::size_t n_inst = scene.num_instances();
  // counts[s * n_inst + i]; scenes are small, a dense table is fine.
  std::vector<std::size_t> counts(scene.num_superpoints * n_inst, 0);
  for (std::size_t p = 0; p < scene.num_points(); ++p) {
    const int inst = scene.instance_id[p];
    if (inst >= 0) ++counts[scene.superpoint_id[p] * n_inst + inst];
  }
  std::vector<int> owner(scene.num_superpoints, -1);
  for (std::size_t s = 0; s < scene.num_superpoints; ++s) {
    for (std::size_t i = 0; i < n_inst; ++i) {
      const std::size_t c = counts[s * n_inst + i];
      // Strict majority is unique; for an exact half the first (smallest) id wins.
      if (2 * c > sizes[s] || (2 * c == sizes[s] && c > 0)) {
        owner[s] = static_cast<int>(i);
        break;
      }
    }
  }
  return owner;
}

SuperpointMask instance_superpoint_mask(const SceneCloud& scene, int instance) {
  if (instance < 0 || instance >= static_cast<int>(scene.num_instances())) {
    throw ArgumentError("unknown instance id " + std::to_string(instance));
  }
  const auto owner = superpoint_majority_instance(scene);
  SuperpointMask mask;
  mask.values.resize(owner.size());
  for (std::size_t s = 0; s < owner.size(); ++s) mask.values[s] = owner[s] == instance ? 1.0 : 0.0;
  return mask;
}

std::vector<double> gaussian_relevance_labels(std::span<const Vec3> seed_positions,
                                              std::span<const int> seed_sources,
                                              const SceneCloud& scene,
                                              std::span<const int> mentioned, double alpha,
                                              double sigma) {
  if (seed_positions.size() != seed_sources.size()) {
    throw ArgumentError("gaussian_relevance_labels: positions and sources differ in length");
  }
  if (!(alpha > 0.0) || !(sigma > 0.0)) {
    throw ArgumentError("gaussian_relevance_labels: alpha and sigma must be positive");
  }
  std::vector<double> labels(seed_positions.size(), 0.0);
  if (mentioned.empty()) return labels;
  const auto owner = superpoint_majority_instance(scene);
  for (int inst : mentioned) {
    if (inst < 0 || inst >= static_cast<int>(scene.num_instances())) {
      throw ArgumentError("unknown mentioned instance " + std::to_string(inst));
    }
    const Vec3& center = scene.instance_center[inst];
    int nearest = -1;
    double nearest_d2 = 0.0;
    for (std::size_t i = 0; i < seed_sources.size(); ++i) {
      const int src = seed_sources[i];
      if (src < 0 || static_cast<std::size_t>(src) >= owner.size()) {
        throw ArgumentError("seed source " + std::to_string(src) + " is not a superpoint");
      }
      if (owner[src] != inst) continue;
      const double d2 = squared_distance(seed_positions[i], center);
      if (nearest < 0 || d2 < nearest_d2) {
        nearest = static_cast<int>(i);
        nearest_d2 = d2;
      }
      labels[i] = std::max(labels[i], std::exp(-alpha * d2 / (sigma * sigma)));
    }
    if (nearest >= 0) labels[nearest] = 1.0;
  }
  return labels;
}

CoverageStats coverage_repetition_rates(std::span<const int> selected_seed_sources,
                                        const SceneCloud& scene) {
  if (scene.num_instances() == 0) throw ArgumentError("coverage statistics need at least one instance");
  const auto owner = superpoint_majority_instance(scene);
  std::vector<char> covered(scene.num_instances(), 0);
  CoverageStats stats;
  for (int src : selected_seed_sources) {
    if (src < 0 || static_cast<std::size_t>(src) >= owner.size()) {
      throw ArgumentError("seed source " + std::to_string(src) + " is not a superpoint");
    }
    if (owner[src] < 0) continue;
    ++stats.covering_seeds;
    if (!covered[owner[src]]) {
      covered[owner[src]] = 1;
      ++stats.covered_instances;
    }
  }
  stats.coverage_rate =
      static_cast<double>(stats.covered_instances) / static_cast<double>(scene.num_instances());
  if (stats.covering_seeds > 0) {
    stats.repetition_rate = static_cast<double>(stats.covering_seeds - stats.covered_instances) /
                            static_cast<double>(stats.covering_seeds);
  }
  return stats;
}

}  // namespace gres
