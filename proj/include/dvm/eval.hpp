#pragma once

#include "dvm/common.hpp"
#include "dvm/geodesics.hpp"
#include "dvm/geometry.hpp"
#include "dvm/matching.hpp"

#include <cmath>
#include <string>

namespace dvm {

using GroundTruth = IndexMap;

namespace detail {
inline void check_map(const DenseMap& map, const GroundTruth& gt, std::size_t target_size,
                      const char* who) {
  require(map.size() == gt.size(), std::string(who) + ": map has " +
                                       std::to_string(map.size()) + " entries, ground truth " +
                                       std::to_string(gt.size()));
  for (std::size_t i = 0; i < map.size(); ++i) {
    require(map[i] < target_size && gt[i] < target_size,
            std::string(who) + ": index out of range at row " + std::to_string(i));
  }
}
}  // namespace detail

/// Mean Euclidean distance between mapped and true target points.
inline double euclidean_error(const DenseMap& map, const GroundTruth& gt, const PointCloud& target) {
  detail::check_map(map, gt, target.size(), "euclidean_error");
  require(map.size() > 0, "euclidean_error: empty map");
  double sum = 0.0;
  for (std::size_t i = 0; i < map.size(); ++i) sum += (target[map[i]] - target[gt[i]]).norm();
  return sum / static_cast<double>(map.size());
}

/// Fraction of points whose mapped target lies strictly within
/// tolerance * diameter(T) of the true target.
inline double accuracy(const DenseMap& map, const GroundTruth& gt, const PointCloud& target,
                       double tolerance, std::optional<double> diameter = std::nullopt) {
  detail::check_map(map, gt, target.size(), "accuracy");
  require(tolerance >= 0.0 && tolerance <= 1.0, "accuracy: tolerance must lie in [0, 1]");
  require(map.size() > 0, "accuracy: empty map");
  const double d = diameter ? *diameter : target.diameter();
  const double limit = tolerance * d;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < map.size(); ++i)
    if ((target[map[i]] - target[gt[i]]).norm() < limit) ++hits;
  return static_cast<double>(hits) / static_cast<double>(map.size());
}

/// Bounding-box diagonal, the default normalizer for meshless clouds.
inline double bbox_diagonal(const PointCloud& cloud) {
  auto [lo, hi] = cloud.bounds();
  return (hi - lo).norm();
}

/// Mean geodesic distance between mapped and true targets divided by area_scale.
inline double geodesic_error(const DenseMap& map, const GroundTruth& gt,
                             const GeodesicMatrix& target_geodesics, double area_scale) {
  const auto n = static_cast<std::size_t>(target_geodesics.size());
  require(target_geodesics.distances.rows() == target_geodesics.distances.cols(),
          "geodesic_error: geodesic matrix must be square");
  detail::check_map(map, gt, n, "geodesic_error");
  require(area_scale > 0.0, "geodesic_error: area_scale must be positive");
  require(map.size() > 0, "geodesic_error: empty map");
  double sum = 0.0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    const double g = target_geodesics(map[i], gt[i]);
    if (!std::isfinite(g))
      throw NumericalError("geodesic_error: infinite geodesic distance at row " +
                           std::to_string(i));
    sum += g;
  }
  return sum / static_cast<double>(map.size()) / area_scale;
}

}  // namespace dvm
