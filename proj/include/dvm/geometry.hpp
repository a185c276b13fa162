#pragma once

#include "dvm/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

namespace dvm {

/// Ordered, non-empty list of finite 3D points. Index i names the same point
/// for the lifetime of the instance.
class PointCloud {
 public:
  PointCloud() = default;

  explicit PointCloud(std::vector<Vec3> points) : points_(std::move(points)) {
    require(!points_.empty(), "PointCloud: at least one point is required");
    for (std::size_t i = 0; i < points_.size(); ++i) {
      if (!points_[i].allFinite())
        throw InvalidArgument("PointCloud: point " + std::to_string(i) +
                              " has a non-finite coordinate");
    }
  }

  static PointCloud from_rows(const Eigen::Ref<const FeatureMatrix>& rows) {
    require(rows.cols() == 3, "PointCloud::from_rows: expected 3 columns");
    std::vector<Vec3> pts(static_cast<std::size_t>(rows.rows()));
    for (Eigen::Index i = 0; i < rows.rows(); ++i) pts[i] = rows.row(i).transpose();
    return PointCloud(std::move(pts));
  }

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const Vec3& operator[](std::size_t i) const { return points_[i]; }
  std::span<const Vec3> points() const { return points_; }
  auto begin() const { return points_.begin(); }
  auto end() const { return points_.end(); }

  /// N x 3 copy, one point per row.
  FeatureMatrix rows() const {
    FeatureMatrix m(static_cast<Eigen::Index>(size()), 3);
    for (std::size_t i = 0; i < size(); ++i) m.row(i) = points_[i].transpose();
    return m;
  }

  Vec3 centroid() const {
    Vec3 c = Vec3::Zero();
    for (const auto& p : points_) c += p;
    return c / static_cast<double>(size());
  }

  std::pair<Vec3, Vec3> bounds() const {
    Vec3 lo = points_.front(), hi = points_.front();
    for (const auto& p : points_) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    return {lo, hi};
  }

  /// Largest pairwise Euclidean distance (exact, O(N^2)).
  double diameter() const {
    double best = 0.0;
    for (std::size_t i = 0; i < size(); ++i)
      for (std::size_t j = i + 1; j < size(); ++j)
        best = std::max(best, (points_[i] - points_[j]).squaredNorm());
    return std::sqrt(best);
  }

  template <typename F>
  PointCloud transformed(F&& f) const {
    std::vector<Vec3> out;
    out.reserve(size());
    for (const auto& p : points_) out.push_back(f(p));
    return PointCloud(std::move(out));
  }

  PointCloud subset(std::span<const std::size_t> indices) const {
    std::vector<Vec3> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(points_.at(i));
    return PointCloud(std::move(out));
  }

  friend bool operator==(const PointCloud&, const PointCloud&) = default;

 private:
  std::vector<Vec3> points_;
};

/// normalized = (raw - center) / scale.
struct NormalizationRecord {
  Vec3 center = Vec3::Zero();
  double scale = 1.0;
  bool degenerate = false;

  Vec3 apply(const Vec3& p) const { return (p - center) / scale; }
  Vec3 invert(const Vec3& p) const { return p * scale + center; }
  PointCloud apply(const PointCloud& c) const {
    return c.transformed([this](const Vec3& p) { return apply(p); });
  }
  PointCloud invert(const PointCloud& c) const {
    return c.transformed([this](const Vec3& p) { return invert(p); });
  }
};

/// Centers at the centroid and scales the longest bounding-box edge to 1.
/// Zero extent keeps scale 1 and sets the degenerate flag.
inline std::pair<PointCloud, NormalizationRecord> normalize_cloud(const PointCloud& cloud) {
  require(!cloud.empty(), "normalize_cloud: empty cloud");
  NormalizationRecord rec;
  rec.center = cloud.centroid();
  auto [lo, hi] = cloud.bounds();
  const double extent = (hi - lo).maxCoeff();
  if (extent > 0.0) {
    rec.scale = extent;
  } else {
    rec.scale = 1.0;
    rec.degenerate = true;
  }
  return {rec.apply(cloud), rec};
}

/// Row-selection matrix Pi_D in index form: row i has its single 1 at
/// column selected[i].
struct SelectionMatrix {
  std::size_t source_size = 0;
  std::vector<std::size_t> selected;

  std::size_t rows() const { return selected.size(); }

  /// Pi_D * V for per-point rows V.
  template <typename Rows>
  std::vector<typename Rows::value_type> apply(const Rows& values) const {
    std::vector<typename Rows::value_type> out;
    out.reserve(selected.size());
    for (auto i : selected) out.push_back(values[i]);
    return out;
  }

  PointCloud apply(const PointCloud& cloud) const { return cloud.subset(selected); }

  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows()),
                                              static_cast<Eigen::Index>(source_size));
    for (std::size_t i = 0; i < rows(); ++i) m(i, selected[i]) = 1.0;
    return m;
  }
};

/// Greedy farthest point sampling starting at `seed`; ties go to the lowest index.
inline SelectionMatrix farthest_point_sample(const PointCloud& cloud, std::size_t count,
                                             std::size_t seed = 0) {
  const std::size_t n = cloud.size();
  require(count >= 1, "farthest_point_sample: count must be at least 1");
  require(count <= n, "farthest_point_sample: count " + std::to_string(count) +
                          " exceeds cloud size " + std::to_string(n));
  require(seed < n, "farthest_point_sample: seed index out of range");

  SelectionMatrix sel;
  sel.source_size = n;
  sel.selected.reserve(count);
  sel.selected.push_back(seed);

  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);
  taken[seed] = 1;
  std::size_t last = seed;
  while (sel.selected.size() < count) {
    std::size_t best = n;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      const double d = (cloud[i] - cloud[last]).squaredNorm();
      if (d < min_d2[i]) min_d2[i] = d;
      if (min_d2[i] > best_d) {
        best_d = min_d2[i];
        best = i;
      }
    }
    taken[best] = 1;
    sel.selected.push_back(best);
    last = best;
  }
  return sel;
}

struct Neighbor {
  std::size_t index = 0;
  double distance = 0.0;
};

using NeighborLists = std::vector<std::vector<Neighbor>>;

namespace detail {

inline bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
}

template <typename DistFn>
std::vector<Neighbor> k_smallest(std::size_t count, std::size_t k, DistFn&& dist2,
                                 std::size_t skip = static_cast<std::size_t>(-1)) {
  std::vector<Neighbor> all;
  all.reserve(count);
  for (std::size_t j = 0; j < count; ++j) {
    if (j == skip) continue;
    all.push_back({j, dist2(j)});
  }
  const std::size_t kk = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(kk), all.end(),
                    neighbor_less);
  all.resize(kk);
  for (auto& nb : all) nb.distance = std::sqrt(nb.distance);
  return all;
}

}  // namespace detail

/// Exact brute-force k nearest neighbours between feature rows. Results are in
/// ascending distance, ties broken toward the lowest reference index.
inline NeighborLists knn(const Eigen::Ref<const FeatureMatrix>& query,
                         const Eigen::Ref<const FeatureMatrix>& reference, std::size_t k) {
  require(k >= 1, "knn: k must be at least 1");
  require(query.cols() == reference.cols(),
          "knn: dimension mismatch (" + std::to_string(query.cols()) + " vs " +
              std::to_string(reference.cols()) + ")");
  require(k <= static_cast<std::size_t>(reference.rows()),
          "knn: k exceeds the reference size");
  NeighborLists out(static_cast<std::size_t>(query.rows()));
  parallel_for(out.size(), [&](std::size_t i) {
    const auto q = query.row(static_cast<Eigen::Index>(i));
    out[i] = detail::k_smallest(static_cast<std::size_t>(reference.rows()), k,
                                [&](std::size_t j) {
                                  return (reference.row(static_cast<Eigen::Index>(j)) - q)
                                      .squaredNorm();
                                });
  });
  return out;
}

inline NeighborLists knn(std::span<const Vec3> query, std::span<const Vec3> reference,
                         std::size_t k) {
  require(k >= 1, "knn: k must be at least 1");
  require(k <= reference.size(), "knn: k exceeds the reference size");
  NeighborLists out(query.size());
  parallel_for(out.size(), [&](std::size_t i) {
    out[i] = detail::k_smallest(reference.size(), k, [&](std::size_t j) {
      return (reference[j] - query[i]).squaredNorm();
    });
  });
  return out;
}

inline NeighborLists knn(const PointCloud& query, const PointCloud& reference, std::size_t k) {
  return knn(query.points(), reference.points(), k);
}

/// k nearest neighbours of every point among the other points of the same cloud.
inline NeighborLists knn_self(std::span<const Vec3> points, std::size_t k) {
  require(k >= 1 && k < points.size(), "knn_self: need 1 <= k < N");
  NeighborLists out(points.size());
  parallel_for(out.size(), [&](std::size_t i) {
    out[i] = detail::k_smallest(
        points.size(), k, [&](std::size_t j) { return (points[j] - points[i]).squaredNorm(); },
        i);
  });
  return out;
}

/// Index of the nearest point of `reference` for every query point.
inline std::vector<std::size_t> nearest_indices(std::span<const Vec3> query,
                                                std::span<const Vec3> reference) {
  require(!reference.empty(), "nearest_indices: empty reference");
  std::vector<std::size_t> out(query.size());
  parallel_for(query.size(), [&](std::size_t i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < reference.size(); ++j) {
      const double d = (reference[j] - query[i]).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    out[i] = best;
  });
  return out;
}

/// Mean over a in A of the squared distance to the nearest b in B.
inline double one_sided_chamfer(std::span<const Vec3> a, std::span<const Vec3> b) {
  require(!a.empty() && !b.empty(), "chamfer: empty input");
  const auto nn = nearest_indices(a, b);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[nn[i]]).squaredNorm();
  return sum / static_cast<double>(a.size());
}

/// Squared-distance, mean-reduced chamfer summed over both directions.
inline double chamfer(std::span<const Vec3> a, std::span<const Vec3> b) {
  return one_sided_chamfer(a, b) + one_sided_chamfer(b, a);
}

inline double one_sided_chamfer(const PointCloud& a, const PointCloud& b) {
  return one_sided_chamfer(a.points(), b.points());
}

inline double chamfer(const PointCloud& a, const PointCloud& b) {
  return chamfer(a.points(), b.points());
}

}  // namespace dvm
