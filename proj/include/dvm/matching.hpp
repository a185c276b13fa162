#pragma once

#include "dvm/common.hpp"
#include "dvm/deformation.hpp"
#include "dvm/geodesics.hpp"
#include "dvm/geometry.hpp"

#include <cmath>
#include <optional>
#include <vector>

namespace dvm {

/// Row-stochastic sparse matching matrix (rows x cols) with at most top_n
/// entries per row.
struct SoftCorrespondence {
  struct Entry {
    std::uint32_t target = 0;
    double weight = 0.0;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t top_n = 0;
  std::vector<std::vector<Entry>> entries;

  friend bool operator==(const SoftCorrespondence&, const SoftCorrespondence&) = default;
};

/// One target index per source point.
struct IndexMap {
  std::vector<std::size_t> index;

  std::size_t size() const { return index.size(); }
  std::size_t operator[](std::size_t i) const { return index[i]; }
  friend bool operator==(const IndexMap&, const IndexMap&) = default;

  static IndexMap identity(std::size_t n) {
    IndexMap m;
    m.index.resize(n);
    std::iota(m.index.begin(), m.index.end(), std::size_t{0});
    return m;
  }
};

using DenseMap = IndexMap;

struct LossWeights {
  double deform = 0.05;
  double arap = 0.005;
  double smooth = 0.5;
  double geo = 0.02;
};

inline constexpr std::size_t kDefaultTopN = 10;

/// Softmax over -|F_S[i] - F_T[j]|^2 / temperature, truncated to the top_n
/// largest scores (ties to the lowest index) and renormalized.
inline SoftCorrespondence soft_correspondence(const FeatureMatrix& source,
                                              const FeatureMatrix& target,
                                              std::size_t top_n = kDefaultTopN,
                                              double temperature = 0.07) {
  require(source.cols() == target.cols(), "soft_correspondence: feature widths differ (" +
                                              std::to_string(source.cols()) + " vs " +
                                              std::to_string(target.cols()) + ")");
  require(temperature > 0.0, "soft_correspondence: temperature must be positive");
  require(top_n >= 1, "soft_correspondence: top_n must be at least 1");
  require(target.rows() >= 1, "soft_correspondence: empty target");

  SoftCorrespondence pi;
  pi.rows = static_cast<std::size_t>(source.rows());
  pi.cols = static_cast<std::size_t>(target.rows());
  pi.top_n = top_n;
  pi.entries.resize(pi.rows);
  const Eigen::MatrixXd d2 = pairwise_sq_distances(source, target);
  parallel_for(pi.rows, [&](std::size_t i) {
    const auto nn = detail::k_smallest(pi.cols, top_n, [&](std::size_t j) {
      return d2(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    });
    // k_smallest returns square roots; scores use squared distances.
    const double best = nn.front().distance * nn.front().distance;
    std::vector<SoftCorrespondence::Entry> row;
    double total = 0.0;
    for (const auto& nb : nn) {
      const double w = std::exp(-(nb.distance * nb.distance - best) / temperature);
      if (w > 0.0) {
        row.push_back({static_cast<std::uint32_t>(nb.index), w});
        total += w;
      }
    }
    for (auto& e : row) e.weight /= total;
    std::erase_if(row, [](const auto& e) { return !(e.weight > 0.0); });
    pi.entries[i] = std::move(row);
  });
  return pi;
}

/// Row i = sum of weight * values[target] over the entries of row i.
inline FeatureMatrix pull_back(const SoftCorrespondence& pi, const FeatureMatrix& values) {
  require(static_cast<std::size_t>(values.rows()) == pi.cols,
          "pull_back: correspondence has " + std::to_string(pi.cols) + " columns, values have " +
              std::to_string(values.rows()) + " rows");
  FeatureMatrix out = FeatureMatrix::Zero(static_cast<Eigen::Index>(pi.rows), values.cols());
  for (std::size_t i = 0; i < pi.rows; ++i)
    for (const auto& e : pi.entries[i])
      out.row(static_cast<Eigen::Index>(i)) += e.weight * values.row(e.target);
  return out;
}

inline std::vector<Vec3> pull_back(const SoftCorrespondence& pi, std::span<const Vec3> values) {
  require(values.size() == pi.cols, "pull_back: correspondence columns do not match the values");
  std::vector<Vec3> out(pi.rows, Vec3::Zero());
  for (std::size_t i = 0; i < pi.rows; ++i)
    for (const auto& e : pi.entries[i]) out[i] += e.weight * values[e.target];
  return out;
}

/// chamfer(T, pi * T).
inline double smoothness_loss(const SoftCorrespondence& pi, const PointCloud& target) {
  require(pi.cols == target.size(), "smoothness_loss: correspondence columns do not match |T|");
  const auto pulled = pull_back(pi, target.points());
  return chamfer(target.points(), std::span<const Vec3>(pulled));
}

/// Nearest target row per source row (ties to the lowest index).
inline DenseMap hard_match(const FeatureMatrix& source, const FeatureMatrix& target) {
  require(source.cols() == target.cols(), "hard_match: feature widths differ");
  const auto nn = knn(source, target, 1);
  DenseMap m;
  m.index.reserve(nn.size());
  for (const auto& l : nn) m.index.push_back(l.front().index);
  return m;
}

inline DenseMap hard_match(const PointCloud& source, const PointCloud& target) {
  DenseMap m;
  m.index = nearest_indices(source.points(), target.points());
  return m;
}

/// Unweighted loss terms of one direction plus the weighted total.
struct LossBreakdown {
  double deform = 0.0;
  double arap = 0.0;
  double smooth = 0.0;
  double geo = 0.0;
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o) {
    deform += o.deform;
    arap += o.arap;
    smooth += o.smooth;
    geo += o.geo;
    total += o.total;
    return *this;
  }
};

inline double weighted_total(const LossBreakdown& b, const LossWeights& w) {
  return w.deform * b.deform + w.arap * b.arap + w.smooth * b.smooth + w.geo * b.geo;
}

/// Loss of the direction S -> T. L_geo is skipped (reported 0) when no
/// geodesic matrix is given.
inline LossBreakdown total_loss(const DeformationGraph& graph, const TransformSet& x,
                                const PointCloud& source, const PointCloud& target,
                                const SoftCorrespondence& pi, const FeatureMatrix& source_features,
                                const GeodesicMatrix* source_geodesics, const LossWeights& weights,
                                MatchMode mode = MatchMode::Full,
                                std::size_t geo_k = kDefaultTopN) {
  LossBreakdown b;
  b.deform = deformation_loss(graph, x, source, target, mode);
  b.arap = arap_energy(graph, x);
  b.smooth = smoothness_loss(pi, target);
  if (source_geodesics)
    b.geo = geodesic_similarity_loss(source_features, *source_geodesics, geo_k);
  b.total = weighted_total(b, weights);
  return b;
}

}  // namespace dvm
