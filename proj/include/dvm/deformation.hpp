#pragma once

#include "dvm/common.hpp"
#include "dvm/geometry.hpp"

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace dvm {

using Rotation6D = Eigen::Matrix<double, 6, 1>;

/// Continuous 6D rotation parametrization: Gram-Schmidt on (a1, a2), third
/// column b1 x b2. Throws on a zero a1 or a2 parallel to a1.
inline Mat3 rotation_from_6d(const Rotation6D& theta) {
  const Vec3 a1 = theta.head<3>(), a2 = theta.tail<3>();
  const double n1 = a1.norm();
  if (!(n1 > 0.0) || !std::isfinite(n1))
    throw NumericalError("rotation_from_6d: first column is zero");
  const Vec3 b1 = a1 / n1;
  const Vec3 u2 = a2 - a2.dot(b1) * b1;
  const double n2 = u2.norm();
  if (!(n2 > 1e-12 * std::max(1.0, a2.norm())))
    throw NumericalError("rotation_from_6d: second column is parallel to the first");
  const Vec3 b2 = u2 / n2;
  Mat3 r;
  r.col(0) = b1;
  r.col(1) = b2;
  r.col(2) = b1.cross(b2);
  return r;
}

/// Partial derivatives dR/dtheta_k for k = 0..5.
inline std::array<Mat3, 6> rotation_6d_jacobian(const Rotation6D& theta) {
  const Vec3 a1 = theta.head<3>(), a2 = theta.tail<3>();
  const double n1 = a1.norm();
  const Vec3 b1 = a1 / n1;
  const double c = a2.dot(b1);
  const Vec3 u2 = a2 - c * b1;
  const double n2 = u2.norm();
  const Vec3 b2 = u2 / n2;
  const Mat3 p1 = (Mat3::Identity() - b1 * b1.transpose()) / n1;
  const Mat3 p2 = (Mat3::Identity() - b2 * b2.transpose()) / n2;
  const Mat3 du2_db1 = -(b1 * a2.transpose() + c * Mat3::Identity());
  const Mat3 du2_da2 = Mat3::Identity() - b1 * b1.transpose();

  std::array<Mat3, 6> out;
  for (int k = 0; k < 6; ++k) {
    Vec3 da1 = Vec3::Zero(), da2 = Vec3::Zero();
    if (k < 3)
      da1[k] = 1.0;
    else
      da2[k - 3] = 1.0;
    const Vec3 db1 = p1 * da1;
    const Vec3 db2 = p2 * (du2_da2 * da2 + du2_db1 * db1);
    out[k].col(0) = db1;
    out[k].col(1) = db2;
    out[k].col(2) = db1.cross(b2) + b1.cross(db2);
  }
  return out;
}

/// The first two columns of R, the canonical 6D representative.
inline Rotation6D rotation_to_6d(const Mat3& r) {
  Rotation6D t;
  t << r.col(0), r.col(1);
  return t;
}

struct SkinWeight {
  std::size_t node = 0;
  double weight = 0.0;
};

/// Embedded deformation graph over a source cloud.
struct DeformationGraph {
  std::vector<Vec3> nodes;                              // g_h = S[selection.selected[h]]
  SelectionMatrix selection;
  std::vector<std::vector<std::size_t>> node_neighbors;  // psi(h), undirected
  std::vector<std::vector<SkinWeight>> skin;            // per source point
  std::size_t k_skin = 0;

  std::size_t node_count() const { return nodes.size(); }
  std::size_t point_count() const { return skin.size(); }
  std::size_t directed_edge_count() const {
    std::size_t e = 0;
    for (const auto& l : node_neighbors) e += l.size();
    return e;
  }
};

struct GraphOptions {
  std::size_t node_count = 0;  // 0 selects floor(N/2) (at least 1)
  std::size_t k_node = 6;
  std::size_t k_skin = 4;
  std::size_t seed = 0;
};

inline DeformationGraph build_deformation_graph(const PointCloud& source,
                                                const GraphOptions& opts = {}) {
  const std::size_t n = source.size();
  const std::size_t m = opts.node_count == 0 ? std::max<std::size_t>(1, n / 2) : opts.node_count;
  require(m <= n, "build_deformation_graph: node_count " + std::to_string(m) +
                      " exceeds the point count " + std::to_string(n));
  require(opts.k_skin >= 1, "build_deformation_graph: k_skin must be at least 1");

  DeformationGraph g;
  g.selection = farthest_point_sample(source, m, opts.seed);
  g.nodes = g.selection.apply(std::vector<Vec3>(source.begin(), source.end()));
  g.k_skin = opts.k_skin;

  g.node_neighbors.assign(m, {});
  if (m > 1 && opts.k_node > 0) {
    const auto nn = knn_self(g.nodes, std::min(opts.k_node, m - 1));
    for (std::size_t h = 0; h < m; ++h) {
      for (const auto& nb : nn[h]) {
        g.node_neighbors[h].push_back(nb.index);
        g.node_neighbors[nb.index].push_back(h);
      }
    }
    for (auto& l : g.node_neighbors) {
      std::sort(l.begin(), l.end());
      l.erase(std::unique(l.begin(), l.end()), l.end());
    }
  }

  // Weights (1 - d/d_max)^2 over the k_skin nearest nodes, d_max being the
  // distance to the next nearest node.
  const std::size_t ks = std::min(opts.k_skin, m);
  const std::size_t kq = std::min(opts.k_skin + 1, m);
  const auto near = knn(source.points(), std::span<const Vec3>(g.nodes), kq);
  g.skin.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& list = near[i];
    double dmax = 0.0;
    if (list.size() > ks)
      dmax = list[ks].distance;
    else
      dmax = 2.0 * list.back().distance;
    auto& sk = g.skin[i];
    sk.resize(ks);
    double total = 0.0;
    for (std::size_t a = 0; a < ks; ++a) {
      sk[a].node = list[a].index;
      double w = 0.0;
      if (dmax > 0.0) {
        const double t = 1.0 - list[a].distance / dmax;
        w = t * t;
      }
      sk[a].weight = w;
      total += w;
    }
    if (total > 0.0) {
      for (auto& s : sk) s.weight /= total;
    } else {
      for (auto& s : sk) s.weight = 0.0;
      sk[0].weight = 1.0;
    }
  }
  return g;
}

/// Per-node rigid transforms: 6D rotation rows and translations.
struct TransformSet {
  Eigen::Matrix<double, Eigen::Dynamic, 6, Eigen::RowMajor> rotation;
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> translation;

  static TransformSet identity(std::size_t m) {
    TransformSet x;
    x.rotation.resize(static_cast<Eigen::Index>(m), 6);
    x.translation = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>::Zero(
        static_cast<Eigen::Index>(m), 3);
    for (Eigen::Index h = 0; h < x.rotation.rows(); ++h) x.rotation.row(h) << 1, 0, 0, 0, 1, 0;
    return x;
  }

  std::size_t size() const { return static_cast<std::size_t>(rotation.rows()); }
  Rotation6D theta(std::size_t h) const {
    return rotation.row(static_cast<Eigen::Index>(h)).transpose();
  }
  Vec3 delta(std::size_t h) const {
    return translation.row(static_cast<Eigen::Index>(h)).transpose();
  }
  bool all_finite() const { return rotation.allFinite() && translation.allFinite(); }

  /// Flattened [theta_h (6), delta_h (3)] per node.
  Eigen::VectorXd pack() const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(9 * size()));
    for (std::size_t h = 0; h < size(); ++h) {
      v.segment<6>(static_cast<Eigen::Index>(9 * h)) = theta(h);
      v.segment<3>(static_cast<Eigen::Index>(9 * h + 6)) = delta(h);
    }
    return v;
  }
  static TransformSet unpack(const Eigen::VectorXd& v) {
    const std::size_t m = static_cast<std::size_t>(v.size()) / 9;
    TransformSet x;
    x.rotation.resize(static_cast<Eigen::Index>(m), 6);
    x.translation.resize(static_cast<Eigen::Index>(m), 3);
    for (std::size_t h = 0; h < m; ++h) {
      x.rotation.row(static_cast<Eigen::Index>(h)) =
          v.segment<6>(static_cast<Eigen::Index>(9 * h)).transpose();
      x.translation.row(static_cast<Eigen::Index>(h)) =
          v.segment<3>(static_cast<Eigen::Index>(9 * h + 6)).transpose();
    }
    return x;
  }

  friend bool operator==(const TransformSet&, const TransformSet&) = default;
};

/// Rotation matrix of every node; rethrows degeneracies with the node index.
inline std::vector<Mat3> node_rotations(const TransformSet& x) {
  std::vector<Mat3> r(x.size());
  for (std::size_t h = 0; h < x.size(); ++h) {
    try {
      r[h] = rotation_from_6d(x.theta(h));
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " (node " + std::to_string(h) + ")");
    }
  }
  return r;
}

inline void check_shapes(const DeformationGraph& g, const TransformSet& x) {
  require(x.size() == g.node_count(), "transform set has " + std::to_string(x.size()) +
                                          " nodes, graph has " + std::to_string(g.node_count()));
}

/// Deformed source: sum over skinned nodes of w * (R_h (p - g_h) + g_h + delta_h).
inline std::vector<Vec3> deform_points(const DeformationGraph& g, const TransformSet& x,
                                       std::span<const Vec3> source,
                                       const std::vector<Mat3>& rotations) {
  require(source.size() == g.point_count(), "deform: cloud size does not match the graph");
  std::vector<Vec3> out(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    Vec3 acc = Vec3::Zero();
    for (const auto& [h, w] : g.skin[i])
      acc += w * (rotations[h] * (source[i] - g.nodes[h]) + g.nodes[h] + x.delta(h));
    out[i] = acc;
  }
  return out;
}

inline PointCloud deform(const DeformationGraph& g, const TransformSet& x,
                         const PointCloud& source) {
  check_shapes(g, x);
  return PointCloud(deform_points(g, x, source.points(), node_rotations(x)));
}

/// Mean over directed graph edges (h, l) of
/// |R_h (g_l - g_h) + delta_h + g_h - (g_l + delta_l)|^2.
inline double arap_energy(const DeformationGraph& g, const TransformSet& x) {
  check_shapes(g, x);
  const std::size_t edges = g.directed_edge_count();
  if (edges == 0) return 0.0;
  const auto rot = node_rotations(x);
  double sum = 0.0;
  for (std::size_t h = 0; h < g.node_count(); ++h) {
    for (auto l : g.node_neighbors[h]) {
      const Vec3 e = g.nodes[l] - g.nodes[h];
      const Vec3 d = rot[h] * e - e + x.delta(h) - x.delta(l);
      sum += d.squaredNorm();
    }
  }
  return sum / static_cast<double>(edges);
}

enum class MatchMode { Full, Partial };

inline const char* mode_name(MatchMode m) { return m == MatchMode::Full ? "full" : "partial"; }

/// Chamfer between the deformed source and the target; partial mode keeps
/// only the source-to-target direction.
inline double deformation_loss(const DeformationGraph& g, const TransformSet& x,
                               const PointCloud& source, const PointCloud& target,
                               MatchMode mode = MatchMode::Full) {
  const PointCloud moved = deform(g, x, source);
  return mode == MatchMode::Full ? chamfer(moved, target) : one_sided_chamfer(moved, target);
}

}  // namespace dvm
