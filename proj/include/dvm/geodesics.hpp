#pragma once

#include "dvm/common.hpp"
#include "dvm/geometry.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace dvm {

/// Symmetric Gaussian-weighted kNN graph Laplacian of a point cloud.
///
/// stiffness = D - W over the symmetrized kNN graph, with
/// w_ij = exp(-|p_i - p_j|^2 / sigma^2) and sigma the mean kNN distance.
/// mass is diagonal, proportional to weighted degree, normalized to unit trace.
struct PointCloudLaplacian {
  Eigen::SparseMatrix<double> stiffness;
  Eigen::VectorXd mass;
  double mean_edge = 0.0;  // h
  double sigma = 0.0;
  std::size_t k = 0;
  NeighborLists neighbors;                                  // directed kNN lists
  std::vector<std::vector<std::pair<std::size_t, double>>> edges;  // symmetric, weighted
  std::vector<int> component;                               // label per point
  int component_count = 0;

  std::size_t size() const { return mass.size(); }
  bool connected() const { return component_count == 1; }
};

inline PointCloudLaplacian build_laplacian(const PointCloud& cloud, std::size_t k = 8) {
  const std::size_t n = cloud.size();
  require(k >= 4, "build_laplacian: k must be at least 4");
  require(n >= k + 1, "build_laplacian: need at least k+1 points");

  PointCloudLaplacian lap;
  lap.k = k;
  lap.neighbors = knn_self(cloud.points(), k);

  double dsum = 0.0;
  for (const auto& list : lap.neighbors)
    for (const auto& nb : list) dsum += nb.distance;
  lap.mean_edge = dsum / static_cast<double>(n * k);
  lap.sigma = lap.mean_edge;
  require(lap.sigma > 0.0, "build_laplacian: all neighbour distances are zero");

  // Symmetrize: edge if either endpoint lists the other.
  std::vector<std::vector<std::size_t>> adj(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& nb : lap.neighbors[i]) {
      adj[i].push_back(nb.index);
      adj[nb.index].push_back(i);
    }
  }
  lap.edges.resize(n);
  const double inv_s2 = 1.0 / (lap.sigma * lap.sigma);
  std::vector<Eigen::Triplet<double>> trip;
  Eigen::VectorXd degree = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    auto& a = adj[i];
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
    for (auto j : a) {
      const double w = std::exp(-(cloud[i] - cloud[j]).squaredNorm() * inv_s2);
      lap.edges[i].emplace_back(j, w);
      trip.emplace_back(static_cast<int>(i), static_cast<int>(j), -w);
      degree[static_cast<Eigen::Index>(i)] += w;
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    trip.emplace_back(static_cast<int>(i), static_cast<int>(i), degree[static_cast<Eigen::Index>(i)]);
  lap.stiffness.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  lap.stiffness.setFromTriplets(trip.begin(), trip.end());

  lap.mass = degree / static_cast<double>(n);
  lap.mass /= lap.mass.sum();

  lap.component.assign(n, -1);
  for (std::size_t s = 0; s < n; ++s) {
    if (lap.component[s] >= 0) continue;
    std::vector<std::size_t> stack{s};
    lap.component[s] = lap.component_count;
    while (!stack.empty()) {
      const auto i = stack.back();
      stack.pop_back();
      for (const auto& [j, w] : lap.edges[i]) {
        if (lap.component[j] < 0) {
          lap.component[j] = lap.component_count;
          stack.push_back(j);
        }
      }
    }
    ++lap.component_count;
  }
  return lap;
}

/// Dense N x N (or K x N for a source subset) matrix of surface distances.
struct GeodesicMatrix {
  Eigen::MatrixXd distances;

  Eigen::Index size() const { return distances.cols(); }
  double operator()(std::size_t i, std::size_t j) const {
    return distances(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }

  /// max |M - M^T| relative to the largest entry.
  double relative_asymmetry() const {
    const double top = distances.cwiseAbs().maxCoeff();
    if (top == 0.0) return 0.0;
    return (distances - distances.transpose()).cwiseAbs().maxCoeff() / top;
  }

  void symmetrize() {
    Eigen::MatrixXd s = 0.5 * (distances + distances.transpose());
    distances = s;
  }
};

struct HeatOptions {
  double time_multiplier = 1.0;  // t = multiplier * h^2
  double gradient_cutoff = 1e-2;  // relative eigenvalue cutoff of the local fit
};

/// Heat-method geodesic distances on a point cloud. Factorizations and the
/// per-point gradient stencils are built once; per-source solves are
/// independent and safe to run concurrently.
class HeatGeodesics {
 public:
  HeatGeodesics(const PointCloudLaplacian& lap, const PointCloud& cloud, HeatOptions opts = {})
      : lap_(&lap), points_(cloud.points().begin(), cloud.points().end()), opts_(opts) {
    require(lap.size() == cloud.size(), "heat_geodesics: Laplacian and cloud sizes differ");
    if (!lap.connected()) {
      std::ostringstream os;
      os << "heat_geodesics: neighbour graph has " << lap.component_count
         << " components; component sizes:";
      std::vector<std::size_t> sizes(static_cast<std::size_t>(lap.component_count), 0);
      for (int c : lap.component) ++sizes[static_cast<std::size_t>(c)];
      for (std::size_t c = 0; c < sizes.size(); ++c) os << " [" << c << "]=" << sizes[c];
      throw NumericalError(os.str());
    }
    const auto n = static_cast<Eigen::Index>(lap.size());

    // Heat time is expressed against the unit-trace mass: the mass stands for
    // an estimated total area N h^2, so t / area = multiplier / N.
    const double h2 = lap.mean_edge * lap.mean_edge;
    const double area = static_cast<double>(n) * h2;
    const double tau = opts_.time_multiplier * h2 / area;
    Eigen::SparseMatrix<double> heat = lap.stiffness * tau;
    for (Eigen::Index i = 0; i < n; ++i) heat.coeffRef(i, i) += lap.mass[i];
    heat.makeCompressed();
    heat_solver_ = std::make_unique<Solver>();
    heat_solver_->compute(heat);
    check_factor(*heat_solver_, "heat system (M + tL)");

    // Ground vertex 0: the remaining block of a connected Laplacian is SPD.
    Eigen::SparseMatrix<double> grounded = lap.stiffness.bottomRightCorner(n - 1, n - 1);
    grounded.makeCompressed();
    poisson_solver_ = std::make_unique<Solver>();
    poisson_solver_->compute(grounded);
    check_factor(*poisson_solver_, "Poisson system L");

    build_gradient_stencils();
  }

  std::size_t size() const { return points_.size(); }

  /// Distances from `source` to every point.
  Eigen::VectorXd distances_from(std::size_t source) const {
    require(source < size(), "heat_geodesics: source index out of range");
    const auto n = static_cast<Eigen::Index>(size());
    Eigen::VectorXd delta = Eigen::VectorXd::Zero(n);
    delta[static_cast<Eigen::Index>(source)] = 1.0;
    const Eigen::VectorXd u = heat_solver_->solve(delta);

    std::vector<Vec3> field(size(), Vec3::Zero());
    for (std::size_t i = 0; i < size(); ++i) {
      Vec3 g = Vec3::Zero();
      const auto& st = stencils_[i];
      for (std::size_t a = 0; a < st.index.size(); ++a)
        g += st.coeff[a] * u[static_cast<Eigen::Index>(st.index[a])];
      const double norm = g.norm();
      if (norm > 0.0 && std::isfinite(norm)) field[i] = -g / norm;
    }

    // Least-squares integration of the unit field over graph edges.
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i < size(); ++i) {
      double s = 0.0;
      for (const auto& [j, w] : lap_->edges[i])
        s += w * (0.5 * (field[i] + field[j])).dot(points_[j] - points_[i]);
      rhs[static_cast<Eigen::Index>(i)] = -s;
    }
    Eigen::VectorXd phi(n);
    phi[0] = 0.0;
    phi.tail(n - 1) = poisson_solver_->solve(rhs.tail(n - 1));

    // The field is undefined at the source itself, so its own value is a poor
    // anchor. Fit the constant over the source and its neighbours, where the
    // distance is the chord length.
    const auto s = static_cast<Eigen::Index>(source);
    double base = phi[s];
    for (const auto& nb : lap_->neighbors[source])
      base += phi[static_cast<Eigen::Index>(nb.index)] - nb.distance;
    base /= static_cast<double>(lap_->neighbors[source].size() + 1);
    for (Eigen::Index i = 0; i < n; ++i) phi[i] = std::max(0.0, phi[i] - base);
    phi[s] = 0.0;
    if (!phi.allFinite())
      throw NumericalError("heat_geodesics: non-finite distance from source " +
                           std::to_string(source));
    return phi;
  }

  GeodesicMatrix rows(std::span<const std::size_t> sources) const {
    GeodesicMatrix m;
    m.distances.resize(static_cast<Eigen::Index>(sources.size()),
                       static_cast<Eigen::Index>(size()));
    parallel_for(sources.size(), [&](std::size_t r) {
      m.distances.row(static_cast<Eigen::Index>(r)) = distances_from(sources[r]).transpose();
    });
    return m;
  }

  /// All-pairs distances, symmetrized as (M + M^T) / 2.
  GeodesicMatrix all_pairs(bool symmetrize = true) const {
    std::vector<std::size_t> all(size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    auto m = rows(all);
    if (symmetrize) m.symmetrize();
    return m;
  }

 private:
  using Solver = Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>;

  struct Stencil {
    std::vector<std::size_t> index;
    std::vector<Vec3> coeff;
  };

  static void check_factor(const Solver& s, const char* what) {
    if (s.info() != Eigen::Success)
      throw NumericalError(std::string("heat_geodesics: factorization of the ") + what +
                           " failed");
    const Eigen::VectorXd d = s.vectorD();
    const double lo = d.minCoeff(), hi = d.maxCoeff();
    if (!(lo > 0.0)) {
      std::ostringstream os;
      os << "heat_geodesics: " << what << " is not positive definite (pivot range [" << lo
         << ", " << hi << "])";
      throw NumericalError(os.str());
    }
  }

  // Weighted affine fit u(p) ~ a + g.(p - p_i) over the point and its kNN;
  // g is linear in u, so the coefficients are precomputed per point.
  void build_gradient_stencils() {
    stencils_.resize(size());
    const double inv_s2 = 1.0 / (lap_->sigma * lap_->sigma);
    for (std::size_t i = 0; i < size(); ++i) {
      Stencil st;
      st.index.push_back(i);
      for (const auto& nb : lap_->neighbors[i]) st.index.push_back(nb.index);
      const std::size_t m = st.index.size();
      std::vector<Vec3> d(m);
      std::vector<double> w(m);
      double wsum = 0.0;
      Vec3 mean = Vec3::Zero();
      for (std::size_t a = 0; a < m; ++a) {
        d[a] = points_[st.index[a]] - points_[i];
        w[a] = std::exp(-d[a].squaredNorm() * inv_s2);
        wsum += w[a];
        mean += w[a] * d[a];
      }
      mean /= wsum;
      Mat3 cov = Mat3::Zero();
      for (std::size_t a = 0; a < m; ++a) cov += w[a] * (d[a] - mean) * (d[a] - mean).transpose();
      Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
      const Eigen::Vector3d ev = eig.eigenvalues();
      const double top = ev.maxCoeff();
      Mat3 pinv = Mat3::Zero();
      for (int c = 0; c < 3; ++c) {
        if (ev[c] > opts_.gradient_cutoff * top && ev[c] > 0.0)
          pinv += eig.eigenvectors().col(c) * eig.eigenvectors().col(c).transpose() / ev[c];
      }
      st.coeff.resize(m);
      for (std::size_t a = 0; a < m; ++a) st.coeff[a] = pinv * (w[a] * (d[a] - mean));
      stencils_[i] = std::move(st);
    }
  }

  const PointCloudLaplacian* lap_;
  std::vector<Vec3> points_;
  HeatOptions opts_;
  std::unique_ptr<Solver> heat_solver_;
  std::unique_ptr<Solver> poisson_solver_;
  std::vector<Stencil> stencils_;
};

/// Distances from the listed sources (all points when `sources` is empty; the
/// all-pairs result is symmetrized).
inline GeodesicMatrix heat_geodesics(const PointCloudLaplacian& lap, const PointCloud& cloud,
                                     std::span<const std::size_t> sources = {},
                                     HeatOptions opts = {}) {
  HeatGeodesics solver(lap, cloud, opts);
  if (sources.empty()) return solver.all_pairs();
  return solver.rows(sources);
}

/// Squared Euclidean distances between all rows of A and B via the Gram
/// expansion, clamped at zero.
inline Eigen::MatrixXd pairwise_sq_distances(const FeatureMatrix& a, const FeatureMatrix& b) {
  require(a.cols() == b.cols(), "pairwise distances: feature widths differ");
  const Eigen::VectorXd an = a.rowwise().squaredNorm();
  const Eigen::VectorXd bn = b.rowwise().squaredNorm();
  Eigen::MatrixXd d = -2.0 * (a * b.transpose());
  d.colwise() += an;
  d.rowwise() += bn.transpose();
  return d.cwiseMax(0.0);
}

/// Mean over points of 1 - cos(embedding distances to the k nearest embedded
/// neighbours, geodesic distances to the same neighbours). Lies in [0, 1].
inline double geodesic_similarity_loss(const FeatureMatrix& features, const GeodesicMatrix& geo,
                                       std::size_t k = 10) {
  const auto n = static_cast<std::size_t>(features.rows());
  require(geo.distances.rows() == features.rows() && geo.distances.cols() == features.rows(),
          "geodesic_similarity_loss: geodesic matrix does not match the feature rows");
  require(k >= 1 && k < n, "geodesic_similarity_loss: need 1 <= k < N");
  const Eigen::MatrixXd d2 = pairwise_sq_distances(features, features);

  std::vector<double> term(n, 0.0);
  parallel_for(n, [&](std::size_t i) {
    const auto nn = detail::k_smallest(
        n, k, [&](std::size_t j) { return d2(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)); },
        i);
    double dot = 0.0, dd = 0.0, mm = 0.0;
    for (const auto& nb : nn) {
      const double m = geo(i, nb.index);
      if (!std::isfinite(m)) {
        term[i] = std::numeric_limits<double>::quiet_NaN();
        return;
      }
      dot += nb.distance * m;
      dd += nb.distance * nb.distance;
      mm += m * m;
    }
    if (dd > 0.0 && mm > 0.0) term[i] = 1.0 - dot / std::sqrt(dd * mm);
  });
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isnan(term[i]))
      throw NumericalError("geodesic_similarity_loss: infinite geodesic distance among the "
                           "neighbours of point " + std::to_string(i));
    sum += std::clamp(term[i], 0.0, 1.0);
  }
  return sum / static_cast<double>(n);
}

}  // namespace dvm
