#include "support/graph_oracle.hpp"
#include "support/synthetic.hpp"

#include <gtest/gtest.h>

#include <queue>
#include <random>

using namespace dvm;
using namespace dvm::testing;

namespace {

// Dense Laplacian built straight from the definition, O(N^2 k).
Eigen::MatrixXd dense_laplacian(const PointCloud& c, std::size_t k) {
  const std::size_t n = c.size();
  std::vector<std::vector<bool>> edge(n, std::vector<bool>(n, false));
  double dsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) d.emplace_back((c[i] - c[j]).norm(), j);
    std::sort(d.begin(), d.end());
    for (std::size_t a = 0; a < k; ++a) {
      dsum += d[a].first;
      edge[i][d[a].second] = edge[d[a].second][i] = true;
    }
  }
  const double sigma = dsum / static_cast<double>(n * k);
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (edge[i][j]) {
        const double w = std::exp(-(c[i] - c[j]).squaredNorm() / (sigma * sigma));
        L(i, j) = -w;
        L(i, i) += w;
      }
  return L;
}

PointCloud irregular_chain(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> gap(0.5, 1.5);
  std::vector<Vec3> p;
  double x = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p.emplace_back(x, 0.0, 0.0);
    x += gap(rng);
  }
  return PointCloud(std::move(p));
}

}  // namespace

TEST(Laplacian, MatchesDenseConstruction) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    const auto c = seed % 2 ? irregular_chain(12, seed) : wavy_patch(40, rng);
    const auto lap = build_laplacian(c, 4);
    const Eigen::MatrixXd ref = dense_laplacian(c, 4);
    EXPECT_LE((Eigen::MatrixXd(lap.stiffness) - ref).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Laplacian, Invariants) {
  std::mt19937_64 rng(1);
  const auto c = wavy_patch(300, rng);
  const auto lap = build_laplacian(c);
  const Eigen::MatrixXd L = lap.stiffness;
  const double scale = L.cwiseAbs().maxCoeff();
  EXPECT_LE(L.rowwise().sum().cwiseAbs().maxCoeff(), 1e-10 * scale);
  EXPECT_EQ((L - L.transpose()).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(lap.mass.minCoeff(), 0.0);
  EXPECT_NEAR(lap.mass.sum(), 1.0, 1e-12);
  for (int t = 0; t < 50; ++t) {
    const Eigen::VectorXd x = Eigen::VectorXd::Random(L.rows());
    EXPECT_GE(x.dot(L * x) / x.squaredNorm(), -1e-9);
  }
  double mean = 0.0;
  for (const auto& list : lap.neighbors)
    for (const auto& nb : list) mean += nb.distance;
  EXPECT_NEAR(lap.mean_edge, mean / (300.0 * 8.0), 1e-15);
  EXPECT_TRUE(lap.connected());
}

TEST(Laplacian, ChainIsBandedAndRejectsSmallK) {
  const auto c = irregular_chain(9, 4);
  const auto lap = build_laplacian(c, 4);
  const Eigen::MatrixXd L = lap.stiffness;
  // Every link in a 1D chain joins points at most k apart in order.
  for (Eigen::Index i = 0; i < L.rows(); ++i)
    for (Eigen::Index j = 0; j < L.cols(); ++j)
      if (std::abs(i - j) > 4) {
        EXPECT_EQ(L(i, j), 0.0);
      }
  EXPECT_LT(L(0, 1), 0.0);
  EXPECT_THROW(build_laplacian(c, 2), InvalidArgument);
  EXPECT_THROW(build_laplacian(irregular_chain(4, 0), 4), InvalidArgument);
}

TEST(Laplacian, SeparatedClustersAreTwoComponents) {
  std::mt19937_64 rng(2);
  std::vector<Vec3> p;
  for (const auto& q : random_cloud(30, rng, 0.1)) p.push_back(q);
  for (const auto& q : random_cloud(20, rng, 0.1)) p.push_back(q + Vec3(10, 0, 0));
  const PointCloud c(std::move(p));
  const auto lap = build_laplacian(c, 8);
  EXPECT_EQ(lap.component_count, 2);
  EXPECT_NE(lap.component[0], lap.component[49]);
  for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(lap.component[i], lap.component[0]);
  try {
    HeatGeodesics hg(lap, c);
    FAIL() << "expected an error";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("2 components"), std::string::npos);
  }
}

TEST(HeatGeodesics, SelfDistanceZeroAndSymmetrized) {
  const std::vector<std::pair<const char*, PointCloud>> clouds = {
      {"grid", planar_grid(25, 0.1)},
      {"sphere", fibonacci_sphere(600)},
      {"strip", cylinder_strip(60, 10)},
  };
  for (const auto& [name, c] : clouds) {
    const auto raw = HeatGeodesics(build_laplacian(c), c).all_pairs(false);
    EXPECT_LE(raw.relative_asymmetry(), 0.05) << name;
    auto m = raw;
    m.symmetrize();
    EXPECT_EQ(m.distances, m.distances.transpose()) << name;
    for (Eigen::Index i = 0; i < m.size(); ++i) EXPECT_EQ(raw.distances(i, i), 0.0);
    EXPECT_TRUE(m.distances.allFinite());
    EXPECT_GE(m.distances.minCoeff(), 0.0);
  }
}

TEST(HeatGeodesics, PlanarGridMatchesEuclidean) {
  const auto g = planar_grid(40, 1.0);
  const auto lap = build_laplacian(g);
  const auto m = heat_geodesics(lap, g);
  const double h = lap.mean_edge;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < g.size(); ++j) {
      const double e = (g[i] - g[j]).norm();
      if (e >= 5 * h) {
        sum += std::abs(m(i, j) - e) / e;
        ++count;
      }
    }
  EXPECT_LE(sum / count, 0.05);
}

TEST(HeatGeodesics, SphereMatchesArcLength) {
  const auto s = fibonacci_sphere(2000);
  const auto lap = build_laplacian(s);
  std::vector<std::size_t> src;
  for (std::size_t i = 0; i < s.size(); i += 97) src.push_back(i);
  const auto m = heat_geodesics(lap, s, src);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < src.size(); ++r)
    for (std::size_t j = 0; j < s.size(); ++j) {
      const double arc = std::acos(std::clamp(s[src[r]].dot(s[j]), -1.0, 1.0));
      if (arc >= 5 * lap.mean_edge) {
        sum += std::abs(m(r, j) - arc) / arc;
        ++count;
      }
    }
  EXPECT_LE(sum / count, 0.10);
}

TEST(HeatGeodesics, CloseToGraphDijkstra) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const auto c = wavy_patch(300, rng);
    const auto m = heat_geodesics(build_laplacian(c), c);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t s = 0; s < c.size(); s += 7) {
      const auto d = dijkstra(c, 8, s);
      for (std::size_t j = 0; j < c.size(); ++j)
        if (j != s) {
          sum += std::abs(m(s, j) - d[j]) / d[j];
          ++count;
        }
    }
    EXPECT_LE(sum / count, 0.15) << "seed " << seed;
  }
}

TEST(HeatGeodesics, RigidInvarianceAndScaleEquivariance) {
  std::mt19937_64 rng(5);
  const auto c = wavy_patch(250, rng);
  const auto base = heat_geodesics(build_laplacian(c), c);
  const Mat3 R = axis_angle(random_unit(rng), 1.1);
  const Vec3 t(3.0, -2.0, 0.5);
  const auto moved = c.transformed([&](const Vec3& p) { return Vec3(R * p + t); });
  const auto rm = heat_geodesics(build_laplacian(moved), moved);
  const double top = base.distances.maxCoeff();
  EXPECT_LE((rm.distances - base.distances).cwiseAbs().maxCoeff(), 1e-6 * top);
  for (double s : {0.01, 7.0}) {
    const auto scaled = c.transformed([&](const Vec3& p) { return Vec3(s * p); });
    const auto sm = heat_geodesics(build_laplacian(scaled), scaled);
    EXPECT_LE((sm.distances - s * base.distances).cwiseAbs().maxCoeff(), 1e-6 * s * top);
  }
}

TEST(HeatGeodesics, SourceRowsMatchAllPairs) {
  std::mt19937_64 rng(6);
  const auto c = wavy_patch(120, rng);
  const auto lap = build_laplacian(c);
  const HeatGeodesics hg(lap, c);
  const auto raw = hg.all_pairs(false);
  const std::vector<std::size_t> src{5, 0, 77};
  const auto rows = hg.rows(src);
  for (std::size_t r = 0; r < src.size(); ++r)
    EXPECT_EQ(rows.distances.row(r), raw.distances.row(src[r]));
  EXPECT_THROW(hg.distances_from(120), InvalidArgument);
}

TEST(SimilarityLoss, ProportionalDistancesGiveZero) {
  std::mt19937_64 rng(7);
  const auto c = random_cloud(60, rng);
  FeatureMatrix f(60, 3);
  for (std::size_t i = 0; i < 60; ++i) f.row(i) = c[i].transpose();
  GeodesicMatrix m;
  m.distances.resize(60, 60);
  for (std::size_t i = 0; i < 60; ++i)
    for (std::size_t j = 0; j < 60; ++j) m.distances(i, j) = 2.5 * (c[i] - c[j]).norm();
  EXPECT_NEAR(geodesic_similarity_loss(f, m, 10), 0.0, 1e-12);
}

TEST(SimilarityLoss, RangeAndScaleInvariance) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 20; ++t) {
    const FeatureMatrix f = FeatureMatrix::Random(50, 7);
    GeodesicMatrix m;
    m.distances = Eigen::MatrixXd::Random(50, 50).cwiseAbs();
    m.symmetrize();
    const double l = geodesic_similarity_loss(f, m, 10);
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 1.0);
    for (double s : {1e-3, 3.0, 1e4}) EXPECT_NEAR(geodesic_similarity_loss(s * f, m, 10), l, 1e-9);
  }
}

TEST(SimilarityLoss, FlatPatchWithHeatGeodesics) {
  const auto g = planar_grid(20, 0.05);
  FeatureMatrix f(g.size(), 3);
  for (std::size_t i = 0; i < g.size(); ++i) f.row(i) = g[i].transpose();
  const auto m = heat_geodesics(build_laplacian(g), g);
  EXPECT_LE(geodesic_similarity_loss(f, m, 10), 0.01);
}

TEST(SimilarityLoss, ZeroVectorsAndErrors) {
  const FeatureMatrix f = FeatureMatrix::Zero(5, 2);
  GeodesicMatrix m;
  m.distances = Eigen::MatrixXd::Ones(5, 5);
  EXPECT_EQ(geodesic_similarity_loss(f, m, 2), 0.0);
  EXPECT_THROW(geodesic_similarity_loss(f, m, 5), InvalidArgument);
  GeodesicMatrix bad;
  bad.distances = Eigen::MatrixXd::Ones(4, 4);
  EXPECT_THROW(geodesic_similarity_loss(f, bad, 2), InvalidArgument);
  m.distances(0, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(geodesic_similarity_loss(FeatureMatrix::Random(5, 2), m, 4), NumericalError);
}
